//! Likelihood loss for circular complex Gaussian components and the
//! two-direction masked training objective.

use rand::RngCore;

use super::preprocess::{preprocess_graph, NormStats};
use super::unet::UNet;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::masking::{keep_map, make_channel_mask, make_spatial_mask, SpatialMask, SpatialMaskMode};
use crate::raster::Raster;
use crate::speckle::{rng_from_seed, Component, PolStack};

/// Network output: log-reflectance per pixel and polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceEstimate {
    pub log_r: Raster,
}

impl ReflectanceEstimate {
    /// `r = exp(log r)`, strictly positive.
    pub fn reflectance(&self) -> Raster {
        self.log_r.map(f64::exp)
    }
}

/// `Σ ½·log r + γ²·exp(−log r)` evaluated directly.
pub fn nll_value(log_r: &[f64], gamma: &[f64]) -> f64 {
    log_r
        .iter()
        .zip(gamma)
        .map(|(&l, &g)| 0.5 * l + g * g * (-l).exp())
        .sum()
}

/// Graph form of [`nll_value`]; `gamma` enters as a constant.
pub fn nll_loss(g: &mut Graph, log_r: Var, gamma: &Raster) -> Result<Var> {
    let (c, h, w) = gamma.shape();
    let gamma = g.constant(Tensor::new(vec![c, h, w], gamma.data().to_vec())?);
    nll_loss_var(g, log_r, gamma)
}

/// [`nll_loss`] with `gamma` as a graph value.
pub fn nll_loss_var(g: &mut Graph, log_r: Var, gamma: Var) -> Result<Var> {
    let shape = g.value(log_r).chw()?;
    if g.value(gamma).chw()? != shape {
        return Err(Error::contract(format!(
            "gamma {:?} does not match estimate {:?}",
            g.value(gamma).shape(),
            shape
        )));
    }
    let gamma_sq = g.square(gamma)?;
    let neg = g.negate(log_r)?;
    let inv_r = g.exp(neg)?;
    let data_term = g.mul(gamma_sq, inv_r)?;
    let half_log = g.scalar_mul(log_r, 0.5)?;
    let per_pixel = g.add(half_log, data_term)?;
    g.reduce_sum(per_pixel)
}

/// Mean squared error between predicted and target log-reflectance.
pub fn log_mse_loss(g: &mut Graph, log_r: Var, target: &Raster) -> Result<Var> {
    let (c, h, w) = g.value(log_r).chw()?;
    if target.shape() != (c, h, w) {
        return Err(Error::contract("supervised target does not match estimate"));
    }
    if let Some(v) = target.data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("supervised target must be positive, got {v}")));
    }
    let t = g.constant(Tensor::new(
        vec![c, h, w],
        target.data().iter().map(|v| v.ln()).collect(),
    )?);
    let diff = g.sub(log_r, t)?;
    let sq = g.square(diff)?;
    let s = g.reduce_sum(sq)?;
    g.scalar_mul(s, 1.0 / (c * h * w) as f64)
}

/// What each masked pass is scored against.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Likelihood of the hidden components.
    Likelihood,
    /// Squared log error against a known reflectance.
    Supervised { target: &'a Raster },
}

/// Records one masked pass: hide `hidden`, predict its reflectance from
/// the remaining (optionally spatially masked) channels, score it.
#[allow(clippy::too_many_arguments)]
pub fn direction_loss(
    net: &UNet,
    stats: &NormStats,
    g: &mut Graph,
    params: &[Var],
    x: &PolStack,
    hidden: Component,
    spatial: Option<&SpatialMask>,
    objective: Objective<'_>,
) -> Result<Var> {
    let (c, h, w) = x.raster().shape();
    let input = g.constant(Tensor::new(vec![c, h, w], x.raster().data().to_vec())?);
    direction_loss_on(net, stats, g, params, x, input, hidden, spatial, objective)
}

/// [`direction_loss`] with the stack values supplied as the graph node
/// `input`; `x` provides layout only.
#[allow(clippy::too_many_arguments)]
pub fn direction_loss_on(
    net: &UNet,
    stats: &NormStats,
    g: &mut Graph,
    params: &[Var],
    x: &PolStack,
    input: Var,
    hidden: Component,
    spatial: Option<&SpatialMask>,
    objective: Objective<'_>,
) -> Result<Var> {
    let p = x.polarizations();
    if stats.channels() != 2 * p {
        return Err(Error::contract(format!(
            "normalisation has {} channels, stack has {}",
            stats.channels(),
            2 * p
        )));
    }
    let mc = make_channel_mask(p, hidden)?;
    let masked = g.keep_mask(input, keep_map(x, Some(&mc), spatial)?)?;
    let features = preprocess_graph(g, masked, stats)?;
    let log_r = net.build(g, features, params)?;
    match objective {
        Objective::Likelihood => {
            let idx: Vec<usize> = (0..p).map(|k| x.channel_index(k, hidden)).collect();
            let gamma = g.select_channels(input, &idx)?;
            nll_loss_var(g, log_r, gamma)
        }
        Objective::Supervised { target } => log_mse_loss(g, log_r, target),
    }
}

/// Scalar loss and, when requested, parameter gradients.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grads: Option<Vec<Vec<f64>>>,
}

/// Sum of masked passes, one per `(hidden component, spatial mask)` entry.
pub fn masked_passes_loss(
    net: &UNet,
    stats: &NormStats,
    x: &PolStack,
    passes: &[(Component, Option<&SpatialMask>)],
    objective: Objective<'_>,
    with_grad: bool,
) -> Result<LossEval> {
    let mut loss = 0.0;
    let mut grads: Option<Vec<Vec<f64>>> = with_grad.then(|| net.params.iter().map(|p| vec![0.0; p.len()]).collect());
    for &(hidden, spatial) in passes {
        let mut g = Graph::new();
        let params = net.bind(&mut g, with_grad);
        let l = direction_loss(net, stats, &mut g, &params, x, hidden, spatial, objective)?;
        loss += g.value(l).data()[0];
        if let Some(acc) = grads.as_mut() {
            g.backward(l)?;
            for (a, p) in acc.iter_mut().zip(&params) {
                if let Some(gp) = g.grad(*p) {
                    a.iter_mut().zip(gp).for_each(|(s, v)| *s += v);
                }
            }
        }
    }
    Ok(LossEval { loss, grads })
}

/// Fresh spatial masks for the Re-hidden and Im-hidden passes, drawn from
/// two seeds derived from `seed`.
pub fn pass_masks(x: &PolStack, drop_probability: f64, seed: u64, mode: SpatialMaskMode) -> Result<[SpatialMask; 2]> {
    let mut rng = rng_from_seed(seed);
    let (h, w, p) = (x.height(), x.width(), x.polarizations());
    let s_re = rng.next_u64();
    let s_im = rng.next_u64();
    Ok([
        make_spatial_mask(h, w, p, drop_probability, s_re, mode)?,
        make_spatial_mask(h, w, p, drop_probability, s_im, mode)?,
    ])
}

/// Both-direction masked likelihood:
/// `L(r_Re, x_Re) + L(r_Im, x_Im)` where `r_Re` is predicted with the Re
/// stack hidden and scored against it.
pub fn step_loss(
    net: &UNet,
    stats: &NormStats,
    x: &PolStack,
    drop_probability: f64,
    seed: u64,
    with_grad: bool,
) -> Result<LossEval> {
    let [m_re, m_im] = pass_masks(x, drop_probability, seed, SpatialMaskMode::PerChannel)?;
    masked_passes_loss(
        net,
        stats,
        x,
        &[(Component::Re, Some(&m_re)), (Component::Im, Some(&m_im))],
        Objective::Likelihood,
        with_grad,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::unet::UNetConfig;
    use crate::speckle::{sample_dual_pol, CovarianceField};

    #[test]
    fn single_term_value() {
        let v = nll_value(&[2.0_f64.ln()], &[1.0]);
        assert!((v - (0.5 * 2.0_f64.ln() + 0.5)).abs() < 1e-15);
        assert!((v - 0.8466).abs() < 1e-4);
    }

    #[test]
    fn graph_matches_direct_evaluation() {
        let log_r = Raster::from_vec(1, 1, 3, vec![-0.3, 0.0, 1.2]).unwrap();
        let gamma = Raster::from_vec(1, 1, 3, vec![0.5, -1.5, 2.0]).unwrap();
        let mut g = Graph::new();
        let lr = g.param(Tensor::new(vec![1, 1, 3], log_r.data().to_vec()).unwrap());
        let l = nll_loss(&mut g, lr, &gamma).unwrap();
        let direct = nll_value(log_r.data(), gamma.data());
        assert!((g.value(l).data()[0] - direct).abs() < 1e-14);
        g.backward(l).unwrap();
        for ((d, &lv), &gv) in g.grad(lr).unwrap().iter().zip(log_r.data()).zip(gamma.data()) {
            assert!((d - (0.5 - gv * gv * (-lv).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_gamma_is_unbounded_below() {
        let mut prev = f64::INFINITY;
        for l in [2.0, 0.0, -5.0, -50.0] {
            let v = nll_value(&[l], &[0.0]);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn zero_head_with_unmasked_passes_scores_squared_components() {
        let cfg = UNetConfig::for_polarizations(2).with_width(4);
        let net = UNet::new(cfg, 3).unwrap();
        let x = sample_dual_pol(&CovarianceField::constant(8, 8, 2.0, 1.0, 0.4), 5).unwrap();
        let stats = NormStats::fit([&x]).unwrap();
        let keep = SpatialMask::all_keep(4, 8, 8);
        let eval = masked_passes_loss(
            &net,
            &stats,
            &x,
            &[(Component::Re, Some(&keep)), (Component::Im, Some(&keep))],
            Objective::Likelihood,
            false,
        )
        .unwrap();
        let expected: f64 = x.raster().data().iter().map(|v| v * v).sum();
        assert!((eval.loss - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn pass_masks_are_independent_and_seeded() {
        let x = PolStack::with_default_names(Raster::zeros(4, 16, 16)).unwrap();
        let [a, b] = pass_masks(&x, 0.3, 9, SpatialMaskMode::PerChannel).unwrap();
        assert_ne!(a.keep(), b.keep());
        let [c, _] = pass_masks(&x, 0.3, 9, SpatialMaskMode::PerChannel).unwrap();
        assert_eq!(a, c);
    }
}
