//! Finite-difference check of every differentiable primitive and of the
//! full masked training loss.

use rand::Rng;

use crate::autodiff::gradcheck::max_relative_error;
use crate::autodiff::{grad_check, GradCheckReport, Graph, Padding, Tensor, Var};
use crate::error::Error;
use crate::error::Result;
use crate::masking::SpatialMaskMode;
use crate::masking::{keep_map, make_channel_mask};
use crate::network::loss::{direction_loss_on, log_mse_loss, nll_loss, pass_masks, step_loss, Objective};
use crate::network::preprocess::preprocess_graph;
use crate::network::{NormStats, UNet, UNetConfig};
use crate::raster::Raster;
use crate::speckle::{rng_from_seed, synth_gamma_stack, Component, PolStack};

/// Tolerance on the maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Minimum `|pre-activation|` at a probe point of the full loss.
pub const KINK_MARGIN: f64 = 1e-3;

/// Largest `|log r|` at a probe point of the full loss.
pub const OUTPUT_BOUND: f64 = 4.0;

/// Minimum component magnitude at a probe point of the full loss, keeping
/// the log-intensity transform far from its curvature scale `sqrt(1e-6)`.
pub const COMPONENT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

/// Values with magnitude in `[0.1, 1]` and random sign, away from the
/// leaky-ReLU kink.
fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

fn positive(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()).expect("shape product")
}

/// `Σ wᵢ yᵢ` with fixed, non-uniform weights, so every output element
/// contributes a distinct sensitivity.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let t = g.value(y);
    let w: Vec<f64> = (0..t.len())
        .map(|i| 0.5 + ((i as f64) * 0.7548776662).fract())
        .collect();
    let w = g.constant(Tensor::new(t.shape().to_vec(), w)?);
    let p = g.mul(y, w)?;
    g.reduce_sum(p)
}

type Case = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// Runs every check; entries are in a fixed order.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = rng_from_seed(seed);
    let img = away_from_zero(&[2, 6, 6], &mut rng);
    let other = away_from_zero(&[2, 6, 6], &mut rng);
    let kernel = away_from_zero(&[3, 2, 3, 3], &mut rng);
    let bias = away_from_zero(&[3], &mut rng);
    let pos = positive(&[2, 6, 6], &mut rng);
    let gamma = Raster::from_vec(2, 6, 6, away_from_zero(&[2, 6, 6], &mut rng).into_data())?;
    let target = Raster::from_vec(2, 6, 6, positive(&[2, 6, 6], &mut rng).into_data())?;

    let mut cases: Vec<(&str, Tensor, Case)> = Vec::new();
    for (name, padding) in [
        ("conv2d_input_reflect", Padding::Reflect),
        ("conv2d_input_zero", Padding::Zero),
    ] {
        let (k, b) = (kernel.clone(), bias.clone());
        cases.push((
            name,
            img.clone(),
            Box::new(move |g, x| {
                let (k, b) = (g.constant(k.clone()), g.constant(b.clone()));
                let y = g.conv2d(x, k, b, padding)?;
                project(g, y)
            }),
        ));
    }
    {
        let (im, b) = (img.clone(), bias.clone());
        cases.push((
            "conv2d_kernel",
            kernel.clone(),
            Box::new(move |g, k| {
                let (x, b) = (g.constant(im.clone()), g.constant(b.clone()));
                let y = g.conv2d(x, k, b, Padding::Reflect)?;
                project(g, y)
            }),
        ));
        let (im, k) = (img.clone(), kernel.clone());
        cases.push((
            "conv2d_bias",
            bias.clone(),
            Box::new(move |g, b| {
                let (x, k) = (g.constant(im.clone()), g.constant(k.clone()));
                let y = g.conv2d(x, k, b, Padding::Zero)?;
                project(g, y)
            }),
        ));
    }
    cases.push((
        "avg_pool2",
        img.clone(),
        Box::new(|g, x| {
            let y = g.avg_pool2(x)?;
            project(g, y)
        }),
    ));
    cases.push((
        "upsample2",
        img.clone(),
        Box::new(|g, x| {
            let y = g.upsample2(x)?;
            project(g, y)
        }),
    ));
    cases.push((
        "leaky_relu",
        img.clone(),
        Box::new(|g, x| {
            let y = g.leaky_relu(x, 0.1)?;
            project(g, y)
        }),
    ));
    cases.push((
        "exp",
        img.clone(),
        Box::new(|g, x| {
            let y = g.exp(x)?;
            project(g, y)
        }),
    ));
    cases.push((
        "log",
        pos.clone(),
        Box::new(|g, x| {
            let y = g.log(x)?;
            project(g, y)
        }),
    ));
    cases.push((
        "square",
        img.clone(),
        Box::new(|g, x| {
            let y = g.square(x)?;
            project(g, y)
        }),
    ));
    cases.push((
        "scalar_mul",
        img.clone(),
        Box::new(|g, x| {
            let y = g.scalar_mul(x, -2.5)?;
            project(g, y)
        }),
    ));
    cases.push((
        "negate",
        img.clone(),
        Box::new(|g, x| {
            let y = g.negate(x)?;
            project(g, y)
        }),
    ));
    for name in ["add", "sub", "mul", "concat_channels"] {
        let o = other.clone();
        cases.push((
            name,
            img.clone(),
            Box::new(move |g, x| {
                let c = g.constant(o.clone());
                let y = match name {
                    "add" => g.add(c, x)?,
                    "sub" => g.sub(c, x)?,
                    "mul" => g.mul(x, c)?,
                    _ => g.concat_channels(c, x)?,
                };
                project(g, y)
            }),
        ));
    }
    cases.push((
        "add_scalar",
        img.clone(),
        Box::new(|g, x| {
            let y = g.add_scalar(x, 0.75)?;
            let y = g.square(y)?;
            project(g, y)
        }),
    ));
    let keep: Vec<bool> = (0..img.len()).map(|i| i % 3 != 1).collect();
    cases.push((
        "keep_mask",
        img.clone(),
        Box::new(move |g, x| {
            let y = g.keep_mask(x, keep.clone())?;
            let y = g.square(y)?;
            project(g, y)
        }),
    ));
    cases.push((
        "select_channels",
        img.clone(),
        Box::new(|g, x| {
            let y = g.select_channels(x, &[1, 0, 1])?;
            let y = g.square(y)?;
            project(g, y)
        }),
    ));
    cases.push((
        "standardize_channels",
        img.clone(),
        Box::new(|g, x| {
            let y = g.standardize_channels(x, &[0.3, -1.2], &[0.7, 2.5])?;
            let y = g.square(y)?;
            project(g, y)
        }),
    ));
    cases.push((
        "reduce_sum",
        img.clone(),
        Box::new(|g, x| {
            let s = g.reduce_sum(x)?;
            g.square(s)
        }),
    ));
    cases.push(("nll_loss", img.clone(), Box::new(move |g, x| nll_loss(g, x, &gamma))));
    cases.push((
        "log_mse_loss",
        img.clone(),
        Box::new(move |g, x| log_mse_loss(g, x, &target)),
    ));

    let mut out = Vec::with_capacity(cases.len() + 1);
    for (name, input, op) in cases {
        out.push(SuiteEntry {
            name: name.to_string(),
            report: grad_check(op, &input, GRADCHECK_TOL)?,
        });
    }
    out.push(SuiteEntry {
        name: "step_loss_input_4x8x8".to_string(),
        report: step_loss_check(rng.gen())?,
    });
    out.push(SuiteEntry {
        name: "step_loss_params_4x8x8".to_string(),
        report: step_loss_param_check(rng.gen(), 2, 4)?,
    });
    Ok(out)
}

/// Conditioning of a full-loss probe point.
#[derive(Debug, Clone, Copy)]
pub struct ProbeMargins {
    /// Smallest leaky-ReLU input magnitude.
    pub kink: f64,
    /// Largest `|log r|`.
    pub output: f64,
    /// `Σ |½·log r| + γ²/r` over both passes: the size of the terms the
    /// loss sums, which sets its rounding noise.
    pub loss_scale: f64,
}

pub fn probe_margins(net: &UNet, stats: &NormStats, x: &PolStack, p: f64, mask_seed: u64) -> Result<ProbeMargins> {
    let masks = pass_masks(x, p, mask_seed, SpatialMaskMode::PerChannel)?;
    let (c, h, w) = x.raster().shape();
    let mut m = ProbeMargins {
        kink: f64::INFINITY,
        output: 0.0,
        loss_scale: 0.0,
    };
    for (hidden, mask) in [Component::Re, Component::Im].into_iter().zip(&masks) {
        let mut g = Graph::new();
        let params = net.bind(&mut g, false);
        let input = g.constant(Tensor::new(vec![c, h, w], x.raster().data().to_vec())?);
        let mc = make_channel_mask(x.polarizations(), hidden)?;
        let masked = g.keep_mask(input, keep_map(x, Some(&mc), Some(mask))?)?;
        let features = preprocess_graph(&mut g, masked, stats)?;
        let log_r = net.build(&mut g, features, &params)?;
        m.kink = m.kink.min(g.kink_margin());
        let gamma = x.component_stack(hidden);
        for (&l, &gv) in g.value(log_r).data().iter().zip(gamma.data()) {
            m.output = m.output.max(l.abs());
            m.loss_scale += (0.5 * l).abs() + gv * gv * (-l).exp();
        }
    }
    Ok(m)
}

/// A full-loss probe point: network, statistics, sample and mask seed.
pub struct Probe {
    pub net: UNet,
    pub stats: NormStats,
    pub x: PolStack,
    pub drop_probability: f64,
    pub mask_seed: u64,
}

/// Draws a `4×8×8` dual-polarization speckle sample (components floored at
/// [`COMPONENT_MARGIN`] in magnitude) and a network with a randomised output
/// head, redrawing until every pre-activation clears [`KINK_MARGIN`] and
/// every output stays within [`OUTPUT_BOUND`].
pub fn full_loss_probe(seed: u64, polarizations: usize, width: usize) -> Result<Probe> {
    let mut rng = rng_from_seed(seed);
    let p = 0.1;
    let cfg = UNetConfig::for_polarizations(polarizations).with_width(width);
    (|| {
        for _ in 0..10_000 {
            let mut net = UNet::new(cfg, rng.gen())?;
            let head = net.params.len() - 2;
            for v in net.params[head].data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
            net.params[head + 1].data_mut().fill(-1.0);
            let clean = Raster::from_vec(
                polarizations,
                8,
                8,
                (0..64 * polarizations).map(|_| rng.gen_range(0.25..0.35)).collect(),
            )?;
            let mut x = synth_gamma_stack(&clean, rng.gen())?;
            for v in x.raster_mut().data_mut() {
                *v = v.signum() * v.abs().max(COMPONENT_MARGIN);
            }
            let stats = NormStats::fit([&x])?;
            let mask_seed: u64 = rng.gen();
            let m = probe_margins(&net, &stats, &x, p, mask_seed)?;
            if m.kink > KINK_MARGIN && m.output <= OUTPUT_BOUND {
                return Ok(Probe {
                    net,
                    stats,
                    x,
                    drop_probability: p,
                    mask_seed,
                });
            }
        }
        Err(Error::Domain("no probe point clear of activation kinks".into()))
    })()
}

/// Input gradient of the two-direction masked loss at a [`full_loss_probe`].
pub fn step_loss_check(seed: u64) -> Result<GradCheckReport> {
    let Probe {
        net,
        stats,
        x,
        drop_probability: p,
        mask_seed,
    } = full_loss_probe(seed, 2, 4)?;
    let masks = pass_masks(&x, p, mask_seed, SpatialMaskMode::PerChannel)?;
    let (c, h, w) = x.raster().shape();
    let input = Tensor::new(vec![c, h, w], x.raster().data().to_vec())?;
    grad_check(
        |g, v| {
            let params = net.bind(g, false);
            let mut total: Option<Var> = None;
            for (hidden, mask) in [Component::Re, Component::Im].into_iter().zip(&masks) {
                let l = direction_loss_on(
                    &net,
                    &stats,
                    g,
                    &params,
                    &x,
                    v,
                    hidden,
                    Some(mask),
                    Objective::Likelihood,
                )?;
                total = Some(match total {
                    Some(t) => g.add(t, l)?,
                    None => l,
                });
            }
            Ok(total.expect("two passes"))
        },
        &input,
        GRADCHECK_TOL,
    )
}

/// Smallest `|∂L/∂θ|` relative to the loss scale that the `ε = 1e−5`
/// central difference resolves to the check tolerance in double precision;
/// the difference quotient carries rounding noise of order
/// `1e−16·scale/ε`.
pub const RESOLVABLE_GRADIENT: f64 = 1e-6;

/// Gradient of the two-direction masked loss with respect to every network
/// parameter at a [`full_loss_probe`]. Probe points are redrawn until every
/// gradient component is either below the `1e−8` denominator floor or at
/// least [`RESOLVABLE_GRADIENT`] times [`ProbeMargins::loss_scale`].
pub fn step_loss_param_check(seed: u64, polarizations: usize, width: usize) -> Result<GradCheckReport> {
    let mut rng = rng_from_seed(seed);
    let (probe_point, analytic) = (|| {
        for _ in 0..1_000 {
            let pr = full_loss_probe(rng.gen(), polarizations, width)?;
            let eval = step_loss(&pr.net, &pr.stats, &pr.x, pr.drop_probability, pr.mask_seed, true)?;
            let g = eval.grads.expect("requested").concat();
            let floor = RESOLVABLE_GRADIENT
                * probe_margins(&pr.net, &pr.stats, &pr.x, pr.drop_probability, pr.mask_seed)?.loss_scale;
            if g.iter().all(|v| v.abs() <= 1e-8 || v.abs() >= floor) {
                return Ok((pr, g));
            }
        }
        Err(Error::Domain(
            "no probe point with resolvable parameter gradients".into(),
        ))
    })()?;
    let Probe {
        net,
        stats,
        x,
        drop_probability: p,
        mask_seed,
    } = probe_point;
    let flat: Vec<f64> = net.params.iter().flat_map(|t| t.data().iter().copied()).collect();
    let mut probe = net.clone();
    let max_rel_err = max_relative_error(&analytic, &flat, |v| {
        let mut off = 0;
        for t in probe.params.iter_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
        Ok(step_loss(&probe, &stats, &x, p, mask_seed, false)?.loss)
    })?;
    Ok(GradCheckReport {
        max_rel_err,
        pass: max_rel_err <= GRADCHECK_TOL,
    })
}
