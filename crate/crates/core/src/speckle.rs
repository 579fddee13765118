//! Statistical speckle generation for single- and multi-polarization complex
//! SAR, the real spatial-correlation transform, and the multiplicative gamma
//! protocol used to turn optical images into pseudo-polarimetric stacks.
//!
//! All samplers draw from `ChaCha8Rng::seed_from_u64(seed)`; identical seeds
//! give bit-identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Which half of the complex components a channel holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Component {
    Re,
    Im,
}

impl Component {
    pub fn other(self) -> Self {
        match self {
            Component::Re => Component::Im,
            Component::Im => Component::Re,
        }
    }

    /// Offset of this component inside a polarization's channel pair.
    pub fn offset(self) -> usize {
        match self {
            Component::Re => 0,
            Component::Im => 1,
        }
    }
}

/// Single-polarization complex observation `z = a + jb`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePolField {
    pub height: usize,
    pub width: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SinglePolField {
    pub fn intensity(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a * a + b * b).collect()
    }

    pub fn into_stack(self) -> PolStack {
        let raster =
            Raster::from_planes(self.height, self.width, &[&self.a, &self.b]).expect("component planes share a shape");
        PolStack::new(raster, vec!["hh".into()]).expect("two channels")
    }
}

/// Per-pixel dual-polarization covariance `[[r_hh, r_hv], [r_hv, r_vv]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceField {
    pub height: usize,
    pub width: usize,
    pub r_hh: Vec<f64>,
    pub r_vv: Vec<f64>,
    pub r_hv: Vec<f64>,
    /// Accept `r_hv² == r_hh·r_vv` (fully correlated polarizations).
    pub degenerate: bool,
}

impl CovarianceField {
    pub fn constant(height: usize, width: usize, r_hh: f64, r_vv: f64, r_hv: f64) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            r_hh: vec![r_hh; n],
            r_vv: vec![r_vv; n],
            r_hv: vec![r_hv; n],
            degenerate: false,
        }
    }

    /// First pixel violating positive definiteness, in row-major order.
    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.r_hh.len() != n || self.r_vv.len() != n || self.r_hv.len() != n {
            return Err(Error::contract("covariance planes do not match extents"));
        }
        for i in 0..n {
            let (hh, vv, hv) = (self.r_hh[i], self.r_vv[i], self.r_hv[i]);
            let det = hh * vv - hv * hv;
            let ok = hh > 0.0 && vv > 0.0 && hv.is_finite() && (det > 0.0 || (self.degenerate && det >= 0.0));
            if !ok {
                return Err(Error::NotPositiveDefinite {
                    row: i / self.width,
                    col: i % self.width,
                    r_hh: hh,
                    r_vv: vv,
                    r_hv: hv,
                });
            }
        }
        Ok(())
    }
}

/// Multi-polarization component stack, channels `[a₁, b₁, …, a_P, b_P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolStack {
    raster: Raster,
    polarizations: Vec<String>,
}

impl PolStack {
    pub fn new(raster: Raster, polarizations: Vec<String>) -> Result<Self> {
        if !raster.channels().is_multiple_of(2) || raster.channels() == 0 {
            return Err(Error::contract(format!(
                "a polarization stack needs a positive even channel count, got {}",
                raster.channels()
            )));
        }
        if polarizations.len() * 2 != raster.channels() {
            return Err(Error::contract(format!(
                "{} polarization names for {} channels",
                polarizations.len(),
                raster.channels()
            )));
        }
        Ok(Self { raster, polarizations })
    }

    /// Stack with generic polarization names (`hh, vv` for two, `p0…` otherwise).
    pub fn with_default_names(raster: Raster) -> Result<Self> {
        let p = raster.channels() / 2;
        Self::new(raster, default_polarization_names(p))
    }

    pub fn polarizations(&self) -> usize {
        self.polarizations.len()
    }

    pub fn polarization_names(&self) -> &[String] {
        &self.polarizations
    }

    /// `hh.re, hh.im, vv.re, …`
    pub fn channel_labels(&self) -> Vec<String> {
        self.polarizations
            .iter()
            .flat_map(|p| [format!("{p}.re"), format!("{p}.im")])
            .collect()
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn raster_mut(&mut self) -> &mut Raster {
        &mut self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn channel_index(&self, pol: usize, comp: Component) -> usize {
        2 * pol + comp.offset()
    }

    pub fn component(&self, pol: usize, comp: Component) -> &[f64] {
        self.raster.channel(self.channel_index(pol, comp))
    }

    /// All `P` channels of one component, as a `P×H×W` raster.
    pub fn component_stack(&self, comp: Component) -> Raster {
        let idx: Vec<usize> = (0..self.polarizations()).map(|p| self.channel_index(p, comp)).collect();
        self.raster.select_channels(&idx)
    }

    /// Single-polarization stack holding polarization `pol` only.
    pub fn polarization(&self, pol: usize) -> PolStack {
        let raster = self.raster.select_channels(&[2 * pol, 2 * pol + 1]);
        PolStack {
            raster,
            polarizations: vec![self.polarizations[pol].clone()],
        }
    }

    /// Re and Im stacks exchanged.
    pub fn swap_components(&self) -> PolStack {
        let idx: Vec<usize> = (0..self.polarizations()).flat_map(|p| [2 * p + 1, 2 * p]).collect();
        PolStack {
            raster: self.raster.select_channels(&idx),
            polarizations: self.polarizations.clone(),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<PolStack> {
        Ok(PolStack {
            raster: self.raster.crop(y0, x0, h, w)?,
            polarizations: self.polarizations.clone(),
        })
    }

    /// Per-polarization mean of the two component replicas; the noisy
    /// intensity of the multiplicative gamma protocol.
    pub fn replica_mean(&self) -> Raster {
        let mut out = Raster::zeros(self.polarizations(), self.height(), self.width());
        for p in 0..self.polarizations() {
            let (a, b) = (self.component(p, Component::Re), self.component(p, Component::Im));
            for ((o, x), y) in out.channel_mut(p).iter_mut().zip(a).zip(b) {
                *o = 0.5 * (x + y);
            }
        }
        out
    }
}

pub fn default_polarization_names(p: usize) -> Vec<String> {
    match p {
        1 => vec!["hh".into()],
        2 => vec!["hh".into(), "vv".into()],
        _ => (0..p).map(|i| format!("p{i}")).collect(),
    }
}

/// Circular complex Gaussian speckle: `a, b ~ N(0, r/2)` independently.
pub fn sample_single_pol(reflectance: &[f64], height: usize, width: usize, seed: u64) -> Result<SinglePolField> {
    if reflectance.len() != height * width {
        return Err(Error::contract("reflectance does not match extents"));
    }
    if let Some(i) = reflectance.iter().position(|&r| !(r >= 0.0)) {
        return Err(Error::contract(format!(
            "reflectance must be non-negative, got {} at pixel {i}",
            reflectance[i]
        )));
    }
    let mut rng = rng_from_seed(seed);
    let n = reflectance.len();
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for &r in reflectance {
        let s = (0.5 * r).sqrt();
        let u: f64 = StandardNormal.sample(&mut rng);
        let v: f64 = StandardNormal.sample(&mut rng);
        a.push(s * u);
        b.push(s * v);
    }
    Ok(SinglePolField { height, width, a, b })
}

/// Dual-polarization speckle `ζ = L·u` with `L·Lᵀ = Σ` and `u` circular
/// complex standard normal.
pub fn sample_dual_pol(cov: &CovarianceField, seed: u64) -> Result<PolStack> {
    cov.validate()?;
    let mut rng = rng_from_seed(seed);
    let n = cov.height * cov.width;
    let mut data = vec![0.0; 4 * n];
    let half = 0.5_f64.sqrt();
    for i in 0..n {
        let l11 = cov.r_hh[i].sqrt();
        let l21 = cov.r_hv[i] / l11;
        let l22 = (cov.r_vv[i] - l21 * l21).max(0.0).sqrt();
        let ur1: f64 = StandardNormal.sample(&mut rng);
        let ui1: f64 = StandardNormal.sample(&mut rng);
        let ur2: f64 = StandardNormal.sample(&mut rng);
        let ui2: f64 = StandardNormal.sample(&mut rng);
        let (ur1, ui1, ur2, ui2) = (half * ur1, half * ui1, half * ur2, half * ui2);
        data[i] = l11 * ur1;
        data[n + i] = l11 * ui1;
        data[2 * n + i] = l21 * ur1 + l22 * ur2;
        data[3 * n + i] = l21 * ui1 + l22 * ui2;
    }
    PolStack::new(
        Raster::from_vec(4, cov.height, cov.width, data)?,
        default_polarization_names(2),
    )
}

/// Separable real smoothing kernel standing in for the sensor transform `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCorrelationKernel {
    taps: Vec<f64>,
}

impl Default for SpatialCorrelationKernel {
    fn default() -> Self {
        Self {
            taps: vec![0.25, 0.5, 0.25],
        }
    }
}

impl SpatialCorrelationKernel {
    /// Odd-length finite taps with positive sum; `normalize` rescales them to
    /// sum to one.
    pub fn new(taps: Vec<f64>, normalize: bool) -> Result<Self> {
        if taps.is_empty() || taps.len().is_multiple_of(2) {
            return Err(Error::contract(format!(
                "correlation kernel needs an odd number of taps, got {}",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::contract("correlation kernel taps must be finite"));
        }
        let sum: f64 = taps.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::contract("correlation kernel taps must have a positive sum"));
        }
        let taps = if normalize {
            taps.iter().map(|t| t / sum).collect()
        } else {
            taps
        };
        Ok(Self { taps })
    }

    pub fn identity() -> Self {
        Self { taps: vec![1.0] }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    fn filter_plane(&self, plane: &[f64], h: usize, w: usize) -> Vec<f64> {
        let r = (self.taps.len() / 2) as isize;
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let mut i = i;
            // repeated mirroring keeps wide kernels valid on narrow images
            loop {
                if i < 0 {
                    i = -i;
                } else if i >= n {
                    i = 2 * (n - 1) - i;
                } else {
                    return i as usize;
                }
                if n == 1 {
                    return 0;
                }
            }
        };
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (t, &c) in self.taps.iter().enumerate() {
                    let sx = reflect(x as isize + t as isize - r, w);
                    s += c * plane[y * w + sx];
                }
                tmp[y * w + x] = s;
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (t, &c) in self.taps.iter().enumerate() {
                    let sy = reflect(y as isize + t as isize - r, h);
                    s += c * tmp[sy * w + x];
                }
                out[y * w + x] = s;
            }
        }
        out
    }
}

/// Convolves every channel with the same real separable kernel.
pub fn apply_spatial_correlation(stack: &PolStack, kernel: &SpatialCorrelationKernel) -> PolStack {
    let (h, w) = (stack.height(), stack.width());
    let mut out = stack.clone();
    for c in 0..stack.raster().channels() {
        let filtered = kernel.filter_plane(stack.raster().channel(c), h, w);
        out.raster_mut().channel_mut(c).copy_from_slice(&filtered);
    }
    out
}

/// Mean of `Gamma(1, 1)` speckle.
pub const GAMMA_SPECKLE_MEAN: f64 = 1.0;
/// Second raw moment `E[n²]` of `Gamma(1, 1)` speckle.
pub const GAMMA_SPECKLE_SECOND_MOMENT: f64 = 2.0;

/// Multiplicative unit-gamma speckle: each clean channel yields two
/// independently corrupted replicas used as its Re and Im components.
pub fn synth_gamma_stack(clean: &Raster, seed: u64) -> Result<PolStack> {
    if let Some(v) = clean.data().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::contract(format!("clean values must be non-negative, got {v}")));
    }
    let (p, h, w) = clean.shape();
    let n = h * w;
    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0; 2 * p * n];
    for c in 0..p {
        let src = clean.channel(c);
        for i in 0..n {
            let n1: f64 = Exp1.sample(&mut rng);
            let n2: f64 = Exp1.sample(&mut rng);
            data[2 * c * n + i] = src[i] * n1;
            data[(2 * c + 1) * n + i] = src[i] * n2;
        }
    }
    PolStack::new(Raster::from_vec(2 * p, h, w, data)?, default_polarization_names(p))
}

/// Sample covariance between every pair of channels with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovariance {
    pub size: usize,
    pub samples: usize,
    /// Row-major `size×size`.
    pub covariance: Vec<f64>,
    /// Standard error of each covariance entry.
    pub std_error: Vec<f64>,
}

impl CrossCovariance {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.size + j]
    }

    pub fn se(&self, i: usize, j: usize) -> f64 {
        self.std_error[i * self.size + j]
    }

    /// `|ĉ_ij − expected| ≤ k·SE_ij`.
    pub fn within(&self, i: usize, j: usize, expected: f64, k: f64) -> bool {
        (self.get(i, j) - expected).abs() <= k * self.se(i, j)
    }
}

pub const MIN_COVARIANCE_PIXELS: usize = 10_000;

/// Pixel-wise sample covariance across all channels.
///
/// Standard errors come from the sample variance of the centred products,
/// `SE_ij = sqrt(Var[(x_i − μ_i)(x_j − μ_j)] / n)`.
pub fn empirical_cross_covariance(raster: &Raster) -> Result<CrossCovariance> {
    let n = raster.plane_len();
    if n < MIN_COVARIANCE_PIXELS {
        return Err(Error::contract(format!(
            "covariance estimate needs at least {MIN_COVARIANCE_PIXELS} pixels, got {n}"
        )));
    }
    let c = raster.channels();
    let means: Vec<f64> = (0..c)
        .map(|k| raster.channel(k).iter().sum::<f64>() / n as f64)
        .collect();
    let centred: Vec<Vec<f64>> = (0..c)
        .map(|k| raster.channel(k).iter().map(|v| v - means[k]).collect())
        .collect();
    let mut cov = vec![0.0; c * c];
    let mut se = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let (xi, xj) = (&centred[i], &centred[j]);
            let m: f64 = xi.iter().zip(xj).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            let v: f64 = xi
                .iter()
                .zip(xj)
                .map(|(a, b)| {
                    let d = a * b - m;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let e = (v / n as f64).sqrt();
            cov[i * c + j] = m;
            cov[j * c + i] = m;
            se[i * c + j] = e;
            se[j * c + i] = e;
        }
    }
    Ok(CrossCovariance {
        size: c,
        samples: n,
        covariance: cov,
        std_error: se,
    })
}
