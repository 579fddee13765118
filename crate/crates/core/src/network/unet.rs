use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Padding, Tensor, Var};
use crate::error::{Error, Result};
use crate::speckle::rng_from_seed;

/// Architecture of the compact encoder/decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// `2P` component channels.
    pub in_channels: usize,
    /// `P` log-reflectance channels.
    pub out_channels: usize,
    pub base_width: usize,
    /// Number of 2× down/up levels.
    pub depth: usize,
    pub kernel_size: usize,
    pub leaky_slope: f64,
    pub padding: Padding,
}

impl UNetConfig {
    pub fn for_polarizations(polarizations: usize) -> Self {
        Self {
            in_channels: 2 * polarizations,
            out_channels: polarizations,
            ..Self::default()
        }
    }

    pub fn with_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn polarizations(&self) -> usize {
        self.out_channels
    }

    /// Spatial extents must be multiples of this.
    pub fn extent_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_width == 0 {
            return Err(Error::contract("network channel counts must be positive"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::contract(format!("kernel size {} must be odd", self.kernel_size)));
        }
        Ok(())
    }

    pub fn check_extents(&self, height: usize, width: usize) -> Result<()> {
        let m = self.extent_multiple();
        if !height.is_multiple_of(m) || !width.is_multiple_of(m) || height == 0 || width == 0 {
            let pad_h = (m - height % m) % m;
            let pad_w = (m - width % m) % m;
            return Err(Error::contract(format!(
                "extents {height}x{width} must be multiples of {m} for depth {}; pad by {pad_h} rows and {pad_w} columns",
                self.depth
            )));
        }
        Ok(())
    }

    /// Every convolution in parameter order as `(c_in, c_out, k)`.
    pub fn conv_layers(&self) -> Vec<(usize, usize, usize)> {
        let k = self.kernel_size;
        let mut layers = Vec::new();
        let mut c = self.in_channels;
        for level in 0..=self.depth {
            let w = self.width_at(level);
            layers.push((c, w, k));
            layers.push((w, w, k));
            c = w;
        }
        for level in (0..self.depth).rev() {
            let w = self.width_at(level);
            layers.push((c + w, w, k));
            layers.push((w, w, k));
            c = w;
        }
        layers.push((c, self.out_channels, 1));
        layers
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_layers().iter().map(|&(ci, co, k)| co * ci * k * k + co).sum()
    }
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            out_channels: 2,
            base_width: 16,
            depth: 2,
            kernel_size: 3,
            leaky_slope: 0.1,
            padding: Padding::Reflect,
        }
    }
}

/// Encoder/decoder with skip connections and a 1×1 log-reflectance head.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    pub config: UNetConfig,
    /// Kernel and bias per convolution, in [`UNetConfig::conv_layers`] order.
    pub params: Vec<Tensor>,
}

impl UNet {
    /// Kaiming fan-in initialisation, zero biases, zero head.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let gain = (2.0 / (1.0 + config.leaky_slope * config.leaky_slope)).sqrt();
        let layers = config.conv_layers();
        let last = layers.len() - 1;
        let mut params = Vec::with_capacity(2 * layers.len());
        for (i, &(ci, co, k)) in layers.iter().enumerate() {
            let n = co * ci * k * k;
            let data = if i == last {
                vec![0.0; n]
            } else {
                let std = gain / ((ci * k * k) as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect()
            };
            params.push(Tensor::new(vec![co, ci, k, k], data)?);
            params.push(Tensor::zeros(&[co]));
        }
        Ok(Self { config, params })
    }

    /// Checks parameter tensors against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layers = self.config.conv_layers();
        if self.params.len() != 2 * layers.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, found {}",
                2 * layers.len(),
                self.params.len()
            )));
        }
        for (i, &(ci, co, k)) in layers.iter().enumerate() {
            if self.params[2 * i].shape() != [co, ci, k, k] || self.params[2 * i + 1].shape() != [co] {
                return Err(Error::contract(format!("parameter shapes of layer {i} do not match")));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Registers the parameters in `g`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    /// Records the forward pass; returns the `P×H×W` log-reflectance node.
    pub fn build(&self, g: &mut Graph, input: Var, params: &[Var]) -> Result<Var> {
        let cfg = &self.config;
        let (c, h, w) = g.value(input).chw()?;
        if c != cfg.in_channels {
            return Err(Error::contract(format!(
                "network expects {} input channels, got {c}",
                cfg.in_channels
            )));
        }
        cfg.check_extents(h, w)?;
        let mut layer = 0;
        let mut conv_act = |g: &mut Graph, x: Var, act: bool| -> Result<Var> {
            let y = g.conv2d(x, params[2 * layer], params[2 * layer + 1], cfg.padding)?;
            layer += 1;
            if act {
                g.leaky_relu(y, cfg.leaky_slope)
            } else {
                Ok(y)
            }
        };

        let mut skips = Vec::with_capacity(cfg.depth);
        let mut x = input;
        for level in 0..=cfg.depth {
            x = conv_act(g, x, true)?;
            x = conv_act(g, x, true)?;
            if level < cfg.depth {
                skips.push(x);
                x = g.avg_pool2(x)?;
            }
        }
        for skip in skips.into_iter().rev() {
            let up = g.upsample2(x)?;
            x = g.concat_channels(up, skip)?;
            x = conv_act(g, x, true)?;
            x = conv_act(g, x, true)?;
        }
        conv_act(g, x, false)
    }

    /// Inference-only forward pass.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let out = self.build(&mut g, x, &params)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_width_has_about_thirty_thousand_parameters() {
        let cfg = UNetConfig::for_polarizations(3).with_width(8);
        let n = cfg.parameter_count();
        assert!((25_000..35_000).contains(&n), "{n}");
        assert_eq!(UNet::new(cfg, 0).unwrap().parameter_count(), n);
    }

    #[test]
    fn zero_head_outputs_zero_log_reflectance() {
        let cfg = UNetConfig::for_polarizations(2).with_width(4);
        let net = UNet::new(cfg, 1).unwrap();
        let x = Tensor::filled(&[4, 16, 16], 0.3);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 16, 16]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_is_same_size() {
        let cfg = UNetConfig::for_polarizations(2).with_width(4);
        let mut net = UNet::new(cfg, 1).unwrap();
        let last = net.params.len() - 2;
        net.params[last].data_mut().fill(0.1);
        let y = net.forward(&Tensor::filled(&[4, 64, 64], 1.0)).unwrap();
        assert_eq!(y.shape(), &[2, 64, 64]);
    }

    #[test]
    fn indivisible_extents_get_padding_hint() {
        let net = UNet::new(UNetConfig::default(), 0).unwrap();
        let err = net.forward(&Tensor::zeros(&[4, 10, 12])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pad by 2 rows and 0 columns"), "{msg}");
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let net = UNet::new(UNetConfig::default(), 0).unwrap();
        assert!(net.forward(&Tensor::zeros(&[6, 8, 8])).is_err());
    }
}
