//! Analytic floating-point operation counts (one multiply-add = 2 flops).

use super::unet::UNetConfig;

/// A layer of a plain feed-forward stack, for counting purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { c_in: usize, c_out: usize, kernel: usize },
    LeakyRelu,
    AvgPool2,
    Upsample2,
}

/// `2·C_in·C_out·k²·H·W` multiply-adds plus one add per output for the bias.
pub fn conv_flops(c_in: usize, c_out: usize, kernel: usize, h: usize, w: usize) -> u64 {
    let px = (h * w) as u64;
    2 * (c_in * c_out * kernel * kernel) as u64 * px + c_out as u64 * px
}

/// One compare-or-scale per element.
pub fn activation_flops(c: usize, h: usize, w: usize) -> u64 {
    (c * h * w) as u64
}

/// Three adds and one scale per output, i.e. one flop per input element.
pub fn avg_pool_flops(c: usize, h: usize, w: usize) -> u64 {
    (c * h * w) as u64
}

/// Counts a sequential stack applied to a `C×H×W` input.
pub fn count_sequential_flops(layers: &[LayerSpec], input: (usize, usize, usize)) -> u64 {
    let (mut c, mut h, mut w) = input;
    let mut total = 0;
    for layer in layers {
        match *layer {
            LayerSpec::Conv { c_in, c_out, kernel } => {
                debug_assert_eq!(c_in, c);
                total += conv_flops(c_in, c_out, kernel, h, w);
                c = c_out;
            }
            LayerSpec::LeakyRelu => total += activation_flops(c, h, w),
            LayerSpec::AvgPool2 => {
                total += avg_pool_flops(c, h, w);
                h /= 2;
                w /= 2;
            }
            LayerSpec::Upsample2 => {
                h *= 2;
                w *= 2;
            }
        }
    }
    total
}

/// Forward-pass flops of the encoder/decoder on an `H×W` input.
/// Upsampling and concatenation are copies and cost nothing.
pub fn count_flops(config: &UNetConfig, height: usize, width: usize) -> u64 {
    let layers = config.conv_layers();
    let mut total = 0;
    let mut li = 0;
    let (mut h, mut w) = (height, width);
    let mut conv_act = |h: usize, w: usize, act: bool| {
        let (ci, co, k) = layers[li];
        li += 1;
        conv_flops(ci, co, k, h, w) + if act { activation_flops(co, h, w) } else { 0 }
    };
    for level in 0..=config.depth {
        total += conv_act(h, w, true);
        total += conv_act(h, w, true);
        if level < config.depth {
            total += avg_pool_flops(config.width_at(level), h, w);
            h /= 2;
            w /= 2;
        }
    }
    for _ in 0..config.depth {
        h *= 2;
        w *= 2;
        total += conv_act(h, w, true);
        total += conv_act(h, w, true);
    }
    total + conv_act(h, w, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unit_conv() {
        let n = count_sequential_flops(
            &[LayerSpec::Conv {
                c_in: 1,
                c_out: 1,
                kernel: 1,
            }],
            (1, 4, 4),
        );
        assert_eq!(n, 48);
    }

    #[test]
    fn doubling_extents_quadruples() {
        let cfg = UNetConfig::for_polarizations(2).with_width(8);
        assert_eq!(count_flops(&cfg, 64, 64), 4 * count_flops(&cfg, 32, 32));
    }

    #[test]
    fn input_channels_only_touch_first_layer() {
        let wide = UNetConfig {
            in_channels: 4,
            ..UNetConfig::default()
        };
        let narrow = UNetConfig { in_channels: 2, ..wide };
        let (h, w) = (32, 32);
        let diff = count_flops(&wide, h, w) - count_flops(&narrow, h, w);
        assert_eq!(diff, 2 * 2 * wide.base_width as u64 * 9 * (h * w) as u64);
    }
}
