//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep. Leaf
//! gradients accumulate across `backward` calls until [`Graph::zero_grad`];
//! interior gradients are rebuilt from scratch on every sweep.

use super::conv::{self, Padding};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        padding: Padding,
        cols: Vec<f64>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    Negate(Var),
    Concat(Var, Var),
    Sum(Var),
    AddScalar(Var),
    KeepMask(Var, Vec<bool>),
    SelectChannels(Var, Vec<usize>),
    ChannelAffine(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Vec<f64>>,
}

/// Computation graph recorded during a forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph that rejects any NaN/Inf produced by an operation.
    pub fn with_finite_checks() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Smallest `|x|` over the inputs of every leaky-ReLU node; infinite if
    /// there are none. Finite differences are unreliable when this is small.
    pub fn kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(input, _) => Some(input),
                _ => None,
            })
            .flat_map(|v| self.nodes[v.0].value.data().iter().map(|x| x.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Domain(format!(
                "non-finite value produced by {:?}",
                std::mem::discriminant(&op)
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient (learnable parameter or probed input).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Same-size 2-D cross-correlation.
    ///
    /// `input` is `C_in×H×W`, `kernel` is `C_out×C_in×k×k`, `bias` is `C_out`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let (c_in, h, w) = self.value(input).chw()?;
        let (c_out, k) = match self.value(kernel).shape()[..] {
            [co, ci, kh, kw] if ci == c_in && kh == kw => (co, kh),
            ref s => {
                return Err(Error::contract(format!(
                    "kernel shape {s:?} incompatible with {c_in}-channel input"
                )))
            }
        };
        if self.value(bias).shape() != [c_out] {
            return Err(Error::contract(format!(
                "bias shape {:?} != [{c_out}]",
                self.value(bias).shape()
            )));
        }
        conv::check_geometry(h, w, k, padding)?;
        let hw = h * w;
        let ckk = c_in * k * k;
        let cols = if k == 1 {
            self.value(input).data().to_vec()
        } else {
            conv::im2col(self.value(input).data(), c_in, h, w, k, padding)
        };
        let mut out = vec![0.0; c_out * hw];
        for (co, row) in out.chunks_mut(hw).enumerate() {
            row.fill(self.value(bias).data()[co]);
        }
        conv::gemm(
            c_out,
            ckk,
            hw,
            self.value(kernel).data(),
            false,
            &cols,
            false,
            1.0,
            &mut out,
        );
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        let value = Tensor::new(vec![c_out, h, w], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        )
    }

    /// 2×2 average pooling with stride 2; extents must be even.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::contract(format!(
                "2x2 pooling needs even extents >= 2, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let r0 = (ch * h + 2 * y) * w;
                let r1 = r0 + w;
                for xo in 0..ow {
                    let s = x[r0 + 2 * xo] + x[r0 + 2 * xo + 1] + x[r1 + 2 * xo] + x[r1 + 2 * xo + 1];
                    out[(ch * oh + y) * ow + xo] = 0.25 * s;
                }
            }
        }
        let rg = self.rg(input);
        self.push(Tensor::new(vec![c, oh, ow], out)?, Op::AvgPool2(input), rg)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let (oh, ow) = (2 * h, 2 * w);
        let x = self.value(input).data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let src = (ch * h + y / 2) * w;
                let dst = (ch * oh + y) * ow;
                for xo in 0..ow {
                    out[dst + xo] = x[src + xo / 2];
                }
            }
        }
        let rg = self.rg(input);
        self.push(Tensor::new(vec![c, oh, ow], out)?, Op::Upsample2(input), rg)
    }

    fn unary(&mut self, input: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let v = self.value(input);
        let out: Vec<f64> = v.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(input);
        self.push(value, op, rg)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        self.unary(
            input,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(input, slope),
        )
    }

    pub fn exp(&mut self, input: Var) -> Result<Var> {
        self.unary(input, f64::exp, Op::Exp(input))
    }

    /// Natural log; any non-positive entry is a domain error.
    pub fn log(&mut self, input: Var) -> Result<Var> {
        if let Some(bad) = self.value(input).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        self.unary(input, f64::ln, Op::Log(input))
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        self.unary(input, |x| x * x, Op::Square(input))
    }

    pub fn scalar_mul(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.unary(input, |x| factor * x, Op::ScalarMul(input, factor))
    }

    pub fn negate(&mut self, input: Var) -> Result<Var> {
        self.unary(input, |x| -x, Op::Negate(input))
    }

    pub fn add_scalar(&mut self, input: Var, c: f64) -> Result<Var> {
        self.unary(input, |x| x + c, Op::AddScalar(input))
    }

    /// Entries with `keep[i] == false` become `+0.0` and pass no gradient.
    pub fn keep_mask(&mut self, input: Var, keep: Vec<bool>) -> Result<Var> {
        let v = self.value(input);
        if keep.len() != v.len() {
            return Err(Error::contract(format!(
                "mask has {} entries, tensor has {}",
                keep.len(),
                v.len()
            )));
        }
        let out = v
            .data()
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x } else { 0.0 })
            .collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(input);
        self.push(value, Op::KeepMask(input, keep), rg)
    }

    /// Gathers the listed channels of a `C×H×W` tensor, in order.
    pub fn select_channels(&mut self, input: Var, channels: &[usize]) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if let Some(bad) = channels.iter().find(|&&k| k >= c) {
            return Err(Error::contract(format!("channel {bad} out of range for {c}")));
        }
        let hw = h * w;
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(channels.len() * hw);
        for &k in channels {
            out.extend_from_slice(&src[k * hw..(k + 1) * hw]);
        }
        let rg = self.rg(input);
        self.push(
            Tensor::new(vec![channels.len(), h, w], out)?,
            Op::SelectChannels(input, channels.to_vec()),
            rg,
        )
    }

    /// Per-channel standardisation `(x − mean[c]) / std[c]`.
    pub fn standardize_channels(&mut self, input: Var, mean: &[f64], std: &[f64]) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if mean.len() != c || std.len() != c {
            return Err(Error::contract(format!(
                "standardisation has {}/{} entries for {c} channels",
                mean.len(),
                std.len()
            )));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(c * hw);
        for (k, row) in self.value(input).data().chunks(hw.max(1)).enumerate().take(c) {
            out.extend(row.iter().map(|&x| (x - mean[k]) / std[k]));
        }
        let rg = self.rg(input);
        self.push(
            Tensor::new(vec![c, h, w], out)?,
            Op::ChannelAffine(input, std.to_vec()),
            rg,
        )
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::contract(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out: Vec<f64> = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Channel-wise concatenation of two `C×H×W` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::contract(format!(
                "concat spatial mismatch: {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        let mut out = Vec::with_capacity((ca + cb) * ha * wa);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![ca + cb, ha, wa], out)?, Op::Concat(a, b), rg)
    }

    /// Sum of all elements, with Neumaier compensation.
    pub fn reduce_sum(&mut self, input: Var) -> Result<Var> {
        let s = compensated_sum(self.value(input).data());
        let rg = self.rg(input);
        self.push(Tensor::scalar(s), Op::Sum(input), rg)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();

        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
                cols,
            } => {
                let (c_in, h, w) = self.nodes[input.0].value.chw().expect("checked in forward");
                let kshape = self.nodes[kernel.0].value.shape();
                let (c_out, k) = (kshape[0], kshape[2]);
                let hw = h * w;
                let ckk = c_in * k * k;
                send(*bias, &mut |gb| {
                    for (co, row) in g.chunks(hw).enumerate() {
                        gb[co] += row.iter().sum::<f64>();
                    }
                });
                send(*kernel, &mut |gk| {
                    conv::gemm(c_out, hw, ckk, g, false, cols, true, 1.0, gk);
                });
                let kdata = self.nodes[kernel.0].value.data();
                send(*input, &mut |gi| {
                    if k == 1 {
                        conv::gemm(c_in, c_out, hw, kdata, true, g, false, 1.0, gi);
                    } else {
                        let mut gcols = vec![0.0; ckk * hw];
                        conv::gemm(ckk, c_out, hw, kdata, true, g, false, 0.0, &mut gcols);
                        conv::col2im(&gcols, c_in, h, w, k, *padding, gi);
                    }
                });
            }
            Op::AvgPool2(input) => {
                let (c, h, w) = self.nodes[input.0].value.chw().expect("checked in forward");
                let (oh, ow) = (h / 2, w / 2);
                send(*input, &mut |gi| {
                    for ch in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                gi[(ch * h + y) * w + x] += 0.25 * g[(ch * oh + y / 2) * ow + x / 2];
                            }
                        }
                    }
                });
            }
            Op::Upsample2(input) => {
                let (c, h, w) = self.nodes[input.0].value.chw().expect("checked in forward");
                let (oh, ow) = (2 * h, 2 * w);
                send(*input, &mut |gi| {
                    for ch in 0..c {
                        for y in 0..oh {
                            for x in 0..ow {
                                gi[(ch * h + y / 2) * w + x / 2] += g[(ch * oh + y) * ow + x];
                            }
                        }
                    }
                });
            }
            Op::LeakyRelu(input, slope) => {
                let x = self.nodes[input.0].value.data();
                send(*input, &mut |gi| {
                    for ((a, &gv), &xv) in gi.iter_mut().zip(g).zip(x) {
                        *a += if xv > 0.0 { gv } else { slope * gv };
                    }
                });
            }
            Op::Exp(input) => send(*input, &mut |gi| {
                for ((a, &gv), &y) in gi.iter_mut().zip(g).zip(out) {
                    *a += gv * y;
                }
            }),
            Op::Log(input) => {
                let x = self.nodes[input.0].value.data();
                send(*input, &mut |gi| {
                    for ((a, &gv), &xv) in gi.iter_mut().zip(g).zip(x) {
                        *a += gv / xv;
                    }
                });
            }
            Op::Square(input) => {
                let x = self.nodes[input.0].value.data();
                send(*input, &mut |gi| {
                    for ((a, &gv), &xv) in gi.iter_mut().zip(g).zip(x) {
                        *a += 2.0 * xv * gv;
                    }
                });
            }
            Op::Add(a, b) => {
                send(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(s, &gv)| *s += gv));
                send(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(s, &gv)| *s += gv));
            }
            Op::Sub(a, b) => {
                send(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(s, &gv)| *s += gv));
                send(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(s, &gv)| *s -= gv));
            }
            Op::Mul(a, b) => {
                let xa = self.nodes[a.0].value.data();
                let xb = self.nodes[b.0].value.data();
                send(*a, &mut |ga| {
                    for ((s, &gv), &y) in ga.iter_mut().zip(g).zip(xb) {
                        *s += gv * y;
                    }
                });
                send(*b, &mut |gb| {
                    for ((s, &gv), &y) in gb.iter_mut().zip(g).zip(xa) {
                        *s += gv * y;
                    }
                });
            }
            Op::ScalarMul(input, c) => send(*input, &mut |gi| gi.iter_mut().zip(g).for_each(|(s, &gv)| *s += c * gv)),
            Op::Negate(input) => send(*input, &mut |gi| gi.iter_mut().zip(g).for_each(|(s, &gv)| *s -= gv)),
            Op::Concat(a, b) => {
                let na = self.nodes[a.0].value.len();
                send(*a, &mut |ga| ga.iter_mut().zip(&g[..na]).for_each(|(s, &gv)| *s += gv));
                send(*b, &mut |gb| gb.iter_mut().zip(&g[na..]).for_each(|(s, &gv)| *s += gv));
            }
            Op::Sum(input) => send(*input, &mut |gi| gi.iter_mut().for_each(|s| *s += g[0])),
            Op::AddScalar(input) => send(*input, &mut |gi| gi.iter_mut().zip(g).for_each(|(s, &gv)| *s += gv)),
            Op::KeepMask(input, keep) => send(*input, &mut |gi| {
                for ((s, &gv), &k) in gi.iter_mut().zip(g).zip(keep) {
                    if k {
                        *s += gv;
                    }
                }
            }),
            Op::SelectChannels(input, channels) => {
                let hw = out.len() / channels.len().max(1);
                send(*input, &mut |gi| {
                    for (j, &k) in channels.iter().enumerate() {
                        for (s, &gv) in gi[k * hw..(k + 1) * hw].iter_mut().zip(&g[j * hw..(j + 1) * hw]) {
                            *s += gv;
                        }
                    }
                });
            }
            Op::ChannelAffine(input, std) => {
                let hw = out.len() / std.len().max(1);
                send(*input, &mut |gi| {
                    for (k, (row, grow)) in gi.chunks_mut(hw.max(1)).zip(g.chunks(hw.max(1))).enumerate() {
                        row.iter_mut().zip(grow).for_each(|(s, &gv)| *s += gv / std[k]);
                    }
                });
            }
        }
    }
}

fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_keeps_small_terms() {
        assert_eq!(compensated_sum(&[1.0, 1e100, 1.0, -1e100]), 2.0);
    }

    fn t3(c: usize, h: usize, w: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![c, h, w], data.to_vec()).unwrap()
    }

    const GRID: [f64; 9] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];

    #[test]
    fn unit_kernel_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(t3(1, 3, 3, &GRID));
        let k = g.constant(Tensor::filled(&[1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, Padding::Reflect).unwrap();
        assert_eq!(g.value(y).data(), &GRID);
    }

    #[test]
    fn box_kernel_center_and_reflected_corner() {
        let mut g = Graph::new();
        let x = g.constant(t3(1, 3, 3, &GRID));
        let k = g.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let zero = g.conv2d(x, k, b, Padding::Zero).unwrap();
        assert_eq!(g.value(zero).data()[4], 45.0);
        assert_eq!(g.value(zero).data()[0], 1.0 + 2.0 + 4.0 + 5.0);
        let refl = g.conv2d(x, k, b, Padding::Reflect).unwrap();
        assert_eq!(g.value(refl).data()[0], 33.0);
    }

    #[test]
    fn conv_rejects_even_kernel_and_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 4]));
        let k_even = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let k_bad = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, k_even, b, Padding::Zero), Err(Error::Contract(_))));
        assert!(matches!(g.conv2d(x, k_bad, b, Padding::Zero), Err(Error::Contract(_))));
    }

    #[test]
    fn pooling_and_upsampling() {
        let mut g = Graph::new();
        let x = g.param(t3(1, 2, 2, &[1.0, 3.0, 5.0, 7.0]));
        let p = g.avg_pool2(x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);
        let s = g.reduce_sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);

        let mut g = Graph::new();
        let x = g.param(t3(1, 1, 1, &[5.0]));
        let u = g.upsample2(x).unwrap();
        assert_eq!(g.value(u).data(), &[5.0; 4]);
        let back = g.avg_pool2(u).unwrap();
        assert_eq!(g.value(back).data(), &[5.0]);
        let s = g.reduce_sum(u).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn pooling_rejects_odd_extents() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 4]));
        assert!(g.avg_pool2(x).is_err());
    }

    #[test]
    fn elementwise_definitions() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let y = g.leaky_relu(x, 0.1).unwrap();
        assert_eq!(g.value(y).data(), &[-0.1, 2.0]);

        let pos = g.constant(Tensor::new(vec![3], vec![0.3, 1.0, 42.0]).unwrap());
        let l = g.log(pos).unwrap();
        let e = g.exp(l).unwrap();
        for (a, b) in g.value(e).data().iter().zip(g.value(pos).data()) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        assert!(matches!(g.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn binary_shape_mismatch_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn concat_preserves_operands() {
        let mut g = Graph::new();
        let a = g.param(t3(1, 1, 2, &[1.0, 2.0]));
        let b = g.param(t3(1, 1, 2, &[0.0, 0.0]));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1, 2]);
        assert_eq!(&g.value(c).data()[..2], g.value(a).data());
        let mismatched = g.constant(Tensor::zeros(&[1, 2, 2]));
        assert!(g.concat_channels(a, mismatched).is_err());
    }

    #[test]
    fn reduce_sum_values_and_gradient() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[2, 2]));
        let s = g.reduce_sum(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.0]);
        let x = g.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let s = g.reduce_sum(x).unwrap();
        assert_eq!(g.value(s).data(), &[10.0]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1], vec![3.0]).unwrap());
        let sq = g.square(x).unwrap();
        let s = g.reduce_sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1], vec![3.0]).unwrap());
        let sq = g.square(x).unwrap();
        let s = g.reduce_sum(sq).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn shared_input_sums_path_contributions() {
        // f(x) = x·exp(x) + x², f'(x) = exp(x)(1 + x) + 2x
        let x0 = 0.7_f64;
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1], vec![x0]).unwrap());
        let e = g.exp(x).unwrap();
        let p = g.mul(x, e).unwrap();
        let sq = g.square(x).unwrap();
        let f = g.add(p, sq).unwrap();
        let s = g.reduce_sum(f).unwrap();
        g.backward(s).unwrap();
        let expected = x0.exp() * (1.0 + x0) + 2.0 * x0;
        assert!((g.grad(x).unwrap()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn finite_check_mode_flags_overflow() {
        let mut g = Graph::with_finite_checks();
        let x = g.constant(Tensor::new(vec![1], vec![1000.0]).unwrap());
        assert!(matches!(g.exp(x), Err(Error::Domain(_))));
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1], vec![1000.0]).unwrap());
        assert!(g.exp(x).is_ok());
    }
}
