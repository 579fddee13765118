//! im2col convolution kernels shared by the graph's forward and backward passes.

use crate::error::{Error, Result};

/// Border handling for same-size convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Mirror about the edge pixel without repeating it (`-1 → 1`).
    Reflect,
    Zero,
}

/// Source index for a possibly out-of-range coordinate, or `None` when it
/// falls in the zero band.
#[inline]
fn source_index(i: isize, n: usize, padding: Padding) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            let r = if i < 0 { -i } else { 2 * (n - 1) - i };
            debug_assert!((0..n).contains(&r));
            Some(r as usize)
        }
    }
}

pub(crate) fn check_geometry(h: usize, w: usize, k: usize, padding: Padding) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(Error::contract(format!("kernel size {k} must be odd")));
    }
    let pad = k / 2;
    if padding == Padding::Reflect && (h <= pad || w <= pad) {
        return Err(Error::contract(format!(
            "reflect padding of {pad} needs extents > {pad}, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Lays out every receptive-field window as a column:
/// rows are `(ci, ky, kx)`, columns are output pixels.
pub(crate) fn im2col(input: &[f64], c_in: usize, h: usize, w: usize, k: usize, padding: Padding) -> Vec<f64> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![0.0; c_in * k * k * hw];
    for ci in 0..c_in {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad as isize;
                for y in 0..h {
                    let Some(sy) = source_index(y as isize + ky as isize - pad as isize, h, padding) else {
                        continue;
                    };
                    let src_row = &plane[sy * w..(sy + 1) * w];
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    for (x, o) in out_row.iter_mut().enumerate() {
                        if let Some(sx) = source_index(x as isize + dx, w, padding) {
                            *o = src_row[sx];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im(
    cols: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: Padding,
    grad_input: &mut [f64],
) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c_in {
        let plane = &mut grad_input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad as isize;
                for y in 0..h {
                    let Some(sy) = source_index(y as isize + ky as isize - pad as isize, h, padding) else {
                        continue;
                    };
                    let col_row = &src[y * w..(y + 1) * w];
                    for (x, &g) in col_row.iter().enumerate() {
                        if let Some(sx) = source_index(x as isize + dx, w, padding) {
                            plane[sy * w + sx] += g;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` on row-major buffers.
///
/// `a` is `m×k`, `b` is `k×n`; `trans_a`/`trans_b` mean the stored buffer
/// is the transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
