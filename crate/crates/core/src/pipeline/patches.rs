//! Sliding-window patch extraction and stitching.

use crate::error::{Error, Result};
use crate::raster::Raster;

/// How overlapping patch contributions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapPolicy {
    /// Later patches (row-major) overwrite earlier ones.
    None,
    /// Per-pixel mean over every covering patch.
    #[default]
    Average,
}

/// Patch layout over a source image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub size: usize,
    pub stride: usize,
    /// Top-left `(y, x)` of each patch in row-major order.
    pub coords: Vec<(usize, usize)>,
    pub overlap: OverlapPolicy,
}

/// Offsets `0, stride, …` plus a far-border anchored offset when the regular
/// steps leave a remainder.
fn axis_offsets(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut offs = Vec::new();
    let mut o = 0;
    while o + size <= extent {
        offs.push(o);
        o += stride;
    }
    let last = extent - size;
    if offs.last() != Some(&last) {
        offs.push(last);
    }
    offs
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, size: usize, stride: usize, overlap: OverlapPolicy) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::contract("patch size and stride must be positive"));
        }
        if stride > size {
            return Err(Error::contract(format!(
                "stride {stride} exceeds patch size {size} and would leave gaps"
            )));
        }
        if height < size || width < size {
            return Err(Error::contract(format!(
                "image {height}x{width} is smaller than patch size {size}"
            )));
        }
        let ys = axis_offsets(height, size, stride);
        let xs = axis_offsets(width, size, stride);
        let coords = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();
        Ok(Self {
            height,
            width,
            size,
            stride,
            coords,
            overlap,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn extract_patches(image: &Raster, size: usize, stride: usize) -> Result<(Vec<Raster>, PatchGrid)> {
    let grid = PatchGrid::new(image.height(), image.width(), size, stride, OverlapPolicy::Average)?;
    let patches = grid
        .coords
        .iter()
        .map(|&(y, x)| image.crop(y, x, size, size))
        .collect::<Result<Vec<_>>>()?;
    Ok((patches, grid))
}

/// Reassembles patches; stitching extracted patches reproduces the source
/// bit-exactly under either policy.
pub fn stitch_patches(patches: &[Raster], grid: &PatchGrid) -> Result<Raster> {
    if patches.len() != grid.coords.len() {
        return Err(Error::contract(format!(
            "{} patches for a grid of {}",
            patches.len(),
            grid.coords.len()
        )));
    }
    let Some(first) = patches.first() else {
        return Err(Error::contract("no patches to stitch"));
    };
    let channels = first.channels();
    for p in patches {
        if p.shape() != (channels, grid.size, grid.size) {
            return Err(Error::contract(format!(
                "patch shape {:?} does not match {channels}x{}x{}",
                p.shape(),
                grid.size,
                grid.size
            )));
        }
    }
    let (h, w, s) = (grid.height, grid.width, grid.size);
    let mut out = Raster::zeros(channels, h, w);
    match grid.overlap {
        OverlapPolicy::None => {
            for (p, &(y0, x0)) in patches.iter().zip(&grid.coords) {
                for c in 0..channels {
                    for y in 0..s {
                        for x in 0..s {
                            out.set(c, y0 + y, x0 + x, p.get(c, y, x));
                        }
                    }
                }
            }
        }
        OverlapPolicy::Average => {
            // A pixel whose contributions all agree takes that value exactly;
            // otherwise the arithmetic mean.
            let n = channels * h * w;
            let mut sum = vec![0.0; n];
            let mut first_val = vec![0.0; n];
            let mut count = vec![0u32; n];
            let mut uniform = vec![true; n];
            for (p, &(y0, x0)) in patches.iter().zip(&grid.coords) {
                for c in 0..channels {
                    for y in 0..s {
                        for x in 0..s {
                            let i = (c * h + y0 + y) * w + x0 + x;
                            let v = p.get(c, y, x);
                            if count[i] == 0 {
                                first_val[i] = v;
                            } else if v.to_bits() != first_val[i].to_bits() {
                                uniform[i] = false;
                            }
                            sum[i] += v;
                            count[i] += 1;
                        }
                    }
                }
            }
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o = if uniform[i] {
                    first_val[i]
                } else {
                    sum[i] / count[i] as f64
                };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(c: usize, h: usize, w: usize) -> Raster {
        let data = (0..c * h * w).map(|i| ((i as f64) * 0.618).fract() - 0.3).collect();
        Raster::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn exact_tiling() {
        let (_, grid) = extract_patches(&Raster::zeros(1, 512, 512), 256, 256).unwrap();
        assert_eq!(grid.coords, [(0, 0), (0, 256), (256, 0), (256, 256)]);
        let (_, grid) = extract_patches(&Raster::zeros(1, 64, 64), 64, 64).unwrap();
        assert_eq!(grid.len(), 1);
    }

    #[test]
    fn far_border_anchoring() {
        let (_, grid) = extract_patches(&Raster::zeros(1, 300, 300), 256, 256).unwrap();
        assert_eq!(grid.coords, [(0, 0), (0, 44), (44, 0), (44, 44)]);
    }

    #[test]
    fn small_image_rejected() {
        assert!(extract_patches(&Raster::zeros(1, 63, 64), 64, 64).is_err());
    }

    #[test]
    fn round_trips_are_bit_exact() {
        for (h, w, size, stride) in [(512, 512, 256, 256), (300, 300, 256, 256), (70, 45, 16, 7)] {
            let img = noise(2, h, w);
            let (patches, mut grid) = extract_patches(&img, size, stride).unwrap();
            assert_eq!(stitch_patches(&patches, &grid).unwrap(), img);
            grid.overlap = OverlapPolicy::None;
            assert_eq!(stitch_patches(&patches, &grid).unwrap(), img);
        }
    }

    #[test]
    fn overlapping_constants_average() {
        let grid = PatchGrid::new(4, 6, 4, 4, OverlapPolicy::Average).unwrap();
        assert_eq!(grid.coords, [(0, 0), (0, 2)]);
        let patches = [Raster::filled(1, 4, 4, 0.0), Raster::filled(1, 4, 4, 1.0)];
        let out = stitch_patches(&patches, &grid).unwrap();
        assert_eq!(out.get(0, 1, 0), 0.0);
        assert_eq!(out.get(0, 1, 2), 0.5);
        assert_eq!(out.get(0, 1, 3), 0.5);
        assert_eq!(out.get(0, 1, 5), 1.0);
    }

    #[test]
    fn mismatched_patches_rejected() {
        let grid = PatchGrid::new(8, 8, 4, 4, OverlapPolicy::Average).unwrap();
        assert!(stitch_patches(&[Raster::zeros(1, 4, 4)], &grid).is_err());
        let wrong = vec![Raster::zeros(1, 4, 5); 4];
        assert!(stitch_patches(&wrong, &grid).is_err());
    }
}
