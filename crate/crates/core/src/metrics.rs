//! PSNR, SSIM and equivalent number of looks.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Rectangular region in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self { x0, y0, width, height }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.x0 + self.width > width || self.y0 + self.height > height {
            return Err(Error::contract(format!("roi {self} exceeds image {height}x{width}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Roi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.width, self.height)
    }
}

impl std::str::FromStr for Roi {
    type Err = Error;

    /// `x,y,w,h`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::contract(format!("bad roi '{s}': {e}")))?;
        match parts[..] {
            [x, y, w, h] => Ok(Roi::new(x, y, w, h)),
            _ => Err(Error::contract(format!("roi '{s}' must be x,y,w,h"))),
        }
    }
}

/// PSNR value with a flag for the zero-error case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    pub saturated: bool,
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "image sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mse(reference: &[f64], test: &[f64]) -> Result<f64> {
    check_same_len(reference, test)?;
    if reference.is_empty() {
        return Err(Error::contract("mse of empty images"));
    }
    Ok(reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / reference.len() as f64)
}

/// `10·log10(peak² / MSE)`; zero MSE saturates at [`PSNR_CAP_DB`].
pub fn psnr(reference: &[f64], test: &[f64], peak: f64) -> Result<Psnr> {
    if !(peak > 0.0) {
        return Err(Error::contract(format!("peak must be positive, got {peak}")));
    }
    let m = mse(reference, test)?;
    if m == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP_DB,
            saturated: true,
        });
    }
    Ok(Psnr {
        db: 10.0 * (peak * peak / m).log10(),
        saturated: false,
    })
}

/// Mean SSIM over every 8×8 window (stride 1, uniform weights).
pub fn ssim(reference: &[f64], test: &[f64], height: usize, width: usize, peak: f64) -> Result<f64> {
    check_same_len(reference, test)?;
    if reference.len() != height * width {
        return Err(Error::contract("image size does not match extents"));
    }
    let win = SSIM_WINDOW;
    if height < win || width < win {
        return Err(Error::contract(format!(
            "ssim needs extents >= {win}, got {height}x{width}"
        )));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let n = (win * win) as f64;
    let mut total = 0.0;
    for y0 in 0..=height - win {
        for x0 in 0..=width - win {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                let row = y * width;
                for x in x0..x0 + win {
                    let a = reference[row + x];
                    let b = test[row + x];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cxy = sxy / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / ((height - win + 1) * (width - win + 1)) as f64)
}

/// `mean² / variance` (population variance) over a region.
pub fn enl(image: &[f64], height: usize, width: usize, roi: Roi) -> Result<f64> {
    if image.len() != height * width {
        return Err(Error::contract("image size does not match extents"));
    }
    roi.check(height, width)?;
    if roi.area() < 16 {
        return Err(Error::contract(format!("ENL region {roi} has fewer than 16 pixels")));
    }
    let values = || {
        (roi.y0..roi.y0 + roi.height).flat_map(move |y| (roi.x0..roi.x0 + roi.width).map(move |x| image[y * width + x]))
    };
    let n = roi.area() as f64;
    let mean = values().sum::<f64>() / n;
    let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::DegenerateRegion(format!("region {roi} has zero variance")));
    }
    Ok(mean * mean / var)
}

/// One evaluated metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub channel: String,
    /// `full` or `roi:x,y,w,h`.
    pub region: String,
    pub value: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn push(&mut self, metric: &str, channel: &str, region: &str, value: f64, saturated: bool) {
        self.rows.push(MetricRow {
            metric: metric.to_string(),
            channel: channel.to_string(),
            region: region.to_string(),
            value,
            saturated,
        });
    }

    pub fn find(&self, metric: &str, channel: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric && r.channel == channel)
    }

    /// Mean over all rows named `metric`.
    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| r.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// `metric,channel,region,value,flags`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,channel,region,value,flags\n");
        for r in &self.rows {
            let region = if r.region.contains(',') {
                format!("\"{}\"", r.region)
            } else {
                r.region.clone()
            };
            let flags = if r.saturated { "saturated" } else { "" };
            let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.channel, region, r.value, flags);
        }
        out
    }
}
