use crate::error::{Error, Result};

/// Multi-channel real image stored channel-planar, row-major (`C×H×W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::contract(format!(
                "raster {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Stacks single-channel planes of identical size.
    pub fn from_planes(height: usize, width: usize, planes: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for (c, p) in planes.iter().enumerate() {
            if p.len() != height * width {
                return Err(Error::contract(format!(
                    "plane {c} has {} values, expected {}",
                    p.len(),
                    height * width
                )));
            }
            data.extend_from_slice(p);
        }
        Self::from_vec(planes.len(), height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Copies the window `[y0, y0+h) × [x0, x0+w)` of every channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Raster> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::contract(format!(
                "crop ({y0},{x0}) {h}x{w} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Raster::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                let src = (c * self.height + y0 + y) * self.width + x0;
                let dst = (c * h + y) * w;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        Ok(out)
    }

    /// New raster made of the listed channels, in order.
    pub fn select_channels(&self, channels: &[usize]) -> Raster {
        let n = self.plane_len();
        let mut data = Vec::with_capacity(channels.len() * n);
        for &c in channels {
            data.extend_from_slice(self.channel(c));
        }
        Raster {
            height: self.height,
            width: self.width,
            channels: channels.len(),
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
