use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the dual-tower grid detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Output strides of the three pyramid levels.
    pub strides: [usize; 3],
    /// Feature width of each pyramid level.
    pub dims: [usize; 3],
    pub foundation_dim: usize,
    /// Foundation feature stride in full-resolution pixels.
    pub foundation_stride: usize,
    pub num_classes: usize,
    pub top_n: usize,
    /// Side of the average-pooled window each cell sees (window = 2 × stride).
    pub patch_grid: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 3,
            strides: [4, 8, 16],
            dims: [32, 64, 128],
            foundation_dim: 96,
            foundation_stride: 8,
            num_classes: 3,
            top_n: 20,
            patch_grid: 8,
        }
    }
}

impl DetectorConfig {
    /// A very small network for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 3,
            strides: [4, 8, 16],
            dims: [4, 5, 6],
            foundation_dim: 6,
            foundation_stride: 8,
            num_classes: 2,
            top_n: 8,
            patch_grid: 2,
        }
    }

    /// Default geometry with every feature width set to `dim`.
    pub fn wide(dim: usize) -> Self {
        Self {
            dims: [dim; 3],
            foundation_dim: dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.num_classes == 0 || self.top_n == 0 || self.patch_grid == 0 {
            return bad("channels, classes, top_n and patch_grid must be positive".into());
        }
        if self.dims.contains(&0) || self.foundation_dim == 0 {
            return bad("feature dims must be positive".into());
        }
        for &s in &self.strides {
            if s == 0 || self.height % s != 0 || self.width % s != 0 {
                return bad(format!("stride {s} does not divide {}x{}", self.height, self.width));
            }
            if (2 * s) % self.patch_grid != 0 {
                return bad(format!("window {} not divisible by patch grid {}", 2 * s, self.patch_grid));
            }
        }
        let sf = self.foundation_stride;
        if sf < 2 || sf % 2 != 0 || self.height % sf != 0 || self.width % sf != 0 {
            return bad(format!("foundation stride {sf} must be even and divide the image"));
        }
        if sf % self.patch_grid != 0 {
            return bad(format!("foundation window {sf} not divisible by patch grid"));
        }
        Ok(())
    }

    /// `(rows, cols)` of level `l` (0-based).
    pub fn level_grid(&self, l: usize) -> (usize, usize) {
        (self.height / self.strides[l], self.width / self.strides[l])
    }

    pub fn level_cells(&self, l: usize) -> usize {
        let (h, w) = self.level_grid(l);
        h * w
    }

    /// Total number of prediction cells over all levels.
    pub fn total_cells(&self) -> usize {
        (0..3).map(|l| self.level_cells(l)).sum()
    }

    pub fn foundation_grid(&self) -> (usize, usize) {
        (self.height / self.foundation_stride, self.width / self.foundation_stride)
    }

    pub fn foundation_cells(&self) -> usize {
        let (h, w) = self.foundation_grid();
        h * w
    }

    /// Input width of the per-cell MLPs.
    pub fn window_dim(&self) -> usize {
        self.patch_grid * self.patch_grid * self.channels
    }
}
