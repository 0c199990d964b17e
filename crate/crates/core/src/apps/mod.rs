//! End-to-end pipelines: the chain proof of concept (exact vs per-factor
//! SVD vs tensor-train kernels), barycenter-based color transfer between
//! images, and Schrödinger-bridge marginal evolution on a grid, including
//! the loopy window-graph variant.

mod bridge;
mod color;
mod poc;

pub use bridge::{
    bridge_marginal_plan_flops, grid_points, run_bridge, BridgeConfig, BridgeGraph, BridgeReport,
};
pub use color::{
    barycenter_star, run_color_transfer, star_kernel_from_points, BarycenterResult, ColorConfig,
    ColorReport,
};
pub use poc::{chain_cost_model, run_poc, BranchReport, PocConfig, PocRankRow, PocReport};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// An RGB image with channels in `[0, 1]`, pixels row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        for (i, p) in pixels.iter().enumerate() {
            if p.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::InvalidArgument(format!(
                    "pixel {i} has a channel outside [0, 1]: {p:?}"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    /// Pixel colors as an `n x 3` point set.
    pub fn color_points(&self) -> Mat {
        Mat::from_fn(self.pixels.len(), 3, |i, c| self.pixels[i][c])
    }

    /// Rebuild from computed colors, forgiving float excursions up to 1e-9
    /// outside the unit cube (convex combinations land there).
    pub fn from_color_points(width: usize, height: usize, colors: &Mat) -> Result<Self> {
        if colors.ncols() != 3 || colors.nrows() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} colors for a {width}x{height} image",
                colors.nrows(),
                colors.ncols()
            )));
        }
        let mut pixels = Vec::with_capacity(colors.nrows());
        for i in 0..colors.nrows() {
            let mut p = [0.0; 3];
            for (c, slot) in p.iter_mut().enumerate() {
                let v = colors.get(i, c);
                if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "computed color {v} at pixel {i} is outside [0, 1]"
                    )));
                }
                *slot = v.clamp(0.0, 1.0);
            }
            pixels.push(p);
        }
        Self::new(width, height, pixels)
    }
}

/// Uniform probability vector of length `n`.
pub(crate) fn uniform_simplex(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}
