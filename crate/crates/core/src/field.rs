//! Dense displacement fields sampled on a square lattice of cell centers.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DeficitModel, Point2, Vec2};

/// `grid x grid` displacements at the lattice points
/// `((i + 0.5) / grid, (j + 0.5) / grid)`, stored row-major (`j` outer).
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementGrid {
    grid: usize,
    data: Vec<Vec2>,
}

/// Linear interpolation written so that equal endpoints reproduce the
/// endpoint exactly and `t == 0` returns `a` exactly.
#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Splits a continuous lattice coordinate into a base index and fraction,
/// clamping to `[0, n - 1]`.
#[inline]
pub(crate) fn clamp_coord(x: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max) };
    let i0 = x.floor();
    let t = x - i0;
    let i0 = i0 as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, t)
}

impl DisplacementGrid {
    pub fn zeros(grid: usize) -> Result<Self> {
        Self::from_vec(grid, vec![Vec2::ZERO; grid * grid])
    }

    pub fn from_vec(grid: usize, data: Vec<Vec2>) -> Result<Self> {
        if grid < 2 {
            return Err(Error::param(format!("lattice size must be >= 2, got {grid}")));
        }
        if data.len() != grid * grid {
            return Err(Error::param(format!(
                "lattice of size {grid} needs {} samples, got {}",
                grid * grid,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|d| !d.is_finite()) {
            return Err(Error::param(format!("non-finite displacement at sample {i}")));
        }
        Ok(DisplacementGrid { grid, data })
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn<F>(grid: usize, f: F) -> Result<Self>
    where
        F: Fn(Point2) -> Vec2 + Sync,
    {
        if grid < 2 {
            return Err(Error::param(format!("lattice size must be >= 2, got {grid}")));
        }
        let mut data = vec![Vec2::ZERO; grid * grid];
        data.par_chunks_mut(grid).enumerate().for_each(|(j, row)| {
            for (i, d) in row.iter_mut().enumerate() {
                *d = f(lattice_point(grid, i, j));
            }
        });
        Self::from_vec(grid, data)
    }

    /// Total displacement `D = S - id` of a model.
    pub fn from_model(m: &DeficitModel, grid: usize) -> Result<Self> {
        let eval = m.evaluator();
        Self::from_fn(grid, |p| eval.displacement(p))
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn data(&self) -> &[Vec2] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Vec2 {
        self.data[j * self.grid + i]
    }

    pub fn point(&self, i: usize, j: usize) -> Point2 {
        lattice_point(self.grid, i, j)
    }

    /// Lattice points paired with their displacement, in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (Point2, Vec2)> + '_ {
        let g = self.grid;
        self.data
            .iter()
            .enumerate()
            .map(move |(idx, d)| (lattice_point(g, idx % g, idx / g), *d))
    }

    /// Bilinear interpolation between lattice points; queries outside the
    /// lattice hull take the nearest border value.
    pub fn sample(&self, p: Point2) -> Vec2 {
        let g = self.grid;
        let (i0, i1, tx) = clamp_coord(p.u * g as f64 - 0.5, g);
        let (j0, j1, ty) = clamp_coord(p.v * g as f64 - 0.5, g);
        let a = self.get(i0, j0);
        let b = self.get(i1, j0);
        let c = self.get(i0, j1);
        let d = self.get(i1, j1);
        let top = Vec2::new(lerp(a.du, b.du, tx), lerp(a.dv, b.dv, tx));
        let bottom = Vec2::new(lerp(c.du, d.du, tx), lerp(c.dv, d.dv, tx));
        Vec2::new(lerp(top.du, bottom.du, ty), lerp(top.dv, bottom.dv, ty))
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(Vec2::norm).fold(0.0, f64::max)
    }

    /// Largest pointwise distance between two fields on the same lattice.
    pub fn max_distance(&self, other: &DisplacementGrid) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::param(format!(
                "lattice sizes differ: {} vs {}",
                self.grid, other.grid
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).norm())
            .fold(0.0, f64::max))
    }

    /// CSV with header `u,v,du,dv`, one row per lattice point in storage
    /// order. Numbers use the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 48 + 16);
        out.push_str("u,v,du,dv\n");
        for (p, d) in self.iter() {
            writeln!(out, "{},{},{},{}", p.u, p.v, d.du, d.dv).expect("writing to a String");
        }
        out
    }
}

pub fn lattice_point(grid: usize, i: usize, j: usize) -> Point2 {
    let g = grid as f64;
    Point2::new((i as f64 + 0.5) / g, (j as f64 + 0.5) / g)
}
