//! Square lattice covering an annulus, with boundary bands one stencil
//! width thick on each side.

use crate::error::{Error, Result};

use super::stencil::directions;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Strictly inside the annulus; unknown.
    Active,
    /// Inside the inner disk and reachable from an active node.
    InnerBand,
    /// Outside the outer disk and reachable from an active node.
    OuterBand,
    /// Not used by the scheme.
    Unused,
}

#[derive(Clone, Debug)]
pub struct AnnulusGrid {
    pub r_inner: f64,
    pub r_outer: f64,
    pub h: f64,
    /// Stencil width the bands were built for.
    pub width: usize,
    /// Lattice points per side; node `(i, j)` sits at `(−L + i·h, −L + j·h)`.
    pub side: usize,
    pub half_extent: f64,
    pub kinds: Vec<NodeKind>,
    pub active: Vec<usize>,
}

impl AnnulusGrid {
    /// Requires `0 < r_inner < r_outer` and `h ≤ (r_outer − r_inner)/16`.
    pub fn new(r_inner: f64, r_outer: f64, h: f64, width: usize) -> Result<Self> {
        if !(r_inner > 0.0 && r_outer > r_inner && r_outer.is_finite()) {
            return Err(Error::InvalidInput(format!("need 0 < r_inner < r_outer (got {r_inner}, {r_outer})")));
        }
        if !(h > 0.0 && h <= (r_outer - r_inner) / 16.0) {
            return Err(Error::InvalidInput(format!(
                "grid spacing {h} must be positive and at most (r_outer - r_inner)/16 = {}",
                (r_outer - r_inner) / 16.0
            )));
        }
        if !(1..=super::stencil::MAX_WIDTH).contains(&width) {
            return Err(Error::InvalidInput(format!("stencil width {width} out of range")));
        }
        let cells = (r_outer / h).ceil() as usize + width + 1;
        let half_extent = cells as f64 * h;
        let side = 2 * cells + 1;
        let mut grid = AnnulusGrid {
            r_inner,
            r_outer,
            h,
            width,
            side,
            half_extent,
            kinds: vec![NodeKind::Unused; side * side],
            active: Vec::new(),
        };
        for idx in 0..side * side {
            let r = grid.radius(idx);
            if r > r_inner && r < r_outer {
                grid.kinds[idx] = NodeKind::Active;
                grid.active.push(idx);
            }
        }
        let dirs = directions(width);
        let mid = 0.5 * (r_inner + r_outer);
        for a in 0..grid.active.len() {
            let idx = grid.active[a];
            for d in &dirs {
                for sign in [1, -1] {
                    let nb = grid.shift(idx, [sign * d[0], sign * d[1]]);
                    if grid.kinds[nb] == NodeKind::Unused {
                        grid.kinds[nb] = if grid.radius(nb) < mid { NodeKind::InnerBand } else { NodeKind::OuterBand };
                    }
                }
            }
        }
        Ok(grid)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (i, j) = (idx % self.side, idx / self.side);
        [-self.half_extent + i as f64 * self.h, -self.half_extent + j as f64 * self.h]
    }

    #[inline]
    pub fn radius(&self, idx: usize) -> f64 {
        let [x, y] = self.coords(idx);
        x.hypot(y)
    }

    /// Linear index offset of the lattice vector `d`.
    #[inline]
    pub fn offset(&self, d: [i32; 2]) -> isize {
        d[1] as isize * self.side as isize + d[0] as isize
    }

    #[inline]
    fn shift(&self, idx: usize, d: [i32; 2]) -> usize {
        (idx as isize + self.offset(d)) as usize
    }

    pub fn node_count(&self) -> usize {
        self.side * self.side
    }

    pub fn band_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(|&k| matches!(self.kinds[k], NodeKind::InnerBand | NodeKind::OuterBand))
    }
}

/// Grid function on active and band nodes.
#[derive(Clone, Debug)]
pub struct Field {
    pub grid: AnnulusGrid,
    /// One value per lattice node; unused nodes hold NaN.
    pub values: Vec<f64>,
}

impl Field {
    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Bilinear interpolation. Points whose surrounding cell touches an
    /// unused node give NaN.
    pub fn interpolate(&self, p: [f64; 2]) -> f64 {
        let g = &self.grid;
        let fx = (p[0] + g.half_extent) / g.h;
        let fy = (p[1] + g.half_extent) / g.h;
        if fx < 0.0 || fy < 0.0 || fx >= (g.side - 1) as f64 || fy >= (g.side - 1) as f64 {
            return f64::NAN;
        }
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        let (wx, wy) = (fx - i as f64, fy - j as f64);
        let at = |i: usize, j: usize| self.values[j * g.side + i];
        (1.0 - wx) * (1.0 - wy) * at(i, j)
            + wx * (1.0 - wy) * at(i + 1, j)
            + (1.0 - wx) * wy * at(i, j + 1)
            + wx * wy * at(i + 1, j + 1)
    }

    /// `(x, y, u)` on active and band nodes, in lattice order.
    pub fn samples(&self) -> Vec<[f64; 3]> {
        (0..self.grid.node_count())
            .filter(|&k| self.grid.kinds[k] != NodeKind::Unused)
            .map(|k| {
                let [x, y] = self.grid.coords(k);
                [x, y, self.values[k]]
            })
            .collect()
    }

    /// Largest `|u − exact|` over active nodes.
    pub fn sup_error(&self, exact: impl Fn([f64; 2]) -> f64) -> f64 {
        self.grid
            .active
            .iter()
            .map(|&k| (self.values[k] - exact(self.grid.coords(k))).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_cover_every_stencil_neighbor() {
        for width in 1..=3 {
            let g = AnnulusGrid::new(0.25, 1.0, 1.0 / 32.0, width).unwrap();
            let dirs = directions(width);
            for &idx in &g.active {
                for d in &dirs {
                    for s in [1, -1] {
                        let nb = g.shift(idx, [s * d[0], s * d[1]]);
                        assert_ne!(g.kinds[nb], NodeKind::Unused);
                    }
                }
            }
            for k in g.band_nodes() {
                let r = g.radius(k);
                match g.kinds[k] {
                    NodeKind::InnerBand => assert!(r <= 0.25),
                    NodeKind::OuterBand => assert!(r >= 1.0),
                    _ => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn rejects_coarse_spacing() {
        assert!(AnnulusGrid::new(0.25, 1.0, 0.1, 2).is_err());
        assert!(AnnulusGrid::new(1.0, 0.5, 0.01, 2).is_err());
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let g = AnnulusGrid::new(0.25, 1.0, 1.0 / 32.0, 1).unwrap();
        let values = (0..g.node_count())
            .map(|k| {
                let [x, y] = g.coords(k);
                1.0 + 2.0 * x - y + 0.5 * x * y
            })
            .collect();
        let f = Field { grid: g, values };
        let p = [0.3141, -0.4321];
        let exact = 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1];
        assert!((f.interpolate(p) - exact).abs() < 1e-12);
    }
}
