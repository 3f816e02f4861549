//! M-PSK constellations and their distance-preserving constructive interference
//! regions (DPCIRs).
//!
//! A point `x_i` with an unbounded decision region has a DPCIR that is a
//! polyhedral angle with apex at `x_i`, bounded by the two hyperplanes normal
//! to `x_i - x_{i,j}` for its neighbors `x_{i,j}`. The 2x2 matrix `A_i` stacks
//! those normals, so `A_i (y - x_i) >= 0` is the membership test and
//! `y = x_i + A_i^{-1} delta`, `delta >= 0` parameterises the region.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Result, SlpError};

/// Containment tolerance for a unit-power constellation.
pub const DEFAULT_CONTAINMENT_TOL: f64 = 1e-9;

/// Smallest order with two distinct neighbors per point.
pub const MIN_PSK_ORDER: usize = 4;

#[derive(Debug, Clone)]
pub struct Constellation {
    order: usize,
    points: Vec<Vector2<f64>>,
    neighbors: Vec<[usize; 2]>,
    dpcir: Vec<Matrix2<f64>>,
    dpcir_inv: Vec<Matrix2<f64>>,
}

impl Constellation {
    /// Unit-radius M-PSK with phase offset `pi / M`, so QPSK sits on the diagonals.
    ///
    /// Row 0 of each `A_i` belongs to neighbor `(i - 1) mod M`, row 1 to `(i + 1) mod M`.
    pub fn psk(order: usize) -> Result<Self> {
        if order < MIN_PSK_ORDER {
            return Err(SlpError::InvalidArgument(format!(
                "PSK order must be at least {MIN_PSK_ORDER} (two distinct DPCIR neighbors per point), got {order}"
            )));
        }
        let m = order as f64;
        let points: Vec<Vector2<f64>> = (0..order)
            .map(|i| {
                let theta = 2.0 * PI * i as f64 / m + PI / m;
                Vector2::new(theta.cos(), theta.sin())
            })
            .collect();
        let neighbors: Vec<[usize; 2]> = (0..order)
            .map(|i| [(i + order - 1) % order, (i + 1) % order])
            .collect();

        let mut dpcir = Vec::with_capacity(order);
        let mut dpcir_inv = Vec::with_capacity(order);
        for (i, nb) in neighbors.iter().enumerate() {
            let r0 = points[i] - points[nb[0]];
            let r1 = points[i] - points[nb[1]];
            let a = Matrix2::new(r0.x, r0.y, r1.x, r1.y);
            let inv = invert_2x2(&a).ok_or(SlpError::SingularBlock(i))?;
            dpcir.push(a);
            dpcir_inv.push(inv);
        }

        Ok(Self { order, points, neighbors, dpcir, dpcir_inv })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Result<Vector2<f64>> {
        self.check(i)?;
        Ok(self.points[i])
    }

    pub fn neighbors(&self, i: usize) -> Result<[usize; 2]> {
        self.check(i)?;
        Ok(self.neighbors[i])
    }

    /// The DPCIR normal matrix `A_i`; row `j` is `(x_i - x_{i,j})^T`.
    pub fn dpcir_matrix(&self, i: usize) -> Result<Matrix2<f64>> {
        self.check(i)?;
        Ok(self.dpcir[i])
    }

    pub fn dpcir_inverse(&self, i: usize) -> Result<Matrix2<f64>> {
        self.check(i)?;
        Ok(self.dpcir_inv[i])
    }

    /// Mean of `|x_i|^2` over the constellation.
    pub fn average_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_squared()).sum::<f64>() / self.order as f64
    }

    /// Single-user ML decision: nearest point, lowest index on ties.
    pub fn ml_detect(&self, y: &Vector2<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// True iff `A_i (y - scale * x_i) >= -tol` componentwise.
    pub fn dpcir_contains(&self, i: usize, y: &Vector2<f64>, scale: f64, tol: f64) -> Result<bool> {
        self.check(i)?;
        let slack = self.dpcir[i] * (y - self.points[i] * scale);
        Ok(slack.iter().all(|&s| s >= -tol))
    }

    fn check(&self, i: usize) -> Result<()> {
        if i < self.order {
            Ok(())
        } else {
            Err(SlpError::IndexOutOfRange { index: i, order: self.order })
        }
    }
}

pub(crate) fn invert_2x2(a: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    if det.abs() <= 1e-12 {
        return None;
    }
    Some(Matrix2::new(a[(1, 1)], -a[(0, 1)], -a[(1, 0)], a[(0, 0)]) / det)
}
