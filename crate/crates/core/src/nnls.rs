//! Non-negative least squares: `min ||C x - d||^2` subject to `x >= 0`.
//!
//! [`nnls_solve`] is a Lawson-Hanson active-set solver working on the normal
//! equations (`C^T C` and `C^T d` are formed once). Each change of the passive
//! set refactorises the restricted Gram block from scratch; the problems this
//! crate feeds it have at most a few dozen variables.
//!
//! [`nnls_oracle`] enumerates every passive set and solves each restricted
//! least-squares problem by QR. It is exponential in `n` and only exists to
//! check the solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlpError};

/// Largest `n` the enumeration oracle accepts.
pub const ORACLE_MAX_VARS: usize = 12;

#[derive(Debug, Clone)]
pub struct NnlsProblem {
    c: DMatrix<f64>,
    d: DVector<f64>,
    tol: f64,
    max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnlsStatus {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    /// Minimiser; entries in the active set are exactly zero.
    pub delta: DVector<f64>,
    /// `||C delta - d||^2`.
    pub objective: f64,
    /// Gradient `2 C^T (C delta - d)` at `delta`.
    pub dual: DVector<f64>,
    pub iterations: usize,
    pub status: NnlsStatus,
    /// Objective after each outer iteration (first entry is at `delta = 0`).
    pub trace: Vec<f64>,
}

impl NnlsProblem {
    /// Defaults: `tol = 1e-9 (1 + ||d||^2)`, `max_iter = 10 n`.
    pub fn new(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let (m, n) = c.shape();
        if n == 0 {
            return Err(SlpError::InvalidArgument("NNLS needs at least one variable".into()));
        }
        if n > m {
            return Err(SlpError::InvalidArgument(format!(
                "NNLS matrix must have full column rank, got {m}x{n}"
            )));
        }
        if d.len() != m {
            return Err(SlpError::InvalidArgument(format!(
                "right-hand side has length {}, expected {m}",
                d.len()
            )));
        }
        if c.iter().chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(SlpError::InvalidArgument("non-finite NNLS input".into()));
        }
        let tol = 1e-9 * (1.0 + d.norm_squared());
        Ok(Self { c, d, tol, max_iter: 10 * n })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn n_vars(&self) -> usize {
        self.c.ncols()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (&self.c * x - &self.d).norm_squared()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.c.tr_mul(&(&self.c * x - &self.d)) * 2.0
    }
}

/// Lawson-Hanson active-set NNLS.
pub fn nnls_solve(p: &NnlsProblem) -> Result<NnlsSolution> {
    let n = p.n_vars();
    let gram = p.c.tr_mul(&p.c);
    let ctd = p.c.tr_mul(&p.d);
    let grad = |x: &DVector<f64>| (&gram * x - &ctd) * 2.0;

    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    // Variables whose entry was rejected since `x` last moved.
    let mut rejected = vec![false; n];
    let mut w = grad(&x);
    let mut trace = vec![p.objective(&x)];
    let mut iterations = 0;
    let mut status = NnlsStatus::Converged;

    loop {
        let entering = (0..n)
            .filter(|&l| !passive[l] && !rejected[l] && w[l] < -p.tol)
            .fold(None, |best: Option<usize>, l| match best {
                Some(b) if w[b] <= w[l] => Some(b),
                _ => Some(l),
            });
        let Some(j) = entering else { break };
        if iterations >= p.max_iter {
            status = NnlsStatus::IterationCap;
            break;
        }
        iterations += 1;
        passive[j] = true;

        let mut first = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&l| passive[l]).collect();
            let z = solve_restricted(&gram, &ctd, &idx)?;

            if first && z[idx.iter().position(|&l| l == j).unwrap()] <= 0.0 {
                // Round-off made the entering variable non-positive: skip it.
                passive[j] = false;
                rejected[j] = true;
                break;
            }
            first = false;

            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (&l, &v) in idx.iter().zip(z.iter()) {
                    x[l] = v;
                }
                rejected.fill(false);
                break;
            }

            // Step towards z until the first passive variable hits zero.
            let mut alpha = f64::INFINITY;
            let mut blocking = idx[0];
            for (&l, &zl) in idx.iter().zip(z.iter()) {
                if zl <= 0.0 {
                    let ratio = x[l] / (x[l] - zl);
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = l;
                    }
                }
            }
            for (&l, &zl) in idx.iter().zip(z.iter()) {
                x[l] += alpha * (zl - x[l]);
            }
            x[blocking] = 0.0;
            for &l in &idx {
                if x[l] <= 0.0 {
                    x[l] = 0.0;
                    passive[l] = false;
                }
            }
            rejected.fill(false);
            if idx.iter().all(|&l| !passive[l]) {
                break;
            }
        }

        w = grad(&x);
        trace.push(p.objective(&x));
    }

    Ok(NnlsSolution { objective: p.objective(&x), dual: w, delta: x, iterations, status, trace })
}

fn solve_restricted(gram: &DMatrix<f64>, ctd: &DVector<f64>, idx: &[usize]) -> Result<DVector<f64>> {
    let k = idx.len();
    let g = DMatrix::from_fn(k, k, |r, c| gram[(idx[r], idx[c])]);
    let b = DVector::from_fn(k, |r, _| ctd[idx[r]]);
    let chol = g.cholesky().ok_or_else(|| {
        SlpError::InvalidArgument("NNLS matrix is not of full column rank".into())
    })?;
    Ok(chol.solve(&b))
}

/// Exhaustive NNLS over all `2^n` passive sets. Refuses `n > 12`.
pub fn nnls_oracle(p: &NnlsProblem) -> Result<NnlsSolution> {
    let n = p.n_vars();
    if n > ORACLE_MAX_VARS {
        return Err(SlpError::InvalidArgument(format!(
            "oracle enumeration limited to n <= {ORACLE_MAX_VARS}, got {n}"
        )));
    }

    let mut best_kkt: Option<(f64, DVector<f64>)> = None;
    let mut best_primal: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << n) {
        let cols: Vec<usize> = (0..n).filter(|&l| mask & (1 << l) != 0).collect();
        let mut x = DVector::zeros(n);
        if !cols.is_empty() {
            let sub = p.c.select_columns(cols.iter());
            let qr = sub.qr();
            let rhs = qr.q().tr_mul(&p.d);
            let Some(z) = qr.r().solve_upper_triangular(&rhs) else { continue };
            if z.iter().any(|&v| !(v >= 0.0)) {
                continue;
            }
            for (&l, &v) in cols.iter().zip(z.iter()) {
                x[l] = v;
            }
        }
        let obj = p.objective(&x);
        let g = p.gradient(&x);
        let dual_ok = (0..n).all(|l| mask & (1 << l) != 0 || g[l] >= -p.tol);
        if best_primal.as_ref().is_none_or(|(o, _)| obj < *o) {
            best_primal = Some((obj, x.clone()));
        }
        if dual_ok && best_kkt.as_ref().is_none_or(|(o, _)| obj < *o) {
            best_kkt = Some((obj, x));
        }
    }

    // The all-active pattern is always primal feasible.
    let (objective, delta) = best_kkt.or(best_primal).expect("zero is feasible");
    Ok(NnlsSolution {
        dual: p.gradient(&delta),
        objective,
        delta,
        iterations: 1 << n,
        status: NnlsStatus::Converged,
        trace: Vec::new(),
    })
}
