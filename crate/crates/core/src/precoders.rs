//! Per-slot precoders: ZFBF, the closed-form sub-optimal SLP (CF-SLP) and the
//! optimal SLP (OPT-SLP).
//!
//! Stacking the DPCIR constraints of all users gives
//! `H u = S + A^{-1} delta`, `delta >= 0`, with `S = Sigma Gamma^{1/2} x`.
//! For a fixed `delta` the least-norm transmit vector is
//! `u = u_zf + C delta` where `u_zf = H^+ S` and `C = H^+ A^{-1}`, so the power
//! minimisation reduces to the NNLS problem `min ||u_zf + C delta||^2` over
//! `delta >= 0`. With `Q = C^T C` and `v = C^T u_zf`, its KKT conditions read
//! `psi = Q delta + v >= 0`, `delta >= 0`, `psi_l delta_l = 0`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::constellation::Constellation;
use crate::error::{Result, SlpError};
use crate::nnls::{nnls_solve, NnlsProblem, NnlsStatus};

/// `|v_l|` at or below this is treated as zero (constraint presumed active).
pub const V_ZERO_TOL: f64 = 1e-12;

/// Relative NNLS dual tolerance used by [`opt_slp`], on the `psi` scale.
pub const OPT_DUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "ZFBF")]
    Zfbf,
    #[serde(rename = "CF_SLP")]
    CfSlp,
    #[serde(rename = "OPT_SLP")]
    OptSlp,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Zfbf, Scheme::CfSlp, Scheme::OptSlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Zfbf => "ZFBF",
            Scheme::CfSlp => "CF_SLP",
            Scheme::OptSlp => "OPT_SLP",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = SlpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "ZFBF" | "CIZF" | "ZF" => Ok(Scheme::Zfbf),
            "CF_SLP" | "CF" => Ok(Scheme::CfSlp),
            "OPT_SLP" | "OPT" => Ok(Scheme::OptSlp),
            other => Err(SlpError::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Everything one symbol slot needs, derived from the channel and the users' symbols.
#[derive(Debug, Clone)]
pub struct SlotProblem<'a> {
    pub channel: &'a ChannelRealization,
    pub symbol_idx: Vec<usize>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Diagonal blocks `A_{i_k}`.
    pub a_blocks: Vec<Matrix2<f64>>,
    pub a_inv_blocks: Vec<Matrix2<f64>>,
    /// Stacked constellation points.
    pub x_stack: DVector<f64>,
    /// `Sigma Gamma^{1/2} x`.
    pub scaled_target: DVector<f64>,
    /// `H^+ Sigma Gamma^{1/2} x`.
    pub u_zf: DVector<f64>,
    /// `H^+ A^{-1}`, 2N x 2K.
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub v: DVector<f64>,
}

impl<'a> SlotProblem<'a> {
    pub fn build(
        channel: &'a ChannelRealization,
        constellation: &Constellation,
        symbol_idx: &[usize],
        sigma: &[f64],
        gamma: &[f64],
    ) -> Result<Self> {
        let k = channel.users();
        check_lengths(channel, symbol_idx, sigma, gamma)?;
        if let Some(s) = sigma.iter().chain(gamma).find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(SlpError::InvalidArgument(format!(
                "noise levels and SINR thresholds must be positive, got {s}"
            )));
        }

        let mut a_blocks = Vec::with_capacity(k);
        let mut a_inv_blocks = Vec::with_capacity(k);
        let mut x_stack = DVector::zeros(2 * k);
        for (u, &i) in symbol_idx.iter().enumerate() {
            let a = constellation.dpcir_matrix(i)?;
            let inv = constellation.dpcir_inverse(i)?;
            if (a * inv - Matrix2::identity()).amax() > 1e-9 {
                return Err(SlpError::SingularBlock(i));
            }
            a_blocks.push(a);
            a_inv_blocks.push(inv);
            let x = constellation.points()[i];
            x_stack[2 * u] = x.x;
            x_stack[2 * u + 1] = x.y;
        }
        let scaled_target = stacked_target(constellation, symbol_idx, sigma, gamma);

        let pinv = channel.pinv();
        let u_zf = pinv * &scaled_target;
        let c = pinv_times_a_inv(pinv, &a_inv_blocks);
        let q = c.tr_mul(&c);
        let v = c.tr_mul(&u_zf);

        Ok(Self {
            channel,
            symbol_idx: symbol_idx.to_vec(),
            sigma: sigma.to_vec(),
            gamma: gamma.to_vec(),
            a_blocks,
            a_inv_blocks,
            x_stack,
            scaled_target,
            u_zf,
            c,
            q,
            v,
        })
    }

    pub fn users(&self) -> usize {
        self.symbol_idx.len()
    }

    /// Dense block-diagonal `A`.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        block_diag(&self.a_blocks)
    }

    pub fn a_inv_matrix(&self) -> DMatrix<f64> {
        block_diag(&self.a_inv_blocks)
    }

    /// `A^{-1} delta`, blockwise.
    pub fn a_inv_times(&self, delta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(delta.len());
        for (u, inv) in self.a_inv_blocks.iter().enumerate() {
            let r = inv * Vector2::new(delta[2 * u], delta[2 * u + 1]);
            out[2 * u] = r.x;
            out[2 * u + 1] = r.y;
        }
        out
    }

    /// Max-norm residual of `H u = S + A^{-1} delta`.
    pub fn equality_residual(&self, u: &DVector<f64>, delta: &DVector<f64>) -> f64 {
        (self.channel.lifted() * u - &self.scaled_target - self.a_inv_times(delta)).amax()
    }

    /// Largest violation of the stacked CI constraint `A (H u - S) >= 0` (zero if met).
    pub fn ci_violation(&self, u: &DVector<f64>) -> f64 {
        let r = self.channel.lifted() * u - &self.scaled_target;
        let mut worst: f64 = 0.0;
        for (k, a) in self.a_blocks.iter().enumerate() {
            let s = a * Vector2::new(r[2 * k], r[2 * k + 1]);
            worst = worst.max(-s.x).max(-s.y);
        }
        worst
    }
}

/// `H^+ A^{-1}` with `A^{-1}` block diagonal.
fn pinv_times_a_inv(pinv: &DMatrix<f64>, a_inv_blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(pinv.nrows(), 2 * a_inv_blocks.len());
    for (u, inv) in a_inv_blocks.iter().enumerate() {
        let cols = pinv.columns(2 * u, 2) * inv;
        c.columns_mut(2 * u, 2).copy_from(&cols);
    }
    c
}

fn dpcir_inverses(constellation: &Constellation, symbol_idx: &[usize]) -> Result<Vec<Matrix2<f64>>> {
    symbol_idx.iter().map(|&i| constellation.dpcir_inverse(i)).collect()
}

fn check_lengths(channel: &ChannelRealization, symbol_idx: &[usize], sigma: &[f64], gamma: &[f64]) -> Result<()> {
    let k = channel.users();
    if symbol_idx.len() != k || sigma.len() != k || gamma.len() != k {
        return Err(SlpError::InvalidArgument(format!(
            "expected {k} symbols, noise levels and thresholds, got {}, {}, {}",
            symbol_idx.len(),
            sigma.len(),
            gamma.len()
        )));
    }
    Ok(())
}

fn block_diag(blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
    let n = 2 * blocks.len();
    let mut m = DMatrix::zeros(n, n);
    for (k, b) in blocks.iter().enumerate() {
        m.view_mut((2 * k, 2 * k), (2, 2)).copy_from(b);
    }
    m
}

/// KKT residuals of the reduced problem at a given `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual {
    /// `max(0, -min_l psi_l)`.
    pub dual_feasibility: f64,
    /// `max_l |psi_l delta_l|`.
    pub complementarity: f64,
    /// `max(0, -min_l delta_l)`.
    pub primal: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.dual_feasibility.max(self.complementarity).max(self.primal)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// `psi = Q delta + v`; the Lagrange multipliers are `-2 psi`.
pub fn verify_kkt(slot: &SlotProblem<'_>, delta: &DVector<f64>) -> KktResidual {
    let psi = &slot.q * delta + &slot.v;
    KktResidual {
        dual_feasibility: (-psi.min()).max(0.0),
        complementarity: psi.iter().zip(delta.iter()).map(|(p, d)| (p * d).abs()).fold(0.0, f64::max),
        primal: (-delta.min()).max(0.0),
    }
}

#[derive(Debug, Clone)]
pub struct PrecodeResult {
    pub scheme: Scheme,
    /// Real-lifted transmit vector `[Re u; Im u]`.
    pub u: DVector<f64>,
    pub delta: DVector<f64>,
    pub power: f64,
    /// Max-norm residual of `H u = S + A^{-1} delta`.
    pub ci_residual: f64,
    pub kkt: KktResidual,
    pub elapsed: Duration,
    /// Set when the QP solver hit its iteration cap.
    pub flagged: bool,
}

fn finish(
    slot: &SlotProblem<'_>,
    scheme: Scheme,
    u: DVector<f64>,
    delta: DVector<f64>,
    elapsed: Duration,
    flagged: bool,
) -> PrecodeResult {
    PrecodeResult {
        scheme,
        power: u.norm_squared(),
        ci_residual: slot.equality_residual(&u, &delta),
        kkt: verify_kkt(slot, &delta),
        u,
        delta,
        elapsed,
        flagged,
    }
}

/// `Sigma Gamma^{1/2} x` for the given symbol indices (indices must be valid).
pub fn stacked_target(constellation: &Constellation, symbol_idx: &[usize], sigma: &[f64], gamma: &[f64]) -> DVector<f64> {
    let mut t = DVector::zeros(2 * symbol_idx.len());
    for (u, &i) in symbol_idx.iter().enumerate() {
        let x = constellation.points()[i];
        let scale = sigma[u] * gamma[u].sqrt();
        t[2 * u] = scale * x.x;
        t[2 * u + 1] = scale * x.y;
    }
    t
}

/// Zero-forcing transmit vector `H^+ S`: the pseudo-inverse is channel-level
/// and precomputed, so only the matrix-vector product runs per slot.
pub fn zf_transmit(channel: &ChannelRealization, scaled_target: &DVector<f64>) -> DVector<f64> {
    channel.pinv() * scaled_target
}

pub fn zfbf(slot: &SlotProblem<'_>) -> PrecodeResult {
    let start = Instant::now();
    let u = zf_transmit(slot.channel, &slot.scaled_target);
    let elapsed = start.elapsed();
    let delta = DVector::zeros(2 * slot.users());
    finish(slot, Scheme::Zfbf, u, delta, elapsed, false)
}

/// Presumed inactive set: indices with `v_l < 0`.
pub fn predicted_inactive(v: &DVector<f64>) -> Vec<bool> {
    v.iter().map(|&x| x < -V_ZERO_TOL).collect()
}

/// Inactive set of an optimal `delta`: entries above `1e-7 (1 + ||v||)`.
pub fn optimal_inactive(delta: &DVector<f64>, v: &DVector<f64>) -> Vec<bool> {
    let tol = 1e-7 * (1.0 + v.norm());
    delta.iter().map(|&d| d > tol).collect()
}

/// Fraction of indices on which two inactive-set indicators agree.
pub fn active_set_accuracy(predicted: &[bool], optimal: &[bool]) -> f64 {
    assert_eq!(predicted.len(), optimal.len(), "active-set length mismatch");
    if predicted.is_empty() {
        return 1.0;
    }
    let hits = predicted.iter().zip(optimal).filter(|(a, b)| a == b).count();
    hits as f64 / predicted.len() as f64
}

/// The `delta` of CF-SLP: solve `Q' delta' = -v'` on the presumed inactive
/// set and clip at zero.
pub fn cf_delta(q: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let idx: Vec<usize> = (0..n).filter(|&l| v[l] < -V_ZERO_TOL).collect();
    let mut delta = DVector::zeros(n);
    if idx.is_empty() {
        return delta;
    }
    let l = idx.len();
    let qp = DMatrix::from_fn(l, l, |r, c| q[(idx[r], idx[c])]);
    let rhs = DVector::from_fn(l, |r, _| -v[idx[r]]);
    let z = solve_spd(qp, &rhs);
    for (&i, &zi) in idx.iter().zip(z.iter()) {
        delta[i] = zi.max(0.0);
    }
    delta
}

// Principal submatrices of a positive definite matrix are positive definite;
// LU only covers round-off breakdowns of the Cholesky factorisation.
fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    match m.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => m.lu().solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
    }
}

/// CF-SLP directly from the channel and the symbols. `Q` is formed as
/// `A^{-T} (H H^T)^{-1} A^{-1}` from the per-channel Gram inverse and `v` as
/// `A^{-T} (H H^T)^{-1} S`, then punctured and solved as in [`cf_delta`].
/// Same result as [`cf_slp`] on the corresponding [`SlotProblem`].
pub fn cf_precode(
    channel: &ChannelRealization,
    constellation: &Constellation,
    symbol_idx: &[usize],
    sigma: &[f64],
    gamma: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_lengths(channel, symbol_idx, sigma, gamma)?;
    let inv = dpcir_inverses(constellation, symbol_idx)?;
    let k = inv.len();
    let target = stacked_target(constellation, symbol_idx, sigma, gamma);
    let g = channel.gram_inv();

    let w = g * &target;
    let mut v = DVector::zeros(2 * k);
    let mut q = DMatrix::zeros(2 * k, 2 * k);
    for (r, ar) in inv.iter().enumerate() {
        let x = ar.tr_mul(&Vector2::new(w[2 * r], w[2 * r + 1]));
        v[2 * r] = x.x;
        v[2 * r + 1] = x.y;
        for (c, ac) in inv.iter().enumerate().skip(r) {
            let gb: Matrix2<f64> = g.fixed_view::<2, 2>(2 * r, 2 * c).into_owned();
            let blk = ar.tr_mul(&(gb * ac));
            q.fixed_view_mut::<2, 2>(2 * r, 2 * c).copy_from(&blk);
            if c != r {
                q.fixed_view_mut::<2, 2>(2 * c, 2 * r).copy_from(&blk.transpose());
            }
        }
    }
    let delta = cf_delta(&q, &v);

    // u = H^+ (S + A^{-1} delta)
    let mut r = target;
    for (u, a) in inv.iter().enumerate() {
        let d = a * Vector2::new(delta[2 * u], delta[2 * u + 1]);
        r[2 * u] += d.x;
        r[2 * u + 1] += d.y;
    }
    Ok((channel.pinv() * r, delta))
}

/// Inputs of the OPT-SLP solve for one slot: `C = H^+ A^{-1}`, the ZF
/// solution and `|v|` (which sets the solver tolerance).
#[derive(Debug, Clone)]
pub struct OptInputs {
    pub c: DMatrix<f64>,
    pub u_zf: DVector<f64>,
    pub v_norm: f64,
}

impl OptInputs {
    pub fn build(
        channel: &ChannelRealization,
        constellation: &Constellation,
        symbol_idx: &[usize],
        sigma: &[f64],
        gamma: &[f64],
    ) -> Result<Self> {
        check_lengths(channel, symbol_idx, sigma, gamma)?;
        let inv = dpcir_inverses(constellation, symbol_idx)?;
        let target = stacked_target(constellation, symbol_idx, sigma, gamma);
        let pinv = channel.pinv();
        let u_zf = pinv * &target;
        let c = pinv_times_a_inv(pinv, &inv);
        let v_norm = c.tr_mul(&u_zf).norm();
        Ok(OptInputs { c, u_zf, v_norm })
    }

    /// Runs the NNLS solver and maps the result back to a transmit vector.
    pub fn solve(&self) -> Result<(DVector<f64>, DVector<f64>, NnlsStatus)> {
        let p = nnls_for(self.c.clone(), &self.u_zf, self.v_norm)?;
        let sol = nnls_solve(&p)?;
        let u = &self.u_zf + p.c() * &sol.delta;
        Ok((u, sol.delta, sol.status))
    }
}

/// OPT-SLP directly from the channel and the symbols. Same result as [`opt_slp`].
pub fn opt_precode(
    channel: &ChannelRealization,
    constellation: &Constellation,
    symbol_idx: &[usize],
    sigma: &[f64],
    gamma: &[f64],
) -> Result<(DVector<f64>, DVector<f64>, NnlsStatus)> {
    OptInputs::build(channel, constellation, symbol_idx, sigma, gamma)?.solve()
}

fn nnls_for(c: DMatrix<f64>, u_zf: &DVector<f64>, v_norm: f64) -> Result<NnlsProblem> {
    let tol = 2.0 * OPT_DUAL_TOL * (1.0 + v_norm);
    Ok(NnlsProblem::new(c, -u_zf)?.with_tol(tol))
}


/// CF-SLP transmit vector and slack, without diagnostics.
pub fn cf_transmit(slot: &SlotProblem<'_>) -> (DVector<f64>, DVector<f64>) {
    let delta = cf_delta(&slot.q, &slot.v);
    let u = if delta.iter().all(|&d| d == 0.0) {
        slot.u_zf.clone()
    } else {
        &slot.u_zf + &slot.c * &delta
    };
    (u, delta)
}

pub fn cf_slp(slot: &SlotProblem<'_>) -> PrecodeResult {
    let start = Instant::now();
    let (u, delta) = cf_transmit(slot);
    let elapsed = start.elapsed();
    finish(slot, Scheme::CfSlp, u, delta, elapsed, false)
}

/// The NNLS instance whose objective is the slot's transmit power.
pub fn slot_nnls(slot: &SlotProblem<'_>) -> Result<NnlsProblem> {
    nnls_for(slot.c.clone(), &slot.u_zf, slot.v.norm())
}

/// OPT-SLP transmit vector, slack and solver status, without diagnostics.
pub fn opt_transmit(slot: &SlotProblem<'_>) -> Result<(DVector<f64>, DVector<f64>, NnlsStatus)> {
    let inputs = OptInputs { c: slot.c.clone(), u_zf: slot.u_zf.clone(), v_norm: slot.v.norm() };
    inputs.solve()
}

pub fn opt_slp(slot: &SlotProblem<'_>) -> Result<PrecodeResult> {
    let start = Instant::now();
    let (u, delta, status) = opt_transmit(slot)?;
    let elapsed = start.elapsed();
    Ok(finish(slot, Scheme::OptSlp, u, delta, elapsed, status == NnlsStatus::IterationCap))
}

pub fn precode(slot: &SlotProblem<'_>, scheme: Scheme) -> Result<PrecodeResult> {
    match scheme {
        Scheme::Zfbf => Ok(zfbf(slot)),
        Scheme::CfSlp => Ok(cf_slp(slot)),
        Scheme::OptSlp => opt_slp(slot),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;
    use crate::nnls::nnls_oracle;
    use approx::assert_abs_diff_eq;
    use nalgebra::Complex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn identity_channel() -> ChannelRealization {
        ChannelRealization::from_complex(DMatrix::from_element(1, 1, Complex::new(1.0, 0.0))).unwrap()
    }

    #[test]
    fn single_user_identity_slot() {
        let ch = identity_channel();
        let c = Constellation::psk(4).unwrap();
        let slot = SlotProblem::build(&ch, &c, &[0], &[1.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(slot.q, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(slot.v, DVector::from_element(2, 0.5), epsilon = 1e-15);

        let zf = zfbf(&slot);
        assert_abs_diff_eq!(zf.u, DVector::from_column_slice(&[c.points()[0].x, c.points()[0].y]), epsilon = 1e-15);
        assert_abs_diff_eq!(zf.power, 1.0, epsilon = 1e-14);
        // v > 0: CF-SLP and OPT-SLP collapse to ZFBF.
        assert_eq!(cf_slp(&slot).u, zf.u);
        assert_eq!(opt_slp(&slot).unwrap().delta, DVector::zeros(2));
    }

    #[test]
    fn bad_slot_inputs() {
        let ch = identity_channel();
        let c = Constellation::psk(4).unwrap();
        assert!(SlotProblem::build(&ch, &c, &[0, 1], &[1.0], &[1.0]).is_err());
        assert!(SlotProblem::build(&ch, &c, &[4], &[1.0], &[1.0]).is_err());
        assert!(SlotProblem::build(&ch, &c, &[0], &[0.0], &[1.0]).is_err());
        assert!(SlotProblem::build(&ch, &c, &[0], &[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn q_is_gamma_free_and_v_scales_with_sqrt_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = Constellation::psk(8).unwrap();
        let ch = sample_channel(4, 4, &mut rng).unwrap();
        let sym: Vec<usize> = (0..4).map(|_| rng.random_range(0..8)).collect();
        let s1 = SlotProblem::build(&ch, &c, &sym, &[1.0; 4], &[2.0; 4]).unwrap();
        let s2 = SlotProblem::build(&ch, &c, &sym, &[1.0; 4], &[8.0; 4]).unwrap();
        assert_eq!(s1.q, s2.q);
        assert_abs_diff_eq!(s2.v, &s1.v * 2.0, epsilon = 1e-12 * (1.0 + s1.v.norm()));
        assert!((&s1.q - s1.q.transpose()).amax() <= 1e-12 * s1.q.amax());
        assert!(s1.q.clone().cholesky().is_some());
        // Same route as the definition Q = A^{-T} H^{+T} H^{+} A^{-1}.
        let ai = s1.a_inv_matrix();
        let p = ch.pinv();
        let q_def = ai.transpose() * p.transpose() * p * &ai;
        assert_abs_diff_eq!(s1.q, q_def, epsilon = 1e-9 * (1.0 + q_def.amax()));
        let v_def = ai.transpose() * p.transpose() * p * &s1.scaled_target;
        assert_abs_diff_eq!(s1.v, v_def, epsilon = 1e-9 * (1.0 + v_def.amax()));
    }

    #[test]
    fn zf_power_linear_in_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let c = Constellation::psk(4).unwrap();
        let ch = sample_channel(3, 3, &mut rng).unwrap();
        let s1 = SlotProblem::build(&ch, &c, &[0, 1, 2], &[1.0; 3], &[1.5; 3]).unwrap();
        let s2 = SlotProblem::build(&ch, &c, &[0, 1, 2], &[1.0; 3], &[3.0; 3]).unwrap();
        let (p1, p2) = (zfbf(&s1).power, zfbf(&s2).power);
        assert_abs_diff_eq!(p2 / p1, 2.0, epsilon = 1e-12);
        assert!(zfbf(&s1).ci_residual <= 1e-8);
    }

    #[test]
    fn kkt_of_zero_delta_reports_negative_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c = Constellation::psk(4).unwrap();
        loop {
            let ch = sample_channel(4, 4, &mut rng).unwrap();
            let sym: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
            let slot = SlotProblem::build(&ch, &c, &sym, &[1.0; 4], &[2.0; 4]).unwrap();
            if slot.v.min() < 0.0 {
                let r = verify_kkt(&slot, &DVector::zeros(8));
                assert_eq!(r.dual_feasibility, -slot.v.min());
                assert_eq!(r.primal, 0.0);
                assert_eq!(r.complementarity, 0.0);
                break;
            }
        }
    }

    #[test]
    fn accuracy_metric() {
        let a = [true, false, true, false];
        assert_eq!(active_set_accuracy(&a, &a), 1.0);
        let b: Vec<bool> = a.iter().map(|x| !x).collect();
        assert_eq!(active_set_accuracy(&a, &b), 0.0);
        assert_eq!(active_set_accuracy(&a, &[true, true, true, false]), 0.75);
    }

    #[test]
    fn unconstrained_stationary_point_is_minus_a_s() {
        // Q^{-1} v = A S, so psi = 0 only at delta = -A S, i.e. u = 0. For PSK every
        // entry of A S is (1 - cos(2 pi / M)) sigma sqrt(gamma) > 0, so that point is
        // never feasible. Also v^T A S = S^T (H H^T)^{-1} S > 0, so v always has a
        // positive entry.
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for m in [4, 8] {
            let c = Constellation::psk(m).unwrap();
            for _ in 0..20_000 {
                let k = rng.random_range(1..=3);
                let ch = sample_channel(k, k, &mut rng).unwrap();
                let sym: Vec<usize> = (0..k).map(|_| rng.random_range(0..m)).collect();
                let g = 10f64.powf(rng.random_range(0.0..1.2));
                let slot = SlotProblem::build(&ch, &c, &sym, &vec![1.0; k], &vec![g; k]).unwrap();
                let a_s = slot.a_matrix() * &slot.scaled_target;
                let expect = (1.0 - (2.0 * PI / m as f64).cos()) * g.sqrt();
                assert!(a_s.iter().all(|&x| (x - expect).abs() <= 1e-12 * (1.0 + expect)));
                let z = slot.q.clone().cholesky().unwrap().solve(&slot.v);
                assert!((&z - &a_s).amax() <= 1e-6 * (1.0 + a_s.amax()), "{z} vs {a_s}");
                assert!(slot.v.dot(&a_s) > 0.0);
                assert!(slot.v.max() > 0.0);
            }
        }
    }

    #[test]
    fn opt_matches_oracle_on_small_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let c = Constellation::psk(4).unwrap();
        for _ in 0..200 {
            let ch = sample_channel(2, 2, &mut rng).unwrap();
            let sym: Vec<usize> = (0..2).map(|_| rng.random_range(0..4)).collect();
            let slot = SlotProblem::build(&ch, &c, &sym, &[1.0; 2], &[2.0; 2]).unwrap();
            let opt = opt_slp(&slot).unwrap();
            let oracle = nnls_oracle(&slot_nnls(&slot).unwrap()).unwrap();
            assert!((&opt.delta - &oracle.delta).amax() <= 1e-8);
        }
    }

    #[test]
    fn schemes_on_random_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for m in [4, 8] {
            let c = Constellation::psk(m).unwrap();
            for _ in 0..500 {
                let k = rng.random_range(1..=6);
                let ch = sample_channel(k, k, &mut rng).unwrap();
                let sym: Vec<usize> = (0..k).map(|_| rng.random_range(0..m)).collect();
                let g = 10f64.powf(rng.random_range(0.0..1.2));
                let slot = SlotProblem::build(&ch, &c, &sym, &vec![1.0; k], &vec![g; k]).unwrap();
                let zf = zfbf(&slot);
                let cf = cf_slp(&slot);
                let opt = opt_slp(&slot).unwrap();
                let tol = 1e-8 * (1.0 + slot.v.norm());
                assert!(opt.power <= cf.power + 1e-8 * (1.0 + cf.power));
                assert!(opt.power <= zf.power + 1e-8 * (1.0 + zf.power));
                assert!(opt.kkt.within(tol), "{:?}", opt.kkt);
                for r in [&zf, &cf, &opt] {
                    assert!(r.delta.iter().all(|&d| d >= 0.0));
                    assert!(slot.ci_violation(&r.u) <= 1e-8 * (1.0 + slot.scaled_target.amax()));
                    let diff = slot.channel.lifted() * (&r.u - &slot.u_zf) - slot.a_inv_times(&r.delta);
                    assert!(diff.amax() <= 1e-8 * (1.0 + r.delta.amax()));
                }
                // Noise-free CF-SLP receive points detect to the intended symbols.
                for (u, &i) in sym.iter().enumerate() {
                    let y = ch.receive(u, &cf.u);
                    assert_eq!(c.ml_detect(&y), i);
                }
            }
        }
    }

    #[test]
    fn direct_paths_match_slot_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for m in [4, 8] {
            let c = Constellation::psk(m).unwrap();
            for _ in 0..300 {
                let k = rng.random_range(1..=8);
                let ch = sample_channel(k, k, &mut rng).unwrap();
                let sym: Vec<usize> = (0..k).map(|_| rng.random_range(0..m)).collect();
                let sigma: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
                let gamma = vec![rng.random_range(1.0..10.0); k];
                let slot = SlotProblem::build(&ch, &c, &sym, &sigma, &gamma).unwrap();

                let cf = cf_slp(&slot);
                let (u, d) = cf_precode(&ch, &c, &sym, &sigma, &gamma).unwrap();
                let scale = 1e-8 * (1.0 + cf.u.amax() + cf.delta.amax());
                assert!((&u - &cf.u).amax() <= scale && (&d - &cf.delta).amax() <= scale);
                assert_eq!(
                    d.iter().map(|&x| x > 0.0).collect::<Vec<_>>(),
                    cf.delta.iter().map(|&x| x > 0.0).collect::<Vec<_>>()
                );

                let opt = opt_slp(&slot).unwrap();
                let (u, d, status) = opt_precode(&ch, &c, &sym, &sigma, &gamma).unwrap();
                assert_eq!(status, NnlsStatus::Converged);
                assert_eq!(u, opt.u);
                assert_eq!(d, opt.delta);
            }
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("foo".parse::<Scheme>().is_err());
    }
}
