//! Complex MU-MISO channels and their equivalent real-valued form.
//!
//! A complex row `h_k` (1 x N) becomes the 2 x 2N block
//! `[[Re h_k, -Im h_k], [Im h_k, Re h_k]]`, acting on the stacked transmit
//! vector `[Re u; Im u]`. Stacking the K blocks gives the 2K x 2N lifted channel.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SlpError};

/// Gram eigenvalues below this count as rank deficient.
pub const RANK_EIG_THRESHOLD: f64 = 1e-10;

const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone)]
pub struct ChannelRealization {
    users: usize,
    antennas: usize,
    h: DMatrix<Complex<f64>>,
    lifted: DMatrix<f64>,
    pinv: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
}

impl ChannelRealization {
    /// Wraps a given complex K x N channel. Fails if the lifted channel is not
    /// full row rank (which also rules out K > N).
    pub fn from_complex(h: DMatrix<Complex<f64>>) -> Result<Self> {
        let (users, antennas) = h.shape();
        if users == 0 || antennas < users {
            return Err(SlpError::InvalidArgument(format!(
                "need 1 <= K <= N, got K={users}, N={antennas}"
            )));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SlpError::InvalidArgument("non-finite channel coefficient".into()));
        }
        let lifted = lift_channel(&h);
        let pinv = pseudo_inverse(&lifted)?;
        let gram_inv = pinv.tr_mul(&pinv);
        Ok(Self { users, antennas, h, lifted, pinv, gram_inv })
    }

    /// Number of users K.
    pub fn users(&self) -> usize {
        self.users
    }

    /// Number of transmit antennas N.
    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn complex(&self) -> &DMatrix<Complex<f64>> {
        &self.h
    }

    /// 2K x 2N real channel.
    pub fn lifted(&self) -> &DMatrix<f64> {
        &self.lifted
    }

    /// 2N x 2K Moore-Penrose inverse of the lifted channel.
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// `(H H^T)^{-1} = H^{+T} H^{+}`, 2K x 2K.
    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// Noise-free real receive point `H_k u` of user `k`.
    pub fn receive(&self, k: usize, u: &DVector<f64>) -> nalgebra::Vector2<f64> {
        let r = self.lifted.rows(2 * k, 2) * u;
        nalgebra::Vector2::new(r[0], r[1])
    }
}

/// Draws an i.i.d. CN(0, 1) K x N channel, resampling on numerical rank deficiency.
pub fn sample_channel<R: Rng + ?Sized>(users: usize, antennas: usize, rng: &mut R) -> Result<ChannelRealization> {
    if users == 0 || antennas < users {
        return Err(SlpError::InvalidArgument(format!(
            "need 1 <= K <= N, got K={users}, N={antennas}"
        )));
    }
    let std = std::f64::consts::FRAC_1_SQRT_2;
    let mut last = None;
    for _ in 0..MAX_RESAMPLES {
        let h = DMatrix::from_fn(users, antennas, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(std * re, std * im)
        });
        match ChannelRealization::from_complex(h) {
            Ok(ch) => return Ok(ch),
            Err(e @ SlpError::RankDeficient { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(SlpError::RankDeficient { min_eig: 0.0 }))
}

/// Real 2 x 2N lifting of one complex row.
pub fn lift_real(h_k: &[Complex<f64>]) -> DMatrix<f64> {
    let n = h_k.len();
    let mut out = DMatrix::zeros(2, 2 * n);
    for (j, z) in h_k.iter().enumerate() {
        out[(0, j)] = z.re;
        out[(0, n + j)] = -z.im;
        out[(1, j)] = z.im;
        out[(1, n + j)] = z.re;
    }
    out
}

/// Stacks `lift_real` over the rows of `h`.
pub fn lift_channel(h: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let (k, n) = h.shape();
    let mut out = DMatrix::zeros(2 * k, 2 * n);
    for r in 0..k {
        let row: Vec<Complex<f64>> = h.row(r).iter().copied().collect();
        out.view_mut((2 * r, 0), (2, 2 * n)).copy_from(&lift_real(&row));
    }
    out
}

/// `[Re u; Im u]`.
pub fn lift_vector(u: &DVector<Complex<f64>>) -> DVector<f64> {
    let n = u.len();
    DVector::from_fn(2 * n, |i, _| if i < n { u[i].re } else { u[i - n].im })
}

/// Inverse of [`lift_vector`]; `u` must have even length.
pub fn unlift_vector(u: &DVector<f64>) -> DVector<Complex<f64>> {
    let n = u.len() / 2;
    DVector::from_fn(n, |i, _| Complex::new(u[i], u[n + i]))
}

/// `H^T (H H^T)^{-1}` for a full-row-rank `H`, via Cholesky of the Gram matrix.
pub fn pseudo_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = h * h.transpose();
    let min_eig = gram.symmetric_eigenvalues().min();
    if !(min_eig >= RANK_EIG_THRESHOLD) {
        return Err(SlpError::RankDeficient { min_eig });
    }
    let chol = gram.cholesky().ok_or(SlpError::RankDeficient { min_eig })?;
    // (H H^T)^{-1} H, transposed.
    Ok(chol.solve(h).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn lift_scalar() {
        let m = lift_real(&[c(1.0, 2.0)]);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 2.0, 1.0]));
    }

    #[test]
    fn lift_pair() {
        let m = lift_real(&[c(0.0, 1.0), c(0.0, 0.0)]);
        let want = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m, want);
    }

    #[test]
    fn lift_real_row_has_zero_imag_blocks() {
        let m = lift_real(&[c(0.3, 0.0), c(-1.2, 0.0), c(2.0, 0.0)]);
        assert_eq!(m.view((0, 3), (1, 3)).iter().filter(|v| **v != 0.0).count(), 0);
        assert_eq!(m.view((1, 0), (1, 3)).iter().filter(|v| **v != 0.0).count(), 0);
        assert_eq!(m.view((0, 0), (1, 3)), m.view((1, 3), (1, 3)));
    }

    #[test]
    fn identity_channel() {
        let ch = ChannelRealization::from_complex(DMatrix::from_element(1, 1, c(1.0, 0.0))).unwrap();
        assert_eq!(ch.lifted(), &DMatrix::<f64>::identity(2, 2));
        assert_abs_diff_eq!(ch.pinv(), &DMatrix::<f64>::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn pinv_identity_and_square() {
        let i6 = DMatrix::<f64>::identity(6, 6);
        assert_abs_diff_eq!(pseudo_inverse(&i6).unwrap(), i6, epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = pseudo_inverse(&h).unwrap();
        assert_abs_diff_eq!(&p * &h, i6, epsilon = 1e-8);
    }

    #[test]
    fn pinv_wide_right_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = DMatrix::from_fn(4, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = pseudo_inverse(&h).unwrap();
        assert_abs_diff_eq!(&h * &p, DMatrix::<f64>::identity(4, 4), epsilon = 1e-8);
    }

    #[test]
    fn rank_deficient_rejected() {
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(pseudo_inverse(&h), Err(SlpError::RankDeficient { .. })));
    }

    #[test]
    fn more_users_than_antennas_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_channel(3, 2, &mut rng), Err(SlpError::InvalidArgument(_))));
        assert!(matches!(sample_channel(0, 2, &mut rng), Err(SlpError::InvalidArgument(_))));
    }

    #[test]
    fn sampled_channel_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (k, n) in [(1, 1), (2, 2), (4, 4), (3, 5), (8, 8)] {
            let ch = sample_channel(k, n, &mut rng).unwrap();
            assert_abs_diff_eq!(ch.lifted() * ch.pinv(), DMatrix::<f64>::identity(2 * k, 2 * k), epsilon = 1e-8);
            let h = ch.lifted();
            for r in 0..k {
                for j in 0..n {
                    assert_eq!(h[(2 * r, j)], h[(2 * r + 1, n + j)]);
                    assert_eq!(h[(2 * r, n + j)], -h[(2 * r + 1, j)]);
                }
            }
        }
    }

    #[test]
    fn entry_variance_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut sum = c(0.0, 0.0);
        let mut sq = 0.0;
        let mut count = 0usize;
        for _ in 0..10_000 {
            let ch = sample_channel(4, 4, &mut rng).unwrap();
            for z in ch.complex().iter() {
                sum += z;
                sq += z.norm_sqr();
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sq / count as f64 - mean.norm_sqr();
        assert!((0.95..=1.05).contains(&var), "variance {var}");
        assert!(mean.norm() < 0.02);
    }

    #[test]
    fn receive_matches_complex_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = sample_channel(3, 4, &mut rng).unwrap();
        let u = DVector::from_fn(4, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let ut = lift_vector(&u);
        for k in 0..3 {
            let z: Complex<f64> = (ch.complex().row(k) * &u)[(0, 0)];
            let r = ch.receive(k, &ut);
            assert_abs_diff_eq!(r.x, z.re, epsilon = 1e-12);
            assert_abs_diff_eq!(r.y, z.im, epsilon = 1e-12);
        }
        assert_eq!(unlift_vector(&ut), u);
    }
}
