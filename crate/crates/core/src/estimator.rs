//! MMSE estimation of the effective channel `g_k = (W^1)ᴴ Gᴴ h_k`.
//!
//! With `B = G W^1`, `q = β/(1+κ)` and `s = σ²/(τρ)`:
//!
//! * `Ψ = Bᴴ R B`, `Q = (qΨ + s I)⁻¹`
//! * `ĝ = μ + qΨQ (y − μ)` with `μ = √(qκ) Bᴴ h̄`
//! * error covariance `qΨ − q²ΨQΨ`, hence a normalized MSE of
//!   `1 − q tr(ΨQΨ) / tr(Ψ)` ([`NmseMode::Consistent`]).
//!
//! [`NmseMode::PaperLiteral`] evaluates `1 − S/D` with the additional LoS term
//! `κN tr(BᴴB)` in `S`. It is kept for comparison; only the consistent form
//! matches the Monte-Carlo error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit_pilots, PilotBook, UserChannel};
use crate::error::{Result, SimError};
use crate::geometry::{CorrelationModel, SimStack};
use crate::rng::{stream, Role};
use crate::scalar::{lit, real, to_f64, trace_re, CMatrix, CVector, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmseMode {
    PaperLiteral,
    #[default]
    Consistent,
}

/// Everything the estimator needs for one user on one stack configuration.
#[derive(Debug, Clone)]
pub struct EstimationArtifacts<T: Real> {
    /// `√(qκ) Bᴴ h̄`.
    pub effective_mean: CVector<T>,
    /// `Ψ = Bᴴ R B`.
    pub psi: CMatrix<T>,
    /// `Q = (qΨ + sI)⁻¹`.
    pub qmat: CMatrix<T>,
    /// Estimator gain `qΨQ`.
    pub gain: CMatrix<T>,
    /// `BᴴB`, entering the LoS terms of the printed covariance and NMSE.
    pub los_gram: CMatrix<T>,
    /// `Bᴴ h̄ h̄ᴴ B`, the exact LoS outer product (reported, not used).
    pub los_outer: CMatrix<T>,
    pub q: T,
    pub kappa: T,
    pub noise_ratio: T,
    pub elements: usize,
    pub estimate: Option<CVector<T>>,
    /// `qκN BᴴB + q²ΨQΨ`.
    pub est_cov: CMatrix<T>,
    pub nmse_paper: T,
    pub nmse_consistent: T,
}

/// `g = (W^1)ᴴ Gᴴ h`.
pub fn effective_channel<T: Real>(stack: &SimStack<T>, h: &CVector<T>) -> Result<CVector<T>> {
    let b = stack.effective_map();
    if h.len() != b.nrows() {
        return Err(SimError::dims("channel length", b.nrows(), h.len()));
    }
    Ok(b.ad_mul(h))
}

pub(crate) fn hermitize<T: Real>(m: CMatrix<T>) -> CMatrix<T> {
    (&m + m.adjoint()) * real(lit::<T>(0.5))
}

/// `(qΨ + sI)⁻¹` through a Cholesky factorization.
pub(crate) fn regularized_inverse<T: Real>(psi: &CMatrix<T>, q: T, s: T) -> Result<CMatrix<T>> {
    let n = psi.nrows();
    let m = psi * real(q) + CMatrix::identity(n, n) * real(s);
    let chol = hermitize(m)
        .cholesky()
        .ok_or_else(|| SimError::Numerical("qΨ + (σ²/τρ)I is not positive definite".into()))?;
    Ok(hermitize(chol.inverse()))
}

/// `Ψ = Bᴴ R B` for the end-to-end map `B`.
pub(crate) fn psi_of<T: Real>(b: &CMatrix<T>, r: &CMatrix<T>) -> CMatrix<T> {
    hermitize(b.ad_mul(&(r * b)))
}

/// Builds `Ψ`, `Q`, the prior mean, both covariances and both NMSE values.
pub fn build_artifacts<T: Real>(
    stack: &SimStack<T>,
    user: &UserChannel<T>,
    book: &PilotBook<T>,
    r: &CorrelationModel<T>,
) -> Result<EstimationArtifacts<T>> {
    let b = stack.effective_map();
    if r.dim() != b.nrows() {
        return Err(SimError::dims("correlation size", b.nrows(), r.dim()));
    }
    if user.los.len() != b.nrows() {
        return Err(SimError::dims("LoS vector length", b.nrows(), user.los.len()));
    }
    let s = book.noise_ratio();
    if !(s > T::zero()) {
        return Err(SimError::Config("estimation needs σ² > 0 and τρ > 0".into()));
    }
    let q = user.q;
    let psi = psi_of(b, r.matrix());
    let qmat = regularized_inverse(&psi, q, s)?;
    let gain = &psi * &qmat * real(q);
    let los_gram = hermitize(b.ad_mul(b));
    let bh_los = b.ad_mul(&user.los);
    let los_outer = &bh_los * bh_los.adjoint();
    let effective_mean = &bh_los * real((q * user.kappa).sqrt());
    let n = b.nrows();
    let est_cov = hermitize(
        &los_gram * real(q * user.kappa * lit::<T>(n as f64)) + &psi * &qmat * &psi * real(q * q),
    );

    let mut art = EstimationArtifacts {
        effective_mean,
        psi,
        qmat,
        gain,
        los_gram,
        los_outer,
        q,
        kappa: user.kappa,
        noise_ratio: s,
        elements: n,
        estimate: None,
        est_cov,
        nmse_paper: T::zero(),
        nmse_consistent: T::zero(),
    };
    art.nmse_paper = nmse_closed_form(&art, NmseMode::PaperLiteral)?;
    art.nmse_consistent = nmse_closed_form(&art, NmseMode::Consistent)?;
    Ok(art)
}

/// `ĝ = μ + qΨQ (y − μ)`.
pub fn mmse_estimate<T: Real>(art: &EstimationArtifacts<T>, y: &CVector<T>) -> Result<CVector<T>> {
    if y.len() != art.effective_mean.len() {
        return Err(SimError::dims("observation length", art.effective_mean.len(), y.len()));
    }
    Ok(&art.effective_mean + &art.gain * (y - &art.effective_mean))
}

impl<T: Real> EstimationArtifacts<T> {
    /// Runs [`mmse_estimate`] and stores the result.
    pub fn estimate(&mut self, y: &CVector<T>) -> Result<&CVector<T>> {
        let g = mmse_estimate(self, y)?;
        Ok(self.estimate.insert(g))
    }
}

/// Covariance of the estimate as printed: `qκN BᴴB + q²ΨQΨ`.
pub fn estimate_covariance<T: Real>(art: &EstimationArtifacts<T>) -> CMatrix<T> {
    art.est_cov.clone()
}

/// Error covariance `E{(g − ĝ)(g − ĝ)ᴴ} = qΨ − q²ΨQΨ`.
pub fn error_covariance<T: Real>(art: &EstimationArtifacts<T>) -> CMatrix<T> {
    let q = art.q;
    hermitize(&art.psi * real(q) - &art.psi * &art.qmat * &art.psi * real(q * q))
}

/// `tr(ΨQΨ)`; real and non-negative for valid inputs.
pub fn trace_psi_q_psi<T: Real>(art: &EstimationArtifacts<T>) -> T {
    trace_re(&(&art.psi * &art.qmat * &art.psi))
}

pub fn nmse_closed_form<T: Real>(art: &EstimationArtifacts<T>, mode: NmseMode) -> Result<T> {
    let d = trace_re(&art.psi);
    if !(d > T::zero()) {
        return Err(SimError::Degenerate(format!(
            "tr((W^1)ᴴ Gᴴ R G W^1) = {:e} is not positive",
            to_f64(d)
        )));
    }
    let s2 = trace_psi_q_psi(art);
    let s = match mode {
        NmseMode::Consistent => art.q * s2,
        NmseMode::PaperLiteral => {
            art.kappa * lit::<T>(art.elements as f64) * trace_re(&art.los_gram) + art.q * s2
        }
    };
    Ok(T::one() - s / d)
}

/// Monte-Carlo NMSE with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNmse {
    pub mean: f64,
    pub stderr: f64,
    /// `(mean, stderr)` per user.
    pub per_user: Vec<(f64, f64)>,
}

/// Ratio estimator `Σa / Σb` with its delta-method standard error.
pub(crate) fn ratio_estimate(a: &[f64], b: &[f64]) -> (f64, f64) {
    let t = a.len() as f64;
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let ratio = sa / sb;
    let mean_b = sb / t;
    let resid: f64 = a.iter().zip(b).map(|(x, y)| (x - ratio * y).powi(2)).sum();
    let var = resid / (t * (t - 1.0)) / (mean_b * mean_b);
    (ratio, var.sqrt())
}

/// Simulates `trials` independent (fading, noise) realizations of the whole
/// pilot phase and measures `E‖g − ĝ‖² / E‖g − E g‖²` per user.
///
/// Trial `t` draws its fading from stream `(seed, Fading, t, k)` and its noise
/// from `(seed, Noise, t)`, so the result does not depend on thread count.
pub fn nmse_monte_carlo<T: Real>(
    seed: u64,
    stack: &SimStack<T>,
    users: &[UserChannel<T>],
    book: &PilotBook<T>,
    r: &CorrelationModel<T>,
    trials: usize,
) -> Result<McNmse> {
    if trials < 2 {
        return Err(SimError::Config("Monte-Carlo needs at least two trials".into()));
    }
    let arts = users
        .iter()
        .map(|u| build_artifacts(stack, u, book, r))
        .collect::<Result<Vec<_>>>()?;
    // The true mean of g, computed from the channel model rather than the
    // estimator's prior.
    let means = users
        .iter()
        .map(|u| effective_channel(stack, &u.mean()))
        .collect::<Result<Vec<_>>>()?;

    let per_trial: Vec<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<(f64, f64)>> {
            let mut drawn = users.to_vec();
            for (k, u) in drawn.iter_mut().enumerate() {
                u.redraw(&mut stream(seed, Role::Fading, &[t as u64, k as u64]), r)?;
            }
            let obs = transmit_pilots(&mut stream(seed, Role::Noise, &[t as u64]), stack, &drawn, book)?;
            drawn
                .iter()
                .enumerate()
                .map(|(k, u)| {
                    let g = effective_channel(stack, &u.realization)?;
                    let g_hat = mmse_estimate(&arts[k], &obs.per_user[k])?;
                    Ok((to_f64((&g - g_hat).norm_squared()), to_f64((&g - &means[k]).norm_squared())))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let k = users.len();
    let per_user: Vec<(f64, f64)> = (0..k)
        .map(|u| {
            let a: Vec<f64> = per_trial.iter().map(|row| row[u].0).collect();
            let b: Vec<f64> = per_trial.iter().map(|row| row[u].1).collect();
            ratio_estimate(&a, &b)
        })
        .collect();
    let mean = per_user.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let stderr = per_user.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / k as f64;
    Ok(McNmse { mean, stderr, per_user })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::make_user_channel;
    use crate::geometry::{
        build_layout, build_propagation_set, CorrelationKind, LayoutParams, PhaseStack, PropagationSet,
    };
    use crate::scalar::sample_cn;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `L = 1`, unit phases and `W^1 = I`: every map is the identity.
    fn identity_system(n: usize, kappa: f64, beta: f64) -> (SimStack<f64>, UserChannel<f64>, CorrelationModel<f64>) {
        let layout = build_layout(&LayoutParams::half_wavelength(0.01, n, 1, 1, n)).unwrap();
        let r = CorrelationModel::from_layout(&layout, CorrelationKind::Identity).unwrap();
        let user = make_user_channel(&mut ChaCha8Rng::seed_from_u64(1), beta, kappa, (0.3, 0.6), &layout, &r).unwrap();
        let stack = SimStack::new(layout, PropagationSet::identity(n), PhaseStack::ones(1, n)).unwrap();
        (stack, user, r)
    }

    pub(crate) fn random_system(
        seed: u64,
        nx: usize,
        ny: usize,
        layers: usize,
        nt: usize,
        kappa: f64,
    ) -> (SimStack<f64>, Vec<UserChannel<f64>>, CorrelationModel<f64>) {
        let lambda = 0.0107;
        let layout = build_layout(&LayoutParams::half_wavelength(lambda, nx, ny, layers, nt)).unwrap();
        let props = build_propagation_set(&layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases = PhaseStack::random(&mut rng, layers, nx * ny);
        let r = CorrelationModel::from_layout(&layout, CorrelationKind::SincIsotropic).unwrap();
        let users = (0..2)
            .map(|k| make_user_channel(&mut rng, 1.0 + 0.5 * k as f64, kappa, (0.4 - 0.3 * k as f64, 0.7), &layout, &r).unwrap())
            .collect();
        (SimStack::new(layout, props, phases).unwrap(), users, r)
    }

    #[test]
    fn zero_channel_maps_to_zero() {
        let (stack, _, _) = random_system(1, 4, 2, 2, 2, 1.0);
        let g = effective_channel(&stack, &CVector::zeros(8)).unwrap();
        assert!(g.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn identity_maps_pass_channel_through() {
        let (stack, user, _) = identity_system(4, 1.0, 1.0);
        let g = effective_channel(&stack, &user.realization).unwrap();
        assert_eq!(g, user.realization);
    }

    #[test]
    fn effective_channel_matches_loops() {
        let (stack, users, _) = random_system(2, 4, 2, 3, 2, 1.0);
        let g = effective_channel(&stack, &users[0].realization).unwrap();
        let b = stack.effective_map();
        for a in 0..2 {
            let mut acc = num_complex::Complex::new(0.0, 0.0);
            for n in 0..8 {
                acc += b[(n, a)].conj() * users[0].realization[n];
            }
            assert!((acc - g[a]).norm() <= 1e-13 * g.norm());
        }
    }

    #[test]
    fn identity_artifacts_reduce_to_scalars() {
        let (stack, user, r) = identity_system(4, 0.0, 2.0);
        let book = PilotBook::new(1, 1, 1.0, 0.5).unwrap();
        let art = build_artifacts(&stack, &user, &book, &r).unwrap();
        let s = 0.5;
        assert!((&art.psi - CMatrix::identity(4, 4)).norm() < 1e-15);
        let expected_q = 1.0 / (2.0 + s);
        assert!((&art.qmat - CMatrix::identity(4, 4) * real(expected_q)).norm() < 1e-14);
        assert_relative_eq!(art.nmse_consistent, 1.0 - 2.0 / (2.0 + s), max_relative = 1e-13);
    }

    #[test]
    fn vanishing_q_gives_inverse_noise_ratio() {
        let (stack, user, r) = identity_system(3, 1.0, 1e-30);
        let book = PilotBook::new(2, 1, 2.0, 0.25).unwrap();
        let art = build_artifacts(&stack, &user, &book, &r).unwrap();
        let target = CMatrix::<f64>::identity(3, 3) * real(2.0 * 2.0 / 0.25);
        assert!(crate::scalar::rel_frobenius(&art.qmat, &target) < 1e-12);
    }

    #[test]
    fn inverse_residual_is_small() {
        let (stack, users, r) = random_system(3, 4, 2, 2, 2, 10.0);
        let book = PilotBook::new(2, 2, 1.0, 0.1).unwrap();
        let art = build_artifacts(&stack, &users[0], &book, &r).unwrap();
        let m = &art.psi * real(art.q) + CMatrix::identity(2, 2) * real(art.noise_ratio);
        assert!((&art.qmat * m - CMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn estimate_is_affine_with_fixed_point_at_mean() {
        let (stack, users, r) = random_system(4, 4, 2, 2, 2, 3.0);
        let book = PilotBook::new(2, 2, 1.0, 0.1).unwrap();
        let mut art = build_artifacts(&stack, &users[0], &book, &r).unwrap();
        let mean = art.effective_mean.clone();
        let at_mean = art.estimate(&mean).unwrap().clone();
        assert!((&at_mean - &mean).norm() <= 1e-14 * mean.norm());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y1 = CVector::from_fn(2, |_, _| sample_cn::<f64, _>(&mut rng));
        let y2 = CVector::from_fn(2, |_, _| sample_cn::<f64, _>(&mut rng));
        let diff = mmse_estimate(&art, &y1).unwrap() - mmse_estimate(&art, &y2).unwrap();
        let expected = &art.gain * (&y1 - &y2);
        assert!((diff - &expected).norm() <= 1e-14 * expected.norm());
    }

    #[test]
    fn rayleigh_estimate_has_no_mean_term() {
        let (stack, users, r) = random_system(6, 4, 2, 2, 2, 0.0);
        let book = PilotBook::new(2, 2, 1.0, 0.1).unwrap();
        let art = build_artifacts(&stack, &users[0], &book, &r).unwrap();
        assert!(art.effective_mean.iter().all(|z| z.re == 0.0 && z.im == 0.0));
        let y = CVector::from_element(2, num_complex::Complex::new(0.5, -0.25));
        assert_eq!(mmse_estimate(&art, &y).unwrap(), &art.gain * &y);
        // LoS term vanishes from the covariance.
        let expected = &art.psi * &art.qmat * &art.psi * real(art.q * art.q);
        assert!(crate::scalar::rel_frobenius(&estimate_covariance(&art), &hermitize(expected)) < 1e-14);
    }

    #[test]
    fn identity_covariance_is_scalar() {
        let (kappa, beta) = (3.0, 2.0);
        let (stack, user, r) = identity_system(4, kappa, beta);
        let book = PilotBook::new(1, 1, 1.0, 0.5).unwrap();
        let art = build_artifacts(&stack, &user, &book, &r).unwrap();
        let q = beta / (1.0 + kappa);
        let expected = q * kappa * 4.0 + q * q / (q + 0.5);
        assert!((estimate_covariance(&art) - CMatrix::identity(4, 4) * real(expected)).norm() < 1e-13);
    }

    #[test]
    fn covariances_are_hermitian_psd() {
        for seed in 0..5 {
            let (stack, users, r) = random_system(10 + seed, 4, 4, 3, 2, 1.0);
            let book = PilotBook::new(2, 2, 1.0, 0.05).unwrap();
            let art = build_artifacts(&stack, &users[1], &book, &r).unwrap();
            for m in [estimate_covariance(&art), error_covariance(&art)] {
                assert!((&m - m.adjoint()).norm() <= 1e-12 * m.norm());
                let eig = m.symmetric_eigen();
                let top = eig.eigenvalues.max();
                assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10 * top));
            }
            assert!(trace_psi_q_psi(&art) >= 0.0);
            assert!((0.0..=1.0).contains(&art.nmse_consistent));
        }
    }

    #[test]
    fn consistent_nmse_limits() {
        let (stack, users, r) = random_system(20, 4, 2, 2, 2, 1.0);
        let hi = PilotBook::new(2, 2, 1e12, 1.0).unwrap();
        let art = build_artifacts(&stack, &users[0], &hi, &r).unwrap();
        assert!(art.nmse_consistent < 1e-6);
        let lo = PilotBook::new(2, 2, 1e-14, 1.0).unwrap();
        let art = build_artifacts(&stack, &users[0], &lo, &r).unwrap();
        assert!(art.nmse_consistent > 1.0 - 1e-6);
    }

    #[test]
    fn consistent_nmse_non_increasing_in_snr() {
        let (stack, users, r) = random_system(21, 4, 2, 2, 2, 10.0);
        let mut prev = f64::INFINITY;
        for i in 0..10 {
            let rho = 10f64.powf(-3.0 + 0.5 * i as f64);
            let book = PilotBook::new(2, 2, rho, 1.0).unwrap();
            let v = build_artifacts(&stack, &users[0], &book, &r).unwrap().nmse_consistent;
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let (mut stack, users, r) = random_system(22, 2, 2, 1, 2, 1.0);
        let props = PropagationSet {
            w1: CMatrix::zeros(4, 2),
            inter_layer: vec![],
        };
        stack = SimStack::new(stack.layout().clone(), props, PhaseStack::ones(1, 4)).unwrap();
        let book = PilotBook::new(2, 2, 1.0, 1.0).unwrap();
        assert!(matches!(
            build_artifacts(&stack, &users[0], &book, &r),
            Err(SimError::Degenerate(_))
        ));
    }

    #[test]
    fn monte_carlo_is_reproducible_and_matches_identity_case() {
        let layout = build_layout(&LayoutParams::half_wavelength(0.01, 4, 1, 1, 4)).unwrap();
        let r = CorrelationModel::from_layout(&layout, CorrelationKind::Identity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let users: Vec<_> = (0..2)
            .map(|_| make_user_channel(&mut rng, 1.0, 0.0, (0.1, 0.2), &layout, &r).unwrap())
            .collect();
        let stack = SimStack::new(layout, PropagationSet::identity(4), PhaseStack::ones(1, 4)).unwrap();
        let book = PilotBook::new(2, 2, 1.0, 1.0).unwrap();
        let a = nmse_monte_carlo(42, &stack, &users, &book, &r, 4000).unwrap();
        let b = nmse_monte_carlo(42, &stack, &users, &book, &r, 4000).unwrap();
        assert_eq!(a, b);
        // 1 − q/(q + s) with q = 1, s = 0.5
        let closed = 1.0 - 1.0 / 1.5;
        assert!((a.mean - closed).abs() < 3.0 * a.stderr, "{} ± {} vs {closed}", a.mean, a.stderr);
    }

    #[test]
    fn monte_carlo_vanishes_without_noise() {
        let (stack, users, r) = random_system(23, 4, 2, 2, 2, 1.0);
        let book = PilotBook::new(2, 2, 1.0, 1e-20).unwrap();
        let mc = nmse_monte_carlo(1, &stack, &users, &book, &r, 200).unwrap();
        assert!(mc.mean < 1e-10);
    }

    #[test]
    fn ratio_estimator_on_exact_proportion() {
        let b = [1.0, 2.0, 3.0, 4.0];
        let a = b.map(|x| 0.25 * x);
        let (r, se) = ratio_estimate(&a, &b);
        assert_relative_eq!(r, 0.25);
        assert!(se < 1e-15);
    }
}
