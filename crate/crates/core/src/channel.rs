//! Rician user channels, orthogonal pilot books and the uplink pilot phase.

use rand::Rng;

use crate::error::{Result, SimError};
use crate::geometry::{steering_vector, CorrelationModel, SimLayout, SimStack};
use crate::scalar::{cis, lit, real, sample_cn, CMatrix, CVector, Real};

/// Large-scale statistics of one user plus the current small-scale
/// realization `h_k = √q_k (√κ_k h̄_k + h̃_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel<T: Real> {
    pub beta: T,
    pub kappa: T,
    /// `β / (1 + κ)`.
    pub q: T,
    pub azimuth: T,
    pub elevation: T,
    /// LoS steering vector `h̄_k`.
    pub los: CVector<T>,
    pub realization: CVector<T>,
}

impl<T: Real> UserChannel<T> {
    /// Mean of the realization, `√(q κ) h̄`.
    pub fn mean(&self) -> CVector<T> {
        &self.los * real((self.q * self.kappa).sqrt())
    }

    /// Draws a fresh NLoS part and rebuilds the realization.
    pub fn redraw<R: Rng + ?Sized>(&mut self, rng: &mut R, r: &CorrelationModel<T>) -> Result<()> {
        let nlos = sample_nlos(rng, r)?;
        self.realization = assemble(self.q, self.kappa, &self.los, &nlos);
        Ok(())
    }
}

fn assemble<T: Real>(q: T, kappa: T, los: &CVector<T>, nlos: &CVector<T>) -> CVector<T> {
    (los * real(kappa.sqrt()) + nlos) * real(q.sqrt())
}

/// `h̃ = R^{1/2} w` with `w ~ CN(0, I)`.
pub fn sample_nlos<T: Real, R: Rng + ?Sized>(rng: &mut R, r: &CorrelationModel<T>) -> Result<CVector<T>> {
    let n = r.dim();
    let w = CVector::from_fn(n, |_, _| sample_cn(rng));
    let h = r.sqrt() * w;
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SimError::Numerical("non-finite correlation square root".into()));
    }
    Ok(h)
}

/// Builds a user's channel with its LoS part taken from the final layer's
/// element spacing and grid.
pub fn make_user_channel<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    beta: T,
    kappa: T,
    aoa: (T, T),
    layout: &SimLayout<T>,
    r: &CorrelationModel<T>,
) -> Result<UserChannel<T>> {
    if !(beta > T::zero()) {
        return Err(SimError::Config("path-loss gain must be positive".into()));
    }
    if !(kappa >= T::zero()) {
        return Err(SimError::Config("Rician factor must be non-negative".into()));
    }
    if r.dim() != layout.elements_per_layer {
        return Err(SimError::dims("correlation size", layout.elements_per_layer, r.dim()));
    }
    let (azimuth, elevation) = aoa;
    let los = steering_vector(
        azimuth,
        elevation,
        layout.elements_per_layer,
        layout.per_col,
        layout.element_width,
        layout.wavelength,
    )?;
    let q = beta / (T::one() + kappa);
    let nlos = sample_nlos(rng, r)?;
    let realization = assemble(q, kappa, &los, &nlos);
    Ok(UserChannel {
        beta,
        kappa,
        q,
        azimuth,
        elevation,
        los,
        realization,
    })
}

/// Orthonormal pilot columns and the training power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook<T: Real> {
    /// `τ × K`, `XᴴX = I_K`.
    pub x: CMatrix<T>,
    pub tau: usize,
    /// Per-slot pilot power in watts.
    pub rho: T,
    /// Noise power in watts.
    pub sigma2: T,
}

impl<T: Real> PilotBook<T> {
    pub fn new(tau: usize, users: usize, rho: T, sigma2: T) -> Result<Self> {
        if !(rho > T::zero()) {
            return Err(SimError::Config("pilot power must be positive".into()));
        }
        if !(sigma2 >= T::zero()) {
            return Err(SimError::Config("noise power must be non-negative".into()));
        }
        Ok(Self {
            x: pilot_matrix(tau, users)?,
            tau,
            rho,
            sigma2,
        })
    }

    pub fn users(&self) -> usize {
        self.x.ncols()
    }

    /// Total pilot energy `τρ`.
    pub fn energy(&self) -> T {
        lit::<T>(self.tau as f64) * self.rho
    }

    /// `σ² / (τρ)`, the noise variance left after de-spreading.
    pub fn noise_ratio(&self) -> T {
        self.sigma2 / self.energy()
    }
}

/// First `K` columns of the unitary `τ`-point DFT matrix.
pub fn pilot_matrix<T: Real>(tau: usize, users: usize) -> Result<CMatrix<T>> {
    if users == 0 {
        return Err(SimError::Config("need at least one user".into()));
    }
    if tau < users {
        return Err(SimError::Config(format!(
            "pilot length τ = {tau} is shorter than the number of users K = {users}"
        )));
    }
    let scale = real(T::one() / lit::<T>(tau as f64).sqrt());
    let step = -T::two_pi() / lit::<T>(tau as f64);
    Ok(CMatrix::from_fn(tau, users, |t, k| {
        cis(step * lit::<T>(((t * k) % tau) as f64)) * scale
    }))
}

/// Received pilot block and the per-user de-spread observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation<T: Real> {
    /// `N_t × τ`.
    pub y: CMatrix<T>,
    /// `y_p^k = Y x_k / √(τρ)`.
    pub per_user: Vec<CVector<T>>,
}

/// `Y x_k / √(τρ)`.
pub fn despread<T: Real>(y: &CMatrix<T>, book: &PilotBook<T>, k: usize) -> CVector<T> {
    y * book.x.column(k) * real(T::one() / book.energy().sqrt())
}

/// Noise-free pilot block `√(τρ) (W^1)ᴴ Gᴴ H Xᴴ`.
pub fn pilot_signal<T: Real>(
    stack: &SimStack<T>,
    users: &[UserChannel<T>],
    book: &PilotBook<T>,
) -> Result<CMatrix<T>> {
    if users.len() != book.users() {
        return Err(SimError::dims("pilot book users", book.users(), users.len()));
    }
    let n = stack.elements();
    if let Some(u) = users.iter().find(|u| u.realization.len() != n) {
        return Err(SimError::dims("channel length", n, u.realization.len()));
    }
    let h = CMatrix::from_columns(&users.iter().map(|u| u.realization.clone()).collect::<Vec<_>>());
    let b = stack.effective_map();
    Ok(b.adjoint() * h * book.x.adjoint() * real(book.energy().sqrt()))
}

/// Uplink training: `Y = √(τρ) (W^1)ᴴ Gᴴ H Xᴴ + Z` with `Z ~ CN(0, σ²)`
/// entry-wise. A zero noise power yields the noise-free block.
pub fn transmit_pilots<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    stack: &SimStack<T>,
    users: &[UserChannel<T>],
    book: &PilotBook<T>,
) -> Result<PilotObservation<T>> {
    let mut y = pilot_signal(stack, users, book)?;
    if book.sigma2 > T::zero() {
        let std = real(book.sigma2.sqrt());
        for z in y.iter_mut() {
            *z += sample_cn::<T, R>(rng) * std;
        }
    }
    let per_user = (0..users.len()).map(|k| despread(&y, book, k)).collect();
    Ok(PilotObservation { y, per_user })
}
