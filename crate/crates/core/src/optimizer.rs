//! Phase-shift optimization of the average NMSE.
//!
//! For layer `l` let `A_l = Θ_L W^L ··· Θ_{l+1} W^{l+1}` and
//! `C_l = W^l Θ_{l−1} ··· Θ_1`, so that `G = A_l Θ_l C_l` and
//! `dB = A_l dΘ_l C_l W^1` for `B = G W^1`. Every gradient term is then of
//! the form `diag(A_lᴴ X (C_l W^1)ᴴ)` for an `N × N_t` matrix `X`:
//!
//! * `∂D/∂θ*   = diag(A_lᴴ R B (C_l W^1)ᴴ)`
//! * `∂S₁/∂θ*  = diag(A_lᴴ B (C_l W^1)ᴴ)`
//! * `∂S₂/∂θ*  = diag(A_lᴴ R B M (C_l W^1)ᴴ)`, `M = QΨ + ΨQ − q QΨ²Q`
//!
//! The per-user quotient rule terms are summed into a single `X` before the
//! diagonal extraction. [`GradientContext`] materialises `A_l` and `C_l`;
//! [`layer_gradients`] reaches the same vectors through forward and adjoint
//! recursions on `N × N_t` blocks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::estimator::{psi_of, regularized_inverse, NmseMode};
use crate::geometry::{apply_cascade, compose_cascade, PhaseStack, PropagationSet};
use crate::rng::{stream, Role};
use crate::scalar::{diag_xyh, lit, modulus, rel_frobenius, scale_rows, to_f64, trace_re, CMatrix, CVector, Cx, Real};

/// Large-scale parameters of one user as seen by the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserStats<T> {
    pub q: T,
    pub kappa: T,
}

/// The average-NMSE objective over a fixed geometry.
#[derive(Debug, Clone)]
pub struct NmseProblem<T: Real> {
    pub props: PropagationSet<T>,
    pub correlation: CMatrix<T>,
    pub users: Vec<UserStats<T>>,
    /// `σ² / (τρ)`.
    pub noise_ratio: T,
    pub mode: NmseMode,
}

/// Objective value and the intermediate quantities reused by the gradient.
#[derive(Debug, Clone)]
pub struct Evaluation<T: Real> {
    pub average: T,
    pub per_user: Vec<T>,
    /// `B = G W^1`.
    pub effective: CMatrix<T>,
    pub psi: CMatrix<T>,
    pub qmats: Vec<CMatrix<T>>,
    /// `D = tr Ψ`.
    pub d: T,
    /// `S₁ = tr(BᴴB)`.
    pub s1: T,
    /// `S₂,k = tr(ΨQ_kΨ)`.
    pub s2: Vec<T>,
}

impl<T: Real> NmseProblem<T> {
    pub fn new(
        props: PropagationSet<T>,
        correlation: CMatrix<T>,
        users: Vec<UserStats<T>>,
        noise_ratio: T,
        mode: NmseMode,
    ) -> Result<Self> {
        let n = props.elements();
        if correlation.shape() != (n, n) {
            return Err(SimError::dims("correlation size", n, correlation.nrows()));
        }
        if users.is_empty() {
            return Err(SimError::Config("objective needs at least one user".into()));
        }
        if !(noise_ratio > T::zero()) {
            return Err(SimError::Config("σ²/(τρ) must be positive".into()));
        }
        Ok(Self {
            props,
            correlation,
            users,
            noise_ratio,
            mode,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.props.num_layers()
    }

    pub fn elements(&self) -> usize {
        self.props.elements()
    }

    pub fn evaluate(&self, phases: &PhaseStack<T>) -> Result<Evaluation<T>> {
        let b = apply_cascade(phases, &self.props, &self.props.w1)?;
        self.evaluate_map(b)
    }

    fn evaluate_map(&self, b: CMatrix<T>) -> Result<Evaluation<T>> {
        let psi = psi_of(&b, &self.correlation);
        let d = trace_re(&psi);
        if !(d > T::zero()) || !d.is_finite() {
            return Err(SimError::Degenerate(format!(
                "tr((W^1)ᴴ Gᴴ R G W^1) = {:e} is not positive",
                to_f64(d)
            )));
        }
        let s1 = b.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr());
        let n = lit::<T>(self.elements() as f64);
        let mut qmats = Vec::with_capacity(self.users.len());
        let mut s2 = Vec::with_capacity(self.users.len());
        let mut per_user = Vec::with_capacity(self.users.len());
        for u in &self.users {
            let qm = regularized_inverse(&psi, u.q, self.noise_ratio)?;
            let t = trace_re(&(&psi * &qm * &psi));
            let s = match self.mode {
                NmseMode::Consistent => u.q * t,
                NmseMode::PaperLiteral => u.kappa * n * s1 + u.q * t,
            };
            per_user.push(T::one() - s / d);
            qmats.push(qm);
            s2.push(t);
        }
        let average = per_user.iter().fold(T::zero(), |a, &v| a + v) / lit(per_user.len() as f64);
        Ok(Evaluation {
            average,
            per_user,
            effective: b,
            psi,
            qmats,
            d,
            s1,
            s2,
        })
    }

    /// `X = R B M_R + B M_B`: the quotient-rule combination of all users'
    /// `∇D`, `∇S₁`, `∇S₂` terms, ready for `diag(A_lᴴ X (C_l W^1)ᴴ)`.
    fn sensitivity(&self, ev: &Evaluation<T>) -> CMatrix<T> {
        let nt = ev.psi.nrows();
        let k = lit::<T>(self.users.len() as f64);
        let d = ev.d;
        let n = lit::<T>(self.elements() as f64);
        let eye = CMatrix::<T>::identity(nt, nt);
        let mut m_r = CMatrix::<T>::zeros(nt, nt);
        let mut b_coeff = T::zero();
        for (i, u) in self.users.iter().enumerate() {
            let qm = &ev.qmats[i];
            let qpsi = qm * &ev.psi;
            let psiq = &ev.psi * qm;
            let m = &qpsi + &psiq - &qpsi * &psiq * Cx::new(u.q, T::zero());
            let s = match self.mode {
                NmseMode::Consistent => u.q * ev.s2[i],
                NmseMode::PaperLiteral => {
                    b_coeff -= u.kappa * n / d;
                    u.kappa * n * ev.s1 + u.q * ev.s2[i]
                }
            };
            m_r += &eye * Cx::new(s / (d * d), T::zero()) - m * Cx::new(u.q / d, T::zero());
        }
        let inv_k = Cx::new(T::one() / k, T::zero());
        let b = &ev.effective;
        let mut x = &self.correlation * (b * (m_r * inv_k));
        if b_coeff != T::zero() {
            x += b * Cx::new(b_coeff / k, T::zero());
        }
        x
    }
}

/// Average NMSE over users in the problem's mode.
pub fn objective_avg_nmse<T: Real>(phases: &PhaseStack<T>, problem: &NmseProblem<T>) -> Result<T> {
    Ok(problem.evaluate(phases)?.average)
}

/// Full cascade factorization `G = A_l Θ_l C_l` for every layer, with the
/// objective's intermediates at the current phases.
#[derive(Debug, Clone)]
pub struct GradientContext<T: Real> {
    /// `A_l`, `N × N`; `A_L = I`.
    pub a: Vec<CMatrix<T>>,
    /// `C_l`, `N × N`; `C_1 = I`.
    pub c: Vec<CMatrix<T>>,
    pub g: CMatrix<T>,
    pub eval: Evaluation<T>,
    sensitivity: CMatrix<T>,
    w1: CMatrix<T>,
    theta: Vec<CVector<T>>,
}

impl<T: Real> GradientContext<T> {
    pub fn new(problem: &NmseProblem<T>, phases: &PhaseStack<T>) -> Result<Self> {
        let props = &problem.props;
        let g = compose_cascade(phases, props)?;
        let layers = props.num_layers();
        let n = props.elements();
        let eye = CMatrix::<T>::identity(n, n);

        let mut c = Vec::with_capacity(layers);
        c.push(eye.clone());
        for i in 1..layers {
            let next = &props.inter_layer[i - 1] * scale_rows(&phases.theta[i - 1], &c[i - 1]);
            c.push(next);
        }
        let mut a = vec![eye; layers];
        for i in (0..layers.saturating_sub(1)).rev() {
            a[i] = &a[i + 1] * scale_rows(&phases.theta[i + 1], &props.inter_layer[i]);
        }

        let eval = problem.evaluate_map(&g * &props.w1)?;
        let sensitivity = problem.sensitivity(&eval);
        Ok(Self {
            a,
            c,
            g,
            eval,
            sensitivity,
            w1: props.w1.clone(),
            theta: phases.theta.clone(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.a.len()
    }

    /// `‖A_l Θ_l C_l − G‖_F / ‖G‖_F` for 0-based layer `layer`.
    pub fn factorization_residual(&self, layer: usize) -> T {
        let prod = &self.a[layer] * scale_rows(&self.theta[layer], &self.c[layer]);
        rel_frobenius(&prod, &self.g)
    }
}

/// `∂ NMSE̅ / ∂θ_l*` for 0-based layer `layer`, from the full factorization.
pub fn gradient_layer<T: Real>(layer: usize, ctx: &GradientContext<T>) -> Result<CVector<T>> {
    if layer >= ctx.num_layers() {
        return Err(SimError::dims("layer index", format!("< {}", ctx.num_layers()), layer));
    }
    let u = ctx.a[layer].ad_mul(&ctx.sensitivity);
    let f = &ctx.c[layer] * &ctx.w1;
    Ok(diag_xyh(&u, &f))
}

/// Objective and all layer gradients through forward/adjoint recursions,
/// `O(L N² N_t)` instead of the `O(L N³)` of [`GradientContext`].
pub fn layer_gradients<T: Real>(
    problem: &NmseProblem<T>,
    phases: &PhaseStack<T>,
) -> Result<(Evaluation<T>, Vec<CVector<T>>)> {
    let (ev, forward) = forward_pass(problem, phases)?;
    let x = problem.sensitivity(&ev);
    let layers = problem.num_layers();
    let mut grads = vec![CVector::zeros(0); layers];
    let mut u = x;
    for i in (0..layers).rev() {
        grads[i] = diag_xyh(&u, &forward[i]);
        if i > 0 {
            let conj = phases.theta[i].map(|z| z.conj());
            u = problem.props.inter_layer[i - 1].ad_mul(&scale_rows(&conj, &u));
        }
    }
    Ok((ev, grads))
}

/// Objective and the gradient of a single (0-based) layer.
pub fn single_layer_gradient<T: Real>(
    problem: &NmseProblem<T>,
    phases: &PhaseStack<T>,
    layer: usize,
) -> Result<(Evaluation<T>, CVector<T>)> {
    if layer >= problem.num_layers() {
        return Err(SimError::dims("layer index", format!("< {}", problem.num_layers()), layer));
    }
    let (ev, forward) = forward_pass(problem, phases)?;
    let mut u = problem.sensitivity(&ev);
    for i in (layer + 1..problem.num_layers()).rev() {
        let conj = phases.theta[i].map(|z| z.conj());
        u = problem.props.inter_layer[i - 1].ad_mul(&scale_rows(&conj, &u));
    }
    Ok((ev, diag_xyh(&u, &forward[layer])))
}

/// `F_l = C_l W^1` for every layer, plus the evaluation at `B = Θ_L F_L`.
fn forward_pass<T: Real>(problem: &NmseProblem<T>, phases: &PhaseStack<T>) -> Result<(Evaluation<T>, Vec<CMatrix<T>>)> {
    let props = &problem.props;
    if phases.num_layers() != props.num_layers() || phases.elements() != props.elements() {
        return Err(SimError::dims(
            "phase stack",
            format!("{}x{}", props.num_layers(), props.elements()),
            format!("{}x{}", phases.num_layers(), phases.elements()),
        ));
    }
    let layers = props.num_layers();
    let mut forward = Vec::with_capacity(layers);
    forward.push(props.w1.clone());
    for i in 1..layers {
        let next = &props.inter_layer[i - 1] * scale_rows(&phases.theta[i - 1], &forward[i - 1]);
        forward.push(next);
    }
    let b = scale_rows(&phases.theta[layers - 1], &forward[layers - 1]);
    Ok((problem.evaluate_map(b)?, forward))
}

/// Central-difference estimate of `∂f/∂θ_l*`:
/// `(∂f/∂Re θ + j ∂f/∂Im θ) / 2` per entry of 0-based layer `layer`.
pub fn finite_difference_gradient<T, F>(objective: F, phases: &PhaseStack<T>, layer: usize, step: T) -> Result<CVector<T>>
where
    T: Real,
    F: Fn(&PhaseStack<T>) -> Result<T>,
{
    if layer >= phases.num_layers() {
        return Err(SimError::dims("layer index", format!("< {}", phases.num_layers()), layer));
    }
    let n = phases.theta[layer].len();
    let two_h = step + step;
    let half = lit::<T>(0.5);
    let mut out = CVector::zeros(n);
    let mut probe = phases.clone();
    for i in 0..n {
        let base = phases.theta[layer][i];
        let mut diff = |delta: Cx<T>| -> Result<T> {
            probe.theta[layer][i] = base + delta;
            let plus = objective(&probe)?;
            probe.theta[layer][i] = base - delta;
            let minus = objective(&probe)?;
            probe.theta[layer][i] = base;
            Ok((plus - minus) / two_h)
        };
        let d_re = diff(Cx::new(step, T::zero()))?;
        let d_im = diff(Cx::new(T::zero(), step))?;
        out[i] = Cx::new(d_re * half, d_im * half);
    }
    Ok(out)
}

/// Entry-wise projection onto the unit circle; zeros map to `1`.
pub fn project_unit_modulus<T: Real>(v: &CVector<T>) -> CVector<T> {
    v.map(|z| {
        let m = modulus(z);
        if m > T::zero() && m.is_finite() {
            Cx::new(z.re / m, z.im / m)
        } else {
            Cx::new(T::one(), T::zero())
        }
    })
}

/// `g − Re(g θ*) θ` entrywise: the part of `g` that moves `θ` along the
/// unit circle.
pub fn tangent_component<T: Real>(g: &CVector<T>, theta: &CVector<T>) -> CVector<T> {
    g.zip_map(theta, |gi, ti| gi - ti * Cx::new((gi * ti.conj()).re, T::zero()))
}

/// Projected-gradient schedule. A layer's first line search starts at
/// `initial_step / max|∇|`, so the largest entry moves by about
/// `initial_step`; later ones start from twice the last accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    /// Cap on alternating-optimization rounds (one round sweeps all layers).
    pub max_iterations: usize,
    /// Stop once a round changes the objective by less than this fraction.
    pub tolerance: f64,
    pub initial_step: f64,
    pub shrink: f64,
    /// Armijo sufficient-decrease slope.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Step along the gradient's component tangent to the unit circle at
    /// each entry instead of the full gradient.
    pub tangent_step: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-6,
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 60,
            tangent_step: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerResult<T: Real> {
    pub phases: PhaseStack<T>,
    /// `(round, average NMSE)`; round 0 is the initial point.
    pub objective_trace: Vec<(usize, T)>,
    /// Accepted step sizes in order.
    pub step_trace: Vec<T>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Largest `||θ| − 1|` seen after any accepted step.
    pub max_feasibility_error: T,
}

impl<T: Real> OptimizerResult<T> {
    pub fn final_objective(&self) -> T {
        self.objective_trace.last().map(|p| p.1).unwrap_or_else(T::zero)
    }
}

/// Alternating projected gradient descent over `θ_1 .. θ_L` (ascending),
/// with backtracking Armijo line search and monotone acceptance.
pub fn optimize<T: Real>(problem: &NmseProblem<T>, init: PhaseStack<T>, schedule: &Schedule) -> Result<OptimizerResult<T>> {
    if schedule.max_iterations == 0 {
        return Err(SimError::Config("max_iterations must be at least 1".into()));
    }
    if !(schedule.shrink > 0.0 && schedule.shrink < 1.0) || !(schedule.initial_step > 0.0) {
        return Err(SimError::Config("step schedule needs initial_step > 0 and 0 < shrink < 1".into()));
    }
    let layers = problem.num_layers();
    let shrink = lit::<T>(schedule.shrink);
    let armijo = lit::<T>(schedule.armijo);
    let tol = lit::<T>(schedule.tolerance);
    let two = lit::<T>(2.0);

    let mut phases = init;
    let mut current = objective_avg_nmse(&phases, problem)?;
    let mut trace = vec![(0, current)];
    let mut steps = Vec::new();
    // Set on a layer's first line search from the size of its gradient.
    let mut next_step: Vec<Option<T>> = vec![None; layers];
    let mut converged = false;
    let mut rounds = 0;
    let mut feas = phases.max_modulus_deviation();

    for round in 1..=schedule.max_iterations {
        rounds = round;
        let start = current;
        for l in 0..layers {
            let (ev, grad) = single_layer_gradient(problem, &phases, l)?;
            current = ev.average;
            if grad.iter().all(|z| z.re == T::zero() && z.im == T::zero()) {
                continue;
            }
            let dir = if schedule.tangent_step {
                tangent_component(&grad, &phases.theta[l])
            } else {
                grad.clone()
            };
            let largest = dir.iter().fold(T::zero(), |m, z| m.max(modulus(*z)));
            let mut mu = next_step[l].unwrap_or(lit::<T>(schedule.initial_step) / largest);
            let mut accepted = false;
            for _ in 0..schedule.max_backtracks {
                let cand = project_unit_modulus(&(&phases.theta[l] - &dir * Cx::new(mu, T::zero())));
                let delta = &cand - &phases.theta[l];
                let predicted = two * grad.dotc(&delta).re;
                let old = std::mem::replace(&mut phases.theta[l], cand);
                let value = objective_avg_nmse(&phases, problem)?;
                if value <= current + armijo * predicted && value <= current {
                    current = value;
                    steps.push(mu);
                    next_step[l] = Some(mu / shrink);
                    feas = feas.max(phases.max_modulus_deviation());
                    accepted = true;
                    break;
                }
                phases.theta[l] = old;
                mu *= shrink;
            }
            if !accepted {
                next_step[l] = Some(mu);
            }
        }
        trace.push((round, current));
        let scale = start.abs().max(T::eps());
        if (start - current).abs() <= tol * scale {
            converged = true;
            break;
        }
    }
    Ok(OptimizerResult {
        phases,
        objective_trace: trace,
        step_trace: steps,
        converged,
        iterations_used: rounds,
        max_feasibility_error: feas,
    })
}

/// Best of `size` uniformly random phase configurations.
#[derive(Debug, Clone)]
pub struct CodebookResult<T: Real> {
    pub phases: PhaseStack<T>,
    pub objective: T,
    pub index: usize,
}

/// Candidate `i` is drawn from stream `(seed, Codebook, i)`, so codebooks of
/// different sizes with the same seed are prefixes of each other.
pub fn codebook_search<T: Real>(seed: u64, problem: &NmseProblem<T>, size: usize) -> Result<CodebookResult<T>> {
    if size == 0 {
        return Err(SimError::Config("codebook size must be at least 1".into()));
    }
    let (layers, n) = (problem.num_layers(), problem.elements());
    let draw = |i: usize| PhaseStack::random(&mut stream(seed, Role::Codebook, &[i as u64]), layers, n);
    let values = (0..size)
        .into_par_iter()
        .map(|i| objective_avg_nmse(&draw(i), problem))
        .collect::<Result<Vec<T>>>()?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    Ok(CodebookResult {
        phases: draw(best),
        objective: values[best],
        index: best,
    })
}
