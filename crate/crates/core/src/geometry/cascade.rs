use rand::Rng;

use crate::error::{Result, SimError};
use crate::geometry::{PropagationSet, SimLayout};
use crate::scalar::{cis, modulus, scale_rows, CMatrix, CVector, Cx, Real};

/// Per-layer phase coefficients `θ_1 .. θ_L`.
///
/// Feasible points have unit-modulus entries. The container itself accepts
/// arbitrary complex entries so objectives and finite differences can be
/// evaluated off the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStack<T: Real> {
    pub theta: Vec<CVector<T>>,
}

impl<T: Real> PhaseStack<T> {
    pub fn ones(layers: usize, n: usize) -> Self {
        Self {
            theta: vec![CVector::from_element(n, Cx::new(T::one(), T::zero())); layers],
        }
    }

    pub fn from_angles(angles: &[Vec<T>]) -> Self {
        Self {
            theta: angles
                .iter()
                .map(|a| CVector::from_iterator(a.len(), a.iter().map(|&p| cis(p))))
                .collect(),
        }
    }

    /// Phases drawn independently from `Uniform[0, 2π)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, layers: usize, n: usize) -> Self {
        Self {
            theta: (0..layers)
                .map(|_| CVector::from_fn(n, |_, _| cis(T::sample_uniform(rng, T::zero(), T::two_pi()))))
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.theta.len()
    }

    pub fn elements(&self) -> usize {
        self.theta.first().map_or(0, |t| t.len())
    }

    /// Largest `||θ| − 1|` over all entries.
    pub fn max_modulus_deviation(&self) -> T {
        self.theta
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |m, z| m.max((modulus(*z) - T::one()).abs()))
    }

    /// Phase angles in `(−π, π]`.
    pub fn angles(&self) -> Vec<Vec<T>> {
        self.theta
            .iter()
            .map(|t| t.iter().map(|z| z.im.atan2(z.re)).collect())
            .collect()
    }
}

fn check_dims<T: Real>(phases: &PhaseStack<T>, props: &PropagationSet<T>) -> Result<()> {
    if phases.num_layers() != props.num_layers() {
        return Err(SimError::dims("cascade layers", props.num_layers(), phases.num_layers()));
    }
    let n = props.elements();
    if let Some(bad) = phases.theta.iter().find(|t| t.len() != n) {
        return Err(SimError::dims("phase vector length", n, bad.len()));
    }
    if let Some(bad) = props.inter_layer.iter().find(|w| w.shape() != (n, n)) {
        return Err(SimError::dims("inter-layer matrix", format!("{n}x{n}"), format!("{:?}", bad.shape())));
    }
    Ok(())
}

/// `G = Θ_L W^L ··· Θ_2 W^2 Θ_1`.
pub fn compose_cascade<T: Real>(phases: &PhaseStack<T>, props: &PropagationSet<T>) -> Result<CMatrix<T>> {
    check_dims(phases, props)?;
    let mut g = CMatrix::from_diagonal(&phases.theta[0]);
    for (w, theta) in props.inter_layer.iter().zip(&phases.theta[1..]) {
        g = scale_rows(theta, &(w * g));
    }
    Ok(g)
}

/// `G · x` without materialising `G`.
pub fn apply_cascade<T: Real>(
    phases: &PhaseStack<T>,
    props: &PropagationSet<T>,
    x: &CMatrix<T>,
) -> Result<CMatrix<T>> {
    check_dims(phases, props)?;
    if x.nrows() != props.elements() {
        return Err(SimError::dims("cascade operand rows", props.elements(), x.nrows()));
    }
    let mut y = scale_rows(&phases.theta[0], x);
    for (w, theta) in props.inter_layer.iter().zip(&phases.theta[1..]) {
        y = scale_rows(theta, &(w * y));
    }
    Ok(y)
}

/// A configured stack: geometry, propagation matrices, current phases and the
/// cached cascade `G` together with the end-to-end map `G·W^1`.
#[derive(Debug, Clone)]
pub struct SimStack<T: Real> {
    layout: SimLayout<T>,
    props: PropagationSet<T>,
    phases: PhaseStack<T>,
    cascade: CMatrix<T>,
    effective: CMatrix<T>,
}

impl<T: Real> SimStack<T> {
    pub fn new(layout: SimLayout<T>, props: PropagationSet<T>, phases: PhaseStack<T>) -> Result<Self> {
        let cascade = compose_cascade(&phases, &props)?;
        let effective = &cascade * &props.w1;
        Ok(Self {
            layout,
            props,
            phases,
            cascade,
            effective,
        })
    }

    pub fn set_phases(&mut self, phases: PhaseStack<T>) -> Result<()> {
        self.cascade = compose_cascade(&phases, &self.props)?;
        self.effective = &self.cascade * &self.props.w1;
        self.phases = phases;
        Ok(())
    }

    pub fn layout(&self) -> &SimLayout<T> {
        &self.layout
    }

    pub fn props(&self) -> &PropagationSet<T> {
        &self.props
    }

    pub fn phases(&self) -> &PhaseStack<T> {
        &self.phases
    }

    /// `G`, `N × N`.
    pub fn cascade(&self) -> &CMatrix<T> {
        &self.cascade
    }

    /// `G · W^1`, `N × N_t`.
    pub fn effective_map(&self) -> &CMatrix<T> {
        &self.effective
    }

    pub fn elements(&self) -> usize {
        self.props.elements()
    }

    pub fn antennas(&self) -> usize {
        self.props.antennas()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_layout, build_propagation_set, LayoutParams};
    use crate::scalar::rel_frobenius;
    use rand::SeedableRng;

    fn random_props(rng: &mut rand_chacha::ChaCha8Rng, layers: usize, n: usize, nt: usize) -> PropagationSet<f64> {
        let mut m = |r, c| CMatrix::<f64>::from_fn(r, c, |_, _| crate::scalar::sample_cn(rng));
        PropagationSet {
            w1: m(n, nt),
            inter_layer: (1..layers).map(|_| m(n, n)).collect(),
        }
    }

    fn naive_product(a: &CMatrix<f64>, b: &CMatrix<f64>) -> CMatrix<f64> {
        let mut out = CMatrix::zeros(a.nrows(), b.ncols());
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                for k in 0..a.ncols() {
                    out[(i, j)] += a[(i, k)] * b[(k, j)];
                }
            }
        }
        out
    }

    #[test]
    fn single_layer_unit_phases_give_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let props = random_props(&mut rng, 1, 5, 2);
        let g = compose_cascade(&PhaseStack::ones(1, 5), &props).unwrap();
        assert_eq!(g, CMatrix::identity(5, 5));
    }

    #[test]
    fn two_layers_unit_phases_give_w2() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let props = random_props(&mut rng, 2, 4, 2);
        let g = compose_cascade(&PhaseStack::ones(2, 4), &props).unwrap();
        assert!(rel_frobenius(&g, &props.inter_layer[0]) < 1e-15);
    }

    #[test]
    fn cascade_matches_naive_loops_and_any_grouping() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let props = random_props(&mut rng, 3, 4, 2);
        let phases = PhaseStack::<f64>::random(&mut rng, 3, 4);
        let g = compose_cascade(&phases, &props).unwrap();

        let d: Vec<CMatrix<f64>> = phases.theta.iter().map(CMatrix::from_diagonal).collect();
        let left = naive_product(
            &naive_product(&naive_product(&d[2], &props.inter_layer[1]), &naive_product(&d[1], &props.inter_layer[0])),
            &d[0],
        );
        let right = naive_product(
            &d[2],
            &naive_product(&props.inter_layer[1], &naive_product(&d[1], &naive_product(&props.inter_layer[0], &d[0]))),
        );
        assert!(rel_frobenius(&g, &left) < 1e-12);
        assert!(rel_frobenius(&g, &right) < 1e-12);

        let applied = apply_cascade(&phases, &props, &props.w1).unwrap();
        assert!(rel_frobenius(&applied, &(&g * &props.w1)) < 1e-12);
    }

    #[test]
    fn unit_phases_absorb_into_bare_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let props = random_props(&mut rng, 4, 3, 1);
        let g = compose_cascade(&PhaseStack::ones(4, 3), &props).unwrap();
        let bare = &props.inter_layer[2] * &props.inter_layer[1] * &props.inter_layer[0];
        assert!(rel_frobenius(&g, &bare) < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let props = random_props(&mut rng, 2, 4, 2);
        assert!(matches!(
            compose_cascade(&PhaseStack::ones(3, 4), &props),
            Err(SimError::Dimension { .. })
        ));
        assert!(compose_cascade(&PhaseStack::ones(2, 5), &props).is_err());
    }

    #[test]
    fn stack_caches_effective_map() {
        let layout = build_layout(&LayoutParams::half_wavelength(0.01, 2, 2, 2, 2)).unwrap();
        let props = build_propagation_set(&layout).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut stack = SimStack::new(layout, props, PhaseStack::ones(2, 4)).unwrap();
        let phases = PhaseStack::random(&mut rng, 2, 4);
        stack.set_phases(phases.clone()).unwrap();
        let g = compose_cascade(&phases, stack.props()).unwrap();
        assert_eq!(stack.cascade(), &g);
        assert!(rel_frobenius(stack.effective_map(), &(&g * &stack.props().w1)) < 1e-15);
        assert!(phases.max_modulus_deviation() < 4.0 * f64::EPSILON);
    }
}
