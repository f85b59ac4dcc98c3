use nalgebra::Vector3;

use crate::error::{Result, SimError};
use crate::scalar::{cis, cx, lit, to_f64, CMatrix, CVector, Cx, Real};

pub type Point<T> = Vector3<T>;

/// Physical parameters needed to lay out the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams<T> {
    pub num_layers: usize,
    pub elements_per_layer: usize,
    pub per_row: usize,
    pub per_col: usize,
    pub element_width: T,
    pub element_height: T,
    pub thickness: T,
    pub wavelength: T,
    pub antenna_count: usize,
    /// Spacing of the uniform linear antenna array.
    pub antenna_spacing: T,
    /// Height of the antenna plane above ground.
    pub height: T,
}

impl<T: Real> LayoutParams<T> {
    /// Half-wavelength elements and antennas, a `5λ` thick stack at 10 m.
    pub fn half_wavelength(
        wavelength: T,
        per_row: usize,
        per_col: usize,
        num_layers: usize,
        antenna_count: usize,
    ) -> Self {
        let half = wavelength * lit(0.5);
        Self {
            num_layers,
            elements_per_layer: per_row * per_col,
            per_row,
            per_col,
            element_width: half,
            element_height: half,
            thickness: wavelength * lit(5.0),
            wavelength,
            antenna_count,
            antenna_spacing: half,
            height: lit(10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLayout<T> {
    pub num_layers: usize,
    pub elements_per_layer: usize,
    pub per_row: usize,
    pub per_col: usize,
    pub element_width: T,
    pub element_height: T,
    pub layer_spacing: T,
    pub thickness: T,
    pub wavelength: T,
    pub element_area: T,
    pub antenna_count: usize,
    /// `element_positions[l][n]` is element `n` of layer `l + 1`.
    pub element_positions: Vec<Vec<Point<T>>>,
    pub antenna_positions: Vec<Point<T>>,
}

impl<T: Real> SimLayout<T> {
    /// Grid indices `(row, col)` of element `n`; `n = row · per_col + col`.
    pub fn grid_index(&self, n: usize) -> (usize, usize) {
        (n / self.per_col, n % self.per_col)
    }

    /// Elements of the layer facing the users.
    pub fn final_layer(&self) -> &[Point<T>] {
        &self.element_positions[self.num_layers - 1]
    }

    pub fn translated(&self, offset: Point<T>) -> Self {
        let mut out = self.clone();
        for layer in &mut out.element_positions {
            for p in layer.iter_mut() {
                *p += offset;
            }
        }
        for p in &mut out.antenna_positions {
            *p += offset;
        }
        out
    }
}

fn require_positive<T: Real>(name: &str, value: T) -> Result<()> {
    if value > T::zero() && value.is_finite() {
        Ok(())
    } else {
        Err(SimError::Config(format!(
            "{name} must be positive and finite, got {}",
            to_f64(value)
        )))
    }
}

/// Lays out the antenna array and the `L` element grids.
///
/// The grids are centred on the stacking (z) axis; layer `l` sits at axial
/// offset `l · T/L` above the antenna plane, and the antennas form a linear
/// array along x in the antenna plane.
pub fn build_layout<T: Real>(params: &LayoutParams<T>) -> Result<SimLayout<T>> {
    let p = params;
    if p.num_layers == 0 {
        return Err(SimError::Config("number of layers must be at least 1".into()));
    }
    if p.elements_per_layer == 0 || p.per_row == 0 || p.per_col == 0 {
        return Err(SimError::Config("element grid must be non-empty".into()));
    }
    if p.per_row * p.per_col != p.elements_per_layer {
        return Err(SimError::Config(format!(
            "grid {}x{} does not hold {} elements",
            p.per_row, p.per_col, p.elements_per_layer
        )));
    }
    if p.antenna_count == 0 {
        return Err(SimError::Config("antenna count must be at least 1".into()));
    }
    require_positive("element width", p.element_width)?;
    require_positive("element height", p.element_height)?;
    require_positive("thickness", p.thickness)?;
    require_positive("wavelength", p.wavelength)?;
    require_positive("antenna spacing", p.antenna_spacing)?;

    let layer_spacing = p.thickness / lit(p.num_layers as f64);
    let x0 = lit::<T>((p.per_row as f64 - 1.0) / 2.0);
    let y0 = lit::<T>((p.per_col as f64 - 1.0) / 2.0);
    let element_positions = (1..=p.num_layers)
        .map(|l| {
            let z = p.height + layer_spacing * lit(l as f64);
            (0..p.elements_per_layer)
                .map(|n| {
                    let (ix, iy) = (n / p.per_col, n % p.per_col);
                    Point::new(
                        (lit::<T>(ix as f64) - x0) * p.element_width,
                        (lit::<T>(iy as f64) - y0) * p.element_height,
                        z,
                    )
                })
                .collect()
        })
        .collect();
    let a0 = lit::<T>((p.antenna_count as f64 - 1.0) / 2.0);
    let antenna_positions = (0..p.antenna_count)
        .map(|a| Point::new((lit::<T>(a as f64) - a0) * p.antenna_spacing, T::zero(), p.height))
        .collect();

    Ok(SimLayout {
        num_layers: p.num_layers,
        elements_per_layer: p.elements_per_layer,
        per_row: p.per_row,
        per_col: p.per_col,
        element_width: p.element_width,
        element_height: p.element_height,
        layer_spacing,
        thickness: p.thickness,
        wavelength: p.wavelength,
        element_area: p.element_width * p.element_height,
        antenna_count: p.antenna_count,
        element_positions,
        antenna_positions,
    })
}

/// Rayleigh-Sommerfeld transmission coefficient from `src` to `dst`:
///
/// `w = (A cos χ / r) · (1/(2πr) − j/λ) · e^{j2πr/λ}`
///
/// where `χ` is the angle between `dst − src` and the source plane's normal
/// (+z).
pub fn diffraction_coefficient<T: Real>(
    src: &Point<T>,
    dst: &Point<T>,
    area: T,
    wavelength: T,
) -> Result<Cx<T>> {
    let d = dst - src;
    let r = d.norm();
    if !(r > T::zero()) {
        return Err(SimError::SingularGeometry { distance: to_f64(r) });
    }
    let cos_x = d.z / r;
    let two_pi = T::two_pi();
    let amplitude = area * cos_x / r;
    let near_far = cx(T::one() / (two_pi * r), -T::one() / wavelength);
    Ok(near_far * amplitude * cis(two_pi * r / wavelength))
}

/// Propagation matrices of the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationSet<T: Real> {
    /// `N × N_t`: antenna `a` to element `n` of layer 1.
    pub w1: CMatrix<T>,
    /// `W^2 .. W^L`, each `N × N`: element `ñ` of layer `l−1` to element `n`
    /// of layer `l`.
    pub inter_layer: Vec<CMatrix<T>>,
}

impl<T: Real> PropagationSet<T> {
    pub fn num_layers(&self) -> usize {
        self.inter_layer.len() + 1
    }

    pub fn elements(&self) -> usize {
        self.w1.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.w1.ncols()
    }

    /// Single layer with `W^1 = I_N`: the antennas observe the final layer
    /// directly.
    pub fn identity(n: usize) -> Self {
        Self {
            w1: CMatrix::identity(n, n),
            inter_layer: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        std::iter::once(&self.w1)
            .chain(self.inter_layer.iter())
            .all(|m| m.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

pub fn build_propagation_set<T: Real>(layout: &SimLayout<T>) -> Result<PropagationSet<T>> {
    let n = layout.elements_per_layer;
    let area = layout.element_area;
    let lambda = layout.wavelength;

    let first = &layout.element_positions[0];
    let mut w1 = CMatrix::zeros(n, layout.antenna_count);
    for (a, ant) in layout.antenna_positions.iter().enumerate() {
        for (i, el) in first.iter().enumerate() {
            w1[(i, a)] = diffraction_coefficient(ant, el, area, lambda)?;
        }
    }

    let mut inter_layer = Vec::with_capacity(layout.num_layers - 1);
    for pair in layout.element_positions.windows(2) {
        let (src, dst) = (&pair[0], &pair[1]);
        let mut w = CMatrix::zeros(n, n);
        for (j, s) in src.iter().enumerate() {
            for (i, d) in dst.iter().enumerate() {
                w[(i, j)] = diffraction_coefficient(s, d, area, lambda)?;
            }
        }
        inter_layer.push(w);
    }
    Ok(PropagationSet { w1, inter_layer })
}

/// Planar-array response to a plane wave from `(azimuth, elevation)`.
///
/// Entry `n` (0-based) is
/// `exp{j2π(d/λ)[⌊n/c⌋ sin φe sin φa + (n mod c) cos φe]}` with `c` the
/// grid width (`√N` for square arrays).
pub fn steering_vector<T: Real>(
    azimuth: T,
    elevation: T,
    n: usize,
    grid_cols: usize,
    spacing: T,
    wavelength: T,
) -> Result<CVector<T>> {
    if n == 0 || grid_cols == 0 {
        return Err(SimError::Config("steering vector needs N ≥ 1".into()));
    }
    if n % grid_cols != 0 {
        return Err(SimError::Config(format!(
            "grid width {grid_cols} does not divide N = {n}"
        )));
    }
    let k = T::two_pi() * spacing / wavelength;
    let u = elevation.sin() * azimuth.sin();
    let v = elevation.cos();
    Ok(CVector::from_fn(n, |i, _| {
        let row = lit::<T>((i / grid_cols) as f64);
        let col = lit::<T>((i % grid_cols) as f64);
        cis(k * (row * u + col * v))
    }))
}

/// Distance-based path loss `β = C0 · (d/d0)^{−b}`.
pub fn path_loss<T: Real>(distance: T, d0: T, exponent: T, c0: T) -> Result<T> {
    require_positive("reference distance", d0)?;
    require_positive("path-loss exponent", exponent)?;
    require_positive("path-loss constant", c0)?;
    if !(distance >= d0) {
        return Err(SimError::Config(format!(
            "distance {} m is below the reference distance {} m",
            to_f64(distance),
            to_f64(d0)
        )));
    }
    Ok(c0 * (distance / d0).powf(-exponent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    const LAMBDA: f64 = 299_792_458.0 / 28e9;

    fn params(nx: usize, ny: usize, layers: usize) -> LayoutParams<f64> {
        LayoutParams::half_wavelength(LAMBDA, nx, ny, layers, 4)
    }

    /// Independent transcription of the coefficient formula in plain f64.
    fn coefficient_oracle(src: [f64; 3], dst: [f64; 3], area: f64, lambda: f64) -> (f64, f64) {
        let dx = dst[0] - src[0];
        let dy = dst[1] - src[1];
        let dz = dst[2] - src[2];
        let r = (dx * dx + dy * dy + dz * dz).sqrt();
        let scale = area * (dz / r) / r;
        let (a_re, a_im) = (1.0 / (2.0 * PI * r), -1.0 / lambda);
        let (c, s) = ((2.0 * PI * r / lambda).cos(), (2.0 * PI * r / lambda).sin());
        (scale * (a_re * c - a_im * s), scale * (a_re * s + a_im * c))
    }

    #[test]
    fn reference_grid_is_eight_by_four() {
        let layout = build_layout(&params(8, 4, 6)).unwrap();
        assert_eq!(layout.elements_per_layer, 32);
        assert_eq!(layout.element_positions.len(), 6);
        let xs: std::collections::BTreeSet<i64> = layout.element_positions[0]
            .iter()
            .map(|p| (p.x / LAMBDA * 1e6).round() as i64)
            .collect();
        let ys: std::collections::BTreeSet<i64> = layout.element_positions[0]
            .iter()
            .map(|p| (p.y / LAMBDA * 1e6).round() as i64)
            .collect();
        assert_eq!(xs.len(), 8);
        assert_eq!(ys.len(), 4);
    }

    #[test]
    fn layer_spacing_is_thickness_over_layers() {
        let one = build_layout(&params(2, 2, 1)).unwrap();
        assert_relative_eq!(one.layer_spacing, 5.0 * LAMBDA, max_relative = 1e-15);

        let five = build_layout(&params(2, 2, 5)).unwrap();
        assert_relative_eq!(five.layer_spacing, LAMBDA, max_relative = 1e-15);
        for (l, layer) in five.element_positions.iter().enumerate() {
            let offset = layer[0].z - five.antenna_positions[0].z;
            assert_relative_eq!(offset, (l + 1) as f64 * LAMBDA, max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_grids_and_dimensions() {
        let mut p = params(8, 4, 2);
        p.elements_per_layer = 30;
        assert!(matches!(build_layout(&p), Err(SimError::Config(_))));
        let mut p = params(8, 4, 2);
        p.thickness = 0.0;
        assert!(build_layout(&p).is_err());
        let mut p = params(8, 4, 2);
        p.num_layers = 0;
        assert!(build_layout(&p).is_err());
        let mut p = params(8, 4, 2);
        p.wavelength = -1.0;
        assert!(build_layout(&p).is_err());
    }

    #[test]
    fn boresight_coefficient_at_one_wavelength() {
        let lambda = 0.01;
        let src = Point::new(0.0, 0.0, 0.0);
        let dst = Point::new(0.0, 0.0, lambda);
        let w = diffraction_coefficient(&src, &dst, lambda * lambda / 4.0, lambda).unwrap();
        // (λ/4)(1/(2πλ) − j/λ) e^{j2π} = 1/(8π) − j/4
        assert_relative_eq!(w.re, 1.0 / (8.0 * PI), max_relative = 1e-12);
        assert_relative_eq!(w.im, -0.25, max_relative = 1e-12);
    }

    #[test]
    fn mirror_symmetric_destinations_match() {
        let src = Point::new(0.1, -0.2, 1.0);
        let a = Point::new(0.1 + 0.03, -0.2 + 0.01, 1.02);
        let b = Point::new(0.1 - 0.03, -0.2 + 0.01, 1.02);
        let wa = diffraction_coefficient(&src, &a, 1e-4, LAMBDA).unwrap();
        let wb = diffraction_coefficient(&src, &b, 1e-4, LAMBDA).unwrap();
        assert_relative_eq!(wa.re, wb.re, max_relative = 1e-14);
        assert_relative_eq!(wa.im, wb.im, max_relative = 1e-14);
    }

    #[test]
    fn coincident_points_are_singular() {
        let p = Point::new(1.0, 2.0, 3.0);
        assert!(matches!(
            diffraction_coefficient(&p, &p, 1.0, 1.0),
            Err(SimError::SingularGeometry { .. })
        ));
    }

    #[test]
    fn coefficient_matches_scalar_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let src = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let dst = [
                rng.random::<f64>(),
                rng.random::<f64>(),
                src[2] + 0.01 + rng.random::<f64>(),
            ];
            let area = 1e-5 + rng.random::<f64>() * 1e-4;
            let w = diffraction_coefficient(
                &Point::from(src),
                &Point::from(dst),
                area,
                LAMBDA,
            )
            .unwrap();
            let (re, im) = coefficient_oracle(src, dst, area, LAMBDA);
            let scale = (re * re + im * im).sqrt();
            assert!(((w.re - re).powi(2) + (w.im - im).powi(2)).sqrt() <= 1e-15 * scale * 4.0);
        }
    }

    #[test]
    fn boresight_magnitude_decreases_with_distance() {
        let src = Point::new(0.0, 0.0, 0.0);
        let start = LAMBDA / (2.0 * PI);
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let r = start * (1.0 + i as f64 * 0.05);
            let w = diffraction_coefficient(&src, &Point::new(0.0, 0.0, r), 1e-5, LAMBDA).unwrap();
            let m = w.norm();
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn single_layer_has_no_inter_layer_matrices() {
        let layout = build_layout(&params(2, 2, 1)).unwrap();
        let props = build_propagation_set(&layout).unwrap();
        assert!(props.inter_layer.is_empty());
        assert_eq!(props.w1.shape(), (4, 4));
    }

    #[test]
    fn propagation_entries_match_pairwise_loop() {
        let layout = build_layout(&params(2, 2, 3)).unwrap();
        let props = build_propagation_set(&layout).unwrap();
        assert_eq!(props.inter_layer.len(), 2);
        for l in 1..3 {
            for n in 0..4 {
                for m in 0..4 {
                    let src = layout.element_positions[l - 1][m];
                    let dst = layout.element_positions[l][n];
                    let (re, im) = coefficient_oracle(
                        [src.x, src.y, src.z],
                        [dst.x, dst.y, dst.z],
                        layout.element_area,
                        LAMBDA,
                    );
                    let w = props.inter_layer[l - 1][(n, m)];
                    assert_relative_eq!(w.re, re, max_relative = 1e-13, epsilon = 1e-18);
                    assert_relative_eq!(w.im, im, max_relative = 1e-13, epsilon = 1e-18);
                }
            }
        }
        for a in 0..4 {
            for n in 0..4 {
                let src = layout.antenna_positions[a];
                let dst = layout.element_positions[0][n];
                let (re, im) = coefficient_oracle(
                    [src.x, src.y, src.z],
                    [dst.x, dst.y, dst.z],
                    layout.element_area,
                    LAMBDA,
                );
                assert_relative_eq!(props.w1[(n, a)].re, re, max_relative = 1e-13, epsilon = 1e-18);
                assert_relative_eq!(props.w1[(n, a)].im, im, max_relative = 1e-13, epsilon = 1e-18);
            }
        }
        assert!(props.is_finite());
    }

    #[test]
    fn translation_leaves_propagation_unchanged() {
        let layout = build_layout(&params(4, 2, 3)).unwrap();
        let moved = layout.translated(Point::new(0.75, -1.25, 3.5));
        let a = build_propagation_set(&layout).unwrap();
        let b = build_propagation_set(&moved).unwrap();
        assert!(crate::scalar::rel_frobenius(&b.w1, &a.w1) < 1e-12);
        for (x, y) in a.inter_layer.iter().zip(&b.inter_layer) {
            assert!(crate::scalar::rel_frobenius(y, x) < 1e-12);
        }
    }

    #[test]
    fn steering_vector_edge_cases() {
        let a = steering_vector(0.3, 1.1, 16, 4, LAMBDA / 2.0, LAMBDA).unwrap();
        assert_relative_eq!(a[0].re, 1.0);
        assert_relative_eq!(a[0].im, 0.0);
        for z in a.iter() {
            assert!((z.norm() - 1.0).abs() < 4.0 * f64::EPSILON);
        }

        let flat = steering_vector(0.0, PI / 2.0, 32, 4, LAMBDA / 2.0, LAMBDA).unwrap();
        for z in flat.iter() {
            assert!((z - Cx::new(1.0, 0.0)).norm() < 1e-14);
        }
        assert!(steering_vector(0.0, 0.0, 0, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn steering_vector_matches_per_entry_oracle() {
        let (az, el) = (PI / 4.0, PI / 3.0);
        let a = steering_vector(az, el, 16, 4, LAMBDA / 2.0, LAMBDA).unwrap();
        for n in 1..=16usize {
            let row = ((n - 1) / 4) as f64;
            let col = ((n - 1) % 4) as f64;
            let phase = 2.0 * PI * 0.5 * (row * el.sin() * az.sin() + col * el.cos());
            assert!((a[n - 1] - Cx::new(phase.cos(), phase.sin())).norm() < 1e-13);
        }
    }

    #[test]
    fn path_loss_values() {
        assert_relative_eq!(path_loss(1.0, 1.0, 3.5, 2.0).unwrap(), 2.0);
        assert_relative_eq!(path_loss(10.0, 1.0, 3.5, 1.0).unwrap(), 10f64.powf(-3.5), max_relative = 1e-14);

        let lambda = 0.0107;
        let c0 = (lambda / (4.0 * PI)).powi(2);
        let beta = path_loss(70.0, 1.0, 3.5, c0).unwrap();
        // (0.0107 / 4π)² = 7.2502e-7 computed by hand.
        assert_relative_eq!(c0, 7.2502e-7, max_relative = 1e-4);
        assert_relative_eq!(beta, 7.2502e-7 * 70f64.powf(-3.5), max_relative = 1e-4);

        assert!(path_loss(0.5, 1.0, 3.5, 1.0).is_err());
        assert!(path_loss(20.0, 1.0, 3.5, 1.0).unwrap() < path_loss(10.0, 1.0, 3.5, 1.0).unwrap());
    }
}
