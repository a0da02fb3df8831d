//! Star-shaped planar curves in polar form, random Fourier perturbations,
//! boundary sampling, and the shape functionals evaluated on them.

use std::f64::consts::{PI, TAU};

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{squared_euclidean_cost, DiscreteMeasure, Point};
use crate::rng::symmetric_f64;
use crate::transport::{sinkhorn_divergence, solve_exact_ot, SolverParams};

/// Unperturbed radius function `r(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseRadius {
    Circle { radius: f64 },
    /// Equilateral triangle centred at the origin with a vertex on the
    /// positive y-axis.
    Triangle { circumradius: f64 },
    /// Periodic piecewise-linear table. Angles are strictly increasing in
    /// `[0, 2pi)`.
    Tabulated { angles: Vec<f64>, radii: Vec<f64> },
}

impl BaseRadius {
    pub fn unit_circle() -> Self {
        BaseRadius::Circle { radius: 1.0 }
    }

    pub fn unit_triangle() -> Self {
        BaseRadius::Triangle { circumradius: 1.0 }
    }

    /// Tabulates the polar radius of each atom of a point cloud.
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let mut table: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (p[1].atan2(p[0]).rem_euclid(TAU), p[0].hypot(p[1])))
            .collect();
        table.sort_by(|a, b| a.0.total_cmp(&b.0));
        table.dedup_by(|a, b| a.0 == b.0);
        if table.is_empty() {
            return Err(Error::EmptySupport);
        }
        let (angles, radii) = table.into_iter().unzip();
        Ok(BaseRadius::Tabulated { angles, radii })
    }

    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            BaseRadius::Circle { radius } => *radius,
            BaseRadius::Triangle { circumradius } => {
                // Edge normals sit at pi/6 + 2pi k/3; the inradius is R/2.
                let sector = TAU / 3.0;
                let offset = (theta - PI / 6.0 + PI / 3.0).rem_euclid(sector) - PI / 3.0;
                0.5 * circumradius / offset.cos()
            }
            BaseRadius::Tabulated { angles, radii } => {
                let theta = theta.rem_euclid(TAU);
                let n = angles.len();
                if n == 1 {
                    return radii[0];
                }
                let hi = angles.partition_point(|&a| a <= theta);
                let (lo, hi) = if hi == 0 || hi == n {
                    (n - 1, 0)
                } else {
                    (hi - 1, hi)
                };
                let (a0, a1) = (angles[lo], angles[hi]);
                let span = (a1 - a0).rem_euclid(TAU);
                let along = (theta - a0).rem_euclid(TAU);
                if span == 0.0 {
                    return radii[lo];
                }
                let w = along / span;
                (1.0 - w) * radii[lo] + w * radii[hi]
            }
        }
    }
}

/// `psi(theta) = a0 + sum_k a_k sin(k theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierPerturbation {
    pub a0: f64,
    pub coefficients: Vec<f64>,
    pub delta: f64,
}

impl FourierPerturbation {
    pub fn zero(k: usize) -> Self {
        Self {
            a0: 0.0,
            coefficients: vec![0.0; k],
            delta: 0.0,
        }
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let mut value = self.a0;
        for (k, a) in self.coefficients.iter().enumerate() {
            value += a * ((k + 1) as f64 * theta).sin();
        }
        value
    }
}

/// Draws `a_1..a_K` i.i.d. uniform on `[-delta, delta]` from `rng`.
///
/// `delta = 0` is accepted and yields the constant perturbation `a0`.
pub fn sample_fourier_perturbation(
    rng: &mut impl RngCore,
    k: usize,
    delta: f64,
    a0: f64,
) -> Result<FourierPerturbation> {
    if k == 0 {
        return Err(Error::Config("Fourier order K must be at least 1".into()));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Config(format!("delta must be nonnegative, got {delta}")));
    }
    let coefficients = (0..k).map(|_| symmetric_f64(rng, delta)).collect();
    Ok(FourierPerturbation {
        a0,
        coefficients,
        delta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarShape {
    pub base: BaseRadius,
    pub perturbation: Option<FourierPerturbation>,
}

impl PolarShape {
    pub fn new(base: BaseRadius) -> Self {
        Self {
            base,
            perturbation: None,
        }
    }

    pub fn perturbed(base: BaseRadius, perturbation: FourierPerturbation) -> Self {
        Self {
            base,
            perturbation: Some(perturbation),
        }
    }

    /// Smallest effective radius over `samples` equally spaced angles.
    pub fn min_radius(&self, samples: usize) -> f64 {
        (0..samples)
            .map(|j| evaluate_radius(self, TAU * j as f64 / samples as f64))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `r(theta) + psi(theta)`, with `psi = 0` when unperturbed.
pub fn evaluate_radius(shape: &PolarShape, theta: f64) -> f64 {
    let theta = theta.rem_euclid(TAU);
    let r = shape.base.eval(theta);
    match &shape.perturbation {
        Some(p) => r + p.eval(theta),
        None => r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// `theta_j = 2 pi j / n`
    #[default]
    AngleUniform,
    /// Equal arclength spacing along the curve.
    ArclengthUniform,
}

/// Oversampling factor of the chord-length table used for arclength sampling.
const ARCLENGTH_REFINEMENT: usize = 64;

fn polar_point(shape: &PolarShape, theta: f64) -> Result<Point> {
    let r = evaluate_radius(shape, theta);
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::NotJordan { theta, radius: r });
    }
    Ok([r * theta.cos(), r * theta.sin()])
}

fn sample_angles(shape: &PolarShape, n: usize, mode: SamplingMode) -> Result<Vec<f64>> {
    match mode {
        SamplingMode::AngleUniform => Ok((0..n).map(|j| TAU * j as f64 / n as f64).collect()),
        SamplingMode::ArclengthUniform => {
            let fine = n * ARCLENGTH_REFINEMENT;
            let thetas: Vec<f64> = (0..=fine).map(|j| TAU * j as f64 / fine as f64).collect();
            let pts = thetas
                .iter()
                .map(|&t| polar_point(shape, t))
                .collect::<Result<Vec<_>>>()?;
            let mut cumulative = Vec::with_capacity(fine + 1);
            cumulative.push(0.0);
            for w in pts.windows(2) {
                let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                cumulative.push(cumulative.last().unwrap() + d);
            }
            let total = cumulative[fine];
            let mut out = Vec::with_capacity(n);
            let mut seg = 0usize;
            for j in 0..n {
                let target = total * j as f64 / n as f64;
                while seg + 1 < fine && cumulative[seg + 1] < target {
                    seg += 1;
                }
                let (s0, s1) = (cumulative[seg], cumulative[seg + 1]);
                let w = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
                out.push(thetas[seg] + w * (thetas[seg + 1] - thetas[seg]));
            }
            Ok(out)
        }
    }
}

/// Ordered boundary points of `shape`.
pub fn boundary_points(shape: &PolarShape, n: usize, mode: SamplingMode) -> Result<Vec<Point>> {
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n });
    }
    sample_angles(shape, n, mode)?
        .into_iter()
        .map(|t| polar_point(shape, t))
        .collect()
}

/// Uniform empirical measure on `n` boundary samples.
pub fn discretize_shape(shape: &PolarShape, n: usize, mode: SamplingMode) -> Result<DiscreteMeasure> {
    DiscreteMeasure::uniform(boundary_points(shape, n, mode)?)
}

/// Moves every atom radially by `psi(theta)`, keeping weights.
pub fn perturb_measure(
    measure: &DiscreteMeasure,
    perturbation: &FourierPerturbation,
) -> Result<DiscreteMeasure> {
    let points = measure
        .points()
        .iter()
        .map(|p| {
            let theta = p[1].atan2(p[0]).rem_euclid(TAU);
            let r = p[0].hypot(p[1]) + perturbation.eval(theta);
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::NotJordan { theta, radius: r });
            }
            Ok([r * theta.cos(), r * theta.sin()])
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteMeasure::new(points, measure.weights().to_vec())
}

/// Shoelace area of a closed polygon, orientation-independent.
pub fn polygon_area(points: &[Point]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let n = points.len();
    let mut twice = 0.0;
    for i in 0..n {
        let (p, q) = (points[i], points[(i + 1) % n]);
        twice += p[0] * q[1] - q[0] * p[1];
    }
    Ok(twice.abs() / 2.0)
}

/// Sum of chord lengths around the closed polygon.
pub fn polygon_perimeter(points: &[Point]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let n = points.len();
    Ok((0..n)
        .map(|i| {
            let (p, q) = (points[i], points[(i + 1) % n]);
            (q[0] - p[0]).hypot(q[1] - p[1])
        })
        .sum())
}

/// `Vol / Per^2` of the angle-uniform `n`-point discretization.
pub fn isoperimetric_ratio(shape: &PolarShape, n: usize) -> Result<f64> {
    isoperimetric_ratio_of_points(&boundary_points(shape, n, SamplingMode::AngleUniform)?)
}

pub fn isoperimetric_ratio_of_points(points: &[Point]) -> Result<f64> {
    let per = polygon_perimeter(points)?;
    if per <= 0.0 {
        return Err(Error::ZeroPerimeter);
    }
    Ok(polygon_area(points)? / (per * per))
}

/// `V(omega) = OT(omega, a) * OT(omega, b)`, the product of squared
/// Wasserstein distances to the two wells.
pub fn double_well(omega: &DiscreteMeasure, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    let to_a = solve_exact_ot(omega, a, &squared_euclidean_cost(omega, a))?.value;
    let to_b = solve_exact_ot(omega, b, &squared_euclidean_cost(omega, b))?.value;
    Ok(to_a * to_b)
}

/// `F_eps(omega) = sqrt(SD_eps(omega, a))`.
pub fn cone_functional(
    omega: &DiscreteMeasure,
    a: &DiscreteMeasure,
    params: &SolverParams,
) -> Result<f64> {
    Ok(sinkhorn_divergence(omega, a, params)?.max(0.0).sqrt())
}

/// One point of a functional landscape.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalSample {
    pub shape_id: usize,
    pub functional_value: f64,
    pub embedding_point: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::shape_stream;
    use crate::transport::displacement_interpolate;

    fn circle() -> PolarShape {
        PolarShape::new(BaseRadius::unit_circle())
    }

    fn circle_points(n: usize) -> Vec<Point> {
        boundary_points(&circle(), n, SamplingMode::AngleUniform).unwrap()
    }

    #[test]
    fn zero_delta_gives_constant_perturbation() {
        let p = sample_fourier_perturbation(&mut shape_stream(1, 0), 5, 0.0, 0.2).unwrap();
        assert!(p.coefficients.iter().all(|&a| a == 0.0));
        assert_eq!(p.eval(1.234), 0.2);
    }

    #[test]
    fn perturbation_is_reproducible() {
        let a = sample_fourier_perturbation(&mut shape_stream(42, 0), 5, 0.1, 0.0).unwrap();
        let b = sample_fourier_perturbation(&mut shape_stream(42, 0), 5, 0.1, 0.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.order(), 5);
        assert!(a.coefficients.iter().all(|c| c.abs() <= 0.1));
    }

    #[test]
    fn coefficient_means_are_centered() {
        let (k, delta, draws) = (5, 0.1, 10_000);
        let mut rng = shape_stream(3, 0);
        let mut sums = vec![0.0; k];
        for _ in 0..draws {
            let p = sample_fourier_perturbation(&mut rng, k, delta, 0.0).unwrap();
            for (s, a) in sums.iter_mut().zip(&p.coefficients) {
                *s += a;
            }
        }
        let limit = 3.0 * delta / (3.0 * draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64).abs() < limit);
        }
    }

    #[test]
    fn invalid_fourier_parameters() {
        assert!(sample_fourier_perturbation(&mut shape_stream(0, 0), 0, 0.1, 0.0).is_err());
        assert!(sample_fourier_perturbation(&mut shape_stream(0, 0), 3, -0.1, 0.0).is_err());
    }

    #[test]
    fn radius_evaluation() {
        assert_eq!(evaluate_radius(&circle(), 2.5), 1.0);
        let offset = PolarShape::perturbed(
            BaseRadius::unit_circle(),
            FourierPerturbation {
                a0: 0.1,
                coefficients: vec![0.0; 5],
                delta: 0.1,
            },
        );
        assert!((evaluate_radius(&offset, 0.3) - 1.1).abs() < 1e-15);
        let first = PolarShape::perturbed(
            BaseRadius::unit_circle(),
            FourierPerturbation {
                a0: 0.0,
                coefficients: vec![0.1, 0.0, 0.0],
                delta: 0.1,
            },
        );
        assert!((evaluate_radius(&first, PI / 2.0) - 1.1).abs() < 1e-15);
        assert!((evaluate_radius(&first, 0.7) - (1.0 + 0.1 * 0.7f64.sin())).abs() < 1e-15);
    }

    #[test]
    fn triangle_radius() {
        let tri = BaseRadius::unit_triangle();
        // vertices at 90, 210, 330 degrees; edge midpoints at the inradius
        for deg in [90.0f64, 210.0, 330.0] {
            assert!((tri.eval(deg.to_radians()) - 1.0).abs() < 1e-12);
        }
        for deg in [30.0f64, 150.0, 270.0] {
            assert!((tri.eval(deg.to_radians()) - 0.5).abs() < 1e-12);
        }
        let pts = boundary_points(&PolarShape::new(tri), 3000, SamplingMode::AngleUniform).unwrap();
        let area = polygon_area(&pts).unwrap();
        let side = 3f64.sqrt();
        assert!((area - side * side * 3f64.sqrt() / 4.0).abs() < 1e-6);
    }

    #[test]
    fn tabulated_radius_interpolates_periodically() {
        let base = BaseRadius::Tabulated {
            angles: vec![0.0, PI],
            radii: vec![1.0, 2.0],
        };
        assert_eq!(base.eval(0.0), 1.0);
        assert_eq!(base.eval(PI / 2.0), 1.5);
        assert_eq!(base.eval(1.5 * PI), 1.5);
        assert_eq!(base.eval(-PI / 2.0), 1.5);
    }

    #[test]
    fn four_point_circle() {
        let pts = circle_points(4);
        let want = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (p, w) in pts.iter().zip(want) {
            assert!((p[0] - w[0]).abs() <= 1e-15 && (p[1] - w[1]).abs() <= 1e-15);
        }
        let m = discretize_shape(&circle(), 4, SamplingMode::AngleUniform).unwrap();
        assert_eq!(m.weights(), &[0.25; 4]);
    }

    #[test]
    fn circle_sampling_modes_agree() {
        let a = boundary_points(&circle(), 64, SamplingMode::AngleUniform).unwrap();
        let b = boundary_points(&circle(), 64, SamplingMode::ArclengthUniform).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn arclength_sampling_equalizes_chords() {
        let ellipse_like = PolarShape::perturbed(
            BaseRadius::unit_circle(),
            FourierPerturbation {
                a0: 0.0,
                coefficients: vec![0.0, 0.4],
                delta: 0.4,
            },
        );
        let pts = boundary_points(&ellipse_like, 512, SamplingMode::ArclengthUniform).unwrap();
        let chords: Vec<f64> = (0..pts.len())
            .map(|i| {
                let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
                (q[0] - p[0]).hypot(q[1] - p[1])
            })
            .collect();
        let max = chords.iter().copied().fold(0.0, f64::max);
        let min = chords.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((max - min) / max < 0.01, "chord spread {min} .. {max}");
    }

    #[test]
    fn nonpositive_radius_is_rejected() {
        let bad = PolarShape::perturbed(
            BaseRadius::unit_circle(),
            FourierPerturbation {
                a0: -0.5,
                coefficients: vec![0.6],
                delta: 0.6,
            },
        );
        let err = discretize_shape(&bad, 16, SamplingMode::AngleUniform).unwrap_err();
        assert!(err.to_string().contains("not a Jordan curve in polar form"));
    }

    #[test]
    fn polygon_measures() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(polygon_area(&square).unwrap(), 1.0);
        assert_eq!(polygon_perimeter(&square).unwrap(), 4.0);
        assert_eq!(isoperimetric_ratio_of_points(&square).unwrap(), 1.0 / 16.0);
        let mut rev = square;
        rev.reverse();
        assert_eq!(polygon_area(&rev).unwrap(), 1.0);
        assert_eq!(polygon_perimeter(&[[1.0, 1.0]; 3]).unwrap(), 0.0);
        assert!(matches!(
            isoperimetric_ratio_of_points(&[[1.0, 1.0]; 3]),
            Err(Error::ZeroPerimeter)
        ));
        assert!(polygon_area(&square[..2]).is_err());
        assert!(polygon_perimeter(&square[..2]).is_err());
    }

    #[test]
    fn circle_polygon_matches_inscribed_forms() {
        let n = 512;
        let pts = circle_points(n);
        let nf = n as f64;
        let area = polygon_area(&pts).unwrap();
        let per = polygon_perimeter(&pts).unwrap();
        assert!((area - PI).abs() < 2e-4);
        assert!((per - 2.0 * PI).abs() < 2e-4);
        assert!((area - nf / 2.0 * (TAU / nf).sin()).abs() < 1e-12);
        assert!((per - 2.0 * nf * (PI / nf).sin()).abs() < 1e-12);
        let ratio = isoperimetric_ratio(&circle(), n).unwrap();
        assert!((ratio - 1.0 / (4.0 * PI)).abs() < 1e-3);
    }

    #[test]
    fn perturbed_circles_have_smaller_ratio() {
        let circle_ratio = isoperimetric_ratio(&circle(), 512).unwrap();
        for id in 1..=50 {
            let p = sample_fourier_perturbation(&mut shape_stream(11, id), 5, 0.1, 0.0).unwrap();
            let shape = PolarShape::perturbed(BaseRadius::unit_circle(), p);
            assert!(isoperimetric_ratio(&shape, 512).unwrap() < circle_ratio);
        }
    }

    #[test]
    fn perturb_measure_moves_radially() {
        let m = discretize_shape(&circle(), 8, SamplingMode::AngleUniform).unwrap();
        let p = FourierPerturbation {
            a0: 0.5,
            coefficients: vec![],
            delta: 0.0,
        };
        let moved = perturb_measure(&m, &p).unwrap();
        for q in moved.points() {
            assert!((q[0].hypot(q[1]) - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn double_well_zeros_and_positive_midpoint() {
        let a = discretize_shape(&circle(), 24, SamplingMode::AngleUniform).unwrap();
        let b = discretize_shape(
            &PolarShape::new(BaseRadius::unit_triangle()),
            24,
            SamplingMode::AngleUniform,
        )
        .unwrap();
        assert_eq!(double_well(&a, &a, &b).unwrap(), 0.0);
        assert_eq!(double_well(&b, &a, &b).unwrap(), 0.0);
        let mid = displacement_interpolate(&a, &b, 0.5).unwrap();
        assert!(double_well(&mid, &a, &b).unwrap() > 0.0);
    }

    #[test]
    fn cone_functional_zero_at_apex_and_symmetric() {
        let a = discretize_shape(&circle(), 16, SamplingMode::AngleUniform).unwrap();
        let p = sample_fourier_perturbation(&mut shape_stream(5, 1), 5, 0.06, 0.0).unwrap();
        let w = discretize_shape(
            &PolarShape::perturbed(BaseRadius::unit_circle(), p),
            16,
            SamplingMode::AngleUniform,
        )
        .unwrap();
        let params = SolverParams::default().with_epsilon(0.01);
        assert_eq!(cone_functional(&a, &a, &params).unwrap(), 0.0);
        let f1 = cone_functional(&w, &a, &params).unwrap();
        let f2 = cone_functional(&a, &w, &params).unwrap();
        assert!(f1 > 0.0);
        assert!((f1 - f2).abs() < 1e-9);
    }
}
