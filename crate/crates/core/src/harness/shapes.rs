//! Deterministic shape collections for each experiment.
//!
//! Shape `id` draws its perturbation from stream `id` of the experiment seed
//! and redraws from that same stream until the radius stays above
//! [`MIN_RADIUS`], so every shape depends only on `(seed, id)`.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind, MAX_RETRIES, MIN_RADIUS, RADIUS_GRID};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::rng::shape_stream;
use crate::shape::{
    discretize_shape, perturb_measure, sample_fourier_perturbation, BaseRadius,
    FourierPerturbation, PolarShape,
};
use crate::transport::displacement_interpolate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeBase {
    Circle,
    Triangle,
    /// Displacement interpolant between the circle and the triangle.
    Interpolant,
}

/// One entry of `shapes.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeRecord {
    pub id: usize,
    pub a0: f64,
    pub coeffs: Vec<f64>,
    pub base: ShapeBase,
    pub t: Option<f64>,
}

impl ShapeRecord {
    pub fn is_unperturbed(&self) -> bool {
        self.a0 == 0.0 && self.coeffs.iter().all(|&c| c == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedShape {
    pub record: ShapeRecord,
    pub measure: DiscreteMeasure,
}

/// Collection plus the reference measures the functionals compare against.
#[derive(Debug, Clone)]
pub struct ShapeCollection {
    pub shapes: Vec<GeneratedShape>,
    pub circle: DiscreteMeasure,
    pub triangle: Option<DiscreteMeasure>,
}

impl ShapeCollection {
    pub fn measures(&self) -> Vec<DiscreteMeasure> {
        self.shapes.iter().map(|s| s.measure.clone()).collect()
    }

    pub fn records(&self) -> Vec<&ShapeRecord> {
        self.shapes.iter().map(|s| &s.record).collect()
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.records()).expect("records serialize");
        out.push('\n');
        out
    }
}

fn record(id: usize, p: &FourierPerturbation, base: ShapeBase, t: Option<f64>) -> ShapeRecord {
    ShapeRecord {
        id,
        a0: p.a0,
        coeffs: p.coefficients.clone(),
        base,
        t,
    }
}

/// Random perturbation of `base` whose effective radius stays above
/// `MIN_RADIUS` on the validation grid.
pub fn perturbed_polar_shape(
    config: &ExperimentConfig,
    base: &BaseRadius,
    id: usize,
) -> Result<(FourierPerturbation, PolarShape)> {
    let f = &config.fourier;
    let mut rng = shape_stream(config.seed, id as u64);
    for _ in 0..=MAX_RETRIES {
        let p = sample_fourier_perturbation(&mut rng, f.k, f.delta, f.a0)?;
        let shape = PolarShape::perturbed(base.clone(), p.clone());
        if shape.min_radius(RADIUS_GRID) >= MIN_RADIUS {
            return Ok((p, shape));
        }
    }
    Err(Error::GenerationRetries(MAX_RETRIES).at_shape(id))
}

fn perturbed_measure(
    config: &ExperimentConfig,
    measure: &DiscreteMeasure,
    id: usize,
) -> Result<(FourierPerturbation, DiscreteMeasure)> {
    let f = &config.fourier;
    let mut rng = shape_stream(config.seed, id as u64);
    for _ in 0..=MAX_RETRIES {
        let p = sample_fourier_perturbation(&mut rng, f.k, f.delta, f.a0)?;
        if let Ok(m) = perturb_measure(measure, &p) {
            if m.points().iter().all(|q| q[0].hypot(q[1]) >= MIN_RADIUS) {
                return Ok((p, m));
            }
        }
    }
    Err(Error::GenerationRetries(MAX_RETRIES).at_shape(id))
}

pub fn generate_shapes(config: &ExperimentConfig) -> Result<ShapeCollection> {
    let n = config.n_points;
    let mode = config.sampling;
    let circle_shape = PolarShape::new(BaseRadius::unit_circle());
    let circle = discretize_shape(&circle_shape, n, mode)?;
    if config.experiment == ExperimentKind::DoubleWell {
        return generate_double_well(config, circle);
    }
    // the landscapes include the unperturbed circle as shape 0
    let with_circle = matches!(config.experiment, ExperimentKind::Dido | ExperimentKind::Cone);
    let base = BaseRadius::unit_circle();
    let shapes = (0..config.num_shapes)
        .into_par_iter()
        .map(|id| {
            if with_circle && id == 0 {
                let zero = FourierPerturbation::zero(config.fourier.k);
                return Ok(GeneratedShape {
                    record: record(id, &zero, ShapeBase::Circle, None),
                    measure: circle.clone(),
                });
            }
            let (p, shape) = perturbed_polar_shape(config, &base, id)?;
            let measure = discretize_shape(&shape, n, mode).map_err(|e| e.at_shape(id))?;
            Ok(GeneratedShape {
                record: record(id, &p, ShapeBase::Circle, None),
                measure,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapeCollection {
        shapes,
        circle,
        triangle: None,
    })
}

/// Shape `i * P + j` is perturbation `j` of interpolant `i`; `j = 0` is the
/// interpolant itself.
fn generate_double_well(config: &ExperimentConfig, circle: DiscreteMeasure) -> Result<ShapeCollection> {
    let n = config.n_points;
    let triangle = discretize_shape(&PolarShape::new(BaseRadius::unit_triangle()), n, config.sampling)?;
    let times = config
        .interpolation
        .as_ref()
        .ok_or_else(|| Error::Config("double_well needs an interpolation grid".into()))?
        .times()?;
    let p = config.perturbations;
    let interpolants = times
        .par_iter()
        .map(|&t| displacement_interpolate(&circle, &triangle, t))
        .collect::<Result<Vec<_>>>()?;
    let shapes = (0..times.len() * p)
        .into_par_iter()
        .map(|id| {
            let (i, j) = (id / p, id % p);
            let t = times[i];
            let base = if t == 0.0 {
                ShapeBase::Circle
            } else if t == 1.0 {
                ShapeBase::Triangle
            } else {
                ShapeBase::Interpolant
            };
            if j == 0 {
                let zero = FourierPerturbation::zero(config.fourier.k);
                return Ok(GeneratedShape {
                    record: record(id, &zero, base, Some(t)),
                    measure: interpolants[i].clone(),
                });
            }
            let (pert, measure) = perturbed_measure(config, &interpolants[i], id)?;
            Ok(GeneratedShape {
                record: record(id, &pert, base, Some(t)),
                measure,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapeCollection {
        shapes,
        circle,
        triangle: Some(triangle),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    #[test]
    fn circle_first_then_perturbations() {
        let c = config(r#"{"experiment": "dido", "num_shapes": 5, "n_points": 32, "seed": 7}"#);
        let s = generate_shapes(&c).unwrap();
        assert_eq!(s.shapes.len(), 5);
        assert!(s.shapes[0].record.is_unperturbed());
        assert_eq!(s.shapes[0].measure, s.circle);
        for (id, g) in s.shapes.iter().enumerate() {
            assert_eq!(g.record.id, id);
            assert_eq!(g.record.coeffs.len(), 5);
            assert!(g.record.coeffs.iter().all(|a| a.abs() <= 0.1));
        }
        assert!(!s.shapes[1].record.is_unperturbed());
    }

    #[test]
    fn shapes_depend_only_on_seed_and_id() {
        let small = config(r#"{"experiment": "cone", "num_shapes": 3, "n_points": 16, "seed": 11}"#);
        let large = config(r#"{"experiment": "cone", "num_shapes": 6, "n_points": 16, "seed": 11}"#);
        let (a, b) = (generate_shapes(&small).unwrap(), generate_shapes(&large).unwrap());
        for i in 0..3 {
            assert_eq!(a.shapes[i].record, b.shapes[i].record);
        }
        let other = config(r#"{"experiment": "cone", "num_shapes": 3, "n_points": 16, "seed": 12}"#);
        assert_ne!(generate_shapes(&other).unwrap().shapes[1].record, a.shapes[1].record);
    }

    #[test]
    fn large_delta_triggers_retries_then_fails() {
        let c = config(
            r#"{"experiment": "dido", "num_shapes": 2, "n_points": 16,
                "fourier": {"K": 5, "delta": 0.3, "a0": -0.9}}"#,
        );
        match generate_shapes(&c) {
            Err(Error::Shape { index: 1, source }) => {
                assert!(matches!(*source, Error::GenerationRetries(MAX_RETRIES)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generated_radii_respect_floor() {
        let c = config(
            r#"{"experiment": "dido", "num_shapes": 20, "n_points": 16,
                "fourier": {"K": 5, "delta": 0.4}}"#,
        );
        let s = generate_shapes(&c).unwrap();
        for g in &s.shapes[1..] {
            let p = FourierPerturbation {
                a0: g.record.a0,
                coefficients: g.record.coeffs.clone(),
                delta: 0.4,
            };
            let shape = PolarShape::perturbed(BaseRadius::unit_circle(), p);
            assert!(shape.min_radius(RADIUS_GRID) >= MIN_RADIUS);
        }
    }

    #[test]
    fn double_well_layout() {
        let c = config(
            r#"{"experiment": "double_well", "n_points": 24, "perturbations": 3,
                "interpolation": {"t_min": -0.5, "t_max": 1.5, "t_step": 0.5}}"#,
        );
        let s = generate_shapes(&c).unwrap();
        assert_eq!(s.shapes.len(), 15);
        let triangle = s.triangle.as_ref().unwrap();
        for g in &s.shapes {
            let (i, j) = (g.record.id / 3, g.record.id % 3);
            assert_eq!(g.record.t, Some(-0.5 + 0.5 * i as f64));
            assert_eq!(g.record.is_unperturbed(), j == 0);
        }
        assert_eq!(s.shapes[3].measure, s.circle);
        let mut at_one: Vec<[f64; 2]> = s.shapes[9].measure.points().to_vec();
        let mut tri: Vec<[f64; 2]> = triangle.points().to_vec();
        at_one.sort_by(|a, b| a.partial_cmp(b).unwrap());
        tri.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(at_one, tri);
        assert_eq!(s.shapes[9].record.base, ShapeBase::Triangle);
    }

    #[test]
    fn shapes_json_layout() {
        let c = config(r#"{"experiment": "dido", "num_shapes": 2, "n_points": 8, "fourier": {"K": 2, "delta": 0.1}}"#);
        let v: serde_json::Value = serde_json::from_str(&generate_shapes(&c).unwrap().to_json()).unwrap();
        let first = &v[0];
        assert_eq!(first["id"], 0);
        assert_eq!(first["base"], "circle");
        assert_eq!(first["coeffs"].as_array().unwrap().len(), 2);
        assert!(first["t"].is_null());
    }
}
