//! Browser bindings: perturbed shapes, circle-to-triangle interpolation, and
//! a small isoperimetric landscape.
//!
//! Point lists cross the boundary as flat `[x0, y0, x1, y1, ...]` arrays.

use serde::Serialize;
use shapescape::harness::{generate_shapes, ExperimentConfig};
use shapescape::mds::sinkhorn_mds;
use shapescape::measure::{DiscreteMeasure, Point};
use shapescape::rng::shape_stream;
use shapescape::shape::{
    discretize_shape, isoperimetric_ratio_of_points, sample_fourier_perturbation, BaseRadius,
    PolarShape, SamplingMode,
};
use shapescape::transport::{
    displacement_interpolate, divergence_error_bound, exact_ot_value, sinkhorn_divergence,
    SolverParams,
};
use wasm_bindgen::prelude::*;

/// Largest landscape the page will request; keeps pairwise solves interactive.
const MAX_LANDSCAPE_SHAPES: usize = 60;
const MAX_POINTS: usize = 400;

fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

fn check_points(n: usize) -> shapescape::Result<()> {
    if !(3..=MAX_POINTS).contains(&n) {
        return Err(shapescape::Error::Config(format!(
            "point count must be in 3..={MAX_POINTS}, got {n}"
        )));
    }
    Ok(())
}

fn to_js(e: shapescape::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Debug, Serialize)]
pub struct ShapeView {
    pub points: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub ratio: f64,
    pub divergence: f64,
    pub exact: f64,
    pub bound: f64,
}

/// Random Fourier perturbation of the unit circle and its distances to the
/// circle.
pub fn shape_view(
    seed: u64,
    order: usize,
    delta: f64,
    n: usize,
    epsilon: f64,
) -> shapescape::Result<ShapeView> {
    check_points(n)?;
    let mut rng = shape_stream(seed, 0);
    let p = sample_fourier_perturbation(&mut rng, order, delta, 0.0)?;
    let shape = PolarShape::perturbed(BaseRadius::unit_circle(), p.clone());
    let measure = discretize_shape(&shape, n, SamplingMode::AngleUniform)?;
    let circle = discretize_shape(
        &PolarShape::new(BaseRadius::unit_circle()),
        n,
        SamplingMode::AngleUniform,
    )?;
    let params = SolverParams::default().with_epsilon(epsilon);
    Ok(ShapeView {
        points: flatten(measure.points()),
        coefficients: p.coefficients,
        ratio: isoperimetric_ratio_of_points(measure.points())?,
        divergence: sinkhorn_divergence(&measure, &circle, &params)?,
        exact: exact_ot_value(&measure, &circle)?,
        bound: divergence_error_bound(epsilon, n, n),
    })
}

/// Displacement interpolant between the discretized circle and triangle.
pub fn interpolant(t: f64, n: usize) -> shapescape::Result<Vec<f64>> {
    check_points(n)?;
    let disc = |base| discretize_shape(&PolarShape::new(base), n, SamplingMode::AngleUniform);
    let (a, b): (DiscreteMeasure, DiscreteMeasure) =
        (disc(BaseRadius::unit_circle())?, disc(BaseRadius::unit_triangle())?);
    Ok(flatten(displacement_interpolate(&a, &b, t)?.points()))
}

#[derive(Debug, Serialize)]
pub struct LandscapePoint {
    pub id: usize,
    pub c1: f64,
    pub c2: f64,
    pub f: f64,
}

/// Two-dimensional Sinkhorn MDS of a circle plus perturbations, with the
/// isoperimetric ratio of each shape.
pub fn landscape(
    seed: u64,
    num_shapes: usize,
    n: usize,
    delta: f64,
    epsilon: f64,
) -> shapescape::Result<Vec<LandscapePoint>> {
    check_points(n)?;
    if !(3..=MAX_LANDSCAPE_SHAPES).contains(&num_shapes) {
        return Err(shapescape::Error::Config(format!(
            "shape count must be in 3..={MAX_LANDSCAPE_SHAPES}, got {num_shapes}"
        )));
    }
    let config = ExperimentConfig::from_json(&format!(
        r#"{{"experiment": "dido", "seed": {seed}, "num_shapes": {num_shapes},
            "n_points": {n}, "epsilon": {epsilon:e}, "fourier": {{"K": 5, "delta": {delta:e}}}}}"#
    ))?;
    let shapes = generate_shapes(&config)?;
    let measures = shapes.measures();
    let params = config.solver.with_epsilon(epsilon);
    let embedding = sinkhorn_mds(&measures, 2, &params)?;
    measures
        .iter()
        .zip(&embedding.coordinates)
        .enumerate()
        .map(|(id, (m, c))| {
            Ok(LandscapePoint {
                id,
                c1: c[0],
                c2: c[1],
                f: isoperimetric_ratio_of_points(m.points())?,
            })
        })
        .collect()
}

/// JSON `{points, coefficients, ratio, divergence, exact, bound}`.
#[wasm_bindgen]
pub fn perturbed_shape(
    seed: u32,
    order: usize,
    delta: f64,
    n: usize,
    epsilon: f64,
) -> Result<String, JsValue> {
    let view = shape_view(seed.into(), order, delta, n, epsilon).map_err(to_js)?;
    serde_json::to_string(&view).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Flat point list of the interpolant at time `t`.
#[wasm_bindgen]
pub fn interpolate_shapes(t: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    interpolant(t, n).map_err(to_js)
}

/// JSON array of `{id, c1, c2, f}`; id 0 is the circle.
#[wasm_bindgen]
pub fn dido_landscape(
    seed: u32,
    num_shapes: usize,
    n: usize,
    delta: f64,
    epsilon: f64,
) -> Result<String, JsValue> {
    let points = landscape(seed.into(), num_shapes, n, delta, epsilon).map_err(to_js)?;
    serde_json::to_string(&points).map_err(|e| JsValue::from_str(&e.to_string()))
}
