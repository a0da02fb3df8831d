//! Landscape experiments: isoperimetric ratio, double well, Sinkhorn cone.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use super::{
    embed_collection, epsilon_dir_name, generate_shapes, samples_from, with_threads,
    write_landscape, ExperimentConfig, ExperimentKind, Report, RunOptions, RunOutput,
    ShapeCollection, SolverStats, Stopwatch, SHAPES_JSON,
};
use crate::error::{Error, Result};
use crate::mds::Embedding;
use crate::shape::{cone_functional, double_well, isoperimetric_ratio_of_points};
use crate::transport::exact_ot_value;

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.experiment != kind {
        return Err(Error::Config(format!(
            "expected a {} config, got {}",
            kind.name(),
            config.experiment.name()
        )));
    }
    Ok(())
}

fn write_shapes_json(config: &ExperimentConfig, shapes: &ShapeCollection) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join(SHAPES_JSON);
    std::fs::write(&path, shapes.to_json())?;
    Ok(path)
}

/// Index of the largest value and whether it is strictly larger than all
/// others.
fn strict_argmax(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let strict = values
        .iter()
        .enumerate()
        .all(|(i, &v)| i == best || v < values[best]);
    (best, strict)
}

/// Volume over squared perimeter across a circle-plus-perturbations
/// collection.
pub fn run_dido(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    expect_kind(config, ExperimentKind::Dido)?;
    let epsilon = config.epsilon[0];
    let mut watch = Stopwatch::new(opts.timings);
    let mut stats = SolverStats::default();
    let (shapes, embedding, values) = with_threads(opts.threads, || -> Result<_> {
        let shapes = generate_shapes(config)?;
        watch.lap("generate");
        opts.log(config.experiment, format!("generated {} shapes", shapes.shapes.len()));
        let (embedding, _) =
            embed_collection(&shapes.measures(), epsilon, config.k_dim, &config.solver, &mut stats)?;
        watch.lap("embedding");
        opts.log(config.experiment, "embedding done");
        let values = shapes
            .shapes
            .par_iter()
            .map(|s| isoperimetric_ratio_of_points(s.measure.points()).map_err(|e| e.at_shape(s.record.id)))
            .collect::<Result<Vec<f64>>>()?;
        watch.lap("functional");
        Ok((shapes, embedding, values))
    })??;

    let reference = 1.0 / (4.0 * PI);
    let circle_ratio = values[0];
    let (argmax, strict) = strict_argmax(&values);
    let circle_wins = argmax == 0 && strict;
    let mut report = Report::new(config);
    report.details = json!({
        "num_shapes": config.num_shapes,
        "n_points": config.n_points,
        "epsilon": epsilon,
        "k_dim": config.k_dim,
        "circle_id": 0,
        "circle_ratio": circle_ratio,
        "reference_ratio": reference,
        "circle_ratio_error": (circle_ratio - reference).abs(),
        "argmax_id": argmax,
        "circle_is_strict_max": circle_wins,
        "positive_count": embedding.positive_count,
    });
    report.pass = circle_wins && (circle_ratio - reference).abs() <= 1e-3;
    report.solver_stats = stats;

    let shapes_json = write_shapes_json(config, &shapes)?;
    let samples = samples_from(&embedding, &values);
    watch.lap("write");
    report.runtimes_ms = watch.finish();
    let out = write_landscape(&config.output_dir, epsilon, embedding, samples, report.clone())?;
    Ok(RunOutput {
        shapes_json,
        report_json: out.report_json.clone(),
        report,
        outputs: vec![out],
    })
}

/// Product of squared Wasserstein distances to a circle and a triangle over
/// perturbed displacement interpolants between them.
pub fn run_double_well(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    expect_kind(config, ExperimentKind::DoubleWell)?;
    let epsilon = config.epsilon[0];
    let mut watch = Stopwatch::new(opts.timings);
    let mut stats = SolverStats::default();
    let (shapes, embedding, values) = with_threads(opts.threads, || -> Result<_> {
        let shapes = generate_shapes(config)?;
        watch.lap("generate");
        opts.log(config.experiment, format!("generated {} shapes", shapes.shapes.len()));
        let (embedding, _) =
            embed_collection(&shapes.measures(), epsilon, config.k_dim, &config.solver, &mut stats)?;
        watch.lap("embedding");
        opts.log(config.experiment, "embedding done");
        let triangle = shapes.triangle.as_ref().expect("double well has a triangle");
        let values = shapes
            .shapes
            .par_iter()
            .map(|s| double_well(&s.measure, &shapes.circle, triangle).map_err(|e| e.at_shape(s.record.id)))
            .collect::<Result<Vec<f64>>>()?;
        watch.lap("functional");
        Ok((shapes, embedding, values))
    })??;
    stats.extra_exact_solves += 2 * values.len();

    let unperturbed_at = |t: f64| {
        shapes
            .shapes
            .iter()
            .find(|s| s.record.t == Some(t) && s.record.is_unperturbed())
            .map(|s| s.record.id)
    };
    let (at0, at1, mid) = (unperturbed_at(0.0), unperturbed_at(1.0), unperturbed_at(0.5));
    let value_of = |id: Option<usize>| id.map(|i| values[i]);
    let (v0, v1, vm) = (value_of(at0), value_of(at1), value_of(mid));
    let wells_zero = v0.is_none_or(|v| v == 0.0) && v1.is_none_or(|v| v == 0.0);
    let midpoint_positive = vm.is_none_or(|m| {
        m > 0.0 && m > v0.unwrap_or(0.0).max(v1.unwrap_or(0.0))
    });
    let mut report = Report::new(config);
    let times: Vec<f64> = shapes
        .shapes
        .iter()
        .step_by(config.perturbations)
        .filter_map(|s| s.record.t)
        .collect();
    report.details = json!({
        "num_shapes": config.num_shapes,
        "n_points": config.n_points,
        "epsilon": epsilon,
        "k_dim": config.k_dim,
        "times": times,
        "perturbations": config.perturbations,
        "t0_id": at0, "t1_id": at1, "t_half_id": mid,
        "value_t0": v0, "value_t1": v1, "value_t_half": vm,
        "wells_are_zero": wells_zero,
        "midpoint_is_positive": midpoint_positive,
        "positive_count": embedding.positive_count,
    });
    report.pass = wells_zero && midpoint_positive;
    report.solver_stats = stats;

    let shapes_json = write_shapes_json(config, &shapes)?;
    let samples = samples_from(&embedding, &values);
    watch.lap("write");
    report.runtimes_ms = watch.finish();
    let out = write_landscape(&config.output_dir, epsilon, embedding, samples, report.clone())?;
    Ok(RunOutput {
        shapes_json,
        report_json: out.report_json.clone(),
        report,
        outputs: vec![out],
    })
}

/// Root mean square residual of the least-squares affine fit
/// `f ~ b0 + sum_j b_j c_j` over the landscape points.
pub fn flatness_residual(embedding: &Embedding, values: &[f64]) -> f64 {
    let n = values.len();
    let cols = embedding.k + 1;
    if n <= cols {
        return 0.0;
    }
    let design = DMatrix::from_fn(n, cols, |i, j| {
        if j == 0 {
            1.0
        } else {
            embedding.coordinates[i][j - 1]
        }
    });
    let rhs = DVector::from_column_slice(values);
    let Ok(beta) = design.clone().svd(true, true).solve(&rhs, 1e-12) else {
        return f64::NAN;
    };
    let residual = design * beta - rhs;
    (residual.norm_squared() / n as f64).sqrt()
}

fn spread(embedding: &Embedding) -> f64 {
    let n = embedding.len() as f64;
    let k = embedding.k;
    let centroid: Vec<f64> = (0..k)
        .map(|j| embedding.coordinates.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let total: f64 = embedding
        .coordinates
        .iter()
        .map(|r| r.iter().zip(&centroid).map(|(x, c)| (x - c) * (x - c)).sum::<f64>())
        .sum();
    (total / n).sqrt()
}

/// Square-root Sinkhorn divergence to the circle, swept over epsilon.
/// `epsilon = 0` uses exact transport throughout.
pub fn run_cone(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    expect_kind(config, ExperimentKind::Cone)?;
    let mut watch = Stopwatch::new(opts.timings);
    let shapes = with_threads(opts.threads, || generate_shapes(config))??;
    watch.lap("generate");
    opts.log(config.experiment, format!("generated {} shapes", shapes.shapes.len()));
    let shapes_json = write_shapes_json(config, &shapes)?;
    let measures = shapes.measures();

    let mut outputs = Vec::new();
    let mut sweep = Vec::new();
    let mut total = SolverStats::default();
    let mut all_zero = true;
    for &epsilon in &config.epsilon {
        let mut stats = SolverStats::default();
        let mut local = Stopwatch::new(opts.timings);
        let (embedding, values) = with_threads(opts.threads, || -> Result<_> {
            let (embedding, _) =
                embed_collection(&measures, epsilon, config.k_dim, &config.solver, &mut stats)?;
            local.lap("embedding");
            let params = config.solver.with_epsilon(epsilon);
            let values = measures
                .par_iter()
                .enumerate()
                .map(|(id, m)| {
                    let f = if epsilon == 0.0 {
                        exact_ot_value(m, &shapes.circle).map(|v| v.max(0.0).sqrt())
                    } else {
                        cone_functional(m, &shapes.circle, &params)
                    };
                    f.map_err(|e| e.at_shape(id))
                })
                .collect::<Result<Vec<f64>>>()?;
            local.lap("functional");
            Ok((embedding, values))
        })??;
        if epsilon == 0.0 {
            stats.extra_exact_solves += measures.len();
        } else {
            stats.extra_sinkhorn_solves += 3 * measures.len();
        }
        opts.log(config.experiment, format!("epsilon {epsilon} done"));

        let circle_zero = values[0] == 0.0;
        all_zero &= circle_zero;
        let flat = flatness_residual(&embedding, &values);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64).sqrt();
        let summary = json!({
            "epsilon": epsilon,
            "circle_value": values[0],
            "circle_is_zero": circle_zero,
            "functional_mean": mean,
            "functional_std": sd,
            "functional_max": values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "embedding_spread": spread(&embedding),
            "flatness_rms": flat,
            "flatness_relative": if sd > 0.0 { flat / sd } else { 0.0 },
            "positive_count": embedding.positive_count,
            "sinkhorn_solves": stats.sinkhorn_solves(),
        });
        let mut report = Report::new(config);
        report.pass = circle_zero;
        report.details = summary.clone();
        report.solver_stats = stats;
        local.lap("write");
        report.runtimes_ms = local.finish();
        for (stage, ms) in &report.runtimes_ms {
            watch_add(&mut watch, &format!("{}/{stage}", epsilon_dir_name(epsilon)), *ms);
        }
        total.merge(&stats);
        let samples = samples_from(&embedding, &values);
        let dir = config.output_dir.join(epsilon_dir_name(epsilon));
        outputs.push(write_landscape(&dir, epsilon, embedding, samples, report)?);
        sweep.push(summary);
    }

    let mut report = Report::new(config);
    report.pass = all_zero;
    report.details = json!({
        "num_shapes": config.num_shapes,
        "n_points": config.n_points,
        "k_dim": config.k_dim,
        "epsilons": config.epsilon,
        "circle_id": 0,
        "sweep": sweep,
        "note": "flatness is the RMS residual of the best affine fit of f over the embedding; descriptive only",
    });
    report.solver_stats = total;
    report.runtimes_ms = watch.finish();
    let report_json = config.output_dir.join(super::REPORT_JSON);
    std::fs::write(&report_json, report.to_json())?;
    Ok(RunOutput {
        shapes_json,
        report_json,
        report,
        outputs,
    })
}

fn watch_add(watch: &mut Stopwatch, stage: &str, ms: f64) {
    if watch.enabled {
        *watch.stages.entry(stage.to_string()).or_default() += ms;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_are_not_strict() {
        assert_eq!(strict_argmax(&[3.0, 1.0, 2.0]), (0, true));
        assert_eq!(strict_argmax(&[1.0, 3.0, 3.0]), (1, false));
    }

    #[test]
    fn plane_fits_exactly() {
        let e = Embedding {
            coordinates: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 3.0]],
            spectrum: vec![1.0, 1.0],
            k: 2,
            positive_count: 2,
        };
        let f: Vec<f64> = e.coordinates.iter().map(|c| 1.0 + 2.0 * c[0] - c[1]).collect();
        assert!(flatness_residual(&e, &f) < 1e-12);
        let mut bent = f.clone();
        bent[4] += 1.0;
        assert!(flatness_residual(&e, &bent) > 0.1);
    }
}
