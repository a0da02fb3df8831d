//! Experiment runner: shape collections, landscapes, bound certification,
//! and the files they produce.

mod config;
mod experiments;
mod shapes;
mod validate;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mds::{
    classical_mds, pairwise_divergence_matrix_with_stats, pairwise_ot_matrix_with_stats,
    Embedding, PairwiseStats, SymmetricMatrix,
};
use crate::measure::DiscreteMeasure;
use crate::rng::{generator_info, GeneratorInfo};
use crate::shape::FunctionalSample;
use crate::transport::SolverParams;

pub use config::{
    EpsilonSpec, ExperimentConfig, ExperimentKind, FourierConfig, InterpolationConfig,
    DEFAULT_FOURIER_ORDER, DEFAULT_INTERPOLATION, DEFAULT_PERTURBATIONS, MAX_RETRIES, MIN_RADIUS,
    RADIUS_GRID,
};
pub use experiments::{run_cone, run_dido, run_double_well, flatness_residual};
pub use shapes::{
    generate_shapes, perturbed_polar_shape, GeneratedShape, ShapeBase, ShapeCollection,
    ShapeRecord,
};
pub use validate::{validate_divergence_bound, validate_embedding_bound};

/// Process-level knobs that never change results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub verbose: bool,
    /// Record wall-clock stage times in `runtimes_ms`. Off by default so
    /// repeated runs stay byte-identical.
    pub timings: bool,
}

impl RunOptions {
    pub(crate) fn log(&self, experiment: ExperimentKind, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[{}] {}", experiment.name(), msg.as_ref());
        }
    }
}

/// Runs `f` on a pool of `threads` workers (0: the global pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Solver call counts for one report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SolverStats {
    pub pairwise: PairwiseStats,
    /// Entropic solves spent on functional values or bound checks.
    pub extra_sinkhorn_solves: usize,
    /// Exact solves spent on functional values or bound checks.
    pub extra_exact_solves: usize,
    pub non_converged: usize,
}

impl SolverStats {
    pub fn sinkhorn_solves(&self) -> usize {
        self.pairwise.self_solves + self.pairwise.cross_solves + self.extra_sinkhorn_solves
    }

    pub fn merge(&mut self, other: &SolverStats) {
        self.pairwise.merge(&other.pairwise);
        self.extra_sinkhorn_solves += other.extra_sinkhorn_solves;
        self.extra_exact_solves += other.extra_exact_solves;
        self.non_converged += other.non_converged;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub pass: bool,
    pub details: serde_json::Value,
    pub runtimes_ms: BTreeMap<String, f64>,
    pub solver_stats: SolverStats,
    pub generator: GeneratorInfo,
}

impl Report {
    pub(crate) fn new(config: &ExperimentConfig) -> Self {
        Report {
            experiment: config.experiment.name().to_string(),
            seed: config.seed,
            pass: false,
            details: serde_json::Value::Null,
            runtimes_ms: BTreeMap::new(),
            solver_stats: SolverStats::default(),
            generator: generator_info(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

/// Stage timer that only records when timings are enabled.
pub(crate) struct Stopwatch {
    pub(super) enabled: bool,
    start: Instant,
    pub(super) stages: BTreeMap<String, f64>,
}

impl Stopwatch {
    pub(crate) fn new(enabled: bool) -> Self {
        Self {
            enabled,
            start: Instant::now(),
            stages: BTreeMap::new(),
        }
    }

    pub(crate) fn lap(&mut self, stage: &str) {
        if self.enabled {
            let ms = self.start.elapsed().as_secs_f64() * 1e3;
            *self.stages.entry(stage.to_string()).or_default() += ms;
        }
        self.start = Instant::now();
    }

    pub(crate) fn finish(self) -> BTreeMap<String, f64> {
        self.stages
    }
}

/// Files written for one landscape (one epsilon).
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub directory: PathBuf,
    pub embedding_csv: PathBuf,
    /// `id,c1..ck,f`: embedding coordinates with the functional value.
    pub functional_csv: PathBuf,
    pub spectrum_json: PathBuf,
    pub report_json: PathBuf,
    pub epsilon: f64,
    pub samples: Vec<FunctionalSample>,
    pub embedding: Embedding,
    pub report: Report,
}

/// Everything a `run` produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub shapes_json: PathBuf,
    pub report_json: PathBuf,
    pub report: Report,
    pub outputs: Vec<ExperimentOutput>,
}

/// Outcome of a bound certification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone)]
pub struct ValidationOutput {
    pub status: Status,
    pub report: Report,
    pub report_json: PathBuf,
}

pub const EMBEDDING_CSV: &str = "embedding.csv";
pub const LANDSCAPE_CSV: &str = "landscape.csv";
pub const SPECTRUM_JSON: &str = "spectrum.json";
pub const REPORT_JSON: &str = "report.json";
pub const SHAPES_JSON: &str = "shapes.json";

/// Runs the landscape experiment named in `config`.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    match config.experiment {
        ExperimentKind::Dido => run_dido(config, opts),
        ExperimentKind::DoubleWell => run_double_well(config, opts),
        ExperimentKind::Cone => run_cone(config, opts),
        other => Err(Error::Config(format!(
            "{} is a bound check; use `validate`",
            other.name()
        ))),
    }
}

/// Writes `shapes.json` only.
pub fn write_shapes(config: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    let shapes = with_threads(opts.threads, || generate_shapes(config))??;
    opts.log(config.experiment, format!("generated {} shapes", shapes.shapes.len()));
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join(SHAPES_JSON);
    std::fs::write(&path, shapes.to_json())?;
    Ok(path)
}

/// Embedding of a collection: exact transport when `epsilon == 0`, Sinkhorn
/// divergences otherwise. A single shape maps to the origin.
pub(crate) fn embed_collection(
    measures: &[DiscreteMeasure],
    epsilon: f64,
    k: usize,
    solver: &SolverParams,
    stats: &mut SolverStats,
) -> Result<(Embedding, SymmetricMatrix)> {
    if measures.len() == 1 {
        let embedding = Embedding {
            coordinates: vec![vec![0.0; k]],
            spectrum: vec![0.0],
            k,
            positive_count: 0,
        };
        return Ok((embedding, SymmetricMatrix::zeros(1)));
    }
    let (a, pairwise) = if epsilon == 0.0 {
        pairwise_ot_matrix_with_stats(measures)?
    } else {
        pairwise_divergence_matrix_with_stats(measures, &solver.with_epsilon(epsilon))?
    };
    stats.pairwise.merge(&pairwise);
    Ok((classical_mds(&a, k)?, a))
}

/// Landscape CSV: `id,c1,...,ck,f`.
pub fn landscape_csv(samples: &[FunctionalSample], k: usize) -> String {
    let mut out = String::from("id");
    for j in 1..=k {
        write!(out, ",c{j}").unwrap();
    }
    out.push_str(",f\n");
    for s in samples {
        write!(out, "{}", s.shape_id).unwrap();
        for x in &s.embedding_point {
            write!(out, ",{x:.16e}").unwrap();
        }
        writeln!(out, ",{:.16e}", s.functional_value).unwrap();
    }
    out
}

pub(crate) fn samples_from(embedding: &Embedding, values: &[f64]) -> Vec<FunctionalSample> {
    embedding
        .coordinates
        .iter()
        .zip(values)
        .enumerate()
        .map(|(id, (point, &f))| FunctionalSample {
            shape_id: id,
            functional_value: f,
            embedding_point: point.clone(),
        })
        .collect()
}

/// Writes the landscape files for one epsilon into `dir`.
pub(crate) fn write_landscape(
    dir: &Path,
    epsilon: f64,
    embedding: Embedding,
    samples: Vec<FunctionalSample>,
    report: Report,
) -> Result<ExperimentOutput> {
    std::fs::create_dir_all(dir)?;
    let out = ExperimentOutput {
        directory: dir.to_path_buf(),
        embedding_csv: dir.join(EMBEDDING_CSV),
        functional_csv: dir.join(LANDSCAPE_CSV),
        spectrum_json: dir.join(SPECTRUM_JSON),
        report_json: dir.join(REPORT_JSON),
        epsilon,
        samples,
        embedding,
        report,
    };
    std::fs::write(&out.embedding_csv, out.embedding.to_csv())?;
    std::fs::write(&out.functional_csv, landscape_csv(&out.samples, out.embedding.k))?;
    let mut sidecar = serde_json::to_string_pretty(&out.embedding.sidecar(epsilon))?;
    sidecar.push('\n');
    std::fs::write(&out.spectrum_json, sidecar)?;
    std::fs::write(&out.report_json, out.report.to_json())?;
    Ok(out)
}

/// Directory name for one epsilon of a sweep.
pub fn epsilon_dir_name(epsilon: f64) -> String {
    format!("eps_{epsilon}")
}
