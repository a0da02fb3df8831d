//! Experiment configuration: strict JSON parsing plus per-experiment defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::SamplingMode;
use crate::transport::SolverParams;

/// Radius every generated shape must keep on the validation grid.
pub const MIN_RADIUS: f64 = 0.05;
/// Angles checked when validating a generated shape.
pub const RADIUS_GRID: usize = 4096;
/// Redraws allowed per shape before generation gives up.
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Dido,
    DoubleWell,
    Cone,
    ValidateDivergenceBound,
    ValidateEmbeddingBound,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Dido => "dido",
            ExperimentKind::DoubleWell => "double_well",
            ExperimentKind::Cone => "cone",
            ExperimentKind::ValidateDivergenceBound => "validate_divergence_bound",
            ExperimentKind::ValidateEmbeddingBound => "validate_embedding_bound",
        }
    }

    pub fn is_validation(self) -> bool {
        matches!(
            self,
            ExperimentKind::ValidateDivergenceBound | ExperimentKind::ValidateEmbeddingBound
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Single(f64),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierConfig {
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    pub delta: f64,
    #[serde(default)]
    pub a0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub t_step: f64,
}

impl InterpolationConfig {
    /// Times `j * t_step` for integer `j`, so `0` and `1` are hit exactly
    /// whenever they lie on the grid.
    pub fn times(&self) -> Result<Vec<f64>> {
        let InterpolationConfig {
            t_min,
            t_max,
            t_step,
        } = *self;
        if !(t_step.is_finite() && t_step > 0.0 && t_min.is_finite() && t_max.is_finite()) {
            return Err(Error::Config(format!(
                "interpolation needs finite bounds and a positive step, got [{t_min}, {t_max}] step {t_step}"
            )));
        }
        if t_min > t_max {
            return Err(Error::Config(format!("t_min {t_min} exceeds t_max {t_max}")));
        }
        let grid_index = |t: f64| -> Result<i64> {
            let j = (t / t_step).round();
            if (t - j * t_step).abs() > 1e-9 * t_step.max(t.abs()) {
                return Err(Error::Config(format!(
                    "interpolation bound {t} is not a multiple of t_step {t_step}"
                )));
            }
            Ok(j as i64)
        };
        let (lo, hi) = (grid_index(t_min)?, grid_index(t_max)?);
        Ok((lo..=hi).map(|j| j as f64 * t_step).collect())
    }
}

/// Config document as written by the user; every field but `experiment`
/// may be omitted.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentKind,
    seed: Option<u64>,
    num_shapes: Option<usize>,
    n_points: Option<usize>,
    epsilon: Option<EpsilonSpec>,
    k_dim: Option<usize>,
    fourier: Option<FourierConfig>,
    interpolation: Option<InterpolationConfig>,
    perturbations: Option<usize>,
    sampling: Option<SamplingMode>,
    solver: Option<SolverParams>,
    output_dir: Option<PathBuf>,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Total shape count. For the divergence-bound check, consecutive
    /// shapes `(2i, 2i + 1)` form the pairs.
    pub num_shapes: usize,
    pub n_points: usize,
    pub epsilon: Vec<f64>,
    pub k_dim: usize,
    pub fourier: FourierConfig,
    /// Double-well only.
    pub interpolation: Option<InterpolationConfig>,
    /// Double-well only: shapes per interpolant, the first unperturbed.
    pub perturbations: usize,
    pub sampling: SamplingMode,
    /// `solver.epsilon` is replaced by each value in `epsilon`.
    pub solver: SolverParams,
    pub output_dir: PathBuf,
}

struct Defaults {
    num_shapes: usize,
    n_points: usize,
    epsilon: &'static [f64],
    delta: f64,
}

fn defaults(kind: ExperimentKind) -> Defaults {
    match kind {
        ExperimentKind::Dido => Defaults {
            num_shapes: 200,
            n_points: 256,
            epsilon: &[1e-3],
            delta: 0.1,
        },
        ExperimentKind::DoubleWell => Defaults {
            num_shapes: 0,
            n_points: 256,
            epsilon: &[1e-3],
            delta: 0.03,
        },
        ExperimentKind::Cone => Defaults {
            num_shapes: 200,
            n_points: 256,
            epsilon: &[0.0, 0.01, 0.1, 1.0],
            delta: 0.06,
        },
        ExperimentKind::ValidateDivergenceBound => Defaults {
            num_shapes: 100,
            n_points: 200,
            epsilon: &[1e-3, 1e-2, 1e-1, 1.0],
            delta: 0.1,
        },
        ExperimentKind::ValidateEmbeddingBound => Defaults {
            num_shapes: 30,
            n_points: 100,
            epsilon: &[1e-4, 1e-3, 1e-2],
            delta: 0.1,
        },
    }
}

pub const DEFAULT_FOURIER_ORDER: usize = 5;
pub const DEFAULT_PERTURBATIONS: usize = 25;
pub const DEFAULT_INTERPOLATION: InterpolationConfig = InterpolationConfig {
    t_min: -0.3,
    t_max: 1.3,
    t_step: 0.1,
};

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Defaults for `kind` with nothing overridden.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let raw = RawConfig {
            experiment: kind,
            seed: None,
            num_shapes: None,
            n_points: None,
            epsilon: None,
            k_dim: None,
            fourier: None,
            interpolation: None,
            perturbations: None,
            sampling: None,
            solver: None,
            output_dir: None,
        };
        Self::resolve(raw).expect("defaults are valid")
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let kind = raw.experiment;
        let d = defaults(kind);
        let epsilon = match raw.epsilon {
            None => d.epsilon.to_vec(),
            Some(EpsilonSpec::Single(e)) => vec![e],
            Some(EpsilonSpec::List(v)) => v,
        };
        let double_well = kind == ExperimentKind::DoubleWell;
        if !double_well && (raw.interpolation.is_some() || raw.perturbations.is_some()) {
            return Err(Error::Config(
                "interpolation and perturbations apply to double_well only".into(),
            ));
        }
        let interpolation = double_well.then(|| raw.interpolation.unwrap_or(DEFAULT_INTERPOLATION));
        let perturbations = if double_well {
            raw.perturbations.unwrap_or(DEFAULT_PERTURBATIONS)
        } else {
            1
        };
        let num_shapes = match interpolation {
            Some(interp) => {
                let count = interp.times()?.len() * perturbations;
                if let Some(n) = raw.num_shapes {
                    if n != count {
                        return Err(Error::Config(format!(
                            "num_shapes {n} disagrees with interpolants x perturbations = {count}"
                        )));
                    }
                }
                count
            }
            None => raw.num_shapes.unwrap_or(d.num_shapes),
        };
        let config = ExperimentConfig {
            experiment: kind,
            seed: raw.seed.unwrap_or(0),
            num_shapes,
            n_points: raw.n_points.unwrap_or(d.n_points),
            epsilon,
            k_dim: raw.k_dim.unwrap_or(2),
            fourier: raw.fourier.unwrap_or(FourierConfig {
                k: DEFAULT_FOURIER_ORDER,
                delta: d.delta,
                a0: 0.0,
            }),
            interpolation,
            perturbations,
            sampling: raw.sampling.unwrap_or_default(),
            solver: raw.solver.unwrap_or_default(),
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("output")),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_shapes == 0 {
            return bad("num_shapes must be positive".into());
        }
        if self.n_points < 3 {
            return bad(format!("n_points must be at least 3, got {}", self.n_points));
        }
        if self.k_dim == 0 {
            return bad("k_dim must be positive".into());
        }
        if self.fourier.k == 0 {
            return bad("fourier.K must be positive".into());
        }
        if !(self.fourier.delta.is_finite() && self.fourier.delta >= 0.0) {
            return bad(format!("fourier.delta must be nonnegative, got {}", self.fourier.delta));
        }
        if !self.fourier.a0.is_finite() {
            return bad("fourier.a0 must be finite".into());
        }
        if self.perturbations == 0 {
            return bad("perturbations must be positive".into());
        }
        if self.epsilon.is_empty() {
            return bad("epsilon list is empty".into());
        }
        if let Some(e) = self.epsilon.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return bad(format!("epsilon must be finite and nonnegative, got {e}"));
        }
        let zero_allowed = self.experiment == ExperimentKind::Cone;
        if !zero_allowed && self.epsilon.contains(&0.0) {
            return bad(format!(
                "epsilon = 0 is only meaningful for cone, not {}",
                self.experiment.name()
            ));
        }
        let single = matches!(self.experiment, ExperimentKind::Dido | ExperimentKind::DoubleWell);
        if single && self.epsilon.len() != 1 {
            return bad(format!("{} takes a single epsilon", self.experiment.name()));
        }
        match self.experiment {
            ExperimentKind::ValidateDivergenceBound => {
                if self.num_shapes < 2 || !self.num_shapes.is_multiple_of(2) {
                    return bad(format!(
                        "num_shapes must be even and at least 2 (shapes are paired), got {}",
                        self.num_shapes
                    ));
                }
            }
            ExperimentKind::ValidateEmbeddingBound | ExperimentKind::Cone => {
                if self.num_shapes < 2 {
                    return bad("need at least 2 shapes".into());
                }
            }
            _ => {}
        }
        if let Some(interp) = &self.interpolation {
            interp.times()?;
        }
        // epsilon itself is checked per run
        self.solver.with_epsilon(1.0).validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_experiment() {
        let dido = ExperimentConfig::from_json(r#"{"experiment": "dido"}"#).unwrap();
        assert_eq!((dido.num_shapes, dido.n_points, dido.k_dim), (200, 256, 2));
        assert_eq!(dido.epsilon, vec![1e-3]);
        assert_eq!(dido.fourier.delta, 0.1);

        let dw = ExperimentConfig::default_for(ExperimentKind::DoubleWell);
        assert_eq!(dw.num_shapes, 17 * 25);
        assert_eq!(dw.fourier.delta, 0.03);

        let cone = ExperimentConfig::default_for(ExperimentKind::Cone);
        assert_eq!(cone.epsilon, vec![0.0, 0.01, 0.1, 1.0]);
        assert_eq!(cone.fourier.delta, 0.06);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"experiment": "dido", "bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"experiment": "dido", "fourier": {"K": 3, "delta": 0.1, "x": 0}}"#
        )
        .is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"experiment": "dido", "solver": {"tolerance": 1e-9, "tol": 1}}"#
        )
        .is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "nope"}"#).is_err());
    }

    #[test]
    fn scalar_and_list_epsilon() {
        let c = ExperimentConfig::from_json(r#"{"experiment": "cone", "epsilon": 0.5}"#).unwrap();
        assert_eq!(c.epsilon, vec![0.5]);
        let c = ExperimentConfig::from_json(r#"{"experiment": "cone", "epsilon": [0, 1]}"#).unwrap();
        assert_eq!(c.epsilon, vec![0.0, 1.0]);
        assert!(ExperimentConfig::from_json(r#"{"experiment": "cone", "epsilon": []}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "dido", "epsilon": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "dido", "epsilon": [0.1, 0.2]}"#).is_err());
    }

    #[test]
    fn interpolation_grid_hits_endpoints_exactly() {
        let times = DEFAULT_INTERPOLATION.times().unwrap();
        assert_eq!(times.len(), 17);
        assert!(times.contains(&0.0));
        assert!(times.contains(&0.5));
        assert!(times.contains(&1.0));
        let off_grid = InterpolationConfig {
            t_min: 0.05,
            t_max: 1.0,
            t_step: 0.1,
        };
        assert!(off_grid.times().is_err());
    }

    #[test]
    fn double_well_shape_count_must_agree() {
        let ok = r#"{"experiment": "double_well", "perturbations": 2,
                     "interpolation": {"t_min": 0, "t_max": 1, "t_step": 0.5}, "num_shapes": 6}"#;
        assert_eq!(ExperimentConfig::from_json(ok).unwrap().num_shapes, 6);
        let bad = ok.replace("\"num_shapes\": 6", "\"num_shapes\": 7");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "dido", "perturbations": 3}"#).is_err());
    }

    #[test]
    fn lower_case_fourier_order_alias() {
        let c = ExperimentConfig::from_json(
            r#"{"experiment": "dido", "fourier": {"k": 3, "delta": 0.2}}"#,
        )
        .unwrap();
        assert_eq!(c.fourier.k, 3);
        assert_eq!(c.fourier.a0, 0.0);
    }

    #[test]
    fn divergence_check_needs_pairs() {
        assert!(ExperimentConfig::from_json(
            r#"{"experiment": "validate_divergence_bound", "num_shapes": 3}"#
        )
        .is_err());
    }
}
