//! Exact and entropic optimal transport between discrete measures, the
//! debiased Sinkhorn divergence, and displacement interpolation.
//!
//! Exact transport is restricted to uniform measures of equal size, where an
//! optimal plan is a permutation and the problem is a linear assignment.
//! Entropic transport regularizes with the KL divergence of the plan
//! against the product measure:
//!
//! ```text
//! OT_eps(mu, nu) = min_pi <C, pi> + eps * KL(pi | mu x nu)
//! SD_eps(mu, nu) = OT_eps(mu, nu) - OT_eps(mu, mu) / 2 - OT_eps(nu, nu) / 2
//! ```

mod assignment;
mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{squared_euclidean_cost, CostMatrix, DiscreteMeasure};

pub use assignment::{assignment_value, solve_assignment};

/// Largest support handled by [`brute_force_ot`].
pub const ORACLE_MAX_SIZE: usize = 8;

/// Divergences in `[-NEGATIVE_CLAMP, 0)` are reported as zero.
pub const NEGATIVE_CLAMP: f64 = 1e-8;

/// Sinkhorn parameters. Serialized as
/// `{"epsilon": f, "tolerance": f, "max_iterations": n, "epsilon_scaling": b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub epsilon: f64,
    /// L1 tolerance on the marginals of the returned plan.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Anneal geometrically from `max(epsilon, 1)` down to `epsilon`.
    pub epsilon_scaling: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            tolerance: 1e-9,
            max_iterations: 100_000,
            epsilon_scaling: false,
        }
    }
}

impl SolverParams {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidEpsilon(self.epsilon));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Regularization values visited by the solver, ending at `epsilon`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if self.epsilon_scaling {
            let mut e = self.epsilon.max(1.0);
            while e > self.epsilon {
                out.push(e);
                e *= 0.5;
            }
        }
        out.push(self.epsilon);
        out
    }
}

/// A coupling between two discrete measures, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    coupling: Vec<f64>,
    /// `|| pi 1 - mu ||_1`
    pub source_marginal_residual: f64,
    /// `|| pi^T 1 - nu ||_1`
    pub target_marginal_residual: f64,
}

impl TransportPlan {
    pub(crate) fn from_coupling(
        rows: usize,
        cols: usize,
        coupling: Vec<f64>,
        a: &[f64],
        b: &[f64],
    ) -> Self {
        let mut col_sums = vec![0.0; cols];
        let mut source_residual = 0.0;
        for i in 0..rows {
            let row = &coupling[i * cols..(i + 1) * cols];
            source_residual += (row.iter().sum::<f64>() - a[i]).abs();
            for (c, p) in col_sums.iter_mut().zip(row) {
                *c += p;
            }
        }
        let target_residual = col_sums.iter().zip(b).map(|(c, w)| (c - w).abs()).sum();
        Self {
            rows,
            cols,
            coupling,
            source_marginal_residual: source_residual,
            target_marginal_residual: target_residual,
        }
    }

    /// Builds a plan from explicit entries, computing marginal residuals
    /// against `mu` and `nu`.
    pub fn new(
        coupling: Vec<f64>,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
    ) -> Result<Self> {
        if coupling.len() != mu.len() * nu.len() {
            return Err(Error::Mismatch(format!(
                "coupling has {} entries, expected {}x{}",
                coupling.len(),
                mu.len(),
                nu.len()
            )));
        }
        if coupling.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Mismatch("coupling entries must be nonnegative".into()));
        }
        Ok(Self::from_coupling(
            mu.len(),
            nu.len(),
            coupling,
            mu.weights(),
            nu.weights(),
        ))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.cols + j]
    }

    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    pub fn total_mass(&self) -> f64 {
        self.coupling.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    /// `<C, pi>` for exact transport, `<C, pi> + eps KL(pi)` for entropic.
    pub value: f64,
    pub plan: TransportPlan,
    pub iterations: usize,
    /// `KL(pi | mu x nu)`
    pub entropy: f64,
}

fn check_exact_scope(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: &CostMatrix) -> Result<()> {
    if mu.len() != nu.len() || !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::ExactScope);
    }
    cost.check_shape(mu.len(), nu.len())
}

fn permutation_result(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    assignment: &[usize],
) -> TransportResult {
    let n = assignment.len();
    let w = mu.weights()[0];
    let mut coupling = vec![0.0; n * n];
    for (i, &j) in assignment.iter().enumerate() {
        coupling[i * n + j] = w;
    }
    let plan = TransportPlan::from_coupling(n, n, coupling, mu.weights(), nu.weights());
    let entropy = kl_entropy(&plan, mu, nu);
    TransportResult {
        value: assignment_value(cost, assignment),
        plan,
        iterations: 0,
        entropy,
    }
}

/// Optimal permutation between two uniform measures of equal size:
/// `assignment[i]` is the target atom receiving source atom `i`.
pub fn optimal_assignment(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<Vec<usize>> {
    check_exact_scope(mu, nu, cost)?;
    Ok(solve_assignment(cost))
}

/// Unregularized transport between uniform measures of equal size.
///
/// The value is `min_sigma (1/n) sum_i C[i][sigma(i)]`; with a squared
/// Euclidean cost this is the squared 2-Wasserstein distance.
pub fn solve_exact_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<TransportResult> {
    let assignment = optimal_assignment(mu, nu, cost)?;
    Ok(permutation_result(mu, nu, cost, &assignment))
}

/// Exhaustive search over all `n!` permutations. Test oracle for
/// [`solve_exact_ot`]; limited to `n <= 8`.
pub fn brute_force_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<TransportResult> {
    check_exact_scope(mu, nu, cost)?;
    if mu.len() > ORACLE_MAX_SIZE {
        return Err(Error::OracleSizeLimit(mu.len()));
    }
    let assignment = assignment::brute_force_assignment(cost);
    Ok(permutation_result(mu, nu, cost, &assignment))
}

/// Squared 2-Wasserstein distance between uniform equal-size measures.
pub fn exact_ot_value(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let cost = squared_euclidean_cost(mu, nu);
    Ok(solve_exact_ot(mu, nu, &cost)?.value)
}

/// Entropic transport `OT_eps` by log-stabilized Sinkhorn iterations.
///
/// Stops once the L1 residual of the row marginals is at most
/// `params.tolerance` (columns are matched exactly at every step).
pub fn solve_entropic_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    params: &SolverParams,
) -> Result<TransportResult> {
    sinkhorn::solve(mu, nu, cost, params)
}

/// `KL(pi | mu x nu) = sum_ij pi_ij log(pi_ij / (mu_i nu_j))`, with
/// `0 log 0 = 0`. Rounding noise below zero is clipped.
pub fn kl_entropy(plan: &TransportPlan, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    debug_assert_eq!(plan.rows(), mu.len());
    debug_assert_eq!(plan.cols(), nu.len());
    let (a, b) = (mu.weights(), nu.weights());
    let mut total = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        let row = &plan.coupling()[i * plan.cols()..(i + 1) * plan.cols()];
        for (&p, &bj) in row.iter().zip(b) {
            if p > 0.0 {
                total += p * (p / (ai * bj)).ln();
            }
        }
    }
    total.max(0.0)
}

/// `OT_eps(mu, nu)` with the squared Euclidean cost.
pub fn entropic_ot_value(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    params: &SolverParams,
) -> Result<TransportResult> {
    let cost = squared_euclidean_cost(mu, nu);
    solve_entropic_ot(mu, nu, &cost, params)
}

/// Combines a cross term and two self terms into a Sinkhorn divergence,
/// clamping small negative values to zero.
pub fn debias(cross: f64, self_source: f64, self_target: f64) -> Result<f64> {
    let sd = cross - 0.5 * self_source - 0.5 * self_target;
    if sd >= 0.0 {
        Ok(sd)
    } else if sd >= -NEGATIVE_CLAMP {
        Ok(0.0)
    } else {
        Err(Error::NegativeDivergence(sd))
    }
}

/// Debiased Sinkhorn divergence with the squared Euclidean cost.
pub fn sinkhorn_divergence(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    params: &SolverParams,
) -> Result<f64> {
    let cross = entropic_ot_value(mu, nu, params)?.value;
    let self_mu = entropic_ot_value(mu, mu, params)?.value;
    let self_nu = entropic_ot_value(nu, nu, params)?.value;
    debias(cross, self_mu, self_nu)
}

/// `2 eps log(N M)`: the worst-case gap between the Sinkhorn divergence and
/// the unregularized transport cost.
pub fn divergence_error_bound(epsilon: f64, n_source: usize, n_target: usize) -> f64 {
    2.0 * epsilon * ((n_source as f64) * (n_target as f64)).ln()
}

/// Displacement interpolation `((1 - t) Id + t T)_# mu` along the optimal
/// permutation `T` from `mu` to `nu`. `t` may lie outside `[0, 1]`.
pub fn displacement_interpolate(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    t: f64,
) -> Result<DiscreteMeasure> {
    let cost = squared_euclidean_cost(mu, nu);
    let assignment = optimal_assignment(mu, nu, &cost)?;
    let (xs, ys) = (mu.points(), nu.points());
    let points = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let (x, y) = (xs[i], ys[j]);
            [(1.0 - t) * x[0] + t * y[0], (1.0 - t) * x[1] + t * y[1]]
        })
        .collect();
    DiscreteMeasure::uniform(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::make_uniform_measure;

    fn uniform(points: &[[f64; 2]]) -> DiscreteMeasure {
        make_uniform_measure(points.to_vec()).unwrap()
    }

    #[test]
    fn exact_self_transport_is_zero() {
        let mu = uniform(&[[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]]);
        let cost = squared_euclidean_cost(&mu, &mu);
        let r = solve_exact_ot(&mu, &mu, &cost).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(optimal_assignment(&mu, &mu, &cost).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn exact_two_point_example() {
        // identity: (1 + 1) / 2 = 1; swap: (2 + 2) / 2 = 2
        let mu = uniform(&[[0.0, 0.0], [1.0, 0.0]]);
        let nu = uniform(&[[0.0, 1.0], [1.0, 1.0]]);
        let cost = squared_euclidean_cost(&mu, &nu);
        assert_eq!(solve_exact_ot(&mu, &nu, &cost).unwrap().value, 1.0);
        assert_eq!(brute_force_ot(&mu, &nu, &cost).unwrap().value, 1.0);
    }

    #[test]
    fn exact_plan_is_scaled_permutation() {
        let mu = uniform(&[[0.0, 0.0], [1.0, 0.0]]);
        let nu = uniform(&[[1.1, 0.0], [0.1, 0.0]]);
        let r = solve_exact_ot(&mu, &nu, &squared_euclidean_cost(&mu, &nu)).unwrap();
        assert_eq!(r.plan.get(0, 1), 0.5);
        assert_eq!(r.plan.get(1, 0), 0.5);
        assert_eq!(r.plan.source_marginal_residual, 0.0);
        assert_eq!(r.plan.target_marginal_residual, 0.0);
        assert!((r.entropy - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn exact_scope_errors() {
        let mu = uniform(&[[0.0, 0.0], [1.0, 0.0]]);
        let nu = uniform(&[[0.0, 0.0]]);
        let err = solve_exact_ot(&mu, &nu, &squared_euclidean_cost(&mu, &nu)).unwrap_err();
        assert_eq!(err.to_string(), "exact solver requires uniform equal-size measures");
        let skew = DiscreteMeasure::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![0.25, 0.75]).unwrap();
        assert!(matches!(
            solve_exact_ot(&skew, &mu, &squared_euclidean_cost(&skew, &mu)),
            Err(Error::ExactScope)
        ));
    }

    #[test]
    fn oracle_single_atom_and_size_limit() {
        let mu = uniform(&[[0.0, 0.0]]);
        let nu = uniform(&[[2.0, 1.0]]);
        let cost = squared_euclidean_cost(&mu, &nu);
        assert_eq!(brute_force_ot(&mu, &nu, &cost).unwrap().value, 5.0);

        let big = uniform(&(0..9).map(|i| [i as f64, 0.0]).collect::<Vec<_>>());
        let err = brute_force_ot(&big, &big, &squared_euclidean_cost(&big, &big)).unwrap_err();
        assert!(err.to_string().contains("oracle size limit"));
    }

    #[test]
    fn oracle_rotated_triangle() {
        let tri: Vec<[f64; 2]> = (0..3)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let rotated: Vec<[f64; 2]> = tri.iter().map(|p| [-p[0], -p[1]]).collect();
        let (mu, nu) = (uniform(&tri), uniform(&rotated));
        let cost = squared_euclidean_cost(&mu, &nu);
        let oracle = brute_force_ot(&mu, &nu, &cost).unwrap().value;
        let fast = solve_exact_ot(&mu, &nu, &cost).unwrap().value;
        assert_eq!(oracle, fast);
        // each vertex goes to the antipode of another vertex: |x - y|^2 = 1
        assert!((oracle - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropic_single_atom() {
        let mu = uniform(&[[0.5, -0.25]]);
        let r = entropic_ot_value(&mu, &mu, &SolverParams::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.iterations <= 2);
    }

    #[test]
    fn entropic_rejects_bad_epsilon() {
        let mu = uniform(&[[0.0, 0.0]]);
        for eps in [0.0, -1.0, f64::NAN] {
            let p = SolverParams::default().with_epsilon(eps);
            assert!(matches!(
                entropic_ot_value(&mu, &mu, &p),
                Err(Error::InvalidEpsilon(_))
            ));
        }
    }

    #[test]
    fn entropic_reports_non_convergence() {
        let mu = uniform(&(0..10).map(|i| [i as f64 * 0.1, 0.0]).collect::<Vec<_>>());
        let nu = uniform(&(0..10).map(|i| [0.05 + i as f64 * 0.13, 0.0]).collect::<Vec<_>>());
        let p = SolverParams {
            epsilon: 1e-3,
            tolerance: 1e-14,
            max_iterations: 3,
            epsilon_scaling: false,
        };
        match entropic_ot_value(&mu, &nu, &p) {
            Err(Error::NotConverged {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kl_of_product_coupling_is_zero() {
        let mu = uniform(&[[0.0, 0.0], [1.0, 0.0], [3.0, 1.0]]);
        let nu = DiscreteMeasure::new(vec![[0.0, 1.0], [2.0, 2.0]], vec![0.25, 0.75]).unwrap();
        let coupling: Vec<f64> = mu
            .weights()
            .iter()
            .flat_map(|a| nu.weights().iter().map(move |b| a * b))
            .collect();
        let plan = TransportPlan::new(coupling, &mu, &nu).unwrap();
        assert_eq!(kl_entropy(&plan, &mu, &nu), 0.0);
    }

    #[test]
    fn kl_of_permutation_plan() {
        // two terms 1/2 log((1/2) / (1/4))
        let mu = uniform(&[[0.0, 0.0], [1.0, 0.0]]);
        let plan = TransportPlan::new(vec![0.0, 0.5, 0.5, 0.0], &mu, &mu).unwrap();
        assert!((kl_entropy(&plan, &mu, &mu) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn divergence_bound_values() {
        assert!((divergence_error_bound(1e-3, 100, 100) - 0.018421).abs() < 1e-6);
        assert!((divergence_error_bound(0.01, 256, 256) - 0.221807).abs() < 1e-6);
        assert_eq!(divergence_error_bound(0.7, 1, 1), 0.0);
    }

    #[test]
    fn debias_clamps_and_rejects() {
        assert_eq!(debias(1.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(debias(1.0, 1.0, 1.0 + 1e-9).unwrap(), 0.0);
        assert!(matches!(
            debias(1.0, 1.0, 1.0 + 1e-6),
            Err(Error::NegativeDivergence(_))
        ));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let mu = uniform(&[[0.0, 0.0]]);
        let nu = uniform(&[[2.0, 0.0]]);
        let mid = displacement_interpolate(&mu, &nu, 0.5).unwrap();
        assert_eq!(mid.points(), &[[1.0, 0.0]]);

        let mu = uniform(&[[0.0, 0.0], [1.0, 0.3], [0.2, 0.9]]);
        let nu = uniform(&[[1.5, 0.1], [0.1, 1.2], [-0.4, -0.2]]);
        assert_eq!(displacement_interpolate(&mu, &nu, 0.0).unwrap().points(), mu.points());
        let end = displacement_interpolate(&mu, &nu, 1.0).unwrap();
        let mut got = end.points().to_vec();
        let mut want = nu.points().to_vec();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn schedule_halves_down_to_target() {
        let p = SolverParams {
            epsilon: 0.1,
            epsilon_scaling: true,
            ..Default::default()
        };
        assert_eq!(p.schedule(), vec![1.0, 0.5, 0.25, 0.125, 0.1]);
        assert_eq!(SolverParams::default().schedule(), vec![1e-3]);
    }

    #[test]
    fn solver_params_json_is_strict() {
        let p: SolverParams = serde_json::from_str(
            r#"{"epsilon": 0.01, "tolerance": 1e-8, "max_iterations": 10, "epsilon_scaling": true}"#,
        )
        .unwrap();
        assert_eq!(p.max_iterations, 10);
        assert!(p.epsilon_scaling);
        assert!(serde_json::from_str::<SolverParams>(r#"{"epsilon": 0.1, "eps": 1}"#).is_err());
    }
}
