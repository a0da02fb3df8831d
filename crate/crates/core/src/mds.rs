//! Classical multidimensional scaling and its Sinkhorn variant.
//!
//! Given a matrix `A` of squared dissimilarities, the Gram matrix
//! `B = -1/2 H A H` (with `H = I - 11^T / N`) is eigendecomposed and each
//! item is mapped to `(sqrt(l_1) v_1(i), ..., sqrt(l_k) v_k(i))`. With `A`
//! built from pairwise Sinkhorn divergences this is Sinkhorn MDS; with exact
//! squared Wasserstein distances it is the unregularized reference
//! embedding.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::transport::{debias, entropic_ot_value, exact_ot_value, SolverParams};

/// Eigenvalues with `|l| <= POSITIVE_THRESHOLD * |l_1|` count as zero.
pub const POSITIVE_THRESHOLD: f64 = 1e-10;
/// Relative size below which an eigengap counts as zero.
pub const EIGENGAP_THRESHOLD: f64 = 1e-12;

/// Symmetric matrix stored as its packed lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    packed: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
    hi * (hi + 1) / 2 + lo
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            packed: vec![0.0; n * (n + 1) / 2],
        }
    }

    /// `f` is called once per `(i, j)` with `i >= j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                packed.push(f(i, j));
            }
        }
        Self { n, packed }
    }

    /// Rejects ragged or non-symmetric input (exact comparison).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyMatrix);
        }
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::Mismatch(format!(
                "expected {n} columns, found a row with {}",
                r.len()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if rows[i][j].to_bits() != rows[j][i].to_bits() {
                    return Err(Error::NotSymmetric(i, j));
                }
            }
        }
        Ok(Self::from_fn(n, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.packed[packed_index(i, j)] = value;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `N` header-less rows of `N` values, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{:.16e}", self.get(i, j)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(r, line)| {
                line.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("row {}: {e}", r + 1)))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

/// Eigenpairs sorted by descending eigenvalue; `vectors[j]` pairs with
/// `values[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// Full eigendecomposition (Householder tridiagonalization followed by
/// implicit-shift QR). Each eigenvector is signed so that its entry of
/// largest magnitude is positive, the lowest index winning ties.
pub fn symmetric_eigen(matrix: &SymmetricMatrix) -> SymmetricEigen {
    let n = matrix.n();
    let eig = nalgebra::SymmetricEigen::new(matrix.to_dmatrix());
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep the solver's order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&c| eig.eigenvalues[c]).collect();
    let vectors = order
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let mut pivot = 0;
            for (i, x) in v.iter().enumerate() {
                if x.abs() > v[pivot].abs() {
                    pivot = i;
                }
            }
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    SymmetricEigen { values, vectors }
}

/// Number of eigenvalues above `POSITIVE_THRESHOLD * |l_1|`.
pub fn positive_count(spectrum: &[f64]) -> usize {
    let Some(&top) = spectrum.first() else {
        return 0;
    };
    let cutoff = POSITIVE_THRESHOLD * top.abs();
    spectrum.iter().filter(|&&l| l > cutoff).count()
}

/// `B = -1/2 H A H`, computed by double centering.
pub fn gram_from_squared_distances(a: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let n = a.n();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let nf = n as f64;
    let means: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| a.get(i, j)).sum::<f64>() / nf)
        .collect();
    let grand = means.iter().sum::<f64>() / nf;
    Ok(SymmetricMatrix::from_fn(n, |i, j| {
        -0.5 * (a.get(i, j) - means[i] - means[j] + grand)
    }))
}

/// Low-dimensional coordinates plus the full spectrum of the Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `coordinates[i]` is the image of item `i`, of length `k`.
    pub coordinates: Vec<Vec<f64>>,
    /// Eigenvalues of the Gram matrix, descending.
    pub spectrum: Vec<f64>,
    pub k: usize,
    pub positive_count: usize,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.coordinates.iter().map(|row| row[j]).collect()
    }

    /// CSV with header `id,c1,...,ck`; row `i` carries id `i`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for j in 1..=self.k {
            write!(out, ",c{j}").unwrap();
        }
        out.push('\n');
        for (id, row) in self.coordinates.iter().enumerate() {
            write!(out, "{id}").unwrap();
            for x in row {
                write!(out, ",{x:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn sidecar(&self, epsilon: f64) -> SpectrumSidecar {
        SpectrumSidecar {
            spectrum: self.spectrum.clone(),
            positive_count: self.positive_count,
            k: self.k,
            epsilon,
        }
    }
}

/// JSON companion of an embedding CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSidecar {
    pub spectrum: Vec<f64>,
    pub positive_count: usize,
    pub k: usize,
    pub epsilon: f64,
}

/// Embeds the eigenpairs of a Gram matrix into `k` dimensions.
pub fn embed_gram(b: &SymmetricMatrix, k: usize) -> Result<Embedding> {
    let n = b.n();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let eig = symmetric_eigen(b);
    let positive = positive_count(&eig.values);
    if k == 0 || k > positive {
        return Err(Error::EmbeddingDimension {
            k,
            positive_count: positive,
        });
    }
    let scales: Vec<f64> = eig.values[..k].iter().map(|l| l.sqrt()).collect();
    let coordinates = (0..n)
        .map(|i| (0..k).map(|j| scales[j] * eig.vectors[j][i]).collect())
        .collect();
    Ok(Embedding {
        coordinates,
        spectrum: eig.values,
        k,
        positive_count: positive,
    })
}

/// Classical MDS of a squared-distance matrix into `k` dimensions.
pub fn classical_mds(a: &SymmetricMatrix, k: usize) -> Result<Embedding> {
    embed_gram(&gram_from_squared_distances(a)?, k)
}

/// Solver bookkeeping for a pairwise matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PairwiseStats {
    pub self_solves: usize,
    pub cross_solves: usize,
    pub exact_solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
}

impl PairwiseStats {
    pub fn merge(&mut self, other: &PairwiseStats) {
        self.self_solves += other.self_solves;
        self.cross_solves += other.cross_solves;
        self.exact_solves += other.exact_solves;
        self.total_iterations += other.total_iterations;
        self.max_iterations = self.max_iterations.max(other.max_iterations);
    }
}

fn lower_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

/// Pairwise Sinkhorn divergence matrix.
///
/// The `N` self terms are solved first, then each unordered pair once; pair
/// solves may run in parallel but assembly order is fixed, so the result is
/// bit-identical for any thread count.
pub fn pairwise_divergence_matrix_with_stats(
    measures: &[DiscreteMeasure],
    params: &SolverParams,
) -> Result<(SymmetricMatrix, PairwiseStats)> {
    let n = measures.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    params.validate()?;
    let self_terms = measures
        .par_iter()
        .enumerate()
        .map(|(i, m)| entropic_ot_value(m, m, params).map_err(|e| e.at_pair(i, i)))
        .collect::<Result<Vec<_>>>()?;
    let pairs = lower_pairs(n);
    let cross_terms = pairs
        .par_iter()
        .map(|&(i, j)| {
            let r = entropic_ot_value(&measures[i], &measures[j], params)
                .map_err(|e| e.at_pair(i, j))?;
            let sd = debias(r.value, self_terms[i].value, self_terms[j].value)
                .map_err(|e| e.at_pair(i, j))?;
            Ok((sd, r.iterations))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut stats = PairwiseStats {
        self_solves: n,
        cross_solves: pairs.len(),
        ..Default::default()
    };
    for it in self_terms
        .iter()
        .map(|r| r.iterations)
        .chain(cross_terms.iter().map(|c| c.1))
    {
        stats.total_iterations += it;
        stats.max_iterations = stats.max_iterations.max(it);
    }
    let mut matrix = SymmetricMatrix::zeros(n);
    for (&(i, j), &(sd, _)) in pairs.iter().zip(&cross_terms) {
        matrix.set(i, j, sd);
    }
    Ok((matrix, stats))
}

pub fn pairwise_divergence_matrix(
    measures: &[DiscreteMeasure],
    params: &SolverParams,
) -> Result<SymmetricMatrix> {
    Ok(pairwise_divergence_matrix_with_stats(measures, params)?.0)
}

/// Pairwise squared Wasserstein distances (exact transport).
pub fn pairwise_ot_matrix(measures: &[DiscreteMeasure]) -> Result<SymmetricMatrix> {
    Ok(pairwise_ot_matrix_with_stats(measures)?.0)
}

pub fn pairwise_ot_matrix_with_stats(
    measures: &[DiscreteMeasure],
) -> Result<(SymmetricMatrix, PairwiseStats)> {
    let n = measures.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let pairs = lower_pairs(n);
    let values = pairs
        .par_iter()
        .map(|&(i, j)| exact_ot_value(&measures[i], &measures[j]).map_err(|e| e.at_pair(i, j)))
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = SymmetricMatrix::zeros(n);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        matrix.set(i, j, v);
    }
    let stats = PairwiseStats {
        exact_solves: pairs.len(),
        ..Default::default()
    };
    Ok((matrix, stats))
}

pub fn sinkhorn_mds_with_stats(
    measures: &[DiscreteMeasure],
    k: usize,
    params: &SolverParams,
) -> Result<(Embedding, SymmetricMatrix, PairwiseStats)> {
    let (a, stats) = pairwise_divergence_matrix_with_stats(measures, params)?;
    let embedding = classical_mds(&a, k)?;
    Ok((embedding, a, stats))
}

/// Sinkhorn MDS: classical MDS on the pairwise Sinkhorn divergence matrix.
pub fn sinkhorn_mds(
    measures: &[DiscreteMeasure],
    k: usize,
    params: &SolverParams,
) -> Result<Embedding> {
    Ok(sinkhorn_mds_with_stats(measures, k, params)?.0)
}

/// Upper bound on the mean squared distance between the Sinkhorn MDS
/// embedding and the unregularized one:
///
/// ```text
/// 64 l_1 k N (log n_max)^2 eps^2 / (l_k - l_(k+1))^2 + 4 k (log n_max) eps
/// ```
///
/// `spectrum` is the descending spectrum of the unregularized Gram matrix.
/// Requires `k <= pr(B)` and a nonzero eigengap; when `k = N` the gap is
/// taken as infinite.
pub fn embedding_error_bound(
    spectrum: &[f64],
    k: usize,
    n_shapes: usize,
    max_support: usize,
    epsilon: f64,
) -> Result<f64> {
    let positive = positive_count(spectrum);
    if k == 0 || k > positive {
        return Err(Error::EmbeddingDimension {
            k,
            positive_count: positive,
        });
    }
    let l1 = spectrum[0];
    let gap = match spectrum.get(k) {
        Some(next) => spectrum[k - 1] - next,
        None => f64::INFINITY,
    };
    if gap <= EIGENGAP_THRESHOLD * l1.abs() {
        return Err(Error::ZeroEigengap { gap });
    }
    let log_n = (max_support as f64).ln();
    let (kf, nf) = (k as f64, n_shapes as f64);
    let rotation = 64.0 * l1 * kf * nf * log_n * log_n * epsilon * epsilon / (gap * gap);
    Ok(rotation + 4.0 * kf * log_n * epsilon)
}

/// Flips each column of `embedding` whose inner product with the matching
/// column of `reference` is negative.
pub fn align_signs(embedding: &Embedding, reference: &Embedding) -> Result<Embedding> {
    check_compatible(embedding, reference)?;
    let mut out = embedding.clone();
    for j in 0..embedding.k {
        let dot: f64 = embedding
            .coordinates
            .iter()
            .zip(&reference.coordinates)
            .map(|(a, b)| a[j] * b[j])
            .sum();
        if dot < 0.0 {
            out.coordinates.iter_mut().for_each(|row| row[j] = -row[j]);
        }
    }
    Ok(out)
}

fn check_compatible(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.len() != b.len() || a.k != b.k {
        return Err(Error::Mismatch(format!(
            "embeddings are {}x{} and {}x{}",
            a.len(),
            a.k,
            b.len(),
            b.k
        )));
    }
    Ok(())
}

/// `(1/N) sum_i |phi_eps(i) - phi(i)|^2`. Signs are compared as given.
pub fn mean_squared_embedding_gap(phi_eps: &Embedding, phi: &Embedding) -> Result<f64> {
    check_compatible(phi_eps, phi)?;
    let total: f64 = phi_eps
        .coordinates
        .iter()
        .zip(&phi.coordinates)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    Ok(total / phi.len() as f64)
}
