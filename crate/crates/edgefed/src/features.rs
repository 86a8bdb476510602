//! Feature engineering and selection: inter-arrival statistics, packet-size
//! entropy, standardization, incremental PCA, permutation importance and
//! class balancing (random undersampling, SMOTE, adaptive SMOTE).

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Dataset;
use crate::util::rng_from_seed;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least 2 timestamps, got {0}")]
    TooFewTimestamps(usize),
    #[error("packet size list is empty")]
    EmptySizes,
    #[error("column count {got} does not match fitted model ({expected})")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("component count {k} exceeds feature count {d}")]
    TooManyComponents { k: usize, d: usize },
    #[error("variance target must be in (0, 1], got {0}")]
    InvalidVarianceTarget(f64),
    #[error("repeats must be positive")]
    ZeroRepeats,
    #[error("k_neighbors ({k}) must be >= 1 and < minority class size ({minority})")]
    BadNeighborCount { k: usize, minority: usize },
    #[error("dataset error: {0}")]
    Data(#[from] crate::dataio::DataError),
    #[error("artifact version {0} unsupported")]
    BadArtifactVersion(u32),
    #[error("serialization error: {0}")]
    Serde(String),
}

/// Mean and standard deviation of flow inter-arrival times. Timestamps are
/// in microseconds and must be nondecreasing; with n timestamps there are
/// n-1 gaps and both statistics divide by n-1.
pub fn iat_stats(timestamps_us: &[f64]) -> Result<(f64, f64), FeatureError> {
    if timestamps_us.len() < 2 {
        return Err(FeatureError::TooFewTimestamps(timestamps_us.len()));
    }
    let gaps: Vec<f64> = timestamps_us.windows(2).map(|w| w[1] - w[0]).collect();
    let n1 = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n1;
    let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n1;
    Ok((mean, var.sqrt()))
}

/// Shannon entropy (bits) over the empirical distribution of packet sizes.
pub fn packet_size_entropy(sizes: &[u64]) -> Result<f64, FeatureError> {
    if sizes.is_empty() {
        return Err(FeatureError::EmptySizes);
    }
    let mut counts = std::collections::HashMap::new();
    for &s in sizes {
        *counts.entry(s).or_insert(0usize) += 1;
    }
    let n = sizes.len() as f64;
    let h = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Column-wise standardizer (population standard deviation). Constant
/// columns are recorded with std 0 and transform to all zeros.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: u32,
    artifact: T,
}

impl Scaler {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Versioned {
            version: ARTIFACT_VERSION,
            artifact: self,
        })
        .expect("scaler serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FeatureError> {
        let v: Versioned<Scaler> =
            serde_json::from_str(s).map_err(|e| FeatureError::Serde(e.to_string()))?;
        if v.version != ARTIFACT_VERSION {
            return Err(FeatureError::BadArtifactVersion(v.version));
        }
        Ok(v.artifact)
    }

    /// Undoes `apply_standardize` on a transformed dataset.
    pub fn invert(&self, ds: &Dataset) -> Result<Dataset, FeatureError> {
        if ds.n_features() != self.means.len() {
            return Err(FeatureError::DimensionMismatch {
                got: ds.n_features(),
                expected: self.means.len(),
            });
        }
        let mut features = ds.features.clone();
        for j in 0..self.means.len() {
            let sd = if self.stds[j] == 0.0 { 1.0 } else { self.stds[j] };
            for i in 0..ds.n_rows() {
                features[[i, j]] = features[[i, j]] * sd + self.means[j];
            }
        }
        Ok(Dataset {
            features,
            labels: ds.labels.clone(),
            class_names: ds.class_names.clone(),
            column_names: ds.column_names.clone(),
        })
    }
}

pub fn fit_standardize(ds: &Dataset) -> Scaler {
    let n = ds.n_rows() as f64;
    let mut means = Vec::with_capacity(ds.n_features());
    let mut stds = Vec::with_capacity(ds.n_features());
    for j in 0..ds.n_features() {
        let col = ds.features.column(j);
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        means.push(m);
        stds.push(var.sqrt());
    }
    Scaler { means, stds }
}

pub fn apply_standardize(ds: &Dataset, scaler: &Scaler) -> Result<Dataset, FeatureError> {
    if ds.n_features() != scaler.means.len() {
        return Err(FeatureError::DimensionMismatch {
            got: ds.n_features(),
            expected: scaler.means.len(),
        });
    }
    let mut features = ds.features.clone();
    for j in 0..scaler.means.len() {
        let sd = if scaler.stds[j] == 0.0 { 1.0 } else { scaler.stds[j] };
        for i in 0..ds.n_rows() {
            features[[i, j]] = (features[[i, j]] - scaler.means[j]) / sd;
        }
    }
    Ok(Dataset {
        features,
        labels: ds.labels.clone(),
        class_names: ds.class_names.clone(),
        column_names: ds.column_names.clone(),
    })
}

/// Principal components of a (standardized) feature matrix. `components`
/// holds the top-k eigenvectors of the empirical covariance as rows;
/// `eigenvalues` keeps the full spectrum in descending order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    pub k: usize,
    pub variance_retained: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PcaTarget {
    /// Smallest k whose cumulative explained-variance ratio reaches v.
    Variance(f64),
    /// Fixed component count.
    Components(usize),
}

impl PcaModel {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues.iter().map(|l| l / total).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Versioned {
            version: ARTIFACT_VERSION,
            artifact: self,
        })
        .expect("pca model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FeatureError> {
        let v: Versioned<PcaModel> =
            serde_json::from_str(s).map_err(|e| FeatureError::Serde(e.to_string()))?;
        if v.version != ARTIFACT_VERSION {
            return Err(FeatureError::BadArtifactVersion(v.version));
        }
        Ok(v.artifact)
    }

    /// Back-projection from component space to the original feature space.
    pub fn inverse_transform(&self, projected: &Array2<f64>) -> Array2<f64> {
        let mut out = projected.dot(&self.components);
        let mean = Array1::from_vec(self.mean.clone());
        for mut row in out.axis_iter_mut(Axis(0)) {
            row += &mean;
        }
        out
    }
}

/// Streaming covariance accumulator (pairwise mean/scatter merge).
struct CovAccumulator {
    n: f64,
    mean: Array1<f64>,
    scatter: Array2<f64>,
}

impl CovAccumulator {
    fn new(d: usize) -> Self {
        Self {
            n: 0.0,
            mean: Array1::zeros(d),
            scatter: Array2::zeros((d, d)),
        }
    }

    fn update_batch(&mut self, batch: &Array2<f64>) {
        let nb = batch.nrows() as f64;
        if nb == 0.0 {
            return;
        }
        let mean_b = batch.mean_axis(Axis(0)).expect("nonempty batch");
        let mut centered = batch.clone();
        for mut row in centered.axis_iter_mut(Axis(0)) {
            row -= &mean_b;
        }
        let scatter_b = centered.t().dot(&centered);
        if self.n == 0.0 {
            self.n = nb;
            self.mean = mean_b;
            self.scatter = scatter_b;
            return;
        }
        let n_total = self.n + nb;
        let delta = &mean_b - &self.mean;
        let outer = delta
            .view()
            .insert_axis(Axis(1))
            .dot(&delta.view().insert_axis(Axis(0)));
        self.scatter = &self.scatter + &scatter_b + &(outer * (self.n * nb / n_total));
        self.mean = &self.mean + &(&delta * (nb / n_total));
        self.n = n_total;
    }

    fn covariance(&self) -> Array2<f64> {
        let denom = (self.n - 1.0).max(1.0);
        &self.scatter / denom
    }
}

/// Symmetric eigendecomposition sorted by descending eigenvalue.
fn sym_eig_desc(cov: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = cov.nrows();
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    // rows of `components` are eigenvectors
    let mut components = Array2::zeros((d, d));
    for (row, &i) in order.iter().enumerate() {
        for j in 0..d {
            components[[row, j]] = eig.eigenvectors[(j, i)];
        }
    }
    (eigenvalues, components)
}

/// Fits PCA by accumulating mini-batch mean/covariance statistics and
/// eigendecomposing the accumulated covariance. The batch pass is exact,
/// so desk-scale results match a full-matrix decomposition.
pub fn fit_incremental_pca(
    ds: &Dataset,
    batch_size: usize,
    target: PcaTarget,
) -> Result<PcaModel, FeatureError> {
    let d = ds.n_features();
    match target {
        PcaTarget::Components(k) if k > d || k == 0 => {
            return Err(FeatureError::TooManyComponents { k, d })
        }
        PcaTarget::Variance(v) if !(v > 0.0 && v <= 1.0) => {
            return Err(FeatureError::InvalidVarianceTarget(v))
        }
        _ => {}
    }
    let batch_size = batch_size.max(1);
    let mut acc = CovAccumulator::new(d);
    let mut start = 0;
    while start < ds.n_rows() {
        let end = (start + batch_size).min(ds.n_rows());
        let batch = ds.features.slice(ndarray::s![start..end, ..]).to_owned();
        acc.update_batch(&batch);
        start = end;
    }
    let cov = acc.covariance();
    let (eigenvalues, all_components) = sym_eig_desc(&cov);
    let total: f64 = eigenvalues.iter().sum();
    let k = match target {
        PcaTarget::Components(k) => k,
        PcaTarget::Variance(v) => {
            let mut cum = 0.0;
            let mut k = d;
            for (i, l) in eigenvalues.iter().enumerate() {
                cum += l;
                if total > 0.0 && cum / total >= v - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    let variance_retained = if total > 0.0 {
        eigenvalues[..k].iter().sum::<f64>() / total
    } else {
        1.0
    };
    Ok(PcaModel {
        components: all_components.slice(ndarray::s![..k, ..]).to_owned(),
        eigenvalues,
        k,
        variance_retained,
        mean: acc.mean.to_vec(),
    })
}

/// Projects a dataset onto the fitted components (centered, then rotated).
pub fn transform_pca(ds: &Dataset, model: &PcaModel) -> Result<Dataset, FeatureError> {
    if ds.n_features() != model.mean.len() {
        return Err(FeatureError::DimensionMismatch {
            got: ds.n_features(),
            expected: model.mean.len(),
        });
    }
    let mean = Array1::from_vec(model.mean.clone());
    let mut centered = ds.features.clone();
    for mut row in centered.axis_iter_mut(Axis(0)) {
        row -= &mean;
    }
    let projected = centered.dot(&model.components.t());
    Ok(Dataset {
        features: projected,
        labels: ds.labels.clone(),
        class_names: ds.class_names.clone(),
        column_names: (0..model.k).map(|i| format!("pc{:02}", i + 1)).collect(),
    })
}

/// Anything that can label a feature matrix.
pub trait Predictor {
    fn predict(&self, features: &Array2<f64>) -> Vec<usize>;
}

impl<F> Predictor for F
where
    F: Fn(&Array2<f64>) -> Vec<usize>,
{
    fn predict(&self, features: &Array2<f64>) -> Vec<usize> {
        self(features)
    }
}

/// Permutation importance as a disagreement rate: the mean fraction of rows
/// whose prediction changes when one column is shuffled. Scores lie in
/// [0, 1]; features the model ignores score 0.
pub fn permutation_importance(
    model: &dyn Predictor,
    ds: &Dataset,
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>, FeatureError> {
    if repeats == 0 {
        return Err(FeatureError::ZeroRepeats);
    }
    let baseline = model.predict(&ds.features);
    let n = ds.n_rows();
    let mut rng = rng_from_seed(seed);
    let mut scores = vec![0.0; ds.n_features()];
    for _ in 0..repeats {
        for (j, score) in scores.iter_mut().enumerate() {
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let r = rng.random_range(0..=i);
                perm.swap(i, r);
            }
            let mut shuffled = ds.features.clone();
            for (i, &src) in perm.iter().enumerate() {
                shuffled[[i, j]] = ds.features[[src, j]];
            }
            let preds = model.predict(&shuffled);
            let disagree = preds
                .iter()
                .zip(baseline.iter())
                .filter(|(a, b)| a != b)
                .count();
            *score += disagree as f64 / n as f64;
        }
    }
    for s in scores.iter_mut() {
        *s /= repeats as f64;
    }
    Ok(scores)
}

/// Downsamples every class to the smallest class count.
pub fn undersample(ds: &Dataset, seed: u64) -> Result<Dataset, FeatureError> {
    let counts = ds.class_counts();
    let min = counts
        .iter()
        .copied()
        .filter(|&c| c > 0)
        .min()
        .unwrap_or(0);
    let mut rng = rng_from_seed(seed);
    let mut keep = Vec::new();
    for c in 0..ds.n_classes() {
        let mut idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        keep.extend_from_slice(&idx[..min.min(idx.len())]);
    }
    Ok(ds.select_rows(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoteMode {
    /// Interpolation weight drawn from U(0, 1).
    Uniform,
    /// Density-aware weight from Beta(1 + rho, 1 + (1 - rho)), where rho is
    /// the non-minority fraction among a point's k nearest overall
    /// neighbors (a local sparsity proxy).
    Adaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub mode: SmoteMode,
    pub target_count_per_class: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            mode: SmoteMode::Uniform,
            target_count_per_class: 0,
            seed: 0,
        }
    }
}

fn squared_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the k nearest rows among `candidates` to row `i` (excluding
/// `i` itself). Exact brute force.
fn k_nearest(
    features: &Array2<f64>,
    i: usize,
    candidates: &[usize],
    k: usize,
) -> Vec<usize> {
    let mut dists: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != i)
        .map(|&c| (squared_distance(features.row(i), features.row(c)), c))
        .collect();
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
    dists.into_iter().take(k).map(|(_, c)| c).collect()
}

/// Grows minority classes to `target_count_per_class` by interpolating
/// between a minority point and one of its k nearest minority neighbors
/// (`x_new = x_i + lambda * (x_ij - x_i)`). Original rows are never
/// modified; a target of 0 means "match the largest class".
pub fn smote(ds: &Dataset, cfg: &SmoteConfig) -> Result<Dataset, FeatureError> {
    let counts = ds.class_counts();
    let target = if cfg.target_count_per_class == 0 {
        *counts.iter().max().unwrap()
    } else {
        cfg.target_count_per_class
    };
    let mut rng = rng_from_seed(cfg.seed);
    let all_rows: Vec<usize> = (0..ds.n_rows()).collect();
    let mut new_rows: Vec<Array1<f64>> = Vec::new();
    let mut new_labels: Vec<usize> = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 || count >= target {
            continue;
        }
        if cfg.k_neighbors == 0 || cfg.k_neighbors >= count {
            return Err(FeatureError::BadNeighborCount {
                k: cfg.k_neighbors,
                minority: count,
            });
        }
        let minority: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels[i] == c).collect();
        // per-point neighbor lists within the minority class
        let neighbor_lists: Vec<Vec<usize>> = minority
            .iter()
            .map(|&i| k_nearest(&ds.features, i, &minority, cfg.k_neighbors))
            .collect();
        // local sparsity for adaptive mode: non-minority share among the k
        // nearest neighbors over the whole dataset
        let rho: Vec<f64> = match cfg.mode {
            SmoteMode::Uniform => vec![0.0; minority.len()],
            SmoteMode::Adaptive => minority
                .iter()
                .map(|&i| {
                    let nn = k_nearest(&ds.features, i, &all_rows, cfg.k_neighbors);
                    nn.iter().filter(|&&j| ds.labels[j] != c).count() as f64 / nn.len() as f64
                })
                .collect(),
        };
        for _ in 0..(target - count) {
            let pick = rng.random_range(0..minority.len());
            let base = minority[pick];
            let neighbors = &neighbor_lists[pick];
            let neighbor = neighbors[rng.random_range(0..neighbors.len())];
            let lambda = match cfg.mode {
                SmoteMode::Uniform => rng.random::<f64>(),
                SmoteMode::Adaptive => {
                    let r = rho[pick];
                    let beta = Beta::new(1.0 + r, 1.0 + (1.0 - r))
                        .expect("valid beta parameters");
                    beta.sample(&mut rng)
                }
            };
            let xi = ds.features.row(base);
            let xj = ds.features.row(neighbor);
            let synth = &xi + &((&xj - &xi) * lambda);
            new_rows.push(synth.to_owned());
            new_labels.push(c);
        }
    }
    let total = ds.n_rows() + new_rows.len();
    let mut features = Array2::zeros((total, ds.n_features()));
    features
        .slice_mut(ndarray::s![..ds.n_rows(), ..])
        .assign(&ds.features);
    for (i, row) in new_rows.iter().enumerate() {
        features.row_mut(ds.n_rows() + i).assign(row);
    }
    let mut labels = ds.labels.clone();
    labels.extend(new_labels);
    Ok(Dataset {
        features,
        labels,
        class_names: ds.class_names.clone(),
        column_names: ds.column_names.clone(),
    })
}
