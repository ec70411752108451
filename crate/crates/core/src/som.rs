//! One-dimensional Kohonen maps ("strings") with distances restricted to the
//! observed components of each input, and a two-level reduction in which a
//! small string is trained over the code-vectors of a larger one.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_json, write_json, ContinuousTable};
use crate::error::{Error, Result};

pub const CLUSTERING_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomConfig {
    pub units: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub radius_start: usize,
    pub radius_end: usize,
    pub seed: u64,
}

impl SomConfig {
    /// Defaults: 20 epochs, learning rate 0.5 → 0.01, radius ⌈units/4⌉ → 0.
    pub fn new(units: usize, seed: u64) -> Self {
        SomConfig {
            units,
            epochs: 20,
            lr_start: 0.5,
            lr_end: 0.01,
            radius_start: units.div_ceil(4),
            radius_end: 0,
            seed,
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("som config: {msg}")));
        if self.units == 0 {
            return bad("units must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start <= 1.0) {
            return bad("need 0 < lr_end <= lr_start <= 1");
        }
        if self.radius_end > self.radius_start {
            return bad("need radius_start >= radius_end");
        }
        Ok(())
    }
}

/// Mean squared difference over the components observed in `x`.
///
/// Returns `None` when nothing is observed.
#[inline]
pub(crate) fn masked_sq_mean(x: &[f64], mask: &[bool], c: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&xi, &oi), &ci) in x.iter().zip(mask).zip(c) {
        if oi {
            let d = xi - ci;
            sum += d * d;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

pub fn masked_distance(x: &[f64], mask: &[bool], c: &[f64]) -> Result<f64> {
    if x.len() != c.len() || mask.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            found: x.len(),
        });
    }
    masked_sq_mean(x, mask, c).ok_or_else(|| Error::InvalidArgument("no observed components".into()))
}

/// Ordered code-vectors of a string map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub labels: Vec<String>,
    pub code_vectors: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(labels: Vec<String>, code_vectors: Vec<Vec<f64>>) -> Result<Self> {
        if code_vectors.is_empty() {
            return Err(Error::InvalidArgument("codebook needs at least one unit".into()));
        }
        let dim = labels.len();
        for v in &code_vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("non-finite code-vector component".into()));
            }
        }
        Ok(Codebook { labels, code_vectors })
    }

    pub fn units(&self) -> usize {
        self.code_vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }

    /// Best-matching unit; ties go to the lowest index.
    pub fn assign(&self, x: &[f64], mask: &[bool]) -> Result<usize> {
        if x.len() != self.dim() || mask.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        best_unit(&self.code_vectors, x, mask)
            .map(|(u, _)| u)
            .ok_or_else(|| Error::InvalidArgument("no observed components".into()))
    }

    pub fn assign_all(&self, data: &ContinuousTable) -> Result<Vec<usize>> {
        self.check_table(data)?;
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| {
                best_unit(&self.code_vectors, data.row(i), data.mask(i))
                    .expect("rows have observations")
                    .0
            })
            .collect())
    }

    /// Mean masked distance from each row to its best-matching code-vector.
    pub fn quantization_error(&self, data: &ContinuousTable) -> Result<f64> {
        self.check_table(data)?;
        if data.n_rows() == 0 {
            return Err(Error::InvalidArgument("empty data".into()));
        }
        let total: f64 = (0..data.n_rows())
            .into_par_iter()
            .map(|i| {
                best_unit(&self.code_vectors, data.row(i), data.mask(i))
                    .expect("rows have observations")
                    .1
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        Ok(total / data.n_rows() as f64)
    }

    fn check_table(&self, data: &ContinuousTable) -> Result<()> {
        if data.n_cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.n_cols(),
            });
        }
        Ok(())
    }
}

fn best_unit(vectors: &[Vec<f64>], x: &[f64], mask: &[bool]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (u, c) in vectors.iter().enumerate() {
        let d = masked_sq_mean(x, mask, c)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((u, d));
        }
    }
    best
}

/// Per-step bookkeeping exposed for tests and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    /// Best-matching unit of every row during the last epoch, by row index.
    pub final_epoch_bmus: Vec<usize>,
}

pub fn train_som(data: &ContinuousTable, cfg: &SomConfig) -> Result<Codebook> {
    train_som_traced(data, cfg).map(|(cb, _)| cb)
}

/// Online training on a string: every step draws the next row of a seeded
/// per-epoch shuffle, finds its best-matching unit and pulls all units within
/// the current radius towards the row on its observed components. Learning
/// rate and radius move linearly from their start to end values over all steps.
pub fn train_som_traced(data: &ContinuousTable, cfg: &SomConfig) -> Result<(Codebook, TrainingTrace)> {
    cfg.validate()?;
    let n = data.n_rows();
    let dim = data.n_cols();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot train on empty data".into()));
    }
    if cfg.units > n {
        return Err(Error::InvalidArgument(format!(
            "{} units need at least as many rows, got {n}",
            cfg.units
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means: Vec<f64> = data.column_means().into_iter().map(|m| m.unwrap_or(0.0)).collect();
    let mut weights: Vec<Vec<f64>> = rand::seq::index::sample(&mut rng, n, cfg.units)
        .into_iter()
        .map(|i| {
            let (row, mask) = (data.row(i), data.mask(i));
            (0..dim).map(|d| if mask[d] { row[d] } else { means[d] }).collect()
        })
        .collect();

    let total = cfg.epochs * n;
    let denom = (total.saturating_sub(1)).max(1) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainingTrace {
        final_epoch_bmus: vec![0; n],
    };
    let last = cfg.units - 1;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let frac = step as f64 / denom;
            let lr = cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac;
            let radius =
                (cfg.radius_start as f64 + (cfg.radius_end as f64 - cfg.radius_start as f64) * frac).round() as usize;
            let (row, mask) = (data.row(i), data.mask(i));
            let (bmu, _) = best_unit(&weights, row, mask).expect("rows have observations");
            if epoch + 1 == cfg.epochs {
                trace.final_epoch_bmus[i] = bmu;
            }
            for w in &mut weights[bmu.saturating_sub(radius)..=(bmu + radius).min(last)] {
                for d in 0..dim {
                    if mask[d] {
                        w[d] += lr * (row[d] - w[d]);
                    }
                }
            }
            step += 1;
        }
    }

    let labels = (0..dim).map(|d| format!("x{d}")).collect();
    Ok((Codebook::new(labels, weights)?, trace))
}

/// Level-1 map plus a level-2 string trained over its code-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelClustering {
    pub level1: Codebook,
    pub level2: Codebook,
    /// Macro cluster of every level-1 unit.
    pub macro_of_unit: Vec<usize>,
    /// Whether every macro cluster is a contiguous run of level-1 units.
    pub contiguous: bool,
}

impl TwoLevelClustering {
    pub fn macro_count(&self) -> usize {
        self.level2.units()
    }

    pub fn cluster_of(&self, x: &[f64], mask: &[bool]) -> Result<usize> {
        Ok(self.macro_of_unit[self.level1.assign(x, mask)?])
    }
}

/// True when every label value occupies a single run of `labels`.
pub fn is_contiguous(labels: &[usize]) -> bool {
    let mut closed = std::collections::HashSet::new();
    for w in labels.windows(2) {
        if w[0] != w[1] {
            if closed.contains(&w[1]) {
                return false;
            }
            closed.insert(w[0]);
        }
    }
    true
}

/// Trains a `k2`-unit string on the level-1 code-vectors and maps each
/// level-1 unit to its best-matching level-2 unit. Level-2 units that win no
/// level-1 unit are dropped and the rest renumbered in string order, so
/// macro labels are always `0..macro_count()`.
pub fn reduce_codebook(level1: &Codebook, k2: usize, cfg: &SomConfig) -> Result<TwoLevelClustering> {
    let m = level1.units();
    if k2 == 0 || k2 > m {
        return Err(Error::InvalidArgument(format!(
            "macro units must lie in 1..={m}, got {k2}"
        )));
    }
    if k2 == m {
        return Ok(TwoLevelClustering {
            level1: level1.clone(),
            level2: level1.clone(),
            macro_of_unit: (0..m).collect(),
            contiguous: true,
        });
    }
    let table = ContinuousTable::from_rows(&level1.code_vectors)?;
    let cfg = SomConfig {
        units: k2,
        ..cfg.clone()
    };
    let level2 = train_som(&table, &cfg)?.with_labels(level1.labels.clone())?;
    let full = vec![true; level1.dim()];
    let raw: Vec<usize> = level1
        .code_vectors
        .iter()
        .map(|v| level2.assign(v, &full))
        .collect::<Result<_>>()?;

    let mut used: Vec<usize> = raw.clone();
    used.sort_unstable();
    used.dedup();
    let macro_of_unit: Vec<usize> = raw
        .iter()
        .map(|u| used.binary_search(u).expect("unit is used"))
        .collect();
    let level2 = Codebook::new(
        level2.labels.clone(),
        used.iter().map(|&u| level2.code_vectors[u].clone()).collect(),
    )?;
    let contiguous = is_contiguous(&macro_of_unit);
    Ok(TwoLevelClustering {
        level1: level1.clone(),
        level2,
        macro_of_unit,
        contiguous,
    })
}

/// Either a direct string map or a two-level reduction; the clustering
/// artifact handed between pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Clustering {
    Direct { codebook: Codebook },
    TwoLevel(TwoLevelClustering),
}

#[derive(Serialize, Deserialize)]
struct ClusteringDocument {
    version: u32,
    #[serde(flatten)]
    clustering: Clustering,
}

impl Clustering {
    pub fn cluster_count(&self) -> usize {
        match self {
            Clustering::Direct { codebook } => codebook.units(),
            Clustering::TwoLevel(t) => t.macro_count(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.level1().labels
    }

    pub fn level1(&self) -> &Codebook {
        match self {
            Clustering::Direct { codebook } => codebook,
            Clustering::TwoLevel(t) => &t.level1,
        }
    }

    /// Representative code-vector of each cluster.
    pub fn cluster_vectors(&self) -> &[Vec<f64>] {
        match self {
            Clustering::Direct { codebook } => &codebook.code_vectors,
            Clustering::TwoLevel(t) => &t.level2.code_vectors,
        }
    }

    pub fn contiguous(&self) -> Option<bool> {
        match self {
            Clustering::Direct { .. } => None,
            Clustering::TwoLevel(t) => Some(t.contiguous),
        }
    }

    pub fn cluster_of(&self, x: &[f64], mask: &[bool]) -> Result<usize> {
        match self {
            Clustering::Direct { codebook } => codebook.assign(x, mask),
            Clustering::TwoLevel(t) => t.cluster_of(x, mask),
        }
    }

    pub fn clusters_of(&self, data: &ContinuousTable) -> Result<Vec<usize>> {
        let units = self.level1().assign_all(data)?;
        Ok(match self {
            Clustering::Direct { .. } => units,
            Clustering::TwoLevel(t) => units.into_iter().map(|u| t.macro_of_unit[u]).collect(),
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ClusteringDocument {
            version: CLUSTERING_FORMAT_VERSION,
            clustering: self.clone(),
        })?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(
            path,
            &ClusteringDocument {
                version: CLUSTERING_FORMAT_VERSION,
                clustering: self.clone(),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: ClusteringDocument = read_json(path)?;
        if doc.version != CLUSTERING_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported clustering format version {}",
                doc.version
            )));
        }
        Ok(doc.clustering)
    }
}
