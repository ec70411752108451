//! Allocation of new individuals to clusters and the contingency-table
//! scoring of allocations against reference classes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoricalTable, ContinuousTable};
use crate::error::{Error, Result};
use crate::logit::LogitModel;
use crate::som::Clustering;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Most probable cluster.
    #[default]
    Argmax,
    /// Cluster drawn from the membership probabilities.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub probabilities: Vec<f64>,
    pub cluster: usize,
    pub missing_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub mode: AllocationMode,
    pub individuals: Vec<Allocation>,
}

impl AllocationResult {
    pub fn clusters(&self) -> Vec<usize> {
        self.individuals.iter().map(|a| a.cluster).collect()
    }

    /// One row per individual: `row, p0..p{K-1}, assigned, missing_cells`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let k = self.individuals.first().map_or(0, |a| a.probabilities.len());
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["row".to_string()];
        header.extend((0..k).map(|c| format!("p{c}")));
        header.push("assigned".into());
        header.push("missing_cells".into());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (i, a) in self.individuals.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(a.probabilities.iter().map(f64::to_string));
            rec.push(a.cluster.to_string());
            rec.push(a.missing_cells.to_string());
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw for a uniform `u` in [0, 1).
pub fn sample_index(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative total; take the last positive cell.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Row `i` draws from its own ChaCha stream `i` under `seed`, so results do
/// not depend on evaluation order.
pub fn allocate(
    model: &LogitModel,
    rows: &CategoricalTable,
    mode: AllocationMode,
    seed: u64,
) -> Result<AllocationResult> {
    let individuals = (0..rows.n_rows())
        .into_par_iter()
        .map(|i| {
            let row = rows.row(i);
            let probabilities = model.predict_proba(row)?;
            let cluster = match mode {
                AllocationMode::Argmax => argmax(&probabilities),
                AllocationMode::Sample => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    sample_index(&probabilities, rng.random::<f64>())
                }
            };
            Ok(Allocation {
                probabilities,
                cluster,
                missing_cells: rows.missing_in_row(i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AllocationResult { mode, individuals })
}

/// Reference class of an individual: its nearest cluster in the space of
/// the clustering's continuous variables.
pub fn true_class(clustering: &Clustering, x: &[f64], mask: &[bool]) -> Result<usize> {
    clustering.cluster_of(x, mask)
}

pub fn true_classes(clustering: &Clustering, data: &ContinuousTable) -> Result<Vec<usize>> {
    clustering.clusters_of(data)
}

/// Allocated (rows) versus true (columns) cluster counts. Clusters `i` and
/// `i ± 1` are neighbors along the string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationScore {
    pub exact: u64,
    pub neighbor: u64,
    pub correct: u64,
    pub total: u64,
    pub exact_rate: f64,
    pub correct_rate: f64,
}

pub fn build_contingency(allocated: &[usize], truth: &[usize], k: usize) -> Result<ContingencyTable> {
    if allocated.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: allocated.len(),
            right: truth.len(),
        });
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&a, &t) in allocated.iter().zip(truth) {
        if a >= k || t >= k {
            return Err(Error::InvalidArgument(format!("cluster index outside 0..{k}")));
        }
        counts[a][t] += 1;
    }
    Ok(ContingencyTable { counts })
}

impl ContingencyTable {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("contingency table must be square".into()));
        }
        Ok(ContingencyTable { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_totals(&self) -> Vec<u64> {
        (0..self.k()).map(|t| self.counts.iter().map(|r| r[t]).sum()).collect()
    }

    /// Exact allocations are the diagonal; correct ones add the first
    /// super- and sub-diagonals.
    pub fn evaluate(&self) -> Result<AllocationScore> {
        let total = self.total();
        if total == 0 {
            return Err(Error::InvalidArgument("empty contingency table".into()));
        }
        let k = self.k();
        let exact: u64 = (0..k).map(|i| self.counts[i][i]).sum();
        let neighbor: u64 = (1..k).map(|i| self.counts[i - 1][i] + self.counts[i][i - 1]).sum();
        let correct = exact + neighbor;
        Ok(AllocationScore {
            exact,
            neighbor,
            correct,
            total,
            exact_rate: exact as f64 / total as f64,
            correct_rate: correct as f64 / total as f64,
        })
    }

    /// Square table with a header row of true clusters and row/column totals.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let k = self.k();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["allocated".to_string()];
        header.extend((0..k).map(|t| format!("true_{t}")));
        header.push("total".into());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (a, row) in self.counts.iter().enumerate() {
            let mut rec = vec![a.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            rec.push(row.iter().sum::<u64>().to_string());
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        let mut rec = vec!["total".to_string()];
        rec.extend(self.column_totals().iter().map(u64::to_string));
        rec.push(self.total().to_string());
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
