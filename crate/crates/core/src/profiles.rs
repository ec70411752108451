//! Cluster descriptions: classical statistics of the continuous variables and
//! modality shares with test values for the categorical ones.
//!
//! The test value of a modality in a cluster is the ratio of its percentage
//! inside the cluster to its percentage in the whole population, so a value
//! above 1 marks an over-represented modality.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CategoricalTable, Dataset, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSummary {
    pub variable: String,
    pub observed: usize,
    pub mean: Option<f64>,
    /// Sample variance (n−1 denominator); needs two observations.
    pub variance: Option<f64>,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityShare {
    pub variable: String,
    pub modality: String,
    /// Percentage inside the cluster; `None` for an empty cluster.
    pub within_pct: Option<f64>,
    pub global_pct: f64,
    /// `None` when the cluster is empty or the modality is globally absent.
    pub test_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: usize,
    pub size: usize,
    pub continuous: Vec<ContinuousSummary>,
    pub categorical: Vec<ModalityShare>,
}

impl ClusterProfile {
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

/// Linear interpolation between order statistics ("type 7"); `sorted` must
/// be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(variable: &str, mut values: Vec<f64>) -> ContinuousSummary {
    let n = values.len();
    if n == 0 {
        return ContinuousSummary {
            variable: variable.to_string(),
            observed: 0,
            mean: None,
            variance: None,
            min: None,
            q1: None,
            median: None,
            q3: None,
            max: None,
        };
    }
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = (n > 1).then(|| values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64);
    ContinuousSummary {
        variable: variable.to_string(),
        observed: n,
        mean: Some(mean),
        variance,
        min: Some(values[0]),
        q1: Some(quantile_sorted(&values, 0.25)),
        median: Some(quantile_sorted(&values, 0.5)),
        q3: Some(quantile_sorted(&values, 0.75)),
        max: Some(values[n - 1]),
    }
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: n,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{k}")));
    }
    Ok(())
}

/// Modality counts per cluster and the resulting test values.
#[derive(Debug, Clone, PartialEq)]
pub struct TestValueTable {
    pub k: usize,
    pub modality_counts: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    /// counts[cluster][variable][modality]
    pub counts: Vec<Vec<Vec<usize>>>,
    /// global_counts[variable][modality]
    pub global_counts: Vec<Vec<usize>>,
    pub total: usize,
}

impl TestValueTable {
    pub fn within_pct(&self, cluster: usize, var: usize, modality: usize) -> Option<f64> {
        let size = self.cluster_sizes[cluster];
        (size > 0).then(|| 100.0 * self.counts[cluster][var][modality] as f64 / size as f64)
    }

    pub fn global_pct(&self, var: usize, modality: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        100.0 * self.global_counts[var][modality] as f64 / self.total as f64
    }

    pub fn test_value(&self, cluster: usize, var: usize, modality: usize) -> Option<f64> {
        let global = self.global_pct(var, modality);
        if global <= 0.0 {
            return None;
        }
        self.within_pct(cluster, var, modality).map(|w| w / global)
    }
}

pub fn test_values(c: &CategoricalTable, schema: &Schema, labels: &[usize], k: usize) -> Result<TestValueTable> {
    check_labels(labels, c.n_rows(), k)?;
    c.validate_codes(schema)?;
    let modality_counts = schema.modality_counts();
    let zeroed = || modality_counts.iter().map(|&m| vec![0usize; m]).collect::<Vec<_>>();
    let mut counts = vec![zeroed(); k];
    let mut global_counts = zeroed();
    let mut cluster_sizes = vec![0; k];
    for (row, &label) in c.rows().zip(labels) {
        cluster_sizes[label] += 1;
        for (j, code) in row.iter().enumerate() {
            let m = code.ok_or_else(|| Error::InvalidArgument("missing categorical cell".into()))?;
            counts[label][j][m] += 1;
            global_counts[j][m] += 1;
        }
    }
    Ok(TestValueTable {
        k,
        modality_counts,
        cluster_sizes,
        counts,
        global_counts,
        total: c.n_rows(),
    })
}

pub fn describe_clusters(d: &Dataset, labels: &[usize], k: usize) -> Result<Vec<ClusterProfile>> {
    check_labels(labels, d.n(), k)?;
    let tv = test_values(&d.categorical, &d.schema, labels, k)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let profiles = members
        .iter()
        .enumerate()
        .map(|(cluster, rows)| {
            let continuous = d
                .schema
                .continuous
                .iter()
                .enumerate()
                .map(|(j, name)| summarize(name, rows.iter().filter_map(|&i| d.continuous.get(i, j)).collect()))
                .collect();
            let mut categorical = Vec::new();
            for (j, var) in d.schema.categorical.iter().enumerate() {
                for (m, modality) in var.modalities.iter().enumerate() {
                    categorical.push(ModalityShare {
                        variable: var.name.clone(),
                        modality: modality.clone(),
                        within_pct: tv.within_pct(cluster, j, m),
                        global_pct: tv.global_pct(j, m),
                        test_value: tv.test_value(cluster, j, m),
                    });
                }
            }
            ClusterProfile {
                cluster,
                size: rows.len(),
                continuous,
                categorical,
            }
        })
        .collect();
    Ok(profiles)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_continuous_csv(path: impl AsRef<Path>, profiles: &[ClusterProfile]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record([
        "cluster", "size", "variable", "observed", "mean", "variance", "min", "q1", "median", "q3", "max",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for p in profiles {
        for s in &p.continuous {
            w.write_record([
                p.cluster.to_string(),
                p.size.to_string(),
                s.variable.clone(),
                s.observed.to_string(),
                opt(s.mean),
                opt(s.variance),
                opt(s.min),
                opt(s.q1),
                opt(s.median),
                opt(s.q3),
                opt(s.max),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_modalities_csv(path: impl AsRef<Path>, profiles: &[ClusterProfile]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record([
        "cluster",
        "variable",
        "modality",
        "within_pct",
        "global_pct",
        "test_value",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for p in profiles {
        for s in &p.categorical {
            w.write_record([
                p.cluster.to_string(),
                s.variable.clone(),
                s.modality.clone(),
                opt(s.within_pct),
                s.global_pct.to_string(),
                opt(s.test_value),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Bar chart of every cluster's mean profile, one panel per cluster, all
/// panels sharing the same vertical scale.
pub fn profile_chart_svg(profiles: &[ClusterProfile]) -> String {
    const PANEL_W: f64 = 360.0;
    const PANEL_H: f64 = 180.0;
    const MARGIN: f64 = 30.0;
    let n_vars = profiles.first().map_or(0, |p| p.continuous.len());
    let top = profiles
        .iter()
        .flat_map(|p| p.continuous.iter().filter_map(|s| s.mean))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let width = PANEL_W * profiles.len().max(1) as f64 + MARGIN;
    let height = PANEL_H + 3.0 * MARGIN;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let bar_w = if n_vars > 0 {
        (PANEL_W - MARGIN) / n_vars as f64
    } else {
        0.0
    };
    for (c, p) in profiles.iter().enumerate() {
        let x0 = MARGIN + c as f64 * PANEL_W;
        let base = MARGIN + PANEL_H;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">cluster {} (n={})</text>"#,
            x0,
            MARGIN - 10.0,
            p.cluster + 1,
            p.size
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{base}" x2="{}" y2="{base}" stroke="#000"/>"##,
            x0 + PANEL_W - MARGIN
        );
        for (j, s) in p.continuous.iter().enumerate() {
            let Some(mean) = s.mean else { continue };
            let h = PANEL_H * mean / top;
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a6fa5"><title>{}: {:.3}</title></rect>"##,
                x0 + j as f64 * bar_w + 1.0,
                base - h,
                (bar_w - 2.0).max(1.0),
                h,
                s.variable,
                mean
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
