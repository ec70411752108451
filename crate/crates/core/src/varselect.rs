//! Screening of continuous variables by an additive ANOVA on the
//! categorical indicators.
//!
//! Each continuous variable is regressed on an intercept plus reference-cell
//! indicators of every categorical variable. The fit yields a global Fisher
//! statistic and a squared correlation coefficient; variables whose R² falls
//! below the threshold are dropped.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CategoricalTable, Dataset, Schema};
use crate::error::{Error, Result};

pub const DEFAULT_R2_THRESHOLD: f64 = 0.08;

/// Intercept plus one indicator per non-reference modality.
pub fn design_width(modality_counts: &[usize]) -> usize {
    1 + modality_counts.iter().map(|m| m - 1).sum::<usize>()
}

/// Builds the N×(1+Σ(m_j−1)) indicator design. The last modality of each
/// variable is the reference and gets no column.
pub fn build_dummy_design(c: &CategoricalTable, schema: &Schema) -> Result<DMatrix<f64>> {
    c.validate_codes(schema)?;
    let counts = schema.modality_counts();
    let width = design_width(&counts);
    let mut design = DMatrix::zeros(c.n_rows(), width);
    for (i, row) in c.rows().enumerate() {
        design[(i, 0)] = 1.0;
        let mut offset = 1;
        for (j, code) in row.iter().enumerate() {
            let code =
                code.ok_or_else(|| Error::InvalidArgument(format!("row {i}: missing categorical cell in design")))?;
            if code + 1 < counts[j] {
                design[(i, offset + code)] = 1.0;
            }
            offset += counts[j] - 1;
        }
    }
    Ok(design)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaFit {
    pub fisher_statistic: f64,
    pub r_squared: f64,
    pub df_model: usize,
    pub df_error: usize,
    pub rows_used: usize,
}

/// Least-squares fit of the observed entries of `x` on `design`, solved
/// through a thin SVD so rank-deficient codings are handled.
pub fn fit_additive_anova(x: &[f64], observed: &[bool], design: &DMatrix<f64>) -> Result<AnovaFit> {
    if x.len() != design.nrows() || observed.len() != design.nrows() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: design.nrows(),
        });
    }
    let rows: Vec<usize> = (0..x.len()).filter(|&i| observed[i]).collect();
    let rows_used = rows.len();
    let cols = design.ncols();
    if rows_used <= cols {
        return Err(Error::DegenerateFit(format!(
            "{rows_used} observed rows for {cols} design columns"
        )));
    }

    let a = DMatrix::from_fn(rows_used, cols, |r, c| design[(rows[r], c)]);
    let y = DVector::from_iterator(rows_used, rows.iter().map(|&i| x[i]));

    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let scale: f64 = y.iter().map(|v| v * v).sum();
    if sst <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateFit("constant response".into()));
    }

    let svd = a.svd(true, false);
    let u = svd.u.as_ref().expect("thin U requested");
    let sv = &svd.singular_values;
    let max_sv = sv.iter().copied().fold(0.0, f64::max);
    let tol = max_sv * rows_used.max(cols) as f64 * f64::EPSILON;
    let mut fitted = DVector::zeros(rows_used);
    let mut rank = 0usize;
    for k in 0..sv.len() {
        if sv[k] > tol {
            let uk = u.column(k);
            fitted.axpy(uk.dot(&y), &uk, 1.0);
            rank += 1;
        }
    }

    let sse: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let ssr: f64 = fitted.iter().map(|f| (f - mean).powi(2)).sum();
    let df_model = rank.saturating_sub(1);
    let df_error = rows_used - rank;
    let r_squared = (ssr / sst).clamp(0.0, 1.0);
    let fisher_statistic = if df_model == 0 {
        0.0
    } else if sse == 0.0 {
        f64::INFINITY
    } else {
        (ssr / df_model as f64) / (sse / df_error as f64)
    };
    Ok(AnovaFit {
        fisher_statistic,
        r_squared,
        df_model,
        df_error,
        rows_used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableScreen {
    pub name: String,
    pub fisher_statistic: f64,
    pub r_squared: f64,
    pub df_model: usize,
    pub df_error: usize,
    pub rows_used: usize,
    pub selected: bool,
    /// Reason the fit was degenerate, if it was.
    pub degenerate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    pub threshold: f64,
    pub variables: Vec<VariableScreen>,
}

impl AnovaReport {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.selected)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.variables
            .iter()
            .filter(|v| v.selected)
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["variable", "F", "R2", "df_model", "df_error", "selected"])
            .map_err(|e| Error::csv(path, e))?;
        for v in &self.variables {
            w.write_record([
                v.name.clone(),
                v.fisher_statistic.to_string(),
                v.r_squared.to_string(),
                v.df_model.to_string(),
                v.df_error.to_string(),
                v.selected.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads back the `selected` column of a report CSV.
    pub fn read_selected(path: impl AsRef<Path>) -> Result<Vec<String>> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut names = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            if rec.get(5).map(str::trim) == Some("true") {
                names.push(rec.get(0).unwrap_or_default().to_string());
            }
        }
        Ok(names)
    }

    pub fn write_summary(&self, mut out: impl Write) -> std::io::Result<()> {
        for v in &self.variables {
            writeln!(
                out,
                "{:<28} R2={:.4} F={:.3} {}",
                v.name,
                v.r_squared,
                v.fisher_statistic,
                if v.selected { "kept" } else { "dropped" }
            )?;
        }
        Ok(())
    }
}

/// Fits the additive ANOVA for every continuous variable and keeps those
/// with R² ≥ `threshold`. Degenerate fits are reported as unselected.
pub fn select_variables(d: &Dataset, threshold: f64) -> Result<AnovaReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let design = build_dummy_design(&d.categorical, &d.schema)?;
    let n = d.n();
    let variables = (0..d.schema.p())
        .into_par_iter()
        .map(|j| {
            let mut x = vec![0.0; n];
            let mut observed = vec![false; n];
            for (i, v) in d.continuous.observed_column(j) {
                x[i] = v;
                observed[i] = true;
            }
            let name = d.schema.continuous[j].clone();
            match fit_additive_anova(&x, &observed, &design) {
                Ok(fit) => Ok(VariableScreen {
                    name,
                    fisher_statistic: fit.fisher_statistic,
                    r_squared: fit.r_squared,
                    df_model: fit.df_model,
                    df_error: fit.df_error,
                    rows_used: fit.rows_used,
                    selected: fit.r_squared >= threshold,
                    degenerate: None,
                }),
                Err(Error::DegenerateFit(reason)) => Ok(VariableScreen {
                    name,
                    fisher_statistic: 0.0,
                    r_squared: 0.0,
                    df_model: 0,
                    df_error: 0,
                    rows_used: observed.iter().filter(|&&o| o).count(),
                    selected: false,
                    degenerate: Some(reason),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnovaReport { threshold, variables })
}
