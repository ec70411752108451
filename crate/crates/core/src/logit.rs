//! Non-ordered polychotomous logit model over dummy-coded categorical
//! variables.
//!
//! With reference class K−1, the model reads `p_k / p_{K−1} = exp(y·β_k)` for
//! `k < K−1`; the coefficients are fitted by maximum likelihood with a damped
//! Newton–Raphson iteration.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_json, write_json, CategoricalTable, CategoricalVar, Schema};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Coefficient magnitude beyond which the fit is treated as (quasi-)separated.
pub const SEPARATION_LIMIT: f64 = 30.0;

const ROW_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// A missing cell contributes nothing, exactly like the reference modality.
    #[default]
    ZeroContribution,
}

/// Maps a categorical row to the feature vector `y`: an intercept followed,
/// per variable, by indicators of every modality except the last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub variables: Vec<CategoricalVar>,
    pub intercept: bool,
    #[serde(default)]
    pub missing: MissingPolicy,
}

impl EncodingSpec {
    pub fn from_schema(schema: &Schema) -> Self {
        EncodingSpec {
            variables: schema.categorical.clone(),
            intercept: true,
            missing: MissingPolicy::ZeroContribution,
        }
    }

    pub fn width(&self) -> usize {
        usize::from(self.intercept) + self.variables.iter().map(|v| v.modalities.len() - 1).sum::<usize>()
    }

    /// Indices of the unit entries of `y`.
    pub fn active(&self, row: &[Option<usize>]) -> Result<Vec<usize>> {
        if row.len() != self.variables.len() {
            return Err(Error::DimensionMismatch {
                expected: self.variables.len(),
                found: row.len(),
            });
        }
        let mut active = Vec::with_capacity(row.len() + 1);
        if self.intercept {
            active.push(0);
        }
        let mut offset = usize::from(self.intercept);
        for (var, code) in self.variables.iter().zip(row) {
            let m = var.modalities.len();
            if let Some(c) = *code {
                if c >= m {
                    return Err(Error::InvalidArgument(format!(
                        "modality index {c} out of range for {:?} ({m} modalities)",
                        var.name
                    )));
                }
                if c + 1 < m {
                    active.push(offset + c);
                }
            }
            offset += m - 1;
        }
        Ok(active)
    }

    pub fn encode(&self, row: &[Option<usize>]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.width()];
        for j in self.active(row)? {
            y[j] = 1.0;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 100,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Unpenalized log-likelihood at the returned coefficients.
    pub log_likelihood: f64,
    /// Max-norm of the (penalized) gradient at the returned coefficients.
    pub gradient_norm: f64,
    pub iterations: usize,
    /// L2 penalty in effect; 0 unless the fallback fired.
    pub ridge: f64,
    pub converged: bool,
    /// Why the penalized refit was needed, if it was.
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    pub k: usize,
    pub reference_class: usize,
    /// Row `k` holds β_k; the reference class has no row.
    pub beta: Vec<Vec<f64>>,
    pub encoding: EncodingSpec,
    pub diagnostics: FitDiagnostics,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    #[serde(flatten)]
    model: LogitModel,
}

/// Probabilities from the K−1 free scores plus the reference score 0,
/// shifted by the maximum score before exponentiation.
pub fn softmax_with_reference(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(0.0f64, f64::max);
    let mut p: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    p.push((-max).exp());
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

fn log_softmax_at(scores: &[f64], label: usize) -> f64 {
    let max = scores.iter().copied().fold(0.0f64, f64::max);
    let lse = max + (scores.iter().map(|s| (s - max).exp()).sum::<f64>() + (-max).exp()).ln();
    let s = scores.get(label).copied().unwrap_or(0.0);
    s - lse
}

impl LogitModel {
    /// Model with all coefficients zero (uniform probabilities).
    pub fn zeros(k: usize, encoding: EncodingSpec) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("need at least one class".into()));
        }
        let d = encoding.width();
        Ok(LogitModel {
            k,
            reference_class: k - 1,
            beta: vec![vec![0.0; d]; k - 1],
            encoding,
            diagnostics: FitDiagnostics {
                log_likelihood: 0.0,
                gradient_norm: 0.0,
                iterations: 0,
                ridge: 0.0,
                converged: false,
                fallback: None,
            },
        })
    }

    pub fn width(&self) -> usize {
        self.encoding.width()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.beta.iter().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, theta: &[f64]) -> Result<()> {
        let d = self.width();
        if theta.len() != d * (self.k - 1) {
            return Err(Error::DimensionMismatch {
                expected: d * (self.k - 1),
                found: theta.len(),
            });
        }
        self.beta = theta.chunks(d.max(1)).map(<[f64]>::to_vec).collect();
        self.beta.truncate(self.k - 1);
        Ok(())
    }

    fn scores_active(&self, active: &[usize]) -> Vec<f64> {
        self.beta.iter().map(|b| active.iter().map(|&j| b[j]).sum()).collect()
    }

    /// Linear scores `y·β_k` for the K−1 non-reference classes.
    pub fn scores(&self, row: &[Option<usize>]) -> Result<Vec<f64>> {
        Ok(self.scores_active(&self.encoding.active(row)?))
    }

    pub fn predict_proba(&self, row: &[Option<usize>]) -> Result<Vec<f64>> {
        Ok(softmax_with_reference(&self.scores(row)?))
    }

    pub fn log_likelihood(&self, rows: &CategoricalTable, labels: &[usize]) -> Result<f64> {
        let problem = Problem::new(&self.encoding, self.k, rows, labels)?;
        Ok(problem.log_likelihood(&self.flat_params(), 0.0))
    }

    /// Analytic gradient of the log-likelihood with respect to the stacked
    /// coefficients (class-major, `k * width + j`).
    pub fn gradient(&self, rows: &CategoricalTable, labels: &[usize]) -> Result<Vec<f64>> {
        let problem = Problem::new(&self.encoding, self.k, rows, labels)?;
        Ok(problem.evaluate(&self.flat_params(), 0.0, false).gradient)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(
            path,
            &ModelDocument {
                version: MODEL_FORMAT_VERSION,
                model: self.clone(),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: ModelDocument = read_json(path)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format version {}",
                doc.version
            )));
        }
        let m = doc.model;
        if m.k == 0 || m.reference_class != m.k - 1 || m.beta.len() != m.k - 1 {
            return Err(Error::InvalidArgument("inconsistent class count in model".into()));
        }
        if m.beta
            .iter()
            .any(|b| b.len() != m.encoding.width() || b.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "coefficient matrix does not match encoding".into(),
            ));
        }
        Ok(m)
    }
}

/// Encoded training rows in sparse form.
struct Problem {
    active: Vec<Vec<usize>>,
    labels: Vec<usize>,
    k: usize,
    d: usize,
}

struct Evaluation {
    log_likelihood: f64,
    gradient: Vec<f64>,
    /// Negative Hessian, row-major P×P.
    information: Option<Vec<f64>>,
}

impl Problem {
    fn new(spec: &EncodingSpec, k: usize, rows: &CategoricalTable, labels: &[usize]) -> Result<Self> {
        if rows.n_rows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: rows.n_rows(),
                right: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{k}")));
        }
        let active = rows.rows().map(|r| spec.active(r)).collect::<Result<Vec<_>>>()?;
        Ok(Problem {
            active,
            labels: labels.to_vec(),
            k,
            d: spec.width(),
        })
    }

    fn n_params(&self) -> usize {
        (self.k - 1) * self.d
    }

    fn scores(&self, theta: &[f64], active: &[usize]) -> Vec<f64> {
        (0..self.k - 1)
            .map(|c| active.iter().map(|&j| theta[c * self.d + j]).sum())
            .collect()
    }

    fn penalty(theta: &[f64], ridge: f64) -> f64 {
        0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
    }

    fn log_likelihood(&self, theta: &[f64], ridge: f64) -> f64 {
        let partial: Vec<f64> = self
            .active
            .par_chunks(ROW_CHUNK)
            .zip(self.labels.par_chunks(ROW_CHUNK))
            .map(|(rows, labels)| {
                rows.iter()
                    .zip(labels)
                    .map(|(a, &l)| log_softmax_at(&self.scores(theta, a), l))
                    .sum::<f64>()
            })
            .collect();
        partial.iter().sum::<f64>() - Self::penalty(theta, ridge)
    }

    /// Likelihood, gradient and optionally the information matrix. Chunks
    /// are reduced in a fixed order so results do not depend on scheduling.
    fn evaluate(&self, theta: &[f64], ridge: f64, with_information: bool) -> Evaluation {
        let p = self.n_params();
        let (k1, d) = (self.k - 1, self.d);
        let partial: Vec<Evaluation> = self
            .active
            .par_chunks(ROW_CHUNK)
            .zip(self.labels.par_chunks(ROW_CHUNK))
            .map(|(rows, labels)| {
                let mut ll = 0.0;
                let mut grad = vec![0.0; p];
                let mut info = with_information.then(|| vec![0.0; p * p]);
                for (a, &label) in rows.iter().zip(labels) {
                    let scores = self.scores(theta, a);
                    let probs = softmax_with_reference(&scores);
                    ll += log_softmax_at(&scores, label);
                    for c in 0..k1 {
                        let resid = f64::from(u8::from(label == c)) - probs[c];
                        for &j in a {
                            grad[c * d + j] += resid;
                        }
                    }
                    if let Some(info) = info.as_mut() {
                        for c in 0..k1 {
                            for e in 0..k1 {
                                let w = probs[c] * (f64::from(u8::from(c == e)) - probs[e]);
                                for &ja in a {
                                    let row = (c * d + ja) * p + e * d;
                                    for &jb in a {
                                        info[row + jb] += w;
                                    }
                                }
                            }
                        }
                    }
                }
                Evaluation {
                    log_likelihood: ll,
                    gradient: grad,
                    information: info,
                }
            })
            .collect();

        let mut total = Evaluation {
            log_likelihood: -Self::penalty(theta, ridge),
            gradient: theta.iter().map(|t| -ridge * t).collect(),
            information: with_information.then(|| {
                let mut m = vec![0.0; p * p];
                for i in 0..p {
                    m[i * p + i] = ridge;
                }
                m
            }),
        };
        for part in partial {
            total.log_likelihood += part.log_likelihood;
            for (g, v) in total.gradient.iter_mut().zip(&part.gradient) {
                *g += v;
            }
            if let (Some(acc), Some(info)) = (total.information.as_mut(), part.information.as_ref()) {
                for (x, v) in acc.iter_mut().zip(info) {
                    *x += v;
                }
            }
        }
        total
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

enum Outcome {
    Done {
        theta: Vec<f64>,
        iterations: usize,
        converged: bool,
    },
    Singular,
    Separated,
}

fn newton(problem: &Problem, opts: &FitOptions, ridge: f64) -> Outcome {
    let p = problem.n_params();
    let mut theta = vec![0.0; p];
    let mut eval = problem.evaluate(&theta, ridge, true);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        if max_abs(&eval.gradient) < opts.tol {
            converged = true;
            break;
        }
        let info = DMatrix::from_row_slice(p, p, eval.information.as_ref().expect("requested"));
        let Some(chol) = info.cholesky() else {
            return Outcome::Singular;
        };
        let step = chol.solve(&DVector::from_column_slice(&eval.gradient));
        if step.iter().any(|s| !s.is_finite()) {
            return Outcome::Singular;
        }

        // Predicted gain ½·gᵀI⁻¹g. Below the resolution of the likelihood the
        // halving test would only compare rounding noise, so the full
        // (quadratic-regime) step is taken.
        let gain = 0.5 * step.iter().zip(&eval.gradient).map(|(s, g)| s * g).sum::<f64>();
        let resolution = 64.0 * f64::EPSILON * eval.log_likelihood.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        if gain <= resolution {
            accepted = Some(theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect());
        }
        for _ in 0..50 {
            if accepted.is_some() {
                break;
            }
            let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let ll = problem.log_likelihood(&candidate, ridge);
            if ll >= eval.log_likelihood {
                accepted = Some(candidate);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            // No ascent direction left at working precision.
            break;
        };
        theta = next;
        iterations += 1;
        if ridge == 0.0 && max_abs(&theta) > SEPARATION_LIMIT {
            return Outcome::Separated;
        }
        eval = problem.evaluate(&theta, ridge, true);
    }
    if !converged && max_abs(&eval.gradient) < opts.tol {
        converged = true;
    }
    Outcome::Done {
        theta,
        iterations,
        converged,
    }
}

/// Maximum-likelihood fit of the polychotomous logit on `rows` with cluster
/// `labels` in `0..k`. Starts from zero; falls back to an L2-penalized refit
/// when the information matrix is singular or coefficients diverge.
pub fn fit_logit(
    rows: &CategoricalTable,
    labels: &[usize],
    k: usize,
    spec: &EncodingSpec,
    opts: &FitOptions,
) -> Result<LogitModel> {
    if rows.n_rows() == 0 {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.ridge < 0.0 {
        return Err(Error::InvalidArgument(
            "tol must be positive and ridge non-negative".into(),
        ));
    }
    let problem = Problem::new(spec, k, rows, labels)?;
    let mut present = vec![false; k];
    for &l in labels {
        present[l] = true;
    }
    if let Some(class) = present.iter().position(|&p| !p) {
        return Err(Error::AbsentClass { class });
    }

    let mut model = LogitModel::zeros(k, spec.clone())?;
    if k == 1 {
        model.diagnostics = FitDiagnostics {
            log_likelihood: 0.0,
            gradient_norm: 0.0,
            iterations: 0,
            ridge: 0.0,
            converged: true,
            fallback: None,
        };
        return Ok(model);
    }

    let (theta, iterations, converged, ridge, fallback) = match newton(&problem, opts, 0.0) {
        Outcome::Done {
            theta,
            iterations,
            converged,
        } => (theta, iterations, converged, 0.0, None),
        failure => {
            let reason = match failure {
                Outcome::Singular => "singular information matrix",
                _ => "coefficient divergence (quasi-separation)",
            };
            match newton(&problem, opts, opts.ridge) {
                Outcome::Done {
                    theta,
                    iterations,
                    converged,
                } => (theta, iterations, converged, opts.ridge, Some(reason.to_string())),
                _ => {
                    return Err(Error::DegenerateFit(format!(
                        "{reason}; penalized refit with ridge {} also failed",
                        opts.ridge
                    )))
                }
            }
        }
    };

    let eval = problem.evaluate(&theta, ridge, false);
    model.set_flat_params(&theta)?;
    model.diagnostics = FitDiagnostics {
        log_likelihood: problem.log_likelihood(&theta, 0.0),
        gradient_norm: max_abs(&eval.gradient),
        iterations,
        ridge,
        converged,
        fallback,
    };
    Ok(model)
}
