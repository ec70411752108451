//! Seeded generator of compositional learning bases with planted clusters.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{save_dataset, save_labels, CategoricalTable, CategoricalVar, ContinuousTable, Dataset, Schema};
use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub continuous_names: Vec<String>,
    pub categorical: Vec<CategoricalVar>,
    /// Probability of each planted cluster.
    pub cluster_weights: Vec<f64>,
    /// Cluster centers in percent; each sums to 100.
    pub centers: Vec<Vec<f64>>,
    /// Standard deviation of the additive noise, in percent points.
    pub noise: f64,
    /// modality_probs[cluster][variable][modality]
    pub modality_probs: Vec<Vec<Vec<f64>>>,
    /// Weight of the cluster-specific distribution against the global
    /// marginal when drawing categorical cells.
    pub dependence: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

/// Expenditure functions used by [`GeneratorSpec::survey_shaped`].
pub const SURVEY_CONTINUOUS: [&str; 19] = [
    "alcohol",
    "food_home",
    "food_away",
    "house_costs",
    "communication",
    "financial_costs",
    "gifts",
    "education",
    "clothes",
    "housing",
    "leisure",
    "furniture",
    "health",
    "security",
    "personal_care",
    "tobacco",
    "individual_transport",
    "collective_transport",
    "vehicles",
];

/// Columns whose centers are identical across clusters in the survey-shaped
/// preset, hence independent of the categorical variables.
pub const SURVEY_UNINFORMATIVE: [usize; 5] = [0, 5, 11, 14, 18];

/// Column carrying the dominant between-cluster gradient.
pub const SURVEY_DOMINANT: usize = 9;

pub const SURVEY_CATEGORICAL: [(&str, usize); 10] = [
    ("age", 4),
    ("language", 3),
    ("income", 4),
    ("job_status", 3),
    ("professional_category", 5),
    ("education_level", 5),
    ("town_type", 3),
    ("region", 5),
    ("residency", 5),
    ("wealth", 5),
];

impl GeneratorSpec {
    /// 8809 individuals, 19 expenditure shares, 10 categorical variables and
    /// 5 planted clusters ordered along the `housing` share.
    pub fn survey_shaped(seed: u64) -> Self {
        let k = 5;
        let p = SURVEY_CONTINUOUS.len();
        let centers = (0..k)
            .map(|c| {
                let mut v = vec![0.0; p];
                for &j in &SURVEY_UNINFORMATIVE {
                    v[j] = 3.0;
                }
                v[SURVEY_DOMINANT] = 30.0 - 5.0 * c as f64;
                let free: Vec<usize> = (0..p)
                    .filter(|j| *j != SURVEY_DOMINANT && !SURVEY_UNINFORMATIVE.contains(j))
                    .collect();
                let raw: Vec<f64> = free
                    .iter()
                    .map(|&j| 4.0 + 2.0 * (1.3 * (j + 1) as f64 + 0.9 * c as f64 * (1 + j % 3) as f64).sin())
                    .collect();
                let used: f64 = v.iter().sum();
                let scale = (100.0 - used) / raw.iter().sum::<f64>();
                for (&j, r) in free.iter().zip(&raw) {
                    v[j] = r * scale;
                }
                v
            })
            .collect();

        let categorical: Vec<CategoricalVar> = SURVEY_CATEGORICAL
            .iter()
            .map(|&(name, m)| CategoricalVar {
                name: name.to_string(),
                modalities: (1..=m).map(|i| format!("{name}_{i}")).collect(),
            })
            .collect();
        let modality_probs = (0..k)
            .map(|c| {
                SURVEY_CATEGORICAL
                    .iter()
                    .enumerate()
                    .map(|(j, &(_, m))| {
                        let preferred = if j % 2 == 0 {
                            ((c * (m - 1)) as f64 / (k - 1) as f64).round() as usize
                        } else {
                            (c + j) % m
                        };
                        let rest = 0.35 / (m - 1) as f64;
                        (0..m).map(|i| if i == preferred { 0.65 } else { rest }).collect()
                    })
                    .collect()
            })
            .collect();

        GeneratorSpec {
            n: 8809,
            continuous_names: SURVEY_CONTINUOUS.iter().map(|s| s.to_string()).collect(),
            categorical,
            cluster_weights: vec![0.2; k],
            centers,
            noise: 1.0,
            modality_probs,
            dependence: 0.8,
            missing_rate: 0.02,
            seed,
        }
    }

    pub fn with_dependence(mut self, dependence: f64) -> Self {
        self.dependence = dependence;
        self
    }

    pub fn clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::new(self.continuous_names.clone(), self.categorical.clone(), true)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("generator spec: {msg}")));
        let k = self.centers.len();
        let p = self.continuous_names.len();
        if self.n == 0 || k == 0 {
            return bad("need at least one row and one cluster".into());
        }
        if self.cluster_weights.len() != k || self.modality_probs.len() != k {
            return bad("cluster count differs between centers, weights and modality tables".into());
        }
        if self.cluster_weights.iter().any(|w| *w < 0.0)
            || (self.cluster_weights.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE
        {
            return bad("cluster weights must be non-negative and sum to 1".into());
        }
        for (c, center) in self.centers.iter().enumerate() {
            if center.len() != p || center.iter().any(|v| v.is_nan() || *v < 0.0) {
                return bad(format!("center {c} must have {p} non-negative entries"));
            }
            if (center.iter().sum::<f64>() - 100.0).abs() > SUM_TOLERANCE {
                return bad(format!("center {c} does not sum to 100"));
            }
        }
        for (c, vars) in self.modality_probs.iter().enumerate() {
            if vars.len() != self.categorical.len() {
                return bad(format!("cluster {c}: wrong number of categorical variables"));
            }
            for (probs, var) in vars.iter().zip(&self.categorical) {
                if probs.len() != var.modalities.len()
                    || probs.iter().any(|q| *q < 0.0)
                    || (probs.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE
                {
                    return bad(format!("cluster {c}, variable {:?}: invalid distribution", var.name));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.dependence) {
            return bad("dependence must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing rate must lie in [0, 1)".into());
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return bad("noise must be non-negative".into());
        }
        self.schema()?;
        Ok(())
    }

    /// Mixture of the cluster distributions weighted by cluster probability.
    pub fn marginal(&self) -> Vec<Vec<f64>> {
        self.categorical
            .iter()
            .enumerate()
            .map(|(j, var)| {
                (0..var.modalities.len())
                    .map(|m| {
                        self.cluster_weights
                            .iter()
                            .zip(&self.modality_probs)
                            .map(|(w, probs)| w * probs[j][m])
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, q) in probs.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&q| q > 0.0).unwrap_or(0)
}

struct GeneratedRow {
    cluster: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
    codes: Vec<Option<usize>>,
}

/// Draws the dataset and its planted cluster labels. Row `i` uses its own
/// ChaCha stream under the spec's seed.
pub fn generate(spec: &GeneratorSpec) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let p = spec.continuous_names.len();
    let marginal = spec.marginal();
    let mixtures: Vec<Vec<Vec<f64>>> = spec
        .modality_probs
        .iter()
        .map(|vars| {
            vars.iter()
                .zip(&marginal)
                .map(|(own, global)| {
                    own.iter()
                        .zip(global)
                        .map(|(a, b)| spec.dependence * a + (1.0 - spec.dependence) * b)
                        .collect()
                })
                .collect()
        })
        .collect();

    let rows: Vec<GeneratedRow> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let cluster = draw(&spec.cluster_weights, rng.random());
            let center = &spec.centers[cluster];
            let mut values: Vec<f64> = if spec.noise == 0.0 {
                center.clone()
            } else {
                center
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (c + spec.noise * z).max(0.0)
                    })
                    .collect()
            };
            let total: f64 = values.iter().sum();
            if spec.noise != 0.0 {
                if total > 0.0 {
                    values.iter_mut().for_each(|v| *v *= 100.0 / total);
                } else {
                    values.clone_from(center);
                }
            }
            let mut observed: Vec<bool> = (0..p).map(|_| rng.random::<f64>() >= spec.missing_rate).collect();
            if !observed.iter().any(|&o| o) {
                observed[rng.random_range(0..p)] = true;
            }
            let codes = mixtures[cluster]
                .iter()
                .map(|probs| Some(draw(probs, rng.random())))
                .collect();
            GeneratedRow {
                cluster,
                values,
                observed,
                codes,
            }
        })
        .collect();

    let mut labels = Vec::with_capacity(spec.n);
    let mut values = Vec::with_capacity(spec.n * p);
    let mut observed = Vec::with_capacity(spec.n * p);
    let mut codes = Vec::with_capacity(spec.n * spec.categorical.len());
    for row in rows {
        labels.push(row.cluster);
        values.extend(row.values);
        observed.extend(row.observed);
        codes.extend(row.codes);
    }
    let dataset = Dataset::new(
        spec.schema()?,
        ContinuousTable::new(p, values, observed)?,
        CategoricalTable::new(spec.categorical.len(), codes)?,
    )?;
    Ok((dataset, labels))
}

/// Writes `continuous.csv`, `categorical.csv`, `labels.csv` and
/// `schema.json` into `dir`.
pub fn write_generated(dir: impl AsRef<Path>, dataset: &Dataset, labels: &[usize]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_dataset(dir.join("continuous.csv"), dir.join("categorical.csv"), dataset)?;
    save_labels(dir.join("labels.csv"), labels)?;
    dataset.schema.to_json_file(dir.join("schema.json"))
}
