//! End-to-end run: variable screening, renormalization, split, clustering,
//! cluster description, logit fit, allocation of the test set and scoring.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{allocate, build_contingency, AllocationMode, AllocationScore, ContingencyTable};
use crate::data::{load_dataset, save_labels, split_indices, write_json, Dataset, Schema};
use crate::error::Error;
use crate::logit::{fit_logit, EncodingSpec, FitDiagnostics, FitOptions};
use crate::profiles::{describe_clusters, profile_chart_svg, write_continuous_csv, write_modalities_csv};
use crate::som::{reduce_codebook, train_som, Clustering, SomConfig};
use crate::varselect::{select_variables, VariableScreen, DEFAULT_R2_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    SelectVars,
    Renormalize,
    Split,
    Train,
    Describe,
    Fit,
    Allocate,
    TrueClass,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::SelectVars => "select-vars",
            Stage::Renormalize => "renormalize",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Describe => "describe",
            Stage::Fit => "fit",
            Stage::Allocate => "allocate",
            Stage::TrueClass => "true-class",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationMode {
    /// A large string reduced to macro clusters by a second string.
    TwoLevel,
    /// A single string with one unit per cluster.
    #[default]
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub continuous: PathBuf,
    pub categorical: PathBuf,
    pub schema: PathBuf,
}

fn default_threshold() -> f64 {
    DEFAULT_R2_THRESHOLD
}
fn default_level1() -> SomConfig {
    SomConfig::new(20, 0)
}
fn default_level2() -> SomConfig {
    SomConfig::new(5, 0).with_epochs(500)
}
fn default_direct() -> SomConfig {
    SomConfig::new(5, 0)
}
fn default_test_count() -> usize {
    409
}

/// Stage seeds are all derived from `seed`; the `seed` fields inside the SOM
/// configurations are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub input: Option<InputPaths>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub classification: ClassificationMode,
    #[serde(default = "default_level1")]
    pub level1: SomConfig,
    #[serde(default = "default_level2")]
    pub level2: SomConfig,
    #[serde(default = "default_direct")]
    pub direct: SomConfig,
    #[serde(default)]
    pub logit: FitOptions,
    #[serde(default = "default_test_count")]
    pub test_count: usize,
    #[serde(default)]
    pub allocation: AllocationMode,
    /// Shuffle the training labels before the logit fit (baseline runs).
    #[serde(default)]
    pub shuffle_labels: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(seed: u64) -> Self {
        PipelineConfig {
            input: None,
            output_dir: None,
            threshold: default_threshold(),
            classification: ClassificationMode::Direct,
            level1: default_level1(),
            level2: default_level2(),
            direct: default_direct(),
            logit: FitOptions::default(),
            test_count: default_test_count(),
            allocation: AllocationMode::Argmax,
            shuffle_labels: false,
            seed,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> crate::Result<Self> {
        crate::data::read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub classification: ClassificationMode,
    pub allocation: AllocationMode,
    pub shuffled_labels: bool,
    pub n: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub anova: Vec<VariableScreen>,
    pub selected_variables: Vec<String>,
    pub clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub quantization_error: f64,
    pub macro_of_unit: Option<Vec<usize>>,
    pub contiguous: Option<bool>,
    pub fit: FitDiagnostics,
    pub contingency: ContingencyTable,
    pub score: AllocationScore,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage)
}

struct Artifacts<'a>(Option<&'a Path>);

impl Artifacts<'_> {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.0.map(|d| d.join(name))
    }
}

/// Loads the configured input files and runs the pipeline on them.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config has no input paths".into()))
        .at(Stage::Load)?;
    let schema = Schema::from_json_file(&input.schema).at(Stage::Load)?;
    let dataset = load_dataset(&input.continuous, &input.categorical, &schema).at(Stage::Load)?;
    run_on_dataset(&dataset, cfg)
}

pub fn run_on_dataset(dataset: &Dataset, cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    let out = Artifacts(cfg.output_dir.as_deref());
    if let Some(dir) = out.0 {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(dir, e))
            .at(Stage::Write)?;
    }

    let anova = select_variables(dataset, cfg.threshold).at(Stage::SelectVars)?;
    if let Some(p) = out.path("anova.csv") {
        anova.write_csv(p).at(Stage::SelectVars)?;
    }
    let keep = anova.selected_indices();
    if keep.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no continuous variable reaches R² ≥ {}",
            cfg.threshold
        )))
        .at(Stage::Renormalize);
    }
    let reduced = dataset.select_continuous(&keep).at(Stage::Renormalize)?;

    let (train_idx, test_idx) = split_indices(reduced.n(), cfg.test_count, stage_seed(cfg.seed, 1)).at(Stage::Split)?;
    let train = reduced.subset(&train_idx);
    let test = reduced.subset(&test_idx);

    let names = reduced.schema.continuous.clone();
    let clustering = match cfg.classification {
        ClassificationMode::Direct => {
            let som = SomConfig {
                seed: stage_seed(cfg.seed, 2),
                ..cfg.direct.clone()
            };
            let codebook = train_som(&train.continuous, &som)
                .and_then(|c| c.with_labels(names))
                .at(Stage::Train)?;
            Clustering::Direct { codebook }
        }
        ClassificationMode::TwoLevel => {
            let l1 = SomConfig {
                seed: stage_seed(cfg.seed, 2),
                ..cfg.level1.clone()
            };
            let l2 = SomConfig {
                seed: stage_seed(cfg.seed, 3),
                ..cfg.level2.clone()
            };
            let level1 = train_som(&train.continuous, &l1)
                .and_then(|c| c.with_labels(names))
                .at(Stage::Train)?;
            Clustering::TwoLevel(reduce_codebook(&level1, l2.units, &l2).at(Stage::Train)?)
        }
    };
    if let Some(p) = out.path("clustering.json") {
        clustering.save(p).at(Stage::Train)?;
    }
    let quantization_error = clustering
        .level1()
        .quantization_error(&train.continuous)
        .at(Stage::Train)?;
    let k = clustering.cluster_count();
    let train_labels = clustering.clusters_of(&train.continuous).at(Stage::Train)?;

    let profiles = describe_clusters(&train, &train_labels, k).at(Stage::Describe)?;
    if let Some(dir) = out.0 {
        write_continuous_csv(dir.join("profiles_continuous.csv"), &profiles).at(Stage::Describe)?;
        write_modalities_csv(dir.join("profiles_modalities.csv"), &profiles).at(Stage::Describe)?;
        let svg_path = dir.join("profiles.svg");
        std::fs::write(&svg_path, profile_chart_svg(&profiles))
            .map_err(|e| Error::io(svg_path, e))
            .at(Stage::Describe)?;
    }

    let mut fit_labels = train_labels.clone();
    if cfg.shuffle_labels {
        fit_labels.shuffle(&mut ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, 4)));
    }
    let spec = EncodingSpec::from_schema(&reduced.schema);
    let model = fit_logit(&train.categorical, &fit_labels, k, &spec, &cfg.logit).at(Stage::Fit)?;
    if let Some(p) = out.path("model.json") {
        model.save(p).at(Stage::Fit)?;
    }

    let allocation =
        allocate(&model, &test.categorical, cfg.allocation, stage_seed(cfg.seed, 5)).at(Stage::Allocate)?;
    if let Some(p) = out.path("allocation.csv") {
        allocation.write_csv(p).at(Stage::Allocate)?;
    }

    let truth = clustering.clusters_of(&test.continuous).at(Stage::TrueClass)?;
    if let Some(p) = out.path("truth.csv") {
        save_labels(p, &truth).at(Stage::TrueClass)?;
    }

    let contingency = build_contingency(&allocation.clusters(), &truth, k).at(Stage::Evaluate)?;
    let score = contingency.evaluate().at(Stage::Evaluate)?;
    if let Some(p) = out.path("contingency.csv") {
        contingency.write_csv(p).at(Stage::Evaluate)?;
    }

    let mut cluster_sizes = vec![0; k];
    for &l in &train_labels {
        cluster_sizes[l] += 1;
    }
    let report = PipelineReport {
        seed: cfg.seed,
        classification: cfg.classification,
        allocation: cfg.allocation,
        shuffled_labels: cfg.shuffle_labels,
        n: dataset.n(),
        train_size: train.n(),
        test_size: test.n(),
        anova: anova.variables,
        selected_variables: reduced.schema.continuous.clone(),
        clusters: k,
        cluster_sizes,
        quantization_error,
        macro_of_unit: match &clustering {
            Clustering::TwoLevel(t) => Some(t.macro_of_unit.clone()),
            Clustering::Direct { .. } => None,
        },
        contiguous: clustering.contiguous(),
        fit: model.diagnostics.clone(),
        contingency,
        score,
    };
    if let Some(p) = out.path("report.json") {
        write_json(p, &report).at(Stage::Write)?;
    }
    Ok(report)
}
