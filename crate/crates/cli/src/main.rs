use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use somlogit::data::{load_categorical, load_continuous, load_labels, save_labels};
use somlogit::profiles::{profile_chart_svg, write_continuous_csv, write_modalities_csv};
use somlogit::synth::{write_generated, GeneratorSpec};
use somlogit::{
    allocate, build_contingency, describe_clusters, fit_logit, generate, reduce_codebook, renormalize_composition,
    run_pipeline, select_variables, train_som, AllocationMode, AnovaReport, Clustering, ContinuousTable, Dataset,
    EncodingSpec, FitOptions, LogitModel, PipelineConfig, Schema, SomConfig,
};

#[derive(Parser)]
#[command(name = "somlogit", version, about = "Kohonen-string clustering and logit allocation")]
struct Cli {
    /// Pipeline configuration (JSON); required by `run`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step; overrides the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate survey-shaped synthetic data with planted clusters.
    Synth(SynthArgs),
    /// Screen continuous variables by additive ANOVA on the categorical ones.
    SelectVars(SelectArgs),
    /// Train a direct or two-level Kohonen string.
    Train(TrainArgs),
    /// Describe clusters: continuous summaries and modality test values.
    Describe(DescribeArgs),
    /// Fit the polychotomous logit of cluster membership.
    Fit(FitArgs),
    /// Allocate individuals known only by categorical variables.
    Allocate(AllocateArgs),
    /// Cross allocated and true clusters and score the allocation.
    Evaluate(EvaluateArgs),
    /// Run the whole pipeline from a configuration file.
    Run(RunArgs),
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    continuous: Option<PathBuf>,
    #[arg(long)]
    categorical: Option<PathBuf>,
}

impl Inputs {
    fn schema(&self) -> Result<Schema> {
        Ok(Schema::from_json_file(&self.schema)?)
    }

    fn continuous_path(&self) -> Result<&Path> {
        self.continuous.as_deref().context("--continuous is required")
    }

    fn categorical_path(&self) -> Result<&Path> {
        self.categorical.as_deref().context("--categorical is required")
    }

    fn dataset(&self) -> Result<Dataset> {
        let schema = self.schema()?;
        Ok(somlogit::load_dataset(
            self.continuous_path()?,
            self.categorical_path()?,
            &schema,
        )?)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8809)]
    n: usize,
    #[arg(long, default_value_t = 0.8)]
    dependence: f64,
    #[arg(long)]
    missing_rate: Option<f64>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = somlogit::varselect::DEFAULT_R2_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// ANOVA report whose selected variables are kept.
    #[arg(long)]
    anova: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    units: usize,
    /// Reduce the trained string to this many macro clusters.
    #[arg(long)]
    macro_units: Option<usize>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 500)]
    macro_epochs: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the cluster of every training row.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args)]
struct DescribeArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    clustering: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Cluster labels (column `cluster`).
    #[arg(long, conflicts_with = "clustering")]
    labels: Option<PathBuf>,
    /// Clustering used to label the rows of --continuous.
    #[arg(long)]
    clustering: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Argmax,
    Sample,
}

#[derive(Args)]
struct AllocateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Argmax)]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Allocation CSV (column `assigned`).
    #[arg(long)]
    allocated: PathBuf,
    /// True clusters (column `cluster`).
    #[arg(long, required_unless_present = "clustering")]
    truth: Option<PathBuf>,
    /// Derive true clusters from this clustering and --continuous.
    #[arg(long)]
    clustering: Option<PathBuf>,
    #[arg(long)]
    continuous: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Cluster count; defaults to the clustering's or the largest label + 1.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Overrides the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// Attaches the stage name to any failure.
trait Stage<T> {
    fn stage(self, name: &str) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(Into::into).with_context(|| format!("stage {name}"))
    }
}

/// Continuous block restricted to `names`, renormalized when compositional.
fn continuous_for(path: &Path, schema: &Schema, names: &[String]) -> Result<ContinuousTable> {
    let table = load_continuous(path, schema)?;
    let keep = names
        .iter()
        .map(|n| {
            schema
                .continuous_index(n)
                .with_context(|| format!("unknown continuous variable {n:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    if keep.len() == schema.p() && keep.iter().enumerate().all(|(i, &j)| i == j) {
        return Ok(table);
    }
    Ok(if schema.compositional {
        renormalize_composition(&table, &keep)?
    } else {
        table.restrict_columns(&keep)?
    })
}

fn synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let mut spec = GeneratorSpec::survey_shaped(seed).with_dependence(args.dependence);
    spec.n = args.n;
    if let Some(rate) = args.missing_rate {
        spec.missing_rate = rate;
    }
    let (data, labels) = generate(&spec).stage("synth")?;
    write_generated(&args.out, &data, &labels).stage("write")?;
    eprintln!("wrote {} rows to {}", data.n(), args.out.display());
    Ok(())
}

fn select_vars(args: &SelectArgs) -> Result<()> {
    let data = args.inputs.dataset().stage("load")?;
    let report = select_variables(&data, args.threshold).stage("select-vars")?;
    report.write_csv(&args.out).stage("write")?;
    report.write_summary(std::io::stderr()).stage("write")?;
    Ok(())
}

fn train(args: &TrainArgs, seed: u64) -> Result<()> {
    let schema = args.inputs.schema().stage("load")?;
    let names = match &args.anova {
        Some(path) => AnovaReport::read_selected(path).stage("load")?,
        None => schema.continuous.clone(),
    };
    if names.is_empty() {
        bail!("stage renormalize: the ANOVA report selects no variable");
    }
    let path = args.inputs.continuous_path().stage("load")?;
    let table = continuous_for(path, &schema, &names).stage("renormalize")?;

    let cfg = SomConfig::new(args.units, seed).with_epochs(args.epochs);
    let level1 = train_som(&table, &cfg)
        .and_then(|c| c.with_labels(names))
        .stage("train")?;
    let clustering = match args.macro_units {
        None => Clustering::Direct { codebook: level1 },
        Some(k2) => {
            let cfg2 = SomConfig::new(k2, seed.wrapping_add(1)).with_epochs(args.macro_epochs);
            let two = reduce_codebook(&level1, k2, &cfg2).stage("train")?;
            if !two.contiguous {
                eprintln!("warning: macro clusters are not contiguous along the string");
            }
            Clustering::TwoLevel(two)
        }
    };
    clustering.save(&args.out).stage("write")?;
    if let Some(out) = &args.labels_out {
        let labels = clustering.clusters_of(&table).stage("train")?;
        save_labels(out, &labels).stage("write")?;
    }
    eprintln!(
        "{} clusters, quantization error {:.4}",
        clustering.cluster_count(),
        clustering.level1().quantization_error(&table).stage("train")?
    );
    Ok(())
}

fn describe(args: &DescribeArgs) -> Result<()> {
    let clustering = Clustering::load(&args.clustering).stage("load")?;
    let data = args
        .inputs
        .dataset()
        .and_then(|d| Ok(d.select_continuous_by_name(clustering.labels())?))
        .stage("load")?;
    let labels = clustering.clusters_of(&data.continuous).stage("describe")?;
    let profiles = describe_clusters(&data, &labels, clustering.cluster_count()).stage("describe")?;
    fs::create_dir_all(&args.out_dir).stage("write")?;
    write_continuous_csv(args.out_dir.join("profiles_continuous.csv"), &profiles).stage("write")?;
    write_modalities_csv(args.out_dir.join("profiles_modalities.csv"), &profiles).stage("write")?;
    fs::write(args.out_dir.join("profiles.svg"), profile_chart_svg(&profiles)).stage("write")?;
    Ok(())
}

fn fit(args: &FitArgs) -> Result<()> {
    let schema = args.inputs.schema().stage("load")?;
    let rows = load_categorical(args.inputs.categorical_path()?, &schema, false).stage("load")?;
    let (labels, k) = match (&args.labels, &args.clustering) {
        (Some(path), _) => {
            let labels = load_labels(path, "cluster").stage("load")?;
            let k = labels.iter().max().map_or(0, |m| m + 1);
            (labels, k)
        }
        (None, Some(path)) => {
            let clustering = Clustering::load(path).stage("load")?;
            let cont = args.inputs.continuous_path().stage("load")?;
            let table = continuous_for(cont, &schema, clustering.labels()).stage("load")?;
            (
                clustering.clusters_of(&table).stage("true-class")?,
                clustering.cluster_count(),
            )
        }
        (None, None) => bail!("stage load: either --labels or --clustering is required"),
    };
    let opts = FitOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ridge: args.ridge,
    };
    let model = fit_logit(&rows, &labels, k, &EncodingSpec::from_schema(&schema), &opts).stage("fit")?;
    model.save(&args.out).stage("write")?;
    let d = &model.diagnostics;
    eprintln!(
        "log-likelihood {:.6}, gradient {:.3e}, {} iterations, converged {}{}",
        d.log_likelihood,
        d.gradient_norm,
        d.iterations,
        d.converged,
        d.fallback
            .as_deref()
            .map(|f| format!(", ridge fallback: {f}"))
            .unwrap_or_default()
    );
    Ok(())
}

fn allocate_cmd(args: &AllocateArgs, seed: u64) -> Result<()> {
    let schema = args.inputs.schema().stage("load")?;
    let model = LogitModel::load(&args.model).stage("load")?;
    let rows = load_categorical(args.inputs.categorical_path()?, &schema, true).stage("load")?;
    let mode = match args.mode {
        Mode::Argmax => AllocationMode::Argmax,
        Mode::Sample => AllocationMode::Sample,
    };
    let result = allocate(&model, &rows, mode, seed).stage("allocate")?;
    result.write_csv(&args.out).stage("write")?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let allocated = load_labels(&args.allocated, "assigned").stage("load")?;
    let (truth, clustering_k) = match (&args.truth, &args.clustering) {
        (Some(path), _) => (load_labels(path, "cluster").stage("load")?, None),
        (None, Some(path)) => {
            let clustering = Clustering::load(path).stage("load")?;
            let cont = args
                .continuous
                .as_deref()
                .context("--continuous is required")
                .stage("load")?;
            let schema_path = args.schema.as_deref().context("--schema is required").stage("load")?;
            let schema = Schema::from_json_file(schema_path).stage("load")?;
            let table = continuous_for(cont, &schema, clustering.labels()).stage("load")?;
            let truth = clustering.clusters_of(&table).stage("true-class")?;
            (truth, Some(clustering.cluster_count()))
        }
        (None, None) => bail!("stage load: either --truth or --clustering is required"),
    };
    let k = args
        .k
        .or(clustering_k)
        .unwrap_or_else(|| allocated.iter().chain(&truth).max().map_or(1, |m| m + 1));
    let table = build_contingency(&allocated, &truth, k).stage("evaluate")?;
    let score = table.evaluate().stage("evaluate")?;
    fs::create_dir_all(&args.out_dir).stage("write")?;
    table.write_csv(args.out_dir.join("contingency.csv")).stage("write")?;
    fs::write(args.out_dir.join("metrics.json"), serde_json::to_string_pretty(&score)?).stage("write")?;
    println!(
        "exact {}/{} ({:.1}%), correct {}/{} ({:.1}%)",
        score.exact,
        score.total,
        100.0 * score.exact_rate,
        score.correct,
        score.total,
        100.0 * score.correct_rate
    );
    Ok(())
}

fn run(args: &RunArgs, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let path = config.context("stage load: --config is required for run")?;
    let mut cfg = PipelineConfig::from_json_file(path).stage("load")?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    // PipelineError already names its stage.
    let report = run_pipeline(&cfg)?;
    if cfg.output_dir.is_none() {
        println!("{}", report.to_json());
    } else {
        println!(
            "{} clusters, exact {:.1}%, correct {:.1}%",
            report.clusters,
            100.0 * report.score.exact_rate,
            100.0 * report.score.correct_rate
        );
    }
    Ok(())
}

/// Joins the cause chain, skipping causes already quoted by their parent.
fn describe_error(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    let result = match &cli.command {
        Command::Synth(a) => synth(a, seed),
        Command::SelectVars(a) => select_vars(a),
        Command::Train(a) => train(a, seed),
        Command::Describe(a) => describe(a),
        Command::Fit(a) => fit(a),
        Command::Allocate(a) => allocate_cmd(a, seed),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a, cli.config.as_deref(), cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe_error(&e));
            ExitCode::FAILURE
        }
    }
}
