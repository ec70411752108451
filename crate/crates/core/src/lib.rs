//! Clustering of individuals from continuous variables with one-dimensional
//! Kohonen maps, and allocation of new individuals, known only through
//! categorical variables, by a non-ordered polychotomous logit model.
//!
//! The modules follow the workflow order: [`varselect`] screens the
//! continuous variables, [`som`] builds the clusters, [`profiles`] describes
//! them, [`logit`] models cluster membership from the categorical variables
//! and [`allocation`] assigns and scores new individuals. [`pipeline`] chains
//! everything; [`synth`] generates seeded test data.

pub mod allocation;
pub mod data;
pub mod error;
pub mod logit;
pub mod pipeline;
pub mod profiles;
pub mod som;
pub mod synth;
pub mod varselect;

pub use allocation::{
    allocate, build_contingency, true_class, AllocationMode, AllocationResult, AllocationScore, ContingencyTable,
};
pub use data::{
    load_dataset, renormalize_composition, split_dataset, CategoricalTable, CategoricalVar, ContinuousTable, Dataset,
    Schema,
};
pub use error::{Error, Result};
pub use logit::{fit_logit, EncodingSpec, FitDiagnostics, FitOptions, LogitModel};
pub use pipeline::{run_on_dataset, run_pipeline, ClassificationMode, PipelineConfig, PipelineError, PipelineReport};
pub use profiles::{describe_clusters, test_values, ClusterProfile};
pub use som::{masked_distance, reduce_codebook, train_som, Clustering, Codebook, SomConfig, TwoLevelClustering};
pub use synth::{generate, GeneratorSpec};
pub use varselect::{build_dummy_design, fit_additive_anova, select_variables, AnovaFit, AnovaReport};
