use somlogit::synth::{generate, GeneratorSpec, SURVEY_DOMINANT, SURVEY_UNINFORMATIVE};
use somlogit::{
    allocate, fit_logit, reduce_codebook, select_variables, train_som, AllocationMode, CategoricalVar, Clustering,
    EncodingSpec, FitOptions, LogitModel,
};

fn survey(seed: u64, n: usize) -> (somlogit::Dataset, Vec<usize>) {
    let mut spec = GeneratorSpec::survey_shaped(seed);
    spec.n = n;
    generate(&spec).unwrap()
}

/// Share of rows whose cluster's majority planted label is their own.
fn purity(found: &[usize], planted: &[usize], k: usize) -> f64 {
    let mut table = vec![vec![0usize; 5]; k];
    for (&f, &p) in found.iter().zip(planted) {
        table[f][p] += 1;
    }
    let agree: usize = table.iter().map(|r| r.iter().max().copied().unwrap_or(0)).sum();
    agree as f64 / found.len() as f64
}

#[test]
fn screen_drops_exactly_the_uninformative_shares() {
    let (data, _) = survey(0, 8809);
    let report = select_variables(&data, 0.08).unwrap();
    let dropped: Vec<usize> = report
        .variables
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.selected)
        .map(|(j, _)| j)
        .collect();
    assert_eq!(dropped, SURVEY_UNINFORMATIVE);
    assert!(report.variables.iter().all(|v| v.degenerate.is_none()));
}

#[test]
fn direct_map_recovers_planted_clusters() {
    let mut spec = GeneratorSpec::survey_shaped(1);
    spec.n = 3000;
    spec.noise = 0.5;
    let (data, planted) = generate(&spec).unwrap();
    let codebook = train_som(&data.continuous, &somlogit::SomConfig::new(5, 7)).unwrap();
    let found = codebook.assign_all(&data.continuous).unwrap();
    let p = purity(&found, &planted, 5);
    assert!(p >= 0.9, "purity {p}");
}

#[test]
fn string_is_ordered_along_dominant_share() {
    let (data, _) = survey(2, 3000);
    let codebook = train_som(&data.continuous, &somlogit::SomConfig::new(5, 3)).unwrap();
    let w: Vec<f64> = codebook.code_vectors.iter().map(|v| v[SURVEY_DOMINANT]).collect();
    let up = w.windows(2).all(|p| p[0] < p[1]);
    let down = w.windows(2).all(|p| p[0] > p[1]);
    assert!(up || down, "{w:?}");
}

#[test]
fn twenty_unit_map_is_balanced() {
    let (data, _) = survey(3, 8400);
    let codebook = train_som(&data.continuous, &somlogit::SomConfig::new(20, 4)).unwrap();
    let labels = codebook.assign_all(&data.continuous).unwrap();
    let mut sizes = [0usize; 20];
    for l in labels {
        sizes[l] += 1;
    }
    let max_share = *sizes.iter().max().unwrap() as f64 / data.n() as f64;
    assert!(
        max_share <= 3.0 / 20.0,
        "largest unit holds {max_share:.3} of the rows: {sizes:?}"
    );
}

#[test]
fn reduction_maps_every_unit_and_reports_contiguity() {
    let (data, _) = survey(4, 3000);
    let level1 = train_som(&data.continuous, &somlogit::SomConfig::new(20, 1)).unwrap();
    let two = reduce_codebook(&level1, 5, &somlogit::SomConfig::new(5, 2).with_epochs(500)).unwrap();
    assert_eq!(two.macro_of_unit.len(), 20);
    assert!(two.macro_count() <= 5);
    let mut seen = two.macro_of_unit.clone();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen, (0..two.macro_count()).collect::<Vec<_>>());
    assert_eq!(two.contiguous, somlogit::som::is_contiguous(&two.macro_of_unit));

    let clustering = Clustering::TwoLevel(two.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clustering.json");
    clustering.save(&path).unwrap();
    assert_eq!(Clustering::load(&path).unwrap(), clustering);

    let identity = reduce_codebook(&level1, 20, &somlogit::SomConfig::new(20, 2)).unwrap();
    assert_eq!(identity.macro_of_unit, (0..20).collect::<Vec<_>>());
}

#[test]
fn sampled_allocation_follows_probabilities() {
    let spec = EncodingSpec {
        variables: vec![CategoricalVar::new("y", &["a", "b"])],
        intercept: true,
        missing: somlogit::logit::MissingPolicy::ZeroContribution,
    };
    let mut model = LogitModel::zeros(2, spec).unwrap();
    model.set_flat_params(&[(0.2f64 / 0.8).ln(), 0.0]).unwrap();
    let rows = somlogit::CategoricalTable::from_rows(&vec![vec![0]; 100_000]).unwrap();
    let result = allocate(&model, &rows, AllocationMode::Sample, 17).unwrap();
    let share = result.clusters().iter().filter(|&&c| c == 0).count() as f64 / 1e5;
    assert!((share - 0.2).abs() < 0.01, "share {share}");
    assert_eq!(allocate(&model, &rows, AllocationMode::Sample, 17).unwrap(), result);

    let argmax = allocate(&model, &rows, AllocationMode::Argmax, 17).unwrap();
    assert!(argmax.clusters().iter().all(|&c| c == 1));
}

#[test]
fn allocation_reports_missing_cells() {
    let (data, labels) = survey(5, 1000);
    let enc = EncodingSpec::from_schema(&data.schema);
    let model = fit_logit(&data.categorical, &labels, 5, &enc, &FitOptions::default()).unwrap();
    let mut codes: Vec<Option<usize>> = data.categorical.row(0).to_vec();
    codes[0] = None;
    codes[3] = None;
    let rows = somlogit::CategoricalTable::new(codes.len(), codes).unwrap();
    let result = allocate(&model, &rows, AllocationMode::Argmax, 0).unwrap();
    assert_eq!(result.individuals[0].missing_cells, 2);
    let total: f64 = result.individuals[0].probabilities.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}
