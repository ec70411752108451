use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use somlogit::synth::{generate, GeneratorSpec};
use somlogit::{fit_logit, CategoricalTable, EncodingSpec, Error, FitOptions, LogitModel};

fn survey_sample(seed: u64, n: usize, dependence: f64) -> (CategoricalTable, Vec<usize>, EncodingSpec) {
    let mut spec = GeneratorSpec::survey_shaped(seed).with_dependence(dependence);
    spec.n = n;
    let (data, labels) = generate(&spec).unwrap();
    let enc = EncodingSpec::from_schema(&data.schema);
    (data.categorical, labels, enc)
}

#[test]
fn relabelling_classes_permutes_probabilities() {
    let (rows, labels, enc) = survey_sample(3, 1500, 0.8);
    let perm = [3usize, 0, 4, 1, 2];
    let relabelled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
    let opts = FitOptions::default();
    let a = fit_logit(&rows, &labels, 5, &enc, &opts).unwrap();
    let b = fit_logit(&rows, &relabelled, 5, &enc, &opts).unwrap();
    assert!(a.diagnostics.converged && b.diagnostics.converged);
    for i in 0..rows.n_rows() {
        let pa = a.predict_proba(rows.row(i)).unwrap();
        let pb = b.predict_proba(rows.row(i)).unwrap();
        for c in 0..5 {
            assert!(
                (pa[c] - pb[perm[c]]).abs() < 1e-10,
                "row {i} class {c}: {} vs {}",
                pa[c],
                pb[perm[c]]
            );
        }
    }
    assert!((a.diagnostics.log_likelihood - b.diagnostics.log_likelihood).abs() < 1e-8);
}

#[test]
fn independent_categories_give_flat_model() {
    let (rows, labels, enc) = survey_sample(5, 20_000, 0.0);
    let model = fit_logit(&rows, &labels, 5, &enc, &FitOptions::default()).unwrap();
    let mut freq = [0.0; 5];
    for &l in &labels {
        freq[l] += 1.0 / labels.len() as f64;
    }

    // Score equations for the intercepts: mean fitted probabilities equal
    // the empirical class frequencies.
    let mut mean = [0.0; 5];
    for row in rows.rows() {
        for (m, p) in mean.iter_mut().zip(model.predict_proba(row).unwrap()) {
            *m += p / rows.n_rows() as f64;
        }
    }
    for c in 0..5 {
        assert!(
            (mean[c] - freq[c]).abs() < 1e-9,
            "class {c}: {} vs {}",
            mean[c],
            freq[c]
        );
    }

    // Without dependence the indicators carry only sampling noise, and the
    // intercepts sit near the empirical log-ratios to the reference class.
    for (c, b) in model.beta.iter().enumerate() {
        let slope = b[1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(slope < 0.3, "class {c}: largest indicator coefficient {slope}");
    }
    let at_reference_row: Vec<Option<usize>> = enc.variables.iter().map(|v| Some(v.modalities.len() - 1)).collect();
    let p = model.predict_proba(&at_reference_row).unwrap();
    for c in 0..5 {
        assert!((p[c] - freq[c]).abs() < 0.06, "class {c}: {} vs {}", p[c], freq[c]);
    }
}

#[test]
fn optimum_is_a_local_maximum() {
    let (rows, labels, enc) = survey_sample(9, 2000, 0.8);
    let model = fit_logit(&rows, &labels, 5, &enc, &FitOptions::default()).unwrap();
    assert!(model.diagnostics.converged, "{:?}", model.diagnostics);
    assert!(model.diagnostics.gradient_norm < 1e-8);
    assert_eq!(model.diagnostics.fallback, None);
    let best = model.log_likelihood(&rows, &labels).unwrap();
    assert!((best - model.diagnostics.log_likelihood).abs() < 1e-9);

    let theta = model.flat_params();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut probe = model.clone();
    for _ in 0..20 {
        let t: Vec<f64> = theta.iter().map(|v| v + rng.random_range(-1e-2..1e-2)).collect();
        probe.set_flat_params(&t).unwrap();
        assert!(probe.log_likelihood(&rows, &labels).unwrap() < best);
    }
}

#[test]
fn model_round_trips_through_json() {
    let (rows, labels, enc) = survey_sample(2, 800, 0.8);
    let model = fit_logit(&rows, &labels, 5, &enc, &FitOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    assert_eq!(LogitModel::load(&path).unwrap(), model);
}

#[test]
fn absent_class_is_rejected() {
    let (rows, labels, enc) = survey_sample(4, 500, 0.8);
    let shifted: Vec<usize> = labels.iter().map(|&l| l.max(1)).collect();
    match fit_logit(&rows, &shifted, 5, &enc, &FitOptions::default()) {
        Err(Error::AbsentClass { class: 0 }) => {}
        other => panic!("expected absent class 0, got {other:?}"),
    }
}

#[test]
fn missing_cells_contribute_nothing() {
    let (rows, labels, enc) = survey_sample(6, 1000, 0.8);
    let model = fit_logit(&rows, &labels, 5, &enc, &FitOptions::default()).unwrap();
    let full: Vec<Option<usize>> = vec![Some(0); enc.variables.len()];
    let mut partial = full.clone();
    partial[2] = None;
    let mut reference = full.clone();
    reference[2] = Some(enc.variables[2].modalities.len() - 1);
    assert_eq!(model.scores(&partial).unwrap(), model.scores(&reference).unwrap());
}
