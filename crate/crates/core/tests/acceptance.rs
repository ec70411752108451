//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use somlogit::logit::MissingPolicy;
use somlogit::{
    build_dummy_design, fit_additive_anova, fit_logit, generate, run_on_dataset, test_values, train_som,
    CategoricalTable, CategoricalVar, ClassificationMode, ContingencyTable, ContinuousTable, EncodingSpec, FitOptions,
    GeneratorSpec, LogitModel, PipelineConfig, Schema, SomConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn encoding(counts: &[usize]) -> EncodingSpec {
    EncodingSpec {
        variables: counts
            .iter()
            .enumerate()
            .map(|(j, &m)| CategoricalVar {
                name: format!("y{j}"),
                modalities: (0..m).map(|i| format!("m{i}")).collect(),
            })
            .collect(),
        intercept: true,
        missing: MissingPolicy::ZeroContribution,
    }
}

// ---------------------------------------------------------------------------

fn reference_tables() -> Outcome {
    let start = Instant::now();
    let c1 = ContingencyTable::from_counts(vec![
        vec![55, 22, 29, 11, 6],
        vec![23, 22, 14, 9, 4],
        vec![17, 11, 59, 26, 9],
        vec![2, 2, 2, 3, 4],
        vec![6, 4, 7, 15, 47],
    ])
    .map_err(|e| e.to_string())?;
    let c2 = ContingencyTable::from_counts(vec![
        vec![33, 12, 3, 3, 5],
        vec![23, 33, 22, 17, 3],
        vec![8, 27, 56, 15, 3],
        vec![0, 3, 11, 42, 21],
        vec![8, 3, 1, 10, 47],
    ])
    .map_err(|e| e.to_string())?;

    let s1 = c1.evaluate().map_err(|e| e.to_string())?;
    let s2 = c2.evaluate().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    check(c1.row_totals() == [123, 72, 122, 13, 79], || {
        format!("C1 row totals {:?}", c1.row_totals())
    })?;
    check(c1.column_totals() == [103, 61, 111, 64, 70], || {
        format!("C1 column totals {:?}", c1.column_totals())
    })?;
    check(
        (s1.exact, s1.neighbor, s1.correct, s1.total) == (186, 117, 303, 409),
        || format!("C1 score {s1:?}"),
    )?;
    check(s1.correct_rate == 303.0 / 409.0, || {
        format!("C1 rate {}", s1.correct_rate)
    })?;
    check(
        (s2.exact, s2.neighbor, s2.correct, s2.total) == (211, 141, 352, 409),
        || format!("C2 score {s2:?}"),
    )?;
    check(s2.correct_rate == 352.0 / 409.0, || {
        format!("C2 rate {}", s2.correct_rate)
    })?;
    // Round figures quoted alongside the tables.
    check((s1.correct_rate * 100.0).round() == 74.0, || "C1 is not 74%".into())?;
    check((s2.correct_rate * 100.0).round() == 86.0, || "C2 is not 86%".into())?;
    check(elapsed < Duration::from_millis(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "C1 {}/{}/{} C2 {}/{}/{} in {elapsed:?}",
        s1.exact, s1.neighbor, s1.correct, s2.exact, s2.neighbor, s2.correct
    ))
}

// ---------------------------------------------------------------------------

/// Cell counts (a, b, c, d): a = #(modality 0, class 0), b = #(modality 0,
/// class 1), c = #(modality 1, class 0), d = #(modality 1, class 1). The
/// saturated model reproduces the cell log-odds exactly.
fn saturated_case(a: usize, b: usize, c: usize, d: usize) -> Result<(f64, f64), String> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (modality, class, count) in [(0, 0, a), (0, 1, b), (1, 0, c), (1, 1, d)] {
        for _ in 0..count {
            rows.push(vec![modality]);
            labels.push(class);
        }
    }
    let table = CategoricalTable::from_rows(&rows).map_err(|e| e.to_string())?;
    let model = fit_logit(&table, &labels, 2, &encoding(&[2]), &FitOptions::default()).map_err(|e| e.to_string())?;
    let s0 = model.scores(&[Some(0)]).map_err(|e| e.to_string())?[0];
    let s1 = model.scores(&[Some(1)]).map_err(|e| e.to_string())?[0];
    let e0 = (s0 - (a as f64 / b as f64).ln()).abs();
    let e1 = (s1 - (c as f64 / d as f64).ln()).abs();
    Ok((e0, e1))
}

fn saturated_logit() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a7);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let [a, b, c, d]: [usize; 4] = std::array::from_fn(|_| rng.random_range(1..=20));
        let (e0, e1) = saturated_case(a, b, c, d)?;
        worst = worst.max(e0).max(e1);
        check(e0 <= 1e-6 && e1 <= 1e-6, || {
            format!("case {case} counts ({a},{b},{c},{d}): errors {e0:.3e}, {e1:.3e}")
        })?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("200 cases, max |Δ log-odds| {worst:.2e}, {elapsed:?}"))
}

// ---------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x67ad);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let k = rng.random_range(2..=5);
        // Draw modality counts until the width 1 + Σ(m_j − 1) stays within 12.
        let mut counts = Vec::new();
        let n_vars = rng.random_range(1..=4);
        for _ in 0..n_vars {
            let used: usize = counts.iter().map(|m: &usize| m - 1).sum();
            let room = 11 - used;
            if room == 0 {
                break;
            }
            counts.push(rng.random_range(2..=(room + 1).min(5)));
        }
        let spec = encoding(&counts);
        let d = spec.width();
        check(d <= 12, || format!("case {case}: width {d}"))?;

        let n = rng.random_range(10..=60);
        let codes: Vec<Option<usize>> = (0..n)
            .flat_map(|_| counts.clone())
            .map(|m| (rng.random::<f64>() > 0.1).then(|| rng.random_range(0..m)))
            .collect();
        let rows = CategoricalTable::new(counts.len(), codes).map_err(|e| e.to_string())?;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();

        let mut model = LogitModel::zeros(k, spec).map_err(|e| e.to_string())?;
        let theta: Vec<f64> = (0..d * (k - 1)).map(|_| rng.random_range(-2.0..2.0)).collect();
        model.set_flat_params(&theta).map_err(|e| e.to_string())?;
        let analytic = model.gradient(&rows, &labels).map_err(|e| e.to_string())?;

        let h = 1e-5;
        let mut numeric = vec![0.0; theta.len()];
        for (i, g) in numeric.iter_mut().enumerate() {
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            model.set_flat_params(&t).map_err(|e| e.to_string())?;
            let up = model.log_likelihood(&rows, &labels).map_err(|e| e.to_string())?;
            t[i] = theta[i] - h;
            model.set_flat_params(&t).map_err(|e| e.to_string())?;
            let down = model.log_likelihood(&rows, &labels).map_err(|e| e.to_string())?;
            *g = (up - down) / (2.0 * h);
        }

        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12);
        worst = worst.max(rel);
        check(rel < 1e-5, || {
            format!("case {case} (K={k}, d={d}): relative error {rel:.3e}")
        })?;
    }
    Ok(format!("50 instances, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------

/// Normal-equations least squares with partial-pivot Gaussian elimination.
fn oracle_anova(x: &[f64], codes: &[Vec<usize>], counts: &[usize]) -> Option<(f64, f64, usize, usize)> {
    let width = 1 + counts.iter().map(|m| m - 1).sum::<usize>();
    let design: Vec<Vec<f64>> = codes
        .iter()
        .map(|row| {
            let mut r = vec![0.0; width];
            r[0] = 1.0;
            let mut off = 1;
            for (&c, &m) in row.iter().zip(counts) {
                if c < m - 1 {
                    r[off + c] = 1.0;
                }
                off += m - 1;
            }
            r
        })
        .collect();

    let mut a = vec![vec![0.0; width + 1]; width];
    for (r, &y) in design.iter().zip(x) {
        for i in 0..width {
            for j in 0..width {
                a[i][j] += r[i] * r[j];
            }
            a[i][width] += r[i] * y;
        }
    }
    for col in 0..width {
        let piv = (col..width).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        for row in 0..width {
            if row != col {
                let f = a[row][col] / a[col][col];
                let pivot = a[col].clone();
                for (x, p) in a[row].iter_mut().zip(&pivot).skip(col) {
                    *x -= f * p;
                }
            }
        }
    }
    let beta: Vec<f64> = (0..width).map(|i| a[i][width] / a[i][i]).collect();

    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut ssr = 0.0;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (r, &y) in design.iter().zip(x) {
        let fit: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
        ssr += (fit - mean).powi(2);
        sse += (y - fit).powi(2);
        sst += (y - mean).powi(2);
    }
    let df_model = width - 1;
    let df_error = n - width;
    Some((
        ssr / sst,
        (ssr / df_model as f64) / (sse / df_error as f64),
        df_model,
        df_error,
    ))
}

fn anova_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa40a);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut done = 0;
    let mut worst_r2 = 0.0f64;
    let mut worst_f = 0.0f64;
    while done < 100 {
        let n_factors = rng.random_range(1..=3);
        let counts: Vec<usize> = (0..n_factors).map(|_| rng.random_range(2..=5)).collect();
        let n = rng.random_range(20..=200);
        let effects: Vec<Vec<f64>> = counts
            .iter()
            .map(|&m| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let codes: Vec<Vec<usize>> = (0..n)
            .map(|_| counts.iter().map(|&m| rng.random_range(0..m)).collect())
            .collect();
        let x: Vec<f64> = codes
            .iter()
            .map(|row| 10.0 + row.iter().zip(&effects).map(|(&c, e)| e[c]).sum::<f64>() + noise.sample(&mut rng))
            .collect();
        // Some rows unobserved; the library drops them, the oracle never sees them.
        let observed: Vec<bool> = (0..n).map(|_| rng.random::<f64>() > 0.1).collect();
        let kept: Vec<usize> = (0..n).filter(|&i| observed[i]).collect();
        let kept_x: Vec<f64> = kept.iter().map(|&i| x[i]).collect();
        let kept_codes: Vec<Vec<usize>> = kept.iter().map(|&i| codes[i].clone()).collect();
        let width = 1 + counts.iter().map(|m| m - 1).sum::<usize>();
        if kept.len() <= width {
            continue;
        }
        let Some((r2, f, df_model, df_error)) = oracle_anova(&kept_x, &kept_codes, &counts) else {
            // A modality absent among kept rows: the oracle needs full rank.
            continue;
        };

        let schema = Schema::new(
            vec!["x".into()],
            counts
                .iter()
                .enumerate()
                .map(|(j, &m)| CategoricalVar {
                    name: format!("f{j}"),
                    modalities: (0..m).map(|i| format!("l{i}")).collect(),
                })
                .collect(),
            false,
        )
        .map_err(|e| e.to_string())?;
        let table = CategoricalTable::from_rows(&codes).map_err(|e| e.to_string())?;
        let design = build_dummy_design(&table, &schema).map_err(|e| e.to_string())?;
        let fit = fit_additive_anova(&x, &observed, &design).map_err(|e| e.to_string())?;

        let e_r2 = (fit.r_squared - r2).abs();
        let e_f = (fit.fisher_statistic - f).abs() / f.abs().max(1.0);
        worst_r2 = worst_r2.max(e_r2);
        worst_f = worst_f.max(e_f);
        check(e_r2 <= 1e-10 && e_f <= 1e-10, || {
            format!(
                "instance {done}: R² {} vs {r2}, F {} vs {f}",
                fit.r_squared, fit.fisher_statistic
            )
        })?;
        check((fit.df_model, fit.df_error) == (df_model, df_error), || {
            format!(
                "instance {done}: df ({}, {}) vs ({df_model}, {df_error})",
                fit.df_model, fit.df_error
            )
        })?;
        done += 1;
    }
    Ok(format!(
        "100 instances, max |ΔR²| {worst_r2:.2e}, max relative ΔF {worst_f:.2e}"
    ))
}

// ---------------------------------------------------------------------------

fn gaussian_mixture(seed: u64) -> ContinuousTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let rows: Vec<Vec<f64>> = (0..5)
        .flat_map(|c| (0..60).map(move |_| c))
        .map(|c| vec![10.0 * c as f64 + noise.sample(&mut rng)])
        .collect();
    ContinuousTable::from_rows(&rows).expect("well-formed rows")
}

fn som_self_organization() -> Outcome {
    let mut monotone = 0;
    let mut qe_ok = 0;
    for run in 0..100u64 {
        let data = gaussian_mixture(1000 + run);
        let five = train_som(&data, &SomConfig::new(5, run)).map_err(|e| e.to_string())?;
        let twenty = train_som(&data, &SomConfig::new(20, run)).map_err(|e| e.to_string())?;
        let w: Vec<f64> = five.code_vectors.iter().map(|v| v[0]).collect();
        if w.windows(2).all(|p| p[0] < p[1]) || w.windows(2).all(|p| p[0] > p[1]) {
            monotone += 1;
        }
        let q5 = five.quantization_error(&data).map_err(|e| e.to_string())?;
        let q20 = twenty.quantization_error(&data).map_err(|e| e.to_string())?;
        if q20 <= q5 {
            qe_ok += 1;
        }
    }
    check(monotone >= 95, || format!("monotone in {monotone}/100 runs"))?;
    check(qe_ok >= 95, || format!("QE(20) ≤ QE(5) in {qe_ok}/100 runs"))?;
    Ok(format!("monotone {monotone}/100, QE(20) ≤ QE(5) {qe_ok}/100"))
}

// ---------------------------------------------------------------------------

fn test_value_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..3u64 {
        let spec = GeneratorSpec::survey_shaped(seed);
        let (data, planted) = generate(&spec).map_err(|e| e.to_string())?;
        // Planted labels, plus an unrelated labelling with an empty cluster.
        let other: Vec<usize> = (0..data.n()).map(|i| (i * 7 + seed as usize) % 6).collect();
        for (labels, k) in [(planted, spec.clusters()), (other, 7)] {
            let table = test_values(&data.categorical, &data.schema, &labels, k).map_err(|e| e.to_string())?;
            for (j, &m) in table.modality_counts.iter().enumerate() {
                for modality in 0..m {
                    if table.global_pct(j, modality) <= 0.0 {
                        continue;
                    }
                    let weighted: f64 = (0..k)
                        .filter_map(|c| {
                            table
                                .test_value(c, j, modality)
                                .map(|tv| table.cluster_sizes[c] as f64 * tv)
                        })
                        .sum::<f64>()
                        / table.total as f64;
                    let err = (weighted - 1.0).abs();
                    worst = worst.max(err);
                    checked += 1;
                    check(err <= 1e-12, || {
                        format!("seed {seed}, variable {j}, modality {modality}: weighted mean {weighted}")
                    })?;
                }
            }
        }
    }
    Ok(format!("{checked} modality checks, max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------------------

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..5u64 {
        let spec = GeneratorSpec::survey_shaped(seed);
        check(spec.n == 8809 && spec.dependence == 0.8 && spec.clusters() == 5, || {
            "generator is not survey-shaped".into()
        })?;
        let (data, _) = generate(&spec).map_err(|e| e.to_string())?;

        let mut cfg = PipelineConfig::new(seed);
        cfg.classification = ClassificationMode::Direct;
        let report = run_on_dataset(&data, &cfg).map_err(|e| e.to_string())?;
        check((report.train_size, report.test_size) == (8400, 409), || {
            format!("split {}/{}", report.train_size, report.test_size)
        })?;
        cfg.shuffle_labels = true;
        let baseline = run_on_dataset(&data, &cfg).map_err(|e| e.to_string())?;

        let rate = report.score.correct_rate;
        let base = baseline.score.correct_rate;
        lines.push(format!("seed {seed}: {rate:.3} vs {base:.3}"));
        if rate < 0.70 || rate < base + 0.25 {
            failures.push(format!("seed {seed}: correct {rate:.3}, baseline {base:.3}"));
        }
    }
    let elapsed = start.elapsed();
    check(failures.is_empty(), || failures.join("; "))?;
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {elapsed:.1?}", lines.join(", ")))
}

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let spec = GeneratorSpec::survey_shaped(11);
    let (data, _) = generate(&spec).map_err(|e| e.to_string())?;
    let mut configs = Vec::new();
    let mut direct = PipelineConfig::new(11);
    direct.classification = ClassificationMode::Direct;
    configs.push(direct);
    let mut two_level = PipelineConfig::new(12);
    two_level.classification = ClassificationMode::TwoLevel;
    two_level.allocation = somlogit::AllocationMode::Sample;
    configs.push(two_level);

    let mut compared = 0;
    for cfg in configs {
        let mut bytes = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let mut cfg = cfg.clone();
            cfg.output_dir = Some(dir.path().to_path_buf());
            let report = run_on_dataset(&data, &cfg).map_err(|e| e.to_string())?;
            let file = std::fs::read(dir.path().join("report.json")).map_err(|e| e.to_string())?;
            bytes.push((report.to_json(), file));
        }
        check(bytes[0].0 == bytes[1].0, || {
            format!("{:?} reports differ", cfg.classification)
        })?;
        check(bytes[0].1 == bytes[1].1, || {
            format!("{:?} report files differ", cfg.classification)
        })?;
        compared += 1;
    }
    Ok(format!("{compared} configurations, reports byte-identical"))
}

// ---------------------------------------------------------------------------

fn probability_normalization() -> Outcome {
    let strategy = (2usize..=6, prop::collection::vec(2usize..=5, 1..=4)).prop_flat_map(|(k, counts)| {
        let width = 1 + counts.iter().map(|m| m - 1).sum::<usize>();
        let row = counts
            .iter()
            .map(|&m| prop::option::weighted(0.9, 0..m))
            .collect::<Vec<_>>();
        (
            Just(k),
            Just(counts),
            prop::collection::vec(-1e3f64..=1e3, width * (k - 1)),
            row,
        )
    });
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 10_000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&strategy, |(k, counts, theta, row)| {
            let mut model = LogitModel::zeros(k, encoding(&counts)).expect("valid model");
            model.set_flat_params(&theta).expect("matching length");
            let p = model.predict_proba(&row).expect("valid row");
            prop_assert_eq!(p.len(), k);
            prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0), "{:?}", p);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12, "sum {}", total);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 random inputs, coefficients within ±1e3".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 9] = [
        ("reference contingency tables", reference_tables),
        ("saturated logit matches cell log-odds", saturated_logit),
        ("log-likelihood gradient vs finite differences", gradient_check),
        ("ANOVA vs normal-equations oracle", anova_oracle),
        ("SOM self-organization and quantization", som_self_organization),
        ("test-value weighted mean identity", test_value_identity),
        ("end-to-end allocation beats shuffled baseline", end_to_end),
        ("deterministic reports", determinism),
        ("probability normalization", probability_normalization),
    ];

    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
