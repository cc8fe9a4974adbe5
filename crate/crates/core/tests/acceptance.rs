//! Acceptance suite: one PASS / FAIL / NOT RUN line per criterion.
//!
//! Criteria that need the UI-PRMD release read it from `$UIPRMD_ROOT` and
//! report NOT RUN when it is unset. The process exits non-zero if any
//! criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rehab::assessnet::AssessModel;
use rehab::dataset::{ingest, ExerciseDataset, Schema, SynthConfig};
use rehab::dimred::fit_pca_frames;
use rehab::dimred::AutoencoderConfig;
use rehab::metrics::{
    dtw_metric, gmm_nll, metric_table, scale_to_range, scaled_separation, separation_degree, series_for, CodedSet,
    GmmConfig, GmmModel, MetricKind, Mode, Reduction, TableOptions,
};
use rehab::scoring::{score_patient_value, score_reference_value, ScoringParams, DEFAULT_ALPHA1};
use rehab::seed::derive_seed;
use rehab::trainer::pipeline::{
    examples, ingest_stage, load_scores, metric_stage, partition, pipeline, reduce_stage, score_stage, Artifacts,
    DatasetSource, ModelTemplate, PipelineConfig,
};
use rehab::trainer::{ablation_sweep, TrainConfig, Variant};

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn uiprmd_root() -> Option<PathBuf> {
    std::env::var_os("UIPRMD_ROOT")
        .map(PathBuf::from)
        .filter(|p| p.is_dir())
}

fn load_uiprmd(root: &Path, exercise: u32) -> ExerciseDataset {
    ingest(root, &Schema::uiprmd(exercise)).unwrap_or_else(|e| panic!("exercise {exercise}: {e}"))
}

fn ae4() -> Reduction {
    Reduction::Autoencoder(AutoencoderConfig::default())
}

// Between-subject metric ordering with AE(4).
fn criterion_1(root: Option<&Path>) -> Verdict {
    let Some(root) = root else {
        return Verdict::NotRun("UIPRMD_ROOT not set".into());
    };
    let datasets: Vec<_> = (1..=10).map(|e| load_uiprmd(root, e)).collect();
    let table = match metric_table(
        &datasets,
        &[ae4()],
        &MetricKind::ALL,
        &[Mode::Between],
        &TableOptions::default(),
    ) {
        Ok(t) => t,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let m = |k| {
        table
            .cell("ae(4)", Mode::Between, k)
            .and_then(|c| c.mean())
            .unwrap_or(f64::NAN)
    };
    let (eu, ma, dtw, gmm) = (
        m(MetricKind::Euclidean),
        m(MetricKind::Mahalanobis),
        m(MetricKind::Dtw),
        m(MetricKind::Gmm),
    );
    // "comparable" Euclidean and DTW: within 0.05 of each other
    let ok = gmm > dtw.max(eu) && (dtw - eu).abs() <= 0.05 && dtw.min(eu) > ma && (gmm - 0.515).abs() <= 0.15;
    check(
        ok,
        format!("gmm {gmm:.3} dtw {dtw:.3} euclid {eu:.3} mahal {ma:.3} (gmm target 0.515 +/- 0.15)"),
    )
}

// Within-subject separation exceeds between-subject in every cell.
fn criterion_2(root: Option<&Path>) -> Verdict {
    let Some(root) = root else {
        return Verdict::NotRun("UIPRMD_ROOT not set".into());
    };
    let datasets: Vec<_> = (1..=10).map(|e| load_uiprmd(root, e)).collect();
    let reductions = [Reduction::Raw, Reduction::MaxVariance(3), Reduction::Pca(3), ae4()];
    let table = match metric_table(
        &datasets,
        &reductions,
        &MetricKind::ALL,
        &Mode::ALL,
        &TableOptions::default(),
    ) {
        Ok(t) => t,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let mut worse = Vec::new();
    let mut compared = 0;
    for r in &reductions {
        for k in MetricKind::ALL {
            let b = table.cell(&r.label(), Mode::Between, k).and_then(|c| c.mean());
            let w = table.cell(&r.label(), Mode::Within, k).and_then(|c| c.mean());
            if let (Some(b), Some(w)) = (b, w) {
                compared += 1;
                if w <= b {
                    worse.push(format!(
                        "{} {}: within {w:.3} <= between {b:.3}",
                        r.label(),
                        k.short_name()
                    ));
                }
            }
        }
    }
    check(
        worse.is_empty(),
        format!(
            "{compared} cells compared; {}",
            if worse.is_empty() {
                "all within > between".into()
            } else {
                worse.join("; ")
            }
        ),
    )
}

// Euclidean on raw data, between-subject, E1 and E2.
fn criterion_3(root: Option<&Path>) -> Verdict {
    let Some(root) = root else {
        return Verdict::NotRun("UIPRMD_ROOT not set".into());
    };
    let mut detail = Vec::new();
    let mut ok = true;
    for (ex, target) in [(1, 0.384), (2, 0.497)] {
        let ds = load_uiprmd(root, ex);
        let set = CodedSet::encode(&ds, None, "raw").unwrap();
        let series = series_for(&set, MetricKind::Euclidean, Mode::Between, &TableOptions::default()).unwrap();
        let sd = series[0].separation().unwrap();
        ok &= (sd - target).abs() <= 0.05;
        detail.push(format!("E{ex} {sd:.3} (target {target} +/- 0.05)"));
    }
    check(ok, detail.join(", "))
}

// Closed-form scoring, scaling and separation examples plus 1000-trial
// invariants.
fn criterion_4() -> Verdict {
    let mut failures = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-9 {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    let p = ScoringParams::with_defaults(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    expect("midpoint", score_reference_value(DEFAULT_ALPHA1 * p.scale(), &p), 0.5);
    expect("zero", score_reference_value(0.0, &p), 1.0 / (1.0 + (-3.2f64).exp()));
    expect(
        "patient = reference",
        score_patient_value(2.0, 2.0, &p),
        score_reference_value(2.0, &p),
    );
    let (sx, sy) = scale_to_range(&[0.0, 5.0], &[10.0]).unwrap();
    expect("scale min", sx[0], 1.0);
    expect("scale midpoint", sx[1], 10.5);
    expect("scale max", sy[0], 20.0);
    expect(
        "separation (2) vs (1)",
        separation_degree(&[2.0], &[1.0]).unwrap(),
        1.0 / 3.0,
    );
    expect(
        "separation constant",
        scaled_separation(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
        0.0,
    );
    let inside = (0..=100).all(|k| {
        let x = p.mu - 3.0 * p.delta + 6.0 * p.delta * f64::from(k) / 100.0;
        x <= p.mu - 3.0 * p.delta || x >= p.mu + 3.0 * p.delta || score_reference_value(x, &p) > 0.9
    });
    if !inside {
        failures.push("score <= 0.9 inside (mu - 3 delta, mu + 3 delta)".into());
    }

    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let values = prop::collection::vec(0.01f64..100.0, 2..30);
    let props = runner.run(
        &(values.clone(), values, 0.1f64..10.0, 1.0f64..20.0),
        |(x, y, a1, a2)| {
            let p = ScoringParams::from_reference(&x, a1, a2).unwrap();
            let mut xs = x.clone();
            xs.sort_by(f64::total_cmp);
            for w in xs.windows(2) {
                let (s0, s1) = (score_reference_value(w[0], &p), score_reference_value(w[1], &p));
                prop_assert!(s0 >= s1, "reference score not non-increasing");
                prop_assert!((0.0..=1.0).contains(&s0) && (0.0..=1.0).contains(&s1));
            }
            for (&xk, &yk) in x.iter().zip(&y) {
                let s = score_patient_value(xk, yk, &p);
                prop_assert!((0.0..=1.0).contains(&s));
                if yk > xk {
                    prop_assert!(s <= score_reference_value(xk, &p));
                }
            }
            let (a, b) = scale_to_range(&x, &y).unwrap_or((vec![1.0; x.len()], vec![1.0; y.len()]));
            prop_assert!(a.iter().chain(&b).all(|v| (1.0 - 1e-12..=20.0 + 1e-12).contains(v)));
            let sd = separation_degree(&x, &y).unwrap();
            prop_assert!(sd.abs() < 1.0);
            prop_assert!((sd + separation_degree(&y, &x).unwrap()).abs() < 1e-12);
            Ok(())
        },
    );
    if let Err(e) = props {
        failures.push(format!("property: {e}"));
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "closed forms at 1e-9; 1000 property trials".into()
        } else {
            failures.join("; ")
        },
    )
}

// DTW, mixture likelihood and PCA against independent oracles.
fn criterion_5() -> Verdict {
    let seqs = common::all_sequences(&[0.0, 1.0, 2.0], 5);
    let mut dtw_worst = 0.0f64;
    for a in &seqs {
        let am = Array2::from_shape_vec((a.len(), 1), a.clone()).unwrap();
        for b in &seqs {
            let bm = Array2::from_shape_vec((b.len(), 1), b.clone()).unwrap();
            let got = dtw_metric(&am, &bm).unwrap();
            dtw_worst = dtw_worst.max((got - common::brute_force_dtw(a, b)).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gmm_worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.gen_range(1..=3);
        let c = rng.gen_range(1..=3);
        let weights: Vec<f64> = (0..c).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let means: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let covs: Vec<Vec<Vec<f64>>> = (0..c).map(|_| common::random_spd(&mut rng, d, 0.3)).collect();
        let frames = Array2::from_shape_fn((6, d), |_| rng.gen_range(-3.0..3.0));
        let model = GmmModel::new(
            weights.clone(),
            means.clone(),
            covs.iter().map(|m| m.iter().flatten().copied().collect()).collect(),
        )
        .unwrap();
        let got = gmm_nll(&model, &frames).unwrap();
        gmm_worst = gmm_worst.max((got - common::naive_gmm_nll(&weights, &means, &covs, &frames)).abs());
    }

    let mut pca_ok = true;
    let x = Array2::from_shape_fn((50, 5), |(_, j)| rng.gen_range(-1.0..1.0) * (j + 1) as f64);
    let fit = fit_pca_frames(&x, 5).unwrap();
    for (k, (val, vec)) in common::jacobi_eigen(&common::sample_covariance(&x)).iter().enumerate() {
        let comp = ndarray::Array1::from(fit.components[k].clone());
        pca_ok &= common::equal_up_to_sign(comp.view(), vec, 1e-6) && (fit.eigenvalues[k] - val).abs() <= 1e-6;
    }
    check(
        dtw_worst <= 1e-12 && gmm_worst <= 1e-8 && pca_ok,
        format!(
            "dtw {} pairs max err {dtw_worst:.1e}; gmm 100 models max err {gmm_worst:.1e}; pca {}",
            seqs.len() * seqs.len(),
            if pca_ok {
                "matches Jacobi up to sign"
            } else {
                "MISMATCH"
            }
        ),
    )
}

// Central finite differences on the tiny full model.
fn criterion_6() -> Verdict {
    let mut model = AssessModel::build(&common::tiny_model_config(5)).unwrap();
    let batch = common::random_examples(2, 6, 16, 9);
    let g = common::gradient_check(&mut model, &batch, 1e-4, 1e-4);
    check(
        g.fraction() >= 0.99,
        format!(
            "{}/{} parameters within 1e-4 ({:.2}%), worst {:.1e}",
            g.passed,
            g.checked,
            100.0 * g.fraction(),
            g.worst
        ),
    )
}

// E1 end to end with default choices, five runs.
fn criterion_7(root: Option<&Path>) -> Verdict {
    let Some(root) = root else {
        return Verdict::NotRun("UIPRMD_ROOT not set".into());
    };
    let dir = tempfile::tempdir().unwrap();
    let art = Artifacts::new(dir.path());
    let source = DatasetSource::Directory {
        root: root.to_path_buf(),
        schema: Schema::uiprmd(1),
    };
    let start = Instant::now();
    match pipeline(&art, &source, &PipelineConfig::default()) {
        Ok(out) => check(
            out.eval.mean_mad <= 0.05,
            format!(
                "validation MAD {:.5} over {} runs (limit 0.05), {:.0} s",
                out.eval.mean_mad,
                out.eval.runs.len(),
                start.elapsed().as_secs_f64()
            ),
        ),
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn synthetic_source(seed: u64) -> DatasetSource {
    DatasetSource::Synthetic {
        config: SynthConfig {
            frames: 32,
            dims: 15,
            subjects: 4,
            reps_per_subject: 6,
            ..SynthConfig::default()
        },
        seed: derive_seed(seed, 0),
    }
}

/// Small model and schedule used for the synthetic ablation.
fn synthetic_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        reduction: Reduction::Pca(4),
        metric: MetricKind::Gmm,
        gmm: GmmConfig {
            components: 2,
            ..GmmConfig::default()
        },
        model: ModelTemplate {
            part_channels: 4,
            merge_channels: 8,
            recurrent_units: vec![16, 8],
            pooled_units: 16,
            ..ModelTemplate::default()
        },
        train: TrainConfig {
            runs: 1,
            max_epochs: 150,
            patience: 20,
            ..TrainConfig::default()
        },
        seed,
        ..PipelineConfig::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// Ablation direction on synthetic data, median over three seeds.
fn criterion_8() -> Verdict {
    let variants = [Variant::Full, Variant::NoRecurrent, Variant::NoHierarchy];
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    for seed in 1..=3 {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        let cfg = synthetic_config(seed);
        let (ds, rec) = ingest_stage(&art, &synthetic_source(seed)).unwrap();
        let fp = rec.fingerprint.as_str();
        reduce_stage(&art, &ds, fp, &cfg).unwrap();
        metric_stage(&art, &ds, fp, &cfg).unwrap();
        score_stage(&art, &ds, fp, &cfg).unwrap();
        let all = examples(&ds, &load_scores(&art, &ds, fp, &cfg).unwrap()).unwrap();
        let part = partition(&ds, &cfg).unwrap();
        let pick = |idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
        let row = ablation_sweep(
            &ds.exercise_id,
            &pick(&part.train),
            &pick(&part.test),
            &cfg.model.config(&ds),
            &variants,
            &cfg.train,
            cfg.train_seed(),
        );
        for (k, m) in row.mean_mad.iter().enumerate() {
            match m {
                Some(v) => cols[k].push(*v),
                None => return Verdict::Fail(format!("seed {seed}: {} failed: {:?}", variants[k], row.errors[k])),
            }
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    let (full, norec, nohier) = (
        median(cols[0].clone()),
        median(cols[1].clone()),
        median(cols[2].clone()),
    );
    check(
        full <= norec && nohier >= full,
        format!(
            "median MAD full {full:.4} [{}], no_recurrent {norec:.4} [{}], no_hierarchy {nohier:.4} [{}]",
            fmt(&cols[0]),
            fmt(&cols[1]),
            fmt(&cols[2])
        ),
    )
}

// Every stage rerun with identical config and seed reproduces its
// artifacts byte for byte.
fn criterion_9() -> Verdict {
    let mut cfg = synthetic_config(4);
    cfg.train.runs = 2;
    cfg.train.max_epochs = 4;
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path());
        pipeline(&art, &synthetic_source(4), &cfg).unwrap();
        (art.hashes().unwrap(), dir)
    };
    let (a, _da) = run();
    let (b, _db) = run();
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let stages = [
        "dataset/",
        "reducer/",
        "metrics/",
        "gmm/",
        "scores/",
        "checkpoints/",
        "reports/",
    ];
    let covered = stages.iter().all(|s| a.keys().any(|k| k.starts_with(s)));
    check(
        a == b && covered,
        format!(
            "{} artifacts across {} stage directories, {} differ",
            a.len(),
            stages.len(),
            differing.len()
        ),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Verdict + 'a>;

fn main() {
    let root = uiprmd_root();
    let root = root.as_deref();
    let criteria: [(&str, Criterion); 9] = [
        (
            "separation ordering (AE(4), between-subject)",
            Box::new(move || criterion_1(root)),
        ),
        (
            "within-subject exceeds between-subject",
            Box::new(move || criterion_2(root)),
        ),
        (
            "raw Euclidean separation on E1 and E2",
            Box::new(move || criterion_3(root)),
        ),
        ("scoring, scaling and separation unit suite", Box::new(criterion_4)),
        ("oracle equivalence (DTW, GMM NLL, PCA)", Box::new(criterion_5)),
        ("finite-difference gradient check", Box::new(criterion_6)),
        ("E1 end-to-end validation MAD", Box::new(move || criterion_7(root))),
        ("ablation direction (synthetic, 3 seeds)", Box::new(criterion_8)),
        ("determinism of stage artifacts", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::NotRun(d) => ("NOT RUN", d),
        };
        println!("criterion {}: {tag}: {name}: {detail} [{secs:.1} s]", i + 1);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
