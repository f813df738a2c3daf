//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails. Numeric arguments select criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use calibrax::bench::{
    evaluate_metric, fit_method, gen_distorted_binary, gen_distorted_multiclass, gen_variance_misscaled,
    rerun_manifest, run_experiment_with_threads, BaseModelSpec, DataSource, ExperimentConfig, GeneratorKind,
    GeneratorSpec, Method, MethodSettings, Metric, PassthroughClassifier,
};
use calibrax::dist::{normal_cdf, normal_quantile};
use calibrax::metrics::binary_calibration_error_l1;
use calibrax::models::ProbabilisticModel;
use calibrax::nn::{Architecture, NeuralNet, Trace};
use calibrax::online::{l1_distance, l2_distance, l2_loss, mc_loss, simulate};
use calibrax::recalibrate::{fit_kde_recalibrator, BandwidthRule, Recalibrator};
use calibrax::scoring::{decompose_binned, expected_score, LossSpec};
use calibrax::{CategoricalDist, GaussianDist, PredictiveDistribution, DECILES};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> CategoricalDist {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    CategoricalDist::from_weights(&w).unwrap()
}

// 1 ------------------------------------------------------------------------

fn decomposition_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(2..6);
        let groups: Vec<CategoricalDist> = (0..rng.random_range(1..12)).map(|_| random_simplex(&mut rng, k)).collect();
        let mut forecasts = Vec::new();
        let mut outcomes = Vec::new();
        for g in &groups {
            for _ in 0..rng.random_range(1..60) {
                forecasts.push(g.clone());
                outcomes.push(rng.random_range(0..k));
            }
        }
        let r = decompose_binned(&forecasts, &outcomes).unwrap();
        // mean log loss computed directly
        let direct = forecasts
            .iter()
            .zip(&outcomes)
            .map(|(f, &y)| -f.prob(y).ln())
            .sum::<f64>()
            / forecasts.len() as f64;
        worst = worst
            .max((r.mean_loss - (r.calibration_term + r.refinement_term)).abs())
            .max((r.mean_loss - direct).abs());
    }
    verdict(worst <= 1e-9, format!("max |loss - (cal + ref)| = {worst:.2e} over 50 datasets"))
}

// 2 ------------------------------------------------------------------------

fn propriety() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gauss = |rng: &mut ChaCha8Rng| -> PredictiveDistribution {
        GaussianDist::new(rng.random_range(-2.0..2.0), rng.random_range(0.3..3.0)).unwrap().into()
    };
    let rules = [
        ("log", LossSpec::Log),
        ("crps", LossSpec::Crps),
        ("pinball_avg", LossSpec::PinballAvg { levels: DECILES.to_vec() }),
        ("brier", LossSpec::Brier),
    ];
    let mut worst_z = f64::INFINITY;
    let mut failures = Vec::new();
    for (name, loss) in &rules {
        for _ in 0..100 {
            let (f, g) = if matches!(loss, LossSpec::Brier) {
                let k = rng.random_range(2..6);
                (random_simplex(&mut rng, k).into(), random_simplex(&mut rng, k).into())
            } else {
                (gauss(&mut rng), gauss(&mut rng))
            };
            // common random numbers: both scores see the same outcome draws
            let seed: u64 = rng.random();
            let sf = expected_score(loss, &f, &g, 2000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let sg = expected_score(loss, &g, &g, 2000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let se = (sf.std_error.powi(2) + sg.std_error.powi(2)).sqrt();
            let z = (sf.mean - sg.mean) / se.max(1e-300);
            worst_z = worst_z.min(z);
            if sf.mean < sg.mean - 3.0 * se {
                failures.push(*name);
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!("400 pairs, {} violations beyond 3 SE, min gap z = {worst_z:.2}", failures.len()),
    )
}

// 3 ------------------------------------------------------------------------

fn probe(net: &NeuralNet, x: &[f64], c: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(c).map(|(o, c)| c * o + 0.5 * o * o).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        // alternate plain stacks and dense skips; every net has PReLU hidden
        // layers and a linear output layer
        let depth = 1 + i % 3;
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..8)).collect();
        let arch = Architecture::new(rng.random_range(1..6), hidden, rng.random_range(1..4), i % 2 == 0).unwrap();
        let params = (0..arch.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let net = NeuralNet::from_params(&arch, params).unwrap();
        let x: Vec<f64> = (0..arch.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..arch.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut trace = Trace::default();
        net.forward_trace(&x, &mut trace).unwrap();
        let dout: Vec<f64> = trace.output().iter().zip(&c).map(|(o, c)| c + o).collect();
        let mut analytic = vec![0.0; net.num_params()];
        let mut dinput = vec![0.0; arch.input_dim];
        net.backward_into(&trace, &dout, &mut analytic, Some(&mut dinput)).unwrap();
        let numeric: Vec<f64> = (0..net.num_params())
            .map(|k| {
                let mut p = net.clone();
                p.params_mut()[k] += h;
                let mut m = net.clone();
                m.params_mut()[k] -= h;
                (probe(&p, &x, &c) - probe(&m, &x, &c)) / (2.0 * h)
            })
            .collect();
        let num_in: Vec<f64> = (0..arch.input_dim)
            .map(|j| {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                (probe(&net, &xp, &c) - probe(&net, &xm, &c)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_err(&analytic, &numeric)).max(rel_err(&dinput, &num_in));
    }
    verdict(worst <= 1e-5, format!("max relative error {worst:.2e} over 20 networks"))
}

// 4 ------------------------------------------------------------------------

fn kde_trend() -> Verdict {
    let sizes = [500usize, 5_000, 50_000];
    let mut medians = Vec::new();
    let mut sup = Vec::new();
    for &t in &sizes {
        let mut errs = Vec::new();
        for seed in 0..5u64 {
            let train = gen_distorted_binary(t, 1000 + seed).unwrap();
            let test = gen_distorted_binary(400_000, 2000 + seed).unwrap();
            let scores: Vec<f64> = train.x.iter().map(|r| r[0]).collect();
            let labels: Vec<bool> = train.y.iter().map(|&y| y == 1.0).collect();
            let r = fit_kde_recalibrator(&scores, &labels, BandwidthRule::Silverman).unwrap();
            let probs: Vec<f64> = test.x.iter().map(|x| r.apply(x[0]).unwrap()).collect();
            let tl: Vec<bool> = test.y.iter().map(|&y| y == 1.0).collect();
            errs.push(binary_calibration_error_l1(&probs, &tl, 20).unwrap());
            if t == 50_000 {
                let worst = (0..=900)
                    .map(|i| 0.05 + 0.9 * i as f64 / 900.0)
                    .map(|s| (r.apply(s).unwrap() - s.sqrt()).abs())
                    .fold(0.0, f64::max);
                sup.push(worst);
            }
        }
        medians.push(median(errs));
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let max_sup = sup.iter().copied().fold(0.0, f64::max);
    verdict(
        decreasing && max_sup <= 0.05,
        format!(
            "median l1 cal error {:.4} > {:.4} > {:.4}; sup-norm vs sqrt(s) at T=50000 max {max_sup:.4} over 5 seeds",
            medians[0], medians[1], medians[2]
        ),
    )
}

// 5, 6 ---------------------------------------------------------------------

struct QuantileRun {
    chk_base: f64,
    chk_recal: f64,
    cal_base: f64,
    cal_recal: f64,
}

fn quantile_run(n: usize, shrink: f64, seed: u64) -> QuantileRun {
    let fit = gen_variance_misscaled(n, 10 + seed, shrink).unwrap();
    let test = gen_variance_misscaled(n, 100 + seed, shrink).unwrap();
    let fd: Vec<PredictiveDistribution> = fit.forecasts.iter().map(|&g| g.into()).collect();
    let r = fit_method(Method::Quantile, &fd, &fit.data.y, &MethodSettings::default(), seed).unwrap();
    let base: Vec<PredictiveDistribution> = test.forecasts.iter().map(|&g| g.into()).collect();
    let recal: Vec<PredictiveDistribution> = base.iter().map(|d| r.recalibrate(d).unwrap()).collect();
    let y = &test.data.y;
    QuantileRun {
        chk_base: evaluate_metric(Metric::Chk, &base, y).unwrap(),
        chk_recal: evaluate_metric(Metric::Chk, &recal, y).unwrap(),
        cal_base: evaluate_metric(Metric::Calibration, &base, y).unwrap(),
        cal_recal: evaluate_metric(Metric::Calibration, &recal, y).unwrap(),
    }
}

fn misscaled_runs() -> &'static [QuantileRun] {
    static RUNS: OnceLock<Vec<QuantileRun>> = OnceLock::new();
    RUNS.get_or_init(|| (0..5).map(|s| quantile_run(20_000, 0.5, s)).collect())
}

fn lemma2_direction() -> Verdict {
    let runs = misscaled_runs();
    let ratio = median(runs.iter().map(|r| r.chk_recal / r.chk_base).collect());
    verdict(
        ratio <= 1.02,
        format!(
            "median CHK ratio recalibrated/base {ratio:.4} (base CHK median {:.4})",
            median(runs.iter().map(|r| r.chk_base).collect())
        ),
    )
}

fn optimal_calibration() -> Verdict {
    let runs = misscaled_runs();
    // expected base error: the level-p bound covers Φ(0.5 z_p) of the mass
    let oracle: f64 = DECILES
        .iter()
        .map(|&p| (p - normal_cdf(0.5 * normal_quantile(p))).powi(2))
        .sum();
    let base = median(runs.iter().map(|r| r.cal_base).collect());
    let recal = median(runs.iter().map(|r| r.cal_recal).collect());
    verdict(
        recal <= 0.01 && base >= 0.05 && oracle >= 0.05 && (base - oracle).abs() <= 0.01,
        format!("median calibration error recalibrated {recal:.5}, base {base:.4} (oracle {oracle:.4})"),
    )
}

// 7 ------------------------------------------------------------------------

fn identity_preservation() -> Verdict {
    let r = quantile_run(50_000, 1.0, 0);
    let ratio = r.chk_recal / r.chk_base;
    verdict(
        ratio <= 1.02 && r.cal_recal <= 0.005,
        format!(
            "CHK ratio {ratio:.4}, calibration error recalibrated {:.5} (base {:.5})",
            r.cal_recal, r.cal_base
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn classification_ordering() -> Verdict {
    let base_model = PassthroughClassifier { features: 3 };
    let (mut cb, mut cp, mut cs, mut dacc) = (vec![], vec![], vec![], vec![]);
    for seed in 0..5u64 {
        let fit = gen_distorted_multiclass(20_000, 2 * seed, 3, 3.0).unwrap();
        let test = gen_distorted_multiclass(20_000, 2 * seed + 1, 3, 3.0).unwrap();
        let f: Vec<_> = fit.x.iter().map(|x| base_model.predict_dist(x).unwrap()).collect();
        let ft: Vec<_> = test.x.iter().map(|x| base_model.predict_dist(x).unwrap()).collect();
        let mut cal = vec![];
        let mut acc = vec![];
        for m in [Method::Uncalibrated, Method::MulticlassPlatt, Method::Simplex] {
            let r = fit_method(m, &f, &fit.y, &MethodSettings::default(), seed).unwrap();
            let d: Vec<_> = ft.iter().map(|x| r.recalibrate(x).unwrap()).collect();
            cal.push(evaluate_metric(Metric::Calibration, &d, &test.y).unwrap());
            acc.push(evaluate_metric(Metric::Accuracy, &d, &test.y).unwrap());
        }
        cb.push(cal[0]);
        cp.push(cal[1]);
        cs.push(cal[2]);
        dacc.push(acc.iter().map(|a| (a - acc[0]).abs()).fold(0.0, f64::max));
    }
    let (b, p, s, d) = (median(cb), median(cp), median(cs), median(dacc));
    verdict(
        b > p && p > s && d < 0.01,
        format!("median calibration base {b:.4} > platt {p:.4} > simplex {s:.5}; accuracy shift {d:.4}"),
    )
}

// 9 ------------------------------------------------------------------------

fn online_suite() -> Verdict {
    let (n, m, t) = (32usize, 32usize, 50_000usize);
    let mut c1s = Vec::new();
    let mut every = true;
    let mut worst_ext: f64 = f64::NEG_INFINITY;
    for seed in 0..5u64 {
        let ds = gen_distorted_binary(t, 500 + seed).unwrap();
        let stream = ds.x.iter().zip(&ds.y).map(|(x, &y)| (x[0], y == 1.0));
        let (ledger, _) = simulate(stream, n, m, seed).unwrap();
        let c1 = ledger.calibration_error(l1_distance).unwrap();
        let c2 = ledger.calibration_error(l2_distance).unwrap();
        let bound = 2.0 * t as f64 * c1;
        let b = ledger.internal_regret(l2_loss) <= bound && ledger.internal_regret(mc_loss) <= bound;
        let c = c1 <= ((n + 1) as f64).sqrt() * c2.sqrt();
        let merged = ledger.merged_calibration_check(l1_distance).unwrap();
        let d = merged.merged <= merged.weighted_sum + 1e-12;
        let ext = ledger.external_regret(mc_loss).unwrap();
        worst_ext = worst_ext.max(ext);
        let e = ext <= 3.0 / n as f64 + 0.02;
        every &= b && c && d && e;
        c1s.push(c1);
    }
    let c1 = median(c1s);
    verdict(
        c1 <= 0.05 && every,
        format!("median C_l1 {c1:.4}; regret, norm and merge bounds hold on every run: {every}; worst external mc regret {worst_ext:.4}"),
    )
}

// 10 -----------------------------------------------------------------------

fn determinism() -> Verdict {
    let quick = {
        let mut s = MethodSettings::default();
        s.quantile.train.epochs = 4;
        s.simplex.train.epochs = 4;
        s
    };
    let mk = |name: &str, kind: GeneratorKind, n: usize, base: Option<BaseModelSpec>, methods: Vec<Method>| {
        let mut c = ExperimentConfig::new(name, DataSource::Generator(GeneratorSpec::new(kind, n, 3)));
        c.base = base;
        c.methods = methods;
        c.seeds = vec![0, 1];
        c.settings = quick.clone();
        c
    };
    let configs = [
        mk(
            "hetero",
            GeneratorKind::Heteroscedastic,
            2000,
            Some(BaseModelSpec::BayesianRidge { degree: 3 }),
            vec![Method::Uncalibrated, Method::Isotonic, Method::Quantile],
        ),
        mk("misscaled", GeneratorKind::VarianceMisscaled, 2000, None, vec![]),
        mk("binary", GeneratorKind::DistortedBinary, 4000, None, vec![]),
        mk("multiclass", GeneratorKind::DistortedMulticlass, 4000, None, vec![]),
    ];
    let root = tempfile::tempdir().unwrap();
    let mut identical = 0;
    for (i, cfg) in configs.iter().enumerate() {
        let a = root.path().join(format!("{i}a"));
        let b = root.path().join(format!("{i}b"));
        let c = root.path().join(format!("{i}c"));
        run_experiment_with_threads(cfg, &a, 1).unwrap();
        rerun_manifest(&a.join("manifest.json"), &b).unwrap();
        // concurrent seeds must not change the bytes either
        run_experiment_with_threads(cfg, &c, 2).unwrap();
        let ra = std::fs::read(a.join("report.csv")).unwrap();
        if ra == std::fs::read(b.join("report.csv")).unwrap() && ra == std::fs::read(c.join("report.csv")).unwrap() {
            identical += 1;
        }
    }
    // the online pipeline writes a trace that must repeat as well
    let trace = |dir: &std::path::Path| {
        let ds = gen_distorted_binary(5000, 9).unwrap();
        let stream = ds.x.iter().zip(&ds.y).map(|(x, &y)| (x[0], y == 1.0));
        let (ledger, _) = simulate(stream, 16, 8, 4).unwrap();
        ledger.write_trace_csv(&dir.join("trace.csv")).unwrap();
        std::fs::read(dir.join("trace.csv")).unwrap()
    };
    let (t1, t2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let online_same = trace(t1.path()) == trace(t2.path());
    verdict(
        identical == configs.len() && online_same,
        format!(
            "{identical}/{} report CSVs byte-identical across manifest rerun and 2 threads; online trace identical: {online_same}",
            configs.len()
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "decomposition identity", decomposition_identity),
        (2, "propriety", propriety),
        (3, "gradient correctness", gradients),
        (4, "kde recalibration", kde_trend),
        (5, "no worse than the base model", lemma2_direction),
        (6, "asymptotically optimal calibration", optimal_calibration),
        (7, "identity preservation", identity_preservation),
        (8, "classification ordering", classification_ordering),
        (9, "online suite", online_suite),
        (10, "determinism", determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {id} ({name}): {} | {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
