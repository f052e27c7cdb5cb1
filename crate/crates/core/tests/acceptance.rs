//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and runtime and prints a single `criterion N [PASS|FAIL]` line.

use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use byzsim::aggregators::{cwmed, cwtm, geometric_median, AggregatorKind, AggregatorSpec};
use byzsim::attacks::{AttackKind, AttackSpec};
use byzsim::context::default_byzantine_set;
use byzsim::engine::{run_training, TrainConfig, TrainingTrace, WorkerOrder};
use byzsim::harness::robustness::Adversary;
use byzsim::harness::{
    bench_aggregators, deviation_probe, final_losses, lr_sweep, mean_se, robustness_monte_carlo, variance_probe,
    BenchMethod, RobustnessReport, RobustnessScenario,
};
use byzsim::meta::{MetaKind, MetaSpec};
use byzsim::problems::{ProblemInstance, QuadraticParams, SoftmaxParams};
use byzsim::{seeded_rng, EstimatorConfig, WorkerVector};

// Criteria run one at a time so that timings and runtimes are not shared.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line outside the test harness's capture.
fn verdict(n: u32, title: &str, pass: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "\ncriterion {n} [{tag}] {title}: {detail} ({:.1} s of {:.0} s)\n",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn quadratic(d: usize, m: usize, sigma: f64, seed: u64, delta: f64) -> Arc<ProblemInstance> {
    let byz = default_byzantine_set(delta, m);
    Arc::new(ProblemInstance::generate_quadratic(&QuadraticParams::new(d, m, sigma, seed), &byz).unwrap())
}

fn train(problem: Arc<ProblemInstance>, delta: f64, attack: AttackKind, aggregation: MetaSpec, rounds: usize) -> TrainConfig {
    let mut c = TrainConfig::new(
        problem,
        delta,
        AttackSpec::new(attack),
        aggregation,
        EstimatorConfig::mu2(),
        0.0,
        rounds,
        0,
    );
    c.eta = c.theory_eta();
    c
}

fn average(delta: f64) -> MetaSpec {
    MetaSpec::bare(AggregatorSpec::new(AggregatorKind::Average, delta))
}

fn cwtm_ctma(delta: f64) -> MetaSpec {
    MetaSpec::new(MetaKind::Ctma, AggregatorSpec::new(AggregatorKind::Cwtm, delta))
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn brute_trimmed_mean(values: &[f64], k: usize) -> f64 {
    let mut rest = values.to_vec();
    for _ in 0..k {
        let (lo, _) = rest.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        rest.remove(lo);
        let (hi, _) = rest.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        rest.remove(hi);
    }
    rest.sort_by(f64::total_cmp);
    if rest.first() == rest.last() {
        return rest[0];
    }
    rest.iter().sum::<f64>() / rest.len() as f64
}

fn sorted_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

#[test]
fn criterion_1_aggregator_oracles() {
    let _g = serial();
    let budget = Duration::from_secs(5);
    let start = Instant::now();
    let mut rng = seeded_rng(1, &[]);
    let (mut cwtm_bad, mut cwmed_bad, mut gm_err) = (0usize, 0usize, 0.0f64);
    for instance in 0..1000 {
        let m = 4 + rng.index(30);
        let delta = 0.499 * rng.uniform();
        // Every third instance is coarsely rounded to exercise ties.
        let values: Vec<f64> = (0..m)
            .map(|_| {
                let x = 10.0 * rng.standard_normal();
                if instance % 3 == 0 {
                    x.round()
                } else {
                    x
                }
            })
            .collect();
        let vectors: Vec<WorkerVector> = values.iter().map(|&v| WorkerVector::from([v])).collect();
        let k = (delta * m as f64 + 1e-9).floor() as usize;
        if cwtm(&vectors, delta).unwrap()[0] != brute_trimmed_mean(&values, k) {
            cwtm_bad += 1;
        }
        let median = sorted_median(&values);
        if cwmed(&vectors).unwrap()[0] != median {
            cwmed_bad += 1;
        }
        let gm = geometric_median(&vectors, 1e-8, 100_000).unwrap()[0];
        gm_err = gm_err.max((gm - median).abs());
    }
    let elapsed = start.elapsed();
    let pass = cwtm_bad == 0 && cwmed_bad == 0 && gm_err <= 1e-6 && elapsed < budget;
    let detail = format!("CWTM mismatches {cwtm_bad}, CWMed mismatches {cwmed_bad}, max |GM - median| {gm_err:.2e}");
    verdict(1, "aggregator oracle equivalence", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}

const BASES: [AggregatorKind; 4] = [
    AggregatorKind::Cwtm,
    AggregatorKind::Cwmed,
    AggregatorKind::Krum,
    AggregatorKind::GeometricMedian,
];
const ADVERSARIES: [Adversary; 4] = [Adversary::SignFlip, Adversary::Little, Adversary::Empire, Adversary::WorstRadius];

fn robustness_grid(meta: MetaKind) -> Vec<RobustnessReport> {
    let mut reports = Vec::new();
    for delta in [0.1, 0.2, 0.3] {
        for base in BASES {
            let spec = MetaSpec::new(meta, AggregatorSpec::new(base, delta));
            for adversary in ADVERSARIES {
                let scenario = RobustnessScenario::new(20, delta, 10, adversary, 10_000, 7);
                reports.push(robustness_monte_carlo(&scenario, &spec).unwrap());
            }
        }
    }
    reports
}

fn robustness_summary(reports: &[RobustnessReport]) -> (bool, String) {
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| r.pass != Some(true) || !r.rho_check)
        .map(|r| format!("{} {} delta={} ratio={:.4} bound={:?}", r.aggregation, r.adversary.name(), r.delta, r.ratio, r.bound))
        .collect();
    let worst = reports
        .iter()
        .filter_map(|r| r.bound.map(|b| (r.ratio + 3.0 * r.ratio_se) / b))
        .fold(0.0, f64::max);
    let detail = format!(
        "{} of {} runs violate; worst (ratio + 3 SE) / bound = {worst:.3}{}",
        failed.len(),
        reports.len(),
        if failed.is_empty() { String::new() } else { format!("; {}", failed.join(", ")) }
    );
    (failed.is_empty(), detail)
}

#[test]
fn criterion_2_ctma_bound() {
    let _g = serial();
    let budget = Duration::from_secs(120);
    let start = Instant::now();
    let reports = robustness_grid(MetaKind::Ctma);
    let elapsed = start.elapsed();
    let (ok, detail) = robustness_summary(&reports);
    let pass = ok && elapsed < budget;
    verdict(2, "CTMA bound 16 delta (1 + c_delta)", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_3_table_bounds() {
    let _g = serial();
    let budget = Duration::from_secs(120);
    let start = Instant::now();
    let reports = robustness_grid(MetaKind::None);
    let elapsed = start.elapsed();
    let (ok, detail) = robustness_summary(&reports);
    let pass = ok && elapsed < budget;
    verdict(3, "bare aggregator c_delta bounds", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_4_variance_decay() {
    let _g = serial();
    let budget = Duration::from_secs(180);
    let start = Instant::now();
    let p = quadratic(20, 8, 1.0, 1, 0.0);
    assert_eq!(p.sigma_tilde_sq(), 2.0);
    let mu2 = variance_probe(&train(p.clone(), 0.0, AttackKind::None, average(0.0), 512), &seeds(32)).unwrap();
    let mut momentum_cfg = train(p, 0.0, AttackKind::None, average(0.0), 512);
    momentum_cfg.estimator = EstimatorConfig::momentum(0.9);
    let momentum = variance_probe(&momentum_cfg, &seeds(32)).unwrap();
    let elapsed = start.elapsed();
    let (wv, cv) = (mu2.worker_violations().len(), mu2.collective_violations().len());
    let slope = mu2.slope_from(1);
    let momentum_slope = momentum.slope_from(50);
    let pass = wv == 0 && cv == 0 && (slope + 1.0).abs() <= 0.2 && momentum_slope > -0.5 && elapsed < budget;
    let detail = format!(
        "per-worker violations {wv}, collective violations {cv}, max t E||eps||^2 = {:.3}, slope {slope:.3}, momentum slope (t >= 50) {momentum_slope:.3}",
        mu2.max_scaled_error()
    );
    verdict(4, "variance decay", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_5_aggregated_deviation() {
    let _g = serial();
    let budget = Duration::from_secs(180);
    let start = Instant::now();
    let p = quadratic(20, 10, 1.0, 1, 0.2);
    let mut parts = Vec::new();
    let mut ok = true;
    for meta in [MetaKind::None, MetaKind::Ctma] {
        let spec = MetaSpec::new(meta, AggregatorSpec::new(AggregatorKind::Cwtm, 0.2));
        let r = deviation_probe(&train(p.clone(), 0.2, AttackKind::Empire, spec, 200), &seeds(32)).unwrap();
        ok &= r.violations().is_empty();
        parts.push(format!(
            "{}: c_delta {:.4}, violations {}, min bound/(mean + 3 SE) {:.2}",
            r.aggregation,
            r.c_delta,
            r.violations().len(),
            r.min_headroom()
        ));
    }
    let elapsed = start.elapsed();
    let pass = ok && elapsed < budget;
    let detail = parts.join("; ");
    verdict(5, "aggregated deviation under Empire", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}

fn mean_final(config: &TrainConfig, n: u64) -> (f64, f64) {
    mean_se(&final_losses(config, &seeds(n)).unwrap())
}

#[test]
fn criterion_6_convergence_and_contrast() {
    let _g = serial();
    let budget = Duration::from_secs(300);
    let start = Instant::now();

    // Convergence at T = 400.
    let p = quadratic(20, 8, 1.0, 1, 0.0);
    let c400 = train(p, 0.0, AttackKind::None, average(0.0), 400);
    let delta_1 = run_training(&c400).unwrap().rows[0].excess_loss;
    let (delta_t, _) = mean_final(&c400, 16);
    let converged = delta_t <= delta_1 / 10.0;

    // Noise-driven part of Delta_T at T = 400 and T = 1600 on a large-sigma
    // instance: mean noisy Delta_T minus the deterministic sigma = 0 run.
    let sigma_term = |rounds: usize| {
        let noisy = train(quadratic(20, 8, 10.0, 1, 0.0), 0.0, AttackKind::None, average(0.0), rounds);
        let clean = train(quadratic(20, 8, 0.0, 1, 0.0), 0.0, AttackKind::None, average(0.0), rounds);
        let (noisy_mean, noisy_se) = mean_final(&noisy, 32);
        let clean_final = run_training(&clean).unwrap().final_excess_loss().unwrap();
        (noisy_mean - clean_final, noisy_se, clean_final)
    };
    let (s400, se400, clean400) = sigma_term(400);
    let (s1600, se1600, _) = sigma_term(1600);
    let ratio = s1600 / s400;
    let rate_ok = (0.35..=0.75).contains(&ratio);

    // Robust aggregation against averaging under sign flipping. The
    // Byzantine workers' own data sit 2 units away along e_2.
    let byz = default_byzantine_set(0.25, 8);
    let mut params = QuadraticParams::new(20, 8, 1.0, 3);
    params.byzantine_shift = 2.0;
    let attacked = Arc::new(ProblemInstance::generate_quadratic(&params, &byz).unwrap());
    let (avg, _) = mean_final(&train(attacked.clone(), 0.25, AttackKind::SignFlip, average(0.25), 400), 16);
    let (robust, _) = mean_final(&train(attacked, 0.25, AttackKind::SignFlip, cwtm_ctma(0.25), 400), 16);
    let contrast = avg / robust;
    let contrast_ok = contrast >= 10.0;

    let elapsed = start.elapsed();
    let pass = converged && rate_ok && contrast_ok && elapsed < budget;
    let detail = format!(
        "Delta_1 {delta_1:.4}, mean Delta_400 {delta_t:.3e} ({}); sigma-driven Delta_T {s400:.3e}+-{se400:.1e} -> {s1600:.3e}+-{se1600:.1e} \
         (sigma=0 baseline {clean400:.1e}), ratio {ratio:.3} vs [0.35, 0.75] ({}); Average / CWTM+CTMA = {contrast:.1} ({})",
        if converged { "ok" } else { "too slow" },
        if rate_ok { "ok" } else { "outside" },
        if contrast_ok { "ok" } else { "below 10" },
    );
    verdict(6, "convergence and robust-vs-average contrast", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}

fn sweep_widths(template: &TrainConfig, grid: &[f64], n_seeds: u64) -> (f64, f64) {
    let estimators = [EstimatorConfig::mu2(), EstimatorConfig::momentum(0.9)];
    let r = lr_sweep(template, &estimators, grid, &seeds(n_seeds)).unwrap();
    (
        r.width(&estimators[0].label()).unwrap().decades,
        r.width(&estimators[1].label()).unwrap().decades,
    )
}

#[test]
fn criterion_7_learning_rate_range() {
    let _g = serial();
    let budget = Duration::from_secs(600);
    let start = Instant::now();
    let grid: Vec<f64> = (0..13).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect();
    let m = 8;
    let byz = default_byzantine_set(0.25, m);
    let mut soft = SoftmaxParams::new(10, m, 3);
    soft.ridge = 0.1;
    let softmax = Arc::new(ProblemInstance::generate_softmax(&soft, &byz).unwrap());
    let cases = [
        ("quadratic/sign_flip", quadratic(20, m, 1.0, 3, 0.25), AttackKind::SignFlip),
        ("softmax/sign_flip", softmax.clone(), AttackKind::SignFlip),
        ("softmax/label_flip", softmax, AttackKind::LabelFlip),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, problem, attack) in cases {
        let template = train(problem, 0.25, attack, cwtm_ctma(0.25), 200);
        let (mu2, momentum) = sweep_widths(&template, &grid, 16);
        ok &= mu2 >= momentum;
        parts.push(format!("{name}: mu2 {mu2:.1} vs momentum {momentum:.1} decades"));
    }
    let elapsed = start.elapsed();
    let pass = ok && elapsed < budget;
    let detail = parts.join("; ");
    verdict(7, "learning-rate range", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_8_cost_scaling() {
    let _g = serial();
    let budget = Duration::from_secs(120);
    let start = Instant::now();
    let r = bench_aggregators(
        &[BenchMethod::CtmaExcludingBase, BenchMethod::Nnm, BenchMethod::Bucketing],
        &[8, 16, 32, 64, 128],
        10_000,
        15,
        0,
    )
    .unwrap();
    let ctma = r.exponent(BenchMethod::CtmaExcludingBase).unwrap();
    let nnm = r.exponent(BenchMethod::Nnm).unwrap();
    let halved = r
        .rows
        .iter()
        .filter(|row| row.method == BenchMethod::Bucketing)
        .all(|row| row.output_count == row.m.div_ceil(2));
    let elapsed = start.elapsed();
    let pass = (0.8..=1.4).contains(&ctma) && (1.6..=2.4).contains(&nnm) && halved && elapsed < budget;
    let detail = format!("CTMA-excluding-base exponent {ctma:.3} in [0.8, 1.4], NNM exponent {nnm:.3} in [1.6, 2.4], bucketing halves inputs: {halved}");
    verdict(8, "cost scaling", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}

fn bits(trace: &TrainingTrace) -> Vec<Vec<u64>> {
    trace
        .rows
        .iter()
        .map(|r| {
            let mut v: Vec<u64> = r.w.iter().chain(r.x.iter()).chain(r.d_hat.iter()).map(|x| x.to_bits()).collect();
            v.extend([r.excess_loss, r.dev_sq, r.mean_eps_sq, r.collective_eps_sq].map(f64::to_bits));
            v.extend(r.eps_sq.iter().map(|x| x.to_bits()));
            v
        })
        .collect()
}

fn cli_outputs(config: &str, command: &str, files: &[&str]) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("experiment.toml");
    std::fs::write(&path, config).unwrap();
    let out = dir.path().join("out");
    let code = byzsim::cli::run(["byzsim", command, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect()
}

const DETERMINISM_TRAIN: &str = r#"
seed = 11
[problem]
kind = "softmax"
features = 4
workers = 8
samples_per_worker = 50
seed = 2
[byzantine]
delta = 0.25
[attack]
kind = "label_flip"
[aggregation]
rule = "geometric_median"
meta = "bucketing"
[training]
rounds = 60
eta = 0.05
"#;

const DETERMINISM_ROBUSTNESS: &str = r#"
seed = 5
[problem]
kind = "hetero_quadratic"
dimension = 2
workers = 2
noise_sigma = 0.0
[robustness]
m = 12
d = 6
replications = 1000
rho_draws = 5000
deltas = [0.25]
adversaries = ["little", "worst_radius"]
rules = ["cwtm", "krum"]
metas = ["ctma", "nnm_then_ctma"]
"#;

const DETERMINISM_SWEEP: &str = r#"
seed = 0
[problem]
kind = "hetero_quadratic"
dimension = 5
workers = 8
noise_sigma = 1.0
[byzantine]
delta = 0.25
[attack]
kind = "empire"
[aggregation]
rule = "cwmed"
meta = "ctma"
[training]
rounds = 50
[sweep]
eta_grid = [0.001, 0.01, 0.1, 1.0]
seeds = [3, 4, 5]
"#;

#[test]
fn criterion_9_determinism() {
    let _g = serial();
    let budget = Duration::from_secs(120);
    let start = Instant::now();
    let mut parts = Vec::new();

    let runs = [
        (DETERMINISM_TRAIN, "train", vec!["trace.csv", "train.meta.toml"]),
        (DETERMINISM_ROBUSTNESS, "robustness", vec!["robustness.csv", "robustness.meta.toml"]),
        (DETERMINISM_SWEEP, "sweep", vec!["sweep.csv", "sweep_widths.csv", "sweep.meta.toml"]),
    ];
    let mut csv_ok = true;
    for (config, command, files) in &runs {
        let same = cli_outputs(config, command, files) == cli_outputs(config, command, files);
        csv_ok &= same;
        parts.push(format!("{command} outputs identical: {same}"));
    }

    let mut order_ok = true;
    let p = quadratic(6, 10, 1.0, 4, 0.2);
    let mut soft = SoftmaxParams::new(3, 8, 9);
    soft.samples_per_worker = 40;
    let softmax = Arc::new(ProblemInstance::generate_softmax(&soft, &default_byzantine_set(0.25, 8)).unwrap());
    let configs = [
        train(p.clone(), 0.2, AttackKind::Little, cwtm_ctma(0.2), 80),
        train(p, 0.2, AttackKind::Empire, MetaSpec::new(MetaKind::Bucketing, AggregatorSpec::new(AggregatorKind::Krum, 0.2)), 80),
        train(softmax, 0.25, AttackKind::LabelFlip, cwtm_ctma(0.25), 40),
    ];
    for forward in configs {
        let mut reverse = forward.clone();
        reverse.worker_order = WorkerOrder::Reverse;
        let a = bits(&run_training(&forward).unwrap());
        let b = bits(&run_training(&reverse).unwrap());
        order_ok &= a == b;
    }
    parts.push(format!("reversed worker order bit-identical: {order_ok}"));

    let elapsed = start.elapsed();
    let pass = csv_ok && order_ok && elapsed < budget;
    let detail = parts.join("; ");
    verdict(9, "determinism", pass, elapsed, budget, &detail);
    assert!(pass, "{detail}");
}
