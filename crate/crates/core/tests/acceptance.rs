//! Acceptance suite, one check per criterion, run in order.
//!
//! Prints one `criterion N PASS|FAIL` line each and exits non-zero when any
//! criterion fails. Set `ACCEPTANCE_ONLY=4,5` to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use cgrad::aggregate::{coord_median_of_means, geometric_median, mean, median3, winsorized_sum, SuppressionFixture};
use cgrad::cli::{self, RunConfigFile};
use cgrad::data::NoisyDataset;
use cgrad::harness::{
    accuracy_by_difficulty, anti_adversarial, cross_generalization, derive_seed, desk, difficulty_score,
    noise_sweep, train_run, AntiAdversarialConfig, MetricsRecord, NoiseProtocol, XGenSizes,
};
use cgrad::nn::{Activation, Batch, Mlp, ParamVector};
use cgrad::OptimizerKind;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs shared between criteria, computed on first use.
#[derive(Default)]
struct Shared {
    clean: Option<NoisyDataset>,
    suppression: BTreeMap<&'static str, Vec<MetricsRecord>>,
}

impl Shared {
    fn clean(&mut self) -> &NoisyDataset {
        self.clean
            .get_or_insert_with(|| desk::clean_dataset().expect("canonical dataset"))
    }

    /// The p = 0.5 run of one optimizer under the suppression settings.
    fn suppression_run(&mut self, kind: OptimizerKind) -> &[MetricsRecord] {
        if !self.suppression.contains_key(kind.name()) {
            let noisy = desk::noisy_dataset(self.clean(), 0.5).unwrap();
            let run = train_run(
                &noisy,
                &desk::net(),
                &desk::suppression_optimizer(kind),
                desk::EPOCHS,
                desk::RUN_SEED,
            )
            .unwrap();
            self.suppression.insert(kind.name(), run.metrics);
        }
        &self.suppression[kind.name()]
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> ParamVector {
    ParamVector::from_vec((0..d).map(|_| rng.sample(StandardNormal)).collect())
}

fn within(limit: Duration, elapsed: Duration) -> String {
    format!("{:.2}s of {}s allowed", elapsed.as_secs_f64(), limit.as_secs())
}

fn c1_kernel_oracles(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut sort_dev, mut identity_dev) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let t: Vec<ParamVector> = (0..3).map(|_| normal_vec(&mut rng, 8)).collect();
        let m = median3(&t[0], &t[1], &t[2]).unwrap();
        for j in 0..8 {
            let mut v = [t[0][j], t[1][j], t[2][j]];
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sort_dev = sort_dev.max((m[j] - v[1]).abs());
            identity_dev = identity_dev.max((m[j] - (t[0][j] + t[1][j] + t[2][j] - v[0] - v[2])).abs());
        }
    }
    let batch: Vec<ParamVector> = (0..17).map(|_| normal_vec(&mut rng, 64)).collect();
    let mut plain = vec![0.0f64; 64];
    for g in &batch {
        for (s, v) in plain.iter_mut().zip(g.iter()) {
            *s += v;
        }
    }
    let w0 = winsorized_sum(&batch, 0).unwrap();
    let s0_bits = w0.iter().zip(&plain).all(|(a, b)| a.to_bits() == b.to_bits());
    let mut w3_dev = 0.0f64;
    for _ in 0..1000 {
        let t: Vec<ParamVector> = (0..3).map(|_| normal_vec(&mut rng, 8)).collect();
        let w = winsorized_sum(&t, 1).unwrap();
        for j in 0..8 {
            let mut v = [t[0][j], t[1][j], t[2][j]];
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w3_dev = w3_dev.max((w[j] - 3.0 * v[1]).abs());
        }
    }
    let pts: Vec<ParamVector> = [1.0, 2.0, 100.0].iter().map(|&x| ParamVector::from_vec(vec![x])).collect();
    let gm = geometric_median(&pts, 1e-8, 10_000).unwrap().point[0];
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(10);
    outcome(
        sort_dev <= 1e-12 && identity_dev <= 1e-12 && s0_bits && w3_dev <= 1e-12 && (gm - 2.0).abs() <= 1e-8 && elapsed < limit,
        format!(
            "median vs sort {sort_dev:.1e}, vs sum-min-max {identity_dev:.1e}; s=0 bit-equal {s0_bits}; \
             B=3 s=1 vs 3·median {w3_dev:.1e}; gm{{1,2,100}} = {gm}; {}",
            within(limit, elapsed)
        ),
    )
}

fn c2_suppression_theorem(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut mean_always_moves, mut disjoint) = (0.0f64, true, true);
    for _ in 0..100 {
        let b = rng.random_range(1..=10);
        let m = rng.random_range(3 * b..=30);
        let common = rng.random_range(1..=100);
        let d = rng.random_range(m + common..=1000);
        let fx = SuppressionFixture::random(&mut rng, d, m, b, common).unwrap();
        // Supports must not overlap for the argument to apply.
        for j in 0..d {
            let owners = fx.idiosyncratic.iter().filter(|u| u[j] != 0.0).count() + (fx.common[j] != 0.0) as usize;
            disjoint &= owners <= 1;
        }
        let grads = fx.batch_gradients();
        let kernel = coord_median_of_means(&grads, 3).unwrap();
        // Independent path: explicit group means, then a sorted median.
        let group_mean = |k: usize, j: usize| grads[k * b..(k + 1) * b].iter().map(|g| g[j]).sum::<f64>() / b as f64;
        for j in 0..d {
            let mut v = [group_mean(0, j), group_mean(1, j), group_mean(2, j)];
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            worst = worst.max((kernel[j] - fx.common[j]).abs()).max((v[1] - fx.common[j]).abs());
        }
        let avg = mean(&grads).unwrap();
        for i in 0..3 * b {
            for j in 0..d {
                if fx.idiosyncratic[i][j] != 0.0 {
                    mean_always_moves &= avg[j] != fx.common[j];
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(1);
    outcome(
        worst <= 1e-15 && mean_always_moves && disjoint && elapsed < limit,
        format!(
            "100 fixtures: max |median - c| {worst:.1e}, mean off c on every u_i coordinate {mean_always_moves}, \
             supports disjoint {disjoint}; {}",
            within(limit, elapsed)
        ),
    )
}

fn random_net(rng: &mut ChaCha8Rng, act: Activation) -> Mlp {
    let mut sizes = vec![rng.random_range(2..6)];
    for _ in 0..rng.random_range(0..3) {
        sizes.push(rng.random_range(2..7));
    }
    sizes.push(rng.random_range(2..5));
    let mut net = Mlp::new(&sizes, act, rng.random()).unwrap();
    // Random biases too, so no pre-activation sits exactly on the ReLU kink.
    let p = normal_vec(rng, net.param_count());
    net.set_params(&p).unwrap();
    net
}

fn random_batch(rng: &mut ChaCha8Rng, net: &Mlp, n: usize) -> Batch {
    let dim = net.input_dim();
    let x = Array2::from_shape_fn((n, dim), |_| rng.sample(StandardNormal));
    let y = (0..n).map(|_| rng.random_range(0..net.num_classes())).collect();
    Batch::new(x, y, (0..n as u64).collect()).unwrap()
}

fn c3_gradients(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let h = 1e-6;
    let mut bad_nets = 0;
    for k in 0..100 {
        let act = [Activation::Relu, Activation::Tanh, Activation::Identity][k % 3];
        let net = random_net(&mut rng, act);
        let batch = random_batch(&mut rng, &net, 1 + k % 5);
        let (_, analytic) = net.batch_gradient(&batch).unwrap();
        let base = net.params().clone();
        let mut probe = net.clone();
        let mut ok = true;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let up = probe.loss(&batch).unwrap();
            p[i] = base[i] - h;
            probe.set_params(&p).unwrap();
            let down = probe.loss(&batch).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let diff = (analytic[i] - numeric).abs();
            ok &= diff <= 1e-8 || diff <= 1e-5 * analytic[i].abs().max(numeric.abs());
        }
        bad_nets += (!ok) as usize;
    }
    let mut mean_dev = 0.0f64;
    for &n in &[1, 2, 3, 32] {
        for _ in 0..10 {
            let net = random_net(&mut rng, Activation::Relu);
            let batch = random_batch(&mut rng, &net, n);
            let (_, g) = net.batch_gradient(&batch).unwrap();
            let (_, per) = net.per_example_gradients(&batch).unwrap();
            for i in 0..g.len() {
                let avg = per.iter().map(|p| p[i]).sum::<f64>() / n as f64;
                mean_dev = mean_dev.max((avg - g[i]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(60);
    outcome(
        bad_nets == 0 && mean_dev <= 1e-12 && elapsed < limit,
        format!(
            "{bad_nets}/100 nets fail finite differences; per-example mean vs batch mean {mean_dev:.1e} \
             (B in 1,2,3,32); {}",
            within(limit, elapsed)
        ),
    )
}

fn max_of(metrics: &[MetricsRecord], f: impl Fn(&MetricsRecord) -> Option<f64>) -> f64 {
    metrics.iter().filter_map(f).fold(f64::NEG_INFINITY, f64::max)
}

fn c4_memorization(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let sgd_corrupt = max_of(shared.suppression_run(OptimizerKind::Sgd), |r| r.corrupt_acc);
    let rm3 = shared.suppression_run(OptimizerKind::Rm3);
    let rm3_corrupt = max_of(rm3, |r| r.corrupt_acc);
    let rm3_pristine = rm3.last().and_then(|r| r.pristine_acc).unwrap_or(0.0);
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(15 * 60);
    outcome(
        sgd_corrupt >= 0.90 && rm3_corrupt <= 0.50 && rm3_pristine >= 0.75 && elapsed < limit,
        format!(
            "p=0.5: SGD best corrupt acc {sgd_corrupt:.3} (need ≥ 0.90); RM3 worst corrupt acc {rm3_corrupt:.3} \
             (need ≤ 0.50), final pristine {rm3_pristine:.3} (need ≥ 0.75); {}",
            within(limit, elapsed)
        ),
    )
}

fn final_gap(metrics: &[MetricsRecord]) -> f64 {
    metrics.last().map(|r| r.train_acc - r.test_acc).unwrap_or(f64::NAN)
}

fn c5_ordering(shared: &mut Shared) -> Outcome {
    let mut g = |k| final_gap(shared.suppression_run(k));
    let (sgd, ra3, rm3, m3) = (g(OptimizerKind::Sgd), g(OptimizerKind::Ra3), g(OptimizerKind::Rm3), g(OptimizerKind::M3));
    let chain = m3 <= rm3 && rm3 < ra3.min(sgd);
    let close = (ra3 - sgd).abs() < 0.5 * (sgd - rm3);
    outcome(
        chain && close,
        format!(
            "final gaps SGD {sgd:.3}, RA3 {ra3:.3}, RM3 {rm3:.3}, M3 {m3:.3}; M3 ≤ RM3 < min(RA3, SGD) {chain}; \
             |RA3 - SGD| = {:.3} < {:.3} {close}",
            (ra3 - sgd).abs(),
            0.5 * (sgd - rm3)
        ),
    )
}

fn c6_noise_predictions(shared: &mut Shared) -> Outcome {
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let sweep = noise_sweep(
        shared.clean(),
        &levels,
        &desk::net(),
        &desk::baseline_optimizer(),
        desk::SWEEP_EPOCHS,
        desk::RUN_SEED,
        &NoiseProtocol::default(),
    )
    .unwrap();
    let p = &sweep.predictions;
    // The orderings are vacuous if even clean labels never reach the thresholds.
    let grounded = p.epochs_to_train_threshold[0].is_some() && p.epochs_to_pristine_threshold[0].is_some();
    let fmt = |v: &[Option<usize>]| {
        v.iter()
            .map(|e| e.map_or("never".to_string(), |e| e.to_string()))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        grounded && p.learning_slows_with_noise && p.pristine_first && p.pristine_slows_with_noise,
        format!(
            "p = 0/.25/.5/.75/1: epochs to 90% train {} nondecreasing {}; pristine ≥ corrupt before memorization {}; \
             epochs to 80% pristine {} nondecreasing {}",
            fmt(&p.epochs_to_train_threshold),
            p.learning_slows_with_noise,
            p.pristine_first,
            fmt(&p.epochs_to_pristine_threshold[..4]),
            p.pristine_slows_with_noise
        ),
    )
}

fn c7_easy_hard(shared: &mut Shared) -> Outcome {
    let report = cross_generalization(
        shared.clean(),
        &desk::net(),
        &desk::baseline_optimizer(),
        desk::SPLIT_THRESHOLD,
        desk::SPLIT_MAX_EPOCHS,
        &XGenSizes::default(),
        desk::XGEN_EPOCHS,
        desk::RUN_SEED,
    )
    .unwrap();
    let margin = report.easy_on_easy - report.hard_on_hard;
    outcome(
        margin >= 0.10 && report.hard_on_easy < report.easy_on_easy,
        format!(
            "easy→easy {:.3}, easy→hard {:.3}, hard→easy {:.3}, hard→hard {:.3} (subsets {:?}); \
             easy→easy - hard→hard = {margin:.3} (need ≥ 0.10)",
            report.easy_on_easy, report.easy_on_hard, report.hard_on_easy, report.hard_on_hard, report.sizes
        ),
    )
}

fn c8_difficulty(shared: &mut Shared) -> Outcome {
    let ds = shared.clean().clone();
    let seeds: Vec<u64> = (1..=desk::DIFFICULTY_RUNS as u64).map(|r| derive_seed(desk::RUN_SEED, r)).collect();
    let table = difficulty_score(
        &ds,
        &desk::net(),
        &desk::baseline_optimizer(),
        desk::SPLIT_THRESHOLD,
        desk::SPLIT_MAX_EPOCHS,
        &seeds,
    )
    .unwrap();
    let rm3 = train_run(
        &ds,
        &desk::net(),
        &desk::suppression_optimizer(OptimizerKind::Rm3),
        desk::EPOCHS,
        desk::RUN_SEED,
    )
    .unwrap();
    let buckets = accuracy_by_difficulty(&table, &ds, &rm3.model).unwrap();
    let filled: Vec<(usize, f64)> = buckets.iter().filter_map(|b| b.accuracy.map(|a| (b.difficulty, a))).collect();
    let monotone = filled.windows(2).all(|w| w[1].1 <= w[0].1);
    let r = desk::DIFFICULTY_RUNS;
    let (first, last) = (buckets[0].accuracy, buckets[r].accuracy);
    let margin = match (first, last) {
        (Some(a), Some(b)) => a - b,
        _ => f64::NAN,
    };
    let table_str = buckets
        .iter()
        .map(|b| format!("{}:{}({})", b.difficulty, b.accuracy.map_or("-".into(), |a| format!("{a:.3}")), b.count))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(
        monotone && margin >= 0.15,
        format!("RM3 train acc by difficulty {table_str}; nonincreasing {monotone}; bucket 0 - bucket {r} = {margin:.3} (need ≥ 0.15)"),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c9_determinism(_: &mut Shared) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfigFile::from_json(include_str!("../configs/tiny.json")).unwrap();
    type Cmd = fn(&RunConfigFile, &Path) -> cgrad::Result<std::path::PathBuf>;
    let commands: [(&str, Cmd); 6] = [
        ("gen", cli::cmd_gen),
        ("train", |c, o| cli::cmd_train(c, o, None)),
        ("sweep", cli::cmd_sweep),
        ("split", cli::cmd_split),
        ("difficulty", cli::cmd_difficulty),
        ("xgen", cli::cmd_xgen),
    ];
    let mut mismatched = Vec::new();
    let mut csv_files = 0;
    for (name, cmd) in commands {
        let first = cmd(&cfg, &tmp.path().join("a")).unwrap();
        let again = RunConfigFile::load(&first.join("manifest.json")).unwrap();
        let second = cmd(&again, &tmp.path().join("b")).unwrap();
        let (a, b) = (read_tree(&first), read_tree(&second));
        csv_files += a.keys().filter(|k| k.ends_with(".csv")).count();
        if a != b || a.is_empty() {
            mismatched.push(name);
        }
    }
    outcome(
        mismatched.is_empty() && csv_files > 0,
        format!("gen/train/sweep/split/difficulty/xgen rerun from their manifests: {csv_files} CSVs, differing commands {mismatched:?}"),
    )
}

fn c10_anti_adversarial(shared: &mut Shared) -> Outcome {
    let clean = desk::noisy_dataset(shared.clean(), 0.0).unwrap();
    let full = desk::noisy_dataset(&clean, 1.0).unwrap();
    let cfg = AntiAdversarialConfig::default();
    let r = anti_adversarial(&clean, &full, &desk::net(), &desk::baseline_optimizer(), &cfg, desk::RUN_SEED).unwrap();
    let pass = match (r.epochs_warm, r.epochs_cold) {
        (Some(w), Some(c)) => w <= c,
        (Some(_), None) => true,
        _ => false,
    };
    let show = |e: Option<usize>| e.map_or(format!("> {}", cfg.budget), |e| e.to_string());
    outcome(
        pass,
        format!(
            "epochs to {:.0}% train acc on p=1: warm {} vs cold {} (pre-train reached {:.3} in {} epochs)",
            100.0 * cfg.threshold,
            show(r.epochs_warm),
            show(r.epochs_cold),
            r.pretrain_train_acc,
            r.pretrain_epochs
        ),
    )
}

type Criterion = (u32, &'static str, fn(&mut Shared) -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "exact kernel oracles", c1_kernel_oracles),
    (2, "suppression theorem fixtures", c2_suppression_theorem),
    (3, "gradient correctness", c3_gradients),
    (4, "memorization suppression at p=0.5", c4_memorization),
    (5, "aggregator gap ordering", c5_ordering),
    (6, "label-noise predictions", c6_noise_predictions),
    (7, "easy/hard cross-generalization", c7_easy_hard),
    (8, "difficulty monotonicity under RM3", c8_difficulty),
    (9, "rerun determinism", c9_determinism),
    (10, "anti-adversarial initialization", c10_anti_adversarial),
];

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut shared = Shared::default();
    let mut failed = Vec::new();
    for (n, title, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut shared)))
            .unwrap_or_else(|_| outcome(false, "panicked".into()));
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {verdict} {title} [{:.1}s]: {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
