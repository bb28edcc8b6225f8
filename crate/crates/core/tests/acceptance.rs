//! Acceptance suite: one test per release criterion, each printing a
//! single PASS/FAIL line (run with `--nocapture` to see them all).
//!
//! Criteria 10 and 11 train on MNIST; the IDX files are expected under
//! `$OSWI_DATA_DIR/mnist` or `<workspace>/data/mnist` (see README for
//! `oswi fetch`). Heavy criteria serialize on a lock so their runtime
//! budgets are measured without cross-test contention.

use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use oswi::activations::ActivationSpec;
use oswi::calibration::{negative_rate, sigma_star, std_normal_cdf, std_normal_quantile};
use oswi::data;
use oswi::dynamics;
use oswi::initializers::{gain_statistics, InitKind, InitScheme};
use oswi::network::{self, NetworkConfig, TrainConfig};
use oswi::propagation::{self, X0Dist};

fn heavy() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn report(criterion: &str, pass: bool, details: &str) {
    println!(
        "criterion {criterion}: {} — {details}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn mnist_dir() -> PathBuf {
    if let Ok(root) = std::env::var("OSWI_DATA_DIR") {
        return PathBuf::from(root).join("mnist");
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn load_mnist() -> data::Dataset {
    let dir = mnist_dir();
    data::load_train(data::DatasetKind::Mnist, &dir).unwrap_or_else(|e| {
        panic!(
            "MNIST not available in {} ({e}); run `oswi fetch --dataset mnist --dir {}`",
            dir.display(),
            dir.display()
        )
    })
}

/// The full activation catalog exercised by the class and gradient
/// criteria.
fn catalog() -> Vec<ActivationSpec> {
    vec![
        ActivationSpec::tanh(),
        ActivationSpec::erf(),
        ActivationSpec::arctan(),
        ActivationSpec::arctan_normalized(),
        ActivationSpec::gd(),
        ActivationSpec::softsign(1.0).unwrap(),
        ActivationSpec::softsign(2.0).unwrap(),
        ActivationSpec::softsign(3.0).unwrap(),
        ActivationSpec::softsign_1_plus_3(),
        ActivationSpec::combination(vec![
            (1.0, ActivationSpec::tanh()),
            (1.0, ActivationSpec::erf()),
            (1.0, ActivationSpec::softsign(1.0).unwrap()),
            (1.0, ActivationSpec::gd()),
        ])
        .unwrap(),
    ]
}

#[test]
fn criterion_01_calibration_inversion() {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for &depth in &[1_usize, 10, 100, 10_000] {
        for &omega in &[0.1, 1.0, 10.0] {
            let mut k = 0;
            loop {
                let p = 0.01 + 0.04 * k as f64;
                if p >= 0.5 {
                    break;
                }
                let s = sigma_star(p, depth, omega).unwrap();
                worst = worst.max((negative_rate(s, depth, omega) - p).abs());
                k += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && elapsed.as_secs_f64() < 1.0;
    report(
        "1 (calibration inversion)",
        pass,
        &format!("max |pi_L(sigma*) - p| = {worst:.3e}, runtime {elapsed:.2?}"),
    );
    assert!(pass, "worst inversion error {worst:.3e}");
}

#[test]
fn criterion_02_quantile_accuracy() {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut worst_x = 0.0_f64;
    for i in 0..1000 {
        let x = -8.0 + 16.0 * i as f64 / 999.0;
        let back = std_normal_quantile(std_normal_cdf(x)).unwrap();
        let err = (back - x).abs();
        if err > worst {
            worst = err;
            worst_x = x;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-8 && elapsed.as_secs_f64() < 1.0;
    report(
        "2 (quantile round trip)",
        pass,
        &format!(
            "max |quantile(cdf(x)) - x| = {worst:.3e} at x = {worst_x:.3}, runtime {elapsed:.2?}; \
             note: above x ~ 6 the CDF value rounds onto the 2^-53 grid below 1.0, capping any \
             double-precision round trip at (ulp/2)/pdf(x) (~8e-3 at x = 8; SciPy measures the same)"
        ),
    );
    assert!(pass, "max round-trip error {worst:.3e} at x = {worst_x}");
}

#[test]
fn criterion_03_pitchfork() {
    let start = Instant::now();
    let specs = [
        ActivationSpec::tanh(),
        ActivationSpec::erf(),
        ActivationSpec::arctan_normalized(),
        ActivationSpec::softsign(2.0).unwrap(),
        ActivationSpec::gd(),
    ];
    let mut pass = true;
    let mut details = String::new();
    for spec in &specs {
        // a = omega + 0.3 (the tanh case is literally a = 1.3).
        let a = spec.omega() + 0.3;
        let fp = dynamics::solve_xi(spec, a).unwrap();
        let end = dynamics::iterate(spec, a, 0.1, 50).converged_to();
        let gap = (end - fp.xi).abs();
        let sub = dynamics::iterate(spec, spec.omega() - 0.1, 0.1, 500)
            .converged_to()
            .abs();
        let ok = fp.residual <= 1e-12 && gap <= 1e-6 && sub < 1e-3;
        if !ok {
            pass = false;
        }
        details.push_str(&format!(
            "[{spec}: gap {gap:.1e}, residual {:.1e}, subcritical |x500| {sub:.1e}] ",
            fp.residual
        ));
    }
    let elapsed = start.elapsed();
    let pass = pass && elapsed.as_secs_f64() < 1.0;
    report("3 (pitchfork dynamics)", pass, &format!("{details}runtime {elapsed:.2?}"));
    assert!(pass, "{details}");
}

#[test]
fn criterion_04_scalar_chain_negative_rate() {
    let _guard = heavy();
    let start = Instant::now();
    let (depth, chains, seed) = (50, 20_000, 42);
    let mut pass = true;
    let mut details = String::new();
    for spec in [ActivationSpec::tanh(), ActivationSpec::erf()] {
        let omega = spec.omega();
        for &p in &[0.14, 0.31, 0.49] {
            let sigma = sigma_star(p, depth, omega).unwrap();
            let trace = propagation::scalar_chain(&spec, sigma, depth, chains, 0.1, seed);
            let final_gap = (trace.final_negative_rate() - p).abs();
            let mut depth_ok = true;
            for (j, &emp) in trace.negative_rate_per_depth.iter().enumerate() {
                let theory = negative_rate(sigma, j + 1, omega);
                let se = (theory * (1.0 - theory) / chains as f64).sqrt();
                if (emp - theory).abs() > 3.0 * se {
                    depth_ok = false;
                }
            }
            if final_gap > 0.012 || !depth_ok {
                pass = false;
            }
            details.push_str(&format!(
                "[{spec} p={p}: final gap {final_gap:.4}, all depths within 3 SE: {depth_ok}] "
            ));
        }
    }
    let elapsed = start.elapsed();
    drop(_guard);
    let pass = pass && elapsed.as_secs_f64() < 10.0;
    report(
        "4 (scalar-chain negative rate)",
        pass,
        &format!("{details}runtime {elapsed:.2?}"),
    );
    assert!(pass, "{details}");
}

#[test]
fn criterion_05_deep_chain_dispersion() {
    let guard = heavy();
    let start = Instant::now();
    let spec = ActivationSpec::tanh();
    let (width, depth, seed) = (2000, 1000, 7);
    let omega = spec.omega();
    let ss = sigma_star(0.3, depth, omega).unwrap();

    let proposed = propagation::ffnn_chain(
        &spec,
        &InitScheme::new(InitKind::Proposed { sigma_star: ss, omega }, seed),
        width,
        depth,
        X0Dist::PositiveConstant(0.1),
        seed,
    );
    let xavier = propagation::ffnn_chain(
        &spec,
        &InitScheme::new(InitKind::XavierUniform, seed),
        width,
        depth,
        X0Dist::PositiveConstant(0.1),
        seed,
    );
    let elapsed = start.elapsed();
    drop(guard);

    let p_spread = proposed.spread;
    let p_max = proposed.max_abs_last_layer();
    let x_spread = xavier.spread;
    let x_max = xavier.max_abs_last_layer();

    let proposed_ok = p_spread >= 0.5 && p_max >= 0.1;
    let xavier_ok = x_max < 1e-3 && x_spread < 0.1;
    let pass = proposed_ok && xavier_ok && elapsed.as_secs_f64() < 120.0;
    report(
        "5 (deep-chain dispersion)",
        pass,
        &format!(
            "proposed: spread {p_spread:.3} (need >= 0.5), max|last| {p_max:.3} (need >= 0.1) => {proposed_ok}; \
             xavier: max|last| {x_max:.3e} (need < 1e-3), spread {x_spread:.3} (need < 0.1) => {xavier_ok}; \
             runtime {elapsed:.2?}; note: Xavier-uniform is exactly critical for tanh (fan-sum variance 1/n), \
             so its signal decays algebraically like 1/sqrt(2L) — std ~0.02 at depth 1000 — not exponentially; \
             the sub-1e-3 collapse bound is not reachable at this depth for any seed"
        ),
    );
    assert!(
        pass,
        "proposed (spread {p_spread:.3}, max {p_max:.3}) ok={proposed_ok}; \
         xavier (max {x_max:.3e}, spread {x_spread:.3}) ok={xavier_ok}"
    );
}

#[test]
fn criterion_06_spread_monotonicity() {
    let guard = heavy();
    let start = Instant::now();
    let (depth, width, bins) = (100, 2000, 50);
    let targets = [0.14, 0.30, 0.49];
    let seeds = [11_u64, 12, 13, 14, 15];
    let mut pass = true;
    let mut details = String::new();
    for spec in [ActivationSpec::tanh(), ActivationSpec::softsign(3.0).unwrap()] {
        let mut means = Vec::new();
        for &p in &targets {
            let mut acc = 0.0;
            for &seed in &seeds {
                let rows =
                    propagation::spread_vs_p_sweep(&spec, depth, width, &[p], bins, seed)
                        .unwrap();
                acc += rows[0].spread;
            }
            means.push(acc / seeds.len() as f64);
        }
        let monotone = means.windows(2).all(|w| w[1] >= w[0] - 0.02);
        if !monotone {
            pass = false;
        }
        details.push_str(&format!("[{spec}: spreads {means:.3?} nondecreasing: {monotone}] "));
    }
    let elapsed = start.elapsed();
    drop(guard);
    let pass = pass && elapsed.as_secs_f64() < 120.0;
    report("6 (spread monotonicity)", pass, &format!("{details}runtime {elapsed:.2?}"));
    assert!(pass, "{details}");
}

#[test]
fn criterion_07_gain_statistics() {
    let _guard = heavy();
    let start = Instant::now();
    let width = 256;
    let samples = 10_000;
    let omega = 1.0;
    let sigma_star_val = 0.45;
    let scheme = InitScheme::new(InitKind::Proposed { sigma_star: sigma_star_val, omega }, 5);
    // Generic previous-layer vector: spread magnitudes, no zeros.
    let x_prev: Vec<f64> = (0..width)
        .map(|j| 0.3 + 0.7 * ((j * 37 % width) as f64 / width as f64))
        .collect();
    let stats = gain_statistics(&scheme, &x_prev, 17, samples, 99).unwrap();
    let se = (stats.variance / samples as f64).sqrt();
    let mean_ok = (stats.mean - omega).abs() <= 5.0 * se;
    let floor_ok = stats.variance >= stats.variance_floor;
    let var_rel = (stats.variance - stats.variance_conditional).abs() / stats.variance_conditional;
    let var_ok = var_rel <= 0.03;
    let elapsed = start.elapsed();
    let pass = mean_ok && floor_ok && var_ok && elapsed.as_secs_f64() < 5.0;
    report(
        "7 (elementwise gain statistics)",
        pass,
        &format!(
            "mean {:.5} vs omega {omega} ({mean_ok}), variance {:.6} >= floor {:.6} ({floor_ok}), \
             vs conditional {:.6} rel gap {var_rel:.4} ({var_ok}), runtime {elapsed:.2?}",
            stats.mean, stats.variance, stats.variance_floor, stats.variance_conditional
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_stochastic_floor_bound() {
    let _guard = heavy();
    let start = Instant::now();
    let spec = ActivationSpec::tanh();
    let out =
        dynamics::stochastic_floor_probability(&spec, 0.5, 50, 0.1, 0.3, 1.2, 10_000, 42)
            .unwrap();
    let se = (out.bound * (1.0 - out.bound) / 10_000.0).sqrt();
    let elapsed = start.elapsed();
    let pass = out.empirical_prob >= out.bound - 3.0 * se && elapsed.as_secs_f64() < 5.0;
    report(
        "8 (stochastic floor bound)",
        pass,
        &format!(
            "empirical P(Phi_m >= delta) = {:.4} vs bound {:.3e} (r = {}), runtime {elapsed:.2?}",
            out.empirical_prob, out.bound, out.r
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_gradient_correctness() {
    let _guard = heavy();
    let start = Instant::now();
    let mut pass = true;
    let mut details = String::new();
    for spec in catalog() {
        let omega = spec.omega();
        let config = NetworkConfig {
            layer_widths: vec![8, 8, 8, 10],
            activation: spec.clone(),
            init: InitScheme::new(InitKind::Proposed { sigma_star: 0.3, omega }, 3),
            batch_norm: false,
            seed: 3,
        };
        let mut net = network::Network::new(config).unwrap();
        let batch = oswi::ndarray::Array2::from_shape_fn((5, 8), |(i, j)| {
            ((i * 13 + j * 7) % 97) as f64 / 97.0
        });
        let labels = [0u8, 3, 7, 1, 9];
        let (_, grads) = net.loss_and_grads(&batch, &labels).unwrap();
        let worst = network::finite_difference_worst_error(&mut net, &batch, &labels, &grads);
        if worst > 1e-5 {
            pass = false;
            details.push_str(&format!("[{spec}: worst rel err {worst:.2e}] "));
        }
    }
    let elapsed = start.elapsed();
    let pass = pass && elapsed.as_secs_f64() < 5.0;
    report(
        "9 (gradient correctness)",
        pass,
        &format!(
            "{}runtime {elapsed:.2?}",
            if details.is_empty() { "all catalog activations <= 1e-5; " } else { &details }
        ),
    );
    assert!(pass, "{details}");
}

struct SweepOutcome {
    learnable: Vec<f64>,
}

fn sweep_window(
    train_set: &data::Dataset,
    val_set: &data::Dataset,
    alpha: f64,
    kind_of: impl Fn(f64, f64) -> InitKind,
    lrs: &[f64],
    seed: u64,
) -> SweepOutcome {
    use rayon::prelude::*;
    let spec = ActivationSpec::tanh().scaled(alpha).unwrap();
    let omega = spec.omega();
    let learned: Vec<(f64, bool)> = lrs
        .par_iter()
        .map(|&lr| {
            let ss = sigma_star(0.3, 10, omega).unwrap();
            let mut layer_widths = vec![train_set.features()];
            layer_widths.extend(std::iter::repeat(128).take(10));
            layer_widths.push(10);
            let config = NetworkConfig {
                layer_widths,
                activation: spec.clone(),
                init: InitScheme::new(kind_of(ss, omega), seed),
                batch_norm: false,
                seed,
            };
            let tc = TrainConfig::new(lr, 1);
            let report = network::train_on_split(&config, &tc, train_set, val_set).unwrap();
            (lr, report.learned)
        })
        .collect();
    SweepOutcome {
        learnable: learned.iter().filter(|(_, l)| *l).map(|(lr, _)| *lr).collect(),
    }
}

#[test]
fn criterion_10_lr_window_trend() {
    let guard = heavy();
    let start = Instant::now();
    let full = load_mnist();
    let seed = 1;
    // Validation held out of the full corpus: the learnable/failed-to-train
    // classification needs more statistical power than a 150-image split
    // of the subset can give (0.05 over chance is only ~2 SE there).
    let (train_set, val_set) = data::split_validation(&full, 0.15, seed).unwrap();
    let train_set = data::subset(&train_set, 1000, seed).unwrap();
    let lrs: Vec<f64> = (0..10).map(|k| 10f64.powi(k - 9)).collect();

    let mut pass = true;
    let mut details = String::new();
    for &alpha in &[0.01, 1.0, 100.0] {
        let omega = 1.0 / alpha;
        let proposed = sweep_window(
            &train_set,
            &val_set,
            alpha,
            |ss, om| InitKind::Proposed { sigma_star: ss, omega: om },
            &lrs,
            seed,
        );
        // Nonempty, and every learnable lr within one decade of the
        // omega-scaled band [1e-5 w, 1e-3 w].
        let lo = 1e-6 * omega * 0.999;
        let hi = 1e-2 * omega * 1.001;
        let window_ok = !proposed.learnable.is_empty()
            && proposed.learnable.iter().all(|&lr| lr >= lo && lr <= hi);
        if !window_ok {
            pass = false;
        }
        details.push_str(&format!(
            "[alpha {alpha}: proposed window {:?} within decade of band {window_ok}] ",
            proposed.learnable
        ));
    }
    for &alpha in &[0.01, 100.0] {
        for (name, kind) in [
            ("xavier", InitKind::XavierUniform),
            ("he", InitKind::HeNormal),
            ("orthogonal", InitKind::Orthogonal),
        ] {
            let outcome =
                sweep_window(&train_set, &val_set, alpha, |_, _| kind, &lrs, seed);
            if !outcome.learnable.is_empty() {
                pass = false;
                details.push_str(&format!(
                    "[alpha {alpha} {name}: unexpected window {:?}] ",
                    outcome.learnable
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    drop(guard);
    let pass = pass && elapsed.as_secs_f64() < 900.0;
    report("10 (learning-rate window trend)", pass, &format!("{details}runtime {elapsed:.2?}"));
    assert!(pass, "{details}");
}

#[test]
fn criterion_11_accuracy_trend() {
    let guard = heavy();
    let start = Instant::now();
    let full = load_mnist();
    let seeds = [1_u64, 2, 3];
    let mut pass = true;
    let mut details = String::new();

    for spec in [ActivationSpec::tanh(), ActivationSpec::erf()] {
        let omega = spec.omega();
        let mut mean_acc = |kind_of: &dyn Fn(f64, f64) -> InitKind| -> f64 {
            let mut total = 0.0;
            for &seed in &seeds {
                let (pool, val) = data::split_validation(&full, 0.15, seed).unwrap();
                let train_set = data::subset(&pool, 500, seed).unwrap();
                let ss = sigma_star(0.3, 10, omega).unwrap();
                let mut layer_widths = vec![full.features()];
                layer_widths.extend(std::iter::repeat(128).take(10));
                layer_widths.push(10);
                let config = NetworkConfig {
                    layer_widths,
                    activation: spec.clone(),
                    init: InitScheme::new(kind_of(ss, omega), seed),
                    batch_norm: false,
                    seed,
                };
                let tc = TrainConfig::new(1e-4 * omega, 10);
                let report =
                    network::train_on_split(&config, &tc, &train_set, &val).unwrap();
                total += report.best_val_acc;
            }
            total / seeds.len() as f64
        };

        let proposed = mean_acc(&|ss, om| InitKind::Proposed { sigma_star: ss, omega: om });
        let xavier = mean_acc(&|_, _| InitKind::XavierUniform);
        let he = mean_acc(&|_, _| InitKind::HeNormal);
        let orthogonal = mean_acc(&|_, _| InitKind::Orthogonal);
        let ok = proposed >= xavier - 0.01
            && proposed >= he - 0.01
            && proposed >= orthogonal - 0.01;
        if !ok {
            pass = false;
        }
        details.push_str(&format!(
            "[{spec}: proposed {proposed:.3} vs xavier {xavier:.3}, he {he:.3}, orthogonal {orthogonal:.3} => {ok}] "
        ));
    }
    let elapsed = start.elapsed();
    drop(guard);
    let pass = pass && elapsed.as_secs_f64() < 1200.0;
    report("11 (best-accuracy trend)", pass, &format!("{details}runtime {elapsed:.2?}"));
    assert!(pass, "{details}");
}

#[test]
fn criterion_12_determinism() {
    let guard = heavy();
    let start = Instant::now();
    let exe = env!("CARGO_BIN_EXE_oswi");
    let tmp = tempfile::tempdir().unwrap();
    let mnist = mnist_dir();

    let run = |label: &str, args: &[&str]| -> Vec<(String, Vec<u8>)> {
        let dir = tmp.path().join(label);
        let mut cmd = std::process::Command::new(exe);
        cmd.args(args).arg("--out-dir").arg(&dir);
        let out = cmd.output().expect("CLI run");
        assert!(
            out.status.success(),
            "{label}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };

    let mut pass = true;
    let mut details = String::new();
    let cases: Vec<(&str, Vec<String>)> = vec![
        (
            "propagate",
            vec![
                "--seed".into(),
                "42".into(),
                "propagate".into(),
                "--activation".into(),
                "erf".into(),
                "--p".into(),
                "0.31".into(),
                "--depth".into(),
                "30".into(),
                "--width".into(),
                "200".into(),
                "--chains".into(),
                "2000".into(),
            ],
        ),
        (
            "train",
            vec![
                "--seed".into(),
                "7".into(),
                "train".into(),
                "--activation".into(),
                "tanh".into(),
                "--init".into(),
                "proposed".into(),
                "--subset".into(),
                "300".into(),
                "--epochs".into(),
                "2".into(),
                "--layers".into(),
                "3".into(),
                "--width".into(),
                "32".into(),
                "--dump-weights".into(),
                "--data-dir".into(),
                mnist.display().to_string(),
            ],
        ),
        (
            "sweep-lr",
            vec![
                "--seed".into(),
                "5".into(),
                "sweep-lr".into(),
                "--alphas".into(),
                "1".into(),
                "--inits".into(),
                "proposed,orthogonal".into(),
                "--lr-grid".into(),
                "1e-4,1e-3".into(),
                "--subset".into(),
                "300".into(),
                "--layers".into(),
                "3".into(),
                "--width".into(),
                "32".into(),
                "--data-dir".into(),
                mnist.display().to_string(),
            ],
        ),
    ];
    for (label, args) in &cases {
        let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let a = run(&format!("{label}-a"), &argrefs);
        let b = run(&format!("{label}-b"), &argrefs);
        let identical = a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ca), (nb, cb))| na == nb && ca == cb);
        if !identical {
            pass = false;
        }
        details.push_str(&format!("[{label}: {} files byte-identical: {identical}] ", a.len()));
    }
    let elapsed = start.elapsed();
    drop(guard);
    report("12 (determinism)", pass, &format!("{details}runtime {elapsed:.2?}"));
    assert!(pass, "{details}");
}
