use std::path::Path;

use lorid_core::analysis::suite::{self, CheckOutcome};
use lorid_core::analysis::{loop_bound_curve, mmse_binary, mmse_gaussian};
use lorid_core::attacks::{
    evaluate, train_classifier as fit_classifier, AttackBudget, AttackKind, AttackNorm, ClassifierConfig, Defense,
};
use lorid_core::data::{gen_gaussian_dataset, gen_striped_images, gen_two_gaussians, StripeSpec};
use lorid_core::diffusion::{train_mlp_denoiser, GaussianOracleDenoiser, TrainConfig};
use lorid_core::io::{
    labels_to_tensor, load_basis, load_classifier, load_denoiser, load_tensor, save_basis, save_classifier,
    save_denoiser, save_tensor, tensor_to_labels, CsvTable, DenoiserArtifact,
};
use lorid_core::lab;
use lorid_core::nn::{Activation, Optimizer};
use lorid_core::purify::{lorid_purify_traced, purify_batch};
use lorid_core::rng::{derived, seeded};
use lorid_core::tucker::{fit_basis as fit_tucker, TensorizationLayout};
use lorid_core::{RunConfig, Tensor, TuckerBasis};

use crate::{
    ActivationArg, AttackArg, AttackEvalArgs, AttackOptions, CalibrateArgs, CliError, CurveKind, CurvesArgs, DataKind,
    DenoiserKind, FitBasisArgs, GenDataArgs, ModelPaths, NormArg, OptimizerArg, Outcome, PurifyArgs, TheoremId,
    TrainClassifierArgs, TrainDenoiserArgs, VerifyArgs,
};

type CmdResult = Result<Outcome, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn reject_flag(present: bool, flag: &str, context: &str) -> Result<(), CliError> {
    if present {
        Err(usage(format!("{flag} is not valid {context}")))
    } else {
        Ok(())
    }
}

fn activation(a: ActivationArg) -> Activation {
    match a {
        ActivationArg::Tanh => Activation::Tanh,
        ActivationArg::Relu => Activation::Relu,
    }
}

pub fn gen_data(a: GenDataArgs) -> CmdResult {
    let ctx = format!("for --kind {:?}", a.kind).to_lowercase();
    reject_flag(a.dim.is_some() && a.kind != DataKind::Gaussian, "--dim", &ctx)?;
    reject_flag(
        (a.size.is_some() || a.noise.is_some()) && a.kind != DataKind::Stripes,
        "--size/--noise",
        &ctx,
    )?;
    reject_flag(a.separation.is_some() && a.kind != DataKind::TwoGaussians, "--separation", &ctx)?;
    reject_flag(a.labels_out.is_some() && a.kind == DataKind::Gaussian, "--labels-out", &ctx)?;
    let (x, labels) = match a.kind {
        DataKind::Gaussian => {
            let dim = a.dim.ok_or_else(|| usage("--kind gaussian needs --dim"))?;
            (gen_gaussian_dataset(dim, a.n, a.seed)?, None)
        }
        DataKind::Stripes => {
            let mut spec = StripeSpec::default();
            if let Some(s) = a.size {
                spec.height = s;
                spec.width = s;
            }
            if let Some(n) = a.noise {
                spec.noise = n;
            }
            let (x, y) = gen_striped_images(a.n, &spec, a.seed)?;
            (x, Some(y))
        }
        DataKind::TwoGaussians => {
            let (x, y) = gen_two_gaussians(a.n, a.separation.unwrap_or(4.0), a.seed)?;
            (x, Some(y))
        }
    };
    save_tensor(&a.out, &x)?;
    if let (Some(path), Some(y)) = (&a.labels_out, &labels) {
        save_tensor(path, &labels_to_tensor(y))?;
    }
    println!("wrote {:?} to {}", x.shape(), a.out.display());
    Ok(Outcome::Done)
}

pub fn train_denoiser(a: TrainDenoiserArgs) -> CmdResult {
    let mlp_only = a.hidden.is_some()
        || a.activation.is_some()
        || a.epochs.is_some()
        || a.lr.is_some()
        || a.batch_size.is_some()
        || a.optimizer.is_some()
        || a.momentum.is_some()
        || a.report.is_some();
    reject_flag(a.kind == DenoiserKind::Gaussian && mlp_only, "MLP training options", "for --kind gaussian")?;
    reject_flag(a.kind == DenoiserKind::Mlp && a.ridge.is_some(), "--ridge", "for --kind mlp")?;
    reject_flag(
        a.momentum.is_some() && a.optimizer != Some(OptimizerArg::Sgd),
        "--momentum",
        "without --optimizer sgd",
    )?;
    let cfg = RunConfig::load(&a.config)?;
    let schedule = cfg.schedule()?;
    let data = load_tensor(&a.data)?;
    let artifact = match a.kind {
        DenoiserKind::Gaussian => {
            DenoiserArtifact::Gaussian(GaussianOracleDenoiser::fit(&data, a.ridge.unwrap_or(1e-4), schedule)?)
        }
        DenoiserKind::Mlp => {
            let mut tc = TrainConfig::default();
            if let Some(h) = a.hidden {
                tc.hidden = h;
            }
            if let Some(act) = a.activation {
                tc.activation = activation(act);
            }
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            if let Some(lr) = a.lr {
                tc.learning_rate = lr;
            }
            if let Some(b) = a.batch_size {
                tc.batch_size = b;
            }
            if a.optimizer == Some(OptimizerArg::Sgd) {
                tc.optimizer = Optimizer::Sgd {
                    momentum: a.momentum.unwrap_or(0.9),
                };
            }
            let (model, report) = train_mlp_denoiser(&data, &schedule, &tc, &mut seeded(cfg.seed))?;
            println!(
                "final objective {:.6}, gradient check rel err {:.2e}",
                report.final_loss, report.grad_check_rel_error
            );
            if let Some(path) = &a.report {
                let mut table = CsvTable::new(&["epoch", "loss"]);
                for (i, l) in report.epoch_losses.iter().enumerate() {
                    table.push(&[(i + 1) as f64, *l]);
                }
                table.save(path)?;
            }
            DenoiserArtifact::Mlp(model)
        }
    };
    save_denoiser(&a.out, &artifact)?;
    println!("saved denoiser to {}", a.out.display());
    Ok(Outcome::Done)
}

pub fn train_classifier(a: TrainClassifierArgs) -> CmdResult {
    let data = load_tensor(&a.data)?;
    let labels = tensor_to_labels(&load_tensor(&a.labels)?)?;
    let cfg = ClassifierConfig {
        hidden: a.hidden,
        activation: activation(a.activation),
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        ..ClassifierConfig::default()
    };
    let (clf, report) = fit_classifier(&data, &labels, &cfg, &mut seeded(a.seed))?;
    println!(
        "train accuracy {:.4}, gradient check rel err {:.2e}",
        report.train_accuracy, report.grad_check_rel_error
    );
    if let Some(path) = &a.report {
        let mut table = CsvTable::new(&["epoch", "loss"]);
        for (i, l) in report.epoch_losses.iter().enumerate() {
            table.push(&[(i + 1) as f64, *l]);
        }
        table.save(path)?;
    }
    save_classifier(&a.out, &clf)?;
    Ok(Outcome::Done)
}

pub fn fit_basis(a: FitBasisArgs) -> CmdResult {
    let cfg = RunConfig::load(&a.config)?;
    let data = load_tensor(&a.data)?;
    if data.order() != 4 {
        return Err(usage(format!("expected images (N, H, W, C), got shape {:?}", data.shape())));
    }
    let layout = TensorizationLayout::new(&data.shape()[1..], cfg.patch)?;
    let basis = fit_tucker(&data, layout, &cfg.rank_policy)?;
    save_basis(&a.out, &basis)?;
    println!(
        "ranks {:?}, discarded energy {:.6e}",
        basis.ranks(),
        basis.total_discarded_energy()
    );
    Ok(Outcome::Done)
}

fn load_optional_basis(path: Option<&Path>) -> Result<Option<TuckerBasis>, CliError> {
    Ok(match path {
        Some(p) => Some(load_basis(p)?),
        None => None,
    })
}

pub fn purify(a: PurifyArgs) -> CmdResult {
    let cfg = RunConfig::load(&a.config)?;
    let schedule = cfg.schedule()?;
    reject_flag(a.basis.is_some() && !cfg.use_tucker, "--basis", "unless the config sets use_tucker = true")?;
    let basis = load_optional_basis(a.basis.as_deref())?;
    let lcfg = cfg.lorid_config(basis)?;
    let den = load_denoiser(&a.denoiser, &schedule)?;
    let x = load_tensor(&a.input)?;
    let sample_shape = den.sample_shape().to_vec();
    if x.shape() == sample_shape.as_slice() {
        let reference = match &a.reference {
            Some(p) => Some(load_tensor(p)?),
            None => None,
        };
        let (y, trace) = lorid_purify_traced(&x, &lcfg, &den, &schedule, reference.as_ref(), &mut derived(cfg.seed, 0))?;
        save_tensor(&a.out, &y)?;
        if let Some(path) = &a.trace {
            let mut table = CsvTable::new(&["loop", "t_per_loop", "distance_to_reference", "distance_to_input"]);
            for (i, state) in trace.loops.iter().enumerate() {
                let to_ref = trace.distances.as_ref().map_or(String::new(), |d| d[i].to_string());
                table.push(&[
                    (i + 1).to_string(),
                    lcfg.step_per_loop().to_string(),
                    to_ref,
                    state.sub(&x)?.frobenius_norm().to_string(),
                ]);
            }
            table.save(path)?;
        }
    } else if x.order() == sample_shape.len() + 1 && &x.shape()[1..] == sample_shape.as_slice() {
        reject_flag(a.trace.is_some(), "--trace", "for batch input")?;
        let y = purify_batch(&x, &lcfg, &den, &schedule)?;
        save_tensor(&a.out, &y)?;
    } else {
        return Err(usage(format!(
            "input shape {:?} matches neither the denoiser sample shape {:?} nor a batch of it",
            x.shape(),
            sample_shape
        )));
    }
    println!("wrote {}", a.out.display());
    Ok(Outcome::Done)
}

pub fn curves(a: CurvesArgs) -> CmdResult {
    let cfg = RunConfig::load(&a.config)?;
    let schedule = cfg.schedule()?;
    let table = match a.kind {
        CurveKind::Fig2 => {
            if a.l_max == 0 {
                return Err(usage("--l-max must be >= 1"));
            }
            let loops: Vec<usize> = (1..=a.l_max).collect();
            let mut table = CsvTable::new(&["effective_t", "L", "t_over_L", "value"]);
            for &t in &a.effective_t {
                for p in loop_bound_curve(&schedule, t, &loops)? {
                    table.push(&[
                        p.effective_t.to_string(),
                        p.loops.to_string(),
                        p.t_over_l.to_string(),
                        p.value.to_string(),
                    ]);
                }
            }
            table
        }
        CurveKind::Mmse => {
            let mut table = CsvTable::new(&["snr", "mmse_gaussian", "mmse_binary"]);
            for &s in &a.snr_grid {
                table.push(&[s, mmse_gaussian(s)?, mmse_binary(s)?]);
            }
            table
        }
        CurveKind::Snr => {
            let mut table = CsvTable::new(&["t", "alpha_bar", "snr"]);
            for t in 1..=schedule.steps() {
                table.push(&[t as f64, schedule.alpha_bar(t), schedule.snr(t)]);
            }
            table
        }
    };
    table.save(&a.out)?;
    Ok(Outcome::Done)
}

fn merge(name: &str, parts: Vec<CheckOutcome>) -> CheckOutcome {
    let mut iter = parts.into_iter();
    let mut out = iter.next().expect("at least one check");
    out.name = name.to_string();
    for p in iter {
        out.passed &= p.passed;
        out.lines.push(format!("[{}]", p.name));
        out.lines.extend(p.lines);
    }
    out
}

pub fn verify(a: VerifyArgs) -> CmdResult {
    let th = a.theorem;
    reject_flag(a.identical && th != TheoremId::KlContraction, "--identical", "outside theorem 1")?;
    if a.eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(usage("--eps values must be finite and >= 0"));
    }
    let cfg = RunConfig::load(&a.config)?;
    let s = cfg.schedule()?;
    let (trials, seed) = (cfg.trials, cfg.seed);
    let outcome = match th {
        TheoremId::KlContraction => suite::check_kl_monotone(&s, a.pairs, 3, a.identical, seed)?,
        TheoremId::Clean => suite::check_clean_recovery(&s, a.dim, trials, a.rel_tol, seed)?,
        TheoremId::LowerBound => merge(
            "theorem_2",
            vec![
                suite::check_clean_recovery(&s, a.dim, trials, a.rel_tol, seed)?,
                suite::check_adversarial_bounds(&s, a.dim, &a.eps, trials, false, seed)?,
            ],
        ),
        TheoremId::Sandwich => suite::check_adversarial_bounds(&s, a.dim, &a.eps, trials, true, seed)?,
        TheoremId::Loops => merge(
            "theorem_4",
            vec![
                suite::check_loop_curve(&s, &a.effective_t, a.l_max)?,
                suite::check_loop_empirical(&s, a.dim, 400, 8, trials, seed)?,
            ],
        ),
        TheoremId::Tucker => {
            let eps = a.eps.first().copied().unwrap_or(0.1);
            suite::check_tucker_composed(&s, eps, trials, seed)?
        }
    };
    print!("{}", outcome.report());
    if let Some(path) = &a.out {
        outcome.table.save(path)?;
    }
    Ok(if outcome.passed {
        Outcome::Done
    } else {
        Outcome::CheckFailed
    })
}

fn budget(o: &AttackOptions) -> Result<(AttackBudget, AttackKind), CliError> {
    let range = o
        .input_range
        .split_once(',')
        .and_then(|(lo, hi)| Some((lo.trim().parse::<f64>().ok()?, hi.trim().parse::<f64>().ok()?)))
        .ok_or_else(|| usage("--input-range expects lo,hi"))?;
    let b = AttackBudget {
        norm: match o.norm {
            NormArg::Linf => AttackNorm::Linf,
            NormArg::L2 => AttackNorm::L2,
        },
        epsilon: o.epsilon,
        steps: o.steps,
        step_size: o.step_size.unwrap_or(o.epsilon / 4.0),
        clamp: Some(range),
    };
    if o.step_size.is_none() && o.epsilon == 0.0 {
        return Err(usage("--epsilon 0 needs an explicit --step-size"));
    }
    b.validate().map_err(|e| usage(e.to_string()))?;
    let kind = match o.attack {
        AttackArg::Fgsm => AttackKind::Fgsm,
        AttackArg::Pgd => AttackKind::Pgd,
    };
    Ok((b, kind))
}

struct Loaded {
    cfg: RunConfig,
    data: Tensor,
    labels: Vec<usize>,
    classifier: lorid_core::attacks::ToyClassifier,
    denoiser: DenoiserArtifact,
    basis: Option<TuckerBasis>,
}

fn load_models(m: &ModelPaths) -> Result<Loaded, CliError> {
    let cfg = RunConfig::load(&m.config)?;
    let schedule = cfg.schedule()?;
    if cfg.use_tucker && m.basis.is_none() {
        return Err(usage("config sets use_tucker = true but no --basis was given"));
    }
    Ok(Loaded {
        data: load_tensor(&m.data)?,
        labels: tensor_to_labels(&load_tensor(&m.labels)?)?,
        classifier: load_classifier(&m.classifier)?,
        denoiser: load_denoiser(&m.denoiser, &schedule)?,
        basis: load_optional_basis(m.basis.as_deref())?,
        cfg,
    })
}

pub fn attack_eval(a: AttackEvalArgs) -> CmdResult {
    let (b, kind) = budget(&a.attack)?;
    let m = load_models(&a.models)?;
    let schedule = m.cfg.schedule()?;
    let mut base = m.cfg.clone();
    base.use_tucker = false;
    let mut defenses = Vec::new();
    let single = {
        let mut c = base.clone();
        c.loops = 1;
        c.lorid_config(None)?
    };
    defenses.push(("single".to_string(), Defense::Lorid(single)));
    if m.cfg.loops > 1 {
        defenses.push(("loop".to_string(), Defense::Lorid(base.lorid_config(None)?)));
    }
    if let Some(basis) = &m.basis {
        defenses.push(("tf".to_string(), Defense::TuckerOnly(basis.clone())));
        let mut full = m.cfg.clone();
        full.use_tucker = true;
        defenses.push(("lorid".to_string(), Defense::Lorid(full.lorid_config(Some(basis.clone()))?)));
    }
    let table = evaluate(
        &m.classifier,
        &defenses,
        &m.data,
        &m.labels,
        &b,
        kind,
        &m.denoiser,
        &schedule,
        m.cfg.seed,
    )?;
    print!("{}", table.to_text());
    let mut csv = CsvTable::new(&["defense", "clean_accuracy", "robust_accuracy"]);
    for row in table.csv_rows() {
        csv.push(&row);
    }
    csv.save(&a.out)?;
    Ok(Outcome::Done)
}

pub fn calibrate(a: CalibrateArgs) -> CmdResult {
    if a.t_grid.is_empty() || a.l_grid.is_empty() {
        return Err(usage("--t-grid and --L-grid must be non-empty"));
    }
    let (b, kind) = budget(&a.attack)?;
    let m = load_models(&a.models)?;
    let schedule = m.cfg.schedule()?;
    let basis = if m.cfg.use_tucker { m.basis.as_ref() } else { None };
    let cal = lab::calibrate(
        &m.classifier,
        &m.denoiser,
        &schedule,
        basis,
        &m.data,
        &m.labels,
        &b,
        kind,
        &a.t_grid,
        &a.l_grid,
        m.cfg.seed,
    )?;
    cal.to_csv().save(&a.out)?;
    match cal.recommended {
        Some(c) => println!(
            "recommended t = {}, L = {} (clean {:.4}, robust {:.4})",
            c.t, c.loops, c.clean_accuracy, c.robust_accuracy
        ),
        None => println!("no recommendation"),
    }
    Ok(Outcome::Done)
}
