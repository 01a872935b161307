//! End-to-end toy robustness experiment on the stripe task and the `(t, L)`
//! calibration sweep.

use crate::attacks::{
    attack_batch, evaluate, train_classifier, AccuracyTable, AttackBudget, AttackKind, ClassifierConfig, Defense,
    ToyClassifier,
};
use crate::data::{gen_striped_images, StripeSpec};
use crate::diffusion::{Denoiser, GaussianOracleDenoiser, Schedule};
use crate::error::{ensure, Result};
use crate::io::CsvTable;
use crate::purify::{purify_batch, LoridConfig};
use crate::rng::seeded;
use crate::tensor::Tensor;
use crate::tucker::{fit_basis, RankPolicy, TensorizationLayout, TuckerBasis};

/// Train/validation/test splits of a labelled image task.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub train: Tensor,
    pub train_labels: Vec<usize>,
    pub val: Tensor,
    pub val_labels: Vec<usize>,
    pub test: Tensor,
    pub test_labels: Vec<usize>,
}

fn split(x: &Tensor, y: &[usize], from: usize, to: usize) -> Result<(Tensor, Vec<usize>)> {
    let items: Vec<Tensor> = (from..to).map(|i| x.slice_first(i)).collect::<Result<_>>()?;
    Ok((Tensor::stack(&items)?, y[from..to].to_vec()))
}

pub fn striped_task(n_train: usize, n_val: usize, n_test: usize, spec: &StripeSpec, seed: u64) -> Result<ToyTask> {
    ensure!(n_train >= 2 && n_val >= 2 && n_test >= 2, InvalidArgument, "every split needs >= 2 samples");
    let (x, y) = gen_striped_images(n_train + n_val + n_test, spec, seed)?;
    let (train, train_labels) = split(&x, &y, 0, n_train)?;
    let (val, val_labels) = split(&x, &y, n_train, n_train + n_val)?;
    let (test, test_labels) = split(&x, &y, n_train + n_val, n_train + n_val + n_test)?;
    Ok(ToyTask {
        train,
        train_labels,
        val,
        val_labels,
        test,
        test_labels,
    })
}

/// Everything trained on the clean training split.
#[derive(Debug, Clone)]
pub struct ToyModels {
    pub classifier: ToyClassifier,
    pub denoiser: GaussianOracleDenoiser,
    pub basis: TuckerBasis,
}

#[derive(Debug, Clone)]
pub struct ToySettings {
    pub classifier: ClassifierConfig,
    pub patch: usize,
    pub rank_policy: RankPolicy,
    /// Ridge added to the fitted data covariance.
    pub ridge: f64,
}

impl Default for ToySettings {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            patch: 4,
            rank_policy: RankPolicy::default(),
            ridge: 1e-4,
        }
    }
}

pub fn train_toy_models(task: &ToyTask, settings: &ToySettings, schedule: &Schedule, seed: u64) -> Result<ToyModels> {
    let (classifier, _) = train_classifier(&task.train, &task.train_labels, &settings.classifier, &mut seeded(seed))?;
    let denoiser = GaussianOracleDenoiser::fit(&task.train, settings.ridge, schedule.clone())?;
    let layout = TensorizationLayout::new(&task.train.shape()[1..], settings.patch)?;
    let basis = fit_basis(&task.train, layout, &settings.rank_policy)?;
    Ok(ToyModels {
        classifier,
        denoiser,
        basis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationCell {
    pub t: usize,
    pub loops: usize,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub cells: Vec<CalibrationCell>,
    /// Highest robust accuracy among cells whose clean accuracy is within
    /// `clean_slack` of the best clean accuracy; ties go to smaller `t`,
    /// then smaller `L`.
    pub recommended: Option<CalibrationCell>,
    pub clean_slack: f64,
}

impl Calibration {
    /// Columns: `t,L,clean_accuracy,robust_accuracy,recommended`.
    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["t", "L", "clean_accuracy", "robust_accuracy", "recommended"]);
        for c in &self.cells {
            let rec = self.recommended.is_some_and(|r| r.t == c.t && r.loops == c.loops);
            table.push(&[
                c.t.to_string(),
                c.loops.to_string(),
                c.clean_accuracy.to_string(),
                c.robust_accuracy.to_string(),
                u8::from(rec).to_string(),
            ]);
        }
        table
    }
}

pub const DEFAULT_CLEAN_SLACK: f64 = 0.03;

/// Clean and robust accuracy of LoRID over a `(t, L)` grid. Adversarial
/// inputs are generated once against the bare classifier.
#[allow(clippy::too_many_arguments)]
pub fn calibrate(
    clf: &ToyClassifier,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    basis: Option<&TuckerBasis>,
    data: &Tensor,
    labels: &[usize],
    budget: &AttackBudget,
    attack: AttackKind,
    t_grid: &[usize],
    l_grid: &[usize],
    seed: u64,
) -> Result<Calibration> {
    ensure!(!t_grid.is_empty() && !l_grid.is_empty(), InvalidArgument, "empty calibration grid");
    let adversarial = attack_batch(clf, data, labels, budget, attack, seed)?;
    let mut cells = Vec::with_capacity(t_grid.len() * l_grid.len());
    for &t in t_grid {
        for &l in l_grid {
            let mut cfg = LoridConfig::new(t, l);
            if let Some(b) = basis {
                cfg = cfg.with_basis(b.clone());
            }
            cfg.validate(schedule)?;
            cfg.seed = seed.wrapping_add(1);
            let clean = purify_batch(data, &cfg, denoiser, schedule)?;
            cfg.seed = seed.wrapping_add(2);
            let robust = purify_batch(&adversarial, &cfg, denoiser, schedule)?;
            cells.push(CalibrationCell {
                t,
                loops: l,
                clean_accuracy: clf.accuracy(&clean, labels)?,
                robust_accuracy: clf.accuracy(&robust, labels)?,
            });
        }
    }
    let best_clean = cells.iter().map(|c| c.clean_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let recommended = cells
        .iter()
        .filter(|c| c.clean_accuracy >= best_clean - DEFAULT_CLEAN_SLACK - 1e-12)
        .fold(None::<CalibrationCell>, |best, c| match best {
            Some(b) if b.robust_accuracy >= c.robust_accuracy => Some(b),
            _ => Some(*c),
        });
    Ok(Calibration {
        cells,
        recommended,
        clean_slack: DEFAULT_CLEAN_SLACK,
    })
}

/// Accuracy table for no defense, TF only, loop-only and full LoRID at
/// the given `(t, L)`.
#[allow(clippy::too_many_arguments)]
pub fn robustness_table(
    models: &ToyModels,
    schedule: &Schedule,
    data: &Tensor,
    labels: &[usize],
    budget: &AttackBudget,
    attack: AttackKind,
    t: usize,
    loops: usize,
    seed: u64,
) -> Result<AccuracyTable> {
    let defenses = vec![
        ("tf".to_string(), Defense::TuckerOnly(models.basis.clone())),
        ("single".to_string(), Defense::Lorid(LoridConfig::new(t, 1))),
        ("loop".to_string(), Defense::Lorid(LoridConfig::new(t, loops))),
        (
            "lorid".to_string(),
            Defense::Lorid(LoridConfig::new(t, loops).with_basis(models.basis.clone())),
        ),
    ];
    evaluate(
        &models.classifier,
        &defenses,
        data,
        labels,
        budget,
        attack,
        &models.denoiser,
        schedule,
        seed,
    )
}
