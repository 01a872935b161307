use lorid_core::attacks::{AttackBudget, AttackKind, AttackNorm};
use lorid_core::data::{gen_striped_images, StripeSpec};
use lorid_core::lab::{calibrate, striped_task, train_toy_models, ToySettings};
use lorid_core::linalg::svd;
use lorid_core::tensor::unfold;
use lorid_core::tucker::TensorizationLayout;
use lorid_core::Schedule;

#[test]
fn stripe_patches_are_low_rank() {
    let (x, _) = gen_striped_images(200, &StripeSpec::default(), 5).unwrap();
    let layout = TensorizationLayout::new(&[16, 16, 1], 4).unwrap();
    let t = layout.tensorize_batch(&x).unwrap();
    // Mode 3 of the per-image tensor is the within-patch pixel mode, which
    // becomes mode 3 of the batched tensor as well after the sample mode.
    let m = unfold(&t, 3).unwrap();
    let s = svd(&m).unwrap().s;
    let total: f64 = s.iter().map(|v| v * v).sum();
    let top2 = s[0] * s[0] + s[1] * s[1];
    assert!(top2 / total >= 0.9, "top-2 energy fraction {}", top2 / total);
}

fn budget() -> AttackBudget {
    AttackBudget {
        norm: AttackNorm::Linf,
        epsilon: 0.3,
        steps: 10,
        step_size: 0.075,
        clamp: Some((-1.0, 1.0)),
    }
}

#[test]
fn clean_accuracy_falls_with_diffusion_depth() {
    let s = Schedule::default();
    let task = striped_task(200, 40, 10, &StripeSpec::default(), 7).unwrap();
    let models = train_toy_models(&task, &ToySettings::default(), &s, 7).unwrap();
    let t_grid = [20, 200, 600];
    let l_grid = [1, 2];
    let cal = calibrate(
        &models.classifier,
        &models.denoiser,
        &s,
        Some(&models.basis),
        &task.val,
        &task.val_labels,
        &budget(),
        AttackKind::Pgd,
        &t_grid,
        &l_grid,
        7,
    )
    .unwrap();
    assert_eq!(cal.cells.len(), 6);
    let avg: Vec<f64> = t_grid
        .iter()
        .map(|&t| {
            let row: Vec<f64> = cal.cells.iter().filter(|c| c.t == t).map(|c| c.clean_accuracy).collect();
            row.iter().sum::<f64>() / row.len() as f64
        })
        .collect();
    assert!(avg.windows(2).all(|w| w[1] <= w[0]), "grid-average clean accuracy {avg:?}");
    assert!(avg[2] < avg[0]);

    let rec = cal.recommended.unwrap();
    let best = cal.cells.iter().map(|c| c.clean_accuracy).fold(0.0, f64::max);
    assert!(rec.clean_accuracy >= best - cal.clean_slack);
    let again = calibrate(
        &models.classifier,
        &models.denoiser,
        &s,
        Some(&models.basis),
        &task.val,
        &task.val_labels,
        &budget(),
        AttackKind::Pgd,
        &t_grid[..1],
        &l_grid,
        7,
    )
    .unwrap();
    assert_eq!(again.cells[..], cal.cells[..2]);
}

#[test]
fn task_splits_are_disjoint_and_balanced() {
    let task = striped_task(10, 6, 4, &StripeSpec::default(), 1).unwrap();
    assert_eq!(task.train.shape(), &[10, 16, 16, 1]);
    assert_eq!(task.val.shape()[0], 6);
    assert_eq!(task.test.shape()[0], 4);
    assert_eq!(task.train_labels.iter().filter(|&&y| y == 1).count(), 5);
    assert_ne!(task.train.slice_first(0).unwrap(), task.val.slice_first(0).unwrap());
    assert!(striped_task(1, 6, 4, &StripeSpec::default(), 1).is_err());
}
