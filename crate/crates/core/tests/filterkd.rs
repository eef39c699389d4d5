use approx::assert_abs_diff_eq;
use forcelab::filterkd::*;
use forcelab::mathcore::*;
use forcelab::training::*;
use forcelab::LabError;
use rand::Rng;

fn toy_sets(seed: u64) -> (TrainSet, TrainSet) {
    let mut rng = seeded(seed);
    let xs: Vec<Vector> = (0..40).map(|_| normal_vector(3, &mut rng)).collect();
    let ys: Vec<usize> = xs.iter().map(|x| if x[0] > 0.0 { 0 } else if x[1] > 0.0 { 1 } else { 2 }).collect();
    (
        TrainSet::from_labels(&xs[..30], &ys[..30], 3).unwrap(),
        TrainSet::from_labels(&xs[30..], &ys[30..], 3).unwrap(),
    )
}

fn kd(alpha: f64, mode: KdMode, epochs: usize, batch: usize) -> KdConfig {
    let t = TrainConfig { eta: 0.1, epochs, batch_size: batch, patience: Some(100), ..Default::default() };
    KdConfig { alpha, teacher: t.clone(), student: t, mode, restore_best: false }
}

fn predictions(model: &MlpModel, data: &TrainSet) -> Matrix {
    let cols: Vec<Vector> = (0..data.len()).map(|i| model.predict(&data.input(i)).unwrap().into_vector()).collect();
    Matrix::from_columns(&cols)
}

#[test]
fn full_batch_alpha_one_table_is_current_epoch_prediction() {
    let (tr, va) = toy_sets(1);
    let init = MlpModel::random(&[3, 8, 3], Activation::Tanh, &mut seeded(2)).unwrap();
    let out = train_teacher(init.clone(), &tr, &va, &kd(1.0, KdMode::Eskd, 2, 30)).unwrap();
    // with one step per epoch, epoch 2 sees the model after epoch 1
    let cfg1 = TrainConfig { eta: 0.1, epochs: 1, batch_size: 30, ..Default::default() };
    let after1 = train(init, &tr, None, &cfg1, &mut NoObserver).unwrap().model;
    assert!((&out.final_table.rows - predictions(&after1, &tr)).abs().max() < 1e-12);
    assert!(out.final_table.update_counts.iter().all(|&c| c == 2));
}

#[test]
fn one_recursion_step_mixes_init_and_epoch_prediction() {
    let (tr, va) = toy_sets(3);
    let init = MlpModel::random(&[3, 8, 3], Activation::Tanh, &mut seeded(4)).unwrap();
    let out = train_teacher(init.clone(), &tr, &va, &kd(0.05, KdMode::FilterKd, 2, 30)).unwrap();
    let p0 = predictions(&init, &tr);
    let cfg1 = TrainConfig { eta: 0.1, epochs: 1, batch_size: 30, ..Default::default() };
    let p1 = predictions(&train(init, &tr, None, &cfg1, &mut NoObserver).unwrap().model, &tr);
    // epoch 1 sees p0 (no change), epoch 2 sees p1
    let expected = &p0 * 0.95 + &p1 * 0.05;
    assert!((&out.final_table.rows - expected).abs().max() < 1e-12);
}

#[test]
fn table_rows_stay_on_simplex_and_match_stop_epoch() {
    let (tr, va) = toy_sets(5);
    let init = MlpModel::random(&[3, 8, 3], Activation::Tanh, &mut seeded(6)).unwrap();
    let mut cfg = kd(0.05, KdMode::FilterKd, 60, 1);
    cfg.teacher.patience = Some(5);
    let out = train_teacher(init, &tr, &va, &cfg).unwrap();
    assert!(out.stop_epoch >= 1);
    assert!(out.table.update_counts.iter().all(|&c| c == out.stop_epoch));
    for i in 0..out.table.len() {
        let r = out.table.row(i).unwrap();
        assert!((r.as_vector().sum() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn eskd_equals_filter_with_alpha_one() {
    let (tr, va) = toy_sets(7);
    let init = MlpModel::random(&[3, 8, 3], Activation::Tanh, &mut seeded(8)).unwrap();
    let a = train_teacher(init.clone(), &tr, &va, &kd(1.0, KdMode::FilterKd, 20, 1)).unwrap();
    let b = train_teacher(init, &tr, &va, &kd(0.05, KdMode::Eskd, 20, 1)).unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.stop_epoch, b.stop_epoch);
}

#[test]
fn one_hot_targets_reproduce_standard_training() {
    let (tr, _) = toy_sets(9);
    let init = MlpModel::random(&[3, 8, 3], Activation::Tanh, &mut seeded(10)).unwrap();
    let cfg = TrainConfig { eta: 0.1, epochs: 5, batch_size: 4, seed: 3, ..Default::default() };
    let table = EmaTable::new(tr.targets.clone(), 1.0);
    let student = train_student(init.clone(), &tr.inputs, &table, &cfg).unwrap();
    let reference = train(init, &tr, None, &cfg, &mut NoObserver).unwrap().model;
    assert_eq!(student, reference);
}

#[test]
fn own_predictions_as_targets_give_zero_gap() {
    let (tr, _) = toy_sets(11);
    let model = MlpModel::random(&[3, 8, 3], Activation::Tanh, &mut seeded(12)).unwrap();
    let own = predictions(&model, &tr);
    let logits = model.forward_batch(&tr.inputs).unwrap();
    let (_, dz, _) = logit_grad(&logits, &own, &[3], LossKind::Ce);
    assert!(dz.abs().max() < 1e-15);
    let cfg = TrainConfig { eta: 0.1, epochs: 1, batch_size: 30, ..Default::default() };
    let moved = train_student(model.clone(), &tr.inputs, &EmaTable::new(own, 1.0), &cfg).unwrap();
    assert!((moved.params() - model.params()).abs().max() < 1e-15);
}

#[test]
fn misaligned_table_is_rejected() {
    let (tr, _) = toy_sets(13);
    let model = MlpModel::random(&[3, 4, 3], Activation::Tanh, &mut seeded(1)).unwrap();
    let table = EmaTable::new(Matrix::from_element(3, 5, 1.0 / 3.0), 1.0);
    let cfg = TrainConfig::default();
    assert!(matches!(train_student(model, &tr.inputs, &table, &cfg), Err(LabError::Shape(_))));
}

#[test]
fn supervision_quality_examples() {
    let q = vec![ProbVector::from_slice(&[0.2, 0.8]).unwrap(); 3];
    assert_eq!(supervision_quality(&q, &q).unwrap(), 0.0);
    let hard = supervision_quality(&[ProbVector::one_hot(3, 0).unwrap()], &[ProbVector::one_hot(3, 2).unwrap()]).unwrap();
    assert_abs_diff_eq!(hard, 2f64.sqrt(), epsilon = 1e-15);
    let mut rng = seeded(14);
    let a: Vec<ProbVector> = (0..10).map(|_| softmax(&normal_vector(4, &mut rng)).unwrap()).collect();
    let b: Vec<ProbVector> = (0..10).map(|_| softmax(&normal_vector(4, &mut rng)).unwrap()).collect();
    let mut manual = 0.0;
    for (x, y) in a.iter().zip(&b) {
        let mut s = 0.0;
        for k in 0..4 {
            s += (x.get(k) - y.get(k)).powi(2);
        }
        manual += s.sqrt();
    }
    assert_abs_diff_eq!(supervision_quality(&a, &b).unwrap(), manual / 10.0, epsilon = 1e-14);
}

#[test]
fn ece_examples() {
    assert_eq!(ece(&[1.0; 8], &[true; 8], 10).unwrap(), 0.0);
    let correct: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
    assert_abs_diff_eq!(ece(&[1.0; 10], &correct, 10).unwrap(), 0.5, epsilon = 1e-15);
    // bins: (0.9,1]: {.95 ok, .95 miss} → |0.5−0.95|·2/4; (0.5,0.6]: |1−.55|/4; (0.6,0.7]: |1−.65|/4
    let v = ece(&[0.95, 0.95, 0.55, 0.65], &[true, false, true, true], 10).unwrap();
    assert_abs_diff_eq!(v, 0.45 * 0.5 + 0.45 * 0.25 + 0.35 * 0.25, epsilon = 1e-12);
    // right-closed edges: 0.6 belongs to (0.5, 0.6]
    assert_abs_diff_eq!(ece(&[0.6, 0.61], &[true, false], 10).unwrap(), 0.5 * 0.4 + 0.5 * 0.61, epsilon = 1e-12);
}

#[test]
fn matching_targets_zero_every_bound() {
    let mut rng = seeded(15);
    let mut inst = RiskInstance::random(3, 6, 1.0, &mut rng);
    inst.q_tar = inst.q_star.clone();
    let b = risk_bound_terms(&inst, 1.0, 50, 2000, &mut rng).unwrap();
    assert!(b.forms.iter().all(|f| f.xi == Some(0.0)));
    assert_abs_diff_eq!(b.exact_lhs, b.variance_term, epsilon = 1e-15);
}

#[test]
fn bound_forms_respect_norm_and_pinsker_orderings() {
    let mut rng = seeded(16);
    for _ in 0..200 {
        let inst = RiskInstance::random(rng.random_range(2..6), 8, 2.0, &mut rng);
        let b = risk_bound_terms(&inst, 2.0, 10, 10, &mut rng).unwrap();
        let xi = |name: &str| b.forms.iter().find(|f| f.name == name).unwrap().xi.unwrap();
        assert!(xi("l1") <= xi("l2") + 1e-12);
        assert!(xi("l1") <= xi("sqrt_kl_tar_star") + 1e-12);
        assert!(xi("l1") <= xi("sqrt_kl_star_tar") + 1e-12);
        assert!(xi("sqrt_kl_tar_star") <= xi("kl_tar_star") + 1e-12);
        assert!(xi("sqrt_kl_star_tar") <= xi("kl_star_tar") + 1e-12);
        let jeff = xi("jeffreys");
        assert_abs_diff_eq!(jeff, 0.5 * (xi("kl_tar_star") + xi("kl_star_tar")), epsilon = 1e-12);
        assert!(b.exact_lhs <= b.tightest().unwrap() + 1e-12);
    }
}

#[test]
fn kl_forms_undefined_on_support_mismatch() {
    let mut rng = seeded(17);
    let mut inst = RiskInstance::random(3, 2, 1.0, &mut rng);
    inst.q_star[0] = ProbVector::one_hot(3, 0).unwrap();
    let b = risk_bound_terms(&inst, 1.0, 5, 10, &mut rng).unwrap();
    let by = |n: &str| b.forms.iter().find(|f| f.name == n).unwrap().xi;
    assert!(by("kl_tar_star").is_none());
    assert!(by("jeffreys").is_none());
    assert!(by("kl_star_tar").is_some());
    assert!(by("l2").is_some());
    assert!(kl_divergence(&ProbVector::uniform(2), &ProbVector::one_hot(2, 0).unwrap()).is_none());
}

#[test]
fn monte_carlo_lhs_matches_closed_form() {
    let mut rng = seeded(18);
    for _ in 0..10 {
        let inst = RiskInstance::random(3, 5, 1.0, &mut rng);
        let b = risk_bound_terms(&inst, 1.0, 50, 20_000, &mut rng).unwrap();
        assert!((b.mc_lhs / b.exact_lhs - 1.0).abs() < 0.06, "{} vs {}", b.mc_lhs, b.exact_lhs);
    }
}

#[test]
fn loss_above_bound_is_rejected() {
    let mut rng = seeded(19);
    let inst = RiskInstance::random(3, 4, 2.0, &mut rng);
    assert!(risk_bound_terms(&inst, 0.5, 10, 10, &mut rng).is_err());
}

#[test]
fn restore_best_hands_over_the_best_epoch_table() {
    let (tr, va) = toy_sets(5);
    let init = MlpModel::random(&[3, 8, 3], Activation::Tanh, &mut seeded(6)).unwrap();
    let mut cfg = kd(0.05, KdMode::FilterKd, 60, 1);
    cfg.teacher.patience = Some(5);
    let last = train_teacher(init.clone(), &tr, &va, &cfg).unwrap();
    cfg.restore_best = true;
    let best = train_teacher(init, &tr, &va, &cfg).unwrap();
    assert!(best.stop_epoch <= last.stop_epoch);
    assert!(best.table.update_counts.iter().all(|&c| c == best.stop_epoch));
    assert_eq!(best.final_table, last.final_table);
}
