use approx::assert_abs_diff_eq;
use forcelab::feature_adapt::*;
use forcelab::mathcore::*;
use forcelab::LabError;
use rayon::prelude::*;

fn regression_problem(n: usize, d: usize, h: usize, seed: u64) -> (OpmState, Matrix, Vector) {
    let mut rng = seeded(seed);
    let model = OpmState::random(d, h, 1, 1.0, &mut rng).unwrap();
    let x = normal_matrix(n, d, &mut rng);
    let y = normal_vector(n, &mut rng);
    (model, x, y)
}

#[test]
fn flat_backbone_round_trips() {
    let (mut model, _, _) = regression_problem(4, 3, 8, 1);
    let b = model.flat_backbone();
    assert_eq!(b[1], model.backbone[(1, 0)]);
    assert_eq!(b[8], model.backbone[(0, 1)]);
    let before = model.backbone.clone();
    model.set_flat_backbone(&b).unwrap();
    assert_eq!(model.backbone, before);
    assert!(model.set_flat_backbone(&Vector::zeros(5)).is_err());
    assert!(OpmState::new(Matrix::zeros(2, 3), Matrix::zeros(1, 2)).is_err());
}

#[test]
fn zero_epoch_probe_keeps_the_initial_head() {
    let spec = AdaptSpec { head_scale: 1e-3, ..Default::default() };
    let (x, task, model) = adapt_problem(&spec).unwrap();
    let hp = head_probe(&model, &x, &task, &HpConfig { tau: 0, eta_hp: 1.0, lr: 0.1 }).unwrap();
    assert_eq!(hp.head, model.head);
    // a tiny head predicts close to uniform
    assert!(hp.predictions.iter().all(|p| (p - 1.0 / 3.0).abs() < 0.05));
}

#[test]
fn long_regression_probe_fits_the_targets() {
    let (model, x, y) = regression_problem(5, 8, 16, 2);
    let h = model.features(&x).unwrap();
    let top = (h.transpose() * &h / 5.0).symmetric_eigen().eigenvalues.max();
    let task = OpmTask::Regression { targets: y.clone() };
    let hp = head_probe(&model, &x, &task, &HpConfig { tau: 200_000, eta_hp: 1.0, lr: 1.0 / top }).unwrap();
    for n in 0..5 {
        assert_abs_diff_eq!(hp.predictions[(n, 0)], y[n], epsilon = 1e-6);
    }
    assert!(hp.train_accuracy.is_none());
}

fn reserve_floor(classes: usize, eta: f64) -> f64 {
    (1.0 - eta) * ((classes - 1) as f64 / classes as f64).sqrt()
}

#[test]
fn smoothed_probe_keeps_average_energy_above_the_reserve() {
    for seed in 0..5 {
        let mut spec = AdaptSpec::default();
        spec.data.seed = seed;
        let (x, task, model) = adapt_problem(&spec).unwrap();
        let floor = reserve_floor(3, 0.9);
        for tau in [0, 4, 32, 256, 2048, 8192] {
            let hp = head_probe(&model, &x, &task, &HpConfig { tau, eta_hp: 0.9, lr: spec.hp_lr }).unwrap();
            let energy = aie(&hp.predictions, &task).unwrap();
            assert!(energy >= floor, "seed {seed}, tau {tau}: {energy} < {floor}");
        }
    }
}

#[test]
fn converged_smoothed_probe_reserves_exactly_the_floor() {
    // fewer examples than input dims, so every smoothed target is reachable
    let mut spec = AdaptSpec::default();
    spec.data.n = 12;
    spec.data.dim = 16;
    let (x, task, model) = adapt_problem(&spec).unwrap();
    let OpmTask::Classification { labels, .. } = &task else { unreachable!() };
    let floor = reserve_floor(3, 0.9);
    let hp = head_probe(&model, &x, &task, &HpConfig { tau: 30_000, eta_hp: 0.9, lr: spec.hp_lr }).unwrap();
    for (n, &y) in labels.iter().enumerate() {
        let mut e = hp.predictions.row(n).transpose();
        e[y] -= 1.0;
        assert_abs_diff_eq!(e.norm(), floor, epsilon = 1e-4);
    }
}

#[test]
fn aie_examples() {
    let task = OpmTask::Classification { labels: vec![0, 1, 1], classes: 2 };
    let exact = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    assert_eq!(aie(&exact, &task).unwrap(), 0.0);
    let uniform = Matrix::from_element(3, 2, 0.5);
    assert_abs_diff_eq!(aie(&uniform, &task).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
    let reg = OpmTask::Regression { targets: Vector::from_vec(vec![1.0, -1.0]) };
    assert_abs_diff_eq!(aie(&Matrix::from_column_slice(2, 1, &[0.5, 0.0]), &reg).unwrap(), 0.75, epsilon = 1e-15);
    assert!(aie(&uniform, &reg).is_err());
}

#[test]
fn aie_does_not_grow_with_probe_length() {
    let spec = AdaptSpec::default();
    let (x, task, model) = adapt_problem(&spec).unwrap();
    let taus = [0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024];
    let energies: Vec<f64> = taus
        .iter()
        .map(|&tau| aie(&head_probe(&model, &x, &task, &HpConfig { tau, eta_hp: 1.0, lr: spec.hp_lr }).unwrap().predictions, &task).unwrap())
        .collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{energies:?}");
}

#[test]
fn metrics_examples() {
    let mut rng = seeded(3);
    let h0 = normal_matrix(6, 4, &mut rng);
    let norm0 = h0.row_iter().map(|r| r.norm_squared()).sum::<f64>() / 6.0;

    let same = adapt_metrics(&h0, &h0).unwrap();
    assert_abs_diff_eq!(same.d_euc, 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(same.d_dot, norm0, epsilon = 1e-12);
    assert_abs_diff_eq!(same.norm_t, norm0, epsilon = 1e-12);
    assert_abs_diff_eq!(same.cosine, 1.0, epsilon = 1e-12);

    let stretched = adapt_metrics(&h0, &(&h0 * 2.0)).unwrap();
    assert_abs_diff_eq!(stretched.cosine, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(stretched.d_dot, 2.0 * norm0, epsilon = 1e-12);

    let flipped = adapt_metrics(&h0, &(-&h0)).unwrap();
    assert_abs_diff_eq!(flipped.cosine, -1.0, epsilon = 1e-12);

    let ht = normal_matrix(6, 4, &mut rng);
    let m = adapt_metrics(&h0, &ht).unwrap();
    assert!((m.d_euc - (m.norm_t - 2.0 * m.d_dot + m.norm_0)).abs() < 1e-10);
    assert!((-1.0..=1.0).contains(&m.cosine));

    let mut with_zero = h0.clone();
    with_zero.row_mut(2).fill(0.0);
    assert_eq!(adapt_metrics(&with_zero, &ht).unwrap().cosine_skipped, 1);
    assert!(adapt_metrics(&h0, &Matrix::zeros(5, 4)).is_err());
}

#[test]
fn converged_backbone_stays_put_when_targets_are_met() {
    let (model, x, y) = regression_problem(5, 3, 8, 4);
    let w0 = model.head.row(0).transpose();
    let b0 = model.flat_backbone();
    let q0 = &x * model.backbone.transpose() * &w0;
    let sol = ntk_converged(&b0, &x, &q0, &q0, &w0).unwrap();
    assert!((&sol.backbone - &b0).amax() < 1e-12);
    let zeros = Vector::zeros(5);
    let sol = ntk_converged(&b0, &x, &zeros, &zeros, &w0).unwrap();
    assert!((&sol.backbone - &b0).amax() < 1e-12);
    let _ = y;
}

/// Jacobian of `q = wᵀB x` over the rows of `x` w.r.t. `(w, vec(B))`,
/// assembled entry by entry.
fn joint_jacobian(b: &Matrix, w: &Vector, x: &Matrix) -> Matrix {
    let (h, d) = b.shape();
    let n = x.nrows();
    let mut j = Matrix::zeros(n, h + h * d);
    for r in 0..n {
        let feat = b * x.row(r).transpose();
        for i in 0..h {
            j[(r, i)] = feat[i];
        }
        for col in 0..d {
            for i in 0..h {
                j[(r, h + col * h + i)] = w[i] * x[(r, col)];
            }
        }
    }
    j
}

/// Plain gradient descent on the linearized squared loss from `(w₀, b₀)`
/// until the step is negligible; returns the backbone part.
fn linearized_gd(model: &OpmState, x: &Matrix, y: &Vector) -> Vector {
    let w0 = model.head.row(0).transpose();
    let j = joint_jacobian(&model.backbone, &w0, x);
    let q0 = &x.clone() * model.backbone.transpose() * &w0;
    let lr = 1.0 / (j.transpose() * &j).symmetric_eigen().eigenvalues.max();
    let mut delta = Vector::zeros(j.ncols());
    for _ in 0..2_000_000 {
        let resid = &q0 + &j * &delta - y;
        let step = j.transpose() * resid * lr;
        delta -= &step;
        if step.amax() < 1e-15 {
            break;
        }
    }
    let h = model.hidden();
    model.flat_backbone() + delta.rows(h, delta.len() - h)
}

#[test]
fn closed_form_matches_long_run_gradient_descent() {
    for seed in 0..3 {
        // more samples than input dims: the kernel is singular
        let (model, x, y) = regression_problem(5, 3, 8, 10 + seed);
        let w0 = model.head.row(0).transpose();
        let q0 = &x * model.backbone.transpose() * &w0;
        let sol = ntk_converged(&model.flat_backbone(), &x, &y, &q0, &w0).unwrap();
        assert!(sol.pseudo_inverse && sol.warning().is_some());
        let gd = linearized_gd(&model, &x, &y);
        assert!((&sol.backbone - &gd).amax() < 1e-6, "gap {}", (&sol.backbone - &gd).amax());

        let (model, x, y) = regression_problem(3, 5, 8, 20 + seed);
        let w0 = model.head.row(0).transpose();
        let q0 = &x * model.backbone.transpose() * &w0;
        let sol = ntk_converged(&model.flat_backbone(), &x, &y, &q0, &w0).unwrap();
        assert!(!sol.pseudo_inverse && sol.condition.is_finite());
        let gd = linearized_gd(&model, &x, &y);
        assert!((&sol.backbone - &gd).amax() < 1e-6);
    }
}

#[test]
fn converged_point_has_no_residual_gradient() {
    let (model, x, y) = regression_problem(4, 6, 12, 30);
    let w0 = model.head.row(0).transpose();
    let b0 = model.flat_backbone();
    let q0 = &x * model.backbone.transpose() * &w0;
    let sol = ntk_converged(&b0, &x, &y, &q0, &w0).unwrap();
    // the head part of the same solution, built from the kernel directly
    let kernel = opm_kernel(&model.backbone, &x, &w0).unwrap();
    let c = kernel.cholesky().unwrap().solve(&(&q0 - &y));
    let jw = &x * model.backbone.transpose();
    let w_inf = &w0 - jw.transpose() * &c;
    let j = joint_jacobian(&model.backbone, &w0, &x);
    let mut delta = Vector::zeros(j.ncols());
    delta.rows_mut(0, 12).copy_from(&(w_inf - &w0));
    delta.rows_mut(12, b0.len()).copy_from(&(&sol.backbone - &b0));
    let resid = &q0 + &j * &delta - &y;
    let grad_b = j.columns(12, b0.len()).transpose() * &resid;
    assert!(grad_b.amax() < 1e-8, "{}", grad_b.amax());
}

#[test]
fn sweep_peaks_near_half_and_distance_grows_toward_zero() {
    let grid = sweep_grid(21).unwrap();
    for seed in 0..5 {
        let inst = OpmInstance::random(&OpmSpec { seed, ..Default::default() }).unwrap();
        let t = sweep_q0(&inst, &grid).unwrap();
        assert!((t.argmax_tr_bt_b0 - 0.5).abs() <= 0.05 + 1e-9, "seed {seed}: {}", t.argmax_tr_bt_b0);
        assert!(t.d_euc_rises_toward_zero);
        let at_one = t.rows.iter().find(|r| r.s == 1.0).unwrap();
        assert!(at_one.d_euc < 1e-20);
        assert_abs_diff_eq!(at_one.tr_bt_b0, inst.backbone.norm_squared(), epsilon = 1e-9);
        assert_abs_diff_eq!(at_one.cosine, 1.0, epsilon = 1e-12);
        assert_eq!(t.tr_bt_b0_segments.len(), 2);
        assert!(t.tr_bt_b0_segments[0].rising && !t.tr_bt_b0_segments[1].rising);
        // head built for q₀ = s·Y does produce s·Y
        let half = t.rows.iter().find(|r| (r.s - 0.5).abs() < 1e-12).unwrap();
        let mean_abs_y = inst.y.iter().map(|v| v.abs()).sum::<f64>() / inst.y.len() as f64;
        assert_abs_diff_eq!(half.aie, 0.5 * mean_abs_y, epsilon = 1e-9);
    }
    assert!(sweep_grid(10).is_err());
}

#[test]
fn trend_segments_split_at_turns() {
    let s = trend_segments(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 2.0, 1.0, 0.5]);
    assert_eq!(s, vec![Segment { from: 0.0, to: 2.0, rising: true }, Segment { from: 2.0, to: 4.0, rising: false }]);
}

#[test]
fn frozen_head_has_no_direction_change() {
    let w = Matrix::from_element(2, 3, 0.7);
    assert_eq!(direction_change(&[w.clone(), w.clone(), w]).unwrap(), vec![0.0, 0.0]);
    assert!(direction_change(&[Matrix::zeros(1, 1)]).is_err());
}

#[test]
fn direction_settles_after_an_early_burst() {
    let spec = AdaptSpec::default();
    let rows = run_tau_sweep(&spec, &[0, 1024], 1.0).unwrap();
    let (fresh, probed) = (&rows[0], &rows[1]);
    assert!(fresh.direction_early > 10.0 * fresh.direction_late);
    // a converged head barely moves at any point of full tuning
    assert!(probed.direction_early < 0.05 * fresh.direction_early);
    assert!(probed.d_euc < fresh.d_euc);
}

#[test]
fn full_tune_lowers_the_loss_and_moves_features() {
    let spec = AdaptSpec::default();
    let (x, task, model) = adapt_problem(&spec).unwrap();
    let out = full_tune(&model, &x, &task, &spec.ft).unwrap();
    assert_eq!(out.heads.len(), spec.ft.epochs + 1);
    assert!(out.losses.last().unwrap() < &out.losses[0]);
    assert_ne!(out.model.backbone, model.backbone);
    let bad = OpmTask::Classification { labels: vec![0; 3], classes: 3 };
    assert!(matches!(full_tune(&model, &x, &bad, &spec.ft), Err(LabError::Shape(_))));
}

fn shift_ratio(seed: u64, tau: usize) -> f64 {
    let mut spec = AdaptSpec::default();
    spec.data.seed = seed;
    spec.data.n = 60;
    spec.ft.epochs = 100;
    let r = run_tau_sweep(&spec, &[tau], 1.0).unwrap()[0];
    r.mean_shift / r.aie
}

#[test]
fn feature_shift_is_bounded_by_initial_energy() {
    // c is fitted once on 100 calibration instances with 2x headroom, then
    // checked on 100 fresh instances from the same family
    let taus = [0usize, 2, 8, 32, 128, 512];
    let calib: Vec<f64> = (0..100u64).into_par_iter().map(|s| shift_ratio(s, taus[s as usize % 6])).collect();
    let c = 2.0 * calib.iter().cloned().fold(0.0, f64::max);
    let fresh: Vec<(u64, f64)> = (1000..1100u64).into_par_iter().map(|s| (s, shift_ratio(s, taus[s as usize % 6]))).collect();
    for (seed, r) in fresh {
        assert!(r <= c, "instance {seed}: ratio {r} above fitted c = {c}");
    }
}

#[test]
fn longer_probes_lower_energy_and_shift_together() {
    let taus = [0, 4, 32, 256, 1024];
    for seed in 0..5 {
        let mut spec = AdaptSpec::default();
        spec.data.seed = seed;
        let rows = run_tau_sweep(&spec, &taus, 1.0).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].aie <= w[0].aie, "seed {seed}");
            assert!(w[1].mean_shift < w[0].mean_shift, "seed {seed}: tau {} -> {}", w[0].tau, w[1].tau);
        }
    }
}

#[test]
fn sweep_and_tau_csv_headers() {
    let inst = OpmInstance::random(&OpmSpec::default()).unwrap();
    let t = sweep_q0(&inst, &sweep_grid(11).unwrap()).unwrap();
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &t.rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("s,aie,d_euc,d_dot,norm_t,cosine,tr_bt_b0,tr_bt_bt,pseudo_inverse\n"));
    assert_eq!(text.lines().count(), 12);

    let rows = run_tau_sweep(&AdaptSpec { ft: FtConfig { epochs: 5, ..Default::default() }, ..Default::default() }, &[0, 3], 1.0).unwrap();
    let mut buf = Vec::new();
    write_tau_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("tau,aie,hp_train_accuracy,d_euc,d_dot,norm_t,cosine,tr_bt_b0,mean_shift,direction_early,direction_late\n"));
    assert_eq!(rows[1].tau, 3);
}
