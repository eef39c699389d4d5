use approx::assert_abs_diff_eq;
use forcelab::akg::*;
use forcelab::mathcore::*;
use forcelab::LabError;
use rand::Rng;

fn fd_jacobian(model: &MlpModel, x: &Vector) -> Matrix {
    let eps = 1e-5;
    let theta = model.params();
    let mut m = model.clone();
    let mut out = Matrix::zeros(model.output_dim(), theta.len());
    for j in 0..theta.len() {
        let mut t = theta.clone();
        t[j] += eps;
        m.set_params(&t).unwrap();
        let zp = m.forward(x).unwrap();
        t[j] -= 2.0 * eps;
        m.set_params(&t).unwrap();
        let zm = m.forward(x).unwrap();
        out.set_column(j, &((zp - zm) / (2.0 * eps)));
    }
    out
}

fn random_prob(v: usize, rng: &mut LabRng) -> ProbVector {
    softmax(&(normal_vector(v, rng) * 2.0)).unwrap()
}

#[test]
fn a_term_examples() {
    let p = ProbVector::uniform(3);
    let b = Vector::from_vec(vec![1.0, 0.0, 0.0]);
    let ab = a_term(&p) * &b;
    for (i, e) in [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0].iter().enumerate() {
        assert_abs_diff_eq!(ab[i], e, epsilon = 1e-15);
    }
    let p = ProbVector::one_hot(4, 0).unwrap();
    let b = Vector::from_vec(vec![3.0, 1.0, -2.0, 5.0]);
    assert_eq!(a_term(&p) * &b, b.map(|x| x - 3.0));
}

#[test]
fn a_term_matches_direct_formula_and_has_zero_row_sums() {
    let mut rng = seeded(4);
    for _ in 0..100 {
        let v = rng.random_range(2..10);
        let p = random_prob(v, &mut rng);
        let b = normal_vector(v, &mut rng);
        let a = a_term(&p);
        let direct = b.map(|x| x - p.as_vector().dot(&b));
        assert!((&a * &b - &direct).abs().max() < 1e-12);
        assert!((apply_a(&p, &b) - direct).abs().max() < 1e-12);
        for i in 0..v {
            assert!(a.row(i).sum().abs() < 1e-12);
        }
    }
}

#[test]
fn k_term_for_linear_model_is_scaled_identity() {
    let mut rng = seeded(9);
    let model = MlpModel::linear(normal_matrix(4, 6, &mut rng)).unwrap();
    let xo = normal_vector(6, &mut rng);
    let xu = normal_vector(6, &mut rng);
    let k = k_term(&per_example_jacobian(&model, &xo).unwrap(), &per_example_jacobian(&model, &xu).unwrap()).unwrap();
    let expected = Matrix::identity(4, 4) * xo.dot(&xu);
    assert!((k - expected).abs().max() < 1e-12);
}

#[test]
fn k_term_self_pair_is_psd_and_transpose_symmetric() {
    let mut rng = seeded(10);
    for _ in 0..30 {
        let model = MlpModel::random(&[5, 8, 4], Activation::Tanh, &mut rng).unwrap();
        let xo = normal_vector(5, &mut rng);
        let xu = normal_vector(5, &mut rng);
        let jo = per_example_jacobian(&model, &xo).unwrap();
        let ju = per_example_jacobian(&model, &xu).unwrap();
        let kk = k_term(&jo, &jo).unwrap();
        assert!((&kk - kk.transpose()).abs().max() < 1e-12);
        let eig = kk.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-9));
        let kou = k_term(&jo, &ju).unwrap();
        let kuo = k_term(&ju, &jo).unwrap();
        assert!((kou - kuo.transpose()).abs().max() < 1e-12);
    }
}

#[test]
fn k_term_matches_gradient_dot_products() {
    let mut rng = seeded(12);
    let model = MlpModel::random(&[3, 5, 5, 3], Activation::SmoothRelu, &mut rng).unwrap();
    let xo = normal_vector(3, &mut rng);
    let xu = normal_vector(3, &mut rng);
    let k = k_term(&per_example_jacobian(&model, &xo).unwrap(), &per_example_jacobian(&model, &xu).unwrap()).unwrap();
    let fo = fd_jacobian(&model, &xo);
    let fu = fd_jacobian(&model, &xu);
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = fo.row(i).iter().zip(fu.row(j).iter()).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(k[(i, j)], dot, epsilon = 1e-6);
        }
    }
}

#[test]
fn k_term_shape_mismatch() {
    let a = JacobianBlock { matrix: Matrix::zeros(2, 3), example_id: None };
    let b = JacobianBlock { matrix: Matrix::zeros(2, 4), example_id: None };
    assert!(matches!(k_term(&a, &b), Err(LabError::Shape(_))));
}

#[test]
fn g_term_examples() {
    let p = ProbVector::from_slice(&[0.25, 0.25, 0.5]).unwrap();
    let g = g_term(LossKind::Ce, &p, 2).unwrap();
    assert_eq!(g.as_slice(), &[0.25, 0.25, -0.5]);
    let e = ProbVector::one_hot(3, 1).unwrap();
    assert_eq!(g_term(LossKind::Ce, &e, 1).unwrap().norm(), 0.0);
    let g = g_term(LossKind::Mse, &ProbVector::uniform(2), 0).unwrap();
    assert_eq!(g.as_slice(), &[-0.25, 0.25]);
    assert!(matches!(g_term(LossKind::Ce, &p, 3), Err(LabError::LabelOutOfRange { .. })));
}

#[test]
fn zero_gap_gives_zero_influence() {
    let terms = AkgTerms::new(Matrix::identity(3, 3), Matrix::identity(3, 3), Vector::zeros(3), 0.1).unwrap();
    assert_eq!(one_step_influence(&terms).norm(), 0.0);
}

#[test]
fn self_update_never_lowers_true_label_to_first_order() {
    let mut rng = seeded(13);
    for _ in 0..100 {
        let model = MlpModel::random(&[4, 6, 5], Activation::Tanh, &mut rng).unwrap();
        let x = normal_vector(4, &mut rng);
        let y = rng.random_range(0..5);
        let eta = 0.1;
        let terms = AkgTerms::for_pair(&model, &x, &x, y, LossKind::Ce, eta).unwrap();
        let delta = one_step_influence(&terms);
        // e_yᵀ A = (e_y − p)ᵀ, so e_yᵀΔ = η (e_y − p)ᵀ K (e_y − p)
        let quad = -terms.g.dot(&(&terms.k * &terms.g)) * -eta;
        assert_abs_diff_eq!(delta[y], quad, epsilon = 1e-12);
        assert!(delta[y] >= -1e-15);
    }
}

#[test]
fn nearby_updater_moves_observer_more_than_distant_one() {
    let mut rng = seeded(14);
    let model = MlpModel::random(&[8, 16, 10], Activation::Tanh, &mut rng).unwrap();
    let x4 = normal_vector(8, &mut rng);
    let x9 = &x4 + normal_vector(8, &mut rng) * 0.1;
    let x0 = -&x4 + normal_vector(8, &mut rng) * 0.1;
    let j4 = per_example_jacobian(&model, &x4).unwrap();
    let k49 = k_term(&j4, &per_example_jacobian(&model, &x9).unwrap()).unwrap();
    let k40 = k_term(&j4, &per_example_jacobian(&model, &x0).unwrap()).unwrap();
    let d9 = one_step_influence(&AkgTerms::for_pair(&model, &x4, &x9, 9, LossKind::Ce, 0.1).unwrap());
    let d0 = one_step_influence(&AkgTerms::for_pair(&model, &x4, &x0, 0, LossKind::Ce, 0.1).unwrap());
    assert!(k49.norm() > k40.norm());
    assert!(d9.norm() > d0.norm());
}

#[test]
fn zero_learning_rate_gives_zero_change() {
    let mut rng = seeded(15);
    let model = MlpModel::random(&[3, 4, 3], Activation::Tanh, &mut rng).unwrap();
    let x = normal_vector(3, &mut rng);
    let c = verify_first_order(&model, &x, &x, 1, 0.0).unwrap();
    assert_eq!(c.actual.norm(), 0.0);
    assert_eq!(c.predicted.norm(), 0.0);
    assert!(AkgTerms::new(Matrix::zeros(3, 3), Matrix::zeros(3, 3), Vector::zeros(3), -1.0).is_err());
}

#[test]
fn linear_model_residual_scales_with_eta_squared() {
    let mut rng = seeded(16);
    let model = MlpModel::linear(normal_matrix(3, 5, &mut rng)).unwrap();
    let xo = normal_vector(5, &mut rng);
    let xu = normal_vector(5, &mut rng);
    let ratios: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&eta| verify_first_order(&model, &xo, &xu, 2, eta).unwrap().residual / (eta * eta))
        .collect();
    for r in &ratios[1..] {
        assert!((r / ratios[0] - 1.0).abs() < 0.05, "{ratios:?}");
    }
    for w in [1e-2, 5e-3].iter().zip(&[5e-3, 2.5e-3]) {
        let a = verify_first_order(&model, &xo, &xu, 2, *w.0).unwrap().residual;
        let b = verify_first_order(&model, &xo, &xu, 2, *w.1).unwrap().residual;
        assert!((3.0..=5.0).contains(&(a / b)));
    }
}

#[test]
fn random_mlp_small_step_is_accurate() {
    let mut rng = seeded(17);
    for _ in 0..20 {
        let model = MlpModel::random(&[6, 12, 12, 4], Activation::Tanh, &mut rng).unwrap();
        let xo = normal_vector(6, &mut rng);
        let xu = normal_vector(6, &mut rng);
        let c = verify_first_order(&model, &xo, &xu, rng.random_range(0..4), 1e-3).unwrap();
        assert!(c.relative_error() < 0.05, "relative error {}", c.relative_error());
    }
}

#[test]
fn epoch_force_singleton_and_duplicate() {
    let mut rng = seeded(18);
    let model = MlpModel::random(&[3, 5, 3], Activation::Tanh, &mut rng).unwrap();
    let x = normal_vector(3, &mut rng);
    let single = epoch_force(&model, 0, &[(x.clone(), 1)], 0.1, LossKind::Ce).unwrap();
    assert_eq!(single.other_force.norm(), 0.0);
    let dup = epoch_force(&model, 0, &[(x.clone(), 1), (x, 1)], 0.1, LossKind::Ce).unwrap();
    assert!((&dup.other_force - &dup.self_force).abs().max() < 1e-15);
}

#[test]
fn epoch_force_components_sum_to_whole_dataset_prediction() {
    let mut rng = seeded(19);
    let model = MlpModel::random(&[4, 7, 3], Activation::SmoothRelu, &mut rng).unwrap();
    let data: Vec<(Vector, usize)> = (0..12).map(|_| (normal_vector(4, &mut rng), rng.random_range(0..3))).collect();
    let eta = 0.05;
    let report = epoch_force(&model, 5, &data, eta, LossKind::Ce).unwrap();
    // whole-dataset step through one batched gradient
    let xs = Matrix::from_columns(&data.iter().map(|d| d.0.clone()).collect::<Vec<_>>());
    let trace = model.forward_trace(&xs).unwrap();
    let mut dz = Matrix::zeros(3, data.len());
    for (c, (x, y)) in data.iter().enumerate() {
        dz.set_column(c, &g_term(LossKind::Ce, &model.predict(x).unwrap(), *y).unwrap());
    }
    let grad = model.backward(&trace, &dz).to_flat();
    let jo = per_example_jacobian(&model, &data[5].0).unwrap();
    let whole = -(a_term(&model.predict(&data[5].0).unwrap()) * (&jo.matrix * grad)) * eta;
    assert!((report.total() - &whole).abs().max() < 1e-12);
    let summed = report.contributions.iter().fold(Vector::zeros(3), |acc, (_, c)| acc + c);
    assert!((summed - whole).abs().max() < 1e-12);
}

#[test]
fn entk_stability_identical_snapshots_and_errors() {
    let mut rng = seeded(20);
    let model = MlpModel::random(&[3, 6, 3], Activation::Tanh, &mut rng).unwrap();
    let pairs: Vec<(Vector, Vector)> = (0..6).map(|_| (normal_vector(3, &mut rng), normal_vector(3, &mut rng))).collect();
    let rho = entk_stability(&[model.clone(), model.clone(), model.clone()], &pairs).unwrap();
    assert_eq!(rho, vec![1.0, 1.0]);
    assert!(entk_stability(&[model.clone()], &pairs).is_err());
    assert!(entk_stability(&[model.clone(), model], &pairs[..2]).is_err());
}

#[test]
fn random_rankings_have_small_rank_correlation() {
    let mut rng = seeded(21);
    let base: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let mut small = 0;
    for _ in 0..1000 {
        let mut perm = base.clone();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        if spearman(&base, &perm).unwrap().rho.abs() < 0.5 {
            small += 1;
        }
    }
    assert!(small >= 950, "{small}");
}

#[test]
fn force_csv_has_schema_header() {
    let mut buf = Vec::new();
    let r = ForceReport { self_force: Vector::from_vec(vec![1.0, 0.0]), other_force: Vector::from_vec(vec![0.0, 2.0]), contributions: vec![] };
    write_force_csv(&mut buf, &[ForceRow::from_report(3, 7, 1, &r)]).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert!(s.starts_with("epoch,example_id,self_norm,other_norm,delta_label_dim\n"));
    assert!(s.contains("3,7,1.0,2.0,2.0"));
}

#[test]
fn first_order_slope_is_quadratic_on_toy_gaussian_mlps() {
    use forcelab::datasets::{gen_toy_gaussian, ToyGaussianSpec};
    let data = gen_toy_gaussian(&ToyGaussianSpec { n: 200, ..Default::default() }).unwrap();
    let mut rng = seeded(19);
    let mut slopes = Vec::new();
    for _ in 0..50 {
        let model = MlpModel::random(&[30, 32, 3], Activation::SmoothRelu, &mut rng).unwrap();
        let o = &data.examples[rng.random_range(0..200)];
        let u = &data.examples[rng.random_range(0..200)];
        slopes.push(first_order_slope(&model, &o.x, &u.x, u.y, &[1e-2, 1e-3, 1e-4]).unwrap());
    }
    let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("slopes in [{lo:.4}, {hi:.4}]");
    assert!(lo >= 1.8 && hi <= 2.2);
}
