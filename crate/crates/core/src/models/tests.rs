use super::*;

fn random_model(spec: ModelSpec, seed: u64) -> Model {
    let mut rng = SeedStream::new(seed);
    let mut m = Model::zeros(spec).unwrap();
    let frozen: Vec<Block> = m.params.layout.iter().filter(|b| b.is_frozen()).cloned().collect();
    for (i, v) in m.theta_mut().iter_mut().enumerate() {
        if frozen.iter().any(|b| b.range().contains(&i)) {
            continue;
        }
        *v = rng.uniform_in(-1.0, 1.0);
    }
    m
}

fn random_points(dim: usize, n: usize, seed: u64, scale: f64) -> Points {
    let mut rng = SeedStream::new(seed);
    Points::new(dim, (0..dim * n).map(|_| rng.uniform_in(-scale, scale)).collect()).unwrap()
}

fn fd_gradient(model: &Model, batch: Batch<'_>, h: f64) -> Vec<f64> {
    let theta = model.theta().to_vec();
    (0..theta.len())
        .map(|k| {
            let mut plus = theta.clone();
            plus[k] += h;
            let mut minus = theta.clone();
            minus[k] -= h;
            let lp = model.with_theta(plus).unwrap().weighted_loss(batch).unwrap();
            let lm = model.with_theta(minus).unwrap().weighted_loss(batch).unwrap();
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

fn assert_grad_close(model: &Model, analytic: &[f64], numeric: &[f64], tol: f64) {
    let scale = numeric.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (k, (a, b)) in analytic.iter().zip(numeric).enumerate() {
        let block = model.params.block_of_index(k);
        if block == "input_shift" || block == "input_scale" {
            continue;
        }
        let denom = b.abs().max(1e-3 * scale).max(1e-12);
        assert!((a - b).abs() / denom < tol, "param {k} ({block}): analytic {a} vs fd {b}");
    }
}

#[test]
fn zero_resnet_is_identity() {
    let m = Model::zeros(ModelSpec::resnet_flow_map(3, 5, 0.01)).unwrap();
    assert_eq!(m.evaluate(&[1.5, -2.0, 3.25]).unwrap(), vec![1.5, -2.0, 3.25]);
}

#[test]
fn constant_polynomial() {
    let mut m = Model::zeros(ModelSpec::polynomial(3, 1, 0)).unwrap();
    m.params.block_mut("coef").unwrap()[0] = 2.5;
    for x in [[0.0, 0.0, 0.0], [1.0, -7.0, 3.0]] {
        assert_eq!(m.eval(&x), vec![2.5]);
    }
}

#[test]
fn evaluate_checks_dimension() {
    let m = Model::zeros(ModelSpec::scalar_fnn(3, 4)).unwrap();
    assert!(matches!(m.evaluate(&[1.0, 2.0]), Err(Error::DimensionMismatch { expected: 3, got: 2 })));
}

#[test]
fn invalid_specs_rejected() {
    let mut s = ModelSpec::resnet_flow_map(3, 4, 0.1);
    s.output_dim = 2;
    assert!(s.validate().is_err());
    assert!(ModelSpec::scalar_fnn(3, 0).validate().is_err());
    let mut e = ModelSpec::energy_gradient(4);
    e.input_dim = 2;
    assert!(e.validate().is_err());
    assert!(Model::new(ModelSpec::scalar_fnn(1, 2), vec![0.0; 3]).is_err());
}

#[test]
fn energy_of_zero_params_is_coercive_term() {
    let m = Model::zeros(ModelSpec::energy_gradient(6)).unwrap();
    let x = [0.5, -1.0, 2.0];
    let e = m.energy_value(&x).unwrap();
    assert!((e - 1e-4 * (0.25 + 1.0 + 4.0)).abs() < 1e-18);
}

#[test]
fn energy_at_origin_by_substitution() {
    let mut m = random_model(ModelSpec::energy_gradient(4), 9);
    m.params.block_mut("b2").unwrap()[0] = 0.7;
    let b0 = m.params.block("b0").unwrap()[0];
    let b1 = m.params.block("b1").unwrap().to_vec();
    let w2 = m.params.block("w2").unwrap().to_vec();
    let expected = b0 * b0 + 0.7 + w2.iter().zip(&b1).map(|(w, b)| w * elu(*b)).sum::<f64>();
    assert!((m.energy_value(&[0.0; 3]).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn energy_value_rejects_other_kinds() {
    let m = Model::zeros(ModelSpec::scalar_fnn(3, 2)).unwrap();
    assert!(m.energy_value(&[0.0; 3]).is_err());
}

#[test]
fn energy_gradient_matches_finite_differences() {
    let h = 1e-6;
    for seed in 0..10 {
        let m = random_model(ModelSpec::energy_gradient(8), 100 + seed);
        let x = random_points(3, 1, 200 + seed, 1.5);
        let x = x.row(0);
        let f = m.eval(x);
        for k in 0..3 {
            let mut xp = x.to_vec();
            xp[k] += h;
            let mut xm = x.to_vec();
            xm[k] -= h;
            let fd = -(m.energy_value(&xp).unwrap() - m.energy_value(&xm).unwrap()) / (2.0 * h);
            let denom = fd.abs().max(1e-3);
            assert!((f[k] - fd).abs() / denom < 1e-6, "coord {k}: {} vs {fd}", f[k]);
        }
    }
}

#[test]
fn elu_is_c1_at_zero() {
    assert_eq!(elu(0.0), 0.0);
    assert!((elu(-1e-12)).abs() < 1e-11);
    assert_eq!(elu_d1(0.0), 1.0);
    assert!((elu_d1(-1e-12) - 1.0).abs() < 1e-11);
    assert_eq!(elu_d2(0.0), 0.0);
}

#[test]
fn zero_weights_give_zero_loss_and_gradient() {
    let m = random_model(ModelSpec::resnet_flow_map(3, 4, 0.1), 1);
    let x = random_points(3, 10, 2, 1.0);
    let y = random_points(3, 10, 3, 1.0);
    let w = vec![0.0; 10];
    let (loss, grad) = m.weighted_loss_gradient(Batch::full(&x, &y, &w)).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn polynomial_gradient_matches_normal_equations() {
    let spec = ModelSpec::polynomial(2, 1, 2);
    let m = random_model(spec, 4);
    let x = random_points(2, 7, 5, 2.0);
    let y = random_points(1, 7, 6, 2.0);
    let mut rng = SeedStream::new(7);
    let w: Vec<f64> = (0..7).map(|_| rng.uniform_in(0.0, 2.0)).collect();
    let (_, grad) = m.weighted_loss_gradient(Batch::full(&x, &y, &w)).unwrap();

    // 2/B · X̃ᵀ W (X̃ c - y)
    let coef = m.params.block("coef").unwrap();
    let k = coef.len();
    let mut expected = vec![0.0; k];
    for i in 0..7 {
        let phi = m.polynomial_features(x.row(i));
        let pred: f64 = phi.iter().zip(coef).map(|(a, b)| a * b).sum();
        for j in 0..k {
            expected[j] += 2.0 / 7.0 * w[i] * (pred - y.row(i)[0]) * phi[j];
        }
    }
    for j in 0..k {
        assert!((grad[j] - expected[j]).abs() < 1e-12 * expected[j].abs().max(1.0));
    }
    let tail = &grad[k..];
    assert!(tail.iter().all(|g| *g == 0.0), "standardization blocks are frozen");
}

#[test]
fn gradients_match_finite_differences_for_every_kind() {
    let specs = [
        (ModelSpec::resnet_flow_map(3, 6, 0.1), 3),
        (ModelSpec::scalar_fnn(3, 5), 1),
        (ModelSpec::polynomial(3, 1, 3), 1),
        (ModelSpec::energy_gradient(5), 3),
    ];
    for (s, (spec, out_dim)) in specs.into_iter().enumerate() {
        for draw in 0..4 {
            let seed = 1000 + 10 * s as u64 + draw;
            let m = random_model(spec, seed);
            let x = random_points(3, 5, seed + 1, 1.5);
            let y = random_points(out_dim, 5, seed + 2, 1.5);
            let w: Vec<f64> = (0..5).map(|i| 0.5 + i as f64 * 0.25).collect();
            let batch = Batch::full(&x, &y, &w);
            let (_, g) = m.weighted_loss_gradient(batch).unwrap();
            let fd = fd_gradient(&m, batch, 1e-5);
            assert_grad_close(&m, &g, &fd, 1e-4);
        }
    }
}

#[test]
fn batch_indices_restrict_samples() {
    let m = random_model(ModelSpec::scalar_fnn(2, 3), 8);
    let x = random_points(2, 6, 9, 1.0);
    let y = random_points(1, 6, 10, 1.0);
    let w = vec![1.0; 6];
    let idx = [1usize, 4];
    let sub = Batch { inputs: &x, labels: &y, weights: &w, indices: Some(&idx) };
    let (l1, g1) = m.weighted_loss_gradient(sub).unwrap();
    let xs = x.select(&idx);
    let ys = y.select(&idx);
    let (l2, g2) = m.weighted_loss_gradient(Batch::full(&xs, &ys, &w[..2])).unwrap();
    assert!((l1 - l2).abs() < 1e-15);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn overflow_reports_block() {
    let mut m = Model::zeros(ModelSpec::scalar_fnn(1, 2)).unwrap();
    m.params.block_mut("b1").unwrap()[0] = 1e200;
    let x = Points::from_scalars(&[1.0]);
    let y = Points::from_scalars(&[0.0]);
    let err = m.weighted_loss_gradient(Batch::full(&x, &y, &[1.0])).unwrap_err();
    assert!(matches!(err, Error::NumericalOverflow { .. }), "{err}");
}

#[test]
fn least_squares_recovers_exact_polynomial() {
    let spec = ModelSpec::polynomial(2, 1, 2);
    let x = random_points(2, 50, 11, 3.0);
    let labels: Vec<f64> = x.rows().map(|r| 1.0 - 2.0 * r[0] + 0.5 * r[0] * r[1] + r[1] * r[1]).collect();
    let y = Points::from_scalars(&labels);
    let m = fit_polynomial(spec, &x, &y, &vec![1.0; 50]).unwrap();
    for (r, l) in x.rows().zip(&labels) {
        assert!((m.eval(r)[0] - l).abs() < 1e-9);
    }
}

#[test]
fn affine_coefficients_undo_standardization() {
    let x = Points::from_scalars(&[0.0, 1.0, 2.0, 5.0]);
    let y = Points::from_scalars(&[3.0, 1.0, -1.0, -7.0]);
    let m = fit_polynomial(ModelSpec::polynomial(1, 1, 1), &x, &y, &[1.0; 4]).unwrap();
    let (c0, c1) = m.polynomial_affine_coefficients().unwrap();
    assert!((c0 - 3.0).abs() < 1e-12);
    assert!((c1[0] + 2.0).abs() < 1e-12);
}

#[test]
fn serialization_round_trips_bit_exactly() {
    for spec in [
        ModelSpec::resnet_flow_map(3, 7, 0.01),
        ModelSpec::scalar_fnn(3, 8),
        ModelSpec::polynomial(3, 1, 4),
        ModelSpec::energy_gradient(4),
    ] {
        let m = random_model(spec, 77);
        let back = deserialize(&serialize(&m)).unwrap();
        assert_eq!(back.spec(), m.spec());
        let a: Vec<u64> = m.theta().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.theta().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn malformed_model_bytes() {
    assert!(matches!(deserialize(&[]), Err(Error::Format(_))));
    let m = random_model(ModelSpec::scalar_fnn(3, 2), 1);
    let mut bytes = serialize(&m);
    bytes[4] = 2;
    let err = deserialize(&bytes).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    let mut bytes = serialize(&m);
    bytes.pop();
    let err = deserialize(&bytes).unwrap_err();
    assert!(err.to_string().contains("length mismatch"), "{err}");
}

#[test]
fn glorot_init_is_bounded_and_seeded() {
    let spec = ModelSpec::resnet_flow_map(3, 16, 0.01);
    let a = Model::init(spec, 5).unwrap();
    let b = Model::init(spec, 5).unwrap();
    assert_eq!(a, b);
    let limit = (6.0f64 / 19.0).sqrt();
    assert!(a.params.block("w0").unwrap().iter().all(|v| v.abs() <= limit));
    assert!(a.params.block("b0").unwrap().iter().all(|v| *v == 0.0));
}
