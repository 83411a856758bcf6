use mgser::diffcore::{
    add, add_key_mask, affine, backward_and_check, concat, cross_entropy, dropout, layer_mix,
    layer_norm, masked_mean, matmul_nn, matmul_nt, relu, scale, slice_cols, softmax, stack_rows,
    DiffError, Mask, Mode, ParamStore, Tensor, Var,
};
use mgser::rng::seeded;
use rand::Rng as _;

fn t1(data: &[f64]) -> Tensor<f64> {
    Tensor::vector(data.to_vec())
}

fn t2(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
    }
}

fn random_tensor(shape: &[usize], rng: &mut mgser::rng::Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

// ---- forward oracles ----------------------------------------------------

#[test]
fn affine_identity_weights() {
    let x = Var::constant(t1(&[1.0, 2.0]));
    let w = Var::constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = Var::constant(t1(&[0.0, 0.0]));
    let y = affine(&x, &w, &b).unwrap();
    assert_close(&y.value().to_f64_vec(), &[1.0, 2.0], 0.0);
}

#[test]
fn affine_hand_oracle() {
    let x = Var::constant(t1(&[1.0, 1.0]));
    let w = Var::constant(t2(&[&[2.0, 3.0], &[4.0, 5.0]]));
    let b = Var::constant(t1(&[1.0, 1.0]));
    let y = affine(&x, &w, &b).unwrap();
    assert_close(&y.value().to_f64_vec(), &[7.0, 9.0], 1e-12);
}

#[test]
fn affine_zero_input_gives_bias() {
    let x = Var::constant(t1(&[0.0, 0.0, 0.0]));
    let w = Var::constant(t2(&[&[1.5, -2.0], &[0.3, 0.7], &[9.0, 1.0]]));
    let b = Var::constant(t1(&[4.0, -1.0]));
    let y = affine(&x, &w, &b).unwrap();
    assert_close(&y.value().to_f64_vec(), &[4.0, -1.0], 0.0);
}

#[test]
fn affine_shape_errors() {
    let x = Var::constant(t1(&[1.0, 2.0, 3.0]));
    let w = Var::constant(t2(&[&[1.0], &[1.0]]));
    let b = Var::constant(t1(&[0.0]));
    assert!(matches!(
        affine(&x, &w, &b),
        Err(DiffError::ShapeMismatch { .. })
    ));
}

#[test]
fn relu_sign_cases() {
    let y = relu(&Var::constant(t1(&[-1.0, 0.0, 2.0])));
    assert_close(&y.value().to_f64_vec(), &[0.0, 0.0, 2.0], 0.0);
    let all_neg = relu(&Var::constant(t1(&[-3.0, -0.5])));
    assert_close(&all_neg.value().to_f64_vec(), &[0.0, 0.0], 0.0);
}

#[test]
fn relu_gradient_is_indicator() {
    // sum(relu(x)) via an all-ones affine reduction
    let x = Var::leaf(t1(&[2.0, -1.0]));
    let w = Var::constant(t2(&[&[1.0], &[1.0]]));
    let b = Var::constant(t1(&[0.0]));
    let y = affine(&relu(&x), &w, &b).unwrap();
    y.backward().unwrap();
    assert_close(&x.grad().unwrap().to_f64_vec(), &[1.0, 0.0], 0.0);
}

#[test]
fn softmax_uniform_and_stability() {
    let y = softmax(&Var::constant(t1(&[0.0, 0.0, 0.0, 0.0])));
    assert_close(&y.value().to_f64_vec(), &[0.25; 4], 1e-12);
    let z = softmax(&Var::constant(t1(&[1000.0, 0.0])));
    let zv = z.value().to_f64_vec();
    assert!(zv[0] > 1.0 - 1e-12 && zv[1] < 1e-12);
    assert!(zv.iter().all(|v| v.is_finite()));
}

#[test]
fn softmax_closed_form() {
    let y = softmax(&Var::constant(t1(&[1.0f64.ln(), 3.0f64.ln()])));
    assert_close(&y.value().to_f64_vec(), &[0.25, 0.75], 1e-12);
}

#[test]
fn layer_norm_constant_row_is_bias() {
    let x = Var::constant(t1(&[5.0, 5.0, 5.0]));
    let gain = Var::constant(t1(&[1.0; 3]));
    let bias = Var::constant(t1(&[0.0; 3]));
    let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
    assert_close(&y.value().to_f64_vec(), &[0.0; 3], 1e-9);
}

#[test]
fn layer_norm_hand_oracle() {
    let x = Var::constant(t1(&[0.25, 0.75]));
    let gain = Var::constant(t1(&[1.0, 1.0]));
    let bias = Var::constant(t1(&[0.0, 0.0]));
    let y = layer_norm(&x, &gain, &bias, 1e-12).unwrap();
    assert_close(&y.value().to_f64_vec(), &[-1.0, 1.0], 1e-5);
}

#[test]
fn layer_norm_zero_gain_gives_bias() {
    let x = Var::constant(t1(&[3.0, -7.0, 0.4]));
    let gain = Var::constant(t1(&[0.0; 3]));
    let bias = Var::constant(t1(&[1.0, 2.0, 3.0]));
    let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
    assert_close(&y.value().to_f64_vec(), &[1.0, 2.0, 3.0], 0.0);
}

#[test]
fn layer_norm_rejects_width_one() {
    let x = Var::constant(t1(&[3.0]));
    let g = Var::constant(t1(&[1.0]));
    let b = Var::constant(t1(&[0.0]));
    assert!(layer_norm(&x, &g, &b, 1e-5).is_err());
}

#[test]
fn dropout_identity_paths() {
    let x = Var::constant(t1(&[1.0, -2.0, 3.0]));
    let mut rng = seeded(0);
    let eval = dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap();
    assert_eq!(eval.value().to_f64_vec(), x.value().to_f64_vec());
    let p0 = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(p0.value().to_f64_vec(), x.value().to_f64_vec());
}

#[test]
fn dropout_rejects_bad_probability() {
    let x = Var::constant(t1(&[1.0]));
    let mut rng = seeded(0);
    assert!(matches!(
        dropout(&x, 1.0, Mode::Train, &mut rng),
        Err(DiffError::InvalidProbability(_))
    ));
    assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
}

#[test]
fn dropout_statistical_oracle() {
    let n = 200_000usize;
    let x = Var::constant(Tensor::full(&[n], 1.0f64));
    let mut rng = seeded(42);
    let y = dropout(&x, 0.2, Mode::Train, &mut rng).unwrap();
    let yv = y.value().to_f64_vec();
    let zero_frac = yv.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
    assert!((zero_frac - 0.2).abs() <= 0.02, "zero fraction {zero_frac}");
    let mean = yv.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
}

#[test]
fn masked_mean_hand_oracle() {
    let x = Var::constant(t2(&[&[1.0, 3.0], &[5.0, 7.0]]));
    let y = masked_mean(&x, &Mask::full(2)).unwrap();
    assert_close(&y.value().to_f64_vec(), &[3.0, 5.0], 1e-12);
}

#[test]
fn masked_mean_single_row_and_masking() {
    let single = masked_mean(&Var::constant(t2(&[&[4.0, 2.0]])), &Mask::full(1)).unwrap();
    assert_close(&single.value().to_f64_vec(), &[4.0, 2.0], 0.0);
    let x = Var::constant(t2(&[&[1.0, 1.0], &[9.0, 9.0]]));
    let y = masked_mean(&x, &Mask::new(vec![true, false])).unwrap();
    assert_close(&y.value().to_f64_vec(), &[1.0, 1.0], 0.0);
}

#[test]
fn masked_mean_all_masked_is_error() {
    let x = Var::constant(t2(&[&[1.0, 1.0]]));
    assert!(matches!(
        masked_mean(&x, &Mask::new(vec![false])),
        Err(DiffError::EmptySequence { .. })
    ));
}

#[test]
fn concat_vectors() {
    let y = concat(&[
        Var::constant(t1(&[1.0, 2.0])),
        Var::constant(t1(&[3.0])),
    ])
    .unwrap();
    assert_close(&y.value().to_f64_vec(), &[1.0, 2.0, 3.0], 0.0);
}

#[test]
fn concat_gradient_routing() {
    let a = Var::leaf(t1(&[1.0, 2.0]));
    let b = Var::leaf(t1(&[3.0]));
    let y = concat(&[a.clone(), b.clone()]).unwrap();
    // scalar = [5, 7, 11] . y
    let w = Var::constant(t2(&[&[5.0], &[7.0], &[11.0]]));
    let bias = Var::constant(t1(&[0.0]));
    affine(&y, &w, &bias).unwrap().backward().unwrap();
    assert_close(&a.grad().unwrap().to_f64_vec(), &[5.0, 7.0], 0.0);
    assert_close(&b.grad().unwrap().to_f64_vec(), &[11.0], 0.0);
}

#[test]
fn cross_entropy_oracles() {
    let uniform = cross_entropy(&Var::constant(t2(&[&[0.0; 4]])), &[1]).unwrap();
    assert!((uniform.value().item() - 4.0f64.ln()).abs() < 1e-12);

    let confident = cross_entropy(&Var::constant(t2(&[&[10.0, -10.0]])), &[0]).unwrap();
    assert!(confident.value().item() < 1e-8);

    let l = cross_entropy(&Var::constant(t2(&[&[1.0, 2.0, 3.0]])), &[2]).unwrap();
    let want = -(3.0f64.exp() / (1.0f64.exp() + 2.0f64.exp() + 3.0f64.exp())).ln();
    assert!((l.value().item() - want).abs() < 1e-12);
}

#[test]
fn cross_entropy_label_out_of_range() {
    let logits = Var::constant(t2(&[&[0.0, 0.0]]));
    assert!(matches!(
        cross_entropy(&logits, &[2]),
        Err(DiffError::LabelOutOfRange { label: 2, classes: 2 })
    ));
}

#[test]
fn add_key_mask_all_masked_is_error() {
    let scores = Var::constant(t2(&[&[0.0, 0.0]]));
    assert!(matches!(
        add_key_mask(&scores, &Mask::new(vec![false, false])),
        Err(DiffError::EmptySequence { .. })
    ));
}

#[test]
fn layer_mix_degenerate_weights() {
    let stack = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let w = Var::constant(t1(&[1.0, -1.0]));
    assert!(matches!(
        layer_mix(&stack, &w),
        Err(DiffError::DegenerateWeights { .. })
    ));
}

#[test]
fn layer_mix_weighted_average() {
    // weights [1, 3] over layers [1,0] and [0,1] -> [0.25, 0.75]
    let stack = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let w = Var::constant(t1(&[1.0, 3.0]));
    let y = layer_mix(&stack, &w).unwrap();
    assert_close(&y.value().to_f64_vec(), &[0.25, 0.75], 1e-12);
}

#[test]
fn backward_requires_scalar_output() {
    let x = Var::leaf(t1(&[1.0, 2.0]));
    let y = relu(&x);
    assert!(matches!(
        y.backward(),
        Err(DiffError::NonScalarOutput { .. })
    ));
}

#[test]
fn backward_square_gradient() {
    // f(x) = x * x as a 1x1 matmul of the same node with itself
    let x = Var::leaf(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
    let y = matmul_nn(&x, &x).unwrap();
    y.backward().unwrap();
    assert_close(&x.grad().unwrap().to_f64_vec(), &[6.0], 1e-12);
}

#[test]
fn repeated_backward_does_not_accumulate() {
    let x = Var::leaf(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
    let y = matmul_nn(&x, &x).unwrap();
    y.backward().unwrap();
    y.backward().unwrap();
    assert_close(&x.grad().unwrap().to_f64_vec(), &[6.0], 1e-12);
}

#[test]
fn param_store_rejects_duplicate_names() {
    let mut store: ParamStore<f64> = ParamStore::new();
    store.add("w", t1(&[1.0]));
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        store.add("w", t1(&[2.0]));
    }));
    assert!(result.is_err());
}

// ---- finite-difference gradient checks ----------------------------------

/// Reduce any tensor to a scalar with fixed pseudo-random coefficients so
/// every element's gradient participates in the check.
fn spread_to_scalar(y: &Var<f64>) -> Var<f64> {
    let len = y.value().len();
    let rank = y.value().rank();
    let mut rng = seeded(999);
    let coefs: Vec<f64> = (0..len).map(|_| rng.gen_range(0.5..1.5)).collect();
    let flat = if rank == 2 {
        let width = y.value().last_extent();
        let rows = len / width;
        // fold rows into one via masked_mean, then weight columns
        let pooled = masked_mean(y, &Mask::full(rows)).unwrap();
        let w = Var::constant(
            Tensor::new(vec![width, 1], coefs[..width].to_vec()).unwrap(),
        );
        affine(&pooled, &w, &Var::constant(t1(&[0.0]))).unwrap()
    } else {
        let w = Var::constant(Tensor::new(vec![len, 1], coefs).unwrap());
        affine(y, &w, &Var::constant(t1(&[0.0]))).unwrap()
    };
    flat
}

#[test]
fn gradcheck_affine_cross_entropy() {
    let mut rng = seeded(1);
    let mut store: ParamStore<f64> = ParamStore::new();
    let w = store.add("w", random_tensor(&[5, 3], &mut rng));
    let b = store.add("b", random_tensor(&[3], &mut rng));
    let x = Var::constant(random_tensor(&[2, 5], &mut rng));
    let check = backward_and_check(store.params(), || {
        cross_entropy(&affine(&x, &w, &b).unwrap(), &[0, 2]).unwrap()
    })
    .unwrap();
    assert!(check.max_rel_err <= 1e-6, "{:?}", check.per_param);
}

#[test]
fn gradcheck_relu_softmax_chain() {
    let mut rng = seeded(2);
    let mut store: ParamStore<f64> = ParamStore::new();
    // keep pre-activations away from the relu kink
    let x = store.add("x", {
        let mut t = random_tensor(&[4, 6], &mut rng);
        for v in t.data_mut() {
            if v.abs() < 0.1 {
                *v += 0.2;
            }
        }
        t
    });
    let check = backward_and_check(store.params(), || {
        spread_to_scalar(&softmax(&relu(&x)))
    })
    .unwrap();
    assert!(check.max_rel_err <= 1e-6, "{:?}", check.per_param);
}

#[test]
fn gradcheck_layer_norm() {
    let mut rng = seeded(3);
    let mut store: ParamStore<f64> = ParamStore::new();
    let x = store.add("x", random_tensor(&[3, 8], &mut rng));
    let g = store.add("g", random_tensor(&[8], &mut rng));
    let b = store.add("b", random_tensor(&[8], &mut rng));
    let check = backward_and_check(store.params(), || {
        spread_to_scalar(&layer_norm(&x, &g, &b, 1e-5).unwrap())
    })
    .unwrap();
    assert!(check.max_rel_err <= 1e-6, "{:?}", check.per_param);
}

#[test]
fn gradcheck_masked_mean_concat() {
    let mut rng = seeded(4);
    let mut store: ParamStore<f64> = ParamStore::new();
    let a = store.add("a", random_tensor(&[4, 3], &mut rng));
    let b = store.add("b", random_tensor(&[4, 2], &mut rng));
    let mask = Mask::new(vec![true, false, true, true]);
    let check = backward_and_check(store.params(), || {
        let joined = concat(&[a.clone(), b.clone()]).unwrap();
        spread_to_scalar(&masked_mean(&joined, &mask).unwrap())
    })
    .unwrap();
    assert!(check.max_rel_err <= 1e-6, "{:?}", check.per_param);
}

#[test]
fn gradcheck_matmuls_and_slice() {
    let mut rng = seeded(5);
    let mut store: ParamStore<f64> = ParamStore::new();
    let a = store.add("a", random_tensor(&[3, 4], &mut rng));
    let b = store.add("b", random_tensor(&[4, 5], &mut rng));
    let c = store.add("c", random_tensor(&[3, 5], &mut rng));
    let check = backward_and_check(store.params(), || {
        let nn = matmul_nn(&a, &b).unwrap(); // [3,5]
        let nt = matmul_nt(&nn, &c).unwrap(); // [3,3]
        spread_to_scalar(&slice_cols(&nt, 1, 2).unwrap())
    })
    .unwrap();
    assert!(check.max_rel_err <= 1e-6, "{:?}", check.per_param);
}

#[test]
fn gradcheck_stack_rows_scale_add() {
    let mut rng = seeded(6);
    let mut store: ParamStore<f64> = ParamStore::new();
    let a = store.add("a", random_tensor(&[4], &mut rng));
    let b = store.add("b", random_tensor(&[4], &mut rng));
    let check = backward_and_check(store.params(), || {
        let sum = add(&scale(&a, 2.5), &b).unwrap();
        let stacked = stack_rows(&[sum, a.clone(), b.clone()]).unwrap();
        cross_entropy(&stacked, &[0, 1, 2]).unwrap()
    })
    .unwrap();
    assert!(check.max_rel_err <= 1e-6, "{:?}", check.per_param);
}

#[test]
fn gradcheck_layer_mix() {
    let mut rng = seeded(7);
    let mut store: ParamStore<f64> = ParamStore::new();
    let w = store.add("w", t1(&[0.7, 1.4, 0.9]));
    let stack = random_tensor(&[3, 4, 5], &mut rng);
    let check = backward_and_check(store.params(), || {
        spread_to_scalar(&layer_mix(&stack, &w).unwrap())
    })
    .unwrap();
    assert!(check.max_rel_err <= 1e-6, "{:?}", check.per_param);
}

#[test]
fn gradcheck_attention_scores_path() {
    let mut rng = seeded(8);
    let mut store: ParamStore<f64> = ParamStore::new();
    let q = store.add("q", random_tensor(&[3, 4], &mut rng));
    let k = store.add("k", random_tensor(&[5, 4], &mut rng));
    let v = store.add("v", random_tensor(&[5, 4], &mut rng));
    let mask = Mask::new(vec![true, true, false, true, true]);
    let check = backward_and_check(store.params(), || {
        let scores = scale(&matmul_nt(&q, &k).unwrap(), 0.5);
        let probs = softmax(&add_key_mask(&scores, &mask).unwrap());
        spread_to_scalar(&matmul_nn(&probs, &v).unwrap())
    })
    .unwrap();
    assert!(check.max_rel_err <= 1e-6, "{:?}", check.per_param);
}
