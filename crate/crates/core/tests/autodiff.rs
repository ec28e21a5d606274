use ctrforge::autodiff::{
    compare_gradients, finite_difference_check, AdamConfig, AdamState, GradCheckOptions, GradCheckReport, Gradients,
    ParamStore, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn store(shapes: &[&[usize]], rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (i, shape) in shapes.iter().enumerate() {
        s.insert(format!("p{i}"), random(shape, rng));
    }
    s
}

/// Contracts `out` with fixed pseudo-random weights so every output element
/// carries a distinct upstream gradient.
fn contract(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let w = tape.input(random(&shape, &mut ChaCha8Rng::seed_from_u64(seed)));
    let prod = tape.mul(out, w);
    tape.sum(prod)
}

fn check_op<F>(seed: u64, shapes: &[&[usize]], build: F) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = store(shapes, &mut rng);
    let wseed = rng.gen();
    finite_difference_check(
        &mut params,
        |p| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = p.ids().map(|id| tape.param(p, id)).collect();
            let out = build(&mut tape, &vars);
            let loss = contract(&mut tape, out, wseed);
            (tape, loss)
        },
        GradCheckOptions::default(),
    )
}

fn assert_op(name: &str, report: GradCheckReport) {
    assert!(report.passed(), "{name}: max rel error {} ({:?})", report.max_rel_error(), report.error);
    assert!(report.checked() > 0, "{name}: every component skipped");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_primitive_matches_central_differences(seed in any::<u64>()) {
        let mask_seed = seed ^ 0xabc;
        assert_op("matmul", check_op(seed, &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1])));
        assert_op("bmm", check_op(seed, &[&[2, 3, 4], &[2, 4, 2]], |t, v| t.bmm(v[0], v[1], false)));
        assert_op("bmm_t", check_op(seed, &[&[2, 3, 4], &[2, 5, 4]], |t, v| t.bmm(v[0], v[1], true)));
        assert_op("add", check_op(seed, &[&[3, 4], &[4]], |t, v| t.add(v[0], v[1])));
        assert_op("sub", check_op(seed, &[&[2, 3, 4], &[3, 1]], |t, v| t.sub(v[0], v[1])));
        assert_op("mul", check_op(seed, &[&[2, 3, 1], &[3, 4]], |t, v| t.mul(v[0], v[1])));
        assert_op("scale", check_op(seed, &[&[5]], |t, v| t.scale(v[0], -1.7)));
        assert_op("relu", check_op(seed, &[&[4, 3]], |t, v| t.relu(v[0])));
        assert_op("tanh", check_op(seed, &[&[4, 3]], |t, v| t.tanh(v[0])));
        assert_op("sigmoid", check_op(seed, &[&[4, 3]], |t, v| t.sigmoid(v[0])));
        assert_op("square", check_op(seed, &[&[4, 3]], |t, v| t.square(v[0])));
        assert_op("sum", check_op(seed, &[&[2, 3]], |t, v| t.sum(v[0])));
        assert_op("sum_axis", check_op(seed, &[&[2, 3, 4]], |t, v| t.sum_axis(v[0], 1)));
        assert_op("mean", check_op(seed, &[&[2, 3]], |t, v| t.mean(v[0])));
        assert_op("concat", check_op(seed, &[&[2, 3], &[2, 1], &[2, 2]], |t, v| t.concat(v)));
        assert_op("slice", check_op(seed, &[&[3, 6]], |t, v| t.slice(v[0], 2, 3)));
        assert_op("softmax", check_op(seed, &[&[3, 5]], |t, v| t.softmax(v[0])));
        assert_op("dropout", check_op(seed, &[&[4, 5]], move |t, v| {
            t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(mask_seed))
        }));
        assert_op("gather", check_op(seed, &[&[5, 3]], |t, v| t.gather(v[0], &[4, 0, 4, 2])));
        assert_op("index_select", check_op(seed, &[&[2, 5]], |t, v| t.index_select(v[0], &[3, 1, 3])));
        assert_op("reshape", check_op(seed, &[&[2, 6]], |t, v| t.reshape(v[0], &[3, 4])));
        assert_op("permute", check_op(seed, &[&[2, 3, 4]], |t, v| t.permute(v[0], &[2, 0, 1])));
        assert_op("bce", check_op(seed, &[&[6, 1]], |t, v| t.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0])));
    }

    #[test]
    fn adam_with_zero_gradients_is_the_identity(seed in any::<u64>(), steps in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = store(&[&[3, 2], &[4]], &mut rng);
        let before = params.clone();
        let mut adam = AdamState::new(&params, AdamConfig::default());
        let mut grads = Gradients::new();
        for id in params.ids() {
            grads.insert(id, Tensor::zeros(params.get(id).shape().to_vec()));
        }
        for _ in 0..steps {
            adam.step(&mut params, &grads).unwrap();
        }
        prop_assert_eq!(adam.step_count(), steps as u64);
        for id in params.ids() {
            prop_assert_eq!(params.get(id), before.get(id));
        }
    }
}

fn mlp_loss(p: &ParamStore<f64>, x: &Tensor<f64>, y: &[f64]) -> (Tape<f64>, Var) {
    let mut tape = Tape::new();
    let mut h = tape.input(x.clone());
    for layer in 0..3 {
        let w = tape.param(p, p.id(&format!("w{layer}")).unwrap());
        let b = tape.param(p, p.id(&format!("b{layer}")).unwrap());
        let z = tape.matmul(h, w);
        let z = tape.add(z, b);
        h = if layer < 2 { tape.relu(z) } else { z };
    }
    let loss = tape.bce_with_logits(h, y);
    (tape, loss)
}

#[test]
fn three_layer_mlp_matches_central_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [5, 7, 4, 1];
        let mut p = ParamStore::new();
        for l in 0..3 {
            p.insert(format!("w{l}"), random(&[dims[l], dims[l + 1]], &mut rng));
            p.insert(format!("b{l}"), random(&[dims[l + 1]], &mut rng));
        }
        let x = random(&[6, 5], &mut rng);
        let y: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
        let report = finite_difference_check(&mut p, |p| mlp_loss(p, &x, &y), GradCheckOptions::default());
        assert!(report.passed(), "seed {seed}: {}", report.max_rel_error());
    }
}

#[test]
fn linear_squared_loss_is_checked_to_high_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = store(&[&[4, 1]], &mut rng);
    let x = random(&[10, 4], &mut rng);
    let y = random(&[10, 1], &mut rng);
    let report = finite_difference_check(
        &mut p,
        |p| {
            let mut tape = Tape::new();
            let w = tape.param(p, p.id("p0").unwrap());
            let xv = tape.input(x.clone());
            let yv = tape.input(y.clone());
            let pred = tape.matmul(xv, w);
            let r = tape.sub(pred, yv);
            let sq = tape.square(r);
            let loss = tape.mean(sq);
            (tape, loss)
        },
        GradCheckOptions::default(),
    );
    assert!(report.max_rel_error() < 1e-6, "{}", report.max_rel_error());
}

#[test]
fn relu_away_from_the_kink_passes() {
    let mut p = ParamStore::new();
    p.insert("x", Tensor::from_f64(vec![4], &[0.7, -0.4, 1.3, -2.0]));
    let report = finite_difference_check(
        &mut p,
        |p| {
            let mut tape = Tape::new();
            let x = tape.param(p, p.id("x").unwrap());
            let r = tape.relu(x);
            let sq = tape.square(r);
            let loss = tape.sum(sq);
            (tape, loss)
        },
        GradCheckOptions::default(),
    );
    assert!(report.passed());
    assert_eq!(report.skipped(), 0);
}

#[test]
fn doubled_gradients_are_reported_as_failures() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = [3, 4, 4, 1];
    let mut p = ParamStore::new();
    for l in 0..3 {
        p.insert(format!("w{l}"), random(&[dims[l], dims[l + 1]], &mut rng));
        p.insert(format!("b{l}"), random(&[dims[l + 1]], &mut rng));
    }
    let x = random(&[5, 3], &mut rng);
    let y = [1.0, 0.0, 1.0, 1.0, 0.0];
    let (tape, loss) = mlp_loss(&p, &x, &y);
    let corrupted = tape.gradients(loss).unwrap().scaled(2.0);
    let report = compare_gradients(&mut p, &corrupted, |p| mlp_loss(p, &x, &y), GradCheckOptions::default());
    assert!(!report.passed());
    assert!(report.max_rel_error() > 0.3);
}

#[test]
fn replay_with_fixed_masks_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = store(&[&[6, 4], &[4, 3]], &mut rng);
    let mut tape = Tape::new();
    let a = tape.param(&p, p.id("p0").unwrap());
    let b = tape.param(&p, p.id("p1").unwrap());
    let d = tape.dropout(a, 0.5, &mut rng);
    let m = tape.matmul(d, b);
    let s = tape.softmax(m);
    let replayed = tape.replay();
    assert_eq!(replayed.len(), tape.len());
    assert_eq!(&replayed[s.index()], tape.value(s));
}

#[test]
fn absent_parameter_gets_a_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = store(&[&[2, 2], &[3]], &mut rng);
    let mut tape = Tape::new();
    let a = tape.param(&p, p.id("p0").unwrap());
    let loss = tape.sum(a);
    let g = tape.gradients(loss).unwrap();
    let unused = p.id("p1").unwrap();
    assert!(g.get(unused).is_none());
    assert_eq!(g.get_or_zero(unused, &[3]), Tensor::zeros(vec![3]));
}
