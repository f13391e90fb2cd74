use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelgen::autodiff::{grad_check, GradCheckConfig, Graph, OpKind, ParamStore, Result, Tensor, Var};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces `v` to a scalar through fixed random weights so every output
/// entry carries a distinct upstream gradient.
fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random(&mut rng, g.shape(v)))?;
    let m = g.mul(v, w)?;
    g.sum(m)
}

const OPS: [OpKind; 19] = [
    OpKind::MatMul,
    OpKind::Bmm,
    OpKind::Add,
    OpKind::Mul,
    OpKind::AddBias,
    OpKind::Scale,
    OpKind::Sigmoid,
    OpKind::Tanh,
    OpKind::Concat,
    OpKind::Slice,
    OpKind::Reshape,
    OpKind::Permute,
    OpKind::Softmax,
    OpKind::Gather,
    OpKind::Stack,
    OpKind::Select,
    OpKind::Blend,
    OpKind::CrossEntropy,
    OpKind::Sum,
];

fn check_op(op: OpKind, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, m) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(2..4));
    let mut store = ParamStore::new();
    let (a_shape, b_shape): (Vec<usize>, Vec<usize>) = match op {
        OpKind::MatMul => (vec![n, k], vec![k, m]),
        OpKind::Bmm => (vec![2, n, k], vec![2, k, m]),
        OpKind::AddBias => (vec![n, m], vec![m]),
        OpKind::Concat => (vec![n, k], vec![n, m]),
        OpKind::Permute | OpKind::Select => (vec![2, n, m], vec![1]),
        _ => (vec![n, m], vec![n, m]),
    };
    let a = store.insert("a", random(&mut rng, &a_shape)).unwrap();
    let b = store.insert("b", random(&mut rng, &b_shape)).unwrap();
    let mask: Vec<bool> = (0..a_shape[0]).map(|_| rng.gen_bool(0.5)).collect();
    let mut soft_mask: Vec<bool> = (0..n * m).map(|_| rng.gen_bool(0.7)).collect();
    soft_mask[0] = true;
    let rows: Vec<usize> = (0..5).map(|_| rng.gen_range(0..n)).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
    let factor = rng.gen_range(-2.0..2.0);

    let loss = |g: &mut Graph, s: &ParamStore| -> Result<Var> {
        let (va, vb) = (g.param(s, a)?, g.param(s, b)?);
        let out = match op {
            OpKind::MatMul => g.matmul(va, vb)?,
            OpKind::Bmm => g.bmm(va, vb)?,
            OpKind::Add => g.add(va, vb)?,
            OpKind::Mul => g.mul(va, vb)?,
            OpKind::AddBias => g.add_bias(va, vb)?,
            OpKind::Scale => g.scale(va, factor)?,
            OpKind::Sigmoid => g.sigmoid(va)?,
            OpKind::Tanh => g.tanh(va)?,
            OpKind::Concat => g.concat(&[va, vb])?,
            OpKind::Slice => g.slice_last(va, 1, m)?,
            OpKind::Reshape => g.reshape(va, &[n * m])?,
            OpKind::Permute => g.permute(va, &[2, 0, 1])?,
            OpKind::Softmax => {
                let x = g.masked_softmax(va, 1, Some(&soft_mask))?;
                let y = g.softmax(vb, 0)?;
                g.add(x, y)?
            }
            OpKind::Gather => g.gather(va, &rows)?,
            OpKind::Stack => g.stack(&[va, vb, va])?,
            OpKind::Select => g.select(va, 1)?,
            OpKind::Blend => g.blend(va, vb, &mask)?,
            OpKind::CrossEntropy => {
                let mut t = targets.clone();
                if n > 1 {
                    t[0] = 99;
                }
                return g.cross_entropy(va, &t, Some(99));
            }
            OpKind::Sum => return g.sum(va),
            _ => unreachable!(),
        };
        project(g, out, seed)
    };
    let report = grad_check(
        loss,
        &store,
        &GradCheckConfig {
            max_entries: 64,
            seed,
            ..GradCheckConfig::default()
        },
    )
    .unwrap();
    assert!(report.max_error() < 1e-4, "{} seed {seed}: {:?}", op.name(), report.params[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_op_matches_finite_differences(seed in any::<u64>()) {
        for op in OPS {
            check_op(op, seed);
        }
    }

    #[test]
    fn softmax_slices_are_distributions(seed in any::<u64>(), scale in 0.1f64..500.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = random(&mut rng, &[3, 4, 2]);
        let x = g.constant(Tensor::new(vec![3, 4, 2], x.data().iter().map(|v| v * scale).collect()).unwrap()).unwrap();
        for axis in 0..3 {
            let s = g.softmax(x, axis).unwrap();
            let t = g.value(s).clone();
            prop_assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let shape = t.shape().to_vec();
            let mut idx = vec![0; 3];
            for i in 0..shape[0] {
                for j in 0..shape[1] {
                    for k in 0..shape[2] {
                        idx[0] = i; idx[1] = j; idx[2] = k;
                        if idx[axis] != 0 { continue; }
                        let mut total = 0.0;
                        for step in 0..shape[axis] {
                            let mut p = idx.clone();
                            p[axis] = step;
                            total += t.at(&p);
                        }
                        prop_assert!((total - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let a = store.insert("a", random(&mut rng, &[3, 4])).unwrap();
            let b = store.insert("b", random(&mut rng, &[4, 2])).unwrap();
            let mut g = Graph::new();
            let (va, vb) = (g.param(&store, a).unwrap(), g.param(&store, b).unwrap());
            let p = g.matmul(va, vb).unwrap();
            let t = g.tanh(p).unwrap();
            let s = g.softmax(t, 1).unwrap();
            let l = g.cross_entropy(s, &[0, 1, 0], None).unwrap();
            let grads = g.backward(l).unwrap();
            (g.scalar(l).to_bits(), grads.wrt(va).unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}
