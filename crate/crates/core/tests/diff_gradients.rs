//! Finite-difference checks for every tape primitive.

use lankgc::diff::check::rel_error;
use lankgc::diff::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

/// Builds a scalar from leaves holding `inputs`; returns the loss node and the leaves.
type Builder = dyn Fn(&mut Tape, &[Var]) -> Var;

fn check_primitive(name: &str, inputs: &[(Vec<f64>, (usize, usize))], build: &Builder) {
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut t = Tape::new();
        let leaves: Vec<Var> = vals
            .iter()
            .zip(inputs)
            .map(|(v, (_, (r, c)))| t.leaf_matrix(v.clone(), *r, *c).unwrap())
            .collect();
        let l = build(&mut t, &leaves);
        t.scalar_value(l)
    };
    let mut t = Tape::new();
    let leaves: Vec<Var> = inputs
        .iter()
        .map(|(v, (r, c))| t.leaf_matrix(v.clone(), *r, *c).unwrap())
        .collect();
    let loss = build(&mut t, &leaves);
    let adj = t.adjoints(loss).unwrap();

    let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = adj.of(*leaf);
        for i in 0..vals[k].len() {
            let orig = vals[k][i];
            vals[k][i] = orig + H;
            let plus = eval(&vals);
            vals[k][i] = orig - H;
            let minus = eval(&vals);
            vals[k][i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let err = rel_error(analytic[i], numeric);
            assert!(
                err <= TOL,
                "{name}: input {k}[{i}] analytic {} numeric {numeric} (rel {err})",
                analytic[i]
            );
        }
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Values kept away from 0 so |x| and max(0, x) are smooth within ±h.
fn rand_vec_off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect()
}

/// Projects a vector output to a scalar with fixed random weights.
fn project(t: &mut Tape, v: Var, weights: &[f64]) -> Var {
    let w = t.input(weights.to_vec());
    t.dot(v, w).unwrap()
}

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(1..=8);
        let v = |rng: &mut ChaCha8Rng| (rand_vec(rng, d), (d, 1));
        let c = rand_vec(&mut rng, d);
        let c2 = rand_vec(&mut rng, 2 * d);

        let (a, b) = (v(&mut rng), v(&mut rng));
        let cc = c.clone();
        check_primitive("add", &[a.clone(), b.clone()], &move |t, x| {
            let y = t.add(x[0], x[1]).unwrap();
            project(t, y, &cc)
        });
        let cc = c.clone();
        check_primitive("sub", &[a.clone(), b.clone()], &move |t, x| {
            let y = t.sub(x[0], x[1]).unwrap();
            project(t, y, &cc)
        });
        let cc = c.clone();
        check_primitive("neg/scale/offset", &[a.clone()], &move |t, x| {
            let y = t.neg(x[0]);
            let y = t.scale(y, 1.7);
            let y = t.offset(y, 0.3);
            project(t, y, &cc)
        });
        let cc = c.clone();
        let s = (rand_vec(&mut rng, 1), (1, 1));
        check_primitive("scale_by", &[s, a.clone()], &move |t, x| {
            let y = t.scale_by(x[0], x[1]).unwrap();
            project(t, y, &cc)
        });
        let cc = c.clone();
        check_primitive("mul", &[a.clone(), b.clone()], &move |t, x| {
            let y = t.mul(x[0], x[1]).unwrap();
            project(t, y, &cc)
        });
        check_primitive("dot", &[a.clone(), b.clone()], &|t, x| t.dot(x[0], x[1]).unwrap());
        check_primitive("dot-self", &[a.clone()], &|t, x| t.dot(x[0], x[0]).unwrap());

        let m = (rand_vec(&mut rng, d * 2 * d), (d, 2 * d));
        let v2 = (rand_vec(&mut rng, 2 * d), (2 * d, 1));
        let cc = c.clone();
        check_primitive("matvec", &[m.clone(), v2], &move |t, x| {
            let y = t.matvec(x[0], x[1]).unwrap();
            project(t, y, &cc)
        });
        let cc = c.clone();
        check_primitive("matvec_cols", &[m, a.clone()], &move |t, x| {
            let y = t.matvec_cols(x[0], d, x[1]).unwrap();
            project(t, y, &cc)
        });
        let cc2 = c2.clone();
        check_primitive("concat", &[a.clone(), b.clone()], &move |t, x| {
            let y = t.concat(&[x[0], x[1]]).unwrap();
            project(t, y, &cc2)
        });
        let cc = c.clone();
        let long = (rand_vec(&mut rng, 2 * d), (2 * d, 1));
        check_primitive("slice", &[long], &move |t, x| {
            let y = t.slice(x[0], d / 2, d).unwrap();
            project(t, y, &cc)
        });
        let cc = c.clone();
        check_primitive("tanh", &[a.clone()], &move |t, x| {
            let y = t.tanh(x[0]);
            project(t, y, &cc)
        });
        let cc = c.clone();
        check_primitive("sigmoid", &[a.clone()], &move |t, x| {
            let y = t.sigmoid(x[0]);
            project(t, y, &cc)
        });
        let smooth = (rand_vec_off_kink(&mut rng, d), (d, 1));
        let cc = c.clone();
        check_primitive("relu", &[smooth.clone()], &move |t, x| {
            let y = t.relu(x[0]);
            project(t, y, &cc)
        });
        check_primitive("l1", &[smooth], &|t, x| t.l1_norm(x[0]));
        check_primitive("l2sq", &[a.clone()], &|t, x| t.l2_sq(x[0]));
        check_primitive("sum", &[a.clone()], &|t, x| t.sum(x[0]));

        let mut mask: Vec<bool> = (0..d).map(|_| rng.gen_bool(0.7)).collect();
        mask[rng.gen_range(0..d)] = true;
        let cc = c.clone();
        let mk = mask.clone();
        check_primitive("softmax", &[a.clone()], &move |t, x| {
            let y = t.softmax_masked(x[0], &mk).unwrap();
            project(t, y, &cc)
        });

        let k = rng.gen_range(1..=5);
        let items: Vec<_> = (0..k).map(|_| v(&mut rng)).collect();
        let mut imask: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.6)).collect();
        imask[0] = true;
        let cc = c.clone();
        let mk = imask.clone();
        check_primitive("mean_masked", &items, &move |t, x| {
            let y = t.mean_masked(x, &mk).unwrap();
            project(t, y, &cc)
        });

        let scalars: Vec<_> = (0..k).map(|_| (rand_vec(&mut rng, 1), (1, 1))).collect();
        let ck = rand_vec(&mut rng, k);
        check_primitive("stack", &scalars, &move |t, x| {
            let y = t.stack(x).unwrap();
            project(t, y, &ck)
        });

        let mut ws_inputs = vec![(rand_vec(&mut rng, k), (k, 1))];
        ws_inputs.extend(items.iter().cloned());
        let cc = c.clone();
        check_primitive("weighted_sum", &ws_inputs, &move |t, x| {
            let y = t.weighted_sum(x[0], &x[1..]).unwrap();
            project(t, y, &cc)
        });
    }
}

#[test]
fn masked_softmax_sums_to_one_and_ignores_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.gen_range(1..64);
        let x = rand_vec(&mut rng, n);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        mask[0] = true;
        let mut t = Tape::new();
        let v = t.input(x.clone());
        let y = t.softmax_masked(v, &mask).unwrap();
        let out = t.value(y);
        let total: f64 = out.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        for (o, m) in out.iter().zip(&mask) {
            if !m {
                assert_eq!(*o, 0.0);
            }
        }
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let run = || {
        let mut t = Tape::new();
        let a = t.leaf(vec![0.3, -0.2, 0.9]);
        let b = t.leaf(vec![1.1, 0.4, -0.7]);
        let m = t.mul(a, b).unwrap();
        let th = t.tanh(m);
        let s = t.softmax_masked(th, &[true, true, false]).unwrap();
        let l = t.dot(s, a).unwrap();
        let adj = t.adjoints(l).unwrap();
        (adj.of(a), adj.of(b))
    };
    assert_eq!(run(), run());
}
