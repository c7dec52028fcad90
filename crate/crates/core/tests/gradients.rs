//! Finite-difference gradient checks for every trainable layer, each over
//! 20 seeds, all with max relative error below 1e-4.

mod common;

use common::{cohort_loss, random_adjacency, tiny_model};
use hermes_core::ddi::to_edge_index;
use hermes_core::model::layers::{
    dynamic_read, gat_forward, gcn_forward, gru_step, memory_keys, memory_read, mhca_fuse, normalized_adjacency,
    predict, visit_loss, GatVars, GruVars, MhcaVars,
};
use hermes_core::model::Variant;
use hermes_core::numcore::{gradcheck, gradcheck_with, uniform_symmetric, Mode, Tape, Tensor, Var};
use hermes_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform_symmetric(rng, shape.to_vec(), 1.0)
}

/// Reduces `v` to a scalar through fixed random weights so every output
/// element contributes a distinct amount.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = tape.constant(uniform_symmetric(&mut rng, shape, 1.0));
    let m = tape.mul(v, r)?;
    tape.sum(m)
}

fn check(name: &str, seed: u64, err: f64) {
    assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
}

#[test]
fn gru_step_and_two_visit_encoder() {
    let (d, h) = (5, 4);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = vec![
            rand_t(&mut rng, &[1, d]),
            rand_t(&mut rng, &[1, d]),
            rand_t(&mut rng, &[1, h]),
            rand_t(&mut rng, &[d, 3 * h]),
            rand_t(&mut rng, &[h, 3 * h]),
            rand_t(&mut rng, &[1, 3 * h]),
            rand_t(&mut rng, &[1, 3 * h]),
        ];
        let err = gradcheck(
            |tape, v| {
                let p = GruVars { w_x: v[3], w_h: v[4], b_x: v[5], b_h: v[6] };
                let h1 = gru_step(tape, v[0], v[2], &p)?;
                let h2 = gru_step(tape, v[1], h1, &p)?;
                project(tape, h2, seed)
            },
            &point,
            H,
        )
        .unwrap();
        check("gru", seed, err);
    }
}

#[test]
fn gcn_layer() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..7);
        let a_hat = normalized_adjacency::<f64>(&random_adjacency(n, 0.5, &mut rng));
        let point = vec![rand_t(&mut rng, &[n, 4]), rand_t(&mut rng, &[4, 3])];
        let err = gradcheck(
            |tape, v| {
                let a = tape.constant(a_hat.clone());
                let z = gcn_forward(tape, v[0], a, v[1])?;
                project(tape, z, seed)
            },
            &point,
            H,
        )
        .unwrap();
        check("gcn", seed, err);
    }
}

#[test]
fn gat_layer_eval_and_train() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..7);
        let edges = to_edge_index(&random_adjacency(n, 0.5, &mut rng));
        let (d, dh) = (4, 3);
        let point = vec![
            rand_t(&mut rng, &[n, d]),
            rand_t(&mut rng, &[d, dh]),
            rand_t(&mut rng, &[1, 2 * dh]),
            rand_t(&mut rng, &[d, dh]),
            rand_t(&mut rng, &[1, 2 * dh]),
        ];
        let f = |tape: &mut Tape<f64>, v: &[Var]| {
            let p = GatVars { heads: vec![(v[1], v[2]), (v[3], v[4])] };
            let out = gat_forward(tape, v[0], &edges, &p, 0.2, 0.3)?;
            project(tape, out.z, seed)
        };
        check("gat eval", seed, gradcheck(f, &point, H).unwrap());
        check("gat train", seed, gradcheck_with(Mode::Train, seed, f, &point, H).unwrap());
    }
}

#[test]
fn memory_keys_and_reads() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, qd, t) = (6, 4, 5, rng.random_range(1..4));
        // every history row has at least two drugs so ‖u‖₁ stays above 1
        let mut y = vec![0.0; t * n];
        for r in 0..t {
            y[r * n + rng.random_range(0..n / 2)] = 1.0;
            y[r * n + n / 2 + rng.random_range(0..n / 2)] = 1.0;
        }
        let y_hist = Tensor::new(vec![t, n], y).unwrap();
        let point = vec![
            rand_t(&mut rng, &[n, d]),
            rand_t(&mut rng, &[n, d]),
            rand_t(&mut rng, &[1]),
            rand_t(&mut rng, &[1, d]),
            rand_t(&mut rng, &[1, qd]),
            rand_t(&mut rng, &[t, qd]),
        ];
        let err = gradcheck(
            |tape, v| {
                let keys = memory_keys(tape, v[0], v[1], v[2])?;
                let (fact1, _) = memory_read(tape, v[3], keys)?;
                let yh = tape.constant(y_hist.clone());
                let (fact2, _) = dynamic_read(tape, v[4], Some((v[5], yh)), keys)?;
                let both = tape.concat(&[fact1, fact2], hermes_core::numcore::Axis::Cols)?;
                project(tape, both, seed)
            },
            &point,
            H,
        )
        .unwrap();
        check("memory", seed, err);
    }
}

#[test]
fn mhca_block() {
    let d = 6;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut point: Vec<Tensor<f64>> = (0..3).map(|_| rand_t(&mut rng, &[1, d])).collect();
        point.extend((0..4).map(|_| rand_t(&mut rng, &[d, d])));
        let err = gradcheck(
            |tape, v| {
                let p = MhcaVars { w_q: v[3], w_k: v[4], w_v: v[5], w_o: v[6] };
                let (fused, _) = mhca_fuse(tape, v[0], v[1], v[2], &p, 2)?;
                project(tape, fused, seed)
            },
            &point,
            H,
        )
        .unwrap();
        check("mhca", seed, err);
    }
}

#[test]
fn output_head_and_visit_loss() {
    let (f, n) = (9, 6);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::new(vec![n, n], random_adjacency(n, 0.5, &mut rng).to_dense()).unwrap();
        let targets: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let point = vec![rand_t(&mut rng, &[1, f]), rand_t(&mut rng, &[f, n]), rand_t(&mut rng, &[1, n])];
        let head = gradcheck(
            |tape, v| {
                let (_, scores) = predict(tape, v[0], v[1], v[2])?;
                project(tape, scores, seed)
            },
            &point,
            H,
        )
        .unwrap();
        check("output head", seed, head);
        let loss = gradcheck(
            |tape, v| {
                let (logits, scores) = predict(tape, v[0], v[1], v[2])?;
                let a = tape.constant(a.clone());
                Ok(visit_loss(tape, logits, scores, &targets, a, 0.7)?.total)
            },
            &point,
            H,
        )
        .unwrap();
        check("visit loss", seed, loss);
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

#[test]
fn full_model_loss() {
    for variant in Variant::ALL {
        for seed in 0..SEEDS {
            let (mut model, patients) = tiny_model(variant, seed);
            let (tape, loss, b) = cohort_loss(&model, &patients, 0.5);
            let mut grads = tape.backward(loss).unwrap();
            let analytic: Vec<Option<Vec<f64>>> = b.bound_vars().map(|(_, v)| grads.take(v)).collect();
            let eval = |m: &hermes_core::model::Model<f64>| {
                let (t, l, _) = cohort_loss(m, &patients, 0.5);
                t.value(l).data()[0]
            };
            for p in 0..model.params.len() {
                for k in 0..model.params.tensors()[p].numel() {
                    let orig = model.params.tensors()[p].data()[k];
                    model.params.tensors_mut()[p].data_mut()[k] = orig + H;
                    let up = eval(&model);
                    model.params.tensors_mut()[p].data_mut()[k] = orig - H;
                    let down = eval(&model);
                    model.params.tensors_mut()[p].data_mut()[k] = orig;
                    let num = (up - down) / (2.0 * H);
                    let a = analytic[p].as_ref().map_or(0.0, |g| g[k]);
                    let e = rel_err(a, num);
                    assert!(e < TOL, "{variant} seed {seed} {}[{k}]: analytic {a} numeric {num}", model.params.names()[p]);
                }
            }
        }
    }
}
