//! Finite-difference verification of the whole differentiable stack: every
//! tape primitive over randomized shapes, and the full encoder-to-total-loss
//! composite over every parameter element.

use crate::autodiff::{grad_check, Tape, Tensor, TensorId};
use crate::env::VneEnv;
use crate::policy::encoder::FusionVariant;
use crate::policy::{ArchConfig, PolicyNet};
use crate::sim::SimulationConfig;
use crate::trainer::{
    build_total_loss, collect_rollouts, forward_signals, FrozenSignals, InstanceStream,
    RolloutBatch, TrainConfig, TrainError,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub const FD_EPSILON: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha12Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Values bounded away from zero so activation kinks sit outside the
/// finite-difference window.
fn rand_tensor_nudged(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign * rng.gen_range(0.05..1.5)
            })
            .collect(),
    )
}

/// Reduces any output to a scalar with a fixed random weighting so every
/// output element contributes a distinct gradient.
fn weighted_scalar(tape: &mut Tape, out: TensorId, rng: &mut ChaCha12Rng) -> TensorId {
    let shape = tape.value(out).shape().to_vec();
    let n = tape.value(out).numel();
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let wc = tape.constant(w);
    let prod = tape.mul(out, wc).unwrap();
    tape.sum(prod)
}

fn sorted_segments(rng: &mut ChaCha12Rng, len: usize, n_segments: usize) -> Vec<usize> {
    let mut seg: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n_segments)).collect();
    seg.sort_unstable();
    seg
}

/// Max relative gradient error per op family over randomized trials.
pub fn op_family_checks(seed: u64, trials: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut results: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| {
        match results.iter_mut().find(|(n, _)| n == name) {
            Some((_, worst)) => *worst = worst.max(err),
            None => results.push((name.to_string(), err)),
        }
    };

    for _ in 0..trials {
        let m = rng.gen_range(1..6);
        let k = rng.gen_range(1..6);
        let n = rng.gen_range(1..6);

        let a = rand_tensor(&mut rng, m, k, -1.5, 1.5);
        let b = rand_tensor(&mut rng, k, n, -1.5, 1.5);
        let wrng = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "matmul",
            grad_check(
                |t, ids| {
                    let out = t.matmul(ids[0], ids[1]).unwrap();
                    weighted_scalar(t, out, &mut wrng.clone())
                },
                &[a.clone(), b],
                FD_EPSILON,
            ),
        );
        record(
            "transpose",
            grad_check(
                |t, ids| {
                    let out = t.transpose(ids[0]).unwrap();
                    weighted_scalar(t, out, &mut wrng.clone())
                },
                &[a.clone()],
                FD_EPSILON,
            ),
        );

        let x = rand_tensor(&mut rng, m, n, -1.5, 1.5);
        let y = rand_tensor(&mut rng, m, n, -1.5, 1.5);
        for (name, op) in [
            ("add", 0usize),
            ("sub", 1),
            ("mul", 2),
        ] {
            let w = ChaCha12Rng::seed_from_u64(rng.gen());
            record(
                name,
                grad_check(
                    |t, ids| {
                        let out = match op {
                            0 => t.add(ids[0], ids[1]).unwrap(),
                            1 => t.sub(ids[0], ids[1]).unwrap(),
                            _ => t.mul(ids[0], ids[1]).unwrap(),
                        };
                        weighted_scalar(t, out, &mut w.clone())
                    },
                    &[x.clone(), y.clone()],
                    FD_EPSILON,
                ),
            );
        }

        // min_elem inputs separated so no tie sits inside the FD window.
        let gap = rand_tensor(&mut rng, m, n, 0.1, 1.0);
        let y_sep = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(gap.data()).map(|(a, g)| a + g).collect(),
        );
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "min_elem",
            grad_check(
                |t, ids| {
                    let out = t.min_elem(ids[0], ids[1]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone(), y_sep],
                FD_EPSILON,
            ),
        );

        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "neg_scale_add_const",
            grad_check(
                |t, ids| {
                    let n1 = t.neg(ids[0]);
                    let s = t.scale(n1, 1.7);
                    let out = t.add_const(s, 0.3);
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone()],
                FD_EPSILON,
            ),
        );

        let bias = rand_tensor(&mut rng, 1, n, -1.0, 1.0);
        let bias_v = Tensor::vector(bias.data().to_vec());
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "add_bias",
            grad_check(
                |t, ids| {
                    let out = t.add_bias(ids[0], ids[1]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone(), bias_v.clone()],
                FD_EPSILON,
            ),
        );
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "sub_row",
            grad_check(
                |t, ids| {
                    let out = t.sub_row(ids[0], ids[1]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone(), bias_v.clone()],
                FD_EPSILON,
            ),
        );
        let denom = Tensor::vector((0..n).map(|_| rng.gen_range(0.5..2.0)).collect());
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "div_row",
            grad_check(
                |t, ids| {
                    let out = t.div_row(ids[0], ids[1]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone(), denom],
                FD_EPSILON,
            ),
        );

        let extra_rows = rng.gen_range(1..4);
        let extra = rand_tensor(&mut rng, extra_rows, n, -1.5, 1.5);
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "concat_rows",
            grad_check(
                |t, ids| {
                    let out = t.concat_rows(&[ids[0], ids[1]]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone(), extra],
                FD_EPSILON,
            ),
        );

        let s1 = Tensor::scalar(rng.gen_range(-1.0..1.0));
        let s2 = Tensor::scalar(rng.gen_range(-1.0..1.0));
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "stack_scalars",
            grad_check(
                |t, ids| {
                    let out = t.stack_scalars(&[ids[0], ids[1]]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[s1, s2],
                FD_EPSILON,
            ),
        );

        let idx: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..m)).collect();
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "gather_rows",
            grad_check(
                |t, ids| {
                    let out = t.gather_rows(ids[0], &idx).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone()],
                FD_EPSILON,
            ),
        );
        let cidx: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..n)).collect();
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "gather_cols",
            grad_check(
                |t, ids| {
                    let out = t.gather_cols(ids[0], &cidx).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone()],
                FD_EPSILON,
            ),
        );

        let len = rng.gen_range(2..10);
        let n_seg = rng.gen_range(1..4);
        let seg = sorted_segments(&mut rng, len, n_seg);
        let logits = Tensor::vector((0..len).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        let seg_clone = seg.clone();
        record(
            "segment_softmax",
            grad_check(
                |t, ids| {
                    let out = t.segment_softmax(ids[0], &seg_clone).unwrap();
                    let shape = t.value(out).shape().to_vec();
                    let nn = t.value(out).numel();
                    let mut wr = w.clone();
                    let wt = Tensor::new(shape, (0..nn).map(|_| wr.gen_range(-1.0..1.0)).collect());
                    let wc = t.constant(wt);
                    let prod = t.mul(out, wc).unwrap();
                    t.sum(prod)
                },
                &[logits],
                FD_EPSILON,
            ),
        );

        let rows_t = rand_tensor(&mut rng, len, n, -1.5, 1.5);
        let seg2 = sorted_segments(&mut rng, len, n_seg);
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "segment_sum",
            grad_check(
                |t, ids| {
                    let out = t.segment_sum(ids[0], &seg2, n_seg).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[rows_t.clone()],
                FD_EPSILON,
            ),
        );

        let weights = Tensor::vector((0..len).map(|_| rng.gen_range(-1.5..1.5)).collect());
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "scale_rows",
            grad_check(
                |t, ids| {
                    let out = t.scale_rows(ids[0], ids[1]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[rows_t, weights],
                FD_EPSILON,
            ),
        );

        let nudged = rand_tensor_nudged(&mut rng, m, n);
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "leaky_relu",
            grad_check(
                |t, ids| {
                    let out = t.leaky_relu(ids[0], 0.2);
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[nudged.clone()],
                FD_EPSILON,
            ),
        );
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "softplus",
            grad_check(
                |t, ids| {
                    let out = t.softplus(ids[0]);
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[nudged.clone()],
                FD_EPSILON,
            ),
        );

        let positive = rand_tensor(&mut rng, m, n, 0.3, 2.5);
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "sqrt",
            grad_check(
                |t, ids| {
                    let out = t.sqrt(ids[0]);
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[positive.clone()],
                FD_EPSILON,
            ),
        );
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "log",
            grad_check(
                |t, ids| {
                    let out = t.log(ids[0]);
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[positive.clone()],
                FD_EPSILON,
            ),
        );
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "exp",
            grad_check(
                |t, ids| {
                    let out = t.exp(ids[0]);
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone()],
                FD_EPSILON,
            ),
        );

        // Clamp bounds placed so no input sits within the FD window of them.
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "clamp",
            grad_check(
                |t, ids| {
                    let out = t.clamp(ids[0], -0.5, 0.75);
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[rand_tensor_nudged(&mut rng, m, n)],
                FD_EPSILON,
            ),
        );

        record(
            "sum",
            grad_check(|t, ids| t.sum(ids[0]), &[x.clone()], FD_EPSILON),
        );
        record(
            "mean",
            grad_check(|t, ids| t.mean(ids[0]), &[x.clone()], FD_EPSILON),
        );
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "sum_axis0",
            grad_check(
                |t, ids| {
                    let out = t.sum_axis0(ids[0]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone()],
                FD_EPSILON,
            ),
        );
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "mean_axis0",
            grad_check(
                |t, ids| {
                    let out = t.mean_axis0(ids[0]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone()],
                FD_EPSILON,
            ),
        );
        record(
            "mse",
            grad_check(
                |t, ids| t.mse(ids[0], ids[1]).unwrap(),
                &[x.clone(), y.clone()],
                FD_EPSILON,
            ),
        );
        let w = ChaCha12Rng::seed_from_u64(rng.gen());
        record(
            "reshape",
            grad_check(
                |t, ids| {
                    let out = t.reshape(ids[0], vec![n, m]).unwrap();
                    weighted_scalar(t, out, &mut w.clone())
                },
                &[x.clone()],
                FD_EPSILON,
            ),
        );
    }
    results
}

fn tiny_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        sim: SimulationConfig {
            pn_nodes: 6,
            vn_count: 10,
            vn_size_range: (2, 3),
            vn_node_demand_range: (0.0, 20.0),
            vn_link_demand_range: (0.0, 30.0),
            arrival_rate: 0.5,
            lifetime_mean: 20.0,
            seed,
            ..SimulationConfig::default()
        },
        arch: ArchConfig {
            hidden: 8,
            layers: 2,
            attn_slope: 0.2,
            act_slope: 0.2,
            fusion: FusionVariant::DecisionSymmetric,
        },
        episodes_per_update: 3,
        contrast_samples: 2,
        seed,
        ..TrainConfig::default()
    }
}

/// Builds a small but fully exercised rollout batch (mapped links present,
/// prepared links routed) for the composite check.
fn composite_fixture(
    seed: u64,
) -> Result<(PolicyNet, VneEnv, RolloutBatch, Vec<f64>, TrainConfig), TrainError> {
    let cfg = tiny_train_config(seed);
    let env = VneEnv::new(cfg.env);
    let policy = PolicyNet::init(cfg.arch, seed);
    let surrogate = policy.clone();
    let mut stream = InstanceStream::new(&cfg.sim, 0.0, seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xF00D);
    let mut batch = collect_rollouts(
        &policy,
        &surrogate,
        &mut stream,
        cfg.episodes_per_update,
        &env,
        &cfg,
        &mut rng,
    )?;
    // Stale the old log-probs so PPO ratios sit away from 1 and from the
    // clip boundaries: every min/clamp branch is locally smooth.
    let mut noise = ChaCha12Rng::seed_from_u64(seed ^ 0x11CE);
    for t in &mut batch.transitions {
        t.log_prob += noise.gen_range(-0.08..0.08);
    }
    let adv_norm: Vec<f64> = {
        let n = batch.adv_reward.len().max(1) as f64;
        let mean = batch.adv_reward.iter().sum::<f64>() / n;
        let var =
            batch.adv_reward.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        batch.adv_reward.iter().map(|a| (a - mean) / std).collect()
    };
    Ok((policy, env, batch, adv_norm, cfg))
}

/// Finite-difference check of the entire encode -> heads -> weighted total
/// loss composite over every parameter element. Returns the max relative
/// error.
pub fn composite_check(seed: u64) -> Result<f64, TrainError> {
    let (policy, env, batch, adv_norm, cfg) = composite_fixture(seed)?;
    let indices: Vec<usize> = (0..batch.transitions.len()).collect();

    // Stop-gradient quantities pinned from the base parameters so the
    // checked function is smooth in the parameters.
    let (lambda_vals, vh_vals) = forward_signals(&policy, &env, &batch, &indices)?;
    let frozen = FrozenSignals { lambda_vals: Some(lambda_vals), vh_vals: Some(vh_vals) };

    let loss_of = |p: &PolicyNet| -> f64 {
        let mut tape = Tape::new();
        let mut crng = ChaCha12Rng::seed_from_u64(seed ^ 0xC0FFEE);
        let (loss, _) = build_total_loss(
            p,
            &env,
            &mut tape,
            &batch,
            &indices,
            &adv_norm,
            &cfg,
            Some(&mut crng),
            &frozen,
        )
        .expect("composite loss builds");
        tape.scalar_value(loss)
    };

    // Analytic gradients.
    let mut reference = policy.clone();
    {
        let mut tape = Tape::new();
        let mut crng = ChaCha12Rng::seed_from_u64(seed ^ 0xC0FFEE);
        let (loss, _) = build_total_loss(
            &reference,
            &env,
            &mut tape,
            &batch,
            &indices,
            &adv_norm,
            &cfg,
            Some(&mut crng),
            &frozen,
        )?;
        let grads = tape.backward(loss);
        reference.params.zero_grads();
        tape.grads_into(&grads, &mut reference.params);
    }

    let names: Vec<String> = reference.params.names().map(String::from).collect();
    let mut max_err: f64 = 0.0;
    for name in names {
        let numel = reference.params.get(&name).numel();
        let analytic = reference
            .params
            .grad(&name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(reference.params.get(&name).shape().to_vec()));
        for elem in 0..numel {
            let mut plus = policy.clone();
            plus.params.get_mut(&name).data_mut()[elem] += FD_EPSILON;
            let mut minus = policy.clone();
            minus.params.get_mut(&name).data_mut()[elem] -= FD_EPSILON;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * FD_EPSILON);
            let a = analytic.data()[elem];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            max_err = max_err.max((a - numeric).abs() / denom);
        }
    }
    Ok(max_err)
}

/// The gradcheck report: every op family plus the full composite.
pub fn full_suite(seed: u64, trials: usize) -> Result<Vec<(String, f64)>, TrainError> {
    let mut rows = op_family_checks(seed, trials);
    rows.push(("composite_total_loss".to_string(), composite_check(seed)?));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let err = grad_check(
            |t, ids| {
                let s = t.scale(ids[0], 2.5);
                t.sum(s)
            },
            &[x],
            FD_EPSILON,
        );
        assert!(err <= 1e-9, "linear gradient error {err}");
    }

    #[test]
    fn dead_relu_region_has_exactly_zero_gradient() {
        let x = Tensor::vector(vec![-1.0, -0.5, -2.0]);
        let mut tape = Tape::new();
        let id = tape.input(x.clone());
        let out = tape.leaky_relu(id, 0.0);
        let loss = tape.sum(out);
        let grads = tape.backward(loss);
        assert!(grads.get(id).unwrap().data().iter().all(|&g| g == 0.0));
        let err = grad_check(
            |t, ids| {
                let out = t.leaky_relu(ids[0], 0.0);
                t.sum(out)
            },
            &[x],
            FD_EPSILON,
        );
        assert_eq!(err, 0.0);
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut tape = Tape::new();
        let id = tape.input(x);
        let loss = tape.sum(id);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(id).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // f(x) = sum(x * x) + sum(x): df/dx = 2x + 1 via two uses of x.
        let x = Tensor::vector(vec![1.5, -0.5]);
        let mut tape = Tape::new();
        let id = tape.input(x);
        let sq = tape.mul(id, id).unwrap();
        let s1 = tape.sum(sq);
        let s2 = tape.sum(id);
        let loss = tape.add(s1, s2).unwrap();
        let grads = tape.backward(loss);
        assert_eq!(grads.get(id).unwrap().data(), &[4.0, 0.0]);
    }

    #[test]
    fn segment_softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![0.0, 0.0, 0.0, 5.0, -1.0]));
        let seg = vec![0, 0, 0, 1, 1];
        let out = tape.segment_softmax(x, &seg).unwrap();
        let v = tape.value(out).data();
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[3] + v[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn op_families_pass_tolerance_quickly() {
        for (name, err) in op_family_checks(3, 3) {
            assert!(err <= GRAD_TOLERANCE, "{name}: {err}");
        }
    }
}
