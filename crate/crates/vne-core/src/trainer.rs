//! Training loop: experience collection with a greedy surrogate policy
//! setting adaptive reachability budgets, reachability/value targets,
//! PPO-Lagrangian loss assembly, parameter updates, and surrogate
//! synchronization.

use crate::autodiff::{AdamConfig, Tape, Tensor, TensorId};
use crate::constraints::check_solution;
use crate::env::{EnvConfig, EnvState, Trajectory, Transition, VneEnv};
use crate::net::{PhysicalNetwork, Solution, VNEInstance, VirtualNetwork};
use crate::policy::encoder::{select_action, PolicyError, PolicyNet};
use crate::policy::{barlow_twins_loss, build_hetero_graph, augment_physical, augment_virtual};
use crate::policy::ArchConfig;
use crate::sim::{gen_vn_request, gen_waxman, SimulationConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at update {update}: {diagnostics}")]
    NonFiniteLoss { update: usize, diagnostics: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}

/// Loss weights and optimization schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sim: SimulationConfig,
    pub arch: ArchConfig,
    pub env: EnvConfig,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub w_ppo: f64,
    pub w_lam: f64,
    pub w_cl: f64,
    pub w_r: f64,
    pub w_h: f64,
    /// Surrogate sync interval mu (in updates).
    pub surrogate_sync_interval: usize,
    pub update_epochs: usize,
    pub episodes_per_update: usize,
    pub updates: usize,
    /// Adaptive reachability budget on/off; off means budget 0 everywhere.
    pub arb_enabled: bool,
    /// Discount the reachability suffix max by gamma per step.
    pub discounted_reach: bool,
    /// States per update epoch whose augmented views feed the contrast loss.
    pub contrast_samples: usize,
    pub augment_ratio: f64,
    /// Off-diagonal trade-off inside the contrastive objective.
    pub barlow_weight: f64,
    /// Fraction of requests with inflated node demands (unsolvable-prone).
    pub unsolvable_salt_frac: f64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sim: SimulationConfig::default(),
            arch: ArchConfig::default(),
            env: EnvConfig::default(),
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            batch_size: 128,
            lr: 0.001,
            w_ppo: 1.0,
            w_lam: 0.1,
            w_cl: 0.001,
            w_r: 0.5,
            w_h: 0.5,
            surrogate_sync_interval: 10,
            update_epochs: 4,
            episodes_per_update: 8,
            updates: 200,
            arb_enabled: true,
            discounted_reach: false,
            contrast_samples: 4,
            augment_ratio: 1.0,
            barlow_weight: 5e-3,
            unsolvable_salt_frac: 0.0,
            eval_episodes: 32,
            seed: 0,
        }
    }
}

/// Flattened transitions with their learning targets.
#[derive(Debug, Default)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    pub returns: Vec<f64>,
    pub reach_targets: Vec<f64>,
    pub adv_reward: Vec<f64>,
    pub adv_reach: Vec<f64>,
    /// Sum of step costs on instances whose solutions were not feasible.
    pub c_vio: f64,
    pub episode_rewards: Vec<f64>,
    pub episode_costs: Vec<f64>,
}

/// Budget from a surrogate trajectory: the maximum cost it incurred.
pub fn compute_budget(surrogate_traj: &Trajectory) -> f64 {
    surrogate_traj.max_cost()
}

/// Monte-Carlo reachability targets: the undiscounted suffix maximum of the
/// violation sequence (optionally discounted per step).
pub fn reachability_targets(h: &[f64], gamma: Option<f64>) -> Vec<f64> {
    let mut targets = vec![0.0; h.len()];
    let mut suffix = f64::NEG_INFINITY;
    for t in (0..h.len()).rev() {
        suffix = match gamma {
            None => h[t].max(suffix),
            Some(g) => {
                if suffix == f64::NEG_INFINITY {
                    h[t]
                } else {
                    h[t].max(g * suffix)
                }
            }
        };
        targets[t] = suffix;
    }
    targets
}

/// Discounted reward returns for a finite episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    returns
}

/// Generalized advantage estimation over one finite episode (terminal value
/// zero).
pub fn gae_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// One episode under the given decoding strategy in tolerant mode, recording
/// value predictions alongside the trajectory.
pub struct EpisodeRun {
    pub trajectory: Trajectory,
    pub values_r: Vec<f64>,
    pub values_h: Vec<f64>,
    pub final_state: EnvState,
}

pub fn run_episode(
    policy: &PolicyNet,
    env: &VneEnv,
    inst: Arc<VNEInstance>,
    mut rng: Option<&mut ChaCha12Rng>,
) -> Result<EpisodeRun, TrainError> {
    let mut state = env.reset(inst);
    let mut trajectory = Trajectory::default();
    let mut values_r = Vec::new();
    let mut values_h = Vec::new();
    while !state.done {
        let mask = env.action_mask(&state);
        let graph = build_hetero_graph(env, &state);
        let mut tape = Tape::new();
        let out = policy.forward(&mut tape, &graph, &mask)?;
        let probs = tape.value(out.probs).data().to_vec();
        let (action, log_prob) = select_action(&probs, &mask, rng.as_deref_mut())
            .ok_or(PolicyError::EmptyMask)?;
        values_r.push(tape.scalar_value(out.value));
        values_h.push(tape.scalar_value(out.reach_value));
        let pre_state = state.clone();
        let step = env
            .step(&mut state, action, true)
            .expect("mask admits only legal actions");
        trajectory.transitions.push(Transition {
            state: pre_state,
            action,
            reward: step.reward,
            h: step.h,
            cost: step.cost,
            budget: 0.0,
            log_prob,
            done: step.done,
        });
        if step.done {
            trajectory.terminal_r2c = step.reward;
        }
    }
    trajectory.terminal_feasible = check_solution(&state.inst, &state.solution)
        .map(|r| r.feasible())
        .unwrap_or(false);
    Ok(EpisodeRun { trajectory, values_r, values_h, final_state: state })
}

/// A minimal online network system for training: arrivals draw from the
/// request distribution, accepted embeddings occupy the substrate until
/// their lifetime expires.
pub struct InstanceStream {
    pn: PhysicalNetwork,
    config: SimulationConfig,
    rng: ChaCha12Rng,
    clock: f64,
    next_id: u64,
    departures: BinaryHeap<Reverse<(u64, u64)>>,
    active: Vec<(u64, Solution, VirtualNetwork)>,
    salt_frac: f64,
    salt_rng: ChaCha12Rng,
}

impl InstanceStream {
    pub fn new(config: &SimulationConfig, salt_frac: f64, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pn = gen_waxman(
            config.pn_nodes,
            config.waxman_alpha,
            config.waxman_beta,
            config.node_cap_range,
            config.link_cap_range,
            &mut rng,
        );
        Ok(InstanceStream {
            pn,
            config: config.clone(),
            rng,
            clock: 0.0,
            next_id: 0,
            departures: BinaryHeap::new(),
            active: Vec::new(),
            salt_frac,
            salt_rng: ChaCha12Rng::seed_from_u64(seed ^ 0x5A17),
        })
    }

    /// Advances the clock to the next arrival, settles due departures, and
    /// returns the instance (VN plus substrate snapshot).
    pub fn next_instance(&mut self) -> (u64, Arc<VNEInstance>) {
        let gap = -(1.0 - self.rng.gen::<f64>()).ln() / self.config.arrival_rate;
        self.clock += gap;
        while let Some(Reverse((t_bits, id))) = self.departures.peek().copied() {
            if f64::from_bits(t_bits) > self.clock {
                break;
            }
            self.departures.pop();
            if let Some(pos) = self.active.iter().position(|(aid, _, _)| *aid == id) {
                let (_, sol, vn) = self.active.swap_remove(pos);
                self.pn
                    .release_solution(&sol, &vn)
                    .expect("releasing previously applied training embedding");
            }
        }
        let mut vn = gen_vn_request(&self.config, self.clock, &mut self.rng);
        if self.salt_frac > 0.0 && self.salt_rng.gen::<f64>() < self.salt_frac {
            vn = inflate_demands(&vn, 10.0);
        }
        let id = self.next_id;
        self.next_id += 1;
        (id, Arc::new(VNEInstance::new(vn, self.pn.clone())))
    }

    /// Applies a feasible solution to the live substrate and schedules its
    /// departure.
    pub fn commit(&mut self, id: u64, mut sol: Solution, vn: VirtualNetwork) {
        sol.id = id;
        let depart = vn.arrival_time + vn.lifetime;
        self.pn
            .apply_solution(&sol, &vn)
            .expect("feasibility-checked solution applies cleanly");
        self.departures.push(Reverse((depart.to_bits(), id)));
        self.active.push((id, sol, vn));
    }
}

fn inflate_demands(vn: &VirtualNetwork, factor: f64) -> VirtualNetwork {
    let demands: Vec<f64> = (0..vn.node_count()).map(|i| vn.node_demand(i) * factor).collect();
    let links: Vec<(usize, usize, f64)> =
        vn.links().iter().map(|l| (l.u, l.v, l.demand)).collect();
    VirtualNetwork::new(demands, links, vn.arrival_time, vn.lifetime)
        .expect("scaled VN stays valid")
}

/// Stage 1 of each update: the surrogate solves each instance greedily to
/// set the reachability budget, the main policy samples its trajectory, and
/// targets/advantages are assembled.
pub fn collect_rollouts(
    policy: &PolicyNet,
    surrogate: &PolicyNet,
    stream: &mut InstanceStream,
    episodes: usize,
    env: &VneEnv,
    cfg: &TrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<RolloutBatch, TrainError> {
    let mut batch = RolloutBatch::default();
    for _ in 0..episodes {
        let (id, inst) = stream.next_instance();
        let surrogate_run = run_episode(surrogate, env, inst.clone(), None)?;
        let budget = if cfg.arb_enabled { compute_budget(&surrogate_run.trajectory) } else { 0.0 };

        let mut run = run_episode(policy, env, inst.clone(), Some(rng))?;
        for t in &mut run.trajectory.transitions {
            t.budget = budget;
        }

        let rewards: Vec<f64> = run.trajectory.transitions.iter().map(|t| t.reward).collect();
        let hs: Vec<f64> = run.trajectory.transitions.iter().map(|t| t.h).collect();
        let costs: Vec<f64> = run.trajectory.transitions.iter().map(|t| t.cost).collect();
        let returns = discounted_returns(&rewards, cfg.gamma);
        let reach = reachability_targets(
            &hs,
            if cfg.discounted_reach { Some(cfg.gamma) } else { None },
        );
        let adv_r = gae_advantages(&rewards, &run.values_r, cfg.gamma, cfg.gae_lambda);
        let adv_h: Vec<f64> =
            reach.iter().zip(&run.values_h).map(|(t, v)| t - v).collect();

        batch.episode_rewards.push(run.trajectory.terminal_r2c);
        batch.episode_costs.push(costs.iter().sum());
        if run.trajectory.terminal_feasible {
            let sol = run.final_state.solution.clone();
            stream.commit(id, sol, inst.vn.clone());
        } else {
            batch.c_vio += costs.iter().sum::<f64>();
        }

        batch.returns.extend(returns);
        batch.reach_targets.extend(reach);
        batch.adv_reward.extend(adv_r);
        batch.adv_reach.extend(adv_h);
        batch.transitions.extend(run.trajectory.transitions);
    }
    Ok(batch)
}

/// Sub-loss values for one minibatch (post-weighting happens in the sum).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ppo: f64,
    pub value: f64,
    pub reach: f64,
    pub lambda: f64,
    pub contrast: f64,
    pub lambda_mean: f64,
    pub lambda_max: f64,
}

/// Quantities that enter the loss as constants (stop-gradients): the
/// lambda multipliers weighting the policy advantage and the reachability
/// predictions inside the lambda objective. `None` reads them live from the
/// current forward pass; pinning them makes the whole loss a smooth function
/// of the parameters, which the finite-difference composite check requires.
#[derive(Debug, Clone, Default)]
pub struct FrozenSignals {
    pub lambda_vals: Option<Vec<f64>>,
    pub vh_vals: Option<Vec<f64>>,
}

/// Builds the weighted total loss for the given transitions on one tape and
/// returns the loss node plus the numeric parts.
#[allow(clippy::too_many_arguments)]
pub fn build_total_loss(
    policy: &PolicyNet,
    env: &VneEnv,
    tape: &mut Tape,
    batch: &RolloutBatch,
    indices: &[usize],
    adv_reward_normalized: &[f64],
    cfg: &TrainConfig,
    contrast_rng: Option<&mut ChaCha12Rng>,
    frozen: &FrozenSignals,
) -> Result<(TensorId, LossParts), TrainError> {
    let mut logp_new = Vec::with_capacity(indices.len());
    let mut v_r = Vec::with_capacity(indices.len());
    let mut v_h = Vec::with_capacity(indices.len());
    let mut lam = Vec::with_capacity(indices.len());
    for &i in indices {
        let tr = &batch.transitions[i];
        let mask = env.action_mask(&tr.state);
        let graph = build_hetero_graph(env, &tr.state);
        let out = policy.forward(tape, &graph, &mask)?;
        let probs2 = tape.reshape(out.probs, vec![mask.len(), 1])?;
        let picked = tape.gather_rows(probs2, &[tr.action])?;
        let picked = tape.reshape(picked, vec![])?;
        let lp = tape.log(picked);
        logp_new.push(lp);
        v_r.push(out.value);
        v_h.push(out.reach_value);
        lam.push(out.lambda);
    }
    let logp_vec = tape.stack_scalars(&logp_new)?;
    let vr_vec = tape.stack_scalars(&v_r)?;
    let vh_vec = tape.stack_scalars(&v_h)?;
    let lam_vec = tape.stack_scalars(&lam)?;

    let lam_vals = match &frozen.lambda_vals {
        Some(v) => v.clone(),
        None => tape.value(lam_vec).data().to_vec(),
    };
    let vh_vals = match &frozen.vh_vals {
        Some(v) => v.clone(),
        None => tape.value(vh_vec).data().to_vec(),
    };
    let lambda_mean = lam_vals.iter().sum::<f64>() / lam_vals.len().max(1) as f64;
    let lambda_max = lam_vals.iter().cloned().fold(0.0, f64::max);

    // Combined advantage: reward GAE minus lambda-weighted reachability
    // residual, with lambda read as a constant (the lambda net trains only
    // through its own loss).
    let combined_adv: Vec<f64> = indices
        .iter()
        .enumerate()
        .map(|(row, &i)| adv_reward_normalized[i] - lam_vals[row] * batch.adv_reach[i])
        .collect();
    let adv_const = tape.constant(Tensor::vector(combined_adv));
    let old_logp = tape.constant(Tensor::vector(
        indices.iter().map(|&i| batch.transitions[i].log_prob).collect(),
    ));
    let diff = tape.sub(logp_vec, old_logp)?;
    let ratio = tape.exp(diff);
    let unclipped = tape.mul(ratio, adv_const)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let clipped = tape.mul(clipped_ratio, adv_const)?;
    let objective = tape.min_elem(unclipped, clipped)?;
    let mean_obj = tape.mean(objective);
    let loss_ppo = tape.neg(mean_obj);

    let returns_const = tape.constant(Tensor::vector(
        indices.iter().map(|&i| batch.returns[i]).collect(),
    ));
    let loss_r = tape.mse(vr_vec, returns_const)?;

    let reach_const = tape.constant(Tensor::vector(
        indices.iter().map(|&i| batch.reach_targets[i]).collect(),
    ));
    let loss_h = tape.mse(vh_vec, reach_const)?;

    // Lambda objective: ascent on Lambda(s) * (V_h(s) - D(s)), realized as
    // descent on its negation; V_h enters detached.
    let residual: Vec<f64> = indices
        .iter()
        .enumerate()
        .map(|(row, &i)| vh_vals[row] - batch.transitions[i].budget)
        .collect();
    let resid_const = tape.constant(Tensor::vector(residual));
    let lam_prod = tape.mul(lam_vec, resid_const)?;
    let lam_mean = tape.mean(lam_prod);
    let loss_lam = tape.neg(lam_mean);

    let loss_cl = if cfg.w_cl > 0.0 && cfg.contrast_samples > 0 {
        match contrast_rng {
            Some(rng) => {
                let mut terms = Vec::new();
                for _ in 0..cfg.contrast_samples.min(indices.len()) {
                    let pick = indices[rng.gen_range(0..indices.len())];
                    let state = &batch.transitions[pick].state;
                    let ga = augment_physical(env, state, cfg.augment_ratio, rng);
                    let gb = augment_virtual(env, state, cfg.augment_ratio, rng);
                    let enc_a = policy.encode(tape, &ga)?;
                    let enc_b = policy.encode(tape, &gb)?;
                    let za = tape.concat_rows(&[enc_a.z_virtual, enc_a.z_physical])?;
                    let zb = tape.concat_rows(&[enc_b.z_virtual, enc_b.z_physical])?;
                    terms.push(barlow_twins_loss(tape, za, zb, cfg.barlow_weight)?);
                }
                let stacked = tape.stack_scalars(&terms)?;
                Some(tape.mean(stacked))
            }
            None => None,
        }
    } else {
        None
    };

    let mut total = tape.scale(loss_ppo, cfg.w_ppo);
    let wr = tape.scale(loss_r, cfg.w_r);
    total = tape.add(total, wr)?;
    let wh = tape.scale(loss_h, cfg.w_h);
    total = tape.add(total, wh)?;
    let wl = tape.scale(loss_lam, cfg.w_lam);
    total = tape.add(total, wl)?;
    if let Some(cl) = loss_cl {
        let wc = tape.scale(cl, cfg.w_cl);
        total = tape.add(total, wc)?;
    }

    let parts = LossParts {
        total: tape.scalar_value(total),
        ppo: tape.scalar_value(loss_ppo),
        value: tape.scalar_value(loss_r),
        reach: tape.scalar_value(loss_h),
        lambda: tape.scalar_value(loss_lam),
        contrast: loss_cl.map(|id| tape.scalar_value(id)).unwrap_or(0.0),
        lambda_mean,
        lambda_max,
    };
    Ok((total, parts))
}

/// Lambda and reachability predictions for the given transitions under the
/// current parameters, for use as frozen loss constants.
pub fn forward_signals(
    policy: &PolicyNet,
    env: &VneEnv,
    batch: &RolloutBatch,
    indices: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let mut lambda_vals = Vec::with_capacity(indices.len());
    let mut vh_vals = Vec::with_capacity(indices.len());
    for &i in indices {
        let tr = &batch.transitions[i];
        let mask = env.action_mask(&tr.state);
        let graph = build_hetero_graph(env, &tr.state);
        let mut tape = Tape::new();
        let out = policy.forward(&mut tape, &graph, &mask)?;
        lambda_vals.push(tape.scalar_value(out.lambda));
        vh_vals.push(tape.scalar_value(out.reach_value));
    }
    Ok((lambda_vals, vh_vals))
}

/// One curves.csv row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: usize,
    pub reward_mean: f64,
    pub cost_mean: f64,
    pub c_vio: f64,
    pub lambda_mean: f64,
    pub lambda_max: f64,
    pub loss_total: f64,
    pub loss_ppo: f64,
    pub loss_value: f64,
    pub loss_reach: f64,
    pub loss_lambda: f64,
    pub loss_contrast: f64,
}

pub struct TrainResult {
    pub policy: PolicyNet,
    pub curves: Vec<CurveRow>,
    pub eval_reward_untrained: f64,
    pub eval_reward_trained: f64,
    pub lambda_max_overall: f64,
}

/// Z-scores a batch of advantages (unit floor on the deviation).
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len().max(1) as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    advantages.iter().map(|a| (a - mean) / std).collect()
}

/// Greedy-decoded mean episode reward over a frozen instance set, each on a
/// fully free substrate.
pub fn eval_greedy_mean_reward(
    policy: &PolicyNet,
    env: &VneEnv,
    instances: &[Arc<VNEInstance>],
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for inst in instances {
        let run = run_episode(policy, env, inst.clone(), None)?;
        total += run.trajectory.terminal_r2c;
    }
    Ok(total / instances.len().max(1) as f64)
}

pub fn make_eval_instances(cfg: &TrainConfig, count: usize) -> Vec<Arc<VNEInstance>> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0xE7A1);
    let pn = gen_waxman(
        cfg.sim.pn_nodes,
        cfg.sim.waxman_alpha,
        cfg.sim.waxman_beta,
        cfg.sim.node_cap_range,
        cfg.sim.link_cap_range,
        &mut rng,
    );
    (0..count)
        .map(|_| {
            let vn = gen_vn_request(&cfg.sim, 0.0, &mut rng);
            Arc::new(VNEInstance::new(vn, pn.clone()))
        })
        .collect()
}

/// Full training: alternating collection and epoch-wise minibatch updates,
/// with the surrogate synchronized every `surrogate_sync_interval` updates.
pub fn train(cfg: &TrainConfig) -> Result<TrainResult, TrainError> {
    let env = VneEnv::new(cfg.env);
    let mut policy = PolicyNet::init(cfg.arch, cfg.seed);
    let mut surrogate = policy.clone();
    let mut stream = InstanceStream::new(&cfg.sim, cfg.unsolvable_salt_frac, cfg.seed ^ 0x57EA)?;
    let mut sample_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x5A3);
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x0FF1E);
    let mut contrast_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0xC0);

    let eval_instances = make_eval_instances(cfg, cfg.eval_episodes);
    let eval_reward_untrained = eval_greedy_mean_reward(&policy, &env, &eval_instances)?;

    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut curves = Vec::with_capacity(cfg.updates);
    let mut lambda_max_overall: f64 = 0.0;

    for update in 0..cfg.updates {
        let batch = collect_rollouts(
            &policy,
            &surrogate,
            &mut stream,
            cfg.episodes_per_update,
            &env,
            cfg,
            &mut sample_rng,
        )?;
        if batch.transitions.is_empty() {
            continue;
        }
        let adv_norm = normalize_advantages(&batch.adv_reward);

        let mut last_parts = LossParts::default();
        for _epoch in 0..cfg.update_epochs {
            let mut order: Vec<usize> = (0..batch.transitions.len()).collect();
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let mut tape = Tape::new();
                let (loss, parts) = build_total_loss(
                    &policy,
                    &env,
                    &mut tape,
                    &batch,
                    chunk,
                    &adv_norm,
                    cfg,
                    Some(&mut contrast_rng),
                    &FrozenSignals::default(),
                )?;
                if !parts.total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        update,
                        diagnostics: format!(
                            "{parts:?}; grad_norm_prev={:.3e}; transitions={}",
                            policy.params.grad_l2_norm(),
                            chunk.len()
                        ),
                    });
                }
                let grads = tape.backward(loss);
                policy.params.zero_grads();
                tape.grads_into(&grads, &mut policy.params);
                policy.params.fill_missing_grads();
                policy.params.adam_step(&adam)?;
                lambda_max_overall = lambda_max_overall.max(parts.lambda_max);
                last_parts = parts;
            }
        }

        let n_ep = batch.episode_rewards.len().max(1) as f64;
        curves.push(CurveRow {
            update,
            reward_mean: batch.episode_rewards.iter().sum::<f64>() / n_ep,
            cost_mean: batch.episode_costs.iter().sum::<f64>()
                / batch.transitions.len().max(1) as f64,
            c_vio: batch.c_vio,
            lambda_mean: last_parts.lambda_mean,
            lambda_max: last_parts.lambda_max,
            loss_total: last_parts.total,
            loss_ppo: last_parts.ppo,
            loss_value: last_parts.value,
            loss_reach: last_parts.reach,
            loss_lambda: last_parts.lambda,
            loss_contrast: last_parts.contrast,
        });

        if (update + 1) % cfg.surrogate_sync_interval.max(1) == 0 {
            surrogate.params.sync_values_from(&policy.params);
        }
    }

    let eval_reward_trained = eval_greedy_mean_reward(&policy, &env, &eval_instances)?;
    Ok(TrainResult {
        policy,
        curves,
        eval_reward_untrained,
        eval_reward_trained,
        lambda_max_overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_trajectory(costs: &[f64]) -> Trajectory {
        let mut t = Trajectory::default();
        for &c in costs {
            t.transitions.push(Transition {
                state: dummy_state(),
                action: 0,
                reward: 0.0,
                h: c,
                cost: c.max(0.0),
                budget: 0.0,
                log_prob: 0.0,
                done: false,
            });
        }
        t
    }

    fn dummy_state() -> EnvState {
        let pn = PhysicalNetwork::new(vec![10.0, 10.0], vec![(0, 1, 5.0)]).unwrap();
        let vn = VirtualNetwork::new(vec![1.0], vec![], 0.0, 1.0).unwrap();
        let env = VneEnv::default();
        env.reset(Arc::new(VNEInstance::new(vn, pn)))
    }

    #[test]
    fn budget_is_max_cost() {
        assert_eq!(compute_budget(&hand_trajectory(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(compute_budget(&hand_trajectory(&[0.0, 2.0, 5.0])), 5.0);
        assert_eq!(compute_budget(&hand_trajectory(&[3.5])), 3.5);
        assert_eq!(compute_budget(&Trajectory::default()), 0.0);
    }

    #[test]
    fn reachability_targets_are_suffix_maxima() {
        assert_eq!(reachability_targets(&[-3.0, -1.0, -2.0], None), vec![-1.0, -1.0, -2.0]);
        assert_eq!(reachability_targets(&[0.0, 0.0, 0.0], None), vec![0.0, 0.0, 0.0]);
        assert_eq!(reachability_targets(&[-5.0, 4.0, -5.0], None), vec![4.0, 4.0, -5.0]);
    }

    #[test]
    fn reachability_recursion_holds() {
        let h = [-2.0, 3.5, -1.0, 0.5, -4.0];
        let t = reachability_targets(&h, None);
        for i in 0..h.len() - 1 {
            assert_eq!(t[i], h[i].max(t[i + 1]));
        }
        assert_eq!(*t.last().unwrap(), *h.last().unwrap());
    }

    #[test]
    fn discounted_reach_variant_scales_suffix() {
        let h = [0.0, 10.0];
        let t = reachability_targets(&h, Some(0.5));
        assert_eq!(t, vec![5.0, 10.0]);
    }

    #[test]
    fn returns_discount_terminal_reward() {
        let r = [0.0, 0.0, 1.0];
        let ret = discounted_returns(&r, 0.5);
        assert_eq!(ret, vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn gae_is_zero_for_perfect_value_function() {
        // Values exactly equal to discounted returns make every delta zero.
        let rewards = [0.0, 0.0, 1.0];
        let values = [0.25, 0.5, 1.0];
        let adv = gae_advantages(&rewards, &values, 0.5, 0.9);
        for a in adv {
            assert!(a.abs() < 1e-12);
        }
    }

    use crate::net::{PhysicalNetwork, VirtualNetwork};
}
