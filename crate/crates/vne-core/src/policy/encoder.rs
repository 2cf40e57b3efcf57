//! Link-feature-aware graph-attention encoder over the heterogeneous graph,
//! with per-relation attention, sum fusion across relations, residual output,
//! and the actor / value / reachability / lambda heads.

use super::{HeteroGraph, Relation, NODE_FEATURES};
use crate::autodiff::{AutodiffError, ParameterSet, Tape, Tensor, TensorId};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Logit for masked-out actions; exp() of it underflows to exactly zero.
pub const MASKED_LOGIT: f64 = -1.0e30;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("action mask has no admissible entry")]
    EmptyMask,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which per-layer sum fusion feeds the virtual-side embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionVariant {
    /// Virtual fusion uses the decision-relation virtual-side output,
    /// mirroring the physical-side fusion.
    DecisionSymmetric,
    /// Virtual fusion adds the mean-pooled physical embedding to every
    /// virtual row instead.
    PooledPhysical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden: usize,
    pub layers: usize,
    pub attn_slope: f64,
    pub act_slope: f64,
    pub fusion: FusionVariant,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden: 128,
            layers: 3,
            attn_slope: 0.2,
            act_slope: 0.2,
            fusion: FusionVariant::DecisionSymmetric,
        }
    }
}

/// Final node representations for one graph.
#[derive(Debug, Clone, Copy)]
pub struct Encoding {
    pub z_virtual: TensorId,
    pub z_physical: TensorId,
}

/// One full forward pass: masked action distribution plus the three scalar
/// heads.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOut {
    pub encoding: Encoding,
    /// Probability vector over physical nodes; masked entries are exactly 0.
    pub probs: TensorId,
    pub value: TensorId,
    pub reach_value: TensorId,
    pub lambda: TensorId,
}

const RELATIONS: [&str; 4] = ["vv", "pp", "map", "dec"];
const HEADS: [&str; 4] = ["actor", "critic_r", "critic_h", "lambda"];

/// Encoder, heads and their parameters. The parameter set is the single
/// source of truth; tapes bind fresh leaves per forward pass.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub arch: ArchConfig,
    pub params: ParameterSet,
}

impl PolicyNet {
    pub fn init(arch: ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let d = arch.hidden;
        let mut params = ParameterSet::new();
        let mut linear = |params: &mut ParameterSet, name: String, rows: usize, cols: usize| {
            params.insert(&format!("{name}.w"), Tensor::glorot(rows, cols, &mut rng));
            params.insert(&format!("{name}.b"), Tensor::zeros(vec![cols]));
        };
        linear(&mut params, "enc.v_in".into(), NODE_FEATURES, d);
        linear(&mut params, "enc.p_in".into(), NODE_FEATURES, d);
        for layer in 0..arch.layers {
            for rel in RELATIONS {
                linear(&mut params, format!("enc.l{layer}.{rel}.node"), d, d);
                linear(&mut params, format!("enc.l{layer}.{rel}.edge"), 1, d);
                linear(&mut params, format!("enc.l{layer}.{rel}.attn"), d, 1);
            }
        }
        for head in HEADS {
            linear(&mut params, format!("head.{head}.fc1"), d, d);
            linear(&mut params, format!("head.{head}.fc2"), d, 1);
        }
        PolicyNet { arch, params }
    }

    fn bound_linear(
        &self,
        tape: &mut Tape,
        name: &str,
        x: TensorId,
    ) -> Result<TensorId, AutodiffError> {
        let w = tape.param(&format!("{name}.w"), self.params.get(&format!("{name}.w")).clone());
        let b = tape.param(&format!("{name}.b"), self.params.get(&format!("{name}.b")).clone());
        let xw = tape.matmul(x, w)?;
        tape.add_bias(xw, b)
    }

    /// One relation's attention pass over `nodes` [n, d], producing [n, d]
    /// aggregated messages (zero rows for nodes with no incoming edge).
    fn gat_relation(
        &self,
        tape: &mut Tape,
        prefix: &str,
        nodes: TensorId,
        rel: &Relation,
        n_out: usize,
    ) -> Result<TensorId, AutodiffError> {
        let d = self.arch.hidden;
        if rel.is_empty() {
            return Ok(tape.constant(Tensor::zeros(vec![n_out, d])));
        }
        let q = self.bound_linear(tape, &format!("{prefix}.node"), nodes)?;
        let q_src = tape.gather_rows(q, &rel.src)?;
        let q_dst = tape.gather_rows(q, &rel.dst)?;
        let feat = tape.constant(Tensor::matrix(rel.len(), 1, rel.feat.clone()));
        let edge = self.bound_linear(tape, &format!("{prefix}.edge"), feat)?;
        let pair = tape.add(q_src, q_dst)?;
        let combined = tape.add(pair, edge)?;
        let activated = tape.leaky_relu(combined, self.arch.attn_slope);
        let scores = self.bound_linear(tape, &format!("{prefix}.attn"), activated)?;
        let logits = tape.reshape(scores, vec![rel.len()])?;
        let alpha = tape.segment_softmax(logits, &rel.dst)?;
        let messages = tape.scale_rows(q_src, alpha)?;
        let agg = tape.segment_sum(messages, &rel.dst, n_out)?;
        Ok(tape.leaky_relu(agg, self.arch.act_slope))
    }

    /// Full encoder: initial projections, `layers` rounds of four-relation
    /// attention with sum fusion, then the residual connection to layer 0.
    pub fn encode(&self, tape: &mut Tape, g: &HeteroGraph) -> Result<Encoding, AutodiffError> {
        let (nv, np) = (g.nv, g.np);
        let xv = tape.constant(g.x_virtual.clone());
        let xp = tape.constant(g.x_physical.clone());
        let hv0 = {
            let z = self.bound_linear(tape, "enc.v_in", xv)?;
            tape.leaky_relu(z, self.arch.act_slope)
        };
        let hp0 = {
            let z = self.bound_linear(tape, "enc.p_in", xp)?;
            tape.leaky_relu(z, self.arch.act_slope)
        };
        let mut zv = hv0;
        let mut zp = hp0;
        let v_rows: Vec<usize> = (0..nv).collect();
        let p_rows: Vec<usize> = (nv..nv + np).collect();
        for layer in 0..self.arch.layers {
            let intra_v =
                self.gat_relation(tape, &format!("enc.l{layer}.vv"), zv, &g.virtual_links, nv)?;
            let intra_p =
                self.gat_relation(tape, &format!("enc.l{layer}.pp"), zp, &g.physical_links, np)?;
            let stacked = tape.concat_rows(&[zv, zp])?;
            let mapped = self.gat_relation(
                tape,
                &format!("enc.l{layer}.map"),
                stacked,
                &g.mapped_links,
                nv + np,
            )?;
            let decision = self.gat_relation(
                tape,
                &format!("enc.l{layer}.dec"),
                stacked,
                &g.decision_links,
                nv + np,
            )?;
            let map_v = tape.gather_rows(mapped, &v_rows)?;
            let map_p = tape.gather_rows(mapped, &p_rows)?;
            let dec_v = tape.gather_rows(decision, &v_rows)?;
            let dec_p = tape.gather_rows(decision, &p_rows)?;

            let zp_next = {
                let s = tape.add(intra_p, map_p)?;
                tape.add(s, dec_p)?
            };
            let zv_next = match self.arch.fusion {
                FusionVariant::DecisionSymmetric => {
                    let s = tape.add(intra_v, map_v)?;
                    tape.add(s, dec_v)?
                }
                FusionVariant::PooledPhysical => {
                    let pooled = tape.mean_axis0(zp_next)?;
                    let s = tape.add(intra_v, map_v)?;
                    let neg = tape.neg(pooled);
                    let sub = tape.sub_row(s, neg)?;
                    sub
                }
            };
            zv = zv_next;
            zp = zp_next;
        }
        let z_virtual = tape.add(zv, hv0)?;
        let z_physical = tape.add(zp, hp0)?;
        Ok(Encoding { z_virtual, z_physical })
    }

    /// Per-node actor MLP over physical embeddings, masked in logit space so
    /// excluded entries carry probability exactly zero.
    pub fn actor_probs(
        &self,
        tape: &mut Tape,
        z_physical: TensorId,
        mask: &[bool],
    ) -> Result<TensorId, PolicyError> {
        if !mask.iter().any(|&b| b) {
            return Err(PolicyError::EmptyMask);
        }
        let h = self.bound_linear(tape, "head.actor.fc1", z_physical)?;
        let h = tape.leaky_relu(h, self.arch.act_slope);
        let logits = self.bound_linear(tape, "head.actor.fc2", h)?;
        let n = mask.len();
        let flat = tape.reshape(logits, vec![n])?;
        let mask_vec = Tensor::vector(
            mask.iter().map(|&b| if b { 0.0 } else { MASKED_LOGIT }).collect(),
        );
        let mask_const = tape.constant(mask_vec);
        let masked = tape.add(flat, mask_const)?;
        Ok(tape.segment_softmax(masked, &vec![0usize; n])?)
    }

    fn scalar_head(
        &self,
        tape: &mut Tape,
        head: &str,
        z_physical: TensorId,
        nonneg: bool,
    ) -> Result<TensorId, AutodiffError> {
        let d = self.arch.hidden;
        let pooled = tape.sum_axis0(z_physical)?;
        let row = tape.reshape(pooled, vec![1, d])?;
        let h = self.bound_linear(tape, &format!("head.{head}.fc1"), row)?;
        let h = tape.leaky_relu(h, self.arch.act_slope);
        let out = self.bound_linear(tape, &format!("head.{head}.fc2"), h)?;
        let scalar = tape.reshape(out, vec![])?;
        Ok(if nonneg { tape.softplus(scalar) } else { scalar })
    }

    pub fn critic_value(&self, tape: &mut Tape, z_p: TensorId) -> Result<TensorId, AutodiffError> {
        self.scalar_head(tape, "critic_r", z_p, false)
    }

    pub fn reach_value(&self, tape: &mut Tape, z_p: TensorId) -> Result<TensorId, AutodiffError> {
        self.scalar_head(tape, "critic_h", z_p, false)
    }

    /// Lambda head: softplus keeps the multiplier nonnegative. Like the
    /// critics it reads the shared encoding; isolation from actor/critic
    /// parameters holds at the head level.
    pub fn lambda_value(&self, tape: &mut Tape, z_p: TensorId) -> Result<TensorId, AutodiffError> {
        self.scalar_head(tape, "lambda", z_p, true)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &HeteroGraph,
        mask: &[bool],
    ) -> Result<ForwardOut, PolicyError> {
        let encoding = self.encode(tape, g)?;
        let probs = self.actor_probs(tape, encoding.z_physical, mask)?;
        let value = self.critic_value(tape, encoding.z_physical)?;
        let reach_value = self.reach_value(tape, encoding.z_physical)?;
        let lambda = self.lambda_value(tape, encoding.z_physical)?;
        Ok(ForwardOut { encoding, probs, value, reach_value, lambda })
    }
}

/// Greedy argmax (lowest id wins ties) or a seeded categorical draw over an
/// actor distribution. Masked entries carry zero probability and are never
/// chosen; the draw asserts that.
pub fn select_action(
    probs: &[f64],
    mask: &[bool],
    rng: Option<&mut ChaCha12Rng>,
) -> Option<(usize, f64)> {
    if !mask.iter().any(|&b| b) {
        return None;
    }
    let action = match rng {
        None => {
            let mut best = None;
            for (i, &p) in probs.iter().enumerate() {
                if mask[i] && best.map_or(true, |(_, bp)| p > bp) {
                    best = Some((i, p));
                }
            }
            best?.0
        }
        Some(rng) => {
            use rand::Rng;
            let draw: f64 = rng.gen::<f64>();
            let mut cum = 0.0;
            let mut chosen = None;
            for (i, &p) in probs.iter().enumerate() {
                cum += p;
                if draw < cum {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave a sliver above the last positive entry.
            chosen.unwrap_or_else(|| {
                probs
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| mask[i])
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
        }
    };
    assert!(mask[action], "sampled a masked action: probabilities leaked mass");
    Some((action, probs[action].max(f64::MIN_POSITIVE).ln()))
}
