//! Policy optimization: shared-parameter PPO self-play, plus population
//! training with a best-response agent and a discounted action-distribution
//! JSD diversity term.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::env::{
    densify, observe, reset_with_horizon, step, Action, Layout, ShapingFeatures, HORIZON,
    NUM_ACTIONS, OBS_DIM,
};
use crate::nn::{argmax, log_softmax, sample_categorical, softmax, tanh, Dense};
use crate::rng::{stream_rng, substream};
use crate::shaping::ShapingVector;

/// Policy input: the observation plus a seat flag, so one parameter set
/// plays both seats.
pub const POLICY_INPUT_DIM: usize = OBS_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    PopulationMember(usize),
    BestResponse,
    Partner,
}

impl Role {
    pub fn label(&self) -> String {
        match self {
            Role::PopulationMember(i) => format!("member:{i}"),
            Role::BestResponse => "best_response".to_string(),
            Role::Partner => "partner".to_string(),
        }
    }

    pub fn from_label(label: &str) -> Option<Role> {
        match label {
            "best_response" => Some(Role::BestResponse),
            "partner" => Some(Role::Partner),
            _ => label
                .strip_prefix("member:")
                .and_then(|i| i.parse().ok())
                .map(Role::PopulationMember),
        }
    }
}

/// One hidden tanh layer, then a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerNet {
    pub hidden: Dense,
    pub out: Dense,
}

impl TwoLayerNet {
    fn xavier(inputs: usize, hidden: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        TwoLayerNet {
            hidden: Dense::xavier(inputs, hidden, rng),
            out: Dense::xavier(hidden, outputs, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.hidden.forward(x);
        tanh(&mut h);
        self.out.forward(&h)
    }

    fn param_count(&self) -> usize {
        self.hidden.param_count() + self.out.param_count()
    }
}

/// An agent: actor (6 action logits), value head, and training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: TwoLayerNet,
    pub value: TwoLayerNet,
    pub shaping: ShapingVector,
    pub seed: u64,
    pub role: Role,
    pub trained_timesteps: u64,
}

impl PolicyParams {
    pub fn init(
        input_dim: usize,
        hidden: usize,
        shaping: ShapingVector,
        seed: u64,
        role: Role,
    ) -> Self {
        let mut rng = stream_rng(seed, "policy/init", 0);
        PolicyParams {
            actor: TwoLayerNet::xavier(input_dim, hidden, NUM_ACTIONS, &mut rng),
            value: TwoLayerNet::xavier(input_dim, hidden, 1, &mut rng),
            shaping,
            seed,
            role,
            trained_timesteps: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.actor.hidden.inputs
    }

    pub fn logits(&self, obs: &[f64]) -> Vec<f64> {
        self.actor.forward(obs)
    }

    pub fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        softmax(&self.logits(obs))
    }

    pub fn state_value(&self, obs: &[f64]) -> f64 {
        self.value.forward(obs)[0]
    }

    pub fn sample_action(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> (usize, f64) {
        let lp = log_softmax(&self.logits(obs));
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let action = sample_categorical(&probs, rng);
        (action, lp[action])
    }

    pub fn greedy_action(&self, obs: &[f64]) -> usize {
        argmax(&self.logits(obs))
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.value.param_count()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new("policy");
        ckpt.push_field("input_dim", self.actor.hidden.inputs);
        ckpt.push_field("hidden", self.actor.hidden.outputs);
        ckpt.push_field("actions", self.actor.out.outputs);
        ckpt.push_field("role", self.role.label());
        ckpt.push_field("seed", self.seed);
        ckpt.push_field("timesteps", self.trained_timesteps);
        ckpt.push_field(
            "shaping",
            self.shaping.0.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
        );
        for net in [&self.actor, &self.value] {
            for layer in [&net.hidden, &net.out] {
                ckpt.params.extend_from_slice(&layer.weights);
                ckpt.params.extend_from_slice(&layer.biases);
            }
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, MarlError> {
        if ckpt.kind != "policy" {
            return Err(MarlError::WrongKind(ckpt.kind.clone()));
        }
        let input_dim: usize = ckpt.parse_field("input_dim")?;
        let hidden: usize = ckpt.parse_field("hidden")?;
        let actions: usize = ckpt.parse_field("actions")?;
        let role_label = ckpt.require_field("role")?;
        let role = Role::from_label(role_label)
            .ok_or_else(|| MarlError::BadRole(role_label.to_string()))?;
        let shaping_vals: Vec<f64> = ckpt.parse_list("shaping")?;
        let shaping = ShapingVector(
            shaping_vals
                .try_into()
                .map_err(|v: Vec<f64>| MarlError::BadShapingArity(v.len()))?,
        );
        let mut cursor = 0usize;
        let mut take_layer = |inputs: usize, outputs: usize| -> Result<Dense, MarlError> {
            let n_w = inputs * outputs;
            if cursor + n_w + outputs > ckpt.params.len() {
                return Err(CheckpointError::ParamCount {
                    expected: cursor + n_w + outputs,
                    got: ckpt.params.len(),
                }
                .into());
            }
            let weights = ckpt.params[cursor..cursor + n_w].to_vec();
            cursor += n_w;
            let biases = ckpt.params[cursor..cursor + outputs].to_vec();
            cursor += outputs;
            Ok(Dense { inputs, outputs, weights, biases })
        };
        let actor = TwoLayerNet {
            hidden: take_layer(input_dim, hidden)?,
            out: take_layer(hidden, actions)?,
        };
        let value =
            TwoLayerNet { hidden: take_layer(input_dim, hidden)?, out: take_layer(hidden, 1)? };
        if cursor != ckpt.params.len() {
            return Err(
                CheckpointError::ParamCount { expected: cursor, got: ckpt.params.len() }.into()
            );
        }
        Ok(PolicyParams {
            actor,
            value,
            shaping,
            seed: ckpt.parse_field("seed")?,
            role,
            trained_timesteps: ckpt.parse_field("timesteps")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), MarlError> {
        self.to_checkpoint().save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MarlError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Appends the seat flag to a raw observation.
pub fn obs_with_seat(obs: &[f64], seat: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.len() + 1);
    v.extend_from_slice(obs);
    v.push(seat as f64);
    v
}

#[derive(Debug, thiserror::Error)]
pub enum MarlError {
    #[error("population diversity needs at least 2 members, got {0}")]
    InsufficientMembers(usize),
    #[error("non-finite loss during {phase} (value {value})")]
    NonFiniteLoss { phase: &'static str, value: f64 },
    #[error("bad config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint is not a policy (kind {0:?})")]
    WrongKind(String),
    #[error("unknown role label {0:?}")]
    BadRole(String),
    #[error("shaping metadata has {0} weights")]
    BadShapingArity(usize),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One environment step as seen by both seats.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Seat-augmented observations fed to each policy.
    pub obs: [Vec<f64>; 2],
    pub actions: [usize; 2],
    pub log_probs: [f64; 2],
    pub values: [f64; 2],
    pub sparse: f64,
    /// Densified under the batch's shaping.
    pub shaped: f64,
    pub features: ShapingFeatures,
    /// Timestep within the episode.
    pub t: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub steps: Vec<StepRecord>,
    pub shaping: ShapingVector,
}

impl TrajectoryBatch {
    pub fn total_sparse(&self) -> f64 {
        self.steps.iter().map(|s| s.sparse).sum()
    }

    pub fn episodes(&self) -> usize {
        self.steps.iter().filter(|s| s.done).count()
    }
}

/// Runs whole seeded episodes until `steps` environment steps are collected.
/// The densified reward drives learning; sparse stays alongside for reports.
pub fn collect_rollouts(
    policies: [&PolicyParams; 2],
    layout: &Arc<Layout>,
    shaping: &ShapingVector,
    steps: usize,
    horizon: usize,
    seed: u64,
) -> TrajectoryBatch {
    let mut records = Vec::with_capacity(steps);
    let mut episode = 0u64;
    while records.len() < steps {
        let mut state = reset_with_horizon(layout, substream(seed, "rollout/reset", episode), horizon);
        let mut rng = stream_rng(seed, "rollout/actions", episode);
        loop {
            let mut obs_pair: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            let mut actions = [0usize; 2];
            let mut log_probs = [0.0; 2];
            let mut values = [0.0; 2];
            for seat in 0..2 {
                let obs = obs_with_seat(&observe(&state, seat), seat);
                let (action, lp) = policies[seat].sample_action(&obs, &mut rng);
                values[seat] = policies[seat].state_value(&obs);
                actions[seat] = action;
                log_probs[seat] = lp;
                obs_pair[seat] = obs;
            }
            let joint = [
                Action::from_index(actions[0]).expect("valid action index"),
                Action::from_index(actions[1]).expect("valid action index"),
            ];
            let out = step(&state, joint).expect("stepping below horizon");
            let shaped = densify(out.sparse_reward, &out.features, shaping);
            records.push(StepRecord {
                obs: obs_pair,
                actions,
                log_probs,
                values,
                sparse: out.sparse_reward,
                shaped,
                features: out.features,
                t: state.timestep,
                done: out.done,
            });
            state = out.next_state;
            if out.done {
                break;
            }
        }
        episode += 1;
    }
    TrajectoryBatch { steps: records, shaping: *shaping }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajeDiConfig {
    /// Population size n.
    pub n: usize,
    /// JSD diversity coefficient.
    pub alpha: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub clip_param: f64,
    /// Environment-step budget for the whole population run.
    pub total_timesteps: usize,
    /// Self-play evaluation cadence (curve points at multiples of this).
    pub eval_every: usize,
    /// Steps collected per rollout phase.
    pub rollout_length: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    /// Learning-side scale applied to densified rewards.
    pub reward_scale: f64,
    pub hidden: usize,
    pub horizon: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrajeDiConfig {
    fn default() -> Self {
        let total = 200_000;
        TrajeDiConfig {
            n: 4,
            alpha: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 5e-4,
            clip_param: 0.2,
            total_timesteps: total,
            eval_every: total / 5,
            rollout_length: 1600,
            epochs: 2,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            grad_clip: 10.0,
            reward_scale: 0.01,
            hidden: 64,
            horizon: HORIZON,
            eval_episodes: 4,
            seed: 0,
        }
    }
}

impl TrajeDiConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(MarlError::InvalidConfig(format!("gamma {} outside (0,1]", self.gamma)));
        }
        if self.clip_param <= 0.0 {
            return Err(MarlError::InvalidConfig(format!(
                "clip_param {} must be positive",
                self.clip_param
            )));
        }
        if self.alpha < 0.0 {
            return Err(MarlError::InvalidConfig(format!(
                "alpha {} must be nonnegative",
                self.alpha
            )));
        }
        if self.n < 2 {
            return Err(MarlError::InsufficientMembers(self.n));
        }
        Ok(())
    }
}

/// Which seats of a batch a policy update consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeatFilter {
    Both,
    Only(usize),
}

impl SeatFilter {
    fn seats(self) -> &'static [usize] {
        match self {
            SeatFilter::Both => &[0, 1],
            SeatFilter::Only(0) => &[0],
            SeatFilter::Only(_) => &[1],
        }
    }
}

/// One flattened training sample. When `other_dists` is nonempty the loss
/// also descends `-jsd_weight * JSD(pi_theta(obs), other_dists...)`, the
/// differentiable half of the diversity objective.
#[derive(Debug, Clone)]
pub struct PpoSample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
    pub jsd_weight: f64,
    pub other_dists: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// The alpha-weighted JSD diversity term for one member's batch, frozen
/// before its update. The score-function half enters as a per-step reward
/// bonus (the JSD among all members at each visited state); the
/// differentiable half enters the loss directly via the other members'
/// distributions at each state.
#[derive(Debug, Clone)]
pub struct DiversitySignal {
    pub alpha: f64,
    pub gamma: f64,
    /// Per step, per seat: JSD among all members' action distributions.
    pub bonuses: Vec<[f64; 2]>,
    /// Per step, per seat: the other members' action distributions.
    pub other_dists: Vec<[Vec<Vec<f64>>; 2]>,
}

pub fn member_diversity_signal(
    members: &[PolicyParams],
    member_index: usize,
    batch: &TrajectoryBatch,
    alpha: f64,
    gamma: f64,
) -> DiversitySignal {
    let mut bonuses = Vec::with_capacity(batch.steps.len());
    let mut other_dists = Vec::with_capacity(batch.steps.len());
    for record in &batch.steps {
        let mut bonus = [0.0; 2];
        let mut others: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
        for seat in 0..2 {
            let dists: Vec<Vec<f64>> =
                members.iter().map(|m| m.action_probs(&record.obs[seat])).collect();
            bonus[seat] = alpha * jsd_of_distributions(&dists);
            others[seat] = dists
                .into_iter()
                .enumerate()
                .filter(|(j, _)| *j != member_index)
                .map(|(_, d)| d)
                .collect();
        }
        bonuses.push(bonus);
        other_dists.push(others);
    }
    DiversitySignal { alpha, gamma, bonuses, other_dists }
}

/// Flattens a batch into per-seat samples with GAE advantages computed on
/// `reward_scale`-scaled densified rewards plus any diversity bonus.
pub fn build_samples(
    batch: &TrajectoryBatch,
    cfg: &TrajeDiConfig,
    filter: SeatFilter,
    diversity: Option<&DiversitySignal>,
) -> Vec<PpoSample> {
    let mut samples = Vec::new();
    let mut start = 0usize;
    for end in 0..batch.steps.len() {
        if !batch.steps[end].done && end + 1 != batch.steps.len() {
            continue;
        }
        let episode = &batch.steps[start..=end];
        for &seat in filter.seats() {
            let mut gae = 0.0;
            let mut advantages = vec![0.0; episode.len()];
            for (i, record) in episode.iter().enumerate().rev() {
                let bonus = diversity.map_or(0.0, |d| d.bonuses[start + i][seat]);
                let reward = record.shaped * cfg.reward_scale + bonus;
                let next_value = if i + 1 == episode.len() { 0.0 } else { episode[i + 1].values[seat] };
                let delta = reward + cfg.gamma * next_value - record.values[seat];
                gae = delta + cfg.gamma * cfg.gae_lambda * gae;
                advantages[i] = gae;
            }
            for (i, record) in episode.iter().enumerate() {
                let (jsd_weight, other_dists) = match diversity {
                    Some(d) => (
                        d.alpha * d.gamma.powi(record.t as i32),
                        d.other_dists[start + i][seat].clone(),
                    ),
                    None => (0.0, Vec::new()),
                };
                samples.push(PpoSample {
                    obs: record.obs[seat].clone(),
                    action: record.actions[seat],
                    old_log_prob: record.log_probs[seat],
                    advantage: advantages[i],
                    value_target: advantages[i] + record.values[seat],
                    jsd_weight,
                    other_dists,
                });
            }
        }
        start = end + 1;
    }
    samples
}

/// Gradients shaped like a policy's four layers: actor hidden/out, value
/// hidden/out, each (weights, biases).
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub layers: [(Vec<f64>, Vec<f64>); 4],
}

impl PolicyGrads {
    fn zeros_like(policy: &PolicyParams) -> Self {
        let z = |l: &Dense| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]);
        PolicyGrads {
            layers: [
                z(&policy.actor.hidden),
                z(&policy.actor.out),
                z(&policy.value.hidden),
                z(&policy.value.out),
            ],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn global_norm(&self) -> f64 {
        self.flatten().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|g| *g *= factor);
            b.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

/// Loss of the clipped surrogate objective plus value and entropy terms on a
/// fixed sample set (advantages used exactly as given).
pub fn ppo_loss(policy: &PolicyParams, samples: &[PpoSample], cfg: &TrajeDiConfig) -> f64 {
    let n = samples.len() as f64;
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut jsd_term = 0.0;
    for s in samples {
        let lp = log_softmax(&policy.logits(&s.obs));
        let ratio = (lp[s.action] - s.old_log_prob).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip_param, 1.0 + cfg.clip_param);
        policy_loss -= (ratio * s.advantage).min(clipped * s.advantage);
        let v = policy.state_value(&s.obs);
        value_loss += (v - s.value_target).powi(2);
        entropy_sum -= lp.iter().map(|l| l.exp() * l).sum::<f64>();
        if !s.other_dists.is_empty() {
            let mut dists: Vec<Vec<f64>> = Vec::with_capacity(s.other_dists.len() + 1);
            dists.push(lp.iter().map(|l| l.exp()).collect());
            dists.extend(s.other_dists.iter().cloned());
            jsd_term += s.jsd_weight * jsd_of_distributions(&dists);
        }
    }
    policy_loss / n + cfg.value_coef * value_loss / n - cfg.entropy_coef * entropy_sum / n
        - jsd_term / n
}

/// Analytic gradients of `ppo_loss`, plus the stats PPO reports.
pub fn ppo_loss_gradients(
    policy: &PolicyParams,
    samples: &[PpoSample],
    cfg: &TrajeDiConfig,
) -> (PolicyGrads, PpoStats) {
    let n = samples.len() as f64;
    let mut grads = PolicyGrads::zeros_like(policy);
    let mut stats = PpoStats::default();
    for s in samples {
        // Actor forward with cached hidden activations.
        let mut h_pre = policy.actor.hidden.forward(&s.obs);
        let h: Vec<f64> = h_pre.iter().map(|z| z.tanh()).collect();
        h_pre.clear();
        let logits = policy.actor.out.forward(&h);
        let lp = log_softmax(&logits);
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let entropy = -lp.iter().zip(&probs).map(|(l, p)| p * l).sum::<f64>();
        let ratio = (lp[s.action] - s.old_log_prob).exp();
        let clip_binding = (s.advantage > 0.0 && ratio > 1.0 + cfg.clip_param)
            || (s.advantage < 0.0 && ratio < 1.0 - cfg.clip_param);
        let clipped = ratio.clamp(1.0 - cfg.clip_param, 1.0 + cfg.clip_param);
        stats.policy_loss -= (ratio * s.advantage).min(clipped * s.advantage) / n;
        stats.entropy += entropy / n;
        if clip_binding {
            stats.clip_fraction += 1.0 / n;
        }

        // d(-surrogate)/dlogit_j = -A·r·(δ_aj - p_j) when the unclipped
        // branch is active, 0 when the clip binds.
        let surrogate_scale = if clip_binding { 0.0 } else { -s.advantage * ratio / n };
        let mut dlogits = vec![0.0; logits.len()];
        for j in 0..logits.len() {
            let indicator = if j == s.action { 1.0 } else { 0.0 };
            dlogits[j] += surrogate_scale * (indicator - probs[j]);
            // -c_e · dH/dz_j with dH/dz_j = -p_j (log p_j + H).
            dlogits[j] += cfg.entropy_coef / n * probs[j] * (lp[j] + entropy);
        }
        if !s.other_dists.is_empty() {
            // Ascent on w·JSD(p, others): dJSD/dz_k =
            // (p_k/n_d)[(ln p_k - ln m_k) - KL(p || m)] with m the mixture.
            let n_dists = (s.other_dists.len() + 1) as f64;
            let mut mixture = probs.clone();
            for d in &s.other_dists {
                for (m, q) in mixture.iter_mut().zip(d) {
                    *m += q;
                }
            }
            mixture.iter_mut().for_each(|m| *m /= n_dists);
            let kl: f64 = probs
                .iter()
                .zip(&mixture)
                .map(|(&p, &m)| if p > 0.0 { p * (p.ln() - m.ln()) } else { 0.0 })
                .sum();
            for j in 0..dlogits.len() {
                let djsd = probs[j] / n_dists * ((lp[j] - mixture[j].ln()) - kl);
                dlogits[j] -= s.jsd_weight / n * djsd;
            }
        }
        let (actor_layers, value_layers) = grads.layers.split_at_mut(2);
        let (actor_hidden, actor_out) = actor_layers.split_at_mut(1);
        backprop_two_layer(
            &policy.actor,
            &s.obs,
            &h,
            &dlogits,
            &mut actor_hidden[0],
            &mut actor_out[0],
        );

        // Value head: d/dv of c_v (v - target)^2 / n.
        let mut v_pre = policy.value.hidden.forward(&s.obs);
        let vh: Vec<f64> = v_pre.iter().map(|z| z.tanh()).collect();
        v_pre.clear();
        let v = policy.value.out.forward(&vh)[0];
        stats.value_loss += (v - s.value_target).powi(2) / n;
        let dv = [2.0 * cfg.value_coef * (v - s.value_target) / n];
        let (value_hidden, value_out) = value_layers.split_at_mut(1);
        backprop_two_layer(
            &policy.value,
            &s.obs,
            &vh,
            &dv,
            &mut value_hidden[0],
            &mut value_out[0],
        );
    }
    (grads, stats)
}

/// Accumulates gradients for out = W2·tanh(W1 x + b1) + b2 given d(loss)/d(out).
fn backprop_two_layer(
    net: &TwoLayerNet,
    x: &[f64],
    h: &[f64],
    dout: &[f64],
    hidden_grads: &mut (Vec<f64>, Vec<f64>),
    out_grads: &mut (Vec<f64>, Vec<f64>),
) {
    let mut dh = vec![0.0; h.len()];
    for (o, d) in dout.iter().enumerate() {
        let row_start = o * net.out.inputs;
        for (i, hi) in h.iter().enumerate() {
            out_grads.0[row_start + i] += d * hi;
        }
        out_grads.1[o] += *d;
        let row = &net.out.weights[row_start..row_start + net.out.inputs];
        for (i, w) in row.iter().enumerate() {
            dh[i] += d * w;
        }
    }
    for (i, d) in dh.iter().enumerate() {
        let dz = d * (1.0 - h[i] * h[i]);
        let row_start = i * net.hidden.inputs;
        for (j, xj) in x.iter().enumerate() {
            hidden_grads.0[row_start + j] += dz * xj;
        }
        hidden_grads.1[i] += dz;
    }
}

/// Adam moments for one policy, reset at each `ppo_update` call.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, policy: &mut PolicyParams, grads: &PolicyGrads, lr: f64) {
        self.t += 1;
        let flat = grads.flatten();
        let bias1 = 1.0 - Self::BETA1.powi(self.t);
        let bias2 = 1.0 - Self::BETA2.powi(self.t);
        let mut idx = 0usize;
        let apply = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *param -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        };
        for layer in [
            &mut policy.actor.hidden,
            &mut policy.actor.out,
            &mut policy.value.hidden,
            &mut policy.value.out,
        ] {
            for w in layer.weights.iter_mut() {
                apply(w, flat[idx], &mut self.m[idx], &mut self.v[idx]);
                idx += 1;
            }
            for b in layer.biases.iter_mut() {
                apply(b, flat[idx], &mut self.m[idx], &mut self.v[idx]);
                idx += 1;
            }
        }
    }
}

/// Clipped-surrogate PPO update over the whole batch (both seats).
pub fn ppo_update(
    policy: &PolicyParams,
    batch: &TrajectoryBatch,
    cfg: &TrajeDiConfig,
) -> Result<(PolicyParams, PpoStats), MarlError> {
    ppo_update_filtered(policy, batch, cfg, SeatFilter::Both, None, 0)
}

/// PPO update restricted to one seat's samples, with an optional diversity
/// signal. `update_index` keeps shuffling streams distinct across calls
/// within one training run.
pub fn ppo_update_filtered(
    policy: &PolicyParams,
    batch: &TrajectoryBatch,
    cfg: &TrajeDiConfig,
    filter: SeatFilter,
    diversity: Option<&DiversitySignal>,
    update_index: u64,
) -> Result<(PolicyParams, PpoStats), MarlError> {
    let samples = build_samples(batch, cfg, filter, diversity);
    if samples.is_empty() {
        return Ok((policy.clone(), PpoStats::default()));
    }
    let mut updated = policy.clone();
    let mut adam = Adam::new(policy.param_count());
    let mut rng = stream_rng(cfg.seed, "ppo/shuffle", update_index);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut last_stats = PpoStats::default();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let chunk = samples.len().div_ceil(cfg.minibatches.max(1));
        let mut epoch_stats = PpoStats::default();
        let mut minibatch_count = 0.0;
        for indices in order.chunks(chunk.max(1)) {
            let mut minibatch: Vec<PpoSample> =
                indices.iter().map(|&i| samples[i].clone()).collect();
            normalize_advantages(&mut minibatch);
            let (mut grads, stats) = ppo_loss_gradients(&updated, &minibatch, cfg);
            let total = stats.policy_loss + cfg.value_coef * stats.value_loss
                - cfg.entropy_coef * stats.entropy;
            if !total.is_finite() {
                return Err(MarlError::NonFiniteLoss { phase: "ppo_update", value: total });
            }
            let norm = grads.global_norm();
            if norm > cfg.grad_clip {
                grads.scale(cfg.grad_clip / norm);
            }
            adam.step(&mut updated, &grads, cfg.learning_rate);
            epoch_stats.policy_loss += stats.policy_loss;
            epoch_stats.value_loss += stats.value_loss;
            epoch_stats.entropy += stats.entropy;
            epoch_stats.clip_fraction += stats.clip_fraction;
            minibatch_count += 1.0;
        }
        last_stats = PpoStats {
            policy_loss: epoch_stats.policy_loss / minibatch_count,
            value_loss: epoch_stats.value_loss / minibatch_count,
            entropy: epoch_stats.entropy / minibatch_count,
            clip_fraction: epoch_stats.clip_fraction / minibatch_count,
        };
    }
    updated.trained_timesteps += batch.steps.len() as u64;
    Ok((updated, last_stats))
}

fn normalize_advantages(samples: &mut [PpoSample]) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for s in samples.iter_mut() {
        s.advantage = (s.advantage - mean) / std;
    }
}

/// Jensen-Shannon divergence of discrete distributions, natural log;
/// 0 when identical, at most ln(n).
pub fn jsd_of_distributions(dists: &[Vec<f64>]) -> f64 {
    let n = dists.len();
    let k = dists[0].len();
    let mut mixture = vec![0.0; k];
    for d in dists {
        for (m, p) in mixture.iter_mut().zip(d) {
            *m += p / n as f64;
        }
    }
    let h = |p: &[f64]| -> f64 {
        -p.iter().map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 }).sum::<f64>()
    };
    let mean_h = dists.iter().map(|d| h(d)).sum::<f64>() / n as f64;
    (h(&mixture) - mean_h).max(0.0)
}

/// Discounted state-local JSD: over every (state, seat) sample in the
/// batches, the JSD among the members' action distributions there, averaged
/// with weight gamma^t.
pub fn jsd_gamma(
    batches: &[&TrajectoryBatch],
    members: &[PolicyParams],
    gamma: f64,
) -> Result<f64, MarlError> {
    if members.len() < 2 {
        return Err(MarlError::InsufficientMembers(members.len()));
    }
    let mut weighted = 0.0;
    let mut weight_total = 0.0;
    for batch in batches {
        for record in &batch.steps {
            let w = gamma.powi(record.t as i32);
            for seat in 0..2 {
                let dists: Vec<Vec<f64>> =
                    members.iter().map(|m| m.action_probs(&record.obs[seat])).collect();
                weighted += w * jsd_of_distributions(&dists);
                weight_total += w;
            }
        }
    }
    Ok(if weight_total > 0.0 { weighted / weight_total } else { 0.0 })
}

/// One point on a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub timestep: usize,
    pub sparse: f64,
    pub shaped: f64,
}

/// A trained population: n members, the best response, and its eval curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<PolicyParams>,
    pub best_response: PolicyParams,
    pub shaping: ShapingVector,
    pub train_curve: Vec<CurvePoint>,
}

/// Mean per-episode sparse and shaped return of sampled self-play.
pub fn selfplay_eval(
    policy: &PolicyParams,
    layout: &Arc<Layout>,
    shaping: &ShapingVector,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> (f64, f64) {
    let mut sparse_total = 0.0;
    let mut shaped_total = 0.0;
    for ep in 0..episodes {
        let batch = collect_rollouts(
            [policy, policy],
            layout,
            shaping,
            1,
            horizon,
            substream(seed, "eval/episode", ep as u64),
        );
        sparse_total += batch.total_sparse();
        shaped_total += batch.steps.iter().map(|s| s.shaped).sum::<f64>();
    }
    (sparse_total / episodes as f64, shaped_total / episodes as f64)
}

/// Trains n members plus a best response under one shaping. Members learn
/// from self-play with the alpha-weighted JSD bonus; the best response
/// learns from cross-play with every member and from self-play. Every
/// `eval_every` collected steps, the best response is evaluated in self-play
/// and a curve point is recorded at the scheduled timestep.
pub fn train_population(
    shaping: &ShapingVector,
    layout: &Arc<Layout>,
    cfg: &TrajeDiConfig,
) -> Result<Population, MarlError> {
    cfg.validate()?;
    let mut members: Vec<PolicyParams> = (0..cfg.n)
        .map(|i| {
            PolicyParams::init(
                POLICY_INPUT_DIM,
                cfg.hidden,
                *shaping,
                substream(cfg.seed, "population/member-init", i as u64),
                Role::PopulationMember(i),
            )
        })
        .collect();
    let mut br = PolicyParams::init(
        POLICY_INPUT_DIM,
        cfg.hidden,
        *shaping,
        substream(cfg.seed, "population/br-init", 0),
        Role::BestResponse,
    );

    let mut train_curve = Vec::new();
    // Budget is per learner: members and the BR each train on
    // total_timesteps of their own rollouts, advancing in lockstep rounds.
    let mut consumed = 0usize;
    let mut next_eval = 1usize;
    let mut update_index = 0u64;
    let mut rollout_index = 0u64;
    let mut br_round = 0u64;
    let evals_total = cfg.total_timesteps / cfg.eval_every.max(1);

    while consumed < cfg.total_timesteps {
        // (a) Members: self-play plus the diversity bonus.
        let mut round_steps = cfg.rollout_length;
        for i in 0..cfg.n {
            let batch = collect_rollouts(
                [&members[i], &members[i]],
                layout,
                shaping,
                cfg.rollout_length,
                cfg.horizon,
                substream(cfg.seed, "population/member-rollout", rollout_index),
            );
            rollout_index += 1;
            round_steps = batch.steps.len();
            let diversity = if cfg.alpha > 0.0 {
                Some(member_diversity_signal(&members, i, &batch, cfg.alpha, cfg.gamma))
            } else {
                None
            };
            let (updated, _) = ppo_update_filtered(
                &members[i],
                &batch,
                cfg,
                SeatFilter::Both,
                diversity.as_ref(),
                update_index,
            )?;
            update_index += 1;
            members[i] = updated;
        }

        // (b) Best response: one rollout per round, cycling through the
        // members (alternating seats) with a self-play round per pass.
        let cycle = (br_round % (cfg.n as u64 + 1)) as usize;
        br_round += 1;
        let (pair, filter): ([&PolicyParams; 2], SeatFilter) = if cycle < cfg.n {
            let br_seat = cycle % 2;
            if br_seat == 0 {
                ([&br, &members[cycle]], SeatFilter::Only(0))
            } else {
                ([&members[cycle], &br], SeatFilter::Only(1))
            }
        } else {
            ([&br, &br], SeatFilter::Both)
        };
        let batch = collect_rollouts(
            pair,
            layout,
            shaping,
            cfg.rollout_length,
            cfg.horizon,
            substream(cfg.seed, "population/br-rollout", rollout_index),
        );
        rollout_index += 1;
        round_steps = round_steps.max(batch.steps.len());
        let (updated, _) = ppo_update_filtered(&br, &batch, cfg, filter, None, update_index)?;
        update_index += 1;
        br = updated;
        consumed += round_steps;

        // Scheduled self-play evaluations of the best response.
        while next_eval <= evals_total && consumed >= next_eval * cfg.eval_every {
            let (sparse, shaped) = selfplay_eval(
                &br,
                layout,
                shaping,
                cfg.eval_episodes,
                cfg.horizon,
                substream(cfg.seed, "population/eval", next_eval as u64),
            );
            train_curve.push(CurvePoint {
                timestep: next_eval * cfg.eval_every,
                sparse,
                shaped,
            });
            next_eval += 1;
        }
    }

    Ok(Population { members, best_response: br, shaping: *shaping, train_curve })
}

/// Plain self-play PPO under a (hidden) shaping; the MAPPO-style baseline
/// partner.
pub fn train_partner(
    shaping: &ShapingVector,
    layout: &Arc<Layout>,
    cfg: &TrajeDiConfig,
) -> Result<PolicyParams, MarlError> {
    let mut policy = PolicyParams::init(
        POLICY_INPUT_DIM,
        cfg.hidden,
        *shaping,
        substream(cfg.seed, "partner/init", 0),
        Role::Partner,
    );
    let mut consumed = 0usize;
    let mut index = 0u64;
    while consumed < cfg.total_timesteps {
        let batch = collect_rollouts(
            [&policy, &policy],
            layout,
            shaping,
            cfg.rollout_length,
            cfg.horizon,
            substream(cfg.seed, "partner/rollout", index),
        );
        consumed += batch.steps.len();
        let (updated, _) =
            ppo_update_filtered(&policy, &batch, cfg, SeatFilter::Both, None, index)?;
        policy = updated;
        index += 1;
    }
    Ok(policy)
}
