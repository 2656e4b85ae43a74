//! Mode-vote ensembles of best-response agents and cross-play evaluation
//! against partners with hidden shapings.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{observe, reset_with_horizon, step, Action, Layout, HORIZON, NUM_ACTIONS};
use crate::marl::{
    obs_with_seat, train_population, MarlError, PolicyParams, Population, TrajeDiConfig,
};
use crate::rng::{stream_rng, substream};
use crate::shaping::{
    diversity_metrics, DiversityReport, SelectionMethod, ShapingSet, ShapingVector, NUM_FEATURES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieBreak {
    /// Among modal actions, pick the lowest index. Deterministic, seed-free.
    #[default]
    LowestIndex,
}

/// A committee of best responses; its action is the mode of the components'
/// greedy votes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePolicy {
    pub components: Vec<PolicyParams>,
    pub tie_break: TieBreak,
}

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one component")]
    Empty,
    #[error("component {index} expects {expected} inputs, component 0 expects {got}")]
    MixedComponents { index: usize, expected: usize, got: usize },
    #[error("observation has {got} values, policies expect {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("protocol needs at least 1 rollout")]
    NoRollouts,
    #[error("protocol needs at least 1 seed")]
    NoSeeds,
    #[error("partner pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Train(#[from] MarlError),
}

impl EnsemblePolicy {
    pub fn new(components: Vec<PolicyParams>) -> Result<Self, EnsembleError> {
        if components.is_empty() {
            return Err(EnsembleError::Empty);
        }
        let dim = components[0].input_dim();
        for (index, c) in components.iter().enumerate() {
            if c.input_dim() != dim {
                return Err(EnsembleError::MixedComponents {
                    index,
                    expected: c.input_dim(),
                    got: dim,
                });
            }
        }
        Ok(EnsemblePolicy { components, tie_break: TieBreak::LowestIndex })
    }

    pub fn input_dim(&self) -> usize {
        self.components[0].input_dim()
    }

    /// The component shapings, as a set for diversity reporting.
    pub fn shaping_set(&self) -> ShapingSet {
        ShapingSet::new(
            SelectionMethod::Fixed,
            0,
            self.components.iter().map(|c| c.shaping).collect(),
        )
    }
}

/// Modal greedy action across components; ties fall to the tie-break rule.
pub fn ensemble_action(
    ensemble: &EnsemblePolicy,
    observation: &[f64],
) -> Result<usize, EnsembleError> {
    if observation.len() != ensemble.input_dim() {
        return Err(EnsembleError::DimensionMismatch {
            expected: ensemble.input_dim(),
            got: observation.len(),
        });
    }
    let mut votes = [0usize; NUM_ACTIONS];
    for c in &ensemble.components {
        votes[c.greedy_action(observation)] += 1;
    }
    let best = *votes.iter().max().expect("fixed-size vote array");
    let winner = match ensemble.tie_break {
        TieBreak::LowestIndex => votes.iter().position(|&v| v == best),
    };
    Ok(winner.expect("at least one vote cast"))
}

/// A seated player: ensembles vote deterministically, single policies sample
/// from their action distribution.
#[derive(Debug, Clone, Copy)]
pub enum Actor<'a> {
    Vote(&'a EnsemblePolicy),
    Sample(&'a PolicyParams),
}

impl Actor<'_> {
    fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<usize, EnsembleError> {
        match self {
            Actor::Vote(e) => ensemble_action(e, obs),
            Actor::Sample(p) => {
                if obs.len() != p.input_dim() {
                    return Err(EnsembleError::DimensionMismatch {
                        expected: p.input_dim(),
                        got: obs.len(),
                    });
                }
                Ok(p.sample_action(obs, rng).0)
            }
        }
    }

    /// The shapings behind this player, for diversity reporting.
    pub fn shapings(&self) -> Vec<ShapingVector> {
        match self {
            Actor::Vote(e) => e.components.iter().map(|c| c.shaping).collect(),
            Actor::Sample(p) => vec![p.shaping],
        }
    }
}

/// Rollout/seed/horizon template for an evaluation match.
///
/// In a deserialized config an absent `seeds` list stays empty so the caller
/// can derive seeds from its own stream; `Default` carries a runnable set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_rollouts() -> usize {
    40
}

fn default_horizon() -> usize {
    HORIZON
}

impl Default for MatchSpec {
    fn default() -> Self {
        MatchSpec { rollouts: default_rollouts(), seeds: (0..10).collect(), horizon: HORIZON }
    }
}

impl MatchSpec {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.rollouts < 1 {
            return Err(EnsembleError::NoRollouts);
        }
        if self.seeds.is_empty() {
            return Err(EnsembleError::NoSeeds);
        }
        Ok(())
    }
}

/// One evaluated episode. Team feature totals are enough to recompute the
/// shaped return under any shaping after the fact: the per-step densified
/// rewards telescope to sparse + w . totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    /// Seat the first (ego) player occupied.
    pub ego_seat: usize,
    pub seed: u64,
    pub rollout: usize,
    pub sparse: f64,
    pub feature_totals: [f64; NUM_FEATURES],
}

impl RolloutRecord {
    pub fn shaped_under(&self, shaping: &ShapingVector) -> f64 {
        self.sparse
            + shaping.0.iter().zip(&self.feature_totals).map(|(w, f)| w * f).sum::<f64>()
    }
}

/// Runs one episode with the given seating and returns its sparse return and
/// team-summed feature totals.
fn eval_episode(
    seats: [&Actor; 2],
    layout: &Arc<Layout>,
    horizon: usize,
    seed: u64,
) -> Result<(f64, [f64; NUM_FEATURES]), EnsembleError> {
    let mut state = reset_with_horizon(layout, substream(seed, "eval/reset", 0), horizon);
    let mut rng = stream_rng(seed, "eval/actions", 0);
    let mut sparse = 0.0;
    let mut totals = [0.0; NUM_FEATURES];
    loop {
        let mut joint = [Action::Stay; 2];
        for seat in 0..2 {
            let obs = obs_with_seat(&observe(&state, seat), seat);
            let a = seats[seat].act(&obs, &mut rng)?;
            joint[seat] = Action::from_index(a).expect("action index in range");
        }
        let out = step(&state, joint).expect("stepping below horizon");
        sparse += out.sparse_reward;
        let team = out.features.team_sum();
        for (t, f) in totals.iter_mut().zip(&team) {
            *t += f;
        }
        state = out.next_state;
        if out.done {
            return Ok((sparse, totals));
        }
    }
}

/// Cross-play outcome: both seat assignments' estimates and their average.
#[derive(Debug, Clone, PartialEq)]
pub struct XpOutcome {
    /// Mean sparse return with the first policy at seat 0, then at seat 1.
    pub seat_sparse: [f64; 2],
    pub mean_sparse: f64,
    pub records: Vec<RolloutRecord>,
}

/// J_XP estimate: averages the two seat assignments' mean sparse returns
/// over `spec.rollouts` episodes per seed per assignment. Episode seeds
/// depend only on (seed, rollout), so swapping the players swaps the seat
/// details and leaves the mean exactly unchanged.
pub fn xp_return(
    pi_a: &Actor,
    pi_b: &Actor,
    layout: &Arc<Layout>,
    spec: &MatchSpec,
) -> Result<XpOutcome, EnsembleError> {
    spec.validate()?;
    let mut records = Vec::with_capacity(2 * spec.seeds.len() * spec.rollouts);
    let mut seat_sparse = [0.0; 2];
    for (ego_seat, seats) in [[pi_a, pi_b], [pi_b, pi_a]].into_iter().enumerate() {
        let mut total = 0.0;
        let mut count = 0usize;
        for &seed in &spec.seeds {
            for rollout in 0..spec.rollouts {
                let ep_seed = substream(seed, "xp/episode", rollout as u64);
                let (sparse, feature_totals) =
                    eval_episode(seats, layout, spec.horizon, ep_seed)?;
                total += sparse;
                count += 1;
                records.push(RolloutRecord { ego_seat, seed, rollout, sparse, feature_totals });
            }
        }
        seat_sparse[ego_seat] = total / count as f64;
    }
    Ok(XpOutcome {
        seat_sparse,
        mean_sparse: (seat_sparse[0] + seat_sparse[1]) / 2.0,
        records,
    })
}

/// Evaluation summary for one method against a partner pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// (sparse, shaped under the partner's shaping), one per rollout.
    pub rollouts: Vec<(f64, f64)>,
    pub mean_sparse: f64,
    pub mean_shaped: f64,
    /// 1.645 x stderr: 90% CI halfwidth under the normal approximation.
    pub ci90_sparse: f64,
    pub ci90_shaped: f64,
    /// 100 x (mean_sparse - reference)/reference, once a reference is known.
    pub improvement_vs_reference: Option<f64>,
    /// Diversity of the ego's shaping set (absent for singleton egos).
    pub diversity: Option<DiversityReport>,
}

fn mean_and_ci90(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.645 * (var / n).sqrt())
}

impl EvalReport {
    fn from_rollouts(rollouts: Vec<(f64, f64)>, diversity: Option<DiversityReport>) -> Self {
        let sparse: Vec<f64> = rollouts.iter().map(|r| r.0).collect();
        let shaped: Vec<f64> = rollouts.iter().map(|r| r.1).collect();
        let (mean_sparse, ci90_sparse) = mean_and_ci90(&sparse);
        let (mean_shaped, ci90_shaped) = mean_and_ci90(&shaped);
        EvalReport {
            rollouts,
            mean_sparse,
            mean_shaped,
            ci90_sparse,
            ci90_shaped,
            improvement_vs_reference: None,
            diversity,
        }
    }

    /// Improvement is undefined against a zero reference; it stays unset.
    pub fn with_reference(mut self, reference_mean: f64) -> Self {
        let pct = 100.0 * (self.mean_sparse - reference_mean) / reference_mean;
        self.improvement_vs_reference = pct.is_finite().then_some(pct);
        self
    }
}

/// Evaluates an ego against every partner over the protocol: both seats per
/// (partner, seed, rollout). Partners' shapings stay hidden from play; the
/// shaped return is recomputed afterwards from the logged feature totals
/// under each partner's own shaping.
pub fn evaluate_method(
    ego: &Actor,
    partner_pool: &[PolicyParams],
    layout: &Arc<Layout>,
    protocol: &MatchSpec,
) -> Result<EvalReport, EnsembleError> {
    protocol.validate()?;
    if partner_pool.is_empty() {
        return Err(EnsembleError::EmptyPool);
    }
    let mut rollouts = Vec::new();
    for partner in partner_pool {
        let outcome = xp_return(ego, &Actor::Sample(partner), layout, protocol)?;
        for record in &outcome.records {
            rollouts.push((record.sparse, record.shaped_under(&partner.shaping)));
        }
    }
    let shapings = ego.shapings();
    let diversity = if shapings.len() >= 2 {
        diversity_metrics(&ShapingSet::new(SelectionMethod::Fixed, 0, shapings)).ok()
    } else {
        None
    };
    Ok(EvalReport::from_rollouts(rollouts, diversity))
}

/// Trains `count` populations under one shared shaping (distinct seeds) and
/// ensembles their best responses: the ensembled-baseline condition.
pub fn build_baseline_ensemble(
    shaping: &ShapingVector,
    count: usize,
    layout: &Arc<Layout>,
    cfg: &TrajeDiConfig,
) -> Result<(EnsemblePolicy, Vec<Population>), EnsembleError> {
    let mut populations = Vec::with_capacity(count);
    for i in 0..count {
        let pop_cfg =
            TrajeDiConfig { seed: substream(cfg.seed, "baseline/population", i as u64), ..*cfg };
        populations.push(train_population(shaping, layout, &pop_cfg)?);
    }
    let ensemble = ensemble_from_populations(&populations)?;
    Ok((ensemble, populations))
}

/// Ensembles the best responses of already-trained populations.
pub fn ensemble_from_populations(
    populations: &[Population],
) -> Result<EnsemblePolicy, EnsembleError> {
    EnsemblePolicy::new(populations.iter().map(|p| p.best_response.clone()).collect())
}

/// One CSV row per method: mean, CI halfwidth, improvement over a reference.
pub fn report_table_csv(entries: &[(&str, &EvalReport)]) -> String {
    let mut out = String::from("method,mean,ci90,improvement_pct\n");
    for (method, report) in entries {
        let improvement = report
            .improvement_vs_reference
            .map_or(String::new(), |v| format!("{v:.2}"));
        out.push_str(&format!(
            "{method},{:.4},{:.4},{improvement}\n",
            report.mean_sparse, report.ci90_sparse
        ));
    }
    out
}
