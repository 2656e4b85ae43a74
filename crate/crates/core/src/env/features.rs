//! The six shaped reward features and reward densification.
//!
//! Feature order (canonical, used everywhere weights are serialized):
//!   0 PLACEMENT_IN_POT_REW   — event: agent placed an onion into a pot this step
//!   1 DISH_PICKUP_REWARD     — event: agent took a dish from a dish dispenser
//!   2 SOUP_PICKUP_REWARD     — event: agent picked up a ready soup with a dish
//!   3 DISH_DISP_DISTANCE_REW — closeness to the nearest dish dispenser, only
//!                              while holding nothing
//!   4 POT_DISTANCE_REW       — closeness to the nearest pot, only while
//!                              holding an onion
//!   5 SOUP_DISTANCE_REW      — closeness to the nearest ready pot, only while
//!                              holding a dish and some pot is ready
//!
//! Event features are 0 or 1 per agent per step. Closeness features are
//! max(0, 1 - d / (width + height)) with d the Manhattan distance to the
//! nearest relevant cell, so they stay in [0, 1]. The densified reward is
//! sparse + sum_k w_k * f_k with features summed over both agents.

use crate::shaping::{ShapingVector, NUM_FEATURES};

use super::{AgentState, ItemKind, Layout, Pos, PotState};

/// Per-agent feature values for one step: `0[agent][feature]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapingFeatures(pub [[f64; NUM_FEATURES]; 2]);

impl ShapingFeatures {
    pub fn zeros() -> Self {
        ShapingFeatures([[0.0; NUM_FEATURES]; 2])
    }

    /// Features summed over both agents, the form the weights apply to.
    pub fn team_sum(&self) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for agent in &self.0 {
            for (o, f) in out.iter_mut().zip(agent) {
                *o += f;
            }
        }
        out
    }
}

/// Densified reward: sparse + dot(weights, team-summed features).
pub fn densify(sparse: f64, features: &ShapingFeatures, shaping: &ShapingVector) -> f64 {
    let team = features.team_sum();
    sparse + shaping.0.iter().zip(&team).map(|(w, f)| w * f).sum::<f64>()
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("expected {NUM_FEATURES} weights, got {got}")]
pub struct DimensionMismatch {
    pub got: usize,
}

/// `densify` over unchecked slices, for ingestion paths where arity is not
/// yet guaranteed by the type system.
pub fn densify_raw(
    sparse: f64,
    team_features: &[f64],
    weights: &[f64],
) -> Result<f64, DimensionMismatch> {
    if weights.len() != NUM_FEATURES {
        return Err(DimensionMismatch { got: weights.len() });
    }
    if team_features.len() != NUM_FEATURES {
        return Err(DimensionMismatch { got: team_features.len() });
    }
    Ok(sparse + weights.iter().zip(team_features).map(|(w, f)| w * f).sum::<f64>())
}

/// Closeness to the nearest of `targets`: max(0, 1 - d / (width + height)).
fn closeness(layout: &Layout, from: Pos, targets: &[Pos]) -> f64 {
    let nearest = targets.iter().map(|t| from.manhattan(*t)).min();
    match nearest {
        Some(d) => (1.0 - d as f64 / (layout.width + layout.height) as f64).max(0.0),
        None => 0.0,
    }
}

/// Fills the three distance features for one agent, gated on what it holds.
pub(super) fn distance_features(
    layout: &Layout,
    agent: &AgentState,
    pots: &[PotState],
    out: &mut [f64; NUM_FEATURES],
) {
    match agent.held {
        ItemKind::Nothing => {
            out[3] = closeness(layout, agent.pos, &layout.dish_dispensers);
        }
        ItemKind::Onion => {
            out[4] = closeness(layout, agent.pos, &layout.pots);
        }
        ItemKind::Dish => {
            let ready: Vec<Pos> = layout
                .pots
                .iter()
                .zip(pots)
                .filter(|(_, p)| p.ready)
                .map(|(pos, _)| *pos)
                .collect();
            if !ready.is_empty() {
                out[5] = closeness(layout, agent.pos, &ready);
            }
        }
        ItemKind::Soup => {}
    }
}
