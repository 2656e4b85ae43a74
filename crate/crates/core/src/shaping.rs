//! Shaping-weight vectors, the Random and Stratified Grid selection methods,
//! diversity metrics, validation, and the JSON file format shared by every
//! selection method.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;

/// Number of shaping features.
pub const NUM_FEATURES: usize = 6;

/// The six shaped reward features, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureId {
    PlacementInPot,
    DishPickup,
    SoupPickup,
    DishDispDistance,
    PotDistance,
    SoupDistance,
}

impl FeatureId {
    pub const ALL: [FeatureId; NUM_FEATURES] = [
        FeatureId::PlacementInPot,
        FeatureId::DishPickup,
        FeatureId::SoupPickup,
        FeatureId::DishDispDistance,
        FeatureId::PotDistance,
        FeatureId::SoupDistance,
    ];

    /// Canonical key used in every serialized artifact.
    pub fn name(self) -> &'static str {
        match self {
            FeatureId::PlacementInPot => "PLACEMENT_IN_POT_REW",
            FeatureId::DishPickup => "DISH_PICKUP_REWARD",
            FeatureId::SoupPickup => "SOUP_PICKUP_REWARD",
            FeatureId::DishDispDistance => "DISH_DISP_DISTANCE_REW",
            FeatureId::PotDistance => "POT_DISTANCE_REW",
            FeatureId::SoupDistance => "SOUP_DISTANCE_REW",
        }
    }

    pub fn from_name(name: &str) -> Option<FeatureId> {
        FeatureId::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Inclusive weight range shared by all selection methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRange {
    pub min: f64,
    pub max: f64,
}

impl Default for WeightRange {
    fn default() -> Self {
        WeightRange { min: 0.0, max: 10.0 }
    }
}

impl WeightRange {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, w: f64) -> bool {
        w >= self.min && w <= self.max
    }
}

/// One reward shaping: a weight per feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ShapingRepr", into = "ShapingRepr")]
pub struct ShapingVector(pub [f64; NUM_FEATURES]);

/// Serialized form: an object keyed by the canonical feature names.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapingRepr {
    #[serde(rename = "PLACEMENT_IN_POT_REW")]
    placement_in_pot: f64,
    #[serde(rename = "DISH_PICKUP_REWARD")]
    dish_pickup: f64,
    #[serde(rename = "SOUP_PICKUP_REWARD")]
    soup_pickup: f64,
    #[serde(rename = "DISH_DISP_DISTANCE_REW")]
    dish_disp_distance: f64,
    #[serde(rename = "POT_DISTANCE_REW")]
    pot_distance: f64,
    #[serde(rename = "SOUP_DISTANCE_REW")]
    soup_distance: f64,
}

impl From<ShapingRepr> for ShapingVector {
    fn from(r: ShapingRepr) -> Self {
        ShapingVector([
            r.placement_in_pot,
            r.dish_pickup,
            r.soup_pickup,
            r.dish_disp_distance,
            r.pot_distance,
            r.soup_distance,
        ])
    }
}

impl From<ShapingVector> for ShapingRepr {
    fn from(v: ShapingVector) -> Self {
        ShapingRepr {
            placement_in_pot: v.0[0],
            dish_pickup: v.0[1],
            soup_pickup: v.0[2],
            dish_disp_distance: v.0[3],
            pot_distance: v.0[4],
            soup_distance: v.0[5],
        }
    }
}

impl ShapingVector {
    pub fn zeros() -> Self {
        ShapingVector([0.0; NUM_FEATURES])
    }

    pub fn get(&self, f: FeatureId) -> f64 {
        self.0[f.index()]
    }

    pub fn set(&mut self, f: FeatureId, w: f64) {
        self.0[f.index()] = w;
    }
}

impl std::ops::Index<FeatureId> for ShapingVector {
    type Output = f64;
    fn index(&self, f: FeatureId) -> &f64 {
        &self.0[f.index()]
    }
}

/// How a shaping set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMethod {
    Random,
    StratifiedGrid,
    Surrogate,
    #[serde(rename = "LLM")]
    Llm,
    Fixed,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SelectionMethod::Random => "Random",
            SelectionMethod::StratifiedGrid => "StratifiedGrid",
            SelectionMethod::Surrogate => "Surrogate",
            SelectionMethod::Llm => "LLM",
            SelectionMethod::Fixed => "Fixed",
        };
        f.write_str(s)
    }
}

/// A generated set of shapings plus provenance.
///
/// `created_at` (unix seconds, 0 = unknown) is in-memory bookkeeping only; it
/// is excluded from the file so identical inputs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingSet {
    pub method: SelectionMethod,
    pub seed: u64,
    pub shapings: Vec<ShapingVector>,
    #[serde(skip)]
    pub created_at: u64,
}

impl ShapingSet {
    pub fn new(method: SelectionMethod, seed: u64, shapings: Vec<ShapingVector>) -> Self {
        ShapingSet { method, seed, shapings, created_at: now_unix() }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("shaping set serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ShapingError> {
        let set: ShapingSet = serde_json::from_str(text)?;
        let violations = validate_shaping_set(&set);
        if violations.is_empty() {
            Ok(set)
        } else {
            Err(ShapingError::Invalid(violations))
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ShapingError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ShapingError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Diversity of a shaping set: spread per weight and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub per_weight_stdev: [f64; NUM_FEATURES],
    pub avg_stdev: f64,
    pub per_weight_range_pct: [f64; NUM_FEATURES],
    pub avg_range_pct: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ShapingError {
    #[error("shaping count must be at least 1, got {0}")]
    InvalidCount(usize),
    #[error("diversity metrics need at least 2 shapings, got {0}")]
    InsufficientSamples(usize),
    #[error("invalid shaping set: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(Violation::to_string).collect::<Vec<_>>().join("; ")
}

/// One invariant breach found by validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySet,
    OutOfRange { shaping: usize, feature: usize, value: f64 },
    WrongArity { shaping: usize, len: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySet => write!(f, "set contains no shapings"),
            Violation::OutOfRange { shaping, feature, value } => write!(
                f,
                "shaping {shaping}: feature {feature} ({}) value {value} outside [0, 10]",
                FeatureId::ALL[*feature].name()
            ),
            Violation::WrongArity { shaping, len } => {
                write!(f, "shaping {shaping}: expected {NUM_FEATURES} weights, got {len}")
            }
        }
    }
}

/// Draws each of the `6 * p` weights independently and uniformly.
pub fn random_select(p: usize, seed: u64) -> Result<ShapingSet, ShapingError> {
    random_select_in(p, seed, WeightRange::default())
}

pub fn random_select_in(
    p: usize,
    seed: u64,
    range: WeightRange,
) -> Result<ShapingSet, ShapingError> {
    if p < 1 {
        return Err(ShapingError::InvalidCount(p));
    }
    let mut rng = stream_rng(seed, "shaping/random", 0);
    let shapings = (0..p)
        .map(|_| {
            let mut v = [0.0; NUM_FEATURES];
            for w in v.iter_mut() {
                *w = range.min + rng.random::<f64>() * range.width();
            }
            ShapingVector(v)
        })
        .collect();
    Ok(ShapingSet::new(SelectionMethod::Random, seed, shapings))
}

/// Latin Hypercube sampling: per feature, one uniform draw from each of `p`
/// equal strata, independently permuted, so every stratum is hit exactly once.
pub fn lhs_select(p: usize, seed: u64) -> Result<ShapingSet, ShapingError> {
    lhs_select_in(p, seed, WeightRange::default())
}

pub fn lhs_select_in(p: usize, seed: u64, range: WeightRange) -> Result<ShapingSet, ShapingError> {
    if p < 1 {
        return Err(ShapingError::InvalidCount(p));
    }
    let mut rng = stream_rng(seed, "shaping/lhs", 0);
    let width = range.width() / p as f64;
    let mut shapings = vec![ShapingVector::zeros(); p];
    for feature in 0..NUM_FEATURES {
        let mut column: Vec<f64> = (0..p)
            .map(|stratum| {
                let lo = range.min + stratum as f64 * width;
                lo + rng.random::<f64>() * width
            })
            .collect();
        column.shuffle(&mut rng);
        for (i, value) in column.into_iter().enumerate() {
            shapings[i].0[feature] = value;
        }
    }
    Ok(ShapingSet::new(SelectionMethod::StratifiedGrid, seed, shapings))
}

/// Spread metrics over a set's weights, using the population standard
/// deviation (the metric describes the generated set itself).
pub fn diversity_metrics(set: &ShapingSet) -> Result<DiversityReport, ShapingError> {
    diversity_metrics_in(set, WeightRange::default())
}

pub fn diversity_metrics_in(
    set: &ShapingSet,
    range: WeightRange,
) -> Result<DiversityReport, ShapingError> {
    let p = set.shapings.len();
    if p < 2 {
        return Err(ShapingError::InsufficientSamples(p));
    }
    let mut per_weight_stdev = [0.0; NUM_FEATURES];
    let mut per_weight_range_pct = [0.0; NUM_FEATURES];
    for feature in 0..NUM_FEATURES {
        let values: Vec<f64> = set.shapings.iter().map(|s| s.0[feature]).collect();
        let mean = values.iter().sum::<f64>() / p as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p as f64;
        per_weight_stdev[feature] = var.sqrt();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        per_weight_range_pct[feature] = 100.0 * (max - min) / range.width();
    }
    let avg_stdev = per_weight_stdev.iter().sum::<f64>() / NUM_FEATURES as f64;
    let avg_range_pct = per_weight_range_pct.iter().sum::<f64>() / NUM_FEATURES as f64;
    Ok(DiversityReport { per_weight_stdev, avg_stdev, per_weight_range_pct, avg_range_pct })
}

/// Collects every invariant violation in the set (never errors).
pub fn validate_shaping_set(set: &ShapingSet) -> Vec<Violation> {
    validate_shaping_set_in(set, WeightRange::default())
}

pub fn validate_shaping_set_in(set: &ShapingSet, range: WeightRange) -> Vec<Violation> {
    let mut violations = Vec::new();
    if set.shapings.is_empty() {
        violations.push(Violation::EmptySet);
    }
    for (i, shaping) in set.shapings.iter().enumerate() {
        for (k, &w) in shaping.0.iter().enumerate() {
            if !range.contains(w) {
                violations.push(Violation::OutOfRange { shaping: i, feature: k, value: w });
            }
        }
    }
    violations
}

/// Validates rows whose arity is not yet guaranteed by the type system
/// (ingestion paths: parsed LLM output, hand-edited files).
pub fn validate_raw_shapings(rows: &[Vec<f64>], range: WeightRange) -> Vec<Violation> {
    let mut violations = Vec::new();
    if rows.is_empty() {
        violations.push(Violation::EmptySet);
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != NUM_FEATURES {
            violations.push(Violation::WrongArity { shaping: i, len: row.len() });
            continue;
        }
        for (k, &w) in row.iter().enumerate() {
            if !range.contains(w) {
                violations.push(Violation::OutOfRange { shaping: i, feature: k, value: w });
            }
        }
    }
    violations
}
