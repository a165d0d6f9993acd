//! Scoring observations against instruction segments, and the indicator
//! controller that decides when the aimed landmark has been reached.

use serde::{Deserialize, Serialize};

use crate::citygraph::NodeId;
use crate::error::{NavError, Result};
use crate::util::{dot, norm};

/// Matching scores `(s1, s2)`: visual-to-landmark and memory-to-direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreFeature {
    pub s1: f64,
    pub s2: f64,
}

/// Everything a matcher may look at for one score.
#[derive(Debug, Clone, Copy)]
pub struct MatchQuery<'a> {
    pub feature: &'a [f64],
    pub segment: &'a [f64],
    pub node: NodeId,
    /// Ground-truth node for the aimed segment pair, when known.
    pub aimed_landmark: Option<NodeId>,
}

pub trait Matcher: Send + Sync {
    /// Score in `[0, 1]`.
    fn score(&self, query: &MatchQuery<'_>) -> Result<f64>;
}

/// Scores through `matcher`, enforcing the `[0, 1]` contract.
pub fn score_pair(matcher: &dyn Matcher, query: &MatchQuery<'_>) -> Result<f64> {
    let s = matcher.score(query)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(NavError::InvalidConfig(format!("matcher returned {s} outside [0, 1]")));
    }
    Ok(s)
}

/// 1 at the ground-truth landmark of the aimed pair, 0 everywhere else.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleMatcher;

impl Matcher for OracleMatcher {
    fn score(&self, q: &MatchQuery<'_>) -> Result<f64> {
        Ok(if q.aimed_landmark == Some(q.node) { 1.0 } else { 0.0 })
    }
}

/// Cosine similarity mapped affinely into `[0, 1]`. A zero vector scores 0.5.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineMatcher;

impl Matcher for CosineMatcher {
    fn score(&self, q: &MatchQuery<'_>) -> Result<f64> {
        if q.feature.len() != q.segment.len() {
            return Err(NavError::DimensionMismatch {
                left: q.feature.len(),
                right: q.segment.len(),
            });
        }
        let denom = norm(q.feature) * norm(q.segment);
        let cos = if denom > 0.0 {
            (dot(q.feature, q.segment) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        Ok((cos + 1.0) / 2.0)
    }
}

/// Always returns the same score; stands in for a side with no usable signal.
#[derive(Debug, Clone, Copy)]
pub struct ConstantMatcher(pub f64);

impl Matcher for ConstantMatcher {
    fn score(&self, _: &MatchQuery<'_>) -> Result<f64> {
        Ok(self.0)
    }
}

/// Recurrent state carried between controller steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Steps since the controller last fired, saturating.
    pub steps_since_fire: u32,
}

impl ControllerState {
    /// State of a controller that has never fired.
    pub fn fresh() -> Self {
        ControllerState {
            steps_since_fire: u32::MAX,
        }
    }

    /// State right after firing.
    pub fn fired() -> Self {
        ControllerState { steps_since_fire: 0 }
    }
}

pub trait IndicatorController: Send + Sync {
    /// Decides whether the aimed landmark is reached.
    fn step(&self, s: ScoreFeature, hidden: ControllerState) -> (bool, ControllerState);
}

/// Fires when both scores reach `threshold`, at least `min_gap` steps after
/// the previous firing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdController {
    pub threshold: f64,
    pub min_gap: u32,
}

impl Default for ThresholdController {
    fn default() -> Self {
        ThresholdController {
            threshold: 0.5,
            min_gap: 1,
        }
    }
}

pub fn controller_step(
    ctrl: &dyn IndicatorController,
    s: ScoreFeature,
    hidden: ControllerState,
) -> (bool, ControllerState) {
    ctrl.step(s, hidden)
}

impl IndicatorController for ThresholdController {
    fn step(&self, s: ScoreFeature, hidden: ControllerState) -> (bool, ControllerState) {
        let since = hidden.steps_since_fire.saturating_add(1);
        let fire = s.s1.min(s.s2) >= self.threshold && since >= self.min_gap;
        if fire {
            (true, ControllerState::fired())
        } else {
            (false, ControllerState { steps_since_fire: since })
        }
    }
}
