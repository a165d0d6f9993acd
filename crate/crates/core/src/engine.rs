//! The episode loop: match, maybe advance the attention reference, then move.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::{
    bin_center, fuse, select_edge, ActionDistribution, OraclePolicy, Policy, PolicyContext,
    RandomPolicy, ScoreWeighting, ScriptedPolicy, Weighting, BINS,
};
use crate::citygraph::{geodesic_distance, CityGraph, DirectedEdge, NodeId};
use crate::dataset::{EpisodeSpec, World};
use crate::error::{NavError, Result};
use crate::instruction::{attend, AttentionState, EmbeddedInstruction};
use crate::matching::{
    score_pair, ConstantMatcher, ControllerState, CosineMatcher, IndicatorController,
    MatchQuery, Matcher, OracleMatcher, ScoreFeature, ThresholdController,
};
use crate::memory::{BlockOccupancy, MemoryFeaturizer, MemoryImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub dest_threshold: f64,
    pub budget_fraction: f64,
    pub max_steps: usize,
    /// Divide the attention kernel by its sum before mixing segments.
    #[serde(default)]
    pub normalize_attention: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            dest_threshold: 100.0,
            budget_fraction: 0.30,
            max_steps: 60,
            normalize_attention: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dest_threshold.is_finite() && self.dest_threshold > 0.0) {
            return Err(NavError::InvalidConfig(format!(
                "dest_threshold must be positive, got {}",
                self.dest_threshold
            )));
        }
        if !(self.budget_fraction.is_finite() && self.budget_fraction >= 0.0) {
            return Err(NavError::InvalidConfig(format!(
                "budget_fraction must be non-negative, got {}",
                self.budget_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "running")]
    Running,
    #[serde(rename = "success")]
    Success,
    #[serde(rename = "failure:wrong_stop")]
    WrongStop,
    #[serde(rename = "failure:budget")]
    Budget,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::WrongStop => "failure:wrong_stop",
            Outcome::Budget => "failure:budget",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything except the policy: matchers, controller, fusion weighting and
/// memory featurizer.
pub struct Scoring {
    pub visual: Box<dyn Matcher>,
    pub memory: Box<dyn Matcher>,
    pub controller: Box<dyn IndicatorController>,
    pub weighting: Box<dyn Weighting>,
    pub featurizer: Box<dyn MemoryFeaturizer>,
}

impl Scoring {
    /// Ground-truth correspondence lookup on both sides.
    pub fn oracle() -> Self {
        Scoring {
            visual: Box::new(OracleMatcher),
            memory: Box::new(OracleMatcher),
            controller: Box::new(ThresholdController::default()),
            weighting: Box::new(ScoreWeighting),
            featurizer: Box::new(BlockOccupancy),
        }
    }

    /// Cosine on the visual side. The memory raster features and direction
    /// embeddings live in different spaces, so the memory side abstains
    /// with a constant 1 and the visual score alone gates the controller.
    pub fn cosine() -> Self {
        Scoring {
            visual: Box::new(CosineMatcher),
            memory: Box::new(ConstantMatcher(1.0)),
            controller: Box::new(ThresholdController {
                threshold: 0.6,
                min_gap: 1,
            }),
            weighting: Box::new(ScoreWeighting),
            featurizer: Box::new(BlockOccupancy),
        }
    }
}

pub struct AgentBundle {
    pub policy: Box<dyn Policy>,
    pub scoring: Scoring,
    pub policy_name: String,
    pub matcher_name: String,
}

type PolicyFactory = Arc<dyn Fn(u64) -> Box<dyn Policy> + Send + Sync>;
type ScoringFactory = Arc<dyn Fn() -> Scoring + Send + Sync>;

/// Named policies and matcher setups, so bundles can be chosen from config
/// strings. Ships with `oracle`/`random` policies and `oracle`/`cosine`
/// matchers; more can be registered under new names.
#[derive(Clone)]
pub struct Registry {
    policies: BTreeMap<String, PolicyFactory>,
    scorings: BTreeMap<String, ScoringFactory>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry {
            policies: BTreeMap::new(),
            scorings: BTreeMap::new(),
        };
        r.register_policy("oracle", |_| Box::new(OraclePolicy));
        r.register_policy("random", |seed| Box::new(RandomPolicy::new(seed)));
        r.register_matcher("oracle", Scoring::oracle);
        r.register_matcher("cosine", Scoring::cosine);
        r
    }
}

impl Registry {
    pub fn register_policy(
        &mut self,
        name: &str,
        factory: impl Fn(u64) -> Box<dyn Policy> + Send + Sync + 'static,
    ) {
        self.policies.insert(name.to_string(), Arc::new(factory));
    }

    pub fn register_matcher(&mut self, name: &str, factory: impl Fn() -> Scoring + Send + Sync + 'static) {
        self.scorings.insert(name.to_string(), Arc::new(factory));
    }

    pub fn policy_names(&self) -> impl Iterator<Item = &str> {
        self.policies.keys().map(String::as_str)
    }

    pub fn has_policy(&self, name: &str) -> bool {
        self.policies.contains_key(name)
    }

    pub fn policy(&self, name: &str, seed: u64) -> Result<Box<dyn Policy>> {
        let f = self.policies.get(name).ok_or_else(|| NavError::UnknownName {
            kind: "policy",
            name: name.to_string(),
        })?;
        Ok(f(seed))
    }

    pub fn scoring(&self, name: &str) -> Result<Scoring> {
        let f = self.scorings.get(name).ok_or_else(|| NavError::UnknownName {
            kind: "matcher",
            name: name.to_string(),
        })?;
        Ok(f())
    }

    pub fn bundle(&self, policy: &str, matcher: &str, seed: u64) -> Result<AgentBundle> {
        Ok(AgentBundle {
            policy: self.policy(policy, seed)?,
            scoring: self.scoring(matcher)?,
            policy_name: policy.to_string(),
            matcher_name: matcher.to_string(),
        })
    }
}

/// One line of the trajectory log per engine step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Node where the step started.
    pub node: NodeId,
    /// Attention reference used for matching.
    pub eta: f64,
    pub s1: f64,
    pub s2: f64,
    pub phi: bool,
    pub eta_after: f64,
    /// Fused action distribution, absent when the step ended before moving.
    pub fused: Option<[f64; BINS]>,
    pub action_bin: Option<usize>,
    pub edge: Option<DirectedEdge>,
    /// Cumulative distance after the step.
    pub traveled: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub route_id: String,
    pub policy: String,
    pub matcher: String,
    pub seed: u64,
    pub config: EpisodeConfig,
    pub nodes: Vec<NodeId>,
    pub outcome: Outcome,
    pub success: bool,
    pub route_length: f64,
    pub traveled: f64,
    pub final_distance_to_goal: f64,
    /// Moves made.
    pub steps: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Step(StepRecord),
    Summary(EpisodeSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub steps: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

impl TrajectoryLog {
    /// One JSON object per line: the step records, then the summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.steps {
            out.push_str(&serde_json::to_string(&LogLine::Step(r.clone())).expect("serializable"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&LogLine::Summary(self.summary.clone())).expect("serializable"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if summary.is_some() {
                return Err(NavError::Parse(format!("line {}: record after summary", i + 1)));
            }
            match serde_json::from_str(line).map_err(|e| NavError::Parse(format!("line {}: {e}", i + 1)))? {
                LogLine::Step(r) => steps.push(r),
                LogLine::Summary(s) => summary = Some(s),
            }
        }
        let summary = summary.ok_or_else(|| NavError::Parse("log has no summary record".into()))?;
        Ok(TrajectoryLog { steps, summary })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| NavError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NavError::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Bins chosen by the policy, in order.
    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().filter_map(|r| r.action_bin).collect()
    }
}

/// Live state of one episode.
#[derive(Clone)]
pub struct Episode {
    world: Arc<World>,
    route_id: String,
    spec: EpisodeSpec,
    embedded: EmbeddedInstruction,
    cfg: EpisodeConfig,
    node: NodeId,
    heading: f64,
    attention: AttentionState,
    memory: MemoryImage,
    hidden: ControllerState,
    steps: usize,
    traveled: f64,
    outcome: Outcome,
    visited: Vec<NodeId>,
    records: Vec<StepRecord>,
    policy_name: String,
    matcher_name: String,
    seed: u64,
}

impl Episode {
    /// Agent at the source, facing along the first route edge, fresh memory,
    /// attention at the first pair.
    pub fn reset(world: Arc<World>, route_id: &str, spec: EpisodeSpec, cfg: EpisodeConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = &world.graph;
        for &n in spec.route.node_ids() {
            graph.node(n)?;
        }
        let segments = spec.instruction.instruction.len();
        if segments == 0 {
            return Err(NavError::EmptyInstruction);
        }
        let truth = &spec.instruction.landmark_node_ids;
        if !truth.is_empty() && truth.len() != segments {
            return Err(NavError::InvalidInstruction(format!(
                "{} landmark ids for {segments} segment pairs",
                truth.len()
            )));
        }
        let source = spec.route.source();
        let heading = match spec.route.node_ids().get(1) {
            Some(&next) => graph
                .edge(source, next)
                .ok_or_else(|| NavError::InvalidRoute(format!("no edge {source}->{next}")))?
                .bearing,
            None => 0.0,
        };
        let embedded = world.embedder.embed_instruction(&spec.instruction.instruction);
        let memory = MemoryImage::init(graph.geo(source)?)?;
        Ok(Episode {
            route_id: route_id.to_string(),
            embedded,
            cfg,
            node: source,
            heading,
            attention: AttentionState::new(segments),
            memory,
            hidden: ControllerState::fresh(),
            steps: 0,
            traveled: 0.0,
            outcome: Outcome::Running,
            visited: vec![source],
            records: Vec::new(),
            policy_name: String::new(),
            matcher_name: String::new(),
            seed: 0,
            world,
            spec,
        })
    }

    /// Seeds the policy and records the bundle in the episode's log.
    pub fn begin(&mut self, bundle: &mut AgentBundle, seed: u64) {
        bundle.policy.begin_episode(seed);
        self.set_labels(&bundle.policy_name, &bundle.matcher_name, seed);
    }

    pub fn set_labels(&mut self, policy: &str, matcher: &str, seed: u64) {
        self.policy_name = policy.to_string();
        self.matcher_name = matcher.to_string();
        self.seed = seed;
    }

    pub fn step(&mut self, bundle: &mut AgentBundle) -> Result<StepRecord> {
        self.step_with(bundle.policy.as_mut(), &bundle.scoring)
    }

    pub fn step_with(&mut self, policy: &mut dyn Policy, scoring: &Scoring) -> Result<StepRecord> {
        if self.outcome.is_terminal() {
            return Err(NavError::EpisodeFinished);
        }
        let world = Arc::clone(&self.world);
        let graph = &world.graph;
        let start_node = self.node;
        let eta = self.attention.eta;

        let s = self.scores(scoring)?;
        let (phi, hidden) = scoring.controller.step(s, self.hidden);
        self.hidden = hidden;
        let mut record = StepRecord {
            step: self.records.len(),
            node: start_node,
            eta,
            s1: s.s1,
            s2: s.s2,
            phi,
            eta_after: eta,
            fused: None,
            action_bin: None,
            edge: None,
            traveled: self.traveled,
            outcome: Outcome::Running,
        };

        if phi {
            self.attention = self.attention.advance(true)?;
            self.memory.reset_at_landmark(graph.geo(start_node)?)?;
            record.eta_after = self.attention.eta;
            if self.attention.is_exhausted() {
                self.outcome = if self.distance_to_goal() <= self.cfg.dest_threshold {
                    Outcome::Success
                } else {
                    Outcome::WrongStop
                };
                return Ok(self.finish_record(record));
            }
        }

        if self.steps + 1 > self.cfg.max_steps {
            self.outcome = Outcome::Budget;
            return Ok(self.finish_record(record));
        }

        let (landmark, direction) = attend(&self.embedded, self.attention.eta, self.cfg.normalize_attention);
        let mem_feature = scoring.featurizer.featurize(&self.memory);
        let ctx = PolicyContext {
            graph,
            node: self.node,
            heading: self.heading,
            eta: self.attention.eta,
            route: &self.spec.route,
        };
        let ae = policy.act_visual(&ctx, world.features.get(self.node), &landmark)?;
        let am = policy.act_memory(&ctx, &mem_feature, &direction)?;
        let ae = ActionDistribution::new(ae.0)?;
        let am = ActionDistribution::new(am.0)?;
        let fused = fuse(&ae, &am, scoring.weighting.weights(s))?;
        let bin = fused.argmax();
        let edge = select_edge(graph, self.node, bin_center(bin), self.heading)?;

        self.node = edge.to;
        self.heading = edge.bearing;
        self.traveled += edge.length;
        self.steps += 1;
        self.memory.append(graph.geo(edge.to)?)?;
        self.visited.push(edge.to);

        if self.traveled > self.budget() {
            self.outcome = Outcome::Budget;
        }
        record.fused = Some(*fused.probs());
        record.action_bin = Some(bin);
        record.edge = Some(edge);
        Ok(self.finish_record(record))
    }

    /// Takes the next step only if it ends before the policy would be asked
    /// for an action: a stop, or an exhausted step budget. Used to close out
    /// human-driven episodes without a further click.
    pub fn step_without_action(&mut self, scoring: &Scoring) -> Result<Option<StepRecord>> {
        if self.outcome.is_terminal() {
            return Ok(None);
        }
        let mut probe = self.clone();
        match probe.step_with(&mut NoAction, scoring) {
            Ok(record) => {
                *self = probe;
                Ok(Some(record))
            }
            Err(NavError::ActionRequired) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn scores(&self, scoring: &Scoring) -> Result<ScoreFeature> {
        let (landmark, direction) = attend(&self.embedded, self.attention.eta, self.cfg.normalize_attention);
        let aimed = self
            .spec
            .instruction
            .landmark_node_ids
            .get(self.attention.aimed_pair() - 1)
            .copied();
        let mem_feature = scoring.featurizer.featurize(&self.memory);
        let s1 = score_pair(
            scoring.visual.as_ref(),
            &MatchQuery {
                feature: self.world.features.get(self.node),
                segment: &landmark,
                node: self.node,
                aimed_landmark: aimed,
            },
        )?;
        let s2 = score_pair(
            scoring.memory.as_ref(),
            &MatchQuery {
                feature: &mem_feature,
                segment: &direction,
                node: self.node,
                aimed_landmark: aimed,
            },
        )?;
        Ok(ScoreFeature { s1, s2 })
    }

    fn finish_record(&mut self, mut record: StepRecord) -> StepRecord {
        record.traveled = self.traveled;
        record.outcome = self.outcome;
        self.records.push(record.clone());
        record
    }

    pub fn budget(&self) -> f64 {
        (1.0 + self.cfg.budget_fraction) * self.spec.route.total_length()
    }

    pub fn distance_to_goal(&self) -> f64 {
        let g = &self.world.graph;
        match (g.geo(self.node), g.geo(self.spec.route.destination())) {
            (Ok(a), Ok(b)) => geodesic_distance(a, b),
            _ => f64::INFINITY,
        }
    }

    pub fn log(&self) -> TrajectoryLog {
        TrajectoryLog {
            steps: self.records.clone(),
            summary: EpisodeSummary {
                route_id: self.route_id.clone(),
                policy: self.policy_name.clone(),
                matcher: self.matcher_name.clone(),
                seed: self.seed,
                config: self.cfg,
                nodes: self.visited.clone(),
                outcome: self.outcome,
                success: self.outcome == Outcome::Success,
                route_length: self.spec.route.total_length(),
                traveled: self.traveled,
                final_distance_to_goal: self.distance_to_goal(),
                steps: self.steps,
            },
        }
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn graph(&self) -> &CityGraph {
        &self.world.graph
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    pub fn route_id(&self) -> &str {
        &self.route_id
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn attention(&self) -> AttentionState {
        self.attention
    }

    pub fn memory(&self) -> &MemoryImage {
        &self.memory
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn traveled(&self) -> f64 {
        self.traveled
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_terminal()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn visited(&self) -> &[NodeId] {
        &self.visited
    }
}

/// A policy that refuses to act; see [`Episode::step_without_action`].
struct NoAction;

impl Policy for NoAction {
    fn act_visual(&mut self, _: &PolicyContext<'_>, _: &[f64], _: &[f64]) -> Result<ActionDistribution> {
        Err(NavError::ActionRequired)
    }

    fn act_memory(&mut self, _: &PolicyContext<'_>, _: &[f64], _: &[f64]) -> Result<ActionDistribution> {
        Err(NavError::ActionRequired)
    }
}

/// Runs an episode to its end.
pub fn run_episode(
    world: Arc<World>,
    route_id: &str,
    spec: &EpisodeSpec,
    bundle: &mut AgentBundle,
    cfg: EpisodeConfig,
    seed: u64,
) -> Result<TrajectoryLog> {
    let mut ep = Episode::reset(world, route_id, spec.clone(), cfg)?;
    ep.begin(bundle, seed);
    while !ep.is_finished() {
        ep.step(bundle)?;
    }
    Ok(ep.log())
}

/// Structural checks that need only the graph: every move follows an edge,
/// distances add up, and the summary agrees with the records.
pub fn validate_log(graph: &CityGraph, log: &TrajectoryLog) -> Result<()> {
    let bad = |msg: String| Err(NavError::ReplayMismatch(msg));
    let nodes = &log.summary.nodes;
    if nodes.is_empty() {
        return bad("empty node sequence".into());
    }
    let mut traveled = 0.0;
    for w in nodes.windows(2) {
        match graph.edge(w[0], w[1]) {
            Some(e) => traveled += e.length,
            None => return bad(format!("{} -> {} is not an edge", w[0], w[1])),
        }
    }
    let mut at = nodes[0];
    let mut moves = 0;
    for r in &log.steps {
        if r.node != at {
            return bad(format!("step {} starts at {} but agent is at {at}", r.step, r.node));
        }
        if let Some(e) = r.edge {
            if e.from != at {
                return bad(format!("step {} moves from {} while at {at}", r.step, e.from));
            }
            at = e.to;
            moves += 1;
        }
    }
    if moves != log.summary.steps || moves + 1 != nodes.len() || at != *nodes.last().unwrap() {
        return bad("records disagree with summary node sequence".into());
    }
    if (traveled - log.summary.traveled).abs() > 1e-9 * traveled.max(1.0) {
        return bad(format!("traveled {} but edges sum to {traveled}", log.summary.traveled));
    }
    if log.summary.success && log.summary.final_distance_to_goal > log.summary.config.dest_threshold {
        return bad("success reported outside the destination threshold".into());
    }
    Ok(())
}

/// Re-runs the logged actions through the engine with the logged matcher
/// setup and checks that the same trajectory comes out.
pub fn replay(world: Arc<World>, spec: &EpisodeSpec, log: &TrajectoryLog, registry: &Registry) -> Result<TrajectoryLog> {
    validate_log(&world.graph, log)?;
    let s = &log.summary;
    let scoring = registry.scoring(&s.matcher)?;
    let mut policy = ScriptedPolicy::new(log.actions());
    let mut ep = Episode::reset(world, &s.route_id, spec.clone(), s.config)?;
    ep.set_labels(&s.policy, &s.matcher, s.seed);
    while !ep.is_finished() && ep.records().len() < log.steps.len() {
        ep.step_with(&mut policy, &scoring)?;
    }
    let again = ep.log();

    // fused distributions depend on the original policy's full output, which
    // the log reduces to the chosen bin
    let strip = |r: &StepRecord| StepRecord { fused: None, ..r.clone() };
    if again.steps.len() != log.steps.len() {
        return Err(NavError::ReplayMismatch(format!(
            "replay took {} steps, log has {}",
            again.steps.len(),
            log.steps.len()
        )));
    }
    for (a, b) in again.steps.iter().zip(&log.steps) {
        if strip(a) != strip(b) {
            return Err(NavError::ReplayMismatch(format!("step {} differs: {a:?} vs {b:?}", b.step)));
        }
    }
    if again.summary != log.summary {
        return Err(NavError::ReplayMismatch("summary differs".into()));
    }
    Ok(again)
}
