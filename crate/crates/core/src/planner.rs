//! Centralized UCT search over joint CAV actions.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{DiscreteAction, JointAction, Lateral, Longitudinal, VehicleId};
use crate::rewards::{total_reward_fast, RewardParams, RewardVariant};
use crate::sim::{step, HdvParams, SpawnConfig, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RolloutPolicy {
    UniformRandom,
    /// Head for the target lane, accelerate until the speed threshold.
    GreedyArg,
}

impl RolloutPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            RolloutPolicy::UniformRandom => "uniform_random",
            RolloutPolicy::GreedyArg => "greedy_arg",
        }
    }
}

impl FromStr for RolloutPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform_random" => Ok(RolloutPolicy::UniformRandom),
            "greedy_arg" => Ok(RolloutPolicy::GreedyArg),
            other => Err(Error::ConfigInvariant(format!("unknown rollout policy '{other}'"))),
        }
    }
}

impl fmt::Display for RolloutPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Simulations per decision.
    pub budget: usize,
    pub uct_c: f64,
    /// Rollout steps after the expanded node.
    pub rollout_horizon: usize,
    pub discount: f64,
    pub rollout_policy: RolloutPolicy,
    pub determinization_seed_base: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 200,
            uct_c: 1.41,
            rollout_horizon: 30,
            discount: 0.996,
            rollout_policy: RolloutPolicy::UniformRandom,
            determinization_seed_base: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::ConfigInvariant("budget must be >= 1".into()));
        }
        if self.rollout_horizon < 1 {
            return Err(Error::ConfigInvariant("rollout_horizon must be >= 1".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::ConfigInvariant("discount must lie in (0, 1]".into()));
        }
        if !(self.uct_c >= 0.0 && self.uct_c.is_finite()) {
            return Err(Error::ConfigInvariant("uct_c must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the lookahead model needs besides the world itself.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlannerModels {
    pub reward: RewardParams,
    pub hdv: HdvParams,
    pub spawn: SpawnConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeStats {
    pub visits: u64,
    pub value_sum: f64,
}

impl EdgeStats {
    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

/// One decision point in the tree. Children are keyed by the joint-action
/// index over `cav_ids`.
#[derive(Debug, Clone)]
pub struct SearchNode {
    pub cav_ids: Vec<VehicleId>,
    pub visits: u64,
    pub edges: Vec<(u64, EdgeStats, Option<usize>)>,
    untried: Option<Vec<u64>>,
    pub action_count: u64,
}

impl SearchNode {
    fn new(cav_ids: Vec<VehicleId>) -> Self {
        let action_count = (DiscreteAction::COUNT as u64).pow(cav_ids.len() as u32);
        SearchNode {
            cav_ids,
            visits: 1,
            edges: Vec::new(),
            untried: None,
            action_count,
        }
    }

    fn has_untried(&self) -> bool {
        match &self.untried {
            None => self.action_count > 0,
            Some(u) => !u.is_empty(),
        }
    }

    fn pop_untried(&mut self, rng: &mut ChaCha8Rng) -> u64 {
        let count = self.action_count;
        let untried = self.untried.get_or_insert_with(|| {
            let mut all: Vec<u64> = (0..count).collect();
            all.shuffle(rng);
            all
        });
        untried.pop().expect("caller checked for untried actions")
    }

    fn select_uct(&self, c: f64) -> usize {
        let ln_n = (self.visits as f64).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        let mut best_index = u64::MAX;
        for (k, (index, stats, _)) in self.edges.iter().enumerate() {
            let n = stats.visits as f64;
            let score = stats.value_sum / n + c * (ln_n / n).sqrt();
            if score > best_score || (score == best_score && *index < best_index) {
                best = k;
                best_score = score;
                best_index = *index;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootEdge {
    pub index: u64,
    pub action: JointAction,
    pub visits: u64,
    pub mean_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub action: JointAction,
    pub root_visits: u64,
    pub node_count: usize,
    /// Root edges sorted by action index.
    pub root_edges: Vec<RootEdge>,
}

/// Search tree plus the bookkeeping of one `plan` call, kept for inspection.
#[derive(Debug, Clone)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
}

impl SearchTree {
    /// Checks `N = 1 + sum N(a)` at every node.
    pub fn visits_conserved(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.visits == 1 + n.edges.iter().map(|e| e.1.visits).sum::<u64>())
    }

    pub fn all_values_finite(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.edges.iter().all(|e| e.1.value_sum.is_finite()))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes two words into a seed; used to derive independent streams.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

fn rollout_action(world: &WorldState, policy: RolloutPolicy, params: &RewardParams, rng: &mut ChaCha8Rng) -> JointAction {
    let mut ja = JointAction::new();
    for v in world.vehicles.iter().filter(|v| v.is_cav()) {
        let action = match policy {
            RolloutPolicy::UniformRandom => DiscreteAction::from_index(rng.random_range(0..DiscreteAction::COUNT)),
            RolloutPolicy::GreedyArg => {
                let lateral = if v.lc_in_progress.is_some() || v.lane == v.y_targ_lane {
                    Lateral::Keep
                } else if v.lane > v.y_targ_lane {
                    Lateral::ChangeRight
                } else {
                    Lateral::ChangeLeft
                };
                let longitudinal = if v.v_x >= params.v_thres {
                    Longitudinal::Maintain
                } else {
                    Longitudinal::Accelerate
                };
                DiscreteAction::new(lateral, longitudinal)
            }
        };
        ja.insert(v.id, action);
    }
    ja
}

struct Searcher<'a> {
    cfg: &'a SearchConfig,
    models: &'a PlannerModels,
    nodes: Vec<SearchNode>,
    expand_rng: ChaCha8Rng,
}

impl Searcher<'_> {
    fn transition(
        &self,
        world: &WorldState,
        ja: &JointAction,
        variant: &mut RewardVariant,
    ) -> Result<(WorldState, f64)> {
        let out = step(world, ja, &self.models.spawn, &self.models.hdv)?;
        let r = total_reward_fast(world, &out, ja, &self.models.reward, variant);
        Ok((out.next_state, r))
    }

    fn rollout(
        &self,
        mut world: WorldState,
        variant: &mut RewardVariant,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let mut ret = 0.0;
        let mut discount = 1.0;
        for _ in 0..self.cfg.rollout_horizon {
            if world.cav_count() == 0 {
                break;
            }
            let ja = rollout_action(&world, self.cfg.rollout_policy, &self.models.reward, rng);
            let (next, r) = self.transition(&world, &ja, variant)?;
            ret += discount * r;
            discount *= self.cfg.discount;
            world = next;
        }
        Ok(ret)
    }

    fn simulate(&mut self, root: &WorldState, i: u64, variant: &mut RewardVariant) -> Result<()> {
        let seed = self.cfg.determinization_seed_base.wrapping_add(i);
        let mut world = root.clone();
        world.reseed(seed);
        let mut rollout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5eed));

        // (node, edge slot, reward) along the selected path.
        let mut path: Vec<(usize, usize, f64)> = Vec::new();
        let mut node = 0usize;
        let mut tail = 0.0;
        loop {
            let ids = world.cav_ids();
            if ids.is_empty() || ids != self.nodes[node].cav_ids {
                break;
            }
            if self.nodes[node].has_untried() {
                let index = self.nodes[node].pop_untried(&mut self.expand_rng);
                let ja = JointAction::from_index(&ids, index);
                let (next, r) = self.transition(&world, &ja, variant)?;
                let child = self.nodes.len();
                self.nodes.push(SearchNode::new(next.cav_ids()));
                let slot = self.nodes[node].edges.len();
                self.nodes[node].edges.push((index, EdgeStats::default(), Some(child)));
                self.nodes[node].visits += 1;
                path.push((node, slot, r));
                tail = self.rollout(next, variant, &mut rollout_rng)?;
                break;
            }
            let slot = self.nodes[node].select_uct(self.cfg.uct_c);
            let (index, _, child) = self.nodes[node].edges[slot];
            let ja = JointAction::from_index(&ids, index);
            let (next, r) = self.transition(&world, &ja, variant)?;
            self.nodes[node].visits += 1;
            path.push((node, slot, r));
            world = next;
            match child {
                Some(c) => {
                    let matches = world.cav_ids() == self.nodes[c].cav_ids && !self.nodes[c].cav_ids.is_empty();
                    if !matches {
                        tail = self.rollout(world, variant, &mut rollout_rng)?;
                        break;
                    }
                    node = c;
                }
                None => {
                    tail = self.rollout(world, variant, &mut rollout_rng)?;
                    break;
                }
            }
        }

        let mut g = tail;
        for &(n, slot, r) in path.iter().rev() {
            g = r + self.cfg.discount * g;
            let stats = &mut self.nodes[n].edges[slot].1;
            stats.visits += 1;
            stats.value_sum += g;
        }
        Ok(())
    }
}

/// Runs `cfg.budget` UCT simulations from `world` and returns the most
/// visited root action together with the tree.
///
/// Simulation `i` replays HDV randomness from seed
/// `determinization_seed_base + i`. `variant` observes every simulated
/// reward, so centered variants carry their baseline across calls.
pub fn plan_with_tree(
    world: &WorldState,
    cfg: &SearchConfig,
    variant: &mut RewardVariant,
    models: &PlannerModels,
) -> Result<(SearchResult, SearchTree)> {
    cfg.validate()?;
    let ids = world.cav_ids();
    if ids.is_empty() {
        return Err(Error::contract("plan requires at least one CAV"));
    }
    let mut searcher = Searcher {
        cfg,
        models,
        nodes: vec![SearchNode::new(ids.clone())],
        expand_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.determinization_seed_base, 0xe9a4d)),
    };
    for i in 0..cfg.budget as u64 {
        searcher.simulate(world, i, variant)?;
    }

    let root = &searcher.nodes[0];
    let mut best: Option<&(u64, EdgeStats, Option<usize>)> = None;
    for e in &root.edges {
        let better = match best {
            None => true,
            Some(b) => {
                (e.1.visits, e.1.mean()) > (b.1.visits, b.1.mean())
                    || (e.1.visits == b.1.visits && e.1.mean() == b.1.mean() && e.0 < b.0)
            }
        };
        if better {
            best = Some(e);
        }
    }
    let chosen = best.expect("budget >= 1 expands one root edge").0;
    let mut root_edges: Vec<RootEdge> = root
        .edges
        .iter()
        .map(|(index, stats, _)| RootEdge {
            index: *index,
            action: JointAction::from_index(&ids, *index),
            visits: stats.visits,
            mean_value: stats.mean(),
        })
        .collect();
    root_edges.sort_by_key(|e| e.index);
    let result = SearchResult {
        action: JointAction::from_index(&ids, chosen),
        root_visits: root.visits,
        node_count: searcher.nodes.len(),
        root_edges,
    };
    Ok((result, SearchTree { nodes: searcher.nodes }))
}

pub fn plan(
    world: &WorldState,
    cfg: &SearchConfig,
    variant: &mut RewardVariant,
    models: &PlannerModels,
) -> Result<SearchResult> {
    plan_with_tree(world, cfg, variant, models).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Intention, KinematicLimits, RoadGeometry, VehicleKind};
    use crate::rewards::{total_reward, RewardKind};

    fn models() -> PlannerModels {
        PlannerModels {
            spawn: SpawnConfig::disabled(),
            ..PlannerModels::default()
        }
    }

    fn single_cav(x: f64, lane: usize, intention: Intention) -> WorldState {
        let mut w = WorldState::new(RoadGeometry::default(), KinematicLimits::default(), 0.1, 3);
        w.add_vehicle(VehicleKind::Cav, x, lane, 10.0, intention);
        w.vehicles[0].t_since_lc_s = 50.0;
        w
    }

    fn one_step_best(world: &WorldState, kind: RewardKind) -> DiscreteAction {
        let m = models();
        let id = world.vehicles[0].id;
        let mut best = (f64::NEG_INFINITY, DiscreteAction::KEEP_MAINTAIN);
        for a in DiscreteAction::all() {
            let ja = JointAction::uniform([id], a);
            let out = step(world, &ja, &m.spawn, &m.hdv).unwrap();
            let mut variant = RewardVariant::new(kind, 0.01);
            let r = total_reward(world, &out, &ja, &m.reward, &mut variant).unwrap().total;
            if r > best.0 {
                best = (r, a);
            }
        }
        best.1
    }

    #[test]
    fn empty_world_is_a_contract_violation() {
        let w = WorldState::new(RoadGeometry::default(), KinematicLimits::default(), 0.1, 0);
        let mut v = RewardVariant::new(RewardKind::Hdr, 0.01);
        assert!(plan(&w, &SearchConfig::default(), &mut v, &models()).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let w = single_cav(50.0, 1, Intention::Straight);
        let mut v = RewardVariant::new(RewardKind::Hdr, 0.01);
        let cfg = SearchConfig {
            budget: 0,
            ..SearchConfig::default()
        };
        assert!(plan(&w, &cfg, &mut v, &models()).is_err());
    }

    #[test]
    fn straight_road_prefers_acceleration() {
        let w = single_cav(100.0, 1, Intention::Straight);
        let cfg = SearchConfig {
            budget: 200,
            ..SearchConfig::default()
        };
        let mut v = RewardVariant::new(RewardKind::Hdr, 0.01);
        let r = plan(&w, &cfg, &mut v, &models()).unwrap();
        assert_eq!(r.action.get(w.vehicles[0].id).unwrap().longitudinal, Longitudinal::Accelerate);
        assert_eq!(one_step_best(&w, RewardKind::Hdr).longitudinal, Longitudinal::Accelerate);
    }

    #[test]
    fn off_target_lane_prefers_moving_right() {
        let w = single_cav(150.0, 1, Intention::Right);
        assert_eq!(w.vehicles[0].y_targ_lane, 0);
        let cfg = SearchConfig {
            budget: 500,
            ..SearchConfig::default()
        };
        let mut v = RewardVariant::new(RewardKind::Hdr, 0.01);
        let r = plan(&w, &cfg, &mut v, &models()).unwrap();
        assert_eq!(r.action.get(w.vehicles[0].id).unwrap().lateral, Lateral::ChangeRight);
        assert_eq!(one_step_best(&w, RewardKind::Hdr).lateral, Lateral::ChangeRight);
    }

    #[test]
    fn budget_one_expands_a_single_action() {
        let w = single_cav(50.0, 1, Intention::Straight);
        let cfg = SearchConfig {
            budget: 1,
            ..SearchConfig::default()
        };
        let mut a = RewardVariant::new(RewardKind::Hdr, 0.01);
        let mut b = RewardVariant::new(RewardKind::Hdr, 0.01);
        let r1 = plan(&w, &cfg, &mut a, &models()).unwrap();
        let r2 = plan(&w, &cfg, &mut b, &models()).unwrap();
        assert_eq!(r1.root_edges.len(), 1);
        assert_eq!(r1, r2);
    }

    #[test]
    fn horizon_one_large_budget_matches_one_step_oracle() {
        let w = single_cav(120.0, 2, Intention::Right);
        let cfg = SearchConfig {
            budget: 10_000,
            rollout_horizon: 1,
            ..SearchConfig::default()
        };
        let mut v = RewardVariant::new(RewardKind::Hdr, 0.01);
        // A one-step world: the single CAV leaves the road on the first step.
        let mut w1 = w.clone();
        w1.vehicles[0].x_m = 248.0;
        w1.vehicles[0].v_x = 25.0;
        let r = plan(&w1, &cfg, &mut v, &models()).unwrap();
        let oracle = one_step_best(&w1, RewardKind::Hdr);
        assert_eq!(r.action.get(w1.vehicles[0].id).unwrap(), oracle);
    }

    #[test]
    fn tree_bookkeeping_invariants() {
        let mut w = WorldState::new(RoadGeometry::default(), KinematicLimits::default(), 0.1, 9);
        w.add_vehicle(VehicleKind::Cav, 20.0, 1, 10.0, Intention::Left);
        w.add_vehicle(VehicleKind::Cav, 40.0, 2, 11.0, Intention::Right);
        w.add_vehicle(VehicleKind::Hdv, 60.0, 1, 9.0, Intention::Straight);
        let cfg = SearchConfig {
            budget: 150,
            rollout_horizon: 10,
            ..SearchConfig::default()
        };
        let mut v = RewardVariant::new(RewardKind::Gnr, 0.01);
        let (r, tree) = plan_with_tree(&w, &cfg, &mut v, &models()).unwrap();
        assert!(tree.visits_conserved());
        assert!(tree.all_values_finite());
        assert_eq!(r.root_visits, 151);
        // Per-step reward bound for 3 vehicles: the per-CAV term stays within
        // w_hdr * [0, 1] + w_freq * [-1, 0], flow within [0, 1], safety
        // within [-w_safe * 3, 0].
        let p = RewardParams::default();
        let lo_step = -p.w_freq - p.w_safe * 3.0;
        let hi_step = p.w_hdr + p.w_flow;
        let horizon = 200.0;
        for n in &tree.nodes {
            for (_, s, _) in &n.edges {
                let m = s.mean();
                assert!(m >= lo_step * horizon && m <= hi_step * horizon, "{m}");
            }
        }
    }

    #[test]
    fn plan_is_deterministic() {
        let mut w = WorldState::new(RoadGeometry::default(), KinematicLimits::default(), 0.1, 1);
        w.add_vehicle(VehicleKind::Cav, 20.0, 0, 10.0, Intention::Left);
        w.add_vehicle(VehicleKind::Hdv, 35.0, 0, 9.0, Intention::Straight);
        let cfg = SearchConfig {
            budget: 80,
            determinization_seed_base: 77,
            ..SearchConfig::default()
        };
        let mut a = RewardVariant::new(RewardKind::Cth, 0.01);
        let mut b = RewardVariant::new(RewardKind::Cth, 0.01);
        let r1 = plan(&w, &cfg, &mut a, &models()).unwrap();
        let r2 = plan(&w, &cfg, &mut b, &models()).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(a, b);
        assert_ne!(a.rho_hat, 0.0);
    }
}
