//! Seeded scenarios, closed-loop episodes, policy evaluation, budget sweeps
//! and run-directory output.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, ScenarioKind};
use crate::error::{Error, Result};
use crate::kinematics::{Intention, JointAction, VehicleKind};
use crate::metrics::{
    aggregate, compute_metrics, write_rows, AggregateReport, EventKind, EventRow, MetricsReport, StepRow,
    TrajectoryLog,
};
use crate::planner::{derive_seed, plan, SearchConfig};
use crate::rewards::{total_reward, RewardKind, RewardVariant};
use crate::sim::{step, WorldState};

/// Initial world for `seed`. The fixed scenario places its vehicles at
/// random lanes and positions with at least `min_spawn_gap_m` of clear road
/// between bumpers; the spawning scenario starts empty.
pub fn build_scenario(cfg: &Config, seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let mut world = WorldState::new(cfg.geometry.clone(), cfg.limits, cfg.dt_s, seed);
    if cfg.scenario.kind == ScenarioKind::Spawning {
        return Ok(world);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5ce7a));
    let len = cfg.limits.vehicle_length_m;
    let clearance = len + cfg.spawn.min_spawn_gap_m;
    let kinds = std::iter::repeat_n(VehicleKind::Cav, cfg.scenario.initial_cavs)
        .chain(std::iter::repeat_n(VehicleKind::Hdv, cfg.scenario.initial_hdvs));
    for kind in kinds {
        let mut placed = false;
        for _ in 0..10_000 {
            let lane = rng.random_range(0..cfg.geometry.lane_count);
            let x = rng.random_range(0.0..=cfg.scenario.spawn_x_max_m);
            let clear = world
                .vehicles
                .iter()
                .all(|v| v.lane != lane || (v.x_m - x).abs() >= clearance);
            if clear {
                let v0 = rng.random_range(cfg.spawn.v0_min..=cfg.spawn.v0_max);
                let intention = Intention::ALL[rng.random_range(0..3)];
                world.add_vehicle(kind, x, lane, v0, intention);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ConfigInvariant(
                "initial vehicles do not fit in the placement zone".into(),
            ));
        }
    }
    Ok(world)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub variant: RewardKind,
    pub budget: usize,
    pub steps: u64,
    pub report: MetricsReport,
    #[serde(skip)]
    pub log: TrajectoryLog,
}

fn kind_str(kind: VehicleKind) -> String {
    kind.as_str().to_string()
}

/// Plans, steps and re-plans every `dt` until the time limit, or, in the
/// fixed scenario, until no CAV is left.
pub fn run_episode(cfg: &Config, kind: RewardKind, budget: usize, seed: u64) -> Result<EpisodeResult> {
    let mut world = build_scenario(cfg, seed)?;
    let spawn = cfg.lookahead_spawn();
    let models = cfg.models();
    let mut variant = RewardVariant::new(kind, cfg.beta);
    let mut log = TrajectoryLog::default();
    let max_steps = (cfg.scenario.episode_time_s / cfg.dt_s).round().max(1.0) as u64;
    let mut k = 0u64;
    loop {
        let ids = world.cav_ids();
        let ja = if ids.is_empty() {
            JointAction::new()
        } else {
            let search = SearchConfig {
                budget,
                determinization_seed_base: derive_seed(seed, k),
                ..cfg.search
            };
            plan(&world, &search, &mut variant, &models)?.action
        };
        let out = step(&world, &ja, &spawn, &cfg.hdv)?;
        let breakdown = total_reward(&world, &out, &ja, &cfg.reward, &mut variant)?;
        k += 1;
        let next = &out.next_state;
        let t = k as f64 * cfg.dt_s;

        let kind_of = |id| {
            world
                .vehicle(id)
                .or_else(|| next.vehicle(id))
                .map(|v| kind_str(v.kind))
                .unwrap_or_default()
        };
        let event = |event, id: crate::kinematics::VehicleId| EventRow {
            step: k,
            t,
            event,
            id: id.0,
            kind: kind_of(id),
            other: None,
            other_kind: None,
            success: None,
        };
        for &(a, b) in &out.collisions {
            log.events.push(EventRow {
                other: Some(b.0),
                other_kind: Some(kind_of(b)),
                ..event(EventKind::Collision, a)
            });
        }
        for &(id, success) in &out.despawned {
            log.events.push(EventRow {
                success: Some(success),
                ..event(EventKind::Exit, id)
            });
        }
        for v in &next.vehicles {
            if let Some(prev) = world.vehicle(v.id) {
                if prev.lane != v.lane {
                    log.events.push(event(EventKind::LaneChange, v.id));
                }
            }
        }
        for &id in &out.spawned {
            log.events.push(event(EventKind::Spawn, id));
        }

        for (v, safety) in next.vehicles.iter().zip(&breakdown.per_vehicle) {
            let cav = breakdown.per_cav.iter().find(|c| c.id == v.id);
            let action = ja.get(v.id);
            log.steps.push(StepRow {
                step: k,
                t,
                id: v.id.0,
                kind: kind_str(v.kind),
                lane: v.lane,
                x: v.x_m,
                v_x: v.v_x,
                a_x: v.a_x,
                lat_action: action.map(|a| a.lateral.code().to_string()).unwrap_or_default(),
                long_action: action.map(|a| a.longitudinal.code().to_string()).unwrap_or_default(),
                r_trd: cav.map(|c| c.r_trd),
                r_arg: cav.map(|c| c.r_arg),
                r_freq: cav.map(|c| c.r_freq),
                r_safe_j: safety.r_safe,
                ttc: safety.ttc,
            });
        }

        world = out.next_state;
        let done_fixed = cfg.scenario.kind == ScenarioKind::Fixed && world.cav_count() == 0;
        if done_fixed || k >= max_steps {
            break;
        }
    }
    let t = k as f64 * cfg.dt_s;
    for v in world.vehicles.iter().filter(|v| v.is_cav()) {
        log.events.push(EventRow {
            step: k,
            t,
            event: EventKind::Timeout,
            id: v.id.0,
            kind: kind_str(v.kind),
            other: None,
            other_kind: None,
            success: None,
        });
    }
    log.events.push(EventRow {
        step: k,
        t,
        event: EventKind::End,
        id: 0,
        kind: String::new(),
        other: None,
        other_kind: None,
        success: None,
    });
    let report = compute_metrics(&log, log.horizon_s(), &cfg.ats)?;
    Ok(EpisodeResult {
        seed,
        variant: kind,
        budget,
        steps: k,
        report,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub variant: RewardKind,
    pub budget: usize,
    pub episodes: Vec<EpisodeResult>,
    pub aggregate: AggregateReport,
}

/// One closed-loop episode per seed, run in parallel and reported in seed
/// order.
pub fn evaluate_policy(cfg: &Config, kind: RewardKind, budget: usize, seeds: &[u64]) -> Result<PolicyEvaluation> {
    if seeds.is_empty() {
        return Err(Error::contract("evaluate_policy needs at least one episode"));
    }
    let episodes = seeds
        .par_iter()
        .map(|&s| run_episode(cfg, kind, budget, s))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = episodes.iter().map(|e| e.report.clone()).collect();
    Ok(PolicyEvaluation {
        variant: kind,
        budget,
        aggregate: aggregate(&reports),
        episodes,
    })
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub budget: usize,
    pub seed: u64,
    pub ats: f64,
    pub inst_flow: f64,
    pub avg_velocity: f64,
    pub avg_min_ttc: f64,
    pub collisions_per_hour: f64,
    pub success_rate: Option<f64>,
    pub avg_abs_jerk: f64,
    pub avg_lc_interval: Option<f64>,
    pub collisions: usize,
    pub exits: usize,
    pub steps: u64,
}

impl SweepRow {
    pub fn from_episode(e: &EpisodeResult) -> Self {
        let r = &e.report;
        SweepRow {
            variant: e.variant.as_str().to_string(),
            budget: e.budget,
            seed: e.seed,
            ats: r.ats,
            inst_flow: r.inst_flow,
            avg_velocity: r.avg_velocity,
            avg_min_ttc: r.avg_min_ttc,
            collisions_per_hour: r.collisions_per_hour,
            success_rate: r.success_rate,
            avg_abs_jerk: r.avg_abs_jerk,
            avg_lc_interval: r.avg_lc_interval,
            collisions: r.collisions,
            exits: r.exits,
            steps: e.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub variant: String,
    pub budget: usize,
    pub episodes: usize,
    pub mean_ats: f64,
    pub std_ats: f64,
    pub mean_collisions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryRow>,
}

impl SweepTable {
    /// Per-seed ATS of one cell, in seed order.
    pub fn ats(&self, kind: RewardKind, budget: usize) -> Vec<f64> {
        self.column(kind, budget, |r| r.ats)
    }

    pub fn collisions(&self, kind: RewardKind, budget: usize) -> Vec<f64> {
        self.column(kind, budget, |r| r.collisions as f64)
    }

    pub fn column(&self, kind: RewardKind, budget: usize, f: impl Fn(&SweepRow) -> f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.variant == kind.as_str() && r.budget == budget)
            .map(f)
            .collect()
    }

    pub fn mean_ats(&self, kind: RewardKind, budget: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.variant == kind.as_str() && s.budget == budget)
            .map(|s| s.mean_ats)
    }
}

/// Evaluates every `(variant, budget)` cell on the same seeds. Cells run in
/// parallel; rows come back ordered by variant, budget, seed.
pub fn budget_sweep(cfg: &Config, budgets: &[usize], variants: &[RewardKind], seeds: &[u64]) -> Result<SweepTable> {
    if budgets.is_empty() || budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("budgets must be non-empty and strictly increasing"));
    }
    if seeds.is_empty() {
        return Err(Error::contract("a sweep needs at least one seed"));
    }
    let cells: Vec<(RewardKind, usize, u64)> = variants
        .iter()
        .flat_map(|&v| budgets.iter().flat_map(move |&b| seeds.iter().map(move |&s| (v, b, s))))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(v, b, s)| run_episode(cfg, v, b, s).map(|e| SweepRow::from_episode(&e)))
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for &v in variants {
        for &b in budgets {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.variant == v.as_str() && r.budget == b).collect();
            let ats: Vec<f64> = cell.iter().map(|r| r.ats).collect();
            let coll: Vec<f64> = cell.iter().map(|r| r.collisions as f64).collect();
            let a = crate::metrics::MeanStd::of(&ats).expect("seeds non-empty");
            let c = crate::metrics::MeanStd::of(&coll).expect("seeds non-empty");
            summary.push(SweepSummaryRow {
                variant: v.as_str().to_string(),
                budget: b,
                episodes: cell.len(),
                mean_ats: a.mean,
                std_ats: a.std,
                mean_collisions: c.mean,
            });
        }
    }
    Ok(SweepTable { rows, summary })
}

pub fn seed_list(first: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| first.wrapping_add(i)).collect()
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes the resolved config and the seed manifest.
pub fn write_provenance(dir: &Path, cfg: &Config, seeds: &[u64]) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("config.txt"), &cfg.emit())?;
    let manifest: String = seeds.iter().map(|s| format!("{s}\n")).collect();
    write_text(&dir.join("seeds.txt"), &manifest)
}

/// Writes one complete episode run directory.
pub fn write_episode_dir(dir: &Path, cfg: &Config, episode: &EpisodeResult) -> Result<()> {
    write_provenance(dir, cfg, &[episode.seed])?;
    episode.log.write_csv(&dir.join("steps.csv"), &dir.join("events.csv"))?;
    write_json(&dir.join("metrics.json"), &episode.report)
}

pub fn write_sweep(dir: &Path, cfg: &Config, seeds: &[u64], table: &SweepTable) -> Result<()> {
    write_provenance(dir, cfg, seeds)?;
    write_rows(&dir.join("sweep.csv"), &table.rows)?;
    write_rows(&dir.join("sweep_summary.csv"), &table.summary)?;
    write_json(&dir.join("metrics.json"), &table.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> Config {
        let mut c = Config::default();
        c.scenario.episode_time_s = 2.0;
        c.search.rollout_horizon = 5;
        c
    }

    #[test]
    fn fixed_scenario_population() {
        let c = Config::default();
        let w = build_scenario(&c, 5).unwrap();
        assert_eq!(w.cav_count(), 4);
        assert_eq!(w.vehicles.len(), 10);
        w.check_invariants().unwrap();
        for v in &w.vehicles {
            assert!(v.x_m >= 0.0 && v.x_m <= 120.0);
            assert!((8.0..=12.0).contains(&v.v_x));
        }
        for (i, a) in w.vehicles.iter().enumerate() {
            for b in &w.vehicles[i + 1..] {
                assert!(a.lane != b.lane || (a.x_m - b.x_m).abs() >= 15.0);
            }
        }
        assert_eq!(build_scenario(&c, 5).unwrap().vehicles, w.vehicles);
    }

    #[test]
    fn episode_is_deterministic_and_logged() {
        let c = quick();
        let a = run_episode(&c, RewardKind::Hdr, 10, 3).unwrap();
        let b = run_episode(&c, RewardKind::Hdr, 10, 3).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.log, b.log);
        assert_eq!(a.steps, 20);
        assert!(a.log.steps.iter().all(|r| r.kind != "CAV" || r.r_trd.is_some()));
        assert!(a.log.events.iter().any(|e| e.event == EventKind::End));
        assert!((a.report.horizon_s - 2.0).abs() < 1e-9);
    }

    #[test]
    fn no_cav_spawning_run_reports_absent_success() {
        let mut c = quick();
        c.scenario.kind = ScenarioKind::Spawning;
        c.spawn.cav_fraction = 0.0;
        c.spawn.arrival_rate_per_lane = 2.0;
        let e = run_episode(&c, RewardKind::Gnr, 5, 1).unwrap();
        assert_eq!(e.report.success_rate, None);
    }

    #[test]
    fn sweep_shapes_and_ordering() {
        let c = quick();
        let t = budget_sweep(&c, &[2, 4], &[RewardKind::Hdr, RewardKind::Gnr], &[1, 2]).unwrap();
        assert_eq!(t.rows.len(), 8);
        assert_eq!(t.summary.len(), 4);
        assert_eq!(t.ats(RewardKind::Gnr, 4).len(), 2);
        assert!(budget_sweep(&c, &[4, 2], &[RewardKind::Hdr], &[1]).is_err());
        let single = budget_sweep(&c, &[3], &[RewardKind::Cth], &[9]).unwrap();
        assert_eq!(single.summary.len(), 1);
    }

    #[test]
    fn evaluation_requires_episodes() {
        assert!(evaluate_policy(&quick(), RewardKind::Hdr, 5, &[]).is_err());
    }
}
