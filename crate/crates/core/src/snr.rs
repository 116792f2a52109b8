//! Reward signal diagnostics: how far apart the nine actions score from
//! one state, and per-action reward surfaces over the road.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    DiscreteAction, Intention, JointAction, KinematicLimits, Lateral, Longitudinal, RoadGeometry, VehicleKind,
    VehicleState,
};
use crate::rewards::{
    potential_at, potential_gradient_at, total_reward, CavReward, RewardKind, RewardParams, RewardVariant,
};
use crate::sim::{step, HdvParams, SpawnConfig, WorldState};

/// Samples reachable single-CAV states from a seeded random-action rollout.
/// A state is kept only when every CAV action leaves the CAV on the road
/// and collision-free after one step.
pub fn sample_probe_states(
    seed: u64,
    count: usize,
    geometry: &RoadGeometry,
    limits: &KinematicLimits,
    hdv: &HdvParams,
) -> Result<Vec<WorldState>> {
    let spawn = SpawnConfig {
        arrival_rate_per_lane: 0.15,
        cav_fraction: 0.3,
        max_cavs: 1,
        ..SpawnConfig::default()
    };
    let mut world = WorldState::new(geometry.clone(), *limits, 0.1, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x009b_0be5);
    let mut out = Vec::with_capacity(count);
    let max_steps = 400 * count.max(1) + 2_000;
    for k in 0..max_steps {
        if out.len() >= count {
            break;
        }
        let ids = world.cav_ids();
        if ids.len() == 1 && k % 5 == 0 && probe_is_clean(&world, hdv)? {
            out.push(world.clone());
        }
        let mut ja = JointAction::new();
        for id in ids {
            ja.insert(id, DiscreteAction::from_index(rng.random_range(0..DiscreteAction::COUNT)));
        }
        world = step(&world, &ja, &spawn, hdv)?.next_state;
    }
    Ok(out)
}

fn probe_is_clean(world: &WorldState, hdv: &HdvParams) -> Result<bool> {
    let id = world.cav_ids()[0];
    for a in DiscreteAction::all() {
        let out = step(world, &JointAction::uniform([id], a), &SpawnConfig::disabled(), hdv)?;
        if out.next_state.vehicle(id).is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub p5: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    /// Nearest-rank percentiles.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Summary {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p5: rank(0.05),
            p95: rank(0.95),
            min: v[0],
            max: v[v.len() - 1],
            n: v.len(),
        })
    }
}

/// Per-state gaps for one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateGaps {
    /// Max pairwise difference of the per-CAV reward term over all nine actions.
    pub max_term_gap: f64,
    /// Same over the composite reward.
    pub max_total_gap: f64,
    /// Max term difference between adjacent longitudinal actions at a fixed
    /// lateral action.
    pub max_longitudinal_gap: f64,
    /// Smallest term difference AC minus DC over the lateral actions.
    pub min_accel_decel_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantGaps {
    pub kind: RewardKind,
    pub per_state: Vec<StateGaps>,
    pub term_gap: Option<Summary>,
    pub total_gap: Option<Summary>,
    pub longitudinal_gap: Option<Summary>,
    pub accel_decel_gap: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub states: usize,
    pub variants: Vec<VariantGaps>,
}

impl ProbeReport {
    pub fn variant(&self, kind: RewardKind) -> Option<&VariantGaps> {
        self.variants.iter().find(|v| v.kind == kind)
    }
}

/// Difference of two per-CAV terms, taken component by component.
fn term_difference(a: &CavReward, b: &CavReward, kind: RewardKind, p: &RewardParams) -> f64 {
    let score = if kind.uses_differential() {
        p.w_trd * (a.r_trd - b.r_trd) + p.w_arg * (a.r_arg - b.r_arg)
    } else {
        a.phi_next - b.phi_next
    };
    p.w_hdr * score + p.w_freq * (a.r_freq - b.r_freq)
}

fn state_gaps(world: &WorldState, kind: RewardKind, p: &RewardParams, hdv: &HdvParams) -> Result<StateGaps> {
    let ids = world.cav_ids();
    if ids.len() != 1 {
        return Err(Error::contract(format!("probe states need exactly one CAV, found {}", ids.len())));
    }
    let id = ids[0];
    let mut terms = Vec::with_capacity(DiscreteAction::COUNT);
    let mut totals = Vec::with_capacity(DiscreteAction::COUNT);
    for a in DiscreteAction::all() {
        let ja = JointAction::uniform([id], a);
        let out = step(world, &ja, &SpawnConfig::disabled(), hdv)?;
        let mut variant = RewardVariant::new(kind, 0.01);
        let b = total_reward(world, &out, &ja, p, &mut variant)?;
        let cav = b
            .per_cav
            .into_iter()
            .next()
            .ok_or_else(|| Error::contract("probe CAV left the road during the probe step"))?;
        terms.push(cav);
        totals.push(b.total);
    }
    let mut max_term: f64 = 0.0;
    let mut max_total: f64 = 0.0;
    for i in 0..terms.len() {
        for j in (i + 1)..terms.len() {
            max_term = max_term.max(term_difference(&terms[i], &terms[j], kind, p).abs());
            max_total = max_total.max((totals[i] - totals[j]).abs());
        }
    }
    let at = |lat: Lateral, long: Longitudinal| &terms[DiscreteAction::new(lat, long).index()];
    let mut max_long: f64 = 0.0;
    let mut min_ad = f64::INFINITY;
    for lat in Lateral::ALL {
        let (ac, mt, dc) = (
            at(lat, Longitudinal::Accelerate),
            at(lat, Longitudinal::Maintain),
            at(lat, Longitudinal::Decelerate),
        );
        max_long = max_long
            .max(term_difference(ac, mt, kind, p).abs())
            .max(term_difference(mt, dc, kind, p).abs());
        min_ad = min_ad.min(term_difference(ac, dc, kind, p));
    }
    Ok(StateGaps {
        max_term_gap: max_term,
        max_total_gap: max_total,
        max_longitudinal_gap: max_long,
        min_accel_decel_gap: min_ad,
    })
}

/// Evaluates all nine actions one step ahead from each state under each
/// variant and summarises the inter-action reward differences.
pub fn action_gap_probe(
    states: &[WorldState],
    kinds: &[RewardKind],
    p: &RewardParams,
    hdv: &HdvParams,
) -> Result<ProbeReport> {
    let variants = kinds
        .iter()
        .map(|&kind| {
            let per_state = states
                .par_iter()
                .map(|w| state_gaps(w, kind, p, hdv))
                .collect::<Result<Vec<_>>>()?;
            let col = |f: fn(&StateGaps) -> f64| Summary::of(&per_state.iter().map(f).collect::<Vec<_>>());
            Ok(VariantGaps {
                kind,
                term_gap: col(|g| g.max_term_gap),
                total_gap: col(|g| g.max_total_gap),
                longitudinal_gap: col(|g| g.max_longitudinal_gap),
                accel_decel_gap: col(|g| g.min_accel_decel_gap),
                per_state,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport {
        states: states.len(),
        variants,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub x_cells: usize,
    pub probe_speed: f64,
    pub dt_s: f64,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        SurfaceSpec {
            x_min: 0.0,
            x_max: 250.0,
            x_cells: 51,
            probe_speed: 15.0,
            dt_s: 0.1,
        }
    }
}

/// Grids indexed `[lane][x cell]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSurface {
    pub kind: RewardKind,
    pub xs: Vec<f64>,
    pub lanes: usize,
    pub target_lane: usize,
    pub phi: Vec<Vec<f64>>,
    pub lc: Vec<Vec<f64>>,
    pub lk: Vec<Vec<f64>>,
    pub rc: Vec<Vec<f64>>,
}

impl RewardSurface {
    pub fn grid(&self, lateral: Lateral) -> &Vec<Vec<f64>> {
        match lateral {
            Lateral::ChangeLeft => &self.lc,
            Lateral::Keep => &self.lk,
            Lateral::ChangeRight => &self.rc,
        }
    }
}

/// Lane reached by a lateral action, or the same lane when the road edge
/// makes it infeasible.
pub fn landing_lane(lane: usize, lateral: Lateral, lane_count: usize) -> usize {
    match lateral {
        Lateral::ChangeLeft if lane + 1 < lane_count => lane + 1,
        Lateral::ChangeRight if lane > 0 => lane - 1,
        _ => lane,
    }
}

/// Per-CAV reward term of a right-turning probe at every `(lane, x)` cell
/// for each lateral action, holding speed.
///
/// State-based kinds score the potential of the landing cell: one lane over
/// and `probe_speed * dt` ahead. Differential kinds score the potential's
/// rate of change along the action's velocity at the current cell, with a
/// lateral speed of one lane per second.
pub fn reward_surface(
    kind: RewardKind,
    geometry: &RoadGeometry,
    spec: &SurfaceSpec,
    p: &RewardParams,
) -> Result<RewardSurface> {
    geometry.validate()?;
    if spec.x_cells < 2 || !(spec.x_min < spec.x_max) || spec.x_min < 0.0 || spec.x_max > geometry.length_m {
        return Err(Error::contract("surface grid must lie within the road"));
    }
    let target_lane = 0;
    let lanes = geometry.lane_count;
    let xs: Vec<f64> = (0..spec.x_cells)
        .map(|i| spec.x_min + (spec.x_max - spec.x_min) * i as f64 / (spec.x_cells - 1) as f64)
        .collect();
    let action = |lat| DiscreteAction::new(lat, Longitudinal::Maintain);
    let probe = |x: f64, lane: usize| {
        VehicleState::new(
            crate::kinematics::VehicleId(0),
            VehicleKind::Cav,
            x,
            lane,
            spec.probe_speed,
            Intention::Right,
            geometry,
        )
    };
    let value = |lat: Lateral, lane: usize, x: f64| -> f64 {
        let landing = landing_lane(lane, lat, lanes);
        if kind.uses_differential() {
            let dy = lane as f64 - target_lane as f64;
            let (gx, gy) = potential_gradient_at(x, dy, p);
            let v_y = landing as f64 - lane as f64;
            let arg = crate::rewards::r_arg(action(lat), &probe(x, lane), p);
            p.w_hdr * (p.w_trd * (gx * spec.probe_speed + gy * v_y) + p.w_arg * arg)
        } else {
            let x_next = x + spec.probe_speed * spec.dt_s;
            p.w_hdr * potential_at(x_next, landing as f64 - target_lane as f64, p)
        }
    };
    let grid = |lat: Lateral| -> Vec<Vec<f64>> {
        (0..lanes).map(|lane| xs.iter().map(|&x| value(lat, lane, x)).collect()).collect()
    };
    let phi = (0..lanes)
        .map(|lane| xs.iter().map(|&x| potential_at(x, lane as f64 - target_lane as f64, p)).collect())
        .collect();
    Ok(RewardSurface {
        kind,
        lc: grid(Lateral::ChangeLeft),
        lk: grid(Lateral::Keep),
        rc: grid(Lateral::ChangeRight),
        phi,
        xs,
        lanes,
        target_lane,
    })
}

/// Whether every pair of lateral actions that lands on the same lane from
/// the same `x` scores identically.
pub fn landing_cells_agree(s: &RewardSurface) -> bool {
    let mut checked = 0usize;
    for l1 in 0..s.lanes {
        for l2 in 0..s.lanes {
            for a in Lateral::ALL {
                for b in Lateral::ALL {
                    if landing_lane(l1, a, s.lanes) != landing_lane(l2, b, s.lanes) {
                        continue;
                    }
                    checked += 1;
                    if s.grid(a)[l1] != s.grid(b)[l2] {
                        return false;
                    }
                }
            }
        }
    }
    checked > 0
}

/// Whether the right-change grid strictly exceeds the left-change grid at
/// every cell above the target lane.
pub fn right_dominates_left_above_target(s: &RewardSurface) -> bool {
    (s.target_lane + 1..s.lanes).all(|lane| s.rc[lane].iter().zip(&s.lc[lane]).all(|(r, l)| r > l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::VehicleId;
    use crate::rewards::potential;

    fn probe_world(x: f64, lane: usize, v: f64) -> WorldState {
        let mut w = WorldState::new(RoadGeometry::default(), KinematicLimits::default(), 0.1, 4);
        w.add_vehicle(VehicleKind::Cav, x, lane, v, Intention::Straight);
        w
    }

    #[test]
    fn gnr_longitudinal_gap_is_tiny_and_hdr_arg_flip_is_large() {
        let p = RewardParams::default();
        let hdv = HdvParams::default();
        let w = probe_world(200.0, 1, 12.0);
        let gnr = state_gaps(&w, RewardKind::Gnr, &p, &hdv).unwrap();
        let hdr = state_gaps(&w, RewardKind::Hdr, &p, &hdv).unwrap();
        let slope_bound = 1.0 / (p.sigma * 0.5f64.exp());
        assert!(gnr.max_longitudinal_gap <= p.w_hdr * slope_bound * 0.005 + 1e-12);
        assert!(gnr.max_longitudinal_gap < 1e-3);
        assert!(hdr.min_accel_decel_gap >= p.w_hdr * p.w_arg);
    }

    #[test]
    fn identical_actions_have_zero_gap() {
        let p = RewardParams::default();
        let w = probe_world(100.0, 2, 20.0);
        let out = step(&w, &JointAction::uniform([VehicleId(0)], DiscreteAction::KEEP_MAINTAIN), &SpawnConfig::disabled(), &HdvParams::default()).unwrap();
        let mut v = RewardVariant::new(RewardKind::Hdr, 0.01);
        let ja = JointAction::uniform([VehicleId(0)], DiscreteAction::KEEP_MAINTAIN);
        let a = total_reward(&w, &out, &ja, &p, &mut v).unwrap().per_cav.remove(0);
        assert_eq!(term_difference(&a, &a, RewardKind::Hdr, &p), 0.0);
        assert_eq!(term_difference(&a, &a, RewardKind::Gnr, &p), 0.0);
    }

    #[test]
    fn probe_rejects_multi_cav_states() {
        let mut w = probe_world(100.0, 2, 20.0);
        w.add_vehicle(VehicleKind::Cav, 150.0, 1, 20.0, Intention::Straight);
        assert!(state_gaps(&w, RewardKind::Hdr, &RewardParams::default(), &HdvParams::default()).is_err());
    }

    #[test]
    fn sampled_probe_states_are_single_cav_and_deterministic() {
        let g = RoadGeometry::default();
        let k = KinematicLimits::default();
        let h = HdvParams::default();
        let a = sample_probe_states(3, 20, &g, &k, &h).unwrap();
        let b = sample_probe_states(3, 20, &g, &k, &h).unwrap();
        assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cav_count(), 1);
            assert_eq!(x.vehicles, y.vehicles);
        }
    }

    #[test]
    fn surface_phi_matches_potential_pointwise() {
        let p = RewardParams::default();
        let g = RoadGeometry::default();
        let s = reward_surface(RewardKind::Gnr, &g, &SurfaceSpec::default(), &p).unwrap();
        for lane in 0..s.lanes {
            for (i, &x) in s.xs.iter().enumerate() {
                let v = VehicleState::new(VehicleId(0), VehicleKind::Cav, x, lane, 0.0, Intention::Right, &g);
                assert!((s.phi[lane][i] - potential(&v, &p)).abs() < 1e-12);
            }
        }
        let peak = s.phi[0][s.xs.len() - 1];
        assert_eq!(peak, 1.0);
        assert!(s.phi.iter().flatten().all(|&x| x <= peak));
    }

    #[test]
    fn gnr_left_then_keep_agree() {
        let p = RewardParams::default();
        let s = reward_surface(RewardKind::Gnr, &RoadGeometry::default(), &SurfaceSpec::default(), &p).unwrap();
        assert_eq!(s.lc[1], s.lk[2]);
        assert_eq!(s.rc[2], s.lk[1]);
        assert!(landing_cells_agree(&s));
    }

    #[test]
    fn hdr_right_dominates_left() {
        let p = RewardParams::default();
        let s = reward_surface(RewardKind::Hdr, &RoadGeometry::default(), &SurfaceSpec::default(), &p).unwrap();
        assert!(right_dominates_left_above_target(&s));
        assert!(!landing_cells_agree(&s));
        assert_eq!(s.rc[0], s.lc[0]);
    }

    #[test]
    fn surface_rejects_off_road_grid() {
        let spec = SurfaceSpec {
            x_max: 400.0,
            ..SurfaceSpec::default()
        };
        assert!(reward_surface(RewardKind::Hdr, &RoadGeometry::default(), &spec, &RewardParams::default()).is_err());
    }

    #[test]
    fn summary_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = Summary::of(&v).unwrap();
        assert_eq!((s.p5, s.p95, s.min, s.max), (5.0, 95.0, 1.0, 100.0));
        assert!(Summary::of(&[]).is_none());
    }
}
