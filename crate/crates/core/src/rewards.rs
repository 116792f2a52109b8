//! Driving potential, the differential reward terms built on it, the
//! auxiliary traffic terms and the four reward variants (HDR, GNR, CTR, CTH).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{DiscreteAction, JointAction, Longitudinal, RoadGeometry, VehicleId, VehicleState};
use crate::sim::{leader_index, StepOutcome, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub gamma: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub v_thres: f64,
    pub ttc_crit: f64,
    pub lambda_lc: f64,
    pub w_trd: f64,
    pub w_arg: f64,
    pub w_hdr: f64,
    pub w_flow: f64,
    pub w_safe: f64,
    pub w_freq: f64,
    pub v_max: f64,
    /// Longitudinal goal; the road end.
    pub x_goal: f64,
    pub lane_width_m: f64,
    pub vehicle_length_m: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            gamma: 0.996,
            sigma: 60.0,
            zeta: 1.0,
            v_thres: 28.0,
            ttc_crit: 3.0,
            lambda_lc: 0.75,
            w_trd: 0.9,
            w_arg: 0.1,
            w_hdr: 10.0,
            w_flow: 1.0,
            w_safe: 2.0,
            w_freq: 0.9,
            v_max: 30.0,
            x_goal: 250.0,
            lane_width_m: 3.2,
            vehicle_length_m: 5.0,
        }
    }
}

impl RewardParams {
    /// Copies the geometry-derived fields from `geometry`.
    pub fn with_geometry(mut self, geometry: &RoadGeometry, vehicle_length_m: f64) -> Self {
        self.x_goal = geometry.length_m;
        self.lane_width_m = geometry.lane_width_m;
        self.vehicle_length_m = vehicle_length_m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if ((self.w_trd + self.w_arg) - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigInvariant(format!(
                "w_trd + w_arg must equal 1 (got {} + {})",
                self.w_trd, self.w_arg
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::ConfigInvariant("sigma must be > 0".into()));
        }
        if !(self.zeta >= 0.0) {
            return Err(Error::ConfigInvariant("zeta must be >= 0".into()));
        }
        if !(self.ttc_crit > 0.0) {
            return Err(Error::ConfigInvariant("ttc_crit must be > 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::ConfigInvariant("gamma must lie in (0, 1]".into()));
        }
        if !(self.lambda_lc >= 0.0) {
            return Err(Error::ConfigInvariant("lambda_lc must be >= 0".into()));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::ConfigInvariant("v_max must be > 0".into()));
        }
        Ok(())
    }
}

/// Potential at longitudinal position `x` with lateral offset `dy_lanes`
/// from the target lane.
pub fn potential_at(x: f64, dy_lanes: f64, p: &RewardParams) -> f64 {
    let dx = p.x_goal - x;
    (-(dx * dx) / (2.0 * p.sigma * p.sigma)).exp() / (p.zeta * dy_lanes.abs() + 1.0)
}

/// Lateral offset from the target lane, in lanes (positive = left of it).
pub fn lateral_offset(v: &VehicleState, p: &RewardParams) -> f64 {
    v.lateral_lanes(p.lane_width_m) - v.y_targ_lane as f64
}

/// Positional potential of a vehicle: a Gaussian bump at the goal divided
/// by a linear lateral-deviation penalty. Lies in (0, 1].
pub fn potential(v: &VehicleState, p: &RewardParams) -> f64 {
    potential_at(v.x_m, lateral_offset(v, p), p)
}

/// `(dphi/dx, dphi/dy)` with `y` in lanes. The lateral partial is taken as
/// zero on the target lane itself.
pub fn potential_gradient_at(x: f64, dy_lanes: f64, p: &RewardParams) -> (f64, f64) {
    let phi = potential_at(x, dy_lanes, p);
    let d_dx = phi * (p.x_goal - x) / (p.sigma * p.sigma);
    let d_dy = if dy_lanes == 0.0 {
        0.0
    } else {
        -phi * p.zeta * dy_lanes.signum() / (p.zeta * dy_lanes.abs() + 1.0)
    };
    (d_dx, d_dy)
}

pub fn potential_gradient(v: &VehicleState, p: &RewardParams) -> (f64, f64) {
    potential_gradient_at(v.x_m, lateral_offset(v, p), p)
}

/// Rate of change of the potential along the vehicle's current velocity.
pub fn r_trd(v: &VehicleState, p: &RewardParams) -> f64 {
    let (gx, gy) = potential_gradient(v, p);
    gx * v.v_x + gy * v.lateral_speed_lanes(p.lane_width_m)
}

/// Sign-of-gradient indicator: accelerating, or holding speed once fast.
pub fn r_arg(action: DiscreteAction, v: &VehicleState, p: &RewardParams) -> f64 {
    match action.longitudinal {
        Longitudinal::Accelerate => 1.0,
        Longitudinal::Maintain if v.v_x >= p.v_thres => 1.0,
        _ => 0.0,
    }
}

pub fn r_hdr(action: DiscreteAction, v: &VehicleState, p: &RewardParams) -> f64 {
    p.w_trd * r_trd(v, p) + p.w_arg * r_arg(action, v, p)
}

/// Time to collision with `leader`; infinite unless closing on a positive gap.
pub fn time_to_collision(v: &VehicleState, leader: Option<&VehicleState>, vehicle_length_m: f64) -> f64 {
    match leader {
        Some(l) => {
            let gap = l.x_m - v.x_m - vehicle_length_m;
            if v.v_x > l.v_x && gap > 0.0 {
                gap / (v.v_x - l.v_x)
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

/// Safety term for one TTC value.
pub fn r_safe_from_ttc(ttc: f64, p: &RewardParams) -> f64 {
    if ttc > 0.0 && ttc < p.ttc_crit {
        -1.0 + (1.0 / p.ttc_crit - 1.0 / ttc).exp()
    } else {
        0.0
    }
}

/// Per-vehicle safety penalty in `[-1, 0]`; `-1` for a vehicle that
/// collided this step.
pub fn r_safe_vehicle(
    v: &VehicleState,
    leader: Option<&VehicleState>,
    collided: bool,
    p: &RewardParams,
) -> f64 {
    if collided {
        return -1.0;
    }
    r_safe_from_ttc(time_to_collision(v, leader, p.vehicle_length_m), p)
}

/// Mean normalised speed over every vehicle; 0 on an empty road.
pub fn r_flow(world: &WorldState, p: &RewardParams) -> f64 {
    if world.vehicles.is_empty() {
        return 0.0;
    }
    world.vehicles.iter().map(|v| v.v_x / p.v_max).sum::<f64>() / world.vehicles.len() as f64
}

pub fn r_freq(v: &VehicleState, p: &RewardParams) -> f64 {
    -(-p.lambda_lc * v.t_since_lc_s).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewardKind {
    /// Hybrid differential reward.
    Hdr,
    /// State-based general reward.
    Gnr,
    /// GNR with a running baseline subtracted.
    Ctr,
    /// HDR with a running baseline subtracted.
    Cth,
}

impl RewardKind {
    pub const ALL: [RewardKind; 4] = [RewardKind::Hdr, RewardKind::Gnr, RewardKind::Ctr, RewardKind::Cth];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::Hdr => "HDR",
            RewardKind::Gnr => "GNR",
            RewardKind::Ctr => "CTR",
            RewardKind::Cth => "CTH",
        }
    }

    pub fn is_centered(self) -> bool {
        matches!(self, RewardKind::Ctr | RewardKind::Cth)
    }

    /// Whether the per-CAV term is the differential (HDR) one.
    pub fn uses_differential(self) -> bool {
        matches!(self, RewardKind::Hdr | RewardKind::Cth)
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hdr" => Ok(RewardKind::Hdr),
            "gnr" => Ok(RewardKind::Gnr),
            "ctr" => Ok(RewardKind::Ctr),
            "cth" => Ok(RewardKind::Cth),
            other => Err(Error::ConfigInvariant(format!("unknown reward variant '{other}'"))),
        }
    }
}

/// A reward variant together with its running baseline. The baseline only
/// moves for the centered kinds, and only after a reward has been observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardVariant {
    pub kind: RewardKind,
    pub rho_hat: f64,
    pub beta: f64,
}

impl RewardVariant {
    pub fn new(kind: RewardKind, beta: f64) -> Self {
        RewardVariant {
            kind,
            rho_hat: 0.0,
            beta,
        }
    }

    fn center(&mut self, raw: f64) -> f64 {
        if !self.kind.is_centered() {
            return 0.0;
        }
        let baseline = self.rho_hat;
        self.rho_hat += self.beta * (raw - baseline);
        baseline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavReward {
    pub id: VehicleId,
    pub action: DiscreteAction,
    pub r_trd: f64,
    pub r_arg: f64,
    pub r_hdr: f64,
    pub r_freq: f64,
    /// Next-state potential, the state-based per-CAV score.
    pub phi_next: f64,
    /// Weighted per-CAV contribution under the evaluated variant.
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSafety {
    pub id: VehicleId,
    pub ttc: f64,
    pub r_safe: f64,
}

/// Every reward term for one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub kind: RewardKind,
    pub per_cav: Vec<CavReward>,
    pub per_vehicle: Vec<VehicleSafety>,
    pub r_flow: f64,
    pub r_safe: f64,
    /// CAV-averaged per-CAV contributions.
    pub cav_term: f64,
    pub w_flow: f64,
    pub w_safe: f64,
    /// Baseline subtracted from this step (0 for uncentered variants).
    pub baseline: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// Composite value recomputed from the stored components.
    pub fn recompose(&self) -> f64 {
        let cav_term = if self.per_cav.is_empty() {
            0.0
        } else {
            self.per_cav.iter().map(|c| c.term).sum::<f64>() / self.per_cav.len() as f64
        };
        cav_term + self.w_flow * self.r_flow + self.w_safe * self.r_safe - self.baseline
    }

    pub fn raw_total(&self) -> f64 {
        self.total + self.baseline
    }
}

fn check_transition(world: &WorldState, outcome: &StepOutcome) -> Result<()> {
    let before: BTreeSet<VehicleId> = world.vehicles.iter().map(|v| v.id).collect();
    let mut accounted: BTreeSet<VehicleId> = outcome.next_state.vehicles.iter().map(|v| v.id).collect();
    for id in &outcome.spawned {
        if !accounted.remove(id) || before.contains(id) {
            return Err(Error::contract(format!("spawned id {id} inconsistent with worlds")));
        }
    }
    accounted.extend(outcome.despawned.iter().map(|(id, _)| *id));
    for &(a, b) in &outcome.collisions {
        accounted.insert(a);
        accounted.insert(b);
    }
    if accounted != before {
        return Err(Error::contract(
            "successor world does not match the predecessor's vehicle ids",
        ));
    }
    Ok(())
}

/// Composite reward for the transition `world -> outcome.next_state` under
/// `joint_action`.
///
/// The per-CAV term averages `w_hdr * r_hdr + w_freq * r_freq` (differential
/// kinds) or `w_hdr * phi(s') + w_freq * r_freq` (state-based kinds) over the
/// CAVs still on the road. `r_safe` sums over every vehicle still on the road
/// plus `-1` for each vehicle removed by a collision. Centered kinds subtract
/// the running baseline and then update it with the uncentered value.
pub fn total_reward(
    world: &WorldState,
    outcome: &StepOutcome,
    joint_action: &JointAction,
    p: &RewardParams,
    variant: &mut RewardVariant,
) -> Result<RewardBreakdown> {
    check_transition(world, outcome)?;
    let next = &outcome.next_state;
    let differential = variant.kind.uses_differential();

    let mut per_cav = Vec::new();
    for v in next.vehicles.iter().filter(|v| v.is_cav()) {
        let Some(action) = joint_action.get(v.id) else {
            continue;
        };
        // Speed threshold is judged where the action was chosen.
        let prev = world.vehicle(v.id).unwrap_or(v);
        let trd = r_trd(v, p);
        let arg = r_arg(action, prev, p);
        let hdr = p.w_trd * trd + p.w_arg * arg;
        let freq = r_freq(v, p);
        let phi_next = potential(v, p);
        let score = if differential { hdr } else { phi_next };
        per_cav.push(CavReward {
            id: v.id,
            action,
            r_trd: trd,
            r_arg: arg,
            r_hdr: hdr,
            r_freq: freq,
            phi_next,
            term: p.w_hdr * score + p.w_freq * freq,
        });
    }

    let mut per_vehicle = Vec::with_capacity(next.vehicles.len());
    for (i, v) in next.vehicles.iter().enumerate() {
        let leader = leader_index(&next.vehicles, i).map(|j| &next.vehicles[j]);
        let ttc = time_to_collision(v, leader, p.vehicle_length_m);
        per_vehicle.push(VehicleSafety {
            id: v.id,
            ttc,
            r_safe: r_safe_from_ttc(ttc, p),
        });
    }
    for &(a, b) in &outcome.collisions {
        for id in [a, b] {
            per_vehicle.push(VehicleSafety {
                id,
                ttc: 0.0,
                r_safe: -1.0,
            });
        }
    }

    let flow = r_flow(next, p);
    let safe: f64 = per_vehicle.iter().map(|s| s.r_safe).sum();
    let cav_term = if per_cav.is_empty() {
        0.0
    } else {
        per_cav.iter().map(|c| c.term).sum::<f64>() / per_cav.len() as f64
    };
    let raw = cav_term + p.w_flow * flow + p.w_safe * safe;
    let baseline = variant.center(raw);

    Ok(RewardBreakdown {
        kind: variant.kind,
        per_cav,
        per_vehicle,
        r_flow: flow,
        r_safe: safe,
        cav_term,
        w_flow: p.w_flow,
        w_safe: p.w_safe,
        baseline,
        total: raw - baseline,
    })
}

/// Same value as `total_reward(..).total` without materialising the
/// breakdown or re-checking the transition; used inside search rollouts.
pub(crate) fn total_reward_fast(
    world: &WorldState,
    outcome: &StepOutcome,
    joint_action: &JointAction,
    p: &RewardParams,
    variant: &mut RewardVariant,
) -> f64 {
    let next = &outcome.next_state;
    let differential = variant.kind.uses_differential();
    let mut cav_sum = 0.0;
    let mut cavs = 0usize;
    let mut flow = 0.0;
    let mut safe = 0.0;
    for (i, v) in next.vehicles.iter().enumerate() {
        flow += v.v_x / p.v_max;
        let leader = leader_index(&next.vehicles, i).map(|j| &next.vehicles[j]);
        safe += r_safe_from_ttc(time_to_collision(v, leader, p.vehicle_length_m), p);
        if !v.is_cav() {
            continue;
        }
        let Some(action) = joint_action.get(v.id) else {
            continue;
        };
        let score = if differential {
            let prev = world.vehicle(v.id).unwrap_or(v);
            p.w_trd * r_trd(v, p) + p.w_arg * r_arg(action, prev, p)
        } else {
            potential(v, p)
        };
        cav_sum += p.w_hdr * score + p.w_freq * r_freq(v, p);
        cavs += 1;
    }
    safe -= 2.0 * outcome.collisions.len() as f64;
    let flow = if next.vehicles.is_empty() {
        0.0
    } else {
        flow / next.vehicles.len() as f64
    };
    let cav_term = if cavs == 0 { 0.0 } else { cav_sum / cavs as f64 };
    let raw = cav_term + p.w_flow * flow + p.w_safe * safe;
    raw - variant.center(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Intention, KinematicLimits, Lateral, VehicleKind};
    use crate::sim::{step, HdvParams, SpawnConfig};

    fn p() -> RewardParams {
        RewardParams::default()
    }

    fn vehicle(x: f64, lane: usize, target: usize, v_x: f64) -> VehicleState {
        let mut v = VehicleState::new(
            VehicleId(0),
            VehicleKind::Cav,
            x,
            lane,
            v_x,
            Intention::Straight,
            &RoadGeometry::default(),
        );
        v.y_targ_lane = target;
        v
    }

    #[test]
    fn potential_reference_values() {
        let p = p();
        assert_eq!(potential(&vehicle(250.0, 0, 0, 0.0), &p), 1.0);
        assert_eq!(potential(&vehicle(250.0, 1, 0, 0.0), &p), 0.5);
        let v = potential(&vehicle(190.0, 2, 2, 0.0), &p);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn gradient_reference_values() {
        let p = p();
        let (gx, gy) = potential_gradient(&vehicle(250.0, 1, 0, 0.0), &p);
        assert_eq!(gx, 0.0);
        assert!((gy + 0.25).abs() < 1e-15);
        let (_, gy_below) = potential_gradient(&vehicle(250.0, 0, 1, 0.0), &p);
        assert!((gy_below - 0.25).abs() < 1e-15);
        let (_, gy_on) = potential_gradient(&vehicle(200.0, 1, 1, 0.0), &p);
        assert_eq!(gy_on, 0.0);
    }

    #[test]
    fn lateral_partial_matches_central_difference() {
        let p = p();
        let h = 1e-6;
        for (x, dy) in [(250.0, 1.0), (250.0, -1.0), (180.0, 0.4), (30.0, -2.3)] {
            let fd = (potential_at(x, dy + h, &p) - potential_at(x, dy - h, &p)) / (2.0 * h);
            let (_, gy) = potential_gradient_at(x, dy, &p);
            assert!((fd - gy).abs() <= 1e-6 * gy.abs().max(1e-12), "{x} {dy}: {fd} vs {gy}");
        }
    }

    #[test]
    fn trd_signs() {
        let p = p();
        assert_eq!(r_trd(&vehicle(120.0, 1, 1, 0.0), &p), 0.0);
        assert!(r_trd(&vehicle(120.0, 1, 1, 12.0), &p) > 0.0);
    }

    #[test]
    fn arg_truth_table() {
        let p = p();
        let ac = DiscreteAction::new(Lateral::Keep, Longitudinal::Accelerate);
        let mt = DiscreteAction::new(Lateral::Keep, Longitudinal::Maintain);
        let dc = DiscreteAction::new(Lateral::Keep, Longitudinal::Decelerate);
        assert_eq!(r_arg(ac, &vehicle(0.0, 0, 0, 5.0), &p), 1.0);
        assert_eq!(r_arg(mt, &vehicle(0.0, 0, 0, 28.0), &p), 1.0);
        assert_eq!(r_arg(mt, &vehicle(0.0, 0, 0, 27.999), &p), 0.0);
        assert_eq!(r_arg(dc, &vehicle(0.0, 0, 0, 29.0), &p), 0.0);
    }

    #[test]
    fn hdr_weighting() {
        let p = p();
        let combine = |trd: f64, arg: f64| p.w_trd * trd + p.w_arg * arg;
        assert!((combine(0.0, 1.0) - 0.1).abs() < 1e-15);
        assert!((combine(0.02, 0.0) - 0.018).abs() < 1e-15);
        assert!((combine(0.02, 1.0) - 0.118).abs() < 1e-15);
    }

    #[test]
    fn safety_penalty_values() {
        let p = p();
        assert_eq!(r_safe_from_ttc(3.0, &p), 0.0);
        assert!((r_safe_from_ttc(1e-9, &p) + 1.0).abs() < 1e-12);
        assert_eq!(r_safe_from_ttc(f64::INFINITY, &p), 0.0);
        let follower = vehicle(100.0, 1, 1, 10.0);
        let leader = vehicle(109.0, 1, 1, 8.0);
        let ttc = time_to_collision(&follower, Some(&leader), 5.0);
        assert_eq!(ttc, 2.0);
        let oracle = -1.0 + (1.0f64 / 3.0 - 0.5).exp();
        let got = r_safe_vehicle(&follower, Some(&leader), false, &p);
        assert!((got - oracle).abs() < 1e-15);
        assert!((got + 0.15352).abs() < 1e-5);
        assert_eq!(r_safe_vehicle(&follower, Some(&leader), true, &p), -1.0);
    }

    #[test]
    fn freq_penalty_values() {
        let p = p();
        let mut v = vehicle(0.0, 0, 0, 0.0);
        assert_eq!(r_freq(&v, &p), -1.0);
        v.t_since_lc_s = 2f64.ln() / 0.75;
        assert!((r_freq(&v, &p) + 0.5).abs() < 1e-15);
        v.t_since_lc_s = 1e6;
        assert!(r_freq(&v, &p).abs() < 1e-300);
    }

    fn world_with(speeds: &[f64]) -> WorldState {
        let mut w = WorldState::new(RoadGeometry::default(), KinematicLimits::default(), 0.1, 0);
        for (i, s) in speeds.iter().enumerate() {
            w.add_vehicle(VehicleKind::Hdv, 10.0 + 20.0 * i as f64, 1, *s, Intention::Straight);
        }
        w
    }

    #[test]
    fn flow_values() {
        let p = p();
        assert_eq!(r_flow(&world_with(&[]), &p), 0.0);
        assert_eq!(r_flow(&world_with(&[30.0, 30.0]), &p), 1.0);
        assert_eq!(r_flow(&world_with(&[15.0]), &p), 0.5);
        assert!((r_flow(&world_with(&[10.0, 20.0]), &p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_world_total_is_zero() {
        let w = world_with(&[]);
        let out = step(&w, &JointAction::new(), &SpawnConfig::disabled(), &HdvParams::default()).unwrap();
        let mut variant = RewardVariant::new(RewardKind::Hdr, 0.01);
        let b = total_reward(&w, &out, &JointAction::new(), &p(), &mut variant).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn single_cav_total_assembles_from_components() {
        let p = p();
        let mut w = WorldState::new(RoadGeometry::default(), KinematicLimits::default(), 0.1, 0);
        let id = w.add_vehicle(VehicleKind::Cav, 100.0, 1, 30.0, Intention::Straight);
        w.vehicles[0].t_since_lc_s = 1e4;
        let ja = JointAction::uniform([id], DiscreteAction::KEEP_MAINTAIN);
        let out = step(&w, &ja, &SpawnConfig::disabled(), &HdvParams::default()).unwrap();
        let mut variant = RewardVariant::new(RewardKind::Hdr, 0.01);
        let b = total_reward(&w, &out, &ja, &p, &mut variant).unwrap();
        let next = &out.next_state.vehicles[0];
        let trd = potential_at(next.x_m, 0.0, &p) * (250.0 - next.x_m) / 3600.0 * 30.0;
        let expected = 10.0 * (0.9 * trd + 0.1) + 1.0 + 0.9 * -(-0.75 * next.t_since_lc_s).exp();
        assert!((b.total - expected).abs() < 1e-12);
        assert!((b.total - b.recompose()).abs() < 1e-12);
    }

    #[test]
    fn centered_variant_subtracts_then_updates() {
        let mut v = RewardVariant::new(RewardKind::Cth, 0.5);
        assert_eq!(v.center(4.0), 0.0);
        assert_eq!(v.rho_hat, 2.0);
        assert_eq!(v.center(4.0), 2.0);
        assert_eq!(v.rho_hat, 3.0);
        let mut plain = RewardVariant::new(RewardKind::Hdr, 0.5);
        assert_eq!(plain.center(4.0), 0.0);
        assert_eq!(plain.rho_hat, 0.0);
    }

    #[test]
    fn mismatched_successor_is_rejected() {
        let p = p();
        let mut w = world_with(&[10.0]);
        let out = step(&w, &JointAction::new(), &SpawnConfig::disabled(), &HdvParams::default()).unwrap();
        w.add_vehicle(VehicleKind::Hdv, 200.0, 2, 10.0, Intention::Straight);
        let mut variant = RewardVariant::new(RewardKind::Hdr, 0.01);
        assert!(total_reward(&w, &out, &JointAction::new(), &p, &mut variant).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("cth".parse::<RewardKind>().unwrap(), RewardKind::Cth);
        assert_eq!("HDR".parse::<RewardKind>().unwrap(), RewardKind::Hdr);
        assert!("foo".parse::<RewardKind>().is_err());
    }
}
