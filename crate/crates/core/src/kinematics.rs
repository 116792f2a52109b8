//! Vehicle, action and road types plus the single-step kinematic update
//! shared by the traffic simulator and the planner.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stable vehicle identifier, assigned in spawn order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleKind {
    Cav,
    Hdv,
}

impl VehicleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleKind::Cav => "CAV",
            VehicleKind::Hdv => "HDV",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intention {
    Left,
    Straight,
    Right,
}

impl Intention {
    pub const ALL: [Intention; 3] = [Intention::Left, Intention::Straight, Intention::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Intention::Left => "left",
            Intention::Straight => "straight",
            Intention::Right => "right",
        }
    }
}

/// Set of intentions a lane may be used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanePermissions {
    pub left: bool,
    pub straight: bool,
    pub right: bool,
}

impl LanePermissions {
    pub fn permits(self, intention: Intention) -> bool {
        match intention {
            Intention::Left => self.left,
            Intention::Straight => self.straight,
            Intention::Right => self.right,
        }
    }

    fn is_empty(self) -> bool {
        !(self.left || self.straight || self.right)
    }
}

/// One-way multi-lane road segment. Lane 0 is the rightmost lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    pub length_m: f64,
    pub lane_count: usize,
    pub lane_width_m: f64,
    pub lane_permissions: Vec<LanePermissions>,
}

impl RoadGeometry {
    /// Builds a road whose rightmost lane serves right turns, leftmost lane
    /// serves left turns and every lane serves through traffic.
    pub fn new(length_m: f64, lane_count: usize, lane_width_m: f64) -> Result<Self> {
        let lane_permissions = (0..lane_count)
            .map(|lane| LanePermissions {
                left: lane + 1 == lane_count,
                straight: true,
                right: lane == 0,
            })
            .collect();
        let geometry = RoadGeometry {
            length_m,
            lane_count,
            lane_width_m,
            lane_permissions,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(Error::ConfigInvariant("road length must be > 0".into()));
        }
        if self.lane_count < 2 {
            return Err(Error::ConfigInvariant("lane_count must be >= 2".into()));
        }
        if !(self.lane_width_m > 0.0) {
            return Err(Error::ConfigInvariant("lane width must be > 0".into()));
        }
        if self.lane_permissions.len() != self.lane_count
            || self.lane_permissions.iter().any(|p| p.is_empty())
        {
            return Err(Error::ConfigInvariant(
                "every lane must permit at least one intention".into(),
            ));
        }
        Ok(())
    }

    pub fn permits(&self, lane: usize, intention: Intention) -> bool {
        self.lane_permissions
            .get(lane)
            .is_some_and(|p| p.permits(intention))
    }
}

impl Default for RoadGeometry {
    fn default() -> Self {
        RoadGeometry::new(250.0, 4, 3.2).expect("default geometry is valid")
    }
}

/// Lane a vehicle should end up in given its intention.
///
/// Through traffic keeps the lane it spawned in.
pub fn target_lane_for(intention: Intention, spawn_lane: usize, geometry: &RoadGeometry) -> usize {
    match intention {
        Intention::Left => geometry.lane_count - 1,
        Intention::Right => 0,
        Intention::Straight => spawn_lane.min(geometry.lane_count - 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lateral {
    /// Change one lane to the left (lane index + 1).
    ChangeLeft,
    Keep,
    /// Change one lane to the right (lane index - 1).
    ChangeRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Longitudinal {
    Accelerate,
    Maintain,
    Decelerate,
}

impl Lateral {
    pub const ALL: [Lateral; 3] = [Lateral::ChangeLeft, Lateral::Keep, Lateral::ChangeRight];

    pub fn code(self) -> &'static str {
        match self {
            Lateral::ChangeLeft => "LC",
            Lateral::Keep => "LK",
            Lateral::ChangeRight => "RC",
        }
    }
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 3] = [
        Longitudinal::Accelerate,
        Longitudinal::Maintain,
        Longitudinal::Decelerate,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Longitudinal::Accelerate => "AC",
            Longitudinal::Maintain => "MT",
            Longitudinal::Decelerate => "DC",
        }
    }
}

/// One CAV's decision: the product of a lateral and a longitudinal choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteAction {
    pub lateral: Lateral,
    pub longitudinal: Longitudinal,
}

impl DiscreteAction {
    pub const COUNT: usize = 9;

    pub const KEEP_MAINTAIN: DiscreteAction = DiscreteAction {
        lateral: Lateral::Keep,
        longitudinal: Longitudinal::Maintain,
    };

    pub fn new(lateral: Lateral, longitudinal: Longitudinal) -> Self {
        DiscreteAction {
            lateral,
            longitudinal,
        }
    }

    /// Index in `0..9`, lateral-major.
    pub fn index(self) -> usize {
        let lat = Lateral::ALL.iter().position(|l| *l == self.lateral).unwrap();
        let lon = Longitudinal::ALL
            .iter()
            .position(|l| *l == self.longitudinal)
            .unwrap();
        lat * 3 + lon
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < Self::COUNT, "action index {index} out of range");
        DiscreteAction {
            lateral: Lateral::ALL[index / 3],
            longitudinal: Longitudinal::ALL[index % 3],
        }
    }

    pub fn all() -> impl Iterator<Item = DiscreteAction> {
        (0..Self::COUNT).map(Self::from_index)
    }
}

impl fmt::Display for DiscreteAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.lateral.code(), self.longitudinal.code())
    }
}

/// Per-CAV action assignment for one decision step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction(pub BTreeMap<VehicleId, DiscreteAction>);

impl JointAction {
    pub fn new() -> Self {
        JointAction(BTreeMap::new())
    }

    pub fn uniform(ids: impl IntoIterator<Item = VehicleId>, action: DiscreteAction) -> Self {
        JointAction(ids.into_iter().map(|id| (id, action)).collect())
    }

    /// Decodes a base-9 joint index over `ids` (first id is the least
    /// significant digit).
    pub fn from_index(ids: &[VehicleId], mut index: u64) -> Self {
        let mut map = BTreeMap::new();
        for id in ids {
            map.insert(*id, DiscreteAction::from_index((index % 9) as usize));
            index /= 9;
        }
        JointAction(map)
    }

    pub fn get(&self, id: VehicleId) -> Option<DiscreteAction> {
        self.0.get(&id).copied()
    }

    pub fn insert(&mut self, id: VehicleId, action: DiscreteAction) {
        self.0.insert(id, action);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.0.keys().copied()
    }
}

/// Lane change underway: destination lane and seconds left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub target_lane: usize,
    pub remaining_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub x_m: f64,
    pub lane: usize,
    /// Lateral position; `lane * lane_width` while keeping the lane.
    pub y_m: f64,
    pub v_x: f64,
    /// Lateral speed in m/s, positive towards the left.
    pub v_y: f64,
    pub a_x: f64,
    pub intention: Intention,
    pub y_targ_lane: usize,
    /// Seconds since the last completed lane change (spawn age if none).
    pub t_since_lc_s: f64,
    pub lc_in_progress: Option<LaneChange>,
    /// Set when the last requested lateral action was infeasible and was
    /// executed as a lane keep.
    pub action_degraded: bool,
}

impl VehicleState {
    pub fn new(
        id: VehicleId,
        kind: VehicleKind,
        x_m: f64,
        lane: usize,
        v_x: f64,
        intention: Intention,
        geometry: &RoadGeometry,
    ) -> Self {
        VehicleState {
            id,
            kind,
            x_m,
            lane,
            y_m: lane as f64 * geometry.lane_width_m,
            v_x,
            v_y: 0.0,
            a_x: 0.0,
            intention,
            y_targ_lane: target_lane_for(intention, lane, geometry),
            t_since_lc_s: 0.0,
            lc_in_progress: None,
            action_degraded: false,
        }
    }

    pub fn is_cav(&self) -> bool {
        self.kind == VehicleKind::Cav
    }

    /// Lateral position in lane units. Exact lane index while lane keeping.
    pub fn lateral_lanes(&self, lane_width_m: f64) -> f64 {
        match self.lc_in_progress {
            None => self.lane as f64,
            Some(_) => self.y_m / lane_width_m,
        }
    }

    /// Lateral speed in lanes per second.
    pub fn lateral_speed_lanes(&self, lane_width_m: f64) -> f64 {
        self.v_y / lane_width_m
    }

    /// Lanes this vehicle physically claims: its own and, mid-change, the
    /// destination lane.
    pub fn occupies(&self, lane: usize) -> bool {
        self.lane == lane || self.lc_in_progress.is_some_and(|lc| lc.target_lane == lane)
    }
}

/// Physical limits and action magnitudes of the kinematic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicLimits {
    pub v_max: f64,
    pub a_cav_max: f64,
    /// Magnitude applied by AC (+) and DC (-).
    pub accel_step: f64,
    pub lane_change_duration_s: f64,
    pub vehicle_length_m: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        KinematicLimits {
            v_max: 30.0,
            a_cav_max: 3.5,
            accel_step: 1.0,
            lane_change_duration_s: 1.0,
            vehicle_length_m: 5.0,
        }
    }
}

impl KinematicLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0) {
            return Err(Error::ConfigInvariant("v_max must be > 0".into()));
        }
        if !(self.accel_step >= 0.0 && self.accel_step <= self.a_cav_max) {
            return Err(Error::ConfigInvariant(
                "accel_step must lie in [0, a_cav_max]".into(),
            ));
        }
        if !(self.lane_change_duration_s > 0.0) {
            return Err(Error::ConfigInvariant(
                "lane_change_duration must be > 0".into(),
            ));
        }
        if !(self.vehicle_length_m > 0.0) {
            return Err(Error::ConfigInvariant("vehicle_length must be > 0".into()));
        }
        Ok(())
    }

    pub fn acceleration_of(&self, longitudinal: Longitudinal) -> f64 {
        match longitudinal {
            Longitudinal::Accelerate => self.accel_step,
            Longitudinal::Maintain => 0.0,
            Longitudinal::Decelerate => -self.accel_step,
        }
    }
}

/// Constant-acceleration update over `dt` with the speed clamped to
/// `[0, v_max]`. Returns the new speed and the distance travelled.
///
/// Distance uses the mean of the old and new speed, which is exactly
/// `v*dt + a*dt^2/2` whenever the clamp is inactive.
pub fn advance_longitudinal(v_x: f64, a_x: f64, dt: f64, v_max: f64) -> (f64, f64) {
    let v_next = (v_x + a_x * dt).clamp(0.0, v_max);
    (v_next, 0.5 * (v_x + v_next) * dt)
}

/// Advances the lateral state by `dt`. A lateral request only takes effect
/// when no lane change is underway; infeasible requests degrade to a lane
/// keep and set `action_degraded`.
pub fn advance_lateral(
    v: &mut VehicleState,
    request: Lateral,
    dt: f64,
    geometry: &RoadGeometry,
    limits: &KinematicLimits,
) {
    v.action_degraded = false;
    if v.lc_in_progress.is_none() {
        let target = match request {
            Lateral::Keep => None,
            Lateral::ChangeLeft if v.lane + 1 < geometry.lane_count => Some(v.lane + 1),
            Lateral::ChangeRight if v.lane > 0 => Some(v.lane - 1),
            Lateral::ChangeLeft | Lateral::ChangeRight => {
                v.action_degraded = true;
                None
            }
        };
        if let Some(target_lane) = target {
            v.lc_in_progress = Some(LaneChange {
                target_lane,
                remaining_s: limits.lane_change_duration_s,
            });
        }
    }

    match v.lc_in_progress {
        None => {
            v.v_y = 0.0;
            v.t_since_lc_s += dt;
        }
        Some(mut lc) => {
            let direction = if lc.target_lane > v.lane { 1.0 } else { -1.0 };
            v.v_y = direction * geometry.lane_width_m / limits.lane_change_duration_s;
            lc.remaining_s -= dt;
            if lc.remaining_s <= 1e-9 {
                v.lane = lc.target_lane;
                v.y_m = lc.target_lane as f64 * geometry.lane_width_m;
                v.lc_in_progress = None;
                v.v_y = 0.0;
                v.t_since_lc_s = 0.0;
            } else {
                v.y_m += v.v_y * dt;
                v.lc_in_progress = Some(lc);
                v.t_since_lc_s += dt;
            }
        }
    }
}

/// Applies one CAV decision for `dt` seconds.
pub fn apply_action_kinematics(
    v: &VehicleState,
    action: DiscreteAction,
    dt: f64,
    geometry: &RoadGeometry,
    limits: &KinematicLimits,
) -> VehicleState {
    let mut next = v.clone();
    let a_x = limits
        .acceleration_of(action.longitudinal)
        .clamp(-limits.a_cav_max, limits.a_cav_max);
    let (v_next, dx) = advance_longitudinal(v.v_x, a_x, dt, limits.v_max);
    next.a_x = a_x;
    next.v_x = v_next;
    next.x_m += dx;
    advance_lateral(&mut next, action.lateral, dt, geometry, limits);
    next
}
