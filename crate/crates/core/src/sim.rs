//! Traffic simulator: Krauss-style HDV car following, a two-rule HDV lane
//! change heuristic, CAV action application, collision detection and
//! Poisson inflow/outflow of vehicles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    advance_lateral, apply_action_kinematics, Intention, JointAction, KinematicLimits, Lateral,
    RoadGeometry, VehicleId, VehicleKind, VehicleState,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdvParams {
    pub b_decel: f64,
    pub t_react: f64,
    pub eps_imperfection: f64,
    pub v_max: f64,
    pub a_free: f64,
    /// Required speed advantage (m/s) before a discretionary lane change.
    pub lc_gain: f64,
    /// Extra headway factor demanded from the new follower.
    pub lc_politeness: f64,
}

impl Default for HdvParams {
    fn default() -> Self {
        HdvParams {
            b_decel: 9.0,
            t_react: 1.1,
            eps_imperfection: 0.5,
            v_max: 30.0,
            a_free: 2.5,
            lc_gain: 2.0,
            lc_politeness: 0.0,
        }
    }
}

impl HdvParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hdv_b_decel", self.b_decel),
            ("hdv_t_react", self.t_react),
            ("v_max", self.v_max),
            ("hdv_a_free", self.a_free),
            ("hdv_lc_gain", self.lc_gain),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::ConfigInvariant(format!("{name} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.eps_imperfection) {
            return Err(Error::ConfigInvariant("hdv_eps must lie in [0, 1]".into()));
        }
        if !(self.lc_politeness >= 0.0) {
            return Err(Error::ConfigInvariant("hdv_lc_politeness must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnConfig {
    pub arrival_rate_per_lane: f64,
    pub cav_fraction: f64,
    pub v0_min: f64,
    pub v0_max: f64,
    pub min_spawn_gap_m: f64,
    /// CAV arrivals beyond this many CAVs in the zone enter as HDVs.
    pub max_cavs: usize,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        SpawnConfig {
            arrival_rate_per_lane: 0.1,
            cav_fraction: 0.4,
            v0_min: 8.0,
            v0_max: 12.0,
            min_spawn_gap_m: 10.0,
            max_cavs: 4,
        }
    }
}

impl SpawnConfig {
    pub fn disabled() -> Self {
        SpawnConfig {
            arrival_rate_per_lane: 0.0,
            ..SpawnConfig::default()
        }
    }

    pub fn validate(&self, v_max: f64) -> Result<()> {
        if !(self.arrival_rate_per_lane >= 0.0) {
            return Err(Error::ConfigInvariant("arrival_rate_per_lane must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.cav_fraction) {
            return Err(Error::ConfigInvariant("cav_fraction must lie in [0, 1]".into()));
        }
        if !(0.0 <= self.v0_min && self.v0_min <= self.v0_max && self.v0_max <= v_max) {
            return Err(Error::ConfigInvariant(
                "initial speed range must lie within [0, v_max]".into(),
            ));
        }
        if !(self.min_spawn_gap_m >= 0.0) {
            return Err(Error::ConfigInvariant("min_spawn_gap must be >= 0".into()));
        }
        Ok(())
    }
}

/// Complete simulator state. Cloning it forks the random stream, so a clone
/// replays exactly the same future under the same actions.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub t_s: f64,
    pub dt_s: f64,
    /// Sorted by id.
    pub vehicles: Vec<VehicleState>,
    pub geometry: RoadGeometry,
    pub limits: KinematicLimits,
    pub rng: ChaCha8Rng,
    pub next_id: u32,
}

impl WorldState {
    pub fn new(geometry: RoadGeometry, limits: KinematicLimits, dt_s: f64, seed: u64) -> Self {
        WorldState {
            t_s: 0.0,
            dt_s,
            vehicles: Vec::new(),
            geometry,
            limits,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
        }
    }

    /// Replaces the random stream, leaving every vehicle untouched.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn add_vehicle(
        &mut self,
        kind: VehicleKind,
        x_m: f64,
        lane: usize,
        v_x: f64,
        intention: Intention,
    ) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        self.vehicles.push(VehicleState::new(
            id,
            kind,
            x_m,
            lane,
            v_x,
            intention,
            &self.geometry,
        ));
        id
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles
            .binary_search_by_key(&id, |v| v.id)
            .ok()
            .map(|i| &self.vehicles[i])
    }

    /// CAV ids in ascending order.
    pub fn cav_ids(&self) -> Vec<VehicleId> {
        self.vehicles
            .iter()
            .filter(|v| v.is_cav())
            .map(|v| v.id)
            .collect()
    }

    pub fn cav_count(&self) -> usize {
        self.vehicles.iter().filter(|v| v.is_cav()).count()
    }

    /// Nearest vehicle ahead of `vehicles[i]` in any lane it occupies.
    pub fn leader_index(&self, i: usize) -> Option<usize> {
        leader_index(&self.vehicles, i)
    }

    pub fn check_invariants(&self) -> Result<()> {
        for pair in self.vehicles.windows(2) {
            if pair[0].id >= pair[1].id {
                return Err(Error::contract("vehicle ids must be unique and sorted"));
            }
        }
        for v in &self.vehicles {
            if !(0.0..=self.geometry.length_m).contains(&v.x_m) {
                return Err(Error::contract(format!("vehicle {} outside road", v.id)));
            }
            if !(0.0..=self.limits.v_max).contains(&v.v_x) {
                return Err(Error::contract(format!("vehicle {} speed out of range", v.id)));
            }
            if v.lane >= self.geometry.lane_count {
                return Err(Error::contract(format!("vehicle {} lane out of range", v.id)));
            }
            if !self.geometry.permits(v.y_targ_lane, v.intention) {
                return Err(Error::contract(format!(
                    "vehicle {} target lane does not serve its intention",
                    v.id
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn leader_index(vehicles: &[VehicleState], i: usize) -> Option<usize> {
    let me = &vehicles[i];
    let mut best: Option<usize> = None;
    for (j, other) in vehicles.iter().enumerate() {
        if j == i || !shares_lane(me, other) {
            continue;
        }
        let ahead = other.x_m > me.x_m || (other.x_m == me.x_m && other.id > me.id);
        if ahead && best.is_none_or(|b| other.x_m < vehicles[b].x_m) {
            best = Some(j);
        }
    }
    best
}

fn shares_lane(a: &VehicleState, b: &VehicleState) -> bool {
    b.occupies(a.lane) || a.lc_in_progress.is_some_and(|lc| b.occupies(lc.target_lane))
}

/// Nearest vehicle in `lane` strictly ahead of (`ahead = true`) or at/behind
/// position `x`, ignoring `exclude`.
fn nearest_in_lane(
    vehicles: &[VehicleState],
    lane: usize,
    x: f64,
    exclude: VehicleId,
    ahead: bool,
) -> Option<&VehicleState> {
    vehicles
        .iter()
        .filter(|v| v.id != exclude && v.occupies(lane))
        .filter(|v| if ahead { v.x_m > x } else { v.x_m <= x })
        .min_by(|a, b| {
            let da = (a.x_m - x).abs();
            let db = (b.x_m - x).abs();
            da.total_cmp(&db).then(a.id.cmp(&b.id))
        })
}

/// Krauss safe speed behind `leader`, infinite without one.
pub fn krauss_safe_speed(
    v_self: f64,
    leader: Option<&VehicleState>,
    x_self: f64,
    p: &HdvParams,
    vehicle_length_m: f64,
) -> f64 {
    match leader {
        None => f64::INFINITY,
        Some(l) => {
            let gap = l.x_m - x_self - vehicle_length_m;
            l.v_x + (gap - l.v_x * p.t_react) / (v_self / p.b_decel + p.t_react)
        }
    }
}

/// Krauss update with the imperfection draw `u` in `[0, 1)` supplied.
pub fn krauss_speed(
    v: &VehicleState,
    leader: Option<&VehicleState>,
    p: &HdvParams,
    dt: f64,
    vehicle_length_m: f64,
    u: f64,
) -> f64 {
    let v_safe = krauss_safe_speed(v.v_x, leader, v.x_m, p, vehicle_length_m);
    let v_des = (v.v_x + p.a_free * dt).min(p.v_max).min(v_safe);
    (v_des - p.eps_imperfection * p.a_free * dt * u).max(0.0)
}

/// Next HDV speed; draws one uniform sample from `rng`.
pub fn hdv_follow_speed<R: Rng + ?Sized>(
    v: &VehicleState,
    leader: Option<&VehicleState>,
    p: &HdvParams,
    dt: f64,
    vehicle_length_m: f64,
    rng: &mut R,
) -> f64 {
    let u: f64 = rng.random();
    krauss_speed(v, leader, p, dt, vehicle_length_m, u)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LaneNeighbors<'a> {
    pub leader: Option<&'a VehicleState>,
    pub follower: Option<&'a VehicleState>,
}

/// Nearest leaders/followers in the current lane and both adjacent lanes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neighborhood<'a> {
    pub current: LaneNeighbors<'a>,
    pub left: Option<LaneNeighbors<'a>>,
    pub right: Option<LaneNeighbors<'a>>,
}

impl<'a> Neighborhood<'a> {
    pub fn of(v: &VehicleState, vehicles: &'a [VehicleState], geometry: &RoadGeometry) -> Self {
        let lane_neighbors = |lane: usize| LaneNeighbors {
            leader: nearest_in_lane(vehicles, lane, v.x_m, v.id, true),
            follower: nearest_in_lane(vehicles, lane, v.x_m, v.id, false),
        };
        Neighborhood {
            current: lane_neighbors(v.lane),
            left: (v.lane + 1 < geometry.lane_count).then(|| lane_neighbors(v.lane + 1)),
            right: (v.lane > 0).then(|| lane_neighbors(v.lane - 1)),
        }
    }
}

fn gaps_are_safe(
    v: &VehicleState,
    lane: &LaneNeighbors<'_>,
    p: &HdvParams,
    vehicle_length_m: f64,
) -> bool {
    let follower_ok = lane.follower.is_none_or(|f| {
        let gap = v.x_m - f.x_m - vehicle_length_m;
        gap > f.v_x * p.t_react * (1.0 + p.lc_politeness)
    });
    let leader_ok = lane.leader.is_none_or(|l| {
        let gap = l.x_m - v.x_m - vehicle_length_m;
        gap > v.v_x * p.t_react
    });
    follower_ok && leader_ok
}

fn lane_speed(v: &VehicleState, lane: &LaneNeighbors<'_>, p: &HdvParams, len: f64) -> f64 {
    krauss_safe_speed(v.v_x, lane.leader, v.x_m, p, len).min(p.v_max)
}

/// Strategic/tactical lane-change rule for a human driver.
///
/// Strategic: outside a lane that serves the intention, move one lane toward
/// the target lane once the gaps there are safe. Tactical: otherwise switch
/// to an adjacent lane serving the intention only when it is faster by more
/// than `lc_gain` and the gaps are safe.
pub fn hdv_lane_change_decision(
    v: &VehicleState,
    neighbors: &Neighborhood<'_>,
    geometry: &RoadGeometry,
    p: &HdvParams,
    vehicle_length_m: f64,
) -> Lateral {
    if v.lc_in_progress.is_some() {
        return Lateral::Keep;
    }
    if !geometry.permits(v.lane, v.intention) {
        let (dir, lane) = if v.y_targ_lane > v.lane {
            (Lateral::ChangeLeft, neighbors.left)
        } else {
            (Lateral::ChangeRight, neighbors.right)
        };
        return match lane {
            Some(l) if gaps_are_safe(v, &l, p, vehicle_length_m) => dir,
            _ => Lateral::Keep,
        };
    }

    let current = lane_speed(v, &neighbors.current, p, vehicle_length_m);
    let mut best = (Lateral::Keep, current + p.lc_gain);
    let candidates = [
        (Lateral::ChangeRight, neighbors.right, v.lane.wrapping_sub(1)),
        (Lateral::ChangeLeft, neighbors.left, v.lane + 1),
    ];
    for (dir, lane, index) in candidates {
        let Some(lane) = lane else { continue };
        if !geometry.permits(index, v.intention) || !gaps_are_safe(v, &lane, p, vehicle_length_m) {
            continue;
        }
        let speed = lane_speed(v, &lane, p, vehicle_length_m);
        if speed > best.1 {
            best = (dir, speed);
        }
    }
    best.0
}

/// Result of one simulator step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: WorldState,
    pub collisions: Vec<(VehicleId, VehicleId)>,
    /// Vehicles that left the road, with whether they exited in a lane
    /// serving their intention.
    pub despawned: Vec<(VehicleId, bool)>,
    pub spawned: Vec<VehicleId>,
}

impl StepOutcome {
    pub fn collided(&self, id: VehicleId) -> bool {
        self.collisions.iter().any(|&(a, b)| a == id || b == id)
    }
}

fn check_action_keys(world: &WorldState, actions: &JointAction) -> Result<()> {
    let cavs = world.vehicles.iter().filter(|v| v.is_cav());
    let matches = cavs.clone().count() == actions.len()
        && cavs.zip(actions.ids()).all(|(v, id)| v.id == id);
    if matches {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "joint action keys {:?} do not match CAV ids {:?}",
            actions.ids().collect::<Vec<_>>(),
            world.cav_ids()
        )))
    }
}

/// Advances the world by one decision interval.
///
/// Phases run in a fixed order: HDV lane-change decisions, HDV speeds, CAV
/// kinematics, position update, collision removal, despawn at the road end,
/// then Poisson arrivals.
pub fn step(
    world: &WorldState,
    cav_actions: &JointAction,
    spawn: &SpawnConfig,
    p: &HdvParams,
) -> Result<StepOutcome> {
    check_action_keys(world, cav_actions)?;
    let dt = world.dt_s;
    let geometry = &world.geometry;
    let limits = &world.limits;
    let len = limits.vehicle_length_m;
    let mut rng = world.rng.clone();

    let lane_decisions: Vec<Lateral> = world
        .vehicles
        .iter()
        .map(|v| match v.kind {
            VehicleKind::Hdv => {
                let hood = Neighborhood::of(v, &world.vehicles, geometry);
                hdv_lane_change_decision(v, &hood, geometry, p, len)
            }
            VehicleKind::Cav => Lateral::Keep,
        })
        .collect();

    let hdv_speeds: Vec<f64> = (0..world.vehicles.len())
        .map(|i| {
            let v = &world.vehicles[i];
            match v.kind {
                VehicleKind::Hdv => {
                    let leader = leader_index(&world.vehicles, i).map(|j| &world.vehicles[j]);
                    hdv_follow_speed(v, leader, p, dt, len, &mut rng)
                }
                VehicleKind::Cav => v.v_x,
            }
        })
        .collect();

    let mut moved: Vec<VehicleState> = Vec::with_capacity(world.vehicles.len() + 4);
    for (i, v) in world.vehicles.iter().enumerate() {
        let next = match v.kind {
            VehicleKind::Cav => {
                let action = cav_actions.get(v.id).expect("keys checked above");
                apply_action_kinematics(v, action, dt, geometry, limits)
            }
            VehicleKind::Hdv => {
                let mut next = v.clone();
                let v_next = hdv_speeds[i].min(limits.v_max);
                next.a_x = (v_next - v.v_x) / dt;
                next.v_x = v_next;
                // Krauss safety assumes the Euler position update.
                next.x_m += v_next * dt;
                advance_lateral(&mut next, lane_decisions[i], dt, geometry, limits);
                next
            }
        };
        moved.push(next);
    }

    let half_lane = 0.5 * geometry.lane_width_m;
    let mut collided = vec![false; moved.len()];
    let mut collisions = Vec::new();
    for i in 0..moved.len() {
        for j in (i + 1)..moved.len() {
            if collided[i] || collided[j] {
                continue;
            }
            let (a, b) = (&moved[i], &moved[j]);
            if (a.x_m - b.x_m).abs() < len && (a.y_m - b.y_m).abs() < half_lane {
                collided[i] = true;
                collided[j] = true;
                collisions.push((a.id, b.id));
            }
        }
    }

    let mut vehicles = Vec::with_capacity(moved.len() + geometry.lane_count);
    let mut despawned = Vec::new();
    for (v, hit) in moved.into_iter().zip(collided) {
        if hit {
            continue;
        }
        if v.x_m >= geometry.length_m {
            despawned.push((v.id, geometry.permits(v.lane, v.intention)));
        } else {
            vehicles.push(v);
        }
    }

    let mut next_id = world.next_id;
    let mut spawned = Vec::new();
    if spawn.arrival_rate_per_lane > 0.0 {
        let arrivals = Poisson::new(spawn.arrival_rate_per_lane * dt)
            .map_err(|e| Error::ConfigInvariant(format!("arrival rate: {e}")))?;
        let mut cavs = vehicles.iter().filter(|v| v.is_cav()).count();
        for lane in 0..geometry.lane_count {
            let count: f64 = arrivals.sample(&mut rng);
            if count < 1.0 {
                continue;
            }
            let kind_draw: f64 = rng.random();
            let intention = Intention::ALL[rng.random_range(0..3)];
            let v0 = rng.random_range(spawn.v0_min..=spawn.v0_max);
            let blocked = vehicles
                .iter()
                .any(|v| v.occupies(lane) && v.x_m - len < spawn.min_spawn_gap_m);
            if blocked {
                continue;
            }
            let kind = if kind_draw < spawn.cav_fraction && cavs < spawn.max_cavs {
                cavs += 1;
                VehicleKind::Cav
            } else {
                VehicleKind::Hdv
            };
            let id = VehicleId(next_id);
            next_id += 1;
            vehicles.push(VehicleState::new(id, kind, 0.0, lane, v0, intention, geometry));
            spawned.push(id);
        }
    }

    Ok(StepOutcome {
        next_state: WorldState {
            t_s: world.t_s + dt,
            dt_s: dt,
            vehicles,
            geometry: geometry.clone(),
            limits: *limits,
            rng,
            next_id,
        },
        collisions,
        despawned,
        spawned,
    })
}

/// A neighbour as seen from the observing vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedVehicle {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub dx_m: f64,
    pub dy_m: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub lane: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: VehicleState,
    pub neighbors: Vec<ObservedVehicle>,
}

/// Local observation of `id`: itself plus every vehicle within
/// `radius_m` (closed ball), positions relative to the observer.
pub fn observe(world: &WorldState, id: VehicleId, radius_m: f64) -> Result<Observation> {
    let ego = world
        .vehicle(id)
        .ok_or_else(|| Error::contract(format!("unknown vehicle id {id}")))?;
    let neighbors = world
        .vehicles
        .iter()
        .filter(|v| v.id != id)
        .filter_map(|v| {
            let dx = v.x_m - ego.x_m;
            let dy = v.y_m - ego.y_m;
            (dx.hypot(dy) <= radius_m).then_some(ObservedVehicle {
                id: v.id,
                kind: v.kind,
                dx_m: dx,
                dy_m: dy,
                v_x: v.v_x,
                v_y: v.v_y,
                lane: v.lane,
            })
        })
        .collect();
    Ok(Observation {
        ego: ego.clone(),
        neighbors,
    })
}
