//! Flat `key = value` parameter files.
//!
//! Lines starting with `#` and blank lines are ignored. Every key is
//! optional and falls back to its default; unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{KinematicLimits, RoadGeometry};
use crate::metrics::AtsWeights;
use crate::planner::{PlannerModels, RolloutPolicy, SearchConfig};
use crate::rewards::{RewardKind, RewardParams};
use crate::sim::{HdvParams, SpawnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// A fixed initial population and no arrivals.
    Fixed,
    /// Starts empty and fills through Poisson arrivals.
    Spawning,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Fixed => "fixed",
            ScenarioKind::Spawning => "spawning",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ScenarioKind::Fixed),
            "spawning" => Ok(ScenarioKind::Spawning),
            other => Err(Error::ConfigInvariant(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub initial_cavs: usize,
    pub initial_hdvs: usize,
    /// Initial vehicles are placed in `[0, spawn_x_max_m]`.
    pub spawn_x_max_m: f64,
    pub episode_time_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            kind: ScenarioKind::Fixed,
            initial_cavs: 4,
            initial_hdvs: 6,
            spawn_x_max_m: 120.0,
            episode_time_s: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant: RewardKind,
    pub variants: Vec<RewardKind>,
    pub budgets: Vec<usize>,
    pub probe_states: usize,
    pub surface_x_cells: usize,
    pub oracle_instances: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: RewardKind::Hdr,
            variants: RewardKind::ALL.to_vec(),
            budgets: vec![50, 100, 200, 400],
            probe_states: 200,
            surface_x_cells: 51,
            oracle_instances: 50,
        }
    }
}

/// The full parameter bundle of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub geometry: RoadGeometry,
    pub dt_s: f64,
    pub limits: KinematicLimits,
    pub hdv: HdvParams,
    pub spawn: SpawnConfig,
    pub scenario: ScenarioConfig,
    pub reward: RewardParams,
    /// EMA rate of the centered variants' baseline.
    pub beta: f64,
    pub search: SearchConfig,
    pub experiment: ExperimentConfig,
    pub ats: AtsWeights,
}

impl Default for Config {
    fn default() -> Self {
        let mut c = Config {
            geometry: RoadGeometry::default(),
            dt_s: 0.1,
            limits: KinematicLimits::default(),
            hdv: HdvParams::default(),
            spawn: SpawnConfig::default(),
            scenario: ScenarioConfig::default(),
            reward: RewardParams::default(),
            beta: 0.01,
            search: SearchConfig::default(),
            experiment: ExperimentConfig::default(),
            ats: AtsWeights::default(),
        };
        c.sync_derived();
        c
    }
}

trait Value: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

impl Value for f64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("'{s}' is not finite"))
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for usize {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("'{s}' is not a non-negative integer"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for RewardKind {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        self.as_str().to_ascii_lowercase()
    }
}

impl Value for RolloutPolicy {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

impl Value for ScenarioKind {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl<T: Value> Value for Vec<T> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|x| T::parse(x.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(Value::render).collect::<Vec<_>>().join(",")
    }
}

macro_rules! config_keys {
    ($( $section:literal { $( $key:literal => $($field:ident).+ ),* $(,)? } )*) => {
        /// Every recognised key in file order, grouped by section.
        pub const SECTIONS: &[(&str, &[&str])] = &[ $( ($section, &[ $( $key ),* ]) ),* ];

        impl Config {
            fn set_key(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $( $( $key => { self.$($field).+ = Value::parse(value).map_err(|m| format!("{key}: {m}"))?; } )* )*
                    _ => return Err(format!("unknown key '{key}'")),
                }
                Ok(())
            }

            fn get_key(&self, key: &str) -> Option<String> {
                match key {
                    $( $( $key => Some(self.$($field).+.render()), )* )*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "road" {
        "road_length_m" => geometry.length_m,
        "lane_count" => geometry.lane_count,
        "lane_width_m" => geometry.lane_width_m,
        "dt_s" => dt_s,
    }
    "vehicles" {
        "v_cav_max" => limits.v_max,
        "v_hdv_max" => hdv.v_max,
        "a_cav_max" => limits.a_cav_max,
        "accel_step" => limits.accel_step,
        "lane_change_duration_s" => limits.lane_change_duration_s,
        "vehicle_length_m" => limits.vehicle_length_m,
        "hdv_b_decel" => hdv.b_decel,
        "hdv_t_react" => hdv.t_react,
        "hdv_eps" => hdv.eps_imperfection,
        "hdv_a_free" => hdv.a_free,
        "hdv_lc_gain" => hdv.lc_gain,
        "hdv_lc_politeness" => hdv.lc_politeness,
    }
    "traffic" {
        "v0_min" => spawn.v0_min,
        "v0_max" => spawn.v0_max,
        "arrival_rate_per_lane" => spawn.arrival_rate_per_lane,
        "cav_fraction" => spawn.cav_fraction,
        "min_spawn_gap_m" => spawn.min_spawn_gap_m,
        "max_cavs" => spawn.max_cavs,
        "scenario" => scenario.kind,
        "initial_cavs" => scenario.initial_cavs,
        "initial_hdvs" => scenario.initial_hdvs,
        "spawn_x_max_m" => scenario.spawn_x_max_m,
        "episode_time_s" => scenario.episode_time_s,
    }
    "reward" {
        "gamma" => reward.gamma,
        "sigma" => reward.sigma,
        "zeta" => reward.zeta,
        "v_thres" => reward.v_thres,
        "ttc_crit" => reward.ttc_crit,
        "lambda_lc" => reward.lambda_lc,
        "w_trd" => reward.w_trd,
        "w_arg" => reward.w_arg,
        "w_hdr" => reward.w_hdr,
        "w_flow" => reward.w_flow,
        "w_safe" => reward.w_safe,
        "w_freq" => reward.w_freq,
        "beta" => beta,
    }
    "search" {
        "budget" => search.budget,
        "uct_c" => search.uct_c,
        "rollout_horizon" => search.rollout_horizon,
        "rollout_policy" => search.rollout_policy,
    }
    "experiments" {
        "variant" => experiment.variant,
        "variants" => experiment.variants,
        "budgets" => experiment.budgets,
        "probe_states" => experiment.probe_states,
        "surface_x_cells" => experiment.surface_x_cells,
        "oracle_instances" => experiment.oracle_instances,
    }
    "score" {
        "ats_w_velocity" => ats.velocity,
        "ats_w_ttc" => ats.ttc,
        "ats_w_success" => ats.success,
        "ats_w_collisions" => ats.collisions,
        "ats_w_jerk" => ats.jerk,
        "ats_velocity_anchor" => ats.velocity_anchor,
        "ats_ttc_anchor" => ats.ttc_anchor,
        "ats_collisions_anchor" => ats.collisions_anchor,
        "ats_jerk_anchor" => ats.jerk_anchor,
    }
}

impl Config {
    /// Recomputes fields that mirror other parameters.
    fn sync_derived(&mut self) {
        if let Ok(g) = RoadGeometry::new(self.geometry.length_m, self.geometry.lane_count, self.geometry.lane_width_m)
        {
            self.geometry = g;
        }
        self.reward = self.reward.with_geometry(&self.geometry, self.limits.vehicle_length_m);
        self.reward.v_max = self.limits.v_max;
        self.search.discount = self.reward.gamma;
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !(self.dt_s > 0.0) {
            return Err(Error::ConfigInvariant("dt_s must be > 0".into()));
        }
        self.limits.validate()?;
        self.hdv.validate()?;
        self.spawn.validate(self.limits.v_max.min(self.hdv.v_max))?;
        self.reward.validate()?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::ConfigInvariant("beta must lie in [0, 1]".into()));
        }
        self.search.validate()?;
        self.ats.validate()?;
        let s = &self.scenario;
        if !(s.episode_time_s > 0.0) {
            return Err(Error::ConfigInvariant("episode_time_s must be > 0".into()));
        }
        if !(s.spawn_x_max_m > 0.0 && s.spawn_x_max_m < self.geometry.length_m) {
            return Err(Error::ConfigInvariant("spawn_x_max_m must lie inside the road".into()));
        }
        if s.initial_cavs > 4 || self.spawn.max_cavs > 4 {
            return Err(Error::ConfigInvariant("at most 4 CAVs can be planned jointly".into()));
        }
        let e = &self.experiment;
        if e.variants.is_empty() {
            return Err(Error::ConfigInvariant("variants must not be empty".into()));
        }
        if e.budgets.is_empty() || e.budgets[0] == 0 || e.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConfigInvariant("budgets must be positive and strictly increasing".into()));
        }
        if e.surface_x_cells < 2 {
            return Err(Error::ConfigInvariant("surface_x_cells must be >= 2".into()));
        }
        Ok(())
    }

    /// Parses `text`; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| Error::ConfigSyntax {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(syntax(format!("duplicate key '{key}'")));
            }
            cfg.set_key(key, value).map_err(syntax)?;
        }
        if seen.contains("w_trd") != seen.contains("w_arg") {
            let total = cfg.reward.w_trd + cfg.reward.w_arg;
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::ConfigInvariant(format!(
                    "w_trd + w_arg must equal 1 (got {total}); override both together"
                )));
            }
        }
        cfg.sync_derived();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; the literal path `default` yields the built-in
    /// defaults.
    pub fn load(path: &Path) -> Result<Config> {
        if path.as_os_str() == "default" {
            return Ok(Config::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text, &path.display().to_string())
    }

    /// Renders every key, so that `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (i, (section, keys)) in SECTIONS.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("# {section}\n"));
            for key in *keys {
                let value = self.get_key(key).expect("listed keys are readable");
                out.push_str(&format!("{key} = {value}\n"));
            }
        }
        out
    }

    pub fn models(&self) -> PlannerModels {
        PlannerModels {
            reward: self.reward,
            hdv: self.hdv,
            spawn: self.lookahead_spawn(),
        }
    }

    /// Arrivals used by the simulator for this scenario.
    pub fn lookahead_spawn(&self) -> SpawnConfig {
        match self.scenario.kind {
            ScenarioKind::Fixed => SpawnConfig::disabled(),
            ScenarioKind::Spawning => self.spawn,
        }
    }
}
