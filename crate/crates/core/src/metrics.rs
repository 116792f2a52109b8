//! Objective traffic indicators, the composite traffic score and a sign test.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Infinite or very large TTC values are capped here before averaging.
pub const TTC_CAP_S: f64 = 10.0;

/// One vehicle at one step. Reward columns are empty for HDVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: u64,
    pub t: f64,
    pub id: u32,
    pub kind: String,
    pub lane: usize,
    pub x: f64,
    pub v_x: f64,
    pub a_x: f64,
    pub lat_action: String,
    pub long_action: String,
    pub r_trd: Option<f64>,
    pub r_arg: Option<f64>,
    pub r_freq: Option<f64>,
    pub r_safe_j: f64,
    pub ttc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Spawn,
    Exit,
    Collision,
    LaneChange,
    Timeout,
    /// Marks the final step of an episode.
    End,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Spawn => "spawn",
            EventKind::Exit => "exit",
            EventKind::Collision => "collision",
            EventKind::LaneChange => "lane_change",
            EventKind::Timeout => "timeout",
            EventKind::End => "end",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spawn" => Ok(EventKind::Spawn),
            "exit" => Ok(EventKind::Exit),
            "collision" => Ok(EventKind::Collision),
            "lane_change" => Ok(EventKind::LaneChange),
            "timeout" => Ok(EventKind::Timeout),
            "end" => Ok(EventKind::End),
            other => Err(Error::Metrics(format!("unknown event '{other}'"))),
        }
    }
}

/// Discrete episode event. `other` is the second vehicle of a collision;
/// `success` is set on exits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub step: u64,
    pub t: f64,
    pub event: EventKind,
    pub id: u32,
    pub kind: String,
    pub other: Option<u32>,
    pub other_kind: Option<String>,
    pub success: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub steps: Vec<StepRow>,
    pub events: Vec<EventRow>,
}

impl TrajectoryLog {
    /// Episode length: the time of the end marker, else the latest time
    /// seen in the log.
    pub fn horizon_s(&self) -> f64 {
        if let Some(e) = self.events.iter().find(|e| e.event == EventKind::End) {
            return e.t;
        }
        let steps = self.steps.iter().map(|r| r.t);
        steps.chain(self.events.iter().map(|e| e.t)).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, steps_path: &Path, events_path: &Path) -> Result<()> {
        write_rows(steps_path, &self.steps)?;
        write_rows(events_path, &self.events)
    }

    pub fn read_csv(steps_path: &Path, events_path: &Path) -> Result<Self> {
        Ok(TrajectoryLog {
            steps: read_rows(steps_path)?,
            events: read_rows(events_path)?,
        })
    }
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Exits per hour.
    pub inst_flow: f64,
    pub avg_velocity: f64,
    pub avg_min_ttc: f64,
    pub collisions_per_hour: f64,
    /// Absent when no CAV finished.
    pub success_rate: Option<f64>,
    pub avg_abs_jerk: f64,
    /// Absent when no vehicle changed lanes twice.
    pub avg_lc_interval: Option<f64>,
    pub ats: f64,
    pub horizon_s: f64,
    pub exits: usize,
    pub collisions: usize,
    pub cav_outcomes: usize,
    pub ttc_cap_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtsWeights {
    pub velocity: f64,
    pub ttc: f64,
    pub success: f64,
    pub collisions: f64,
    pub jerk: f64,
    pub velocity_anchor: f64,
    pub ttc_anchor: f64,
    pub collisions_anchor: f64,
    pub jerk_anchor: f64,
}

impl Default for AtsWeights {
    fn default() -> Self {
        AtsWeights {
            velocity: 0.25,
            ttc: 0.15,
            success: 0.30,
            collisions: 0.20,
            jerk: 0.10,
            velocity_anchor: 30.0,
            ttc_anchor: TTC_CAP_S,
            collisions_anchor: 1.0,
            jerk_anchor: 5.0,
        }
    }
}

impl AtsWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.velocity, self.ttc, self.success, self.collisions, self.jerk];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::ConfigInvariant("ATS weights must be >= 0".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigInvariant("ATS weights must sum to 1".into()));
        }
        let anchors = [self.velocity_anchor, self.ttc_anchor, self.collisions_anchor, self.jerk_anchor];
        if anchors.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::ConfigInvariant("ATS anchors must be > 0".into()));
        }
        Ok(())
    }
}

fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Weighted score of normalised indicators in `[0, 1]`. An absent success
/// rate scores 0.
pub fn ats(report: &MetricsReport, w: &AtsWeights) -> Result<f64> {
    w.validate()?;
    let score = w.velocity * unit(report.avg_velocity / w.velocity_anchor)
        + w.ttc * unit(report.avg_min_ttc / w.ttc_anchor)
        + w.success * unit(report.success_rate.unwrap_or(0.0))
        + w.collisions * (1.0 - unit(report.collisions_per_hour / w.collisions_anchor))
        + w.jerk * (1.0 - unit(report.avg_abs_jerk / w.jerk_anchor));
    Ok(score)
}

/// Indicators of one episode of length `horizon_s`.
pub fn compute_metrics(log: &TrajectoryLog, horizon_s: f64, w: &AtsWeights) -> Result<MetricsReport> {
    if log.steps.is_empty() {
        return Err(Error::Metrics("trajectory log has no steps".into()));
    }
    if !(horizon_s > 0.0) {
        return Err(Error::Metrics("horizon must be > 0".into()));
    }
    let hours = horizon_s / 3600.0;

    let mut fleet: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    let mut per_vehicle: BTreeMap<u32, Vec<&StepRow>> = BTreeMap::new();
    for row in &log.steps {
        let e = fleet.entry(row.step).or_insert((0.0, 0));
        e.0 += row.v_x;
        e.1 += 1;
        per_vehicle.entry(row.id).or_default().push(row);
    }
    let avg_velocity = fleet.values().map(|(s, n)| s / *n as f64).sum::<f64>() / fleet.len() as f64;

    let avg_min_ttc = per_vehicle
        .values()
        .map(|rows| rows.iter().map(|r| r.ttc).fold(f64::INFINITY, f64::min).min(TTC_CAP_S))
        .sum::<f64>()
        / per_vehicle.len() as f64;

    let mut jerk_sum = 0.0;
    let mut jerk_n = 0usize;
    for rows in per_vehicle.values() {
        for pair in rows.windows(2) {
            let dt = pair[1].t - pair[0].t;
            if dt > 0.0 {
                jerk_sum += (pair[1].a_x - pair[0].a_x).abs() / dt;
                jerk_n += 1;
            }
        }
    }
    let avg_abs_jerk = if jerk_n == 0 { 0.0 } else { jerk_sum / jerk_n as f64 };

    let mut exits = 0;
    let mut collisions = 0;
    let mut cav_outcomes = 0;
    let mut cav_successes = 0;
    let mut lane_changes: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for e in &log.events {
        let is_cav = e.kind == "CAV";
        match e.event {
            EventKind::Exit => {
                exits += 1;
                if is_cav {
                    cav_outcomes += 1;
                    if e.success == Some(true) {
                        cav_successes += 1;
                    }
                }
            }
            EventKind::Collision => {
                collisions += 1;
                cav_outcomes += usize::from(is_cav);
                cav_outcomes += usize::from(e.other_kind.as_deref() == Some("CAV"));
            }
            EventKind::Timeout => cav_outcomes += usize::from(is_cav),
            EventKind::LaneChange => lane_changes.entry(e.id).or_default().push(e.t),
            EventKind::Spawn | EventKind::End => {}
        }
    }
    let success_rate = (cav_outcomes > 0).then(|| cav_successes as f64 / cav_outcomes as f64);

    let mut intervals = Vec::new();
    for times in lane_changes.values() {
        if times.len() >= 2 {
            intervals.extend(times.windows(2).map(|w| w[1] - w[0]));
        }
    }
    let avg_lc_interval = (!intervals.is_empty()).then(|| intervals.iter().sum::<f64>() / intervals.len() as f64);

    let mut report = MetricsReport {
        inst_flow: exits as f64 / hours,
        avg_velocity,
        avg_min_ttc,
        collisions_per_hour: collisions as f64 / hours,
        success_rate,
        avg_abs_jerk,
        avg_lc_interval,
        ats: 0.0,
        horizon_s,
        exits,
        collisions,
        cav_outcomes,
        ttc_cap_s: TTC_CAP_S,
    };
    report.ats = ats(&report, w)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Sample mean and standard deviation (n - 1 denominator).
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(MeanStd { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub episodes: usize,
    pub inst_flow: Option<MeanStd>,
    pub avg_velocity: Option<MeanStd>,
    pub avg_min_ttc: Option<MeanStd>,
    pub collisions_per_hour: Option<MeanStd>,
    pub success_rate: Option<MeanStd>,
    pub avg_abs_jerk: Option<MeanStd>,
    pub avg_lc_interval: Option<MeanStd>,
    pub ats: Option<MeanStd>,
    pub collisions: Option<MeanStd>,
}

/// Mean and spread across episodes; absent per-episode values are skipped.
pub fn aggregate(reports: &[MetricsReport]) -> AggregateReport {
    let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        MeanStd::of(&reports.iter().filter_map(f).collect::<Vec<_>>())
    };
    AggregateReport {
        episodes: reports.len(),
        inst_flow: col(&|r| Some(r.inst_flow)),
        avg_velocity: col(&|r| Some(r.avg_velocity)),
        avg_min_ttc: col(&|r| Some(r.avg_min_ttc)),
        collisions_per_hour: col(&|r| Some(r.collisions_per_hour)),
        success_rate: col(&|r| r.success_rate),
        avg_abs_jerk: col(&|r| Some(r.avg_abs_jerk)),
        avg_lc_interval: col(&|r| r.avg_lc_interval),
        ats: col(&|r| Some(r.ats)),
        collisions: col(&|r| Some(r.collisions as f64)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

/// One-sided paired sign test of `a > b`; exact ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::Metrics("sign test needs paired samples".into()));
    }
    let mut wins = 0;
    let mut losses = 0;
    let mut ties = 0;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            wins += 1;
        } else if x < y {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n = wins + losses;
    let p_value = if n == 0 {
        1.0
    } else {
        // Sum C(n, k) / 2^n for k >= wins in log space.
        let ln_half_n = n as f64 * 0.5f64.ln();
        let mut ln_c = 0.0;
        let mut total = 0.0;
        for k in 0..=n {
            if k > 0 {
                ln_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            if k >= wins {
                total += (ln_c + ln_half_n).exp();
            }
        }
        total.min(1.0)
    };
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(step: u64, id: u32, v_x: f64, a_x: f64, ttc: f64) -> StepRow {
        StepRow {
            step,
            t: step as f64 * 0.1,
            id,
            kind: "HDV".into(),
            lane: 1,
            x: 0.0,
            v_x,
            a_x,
            lat_action: String::new(),
            long_action: String::new(),
            r_trd: None,
            r_arg: None,
            r_freq: None,
            r_safe_j: 0.0,
            ttc,
        }
    }

    fn event(step: u64, event: EventKind, id: u32, kind: &str) -> EventRow {
        EventRow {
            step,
            t: step as f64 * 0.1,
            event,
            id,
            kind: kind.into(),
            other: None,
            other_kind: None,
            success: None,
        }
    }

    fn report(v: f64, ttc: f64, success: f64, coll: f64, jerk: f64) -> MetricsReport {
        MetricsReport {
            inst_flow: 0.0,
            avg_velocity: v,
            avg_min_ttc: ttc,
            collisions_per_hour: coll,
            success_rate: Some(success),
            avg_abs_jerk: jerk,
            avg_lc_interval: None,
            ats: 0.0,
            horizon_s: 1.0,
            exits: 0,
            collisions: 0,
            cav_outcomes: 0,
            ttc_cap_s: TTC_CAP_S,
        }
    }

    #[test]
    fn constant_speed_vehicle() {
        let log = TrajectoryLog {
            steps: (0..50).map(|s| row(s, 0, 20.0, 0.0, f64::INFINITY)).collect(),
            events: vec![],
        };
        let r = compute_metrics(&log, 5.0, &AtsWeights::default()).unwrap();
        assert_eq!(r.avg_velocity, 20.0);
        assert_eq!(r.avg_abs_jerk, 0.0);
        assert_eq!(r.avg_min_ttc, TTC_CAP_S);
        assert_eq!(r.success_rate, None);
        assert_eq!(r.avg_lc_interval, None);
    }

    #[test]
    fn collision_rate_arithmetic() {
        let mut c = event(3, EventKind::Collision, 0, "HDV");
        c.other = Some(1);
        c.other_kind = Some("HDV".into());
        let log = TrajectoryLog {
            steps: vec![row(0, 0, 10.0, 0.0, 5.0)],
            events: vec![c],
        };
        let r = compute_metrics(&log, 1800.0, &AtsWeights::default()).unwrap();
        assert_eq!(r.collisions_per_hour, 2.0);
    }

    #[test]
    fn hand_worked_three_vehicle_ttc() {
        // Vehicle 0: ttc 4.0, 2.5, 3.0 -> 2.5
        // Vehicle 1: ttc inf, 12.0     -> capped 10
        // Vehicle 2: ttc 1.5           -> 1.5
        let log = TrajectoryLog {
            steps: vec![
                row(0, 0, 10.0, 0.0, 4.0),
                row(0, 1, 12.0, 0.0, f64::INFINITY),
                row(1, 0, 10.0, 0.0, 2.5),
                row(1, 1, 12.0, 0.0, 12.0),
                row(1, 2, 8.0, 0.0, 1.5),
                row(2, 0, 10.0, 0.0, 3.0),
            ],
            events: vec![],
        };
        let r = compute_metrics(&log, 0.3, &AtsWeights::default()).unwrap();
        assert!((r.avg_min_ttc - 14.0 / 3.0).abs() < 1e-12);
        // Fleet means per step: 11, 10, 10.
        assert!((r.avg_velocity - 31.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn jerk_from_acceleration_changes() {
        let log = TrajectoryLog {
            steps: vec![row(0, 0, 10.0, 0.0, 9.0), row(1, 0, 10.0, 1.0, 9.0), row(2, 0, 10.0, -1.0, 9.0)],
            events: vec![],
        };
        let r = compute_metrics(&log, 0.3, &AtsWeights::default()).unwrap();
        assert!((r.avg_abs_jerk - 15.0).abs() < 1e-9);
    }

    #[test]
    fn success_and_lane_change_interval() {
        let mut ok = event(10, EventKind::Exit, 0, "CAV");
        ok.success = Some(true);
        let mut bad = event(11, EventKind::Exit, 1, "CAV");
        bad.success = Some(false);
        let mut hdv_exit = event(12, EventKind::Exit, 5, "HDV");
        hdv_exit.success = Some(true);
        let mut crash = event(13, EventKind::Collision, 2, "CAV");
        crash.other = Some(6);
        crash.other_kind = Some("HDV".into());
        let timeout = event(14, EventKind::Timeout, 3, "CAV");
        let log = TrajectoryLog {
            steps: vec![row(0, 0, 10.0, 0.0, 9.0)],
            events: vec![
                ok,
                bad,
                hdv_exit,
                crash,
                timeout,
                event(2, EventKind::LaneChange, 0, "CAV"),
                event(12, EventKind::LaneChange, 0, "CAV"),
                event(42, EventKind::LaneChange, 0, "CAV"),
                event(5, EventKind::LaneChange, 1, "CAV"),
            ],
        };
        let r = compute_metrics(&log, 3.6, &AtsWeights::default()).unwrap();
        assert_eq!(r.cav_outcomes, 4);
        assert_eq!(r.success_rate, Some(0.25));
        assert_eq!(r.exits, 3);
        assert!((r.inst_flow - 3000.0).abs() < 1e-9);
        assert!((r.avg_lc_interval.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(compute_metrics(&TrajectoryLog::default(), 1.0, &AtsWeights::default()).is_err());
    }

    #[test]
    fn ats_anchor_values() {
        let w = AtsWeights::default();
        assert!((ats(&report(30.0, 10.0, 1.0, 0.0, 0.0), &w).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ats(&report(0.0, 0.0, 0.0, 1.0, 5.0), &w).unwrap(), 0.0);
        assert!((ats(&report(15.0, 5.0, 0.5, 0.5, 2.5), &w).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ats_rejects_bad_weights() {
        let w = AtsWeights {
            velocity: 0.5,
            ..AtsWeights::default()
        };
        assert!(ats(&report(1.0, 1.0, 1.0, 0.0, 0.0), &w).is_err());
    }

    #[test]
    fn sign_test_thresholds() {
        let a = vec![1.0; 20];
        let mut b = vec![0.0; 15];
        b.extend(vec![2.0; 5]);
        let t = sign_test(&a, &b).unwrap();
        assert_eq!((t.wins, t.losses), (15, 5));
        assert!((t.p_value - 21700.0 / 1048576.0).abs() < 1e-12);
        let mut b14 = vec![0.0; 14];
        b14.extend(vec![2.0; 6]);
        assert!(sign_test(&a, &b14).unwrap().p_value > 0.05);
        assert_eq!(sign_test(&a, &a).unwrap().p_value, 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = event(1, EventKind::Exit, 0, "CAV");
        e.success = Some(true);
        let mut r = row(0, 0, 10.0, 0.5, f64::INFINITY);
        r.r_trd = Some(0.25);
        let log = TrajectoryLog {
            steps: vec![r, row(1, 0, 10.0, 0.5, 3.0)],
            events: vec![e],
        };
        let (s, ev) = (dir.path().join("s.csv"), dir.path().join("e.csv"));
        log.write_csv(&s, &ev).unwrap();
        assert_eq!(TrajectoryLog::read_csv(&s, &ev).unwrap(), log);
    }

    proptest! {
        #[test]
        fn ats_is_bounded_and_monotone(
            v in 0.0f64..30.0, ttc in 0.0f64..10.0, s in 0.0f64..1.0,
            c in 0.0f64..1.0, j in 0.0f64..5.0, d in 0.01f64..0.5,
        ) {
            let w = AtsWeights::default();
            let base = ats(&report(v, ttc, s, c, j), &w).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            if v + d <= 30.0 { prop_assert!(ats(&report(v + d, ttc, s, c, j), &w).unwrap() > base); }
            if ttc + d <= 10.0 { prop_assert!(ats(&report(v, ttc + d, s, c, j), &w).unwrap() > base); }
            if s + d <= 1.0 { prop_assert!(ats(&report(v, ttc, s + d, c, j), &w).unwrap() > base); }
            if c + d <= 1.0 { prop_assert!(ats(&report(v, ttc, s, c + d, j), &w).unwrap() < base); }
            if j + d <= 5.0 { prop_assert!(ats(&report(v, ttc, s, c, j + d), &w).unwrap() < base); }
        }
    }
}
