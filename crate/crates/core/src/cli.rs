//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::harness::{
    budget_sweep, build_scenario, create_dir, evaluate_policy, seed_list, write_episode_dir, write_json,
    write_provenance, write_sweep, SweepTable,
};
use crate::metrics::{compute_metrics, write_rows, TrajectoryLog};
use crate::oracle::{run_suite, SuiteConfig};
use crate::planner::{derive_seed, plan_with_tree, SearchConfig};
use crate::rewards::{RewardKind, RewardVariant};
use crate::snr::{action_gap_probe, reward_surface, sample_probe_states, RewardSurface, SurfaceSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_CONTRACT: i32 = 4;
pub const EXIT_ORACLE: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "hdr-drive", version, about = "Reward-variant experiments for cooperative highway driving")]
pub struct Cli {
    /// Parameter file, or `default` for the built-in values.
    #[arg(long, global = true, default_value = "default")]
    pub config: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Run directory to write.
    #[arg(long, global = true, default_value = "runs/latest")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    pub episodes: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct PlannerArgs {
    /// Reward variant: hdr, gnr, ctr or cth. Defaults to the config value.
    #[arg(long)]
    pub variant: Option<RewardKind>,
    /// Simulations per decision. Defaults to the config value.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-loop episodes with one reward variant driving the planner.
    Simulate(PlannerArgs),
    /// One planning decision from the initial scenario, with root statistics.
    Plan(PlannerArgs),
    /// Budget by variant grid over `--episodes` seeds.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<RewardKind>>,
    },
    /// Policy-invariance checks on random tabular MDPs.
    Oracle {
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Inter-action reward gaps and reward surfaces.
    Snr {
        #[arg(long)]
        states: Option<usize>,
    },
    /// Recompute metrics from a run directory's logs.
    Metrics {
        #[arg(long)]
        log: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::ConfigSyntax { .. } | Error::ConfigInvariant(_) => EXIT_CONFIG,
        Error::Contract(_) => EXIT_CONTRACT,
        Error::Mdp(_) | Error::Metrics(_) | Error::Csv(_) | Error::Json(_) => EXIT_FAILURE,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = Config::load(&cli.config)?;
    if cli.episodes == 0 {
        return Err(Error::ConfigInvariant("--episodes must be >= 1".into()));
    }
    let seeds = seed_list(cli.seed, cli.episodes);
    match &cli.command {
        Command::Simulate(a) => simulate(&cfg, a, &seeds, &cli.out, out),
        Command::Plan(a) => plan_cmd(&cfg, a, cli.seed, &cli.out, out),
        Command::Sweep { budgets, variants } => {
            let budgets = budgets.clone().unwrap_or_else(|| cfg.experiment.budgets.clone());
            let variants = variants.clone().unwrap_or_else(|| cfg.experiment.variants.clone());
            let table = budget_sweep(&cfg, &budgets, &variants, &seeds)?;
            write_sweep(&cli.out, &cfg, &seeds, &table)?;
            print_sweep(&table, out).map_err(io_out)?;
            Ok(EXIT_OK)
        }
        Command::Oracle { instances } => oracle_cmd(&cfg, instances.unwrap_or(cfg.experiment.oracle_instances), cli.seed, &cli.out, out),
        Command::Snr { states } => snr_cmd(&cfg, states.unwrap_or(cfg.experiment.probe_states), cli.seed, &cli.out, out),
        Command::Metrics { log } => metrics_cmd(&cfg, log, &cli.out, out),
    }
}

fn simulate(cfg: &Config, a: &PlannerArgs, seeds: &[u64], dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let kind = a.variant.unwrap_or(cfg.experiment.variant);
    let budget = a.budget.unwrap_or(cfg.search.budget);
    let eval = evaluate_policy(cfg, kind, budget, seeds)?;
    write_provenance(dir, cfg, seeds)?;
    for (i, e) in eval.episodes.iter().enumerate() {
        write_episode_dir(&dir.join(format!("episode_{i:03}")), cfg, e)?;
    }
    let table = SweepTable {
        rows: eval.episodes.iter().map(crate::harness::SweepRow::from_episode).collect(),
        summary: Vec::new(),
    };
    write_rows(&dir.join("aggregate.csv"), &table.rows)?;
    write_json(&dir.join("metrics.json"), &eval.aggregate)?;
    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "variant {} budget {} episodes {}", kind, budget, seeds.len())?;
        for e in &eval.episodes {
            writeln!(
                out,
                "seed {:>6}  steps {:>4}  ats {:.4}  v {:.2}  collisions {}  success {}",
                e.seed,
                e.steps,
                e.report.ats,
                e.report.avg_velocity,
                e.report.collisions,
                e.report.success_rate.map_or("n/a".to_string(), |s| format!("{s:.2}"))
            )?;
        }
        Ok(())
    };
    w(out).map_err(io_out)?;
    Ok(EXIT_OK)
}

fn plan_cmd(cfg: &Config, a: &PlannerArgs, seed: u64, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let kind = a.variant.unwrap_or(cfg.experiment.variant);
    let world = build_scenario(cfg, seed)?;
    let search = SearchConfig {
        budget: a.budget.unwrap_or(cfg.search.budget),
        determinization_seed_base: derive_seed(seed, 0),
        ..cfg.search
    };
    let mut variant = RewardVariant::new(kind, cfg.beta);
    let (result, tree) = plan_with_tree(&world, &search, &mut variant, &cfg.models())?;
    write_provenance(dir, cfg, &[seed])?;
    #[derive(serde::Serialize)]
    struct PlanDump<'a> {
        variant: RewardKind,
        budget: usize,
        cav_ids: Vec<u32>,
        chosen: Vec<String>,
        root_visits: u64,
        node_count: usize,
        visits_conserved: bool,
        root_edges: &'a [crate::planner::RootEdge],
    }
    let chosen: Vec<String> = result.action.0.values().map(|a| a.to_string()).collect();
    write_json(
        &dir.join("plan.json"),
        &PlanDump {
            variant: kind,
            budget: search.budget,
            cav_ids: world.cav_ids().iter().map(|v| v.0).collect(),
            chosen: chosen.clone(),
            root_visits: result.root_visits,
            node_count: result.node_count,
            visits_conserved: tree.visits_conserved(),
            root_edges: &result.root_edges,
        },
    )?;
    let mut top: Vec<_> = result.root_edges.iter().collect();
    top.sort_by(|x, y| y.visits.cmp(&x.visits).then(x.index.cmp(&y.index)));
    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "variant {kind} budget {} nodes {}", search.budget, result.node_count)?;
        writeln!(out, "chosen {}", chosen.join(" "))?;
        for e in top.iter().take(10) {
            let acts: Vec<String> = e.action.0.values().map(|a| a.to_string()).collect();
            writeln!(out, "{:>6}  N {:>4}  Q {:>10.4}  {}", e.index, e.visits, e.mean_value, acts.join(" "))?;
        }
        Ok(())
    };
    w(out).map_err(io_out)?;
    Ok(EXIT_OK)
}

fn oracle_cmd(cfg: &Config, instances: usize, seed: u64, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let suite = SuiteConfig {
        instances,
        ..SuiteConfig::default()
    };
    let report = run_suite(seed, &suite)?;
    write_provenance(dir, cfg, &[seed])?;
    write_json(&dir.join("oracle.json"), &report)?;
    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "instance  policy_sets_equal  max_q_shift_error  result")?;
        for r in &report.rows {
            writeln!(
                out,
                "{:>8}  {:>17}  {:>17.3e}  {}",
                r.instance,
                r.policy_sets_equal,
                r.max_q_shift_error,
                if r.passed { "pass" } else { "FAIL" }
            )?;
        }
        writeln!(
            out,
            "non-potential bonus changes policy: {} (after {} draws)",
            report.counterexample.found, report.counterexample.attempts
        )?;
        for c in &report.centering {
            writeln!(
                out,
                "centering beta {:<5} rankings diverged at {}/{} states",
                c.beta, c.divergent_states, c.states_checked
            )?;
        }
        writeln!(out, "max deviation {:.3e}  overall {}", report.max_q_shift_error, if report.passed { "PASS" } else { "FAIL" })
    };
    w(out).map_err(io_out)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_ORACLE })
}

fn write_matrix(path: &Path, s: &RewardSurface, grid: &[Vec<f64>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["lane".to_string()];
    header.extend(s.xs.iter().map(|x| format!("{x:?}")));
    w.write_record(&header)?;
    for (lane, row) in grid.iter().enumerate() {
        let mut rec = vec![lane.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn snr_cmd(cfg: &Config, states: usize, seed: u64, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let probe_states = sample_probe_states(seed, states, &cfg.geometry, &cfg.limits, &cfg.hdv)?;
    let kinds = &cfg.experiment.variants;
    let report = action_gap_probe(&probe_states, kinds, &cfg.reward, &cfg.hdv)?;
    create_dir(dir)?;
    write_provenance(dir, cfg, &[seed])?;
    write_json(&dir.join("snr.json"), &report)?;
    let spec = SurfaceSpec {
        x_max: cfg.geometry.length_m,
        x_cells: cfg.experiment.surface_x_cells,
        dt_s: cfg.dt_s,
        ..SurfaceSpec::default()
    };
    for &kind in kinds {
        let s = reward_surface(kind, &cfg.geometry, &spec, &cfg.reward)?;
        let name = kind.as_str().to_ascii_lowercase();
        for (grid_name, grid) in [("lc", &s.lc), ("lk", &s.lk), ("rc", &s.rc), ("phi", &s.phi)] {
            write_matrix(&dir.join(format!("surface_{name}_{grid_name}.csv")), &s, grid)?;
        }
    }
    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "probe states {}", report.states)?;
        writeln!(out, "variant  mean_gap     p5_gap       p95_gap      max_long_gap")?;
        for v in &report.variants {
            let (Some(g), Some(l)) = (v.term_gap, v.longitudinal_gap) else {
                continue;
            };
            writeln!(out, "{:<7}  {:<11.4e}  {:<11.4e}  {:<11.4e}  {:<11.4e}", v.kind, g.mean, g.p5, g.p95, l.max)?;
        }
        Ok(())
    };
    w(out).map_err(io_out)?;
    Ok(EXIT_OK)
}

fn metrics_cmd(cfg: &Config, log_dir: &Path, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let log = TrajectoryLog::read_csv(&log_dir.join("steps.csv"), &log_dir.join("events.csv"))?;
    let report = compute_metrics(&log, log.horizon_s(), &cfg.ats)?;
    create_dir(dir)?;
    write_json(&dir.join("metrics.json"), &report)?;
    let text = serde_json::to_string_pretty(&report)?;
    writeln!(out, "{text}").map_err(io_out)?;
    Ok(EXIT_OK)
}

fn print_sweep(table: &SweepTable, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "variant  budget  episodes  mean_ats  std_ats  mean_collisions")?;
    for s in &table.summary {
        writeln!(
            out,
            "{:<7}  {:>6}  {:>8}  {:.4}    {:.4}   {:.3}",
            s.variant, s.budget, s.episodes, s.mean_ats, s.std_ats, s.mean_collisions
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;
    use crate::metrics::MetricsReport;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_from_args(std::iter::once("hdr-drive").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn missing_config_is_an_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        let (code, _, err) = run(&["--config", "/nonexistent/params.txt", "--out", s(tmp.path()), "oracle"]);
        assert_eq!(code, EXIT_IO);
        assert!(err.contains("/nonexistent/params.txt"));
    }

    #[test]
    fn bad_config_reports_the_line() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tmp.path().join("bad.txt");
        fs::write(&cfg, "lane_count = 4\nno_such_key = 1\n").unwrap();
        let (code, _, err) = run(&["--config", s(&cfg), "--out", s(tmp.path()), "oracle"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn config_invariant_violation_exits_with_config_code() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tmp.path().join("cfg.txt");
        fs::write(&cfg, "budgets = 100,50\n").unwrap();
        let (code, _, _) = run(&["--config", s(&cfg), "--out", s(tmp.path()), "sweep"]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        let (code, _, err) = run(&["fly"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(!err.is_empty());
    }

    #[test]
    fn help_exits_cleanly() {
        let (code, out, _) = run(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("simulate"));
    }

    #[test]
    fn emitted_config_loads_back() {
        let tmp = tempfile::tempdir().unwrap();
        let (code, _, _) = run(&["--out", s(tmp.path()), "oracle", "--instances", "2"]);
        assert_eq!(code, EXIT_OK);
        let emitted = tmp.path().join("config.txt");
        let again = tmp.path().join("again");
        let (code, _, err) = run(&["--config", s(&emitted), "--out", s(&again), "oracle", "--instances", "2"]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert_eq!(fs::read(&emitted).unwrap(), fs::read(again.join("config.txt")).unwrap());
        assert_eq!(
            fs::read(tmp.path().join("oracle.json")).unwrap(),
            fs::read(again.join("oracle.json")).unwrap()
        );
    }

    #[test]
    fn metrics_recomputed_from_logs_match_the_episode() {
        let tmp = tempfile::tempdir().unwrap();
        let sim = tmp.path().join("sim");
        let (code, _, err) = run(&["--seed", "3", "--out", s(&sim), "simulate", "--budget", "8"]);
        assert_eq!(code, EXIT_OK, "{err}");
        let episode = sim.join("episode_000");
        for f in ["steps.csv", "events.csv", "metrics.json", "config.txt", "seeds.txt"] {
            assert!(episode.join(f).is_file(), "missing {f}");
        }
        let re = tmp.path().join("re");
        let (code, _, err) = run(&["--out", s(&re), "metrics", "--log", s(&episode)]);
        assert_eq!(code, EXIT_OK, "{err}");
        let original: MetricsReport = serde_json::from_slice(&fs::read(episode.join("metrics.json")).unwrap()).unwrap();
        let recomputed: MetricsReport = serde_json::from_slice(&fs::read(re.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(original, recomputed);
    }

    #[test]
    fn metrics_on_missing_log_is_an_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        let (code, _, _) = run(&["--out", s(tmp.path()), "metrics", "--log", "/nonexistent/run"]);
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn snr_writes_surface_matrices() {
        let tmp = tempfile::tempdir().unwrap();
        let (code, out, err) = run(&["--out", s(tmp.path()), "snr", "--states", "10"]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert!(!out.is_empty());
        for v in ["hdr", "gnr", "ctr", "cth"] {
            for g in ["lc", "lk", "rc", "phi"] {
                assert!(tmp.path().join(format!("surface_{v}_{g}.csv")).is_file(), "{v} {g}");
            }
        }
    }
}
