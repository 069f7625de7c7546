//! `movetouch` command-line front end.
//!
//! Exit codes: 0 success, 1 data failure, 2 usage or configuration error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::analysis::{
    all_pairs, bundled_matrix, confusion_from_trials, one_way_anova, paired_t_bonferroni, parse_trials,
    participant_rates, recognition_rates, rm_anova, AnalysisError, ConfusionMatrix, TrialRecord, WristSide,
};
use crate::geometry::RigidTransform;
use crate::haptics::{pattern_duration, pattern_frequency, render_pattern, timeline_csv, PatternId};
use crate::marker_pose::{calibrate_base, estimate_pose, parse_observations, CameraIntrinsics, DEFAULT_MARKER_SIDE};
use crate::safety::{speed_bound, SafetyZones};
use crate::sim::{self, Scenario, SimOutput};

pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.json");

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(name = "movetouch", version, about = "Marker tracking, haptic guidance and safety-zone simulation tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a workspace simulation and write its trace and metrics.
    Simulate {
        /// Scenario JSON; the bundled default scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Trace CSV output path.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics JSON output path.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Run one simulation per seed in `a..b` (or `a..=b`); output file
        /// names get a `_seed<N>` suffix.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Print the motor timeline of a pattern such as `1H` or `3L`.
    Pattern { id: String },
    /// Estimate marker poses from a corner observation CSV.
    Pose {
        /// Rows of `marker_id,u0,v0,u1,v1,u2,v2,u3,v3`.
        #[arg(long)]
        observations: PathBuf,
        /// Camera intrinsics JSON.
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MARKER_SIDE)]
        marker_side: f64,
    },
    /// Locate the robot base in the camera frame from a view of the base marker.
    Calibrate {
        /// Observation CSV; the first row (or the row for `--marker-id`) is used.
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Pose of the robot base in the base-marker frame, `{"r": [...], "t": [...]}`.
        #[arg(long)]
        base_marker_to_robot_base: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MARKER_SIDE)]
        marker_side: f64,
        #[arg(long)]
        marker_id: Option<i64>,
        /// Where to write the calibration JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Confusion matrices and recognition statistics.
    Analyze {
        #[arg(value_enum)]
        mode: AnalyzeMode,
        /// Trials CSV (`participant,side,actual,perceived`) or a confusion
        /// matrix CSV. `volar` and `dorsal` name the bundled matrices.
        input: String,
        #[arg(long, value_enum, default_value_t = SideArg::Volar)]
        side: SideArg,
    },
    /// Upper bound on robot speed for given zones and human response.
    SpeedBound {
        #[arg(long, default_value_t = 0.40, allow_negative_numbers = true)]
        activation: f64,
        #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
        critical: f64,
        /// Slowest expected response time, seconds.
        #[arg(long, default_value_t = 2.41, allow_negative_numbers = true)]
        response_time: f64,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        hand_speed: f64,
        /// Distance the hand must cover to be clear, meters.
        #[arg(long, default_value_t = 0.30, allow_negative_numbers = true)]
        clearance: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnalyzeMode {
    Confusion,
    Rates,
    Anova,
    Rmanova,
    Pairwise,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Volar,
    Dorsal,
}

impl From<SideArg> for WristSide {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Volar => WristSide::Volar,
            SideArg::Dorsal => WristSide::Dorsal,
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> CliResult {
    match command {
        Command::Simulate {
            scenario,
            trace,
            metrics,
            seed,
            seeds,
        } => cmd_simulate(scenario.as_deref(), trace.as_deref(), metrics.as_deref(), seed, seeds.as_deref(), out),
        Command::Pattern { id } => cmd_pattern(&id, out),
        Command::Pose {
            observations,
            intrinsics,
            marker_side,
        } => cmd_pose(&observations, &intrinsics, marker_side, out),
        Command::Calibrate {
            observations,
            intrinsics,
            base_marker_to_robot_base,
            marker_side,
            marker_id,
            out: out_path,
        } => cmd_calibrate(
            &observations,
            &intrinsics,
            &base_marker_to_robot_base,
            marker_side,
            marker_id,
            &out_path,
            out,
        ),
        Command::Analyze { mode, input, side } => cmd_analyze(mode, &input, side.into(), out),
        Command::SpeedBound {
            activation,
            critical,
            response_time,
            hand_speed,
            clearance,
        } => cmd_speed_bound(activation, critical, response_time, hand_speed, clearance, out),
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult {
    writeln!(out, "{text}").map_err(|e| CliError::Data(format!("cannot write output: {e}")))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn parse_seed_range(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("invalid --seeds `{text}` (expected a..b or a..=b)"));
    let (a, b, inclusive) = if let Some((a, b)) = text.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = text.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(CliError::Usage(format!("--seeds `{text}` is empty")));
    }
    Ok(seeds)
}

fn with_seed_suffix(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}_seed{seed}"),
    };
    path.with_file_name(name)
}

fn cmd_simulate(
    scenario_path: Option<&Path>,
    trace: Option<&Path>,
    metrics: Option<&Path>,
    seed: Option<u64>,
    seeds: Option<&str>,
    out: &mut dyn Write,
) -> CliResult {
    let text = match scenario_path {
        Some(p) => read_input(p)?,
        None => DEFAULT_SCENARIO.to_string(),
    };
    let base = Scenario::from_json(&text).map_err(|e| CliError::Usage(format!("invalid scenario: {e}")))?;

    let (runs, suffixed): (Vec<u64>, bool) = match (seeds, seed) {
        (Some(range), _) => (parse_seed_range(range)?, true),
        (None, Some(s)) => (vec![s], false),
        (None, None) => (vec![base.seed], false),
    };
    let results: Vec<(u64, Result<SimOutput, sim::SimError>)> = runs
        .par_iter()
        .map(|&s| {
            let mut sc = base.clone();
            sc.seed = s;
            (s, sim::run(&sc))
        })
        .collect();

    for (s, result) in results {
        let output = result.map_err(|e| CliError::Usage(e.to_string()))?;
        let path_for = |p: &Path| if suffixed { with_seed_suffix(p, s) } else { p.to_path_buf() };
        if let Some(p) = trace {
            write_output(&path_for(p), &sim::trace_csv_string(&output.trace))?;
        }
        if let Some(p) = metrics {
            write_output(&path_for(p), &(to_json(&output.metrics) + "\n"))?;
        }
        let m = &output.metrics;
        emit(
            out,
            &format!(
                "seed={s} min_distance={:.6} critical_violations={} halts={} pattern_activations={}",
                m.min_distance,
                m.critical_violations,
                m.halts,
                m.pattern_activations.values().sum::<usize>()
            ),
        )?;
    }
    Ok(())
}

fn cmd_pattern(id: &str, out: &mut dyn Write) -> CliResult {
    let id: PatternId = id.parse().map_err(|e: crate::haptics::ParsePatternError| CliError::Usage(e.to_string()))?;
    let csv = timeline_csv(&render_pattern(id));
    emit(out, csv.trim_end())?;
    emit(
        out,
        &format!(
            "duration_s={} frequency_hz={}",
            pattern_duration(id),
            pattern_frequency(id)
        ),
    )
}

fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, CliError> {
    let text = read_input(path)?;
    let k: CameraIntrinsics = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    k.validate()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(k)
}

fn check_marker_side(side: f64) -> CliResult {
    if side > 0.0 && side.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--marker-side must be positive, got {side}")))
    }
}

fn cmd_pose(observations: &Path, intrinsics: &Path, marker_side: f64, out: &mut dyn Write) -> CliResult {
    check_marker_side(marker_side)?;
    let text = read_input(observations)?;
    let k = load_intrinsics(intrinsics)?;
    let rows = parse_observations(&text);
    let mut successes = 0;
    for row in &rows {
        let line = match row {
            Err(e) => json!({ "line": e.line, "error": e.message }),
            Ok(obs) => match estimate_pose(obs, marker_side, &k) {
                Ok(est) => {
                    successes += 1;
                    json!({
                        "marker_id": obs.marker_id,
                        "pose": est.pose,
                        "rms_reprojection_error": est.rms_reprojection_error,
                        "ambiguity_ratio": est.ambiguity_ratio,
                        "ambiguous": est.is_ambiguous(),
                    })
                }
                Err(e) => json!({ "marker_id": obs.marker_id, "error": e.to_string() }),
            },
        };
        emit(out, &line.to_string())?;
    }
    if successes == 0 {
        return Err(CliError::Data(format!(
            "no pose could be estimated from {} observation row(s)",
            rows.len()
        )));
    }
    Ok(())
}

fn cmd_calibrate(
    observations: &Path,
    intrinsics: &Path,
    base_marker_to_robot_base: &Path,
    marker_side: f64,
    marker_id: Option<i64>,
    out_path: &Path,
    out: &mut dyn Write,
) -> CliResult {
    check_marker_side(marker_side)?;
    let text = read_input(observations)?;
    let k = load_intrinsics(intrinsics)?;
    let known_text = read_input(base_marker_to_robot_base)?;
    let known: RigidTransform = serde_json::from_str(&known_text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", base_marker_to_robot_base.display())))?;

    let rows = parse_observations(&text);
    let obs = rows
        .iter()
        .find(|r| match (r, marker_id) {
            (Ok(o), Some(id)) => o.marker_id == id,
            (Ok(_), None) => true,
            (Err(_), _) => false,
        })
        .and_then(|r| r.as_ref().ok())
        .ok_or_else(|| CliError::Data("no usable base-marker observation".into()))?;
    let base_in_camera =
        calibrate_base(obs, marker_side, &k, &known).map_err(|e| CliError::Data(format!("calibration failed: {e}")))?;
    let body = to_json(&base_in_camera);
    write_output(out_path, &(body.clone() + "\n"))?;
    emit(out, &body)
}

enum AnalysisInput {
    Trials(Vec<TrialRecord>),
    Matrix(ConfusionMatrix),
}

fn load_analysis_input(input: &str) -> Result<AnalysisInput, CliError> {
    match input {
        "volar" => return Ok(AnalysisInput::Matrix(bundled_matrix(WristSide::Volar))),
        "dorsal" => return Ok(AnalysisInput::Matrix(bundled_matrix(WristSide::Dorsal))),
        _ => {}
    }
    let path = Path::new(input);
    let text = read_input(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let usage = |e: AnalysisError| CliError::Usage(format!("{}: {e}", path.display()));
    if first.trim_start().starts_with("participant") {
        parse_trials(&text).map(AnalysisInput::Trials).map_err(usage)
    } else {
        ConfusionMatrix::from_csv(&text).map(AnalysisInput::Matrix).map_err(usage)
    }
}

fn data_err(e: AnalysisError) -> CliError {
    CliError::Data(e.to_string())
}

fn cmd_analyze(mode: AnalyzeMode, input: &str, side: WristSide, out: &mut dyn Write) -> CliResult {
    let input = load_analysis_input(input)?;
    let matrix = |input: &AnalysisInput| -> Result<ConfusionMatrix, CliError> {
        match input {
            AnalysisInput::Matrix(m) => Ok(m.clone()),
            AnalysisInput::Trials(t) => confusion_from_trials(t, side).map_err(data_err),
        }
    };
    let trials = |input: &AnalysisInput| -> Result<Vec<TrialRecord>, CliError> {
        match input {
            AnalysisInput::Trials(t) => Ok(t.clone()),
            AnalysisInput::Matrix(_) => Err(CliError::Usage(
                "this mode needs per-trial data (participant,side,actual,perceived)".into(),
            )),
        }
    };
    let rate_table = |input: &AnalysisInput| -> Result<BTreeMap<u32, [f64; 10]>, CliError> {
        participant_rates(&trials(input)?, side).map_err(data_err)
    };

    let body = match mode {
        AnalyzeMode::Confusion => {
            let m = matrix(&input)?;
            json!({
                "side": side,
                "patterns": PatternId::ALL,
                "matrix": m.values(),
            })
        }
        AnalyzeMode::Rates => serde_json::to_value(recognition_rates(&matrix(&input)?)).expect("serializable"),
        AnalyzeMode::Anova => {
            let rates = rate_table(&input)?;
            let groups: Vec<Vec<f64>> = (0..10).map(|j| rates.values().map(|r| r[j]).collect()).collect();
            serde_json::to_value(one_way_anova(&groups).map_err(data_err)?).expect("serializable")
        }
        AnalyzeMode::Rmanova => {
            let rates = rate_table(&input)?;
            let table: Vec<Vec<f64>> = rates.values().map(|r| r.to_vec()).collect();
            serde_json::to_value(rm_anova(&table).map_err(data_err)?).expect("serializable")
        }
        AnalyzeMode::Pairwise => {
            let rates = rate_table(&input)?;
            let samples: BTreeMap<PatternId, Vec<f64>> = PatternId::ALL
                .iter()
                .map(|p| (*p, rates.values().map(|r| r[p.index()]).collect()))
                .collect();
            let results = paired_t_bonferroni(&samples, &all_pairs(&PatternId::ALL)).map_err(data_err)?;
            serde_json::to_value(results).expect("serializable")
        }
    };
    emit(out, &to_json(&body))
}

fn cmd_speed_bound(
    activation: f64,
    critical: f64,
    response_time: f64,
    hand_speed: f64,
    clearance: f64,
    out: &mut dyn Write,
) -> CliResult {
    if !(activation > 0.0 && critical > 0.0 && critical <= activation) {
        return Err(CliError::Usage(format!(
            "zones: need 0 < critical ({critical}) <= activation ({activation})"
        )));
    }
    if critical < activation {
        SafetyZones::new(activation, critical, 0.0).map_err(|e| CliError::Usage(format!("zones: {e}")))?;
    }
    if !(response_time > 0.0) {
        return Err(CliError::Usage(format!("--response-time must be positive, got {response_time}")));
    }
    let v = speed_bound(activation - critical, response_time, hand_speed, clearance)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    emit(out, &format!("{v:.6} m/s"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = main_with_args(std::iter::once("movetouch").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn bundled_default_scenario_parses() {
        assert_eq!(Scenario::from_json(DEFAULT_SCENARIO).unwrap(), Scenario::default());
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seed_range("3..=4").unwrap(), vec![3, 4]);
        assert!(parse_seed_range("5..5").is_err());
        assert!(parse_seed_range("x").is_err());
        assert_eq!(
            with_seed_suffix(Path::new("/tmp/trace.csv"), 4),
            PathBuf::from("/tmp/trace_seed4.csv")
        );
    }

    #[test]
    fn pattern_command() {
        let (code, out, _) = run_args(&["pattern", "1H"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 5);
        assert!(out.contains("frequency_hz=2"));
        assert_eq!(run_args(&["pattern", "9X"]).0, 2);
    }

    #[test]
    fn speed_bound_command() {
        let (code, out, _) = run_args(&["speed-bound"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("0.0498"), "{out}");
        let (code, out, _) = run_args(&["speed-bound", "--activation", "0.3", "--critical", "0.3"]);
        assert_eq!((code, out.trim()), (0, "0.000000 m/s"));
        assert_eq!(run_args(&["speed-bound", "--response-time", "-1"]).0, 2);
        assert_eq!(run_args(&["speed-bound", "--hand-speed", "0"]).0, 2);
    }

    #[test]
    fn analyze_bundled_rates() {
        let (code, out, _) = run_args(&["analyze", "rates", "volar"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["mean"].as_f64().unwrap() - 0.756).abs() < 1e-9);
        assert_eq!(run_args(&["analyze", "anova", "dorsal"]).0, 2);
    }
}
