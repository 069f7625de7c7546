//! Fixed-timestep simulation of a shared pick-and-place workspace.
//!
//! The robot TCP is a kinematic point looping over waypoints at constant
//! per-leg speed and freezing while halted. The wearer is a scripted reactive
//! agent: after a sampled latency it moves the hand in the commanded
//! direction, waits until it is clear of the activation zone and then goes
//! back to the box. The hand is observed through the marker → camera →
//! robot-base chain, and the safety monitor only ever sees that estimate.
//!
//! Workspace frame: robot base at the origin, z up, the wearer standing on
//! the +y side facing −y. Guidance directions are converted to and from the
//! wearer's stance frame, which is the workspace frame turned half a turn
//! about z.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{hand_center, hand_in_robot_base, HandOffset, Point3, RigidTransform};
use crate::gimbal::{
    correction_angles, marker_deltas, marker_rotation, motor_deltas, servo_step, GearParams, MarkerDeltas,
    ServoLimits, ServoState,
};
use crate::haptics::PatternId;
use crate::marker_pose::{estimate_pose, synthesize_observation_with, CameraIntrinsics, DEFAULT_MARKER_SIDE};
use crate::safety::{
    classify, Direction, DirectionMapping, Mode, SafetyCommand, SafetyMonitor, SafetySample, SafetyState,
    SafetyZones, Zone,
};

/// Lower clamp on sampled response latencies, seconds.
pub const MIN_RESPONSE_TIME: f64 = 0.05;

/// Hand displacement that counts as "started moving", meters.
pub const RESPONSE_DISPLACEMENT: f64 = 1e-3;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("no response time configured for pattern {0}")]
    UnknownPattern(PatternId),
}

/// A TCP waypoint; `speed` applies to the leg leaving this waypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub position: Point3,
    pub speed: f64,
}

/// Closed-loop constant-speed path through the waypoints.
#[derive(Debug, Clone)]
pub struct Trajectory {
    waypoints: Vec<Waypoint>,
    /// Arrival time at each waypoint; the last entry is the loop period.
    arrivals: Vec<f64>,
}

impl Trajectory {
    pub fn new(waypoints: &[Waypoint]) -> Result<Self, ConfigError> {
        if waypoints.len() < 2 {
            return Err(ConfigError::new("robot_waypoints", "at least 2 waypoints are required"));
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !(w.speed > 0.0 && w.speed.is_finite()) {
                return Err(ConfigError::new(
                    &format!("robot_waypoints[{i}].speed"),
                    format!("must be positive, got {}", w.speed),
                ));
            }
            if w.position.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new(&format!("robot_waypoints[{i}].position"), "must be finite"));
            }
        }
        let mut arrivals = vec![0.0];
        for i in 0..waypoints.len() {
            let next = &waypoints[(i + 1) % waypoints.len()];
            let len = (next.position - waypoints[i].position).norm();
            arrivals.push(arrivals[i] + len / waypoints[i].speed);
        }
        Ok(Self {
            waypoints: waypoints.to_vec(),
            arrivals,
        })
    }

    pub fn period(&self) -> f64 {
        *self.arrivals.last().expect("non-empty")
    }

    pub fn max_speed(&self) -> f64 {
        self.waypoints.iter().map(|w| w.speed).fold(0.0, f64::max)
    }

    fn leg_at(&self, motion_time: f64) -> (usize, f64) {
        let period = self.period();
        if period <= 0.0 {
            return (0, 0.0);
        }
        let tau = motion_time.max(0.0).rem_euclid(period);
        let leg = match self.arrivals.partition_point(|&a| a <= tau) {
            0 => 0,
            k => (k - 1).min(self.waypoints.len() - 1),
        };
        (leg, tau - self.arrivals[leg])
    }

    /// Position after `motion_time` seconds of actual motion.
    pub fn position_at(&self, motion_time: f64) -> Point3 {
        let (leg, into) = self.leg_at(motion_time);
        let a = &self.waypoints[leg];
        let b = &self.waypoints[(leg + 1) % self.waypoints.len()];
        let delta = b.position - a.position;
        let len = delta.norm();
        if len == 0.0 {
            return a.position;
        }
        let s = (into * a.speed).min(len);
        a.position + delta * (s / len)
    }

    pub fn velocity_at(&self, motion_time: f64) -> Vector3<f64> {
        let (leg, _) = self.leg_at(motion_time);
        let a = &self.waypoints[leg];
        let b = &self.waypoints[(leg + 1) % self.waypoints.len()];
        let delta = b.position - a.position;
        let len = delta.norm();
        if len == 0.0 {
            Vector3::zeros()
        } else {
            delta * (a.speed / len)
        }
    }

    /// Index of the waypoint the TCP is heading to.
    pub fn target_waypoint(&self, motion_time: f64) -> usize {
        (self.leg_at(motion_time).0 + 1) % self.waypoints.len()
    }
}

/// TCP position at wall time `t`, with motion frozen during each half-open
/// `[start, end)` halt interval.
pub fn robot_tcp_position(waypoints: &[Waypoint], t: f64, halt_intervals: &[(f64, f64)]) -> Result<Point3, ConfigError> {
    let traj = Trajectory::new(waypoints)?;
    let halted: f64 = halt_intervals
        .iter()
        .map(|&(s, e)| (e.min(t) - s.max(0.0)).max(0.0))
        .sum();
    Ok(traj.position_at((t - halted).max(0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HumanModel {
    pub response_mean: BTreeMap<PatternId, f64>,
    pub response_jitter_sigma: f64,
    pub mis_response_probability: f64,
    pub hand_speed: f64,
    pub escape_displacement: f64,
    pub return_delay: f64,
}

impl Default for HumanModel {
    fn default() -> Self {
        let p = |s: &str| s.parse::<PatternId>().expect("literal id");
        Self {
            response_mean: BTreeMap::from([(p("1L"), 0.24), (p("2L"), 0.61), (p("3L"), 2.41), (p("5H"), 0.85)]),
            response_jitter_sigma: 0.1,
            mis_response_probability: 0.03,
            hand_speed: 0.5,
            escape_displacement: 0.30,
            return_delay: 1.0,
        }
    }
}

impl HumanModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (p, m) in &self.response_mean {
            if !(*m >= 0.0 && m.is_finite()) {
                return Err(ConfigError::new(
                    &format!("human.response_mean.{p}"),
                    format!("must be non-negative, got {m}"),
                ));
            }
        }
        let checks = [
            ("human.response_jitter_sigma", self.response_jitter_sigma, true),
            ("human.escape_displacement", self.escape_displacement, true),
            ("human.return_delay", self.return_delay, true),
            ("human.hand_speed", self.hand_speed, false),
        ];
        for (field, v, zero_ok) in checks {
            let ok = v.is_finite() && if zero_ok { v >= 0.0 } else { v > 0.0 };
            if !ok {
                return Err(ConfigError::new(field, format!("out of range: {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.mis_response_probability) {
            return Err(ConfigError::new(
                "human.mis_response_probability",
                format!("must be in [0, 1], got {}", self.mis_response_probability),
            ));
        }
        Ok(())
    }
}

/// Gaussian latency around the per-pattern mean, floored at
/// [`MIN_RESPONSE_TIME`].
pub fn sample_response_time<R: Rng + ?Sized>(model: &HumanModel, pattern: PatternId, rng: &mut R) -> Result<f64, SimError> {
    let mean = *model
        .response_mean
        .get(&pattern)
        .ok_or(SimError::UnknownPattern(pattern))?;
    let draw = if model.response_jitter_sigma > 0.0 {
        Normal::new(mean, model.response_jitter_sigma)
            .expect("sigma validated")
            .sample(rng)
    } else {
        mean
    };
    Ok(draw.max(MIN_RESPONSE_TIME))
}

/// Where the camera sits in the workspace and what it looks at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPlacement {
    pub position: Point3,
    pub look_at: Point3,
}

impl Default for CameraPlacement {
    fn default() -> Self {
        Self {
            position: Point3::new(0.0, 1.3, 2.0),
            look_at: Point3::new(0.0, 0.5, 0.0),
        }
    }
}

impl CameraPlacement {
    /// Camera pose in the workspace (maps camera coordinates to workspace
    /// coordinates). Optical axis along camera +z, image rows along +y.
    pub fn camera_in_base(&self) -> Result<RigidTransform, ConfigError> {
        let forward = self.look_at - self.position;
        if forward.norm() < 1e-9 {
            return Err(ConfigError::new("camera_placement", "position and look_at coincide"));
        }
        let z = forward.normalize();
        let x = z.cross(&Vector3::z());
        if x.norm() < 1e-6 {
            return Err(ConfigError::new("camera_placement", "camera must not look straight up or down"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        RigidTransform::new(Matrix3::from_columns(&[x, y, z]), self.position.coords)
            .map_err(|e| ConfigError::new("camera_placement", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub robot_waypoints: Vec<Waypoint>,
    pub hand_home: Point3,
    pub zones: SafetyZones,
    pub mapping: DirectionMapping,
    pub human: HumanModel,
    pub gear: GearParams,
    pub servo: ServoLimits,
    pub camera: CameraIntrinsics,
    pub camera_placement: CameraPlacement,
    pub hand_offset: HandOffset,
    pub marker_side: f64,
    pub pixel_noise_sigma: f64,
}

impl Default for Scenario {
    /// Two pick locations left and right of the robot, both delivered to a
    /// drop point in front of and above the wearer's box.
    fn default() -> Self {
        let drop = Point3::new(0.0, 0.38, 0.32);
        let w = |x: f64, y: f64, z: f64| Waypoint {
            position: Point3::new(x, y, z),
            speed: 0.04,
        };
        Self {
            dt: 0.01,
            duration: 120.0,
            seed: 7,
            robot_waypoints: vec![
                w(-0.45, 0.05, 0.15),
                Waypoint {
                    position: drop,
                    speed: 0.04,
                },
                w(0.45, 0.05, 0.15),
                Waypoint {
                    position: drop,
                    speed: 0.04,
                },
            ],
            hand_home: Point3::new(0.0, 0.60, 0.10),
            zones: SafetyZones::default(),
            mapping: DirectionMapping::default(),
            human: HumanModel::default(),
            gear: GearParams::default(),
            servo: ServoLimits::default(),
            camera: CameraIntrinsics::default(),
            camera_placement: CameraPlacement::default(),
            hand_offset: HandOffset::default(),
            marker_side: DEFAULT_MARKER_SIDE,
            pixel_noise_sigma: 0.0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::new("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return Err(ConfigError::new("duration", format!("must be at least dt, got {}", self.duration)));
        }
        Trajectory::new(&self.robot_waypoints)?;
        if self.hand_home.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::new("hand_home", "must be finite"));
        }
        self.zones
            .validate()
            .map_err(|e| ConfigError::new("zones", e.to_string()))?;
        self.human.validate()?;
        for (p, _) in self.mapping.entries() {
            if !self.human.response_mean.contains_key(p) {
                return Err(ConfigError::new(
                    "human.response_mean",
                    format!("missing mean for mapped pattern {p}"),
                ));
            }
        }
        self.gear
            .validate()
            .map_err(|e| ConfigError::new("gear", e.to_string()))?;
        self.servo
            .validate()
            .map_err(|e| ConfigError::new("servo", e.to_string()))?;
        self.camera
            .validate()
            .map_err(|e| ConfigError::new("camera", e.to_string()))?;
        self.camera_placement.camera_in_base()?;
        if !(self.marker_side > 0.0 && self.marker_side.is_finite()) {
            return Err(ConfigError::new("marker_side", format!("must be positive, got {}", self.marker_side)));
        }
        if !(self.pixel_noise_sigma >= 0.0 && self.pixel_noise_sigma.is_finite()) {
            return Err(ConfigError::new(
                "pixel_noise_sigma",
                format!("must be non-negative, got {}", self.pixel_noise_sigma),
            ));
        }
        Ok(())
    }

    /// Parses and validates a scenario document. Unknown keys are rejected
    /// and parse errors carry the JSON path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { "scenario" } else { &path }, e.inner().to_string())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.dt + TIME_EPS).floor() as usize + 1
    }
}

/// Workspace vector → wearer stance frame (and back; the map is an involution).
pub fn stance_from_base(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.x, -v.y, v.z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    /// Hand center as seen through the marker pipeline.
    pub hand: Point3,
    pub tcp: Point3,
    /// `|hand − tcp|` with the observed hand.
    pub distance: f64,
    pub zone: Zone,
    pub state_mode: Mode,
    pub active_pattern: Option<PatternId>,
    pub robot_halted: bool,
    pub commanded_direction: Option<Direction>,
    pub marker_visible: bool,
    /// Ground-truth hand center; not part of the CSV.
    pub true_hand: Point3,
}

pub const TRACE_HEADER: &str =
    "t,hand_x,hand_y,hand_z,tcp_x,tcp_y,tcp_z,distance,zone,state,active_pattern,robot_halted,direction,marker_visible";

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            r.t,
            r.hand.x,
            r.hand.y,
            r.hand.z,
            r.tcp.x,
            r.tcp.y,
            r.tcp.z,
            r.distance,
            r.zone.as_str(),
            r.state_mode.as_str(),
            r.active_pattern.map(|p| p.to_string()).unwrap_or_default(),
            r.robot_halted,
            r.commanded_direction.map(|d| d.as_str()).unwrap_or(""),
            r.marker_visible,
        )?;
    }
    Ok(())
}

pub fn trace_csv_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(records, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("ascii output")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Smallest ground-truth hand–TCP distance.
    pub min_distance: f64,
    /// Samples inside the critical zone while the robot was moving on the
    /// previous step.
    pub critical_violations: usize,
    pub pattern_activations: BTreeMap<PatternId, usize>,
    /// Pattern start → first hand displacement above 1 mm.
    pub measured_response_times: BTreeMap<PatternId, Vec<f64>>,
    /// Latencies drawn for the same responses, in the same order.
    pub sampled_response_times: BTreeMap<PatternId, Vec<f64>>,
    pub halts: usize,
    pub mis_responses: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Vec<TraceRecord>,
    pub metrics: SimMetrics,
}

#[derive(Debug, Clone, Copy)]
enum HumanPhase {
    /// Stationary, nothing to do.
    Idle,
    /// Felt a pattern; starts moving at `respond_at`.
    Pending { direction: Vector3<f64>, respond_at: f64 },
    Escaping { direction: Vector3<f64>, remaining: f64 },
    /// Stationary after an escape; `clear_since` tracks time spent outside
    /// the activation zone.
    Waiting { clear_since: Option<f64> },
    Returning,
}

struct Human<'a> {
    model: &'a HumanModel,
    home: Point3,
    hand: Point3,
    phase: HumanPhase,
    /// A pattern felt mid-escape, handled once the escape ends.
    queued: Option<(Vector3<f64>, f64)>,
}

impl<'a> Human<'a> {
    /// Moves the hand over the step ending at `t`.
    fn advance(&mut self, t: f64, dt: f64, true_distance: f64, activation: f64) {
        let step = self.model.hand_speed * dt;
        if let HumanPhase::Pending { direction, respond_at } = self.phase {
            if t >= respond_at - TIME_EPS {
                self.phase = HumanPhase::Escaping {
                    direction,
                    remaining: self.model.escape_displacement,
                };
            }
        }
        match self.phase {
            HumanPhase::Idle | HumanPhase::Pending { .. } => {}
            HumanPhase::Escaping { direction, remaining } => {
                let d = step.min(remaining);
                self.hand += direction * d;
                let remaining = remaining - d;
                if remaining <= 1e-12 {
                    self.phase = match self.queued.take() {
                        Some((direction, respond_at)) => HumanPhase::Pending { direction, respond_at },
                        None => HumanPhase::Waiting { clear_since: None },
                    };
                } else {
                    self.phase = HumanPhase::Escaping { direction, remaining };
                }
            }
            HumanPhase::Waiting { clear_since } => {
                let clear_since = if true_distance >= activation {
                    Some(clear_since.unwrap_or(t))
                } else {
                    None
                };
                self.phase = match clear_since {
                    Some(s) if t - s >= self.model.return_delay - TIME_EPS => HumanPhase::Returning,
                    _ => HumanPhase::Waiting { clear_since },
                };
            }
            HumanPhase::Returning => {
                let to_home = self.home - self.hand;
                let dist = to_home.norm();
                if dist <= step {
                    self.hand = self.home;
                    self.phase = HumanPhase::Idle;
                } else {
                    self.hand += to_home * (step / dist);
                }
            }
        }
    }

    /// Returns true if the pattern is taken up immediately.
    fn feel(&mut self, direction: Vector3<f64>, respond_at: f64) -> bool {
        match self.phase {
            HumanPhase::Pending { .. } => false,
            HumanPhase::Escaping { .. } => {
                self.queued = Some((direction, respond_at));
                false
            }
            HumanPhase::Idle | HumanPhase::Waiting { .. } | HumanPhase::Returning => {
                self.phase = HumanPhase::Pending { direction, respond_at };
                true
            }
        }
    }

    fn is_busy(&self) -> bool {
        matches!(self.phase, HumanPhase::Pending { .. })
    }
}

struct ResponseProbe {
    pattern: PatternId,
    started: f64,
    from: Point3,
}

/// What the camera pipeline reports for one frame.
struct MocapFrame {
    hand: Option<Point3>,
}

struct Mocap<'a> {
    scenario: &'a Scenario,
    camera_in_base: RigidTransform,
    base_in_camera: RigidTransform,
    servo: ServoState,
    last_angles: MarkerDeltas,
    rng: ChaCha8Rng,
}

impl<'a> Mocap<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, ConfigError> {
        let camera_in_base = scenario.camera_placement.camera_in_base()?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(1);
        Ok(Self {
            scenario,
            camera_in_base,
            base_in_camera: camera_in_base.inverse(),
            servo: ServoState::at_rest(scenario.servo),
            last_angles: MarkerDeltas::default(),
            rng,
        })
    }

    /// Steers the gimbal toward the camera, then observes the marker.
    fn observe(&mut self, true_hand: &Point3, dt: f64) -> MocapFrame {
        let s = self.scenario;
        let to_camera = (self.camera_in_base.translation() - true_hand.coords).normalize();
        if let Ok(angles) = correction_angles(&to_camera) {
            self.last_angles = angles;
        }
        let command = motor_deltas(self.last_angles, &s.gear);
        self.servo = servo_step(self.servo, command, dt);
        let actual = marker_deltas(self.servo.angles(), &s.gear);

        let rotation = marker_rotation(actual);
        let marker_pos = true_hand.coords - rotation * s.hand_offset.vector();
        let marker_in_base = RigidTransform::from_rotation(rotation, marker_pos);
        let marker_in_camera = self.base_in_camera.compose(&marker_in_base);

        // Marker seen from behind or edge-on is not detected.
        let normal = rotation * Vector3::z();
        let view = self.camera_in_base.translation() - marker_pos;
        if normal.dot(&view) <= 0.0 {
            return MocapFrame { hand: None };
        }
        let Ok(obs) = synthesize_observation_with(
            &marker_in_camera,
            s.marker_side,
            &s.camera,
            s.pixel_noise_sigma,
            &mut self.rng,
        ) else {
            return MocapFrame { hand: None };
        };
        if !obs.corners.iter().all(|c| s.camera.contains(c)) {
            return MocapFrame { hand: None };
        }
        match estimate_pose(&obs, s.marker_side, &s.camera) {
            Ok(est) => {
                let pose = hand_in_robot_base(&est.pose, &self.base_in_camera);
                MocapFrame {
                    hand: Some(hand_center(&pose, &s.hand_offset)),
                }
            }
            Err(_) => MocapFrame { hand: None },
        }
    }
}

/// Runs the scenario to completion.
pub fn run(scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let traj = Trajectory::new(&scenario.robot_waypoints)?;
    let monitor = SafetyMonitor::new(scenario.zones, scenario.mapping.clone())
        .map_err(|e| ConfigError::new("zones", e.to_string()))?;
    let mut mocap = Mocap::new(scenario)?;
    let mut human_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut human = Human {
        model: &scenario.human,
        home: scenario.hand_home,
        hand: scenario.hand_home,
        phase: HumanPhase::Idle,
        queued: None,
    };

    let dt = scenario.dt;
    let steps = scenario.step_count();
    let mut trace = Vec::with_capacity(steps);
    let mut metrics = SimMetrics {
        min_distance: f64::INFINITY,
        ..SimMetrics::default()
    };
    let mut state = SafetyState::default();
    let mut motion_time = 0.0;
    let mut last_seen = scenario.hand_home;
    let mut probes: Vec<ResponseProbe> = Vec::new();
    let mut prev_true_distance = f64::INFINITY;

    for k in 0..steps {
        let t = k as f64 * dt;
        let tcp = traj.position_at(motion_time);
        let tcp_velocity = if state.robot_halted {
            Vector3::zeros()
        } else {
            traj.velocity_at(motion_time)
        };

        if k > 0 {
            human.advance(t, dt, prev_true_distance, scenario.zones.activation_distance);
        }
        let true_hand = human.hand;
        let true_distance = (true_hand - tcp).norm();
        prev_true_distance = true_distance;

        probes.retain(|p| {
            if (true_hand - p.from).norm() > RESPONSE_DISPLACEMENT {
                metrics
                    .measured_response_times
                    .entry(p.pattern)
                    .or_default()
                    .push(t - p.started);
                false
            } else {
                true
            }
        });

        let frame = mocap.observe(&true_hand, dt);
        let marker_visible = frame.hand.is_some();
        if let Some(h) = frame.hand {
            last_seen = h;
        }
        let hand = last_seen;
        let distance = (hand - tcp).norm();

        let was_halted = state.robot_halted;
        let sample = SafetySample {
            distance,
            hand: Point3::from(stance_from_base(&hand.coords)),
            tcp: Point3::from(stance_from_base(&tcp.coords)),
            tcp_velocity: stance_from_base(&tcp_velocity),
            t,
        };
        let (next, commands) = monitor
            .step(&state, &sample)
            .expect("time is strictly increasing");
        state = next;

        if true_distance < metrics.min_distance {
            metrics.min_distance = true_distance;
        }
        if true_distance < scenario.zones.critical_distance && !was_halted {
            metrics.critical_violations += 1;
        }

        for cmd in &commands {
            match *cmd {
                SafetyCommand::HaltRobot => metrics.halts += 1,
                SafetyCommand::ResumeRobot => {}
                SafetyCommand::StartPattern(pattern) => {
                    *metrics.pattern_activations.entry(pattern).or_default() += 1;
                    if human.is_busy() {
                        continue;
                    }
                    let latency = sample_response_time(&scenario.human, pattern, &mut human_rng)?;
                    let intended = scenario
                        .mapping
                        .direction(pattern)
                        .expect("monitor only emits mapped patterns");
                    let mut direction = intended;
                    if human_rng.random::<f64>() < scenario.human.mis_response_probability {
                        let others: Vec<Direction> =
                            Direction::ALL.iter().copied().filter(|d| *d != intended).collect();
                        direction = others[human_rng.random_range(0..others.len())];
                        metrics.mis_responses += 1;
                    }
                    let heading = stance_from_base(&direction.unit());
                    if human.feel(heading, t + latency) {
                        metrics.sampled_response_times.entry(pattern).or_default().push(latency);
                        probes.push(ResponseProbe {
                            pattern,
                            started: t,
                            from: true_hand,
                        });
                    }
                }
            }
        }

        trace.push(TraceRecord {
            t,
            hand,
            tcp,
            distance,
            zone: classify(distance, &scenario.zones),
            state_mode: state.mode,
            active_pattern: state.active_pattern,
            robot_halted: state.robot_halted,
            commanded_direction: state.active_pattern.and_then(|p| scenario.mapping.direction(p)),
            marker_visible,
            true_hand,
        });

        if !state.robot_halted {
            motion_time += dt;
        }
    }

    Ok(SimOutput { trace, metrics })
}
