//! Distance-zone guidance and halt logic.
//!
//! Below the activation distance the wearer gets a directional pattern;
//! below the critical distance the robot is halted until the hand is back
//! outside the critical zone (plus optional hysteresis).
//!
//! Directions live in the wearer's stance frame: +x to the wearer's right,
//! +y forward (toward the robot), +z up.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::Point3;
use crate::haptics::{pattern_duration, PatternId, Shape, Speed};

/// Look-ahead used to extrapolate the TCP when picking an escape direction.
pub const PREDICTION_HORIZON: f64 = 0.5;

/// Extra wait after a pattern finishes before another may start.
pub const PATTERN_COOLDOWN_MARGIN: f64 = 0.5;

/// Upper clamp for [`max_robot_speed`], m/s.
pub const SPEED_BOUND_CAP: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("time went backwards: {t} < {previous}")]
    NonMonotonicTime { t: f64, previous: f64 },
    #[error("invalid zones: {0}")]
    InvalidZones(String),
    #[error("invalid direction mapping: {0}")]
    InvalidMapping(String),
    #[error("invalid speed-bound input: {0}")]
    InvalidSpeedInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyZones {
    pub activation_distance: f64,
    pub critical_distance: f64,
    #[serde(default)]
    pub resume_hysteresis: f64,
}

impl Default for SafetyZones {
    fn default() -> Self {
        Self {
            activation_distance: 0.40,
            critical_distance: 0.25,
            resume_hysteresis: 0.0,
        }
    }
}

impl SafetyZones {
    pub fn new(activation: f64, critical: f64, hysteresis: f64) -> Result<Self, SafetyError> {
        let z = Self {
            activation_distance: activation,
            critical_distance: critical,
            resume_hysteresis: hysteresis,
        };
        z.validate()?;
        Ok(z)
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        if !(self.critical_distance > 0.0 && self.critical_distance.is_finite()) {
            return Err(SafetyError::InvalidZones(format!(
                "critical_distance must be positive, got {}",
                self.critical_distance
            )));
        }
        if !(self.activation_distance > self.critical_distance && self.activation_distance.is_finite()) {
            return Err(SafetyError::InvalidZones(format!(
                "critical_distance ({}) must be below activation_distance ({})",
                self.critical_distance, self.activation_distance
            )));
        }
        if !(self.resume_hysteresis >= 0.0 && self.resume_hysteresis.is_finite()) {
            return Err(SafetyError::InvalidZones(format!(
                "resume_hysteresis must be non-negative, got {}",
                self.resume_hysteresis
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Zone {
    Safe,
    Activation,
    Critical,
}

impl Zone {
    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Safe => "safe",
            Zone::Activation => "activation",
            Zone::Critical => "critical",
        }
    }
}

pub fn classify(distance: f64, zones: &SafetyZones) -> Zone {
    if distance < zones.critical_distance {
        Zone::Critical
    } else if distance < zones.activation_distance {
        Zone::Activation
    } else {
        Zone::Safe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Right,
    Left,
    Down,
    Back,
}

impl Direction {
    /// Tie-break order.
    pub const ALL: [Direction; 4] = [Direction::Right, Direction::Left, Direction::Down, Direction::Back];

    pub fn unit(self) -> Vector3<f64> {
        match self {
            Direction::Right => Vector3::new(1.0, 0.0, 0.0),
            Direction::Left => Vector3::new(-1.0, 0.0, 0.0),
            Direction::Down => Vector3::new(0.0, 0.0, -1.0),
            Direction::Back => Vector3::new(0.0, -1.0, 0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Right => "right",
            Direction::Left => "left",
            Direction::Down => "down",
            Direction::Back => "back",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "right" => Ok(Direction::Right),
            "left" => Ok(Direction::Left),
            "down" => Ok(Direction::Down),
            "back" => Ok(Direction::Back),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// The four guidance patterns.
pub const GUIDANCE_PATTERNS: [PatternId; 4] = [
    PatternId::new(Shape::RightToLeft, Speed::Low),
    PatternId::new(Shape::LeftToRight, Speed::Low),
    PatternId::new(Shape::CenterOut, Speed::Low),
    PatternId::new(Shape::AllTogether, Speed::High),
];

/// One-to-one assignment of the guidance patterns to directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionMapping {
    entries: [(PatternId, Direction); 4],
}

impl Default for DirectionMapping {
    /// 1L → right, 2L → left, 3L → down, 5H → back.
    fn default() -> Self {
        Self {
            entries: [
                (GUIDANCE_PATTERNS[0], Direction::Right),
                (GUIDANCE_PATTERNS[1], Direction::Left),
                (GUIDANCE_PATTERNS[2], Direction::Down),
                (GUIDANCE_PATTERNS[3], Direction::Back),
            ],
        }
    }
}

impl DirectionMapping {
    pub fn new(pairs: &[(PatternId, Direction)]) -> Result<Self, SafetyError> {
        if pairs.len() != 4 {
            return Err(SafetyError::InvalidMapping(format!(
                "expected 4 entries, got {}",
                pairs.len()
            )));
        }
        for p in GUIDANCE_PATTERNS {
            if pairs.iter().filter(|(q, _)| *q == p).count() != 1 {
                return Err(SafetyError::InvalidMapping(format!("pattern {p} must appear exactly once")));
            }
        }
        for d in Direction::ALL {
            if pairs.iter().filter(|(_, e)| *e == d).count() != 1 {
                return Err(SafetyError::InvalidMapping(format!("direction {d} must appear exactly once")));
            }
        }
        let mut entries = [pairs[0], pairs[1], pairs[2], pairs[3]];
        entries.sort();
        Ok(Self { entries })
    }

    pub fn direction(&self, pattern: PatternId) -> Option<Direction> {
        self.entries.iter().find(|(p, _)| *p == pattern).map(|(_, d)| *d)
    }

    pub fn pattern(&self, direction: Direction) -> PatternId {
        self.entries
            .iter()
            .find(|(_, d)| *d == direction)
            .map(|(p, _)| *p)
            .expect("mapping covers every direction")
    }

    pub fn entries(&self) -> &[(PatternId, Direction); 4] {
        &self.entries
    }
}

impl Serialize for DirectionMapping {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(4))?;
        for (p, d) in &self.entries {
            map.serialize_entry(p, d)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for DirectionMapping {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = std::collections::BTreeMap::<PatternId, Direction>::deserialize(deserializer)?;
        let pairs: Vec<_> = map.into_iter().collect();
        DirectionMapping::new(&pairs).map_err(serde::de::Error::custom)
    }
}

/// Picks the direction best aligned with moving the hand away from where the
/// TCP will be [`PREDICTION_HORIZON`] seconds from now. Inputs are in the
/// stance frame.
pub fn select_direction(hand: &Point3, tcp: &Point3, tcp_velocity: &Vector3<f64>) -> Direction {
    let predicted = tcp + tcp_velocity * PREDICTION_HORIZON;
    let escape = hand - predicted;
    let escape = if escape.norm() > 0.0 {
        escape.normalize()
    } else {
        escape
    };
    let mut best = Direction::ALL[0];
    let mut best_dot = f64::NEG_INFINITY;
    for d in Direction::ALL {
        let dot = d.unit().dot(&escape);
        if dot > best_dot {
            best = d;
            best_dot = dot;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Safe,
    Alert,
    Halted,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Safe => "safe",
            Mode::Alert => "alert",
            Mode::Halted => "halted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyState {
    pub mode: Mode,
    pub active_pattern: Option<PatternId>,
    pub pattern_started_at: Option<f64>,
    pub robot_halted: bool,
    pub cooldown_until: f64,
    pub last_t: Option<f64>,
}

impl Default for SafetyState {
    fn default() -> Self {
        Self {
            mode: Mode::Safe,
            active_pattern: None,
            pattern_started_at: None,
            robot_halted: false,
            cooldown_until: f64::NEG_INFINITY,
            last_t: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyCommand {
    StartPattern(PatternId),
    HaltRobot,
    ResumeRobot,
}

/// One sample fed to the monitor. Positions and velocity in the stance frame.
#[derive(Debug, Clone, Copy)]
pub struct SafetySample {
    pub distance: f64,
    pub hand: Point3,
    pub tcp: Point3,
    pub tcp_velocity: Vector3<f64>,
    pub t: f64,
}

/// The zone state machine and its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyMonitor {
    pub zones: SafetyZones,
    pub mapping: DirectionMapping,
}

impl SafetyMonitor {
    pub fn new(zones: SafetyZones, mapping: DirectionMapping) -> Result<Self, SafetyError> {
        zones.validate()?;
        Ok(Self { zones, mapping })
    }

    /// Advances the state machine by one sample.
    ///
    /// * entering the critical zone halts the robot;
    /// * while halted, reaching `critical + hysteresis` resumes it;
    /// * inside the activation zone a pattern starts whenever the cooldown
    ///   has expired, and the cooldown is pushed to the pattern end + 0.5 s;
    /// * the safe zone clears the alert without a command.
    pub fn step(
        &self,
        state: &SafetyState,
        sample: &SafetySample,
    ) -> Result<(SafetyState, Vec<SafetyCommand>), SafetyError> {
        let t = sample.t;
        if let Some(previous) = state.last_t {
            if t < previous {
                return Err(SafetyError::NonMonotonicTime { t, previous });
            }
        }
        let mut next = state.clone();
        next.last_t = Some(t);
        let mut commands = Vec::new();
        let zone = classify(sample.distance, &self.zones);

        let mut evaluate_zone = true;
        if next.mode == Mode::Halted {
            let resume_at = self.zones.critical_distance + self.zones.resume_hysteresis;
            if sample.distance >= resume_at {
                commands.push(SafetyCommand::ResumeRobot);
                next.robot_halted = false;
                next.mode = Mode::Safe;
            } else {
                evaluate_zone = false;
            }
        }

        if evaluate_zone {
            match zone {
                Zone::Critical => {
                    commands.push(SafetyCommand::HaltRobot);
                    next.mode = Mode::Halted;
                    next.robot_halted = true;
                }
                Zone::Activation => {
                    next.mode = Mode::Alert;
                    if t >= next.cooldown_until {
                        let direction = select_direction(&sample.hand, &sample.tcp, &sample.tcp_velocity);
                        let pattern = self.mapping.pattern(direction);
                        commands.push(SafetyCommand::StartPattern(pattern));
                        next.active_pattern = Some(pattern);
                        next.pattern_started_at = Some(t);
                        next.cooldown_until = t + pattern_duration(pattern) + PATTERN_COOLDOWN_MARGIN;
                    }
                }
                Zone::Safe => next.mode = Mode::Safe,
            }
        }

        if next.mode != Mode::Alert {
            if let (Some(p), Some(start)) = (next.active_pattern, next.pattern_started_at) {
                if t >= start + pattern_duration(p) {
                    next.active_pattern = None;
                    next.pattern_started_at = None;
                }
            }
        }
        Ok((next, commands))
    }
}

/// Highest robot speed that still lets a hand at the activation boundary
/// react and clear before the robot covers the activation-to-critical gap.
pub fn max_robot_speed(
    zones: &SafetyZones,
    max_response_time: f64,
    hand_speed: f64,
    required_clearance: f64,
) -> Result<f64, SafetyError> {
    speed_bound(
        zones.activation_distance - zones.critical_distance,
        max_response_time,
        hand_speed,
        required_clearance,
    )
}

/// [`max_robot_speed`] on a raw zone gap. A zero gap gives zero.
pub fn speed_bound(
    zone_gap: f64,
    max_response_time: f64,
    hand_speed: f64,
    required_clearance: f64,
) -> Result<f64, SafetyError> {
    let bad = |m: &str| Err(SafetyError::InvalidSpeedInput(m.to_string()));
    if !(zone_gap >= 0.0 && zone_gap.is_finite()) {
        return bad("zone gap must be non-negative");
    }
    if !(max_response_time >= 0.0 && max_response_time.is_finite()) {
        return bad("response time must be non-negative");
    }
    if !(hand_speed > 0.0 && hand_speed.is_finite()) {
        return bad("hand speed must be positive");
    }
    if !(required_clearance >= 0.0 && required_clearance.is_finite()) {
        return bad("clearance must be non-negative");
    }
    let time = max_response_time + required_clearance / hand_speed;
    if time <= 0.0 {
        return Ok(if zone_gap > 0.0 { SPEED_BOUND_CAP } else { 0.0 });
    }
    Ok((zone_gap / time).min(SPEED_BOUND_CAP))
}
