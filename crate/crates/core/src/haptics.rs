//! Vibrotactile pattern timelines for the five-motor wrist band.
//!
//! Motor 1 is the wearer's rightmost motor, motor 5 the leftmost; adjacent
//! motors sit 2 cm apart. Each motor is switched on exactly once per
//! rendering, for one step: 100 ms at high speed, 200 ms at low speed.
//! Times are kept in whole milliseconds so durations and frequencies come
//! out exact.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MOTOR_COUNT: u8 = 5;

/// Spacing between neighbouring motors, meters. Informational only.
pub const MOTOR_SPACING: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    RightToLeft = 1,
    LeftToRight = 2,
    CenterOut = 3,
    OutToCenter = 4,
    AllTogether = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Speed {
    High,
    Low,
}

impl Speed {
    fn step_ms(self) -> u32 {
        match self {
            Speed::High => 100,
            Speed::Low => 200,
        }
    }
}

/// One of the ten patterns, written `1H`, `3L`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternId {
    pub shape: Shape,
    pub speed: Speed,
}

impl PatternId {
    pub const fn new(shape: Shape, speed: Speed) -> Self {
        Self { shape, speed }
    }

    /// Canonical order: 1H, 1L, 2H, 2L, ..., 5H, 5L.
    pub const ALL: [PatternId; 10] = [
        PatternId::new(Shape::RightToLeft, Speed::High),
        PatternId::new(Shape::RightToLeft, Speed::Low),
        PatternId::new(Shape::LeftToRight, Speed::High),
        PatternId::new(Shape::LeftToRight, Speed::Low),
        PatternId::new(Shape::CenterOut, Speed::High),
        PatternId::new(Shape::CenterOut, Speed::Low),
        PatternId::new(Shape::OutToCenter, Speed::High),
        PatternId::new(Shape::OutToCenter, Speed::Low),
        PatternId::new(Shape::AllTogether, Speed::High),
        PatternId::new(Shape::AllTogether, Speed::Low),
    ];

    /// Position in [`PatternId::ALL`].
    pub fn index(self) -> usize {
        (self.shape as usize - 1) * 2
            + match self.speed {
                Speed::High => 0,
                Speed::Low => 1,
            }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown pattern id `{0}` (expected 1H..5H or 1L..5L)")]
pub struct ParsePatternError(pub String);

impl FromStr for PatternId {
    type Err = ParsePatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParsePatternError(s.to_string());
        let b = s.trim().as_bytes();
        if b.len() != 2 {
            return Err(err());
        }
        let shape = match b[0] {
            b'1' => Shape::RightToLeft,
            b'2' => Shape::LeftToRight,
            b'3' => Shape::CenterOut,
            b'4' => Shape::OutToCenter,
            b'5' => Shape::AllTogether,
            _ => return Err(err()),
        };
        let speed = match b[1] {
            b'H' | b'h' => Speed::High,
            b'L' | b'l' => Speed::Low,
            _ => return Err(err()),
        };
        Ok(PatternId { shape, speed })
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.speed {
            Speed::High => 'H',
            Speed::Low => 'L',
        };
        write!(f, "{}{}", self.shape as u8, s)
    }
}

impl Serialize for PatternId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PatternId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotorEvent {
    /// 1..=5, 1 = rightmost.
    pub motor_index: u8,
    pub start_ms: u32,
    pub duration_ms: u32,
}

impl MotorEvent {
    pub fn start(&self) -> f64 {
        self.start_ms as f64 / 1000.0
    }

    pub fn duration(&self) -> f64 {
        self.duration_ms as f64 / 1000.0
    }

    pub fn end_ms(&self) -> u32 {
        self.start_ms + self.duration_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTimeline {
    pub pattern: PatternId,
    /// Sorted by start time, then motor index.
    pub events: Vec<MotorEvent>,
    pub total_duration_ms: u32,
}

impl PatternTimeline {
    pub fn total_duration(&self) -> f64 {
        self.total_duration_ms as f64 / 1000.0
    }
}

/// Motors switched on at each step of a shape.
fn steps(shape: Shape) -> Vec<Vec<u8>> {
    match shape {
        Shape::RightToLeft => (1..=5).map(|m| vec![m]).collect(),
        Shape::LeftToRight => (1..=5).rev().map(|m| vec![m]).collect(),
        Shape::CenterOut => vec![vec![3], vec![2, 4], vec![1, 5]],
        Shape::OutToCenter => vec![vec![1, 5], vec![2, 4], vec![3]],
        Shape::AllTogether => vec![vec![1, 2, 3, 4, 5]],
    }
}

pub fn render_pattern(id: PatternId) -> PatternTimeline {
    let tau = id.speed.step_ms();
    let mut events = Vec::with_capacity(MOTOR_COUNT as usize);
    for (k, motors) in steps(id.shape).into_iter().enumerate() {
        for m in motors {
            events.push(MotorEvent {
                motor_index: m,
                start_ms: k as u32 * tau,
                duration_ms: tau,
            });
        }
    }
    let total_duration_ms = events.iter().map(MotorEvent::end_ms).max().unwrap_or(0);
    PatternTimeline {
        pattern: id,
        events,
        total_duration_ms,
    }
}

/// Playback rate in Hz: one rendering per cycle.
pub fn pattern_frequency(id: PatternId) -> f64 {
    1000.0 / render_pattern(id).total_duration_ms as f64
}

pub fn pattern_duration(id: PatternId) -> f64 {
    render_pattern(id).total_duration()
}

/// Motors on at time `t` seconds after the pattern started.
pub fn active_motors(timeline: &PatternTimeline, t: f64) -> BTreeSet<u8> {
    let ms = (t * 1000.0 * 1e6).round() / 1e6;
    timeline
        .events
        .iter()
        .filter(|e| ms >= e.start_ms as f64 && ms < e.end_ms() as f64)
        .map(|e| e.motor_index)
        .collect()
}

/// `motor,start_s,duration_s` rows with a header line.
pub fn timeline_csv(timeline: &PatternTimeline) -> String {
    let mut out = String::from("motor,start_s,duration_s\n");
    for e in &timeline.events {
        out.push_str(&format!("{},{:.3},{:.3}\n", e.motor_index, e.start(), e.duration()));
    }
    out
}
