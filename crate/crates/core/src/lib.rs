//! Wrist-worn marker tracking, vibrotactile guidance and distance-zone
//! safety for a shared human-robot workspace.

pub mod analysis;
pub mod cli;
pub mod geometry;
pub mod gimbal;
pub mod haptics;
pub mod marker_pose;
pub mod safety;
pub mod sim;
