//! Simulated bimanual surgical-needle handover: stereo needle state
//! estimation, fixed-point presentation servoing, decaying-step grasp
//! servoing, and a seeded evaluation harness.

pub mod geometry;
pub mod grasp;
pub mod harness;
pub mod kinematics;
pub mod perception;
pub mod rng;
pub mod servo;
pub mod sim;

