pub mod geometry;
pub mod kinematics;
pub mod dh;
pub mod calibration;
pub mod metrics;
pub mod simulator;
pub mod config;
pub mod io;
