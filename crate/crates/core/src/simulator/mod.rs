//! Synthetic marinas, vehicle runs and sonar frames with known ground truth.

mod render;
mod run;
pub mod scenario;
mod world;

pub use render::{first_returns, render_sonar, NoiseSpec, SonarModel};
pub use run::{
    dead_reckoning, frame_name, simulate_run, ControlTracker, DeadReckoner, Rates, SensorSetup,
    Trajectory, MAX_SPEED,
};
pub use world::{generate_world, Rect, World, WorldSpec};
