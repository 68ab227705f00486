//! Scene-file front end for `multipole-core`.
//!
//! A scene declares charts, worldlines and multipoles by name and lists jobs
//! to run on them. See the repository README for the file format.

pub mod run;
pub mod scene;

pub use run::{run, summary, JobReport, RunOptions};
pub use scene::{parse_kappa0, parse_scene, Command, Scene, SceneError};
