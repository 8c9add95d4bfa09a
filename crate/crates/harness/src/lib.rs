//! Synthetic tracking sequences and the experiment harness that runs the
//! three fusion modes over them.

pub mod bench;
pub mod error;
pub mod metrics;
pub mod scene;
pub mod study;
pub mod tracker;

pub use error::{HarnessError, Result};
pub use scene::{gen_scene, Attribute, Frame, SceneConfig, SequenceSpec};
pub use study::{run_study, StudyConfig, StudyResult};
pub use tracker::{run_tracker, Mode, ModelConfig, PreparedSequence, TrackRun, TrackerConfig, TrackerModel};
