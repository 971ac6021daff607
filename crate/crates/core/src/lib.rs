//! Simulator and control stack for a two-link supernumerary arm driven by
//! variable-stiffness actuators.

pub mod calibration;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fsm;
pub mod kinematics;
pub mod motion;
pub mod observer;
pub mod params;
pub mod safety;
pub mod session;
pub mod tracking;
pub mod workspace;

pub use config::{load_config, SimConfig};
pub use dynamics::{ArmState, Mat2, Vec2};
pub use error::{Error, Result, Violation};
pub use fsm::{Button, ButtonEvent, TaskState};
pub use kinematics::{Elbow, JointLimits, PlanarPose};
pub use observer::Calibration;
pub use params::ArmParams;
pub use session::{CommandMessage, StateMessage};
pub use workspace::{WorkspaceResult, WorkspaceSpec};
