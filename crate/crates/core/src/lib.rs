//! Simulation workbench for collaborative needle insertion with optical tip-force sensing.
//!
//! The crate is organised along the signal path of an insertion:
//!
//! * [`phantom`] layered tissue phantoms and their ground-truth interfaces,
//! * [`mechanics`] tip, friction and shaft forces along the insertion,
//! * [`sensor`] compression-cavity model and OCT A-scan synthesis,
//! * [`neural`] cGRU-CNN and 2-D ResNet tip-force regressors with their own gradient engine,
//! * [`estimator`] streaming tip-force estimators used inside the loop,
//! * [`control`] PI admittance controller, 200 Hz session loop and scripted operators,
//! * [`analysis`] interface detection, friction regression and reporting.

pub mod analysis;
pub mod control;
pub mod estimator;
pub mod exec;
pub mod mechanics;
pub mod meta;
pub mod neural;
pub mod phantom;
pub mod rng;
pub mod sensor;

pub use estimator::{SensorReading, TipForceEstimator};
pub use mechanics::{MechConfig, MechState, Mechanics, NeedleGeometry};
pub use phantom::{InterfaceEvent, InterfaceKind, Material, PhantomSpec, TissueLayer};
pub use sensor::{AScanFrame, Sensor, SensorConfig};
