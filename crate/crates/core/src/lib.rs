//! Learning motion-style costs for serial arms from pairwise preferences.
//!
//! A style (happy, sad, hesitant, ...) is a cost over joint-space
//! trajectories. Adding it to a smoothness task cost and optimizing with fixed
//! start and goal yields stylized motion for any task. The cost is learned
//! from pairwise "which one looks more <style>?" labels under a
//! Bradley-Terry choice model, with queries generated by perturbing the
//! current optimum.
//!
//! Module map:
//! - [`kinematics`]: arm model and forward kinematics
//! - [`trajectory`]: waypoint trajectories, task cost, smooth perturbations
//! - [`costs`]: featurized and neural style costs, planning objective
//! - [`optimizer`]: endpoint-constrained local trajectory optimization
//! - [`learning`]: preference model, loss, training, rotation augmentation
//! - [`query`]: the active query/label/train loop and synthetic oracles
//! - [`store`]: sessions, persistence, replay, exports

pub mod costs;
pub mod error;
pub mod kinematics;
pub mod learning;
pub mod optimizer;
pub mod query;
pub mod rng;
pub mod store;
pub mod trajectory;

pub use error::{Error, Result};
