//! Energy-harvesting small-cell scheduling with a flexible functional split.
//!
//! The crate models a renewable-powered small cell that chooses, per slot,
//! a transmit power and a functional-split mode trading fronthaul load
//! against local processing energy. It provides:
//!
//! - [`model`]: system configuration, split-mode catalog, channel and
//!   energy-arrival laws, TOML config round-trip.
//! - [`closedform`]: single-epoch optimal policies in closed form
//!   (glue-pouring power levels and the case analysis over budget regimes).
//! - [`offline`]: the non-causal finite-horizon convex program, structure
//!   verification, and relax-and-round integerization.
//! - [`mdp`]: online policy via relative value iteration on the quantized
//!   Markov decision process, with fronthaul-price calibration.
//! - [`heuristic`]: a lightweight online policy reusing the closed forms on
//!   forecast horizons.
//! - [`sim`]: the slot-level simulator, random-stream management, and policy
//!   evaluation with common random numbers.
//! - [`experiment`]: sweep definitions and CSV reporting.

pub mod closedform;
pub mod experiment;
pub mod heuristic;
pub mod mdp;
pub mod model;
pub mod offline;
pub mod sim;

pub use closedform::{best_pair_policy, glue_pour_power, single_epoch_policy, SingleEpochProblem};
pub use heuristic::{good_block_forecast, HeuristicParams, HeuristicPolicy};
pub use mdp::{train_mdp, MdpParams, TrainedMdp};
pub use model::{validate_config, ModeCatalog, SplitMode, SystemConfig};
pub use offline::{round_solution, solve_offline, verify_structure, OfflineInstance};
pub use sim::{run_episode, Policy};
