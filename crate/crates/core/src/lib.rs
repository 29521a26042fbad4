//! Fitting DC power flow parameters to AC power flow data.
//!
//! The DC power flow relates branch flows to bus angle differences through a
//! per-branch coefficient `b`, with optional injection biases `gamma` and flow
//! biases `rho`. This crate samples operating scenarios, solves the full AC
//! power flow for each, and then picks `(b, gamma, rho)` by quasi-Newton
//! minimization of the squared mismatch between DC and AC branch flows.
//!
//! Module map:
//! - [`network`]: case parsing, admittances, incidence matrix, outages
//! - [`ac`]: Newton-Raphson AC power flow
//! - [`dc`]: DC power flow (angle and PTDF forms), cold/hot-start parameters
//! - [`scenario`]: randomized injection datasets
//! - [`loss`]: training loss and its analytic gradient
//! - [`optim`]: L-BFGS / BFGS with a strong Wolfe line search
//! - [`contingency`]: N-1 branch outage study
//! - [`report`]: evaluation tables, parameter statistics, run manifests

pub mod ac;
pub mod contingency;
pub mod dc;
pub mod error;
pub mod ldl;
pub mod loss;
pub mod network;
pub mod optim;
pub mod report;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
