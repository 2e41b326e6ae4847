//! Covariate balancing weights by integral probability metric minimization.
//!
//! The crate learns weights on one treatment group so that its weighted
//! covariate distribution matches a target distribution under an IPM (RBF
//! MMD, a sigmoid-unit ensemble, or a gradient-penalized Lipschitz network),
//! and compares them against stabilized IPW, CBPS and entropy balancing on
//! simulated benchmarks.
//!
//! ```no_run
//! use cbipm::balancers::{balance, Estimand, Method, Settings};
//! use cbipm::simgen::{generate, Design, SimConfig};
//!
//! let (ds, _oracle) = generate(&SimConfig::new(Design::KsNonlinear, 1000, 7)).unwrap();
//! let method: Method = "ncbipm-mmd".parse().unwrap();
//! let fit = balance(&ds, method, Estimand::Att, &Settings::for_method(method), 7).unwrap();
//! println!("{}", cbipm::estimators::estimate(&ds, &fit).unwrap());
//! ```

pub mod balancers;
pub mod bench;
pub mod data;
pub mod diagnostics;
pub mod discriminators;
pub mod error;
pub mod estimators;
pub mod optim;
pub mod seed;
pub mod simgen;

pub use data::{Dataset, GroupView, Side, SimOracle, WeightVector};
pub use error::{Error, Result};
