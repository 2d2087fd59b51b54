//! Offline minimax soft-Q-learning (MSQP) and Q*-learning (MQP) on tabular
//! MDPs, with exact oracles for every quantity the estimators target.

pub mod benchmark;
pub mod classes;
pub mod data;
pub mod harness;
pub mod mdp;
pub mod numeric;
pub mod oracles;
pub mod solvers;
pub mod table;

pub use table::{LagrangeFunction, QFunction, SaTable};
