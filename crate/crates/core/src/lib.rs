//! Decentralized control of rooftop solar and home batteries on a radial
//! distribution feeder, where the network-wide coupling terms each bus needs
//! are computed by a set of clouds from Shamir shares instead of plaintext.
//!
//! Layering, bottom up:
//! - [`field`] and [`quantizer`] map real numbers into `GF(e)`;
//! - [`shamir`] splits, aggregates and reconstructs field elements;
//! - [`grid`] holds the feeder topology and the device models;
//! - [`solver`] is the projected-gradient primal-dual method, plus a
//!   full-information reference run;
//! - [`protocol`] runs the same iteration with private aggregation;
//! - [`harness`] loads scenarios, drives runs and writes traces.

pub mod field;
pub mod grid;
pub mod harness;
pub mod protocol;
pub mod quantizer;
pub mod shamir;
pub mod solver;
