//! Deterministic simulator and compliance lab for Bluetooth authentication
//! and encryption failure handling.
//!
//! Devices exchange typed HCI packets with simulated controllers; a MitM
//! node and an HCI fault injector produce key mismatches; host stacks react
//! according to a [`profiles::StackProfile`]; and [`compliance::grade`]
//! checks the reaction against the authentication failure decision table.
//! Every packet is captured and can be written as a btsnoop file.

pub mod attack;
pub mod bus;
pub mod clock;
pub mod compliance;
pub mod config;
pub mod hci;
pub mod host;
pub mod keystore;
pub mod linklayer;
pub mod profiles;
pub mod runner;
pub mod sim;
pub mod trace;
pub mod types;
