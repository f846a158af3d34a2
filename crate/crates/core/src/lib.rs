//! Cycle-level model of a heterogeneous RISC-V cluster with shared-L1 accelerators.
pub mod cluster;
pub mod ctrl;
pub mod datamover;
pub mod dma;
pub mod dwe;
pub mod engine;
pub mod error;
pub mod harness;
pub mod hci;
pub mod numerics;
pub mod rvnn;
pub mod tcdm;
pub mod tpe;
pub mod workloads;
pub use error::{Result, SimError};
