//! Cycle-level model of a systolic matrix-multiplication accelerator that
//! enforces dynamic information flow tracking at row granularity.
//!
//! Data in main memory carries one 8-bit tag per 64-bit word; scratchpad
//! rows and rows travelling through the array carry one tag per row. The
//! accelerator refuses tagged commands, faults when two client domains
//! would be mixed, and keeps every timing and addressing decision
//! independent of tagged values. [`harness`] checks that last property by
//! running pairs of executions that differ only in tagged data.

pub mod command;
pub mod controller;
pub mod harness;
pub mod memory;
pub mod mesh;
pub mod program;
pub mod row;
pub mod scratchpad;
pub mod tag;
pub mod trace;
pub mod workload;

pub use command::{Command, CommandKind};
pub use controller::{AccelConfig, Controller, Fault, FaultKind, SimObservation, SimStats};
pub use memory::{TaggedMemory, TaggedWord};
pub use mesh::{Activation, Dataflow, Mesh, MeshConfig};
pub use row::{ElemWidth, TaggedRow};
pub use scratchpad::ScratchpadBank;
pub use tag::{MixingFault, Tag, TagPolicy};
