//! Dual-rail precharge logic toolkit: netlist model, WDDL transformation,
//! differential place and route, simulation, equivalence checking and
//! power-analysis evaluation.

pub mod cap;
pub mod cells;
pub mod dualrail;
pub mod dut;
pub mod equiv;
pub mod expr;
pub mod gen;
pub mod geom;
pub mod netlist;
pub mod sim;
pub mod text;
