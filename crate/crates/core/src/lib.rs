//! Deterministic simulator and analysis pipeline for a four-state molecular
//! cellular automaton on a hexagonal lattice.

pub mod analysis;
pub mod circuits;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod pattern;
pub mod protocols;
pub mod rules;

pub use error::{Error, Result};
pub use lattice::{CellCoord, CellState, HexGrid, Region};
