//! Deterministic multi-rate co-simulation of EV charging in a low-voltage grid.
//!
//! Participants (grid solver, EV chargers, operators, an emulated power
//! hardware-in-the-loop chain) exchange scalar samples over a last-value
//! [`bus`], and are stepped by a multi-rate [`timeline`] either as fast as
//! possible or paced against the wall clock.

pub mod bus;
pub mod fleet;
pub mod grid;
pub mod phil;
pub mod scenario;
pub mod timeline;
