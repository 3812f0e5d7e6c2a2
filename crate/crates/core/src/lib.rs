//! Stirring isotopies on embedded surfaces and their thickenings: fields,
//! flows, kinetic energy, mass flow, and countable block schedules whose
//! energies sum to infinity.

pub mod blocks;
pub mod cli;
pub mod energy;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod massflow;
pub mod reference;
