//! Presymplectic Lie systems: geometry on coordinate charts, a catalog of
//! worked systems, time-dependent integration, Casimir invariants, diagonal
//! prolongations, superposition rules and traveling waves of the Schwarzian
//! KdV equation.

pub mod catalog;
pub mod coeffexpr;
pub mod geometry;
pub mod integrator;
pub mod invariants;
pub mod prolong;
pub mod skdv;
pub mod superpose;
