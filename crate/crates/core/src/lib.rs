//! Thermodynamic formalism for finite-horizon Sinai billiards on the unit torus.

pub mod billiard_map;
pub mod complexity;
pub mod error;
pub mod geometry;
pub mod rng;
pub mod runner;
pub mod singularity;
pub mod thermo_statistics;
pub mod transfer_spectrum;

pub use billiard_map::{CollisionStep, PhasePoint, TangentVector};
pub use error::{GeometryError, MapError, SingularityError};
pub use geometry::{TableConfig, TableGeometry};
