//! Sound bounds on weighted conditional reachability in labeled CTMCs
//! observed at imprecisely known times.

pub mod cli;
pub mod ctmc;
pub mod error;
pub mod evidence;
pub mod imdp;
pub mod oracle;
pub mod solver;
mod poisson;
pub mod refine;
pub mod unfolding;

pub use ctmc::{Ctmc, Distribution, WeightVector, DEFAULT_TRANSIENT_EPS};
pub use error::{Error, Result};
pub use evidence::{Cell, CellRef, ImpreciseEvidence, ObservationFormula, PreciseEvidence, TimePartition, TimeSet};
