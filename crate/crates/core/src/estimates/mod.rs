//! Empirical verification of the local estimates on solution families.
//!
//! Constants are fitted, never assumed: each check reports the smallest constant that makes the
//! inequality hold on the data, and the falsifiable content lies in its stability under grid
//! refinement and its scaling in `r − ρ`.

pub mod cutoff;
pub mod family;
pub mod inequalities;
pub mod moser;
pub mod norms;
pub mod representation;

pub use cutoff::{measure_cutoff_constants, CutoffConstants, CutoffProfile};
pub use family::{envelope_family, kernel_translates, standard_family, Member, Tag};
pub use inequalities::{caccioppoli_check, sobolev_check, CaccioppoliMeasurement, SobolevMeasurement};
pub use moser::{
    inf_estimate_check, moser_iterate, moser_sweep, one_sided_moser_check, subsolution_range_check, InfReport, MoserReport, MoserSchedule, RangeTable,
    SweepFit,
};
pub use norms::{lp_norm_cylinder, LpNorm, NodeGauge};
pub use representation::{representation_check, Bump, RepresentationReport};
