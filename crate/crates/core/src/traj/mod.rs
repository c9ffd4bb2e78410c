//! Smooth trajectory generation and sequencing.
//!
//! References are built from ninth-order polynomial transfer segments that
//! match position through snap at both ends, straight constant-velocity
//! cruises, and hovers. [`mission`] assembles waypoint routes from those
//! pieces, [`sequence`] plays them back with pause/resume and cyclic repeat,
//! and [`flatness`] turns a flat output into the rigid-body state a
//! controller needs.

pub mod flatness;
pub mod mission;
pub mod poly;
pub mod segment;
pub mod sequence;

pub use flatness::{flat_to_state, ReferenceState, MIN_SPECIFIC_FORCE};
pub use mission::{mission_elements, mission_sequence, MissionParams, Waypoint, YawMode};
pub use poly::{boundary_interpolant, SegmentPoly, BOUNDARY_DERIVS, TRANSFER_COEFFS};
pub use segment::{
    fillet_duration, transfer_segment, FlatOutput, SegmentKind, TrajError, TrajectorySegment,
};
pub use sequence::{BridgeParams, ElementKind, SequenceElement, TrajectorySequence};
