//! Photo-to-building reconstruction.
//!
//! A building is reconstructed from one photograph and a user-drawn
//! silhouette in three stages:
//!
//! 1. **Mass + camera**: aligned templates propose starts for every mass
//!    style, a short search from each start ranks the styles, then a
//!    bound-constrained quadratic-model trust-region search fits the mass
//!    parameters and the orbit camera jointly against the silhouette.
//! 2. **Facade**: the most camera-facing facade is rectified, its floor and
//!    column grid is estimated from gradient profiles, windows are localized
//!    per tile, and the wall color is found by K-means in CIELAB.
//! 3. **Window**: a window style is voted over the tiles by comparing trim
//!    occupancy profiles with each style's template.
//!
//! The resulting [`grammar::BuildingGrammar`] is composed into meshes and
//! written as Wavefront OBJ/MTL.
//!
//! The [`broker`] module holds the exactly-once job queue used by the
//! service layer to spread reconstructions over slot-pinned workers.

pub mod broker;
pub mod grammar;
pub mod optimizer;
pub mod pipeline;
pub mod synth;
pub mod vision;
