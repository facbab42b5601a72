//! Workload-identity based packet classification at desk scale.
//!
//! The crate is organized around the life of a classification entry:
//!
//! * [`model`] — labels, Services, SACL IDs, selectors, policies and the
//!   other value types shared by every layer.
//! * [`controller`] — registers workloads, assigns Services, compiles
//!   policies into `(client, server, value)` rules and produces per-device
//!   distribution plans.
//! * [`codec`] — bit-exact encoding of the SACL ID Hop-by-Hop option in
//!   simulated IPv6 packets, plus LID marking in the Hop Limit field.
//! * [`gateway`] — the SACL gateway data plane: identity attachment,
//!   connection tracking, server-side filtering and ID stripping.
//! * [`fabric`] — a deterministic 3-tier CLOS fabric simulator with
//!   per-switch rule tables and traceable packet walks.
//! * [`entrymodel`] — closed-form entry-count formulas for the
//!   conventional (network-identifier) and Service-based approaches, with
//!   diff-based measurement utilities.

pub mod codec;
pub mod controller;
pub mod entrymodel;
pub mod fabric;
pub mod gateway;
pub mod model;
