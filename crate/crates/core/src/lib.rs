//! Reclaim disk space by replacing large downloaded files with small
//! encrypted recipes, and bring them back from the web when needed.
//!
//! The flow is: [`scan`] finds the biggest files and their download
//! provenance ([`origin`]), [`webcheck`] verifies that a byte-identical copy is
//! still served at the recorded URLs, [`engine`] swaps approved files for
//! [`recipe`]s kept in a [`store`], and later maintains or reconstitutes them.
//! [`report`] reproduces study-style statistics over scan corpora.

pub mod corpus;
pub mod engine;
pub mod origin;
pub mod recipe;
pub mod report;
pub mod scan;
pub mod store;
pub mod units;
pub mod webcheck;

pub use origin::{Channel, OriginMetadata, SourceCategory};
pub use recipe::Recipe;
pub use scan::FileRecord;
pub use webcheck::{Availability, AvailabilityOutcome, ChannelResult};
