//! HTTP API over a precomputed analysis bundle.
//!
//! All GET endpoints are pure functions of the bundle. Concept matrices are
//! computed on demand and identified concepts go to an append-only store.

pub mod api;
pub mod views;

pub use api::{router, AppState};
