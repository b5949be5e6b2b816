//! Transit network segmentation, traffic-delay forecasting, and continuously
//! refined arrival-time estimation from sparse bus GPS traces.

pub mod error;
pub mod geo;
pub mod hexgrid;
pub mod ingest;
pub mod model;
pub mod segmentation;

pub use error::{Error, Result};
