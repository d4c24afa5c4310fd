//! Batch pipeline over activation stores: per-stage CSV/JSON artifacts and
//! SVG figures, driven by a JSON [`config::RunConfig`].

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod svg;
pub mod table;

pub use config::{RunConfig, Stage};
pub use error::{CliError, Result};
pub use pipeline::run_pipeline;
pub use report::render_figures;
