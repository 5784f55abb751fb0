use phinet_core::{Hyper, IntegrationOptions, Method, Stride};
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::output::Table;

pub mod align;
pub mod dynamics;
pub mod portrait;
pub mod regime;
pub mod train;

/// What a subcommand produces: a table for CSV, a document for JSON and, for
/// training, the final state kept apart from the metrics.
pub struct Output {
    pub table: Table,
    pub json: Value,
    pub final_state: Option<Value>,
}

impl Output {
    pub fn new<T: Serialize>(table: Table, doc: &T) -> CliResult<Self> {
        Ok(Self {
            table,
            json: json(doc)?,
            final_state: None,
        })
    }
}

pub fn json<T: Serialize>(doc: &T) -> CliResult<Value> {
    serde_json::to_value(doc).map_err(|e| CliError::validation(format!("cannot encode JSON: {e}")))
}

pub fn hyper(sigma2: f64, rho: f64) -> CliResult<Hyper> {
    Ok(Hyper::new(sigma2, rho)?)
}

pub fn integration(dt: f64, steps: usize, method: Method, stride: Option<usize>) -> CliResult<IntegrationOptions> {
    let opts = IntegrationOptions::new(dt, steps, method).with_stride(stride.map_or(Stride::Auto, Stride::Every));
    opts.validate()?;
    Ok(opts)
}
