//! wasm-bindgen entry points for the static demo page. Every export returns a JSON
//! string; errors come back as `{"error": "..."}` so the page never has to catch.

use phinet_core::eigen::{self, Equilibrium, ReducedSystem};
use phinet_core::flows::{FlowForm, Hyper};
use phinet_core::portrait::{self, BasinOptions, GridSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Basin grids are capped so one call stays interactive.
pub const MAX_BASIN_CELLS: usize = 60 * 60;
pub const MAX_BASIN_HORIZON: f64 = 400.0;

fn form_of(gradient: bool) -> FlowForm {
    if gradient {
        FlowForm::Gradient
    } else {
        FlowForm::Analysis
    }
}

fn system_of(gradient: bool) -> ReducedSystem {
    if gradient {
        ReducedSystem::PhiNetGradient
    } else {
        ReducedSystem::PhiNet
    }
}

fn respond<T: Serialize>(r: phinet_core::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[derive(Serialize)]
struct Portrait {
    regime: &'static str,
    sink_count: usize,
    field: Vec<portrait::FieldSample>,
    nullclines: portrait::Nullclines,
    equilibria: Vec<Equilibrium>,
}

pub fn portrait_data(sigma2: f64, rho: f64, gradient: bool, grid: GridSpec) -> phinet_core::Result<impl Serialize> {
    let hyper = Hyper::new(sigma2, rho)?;
    let form = form_of(gradient);
    let report = eigen::regime_of(&hyper, system_of(gradient))?;
    let fine = GridSpec { nx: 400, ny: 400, ..grid };
    Ok(Portrait {
        regime: report.regime.name(),
        sink_count: report.sink_count,
        field: portrait::vector_field(&hyper, &grid, form)?,
        nullclines: portrait::nullclines(&hyper, &fine, form)?,
        equilibria: report.equilibria,
    })
}

/// Vector field, nullclines and classified equilibria on `[psi_lo, psi_hi] × [gamma_lo, gamma_hi]`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn phase_portrait(sigma2: f64, rho: f64, gradient: bool, psi_lo: f64, psi_hi: f64, gamma_lo: f64, gamma_hi: f64, n: usize) -> String {
    respond(GridSpec::new((psi_lo, psi_hi), (gamma_lo, gamma_hi), n, n).and_then(|g| portrait_data(sigma2, rho, gradient, g)))
}

pub fn basin_data(sigma2: f64, rho: f64, gradient: bool, grid: GridSpec, horizon: f64) -> phinet_core::Result<portrait::BasinMap> {
    if grid.nx * grid.ny > MAX_BASIN_CELLS {
        return Err(phinet_core::Error::Config(format!("basin grid limited to {MAX_BASIN_CELLS} cells")));
    }
    let hyper = Hyper::new(sigma2, rho)?;
    let opts = BasinOptions { horizon: Some(horizon.min(MAX_BASIN_HORIZON)), dt: 0.05, ..BasinOptions::default() };
    portrait::basin_map(&hyper, &grid, &opts, form_of(gradient))
}

/// Attractor label per seed of an `n × n` grid; −1 marks unclassified seeds.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn basin(sigma2: f64, rho: f64, gradient: bool, psi_lo: f64, psi_hi: f64, gamma_lo: f64, gamma_hi: f64, n: usize, horizon: f64) -> String {
    respond(GridSpec::new((psi_lo, psi_hi), (gamma_lo, gamma_hi), n, n).and_then(|g| basin_data(sigma2, rho, gradient, g, horizon)))
}

#[derive(Serialize)]
struct Curve {
    critical_rho: f64,
    collapses: bool,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    equilibria: Vec<Equilibrium>,
}

pub fn simsiam_data(sigma2: f64, rho: f64, psi_lo: f64, psi_hi: f64, n: usize) -> phinet_core::Result<impl Serialize> {
    let hyper = Hyper::new(sigma2, rho)?;
    if n < 2 || !(psi_lo < psi_hi) {
        return Err(phinet_core::Error::Config("curve needs n >= 2 and psi_lo < psi_hi".into()));
    }
    let psi: Vec<f64> = (0..n).map(|i| psi_lo + (psi_hi - psi_lo) * i as f64 / (n - 1) as f64).collect();
    let dpsi = psi.iter().map(|&p| eigen::rhs_simsiam(p, &hyper)).collect();
    let equilibria = eigen::simsiam_equilibria(&hyper);
    Ok(Curve {
        critical_rho: eigen::simsiam_critical_rho(sigma2),
        collapses: equilibria.iter().filter(|e| e.is_sink()).count() == 1,
        psi,
        dpsi,
        equilibria,
    })
}

/// ψ̇ of the scalar SimSiam system sampled on `n` points, with its equilibria.
#[wasm_bindgen]
pub fn simsiam_curve(sigma2: f64, rho: f64, psi_lo: f64, psi_hi: f64, n: usize) -> String {
    respond(simsiam_data(sigma2, rho, psi_lo, psi_hi, n))
}
