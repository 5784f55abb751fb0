//! `flow` and `eigen`: single trajectories of the matrix and eigenvalue systems.

use phinet_core::eigen::{integrate_eigen, EigenState, EigenSystem};
use phinet_core::flows::integrate_flow;
use phinet_core::{FlowForm, MatrixParams, Method, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{hyper, integration, Output};
use crate::config::decode;
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Random,
    Zero,
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub sigma2: f64,
    pub rho: f64,
    pub mode: Mode,
    pub form: FlowForm,
    pub m: usize,
    pub d: usize,
    pub init: Init,
    pub gain: f64,
    pub symmetric: bool,
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub method: Method,
    pub stride: Option<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            sigma2: 1.5,
            rho: 0.03,
            mode: Mode::PhiNet,
            form: FlowForm::Analysis,
            m: 3,
            d: 4,
            init: Init::Random,
            gain: 1.0,
            symmetric: false,
            seed: 0,
            dt: 0.01,
            steps: 1000,
            method: Method::Rk4,
            stride: None,
        }
    }
}

#[derive(Serialize)]
struct TrajectoryDoc<'a> {
    config: &'a FlowConfig,
    columns: Vec<String>,
    times: &'a [f64],
    states: &'a [MatrixParams],
    diagnostic_names: &'a [String],
    diagnostics: &'a [Vec<f64>],
}

pub fn flow(table: toml::Table) -> CliResult<Output> {
    let cfg: FlowConfig = decode(table)?;
    let h = hyper(cfg.sigma2, cfg.rho)?;
    let opts = integration(cfg.dt, cfg.steps, cfg.method, cfg.stride)?;
    if cfg.m == 0 || cfg.d == 0 {
        return Err(CliError::validation("m and d must be >= 1"));
    }
    if !(cfg.gain.is_finite() && cfg.gain >= 0.0) {
        return Err(CliError::validation("gain must be finite and >= 0"));
    }
    let init = match cfg.init {
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            MatrixParams::sample(cfg.m, cfg.d, cfg.mode, cfg.gain, cfg.symmetric, &mut rng)
        }
        Init::Zero => MatrixParams::zeros(cfg.m, cfg.d, cfg.mode),
        Init::Identity => MatrixParams::identity(cfg.m, cfg.d, cfg.mode),
    };
    let tr = integrate_flow(&init, &h, &opts, cfg.form)?;
    let labels = init.entry_labels();
    let mut t = Table::new(std::iter::once("t".to_string()).chain(labels.iter().cloned()).chain(tr.diagnostic_names.iter().cloned()));
    for ((time, state), diag) in tr.times.iter().zip(&tr.states).zip(&tr.diagnostics) {
        let mut row = vec![Cell::F(*time)];
        row.extend(state.flatten_row_major().into_iter().map(Cell::F));
        row.extend(diag.iter().copied().map(Cell::F));
        t.push(row);
    }
    let doc = TrajectoryDoc {
        config: &cfg,
        columns: labels,
        times: &tr.times,
        states: &tr.states,
        diagnostic_names: &tr.diagnostic_names,
        diagnostics: &tr.diagnostics,
    };
    Output::new(t, &doc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenConfig {
    pub sigma2: f64,
    pub rho: f64,
    pub system: EigenSystem,
    pub form: FlowForm,
    /// Defaults to ψ² (on the invariant parabola).
    pub phi: Option<f64>,
    pub psi: f64,
    pub gamma: f64,
    pub dt: f64,
    pub steps: usize,
    pub method: Method,
    pub stride: Option<usize>,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            sigma2: 1.5,
            rho: 0.03,
            system: EigenSystem::Reduced,
            form: FlowForm::Analysis,
            phi: None,
            psi: 0.1,
            gamma: 0.1,
            dt: 0.01,
            steps: 10_000,
            method: Method::Rk4,
            stride: None,
        }
    }
}

#[derive(Serialize)]
struct EigenRow {
    t: f64,
    phi: f64,
    psi: f64,
    gamma: f64,
    parabola_residual: f64,
    speed: f64,
}

#[derive(Serialize)]
struct EigenDoc<'a> {
    config: &'a EigenConfig,
    rows: Vec<EigenRow>,
}

pub fn eigen(table: toml::Table) -> CliResult<Output> {
    let cfg: EigenConfig = decode(table)?;
    let h = hyper(cfg.sigma2, cfg.rho)?;
    let opts = integration(cfg.dt, cfg.steps, cfg.method, cfg.stride)?;
    let phi = cfg.phi.unwrap_or(cfg.psi * cfg.psi);
    if ![phi, cfg.psi, cfg.gamma].iter().all(|v| v.is_finite()) || phi < 0.0 {
        return Err(CliError::validation("initial state must be finite with phi >= 0"));
    }
    let tr = integrate_eigen(&EigenState::new(phi, cfg.psi, cfg.gamma), &h, &opts, cfg.system, cfg.form)?;
    let mut t = Table::new(["t", "phi", "psi", "gamma", "parabola_residual", "speed"]);
    let mut rows = Vec::with_capacity(tr.len());
    for ((time, s), d) in tr.times.iter().zip(&tr.states).zip(&tr.diagnostics) {
        let row = EigenRow {
            t: *time,
            phi: s.phi,
            psi: s.psi,
            gamma: s.gamma,
            parabola_residual: d[0],
            speed: d[1],
        };
        t.push(vec![row.t.into(), row.phi.into(), row.psi.into(), row.gamma.into(), row.parabola_residual.into(), row.speed.into()]);
        rows.push(row);
    }
    Output::new(t, &EigenDoc { config: &cfg, rows })
}
