//! `regime` and `sweep`: equilibria and sink counts of the reduced systems.

use phinet_core::eigen::{regime_of, simsiam_critical_rho, sweep_rho, Equilibrium, ReducedSystem, RegimeReport};
use serde::{Deserialize, Serialize};

use super::{hyper, Output};
use crate::config::decode;
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeConfig {
    pub sigma2: f64,
    pub rho: OneOrMany,
    pub system: ReducedSystem,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            sigma2: 1.5,
            rho: OneOrMany::Many(vec![0.12, 0.03, 0.003, 0.0001]),
            system: ReducedSystem::PhiNet,
        }
    }
}

#[derive(Serialize)]
struct RegimeDoc {
    sigma2: f64,
    system: ReducedSystem,
    /// SimSiam 1↔2 sink boundary 1/(4(1+σ²)); reported for every system as a reference.
    simsiam_critical_rho: f64,
    reports: Vec<RegimeReport>,
}

const EQUILIBRIUM_COLUMNS: [&str; 10] = ["rho", "regime", "sink_count", "psi", "gamma", "class", "eig0_re", "eig0_im", "eig1_re", "eig1_im"];

fn equilibrium_row(r: &RegimeReport, e: &Equilibrium) -> Vec<Cell> {
    let mut row = vec![
        Cell::F(r.hyper.rho),
        r.regime.name().into(),
        r.sink_count.into(),
        Cell::F(e.psi),
        Cell::F(e.gamma),
        Cell::S(format!("{:?}", e.class).to_lowercase()),
    ];
    for k in 0..2 {
        match e.jacobian_eigs.get(k) {
            Some(z) => row.extend([Cell::F(z.re), Cell::F(z.im)]),
            None => row.extend([Cell::Empty, Cell::Empty]),
        }
    }
    row
}

pub fn regime(table: toml::Table) -> CliResult<Output> {
    let cfg: RegimeConfig = decode(table)?;
    let rhos = cfg.rho.values();
    if rhos.is_empty() {
        return Err(CliError::validation("rho grid is empty"));
    }
    if let Some(bad) = rhos.iter().find(|&&r| !(r.is_finite() && r > 0.0)) {
        return Err(CliError::validation(format!("rho must be > 0, got {bad}")));
    }
    let hypers = rhos.iter().map(|&r| hyper(cfg.sigma2, r)).collect::<CliResult<Vec<_>>>()?;
    let reports = hypers.iter().map(|h| regime_of(h, cfg.system)).collect::<Result<Vec<_>, _>>()?;
    let mut t = Table::new(EQUILIBRIUM_COLUMNS);
    for r in &reports {
        for e in &r.equilibria {
            t.push(equilibrium_row(r, e));
        }
    }
    let doc = RegimeDoc {
        sigma2: cfg.sigma2,
        system: cfg.system,
        simsiam_critical_rho: simsiam_critical_rho(cfg.sigma2),
        reports,
    };
    Output::new(t, &doc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub sigma2: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub grid: usize,
    pub system: ReducedSystem,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma2: 1.5,
            rho_min: 1e-5,
            rho_max: 0.3,
            grid: 60,
            system: ReducedSystem::PhiNet,
        }
    }
}

#[derive(Serialize)]
struct SweepDoc {
    #[serde(flatten)]
    sweep: phinet_core::eigen::Sweep,
    simsiam_critical_rho: f64,
}

pub fn sweep(table: toml::Table) -> CliResult<Output> {
    let cfg: SweepConfig = decode(table)?;
    hyper(cfg.sigma2, cfg.rho_min.max(0.0))?;
    let sw = sweep_rho(cfg.sigma2, cfg.rho_min, cfg.rho_max, cfg.grid, cfg.system)?;
    let mut t = Table::new(["kind", "rho", "regime", "sink_count", "sinks_above"]);
    for p in &sw.points {
        t.push(vec!["point".into(), Cell::F(p.hyper.rho), p.regime.name().into(), p.sink_count.into(), Cell::Empty]);
    }
    for b in &sw.boundaries {
        t.push(vec!["boundary".into(), Cell::F(b.rho), Cell::Empty, b.sinks_below.into(), b.sinks_above.into()]);
    }
    let doc = SweepDoc {
        simsiam_critical_rho: simsiam_critical_rho(cfg.sigma2),
        sweep: sw,
    };
    Output::new(t, &doc)
}
