//! `field`, `nullclines` and `basin` over a (ψ, γ) grid.

use phinet_core::eigen::{Equilibrium, ReducedSystem};
use phinet_core::portrait::{basin_map, nullclines as core_nullclines, simsiam_basin, vector_field, BasinOptions, GridSpec, UNCLASSIFIED};
use phinet_core::FlowForm;
use serde::{Deserialize, Serialize};

use super::{hyper, Output};
use crate::config::decode;
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortraitConfig {
    pub sigma2: f64,
    pub rho: f64,
    pub form: FlowForm,
    pub psi_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl Default for PortraitConfig {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            sigma2: 1.5,
            rho: 0.03,
            form: FlowForm::Analysis,
            psi_range: g.psi_range,
            gamma_range: g.gamma_range,
            nx: g.nx,
            ny: g.ny,
        }
    }
}

impl PortraitConfig {
    fn grid(&self) -> CliResult<GridSpec> {
        Ok(GridSpec::new(self.psi_range, self.gamma_range, self.nx, self.ny)?)
    }
}

pub fn field(table: toml::Table) -> CliResult<Output> {
    let cfg: PortraitConfig = decode(table)?;
    let h = hyper(cfg.sigma2, cfg.rho)?;
    let samples = vector_field(&h, &cfg.grid()?, cfg.form)?;
    let mut t = Table::new(["psi", "gamma", "dpsi", "dgamma"]);
    for s in &samples {
        t.push(vec![s.psi.into(), s.gamma.into(), s.dpsi.into(), s.dgamma.into()]);
    }
    Output::new(t, &samples)
}

pub fn nullclines(table: toml::Table) -> CliResult<Output> {
    let cfg: PortraitConfig = decode(table)?;
    let h = hyper(cfg.sigma2, cfg.rho)?;
    let nc = core_nullclines(&h, &cfg.grid()?, cfg.form)?;
    let mut t = Table::new(["curve", "branch", "psi", "gamma"]);
    for (name, lines) in [("psi_dot", &nc.psi_dot), ("gamma_dot", &nc.gamma_dot)] {
        for (b, line) in lines.iter().enumerate() {
            for p in line {
                t.push(vec![name.into(), b.into(), p[0].into(), p[1].into()]);
            }
        }
    }
    Output::new(t, &nc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasinConfig {
    pub sigma2: f64,
    pub rho: f64,
    pub system: ReducedSystem,
    pub psi_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// Integration time; defaults to max(2000, 10/ρ) for small ρ.
    pub horizon: Option<f64>,
    pub dt: f64,
    pub radius: f64,
}

impl Default for BasinConfig {
    fn default() -> Self {
        let g = GridSpec::default();
        let o = BasinOptions::default();
        Self {
            sigma2: 1.5,
            rho: 0.08,
            system: ReducedSystem::PhiNet,
            psi_range: g.psi_range,
            gamma_range: g.gamma_range,
            nx: g.nx,
            ny: g.ny,
            horizon: o.horizon,
            dt: o.dt,
            radius: o.radius,
        }
    }
}

fn attractor_cells(a: Option<&Equilibrium>) -> [Cell; 3] {
    match a {
        Some(e) => [Cell::F(e.psi), Cell::F(e.gamma), Cell::S(format!("{:?}", e.class).to_lowercase())],
        None => [Cell::Empty, Cell::Empty, Cell::Empty],
    }
}

pub fn basin(table: toml::Table) -> CliResult<Output> {
    let cfg: BasinConfig = decode(table)?;
    let h = hyper(cfg.sigma2, cfg.rho)?;
    let opts = BasinOptions {
        horizon: cfg.horizon,
        dt: cfg.dt,
        radius: cfg.radius,
    };
    opts.validate()?;
    let mut t = Table::new(["psi", "gamma", "label", "attractor_psi", "attractor_gamma", "attractor_class"]);
    let form = match cfg.system {
        ReducedSystem::PhiNet => FlowForm::Analysis,
        ReducedSystem::PhiNetGradient => FlowForm::Gradient,
        ReducedSystem::SimSiam => {
            if cfg.ny != 1 {
                return Err(CliError::validation("simsiam basins are one-dimensional; set ny = 1"));
            }
            let b = simsiam_basin(&h, cfg.psi_range, cfg.nx, &opts)?;
            for (p, &l) in b.seeds.iter().zip(&b.labels) {
                let mut row = vec![Cell::F(*p), Cell::F(0.0), l.into()];
                row.extend(attractor_cells(b.attractor(l)));
                t.push(row);
            }
            return Output::new(t, &b);
        }
    };
    let map = basin_map(&h, &cfg.grid()?, &opts, form)?;
    for i in 0..map.grid.nx {
        for j in 0..map.grid.ny {
            let l = map.label_at(i, j);
            let mut row = vec![Cell::F(map.grid.psi(i)), Cell::F(map.grid.gamma(j)), l.into()];
            row.extend(attractor_cells(if l == UNCLASSIFIED { None } else { map.attractor(l) }));
            t.push(row);
        }
    }
    Output::new(t, &map)
}

impl BasinConfig {
    fn grid(&self) -> CliResult<GridSpec> {
        Ok(GridSpec::new(self.psi_range, self.gamma_range, self.nx, self.ny)?)
    }
}
