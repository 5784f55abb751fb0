//! `align`: commutator decay along the symmetric matrix flow.

use nalgebra::DMatrix;
use phinet_core::alignment::{track_alignment, AlignmentReport};
use phinet_core::eigen::{aligned_params, EigenState};
use phinet_core::{FlowForm, MatrixParams, Method, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{hyper, integration, Output};
use crate::config::decode;
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignInit {
    /// Random W_f, symmetric random W_h and W_g.
    Random,
    /// Simultaneously diagonal in a random orthonormal basis (d = m).
    Aligned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub sigma2: f64,
    pub rho: f64,
    pub form: FlowForm,
    pub m: usize,
    pub d: usize,
    pub init: AlignInit,
    pub gain: f64,
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub method: Method,
    pub stride: Option<usize>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            sigma2: 1.5,
            rho: 0.05,
            form: FlowForm::Analysis,
            m: 3,
            d: 3,
            init: AlignInit::Random,
            gain: 1.0,
            seed: 0,
            dt: 0.01,
            steps: 10_000,
            method: Method::Rk4,
            stride: None,
        }
    }
}

fn initial(cfg: &AlignConfig) -> CliResult<MatrixParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.init {
        AlignInit::Random => Ok(MatrixParams::sample(cfg.m, cfg.d, Mode::PhiNet, cfg.gain, true, &mut rng)),
        AlignInit::Aligned => {
            if cfg.d != cfg.m {
                return Err(CliError::validation("aligned init needs d = m"));
            }
            let states: Vec<EigenState> = (0..cfg.m)
                .map(|_| {
                    let psi: f64 = cfg.gain * rng.random_range(-0.5..0.5);
                    let gamma: f64 = cfg.gain * rng.random_range(-0.5..0.5);
                    let phi = psi * psi + cfg.gain * cfg.gain * rng.random_range(0.0..0.1);
                    EigenState::new(phi, psi, gamma)
                })
                .collect();
            let raw = DMatrix::from_fn(cfg.m, cfg.m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = raw.qr().q();
            Ok(aligned_params(&states, Some(&q))?)
        }
    }
}

#[derive(Serialize)]
struct AlignDoc<'a> {
    config: &'a AlignConfig,
    report: &'a AlignmentReport,
}

pub fn align(table: toml::Table) -> CliResult<Output> {
    let cfg: AlignConfig = decode(table)?;
    let h = hyper(cfg.sigma2, cfg.rho)?;
    let opts = integration(cfg.dt, cfg.steps, cfg.method, cfg.stride)?;
    if cfg.m < 2 || cfg.d == 0 {
        return Err(CliError::validation("align needs m >= 2 and d >= 1"));
    }
    if !(cfg.gain.is_finite() && cfg.gain >= 0.0) {
        return Err(CliError::validation("gain must be finite and >= 0"));
    }
    let rep = track_alignment(&initial(&cfg)?, &h, &opts, cfg.form)?;
    let mut headers: Vec<String> = ["t", "c1", "c2", "c3", "xi", "min_eig_k", "min_eig_full"].map(String::from).to_vec();
    headers.extend((0..cfg.m).map(|i| format!("residual_{i}")));
    headers.extend(["fitted_decay_rate".into(), "fitted_parabola_rate".into()]);
    let mut t = Table::new(headers);
    for k in 0..rep.times.len() {
        let n = rep.trajectory_norms[k];
        let mut row = vec![
            Cell::F(rep.times[k]),
            Cell::F(n[0]),
            Cell::F(n[1]),
            Cell::F(n[2]),
            Cell::F(rep.xi_norms[k]),
            Cell::F(rep.min_symmetric_eig_of_k[k]),
            Cell::F(rep.min_symmetric_eig_full[k]),
        ];
        row.extend(rep.parabola_residuals[k].iter().copied().map(Cell::F));
        row.push(rep.fitted_decay_rate.into());
        row.push(rep.fitted_parabola_rate.into());
        t.push(row);
    }
    Output::new(t, &AlignDoc { config: &cfg, report: &rep })
}
