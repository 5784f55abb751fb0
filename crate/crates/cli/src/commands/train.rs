//! `train` and `flow-agreement`: the toy SGD trainer.

use phinet_core::flows::Hyper;
use phinet_core::trainer::{self, flow_agreement, FlowAgreement, MetricsRow, TrainerConfig};
use serde::{Deserialize, Serialize};

use super::{json, Output};
use crate::config::decode;
use crate::error::CliResult;
use crate::output::{Cell, Table};

const METRIC_COLUMNS: [&str; 11] = [
    "step",
    "time",
    "loss_sim1",
    "loss_sim2",
    "top_eigenvalue_phi",
    "stable_rank",
    "principal_angle_max",
    "norm_f",
    "norm_h",
    "norm_g",
    "cosine_guarded",
];

fn metric_row(r: &MetricsRow) -> Vec<Cell> {
    vec![
        r.step.into(),
        r.time.into(),
        r.loss_sim1.into(),
        r.loss_sim2.into(),
        r.top_eigenvalue_phi.into(),
        r.stable_rank.into(),
        r.principal_angle_max.into(),
        r.norm_f.into(),
        r.norm_h.into(),
        r.norm_g.into(),
        r.cosine_guarded.into(),
    ]
}

#[derive(Serialize)]
struct TrainDoc<'a> {
    config: &'a TrainerConfig,
    metrics: &'a [MetricsRow],
}

/// A partial `hyper` table (e.g. from `--set hyper.rho=...`) keeps the default for the other field.
fn fill_hyper(table: &mut toml::Table, defaults: Hyper) {
    if let Some(toml::Value::Table(h)) = table.get_mut("hyper") {
        h.entry("sigma2").or_insert(toml::Value::Float(defaults.sigma2));
        h.entry("rho").or_insert(toml::Value::Float(defaults.rho));
    }
}

pub fn train(mut table: toml::Table) -> CliResult<Output> {
    fill_hyper(&mut table, TrainerConfig::default().hyper);
    let cfg: TrainerConfig = decode(table)?;
    cfg.validate()?;
    let run = trainer::train(&cfg)?;
    let mut t = Table::new(METRIC_COLUMNS);
    for r in &run.metrics {
        t.push(metric_row(r));
    }
    let mut out = Output::new(t, &TrainDoc { config: &cfg, metrics: &run.metrics })?;
    out.final_state = Some(json(&run.final_state)?);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgreementConfig {
    pub horizon: f64,
    /// Learning rates to compare; each halving should roughly halve the deviation.
    pub lrs: Vec<f64>,
    pub trainer: TrainerConfig,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            lrs: vec![4e-3, 2e-3, 1e-3, 5e-4],
            trainer: TrainerConfig {
                sim1_loss: trainer::SimLoss::Mse,
                sim2_loss: trainer::SimLoss::Mse,
                expectation: true,
                ..TrainerConfig::default()
            },
        }
    }
}

#[derive(Serialize)]
struct AgreementDoc<'a> {
    config: &'a AgreementConfig,
    runs: &'a [FlowAgreement],
}

pub fn agreement(mut table: toml::Table) -> CliResult<Output> {
    if let Some(toml::Value::Table(t)) = table.get_mut("trainer") {
        fill_hyper(t, AgreementConfig::default().trainer.hyper);
    }
    let cfg: AgreementConfig = decode(table)?;
    if cfg.lrs.is_empty() {
        return Err(crate::error::CliError::validation("lrs is empty"));
    }
    let mut configs = Vec::new();
    for &lr in &cfg.lrs {
        let c = TrainerConfig { lr, ..cfg.trainer.clone() };
        c.validate()?;
        configs.push(c);
    }
    let runs = configs.iter().map(|c| flow_agreement(c, cfg.horizon)).collect::<Result<Vec<_>, _>>()?;
    let mut t = Table::new(["lr", "steps", "horizon", "deviation", "ratio_to_previous"]);
    for (k, r) in runs.iter().enumerate() {
        let ratio = k.checked_sub(1).map(|p| runs[p].deviation / r.deviation);
        t.push(vec![r.lr.into(), r.steps.into(), r.horizon.into(), r.deviation.into(), ratio.into()]);
    }
    Output::new(t, &AgreementDoc { config: &cfg, runs: &runs })
}
