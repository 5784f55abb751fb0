//! Discrete SGD training of SimSiam, PhiNet and X-PhiNet on the Gaussian data model.
//!
//! Per step: sample a batch, compute Sim-1 (and Sim-2) with stop-gradient targets,
//! take `θ ← θ − lr·(∇L + ρθ)` on the online networks, then for X-PhiNet move the
//! slow encoder by EMA.

pub mod data;
pub mod metrics;
pub mod model;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{sample_batch, Batch};
pub use metrics::{alignment_angle_deg, stable_rank, top_eigenvalue_phi};
pub use model::{loss_and_grads, loss_and_grads_with, Losses, ModelState, Predictor, Targets};

use crate::error::{Error, Result};
use crate::flows::{self, FlowForm, Hyper};
use crate::integrate::{IntegrationOptions, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    SimSiam,
    PhiNet,
    XPhiNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimLoss {
    Cosine,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Arch {
    /// h and g are single matrices.
    #[default]
    Linear,
    /// h and g have one hidden rectifier layer of width `hidden`; f stays linear.
    Mlp1 { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub model: Model,
    pub sim1_loss: SimLoss,
    /// Ignored for SimSiam.
    pub sim2_loss: SimLoss,
    pub arch: Arch,
    /// Apply tanh to the output of g.
    pub g_tanh_output: bool,
    /// Feed a third augmented view, instead of x, to the Sim-2 target encoder.
    pub sim2_target_augmented: bool,
    pub d: usize,
    pub m: usize,
    pub hyper: Hyper,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    /// Ignored unless the model is X-PhiNet.
    pub ema_beta: f64,
    pub seed: u64,
    /// Replace sampled batches with the closed-form expected gradient (linear, mse only).
    pub expectation: bool,
    /// Entries are drawn from N(0, init_gain²/fan_in).
    pub init_gain: f64,
    /// Metrics stride; `None` keeps about 1000 rows.
    pub record_every: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            model: Model::PhiNet,
            sim1_loss: SimLoss::Cosine,
            sim2_loss: SimLoss::Mse,
            arch: Arch::Linear,
            g_tanh_output: false,
            sim2_target_augmented: false,
            d: 8,
            m: 4,
            hyper: Hyper { sigma2: 1.5, rho: 0.03 },
            lr: 0.01,
            batch: 256,
            steps: 10_000,
            ema_beta: 0.99,
            seed: 0,
            expectation: false,
            init_gain: 1.0,
            record_every: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("lr", self.lr)?;
        if self.d == 0 || self.m == 0 {
            return Err(Error::config(format!("d and m must be >= 1, got d={}, m={}", self.d, self.m)));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::config("batch and steps must be >= 1"));
        }
        if let Some(0) = self.record_every {
            return Err(Error::config("record_every must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.ema_beta) {
            return Err(Error::config(format!("ema_beta must lie in [0, 1], got {}", self.ema_beta)));
        }
        if !(self.init_gain.is_finite() && self.init_gain >= 0.0) {
            return Err(Error::config(format!("init_gain must be >= 0, got {}", self.init_gain)));
        }
        if let Arch::Mlp1 { hidden: 0 } = self.arch {
            return Err(Error::config("mlp1 hidden width must be >= 1"));
        }
        if self.expectation {
            let sim2_ok = self.model == Model::SimSiam || self.sim2_loss == SimLoss::Mse;
            if self.arch != Arch::Linear || self.sim1_loss != SimLoss::Mse || !sim2_ok {
                return Err(Error::config("expectation mode needs the linear architecture with mse losses"));
            }
            if self.g_tanh_output || self.sim2_target_augmented {
                return Err(Error::config("expectation mode does not support g_tanh_output or sim2_target_augmented"));
            }
        }
        Ok(())
    }

    fn stride(&self) -> usize {
        self.record_every.unwrap_or_else(|| self.steps.div_ceil(1000)).max(1)
    }
}

/// `θ ← θ − lr·(grad + ρθ)` on the online networks; f_long is left alone.
pub fn sgd_step(state: &ModelState, grads: &ModelState, cfg: &TrainerConfig) -> Result<ModelState> {
    if state.online().count() != grads.online().count()
        || state.online().zip(grads.online()).any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::contract("gradient shapes do not match the state"));
    }
    let (lr, rho) = (cfg.lr, cfg.hyper.rho);
    let mut next = state.clone();
    for (theta, g) in next.online_mut().zip(grads.online()) {
        theta.zip_apply(g, |t, g| *t -= lr * (g + rho * *t));
    }
    Ok(next)
}

/// `f_long ← β f_long + (1 − β) f`.
pub fn ema_update(state: &ModelState, cfg: &TrainerConfig) -> Result<ModelState> {
    if cfg.model != Model::XPhiNet {
        return Err(Error::mode("EMA applies only to X-PhiNet"));
    }
    let Some(long) = &state.f_long else {
        return Err(Error::mode("state has no f_long"));
    };
    let beta = cfg.ema_beta;
    let mut next = state.clone();
    next.f_long = Some(long.zip_map(&state.f, |l, f| beta * l + (1.0 - beta) * f));
    Ok(next)
}

/// Closed-form expected losses and gradients (linear, mse).
pub fn expected_loss_and_grads(state: &ModelState, cfg: &TrainerConfig) -> Result<(Losses, ModelState)> {
    let online = state.to_params()?;
    let t0 = state.f_long.as_ref().unwrap_or(&state.f);
    let (sim1, sim2) = flows::expected_loss_terms(&online, &state.f, t0, &cfg.hyper)?;
    let g = flows::expected_loss_gradient(&online, &state.f, t0, &cfg.hyper)?;
    let mut grads = state.zeros_like();
    grads.f = g.wf;
    grads.h.w1 = g.wh;
    if let (Some(slot), Some(gg)) = (grads.g.as_mut(), g.wg) {
        slot.w1 = gg;
    }
    Ok((Losses { sim1, sim2, guarded: 0 }, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    /// `step · lr`, the matching time of the gradient flow.
    pub time: f64,
    /// Losses of the batch that produced this step's update.
    pub loss_sim1: f64,
    pub loss_sim2: f64,
    pub top_eigenvalue_phi: f64,
    pub stable_rank: f64,
    /// Degrees; linear architecture only.
    pub principal_angle_max: Option<f64>,
    pub norm_f: f64,
    pub norm_h: f64,
    pub norm_g: f64,
    pub cosine_guarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub final_state: ModelState,
    pub metrics: Vec<MetricsRow>,
}

fn metrics_row(step: usize, cfg: &TrainerConfig, state: &ModelState, losses: &Losses) -> MetricsRow {
    let linear = cfg.arch == Arch::Linear;
    let norm = |p: &Predictor| p.w1.norm_squared() + p.w2.as_ref().map_or(0.0, |w| w.norm_squared());
    MetricsRow {
        step,
        time: step as f64 * cfg.lr,
        loss_sim1: losses.sim1,
        loss_sim2: losses.sim2,
        top_eigenvalue_phi: top_eigenvalue_phi(&state.f),
        stable_rank: stable_rank(&state.f),
        principal_angle_max: if linear {
            alignment_angle_deg(&state.f, &state.h.w1, state.g.as_ref().map(|g| &g.w1))
        } else {
            None
        },
        norm_f: state.f.norm(),
        norm_h: norm(&state.h).sqrt(),
        norm_g: state.g.as_ref().map_or(0.0, |g| norm(g).sqrt()),
        cosine_guarded: losses.guarded,
    }
}

/// Trains from the seeded initial state.
pub fn train(cfg: &TrainerConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = ModelState::init(cfg, &mut rng);
    run_loop(cfg, init, &mut rng)
}

/// Trains from a given initial state; batches still come from `cfg.seed`.
pub fn train_from(cfg: &TrainerConfig, init: ModelState) -> Result<TrainRun> {
    cfg.validate()?;
    check_state(cfg, &init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_loop(cfg, init, &mut rng)
}

fn check_state(cfg: &TrainerConfig, s: &ModelState) -> Result<()> {
    let mut expect = cfg.clone();
    expect.init_gain = 0.0;
    let template = ModelState::init(&expect, &mut ChaCha8Rng::seed_from_u64(0));
    let same = template.online().count() == s.online().count()
        && template.online().zip(s.online()).all(|(a, b)| a.shape() == b.shape())
        && template.f_long.as_ref().map(|m| m.shape()) == s.f_long.as_ref().map(|m| m.shape());
    if !same {
        return Err(Error::contract("initial state does not match the configured model, arch and dims"));
    }
    if !s.all_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    Ok(())
}

fn run_loop(cfg: &TrainerConfig, init: ModelState, rng: &mut ChaCha8Rng) -> Result<TrainRun> {
    let stride = cfg.stride();
    let mut state = init;
    let mut metrics = Vec::with_capacity(cfg.steps / stride + 1);
    for k in 1..=cfg.steps {
        let (losses, grads) = if cfg.expectation {
            expected_loss_and_grads(&state, cfg)?
        } else {
            let batch = data::sample_views(cfg.batch, cfg.d, cfg.hyper.sigma2, cfg.sim2_target_augmented, rng)?;
            loss_and_grads(&state, &batch, cfg)
        };
        let mut next = sgd_step(&state, &grads, cfg)?;
        if cfg.model == Model::XPhiNet {
            next = ema_update(&next, cfg)?;
        }
        let norm = next.norm();
        if !next.all_finite() || !(norm <= crate::integrate::DIVERGENCE_NORM) {
            return Err(Error::Divergence {
                last_finite_step: k - 1,
                time: (k - 1) as f64 * cfg.lr,
                reason: format!("parameter norm {norm:.3e}"),
            });
        }
        state = next;
        if k % stride == 0 || k == cfg.steps {
            metrics.push(metrics_row(k, cfg, &state, &losses));
        }
    }
    Ok(TrainRun {
        final_state: state,
        metrics,
    })
}

/// Step used by the reference flow in [`flow_agreement`].
pub const REFERENCE_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowAgreement {
    pub lr: f64,
    pub steps: usize,
    pub horizon: f64,
    /// Largest entrywise difference between trained and integrated parameters.
    pub deviation: f64,
}

/// Trains and integrates the exact-gradient matrix flow (rk4) from the seeded
/// initial state to the same time `horizon = steps · lr`.
pub fn flow_agreement(cfg: &TrainerConfig, horizon: f64) -> Result<FlowAgreement> {
    cfg.validate()?;
    let init = ModelState::init(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    flow_agreement_from(cfg, init, horizon)
}

pub fn flow_agreement_from(cfg: &TrainerConfig, init: ModelState, horizon: f64) -> Result<FlowAgreement> {
    cfg.validate()?;
    if cfg.model == Model::XPhiNet {
        return Err(Error::mode("the matrix flow has no EMA encoder; flow agreement needs simsiam or phinet"));
    }
    let sim2_ok = cfg.model == Model::SimSiam || cfg.sim2_loss == SimLoss::Mse;
    if cfg.arch != Arch::Linear || cfg.sim1_loss != SimLoss::Mse || !sim2_ok || cfg.g_tanh_output || cfg.sim2_target_augmented {
        return Err(Error::config("flow agreement needs the linear architecture with plain mse losses"));
    }
    if !cfg.expectation && cfg.batch < 10_000 {
        return Err(Error::config("flow agreement needs expectation mode or batch >= 10000"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::config(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (horizon / cfg.lr).round() as usize;
    if steps == 0 || (steps as f64 * cfg.lr - horizon).abs() > 1e-9 * horizon {
        return Err(Error::config(format!("horizon {horizon} is not a whole number of lr = {} steps", cfg.lr)));
    }
    let params = init.to_params()?;
    let run = train_from(&TrainerConfig { steps, ..cfg.clone() }, init)?;
    let ref_steps = (horizon / REFERENCE_DT).ceil() as usize;
    let opts = IntegrationOptions::new(horizon / ref_steps as f64, ref_steps, Method::Rk4);
    let traj = flows::integrate_flow(&params, &cfg.hyper, &opts, FlowForm::Gradient)?;
    let flow_end = traj.last().expect("non-empty trajectory");
    let trained = run.final_state.to_params()?;
    Ok(FlowAgreement {
        lr: cfg.lr,
        steps,
        horizon,
        deviation: trained.max_abs_diff(flow_end),
    })
}
