//! Networks, losses and manual reverse-mode gradients.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::Batch;
use super::{Arch, Model, SimLoss, TrainerConfig};
use crate::error::{Error, Result};
use crate::flows::MatrixParams;

/// Guard added to norms inside cosine similarities.
pub const COSINE_EPS: f64 = 1e-12;
/// Vectors shorter than this are counted as guarded in the metrics.
pub const GUARD_FLAG_NORM: f64 = 1e-9;

/// Linear map (`w2 = None`) or one hidden rectifier layer `w2 · relu(w1 · z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    #[serde(with = "crate::rows")]
    pub w1: DMatrix<f64>,
    #[serde(default, with = "crate::rows::option", skip_serializing_if = "Option::is_none")]
    pub w2: Option<DMatrix<f64>>,
}

struct Tape {
    input: DMatrix<f64>,
    pre: Option<DMatrix<f64>>,
    hidden: Option<DMatrix<f64>>,
    tanh_out: Option<DMatrix<f64>>,
}

impl Predictor {
    pub fn linear(w: DMatrix<f64>) -> Self {
        Self { w1: w, w2: None }
    }

    fn sample<R: Rng + ?Sized>(m: usize, arch: Arch, gain: f64, rng: &mut R) -> Self {
        match arch {
            Arch::Linear => Self::linear(normal(m, m, m, gain, rng)),
            Arch::Mlp1 { hidden } => Self {
                w1: normal(hidden, m, m, gain, rng),
                w2: Some(normal(m, hidden, hidden, gain, rng)),
            },
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            w2: self.w2.as_ref().map(|w| DMatrix::zeros(w.nrows(), w.ncols())),
        }
    }

    fn forward(&self, z: &DMatrix<f64>, tanh: bool) -> (DMatrix<f64>, Tape) {
        let (out, pre, hidden) = match &self.w2 {
            None => (&self.w1 * z, None, None),
            Some(w2) => {
                let pre = &self.w1 * z;
                let hidden = pre.map(|v| v.max(0.0));
                (w2 * &hidden, Some(pre), Some(hidden))
            }
        };
        let (out, tanh_out) = if tanh {
            let t = out.map(f64::tanh);
            (t.clone(), Some(t))
        } else {
            (out, None)
        };
        let tape = Tape {
            input: z.clone(),
            pre,
            hidden,
            tanh_out,
        };
        (out, tape)
    }

    /// Accumulates weight gradients into `grad` and returns the input gradient.
    fn backward(&self, tape: &Tape, d_out: &DMatrix<f64>, grad: &mut Predictor) -> DMatrix<f64> {
        let d_out = match &tape.tanh_out {
            Some(t) => d_out.component_mul(&t.map(|v| 1.0 - v * v)),
            None => d_out.clone(),
        };
        match (&self.w2, &tape.pre, &tape.hidden) {
            (Some(w2), Some(pre), Some(hidden)) => {
                *grad.w2.as_mut().expect("same architecture") += &d_out * hidden.transpose();
                let d_hidden = w2.transpose() * &d_out;
                let d_pre = d_hidden.zip_map(pre, |g, a| if a > 0.0 { g } else { 0.0 });
                grad.w1 += &d_pre * tape.input.transpose();
                self.w1.transpose() * d_pre
            }
            _ => {
                grad.w1 += &d_out * tape.input.transpose();
                self.w1.transpose() * d_out
            }
        }
    }

    fn matrices(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        std::iter::once(&self.w1).chain(self.w2.as_ref())
    }

    fn matrices_mut(&mut self) -> impl Iterator<Item = &mut DMatrix<f64>> {
        std::iter::once(&mut self.w1).chain(self.w2.as_mut())
    }
}

fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, gain: f64, rng: &mut R) -> DMatrix<f64> {
    let sd = gain / (fan_in as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

/// Online networks f, h, g and (X-PhiNet) the slow encoder f_long.
/// The same type holds gradients, with `f_long = None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    #[serde(with = "crate::rows")]
    pub f: DMatrix<f64>,
    pub h: Predictor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Predictor>,
    #[serde(default, with = "crate::rows::option", skip_serializing_if = "Option::is_none")]
    pub f_long: Option<DMatrix<f64>>,
}

impl ModelState {
    /// Initial state for `cfg`, drawn from `rng`.
    pub fn init<R: Rng + ?Sized>(cfg: &TrainerConfig, rng: &mut R) -> Self {
        let f = normal(cfg.m, cfg.d, cfg.d, cfg.init_gain, rng);
        let h = Predictor::sample(cfg.m, cfg.arch, cfg.init_gain, rng);
        let g = (cfg.model != Model::SimSiam).then(|| Predictor::sample(cfg.m, cfg.arch, cfg.init_gain, rng));
        let f_long = (cfg.model == Model::XPhiNet).then(|| f.clone());
        Self { f, h, g, f_long }
    }

    /// Linear-architecture state from matrix parameters.
    pub fn from_params(p: &MatrixParams, model: Model) -> Result<Self> {
        p.validate()?;
        if (model == Model::SimSiam) != p.wg.is_none() {
            return Err(Error::mode(format!("{model:?} parameters must {} W_g", if model == Model::SimSiam { "omit" } else { "include" })));
        }
        Ok(Self {
            f: p.wf.clone(),
            h: Predictor::linear(p.wh.clone()),
            g: p.wg.clone().map(Predictor::linear),
            f_long: (model == Model::XPhiNet).then(|| p.wf.clone()),
        })
    }

    /// Online weights as matrix parameters (linear architecture only).
    pub fn to_params(&self) -> Result<MatrixParams> {
        if self.h.w2.is_some() || self.g.as_ref().is_some_and(|g| g.w2.is_some()) {
            return Err(Error::mode("matrix parameters exist only for the linear architecture"));
        }
        Ok(MatrixParams {
            wf: self.f.clone(),
            wh: self.h.w1.clone(),
            wg: self.g.as_ref().map(|g| g.w1.clone()),
        })
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            f: DMatrix::zeros(self.f.nrows(), self.f.ncols()),
            h: self.h.zeros_like(),
            g: self.g.as_ref().map(Predictor::zeros_like),
            f_long: None,
        }
    }

    /// Online matrices (f, h, g) in a fixed order.
    pub fn online(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        std::iter::once(&self.f).chain(self.h.matrices()).chain(self.g.iter().flat_map(Predictor::matrices))
    }

    pub(crate) fn online_mut(&mut self) -> impl Iterator<Item = &mut DMatrix<f64>> {
        std::iter::once(&mut self.f)
            .chain(self.h.matrices_mut())
            .chain(self.g.iter_mut().flat_map(Predictor::matrices_mut))
    }

    pub fn all_finite(&self) -> bool {
        self.online().chain(self.f_long.as_ref()).all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.online().chain(self.f_long.as_ref()).map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.online()
            .zip(other.online())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Stop-gradient targets: Sim-1 targets for each view and the Sim-2 target.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub z1: DMatrix<f64>,
    pub z2: DMatrix<f64>,
    pub z0: Option<DMatrix<f64>>,
}

impl Targets {
    pub fn compute(state: &ModelState, batch: &Batch, cfg: &TrainerConfig) -> Self {
        let z0 = match cfg.model {
            Model::SimSiam => None,
            model => {
                let enc = if model == Model::XPhiNet {
                    state.f_long.as_ref().expect("xphinet state carries f_long")
                } else {
                    &state.f
                };
                let input = if cfg.sim2_target_augmented {
                    batch.x3.as_ref().expect("augmented Sim-2 batches carry a third view")
                } else {
                    &batch.x
                };
                Some(enc * input)
            }
        };
        Self {
            z1: &state.f * &batch.x1,
            z2: &state.f * &batch.x2,
            z0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub sim1: f64,
    pub sim2: f64,
    /// Vectors inside cosine terms whose norm fell below [`GUARD_FLAG_NORM`].
    pub guarded: usize,
}

impl Losses {
    pub fn total(&self) -> f64 {
        self.sim1 + self.sim2
    }
}

/// Loss of a pair of predictions against their targets and its gradient w.r.t.
/// the predictions. Both views are averaged: mse uses ¼·mean(‖·‖² + ‖·‖²) and
/// cosine uses −½·mean(cos + cos).
fn pair_loss(kind: SimLoss, preds: [&DMatrix<f64>; 2], targets: [&DMatrix<f64>; 2], guarded: &mut usize) -> (f64, [DMatrix<f64>; 2]) {
    let n = preds[0].ncols() as f64;
    let mut total = 0.0;
    let grads = [0, 1].map(|v| {
        let (p, t) = (preds[v], targets[v]);
        match kind {
            SimLoss::Mse => {
                let r = p - t;
                total += r.norm_squared() / (4.0 * n);
                r / (2.0 * n)
            }
            SimLoss::Cosine => {
                let mut g = DMatrix::zeros(p.nrows(), p.ncols());
                for i in 0..p.ncols() {
                    let (a, b) = (p.column(i), t.column(i));
                    let (na, nb) = (a.norm(), b.norm());
                    *guarded += usize::from(na < GUARD_FLAG_NORM) + usize::from(nb < GUARD_FLAG_NORM);
                    let (da, db) = (na + COSINE_EPS, nb + COSINE_EPS);
                    let dot = a.dot(&b);
                    total -= dot / (da * db) / (2.0 * n);
                    // ∂cos/∂a = b/(da·db) − dot·a/(‖a‖·da²·db)
                    let mut col = b / (da * db);
                    if na > 0.0 {
                        col -= a * (dot / (na * da * da * db));
                    }
                    g.set_column(i, &(col * (-1.0 / (2.0 * n))));
                }
                g
            }
        }
    });
    (total, grads)
}

/// Losses and gradients of the online networks with the stop-gradient branches held at `targets`.
pub fn loss_and_grads_with(state: &ModelState, batch: &Batch, targets: &Targets, cfg: &TrainerConfig) -> (Losses, ModelState) {
    let mut grads = state.zeros_like();
    let mut losses = Losses::default();
    let z1 = &state.f * &batch.x1;
    let z2 = &state.f * &batch.x2;
    let (p1, tape_h1) = state.h.forward(&z1, false);
    let (p2, tape_h2) = state.h.forward(&z2, false);
    let (sim1, [mut dp1, mut dp2]) = pair_loss(cfg.sim1_loss, [&p1, &p2], [&targets.z2, &targets.z1], &mut losses.guarded);
    losses.sim1 = sim1;

    if let (Some(g), Some(z0)) = (&state.g, &targets.z0) {
        let tanh = cfg.g_tanh_output;
        let (y1, tape_g1) = g.forward(&p1, tanh);
        let (y2, tape_g2) = g.forward(&p2, tanh);
        let (sim2, [dy1, dy2]) = pair_loss(cfg.sim2_loss, [&y1, &y2], [z0, z0], &mut losses.guarded);
        losses.sim2 = sim2;
        let gg = grads.g.as_mut().expect("g gradient slot");
        dp1 += g.backward(&tape_g1, &dy1, gg);
        dp2 += g.backward(&tape_g2, &dy2, gg);
    }

    let dz1 = state.h.backward(&tape_h1, &dp1, &mut grads.h);
    let dz2 = state.h.backward(&tape_h2, &dp2, &mut grads.h);
    grads.f = dz1 * batch.x1.transpose() + dz2 * batch.x2.transpose();
    (losses, grads)
}

pub fn loss_and_grads(state: &ModelState, batch: &Batch, cfg: &TrainerConfig) -> (Losses, ModelState) {
    let targets = Targets::compute(state, batch, cfg);
    loss_and_grads_with(state, batch, &targets, cfg)
}
