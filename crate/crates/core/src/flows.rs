//! Matrix-level expected loss and gradient flows of the linear analysis model.
//!
//! The encoder is `f(x) = W_f x`, the CA3 predictor `h(z) = W_h z` and the CA1
//! predictor `g(p) = W_g p`. Inputs are `x ~ N(0, I)` with views
//! `x⁽¹⁾, x⁽²⁾ ~ N(x, σ² I)`, so `E[x⁽¹⁾x⁽¹⁾ᵀ] = (1+σ²)I` and every cross moment is `I`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{self, Flowable, IntegrationOptions, Trajectory};

/// Augmentation strength σ² and weight decay ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub sigma2: f64,
    pub rho: f64,
}

impl Hyper {
    pub fn new(sigma2: f64, rho: f64) -> Result<Self> {
        let h = Self { sigma2, rho };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::config(format!("sigma2 must be finite and >= 0, got {}", self.sigma2)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::config(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        Ok(())
    }

    /// `1 + σ²`, the second moment of an augmented view.
    pub fn view_second_moment(&self) -> f64 {
        1.0 + self.sigma2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Encoder with both predictors (W_h, W_g).
    PhiNet,
    /// Encoder with the W_h predictor only.
    SimSiam,
}

/// Which W_g velocity the PhiNet matrix flow uses.
///
/// The two forms share Ẇ_f and Ẇ_h. `Analysis` drives W_g with
/// `−{(1+σ²)W_h − I}ΦW_hᵀ`, whose aligned-eigenvalue reduction is the (ψ, γ)
/// system of [`crate::eigen`]. `Gradient` is the exact negative gradient of the
/// expected loss, `−{(1+σ²)W_gW_h − I}ΦW_hᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FlowForm {
    #[default]
    Analysis,
    Gradient,
}

/// Weights (W_f, W_h, W_g) of the linear model. `wg` is absent in SimSiam mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixParams {
    #[serde(with = "crate::rows")]
    pub wf: DMatrix<f64>,
    #[serde(with = "crate::rows")]
    pub wh: DMatrix<f64>,
    #[serde(default, with = "crate::rows::option", skip_serializing_if = "Option::is_none")]
    pub wg: Option<DMatrix<f64>>,
}

impl MatrixParams {
    pub fn phinet(wf: DMatrix<f64>, wh: DMatrix<f64>, wg: DMatrix<f64>) -> Result<Self> {
        let p = Self { wf, wh, wg: Some(wg) };
        p.validate()?;
        Ok(p)
    }

    pub fn simsiam(wf: DMatrix<f64>, wh: DMatrix<f64>) -> Result<Self> {
        let p = Self { wf, wh, wg: None };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(m: usize, d: usize, mode: Mode) -> Self {
        Self {
            wf: DMatrix::zeros(m, d),
            wh: DMatrix::zeros(m, m),
            wg: (mode == Mode::PhiNet).then(|| DMatrix::zeros(m, m)),
        }
    }

    pub fn identity(m: usize, d: usize, mode: Mode) -> Self {
        Self {
            wf: DMatrix::identity(m, d),
            wh: DMatrix::identity(m, m),
            wg: (mode == Mode::PhiNet).then(|| DMatrix::identity(m, m)),
        }
    }

    /// I.i.d. normal entries with standard deviation `gain / √fan_in`.
    /// With `symmetric_predictors`, W_h and W_g are replaced by their symmetric parts.
    pub fn sample<R: Rng + ?Sized>(
        m: usize,
        d: usize,
        mode: Mode,
        gain: f64,
        symmetric_predictors: bool,
        rng: &mut R,
    ) -> Self {
        let mut normal = |rows: usize, cols: usize, fan_in: usize| {
            let sd = gain / (fan_in as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
        };
        let wf = normal(m, d, d);
        let mut wh = normal(m, m, m);
        let mut wg = (mode == Mode::PhiNet).then(|| normal(m, m, m));
        if symmetric_predictors {
            wh = symmetric_part(&wh);
            wg = wg.map(|g| symmetric_part(&g));
        }
        Self { wf, wh, wg }
    }

    pub fn mode(&self) -> Mode {
        if self.wg.is_some() {
            Mode::PhiNet
        } else {
            Mode::SimSiam
        }
    }

    /// Representation dimension m.
    pub fn m(&self) -> usize {
        self.wf.nrows()
    }

    /// Input dimension d.
    pub fn d(&self) -> usize {
        self.wf.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.wf.nrows();
        if self.wh.shape() != (m, m) {
            return Err(Error::contract(format!(
                "wh must be {m}x{m}, got {:?}",
                self.wh.shape()
            )));
        }
        if let Some(g) = &self.wg {
            if g.shape() != (m, m) {
                return Err(Error::contract(format!("wg must be {m}x{m}, got {:?}", g.shape())));
            }
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("matrix parameters".into()));
        }
        Ok(())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.wf.shape() == other.wf.shape()
            && self.wh.shape() == other.wh.shape()
            && self.wg.as_ref().map(|g| g.shape()) == other.wg.as_ref().map(|g| g.shape())
    }

    /// Entries of W_f, W_h, W_g in row-major order (column labels from [`Self::entry_labels`]).
    pub fn flatten_row_major(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for mat in self.matrices() {
            for i in 0..mat.nrows() {
                out.extend(mat.row(i).iter().copied());
            }
        }
        out
    }

    pub fn entry_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, mat) in ["wf", "wh", "wg"].iter().zip(self.matrices()) {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    out.push(format!("{name}_{i}_{j}"));
                }
            }
        }
        out
    }

    fn matrices(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        [Some(&self.wf), Some(&self.wh), self.wg.as_ref()].into_iter().flatten()
    }

    /// Largest absolute entry-wise difference across all matrices.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.matrices()
            .zip(other.matrices())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

impl Flowable for MatrixParams {
    fn add_scaled(&self, a: f64, other: &Self) -> Self {
        Self {
            wf: &self.wf + &other.wf * a,
            wh: &self.wh + &other.wh * a,
            wg: match (&self.wg, &other.wg) {
                (Some(x), Some(y)) => Some(x + y * a),
                (x, _) => x.clone(),
            },
        }
    }

    fn norm(&self) -> f64 {
        self.matrices().map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }

    fn all_finite(&self) -> bool {
        self.matrices().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Φ = W_f W_fᵀ.
pub fn phi_of(params: &MatrixParams) -> DMatrix<f64> {
    &params.wf * params.wf.transpose()
}

/// The two expected-loss terms `(½E‖W_hW_f x⁽¹⁾ − T₁x⁽²⁾‖², ½E‖W_gW_hW_f x⁽¹⁾ − T₀x‖²)`
/// with frozen targets T₁ (Sim-1) and T₀ (Sim-2). The second term is 0 in SimSiam mode.
pub fn expected_loss_terms(
    online: &MatrixParams,
    sim1_target: &DMatrix<f64>,
    sim2_target: &DMatrix<f64>,
    hyper: &Hyper,
) -> Result<(f64, f64)> {
    hyper.validate()?;
    online.validate()?;
    for t in [sim1_target, sim2_target] {
        if t.shape() != online.wf.shape() {
            return Err(Error::contract(format!(
                "target encoder must be {:?}, got {:?}",
                online.wf.shape(),
                t.shape()
            )));
        }
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("target encoder".into()));
        }
    }
    let s = hyper.view_second_moment();
    let a = &online.wh * &online.wf;
    let sim1 = 0.5 * (s * a.norm_squared() - 2.0 * a.dot(sim1_target) + s * sim1_target.norm_squared());
    let sim2 = match &online.wg {
        Some(wg) => {
            let b = wg * &a;
            0.5 * (s * b.norm_squared() - 2.0 * b.dot(sim2_target) + sim2_target.norm_squared())
        }
        None => 0.0,
    };
    Ok((sim1.max(0.0), sim2.max(0.0)))
}

/// Closed-form expected loss with the stop-gradient branches evaluated at `target`.
pub fn expected_loss(online: &MatrixParams, target: &MatrixParams, hyper: &Hyper) -> Result<f64> {
    if !online.same_shape(target) {
        return Err(Error::contract("online and target shapes differ"));
    }
    let (a, b) = expected_loss_terms(online, &target.wf, &target.wf, hyper)?;
    Ok(a + b)
}

/// Exact gradient of the expected loss w.r.t. the online weights, targets frozen.
/// Weight decay is not included.
pub fn expected_loss_gradient(
    online: &MatrixParams,
    sim1_target: &DMatrix<f64>,
    sim2_target: &DMatrix<f64>,
    hyper: &Hyper,
) -> Result<MatrixParams> {
    expected_loss_terms(online, sim1_target, sim2_target, hyper)?;
    let s = hyper.view_second_moment();
    let a = &online.wh * &online.wf;
    let r1 = &a * s - sim1_target;
    let mut gf = online.wh.transpose() * &r1;
    let mut gh = &r1 * online.wf.transpose();
    let gg = online.wg.as_ref().map(|wg| {
        let r2 = wg * &a * s - sim2_target;
        gf += (wg * &online.wh).transpose() * &r2;
        gh += wg.transpose() * &r2 * online.wf.transpose();
        &r2 * a.transpose()
    });
    Ok(MatrixParams { wf: gf, wh: gh, wg: gg })
}

/// PhiNet matrix flow (Ẇ_f, Ẇ_h, Ẇ_g) including the −ρW terms.
pub fn grad_flow_rhs(params: &MatrixParams, hyper: &Hyper, form: FlowForm) -> Result<MatrixParams> {
    let Some(wg) = &params.wg else {
        return Err(Error::mode("W_g is absent; use simsiam_grad_flow_rhs for SimSiam parameters"));
    };
    params.validate()?;
    hyper.validate()?;
    Ok(phinet_rhs(&params.wf, &params.wh, wg, hyper, form))
}

fn phinet_rhs(
    wf: &DMatrix<f64>,
    wh: &DMatrix<f64>,
    wg: &DMatrix<f64>,
    hyper: &Hyper,
    form: FlowForm,
) -> MatrixParams {
    let m = wh.nrows();
    let eye = DMatrix::<f64>::identity(m, m);
    let s = hyper.view_second_moment();
    let rho = hyper.rho;
    let phi = wf * wf.transpose();
    let residual = (&eye + wg.transpose() * wg) * wh * s - (&eye + wg.transpose());
    let dwf = -(wh.transpose() * &residual * wf) - wf * rho;
    let dwh = -(&residual * &phi) - wh * rho;
    let g_residual = match form {
        FlowForm::Analysis => wh * s - &eye,
        FlowForm::Gradient => wg * wh * s - &eye,
    };
    let dwg = -(g_residual * &phi * wh.transpose()) - wg * rho;
    MatrixParams { wf: dwf, wh: dwh, wg: Some(dwg) }
}

/// SimSiam matrix flow (Ẇ_f, Ẇ_h): the PhiNet flow with every W_g term deleted.
pub fn simsiam_grad_flow_rhs(params: &MatrixParams, hyper: &Hyper) -> Result<MatrixParams> {
    if params.wg.is_some() {
        return Err(Error::mode("W_g is present; use grad_flow_rhs for PhiNet parameters"));
    }
    params.validate()?;
    hyper.validate()?;
    Ok(simsiam_rhs(&params.wf, &params.wh, hyper))
}

fn simsiam_rhs(wf: &DMatrix<f64>, wh: &DMatrix<f64>, hyper: &Hyper) -> MatrixParams {
    let m = wh.nrows();
    let s = hyper.view_second_moment();
    let residual = wh * s - DMatrix::<f64>::identity(m, m);
    let phi = wf * wf.transpose();
    MatrixParams {
        wf: -(wh.transpose() * &residual * wf) - wf * hyper.rho,
        wh: -(&residual * &phi) - wh * hyper.rho,
        wg: None,
    }
}

/// Matrix flow for either mode, dispatched on the presence of W_g.
pub fn flow_rhs(params: &MatrixParams, hyper: &Hyper, form: FlowForm) -> MatrixParams {
    match &params.wg {
        Some(wg) => phinet_rhs(&params.wf, &params.wh, wg, hyper, form),
        None => simsiam_rhs(&params.wf, &params.wh, hyper),
    }
}

pub const FLOW_DIAGNOSTICS: [&str; 5] = ["loss", "norm_wf", "norm_wh", "norm_wg", "parabola_gap"];

/// ‖W_hᵀW_h − Φ‖_F, which decays exactly as e^{−2ρt} along the matrix flow.
pub fn parabola_gap(params: &MatrixParams) -> f64 {
    (params.wh.transpose() * &params.wh - phi_of(params)).norm()
}

fn flow_diagnostics(p: &MatrixParams, hyper: &Hyper) -> Vec<f64> {
    let s = hyper.view_second_moment();
    let a = &p.wh * &p.wf;
    let t = &p.wf;
    let mut loss = 0.5 * (s * a.norm_squared() - 2.0 * a.dot(t) + s * t.norm_squared());
    if let Some(wg) = &p.wg {
        let b = wg * &a;
        loss += 0.5 * (s * b.norm_squared() - 2.0 * b.dot(t) + t.norm_squared());
    }
    vec![
        loss.max(0.0),
        p.wf.norm(),
        p.wh.norm(),
        p.wg.as_ref().map_or(0.0, |g| g.norm()),
        parabola_gap(p),
    ]
}

/// Integrates the matrix flow from `init`. The caller keeps `dt` small relative to
/// the fastest rate of the flow; explicit schemes are only conditionally stable.
pub fn integrate_flow(
    init: &MatrixParams,
    hyper: &Hyper,
    opts: &IntegrationOptions,
    form: FlowForm,
) -> Result<Trajectory<MatrixParams>> {
    init.validate()?;
    hyper.validate()?;
    let h = *hyper;
    integrate::integrate(
        init,
        opts,
        |p: &MatrixParams| flow_rhs(p, &h, form),
        &FLOW_DIAGNOSTICS,
        |p| flow_diagnostics(p, &h),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::Method;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hyper(s2: f64, rho: f64) -> Hyper {
        Hyper::new(s2, rho).unwrap()
    }

    /// Central finite difference of the frozen-target expected loss.
    fn fd_gradient(p: &MatrixParams, hyper: &Hyper) -> MatrixParams {
        let target = p.wf.clone();
        let loss = |q: &MatrixParams| {
            let (a, b) = expected_loss_terms(q, &target, &target, hyper).unwrap();
            a + b
        };
        let h = 1e-6;
        let mut out = MatrixParams::zeros(p.m(), p.d(), p.mode());
        let perturb = |which: usize, i: usize, j: usize, delta: f64| {
            let mut q = p.clone();
            match which {
                0 => q.wf[(i, j)] += delta,
                1 => q.wh[(i, j)] += delta,
                _ => q.wg.as_mut().unwrap()[(i, j)] += delta,
            }
            q
        };
        for which in 0..3 {
            let (r, c) = match which {
                0 => p.wf.shape(),
                1 => p.wh.shape(),
                _ => match &p.wg {
                    Some(g) => g.shape(),
                    None => continue,
                },
            };
            for i in 0..r {
                for j in 0..c {
                    let g = (loss(&perturb(which, i, j, h)) - loss(&perturb(which, i, j, -h))) / (2.0 * h);
                    match which {
                        0 => out.wf[(i, j)] = g,
                        1 => out.wh[(i, j)] = g,
                        _ => out.wg.as_mut().unwrap()[(i, j)] = g,
                    }
                }
            }
        }
        out
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn loss_examples() {
        let id = MatrixParams::identity(2, 2, Mode::PhiNet);
        assert_eq!(expected_loss(&id, &id, &hyper(0.0, 0.3)).unwrap(), 0.0);
        let l = expected_loss(&id, &id, &hyper(1.0, 0.0)).unwrap();
        // ½{((1+σ²)−2+(1+σ²))m + ((1+σ²)−2+1)m} at σ²=1, m=2.
        assert!((l - 3.0).abs() < 1e-12, "{l}");
        let mut zero_f = MatrixParams::sample(3, 2, Mode::PhiNet, 1.0, false, &mut ChaCha8Rng::seed_from_u64(1));
        zero_f.wf.fill(0.0);
        assert_eq!(expected_loss(&zero_f, &zero_f, &hyper(0.7, 0.1)).unwrap(), 0.0);
    }

    #[test]
    fn loss_rejects_bad_shapes_and_values() {
        let a = MatrixParams::identity(2, 2, Mode::PhiNet);
        let b = MatrixParams::identity(2, 3, Mode::PhiNet);
        assert!(matches!(expected_loss(&a, &b, &hyper(0.0, 0.0)), Err(Error::Contract(_))));
        let mut c = a.clone();
        c.wh[(0, 0)] = f64::NAN;
        assert!(matches!(expected_loss(&c, &a, &hyper(0.0, 0.0)), Err(Error::NonFinite(_))));
        assert!(Hyper::new(-1.0, 0.0).is_err());
        assert!(Hyper::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn rhs_examples() {
        let zero = MatrixParams::zeros(3, 2, Mode::PhiNet);
        let d = grad_flow_rhs(&zero, &hyper(1.5, 0.1), FlowForm::Analysis).unwrap();
        assert_eq!(d.norm(), 0.0);
        let id = MatrixParams::identity(2, 2, Mode::PhiNet);
        for form in [FlowForm::Analysis, FlowForm::Gradient] {
            let d = grad_flow_rhs(&id, &hyper(0.0, 0.0), form).unwrap();
            assert!(d.norm() < 1e-15);
        }
        let ss = MatrixParams::identity(2, 2, Mode::SimSiam);
        assert!(simsiam_grad_flow_rhs(&ss, &hyper(0.0, 0.0)).unwrap().norm() < 1e-15);
        assert!(simsiam_grad_flow_rhs(&MatrixParams::zeros(2, 2, Mode::SimSiam), &hyper(1.0, 1.0))
            .unwrap()
            .norm()
            == 0.0);
    }

    #[test]
    fn mode_errors() {
        let ss = MatrixParams::identity(2, 2, Mode::SimSiam);
        let pn = MatrixParams::identity(2, 2, Mode::PhiNet);
        assert!(matches!(grad_flow_rhs(&ss, &hyper(0.0, 0.0), FlowForm::Analysis), Err(Error::Mode(_))));
        assert!(matches!(simsiam_grad_flow_rhs(&pn, &hyper(0.0, 0.0)), Err(Error::Mode(_))));
    }

    #[test]
    fn gradient_form_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = hyper(0.8, 0.04);
        let p = MatrixParams::sample(3, 3, Mode::PhiNet, 1.0, false, &mut rng);
        let fd = fd_gradient(&p, &h);
        let decay = p.clone();
        let rhs = grad_flow_rhs(&p, &h, FlowForm::Gradient).unwrap();
        // rhs + ρW = −∇L̄
        let neg = rhs.add_scaled(h.rho, &decay);
        assert!(rel(&(-&neg.wf), &fd.wf) < 1e-6);
        assert!(rel(&(-&neg.wh), &fd.wh) < 1e-6);
        assert!(rel(&(-neg.wg.as_ref().unwrap()), fd.wg.as_ref().unwrap()) < 1e-6);
    }

    #[test]
    fn analysis_form_differs_from_gradient_only_in_wg() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = hyper(1.5, 0.03);
        let p = MatrixParams::sample(3, 4, Mode::PhiNet, 1.0, false, &mut rng);
        let a = grad_flow_rhs(&p, &h, FlowForm::Analysis).unwrap();
        let g = grad_flow_rhs(&p, &h, FlowForm::Gradient).unwrap();
        assert_eq!(a.wf, g.wf);
        assert_eq!(a.wh, g.wh);
        let fd = fd_gradient(&p, &h);
        let neg = a.add_scaled(h.rho, &p);
        assert!(rel(&(-neg.wg.as_ref().unwrap()), fd.wg.as_ref().unwrap()) > 1e-2);
    }

    #[test]
    fn simsiam_rhs_matches_first_term_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = hyper(1.2, 0.05);
        let p = MatrixParams::sample(3, 3, Mode::SimSiam, 1.0, false, &mut rng);
        let fd = fd_gradient(&p, &h);
        let neg = simsiam_grad_flow_rhs(&p, &h).unwrap().add_scaled(h.rho, &p);
        assert!(rel(&(-&neg.wf), &fd.wf) < 1e-6);
        assert!(rel(&(-&neg.wh), &fd.wh) < 1e-6);
    }

    #[test]
    fn zero_wg_reduces_to_simsiam() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let h = hyper(rng.random_range(0.0..3.0), rng.random_range(0.0..0.2));
            let mut p = MatrixParams::sample(3, 4, Mode::PhiNet, 1.0, false, &mut rng);
            p.wg.as_mut().unwrap().fill(0.0);
            let ss = MatrixParams::simsiam(p.wf.clone(), p.wh.clone()).unwrap();
            let a = grad_flow_rhs(&p, &h, FlowForm::Analysis).unwrap();
            let b = simsiam_grad_flow_rhs(&ss, &h).unwrap();
            assert!((&a.wf - &b.wf).amax() < 1e-14);
            assert!((&a.wh - &b.wh).amax() < 1e-14);
        }
    }

    #[test]
    fn phi_examples() {
        let p = MatrixParams::identity(3, 3, Mode::PhiNet);
        assert_eq!(phi_of(&p), DMatrix::identity(3, 3));
        let q = MatrixParams::simsiam(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(phi_of(&q), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn zero_init_trajectory_stays_zero() {
        let init = MatrixParams::zeros(2, 3, Mode::PhiNet);
        let opts = IntegrationOptions::new(0.01, 50, Method::Rk4);
        let tr = integrate_flow(&init, &hyper(1.5, 0.03), &opts, FlowForm::Analysis).unwrap();
        assert_eq!(tr.len(), 51);
        assert!(tr.states.iter().all(|s| s.norm() == 0.0));
        assert!(tr.diagnostics.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn rk4_step_halving_is_fourth_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let init = MatrixParams::sample(2, 3, Mode::PhiNet, 1.0, false, &mut rng);
        let h = hyper(1.5, 0.05);
        let end = |dt: f64, method| {
            let steps = (2.0 / dt).round() as usize;
            integrate_flow(&init, &h, &IntegrationOptions::new(dt, steps, method), FlowForm::Gradient)
                .unwrap()
                .last()
                .unwrap()
                .clone()
        };
        let (a, b, c) = (end(0.04, Method::Rk4), end(0.02, Method::Rk4), end(0.01, Method::Rk4));
        let ratio = a.max_abs_diff(&b) / b.max_abs_diff(&c);
        assert!((ratio - 16.0).abs() < 2.0, "rk4 ratio {ratio}");
        let (a, b, c) = (end(0.002, Method::Euler), end(0.001, Method::Euler), end(0.0005, Method::Euler));
        let ratio = a.max_abs_diff(&b) / b.max_abs_diff(&c);
        assert!((ratio - 2.0).abs() < 0.2, "euler ratio {ratio}");
    }

    #[test]
    fn parabola_gap_decays_at_twice_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let init = MatrixParams::sample(3, 4, Mode::PhiNet, 1.0, false, &mut rng);
        let h = hyper(1.5, 0.05);
        for form in [FlowForm::Analysis, FlowForm::Gradient] {
            let tr = integrate_flow(&init, &h, &IntegrationOptions::new(0.0025, 8000, Method::Rk4), form).unwrap();
            let gap = tr.diagnostic("parabola_gap").unwrap();
            let predicted = gap[0] * (-2.0 * h.rho * 20.0).exp();
            assert!((gap[8000] - predicted).abs() / predicted < 1e-6);
        }
    }

    #[test]
    fn diagnostics_finite_on_non_divergent_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let init = MatrixParams::sample(4, 4, Mode::PhiNet, 1.0, false, &mut rng);
        let tr = integrate_flow(&init, &hyper(1.5, 0.03), &IntegrationOptions::new(0.05, 2000, Method::Rk4), FlowForm::Analysis)
            .unwrap();
        assert!(tr.diagnostics.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn flattening_is_row_major() {
        let wf = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = MatrixParams::simsiam(wf, DMatrix::from_row_slice(2, 2, &[7.0, 8.0, 9.0, 10.0])).unwrap();
        assert_eq!(p.flatten_row_major(), (1..=10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(p.entry_labels()[1], "wf_0_1");
        assert_eq!(p.entry_labels().len(), 10);
    }
}
