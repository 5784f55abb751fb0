//! Decoupled eigenvalue dynamics, equilibria and the weight-decay bifurcation map.
//!
//! In the aligned eigenbasis each direction carries `(φ, ψ, γ)`: an eigenvalue of
//! Φ = W_fW_fᵀ, of W_h and of W_g. On the invariant parabola φ = ψ² the PhiNet
//! dynamics reduce to a planar (ψ, γ) system and SimSiam to a scalar ψ system.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{FlowForm, Hyper, MatrixParams};
use crate::integrate::{self, Flowable, IntegrationOptions, Trajectory};
use crate::roots;

/// Real parts within this distance of zero are treated as neutral.
pub const DEGENERACY_TOL: f64 = 1e-9;
/// Default number of grid cells for equilibrium bracketing.
pub const DEFAULT_RESOLUTION: usize = 20_000;
/// Smallest accepted bracketing resolution.
pub const MIN_RESOLUTION: usize = 100;
const DEDUP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenState {
    pub phi: f64,
    pub psi: f64,
    pub gamma: f64,
}

impl EigenState {
    pub fn new(phi: f64, psi: f64, gamma: f64) -> Self {
        Self { phi, psi, gamma }
    }

    /// State on the invariant parabola φ = ψ².
    pub fn on_parabola(psi: f64, gamma: f64) -> Self {
        Self { phi: psi * psi, psi, gamma }
    }

    pub fn parabola_residual(&self) -> f64 {
        self.psi * self.psi - self.phi
    }
}

impl Flowable for EigenState {
    fn add_scaled(&self, a: f64, o: &Self) -> Self {
        Self {
            phi: self.phi + a * o.phi,
            psi: self.psi + a * o.psi,
            gamma: self.gamma + a * o.gamma,
        }
    }

    fn norm(&self) -> f64 {
        (self.phi * self.phi + self.psi * self.psi + self.gamma * self.gamma).sqrt()
    }

    fn all_finite(&self) -> bool {
        self.phi.is_finite() && self.psi.is_finite() && self.gamma.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub psi: f64,
    pub gamma: f64,
}

impl ReducedState {
    pub fn new(psi: f64, gamma: f64) -> Self {
        Self { psi, gamma }
    }

    pub fn distance(&self, psi: f64, gamma: f64) -> f64 {
        (self.psi - psi).hypot(self.gamma - gamma)
    }
}

impl Flowable for ReducedState {
    fn add_scaled(&self, a: f64, o: &Self) -> Self {
        Self {
            psi: self.psi + a * o.psi,
            gamma: self.gamma + a * o.gamma,
        }
    }

    fn norm(&self) -> f64 {
        self.psi.hypot(self.gamma)
    }

    fn all_finite(&self) -> bool {
        self.psi.is_finite() && self.gamma.is_finite()
    }
}

/// `−ψφ{(1+σ²)cψ − 1}` with `c = 1` (analysis form) or `c = γ` (gradient form).
#[inline]
fn gamma_drive(psi: f64, gamma: f64, phi: f64, s: f64, form: FlowForm) -> f64 {
    let c = match form {
        FlowForm::Analysis => 1.0,
        FlowForm::Gradient => gamma,
    };
    -psi * phi * (s * c * psi - 1.0)
}

/// Full (φ, ψ, γ) dynamics of one aligned eigen-direction.
pub fn rhs_full(state: &EigenState, hyper: &Hyper) -> EigenState {
    rhs_full_form(state, hyper, FlowForm::Analysis)
}

pub fn rhs_full_form(state: &EigenState, hyper: &Hyper, form: FlowForm) -> EigenState {
    let s = hyper.view_second_moment();
    let rho = hyper.rho;
    let EigenState { phi, psi, gamma } = *state;
    let brace = s * (1.0 + gamma * gamma) * psi - (1.0 + gamma);
    EigenState {
        phi: -2.0 * psi * phi * brace - 2.0 * rho * phi,
        psi: -phi * brace - rho * psi,
        gamma: gamma_drive(psi, gamma, phi, s, form) - rho * gamma,
    }
}

/// Reduced (ψ, γ) PhiNet dynamics on the invariant parabola.
pub fn rhs_reduced(psi: f64, gamma: f64, hyper: &Hyper) -> (f64, f64) {
    rhs_reduced_form(psi, gamma, hyper, FlowForm::Analysis)
}

pub fn rhs_reduced_form(psi: f64, gamma: f64, hyper: &Hyper, form: FlowForm) -> (f64, f64) {
    let s = hyper.view_second_moment();
    let rho = hyper.rho;
    let p2 = psi * psi;
    let dpsi = ((1.0 + gamma) - s * (1.0 + gamma * gamma) * psi) * p2 - rho * psi;
    let dgamma = gamma_drive(psi, gamma, p2, s, form) - rho * gamma;
    (dpsi, dgamma)
}

/// Analytic Jacobian `[[∂ψ̇/∂ψ, ∂ψ̇/∂γ], [∂γ̇/∂ψ, ∂γ̇/∂γ]]` of the reduced system.
pub fn jacobian_reduced(psi: f64, gamma: f64, hyper: &Hyper, form: FlowForm) -> [[f64; 2]; 2] {
    let s = hyper.view_second_moment();
    let rho = hyper.rho;
    let p2 = psi * psi;
    let p3 = p2 * psi;
    let dpsi_dpsi = 2.0 * (1.0 + gamma) * psi - 3.0 * s * (1.0 + gamma * gamma) * p2 - rho;
    let dpsi_dgamma = p2 - 2.0 * s * gamma * p3;
    let (dgamma_dpsi, dgamma_dgamma) = match form {
        FlowForm::Analysis => (3.0 * p2 - 4.0 * s * p3, -rho),
        FlowForm::Gradient => (3.0 * p2 - 4.0 * s * gamma * p3, -s * p2 * p2 - rho),
    };
    [[dpsi_dpsi, dpsi_dgamma], [dgamma_dpsi, dgamma_dgamma]]
}

/// Scalar SimSiam dynamics on the invariant parabola.
pub fn rhs_simsiam(psi: f64, hyper: &Hyper) -> f64 {
    (1.0 - hyper.view_second_moment() * psi) * psi * psi - hyper.rho * psi
}

pub fn simsiam_derivative(psi: f64, hyper: &Hyper) -> f64 {
    2.0 * psi - 3.0 * hyper.view_second_moment() * psi * psi - hyper.rho
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenSystem {
    Full,
    Reduced,
    SimSiam,
}

pub const EIGEN_DIAGNOSTICS: [&str; 2] = ["parabola_residual", "speed"];

/// Integrates one of the eigenvalue systems. Reduced and SimSiam runs are reported
/// on the parabola (φ = ψ²); SimSiam runs carry γ = 0.
pub fn integrate_eigen(
    init: &EigenState,
    hyper: &Hyper,
    opts: &IntegrationOptions,
    system: EigenSystem,
    form: FlowForm,
) -> Result<Trajectory<EigenState>> {
    hyper.validate()?;
    let h = *hyper;
    match system {
        EigenSystem::Full => integrate::integrate(
            init,
            opts,
            |s: &EigenState| rhs_full_form(s, &h, form),
            &EIGEN_DIAGNOSTICS,
            |s| vec![s.parabola_residual(), rhs_full_form(s, &h, form).norm()],
        ),
        EigenSystem::Reduced => {
            let tr = integrate::integrate(
                &ReducedState::new(init.psi, init.gamma),
                opts,
                |s: &ReducedState| {
                    let (a, b) = rhs_reduced_form(s.psi, s.gamma, &h, form);
                    ReducedState::new(a, b)
                },
                &EIGEN_DIAGNOSTICS,
                |s| {
                    let (a, b) = rhs_reduced_form(s.psi, s.gamma, &h, form);
                    vec![0.0, a.hypot(b)]
                },
            )?;
            Ok(map_states(tr, |s| EigenState::on_parabola(s.psi, s.gamma)))
        }
        EigenSystem::SimSiam => {
            let tr = integrate::integrate(
                &init.psi,
                opts,
                |p: &f64| rhs_simsiam(*p, &h),
                &EIGEN_DIAGNOSTICS,
                |p| vec![0.0, rhs_simsiam(*p, &h).abs()],
            )?;
            Ok(map_states(tr, |p| EigenState::on_parabola(*p, 0.0)))
        }
    }
}

fn map_states<A, B>(tr: Trajectory<A>, f: impl Fn(&A) -> B) -> Trajectory<B> {
    Trajectory {
        states: tr.states.iter().map(f).collect(),
        times: tr.times,
        diagnostic_names: tr.diagnostic_names,
        diagnostics: tr.diagnostics,
    }
}

/// Builds simultaneously diagonalisable parameters (d = m) whose eigen-directions
/// carry `states`: W_f = U diag(√φ) Uᵀ, W_h = U diag(ψ) Uᵀ, W_g = U diag(γ) Uᵀ.
pub fn aligned_params(states: &[EigenState], basis: Option<&DMatrix<f64>>) -> Result<MatrixParams> {
    let m = states.len();
    if m == 0 {
        return Err(Error::contract("at least one eigen-direction is required"));
    }
    if let Some(s) = states.iter().find(|s| s.phi < 0.0) {
        return Err(Error::contract(format!("phi must be >= 0, got {}", s.phi)));
    }
    let u = match basis {
        Some(u) if u.shape() == (m, m) => u.clone(),
        Some(u) => return Err(Error::contract(format!("basis must be {m}x{m}, got {:?}", u.shape()))),
        None => DMatrix::identity(m, m),
    };
    let conj = |vals: Vec<f64>| &u * DMatrix::from_diagonal(&vals.into()) * u.transpose();
    MatrixParams::phinet(
        conj(states.iter().map(|s| s.phi.sqrt()).collect()),
        conj(states.iter().map(|s| s.psi).collect()),
        conj(states.iter().map(|s| s.gamma).collect()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityClass {
    Sink,
    Source,
    Saddle,
    Degenerate,
}

pub fn classify(eigs: &[Complex64]) -> StabilityClass {
    let neg = eigs.iter().filter(|l| l.re < -DEGENERACY_TOL).count();
    let pos = eigs.iter().filter(|l| l.re > DEGENERACY_TOL).count();
    if neg == eigs.len() {
        StabilityClass::Sink
    } else if pos == eigs.len() {
        StabilityClass::Source
    } else if neg > 0 && pos > 0 {
        StabilityClass::Saddle
    } else {
        StabilityClass::Degenerate
    }
}

/// Eigenvalues of a real 2×2 matrix.
pub fn eigenvalues_2x2(j: &[[f64; 2]; 2]) -> [Complex64; 2] {
    let half_tr = 0.5 * (j[0][0] + j[1][1]);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = Complex64::new(half_tr * half_tr - det, 0.0).sqrt();
    [half_tr - disc, half_tr + disc]
}

/// Fixed point with its linearisation. SimSiam equilibria carry `gamma = 0` and one eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub psi: f64,
    pub gamma: f64,
    pub jacobian_eigs: Vec<Complex64>,
    pub class: StabilityClass,
}

impl Equilibrium {
    pub fn is_sink(&self) -> bool {
        self.class == StabilityClass::Sink
    }

    pub fn is_origin(&self) -> bool {
        self.psi == 0.0 && self.gamma == 0.0
    }

    fn reduced(psi: f64, gamma: f64, hyper: &Hyper, form: FlowForm) -> Self {
        let eigs = eigenvalues_2x2(&jacobian_reduced(psi, gamma, hyper, form)).to_vec();
        Self {
            psi,
            gamma,
            class: classify(&eigs),
            jacobian_eigs: eigs,
        }
    }

    fn simsiam(psi: f64, hyper: &Hyper) -> Self {
        let eigs = vec![Complex64::new(simsiam_derivative(psi, hyper), 0.0)];
        Self {
            psi,
            gamma: 0.0,
            class: classify(&eigs),
            jacobian_eigs: eigs,
        }
    }
}

/// ρ at which SimSiam's non-collapsed sink appears: 1/(4(1+σ²)).
pub fn simsiam_critical_rho(sigma2: f64) -> f64 {
    1.0 / (4.0 * (1.0 + sigma2))
}

/// ψ = 0 plus the real roots of (1+σ²)ψ² − ψ + ρ = 0, sorted by ψ.
pub fn simsiam_equilibria(hyper: &Hyper) -> Vec<Equilibrium> {
    let s = hyper.view_second_moment();
    let rho = hyper.rho;
    let mut psis = vec![0.0];
    let disc = 1.0 - 4.0 * rho * s;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        // Product of roots is ρ/s; use it for the small root to avoid cancellation.
        let big = (1.0 + sq) / (2.0 * s);
        let small = rho / (s * big);
        for r in [small, big] {
            if psis.iter().all(|p: &f64| (p - r).abs() > DEDUP_TOL) {
                psis.push(r);
            }
        }
    }
    psis.sort_by(f64::total_cmp);
    psis.into_iter().map(|p| Equilibrium::simsiam(p, hyper)).collect()
}

/// γ on the γ̇ = 0 nullcline as a function of ψ (requires ρ > 0).
pub fn gamma_nullcline(psi: f64, hyper: &Hyper, form: FlowForm) -> f64 {
    let s = hyper.view_second_moment();
    let p3 = psi * psi * psi;
    match form {
        FlowForm::Analysis => p3 * (1.0 - s * psi) / hyper.rho,
        FlowForm::Gradient => p3 / (s * p3 * psi + hyper.rho),
    }
}

/// Default ψ window `[−2/(1+σ²), 2/(1+σ²)]`.
pub fn default_psi_window(hyper: &Hyper) -> (f64, f64) {
    let w = 2.0 / hyper.view_second_moment();
    (-w, w)
}

/// Equilibria of the reduced PhiNet system (analysis form) with ψ in `psi_bounds`.
pub fn find_equilibria_reduced(hyper: &Hyper, psi_bounds: (f64, f64), resolution: usize) -> Result<Vec<Equilibrium>> {
    find_equilibria_reduced_form(hyper, psi_bounds, resolution, FlowForm::Analysis)
}

/// Substitutes the γ̇ = 0 nullcline into ψ̇/ψ = 0, brackets sign changes of the
/// resulting univariate function, bisects, then Newton-polishes on the planar
/// system. The origin is always included. Sorted by ψ.
pub fn find_equilibria_reduced_form(
    hyper: &Hyper,
    psi_bounds: (f64, f64),
    resolution: usize,
    form: FlowForm,
) -> Result<Vec<Equilibrium>> {
    hyper.validate()?;
    if hyper.rho <= 0.0 {
        return Err(Error::Unsupported(
            "equilibrium search eliminates γ by dividing by ρ; ρ must be > 0".into(),
        ));
    }
    if resolution < MIN_RESOLUTION {
        return Err(Error::config(format!(
            "resolution {resolution} < {MIN_RESOLUTION} risks missing equilibria"
        )));
    }
    let (lo, hi) = psi_bounds;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::config(format!("invalid psi bounds [{lo}, {hi}]")));
    }
    let s = hyper.view_second_moment();
    let rho = hyper.rho;
    let reduced = |psi: f64| {
        let g = gamma_nullcline(psi, hyper, form);
        (1.0 + g) * psi - s * (1.0 + g * g) * psi * psi - rho
    };
    let mut points: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for root in roots::find_roots(&reduced, lo, hi, resolution, 0.0) {
        let (p, g) = newton_polish(root, gamma_nullcline(root, hyper, form), hyper, form);
        if points.iter().all(|&(q, h)| (q - p).abs() > DEDUP_TOL || (h - g).abs() > DEDUP_TOL) {
            points.push((p, g));
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(points
        .into_iter()
        .map(|(p, g)| Equilibrium::reduced(p, g, hyper, form))
        .collect())
}

fn newton_polish(psi: f64, gamma: f64, hyper: &Hyper, form: FlowForm) -> (f64, f64) {
    let residual = |p: f64, g: f64| {
        let (a, b) = rhs_reduced_form(p, g, hyper, form);
        a.hypot(b)
    };
    let (mut p, mut g) = (psi, gamma);
    let mut best = (p, g, residual(p, g));
    for _ in 0..30 {
        let (a, b) = rhs_reduced_form(p, g, hyper, form);
        let j = jacobian_reduced(p, g, hyper, form);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        p -= (j[1][1] * a - j[0][1] * b) / det;
        g -= (j[0][0] * b - j[1][0] * a) / det;
        let r = residual(p, g);
        if !r.is_finite() {
            break;
        }
        if r < best.2 {
            best = (p, g, r);
        }
        if r == 0.0 {
            break;
        }
    }
    // Newton may jump to a neighbouring root from a poor start; keep the bracketed one then.
    if (best.0 - psi).abs() > 1e-6 * (1.0 + psi.abs()) {
        return (psi, gamma);
    }
    (best.0, best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Strong,
    Medium,
    Light,
    Weak,
    Other,
}

impl Regime {
    pub fn from_sink_count(n: usize) -> Self {
        match n {
            1 => Regime::Strong,
            2 => Regime::Medium,
            3 => Regime::Light,
            4 => Regime::Weak,
            _ => Regime::Other,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Strong => "strong",
            Regime::Medium => "medium",
            Regime::Light => "light",
            Regime::Weak => "weak",
            Regime::Other => "other",
        }
    }
}

/// Which reduced dynamics a regime or sweep is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ReducedSystem {
    /// Planar PhiNet system, analysis form.
    #[default]
    #[serde(rename = "phinet")]
    PhiNet,
    /// Planar PhiNet system obtained from the exact loss gradient.
    #[serde(rename = "phinet-gradient")]
    PhiNetGradient,
    /// Scalar SimSiam system.
    #[serde(rename = "simsiam")]
    SimSiam,
}

impl ReducedSystem {
    pub fn equilibria(&self, hyper: &Hyper) -> Result<Vec<Equilibrium>> {
        match self {
            ReducedSystem::PhiNet => find_equilibria_default(hyper, FlowForm::Analysis),
            ReducedSystem::PhiNetGradient => find_equilibria_default(hyper, FlowForm::Gradient),
            ReducedSystem::SimSiam => {
                hyper.validate()?;
                Ok(simsiam_equilibria(hyper))
            }
        }
    }
}

fn find_equilibria_default(hyper: &Hyper, form: FlowForm) -> Result<Vec<Equilibrium>> {
    hyper.validate()?;
    find_equilibria_reduced_form(hyper, default_psi_window(hyper), DEFAULT_RESOLUTION, form)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub hyper: Hyper,
    pub system: ReducedSystem,
    pub equilibria: Vec<Equilibrium>,
    pub regime: Regime,
    pub sink_count: usize,
}

impl RegimeReport {
    pub fn sinks(&self) -> impl Iterator<Item = &Equilibrium> {
        self.equilibria.iter().filter(|e| e.is_sink())
    }
}

/// Regime of the reduced PhiNet (analysis form) system.
pub fn regime(hyper: &Hyper) -> Result<RegimeReport> {
    regime_of(hyper, ReducedSystem::PhiNet)
}

pub fn regime_of(hyper: &Hyper, system: ReducedSystem) -> Result<RegimeReport> {
    let equilibria = system.equilibria(hyper)?;
    let sink_count = equilibria.iter().filter(|e| e.is_sink()).count();
    Ok(RegimeReport {
        hyper: *hyper,
        system,
        regime: Regime::from_sink_count(sink_count),
        sink_count,
        equilibria,
    })
}

/// A weight-decay value where the number of sinks changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub rho: f64,
    pub sinks_below: usize,
    pub sinks_above: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub sigma2: f64,
    pub system: ReducedSystem,
    pub points: Vec<RegimeReport>,
    pub boundaries: Vec<Boundary>,
}

/// Relative width to which sweep boundaries are bisected.
pub const BOUNDARY_RTOL: f64 = 1e-4;

/// Sink counts on a log-spaced ρ grid, with every change of count located by
/// bisection in log ρ.
pub fn sweep_rho(sigma2: f64, rho_min: f64, rho_max: f64, grid: usize, system: ReducedSystem) -> Result<Sweep> {
    Hyper::new(sigma2, 0.0)?;
    if !(rho_min > 0.0 && rho_min < rho_max && rho_max.is_finite()) {
        return Err(Error::config(format!(
            "sweep requires 0 < rho_min < rho_max, got [{rho_min}, {rho_max}]"
        )));
    }
    if grid < 2 {
        return Err(Error::config("sweep grid needs at least 2 points"));
    }
    let (la, lb) = (rho_min.ln(), rho_max.ln());
    let rhos: Vec<f64> = (0..grid)
        .map(|k| match k {
            0 => rho_min,
            k if k == grid - 1 => rho_max,
            k => (la + (lb - la) * k as f64 / (grid - 1) as f64).exp(),
        })
        .collect();
    let points = crate::par_map(&rhos, |&rho| regime_of(&Hyper { sigma2, rho }, system))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let sinks = |rho: f64| regime_of(&Hyper { sigma2, rho }, system).map(|r| r.sink_count);
    let mut boundaries = Vec::new();
    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.sink_count == b.sink_count {
            continue;
        }
        let (mut lo, mut hi) = (a.hyper.rho, b.hyper.rho);
        while (hi - lo) / lo > BOUNDARY_RTOL {
            let mid = (lo * hi).sqrt();
            if sinks(mid)? == a.sink_count {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        boundaries.push(Boundary {
            rho: (lo * hi).sqrt(),
            sinks_below: a.sink_count,
            sinks_above: b.sink_count,
        });
    }
    Ok(Sweep {
        sigma2,
        system,
        points,
        boundaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::Method;
    use proptest::prelude::*;

    fn hyper(s2: f64, rho: f64) -> Hyper {
        Hyper::new(s2, rho).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let h = hyper(1.5, 0.03);
        assert_eq!(rhs_full(&EigenState::new(0.0, 0.0, 0.0), &h), EigenState::new(0.0, 0.0, 0.0));
        let d = rhs_full(&EigenState::new(1.0, 1.0, 0.0), &hyper(0.0, 0.0));
        assert_eq!(d.norm(), 0.0);
        assert_eq!(rhs_reduced(0.0, 0.0, &h), (0.0, 0.0));
        assert_eq!(rhs_simsiam(0.0, &h), 0.0);
        assert_eq!(rhs_simsiam(1.0, &hyper(0.0, 0.0)), 0.0);
    }

    #[test]
    fn reduced_hand_value() {
        // ψ̇ = {1.1 − 2.5·1.01·0.4}·0.16 − 0.012 = 0.0024
        // γ̇ = {1 − 2.5·0.4}·0.064 − 0.003 = −0.003
        let (a, b) = rhs_reduced(0.4, 0.1, &hyper(1.5, 0.03));
        assert!((a - 0.0024).abs() < 1e-15, "{a}");
        assert!((b + 0.003).abs() < 1e-15, "{b}");
    }

    #[test]
    fn simsiam_fixed_point_example() {
        let h = hyper(1.5, 0.08);
        let star = (1.0 + 0.2f64.sqrt()) / 5.0;
        assert!((star - 0.2894).abs() < 1e-4);
        assert!(rhs_simsiam(star, &h).abs() < 1e-15);
        assert!(rhs_simsiam(0.2894, &h).abs() < 1e-5);
    }

    #[test]
    fn critical_rho_examples() {
        assert_eq!(simsiam_critical_rho(0.0), 0.25);
        assert!((simsiam_critical_rho(1.5) - 0.1).abs() < 1e-15);
        assert_eq!(simsiam_critical_rho(3.0), 0.0625);
    }

    #[test]
    fn simsiam_equilibria_examples() {
        let strong = simsiam_equilibria(&hyper(1.5, 0.12));
        assert_eq!(strong.len(), 1);
        assert!(strong[0].is_origin() && strong[0].is_sink());

        let medium = simsiam_equilibria(&hyper(1.5, 0.08));
        assert_eq!(medium.len(), 3);
        assert!(medium[0].is_origin() && medium[0].is_sink());
        assert!((medium[1].psi - 0.1106).abs() < 1e-4);
        assert_eq!(medium[1].class, StabilityClass::Source);
        assert!((medium[2].psi - 0.2894).abs() < 1e-4);
        assert!(medium[2].is_sink());

        let free = simsiam_equilibria(&hyper(0.0, 0.0));
        assert_eq!(free.len(), 2);
        assert_eq!(free[0].class, StabilityClass::Degenerate);
        assert_eq!(free[1].psi, 1.0);
        assert!(free[1].is_sink());
    }

    #[test]
    fn simsiam_equilibria_never_negative_for_positive_rho() {
        for rho in [1e-6, 1e-4, 0.01, 0.05, 0.099, 0.2] {
            assert!(simsiam_equilibria(&hyper(1.5, rho)).iter().all(|e| e.psi >= 0.0));
        }
    }

    #[test]
    fn equilibria_paper_regimes() {
        let eqs = |rho| find_equilibria_reduced(&hyper(1.5, rho), default_psi_window(&hyper(1.5, rho)), DEFAULT_RESOLUTION).unwrap();
        let sinks = |v: &[Equilibrium]| v.iter().filter(|e| e.is_sink()).cloned().collect::<Vec<_>>();

        let strong = sinks(&eqs(0.12));
        assert_eq!(strong.len(), 1);
        assert!(strong[0].is_origin());
        assert_eq!(sinks(&eqs(0.03)).len(), 2);
        let weak = sinks(&eqs(0.0001));
        assert_eq!(weak.len(), 4);
        assert_eq!(weak.iter().filter(|e| e.psi < 0.0 && e.gamma < 0.0).count(), 1);
    }

    #[test]
    fn equilibria_errors() {
        let w = (-1.0, 1.0);
        assert!(matches!(find_equilibria_reduced(&hyper(1.5, 0.0), w, 1000), Err(Error::Unsupported(_))));
        assert!(matches!(find_equilibria_reduced(&hyper(1.5, 0.1), w, 99), Err(Error::Config(_))));
        assert!(matches!(find_equilibria_reduced(&hyper(1.5, 0.1), (1.0, -1.0), 1000), Err(Error::Config(_))));
    }

    #[test]
    fn equilibria_have_tiny_residuals() {
        for rho in [0.12, 0.1, 0.08, 0.03, 0.003, 0.0001] {
            for form in [FlowForm::Analysis, FlowForm::Gradient] {
                let h = hyper(1.5, rho);
                let eqs = find_equilibria_reduced_form(&h, default_psi_window(&h), DEFAULT_RESOLUTION, form).unwrap();
                assert!(eqs[0].psi <= eqs.last().unwrap().psi);
                for e in &eqs {
                    let (a, b) = rhs_reduced_form(e.psi, e.gamma, &h, form);
                    assert!(a.hypot(b) <= 1e-10, "rho={rho} {e:?} residual {}", a.hypot(b));
                }
            }
        }
    }

    #[test]
    fn regime_examples() {
        assert_eq!(regime(&hyper(1.5, 0.12)).unwrap().regime, Regime::Strong);
        assert_eq!(regime(&hyper(1.5, 0.003)).unwrap().regime, Regime::Light);
        assert_eq!(regime(&hyper(1.5, 0.0001)).unwrap().regime, Regime::Weak);
        assert!(regime(&hyper(1.5, 0.0)).is_err());
    }

    #[test]
    fn classification_rules() {
        let c = |re: &[f64]| classify(&re.iter().map(|&r| Complex64::new(r, 0.3)).collect::<Vec<_>>());
        assert_eq!(c(&[-1.0, -2.0]), StabilityClass::Sink);
        assert_eq!(c(&[1.0, 2.0]), StabilityClass::Source);
        assert_eq!(c(&[-1.0, 2.0]), StabilityClass::Saddle);
        assert_eq!(c(&[-1.0, 1e-12]), StabilityClass::Degenerate);
        assert_eq!(c(&[0.0]), StabilityClass::Degenerate);
    }

    #[test]
    fn integrate_from_equilibrium_is_constant() {
        let h = hyper(1.5, 0.03);
        let eqs = find_equilibria_reduced(&h, default_psi_window(&h), DEFAULT_RESOLUTION).unwrap();
        let opts = IntegrationOptions::new(0.01, 1000, Method::Rk4);
        for e in eqs {
            let tr = integrate_eigen(&EigenState::on_parabola(e.psi, e.gamma), &h, &opts, EigenSystem::Reduced, FlowForm::Analysis).unwrap();
            let last = tr.last().unwrap();
            assert!((last.psi - e.psi).abs() < 1e-9 && (last.gamma - e.gamma).abs() < 1e-9);
        }
    }

    #[test]
    fn reduced_c1_scenario_and_simsiam_contrast() {
        let h = hyper(1.5, 0.08);
        let opts = IntegrationOptions::new(0.01, 200_000, Method::Rk4);
        let phinet = integrate_eigen(&EigenState::on_parabola(0.08, 0.5), &h, &opts, EigenSystem::Reduced, FlowForm::Analysis).unwrap();
        let end = phinet.last().unwrap();
        assert!(end.psi > 0.2, "{end:?}");
        let sinks: Vec<_> = find_equilibria_reduced(&h, default_psi_window(&h), DEFAULT_RESOLUTION)
            .unwrap()
            .into_iter()
            .filter(|e| e.is_sink() && !e.is_origin())
            .collect();
        assert!(sinks.iter().any(|s| (s.psi - end.psi).hypot(s.gamma - end.gamma) < 1e-3));

        let simsiam = integrate_eigen(&EigenState::on_parabola(0.08, 0.0), &h, &opts, EigenSystem::SimSiam, FlowForm::Analysis).unwrap();
        assert!(simsiam.last().unwrap().psi.abs() < 1e-3);
    }

    #[test]
    fn full_system_stays_on_parabola() {
        let h = hyper(1.5, 0.05);
        let opts = IntegrationOptions::new(0.01, 5000, Method::Rk4);
        let tr = integrate_eigen(&EigenState::on_parabola(0.3, 0.2), &h, &opts, EigenSystem::Full, FlowForm::Analysis).unwrap();
        let worst = tr.states.iter().map(|s| s.parabola_residual().abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn aligned_params_commute_with_matrix_flow() {
        let states = [EigenState::new(0.3, 0.5, 0.2), EigenState::new(0.1, -0.2, 0.7), EigenState::new(0.05, 0.9, -0.4)];
        let th = std::f64::consts::FRAC_PI_6;
        let (c, s) = (th.cos(), th.sin());
        let u = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let p = aligned_params(&states, Some(&u)).unwrap();
        let h = hyper(1.5, 0.03);
        for form in [FlowForm::Analysis, FlowForm::Gradient] {
            let d = crate::flows::grad_flow_rhs(&p, &h, form).unwrap();
            let dphi = &d.wf * p.wf.transpose() + &p.wf * d.wf.transpose();
            for (k, st) in states.iter().enumerate() {
                let uk = u.column(k);
                let want = rhs_full_form(st, &h, form);
                let got_phi = (uk.transpose() * &dphi * uk)[(0, 0)];
                let got_psi = (uk.transpose() * &d.wh * uk)[(0, 0)];
                let got_gamma = (uk.transpose() * d.wg.as_ref().unwrap() * uk)[(0, 0)];
                assert!((got_phi - want.phi).abs() < 1e-12);
                assert!((got_psi - want.psi).abs() < 1e-12);
                assert!((got_gamma - want.gamma).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sweep_validation() {
        assert!(sweep_rho(1.5, 0.0, 0.3, 10, ReducedSystem::PhiNet).is_err());
        assert!(sweep_rho(1.5, 0.3, 0.1, 10, ReducedSystem::PhiNet).is_err());
        assert!(sweep_rho(1.5, 0.01, 0.3, 1, ReducedSystem::PhiNet).is_err());
    }

    /// Finite-difference check of the analytic Jacobian.
    fn fd_jacobian(psi: f64, gamma: f64, h: &Hyper, form: FlowForm) -> [[f64; 2]; 2] {
        let e = 1e-6;
        let f = |p, g| rhs_reduced_form(p, g, h, form);
        let (a1, b1) = f(psi + e, gamma);
        let (a0, b0) = f(psi - e, gamma);
        let (c1, d1) = f(psi, gamma + e);
        let (c0, d0) = f(psi, gamma - e);
        [
            [(a1 - a0) / (2.0 * e), (c1 - c0) / (2.0 * e)],
            [(b1 - b0) / (2.0 * e), (d1 - d0) / (2.0 * e)],
        ]
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            psi in -1.0f64..1.0, gamma in -2.0f64..2.0, s2 in 0.0f64..3.0, rho in 0.0f64..0.3, grad in any::<bool>()
        ) {
            let h = hyper(s2, rho);
            let form = if grad { FlowForm::Gradient } else { FlowForm::Analysis };
            let j = jacobian_reduced(psi, gamma, &h, form);
            let f = fd_jacobian(psi, gamma, &h, form);
            let scale = j.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            for r in 0..2 { for c in 0..2 {
                prop_assert!((j[r][c] - f[r][c]).abs() / scale <= 1e-8, "{:?} vs {:?}", j, f);
            }}
        }

        #[test]
        fn reduced_is_full_on_parabola(psi in -1.0f64..1.0, gamma in -3.0f64..3.0, s2 in 0.0f64..3.0, rho in 0.0f64..0.3) {
            let h = hyper(s2, rho);
            let (a, b) = rhs_reduced(psi, gamma, &h);
            let full = rhs_full(&EigenState::on_parabola(psi, gamma), &h);
            prop_assert!((a - full.psi).abs() <= 1e-14 * (1.0 + a.abs()));
            prop_assert!((b - full.gamma).abs() <= 1e-14 * (1.0 + b.abs()));
        }

        #[test]
        fn parabola_law_is_exact(phi in 0.0f64..1.0, psi in -1.0f64..1.0, gamma in -2.0f64..2.0, rho in 0.0f64..0.3) {
            // 2ψψ̇ − φ̇ = −2ρ(ψ² − φ)
            let h = hyper(1.5, rho);
            let s = EigenState::new(phi, psi, gamma);
            let d = rhs_full(&s, &h);
            let lhs = 2.0 * psi * d.psi - d.phi;
            prop_assert!((lhs + 2.0 * rho * s.parabola_residual()).abs() < 1e-12);
        }
    }
}
