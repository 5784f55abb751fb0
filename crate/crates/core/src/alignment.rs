//! Commutator dynamics of (Φ, W_g, W_h) and the invariant parabola.
//!
//! For symmetric W_g = G and W_h = H the matrix flow writes Φ̇, Ġ, Ḣ as
//! polynomials in the three symmetric symbols Φ, G, H. Expanding
//! `Ċ₁ = [Φ̇,G] + [Φ,Ġ]`, `Ċ₂ = [Φ̇,H] + [Φ,Ḣ]`, `Ċ₃ = [Ġ,H] + [G,Ḣ]` with the
//! Leibniz rule turns every term into `P·Cᵢ·R`, so that with column stacking
//! `vec(P C R) = (Rᵀ ⊗ P) vec C` the commutators obey the linear system
//! `Ξ̇ = −(3ρI + K)Ξ` with `Ξ = (vec C₁, vec C₂, vec C₃)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::eigen::EigenState;
use crate::error::{Error, Result};
use crate::flows::{self, phi_of, symmetric_part, FlowForm, Hyper, MatrixParams};
use crate::integrate::{self, IntegrationOptions, Trajectory};

/// Tolerance for the symmetric-predictor assumption.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Commutator norms below this are treated as round-off when fitting or bounding decay.
pub const XI_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutatorSnapshot {
    /// [Φ, W_g]
    #[serde(with = "crate::rows")]
    pub c1: DMatrix<f64>,
    /// [Φ, W_h]
    #[serde(with = "crate::rows")]
    pub c2: DMatrix<f64>,
    /// [W_g, W_h]
    #[serde(with = "crate::rows")]
    pub c3: DMatrix<f64>,
    pub norms: [f64; 3],
}

impl CommutatorSnapshot {
    /// ‖Ξ‖ for the stacked vector of all three commutators.
    pub fn total_norm(&self) -> f64 {
        self.norms.iter().map(|n| n * n).sum::<f64>().sqrt()
    }

    /// Column-stacked `Ξ = (vec C₁, vec C₂, vec C₃)`.
    pub fn xi(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(3 * self.c1.len());
        for c in [&self.c1, &self.c2, &self.c3] {
            v.extend_from_slice(c.as_slice());
        }
        DVector::from_vec(v)
    }
}

fn commutator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

pub fn commutators(params: &MatrixParams) -> Result<CommutatorSnapshot> {
    let Some(wg) = &params.wg else {
        return Err(Error::mode("commutators need W_g (PhiNet parameters)"));
    };
    params.validate()?;
    let phi = phi_of(params);
    let c1 = commutator(&phi, wg);
    let c2 = commutator(&phi, &params.wh);
    let c3 = commutator(wg, &params.wh);
    let norms = [c1.norm(), c2.norm(), c3.norm()];
    Ok(CommutatorSnapshot { c1, c2, c3, norms })
}

/// Largest entry of `W − Wᵀ` over W_h and W_g.
pub fn max_asymmetry(params: &MatrixParams) -> f64 {
    let asym = |w: &DMatrix<f64>| (w - w.transpose()).amax();
    params.wg.as_ref().map_or(0.0, asym).max(asym(&params.wh))
}

fn check_symmetric(params: &MatrixParams) -> Result<()> {
    let Some(wg) = &params.wg else {
        return Err(Error::mode("W_g is absent"));
    };
    for (name, w) in [("W_g", wg), ("W_h", &params.wh)] {
        let asym = (w - w.transpose()).amax();
        if asym > SYMMETRY_TOL * w.amax().max(1.0) {
            return Err(Error::Assumption(format!("{name} is not symmetric (max |W − Wᵀ| = {asym:.3e})")));
        }
    }
    Ok(())
}

/// Which flow the commutator operator is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PredictorFlow {
    /// The matrix flow as is; valid for Ξ̇ at a symmetric point.
    Raw,
    /// Ẇ_g and Ẇ_h replaced by their symmetric parts, so symmetry persists.
    #[default]
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sym {
    Phi,
    G,
    H,
}

type Poly = Vec<(f64, Vec<Sym>)>;

/// Φ̇, Ġ, Ḣ at symmetric (G, H), including the weight-decay terms.
fn flow_polys(hyper: &Hyper, form: FlowForm, flow: PredictorFlow) -> [Poly; 3] {
    use Sym::*;
    let s = hyper.view_second_moment();
    let rho = hyper.rho;
    let phi_dot = vec![
        (-s, vec![H, H, Phi]),
        (-s, vec![H, G, G, H, Phi]),
        (-s, vec![Phi, H, H]),
        (-s, vec![Phi, H, G, G, H]),
        (1.0, vec![H, Phi]),
        (1.0, vec![Phi, H]),
        (1.0, vec![H, G, Phi]),
        (1.0, vec![Phi, G, H]),
        (-2.0 * rho, vec![Phi]),
    ];
    let mut g_dot = vec![(1.0, vec![Phi, H]), (-rho, vec![G])];
    g_dot.push(match form {
        FlowForm::Analysis => (-s, vec![H, Phi, H]),
        FlowForm::Gradient => (-s, vec![G, H, Phi, H]),
    });
    let mut h_dot = vec![
        (-s, vec![H, Phi]),
        (-s, vec![G, G, H, Phi]),
        (1.0, vec![Phi]),
        (1.0, vec![G, Phi]),
        (-rho, vec![H]),
    ];
    if flow == PredictorFlow::Projected {
        g_dot = symmetrize(g_dot);
        h_dot = symmetrize(h_dot);
    }
    [phi_dot, g_dot, h_dot]
}

/// (p + pᵀ)/2 where transposing a word of symmetric symbols reverses it.
fn symmetrize(p: Poly) -> Poly {
    p.into_iter()
        .flat_map(|(c, w)| {
            let rev: Vec<Sym> = w.iter().rev().copied().collect();
            [(0.5 * c, w), (0.5 * c, rev)]
        })
        .collect()
}

/// `[a, b]` for two symbols as (sign, commutator index).
fn symbol_commutator(a: Sym, b: Sym) -> Option<(f64, usize)> {
    use Sym::*;
    match (a, b) {
        (Phi, G) => Some((1.0, 0)),
        (G, Phi) => Some((-1.0, 0)),
        (Phi, H) => Some((1.0, 1)),
        (H, Phi) => Some((-1.0, 1)),
        (G, H) => Some((1.0, 2)),
        (H, G) => Some((-1.0, 2)),
        _ => None,
    }
}

struct Symbols<'a> {
    phi: &'a DMatrix<f64>,
    g: &'a DMatrix<f64>,
    h: &'a DMatrix<f64>,
    eye: DMatrix<f64>,
}

impl Symbols<'_> {
    fn product(&self, word: &[Sym]) -> DMatrix<f64> {
        let mut out = self.eye.clone();
        for s in word {
            out *= match s {
                Sym::Phi => self.phi,
                Sym::G => self.g,
                Sym::H => self.h,
            };
        }
        out
    }
}

/// Linear operator `L` with `Ξ̇ = LΞ`, so `K = −L − 3ρI`.
fn commutator_operator(params: &MatrixParams, hyper: &Hyper, form: FlowForm, flow: PredictorFlow) -> DMatrix<f64> {
    use Sym::*;
    let m = params.m();
    let n = m * m;
    let phi = phi_of(params);
    let g = params.wg.as_ref().expect("checked by caller");
    let sy = Symbols {
        phi: &phi,
        g,
        h: &params.wh,
        eye: DMatrix::identity(m, m),
    };
    let [phi_dot, g_dot, h_dot] = flow_polys(hyper, form, flow);
    // Ċᵢ = Σ sign·[word, x] over (target block, polynomial, x, sign).
    let pieces: [(usize, &Poly, Sym, f64); 6] = [
        (0, &phi_dot, G, 1.0),
        (0, &g_dot, Phi, -1.0),
        (1, &phi_dot, H, 1.0),
        (1, &h_dot, Phi, -1.0),
        (2, &g_dot, H, 1.0),
        (2, &h_dot, G, -1.0),
    ];
    let mut l = DMatrix::zeros(3 * n, 3 * n);
    for (row, poly, x, outer) in pieces {
        for (coef, word) in poly {
            for k in 0..word.len() {
                let Some((sign, col)) = symbol_commutator(word[k], x) else {
                    continue;
                };
                let p = sy.product(&word[..k]);
                let r = sy.product(&word[k + 1..]);
                let block = r.transpose().kronecker(&p) * (outer * coef * sign);
                let mut view = l.view_mut((row * n, col * n), (n, n));
                view += block;
            }
        }
    }
    l
}

/// The block operator K of `Ξ̇ = −(3ρI + K)Ξ` (size 3m² × 3m², column stacking).
pub fn build_k(params: &MatrixParams, hyper: &Hyper, form: FlowForm, flow: PredictorFlow) -> Result<DMatrix<f64>> {
    check_symmetric(params)?;
    params.validate()?;
    hyper.validate()?;
    let l = commutator_operator(params, hyper, form, flow);
    let dim = l.nrows();
    Ok(-l - DMatrix::identity(dim, dim) * (3.0 * hyper.rho))
}

/// Orthonormal basis (columns) of stacked antisymmetric triples, where Ξ lives.
pub fn antisymmetric_basis(m: usize) -> DMatrix<f64> {
    let n = m * m;
    let per = m * m.saturating_sub(1) / 2;
    let mut b = DMatrix::zeros(3 * n, 3 * per);
    let w = std::f64::consts::FRAC_1_SQRT_2;
    let mut col = 0;
    for block in 0..3 {
        for j in 0..m {
            for i in 0..j {
                b[(block * n + j * m + i, col)] = w;
                b[(block * n + i * m + j, col)] = -w;
                col += 1;
            }
        }
    }
    b
}

/// Smallest eigenvalue of the symmetric part of `3ρI + K`, on the antisymmetric
/// subspace and on the whole space.
pub fn min_symmetric_eig(k: &DMatrix<f64>, rho: f64, basis: &DMatrix<f64>) -> (f64, f64) {
    let dim = k.nrows();
    let a = k + DMatrix::identity(dim, dim) * (3.0 * rho);
    let sym = symmetric_part(&a);
    let min = |s: DMatrix<f64>| SymmetricEigen::new(s).eigenvalues.min();
    let restricted = if basis.ncols() == 0 {
        f64::NAN
    } else {
        min(basis.transpose() * &sym * basis)
    };
    (restricted, min(sym))
}

/// The matrix flow with Ẇ_g, Ẇ_h replaced by their symmetric parts.
pub fn projected_flow_rhs(params: &MatrixParams, hyper: &Hyper, form: FlowForm) -> Result<MatrixParams> {
    let mut d = flows::grad_flow_rhs(params, hyper, form)?;
    d.wh = symmetric_part(&d.wh);
    d.wg = d.wg.map(|g| symmetric_part(&g));
    Ok(d)
}

pub fn integrate_projected_flow(
    init: &MatrixParams,
    hyper: &Hyper,
    opts: &IntegrationOptions,
    form: FlowForm,
) -> Result<Trajectory<MatrixParams>> {
    check_symmetric(init)?;
    hyper.validate()?;
    let h = *hyper;
    integrate::integrate(
        init,
        opts,
        |p: &MatrixParams| projected_flow_rhs(p, &h, form).expect("wg present"),
        &[],
        |_| vec![],
    )
}

/// A maximal run of records on which the restricted minimum eigenvalue stays positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayInterval {
    pub t_start: f64,
    pub t_end: f64,
    /// Minimum of the restricted eigenvalue over the run.
    pub lambda0: f64,
    /// `‖Ξ(t_end)‖ / (exp(−λ₀(t_end − t_start)) ‖Ξ(t_start)‖)`; at most 1 when the bound holds.
    pub ratio: f64,
    /// Largest ratio of the same bound between consecutive records.
    pub worst_step_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub times: Vec<f64>,
    /// (‖C₁‖, ‖C₂‖, ‖C₃‖) per record.
    pub trajectory_norms: Vec<[f64; 3]>,
    pub xi_norms: Vec<f64>,
    /// Slope of log‖Ξ‖ against t over the tail half (records above [`XI_FLOOR`]).
    pub fitted_decay_rate: Option<f64>,
    /// Minimum eigenvalue of sym(3ρI + K) on the antisymmetric subspace.
    pub min_symmetric_eig_of_k: Vec<f64>,
    /// The same on all of ℝ^{3m²}.
    pub min_symmetric_eig_full: Vec<f64>,
    /// Sorted eigenvalues of W_hᵀW_h − Φ, the per-direction ψᵢ² − φᵢ.
    pub parabola_residuals: Vec<Vec<f64>>,
    /// Slope of log‖W_hᵀW_h − Φ‖_F against t (records above [`PARABOLA_ZERO`]); −2ρ exactly in theory.
    pub fitted_parabola_rate: Option<f64>,
    pub decay_intervals: Vec<DecayInterval>,
    /// Runs where the restricted minimum eigenvalue is ≤ 0.
    pub nonpositive_intervals: Vec<(f64, f64)>,
    pub final_params: MatrixParams,
}

/// Integrates the symmetry-projected matrix flow and records the alignment diagnostics.
pub fn track_alignment(
    init: &MatrixParams,
    hyper: &Hyper,
    opts: &IntegrationOptions,
    form: FlowForm,
) -> Result<AlignmentReport> {
    init.validate()?;
    check_symmetric(init)?;
    let m = init.m();
    if m < 2 {
        return Err(Error::contract("alignment needs m >= 2; commutators vanish for m = 1"));
    }
    let traj = integrate_projected_flow(init, hyper, opts, form)?;
    let basis = antisymmetric_basis(m);

    let rows: Vec<_> = crate::par_map(&traj.states, |p| {
        let snap = commutators(p).expect("wg present");
        let k = build_k(p, hyper, form, PredictorFlow::Projected).expect("projected flow keeps symmetry");
        let (restricted, full) = min_symmetric_eig(&k, hyper.rho, &basis);
        let gap = p.wh.transpose() * &p.wh - phi_of(p);
        let mut res: Vec<f64> = SymmetricEigen::new(symmetric_part(&gap)).eigenvalues.iter().copied().collect();
        res.sort_by(f64::total_cmp);
        (snap.norms, snap.total_norm(), restricted, full, res)
    });

    let mut report = AlignmentReport {
        times: traj.times.clone(),
        trajectory_norms: Vec::with_capacity(rows.len()),
        xi_norms: Vec::with_capacity(rows.len()),
        fitted_decay_rate: None,
        min_symmetric_eig_of_k: Vec::with_capacity(rows.len()),
        min_symmetric_eig_full: Vec::with_capacity(rows.len()),
        parabola_residuals: Vec::with_capacity(rows.len()),
        fitted_parabola_rate: None,
        decay_intervals: Vec::new(),
        nonpositive_intervals: Vec::new(),
        final_params: traj.states.last().expect("trajectory has the initial state").clone(),
    };
    for (norms, xi, restricted, full, res) in rows {
        report.trajectory_norms.push(norms);
        report.xi_norms.push(xi);
        report.min_symmetric_eig_of_k.push(restricted);
        report.min_symmetric_eig_full.push(full);
        report.parabola_residuals.push(res);
    }
    report.fitted_decay_rate = fit_tail_rate(&report.times, &report.xi_norms);
    let (xs, ys): (Vec<f64>, Vec<f64>) = report
        .times
        .iter()
        .zip(&report.parabola_residuals)
        .map(|(&t, r)| (t, r.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .filter(|&(_, n)| n > PARABOLA_ZERO)
        .map(|(t, n)| (t, n.ln()))
        .unzip();
    report.fitted_parabola_rate = least_squares(&xs, &ys).map(|(_, slope)| slope);
    (report.decay_intervals, report.nonpositive_intervals) =
        decay_intervals(&report.times, &report.xi_norms, &report.min_symmetric_eig_of_k);
    Ok(report)
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

fn fit_tail_rate(times: &[f64], norms: &[f64]) -> Option<f64> {
    let start = times.len() / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = times[start..]
        .iter()
        .zip(&norms[start..])
        .filter(|(_, &n)| n > XI_FLOOR)
        .map(|(&t, &n)| (t, n.ln()))
        .unzip();
    least_squares(&xs, &ys).map(|(_, slope)| slope)
}

fn decay_intervals(times: &[f64], xi: &[f64], eig: &[f64]) -> (Vec<DecayInterval>, Vec<(f64, f64)>) {
    let mut positive = Vec::new();
    let mut nonpositive = Vec::new();
    let mut k = 0;
    while k < times.len() {
        let is_pos = eig[k] > 0.0;
        let start = k;
        while k < times.len() && (eig[k] > 0.0) == is_pos {
            k += 1;
        }
        let end = k - 1;
        if !is_pos {
            nonpositive.push((times[start], times[end]));
            continue;
        }
        // Bound checks are meaningless once Ξ sits at round-off level.
        let live_end = (start..=end).take_while(|&i| xi[i] > XI_FLOOR).last();
        let Some(live_end) = live_end.filter(|&e| e > start) else {
            continue;
        };
        let lambda0 = eig[start..=live_end].iter().copied().fold(f64::INFINITY, f64::min);
        let bound = |a: usize, b: usize, lam: f64| xi[b] / ((-lam * (times[b] - times[a])).exp() * xi[a]);
        let worst_step_ratio = (start..live_end)
            .map(|i| bound(i, i + 1, eig[i].min(eig[i + 1])))
            .fold(0.0, f64::max);
        positive.push(DecayInterval {
            t_start: times[start],
            t_end: times[live_end],
            lambda0,
            ratio: bound(start, live_end, lambda0),
            worst_step_ratio,
        });
    }
    (positive, nonpositive)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolaFit {
    /// Fitted amplitude of ψ² − φ = C e^{rate·t}; zero when the residual vanishes.
    pub c: f64,
    /// `None` when the residual is identically zero.
    pub rate: Option<f64>,
    /// Largest |ψ² − φ − C e^{rate·t}| (or largest |ψ² − φ| when `rate` is `None`).
    pub max_residual: f64,
}

/// Residuals with magnitude at or below this are treated as exactly on the parabola.
pub const PARABOLA_ZERO: f64 = 1e-12;

/// Fits log|ψ² − φ| linearly in t along a full eigen-system trajectory.
pub fn parabola_fit(traj: &Trajectory<EigenState>) -> Result<ParabolaFit> {
    if traj.is_empty() {
        return Err(Error::contract("empty trajectory"));
    }
    let r: Vec<f64> = traj.states.iter().map(|s| s.parabola_residual()).collect();
    let max_abs = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if max_abs <= PARABOLA_ZERO {
        return Ok(ParabolaFit {
            c: 0.0,
            rate: None,
            max_residual: max_abs,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = traj
        .times
        .iter()
        .zip(&r)
        .filter(|(_, v)| v.abs() > PARABOLA_ZERO)
        .map(|(&t, v)| (t, v.abs().ln()))
        .unzip();
    let Some((intercept, rate)) = least_squares(&xs, &ys) else {
        return Err(Error::contract("need at least two distinct times with a nonzero residual"));
    };
    let c = r[0].signum() * intercept.exp();
    let max_residual = traj
        .times
        .iter()
        .zip(&r)
        .map(|(&t, v)| (v - c * (rate * t).exp()).abs())
        .fold(0.0, f64::max);
    Ok(ParabolaFit {
        c,
        rate: Some(rate),
        max_residual,
    })
}
