//! Phase-portrait data for the reduced dynamics: vector fields, nullclines and basins.

use serde::{Deserialize, Serialize};

use crate::eigen::{
    self, default_psi_window, find_equilibria_reduced_form, gamma_nullcline, rhs_reduced_form, rhs_simsiam,
    Equilibrium, ReducedState, DEFAULT_RESOLUTION,
};
use crate::error::{Error, Result};
use crate::flows::{FlowForm, Hyper};
use crate::integrate::{self, Method};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub psi_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            psi_range: (-0.2, 0.5),
            gamma_range: (-0.2, 0.6),
            nx: 71,
            ny: 81,
        }
    }
}

impl GridSpec {
    pub fn new(psi_range: (f64, f64), gamma_range: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        let g = Self { psi_range, gamma_range, nx, ny };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (a, b)) in [("psi_range", self.psi_range), ("gamma_range", self.gamma_range)] {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::config(format!("{name} must satisfy lo < hi, got [{a}, {b}]")));
            }
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::config(format!("grid needs nx, ny >= 2, got {}x{}", self.nx, self.ny)));
        }
        Ok(())
    }

    pub fn psi(&self, i: usize) -> f64 {
        lerp(self.psi_range, i, self.nx)
    }

    pub fn gamma(&self, j: usize) -> f64 {
        lerp(self.gamma_range, j, self.ny)
    }

    /// Nodes in ψ-major order: index `i * ny + j`.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        (0..self.nx)
            .flat_map(|i| (0..self.ny).map(move |j| (self.psi(i), self.gamma(j))))
            .collect()
    }
}

fn lerp((a, b): (f64, f64), i: usize, n: usize) -> f64 {
    if i + 1 == n {
        b
    } else {
        a + (b - a) * i as f64 / (n - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub psi: f64,
    pub gamma: f64,
    pub dpsi: f64,
    pub dgamma: f64,
}

/// (ψ̇, γ̇) at every grid node, ψ-major.
pub fn vector_field(hyper: &Hyper, grid: &GridSpec, form: FlowForm) -> Result<Vec<FieldSample>> {
    hyper.validate()?;
    grid.validate()?;
    Ok(grid
        .nodes()
        .into_iter()
        .map(|(psi, gamma)| {
            let (dpsi, dgamma) = rhs_reduced_form(psi, gamma, hyper, form);
            FieldSample { psi, gamma, dpsi, dgamma }
        })
        .collect())
}

/// Points `[ψ, γ]` along one connected piece of a curve.
pub type Polyline = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nullclines {
    /// ψ̇ = 0: the line ψ = 0 and the two root branches of the quadratic in ψ.
    pub psi_dot: Vec<Polyline>,
    /// γ̇ = 0, explicit in ψ.
    pub gamma_dot: Vec<Polyline>,
}

fn split_runs(points: impl IntoIterator<Item = Option<[f64; 2]>>) -> Vec<Polyline> {
    let mut out = Vec::new();
    let mut cur: Polyline = Vec::new();
    for p in points {
        match p {
            Some(p) => cur.push(p),
            None if !cur.is_empty() => out.push(std::mem::take(&mut cur)),
            None => {}
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn inside((a, b): (f64, f64), v: f64) -> bool {
    v >= a && v <= b
}

/// Roots of `aψ² − bψ + c = 0` (a > 0) as (smaller, larger), computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let q = 0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return Some((0.0, 0.0));
    }
    let (r1, r2) = (q / a, c / q);
    Some((r1.min(r2), r1.max(r2)))
}

/// Nullclines clipped to the grid window. The γ̇ = 0 branch is sampled at `nx`
/// values of ψ and the ψ̇ = 0 branches at `ny` values of γ.
pub fn nullclines(hyper: &Hyper, grid: &GridSpec, form: FlowForm) -> Result<Nullclines> {
    hyper.validate()?;
    grid.validate()?;
    if hyper.rho <= 0.0 {
        return Err(Error::Unsupported("the explicit γ̇ = 0 branch divides by ρ; ρ must be > 0".into()));
    }
    let s = hyper.view_second_moment();
    let gamma_dot = split_runs((0..grid.nx).map(|i| {
        let psi = grid.psi(i);
        let g = gamma_nullcline(psi, hyper, form);
        inside(grid.gamma_range, g).then_some([psi, g])
    }));

    let mut psi_dot = Vec::new();
    if inside(grid.psi_range, 0.0) {
        psi_dot.push(vec![[0.0, grid.gamma_range.0], [0.0, grid.gamma_range.1]]);
    }
    let roots: Vec<_> = (0..grid.ny)
        .map(|j| {
            let g = grid.gamma(j);
            (g, quadratic_roots(s * (1.0 + g * g), 1.0 + g, hyper.rho))
        })
        .collect();
    for pick in [0, 1] {
        psi_dot.extend(split_runs(roots.iter().map(|&(g, r)| {
            let psi = r.map(|(lo, hi)| if pick == 0 { lo } else { hi })?;
            inside(grid.psi_range, psi).then_some([psi, g])
        })));
    }
    Ok(Nullclines { psi_dot, gamma_dot })
}

/// Integration settings for basin maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinOptions {
    /// Integration time; `None` picks [`default_horizon`].
    pub horizon: Option<f64>,
    pub dt: f64,
    /// Attraction radius around a sink.
    pub radius: f64,
}

impl Default for BasinOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            dt: 0.01,
            radius: 0.02,
        }
    }
}

/// Components beyond this count as divergence.
pub const DIVERGENCE_GUARD: f64 = 10.0;

/// 2000 time units, extended to 10/ρ for ρ < 5e-3 where the slowest rates are O(ρ).
pub fn default_horizon(rho: f64) -> f64 {
    if rho < 5e-3 && rho > 0.0 {
        (10.0 / rho).max(2000.0)
    } else {
        2000.0
    }
}

impl BasinOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::config(format!("radius must be positive, got {}", self.radius)));
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::config(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }

    fn steps(&self, rho: f64) -> usize {
        (self.horizon.unwrap_or_else(|| default_horizon(rho)) / self.dt).ceil() as usize
    }
}

/// Label of seeds that diverge or end away from every sink.
pub const UNCLASSIFIED: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinMap {
    pub grid: GridSpec,
    /// `labels[i][j]` for seed (ψᵢ, γⱼ): index into `attractors`, or −1.
    pub labels: Vec<Vec<i32>>,
    pub attractors: Vec<Equilibrium>,
}

impl BasinMap {
    pub fn label_at(&self, i: usize, j: usize) -> i32 {
        self.labels[i][j]
    }

    pub fn attractor(&self, label: i32) -> Option<&Equilibrium> {
        usize::try_from(label).ok().and_then(|k| self.attractors.get(k))
    }

    /// Number of seeds whose attractor satisfies `pred`.
    pub fn count(&self, pred: impl Fn(&Equilibrium) -> bool) -> usize {
        self.labels
            .iter()
            .flatten()
            .filter(|&&l| self.attractor(l).is_some_and(&pred))
            .count()
    }
}

/// Equilibria located for labelling, with per-sink capture radii.
struct Targets {
    all: Vec<Equilibrium>,
    /// Indices (into `all`) of sinks, in attractor order.
    sinks: Vec<usize>,
    capture: Vec<f64>,
}

impl Targets {
    fn new(all: Vec<Equilibrium>, radius: f64) -> Self {
        let sinks: Vec<usize> = (0..all.len()).filter(|&k| all[k].is_sink()).collect();
        // Capturing early is only safe well inside the sink's neighbourhood.
        let capture = sinks
            .iter()
            .map(|&k| {
                let sep = all
                    .iter()
                    .enumerate()
                    .filter(|&(q, _)| q != k)
                    .map(|(_, e)| (e.psi - all[k].psi).hypot(e.gamma - all[k].gamma))
                    .fold(f64::INFINITY, f64::min);
                radius.min(0.25 * sep)
            })
            .collect();
        Self { all, sinks, capture }
    }

    fn attractors(&self) -> Vec<Equilibrium> {
        self.sinks.iter().map(|&k| self.all[k].clone()).collect()
    }

    fn captured(&self, psi: f64, gamma: f64) -> Option<i32> {
        self.sinks.iter().zip(&self.capture).position(|(&k, &cap)| {
            let e = &self.all[k];
            (e.psi - psi).hypot(e.gamma - gamma) < cap
        }).map(|p| p as i32)
    }

    /// Nearest equilibrium within `radius`, if it is a sink.
    fn final_label(&self, psi: f64, gamma: f64, radius: f64) -> i32 {
        let nearest = self
            .all
            .iter()
            .enumerate()
            .map(|(k, e)| (k, (e.psi - psi).hypot(e.gamma - gamma)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((k, d)) if d <= radius => self.sinks.iter().position(|&q| q == k).map_or(UNCLASSIFIED, |p| p as i32),
            _ => UNCLASSIFIED,
        }
    }
}

fn label_seed(seed: ReducedState, hyper: &Hyper, opts: &BasinOptions, steps: usize, form: FlowForm, targets: &Targets) -> i32 {
    let rhs = |s: &ReducedState| {
        let (a, b) = rhs_reduced_form(s.psi, s.gamma, hyper, form);
        ReducedState::new(a, b)
    };
    let mut s = seed;
    for _ in 0..steps {
        if let Some(l) = targets.captured(s.psi, s.gamma) {
            return l;
        }
        s = integrate::step(&s, opts.dt, Method::Rk4, &rhs);
        if !(s.psi.abs() <= DIVERGENCE_GUARD && s.gamma.abs() <= DIVERGENCE_GUARD) {
            return UNCLASSIFIED;
        }
    }
    targets.final_label(s.psi, s.gamma, opts.radius)
}

/// Label every grid seed by the sink its reduced trajectory reaches.
pub fn basin_map(hyper: &Hyper, grid: &GridSpec, opts: &BasinOptions, form: FlowForm) -> Result<BasinMap> {
    grid.validate()?;
    opts.validate()?;
    let all = find_equilibria_reduced_form(hyper, default_psi_window(hyper), DEFAULT_RESOLUTION, form)?;
    let targets = Targets::new(all, opts.radius);
    let steps = opts.steps(hyper.rho);
    let flat = crate::par_map(&grid.nodes(), |&(psi, gamma)| {
        label_seed(ReducedState::new(psi, gamma), hyper, opts, steps, form, &targets)
    });
    Ok(BasinMap {
        grid: *grid,
        labels: flat.chunks(grid.ny).map(<[i32]>::to_vec).collect(),
        attractors: targets.attractors(),
    })
}

/// Label of a single seed, with the same rules as [`basin_map`].
pub fn basin_of(hyper: &Hyper, seed: (f64, f64), opts: &BasinOptions, form: FlowForm) -> Result<(i32, Vec<Equilibrium>)> {
    opts.validate()?;
    let all = find_equilibria_reduced_form(hyper, default_psi_window(hyper), DEFAULT_RESOLUTION, form)?;
    let targets = Targets::new(all, opts.radius);
    let label = label_seed(ReducedState::new(seed.0, seed.1), hyper, opts, opts.steps(hyper.rho), form, &targets);
    Ok((label, targets.attractors()))
}

/// One-dimensional basin map of the SimSiam ψ dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSiamBasin {
    pub seeds: Vec<f64>,
    pub labels: Vec<i32>,
    pub attractors: Vec<Equilibrium>,
}

impl SimSiamBasin {
    pub fn attractor(&self, label: i32) -> Option<&Equilibrium> {
        usize::try_from(label).ok().and_then(|k| self.attractors.get(k))
    }
}

pub fn simsiam_basin(hyper: &Hyper, psi_range: (f64, f64), n: usize, opts: &BasinOptions) -> Result<SimSiamBasin> {
    hyper.validate()?;
    opts.validate()?;
    let (a, b) = psi_range;
    if !(a.is_finite() && b.is_finite() && a <= b) || n == 0 || (n == 1) != (a == b) {
        return Err(Error::config(format!("invalid seed range [{a}, {b}] with n = {n}")));
    }
    let all = eigen::simsiam_equilibria(hyper);
    let targets = Targets::new(all, opts.radius);
    let steps = opts.steps(hyper.rho);
    let seeds: Vec<f64> = (0..n).map(|i| if n == 1 { a } else { lerp(psi_range, i, n) }).collect();
    let labels = crate::par_map(&seeds, |&p0| {
        let rhs = |p: &f64| rhs_simsiam(*p, hyper);
        let mut p = p0;
        for _ in 0..steps {
            if let Some(l) = targets.captured(p, 0.0) {
                return l;
            }
            p = integrate::step(&p, opts.dt, Method::Rk4, &rhs);
            if !(p.abs() <= DIVERGENCE_GUARD) {
                return UNCLASSIFIED;
            }
        }
        targets.final_label(p, 0.0, opts.radius)
    });
    Ok(SimSiamBasin {
        seeds,
        labels,
        attractors: targets.attractors(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{find_equilibria_reduced, rhs_reduced};

    fn hyper(s2: f64, rho: f64) -> Hyper {
        Hyper::new(s2, rho).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new((0.0, 0.0), (0.0, 1.0), 3, 3).is_err());
        assert!(GridSpec::new((0.0, 1.0), (0.0, 1.0), 1, 3).is_err());
        assert!(GridSpec::new((0.0, 1.0), (0.0, 1.0), 2, 2).is_ok());
    }

    #[test]
    fn field_vanishes_at_equilibria() {
        let h = hyper(1.5, 0.03);
        for e in find_equilibria_reduced(&h, default_psi_window(&h), DEFAULT_RESOLUTION).unwrap() {
            let g = GridSpec::new((e.psi, e.psi + 1.0), (e.gamma, e.gamma + 1.0), 2, 2).unwrap();
            let f = vector_field(&h, &g, FlowForm::Analysis).unwrap();
            assert!(f[0].dpsi.hypot(f[0].dgamma) <= 1e-10);
        }
    }

    #[test]
    fn field_finite_and_refinement_consistent() {
        let h = hyper(1.5, 0.03);
        let coarse = GridSpec::default();
        let fine = GridSpec { nx: 2 * coarse.nx - 1, ny: 2 * coarse.ny - 1, ..coarse };
        let a = vector_field(&h, &coarse, FlowForm::Analysis).unwrap();
        let b = vector_field(&h, &fine, FlowForm::Analysis).unwrap();
        assert!(a.iter().all(|s| s.dpsi.is_finite() && s.dgamma.is_finite()));
        for i in 0..coarse.nx {
            for j in 0..coarse.ny {
                let p = a[i * coarse.ny + j];
                let q = b[2 * i * fine.ny + 2 * j];
                assert!((p.psi - q.psi).abs() < 1e-15 && (p.gamma - q.gamma).abs() < 1e-15);
                let (dp, dg) = rhs_reduced(q.psi, q.gamma, &h);
                assert_eq!((q.dpsi, q.dgamma), (dp, dg));
            }
        }
    }

    #[test]
    fn nullcline_points_satisfy_their_equations() {
        let h = hyper(1.5, 0.03);
        let grid = GridSpec { nx: 301, ny: 301, ..GridSpec::default() };
        for form in [FlowForm::Analysis, FlowForm::Gradient] {
            let n = nullclines(&h, &grid, form).unwrap();
            assert!(n.psi_dot.len() >= 2 && !n.gamma_dot.is_empty());
            for p in n.psi_dot.iter().flatten() {
                assert!(rhs_reduced_form(p[0], p[1], &h, form).0.abs() <= 1e-9, "{p:?}");
            }
            for p in n.gamma_dot.iter().flatten() {
                assert!(rhs_reduced_form(p[0], p[1], &h, form).1.abs() <= 1e-9, "{p:?}");
            }
        }
    }

    #[test]
    fn gamma_nullcline_passes_through_origin_and_fold() {
        let h = hyper(1.5, 0.03);
        let grid = GridSpec::new((0.0, 0.4), (-0.2, 0.6), 5, 5).unwrap();
        let n = nullclines(&h, &grid, FlowForm::Analysis).unwrap();
        let pts: Vec<_> = n.gamma_dot.iter().flatten().collect();
        assert!(pts.iter().any(|p| p[0] == 0.0 && p[1] == 0.0));
        assert!(pts.iter().any(|p| (p[0] - 0.4).abs() < 1e-15 && p[1].abs() < 1e-15));
    }

    #[test]
    fn nullclines_need_positive_rho() {
        assert!(matches!(
            nullclines(&hyper(1.5, 0.0), &GridSpec::default(), FlowForm::Analysis),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn quadratic_roots_are_stable() {
        let (a, b) = quadratic_roots(1.0, 1e8, 1.0).unwrap();
        assert!((a - 1e-8).abs() < 1e-20);
        assert!((b - 1e8).abs() < 1e-4);
        assert!(quadratic_roots(1.0, 1.0, 1.0).is_none());
    }

    #[test]
    fn horizon_rule() {
        assert_eq!(default_horizon(0.08), 2000.0);
        assert_eq!(default_horizon(1e-3), 10_000.0);
        assert_eq!(default_horizon(4e-3), 2500.0);
    }

    #[test]
    fn simsiam_basin_medium() {
        let h = hyper(1.5, 0.08);
        let b = simsiam_basin(&h, (-0.3, 1.0), 131, &BasinOptions::default()).unwrap();
        let source = (1.0 - 0.2f64.sqrt()) / 5.0;
        for (&p, &l) in b.seeds.iter().zip(&b.labels) {
            let e = b.attractor(l).unwrap();
            if p < source - 1e-3 {
                assert!(e.is_origin(), "seed {p}");
            } else if p > source + 1e-3 {
                assert!((e.psi - 0.2894).abs() < 1e-4, "seed {p}");
            }
        }
    }

    #[test]
    fn simsiam_seeds_at_equilibria_stay() {
        let h = hyper(1.5, 0.08);
        for e in eigen::simsiam_equilibria(&h).into_iter().filter(|e| e.is_sink()) {
            let b = simsiam_basin(&h, (e.psi, e.psi), 1, &BasinOptions::default()).unwrap();
            assert_eq!(b.attractor(b.labels[0]).unwrap().psi, e.psi);
        }
    }

    #[test]
    fn strong_regime_collapses_everywhere() {
        let h = hyper(1.5, 0.12);
        let grid = GridSpec { nx: 15, ny: 17, ..GridSpec::default() };
        let map = basin_map(&h, &grid, &BasinOptions::default(), FlowForm::Analysis).unwrap();
        assert_eq!(map.attractors.len(), 1);
        assert!(map.labels.iter().flatten().all(|&l| l == 0));
    }
}
