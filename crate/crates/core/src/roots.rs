//! Scalar root bracketing with bisection refinement.

/// Sub-intervals of `[lo, hi]` (split into `n` equal cells) on which `f` changes sign.
/// A grid node where `f` is exactly zero is returned as a degenerate bracket `(x, x)`.
pub fn bracket_sign_changes<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let h = (hi - lo) / n as f64;
    let node = |i: usize| if i == n { hi } else { lo + h * i as f64 };
    let mut out = Vec::new();
    let mut x0 = node(0);
    let mut f0 = f(x0);
    if f0 == 0.0 {
        out.push((x0, x0));
    }
    for i in 1..=n {
        let x1 = node(i);
        let f1 = f(x1);
        if f1 == 0.0 {
            out.push((x1, x1));
        } else if f0 != 0.0 && f0.is_finite() && f1.is_finite() && (f0 < 0.0) != (f1 < 0.0) {
            out.push((x0, x1));
        }
        x0 = x1;
        f0 = f1;
    }
    out
}

/// Bisection on a sign-change bracket until the width is below `xtol` or the
/// midpoint stops moving.
pub fn bisect<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    if a == b {
        return a;
    }
    let mut fa = f(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a.min(b) || mid >= a.max(b) || (b - a).abs() <= xtol {
            return mid;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

const REFINE_CELLS: usize = 64;
const REFINE_DEPTH: usize = 4;

/// Like [`bracket_sign_changes`], but rescans a finer grid around every node where
/// |f| has a strict local minimum without a sign change, so close root pairs that
/// share one coarse cell are still separated.
pub fn bracket_refined<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    refine_into(f, lo, hi, n, REFINE_DEPTH, &mut out);
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn refine_into<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, n: usize, depth: usize, out: &mut Vec<(f64, f64)>) {
    out.extend(bracket_sign_changes(f, lo, hi, n));
    if depth == 0 {
        return;
    }
    let h = (hi - lo) / n as f64;
    let node = |i: usize| if i == n { hi } else { lo + h * i as f64 };
    let vals: Vec<f64> = (0..=n).map(|i| f(node(i))).collect();
    for i in 1..n {
        let (a, b, c) = (vals[i - 1], vals[i], vals[i + 1]);
        let same_sign = a != 0.0 && b != 0.0 && c != 0.0 && (a < 0.0) == (b < 0.0) && (b < 0.0) == (c < 0.0);
        if same_sign && b.abs() < a.abs() && b.abs() < c.abs() {
            let (l, r) = (node(i - 1), node(i + 1));
            let mut inner = Vec::new();
            refine_into(f, l, r, REFINE_CELLS, depth - 1, &mut inner);
            // Nodes shared with the coarse grid carry nonzero f here, so nothing is counted twice.
            out.extend(inner);
        }
    }
}

/// All sign-change roots of `f` in `[lo, hi]`, refined by bisection.
pub fn find_roots<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, n: usize, xtol: f64) -> Vec<f64> {
    bracket_refined(f, lo, hi, n)
        .into_iter()
        .map(|(a, b)| bisect(f, a, b, xtol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_roots() {
        let f = |x: f64| (x - 0.3) * (x + 0.7) * (x - 1.1);
        let r = find_roots(&f, -2.0, 2.0, 1000, 1e-14);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-0.7, 0.3, 1.1]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_zero_on_grid_counted_once() {
        let f = |x: f64| x;
        let r = find_roots(&f, -1.0, 1.0, 10, 1e-14);
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn close_pair_inside_one_cell_is_found() {
        let f = |x: f64| (x - 0.3001) * (x - 0.30015) * (x + 0.5);
        let r = find_roots(&f, -1.0, 1.0, 100, 1e-15);
        assert_eq!(r.len(), 3, "{r:?}");
        assert!((r[1] - 0.3001).abs() < 1e-12 && (r[2] - 0.30015).abs() < 1e-12);
    }

    #[test]
    fn double_root_without_sign_change_is_not_bracketed() {
        let f = |x: f64| (x - 0.25).powi(2) + 1e-3;
        assert!(find_roots(&f, -1.0, 1.0, 100, 1e-14).is_empty());
    }
}
