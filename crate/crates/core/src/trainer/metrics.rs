//! Collapse and alignment metrics.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::flows::symmetric_part;

/// ‖M‖_F² / ‖M‖₂², with 0 for the zero matrix.
pub fn stable_rank(m: &DMatrix<f64>) -> f64 {
    let fro2 = m.norm_squared();
    if fro2 == 0.0 {
        return 0.0;
    }
    let top = m.singular_values().max();
    fro2 / (top * top)
}

/// Largest eigenvalue of W_f W_fᵀ.
pub fn top_eigenvalue_phi(wf: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(wf * wf.transpose()).eigenvalues.max()
}

/// Eigenvalues of Φ above this count as active (non-collapsed) directions.
pub const ACTIVE_EIGENVALUE: f64 = 1e-3;

/// Orthonormal eigenvectors of `sym(a)` for the `k` eigenvalues of largest magnitude.
fn top_eigvecs(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetric_part(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    DMatrix::from_columns(&order[..k].iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>())
}

/// Largest principal angle (radians) between the column spans of two orthonormal bases.
pub fn max_principal_angle(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let smallest = (u.transpose() * v).singular_values().min();
    smallest.clamp(-1.0, 1.0).acos()
}

/// Largest principal angle, in degrees, among the active eigenspace of Φ and the
/// matching top eigenspaces of sym(W_h) and sym(W_g). `None` when Φ has no active
/// direction.
pub fn alignment_angle_deg(wf: &DMatrix<f64>, wh: &DMatrix<f64>, wg: Option<&DMatrix<f64>>) -> Option<f64> {
    let phi = wf * wf.transpose();
    let k = SymmetricEigen::new(phi.clone()).eigenvalues.iter().filter(|&&l| l > ACTIVE_EIGENVALUE).count();
    if k == 0 {
        return None;
    }
    let mut bases = vec![top_eigvecs(&phi, k), top_eigvecs(wh, k)];
    if let Some(g) = wg {
        bases.push(top_eigvecs(g, k));
    }
    let mut worst: f64 = 0.0;
    for i in 0..bases.len() {
        for j in i + 1..bases.len() {
            worst = worst.max(max_principal_angle(&bases[i], &bases[j]));
        }
    }
    Some(worst.to_degrees())
}
