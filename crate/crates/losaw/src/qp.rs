//! Projected gradient solver for least-squares objectives over a
//! probability polytope: minimize `||A x - s||^2` subject to `C x = b`
//! and `x >= 0`.
//!
//! Gradient steps use the fixed step `1/L` with `L = 2 lambda_max(A^T A)`
//! estimated by power iteration. Feasibility is restored after each step
//! by alternating nonnegativity clipping with an exact projection onto
//! the affine constraints until the joint residual is negligible.

use crate::error::{Error, Result};

/// Orthonormalized affine constraints `C x = b` with exact projection.
pub struct AffineProjector {
    /// Orthonormal basis spanning the original constraint rows.
    basis: Vec<Vec<f64>>,
    basis_rhs: Vec<f64>,
    /// Original rows kept for residual reporting.
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl AffineProjector {
    /// Build from constraint rows; redundant rows are dropped by modified
    /// Gram-Schmidt with the right-hand side carried along.
    pub fn new(rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> Self {
        assert_eq!(rows.len(), rhs.len());
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut basis_rhs: Vec<f64> = Vec::new();
        for (row, &b) in rows.iter().zip(&rhs) {
            let mut v = row.clone();
            let mut c = b;
            for (u, &cu) in basis.iter().zip(&basis_rhs) {
                let proj = dot(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
                c -= proj * cu;
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-10 {
                for vi in &mut v {
                    *vi /= norm;
                }
                basis.push(v);
                basis_rhs.push(c / norm);
            }
        }
        Self {
            basis,
            basis_rhs,
            rows,
            rhs,
        }
    }

    /// Exact projection restricted to the coordinates not pinned at zero:
    /// pinned entries are forced to zero and the remaining ones receive
    /// the projection onto the restricted constraint manifold.
    fn project_free(&self, x: &mut [f64], pinned: &[bool]) {
        let free_rows: Vec<Vec<f64>> = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(pinned)
                    .map(|(&r, &p)| if p { 0.0 } else { r })
                    .collect()
            })
            .collect();
        let restricted = AffineProjector::new(free_rows, self.rhs.clone());
        for (xi, &p) in x.iter_mut().zip(pinned) {
            if p {
                *xi = 0.0;
            }
        }
        restricted.project(x);
        for (xi, &p) in x.iter_mut().zip(pinned) {
            if p {
                *xi = 0.0;
            }
        }
    }

    /// Exact Euclidean projection onto `{x : C x = b}`.
    pub fn project(&self, x: &mut [f64]) {
        for (u, &c) in self.basis.iter().zip(&self.basis_rhs) {
            let shift = c - dot(u, x);
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi += shift * ui;
            }
        }
    }

    /// Largest absolute violation of the original constraints.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, &b)| (dot(row, x) - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub constraint_residual: f64,
    pub stationarity: f64,
}

#[derive(Debug, Clone)]
pub struct PgConfig {
    pub max_iterations: usize,
    pub stationarity_tol: f64,
    pub constraint_tol: f64,
    /// Optional Tikhonov pull `mu * ||x - anchor||^2 / 2` added to the
    /// objective. The least-squares part can have a whole face of
    /// minimizers; anchoring makes the optimum unique.
    pub anchor: Option<(f64, Vec<f64>)>,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            stationarity_tol: 1e-6,
            constraint_tol: 1e-8,
            anchor: None,
        }
    }
}

fn apply(a: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(a) {
        *o = dot(row, x);
    }
}

fn apply_transpose(a: &[Vec<f64>], y: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (row, &yi) in a.iter().zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (o, &r) in out.iter_mut().zip(row) {
            *o += yi * r;
        }
    }
}

/// `2 lambda_max(A^T A)` by power iteration from a fixed pseudo-random
/// start, padded upward; falls back to the Frobenius bound when the
/// iteration degenerates.
fn lipschitz(a: &[Vec<f64>], n: usize) -> f64 {
    let frob_sq: f64 = a.iter().map(|row| dot(row, row)).sum();
    if frob_sq <= 0.0 {
        return 2.0;
    }
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let mut av = vec![0.0; a.len()];
    let mut atav = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..300 {
        apply(a, &v, &mut av);
        apply_transpose(a, &av, &mut atav);
        lambda = dot(&atav, &atav).sqrt();
        if lambda <= 1e-12 * frob_sq {
            return 2.0 * frob_sq;
        }
        for (vi, &ai) in v.iter_mut().zip(&atav) {
            *vi = ai / lambda;
        }
    }
    2.0 * (lambda * 1.05).min(frob_sq)
}

/// Minimize `||A x - s||^2` over `{C x = b, x >= 0}` starting from a
/// feasible `x0`.
pub fn solve(
    a: &[Vec<f64>],
    s: &[f64],
    constraints: &AffineProjector,
    x0: Vec<f64>,
    cfg: &PgConfig,
) -> Result<QpSolution> {
    let n = x0.len();
    assert!(a.iter().all(|row| row.len() == n));
    assert_eq!(a.len(), s.len());
    if let Some((_, anchor)) = &cfg.anchor {
        assert_eq!(anchor.len(), n);
    }

    let mu = cfg.anchor.as_ref().map_or(0.0, |(m, _)| *m);
    let step = 1.0 / (lipschitz(a, n) + mu);
    let mut x = x0;
    let mut x_prev = x.clone();
    let mut momentum = 0.0;
    let mut since_restart = 0u64;
    let mut prev_objective = f64::INFINITY;
    let mut residual_vec = vec![0.0; a.len()];
    let mut grad = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut stationarity = f64::INFINITY;
    let mut constraint_residual = f64::INFINITY;

    let gradient_at = |point: &[f64], residual_vec: &mut Vec<f64>, grad: &mut Vec<f64>| -> f64 {
        apply(a, point, residual_vec);
        for (r, &si) in residual_vec.iter_mut().zip(s) {
            *r -= si;
        }
        let objective = dot(residual_vec, residual_vec);
        apply_transpose(a, residual_vec, grad);
        if let Some((m, anchor)) = &cfg.anchor {
            for ((g, &pi), &ai) in grad.iter_mut().zip(point).zip(anchor) {
                *g += 0.5 * m * (pi - ai);
            }
        }
        objective
    };
    // gradient step followed by feasibility restoration: clip then
    // reproject until the remaining negativity is negligible; ending on
    // the affine projection keeps the equality constraints at machine
    // precision
    let feasible_step = |point: &[f64], grad: &[f64]| -> Vec<f64> {
        let mut next: Vec<f64> = point
            .iter()
            .zip(grad)
            .map(|(&pi, &gi)| pi - step * 2.0 * gi)
            .collect();
        for _ in 0..50 {
            for v in &mut next {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            constraints.project(&mut next);
            let neg = next.iter().cloned().fold(0.0, f64::min).abs();
            if neg <= 1e-12 {
                break;
            }
        }
        next
    };

    for it in 0..cfg.max_iterations {
        // accelerated projected gradient: extrapolate, step, project,
        // with momentum restarting whenever the objective stops improving
        for ((yi, &xi), &pi) in y.iter_mut().zip(&x).zip(&x_prev) {
            *yi = xi + momentum * (xi - pi);
        }
        let objective = gradient_at(&y, &mut residual_vec, &mut grad);
        let next = feasible_step(&y, &grad);

        since_restart = if objective > prev_objective {
            0
        } else {
            since_restart + 1
        };
        momentum = since_restart as f64 / (since_restart as f64 + 3.0);
        prev_objective = objective;
        x_prev = std::mem::replace(&mut x, next);

        // convergence is judged on a pure gradient probe from the current
        // iterate so the momentum sequence stays untouched: one more
        // projected-gradient step must leave the objective relatively
        // unchanged
        if it % 64 == 0 {
            let f_here = gradient_at(&x, &mut residual_vec, &mut grad);
            let probe = feasible_step(&x, &grad);
            let f_probe = gradient_at(&probe, &mut residual_vec, &mut grad);
            stationarity = (f_here - f_probe).abs() / f_here.max(1.0);
            constraint_residual = constraints.residual(&x);
            if stationarity <= cfg.stationarity_tol
                && constraint_residual <= cfg.constraint_tol
            {
                return Ok(polish(a, s, constraints, x, it + 1, stationarity));
            }
        }
    }
    Err(Error::QpDidNotConverge {
        constraint_residual,
        stationarity,
        iterations: cfg.max_iterations,
    })
}

/// Turn tiny leftover negatives into exact zeros without disturbing the
/// equality constraints: pin near-zero coordinates and reproject the free
/// ones, repeating while the reprojection uncovers new negatives.
fn polish(
    a: &[Vec<f64>],
    s: &[f64],
    constraints: &AffineProjector,
    mut x: Vec<f64>,
    iterations: usize,
    stationarity: f64,
) -> QpSolution {
    let mut pinned = vec![false; x.len()];
    for _ in 0..20 {
        let mut changed = false;
        for (p, &v) in pinned.iter_mut().zip(&x) {
            if !*p && v < 1e-10 {
                *p = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        constraints.project_free(&mut x, &pinned);
        if x.iter().all(|&v| v >= 0.0) {
            break;
        }
    }
    for v in &mut x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut residual_vec = vec![0.0; a.len()];
    apply(a, &x, &mut residual_vec);
    for (r, &si) in residual_vec.iter_mut().zip(s) {
        *r -= si;
    }
    QpSolution {
        objective: dot(&residual_vec, &residual_vec),
        constraint_residual: constraints.residual(&x),
        x,
        iterations,
        stationarity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projector_drops_redundant_rows() {
        let rows = vec![
            vec![1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0], // sum of the first two
        ];
        let proj = AffineProjector::new(rows, vec![0.6, 0.4, 1.0]);
        assert_eq!(proj.basis.len(), 2);
        let mut x = vec![0.1, 0.2, 0.9];
        proj.project(&mut x);
        assert!(proj.residual(&x) < 1e-12);
    }

    #[test]
    fn simple_qp_reaches_known_optimum() {
        // minimize (x0 - x1)^2 over the 2-simplex: optimum at (0.5, 0.5)
        let a = vec![vec![1.0, -1.0]];
        let s = vec![0.0];
        let constraints = AffineProjector::new(vec![vec![1.0, 1.0]], vec![1.0]);
        let sol = solve(
            &a,
            &s,
            &constraints,
            vec![0.9, 0.1],
            &PgConfig::default(),
        )
        .unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-6);
        assert!(sol.objective < 1e-10);
    }

    #[test]
    fn active_nonnegativity_bound() {
        // minimize (x0 - 2)^2 + (x1 + 1)^2 on the simplex: x1 wants to be
        // negative, the bound pins it at zero
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = vec![2.0, -1.0];
        let constraints = AffineProjector::new(vec![vec![1.0, 1.0]], vec![1.0]);
        let sol = solve(
            &a,
            &s,
            &constraints,
            vec![0.5, 0.5],
            &PgConfig::default(),
        )
        .unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-6, "x = {:?}", sol.x);
        assert!(sol.x[1].abs() < 1e-9);
    }
}
