//! Certified global solver for the cubic-regularized quadratic subproblem
//! `min_z bᵀz + ½zᵀAz + (M/6)‖z‖³`.
//!
//! After eigendecomposing `A`, the stationarity condition
//! `b + (A + (M/2)rI)z = 0` with `r = ‖z‖` collapses to a scalar secular
//! equation in `r`, solved by bracketed Newton with bisection fallback. When
//! `b` is orthogonal to the minimal eigenspace and the interior solve falls
//! short of the required radius (the hard case), a null-space component tops
//! the step up to `r = −2λ_min/M`. Every solution carries a residual for the
//! necessary-and-sufficient global-optimality certificate
//! `A + (M/2)‖z‖I ⪰ 0`.

use nalgebra::{DMatrix, DVector};

use crate::basis::CubicSubproblem;
use crate::error::{Error, Result};

const SECULAR_MAX_ITER: usize = 200;

/// Which branch of the optimality analysis produced the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CubicCase {
    /// `b = 0` with `A ⪰ 0`: the origin is already globally optimal.
    Zero,
    /// Interior secular root.
    Easy,
    /// Null-space component added at `r = −2λ_min/M`.
    Hard,
}

/// Certified global minimizer of a [`CubicSubproblem`].
#[derive(Debug, Clone)]
pub struct CubicSolution {
    pub z: DVector<f64>,
    /// Step norm `‖z‖`.
    pub r: f64,
    pub case: CubicCase,
    pub objective_value: f64,
    pub certificate_residual: f64,
}

/// `bᵀz + ½zᵀAz + (M/6)‖z‖³`.
pub fn cubic_objective(p: &CubicSubproblem, z: &DVector<f64>) -> f64 {
    let r = z.norm();
    p.b.dot(z) + 0.5 * (z.transpose() * &p.a * z)[(0, 0)] + p.m / 6.0 * r * r * r
}

/// Eigendecomposition of `A`, reusable across solves with different `M`
/// (the driver retries the same `(b, A)` under growing regularization).
#[derive(Debug, Clone)]
pub struct FactoredA {
    /// Eigenvalues, ascending.
    pub sigma: DVector<f64>,
    /// Eigenvectors matching `sigma`.
    pub u: DMatrix<f64>,
}

impl FactoredA {
    pub fn lambda_min(&self) -> f64 {
        self.sigma[0]
    }
}

/// Eigendecompose a symmetric `A` for repeated subproblem solves.
pub fn factor_a(a: &DMatrix<f64>) -> Result<FactoredA> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("cubic subproblem matrix contains non-finite data".into()));
    }
    let eig = crate::matfunc::spectral_decompose(a)?;
    let d = eig.lambda.len();
    let sigma = DVector::from_fn(d, |i, _| eig.lambda[d - 1 - i]);
    let mut u = DMatrix::zeros(d, d);
    for i in 0..d {
        u.set_column(i, &eig.q.column(d - 1 - i));
    }
    Ok(FactoredA { sigma, u })
}

struct SecularData<'a> {
    /// Eigenvalues of `A`, ascending.
    sigma: &'a DVector<f64>,
    /// `Uᵀ b`.
    bt: DVector<f64>,
    m: f64,
}

impl SecularData<'_> {
    /// `z̃(r)_i = −b̃_i / (σ_i + (M/2) r)`; `mask[i] = false` drops
    /// component `i` (used on the minimal cluster in the hard case).
    fn z_tilde(&self, r: f64, mask: &[bool]) -> DVector<f64> {
        DVector::from_fn(self.bt.len(), |i, _| {
            if mask[i] {
                -self.bt[i] / (self.sigma[i] + 0.5 * self.m * r)
            } else {
                0.0
            }
        })
    }

    /// `φ(r) = ‖z̃(r)‖ − r` and its derivative; strictly decreasing on the
    /// feasible ray, so the root is unique.
    fn phi(&self, r: f64, mask: &[bool]) -> (f64, f64) {
        let mut norm_sq = 0.0;
        let mut dsum = 0.0;
        for i in 0..self.bt.len() {
            if !mask[i] {
                continue;
            }
            let denom = self.sigma[i] + 0.5 * self.m * r;
            let zi = -self.bt[i] / denom;
            norm_sq += zi * zi;
            dsum += zi * zi / denom;
        }
        let norm = norm_sq.sqrt();
        let phi = norm - r;
        let dphi = if norm > 0.0 { -0.5 * self.m * dsum / norm - 1.0 } else { -1.0 };
        (phi, dphi)
    }
}

/// Bracketed Newton with bisection fallback on the monotone secular
/// function. `r_open` is the open lower endpoint of the feasible ray.
fn solve_secular(data: &SecularData, r_open: f64, mask: &[bool]) -> Result<f64> {
    let tiny = 1e-14 * (1.0 + r_open);
    let mut lo = r_open + tiny;
    // Expand until the secular function is negative at the upper end.
    let sigma_min = data.sigma[0];
    let mut hi = (data.bt.norm() / (1e-12f64).max(sigma_min + 1.0)).abs().max(lo * 2.0).max(1e-6);
    let mut expand = 0;
    while data.phi(hi, mask).0 > 0.0 {
        hi *= 2.0;
        expand += 1;
        if expand > SECULAR_MAX_ITER {
            return Err(Error::SecularNonConvergence { iterations: expand, lo, hi });
        }
    }
    if data.phi(lo, mask).0 < 0.0 {
        // The root sits against the open endpoint; callers treat this via
        // the hard-case analysis before ever reaching here, but the
        // degenerate numerical situation still deserves a defined answer.
        return Ok(lo);
    }

    let bnorm = data.bt.norm();
    let mut r = 0.5 * (lo + hi);
    for _ in 0..SECULAR_MAX_ITER {
        let (phi, dphi) = data.phi(r, mask);
        // The stationarity residual left by stopping here is about
        // (M/2)·|φ|·r, so the φ tolerance targets the certificate
        // directly; near the hard case the secular slope is huge and a
        // step-size test alone would stop with |φ| far too large.
        let tol_phi = 1e-10 * (1.0 + bnorm) / (1e-12f64).max(0.5 * data.m * r);
        if phi.abs() <= tol_phi {
            return Ok(r);
        }
        if phi > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        if hi - lo <= f64::EPSILON * (1.0 + r) {
            // Bracket at floating-point resolution: no further progress is
            // representable.
            return Ok(r);
        }
        let newton = r - phi / dphi;
        r = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::SecularNonConvergence { iterations: SECULAR_MAX_ITER, lo, hi })
}

/// Solve the subproblem to global optimality.
pub fn solve_cubic(p: &CubicSubproblem) -> Result<CubicSolution> {
    let d = p.b.len();
    if d == 0 || p.a.nrows() != d || p.a.ncols() != d {
        return Err(Error::Dimension(format!(
            "b has length {d}, A is {}x{}",
            p.a.nrows(),
            p.a.ncols()
        )));
    }
    let fa = factor_a(&p.a)?;
    solve_cubic_factored(&fa, &p.b, p.m)
}

/// Solve with a precomputed eigendecomposition of `A`; this is the entry
/// point the Newton driver uses while retrying the same `(b, A)` under
/// growing `M`.
pub fn solve_cubic_factored(fa: &FactoredA, b: &DVector<f64>, m: f64) -> Result<CubicSolution> {
    if b.iter().any(|v| !v.is_finite()) || !m.is_finite() {
        return Err(Error::InvalidInput("cubic subproblem contains non-finite data".into()));
    }
    if m <= 0.0 {
        return Err(Error::Parameter(format!("M must be positive, got {m}")));
    }
    let d = b.len();
    if fa.sigma.len() != d {
        return Err(Error::Dimension(format!(
            "b has length {d}, factored A has dimension {}",
            fa.sigma.len()
        )));
    }

    let bt = fa.u.transpose() * b;
    let data = SecularData { sigma: &fa.sigma, bt, m };
    let sigma_min = fa.sigma[0];

    let scale = b.norm().max(fa.sigma.amax()).max(1.0);
    if b.norm() <= 0.0 && sigma_min >= -1e-14 * scale {
        return Ok(finish(fa, &data, DVector::zeros(d), CubicCase::Zero));
    }

    let all = vec![true; d];
    if sigma_min >= 0.0 {
        // Convex-ish branch: unique root on (0, ∞) (or z = 0 if b = 0,
        // handled above).
        let r = solve_secular(&data, 0.0, &all)?;
        let z = &fa.u * data.z_tilde(r, &all);
        return Ok(finish(fa, &data, z, CubicCase::Easy));
    }

    let r_lo = -2.0 * sigma_min / m;
    // Minimal cluster and the size of b's component on it.
    let cluster_tol = 1e-12 * 1.0_f64.max(sigma_min.abs());
    let in_cluster: Vec<bool> = (0..d).map(|i| fa.sigma[i] - sigma_min <= cluster_tol).collect();
    let b_cluster: f64 = (0..d)
        .filter(|&i| in_cluster[i])
        .map(|i| data.bt[i] * data.bt[i])
        .sum::<f64>()
        .sqrt();

    if b_cluster > 1e-12 * (1.0 + b.norm()) {
        // b sees the minimal eigenspace: the secular function blows up at
        // r_lo, so an interior root exists.
        let r = solve_secular(&data, r_lo, &all)?;
        let z = &fa.u * data.z_tilde(r, &all);
        return Ok(finish(fa, &data, z, CubicCase::Easy));
    }

    // b (numerically) orthogonal to the minimal eigenspace.
    let complement: Vec<bool> = in_cluster.iter().map(|&c| !c).collect();
    let zc = data.z_tilde(r_lo, &complement);
    let rc = zc.norm();
    if rc >= r_lo {
        // Interior root still exists at or beyond r_lo.
        let r = solve_secular(&data, r_lo, &complement)?;
        let z = &fa.u * data.z_tilde(r, &complement);
        return Ok(finish(fa, &data, z, CubicCase::Easy));
    }

    // Hard case: top up with a null-space component of A + (M/2) r_lo I.
    let alpha = (r_lo * r_lo - rc * rc).sqrt();
    let first_min = in_cluster.iter().position(|&c| c).expect("cluster nonempty");
    let mut uvec: DVector<f64> = fa.u.column(first_min).into_owned();
    // Pin the eigenvector sign so the returned minimizer is deterministic:
    // largest-magnitude entry made positive, coefficient kept >= 0.
    let pivot = uvec.iter().cloned().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
    if pivot < 0.0 {
        uvec = -uvec;
    }
    let z = &fa.u * &zc + alpha * uvec;
    Ok(finish(fa, &data, z, CubicCase::Hard))
}

fn finish(fa: &FactoredA, data: &SecularData, z: DVector<f64>, case: CubicCase) -> CubicSolution {
    let r = z.norm();
    // Work in the eigenbasis: A z = U diag(σ) Uᵀ z.
    let zt = fa.u.transpose() * &z;
    let az_t = zt.component_mul(&fa.sigma);
    let objective_value = data.bt.dot(&zt) + 0.5 * az_t.dot(&zt) + data.m / 6.0 * r * r * r;
    let stationarity = (&data.bt + az_t + 0.5 * data.m * r * &zt).norm();
    let psd_violation = 0.0f64.max(-(fa.sigma[0] + 0.5 * data.m * r));
    let certificate_residual = stationarity.max(psd_violation);
    CubicSolution { z, r, case, objective_value, certificate_residual }
}

fn verify_global_with_sigma(p: &CubicSubproblem, z: &DVector<f64>, sigma_min: f64) -> f64 {
    let r = z.norm();
    let stationarity = (&p.b + &p.a * z + 0.5 * p.m * r * z).norm();
    let psd_violation = 0.0f64.max(-(sigma_min + 0.5 * p.m * r));
    stationarity.max(psd_violation)
}

/// Residual of the global-optimality certificate at a candidate `z`:
/// `max(‖b + (A + (M/2)‖z‖I)z‖, max(0, −(λ_min(A) + (M/2)‖z‖)))`.
/// A value ≤ 1e-8 certifies global optimality.
pub fn verify_global(p: &CubicSubproblem, z: &DVector<f64>) -> Result<f64> {
    if z.len() != p.b.len() {
        return Err(Error::Dimension(format!(
            "candidate has length {}, problem dimension is {}",
            z.len(),
            p.b.len()
        )));
    }
    let eig = crate::matfunc::spectral_decompose(&p.a)?;
    let sigma_min = eig.lambda[eig.lambda.len() - 1];
    Ok(verify_global_with_sigma(p, z, sigma_min))
}
