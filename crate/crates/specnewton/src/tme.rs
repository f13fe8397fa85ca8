//! Tyler's M-estimator: objective, fixed-point solver, and per-subgroup
//! error values.
//!
//! For a centered subgroup with samples `x_i ∈ ℝ^p`, the estimator is the
//! trace-normalized fixed point of
//! `R = (p/n) Σ x_i x_iᵀ / (x_iᵀ R⁻¹ x_i)`, equivalently a minimizer of
//! `f(R) = (p/n) Σ log(x_iᵀ R⁻¹ x_i) + log det R`, which is invariant under
//! positive rescaling of `R`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matfunc::symmetrize;

/// A centered subgroup of samples (rows) in ℝ^p.
#[derive(Debug, Clone)]
pub struct Subgroup {
    pub name: String,
    /// `n_j × p`, rows are samples.
    pub data: DMatrix<f64>,
}

impl Subgroup {
    pub fn new(name: impl Into<String>, data: DMatrix<f64>) -> Result<Self> {
        let g = Subgroup { name: name.into(), data };
        g.validate()?;
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "subgroup `{}` contains non-finite samples",
                self.name
            )));
        }
        if self.n() <= self.p() {
            return Err(Error::Existence(format!(
                "subgroup `{}` has {} samples in dimension {}; Tyler's estimator needs n > p",
                self.name,
                self.n(),
                self.p()
            )));
        }
        for (i, row) in self.data.row_iter().enumerate() {
            if row.norm() <= 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "subgroup `{}` has a (near-)zero sample at row {i}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Result of the fixed-point solve; `r` is SPD with `tr(r) = p`.
#[derive(Debug, Clone)]
pub struct TMEResult {
    pub r: DMatrix<f64>,
    pub iterations: usize,
    pub fixed_point_residual: f64,
    pub objective_value: f64,
}

fn cholesky_spd(r: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(symmetrize(r))
        .ok_or_else(|| Error::Domain("matrix is not positive definite".into()))
}

/// Quadratic forms `q_i = x_iᵀ R⁻¹ x_i` for all samples at once.
fn quad_forms(chol: &Cholesky<f64, nalgebra::Dyn>, g: &Subgroup) -> DVector<f64> {
    // Solve R Z = Dᵀ; then q_i = D_i · Z_{:,i}.
    let z = chol.solve(&g.data.transpose());
    DVector::from_fn(g.n(), |i, _| g.data.row(i).transpose().dot(&z.column(i).into_owned()))
}

/// `f_j(R) = (p/n_j) Σ log(x_iᵀ R⁻¹ x_i) + log det R`.
pub fn tme_objective(r: &DMatrix<f64>, g: &Subgroup) -> Result<f64> {
    g.validate()?;
    if r.nrows() != g.p() || r.ncols() != g.p() {
        return Err(Error::Dimension(format!(
            "scatter matrix is {}x{}, data dimension is {}",
            r.nrows(),
            r.ncols(),
            g.p()
        )));
    }
    let chol = cholesky_spd(r)?;
    let q = quad_forms(&chol, g);
    if q.iter().any(|&v| v <= 0.0) {
        return Err(Error::Numerical("nonpositive quadratic form in TME objective".into()));
    }
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let p = g.p() as f64;
    let n = g.n() as f64;
    Ok(p / n * q.iter().map(|v| v.ln()).sum::<f64>() + logdet)
}

/// One sweep of the fixed-point map, before trace normalization:
/// `(p/n) Σ x_i x_iᵀ / q_i = (p/n) Dᵀ diag(1/q) D`.
fn fixed_point_map(r: &DMatrix<f64>, g: &Subgroup) -> Result<DMatrix<f64>> {
    let chol = cholesky_spd(r)?;
    let q = quad_forms(&chol, g);
    let p = g.p() as f64;
    let n = g.n() as f64;
    let mut scaled = g.data.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row /= q[i];
    }
    Ok(symmetrize(&(g.data.transpose() * scaled)) * (p / n))
}

fn trace_normalize(r: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    r * (p as f64 / r.trace())
}

/// Solve for Tyler's M-estimator by trace-normalized fixed-point iteration.
pub fn tme_fixed_point(g: &Subgroup, tol: f64, max_iter: usize) -> Result<TMEResult> {
    g.validate()?;
    let p = g.p();
    if g.data.rank(1e-10) < p {
        return Err(Error::Existence(format!(
            "subgroup `{}` data is rank deficient; the estimator does not exist",
            g.name
        )));
    }
    let mut r = DMatrix::identity(p, p);
    for it in 1..=max_iter {
        let update = trace_normalize(&fixed_point_map(&r, g)?, p);
        let change = (&update - &r).norm();
        let done = change <= tol * r.norm();
        r = update;
        if done {
            let residual = (trace_normalize(&fixed_point_map(&r, g)?, p) - &r).norm();
            let objective_value = tme_objective(&r, g)?;
            return Ok(TMEResult { r, iterations: it, fixed_point_residual: residual, objective_value });
        }
    }
    let residual = (trace_normalize(&fixed_point_map(&r, g)?, p) - &r).norm();
    Err(Error::FixedPointNonConvergence { iterations: max_iter, residual })
}

/// TME error `ℰ_j(R) = f_j(R) − f_j*`.
pub fn tme_error(r: &DMatrix<f64>, g: &Subgroup, f_star: f64) -> Result<f64> {
    Ok(tme_objective(r, g)? - f_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    /// One sample per axis, scaled so x_i' x_i = p: R = I is the exact
    /// fixed point, but n > p needs a second copy of each point (scaling a
    /// sample does not move the estimator).
    fn axis_subgroup(p: usize) -> Subgroup {
        let s = (p as f64).sqrt();
        let mut data = DMatrix::zeros(2 * p, p);
        for i in 0..p {
            data[(i, i)] = s;
            data[(p + i, i)] = 2.0 * s;
        }
        Subgroup::new("axes", data).unwrap()
    }

    fn sphere_samples(n: usize, p: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let mut data = DMatrix::zeros(n, p);
        for i in 0..n {
            let mut v = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
            v /= v.norm();
            data.set_row(i, &v.transpose());
        }
        data
    }

    fn random_spd(p: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(p, p) * 0.3
    }

    #[test]
    fn objective_axis_data_at_identity() {
        let p = 4;
        let g = axis_subgroup(p);
        // Half the samples have q = p, half q = 4p: mean log q = log p + log 4 / 2.
        let f = tme_objective(&DMatrix::identity(p, p), &g).unwrap();
        let expect = p as f64 * ((p as f64).ln() + 0.5 * 4.0f64.ln());
        assert_relative_eq!(f, expect, epsilon = 1e-10);
    }

    #[test]
    fn objective_scale_invariant() {
        let mut rng = StdRng::seed_from_u64(1);
        let p = 4;
        let g = Subgroup::new("rnd", sphere_samples(30, p, &mut rng)).unwrap();
        let r = random_spd(p, &mut rng);
        let f = tme_objective(&r, &g).unwrap();
        assert_relative_eq!(tme_objective(&(3.0 * &r), &g).unwrap(), f, epsilon = 1e-10);
        assert!(f.is_finite());
    }

    #[test]
    fn objective_rejects_indefinite() {
        let g = axis_subgroup(3);
        let mut r = DMatrix::identity(3, 3);
        r[(0, 0)] = -1.0;
        assert!(matches!(tme_objective(&r, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn axis_data_fixed_point_is_identity() {
        let p = 5;
        let g = axis_subgroup(p);
        let res = tme_fixed_point(&g, 1e-12, 500).unwrap();
        assert!((&res.r - DMatrix::identity(p, p)).norm() <= 1e-10);
        assert!((res.r.trace() - p as f64).abs() <= 1e-10);
    }

    #[test]
    fn solver_self_consistency_on_random_data() {
        let mut rng = StdRng::seed_from_u64(2);
        let p = 6;
        // anisotropic samples: x = S xi with xi on the sphere
        let s = random_spd(p, &mut rng);
        let xi = sphere_samples(80, p, &mut rng);
        let data = xi * &s;
        let g = Subgroup::new("aniso", data).unwrap();
        let res = tme_fixed_point(&g, 1e-10, 2000).unwrap();
        assert!(res.fixed_point_residual <= 1e-8, "residual {}", res.fixed_point_residual);
        assert!((res.r.trace() - p as f64).abs() <= 1e-10);
        assert!(res.fixed_point_residual <= 10.0 * 1e-10 * res.r.norm());
        // own-TME error is ~0 and errors are scale invariant
        let e_self = tme_error(&res.r, &g, res.objective_value).unwrap();
        assert!(e_self.abs() <= 1e-6);
        let other = random_spd(p, &mut rng);
        let e1 = tme_error(&other, &g, res.objective_value).unwrap();
        let e2 = tme_error(&(0.2 * &other), &g, res.objective_value).unwrap();
        assert_relative_eq!(e1, e2, epsilon = 1e-10);
        assert!(e1 >= -1e-6);
    }

    #[test]
    fn monte_carlo_identity_scatter() {
        let mut rng = StdRng::seed_from_u64(3);
        let p = 5;
        let g = Subgroup::new("sphere", sphere_samples(5000, p, &mut rng)).unwrap();
        let res = tme_fixed_point(&g, 1e-10, 2000).unwrap();
        let dev = (&res.r - DMatrix::identity(p, p)).norm();
        assert!(dev <= 0.15, "TME deviates from identity by {dev}");
    }

    #[test]
    fn objective_nonincreasing_along_sweeps() {
        let mut rng = StdRng::seed_from_u64(4);
        let p = 4;
        let s = random_spd(p, &mut rng);
        let g = Subgroup::new("aniso", sphere_samples(50, p, &mut rng) * &s).unwrap();
        let mut r = DMatrix::identity(p, p);
        let mut last = tme_objective(&r, &g).unwrap();
        for _ in 0..50 {
            r = trace_normalize(&fixed_point_map(&r, &g).unwrap(), p);
            let f = tme_objective(&r, &g).unwrap();
            assert!(f <= last + 1e-12, "objective rose: {last} -> {f}");
            last = f;
        }
    }

    #[test]
    fn anisotropic_group_penalizes_identity() {
        let mut rng = StdRng::seed_from_u64(5);
        let p = 4;
        let mut s = DMatrix::identity(p, p);
        s[(0, 0)] = 30.0; // strong anisotropy
        let g = Subgroup::new("stretched", sphere_samples(60, p, &mut rng) * &s).unwrap();
        let res = tme_fixed_point(&g, 1e-10, 2000).unwrap();
        let e = tme_error(&DMatrix::identity(p, p), &g, res.objective_value).unwrap();
        assert!(e > 0.1, "identity should be a poor scatter here, error {e}");
    }

    #[test]
    fn existence_errors() {
        // rank-deficient: all samples on one axis direction in p = 2
        let mut data = DMatrix::zeros(5, 2);
        for i in 0..5 {
            data[(i, 0)] = 1.0 + i as f64;
        }
        let g = Subgroup::new("flat", data).unwrap();
        assert!(matches!(tme_fixed_point(&g, 1e-10, 100), Err(Error::Existence(_))));

        // n <= p rejected at construction
        assert!(matches!(
            Subgroup::new("small", DMatrix::<f64>::identity(3, 3)),
            Err(Error::Existence(_))
        ));

        // zero row rejected
        let mut data = DMatrix::from_element(4, 2, 1.0);
        data.set_row(2, &nalgebra::RowDVector::zeros(2));
        assert!(matches!(Subgroup::new("zero", data), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mut rng = StdRng::seed_from_u64(6);
        let p = 4;
        let g = Subgroup::new("rnd", sphere_samples(40, p, &mut rng)).unwrap();
        match tme_fixed_point(&g, 1e-14, 2) {
            Err(Error::FixedPointNonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual.is_finite());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
