//! The Fair TME model: unconstrained reformulations of the fairness-
//! penalized Tyler objective, derivative oracles, solver entry point, and
//! fairness diagnostics.
//!
//! The constrained model penalizes both the per-subgroup TME errors
//! `ℰ_j(R)` and their pairwise differences over the SPD cone. Two
//! unconstrained reformulations are provided: the **square** path optimizes
//! `R ↦ Σ μ-weighted Ê_j(R²)` with `Ê_j(S) = ℰ_j(S⁻¹)` (the recommended
//! default — cheap derivatives, no overflow risk), and the **exp** path
//! optimizes `R ↦ Σ μ-weighted ℰ_j(e^R)`. Both compose an outer objective
//! over the SPD matrix `S` with a surjective spectral transform, so
//! cubic-regularized Newton can run over all of `S^{p×p}`.

use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::sym_basis;
use crate::calculus::{inner, ComposedObjective, MatrixObjective};
use crate::crn::{crn_minimize, CRNConfig, CRNStatus, CRNTrace, StationarityReport};
use crate::error::{Error, Result};
use crate::matfunc::{apply_matfunc, make_transform, symmetrize, ScalarFunctionSpec, TransformKind};
use crate::tme::{tme_error, tme_fixed_point, Subgroup};

/// Tolerance at which the per-subgroup optimal values `f_j*` are computed.
/// Fixed, not configurable: a loose `f_j*` shifts every `ℰ_j` additively
/// and corrupts the pairwise fairness term.
const F_STAR_TOL: f64 = 1e-10;
const F_STAR_MAX_ITER: usize = 20_000;

/// Which unconstrained reformulation to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// `S = R²`, errors expressed through `Ê_j(S) = ℰ_j(S⁻¹)`.
    Square,
    /// `S = e^R`, with `S` playing the covariance directly.
    Exp,
}

/// The model data: subgroups, weights, cached per-subgroup optima.
#[derive(Debug, Clone)]
pub struct FairTMEProblem {
    pub subgroups: Arc<Vec<Subgroup>>,
    pub mu1: f64,
    pub mu2: f64,
    pub f_star: Vec<f64>,
    pub formulation: Formulation,
}

impl FairTMEProblem {
    /// Validate the inputs and solve each subgroup's own TME to cache
    /// `f_j*`.
    pub fn new(subgroups: Vec<Subgroup>, mu1: f64, mu2: f64, formulation: Formulation) -> Result<Self> {
        if subgroups.is_empty() {
            return Err(Error::Validation("at least one subgroup is required".into()));
        }
        let p = subgroups[0].p();
        for g in &subgroups {
            g.validate()?;
            if g.p() != p {
                return Err(Error::Validation(format!(
                    "subgroup `{}` has dimension {}, expected {p}",
                    g.name,
                    g.p()
                )));
            }
        }
        if !(mu1 >= 0.0 && mu2 >= 0.0) || (mu1 == 0.0 && mu2 == 0.0) {
            return Err(Error::Validation(format!(
                "weights must be nonnegative and not both zero, got ({mu1}, {mu2})"
            )));
        }
        let mut f_star = Vec::with_capacity(subgroups.len());
        for g in &subgroups {
            let res = tme_fixed_point(g, F_STAR_TOL, F_STAR_MAX_ITER)?;
            if !res.objective_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "optimal TME value for subgroup `{}` is non-finite",
                    g.name
                )));
            }
            f_star.push(res.objective_value);
        }
        Ok(FairTMEProblem { subgroups: Arc::new(subgroups), mu1, mu2, f_star, formulation })
    }

    pub fn p(&self) -> usize {
        self.subgroups[0].p()
    }

    pub fn r(&self) -> usize {
        self.subgroups.len()
    }
}

/// `Ê_j(S) = (p/n_j) Σ log(x_iᵀ S x_i) − log det S − f_j*`, the TME error
/// of `S⁻¹` written without the inverse.
pub fn ehat(s: &DMatrix<f64>, g: &Subgroup, f_star: f64) -> Result<f64> {
    let chol = Cholesky::new(symmetrize(s))
        .ok_or_else(|| Error::Domain("ehat requires a positive definite argument".into()))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let q = forward_quad_forms(s, g)?;
    let p = g.p() as f64;
    let n = g.n() as f64;
    Ok(p / n * q.iter().map(|v| v.ln()).sum::<f64>() - logdet - f_star)
}

/// `q_i = x_iᵀ S x_i` for all samples (no inverse involved).
fn forward_quad_forms(s: &DMatrix<f64>, g: &Subgroup) -> Result<DVector<f64>> {
    let y = &g.data * s; // n × p
    let q = DVector::from_fn(g.n(), |i, _| g.data.row(i).dot(&y.row(i)));
    if q.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::Domain("nonpositive sample quadratic form (S not positive definite?)".into()));
    }
    Ok(q)
}

/// Combined penalty of the error vector:
/// `μ₁ Σ e_j + (μ₂/2) Σ_{i<j} (e_i − e_j)²`.
fn combined_value(mu1: f64, mu2: f64, e: &[f64]) -> f64 {
    let mut v = mu1 * e.iter().sum::<f64>();
    for i in 0..e.len() {
        for j in (i + 1)..e.len() {
            let d = e[i] - e[j];
            v += 0.5 * mu2 * d * d;
        }
    }
    v
}

/// `∂/∂e_k` of [`combined_value`]: `μ₁ + μ₂ (r·e_k − Σe)`.
fn combined_weights(mu1: f64, mu2: f64, e: &[f64]) -> Vec<f64> {
    let r = e.len() as f64;
    let sum: f64 = e.iter().sum();
    e.iter().map(|&ek| mu1 + mu2 * (r * ek - sum)).collect()
}

/// Per-point state shared by the gradient call and the subsequent fan-out
/// of Hessian-vector products at the same `S`.
struct OuterCache {
    s: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    /// Per subgroup: sample quadratic forms (`x·Sx` on the square path,
    /// `x·S⁻¹x` on the exp path).
    q: Vec<DVector<f64>>,
    /// Per subgroup on the exp path only: `U_j = S⁻¹ D_jᵀ` (columns `u_i`).
    u: Vec<DMatrix<f64>>,
    grads: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
    value: f64,
}

fn cached<F>(slot: &Mutex<Option<Arc<OuterCache>>>, s: &DMatrix<f64>, build: F) -> Result<Arc<OuterCache>>
where
    F: FnOnce(&DMatrix<f64>) -> Result<OuterCache>,
{
    let mut guard = slot.lock().unwrap();
    if let Some(c) = guard.as_ref() {
        if c.s == *s {
            return Ok(Arc::clone(c));
        }
    }
    let built = Arc::new(build(s)?);
    *guard = Some(Arc::clone(&built));
    Ok(built)
}

/// Outer objective of the square path, a function of `S` (to be composed
/// with `S = R²`): `μ-combined Ê_j(S)`.
pub struct FairSquareOuter {
    problem: FairTMEProblem,
    cache: Mutex<Option<Arc<OuterCache>>>,
}

impl FairSquareOuter {
    pub fn new(problem: FairTMEProblem) -> Self {
        FairSquareOuter { problem, cache: Mutex::new(None) }
    }

    fn cache_for(&self, s: &DMatrix<f64>) -> Result<Arc<OuterCache>> {
        let prob = &self.problem;
        cached(&self.cache, s, |s| {
            let ss = symmetrize(s);
            let chol = Cholesky::new(ss.clone())
                .ok_or_else(|| Error::Domain("square-path objective needs S = R² positive definite".into()))?;
            let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let s_inv = chol.inverse();
            let mut q = Vec::new();
            let mut e = Vec::new();
            let mut grads = Vec::new();
            for (g, &fs) in prob.subgroups.iter().zip(&prob.f_star) {
                let qg = forward_quad_forms(&ss, g)?;
                let p = g.p() as f64;
                let n = g.n() as f64;
                e.push(p / n * qg.iter().map(|v| v.ln()).sum::<f64>() - logdet - fs);
                // ∇Ê_j(S) = (p/n) Σ x xᵀ / q − S⁻¹ = (p/n) Dᵀ diag(1/q) D − S⁻¹
                let mut scaled = g.data.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row /= qg[i];
                }
                grads.push(symmetrize(&(g.data.transpose() * scaled)) * (p / n) - &s_inv);
                q.push(qg);
            }
            let weights = combined_weights(prob.mu1, prob.mu2, &e);
            let value = combined_value(prob.mu1, prob.mu2, &e);
            Ok(OuterCache { s: s.clone(), s_inv, q, u: Vec::new(), grads, weights, value })
        })
    }
}

impl MatrixObjective for FairSquareOuter {
    fn dim(&self) -> usize {
        self.problem.p()
    }

    fn value(&self, s: &DMatrix<f64>) -> Result<f64> {
        Ok(self.cache_for(s)?.value)
    }

    fn gradient(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.cache_for(s)?;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for (w, g) in c.weights.iter().zip(&c.grads) {
            out += *w * g;
        }
        Ok(out)
    }

    fn hess_vec(&self, s: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.cache_for(s)?;
        let hs = symmetrize(h);
        let p_dim = self.dim();
        let sihsi = &c.s_inv * &hs * &c.s_inv;
        let r = self.problem.r() as f64;
        let mu2 = self.problem.mu2;

        // d_j = <∇Ê_j, H> feed the weight-derivative (fairness curvature)
        // term; the main term is Σ w_j ∇²Ê_j[H].
        let mut d = Vec::with_capacity(c.grads.len());
        let mut out = DMatrix::zeros(p_dim, p_dim);
        for (j, g) in self.problem.subgroups.iter().enumerate() {
            let p = g.p() as f64;
            let n = g.n() as f64;
            let q = &c.q[j];
            // t_i = x_iᵀ H x_i
            let y = &g.data * &hs;
            let mut scaled = g.data.clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                let t = g.data.row(i).dot(&y.row(i));
                row *= t / (q[i] * q[i]);
            }
            // ∇²Ê_j[H] = −(p/n) Dᵀ diag(t/q²) D + S⁻¹HS⁻¹
            let hv = symmetrize(&(g.data.transpose() * scaled)) * (-p / n) + &sihsi;
            out += c.weights[j] * hv;
            d.push(inner(&c.grads[j], &hs));
        }
        let dsum: f64 = d.iter().sum();
        for (j, gj) in c.grads.iter().enumerate() {
            out += mu2 * (r * d[j] - dsum) * gj;
        }
        Ok(out)
    }
}

/// Outer objective of the exp path, a function of the covariance `S`
/// (to be composed with `S = e^R`): `μ-combined ℰ_j(S)`.
pub struct FairExpOuter {
    problem: FairTMEProblem,
    cache: Mutex<Option<Arc<OuterCache>>>,
}

impl FairExpOuter {
    pub fn new(problem: FairTMEProblem) -> Self {
        FairExpOuter { problem, cache: Mutex::new(None) }
    }

    fn cache_for(&self, s: &DMatrix<f64>) -> Result<Arc<OuterCache>> {
        let prob = &self.problem;
        cached(&self.cache, s, |s| {
            let ss = symmetrize(s);
            let chol = Cholesky::new(ss.clone())
                .ok_or_else(|| Error::Domain("exp-path objective needs S positive definite".into()))?;
            let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let s_inv = chol.inverse();
            let mut q = Vec::new();
            let mut u = Vec::new();
            let mut e = Vec::new();
            let mut grads = Vec::new();
            for (g, &fs) in prob.subgroups.iter().zip(&prob.f_star) {
                // u_i = S⁻¹ x_i as columns of U = S⁻¹ Dᵀ; q_i = x_i · u_i.
                let ug = chol.solve(&g.data.transpose());
                let qg = DVector::from_fn(g.n(), |i, _| g.data.row(i).transpose().dot(&ug.column(i).into_owned()));
                if qg.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                    return Err(Error::Domain("nonpositive quadratic form in exp-path objective".into()));
                }
                let p = g.p() as f64;
                let n = g.n() as f64;
                e.push(p / n * qg.iter().map(|v| v.ln()).sum::<f64>() + logdet - fs);
                // ∇ℰ_j(S) = S⁻¹ − (p/n) Σ u uᵀ / q = S⁻¹ − (p/n) U diag(1/q) Uᵀ
                let mut u_scaled = ug.clone();
                for (i, mut col) in u_scaled.column_iter_mut().enumerate() {
                    col /= qg[i];
                }
                grads.push(&s_inv - symmetrize(&(&ug * u_scaled.transpose())) * (p / n));
                q.push(qg);
                u.push(ug);
            }
            let weights = combined_weights(prob.mu1, prob.mu2, &e);
            let value = combined_value(prob.mu1, prob.mu2, &e);
            Ok(OuterCache { s: s.clone(), s_inv, q, u, grads, weights, value })
        })
    }
}

impl MatrixObjective for FairExpOuter {
    fn dim(&self) -> usize {
        self.problem.p()
    }

    fn value(&self, s: &DMatrix<f64>) -> Result<f64> {
        Ok(self.cache_for(s)?.value)
    }

    fn gradient(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.cache_for(s)?;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for (w, g) in c.weights.iter().zip(&c.grads) {
            out += *w * g;
        }
        Ok(out)
    }

    fn hess_vec(&self, s: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.cache_for(s)?;
        let hs = symmetrize(h);
        let p_dim = self.dim();
        let sihsi = &c.s_inv * &hs * &c.s_inv;
        let r = self.problem.r() as f64;
        let mu2 = self.problem.mu2;

        let mut d = Vec::with_capacity(c.grads.len());
        let mut out = DMatrix::zeros(p_dim, p_dim);
        for (j, g) in self.problem.subgroups.iter().enumerate() {
            let p = g.p() as f64;
            let n = g.n() as f64;
            let q = &c.q[j];
            let ug = &c.u[j];
            // v_i = S⁻¹ H u_i; columns of V = S⁻¹ H U.
            let v = &c.s_inv * &hs * ug;
            let hu = &hs * ug;
            // ∇²ℰ_j[H] = −S⁻¹HS⁻¹
            //            + (p/n) Σ [ (v uᵀ + u vᵀ)/q − u uᵀ (uᵀHu)/q² ]
            let mut u_over_q = ug.clone();
            let mut u_scaled = ug.clone();
            for i in 0..g.n() {
                let uhu = ug.column(i).dot(&hu.column(i));
                let qi = q[i];
                let mut col = u_over_q.column_mut(i);
                col /= qi;
                let mut col2 = u_scaled.column_mut(i);
                col2 *= uhu / (qi * qi);
            }
            let cross = symmetrize(&(&v * u_over_q.transpose()));
            let rank1 = symmetrize(&(ug * u_scaled.transpose()));
            let hv = -&sihsi + (2.0 * cross - rank1) * (p / n);
            out += c.weights[j] * hv;
            d.push(inner(&c.grads[j], &hs));
        }
        let dsum: f64 = d.iter().sum();
        for (j, gj) in c.grads.iter().enumerate() {
            out += mu2 * (r * d[j] - dsum) * gj;
        }
        Ok(out)
    }
}

/// Build the unconstrained objective over symmetric `R` for the problem's
/// formulation (outer objective composed with `R²` or `e^R`).
pub fn fair_objective(problem: &FairTMEProblem) -> Result<ComposedObjective> {
    match problem.formulation {
        Formulation::Square => {
            let t = make_transform(TransformKind::G3, 0.0, 0.0)?;
            Ok(ComposedObjective::new(Arc::new(FairSquareOuter::new(problem.clone())), &t))
        }
        Formulation::Exp => {
            let t = make_transform(TransformKind::G1, 0.0, 0.0)?;
            Ok(ComposedObjective::new(Arc::new(FairExpOuter::new(problem.clone())), &t))
        }
    }
}

/// The original constrained-model objective evaluated at a covariance `R`:
/// `μ₁ Σ ℰ_j(R) + (μ₂/2) Σ_{i<j} (ℰ_i − ℰ_j)²`.
pub fn fair_model_value(problem: &FairTMEProblem, r: &DMatrix<f64>) -> Result<f64> {
    let e = tme_errors(r, &problem.subgroups, &problem.f_star)?;
    Ok(combined_value(problem.mu1, problem.mu2, &e))
}

/// Per-subgroup TME errors `ℰ_j(R)` at a candidate covariance.
pub fn tme_errors(r: &DMatrix<f64>, subgroups: &[Subgroup], f_star: &[f64]) -> Result<Vec<f64>> {
    subgroups
        .iter()
        .zip(f_star)
        .map(|(g, &fs)| tme_error(r, g, fs))
        .collect()
}

/// Maximum absolute pairwise difference of the TME errors; zero for a
/// single subgroup.
pub fn fairness_value(r: &DMatrix<f64>, subgroups: &[Subgroup], f_star: &[f64]) -> Result<f64> {
    let e = tme_errors(r, subgroups, f_star)?;
    Ok(max_pairwise_gap(&e))
}

fn max_pairwise_gap(e: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..e.len() {
        for j in (i + 1)..e.len() {
            worst = worst.max((e[i] - e[j]).abs());
        }
    }
    worst
}

/// Outcome of [`solve_fair_tme`].
#[derive(Debug)]
pub struct FairTMEResult {
    /// The model-space covariance: `(R_opt²)⁻¹` (square) or `e^{R_opt}`
    /// (exp).
    pub r_fair: DMatrix<f64>,
    /// Final value of the unconstrained objective.
    pub objective_value: f64,
    pub tme_errors: Vec<f64>,
    pub fairness_value: f64,
    pub trace: CRNTrace,
    pub status: CRNStatus,
    pub report: StationarityReport,
    pub accepted_steps: usize,
}

impl FairTMEResult {
    /// Success means either a full second-order certificate, or stagnation
    /// (expected at scale-degenerate minima) with the certificate still
    /// passing.
    pub fn converged(&self) -> bool {
        match self.status {
            CRNStatus::Certified => true,
            CRNStatus::Stagnated => self.report.pass,
            CRNStatus::MaxIter => false,
        }
    }
}

/// Eigenvalues of the pooled estimate below this fraction of the largest
/// one are clamped before the pullback. An ill-conditioned start sends
/// the solver along razor-thin valleys near the singular boundary where
/// no step of any regularization weight descends.
const START_CLAMP: f64 = 0.1;

/// Default starting point: the pooled TME estimate (eigenvalues clamped to
/// a moderate spread) pulled back through the formulation's map —
/// `R_pool^{-1/2}` for the square path, `log R_pool` for the exp path.
/// Starting in the basin of a reasonable covariance cuts the iteration
/// count several-fold compared to the identity; if the pooled solve fails
/// the identity is used instead.
pub fn default_start(problem: &FairTMEProblem) -> DMatrix<f64> {
    let p = problem.p();
    let warm = || -> Result<DMatrix<f64>> {
        let total: usize = problem.subgroups.iter().map(|g| g.n()).sum();
        let mut pooled = DMatrix::zeros(total, p);
        let mut offset = 0;
        for g in problem.subgroups.iter() {
            pooled.rows_mut(offset, g.n()).copy_from(&g.data);
            offset += g.n();
        }
        let pool = Subgroup::new("pooled", pooled)?;
        let r_pool = tme_fixed_point(&pool, F_STAR_TOL, F_STAR_MAX_ITER)?.r;
        let eig = crate::matfunc::spectral_decompose(&r_pool)?;
        let floor = START_CLAMP * eig.lambda.max();
        let pullback: fn(f64) -> f64 = match problem.formulation {
            Formulation::Square => |l| l.powf(-0.5),
            Formulation::Exp => f64::ln,
        };
        let mapped = crate::matfunc::SymEigen {
            q: eig.q,
            lambda: eig.lambda.map(|l| pullback(l.max(floor))),
        };
        Ok(mapped.reconstruct())
    };
    warm().unwrap_or_else(|_| DMatrix::identity(p, p))
}

/// Run cubic-regularized Newton on the unconstrained reformulation and map
/// the minimizer back to the covariance space. When `r0` is `None` the
/// solver starts from [`default_start`].
pub fn solve_fair_tme(
    problem: &FairTMEProblem,
    config: &CRNConfig,
    r0: Option<&DMatrix<f64>>,
) -> Result<FairTMEResult> {
    let p = problem.p();
    let obj = fair_objective(problem)?;
    let basis = sym_basis(p);
    let x0 = match r0 {
        Some(m) => m.clone(),
        None => default_start(problem),
    };
    let res = crn_minimize(&obj, &x0, &basis, config)?;

    let r_fair = match problem.formulation {
        Formulation::Square => {
            let s = &res.x * &res.x;
            Cholesky::new(symmetrize(&s))
                .ok_or_else(|| {
                    Error::DegenerateSolution(
                        "optimizer output R is singular; R² cannot be inverted".into(),
                    )
                })?
                .inverse()
        }
        Formulation::Exp => apply_matfunc(&ScalarFunctionSpec::exp(), &res.x)?,
    };
    let errors = tme_errors(&r_fair, &problem.subgroups, &problem.f_star)?;
    let fairness = max_pairwise_gap(&errors);
    Ok(FairTMEResult {
        r_fair,
        objective_value: res.f,
        tme_errors: errors,
        fairness_value: fairness,
        trace: res.trace,
        status: res.status,
        report: res.report,
        accepted_steps: res.accepted_steps,
    })
}
