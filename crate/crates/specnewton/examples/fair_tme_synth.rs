//! End-to-end fairness demo: on a synthetic multi-subgroup dataset, the
//! pooled robust covariance favors large subgroups, while the
//! fairness-penalized estimate equalizes the per-subgroup errors.

use specnewton::crn::CRNConfig;
use specnewton::data::{gen_synthetic, pool_subgroups, SynthConfig};
use specnewton::fairtme::{solve_fair_tme, FairTMEProblem, Formulation};
use specnewton::tme::{tme_error, tme_fixed_point};

fn main() -> specnewton::Result<()> {
    let p = 10;
    let sizes = vec![50, 100, 200, 75];
    let data = gen_synthetic(&SynthConfig::new(p, sizes, 0))?;

    // Pooled baseline: one standard TME over all samples.
    let pooled = pool_subgroups(&data.subgroups, "pooled")?;
    let baseline = tme_fixed_point(&pooled, 1e-10, 20_000)?;

    // Fair estimator with weights (mu1, mu2) = (1, 10).
    let problem = FairTMEProblem::new(data.subgroups.clone(), 1.0, 10.0, Formulation::Square)?;
    let config = CRNConfig { eps: 1e-6, max_iter: 100, ..CRNConfig::default() };
    let fair = solve_fair_tme(&problem, &config, None)?;

    println!("{:<10} {:>12} {:>12}", "subgroup", "pooled err", "fair err");
    let mut worst_pool = 0.0f64;
    for (j, g) in problem.subgroups.iter().enumerate() {
        let e_pool = tme_error(&baseline.r, g, problem.f_star[j])?;
        println!("{:<10} {:>12.5} {:>12.5}", format!("{}(n={})", g.name, g.n()), e_pool, fair.tme_errors[j]);
        for k in 0..j {
            let other = tme_error(&baseline.r, &problem.subgroups[k], problem.f_star[k])?;
            worst_pool = worst_pool.max((e_pool - other).abs());
        }
    }
    println!(
        "\nfairness value: pooled {:.5} vs fair {:.5} ({}x reduction)",
        worst_pool,
        fair.fairness_value,
        (worst_pool / fair.fairness_value).round()
    );
    println!(
        "solver: {:?} after {} accepted steps, grad norm {:.3e}",
        fair.status, fair.accepted_steps, fair.report.grad_norm
    );
    Ok(())
}
