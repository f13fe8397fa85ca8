//! Experiment orchestration: run the fair estimator over a grid of
//! penalty weights, run the pooled baseline, and emit an aligned text
//! table plus a machine-readable JSON results file and per-run traces.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::crn::CRNConfig;
use crate::data::{
    gen_synthetic, load_csv_files, load_csv_grouped, pool_subgroups, preprocess, CenterScope,
    LoadOptions, LoadedData, SynthConfig,
};
use crate::error::{Error, Result};
use crate::fairtme::{solve_fair_tme, FairTMEProblem, Formulation};
use crate::tme::{tme_error, tme_fixed_point, Subgroup};

/// Where the subgroups come from.
#[derive(Debug, Clone)]
pub enum InputSource {
    Synth(SynthConfig),
    /// One CSV; a designated column labels subgroup membership.
    CsvGrouped { path: PathBuf, group_col: String, options: LoadOptions },
    /// One CSV per subgroup, labelled by file.
    CsvFiles { files: Vec<(String, PathBuf)>, options: LoadOptions },
}

/// Full description of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: InputSource,
    /// Penalty-weight grid; one fair run per `(μ₁, μ₂)` pair.
    pub grid: Vec<(f64, f64)>,
    pub formulation: Formulation,
    pub eps: f64,
    pub max_iter: usize,
    pub l0: f64,
    /// JSON results destination (stdout table is always produced).
    pub out: Option<PathBuf>,
    /// Directory for per-run convergence-trace CSVs.
    pub trace_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Validation("weight grid must be nonempty".into()));
        }
        for &(m1, m2) in &self.grid {
            if !(m1 >= 0.0 && m2 >= 0.0) || (m1 == 0.0 && m2 == 0.0) {
                return Err(Error::Validation(format!(
                    "weights must be nonnegative and not both zero, got ({m1}, {m2})"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Validation(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(Error::Validation("max_iter must be positive".into()));
        }
        if let InputSource::Synth(cfg) = &self.source {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// One solved row of the results table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu2: Option<f64>,
    pub tme_errors: Vec<f64>,
    pub fairness_value: f64,
    pub iterations: usize,
    pub status: String,
    /// Stationarity certificate of the fair runs (absent for the
    /// baseline): final gradient norm, smallest Hessian eigenvalue, pass.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_pass: Option<bool>,
    /// Wall-clock time; excluded from determinism comparisons.
    pub seconds: f64,
}

/// The machine-readable results file (`schema` is bumped on layout
/// changes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub schema: u32,
    pub subgroups: Vec<String>,
    pub subgroup_sizes: Vec<usize>,
    pub p: usize,
    pub formulation: Formulation,
    pub eps: f64,
    pub runs: Vec<RunRecord>,
}

pub const RESULTS_SCHEMA: u32 = 1;

/// Subgroups materialized for the two pipelines. CSV sources are
/// standardized per subgroup for the fair runs and over the pooled
/// dataset for the baseline; synthetic data is used as generated.
pub struct PreparedData {
    pub fair: Vec<Subgroup>,
    pub baseline: Vec<Subgroup>,
    pub dropped_rows: usize,
}

pub fn prepare_data(source: &InputSource) -> Result<PreparedData> {
    match source {
        InputSource::Synth(cfg) => {
            let d = gen_synthetic(cfg)?;
            Ok(PreparedData { fair: d.subgroups.clone(), baseline: d.subgroups, dropped_rows: 0 })
        }
        InputSource::CsvGrouped { path, group_col, options } => {
            let loaded = load_csv_grouped(path, group_col, options)?;
            prepared_from_loaded(loaded)
        }
        InputSource::CsvFiles { files, options } => {
            let loaded = load_csv_files(files, options)?;
            prepared_from_loaded(loaded)
        }
    }
}

fn prepared_from_loaded(loaded: LoadedData) -> Result<PreparedData> {
    let fair = preprocess(&loaded, CenterScope::PerSubgroup)?;
    let baseline = preprocess(&loaded, CenterScope::Pooled)?;
    Ok(PreparedData { fair, baseline, dropped_rows: loaded.dropped_rows })
}

fn trace_path(dir: &std::path::Path, label: &str) -> PathBuf {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    dir.join(format!("trace_{safe}.csv"))
}

fn flush_results(spec: &ExperimentSpec, results: &ExperimentResults) -> Result<()> {
    if let Some(out) = &spec.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut json = serde_json::to_string_pretty(results)?;
        json.push('\n');
        std::fs::write(out, json)?;
    }
    Ok(())
}

fn label_err(label: &str, e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::Validation(format!("run `{label}`: {m}")),
        other => Error::Numerical(format!("run `{label}` failed: {other}")),
    }
}

/// Run the full grid plus the pooled-TME baseline. Results accumulated so
/// far are flushed to the output file even when a later run fails.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    spec.validate()?;
    let data = prepare_data(&spec.source)?;
    if let Some(dir) = &spec.trace_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut results = ExperimentResults {
        schema: RESULTS_SCHEMA,
        subgroups: data.fair.iter().map(|g| g.name.clone()).collect(),
        subgroup_sizes: data.fair.iter().map(|g| g.n()).collect(),
        p: data.fair[0].p(),
        formulation: spec.formulation,
        eps: spec.eps,
        runs: Vec::new(),
    };

    let config = CRNConfig {
        eps: spec.eps,
        max_iter: spec.max_iter,
        l0: spec.l0,
        ..CRNConfig::default()
    };

    for &(mu1, mu2) in &spec.grid {
        let label = format!("fair({mu1},{mu2})");
        let start = Instant::now();
        let run = (|| -> Result<RunRecord> {
            let problem = FairTMEProblem::new(data.fair.clone(), mu1, mu2, spec.formulation)?;
            let res = solve_fair_tme(&problem, &config, None)?;
            if let Some(dir) = &spec.trace_dir {
                res.trace.write_csv(&trace_path(dir, &label))?;
            }
            Ok(RunRecord {
                label: label.clone(),
                mu1: Some(mu1),
                mu2: Some(mu2),
                tme_errors: res.tme_errors.clone(),
                fairness_value: res.fairness_value,
                iterations: res.accepted_steps,
                status: format!("{:?}", res.status),
                grad_norm: Some(res.report.grad_norm),
                lambda_min: Some(res.report.lambda_min),
                certificate_pass: Some(res.report.pass),
                seconds: start.elapsed().as_secs_f64(),
            })
        })();
        match run {
            Ok(rec) => results.runs.push(rec),
            Err(e) => {
                flush_results(spec, &results)?;
                return Err(label_err(&label, e));
            }
        }
    }

    // Pooled baseline: a single standard TME on the merged sample set,
    // scored against each subgroup's own optimum.
    let start = Instant::now();
    let baseline = (|| -> Result<RunRecord> {
        let pooled = pool_subgroups(&data.baseline, "pooled")?;
        let tme = tme_fixed_point(&pooled, 1e-10, 20_000)?;
        let mut errors = Vec::with_capacity(data.baseline.len());
        for g in &data.baseline {
            let own = tme_fixed_point(g, 1e-10, 20_000)?;
            errors.push(tme_error(&tme.r, g, own.objective_value)?);
        }
        let mut fairness = 0.0f64;
        for i in 0..errors.len() {
            for j in (i + 1)..errors.len() {
                fairness = fairness.max((errors[i] - errors[j]).abs());
            }
        }
        Ok(RunRecord {
            label: "tme".into(),
            mu1: None,
            mu2: None,
            tme_errors: errors,
            fairness_value: fairness,
            iterations: tme.iterations,
            status: "FixedPoint".into(),
            grad_norm: None,
            lambda_min: None,
            certificate_pass: None,
            seconds: start.elapsed().as_secs_f64(),
        })
    })();
    match baseline {
        Ok(rec) => results.runs.push(rec),
        Err(e) => {
            flush_results(spec, &results)?;
            return Err(label_err("tme", e));
        }
    }

    flush_results(spec, &results)?;
    Ok(results)
}

/// Render the results as an aligned text table: one row per run, one
/// error column per subgroup, then the fairness value.
pub fn render_table(results: &ExperimentResults) -> String {
    let mut header: Vec<String> = vec!["run".into()];
    for (name, n) in results.subgroups.iter().zip(&results.subgroup_sizes) {
        header.push(format!("err[{name}|n={n}]"));
    }
    header.push("fairness".into());
    header.push("iters".into());
    header.push("status".into());

    let mut rows: Vec<Vec<String>> = vec![header];
    for run in &results.runs {
        let mut row = vec![run.label.clone()];
        for e in &run.tme_errors {
            row.push(format!("{e:.5}"));
        }
        row.push(format!("{:.5}", run.fairness_value));
        row.push(run.iterations.to_string());
        row.push(run.status.clone());
        rows.push(row);
    }

    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:>width$}", width = widths[i]);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairtme::Formulation;

    fn small_spec(dir: &std::path::Path) -> ExperimentSpec {
        ExperimentSpec {
            source: InputSource::Synth(SynthConfig::new(4, vec![15, 25], 3)),
            grid: vec![(1.0, 1.0), (1.0, 10.0)],
            formulation: Formulation::Square,
            eps: 1e-6,
            max_iter: 100,
            l0: 1e-3,
            out: Some(dir.join("results.json")),
            trace_dir: Some(dir.join("traces")),
        }
    }

    #[test]
    fn empty_grid_rejected_before_solving() {
        let mut spec = small_spec(std::path::Path::new("/nonexistent"));
        spec.grid.clear();
        // Validation fails before any solve or file access is attempted.
        assert!(matches!(run_experiment(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn grid_produces_fair_rows_plus_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(dir.path());
        let results = run_experiment(&spec).unwrap();
        assert_eq!(results.schema, 1);
        assert_eq!(results.runs.len(), 3);
        assert_eq!(results.runs[2].label, "tme");
        for run in &results.runs[..2] {
            assert_eq!(run.tme_errors.len(), 2);
            assert_eq!(run.certificate_pass, Some(true));
            assert!(run.grad_norm.unwrap() <= spec.eps);
        }
        assert!(dir.path().join("results.json").is_file());
        assert!(dir.path().join("traces/trace_fair_1_10_.csv").is_file());
        let table = render_table(&results);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("fairness"));
    }

    #[test]
    fn results_file_deterministic_modulo_timing() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec(dir.path());
        spec.trace_dir = None;
        spec.out = Some(dir.path().join("a.json"));
        run_experiment(&spec).unwrap();
        spec.out = Some(dir.path().join("b.json"));
        run_experiment(&spec).unwrap();

        let strip = |p: &std::path::Path| -> String {
            let mut v: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
            for run in v["runs"].as_array_mut().unwrap() {
                run["seconds"] = serde_json::Value::Null;
            }
            serde_json::to_string_pretty(&v).unwrap()
        };
        assert_eq!(strip(&dir.path().join("a.json")), strip(&dir.path().join("b.json")));
    }

    #[test]
    fn invalid_weight_pair_rejected_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec(dir.path());
        spec.trace_dir = None;
        spec.grid = vec![(1.0, 1.0), (0.0, 0.0)];
        assert!(matches!(run_experiment(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn failure_messages_carry_run_label() {
        let e = label_err("fair(1,10)", Error::Numerical("boom".into()));
        assert!(e.to_string().contains("fair(1,10)"));
        let e = label_err("tme", Error::Validation("bad".into()));
        assert!(e.to_string().contains("tme"));
    }

    #[test]
    fn partial_results_flushed_when_a_run_fails() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec(dir.path());
        spec.out = Some(dir.path().join("partial.json"));
        // Make the second run's trace write fail by pre-creating its
        // trace path as a directory; the first run's record must still be
        // flushed before the error propagates.
        let traces = dir.path().join("traces");
        std::fs::create_dir_all(traces.join("trace_fair_1_10_.csv")).unwrap();
        let err = run_experiment(&spec).unwrap_err();
        assert!(err.to_string().contains("fair(1,10)"), "{err}");
        let partial: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(spec.out.as_ref().unwrap()).unwrap())
                .unwrap();
        assert_eq!(partial["runs"].as_array().unwrap().len(), 1);
        assert_eq!(partial["runs"][0]["label"], "fair(1,1)");
    }
}
