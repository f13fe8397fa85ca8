//! Data sources: seeded synthetic subgroup generation and CSV ingestion
//! with centering/scaling preprocessing.
//!
//! CSV convention: rows are samples, columns are features, UTF-8,
//! comma-separated, `.` decimal. Group membership comes either from a
//! designated group column in a single file or from one file per
//! subgroup. Preprocessing (mean subtraction and unit-variance scaling)
//! is scoped per subgroup for the fairness pipeline and over the pooled
//! dataset for the baseline pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tme::Subgroup;

/// Parameters for the synthetic benchmark generator.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub p: usize,
    pub sizes: Vec<usize>,
    pub seed: u64,
    /// Jitter added to `AAᵀ` so each shape matrix is strictly positive
    /// definite.
    pub delta: f64,
}

impl SynthConfig {
    pub fn new(p: usize, sizes: Vec<usize>, seed: u64) -> Self {
        SynthConfig { p, sizes, seed, delta: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Validation(format!("dimension must be at least 2, got {}", self.p)));
        }
        if self.sizes.is_empty() {
            return Err(Error::Validation("at least one subgroup size is required".into()));
        }
        for (i, &n) in self.sizes.iter().enumerate() {
            if n <= self.p {
                return Err(Error::Validation(format!(
                    "subgroup {i} has {n} samples; need more than p = {}",
                    self.p
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Validation(format!("jitter must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Generated subgroups together with the shape matrices that produced
/// them (kept so tests can verify the construction `x = S_p ξ`).
#[derive(Debug, Clone)]
pub struct SynthData {
    pub subgroups: Vec<Subgroup>,
    pub shapes: Vec<DMatrix<f64>>,
}

/// Draw the synthetic instance: per subgroup, `A` has standard-normal
/// entries, `S_p = AAᵀ + δI`, and each sample is `x = S_p ξ` with `ξ`
/// uniform on the unit sphere. A single seeded stream makes the whole
/// dataset a pure function of the seed.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.p;
    let mut subgroups = Vec::with_capacity(cfg.sizes.len());
    let mut shapes = Vec::with_capacity(cfg.sizes.len());
    for (k, &n) in cfg.sizes.iter().enumerate() {
        let a: DMatrix<f64> = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
        let shape = &a * a.transpose() + DMatrix::identity(p, p) * cfg.delta;
        let mut data = DMatrix::zeros(n, p);
        for i in 0..n {
            let mut xi: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            xi /= xi.norm();
            let x: DVector<f64> = &shape * xi;
            data.set_row(i, &x.transpose());
        }
        subgroups.push(Subgroup::new(format!("g{}", k + 1), data)?);
        shapes.push(shape);
    }
    Ok(SynthData { subgroups, shapes })
}

/// Scope of mean subtraction and unit-variance scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterScope {
    /// Each subgroup centered and scaled by its own statistics.
    PerSubgroup,
    /// Statistics computed over all subgroups pooled together.
    Pooled,
}

/// How to read a CSV source.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub has_header: bool,
    /// Columns to drop before parsing (categorical features etc.);
    /// header names, or zero-based indices when there is no header.
    pub exclude: Vec<String>,
}

/// Loaded raw subgroups plus ingestion bookkeeping.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub subgroups: Vec<Subgroup>,
    /// Rows discarded because of missing values.
    pub dropped_rows: usize,
    /// Feature names (header names, or `col0`, `col1`, … without one).
    pub columns: Vec<String>,
}

struct RawTable {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    group_of_row: Vec<String>,
    dropped: usize,
}

fn column_label(names: &Option<Vec<String>>, idx: usize) -> String {
    match names {
        Some(n) => n[idx].clone(),
        None => format!("col{idx}"),
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t == "?"
}

fn read_table(
    path: &Path,
    opts: &LoadOptions,
    group_col: Option<&str>,
    fixed_group: Option<&str>,
) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let header: Option<Vec<String>> = if opts.has_header {
        Some(reader.headers()?.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let resolve = |label: &str| -> Result<usize> {
        match &header {
            Some(names) => names
                .iter()
                .position(|n| n == label)
                .ok_or_else(|| Error::Validation(format!("column `{label}` not found in {}", path.display()))),
            None => label
                .parse::<usize>()
                .map_err(|_| Error::Validation(format!("without a header, columns are addressed by index; got `{label}`"))),
        }
    };

    let group_idx = group_col.map(resolve).transpose()?;
    let mut excluded: Vec<usize> = opts.exclude.iter().map(|l| resolve(l)).collect::<Result<_>>()?;
    if let Some(g) = group_idx {
        excluded.push(g);
    }

    let mut columns: Vec<String> = Vec::new();
    let mut keep: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut group_of_row: Vec<String> = Vec::new();
    let mut dropped = 0usize;

    for (data_idx, record) in reader.records().enumerate() {
        let record = record?;
        if keep.is_empty() {
            keep = (0..record.len()).filter(|i| !excluded.contains(i)).collect();
            if let Some(g) = group_idx {
                if g >= record.len() {
                    return Err(Error::Validation(format!(
                        "group column index {g} out of range for {} columns",
                        record.len()
                    )));
                }
            }
            columns = keep.iter().map(|&i| column_label(&header, i)).collect();
        }
        // 1-based data row for messages, counting the header if present.
        let row_no = data_idx + 1 + usize::from(opts.has_header);
        if record.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(keep.len());
        for &i in &keep {
            let cell = &record[i];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: row_no,
                column: column_label(&header, i),
                message: format!("cannot parse `{cell}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row_no,
                    column: column_label(&header, i),
                    message: format!("non-finite value `{cell}`"),
                });
            }
            row.push(v);
        }
        let group = match group_idx {
            Some(g) => record[g].to_owned(),
            None => fixed_group.unwrap_or("all").to_owned(),
        };
        rows.push(row);
        group_of_row.push(group);
        let _ = row_no;
    }
    Ok(RawTable { columns, rows, group_of_row, dropped })
}

fn table_to_subgroups(table: RawTable) -> Result<LoadedData> {
    if table.rows.is_empty() {
        return Err(Error::Validation("no usable rows after dropping missing values".into()));
    }
    let p = table.rows[0].len();
    if p == 0 {
        return Err(Error::Validation("no feature columns left after exclusions".into()));
    }
    // BTreeMap keeps subgroup order stable across runs.
    let mut by_group: BTreeMap<String, Vec<&Vec<f64>>> = BTreeMap::new();
    for (row, group) in table.rows.iter().zip(&table.group_of_row) {
        by_group.entry(group.clone()).or_default().push(row);
    }
    let mut subgroups = Vec::with_capacity(by_group.len());
    for (name, rows) in by_group {
        if rows.len() <= p {
            return Err(Error::Existence(format!(
                "subgroup `{name}` has {} samples; need more than p = {p}",
                rows.len()
            )));
        }
        let data = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        subgroups.push(Subgroup::new(name, data)?);
    }
    Ok(LoadedData { subgroups, dropped_rows: table.dropped, columns: table.columns })
}

/// Load one CSV whose `group_col` column labels subgroup membership.
pub fn load_csv_grouped(path: &Path, group_col: &str, opts: &LoadOptions) -> Result<LoadedData> {
    table_to_subgroups(read_table(path, opts, Some(group_col), None)?)
}

/// Load one CSV per subgroup; the subgroup takes the given label.
pub fn load_csv_files(files: &[(String, std::path::PathBuf)], opts: &LoadOptions) -> Result<LoadedData> {
    if files.is_empty() {
        return Err(Error::Validation("at least one input file is required".into()));
    }
    let mut merged: Option<RawTable> = None;
    for (label, path) in files {
        let t = read_table(path, opts, None, Some(label))?;
        match &mut merged {
            None => merged = Some(t),
            Some(m) => {
                if t.columns != m.columns {
                    return Err(Error::Validation(format!(
                        "column mismatch between input files (`{}` differs)",
                        path.display()
                    )));
                }
                m.rows.extend(t.rows);
                m.group_of_row.extend(t.group_of_row);
                m.dropped += t.dropped;
            }
        }
    }
    table_to_subgroups(merged.unwrap())
}

fn center_scale_block(data: &mut DMatrix<f64>, columns: &[String]) -> Result<()> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::Validation("need at least two rows to scale".into()));
    }
    for j in 0..data.ncols() {
        let mut col = data.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let var = col.dot(&col) / (n as f64 - 1.0);
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            let name = columns.get(j).cloned().unwrap_or_else(|| format!("col{j}"));
            return Err(Error::Validation(format!(
                "column `{name}` is constant (zero variance); cannot scale to unit variance"
            )));
        }
        col /= sd;
    }
    Ok(())
}

/// Subtract means and scale features to unit variance, with statistics
/// computed per subgroup or over the pooled dataset.
pub fn preprocess(data: &LoadedData, scope: CenterScope) -> Result<Vec<Subgroup>> {
    match scope {
        CenterScope::PerSubgroup => data
            .subgroups
            .iter()
            .map(|g| {
                let mut m = g.data.clone();
                center_scale_block(&mut m, &data.columns)
                    .map_err(|e| Error::Validation(format!("subgroup `{}`: {e}", g.name)))?;
                Subgroup::new(g.name.clone(), m)
            })
            .collect(),
        CenterScope::Pooled => {
            let p = data.subgroups[0].p();
            let total: usize = data.subgroups.iter().map(|g| g.n()).sum();
            let mut pooled = DMatrix::zeros(total, p);
            let mut offset = 0;
            for g in &data.subgroups {
                pooled.rows_mut(offset, g.n()).copy_from(&g.data);
                offset += g.n();
            }
            center_scale_block(&mut pooled, &data.columns)?;
            let mut out = Vec::with_capacity(data.subgroups.len());
            let mut offset = 0;
            for g in &data.subgroups {
                let block = pooled.rows(offset, g.n()).into_owned();
                offset += g.n();
                out.push(Subgroup::new(g.name.clone(), block)?);
            }
            Ok(out)
        }
    }
}

/// Merge subgroups into one pooled sample set (for the baseline TME run).
pub fn pool_subgroups(subgroups: &[Subgroup], name: &str) -> Result<Subgroup> {
    if subgroups.is_empty() {
        return Err(Error::Validation("cannot pool zero subgroups".into()));
    }
    let p = subgroups[0].p();
    let total: usize = subgroups.iter().map(|g| g.n()).sum();
    let mut data = DMatrix::zeros(total, p);
    let mut offset = 0;
    for g in subgroups {
        if g.p() != p {
            return Err(Error::Dimension(format!(
                "subgroup `{}` has dimension {}, expected {p}",
                g.name,
                g.p()
            )));
        }
        data.rows_mut(offset, g.n()).copy_from(&g.data);
        offset += g.n();
    }
    Subgroup::new(name.to_owned(), data)
}

/// Convenience for tests and examples: invert a shape matrix's action on
/// a sample to recover the sphere point `ξ = S_p⁻¹ x`.
pub fn recover_sphere_point(shape: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = Cholesky::new(shape.clone())
        .ok_or_else(|| Error::Domain("shape matrix is not positive definite".into()))?;
    Ok(chol.solve(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig::new(5, vec![10, 12], 42);
        let a = gen_synthetic(&cfg).unwrap();
        let b = gen_synthetic(&cfg).unwrap();
        for (x, y) in a.subgroups.iter().zip(&b.subgroups) {
            assert_eq!(x.data, y.data);
        }
        let c = gen_synthetic(&SynthConfig::new(5, vec![10, 12], 43)).unwrap();
        assert_ne!(a.subgroups[0].data, c.subgroups[0].data);
    }

    #[test]
    fn synthetic_shapes_and_sizes() {
        let cfg = SynthConfig::new(30, vec![50, 100, 200, 75], 7);
        let d = gen_synthetic(&cfg).unwrap();
        assert_eq!(d.subgroups.len(), 4);
        let sizes: Vec<usize> = d.subgroups.iter().map(|g| g.n()).collect();
        assert_eq!(sizes, vec![50, 100, 200, 75]);
        assert!(d.subgroups.iter().all(|g| g.p() == 30));
        assert!(d.shapes.iter().all(|s| s.nrows() == 30));
    }

    #[test]
    fn samples_lie_on_shape_image_of_sphere() {
        let cfg = SynthConfig::new(8, vec![20], 11);
        let d = gen_synthetic(&cfg).unwrap();
        let shape = &d.shapes[0];
        for i in 0..d.subgroups[0].n() {
            let x = d.subgroups[0].data.row(i).transpose();
            let xi = recover_sphere_point(shape, &x).unwrap();
            assert_relative_eq!(xi.norm(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn synth_validation() {
        assert!(gen_synthetic(&SynthConfig::new(1, vec![10], 0)).is_err());
        assert!(gen_synthetic(&SynthConfig::new(5, vec![5], 0)).is_err());
        assert!(gen_synthetic(&SynthConfig::new(5, vec![], 0)).is_err());
    }

    #[test]
    fn toy_two_group_file() {
        let f = write_temp(
            "a,b,grp\n1.0,2.0,x\n2.0,1.0,x\n3.0,3.0,x\n4.0,0.5,y\n5.0,1.5,y\n6.0,2.5,y\n",
        );
        let opts = LoadOptions { has_header: true, exclude: vec![] };
        let loaded = load_csv_grouped(f.path(), "grp", &opts).unwrap();
        assert_eq!(loaded.subgroups.len(), 2);
        assert_eq!(loaded.subgroups[0].name, "x");
        assert_eq!(loaded.subgroups[1].name, "y");
        assert_eq!(loaded.subgroups[0].data.nrows(), 3);
        assert_eq!(loaded.subgroups[1].data.nrows(), 3);
        assert_eq!(loaded.columns, vec!["a", "b"]);
        assert_eq!(loaded.dropped_rows, 0);
        assert_eq!(loaded.subgroups[0].data[(2, 1)], 3.0);
    }

    #[test]
    fn missing_rows_dropped_with_count() {
        let f = write_temp(
            "a,b,grp\n1.0,2.0,x\n,1.0,x\n3.0,NA,x\n2.0,1.0,x\n3.0,3.0,x\n4.0,0.5,y\n5.0,1.5,y\n6.0,2.5,y\n",
        );
        let opts = LoadOptions { has_header: true, exclude: vec![] };
        let loaded = load_csv_grouped(f.path(), "grp", &opts).unwrap();
        assert_eq!(loaded.dropped_rows, 2);
        assert_eq!(loaded.subgroups[0].data.nrows(), 3);
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let f = write_temp("a,b,grp\n1.0,2.0,x\n2.0,oops,x\n");
        let opts = LoadOptions { has_header: true, exclude: vec![] };
        let err = load_csv_grouped(f.path(), "grp", &opts).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn excluded_columns_are_dropped() {
        let f = write_temp(
            "a,cat,b,grp\n1.0,red,2.0,x\n2.0,blue,1.0,x\n3.0,red,3.0,x\n4.0,red,0.5,x\n",
        );
        let opts = LoadOptions { has_header: true, exclude: vec!["cat".into()] };
        let loaded = load_csv_grouped(f.path(), "grp", &opts).unwrap();
        assert_eq!(loaded.columns, vec!["a", "b"]);
        assert_eq!(loaded.subgroups[0].data.ncols(), 2);
    }

    #[test]
    fn per_file_groups() {
        let f1 = write_temp("1.0,2.0\n2.0,1.0\n3.0,3.0\n");
        let f2 = write_temp("4.0,0.5\n5.0,1.5\n6.0,2.5\n");
        let files = vec![
            ("first".to_owned(), f1.path().to_owned()),
            ("second".to_owned(), f2.path().to_owned()),
        ];
        let opts = LoadOptions { has_header: false, exclude: vec![] };
        let loaded = load_csv_files(&files, &opts).unwrap();
        assert_eq!(loaded.subgroups.len(), 2);
        assert_eq!(loaded.subgroups[0].name, "first");
        assert_eq!(loaded.columns, vec!["col0", "col1"]);
    }

    #[test]
    fn small_subgroup_rejected() {
        let f = write_temp("a,b,grp\n1.0,2.0,x\n2.0,1.0,x\n3.0,3.0,x\n4.0,0.5,y\n5.0,1.5,y\n");
        let opts = LoadOptions { has_header: true, exclude: vec![] };
        assert!(matches!(
            load_csv_grouped(f.path(), "grp", &opts),
            Err(Error::Existence(_))
        ));
    }

    #[test]
    fn preprocess_yields_standardized_features() {
        let f = write_temp(
            "a,b,grp\n1.0,2.0,x\n2.0,7.0,x\n3.5,3.0,x\n4.0,0.5,x\n-1.0,1.5,x\n",
        );
        let opts = LoadOptions { has_header: true, exclude: vec![] };
        let loaded = load_csv_grouped(f.path(), "grp", &opts).unwrap();
        let pre = preprocess(&loaded, CenterScope::PerSubgroup).unwrap();
        let d = &pre[0].data;
        let n = d.nrows() as f64;
        for j in 0..d.ncols() {
            let col = d.column(j);
            assert!(col.mean().abs() <= 1e-12);
            assert_relative_eq!(col.dot(&col) / (n - 1.0), 1.0, epsilon = 1e-12);
        }
        // Idempotence: a second pass is a no-op up to rounding.
        let again = preprocess(
            &LoadedData { subgroups: pre.clone(), dropped_rows: 0, columns: loaded.columns.clone() },
            CenterScope::PerSubgroup,
        )
        .unwrap();
        assert_relative_eq!(again[0].data, pre[0].data, epsilon = 1e-12);
    }

    #[test]
    fn pooled_scope_standardizes_the_pool() {
        let cfg = SynthConfig::new(3, vec![8, 12], 5);
        let d = gen_synthetic(&cfg).unwrap();
        let loaded = LoadedData {
            subgroups: d.subgroups,
            dropped_rows: 0,
            columns: vec!["f0".into(), "f1".into(), "f2".into()],
        };
        let pre = preprocess(&loaded, CenterScope::Pooled).unwrap();
        let pooled = pool_subgroups(&pre, "pool").unwrap();
        let n = pooled.n() as f64;
        for j in 0..pooled.p() {
            let col = pooled.data.column(j);
            assert!(col.mean().abs() <= 1e-12);
            assert_relative_eq!(col.dot(&col) / (n - 1.0), 1.0, epsilon = 1e-12);
        }
        // Per-subgroup means generally do NOT vanish under pooled scope.
        assert!(pre[0].data.column(0).mean().abs() > 1e-6);
    }

    #[test]
    fn constant_column_names_offender() {
        let f = write_temp("a,b,grp\n1.0,2.0,x\n1.0,7.0,x\n1.0,3.0,x\n1.0,0.5,x\n");
        let opts = LoadOptions { has_header: true, exclude: vec![] };
        let loaded = load_csv_grouped(f.path(), "grp", &opts).unwrap();
        let err = preprocess(&loaded, CenterScope::PerSubgroup).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('a'), "message should name column `a`: {msg}");
        assert!(msg.to_lowercase().contains("constant") || msg.to_lowercase().contains("variance"));
    }
}
