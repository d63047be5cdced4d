//! Dataset representation, CSV ingestion, fold assignment, and design
//! matrices.
//!
//! Column roles are declared by header prefix: exactly one `y` column,
//! `d_*` for endogenous treatments, `w_*` for excluded instruments, and
//! optional `x_*` for exogenous covariates. All values must parse as finite
//! decimals; missing values are a hard error.

use crate::error::{Error, Result};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use std::io::Write;
use std::path::Path;

/// Immutable observation block (Y, D, X, W). All blocks share the row count,
/// n >= 2, and every entry is finite.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    d: DMatrix<f64>,
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    d_names: Vec<String>,
    x_names: Vec<String>,
    w_names: Vec<String>,
}

impl Dataset {
    /// Build a dataset from raw blocks, synthesizing column names.
    pub fn new(y: DVector<f64>, d: DMatrix<f64>, x: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let d_names = (0..d.ncols()).map(|j| format!("d_{}", j + 1)).collect();
        let x_names = (0..x.ncols()).map(|j| format!("x_{}", j + 1)).collect();
        let w_names = (0..w.ncols()).map(|j| format!("w_{}", j + 1)).collect();
        Self::with_names(y, d, x, w, d_names, x_names, w_names)
    }

    /// Build a dataset with explicit column names.
    pub fn with_names(
        y: DVector<f64>,
        d: DMatrix<f64>,
        x: DMatrix<f64>,
        w: DMatrix<f64>,
        d_names: Vec<String>,
        x_names: Vec<String>,
        w_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
        }
        for (block, rows) in [("d", d.nrows()), ("x", x.nrows()), ("w", w.nrows())] {
            if rows != n {
                return Err(Error::DimensionMismatch(format!(
                    "block `{block}` has {rows} rows but y has {n}"
                )));
            }
        }
        if d.ncols() == 0 {
            return Err(Error::InvalidData("need at least one treatment column".into()));
        }
        if w.ncols() == 0 {
            return Err(Error::InvalidData("need at least one instrument column".into()));
        }
        if d_names.len() != d.ncols() || x_names.len() != x.ncols() || w_names.len() != w.ncols() {
            return Err(Error::DimensionMismatch("column name count mismatch".into()));
        }
        let finite = y.iter().all(|v| v.is_finite())
            && d.iter().all(|v| v.is_finite())
            && x.iter().all(|v| v.is_finite())
            && w.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidData("non-finite value in dataset".into()));
        }
        Ok(Dataset { y, d, x, w, d_names, x_names, w_names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p_d(&self) -> usize {
        self.d.ncols()
    }
    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }
    pub fn p_w(&self) -> usize {
        self.w.ncols()
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn d_names(&self) -> &[String] {
        &self.d_names
    }
    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }
    pub fn w_names(&self) -> &[String] {
        &self.w_names
    }

    /// Names of the full coefficient vector: constant, treatments, covariates.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(1 + self.p_d() + self.p_x());
        names.push("const".to_string());
        names.extend(self.d_names.iter().cloned());
        names.extend(self.x_names.iter().cloned());
        names
    }

    /// The [1, X] block used for partialling out covariates.
    pub fn xbar(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut xbar = DMatrix::zeros(n, 1 + self.p_x());
        xbar.column_mut(0).fill(1.0);
        xbar.view_mut((0, 1), (n, self.p_x())).copy_from(&self.x);
        xbar
    }

    /// Row subset in the given order. Panics on out-of-range indices.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let take = |m: &DMatrix<f64>| {
            DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
        };
        Dataset {
            y: DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]),
            d: take(&self.d),
            x: take(&self.x),
            w: take(&self.w),
            d_names: self.d_names.clone(),
            x_names: self.x_names.clone(),
            w_names: self.w_names.clone(),
        }
    }
}

/// The regressor matrix T = [1, D, X] and technical instrument Z = [1, W, X].
#[derive(Debug, Clone)]
pub struct DesignPair {
    pub t: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

/// Assemble T and Z in the stated column order.
pub fn design_matrices(ds: &Dataset) -> DesignPair {
    let n = ds.n();
    let mut t = DMatrix::zeros(n, 1 + ds.p_d() + ds.p_x());
    t.column_mut(0).fill(1.0);
    t.view_mut((0, 1), (n, ds.p_d())).copy_from(ds.d());
    t.view_mut((0, 1 + ds.p_d()), (n, ds.p_x())).copy_from(ds.x());

    let mut z = DMatrix::zeros(n, 1 + ds.p_w() + ds.p_x());
    z.column_mut(0).fill(1.0);
    z.view_mut((0, 1), (n, ds.p_w())).copy_from(ds.w());
    z.view_mut((0, 1 + ds.p_w()), (n, ds.p_x())).copy_from(ds.x());

    DesignPair { t, z }
}

/// K disjoint index sets covering {0, ..., n-1}, sizes differing by at most 1.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    folds: Vec<Vec<usize>>,
    seed: u64,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.folds.len()
    }
    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn fold(&self, j: usize) -> &[usize] {
        &self.folds[j]
    }
    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    /// All indices not in fold `j`, ascending.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Fold id of each observation.
    pub fn fold_of(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.n()];
        for (j, fold) in self.folds.iter().enumerate() {
            for &i in fold {
                out[i] = j;
            }
        }
        out
    }
}

/// Randomly split {0, ..., n-1} into K folds: a seeded permutation cut into
/// contiguous blocks, remainder rows going to the lowest-index folds.
/// Deterministic given (n, K, seed).
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidConfig(format!(
            "fold count must satisfy 2 <= K <= n, got K={k}, n={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = rng::seed_rng(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let size = base + usize::from(j < extra);
        let mut fold: Vec<usize> = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldAssignment { folds, seed })
}

/// How cross-fitting partitions the data. `FullSample` trains and evaluates
/// on all rows (no splitting) for TSLS-equivalence benchmarks.
#[derive(Debug, Clone)]
pub enum SplitPlan {
    FullSample,
    Folds(FoldAssignment),
}

/// One train/evaluate pair produced by a split plan.
pub struct Split {
    pub fold: usize,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl SplitPlan {
    pub fn splits(&self, n: usize) -> Result<Vec<Split>> {
        match self {
            SplitPlan::FullSample => {
                let all: Vec<usize> = (0..n).collect();
                Ok(vec![Split { fold: 0, train: all.clone(), eval: all }])
            }
            SplitPlan::Folds(fa) => {
                if fa.n() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "fold assignment covers {} rows but data has {n}",
                        fa.n()
                    )));
                }
                Ok((0..fa.k())
                    .map(|j| Split {
                        fold: j,
                        train: fa.complement(j),
                        eval: fa.fold(j).to_vec(),
                    })
                    .collect())
            }
        }
    }

    pub fn k(&self) -> usize {
        match self {
            SplitPlan::FullSample => 1,
            SplitPlan::Folds(fa) => fa.k(),
        }
    }

    /// Seed associated with the split, used to derive nested-split streams.
    pub fn seed(&self) -> u64 {
        match self {
            SplitPlan::FullSample => 0,
            SplitPlan::Folds(fa) => fa.seed(),
        }
    }

    /// Fold id per row.
    pub fn fold_of(&self, n: usize) -> Vec<usize> {
        match self {
            SplitPlan::FullSample => vec![0; n],
            SplitPlan::Folds(fa) => fa.fold_of(),
        }
    }
}

/// Load a dataset from a strict numeric CSV file.
///
/// The header must contain exactly one `y` column, at least one `d_*` and one
/// `w_*` column, and any number of `x_*` columns. With `strict` set, any other
/// header is an error; otherwise unrecognized columns are ignored. Cells must
/// parse as finite decimals; `NaN`, `inf`, and missing cells are rejected with
/// the offending line and column.
pub fn load_csv(path: impl AsRef<Path>, strict: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, strict)
}

fn parse_csv(text: &str, strict: bool) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidData("empty file".into()))?;
    let headers: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Role {
        Y,
        D,
        X,
        W,
        Skip,
    }
    let mut roles = Vec::with_capacity(headers.len());
    let mut y_count = 0usize;
    for h in &headers {
        let role = if *h == "y" {
            y_count += 1;
            Role::Y
        } else if h.starts_with("d_") {
            Role::D
        } else if h.starts_with("x_") {
            Role::X
        } else if h.starts_with("w_") {
            Role::W
        } else if strict {
            return Err(Error::InvalidData(format!(
                "unrecognized column `{h}` (expected y, d_*, x_*, or w_*)"
            )));
        } else {
            Role::Skip
        };
        roles.push(role);
    }
    if y_count == 0 {
        return Err(Error::InvalidData("missing `y` column".into()));
    }
    if y_count > 1 {
        return Err(Error::InvalidData("duplicate `y` column".into()));
    }
    let pick = |role: Role| -> Vec<usize> {
        roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    };
    let d_idx = pick(Role::D);
    let x_idx = pick(Role::X);
    let w_idx = pick(Role::W);
    if d_idx.is_empty() {
        return Err(Error::InvalidData("no `d_*` treatment columns".into()));
    }
    if w_idx.is_empty() {
        return Err(Error::InvalidData("no `w_*` instrument columns".into()));
    }
    let y_idx = pick(Role::Y)[0];

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != headers.len() {
            return Err(Error::Csv {
                line: line_no + 1,
                column: headers.get(cells.len()).unwrap_or(&"<end>").to_string(),
                message: format!("expected {} cells, found {}", headers.len(), cells.len()),
            });
        }
        let mut row = Vec::with_capacity(headers.len());
        for (j, cell) in cells.iter().enumerate() {
            if roles[j] == Role::Skip {
                row.push(0.0);
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::Csv {
                line: line_no + 1,
                column: headers[j].to_string(),
                message: format!("cannot parse `{cell}` as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Csv {
                    line: line_no + 1,
                    column: headers[j].to_string(),
                    message: format!("non-finite value `{cell}`"),
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    let n = rows.len();
    let gather = |idx: &[usize]| DMatrix::from_fn(n, idx.len(), |i, j| rows[i][idx[j]]);
    Dataset::with_names(
        DVector::from_fn(n, |i, _| rows[i][y_idx]),
        gather(&d_idx),
        gather(&x_idx),
        gather(&w_idx),
        d_idx.iter().map(|&i| headers[i].to_string()).collect(),
        x_idx.iter().map(|&i| headers[i].to_string()).collect(),
        w_idx.iter().map(|&i| headers[i].to_string()).collect(),
    )
}

/// Write a dataset as CSV in column-group order y, d_*, x_*, w_*. Values are
/// printed with Rust's shortest round-trip float formatting, so
/// `load_csv(write_csv(ds))` reproduces the dataset bit-exactly.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io { path: path.display().to_string(), source };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let mut write = |s: String| file.write_all(s.as_bytes()).map_err(io_err);

    let mut header = vec!["y".to_string()];
    header.extend(ds.d_names().iter().cloned());
    header.extend(ds.x_names().iter().cloned());
    header.extend(ds.w_names().iter().cloned());
    write(header.join(","))?;
    write("\n".into())?;
    for i in 0..ds.n() {
        let mut cells = vec![format!("{}", ds.y()[i])];
        cells.extend((0..ds.p_d()).map(|j| format!("{}", ds.d()[(i, j)])));
        cells.extend((0..ds.p_x()).map(|j| format!("{}", ds.x()[(i, j)])));
        cells.extend((0..ds.p_w()).map(|j| format!("{}", ds.w()[(i, j)])));
        write(cells.join(","))?;
        write("\n".into())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_basic_schema() {
        let f = write_temp("y,d_treat,w_judge_age\n1.0,0,40\n2.0,1,52\n0.5,0,38\n");
        let ds = load_csv(f.path(), true).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.p_d(), 1);
        assert_eq!(ds.p_w(), 1);
        assert_eq!(ds.p_x(), 0);
        assert_eq!(ds.d_names(), &["d_treat".to_string()]);
    }

    #[test]
    fn load_csv_with_covariates() {
        let f = write_temp("y,d_t,x_a,x_b,w_1\n1,0,1,2,3\n2,1,0,1,2\n");
        let ds = load_csv(f.path(), true).unwrap();
        assert_eq!((ds.p_d(), ds.p_x(), ds.p_w()), (1, 2, 1));
    }

    #[test]
    fn load_csv_rejects_nan_with_location() {
        let f = write_temp("y,d_t,w_1\n1,0,3\n2,NaN,2\n");
        let err = load_csv(f.path(), true).unwrap_err();
        match err {
            Error::Csv { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "d_t");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_missing_roles() {
        let f = write_temp("y,w_1\n1,2\n3,4\n");
        assert!(matches!(load_csv(f.path(), true), Err(Error::InvalidData(_))));
        let f = write_temp("d_1,w_1\n1,2\n3,4\n");
        assert!(matches!(load_csv(f.path(), true), Err(Error::InvalidData(_))));
        let f = write_temp("");
        assert!(matches!(load_csv(f.path(), true), Err(Error::InvalidData(_))));
    }

    #[test]
    fn strict_rejects_unknown_columns_lenient_skips() {
        let f = write_temp("y,d_1,w_1,note\n1,0,2,9\n2,1,3,9\n");
        assert!(load_csv(f.path(), true).is_err());
        let ds = load_csv(f.path(), false).unwrap();
        assert_eq!((ds.p_d(), ds.p_w()), (1, 1));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let y = DVector::from_vec(vec![0.1234567890123456, -7.5e-12, 3.0]);
        let d = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 1.0]);
        let x = DMatrix::from_row_slice(3, 1, &[0.333333333333333, 1e300, -2.5]);
        let w = DMatrix::from_row_slice(3, 2, &[1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
        let ds = Dataset::new(y, d, x, w).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, f.path()).unwrap();
        let back = load_csv(f.path(), true).unwrap();
        assert_eq!(ds.y().as_slice(), back.y().as_slice());
        assert_eq!(ds.d().as_slice(), back.d().as_slice());
        assert_eq!(ds.x().as_slice(), back.x().as_slice());
        assert_eq!(ds.w().as_slice(), back.w().as_slice());
    }

    #[test]
    fn design_matrices_shapes_and_values() {
        let ds = Dataset::new(
            DVector::from_vec(vec![0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[2.0, 4.0]),
            DMatrix::from_row_slice(2, 1, &[3.0, 6.0]),
            DMatrix::from_row_slice(2, 1, &[5.0, 7.0]),
        )
        .unwrap();
        let pair = design_matrices(&ds);
        assert_eq!(pair.t.ncols(), 1 + 1 + 1);
        assert_eq!(pair.z.ncols(), 1 + 1 + 1);
        assert_eq!(pair.t.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
        assert_eq!(pair.z.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 5.0, 3.0]);
    }

    #[test]
    fn design_matrices_without_covariates() {
        let ds = Dataset::new(
            DVector::from_vec(vec![0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[2.0, 4.0]),
            DMatrix::zeros(2, 0),
            DMatrix::from_row_slice(2, 1, &[5.0, 7.0]),
        )
        .unwrap();
        let pair = design_matrices(&ds);
        assert_eq!(pair.t.ncols(), 2);
        assert_eq!(pair.z.ncols(), 2);
    }

    #[test]
    fn dataset_rejects_non_finite_and_tiny_inputs() {
        let y = DVector::from_vec(vec![1.0, f64::NAN]);
        let d = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let w = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(Dataset::new(y, d.clone(), DMatrix::zeros(2, 0), w.clone()).is_err());
        let y1 = DVector::from_vec(vec![1.0]);
        assert!(Dataset::new(y1, d.rows(0, 1).into_owned(), DMatrix::zeros(1, 0), w.rows(0, 1).into_owned()).is_err());
    }

    #[test]
    fn folds_partition_and_balance() {
        let fa = make_folds(5, 2, 9).unwrap();
        let mut all: Vec<usize> = fa.folds().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        let mut sizes: Vec<usize> = fa.folds().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 3]);
        // Remainder goes to the lowest-index fold.
        assert_eq!(fa.fold(0).len(), 3);
    }

    #[test]
    fn folds_are_deterministic() {
        let a = make_folds(64, 4, 1234).unwrap();
        let b = make_folds(64, 4, 1234).unwrap();
        assert_eq!(a.folds(), b.folds());
        let c = make_folds(64, 4, 1235).unwrap();
        assert_ne!(a.folds(), c.folds());
    }

    #[test]
    fn folds_reject_bad_k() {
        assert!(make_folds(4, 1, 0).is_err());
        assert!(make_folds(4, 5, 0).is_err());
        assert!(make_folds(4, 2, 0).is_ok());
    }
}
