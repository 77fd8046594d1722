//! Two-group regression datasets: loading, synthesis and spectral statistics.
//!
//! Rows are always stored group-1-first: the first `m` rows belong to group 1
//! and the remaining `n − m` rows to group 2. Within a group, rows keep the
//! order in which they were read.

use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Group label of a row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Group {
    One,
    Two,
}

impl Group {
    pub fn code(self) -> u8 {
        match self {
            Group::One => 1,
            Group::Two => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Group::One),
            2 => Some(Group::Two),
            _ => None,
        }
    }
}

impl From<Group> for u8 {
    fn from(g: Group) -> u8 {
        g.code()
    }
}

impl TryFrom<u8> for Group {
    type Error = String;

    fn try_from(code: u8) -> std::result::Result<Self, String> {
        Group::from_code(code).ok_or_else(|| format!("group must be 1 or 2, got {code}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    targets: DVector<f64>,
    m: usize,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset whose first `m` rows are group 1.
    pub fn new(features: DMatrix<f64>, targets: DVector<f64>, m: usize) -> Result<Self> {
        let names = (1..=features.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(features, targets, m, names)
    }

    pub fn with_names(
        features: DMatrix<f64>,
        targets: DVector<f64>,
        m: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if targets.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: targets.len(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Dimension {
                expected: features.ncols(),
                got: feature_names.len(),
            });
        }
        if m == 0 {
            return Err(Error::validation("group 1 has zero rows"));
        }
        if m >= n {
            return Err(Error::validation("group 2 has zero rows"));
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("dataset contains non-finite values"));
        }
        Ok(Self {
            features,
            targets,
            m,
            feature_names,
        })
    }

    /// Stacks group 1 above group 2.
    pub fn from_groups(
        x1: &DMatrix<f64>,
        y1: &DVector<f64>,
        x2: &DMatrix<f64>,
        y2: &DVector<f64>,
    ) -> Result<Self> {
        if x1.ncols() != x2.ncols() {
            return Err(Error::Dimension {
                expected: x1.ncols(),
                got: x2.ncols(),
            });
        }
        let (m, n2, p) = (x1.nrows(), x2.nrows(), x1.ncols());
        let mut x = DMatrix::zeros(m + n2, p);
        x.rows_mut(0, m).copy_from(x1);
        x.rows_mut(m, n2).copy_from(x2);
        let mut y = DVector::zeros(m + n2);
        y.rows_mut(0, m).copy_from(y1);
        y.rows_mut(m, n2).copy_from(y2);
        Self::new(x, y, m)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Size of group 1.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Size of group 2 (`n − m`).
    pub fn n2(&self) -> usize {
        self.n() - self.m
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn x1(&self) -> DMatrixView<'_, f64> {
        self.features.rows(0, self.m)
    }

    pub fn x2(&self) -> DMatrixView<'_, f64> {
        self.features.rows(self.m, self.n2())
    }

    pub fn y1(&self) -> DVectorView<'_, f64> {
        self.targets.rows(0, self.m)
    }

    pub fn y2(&self) -> DVectorView<'_, f64> {
        self.targets.rows(self.m, self.n2())
    }

    pub fn group_of(&self, row: usize) -> Group {
        if row < self.m {
            Group::One
        } else {
            Group::Two
        }
    }

    /// Residual vectors `y_g − X_g β` of both groups.
    pub fn residuals(&self, beta: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_beta(beta)?;
        let r = &self.targets - &self.features * beta;
        Ok((r.rows(0, self.m).into_owned(), r.rows(self.m, self.n2()).into_owned()))
    }

    /// Residual sums of squares `(‖y₁ − X₁β‖², ‖y₂ − X₂β‖²)`.
    pub fn group_rss(&self, beta: &DVector<f64>) -> Result<(f64, f64)> {
        let (r1, r2) = self.residuals(beta)?;
        Ok((r1.norm_squared(), r2.norm_squared()))
    }

    pub(crate) fn check_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::Dimension {
                expected: self.p(),
                got: beta.len(),
            });
        }
        Ok(())
    }

    /// Same targets and groups, new feature matrix.
    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::Dimension {
                expected: self.features.len(),
                got: features.len(),
            });
        }
        Self::with_names(features, self.targets.clone(), self.m, self.feature_names.clone())
    }

    /// Relabels the groups: old group 2 becomes group 1 (rows moved to the front).
    pub fn swap_groups(&self) -> Self {
        let (m, n2) = (self.m, self.n2());
        let mut x = DMatrix::zeros(self.n(), self.p());
        x.rows_mut(0, n2).copy_from(&self.x2());
        x.rows_mut(n2, m).copy_from(&self.x1());
        let mut y = DVector::zeros(self.n());
        y.rows_mut(0, n2).copy_from(&self.y2());
        y.rows_mut(n2, m).copy_from(&self.y1());
        Self {
            features: x,
            targets: y,
            m: n2,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Inserts one row into the given group. Group-1 rows go to the front,
    /// group-2 rows to the back, so the original rows keep their order.
    pub fn insert_row(&self, x: &DVector<f64>, y: f64, group: Group) -> Result<Self> {
        if x.len() != self.p() {
            return Err(Error::Dimension {
                expected: self.p(),
                got: x.len(),
            });
        }
        let (n, p) = (self.n(), self.p());
        let mut feats = DMatrix::zeros(n + 1, p);
        let mut targets = DVector::zeros(n + 1);
        let (at, m) = match group {
            Group::One => (0, self.m + 1),
            Group::Two => (n, self.m),
        };
        let offset = usize::from(group == Group::One);
        feats.rows_mut(offset, n).copy_from(&self.features);
        targets.rows_mut(offset, n).copy_from(&self.targets);
        feats.row_mut(at).copy_from(&x.transpose());
        targets[at] = y;
        Self::with_names(feats, targets, m, self.feature_names.clone())
    }

    /// Z-scores every feature column. Targets are left in raw units.
    pub fn standardized(&self) -> Self {
        let mut x = self.features.clone();
        let n = self.n() as f64;
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for v in col.iter_mut() {
                *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
            }
        }
        Self {
            features: x,
            ..self.clone()
        }
    }
}

/// Column roles for CSV input.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target: String,
    pub group: String,
    /// Feature columns in order; `None` takes every other column.
    pub features: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            target: "target".into(),
            group: "group".into(),
            features: None,
        }
    }
}

/// Reads a headered CSV and reorders rows group-1-first.
///
/// Parse errors report the 1-based data row (header excluded) and the column.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv(reader: impl std::io::Read, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("missing column `{name}`")))
    };
    let target_idx = find(&schema.target)?;
    let group_idx = find(&schema.group)?;
    let feature_idx: Vec<usize> = match &schema.features {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != target_idx && i != group_idx)
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::validation("no feature columns"));
    }

    let mut rows1: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut rows2: Vec<(Vec<f64>, f64)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            let column = headers[idx].clone();
            if raw.is_empty() {
                return Err(Error::Parse {
                    row,
                    column,
                    message: "empty cell".into(),
                });
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(Error::Parse {
                    row,
                    column,
                    message: format!("non-finite value `{raw}`"),
                }),
                Err(_) => Err(Error::Parse {
                    row,
                    column,
                    message: format!("not a number: `{raw}`"),
                }),
            }
        };
        let x: Vec<f64> = feature_idx.iter().map(|&j| cell(j)).collect::<Result<_>>()?;
        let y = cell(target_idx)?;
        let g = cell(group_idx)?;
        if g == 1.0 {
            rows1.push((x, y));
        } else if g == 2.0 {
            rows2.push((x, y));
        } else {
            return Err(Error::Parse {
                row,
                column: headers[group_idx].clone(),
                message: format!("group must be 1 or 2, got {g}"),
            });
        }
    }
    if rows1.is_empty() {
        return Err(Error::validation("group 1 has zero rows"));
    }
    if rows2.is_empty() {
        return Err(Error::validation("group 2 has zero rows"));
    }
    let m = rows1.len();
    let n = m + rows2.len();
    let p = feature_idx.len();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (i, (xi, yi)) in rows1.into_iter().chain(rows2).enumerate() {
        for (j, v) in xi.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        y[i] = yi;
    }
    let names = feature_idx.iter().map(|&j| headers[j].clone()).collect();
    Dataset::with_names(x, y, m, names)
}

/// Writes the canonical CSV layout: feature columns, `target`, `group`.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    write_csv_to(ds, file)
}

pub fn write_csv_to(ds: &Dataset, writer: impl std::io::Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ds.feature_names().to_vec();
    header.push("target".into());
    header.push("group".into());
    wtr.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.features().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.targets()[i].to_string());
        rec.push(ds.group_of(i).code().to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

/// Spectral summary used by the solvers' budget assumptions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Largest eigenvalue of `X₁ᵀX₁`.
    pub v_x1_max: f64,
    /// Largest eigenvalue of `X₂ᵀX₂`.
    pub v_x2_max: f64,
    /// Smallest point budget for which every pairwise PSD interval is nonempty.
    pub eta_min: f64,
    /// Mean over rows of `‖[xᵢ; yᵢ]‖₂`.
    pub eta_d: f64,
    /// Smallest singular value of the full feature matrix.
    pub sigma_min: f64,
}

/// `η_min² = max{(n+1)v₁/(m(m+1)), (n+1)v₂/((n−m+1)(n−m))}`.
pub fn eta_min_squared(n: usize, m: usize, v_x1_max: f64, v_x2_max: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    let a = (n + 1.0) * v_x1_max / (m * (m + 1.0));
    let b = (n + 1.0) * v_x2_max / ((n - m + 1.0) * (n - m));
    a.max(b)
}

pub fn compute_stats(ds: &Dataset) -> DatasetStats {
    let g1 = ds.x1().transpose() * ds.x1();
    let g2 = ds.x2().transpose() * ds.x2();
    let v_x1_max = linalg::max_eigenvalue(&g1).max(0.0);
    let v_x2_max = linalg::max_eigenvalue(&g2).max(0.0);
    let eta_min = eta_min_squared(ds.n(), ds.m(), v_x1_max, v_x2_max).sqrt();
    let eta_d = (0..ds.n())
        .map(|i| (ds.features().row(i).norm_squared() + ds.targets()[i].powi(2)).sqrt())
        .sum::<f64>()
        / ds.n() as f64;
    let sigma_min = ds
        .features()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    DatasetStats {
        v_x1_max,
        v_x2_max,
        eta_min,
        eta_d,
        sigma_min,
    }
}

/// Parameters of the two-group linear generator
/// `y₁ = X₁β₀,₁ + c₁ + ε`, `y₂ = X₂β₀,₂ + ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub m: usize,
    pub n2: usize,
    pub p: usize,
    pub beta01: Vec<f64>,
    pub beta02: Vec<f64>,
    /// Per-row offset for group 1; a single entry is broadcast.
    pub group1_offset: Vec<f64>,
    pub noise_std: f64,
    pub feature_low: f64,
    pub feature_high: f64,
    pub seed: u64,
}

impl SynthParams {
    /// 100 + 100 rows, 5 features on U(0, 10), β₀,₁ = 1, offset 1, β₀,₂ = 1.1, unit noise.
    pub fn reference(seed: u64) -> Self {
        Self {
            m: 100,
            n2: 100,
            p: 5,
            beta01: vec![1.0; 5],
            beta02: vec![1.1; 5],
            group1_offset: vec![1.0],
            noise_std: 1.0,
            feature_low: 0.0,
            feature_high: 10.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n2 == 0 || self.p == 0 {
            return Err(Error::validation("synthetic sizes must be positive"));
        }
        if self.beta01.len() != self.p || self.beta02.len() != self.p {
            return Err(Error::validation("true coefficient vectors must have length p"));
        }
        if !(self.group1_offset.len() == 1 || self.group1_offset.len() == self.m) {
            return Err(Error::validation("group1_offset must have length 1 or m"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::validation("noise_std must be nonnegative"));
        }
        if !(self.feature_low < self.feature_high) {
            return Err(Error::validation("feature_low must be below feature_high"));
        }
        Ok(())
    }
}

/// Standard normal variate by the Box–Muller cosine branch; consumes two uniforms.
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Draws a synthetic dataset.
///
/// The stream is ChaCha8 seeded with `seed`; it fills X₁ then X₂ row-major
/// with uniforms, then draws group-1 noise followed by group-2 noise.
pub fn synth_generate(params: &SynthParams) -> Result<Dataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (m, n2, p) = (params.m, params.n2, params.p);
    let width = params.feature_high - params.feature_low;
    let mut uniform_block = |rows: usize| {
        let mut x = DMatrix::zeros(rows, p);
        for i in 0..rows {
            for j in 0..p {
                let u: f64 = rng.random();
                x[(i, j)] = params.feature_low + width * u;
            }
        }
        x
    };
    let x1 = uniform_block(m);
    let x2 = uniform_block(n2);
    let b1 = DVector::from_column_slice(&params.beta01);
    let b2 = DVector::from_column_slice(&params.beta02);
    let mut y1 = &x1 * &b1;
    for i in 0..m {
        let off = if params.group1_offset.len() == 1 {
            params.group1_offset[0]
        } else {
            params.group1_offset[i]
        };
        y1[i] += off + params.noise_std * std_normal(&mut rng);
    }
    let mut y2 = &x2 * &b2;
    for i in 0..n2 {
        y2[i] += params.noise_std * std_normal(&mut rng);
    }
    Dataset::from_groups(&x1, &y1, &x2, &y2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_reorders_groups_first() {
        let text = "a,b,target,group\n1,2,3,2\n4,5,6,1\n7,8,9,2\n10,11,12,1\n";
        let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.m(), 2);
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.targets().as_slice(), &[6.0, 12.0, 3.0, 9.0]);
        assert_eq!(ds.features().row(0).iter().copied().collect::<Vec<_>>(), vec![4.0, 5.0]);
        assert_eq!(ds.feature_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn csv_blank_target_names_row() {
        let text = "a,target,group\n1,2,1\n3,,2\n";
        let err = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "target");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn csv_nan_and_bad_group() {
        let text = "a,target,group\nNaN,2,1\n3,1,2\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &CsvSchema::default()),
            Err(Error::Parse { row: 1, .. })
        ));
        let text = "a,target,group\n1,2,3\n";
        assert!(read_csv(text.as_bytes(), &CsvSchema::default()).is_err());
    }

    #[test]
    fn csv_empty_group_is_validation_error() {
        let text = "a,target,group\n1,2,1\n3,1,1\n";
        let err = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn identity_spectrum() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let y = DVector::zeros(3);
        let ds = Dataset::from_groups(&eye, &y, &eye, &y).unwrap();
        let st = compute_stats(&ds);
        assert!((st.v_x1_max - 1.0).abs() < 1e-12);
        assert!((st.v_x2_max - 1.0).abs() < 1e-12);
        // (n+1)/(m(m+1)) with n = 6, m = 3
        assert!((st.eta_min.powi(2) - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_synth_has_zero_residual() {
        let params = SynthParams {
            m: 7,
            n2: 5,
            p: 3,
            beta01: vec![0.5, -1.0, 2.0],
            beta02: vec![0.5, -1.0, 2.0],
            group1_offset: vec![0.0],
            noise_std: 0.0,
            feature_low: -1.0,
            feature_high: 1.0,
            seed: 9,
        };
        let ds = synth_generate(&params).unwrap();
        let beta = DVector::from_vec(params.beta01.clone());
        let (r1, r2) = ds.group_rss(&beta).unwrap();
        assert!(r1 < 1e-24 && r2 < 1e-24);
        assert!(ds.features().iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn synth_rejects_bad_params() {
        let mut p = SynthParams::reference(1);
        p.feature_low = 10.0;
        assert!(synth_generate(&p).is_err());
        let mut p = SynthParams::reference(1);
        p.noise_std = -1.0;
        assert!(synth_generate(&p).is_err());
    }

    #[test]
    fn insert_row_bookkeeping() {
        let ds = synth_generate(&SynthParams::reference(3)).unwrap();
        let x = DVector::from_element(5, 0.5);
        let a = ds.insert_row(&x, 1.0, Group::One).unwrap();
        assert_eq!((a.n(), a.m()), (201, 101));
        assert_eq!(a.targets()[0], 1.0);
        assert_eq!(a.targets().rows(1, 200), ds.targets().rows(0, 200));
        let b = ds.insert_row(&x, 1.0, Group::Two).unwrap();
        assert_eq!((b.n(), b.m()), (201, 100));
        assert_eq!(b.targets()[200], 1.0);
    }

    #[test]
    fn swap_groups_twice_is_identity() {
        let ds = synth_generate(&SynthParams::reference(4)).unwrap();
        assert_eq!(ds.swap_groups().swap_groups(), ds);
    }
}
