//! Tabular datasets: CSV ingestion with encoding, vertical partitioning,
//! train/test splitting and synthetic data with planted binary features.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, Matrix, RankTolerance};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Binary,
    OneHot { group: usize, category: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn binary_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == FeatureKind::Binary)
            .map(|(i, _)| i)
            .collect()
    }

    /// Column indices of each one-hot group, keyed by group id.
    pub fn onehot_groups(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.columns.iter().enumerate() {
            if let FeatureKind::OneHot { group, .. } = c.kind {
                groups.entry(group).or_default().push(i);
            }
        }
        groups
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            columns: idx.iter().map(|&i| self.columns[i].clone()).collect(),
        }
    }
}

/// Feature matrix, integer class labels and per-column schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    schema: FeatureSchema,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        schema: FeatureSchema,
        class_count: usize,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if schema.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                context: "dataset schema",
                expected: features.cols(),
                got: schema.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        for j in schema.binary_columns() {
            if (0..features.rows()).any(|i| {
                let v = features.get(i, j);
                v != 0.0 && v != 1.0
            }) {
                return Err(Error::InvalidColumns(format!("binary column {j} has non 0/1 values")));
            }
        }
        for (g, cols) in schema.onehot_groups() {
            for i in 0..features.rows() {
                let s: f64 = cols.iter().map(|&j| features.get(i, j)).sum();
                if s != 1.0 {
                    return Err(Error::InvalidColumns(format!(
                        "one-hot group {g} row {i} sums to {s}"
                    )));
                }
            }
        }
        Ok(Self {
            features,
            labels,
            schema,
            class_count,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn cols(&self) -> usize {
        self.features.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            schema: self.schema.clone(),
            class_count: self.class_count,
        }
    }

    /// Share of the most frequent label.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / self.labels.len().max(1) as f64
    }
}

/// Column ownership between the passive party (A) and the active party (B).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalSplit {
    pub passive_cols: Vec<usize>,
    pub active_cols: Vec<usize>,
}

impl VerticalSplit {
    pub fn new(passive_cols: Vec<usize>, active_cols: Vec<usize>) -> Self {
        Self {
            passive_cols,
            active_cols,
        }
    }

    /// First `d_a` columns passive, the remaining `total - d_a` active.
    pub fn leading(d_a: usize, total: usize) -> Self {
        Self::new((0..d_a).collect(), (d_a..total).collect())
    }

    pub fn validate(&self, total: usize) -> Result<()> {
        if self.passive_cols.is_empty() {
            return Err(Error::InvalidSplit("passive side has no columns".into()));
        }
        let mut seen = BTreeSet::new();
        for &c in self.passive_cols.iter().chain(&self.active_cols) {
            if c >= total {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    len: total,
                });
            }
            if !seen.insert(c) {
                return Err(Error::OverlappingSplit(c));
            }
        }
        if seen.len() != total {
            return Err(Error::InvalidSplit(format!(
                "{} of {total} columns assigned",
                seen.len()
            )));
        }
        Ok(())
    }
}

pub fn vertical_split(ds: &Dataset, split: &VerticalSplit) -> Result<(Matrix, Matrix)> {
    split.validate(ds.cols())?;
    Ok((
        ds.features.select_columns(&split.passive_cols),
        ds.features.select_columns(&split.active_cols),
    ))
}

/// Inverse of [`vertical_split`].
pub fn reassemble(x_a: &Matrix, x_b: &Matrix, split: &VerticalSplit) -> Matrix {
    let total = split.passive_cols.len() + split.active_cols.len();
    let mut out = Matrix::zeros(x_a.rows(), total);
    for i in 0..x_a.rows() {
        for (k, &c) in split.passive_cols.iter().enumerate() {
            out.set(i, c, x_a.get(i, k));
        }
        for (k, &c) in split.active_cols.iter().enumerate() {
            out.set(i, c, x_b.get(i, k));
        }
    }
    out
}

pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = ds.rows();
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = perm.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

/// How a CSV column should be encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnHint {
    Numeric,
    Binary,
    Categorical,
}

pub fn load_csv(
    path: &Path,
    label_column: &str,
    hints: Option<&HashMap<String, ColumnHint>>,
) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    load_csv_from_reader(file, label_column, hints)
}

/// Reads a JSON object mapping column names to hints.
pub fn load_schema_hints(path: &Path) -> Result<HashMap<String, ColumnHint>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn load_csv_from_reader<R: Read>(
    reader: R,
    label_column: &str,
    hints: Option<&HashMap<String, ColumnHint>>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabel(label_column.to_owned()))?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            if field.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("missing value in column `{}`", headers[j]),
                });
            }
            raw[j].push(field.to_owned());
        }
    }
    let n = raw[0].len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }

    let (labels, class_count) = encode_labels(&raw[label_idx]);

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut specs = Vec::new();
    let mut next_group = 0;
    for (j, name) in headers.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        let values = &raw[j];
        let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
        let distinct: BTreeSet<&str> = values.iter().map(String::as_str).collect();
        let hint = hints.and_then(|h| h.get(name)).copied();
        let hint = hint.unwrap_or(match &numeric {
            Some(vals) if vals.iter().all(|&v| v == 0.0 || v == 1.0) => ColumnHint::Binary,
            Some(_) => ColumnHint::Numeric,
            None if distinct.len() <= 2 => ColumnHint::Binary,
            None => ColumnHint::Categorical,
        });
        match hint {
            ColumnHint::Numeric => {
                let vals = numeric.ok_or_else(|| Error::Parse {
                    line: 0,
                    message: format!("column `{name}` is not numeric"),
                })?;
                columns.push(standardize(&vals));
                specs.push(ColumnSpec {
                    name: name.clone(),
                    kind: FeatureKind::Numeric,
                });
            }
            ColumnHint::Binary => {
                if distinct.len() > 2 {
                    return Err(Error::InvalidColumns(format!(
                        "column `{name}` hinted binary has {} distinct values",
                        distinct.len()
                    )));
                }
                let col = match &numeric {
                    Some(vals) => {
                        let hi = vals.iter().copied().fold(f64::MIN, f64::max);
                        let lo = vals.iter().copied().fold(f64::MAX, f64::min);
                        if vals.iter().all(|&v| v == 0.0 || v == 1.0) {
                            vals.clone()
                        } else {
                            vals.iter().map(|&v| if v == hi && hi != lo { 1.0 } else { 0.0 }).collect()
                        }
                    }
                    None => {
                        let one = distinct.iter().nth(1).copied();
                        values.iter().map(|v| f64::from(Some(v.as_str()) == one)).collect()
                    }
                };
                columns.push(col);
                specs.push(ColumnSpec {
                    name: name.clone(),
                    kind: FeatureKind::Binary,
                });
            }
            ColumnHint::Categorical => {
                let group = next_group;
                next_group += 1;
                for cat in &distinct {
                    columns.push(values.iter().map(|v| f64::from(v == cat)).collect());
                    specs.push(ColumnSpec {
                        name: format!("{name}={cat}"),
                        kind: FeatureKind::OneHot {
                            group,
                            category: (*cat).to_owned(),
                        },
                    });
                }
            }
        }
    }
    if columns.is_empty() {
        return Err(Error::InvalidColumns("no feature columns".into()));
    }
    let d = columns.len();
    let features = Matrix::new(n, d, (0..n * d).map(|k| columns[k % d][k / d]).collect())?;
    Dataset::new(features, labels, FeatureSchema { columns: specs }, class_count)
}

fn encode_labels(values: &[String]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    let order: Vec<String> = match numeric {
        Some(nums) => {
            let mut pairs: Vec<(f64, &String)> = nums.into_iter().zip(values).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut out: Vec<String> = Vec::new();
            for (_, s) in pairs {
                if out.last() != Some(s) && !out.contains(s) {
                    out.push(s.clone());
                }
            }
            out
        }
        None => values
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let ids: HashMap<&str, usize> = order
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    (values.iter().map(|v| ids[v.as_str()]).collect(), order.len())
}

/// Zero mean, unit (population) variance; constant columns are only centred.
fn standardize(vals: &[f64]) -> Vec<f64> {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let centred: Vec<f64> = vals.iter().map(|v| v - mean).collect();
    if sd == 0.0 {
        return centred;
    }
    let scaled: Vec<f64> = centred.iter().map(|v| v / sd).collect();
    // one correction pass removes the residual rounding in the mean
    let m2 = scaled.iter().sum::<f64>() / n;
    scaled.into_iter().map(|v| v - m2).collect()
}

/// Synthetic data: Gaussian columns plus planted binary and one-hot columns
/// on the passive side, labels from a noisy random linear threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d_a: usize,
    #[serde(default)]
    pub d_b: usize,
    #[serde(default)]
    pub binary_cols: Vec<usize>,
    #[serde(default)]
    pub onehot_group: Option<Vec<usize>>,
    /// Standard deviation of the label noise, relative to the score spread.
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_label_noise() -> f64 {
    0.3
}

impl SynthSpec {
    pub fn new(n: usize, d_a: usize, d_b: usize, seed: u64) -> Self {
        Self {
            n,
            d_a,
            d_b,
            binary_cols: Vec::new(),
            onehot_group: None,
            label_noise: default_label_noise(),
            seed,
        }
    }

    pub fn with_binary(mut self, cols: Vec<usize>) -> Self {
        self.binary_cols = cols;
        self
    }

    pub fn with_onehot(mut self, cols: Vec<usize>) -> Self {
        self.onehot_group = Some(cols);
        self
    }
}

/// Passive-only synthetic dataset with `d_a` columns.
pub fn synth_planted(
    n: usize,
    d_a: usize,
    binary_cols: &[usize],
    onehot_group: Option<&[usize]>,
    seed: u64,
) -> Result<Dataset> {
    let mut spec = SynthSpec::new(n, d_a, 0, seed).with_binary(binary_cols.to_vec());
    spec.onehot_group = onehot_group.map(<[usize]>::to_vec);
    synth_dataset(&spec)
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let d = spec.d_a + spec.d_b;
    if spec.n == 0 || spec.d_a == 0 {
        return Err(Error::InvalidColumns("need n >= 1 and d_a >= 1".into()));
    }
    let binary: BTreeSet<usize> = spec.binary_cols.iter().copied().collect();
    if binary.len() != spec.binary_cols.len() || binary.iter().any(|&c| c >= spec.d_a) {
        return Err(Error::InvalidColumns(format!(
            "binary columns {:?} must be distinct and < d_a = {}",
            spec.binary_cols, spec.d_a
        )));
    }
    let group: Vec<usize> = spec.onehot_group.clone().unwrap_or_default();
    let group_set: BTreeSet<usize> = group.iter().copied().collect();
    if group_set.len() != group.len()
        || group.iter().any(|&c| c >= spec.d_a || binary.contains(&c))
        || group.len() == 1
    {
        return Err(Error::InvalidColumns(format!(
            "one-hot group {group:?} must hold >= 2 distinct passive columns disjoint from binaries"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features;
    let mut attempts = 0;
    loop {
        features = Matrix::zeros(spec.n, d);
        for i in 0..spec.n {
            let hot = if group.is_empty() {
                None
            } else {
                Some(group[rng.random_range(0..group.len())])
            };
            for j in 0..d {
                let v = if binary.contains(&j) {
                    f64::from(rng.random_bool(0.5))
                } else if group_set.contains(&j) {
                    f64::from(hot == Some(j))
                } else {
                    StandardNormal.sample(&mut rng)
                };
                features.set(i, j, v);
            }
        }
        attempts += 1;
        if spec.n < d || numerical_rank(&features, RankTolerance::default()) == d || attempts >= 8 {
            break;
        }
    }

    // centred random linear score, thresholded at zero after additive noise
    let weights: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let centre: Vec<f64> = (0..d)
        .map(|j| {
            if binary.contains(&j) {
                0.5
            } else if group_set.contains(&j) {
                1.0 / group.len() as f64
            } else {
                0.0
            }
        })
        .collect();
    let scores: Vec<f64> = (0..spec.n)
        .map(|i| {
            features
                .row(i)
                .iter()
                .zip(&weights)
                .zip(&centre)
                .map(|((x, w), c)| (x - c) * w)
                .sum()
        })
        .collect();
    let spread = (scores.iter().map(|s| s * s).sum::<f64>() / spec.n as f64).sqrt();
    let labels: Vec<usize> = scores
        .iter()
        .map(|s| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            usize::from(s + spec.label_noise * spread * noise > 0.0)
        })
        .collect();

    let columns = (0..d)
        .map(|j| ColumnSpec {
            name: format!("f{j}"),
            kind: if binary.contains(&j) {
                FeatureKind::Binary
            } else if let Some(pos) = group.iter().position(|&g| g == j) {
                FeatureKind::OneHot {
                    group: 0,
                    category: format!("c{pos}"),
                }
            } else {
                FeatureKind::Numeric
            },
        })
        .collect();
    Dataset::new(features, labels, FeatureSchema { columns }, 2)
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    rows: usize,
    cols: usize,
    class_count: usize,
    labels: Vec<usize>,
    schema: FeatureSchema,
}

/// Writes `<stem>.bin` (row-major little-endian f64) and `<stem>.json`.
pub fn save_cache(ds: &Dataset, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.bin")), f64s_to_le_bytes(ds.features.data()))?;
    let side = CacheSidecar {
        rows: ds.rows(),
        cols: ds.cols(),
        class_count: ds.class_count,
        labels: ds.labels.clone(),
        schema: ds.schema.clone(),
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&side)?,
    )?;
    Ok(())
}

pub fn load_cache(dir: &Path, stem: &str) -> Result<Dataset> {
    let side: CacheSidecar =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    let data = le_bytes_to_f64s(&bytes)?;
    let features = Matrix::new(side.rows, side.cols, data)?;
    Dataset::new(features, side.labels, side.schema, side.class_count)
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn le_bytes_to_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str) -> Result<Dataset> {
        load_csv_from_reader(text.as_bytes(), "y", None)
    }

    #[test]
    fn numeric_column_is_standardized() {
        let ds = csv("x,y\n1,0\n2,1\n3,0\n").unwrap();
        let col = ds.features().column(0);
        let expect = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in col.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(ds.schema().columns[0].kind, FeatureKind::Numeric);
        assert_eq!(ds.labels(), &[0, 1, 0]);
    }

    #[test]
    fn yes_no_column_becomes_binary() {
        let ds = csv("contact,y\nyes,a\nno,b\nyes,a\n").unwrap();
        assert_eq!(ds.cols(), 1);
        assert_eq!(ds.features().column(0), vec![1.0, 0.0, 1.0]);
        assert_eq!(ds.schema().binary_columns(), vec![0]);
        assert_eq!(ds.class_count(), 2);
    }

    #[test]
    fn four_categories_expand_to_onehot() {
        let ds = csv("soil,y\nA,0\nB,1\nC,0\nD,1\nB,0\n").unwrap();
        assert_eq!(ds.cols(), 4);
        let groups = ds.schema().onehot_groups();
        assert_eq!(groups[&0], vec![0, 1, 2, 3]);
        for i in 0..ds.rows() {
            let s: f64 = ds.features().row(i).iter().sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(csv("x,z\n1,2\n"), Err(Error::MissingLabel(_))));
        assert!(matches!(csv("x,y\n"), Err(Error::EmptyDataset)));
        assert!(matches!(csv("x,y\n1,0\n2\n"), Err(Error::Parse { .. })));
        assert!(matches!(csv("x,y\n1,0\n,1\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn hints_override_inference() {
        let mut hints = HashMap::new();
        hints.insert("x".to_owned(), ColumnHint::Categorical);
        let ds = load_csv_from_reader("x,y\n1,0\n2,1\n3,0\n".as_bytes(), "y", Some(&hints)).unwrap();
        assert_eq!(ds.cols(), 3);
    }

    #[test]
    fn vertical_split_examples() {
        let ds = synth_planted(10, 4, &[], None, 1).unwrap();
        let (xa, xb) = vertical_split(&ds, &VerticalSplit::new(vec![0, 1], vec![2, 3])).unwrap();
        assert_eq!(xa.column(0), ds.features().column(0));
        assert_eq!(xa.column(1), ds.features().column(1));
        assert_eq!(xb.cols(), 2);

        let split = VerticalSplit::new(vec![1, 3], vec![0, 2]);
        let (xa, xb) = vertical_split(&ds, &split).unwrap();
        assert_eq!(&reassemble(&xa, &xb, &split), ds.features());

        assert!(matches!(
            vertical_split(&ds, &VerticalSplit::new(vec![0, 1], vec![1, 2, 3])),
            Err(Error::OverlappingSplit(1))
        ));
        assert!(matches!(
            vertical_split(&ds, &VerticalSplit::new(vec![0, 9], vec![1, 2, 3])),
            Err(Error::IndexOutOfRange { index: 9, .. })
        ));
    }

    #[test]
    fn bank_like_split_width() {
        let ds = synth_dataset(&SynthSpec::new(50, 8, 12, 3).with_binary(vec![2])).unwrap();
        let (xa, xb) = vertical_split(&ds, &VerticalSplit::leading(8, 20)).unwrap();
        assert_eq!(xa.cols(), 8);
        assert_eq!(xb.cols(), 12);
    }

    #[test]
    fn train_test_split_examples() {
        let ds = synth_planted(100, 2, &[], None, 5).unwrap();
        let (tr, te) = train_test_split(&ds, 0.1, 9).unwrap();
        assert_eq!((tr.rows(), te.rows()), (90, 10));
        let (tr2, te2) = train_test_split(&ds, 0.1, 9).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);

        let small = synth_planted(5, 2, &[], None, 5).unwrap();
        for seed in 0..10 {
            let (tr, te) = train_test_split(&small, 0.5, seed).unwrap();
            assert_eq!(tr.rows() + te.rows(), 5);
            assert!(tr.rows() == 2 || tr.rows() == 3);
            for i in 0..tr.rows() {
                for j in 0..te.rows() {
                    assert_ne!(tr.features().row(i), te.features().row(j));
                }
            }
        }
        let one = synth_planted(1, 2, &[], None, 5).unwrap();
        assert!(matches!(train_test_split(&one, 0.5, 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn synth_planted_examples() {
        let ds = synth_planted(5000, 10, &[3], None, 1).unwrap();
        let col3 = ds.features().column(3);
        assert!(col3.iter().all(|&v| v == 0.0 || v == 1.0));
        let ones = col3.iter().filter(|&&v| v == 1.0).count();
        assert!(ones > 2300 && ones < 2700);
        for j in [0, 1, 2, 4, 9] {
            let c = ds.features().column(j);
            assert!(c.iter().any(|&v| v != 0.0 && v != 1.0));
        }

        let ds = synth_planted(100, 5, &[], None, 7).unwrap();
        assert_eq!(numerical_rank(ds.features(), RankTolerance::default()), 5);

        let ds = synth_planted(50, 6, &[], Some(&[2, 3, 4, 5]), 2).unwrap();
        for i in 0..50 {
            let s: f64 = (2..6).map(|j| ds.features().get(i, j)).sum();
            assert_eq!(s, 1.0);
        }
        assert!(matches!(
            synth_planted(10, 3, &[5], None, 0),
            Err(Error::InvalidColumns(_))
        ));
        assert!(matches!(
            synth_planted(10, 4, &[1], Some(&[1, 2]), 0),
            Err(Error::InvalidColumns(_))
        ));
    }

    #[test]
    fn synth_labels_are_not_degenerate() {
        let ds = synth_dataset(&SynthSpec::new(2000, 6, 4, 11).with_binary(vec![0])).unwrap();
        let rate = ds.majority_rate();
        assert!(rate < 0.7, "majority rate {rate}");
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_planted(30, 6, &[1], Some(&[2, 3, 4]), 4).unwrap();
        save_cache(&ds, dir.path(), "data").unwrap();
        assert_eq!(load_cache(dir.path(), "data").unwrap(), ds);
    }
}
