//! Binary-feature reconstruction from recorded bottom-model outputs.
//!
//! Both searches look for 0/1 vectors in (or near) the column space of an
//! attack matrix `A` whose columns are independent columns of `Z_A`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::linalg::{
    leverage_scores, numerical_rank, pseudo_inverse, select_independent, solve_square, Axis,
    ColumnSpace, Matrix, RankTolerance,
};
use crate::vfl::Transcript;

pub const DEFAULT_DIMENSION_CAP: usize = 30;
pub const DEFAULT_BINARY_TOL: f64 = 1e-4;

/// Gray-code steps between fresh recomputations of the running sum.
const CHUNK_LOG2: u32 = 14;

/// Full-column-rank selection of transcript columns.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackMatrix {
    a: Matrix,
    columns: Vec<usize>,
}

impl AttackMatrix {
    /// Wraps a matrix that is already full column rank.
    pub fn new(a: Matrix, tol: RankTolerance) -> Result<Self> {
        let rank = numerical_rank(&a, tol);
        if rank != a.cols() {
            return Err(Error::RankDeficient {
                rank,
                target: a.cols(),
            });
        }
        let columns = (0..a.cols()).collect();
        Ok(Self { a, columns })
    }

    /// Picks independent columns of `z`. With `max_rank`, at most that many
    /// are kept: an attacker who knows `d_A` can discard the extra directions
    /// that noise adds to the numerical rank.
    pub fn from_outputs(z: &Matrix, tol: RankTolerance, max_rank: Option<usize>) -> Result<Self> {
        let rank = numerical_rank(z, tol);
        if rank == 0 {
            return Err(Error::DegenerateTranscript);
        }
        let d = max_rank.map_or(rank, |m| m.min(rank));
        if d == 0 {
            return Err(Error::InvalidArgument("max_rank must be >= 1".into()));
        }
        let columns = select_independent(z, Axis::Cols, d, tol)?;
        Ok(Self {
            a: z.select_columns(&columns),
            columns,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    /// Columns of `Z_A` the matrix was built from.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }
}

pub fn build_attack_matrix(
    t: &Transcript,
    tol: RankTolerance,
    max_rank: Option<usize>,
) -> Result<AttackMatrix> {
    if t.is_empty() {
        return Err(Error::DegenerateTranscript);
    }
    AttackMatrix::from_outputs(&t.stacked_z()?, tol, max_rank)
}

/// Subtracts the pivot row from every other row, cancelling a constant
/// additive offset shared by all rows.
pub fn eliminate_bias(a: &Matrix, pivot_row: usize) -> Result<Matrix> {
    if pivot_row >= a.rows() {
        return Err(Error::IndexOutOfRange {
            index: pivot_row,
            len: a.rows(),
        });
    }
    if a.rows() < 2 {
        return Err(Error::EmptyDataset);
    }
    let pivot = a.row(pivot_row).to_vec();
    let rows: Vec<usize> = (0..a.rows()).filter(|&i| i != pivot_row).collect();
    let mut out = a.select_rows(&rows);
    for i in 0..out.rows() {
        for (v, p) in out.row_mut(i).iter_mut().zip(&pivot) {
            *v -= p;
        }
    }
    Ok(out)
}

/// A 0/1 vector, serialized as a bit string such as `"01101"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryVector(pub Vec<u8>);

impl BinaryVector {
    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl fmt::Display for BinaryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BinaryVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.bytes()
            .map(|c| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(Error::Format(format!("bad bit `{}`", c as char))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(BinaryVector)
    }
}

impl Serialize for BinaryVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BinaryVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Equations,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub algorithm: Algorithm,
    /// Distinct nonzero 0/1 vectors, sorted lexicographically.
    pub solutions: Vec<BinaryVector>,
    /// `min_w ||A w - x||^2` per solution.
    pub residuals: Vec<f64>,
    pub elapsed_secs: f64,
    pub n: usize,
    pub d: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub binary_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquationsConfig {
    pub binary_tol: f64,
    pub dimension_cap: usize,
    pub rank_tol: RankTolerance,
}

impl Default for EquationsConfig {
    fn default() -> Self {
        Self {
            binary_tol: DEFAULT_BINARY_TOL,
            dimension_cap: DEFAULT_DIMENSION_CAP,
            rank_tol: RankTolerance::default(),
        }
    }
}

#[inline]
fn gray(i: u64) -> u64 {
    i ^ (i >> 1)
}

#[inline]
fn near_binary(x: &[f64], tol: f64) -> bool {
    x.iter().all(|&v| v.abs() <= tol || (v - 1.0).abs() <= tol)
}

/// Visits `cols^T x'` for every nonzero `x'` in `{0,1}^d` in Gray-code order,
/// where `cols` holds one length-`n` column per row. Each chunk of the index
/// range is processed independently, restarting from an exact sum so that
/// rounding drift stays bounded. `visit` receives the running vector and the
/// Gray code of `x'`; its results are collected per chunk.
fn gray_enumerate<T, F>(cols: &Matrix, visit: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[f64], u64, &mut Vec<T>) + Sync,
{
    let d = cols.rows();
    let n = cols.cols();
    let total: u64 = 1 << d;
    let chunk: u64 = 1 << CHUNK_LOG2.min(d as u32);
    let starts: Vec<u64> = (0..total).step_by(chunk as usize).collect();
    starts
        .into_par_iter()
        .map(|start| {
            let end = (start + chunk).min(total);
            let mut out = Vec::new();
            let mut code = gray(start.max(1));
            let mut x = vec![0.0; n];
            for j in 0..d {
                if code >> j & 1 == 1 {
                    for (v, c) in x.iter_mut().zip(cols.row(j)) {
                        *v += c;
                    }
                }
            }
            for i in start.max(1)..end {
                visit(&x, code, &mut out);
                if i + 1 < end {
                    let j = (i + 1).trailing_zeros() as usize;
                    let col = cols.row(j);
                    if code >> j & 1 == 1 {
                        for (v, c) in x.iter_mut().zip(col) {
                            *v -= c;
                        }
                    } else {
                        for (v, c) in x.iter_mut().zip(col) {
                            *v += c;
                        }
                    }
                    code ^= 1 << j;
                }
            }
            out
        })
        .flatten()
        .collect()
}

fn check_cap(d: usize, cap: usize) -> Result<()> {
    if d > cap || d >= 63 {
        return Err(Error::DimensionCap { d, cap });
    }
    Ok(())
}

fn round_bits(x: &[f64]) -> Vec<u8> {
    x.iter().map(|&v| u8::from(v > 0.5)).collect()
}

/// Exhaustive search for 0/1 vectors in the column span, with defaults.
pub fn attack_linear_equations(am: &AttackMatrix, binary_tol: f64) -> Result<AttackReport> {
    attack_linear_equations_with(
        am,
        &EquationsConfig {
            binary_tol,
            ..EquationsConfig::default()
        },
    )
}

/// Picks `d` independent rows `A'`, then for every nonzero `x'` checks
/// whether `A A'^{-1} x'` is binary within `binary_tol`.
pub fn attack_linear_equations_with(
    am: &AttackMatrix,
    config: &EquationsConfig,
) -> Result<AttackReport> {
    let started = Instant::now();
    let d = am.dim();
    check_cap(d, config.dimension_cap)?;
    if !(config.binary_tol >= 0.0 && config.binary_tol < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "binary_tol must lie in [0, 0.5), got {}",
            config.binary_tol
        )));
    }
    let a = am.matrix();
    let rows = select_independent(a, Axis::Rows, d, config.rank_tol)?;
    let sub = a.select_rows(&rows);
    // B^T = A'^{-T} A^T, so row j of `bt` is column j of B = A A'^{-1}.
    let bt = solve_square(&sub.transpose(), &a.transpose()).ok_or(Error::RankDeficient {
        rank: d.saturating_sub(1),
        target: d,
    })?;
    let tol = config.binary_tol;
    let found: Vec<Vec<u8>> = gray_enumerate(&bt, |x, _, out| {
        if near_binary(x, tol) {
            let bits = round_bits(x);
            if bits.contains(&1) {
                out.push(bits);
            }
        }
    });
    let unique: std::collections::BTreeSet<Vec<u8>> = found.into_iter().collect();
    let space = ColumnSpace::new(a, config.rank_tol);
    let solutions: Vec<BinaryVector> = unique.into_iter().map(BinaryVector).collect();
    let residuals = solutions
        .iter()
        .map(|s| space.residual_sq_bits(s.bits()))
        .collect();
    Ok(AttackReport {
        algorithm: Algorithm::Equations,
        solutions,
        residuals,
        elapsed_secs: started.elapsed().as_secs_f64(),
        n: am.rows(),
        d,
        binary_tol: Some(config.binary_tol),
        r_used: None,
        trials: None,
        seed: None,
    })
}

/// Inverse-CDF sampler over a discrete distribution.
#[derive(Clone, Debug)]
pub struct LeverageSampler {
    cumulative: Vec<f64>,
}

impl LeverageSampler {
    pub fn new(p: &[f64]) -> Result<Self> {
        if p.is_empty() || p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "sampling weights must be finite and non-negative".into(),
            ));
        }
        let mut acc = 0.0;
        let cumulative: Vec<f64> = p
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();
        if acc <= 0.0 {
            return Err(Error::InvalidArgument("sampling weights sum to zero".into()));
        }
        Ok(Self { cumulative })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        // Never land on a zero-weight tail entry.
        let mut i = i.min(self.cumulative.len() - 1);
        while i > 0 && self.cumulative[i] == self.cumulative[i - 1] {
            i -= 1;
        }
        i
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionConfig {
    pub r: usize,
    pub trials: usize,
    pub seed: u64,
    pub dimension_cap: usize,
    pub rank_tol: RankTolerance,
}

impl RegressionConfig {
    pub fn new(r: usize, seed: u64, trials: usize) -> Self {
        Self {
            r,
            trials,
            seed,
            dimension_cap: DEFAULT_DIMENSION_CAP,
            rank_tol: RankTolerance::default(),
        }
    }
}

/// Smaller residual wins; ties go to the lexicographically smaller vector.
fn better(a: &(f64, Vec<u8>), b: &(f64, Vec<u8>)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Sketched search for the 0/1 vector closest to the column span.
pub fn attack_linear_regression(
    am: &AttackMatrix,
    r: usize,
    seed: u64,
    trials: usize,
) -> Result<AttackReport> {
    attack_linear_regression_with(am, &RegressionConfig::new(r, seed, trials))
}

pub fn attack_linear_regression_with(
    am: &AttackMatrix,
    config: &RegressionConfig,
) -> Result<AttackReport> {
    let started = Instant::now();
    let (n, d, r) = (am.rows(), am.dim(), config.r);
    check_cap(r, config.dimension_cap)?;
    if r < d {
        return Err(Error::InvalidArgument(format!(
            "r = {r} must be at least the attack dimension {d}"
        )));
    }
    if config.trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let a = am.matrix();
    let p = leverage_scores(a)?;
    let sampler = LeverageSampler::new(&p)?;
    let space = ColumnSpace::new(a, config.rank_tol);

    let mut e1 = vec![0u8; n];
    e1[0] = 1;
    let seed_candidate = (space.residual_sq_bits(&e1), e1);

    let per_trial: Vec<(f64, Vec<u8>)> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(trial as u64);
            let idx: Vec<usize> = (0..r).map(|_| sampler.sample(&mut rng)).collect();
            let scale: Vec<f64> = idx.iter().map(|&i| 1.0 / (r as f64 * p[i]).sqrt()).collect();
            let sketch = Matrix::from_fn(r, d, |j, c| scale[j] * a.get(idx[j], c));
            // w' = pinv(DSA) D x', so A w' = C x' with C = A pinv(DSA) D (n x r).
            let pinv = pseudo_inverse(&sketch);
            let mut pd = pinv;
            for row in 0..d {
                for (v, s) in pd.row_mut(row).iter_mut().zip(&scale) {
                    *v *= s;
                }
            }
            let ct = pd.t_matmul(&a.transpose()); // r x n: row j = column j of C
            // Position of each sampled row; the last draw wins on repeats.
            let mut sampled: BTreeMap<usize, usize> = BTreeMap::new();
            for (j, &i) in idx.iter().enumerate() {
                sampled.insert(i, j);
            }
            let candidates: Vec<Vec<u8>> = gray_enumerate(&ct, |y, code, out| {
                let mut x: Vec<u8> = y.iter().map(|&v| u8::from(v >= 0.5)).collect();
                for (&i, &j) in &sampled {
                    x[i] = (code >> j & 1) as u8;
                }
                if x.contains(&1) {
                    out.push(x);
                }
            });
            let mut seen = HashSet::new();
            let mut best: Option<(f64, Vec<u8>)> = None;
            for x in candidates {
                if !seen.insert(x.clone()) {
                    continue;
                }
                let cand = (space.residual_sq_bits(&x), x);
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
            }
            best.unwrap_or_else(|| seed_candidate.clone())
        })
        .collect();

    let mut best = seed_candidate.clone();
    for cand in per_trial {
        if better(&cand, &best) {
            best = cand;
        }
    }
    Ok(AttackReport {
        algorithm: Algorithm::Regression,
        solutions: vec![BinaryVector(best.1)],
        residuals: vec![best.0],
        elapsed_secs: started.elapsed().as_secs_f64(),
        n,
        d,
        binary_tol: None,
        r_used: Some(r),
        trials: Some(config.trials),
        seed: Some(config.seed),
    })
}

/// Best coordinate-match fraction between `x_star` and any passive binary
/// column or any nonzero sum of columns within a passive one-hot group.
pub fn attack_accuracy(x_star: &[u8], ds: &Dataset, passive_cols: &[usize]) -> Result<f64> {
    let n = ds.rows();
    if x_star.len() != n {
        return Err(Error::DimensionMismatch {
            context: "attack_accuracy x*",
            expected: n,
            got: x_star.len(),
        });
    }
    let x = ds.features();
    let mut best: Option<usize> = None;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &c in passive_cols {
        if c >= ds.cols() {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: ds.cols(),
            });
        }
        match ds.schema().columns[c].kind {
            FeatureKind::Binary => {
                let matches = (0..n)
                    .filter(|&i| (x.get(i, c) > 0.5) == (x_star[i] == 1))
                    .count();
                best = Some(best.map_or(matches, |b| b.max(matches)));
            }
            FeatureKind::OneHot { group, .. } => groups.entry(group).or_default().push(c),
            FeatureKind::Numeric => {}
        }
    }
    for cols in groups.values() {
        // Row i belongs to at most one of the group's passive columns, so a
        // subset S matches row i iff x*_i == [category(i) in S]. Count per
        // category, then pick the best nonempty S greedily.
        let mut ones = vec![0usize; cols.len()];
        let mut zeros = vec![0usize; cols.len()];
        let mut outside_zeros = 0usize;
        for i in 0..n {
            match cols.iter().position(|&c| x.get(i, c) > 0.5) {
                Some(k) if x_star[i] == 1 => ones[k] += 1,
                Some(k) => zeros[k] += 1,
                None => outside_zeros += usize::from(x_star[i] == 0),
            }
        }
        let mut total = outside_zeros;
        let mut any = false;
        for k in 0..cols.len() {
            if ones[k] > zeros[k] {
                total += ones[k];
                any = true;
            } else {
                total += zeros[k];
            }
        }
        if !any {
            // Forced to include one category: take the cheapest swap.
            let loss = (0..cols.len())
                .map(|k| zeros[k] - ones[k])
                .min()
                .unwrap_or(0);
            total -= loss;
        }
        best = Some(best.map_or(total, |b| b.max(total)));
    }
    best.map(|m| m as f64 / n as f64)
        .ok_or(Error::NoBinaryFeatures)
}

/// Stacks `[I_{m+1}; A2; A3]` for an Exact Cover instance with subsets over
/// `0..n`: `A2[i][j] = [i in S_j]` with a last column of -1, and
/// `A3 = [2|S_1|, ..., 2|S_m|, -2n]`. A nonzero 0/1 vector lies in the
/// column span iff the instance has an exact cover.
pub fn reduce_exact_cover(n: usize, subsets: &[Vec<usize>]) -> Result<Matrix> {
    let m = subsets.len();
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(
            "exact cover needs a nonempty universe and at least one subset".into(),
        ));
    }
    for (j, s) in subsets.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::InvalidArgument(format!("subset {j} is empty")));
        }
        if let Some(&e) = s.iter().find(|&&e| e >= n) {
            return Err(Error::InvalidSubset {
                subset: j,
                element: e,
                universe: n,
            });
        }
    }
    let cols = m + 1;
    let mut out = Matrix::zeros(cols + n + 1, cols);
    for j in 0..cols {
        out.set(j, j, 1.0);
    }
    for (j, s) in subsets.iter().enumerate() {
        for &e in s {
            out.set(cols + e, j, 1.0);
        }
    }
    for i in 0..n {
        out.set(cols + i, m, -1.0);
    }
    let last = cols + n;
    for (j, s) in subsets.iter().enumerate() {
        let distinct: HashSet<usize> = s.iter().copied().collect();
        out.set(last, j, 2.0 * distinct.len() as f64);
    }
    out.set(last, m, -2.0 * n as f64);
    Ok(out)
}

/// Whether `cover` (subset indices) hits every element of `0..n` exactly once.
pub fn verify_cover(n: usize, subsets: &[Vec<usize>], cover: &[usize]) -> bool {
    let mut hits = vec![0usize; n];
    for &j in cover {
        let Some(s) = subsets.get(j) else {
            return false;
        };
        let distinct: HashSet<usize> = s.iter().copied().collect();
        for e in distinct {
            match hits.get_mut(e) {
                Some(h) => *h += 1,
                None => return false,
            }
        }
    }
    hits.iter().all(|&h| h == 1)
}

/// Decides Exact Cover by searching the reduction matrix's span for a
/// nonzero 0/1 vector. The cover is read off the identity block.
pub fn solve_exact_cover_via_attack(
    n: usize,
    subsets: &[Vec<usize>],
) -> Result<(bool, Option<Vec<usize>>)> {
    let a = reduce_exact_cover(n, subsets)?;
    let am = AttackMatrix::new(a, RankTolerance::default())?;
    let report = attack_linear_equations(&am, DEFAULT_BINARY_TOL)?;
    let m = subsets.len();
    let cover = report.solutions.iter().find_map(|s| {
        let cover: Vec<usize> = (0..m).filter(|&j| s.bits()[j] == 1).collect();
        verify_cover(n, subsets, &cover).then_some(cover)
    });
    Ok((!report.solutions.is_empty(), cover))
}
