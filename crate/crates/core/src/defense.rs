//! Passive-party defenses: Gaussian noise masking of `z_A`, and the
//! masquerade scheme that restricts the bottom weight to rank `d_A - 1`
//! (`W_A ~ P Q`) and plants a fabricated binary direction `a * u`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, select_independent, Axis, Matrix, RankTolerance};
use crate::model::{check_cols, glorot_bound, uniform_matrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianDefense {
    sigma: f64,
}

impl GaussianDefense {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// `z_A = x_A W_A^T + U`, `U_ij ~ N(0, sigma^2)` drawn fresh on every call.
/// No random numbers are consumed when `sigma == 0`.
pub fn gaussian_masked_forward(
    w_a: &Matrix,
    x_a: &Matrix,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Matrix> {
    check_cols("gaussian_masked_forward x_A", w_a.cols(), x_a)?;
    let mut z = x_a.matmul_t(w_a);
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
        for v in z.data_mut() {
            *v += noise.sample(rng);
        }
    }
    Ok(z)
}

/// Factorised bottom model `z_A = P (Q x_A) + a u`.
#[derive(Clone, Debug, PartialEq)]
pub struct MasqueradeParams {
    /// k x (d_A - 1)
    pub p: Matrix,
    /// (d_A - 1) x d_A
    pub q: Matrix,
    /// length k
    pub u: Vec<f64>,
    /// Fixed per-sample bits used for the inference transcript. Kept for
    /// evaluation only; never sent to the active party.
    pub fabricated_bits: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MasqueradeGrads {
    pub p: Matrix,
    pub q: Matrix,
    pub u: Vec<f64>,
}

impl MasqueradeParams {
    /// Scaled-uniform initialisation, redrawn until `rank(PQ) = d_A - 1`
    /// and `u` lies outside the span of `P`.
    pub fn init(k: usize, d_a: usize, rng: &mut impl Rng) -> Result<Self> {
        if d_a < 2 {
            return Err(Error::InvalidArchitecture(
                "masquerade needs d_A >= 2 to drop one rank".into(),
            ));
        }
        if k < d_a {
            return Err(Error::InvalidArchitecture(format!(
                "masquerade needs k >= d_A, got k = {k}, d_A = {d_a}"
            )));
        }
        let tol = RankTolerance::default();
        for _ in 0..16 {
            let p = uniform_matrix(k, d_a - 1, glorot_bound(d_a - 1, k), rng);
            let q = uniform_matrix(d_a - 1, d_a, glorot_bound(d_a, d_a - 1), rng);
            let ub = glorot_bound(1, k);
            let u: Vec<f64> = (0..k).map(|_| rng.random_range(-ub..=ub)).collect();
            let mp = Self {
                p,
                q,
                u,
                fabricated_bits: Vec::new(),
            };
            if numerical_rank(&mp.effective_weight(), tol) == d_a - 1
                && numerical_rank(&mp.augmented_weight(), tol) == d_a
            {
                return Ok(mp);
            }
        }
        Err(Error::RankDeficient {
            rank: d_a - 1,
            target: d_a,
        })
    }

    pub fn init_seeded(k: usize, d_a: usize, seed: u64) -> Result<Self> {
        Self::init(k, d_a, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn k(&self) -> usize {
        self.p.rows()
    }

    pub fn d_a(&self) -> usize {
        self.q.cols()
    }

    /// `P Q`, the rank-(d_A - 1) stand-in for `W_A`.
    pub fn effective_weight(&self) -> Matrix {
        self.p.matmul(&self.q)
    }

    /// `[P | u]`.
    pub fn augmented_weight(&self) -> Matrix {
        self.p.hstack(&Matrix::from_fn(self.k(), 1, |i, _| self.u[i]))
    }

    pub fn params(&self) -> Vec<&[f64]> {
        vec![self.p.data(), self.q.data(), &self.u]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.p.data_mut(), self.q.data_mut(), &mut self.u]
    }
}

impl MasqueradeGrads {
    pub fn flat(&self) -> Vec<&[f64]> {
        vec![self.p.data(), self.q.data(), &self.u]
    }
}

/// Fresh Bernoulli(1/2) bits.
pub fn draw_bits(n: usize, rng: &mut impl Rng) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect()
}

fn check_bits(bits: &[u8], rows: usize) -> Result<()> {
    if bits.len() != rows {
        return Err(Error::DimensionMismatch {
            context: "masquerade bits",
            expected: rows,
            got: bits.len(),
        });
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::InvalidArgument("masquerade bits must be 0 or 1".into()));
    }
    Ok(())
}

/// Row-wise `z_A = P Q x_A + a u` for a batch (b x d_A) and bits `a` (len b).
pub fn masquerade_forward(mp: &MasqueradeParams, x_a: &Matrix, bits: &[u8]) -> Result<Matrix> {
    check_cols("masquerade_forward x_A", mp.d_a(), x_a)?;
    check_bits(bits, x_a.rows())?;
    let h = x_a.matmul_t(&mp.q);
    let mut z = h.matmul_t(&mp.p);
    for (i, &a) in bits.iter().enumerate() {
        if a == 1 {
            for (zv, uv) in z.row_mut(i).iter_mut().zip(&mp.u) {
                *zv += uv;
            }
        }
    }
    Ok(z)
}

/// Batch-summed gradients
/// `dP = G^T (X Q^T)`, `dQ = P^T G^T X`, `du = G^T a`
/// where `G = dL/dz` (b x k).
pub fn masquerade_backward(
    mp: &MasqueradeParams,
    x_a: &Matrix,
    bits: &[u8],
    dl_dz: &Matrix,
) -> Result<MasqueradeGrads> {
    check_cols("masquerade_backward x_A", mp.d_a(), x_a)?;
    check_cols("masquerade_backward dL/dz", mp.k(), dl_dz)?;
    check_bits(bits, x_a.rows())?;
    if dl_dz.rows() != x_a.rows() {
        return Err(Error::DimensionMismatch {
            context: "masquerade_backward batch",
            expected: x_a.rows(),
            got: dl_dz.rows(),
        });
    }
    let h = x_a.matmul_t(&mp.q);
    let p = dl_dz.t_matmul(&h);
    let gtx = dl_dz.t_matmul(x_a);
    let q = mp.p.t_matmul(&gtx);
    let mut u = vec![0.0; mp.k()];
    for (i, &a) in bits.iter().enumerate() {
        if a == 1 {
            for (g, d) in u.iter_mut().zip(dl_dz.row(i)) {
                *g += d;
            }
        }
    }
    Ok(MasqueradeGrads { p, q, u })
}

/// Drops a minimal set of columns so the remainder has full column rank.
/// Returns the reduced matrix and the dropped column indices.
pub fn preprocess_full_rank(x_a: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    let tol = RankTolerance::default();
    let rank = numerical_rank(x_a, tol);
    if rank == x_a.cols() {
        return Ok((x_a.clone(), Vec::new()));
    }
    let keep = select_independent(x_a, Axis::Cols, rank, tol)?;
    let dropped = (0..x_a.cols()).filter(|c| !keep.contains(c)).collect();
    Ok((x_a.select_columns(&keep), dropped))
}
