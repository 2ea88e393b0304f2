//! Exact Cover instances, a brute-force solver and a seeded generator.
//!
//! Elements are `0..n` in memory; the text format uses 1-based elements:
//!
//! ```text
//! 3 2
//! 1 3
//! 2
//! ```

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::verify_cover;
use crate::error::{Error, Result};

pub const BRUTE_FORCE_LIMIT: usize = 22;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactCoverInstance {
    n: usize,
    subsets: Vec<Vec<usize>>,
}

impl ExactCoverInstance {
    pub fn new(n: usize, subsets: Vec<Vec<usize>>) -> Result<Self> {
        if subsets.is_empty() {
            return Err(Error::InvalidArgument("need at least one subset".into()));
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
        let subsets = subsets
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        Ok(Self { n, subsets })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.subsets.len()
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn is_cover(&self, cover: &[usize]) -> bool {
        verify_cover(self.n, &self.subsets, cover)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing `n m` header".into(),
        })?;
        let nums = parse_numbers(header, line)?;
        let [n, m] = nums[..] else {
            return Err(Error::Parse {
                line,
                message: "header must be `n m`".into(),
            });
        };
        let mut subsets = Vec::with_capacity(m);
        for (line, l) in lines {
            let s = parse_numbers(l, line)?;
            if s.contains(&0) {
                return Err(Error::Parse {
                    line,
                    message: "elements are 1-based".into(),
                });
            }
            subsets.push(s.into_iter().map(|e| e - 1).collect());
        }
        if subsets.len() != m {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("expected {m} subsets, found {}", subsets.len()),
            });
        }
        Self::new(n, subsets)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.m());
        for s in &self.subsets {
            let line: Vec<String> = s.iter().map(|e| (e + 1).to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

fn parse_numbers(s: &str, line: usize) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{t}` is not a non-negative integer"),
            })
        })
        .collect()
}

/// Tries every sub-collection in increasing bitmask order and returns the
/// first exact cover, as ascending subset indices.
pub fn brute_force_cover(inst: &ExactCoverInstance) -> Result<(bool, Option<Vec<usize>>)> {
    let m = inst.m();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let masks: Vec<u64> = inst
        .subsets
        .iter()
        .map(|s| s.iter().fold(0u64, |acc, &e| acc | 1 << e))
        .collect();
    let full = if inst.n >= 64 {
        return brute_force_wide(inst);
    } else {
        (1u64 << inst.n) - 1
    };
    for pick in 1u64..1 << m {
        let mut acc = 0u64;
        let mut ok = true;
        for (j, &mask) in masks.iter().enumerate() {
            if pick >> j & 1 == 1 {
                if acc & mask != 0 {
                    ok = false;
                    break;
                }
                acc |= mask;
            }
        }
        if ok && acc == full {
            let cover = (0..m).filter(|&j| pick >> j & 1 == 1).collect();
            return Ok((true, Some(cover)));
        }
    }
    Ok((false, None))
}

fn brute_force_wide(inst: &ExactCoverInstance) -> Result<(bool, Option<Vec<usize>>)> {
    for pick in 1u64..1 << inst.m() {
        let cover: Vec<usize> = (0..inst.m()).filter(|&j| pick >> j & 1 == 1).collect();
        if inst.is_cover(&cover) {
            return Ok((true, Some(cover)));
        }
    }
    Ok((false, None))
}

/// Each subset takes each element independently with probability `density`;
/// empty draws are repeated.
pub fn random_instance(n: usize, m: usize, density: f64, seed: u64) -> Result<ExactCoverInstance> {
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must lie in (0, 1), got {density}"
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("need n >= 1 and m >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets = (0..m)
        .map(|_| loop {
            let s: Vec<usize> = (0..n).filter(|_| rng.random_bool(density)).collect();
            if !s.is_empty() {
                break s;
            }
        })
        .collect();
    ExactCoverInstance::new(n, subsets)
}
