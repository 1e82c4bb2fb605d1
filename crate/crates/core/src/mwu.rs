//! Two-sided Mann-Whitney U test.
//!
//! `U_a` counts pairs with `a_i > b_j` plus one half per tie; the reported
//! statistic is `min(U_a, U_b)`. For pooled sizes up to [`EXACT_LIMIT`] the
//! p-value is exact: the null distribution is obtained by counting every
//! assignment of the pooled (mid)ranks to group `a`. This is a full
//! enumeration of rank sums, so ties are handled without approximation.
//! Larger samples use the normal approximation with tie-corrected variance
//! and a 0.5 continuity correction.

use std::cmp::Ordering;

use statrs::function::erf::erfc;
use thiserror::Error;

use crate::Scalar;

/// Largest `n_a + n_b` for which the exact distribution is used.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MwuError {
    #[error("both samples must be non-empty")]
    EmptyInput,
    #[error("samples must be finite")]
    NonFinite,
    #[error("exact test limited to {EXACT_LIMIT} pooled samples, got {0}")]
    TooLargeForExact(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwuMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwuResult<T> {
    pub u: T,
    pub p_two_sided: T,
    pub method: MwuMethod,
}

struct Ranked {
    /// Twice the midrank of every pooled observation; group `a` first.
    doubled_ranks: Vec<u64>,
    /// Sizes of the tie groups.
    ties: Vec<usize>,
    na: usize,
    nb: usize,
}

impl Ranked {
    fn new<T: Scalar>(a: &[T], b: &[T]) -> Result<Self, MwuError> {
        if a.is_empty() || b.is_empty() {
            return Err(MwuError::EmptyInput);
        }
        if a.iter().chain(b).any(|x| !x.is_finite()) {
            return Err(MwuError::NonFinite);
        }
        let pooled: Vec<T> = a.iter().chain(b).copied().collect();
        let mut order: Vec<usize> = (0..pooled.len()).collect();
        order.sort_by(|&i, &j| pooled[i].partial_cmp(&pooled[j]).unwrap_or(Ordering::Equal));

        let mut doubled_ranks = vec![0u64; pooled.len()];
        let mut ties = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && pooled[order[end]] == pooled[order[start]] {
                end += 1;
            }
            // 1-based ranks start+1 ..= end; doubled midrank = start + 1 + end.
            let r2 = (start + 1 + end) as u64;
            for &idx in &order[start..end] {
                doubled_ranks[idx] = r2;
            }
            ties.push(end - start);
            start = end;
        }
        Ok(Self { doubled_ranks, ties, na: a.len(), nb: b.len() })
    }

    fn n(&self) -> usize {
        self.na + self.nb
    }

    /// `2 * U_a`, an integer.
    fn doubled_u_a(&self) -> u64 {
        let r2: u64 = self.doubled_ranks[..self.na].iter().sum();
        r2 - (self.na * (self.na + 1)) as u64
    }

    fn u_a(&self) -> f64 {
        self.doubled_u_a() as f64 / 2.0
    }

    fn u_min(&self) -> f64 {
        let ua = self.u_a();
        ua.min((self.na * self.nb) as f64 - ua)
    }

    fn exact_p(&self) -> f64 {
        let n = self.n();
        let max_sum: usize = self.doubled_ranks.iter().map(|&r| r as usize).sum();
        // ways[k][s]: number of k-subsets whose doubled rank sum is s.
        let mut ways = vec![vec![0u64; max_sum + 1]; self.na + 1];
        ways[0][0] = 1;
        for (seen, &r) in self.doubled_ranks.iter().enumerate() {
            let r = r as usize;
            for k in (1..=self.na.min(seen + 1)).rev() {
                for s in (r..=max_sum).rev() {
                    let add = ways[k - 1][s - r];
                    if add != 0 {
                        ways[k][s] += add;
                    }
                }
            }
        }
        let offset = (self.na * (self.na + 1)) as i64;
        let centre = (self.na * self.nb) as i64;
        let observed = (self.doubled_u_a() as i64 - centre).abs();
        let (mut extreme, mut total) = (0u64, 0u64);
        for (s, &count) in ways[self.na].iter().enumerate() {
            if count == 0 {
                continue;
            }
            total += count;
            if (s as i64 - offset - centre).abs() >= observed {
                extreme += count;
            }
        }
        debug_assert_eq!(total, binomial(n, self.na));
        (extreme as f64 / total as f64).min(1.0)
    }

    fn normal_p(&self) -> f64 {
        let (na, nb) = (self.na as f64, self.nb as f64);
        let n = na + nb;
        let mu = na * nb / 2.0;
        let tie_term: f64 = self.ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
        let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)).max(1.0));
        if var <= 0.0 {
            return 1.0;
        }
        let z = ((self.u_a() - mu).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Exact test when `n_a + n_b <= 20`, normal approximation otherwise.
pub fn mann_whitney_u<T: Scalar>(a: &[T], b: &[T]) -> Result<MwuResult<T>, MwuError> {
    let method = if a.len() + b.len() <= EXACT_LIMIT {
        MwuMethod::Exact
    } else {
        MwuMethod::NormalApprox
    };
    mann_whitney_u_with(a, b, method)
}

/// Runs the test with a fixed p-value method.
pub fn mann_whitney_u_with<T: Scalar>(a: &[T], b: &[T], method: MwuMethod) -> Result<MwuResult<T>, MwuError> {
    let ranked = Ranked::new(a, b)?;
    let p = match method {
        MwuMethod::Exact if ranked.n() > EXACT_LIMIT => return Err(MwuError::TooLargeForExact(ranked.n())),
        MwuMethod::Exact => ranked.exact_p(),
        MwuMethod::NormalApprox => ranked.normal_p(),
    };
    Ok(MwuResult { u: T::of(ranked.u_min()), p_two_sided: T::of(p), method })
}
