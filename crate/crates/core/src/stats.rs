//! Two-sample significance tests used to compare accuracy distributions.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample `{name}` has {len} values, need at least {min}")]
    TooFew {
        name: &'static str,
        len: usize,
        min: usize,
    },
    #[error("sample `{0}` contains a non-finite value")]
    NonFinite(&'static str),
}

fn check(name: &'static str, xs: &[f64], min: usize) -> Result<(), StatsError> {
    if xs.len() < min {
        return Err(StatsError::TooFew {
            name,
            len: xs.len(),
            min,
        });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite(name));
    }
    Ok(())
}

/// Arithmetic mean, summed in order.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` divisor.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided survival probability `P(|T| >= |t|)` of Student's t with `df`
/// degrees of freedom, via the regularized incomplete beta function.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom. When both samples have zero variance the result is `t = 0`,
/// `p = 1` for equal means and `t = ±inf`, `p = 0` otherwise.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    check("a", a, 2)?;
    check("b", b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            WelchResult {
                statistic: 0.0,
                df: na + nb - 2.0,
                p_value: 1.0,
            }
        } else {
            WelchResult {
                statistic: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                df: na + nb - 2.0,
                p_value: 0.0,
            }
        });
    }
    let statistic = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(WelchResult {
        statistic,
        df,
        p_value: student_t_two_sided(statistic, df),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MwuMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwuResult {
    /// `U` of the first sample: pairs `(a_i, b_j)` with `a_i > b_j`, ties
    /// counting one half.
    pub u: f64,
    pub p_value: f64,
    pub method: MwuMethod,
    /// For the exact path, the number of rank assignments at least as
    /// extreme as the observed one and the total number of assignments.
    pub exact_counts: Option<(u64, u64)>,
}

/// Samples no larger than this use exact enumeration.
pub const MWU_EXACT_MAX: usize = 8;

/// Midranks of `values` (1-based, ties share their average rank), doubled so
/// they are integers.
pub fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share (start + 1 + end) / 2
        let doubled = (start + 1 + end) as u64;
        for &k in &order[start..end] {
            ranks[k] = doubled;
        }
        start = end;
    }
    ranks
}

/// Mann–Whitney U test with midranks for ties. Exact two-sided p-value by
/// enumerating every assignment of the pooled ranks when both samples have at
/// most [`MWU_EXACT_MAX`] values; otherwise the tie-corrected normal
/// approximation with continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MwuResult, StatsError> {
    check("a", a, 1)?;
    check("b", b, 1)?;
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let rank_sum_a: u64 = ranks[..na].iter().sum();
    // 2U = 2R - n_a (n_a + 1)
    let u2 = rank_sum_a - (na * (na + 1)) as u64;
    let u = u2 as f64 / 2.0;
    if na.max(nb) <= MWU_EXACT_MAX {
        let (count, total) = exact_tail(&ranks, na, u2);
        return Ok(MwuResult {
            u,
            p_value: count as f64 / total as f64,
            method: MwuMethod::Exact,
            exact_counts: Some((count, total)),
        });
    }
    let n = (na + nb) as f64;
    let nab = (na * nb) as f64;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nab / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (((u - nab / 2.0).abs() - 0.5).max(0.0)) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MwuResult {
        u,
        p_value,
        method: MwuMethod::Normal,
        exact_counts: None,
    })
}

/// Counts the size-`na` subsets of the pooled ranks whose doubled `U`
/// deviates from its mean at least as much as the observed `u2`.
fn exact_tail(ranks: &[u64], na: usize, u2: u64) -> (u64, u64) {
    let n = ranks.len();
    let nb = n - na;
    let centre = (na * nb) as i64;
    let observed = (u2 as i64 - centre).abs();
    let offset = (na * (na + 1)) as i64;
    let mut count = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        total += 1;
        let sum: u64 = (0..n)
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| ranks[i])
            .sum();
        if (sum as i64 - offset - centre).abs() >= observed {
            count += 1;
        }
    }
    (count, total)
}
