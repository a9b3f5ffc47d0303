mod common;

use common::*;
use rand::Rng;
use rankr_core::stats::{mann_whitney_u, welch_t, MwuMethod};

/// Two-sided Student-t tail from the density under `t = sqrt(v) tan θ`,
/// where it becomes proportional to `cos^(v-1) θ`; Simpson's rule on both
/// the tail and the normaliser.
fn t_tail_by_quadrature(t: f64, v: f64) -> f64 {
    let f = |th: f64| th.cos().powf(v - 1.0);
    let simpson = |a: f64, b: f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    let th0 = (t.abs() / v.sqrt()).atan();
    simpson(th0, half) / simpson(0.0, half)
}

fn welch_oracle(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, var / n)
    };
    let (na, ma, qa) = stats(a);
    let (nb, mb, qb) = stats(b);
    let t = (ma - mb) / (qa + qb).sqrt();
    let v = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    t_tail_by_quadrature(t, v)
}

#[test]
fn welch_p_matches_quadrature() {
    let mut r = rng(50);
    for _ in 0..20 {
        let na = r.random_range(4..=12);
        let nb = r.random_range(4..=12);
        let shift = r.random_range(-0.1..0.1);
        let a: Vec<f64> = (0..na).map(|_| 0.8 + 0.05 * r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..nb)
            .map(|_| 0.8 + shift + 0.03 * r.random_range(-1.0..1.0))
            .collect();
        let got = welch_t(&a, &b).unwrap().p_value;
        let want = welch_oracle(&a, &b);
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

/// Number of arrangements of `m` and `n` tie-free values giving each U,
/// from `f(m, n, u) = f(m - 1, n, u - n) + f(m, n - 1, u)`.
fn u_distribution(m: usize, n: usize) -> Vec<u64> {
    let mut memo = vec![vec![Vec::<u64>::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut d = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                d[0] = 1;
            } else {
                for (u, slot) in d.iter_mut().enumerate() {
                    let take = if u >= j { memo[i - 1][j].get(u - j).copied().unwrap_or(0) } else { 0 };
                    let skip = memo[i][j - 1].get(u).copied().unwrap_or(0);
                    *slot = take + skip;
                }
            }
            memo[i][j] = d;
        }
    }
    memo[m][n].clone()
}

#[test]
fn exact_mann_whitney_matches_recurrence() {
    let mut r = rng(51);
    for na in 1..=8 {
        for nb in 1..=8 {
            let dist = u_distribution(na, nb);
            let total: u64 = dist.iter().sum();
            for _ in 0..3 {
                let a: Vec<f64> = (0..na).map(|_| r.random_range(0.0..1.0)).collect();
                let b: Vec<f64> = (0..nb).map(|_| r.random_range(0.2..1.2)).collect();
                let res = mann_whitney_u(&a, &b).unwrap();
                assert_eq!(res.method, MwuMethod::Exact);
                let u: f64 = a
                    .iter()
                    .map(|x| b.iter().filter(|y| x > y).count() as f64)
                    .sum();
                assert_eq!(res.u, u);
                let centre = (na * nb) as f64 / 2.0;
                let extreme: u64 = dist
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| (*k as f64 - centre).abs() >= (u - centre).abs())
                    .map(|(_, c)| c)
                    .sum();
                assert_eq!(res.exact_counts, Some((extreme, total)));
                assert!((res.p_value - extreme as f64 / total as f64).abs() <= 1e-12);
            }
        }
    }
}

fn normal_two_sided(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let u: f64 = a.iter().map(|x| b.iter().filter(|y| x > y).count() as f64).sum();
    let sd = (na * nb * (na + nb + 1.0) / 12.0).sqrt();
    let z = ((u - na * nb / 2.0).abs() - 0.5).max(0.0) / sd;
    statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

#[test]
fn exact_and_normal_agree_at_eight() {
    let mut r = rng(52);
    for _ in 0..30 {
        let a: Vec<f64> = (0..8).map(|_| r.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| r.random_range(0.1..1.1)).collect();
        let exact = mann_whitney_u(&a, &b).unwrap().p_value;
        assert!((exact - normal_two_sided(&a, &b)).abs() <= 0.02);
    }
}

#[test]
fn large_samples_use_the_normal_approximation() {
    let mut r = rng(53);
    for _ in 0..10 {
        let a: Vec<f64> = (0..12).map(|_| r.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..9).map(|_| r.random_range(0.0..1.0)).collect();
        let res = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(res.method, MwuMethod::Normal);
        assert!((res.p_value - normal_two_sided(&a, &b)).abs() <= 1e-12);
    }
}

#[test]
fn tests_are_symmetric_in_their_arguments() {
    let mut r = rng(54);
    for n in [3usize, 8, 11] {
        let a: Vec<f64> = (0..n).map(|_| (r.random_range(0..6) as f64) / 5.0).collect();
        let b: Vec<f64> = (0..n + 1).map(|_| (r.random_range(0..6) as f64) / 5.0).collect();
        let (ab, ba) = (mann_whitney_u(&a, &b).unwrap(), mann_whitney_u(&b, &a).unwrap());
        assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
        let (ab, ba) = (welch_t(&a, &b).unwrap(), welch_t(&b, &a).unwrap());
        assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
    }
}
