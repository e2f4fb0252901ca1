//! Hypothesis tests used by the leakage auditor and the latency bench.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

impl TestOutcome {
    /// True when the null hypothesis survives at level `alpha`.
    pub fn accepts(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

fn chi_sq_upper(statistic: f64, dof: f64) -> Result<f64> {
    if dof < 1.0 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new(dof).map_err(|e| Error::Config(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// Pearson goodness of fit against equal expected counts in every bin.
pub fn chi_square_uniform(counts: &[u64]) -> Result<TestOutcome> {
    let n: u64 = counts.iter().sum();
    if counts.is_empty() || n == 0 {
        return Err(Error::Config("uniformity test needs a non-empty sample".into()));
    }
    let expected = n as f64 / counts.len() as f64;
    let statistic = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dof = (counts.len() - 1) as f64;
    Ok(TestOutcome { statistic, dof, p_value: chi_sq_upper(statistic, dof)? })
}

/// Pearson homogeneity test on two binned samples. Bins empty in both are dropped.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<TestOutcome> {
    if a.len() != b.len() {
        return Err(Error::Config("samples binned differently".into()));
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Config("two-sample test needs two non-empty samples".into()));
    }
    let total = na + nb;
    let mut statistic = 0.0;
    let mut used = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        used += 1;
        let (ea, eb) = (na * col / total, nb * col / total);
        statistic += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let dof = used.saturating_sub(1) as f64;
    Ok(TestOutcome { statistic, dof, p_value: chi_sq_upper(statistic, dof)? })
}

/// Independence of consecutive bins in a sequence, as an `r x r` contingency table.
pub fn chi_square_lag1(bins: &[usize], r: usize) -> Result<TestOutcome> {
    if bins.len() < 2 || r == 0 {
        return Err(Error::Config("lag test needs at least two observations".into()));
    }
    let mut table = vec![0u64; r * r];
    for w in bins.windows(2) {
        if w[0] >= r || w[1] >= r {
            return Err(Error::Config(format!("bin out of range 0..{r}")));
        }
        table[w[0] * r + w[1]] += 1;
    }
    let n = (bins.len() - 1) as f64;
    let rows: Vec<f64> = (0..r).map(|i| table[i * r..(i + 1) * r].iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..r).map(|j| (0..r).map(|i| table[i * r + j]).sum::<u64>() as f64).collect();
    let mut statistic = 0.0;
    for i in 0..r {
        for j in 0..r {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                statistic += (table[i * r + j] as f64 - e).powi(2) / e;
            }
        }
    }
    let live = |v: &[f64]| v.iter().filter(|&&x| x > 0.0).count().saturating_sub(1);
    let dof = (live(&rows) * live(&cols)) as f64;
    Ok(TestOutcome { statistic, dof, p_value: chi_sq_upper(statistic, dof)? })
}

/// Maps a leaf of a depth-`depth` tree into one of `2^bits` equal-width bins.
pub fn leaf_bin(leaf: u64, depth: u32, bits: u32) -> usize {
    let bits = bits.min(depth);
    (leaf >> (depth - bits)) as usize
}

/// Largest `bits` such that `n` samples spread over `2^bits` bins expect at least `min_expected` each.
pub fn bin_bits_for(n: usize, depth: u32, min_expected: f64) -> u32 {
    let mut bits = 0;
    while bits < depth && n as f64 / (1u64 << (bits + 1)) as f64 >= min_expected {
        bits += 1;
    }
    bits
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t: f64,
    /// One-sided p-value for slope > 0.
    pub p_positive: f64,
}

/// Ordinary least squares fit of `ys` on `xs` with a t test on the slope.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> Result<Regression> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return Err(Error::Config("regression needs at least three paired points".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("regressor has no spread".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let slope_se = (sse / (nf - 2.0) / sxx).sqrt();
    let (t, p_positive) = if slope_se == 0.0 {
        let t = if slope > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        (t, if slope > 0.0 { 0.0 } else { 1.0 })
    } else {
        let t = slope / slope_se;
        let dist = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| Error::Config(e.to_string()))?;
        (t, dist.sf(t))
    };
    Ok(Regression { slope, intercept, slope_se, t, p_positive })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_counts_accept() {
        let t = chi_square_uniform(&[25, 25, 25, 25]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!(t.accepts(0.01));
        let t = chi_square_uniform(&[100, 0, 0, 0]).unwrap();
        assert!(!t.accepts(0.01));
    }

    #[test]
    fn chi_square_critical_value() {
        // 95th percentile of chi-square with 3 dof is 7.8147
        let dist = ChiSquared::new(3.0).unwrap();
        assert!((dist.sf(7.8147) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn two_sample_detects_shift() {
        let a = [50, 50, 50, 50];
        assert!(chi_square_two_sample(&a, &[48, 52, 51, 49]).unwrap().accepts(0.01));
        assert!(!chi_square_two_sample(&a, &[100, 100, 0, 0]).unwrap().accepts(0.01));
        let t = chi_square_two_sample(&[3, 0, 2], &[4, 0, 1]).unwrap();
        assert_eq!(t.dof, 1.0);
    }

    #[test]
    fn lag_test_flags_alternation() {
        let alt: Vec<usize> = (0..400).map(|i| i % 2).collect();
        assert!(!chi_square_lag1(&alt, 2).unwrap().accepts(0.01));
    }

    #[test]
    fn binning() {
        assert_eq!(leaf_bin(0b1011_0000_0000, 12, 4), 0b1011);
        assert_eq!(leaf_bin(3, 2, 4), 3);
        assert_eq!(bin_bits_for(1000, 12, 5.0), 7);
        assert_eq!(bin_bits_for(1000, 3, 5.0), 3);
    }

    #[test]
    fn regression_recovers_line() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0 + if *x as i32 % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let r = linear_regression(&xs, &ys).unwrap();
        assert!((r.slope - 2.0).abs() < 0.05);
        assert!((r.intercept - 1.0).abs() < 0.3);
        assert!(r.p_positive < 1e-6);
        let flat: Vec<f64> = xs.iter().map(|x| if *x as i32 % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(linear_regression(&xs, &flat).unwrap().p_positive > 0.01);
    }
}
