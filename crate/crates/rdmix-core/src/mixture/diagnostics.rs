//! Convergence diagnostics: split-chain potential scale reduction and
//! effective sample size. Advisory only; nothing here stops a run.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarDiagnostics {
    pub name: String,
    pub r_hat: f64,
    pub ess: f64,
}

/// Split each chain in half and compute the potential scale reduction
/// factor over the resulting sequences.
pub fn split_r_hat(chains: &[Vec<f64>]) -> f64 {
    let seqs = split_chains(chains);
    if seqs.is_empty() {
        return f64::NAN;
    }
    let n = seqs[0].len();
    if n < 2 {
        return f64::NAN;
    }
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let grand = mean(&means);
    let b = n as f64 / (m - 1.0).max(1.0) * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = seqs.iter().map(|s| variance(s)).sum::<f64>() / m;
    if w <= 0.0 {
        // Constant sequences: no dispersion to reduce.
        return 1.0;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// Effective sample size across split chains, using the multi-chain
/// autocorrelation estimate with Geyer's initial monotone truncation.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let seqs = split_chains(chains);
    if seqs.is_empty() {
        return f64::NAN;
    }
    let n = seqs[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let m = seqs.len() as f64;
    let w = seqs.iter().map(|s| variance(s)).sum::<f64>() / m;
    if w <= 0.0 {
        return m * n as f64;
    }
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let grand = mean(&means);
    let b_over_n = if seqs.len() > 1 {
        means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;

    // Mean autocovariance over sequences at each lag.
    let acov = |lag: usize| -> f64 {
        seqs.iter().map(|s| autocovariance(s, lag)).sum::<f64>() / m
    };
    let mut rho_sum = 0.0;
    let mut t = 1usize;
    let mut prev_pair: Option<f64> = None;
    while t + 1 < n {
        let rho_even = 1.0 - (w - acov(t)) / var_plus;
        let rho_odd = 1.0 - (w - acov(t + 1)) / var_plus;
        let pair = rho_even + rho_odd;
        if pair < 0.0 {
            break;
        }
        // Initial monotone condition.
        let pair = match prev_pair {
            Some(prev) if pair > prev => prev,
            _ => pair,
        };
        rho_sum += pair;
        prev_pair = Some(pair);
        t += 2;
    }
    let tau = 1.0 + 2.0 * rho_sum;
    (m * n as f64 / tau).max(1.0)
}

/// Monte-Carlo standard error of the mean of one (possibly autocorrelated)
/// series.
pub fn mcse_mean(series: &[f64]) -> f64 {
    let ess = effective_sample_size(&[series.to_vec()]);
    (variance(series) / ess).sqrt()
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let min_len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = min_len / 2;
    if half == 0 {
        return out;
    }
    for c in chains {
        out.push(c[..half].to_vec());
        out.push(c[min_len - half..min_len].to_vec());
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0)
}

fn autocovariance(v: &[f64], lag: usize) -> f64 {
    let n = v.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(v);
    (0..n - lag).map(|i| (v[i] - m) * (v[i + lag] - m)).sum::<f64>() / n as f64
}
