//! Effective sample size and acceptance summaries.

use super::Chain;

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// One entry per coordinate.
    pub ess: Vec<f64>,
    pub accept_rate: f64,
}

pub fn diagnostics(chain: &Chain) -> Diagnostics {
    let ess = (0..chain.dim())
        .map(|d| effective_sample_size(&chain.coordinate(d)))
        .collect();
    Diagnostics {
        ess,
        accept_rate: chain.accept_rate,
    }
}

/// Biased sample autocorrelation at `lag`; `None` for a constant series.
pub fn autocorrelation(x: &[f64], lag: usize) -> Option<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if c0 <= 0.0 || lag >= n {
        return if c0 > 0.0 { Some(0.0) } else { None };
    }
    let ck: f64 = x
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    Some(ck / c0)
}

/// ESS by Geyer's initial positive sequence: autocorrelations are summed in
/// adjacent pairs until the first negative pair. Clamped to `[1, n]`.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    if c0 <= 0.0 {
        return 1.0;
    }
    let rho = |lag: usize| -> f64 {
        centered
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / c0
    };

    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair < 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    let ess = if tau > 0.0 { n as f64 / tau } else { n as f64 };
    ess.clamp(1.0, n as f64)
}
