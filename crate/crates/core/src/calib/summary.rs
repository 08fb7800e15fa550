use crate::hmc::Chain;
use crate::{Error, Result};

/// Pointwise posterior summary of one extracted quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSummary {
    pub median: f64,
    /// Standard deviation of the pooled samples.
    pub std_err: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

impl BandSummary {
    pub fn lower(&self) -> f64 {
        self.median - self.std_err
    }

    pub fn upper(&self) -> f64 {
        self.median + self.std_err
    }

    fn from_samples(mut v: Vec<f64>) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        v.sort_by(f64::total_cmp);
        Self {
            median: quantile_sorted(&v, 0.5),
            std_err: var.sqrt(),
            mean,
            q025: quantile_sorted(&v, 0.025),
            q975: quantile_sorted(&v, 0.975),
        }
    }
}

/// Linear interpolation between order statistics.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + frac * (v[hi] - v[lo])
}

/// Applies `extractor` to every post-burn-in draw of every chain and
/// summarizes each output component over the pooled draws.
pub fn posterior_summary<F>(chains: &[Chain], extractor: F) -> Result<Vec<BandSummary>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let total: usize = chains.iter().map(Chain::len).sum();
    if total < 10 {
        return Err(Error::Summary(format!(
            "need at least 10 draws, have {total}"
        )));
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for sample in chains.iter().flat_map(|c| &c.samples) {
        let out = extractor(sample);
        if columns.is_empty() {
            columns = vec![Vec::with_capacity(total); out.len()];
        } else if out.len() != columns.len() {
            return Err(Error::Shape(format!(
                "extractor returned {} values, expected {}",
                out.len(),
                columns.len()
            )));
        }
        for (c, v) in columns.iter_mut().zip(out) {
            c.push(v);
        }
    }
    Ok(columns.into_iter().map(BandSummary::from_samples).collect())
}

/// Fraction of pooled draws in which each extracted component is negative.
pub fn negative_fraction<F>(chains: &[Chain], extractor: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut counts: Vec<usize> = Vec::new();
    let mut total = 0usize;
    for sample in chains.iter().flat_map(|c| &c.samples) {
        let out = extractor(sample);
        counts.resize(out.len(), 0);
        for (c, v) in counts.iter_mut().zip(out) {
            if v < 0.0 {
                *c += 1;
            }
        }
        total += 1;
    }
    counts
        .into_iter()
        .map(|c| c as f64 / total.max(1) as f64)
        .collect()
}
