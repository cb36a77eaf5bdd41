use log::warn;

use super::{Result, ScmError};
use crate::dist::JointDistribution;

/// A sample column: either already discrete or to be binned.
#[derive(Debug, Clone, Copy)]
pub enum Column<'a> {
    Discrete(&'a [i64]),
    Continuous(&'a [f64]),
}

impl Column<'_> {
    fn len(&self) -> usize {
        match self {
            Column::Discrete(v) => v.len(),
            Column::Continuous(v) => v.len(),
        }
    }
}

/// Per-column symbol indices plus alphabet size.
struct Coded {
    codes: Vec<usize>,
    card: usize,
}

fn code_discrete(v: &[i64]) -> Coded {
    let mut symbols: Vec<i64> = v.to_vec();
    symbols.sort_unstable();
    symbols.dedup();
    let codes = v.iter().map(|x| symbols.binary_search(x).expect("present")).collect();
    Coded { codes, card: symbols.len() }
}

/// Equal-width bins over `[mean - 4 sd, mean + 4 sd]` from the sample
/// moments; values outside are clamped into the edge bins. A constant
/// column collapses to a single bin.
pub fn bin_continuous(v: &[f64], n_bins: usize) -> (Vec<usize>, usize) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        if n_bins > 1 {
            warn!("zero-variance column collapses to a single bin");
        }
        return (vec![0; v.len()], 1);
    }
    let lo = mean - 4.0 * sd;
    let width = 8.0 * sd / n_bins as f64;
    let codes = v
        .iter()
        .map(|x| {
            let k = ((x - lo) / width).floor();
            if k < 0.0 {
                0
            } else {
                (k as usize).min(n_bins - 1)
            }
        })
        .collect();
    (codes, n_bins)
}

/// Empirical joint table of three sample columns `(Y, A, B)`.
pub fn quantize(y: Column<'_>, a: Column<'_>, b: Column<'_>, n_bins: usize) -> Result<JointDistribution> {
    if n_bins < 2 {
        return Err(ScmError::Config(format!("n_bins must be at least 2, got {n_bins}")));
    }
    let n = y.len();
    if a.len() != n || b.len() != n || n == 0 {
        return Err(ScmError::Config("columns must be non-empty and of equal length".into()));
    }
    let code = |c: Column<'_>| match c {
        Column::Discrete(v) => code_discrete(v),
        Column::Continuous(v) => {
            let (codes, card) = bin_continuous(v, n_bins);
            Coded { codes, card }
        }
    };
    let (cy, ca, cb) = (code(y), code(a), code(b));
    let card = [cy.card, ca.card, cb.card];
    let samples = (0..n).map(|i| (cy.codes[i], ca.codes[i], cb.codes[i]));
    Ok(JointDistribution::from_samples(card, samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn constant_column_single_bin() {
        let (codes, card) = bin_continuous(&[3.0; 10], 8);
        assert_eq!(card, 1);
        assert!(codes.iter().all(|&c| c == 0));
    }

    #[test]
    fn standard_normal_bins_match_cdf() {
        // Bin masses vs. the normal CDF at the same edges, within 3 standard
        // errors.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (codes, card) = bin_continuous(&v, 16);
        let mut counts = vec![0usize; card];
        for c in codes {
            counts[c] += 1;
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let std_normal = Normal::standard();
        let cdf = |x: f64| std_normal.cdf(x);
        for (k, &c) in counts.iter().enumerate() {
            let lo = if k == 0 { f64::NEG_INFINITY } else { mean - 4.0 * sd + k as f64 * sd / 2.0 };
            let hi = if k == card - 1 { f64::INFINITY } else { mean - 4.0 * sd + (k + 1) as f64 * sd / 2.0 };
            let p = cdf(hi) - cdf(lo);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let emp = c as f64 / n as f64;
            assert!((emp - p).abs() <= 3.0 * se + 1e-4, "bin {k}: {emp} vs {p}");
        }
    }

    #[test]
    fn two_bins_recover_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c: Vec<i64> = (0..20_000).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let s: Vec<f64> = c
            .iter()
            .map(|&ci| ci as f64 + 0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let (codes, _) = bin_continuous(&s, 2);
        let agree = codes.iter().zip(&c).filter(|(k, ci)| (**k == 1) == (**ci > 0)).count();
        assert!(agree as f64 / c.len() as f64 >= 0.999);
    }

    #[test]
    fn discrete_columns_pass_through() {
        let y = [0i64, 1, 1, 0];
        let a = [5i64, 7, 7, 5];
        let d = quantize(Column::Discrete(&y), Column::Discrete(&a), Column::Discrete(&y), 4).unwrap();
        assert_eq!(d.card(), [2, 2, 2]);
        assert!((d.get(0, 0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_single_bin() {
        let y = [0i64, 1];
        assert!(quantize(Column::Discrete(&y), Column::Discrete(&y), Column::Discrete(&y), 1).is_err());
    }
}
