//! Gaussian kernel density estimation with Silverman's rule-of-thumb
//! bandwidth, plus a few sample statistics used by the studies.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Density-weighted mean of the grid.
    pub fn weighted_mean(&self) -> f64 {
        let total: f64 = self.density.iter().sum();
        self.grid
            .iter()
            .zip(&self.density)
            .map(|(g, d)| g * d)
            .sum::<f64>()
            / total
    }

    /// Median of the curve, from the cumulative trapezoidal integral with
    /// linear interpolation inside the crossing interval.
    pub fn median(&self) -> f64 {
        let total = self.integral();
        let half = 0.5 * total;
        let mut acc = 0.0;
        for i in 1..self.grid.len() {
            let dx = self.grid[i] - self.grid[i - 1];
            let piece = 0.5 * dx * (self.density[i] + self.density[i - 1]);
            if acc + piece >= half {
                let frac = if piece > 0.0 {
                    (half - acc) / piece
                } else {
                    0.5
                };
                return self.grid[i - 1] + frac * dx;
            }
            acc += piece;
        }
        *self.grid.last().expect("nonempty grid")
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two samples.
pub fn std_dev(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(samples);
    (samples.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Linearly interpolated sample quantile (the common "type 7" definition).
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "quantile of empty sample");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(samples: &[f64]) -> f64 {
    quantile(samples, 0.5)
}

pub fn interquartile_range(samples: &[f64]) -> f64 {
    quantile(samples, 0.75) - quantile(samples, 0.25)
}

/// Silverman's rule of thumb `1.06 sigma n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    1.06 * std_dev(samples) * (samples.len() as f64).powf(-0.2)
}

pub fn kde_fit(samples: &[f64], grid_size: usize) -> Result<KdeCurve> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSamples(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if grid_size < 2 {
        return Err(Error::InvalidInput("grid_size must be at least 2".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("samples must be finite".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::DegenerateSamples(format!("point mass at {lo}")));
    }
    let h = silverman_bandwidth(samples);
    let start = lo - 3.0 * h;
    let step = (hi - lo + 6.0 * h) / (grid_size - 1) as f64;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * PI).sqrt());

    let grid: Vec<f64> = (0..grid_size).map(|i| start + step * i as f64).collect();
    let density = grid
        .iter()
        .map(|&g| {
            norm * samples
                .iter()
                .map(|&s| {
                    let u = (g - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: h,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let x = a[i].min(b[j]);
        while i < n1 && a[i] <= x {
            i += 1;
        }
        while j < n2 && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Complementary Kolmogorov distribution `Q(lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn standard_normal_peak() {
        let curve = kde_fit(&normals(10_000, 1), 512).unwrap();
        let at_zero = curve
            .grid
            .iter()
            .zip(&curve.density)
            .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
            .map(|(_, d)| *d)
            .unwrap();
        let expect = 1.0 / (2.0 * PI).sqrt();
        assert!((at_zero - expect).abs() < 0.1 * expect, "{at_zero}");
        assert!((curve.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn two_points_symmetric() {
        let curve = kde_fit(&[0.0, 1.0], 201).unwrap();
        assert!((curve.weighted_mean() - 0.5).abs() < 1e-6);
        assert!((curve.median() - 0.5).abs() < 1e-6);
        assert!((curve.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            kde_fit(&[2.0, 2.0, 2.0], 64),
            Err(Error::DegenerateSamples(_))
        ));
        assert!(kde_fit(&[2.0], 64).is_err());
        assert!(kde_fit(&[1.0, f64::NAN], 64).is_err());
    }

    #[test]
    fn quantiles() {
        let s = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(median(&s), 3.0);
        assert_eq!(interquartile_range(&s), 2.0);
        assert_eq!(quantile(&s, 0.1), 1.4);
    }

    #[test]
    fn ks_same_and_shifted() {
        let a = normals(500, 2);
        let b = normals(500, 3);
        let (_, p_same) = ks_two_sample(&a, &b);
        assert!(p_same > 0.01);
        let shifted: Vec<f64> = b.iter().map(|v| v + 1.0).collect();
        let (d, p) = ks_two_sample(&a, &shifted);
        assert!(d > 0.3 && p < 1e-6);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kde_integrates_to_one(samples in prop::collection::vec(-1e3f64..1e3, 2..60)) {
                prop_assume!(samples.iter().any(|&v| v != samples[0]));
                let curve = kde_fit(&samples, 512).unwrap();
                prop_assert!((curve.integral() - 1.0).abs() < 0.01);
                prop_assert!(curve.density.iter().all(|&d| d >= 0.0));
            }
        }
    }
}
