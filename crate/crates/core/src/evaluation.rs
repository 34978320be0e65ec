//! Distribution-level metrics: empirical 1-Wasserstein distance in one
//! dimension, nearest-mean mode masses, and moment summaries.

use crate::error::{check_dim, Error, Result};
use crate::forward::GmmSpec;

/// 1-Wasserstein distance between two empirical 1-D distributions.
///
/// Both quantile functions are step functions; the integral of their absolute
/// difference is computed exactly over the merged breakpoints. For equal
/// sizes this is the mean of `|a_(i) − b_(i)|` over sorted samples.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("samples", "both sample sets must be nonempty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples", "must be finite"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == m {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / n as f64);
    }
    // walk the merged grid {i/n} ∪ {j/m} in exact integer arithmetic (units of 1/(n·m))
    let (mut i, mut j) = (0usize, 0usize);
    let (mut pos, mut total) = (0u128, 0.0);
    let (nm, n128, m128) = ((n * m) as u128, n as u128, m as u128);
    while pos < nm {
        let next_a = (i as u128 + 1) * m128;
        let next_b = (j as u128 + 1) * n128;
        let next = next_a.min(next_b);
        total += (next - pos) as f64 * (a[i] - b[j]).abs();
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(total / nm as f64)
}

/// Index of the mixture component whose mean is nearest to `x`.
///
/// Only meaningful for well-separated mixtures.
pub fn nearest_mode(x: &[f64], spec: &GmmSpec) -> Result<usize> {
    check_dim(spec.dim(), x.len())?;
    let mut best = (0, f64::INFINITY);
    for (k, c) in spec.components().iter().enumerate() {
        let d: f64 = c.mean().iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best.0)
}

/// Fraction of samples assigned to each component by nearest mean.
pub fn mode_masses(samples: &[Vec<f64>], spec: &GmmSpec) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "must be nonempty"));
    }
    let mut counts = vec![0usize; spec.components().len()];
    for x in samples {
        counts[nearest_mode(x, spec)?] += 1;
    }
    let n = samples.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Summary of a generated sample set against a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// 1-Wasserstein distance to the reference; `None` unless the data is 1-D.
    pub wasserstein1: Option<f64>,
    pub mode_masses: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

impl MetricReport {
    pub fn compute(samples: &[Vec<f64>], reference: &[Vec<f64>], spec: &GmmSpec) -> Result<Self> {
        let masses = mode_masses(samples, spec)?;
        if reference.is_empty() {
            return Err(Error::invalid("reference", "must be nonempty"));
        }
        let d = spec.dim();
        let (mean, std) = moments(samples, d)?;
        let wasserstein1 = if d == 1 {
            let a: Vec<f64> = samples.iter().map(|x| x[0]).collect();
            let mut b = Vec::with_capacity(reference.len());
            for x in reference {
                check_dim(1, x.len())?;
                b.push(x[0]);
            }
            Some(wasserstein1_1d(&a, &b)?)
        } else {
            None
        };
        Ok(Self {
            wasserstein1,
            mode_masses: masses,
            mean,
            std,
            count: samples.len(),
        })
    }

    /// `(metric, index, value)` rows, index being the mode or dimension.
    pub fn rows(&self) -> Vec<(&'static str, usize, f64)> {
        let mut rows = vec![("count", 0, self.count as f64)];
        if let Some(w) = self.wasserstein1 {
            rows.push(("wasserstein1", 0, w));
        }
        rows.extend(self.mode_masses.iter().enumerate().map(|(k, v)| ("mode_mass", k, *v)));
        rows.extend(self.mean.iter().enumerate().map(|(k, v)| ("mean", k, *v)));
        rows.extend(self.std.iter().enumerate().map(|(k, v)| ("std", k, *v)));
        rows
    }
}

/// Per-dimension mean and (population) standard deviation.
pub fn moments(samples: &[Vec<f64>], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "must be nonempty"));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for x in samples {
        check_dim(d, x.len())?;
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for x in samples {
        for k in 0..d {
            var[k] += (x[k] - mean[k]).powi(2);
        }
    }
    Ok((mean, var.into_iter().map(|v| (v / n).sqrt()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = [0.3, -1.0, 2.5];
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
        assert!(wasserstein1_1d(&[], &a).is_err());
    }

    #[test]
    fn unequal_sizes_against_hand_values() {
        // quantile steps: a = 0 on (0,1/2], 1 on (1/2,1]; b = 0 on (0,1/3], 3 elsewhere
        let w = wasserstein1_1d(&[0.0, 1.0], &[0.0, 3.0, 3.0]).unwrap();
        assert!((w - (3.0 / 6.0 + 2.0 / 2.0)).abs() < 1e-15);
        // a single point against a set: mean absolute deviation
        let w = wasserstein1_1d(&[1.0], &[0.0, 1.0, 5.0]).unwrap();
        assert!((w - 5.0 / 3.0).abs() < 1e-15);
        // replicating every sample leaves the distribution unchanged
        let a = [0.1, 0.9, -2.0];
        let b = [0.4, 3.0];
        let aa: Vec<f64> = a.iter().chain(&a).copied().collect();
        let w1 = wasserstein1_1d(&a, &b).unwrap();
        let w2 = wasserstein1_1d(&aa, &b).unwrap();
        assert!((w1 - w2).abs() < 1e-14);
    }

    #[test]
    fn independent_standard_normal_sets_are_close() {
        let mut r = RngState::new(11, 0).rng();
        let a = r.normal_vec(10_000);
        let b = r.normal_vec(10_000);
        assert!(wasserstein1_1d(&a, &b).unwrap() < 0.05);
    }

    #[test]
    fn masses_at_means() {
        let spec = GmmSpec::default_bimodal();
        let s = vec![vec![2.0]; 5];
        assert_eq!(mode_masses(&s, &spec).unwrap(), vec![0.0, 1.0]);
        assert!(mode_masses(&[], &spec).is_err());
    }

    #[test]
    fn masses_of_draws_from_the_mixture() {
        let spec = GmmSpec::default_bimodal();
        let mut r = RngState::new(12, 0).rng();
        let n = 10_000;
        let s: Vec<Vec<f64>> = (0..n).map(|_| spec.sample(&mut r).0).collect();
        let m = mode_masses(&s, &spec).unwrap();
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (mk, wk) in m.iter().zip(spec.weights()) {
            let se = (wk * (1.0 - wk) / n as f64).sqrt();
            assert!((mk - wk).abs() < 3.0 * se, "{mk} vs {wk}");
        }
    }

    #[test]
    fn symmetric_spec_and_samples_give_equal_masses() {
        let spec = GmmSpec::new(vec![0.5, 0.5], vec![vec![-3.0], vec![3.0]], vec![vec![0.2], vec![0.2]], None).unwrap();
        let mut r = RngState::new(13, 0).rng();
        let half: Vec<Vec<f64>> = (0..2_000).map(|_| spec.sample(&mut r).0).collect();
        let s: Vec<Vec<f64>> = half.iter().flat_map(|x| [x.clone(), vec![-x[0]]]).collect();
        let m = mode_masses(&s, &spec).unwrap();
        let se = (0.25 / s.len() as f64).sqrt();
        assert!((m[0] - m[1]).abs() < 3.0 * se);
    }

    #[test]
    fn report_fields() {
        let spec = GmmSpec::default_bimodal();
        let s = vec![vec![-2.0], vec![2.0], vec![2.0], vec![2.0]];
        let rep = MetricReport::compute(&s, &s, &spec).unwrap();
        assert_eq!(rep.count, 4);
        assert_eq!(rep.wasserstein1, Some(0.0));
        assert_eq!(rep.mode_masses, vec![0.25, 0.75]);
        assert_eq!(rep.mean, vec![1.0]);
        assert!((rep.std[0] - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(rep.rows().len(), 1 + 1 + 2 + 1 + 1);
    }

    proptest! {
        #[test]
        fn shift_symmetry_triangle(
            a in prop::collection::vec(-10.0f64..10.0, 1..30),
            b in prop::collection::vec(-10.0f64..10.0, 1..30),
            c in prop::collection::vec(-10.0f64..10.0, 1..30),
            shift in -5.0f64..5.0,
        ) {
            let ab = wasserstein1_1d(&a, &b).unwrap();
            let ba = wasserstein1_1d(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            let ac = wasserstein1_1d(&a, &c).unwrap();
            let cb = wasserstein1_1d(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
            let shifted: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let w = wasserstein1_1d(&shifted, &a).unwrap();
            prop_assert!((w - shift.abs()).abs() < 1e-9);
        }
    }
}
