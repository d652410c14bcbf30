use serde::Serialize;

use super::FeatureError;
use crate::scalar::{DoubleDouble as Dd, Scalar};

/// Population moments of a series.
///
/// When every value is identical the series has zero variance and both
/// `skewness` and `kurtosis_excess` are reported as 0 with `zero_variance`
/// set, instead of propagating 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments<T> {
    pub mean: T,
    pub std: T,
    pub skewness: T,
    pub kurtosis_excess: T,
    pub n: usize,
    pub zero_variance: bool,
}

/// Works on the scaled deviations `n * x - sum(x)` in double-double arithmetic.
/// Odd powers are summed per sign in order of magnitude, so a symmetric series
/// has skewness exactly zero.
pub fn moments<T: Scalar>(values: &[T]) -> Result<Moments<T>, FeatureError> {
    let n = values.len();
    if n == 0 {
        return Err(FeatureError::EmptySeries);
    }
    let (lo, hi) = values
        .iter()
        .fold((values[0], values[0]), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if lo == hi {
        return Ok(Moments {
            mean: lo,
            std: T::zero(),
            skewness: T::zero(),
            kurtosis_excess: T::zero(),
            n,
            zero_variance: true,
        });
    }

    let zero = Dd::new(T::zero());
    let nf = Dd::new(T::from_count(n));
    let sum = values.iter().fold(zero, |acc, &x| acc.add(Dd::new(x)));
    let devs: Vec<Dd<T>> = values.iter().map(|&x| nf.mul(Dd::new(x)).sub(sum)).collect();

    let mut s2: Vec<Dd<T>> = devs.iter().map(|d| d.mul(*d)).collect();
    let mut s4: Vec<Dd<T>> = s2.iter().map(|d2| d2.mul(*d2)).collect();
    let (mut pos3, mut neg3): (Vec<Dd<T>>, Vec<Dd<T>>) = (Vec::new(), Vec::new());
    for (d, d2) in devs.iter().zip(&s2) {
        let c = d2.mul(*d);
        if c.hi > T::zero() {
            pos3.push(c);
        } else if c.hi < T::zero() {
            neg3.push(c.neg());
        }
    }
    let s2 = sorted_sum(&mut s2);
    let s3 = sorted_sum(&mut pos3).sub(sorted_sum(&mut neg3));
    let s4 = sorted_sum(&mut s4);

    let mean = sum.div(nf);
    let root_s2 = s2.sqrt();
    let std = root_s2.div(nf.mul(nf.sqrt()));
    let skewness = s3.mul(nf.sqrt()).div(s2.mul(root_s2));
    let kurtosis_excess = s4.mul(nf).div(s2.mul(s2)).sub(Dd::new(T::lit(3.0)));
    Ok(Moments {
        mean: mean.value(),
        std: std.value(),
        skewness: skewness.value(),
        kurtosis_excess: kurtosis_excess.value(),
        n,
        zero_variance: false,
    })
}

fn sorted_sum<T: Scalar>(terms: &mut [Dd<T>]) -> Dd<T> {
    terms.sort_by(|a, b| a.hi.partial_cmp(&b.hi).unwrap().then(a.lo.partial_cmp(&b.lo).unwrap()));
    terms.iter().fold(Dd::new(T::zero()), |acc, t| acc.add(*t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_series() {
        let m = moments(&[0.1f64, 0.1, 0.1]).unwrap();
        assert_eq!(m.mean, 0.1);
        assert_eq!((m.std, m.skewness, m.kurtosis_excess), (0.0, 0.0, 0.0));
        assert!(m.zero_variance);
    }

    #[test]
    fn one_to_four() {
        let m = moments(&[1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert_relative_eq!(m.std, 1.25f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(m.std, 1.118034, epsilon = 1e-6);
        assert_eq!(m.skewness, 0.0);
        assert_relative_eq!(m.kurtosis_excess, -1.36, max_relative = 1e-14);
        assert_eq!(m.n, 4);
    }

    #[test]
    fn singleton_and_empty() {
        let m = moments(&[-0.7f32]).unwrap();
        assert_eq!((m.mean, m.std, m.skewness, m.kurtosis_excess), (-0.7, 0.0, 0.0, 0.0));
        assert_eq!(moments::<f64>(&[]), Err(FeatureError::EmptySeries));
    }

    #[test]
    fn skewed_two_point() {
        // values {0,0,0,1}: p = 1/4, skew = (1-2p)/sqrt(p(1-p)), excess kurt = (1-6p(1-p))/(p(1-p))
        let m = moments(&[0.0f64, 0.0, 0.0, 1.0]).unwrap();
        let p: f64 = 0.25;
        assert_relative_eq!(m.skewness, (1.0 - 2.0 * p) / (p * (1.0 - p)).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(
            m.kurtosis_excess,
            (1.0 - 6.0 * p * (1.0 - p)) / (p * (1.0 - p)),
            max_relative = 1e-14
        );
    }
}
