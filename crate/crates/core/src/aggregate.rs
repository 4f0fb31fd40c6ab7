//! Fusion of per-support matching maps into a dynamic probability map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probmap::MatchingProbabilityMap;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no matching maps to fuse")]
    Empty,
    #[error("map size {got:?} differs from {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
}

/// Compresses a matching probability into [0.3, 0.7] so no single support
/// can force the fused value to 0 or 1.
#[inline]
pub fn remap<T: Real>(p: T) -> T {
    assert!(p >= T::zero() && p <= T::one(), "probability out of range: {p:?}");
    T::lit(0.3) + T::lit(0.4) * p
}

/// Probability that a pixel is static given independent per-support
/// probabilities: `prod p / (prod p + prod (1 - p))`.
///
/// Evaluated in log space over the sorted inputs, so the result does not
/// depend on the order of `ps`. Empty input gives 0.5.
pub fn fuse_values<T: Real>(ps: &[T]) -> T {
    let mut sorted = ps.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN probability"));
    let mut ls = T::zero();
    let mut lc = T::zero();
    for &p in &sorted {
        ls = ls + p.ln();
        lc = lc + (T::one() - p).ln();
    }
    if ls == T::neg_infinity() && lc == T::neg_infinity() {
        return T::lit(0.5);
    }
    T::one() / (T::one() + (lc - ls).exp())
}

/// Per-pixel probability of being dynamic, with the number of supports that
/// covered each pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicProbabilityMap<T: Real> {
    pub width: u32,
    pub height: u32,
    pub values: Vec<T>,
    pub support_count: Vec<u32>,
}

impl<T: Real> DynamicProbabilityMap<T> {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.values[(y * self.width + x) as usize]
    }

    pub fn is_covered(&self, i: usize) -> bool {
        self.support_count[i] > 0
    }
}

/// Remaps and fuses matching maps that share a reference image. Pixels a
/// support did not cover contribute 0.5 for it, which is neutral.
pub fn fuse<T: Real>(maps: &[MatchingProbabilityMap<T>]) -> Result<DynamicProbabilityMap<T>, AggregateError> {
    let first = maps.first().ok_or(AggregateError::Empty)?;
    let (w, h) = (first.width, first.height);
    for m in maps {
        if (m.width, m.height) != (w, h) {
            return Err(AggregateError::DimensionMismatch {
                expected: (w, h),
                got: (m.width, m.height),
            });
        }
    }
    let n = (w * h) as usize;
    let mut values = Vec::with_capacity(n);
    let mut support_count = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(maps.len());
    for i in 0..n {
        buf.clear();
        let mut count = 0;
        for m in maps {
            if m.covered[i] {
                count += 1;
                buf.push(remap(m.values[i]));
            }
        }
        values.push(T::one() - fuse_values(&buf));
        support_count.push(count);
    }
    Ok(DynamicProbabilityMap {
        width: w,
        height: h,
        values,
        support_count,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub values: Vec<bool>,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Dynamic wherever the probability reaches `t`.
pub fn threshold<T: Real>(map: &DynamicProbabilityMap<T>, t: T) -> BinaryMask {
    assert!(t >= T::zero() && t <= T::one(), "threshold out of range: {t:?}");
    BinaryMask {
        width: map.width,
        height: map.height,
        values: map.values.iter().map(|&p| p >= t).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(values: Vec<f64>) -> MatchingProbabilityMap<f64> {
        let n = values.len();
        MatchingProbabilityMap {
            width: n as u32,
            height: 1,
            values,
            covered: vec![true; n],
        }
    }

    #[test]
    fn remap_endpoints() {
        assert!((remap(0.0f64) - 0.3).abs() < 1e-15);
        assert!((remap(1.0f64) - 0.7).abs() < 1e-15);
        assert!((remap(0.5f32) - 0.5).abs() < 1e-7);
    }

    #[test]
    #[should_panic]
    fn remap_rejects_out_of_range() {
        remap(1.5f64);
    }

    #[test]
    fn two_agreeing_supports() {
        let p = fuse_values(&[0.7f64, 0.7]);
        assert!((p - 0.49 / 0.58).abs() < 1e-12);
        assert!((p - 0.8448).abs() < 1e-4);
    }

    #[test]
    fn fused_map_is_complement() {
        let d = fuse(&[map(vec![1.0, 0.0]), map(vec![1.0, 0.0])]).unwrap();
        assert!((d.values[0] - (1.0 - 0.49 / 0.58)).abs() < 1e-12);
        assert!((d.values[1] - 0.49 / 0.58).abs() < 1e-12);
        assert_eq!(d.support_count, vec![2, 2]);
    }

    #[test]
    fn uncovered_support_is_neutral() {
        let mut b = map(vec![0.1]);
        b.covered[0] = false;
        let with = fuse(&[map(vec![0.9]), b]).unwrap();
        let without = fuse(&[map(vec![0.9])]).unwrap();
        assert!((with.values[0] - without.values[0]).abs() < 1e-15);
        assert_eq!(with.support_count[0], 1);
    }

    #[test]
    fn no_support_gives_half() {
        let mut a = map(vec![0.9]);
        a.covered[0] = false;
        assert_eq!(fuse(&[a]).unwrap().values[0], 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(fuse::<f64>(&[]), Err(AggregateError::Empty));
        assert!(matches!(
            fuse(&[map(vec![0.5]), map(vec![0.5, 0.5])]),
            Err(AggregateError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn threshold_is_inclusive() {
        let d = DynamicProbabilityMap {
            width: 3,
            height: 1,
            values: vec![0.2, 0.5, 0.8],
            support_count: vec![1; 3],
        };
        assert_eq!(threshold(&d, 0.5).values, vec![false, true, true]);
        assert_eq!(threshold(&d, 0.0).count(), 3);
    }

    #[test]
    fn f32_and_f64_agree() {
        let a = fuse_values(&[0.61f32, 0.42, 0.55]) as f64;
        let b = fuse_values(&[0.61f64, 0.42, 0.55]);
        assert!((a - b).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn neutral_input_changes_nothing(ps in prop::collection::vec(0.3f64..0.7, 1..8)) {
            let mut with = ps.clone();
            with.push(0.5);
            prop_assert!((fuse_values(&with) - fuse_values(&ps)).abs() < 1e-12);
        }

        #[test]
        fn complementary_pair_cancels(ps in prop::collection::vec(0.3f64..0.7, 0..6), q in 0.3f64..0.7) {
            let mut with = ps.clone();
            with.push(q);
            with.push(1.0 - q);
            prop_assert!((fuse_values(&with) - fuse_values(&ps)).abs() < 1e-12);
        }

        #[test]
        fn agreement_amplifies(p in 0.5001f64..0.7, n in 2usize..8) {
            let v = fuse_values(&vec![p; n]);
            prop_assert!(v > p);
            let w = fuse_values(&vec![1.0 - p; n]);
            prop_assert!(w < 1.0 - p);
        }

        #[test]
        fn monotone_in_each_input(ps in prop::collection::vec(0.3f64..0.7, 1..6), i in 0usize..6, d in 0.0f64..0.1) {
            let i = i % ps.len();
            let mut up = ps.clone();
            up[i] = (up[i] + d).min(0.7);
            prop_assert!(fuse_values(&up) >= fuse_values(&ps) - 1e-15);
        }

        #[test]
        fn order_independent(mut ps in prop::collection::vec(0.3f64..0.7, 1..8)) {
            let a = fuse_values(&ps);
            ps.reverse();
            prop_assert_eq!(a, fuse_values(&ps));
        }

        #[test]
        fn fused_in_unit_interval(ps in prop::collection::vec(0.0f64..=1.0, 1..8)) {
            let m: Vec<_> = ps.into_iter().map(|p| map(vec![p])).collect();
            let d = fuse(&m).unwrap();
            prop_assert!(d.values[0] >= 0.0 && d.values[0] <= 1.0);
        }
    }
}
