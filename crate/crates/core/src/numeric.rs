// SPDX-License-Identifier: MIT OR Apache-2.0

//! Compensated accumulation helpers.
//!
//! Sums and dot products here carry an error term alongside the running
//! value (Neumaier summation, and an FMA-based two-product for dots), so the
//! result is as accurate as if it were computed in roughly twice the working
//! precision and then rounded once.

/// Running compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

/// Dot product with error-free product transformation.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = CompensatedSum::new();
    for (&a, &b) in x.iter().zip(y) {
        let p = a * b;
        let err = a.mul_add(b, -p);
        acc.add(p);
        acc.add(err);
    }
    acc.value()
}

/// Arithmetic mean, clamped into `[min, max]` of the inputs so that
/// rounding can never move it outside the sample range.
///
/// Returns `None` for an empty input.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let m = sum(values.iter().copied()) / values.len() as f64;
    Some(m.clamp(lo, hi))
}
