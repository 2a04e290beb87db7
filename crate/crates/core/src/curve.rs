//! Uniformly sampled curves with piecewise-linear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::FrameSchedule;

/// Samples `values[i]` at `start + i·step`, linear in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCurve {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl SampledCurve {
    pub fn new(start: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() {
            return Err(Error::Config(format!("invalid sampling start {start} / step {step}")));
        }
        if values.len() < 2 {
            return Err(Error::Config("a sampled curve needs at least two samples".into()));
        }
        Ok(Self { start, step, values })
    }

    /// Samples `f` on `[start, end]` (the last sample lands on or just past `end`).
    pub fn sample(start: f64, end: f64, step: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = ((end - start) / step - 1e-9).ceil().max(1.0) as usize + 1;
        Self::new(start, step, (0..n).map(|i| f(start + i as f64 * step)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.time(self.values.len() - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    fn covers(&self, a: f64, b: f64) -> bool {
        let tol = 1e-9 * self.step;
        a >= self.start - tol && b <= self.end() + tol
    }

    /// Linear interpolation; `None` outside the sampled span.
    pub fn eval(&self, t: f64) -> Option<f64> {
        if !self.covers(t, t) {
            return None;
        }
        let u = ((t - self.start) / self.step).clamp(0.0, (self.len() - 1) as f64);
        let i = (u.floor() as usize).min(self.len() - 2);
        let f = u - i as f64;
        Some(self.values[i] + f * (self.values[i + 1] - self.values[i]))
    }

    /// Exact integral of the interpolant over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if b < a || !self.covers(a, b) {
            return Err(Error::Config(format!(
                "interval [{a}, {b}] is outside the sampled span [{}, {}]",
                self.start,
                self.end()
            )));
        }
        let a = a.max(self.start);
        let b = b.min(self.end());
        let last = self.len() - 2;
        let seg = |t: f64| (((t - self.start) / self.step).floor().max(0.0) as usize).min(last);
        let (ia, ib) = (seg(a), seg(b));
        // Integral of segment i from segment-local offset u0 to u1 (in steps).
        let part = |i: usize, u0: f64, u1: f64| {
            let (y0, y1) = (self.values[i], self.values[i + 1]);
            let d = y1 - y0;
            self.step * (y0 * (u1 - u0) + 0.5 * d * (u1 * u1 - u0 * u0))
        };
        let local = |t: f64, i: usize| ((t - self.time(i)) / self.step).clamp(0.0, 1.0);
        if ia == ib {
            return Ok(part(ia, local(a, ia), local(b, ia)));
        }
        let mut total = part(ia, local(a, ia), 1.0);
        for i in ia + 1..ib {
            total += 0.5 * self.step * (self.values[i] + self.values[i + 1]);
        }
        total += part(ib, 0.0, local(b, ib));
        Ok(total)
    }

    /// Time-average over `[a, b)`.
    pub fn mean(&self, a: f64, b: f64) -> Result<f64> {
        if !(b > a) {
            return Err(Error::Config(format!("empty averaging window [{a}, {b})")));
        }
        Ok(self.integral(a, b)? / (b - a))
    }

    /// Per-frame time averages.
    pub fn frame_means(&self, schedule: &FrameSchedule) -> Result<Vec<f64>> {
        schedule.frames().iter().map(|f| self.mean(f.start, f.end())).collect()
    }

    /// Cumulative trapezoid integral from `start` at every sample.
    pub fn cumulative_integral(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.len());
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * self.step * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> SampledCurve {
        // y = 2t + 1 on [0, 10]
        SampledCurve::sample(0.0, 10.0, 1.0, |t| 2.0 * t + 1.0).unwrap()
    }

    #[test]
    fn eval_interpolates_linearly() {
        let c = ramp();
        assert_eq!(c.len(), 11);
        assert_eq!(c.eval(2.5), Some(6.0));
        assert_eq!(c.eval(10.0), Some(21.0));
        assert_eq!(c.eval(10.5), None);
    }

    #[test]
    fn integral_of_ramp_is_exact() {
        let c = ramp();
        // ∫ (2t+1) dt from 0.3 to 7.6 = [t² + t]
        let exact = (7.6f64 * 7.6 + 7.6) - (0.3 * 0.3 + 0.3);
        assert!((c.integral(0.3, 7.6).unwrap() - exact).abs() < 1e-12);
        assert!((c.integral(2.2, 2.7).unwrap() - ((2.7f64 * 2.7 + 2.7) - (2.2 * 2.2 + 2.2))).abs() < 1e-12);
        assert!((c.mean(4.0, 6.0).unwrap() - 11.0).abs() < 1e-12);
        assert!(c.integral(-1.0, 3.0).is_err());
    }

    #[test]
    fn cumulative_matches_integral() {
        let c = SampledCurve::sample(0.0, 5.0, 0.5, |t| (t * 0.7).sin() + 2.0).unwrap();
        let cum = c.cumulative_integral();
        for (i, v) in cum.iter().enumerate() {
            assert!((v - c.integral(0.0, c.time(i)).unwrap()).abs() < 1e-12);
        }
    }
}
