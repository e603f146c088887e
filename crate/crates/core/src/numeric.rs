//! Compensated accumulators shared by the sweep and the statistics code.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn scale(&mut self, factor: f64) {
        self.sum *= factor;
        self.comp *= factor;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Streaming log-sum-exp with a running maximum.
///
/// Holds `max` and a compensated sum of `exp(v - max)`; when a new maximum
/// arrives the partial sum is rescaled, so no term ever exceeds 1.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    acc: CompensatedSum,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, acc: CompensatedSum::new() }
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        if v <= self.max {
            self.acc.add((v - self.max).exp());
        } else {
            if self.max > f64::NEG_INFINITY {
                self.acc.scale((self.max - v).exp());
            }
            self.max = v;
            self.acc.add(1.0);
        }
    }

    /// Merges another partial log-sum (for split sweeps).
    pub fn merge(&mut self, other: &LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if self.max == f64::NEG_INFINITY {
            *self = *other;
            return;
        }
        if other.max <= self.max {
            let f = (other.max - self.max).exp();
            self.acc.add(other.acc.sum * f);
            self.acc.add(other.acc.comp * f);
        } else {
            let f = (self.max - other.max).exp();
            let mut acc = other.acc;
            acc.add(self.acc.sum * f);
            acc.add(self.acc.comp * f);
            self.acc = acc;
            self.max = other.max;
        }
    }

    /// Adds a block whose terms were summed as `sum_i exp(v_i - shift)`.
    pub fn merge_partial(&mut self, shift: f64, sum: f64) {
        if sum > 0.0 {
            self.merge(&LogSumExp { max: shift, acc: CompensatedSum { sum, comp: 0.0 } });
        }
    }

    pub fn value(&self) -> f64 {
        self.max + self.acc.value().ln()
    }
}

/// `exp(v)` for `v <= 0`, branch-free so block loops vectorise.
///
/// Cody-Waite reduction by ln 2 and a degree-13 Taylor polynomial on
/// `|r| <= ln2 / 2`; relative error within a few ulp. Arguments below -708
/// are clamped, returning about 3e-308 instead of a subnormal or zero.
#[inline(always)]
pub fn exp_nonpositive(v: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let v = if v < -708.0 { -708.0 } else { v };
    let t = v * LOG2E + SHIFTER;
    let k = t - SHIFTER;
    let r = (v - k * LN2_HI) - k * LN2_LO;
    let mut poly = 1.0 / 6_227_020_800.0;
    poly = poly * r + 1.0 / 479_001_600.0;
    poly = poly * r + 1.0 / 39_916_800.0;
    poly = poly * r + 1.0 / 3_628_800.0;
    poly = poly * r + 1.0 / 362_880.0;
    poly = poly * r + 1.0 / 40_320.0;
    poly = poly * r + 1.0 / 5_040.0;
    poly = poly * r + 1.0 / 720.0;
    poly = poly * r + 1.0 / 120.0;
    poly = poly * r + 1.0 / 24.0;
    poly = poly * r + 1.0 / 6.0;
    poly = poly * r + 0.5;
    poly = poly * r + 1.0;
    poly = poly * r + 1.0;
    // the low mantissa bits of t hold k; shifting drops the shifter's own bit
    let scale = (t.to_bits() << 52).wrapping_add(1023 << 52);
    poly * f64::from_bits(scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn logsumexp_handles_large_values() {
        let vals = [700.0, 699.0, 10.0, 701.5];
        let mut l = LogSumExp::new();
        for v in vals {
            l.add(v);
        }
        let direct = 701.5 + vals.iter().map(|v| (v - 701.5f64).exp()).sum::<f64>().ln();
        assert!((l.value() - direct).abs() < 1e-13);
    }

    #[test]
    fn logsumexp_merge_matches_single_pass() {
        let vals: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64 * 0.7 - 3.0).collect();
        let mut all = LogSumExp::new();
        vals.iter().for_each(|&v| all.add(v));
        let mut a = LogSumExp::new();
        let mut b = LogSumExp::new();
        vals[..40].iter().for_each(|&v| a.add(v));
        vals[40..].iter().for_each(|&v| b.add(v));
        a.merge(&b);
        assert!((a.value() - all.value()).abs() < 1e-14);
    }

    #[test]
    fn polynomial_exp_matches_libm() {
        let mut worst: f64 = 0.0;
        for i in 0..=200_000 {
            let v = -708.0 * i as f64 / 200_000.0;
            let a = exp_nonpositive(v);
            let b = v.exp();
            worst = worst.max(((a - b) / b).abs());
        }
        assert!(worst < 5e-16, "max relative error {worst}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert!(exp_nonpositive(-1e4) > 0.0);
    }
}
