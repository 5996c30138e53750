//! Small numeric helpers shared across modules.

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
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

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Accumulator::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// ln(n!) exact-by-summation for small n, Stirling series above.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 256 {
        return neumaier_sum((2..=n).map(|k| (k as f64).ln()));
    }
    let x = n as f64 + 1.0;
    // ln Gamma(x) by Stirling with four correction terms; error < 1e-15 for x > 256.
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 - exp(-m)) for m > 0, accurate at both ends.
#[inline]
pub fn log1m_exp_neg(m: f64) -> f64 {
    if m < std::f64::consts::LN_2 {
        (-(-m).exp_m1()).ln()
    } else {
        (-(-m).exp()).ln_1p()
    }
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of Normal(mean, sd^2) at x.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_factorial_matches_direct_sum() {
        assert_eq!(ln_factorial(0), 0.0);
        assert!((ln_factorial(3) - 6f64.ln()).abs() < 1e-15);
        let direct: f64 = (2..=1000u64).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(1000) - direct).abs() < 1e-9 * direct);
        let at_257: f64 = (2..=257u64).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(257) - at_257).abs() < 1e-10);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(xs), 2.0);
    }

    #[test]
    fn log1m_exp_neg_edges() {
        assert!((log1m_exp_neg(1.0) - (1.0 - (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((log1m_exp_neg(1e-10) - (1e-10f64).ln()).abs() < 1e-9);
        assert!(log1m_exp_neg(50.0) < 0.0);
    }
}
