//! Small numeric helpers shared across modules.

/// Compensated (Kahan) accumulator.
///
/// Every estimator and closed-form sum in this crate runs through one of
/// these in a fixed row-major order, so results are deterministic across
/// platforms and independent of any internal parallelism.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let y = value - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Sum an iterator with compensated accumulation.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Unbiased sample mean and variance (n−1 denominator).
///
/// Returns (mean, variance); variance is 0 for a single sample.
pub fn mean_and_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = kahan_sum(samples.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = kahan_sum(samples.iter().map(|&x| (x - mean) * (x - mean)));
    (mean, ss / (n as f64 - 1.0))
}

/// Unbiased sample covariance between two equal-length slices.
pub fn sample_covariance(xs: &[f64], ys: &[f64], mean_x: f64, mean_y: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let s = kahan_sum(
        xs.iter()
            .zip(ys.iter())
            .map(|(&x, &y)| (x - mean_x) * (y - mean_y)),
    );
    s / (n as f64 - 1.0)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Format with a fixed number of significant digits, printf `%g` style.
/// Used for all CSV output so artifact bytes are reproducible.
pub fn fmt_sig(value: f64, digits: usize) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let exp = value.abs().log10().floor() as i32;
    if exp < -4 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits.saturating_sub(1), value);
        return s;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{value:.decimals$}");
    // Trim trailing zeros but keep at least one digit after the point.
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}
