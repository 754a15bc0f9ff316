//! Running mean / standard-error accumulation for Monte Carlo estimators.

use serde::{Deserialize, Serialize};

/// Welford accumulator. Merging is order-dependent only in the last bits, so
/// callers that need bit-reproducibility feed samples in substream order.
#[derive(Clone, Copy, Debug, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn summary(&self) -> Summary {
        Summary {
            mean: self.mean(),
            std_error: self.std_error(),
            n: self.n,
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::new();
        for x in iter {
            w.push(x);
        }
        w
    }
}

/// Mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

impl Summary {
    pub fn exact(value: f64, n: u64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            n,
        }
    }
}

/// Standard error of a difference of two independent estimates.
pub fn combined_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// `|a - b|` measured in combined standard errors. Zero spread and zero gap
/// count as agreement.
pub fn z_gap(a: Summary, b: Summary) -> f64 {
    let se = combined_se(a.std_error, b.std_error);
    let d = (a.mean - b.mean).abs();
    if d == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        d / se
    }
}
