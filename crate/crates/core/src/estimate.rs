use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Mean value with a one-standard-deviation uncertainty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }

    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComplexEstimate {
    pub value: Complex64,
    pub sigma_re: f64,
    pub sigma_im: f64,
}

impl ComplexEstimate {
    pub fn re(&self) -> Estimate {
        Estimate { value: self.value.re, sigma: self.sigma_re }
    }
}
