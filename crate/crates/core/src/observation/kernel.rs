//! Scalar log-likelihood kernels with first and second derivatives.
//!
//! Point kernels are functions of one linear predictor value; the regional
//! kernel is a function of an aggregated mean `μ`.

use crate::numeric::{ln_factorial, log1m_exp_neg};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before taking logs.
pub const P_CLAMP: f64 = 1e-12;

/// Value and derivatives of a kernel; `clamped` marks a guarded evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointKernel {
    /// Weighted Poisson kernel `y·η − w·e^η − c`.
    Poisson {
        response: f64,
        weight: f64,
        constant: f64,
    },
    /// Binomial with cloglog link: `n log p + (N − n) log(1 − p)`, `p = 1 − exp(−e^η)`.
    Cloglog { trials: u64, successes: u64 },
}

impl PointKernel {
    pub fn count(r: u64) -> Self {
        PointKernel::Poisson {
            response: r as f64,
            weight: 1.0,
            constant: ln_factorial(r),
        }
    }

    /// Integration node of a thinned point process, `−A·e^η`.
    pub fn void(weight: f64) -> Self {
        PointKernel::Poisson {
            response: 0.0,
            weight,
            constant: 0.0,
        }
    }

    pub fn eval(&self, eta: f64) -> KernelValue {
        match *self {
            PointKernel::Poisson {
                response,
                weight,
                constant,
            } => {
                let m = if weight == 0.0 {
                    0.0
                } else {
                    weight * eta.exp()
                };
                KernelValue {
                    value: response * eta - m - constant,
                    d1: response - m,
                    d2: -m,
                    clamped: false,
                }
            }
            PointKernel::Cloglog { trials, successes } => cloglog(eta, trials, successes),
        }
    }
}

fn cloglog(eta: f64, trials: u64, successes: u64) -> KernelValue {
    let n = successes as f64;
    let fails = (trials - successes) as f64;
    let m = eta.exp();
    let p = -(-m).exp_m1();
    let mut out = KernelValue {
        value: 0.0,
        d1: 0.0,
        d2: 0.0,
        clamped: false,
    };
    if successes > 0 {
        if p < P_CLAMP {
            out.value += n * P_CLAMP.ln();
            out.clamped = true;
        } else {
            // d/dη log p = m / (e^m − 1)
            let em1 = m.exp_m1();
            out.value += n * log1m_exp_neg(m);
            if em1.is_finite() {
                out.d1 += n * m / em1;
                out.d2 += n * m * (em1 - m * m.exp()) / (em1 * em1);
            }
        }
    }
    if fails > 0.0 {
        if 1.0 - p < P_CLAMP {
            out.value += fails * P_CLAMP.ln();
            out.clamped = true;
        } else {
            out.value -= fails * m;
            out.d1 -= fails * m;
            out.d2 -= fails * m;
        }
    }
    out
}

/// Presence or absence of a species in a region with mean count `μ`.
pub fn regional(mu: f64, present: bool) -> KernelValue {
    if !present {
        return KernelValue {
            value: -mu,
            d1: -1.0,
            d2: 0.0,
            clamped: false,
        };
    }
    let p = -(-mu).exp_m1();
    if p < P_CLAMP {
        return KernelValue {
            value: P_CLAMP.ln(),
            d1: 0.0,
            d2: 0.0,
            clamped: true,
        };
    }
    if 1.0 - p < P_CLAMP {
        return KernelValue {
            value: (1.0 - P_CLAMP).ln(),
            d1: 0.0,
            d2: 0.0,
            clamped: true,
        };
    }
    let em1 = mu.exp_m1();
    KernelValue {
        value: log1m_exp_neg(mu),
        d1: 1.0 / em1,
        d2: -mu.exp() / (em1 * em1),
        clamped: false,
    }
}
