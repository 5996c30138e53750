//! Modified Bessel functions of the second kind, orders 0 and 1.
//!
//! Power series for x <= 2, Steed's continued fraction (Temme's CF2) above.
//! Both branches are accurate to a few ulps over the range used by the
//! Matérn correlation.

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// K0 and K1 at x > 0.
pub fn bessel_k01(x: f64) -> (f64, f64) {
    debug_assert!(x > 0.0);
    if x <= 2.0 {
        series(x)
    } else {
        continued_fraction(x)
    }
}

pub fn bessel_k0(x: f64) -> f64 {
    bessel_k01(x).0
}

pub fn bessel_k1(x: f64) -> f64 {
    bessel_k01(x).1
}

fn series(x: f64) -> (f64, f64) {
    let q = 0.25 * x * x;
    let log_half = (0.5 * x).ln();

    // I0, I1 and the harmonic-number sums share the same term recursion.
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    let mut k0_tail = 0.0;
    let mut k1_tail = 0.0;
    let mut t0 = 1.0; // q^k / (k!)^2
    let mut harmonic = 0.0; // H_k
    for k in 0..60 {
        let kf = k as f64;
        if k > 0 {
            t0 *= q / (kf * kf);
            harmonic += 1.0 / kf;
        }
        // q^k / (k! (k+1)!)
        let t1 = t0 / (kf + 1.0);
        i0 += t0;
        i1 += t1;
        k0_tail += t0 * harmonic;
        // psi(k+1) + psi(k+2) = -2 gamma + 2 H_k + 1/(k+1)
        k1_tail += t1 * (-2.0 * EULER_GAMMA + 2.0 * harmonic + 1.0 / (kf + 1.0));
        if t0 < 1e-18 * i0 && k > 2 {
            break;
        }
    }
    let i1 = 0.5 * x * i1;
    let k0 = -(log_half + EULER_GAMMA) * i0 + k0_tail;
    let k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_tail;
    (k0, k1)
}

fn continued_fraction(x: f64) -> (f64, f64) {
    const EPS: f64 = 1e-17;
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..10_000 {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}
