//! Double-double arithmetic (about 32 significant digits) for the
//! finite-difference side of gradient checks, where a plain f64 loss cannot
//! resolve the change caused by a 1e-5 step on small gradient components.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    /// Exact sum of two doubles.
    #[inline]
    pub fn sum(a: f64, b: f64) -> Dd {
        let (hi, lo) = two_sum(a, b);
        Dd { hi, lo }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Multiplication by a power of two, exact.
    #[inline]
    fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        const SQUARINGS: i32 = 10;
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from_f64(k)).ldexp(-SQUARINGS);
        // expm1(r) by Taylor series; |r| < 4e-4 so 11 terms reach 1e-40.
        let mut term = r;
        let mut s = r;
        for n in 2..=11 {
            term = term * r / Dd::from_f64(n as f64);
            s = s + term;
        }
        // expm1(2x) = 2 expm1(x) + expm1(x)^2
        for _ in 0..SQUARINGS {
            s = s.ldexp(1) + s * s;
        }
        (s + Dd::ONE).ldexp(k as i32)
    }

    pub fn ln(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::from_f64(f64::NAN);
        }
        // Newton on exp(y) = x, each step doubling the correct digits.
        let mut y = Dd::from_f64(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    pub fn tanh(self) -> Dd {
        let a = if self.hi < 0.0 { -self } else { self };
        let e = (-(a.ldexp(1))).exp();
        let t = (Dd::ONE - e) / (Dd::ONE + e);
        if self.hi < 0.0 {
            -t
        } else {
            t
        }
    }

    pub fn sigmoid(self) -> Dd {
        Dd::ONE / (Dd::ONE + (-self).exp())
    }

    pub fn max(self, o: Dd) -> Dd {
        if self.partial_cmp(&o) == Some(Ordering::Less) {
            o
        } else {
            self
        }
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&o.lo),
            c => c,
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from_f64(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: Dd, tol: f64) -> bool {
        ((a - b).to_f64()).abs() <= tol * b.to_f64().abs().max(1.0)
    }

    #[test]
    fn error_free_sum_and_product() {
        let d = Dd::sum(1.0, 1e-20);
        assert_eq!((d.hi, d.lo), (1.0, 1e-20));
        let third = Dd::ONE / Dd::from_f64(3.0);
        assert!(close(third * Dd::from_f64(3.0), Dd::ONE, 1e-31));
        // (1 + 2^-40)^2 = 1 + 2^-39 + 2^-80 exactly
        let x = Dd::sum(1.0, 2f64.powi(-40));
        let sq = x * x;
        assert_eq!(sq.hi, 1.0 + 2f64.powi(-39));
        assert_eq!(sq.lo, 2f64.powi(-80));
    }

    #[test]
    fn transcendental_identities() {
        for i in 0..400 {
            let x = Dd::sum(-30.0 + i as f64 * 0.15, 1e-19 * i as f64);
            let e = x.exp();
            assert!(close(e * (-x).exp(), Dd::ONE, 1e-30), "exp at {}", x.hi);
            assert!((e.to_f64() / x.hi.exp() - 1.0).abs() < 1e-14);
            assert!(close(e.ln(), x, 1e-30), "ln at {}", x.hi);
            let t = x.tanh();
            assert!((t.to_f64() - x.hi.tanh()).abs() < 1e-15);
            let s = x.sigmoid();
            assert!(close(s + (-x).sigmoid(), Dd::ONE, 1e-30));
        }
        // exp(1) to 32 digits
        let e1 = Dd::ONE.exp();
        assert_eq!(e1.hi, std::f64::consts::E);
        assert!((e1.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-31);
        assert!(close(Dd::from_f64(2.0).ln(), LN2, 1e-31));
        assert_eq!(Dd::from_f64(-800.0).exp(), Dd::ZERO);
    }
}
