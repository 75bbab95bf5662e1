//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s,
//! giving about 106 mantissa bits.
//!
//! Used as the reference precision for finite-difference gradient checks,
//! where subtracting two nearby losses in `f64` leaves too few digits.
//! Arithmetic, `exp`, `exp_m1`, `ln`, `sqrt` and `tanh` are carried at full
//! width; the remaining `Float` methods round through `f64`.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use super::real::{Precision, Real};

#[derive(Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
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

impl DoubleDouble {
    pub const fn from_f64(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn norm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return DoubleDouble { hi, lo: 0.0 };
        }
        let (hi, lo) = quick_two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        DoubleDouble {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    /// `exp(r) - 1` for `|r|` below one, by halving, Taylor series, and squaring back.
    fn expm1_small(r: Self) -> Self {
        const HALVINGS: i32 = 10;
        let r = r.ldexp(-HALVINGS);
        let mut term = r;
        let mut sum = r;
        for n in 2..=12 {
            term = term * r / DoubleDouble::from_f64(n as f64);
            sum += term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)^2 - 1 = s (2 + s)
        for _ in 0..HALVINGS {
            sum = sum * (sum + DoubleDouble::from_f64(2.0));
        }
        sum
    }

    fn exp_dd(self) -> Self {
        if self.hi.is_nan() {
            return self;
        }
        if self.hi > 709.0 {
            return DoubleDouble::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return DoubleDouble::from_f64(0.0);
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * DoubleDouble::from_f64(k);
        let e = Self::expm1_small(r) + DoubleDouble::from_f64(1.0);
        e.ldexp(k as i32)
    }

    fn expm1_dd(self) -> Self {
        if self.hi.abs() < 0.5 {
            Self::expm1_small(self)
        } else {
            self.exp_dd() - DoubleDouble::from_f64(1.0)
        }
    }

    fn ln_dd(self) -> Self {
        if self.hi.is_nan() || self.hi < 0.0 {
            return DoubleDouble::from_f64(f64::NAN);
        }
        if self.hi == 0.0 {
            return DoubleDouble::from_f64(f64::NEG_INFINITY);
        }
        if self.hi.is_infinite() {
            return self;
        }
        let one = DoubleDouble::from_f64(1.0);
        let mut y = DoubleDouble::from_f64(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp_dd() - one;
        }
        y
    }

    fn sqrt_dd(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return DoubleDouble::from_f64(self.hi.sqrt());
        }
        let y = DoubleDouble::from_f64(self.hi.sqrt());
        y + (self - y * y) / (y + y)
    }

    fn tanh_dd(self) -> Self {
        let a = self.abs_dd();
        let one = DoubleDouble::from_f64(1.0);
        let two = DoubleDouble::from_f64(2.0);
        let t = if a.hi > 1.0 {
            one - two / ((a + a).exp_dd() + one)
        } else {
            let e = (a + a).expm1_dd();
            e / (e + two)
        };
        if self.hi < 0.0 {
            -t
        } else {
            t
        }
    }

    fn abs_dd(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn floor_dd(self) -> Self {
        let hi = self.hi.floor();
        if hi == self.hi {
            Self::norm(hi, self.lo.floor())
        } else {
            DoubleDouble::from_f64(hi)
        }
    }

    fn via_f64(self, f: impl Fn(f64) -> f64) -> Self {
        DoubleDouble::from_f64(f(self.to_f64_lossy()))
    }

    fn to_f64_lossy(self) -> f64 {
        self.hi + self.lo
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DoubleDouble({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64_lossy(), f)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        if !s.is_finite() {
            return DoubleDouble::from_f64(s);
        }
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::norm(s, e + f)
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        if !p.is_finite() {
            return DoubleDouble::from_f64(p);
        }
        Self::norm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        if !q1.is_finite() || o.hi.is_infinite() {
            return DoubleDouble::from_f64(q1);
        }
        let r = self - o * DoubleDouble::from_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * DoubleDouble::from_f64(q2);
        let q3 = r.hi / o.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        DoubleDouble { hi: q1, lo: q2 } + DoubleDouble::from_f64(q3)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, o: Self) -> Self {
        let q = (self / o).trunc();
        self - q * o
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl $tr for DoubleDouble {
            fn $m(&mut self, o: Self) {
                *self = *self $op o;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl Sum for DoubleDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |a, b| a + b)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        DoubleDouble::from_f64(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        DoubleDouble::from_f64(1.0)
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(DoubleDouble::from_f64)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        self.trunc().to_f64_lossy().to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.trunc().to_f64_lossy().to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.to_f64_lossy())
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n - hi as i64) as f64;
        Some(Self::norm(hi, lo))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        let lo = n.wrapping_sub(hi as u64) as i64 as f64;
        Some(Self::norm(hi, lo))
    }
    fn from_f64(x: f64) -> Option<Self> {
        Some(DoubleDouble::from_f64(x))
    }
}

impl NumCast for DoubleDouble {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(DoubleDouble::from_f64)
    }
}

impl Float for DoubleDouble {
    fn nan() -> Self {
        DoubleDouble::from_f64(f64::NAN)
    }
    fn infinity() -> Self {
        DoubleDouble::from_f64(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        DoubleDouble::from_f64(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        DoubleDouble::from_f64(-0.0)
    }
    fn min_value() -> Self {
        DoubleDouble::from_f64(f64::MIN)
    }
    fn min_positive_value() -> Self {
        DoubleDouble::from_f64(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        DoubleDouble::from_f64(f64::EPSILON * f64::EPSILON)
    }
    fn max_value() -> Self {
        DoubleDouble::from_f64(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Self {
        self.floor_dd()
    }
    fn ceil(self) -> Self {
        -(-self).floor_dd()
    }
    fn round(self) -> Self {
        (self + DoubleDouble::from_f64(0.5)).floor_dd()
    }
    fn trunc(self) -> Self {
        if self.hi < 0.0 {
            self.ceil()
        } else {
            self.floor_dd()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        self.abs_dd()
    }
    fn signum(self) -> Self {
        DoubleDouble::from_f64(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = self;
        let mut e = n.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base * base;
            e >>= 1;
        }
        if n < 0 {
            acc.recip()
        } else {
            acc
        }
    }
    fn powf(self, n: Self) -> Self {
        (n * self.ln_dd()).exp_dd()
    }
    fn sqrt(self) -> Self {
        self.sqrt_dd()
    }
    fn exp(self) -> Self {
        self.exp_dd()
    }
    fn exp2(self) -> Self {
        (self * LN2).exp_dd()
    }
    fn ln(self) -> Self {
        self.ln_dd()
    }
    fn log(self, base: Self) -> Self {
        self.ln_dd() / base.ln_dd()
    }
    fn log2(self) -> Self {
        self.ln_dd() / LN2
    }
    fn log10(self) -> Self {
        self.ln_dd() / DoubleDouble::from_f64(10.0).ln_dd()
    }
    fn max(self, o: Self) -> Self {
        if self.is_nan() || o > self {
            o
        } else {
            self
        }
    }
    fn min(self, o: Self) -> Self {
        if self.is_nan() || o < self {
            o
        } else {
            self
        }
    }
    fn abs_sub(self, o: Self) -> Self {
        if self > o {
            self - o
        } else {
            Self::zero()
        }
    }
    fn cbrt(self) -> Self {
        self.via_f64(f64::cbrt)
    }
    fn hypot(self, o: Self) -> Self {
        (self * self + o * o).sqrt_dd()
    }
    fn sin(self) -> Self {
        self.via_f64(f64::sin)
    }
    fn cos(self) -> Self {
        self.via_f64(f64::cos)
    }
    fn tan(self) -> Self {
        self.via_f64(f64::tan)
    }
    fn asin(self) -> Self {
        self.via_f64(f64::asin)
    }
    fn acos(self) -> Self {
        self.via_f64(f64::acos)
    }
    fn atan(self) -> Self {
        self.via_f64(f64::atan)
    }
    fn atan2(self, o: Self) -> Self {
        DoubleDouble::from_f64(self.to_f64_lossy().atan2(o.to_f64_lossy()))
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.expm1_dd()
    }
    fn ln_1p(self) -> Self {
        (Self::one() + self).ln_dd()
    }
    fn sinh(self) -> Self {
        let e = self.expm1_dd();
        // sinh x = (e^x - e^-x)/2 = (u + u/(u+1))/2 with u = e^x - 1
        (e + e / (e + Self::one())) / DoubleDouble::from_f64(2.0)
    }
    fn cosh(self) -> Self {
        let e = self.exp_dd();
        (e + e.recip()) / DoubleDouble::from_f64(2.0)
    }
    fn tanh(self) -> Self {
        self.tanh_dd()
    }
    fn asinh(self) -> Self {
        self.via_f64(f64::asinh)
    }
    fn acosh(self) -> Self {
        self.via_f64(f64::acosh)
    }
    fn atanh(self) -> Self {
        self.via_f64(f64::atanh)
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
}

impl Real for DoubleDouble {
    const DTYPE: &'static str = "f64x2";
    const BYTES: usize = 16;
    const PRECISION: Precision = Precision::Verification;

    fn lit(x: f64) -> Self {
        DoubleDouble::from_f64(x)
    }

    fn as_f64(self) -> f64 {
        self.to_f64_lossy()
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        for i in 0..m as isize {
            for j in 0..n as isize {
                let mut acc = Self::zero();
                for p in 0..k as isize {
                    acc += *a.offset(i * rsa + p * csa) * *b.offset(p * rsb + j * csb);
                }
                let dst = c.offset(i * rsc + j * csc);
                *dst = if beta.is_zero() {
                    alpha * acc
                } else {
                    alpha * acc + beta * *dst
                };
            }
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.hi.to_le_bytes());
        out.extend_from_slice(&self.lo.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let hi = f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let lo = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        DoubleDouble { hi, lo }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(x: f64) -> DoubleDouble {
        DoubleDouble::from_f64(x)
    }

    #[test]
    fn one_third_times_three_is_one() {
        let third = dd(1.0) / dd(3.0);
        let back = third * dd(3.0) - dd(1.0);
        assert!(back.hi().abs() < 1e-31);
        assert!(third.lo() != 0.0);
    }

    #[test]
    fn exp_and_ln_are_inverse() {
        for x in [-20.0, -3.3, -0.1, 1e-9, 0.7, 2.5, 40.0] {
            let r = dd(x).exp().ln() - dd(x);
            assert!(r.hi().abs() < 1e-30 * x.abs().max(1.0), "{x}: {r:?}");
        }
    }

    #[test]
    fn exp_one_matches_reference_digits() {
        // e = 2.71828182845904523536028747135266...
        let e = dd(1.0).exp();
        assert_eq!(e.hi(), std::f64::consts::E);
        assert!((e.lo() - 1.445_646_891_729_250_2e-16).abs() < 1e-31);
    }

    #[test]
    fn sqrt_squares_back() {
        let r = dd(2.0).sqrt();
        assert!((r * r - dd(2.0)).hi().abs() < 1e-31);
    }

    #[test]
    fn tanh_is_odd_and_matches_f64() {
        for x in [-5.0, -0.3, 1e-6, 0.9, 1.2, 7.0] {
            let t = dd(x).tanh();
            assert!((t.as_f64() - x.tanh()).abs() < 1e-15);
            assert_eq!((dd(-x).tanh() + t).hi(), 0.0);
        }
    }

    #[test]
    fn tiny_differences_survive() {
        let a = dd(2.0) + dd(1e-20);
        let d = a - dd(2.0);
        assert!((d.as_f64() - 1e-20).abs() < 1e-35);
    }
}
