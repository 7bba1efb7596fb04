//! Exact rational scalar used for every price, value and time in the crate.
//!
//! `Q` wraps a reduced `i128` fraction. All arithmetic is overflow-checked and
//! panics instead of wrapping, so a result is either exact or absent.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Q(Ratio<i128>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseRationalError {
    #[error("empty rational literal")]
    Empty,
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("malformed rational literal `{0}`")]
    Malformed(String),
    #[error("rational literal `{0}` does not fit in 128 bits")]
    Overflow(String),
}

impl Q {
    pub const ZERO: Q = Q(Ratio::new_raw(0, 1));
    pub const ONE: Q = Q(Ratio::new_raw(1, 1));

    /// Panics on a zero denominator.
    pub fn new(numer: i128, denom: i128) -> Q {
        assert!(denom != 0, "zero denominator");
        Q(Ratio::new(numer, denom))
    }

    pub fn int(n: i128) -> Q {
        Q(Ratio::from_integer(n))
    }

    pub fn numer(&self) -> i128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i128 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn abs(&self) -> Q {
        Q(self.0.abs())
    }

    pub fn recip(&self) -> Q {
        assert!(!self.is_zero(), "reciprocal of zero");
        Q(self.0.recip())
    }

    pub fn floor(&self) -> i128 {
        Integer::div_floor(&self.numer(), &self.denom())
    }

    pub fn ceil(&self) -> i128 {
        let (q, r) = self.numer().div_mod_floor(&self.denom());
        if r == 0 {
            q
        } else {
            q + 1
        }
    }

    pub fn min(self, other: Q) -> Q {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Q) -> Q {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    /// Canonical `num/den` rendering, or the bare integer when `den == 1`.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Q {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl fmt::Debug for Q {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn parse_i128(s: &str, whole: &str) -> Result<i128, ParseRationalError> {
    if s.is_empty() || !s.trim_start_matches(['-', '+']).chars().all(|c| c.is_ascii_digit()) {
        return Err(ParseRationalError::Malformed(whole.to_string()));
    }
    s.parse::<i128>()
        .map_err(|_| ParseRationalError::Overflow(whole.to_string()))
}

impl FromStr for Q {
    type Err = ParseRationalError;

    /// Accepts integers (`7`), fractions (`-3/4`) and exact decimals (`905.5`).
    fn from_str(raw: &str) -> Result<Q, ParseRationalError> {
        let s = raw.trim();
        if s.is_empty() {
            return Err(ParseRationalError::Empty);
        }
        if let Some((n, d)) = s.split_once('/') {
            let n = parse_i128(n.trim(), s)?;
            let d = parse_i128(d.trim(), s)?;
            if d == 0 {
                return Err(ParseRationalError::ZeroDenominator(s.to_string()));
            }
            return Ok(Q::new(n, d));
        }
        if let Some((int_part, frac)) = s.split_once('.') {
            if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
                return Err(ParseRationalError::Malformed(s.to_string()));
            }
            let negative = int_part.starts_with('-');
            let int_digits = int_part.trim_start_matches(['-', '+']);
            let whole = if int_digits.is_empty() {
                0
            } else {
                parse_i128(int_digits, s)?
            };
            let scale = 10i128
                .checked_pow(frac.len() as u32)
                .ok_or_else(|| ParseRationalError::Overflow(s.to_string()))?;
            let frac_n = parse_i128(frac, s)?;
            let n = whole
                .checked_mul(scale)
                .and_then(|x| x.checked_add(frac_n))
                .ok_or_else(|| ParseRationalError::Overflow(s.to_string()))?;
            return Ok(Q::new(if negative { -n } else { n }, scale));
        }
        Ok(Q::int(parse_i128(s, s)?))
    }
}

impl Serialize for Q {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Q {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Q, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Int(i) => Ok(Q::int(i as i128)),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl From<i128> for Q {
    fn from(n: i128) -> Q {
        Q::int(n)
    }
}

impl From<i64> for Q {
    fn from(n: i64) -> Q {
        Q::int(n as i128)
    }
}

impl From<i32> for Q {
    fn from(n: i32) -> Q {
        Q::int(n as i128)
    }
}

impl From<u32> for Q {
    fn from(n: u32) -> Q {
        Q::int(n as i128)
    }
}

impl Add for Q {
    type Output = Q;
    fn add(self, rhs: Q) -> Q {
        Q(self.0.checked_add(&rhs.0).expect("rational overflow in add"))
    }
}

impl Sub for Q {
    type Output = Q;
    fn sub(self, rhs: Q) -> Q {
        Q(self.0.checked_sub(&rhs.0).expect("rational overflow in sub"))
    }
}

impl Mul for Q {
    type Output = Q;
    fn mul(self, rhs: Q) -> Q {
        Q(self.0.checked_mul(&rhs.0).expect("rational overflow in mul"))
    }
}

impl Div for Q {
    type Output = Q;
    fn div(self, rhs: Q) -> Q {
        assert!(!rhs.is_zero(), "division by zero");
        Q(self.0.checked_div(&rhs.0).expect("rational overflow in div"))
    }
}

impl Neg for Q {
    type Output = Q;
    fn neg(self) -> Q {
        Q(-self.0)
    }
}

impl AddAssign for Q {
    fn add_assign(&mut self, rhs: Q) {
        *self = *self + rhs;
    }
}

impl SubAssign for Q {
    fn sub_assign(&mut self, rhs: Q) {
        *self = *self - rhs;
    }
}

impl MulAssign for Q {
    fn mul_assign(&mut self, rhs: Q) {
        *self = *self * rhs;
    }
}

impl Sum for Q {
    fn sum<I: Iterator<Item = Q>>(iter: I) -> Q {
        iter.fold(Q::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Q> for Q {
    fn sum<I: Iterator<Item = &'a Q>>(iter: I) -> Q {
        iter.fold(Q::ZERO, |a, b| a + *b)
    }
}

/// Least common multiple of the denominators, used to move a batch of
/// rationals onto a shared integer scale.
pub fn common_denominator<'a>(values: impl IntoIterator<Item = &'a Q>) -> i128 {
    values
        .into_iter()
        .fold(1i128, |acc, q| acc.lcm(&q.denom()))
}

/// Exact numerator of `q` on the scale `d` (panics if `d` is not a multiple of
/// the denominator).
pub fn scaled(q: Q, d: i128) -> i128 {
    assert_eq!(d % q.denom(), 0, "scale {d} does not absorb {q}");
    q.numer()
        .checked_mul(d / q.denom())
        .expect("rational overflow while scaling")
}

pub fn dot(a: &[Q], b: &[Q]) -> Q {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn cmp_vec(a: &[Q], b: &[Q]) -> Option<Ordering> {
    let mut le = true;
    let mut ge = true;
    for (x, y) in a.iter().zip(b) {
        le &= x <= y;
        ge &= x >= y;
    }
    match (le, ge) {
        (true, true) => Some(Ordering::Equal),
        (true, false) => Some(Ordering::Less),
        (false, true) => Some(Ordering::Greater),
        _ => None,
    }
}

/// Max-norm distance between two equal-length vectors.
pub fn sup_dist(a: &[Q], b: &[Q]) -> Q {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs())
        .fold(Q::ZERO, Q::max)
}

#[macro_export]
macro_rules! q {
    ($n:literal / $d:literal) => {
        $crate::rational::Q::new($n, $d)
    };
    ($n:expr) => {
        $crate::rational::Q::from($n)
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_literal_forms() {
        assert_eq!("7".parse::<Q>().unwrap(), Q::int(7));
        assert_eq!("-3/4".parse::<Q>().unwrap(), Q::new(-3, 4));
        assert_eq!("905.5".parse::<Q>().unwrap(), Q::new(1811, 2));
        assert_eq!("2.9".parse::<Q>().unwrap(), Q::new(29, 10));
        assert_eq!("-0.25".parse::<Q>().unwrap(), Q::new(-1, 4));
        assert_eq!(".5".parse::<Q>().unwrap(), Q::new(1, 2));
    }

    #[test]
    fn rejects_bad_literals() {
        assert!(matches!(
            "1/0".parse::<Q>(),
            Err(ParseRationalError::ZeroDenominator(_))
        ));
        assert!("abc".parse::<Q>().is_err());
        assert!("1.".parse::<Q>().is_err());
        assert!("".parse::<Q>().is_err());
        assert!("1/2/3".parse::<Q>().is_err());
        assert!("1e5".parse::<Q>().is_err());
    }

    #[test]
    fn display_is_canonical() {
        assert_eq!(Q::new(6, 4).to_string(), "3/2");
        assert_eq!(Q::new(-8, 4).to_string(), "-2");
        assert_eq!(Q::new(3, -9).to_string(), "-1/3");
    }

    #[test]
    fn floor_and_ceil() {
        assert_eq!(Q::new(7, 2).floor(), 3);
        assert_eq!(Q::new(7, 2).ceil(), 4);
        assert_eq!(Q::new(-7, 2).floor(), -4);
        assert_eq!(Q::new(-7, 2).ceil(), -3);
        assert_eq!(Q::int(5).ceil(), 5);
    }

    #[test]
    fn json_round_trip() {
        let v = vec![Q::new(1, 3), Q::int(-4), Q::new(1811, 2)];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"["1/3","-4","1811/2"]"#);
        let back: Vec<Q> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        let ints: Vec<Q> = serde_json::from_str("[1, 2]").unwrap();
        assert_eq!(ints, vec![Q::int(1), Q::int(2)]);
    }

    proptest::proptest! {
        #[test]
        fn render_parse_round_trip(n in -1_000_000i128..1_000_000, d in 1i128..100_000) {
            let q = Q::new(n, d);
            proptest::prop_assert_eq!(q.render().parse::<Q>().unwrap(), q);
        }

        #[test]
        fn scaling_is_exact(n in -1000i128..1000, d in 1i128..50, e in 1i128..50) {
            let a = Q::new(n, d);
            let b = Q::new(n + 1, e);
            let s = common_denominator([&a, &b]);
            proptest::prop_assert_eq!(Q::new(scaled(a, s), s), a);
            proptest::prop_assert_eq!(Q::new(scaled(b, s), s), b);
        }
    }
}
