//! Microsecond-resolution timestamps.
//!
//! Every timestamp in the framework (client clocks, virtual simulation time,
//! rebased server time) is an integer number of microseconds. Keeping time
//! integral makes per-stream ordering, window arithmetic and the wire format
//! exact: the protocol renders timestamps with six fractional digits, so a
//! `Micros` value round-trips through the wire without loss.

use alloc::string::String;
use core::fmt;
use core::ops::{Add, AddAssign, Sub};

/// A signed duration or instant with microsecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Micros(pub i64);

pub const MICROS_PER_SEC: i64 = 1_000_000;

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn from_secs_f64(secs: f64) -> Micros {
        Micros(libm::round(secs * MICROS_PER_SEC as f64) as i64)
    }

    pub fn from_secs(secs: i64) -> Micros {
        Micros(secs * MICROS_PER_SEC)
    }

    pub fn from_millis(ms: i64) -> Micros {
        Micros(ms * 1_000)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Truncate towards negative infinity to a multiple of `extent`.
    pub fn truncate_to(self, extent: Micros) -> Micros {
        debug_assert!(extent.0 > 0);
        Micros(self.0.div_euclid(extent.0) * extent.0)
    }

    pub fn saturating_sub(self, rhs: Micros) -> Micros {
        Micros(self.0.saturating_sub(rhs.0))
    }

    /// Render as decimal seconds with exactly six fractional digits, the
    /// timestamp syntax used on the wire and in stored tables.
    pub fn to_wire(self) -> String {
        alloc::format!("{}", self)
    }

    /// Parse the wire syntax produced by [`Micros::to_wire`]. Accepts up to
    /// six fractional digits; shorter fractions are zero-padded.
    pub fn parse_wire(s: &str) -> Option<Micros> {
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        if body.is_empty() {
            return None;
        }
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() || frac_part.len() > 6 {
            return None;
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return None;
        }
        let secs: i64 = int_part.parse().ok()?;
        let mut frac: i64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().ok()?
        };
        for _ in frac_part.len()..6 {
            frac *= 10;
        }
        let magnitude = secs.checked_mul(MICROS_PER_SEC)?.checked_add(frac)?;
        Some(Micros(if neg { -magnitude } else { magnitude }))
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        let (sign, abs) = if v < 0 { ("-", v.unsigned_abs()) } else { ("", v.unsigned_abs()) };
        write!(f, "{}{}.{:06}", sign, abs / MICROS_PER_SEC as u64, abs % MICROS_PER_SEC as u64)
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0 - rhs.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format_is_six_digit_fixed_point() {
        assert_eq!(Micros(500_000).to_wire(), "0.500000");
        assert_eq!(Micros(1_000_000).to_wire(), "1.000000");
        assert_eq!(Micros(-1_500).to_wire(), "-0.001500");
        assert_eq!(Micros(123_456_789).to_wire(), "123.456789");
    }

    #[test]
    fn wire_round_trip() {
        for v in [0i64, 1, -1, 999_999, 1_000_000, -123_456_789, i64::MAX / 2] {
            let m = Micros(v);
            assert_eq!(Micros::parse_wire(&m.to_wire()), Some(m));
        }
    }

    #[test]
    fn parse_accepts_short_fractions() {
        assert_eq!(Micros::parse_wire("1.5"), Some(Micros(1_500_000)));
        assert_eq!(Micros::parse_wire("2"), Some(Micros(2_000_000)));
        assert_eq!(Micros::parse_wire("0.1234567"), None);
        assert_eq!(Micros::parse_wire("1.2e3"), None);
        assert_eq!(Micros::parse_wire(""), None);
    }

    #[test]
    fn truncate_is_floor_division() {
        let ext = Micros(100_000);
        assert_eq!(Micros(250_000).truncate_to(ext), Micros(200_000));
        assert_eq!(Micros(200_000).truncate_to(ext), Micros(200_000));
        assert_eq!(Micros(-50_000).truncate_to(ext), Micros(-100_000));
    }
}
