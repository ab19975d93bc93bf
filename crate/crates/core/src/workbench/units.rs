//! Quantities written with SI prefixes, e.g. `"3.6fJ"`, `"1.26mW"`, `"8ns"`.

use serde::{Deserialize, Deserializer};

/// Parses `value` as a number followed by an optional SI prefix and the
/// required `unit` symbol. Bare numbers are taken in base units.
pub fn parse_si(value: &str, unit: &str) -> Result<f64, String> {
    let s = value.trim();
    let body = s.strip_suffix(unit).ok_or_else(|| {
        format!("`{s}` must end with the unit `{unit}` (e.g. \"3.6f{unit}\")")
    })?;
    let body = body.trim_end();
    let (number, scale) = match body.chars().last() {
        Some(c) if !c.is_ascii_digit() && c != '.' => {
            let scale = prefix_scale(c).ok_or_else(|| {
                format!("unknown SI prefix `{c}` in `{s}`; expected one of a f p n u m k M G")
            })?;
            (&body[..body.len() - c.len_utf8()], scale)
        }
        _ => (body, 1.0),
    };
    let n: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("`{s}` does not start with a number"))?;
    let v = n * scale;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(v)
}

fn prefix_scale(c: char) -> Option<f64> {
    Some(match c {
        'a' => 1e-18,
        'f' => 1e-15,
        'p' => 1e-12,
        'n' => 1e-9,
        'u' | 'µ' | 'μ' => 1e-6,
        'm' => 1e-3,
        'k' => 1e3,
        'M' => 1e6,
        'G' => 1e9,
        _ => return None,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Raw {
    Num(f64),
    Text(String),
}

fn quantity<'de, D: Deserializer<'de>>(d: D, unit: &str) -> Result<f64, D::Error> {
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(s) => parse_si(&s, unit).map_err(serde::de::Error::custom),
    }
}

pub(crate) fn joules<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    quantity(d, "J")
}

pub(crate) fn joules_opt<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    joules(d).map(Some)
}

pub(crate) fn watts<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    quantity(d, "W")
}

pub(crate) fn seconds<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    quantity(d, "s")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefixes() {
        assert_eq!(parse_si("3.6fJ", "J").unwrap(), 3.6e-15);
        assert!((parse_si("10.08pJ", "J").unwrap() - 10.08e-12).abs() < 1e-24);
        assert_eq!(parse_si("8ns", "s").unwrap(), 8e-9);
        assert_eq!(parse_si("1.26 mW", "W").unwrap(), 1.26e-3);
        assert_eq!(parse_si("2J", "J").unwrap(), 2.0);
        assert_eq!(parse_si("1e-12J", "J").unwrap(), 1e-12);
    }

    #[test]
    fn rejects_bad_suffix() {
        assert!(parse_si("3.6fW", "J").unwrap_err().contains("unit `J`"));
        assert!(parse_si("3.6xJ", "J").unwrap_err().contains("prefix `x`"));
        assert!(parse_si("fJ", "J").is_err());
    }
}
