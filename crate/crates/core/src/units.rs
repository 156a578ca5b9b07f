//! Parsing of physical quantities with unit suffixes.
//!
//! Everything is converted to SI base units: meters, seconds, watts, hertz.
//! A bare number is taken to already be in SI units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Time,
    Power,
    Frequency,
}

impl Dimension {
    fn base_symbol(self) -> &'static str {
        match self {
            Dimension::Length => "m",
            Dimension::Time => "s",
            Dimension::Power => "W",
            Dimension::Frequency => "Hz",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("empty quantity")]
    Empty,
    #[error("cannot parse number in {0:?}")]
    BadNumber(String),
    #[error("unit {unit:?} is not a {dimension:?} unit")]
    WrongUnit { unit: String, dimension: Dimension },
    #[error("quantity {0:?} is not finite")]
    NotFinite(String),
}

fn prefix_factor(prefix: &str) -> Option<f64> {
    Some(match prefix {
        "" => 1.0,
        "f" => 1e-15,
        "p" => 1e-12,
        "n" => 1e-9,
        "u" | "µ" | "μ" => 1e-6,
        "m" => 1e-3,
        "c" => 1e-2,
        "k" => 1e3,
        "M" => 1e6,
        "G" => 1e9,
        _ => return None,
    })
}

fn unit_factor(unit: &str, dimension: Dimension) -> Option<f64> {
    if unit.is_empty() {
        return Some(1.0);
    }
    if dimension == Dimension::Time {
        match unit {
            "min" => return Some(60.0),
            "h" => return Some(3600.0),
            _ => {}
        }
    }
    let base = dimension.base_symbol();
    let prefix = unit.strip_suffix(base)?;
    // "cm" is the only centi unit we accept.
    if prefix == "c" && dimension != Dimension::Length {
        return None;
    }
    prefix_factor(prefix)
}

/// Parse a quantity such as `"614 uW"`, `"524.59nm"`, `"1.5 h"` or `"2e-9"`.
pub fn parse_quantity(text: &str, dimension: Dimension) -> Result<f64, UnitError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(UnitError::Empty);
    }
    let split = text
        .char_indices()
        .find(|&(i, c)| {
            c.is_alphabetic()
                && c != 'e'
                && c != 'E'
                || (matches!(c, 'e' | 'E') && !exponent_follows(&text[i + c.len_utf8()..]))
        })
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let (number, unit) = text.split_at(split);
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| UnitError::BadNumber(text.to_string()))?;
    let unit = unit.trim();
    let factor = unit_factor(unit, dimension).ok_or_else(|| UnitError::WrongUnit {
        unit: unit.to_string(),
        dimension,
    })?;
    let out = value * factor;
    if !out.is_finite() {
        return Err(UnitError::NotFinite(text.to_string()));
    }
    Ok(out)
}

fn exponent_follows(rest: &str) -> bool {
    let mut chars = rest.chars();
    match chars.next() {
        Some('+') | Some('-') => chars.next().is_some_and(|c| c.is_ascii_digit()),
        Some(c) => c.is_ascii_digit(),
        None => false,
    }
}

/// A config value that is either a bare SI number or a string with a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuantityInput {
    Number(f64),
    Text(String),
}

impl QuantityInput {
    pub fn to_si(&self, dimension: Dimension) -> Result<f64, UnitError> {
        match self {
            QuantityInput::Number(v) if v.is_finite() => Ok(*v),
            QuantityInput::Number(v) => Err(UnitError::NotFinite(v.to_string())),
            QuantityInput::Text(s) => parse_quantity(s, dimension),
        }
    }
}

impl From<f64> for QuantityInput {
    fn from(v: f64) -> Self {
        QuantityInput::Number(v)
    }
}

impl From<&str> for QuantityInput {
    fn from(s: &str) -> Self {
        QuantityInput::Text(s.to_string())
    }
}
