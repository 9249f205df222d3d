//! Bundled test systems.

use crate::error::Result;
use crate::netmodel::{parse_case, Network};

pub const CASE5: &str = include_str!("../data/case5.m");
pub const CASE14: &str = include_str!("../data/case14.m");
pub const CASE57: &str = include_str!("../data/case57.m");
pub const CASE118: &str = include_str!("../data/case118.m");

/// Names accepted by [`builtin`].
pub const NAMES: [&str; 4] = ["case5", "case14", "case57", "case118"];

/// Text of a bundled case by name.
pub fn builtin_text(name: &str) -> Option<&'static str> {
    match name {
        "case5" => Some(CASE5),
        "case14" => Some(CASE14),
        "case57" => Some(CASE57),
        "case118" => Some(CASE118),
        _ => None,
    }
}

/// Parsed bundled case; panics only if the bundled text is corrupt.
pub fn builtin(name: &str) -> Option<Network> {
    builtin_text(name).map(|t| parse_case(t).expect("bundled case parses"))
}

pub fn case5() -> Network {
    builtin("case5").unwrap()
}

/// Every bundled network, smallest first.
pub fn all() -> Result<Vec<(&'static str, Network)>> {
    NAMES
        .iter()
        .map(|&n| parse_case(builtin_text(n).unwrap()).map(|net| (n, net)))
        .collect()
}
