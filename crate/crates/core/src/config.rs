//! Flat `key=value` configuration text.

use std::str::FromStr;

use crate::error::{FmsrError, Result};

/// A configuration whose fields are addressable by string keys.
pub trait KeyValue {
    /// Sets one field. Returns `Ok(false)` if the key is not a field.
    fn set_key(&mut self, key: &str, value: &str) -> Result<bool>;
    /// All fields in a stable order.
    fn to_pairs(&self) -> Vec<(&'static str, String)>;
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FmsrError::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(FmsrError::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Applies `pairs` to the targets in order; a key must belong to one of
/// them, otherwise it is rejected.
pub fn apply(pairs: &[(String, String)], targets: &mut [&mut dyn KeyValue]) -> Result<()> {
    'outer: for (k, v) in pairs {
        for t in targets.iter_mut() {
            if t.set_key(k, v)? {
                continue 'outer;
            }
        }
        return Err(FmsrError::Config(format!("unknown key {k:?}")));
    }
    Ok(())
}

pub(crate) fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| FmsrError::Config(format!("invalid value {v:?} for {key}")))
}

pub(crate) fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(FmsrError::Config(format!("invalid boolean {v:?} for {key}"))),
    }
}
