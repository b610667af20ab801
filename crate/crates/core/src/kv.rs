//! Flat `key = value` configuration files. Values are read as JSON scalars
//! when they parse as such and as bare strings otherwise; `#` starts a
//! comment.

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn parse_map(text: &str) -> Result<serde_json::Map<String, serde_json::Value>> {
    let mut map = serde_json::Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        let value = serde_json::from_str(v).unwrap_or(serde_json::Value::String(v.into()));
        if map.insert(k.to_string(), value).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(map)
}

pub fn from_map<T: DeserializeOwned>(map: serde_json::Map<String, serde_json::Value>) -> Result<T> {
    serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    from_map(parse_map(text)?)
}

pub fn render<T: Serialize>(value: &T) -> String {
    let mut out = String::new();
    if let Ok(serde_json::Value::Object(m)) = serde_json::to_value(value) {
        for (k, v) in m {
            let v = match v {
                serde_json::Value::String(s) => s,
                v => v.to_string(),
            };
            let _ = writeln!(out, "{k} = {v}");
        }
    }
    out
}
