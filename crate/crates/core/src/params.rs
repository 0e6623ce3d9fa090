use serde_json::{Map, Value};

use crate::{Error, Result};

pub(crate) fn opt_f64(params: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::InvalidParams(format!("{key}: expected a number"))),
    }
}

pub(crate) fn opt_usize(params: &Map<String, Value>, key: &str) -> Result<Option<usize>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|u| Some(u as usize))
            .ok_or_else(|| Error::InvalidParams(format!("{key}: expected a nonnegative integer"))),
    }
}

pub(crate) fn opt_str<'a>(params: &'a Map<String, Value>, key: &str) -> Result<Option<&'a str>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_str()
            .map(Some)
            .ok_or_else(|| Error::InvalidParams(format!("{key}: expected a string"))),
    }
}
