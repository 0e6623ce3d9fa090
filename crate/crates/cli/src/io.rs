use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geoconn::models::ModelId;
use serde::Serialize;

pub const SCHEMA: u32 = 1;

/// Comma-separated coordinates, e.g. `0.5,-1,2`.
pub fn parse_point(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| format!("'{t}' is not a number"))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(format!("'{t}' is not finite"))
                    }
                })
        })
        .collect()
}

/// Semicolon-separated points, e.g. `0,0;1,2`.
pub fn parse_points(s: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    s.split(';').filter(|t| !t.trim().is_empty()).map(parse_point).collect()
}

/// `--model` takes a JSON file path, or inline JSON when the value starts with `{`.
pub fn read_config(value: &str) -> Result<String> {
    if value.trim_start().starts_with('{') {
        Ok(value.to_string())
    } else {
        fs::read_to_string(value).with_context(|| format!("--model: cannot read '{value}'"))
    }
}

pub fn load_model(flag: Option<&str>) -> Result<ModelId> {
    let Some(v) = flag else {
        bail!("--model: required for this command")
    };
    ModelId::from_json(&read_config(v)?).context("--model")
}

pub fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        bail!("{name}: expected {n} coordinates, got {}", v.len());
    }
    Ok(())
}

/// Where reports and CSV data go.
#[derive(Debug, Clone, Default)]
pub struct Sink {
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Sink {
    pub fn json<T: Serialize>(&self, report: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        match &self.out {
            Some(p) => write_file(p, &text),
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }

    pub fn csv(&self, text: &str) -> Result<()> {
        if let Some(p) = &self.csv {
            write_file(p, text)?;
        }
        Ok(())
    }
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).with_context(|| format!("cannot write '{}'", p.display()))
}

/// Adds `schema` and `kind` to a report that does not carry them.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema: u32,
    pub kind: &'a str,
    #[serde(flatten)]
    pub body: T,
}

pub fn envelope<T: Serialize>(kind: &str, body: T) -> Envelope<'_, T> {
    Envelope {
        schema: SCHEMA,
        kind,
        body,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_lists() {
        assert_eq!(parse_point("1, -2.5,3e1").unwrap(), vec![1.0, -2.5, 30.0]);
        assert!(parse_point("1,,2").is_err());
        assert!(parse_point("nan").is_err());
        assert_eq!(parse_points("0,0;1,2;").unwrap(), vec![vec![0.0, 0.0], vec![1.0, 2.0]]);
    }
}
