use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::geometry::Geometry;
use crate::multiwarped::MultiwarpedModel;
use crate::params::{opt_f64, opt_str, opt_usize};
use crate::stationary::StationaryModel;
use crate::{Error, Result};

use super::{BatesTorus, ConformallyFlat, EmbeddedPseudosphere, Flat, LatticeQuotient, Pseudosphere, SmithTorus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Flat,
    Pseudosphere,
    BatesTorus,
    SmithTorus,
    StandardStationary,
    Multiwarped,
}

/// A catalog entry plus its parameters, as read from a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelId {
    pub name: ModelName,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl ModelId {
    pub fn new(name: ModelName) -> Self {
        ModelId {
            name,
            params: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))
    }

    /// Lattice of the model's torus quotient, if any.
    pub fn lattice(&self) -> Result<Option<LatticeQuotient>> {
        match self.name {
            ModelName::BatesTorus | ModelName::SmithTorus => {
                let p = opt_f64(&self.params, "period")?.unwrap_or(4.0 * std::f64::consts::PI);
                positive("period", p)?;
                Ok(Some(LatticeQuotient::uniform(2, p)))
            }
            ModelName::Flat => match self.params.get("periods") {
                None => Ok(None),
                Some(v) => {
                    let list: Vec<Option<f64>> =
                        serde_json::from_value(v.clone()).map_err(|e| Error::InvalidParams(format!("periods: {e}")))?;
                    if list.iter().flatten().any(|p| !(*p > 0.0)) {
                        return Err(Error::InvalidParams("periods: must be positive".into()));
                    }
                    Ok(Some(LatticeQuotient::new(list)))
                }
            },
            _ => Ok(None),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{key}: must be positive")))
    }
}

fn check_keys(params: &Map<String, Value>, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::InvalidParams(format!("unknown parameter '{k}'")));
        }
    }
    Ok(())
}

/// Builds the chart geometry of a catalog entry.
pub fn make_model(id: &ModelId) -> Result<Box<dyn Geometry>> {
    let p = &id.params;
    Ok(match id.name {
        ModelName::Flat => {
            check_keys(p, &["n", "nu", "periods", "sigma"])?;
            let n = opt_usize(p, "n")?.unwrap_or(2);
            let nu = opt_usize(p, "nu")?.unwrap_or(0);
            if n == 0 || nu > n {
                return Err(Error::InvalidParams(format!(
                    "flat needs n >= 1 and 0 <= nu <= n (got n={n}, nu={nu})"
                )));
            }
            id.lattice()?;
            match opt_str(p, "sigma")? {
                Some(sigma) if nu == 0 => Box::new(ConformallyFlat::new(n, sigma)?),
                Some(_) => {
                    return Err(Error::InvalidParams(
                        "sigma: conformal factor is only supported for nu = 0".into(),
                    ))
                }
                None => Box::new(Flat::new(n, nu)),
            }
        }
        ModelName::Pseudosphere => {
            check_keys(p, &["n", "nu", "embedded"])?;
            let n = opt_usize(p, "n")?.unwrap_or(2);
            let nu = opt_usize(p, "nu")?.unwrap_or(1);
            let embedded = match p.get("embedded") {
                None => false,
                Some(v) => v
                    .as_bool()
                    .ok_or_else(|| Error::InvalidParams("embedded: expected a boolean".into()))?,
            };
            if embedded {
                Box::new(EmbeddedPseudosphere::new(n, nu)?)
            } else {
                Box::new(Pseudosphere::new(n, nu)?)
            }
        }
        ModelName::BatesTorus => {
            check_keys(p, &["period"])?;
            let lat = id.lattice()?.unwrap();
            Box::new(BatesTorus {
                period: lat.periods[0].unwrap(),
            })
        }
        ModelName::SmithTorus => {
            check_keys(p, &["period"])?;
            let lat = id.lattice()?.unwrap();
            Box::new(SmithTorus {
                period: lat.periods[0].unwrap(),
            })
        }
        ModelName::StandardStationary => Box::new(StationaryModel::from_params(p)?),
        ModelName::Multiwarped => Box::new(MultiwarpedModel::from_params(p)?),
    })
}

/// The built-in standard stationary models, by name.
pub fn stationary_preset(name: &str) -> Result<StationaryModel> {
    StationaryModel::preset(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_from_json() {
        let id = ModelId::from_json(r#"{"name":"flat","params":{"n":2,"nu":1}}"#).unwrap();
        let m = make_model(&id).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.index(), 1);
        let g = m.metric(&[0.3, 0.1]).unwrap();
        assert_eq!(g[(0, 0)], -1.0);
        assert_eq!(g[(1, 1)], 1.0);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let bad = [
            r#"{"name":"pseudosphere","params":{"n":1,"nu":0}}"#,
            r#"{"name":"pseudosphere","params":{"n":2,"nu":3}}"#,
            r#"{"name":"flat","params":{"n":2,"nu":"x"}}"#,
            r#"{"name":"flat","params":{"dim":2}}"#,
            r#"{"name":"bates-torus","params":{"period":-1}}"#,
        ];
        for text in bad {
            let id = ModelId::from_json(text).unwrap();
            assert!(matches!(make_model(&id), Err(Error::InvalidParams(_))), "{text}");
        }
        assert!(matches!(
            ModelId::from_json(r#"{"name":"klein-bottle"}"#),
            Err(Error::ModelFile(_))
        ));
    }

    #[test]
    fn torus_lattices() {
        let id = ModelId::new(ModelName::SmithTorus);
        let lat = id.lattice().unwrap().unwrap();
        assert_eq!(lat.periods, vec![Some(4.0 * std::f64::consts::PI); 2]);
        let flat = ModelId::new(ModelName::Flat).with("periods", serde_json::json!([1.0, null]));
        assert_eq!(flat.lattice().unwrap().unwrap().periods, vec![Some(1.0), None]);
    }
}
