use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConductorThermalParams, Correlations};
use crate::error::{Error, Result};

pub const DEFAULT_CATALOGUE_TOML: &str = include_str!("../../data/conductors.toml");

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductorEntry {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub diameter_m: f64,
    pub r20_ohm_per_m: f64,
    pub alpha: f64,
    pub m_cp: f64,
    pub emissivity: f64,
    #[serde(skip)]
    correlations: Correlations,
}

impl ConductorEntry {
    pub fn thermal(&self) -> ConductorThermalParams {
        ConductorThermalParams {
            m_cp: self.m_cp,
            diameter_m: self.diameter_m,
            emissivity: self.emissivity,
            solar_gain_w_per_m: 0.0,
            correlations: self.correlations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalogue {
    pub schema_version: u32,
    #[serde(default)]
    pub correlations: Correlations,
    pub conductor: Vec<ConductorEntry>,
}

impl Catalogue {
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_CATALOGUE_TOML).expect("built-in catalogue parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cat: Catalogue = toml::from_str(text)?;
        if cat.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "conductor catalogue",
                format!("unsupported schema_version {}", cat.schema_version),
            ));
        }
        for c in &mut cat.conductor {
            c.correlations = cat.correlations;
            c.thermal().validate()?;
            if !(c.r20_ohm_per_m > 0.0) {
                return Err(Error::invalid(
                    "conductor catalogue",
                    format!("{}: r20_ohm_per_m must be > 0", c.name),
                ));
            }
        }
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn get(&self, name: &str) -> Result<&ConductorEntry> {
        let key = name.to_ascii_lowercase();
        self.conductor
            .iter()
            .find(|c| c.name == key)
            .ok_or_else(|| {
                Error::invalid(
                    "conductor",
                    format!(
                        "unknown conductor '{name}' (known: {})",
                        self.conductor
                            .iter()
                            .map(|c| c.name.as_str())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                )
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalogue_has_drake() {
        let cat = Catalogue::builtin();
        let d = cat.get("Drake").unwrap();
        assert_eq!(d.m_cp, 1310.0);
        assert_eq!(d.thermal().correlations, Correlations::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = DEFAULT_CATALOGUE_TOML.replace("emissivity = 0.8\n", "emisivity = 0.8\n");
        let err = Catalogue::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("emisivity"), "{err}");
    }
}
