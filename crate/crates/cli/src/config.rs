//! Run configuration read from JSON.

use std::fmt;
use std::path::{Path, PathBuf};

use hjb_illiquid::model::{MarketParams, SurvivalModel};
use hjb_illiquid::montecarlo::McOptions;
use hjb_illiquid::solver::{Grid2D, SolverOptions};
use hjb_illiquid::symmetry::Ctx;
use hjb_illiquid::utility::UtilitySpec;
use hjb_illiquid::verify::VerifyOptions;
use hjb_illiquid::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Reduction case and symmetry parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionSpec {
    pub case: String,
    /// `None` selects the survival model's default.
    pub omega: Option<f64>,
}

impl Default for ReductionSpec {
    fn default() -> Self {
        ReductionSpec { case: "H4".into(), omega: None }
    }
}

/// Grid description; `z` is centred on the image of `l = 0, t = 0` unless
/// `z_center` is given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub z_center: Option<f64>,
    pub z_half_width: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub n_z: usize,
    pub n_h: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { z_center: None, z_half_width: 5.0, h_min: 0.25, h_max: 4.0, n_z: 64, n_h: 64 }
    }
}

/// Query grid for the `policy` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyQuery {
    pub l: Vec<f64>,
    pub h: Vec<f64>,
    pub t: Vec<f64>,
}

impl Default for PolicyQuery {
    fn default() -> Self {
        PolicyQuery { l: vec![-1.0, 0.0, 1.0], h: vec![0.5, 1.0, 2.0], t: vec![0.0, 1.0, 2.0, 5.0] }
    }
}

/// Baseline policies for `simulate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    /// Consumption fraction of liquid wealth.
    pub q: f64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec { q: 0.1 }
    }
}

/// Everything a subcommand needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: MarketParams,
    pub survival: SurvivalModel,
    /// `None` uses `EXPn` with the market's `a`.
    pub utility: Option<UtilitySpec>,
    pub reduction: ReductionSpec,
    pub grid: GridSpec,
    pub solver: SolverOptions,
    pub mc: McOptions,
    pub verify: VerifyOptions,
    pub policy: PolicyQuery,
    pub baselines: BaselineSpec,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// A configuration problem; always mapped to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A loaded configuration with the hash of its source bytes.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
}

/// Line of the first occurrence of `"field"` in `text`, if any.
fn locate(text: &str, field: &str) -> Option<usize> {
    let key = format!("\"{field}\"");
    text.lines().position(|l| l.contains(&key)).map(|i| i + 1)
}

impl RunConfig {
    pub fn utility(&self) -> UtilitySpec {
        self.utility.unwrap_or(UtilitySpec::EXPn { a: self.params.a })
    }

    pub fn omega(&self) -> f64 {
        self.reduction.omega.unwrap_or_else(|| self.survival.default_omega(&self.params))
    }

    pub fn ctx(&self) -> Ctx {
        Ctx::new(self.params, self.survival)
    }

    pub fn grid(&self) -> Result<Grid2D, Error> {
        let g = &self.grid;
        let center = g.z_center.unwrap_or_else(|| hjb_illiquid::reduction::z_h4(&self.ctx(), self.omega(), 0.0, 0.0));
        Grid2D::new((center - g.z_half_width, center + g.z_half_width), (g.h_min, g.h_max), g.n_z, g.n_h)
    }

    /// Checks every component invariant.
    pub fn validate(&self) -> Result<(), Error> {
        self.params.validate()?;
        self.survival.validate()?;
        self.utility().validate()?;
        self.mc.validate()?;
        if let Some(o) = self.reduction.omega {
            if !o.is_finite() {
                return Err(Error::InvalidParameter { field: "omega", reason: "must be finite".into() });
            }
        }
        self.grid()?;
        Ok(())
    }

    /// Reads, parses and validates `path`.
    pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            ConfigError(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        })?;
        config.validate().map_err(|e| {
            let line = match &e {
                Error::InvalidParameter { field, .. } => locate(&text, field),
                _ => None,
            };
            match line {
                Some(l) => ConfigError(format!("{}:{l}: {e}", path.display())),
                None => ConfigError(format!("{}: {e}", path.display())),
            }
        })?;
        let hash = hex(&Sha256::digest(text.as_bytes()));
        Ok(Loaded { config, hash })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn invalid_field_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "{\n  \"params\": {\n    \"r\": 0.05, \"alpha\": 0.1, \"sigma\": 0.2, \"mu\": 0.06,\n    \"delta\": 0.03, \"eta\": 0.2,\n    \"rho\": 1.2, \"a\": 1.0\n  }\n}\n").unwrap();
        let e = RunConfig::load(&p).unwrap_err().0;
        assert!(e.contains(":5:") && e.contains("rho"), "{e}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "{\n  \"bogus\": 1\n}\n").unwrap();
        let e = RunConfig::load(&p).unwrap_err().0;
        assert!(e.contains(":2:"), "{e}");
    }
}
