use std::path::Path;

use serde::Deserialize;

use polband_core::nuisance::Bandwidth;
use polband_core::simulate::PropensityChoice;

use crate::CliError;

/// Settings read from a `--config` TOML file. Every key is optional;
/// command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<f64>,
    #[serde(default)]
    pub nuisance: NuisanceSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub band: BandSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSection {
    pub bandwidth: Option<BandwidthSetting>,
    pub propensity: Option<PropensityChoice>,
    pub clip: Option<f64>,
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// Cross-fit the one-step nuisances.
    pub cross_fit: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSection {
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub t_grid: Option<usize>,
    pub seed: Option<u64>,
    /// Cross-fit the nuisances behind the band methods.
    pub cross_fit: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Fixed(f64),
    Named(String),
}

impl BandwidthSetting {
    pub fn resolve(&self) -> Result<Bandwidth, CliError> {
        match self {
            BandwidthSetting::Fixed(h) if *h > 0.0 && h.is_finite() => Ok(Bandwidth::Fixed(*h)),
            BandwidthSetting::Fixed(h) => Err(CliError::Usage(format!("nuisance.bandwidth must be positive, got {h}"))),
            BandwidthSetting::Named(s) if s == "auto" => Ok(Bandwidth::Auto),
            BandwidthSetting::Named(s) => {
                Err(CliError::Usage(format!("nuisance.bandwidth must be a number or \"auto\", got \"{s}\"")))
            }
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn bandwidth(&self) -> Result<Bandwidth, CliError> {
        self.nuisance.bandwidth.as_ref().map_or(Ok(Bandwidth::Auto), BandwidthSetting::resolve)
    }
}
