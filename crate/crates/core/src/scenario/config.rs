use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array_model::{ChannelModel, SymbolAlphabet};
use crate::beamformers::Family;
use crate::error::{Error, Result};
use crate::metrics::{NoiseModel, SnrConvention};
use crate::spatial_filter::WindowTaper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub trials: usize,
    pub array: ArrayConfig,
    pub users: UserConfig,
    #[serde(default)]
    pub multipath: MultipathConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    pub receivers: ReceiverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nearfield: Option<NearfieldConfig>,
    #[serde(default)]
    pub decimation: DecimationConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_elements: usize,
    #[serde(default = "default_carrier")]
    pub carrier_hz: f64,
    /// Element spacing; half a wavelength when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Spatial frequency uniform on `[−π, π)`.
    #[default]
    UniformOmega,
    /// Angle uniform on `[−π/2, π/2)`.
    UniformAngle,
    /// Spatial frequencies listed in `omega_pi`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub count: usize,
    #[serde(default)]
    pub placement: Placement,
    pub distance_m: f64,
    /// Upper end of a uniform distance range starting at `distance_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_max_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omega_pi: Vec<f64>,
    /// Per-user distances; overrides `distance_m` when given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distances_m: Vec<f64>,
    /// Pins user 0 at this spatial frequency and reports its SINR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked_omega_pi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipathConfig {
    pub enabled: bool,
    #[serde(default = "default_scatterers")]
    pub scatterers_per_user: usize,
    #[serde(default = "default_ring")]
    pub ring_radius_m: f64,
}

impl Default for MultipathConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            scatterers_per_user: default_scatterers(),
            ring_radius_m: default_ring(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default = "default_model")]
    pub model: ChannelModel,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default)]
    pub noise_model: NoiseModel,
    #[serde(default)]
    pub snr_convention: SnrConvention,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            model: default_model(),
            beta0: default_beta0(),
            noise_model: NoiseModel::default(),
            snr_convention: SnrConvention::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    pub families: Vec<Family>,
}

/// Window-designed filter bank used by the far-field CBS families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub length: usize,
    #[serde(default = "default_one")]
    pub bank_size: usize,
    #[serde(default)]
    pub taper: WindowTaper,
}

/// Filter for the near-field families: a stored filter file or a band spec
/// designed at run time. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearfieldConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_spec: Option<PathBuf>,
    /// Served users are picked on `|ω|`.
    #[serde(default = "default_true")]
    pub mirrored: bool,
    /// Band (units of π) of the served users; the filter's passband when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select_omega_pi: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecimationConfig {
    pub interval: usize,
    #[serde(default)]
    pub offset: usize,
}

impl Default for DecimationConfig {
    fn default() -> Self {
        Self {
            interval: 1,
            offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    /// Snapshots per (trial, SNR, family); 0 disables the simulation.
    #[serde(default)]
    pub symbols: usize,
    #[serde(default)]
    pub alphabet: SymbolAlphabet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

fn default_carrier() -> f64 {
    3.0e9
}

fn default_scatterers() -> usize {
    3
}

fn default_ring() -> f64 {
    5.0
}

fn default_model() -> ChannelModel {
    ChannelModel::ExactSpherical
}

fn default_beta0() -> f64 {
    1.0
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config("scenario", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { path: field, message } => Error::Config {
                path: format!("{}: {field}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("scenario", e.to_string()))
    }

    pub fn csv_name(&self) -> String {
        self.output.csv.clone().unwrap_or_else(|| format!("{}.csv", self.name))
    }

    pub fn report_name(&self) -> String {
        self.output
            .report
            .clone()
            .unwrap_or_else(|| format!("{}.json", self.name))
    }

    pub fn tracked_user(&self) -> Option<usize> {
        (self.users.tracked_omega_pi.is_some() && self.users.count > 0).then_some(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(field, msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", "must be a non-empty file stem");
        }
        let n = self.array.n_elements;
        if n == 0 || n.is_multiple_of(2) {
            return bad("array.n_elements", "must be a positive odd integer");
        }
        if !(self.array.carrier_hz > 0.0) {
            return bad("array.carrier_hz", "must be positive");
        }
        if self.array.spacing_m.is_some_and(|d| !(d > 0.0)) {
            return bad("array.spacing_m", "must be positive");
        }
        let u = &self.users;
        if !(u.distance_m > 0.0) {
            return bad("users.distance_m", "must be positive");
        }
        if let Some(max) = u.distance_max_m {
            if !(max >= u.distance_m) {
                return bad("users.distance_max_m", "must be at least distance_m");
            }
        }
        if !u.distances_m.is_empty() {
            if u.distances_m.len() != u.count {
                return bad("users.distances_m", "needs one entry per user");
            }
            if u.distances_m.iter().any(|r| !(*r > 0.0)) {
                return bad("users.distances_m", "distances must be positive");
            }
        }
        if u.placement == Placement::Explicit && u.omega_pi.len() != u.count {
            return bad("users.omega_pi", "explicit placement needs one entry per user");
        }
        if u.omega_pi.iter().chain(&u.tracked_omega_pi).any(|w| !(-1.0..=1.0).contains(w)) {
            return bad("users.omega_pi", "spatial frequencies must lie in [-1, 1] (units of pi)");
        }
        if self.trials == 0 {
            return bad("trials", "must be at least 1");
        }
        if self.multipath.enabled {
            if self.multipath.scatterers_per_user == 0 {
                return bad("multipath.scatterers_per_user", "must be at least 1");
            }
            if !(self.multipath.ring_radius_m > 0.0) {
                return bad("multipath.ring_radius_m", "must be positive");
            }
        }
        if !(self.channel.beta0 > 0.0) {
            return bad("channel.beta0", "must be positive");
        }
        let fams = &self.receivers.families;
        if fams.is_empty() {
            return bad("receivers.families", "list at least one family");
        }
        if (1..fams.len()).any(|i| fams[..i].contains(&fams[i])) {
            return bad("receivers.families", "families must be distinct");
        }
        let needs_bank = fams
            .iter()
            .any(|f| f.uses_cbs() && !matches!(f, Family::NfCbsMrc | Family::NfCbsMmse));
        match &self.filter {
            Some(f) => {
                if f.length == 0 || f.length > n {
                    return bad("filter.length", "must lie in [1, n_elements]");
                }
                if f.bank_size == 0 {
                    return bad("filter.bank_size", "must be at least 1");
                }
            }
            None if needs_bank => {
                return bad("filter", "CBS families need a [filter] section");
            }
            None => {}
        }
        let needs_nf = fams
            .iter()
            .any(|f| matches!(f, Family::NfCbsMrc | Family::NfCbsMmse));
        match &self.nearfield {
            Some(nf) if nf.filter_file.is_some() == nf.band_spec.is_some() => {
                return bad("nearfield", "give exactly one of filter_file and band_spec");
            }
            Some(nf) if nf.select_omega_pi.is_some_and(|[a, b]| !(-1.0 <= a && a < b && b <= 1.0)) => {
                return bad("nearfield.select_omega_pi", "need -1 <= lo < hi <= 1");
            }
            None if needs_nf => {
                return bad("nearfield", "near-field families need a [nearfield] section");
            }
            _ => {}
        }
        if self.decimation.interval == 0 {
            return bad("decimation.interval", "must be at least 1");
        }
        if self.decimation.offset >= self.decimation.interval {
            return bad("decimation.offset", "must be below the interval");
        }
        if self.sweep.snr_db.is_empty() || self.sweep.snr_db.iter().any(|s| !s.is_finite()) {
            return bad("sweep.snr_db", "list at least one finite SNR");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = r#"
name = "desk"
seed = 7
trials = 2

[array]
n_elements = 33

[users]
count = 6
distance_m = 200.0

[receivers]
families = ["mrc", "mmse", "cbs-mmse"]

[filter]
length = 8
bank_size = 2

[sweep]
snr_db = [0.0, 10.0]
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ScenarioConfig::from_toml(DESK).unwrap();
        assert_eq!(cfg.array.carrier_hz, 3.0e9);
        assert_eq!(cfg.channel.model, ChannelModel::ExactSpherical);
        assert_eq!(cfg.channel.noise_model, NoiseModel::PostCbs);
        assert_eq!(cfg.decimation.interval, 1);
        assert!(!cfg.multipath.enabled);
        assert_eq!(cfg.csv_name(), "desk.csv");
        assert_eq!(cfg.tracked_user(), None);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ScenarioConfig::from_toml(DESK).unwrap();
        cfg.users.tracked_omega_pi = Some(0.7);
        cfg.users.distance_max_m = Some(250.0);
        cfg.users.distances_m = vec![10.0; 6];
        cfg.array.spacing_m = Some(0.04);
        cfg.multipath.enabled = true;
        cfg.nearfield = Some(NearfieldConfig {
            filter_file: Some("f.filter".into()),
            band_spec: None,
            mirrored: true,
            select_omega_pi: Some([0.5, 0.9]),
        });
        cfg.monte_carlo.symbols = 1000;
        cfg.sweep.snr_db = vec![-10.0, 0.1 + 0.2, 1e-17];
        let text = cfg.to_toml().unwrap();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("n_elements = 33", "n_elements = 32", "array.n_elements"),
            ("length = 8", "length = 40", "filter.length"),
            ("trials = 2", "trials = 0", "trials"),
            ("snr_db = [0.0, 10.0]", "snr_db = []", "sweep.snr_db"),
            ("[\"mrc\", \"mmse\", \"cbs-mmse\"]", "[\"mrc\", \"mrc\"]", "receivers.families"),
        ];
        for (from, to, field) in cases {
            let err = ScenarioConfig::from_toml(&DESK.replace(from, to)).unwrap_err();
            match err {
                Error::Config { path, .. } => assert_eq!(path, field),
                other => panic!("{other:?}"),
            }
        }
        assert!(matches!(
            ScenarioConfig::from_toml(&DESK.replace("[filter]\nlength = 8\nbank_size = 2", "")),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            ScenarioConfig::from_toml(&format!("{DESK}\nbogus = 1")),
            Err(Error::Config { .. })
        ));
        let nf = DESK.replace("\"cbs-mmse\"]", "\"nf-cbs-mmse\"]");
        assert!(matches!(ScenarioConfig::from_toml(&nf), Err(Error::Config { .. })));
    }
}
