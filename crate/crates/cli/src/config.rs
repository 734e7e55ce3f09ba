//! Run configuration: TOML file, `--set section.key=value` overrides and
//! validation into library types.

use std::path::Path;

use gqsm::harness::{default_scaling_grid, ChannelModel, ScalingCell, ScalingOptions, DEFAULT_MAX_BIT_ERRORS};
use gqsm::reference::DEFAULT_ML_CAP;
use gqsm::{Complex64, CovarianceMode, DecoderKind, DecoderParams, GqsmConfig, PilotMode, SweepPlan};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Problems the user must fix before anything runs. Maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<gqsm::GqsmError> for ConfigError {
    fn from(e: gqsm::GqsmError) -> Self {
        ConfigError(e.to_string())
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub n_tx: usize,
    pub n_rx: usize,
    pub p: usize,
    pub m: usize,
    /// `staggered`, `constellation`, `random` or `fixed`.
    pub pilots: String,
    /// `[re, im]` pairs, used when `pilots = "fixed"`.
    pub fixed_pilots: Vec<[f64; 2]>,
    /// `rayleigh` or `zero`.
    pub channel: String,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            n_tx: 16,
            n_rx: 16,
            p: 1,
            m: 4,
            pilots: "staggered".into(),
            fixed_pilots: Vec::new(),
            channel: "rayleigh".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSection {
    pub tau_max: usize,
    pub rho: f64,
    pub variance_floor: f64,
    /// `projected` or `full`.
    pub covariance: String,
}

impl Default for DecoderSection {
    fn default() -> Self {
        let d = DecoderParams::default();
        Self {
            tau_max: d.tau_max,
            rho: d.rho,
            variance_floor: d.variance_floor,
            covariance: "projected".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub decoders: Vec<String>,
    /// `start:step:stop`, a comma list, or a single value.
    pub ebn0: String,
    pub frames: u64,
    /// 0 disables early stopping.
    pub max_bit_errors: u64,
    pub seed: u64,
    pub ml_cap: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            decoders: vec!["gabp".into(), "mfb".into()],
            ebn0: "-10:1:-6".into(),
            frames: 100_000,
            max_bit_errors: DEFAULT_MAX_BIT_ERRORS,
            seed: 1,
            ml_cap: DEFAULT_ML_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    /// `decoder:n_tx:n_rx:p` entries; empty means the default grid.
    pub cells: Vec<String>,
    pub tau_max: usize,
    pub repetitions: usize,
    pub ebn0: f64,
    pub covariance: String,
}

impl Default for ScalingSection {
    fn default() -> Self {
        let o = ScalingOptions::default();
        Self {
            cells: Vec::new(),
            tau_max: o.params.tau_max,
            repetitions: o.repetitions,
            ebn0: o.ebn0_db,
            covariance: "full".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSection {
    pub ebn0: f64,
    /// Frame index drawn from the master seed.
    pub frame: u64,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self { ebn0: 20.0, frame: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemSection,
    pub decoder: DecoderSection,
    pub sweep: SweepSection,
    pub scaling: ScalingSection,
    pub demo: DemoSection,
}

/// Parses a scalar override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `section.key=value` overrides in order
    /// and checks the result against the schema.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override {ov:?} is not section.key=value")))?;
            let (section, field) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| ConfigError(format!("override key {key:?} is not section.key")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                return err(format!("{section} is not a section"));
            };
            sec.insert(field.to_string(), parse_value(raw.trim()));
        }
        toml::Value::Table(table)
            .try_into::<RunConfig>()
            .map_err(|e| ConfigError(format!("invalid configuration: {e}")))
    }

    /// Canonical serialization of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn gqsm_config(&self) -> Result<GqsmConfig, ConfigError> {
        let s = &self.system;
        let cfg = GqsmConfig::new(s.n_tx, s.n_rx, s.p, s.m)?;
        let mode = match s.pilots.as_str() {
            "staggered" => PilotMode::Staggered,
            "constellation" => PilotMode::Constellation,
            "random" => PilotMode::RandomPerFrame,
            "fixed" => PilotMode::Fixed(s.fixed_pilots.iter().map(|[re, im]| Complex64::new(*re, *im)).collect()),
            other => return err(format!("system.pilots: unknown mode {other:?}")),
        };
        if s.pilots != "fixed" && !s.fixed_pilots.is_empty() {
            return err("system.fixed_pilots given but system.pilots is not \"fixed\"");
        }
        Ok(cfg.pilot_mode(mode)?)
    }

    pub fn channel(&self) -> Result<ChannelModel, ConfigError> {
        match self.system.channel.as_str() {
            "rayleigh" => Ok(ChannelModel::Rayleigh),
            "zero" => Ok(ChannelModel::Zero),
            other => err(format!("system.channel: unknown model {other:?}")),
        }
    }

    pub fn decoder_params(&self) -> Result<DecoderParams, ConfigError> {
        let d = &self.decoder;
        let params = DecoderParams {
            tau_max: d.tau_max,
            rho: d.rho,
            variance_floor: d.variance_floor,
            covariance: covariance_mode(&d.covariance, "decoder.covariance")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn sweep_plan(&self) -> Result<SweepPlan, ConfigError> {
        let sw = &self.sweep;
        let decoders = sw
            .decoders
            .iter()
            .map(|d| d.parse::<DecoderKind>())
            .collect::<Result<Vec<_>, _>>()?;
        let mut plan = SweepPlan::new(self.gqsm_config()?, decoders, parse_ebn0(&sw.ebn0)?, sw.frames, sw.seed);
        plan.params = self.decoder_params()?;
        plan.max_bit_errors = (sw.max_bit_errors > 0).then_some(sw.max_bit_errors);
        plan.channel = self.channel()?;
        plan.ml_cap = sw.ml_cap;
        plan.validate()?;
        Ok(plan)
    }

    pub fn scaling(&self) -> Result<(Vec<ScalingCell>, ScalingOptions), ConfigError> {
        let sc = &self.scaling;
        let cells = if sc.cells.is_empty() {
            default_scaling_grid()
        } else {
            sc.cells.iter().map(|c| parse_cell(c)).collect::<Result<Vec<_>, _>>()?
        };
        for c in &cells {
            let cfg = GqsmConfig::new(c.n_tx, c.n_rx, c.p, 4)?;
            if c.decoder == DecoderKind::Ml {
                gqsm::MlSearchSpace::new(&cfg, self.sweep.ml_cap)?;
            }
        }
        let params = DecoderParams {
            tau_max: sc.tau_max,
            covariance: covariance_mode(&sc.covariance, "scaling.covariance")?,
            ..self.decoder_params()?
        };
        params.validate()?;
        if sc.repetitions == 0 {
            return err("scaling.repetitions must be at least 1");
        }
        if !sc.ebn0.is_finite() {
            return err("scaling.ebn0 must be finite");
        }
        let opts = ScalingOptions {
            params,
            repetitions: sc.repetitions,
            ebn0_db: sc.ebn0,
            seed: self.sweep.seed,
        };
        Ok((cells, opts))
    }
}

fn covariance_mode(s: &str, key: &str) -> Result<CovarianceMode, ConfigError> {
    match s {
        "projected" => Ok(CovarianceMode::Projected),
        "full" => Ok(CovarianceMode::Full),
        other => err(format!("{key}: unknown mode {other:?}")),
    }
}

/// `decoder:n_tx:n_rx:p`, e.g. `gabp:16:16:2`.
pub fn parse_cell(spec: &str) -> Result<ScalingCell, ConfigError> {
    let parts: Vec<&str> = spec.trim().split(':').collect();
    let [decoder, n_tx, n_rx, p] = parts[..] else {
        return err(format!("scaling cell {spec:?} is not decoder:n_tx:n_rx:p"));
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| ConfigError(format!("scaling cell {spec:?}: {s:?} is not a count")))
    };
    Ok(ScalingCell {
        decoder: decoder.parse()?,
        n_tx: num(n_tx)?,
        n_rx: num(n_rx)?,
        p: num(p)?,
    })
}

/// Expands `start:step:stop` (inclusive), a comma list, or a single value.
pub fn parse_ebn0(spec: &str) -> Result<Vec<f64>, ConfigError> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ConfigError(format!("Eb/N0 {s:?} is not a number")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let points = match parts[..] {
        [start, step, stop] => {
            let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
            if step <= 0.0 || stop < start {
                return err(format!("Eb/N0 range {spec:?} needs step > 0 and stop >= start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if count > 10_000 {
                return err(format!("Eb/N0 range {spec:?} has {count} points"));
            }
            // round away accumulated binary error so 0.1 steps print cleanly
            (0..count)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect()
        }
        [_] => spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return err(format!("Eb/N0 spec {spec:?} is not start:step:stop")),
    };
    if points.windows(2).any(|w| w[0] > w[1]) {
        return err(format!("Eb/N0 points {spec:?} must be ascending"));
    }
    Ok(points)
}
