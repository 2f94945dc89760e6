//! Run configuration: JSON file, then command-line overrides.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mpa_qkd::countermeasures::fs_bin_center_settings;
use mpa_qkd::polarization::Angle;
use mpa_qkd::source::CountModel;
use mpa_qkd::{AttackOrder, Error, ProtocolConfig, SourceConfig, SourceMode};
use serde::{Deserialize, Serialize};

/// Grid of analyzer offsets for `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub points: usize,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            points: 33,
            delta_min: 0.0,
            delta_max: FRAC_PI_2,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.delta_min],
            n => (0..n)
                .map(|k| {
                    self.delta_min + (self.delta_max - self.delta_min) * k as f64 / (n - 1) as f64
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsTestConfig {
    /// Polarimeter angles behind channel 0 and channel 1.
    pub polarimeter_angles: [Angle; 2],
    /// Alice's analyzer settings; the 16 bin centers when absent.
    pub settings: Option<Vec<Angle>>,
}

impl Default for FsTestConfig {
    fn default() -> Self {
        FsTestConfig {
            polarimeter_angles: [Angle::ZERO; 2],
            settings: None,
        }
    }
}

impl FsTestConfig {
    pub fn settings(&self) -> Vec<Angle> {
        self.settings.clone().unwrap_or_else(fs_bin_center_settings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FakedStateConfig {
    pub intensity: f64,
    pub threshold: f64,
}

impl Default for FakedStateConfig {
    fn default() -> Self {
        FakedStateConfig {
            intensity: 1.0,
            threshold: 0.75,
        }
    }
}

/// Everything a run depends on. Serializing it and feeding it back reproduces
/// the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    pub source: SourceConfig,
    pub sweep: SweepConfig,
    pub fs_test: FsTestConfig,
    pub faked_state: FakedStateConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Every violated constraint across all sections.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut problems = Vec::new();
        for r in [self.protocol.validate(), self.source.validate()] {
            match r {
                Err(Error::InvalidConfig(p)) => problems.extend(p),
                Err(e) => problems.push(e.to_string()),
                Ok(()) => {}
            }
        }
        if self.sweep.points == 0 {
            problems.push("sweep.points must be at least 1".into());
        }
        if !(self.sweep.delta_min.is_finite() && self.sweep.delta_max.is_finite()) {
            problems.push("sweep delta bounds must be finite".into());
        }
        if matches!(&self.fs_test.settings, Some(s) if s.is_empty()) {
            problems.push("fs_test.settings must not be empty".into());
        }
        if self.faked_state.intensity.is_nan() || self.faked_state.intensity < 0.0 {
            problems.push("faked_state.intensity must be non-negative".into());
        }
        if self.faked_state.threshold.is_nan() || self.faked_state.threshold <= 0.0 {
            problems.push("faked_state.threshold must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  - {}", problems.join("\n  - "))
        }
    }
}

/// Flags shared by every subcommand. Set flags win over the config file.
#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of trials (pulses for fs-test, per grid point for sweep).
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, global = true, env = "MPA_QKD_OUT", default_value = "out")]
    pub out: PathBuf,
}

/// Source selection flags.
#[derive(Debug, Clone, clap::Args)]
pub struct SourceArgs {
    /// Attack orders `n,m` for Alice and Bob.
    #[arg(long, value_parser = parse_orders)]
    pub orders: Option<AttackOrder>,
    /// Use the ideal singlet source instead of the attack.
    #[arg(long, conflicts_with = "orders")]
    pub singlet: bool,
    /// Poisson photon number with this mean instead of exactly `order` photons.
    #[arg(long)]
    pub poisson: Option<f64>,
    /// Alternate single-photon absorption on one side.
    #[arg(long)]
    pub alternating: bool,
}

pub fn parse_orders(s: &str) -> Result<AttackOrder, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [n, m] = parts.as_slice() else {
        return Err(format!("expected n,m, got {s:?}"));
    };
    let n: u32 = n.parse().map_err(|e| format!("order {n:?}: {e}"))?;
    let m: u32 = m.parse().map_err(|e| format!("order {m:?}: {e}"))?;
    AttackOrder::new(n, m).map_err(|e| e.to_string())
}

impl RunConfig {
    pub fn resolve(common: &CommonArgs, source: Option<&SourceArgs>) -> anyhow::Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.protocol.seed = seed;
        }
        if let Some(trials) = common.trials {
            cfg.protocol.trials = trials;
        }
        if let Some(s) = source {
            if let Some(attack) = s.orders {
                cfg.source.mode = SourceMode::Mpa;
                cfg.source.attack = attack;
            }
            if s.singlet {
                cfg.source.mode = SourceMode::Singlet;
            }
            if let Some(mean) = s.poisson {
                cfg.source.count_model = CountModel::Poisson { mean };
            }
            if s.alternating {
                cfg.source.asymmetric_alternating = true;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
