//! Emission sources: Eve's separable multi-photon pulse pairs and an honest
//! singlet reference.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::AttackOrder;
use crate::polarization::{AbsorptionOrder, Angle, Channel};
use crate::report::fmt_float;
use crate::rng::StreamFactory;

/// Default step of the deterministic polarization sequence: π times the
/// golden-ratio conjugate, so the sequence never repeats and fills the circle
/// evenly.
pub const DEFAULT_LAMBDA_STEP: f64 = PI * 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    #[default]
    Mpa,
    Singlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CountModel {
    /// Exactly `order` photons per pulse.
    #[default]
    Fixed,
    /// Photon number per pulse drawn from Poisson(`mean`) independently per side.
    Poisson { mean: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaModel {
    #[default]
    UniformRandom,
    /// `λ_i = i·step mod 2π`.
    DeterministicSequence {
        #[serde(default = "default_step")]
        step: f64,
    },
}

fn default_step() -> f64 {
    DEFAULT_LAMBDA_STEP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub mode: SourceMode,
    pub attack: AttackOrder,
    pub count_model: CountModel,
    /// Alternate `(1, m)` and `(n, 1)` emissions so one side always samples fairly.
    pub asymmetric_alternating: bool,
    pub lambda_model: LambdaModel,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            mode: SourceMode::Mpa,
            attack: AttackOrder::new(2, 2).unwrap(),
            count_model: CountModel::Fixed,
            asymmetric_alternating: false,
            lambda_model: LambdaModel::UniformRandom,
        }
    }
}

impl SourceConfig {
    pub fn mpa(attack: AttackOrder) -> Self {
        SourceConfig {
            attack,
            ..Default::default()
        }
    }

    pub fn singlet() -> Self {
        SourceConfig {
            mode: SourceMode::Singlet,
            ..Default::default()
        }
    }

    /// Every violated constraint, or `Ok` if none.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let CountModel::Poisson { mean } = self.count_model {
            if !(mean > 0.0 && mean.is_finite()) {
                problems.push(format!(
                    "poisson mean must be positive and finite, got {mean}"
                ));
            }
        }
        if let LambdaModel::DeterministicSequence { step } = self.lambda_model {
            if !step.is_finite() {
                problems.push(format!("lambda step must be finite, got {step}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// Absorption orders carried by emission `index`.
    pub fn orders_for(&self, index: u64) -> (AbsorptionOrder, AbsorptionOrder) {
        let AttackOrder { alice, bob } = self.attack;
        if self.asymmetric_alternating {
            if index.is_multiple_of(2) {
                (AbsorptionOrder::ONE, bob)
            } else {
                (alice, AbsorptionOrder::ONE)
            }
        } else {
            (alice, bob)
        }
    }
}

/// One emission: Alice's pulse is polarized along `lambda`, Bob's along
/// `lambda + π/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsePair {
    pub emission_index: u64,
    pub lambda: Angle,
    pub photons_alice: u32,
    pub photons_bob: u32,
    pub order_alice: AbsorptionOrder,
    pub order_bob: AbsorptionOrder,
}

/// The photons one party receives from a pulse pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSide {
    pub polarization: Angle,
    pub photons: u32,
    pub order: AbsorptionOrder,
}

impl PulsePair {
    pub fn alice(&self) -> PulseSide {
        PulseSide {
            polarization: self.lambda,
            photons: self.photons_alice,
            order: self.order_alice,
        }
    }

    pub fn bob(&self) -> PulseSide {
        PulseSide {
            polarization: self.lambda + Angle::from_radians(FRAC_PI_2),
            photons: self.photons_bob,
            order: self.order_bob,
        }
    }

    pub const CSV_HEADER: [&'static str; 6] = [
        "emission_index",
        "lambda",
        "n_a",
        "n_b",
        "order_a",
        "order_b",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.emission_index.to_string(),
            fmt_float(self.lambda.radians()),
            self.photons_alice.to_string(),
            self.photons_bob.to_string(),
            self.order_alice.to_string(),
            self.order_bob.to_string(),
        ]
    }
}

/// Eve's pulse-pair generator.
#[derive(Debug, Clone)]
pub struct MpaSource {
    config: SourceConfig,
    poisson: Option<Poisson<f64>>,
}

impl MpaSource {
    pub fn new(config: SourceConfig) -> Result<Self> {
        config.validate()?;
        let poisson = match config.count_model {
            CountModel::Fixed => None,
            CountModel::Poisson { mean } => {
                Some(Poisson::new(mean).map_err(|e| Error::InvalidConfig(vec![e.to_string()]))?)
            }
        };
        Ok(MpaSource { config, poisson })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    /// Draws emission `index` from `rng`.
    pub fn next_pair<R: Rng + ?Sized>(&self, index: u64, rng: &mut R) -> PulsePair {
        let lambda = match self.config.lambda_model {
            LambdaModel::UniformRandom => Angle::from_radians(rng.random::<f64>() * TAU),
            LambdaModel::DeterministicSequence { step } => {
                Angle::from_radians(index as f64 * step).normalized()
            }
        };
        let (order_alice, order_bob) = self.config.orders_for(index);
        let (photons_alice, photons_bob) = match &self.poisson {
            None => (order_alice.get(), order_bob.get()),
            Some(p) => (p.sample(rng) as u32, p.sample(rng) as u32),
        };
        PulsePair {
            emission_index: index,
            lambda,
            photons_alice,
            photons_bob,
            order_alice,
            order_bob,
        }
    }

    /// Regenerates the emission sequence of a run seeded with `seed`: emission
    /// `i` is the first thing drawn from trial `i`'s stream.
    pub fn replay(&self, seed: u64) -> ReplayLog<'_> {
        ReplayLog {
            source: self,
            streams: StreamFactory::new(seed),
        }
    }
}

/// Lookup of Eve's recorded emissions by index.
pub trait EmissionLog {
    fn pulse(&self, emission_index: u64) -> Option<PulsePair>;
}

impl EmissionLog for [PulsePair] {
    fn pulse(&self, emission_index: u64) -> Option<PulsePair> {
        self.binary_search_by_key(&emission_index, |p| p.emission_index)
            .ok()
            .map(|i| self[i])
    }
}

impl EmissionLog for Vec<PulsePair> {
    fn pulse(&self, emission_index: u64) -> Option<PulsePair> {
        self.as_slice().pulse(emission_index)
    }
}

/// An emission log reconstructed on demand from the seed instead of stored.
#[derive(Debug, Clone)]
pub struct ReplayLog<'a> {
    source: &'a MpaSource,
    streams: StreamFactory,
}

impl ReplayLog<'_> {
    pub fn iter(&self, count: u64) -> impl Iterator<Item = PulsePair> + '_ {
        (0..count).map(move |i| self.at(i))
    }

    pub fn at(&self, index: u64) -> PulsePair {
        self.source
            .next_pair(index, &mut self.streams.stream(index))
    }
}

impl EmissionLog for ReplayLog<'_> {
    fn pulse(&self, emission_index: u64) -> Option<PulsePair> {
        Some(self.at(emission_index))
    }
}

/// Samples `(k, l)` from the singlet: anticorrelated with probability `cos²Δ`,
/// uniform marginals.
pub fn singlet_joint_outcome<R: Rng + ?Sized>(
    theta_a: Angle,
    theta_b: Angle,
    rng: &mut R,
) -> (Channel, Channel) {
    let delta = (theta_a - theta_b).radians();
    let anti = rng.random::<f64>() < delta.cos().powi(2);
    let k = if rng.random::<bool>() {
        Channel::One
    } else {
        Channel::Zero
    };
    let l = if anti { k.flipped() } else { k };
    (k, l)
}
