//! Beam-splitter routing and the multiple-photon absorption click rule.
//!
//! Photons within a pulse route independently. A detector clicks once when at
//! least `order` photons of the pulse reach it; a pulse split below that
//! threshold in every detector leaves no trace.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{
    channel_probability, polarimeter_arm_probability, AbsorptionOrder, Angle, Arm, Channel,
};
use crate::source::PulseSide;

/// Result of one pulse on a two-detector analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    NoClick,
    Click(Channel),
    DoubleClick,
}

impl Outcome {
    pub fn channel(self) -> Option<Channel> {
        match self {
            Outcome::Click(ch) => Some(ch),
            _ => None,
        }
    }
}

/// Optional sub-unit quantum efficiency applied after the absorption rule.
/// Acceptance numbers always use the default of 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel { efficiency: 1.0 }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.efficiency) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(vec![format!(
                "detector efficiency must lie in [0, 1], got {}",
                self.efficiency
            )]))
        }
    }

    fn fires<R: Rng + ?Sized>(&self, satisfied: bool, rng: &mut R) -> bool {
        satisfied && (self.efficiency >= 1.0 || rng.random::<f64>() < self.efficiency)
    }
}

/// Splits `count` photons over the two ports of the analyzer at `theta`.
pub fn route_photons<R: Rng + ?Sized>(
    count: u32,
    lambda: Angle,
    theta: Angle,
    rng: &mut R,
) -> (u32, u32) {
    if count == 0 {
        return (0, 0);
    }
    let p0 = channel_probability(lambda, theta, Channel::Zero).clamp(0.0, 1.0);
    let c0 = Binomial::new(count as u64, p0)
        .expect("probability clamped to [0, 1]")
        .sample(rng) as u32;
    (c0, count - c0)
}

/// Applies the click rule to per-channel photon counts.
pub fn absorb(count0: u32, count1: u32, order: AbsorptionOrder) -> Outcome {
    let n = order.get();
    match (count0 >= n, count1 >= n) {
        (true, true) => Outcome::DoubleClick,
        (true, false) => Outcome::Click(Channel::Zero),
        (false, true) => Outcome::Click(Channel::One),
        (false, false) => Outcome::NoClick,
    }
}

/// Routes a pulse through the analyzer at `theta` and applies the click rule.
pub fn detect<R: Rng + ?Sized>(side: &PulseSide, theta: Angle, rng: &mut R) -> Outcome {
    detect_with(side, theta, &DetectorModel::default(), rng)
}

pub fn detect_with<R: Rng + ?Sized>(
    side: &PulseSide,
    theta: Angle,
    model: &DetectorModel,
    rng: &mut R,
) -> Outcome {
    let (c0, c1) = route_photons(side.photons, side.polarization, theta, rng);
    match absorb(c0, c1, side.order) {
        Outcome::NoClick => Outcome::NoClick,
        _ if model.efficiency >= 1.0 => absorb(c0, c1, side.order),
        _ => {
            let n = side.order.get();
            let f0 = model.fires(c0 >= n, rng);
            let f1 = model.fires(c1 >= n, rng);
            match (f0, f1) {
                (true, true) => Outcome::DoubleClick,
                (true, false) => Outcome::Click(Channel::Zero),
                (false, true) => Outcome::Click(Channel::One),
                (false, false) => Outcome::NoClick,
            }
        }
    }
}

/// One of the four detectors behind the two polarimeters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Detector {
    pub channel: Channel,
    pub arm: Arm,
}

impl Detector {
    pub const ALL: [Detector; 4] = [
        Detector {
            channel: Channel::Zero,
            arm: Arm::Plus,
        },
        Detector {
            channel: Channel::Zero,
            arm: Arm::Minus,
        },
        Detector {
            channel: Channel::One,
            arm: Arm::Plus,
        },
        Detector {
            channel: Channel::One,
            arm: Arm::Minus,
        },
    ];

    pub const fn index(self) -> usize {
        self.channel.index() * 2 + self.arm.index()
    }
}

/// Set of polarimeter detectors that clicked on one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DetectorSet(u8);

impl DetectorSet {
    pub fn insert(&mut self, d: Detector) {
        self.0 |= 1 << d.index();
    }

    pub fn contains(self, d: Detector) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Detector> {
        Detector::ALL.into_iter().filter(move |d| self.contains(*d))
    }

    /// True if either detector of the polarimeter behind `channel` clicked.
    pub fn polarimeter_clicked(self, channel: Channel) -> bool {
        Arm::BOTH
            .into_iter()
            .any(|arm| self.contains(Detector { channel, arm }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolarimeterOutcome {
    NoClick,
    Click(Detector),
    MultiClick(DetectorSet),
}

impl PolarimeterOutcome {
    pub fn from_set(set: DetectorSet) -> Self {
        match set.len() {
            0 => PolarimeterOutcome::NoClick,
            1 => PolarimeterOutcome::Click(set.iter().next().unwrap()),
            _ => PolarimeterOutcome::MultiClick(set),
        }
    }

    pub fn detectors(self) -> DetectorSet {
        match self {
            PolarimeterOutcome::NoClick => DetectorSet::default(),
            PolarimeterOutcome::Click(d) => {
                let mut s = DetectorSet::default();
                s.insert(d);
                s
            }
            PolarimeterOutcome::MultiClick(s) => s,
        }
    }
}

/// Polarimeter orientations behind channel 0 and channel 1.
pub type PolarimeterAngles = [Angle; 2];

/// Routes each photon through the analyzer and then the polarimeter of its
/// channel. Returns photon counts per detector in [`Detector::index`] order.
pub fn route_polarimeter<R: Rng + ?Sized>(
    side: &PulseSide,
    theta: Angle,
    phis: PolarimeterAngles,
    rng: &mut R,
) -> [u32; 4] {
    let probs = Detector::ALL.map(|d| {
        polarimeter_arm_probability(
            side.polarization,
            theta,
            phis[d.channel.index()],
            d.channel,
            d.arm,
        )
    });
    let mut bins = [0u32; 4];
    for _ in 0..side.photons {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut slot = 3;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                slot = i;
                break;
            }
        }
        bins[slot] += 1;
    }
    bins
}

pub fn absorb_polarimeter(bins: [u32; 4], order: AbsorptionOrder) -> PolarimeterOutcome {
    let mut set = DetectorSet::default();
    for d in Detector::ALL {
        if bins[d.index()] >= order.get() {
            set.insert(d);
        }
    }
    PolarimeterOutcome::from_set(set)
}

/// Fair-sampling-test detection: every detector is replaced by a polarimeter.
pub fn polarimeter_detect<R: Rng + ?Sized>(
    side: &PulseSide,
    theta: Angle,
    phis: PolarimeterAngles,
    rng: &mut R,
) -> PolarimeterOutcome {
    absorb_polarimeter(route_polarimeter(side, theta, phis, rng), side.order)
}

/// Bright classical pulse used by a detector-blinding attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FakedPulse {
    pub polarization: Angle,
    intensity: f64,
}

impl FakedPulse {
    pub fn new(polarization: Angle, intensity: f64) -> Result<Self> {
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(Error::InvalidConfig(vec![format!(
                "faked pulse intensity must be finite and non-negative, got {intensity}"
            )]));
        }
        Ok(FakedPulse {
            polarization,
            intensity,
        })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }
}

/// Blinded detectors respond classically: intensity splits deterministically
/// by Malus' law and a detector clicks iff it receives at least `threshold`.
pub fn blinded_detect(
    pulse: &FakedPulse,
    theta: Angle,
    phis: PolarimeterAngles,
    threshold: f64,
) -> Result<PolarimeterOutcome> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidConfig(vec![format!(
            "blinding threshold must be positive, got {threshold}"
        )]));
    }
    // absorbs last-bit rounding in cos² at the split points
    const SLACK: f64 = 1e-12;
    let mut set = DetectorSet::default();
    for d in Detector::ALL {
        let received = pulse.intensity
            * polarimeter_arm_probability(
                pulse.polarization,
                theta,
                phis[d.channel.index()],
                d.channel,
                d.arm,
            );
        if received + SLACK >= threshold {
            set.insert(d);
        }
    }
    Ok(PolarimeterOutcome::from_set(set))
}
