//! Passive monitors, the fair-sampling test, and the faked-state demonstration.
//!
//! Monitors never abort a session. They attach a [`MonitorVerdict`] and leave
//! the policy to the operator.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{
    blinded_detect, polarimeter_detect, FakedPulse, PolarimeterAngles, PolarimeterOutcome,
};
use crate::error::{Error, Result};
use crate::polarization::{AbsorptionOrder, Angle, Arm, Channel};
use crate::protocol::{sift, ProtocolConfig, SessionStats};
use crate::report::fmt_float;
use crate::rng::StreamFactory;
use crate::source::{MpaSource, PulseSide, SourceConfig, SourceMode};

/// QBER below which key is secure against coherent attacks.
pub const QBER_SECURITY_BOUND: f64 = 0.11;
/// QBER below which device-independent QKD is possible.
pub const QBER_DIQKD_BOUND: f64 = 0.071;
/// Detection efficiency needed to close the detection loophole.
pub const LOOPHOLE_EFFICIENCY: f64 = 0.83;
/// Singles imbalance tolerated by the marginal monitor, in standard deviations.
pub const MARGINAL_Z_LIMIT: f64 = 4.0;
/// Significance of the cos4 modulation that flags unfair sampling.
pub const UNFAIR_Z_THRESHOLD: f64 = 5.0;
/// Offset bins of the fair-sampling test over `[0, π/2)`.
pub const FS_BINS: usize = 16;
/// Pulses required in every populated bin before a verdict is given.
pub const FS_MIN_PULSES_PER_BIN: u64 = 10_000;

const FS_CHUNK: u64 = 1 << 16;

/// Value with a one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

/// Weighted least-squares fit of `y = A + B·cos4x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineFit {
    pub constant: Estimate,
    pub amplitude: Estimate,
    pub covariance: f64,
    /// `B/A` with delta-method uncertainty.
    pub ratio: Estimate,
    /// `|B|/σ_B`.
    pub amplitude_z: f64,
    pub points: usize,
}

/// Fits `(x, y, variance)` points. Returns `None` unless at least two distinct
/// `cos4x` values carry weight.
pub fn fit_cos4(points: &[(f64, f64, f64)]) -> Option<CosineFit> {
    let (mut s00, mut s01, mut s11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, var) in points {
        let w = 1.0 / var;
        let c = (4.0 * x).cos();
        s00 += w;
        s01 += w * c;
        s11 += w * c * c;
        b0 += w * y;
        b1 += w * c * y;
    }
    let det = s00 * s11 - s01 * s01;
    if det.is_nan() || det <= 1e-12 * s00 * s11 {
        return None;
    }
    let a = (s11 * b0 - s01 * b1) / det;
    let b = (s00 * b1 - s01 * b0) / det;
    let var_a = s11 / det;
    let var_b = s00 / det;
    let cov = -s01 / det;
    let ratio = b / a;
    let var_ratio = var_b / (a * a) + b * b * var_a / a.powi(4) - 2.0 * b * cov / a.powi(3);
    Some(CosineFit {
        constant: Estimate {
            value: a,
            sigma: var_a.sqrt(),
        },
        amplitude: Estimate {
            value: b,
            sigma: var_b.sqrt(),
        },
        covariance: cov,
        ratio: Estimate {
            value: ratio,
            sigma: var_ratio.max(0.0).sqrt(),
        },
        amplitude_z: b.abs() / var_b.sqrt(),
        points: points.len(),
    })
}

/// Binomial variance of a rate, floored so empty or saturated bins keep a
/// finite weight.
fn rate_variance(rate: f64, n: u64) -> f64 {
    let n = n as f64;
    (rate * (1.0 - rate)).max(1.0 / n) / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingVerdict {
    ConsistentWithFairSampling,
    UnfairSamplingDetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Alice,
    Bob,
}

/// Singles imbalance for one side and setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalZ {
    pub side: Side,
    pub theta: Angle,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub qber_security_bound: f64,
    pub qber_diqkd_bound: f64,
    pub loophole_efficiency: f64,
    pub marginal_z_limit: f64,
    pub unfair_z_threshold: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            qber_security_bound: QBER_SECURITY_BOUND,
            qber_diqkd_bound: QBER_DIQKD_BOUND,
            loophole_efficiency: LOOPHOLE_EFFICIENCY,
            marginal_z_limit: MARGINAL_Z_LIMIT,
            unfair_z_threshold: UNFAIR_Z_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub marginal_balance_pass: bool,
    pub marginal_z_scores: Vec<MarginalZ>,
    pub double_count_rate: f64,
    /// `B/A` of the cos4Δ fit to the per-pair coincidence rate.
    pub sum_visibility: Option<Estimate>,
    pub sum_visibility_z: Option<f64>,
    pub fs_modulation: Option<Estimate>,
    pub fs_modulation_z: Option<f64>,
    pub verdict: SamplingVerdict,
    pub qber: Option<f64>,
    pub qber_below_security_bound: Option<bool>,
    pub qber_below_diqkd_bound: Option<bool>,
    pub detection_efficiency_alice: f64,
    pub detection_efficiency_bob: f64,
    /// Both sides detect often enough that the loophole is closed.
    pub efficiency_closes_loophole: bool,
    pub thresholds: Thresholds,
}

impl MonitorVerdict {
    /// Attaches the fair-sampling result; the verdict follows it.
    pub fn with_fs(mut self, fs: &FsVerdict) -> Self {
        self.fs_modulation = Some(fs.fit.amplitude);
        self.fs_modulation_z = Some(fs.fit.amplitude_z);
        self.verdict = fs.verdict;
        self
    }
}

/// Passive monitors over a finished session.
pub fn analyze_monitors(stats: &SessionStats) -> MonitorVerdict {
    let mut zs = Vec::new();
    for (side, settings, counts) in [
        (Side::Alice, &stats.settings_alice, &stats.alice),
        (Side::Bob, &stats.settings_bob, &stats.bob),
    ] {
        for (theta, c) in settings.iter().zip(counts) {
            let n = c.singles[0] + c.singles[1];
            if n > 0 {
                let z = (c.singles[0] as f64 - c.singles[1] as f64) / (n as f64).sqrt();
                zs.push(MarginalZ {
                    side,
                    theta: *theta,
                    z,
                });
            }
        }
    }
    let marginal_balance_pass = zs.iter().all(|m| m.z.abs() < MARGINAL_Z_LIMIT);

    let points: Vec<(f64, f64, f64)> = stats
        .pairs
        .iter()
        .filter(|p| p.trials > 0)
        .map(|p| {
            let y = p.total_coincidences() as f64 / p.trials as f64;
            (p.delta().radians(), y, rate_variance(y, p.trials))
        })
        .collect();
    let fit = fit_cos4(&points);

    let efficiency = |side: &[crate::protocol::SideCounts]| {
        let trials: u64 = side.iter().map(|c| c.trials).sum();
        let det: u64 = side.iter().map(|c| c.detected()).sum();
        if trials == 0 {
            0.0
        } else {
            det as f64 / trials as f64
        }
    };
    let eff_a = efficiency(&stats.alice);
    let eff_b = efficiency(&stats.bob);
    let qber = sift(stats).ok().map(|k| k.qber_estimate);

    MonitorVerdict {
        marginal_balance_pass,
        marginal_z_scores: zs,
        double_count_rate: if stats.trials == 0 {
            0.0
        } else {
            stats.total_double_clicks() as f64 / stats.trials as f64
        },
        sum_visibility: fit.map(|f| f.ratio),
        sum_visibility_z: fit.map(|f| f.amplitude_z),
        fs_modulation: None,
        fs_modulation_z: None,
        verdict: SamplingVerdict::ConsistentWithFairSampling,
        qber,
        qber_below_security_bound: qber.map(|q| q < QBER_SECURITY_BOUND),
        qber_below_diqkd_bound: qber.map(|q| q < QBER_DIQKD_BOUND),
        detection_efficiency_alice: eff_a,
        detection_efficiency_bob: eff_b,
        efficiency_closes_loophole: eff_a >= LOOPHOLE_EFFICIENCY && eff_b >= LOOPHOLE_EFFICIENCY,
        thresholds: Thresholds::default(),
    }
}

/// One `θ−φ` bin of the fair-sampling test. Index 0/1 refers to the
/// polarimeter behind channel 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsBin {
    pub center: f64,
    pub pulses: [u64; 2],
    pub clicks: [u64; 2],
    /// `detector_clicks[polarimeter][arm]`.
    pub detector_clicks: [[u64; 2]; 2],
    /// Pulses with more than one detector firing, binned by polarimeter 0.
    pub multiclicks: u64,
    offset_sum: [f64; 2],
}

impl FsBin {
    fn new(k: usize) -> Self {
        let width = FRAC_PI_2 / FS_BINS as f64;
        FsBin {
            center: (k as f64 + 0.5) * width,
            pulses: [0; 2],
            clicks: [0; 2],
            detector_clicks: [[0; 2]; 2],
            multiclicks: 0,
            offset_sum: [0.0; 2],
        }
    }

    /// Mean observed `θ−φ` (folded into `[0, π/2)`) for a polarimeter.
    pub fn mean_offset(&self, polarimeter: usize) -> Option<f64> {
        (self.pulses[polarimeter] > 0)
            .then(|| self.offset_sum[polarimeter] / self.pulses[polarimeter] as f64)
    }

    pub fn click_rate(&self, polarimeter: usize) -> Option<f64> {
        (self.pulses[polarimeter] > 0)
            .then(|| self.clicks[polarimeter] as f64 / self.pulses[polarimeter] as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsTestStats {
    pub phis: PolarimeterAngles,
    pub pulses: u64,
    /// Pulses that fired at least one detector.
    pub detected_pulses: u64,
    pub bins: Vec<FsBin>,
}

impl FsTestStats {
    fn empty(phis: PolarimeterAngles) -> Self {
        FsTestStats {
            phis,
            pulses: 0,
            detected_pulses: 0,
            bins: (0..FS_BINS).map(FsBin::new).collect(),
        }
    }

    fn merge(&mut self, o: &FsTestStats) {
        self.pulses += o.pulses;
        self.detected_pulses += o.detected_pulses;
        for (a, b) in self.bins.iter_mut().zip(&o.bins) {
            for p in 0..2 {
                a.pulses[p] += b.pulses[p];
                a.clicks[p] += b.clicks[p];
                a.offset_sum[p] += b.offset_sum[p];
                for arm in 0..2 {
                    a.detector_clicks[p][arm] += b.detector_clicks[p][arm];
                }
            }
            a.multiclicks += b.multiclicks;
        }
    }

    fn record(&mut self, theta: Angle, outcome: PolarimeterOutcome) {
        self.pulses += 1;
        let set = outcome.detectors();
        if !set.is_empty() {
            self.detected_pulses += 1;
        }
        for ch in Channel::BOTH {
            let p = ch.index();
            let offset = (theta - self.phis[p]).radians().rem_euclid(FRAC_PI_2);
            let k = ((offset / (FRAC_PI_2 / FS_BINS as f64)) as usize).min(FS_BINS - 1);
            let bin = &mut self.bins[k];
            bin.pulses[p] += 1;
            bin.offset_sum[p] += offset;
            if set.polarimeter_clicked(ch) {
                bin.clicks[p] += 1;
            }
            for arm in Arm::BOTH {
                if set.contains(crate::detection::Detector { channel: ch, arm }) {
                    bin.detector_clicks[p][arm.index()] += 1;
                }
            }
            if p == 0 && set.len() > 1 {
                bin.multiclicks += 1;
            }
        }
    }

    pub const CSV_HEADER: [&'static str; 5] = [
        "bin_center",
        "pulses",
        "clicks_pol0",
        "clicks_pol1",
        "multiclicks",
    ];

    pub fn csv_records(&self) -> Vec<Vec<String>> {
        self.bins
            .iter()
            .map(|b| {
                vec![
                    fmt_float(b.center),
                    b.pulses[0].to_string(),
                    b.clicks[0].to_string(),
                    b.clicks[1].to_string(),
                    b.multiclicks.to_string(),
                ]
            })
            .collect()
    }
}

/// Alice's side of the fair-sampling test: polarimeters fixed at `phis`,
/// analyzer switched at random over `config.settings_alice`.
pub fn run_fs_test(
    config: &ProtocolConfig,
    source: &SourceConfig,
    phis: PolarimeterAngles,
) -> Result<FsTestStats> {
    config.validate()?;
    let mpa = match source.mode {
        SourceMode::Mpa => Some(MpaSource::new(*source)?),
        SourceMode::Singlet => None,
    };
    let streams = StreamFactory::new(config.seed);
    let total = config.trials;
    let trial = |i: u64, stats: &mut FsTestStats| {
        let mut rng = streams.stream(i);
        // a singlet photon on one side is maximally mixed: uniform polarization
        let side = match &mpa {
            Some(s) => s.next_pair(i, &mut rng).alice(),
            None => PulseSide {
                polarization: Angle::from_radians(rng.random::<f64>() * TAU),
                photons: 1,
                order: AbsorptionOrder::ONE,
            },
        };
        let theta = config.settings_alice[rng.random_range(0..config.settings_alice.len())];
        let outcome = polarimeter_detect(&side, theta, phis, &mut rng);
        stats.record(theta, outcome);
    };
    let parts: Vec<FsTestStats> = (0..total.div_ceil(FS_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s = FsTestStats::empty(phis);
            for i in c * FS_CHUNK..((c + 1) * FS_CHUNK).min(total) {
                trial(i, &mut s);
            }
            s
        })
        .collect();
    let mut stats = FsTestStats::empty(phis);
    for p in &parts {
        stats.merge(p);
    }
    Ok(stats)
}

/// Analyzer settings at the centers of the 16 offset bins, for `φ = 0`.
pub fn fs_bin_center_settings() -> Vec<Angle> {
    (0..FS_BINS)
        .map(|k| Angle::from_radians(FsBin::new(k).center))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsVerdict {
    pub fit: CosineFit,
    pub verdict: SamplingVerdict,
}

/// Fits `A + B·cos4(θ−φ)` to the per-polarimeter click rates and flags unfair
/// sampling when `|B|/σ_B` exceeds [`UNFAIR_Z_THRESHOLD`].
pub fn fs_verdict(fs: &FsTestStats) -> Result<FsVerdict> {
    let mut points = Vec::new();
    for b in &fs.bins {
        for p in 0..2 {
            let n = b.pulses[p];
            if n == 0 {
                continue;
            }
            if n < FS_MIN_PULSES_PER_BIN {
                return Err(Error::InsufficientStatistics {
                    what: format!("fair-sampling bin at {:.4} rad", b.center),
                    have: n,
                    need: FS_MIN_PULSES_PER_BIN,
                });
            }
            let y = b.click_rate(p).unwrap();
            points.push((b.mean_offset(p).unwrap(), y, rate_variance(y, n)));
        }
    }
    let fit = fit_cos4(&points).ok_or_else(|| Error::InsufficientStatistics {
        what: "distinct analyzer/polarimeter offsets".to_string(),
        have: points.len() as u64,
        need: 2,
    })?;
    let verdict = if fit.amplitude_z > UNFAIR_Z_THRESHOLD {
        SamplingVerdict::UnfairSamplingDetected
    } else {
        SamplingVerdict::ConsistentWithFairSampling
    };
    Ok(FsVerdict { fit, verdict })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisRelation {
    /// Eve measured in the receiver's basis.
    Matched,
    /// Eve's basis is diagonal to the receiver's.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FakedStateCell {
    pub basis: BasisRelation,
    /// `|φ − θ|` of both polarimeters.
    pub polarimeter_offset: f64,
    pub eve_bit: Channel,
    pub outcome: PolarimeterOutcome,
    pub clicks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FakedStateDemo {
    pub intensity: f64,
    pub threshold: f64,
    pub cells: Vec<FakedStateCell>,
    /// Offsets where a matched-basis faked state produced no click at all.
    pub missing_clicks_at: Vec<f64>,
    /// Offsets where some faked state fired more than one detector.
    pub double_clicks_at: Vec<f64>,
    /// True if the polarimeters expose the attack.
    pub exposed: bool,
}

impl FakedStateDemo {
    pub fn cell(
        &self,
        basis: BasisRelation,
        offset: f64,
        eve_bit: Channel,
    ) -> Option<&FakedStateCell> {
        self.cells.iter().find(|c| {
            c.basis == basis
                && (c.polarimeter_offset - offset).abs() < 1e-12
                && c.eve_bit == eve_bit
        })
    }
}

/// Sends the blinding pulses a faked-state attacker would use into a receiver
/// whose detectors have been replaced by polarimeters, sweeping `|φ−θ|` over
/// `{0, π/4}`. The receiver's analyzer sits at `θ = 0`.
pub fn faked_state_fs_demo(intensity: f64, threshold: f64) -> Result<FakedStateDemo> {
    let theta = Angle::ZERO;
    let mut cells = Vec::new();
    for basis in [BasisRelation::Matched, BasisRelation::Diagonal] {
        let eve_theta = match basis {
            BasisRelation::Matched => theta,
            BasisRelation::Diagonal => theta + Angle::from_radians(FRAC_PI_4),
        };
        for offset in [0.0, FRAC_PI_4] {
            let phi = theta - Angle::from_radians(offset);
            for eve_bit in Channel::BOTH {
                // polarization that leaves Eve's own analyzer entirely through `eve_bit`
                let pol = -eve_theta + Angle::from_radians(eve_bit.index() as f64 * FRAC_PI_2);
                let pulse = FakedPulse::new(pol, intensity)?;
                let outcome = blinded_detect(&pulse, theta, [phi, phi], threshold)?;
                cells.push(FakedStateCell {
                    basis,
                    polarimeter_offset: offset,
                    eve_bit,
                    outcome,
                    clicks: outcome.detectors().len(),
                });
            }
        }
    }
    let mut missing = Vec::new();
    let mut doubles = Vec::new();
    for c in &cells {
        if c.basis == BasisRelation::Matched
            && c.clicks == 0
            && !missing.contains(&c.polarimeter_offset)
        {
            missing.push(c.polarimeter_offset);
        }
        if c.clicks > 1 && !doubles.contains(&c.polarimeter_offset) {
            doubles.push(c.polarimeter_offset);
        }
    }
    missing.sort_by(f64::total_cmp);
    doubles.sort_by(f64::total_cmp);
    Ok(FakedStateDemo {
        intensity,
        threshold,
        exposed: !missing.is_empty() || !doubles.is_empty(),
        missing_clicks_at: missing,
        double_clicks_at: doubles,
        cells,
    })
}
