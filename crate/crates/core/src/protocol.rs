//! Ekert-91 and BBM92 sessions: random setting choice, detection, sifting and
//! CHSH estimation.
//!
//! A session is a deterministic function of its configuration. Trial `i` uses
//! only the counter-based stream `(seed, i)`, trials are processed in fixed
//! contiguous chunks, and chunk statistics are merged in index order, so the
//! result does not depend on the number of workers.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{detect_with, DetectorModel, Outcome};
use crate::error::{Error, Result};
use crate::oracle::ChshAngles;
use crate::polarization::{Angle, Channel};
use crate::report::fmt_float;
use crate::rng::StreamFactory;
use crate::source::{singlet_joint_outcome, MpaSource, PulsePair, SourceConfig, SourceMode};

/// Seed used when a configuration does not name one.
pub const DEFAULT_SEED: u64 = 20_110_314;

/// Trials per work unit. Fixed so that partitioning never depends on the
/// worker count.
const CHUNK_TRIALS: u64 = 1 << 16;

/// Two angles denote the same analyzer setting if they agree modulo π to
/// this tolerance.
pub const SETTING_TOLERANCE: f64 = 1e-9;

/// Minimum coincidences per setting pair for a CHSH estimate.
pub const CHSH_COUNT_FLOOR: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    Ekert,
    Bbm92,
}

impl Protocol {
    pub fn default_settings(self) -> (Vec<Angle>, Vec<Angle>) {
        let r = Angle::from_radians;
        match self {
            Protocol::Ekert => (
                vec![r(0.0), r(FRAC_PI_4), r(FRAC_PI_8)],
                vec![r(0.0), r(-FRAC_PI_8), r(FRAC_PI_8)],
            ),
            Protocol::Bbm92 => (vec![r(0.0), r(FRAC_PI_4)], vec![r(0.0), r(FRAC_PI_4)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ProtocolConfigFile")]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub settings_alice: Vec<Angle>,
    pub settings_bob: Vec<Angle>,
    pub trials: u64,
    pub seed: u64,
    pub detector: DetectorModel,
}

/// On-disk form: settings fall back to the protocol defaults when omitted.
#[derive(Deserialize)]
#[serde(default)]
struct ProtocolConfigFile {
    protocol: Protocol,
    settings_alice: Option<Vec<Angle>>,
    settings_bob: Option<Vec<Angle>>,
    trials: u64,
    seed: u64,
    detector: DetectorModel,
}

impl Default for ProtocolConfigFile {
    fn default() -> Self {
        ProtocolConfigFile {
            protocol: Protocol::Ekert,
            settings_alice: None,
            settings_bob: None,
            trials: 1_000_000,
            seed: DEFAULT_SEED,
            detector: DetectorModel::default(),
        }
    }
}

impl From<ProtocolConfigFile> for ProtocolConfig {
    fn from(f: ProtocolConfigFile) -> Self {
        let (da, db) = f.protocol.default_settings();
        ProtocolConfig {
            protocol: f.protocol,
            settings_alice: f.settings_alice.unwrap_or(da),
            settings_bob: f.settings_bob.unwrap_or(db),
            trials: f.trials,
            seed: f.seed,
            detector: f.detector,
        }
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfigFile::default().into()
    }
}

impl ProtocolConfig {
    pub fn new(protocol: Protocol, trials: u64, seed: u64) -> Self {
        let (settings_alice, settings_bob) = protocol.default_settings();
        ProtocolConfig {
            protocol,
            settings_alice,
            settings_bob,
            trials,
            seed,
            detector: DetectorModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.trials == 0 {
            problems.push("trials must be at least 1".to_string());
        }
        if self.settings_alice.is_empty() {
            problems.push("settings_alice must not be empty".to_string());
        }
        if self.settings_bob.is_empty() {
            problems.push("settings_bob must not be empty".to_string());
        }
        for (name, list) in [
            ("settings_alice", &self.settings_alice),
            ("settings_bob", &self.settings_bob),
        ] {
            if list.iter().any(|a| !a.radians().is_finite()) {
                problems.push(format!("{name} contains a non-finite angle"));
            }
        }
        if let Err(Error::InvalidConfig(p)) = self.detector.validate() {
            problems.extend(p);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Everything that happened in one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub index: u64,
    pub setting_alice: usize,
    pub setting_bob: usize,
    /// `None` for the singlet reference source.
    pub pulse: Option<PulsePair>,
    pub alice: Outcome,
    pub bob: Outcome,
}

/// Counts for one `(θ_A, θ_B)` setting pair. The five outcome categories
/// partition the trials routed to the pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub theta_a: Angle,
    pub theta_b: Angle,
    pub trials: u64,
    /// `coincidences[k][l]`: Alice clicked in `k`, Bob in `l`.
    pub coincidences: [[u64; 2]; 2],
    pub alice_only: u64,
    pub bob_only: u64,
    pub no_click: u64,
    /// Trials where either side registered a double click.
    pub double_click: u64,
}

impl PairStats {
    fn new(theta_a: Angle, theta_b: Angle) -> Self {
        PairStats {
            theta_a,
            theta_b,
            trials: 0,
            coincidences: [[0; 2]; 2],
            alice_only: 0,
            bob_only: 0,
            no_click: 0,
            double_click: 0,
        }
    }

    pub fn total_coincidences(&self) -> u64 {
        self.coincidences.iter().flatten().sum()
    }

    /// `N00 − N01 − N10 + N11`.
    pub fn signed_coincidences(&self) -> i64 {
        let c = &self.coincidences;
        c[0][0] as i64 - c[0][1] as i64 - c[1][0] as i64 + c[1][1] as i64
    }

    /// Coincidence-normalized correlation, `None` without coincidences.
    pub fn correlation(&self) -> Option<f64> {
        let n = self.total_coincidences();
        (n > 0).then(|| self.signed_coincidences() as f64 / n as f64)
    }

    pub fn delta(&self) -> Angle {
        self.theta_a - self.theta_b
    }

    pub fn is_matched(&self) -> bool {
        self.theta_a.same_axis(self.theta_b, SETTING_TOLERANCE)
    }

    fn merge(&mut self, o: &PairStats) {
        self.trials += o.trials;
        for k in 0..2 {
            for l in 0..2 {
                self.coincidences[k][l] += o.coincidences[k][l];
            }
        }
        self.alice_only += o.alice_only;
        self.bob_only += o.bob_only;
        self.no_click += o.no_click;
        self.double_click += o.double_click;
    }
}

/// Per-side counts for one setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SideCounts {
    pub trials: u64,
    pub singles: [u64; 2],
    pub doubles: u64,
}

impl SideCounts {
    pub fn detected(&self) -> u64 {
        self.singles[0] + self.singles[1] + self.doubles
    }

    fn merge(&mut self, o: &SideCounts) {
        self.trials += o.trials;
        self.singles[0] += o.singles[0];
        self.singles[1] += o.singles[1];
        self.doubles += o.doubles;
    }
}

/// A matched-setting coincidence with single clicks on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub emission_index: u64,
    pub setting_alice: usize,
    pub setting_bob: usize,
    pub alice: Channel,
    pub bob: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub protocol: Protocol,
    pub seed: u64,
    pub trials: u64,
    pub settings_alice: Vec<Angle>,
    pub settings_bob: Vec<Angle>,
    /// Row-major over `(alice setting, bob setting)`.
    pub pairs: Vec<PairStats>,
    pub alice: Vec<SideCounts>,
    pub bob: Vec<SideCounts>,
    /// Key material in emission order. Not serialized; the summary carries
    /// its length and digest.
    #[serde(skip)]
    pub key_events: Vec<KeyEvent>,
}

impl SessionStats {
    fn empty(cfg: &ProtocolConfig) -> Self {
        let mut pairs = Vec::with_capacity(cfg.settings_alice.len() * cfg.settings_bob.len());
        for &a in &cfg.settings_alice {
            for &b in &cfg.settings_bob {
                pairs.push(PairStats::new(a, b));
            }
        }
        SessionStats {
            protocol: cfg.protocol,
            seed: cfg.seed,
            trials: 0,
            settings_alice: cfg.settings_alice.clone(),
            settings_bob: cfg.settings_bob.clone(),
            pairs,
            alice: vec![SideCounts::default(); cfg.settings_alice.len()],
            bob: vec![SideCounts::default(); cfg.settings_bob.len()],
            key_events: Vec::new(),
        }
    }

    pub fn pair(&self, setting_alice: usize, setting_bob: usize) -> &PairStats {
        &self.pairs[setting_alice * self.settings_bob.len() + setting_bob]
    }

    /// Finds the pair measured at `(theta_a, theta_b)` modulo π.
    pub fn find_pair(&self, theta_a: Angle, theta_b: Angle) -> Result<&PairStats> {
        self.pairs
            .iter()
            .find(|p| {
                p.theta_a.same_axis(theta_a, SETTING_TOLERANCE)
                    && p.theta_b.same_axis(theta_b, SETTING_TOLERANCE)
            })
            .ok_or(Error::MissingSettingPair {
                theta_a: theta_a.radians(),
                theta_b: theta_b.radians(),
            })
    }

    pub fn matched_trials(&self) -> u64 {
        self.pairs
            .iter()
            .filter(|p| p.is_matched())
            .map(|p| p.trials)
            .sum()
    }

    pub fn total_double_clicks(&self) -> u64 {
        self.pairs.iter().map(|p| p.double_click).sum()
    }

    fn record(&mut self, t: &TrialRecord) {
        self.trials += 1;
        let nb = self.settings_bob.len();
        let pair = &mut self.pairs[t.setting_alice * nb + t.setting_bob];
        pair.trials += 1;
        match (t.alice, t.bob) {
            (Outcome::DoubleClick, _) | (_, Outcome::DoubleClick) => pair.double_click += 1,
            (Outcome::Click(k), Outcome::Click(l)) => {
                pair.coincidences[k.index()][l.index()] += 1;
                if pair.is_matched() {
                    self.key_events.push(KeyEvent {
                        emission_index: t.index,
                        setting_alice: t.setting_alice,
                        setting_bob: t.setting_bob,
                        alice: k,
                        bob: l,
                    });
                }
            }
            (Outcome::Click(_), Outcome::NoClick) => pair.alice_only += 1,
            (Outcome::NoClick, Outcome::Click(_)) => pair.bob_only += 1,
            (Outcome::NoClick, Outcome::NoClick) => pair.no_click += 1,
        }
        for (side, setting, outcome) in [
            (&mut self.alice, t.setting_alice, t.alice),
            (&mut self.bob, t.setting_bob, t.bob),
        ] {
            let c = &mut side[setting];
            c.trials += 1;
            match outcome {
                Outcome::Click(ch) => c.singles[ch.index()] += 1,
                Outcome::DoubleClick => c.doubles += 1,
                Outcome::NoClick => {}
            }
        }
    }

    /// Appends `later`, whose trials all follow ours.
    fn merge(&mut self, later: SessionStats) {
        self.trials += later.trials;
        for (a, b) in self.pairs.iter_mut().zip(&later.pairs) {
            a.merge(b);
        }
        for (a, b) in self.alice.iter_mut().zip(&later.alice) {
            a.merge(b);
        }
        for (a, b) in self.bob.iter_mut().zip(&later.bob) {
            a.merge(b);
        }
        self.key_events.extend(later.key_events);
    }

    pub const CSV_HEADER: [&'static str; 9] = [
        "thetaA", "thetaB", "N00", "N01", "N10", "N11", "singles", "discards", "doubles",
    ];

    /// One row per setting pair. `singles` counts trials where exactly one
    /// side clicked, `discards` trials where neither did.
    pub fn csv_records(&self) -> Vec<Vec<String>> {
        self.pairs
            .iter()
            .map(|p| {
                let c = &p.coincidences;
                vec![
                    fmt_float(p.theta_a.radians()),
                    fmt_float(p.theta_b.radians()),
                    c[0][0].to_string(),
                    c[0][1].to_string(),
                    c[1][0].to_string(),
                    c[1][1].to_string(),
                    (p.alice_only + p.bob_only).to_string(),
                    p.no_click.to_string(),
                    p.double_click.to_string(),
                ]
            })
            .collect()
    }
}

/// A configured session; trials can be generated individually or in bulk.
#[derive(Debug, Clone)]
pub struct Session {
    config: ProtocolConfig,
    source_config: SourceConfig,
    source: Option<MpaSource>,
    streams: StreamFactory,
}

impl Session {
    pub fn new(config: ProtocolConfig, source_config: SourceConfig) -> Result<Self> {
        let mut problems = Vec::new();
        if let Err(Error::InvalidConfig(p)) = config.validate() {
            problems.extend(p);
        }
        if let Err(Error::InvalidConfig(p)) = source_config.validate() {
            problems.extend(p);
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        let source = match source_config.mode {
            SourceMode::Mpa => Some(MpaSource::new(source_config)?),
            SourceMode::Singlet => None,
        };
        Ok(Session {
            streams: StreamFactory::new(config.seed),
            config,
            source_config,
            source,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn source_config(&self) -> &SourceConfig {
        &self.source_config
    }

    /// Eve's source, `None` for the singlet reference.
    pub fn source(&self) -> Option<&MpaSource> {
        self.source.as_ref()
    }

    /// Trial `index`. The pulse is drawn first from the trial stream, so
    /// [`MpaSource::replay`] with the session seed reproduces it.
    pub fn trial(&self, index: u64) -> TrialRecord {
        let mut rng = self.streams.stream(index);
        let pulse = self.source.as_ref().map(|s| s.next_pair(index, &mut rng));
        let setting_alice = rng.random_range(0..self.config.settings_alice.len());
        let setting_bob = rng.random_range(0..self.config.settings_bob.len());
        let theta_a = self.config.settings_alice[setting_alice];
        let theta_b = self.config.settings_bob[setting_bob];
        let (alice, bob) = match &pulse {
            Some(p) => (
                detect_with(&p.alice(), theta_a, &self.config.detector, &mut rng),
                detect_with(&p.bob(), theta_b, &self.config.detector, &mut rng),
            ),
            None => {
                let (k, l) = singlet_joint_outcome(theta_a, theta_b, &mut rng);
                (Outcome::Click(k), Outcome::Click(l))
            }
        };
        TrialRecord {
            index,
            setting_alice,
            setting_bob,
            pulse,
            alice,
            bob,
        }
    }

    pub fn trials(&self) -> impl Iterator<Item = TrialRecord> + '_ {
        (0..self.config.trials).map(move |i| self.trial(i))
    }

    /// Runs every trial on the current rayon pool.
    pub fn run(&self) -> SessionStats {
        let total = self.config.trials;
        let chunks = total.div_ceil(CHUNK_TRIALS);
        let parts: Vec<SessionStats> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut s = SessionStats::empty(&self.config);
                let end = ((c + 1) * CHUNK_TRIALS).min(total);
                for i in c * CHUNK_TRIALS..end {
                    s.record(&self.trial(i));
                }
                s
            })
            .collect();
        let mut stats = SessionStats::empty(&self.config);
        for p in parts {
            stats.merge(p);
        }
        stats
    }
}

/// Runs a full session on the current rayon pool.
pub fn run_session(config: &ProtocolConfig, source: &SourceConfig) -> Result<SessionStats> {
    Ok(Session::new(config.clone(), *source)?.run())
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(vec![format!("cannot build worker pool: {e}")]))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftedKey {
    pub alice_bits: Vec<u8>,
    pub bob_bits: Vec<u8>,
    pub qber_estimate: f64,
    pub matched_trials: u64,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }

    pub fn errors(&self) -> usize {
        self.alice_bits
            .iter()
            .zip(&self.bob_bits)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// 64-bit FNV-1a over both key strings.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in self.alice_bits.iter().chain(&self.bob_bits) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Builds the raw key from matched-setting coincidences. Alice's bit is her
/// channel; Bob flips his channel since the source is anticorrelated.
pub fn sift(stats: &SessionStats) -> Result<SiftedKey> {
    if stats.key_events.is_empty() {
        return Err(Error::EmptyKey);
    }
    let alice_bits: Vec<u8> = stats
        .key_events
        .iter()
        .map(|e| e.alice.index() as u8)
        .collect();
    let bob_bits: Vec<u8> = stats
        .key_events
        .iter()
        .map(|e| e.bob.flipped().index() as u8)
        .collect();
    let errors = alice_bits
        .iter()
        .zip(&bob_bits)
        .filter(|(a, b)| a != b)
        .count();
    Ok(SiftedKey {
        qber_estimate: errors as f64 / alice_bits.len() as f64,
        alice_bits,
        bob_bits,
        matched_trials: stats.matched_trials(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub theta_a: Angle,
    pub theta_b: Angle,
    pub sign: f64,
    pub correlation: f64,
    pub standard_error: f64,
    /// Events the estimate is normalized by.
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub s: f64,
    pub standard_error: f64,
    pub terms: Vec<CorrelationEstimate>,
}

fn combine_terms(terms: Vec<CorrelationEstimate>) -> ChshResult {
    let values: [f64; 4] = std::array::from_fn(|i| terms[i].correlation);
    let var: f64 = terms.iter().map(|t| t.standard_error.powi(2)).sum();
    ChshResult {
        s: ChshAngles::combine(values),
        standard_error: var.sqrt(),
        terms,
    }
}

/// CHSH value from the canonical setting pairs, each normalized by its own
/// coincidence count.
pub fn estimate_chsh(stats: &SessionStats) -> Result<ChshResult> {
    estimate_chsh_at(stats, &ChshAngles::CANONICAL)
}

pub fn estimate_chsh_at(stats: &SessionStats, angles: &ChshAngles) -> Result<ChshResult> {
    let mut terms = Vec::with_capacity(4);
    for (a, b, sign) in angles.terms() {
        let p = stats.find_pair(a, b)?;
        let n = p.total_coincidences();
        if n < CHSH_COUNT_FLOOR {
            return Err(Error::InsufficientStatistics {
                what: format!("CHSH pair ({}, {})", a, b),
                have: n,
                need: CHSH_COUNT_FLOOR,
            });
        }
        let e = p.signed_coincidences() as f64 / n as f64;
        terms.push(CorrelationEstimate {
            theta_a: a,
            theta_b: b,
            sign,
            correlation: e,
            standard_error: ((1.0 - e * e) / n as f64).sqrt(),
            events: n,
        });
    }
    Ok(combine_terms(terms))
}

/// CHSH value when every non-detection (and double click) is replaced by a
/// fair random bit. Random outcomes have zero expected product, so each
/// correlation becomes the signed coincidence count over all trials of the
/// pair.
pub fn random_bit_padding_chsh(stats: &SessionStats) -> Result<ChshResult> {
    let mut terms = Vec::with_capacity(4);
    for (a, b, sign) in ChshAngles::CANONICAL.terms() {
        let p = stats.find_pair(a, b)?;
        if p.trials == 0 {
            return Err(Error::InsufficientStatistics {
                what: format!("padded CHSH pair ({}, {})", a, b),
                have: 0,
                need: 1,
            });
        }
        let e = p.signed_coincidences() as f64 / p.trials as f64;
        terms.push(CorrelationEstimate {
            theta_a: a,
            theta_b: b,
            sign,
            correlation: e,
            standard_error: ((1.0 - e * e) / p.trials as f64).sqrt(),
            events: p.trials,
        });
    }
    Ok(combine_terms(terms))
}

/// JSON session summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub protocol: ProtocolConfig,
    pub source: SourceConfig,
    pub stats: SessionStats,
    pub chsh: Option<ChshResult>,
    pub padded_chsh: Option<ChshResult>,
    pub qber: Option<f64>,
    pub key_length: usize,
    pub key_digest: String,
}

impl SessionSummary {
    pub fn new(protocol: &ProtocolConfig, source: &SourceConfig, stats: &SessionStats) -> Self {
        let key = sift(stats).ok();
        SessionSummary {
            protocol: protocol.clone(),
            source: *source,
            stats: stats.clone(),
            chsh: estimate_chsh(stats).ok(),
            padded_chsh: random_bit_padding_chsh(stats).ok(),
            qber: key.as_ref().map(|k| k.qber_estimate),
            key_length: key.as_ref().map_or(0, SiftedKey::len),
            key_digest: format!("{:016x}", key.as_ref().map_or(0, SiftedKey::digest)),
        }
    }
}
