//! Eve's reconstruction of the sifted key from her polarization log.
//!
//! Knowing `λ` and the (public) matched setting `θ`, Eve bets that each side
//! ends up in its likelier channel. She is wrong about a key bit only when
//! both sides clicked opposite to her bet.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{channel_probability, Angle, Channel};
use crate::protocol::SessionStats;
use crate::source::{EmissionLog, PulsePair};

/// Eve's bet on the raw channel outcomes of one matched-setting emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveGuess {
    pub emission_index: u64,
    pub alice_bit: Channel,
    pub bob_bit: Channel,
    /// Single-photon probability of the likelier channel, in `[0.5, 1]`.
    pub confidence: f64,
}

/// Eve's guess for a pulse `lambda` measured at matched setting `theta`.
/// Ties go to Alice = 0, Bob = 1.
pub fn guess_bits(lambda: Angle, theta: Angle) -> EveGuess {
    let c = channel_probability(lambda, theta, Channel::Zero);
    let s = channel_probability(lambda, theta, Channel::One);
    let alice_bit = if c >= s { Channel::Zero } else { Channel::One };
    EveGuess {
        emission_index: 0,
        alice_bit,
        bob_bit: alice_bit.flipped(),
        confidence: c.max(s),
    }
}

/// [`guess_bits`] tagged with the emission it refers to.
pub fn guess_for(pulse: &PulsePair, theta: Angle) -> EveGuess {
    EveGuess {
        emission_index: pulse.emission_index,
        ..guess_bits(pulse.lambda, theta)
    }
}

const CONFIDENCE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EveReport {
    /// Wrong guesses over all matched-setting emissions.
    pub per_emitted: f64,
    pub per_emitted_stderr: f64,
    /// Wrong guesses over sifted key bits.
    pub per_sifted: f64,
    pub per_sifted_stderr: f64,
    pub fraction_known: f64,
    pub wrong_guesses: u64,
    pub matched_emissions: u64,
    pub key_length: u64,
    /// Counts of Eve's confidence over key bits, 10 equal bins on `[0.5, 1]`.
    pub confidence_histogram: Vec<u64>,
}

#[derive(Default)]
struct Tally {
    wrong: u64,
    hist: [u64; CONFIDENCE_BINS],
}

/// Scores Eve's guesses against the key bits recorded in `stats`.
pub fn eve_error_rates<L: EmissionLog + Sync + ?Sized>(
    stats: &SessionStats,
    log: &L,
) -> Result<EveReport> {
    let tally = stats
        .key_events
        .par_iter()
        .map(|e| -> Result<Tally> {
            let pulse = log
                .pulse(e.emission_index)
                .ok_or(Error::MissingEmission(e.emission_index))?;
            let theta = stats.settings_alice[e.setting_alice];
            let g = guess_for(&pulse, theta);
            let mut t = Tally::default();
            if e.alice != g.alice_bit && e.bob != g.bob_bit {
                t.wrong = 1;
            }
            let bin = (((g.confidence - 0.5) * 2.0 * CONFIDENCE_BINS as f64) as usize)
                .min(CONFIDENCE_BINS - 1);
            t.hist[bin] = 1;
            Ok(t)
        })
        .try_reduce(Tally::default, |mut a, b| {
            a.wrong += b.wrong;
            for (x, y) in a.hist.iter_mut().zip(b.hist) {
                *x += y;
            }
            Ok(a)
        })?;

    let matched = stats.matched_trials();
    let key_len = stats.key_events.len() as u64;
    let rate = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let stderr = |p: f64, den: u64| {
        if den == 0 {
            0.0
        } else {
            (p * (1.0 - p) / den as f64).sqrt()
        }
    };
    let per_emitted = rate(tally.wrong, matched);
    let per_sifted = rate(tally.wrong, key_len);
    Ok(EveReport {
        per_emitted,
        per_emitted_stderr: stderr(per_emitted, matched),
        per_sifted,
        per_sifted_stderr: stderr(per_sifted, key_len),
        fraction_known: 1.0 - per_sifted,
        wrong_guesses: tally.wrong,
        matched_emissions: matched,
        key_length: key_len,
        confidence_histogram: tally.hist.to_vec(),
    })
}
