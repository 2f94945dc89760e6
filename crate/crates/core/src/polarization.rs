//! Trigonometric probability kernel shared by the sampler and the oracle.
//!
//! Polarization is axis-like: every probability here is π-periodic in both
//! the pulse polarization and the analyzer angle. Channel 0 is the `|0⟩`
//! port of a polarizing beam splitter, channel 1 the `|1⟩` port, so a single
//! photon polarized along `λ` exits channel 0 of an analyzer rotated by `θ`
//! with probability `cos²(λ+θ)`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest absorption order accepted by default.
pub const DEFAULT_MAX_ORDER: u32 = 8;

/// A polarization or analyzer angle in radians.
///
/// Arithmetic keeps the raw value; [`Angle::normalized`] maps into `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);

    pub const fn from_radians(value: f64) -> Self {
        Angle(value)
    }

    pub const fn radians(self) -> f64 {
        self.0
    }

    /// Maps the angle into the canonical range `[0, 2π)`.
    pub fn normalized(self) -> Self {
        let r = self.0.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        Angle(if r >= TAU { 0.0 } else { r })
    }

    /// Angle reduced modulo π, the period of every polarization probability.
    pub fn axis(self) -> Self {
        let r = self.0.rem_euclid(PI);
        Angle(if r >= PI { 0.0 } else { r })
    }

    /// True if both angles describe the same analyzer axis (equal modulo π).
    pub fn same_axis(self, other: Angle, tol: f64) -> bool {
        let d = (self.0 - other.0).rem_euclid(PI);
        d < tol || PI - d < tol
    }
}

impl Add for Angle {
    type Output = Angle;
    fn add(self, rhs: Angle) -> Angle {
        Angle(self.0 + rhs.0)
    }
}

impl Sub for Angle {
    type Output = Angle;
    fn sub(self, rhs: Angle) -> Angle {
        Angle(self.0 - rhs.0)
    }
}

impl Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle(-self.0)
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Output port of a polarizing beam splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Zero,
    One,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Zero, Channel::One];

    pub const fn index(self) -> usize {
        match self {
            Channel::Zero => 0,
            Channel::One => 1,
        }
    }

    pub const fn from_index(i: usize) -> Self {
        if i == 0 {
            Channel::Zero
        } else {
            Channel::One
        }
    }

    pub const fn flipped(self) -> Self {
        match self {
            Channel::Zero => Channel::One,
            Channel::One => Channel::Zero,
        }
    }
}

/// Output arm of the polarimeter placed behind a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Plus,
    Minus,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Plus, Arm::Minus];

    pub const fn index(self) -> usize {
        match self {
            Arm::Plus => 0,
            Arm::Minus => 1,
        }
    }
}

/// Number of photons that must be absorbed together to make a detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct AbsorptionOrder(u32);

impl AbsorptionOrder {
    pub const ONE: AbsorptionOrder = AbsorptionOrder(1);

    /// Accepts orders in `1..=DEFAULT_MAX_ORDER`.
    pub fn new(order: u32) -> Result<Self> {
        Self::with_max(order, DEFAULT_MAX_ORDER)
    }

    pub fn with_max(order: u32, max: u32) -> Result<Self> {
        if order == 0 || order > max {
            return Err(Error::InvalidOrder { order, max });
        }
        Ok(AbsorptionOrder(order))
    }

    pub const fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for AbsorptionOrder {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        AbsorptionOrder::new(v)
    }
}

impl From<AbsorptionOrder> for u32 {
    fn from(o: AbsorptionOrder) -> u32 {
        o.0
    }
}

impl fmt::Display for AbsorptionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Malus-law probability that one photon polarized along `lambda` exits
/// `channel` of an analyzer at `theta`.
pub fn channel_probability(lambda: Angle, theta: Angle, channel: Channel) -> f64 {
    let x = (lambda + theta).radians();
    match channel {
        Channel::Zero => x.cos().powi(2),
        Channel::One => x.sin().powi(2),
    }
}

/// Probability that an `order`-photon pulse makes either channel click, which
/// requires every photon to leave through the same port.
pub fn click_probability(order: AbsorptionOrder, lambda: Angle, theta: Angle) -> f64 {
    let n = order.get() as i32;
    channel_probability(lambda, theta, Channel::Zero).powi(n)
        + channel_probability(lambda, theta, Channel::One).powi(n)
}

/// Probability that a single photon exits `channel` of the analyzer at `theta`
/// and then `arm` of the polarimeter at `phi` behind it.
pub fn polarimeter_arm_probability(
    lambda: Angle,
    theta: Angle,
    phi: Angle,
    channel: Channel,
    arm: Arm,
) -> f64 {
    let d = (theta - phi).radians();
    let arm_p = match arm {
        Arm::Plus => d.cos().powi(2),
        Arm::Minus => d.sin().powi(2),
    };
    channel_probability(lambda, theta, channel) * arm_p
}
