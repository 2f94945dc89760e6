//! Closed-form statistics of the attack, evaluated by quadrature.
//!
//! These are the ground truth the Monte Carlo engine is checked against.
//! Nothing here samples; every value is a deterministic integral over Eve's
//! uniformly distributed polarization `λ`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8};

use serde::{Deserialize, Serialize};

use crate::polarization::{
    channel_probability, click_probability, AbsorptionOrder, Angle, Channel,
};
use crate::quadrature::{integrate, periodic_mean};

/// Absorption orders Eve drives on Alice's and Bob's detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttackOrder {
    pub alice: AbsorptionOrder,
    pub bob: AbsorptionOrder,
}

impl AttackOrder {
    pub fn new(alice: u32, bob: u32) -> crate::Result<Self> {
        Ok(AttackOrder {
            alice: AbsorptionOrder::new(alice)?,
            bob: AbsorptionOrder::new(bob)?,
        })
    }

    /// The four attacks tabulated in the reference performance table.
    pub fn table_rows() -> [AttackOrder; 4] {
        [(1, 1), (2, 2), (2, 3), (3, 3)].map(|(n, m)| AttackOrder::new(n, m).unwrap())
    }
}

/// Two analyzer settings per side for the CHSH combination
/// `|E(a,b) + E(a',b) + E(a,b') − E(a',b')|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshAngles {
    pub alice: [Angle; 2],
    pub bob: [Angle; 2],
}

impl ChshAngles {
    /// `θ_A ∈ {0, π/4}`, `θ_B ∈ {π/8, −π/8}`, ordered so the `−E(a',b')` term
    /// is the pair at `Δ = 3π/8`.
    pub const CANONICAL: ChshAngles = ChshAngles {
        alice: [Angle::from_radians(0.0), Angle::from_radians(FRAC_PI_4)],
        bob: [
            Angle::from_radians(FRAC_PI_8),
            Angle::from_radians(-FRAC_PI_8),
        ],
    };

    /// The four `(θ_A, θ_B)` pairs with their sign in the CHSH sum.
    pub fn terms(&self) -> [(Angle, Angle, f64); 4] {
        let [a, a2] = self.alice;
        let [b, b2] = self.bob;
        [(a, b, 1.0), (a2, b, 1.0), (a, b2, 1.0), (a2, b2, -1.0)]
    }

    /// Combines four correlations given in [`terms`](Self::terms) order.
    pub fn combine(values: [f64; 4]) -> f64 {
        (values[0] + values[1] + values[2] - values[3]).abs()
    }
}

impl Default for ChshAngles {
    fn default() -> Self {
        Self::CANONICAL
    }
}

/// Probability that Alice clicks in `k` and Bob in `l` for one emitted pair.
pub fn joint_probability(
    attack: AttackOrder,
    theta_a: Angle,
    theta_b: Angle,
    k: Channel,
    l: Channel,
) -> f64 {
    let n = attack.alice.get() as i32;
    let m = attack.bob.get() as i32;
    let orth = Angle::from_radians(FRAC_PI_2);
    periodic_mean(|lam| {
        let lam = Angle::from_radians(lam);
        channel_probability(lam, theta_a, k).powi(n)
            * channel_probability(lam + orth, theta_b, l).powi(m)
    })
}

/// `[[P00, P01], [P10, P11]]` at angle difference `delta = θ_A − θ_B`.
pub fn joint_table(attack: AttackOrder, delta: Angle) -> [[f64; 2]; 2] {
    let mut t = [[0.0; 2]; 2];
    for k in Channel::BOTH {
        for l in Channel::BOTH {
            t[k.index()][l.index()] = joint_probability(attack, delta, Angle::ZERO, k, l);
        }
    }
    t
}

/// Total coincidence probability `Σ_kl P_kl` at `delta`.
pub fn coincidence_probability(attack: AttackOrder, delta: Angle) -> f64 {
    joint_table(attack, delta).iter().flatten().sum()
}

fn signed_sum(t: &[[f64; 2]; 2]) -> f64 {
    t[0][0] - t[0][1] - t[1][0] + t[1][1]
}

/// Correlation normalized by the coincidence sum, as Alice and Bob measure it
/// after discarding non-detections.
pub fn correlation(attack: AttackOrder, delta: Angle) -> f64 {
    let t = joint_table(attack, delta);
    signed_sum(&t) / t.iter().flatten().sum::<f64>()
}

/// Correlation when every non-detection is replaced by a fair random bit:
/// random outcomes contribute zero, so this is the unnormalized signed sum.
pub fn padded_correlation(attack: AttackOrder, delta: Angle) -> f64 {
    signed_sum(&joint_table(attack, delta))
}

pub fn chsh(attack: AttackOrder, angles: &ChshAngles) -> f64 {
    ChshAngles::combine(angles.terms().map(|(a, b, _)| correlation(attack, a - b)))
}

pub fn padded_chsh(attack: AttackOrder, angles: &ChshAngles) -> f64 {
    ChshAngles::combine(
        angles
            .terms()
            .map(|(a, b, _)| padded_correlation(attack, a - b)),
    )
}

/// Visibility `|E(0)|` and the QBER `(1 − V)/2` it implies.
pub fn visibility_and_qber(attack: AttackOrder) -> (f64, f64) {
    let v = correlation(attack, Angle::ZERO).abs();
    (v, (1.0 - v) / 2.0)
}

/// `λ`-averaged probability that a pulse is detected at all on one side.
pub fn mean_detection_efficiency(order: AbsorptionOrder) -> f64 {
    periodic_mean(|lam| click_probability(order, Angle::from_radians(lam), Angle::ZERO))
}

/// Grid used to locate the extrema of the coincidence sum over `Δ ∈ [0, π/2]`.
const SUM_SCAN_POINTS: usize = 1025;

/// Setting dependence of the total coincidence rate, `(max − min)/(max + min)`.
pub fn coincidence_sum_visibility(attack: AttackOrder) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..SUM_SCAN_POINTS {
        let delta = FRAC_PI_2 * i as f64 / (SUM_SCAN_POINTS - 1) as f64;
        let s = coincidence_probability(attack, Angle::from_radians(delta));
        lo = lo.min(s);
        hi = hi.max(s);
    }
    (hi - lo) / (hi + lo)
}

/// Eve's error probability under the "bet on the likelier outcome" strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveErrorOracle {
    /// Per emitted pair at matched settings: both sides clicked opposite to
    /// Eve's guess.
    pub per_emitted: f64,
    /// Same event conditioned on the pair landing in the sifted key.
    pub per_sifted: f64,
}

pub fn eve_error_probability(attack: AttackOrder) -> EveErrorOracle {
    let k = 2 * (attack.alice.get() + attack.bob.get()) as i32;
    let below = integrate(0.0, FRAC_PI_4, |a| a.sin().powi(k));
    let above = integrate(FRAC_PI_4, FRAC_PI_2, |a| a.cos().powi(k));
    let per_emitted = (below + above) / FRAC_PI_2;
    EveErrorOracle {
        per_emitted,
        per_sifted: per_emitted / coincidence_probability(attack, Angle::ZERO),
    }
}

/// `λ`-averaged probability that a given polarimeter clicks, as a function of
/// the offset between the analyzer and the polarimeter.
pub fn fs_click_probability(order: AbsorptionOrder, theta_minus_phi: Angle) -> f64 {
    let n = order.get() as i32;
    let into_channel = periodic_mean(|lam| lam.cos().powi(2 * n));
    let d = theta_minus_phi.radians();
    into_channel * (d.cos().powi(2 * n) + d.sin().powi(2 * n))
}

/// Every oracle statistic for one attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: u32,
    pub m: u32,
    pub eta_alice: f64,
    pub eta_bob: f64,
    /// Mean of the two per-side efficiencies.
    pub eta: f64,
    pub chsh: f64,
    pub visibility: f64,
    pub qber: f64,
    pub p_error_emitted: f64,
    pub p_error_sifted: f64,
    pub sum_visibility: f64,
    pub padded_chsh: f64,
}

impl OracleReport {
    pub fn for_attack(attack: AttackOrder) -> Self {
        let eta_alice = mean_detection_efficiency(attack.alice);
        let eta_bob = mean_detection_efficiency(attack.bob);
        let (visibility, qber) = visibility_and_qber(attack);
        let eve = eve_error_probability(attack);
        OracleReport {
            n: attack.alice.get(),
            m: attack.bob.get(),
            eta_alice,
            eta_bob,
            eta: 0.5 * (eta_alice + eta_bob),
            chsh: chsh(attack, &ChshAngles::CANONICAL),
            visibility,
            qber,
            p_error_emitted: eve.per_emitted,
            p_error_sifted: eve.per_sifted,
            sum_visibility: coincidence_sum_visibility(attack),
            padded_chsh: padded_chsh(attack, &ChshAngles::CANONICAL),
        }
    }

    pub const CSV_HEADER: [&'static str; 9] = [
        "n",
        "m",
        "eta",
        "S",
        "V",
        "qber",
        "p_error_emitted",
        "p_error_sifted",
        "sum_visibility",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        use crate::report::fmt_float as f;
        vec![
            self.n.to_string(),
            self.m.to_string(),
            f(self.eta),
            f(self.chsh),
            f(self.visibility),
            f(self.qber),
            f(self.p_error_emitted),
            f(self.p_error_sifted),
            f(self.sum_visibility),
        ]
    }
}

/// Reproduction of the reference table: rows (1,1), (2,2), (2,3), (3,3).
pub fn reference_table() -> Vec<OracleReport> {
    AttackOrder::table_rows()
        .into_iter()
        .map(OracleReport::for_attack)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{PI, SQRT_2};

    fn att(n: u32, m: u32) -> AttackOrder {
        AttackOrder::new(n, m).unwrap()
    }

    fn a(x: f64) -> Angle {
        Angle::from_radians(x)
    }

    #[test]
    fn joint_probability_examples() {
        let p = joint_probability(att(1, 1), a(0.0), a(0.0), Channel::Zero, Channel::Zero);
        assert!((p - 0.125).abs() < 1e-12);
        let p = joint_probability(att(2, 2), a(0.0), a(0.0), Channel::Zero, Channel::Zero);
        assert!((p - 3.0 / 128.0).abs() < 1e-12);
        for d in [0.0, 0.3, 1.2, 2.9] {
            assert!((coincidence_probability(att(1, 1), a(d)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_examples() {
        assert!((correlation(att(1, 1), a(0.0)) + 0.5).abs() < 1e-12);
        assert!(correlation(att(2, 2), a(FRAC_PI_4)).abs() < 1e-12);
        assert!((correlation(att(2, 3), a(0.0)) + 10.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn chsh_examples() {
        let c = ChshAngles::CANONICAL;
        assert!((chsh(att(1, 1), &c) - SQRT_2).abs() < 1e-12);
        assert!((chsh(att(2, 2), &c) - 16.0 / 18.0 * 2.0 * SQRT_2).abs() < 1e-12);
        assert!((chsh(att(2, 3), &c) - 2.0 * SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn visibility_examples() {
        let (v, q) = visibility_and_qber(att(1, 1));
        assert!((v - 0.5).abs() < 1e-12 && (q - 0.25).abs() < 1e-12);
        let (v, q) = visibility_and_qber(att(2, 2));
        assert!((v - 16.0 / 19.0).abs() < 1e-12);
        assert!((q - 0.079).abs() < 5e-4);
        let (v, q) = visibility_and_qber(att(3, 3));
        assert!((v - 0.96).abs() < 5e-3);
        assert!((q - 0.021).abs() < 5e-4);
    }

    #[test]
    fn efficiency_examples() {
        let e = |n| mean_detection_efficiency(AbsorptionOrder::new(n).unwrap());
        assert!((e(1) - 1.0).abs() < 1e-12);
        assert!((e(2) - 0.75).abs() < 1e-12);
        assert!((e(3) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn sum_visibility_examples() {
        assert!((coincidence_sum_visibility(att(2, 2)) - 1.0 / 18.0).abs() < 1e-12);
        assert!((coincidence_sum_visibility(att(2, 3)) - 0.10).abs() < 1e-12);
        for m in 1..=8 {
            assert!(coincidence_sum_visibility(att(1, m)).abs() < 1e-12);
        }
    }

    #[test]
    fn eve_error_examples() {
        let e = eve_error_probability(att(1, 1));
        assert!((e.per_emitted - (0.375 - 1.0 / PI)).abs() < 1e-14);
        let e = eve_error_probability(att(2, 2));
        assert!((e.per_emitted - 0.0082).abs() < 5e-5);
        assert!((e.per_sifted - e.per_emitted * 32.0 / 19.0).abs() < 1e-14);
        // the integral for k = 10 evaluates to 0.338 %
        let e = eve_error_probability(att(2, 3));
        assert!((e.per_emitted - 0.003382461784859615).abs() < 1e-12);
        let e = eve_error_probability(att(3, 3));
        assert!((e.per_emitted - 0.0014).abs() < 5e-5);
    }

    #[test]
    fn fs_click_examples() {
        let o = |n| AbsorptionOrder::new(n).unwrap();
        for x in [0.0, 0.2, FRAC_PI_4, 1.3] {
            assert!((fs_click_probability(o(1), a(x)) - 0.5).abs() < 1e-12);
        }
        assert!((fs_click_probability(o(2), a(0.0)) - 0.375).abs() < 1e-12);
        assert!((fs_click_probability(o(2), a(FRAC_PI_4)) - 0.1875).abs() < 1e-12);
    }

    #[test]
    fn table_rows_are_monotone() {
        let rows = reference_table();
        for w in rows.windows(2) {
            assert!(w[1].chsh > w[0].chsh);
            assert!(w[1].qber < w[0].qber);
            assert!(w[1].p_error_emitted < w[0].p_error_emitted);
        }
    }

    #[test]
    fn report_invariants() {
        for n in 1..=8 {
            for m in 1..=8 {
                let r = OracleReport::for_attack(att(n, m));
                assert!((r.qber - (1.0 - r.visibility) / 2.0).abs() < 1e-15);
                assert!(r.chsh >= 0.0 && r.chsh <= 4.0);
                assert!((0.0..=1.0).contains(&r.visibility));
                assert!((0.0..=1.0).contains(&r.sum_visibility));
            }
        }
    }

    proptest! {
        #[test]
        fn rotational_invariance(n in 1u32..=4, m in 1u32..=4, ta in -3.0f64..3.0, tb in -3.0f64..3.0, shift in -10.0f64..10.0) {
            let at = att(n, m);
            for k in Channel::BOTH {
                for l in Channel::BOTH {
                    let p = joint_probability(at, a(ta), a(tb), k, l);
                    let q = joint_probability(at, a(ta + shift), a(tb + shift), k, l);
                    prop_assert!((p - q).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn channel_symmetry(n in 1u32..=8, m in 1u32..=8, d in -3.0f64..3.0) {
            let t = joint_table(att(n, m), a(d));
            prop_assert!((t[0][0] - t[1][1]).abs() < 1e-10);
            prop_assert!((t[0][1] - t[1][0]).abs() < 1e-10);
        }

        #[test]
        fn coincidence_sum_bounded_below(n in 1u32..=8, m in 1u32..=8, d in -3.0f64..3.0) {
            let s = coincidence_probability(att(n, m), a(d));
            prop_assert!(s >= 2.0 * 4f64.powi(-((n + m) as i32)));
        }
    }
}
