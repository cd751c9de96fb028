//! Two-party Bayesian game between a client and a rational malicious server.
//!
//! The server does not know whether an incoming request is *risky* (issued by
//! a client able to detect and punish a deviation) or *risk-less*. It holds a
//! belief `theta` that the request is risky and picks among attacking,
//! following the protocol, or staying silent by comparing expected gains.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when comparing a belief against the attack threshold.
pub const THRESHOLD_TOLERANCE: f64 = 1e-12;

/// Gains and losses of the two players. All four are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffParams {
    /// Client gain on a successful read.
    pub g_c: f64,
    /// Client gain when it detects the server.
    pub d_c: f64,
    /// Server gain when it prevents a correct read.
    pub g_s: f64,
    /// Server loss when it is detected.
    pub d_s: f64,
}

impl PayoffParams {
    pub fn new(g_c: f64, d_c: f64, g_s: f64, d_s: f64) -> Result<Self> {
        let p = Self { g_c, d_c, g_s, d_s };
        p.validate()?;
        Ok(p)
    }

    /// Server-side parameters only; the client values are set to 1.
    pub fn server(g_s: f64, d_s: f64) -> Result<Self> {
        Self::new(1.0, 1.0, g_s, d_s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("g_c", self.g_c),
            ("d_c", self.d_c),
            ("g_s", self.g_s),
            ("d_s", self.d_s),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidPayoff { name, value });
            }
        }
        Ok(())
    }
}

/// The server's belief that a request is risky.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Belief(f64);

impl Belief {
    pub fn new(theta: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&theta) {
            Ok(Self(theta))
        } else {
            Err(Error::InvalidBelief(theta))
        }
    }

    /// Belief derived from an estimated number of clients, `theta = 1 / c`:
    /// only one of `c` clients (the last writer) can detect.
    pub fn from_client_estimate(clients: u32) -> Result<Self> {
        if clients == 0 {
            return Err(Error::InvalidBelief(f64::INFINITY));
        }
        Self::new(1.0 / f64::from(clients))
    }

    pub fn theta(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Belief {
    type Error = Error;

    fn try_from(theta: f64) -> Result<Self> {
        Self::new(theta)
    }
}

impl From<Belief> for f64 {
    fn from(b: Belief) -> f64 {
        b.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Reply with a wrong value, a wrong timestamp, or both.
    Attack,
    /// Follow the protocol.
    NotAttack,
    /// Omit the reply.
    Silent,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Attack, Strategy::NotAttack, Strategy::Silent];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Attack => "A",
            Strategy::NotAttack => "NA",
            Strategy::Silent => "S",
        })
    }
}

/// Expected gain of the server for `strategy` under belief `theta`.
///
/// Silence is punished whatever the request type, following the protocol
/// earns nothing, and attacking wins `g_s` on risk-less requests while losing
/// `d_s` on risky ones.
pub fn expected_gain(strategy: Strategy, theta: Belief, p: &PayoffParams) -> Result<f64> {
    p.validate()?;
    let t = theta.theta();
    Ok(match strategy {
        Strategy::Silent => -p.d_s * (1.0 - t) + -p.d_s * t,
        Strategy::NotAttack => (1.0 - t) * 0.0 + t * 0.0,
        Strategy::Attack => (1.0 - t) * p.g_s - t * p.d_s,
    })
}

/// Belief below which attacking is strictly better than following the protocol.
pub fn attack_threshold(p: &PayoffParams) -> Result<f64> {
    p.validate()?;
    Ok(p.g_s / (p.g_s + p.d_s))
}

/// Best response of a rational malicious server. Never `Silent`; ties at the
/// threshold go to `NotAttack`.
pub fn best_response(theta: Belief, p: &PayoffParams) -> Result<Strategy> {
    let threshold = attack_threshold(p)?;
    if threshold - theta.theta() > THRESHOLD_TOLERANCE {
        Ok(Strategy::Attack)
    } else {
        Ok(Strategy::NotAttack)
    }
}

/// Argmax over all three expected gains. Kept separate from
/// [`best_response`] so the two can be checked against each other.
pub fn brute_force_best_response(theta: Belief, p: &PayoffParams) -> Result<Strategy> {
    let mut best = Strategy::NotAttack;
    let mut best_gain = expected_gain(Strategy::NotAttack, theta, p)?;
    for s in Strategy::ALL {
        let gain = expected_gain(s, theta, p)?;
        // NotAttack wins ties against Attack, and Silent never wins a tie.
        if gain - best_gain > THRESHOLD_TOLERANCE {
            best = s;
            best_gain = gain;
        }
    }
    Ok(best)
}

/// Gains of all three strategies, in [`Strategy::ALL`] order.
pub fn gains(theta: Belief, p: &PayoffParams) -> Result<[f64; 3]> {
    Ok([
        expected_gain(Strategy::Attack, theta, p)?,
        expected_gain(Strategy::NotAttack, theta, p)?,
        expected_gain(Strategy::Silent, theta, p)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;

    fn b(t: f64) -> Belief {
        Belief::new(t).unwrap()
    }

    fn ps(g_s: f64, d_s: f64) -> PayoffParams {
        PayoffParams::server(g_s, d_s).unwrap()
    }

    #[test]
    fn expected_gain_examples() {
        assert_eq!(expected_gain(Strategy::Silent, b(0.7), &ps(1.0, 3.0)).unwrap(), -3.0);
        assert_eq!(expected_gain(Strategy::NotAttack, b(0.0), &ps(4.0, 2.0)).unwrap(), 0.0);
        assert_eq!(expected_gain(Strategy::Attack, b(0.25), &ps(1.0, 3.0)).unwrap(), 0.0);
        assert_eq!(expected_gain(Strategy::Attack, b(0.0), &ps(5.0, 9.0)).unwrap(), 5.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Belief::new(1.5).is_err());
        assert!(Belief::new(-0.1).is_err());
        assert!(Belief::new(f64::NAN).is_err());
        assert!(PayoffParams::server(0.0, 1.0).is_err());
        assert!(PayoffParams::server(1.0, -2.0).is_err());
        let bad = PayoffParams { g_c: 1.0, d_c: 1.0, g_s: 1.0, d_s: 0.0 };
        assert!(expected_gain(Strategy::Attack, b(0.5), &bad).is_err());
        assert!(attack_threshold(&bad).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(attack_threshold(&ps(1.0, 1.0)).unwrap(), 0.5);
        assert_eq!(attack_threshold(&ps(1.0, 3.0)).unwrap(), 0.25);
        assert!((attack_threshold(&ps(2.0, 1.0)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn best_response_examples() {
        assert_eq!(best_response(b(0.4), &ps(2.0, 1.0)).unwrap(), Strategy::Attack);
        assert_eq!(best_response(b(0.5), &ps(1.0, 2.0)).unwrap(), Strategy::NotAttack);
        assert_eq!(best_response(b(0.5), &ps(1.0, 1.0)).unwrap(), Strategy::NotAttack);
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_best_response(b(1.0), &ps(3.0, 0.5)).unwrap(), Strategy::NotAttack);
        assert_eq!(brute_force_best_response(b(0.0), &ps(1.0, 100.0)).unwrap(), Strategy::Attack);
    }

    #[test]
    fn belief_from_client_estimate() {
        assert_eq!(Belief::from_client_estimate(4).unwrap().theta(), 0.25);
        assert!(Belief::from_client_estimate(0).is_err());
    }

    #[test]
    fn belief_serde_validates() {
        assert!(serde_json::from_str::<Belief>("0.3").is_ok());
        assert!(serde_json::from_str::<Belief>("1.3").is_err());
    }

    proptest! {
        #[test]
        fn silent_is_dominated(t in 0.0f64..=1.0, g in 0.01f64..50.0, d in 0.01f64..50.0) {
            let p = ps(g, d);
            let s = expected_gain(Strategy::Silent, b(t), &p).unwrap();
            let na = expected_gain(Strategy::NotAttack, b(t), &p).unwrap();
            prop_assert!(s < na);
        }

        #[test]
        fn attack_iff_below_threshold(t in 0.0f64..=1.0, g in 0.01f64..50.0, d in 0.01f64..50.0) {
            let p = ps(g, d);
            let thr = g / (g + d);
            prop_assume!((t - thr).abs() > 1e-9);
            let br = best_response(b(t), &p).unwrap();
            prop_assert_eq!(br == Strategy::Attack, t < thr);
            prop_assert_ne!(br, Strategy::Silent);
        }

        #[test]
        fn attack_when_loss_below_gain(t in 0.0f64..0.5, g in 0.02f64..50.0, frac in 0.01f64..0.99) {
            let p = ps(g, g * frac);
            prop_assert_eq!(best_response(b(t), &p).unwrap(), Strategy::Attack);
        }

        #[test]
        fn never_attack_when_loss_above_gain(t in 0.5f64..=1.0, g in 0.01f64..50.0, mult in 1.01f64..20.0) {
            let p = ps(g, g * mult);
            prop_assert_eq!(best_response(b(t), &p).unwrap(), Strategy::NotAttack);
        }

        #[test]
        fn oracle_agrees(t in 0.0f64..=1.0, g in 0.01f64..50.0, d in 0.01f64..50.0) {
            let p = ps(g, d);
            prop_assert_eq!(best_response(b(t), &p).unwrap(), brute_force_best_response(b(t), &p).unwrap());
        }
    }
}
