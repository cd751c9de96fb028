//! Server behaviour controllers.
//!
//! A malicious server keeps its local state exactly as an honest one would;
//! only the content of what it sends (or whether it sends at all) changes.
//! Each server owns an independent random stream, so no two adversaries ever
//! coordinate.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{best_response, gains, Belief, PayoffParams, Strategy};
use crate::register::{Message, MessageKind, Reply, Timestamp, Value, ValueSet};
use crate::simnet::{ServerId, VirtualTime};
use crate::variants::{Digest, Protocol};

/// Values handed out by corrupted replies live above this bound, so they are
/// never confused with anything a client writes.
pub const FRESH_VALUE_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionAction {
    WrongValue,
    WrongTimestamp,
    WrongBoth,
    Omit,
}

impl CorruptionAction {
    pub fn strategy(self) -> Strategy {
        match self {
            CorruptionAction::Omit => Strategy::Silent,
            _ => Strategy::Attack,
        }
    }
}

impl fmt::Display for CorruptionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionAction::WrongValue => "wrong_value",
            CorruptionAction::WrongTimestamp => "wrong_timestamp",
            CorruptionAction::WrongBoth => "wrong_both",
            CorruptionAction::Omit => "omit",
        })
    }
}

/// Which incoming requests a scripted rule reacts to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Read,
    Write,
    #[default]
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Request {
    Read,
    Write,
}

impl Trigger {
    fn matches(self, r: Request) -> bool {
        matches!(
            (self, r),
            (Trigger::Any, _) | (Trigger::Read, Request::Read) | (Trigger::Write, Request::Write)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    #[serde(default)]
    pub on: Trigger,
    pub action: CorruptionAction,
    /// Fixed timestamp shift; drawn from {-2, -1, 1, 2} when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<i64>,
    /// Active from this tick (inclusive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<u64>,
    /// Active until this tick (exclusive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<u64>,
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

impl ScriptRule {
    pub fn always(on: Trigger, action: CorruptionAction) -> Self {
        Self { on, action, delta: None, from: None, until: None, probability: 1.0 }
    }

    pub fn with_delta(mut self, delta: i64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Scenario(format!(
                "rule probability must lie in [0, 1], got {}",
                self.probability
            )));
        }
        if self.delta == Some(0) {
            return Err(Error::Scenario("a timestamp shift of 0 is not a corruption".into()));
        }
        Ok(())
    }

    fn active(&self, request: Request, now: VirtualTime) -> bool {
        self.on.matches(request)
            && self.from.is_none_or(|f| now.0 >= f)
            && self.until.is_none_or(|u| now.0 < u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerProfile {
    Honest,
    Crash {
        at: VirtualTime,
    },
    Scripted {
        rules: Vec<ScriptRule>,
    },
    Rational {
        belief: Belief,
        payoffs: PayoffParams,
        /// Corruption used when attacking; drawn per request when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action: Option<CorruptionAction>,
    },
}

impl ServerProfile {
    pub fn is_honest(&self) -> bool {
        matches!(self, ServerProfile::Honest)
    }

    pub fn is_malicious(&self) -> bool {
        matches!(self, ServerProfile::Scripted { .. } | ServerProfile::Rational { .. })
    }

    pub fn crash_at(&self) -> Option<VirtualTime> {
        match self {
            ServerProfile::Crash { at } => Some(*at),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ServerProfile::Scripted { rules } => rules.iter().try_for_each(ScriptRule::validate),
            ServerProfile::Rational { payoffs, .. } => payoffs.validate(),
            _ => Ok(()),
        }
    }
}

/// A rational server's choice for one request, with the gains it compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyChoice {
    pub strategy: Strategy,
    pub theta: f64,
    /// Expected gains of Attack, NotAttack and Silent.
    pub gains: [f64; 3],
}

pub fn choose_strategy(belief: Belief, payoffs: &PayoffParams) -> Result<StrategyChoice> {
    Ok(StrategyChoice {
        strategy: best_response(belief, payoffs)?,
        theta: belief.theta(),
        gains: gains(belief, payoffs)?,
    })
}

/// How a server answers a single request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub choice: Option<StrategyChoice>,
    pub corruption: Option<(CorruptionAction, Option<i64>)>,
}

impl Decision {
    pub const HONEST: Decision = Decision { choice: None, corruption: None };
}

/// Record attached to every corrupted or omitted message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackNote {
    pub action: CorruptionAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<i64>,
    /// Timestamp the honest message would have carried.
    pub true_ts: Timestamp,
}

const SHIFTS: [i64; 4] = [-2, -1, 1, 2];

fn shift(ts: Timestamp, delta: i64) -> Timestamp {
    let t = ts.0 as i64 + delta;
    if t < 0 {
        Timestamp(ts.0 + delta.unsigned_abs())
    } else {
        Timestamp(t as u64)
    }
}

/// Behaviour controller of one server.
#[derive(Debug, Clone)]
pub struct Adversary {
    pub server: ServerId,
    pub profile: ServerProfile,
    rng: ChaCha8Rng,
    fresh: u64,
}

impl Adversary {
    pub fn new(server: ServerId, profile: ServerProfile, seed: u64) -> Self {
        let stream = seed ^ (u64::from(server.0)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self { server, profile, rng: ChaCha8Rng::seed_from_u64(stream), fresh: 0 }
    }

    pub fn decide(&mut self, request: Request, now: VirtualTime) -> Result<Decision> {
        match &self.profile {
            ServerProfile::Honest | ServerProfile::Crash { .. } => Ok(Decision::HONEST),
            ServerProfile::Scripted { rules } => {
                let Some(rule) = rules.iter().find(|r| r.active(request, now)).cloned() else {
                    return Ok(Decision::HONEST);
                };
                if rule.probability < 1.0 && !self.rng.random_bool(rule.probability) {
                    return Ok(Decision::HONEST);
                }
                Ok(Decision { choice: None, corruption: Some((rule.action, rule.delta)) })
            }
            ServerProfile::Rational { belief, payoffs, action } => {
                let choice = choose_strategy(*belief, payoffs)?;
                let corruption = match choice.strategy {
                    Strategy::Attack => Some((action.unwrap_or_else(|| self.draw_attack()), None)),
                    Strategy::Silent => Some((CorruptionAction::Omit, None)),
                    Strategy::NotAttack => None,
                };
                Ok(Decision { choice: Some(choice), corruption })
            }
        }
    }

    fn draw_attack(&mut self) -> CorruptionAction {
        match self.rng.random_range(0..3) {
            0 => CorruptionAction::WrongValue,
            1 => CorruptionAction::WrongTimestamp,
            _ => CorruptionAction::WrongBoth,
        }
    }

    fn draw_shift(&mut self, fixed: Option<i64>) -> i64 {
        fixed.unwrap_or_else(|| SHIFTS[self.rng.random_range(0..SHIFTS.len())])
    }

    fn fresh_value(&mut self) -> Value {
        self.fresh += 1;
        Value(FRESH_VALUE_BASE + (u64::from(self.server.0) << 24) + self.fresh)
    }

    /// Applies `action` to an honest reply. `None` means nothing is sent.
    pub fn corrupt_reply(
        &mut self,
        action: CorruptionAction,
        delta: Option<i64>,
        truth: &Reply,
    ) -> Option<(Reply, AttackNote)> {
        let mut r = truth.clone();
        let mut applied = None;
        if matches!(action, CorruptionAction::WrongValue | CorruptionAction::WrongBoth) {
            r.val = ValueSet::from([self.fresh_value()]);
            r.oval = Some(ValueSet::from([self.fresh_value()]));
        }
        if matches!(action, CorruptionAction::WrongTimestamp | CorruptionAction::WrongBoth) {
            let d = self.draw_shift(delta);
            r.ts = shift(r.ts, d);
            r.ots = shift(r.ots, d);
            applied = Some(d);
        }
        let note = AttackNote { action, delta: applied, true_ts: truth.ts };
        (action != CorruptionAction::Omit).then_some((r, note))
    }

    /// Applies `action` to a write acknowledgement. Outside the fingerprint
    /// protocol an ack carries no value, so a wrong value becomes a wrong
    /// timestamp.
    pub fn corrupt_ack(
        &mut self,
        action: CorruptionAction,
        delta: Option<i64>,
        ack: &Message,
        protocol: Protocol,
    ) -> Option<(Message, AttackNote)> {
        let Message::WriteAck { ts, j, fingerprint } = ack else {
            return None;
        };
        let (mut ts2, mut fp2) = (*ts, *fingerprint);
        let mut applied = None;
        let effective = match action {
            CorruptionAction::WrongValue if !protocol.uses_fingerprints() => {
                CorruptionAction::WrongTimestamp
            }
            a => a,
        };
        if matches!(effective, CorruptionAction::WrongValue | CorruptionAction::WrongBoth) {
            if let Some(fp) = fp2.as_mut() {
                *fp = tamper(fp);
            }
        }
        if matches!(effective, CorruptionAction::WrongTimestamp | CorruptionAction::WrongBoth) {
            let d = self.draw_shift(delta);
            ts2 = shift(ts2, d);
            applied = Some(d);
        }
        let note = AttackNote { action: effective, delta: applied, true_ts: *ts };
        (effective != CorruptionAction::Omit).then_some((
            Message::WriteAck { ts: ts2, j: *j, fingerprint: fp2 },
            note,
        ))
    }
}

fn tamper(d: &Digest) -> Digest {
    let mut b = d.0;
    for x in b.iter_mut() {
        *x ^= 0xA5;
    }
    Digest(b)
}

/// How one read interaction ended for a given server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// The server was detected during the read.
    Detected,
    /// The server attacked and the reader returned abort or a never-written value.
    Prevented,
    /// Anything else: no attack, or an attack that changed nothing.
    Survived,
}

/// Realized utility of a server for one read interaction.
pub fn record_payoff(event: Interaction, p: &PayoffParams) -> f64 {
    match event {
        Interaction::Detected => -p.d_s,
        Interaction::Prevented => p.g_s,
        Interaction::Survived => 0.0,
    }
}

/// Accumulated realized utilities per server.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PayoffLedger {
    pub totals: BTreeMap<ServerId, f64>,
    pub interactions: BTreeMap<ServerId, u64>,
}

impl PayoffLedger {
    pub fn credit(&mut self, server: ServerId, event: Interaction, p: &PayoffParams) -> f64 {
        let u = record_payoff(event, p);
        *self.totals.entry(server).or_default() += u;
        *self.interactions.entry(server).or_default() += 1;
        u
    }

    pub fn average(&self, server: ServerId) -> Option<f64> {
        let n = *self.interactions.get(&server)?;
        (n > 0).then(|| self.totals[&server] / n as f64)
    }

    pub fn merge(&mut self, other: &PayoffLedger) {
        for (s, t) in &other.totals {
            *self.totals.entry(*s).or_default() += t;
        }
        for (s, n) in &other.interactions {
            *self.interactions.entry(*s).or_default() += n;
        }
    }
}

/// Message kinds a request of each type makes a server send.
pub fn request_of(kind: MessageKind) -> Option<Request> {
    match kind {
        MessageKind::Read => Some(Request::Read),
        MessageKind::Write => Some(Request::Write),
        _ => None,
    }
}
