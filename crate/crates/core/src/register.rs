//! Client and server automata of the register protocols.
//!
//! Both automata are plain state machines. Servers answer each request with
//! the messages an honest server would send; the adversary layer decides what
//! actually leaves the server. Clients return a list of [`Effect`]s for the
//! world to execute, which keeps them free of any engine dependency.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simnet::{ClientId, ServerId, TimingParams, VirtualTime};
use crate::variants::{
    hash_read_verify, hash_write_decorate, witness_cross_check, Coin, Digest, FingerprintBook,
    Fingerprinter, Protocol,
};

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Value(pub u64);

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type ValueSet = BTreeSet<Value>;

fn fmt_set(set: &ValueSet) -> String {
    let items: Vec<String> = set.iter().map(|v| v.to_string()).collect();
    format!("{{{}}}", items.join(","))
}

/// One `(server, timestamp, value-set)` entry of a client's reply buffer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub server: ServerId,
    pub ts: Timestamp,
    pub val: ValueSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub j: ServerId,
    pub ts: Timestamp,
    pub val: ValueSet,
    pub ots: Timestamp,
    /// `None` stands for the initial, never-assigned old value.
    pub oval: Option<ValueSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<Digest>,
}

impl Reply {
    pub fn triples(&self) -> [Triple; 2] {
        [
            Triple { server: self.j, ts: self.ts, val: self.val.clone() },
            Triple { server: self.j, ts: self.ots, val: self.oval.clone().unwrap_or_default() },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Read,
    Reply(Reply),
    ReadAck,
    Write {
        val: Value,
        ts: Timestamp,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fingerprint: Option<Digest>,
    },
    WriteAck {
        ts: Timestamp,
        j: ServerId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fingerprint: Option<Digest>,
    },
    Detected {
        server: ServerId,
    },
    CheckTs {
        ts: Vec<Timestamp>,
    },
    CheckReply {
        ts: Timestamp,
        val: Value,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Read,
    Reply,
    ReadAck,
    Write,
    WriteAck,
    Detected,
    CheckTs,
    CheckReply,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::Read,
        MessageKind::Reply,
        MessageKind::ReadAck,
        MessageKind::Write,
        MessageKind::WriteAck,
        MessageKind::Detected,
        MessageKind::CheckTs,
        MessageKind::CheckReply,
    ];
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::Read => "READ",
            MessageKind::Reply => "REPLY",
            MessageKind::ReadAck => "READ_ACK",
            MessageKind::Write => "WRITE",
            MessageKind::WriteAck => "WRITE_ACK",
            MessageKind::Detected => "DETECTED",
            MessageKind::CheckTs => "CHECK_TS",
            MessageKind::CheckReply => "CHECK_REPLY",
        })
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Read => MessageKind::Read,
            Message::Reply(_) => MessageKind::Reply,
            Message::ReadAck => MessageKind::ReadAck,
            Message::Write { .. } => MessageKind::Write,
            Message::WriteAck { .. } => MessageKind::WriteAck,
            Message::Detected { .. } => MessageKind::Detected,
            Message::CheckTs { .. } => MessageKind::CheckTs,
            Message::CheckReply { .. } => MessageKind::CheckReply,
        }
    }

    /// Short human-readable rendering used in traces.
    pub fn summary(&self) -> String {
        match self {
            Message::Read => "READ()".into(),
            Message::ReadAck => "READ_ACK()".into(),
            Message::Reply(r) => {
                let oval = r.oval.as_ref().map_or("⊥".to_string(), fmt_set);
                format!("REPLY({}, {}, {}, {}, {})", r.j, r.ts, fmt_set(&r.val), r.ots, oval)
            }
            Message::Write { val, ts, .. } => format!("WRITE({val}, {ts})"),
            Message::WriteAck { ts, j, .. } => format!("WRITE_ACK({ts}, {j})"),
            Message::Detected { server } => format!("DETECTED({server})"),
            Message::CheckTs { ts } => {
                let items: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
                format!("CHECK_TS([{}])", items.join(","))
            }
            Message::CheckReply { ts, val } => format!("CHECK_REPLY({ts}, {val})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerState {
    pub id: ServerId,
    pub val: ValueSet,
    pub ts: Timestamp,
    pub old_val: Option<ValueSet>,
    pub old_ts: Timestamp,
    pub reading: u64,
    /// Fingerprint received with the current write, echoed in replies.
    pub fingerprint: Option<Digest>,
}

impl ServerState {
    pub fn new(id: ServerId) -> Self {
        Self {
            id,
            val: ValueSet::new(),
            ts: Timestamp::ZERO,
            old_val: None,
            old_ts: Timestamp::ZERO,
            reading: 0,
            fingerprint: None,
        }
    }

    pub fn reply(&self) -> Reply {
        Reply {
            j: self.id,
            ts: self.ts,
            val: self.val.clone(),
            ots: self.old_ts,
            oval: self.old_val.clone(),
            fingerprint: self.fingerprint,
        }
    }

    pub fn handle_read(&mut self) -> Reply {
        self.reading += 1;
        self.reply()
    }

    /// Returns `false` when the counter was already zero.
    pub fn handle_read_ack(&mut self) -> bool {
        if self.reading == 0 {
            return false;
        }
        self.reading -= 1;
        true
    }

    /// Applies a write and returns the acknowledgement plus the reply that is
    /// forwarded to readers in progress.
    pub fn handle_write(
        &mut self,
        val: Value,
        ts: Timestamp,
        fingerprint: Option<Digest>,
    ) -> (Message, Option<Reply>) {
        if ts > self.ts {
            self.old_ts = self.ts;
            self.old_val = Some(std::mem::take(&mut self.val));
            self.ts = ts;
            self.val.insert(val);
            self.fingerprint = fingerprint;
        } else if ts == self.ts {
            self.val.insert(val);
        }
        let ack = Message::WriteAck { ts, j: self.id, fingerprint };
        let forward = (self.reading > 0).then(|| self.reply());
        (ack, forward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadOutcome {
    Value(Value),
    Bottom,
    Abort,
}

impl fmt::Display for ReadOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReadOutcome::Value(v) => write!(f, "{v}"),
            ReadOutcome::Bottom => f.write_str("⊥"),
            ReadOutcome::Abort => f.write_str("abort"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Written,
    Read(ReadOutcome),
}

/// Client-side timer labels, one per `wait` of the operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    ReadFirstCheck,
    ReadSecondCheck,
    WitnessDeadline,
    WriteProbe,
    WriteAckCheck,
    WriteEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectRule {
    AckOmission,
    AckMismatch,
    ReplyOmission,
    WriterMismatch,
    TooOld,
    TooNew,
    WrongValue,
    Witness,
    Fingerprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetType {
    /// Write acknowledgements.
    Ack,
    /// Read replies.
    Replies,
    Witness,
    Fingerprint,
}

/// Inputs a detection run was evaluated against, logged for the checker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRun {
    pub set_type: SetType,
    pub writing: bool,
    pub honest_before: Vec<ServerId>,
    pub last_ts: Timestamp,
    pub my_last_ts: Timestamp,
    pub my_last_val: Option<Value>,
    pub fingerprint_ops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Broadcast(Message),
    SendLabel(Message),
    Timer { after: u64, step: Step },
    Detect { server: ServerId, rule: DetectRule },
    DetectionRun(DetectionRun),
    Coin { heads: bool },
    FingerprintOps(u64),
    Complete(Outcome),
    Note(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct OpInProgress {
    kind: OpKind,
    witness_phase: bool,
}

/// Observation of the current component of a reply, with the receiver's
/// `last_ts` at delivery time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CurrentObs {
    pub server: ServerId,
    pub ts: Timestamp,
    pub lts: Timestamp,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: ClientId,
    pub protocol: Protocol,
    pub timing: TimingParams,
    pub replies: BTreeSet<Triple>,
    pub current_obs: BTreeSet<CurrentObs>,
    pub ack: BTreeSet<(ServerId, Timestamp, Option<Digest>)>,
    /// Acknowledgements of the current write. Unlike `ack` it is never
    /// pruned by the timestamp trigger, so the ack check sees every one.
    pub write_acks: BTreeSet<(ServerId, Timestamp, Option<Digest>)>,
    pub honest: BTreeSet<ServerId>,
    pub last_ts: Timestamp,
    pub my_last_ts: Timestamp,
    pub my_last_val: Option<Value>,
    pub my_fp: Option<Digest>,
    pub known: FingerprintBook,
    pub writing: bool,
    pub witnesses: BTreeSet<(Timestamp, Value)>,
    pub assumption_violated: bool,
    op: Option<OpInProgress>,
    coin: Coin,
    fingerprinter: Arc<dyn Fingerprinter>,
}

impl ClientState {
    pub fn new(
        id: ClientId,
        n_servers: usize,
        protocol: Protocol,
        timing: TimingParams,
        coin: Coin,
        fingerprinter: Arc<dyn Fingerprinter>,
    ) -> Self {
        Self {
            id,
            protocol,
            timing,
            replies: BTreeSet::new(),
            current_obs: BTreeSet::new(),
            ack: BTreeSet::new(),
            write_acks: BTreeSet::new(),
            honest: (0..n_servers).map(ServerId::from_index).collect(),
            last_ts: Timestamp::ZERO,
            my_last_ts: Timestamp::ZERO,
            my_last_val: None,
            my_fp: None,
            known: FingerprintBook::default(),
            writing: false,
            witnesses: BTreeSet::new(),
            assumption_violated: false,
            op: None,
            coin,
            fingerprinter,
        }
    }

    pub fn busy(&self) -> bool {
        self.op.is_some()
    }

    pub fn current_op(&self) -> Option<OpKind> {
        self.op.map(|o| o.kind)
    }

    pub fn invoke_read(&mut self, now: VirtualTime) -> Result<Vec<Effect>> {
        self.ensure_idle(now)?;
        if self.last_ts == Timestamp::ZERO {
            return Ok(vec![Effect::Complete(Outcome::Read(ReadOutcome::Bottom))]);
        }
        self.op = Some(OpInProgress { kind: OpKind::Read, witness_phase: false });
        self.clear_replies();
        self.witnesses.clear();
        Ok(vec![
            Effect::Broadcast(Message::Read),
            Effect::Timer { after: 2 * self.timing.delta, step: Step::ReadFirstCheck },
        ])
    }

    pub fn invoke_write(&mut self, v: Value, now: VirtualTime) -> Result<Vec<Effect>> {
        self.ensure_idle(now)?;
        self.op = Some(OpInProgress { kind: OpKind::Write, witness_phase: false });
        self.writing = true;
        self.ack.clear();
        self.write_acks.clear();
        self.my_last_ts = Timestamp(self.last_ts.0 + 1);
        self.my_last_val = Some(v);
        self.my_fp =
            hash_write_decorate(self.protocol, self.fingerprinter.as_ref(), v, self.my_last_ts);
        let mut out = vec![Effect::Broadcast(Message::Write {
            val: v,
            ts: self.my_last_ts,
            fingerprint: self.my_fp,
        })];
        if self.my_fp.is_some() {
            out.push(Effect::FingerprintOps(1));
        }
        let delta = self.timing.delta;
        out.push(if self.protocol.masks_writes() {
            Effect::Timer { after: delta, step: Step::WriteProbe }
        } else {
            Effect::Timer { after: 2 * delta, step: Step::WriteAckCheck }
        });
        Ok(out)
    }

    fn ensure_idle(&self, now: VirtualTime) -> Result<()> {
        if self.op.is_some() {
            return Err(Error::ClientBusy { client: self.id, at: now });
        }
        Ok(())
    }

    fn clear_replies(&mut self) {
        self.replies.clear();
        self.current_obs.clear();
    }

    /// Replies are buffered only while an operation is in progress.
    pub fn on_reply(&mut self, reply: &Reply) {
        if self.op.is_none() {
            return;
        }
        self.current_obs.insert(CurrentObs { server: reply.j, ts: reply.ts, lts: self.last_ts });
        self.replies.extend(reply.triples());
    }

    pub fn on_write_ack(
        &mut self,
        ts: Timestamp,
        j: ServerId,
        fingerprint: Option<Digest>,
    ) -> Vec<Effect> {
        if ts >= self.my_last_ts {
            self.ack.insert((j, ts, fingerprint));
            if self.writing {
                self.write_acks.insert((j, ts, fingerprint));
            }
        }
        self.ack_trigger();
        Vec::new()
    }

    pub fn on_detected(&mut self, server: ServerId) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.honest.remove(&server) {
            self.after_honest_shrunk(&mut out);
        }
        out
    }

    pub fn on_check_ts(&mut self, requested: &[Timestamp]) -> Vec<Effect> {
        match self.my_last_val {
            Some(val) if requested.contains(&self.my_last_ts) => {
                vec![Effect::SendLabel(Message::CheckReply { ts: self.my_last_ts, val })]
            }
            _ => Vec::new(),
        }
    }

    pub fn on_check_reply(&mut self, ts: Timestamp, val: Value) {
        if self.op.is_some_and(|o| o.witness_phase) {
            self.witnesses.insert((ts, val));
        }
    }

    /// Advances the current operation after one of its waits elapsed.
    pub fn on_timer(&mut self, step: Step) -> Vec<Effect> {
        let mut out = Vec::new();
        match step {
            Step::ReadFirstCheck => {
                if let Some(v) = self.unanimous() {
                    out.push(Effect::Broadcast(Message::ReadAck));
                    self.finish(Outcome::Read(v), &mut out);
                } else {
                    out.push(Effect::Timer { after: self.timing.delta, step: Step::ReadSecondCheck });
                }
            }
            Step::ReadSecondCheck => {
                if let Some(v) = self.unanimous() {
                    out.push(Effect::Broadcast(Message::ReadAck));
                    self.finish(Outcome::Read(v), &mut out);
                    return out;
                }
                self.detect_replies_reading(&mut out);
                out.push(Effect::Broadcast(Message::ReadAck));
                if self.protocol == Protocol::P {
                    self.final_check(&mut out);
                    return out;
                }
                let heads = self.coin.flip();
                out.push(Effect::Coin { heads });
                if !heads {
                    self.final_check(&mut out);
                } else if self.protocol == Protocol::Pcv {
                    self.start_witness_phase(&mut out);
                } else {
                    self.fingerprint_check(&mut out);
                    self.final_check(&mut out);
                }
            }
            Step::WitnessDeadline => {
                let check = witness_cross_check(
                    &self.replies,
                    &self.honest,
                    &self.witnesses,
                    self.last_ts,
                );
                out.push(self.run_record(SetType::Witness, 0));
                for s in check.detected {
                    self.detect(s, DetectRule::Witness, &mut out);
                }
                if let Some((_, v)) = check.chosen {
                    self.finish(Outcome::Read(ReadOutcome::Value(v)), &mut out);
                } else {
                    out.push(Effect::Note("no witness answered the timestamp check".into()));
                    self.final_check(&mut out);
                }
            }
            Step::WriteProbe => {
                self.clear_replies();
                out.push(Effect::Broadcast(Message::Read));
                out.push(Effect::Timer { after: self.timing.delta, step: Step::WriteAckCheck });
            }
            Step::WriteAckCheck => {
                if self.protocol.masks_writes() {
                    out.push(Effect::Broadcast(Message::Read));
                }
                self.detect_acks(&mut out);
                out.push(Effect::Timer { after: self.timing.delta, step: Step::WriteEnd });
            }
            Step::WriteEnd => {
                if self.protocol.masks_writes() {
                    self.detect_replies_writing(&mut out);
                    out.push(Effect::Broadcast(Message::ReadAck));
                    out.push(Effect::Broadcast(Message::ReadAck));
                }
                self.writing = false;
                self.finish(Outcome::Written, &mut out);
            }
        }
        out
    }

    fn finish(&mut self, outcome: Outcome, out: &mut Vec<Effect>) {
        self.op = None;
        out.push(Effect::Complete(outcome));
    }

    fn final_check(&mut self, out: &mut Vec<Effect>) {
        let v = self.unanimous().unwrap_or(ReadOutcome::Abort);
        self.finish(Outcome::Read(v), out);
    }

    fn start_witness_phase(&mut self, out: &mut Vec<Effect>) {
        let candidates: BTreeSet<Timestamp> = self
            .replies
            .iter()
            .filter(|t| self.honest.contains(&t.server) && t.ts >= self.last_ts)
            .map(|t| t.ts)
            .collect();
        if let Some(op) = self.op.as_mut() {
            op.witness_phase = true;
        }
        self.witnesses.clear();
        out.push(Effect::SendLabel(Message::CheckTs { ts: candidates.into_iter().collect() }));
        out.push(Effect::Timer { after: 2 * self.timing.delta_prime, step: Step::WitnessDeadline });
    }

    fn fingerprint_check(&mut self, out: &mut Vec<Effect>) {
        let r = hash_read_verify(
            &self.replies,
            &self.honest,
            &self.known,
            self.fingerprinter.as_ref(),
        );
        out.push(Effect::FingerprintOps(r.fingerprint_ops));
        out.push(self.run_record(SetType::Fingerprint, r.fingerprint_ops));
        for s in r.detected {
            self.detect(s, DetectRule::Fingerprint, out);
        }
    }

    /// Highest `(ts, val)` pair reported by every server still believed
    /// honest.
    pub fn unanimous(&self) -> Option<ReadOutcome> {
        let first = *self.honest.iter().next()?;
        let lo = Triple { server: first, ts: Timestamp::ZERO, val: ValueSet::new() };
        let best = self
            .replies
            .range(lo..)
            .take_while(|t| t.server == first)
            .filter(|t| {
                self.honest.iter().skip(1).all(|&s| {
                    self.replies.contains(&Triple { server: s, ts: t.ts, val: t.val.clone() })
                })
            })
            .max_by(|a, b| (a.ts, &a.val).cmp(&(b.ts, &b.val)))?;
        Some(match best.val.iter().next_back() {
            Some(v) => ReadOutcome::Value(*v),
            None => ReadOutcome::Bottom,
        })
    }

    fn run_record(&self, set_type: SetType, fingerprint_ops: u64) -> Effect {
        Effect::DetectionRun(DetectionRun {
            set_type,
            writing: self.writing,
            honest_before: self.honest.iter().copied().collect(),
            last_ts: self.last_ts,
            my_last_ts: self.my_last_ts,
            my_last_val: self.my_last_val,
            fingerprint_ops,
        })
    }

    fn detect(&mut self, server: ServerId, rule: DetectRule, out: &mut Vec<Effect>) {
        if self.honest.remove(&server) {
            out.push(Effect::Detect { server, rule });
            self.after_honest_shrunk(out);
        }
    }

    fn after_honest_shrunk(&mut self, out: &mut Vec<Effect>) {
        if self.honest.is_empty() && !self.assumption_violated {
            self.assumption_violated = true;
            out.push(Effect::Note(format!(
                "{} believes no server is honest; the one-honest-server assumption is broken",
                self.id
            )));
        }
        self.ack_trigger();
    }

    fn omission(&mut self, reported: &BTreeSet<ServerId>, rule: DetectRule, out: &mut Vec<Effect>) {
        let missing: Vec<ServerId> = self.honest.difference(reported).copied().collect();
        for s in missing {
            self.detect(s, rule, out);
        }
    }

    fn detect_acks(&mut self, out: &mut Vec<Effect>) {
        out.push(self.run_record(SetType::Ack, 0));
        let reported: BTreeSet<ServerId> = self.write_acks.iter().map(|a| a.0).collect();
        self.omission(&reported, DetectRule::AckOmission, out);
        let check_fp = self.protocol.uses_fingerprints();
        let bad: Vec<ServerId> = self
            .write_acks
            .iter()
            .filter(|(_, ts, fp)| *ts != self.my_last_ts || (check_fp && *fp != self.my_fp))
            .map(|a| a.0)
            .collect();
        for s in bad {
            self.detect(s, DetectRule::AckMismatch, out);
        }
    }

    fn detect_replies_writing(&mut self, out: &mut Vec<Effect>) {
        out.push(self.run_record(SetType::Replies, 0));
        let reported: BTreeSet<ServerId> = self.replies.iter().map(|t| t.server).collect();
        self.omission(&reported, DetectRule::ReplyOmission, out);
        let expected: ValueSet = self.my_last_val.into_iter().collect();
        let confirmed: BTreeSet<ServerId> = self
            .replies
            .iter()
            .filter(|t| t.ts == self.my_last_ts && t.val == expected)
            .map(|t| t.server)
            .collect();
        self.omission(&confirmed, DetectRule::WriterMismatch, out);
    }

    fn detect_replies_reading(&mut self, out: &mut Vec<Effect>) {
        out.push(self.run_record(SetType::Replies, 0));
        let reported: BTreeSet<ServerId> = self.replies.iter().map(|t| t.server).collect();
        self.omission(&reported, DetectRule::ReplyOmission, out);

        let too_old: Vec<ServerId> = self
            .current_obs
            .iter()
            .filter(|o| o.ts.0 + 1 < o.lts.0)
            .map(|o| o.server)
            .collect();
        for s in too_old {
            self.detect(s, DetectRule::TooOld, out);
        }

        if let Some(mv) = self.my_last_val {
            if self.my_last_ts == self.last_ts {
                let wrong: Vec<ServerId> = self
                    .replies
                    .iter()
                    .filter(|t| t.ts == self.my_last_ts && !t.val.contains(&mv))
                    .map(|t| t.server)
                    .collect();
                for s in wrong {
                    self.detect(s, DetectRule::WrongValue, out);
                }
            }
        }

        let too_new: Vec<ServerId> = self
            .current_obs
            .iter()
            .filter(|o| o.ts.0 > o.lts.0 + 1)
            .map(|o| o.server)
            .collect();
        for s in too_new {
            self.detect(s, DetectRule::TooNew, out);
        }
    }

    /// Adopts every timestamp acknowledged by all servers believed honest.
    fn ack_trigger(&mut self) {
        if self.honest.is_empty() {
            return;
        }
        loop {
            let mut groups: std::collections::BTreeMap<(Timestamp, Option<Digest>), BTreeSet<ServerId>> =
                Default::default();
            for (j, ts, fp) in &self.ack {
                groups.entry((*ts, *fp)).or_default().insert(*j);
            }
            let Some(((ts, fp), _)) =
                groups.into_iter().find(|(_, senders)| senders.is_superset(&self.honest))
            else {
                return;
            };
            if ts >= self.last_ts {
                self.last_ts = ts;
            }
            if let Some(fp) = fp {
                self.known.insert(ts, fp);
            }
            self.ack.retain(|a| a.1 != ts);
        }
    }
}
