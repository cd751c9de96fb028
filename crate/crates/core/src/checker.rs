//! Post-hoc verification of traces: regular-register semantics, timestamp
//! invariants, detection accuracy and message/computation costs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::adversary::{
    AttackNote, CorruptionAction, Interaction, PayoffLedger, ServerProfile,
};
use crate::game::PayoffParams;
use crate::register::{
    DetectRule, DetectionRun, Message, MessageKind, OpKind, Outcome, ReadOutcome, Reply, SetType,
    Step, Timestamp, Value,
};
use crate::simnet::{ClientId, ProcessId, ServerId, TimingParams, VirtualTime};
use crate::trace::{Body, Boundary, OpId, Trace};
use crate::variants::{Digest, Protocol};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationRecord {
    pub op: OpId,
    pub op_kind: OpKind,
    pub invoker: ClientId,
    pub t_b: VirtualTime,
    /// `None` for failed operations.
    pub t_e: Option<VirtualTime>,
    /// Value written, for writes.
    pub value: Option<Value>,
    /// Timestamp chosen by the writer, for writes.
    pub ts: Option<Timestamp>,
    pub outcome: Option<Outcome>,
}

impl OperationRecord {
    fn end(&self) -> u64 {
        self.t_e.map_or(u64::MAX, |t| t.0)
    }

    pub fn precedes(&self, other: &OperationRecord) -> bool {
        self.t_e.is_some_and(|e| e < other.t_b)
    }

    pub fn concurrent(&self, other: &OperationRecord) -> bool {
        !self.precedes(other) && !other.precedes(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub protocol: Protocol,
    pub timing: TimingParams,
    /// In invocation order.
    pub ops: Vec<OperationRecord>,
    pub crashed_clients: BTreeMap<ClientId, VirtualTime>,
}

impl History {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut ops: Vec<OperationRecord> = Vec::new();
        let mut index: BTreeMap<OpId, usize> = BTreeMap::new();
        let mut crashed_clients = BTreeMap::new();
        for r in &trace.records {
            match (&r.body, r.sender) {
                (Body::OpInvoke { op, op_kind, value, ts }, Some(ProcessId::Client(c))) => {
                    index.insert(*op, ops.len());
                    ops.push(OperationRecord {
                        op: *op,
                        op_kind: *op_kind,
                        invoker: c,
                        t_b: r.tick,
                        t_e: None,
                        value: *value,
                        ts: *ts,
                        outcome: None,
                    });
                }
                (Body::OpReturn { op, outcome, .. }, _) => {
                    if let Some(&i) = index.get(op) {
                        ops[i].t_e = Some(r.tick);
                        ops[i].outcome = Some(*outcome);
                    }
                }
                (Body::Crash {}, Some(ProcessId::Client(c))) => {
                    crashed_clients.insert(c, r.tick);
                }
                _ => {}
            }
        }
        Self { protocol: trace.header.protocol, timing: trace.header.timing, ops, crashed_clients }
    }

    pub fn writes(&self) -> impl Iterator<Item = &OperationRecord> {
        self.ops.iter().filter(|o| o.op_kind == OpKind::Write)
    }

    pub fn reads(&self) -> impl Iterator<Item = &OperationRecord> {
        self.ops.iter().filter(|o| o.op_kind == OpKind::Read)
    }

    pub fn get(&self, op: OpId) -> Option<&OperationRecord> {
        self.ops.iter().find(|o| o.op == op)
    }

    fn crashed(&self, c: ClientId) -> bool {
        self.crashed_clients.contains_key(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum TerminationIssue {
    Unfinished,
    Duration { ticks: u64, allowed: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationViolation {
    pub op: OpId,
    #[serde(flatten)]
    pub issue: TerminationIssue,
}

/// Durations a read may take under `protocol`.
pub fn read_durations(protocol: Protocol, timing: TimingParams) -> Vec<u64> {
    let d = timing.delta;
    let mut v = vec![0, 2 * d, 3 * d];
    if protocol == Protocol::Pcv {
        v.push(3 * d + 2 * timing.delta_prime);
    }
    v
}

pub fn check_termination(history: &History, timing: TimingParams) -> Vec<TerminationViolation> {
    let reads = read_durations(history.protocol, timing);
    let mut out = Vec::new();
    for o in &history.ops {
        let Some(t_e) = o.t_e else {
            if !history.crashed(o.invoker) {
                out.push(TerminationViolation { op: o.op, issue: TerminationIssue::Unfinished });
            }
            continue;
        };
        let ticks = t_e.since(o.t_b);
        let allowed = match o.op_kind {
            OpKind::Write => vec![3 * timing.delta],
            OpKind::Read => reads.clone(),
        };
        if !allowed.contains(&ticks) {
            out.push(TerminationViolation { op: o.op, issue: TerminationIssue::Duration { ticks, allowed } });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityViolation {
    pub op: OpId,
    pub returned: ReadOutcome,
    /// `None` stands for the initial value ⊥.
    pub admissible: Vec<Option<Value>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub reads_checked: u64,
    pub aborts: Vec<OpId>,
    pub violations: Vec<ValidityViolation>,
}

/// Values a read may return: the last write preceding it (the initial ⊥ if
/// none) plus every write concurrent with it.
pub fn admissible_values(history: &History, read: &OperationRecord) -> Vec<Option<Value>> {
    let mut set = BTreeSet::new();
    let last = history
        .writes()
        .filter(|w| w.precedes(read))
        .max_by_key(|w| (w.end(), w.t_b));
    set.insert(last.and_then(|w| w.value));
    for w in history.writes().filter(|w| w.concurrent(read)) {
        set.insert(w.value);
    }
    set.into_iter().collect()
}

pub fn check_validity(history: &History) -> ValidityReport {
    let mut report = ValidityReport::default();
    for r in history.reads() {
        let Some(Outcome::Read(returned)) = r.outcome else { continue };
        let got = match returned {
            ReadOutcome::Abort => {
                report.aborts.push(r.op);
                continue;
            }
            ReadOutcome::Bottom => None,
            ReadOutcome::Value(v) => Some(v),
        };
        report.reads_checked += 1;
        let admissible = admissible_values(history, r);
        if !admissible.contains(&got) {
            report.violations.push(ValidityViolation { op: r.op, returned, admissible });
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub tick: VirtualTime,
    pub client: ClientId,
    pub server: ServerId,
    pub rule: DetectRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<OpId>,
}

/// Deviations the detection procedure is required to catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    /// A reply or acknowledgement that never arrived.
    Omission,
    /// An acknowledgement whose timestamp or fingerprint is not the writer's.
    AckMismatch,
    /// A reply whose current timestamp is at least 2 away from the reader's
    /// `last_ts` when it arrived.
    TimestampGap,
    /// A wrong value observed by the last writer while reading.
    WrongValue,
    /// A reply at the end of a write not carrying the written pair.
    WriterMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissedDetection {
    pub op: OpId,
    pub client: ClientId,
    pub server: ServerId,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftStats {
    /// Replies shifted by |Δ| ≥ 2 that reached a detection run.
    pub observed: u64,
    /// How many of those led to detection of the sender in the same operation.
    pub detected: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub expected: BTreeMap<Coverage, u64>,
    pub detected: BTreeMap<Coverage, u64>,
    pub missed: Vec<MissedDetection>,
    pub raw_shift: ShiftStats,
}

impl CompletenessReport {
    pub fn merge(&mut self, other: &CompletenessReport) {
        for (k, v) in &other.expected {
            *self.expected.entry(*k).or_default() += v;
        }
        for (k, v) in &other.detected {
            *self.detected.entry(*k).or_default() += v;
        }
        self.missed.extend(other.missed.iter().cloned());
        self.raw_shift.observed += other.raw_shift.observed;
        self.raw_shift.detected += other.raw_shift.detected;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub events: u64,
    /// Honest servers, or crash-prone servers before their crash.
    pub false_positives: Vec<DetectionEvent>,
    /// Malicious servers detected with no logged deviation beforehand.
    pub unattributed: Vec<DetectionEvent>,
    pub crash_detections: u64,
    pub attributed: u64,
    pub completeness: CompletenessReport,
}

struct Delivery<'a> {
    tick: VirtualTime,
    sender: ServerId,
    msg: &'a Message,
    last_ts: Option<Timestamp>,
}

/// Per-client view of the trace used by the completeness oracle.
#[derive(Default)]
struct ClientView<'a> {
    deliveries: Vec<Delivery<'a>>,
    detections: BTreeSet<(OpId, ServerId)>,
    probes: BTreeMap<OpId, VirtualTime>,
    write_fp: BTreeMap<OpId, Option<Digest>>,
    current: Option<OpId>,
    runs: Vec<(VirtualTime, OpId, &'a DetectionRun)>,
}

fn deviations(trace: &Trace) -> BTreeMap<ServerId, Vec<(VirtualTime, Option<&Message>, &AttackNote)>> {
    let mut out: BTreeMap<ServerId, Vec<_>> = BTreeMap::new();
    for r in &trace.records {
        let Some(ProcessId::Server(s)) = r.sender else { continue };
        match &r.body {
            Body::Send { msg, attack: Some(a), .. } => out.entry(s).or_default().push((r.tick, Some(msg), a)),
            Body::Omit { attack, .. } => out.entry(s).or_default().push((r.tick, None, attack)),
            _ => {}
        }
    }
    out
}

pub fn check_detection_accuracy(trace: &Trace, profiles: &[ServerProfile]) -> DetectionReport {
    let devs = deviations(trace);
    let mut report = DetectionReport::default();
    for r in &trace.records {
        let (Body::Detect { server, rule, op }, Some(ProcessId::Client(c))) = (&r.body, r.sender) else {
            continue;
        };
        report.events += 1;
        let ev = DetectionEvent { tick: r.tick, client: c, server: *server, rule: *rule, op: *op };
        match profiles.get(server.index()) {
            None | Some(ServerProfile::Honest) => report.false_positives.push(ev),
            Some(ServerProfile::Crash { at }) => {
                if r.tick >= *at {
                    report.crash_detections += 1;
                } else {
                    report.false_positives.push(ev);
                }
            }
            Some(_) => {
                let logged = devs.get(server).is_some_and(|d| d.iter().any(|(t, _, _)| *t <= r.tick));
                if logged {
                    report.attributed += 1;
                } else {
                    report.unattributed.push(ev);
                }
            }
        }
    }
    report.completeness = completeness(trace, &devs);
    report
}

/// Independent recomputation of which servers every executed detection run
/// must have caught, from the raw deliveries in the trace.
fn completeness(
    trace: &Trace,
    devs: &BTreeMap<ServerId, Vec<(VirtualTime, Option<&Message>, &AttackNote)>>,
) -> CompletenessReport {
    let mut views: BTreeMap<ClientId, ClientView> = BTreeMap::new();
    let mut starts: BTreeMap<OpId, VirtualTime> = BTreeMap::new();
    for r in &trace.records {
        let client = match (r.sender, r.recipient) {
            (_, Some(ProcessId::Client(c))) => c,
            (Some(ProcessId::Client(c)), _) => c,
            _ => continue,
        };
        let view = views.entry(client).or_default();
        match &r.body {
            Body::Deliver { msg, last_ts } => {
                if let (Some(ProcessId::Server(s)), Some(ProcessId::Client(_))) = (r.sender, r.recipient) {
                    view.deliveries.push(Delivery { tick: r.tick, sender: s, msg, last_ts: *last_ts });
                }
            }
            Body::Detect { server, op: Some(op), .. } => {
                view.detections.insert((*op, *server));
            }
            Body::Timer { op, step: Step::WriteProbe } => {
                view.probes.insert(*op, r.tick);
            }
            Body::OpInvoke { op, .. } => {
                starts.insert(*op, r.tick);
                view.current = Some(*op);
            }
            Body::Send { msg: Message::Write { fingerprint, .. }, .. } => {
                if let Some(op) = view.current {
                    view.write_fp.insert(op, *fingerprint);
                }
            }
            Body::DetectionRun { op, run } => view.runs.push((r.tick, *op, run)),
            _ => {}
        }
    }

    let mut report = CompletenessReport::default();
    for (&client, view) in &views {
        for &(tick, op, run) in &view.runs {
            let Some(&t_b) = starts.get(&op) else { continue };
            let from = match (run.set_type, run.writing) {
                (SetType::Replies, true) => view.probes.get(&op).copied().unwrap_or(t_b),
                _ => t_b,
            };
            let window = view.deliveries.iter().filter(|d| d.tick > from && d.tick <= tick);
            let mut expected: BTreeSet<(ServerId, Coverage)> = BTreeSet::new();
            match run.set_type {
                SetType::Ack => ack_expectations(run, view.write_fp.get(&op).copied().flatten(), window, &mut expected),
                SetType::Replies if run.writing => writer_expectations(run, window, &mut expected),
                SetType::Replies => {
                    let window: Vec<&Delivery> = window.collect();
                    reader_expectations(run, &window, &mut expected);
                    for d in &window {
                        let Message::Reply(reply) = d.msg else { continue };
                        if is_large_shift(devs, d.sender, reply) {
                            report.raw_shift.observed += 1;
                            if view.detections.contains(&(op, d.sender)) {
                                report.raw_shift.detected += 1;
                            }
                        }
                    }
                }
                SetType::Witness | SetType::Fingerprint => {}
            }
            for (server, coverage) in expected {
                *report.expected.entry(coverage).or_default() += 1;
                if view.detections.contains(&(op, server)) {
                    *report.detected.entry(coverage).or_default() += 1;
                } else {
                    report.missed.push(MissedDetection { op, client, server, coverage });
                }
            }
        }
    }
    report
}

fn is_large_shift(
    devs: &BTreeMap<ServerId, Vec<(VirtualTime, Option<&Message>, &AttackNote)>>,
    server: ServerId,
    reply: &Reply,
) -> bool {
    devs.get(&server).is_some_and(|d| {
        d.iter().any(|(_, m, note)| {
            matches!(m, Some(Message::Reply(r)) if r == reply)
                && matches!(note.action, CorruptionAction::WrongTimestamp | CorruptionAction::WrongBoth)
                && note.delta.is_some_and(|x| x.abs() >= 2)
        })
    })
}

fn ack_expectations<'a>(
    run: &DetectionRun,
    fp: Option<Digest>,
    window: impl Iterator<Item = &'a Delivery<'a>>,
    expected: &mut BTreeSet<(ServerId, Coverage)>,
) {
    let mut answered = BTreeSet::new();
    for d in window {
        let Message::WriteAck { ts, j, fingerprint } = d.msg else { continue };
        if *ts < run.my_last_ts {
            continue;
        }
        answered.insert(*j);
        if *ts != run.my_last_ts || (fp.is_some() && *fingerprint != fp) {
            expected.insert((*j, Coverage::AckMismatch));
        }
    }
    for s in &run.honest_before {
        if !answered.contains(s) {
            expected.insert((*s, Coverage::Omission));
        }
    }
    expected.retain(|(s, _)| run.honest_before.contains(s));
}

fn writer_expectations<'a>(
    run: &DetectionRun,
    window: impl Iterator<Item = &'a Delivery<'a>>,
    expected: &mut BTreeSet<(ServerId, Coverage)>,
) {
    let mut answered = BTreeSet::new();
    let mut confirmed = BTreeSet::new();
    let written: BTreeSet<Value> = run.my_last_val.into_iter().collect();
    for d in window {
        let Message::Reply(r) = d.msg else { continue };
        answered.insert(r.j);
        if r.ts == run.my_last_ts && r.val == written
            || r.ots == run.my_last_ts && r.oval.as_ref() == Some(&written)
        {
            confirmed.insert(r.j);
        }
    }
    for s in &run.honest_before {
        if !answered.contains(s) {
            expected.insert((*s, Coverage::Omission));
        } else if !confirmed.contains(s) {
            expected.insert((*s, Coverage::WriterMismatch));
        }
    }
}

fn reader_expectations(run: &DetectionRun, window: &[&Delivery], expected: &mut BTreeSet<(ServerId, Coverage)>) {
    let mut answered = BTreeSet::new();
    let writer_check = run.my_last_val.filter(|_| run.my_last_ts == run.last_ts);
    for d in window {
        let Message::Reply(r) = d.msg else { continue };
        answered.insert(r.j);
        if let Some(lts) = d.last_ts {
            if r.ts.0.abs_diff(lts.0) >= 2 {
                expected.insert((r.j, Coverage::TimestampGap));
            }
        }
        if let Some(mv) = writer_check {
            let old = r.oval.clone().unwrap_or_default();
            let wrong = (r.ts == run.my_last_ts && !r.val.contains(&mv))
                || (r.ots == run.my_last_ts && !old.contains(&mv));
            if wrong {
                expected.insert((r.j, Coverage::WrongValue));
            }
        }
    }
    for s in &run.honest_before {
        if !answered.contains(s) {
            expected.insert((*s, Coverage::Omission));
        }
    }
    expected.retain(|(s, _)| run.honest_before.contains(s));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    MonotonicTimestamps,
    IncrementByOne,
    LastTsAgreement,
    EffectiveWrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaViolation {
    pub lemma: Lemma,
    pub op: OpId,
    pub evidence: String,
}

pub fn check_timestamp_lemmas(trace: &Trace, history: &History) -> Vec<LemmaViolation> {
    let mut out = Vec::new();
    let writes: Vec<&OperationRecord> = history.writes().filter(|w| w.ts.is_some()).collect();
    for pair in writes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (ta, tb) = (a.ts.unwrap_or_default(), b.ts.unwrap_or_default());
        if a.precedes(b) && ta >= tb {
            out.push(LemmaViolation {
                lemma: Lemma::MonotonicTimestamps,
                op: b.op,
                evidence: format!("write {} used ts {} after write {} used ts {}", b.op, tb.0, a.op, ta.0),
            });
        }
        if a.precedes(b) && tb.0 != ta.0 + 1 {
            out.push(LemmaViolation {
                lemma: Lemma::IncrementByOne,
                op: b.op,
                evidence: format!("ts went from {} to {}", ta.0, tb.0),
            });
        }
    }

    for r in &trace.records {
        let Body::Snapshot { op, boundary: Boundary::Return, servers, clients } = &r.body else { continue };
        let Some(w) = history.get(*op).filter(|o| o.op_kind == OpKind::Write) else { continue };
        let (Some(ts), Some(v)) = (w.ts, w.value) else { continue };
        for c in clients.iter().filter(|c| c.alive) {
            if c.last_ts != ts {
                out.push(LemmaViolation {
                    lemma: Lemma::LastTsAgreement,
                    op: *op,
                    evidence: format!("{} has last_ts {} instead of {}", c.id, c.last_ts.0, ts.0),
                });
            }
        }
        for s in servers.iter().filter(|s| s.alive) {
            if !s.val.contains(&v) {
                out.push(LemmaViolation {
                    lemma: Lemma::EffectiveWrite,
                    op: *op,
                    evidence: format!("{} does not hold {v} at ts {}", s.id, s.ts.0),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// Protocol messages, one per scheduled envelope; DETECTED notices excluded.
    pub messages_total: u64,
    pub messages_by_kind: BTreeMap<MessageKind, u64>,
    pub detection_notices: u64,
    pub detection_runs: u64,
    pub fingerprint_ops: u64,
    pub coin_flips: u64,
    pub coin_heads: u64,
    /// Reads that went past both unanimity checks.
    pub fallbacks: u64,
    pub detections: u64,
    pub corrupted_messages: u64,
    pub omitted_messages: u64,
    pub aborts: u64,
}

impl CostReport {
    pub fn merge(&mut self, o: &CostReport) {
        self.messages_total += o.messages_total;
        for (k, v) in &o.messages_by_kind {
            *self.messages_by_kind.entry(*k).or_default() += v;
        }
        self.detection_notices += o.detection_notices;
        self.detection_runs += o.detection_runs;
        self.fingerprint_ops += o.fingerprint_ops;
        self.coin_flips += o.coin_flips;
        self.coin_heads += o.coin_heads;
        self.fallbacks += o.fallbacks;
        self.detections += o.detections;
        self.corrupted_messages += o.corrupted_messages;
        self.omitted_messages += o.omitted_messages;
        self.aborts += o.aborts;
    }
}

pub fn cost_report(trace: &Trace) -> CostReport {
    let mut c = CostReport::default();
    for b in trace.bodies() {
        match b {
            Body::Send { msg, fanout, attack, .. } => {
                let n = u64::from(*fanout);
                *c.messages_by_kind.entry(msg.kind()).or_default() += n;
                if msg.kind() == MessageKind::Detected {
                    c.detection_notices += n;
                } else {
                    c.messages_total += n;
                }
                if attack.is_some() {
                    c.corrupted_messages += 1;
                }
            }
            Body::Omit { .. } => c.omitted_messages += 1,
            Body::DetectionRun { run, .. } => {
                c.detection_runs += 1;
                if run.set_type == SetType::Replies && !run.writing {
                    c.fallbacks += 1;
                }
            }
            Body::FingerprintOps { count, .. } => c.fingerprint_ops += count,
            Body::Coin { heads, .. } => {
                c.coin_flips += 1;
                c.coin_heads += u64::from(*heads);
            }
            Body::Detect { .. } => c.detections += 1,
            Body::OpReturn { outcome: Outcome::Read(ReadOutcome::Abort), .. } => c.aborts += 1,
            _ => {}
        }
    }
    c
}

/// Payoff parameters of every rational server in `profiles`.
pub fn rational_payoffs(profiles: &[ServerProfile]) -> BTreeMap<ServerId, PayoffParams> {
    profiles
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match p {
            ServerProfile::Rational { payoffs, .. } => Some((ServerId::from_index(i), *payoffs)),
            _ => None,
        })
        .collect()
}

/// Realized utilities, one interaction per completed read and server in
/// `params`.
pub fn realized_payoffs(
    trace: &Trace,
    history: &History,
    params: &BTreeMap<ServerId, PayoffParams>,
) -> PayoffLedger {
    let devs = deviations(trace);
    let written: BTreeSet<Value> = history.writes().filter_map(|w| w.value).collect();
    let mut detected: BTreeSet<(OpId, ServerId)> = BTreeSet::new();
    for b in trace.bodies() {
        if let Body::Detect { server, op: Some(op), .. } = b {
            detected.insert((*op, *server));
        }
    }
    let mut ledger = PayoffLedger::default();
    for r in history.reads() {
        let (Some(t_e), Some(Outcome::Read(out))) = (r.t_e, r.outcome) else { continue };
        let spoiled = match out {
            ReadOutcome::Abort => true,
            ReadOutcome::Value(v) => !written.contains(&v),
            ReadOutcome::Bottom => false,
        };
        for (&s, p) in params {
            let attacked = devs.get(&s).is_some_and(|d| d.iter().any(|(t, _, _)| *t >= r.t_b && *t <= t_e));
            let event = if detected.contains(&(r.op, s)) {
                Interaction::Detected
            } else if attacked && spoiled {
                Interaction::Prevented
            } else {
                Interaction::Survived
            };
            ledger.credit(s, event, p);
        }
    }
    ledger
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub termination: Vec<TerminationViolation>,
    pub validity: ValidityReport,
    pub detection: DetectionReport,
    pub lemmas: Vec<LemmaViolation>,
    pub cost: CostReport,
    pub payoffs: PayoffLedger,
    /// Notes left by clients that believe no server is honest.
    pub assumption_notes: Vec<String>,
}

impl Verdict {
    pub fn termination_ok(&self) -> bool {
        self.termination.is_empty()
    }

    pub fn validity_ok(&self) -> bool {
        self.validity.violations.is_empty()
    }

    pub fn soundness_ok(&self) -> bool {
        self.detection.false_positives.is_empty() && self.detection.unattributed.is_empty()
    }

    pub fn lemmas_ok(&self) -> bool {
        self.lemmas.is_empty()
    }

    /// Missed detections are reported but do not fail a run.
    pub fn passed(&self) -> bool {
        self.termination_ok() && self.validity_ok() && self.soundness_ok() && self.lemmas_ok()
    }
}

/// Runs every check on one trace.
pub fn check_all(trace: &Trace, profiles: &[ServerProfile]) -> Verdict {
    let history = History::from_trace(trace);
    let assumption_notes = trace
        .bodies()
        .filter_map(|b| match b {
            Body::Note { text } if text.contains("no server is honest") => Some(text.clone()),
            _ => None,
        })
        .collect();
    Verdict {
        termination: check_termination(&history, trace.header.timing),
        validity: check_validity(&history),
        detection: check_detection_accuracy(trace, profiles),
        lemmas: check_timestamp_lemmas(trace, &history),
        cost: cost_report(trace),
        payoffs: realized_payoffs(trace, &history, &rational_payoffs(profiles)),
        assumption_notes,
    }
}
