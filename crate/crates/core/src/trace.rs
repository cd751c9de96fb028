//! Line-delimited run traces.
//!
//! The first line is a header carrying the schema tag and run parameters;
//! every following line is one record with the fixed field order
//! `tick, kind, sender, recipient, summary, data`.

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackNote, Request, StrategyChoice};
use crate::error::{Error, Result};
use crate::register::{
    DetectRule, DetectionRun, Message, MessageKind, OpKind, Outcome, Step, Timestamp, Value,
    ValueSet,
};
use crate::simnet::{Channel, ClientId, DelayMode, ProcessId, ServerId, TimingParams, VirtualTime};
use crate::variants::Protocol;

pub const TRACE_SCHEMA: &str = "ratreg-trace/1";

/// Index of an operation in the run's workload.
pub type OpId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerSnapshot {
    pub id: ServerId,
    pub alive: bool,
    pub ts: Timestamp,
    pub val: ValueSet,
    pub old_ts: Timestamp,
    pub old_val: Option<ValueSet>,
    pub reading: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSnapshot {
    pub id: ClientId,
    pub alive: bool,
    pub last_ts: Timestamp,
    pub my_last_ts: Timestamp,
    pub honest: Vec<ServerId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Invoke,
    Return,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Body {
    Send {
        msg: Message,
        channel: Channel,
        /// Number of envelopes actually scheduled.
        fanout: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attack: Option<AttackNote>,
    },
    /// A message a malicious server chose not to send.
    Omit {
        msg_kind: MessageKind,
        attack: AttackNote,
    },
    Deliver {
        msg: Message,
        /// Receiver's `last_ts` when a reply reaches a client.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        last_ts: Option<Timestamp>,
    },
    Drop {
        msg_kind: MessageKind,
    },
    Timer {
        op: OpId,
        step: Step,
    },
    Detect {
        server: ServerId,
        rule: DetectRule,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        op: Option<OpId>,
    },
    OpInvoke {
        op: OpId,
        op_kind: OpKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ts: Option<Timestamp>,
    },
    OpReturn {
        op: OpId,
        op_kind: OpKind,
        outcome: Outcome,
    },
    Crash {},
    Coin {
        op: OpId,
        heads: bool,
    },
    Snapshot {
        op: OpId,
        boundary: Boundary,
        servers: Vec<ServerSnapshot>,
        clients: Vec<ClientSnapshot>,
    },
    Strategy {
        request: Request,
        choice: StrategyChoice,
    },
    DetectionRun {
        op: OpId,
        run: DetectionRun,
    },
    FingerprintOps {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        op: Option<OpId>,
        count: u64,
    },
    Note {
        text: String,
    },
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Send { .. } => "send",
            Body::Omit { .. } => "omit",
            Body::Deliver { .. } => "deliver",
            Body::Drop { .. } => "drop",
            Body::Timer { .. } => "timer",
            Body::Detect { .. } => "detect",
            Body::OpInvoke { .. } => "op_invoke",
            Body::OpReturn { .. } => "op_return",
            Body::Crash {} => "crash",
            Body::Coin { .. } => "coin",
            Body::Snapshot { .. } => "snapshot",
            Body::Strategy { .. } => "strategy",
            Body::DetectionRun { .. } => "detection_run",
            Body::FingerprintOps { .. } => "fingerprint_ops",
            Body::Note { .. } => "note",
        }
    }

    fn summary(&self) -> String {
        match self {
            Body::Send { msg, attack, .. } => match attack {
                Some(a) => format!("{} [{}]", msg.summary(), a.action),
                None => msg.summary(),
            },
            Body::Deliver { msg, .. } => msg.summary(),
            Body::Omit { msg_kind, .. } => format!("omit {msg_kind}"),
            Body::Drop { msg_kind } => format!("drop {msg_kind}"),
            Body::Timer { op, step } => format!("op {op} {step:?}"),
            Body::Detect { server, rule, .. } => format!("detect {server} ({rule:?})"),
            Body::OpInvoke { op, op_kind, value, .. } => match value {
                Some(v) => format!("op {op} {op_kind}({v})"),
                None => format!("op {op} {op_kind}()"),
            },
            Body::OpReturn { op, outcome, .. } => match outcome {
                Outcome::Written => format!("op {op} ok"),
                Outcome::Read(r) => format!("op {op} returns {r}"),
            },
            Body::Crash {} => "crash".into(),
            Body::Coin { op, heads } => format!("op {op} coin {}", u8::from(*heads)),
            Body::Snapshot { op, boundary, .. } => format!("op {op} {boundary:?} snapshot"),
            Body::Strategy { request, choice } => format!("{request:?}: {}", choice.strategy),
            Body::DetectionRun { op, run } => format!("op {op} detection {:?}", run.set_type),
            Body::FingerprintOps { count, .. } => format!("{count} fingerprint ops"),
            Body::Note { text } => text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub tick: VirtualTime,
    pub sender: Option<ProcessId>,
    pub recipient: Option<ProcessId>,
    pub body: Body,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    tick: VirtualTime,
    kind: String,
    sender: Option<ProcessId>,
    recipient: Option<ProcessId>,
    summary: String,
    data: serde_json::Value,
}

impl TraceRecord {
    pub fn new(
        tick: VirtualTime,
        sender: Option<ProcessId>,
        recipient: Option<ProcessId>,
        body: Body,
    ) -> Self {
        Self { tick, sender, recipient, body }
    }

    pub fn to_json(&self) -> String {
        let mut tagged = serde_json::to_value(&self.body).expect("trace bodies serialize");
        let data = tagged.get_mut("data").map(serde_json::Value::take).unwrap_or_default();
        let wire = WireRecord {
            tick: self.tick,
            kind: self.body.kind().to_string(),
            sender: self.sender,
            recipient: self.recipient,
            summary: self.body.summary(),
            data,
        };
        serde_json::to_string(&wire).expect("trace records serialize")
    }

    pub fn from_json(line: &str) -> std::result::Result<Self, String> {
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let body: Body =
            serde_json::from_value(serde_json::json!({ "kind": wire.kind, "data": wire.data }))
                .map_err(|e| e.to_string())?;
        Ok(Self { tick: wire.tick, sender: wire.sender, recipient: wire.recipient, body })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub n_servers: usize,
    pub n_clients: usize,
    pub timing: TimingParams,
    pub delay_mode: DelayMode,
    pub coin_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("trace header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_json());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) =
            lines.next().ok_or(Error::TraceParse { line: 1, reason: "empty trace".into() })?;
        let header: TraceHeader = serde_json::from_str(first)
            .map_err(|e| Error::TraceParse { line: 1, reason: e.to_string() })?;
        if header.schema != TRACE_SCHEMA {
            return Err(Error::TraceParse {
                line: 1,
                reason: format!("unsupported schema {:?}", header.schema),
            });
        }
        let records = lines
            .map(|(i, l)| {
                TraceRecord::from_json(l).map_err(|reason| Error::TraceParse { line: i + 1, reason })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, records })
    }

    pub fn bodies(&self) -> impl Iterator<Item = &Body> {
        self.records.iter().map(|r| &r.body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::register::ReadOutcome;

    fn header() -> TraceHeader {
        TraceHeader {
            schema: TRACE_SCHEMA.into(),
            protocol: Protocol::P,
            seed: 3,
            n_servers: 2,
            n_clients: 1,
            timing: TimingParams::new(10, 5).unwrap(),
            delay_mode: DelayMode::Uniform,
            coin_p: 0.5,
        }
    }

    #[test]
    fn records_round_trip() {
        let records = vec![
            TraceRecord::new(
                VirtualTime(0),
                Some(ProcessId::Client(ClientId(0))),
                Some(ProcessId::Servers),
                Body::Send { msg: Message::Read, channel: Channel::Broadcast, fanout: 2, attack: None },
            ),
            TraceRecord::new(VirtualTime(4), Some(ProcessId::Server(ServerId(1))), None, Body::Crash {}),
            TraceRecord::new(
                VirtualTime(30),
                Some(ProcessId::Client(ClientId(0))),
                None,
                Body::OpReturn {
                    op: 1,
                    op_kind: OpKind::Read,
                    outcome: Outcome::Read(ReadOutcome::Value(Value(4))),
                },
            ),
        ];
        let t = Trace { header: header(), records };
        let text = t.to_jsonl();
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"tick":0,"kind":"send","sender":"c0""#));
        assert_eq!(Trace::from_jsonl(&text).unwrap(), t);
    }

    #[test]
    fn rejects_unknown_schema() {
        let mut h = header();
        h.schema = "other/9".into();
        let text = serde_json::to_string(&h).unwrap();
        assert!(Trace::from_jsonl(&text).is_err());
        assert!(Trace::from_jsonl("").is_err());
    }

    #[test]
    fn reports_bad_line_number() {
        let text = format!("{}\n{{\"tick\":1}}\n", serde_json::to_string(&header()).unwrap());
        match Trace::from_jsonl(&text) {
            Err(Error::TraceParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
