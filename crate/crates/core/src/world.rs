//! A complete simulated system: servers behind their controllers, clients,
//! the network, and the trace recorder.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adversary::{request_of, Adversary, Decision, ServerProfile};
use crate::error::{Error, Result};
use crate::register::{ClientState, Effect, Message, OpKind, ServerState, Step, Value};
use crate::simnet::{
    run_until, Channel, ClientId, DelayMode, Event, Handler, Network, ProcessId, ServerId,
    TimingParams, VirtualTime,
};
use crate::trace::{
    Body, Boundary, ClientSnapshot, OpId, ServerSnapshot, Trace, TraceHeader, TraceRecord,
    TRACE_SCHEMA,
};
use crate::variants::{Coin, FingerprintKind, Fingerprinter, Protocol};

/// One operation of a workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedOp {
    pub client: ClientId,
    #[serde(rename = "op")]
    pub kind: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    pub at: VirtualTime,
}

impl PlannedOp {
    pub fn write(client: u32, value: u64, at: u64) -> Self {
        Self { client: ClientId(client), kind: OpKind::Write, value: Some(Value(value)), at: VirtualTime(at) }
    }

    pub fn read(client: u32, at: u64) -> Self {
        Self { client: ClientId(client), kind: OpKind::Read, value: None, at: VirtualTime(at) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub protocol: Protocol,
    pub timing: TimingParams,
    pub n_clients: usize,
    /// One profile per server, in id order.
    pub profiles: Vec<ServerProfile>,
    pub coin_p: f64,
    pub seed: u64,
    pub delay_mode: DelayMode,
    pub fingerprint: FingerprintKind,
    pub client_crashes: Vec<(ClientId, VirtualTime)>,
    pub snapshots: bool,
}

impl WorldConfig {
    pub fn honest(protocol: Protocol, n_servers: usize, n_clients: usize, timing: TimingParams) -> Self {
        Self {
            protocol,
            timing,
            n_clients,
            profiles: vec![ServerProfile::Honest; n_servers],
            coin_p: Coin::DEFAULT_P,
            seed: 0,
            delay_mode: DelayMode::Uniform,
            fingerprint: FingerprintKind::default(),
            client_crashes: Vec::new(),
            snapshots: true,
        }
    }

    pub fn n_servers(&self) -> usize {
        self.profiles.len()
    }

    /// Latest tick at which anything in a run can still happen.
    pub fn horizon(&self, plan: &[PlannedOp]) -> VirtualTime {
        let last = plan.iter().map(|p| p.at.0).max().unwrap_or(0);
        let t = self.timing;
        VirtualTime(last + 4 * t.delta + 3 * t.delta_prime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Invoke(usize),
    Step { op: OpId, step: Step },
}

/// Derives an independent seed for one component of a run.
pub fn sub_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut x = seed ^ domain.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 32;
    x = x.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    x ^ (x >> 32)
}

pub struct World {
    cfg: WorldConfig,
    plan: Vec<PlannedOp>,
    servers: Vec<ServerState>,
    adversaries: Vec<Adversary>,
    clients: Vec<ClientState>,
    current: Vec<Option<OpId>>,
    alive_clients: Vec<bool>,
    alive_servers: Vec<bool>,
    records: Vec<TraceRecord>,
}

impl World {
    pub fn new(cfg: WorldConfig, plan: Vec<PlannedOp>) -> Result<Self> {
        cfg.timing.validate()?;
        if !(0.0..=1.0).contains(&cfg.coin_p) {
            return Err(Error::InvalidCoin(cfg.coin_p));
        }
        let n = cfg.n_servers();
        let fp: Arc<dyn Fingerprinter> = cfg.fingerprint.build();
        let servers = (0..n).map(|i| ServerState::new(ServerId::from_index(i))).collect();
        let adversaries = cfg
            .profiles
            .iter()
            .enumerate()
            .map(|(i, p)| Adversary::new(ServerId::from_index(i), p.clone(), sub_seed(cfg.seed, 1, i as u64)))
            .collect();
        let clients = (0..cfg.n_clients)
            .map(|c| {
                let coin = Coin::new(cfg.coin_p, sub_seed(cfg.seed, 2, c as u64))?;
                Ok(ClientState::new(ClientId(c as u32), n, cfg.protocol, cfg.timing, coin, fp.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            current: vec![None; cfg.n_clients],
            alive_clients: vec![true; cfg.n_clients],
            alive_servers: vec![true; n],
            plan,
            servers,
            adversaries,
            clients,
            records: Vec::new(),
            cfg,
        })
    }

    /// Runs the workload to completion and returns the trace.
    pub fn run(mut self) -> Result<Trace> {
        let mut net: Network<Message, Tag> = Network::new(
            self.cfg.timing,
            self.cfg.n_servers(),
            self.cfg.n_clients,
            self.cfg.delay_mode,
            sub_seed(self.cfg.seed, 0, 0),
        )?;
        for (i, p) in self.cfg.profiles.iter().enumerate() {
            if let Some(at) = p.crash_at() {
                net.schedule_crash(ProcessId::Server(ServerId::from_index(i)), at)?;
            }
        }
        for &(c, at) in &self.cfg.client_crashes {
            net.schedule_crash(ProcessId::Client(c), at)?;
        }
        for (i, op) in self.plan.iter().enumerate() {
            if op.client.0 as usize >= self.cfg.n_clients {
                return Err(Error::Scenario(format!("operation {i} names unknown client {}", op.client)));
            }
            net.set_timer(ProcessId::Client(op.client), op.at, Tag::Invoke(i))?;
        }
        let horizon = self.cfg.horizon(&self.plan);
        run_until(&mut net, &mut self, horizon)?;
        Ok(Trace {
            header: TraceHeader {
                schema: TRACE_SCHEMA.into(),
                protocol: self.cfg.protocol,
                seed: self.cfg.seed,
                n_servers: self.cfg.n_servers(),
                n_clients: self.cfg.n_clients,
                timing: self.cfg.timing,
                delay_mode: self.cfg.delay_mode,
                coin_p: self.cfg.coin_p,
            },
            records: self.records,
        })
    }

    fn record(&mut self, tick: VirtualTime, sender: Option<ProcessId>, recipient: Option<ProcessId>, body: Body) {
        self.records.push(TraceRecord::new(tick, sender, recipient, body));
    }

    fn snapshot(&mut self, now: VirtualTime, op: OpId, boundary: Boundary) {
        if !self.cfg.snapshots {
            return;
        }
        let servers = self
            .servers
            .iter()
            .zip(&self.alive_servers)
            .map(|(s, alive)| ServerSnapshot {
                id: s.id,
                alive: *alive,
                ts: s.ts,
                val: s.val.clone(),
                old_ts: s.old_ts,
                old_val: s.old_val.clone(),
                reading: s.reading,
            })
            .collect();
        let clients = self
            .clients
            .iter()
            .zip(&self.alive_clients)
            .map(|(c, alive)| ClientSnapshot {
                id: c.id,
                alive: *alive,
                last_ts: c.last_ts,
                my_last_ts: c.my_last_ts,
                honest: c.honest.iter().copied().collect(),
            })
            .collect();
        self.record(now, None, None, Body::Snapshot { op, boundary, servers, clients });
    }

    fn server_send(
        &mut self,
        net: &mut Network<Message, Tag>,
        s: ServerId,
        honest_msg: Message,
        decision: &Decision,
    ) -> Result<()> {
        let now = net.now();
        let me = ProcessId::Server(s);
        let adv = &mut self.adversaries[s.index()];
        let (msg, attack) = match decision.corruption {
            None => (honest_msg, None),
            Some((action, delta)) => {
                let corrupted = match &honest_msg {
                    Message::Reply(r) => adv.corrupt_reply(action, delta, r).map(|(r, n)| (Message::Reply(r), n)),
                    Message::WriteAck { .. } => adv.corrupt_ack(action, delta, &honest_msg, self.cfg.protocol),
                    _ => None,
                };
                match corrupted {
                    Some((m, note)) => (m, Some(note)),
                    None => {
                        let true_ts = match &honest_msg {
                            Message::Reply(r) => r.ts,
                            Message::WriteAck { ts, .. } => *ts,
                            _ => Default::default(),
                        };
                        let note = crate::adversary::AttackNote { action, delta, true_ts };
                        self.record(now, Some(me), Some(ProcessId::Label), Body::Omit { msg_kind: honest_msg.kind(), attack: note });
                        return Ok(());
                    }
                }
            }
        };
        let envs = net.send_to_label(me, msg.clone())?;
        self.record(
            now,
            Some(me),
            Some(ProcessId::Label),
            Body::Send { msg, channel: Channel::Label, fanout: envs.len() as u32, attack },
        );
        Ok(())
    }

    fn on_server_deliver(&mut self, net: &mut Network<Message, Tag>, s: ServerId, msg: Message) -> Result<()> {
        let now = net.now();
        let decision = match request_of(msg.kind()) {
            Some(req) => self.adversaries[s.index()].decide(req, now)?,
            None => Decision::HONEST,
        };
        if let Some(choice) = decision.choice {
            let request = request_of(msg.kind()).expect("decisions follow requests");
            self.record(now, Some(ProcessId::Server(s)), None, Body::Strategy { request, choice });
        }
        let state = &mut self.servers[s.index()];
        match msg {
            Message::Read => {
                let reply = state.handle_read();
                self.server_send(net, s, Message::Reply(reply), &decision)?;
            }
            Message::ReadAck => {
                if !state.handle_read_ack() {
                    self.record(
                        now,
                        Some(ProcessId::Server(s)),
                        None,
                        Body::Note { text: format!("{s} received READ_ACK with no read in progress") },
                    );
                }
            }
            Message::Write { val, ts, fingerprint } => {
                let (ack, forward) = state.handle_write(val, ts, fingerprint);
                self.server_send(net, s, ack, &decision)?;
                if let Some(r) = forward {
                    self.server_send(net, s, Message::Reply(r), &decision)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn on_client_deliver(&mut self, net: &mut Network<Message, Tag>, c: ClientId, msg: &Message) -> Result<()> {
        let client = &mut self.clients[c.0 as usize];
        let effects = match msg {
            Message::Reply(r) => {
                client.on_reply(r);
                Vec::new()
            }
            Message::WriteAck { ts, j, fingerprint } => client.on_write_ack(*ts, *j, *fingerprint),
            Message::Detected { server } => client.on_detected(*server),
            Message::CheckTs { ts } => client.on_check_ts(ts),
            Message::CheckReply { ts, val } => {
                client.on_check_reply(*ts, *val);
                Vec::new()
            }
            _ => Vec::new(),
        };
        self.apply(net, c, effects)
    }

    fn invoke(&mut self, net: &mut Network<Message, Tag>, i: usize) -> Result<()> {
        let now = net.now();
        let op = self.plan[i];
        let c = op.client;
        let id = i as OpId;
        self.snapshot(now, id, Boundary::Invoke);
        let client = &mut self.clients[c.0 as usize];
        let effects = match (op.kind, op.value) {
            (OpKind::Read, _) => client.invoke_read(now)?,
            (OpKind::Write, Some(v)) => client.invoke_write(v, now)?,
            (OpKind::Write, None) => {
                return Err(Error::Scenario(format!("write operation {i} has no value")));
            }
        };
        let ts = (op.kind == OpKind::Write).then_some(client.my_last_ts);
        self.current[c.0 as usize] = Some(id);
        self.record(
            now,
            Some(ProcessId::Client(c)),
            None,
            Body::OpInvoke { op: id, op_kind: op.kind, value: op.value, ts },
        );
        self.apply(net, c, effects)
    }

    fn apply(&mut self, net: &mut Network<Message, Tag>, c: ClientId, effects: Vec<Effect>) -> Result<()> {
        let now = net.now();
        let me = ProcessId::Client(c);
        let op = self.current[c.0 as usize];
        for e in effects {
            match e {
                Effect::Broadcast(m) => {
                    let envs = net.broadcast_to_servers(me, m.clone())?;
                    self.record(
                        now,
                        Some(me),
                        Some(ProcessId::Servers),
                        Body::Send { msg: m, channel: Channel::Broadcast, fanout: envs.len() as u32, attack: None },
                    );
                }
                Effect::SendLabel(m) => self.client_label_send(net, c, m)?,
                Effect::Timer { after, step } => {
                    let op = op.ok_or_else(|| Error::Scenario(format!("{c} set a timer outside an operation")))?;
                    net.set_timer(me, now.after(after), Tag::Step { op, step })?;
                }
                Effect::Detect { server, rule } => {
                    self.record(now, Some(me), None, Body::Detect { server, rule, op });
                    self.client_label_send(net, c, Message::Detected { server })?;
                }
                Effect::DetectionRun(run) => {
                    if let Some(op) = op {
                        self.record(now, Some(me), None, Body::DetectionRun { op, run });
                    }
                }
                Effect::Coin { heads } => {
                    if let Some(op) = op {
                        self.record(now, Some(me), None, Body::Coin { op, heads });
                    }
                }
                Effect::FingerprintOps(count) => {
                    if count > 0 {
                        self.record(now, Some(me), None, Body::FingerprintOps { op, count });
                    }
                }
                Effect::Complete(outcome) => {
                    let id = op.ok_or_else(|| Error::Scenario(format!("{c} completed outside an operation")))?;
                    let op_kind = self.plan[id as usize].kind;
                    self.record(now, Some(me), None, Body::OpReturn { op: id, op_kind, outcome });
                    self.current[c.0 as usize] = None;
                    self.snapshot(now, id, Boundary::Return);
                }
                Effect::Note(text) => self.record(now, Some(me), None, Body::Note { text }),
            }
        }
        Ok(())
    }

    fn client_label_send(&mut self, net: &mut Network<Message, Tag>, c: ClientId, m: Message) -> Result<()> {
        let me = ProcessId::Client(c);
        let envs = net.send_to_label(me, m.clone())?;
        self.record(
            net.now(),
            Some(me),
            Some(ProcessId::Label),
            Body::Send { msg: m, channel: Channel::Label, fanout: envs.len() as u32, attack: None },
        );
        Ok(())
    }
}

impl Handler<Message, Tag> for World {
    fn handle(&mut self, net: &mut Network<Message, Tag>, event: Event<Message, Tag>) -> Result<()> {
        let now = net.now();
        match event {
            Event::Crash(p) => {
                match p {
                    ProcessId::Server(s) => self.alive_servers[s.index()] = false,
                    ProcessId::Client(c) => self.alive_clients[c.0 as usize] = false,
                    _ => {}
                }
                self.record(now, Some(p), None, Body::Crash {});
            }
            Event::Dropped(env) => {
                self.record(now, Some(env.sender), Some(env.recipient), Body::Drop { msg_kind: env.payload.kind() });
            }
            Event::Deliver(env) => {
                let last_ts = match (&env.payload, env.recipient) {
                    (Message::Reply(_), ProcessId::Client(c)) => Some(self.clients[c.0 as usize].last_ts),
                    _ => None,
                };
                self.record(
                    now,
                    Some(env.sender),
                    Some(env.recipient),
                    Body::Deliver { msg: env.payload.clone(), last_ts },
                );
                match env.recipient {
                    ProcessId::Server(s) => self.on_server_deliver(net, s, env.payload)?,
                    ProcessId::Client(c) => self.on_client_deliver(net, c, &env.payload)?,
                    _ => {}
                }
            }
            Event::Timer { owner: ProcessId::Client(c), tag } => match tag {
                Tag::Invoke(i) => self.invoke(net, i)?,
                Tag::Step { op, step } => {
                    if self.current[c.0 as usize] == Some(op) {
                        self.record(now, Some(ProcessId::Client(c)), None, Body::Timer { op, step });
                        let effects = self.clients[c.0 as usize].on_timer(step);
                        self.apply(net, c, effects)?;
                    }
                }
            },
            Event::Timer { .. } => {}
        }
        Ok(())
    }
}

/// Convenience entry point: build a world and run it.
pub fn simulate(cfg: &WorldConfig, plan: &[PlannedOp]) -> Result<Trace> {
    World::new(cfg.clone(), plan.to_vec())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::register::{Outcome, ReadOutcome};

    fn timing() -> TimingParams {
        TimingParams::new(10, 5).unwrap()
    }

    fn outcomes(t: &Trace) -> Vec<Outcome> {
        t.bodies()
            .filter_map(|b| match b {
                Body::OpReturn { outcome, .. } => Some(*outcome),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn write_then_read_returns_value() {
        let cfg = WorldConfig::honest(Protocol::P, 3, 2, timing());
        let plan = [PlannedOp::write(0, 7, 0), PlannedOp::read(1, 40)];
        let t = simulate(&cfg, &plan).unwrap();
        assert_eq!(outcomes(&t), vec![Outcome::Written, Outcome::Read(ReadOutcome::Value(Value(7)))]);
    }

    #[test]
    fn read_before_any_write_is_bottom() {
        let cfg = WorldConfig::honest(Protocol::Pcv, 2, 1, timing());
        let t = simulate(&cfg, &[PlannedOp::read(0, 0)]).unwrap();
        assert_eq!(outcomes(&t), vec![Outcome::Read(ReadOutcome::Bottom)]);
    }

    #[test]
    fn unknown_client_is_rejected() {
        let cfg = WorldConfig::honest(Protocol::P, 1, 1, timing());
        assert!(simulate(&cfg, &[PlannedOp::read(3, 0)]).is_err());
    }

    #[test]
    fn same_seed_same_trace() {
        let mut cfg = WorldConfig::honest(Protocol::Phash, 4, 3, timing());
        cfg.seed = 99;
        let plan = [PlannedOp::write(0, 1, 0), PlannedOp::read(1, 5), PlannedOp::read(2, 45)];
        assert_eq!(simulate(&cfg, &plan).unwrap().to_jsonl(), simulate(&cfg, &plan).unwrap().to_jsonl());
    }
}
