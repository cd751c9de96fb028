//! Deterministic discrete-event network.
//!
//! Time is an integer tick count on a fictional global clock. Clients reach
//! servers through a timely reliable broadcast (bound `delta`); servers and
//! clients reach the clients through an anonymous channel addressed to the
//! shared client label (bound `delta_prime`). The engine stamps the true
//! sender on every envelope, so receivers always learn who sent a message.
//!
//! Events scheduled for the same tick are processed in a fixed order: crashes,
//! then message deliveries, then timers, each group in insertion order. Since
//! every delay is at least one tick, a handler can never schedule a delivery
//! for the tick it is running in; a timer at `t` therefore sees every message
//! delivered "by time `t`".

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub fn after(self, ticks: u64) -> VirtualTime {
        VirtualTime(self.0 + ticks)
    }

    pub fn since(self, earlier: VirtualTime) -> u64 {
        self.0 - earlier.0
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Server identifier `s_1 .. s_n` (one-based).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ServerId(pub u32);

impl ServerId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        ServerId(i as u32 + 1)
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Simulator-internal client index. Never visible to servers: on the wire
/// every client answers to the same label.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcessId {
    Server(ServerId),
    Client(ClientId),
    /// The label shared by all clients.
    Label,
    /// All servers, as the target of a broadcast.
    Servers,
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessId::Server(s) => write!(f, "{s}"),
            ProcessId::Client(c) => write!(f, "{c}"),
            ProcessId::Label => f.write_str("l"),
            ProcessId::Servers => f.write_str("S"),
        }
    }
}

impl std::str::FromStr for ProcessId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l" => Ok(ProcessId::Label),
            "S" => Ok(ProcessId::Servers),
            _ => {
                let (head, num) = s.split_at(1);
                let n: u32 = num.parse().map_err(|_| format!("bad process id {s:?}"))?;
                match head {
                    "s" => Ok(ProcessId::Server(ServerId(n))),
                    "c" => Ok(ProcessId::Client(ClientId(n))),
                    _ => Err(format!("bad process id {s:?}")),
                }
            }
        }
    }
}

impl Serialize for ProcessId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingParams {
    /// Bound on client-to-servers broadcast delivery.
    pub delta: u64,
    /// Bound on sends to the client label.
    pub delta_prime: u64,
}

impl TimingParams {
    pub fn new(delta: u64, delta_prime: u64) -> Result<Self> {
        let t = Self { delta, delta_prime };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 || self.delta_prime == 0 {
            return Err(Error::InvalidTiming("delta and delta_prime must be positive".into()));
        }
        if self.delta_prime > self.delta {
            return Err(Error::InvalidTiming(format!(
                "delta_prime ({}) must not exceed delta ({})",
                self.delta_prime, self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Broadcast,
    Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub sender: ProcessId,
    pub recipient: ProcessId,
    pub payload: M,
    pub sent_at: VirtualTime,
    pub deliver_at: VirtualTime,
    pub channel: Channel,
}

/// How per-message delays are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Uniform in `[1, bound]` from the seeded generator.
    #[default]
    Uniform,
    /// Every message takes exactly the channel bound.
    WorstCase,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event<M, T> {
    Crash(ProcessId),
    Deliver(Envelope<M>),
    /// Delivery to a process that crashed while the message was in flight.
    Dropped(Envelope<M>),
    Timer { owner: ProcessId, tag: T },
}

impl<M, T> Event<M, T> {
    fn class(&self) -> u8 {
        match self {
            Event::Crash(_) => 0,
            Event::Deliver(_) | Event::Dropped(_) => 1,
            Event::Timer { .. } => 2,
        }
    }
}

struct Entry<M, T> {
    at: VirtualTime,
    class: u8,
    seq: u64,
    event: Event<M, T>,
}

impl<M, T> Entry<M, T> {
    fn key(&self) -> (VirtualTime, u8, u64) {
        (self.at, self.class, self.seq)
    }
}

impl<M, T> PartialEq for Entry<M, T> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<M, T> Eq for Entry<M, T> {}

impl<M, T> PartialOrd for Entry<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M, T> Ord for Entry<M, T> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

/// Time-ordered pending events; pops by `(time, class, insertion sequence)`.
pub struct EventQueue<M, T> {
    heap: BinaryHeap<Entry<M, T>>,
    next_seq: u64,
}

impl<M, T> Default for EventQueue<M, T> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), next_seq: 0 }
    }
}

impl<M, T> EventQueue<M, T> {
    pub fn push(&mut self, at: VirtualTime, event: Event<M, T>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, class: event.class(), seq, event });
    }

    pub fn peek_time(&self) -> Option<VirtualTime> {
        self.heap.peek().map(|e| e.at)
    }

    pub fn pop(&mut self) -> Option<(VirtualTime, Event<M, T>)> {
        self.heap.pop().map(|e| (e.at, e.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Receives every event popped by [`run_until`].
pub trait Handler<M, T> {
    fn handle(&mut self, net: &mut Network<M, T>, event: Event<M, T>) -> Result<()>;
}

pub const DEFAULT_EVENTS_PER_TICK: usize = 1_000_000;

pub struct Network<M, T> {
    timing: TimingParams,
    now: VirtualTime,
    queue: EventQueue<M, T>,
    servers_alive: Vec<bool>,
    clients_alive: Vec<bool>,
    delay_mode: DelayMode,
    rng: ChaCha8Rng,
    events_per_tick_limit: usize,
}

impl<M: Clone, T> Network<M, T> {
    pub fn new(
        timing: TimingParams,
        n_servers: usize,
        n_clients: usize,
        delay_mode: DelayMode,
        seed: u64,
    ) -> Result<Self> {
        timing.validate()?;
        Ok(Self {
            timing,
            now: VirtualTime::ZERO,
            queue: EventQueue::default(),
            servers_alive: vec![true; n_servers],
            clients_alive: vec![true; n_clients],
            delay_mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            events_per_tick_limit: DEFAULT_EVENTS_PER_TICK,
        })
    }

    pub fn with_event_limit(mut self, limit: usize) -> Self {
        self.events_per_tick_limit = limit;
        self
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn timing(&self) -> TimingParams {
        self.timing
    }

    pub fn n_servers(&self) -> usize {
        self.servers_alive.len()
    }

    pub fn n_clients(&self) -> usize {
        self.clients_alive.len()
    }

    pub fn is_alive(&self, p: ProcessId) -> bool {
        match p {
            ProcessId::Server(s) => self.servers_alive.get(s.index()).copied().unwrap_or(false),
            ProcessId::Client(c) => self.clients_alive.get(c.0 as usize).copied().unwrap_or(false),
            ProcessId::Label | ProcessId::Servers => true,
        }
    }

    pub fn alive_servers(&self) -> impl Iterator<Item = ServerId> + '_ {
        self.servers_alive
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| ServerId::from_index(i))
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn draw_delay(&mut self, bound: u64) -> u64 {
        match self.delay_mode {
            DelayMode::Uniform => self.rng.random_range(1..=bound),
            DelayMode::WorstCase => bound,
        }
    }

    fn check_delay(delay: u64, bound: u64) -> Result<()> {
        if delay == 0 {
            return Err(Error::InvalidTiming("message delays must be at least one tick".into()));
        }
        if delay > bound {
            return Err(Error::DelayBound { delay, bound });
        }
        Ok(())
    }

    /// Timely reliable broadcast from a client to every alive server, with
    /// delays drawn by the engine. Returns the scheduled envelopes.
    pub fn broadcast_to_servers(&mut self, sender: ProcessId, msg: M) -> Result<Vec<Envelope<M>>> {
        let delays: Vec<u64> = (0..self.servers_alive.len())
            .map(|_| self.draw_delay(self.timing.delta))
            .collect();
        self.broadcast_with_delays(sender, msg, &delays)
    }

    /// Broadcast with explicit per-server delays, indexed by server index.
    pub fn broadcast_with_delays(
        &mut self,
        sender: ProcessId,
        msg: M,
        delays: &[u64],
    ) -> Result<Vec<Envelope<M>>> {
        if delays.len() != self.servers_alive.len() {
            return Err(Error::InvalidTiming(format!(
                "need {} delays, got {}",
                self.servers_alive.len(),
                delays.len()
            )));
        }
        for &d in delays {
            Self::check_delay(d, self.timing.delta)?;
        }
        let mut out = Vec::new();
        for (i, &d) in delays.iter().enumerate() {
            if !self.servers_alive[i] {
                continue;
            }
            let env = Envelope {
                sender,
                recipient: ProcessId::Server(ServerId::from_index(i)),
                payload: msg.clone(),
                sent_at: self.now,
                deliver_at: self.now.after(d),
                channel: Channel::Broadcast,
            };
            self.queue.push(env.deliver_at, Event::Deliver(env.clone()));
            out.push(env);
        }
        Ok(out)
    }

    /// Send to the client label: every alive client receives the message
    /// within `delta_prime`.
    pub fn send_to_label(&mut self, sender: ProcessId, msg: M) -> Result<Vec<Envelope<M>>> {
        let delays: Vec<u64> = (0..self.clients_alive.len())
            .map(|_| self.draw_delay(self.timing.delta_prime))
            .collect();
        self.send_to_label_with_delays(sender, msg, &delays)
    }

    pub fn send_to_label_with_delays(
        &mut self,
        sender: ProcessId,
        msg: M,
        delays: &[u64],
    ) -> Result<Vec<Envelope<M>>> {
        if delays.len() != self.clients_alive.len() {
            return Err(Error::InvalidTiming(format!(
                "need {} delays, got {}",
                self.clients_alive.len(),
                delays.len()
            )));
        }
        for &d in delays {
            Self::check_delay(d, self.timing.delta_prime)?;
        }
        let mut out = Vec::new();
        for (i, &d) in delays.iter().enumerate() {
            if !self.clients_alive[i] {
                continue;
            }
            let env = Envelope {
                sender,
                recipient: ProcessId::Client(ClientId(i as u32)),
                payload: msg.clone(),
                sent_at: self.now,
                deliver_at: self.now.after(d),
                channel: Channel::Label,
            };
            self.queue.push(env.deliver_at, Event::Deliver(env.clone()));
            out.push(env);
        }
        Ok(out)
    }

    pub fn set_timer(&mut self, owner: ProcessId, fire_at: VirtualTime, tag: T) -> Result<()> {
        if fire_at < self.now {
            return Err(Error::TimerInPast { fire_at, now: self.now });
        }
        self.queue.push(fire_at, Event::Timer { owner, tag });
        Ok(())
    }

    pub fn schedule_crash(&mut self, p: ProcessId, at: VirtualTime) -> Result<()> {
        if at < self.now {
            return Err(Error::TimerInPast { fire_at: at, now: self.now });
        }
        self.queue.push(at, Event::Crash(p));
        Ok(())
    }

    fn pop_until(&mut self, t_end: VirtualTime) -> Option<Event<M, T>> {
        loop {
            if self.queue.peek_time()? > t_end {
                return None;
            }
            let (at, event) = self.queue.pop()?;
            self.now = at;
            match event {
                Event::Crash(p) => {
                    match p {
                        ProcessId::Server(s) => self.servers_alive[s.index()] = false,
                        ProcessId::Client(c) => self.clients_alive[c.0 as usize] = false,
                        _ => {}
                    }
                    return Some(Event::Crash(p));
                }
                Event::Deliver(env) => {
                    return Some(if self.is_alive(env.recipient) {
                        Event::Deliver(env)
                    } else {
                        Event::Dropped(env)
                    });
                }
                Event::Timer { owner, tag } => {
                    if self.is_alive(owner) {
                        return Some(Event::Timer { owner, tag });
                    }
                }
                Event::Dropped(env) => return Some(Event::Dropped(env)),
            }
        }
    }
}

/// Process every event due at or before `t_end`, then park the clock at `t_end`.
pub fn run_until<M: Clone, T, H: Handler<M, T>>(
    net: &mut Network<M, T>,
    handler: &mut H,
    t_end: VirtualTime,
) -> Result<()> {
    let mut tick = net.now;
    let mut at_tick = 0usize;
    while let Some(event) = net.pop_until(t_end) {
        if net.now == tick {
            at_tick += 1;
            if at_tick > net.events_per_tick_limit {
                return Err(Error::Livelock { tick, limit: net.events_per_tick_limit });
            }
        } else {
            tick = net.now;
            at_tick = 1;
        }
        handler.handle(net, event)?;
    }
    if t_end > net.now {
        net.now = t_end;
    }
    Ok(())
}
