//! Scenario documents, workload generation and batch experiments.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::ServerProfile;
use crate::checker::{check_all, Verdict};
use crate::error::{Error, Result};
use crate::register::OpKind;
use crate::simnet::{ClientId, DelayMode, ServerId, TimingParams, VirtualTime};
use crate::trace::Trace;
use crate::variants::{Coin, FingerprintKind, Protocol};
use crate::world::{simulate, sub_seed, PlannedOp, WorldConfig};

pub const SCENARIO_SCHEMA: &str = "ratreg-scenario/1";

/// Seeded workload shape: one writer doing sequential writes, every other
/// client reading at random offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub writer: u32,
    pub writes: u32,
    pub reads_per_reader: u32,
    /// Reads interleaved with the writer's own writes. Defaults to
    /// `reads_per_reader` for a lone client and 0 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writer_reads: Option<u32>,
    /// Largest idle gap between two operations of one client, in ticks.
    /// Defaults to 2δ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gap: Option<u64>,
}

impl GeneratorSpec {
    pub fn new(writes: u32, reads_per_reader: u32) -> Self {
        Self { writer: 0, writes, reads_per_reader, writer_reads: None, max_gap: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Ops(Vec<PlannedOp>),
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Table,
    Machine,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "machine" => Ok(ReportFormat::Machine),
            other => Err(Error::Scenario(format!("unknown report format {other:?}"))),
        }
    }
}

/// Batch settings; each one can also be given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "one_run")]
    pub runs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "yes")]
    pub check: bool,
    #[serde(default)]
    pub format: ReportFormat,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { runs: 1, out: None, check: true, format: ReportFormat::Table }
    }
}

fn one_run() -> u64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientCrash {
    pub client: ClientId,
    pub at: VirtualTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    pub n_clients: usize,
    pub timing: TimingParams,
    pub profiles: Vec<ServerProfile>,
    pub workload: Workload,
    pub coin_p: f64,
    pub seed: u64,
    pub delay_mode: DelayMode,
    pub fingerprint: FingerprintKind,
    pub client_crashes: Vec<ClientCrash>,
    pub snapshots: bool,
    pub run: RunSettings,
}

#[derive(Deserialize)]
struct ServerEntry {
    id: ServerId,
    #[serde(flatten)]
    profile: ServerProfile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadDoc {
    #[serde(default)]
    ops: Vec<PlannedOp>,
    #[serde(default)]
    generator: Option<GeneratorSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    schema: String,
    #[serde(default)]
    name: Option<String>,
    protocol: String,
    n_servers: usize,
    n_clients: usize,
    timing: TimingParams,
    #[serde(default)]
    servers: Vec<ServerEntry>,
    workload: WorkloadDoc,
    #[serde(default = "default_coin")]
    coin_p: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_delay")]
    delay_mode: DelayMode,
    #[serde(default)]
    fingerprint: FingerprintKind,
    #[serde(default)]
    client_crashes: Vec<ClientCrash>,
    #[serde(default = "yes")]
    snapshots: bool,
    #[serde(default)]
    run: RunSettings,
}

fn default_coin() -> f64 {
    Coin::DEFAULT_P
}

fn default_delay() -> DelayMode {
    DelayMode::Uniform
}

/// Parses and validates a TOML scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| Error::Scenario(e.message().to_string()))?;
    if doc.schema != SCENARIO_SCHEMA {
        return Err(Error::Scenario(format!("unsupported schema {:?}", doc.schema)));
    }
    let protocol: Protocol = doc
        .protocol
        .parse()
        .map_err(|_| Error::Scenario(format!("unknown protocol tag {:?}", doc.protocol)))?;
    if doc.n_servers == 0 {
        return Err(Error::Scenario("n_servers must be at least 1".into()));
    }
    let mut profiles = vec![ServerProfile::Honest; doc.n_servers];
    let mut seen = vec![false; doc.n_servers];
    for e in doc.servers {
        let i = e.id.index();
        if e.id.0 == 0 || i >= doc.n_servers {
            return Err(Error::Scenario(format!("server id {} outside 1..={}", e.id.0, doc.n_servers)));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Scenario(format!("server {} is described twice", e.id)));
        }
        profiles[i] = e.profile;
    }
    let workload = match (doc.workload.ops.is_empty(), doc.workload.generator) {
        (false, None) => Workload::Ops(doc.workload.ops),
        (true, Some(g)) => Workload::Generator(g),
        (true, None) => return Err(Error::Scenario("workload has neither ops nor a generator".into())),
        (false, Some(_)) => return Err(Error::Scenario("workload has both ops and a generator".into())),
    };
    let s = Scenario {
        name: doc.name.unwrap_or_else(|| "scenario".into()),
        protocol,
        n_clients: doc.n_clients,
        timing: doc.timing,
        profiles,
        workload,
        coin_p: doc.coin_p,
        seed: doc.seed,
        delay_mode: doc.delay_mode,
        fingerprint: doc.fingerprint,
        client_crashes: doc.client_crashes,
        snapshots: doc.snapshots,
        run: doc.run,
    };
    s.validate()?;
    Ok(s)
}

impl Scenario {
    /// A scenario with honest servers and a generated workload.
    pub fn honest(protocol: Protocol, n_servers: usize, n_clients: usize, timing: TimingParams, generator: GeneratorSpec) -> Self {
        Self {
            name: "scenario".into(),
            protocol,
            n_clients,
            timing,
            profiles: vec![ServerProfile::Honest; n_servers],
            workload: Workload::Generator(generator),
            coin_p: Coin::DEFAULT_P,
            seed: 0,
            delay_mode: DelayMode::Uniform,
            fingerprint: FingerprintKind::default(),
            client_crashes: Vec::new(),
            snapshots: true,
            run: RunSettings::default(),
        }
    }

    pub fn n_servers(&self) -> usize {
        self.profiles.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        if !(0.0..=1.0).contains(&self.coin_p) {
            return Err(Error::InvalidCoin(self.coin_p));
        }
        if self.n_clients == 0 {
            return Err(Error::Scenario("n_clients must be at least 1".into()));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        if !self.profiles.iter().any(ServerProfile::is_honest) {
            return Err(Error::Scenario("no honest alive server".into()));
        }
        for c in &self.client_crashes {
            if c.client.0 as usize >= self.n_clients {
                return Err(Error::Scenario(format!("crash names unknown client {}", c.client)));
            }
        }
        match &self.workload {
            Workload::Ops(ops) => validate_ops(ops, self.n_clients, self.protocol, self.timing),
            Workload::Generator(g) => {
                if g.writer as usize >= self.n_clients {
                    return Err(Error::Scenario(format!("generator writer c{} does not exist", g.writer)));
                }
                if g.max_gap == Some(0) {
                    return Err(Error::Scenario("generator max_gap must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Workload of the run seeded with `seed`.
    pub fn plan(&self, seed: u64) -> Vec<PlannedOp> {
        match &self.workload {
            Workload::Ops(ops) => ops.clone(),
            Workload::Generator(g) => generate_workload(g, self.n_clients, self.protocol, self.timing, seed),
        }
    }

    pub fn world(&self, seed: u64) -> WorldConfig {
        WorldConfig {
            protocol: self.protocol,
            timing: self.timing,
            n_clients: self.n_clients,
            profiles: self.profiles.clone(),
            coin_p: self.coin_p,
            seed,
            delay_mode: self.delay_mode,
            fingerprint: self.fingerprint,
            client_crashes: self.client_crashes.iter().map(|c| (c.client, c.at)).collect(),
            snapshots: self.snapshots,
        }
    }

    /// Simulates the run seeded with `seed`.
    pub fn simulate(&self, seed: u64) -> Result<Trace> {
        simulate(&self.world(seed), &self.plan(seed))
    }
}

/// Longest time an operation of `kind` may take.
pub fn max_duration(kind: OpKind, protocol: Protocol, timing: TimingParams) -> u64 {
    match kind {
        OpKind::Write => 3 * timing.delta,
        OpKind::Read if protocol == Protocol::Pcv => 3 * timing.delta + 2 * timing.delta_prime,
        OpKind::Read => 3 * timing.delta,
    }
}

fn validate_ops(ops: &[PlannedOp], n_clients: usize, protocol: Protocol, timing: TimingParams) -> Result<()> {
    for (i, op) in ops.iter().enumerate() {
        if op.client.0 as usize >= n_clients {
            return Err(Error::Scenario(format!("operation {i} names unknown client {}", op.client)));
        }
        if op.kind == OpKind::Write && op.value.is_none() {
            return Err(Error::Scenario(format!("write operation {i} has no value")));
        }
    }
    let mut writes: Vec<(usize, &PlannedOp)> = ops.iter().enumerate().filter(|(_, o)| o.kind == OpKind::Write).collect();
    writes.sort_by_key(|(_, o)| o.at);
    for w in writes.windows(2) {
        let ((i, a), (j, b)) = (w[0], w[1]);
        if b.at.0 <= a.at.0 + 3 * timing.delta {
            return Err(Error::Scenario(format!(
                "overlapping writes: operation {j} starts at {} before operation {i} ends at {}",
                b.at.0,
                a.at.0 + 3 * timing.delta
            )));
        }
    }
    for c in 0..n_clients {
        let mut mine: Vec<(usize, &PlannedOp)> = ops.iter().enumerate().filter(|(_, o)| o.client.0 as usize == c).collect();
        mine.sort_by_key(|(_, o)| o.at);
        for w in mine.windows(2) {
            let ((i, a), (j, b)) = (w[0], w[1]);
            if b.at.0 <= a.at.0 + max_duration(a.kind, protocol, timing) {
                return Err(Error::Scenario(format!(
                    "client c{c} invokes operation {j} while operation {i} may still be running"
                )));
            }
        }
    }
    Ok(())
}

/// Builds a workload: the writer's writes are strictly sequential, readers
/// run independently so reads land both inside and between writes. A lone
/// client interleaves its own reads with its writes.
pub fn generate_workload(
    g: &GeneratorSpec,
    n_clients: usize,
    protocol: Protocol,
    timing: TimingParams,
    seed: u64,
) -> Vec<PlannedOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 3, 0));
    let max_gap = g.max_gap.unwrap_or(2 * timing.delta).max(1);
    let mut plan = Vec::new();
    let writer_reads = g.writer_reads.unwrap_or(if n_clients == 1 { g.reads_per_reader } else { 0 });

    let mut kinds: Vec<OpKind> = std::iter::repeat_n(OpKind::Write, g.writes as usize)
        .chain(std::iter::repeat_n(OpKind::Read, writer_reads as usize))
        .collect();
    for i in (1..kinds.len()).rev() {
        kinds.swap(i, rng.random_range(0..=i));
    }
    let mut t = rng.random_range(0..=max_gap);
    let mut value = 0;
    for kind in kinds {
        plan.push(match kind {
            OpKind::Write => {
                value += 1;
                PlannedOp::write(g.writer, value, t)
            }
            OpKind::Read => PlannedOp::read(g.writer, t),
        });
        t += max_duration(kind, protocol, timing) + rng.random_range(1..=max_gap);
    }

    for c in (0..n_clients as u32).filter(|&c| c != g.writer) {
        let mut t = rng.random_range(0..=2 * max_gap);
        for _ in 0..g.reads_per_reader {
            plan.push(PlannedOp::read(c, t));
            t += max_duration(OpKind::Read, protocol, timing) + rng.random_range(1..=max_gap);
        }
    }
    plan.sort_by_key(|o| (o.at, o.client));
    plan
}

/// One simulated run and, if requested, its verdict.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub trace: Trace,
    pub verdict: Option<Verdict>,
}

/// Runs `runs` simulations with seeds `scenario.seed`, `scenario.seed + 1`, …
/// in parallel; results come back in seed order.
pub fn run_experiment(scenario: &Scenario, runs: u64, check: bool) -> Result<Vec<RunResult>> {
    scenario.validate()?;
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let seed = scenario.seed.wrapping_add(i);
            let trace = scenario.simulate(seed)?;
            let verdict = check.then(|| check_all(&trace, &scenario.profiles));
            Ok(RunResult { seed, trace, verdict })
        })
        .collect()
}
