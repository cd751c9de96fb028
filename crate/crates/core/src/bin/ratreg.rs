use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ratreg::adversary::choose_strategy;
use ratreg::checker::check_all;
use ratreg::game::{attack_threshold, Belief, PayoffParams};
use ratreg::report::{ProtocolRow, Report, VerdictDocument};
use ratreg::scenario::{parse_scenario, run_experiment, ReportFormat, Scenario};
use ratreg::trace::Trace;
use ratreg::variants::Protocol;

#[derive(Parser)]
#[command(name = "ratreg", version, about = "Regular register emulation with rational malicious servers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of seeded simulations and print the report.
    Run(RunArgs),
    /// Run the scenario under every protocol and compare costs.
    Compare(RunArgs),
    /// Simulate one seed and print its trace.
    Trace {
        scenario: PathBuf,
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trace here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a recorded trace against the scenario's server profiles.
    Check {
        trace: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        format: Option<ReportFormat>,
    },
    /// Evaluate the server's game for one belief and payoff pair.
    Game {
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        gs: f64,
        #[arg(long)]
        ds: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<u64>,
    /// Directory receiving traces and the report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_check: bool,
    #[arg(long)]
    format: Option<ReportFormat>,
}

type CliResult<T> = Result<T, String>;

fn load(path: &Path) -> CliResult<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))
}

impl RunArgs {
    fn scenario(&self) -> CliResult<Scenario> {
        let mut s = load(&self.scenario)?;
        if let Some(p) = self.protocol {
            s.protocol = p;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(runs) = self.runs {
            s.run.runs = runs;
        }
        if self.out.is_some() {
            s.run.out.clone_from(&self.out);
        }
        if self.no_check {
            s.run.check = false;
        }
        if let Some(f) = self.format {
            s.run.format = f;
        }
        Ok(s)
    }
}

fn batch(base: &Scenario, protocols: &[Protocol]) -> CliResult<Report> {
    let mut rows = Vec::new();
    for &p in protocols {
        let mut s = base.clone();
        s.protocol = p;
        let results = run_experiment(&s, s.run.runs, s.run.check).map_err(|e| e.to_string())?;
        if let Some(dir) = &s.run.out {
            fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            for r in &results {
                let path = dir.join(format!("trace-{p}-{}.jsonl", r.seed));
                fs::write(&path, r.trace.to_jsonl()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
        }
        rows.push(ProtocolRow::from_runs(p, &results));
    }
    Ok(Report::new(&base.name, base.seed, rows))
}

fn publish(report: &Report, s: &Scenario) -> CliResult<ExitCode> {
    let text = report.emit(s.run.format);
    print!("{text}");
    if let Some(dir) = &s.run.out {
        for (name, body) in [("report.json", report.to_machine()), ("report.txt", report.to_table())] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| format!("{}: {e}", path.display()))?;
        }
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn execute(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let s = args.scenario()?;
            publish(&batch(&s, &[s.protocol])?, &s)
        }
        Command::Compare(args) => {
            let s = args.scenario()?;
            publish(&batch(&s, &Protocol::ALL)?, &s)
        }
        Command::Trace { scenario, protocol, seed, out } => {
            let mut s = load(&scenario)?;
            if let Some(p) = protocol {
                s.protocol = p;
            }
            let seed = seed.unwrap_or(s.seed);
            let text = s.simulate(seed).map_err(|e| e.to_string())?.to_jsonl();
            match out {
                Some(path) => fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { trace, scenario, format } => {
            let s = load(&scenario)?;
            let text = fs::read_to_string(&trace).map_err(|e| format!("{}: {e}", trace.display()))?;
            let t = Trace::from_jsonl(&text).map_err(|e| format!("{}: {e}", trace.display()))?;
            if t.header.n_servers != s.n_servers() {
                return Err(format!(
                    "trace has {} servers but the scenario describes {}",
                    t.header.n_servers,
                    s.n_servers()
                ));
            }
            let doc = VerdictDocument::new(check_all(&t, &s.profiles));
            match format.unwrap_or(s.run.format) {
                ReportFormat::Table => print!("{}", doc.to_table()),
                ReportFormat::Machine => {
                    println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?)
                }
            }
            Ok(if doc.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Game { theta, gs, ds } => {
            let belief = Belief::new(theta).map_err(|e| e.to_string())?;
            let payoffs = PayoffParams::server(gs, ds).map_err(|e| e.to_string())?;
            let choice = choose_strategy(belief, &payoffs).map_err(|e| e.to_string())?;
            let threshold = attack_threshold(&payoffs).map_err(|e| e.to_string())?;
            println!("threshold {threshold}");
            println!("E(A) {}  E(NA) {}  E(S) {}", choice.gains[0], choice.gains[1], choice.gains[2]);
            println!("best response {}", choice.strategy);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
