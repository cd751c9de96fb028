use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ratreg::report::{ProtocolRow, Report};
use ratreg::scenario::{parse_scenario, run_experiment, ReportFormat, Workload};
use ratreg::variants::Protocol;

const MINIMAL: &str = r#"
schema = "ratreg-scenario/1"
protocol = "p"
n_servers = 3
n_clients = 2

[timing]
delta = 10
delta_prime = 5

[workload.generator]
writes = 2
reads_per_reader = 2
"#;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn ratreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratreg")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn minimal_scenario_is_valid() {
    let s = parse_scenario(MINIMAL).unwrap();
    assert_eq!(s.n_servers(), 3);
    assert_eq!(s.run.runs, 1);
    assert_eq!(s.run.format, ReportFormat::Table);
    assert!(matches!(s.workload, Workload::Generator(_)));
}

#[test]
fn rejects_scenarios_without_an_honest_server() {
    let text = format!(
        "{MINIMAL}\n{}",
        (1..=3)
            .map(|i| format!(
                "[[servers]]\nid = {i}\nkind = \"rational\"\nbelief = 0.3\npayoffs = {{ g_c = 1.0, d_c = 1.0, g_s = 1.0, d_s = 1.0 }}\n"
            ))
            .collect::<String>()
    );
    let err = parse_scenario(&text).unwrap_err().to_string();
    assert!(err.contains("no honest alive server"), "{err}");
}

#[test]
fn rejects_overlapping_writes() {
    let text = MINIMAL.replace(
        "[workload.generator]\nwrites = 2\nreads_per_reader = 2\n",
        "[[workload.ops]]\nclient = 0\nop = \"write\"\nvalue = 1\nat = 0\n\n\
         [[workload.ops]]\nclient = 1\nop = \"write\"\nvalue = 2\nat = 30\n",
    );
    let err = parse_scenario(&text).unwrap_err().to_string();
    assert!(err.contains("overlapping writes"), "{err}");
    let spaced = text.replace("at = 30", "at = 31");
    assert!(parse_scenario(&spaced).is_ok());
}

#[test]
fn rejects_unknown_protocol_tag() {
    let err = parse_scenario(&MINIMAL.replace("\"p\"", "\"paxos\"")).unwrap_err().to_string();
    assert!(err.contains("unknown protocol tag"), "{err}");
}

#[test]
fn rejects_unknown_keys() {
    assert!(parse_scenario(&format!("{MINIMAL}\n[run]\nrunz = 3\n")).is_err());
}

#[test]
fn shipped_scenarios_parse() {
    let mut seen = 0;
    for entry in fs::read_dir(repo_file("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            parse_scenario(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn report_round_trips_and_is_reproducible() {
    let s = parse_scenario(MINIMAL).unwrap();
    let build = || {
        let rows = Protocol::ALL
            .iter()
            .map(|&p| {
                let mut s = s.clone();
                s.protocol = p;
                ProtocolRow::from_runs(p, &run_experiment(&s, 5, true).unwrap())
            })
            .collect();
        Report::new(&s.name, s.seed, rows)
    };
    let report = build();
    let text = report.to_machine();
    assert_eq!(Report::from_machine(&text).unwrap(), report);
    assert_eq!(build().to_machine(), text);
    assert!(report.passed());

    let cost = |p: Protocol| {
        report.rows.iter().find(|r| r.protocol == p).unwrap().messages_without_detection.unwrap()
    };
    assert!(cost(Protocol::P) > cost(Protocol::Pcv));
    assert!(cost(Protocol::P) > cost(Protocol::Phash));
}

#[test]
fn single_run_gives_one_row() {
    let s = parse_scenario(MINIMAL).unwrap();
    let results = run_experiment(&s, 1, true).unwrap();
    assert_eq!(results.len(), 1);
    let report = Report::new(&s.name, s.seed, vec![ProtocolRow::from_runs(s.protocol, &results)]);
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].runs, 1);
}

#[test]
fn cli_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(&scenario, format!("{MINIMAL}\n[run]\nruns = 7\n")).unwrap();
    let out = dir.path().join("out");
    let o = ratreg(&[
        "run",
        scenario.to_str().unwrap(),
        "--protocol",
        "phash",
        "--runs",
        "2",
        "--seed",
        "9",
        "--format",
        "machine",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = Report::from_machine(&stdout(&o)).unwrap();
    assert_eq!(report.seed, 9);
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].protocol, Protocol::Phash);
    assert_eq!(report.rows[0].runs, 2);
    for name in ["report.json", "report.txt", "trace-phash-9.jsonl", "trace-phash-10.jsonl"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    assert_eq!(fs::read_to_string(out.join("report.json")).unwrap(), report.to_machine());
}

#[test]
fn compare_covers_every_protocol() {
    let o = ratreg(&["compare", repo_file("scenarios/honest.toml").to_str().unwrap(), "--runs", "2"]);
    assert!(o.status.success());
    let table = stdout(&o);
    for p in Protocol::ALL {
        assert!(table.contains(&p.to_string()), "{p} missing from\n{table}");
    }
}

#[test]
fn trace_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let scenario = repo_file("scenarios/attack.toml");
    let scenario = scenario.to_str().unwrap();
    let o = ratreg(&["trace", scenario, "--seed", "3", "--out", trace.to_str().unwrap()]);
    assert!(o.status.success());
    let printed = ratreg(&["trace", scenario, "--seed", "3"]);
    assert_eq!(stdout(&printed), fs::read_to_string(&trace).unwrap());

    let o = ratreg(&["check", trace.to_str().unwrap(), "--scenario", scenario, "--format", "machine"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["schema"], "ratreg-verdict/1");
    assert_eq!(doc["soundness"], true);

    let o = ratreg(&["check", trace.to_str().unwrap(), "--scenario", repo_file("scenarios/explicit.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn game_subcommand_reports_best_response() {
    let o = ratreg(&["game", "--theta", "0.9", "--gs", "1", "--ds", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("threshold 0.5"), "{text}");
    assert!(text.contains("best response"), "{text}");
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.toml");
    fs::write(&scenario, MINIMAL.replace("n_clients = 2", "n_clients = 0")).unwrap();
    let o = ratreg(&["run", scenario.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_clients"));
    assert_eq!(ratreg(&["run", "/nonexistent.toml"]).status.code(), Some(2));
    assert_eq!(ratreg(&["game", "--theta", "1.5", "--gs", "1", "--ds", "1"]).status.code(), Some(2));
}
