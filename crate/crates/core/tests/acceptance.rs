//! Acceptance suite. Runs as a plain binary so each criterion prints one
//! line; exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use ratreg::adversary::{CorruptionAction, ScriptRule, ServerProfile, Trigger};
use ratreg::checker::{check_all, cost_report, CompletenessReport, Coverage, CostReport, Verdict};
use ratreg::game::{
    attack_threshold, best_response, brute_force_best_response, expected_gain, Belief, PayoffParams, Strategy,
};
use ratreg::scenario::{GeneratorSpec, Scenario};
use ratreg::simnet::{DelayMode, TimingParams, VirtualTime};
use ratreg::variants::Protocol;
use ratreg::world::{simulate, PlannedOp, WorldConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

/// θ ∈ {0, 0.01, …, 1} × g_s, d_s ∈ {0.5, 1, …, 5}, plus every exact
/// threshold point.
fn game_grid() -> Vec<(f64, f64, f64)> {
    let pay: Vec<f64> = (1..=10).map(|k| k as f64 * 0.5).collect();
    let mut grid = Vec::new();
    for &g in &pay {
        for &d in &pay {
            for i in 0..=100 {
                grid.push((i as f64 / 100.0, g, d));
            }
            grid.push((g / (g + d), g, d));
        }
    }
    grid
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let grid = game_grid();
    let mut mismatches = 0;
    for &(t, g, d) in &grid {
        let p = PayoffParams::server(g, d).unwrap();
        let b = Belief::new(t).unwrap();
        if best_response(b, &p).unwrap() != brute_force_best_response(b, &p).unwrap() {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    outcome(
        mismatches == 0 && grid.len() >= 10_000 && took < Duration::from_secs(1),
        format!("{} grid points, {mismatches} mismatches, {took:.2?}", grid.len()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let grid = game_grid();
    let mut bad = 0;
    for &(t, g, d) in &grid {
        let p = PayoffParams::server(g, d).unwrap();
        let b = Belief::new(t).unwrap();
        if expected_gain(Strategy::Silent, b, &p).unwrap() >= expected_gain(Strategy::NotAttack, b, &p).unwrap() {
            bad += 1;
        }
    }
    let took = start.elapsed();
    outcome(
        bad == 0 && took < Duration::from_secs(1),
        format!("{} grid points, {bad} where silence is not dominated, {took:.2?}", grid.len()),
    )
}

const RUNS: u64 = 1000;

fn run_batch(s: &Scenario, runs: u64) -> Vec<Verdict> {
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let seed = s.seed + i;
            let mut s = s.clone();
            if seed % 4 == 0 {
                s.delay_mode = DelayMode::WorstCase;
            }
            let t = s.simulate(seed).expect("simulation runs");
            check_all(&t, &s.profiles)
        })
        .collect()
}

fn honest_generator() -> GeneratorSpec {
    GeneratorSpec { writer_reads: Some(2), ..GeneratorSpec::new(3, 3) }
}

/// The honest run set shared by criteria 3 and 6.
fn honest_sweep() -> Vec<(String, Vec<Verdict>)> {
    let mut out = Vec::new();
    for protocol in Protocol::ALL {
        for n in 1..=5 {
            for clients in 1..=3 {
                for delta in [2, 10] {
                    let timing = TimingParams::new(delta, delta / 2).unwrap();
                    let mut s = Scenario::honest(protocol, n, clients, timing, honest_generator());
                    s.seed = 1_000_000 * n as u64 + 10_000 * clients as u64 + delta;
                    let label = format!("{protocol} n={n} clients={clients} delta={delta}");
                    out.push((label, run_batch(&s, RUNS)));
                }
            }
        }
    }
    out
}

fn criterion_3(sweep: &[(String, Vec<Verdict>)]) -> Outcome {
    let mut failures = Vec::new();
    let mut runs = 0;
    let mut reads = 0;
    for (label, verdicts) in sweep {
        runs += verdicts.len();
        for v in verdicts {
            reads += v.validity.reads_checked;
            if !v.termination_ok() || !v.validity_ok() || !v.validity.aborts.is_empty() {
                failures.push(label.clone());
            }
        }
    }
    failures.dedup();
    outcome(
        failures.is_empty(),
        format!(
            "{} configurations, {runs} runs, {reads} reads checked, failing: {:?}",
            sweep.len(),
            failures
        ),
    )
}

fn criterion_6(sweep: &[(String, Vec<Verdict>)]) -> Outcome {
    let violations: usize = sweep.iter().flat_map(|(_, v)| v).map(|v| v.lemmas.len()).sum();
    let first = sweep.iter().flat_map(|(_, v)| v).find_map(|v| v.lemmas.first().cloned());
    let detail = match first {
        Some(f) => format!("{violations} lemma violations, first: {f:?}"),
        None => format!("0 lemma violations over the {} runs of criterion 3", sweep.iter().map(|(_, v)| v.len()).sum::<usize>()),
    };
    outcome(violations == 0, detail)
}

#[derive(Clone, Copy, Debug)]
enum Script {
    Action(CorruptionAction, Option<i64>),
    Crash,
}

fn scripts() -> Vec<Script> {
    let mut v = vec![Script::Action(CorruptionAction::WrongValue, None)];
    for d in [-2, -1, 1, 2] {
        v.push(Script::Action(CorruptionAction::WrongTimestamp, Some(d)));
    }
    v.push(Script::Action(CorruptionAction::WrongBoth, None));
    v.push(Script::Action(CorruptionAction::Omit, None));
    v.push(Script::Crash);
    v
}

/// One run of the adversarial sweep. Server count, protocol, trigger and
/// crash times all vary with the seed.
fn adversarial_run(script: Script, seed: u64) -> Verdict {
    let protocol = Protocol::ALL[(seed % 3) as usize];
    let n = 2 + (seed / 3 % 4) as usize;
    let timing = TimingParams::new(10, 5).unwrap();
    let mut s = Scenario::honest(protocol, n, 3, timing, honest_generator());
    let trigger = [Trigger::Any, Trigger::Read, Trigger::Write][(seed / 12 % 3) as usize];
    s.profiles[1] = match script {
        Script::Action(action, delta) => ServerProfile::Scripted {
            rules: vec![ScriptRule { delta, probability: 0.5, ..ScriptRule::always(trigger, action) }],
        },
        Script::Crash => ServerProfile::Crash { at: VirtualTime(seed * 7 % 300) },
    };
    if n > 2 {
        s.profiles[2] = ServerProfile::Crash { at: VirtualTime(seed * 13 % 400) };
    }
    if seed % 5 == 0 {
        s.delay_mode = DelayMode::WorstCase;
    }
    let t = s.simulate(seed).expect("simulation runs");
    check_all(&t, &s.profiles)
}

fn adversarial_sweep() -> Vec<(Script, Vec<Verdict>)> {
    scripts()
        .into_iter()
        .enumerate()
        .map(|(k, script)| {
            let base = 50_000 * (k as u64 + 1);
            let verdicts = (0..RUNS).into_par_iter().map(|i| adversarial_run(script, base + i)).collect();
            (script, verdicts)
        })
        .collect()
}

fn criterion_4(sweep: &[(Script, Vec<Verdict>)]) -> Outcome {
    let mut false_pos = 0;
    let mut unattributed = 0;
    let mut detections = 0;
    let mut crash = 0;
    let mut runs = 0;
    for (_, verdicts) in sweep {
        for v in verdicts {
            runs += 1;
            false_pos += v.detection.false_positives.len();
            unattributed += v.detection.unattributed.len();
            detections += v.detection.events;
            crash += v.detection.crash_detections;
        }
    }
    outcome(
        false_pos == 0 && unattributed == 0,
        format!(
            "{} scripts, {runs} runs, {detections} detections ({crash} of crashed servers), \
             {false_pos} honest servers detected, {unattributed} unattributed"
        , sweep.len()),
    )
}

fn criterion_5(sweep: &[(Script, Vec<Verdict>)]) -> Outcome {
    let mut total = CompletenessReport::default();
    for (_, verdicts) in sweep {
        for v in verdicts {
            total.merge(&v.detection.completeness);
        }
    }
    let required = [
        Coverage::TimestampGap,
        Coverage::AckMismatch,
        Coverage::Omission,
        Coverage::WrongValue,
        Coverage::WriterMismatch,
    ];
    let exercised = required.iter().all(|c| total.expected.get(c).copied().unwrap_or(0) > 0);
    let counts: Vec<String> = required
        .iter()
        .map(|c| {
            format!(
                "{c:?} {}/{}",
                total.detected.get(c).copied().unwrap_or(0),
                total.expected.get(c).copied().unwrap_or(0)
            )
        })
        .collect();
    outcome(
        total.missed.is_empty() && exercised,
        format!(
            "detected/expected: {}; raw |shift| >= 2 replies detected {}/{} (informational)",
            counts.join(", "),
            total.raw_shift.detected,
            total.raw_shift.observed
        ),
    )
}

fn rational_run(protocol: Protocol, n: usize, theta: f64, g_s: f64, d_s: f64, seed: u64) -> (Verdict, CostReport) {
    let timing = TimingParams::new(10, 5).unwrap();
    let mut s = Scenario::honest(protocol, n, 3, timing, honest_generator());
    let payoffs = PayoffParams::server(g_s, d_s).unwrap();
    for p in s.profiles.iter_mut().skip(1) {
        *p = ServerProfile::Rational { belief: Belief::new(theta).unwrap(), payoffs, action: None };
    }
    let t = s.simulate(seed).expect("simulation runs");
    let v = check_all(&t, &s.profiles);
    let c = cost_report(&t);
    (v, c)
}

fn criterion_7() -> Outcome {
    // (θ, g_s, d_s): above the threshold, and exactly on it.
    let safe = [(0.6, 1.0, 2.0), (0.5, 1.0, 1.0), (0.9, 3.0, 0.5)];
    for &(t, g, d) in &safe {
        assert!(t >= attack_threshold(&PayoffParams::server(g, d).unwrap()).unwrap());
    }
    let above: Vec<(Verdict, CostReport)> = (0..RUNS)
        .into_par_iter()
        .map(|i| {
            let (t, g, d) = safe[(i % 3) as usize];
            rational_run(Protocol::ALL[(i / 3 % 3) as usize], 2 + (i / 9 % 4) as usize, t, g, d, 700_000 + i)
        })
        .collect();
    let corrupted: u64 = above.iter().map(|(_, c)| c.corrupted_messages + c.omitted_messages).sum();
    let invalid: usize = above.iter().map(|(v, _)| v.validity.violations.len()).sum();
    let above_ok = corrupted == 0 && invalid == 0 && above.iter().all(|(v, _)| v.passed());

    let below: Vec<(Verdict, CostReport)> = (0..RUNS)
        .into_par_iter()
        .map(|i| rational_run(Protocol::ALL[(i % 3) as usize], 2 + (i / 3 % 4) as usize, 0.1, 2.0, 1.0, 800_000 + i))
        .collect();
    let attacks: u64 = below.iter().map(|(_, c)| c.corrupted_messages).sum();
    let reported: u64 = below.iter().map(|(_, c)| c.detections + c.aborts).sum();
    let attacked_runs = below.iter().filter(|(_, c)| c.corrupted_messages > 0).count();
    let sound = below.iter().all(|(v, _)| v.soundness_ok());
    outcome(
        above_ok && attacks > 0 && reported > 0 && attacked_runs == below.len() && sound,
        format!(
            "above threshold: {corrupted} corrupted, {invalid} invalid reads in {RUNS} runs; \
             below: {attacks} corrupted messages in {attacked_runs}/{} runs, {reported} detections or aborts reported",
            below.len()
        ),
    )
}

/// One write, then every other client reads repeatedly while s2 answers
/// reads with wrong values, so non-writers keep reaching the fallback.
fn coin_world(protocol: Protocol, seed: u64) -> (WorldConfig, Vec<PlannedOp>) {
    let timing = TimingParams::new(10, 5).unwrap();
    let mut cfg = WorldConfig::honest(protocol, 3, 4, timing);
    cfg.seed = seed;
    cfg.profiles[1] = ServerProfile::Scripted {
        rules: vec![ScriptRule::always(Trigger::Read, CorruptionAction::WrongValue)],
    };
    let mut plan = vec![PlannedOp::write(0, 42, 0)];
    for c in 1..4 {
        for k in 0..6 {
            plan.push(PlannedOp::read(c, 40 + k * 45 + c as u64));
        }
    }
    (cfg, plan)
}

fn criterion_8() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for protocol in [Protocol::Pcv, Protocol::Phash] {
        let (mut flips, mut heads, mut fallbacks) = (0u64, 0u64, 0u64);
        let mut batch = 0u64;
        while fallbacks < 10_000 {
            let costs: Vec<CostReport> = (0..1000u64)
                .into_par_iter()
                .map(|i| {
                    let (cfg, plan) = coin_world(protocol, 900_000 + batch * 1000 + i);
                    cost_report(&simulate(&cfg, &plan).expect("simulation runs"))
                })
                .collect();
            for c in costs {
                flips += c.coin_flips;
                heads += c.coin_heads;
                fallbacks += c.fallbacks;
            }
            batch += 1;
        }
        let rate = heads as f64 / fallbacks as f64;
        ok &= flips == fallbacks && (rate - 0.5).abs() <= 0.02;
        parts.push(format!("{protocol} {heads}/{fallbacks} = {rate:.4}"));
    }
    outcome(ok, parts.join(", "))
}

fn cost_at_scale(protocol: Protocol, detection: bool) -> CostReport {
    let timing = TimingParams::new(10, 5).unwrap();
    let mut cfg = WorldConfig::honest(protocol, 10, 1000, timing);
    cfg.coin_p = 1.0;
    if detection {
        cfg.profiles[1] = ServerProfile::Scripted {
            rules: vec![ScriptRule::always(Trigger::Read, CorruptionAction::WrongValue)],
        };
    }
    let plan = [PlannedOp::write(0, 5, 0), PlannedOp::read(1, 40)];
    cost_report(&simulate(&cfg, &plan).expect("simulation runs"))
}

fn criterion_9() -> Outcome {
    let p = cost_at_scale(Protocol::P, false);
    let cv_quiet = cost_at_scale(Protocol::Pcv, false);
    let cv_detect = cost_at_scale(Protocol::Pcv, true);
    let h_quiet = cost_at_scale(Protocol::Phash, false);
    let h_detect = cost_at_scale(Protocol::Phash, true);
    let close = (h_quiet.messages_total as f64 - cv_quiet.messages_total as f64).abs()
        <= 0.05 * cv_quiet.messages_total as f64;
    let ok = p.messages_total > cv_detect.messages_total
        && cv_detect.messages_total > cv_quiet.messages_total
        && close
        && cv_detect.detections > 0
        && h_detect.detections > 0
        && h_detect.fingerprint_ops > 0
        && h_quiet.fingerprint_ops > 0
        && h_detect.messages_total == h_quiet.messages_total
        && p.fingerprint_ops == 0
        && cv_detect.fingerprint_ops == 0;
    outcome(
        ok,
        format!(
            "messages P {} > P_cv detect {} > P_cv quiet {} ~ P_hash {} (detect {}); \
             fingerprint ops P_hash {}/{}, P {}, P_cv {}",
            p.messages_total,
            cv_detect.messages_total,
            cv_quiet.messages_total,
            h_quiet.messages_total,
            h_detect.messages_total,
            h_quiet.fingerprint_ops,
            h_detect.fingerprint_ops,
            p.fingerprint_ops,
            cv_detect.fingerprint_ops
        ),
    )
}

fn criterion_10() -> Outcome {
    let timing = TimingParams::new(10, 5).unwrap();
    let mut cases: Vec<(WorldConfig, Vec<PlannedOp>)> = Vec::new();
    for protocol in Protocol::ALL {
        let mut s = Scenario::honest(protocol, 4, 3, timing, honest_generator());
        s.seed = 31;
        s.profiles[1] = ServerProfile::Scripted {
            rules: vec![ScriptRule { probability: 0.5, ..ScriptRule::always(Trigger::Any, CorruptionAction::WrongBoth) }],
        };
        s.profiles[2] = ServerProfile::Rational {
            belief: Belief::new(0.1).unwrap(),
            payoffs: PayoffParams::server(2.0, 1.0).unwrap(),
            action: None,
        };
        s.profiles[3] = ServerProfile::Crash { at: VirtualTime(90) };
        cases.push((s.world(31), s.plan(31)));
        cases.push(coin_world(protocol, 77));
    }
    let mut bytes = 0;
    let mut differing = 0;
    for (cfg, plan) in &cases {
        let a = simulate(cfg, plan).expect("simulation runs").to_jsonl();
        let b = simulate(cfg, plan).expect("simulation runs").to_jsonl();
        bytes += a.len();
        differing += usize::from(a != b);
    }
    outcome(differing == 0, format!("{} traces, {bytes} bytes, {differing} differ between executions", cases.len()))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {}: {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "game oracle equivalence", criterion_1());
    report(2, "silence is dominated", criterion_2());
    let honest = honest_sweep();
    report(3, "regularity under honesty", criterion_3(&honest));
    let adversarial = adversarial_sweep();
    report(4, "detection soundness", criterion_4(&adversarial));
    report(5, "detection completeness on covered branches", criterion_5(&adversarial));
    report(6, "timestamp lemmas", criterion_6(&honest));
    report(7, "equilibrium behavior", criterion_7());
    report(8, "variant coin rate", criterion_8());
    report(9, "cost orderings", criterion_9());
    report(10, "determinism", criterion_10());
    let failed = results.iter().filter(|(_, _, o)| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed in {:.1?}", results.len() - failed, start.elapsed());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
