use std::collections::BTreeMap;

use proptest::prelude::*;

use ratreg::adversary::{CorruptionAction, ScriptRule, ServerProfile, Trigger};
use ratreg::checker::{check_all, History};
use ratreg::game::{Belief, PayoffParams};
use ratreg::register::{Message, ReadOutcome, Outcome};
use ratreg::scenario::{GeneratorSpec, Scenario};
use ratreg::simnet::{DelayMode, ProcessId, TimingParams, VirtualTime};
use ratreg::trace::{Body, Trace};
use ratreg::variants::Protocol;

fn protocol() -> impl Strategy<Value = Protocol> {
    prop::sample::select(Protocol::ALL.to_vec())
}

fn timing() -> impl Strategy<Value = TimingParams> {
    (1u64..12, 1u64..12).prop_map(|(d, dp)| TimingParams::new(d, dp.min(d)).unwrap())
}

fn honest_scenario() -> impl Strategy<Value = Scenario> {
    (protocol(), 1usize..6, 1usize..5, timing(), 1u32..5, 0u32..4, any::<bool>()).prop_map(
        |(p, n, c, t, writes, reads, worst)| {
            let mut s = Scenario::honest(p, n, c, t, GeneratorSpec::new(writes, reads));
            if worst {
                s.delay_mode = DelayMode::WorstCase;
            }
            s
        },
    )
}

fn action() -> impl Strategy<Value = CorruptionAction> {
    prop::sample::select(vec![
        CorruptionAction::WrongValue,
        CorruptionAction::WrongTimestamp,
        CorruptionAction::WrongBoth,
        CorruptionAction::Omit,
    ])
}

fn faulty_profile() -> impl Strategy<Value = ServerProfile> {
    prop_oneof![
        (0u64..200).prop_map(|at| ServerProfile::Crash { at: VirtualTime(at) }),
        (action(), prop::sample::select(vec![Trigger::Read, Trigger::Write, Trigger::Any]), 0.2f64..=1.0).prop_map(
            |(action, on, probability)| ServerProfile::Scripted {
                rules: vec![ScriptRule { probability, ..ScriptRule::always(on, action) }],
            }
        ),
    ]
}

fn adversarial_scenario() -> impl Strategy<Value = Scenario> {
    (protocol(), prop::collection::vec(faulty_profile(), 1..4), 1usize..4, timing(), 1u32..4, 1u32..4).prop_map(
        |(p, faulty, c, t, writes, reads)| {
            let mut s = Scenario::honest(p, faulty.len() + 1, c, t, GeneratorSpec::new(writes, reads));
            s.profiles[1..].clone_from_slice(&faulty);
            s
        },
    )
}

fn snapshots(trace: &Trace) -> impl Iterator<Item = &Body> {
    trace.bodies().filter(|b| matches!(b, Body::Snapshot { .. }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn honest_runs_are_clean(s in honest_scenario(), seed in any::<u64>()) {
        let trace = s.simulate(seed).unwrap();
        let v = check_all(&trace, &s.profiles);
        prop_assert!(v.passed(), "{v:?}");
        prop_assert_eq!(v.detection.events, 0);
        prop_assert_eq!(v.cost.aborts, 0);
        let history = History::from_trace(&trace);
        prop_assert!(history.ops.iter().all(|o| o.outcome.is_some()));
    }

    #[test]
    fn honest_state_stays_small_and_monotone(s in honest_scenario(), seed in any::<u64>()) {
        let trace = s.simulate(seed).unwrap();
        let mut last = BTreeMap::new();
        for b in snapshots(&trace) {
            let Body::Snapshot { servers, clients, .. } = b else { unreachable!() };
            for srv in servers {
                prop_assert!(srv.val.len() <= 1);
            }
            for c in clients {
                let prev = last.insert(c.id, c.last_ts).unwrap_or_default();
                prop_assert!(prev <= c.last_ts);
                prop_assert_eq!(c.honest.len(), s.n_servers());
            }
        }
    }

    #[test]
    fn faulty_servers_never_frame_honest_ones(s in adversarial_scenario(), seed in any::<u64>()) {
        let trace = s.simulate(seed).unwrap();
        let v = check_all(&trace, &s.profiles);
        prop_assert!(v.soundness_ok(), "{:?}", v.detection);
        prop_assert!(v.termination_ok(), "{:?}", v.termination);
        prop_assert!(v.validity_ok(), "{:?}", v.validity);
        prop_assert!(v.detection.completeness.missed.is_empty(), "{:?}", v.detection.completeness.missed);
    }

    #[test]
    fn replies_carry_their_sender(s in adversarial_scenario(), seed in any::<u64>()) {
        let trace = s.simulate(seed).unwrap();
        for r in &trace.records {
            let Body::Send { msg, .. } = &r.body else { continue };
            let claimed = match msg {
                Message::Reply(reply) => reply.j,
                Message::WriteAck { j, .. } => *j,
                _ => continue,
            };
            prop_assert_eq!(r.sender, Some(ProcessId::Server(claimed)));
        }
    }

    #[test]
    fn jsonl_round_trip(s in adversarial_scenario(), seed in any::<u64>()) {
        let trace = s.simulate(seed).unwrap();
        let text = trace.to_jsonl();
        let back = Trace::from_jsonl(&text).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn deterred_rational_servers_stay_honest(
        p in protocol(),
        extra in 0.0f64..0.5,
        gain in 0.5f64..4.0,
        loss in 0.5f64..4.0,
        seed in any::<u64>(),
    ) {
        let payoffs = PayoffParams::server(gain, loss).unwrap();
        let threshold = ratreg::game::attack_threshold(&payoffs).unwrap();
        let theta = (threshold + extra * (1.0 - threshold)).max(threshold + 1e-9).min(1.0);
        let rational = ServerProfile::Rational { belief: Belief::new(theta).unwrap(), payoffs, action: None };
        let mut s = Scenario::honest(p, 3, 3, TimingParams::new(4, 2).unwrap(), GeneratorSpec::new(3, 3));
        s.profiles[1] = rational.clone();
        s.profiles[2] = rational;
        let trace = s.simulate(seed).unwrap();
        let v = check_all(&trace, &s.profiles);
        prop_assert_eq!(v.cost.corrupted_messages, 0);
        prop_assert_eq!(v.cost.omitted_messages, 0);
        prop_assert!(v.passed());
        let invalid = History::from_trace(&trace)
            .ops
            .iter()
            .filter(|o| matches!(o.outcome, Some(Outcome::Read(ReadOutcome::Abort))))
            .count();
        prop_assert_eq!(invalid, 0);
    }
}
