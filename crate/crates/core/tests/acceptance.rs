//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p janus-auth --test acceptance`.

mod support;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use janus_auth::authproto::{
    defer_for_rollover, AuthConfig, AuthSession, DiagnosticKind, Endpoint, Inbound,
    LocalIdentity, Outgoing, SessionState,
};
use janus_auth::bitcodec::{AuthAdb, UnicastPacket, UNICAST_CARGO_LEN};
use janus_auth::channelsim::{run_scenario, AdversaryKind, DeviceConfig, Scenario};
use janus_auth::keystore::{analytic_false_accept_rate, LongTermKeyRecord};
use janus_auth::time::add_secs;
use janus_auth::unicast::{analytic_ambiguity_rate, receive_unicast, send_unicast, UnicastOutcome};
use janus_auth::{
    BaselinePacket, ClockDescriptor, CodecError, JanusHeader, KeyMaterial, KeySlot, KeyStore,
    Mmsi, Rc5, Rc5Variant,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::rc5_ref::RefRc5;

const SLOT: KeySlot = KeySlot {
    class_user_id: 16,
    application_type: 3,
};

type Criterion = (&'static str, fn() -> Verdict, Option<Duration>);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(0x4a41_4e55_5300);
    r.set_stream(stream);
    r
}

fn random_start(rng: &mut impl Rng) -> DateTime<Utc> {
    // 2026-01-01 .. 2027-01-01
    let secs = rng.gen_range(1_767_225_600i64..1_798_761_600);
    let ms = rng.gen_range(0..1000u32);
    DateTime::from_timestamp(secs, ms * 1_000_000).unwrap()
}

fn random_header(rng: &mut impl Rng) -> JanusHeader {
    JanusHeader {
        version: rng.gen_range(0..16),
        mobility: rng.gen(),
        schedule: rng.gen(),
        txrx: rng.gen(),
        forward: rng.gen(),
        class_user_id: rng.gen(),
        application_type: rng.gen_range(0..64),
    }
}

fn endpoint_pair(start: DateTime<Utc>, key_seed: u64) -> (Endpoint, Endpoint) {
    let (a, b) = (Mmsi::new(244_000_010).unwrap(), Mmsi::new(244_000_020).unwrap());
    let key = KeyMaterial::generate_longterm(&mut ChaCha8Rng::seed_from_u64(key_seed));
    let epoch = add_secs(start, -86_400.0);
    let mk = |me: Mmsi, peer: Mmsi, cd: u8| {
        let mut store = KeyStore::new();
        store
            .insert_longterm(LongTermKeyRecord::new(SLOT, key.clone(), epoch, Some(peer)))
            .unwrap();
        let id = LocalIdentity {
            mmsi: me,
            clock_descriptor: ClockDescriptor::new(cd).unwrap(),
        };
        Endpoint::new(id, AuthConfig::default(), store)
    };
    (mk(a, b, 3), mk(b, a, 3))
}

/// Challenge at `t`, response 2.5 s later, established 2.5 s after that.
fn establish(a: &mut Endpoint, b: &mut Endpoint, t: DateTime<Utc>) -> Option<DateTime<Utc>> {
    let ch = a.start_challenge(SLOT, t).ok()?;
    let tb = add_secs(t, 2.5);
    let (_, reply) = b.receive(&ch.to_bytes(), tb);
    let ta = add_secs(tb, 2.5);
    let (inb, _) = a.receive(&reply.first()?.to_bytes(), ta);
    matches!(inb, Inbound::Established(_)).then_some(ta)
}

fn codec_soundness() -> Verdict {
    let mut rng = rng(1);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let p = BaselinePacket::new(random_header(&mut rng), rng.gen_range(0..1u64 << 34));
        let back = p.encode_bytes().and_then(|b| BaselinePacket::decode_bytes(&b));
        mismatches += usize::from(back.as_ref() != Ok(&p));

        let u = UnicastPacket {
            header: random_header(&mut rng),
            cargo_len: UNICAST_CARGO_LEN,
            routing_id: rng.gen_range(0..1 << 24),
            syn: rng.gen(),
            ack: rng.gen(),
            encrypted_payload: rng.gen(),
            hmac: rng.gen(),
        };
        let back = u.encode().and_then(|b| UnicastPacket::decode(&b));
        mismatches += usize::from(back.as_ref() != Ok(&u));
    }
    let (mut flips, mut detected) = (0, 0);
    for _ in 0..100 {
        let p = BaselinePacket::new(random_header(&mut rng), rng.gen_range(0..1u64 << 34));
        let word = p.encode().unwrap();
        for bit in 1..=56 {
            flips += 1;
            let hit = word ^ (1u64 << (64 - bit));
            detected += usize::from(matches!(
                BaselinePacket::decode(hit),
                Err(CodecError::CrcMismatch { .. })
            ));
        }
    }
    verdict(
        mismatches == 0 && detected == flips,
        format!("20000 round trips, {mismatches} mismatches; {detected}/{flips} flips detected"),
    )
}

fn cipher_correctness() -> Verdict {
    let mut rng = rng(2);
    let (mut trips, mut trip_fail, mut vectors, mut vec_fail) = (0, 0, 0, 0);
    for w in [16u32, 32, 64] {
        let bytes = (w / 4) as usize;
        for i in 0..1_100 {
            let mut key = vec![0u8; rng.gen_range(0..=255)];
            rng.fill_bytes(&mut key);
            let mut block = vec![0u8; bytes];
            rng.fill_bytes(&mut block);
            let lib = Rc5::new(Rc5Variant::new(w, 255, key.len() as u8).unwrap(), &key).unwrap();
            let mut ct = block.clone();
            lib.encrypt_block(&mut ct).unwrap();
            if i < 1_000 {
                trips += 1;
                let mut pt = ct.clone();
                lib.decrypt_block(&mut pt).unwrap();
                trip_fail += usize::from(pt != block);
            } else {
                vectors += 1;
                let reference = RefRc5::new(w, 255, &key);
                vec_fail += usize::from(ct != reference.encrypt(&block));
                vec_fail += usize::from(reference.decrypt(&ct) != block);
            }
        }
    }
    verdict(
        trip_fail == 0 && vec_fail == 0,
        format!(
            "{trips} round trips ({trip_fail} bad), {vectors} reference vectors ({vec_fail} bad), 255 rounds"
        ),
    )
}

fn session_key_agreement() -> Verdict {
    let mut rng = rng(3);
    let (mut agreed, mut two_packets) = (0, 0);
    let runs = 1_000;
    for seed in 0..runs {
        let mut s = Scenario::pair(rng.gen_range(1.0..=10_000.0), seed);
        s.channel.start = random_start(&mut rng).to_rfc3339();
        s.channel.key_age_days = 30.0;
        s.channel.stop_time_s = 200.0;
        for d in s.device.values_mut() {
            d.clock_offset_s = rng.gen_range(-10.0..=10.0);
            d.clock_drift = rng.gen_range(-1e-6..=1e-6);
            d.clock_descriptor = 1;
        }
        let out = run_scenario(&s).unwrap();
        let link = &out.metrics.links[0];
        agreed += usize::from(link.session_keys_equal == Some(true));
        two_packets += usize::from(link.packets_to_establish == Some(2));
    }
    verdict(
        agreed == runs as usize && two_packets == runs as usize,
        format!("{agreed}/{runs} identical keys, {two_packets}/{runs} in two packets"),
    )
}

fn replay_rejection() -> Verdict {
    let mut rng = rng(4);
    let runs = 1_000;
    let (mut injections, mut successes, mut changes, mut honest) = (0, 0, 0, 0);
    for seed in 0..runs {
        let d = rng.gen_range(100.0..=8_000.0);
        let mut s = Scenario::pair(d, seed);
        s.channel.start = random_start(&mut rng).to_rfc3339();
        s.channel.stop_time_s = 400.0;
        s.device.get_mut("A").unwrap().renew = true;
        s.device.insert(
            "M".into(),
            DeviceConfig {
                position_m: Some(rng.gen_range(0.0..d)),
                adversary: Some(AdversaryKind::Replay),
                replay_delay_s: rng.gen_range(1.0..=120.0),
                ..DeviceConfig::default()
            },
        );
        let m = run_scenario(&s).unwrap().metrics;
        honest += usize::from(m.links[0].renewal_confirmed);
        injections += m.adversary_injections;
        successes += m.adversary_successes;
        changes += m.adversary_state_changes;
    }

    // one window later, same position in the window
    let trials = 1_000;
    let mut rejected = 0;
    for i in 0..trials {
        let t = defer_for_rollover(random_start(&mut rng), AuthConfig::default().rollover_offset_s);
        let (mut a, mut b) = endpoint_pair(t, i);
        let ch = a.start_challenge(SLOT, t).unwrap().to_bytes();
        let (inb, _) = b.receive(&ch, add_secs(t, 2.0));
        if !matches!(inb, Inbound::Responded { .. }) {
            continue;
        }
        b.drain_diagnostics();
        let before = b.store().to_text();
        let (inb, reply) = b.receive(&ch, add_secs(t, 6.0 * 86_400.0 + 2.0));
        let replay_diag = b
            .drain_diagnostics()
            .iter()
            .any(|d| d.kind == DiagnosticKind::Replay);
        rejected += usize::from(
            matches!(inb, Inbound::Dropped)
                && reply.is_empty()
                && replay_diag
                && b.store().to_text() == before,
        );
    }
    verdict(
        successes == 0 && changes == 0 && honest == runs as usize && rejected == trials as usize,
        format!(
            "{injections} replays over {runs} exchanges: {successes} authentications, {changes} state changes; \
             {rejected}/{trials} next-window replays rejected"
        ),
    )
}

fn forgery_bound() -> Verdict {
    let mut rng = rng(5);
    let now = random_start(&mut rng);
    let mut store = KeyStore::new();
    let key = KeyMaterial::generate_longterm(&mut rng);
    store
        .insert_longterm(LongTermKeyRecord::new(SLOT, key, now, Some(Mmsi::new(244_000_010).unwrap())))
        .unwrap();
    let me = LocalIdentity {
        mmsi: Mmsi::new(244_000_020).unwrap(),
        clock_descriptor: ClockDescriptor::new(3).unwrap(),
    };
    let window = 20.0;
    let mut responder = AuthSession::responder(1, me, AuthConfig::with_window(window));
    let header = JanusHeader::new(SLOT.class_user_id, SLOT.application_type);
    let trials = 1_000_000u32;
    let mut accepted = 0u32;
    for _ in 0..trials {
        let adb = AuthAdb {
            encrypted_block: rng.gen(),
            syn: true,
            ack: false,
        };
        let forged = BaselinePacket::new(header, adb.to_adb());
        accepted += u32::from(responder.handle_challenge(&forged, now, &mut store).is_some());
        responder.drain_diagnostics();
    }
    let rate = f64::from(accepted) / f64::from(trials);
    let analytic = analytic_false_accept_rate(1, window * 1e3);
    verdict(
        rate <= 1e-4,
        format!("{accepted}/{trials} accepted, rate {rate:.2e} (analytic {analytic:.2e}), 255 rounds"),
    )
}

fn ranging_accuracy() -> Verdict {
    let d = 5_000.0;
    // fractional steps so the points do not share millisecond phase
    let offsets: Vec<f64> = (0..9).map(|k| -100.0 + 199.9987 * f64::from(k) / 8.0).collect();
    let mut estimates = Vec::new();
    let mut missing = 0;
    for (i, da) in offsets.iter().enumerate() {
        for (j, db) in offsets.iter().enumerate() {
            let mut s = Scenario::pair(d, (i * offsets.len() + j) as u64);
            s.channel.current_mps = 1.5;
            s.channel.key_age_days = 30.0;
            s.channel.stop_time_s = 200.0;
            for (dev, off) in [("A", *da), ("B", *db)] {
                let dc = s.device.get_mut(dev).unwrap();
                dc.clock_offset_s = off;
                dc.clock_descriptor = 0;
            }
            match run_scenario(&s).unwrap().metrics.links[0].range_estimate_m {
                Some(r) => estimates.push(r),
                None => missing += 1,
            }
        }
    }
    let worst = estimates.iter().map(|r| (r - d).abs()).fold(0.0, f64::max);
    let lo = estimates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bound = 1.5 + 0.01;
    verdict(
        missing == 0 && worst <= bound && hi - lo <= 3.0,
        format!(
            "{} sweep points, {missing} without estimate, worst error {worst:.4} m (<= {bound} m), spread {:.4} m (<= 3.0 m)",
            estimates.len(),
            hi - lo
        ),
    )
}

fn renewal_integrity() -> Verdict {
    let mut rng = rng(7);
    let runs = 1_000;
    let mut good = 0;
    for seed in 0..runs {
        let mut s = Scenario::pair(rng.gen_range(100.0..=10_000.0), seed);
        s.channel.start = random_start(&mut rng).to_rfc3339();
        s.channel.stop_time_s = 300.0;
        s.device.get_mut("A").unwrap().renew = true;
        let link = &run_scenario(&s).unwrap().metrics.links[0];
        good += usize::from(
            link.renewal_confirmed
                && link.longterm_keys_equal == Some(true)
                && link.longterm_peers_bound == Some(true),
        );
    }

    let tampers = 10_000;
    let mut rejected = 0;
    let mut t = defer_for_rollover(random_start(&mut rng), 30.0);
    let (mut a, mut b) = endpoint_pair(t, 99);
    t = establish(&mut a, &mut b, t).expect("honest exchange");
    let k2 = KeyMaterial::generate_longterm(&mut rng);
    let frames = a.start_renewal(SLOT, k2).unwrap();
    let mut cargo: Vec<_> = frames
        .iter()
        .map(|f| match f {
            Outgoing::Cargo(c) => c.clone(),
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    let body_bits = cargo.iter().map(|c| c.body.len() * 8).sum::<usize>();
    for _ in 0..tampers {
        let bit = rng.gen_range(0..body_bits);
        let (frame, pos) = if bit < cargo[0].body.len() * 8 {
            (0, bit)
        } else {
            (1, bit - cargo[0].body.len() * 8)
        };
        cargo[frame].body[pos / 8] ^= 0x80 >> (pos % 8);
        t = add_secs(t, 1.0);
        let mut accepted = false;
        for c in &cargo {
            let (inb, _) = b.receive(&c.encode().unwrap(), t);
            accepted |= matches!(inb, Inbound::RenewalAccepted { .. });
        }
        cargo[frame].body[pos / 8] ^= 0x80 >> (pos % 8);
        rejected += usize::from(!accepted);
        if accepted {
            // a forged key got in; start over so later trials stay meaningful
            let fresh = endpoint_pair(t, rng.gen());
            (a, b) = fresh;
            t = establish(&mut a, &mut b, t).expect("honest exchange");
            cargo = a
                .start_renewal(SLOT, KeyMaterial::generate_longterm(&mut rng))
                .unwrap()
                .into_iter()
                .map(|f| match f {
                    Outgoing::Cargo(c) => c,
                    other => panic!("unexpected {other:?}"),
                })
                .collect();
        }
    }
    let rate = rejected as f64 / tampers as f64;
    let floor = 0.9 * 255.0 / 256.0;
    verdict(
        good == runs as usize && rate >= floor,
        format!(
            "{good}/{runs} renewals bound and identical; tamper rejection {rate:.4} (>= {floor:.4})"
        ),
    )
}

fn unicast_identification() -> Verdict {
    let mut rng = rng(8);
    let now = random_start(&mut rng);
    let me = Mmsi::new(244_100_000).unwrap();
    let peers: Vec<Mmsi> = (1..=64).map(|i| Mmsi::new(244_100_000 + i).unwrap()).collect();
    let keys: Vec<KeyMaterial> = peers
        .iter()
        .map(|_| {
            let mut k = vec![0u8; 32];
            rng.fill_bytes(&mut k);
            KeyMaterial::new(k).unwrap()
        })
        .collect();
    let mut receiver = KeyStore::new();
    for (p, k) in peers.iter().zip(&keys) {
        receiver.record_session(*p, k.clone(), now);
    }
    let senders: Vec<KeyStore> = keys
        .iter()
        .map(|k| {
            let mut s = KeyStore::new();
            s.record_session(me, k.clone(), now);
            s
        })
        .collect();
    let header = JanusHeader::new(SLOT.class_user_id, SLOT.application_type);

    let honest = 10_000;
    let (mut delivered, mut misattributed, mut ambiguous) = (0, 0, 0);
    for _ in 0..honest {
        let i = rng.gen_range(0..peers.len());
        let payload: u64 = rng.gen();
        let p = send_unicast(&senders[i], header, me, payload).unwrap();
        match receive_unicast(&receiver, &p, me).unwrap() {
            UnicastOutcome::Delivered { sender, payload: got } => {
                delivered += 1;
                misattributed += usize::from(sender != peers[i] || got != payload);
            }
            UnicastOutcome::Ambiguous(c) => {
                ambiguous += 1;
                misattributed += usize::from(!c.contains(&peers[i]));
            }
            _ => misattributed += 1,
        }
    }

    // forged traffic against the 63 keys that did not send it
    receiver.remove_session(peers[0]);
    let forged = 100_000u32;
    let mut matches = 0u64;
    for _ in 0..forged {
        let p = UnicastPacket {
            header: JanusHeader {
                schedule: true,
                ..header
            },
            cargo_len: UNICAST_CARGO_LEN,
            routing_id: me.routing_id(),
            syn: false,
            ack: true,
            encrypted_payload: rng.gen(),
            hmac: rng.gen(),
        };
        matches += match receive_unicast(&receiver, &p, me).unwrap() {
            UnicastOutcome::Delivered { .. } => 1,
            UnicastOutcome::Ambiguous(c) => c.len() as u64,
            _ => 0,
        };
    }
    let expected = analytic_ambiguity_rate(64);
    let mean = matches as f64 / f64::from(forged);
    let sigma = (63.0 * (1.0 / 256.0) * (255.0 / 256.0) / f64::from(forged)).sqrt();
    verdict(
        misattributed == 0 && (mean - expected).abs() <= 3.0 * sigma,
        format!(
            "{delivered} unique + {ambiguous} ambiguous of {honest}, {misattributed} misattributed; \
             forged false matches {mean:.4}/packet vs {expected:.4} ± {:.4}",
            3.0 * sigma
        ),
    )
}

fn overhead() -> Verdict {
    let t = defer_for_rollover(random_start(&mut rng(9)), 30.0);
    let (mut a, mut b) = endpoint_pair(t, 9);
    let clock = Instant::now();
    let done = establish(&mut a, &mut b, t).is_some()
        && b.responder(a.identity().mmsi).map(|s| s.state()) == Some(SessionState::Responded);
    let wall = clock.elapsed();

    let mut worst = 0.0f64;
    for (d, pd) in [(1.0, 0.0), (1500.0, 0.0), (5000.0, 0.0), (9999.0, 0.0), (3000.0, 0.1), (7000.0, 0.25)] {
        let mut s = Scenario::pair(d, 1);
        s.channel.processing_delay_s = pd;
        s.channel.stop_time_s = 200.0;
        let link = &run_scenario(&s).unwrap().metrics.links[0];
        let want = 2.0 * (0.8 + d / 1500.0) + 2.0 * pd;
        let got = link.time_to_establish_s().unwrap_or(f64::INFINITY);
        worst = worst.max((got - want).abs());
    }
    verdict(
        done && wall < Duration::from_secs(1) && worst < 1e-6,
        format!(
            "full authentication {:.2} ms wall; virtual time off 2(0.8 s + d/c) + 2pd by at most {worst:.1e} s",
            wall.as_secs_f64() * 1e3
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("codec soundness", codec_soundness, Some(Duration::from_secs(5))),
        ("cipher correctness", cipher_correctness, Some(Duration::from_secs(60))),
        ("session-key agreement", session_key_agreement, None),
        ("replay rejection", replay_rejection, None),
        ("forgery bound", forgery_bound, Some(Duration::from_secs(600))),
        ("ranging accuracy", ranging_accuracy, None),
        ("renewal integrity", renewal_integrity, None),
        ("unicast sender identification", unicast_identification, None),
        ("authentication overhead", overhead, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let v = run();
        let took = clock.elapsed();
        let in_time = !limit.is_some_and(|l| took >= l);
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        let budget = limit.map_or(String::new(), |l| format!(" of {}s", l.as_secs()));
        println!(
            "{} {}. {name}: {} [{:.2}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            took.as_secs_f64(),
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
