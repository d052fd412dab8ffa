//! Audit log integrity over a 1,000-entry chain.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zksense::audit::{
    parse_entries, summarize, verify_chain, Anchor, AuditLog, ChainState, ChainVerifier, EntryFields, SigningKey,
};
use zksense::policy::{ActionRecord, Decision};
use zksense::zkp::Felt;

const N: usize = 1000;

fn key() -> SigningKey {
    SigningKey::from_bytes(&SigningKey::generate(11)).unwrap()
}

fn fields(i: usize, rng: &mut ChaCha8Rng) -> EntryFields {
    let decision = Decision::ALL[rng.random_range(0..4)];
    let u_q = rng.random_range(0..=128u32);
    let zone = ["A", "B", "C"][rng.random_range(0..3)].to_string();
    EntryFields {
        ts: 1_700_000_000_000 + i as u64 * 250,
        site_id: "site-0".into(),
        zone: zone.clone(),
        action: ActionRecord {
            zone,
            target: "occupant".into(),
            decision,
            basis: vec![if decision == Decision::Abstain { "below-threshold" } else { "activity" }.into()],
            confidence: u_q as f64 / 128.0,
        },
        u: u_q as f64 / 128.0,
        class: rng.random_range(0..5),
        label: Some(rng.random_range(0..5)),
        c: Felt::new(rng.random()),
        h_theta: Felt::new(0xabcdef),
        t_win: i as u64,
        pi_size: 7_000_000,
        batch: 1,
        verified: true,
    }
}

fn build(n: usize) -> AuditLog {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut log = AuditLog::in_memory();
    let k = key();
    for i in 0..n {
        log.append(fields(i, &mut rng), &k).unwrap();
    }
    log
}

fn join(lines: &[String]) -> Vec<u8> {
    lines.iter().flat_map(|l| l.bytes().chain([b'\n'])).collect()
}

#[test]
fn file_backed_log_verifies_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = key();
    let mut log = AuditLog::open(&path).unwrap();
    for i in 0..N / 2 {
        log.append(fields(i, &mut rng), &k).unwrap();
    }
    drop(log);
    let mut log = AuditLog::open(&path).unwrap();
    for i in N / 2..N {
        log.append(fields(i, &mut rng), &k).unwrap();
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes, log.text().into_bytes());
    let anchor = log.anchor();
    anchor.save(&dir.path().join("head.json")).unwrap();
    let anchor = Anchor::load(&dir.path().join("head.json")).unwrap();
    let r = verify_chain(&bytes, &k, Some(&anchor));
    assert!(r.valid && r.entries == N, "{r:?}");
    let entries = parse_entries(&log.text()).unwrap();
    let s = summarize(&entries);
    assert_eq!(s.windows, N);
    assert_eq!(s.abstained, entries.iter().filter(|e| e.action.decision == Decision::Abstain).count());
    assert_eq!(s.proof_bytes_per_window, 7_000_000.0);
}

#[test]
fn sampled_byte_mutations_are_located() {
    let log = build(N);
    let k = key();
    let anchor = log.anchor();
    let bytes = log.text().into_bytes();
    let mut starts = vec![0usize];
    let mut states = vec![ChainState::genesis()];
    for l in log.lines() {
        starts.push(starts.last().unwrap() + l.len() + 1);
        states.push(states.last().unwrap().after(l));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..5000 {
        let i = rng.random_range(0..N);
        let line = &bytes[starts[i]..starts[i + 1]];
        let p = rng.random_range(0..line.len());
        let mut mutated = line.to_vec();
        if rng.random_bool(0.5) {
            mutated[p] ^= rng.random_range(1..=255u8);
        } else {
            mutated.remove(p);
        }
        let mut v = ChainVerifier::resume(&k, states[i]);
        if v.feed(&mutated) {
            v.feed(&bytes[starts[i + 1]..]);
        }
        let r = v.finish(Some(&anchor));
        assert_eq!(r.first_bad, Some(i), "entry {i} byte {p}");
    }
}

#[test]
fn resumed_verification_equals_full_verification() {
    let log = build(50);
    let k = key();
    let bytes = log.text().into_bytes();
    let mut state = ChainState::genesis();
    let mut offset = 0;
    for (i, l) in log.lines().iter().enumerate() {
        let mut v = ChainVerifier::resume(&k, state);
        v.feed(&bytes[offset..]);
        let r = v.finish(Some(&log.anchor()));
        assert!(r.valid && r.entries == 50, "resume at {i}");
        state = state.after(l);
        offset += l.len() + 1;
    }
    // chunked feeding
    let mut v = ChainVerifier::new(&k);
    for chunk in bytes.chunks(37) {
        assert!(v.feed(chunk));
    }
    assert!(v.finish(None).valid);
}

#[test]
fn every_entry_deletion_is_located() {
    let log = build(N);
    let k = key();
    let anchor = log.anchor();
    for i in (0..N).step_by(37).chain([N - 2, N - 1]) {
        let mut lines = log.lines().to_vec();
        lines.remove(i);
        let r = verify_chain(&join(&lines), &k, Some(&anchor));
        assert_eq!(r.first_bad, Some(i), "deleted {i}");
    }
}

#[test]
fn tail_truncation_needs_the_anchor() {
    let log = build(20);
    let k = key();
    let truncated = join(&log.lines()[..15]);
    assert!(verify_chain(&truncated, &k, None).valid);
    assert_eq!(verify_chain(&truncated, &k, Some(&log.anchor())).first_bad, Some(15));
    let mut extra = log.text().into_bytes();
    extra.extend_from_slice(log.lines()[19].as_bytes());
    extra.push(b'\n');
    assert_eq!(verify_chain(&extra, &k, Some(&log.anchor())).first_bad, Some(20));
}

#[test]
fn swapped_entries_are_located() {
    let log = build(30);
    let mut lines = log.lines().to_vec();
    lines.swap(10, 11);
    assert_eq!(verify_chain(&join(&lines), &key(), None).first_bad, Some(10));
}

#[test]
fn failed_append_leaves_log_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut log = AuditLog::open(&path).unwrap();
    log.append(fields(0, &mut rng), &key()).unwrap();
    let before = (log.len(), log.anchor());
    std::fs::remove_dir_all(dir.path()).unwrap();
    let err = log.append(fields(1, &mut rng), &key()).unwrap_err();
    assert!(matches!(err, zksense::Error::Append(_)));
    assert_eq!((log.len(), log.anchor()), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_single_byte_change_in_a_short_log_is_located(pos in 0usize..100_000, x in 1u8..=255, delete in any::<bool>()) {
        let log = build(40);
        let bytes = log.text().into_bytes();
        let p = pos % bytes.len();
        let mut m = bytes.clone();
        if delete {
            m.remove(p);
        } else {
            m[p] ^= x;
        }
        let entry = bytes[..p].iter().filter(|&&b| b == b'\n').count();
        let r = verify_chain(&m, &key(), Some(&log.anchor()));
        prop_assert_eq!(r.first_bad, Some(entry));
    }
}
