mod common;

use proptest::prelude::*;
use sha2::{Digest, Sha256};

use common::*;
use vlasov_dlr::checkpoint::{decode, encode, load, save, Checkpoint, Reference, VERSION};
use vlasov_dlr::dg::Weight;
use vlasov_dlr::lowrank::LowRankState;
use vlasov_dlr::Error;

fn sample(state: LowRankState) -> Checkpoint {
    Checkpoint {
        t: 0.1 + f64::EPSILON,
        step: 1234,
        reference: Reference { mass: 4.0 * std::f64::consts::PI, momentum: vec![1e-17, -3.5], total_energy: 0.7 },
        state,
    }
}

fn reseal(body: &[u8]) -> Vec<u8> {
    let mut out = body.to_vec();
    out.extend_from_slice(&Sha256::digest(body)[..8]);
    out
}

fn assert_same(a: &Checkpoint, b: &Checkpoint) {
    assert_eq!(a.t.to_bits(), b.t.to_bits());
    assert_eq!(a.step, b.step);
    assert_eq!(a.reference, b.reference);
    let (sa, sb) = (&a.state, &b.state);
    assert_eq!(sa.m, sb.m);
    assert_eq!(sa.weight, sb.weight);
    assert_eq!(sa.x.coefs, sb.x.coefs);
    assert_eq!(sa.s, sb.s);
    assert_eq!(sa.v.coefs, sb.v.coefs);
    for (p, q) in [(sa.space_x(), sb.space_x()), (sa.space_v(), sb.space_v())] {
        assert_eq!(**p.mesh(), **q.mesh());
        assert_eq!(p.degree(), q.degree());
        assert_eq!(p.n_quad(), q.n_quad());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn round_trip_is_bitwise(seed in any::<u64>(), m in 0usize..=2, extra in 1usize..4) {
        let weight = if m > 0 { Weight::Gaussian } else { Weight::Unweighted };
        let mut r = rng(seed);
        let state = random_state(&mut r, &refined(1, 6, 2), &velocity_1d(10, 2), m + extra, m, weight);
        let ck = sample(state);
        let back = decode(&encode(&ck)).unwrap();
        assert_same(&ck, &back);
        prop_assert_eq!(encode(&back), encode(&ck));
    }
}

#[test]
fn refined_meshes_survive_a_file_round_trip() {
    let mut r = rng(2);
    let sx = refined(2, 4, 2);
    let sv = refined(2, 4, 1);
    let ck = sample(random_state(&mut r, &sx, &sv, 4, 1, Weight::Gaussian));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    save(&path, &ck).unwrap();
    let back = load(&path).unwrap();
    assert_same(&ck, &back);
    assert_eq!(back.state.space_x().mesh().faces().len(), sx.mesh().faces().len());
    assert!(!path.with_extension("tmp").exists());
}

#[test]
fn damaged_files_are_rejected() {
    let mut r = rng(3);
    let bytes = encode(&sample(random_state(&mut r, &space_1d(4, 1), &velocity_1d(6, 1), 3, 1, Weight::Gaussian)));
    let is_checkpoint_error = |res: vlasov_dlr::Result<Checkpoint>| matches!(res, Err(Error::Checkpoint(_)));

    assert!(is_checkpoint_error(decode(&bytes[..bytes.len() / 2])));
    assert!(is_checkpoint_error(decode(&bytes[..5])));
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(is_checkpoint_error(decode(&flipped)));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(is_checkpoint_error(decode(&magic)));

    // a well-formed file from another format version
    let mut body = bytes[..bytes.len() - 8].to_vec();
    body[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
    match decode(&reseal(&body)) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
        other => panic!("expected a version error, got {other:?}"),
    }

    // trailing data inside the checksummed body
    let mut body = bytes[..bytes.len() - 8].to_vec();
    body.push(0);
    assert!(is_checkpoint_error(decode(&reseal(&body))));
}
