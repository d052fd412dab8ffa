//! Algebraic sponge hash over [`Felt`].
//!
//! The permutation follows the Poseidon layout: state width 3 (rate 2,
//! capacity 1), S-box `x^7`, 4 + 4 full rounds around 22 partial rounds, and
//! the circulant MDS matrix `circ(2, 1, 1)`. Round constants are drawn from a
//! fixed SplitMix64 stream so the whole construction is reproducible from
//! this file. The same permutation is re-expressed as constraints by
//! [`crate::zkp::gadgets`], so any change here must be mirrored there.
//!
//! Domain separation and input length live in the capacity element, so
//! inputs of different lengths or purposes never share an initial state.

use std::sync::OnceLock;

use super::field::Felt;

pub const WIDTH: usize = 3;
pub const RATE: usize = 2;
pub const FULL_ROUNDS: usize = 8;
pub const PARTIAL_ROUNDS: usize = 22;
pub const ROUNDS: usize = FULL_ROUNDS + PARTIAL_ROUNDS;
pub const SBOX_EXP: u64 = 7;

/// Digest of the empty input under the default domain.
pub const EMPTY_DIGEST: Felt = Felt::new(0x2b4c_1a8d_9547_e79d);

const CONSTANT_SEED: u64 = 0x5a4b_5345_4e53_4531;

/// Purpose tags absorbed into the capacity element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Domain {
    Hash = 0,
    MerkleLeaf = 1,
    MerkleNode = 2,
    Challenge = 3,
    Commitment = 4,
    Mac = 5,
    Bytes = 6,
}

/// Initial capacity value for a given domain and input length.
pub fn capacity_tag(domain: Domain, len: usize) -> Felt {
    Felt::new(((domain as u64) << 32) | (len as u64 & 0xFFFF_FFFF))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-round additive constants, one per state element.
pub fn round_constants() -> &'static [[Felt; WIDTH]; ROUNDS] {
    static RC: OnceLock<[[Felt; WIDTH]; ROUNDS]> = OnceLock::new();
    RC.get_or_init(|| {
        let mut s = CONSTANT_SEED;
        let mut rc = [[Felt::ZERO; WIDTH]; ROUNDS];
        for round in rc.iter_mut() {
            for c in round.iter_mut() {
                // rejection keeps the constants uniform over the field
                loop {
                    let v = splitmix64(&mut s);
                    if v < Felt::MODULUS {
                        *c = Felt::new(v);
                        break;
                    }
                }
            }
        }
        rc
    })
}

/// `true` for the four leading and four trailing rounds.
#[inline]
pub fn is_full_round(round: usize) -> bool {
    round < FULL_ROUNDS / 2 || round >= FULL_ROUNDS / 2 + PARTIAL_ROUNDS
}

#[inline]
pub fn sbox(x: Felt) -> Felt {
    let x2 = x * x;
    let x4 = x2 * x2;
    let x6 = x4 * x2;
    x6 * x
}

/// `circ(2, 1, 1)`: every output is the state sum plus its own input.
#[inline]
pub fn mds(state: [Felt; WIDTH]) -> [Felt; WIDTH] {
    let sum = state[0] + state[1] + state[2];
    [sum + state[0], sum + state[1], sum + state[2]]
}

pub fn permute(state: &mut [Felt; WIDTH]) {
    let rc = round_constants();
    for (round, consts) in rc.iter().enumerate() {
        for (s, c) in state.iter_mut().zip(consts) {
            *s += *c;
        }
        if is_full_round(round) {
            for s in state.iter_mut() {
                *s = sbox(*s);
            }
        } else {
            state[0] = sbox(state[0]);
        }
        *state = mds(*state);
    }
}

/// Sponge hash of a field-element sequence in the given domain.
pub fn hash_in_domain(domain: Domain, elements: &[Felt]) -> Felt {
    let mut state = [Felt::ZERO, Felt::ZERO, capacity_tag(domain, elements.len())];
    if elements.is_empty() {
        permute(&mut state);
        return state[0];
    }
    for chunk in elements.chunks(RATE) {
        for (s, e) in state.iter_mut().zip(chunk) {
            *s += *e;
        }
        permute(&mut state);
    }
    state[0]
}

/// Default-domain sponge hash.
pub fn sponge_hash(elements: &[Felt]) -> Felt {
    hash_in_domain(Domain::Hash, elements)
}

/// Two-to-one compression used for Merkle interior nodes.
pub fn hash_pair(left: Felt, right: Felt) -> Felt {
    hash_in_domain(Domain::MerkleNode, &[left, right])
}

/// Packs bytes 7 per element (little-endian), prefixed with the byte length.
pub fn pack_bytes(bytes: &[u8]) -> Vec<Felt> {
    let mut out = Vec::with_capacity(bytes.len() / 7 + 2);
    out.push(Felt::new(bytes.len() as u64));
    for chunk in bytes.chunks(7) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        out.push(Felt::new(u64::from_le_bytes(buf)));
    }
    out
}

/// Hash of an arbitrary byte string.
pub fn hash_bytes(bytes: &[u8]) -> Felt {
    hash_in_domain(Domain::Bytes, &pack_bytes(bytes))
}

/// Keyed hash: the key elements are absorbed ahead of the message.
pub fn keyed_hash(key: &[Felt], bytes: &[u8]) -> Felt {
    let mut input = key.to_vec();
    input.extend(pack_bytes(bytes));
    hash_in_domain(Domain::Mac, &input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn empty_input_hashes_to_declared_constant() {
        assert_eq!(sponge_hash(&[]), EMPTY_DIGEST);
    }

    #[test]
    fn sbox_is_seventh_power() {
        let x = Felt::new(123_456_789);
        assert_eq!(sbox(x), x.pow(SBOX_EXP));
    }

    #[test]
    fn length_is_domain_separated() {
        let a = Felt::new(5);
        assert_ne!(sponge_hash(&[a]), sponge_hash(&[a, Felt::ZERO]));
        assert_ne!(
            hash_in_domain(Domain::Hash, &[a, a]),
            hash_in_domain(Domain::MerkleNode, &[a, a])
        );
        assert_ne!(hash_bytes(&[1]), hash_bytes(&[1, 0]));
    }

    #[test]
    fn no_collisions_on_random_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = HashSet::with_capacity(100_000);
        let mut inputs = HashSet::with_capacity(100_000);
        while inputs.len() < 100_000 {
            let len = rng.random_range(1..=4);
            let v: Vec<Felt> = (0..len).map(|_| Felt::new(rng.random())).collect();
            if inputs.insert(v.clone()) {
                assert!(seen.insert(sponge_hash(&v)), "collision on {v:?}");
            }
        }
    }

    #[test]
    fn avalanche_on_single_element_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 2000;
        let mut flipped = 0u64;
        for _ in 0..trials {
            let mut v: Vec<Felt> = (0..4).map(|_| Felt::new(rng.random())).collect();
            let before = sponge_hash(&v);
            let i = rng.random_range(0..v.len());
            v[i] += Felt::ONE;
            let after = sponge_hash(&v);
            flipped += (before.as_u64() ^ after.as_u64()).count_ones() as u64;
        }
        let rate = flipped as f64 / (trials as f64 * 64.0);
        assert!(rate >= 0.45, "avalanche rate {rate}");
    }
}
