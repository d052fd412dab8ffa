//! Binary Merkle tree over salted witness slots.

use super::field::Felt;
use super::sponge::{hash_in_domain, hash_pair, Domain};

/// Leaf digest of a blinded slot value.
pub fn leaf_digest(value: Felt, salt: Felt) -> Felt {
    hash_in_domain(Domain::MerkleLeaf, &[value, salt])
}

/// Padding leaf for the unused tail of the power-of-two layer.
pub fn padding_leaf() -> Felt {
    hash_in_domain(Domain::MerkleLeaf, &[])
}

/// Path length for a tree committing to `leaves` slots.
pub fn depth_for(leaves: usize) -> usize {
    leaves.max(1).next_power_of_two().trailing_zeros() as usize
}

#[derive(Clone, Debug)]
pub struct MerkleTree {
    /// `layers[0]` are the leaves, the last layer is the root.
    layers: Vec<Vec<Felt>>,
}

impl MerkleTree {
    pub fn from_leaves(mut leaves: Vec<Felt>) -> Self {
        let width = leaves.len().max(1).next_power_of_two();
        let mut real = leaves.len();
        let mut pad = padding_leaf();
        leaves.resize(width, pad);
        let mut layers = vec![leaves];
        while layers.last().map_or(0, Vec::len) > 1 {
            let prev = layers.last().unwrap();
            // all-padding subtrees share one digest per level
            let next_pad = hash_pair(pad, pad);
            let next = prev
                .chunks(2)
                .enumerate()
                .map(|(i, p)| if 2 * i >= real { next_pad } else { hash_pair(p[0], p[1]) })
                .collect();
            layers.push(next);
            real = real.div_ceil(2);
            pad = next_pad;
        }
        MerkleTree { layers }
    }

    pub fn root(&self) -> Felt {
        self.layers.last().unwrap()[0]
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Sibling digests from the leaf level up.
    pub fn path(&self, index: usize) -> Vec<Felt> {
        let mut idx = index;
        let mut path = Vec::with_capacity(self.depth());
        for layer in &self.layers[..self.layers.len() - 1] {
            path.push(layer[idx ^ 1]);
            idx >>= 1;
        }
        path
    }
}

/// Recomputes the root from a leaf digest and its authentication path.
pub fn root_from_path(index: usize, leaf: Felt, path: &[Felt]) -> Felt {
    let mut idx = index;
    let mut acc = leaf;
    for sib in path {
        acc = if idx & 1 == 0 { hash_pair(acc, *sib) } else { hash_pair(*sib, acc) };
        idx >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_path_authenticates() {
        let leaves: Vec<Felt> = (0..13u64).map(|i| leaf_digest(Felt::new(i), Felt::new(i * 7))).collect();
        let tree = MerkleTree::from_leaves(leaves.clone());
        assert_eq!(tree.depth(), depth_for(13));
        for (i, leaf) in leaves.iter().enumerate() {
            assert_eq!(root_from_path(i, *leaf, &tree.path(i)), tree.root());
        }
        let forged = leaf_digest(Felt::new(99), Felt::ZERO);
        assert_ne!(root_from_path(3, forged, &tree.path(3)), tree.root());
        assert_ne!(root_from_path(4, leaves[3], &tree.path(3)), tree.root());
    }

    #[test]
    fn single_leaf_tree_has_empty_path() {
        let tree = MerkleTree::from_leaves(vec![Felt::new(4)]);
        assert_eq!(tree.depth(), 0);
        assert!(tree.path(0).is_empty());
        assert_eq!(tree.root(), Felt::new(4));
    }
}
