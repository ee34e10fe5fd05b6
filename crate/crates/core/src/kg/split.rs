use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{KgError, KnowledgeGraph, Result, Split, Triple, TypedDictionary};

/// Fractions of triples assigned to LRN, VLD, TUN, TST.
pub type SplitRatios = [f64; 4];

/// Roughly the Demographics proportions.
pub const DEFAULT_SPLIT_RATIOS: SplitRatios = [0.90, 0.033, 0.033, 0.034];

/// Evaluation split sizes for `n` triples; LRN absorbs rounding remainders.
pub(crate) fn split_sizes(n: usize, ratios: &SplitRatios) -> [usize; 4] {
    let mut eval = [1, 2, 3].map(|i| (n as f64 * ratios[i]).round() as usize);
    // Rounding all three up can overshoot when LRN's share is tiny.
    let mut excess = eval.iter().sum::<usize>().saturating_sub(n);
    for size in eval.iter_mut().rev() {
        let cut = excess.min(*size);
        *size -= cut;
        excess -= cut;
    }
    [n - eval.iter().sum::<usize>(), eval[0], eval[1], eval[2]]
}

/// Shuffle `triples` with `seed` and cut them into the four splits.
///
/// Triples whose head or tail would otherwise only be seen at evaluation time
/// are moved into LRN afterwards.
pub fn split_dataset(
    dictionary: TypedDictionary,
    triples: &[Triple],
    ratios: SplitRatios,
    seed: u64,
) -> Result<KnowledgeGraph> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0)
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(KgError::InvalidRatios(ratios));
    }
    if triples.len() < 4 {
        return Err(KgError::TooFewTriples(triples.len()));
    }
    let mut seen = HashSet::with_capacity(triples.len());
    for t in triples {
        if !seen.insert(*t) {
            return Err(KgError::DuplicateTriple(*t));
        }
    }

    let mut shuffled = triples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes = split_sizes(shuffled.len(), &ratios);

    let mut splits: [Vec<Triple>; 4] = Default::default();
    let mut rest = shuffled.into_iter();
    for (slot, &size) in splits.iter_mut().zip(sizes.iter()) {
        slot.extend(rest.by_ref().take(size));
    }

    let mut covered = vec![false; dictionary.num_entities()];
    for t in &splits[0] {
        covered[t.head.index()] = true;
        covered[t.tail.index()] = true;
    }
    let mut promoted = Vec::new();
    for split in [Split::Vld, Split::Tun, Split::Tst] {
        let kept: Vec<Triple> = std::mem::take(&mut splits[split.slot()])
            .into_iter()
            .filter(|t| {
                if covered[t.head.index()] && covered[t.tail.index()] {
                    true
                } else {
                    covered[t.head.index()] = true;
                    covered[t.tail.index()] = true;
                    promoted.push(*t);
                    false
                }
            })
            .collect();
        splits[split.slot()] = kept;
    }
    if !promoted.is_empty() {
        log::debug!("promoted {} triples with unseen entities into LRN", promoted.len());
    }
    splits[0].extend(promoted);
    KnowledgeGraph::new(dictionary, splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityEntry, EntityId, RelationEntry, RelationId, TypeId};
    use proptest::prelude::*;

    /// A dense ring graph: every entity appears in many triples.
    fn ring(n_entities: usize, n_triples: usize) -> (TypedDictionary, Vec<Triple>) {
        let entities = (0..n_entities)
            .map(|i| EntityEntry {
                name: format!("e{i}"),
                ty: TypeId(0),
            })
            .collect();
        let relations = (0..8)
            .map(|i| RelationEntry {
                name: format!("r{i}"),
                domain: TypeId(0),
                range: TypeId(0),
            })
            .collect();
        let dict = TypedDictionary::new(vec!["T".into()], entities, relations).unwrap();
        let triples = (0..n_triples)
            .map(|i| {
                Triple::new(
                    EntityId::from_index(i % n_entities),
                    RelationId::from_index(i / n_entities % 8),
                    EntityId::from_index((i * 7 + 1 + i / n_entities) % n_entities),
                )
            })
            .collect();
        (dict, triples)
    }

    #[test]
    fn sizes_follow_ratios_before_promotion() {
        assert_eq!(split_sizes(1000, &DEFAULT_SPLIT_RATIOS), [900, 33, 33, 34]);
        assert_eq!(split_sizes(10, &[1.0, 0.0, 0.0, 0.0]), [10, 0, 0, 0]);
        assert_eq!(split_sizes(4, &[0.0, 0.375, 0.375, 0.25]), [0, 2, 2, 0]);
    }

    #[test]
    fn dense_graph_keeps_ratio_sizes() {
        let (dict, triples) = ring(125, 1000);
        let kg = split_dataset(dict, &triples, DEFAULT_SPLIT_RATIOS, 7).unwrap();
        let sizes: Vec<_> = Split::ALL.iter().map(|&s| kg.split(s).len()).collect();
        assert_eq!(sizes, [900, 33, 33, 34]);
    }

    #[test]
    fn identity_ratios_put_everything_in_training() {
        let (dict, triples) = ring(10, 40);
        let kg = split_dataset(dict, &triples, [1.0, 0.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(kg.split(Split::Lrn).len(), 40);
        assert!(kg.split(Split::Tst).is_empty());
    }

    #[test]
    fn same_seed_same_split() {
        let (dict, triples) = ring(30, 300);
        let a = split_dataset(dict.clone(), &triples, DEFAULT_SPLIT_RATIOS, 11).unwrap();
        let b = split_dataset(dict.clone(), &triples, DEFAULT_SPLIT_RATIOS, 11).unwrap();
        let c = split_dataset(dict, &triples, DEFAULT_SPLIT_RATIOS, 12).unwrap();
        for s in Split::ALL {
            assert_eq!(a.split(s), b.split(s));
        }
        assert_ne!(a.split(Split::Lrn), c.split(Split::Lrn));
    }

    #[test]
    fn rejects_bad_input() {
        let (dict, triples) = ring(10, 40);
        assert!(matches!(
            split_dataset(dict.clone(), &triples[..3], DEFAULT_SPLIT_RATIOS, 0),
            Err(KgError::TooFewTriples(3))
        ));
        assert!(matches!(
            split_dataset(dict.clone(), &triples, [0.5, 0.5, 0.5, 0.0], 0),
            Err(KgError::InvalidRatios(_))
        ));
        let mut dup = triples.clone();
        dup.push(triples[0]);
        assert!(matches!(
            split_dataset(dict, &dup, DEFAULT_SPLIT_RATIOS, 0),
            Err(KgError::DuplicateTriple(_))
        ));
    }

    #[test]
    fn leaf_entities_are_promoted() {
        // Star: every spoke entity appears in exactly one triple.
        let entities = (0..21)
            .map(|i| EntityEntry {
                name: format!("e{i}"),
                ty: TypeId(0),
            })
            .collect();
        let relations = vec![RelationEntry {
            name: "r".into(),
            domain: TypeId(0),
            range: TypeId(0),
        }];
        let dict = TypedDictionary::new(vec!["T".into()], entities, relations).unwrap();
        let triples: Vec<_> = (1..21)
            .map(|i| Triple::new(EntityId(0), RelationId(0), EntityId(i)))
            .collect();
        let kg = split_dataset(dict, &triples, [0.25, 0.25, 0.25, 0.25], 5).unwrap();
        assert_eq!(kg.split(Split::Lrn).len(), 20);
    }

    proptest! {
        #[test]
        fn splits_partition_the_input(n in 4usize..400, seed in any::<u64>(), a in 0.0f64..0.3, b in 0.0f64..0.3) {
            let (dict, triples) = ring(12, n.min(12 * 8));
            let c = (1.0 - a - b) * 0.2;
            let ratios = [1.0 - a - b - c, a, b, c];
            let kg = split_dataset(dict, &triples, ratios, seed).unwrap();
            let mut all: Vec<Triple> = kg.all_triples().copied().collect();
            let mut expected = triples.clone();
            all.sort();
            expected.sort();
            prop_assert_eq!(all, expected);
        }
    }
}
