use std::collections::BTreeSet;

use mvforge_core::pairgen::{corpus_pairs, FilterCounters, GroundTruth, PairGenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask(cols: &BTreeSet<usize>) -> u32 {
    cols.iter().map(|&c| 1u32 << c).sum()
}

/// Counts negatives by walking every bitmask of the table's columns.
fn brute_force(n: usize, truths: &[BTreeSet<usize>]) -> usize {
    let gt_masks: BTreeSet<u32> = truths.iter().map(mask).collect();
    gt_masks
        .iter()
        .map(|&g| {
            (1u32..1 << n)
                .filter(|&m| m.count_ones() == g.count_ones() && !gt_masks.contains(&m))
                .count()
        })
        .sum()
}

fn random_truth(rng: &mut ChaCha8Rng, n: usize) -> BTreeSet<usize> {
    let size = rng.gen_range(1..=n.min(4));
    let mut cols = BTreeSet::new();
    while cols.len() < size {
        cols.insert(rng.gen_range(0..n));
    }
    cols
}

#[test]
fn hundred_random_tables_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counters = FilterCounters::default();
    let mut expected_total = 0;
    for t in 0..100 {
        let n = rng.gen_range(3..=10);
        let k = rng.gen_range(1..=3);
        let truths: Vec<BTreeSet<usize>> = (0..k).map(|_| random_truth(&mut rng, n)).collect();
        let gts: Vec<GroundTruth> = truths
            .iter()
            .map(|c| GroundTruth {
                columns: c.clone(),
                chart_type: None,
            })
            .collect();
        let pairs = corpus_pairs(&format!("t{t}"), n, &gts, &PairGenConfig::default(), &mut counters, &mut rng);
        let expected = brute_force(n, &truths);
        assert_eq!(pairs.len(), expected, "table {t}: n={n} truths={truths:?}");
        expected_total += expected;

        let truth_set: BTreeSet<&BTreeSet<usize>> = truths.iter().collect();
        let mut seen = BTreeSet::new();
        for p in &pairs {
            let (pos, neg) = (p.pos.column_set(), p.neg.column_set());
            assert_eq!(pos.len(), neg.len());
            assert!(truth_set.contains(&pos));
            assert!(!truth_set.contains(&neg));
            assert!(seen.insert((mask(&pos), mask(&neg))), "duplicate pair");
        }
    }
    assert_eq!(counters.pairs, expected_total);
    assert_eq!(counters.tables_seen, 100);
    assert!(counters.is_balanced());
}

#[test]
fn eleven_column_tables_are_skipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counters = FilterCounters::default();
    let gts = vec![
        GroundTruth {
            columns: BTreeSet::from([0, 1]),
            chart_type: None,
        },
        GroundTruth {
            columns: BTreeSet::from([3]),
            chart_type: None,
        },
    ];
    let pairs = corpus_pairs("wide", 11, &gts, &PairGenConfig::default(), &mut counters, &mut rng);
    assert!(pairs.is_empty());
    assert_eq!(counters.tables_skipped_wide, 1);
    assert_eq!(counters.charts_in_skipped_tables, 2);
    assert_eq!(counters.pairs, 0);
    assert!(counters.is_balanced());
}

#[test]
fn capped_negatives_are_a_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gts = vec![GroundTruth {
        columns: BTreeSet::from([1, 2]),
        chart_type: None,
    }];
    let mut c = FilterCounters::default();
    let full = corpus_pairs("t", 8, &gts, &PairGenConfig::default(), &mut c, &mut rng);
    let capped = corpus_pairs(
        "t",
        8,
        &gts,
        &PairGenConfig {
            cap_per_ground_truth: Some(5),
        },
        &mut c,
        &mut rng,
    );
    assert_eq!(full.len(), 27);
    assert_eq!(capped.len(), 5);
    assert!(capped.iter().all(|p| full.contains(p)));
}
