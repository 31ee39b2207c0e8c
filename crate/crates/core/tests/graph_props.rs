mod support;

use std::collections::BTreeSet;

use memgraph::graph::{canonical_label, InterestCategory, RelationalMemoryGraph};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};

use support::{brute_force_members, random_build};

#[test]
fn random_builds_stay_valid_and_round_trip() {
    for seed in 0..200u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let steps = rng.gen_range(1..80);
        let g = random_build(&mut rng, steps, 20);
        assert!(g.validate().is_empty(), "seed {seed}: {:?}", g.validate());
        let back = RelationalMemoryGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g, "seed {seed}");
        assert_eq!(back.to_json(), g.to_json());
    }
}

#[test]
fn traversal_matches_edge_scan() {
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(1000 + seed);
        let g = random_build(&mut rng, 150, 30);
        let all: Vec<_> = g.interests().map(|i| i.id.clone()).collect();
        for _ in 0..100 {
            let size = rng.gen_range(0..=all.len());
            let subset: BTreeSet<_> = all.iter().cloned().choose_multiple(&mut rng, size).into_iter().collect();
            assert_eq!(g.memories_for_interests(&subset).unwrap(), brute_force_members(&g, &subset));
        }
    }
}

#[test]
fn delete_cascades_and_prunes() {
    let mut g = RelationalMemoryGraph::new("u");
    let a = support::add_memory(&mut g, 0);
    let b = support::add_memory(&mut g, 1);
    let lake = g.link_interest(&a, "lake", InterestCategory::Location).unwrap();
    g.link_interest(&b, "Lake", InterestCategory::Location).unwrap();
    let solo = g.link_interest(&a, "kayaking", InterestCategory::Activity).unwrap();
    g.delete_memory(&a).unwrap();
    assert!(g.interest(&solo).is_none());
    assert_eq!(g.members_of(&lake).unwrap().len(), 1);
    assert!(g.validate().is_empty());
}

#[test]
fn edge_closure_and_semantic_ownership() {
    let mut rng = StdRng::seed_from_u64(7);
    let g = random_build(&mut rng, 120, 25);
    for (m, i) in g.edges() {
        assert!(g.memory(m).is_some() && g.interest(i).is_some());
    }
    let ids: Vec<_> = g.memories().map(|m| m.id.clone()).collect();
    let owned = g.semantics_of(&ids).unwrap();
    for s in g.semantics() {
        let owners: Vec<_> = owned.iter().filter(|(_, nodes)| nodes.iter().any(|n| n.id == s.id)).collect();
        assert_eq!(owners.len(), 1);
        assert_eq!(owners[0].0, &s.parent_memory);
    }
}

proptest! {
    #[test]
    fn canonical_label_is_idempotent(raw in "\\PC{0,24}") {
        let once = canonical_label(&raw);
        prop_assert_eq!(canonical_label(&once), once.clone());
        prop_assert!(!once.starts_with(char::is_whitespace) && !once.ends_with(char::is_whitespace));
    }

    #[test]
    fn mutations_are_monotone(seed in any::<u64>(), extra in 1usize..20) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut g = random_build(&mut rng, 30, 15);
        let memories: BTreeSet<_> = g.memories().map(|m| m.id.clone()).collect();
        let semantics: BTreeSet<_> = g.semantics().map(|s| s.id.clone()).collect();
        let edges: BTreeSet<_> = g.edges().cloned().collect();
        for i in 0..extra {
            let m = support::add_memory(&mut g, 1000 + i as i64);
            g.link_interest(&m, support::LABELS[i % support::LABELS.len()], InterestCategory::Activity).unwrap();
        }
        prop_assert!(memories.iter().all(|m| g.memory(m).is_some()));
        prop_assert!(semantics.iter().all(|s| g.semantic(s).is_some()));
        let after: BTreeSet<_> = g.edges().cloned().collect();
        prop_assert!(edges.is_subset(&after));
    }

    #[test]
    fn labels_unique_after_random_links(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = random_build(&mut rng, 60, 31);
        let labels: BTreeSet<_> = g.interests().map(|i| i.label.clone()).collect();
        prop_assert_eq!(labels.len(), g.interest_count());
    }
}
