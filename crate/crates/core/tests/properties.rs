use proptest::prelude::*;

use scimind_core::debate::{check_convergence, consensus_score, DebateConfig};
use scimind_core::knowledge::{
    admit_entry, novelty_delta, relevance, EmbeddingVector, KnowledgeBase, KnowledgeEntry, Provenance,
};

fn vector(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-10.0f64..10.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| EmbeddingVector::new(v).unwrap())
}

fn entry(id: usize, v: EmbeddingVector) -> KnowledgeEntry {
    KnowledgeEntry::new(format!("e{id}"), v, "print(1)", "p", "general", Provenance::default()).unwrap()
}

proptest! {
    #[test]
    fn relevance_symmetric_bounded_scale_invariant(a in vector(8), b in vector(8), s in 0.01f64..100.0) {
        let r = relevance(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - relevance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((r - relevance(&a.scaled(s).unwrap(), &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn admitted_entry_makes_itself_a_duplicate(vs in prop::collection::vec(vector(6), 1..20)) {
        let mut kb = KnowledgeBase::new(6, 0.95).unwrap();
        for (i, v) in vs.into_iter().enumerate() {
            let before = kb.len();
            let a = admit_entry(&mut kb, entry(i, v.clone())).unwrap();
            prop_assert_eq!(kb.len(), before + usize::from(a.admitted));
            let d = novelty_delta(&kb, &v).unwrap().unwrap();
            if a.admitted {
                prop_assert!((d - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn convergence_needs_both_conditions(g0 in 0.0f64..1.0, g1 in 0.0f64..1.0, ut in 0.0f64..1.0, up in 0.0f64..1.0) {
        let cfg = DebateConfig::default();
        let c = check_convergence(g1, Some(g0), ut, up, &cfg);
        prop_assert_eq!(c, (g1 - g0).abs() < cfg.epsilon && ut.min(up) > cfg.gamma);
        prop_assert!(!check_convergence(g1, None, ut, up, &cfg));
    }

    #[test]
    fn consensus_between_utilities(ut in 0.0f64..1.0, up in 0.0f64..1.0, l in 0.0f64..=1.0) {
        let g = consensus_score(ut, up, l).unwrap();
        prop_assert!(g >= ut.min(up) - 1e-15 && g <= ut.max(up) + 1e-15);
    }
}
