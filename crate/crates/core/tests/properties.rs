//! Property tests over grammar-drawn inputs: round-trip identities,
//! canonicalization invariances and the step-up procedure's ordering laws.

use proptest::prelude::*;

use helm_lm_core::helm::{
    canonical_key, has_duplicate_connection, parse_helm, serialize_helm, Connection, HelmSequence,
    Monomer, Polymer, PolymerKind, RGroup,
};
use helm_lm_core::stats::bh_fdr;
use helm_lm_core::tokenizer::{CompressionMap, Vocabulary};

fn monomer_strategy() -> impl Strategy<Value = Monomer> {
    prop_oneof![
        proptest::char::range('A', 'Z').prop_map(Monomer::natural),
        "[a-zA-Z0-9]{2,4}".prop_map(Monomer::coded),
    ]
}

fn polymer_strategy(kind: PolymerKind, number: u32) -> impl Strategy<Value = Polymer> {
    let len = if kind == PolymerKind::Chem { 1..=1usize } else { 1..=6usize };
    proptest::collection::vec(monomer_strategy(), len).prop_map(move |monomers| Polymer {
        kind,
        number,
        monomers,
    })
}

fn rgroup_strategy() -> impl Strategy<Value = RGroup> {
    prop_oneof![Just(RGroup::R1), Just(RGroup::R2), Just(RGroup::R3)]
}

prop_compose! {
    fn sequence_strategy()(
        n_peptides in 1..3u32,
        chem in proptest::bool::ANY,
    )(
        polymers in {
            let mut parts: Vec<BoxedStrategy<Polymer>> = (1..=n_peptides)
                .map(|i| polymer_strategy(PolymerKind::Peptide, i).boxed())
                .collect();
            if chem {
                parts.push(polymer_strategy(PolymerKind::Chem, 1).boxed());
            }
            parts
        },
        raw_connections in proptest::collection::vec(
            (0..8usize, 0..8usize, 0..8usize, 0..8usize, rgroup_strategy(), rgroup_strategy()),
            0..4,
        ),
        version in proptest::option::of(Just("V2.0".to_string())),
    ) -> HelmSequence {
        // Resolve raw index tuples into valid, duplicate-free connections.
        let mut connections: Vec<Connection> = Vec::new();
        for (sp, tp, si, ti, sr, tr) in raw_connections {
            let sp = &polymers[sp % polymers.len()];
            let tp = &polymers[tp % polymers.len()];
            let candidate = Connection {
                source_polymer: sp.id(),
                target_polymer: tp.id(),
                source_index: 1 + si % sp.monomers.len(),
                source_rgroup: sr,
                target_index: 1 + ti % tp.monomers.len(),
                target_rgroup: tr,
            };
            connections.push(candidate);
            if has_duplicate_connection(&connections) {
                connections.pop();
            }
        }
        HelmSequence {
            polymers,
            connections,
            groups: String::new(),
            annotations: String::new(),
            version_tag: version,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parse_serialize_round_trip(seq in sequence_strategy()) {
        let text = serialize_helm(&seq);
        let parsed = parse_helm(&text).expect("serializer output must parse");
        prop_assert_eq!(&parsed, &seq);
        prop_assert_eq!(serialize_helm(&parsed), text);
    }

    #[test]
    fn canonical_key_invariant_under_renumbering_and_order(seq in sequence_strategy()) {
        let base = canonical_key(&seq);

        // Renumber polymers (shift peptide numbers up) and rename the
        // connections consistently.
        let mut renumbered = seq.clone();
        let mut mapping = Vec::new();
        for p in &mut renumbered.polymers {
            let old = p.id();
            if p.kind == PolymerKind::Peptide {
                p.number += 7;
            }
            mapping.push((old, p.id()));
        }
        for c in &mut renumbered.connections {
            for (old, new) in &mapping {
                if &c.source_polymer == old {
                    c.source_polymer = new.clone();
                }
                if &c.target_polymer == old {
                    c.target_polymer = new.clone();
                }
            }
        }
        prop_assert_eq!(canonical_key(&renumbered), base.clone());

        // Reverse the connection list.
        let mut reordered = seq.clone();
        reordered.connections.reverse();
        prop_assert_eq!(canonical_key(&reordered), base.clone());

        // Flip every connection's endpoints.
        let mut flipped = seq;
        for c in &mut flipped.connections {
            std::mem::swap(&mut c.source_polymer, &mut c.target_polymer);
            std::mem::swap(&mut c.source_index, &mut c.target_index);
            std::mem::swap(&mut c.source_rgroup, &mut c.target_rgroup);
        }
        prop_assert_eq!(canonical_key(&flipped), base);
    }

    #[test]
    fn tokenizer_round_trip_and_compression_bound(seq in sequence_strategy()) {
        let text = serialize_helm(&seq);
        let vocab = Vocabulary::build(std::slice::from_ref(&text), &CompressionMap::default_paper())
            .expect("grammar text never collides with markers");
        let tokens = vocab.encode(&text);
        prop_assert!(tokens.len() <= text.chars().count());
        prop_assert_eq!(vocab.decode(&tokens).expect("no specials"), text);
    }

    #[test]
    fn bh_adjusted_dominates_and_is_monotone(
        ps in proptest::collection::vec(0.0f64..=1.0, 1..24),
        q in 0.01f64..0.2,
    ) {
        let result = bh_fdr(&ps, q).expect("valid p-values");
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
        let mut previous = 0.0f64;
        for &i in &order {
            let adjusted = result.adjusted[i];
            prop_assert!(adjusted >= ps[i] - 1e-12, "adjusted below raw");
            prop_assert!(adjusted <= 1.0 + 1e-12);
            prop_assert!(adjusted >= previous - 1e-12, "not monotone in sorted order");
            previous = adjusted;
        }
        // Rejection is downward closed in sorted order.
        let mut rejecting = true;
        for &i in &order {
            if !result.reject[i] {
                rejecting = false;
            }
            prop_assert!(!(result.reject[i] && !rejecting), "re-rejection after acceptance");
        }
    }
}
