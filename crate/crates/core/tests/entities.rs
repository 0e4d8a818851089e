use proptest::prelude::*;
use views_core::entities::{parse_entity_set, serialize_entity_set, EntitySet};
use views_core::metrics::{entity_f1, EntityMatchConfig};

fn surface() -> impl Strategy<Value = String> {
    proptest::string::string_regex(r#"[A-Za-zÀ-ÿ0-9 .'"{}\[\]:,\\-]{1,16}"#).unwrap()
}

fn entity_set() -> impl Strategy<Value = EntitySet> {
    let ty = proptest::sample::select(vec!["PERSON", "GPE", "ORG", "NORP", "FAC", "LOC", "EVENT", "WORK_OF_ART"]);
    proptest::collection::vec((ty, proptest::collection::vec(surface(), 1..4)), 0..5).prop_map(|groups| {
        let mut es = EntitySet::new();
        for (ty, surfaces) in groups {
            for s in surfaces {
                es.insert(ty, &s);
            }
        }
        es
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialize_then_parse_is_identity(es in entity_set()) {
        let text = serialize_entity_set(&es);
        let back = parse_entity_set(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(&back, &es, "{}", text);
        prop_assert_eq!(serialize_entity_set(&back), text);
    }
}

fn one(ty: &str, s: &[&str]) -> Vec<EntitySet> {
    vec![EntitySet::new().with(ty, s)]
}

#[test]
fn f1_hand_cases() {
    let cfg = EntityMatchConfig::default();
    let gt = one("PERSON", &["George Bush", "Ellen Johnson Sirleaf"]);
    assert_eq!(entity_f1(&gt, &gt, &cfg).unwrap(), 100.0);
    // One of one predicted is right, one of two references found.
    let half = one("PERSON", &["George Bush"]);
    let p = 1.0;
    let r = 0.5;
    assert!((entity_f1(&half, &gt, &cfg).unwrap() - 100.0 * 2.0 * p * r / (p + r)).abs() < 1e-9);
    // Singleton half-overlap: {a, b} against {a, c}.
    let pred = one("GPE", &["Liberia", "Ghana"]);
    let refs = one("GPE", &["Liberia", "Chad"]);
    assert_eq!(entity_f1(&pred, &refs, &cfg).unwrap(), 50.0);
    assert_eq!(entity_f1(&[EntitySet::new()], &gt, &cfg).unwrap(), 0.0);
}
