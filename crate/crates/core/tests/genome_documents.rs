//! Genome document codec, content identity and invariant checks.

mod common;

use proptest::prelude::*;
use rand::Rng;

use evoflow_core::canonical::round_real;
use evoflow_core::genome::{
    deserialize, serialize, validate, DocumentError, Lineage, RunStats, Violation, WorkflowGenome,
};

fn fixture_genome(seed: u64) -> (common::Fixture, WorkflowGenome) {
    let fx = common::Fixture::new(seed);
    let mut rng = common::rng(seed);
    let g = fx.genome(&mut rng);
    (fx, g)
}

fn kinds(v: &[Violation]) -> Vec<std::mem::Discriminant<Violation>> {
    v.iter().map(std::mem::discriminant).collect()
}

proptest! {
    #![proptest_config(common::cases(300))]

    #[test]
    fn documents_round_trip(seed in any::<u64>(), count in 0u64..1000, cost in 0.0f64..10.0, perf in 0.0f64..=1.0) {
        let (fx, mut g) = fixture_genome(seed);
        g.stats = RunStats { exec_count: count, mean_cost: round_real(cost), mean_perf: round_real(perf) };
        g.lineage = Lineage { parents: vec!["wf-x".into()], origin: "crossover".into(), mutations: vec!["prompt".into()] };
        let text = serialize(&g).unwrap();
        let back = deserialize(&text).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(serialize(&back).unwrap(), text);
        prop_assert!(validate(&back, &fx.pool, fx.params.kappa).is_empty());
    }

    #[test]
    fn serialization_is_idempotent_for_any_reals(seed in any::<u64>(), cost in 0.0f64..1e6) {
        let (_, mut g) = fixture_genome(seed);
        g.stats.mean_cost = cost;
        let once = serialize(&deserialize(&serialize(&g).unwrap()).unwrap()).unwrap();
        prop_assert_eq!(serialize(&deserialize(&once).unwrap()).unwrap(), once);
    }

    #[test]
    fn identity_ignores_stats_and_lineage(seed in any::<u64>()) {
        let (_, g) = fixture_genome(seed);
        let mut h = g.clone();
        h.stats = RunStats { exec_count: 9, mean_cost: 1.5, mean_perf: 0.25 };
        h.lineage.origin = "elsewhere".into();
        prop_assert_eq!(h.content_id(), g.workflow_id.clone());
        h.operators[0].invoking_nodes[0].prompt.push_str(" Be brief.");
        prop_assert_ne!(h.content_id(), g.workflow_id);
    }
}

#[test]
fn canonical_documents_have_sorted_keys_and_a_trailing_newline() {
    let (_, g) = fixture_genome(3);
    let text = serialize(&g).unwrap();
    assert!(text.ends_with("}\n"));
    assert_eq!(text.matches('\n').count(), 1);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(v["schema_version"], 1);
    assert!(text.find("\"inter_edges\"").unwrap() < text.find("\"lineage\"").unwrap());
}

#[test]
fn reals_use_twelve_significant_digits() {
    let (_, mut g) = fixture_genome(4);
    g.stats.mean_cost = 1.0 / 3.0;
    let text = serialize(&g).unwrap();
    assert!(text.contains("\"mean_cost\":0.333333333333"), "{text}");
    assert!(!text.contains("0.3333333333333"));
}

#[test]
fn malformed_documents_are_rejected() {
    let (_, g) = fixture_genome(5);
    let text = serialize(&g).unwrap();
    let wrong_version = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
    assert!(matches!(
        deserialize(&wrong_version),
        Err(DocumentError::Parse { .. })
    ));
    let extra = text.replacen('{', "{\"extra\":0,", 1);
    assert!(deserialize(&extra).is_err());
    let missing = text.replacen("\"tags\"", "\"tagz\"", 1);
    assert!(deserialize(&missing).is_err());
    match deserialize("{\n  \"schema_version\": 1,\n  oops\n}") {
        Err(DocumentError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn injected_defects_are_reported() {
    let (fx, base) = fixture_genome(6);
    let kappa = fx.params.kappa;
    assert!(validate(&base, &fx.pool, kappa).is_empty());
    let check = |mutate: &dyn Fn(&mut WorkflowGenome), expected: Violation| {
        let mut g = base.clone();
        mutate(&mut g);
        let found = validate(&g, &fx.pool, kappa);
        assert!(
            kinds(&found).contains(&std::mem::discriminant(&expected)),
            "expected {expected:?}, got {found:?}"
        );
    };
    check(
        &|g| g.tags.pop().map(|_| ()).unwrap(),
        Violation::TagCount {
            found: 0,
            expected: 0,
        },
    );
    check(
        &|g| g.tags[0] = "  ".into(),
        Violation::EmptyTag { index: 0 },
    );
    check(&|g| g.operators.clear(), Violation::NoOperators);
    check(
        &|g| g.operators[0].invoking_nodes[0].temperature = 1.5,
        Violation::Temperature {
            node_id: String::new(),
            value: 0.0,
        },
    );
    check(
        &|g| g.operators[0].invoking_nodes[0].model_id = "gone".into(),
        Violation::UnknownModel {
            node_id: String::new(),
            model_id: String::new(),
        },
    );
    check(
        &|g| {
            let n = g.operators[0].invoking_nodes[0].clone();
            g.operators[0].invoking_nodes.push(n);
        },
        Violation::DuplicateNodeId {
            op_id: String::new(),
            node_id: String::new(),
        },
    );
    check(
        &|g| {
            let op = g.operators[0].clone();
            g.operators.push(op);
        },
        Violation::DuplicateOperatorId(String::new()),
    );
    check(
        &|g| g.inter_edges.push(("op0".into(), "nowhere".into())),
        Violation::UnknownEdgeEndpoint {
            scope: String::new(),
            edge: (String::new(), String::new()),
        },
    );
    check(
        &|g| {
            let mut op = g.operators[0].clone();
            op.op_id = "extra".into();
            g.operators.push(op);
            let first = g.operators[0].op_id.clone();
            g.inter_edges.push((first.clone(), "extra".into()));
            g.inter_edges.push(("extra".into(), first));
        },
        Violation::Cycle {
            scope: String::new(),
            path: vec![],
        },
    );
}

#[test]
fn arity_and_sink_defects_are_reported() {
    let (fx, mut g) = fixture_genome(7);
    let mut rng = common::rng(7);
    // A second operator with no edges makes two sinks.
    let mut extra = g.operators[0].clone();
    extra.op_id = format!("{}-b", extra.op_id);
    for n in &mut extra.invoking_nodes {
        n.node_id = format!("{}-b", n.node_id);
    }
    g.operators.push(extra);
    g.inter_edges.retain(|_| false);
    if g.operators.len() > 2 {
        g.operators.truncate(2);
    }
    let found = validate(&g, &fx.pool, fx.params.kappa);
    assert!(
        found
            .iter()
            .any(|v| matches!(v, Violation::SinkCount { found: 2, .. })),
        "{found:?}"
    );

    let (_, mut h) = fixture_genome(8);
    let i = rng.random_range(0..h.operators.len());
    let dup = h.operators[i].invoking_nodes[0].clone();
    h.operators[i].invoking_nodes.push(dup);
    h.operators[i].invoking_nodes.last_mut().unwrap().node_id = "fresh".into();
    let found = validate(&h, &fx.pool, fx.params.kappa);
    let custom = h.operators[i].kind.arity().is_none();
    assert_eq!(
        found.iter().any(|v| matches!(v, Violation::Arity { .. })),
        !custom,
        "{found:?}"
    );
}
