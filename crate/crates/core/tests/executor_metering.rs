//! Operator call counts, cost metering and data flow through the executor.

mod common;

use std::sync::Mutex;

use evoflow_core::executor::{evaluate, execute, ExecError, ExecOptions, TaskQuery};
use evoflow_core::genome::{OperatorKind, WorkflowGenome};
use evoflow_core::provider::sim::SimulatedBackend;
use evoflow_core::provider::{ChatBackend, ChatRequest, ChatResponse, Meter, ProviderError};
use evoflow_core::repo::OperatorRepo;

/// Records every request it forwards.
struct Recording<B> {
    inner: B,
    seen: Mutex<Vec<ChatRequest>>,
}

impl<B: ChatBackend> ChatBackend for Recording<B> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.seen.lock().unwrap().push(req.clone());
        self.inner.chat(req)
    }
}

fn single(kind: OperatorKind, model: &str) -> WorkflowGenome {
    let models = vec![model.to_string(); OperatorRepo::node_count(kind)];
    WorkflowGenome::new(
        vec![OperatorRepo::instantiate(kind, "op0", &models)],
        vec![],
    )
}

fn query() -> TaskQuery {
    common::task("arithmetic", "(6 * 7)", "42")
}

/// One call at 300 prompt and 200 completion tokens on the first pool model.
const CALL_COST: f64 = 300.0 / 1e6 * 0.1 + 200.0 / 1e6 * 0.3;

#[test]
fn operator_call_counts() {
    let pool = common::pool_of(&["m"]);
    let backend = SimulatedBackend::new(1, [common::profile("m", 1.0)]).unwrap();
    let expected = [
        (OperatorKind::CoT, 1),
        (OperatorKind::StepBack, 2),
        (OperatorKind::SelfConsistency, 5),
        (OperatorKind::Debate, 7),
        (OperatorKind::Ensemble, 4),
        (OperatorKind::ExpertPrompt, 2),
        // The critic accepts the first answer, so refinement stops at once.
        (OperatorKind::SelfRefine, 2),
        (OperatorKind::ReAct, 1),
    ];
    for (kind, calls) in expected {
        let g = single(kind, "m");
        let trace = execute(&g, &query(), &backend, &pool, &ExecOptions::default()).unwrap();
        assert_eq!(trace.call_count(), calls, "{kind}");
        assert_eq!(
            evaluate(&trace.answer, &query()).unwrap(),
            1.0,
            "{kind}: {}",
            trace.answer
        );
        assert!(
            (trace.total_cost - calls as f64 * CALL_COST).abs() < 1e-15,
            "{kind}"
        );
    }
}

#[test]
fn meter_total_equals_trace_total() {
    let fx = common::Fixture::new(3);
    let mut rng = common::rng(3);
    for i in 0..200 {
        let g = fx.genome(&mut rng);
        let meter = Meter::new(&fx.backend, fx.pool.clone());
        let q = common::task("arithmetic", "(2 + 3)", &format!("{}", 5 + i % 3));
        let trace = execute(&g, &q, &meter, &fx.pool, &fx.exec).unwrap();
        let report = meter.report();
        assert_eq!(report.total_cost, trace.total_cost);
        assert_eq!(report.total_calls as usize, trace.call_count());
        let per_call: Vec<f64> = trace
            .records
            .iter()
            .flat_map(|r| r.calls.iter().map(|c| c.cost))
            .collect();
        let logged: Vec<f64> = meter.calls().iter().map(|c| c.cost).collect();
        assert_eq!(per_call, logged);
    }
}

#[test]
fn exceeding_the_call_budget_fails_with_partial_cost() {
    let pool = common::pool_of(&["m"]);
    let backend = SimulatedBackend::new(1, [common::profile("m", 1.0)]).unwrap();
    let opts = ExecOptions {
        call_budget: 3,
        ..ExecOptions::default()
    };
    let err = execute(
        &single(OperatorKind::SelfConsistency, "m"),
        &query(),
        &backend,
        &pool,
        &opts,
    )
    .unwrap_err();
    assert_eq!(err.error, ExecError::BudgetExceeded { limit: 3 });
    assert_eq!(err.calls, 3);
    assert!((err.partial_cost - 3.0 * CALL_COST).abs() < 1e-15);
}

#[test]
fn unknown_models_fail_before_any_spend() {
    let pool = common::pool_of(&["m"]);
    let backend = SimulatedBackend::new(1, [common::profile("m", 1.0)]).unwrap();
    let err = execute(
        &single(OperatorKind::CoT, "absent"),
        &query(),
        &backend,
        &pool,
        &ExecOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err.error, ExecError::Provider { .. }), "{err}");
    assert_eq!((err.calls, err.partial_cost), (0, 0.0));
}

#[test]
fn upstream_outputs_reach_downstream_operators() {
    let pool = common::pool_of(&["m"]);
    let rec = Recording {
        inner: SimulatedBackend::new(1, [common::profile("m", 1.0)]).unwrap(),
        seen: Mutex::new(vec![]),
    };
    let m = vec!["m".to_string()];
    let a = OperatorRepo::instantiate(OperatorKind::CoT, "op0", &m);
    let b = OperatorRepo::instantiate(OperatorKind::CoT, "op1", &m);
    let g = WorkflowGenome::new(vec![b, a], vec![("op0".into(), "op1".into())]);
    let trace = execute(&g, &query(), &rec, &pool, &ExecOptions::default()).unwrap();
    let ops: Vec<&str> = trace.records.iter().map(|r| r.op_id.as_str()).collect();
    assert_eq!(ops, ["op0", "op1"]);
    let seen = rec.seen.lock().unwrap();
    let first_prompt: String = seen[0].messages.iter().map(|m| m.content.clone()).collect();
    let second_prompt: String = seen[1].messages.iter().map(|m| m.content.clone()).collect();
    assert!(!first_prompt.contains("### Output of"));
    assert!(second_prompt.contains("### Output of op0"));
    assert!(second_prompt.contains(trace.records[0].output.trim()));
    assert_eq!(trace.answer, trace.records[1].output);
}

#[test]
fn execution_is_deterministic() {
    let fx = common::Fixture::new(5);
    let mut rng = common::rng(5);
    for _ in 0..50 {
        let g = fx.genome(&mut rng);
        let a = execute(&g, &query(), &fx.backend, &fx.pool, &fx.exec).unwrap();
        let b = execute(&g, &query(), &fx.backend, &fx.pool, &fx.exec).unwrap();
        assert_eq!(
            (a.records, a.answer, a.total_cost),
            (b.records, b.answer, b.total_cost)
        );
    }
}
