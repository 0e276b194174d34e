//! Front extraction, hypervolume and suite generation against independent oracles.

mod common;

use proptest::prelude::*;
use rand::Rng;

use evoflow_core::bench::{
    generate_suite, hypervolume, pareto_front, preset_suite, DomainSpec, SuiteConfig,
};
use evoflow_core::evolution::ObjectivePoint;

fn p(perf: f64, cost: f64) -> ObjectivePoint {
    ObjectivePoint::new(perf, cost)
}

/// Sweep oracle: cheapest first (best perf first on equal cost), keep a
/// point when it beats every cheaper point's perf.
fn sweep_front(points: &[ObjectivePoint]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .cost
            .total_cmp(&points[b].cost)
            .then(points[b].perf.total_cmp(&points[a].perf))
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for i in idx {
        if points[i].perf > best {
            best = points[i].perf;
            out.push(i);
        }
    }
    out.sort();
    out
}

/// Area by Monte Carlo sampling of the reference box `[0,1] x [0,1]`.
fn monte_carlo_hv(front: &[ObjectivePoint], samples: usize, rng: &mut impl Rng) -> f64 {
    let mut hit = 0usize;
    for _ in 0..samples {
        let (x, y) = (rng.random::<f64>(), rng.random::<f64>());
        if front.iter().any(|q| q.perf >= x && q.cost <= y) {
            hit += 1;
        }
    }
    hit as f64 / samples as f64
}

/// Recursive-descent evaluation of a fully parenthesized integer expression.
fn eval(s: &[u8], pos: &mut usize) -> i64 {
    if s[*pos] == b'(' {
        *pos += 1;
        let a = eval(s, pos);
        assert_eq!(s[*pos], b' ');
        let op = s[*pos + 1];
        assert_eq!(s[*pos + 2], b' ');
        *pos += 3;
        let b = eval(s, pos);
        assert_eq!(s[*pos], b')');
        *pos += 1;
        match op {
            b'+' => a + b,
            b'-' => a - b,
            b'*' => a * b,
            other => panic!("unexpected operator {}", other as char),
        }
    } else {
        let start = *pos;
        while *pos < s.len() && s[*pos].is_ascii_digit() {
            *pos += 1;
        }
        std::str::from_utf8(&s[start..*pos])
            .unwrap()
            .parse()
            .unwrap()
    }
}

fn expression_of(text: &str) -> &str {
    let start = text.find("Compute ").unwrap() + "Compute ".len();
    let end = start + text[start..].find(". ").unwrap();
    &text[start..end]
}

#[test]
fn suite_golds_match_an_independent_evaluator() {
    let cfg = SuiteConfig {
        domains: vec![
            DomainSpec {
                label: "easy".into(),
                difficulty: 0.0,
            },
            DomainSpec {
                label: "mid".into(),
                difficulty: 0.5,
            },
            DomainSpec {
                label: "hard".into(),
                difficulty: 1.0,
            },
            DomainSpec {
                label: "max".into(),
                difficulty: 1.0,
            },
        ],
        tasks_per_domain: 250,
    };
    let suite = generate_suite(&cfg, 11).unwrap();
    assert_eq!(suite.tasks.len(), 1000);
    for (i, t) in suite.tasks.iter().enumerate() {
        assert_eq!(t.domain, cfg.domains[i % 4].label);
        assert!(t.text.starts_with(&format!("{}: ", t.domain)));
        let expr = expression_of(&t.text);
        let mut pos = 0;
        let v = eval(expr.as_bytes(), &mut pos);
        assert_eq!(pos, expr.len(), "trailing input in {expr}");
        assert_eq!(t.gold.as_deref(), Some(v.to_string().as_str()), "{expr}");
    }
}

#[test]
fn suite_depth_follows_difficulty() {
    let suite = generate_suite(&preset_suite(), 1).unwrap();
    let depth = |e: &str| {
        let (mut d, mut best) = (0i32, 0i32);
        for c in e.chars() {
            d += (c == '(') as i32 - (c == ')') as i32;
            best = best.max(d);
        }
        best
    };
    for t in &suite.tasks {
        let d = depth(expression_of(&t.text));
        match t.domain.as_str() {
            "arithmetic" => assert_eq!(d, 1),
            "nested-expressions" => assert_eq!(d, 3),
            other => panic!("unexpected domain {other}"),
        }
    }
}

#[test]
fn suite_is_deterministic_in_its_seed() {
    let a = generate_suite(&preset_suite(), 5).unwrap();
    assert_eq!(a, generate_suite(&preset_suite(), 5).unwrap());
    assert_ne!(a.tasks, generate_suite(&preset_suite(), 6).unwrap().tasks);
}

#[test]
fn invalid_suites_are_rejected() {
    let bad = |label: &str, difficulty: f64| {
        generate_suite(
            &SuiteConfig {
                domains: vec![DomainSpec {
                    label: label.into(),
                    difficulty,
                }],
                tasks_per_domain: 1,
            },
            0,
        )
        .is_err()
    };
    assert!(bad("two words", 0.5));
    assert!(bad("a:b", 0.5));
    assert!(bad("", 0.5));
    assert!(bad("ok", 1.5));
    assert!(!bad("ok", 1.0));
    assert!(generate_suite(
        &SuiteConfig {
            domains: vec![],
            tasks_per_domain: 1
        },
        0
    )
    .is_err());
}

proptest! {
    #![proptest_config(common::cases(1000))]

    #[test]
    fn pareto_front_matches_sweep(seed in any::<u64>(), n in 0usize..=50) {
        let mut rng = common::rng(seed);
        let points: Vec<ObjectivePoint> =
            (0..n).map(|_| p(rng.random_range(0..8) as f64 / 7.0, rng.random_range(0..8) as f64 / 7.0)).collect();
        prop_assert_eq!(pareto_front(&points), sweep_front(&points));
    }

    #[test]
    fn hypervolume_grows_when_a_point_is_added(seed in any::<u64>(), n in 1usize..=10) {
        let mut rng = common::rng(seed);
        let mut pts: Vec<ObjectivePoint> = (0..n).map(|_| p(rng.random(), rng.random())).collect();
        let before = hypervolume(&pts, p(0.0, 1.0)).unwrap();
        pts.push(p(rng.random(), rng.random()));
        let after = hypervolume(&pts, p(0.0, 1.0)).unwrap();
        prop_assert!(after >= before - 1e-12);
        prop_assert!((0.0..=1.0).contains(&after));
    }
}

proptest! {
    #![proptest_config(common::cases(20))]

    #[test]
    fn hypervolume_matches_monte_carlo(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let pts: Vec<ObjectivePoint> = (0..10).map(|_| p(rng.random(), rng.random())).collect();
        let front: Vec<ObjectivePoint> = pareto_front(&pts).into_iter().map(|i| pts[i]).collect();
        let exact = hypervolume(&front, p(0.0, 1.0)).unwrap();
        let estimate = monte_carlo_hv(&front, 200_000, &mut rng);
        prop_assert!((exact - estimate).abs() < 1e-2, "{} vs {}", exact, estimate);
        // Dominated points add nothing.
        prop_assert!((hypervolume(&pts, p(0.0, 1.0)).unwrap() - exact).abs() < 1e-12);
    }
}
