mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use carve::ast::{AstForest, AstKind, AstNode, Span};
use carve::flow::{slice_indices, RefSetPair};
use carve::syntax::build_forest;
use carve::trace::{parse_trace_str, write_trace, NestingChecker, ObjRegistry, TraceEvent, TraceValue};

use common::*;

#[test]
fn corpus_traces_are_coherent_and_balanced() {
    for project in PROJECTS {
        let forest = forest(project);
        let mut traces = vec![suite_trace(project)];
        traces.extend(per_test_traces(project).into_iter().map(|(_, t)| t));
        for events in traces {
            let mut checker = NestingChecker::new();
            for ev in &events {
                if let Some(iid) = ev.iid() {
                    assert!(
                        forest.contains_iid(iid),
                        "{project}: {} names unknown iid {iid}",
                        ev.kind()
                    );
                }
                checker.accept(ev).unwrap_or_else(|e| panic!("{project}: {e}"));
            }
            checker.finish().unwrap_or_else(|e| panic!("{project}: {e}"));
            let enters = events
                .iter()
                .filter(|e| matches!(e, TraceEvent::FunctionEnter { .. }))
                .count();
            let exits = events
                .iter()
                .filter(|e| matches!(e, TraceEvent::FunctionExit { .. }))
                .count();
            assert_eq!(enters, exits, "{project}: unbalanced function events");
        }
    }
}

#[test]
fn corpus_traces_round_trip() {
    for project in PROJECTS {
        let events = suite_trace(project);
        let mut buf = Vec::new();
        write_trace(&events, &mut buf).unwrap();
        let back = parse_trace_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, events, "{project}");
    }
}

#[test]
fn corpus_ast_round_trips_and_is_preorder() {
    for project in PROJECTS {
        let forest = forest(project);
        assert!(forest.is_preorder_numbered(), "{project}");
        let text = forest.to_json_string();
        let back = AstForest::from_json_str(&text).unwrap();
        assert_eq!(back.to_json_string(), text, "{project}");
    }
}

#[test]
fn every_traced_statement_is_a_statement_node() {
    for project in PROJECTS {
        let forest = forest(project);
        for ev in suite_trace(project) {
            if let TraceEvent::StmtStart { iid } = ev {
                assert!(forest.node(iid).unwrap().kind.is_statement(), "{project}: iid {iid}");
            }
        }
    }
}

fn leaf_kind() -> impl Strategy<Value = AstKind> {
    prop::sample::select(vec![
        AstKind::NameExpr,
        AstKind::Literal,
        AstKind::SelfExpr,
        AstKind::Param,
    ])
}

fn arb_node() -> impl Strategy<Value = AstNode> {
    let leaf = (leaf_kind(), "[a-z]{1,6}").prop_map(|(k, name)| AstNode::new(k).with_attr("name", name));
    leaf.prop_recursive(4, 32, 4, |inner| {
        (
            prop::sample::select(AstKind::ALL.to_vec()),
            prop::collection::vec(inner, 0..4),
            any::<bool>(),
        )
            .prop_map(|(kind, children, flag)| AstNode::new(kind).with_attr("flag", flag).with_children(children))
    })
}

/// Assigns preorder iids and nested one-line-per-node spans.
fn number(node: &mut AstNode, next: &mut u32, line: &mut u32) {
    node.iid = *next;
    *next += 1;
    let start = *line;
    *line += 1;
    for c in &mut node.children {
        number(c, next, line);
    }
    node.span = Span::new(start, 0, *line, 0);
}

proptest! {
    #[test]
    fn ast_node_json_round_trip(mut node in arb_node()) {
        let (mut next, mut line) = (1, 1);
        number(&mut node, &mut next, &mut line);
        let json = node.to_json();
        let back = AstNode::from_json(&json).unwrap();
        prop_assert_eq!(back, node);
    }

    #[test]
    fn registry_is_idempotent(ids in prop::collection::vec(1u64..50, 1..40)) {
        let mut reg = ObjRegistry::new();
        for id in &ids {
            reg.tick();
            let born = reg.get_obj_ref(&TraceValue::Ref(*id)).unwrap().born;
            reg.tick();
            let again = reg.get_obj_ref(&TraceValue::Ref(*id)).unwrap();
            prop_assert_eq!(again.id, *id);
            prop_assert_eq!(again.born, born);
        }
        let distinct: BTreeSet<u64> = ids.iter().copied().collect();
        prop_assert_eq!(reg.len(), distinct.len());
        prop_assert!(reg.get_obj_ref(&TraceValue::int(1)).is_none());
    }

    #[test]
    fn slice_is_backward_and_closed(
        path in prop::collection::vec(
            (prop::collection::btree_set(1u64..8, 0..3), prop::collection::btree_set(1u64..8, 0..3)),
            1..20,
        ),
        pick in any::<prop::sample::Index>(),
    ) {
        let path: Vec<RefSetPair> = path.into_iter().map(|(used, mutated)| RefSetPair { used, mutated }).collect();
        let seed = pick.index(path.len());
        let slice = slice_indices(&path, seed);
        prop_assert!(slice.deps.iter().all(|&i| i < seed));
        prop_assert!(slice.deps.windows(2).all(|w| w[0] < w[1]));
        let members: BTreeSet<usize> = slice.deps.iter().copied().chain([seed]).collect();
        for &n in &members {
            for l in 0..n {
                if !path[l].mutated.is_disjoint(&path[n].used) {
                    prop_assert!(members.contains(&l), "{} feeds {} but is missing", l, n);
                    prop_assert!(slice.edges.contains(&(l, n)));
                }
            }
        }
        // a slice of a member never leaves the seed's slice
        for &d in &slice.deps {
            let inner = slice_indices(&path, d);
            prop_assert!(inner.deps.iter().all(|i| members.contains(i)));
        }
    }

    #[test]
    fn reparsing_is_deterministic(a in -50i64..50, b in -50i64..50) {
        let src = format!("function f(x) {{\n  let y = x + {a};\n  return y * {b};\n}}\n");
        let one = build_forest(vec![("m.sl".to_string(), src.clone())]).unwrap();
        let two = build_forest(vec![("m.sl".to_string(), src)]).unwrap();
        prop_assert_eq!(one.to_json_string(), two.to_json_string());
        prop_assert!(one.is_preorder_numbered());
    }
}
