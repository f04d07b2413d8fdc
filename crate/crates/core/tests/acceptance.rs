mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use carve::ast::AstLocation;
use carve::filter::filter_tests;
use carve::flow::{slice_indices, RefSetPair};
use carve::pipeline::{format_ratio, report_metrics, RunReport};
use carve::syntax::{render_expr, render_stmt};
use carve::trace::{Primitive, TraceValue};

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:?}, limit {limit:?}"))
}

fn rectangle_golden() -> Check {
    let start = Instant::now();
    let out = tempfile::tempdir().unwrap();
    let outcome = run_recorded("rectangle", out.path());
    let tc = outcome.filter.as_ref().map(|f| f.tests.len()).unwrap_or(0);
    ensure(tc == 1, format!("|T_C| = {tc}"))?;
    let plans = &outcome.generation.as_ref().ok_or("no plans")?.plans;
    let count = |dep: &str| plans.iter().filter(|p| p.dependency == dep).count();
    let (dist, moves) = (count("Point.distanceFrom"), count("Point.moveAlong"));
    ensure(
        dist == 4 && moves == 2,
        format!("distanceFrom={dist} moveAlong={moves}"),
    )?;
    let t1 = plans
        .iter()
        .find(|p| p.name == "moveAlong-T1")
        .ok_or("moveAlong-T1 missing")?;
    let arrange: Vec<String> = t1.arrange.iter().map(render_stmt).collect();
    let points = arrange.iter().filter(|s| s.contains("new Point(")).count();
    ensure(points == 4, format!("{points} Point constructions"))?;
    ensure(
        arrange.iter().any(|s| s.contains("new Rectangle(p0, p1, p2, p3)")),
        "no Rectangle construction",
    )?;
    ensure(
        arrange.iter().any(|s| s.trim_end() == "let edgeIndex = 0;"),
        "no edgeIndex = 0",
    )?;
    ensure(
        arrange.iter().any(|s| s.contains("Rectangle.normalize(-4, 0)")),
        "no normalize(-4, 0) call",
    )?;
    let asserts: Vec<(String, TraceValue)> = t1
        .asserts
        .iter()
        .map(|a| (render_expr(&a.target), a.expected.clone()))
        .collect();
    let expected = vec![
        ("pA.x".to_string(), TraceValue::Prim(Primitive::Int(-2))),
        ("pA.y".to_string(), TraceValue::Prim(Primitive::Int(0))),
    ];
    ensure(asserts == expected, format!("asserts {asserts:?}"))?;
    let text = t1.render();
    ensure(
        text.contains("assertEq(pA.x, -2);") && text.contains("assertEq(pA.y, 0);"),
        "rendering lacks asserts",
    )?;
    within(start, Duration::from_secs(5))?;
    Ok(format!("|T_C|=1, {} plans, moveAlong-T1 matches", plans.len()))
}

fn filter_oracle() -> Check {
    let start = Instant::now();
    let mut checked = 0;
    for project in PROJECTS {
        let (forest, sites) = sites(project);
        let fast = filter_tests(&suite_trace(project), &forest, &sites).map_err(|e| e.to_string())?;
        let fast: BTreeSet<AstLocation> = fast.tests.into_iter().collect();
        let brute: BTreeSet<AstLocation> = per_test_traces(project)
            .into_iter()
            .filter(|(_, events)| oracle_reaches(events, &forest, &sites))
            .map(|(loc, _)| loc)
            .collect();
        ensure(fast == brute, format!("{project}: {fast:?} != {brute:?}"))?;
        checked += 1;
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("{checked} projects agree"))
}

/// Smallest index set closed under "earlier statement mutates what a member uses".
fn brute_closure(path: &[RefSetPair], seed: usize) -> Vec<usize> {
    let mut member = vec![false; path.len()];
    loop {
        let mut changed = false;
        for n in 0..path.len() {
            if n != seed && !member[n] {
                continue;
            }
            for l in 0..n {
                if !member[l] && path[l].mutated.intersection(&path[n].used).next().is_some() {
                    member[l] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..path.len()).filter(|&i| member[i]).collect()
}

fn slice_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let random_set = |rng: &mut ChaCha8Rng| -> BTreeSet<u64> {
        let n = rng.gen_range(0..=3);
        (0..n).map(|_| rng.gen_range(1..=8)).collect()
    };
    for case in 0..500 {
        let len = rng.gen_range(1..=20);
        let path: Vec<RefSetPair> = (0..len)
            .map(|_| RefSetPair {
                used: random_set(&mut rng),
                mutated: random_set(&mut rng),
            })
            .collect();
        let seed = rng.gen_range(0..len);
        let got = slice_indices(&path, seed).deps;
        let want = brute_closure(&path, seed);
        ensure(got == want, format!("case {case}: {got:?} != {want:?}"))?;
    }
    within(start, Duration::from_secs(10))?;
    Ok("500 random paths agree".into())
}

fn determinism() -> Check {
    for project in PROJECTS {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_recorded(project, a.path());
        run_recorded(project, b.path());
        let (sa, sb) = (snapshot_dir(a.path()), snapshot_dir(b.path()));
        ensure(!sa.is_empty(), format!("{project}: no artifacts"))?;
        ensure(sa == sb, format!("{project}: artifacts differ between runs"))?;
    }
    Ok(format!("{} projects byte-identical", PROJECTS.len()))
}

fn ratio_arithmetic() -> Check {
    for (integration, generated, want) in [(14, 14, "100.0"), (3, 51, "1700.0"), (16, 69, "431.25")] {
        let report = RunReport {
            total_tests: integration,
            integration_tests: integration,
            generated,
            ..RunReport::default()
        };
        let table = report_metrics(&report);
        let got = format_ratio(generated, integration);
        ensure(
            got.as_deref() == Some(want),
            format!("({integration}, {generated}) -> {got:?}"),
        )?;
        ensure(
            table.contains(&format!("{want}%")),
            format!("table lacks {want}%:\n{table}"),
        )?;
    }
    let empty = RunReport {
        total_tests: 3,
        integration_tests: 2,
        ..RunReport::default()
    };
    ensure(report_metrics(&empty).contains("0.0%"), "0 generated should print 0.0%")?;
    Ok("100.0%, 1700.0%, 431.25%".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 5] = [
        ("rectangle golden run", rectangle_golden),
        ("filter oracle equivalence", filter_oracle),
        ("slice oracle equivalence", slice_oracle),
        ("determinism", determinism),
        ("augmentation-ratio arithmetic", ratio_arithmetic),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({why})", i + 1);
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
