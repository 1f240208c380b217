//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pid_core::diagram::{Diagram, NodeId, NodeKind};
use pid_core::oracle::{brute_joint, brute_posterior, brute_solve, policies_agree, OracleConfig};
use pid_core::random::{
    random_cid, random_decision_problem, random_evidence, random_potential_reversals, random_primitive_step,
    RandomSpec,
};
use pid_core::transforms::{
    check_decomposable_set, d_separated, infer_posterior, pid_to_cid, propagate_evidence, reduce_node,
    solve_decision, solve_decision_traced, ConversionMode, InferOptions, InferenceMode, ReductionCase, SolveOptions,
    SolveStep, TargetOrder,
};
use pid_core::{close, fixtures, OpCounters, PotentialTable};

type Outcome = Result<String, String>;

fn tables_close(a: &PotentialTable, b: &PotentialTable, tol: f64) -> bool {
    a.scope() == b.scope() && a.values().iter().zip(b.values()).all(|(x, y)| close(*x, *y, tol))
}

fn all_posteriors(d: &Diagram, evidence: &[(NodeId, usize)], nodes: &[NodeId]) -> Result<Vec<PotentialTable>, String> {
    let cfg = OracleConfig::default();
    nodes
        .iter()
        .map(|q| brute_posterior(d, evidence, *q, &cfg).map(|p| p.0).map_err(|e| e.to_string()))
        .collect()
}

fn criterion1() -> Outcome {
    let spec = RandomSpec::default();
    let mut steps = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let mut d = random_cid(&mut rng, &spec);
        let observe = rng.gen_range(0..=1);
        let evidence = random_evidence(&d, &mut rng, observe);
        let nodes = d.unobserved_chance();
        let before = all_posteriors(&d, &evidence, &nodes)?;
        let mut ops = OpCounters::new();
        for _ in 0..rng.gen_range(1..=5) {
            if random_primitive_step(&mut d, &mut rng, &mut ops).is_some() {
                steps += 1;
            }
        }
        let after = all_posteriors(&d, &evidence, &nodes)?;
        for (q, (x, y)) in nodes.iter().zip(before.iter().zip(&after)) {
            if !tables_close(x, y, 1e-9) {
                return Err(format!("seed {seed}: posterior of {q} changed"));
            }
        }
    }
    Ok(format!("200 diagrams, {steps} primitive steps, posteriors unchanged"))
}

fn random_triangle(rng: &mut ChaCha8Rng) -> (Diagram, NodeId, NodeId) {
    let mut d = Diagram::new();
    let mut parents = Vec::new();
    for k in 0..rng.gen_range(0..=2) {
        let card = rng.gen_range(2..=3);
        let states: Vec<String> = (0..card).map(|s| format!("s{s}")).collect();
        let refs: Vec<&str> = states.iter().map(String::as_str).collect();
        let raw: Vec<f64> = (0..card).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        parents.push(d.add_chance(&format!("J{k}"), &refs, &[], raw.iter().map(|x| x / total).collect()).unwrap());
    }
    let extra = if rng.gen_bool(0.5) {
        Some(d.add_chance("K", &["s0", "s1"], &[], vec![0.4, 0.6]).unwrap())
    } else {
        None
    };
    let icard = rng.gen_range(2..=3);
    let rows: usize = parents.iter().map(|p| d.node(*p).unwrap().cardinality()).product();
    let ivalues = (0..rows * icard).map(|_| rng.gen_range(0.1..3.0)).collect();
    let istates: Vec<String> = (0..icard).map(|s| format!("s{s}")).collect();
    let irefs: Vec<&str> = istates.iter().map(String::as_str).collect();
    let i = d.add_chance("I", &irefs, &parents, ivalues).unwrap();

    let mut mparents = vec![i];
    mparents.extend(extra);
    let mrows: usize = mparents.iter().map(|p| d.node(*p).unwrap().cardinality()).product();
    let mvalues = (0..mrows * 2).map(|_| rng.gen_range(0.05..1.0)).collect();
    let m = d.add_chance("M", &["s0", "s1"], &mparents, mvalues).unwrap();
    d.instantiate_evidence(m, rng.gen_range(0..2), &mut OpCounters::new()).unwrap();
    (d, i, m)
}

fn criterion2() -> Outcome {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2_000 + seed);
        let (a, i, m) = random_triangle(&mut rng);
        let mut ops = OpCounters::new();
        let mut b = a.clone();
        b.potential_reversal(i, m, &mut ops).map_err(|e| e.to_string())?;
        let mut c = b.clone();
        c.conditionalize(i, &mut ops).map_err(|e| e.to_string())?;
        let nodes = a.unobserved_chance();
        let pa = all_posteriors(&a, &[], &nodes)?;
        for (form, d) in [("b", &b), ("c", &c)] {
            let p = all_posteriors(d, &[], &nodes)?;
            if !pa.iter().zip(&p).all(|(x, y)| tables_close(x, y, 1e-9)) {
                return Err(format!("seed {seed}: form {form} disagrees with form a"));
            }
        }
    }
    Ok("50 instances, three forms agree".into())
}

fn criterion3() -> Outcome {
    let spec = RandomSpec::default();
    let cfg = OracleConfig::default();
    let mut count = 0;
    let mut seed = 0u64;
    while count < 50 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(3_000 + seed);
        let mut d = random_decision_problem(&mut rng, &spec);
        let reversals = rng.gen_range(1..=3);
        random_potential_reversals(&mut d, &mut rng, reversals, &mut OpCounters::new());
        if !d.validate_regular().is_regular() {
            continue;
        }
        count += 1;
        let mut ops = OpCounters::new();
        let ours = solve_decision(&d, &SolveOptions::default(), &mut ops).map_err(|e| format!("seed {seed}: {e}"))?;
        let truth = brute_solve(&d, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        if !policies_agree(&d, &ours, &truth) {
            return Err(format!("seed {seed}: policy differs from exhaustive search"));
        }
        if !close(ours.meu, truth.meu, 1e-9) {
            return Err(format!("seed {seed}: meu {} vs {}", ours.meu, truth.meu));
        }
        let factor = rng.gen_range(0.01..50.0);
        let mut scaled = d.clone();
        scaled.scale_value_table(factor, &mut ops).map_err(|e| e.to_string())?;
        let s = solve_decision(&scaled, &SolveOptions::default(), &mut ops).map_err(|e| e.to_string())?;
        if s.fragments != ours.fragments || !close(s.meu, factor * ours.meu, 1e-9) {
            return Err(format!("seed {seed}: scaling the value table changed the policy"));
        }
    }
    Ok("50 decision problems match exhaustive search; scaling invariant".into())
}

fn arc_set(d: &Diagram, pairs: &[(&str, &str)]) -> BTreeSet<(NodeId, NodeId)> {
    pairs.iter().map(|(a, b)| (d.id_of(a).unwrap(), d.id_of(b).unwrap())).collect()
}

fn criterion4() -> Outcome {
    type Case<'a> = (&'a [&'a str], &'a [(&'a str, &'a str)], &'a [&'a str]);
    let cases: [Case; 2] = [
        (
            &["A", "B", "C", "D", "E"],
            &[("A", "B"), ("A", "C"), ("B", "C"), ("B", "D"), ("C", "D"), ("D", "E")],
            &["A", "B", "C", "D", "E"],
        ),
        (&["C", "A", "B", "D", "E"], &[("C", "A"), ("C", "B"), ("B", "D"), ("C", "D"), ("D", "E")], &["B", "C", "D", "E"]),
    ];
    for (order, arcs, absorbed) in cases {
        let mut d = fixtures::evidence_network();
        let ids: Vec<NodeId> = order.iter().map(|n| d.id_of(n).unwrap()).collect();
        let target = TargetOrder::new(&d, ids).map_err(|e| e.to_string())?;
        let trace = propagate_evidence(&mut d, &target, &mut OpCounters::new()).map_err(|e| e.to_string())?;
        let expected = arc_set(&d, arcs);
        if d.arcs() != expected {
            return Err(format!("target {order:?}: arcs {:?}", d.arcs()));
        }
        let combined = d.id_of("F+G").map_err(|e| e.to_string())?;
        let set = &trace.absorbed[&combined];
        let want: BTreeSet<NodeId> = absorbed.iter().map(|n| d.id_of(n).unwrap()).collect();
        if *set != want {
            return Err(format!("target {order:?}: evidence ancestors {set:?}"));
        }
        if !trace.absorbed.values().all(|s| check_decomposable_set(&d, s)) {
            return Err(format!("target {order:?}: ancestor set not decomposable"));
        }
    }
    Ok("both targets give the expected arc sets; ancestor sets decomposable".into())
}

/// Joint over the unobserved chance nodes, summed over `i` when given.
fn joint_without(d: &Diagram, i: Option<NodeId>) -> Result<BTreeMap<Vec<(NodeId, usize)>, f64>, String> {
    let joint = brute_joint(d, &BTreeMap::new(), &OracleConfig::default()).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    let cards = joint.cardinalities().to_vec();
    let mut digits = vec![0; cards.len()];
    for v in joint.values() {
        let key: Vec<(NodeId, usize)> =
            joint.scope().iter().copied().zip(digits.iter().copied()).filter(|(n, _)| Some(*n) != i).collect();
        *out.entry(key).or_insert(0.0) += v;
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            if digits[k] < cards[k] {
                break;
            }
            digits[k] = 0;
        }
    }
    Ok(out)
}

fn criterion5() -> Outcome {
    let cases = [
        (fixtures::reduction_case1(), ReductionCase::NoParentsNoChildren),
        (fixtures::reduction_case2(), ReductionCase::ParentsNoChildren),
        (fixtures::reduction_case3(), ReductionCase::OneChild),
        (fixtures::reduction_case4(), ReductionCase::MultipleChildren),
    ];
    for (before, case) in cases {
        let i = before.id_of("I").unwrap();
        let mut after = before.clone();
        let report = reduce_node(&mut after, i, &mut OpCounters::new()).map_err(|e| e.to_string())?;
        if report.case != case {
            return Err(format!("expected {case:?}, got {:?}", report.case));
        }
        let want = joint_without(&before, Some(i))?;
        let got = joint_without(&after, None)?;
        if want.len() != got.len() || want.iter().any(|(k, v)| !got.get(k).is_some_and(|g| close(*v, *g, 1e-12))) {
            return Err(format!("case {}: product not preserved", case.number()));
        }
        let parents_of = |name: &str| -> BTreeSet<String> {
            let id = after.id_of(name).unwrap();
            after.parents(id).unwrap().iter().map(|p| after.node(*p).unwrap().name().to_string()).collect()
        };
        let names = |xs: &[&str]| -> BTreeSet<String> { xs.iter().map(|s| s.to_string()).collect() };
        let structure = match case {
            ReductionCase::NoParentsNoChildren => {
                let m = report.dummy.ok_or("no dummy")?;
                after.node(m).unwrap().table().unwrap().as_scalar() == Some(10.0) && after.arcs().is_empty()
            }
            ReductionCase::ParentsNoChildren => {
                report.absorbed_into == after.id_of("J").ok() && parents_of("J") == names(&["K1", "K2"])
            }
            ReductionCase::OneChild => parents_of("J") == names(&["K1", "K2", "L"]),
            ReductionCase::MultipleChildren => {
                let reversed: Vec<NodeId> = ["A", "B"].iter().map(|n| after.id_of(n).unwrap()).collect();
                parents_of("J") == names(&["A", "B", "C", "D", "K"])
                    && report.reversed == reversed
                    && parents_of("A").is_empty()
                    && parents_of("B").is_empty()
            }
        };
        if !structure {
            return Err(format!("case {}: unexpected structure {:?}", case.number(), after.arcs()));
        }
    }
    Ok("all four cases preserve the product and give the expected structure".into())
}

fn criterion6() -> Outcome {
    let spec = RandomSpec { nodes: 5..=7, ..RandomSpec::default() };
    let cfg = OracleConfig::default();
    let mut count = 0;
    let mut seed = 0u64;
    let (mut pid_total, mut cid_total) = (0, 0);
    while count < 50 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(6_000 + seed);
        let mut d = random_cid(&mut rng, &spec);
        let reversals = rng.gen_range(0..=2);
        random_potential_reversals(&mut d, &mut rng, reversals, &mut OpCounters::new());
        let children: Vec<NodeId> =
            d.unobserved_chance().into_iter().filter(|n| !d.parents(*n).unwrap().is_empty()).collect();
        if children.len() < 2 {
            continue;
        }
        let mut evidence: Vec<(NodeId, usize)> = Vec::new();
        for _ in 0..2 {
            let n = children[rng.gen_range(0..children.len())];
            if evidence.iter().all(|(e, _)| *e != n) {
                evidence.push((n, rng.gen_range(0..d.node(n).unwrap().cardinality())));
            }
        }
        let free: Vec<NodeId> = d.unobserved_chance().into_iter().filter(|n| evidence.iter().all(|(e, _)| e != n)).collect();
        let mut query = vec![free[rng.gen_range(0..free.len())]];
        let second = free[rng.gen_range(0..free.len())];
        if !query.contains(&second) {
            query.push(second);
        }
        count += 1;

        let mut pid_ops = OpCounters::new();
        let pid = infer_posterior(&d, &evidence, &query, &InferOptions::default(), &mut pid_ops)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let mut cid_ops = OpCounters::new();
        let opts = InferOptions { mode: InferenceMode::Cid, order: None };
        let cid = infer_posterior(&d, &evidence, &query, &opts, &mut cid_ops).map_err(|e| format!("seed {seed}: {e}"))?;
        let expected_divs: u64 = query.iter().map(|q| d.node(*q).unwrap().cardinality() as u64).sum();
        if pid_ops.divs != expected_divs {
            return Err(format!("seed {seed}: pid mode divided {} times, expected {expected_divs}", pid_ops.divs));
        }
        if cid_ops.divs <= pid_ops.divs {
            return Err(format!("seed {seed}: cid mode divided {} times, pid {}", cid_ops.divs, pid_ops.divs));
        }
        for q in &query {
            let (truth, _) = brute_posterior(&d, &evidence, *q, &cfg).map_err(|e| e.to_string())?;
            if !tables_close(&pid.marginals[q], &truth, 1e-9) || !tables_close(&cid.marginals[q], &truth, 1e-9) {
                return Err(format!("seed {seed}: marginal of {q} disagrees"));
            }
        }
        pid_total += pid_ops.divs;
        cid_total += cid_ops.divs;
    }
    Ok(format!("50 instances, divisions pid {pid_total} vs cid {cid_total}, marginals match"))
}

fn names_of(d: &Diagram) -> BTreeSet<String> {
    d.nodes().map(|n| n.name().to_string()).collect()
}

fn criterion7() -> Outcome {
    let (d, ids) = fixtures::wildcatter();
    let mut snapshots: Vec<(SolveStep, Diagram)> = Vec::new();
    let mut previous = d.clone();
    let mut before_selection = Vec::new();
    let policy = solve_decision_traced(&d, &SolveOptions::default(), &mut OpCounters::new(), |step, now| {
        if matches!(step, SolveStep::SelectedPolicy { .. }) {
            before_selection.push(previous.clone());
        }
        snapshots.push((step.clone(), now.clone()));
        previous = now.clone();
    })
    .map_err(|e| e.to_string())?;
    let after_drill = snapshots
        .iter()
        .find(|(s, _)| *s == SolveStep::SelectedPolicy { decision: ids.drill })
        .map(|(_, d)| d.clone())
        .ok_or("drill policy never selected")?;
    let set = |xs: &[NodeId]| -> BTreeSet<NodeId> { xs.iter().copied().collect() };
    let parents = |d: &Diagram, n: NodeId| set(d.parents(n).unwrap());
    let owned = |xs: &[&str]| -> BTreeSet<String> { xs.iter().map(|s| s.to_string()).collect() };

    let [b, d_stage] = before_selection.as_slice() else {
        return Err(format!("expected two policy selections, saw {}", before_selection.len()));
    };
    let checks = [
        ("b nodes", names_of(b) == owned(&["Test", "Results", "Drill", "Profit"])),
        ("b value parents", parents(b, ids.value) == set(&[ids.test, ids.results, ids.drill])),
        ("b drill parents", parents(b, ids.drill) == set(&[ids.test, ids.results])),
        ("c drill is chance", after_drill.node(ids.drill).unwrap().kind() == NodeKind::Chance),
        ("c value parents", parents(&after_drill, ids.value).is_subset(&set(&[ids.test, ids.results]))),
        ("d nodes", names_of(d_stage) == owned(&["Test", "Profit"])),
        ("d value parents", parents(d_stage, ids.value) == set(&[ids.test])),
        ("e nodes", snapshots.last().is_some_and(|(_, e)| names_of(e) == owned(&["Profit"]))),
    ];
    if let Some((what, _)) = checks.iter().find(|(_, ok)| !ok) {
        return Err(format!("checkpoint {what} does not match"));
    }
    let truth = brute_solve(&d, &OracleConfig::default()).map_err(|e| e.to_string())?;
    if !policies_agree(&d, &policy, &truth) {
        return Err("policy differs from exhaustive search".into());
    }
    if !close(policy.meu, truth.meu, 1e-9) {
        return Err(format!("meu {} vs {}", policy.meu, truth.meu));
    }
    Ok(format!("all four solve checkpoints match; meu {:.6} equals exhaustive search", policy.meu))
}

/// Whether `j` and `k` are independent given `l` in the normalized joint.
fn numerically_independent(d: &Diagram, j: &[NodeId], k: &[NodeId], l: &[NodeId]) -> bool {
    let joint = brute_joint(d, &BTreeMap::new(), &OracleConfig::default()).unwrap();
    let total = joint.total();
    let scope = joint.scope().to_vec();
    let cards = joint.cardinalities().to_vec();
    let project = |digits: &[usize], vars: &[NodeId]| -> Vec<usize> {
        vars.iter().map(|v| digits[scope.iter().position(|s| s == v).unwrap()]).collect()
    };
    type Key3 = (Vec<usize>, Vec<usize>, Vec<usize>);
    let mut pjkl: BTreeMap<Key3, f64> = BTreeMap::new();
    let mut pjl: BTreeMap<(Vec<usize>, Vec<usize>), f64> = BTreeMap::new();
    let mut pkl: BTreeMap<(Vec<usize>, Vec<usize>), f64> = BTreeMap::new();
    let mut pl: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut digits = vec![0; cards.len()];
    for v in joint.values() {
        let p = v / total;
        let (xj, xk, xl) = (project(&digits, j), project(&digits, k), project(&digits, l));
        *pjkl.entry((xj.clone(), xk.clone(), xl.clone())).or_default() += p;
        *pjl.entry((xj, xl.clone())).or_default() += p;
        *pkl.entry((xk, xl.clone())).or_default() += p;
        *pl.entry(xl).or_default() += p;
        for x in (0..digits.len()).rev() {
            digits[x] += 1;
            if digits[x] < cards[x] {
                break;
            }
            digits[x] = 0;
        }
    }
    pjkl.iter().all(|((xj, xk, xl), p)| {
        let lhs = p * pl[xl];
        let rhs = pjl[&(xj.clone(), xl.clone())] * pkl[&(xk.clone(), xl.clone())];
        close(lhs, rhs, 1e-10)
    })
}

fn criterion8() -> Outcome {
    let spec = RandomSpec { nodes: 8..=8, cardinality: 2..=3, max_parents: 3, arc_probability: 0.3 };
    let (mut unsound, mut flagged, mut separated) = (0, 0, 0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8_000 + seed);
        let d = random_cid(&mut rng, &spec);
        for _ in 0..5 {
            let mut pool = d.node_ids();
            for k in (1..pool.len()).rev() {
                pool.swap(k, rng.gen_range(0..=k));
            }
            let nj = rng.gen_range(1..=2);
            let nk = rng.gen_range(1..=2);
            let nl = rng.gen_range(0..=3);
            let j = &pool[..nj];
            let k = &pool[nj..nj + nk];
            let l = &pool[nj + nk..nj + nk + nl];
            let graph = d_separated(&d, j, k, l).map_err(|e| e.to_string())?;
            let numeric = numerically_independent(&d, j, k, l);
            if graph != d_separated(&d, k, j, l).map_err(|e| e.to_string())? {
                return Err(format!("seed {seed}: d-separation is not symmetric"));
            }
            separated += usize::from(graph);
            if graph && !numeric {
                unsound += 1;
            }
            if !graph && numeric {
                flagged += 1;
            }
        }
    }
    if unsound > 0 || flagged > 0 {
        return Err(format!("{unsound} unsound answers, {flagged} flagged coincidences"));
    }
    Ok(format!("100 triples ({separated} separated), no unsound answers, no flagged coincidences"))
}

fn criterion9() -> Outcome {
    let spec = RandomSpec::default();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + seed);
        let mut pid = random_cid(&mut rng, &spec);
        let mut ops = OpCounters::new();
        let reversals = rng.gen_range(1..=4);
        random_potential_reversals(&mut pid, &mut rng, reversals, &mut ops);
        let observe = rng.gen_range(0..=1);
        for (n, s) in random_evidence(&pid, &mut rng, observe) {
            pid.instantiate_evidence(n, s, &mut ops).map_err(|e| e.to_string())?;
        }
        let nodes = pid.unobserved_chance();
        let truth = all_posteriors(&pid, &[], &nodes)?;
        for mode in [ConversionMode::Lazy, ConversionMode::Eager] {
            let mut cid = pid.clone();
            let target = TargetOrder::from_diagram(&cid).map_err(|e| e.to_string())?;
            pid_to_cid(&mut cid, &target, mode, &mut ops).map_err(|e| format!("seed {seed}: {e}"))?;
            if !cid.is_cid() || !cid.validate_regular().is_regular() {
                return Err(format!("seed {seed}: {mode:?} output is not a regular CID"));
            }
            let got = all_posteriors(&cid, &[], &nodes)?;
            if !truth.iter().zip(&got).all(|(x, y)| tables_close(x, y, 1e-9)) {
                return Err(format!("seed {seed}: {mode:?} posteriors changed"));
            }
        }
    }
    Ok("50 potential diagrams convert to regular CIDs with unchanged posteriors".into())
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("joint preservation under primitives", criterion1),
        ("potential reversal and conditionalization triangle", criterion2),
        ("decision solving matches exhaustive search", criterion3),
        ("evidence propagation structure", criterion4),
        ("reduction cases", criterion5),
        ("division count, pid vs cid inference", criterion6),
        ("oil wildcatter end to end", criterion7),
        ("d-separation against numeric independence", criterion8),
        ("pid to cid round trip", criterion9),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}: {name}: {detail} ({secs:.2}s)", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}: {name}: {detail} ({secs:.2}s)", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
