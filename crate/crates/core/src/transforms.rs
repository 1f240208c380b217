//! Compound algorithms built from the primitives: evidence propagation,
//! probabilistic reduction, conversion of potential diagrams into
//! conditional ones, posterior inference, decision solving and
//! d-separation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::diagram::{Diagram, DiagramError, NodeId, NodeKind, TableKind, Violation};
use crate::primitives::PolicyFragment;
use crate::tables::{OpCounters, PotentialTable, StateTable, TableError, Variable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error("the evidence has probability zero")]
    ZeroProbabilityEvidence,
    #[error("the diagram is not regular: {0:?}")]
    NotRegular(Vec<Violation>),
    #[error("no solution step applies: {0}")]
    Stuck(String),
    #[error("node {0} has fewer than two observed children")]
    FewerThanTwoObservedChildren(NodeId),
    #[error("node {0} is not observed")]
    NotEvidence(NodeId),
    #[error("node sets overlap at {0}")]
    OverlappingSets(NodeId),
    #[error("inference does not accept decision node {0}")]
    HasDecisions(NodeId),
}

impl From<TableError> for TransformError {
    fn from(e: TableError) -> Self {
        TransformError::Diagram(e.into())
    }
}

pub type Result<T, E = TransformError> = std::result::Result<T, E>;

/// A permutation of the unobserved chance nodes of a diagram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetOrder(Vec<NodeId>);

impl TargetOrder {
    pub fn new(d: &Diagram, order: Vec<NodeId>) -> Result<Self> {
        let expected: BTreeSet<NodeId> = d.unobserved_chance().into_iter().collect();
        let given: BTreeSet<NodeId> = order.iter().copied().collect();
        if given.len() != order.len() || given != expected {
            return Err(DiagramError::InvalidTarget(
                "target must list every unobserved chance node exactly once".into(),
            )
            .into());
        }
        Ok(TargetOrder(order))
    }

    /// The diagram's own ordered list restricted to unobserved chance nodes.
    pub fn from_diagram(d: &Diagram) -> Result<Self> {
        let unobserved: BTreeSet<NodeId> = d.unobserved_chance().into_iter().collect();
        let order = d.ordered_list()?.into_iter().filter(|n| unobserved.contains(n)).collect();
        Ok(TargetOrder(order))
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.0
    }
}

/// Solved decision problem.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Policy {
    pub fragments: BTreeMap<NodeId, PolicyFragment>,
    /// Expected utility under the optimal policy, conditioned on the evidence.
    pub meu: f64,
    /// Unnormalized expected utility (probability mass times utility).
    pub raw_value: f64,
    /// Probability of the evidence (total mass) under the optimal policy.
    pub evidence_probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionCase {
    NoParentsNoChildren,
    ParentsNoChildren,
    OneChild,
    MultipleChildren,
}

impl ReductionCase {
    pub fn number(self) -> u8 {
        match self {
            ReductionCase::NoParentsNoChildren => 1,
            ReductionCase::ParentsNoChildren => 2,
            ReductionCase::OneChild => 3,
            ReductionCase::MultipleChildren => 4,
        }
    }
}

/// Outcome of one probabilistic reduction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Reduction {
    pub node: NodeId,
    pub case: ReductionCase,
    /// Node whose table absorbed the reduced node's information.
    pub absorbed_into: Option<NodeId>,
    /// Observed dummy created to hold a normalizing constant.
    pub dummy: Option<NodeId>,
    /// Children potential-reversed before the final absorption (case 4).
    pub reversed: Vec<NodeId>,
}

fn position_map(d: &Diagram) -> Result<BTreeMap<NodeId, usize>> {
    Ok(d.ordered_list()?.into_iter().enumerate().map(|(k, n)| (n, k)).collect())
}

/// Remove unobserved chance node `i`, folding everything it carried into a
/// neighbouring table so that the product of all tables, summed over `i`,
/// is unchanged.
pub fn reduce_node(d: &mut Diagram, i: NodeId, ops: &mut OpCounters) -> Result<Reduction> {
    let node = d.node(i)?;
    match node.kind() {
        NodeKind::Value => return Err(DiagramError::IsValue(i).into()),
        NodeKind::Decision => return Err(DiagramError::IsDecision(i).into()),
        NodeKind::Chance => {}
    }
    if node.is_observed() {
        return Err(DiagramError::IsEvidence(i).into());
    }
    let children = d.children(i)?;
    if children.iter().any(|c| d.nodes[c].kind() == NodeKind::Decision) {
        return Err(DiagramError::InformationalPredecessor(i).into());
    }
    let parents = node.parents().to_vec();
    let name = node.name().to_string();

    match children.len() {
        0 if parents.is_empty() => {
            let total = d.full_table(i, ops)?.sum_out(i, ops)?;
            d.remove_node(i)?;
            let m = d.add_dummy(format!("{name}~norm"), vec![], total)?;
            Ok(Reduction { node: i, case: ReductionCase::NoParentsNoChildren, absorbed_into: None, dummy: Some(m), reversed: vec![] })
        }
        0 => {
            let pos = position_map(d)?;
            let mut candidates: Vec<NodeId> =
                parents.iter().copied().filter(|p| d.nodes[p].kind() == NodeKind::Chance).collect();
            candidates.sort_by_key(|p| std::cmp::Reverse(pos[p]));
            let mut chosen = None;
            for j in candidates {
                let below = d.descendants(j)?;
                if !parents.iter().any(|p| *p != j && below.contains(p)) {
                    chosen = Some(j);
                    break;
                }
            }
            let summed = d.full_table(i, ops)?.sum_out(i, ops)?;
            d.remove_node(i)?;
            match chosen {
                Some(j) => {
                    let table = d.nodes[&j].table().ok_or(DiagramError::MissingTable(j))?.multiply(&summed, ops)?;
                    let mut new_parents: BTreeSet<NodeId> = d.nodes[&j].parents().iter().copied().collect();
                    new_parents.extend(parents.iter().copied().filter(|p| *p != j));
                    d.set_table(j, table, TableKind::Potential)?;
                    d.set_parents(j, new_parents)?;
                    Ok(Reduction { node: i, case: ReductionCase::ParentsNoChildren, absorbed_into: Some(j), dummy: None, reversed: vec![] })
                }
                None => {
                    // every parent is a decision or reaches another parent
                    let m = d.add_dummy(format!("{name}~norm"), parents, summed)?;
                    Ok(Reduction { node: i, case: ReductionCase::ParentsNoChildren, absorbed_into: None, dummy: Some(m), reversed: vec![] })
                }
            }
        }
        1 => {
            let j = *children.first().expect("one child");
            absorb_into_child(d, i, j, ops)?;
            Ok(Reduction { node: i, case: ReductionCase::OneChild, absorbed_into: Some(j), dummy: None, reversed: vec![] })
        }
        _ => {
            let pos = position_map(d)?;
            let value = d.value_node().filter(|v| children.contains(v));
            let j = value.unwrap_or_else(|| *children.iter().max_by_key(|c| pos[c]).expect("children"));
            let mut others: Vec<NodeId> = children.iter().copied().filter(|c| *c != j).collect();
            others.sort_by_key(|c| pos[c]);
            for k in &others {
                d.potential_reversal(i, *k, ops)?;
            }
            absorb_into_child(d, i, j, ops)?;
            Ok(Reduction { node: i, case: ReductionCase::MultipleChildren, absorbed_into: Some(j), dummy: None, reversed: others })
        }
    }
}

/// Sum `i` out of the product of its table and its only child's table,
/// storing the result at the child.
fn absorb_into_child(d: &mut Diagram, i: NodeId, j: NodeId, ops: &mut OpCounters) -> Result<()> {
    let ti = d.full_table(i, ops)?;
    let tj = d.nodes[&j].table().ok_or(DiagramError::MissingTable(j))?;
    let table = ti.multiply(tj, ops)?.sum_out(i, ops)?;
    let mut new_parents: BTreeSet<NodeId> = d.nodes[&j].parents().iter().copied().collect();
    new_parents.extend(d.nodes[&i].parents().iter().copied());
    new_parents.remove(&i);
    d.remove_node(i)?;
    let kind = if d.nodes[&j].is_observed() && table.values().iter().all(|x| (x - 1.0).abs() <= crate::diagram::CONDITIONAL_TOL) {
        TableKind::Conditional
    } else {
        TableKind::Potential
    };
    d.set_table(j, table, kind)?;
    d.set_parents(j, new_parents)?;
    Ok(())
}

fn observed_children(d: &Diagram, i: NodeId) -> Result<Vec<NodeId>> {
    Ok(d.children(i)?.into_iter().filter(|c| d.nodes[c].is_observed()).collect())
}

/// Replace the observed children of `i` by a single observed node whose
/// table is their product and whose parents are the union of theirs. The
/// combined node keeps the lowest id.
pub fn combine_observed_children(d: &mut Diagram, i: NodeId, ops: &mut OpCounters) -> Result<NodeId> {
    let observed = observed_children(d, i)?;
    if observed.len() < 2 {
        return Err(TransformError::FewerThanTwoObservedChildren(i));
    }
    let keep = observed[0];
    let mut table = PotentialTable::scalar(1.0)?;
    let mut parents = BTreeSet::new();
    let mut names = Vec::new();
    for e in &observed {
        let n = &d.nodes[e];
        table = table.multiply(n.table().ok_or(DiagramError::MissingTable(*e))?, ops)?;
        parents.extend(n.parents().iter().copied());
        names.push(n.name().to_string());
    }
    for e in &observed[1..] {
        d.remove_node(*e)?;
    }
    let variable = Variable::new(keep, names.join("+"), vec!["observed".into()])?;
    let node = d.node_mut(keep)?;
    node.variable = variable;
    node.evidence = Some(0);
    node.table = Some(table);
    node.table_kind = if node.table_is_normalized() { TableKind::Conditional } else { TableKind::Potential };
    d.set_parents(keep, parents)?;
    Ok(keep)
}

/// Record of an evidence propagation run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PropagationTrace {
    /// Arc reversals `(node, evidence)` in the order performed.
    pub reversals: Vec<(NodeId, NodeId)>,
    /// Observed nodes merged by combination: `(kept, merged)`.
    pub combined: Vec<(NodeId, Vec<NodeId>)>,
    /// For each surviving observed node, the nodes reversed into it.
    pub absorbed: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Dummies created by conditionalization along the way.
    pub dummies: Vec<NodeId>,
}

fn visit_reverse(d: &mut Diagram, target: &TargetOrder, lazy: bool, ops: &mut OpCounters, trace: &mut PropagationTrace) -> Result<()> {
    for &x in target.as_slice().iter().rev() {
        if lazy && d.nodes[&x].table_kind() == TableKind::Potential {
            trace.dummies.push(d.conditionalize(x, ops)?);
        }
        if observed_children(d, x)?.len() >= 2 {
            let before = observed_children(d, x)?;
            let kept = combine_observed_children(d, x, ops)?;
            let mut merged = BTreeSet::new();
            for e in &before {
                merged.extend(trace.absorbed.remove(e).unwrap_or_default());
            }
            trace.absorbed.insert(kept, merged);
            trace.combined.push((kept, before.into_iter().filter(|e| *e != kept).collect()));
        }
        if let Some(e) = observed_children(d, x)?.first().copied() {
            d.arc_reversal(x, e, ops)?;
            trace.reversals.push((x, e));
            trace.absorbed.entry(e).or_default().insert(x);
        }
    }
    Ok(())
}

/// Move every observed node to the front of an ordered list by reversing
/// arcs into the evidence, visiting unobserved nodes in reverse target
/// order. The result represents the posterior given the evidence.
pub fn propagate_evidence(d: &mut Diagram, target: &TargetOrder, ops: &mut OpCounters) -> Result<PropagationTrace> {
    if !d.admits_order(target.as_slice()) {
        d.order_to_target(target.as_slice(), ops)?;
    }
    let mut trace = PropagationTrace::default();
    visit_reverse(d, target, false, ops, &mut trace)?;
    Ok(trace)
}

fn decomposable_over(d: &Diagram, set: &BTreeSet<NodeId>, children: impl Iterator<Item = NodeId>) -> bool {
    let arcs = d.arcs();
    let adjacent = |a: NodeId, b: NodeId| arcs.contains(&(a, b)) || arcs.contains(&(b, a));
    for c in children {
        let Ok(node) = d.node(c) else { continue };
        let ps: Vec<NodeId> = node.parents().iter().copied().filter(|p| set.contains(p)).collect();
        for (k, a) in ps.iter().enumerate() {
            if ps[k + 1..].iter().any(|b| !adjacent(*a, *b)) {
                return false;
            }
        }
    }
    // unique topological order of the induced subgraph
    let mut indegree: BTreeMap<NodeId, usize> = set
        .iter()
        .map(|n| (*n, d.nodes.get(n).map_or(0, |x| x.parents().iter().filter(|p| set.contains(p)).count())))
        .collect();
    let mut remaining = set.len();
    while remaining > 0 {
        let ready: Vec<NodeId> = indegree.iter().filter(|(_, v)| **v == 0).map(|(k, _)| *k).collect();
        if ready.len() != 1 {
            return false;
        }
        let r = ready[0];
        indegree.remove(&r);
        remaining -= 1;
        for (n, deg) in indegree.iter_mut() {
            if d.nodes[n].parents().contains(&r) {
                *deg -= 1;
            }
        }
    }
    true
}

/// Whether the ancestors of observed node `e` are decomposable: any two of
/// them sharing a child (among the ancestors and `e`) are joined by an arc,
/// and they admit a unique ordered list.
pub fn check_decomposable(d: &Diagram, e: NodeId) -> Result<bool> {
    if !d.node(e)?.is_observed() {
        return Err(TransformError::NotEvidence(e));
    }
    let anc = d.ancestors(e)?;
    let children: Vec<NodeId> = anc.iter().copied().chain(std::iter::once(e)).collect();
    Ok(decomposable_over(d, &anc, children.into_iter()))
}

/// Decomposability of an arbitrary node set, considering shared children
/// inside the set. Used on the ancestor sets recorded by a
/// [`PropagationTrace`], since after propagation evidence nodes have no
/// parents left.
pub fn check_decomposable_set(d: &Diagram, set: &BTreeSet<NodeId>) -> bool {
    decomposable_over(d, set, set.iter().copied())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConversionMode {
    /// Conditionalize each node when it is visited.
    #[default]
    Lazy,
    /// Conditionalize every potential up front.
    Eager,
}

/// Convert a potential diagram into a conditional one. Normalizing
/// constants end up in observed dummies that are propagated to the front
/// and folded into the diagram constant.
pub fn pid_to_cid(d: &mut Diagram, target: &TargetOrder, mode: ConversionMode, ops: &mut OpCounters) -> Result<PropagationTrace> {
    let mut trace = PropagationTrace::default();
    let reorder = !d.admits_order(target.as_slice());
    if mode == ConversionMode::Eager || reorder {
        for n in d.unobserved_chance() {
            if d.nodes[&n].table_kind() == TableKind::Potential {
                trace.dummies.push(d.conditionalize(n, ops)?);
            }
        }
    }
    if reorder {
        d.order_to_target(target.as_slice(), ops)?;
    }
    visit_reverse(d, target, true, ops, &mut trace)?;
    d.absorb_constants(ops);
    trace.absorbed.retain(|k, _| d.contains(*k));
    Ok(trace)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Probabilistic reduction with potentials; divides only at the end.
    #[default]
    Pid,
    /// Arc reversals and barren node removal on conditional distributions.
    Cid,
}

#[derive(Clone, Debug, Default)]
pub struct InferOptions {
    pub mode: InferenceMode,
    /// Preferred elimination order; nodes not listed follow in reverse
    /// topological order.
    pub order: Option<Vec<NodeId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Posterior {
    pub marginals: BTreeMap<NodeId, PotentialTable>,
    pub evidence_probability: f64,
}

fn point_mass(id: NodeId, card: usize, state: usize) -> Result<PotentialTable> {
    let values = (0..card).map(|k| if k == state { 1.0 } else { 0.0 }).collect();
    Ok(PotentialTable::new(&[(id, card)], values)?)
}

/// Elimination sequence: preferred nodes first, then the rest in reverse
/// topological order.
fn elimination_order(d: &Diagram, eligible: &BTreeSet<NodeId>, preferred: Option<&[NodeId]>) -> Result<Vec<NodeId>> {
    let mut order: Vec<NodeId> = preferred.unwrap_or(&[]).iter().copied().filter(|n| eligible.contains(n)).collect();
    let listed: BTreeSet<NodeId> = order.iter().copied().collect();
    order.extend(d.ordered_list()?.into_iter().rev().filter(|n| eligible.contains(n) && !listed.contains(n)));
    Ok(order)
}

fn prepare_inference(d: &Diagram, evidence: &[(NodeId, usize)], ops: &mut OpCounters) -> Result<Diagram> {
    let mut w = d.clone();
    if let Some(dec) = w.decisions().first() {
        return Err(TransformError::HasDecisions(*dec));
    }
    if let Some(v) = w.value_node() {
        w.remove_node(v)?;
    }
    for (n, s) in evidence {
        w.instantiate_evidence(*n, *s, ops)?;
    }
    Ok(w)
}

/// Posterior marginals of `query` given `evidence`.
pub fn infer_posterior(
    d: &Diagram,
    evidence: &[(NodeId, usize)],
    query: &[NodeId],
    opts: &InferOptions,
    ops: &mut OpCounters,
) -> Result<Posterior> {
    for q in query {
        d.node(*q)?;
    }
    let w = prepare_inference(d, evidence, ops)?;
    match opts.mode {
        InferenceMode::Pid => infer_pid(w, query, opts.order.as_deref(), ops),
        InferenceMode::Cid => infer_cid(w, query, ops),
    }
}

fn infer_pid(mut w: Diagram, query: &[NodeId], order: Option<&[NodeId]>, ops: &mut OpCounters) -> Result<Posterior> {
    let mut marginals = BTreeMap::new();
    for &q in query {
        let node = w.node(q)?;
        if let Some(s) = node.evidence() {
            marginals.insert(q, point_mass(q, node.cardinality(), s)?);
        }
    }
    let keep: BTreeSet<NodeId> = query.iter().copied().collect();
    let eligible: BTreeSet<NodeId> = w.unobserved_chance().into_iter().filter(|n| !keep.contains(n)).collect();
    for n in elimination_order(&w, &eligible, order)? {
        reduce_node(&mut w, n, ops)?;
    }
    w.absorb_constants(ops);

    let mut evidence_probability = None;
    for &q in query {
        if marginals.contains_key(&q) {
            continue;
        }
        let mut wq = w.clone();
        for other in wq.unobserved_chance() {
            if other != q {
                reduce_node(&mut wq, other, ops)?;
            }
        }
        for e in wq.children(q)? {
            wq.potential_reversal(q, e, ops)?;
        }
        wq.absorb_constants(ops);
        let full = wq.full_table(q, ops)?;
        let total = full.total() * wq.constant();
        if total == 0.0 {
            return Err(TransformError::ZeroProbabilityEvidence);
        }
        let m = wq.conditionalize(q, ops)?;
        let normalizer = wq.nodes[&m].table().and_then(PotentialTable::as_scalar).unwrap_or(0.0);
        evidence_probability = Some(normalizer * wq.constant());
        marginals.insert(q, wq.nodes[&q].table().expect("conditionalized").clone());
    }
    let evidence_probability = match evidence_probability {
        Some(p) => p,
        None => {
            for n in w.unobserved_chance() {
                reduce_node(&mut w, n, ops)?;
            }
            w.absorb_constants(ops);
            w.constant()
        }
    };
    if evidence_probability == 0.0 {
        return Err(TransformError::ZeroProbabilityEvidence);
    }
    Ok(Posterior { marginals, evidence_probability })
}

/// Eliminate `i` the conditional way: reverse each outgoing arc (children
/// in graph order) until it is barren, then remove it.
fn cid_eliminate(d: &mut Diagram, i: NodeId, ops: &mut OpCounters) -> Result<()> {
    loop {
        let children = d.children(i)?;
        if children.is_empty() {
            break;
        }
        let order = d.ordered_list()?;
        let c = *order.iter().find(|n| children.contains(n)).expect("child is ordered");
        d.arc_reversal(i, c, ops)?;
    }
    d.remove_barren(i)?;
    Ok(())
}

fn infer_cid(mut w: Diagram, query: &[NodeId], ops: &mut OpCounters) -> Result<Posterior> {
    let mut marginals = BTreeMap::new();
    for &q in query {
        let node = w.node(q)?;
        if let Some(s) = node.evidence() {
            marginals.insert(q, point_mass(q, node.cardinality(), s)?);
        }
    }
    for n in w.unobserved_chance() {
        if w.nodes[&n].table_kind() == TableKind::Potential {
            w.conditionalize(n, ops)?;
        }
    }
    let target = TargetOrder::from_diagram(&w)?;
    propagate_evidence(&mut w, &target, ops)?;
    w.absorb_constants(ops);
    let evidence_probability = w.constant()
        * w.observed().iter().filter_map(|e| w.nodes[e].table().and_then(PotentialTable::as_scalar)).product::<f64>();
    if evidence_probability == 0.0 {
        return Err(TransformError::ZeroProbabilityEvidence);
    }

    for &q in query {
        if marginals.contains_key(&q) {
            continue;
        }
        let mut wq = w.clone();
        let relevant = wq.ancestors(q)?;
        loop {
            let barren = wq
                .unobserved_chance()
                .into_iter()
                .find(|n| *n != q && !relevant.contains(n) && wq.children(*n).is_ok_and(|c| c.is_empty()));
            match barren {
                Some(b) => wq.remove_barren(b)?,
                None => break,
            }
        }
        loop {
            let anc = wq.ancestors(q)?;
            let order = wq.ordered_list()?;
            match order.into_iter().find(|n| anc.contains(n)) {
                Some(a) => cid_eliminate(&mut wq, a, ops)?,
                None => break,
            }
        }
        marginals.insert(q, wq.full_table(q, ops)?);
    }
    Ok(Posterior { marginals, evidence_probability })
}

/// One step taken by the decision solver.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum SolveStep {
    RemovedBarren { node: NodeId },
    Reduced { node: NodeId, case: ReductionCase },
    FoldedObservation { node: NodeId },
    SelectedPolicy { decision: NodeId },
}

#[derive(Clone, Debug, Default)]
pub struct SolveOptions {
    /// Preferred reduction order for unobserved chance nodes.
    pub order: Option<Vec<NodeId>>,
}

/// Solve the decision problem: repeatedly remove a barren node, reduce an
/// unobserved chance node, or select the policy of the last decision.
pub fn solve_decision(d: &Diagram, opts: &SolveOptions, ops: &mut OpCounters) -> Result<Policy> {
    solve_decision_traced(d, opts, ops, |_, _| {})
}

/// As [`solve_decision`], calling `observe` after every step with the
/// current diagram.
pub fn solve_decision_traced(
    d: &Diagram,
    opts: &SolveOptions,
    ops: &mut OpCounters,
    mut observe: impl FnMut(&SolveStep, &Diagram),
) -> Result<Policy> {
    let report = d.validate_regular();
    if !report.is_regular() {
        return Err(TransformError::NotRegular(report.violations));
    }
    let value = d.value_node().ok_or(DiagramError::MissingValueNode)?;
    let mut w = d.clone();
    let mut fragments = BTreeMap::new();

    loop {
        let decisions = w.decisions();
        let informed: BTreeSet<NodeId> = decisions.iter().flat_map(|dec| w.nodes[dec].parents().to_vec()).collect();
        let child_map = w.child_map();

        let barren = w.nodes().find(|n| {
            n.kind() != NodeKind::Value
                && !n.is_observed()
                && child_map[&n.id()].is_empty()
                && (n.kind() == NodeKind::Decision || n.table_kind() == TableKind::Conditional)
        });
        if let Some(n) = barren.map(|n| n.id()) {
            if w.nodes[&n].kind() == NodeKind::Decision {
                fragments.insert(n, PolicyFragment { decision: n, choices: StateTable::constant(&[], 0) });
            }
            w.remove_barren(n)?;
            observe(&SolveStep::RemovedBarren { node: n }, &w);
            continue;
        }

        let eligible: BTreeSet<NodeId> = w.unobserved_chance().into_iter().filter(|n| !informed.contains(n)).collect();
        if let Some(&n) = elimination_order(&w, &eligible, opts.order.as_deref())?.first() {
            let r = reduce_node(&mut w, n, ops)?;
            observe(&SolveStep::Reduced { node: n, case: r.case }, &w);
            continue;
        }

        if decisions.is_empty() {
            break;
        }
        let last = decisions
            .iter()
            .copied()
            .find(|dec| w.is_last_decision(*dec).unwrap_or(false))
            .ok_or_else(|| TransformError::Stuck("no last decision".into()))?;
        let info: BTreeSet<NodeId> = w.nodes[&last].parents().iter().copied().collect();
        for c in w.children(last)? {
            let child = &w.nodes[&c];
            if c == value || !child.is_observed() {
                continue;
            }
            if child.parents().iter().any(|p| *p != last && !info.contains(p)) {
                return Err(TransformError::Stuck(format!("observation {} depends on unobserved nodes", child.name())));
            }
            let table = w.nodes[&value].table().expect("value table").multiply(child.table().expect("observed table"), ops)?;
            let mut parents: BTreeSet<NodeId> = w.nodes[&value].parents().iter().copied().collect();
            parents.extend(child.parents().iter().copied());
            w.set_table(value, table, TableKind::Potential)?;
            w.set_parents(value, parents)?;
            w.remove_node(c)?;
            observe(&SolveStep::FoldedObservation { node: c }, &w);
        }
        let fragment = w.select_policy(last, ops).map_err(|e| TransformError::Stuck(e.to_string()))?;
        fragments.insert(last, fragment);
        observe(&SolveStep::SelectedPolicy { decision: last }, &w);
    }

    w.absorb_constants(ops);
    let remaining: Vec<NodeId> = w.node_ids().into_iter().filter(|n| *n != value).collect();
    if !remaining.is_empty() {
        return Err(TransformError::Stuck(format!("nodes {remaining:?} remain after solving")));
    }
    let utility = w.nodes[&value].table().and_then(PotentialTable::as_scalar).ok_or_else(|| {
        TransformError::Stuck("value table still depends on other nodes".into())
    })?;
    let raw_value = utility * w.constant();

    let evidence_probability = policy_mass(d, &fragments, ops)?;
    if evidence_probability == 0.0 {
        return Err(TransformError::ZeroProbabilityEvidence);
    }
    Ok(Policy { fragments, meu: raw_value / evidence_probability, raw_value, evidence_probability })
}

/// Total probability mass of `d` with every decision replaced by its
/// policy and the value node dropped.
fn policy_mass(d: &Diagram, fragments: &BTreeMap<NodeId, PolicyFragment>, ops: &mut OpCounters) -> Result<f64> {
    let mut w = d.clone();
    if let Some(v) = w.value_node() {
        w.remove_node(v)?;
    }
    for dec in w.decisions() {
        let frag = &fragments[&dec];
        let card = w.nodes[&dec].cardinality();
        let mut scope: Vec<(NodeId, usize)> =
            frag.choices.scope().iter().copied().zip(frag.choices.cardinalities().iter().copied()).collect();
        scope.push((dec, card));
        let mut cells = Vec::new();
        for s in frag.choices.states() {
            cells.extend((0..card).map(|k| if k == *s { 1.0 } else { 0.0 }));
        }
        let table = PotentialTable::new(&scope, cells)?;
        let node = w.node_mut(dec)?;
        node.kind = NodeKind::Chance;
        node.table = Some(table);
        node.table_kind = TableKind::Conditional;
    }
    let eligible: BTreeSet<NodeId> = w.unobserved_chance().into_iter().collect();
    for n in elimination_order(&w, &eligible, None)? {
        reduce_node(&mut w, n, ops)?;
    }
    w.absorb_constants(ops);
    let leftover: f64 = w.observed().iter().filter_map(|e| w.nodes[e].table().and_then(PotentialTable::as_scalar)).product();
    Ok(w.constant() * leftover)
}

/// d-separation of `j` from `k` given `l`. Observed nodes of the diagram
/// join the conditioning set, and every unobserved chance node carrying a
/// potential gets an observed dummy child first.
pub fn d_separated(d: &Diagram, j: &[NodeId], k: &[NodeId], l: &[NodeId]) -> Result<bool> {
    let js: BTreeSet<NodeId> = j.iter().copied().collect();
    let ks: BTreeSet<NodeId> = k.iter().copied().collect();
    let ls: BTreeSet<NodeId> = l.iter().copied().collect();
    for n in js.iter().chain(&ks).chain(&ls) {
        d.node(*n)?;
    }
    if let Some(x) = js.intersection(&ks).next().or_else(|| js.intersection(&ls).next()).or_else(|| ks.intersection(&ls).next()) {
        return Err(TransformError::OverlappingSets(*x));
    }

    // graph over usize handles; dummies get fresh handles
    let mut parents: BTreeMap<usize, Vec<usize>> =
        d.nodes().map(|n| (n.id().0, n.parents().iter().map(|p| p.0).collect())).collect();
    let mut given: BTreeSet<usize> = ls.iter().map(|n| n.0).collect();
    for n in d.nodes() {
        if n.is_observed() && !js.contains(&n.id()) && !ks.contains(&n.id()) {
            given.insert(n.id().0);
        }
    }
    let mut next = parents.keys().max().map_or(0, |m| m + 1);
    for n in d.nodes() {
        if n.kind() == NodeKind::Chance && !n.is_observed() && n.table_kind() == TableKind::Potential {
            parents.insert(next, vec![n.id().0]);
            given.insert(next);
            next += 1;
        }
    }

    // ancestral set of everything mentioned
    let mut ancestral: BTreeSet<usize> = BTreeSet::new();
    let mut stack: Vec<usize> = js.iter().chain(&ks).map(|n| n.0).chain(given.iter().copied()).collect();
    while let Some(n) = stack.pop() {
        if ancestral.insert(n) {
            stack.extend(parents[&n].iter().copied());
        }
    }

    // moralize within the ancestral set
    let mut adj: BTreeMap<usize, BTreeSet<usize>> = ancestral.iter().map(|n| (*n, BTreeSet::new())).collect();
    for n in &ancestral {
        let ps = &parents[n];
        for (a, p) in ps.iter().enumerate() {
            adj.get_mut(n).expect("in set").insert(*p);
            adj.get_mut(p).expect("ancestor").insert(*n);
            for q in &ps[a + 1..] {
                adj.get_mut(p).expect("ancestor").insert(*q);
                adj.get_mut(q).expect("ancestor").insert(*p);
            }
        }
    }

    let targets: BTreeSet<usize> = ks.iter().map(|n| n.0).collect();
    let mut seen: BTreeSet<usize> = js.iter().map(|n| n.0).collect();
    let mut queue: VecDeque<usize> = seen.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        if targets.contains(&n) {
            return Ok(false);
        }
        for m in &adj[&n] {
            if !given.contains(m) && seen.insert(*m) {
                queue.push_back(*m);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::close;

    fn chain() -> (Diagram, [NodeId; 3]) {
        let mut d = Diagram::new();
        let a = d.add_chance("A", &["0", "1"], &[], vec![0.3, 0.7]).unwrap();
        let b = d.add_chance("B", &["0", "1"], &[a], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let c = d.add_chance("C", &["0", "1"], &[b], vec![0.6, 0.4, 0.1, 0.9]).unwrap();
        (d, [a, b, c])
    }

    #[test]
    fn case_one_isolated_node() {
        let mut d = Diagram::new();
        let i = d.add_chance("I", &["0", "1"], &[], vec![3.0, 7.0]).unwrap();
        let r = reduce_node(&mut d, i, &mut OpCounters::new()).unwrap();
        assert_eq!(r.case, ReductionCase::NoParentsNoChildren);
        let m = r.dummy.unwrap();
        assert_eq!(d.node(m).unwrap().table().unwrap().as_scalar(), Some(10.0));
        assert!(!d.contains(i));
    }

    #[test]
    fn case_two_leaf_with_parent() {
        let mut d = Diagram::new();
        let p = d.add_chance("P", &["0", "1"], &[], vec![0.4, 0.6]).unwrap();
        let i = d.add_chance("I", &["0", "1", "2"], &[p], vec![1.0, 2.0, 0.5, 0.3, 0.3, 0.3]).unwrap();
        let r = reduce_node(&mut d, i, &mut OpCounters::new()).unwrap();
        assert_eq!(r.case, ReductionCase::ParentsNoChildren);
        assert_eq!(r.absorbed_into, Some(p));
        let t = d.node(p).unwrap().table().unwrap();
        assert!(close(t.values()[0], 0.4 * 3.5, 1e-15));
        assert!(close(t.values()[1], 0.6 * 0.9, 1e-15));
    }

    #[test]
    fn reduction_errors() {
        let (mut d, [a, ..]) = chain();
        let mut ops = OpCounters::new();
        d.instantiate_evidence(a, 0, &mut ops).unwrap();
        assert_eq!(reduce_node(&mut d, a, &mut ops), Err(TransformError::Diagram(DiagramError::IsEvidence(a))));
        let mut d = Diagram::new();
        let dec = d.add_decision("D", &["0", "1"], &[]).unwrap();
        let v = d.add_value("V", &[dec], vec![1.0, 2.0]).unwrap();
        assert_eq!(reduce_node(&mut d, dec, &mut ops), Err(TransformError::Diagram(DiagramError::IsDecision(dec))));
        assert_eq!(reduce_node(&mut d, v, &mut ops), Err(TransformError::Diagram(DiagramError::IsValue(v))));
    }

    #[test]
    fn combine_two_children_of_one_parent() {
        let mut d = Diagram::new();
        let i = d.add_chance("I", &["0", "1"], &[], vec![0.5, 0.5]).unwrap();
        let f = d.add_soft_evidence(i, "F", &["0", "1"], vec![0.9, 0.1, 0.3, 0.7], 0).unwrap();
        let g = d.add_soft_evidence(i, "G", &["0", "1"], vec![0.6, 0.4, 0.2, 0.8], 1).unwrap();
        let kept = combine_observed_children(&mut d, i, &mut OpCounters::new()).unwrap();
        assert_eq!(kept, f);
        assert!(!d.contains(g));
        let t = d.node(f).unwrap().table().unwrap();
        assert!(close(t.values()[0], 0.9 * 0.4, 1e-15));
        assert!(close(t.values()[1], 0.3 * 0.8, 1e-15));
        assert_eq!(d.node(f).unwrap().name(), "F+G");
        assert_eq!(
            combine_observed_children(&mut d, i, &mut OpCounters::new()),
            Err(TransformError::FewerThanTwoObservedChildren(i))
        );
    }

    #[test]
    fn no_evidence_propagation_is_identity() {
        let (mut d, _) = chain();
        let before = d.clone();
        let target = TargetOrder::from_diagram(&d).unwrap();
        propagate_evidence(&mut d, &target, &mut OpCounters::new()).unwrap();
        assert_eq!(d, before);
    }

    #[test]
    fn decomposability_small_cases() {
        let (mut d, [_, b, c]) = chain();
        d.instantiate_evidence(c, 1, &mut OpCounters::new()).unwrap();
        assert!(check_decomposable(&d, c).unwrap());
        assert_eq!(check_decomposable(&d, b), Err(TransformError::NotEvidence(b)));

        let mut d = Diagram::new();
        let a = d.add_chance("A", &["0", "1"], &[], vec![0.5, 0.5]).unwrap();
        let b = d.add_chance("B", &["0", "1"], &[], vec![0.5, 0.5]).unwrap();
        let e = d.add_chance("E", &["0", "1"], &[a, b], vec![0.5; 8]).unwrap();
        d.instantiate_evidence(e, 0, &mut OpCounters::new()).unwrap();
        assert!(!check_decomposable(&d, e).unwrap());
    }

    #[test]
    fn inference_priors_and_point_mass() {
        let (d, [a, b, _]) = chain();
        let mut ops = OpCounters::new();
        let post = infer_posterior(&d, &[], &[a], &InferOptions::default(), &mut ops).unwrap();
        assert!(post.marginals[&a].approx_eq(d.node(a).unwrap().table().unwrap(), 1e-12));
        assert!(close(post.evidence_probability, 1.0, 1e-12));
        for mode in [InferenceMode::Pid, InferenceMode::Cid] {
            let opts = InferOptions { mode, order: None };
            let post = infer_posterior(&d, &[(b, 1)], &[b], &opts, &mut ops).unwrap();
            assert_eq!(post.marginals[&b].values(), &[0.0, 1.0]);
            assert!(close(post.evidence_probability, 0.3 * 0.1 + 0.7 * 0.8, 1e-12));
        }
    }

    #[test]
    fn inference_chain_middle_evidence() {
        let (d, [a, b, c]) = chain();
        for mode in [InferenceMode::Pid, InferenceMode::Cid] {
            let opts = InferOptions { mode, order: None };
            let post = infer_posterior(&d, &[(b, 0)], &[a, c], &opts, &mut OpCounters::new()).unwrap();
            let pb0 = 0.3 * 0.9 + 0.7 * 0.2;
            assert!(close(post.marginals[&a].values()[0], 0.3 * 0.9 / pb0, 1e-12), "{mode:?}");
            assert!(close(post.marginals[&c].values()[0], 0.6, 1e-12), "{mode:?}");
            assert!(close(post.evidence_probability, pb0, 1e-12), "{mode:?}");
        }
    }

    #[test]
    fn zero_probability_evidence() {
        let mut d = Diagram::new();
        let a = d.add_chance("A", &["0", "1"], &[], vec![1.0, 0.0]).unwrap();
        let b = d.add_chance("B", &["0", "1"], &[a], vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        for mode in [InferenceMode::Pid, InferenceMode::Cid] {
            let opts = InferOptions { mode, order: None };
            assert_eq!(
                infer_posterior(&d, &[(b, 1)], &[a], &opts, &mut OpCounters::new()),
                Err(TransformError::ZeroProbabilityEvidence)
            );
        }
    }

    #[test]
    fn solve_trivial_decisions() {
        let mut d = Diagram::new();
        let dec = d.add_decision("D", &["a", "b"], &[]).unwrap();
        d.add_value("V", &[dec], vec![2.0, 5.0]).unwrap();
        let p = solve_decision(&d, &SolveOptions::default(), &mut OpCounters::new()).unwrap();
        assert_eq!(p.fragments[&dec].choices.states(), &[1]);
        assert!(close(p.meu, 5.0, 1e-12));

        let mut d = Diagram::new();
        let x = d.add_chance("X", &["0", "1"], &[], vec![0.25, 0.75]).unwrap();
        d.add_value("V", &[x], vec![4.0, 8.0]).unwrap();
        let p = solve_decision(&d, &SolveOptions::default(), &mut OpCounters::new()).unwrap();
        assert!(p.fragments.is_empty());
        assert!(close(p.meu, 7.0, 1e-12));
    }

    #[test]
    fn dsep_textbook_cases() {
        let (d, [a, b, c]) = chain();
        assert!(d_separated(&d, &[a], &[c], &[b]).unwrap());
        assert!(!d_separated(&d, &[a], &[c], &[]).unwrap());

        let mut d = Diagram::new();
        let a = d.add_chance("A", &["0", "1"], &[], vec![0.5, 0.5]).unwrap();
        let b = d.add_chance("B", &["0", "1"], &[], vec![0.5, 0.5]).unwrap();
        let c = d.add_chance("C", &["0", "1"], &[a, b], vec![0.5; 8]).unwrap();
        assert!(d_separated(&d, &[a], &[b], &[]).unwrap());
        assert!(!d_separated(&d, &[a], &[b], &[c]).unwrap());
        assert_eq!(d_separated(&d, &[a], &[a], &[]), Err(TransformError::OverlappingSets(a)));
    }

    #[test]
    fn dsep_potential_couples_parents() {
        let mut d = Diagram::new();
        let a = d.add_chance("A", &["0", "1"], &[], vec![0.5, 0.5]).unwrap();
        let b = d.add_chance("B", &["0", "1"], &[], vec![0.5, 0.5]).unwrap();
        d.add_chance("C", &["0", "1"], &[a, b], vec![1.0, 2.0, 0.5, 0.5, 3.0, 0.1, 0.2, 0.2]).unwrap();
        assert!(!d_separated(&d, &[a], &[b], &[]).unwrap());
    }
}
