//! Influence diagram model: nodes, parent structure, evidence marks and the
//! regularity validator.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tables::{OpCounters, PotentialTable, TableError, VarId, Variable};

/// Node ids share the variable-id namespace.
pub type NodeId = VarId;

/// Tolerance used when classifying a table as a conditional distribution.
pub const CONDITIONAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Chance,
    Decision,
    Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Conditional,
    Potential,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagramError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no node named `{0}`")]
    UnknownName(String),
    #[error("the diagram contains a directed cycle")]
    DirectedCycle,
    #[error("node {0} is not a chance node")]
    NotChance(NodeId),
    #[error("node {0} is not a decision node")]
    NotDecision(NodeId),
    #[error("node {0} is the value node")]
    IsValue(NodeId),
    #[error("node {0} is a decision node")]
    IsDecision(NodeId),
    #[error("node {0} is observed")]
    IsEvidence(NodeId),
    #[error("node {0} is already observed")]
    AlreadyObserved(NodeId),
    #[error("node {0} has children")]
    HasChildren(NodeId),
    #[error("node {0} has no table")]
    MissingTable(NodeId),
    #[error("node {0} does not carry a conditional distribution")]
    NotConditional(NodeId),
    #[error("node {0} already carries a conditional distribution")]
    AlreadyConditional(NodeId),
    #[error("there is no arc {from} -> {to}")]
    NoSuchArc { from: NodeId, to: NodeId },
    #[error("reversing {from} -> {to} would create a directed cycle")]
    WouldCreateCycle { from: NodeId, to: NodeId },
    #[error("arc {from} -> {to} leaves an observed node")]
    ObservedParent { from: NodeId, to: NodeId },
    #[error("decision {0} is not the last decision")]
    NotLastDecision(NodeId),
    #[error("value parent {parent} is not observed before decision {decision}")]
    UnobservedValueParent { decision: NodeId, parent: NodeId },
    #[error("decision {decision} has child {child} other than the value node")]
    DecisionHasChildren { decision: NodeId, child: NodeId },
    #[error("the diagram has no value node")]
    MissingValueNode,
    #[error("the diagram has more than one value node")]
    MultipleValueNodes,
    #[error("node {0} is an informational predecessor of a decision")]
    InformationalPredecessor(NodeId),
    #[error("target order cannot be achieved: {0}")]
    TargetUnachievable(String),
    #[error("invalid target order: {0}")]
    InvalidTarget(String),
    #[error("invalid node: {0}")]
    InvalidNode(String),
}

pub type Result<T, E = DiagramError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub(crate) variable: Variable,
    pub(crate) kind: NodeKind,
    pub(crate) parents: Vec<NodeId>,
    pub(crate) table: Option<PotentialTable>,
    pub(crate) table_kind: TableKind,
    pub(crate) evidence: Option<usize>,
}

impl Node {
    pub fn id(&self) -> NodeId {
        self.variable.id()
    }

    pub fn name(&self) -> &str {
        self.variable.name()
    }

    pub fn variable(&self) -> &Variable {
        &self.variable
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    /// Parents in ascending id order.
    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }

    pub fn table(&self) -> Option<&PotentialTable> {
        self.table.as_ref()
    }

    pub fn table_kind(&self) -> TableKind {
        self.table_kind
    }

    pub fn evidence(&self) -> Option<usize> {
        self.evidence
    }

    pub fn is_observed(&self) -> bool {
        self.evidence.is_some()
    }

    pub fn cardinality(&self) -> usize {
        self.variable.cardinality()
    }

    /// Whether the attached table sums to one over this node's own
    /// variable for every parent configuration. For an observed node the
    /// own variable has been sliced away, so each cell must equal one.
    pub fn table_is_normalized(&self) -> bool {
        match &self.table {
            None => false,
            Some(t) if self.evidence.is_some() => {
                t.values().iter().all(|x| (x - 1.0).abs() <= CONDITIONAL_TOL)
            }
            Some(t) => t.is_conditional_over(self.id(), self.cardinality(), CONDITIONAL_TOL),
        }
    }
}

/// One regularity or well-formedness problem found by
/// [`Diagram::validate_regular`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    UnknownParent { node: NodeId, parent: NodeId },
    DirectedCycle,
    DecisionsNotTotallyOrdered { first: NodeId, second: NodeId },
    MissingValueNode,
    MultipleValueNodes,
    ValueHasChildren { value: NodeId },
    DecisionHasDescendantParent { decision: NodeId, parent: NodeId },
    NoForgettingViolation { earlier: NodeId, later: NodeId, missing: NodeId },
    MissingTable { node: NodeId },
    DecisionHasTable { node: NodeId },
    TableScopeInvalid { node: NodeId, variable: NodeId },
    EvidenceOnNonChance { node: NodeId },
    EvidenceHasChildren { node: NodeId },
    NegativeTableEntry { node: NodeId },
    ConditionalNotNormalized { node: NodeId },
}

impl Violation {
    /// Problems that make the document structurally unusable, as opposed to
    /// merely irregular.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            Violation::UnknownParent { .. }
                | Violation::MissingTable { .. }
                | Violation::DecisionHasTable { .. }
                | Violation::TableScopeInvalid { .. }
                | Violation::EvidenceOnNonChance { .. }
                | Violation::NegativeTableEntry { .. }
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_regular(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A directed acyclic graph of chance, decision and value nodes.
///
/// `constant` is a running product of normalizing constants that have been
/// folded out of the diagram (see [`Diagram::absorb_constants`]); the
/// represented measure is `constant` times the product of all tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagram {
    pub(crate) nodes: BTreeMap<NodeId, Node>,
    pub(crate) constant: f64,
    next_id: usize,
}

impl Default for Diagram {
    fn default() -> Self {
        Self::new()
    }
}

fn owned_states(states: &[&str]) -> Vec<String> {
    states.iter().map(|s| s.to_string()).collect()
}

impl Diagram {
    pub fn new() -> Self {
        Diagram { nodes: BTreeMap::new(), constant: 1.0, next_id: 0 }
    }

    fn fresh_id(&mut self) -> NodeId {
        let id = VarId(self.next_id);
        self.next_id += 1;
        id
    }

    fn declared_scope(&self, parents: &[NodeId], own: Option<(NodeId, usize)>) -> Result<Vec<(VarId, usize)>> {
        let mut scope = Vec::with_capacity(parents.len() + 1);
        for p in parents {
            scope.push((*p, self.node(*p)?.cardinality()));
        }
        scope.extend(own);
        Ok(scope)
    }

    /// Add a chance node. `values` are laid out over `parents` (in the given
    /// order) followed by the node itself, last fastest. The table is marked
    /// conditional when it is normalized and as a potential otherwise.
    pub fn add_chance(&mut self, name: &str, states: &[&str], parents: &[NodeId], values: Vec<f64>) -> Result<NodeId> {
        let id = VarId(self.next_id);
        let variable = Variable::new(id, name, owned_states(states))?;
        let table = PotentialTable::new(&self.declared_scope(parents, Some((id, states.len())))?, values)?;
        self.insert_node(variable, NodeKind::Chance, parents.to_vec(), Some(table), None, None)
    }

    pub fn add_decision(&mut self, name: &str, states: &[&str], parents: &[NodeId]) -> Result<NodeId> {
        let id = VarId(self.next_id);
        let variable = Variable::new(id, name, owned_states(states))?;
        self.insert_node(variable, NodeKind::Decision, parents.to_vec(), None, None, None)
    }

    /// Add the value node with a nonnegative utility over `parents` (given
    /// order, last fastest).
    pub fn add_value(&mut self, name: &str, parents: &[NodeId], utilities: Vec<f64>) -> Result<NodeId> {
        let id = VarId(self.next_id);
        let variable = Variable::new(id, name, vec!["utility".into()])?;
        let table = PotentialTable::new(&self.declared_scope(parents, None)?, utilities)?;
        self.insert_node(variable, NodeKind::Value, parents.to_vec(), Some(table), Some(TableKind::Potential), None)
    }

    /// Insert a node without checking regularity. The variable id must not
    /// be in use. When `table_kind` is `None` it is inferred from the table.
    pub fn insert_node(
        &mut self,
        variable: Variable,
        kind: NodeKind,
        mut parents: Vec<NodeId>,
        table: Option<PotentialTable>,
        table_kind: Option<TableKind>,
        evidence: Option<usize>,
    ) -> Result<NodeId> {
        let id = variable.id();
        if self.nodes.contains_key(&id) {
            return Err(DiagramError::InvalidNode(format!("id {id} already in use")));
        }
        parents.sort();
        parents.dedup();
        if parents.contains(&id) {
            return Err(DiagramError::InvalidNode(format!("{} lists itself as a parent", variable.name())));
        }
        if let Some(s) = evidence {
            if s >= variable.cardinality() {
                return Err(TableError::StateOutOfRange { var: id, state: s, cardinality: variable.cardinality() }.into());
            }
        }
        let mut node = Node { variable, kind, parents, table, table_kind: TableKind::Potential, evidence };
        node.table_kind = match table_kind {
            Some(k) => k,
            None if node.table_is_normalized() => TableKind::Conditional,
            None => TableKind::Potential,
        };
        self.next_id = self.next_id.max(id.0 + 1);
        self.nodes.insert(id, node);
        Ok(id)
    }

    /// Model imperfect observation of chance node `i` by a new observed
    /// child. `likelihood` is laid out over (`i`, child) with the child
    /// fastest; the child is observed at `observed`.
    pub fn add_soft_evidence(
        &mut self,
        i: NodeId,
        name: &str,
        states: &[&str],
        likelihood: Vec<f64>,
        observed: usize,
    ) -> Result<NodeId> {
        let target = self.node(i)?;
        if target.kind != NodeKind::Chance {
            return Err(DiagramError::NotChance(i));
        }
        let id = VarId(self.next_id);
        let variable = Variable::new(id, name, owned_states(states))?;
        let table = PotentialTable::new(&[(i, target.cardinality()), (id, states.len())], likelihood)?;
        if observed >= states.len() {
            return Err(TableError::StateOutOfRange { var: id, state: observed, cardinality: states.len() }.into());
        }
        self.insert_node(variable, NodeKind::Chance, vec![i], Some(table), None, None)?;
        self.instantiate_evidence(id, observed, &mut OpCounters::new())?;
        Ok(id)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(&id).ok_or(DiagramError::UnknownNode(id))
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Result<&mut Node> {
        self.nodes.get_mut(&id).ok_or(DiagramError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn id_of(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .values()
            .find(|n| n.name() == name)
            .map(Node::id)
            .ok_or_else(|| DiagramError::UnknownName(name.to_string()))
    }

    /// Running product of constants folded out of the diagram.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Replace the accumulated normalizing constant.
    pub fn set_constant(&mut self, constant: f64) -> Result<()> {
        if !(constant >= 0.0 && constant.is_finite()) {
            return Err(DiagramError::InvalidNode(format!("constant {constant} must be finite and nonnegative")));
        }
        self.constant = constant;
        Ok(())
    }

    pub(crate) fn multiply_constant(&mut self, factor: f64, ops: &mut OpCounters) {
        ops.mults += 1;
        self.constant *= factor;
    }

    pub fn value_node(&self) -> Option<NodeId> {
        self.nodes.values().find(|n| n.kind == NodeKind::Value).map(Node::id)
    }

    pub fn decisions(&self) -> Vec<NodeId> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Decision).map(Node::id).collect()
    }

    /// Unobserved chance nodes in ascending id order.
    pub fn unobserved_chance(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::Chance && n.evidence.is_none())
            .map(Node::id)
            .collect()
    }

    pub fn observed(&self) -> Vec<NodeId> {
        self.nodes.values().filter(|n| n.is_observed()).map(Node::id).collect()
    }

    /// True when every unobserved chance node carries a conditional
    /// distribution. Evidence likelihoods and the value table are exempt.
    pub fn is_cid(&self) -> bool {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::Chance && n.evidence.is_none())
            .all(|n| n.table_kind == TableKind::Conditional)
    }

    /// All arcs `(parent, child)`.
    pub fn arcs(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.nodes.values().flat_map(|n| n.parents.iter().map(move |p| (*p, n.id()))).collect()
    }

    pub fn parents(&self, id: NodeId) -> Result<&[NodeId]> {
        Ok(&self.node(id)?.parents)
    }

    pub fn children(&self, id: NodeId) -> Result<BTreeSet<NodeId>> {
        self.node(id)?;
        Ok(self.nodes.values().filter(|n| n.parents.contains(&id)).map(Node::id).collect())
    }

    fn reach(&self, start: NodeId, step: impl Fn(NodeId) -> Vec<NodeId>) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<NodeId> = step(start).into();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n) {
                queue.extend(step(n));
            }
        }
        seen.remove(&start);
        seen
    }

    pub fn ancestors(&self, id: NodeId) -> Result<BTreeSet<NodeId>> {
        self.node(id)?;
        Ok(self.reach(id, |n| self.nodes.get(&n).map(|x| x.parents.clone()).unwrap_or_default()))
    }

    pub fn descendants(&self, id: NodeId) -> Result<BTreeSet<NodeId>> {
        self.node(id)?;
        let children = self.child_map();
        Ok(self.reach(id, |n| children.get(&n).cloned().unwrap_or_default()))
    }

    pub(crate) fn child_map(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut map: BTreeMap<NodeId, Vec<NodeId>> = self.nodes.keys().map(|k| (*k, Vec::new())).collect();
        for n in self.nodes.values() {
            for p in &n.parents {
                map.entry(*p).or_default().push(n.id());
            }
        }
        map
    }

    /// Whether a directed path from `from` to `to` exists other than the
    /// direct arc.
    pub fn has_indirect_path(&self, from: NodeId, to: NodeId) -> bool {
        let children = self.child_map();
        let mut stack: Vec<NodeId> =
            children.get(&from).into_iter().flatten().copied().filter(|c| *c != to).collect();
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(children.get(&n).into_iter().flatten().copied());
            }
        }
        false
    }

    /// A topological order with ties broken by ascending id.
    pub fn ordered_list(&self) -> Result<Vec<NodeId>> {
        let children = self.child_map();
        let mut indegree: BTreeMap<NodeId, usize> =
            self.nodes.values().map(|n| (n.id(), n.parents.iter().filter(|p| self.nodes.contains_key(p)).count())).collect();
        let mut ready: BTreeSet<NodeId> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for c in &children[&n] {
                let d = indegree.get_mut(c).expect("child is a node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(*c);
                }
            }
        }
        if order.len() == self.nodes.len() {
            Ok(order)
        } else {
            Err(DiagramError::DirectedCycle)
        }
    }

    pub(crate) fn set_table(&mut self, id: NodeId, table: PotentialTable, kind: TableKind) -> Result<()> {
        let node = self.node_mut(id)?;
        node.table = Some(table);
        node.table_kind = kind;
        Ok(())
    }

    pub(crate) fn set_parents(&mut self, id: NodeId, parents: impl IntoIterator<Item = NodeId>) -> Result<()> {
        let mut parents: Vec<NodeId> = parents.into_iter().filter(|p| *p != id).collect();
        parents.sort();
        parents.dedup();
        self.node_mut(id)?.parents = parents;
        Ok(())
    }

    /// Delete a node and every arc touching it.
    pub(crate) fn remove_node(&mut self, id: NodeId) -> Result<Node> {
        let node = self.nodes.remove(&id).ok_or(DiagramError::UnknownNode(id))?;
        for n in self.nodes.values_mut() {
            n.parents.retain(|p| *p != id);
        }
        Ok(node)
    }

    /// Add a fresh single-state observed chance node holding `table`.
    pub(crate) fn add_dummy(&mut self, name: String, parents: Vec<NodeId>, table: PotentialTable) -> Result<NodeId> {
        let id = self.fresh_id();
        let variable = Variable::new(id, name, vec!["observed".into()])?;
        self.insert_node(variable, NodeKind::Chance, parents, Some(table), None, Some(0))
    }

    /// Fold every isolated observed node with a scalar table into the
    /// diagram constant.
    pub fn absorb_constants(&mut self, ops: &mut OpCounters) {
        let children = self.child_map();
        let isolated: Vec<(NodeId, f64)> = self
            .nodes
            .values()
            .filter(|n| n.is_observed() && n.parents.is_empty() && children[&n.id()].is_empty())
            .filter_map(|n| n.table.as_ref().and_then(PotentialTable::as_scalar).map(|s| (n.id(), s)))
            .collect();
        for (id, s) in isolated {
            self.multiply_constant(s, ops);
            self.nodes.remove(&id);
        }
    }

    /// Multiply every utility in the value table by a positive `factor`.
    pub fn scale_value_table(&mut self, factor: f64, ops: &mut OpCounters) -> Result<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(DiagramError::InvalidNode(format!("scale factor {factor} must be positive")));
        }
        let v = self.value_node().ok_or(DiagramError::MissingValueNode)?;
        let table = self.nodes[&v].table.as_ref().ok_or(DiagramError::MissingTable(v))?.scale(factor, ops)?;
        self.set_table(v, table, TableKind::Potential)
    }

    /// Check the regularity conditions and basic well-formedness. Every
    /// problem is reported; nothing is thrown.
    pub fn validate_regular(&self) -> ValidationReport {
        let mut v = Vec::new();
        for n in self.nodes.values() {
            for p in &n.parents {
                if !self.nodes.contains_key(p) {
                    v.push(Violation::UnknownParent { node: n.id(), parent: *p });
                }
            }
        }
        if !v.is_empty() {
            return ValidationReport { violations: v };
        }

        let order = self.ordered_list();
        if order.is_err() {
            v.push(Violation::DirectedCycle);
        }

        let values: Vec<NodeId> = self.nodes.values().filter(|n| n.kind == NodeKind::Value).map(Node::id).collect();
        let decisions = self.decisions();
        if values.len() > 1 {
            v.push(Violation::MultipleValueNodes);
        }
        if values.is_empty() && !decisions.is_empty() {
            v.push(Violation::MissingValueNode);
        }
        let children = self.child_map();
        for val in &values {
            if !children[val].is_empty() {
                v.push(Violation::ValueHasChildren { value: *val });
            }
        }

        for d in &decisions {
            let desc = self.descendants(*d).unwrap_or_default();
            for p in &self.nodes[d].parents {
                if desc.contains(p) {
                    v.push(Violation::DecisionHasDescendantParent { decision: *d, parent: *p });
                }
            }
        }

        if let Ok(order) = &order {
            let ordered: Vec<NodeId> = order.iter().copied().filter(|n| decisions.contains(n)).collect();
            for w in ordered.windows(2) {
                let anc = self.ancestors(w[1]).unwrap_or_default();
                if !anc.contains(&w[0]) {
                    v.push(Violation::DecisionsNotTotallyOrdered { first: w[0], second: w[1] });
                }
            }
            for (k, earlier) in ordered.iter().enumerate() {
                for later in &ordered[k + 1..] {
                    let info = &self.nodes[later].parents;
                    let needed = std::iter::once(*earlier)
                        .chain(self.nodes[earlier].parents.iter().copied().filter(|p| !self.nodes[p].is_observed()));
                    for missing in needed {
                        if !info.contains(&missing) {
                            v.push(Violation::NoForgettingViolation { earlier: *earlier, later: *later, missing });
                        }
                    }
                }
            }
        }

        for n in self.nodes.values() {
            let id = n.id();
            if n.evidence.is_some() {
                if n.kind != NodeKind::Chance {
                    v.push(Violation::EvidenceOnNonChance { node: id });
                } else if !children[&id].is_empty() {
                    v.push(Violation::EvidenceHasChildren { node: id });
                }
            }
            match (n.kind, &n.table) {
                (NodeKind::Decision, Some(_)) => v.push(Violation::DecisionHasTable { node: id }),
                (NodeKind::Decision, None) => {}
                (_, None) => v.push(Violation::MissingTable { node: id }),
                (kind, Some(t)) => {
                    let self_allowed = kind == NodeKind::Chance && n.evidence.is_none();
                    for s in t.scope() {
                        let ok = n.parents.contains(s) || (self_allowed && *s == id);
                        let card_ok = self.nodes.get(s).map(|x| Some(x.cardinality()) == t.cardinality_of(*s));
                        if !ok || card_ok != Some(true) {
                            v.push(Violation::TableScopeInvalid { node: id, variable: *s });
                        }
                    }
                    if t.values().iter().any(|x| *x < 0.0 || !x.is_finite()) {
                        v.push(Violation::NegativeTableEntry { node: id });
                    }
                    if kind == NodeKind::Chance && n.table_kind == TableKind::Conditional && !n.table_is_normalized() {
                        v.push(Violation::ConditionalNotNormalized { node: id });
                    }
                }
            }
        }
        ValidationReport { violations: v }
    }

    /// Insert every missing no-forgetting arc: each decision gains all
    /// earlier decisions and their informational predecessors as parents.
    pub fn complete_no_forgetting(&mut self) -> Result<()> {
        let order = self.ordered_list()?;
        let decisions: Vec<NodeId> = order.into_iter().filter(|n| self.nodes[n].kind == NodeKind::Decision).collect();
        let mut known: BTreeSet<NodeId> = BTreeSet::new();
        for d in decisions {
            let node = self.node_mut(d)?;
            known.extend(node.parents.iter().copied());
            let mut parents: BTreeSet<NodeId> = node.parents.iter().copied().collect();
            parents.extend(known.iter().copied());
            node.parents = parents.into_iter().collect();
            known.insert(d);
        }
        if self.ordered_list().is_err() {
            return Err(DiagramError::DirectedCycle);
        }
        Ok(())
    }

    /// Reverse arcs among chance nodes until `target` is an ordered list
    /// for the graph. Positions are visited left to right; any arc into the
    /// current node from a later-targeted node is reversed.
    pub fn order_to_target(&mut self, target: &[NodeId], ops: &mut OpCounters) -> Result<()> {
        let mut position = BTreeMap::new();
        for (k, t) in target.iter().enumerate() {
            let node = self.node(*t)?;
            if node.kind != NodeKind::Chance || node.is_observed() {
                return Err(DiagramError::InvalidTarget(format!("{} is not an unobserved chance node", node.name())));
            }
            if position.insert(*t, k).is_some() {
                return Err(DiagramError::InvalidTarget(format!("{} appears twice", node.name())));
            }
        }
        let mut budget = 64 * (self.nodes.len() + 1).pow(3);
        for (k, x) in target.iter().enumerate() {
            loop {
                let later: Vec<NodeId> = self.nodes[x]
                    .parents
                    .iter()
                    .copied()
                    .filter(|p| position.get(p).is_some_and(|q| *q > k))
                    .collect();
                if later.is_empty() {
                    break;
                }
                // the latest such parent in the current graph order has no
                // other path into `x` through the later-targeted parents
                let order = self.ordered_list()?;
                let y = *order.iter().rev().find(|n| later.contains(n)).expect("parent is ordered");
                if budget == 0 {
                    return Err(DiagramError::TargetUnachievable("reversal budget exhausted".into()));
                }
                budget -= 1;
                self.arc_reversal(y, *x, ops).map_err(|e| match e {
                    DiagramError::WouldCreateCycle { from, to } => DiagramError::TargetUnachievable(format!(
                        "arc {} -> {} lies on another directed path",
                        self.nodes[&from].name(),
                        self.nodes[&to].name()
                    )),
                    other => other,
                })?;
            }
        }
        for (k, x) in target.iter().enumerate() {
            let anc = self.ancestors(*x)?;
            if let Some(bad) = target[k + 1..].iter().find(|t| anc.contains(t)) {
                return Err(DiagramError::TargetUnachievable(format!(
                    "{} must precede {} through a non-chance node",
                    self.nodes[bad].name(),
                    self.nodes[x].name()
                )));
            }
        }
        Ok(())
    }

    /// Whether `target` is already an ordered list for the graph.
    pub fn admits_order(&self, target: &[NodeId]) -> bool {
        target.iter().enumerate().all(|(k, x)| {
            let anc = self.ancestors(*x).unwrap_or_default();
            !target[k + 1..].iter().any(|t| anc.contains(t))
        })
    }
}
