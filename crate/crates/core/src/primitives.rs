//! Primitive diagram operations: arc reversal, barren node removal, optimal
//! policy selection and evidence instantiation for conditional diagrams,
//! plus potential reversal and conditionalization for potential diagrams.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::diagram::{Diagram, DiagramError, NodeId, NodeKind, Result, TableKind};
use crate::tables::{OpCounters, PotentialTable, StateTable};

/// Optimal choice for one decision, indexed by the configuration of the
/// informational predecessors the value actually depends on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PolicyFragment {
    pub decision: NodeId,
    pub choices: StateTable,
}

impl PolicyFragment {
    /// Chosen state for an assignment that covers the fragment's scope.
    pub fn choice(&self, lookup: impl Fn(NodeId) -> Option<usize>) -> Option<usize> {
        self.choices.state_for(lookup)
    }
}

impl Diagram {
    fn table_of(&self, id: NodeId) -> Result<&PotentialTable> {
        self.node(id)?.table.as_ref().ok_or(DiagramError::MissingTable(id))
    }

    /// Table of `id` broadcast so that it mentions the node's own variable.
    pub(crate) fn full_table(&self, id: NodeId, ops: &mut OpCounters) -> Result<PotentialTable> {
        let node = self.node(id)?;
        Ok(self.table_of(id)?.expand(id, node.cardinality(), ops)?)
    }

    fn require_chance(&self, id: NodeId) -> Result<()> {
        match self.node(id)?.kind {
            NodeKind::Chance => Ok(()),
            NodeKind::Value => Err(DiagramError::IsValue(id)),
            NodeKind::Decision => Err(DiagramError::NotChance(id)),
        }
    }

    fn check_reversible(&self, i: NodeId, h: NodeId) -> Result<()> {
        self.require_chance(i)?;
        self.require_chance(h)?;
        if !self.node(h)?.parents.contains(&i) {
            return Err(DiagramError::NoSuchArc { from: i, to: h });
        }
        if self.node(i)?.is_observed() {
            return Err(DiagramError::ObservedParent { from: i, to: h });
        }
        if self.has_indirect_path(i, h) {
            return Err(DiagramError::WouldCreateCycle { from: i, to: h });
        }
        Ok(())
    }

    /// Bayes' theorem on the arc `i -> h`. Both nodes swap the direction of
    /// conditioning and inherit each other's parents. When `h` is observed
    /// no arc is sent back from it.
    pub fn arc_reversal(&mut self, i: NodeId, h: NodeId, ops: &mut OpCounters) -> Result<()> {
        self.check_reversible(i, h)?;
        let hn = self.node(h)?;
        let h_observed = hn.is_observed();
        if self.node(i)?.table_kind != TableKind::Conditional {
            return Err(DiagramError::NotConditional(i));
        }
        if !h_observed && hn.table_kind != TableKind::Conditional {
            return Err(DiagramError::NotConditional(h));
        }

        let ti = self.full_table(i, ops)?;
        let th = if h_observed { self.table_of(h)?.clone() } else { self.full_table(h, ops)? };
        let joint = ti.multiply(&th, ops)?;
        let new_h = joint.sum_out(i, ops)?;
        let mut new_i = joint.divide(&new_h, ops)?;
        new_i.fill_zero_rows_uniform(i);

        let pi: BTreeSet<NodeId> = self.node(i)?.parents.iter().copied().collect();
        let ph: BTreeSet<NodeId> = self.node(h)?.parents.iter().copied().filter(|p| *p != i).collect();
        let h_parents: Vec<NodeId> = pi.union(&ph).copied().collect();
        let mut i_parents = h_parents.clone();
        if !h_observed {
            i_parents.push(h);
        }

        let h_kind = if h_observed {
            let normalized = new_h.values().iter().all(|x| (x - 1.0).abs() <= crate::diagram::CONDITIONAL_TOL);
            if normalized { TableKind::Conditional } else { TableKind::Potential }
        } else {
            TableKind::Conditional
        };
        self.set_table(h, new_h, h_kind)?;
        self.set_parents(h, h_parents)?;
        self.set_table(i, new_i, TableKind::Conditional)?;
        self.set_parents(i, i_parents)?;
        Ok(())
    }

    /// Remove an unobserved, childless, non-value node. Chance nodes must
    /// carry a conditional distribution.
    pub fn remove_barren(&mut self, i: NodeId) -> Result<()> {
        let node = self.node(i)?;
        match node.kind {
            NodeKind::Value => return Err(DiagramError::IsValue(i)),
            _ if node.is_observed() => return Err(DiagramError::IsEvidence(i)),
            NodeKind::Chance if node.table_kind != TableKind::Conditional => {
                return Err(DiagramError::NotConditional(i))
            }
            _ => {}
        }
        if !self.children(i)?.is_empty() {
            return Err(DiagramError::HasChildren(i));
        }
        self.remove_node(i)?;
        Ok(())
    }

    /// Whether `dec` has no decision among its descendants.
    pub fn is_last_decision(&self, dec: NodeId) -> Result<bool> {
        let desc = self.descendants(dec)?;
        Ok(!desc.iter().any(|n| self.nodes[n].kind == NodeKind::Decision))
    }

    /// Replace the last decision by a chance node carrying the optimal
    /// deterministic policy, and maximize the value table over it.
    pub fn select_policy(&mut self, dec: NodeId, ops: &mut OpCounters) -> Result<PolicyFragment> {
        if self.node(dec)?.kind != NodeKind::Decision {
            return Err(DiagramError::NotDecision(dec));
        }
        if !self.is_last_decision(dec)? {
            return Err(DiagramError::NotLastDecision(dec));
        }
        let value = self.value_node().ok_or(DiagramError::MissingValueNode)?;
        let info = self.node(dec)?.parents.clone();
        for p in &self.node(value)?.parents {
            if *p != dec && !info.contains(p) {
                return Err(DiagramError::UnobservedValueParent { decision: dec, parent: *p });
            }
        }
        if let Some(child) = self.children(dec)?.into_iter().find(|c| *c != value) {
            return Err(DiagramError::DecisionHasChildren { decision: dec, child });
        }

        let card = self.node(dec)?.cardinality();
        let utility = self.table_of(value)?.clone();
        let (maxed, choices) = if utility.contains(dec) {
            utility.max_out(dec, ops)?
        } else {
            let scope = utility.scope_pairs();
            (utility, StateTable::constant(&scope, 0))
        };

        // degenerate conditional implementing the policy
        let mut scope = choices.scope().iter().copied().zip(choices.cardinalities().iter().copied()).collect::<Vec<_>>();
        scope.push((dec, card));
        let mut cells = Vec::with_capacity(choices.states().len() * card);
        for s in choices.states() {
            cells.extend((0..card).map(|k| if k == *s { 1.0 } else { 0.0 }));
        }
        let policy_table = PotentialTable::new(&scope, cells)?;

        let value_parents: Vec<NodeId> = self.node(value)?.parents.iter().copied().filter(|p| *p != dec).collect();
        self.set_table(value, maxed, TableKind::Potential)?;
        self.set_parents(value, value_parents)?;
        let node = self.node_mut(dec)?;
        node.kind = NodeKind::Chance;
        node.table = Some(policy_table);
        node.table_kind = TableKind::Conditional;
        Ok(PolicyFragment { decision: dec, choices })
    }

    /// Observe chance node `i` at `state`: slice every table indexed by it
    /// and drop its outgoing arcs.
    pub fn instantiate_evidence(&mut self, i: NodeId, state: usize, ops: &mut OpCounters) -> Result<()> {
        let node = self.node(i)?;
        if node.kind != NodeKind::Chance {
            return Err(DiagramError::NotChance(i));
        }
        if node.is_observed() {
            return Err(DiagramError::AlreadyObserved(i));
        }
        if state >= node.cardinality() {
            return Err(crate::tables::TableError::StateOutOfRange {
                var: i,
                state,
                cardinality: node.cardinality(),
            }
            .into());
        }
        for c in self.children(i)? {
            if let Some(t) = self.node(c)?.table.as_ref() {
                if t.contains(i) {
                    let sliced = t.restrict(i, state, ops)?;
                    self.node_mut(c)?.table = Some(sliced);
                }
            }
            self.node_mut(c)?.parents.retain(|p| *p != i);
        }
        let own = self.table_of(i)?;
        let own = if own.contains(i) { own.restrict(i, state, ops)? } else { own.clone() };
        let node = self.node_mut(i)?;
        node.table = Some(own);
        node.evidence = Some(state);
        node.table_kind = if node.table_is_normalized() { TableKind::Conditional } else { TableKind::Potential };
        Ok(())
    }

    /// Division-free reversal of `i -> h`: `i` stores the product of both
    /// potentials and `h` is left with a scalar one and no parents.
    pub fn potential_reversal(&mut self, i: NodeId, h: NodeId, ops: &mut OpCounters) -> Result<()> {
        self.check_reversible(i, h)?;
        let h_observed = self.node(h)?.is_observed();
        let product = self.table_of(i)?.multiply(self.table_of(h)?, ops)?;

        let mut i_parents: BTreeSet<NodeId> = self.node(i)?.parents.iter().copied().collect();
        i_parents.extend(self.node(h)?.parents.iter().copied().filter(|p| *p != i));
        if !h_observed {
            i_parents.insert(h);
        }
        self.set_table(i, product, TableKind::Potential)?;
        self.set_parents(i, i_parents)?;

        let one = PotentialTable::scalar(1.0)?;
        let hn = self.node_mut(h)?;
        hn.table = Some(one);
        hn.parents.clear();
        hn.table_kind = if hn.table_is_normalized() { TableKind::Conditional } else { TableKind::Potential };
        Ok(())
    }

    /// Normalize the potential at `i` into a conditional distribution and
    /// store the normalizer in a new observed single-state child of `i`'s
    /// parents. Returns the new node.
    pub fn conditionalize(&mut self, i: NodeId, ops: &mut OpCounters) -> Result<NodeId> {
        self.require_chance(i)?;
        if self.node(i)?.is_observed() {
            return Err(DiagramError::IsEvidence(i));
        }
        let full = self.full_table(i, ops)?;
        let (mut conditional, normalizer) = full.normalize_over(i, ops)?;
        conditional.fill_zero_rows_uniform(i);
        let parents = self.node(i)?.parents.clone();
        let name = format!("{}~norm", self.node(i)?.name());
        self.set_table(i, conditional, TableKind::Conditional)?;
        self.add_dummy(name, parents, normalizer)
    }
}
