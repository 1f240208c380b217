//! Brute-force reference answers by full enumeration.
//!
//! Nothing here uses the table arithmetic: tables are read cell by cell
//! through a separate index computation, so the oracle can check the
//! algorithms independently.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::diagram::{Diagram, NodeId, NodeKind};
use crate::primitives::PolicyFragment;
use crate::tables::{PotentialTable, StateTable, TableError};
use crate::transforms::Policy;

pub const STATE_CAP_ENV: &str = "PID_ENGINE_STATE_CAP";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration needs {cells} configurations, over the cap of {cap}")]
    StateSpaceTooLarge { cells: u128, cap: u128 },
    #[error("there are {policies} candidate policies, over the cap of {cap}")]
    PolicySpaceTooLarge { policies: u128, cap: u128 },
    #[error("the evidence has probability zero")]
    ZeroProbabilityEvidence,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no state chosen for decision {0}")]
    MissingDecision(NodeId),
    #[error("posterior queries do not accept decision node {0}")]
    HasDecisions(NodeId),
    #[error("the diagram has no value node")]
    MissingValueNode,
    #[error("state {state} out of range for node {node}")]
    StateOutOfRange { node: NodeId, state: usize },
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    /// Largest joint state space the oracle will enumerate.
    pub state_cap: u128,
    /// Largest number of deterministic policies it will try.
    pub policy_cap: u128,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { state_cap: 10_000_000, policy_cap: 1_000_000 }
    }
}

impl OracleConfig {
    /// Defaults, with the state cap overridden by `PID_ENGINE_STATE_CAP`
    /// when it holds a number.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Some(cap) = std::env::var(STATE_CAP_ENV).ok().and_then(|v| v.trim().parse().ok()) {
            cfg.state_cap = cap;
        }
        cfg
    }
}

/// Value of `t` at the full assignment `at` (indexed by node id).
fn cell(t: &PotentialTable, at: &BTreeMap<NodeId, usize>) -> f64 {
    let mut index = 0usize;
    let mut stride = 1usize;
    for (v, c) in t.scope().iter().zip(t.cardinalities()).rev() {
        index += at[v] * stride;
        stride *= c;
    }
    t.values()[index]
}

/// Odometer over the cartesian product of `cards`, last digit fastest.
fn next_config(digits: &mut [usize], cards: &[usize]) -> bool {
    for k in (0..digits.len()).rev() {
        digits[k] += 1;
        if digits[k] < cards[k] {
            return true;
        }
        digits[k] = 0;
    }
    false
}

fn space(cards: &[usize]) -> u128 {
    cards.iter().map(|c| *c as u128).product()
}

struct Enumeration {
    vars: Vec<NodeId>,
    cards: Vec<usize>,
    fixed: BTreeMap<NodeId, usize>,
    factors: Vec<PotentialTable>,
}

impl Enumeration {
    /// Product of the chance-node tables and the diagram constant, over the
    /// unobserved chance nodes, with `fixed` supplying every other variable.
    fn new(d: &Diagram, fixed: BTreeMap<NodeId, usize>, cfg: &OracleConfig) -> Result<Self> {
        let vars = d.unobserved_chance();
        let cards: Vec<usize> = vars.iter().map(|v| d.nodes[v].cardinality()).collect();
        let cells = space(&cards);
        if cells > cfg.state_cap {
            return Err(OracleError::StateSpaceTooLarge { cells, cap: cfg.state_cap });
        }
        let mut fixed = fixed;
        for n in d.nodes() {
            if let Some(s) = n.evidence() {
                fixed.insert(n.id(), s);
            }
        }
        let factors = d
            .nodes()
            .filter(|n| n.kind() == NodeKind::Chance)
            .filter_map(|n| n.table().cloned())
            .collect();
        Ok(Enumeration { vars, cards, fixed, factors })
    }

    fn for_each(&self, constant: f64, mut f: impl FnMut(&BTreeMap<NodeId, usize>, f64)) {
        let mut at = self.fixed.clone();
        let mut digits = vec![0; self.vars.len()];
        loop {
            for (v, s) in self.vars.iter().zip(&digits) {
                at.insert(*v, *s);
            }
            let p = self.factors.iter().fold(constant, |acc, t| acc * cell(t, &at));
            f(&at, p);
            if !next_config(&mut digits, &self.cards) {
                break;
            }
        }
    }
}

fn check_decisions(d: &Diagram, decisions: &BTreeMap<NodeId, usize>) -> Result<()> {
    for dec in d.decisions() {
        let s = *decisions.get(&dec).ok_or(OracleError::MissingDecision(dec))?;
        if s >= d.nodes[&dec].cardinality() {
            return Err(OracleError::StateOutOfRange { node: dec, state: s });
        }
    }
    Ok(())
}

/// Joint table over the unobserved chance nodes, times the diagram
/// constant, with decisions held at the given states. The value node is not
/// part of the joint.
pub fn brute_joint(d: &Diagram, decisions: &BTreeMap<NodeId, usize>, cfg: &OracleConfig) -> Result<PotentialTable> {
    check_decisions(d, decisions)?;
    let en = Enumeration::new(d, decisions.clone(), cfg)?;
    let mut values = Vec::with_capacity(space(&en.cards) as usize);
    en.for_each(d.constant(), |_, p| values.push(p));
    let scope: Vec<_> = en.vars.iter().copied().zip(en.cards.iter().copied()).collect();
    Ok(PotentialTable::new(&scope, values)?)
}

/// Posterior of `query` given `evidence` (node, state) in a diagram without
/// decisions, together with the probability of the evidence.
pub fn brute_posterior(
    d: &Diagram,
    evidence: &[(NodeId, usize)],
    query: NodeId,
    cfg: &OracleConfig,
) -> Result<(PotentialTable, f64)> {
    if let Some(dec) = d.decisions().first() {
        return Err(OracleError::HasDecisions(*dec));
    }
    let qnode = d.nodes.get(&query).ok_or(OracleError::UnknownNode(query))?;
    for (n, s) in evidence {
        let node = d.nodes.get(n).ok_or(OracleError::UnknownNode(*n))?;
        if *s >= node.cardinality() {
            return Err(OracleError::StateOutOfRange { node: *n, state: *s });
        }
    }
    let en = Enumeration::new(d, BTreeMap::new(), cfg)?;
    let card = qnode.cardinality();
    let mut marginal = vec![0.0; card];
    en.for_each(d.constant(), |at, p| {
        if evidence.iter().all(|(n, s)| at[n] == *s) {
            marginal[at[&query]] += p;
        }
    });
    let total: f64 = marginal.iter().sum();
    if total == 0.0 {
        return Err(OracleError::ZeroProbabilityEvidence);
    }
    let values = marginal.iter().map(|m| m / total).collect();
    Ok((PotentialTable::new(&[(query, card)], values)?, total))
}

/// Optimal policy by trying every deterministic policy over the full
/// information sets, in lexicographic order; the first best one wins ties.
pub fn brute_solve(d: &Diagram, cfg: &OracleConfig) -> Result<Policy> {
    let value = d.value_node().ok_or(OracleError::MissingValueNode)?;
    let order: Vec<NodeId> = d
        .ordered_list()
        .map_err(|_| OracleError::UnknownNode(value))?
        .into_iter()
        .filter(|n| d.nodes[n].kind() == NodeKind::Decision)
        .collect();

    struct Slot {
        decision: NodeId,
        info: Vec<(NodeId, usize)>,
        card: usize,
    }
    let slots: Vec<Slot> = order
        .iter()
        .map(|dec| {
            let node = &d.nodes[dec];
            let info = node.parents().iter().map(|p| (*p, d.nodes[p].cardinality())).collect();
            Slot { decision: *dec, info, card: node.cardinality() }
        })
        .collect();
    let mut rule_cards = Vec::new();
    let mut offsets = Vec::new();
    for s in &slots {
        offsets.push(rule_cards.len());
        let rows: usize = s.info.iter().map(|p| p.1).product();
        rule_cards.extend(std::iter::repeat_n(s.card, rows));
    }
    let policies = rule_cards.iter().try_fold(1u128, |acc, c| acc.checked_mul(*c as u128)).unwrap_or(u128::MAX);
    if policies > cfg.policy_cap {
        return Err(OracleError::PolicySpaceTooLarge { policies, cap: cfg.policy_cap });
    }
    let chance_cells = space(&d.unobserved_chance().iter().map(|n| d.nodes[n].cardinality()).collect::<Vec<_>>());
    if chance_cells.saturating_mul(policies) > cfg.state_cap.saturating_mul(100) {
        return Err(OracleError::StateSpaceTooLarge { cells: chance_cells.saturating_mul(policies), cap: cfg.state_cap });
    }

    let row_of = |s: &Slot, at: &BTreeMap<NodeId, usize>| s.info.iter().fold(0, |acc, (p, c)| acc * c + at[p]);
    let utility = d.nodes[&value].table().cloned().ok_or(OracleError::MissingValueNode)?;
    let mut en = Enumeration::new(d, BTreeMap::new(), cfg)?;
    for dec in &order {
        en.fixed.insert(*dec, 0);
    }

    let mut rule = vec![0usize; rule_cards.len()];
    let mut best: Option<(f64, f64, f64, Vec<usize>)> = None;
    loop {
        let (mut zu, mut z) = (0.0, 0.0);
        let mut at = en.fixed.clone();
        let mut digits = vec![0; en.vars.len()];
        loop {
            for (v, s) in en.vars.iter().zip(&digits) {
                at.insert(*v, *s);
            }
            for (k, s) in slots.iter().enumerate() {
                let choice = rule[offsets[k] + row_of(s, &at)];
                at.insert(s.decision, choice);
            }
            let p = en.factors.iter().fold(d.constant(), |acc, t| acc * cell(t, &at));
            z += p;
            zu += p * cell(&utility, &at);
            if !next_config(&mut digits, &en.cards) {
                break;
            }
        }
        let meu = if z > 0.0 { zu / z } else { f64::NEG_INFINITY };
        if best.as_ref().is_none_or(|b| meu > b.0) {
            best = Some((meu, zu, z, rule.clone()));
        }
        if !next_config(&mut rule, &rule_cards) {
            break;
        }
    }

    let (meu, raw_value, evidence_probability, rule) = best.expect("at least one policy");
    if evidence_probability == 0.0 {
        return Err(OracleError::ZeroProbabilityEvidence);
    }
    let mut fragments = BTreeMap::new();
    for (k, s) in slots.iter().enumerate() {
        let rows: usize = s.info.iter().map(|p| p.1).product();
        let choices = StateTable::from_states(&s.info, rule[offsets[k]..offsets[k] + rows].to_vec())?;
        fragments.insert(s.decision, PolicyFragment { decision: s.decision, choices });
    }
    Ok(Policy { fragments, meu, raw_value, evidence_probability })
}

/// Whether two policies prescribe the same choice at every configuration
/// of the union of their information scopes.
pub fn policies_agree(d: &Diagram, a: &Policy, b: &Policy) -> bool {
    if a.fragments.keys().ne(b.fragments.keys()) {
        return false;
    }
    for (dec, fa) in &a.fragments {
        let fb = &b.fragments[dec];
        let mut vars: Vec<NodeId> = fa.choices.scope().iter().chain(fb.choices.scope()).copied().collect();
        vars.sort();
        vars.dedup();
        let cards: Vec<usize> = vars.iter().map(|v| d.nodes.get(v).map_or(1, |n| n.cardinality())).collect();
        let mut digits = vec![0; vars.len()];
        loop {
            let lookup = |v: NodeId| vars.iter().position(|x| *x == v).map(|k| digits[k]);
            if fa.choice(lookup) != fb.choice(lookup) {
                return false;
            }
            if !next_config(&mut digits, &cards) {
                break;
            }
        }
    }
    true
}
