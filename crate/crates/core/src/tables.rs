//! Dense nonnegative tables over discrete variable scopes.
//!
//! Every numeric object in a diagram (conditional distributions, potentials,
//! utilities) is a [`PotentialTable`]. Tables are stored flat, with the scope
//! sorted by ascending variable id and the last scope variable varying
//! fastest. All arithmetic reports into a caller-owned [`OpCounters`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a variable. Inside a diagram it doubles as the node id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("variable `{0}` must have at least one state")]
    NoStates(String),
    #[error("variable `{var}` has duplicate state label `{state}`")]
    DuplicateState { var: String, state: String },
    #[error("value {value} at position {index} is negative or not finite")]
    NegativeValue { index: usize, value: f64 },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("variable {0} appears twice in scope")]
    DuplicateVariableInScope(VarId),
    #[error("variable {var} has cardinality {left} in one table and {right} in the other")]
    CardinalityMismatch { var: VarId, left: usize, right: usize },
    #[error("variable {0} is not in the table scope")]
    VariableNotInScope(VarId),
    #[error("state {state} out of range for variable {var} with {cardinality} states")]
    StateOutOfRange { var: VarId, state: usize, cardinality: usize },
    #[error("positive value {numerator} divided by zero")]
    PositiveDividedByZero { numerator: f64 },
    #[error("denominator scope is not contained in the numerator scope")]
    ScopeNotContained,
}

/// A discrete quantity with a finite ordered set of possibilities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    id: VarId,
    name: String,
    states: Vec<String>,
}

impl Variable {
    pub fn new(id: VarId, name: impl Into<String>, states: Vec<String>) -> Result<Self, TableError> {
        let name = name.into();
        if states.is_empty() {
            return Err(TableError::NoStates(name));
        }
        for (k, s) in states.iter().enumerate() {
            if states[..k].contains(s) {
                return Err(TableError::DuplicateState { var: name, state: s.clone() });
            }
        }
        Ok(Variable { id, name, states })
    }

    /// A variable whose states are labelled `s0`, `s1`, ...
    pub fn with_cardinality(id: VarId, name: impl Into<String>, cardinality: usize) -> Result<Self, TableError> {
        Self::new(id, name, (0..cardinality).map(|k| format!("s{k}")).collect())
    }

    pub fn id(&self) -> VarId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn cardinality(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }
}

/// Tally of arithmetic performed during one pipeline run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub mults: u64,
    pub adds: u64,
    pub divs: u64,
    pub maxes: u64,
    pub tables_allocated: u64,
    pub entries_allocated: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    fn allocated(&mut self, entries: usize) {
        self.tables_allocated += 1;
        self.entries_allocated += entries as u64;
    }
}

/// Nonnegative real-valued table over an ordered scope of variables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialTable {
    scope: Vec<VarId>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

/// Per-configuration state choice over a scope, laid out like a table.
///
/// Produced by [`PotentialTable::max_out`] and used for decision policies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StateTable {
    scope: Vec<VarId>,
    cards: Vec<usize>,
    states: Vec<usize>,
}

impl StateTable {
    pub fn constant(scope: &[(VarId, usize)], state: usize) -> Self {
        let mut pairs = scope.to_vec();
        pairs.sort_by_key(|p| p.0);
        let len = pairs.iter().map(|p| p.1).product();
        StateTable {
            scope: pairs.iter().map(|p| p.0).collect(),
            cards: pairs.iter().map(|p| p.1).collect(),
            states: vec![state; len],
        }
    }

    /// Build from choices laid out over `scope`, which must already be in
    /// ascending id order.
    pub fn from_states(scope: &[(VarId, usize)], states: Vec<usize>) -> Result<Self, TableError> {
        if let Some(w) = scope.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(TableError::DuplicateVariableInScope(w[1].0));
        }
        let expected: usize = scope.iter().map(|p| p.1).product();
        if states.len() != expected {
            return Err(TableError::LengthMismatch { expected, actual: states.len() });
        }
        Ok(StateTable {
            scope: scope.iter().map(|p| p.0).collect(),
            cards: scope.iter().map(|p| p.1).collect(),
            states,
        })
    }

    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// State chosen for the configuration given by `lookup` (which must
    /// cover every scope variable).
    pub fn state_for(&self, lookup: impl Fn(VarId) -> Option<usize>) -> Option<usize> {
        linear_index(&self.scope, &self.cards, lookup).map(|k| self.states[k])
    }
}

fn row_strides(cards: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; cards.len()];
    let mut s = 1;
    for k in (0..cards.len()).rev() {
        strides[k] = s;
        s *= cards[k];
    }
    strides
}

/// Stride of each `target` variable inside a table laid out over `scope`
/// (zero for variables the table does not mention).
fn strides_into(scope: &[VarId], cards: &[usize], target: &[VarId]) -> Vec<usize> {
    let own = row_strides(cards);
    target
        .iter()
        .map(|v| scope.iter().position(|x| x == v).map_or(0, |k| own[k]))
        .collect()
}

fn linear_index(scope: &[VarId], cards: &[usize], lookup: impl Fn(VarId) -> Option<usize>) -> Option<usize> {
    let mut index = 0;
    for (v, &c) in scope.iter().zip(cards) {
        let s = lookup(*v)?;
        if s >= c {
            return None;
        }
        index = index * c + s;
    }
    Some(index)
}

/// Walk every configuration of `cards` in canonical order, tracking the
/// matching flat offset in each source table.
fn walk(cards: &[usize], strides: &[Vec<usize>], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = cards.iter().product();
    let mut digits = vec![0usize; cards.len()];
    let mut offsets = vec![0usize; strides.len()];
    for cell in 0..total {
        f(cell, &offsets);
        let mut k = cards.len();
        while k > 0 {
            k -= 1;
            digits[k] += 1;
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o += s[k];
            }
            if digits[k] < cards[k] {
                break;
            }
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o -= s[k] * cards[k];
            }
            digits[k] = 0;
        }
    }
}

fn check_values(values: &[f64]) -> Result<(), TableError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(TableError::NegativeValue { index, value });
        }
    }
    Ok(())
}

impl PotentialTable {
    /// Build a table from values laid out over `scope` in the caller's
    /// declared order (last entry fastest). The result is re-laid out into
    /// canonical ascending-id order.
    pub fn new(scope: &[(VarId, usize)], values: Vec<f64>) -> Result<Self, TableError> {
        for (k, (v, _)) in scope.iter().enumerate() {
            if scope[..k].iter().any(|(w, _)| w == v) {
                return Err(TableError::DuplicateVariableInScope(*v));
            }
        }
        let expected: usize = scope.iter().map(|p| p.1).product();
        if values.len() != expected {
            return Err(TableError::LengthMismatch { expected, actual: values.len() });
        }
        check_values(&values)?;

        let declared: Vec<VarId> = scope.iter().map(|p| p.0).collect();
        let declared_cards: Vec<usize> = scope.iter().map(|p| p.1).collect();
        let mut sorted = scope.to_vec();
        sorted.sort_by_key(|p| p.0);
        let canon: Vec<VarId> = sorted.iter().map(|p| p.0).collect();
        let cards: Vec<usize> = sorted.iter().map(|p| p.1).collect();
        if canon == declared {
            return Ok(PotentialTable { scope: canon, cards, values });
        }
        let strides = vec![strides_into(&declared, &declared_cards, &canon)];
        let mut out = vec![0.0; expected];
        walk(&cards, &strides, |cell, off| out[cell] = values[off[0]]);
        Ok(PotentialTable { scope: canon, cards, values: out })
    }

    pub fn from_variables(scope: &[&Variable], values: Vec<f64>) -> Result<Self, TableError> {
        let pairs: Vec<(VarId, usize)> = scope.iter().map(|v| (v.id(), v.cardinality())).collect();
        Self::new(&pairs, values)
    }

    pub fn scalar(value: f64) -> Result<Self, TableError> {
        Self::new(&[], vec![value])
    }

    pub fn ones(scope: &[(VarId, usize)]) -> Self {
        let len = scope.iter().map(|p| p.1).product();
        Self::new(scope, vec![1.0; len]).expect("ones table is always valid")
    }

    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    /// Scope paired with cardinalities.
    pub fn scope_pairs(&self) -> Vec<(VarId, usize)> {
        self.scope.iter().copied().zip(self.cards.iter().copied()).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.scope.is_empty()
    }

    pub fn contains(&self, v: VarId) -> bool {
        self.scope.contains(&v)
    }

    pub fn cardinality_of(&self, v: VarId) -> Option<usize> {
        self.scope.iter().position(|x| *x == v).map(|k| self.cards[k])
    }

    /// Value of a scalar table.
    pub fn as_scalar(&self) -> Option<f64> {
        self.is_scalar().then(|| self.values[0])
    }

    /// Value at the configuration given by `lookup`, or `None` when a scope
    /// variable is unassigned or out of range.
    pub fn value_for(&self, lookup: impl Fn(VarId) -> Option<usize>) -> Option<f64> {
        linear_index(&self.scope, &self.cards, lookup).map(|k| self.values[k])
    }

    /// Sum of all cells.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn position(&self, v: VarId) -> Result<usize, TableError> {
        self.scope.iter().position(|x| *x == v).ok_or(TableError::VariableNotInScope(v))
    }

    fn without(&self, k: usize) -> (Vec<VarId>, Vec<usize>) {
        let mut scope = self.scope.clone();
        let mut cards = self.cards.clone();
        scope.remove(k);
        cards.remove(k);
        (scope, cards)
    }

    pub fn multiply(&self, other: &PotentialTable, ops: &mut OpCounters) -> Result<PotentialTable, TableError> {
        let mut pairs = self.scope_pairs();
        for (v, c) in other.scope_pairs() {
            match pairs.iter().find(|p| p.0 == v) {
                Some(&(_, mine)) if mine != c => {
                    return Err(TableError::CardinalityMismatch { var: v, left: mine, right: c })
                }
                Some(_) => {}
                None => pairs.push((v, c)),
            }
        }
        pairs.sort_by_key(|p| p.0);
        let scope: Vec<VarId> = pairs.iter().map(|p| p.0).collect();
        let cards: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let strides = vec![
            strides_into(&self.scope, &self.cards, &scope),
            strides_into(&other.scope, &other.cards, &scope),
        ];
        let total: usize = cards.iter().product();
        let mut values = vec![0.0; total];
        walk(&cards, &strides, |cell, off| values[cell] = self.values[off[0]] * other.values[off[1]]);
        ops.mults += total as u64;
        ops.allocated(total);
        Ok(PotentialTable { scope, cards, values })
    }

    /// Multiply every cell by a nonnegative constant.
    pub fn scale(&self, factor: f64, ops: &mut OpCounters) -> Result<PotentialTable, TableError> {
        check_values(&[factor])?;
        ops.mults += self.len() as u64;
        ops.allocated(self.len());
        Ok(PotentialTable {
            scope: self.scope.clone(),
            cards: self.cards.clone(),
            values: self.values.iter().map(|x| x * factor).collect(),
        })
    }

    /// Broadcast the table over an extra variable it does not yet mention.
    /// Tables that already contain `v` are returned unchanged.
    pub fn expand(&self, v: VarId, cardinality: usize, ops: &mut OpCounters) -> Result<PotentialTable, TableError> {
        if let Some(c) = self.cardinality_of(v) {
            if c != cardinality {
                return Err(TableError::CardinalityMismatch { var: v, left: c, right: cardinality });
            }
            return Ok(self.clone());
        }
        let mut pairs = self.scope_pairs();
        pairs.push((v, cardinality));
        pairs.sort_by_key(|p| p.0);
        let scope: Vec<VarId> = pairs.iter().map(|p| p.0).collect();
        let cards: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let strides = vec![strides_into(&self.scope, &self.cards, &scope)];
        let total: usize = cards.iter().product();
        let mut values = vec![0.0; total];
        walk(&cards, &strides, |cell, off| values[cell] = self.values[off[0]]);
        ops.allocated(total);
        Ok(PotentialTable { scope, cards, values })
    }

    /// Reduce `v` by applying `fold` to each fibre of cells that differ only
    /// in the state of `v`.
    fn fold_out(&self, v: VarId, mut fold: impl FnMut(usize, &mut dyn Iterator<Item = f64>)) -> Result<(Vec<VarId>, Vec<usize>), TableError> {
        let k = self.position(v)?;
        let (scope, cards) = self.without(k);
        let step = row_strides(&self.cards)[k];
        let card = self.cards[k];
        let strides = vec![strides_into(&self.scope, &self.cards, &scope)];
        walk(&cards, &strides, |cell, off| {
            let base = off[0];
            let mut fibre = (0..card).map(|s| self.values[base + s * step]);
            fold(cell, &mut fibre);
        });
        Ok((scope, cards))
    }

    pub fn sum_out(&self, v: VarId, ops: &mut OpCounters) -> Result<PotentialTable, TableError> {
        let card = self.cardinality_of(v).ok_or(TableError::VariableNotInScope(v))?;
        let mut values = vec![0.0; self.len() / card];
        let (scope, cards) = self.fold_out(v, |cell, fibre| values[cell] = fibre.sum())?;
        ops.adds += (values.len() * (card - 1)) as u64;
        ops.allocated(values.len());
        Ok(PotentialTable { scope, cards, values })
    }

    /// Maximize over `v`, returning the maxima and the lowest state index
    /// attaining each maximum.
    pub fn max_out(&self, v: VarId, ops: &mut OpCounters) -> Result<(PotentialTable, StateTable), TableError> {
        let card = self.cardinality_of(v).ok_or(TableError::VariableNotInScope(v))?;
        let n = self.len() / card;
        let mut values = vec![0.0; n];
        let mut states = vec![0usize; n];
        let (scope, cards) = self.fold_out(v, |cell, fibre| {
            let mut best = f64::NEG_INFINITY;
            for (s, x) in fibre.enumerate() {
                if x > best {
                    best = x;
                    states[cell] = s;
                }
            }
            values[cell] = best;
        })?;
        ops.maxes += (n * (card - 1)) as u64;
        ops.allocated(n);
        Ok((
            PotentialTable { scope: scope.clone(), cards: cards.clone(), values },
            StateTable { scope, cards, states },
        ))
    }

    /// Slice the table at `v = state`, dropping `v` from the scope.
    pub fn restrict(&self, v: VarId, state: usize, ops: &mut OpCounters) -> Result<PotentialTable, TableError> {
        let k = self.position(v)?;
        let card = self.cards[k];
        if state >= card {
            return Err(TableError::StateOutOfRange { var: v, state, cardinality: card });
        }
        let mut values = vec![0.0; self.len() / card];
        let (scope, cards) = self.fold_out(v, |cell, fibre| {
            values[cell] = fibre.nth(state).expect("state checked against cardinality")
        })?;
        ops.allocated(values.len());
        Ok(PotentialTable { scope, cards, values })
    }

    /// Cell-wise quotient with `0/0 = 0`. The denominator scope must be a
    /// subset of the numerator scope.
    pub fn divide(&self, den: &PotentialTable, ops: &mut OpCounters) -> Result<PotentialTable, TableError> {
        for (v, c) in den.scope_pairs() {
            match self.cardinality_of(v) {
                None => return Err(TableError::ScopeNotContained),
                Some(mine) if mine != c => {
                    return Err(TableError::CardinalityMismatch { var: v, left: mine, right: c })
                }
                Some(_) => {}
            }
        }
        let strides = vec![strides_into(&den.scope, &den.cards, &self.scope)];
        let mut values = vec![0.0; self.len()];
        let mut failure = None;
        let mut divs = 0u64;
        walk(&self.cards, &strides, |cell, off| {
            let n = self.values[cell];
            let d = den.values[off[0]];
            if d == 0.0 {
                if n > 0.0 && failure.is_none() {
                    failure = Some(n);
                }
            } else {
                divs += 1;
                values[cell] = n / d;
            }
        });
        if let Some(numerator) = failure {
            return Err(TableError::PositiveDividedByZero { numerator });
        }
        ops.divs += divs;
        ops.allocated(values.len());
        Ok(PotentialTable { scope: self.scope.clone(), cards: self.cards.clone(), values })
    }

    /// Split into a conditional over `v` and the normalizer it was divided by.
    pub fn normalize_over(&self, v: VarId, ops: &mut OpCounters) -> Result<(PotentialTable, PotentialTable), TableError> {
        let normalizer = self.sum_out(v, ops)?;
        let conditional = self.divide(&normalizer, ops)?;
        Ok((conditional, normalizer))
    }

    /// True if summing over `v` gives 1 (within `tol`) for every
    /// configuration of the remaining scope. A table that does not mention
    /// `v` is treated as constant across its `cardinality` states.
    pub fn is_conditional_over(&self, v: VarId, cardinality: usize, tol: f64) -> bool {
        match self.position(v) {
            Err(_) => self.values.iter().all(|x| (x * cardinality as f64 - 1.0).abs() <= tol),
            Ok(k) => {
                let step = row_strides(&self.cards)[k];
                let card = self.cards[k];
                let (scope, cards) = self.without(k);
                let strides = vec![strides_into(&self.scope, &self.cards, &scope)];
                let mut ok = true;
                walk(&cards, &strides, |_, off| {
                    let s: f64 = (0..card).map(|j| self.values[off[0] + j * step]).sum();
                    ok &= (s - 1.0).abs() <= tol;
                });
                ok
            }
        }
    }

    /// Replace rows over `v` whose entries are all zero with a uniform
    /// distribution. Rows carrying mass are untouched.
    pub(crate) fn fill_zero_rows_uniform(&mut self, v: VarId) {
        let Ok(k) = self.position(v) else { return };
        let step = row_strides(&self.cards)[k];
        let card = self.cards[k];
        let (scope, cards) = self.without(k);
        let strides = vec![strides_into(&self.scope, &self.cards, &scope)];
        let mut bases = Vec::new();
        walk(&cards, &strides, |_, off| bases.push(off[0]));
        for base in bases {
            if (0..card).all(|j| self.values[base + j * step] == 0.0) {
                for j in 0..card {
                    self.values[base + j * step] = 1.0 / card as f64;
                }
            }
        }
    }

    /// Cell-wise comparison with a relative tolerance (and a tiny absolute
    /// floor for values at zero).
    pub fn approx_eq(&self, other: &PotentialTable, tol: f64) -> bool {
        self.scope == other.scope
            && self.cards == other.cards
            && self.values.iter().zip(&other.values).all(|(a, b)| close(*a, *b, tol))
    }
}

/// `|a - b| <= tol * max(|a|, |b|)`, with an absolute floor of 1e-300 so
/// that exact zeros compare equal.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    let diff = (a - b).abs();
    diff <= tol * a.abs().max(b.abs()) || diff <= 1e-300
}
