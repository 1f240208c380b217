//! Seeded random diagram generators for property tests and benchmarks.

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diagram::{Diagram, NodeId, NodeKind};
use crate::tables::OpCounters;

#[derive(Clone, Debug, PartialEq)]
pub struct RandomSpec {
    pub nodes: RangeInclusive<usize>,
    pub cardinality: RangeInclusive<usize>,
    pub max_parents: usize,
    /// Chance that each earlier node is offered as a parent.
    pub arc_probability: f64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec { nodes: 4..=7, cardinality: 2..=3, max_parents: 3, arc_probability: 0.5 }
    }
}

fn labels(card: usize) -> Vec<String> {
    (0..card).map(|k| format!("s{k}")).collect()
}

/// Random conditional rows over `rows` parent configurations, each row a
/// distribution over `card` states bounded away from zero.
fn conditional_rows(rng: &mut impl Rng, rows: usize, card: usize) -> Vec<f64> {
    let mut values = Vec::with_capacity(rows * card);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..card).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        values.extend(raw.iter().map(|x| x / total));
    }
    values
}

fn pick_parents(rng: &mut impl Rng, pool: &[NodeId], spec: &RandomSpec) -> Vec<NodeId> {
    let mut parents: Vec<NodeId> = pool.iter().copied().filter(|_| rng.gen_bool(spec.arc_probability)).collect();
    parents.shuffle(rng);
    parents.truncate(spec.max_parents);
    parents.sort();
    parents
}

fn add_random_chance(d: &mut Diagram, rng: &mut impl Rng, name: &str, parents: &[NodeId], card: usize) -> NodeId {
    let rows: usize = parents.iter().map(|p| d.node(*p).expect("parent exists").cardinality()).product();
    let values = conditional_rows(rng, rows, card);
    let states = labels(card);
    let refs: Vec<&str> = states.iter().map(String::as_str).collect();
    d.add_chance(name, &refs, parents, values).expect("generated node is valid")
}

/// Random regular conditional diagram of chance nodes only.
pub fn random_cid(rng: &mut impl Rng, spec: &RandomSpec) -> Diagram {
    let n = rng.gen_range(spec.nodes.clone());
    let mut d = Diagram::new();
    let mut ids = Vec::with_capacity(n);
    for k in 0..n {
        let parents = pick_parents(rng, &ids, spec);
        let card = rng.gen_range(spec.cardinality.clone());
        ids.push(add_random_chance(&mut d, rng, &format!("X{k}"), &parents, card));
    }
    d
}

/// One randomly chosen primitive that can legally be applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveStep {
    ArcReversal(NodeId, NodeId),
    PotentialReversal(NodeId, NodeId),
    Conditionalize(NodeId),
}

/// Apply a random legal arc reversal, potential reversal or
/// conditionalization. Returns `None` when nothing applies.
pub fn random_primitive_step(d: &mut Diagram, rng: &mut impl Rng, ops: &mut OpCounters) -> Option<PrimitiveStep> {
    let mut candidates = Vec::new();
    for (i, h) in d.arcs() {
        candidates.push(PrimitiveStep::ArcReversal(i, h));
        candidates.push(PrimitiveStep::PotentialReversal(i, h));
    }
    for n in d.unobserved_chance() {
        candidates.push(PrimitiveStep::Conditionalize(n));
    }
    candidates.shuffle(rng);
    for step in candidates {
        let mut trial = d.clone();
        let applied = match step {
            PrimitiveStep::ArcReversal(i, h) => trial.arc_reversal(i, h, ops).is_ok(),
            PrimitiveStep::PotentialReversal(i, h) => trial.potential_reversal(i, h, ops).is_ok(),
            PrimitiveStep::Conditionalize(i) => trial.conditionalize(i, ops).is_ok(),
        };
        if applied {
            *d = trial;
            return Some(step);
        }
    }
    None
}

/// Apply up to `count` random legal potential reversals between chance
/// nodes, turning a conditional diagram into a potential one.
pub fn random_potential_reversals(d: &mut Diagram, rng: &mut impl Rng, count: usize, ops: &mut OpCounters) -> usize {
    let mut done = 0;
    for _ in 0..count {
        let mut arcs: Vec<(NodeId, NodeId)> = d
            .arcs()
            .into_iter()
            .filter(|(i, h)| {
                let chance = |n: &NodeId| d.node(*n).is_ok_and(|x| x.kind() == NodeKind::Chance);
                chance(i) && chance(h)
            })
            .collect();
        arcs.shuffle(rng);
        if let Some((i, h)) = arcs.into_iter().find(|(i, h)| d.clone().potential_reversal(*i, *h, ops).is_ok()) {
            d.potential_reversal(i, h, ops).expect("checked on a copy");
            done += 1;
        }
    }
    done
}

/// Observe `count` random unobserved chance nodes at random states.
/// Returns the (node, state) pairs without instantiating them.
pub fn random_evidence(d: &Diagram, rng: &mut impl Rng, count: usize) -> Vec<(NodeId, usize)> {
    let mut pool = d.unobserved_chance();
    pool.shuffle(rng);
    pool.truncate(count);
    pool.sort();
    pool.into_iter()
        .map(|n| (n, rng.gen_range(0..d.node(n).expect("listed").cardinality())))
        .collect()
}

/// Random single-decision problem: chance nodes observed before the
/// decision, chance nodes after it (possibly influenced by it) and a value
/// node with nonnegative utilities.
pub fn random_decision_problem(rng: &mut impl Rng, spec: &RandomSpec) -> Diagram {
    let mut d = Diagram::new();
    let before = rng.gen_range(1..=3);
    let after = rng.gen_range(1..=3);
    let mut ids = Vec::new();
    for k in 0..before {
        let parents = pick_parents(rng, &ids, spec);
        let card = rng.gen_range(spec.cardinality.clone());
        ids.push(add_random_chance(&mut d, rng, &format!("X{k}"), &parents, card));
    }
    let mut informed = pick_parents(rng, &ids, spec);
    informed.truncate(2);
    let dcard = rng.gen_range(spec.cardinality.clone());
    let dec_states = labels(dcard);
    let refs: Vec<&str> = dec_states.iter().map(String::as_str).collect();
    let dec = d.add_decision("D", &refs, &informed).expect("valid decision");
    ids.push(dec);
    for k in 0..after {
        let parents = pick_parents(rng, &ids, spec);
        let card = rng.gen_range(spec.cardinality.clone());
        ids.push(add_random_chance(&mut d, rng, &format!("Y{k}"), &parents, card));
    }
    let mut vparents = pick_parents(rng, &ids, &RandomSpec { max_parents: 3, ..spec.clone() });
    if !vparents.contains(&dec) {
        vparents.push(dec);
        vparents.sort();
        vparents.truncate(3);
        if !vparents.contains(&dec) {
            vparents[2] = dec;
        }
    }
    let rows: usize = vparents.iter().map(|p| d.node(*p).expect("exists").cardinality()).product();
    let utilities = (0..rows).map(|_| rng.gen_range(0.0..100.0)).collect();
    d.add_value("V", &vparents, utilities).expect("valid value node");
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_are_deterministic_and_regular() {
        let spec = RandomSpec::default();
        let a = random_cid(&mut ChaCha8Rng::seed_from_u64(7), &spec);
        let b = random_cid(&mut ChaCha8Rng::seed_from_u64(7), &spec);
        assert_eq!(a, b);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_cid(&mut rng, &spec);
            assert!(d.is_cid() && d.validate_regular().is_regular());
            let p = random_decision_problem(&mut rng, &spec);
            assert!(p.validate_regular().is_regular(), "{:?}", p.validate_regular());
        }
    }
}
