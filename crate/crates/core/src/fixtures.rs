//! Small hand-built diagrams used by the tests, the acceptance harness and
//! the `pidiag example` command.

use crate::diagram::{Diagram, NodeId};

const BIN: &[&str] = &["f", "t"];

/// Three-node chain `A -> B -> C` of binary variables.
pub fn chain() -> Diagram {
    let mut d = Diagram::new();
    let a = d.add_chance("A", BIN, &[], vec![0.3, 0.7]).expect("valid");
    let b = d.add_chance("B", BIN, &[a], vec![0.9, 0.1, 0.2, 0.8]).expect("valid");
    d.add_chance("C", BIN, &[b], vec![0.6, 0.4, 0.1, 0.9]).expect("valid");
    d
}

/// Evidence propagation example: `A -> C`, `B -> D`, `C -> D`, `D -> E`,
/// with soft evidence `F` on `B` and `G` on `E`.
///
/// Ids are assigned in name order, `A` = 0 through `G` = 6.
pub fn evidence_network() -> Diagram {
    let mut d = Diagram::new();
    let a = d.add_chance("A", BIN, &[], vec![0.35, 0.65]).expect("valid");
    let b = d.add_chance("B", BIN, &[], vec![0.55, 0.45]).expect("valid");
    let c = d.add_chance("C", BIN, &[a], vec![0.8, 0.2, 0.25, 0.75]).expect("valid");
    let dd = d
        .add_chance("D", BIN, &[b, c], vec![0.9, 0.1, 0.6, 0.4, 0.3, 0.7, 0.05, 0.95])
        .expect("valid");
    let e = d.add_chance("E", BIN, &[dd], vec![0.7, 0.3, 0.15, 0.85]).expect("valid");
    d.add_soft_evidence(b, "F", BIN, vec![0.8, 0.2, 0.3, 0.7], 1).expect("valid");
    d.add_soft_evidence(e, "G", BIN, vec![0.6, 0.4, 0.1, 0.9], 1).expect("valid");
    d
}

/// [`evidence_network`] with unnormalized potentials at `D` and `E`.
pub fn evidence_network_potentials() -> Diagram {
    let mut d = Diagram::new();
    let a = d.add_chance("A", BIN, &[], vec![0.35, 0.65]).expect("valid");
    let b = d.add_chance("B", BIN, &[], vec![0.55, 0.45]).expect("valid");
    let c = d.add_chance("C", BIN, &[a], vec![0.8, 0.2, 0.25, 0.75]).expect("valid");
    let dd = d
        .add_chance("D", BIN, &[b, c], vec![1.8, 0.2, 0.6, 0.4, 0.9, 2.1, 0.05, 0.95])
        .expect("valid");
    let e = d.add_chance("E", BIN, &[dd], vec![3.5, 1.5, 0.3, 1.7]).expect("valid");
    d.add_soft_evidence(b, "F", BIN, vec![0.8, 0.2, 0.3, 0.7], 1).expect("valid");
    d.add_soft_evidence(e, "G", BIN, vec![0.6, 0.4, 0.1, 0.9], 1).expect("valid");
    d
}

/// Isolated node `I` with potential `(3, 7)`.
pub fn reduction_case1() -> Diagram {
    let mut d = Diagram::new();
    d.add_chance("I", BIN, &[], vec![3.0, 7.0]).expect("valid");
    d
}

/// Childless `I` with parents `J`, `K1`, `K2`, where `K1 -> J`.
pub fn reduction_case2() -> Diagram {
    let mut d = Diagram::new();
    let k1 = d.add_chance("K1", BIN, &[], vec![0.4, 0.6]).expect("valid");
    let k2 = d.add_chance("K2", BIN, &[], vec![0.7, 0.3]).expect("valid");
    let j = d.add_chance("J", BIN, &[k1], vec![0.2, 0.8, 0.5, 0.5]).expect("valid");
    let values = vec![1.5, 0.5, 0.2, 2.0, 0.3, 0.3, 1.0, 0.1, 0.6, 0.9, 0.4, 0.4, 2.5, 0.0, 0.7, 1.1];
    d.add_chance("I", BIN, &[j, k1, k2], values).expect("valid");
    d
}

/// `I` with parents `K1`, `K2` and one child `J`, which also has parent `L`.
pub fn reduction_case3() -> Diagram {
    let mut d = Diagram::new();
    let k1 = d.add_chance("K1", BIN, &[], vec![0.4, 0.6]).expect("valid");
    let k2 = d.add_chance("K2", BIN, &[], vec![0.5, 0.5]).expect("valid");
    let l = d.add_chance("L", BIN, &[], vec![0.1, 0.9]).expect("valid");
    let i = d
        .add_chance("I", &["a", "b", "c"], &[k1, k2], vec![1.0, 2.0, 0.5, 0.3, 0.3, 0.3, 0.0, 1.0, 4.0, 2.0, 2.0, 2.0])
        .expect("valid");
    let values = vec![0.9, 0.1, 0.5, 0.5, 0.3, 0.7, 0.2, 0.8, 0.6, 0.4, 0.05, 0.95];
    d.add_chance("J", BIN, &[i, l], values).expect("valid");
    d
}

/// `I` with parent `K` and children `A` (also child of `C`), `B` (also
/// child of `D`) and `J`, where `J` also depends on `A` and `B`.
pub fn reduction_case4() -> Diagram {
    let mut d = Diagram::new();
    let c = d.add_chance("C", BIN, &[], vec![0.3, 0.7]).expect("valid");
    let dd = d.add_chance("D", BIN, &[], vec![0.6, 0.4]).expect("valid");
    let k = d.add_chance("K", BIN, &[], vec![0.45, 0.55]).expect("valid");
    let i = d.add_chance("I", BIN, &[k], vec![2.0, 1.0, 0.5, 1.5]).expect("valid");
    let a = d.add_chance("A", BIN, &[i, c], vec![0.9, 0.1, 0.4, 0.6, 0.35, 0.65, 0.2, 0.8]).expect("valid");
    let b = d.add_chance("B", BIN, &[i, dd], vec![0.5, 0.5, 0.25, 0.75, 0.7, 0.3, 0.15, 0.85]).expect("valid");
    let values: Vec<f64> = (0..8).flat_map(|k| {
        let p = 0.1 + 0.1 * k as f64;
        [p, 1.0 - p]
    }).collect();
    d.add_chance("J", BIN, &[i, a, b], values).expect("valid");
    d
}

/// Node ids of [`wildcatter`], by role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WildcatterIds {
    pub test: NodeId,
    pub oil: NodeId,
    pub seismic: NodeId,
    pub experimental: NodeId,
    pub results: NodeId,
    pub drill: NodeId,
    pub revenues: NodeId,
    pub cost: NodeId,
    pub value: NodeId,
}

/// Oil wildcatter with two tests: decide whether to test, observe a
/// combined result, then decide whether to drill.
pub fn wildcatter() -> (Diagram, WildcatterIds) {
    let mut d = Diagram::new();
    let test = d.add_decision("Test", &["no", "yes"], &[]).expect("valid");
    let oil = d.add_chance("Oil", &["dry", "wet", "soaking"], &[], vec![0.5, 0.3, 0.2]).expect("valid");
    let seismic = d
        .add_chance(
            "Seismic",
            &["diffuse", "open", "closed"],
            &[oil],
            vec![0.6, 0.3, 0.1, 0.3, 0.4, 0.3, 0.1, 0.4, 0.5],
        )
        .expect("valid");
    let experimental = d
        .add_chance("Experimental", &["negative", "positive"], &[oil], vec![0.8, 0.2, 0.4, 0.6, 0.1, 0.9])
        .expect("valid");

    // untested gives "none"; otherwise the result grades seismic plus experimental
    let mut results = Vec::new();
    for t in 0..2 {
        for s in 0..3 {
            for x in 0..2 {
                let mut row = [0.0; 4];
                if t == 0 {
                    row[0] = 1.0;
                } else {
                    let grade = (s + x).min(2);
                    row[1 + grade] = 0.9;
                    row[1 + (grade + 1) % 3] = 0.1;
                }
                results.extend(row);
            }
        }
    }
    let result = d
        .add_chance("Results", &["none", "poor", "fair", "good"], &[test, seismic, experimental], results)
        .expect("valid");
    let drill = d.add_decision("Drill", &["yes", "no"], &[test, result]).expect("valid");
    let revenues = d
        .add_chance(
            "Revenues",
            &["none", "low", "high"],
            &[drill, oil],
            vec![1.0, 0.0, 0.0, 0.0, 0.8, 0.2, 0.0, 0.2, 0.8, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .expect("valid");
    let cost = d
        .add_chance(
            "Cost",
            &["0", "5", "70", "75"],
            &[test, drill],
            vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
        )
        .expect("valid");
    let income = [0.0, 120.0, 270.0];
    let spend = [0.0, 5.0, 70.0, 75.0];
    let utilities = income.iter().flat_map(|r| spend.iter().map(move |c| r - c + 100.0)).collect();
    let value = d.add_value("Profit", &[revenues, cost], utilities).expect("valid");
    let ids = WildcatterIds { test, oil, seismic, experimental, results: result, drill, revenues, cost, value };
    (d, ids)
}

/// One decision whose value depends only on it, utilities `(2, 5)`.
pub fn trivial_decision() -> Diagram {
    let mut d = Diagram::new();
    let dec = d.add_decision("D", &["a", "b"], &[]).expect("valid");
    d.add_value("V", &[dec], vec![2.0, 5.0]).expect("valid");
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_regular() {
        for d in [chain(), evidence_network(), evidence_network_potentials(), reduction_case1(), reduction_case2(), reduction_case3(), reduction_case4(), trivial_decision()] {
            assert!(d.validate_regular().is_regular(), "{:?}", d.validate_regular());
        }
        let (d, _) = wildcatter();
        assert!(d.validate_regular().is_regular(), "{:?}", d.validate_regular());
        assert!(d.is_cid());
    }
}
