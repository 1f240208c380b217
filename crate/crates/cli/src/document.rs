//! JSON file format for diagrams.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use pid_core::{Diagram, NodeKind, PotentialTable, TableKind, VarId, Variable};

use crate::error::CliError;

const CONSTANT_KEY: &str = "normalizing_constant";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramDocument {
    pub variables: Vec<VariableDoc>,
    pub nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub meta: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDoc {
    pub id: usize,
    pub name: String,
    pub states: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: usize,
    pub kind: NodeKind,
    #[serde(default)]
    pub parents: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableDoc>,
    /// Observed state, by name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
}

/// Values are laid out over `scope` in the listed order, last fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableDoc {
    pub kind: TableKind,
    pub scope: Vec<usize>,
    pub values: Vec<f64>,
}

fn parse_error(field: String, message: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("{field}: {message}"))
}

impl DiagramDocument {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::Parse(format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("documents always serialize")
    }

    /// Build the diagram. Structural problems (unknown ids, malformed
    /// tables, evidence naming a missing state) are parse errors;
    /// regularity is left to the caller.
    pub fn to_diagram(&self) -> Result<Diagram, CliError> {
        let mut variables = std::collections::BTreeMap::new();
        for (k, v) in self.variables.iter().enumerate() {
            let var = Variable::new(VarId(v.id), v.name.clone(), v.states.clone())
                .map_err(|e| parse_error(format!("variables[{k}]"), e))?;
            if variables.insert(v.id, var).is_some() {
                return Err(parse_error(format!("variables[{k}].id"), format!("duplicate id {}", v.id)));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for (k, v) in self.variables.iter().enumerate() {
            if !names.insert(v.name.as_str()) {
                return Err(parse_error(format!("variables[{k}].name"), format!("duplicate name `{}`", v.name)));
            }
        }

        let mut d = Diagram::new();
        let mut to_observe = Vec::new();
        for (k, n) in self.nodes.iter().enumerate() {
            let at = |field: &str| format!("nodes[{k}]{field}");
            let var = variables
                .remove(&n.id)
                .ok_or_else(|| parse_error(at(".id"), format!("no variable with id {} (or listed twice)", n.id)))?;
            for (p, parent) in n.parents.iter().enumerate() {
                if !self.variables.iter().any(|v| v.id == *parent) {
                    return Err(parse_error(at(&format!(".parents[{p}]")), format!("unknown id {parent}")));
                }
            }
            let (table, kind) = match &n.table {
                None => (None, None),
                Some(t) => {
                    let mut scope = Vec::with_capacity(t.scope.len());
                    for (s, id) in t.scope.iter().enumerate() {
                        let card = if *id == n.id {
                            var.cardinality()
                        } else {
                            self.variables
                                .iter()
                                .find(|v| v.id == *id)
                                .map(|v| v.states.len())
                                .ok_or_else(|| parse_error(at(&format!(".table.scope[{s}]")), format!("unknown id {id}")))?
                        };
                        scope.push((VarId(*id), card));
                    }
                    let table =
                        PotentialTable::new(&scope, t.values.clone()).map_err(|e| parse_error(at(".table"), e))?;
                    (Some(table), Some(t.kind))
                }
            };
            let evidence = match &n.evidence {
                None => None,
                Some(label) => Some(
                    var.state_index(label)
                        .ok_or_else(|| parse_error(at(".evidence"), format!("no state `{label}`")))?,
                ),
            };
            let sliced_later = evidence.is_some() && table.as_ref().is_some_and(|t| t.contains(VarId(n.id)));
            let parents = n.parents.iter().map(|p| VarId(*p)).collect();
            let stored = if sliced_later { None } else { evidence };
            d.insert_node(var, n.kind, parents, table, kind, stored).map_err(|e| parse_error(at(""), e))?;
            if sliced_later {
                to_observe.push((k, VarId(n.id), evidence.expect("checked")));
            }
        }
        if let Some(v) = variables.values().next() {
            return Err(parse_error("variables".into(), format!("variable `{}` has no node", v.name())));
        }
        let mut ops = pid_core::OpCounters::new();
        for (k, id, state) in to_observe {
            d.instantiate_evidence(id, state, &mut ops).map_err(|e| parse_error(format!("nodes[{k}].evidence"), e))?;
        }
        if let Some(c) = self.meta.get(CONSTANT_KEY) {
            let c = c.as_f64().ok_or_else(|| parse_error(format!("meta.{CONSTANT_KEY}"), "not a number"))?;
            d.set_constant(c).map_err(|e| parse_error(format!("meta.{CONSTANT_KEY}"), e))?;
        }
        Ok(d)
    }

    /// Canonical document for `d`: nodes and scopes in ascending id order.
    pub fn from_diagram(d: &Diagram) -> Self {
        let mut variables = Vec::new();
        let mut nodes = Vec::new();
        for n in d.nodes() {
            let var = n.variable();
            variables.push(VariableDoc { id: var.id().0, name: var.name().to_string(), states: var.states().to_vec() });
            nodes.push(NodeDoc {
                id: n.id().0,
                kind: n.kind(),
                parents: n.parents().iter().map(|p| p.0).collect(),
                table: n.table().map(|t| TableDoc {
                    kind: n.table_kind(),
                    scope: t.scope().iter().map(|v| v.0).collect(),
                    values: t.values().to_vec(),
                }),
                evidence: n.evidence().map(|s| var.states()[s].clone()),
            });
        }
        let mut meta = Map::new();
        if d.constant() != 1.0 {
            meta.insert(CONSTANT_KEY.into(), Value::from(d.constant()));
        }
        DiagramDocument { variables, nodes, meta }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pid_core::fixtures;

    #[test]
    fn round_trip_is_identity() {
        let (d, _) = fixtures::wildcatter();
        for d in [d, fixtures::evidence_network(), fixtures::reduction_case4()] {
            let doc = DiagramDocument::from_diagram(&d);
            let back = DiagramDocument::parse(&doc.to_json()).unwrap().to_diagram().unwrap();
            assert_eq!(DiagramDocument::from_diagram(&back), doc);
        }
    }

    #[test]
    fn evidence_on_a_full_table_is_instantiated() {
        let text = r#"{
            "variables": [{"id": 0, "name": "A", "states": ["f", "t"]}],
            "nodes": [{"id": 0, "kind": "chance", "table": {"kind": "conditional", "scope": [0], "values": [0.3, 0.7]}, "evidence": "t"}]
        }"#;
        let d = DiagramDocument::parse(text).unwrap().to_diagram().unwrap();
        let n = d.node(VarId(0)).unwrap();
        assert_eq!(n.evidence(), Some(1));
        assert_eq!(n.table().unwrap().as_scalar(), Some(0.7));
    }

    #[test]
    fn errors_name_the_field() {
        let text = r#"{"variables": [{"id": 0, "name": "A", "states": ["f"]}],
            "nodes": [{"id": 0, "kind": "chance", "parents": [4], "table": {"kind": "conditional", "scope": [0], "values": [1]}}]}"#;
        let err = DiagramDocument::parse(text).unwrap().to_diagram().unwrap_err();
        assert!(err.to_string().contains("nodes[0].parents[0]"), "{err}");
        let err = DiagramDocument::parse("{\n \"variables\": 3 }").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
