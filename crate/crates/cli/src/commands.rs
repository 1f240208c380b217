//! One function per subcommand. Each returns an [`Outcome`] holding the
//! structured report, its text rendering and the exit status.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};

use pid_core::oracle::{brute_posterior, brute_solve, policies_agree, OracleConfig};
use pid_core::random::{random_cid, random_decision_problem, random_potential_reversals, RandomSpec};
use pid_core::transforms::{
    d_separated, infer_posterior, pid_to_cid, reduce_node, solve_decision, ConversionMode, InferOptions,
    InferenceMode, Policy, SolveOptions, TargetOrder,
};
use pid_core::{fixtures, Diagram, NodeId, OpCounters, PotentialTable};

use crate::document::DiagramDocument;
use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub results: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counters: Option<OpCounters>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_probability: Option<f64>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: RunReport,
    pub text: String,
    pub exit_code: i32,
}

struct Run {
    command: Vec<String>,
    start: Instant,
}

impl Run {
    fn new(command: &[String]) -> Self {
        Run { command: command.to_vec(), start: Instant::now() }
    }

    fn finish(self, results: Value, counters: Option<OpCounters>, pe: Option<f64>, text: String, exit_code: i32) -> Outcome {
        let report = RunReport {
            command: self.command,
            results,
            counters,
            evidence_probability: pe,
            elapsed_ms: self.start.elapsed().as_secs_f64() * 1e3,
        };
        Outcome { report, text, exit_code }
    }
}

pub fn load(path: &Path) -> Result<Diagram, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    DiagramDocument::parse(&text)?.to_diagram()
}

/// Load and require regularity. Only `validate` accepts irregular input.
pub fn load_regular(path: &Path) -> Result<Diagram, CliError> {
    let d = load(path)?;
    let report = d.validate_regular();
    if report.is_regular() {
        Ok(d)
    } else {
        Err(CliError::NotRegular(report.violations))
    }
}

fn save(d: &Diagram, path: &Path) -> Result<(), CliError> {
    let text = DiagramDocument::from_diagram(d).to_json();
    std::fs::write(path, text + "\n").map_err(|source| CliError::Write { path: path.into(), source })
}

fn ids(d: &Diagram, names: &[String]) -> Result<Vec<NodeId>, CliError> {
    names.iter().map(|n| d.id_of(n).map_err(|_| CliError::UnknownName(n.clone()))).collect()
}

fn name(d: &Diagram, id: NodeId) -> String {
    d.node(id).map(|n| n.name().to_string()).unwrap_or_else(|_| id.to_string())
}

fn parse_evidence(d: &Diagram, items: &[String]) -> Result<Vec<(NodeId, usize)>, CliError> {
    items
        .iter()
        .map(|item| {
            let (n, s) = item
                .split_once('=')
                .ok_or_else(|| CliError::Argument(format!("evidence `{item}` must look like name=state")))?;
            let id = d.id_of(n).map_err(|_| CliError::UnknownName(n.to_string()))?;
            let state = d
                .node(id)?
                .variable()
                .state_index(s)
                .ok_or_else(|| CliError::Argument(format!("node `{n}` has no state `{s}`")))?;
            Ok((id, state))
        })
        .collect()
}

fn marginal_json(d: &Diagram, q: NodeId, t: &PotentialTable) -> Value {
    let states = d.node(q).map(|n| n.variable().states().to_vec()).unwrap_or_default();
    let map: Map<String, Value> = states.into_iter().zip(t.values()).map(|(s, p)| (s, json!(p))).collect();
    Value::Object(map)
}

pub fn validate(command: &[String], file: &Path) -> Result<Outcome, CliError> {
    let run = Run::new(command);
    let d = load(file)?;
    let report = d.validate_regular();
    let regular = report.is_regular();
    let mut text = String::new();
    if regular {
        let kind = if d.is_cid() { "conditional" } else { "potential" };
        writeln!(text, "regular {kind} influence diagram with {} nodes", d.len()).unwrap();
    } else {
        writeln!(text, "not regular:").unwrap();
        for v in &report.violations {
            writeln!(text, "  {v:?}").unwrap();
        }
    }
    let results = json!({ "regular": regular, "cid": d.is_cid(), "violations": report.violations });
    Ok(run.finish(results, None, None, text, if regular { 0 } else { 2 }))
}

pub struct InferArgs {
    pub file: PathBuf,
    pub evidence: Vec<String>,
    pub query: Vec<String>,
    pub mode: InferenceMode,
    pub order: Vec<String>,
    pub verify: bool,
}

pub fn infer(command: &[String], args: &InferArgs) -> Result<Outcome, CliError> {
    let run = Run::new(command);
    let d = load_regular(&args.file)?;
    let evidence = parse_evidence(&d, &args.evidence)?;
    let query = if args.query.is_empty() {
        d.unobserved_chance().into_iter().filter(|n| evidence.iter().all(|(e, _)| e != n)).collect()
    } else {
        ids(&d, &args.query)?
    };
    let order = if args.order.is_empty() { None } else { Some(ids(&d, &args.order)?) };
    let mut ops = OpCounters::new();
    let post = infer_posterior(&d, &evidence, &query, &InferOptions { mode: args.mode, order }, &mut ops)?;

    let mut text = String::new();
    let mut marginals = Map::new();
    for q in &query {
        let t = &post.marginals[q];
        writeln!(text, "{}", name(&d, *q)).unwrap();
        for (s, p) in d.node(*q)?.variable().states().iter().zip(t.values()) {
            writeln!(text, "  {s:<12} {p:.6}").unwrap();
        }
        marginals.insert(name(&d, *q), marginal_json(&d, *q, t));
    }
    writeln!(text, "probability of evidence: {:.6e}", post.evidence_probability).unwrap();
    writeln!(text, "divisions: {}, multiplications: {}", ops.divs, ops.mults).unwrap();

    let mut results = json!({ "mode": args.mode, "marginals": marginals });
    if args.verify {
        let cfg = OracleConfig::from_env();
        let mut worst: f64 = 0.0;
        for q in &query {
            let (truth, _) = brute_posterior(&d, &evidence, *q, &cfg)?;
            for (a, b) in truth.values().iter().zip(post.marginals[q].values()) {
                worst = worst.max((a - b).abs());
            }
        }
        writeln!(text, "largest deviation from enumeration: {worst:.3e}").unwrap();
        results["oracle_max_deviation"] = json!(worst);
    }
    Ok(run.finish(results, Some(ops), Some(post.evidence_probability), text, 0))
}

fn policy_rows(d: &Diagram, policy: &Policy) -> Value {
    let mut out = Map::new();
    for (dec, frag) in &policy.fragments {
        let scope = frag.choices.scope();
        let cards = frag.choices.cardinalities();
        let states = d.node(*dec).map(|n| n.variable().states().to_vec()).unwrap_or_default();
        let mut rows = Vec::new();
        let mut digits = vec![0usize; scope.len()];
        for choice in frag.choices.states() {
            let when: Map<String, Value> = scope
                .iter()
                .zip(&digits)
                .map(|(v, s)| {
                    let label = d.node(*v).map(|n| n.variable().states()[*s].clone()).unwrap_or_else(|_| s.to_string());
                    (name(d, *v), Value::from(label))
                })
                .collect();
            rows.push(json!({ "when": when, "choose": states.get(*choice).cloned().unwrap_or_default() }));
            for k in (0..digits.len()).rev() {
                digits[k] += 1;
                if digits[k] < cards[k] {
                    break;
                }
                digits[k] = 0;
            }
        }
        out.insert(name(d, *dec), Value::Array(rows));
    }
    Value::Object(out)
}

pub fn solve(command: &[String], file: &Path, mode: InferenceMode, verify: bool) -> Result<Outcome, CliError> {
    let run = Run::new(command);
    let original = load_regular(file)?;
    let mut d = original.clone();
    let mut ops = OpCounters::new();
    if mode == InferenceMode::Cid {
        let target = TargetOrder::from_diagram(&d)?;
        pid_to_cid(&mut d, &target, ConversionMode::Lazy, &mut ops)?;
    }
    let policy = solve_decision(&d, &SolveOptions::default(), &mut ops)?;
    let rows = policy_rows(&original, &policy);

    let mut text = String::new();
    for (dec, table) in rows.as_object().expect("object") {
        writeln!(text, "policy for {dec}:").unwrap();
        for row in table.as_array().expect("array") {
            let when: Vec<String> = row["when"]
                .as_object()
                .expect("object")
                .iter()
                .map(|(k, v)| format!("{k}={}", v.as_str().unwrap_or_default()))
                .collect();
            let when = if when.is_empty() { "always".to_string() } else { when.join(", ") };
            writeln!(text, "  {when} -> {}", row["choose"].as_str().unwrap_or_default()).unwrap();
        }
    }
    writeln!(text, "maximum expected utility: {:.6}", policy.meu).unwrap();

    let mut results = json!({ "mode": mode, "meu": policy.meu, "raw_value": policy.raw_value, "policy": rows });
    if verify {
        let truth = brute_solve(&original, &OracleConfig::from_env())?;
        let agrees = policies_agree(&original, &policy, &truth);
        writeln!(text, "enumeration: meu {:.6}, policy {}", truth.meu, if agrees { "agrees" } else { "differs" }).unwrap();
        results["oracle"] = json!({ "meu": truth.meu, "policy_agrees": agrees });
    }
    Ok(run.finish(results, Some(ops), Some(policy.evidence_probability), text, 0))
}

pub fn to_cid(command: &[String], file: &Path, order: &[String], eager: bool, out: Option<&Path>) -> Result<Outcome, CliError> {
    let run = Run::new(command);
    let mut d = load_regular(file)?;
    let target = if order.is_empty() { TargetOrder::from_diagram(&d)? } else { TargetOrder::new(&d, ids(&d, order)?)? };
    let mode = if eager { ConversionMode::Eager } else { ConversionMode::Lazy };
    let mut ops = OpCounters::new();
    let trace = pid_to_cid(&mut d, &target, mode, &mut ops)?;
    let document = DiagramDocument::from_diagram(&d);
    let mut results = json!({
        "reversals": trace.reversals.iter().map(|(a, b)| [name(&d, *a), name(&d, *b)]).collect::<Vec<_>>(),
        "dummies_created": trace.dummies.len(),
        "normalizing_constant": d.constant(),
    });
    let text = match out {
        Some(path) => {
            save(&d, path)?;
            results["written"] = json!(path.display().to_string());
            format!(
                "wrote {} ({} reversals, {} dummies, constant {:.6e})\n",
                path.display(),
                trace.reversals.len(),
                trace.dummies.len(),
                d.constant()
            )
        }
        None => {
            results["document"] = serde_json::to_value(&document).expect("serializable");
            document.to_json() + "\n"
        }
    };
    Ok(run.finish(results, Some(ops), None, text, 0))
}

pub fn dsep(command: &[String], file: &Path, j: &[String], k: &[String], given: &[String]) -> Result<Outcome, CliError> {
    let run = Run::new(command);
    let d = load_regular(file)?;
    let (js, ks, ls) = (ids(&d, j)?, ids(&d, k)?, ids(&d, given)?);
    let separated = d_separated(&d, &js, &ks, &ls)?;
    let text = format!(
        "{{{}}} and {{{}}} are {} given {{{}}}\n",
        j.join(", "),
        k.join(", "),
        if separated { "d-separated" } else { "not d-separated" },
        given.join(", ")
    );
    Ok(run.finish(json!({ "separated": separated }), None, None, text, 0))
}

pub fn reduce(command: &[String], file: &Path, node: &str, out: Option<&Path>) -> Result<Outcome, CliError> {
    let run = Run::new(command);
    let mut d = load_regular(file)?;
    let id = d.id_of(node).map_err(|_| CliError::UnknownName(node.to_string()))?;
    let mut ops = OpCounters::new();
    let r = reduce_node(&mut d, id, &mut ops)?;
    let mut text = format!("case {}: {node} removed", r.case.number());
    if let Some(j) = r.absorbed_into {
        write!(text, ", absorbed into {}", name(&d, j)).unwrap();
    }
    if let Some(m) = r.dummy {
        write!(text, ", constant kept in {}", name(&d, m)).unwrap();
    }
    text.push('\n');
    let mut results = json!({
        "case": r.case.number(),
        "absorbed_into": r.absorbed_into.map(|j| name(&d, j)),
        "dummy": r.dummy.map(|m| name(&d, m)),
        "reversed": r.reversed.iter().map(|c| name(&d, *c)).collect::<Vec<_>>(),
        "arcs": d.arcs().iter().map(|(a, b)| [name(&d, *a), name(&d, *b)]).collect::<Vec<_>>(),
    });
    if let Some(path) = out {
        save(&d, path)?;
        results["written"] = json!(path.display().to_string());
    }
    Ok(run.finish(results, Some(ops), None, text, 0))
}

pub const EXAMPLES: &[&str] = &[
    "chain",
    "evidence-network",
    "evidence-network-potentials",
    "reduction-case1",
    "reduction-case2",
    "reduction-case3",
    "reduction-case4",
    "trivial-decision",
    "wildcatter",
];

fn example_diagram(which: &str) -> Result<Diagram, CliError> {
    Ok(match which {
        "chain" => fixtures::chain(),
        "evidence-network" => fixtures::evidence_network(),
        "evidence-network-potentials" => fixtures::evidence_network_potentials(),
        "reduction-case1" => fixtures::reduction_case1(),
        "reduction-case2" => fixtures::reduction_case2(),
        "reduction-case3" => fixtures::reduction_case3(),
        "reduction-case4" => fixtures::reduction_case4(),
        "trivial-decision" => fixtures::trivial_decision(),
        "wildcatter" => fixtures::wildcatter().0,
        other => {
            return Err(CliError::Argument(format!("unknown example `{other}`; choose from {}", EXAMPLES.join(", "))))
        }
    })
}

fn emit(command: &[String], d: &Diagram, out: Option<&Path>, results: Value) -> Result<Outcome, CliError> {
    let run = Run::new(command);
    let mut results = results;
    let text = match out {
        Some(path) => {
            save(d, path)?;
            results["written"] = json!(path.display().to_string());
            format!("wrote {}\n", path.display())
        }
        None => DiagramDocument::from_diagram(d).to_json() + "\n",
    };
    Ok(run.finish(results, None, None, text, 0))
}

pub fn example(command: &[String], which: &str, out: Option<&Path>) -> Result<Outcome, CliError> {
    let d = example_diagram(which)?;
    emit(command, &d, out, json!({ "example": which, "nodes": d.len() }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratedKind {
    Cid,
    Pid,
    Decision,
}

pub fn generate(command: &[String], seed: u64, kind: GeneratedKind, out: Option<&Path>) -> Result<Outcome, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = RandomSpec::default();
    let d = match kind {
        GeneratedKind::Cid => random_cid(&mut rng, &spec),
        GeneratedKind::Pid => {
            let mut d = random_cid(&mut rng, &spec);
            random_potential_reversals(&mut d, &mut rng, 3, &mut OpCounters::new());
            d
        }
        GeneratedKind::Decision => random_decision_problem(&mut rng, &spec),
    };
    let counts: BTreeMap<&str, usize> = [("nodes", d.len()), ("arcs", d.arcs().len())].into();
    emit(command, &d, out, json!({ "seed": seed, "kind": kind, "size": counts }))
}
