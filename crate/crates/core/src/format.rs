//! TOML scenario files.
//!
//! Two layouts are accepted. The explicit layout lists the chain and every
//! state's action table. The factored layout describes independent chain
//! components and per-node links; it expands into the explicit form, with the
//! product chain ordered component 0 most significant and each state's actions
//! the mixed-radix product of per-node options (idle, then one per link).
//!
//! ```toml
//! name = "one-link"
//! queue_count = 1
//! delta_max = 2
//! sink_queues = [0]
//!
//! [chain]
//! labels = ["calm", "burst"]
//! transition = [[0.9, 0.1], [0.5, 0.5]]
//!
//! [[states]]
//! [[states.actions]]
//! cost = 0
//! arrivals = [0]
//! services = [0]
//! ```
//!
//! Per action, `transfers = [[from, to, count], ...]` forwards served packets
//! to another queue in the next slot, and `exogenous = [[queue, count], ...]`
//! injects new packets; when `exogenous` is omitted it is inferred as arrivals
//! minus transfers in. An optional `y` vector per action and an `[aux]` table
//! attach an auxiliary-variable objective.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::auxctrl::{AuxError, AuxSpec, Objective};
use crate::model::{ActionRow, Exogenous, MarkovChain, ModelError, Scenario, ScenarioSpec, StateActions, Transfer};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("emit error: {0}")]
    Emit(#[from] toml::ser::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("validation failed: {0}")]
    Model(#[from] ModelError),
    #[error("aux: {0}")]
    Aux(#[from] AuxError),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    queue_count: usize,
    delta_max: f64,
    #[serde(default)]
    sink_queues: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aux: Option<AuxFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chain: Option<ChainFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    states: Vec<StateFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factored: Option<FactoredFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuxFile {
    attribute_dim: usize,
    objective: Objective,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    #[serde(default)]
    labels: Vec<String>,
    transition: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<Vec<usize>>,
    actions: Vec<ActionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    cost: f64,
    arrivals: Vec<f64>,
    services: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    transfers: Vec<(usize, usize, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exogenous: Option<Vec<(usize, u32)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactoredFile {
    components: Vec<ComponentFile>,
    #[serde(default)]
    exogenous: Vec<FactoredExogenous>,
    nodes: Vec<NodeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentFile {
    name: String,
    labels: Vec<String>,
    transition: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactoredExogenous {
    component: usize,
    state: usize,
    queue: usize,
    count: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    name: String,
    queue: usize,
    links: Vec<LinkFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    /// Destination queue; omitted when the link leaves the network.
    #[serde(default)]
    to: Option<usize>,
    cost: f64,
    /// Chain component whose state selects the rate; omitted for a fixed rate.
    #[serde(default)]
    component: Option<usize>,
    rates: Vec<u32>,
}

/// A parsed and validated scenario file.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub aux: Option<AuxSpec>,
}

const BUILTINS: &[(&str, &str)] = &[
    ("tandem", include_str!("../../../scenarios/tandem.toml")),
    ("multihop7", include_str!("../../../scenarios/multihop7.toml")),
    ("multihop7_overload", include_str!("../../../scenarios/multihop7_overload.toml")),
    ("aux_demo", include_str!("../../../scenarios/aux_demo.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a scenario file, or a shipped scenario when `path` names one.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario, FormatError> {
    let path = path.as_ref();
    if !path.exists() {
        if let Some(src) = path.to_str().and_then(builtin_source) {
            return parse_scenario(src);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

pub fn load_builtin(name: &str) -> Result<LoadedScenario, FormatError> {
    let src = builtin_source(name).ok_or_else(|| FormatError::Schema(format!("no shipped scenario named {name:?}")))?;
    parse_scenario(src)
}

/// Parses without validating the model invariants.
pub fn parse_spec(text: &str) -> Result<(ScenarioSpec, Option<AuxSpec>), FormatError> {
    let file: ScenarioFile = toml::from_str(text)?;
    let r = file.queue_count;
    let (chain, states, ys) = match (&file.factored, file.chain, file.states.is_empty()) {
        (Some(f), None, true) => expand_factored(f, r)?,
        (None, Some(chain), false) => {
            let labels = if chain.labels.is_empty() {
                (0..chain.transition.len()).map(|i| format!("s{i}")).collect()
            } else {
                chain.labels
            };
            let mut states = Vec::with_capacity(file.states.len());
            let mut ys = Vec::with_capacity(file.states.len());
            for (s, st) in file.states.into_iter().enumerate() {
                let mut actions = Vec::with_capacity(st.actions.len());
                let mut yrow = Vec::with_capacity(st.actions.len());
                for (k, a) in st.actions.into_iter().enumerate() {
                    let (row, y) = action_from_file(a, r).map_err(|e| FormatError::Schema(format!("states[{s}].actions[{k}]: {e}")))?;
                    actions.push(row);
                    yrow.push(y);
                }
                states.push(StateActions { actions, factors: st.factors });
                ys.push(yrow);
            }
            (MarkovChain::new(labels, chain.transition), states, ys)
        }
        _ => {
            return Err(FormatError::Schema(
                "give either [chain] with [[states]], or a [factored] table, but not both".into(),
            ))
        }
    };
    let spec = ScenarioSpec {
        name: file.name,
        chain,
        queue_count: r,
        delta_max: file.delta_max,
        sink_queues: file.sink_queues,
        states,
    };
    let aux = match file.aux {
        None => None,
        Some(a) => {
            let mut attributes = Vec::with_capacity(ys.len());
            for (s, row) in ys.into_iter().enumerate() {
                let mut table = Vec::with_capacity(row.len());
                for (k, y) in row.into_iter().enumerate() {
                    table.push(y.ok_or_else(|| FormatError::Schema(format!("states[{s}].actions[{k}]: missing y")))?);
                }
                attributes.push(table);
            }
            Some(AuxSpec { attribute_dim: a.attribute_dim, attributes, objective: a.objective, delta_max: spec.delta_max })
        }
    };
    Ok((spec, aux))
}

/// Parses and fully validates a scenario.
pub fn parse_scenario(text: &str) -> Result<LoadedScenario, FormatError> {
    let (spec, aux) = parse_spec(text)?;
    let scenario = Scenario::new(spec)?;
    if let Some(a) = &aux {
        a.validate(&scenario)?;
    }
    Ok(LoadedScenario { scenario, aux })
}

fn action_from_file(a: ActionFile, r: usize) -> Result<(ActionRow, Option<Vec<f64>>), String> {
    if a.arrivals.len() != r || a.services.len() != r {
        return Err(format!("arrivals and services need {r} entries"));
    }
    let transfers: Vec<Transfer> = a.transfers.iter().map(|&(from, to, count)| Transfer { from, to, count }).collect();
    let exogenous = match a.exogenous {
        Some(list) => list.into_iter().map(|(queue, count)| Exogenous { queue, count }).collect(),
        None => {
            let mut rest = a.arrivals.clone();
            for t in &transfers {
                if t.to >= r {
                    return Err(format!("transfer target {} out of range", t.to));
                }
                rest[t.to] -= t.count as f64;
            }
            let mut list = Vec::new();
            for (queue, x) in rest.into_iter().enumerate() {
                if x < 0.0 || x.fract() != 0.0 {
                    return Err(format!("queue {queue}: arrivals minus transfers in ({x}) is not a packet count"));
                }
                if x > 0.0 {
                    list.push(Exogenous { queue, count: x as u32 });
                }
            }
            list
        }
    };
    let row = ActionRow { label: a.label, cost: a.cost, arrivals: a.arrivals, services: a.services, transfers, exogenous };
    Ok((row, a.y))
}

type Expanded = (MarkovChain, Vec<StateActions>, Vec<Vec<Option<Vec<f64>>>>);

fn expand_factored(f: &FactoredFile, r: usize) -> Result<Expanded, FormatError> {
    let schema = |m: String| FormatError::Schema(format!("factored: {m}"));
    if f.components.is_empty() || f.nodes.is_empty() {
        return Err(schema("need at least one component and one node".into()));
    }
    let sizes: Vec<usize> = f.components.iter().map(|c| c.transition.len()).collect();
    let mut chain: Option<MarkovChain> = None;
    for c in &f.components {
        if c.labels.len() != c.transition.len() {
            return Err(schema(format!("component {}: one label per state", c.name)));
        }
        let part = MarkovChain::new(c.labels.clone(), c.transition.clone());
        part.check().map_err(|e| schema(format!("component {}: {e}", c.name)))?;
        chain = Some(match chain {
            None => part,
            Some(acc) => acc.product(&part),
        });
    }
    let chain = chain.unwrap();
    for e in &f.exogenous {
        if e.component >= sizes.len() || e.state >= sizes[e.component] || e.queue >= r {
            return Err(schema(format!("exogenous entry {e:?} out of range")));
        }
    }
    let mut seen = vec![false; r];
    for n in &f.nodes {
        if n.queue >= r || std::mem::replace(&mut seen[n.queue], true) {
            return Err(schema(format!("node {}: queue {} out of range or shared", n.name, n.queue)));
        }
        for l in &n.links {
            let width = match l.component {
                Some(c) if c >= sizes.len() => return Err(schema(format!("node {}: component {c} out of range", n.name))),
                Some(c) => sizes[c],
                None => 1,
            };
            if l.rates.len() != width || l.to.is_some_and(|t| t >= r) {
                return Err(schema(format!("node {}: link needs {width} rates and a valid target", n.name)));
            }
        }
    }
    let node_sizes: Vec<usize> = f.nodes.iter().map(|n| n.links.len() + 1).collect();
    let action_count: usize = node_sizes.iter().product();

    let mut states = Vec::with_capacity(chain.state_count());
    let mut ys = Vec::with_capacity(chain.state_count());
    let mut digits = vec![0usize; sizes.len()];
    for s in 0..chain.state_count() {
        let mut rem = s;
        for c in (0..sizes.len()).rev() {
            digits[c] = rem % sizes[c];
            rem /= sizes[c];
        }
        let mut exo = vec![0u32; r];
        for e in &f.exogenous {
            if digits[e.component] == e.state {
                exo[e.queue] += e.count;
            }
        }
        let mut actions = Vec::with_capacity(action_count);
        let mut choice = vec![0usize; node_sizes.len()];
        for a in 0..action_count {
            let mut rem = a;
            for n in (0..node_sizes.len()).rev() {
                choice[n] = rem % node_sizes[n];
                rem /= node_sizes[n];
            }
            let mut cost = 0.0;
            let mut services = vec![0.0; r];
            let mut arrivals: Vec<f64> = exo.iter().map(|&x| x as f64).collect();
            let mut transfers = Vec::new();
            for (node, &o) in f.nodes.iter().zip(&choice) {
                if o == 0 {
                    continue;
                }
                let link = &node.links[o - 1];
                let rate = link.rates[link.component.map_or(0, |c| digits[c])];
                cost += link.cost;
                services[node.queue] += rate as f64;
                if let Some(to) = link.to {
                    if rate > 0 {
                        transfers.push(Transfer { from: node.queue, to, count: rate });
                        arrivals[to] += rate as f64;
                    }
                }
            }
            let exogenous = exo
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(queue, &count)| Exogenous { queue, count })
                .collect();
            actions.push(ActionRow { label: None, cost, arrivals, services, transfers, exogenous });
        }
        states.push(StateActions { actions, factors: Some(node_sizes.clone()) });
        ys.push(vec![None; action_count]);
    }
    Ok((chain, states, ys))
}

/// Canonical explicit-form TOML; `parse_spec(emit_scenario(spec))` returns `spec`.
pub fn emit_scenario(spec: &ScenarioSpec, aux: Option<&AuxSpec>) -> Result<String, FormatError> {
    let states = spec
        .states
        .iter()
        .enumerate()
        .map(|(s, st)| StateFile {
            factors: st.factors.clone(),
            actions: st
                .actions
                .iter()
                .enumerate()
                .map(|(k, a)| ActionFile {
                    label: a.label.clone(),
                    cost: a.cost,
                    arrivals: a.arrivals.clone(),
                    services: a.services.clone(),
                    transfers: a.transfers.iter().map(|t| (t.from, t.to, t.count)).collect(),
                    exogenous: Some(a.exogenous.iter().map(|e| (e.queue, e.count)).collect()),
                    y: aux.map(|x| x.attributes[s][k].clone()),
                })
                .collect(),
        })
        .collect();
    let file = ScenarioFile {
        name: spec.name.clone(),
        queue_count: spec.queue_count,
        delta_max: spec.delta_max,
        sink_queues: spec.sink_queues.clone(),
        aux: aux.map(|a| AuxFile { attribute_dim: a.attribute_dim, objective: a.objective.clone() }),
        chain: Some(ChainFile { labels: spec.chain.labels.clone(), transition: spec.chain.transition.clone() }),
        states,
        factored: None,
    };
    Ok(toml::to_string(&file)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_LINK: &str = r#"
name = "one-link"
queue_count = 1
delta_max = 2
sink_queues = [0]

[chain]
labels = ["calm", "burst"]
transition = [[0.9, 0.1], [0.5, 0.5]]

[[states]]
[[states.actions]]
cost = 0
arrivals = [0]
services = [0]
[[states.actions]]
cost = 1
arrivals = [0]
services = [2]

[[states]]
[[states.actions]]
cost = 0
arrivals = [1]
services = [0]
[[states.actions]]
cost = 1
arrivals = [1]
services = [2]
"#;

    #[test]
    fn parses_explicit_form_and_infers_exogenous() {
        let loaded = parse_scenario(ONE_LINK).unwrap();
        let spec = loaded.scenario.spec();
        assert_eq!(spec.states[1].actions[0].exogenous, vec![Exogenous { queue: 0, count: 1 }]);
        assert!(spec.states[0].actions[0].exogenous.is_empty());
        assert!(loaded.aux.is_none());
    }

    #[test]
    fn emit_round_trips() {
        let (spec, _) = parse_spec(ONE_LINK).unwrap();
        let text = emit_scenario(&spec, None).unwrap();
        assert_eq!(parse_spec(&text).unwrap().0, spec);
    }

    #[test]
    fn negative_arrival_is_rejected() {
        let bad = ONE_LINK.replacen("arrivals = [1]", "arrivals = [-1]", 1);
        assert!(parse_scenario(&bad).is_err());
    }

    #[test]
    fn unknown_field_reports_location() {
        let bad = ONE_LINK.replacen("cost = 1", "cots = 1", 1);
        let msg = parse_scenario(&bad).unwrap_err().to_string();
        assert!(msg.contains("cots"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn factored_expansion() {
        let text = r#"
name = "chain2"
queue_count = 2
delta_max = 3
sink_queues = [1]

[factored]
[[factored.components]]
name = "arrivals"
labels = ["off", "on"]
transition = [[0.5, 0.5], [0.5, 0.5]]
[[factored.components]]
name = "link"
labels = ["low", "high"]
transition = [[0.7, 0.3], [0.3, 0.7]]

[[factored.exogenous]]
component = 0
state = 1
queue = 0
count = 1

[[factored.nodes]]
name = "a"
queue = 0
[[factored.nodes.links]]
to = 1
cost = 1
component = 1
rates = [1, 3]

[[factored.nodes]]
name = "b"
queue = 1
[[factored.nodes.links]]
cost = 1
rates = [2]
"#;
        let loaded = parse_scenario(text).unwrap();
        let scn = &loaded.scenario;
        assert_eq!(scn.state_count(), 4);
        assert_eq!(scn.spec().chain.labels[3], "on,high");
        assert_eq!(scn.action_count(0), 4);
        assert!(scn.factors().is_some());
        // state (on, high), both nodes transmit: a forwards 3 to b, b exits 2
        let row = scn.row(3, 3);
        assert_eq!(row.arrivals, vec![1.0, 3.0]);
        assert_eq!(row.services, vec![3.0, 2.0]);
        assert_eq!(row.cost, 2.0);
        // round trip through the explicit form
        let text = emit_scenario(scn.spec(), None).unwrap();
        assert_eq!(&parse_spec(&text).unwrap().0, scn.spec());
    }
}
