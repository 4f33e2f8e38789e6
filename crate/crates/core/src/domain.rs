//! The JSON domain file: one document holding the state space, named
//! conditions, effects, actions, worlds, plans, hierarchies and utilities.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::abstraction::{Derived, GroupPairing, Hierarchy, HierarchyNode};
use crate::action::{Action, ActionKind, Branch};
use crate::cma::{Cma, Node, UtilityFn};
use crate::error::{Error, Result};
use crate::mass::ProbInterval;
use crate::report::ValidationReport;
use crate::state::{
    compile_effect, Attribute, ConditionExpr, Effect, EffectRule, StateSet, StateSpace,
};

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct DomainFile {
    #[serde(default = "one")]
    pub schema_version: u32,
    pub space: SpaceDecl,
    #[serde(default)]
    pub conditions: BTreeMap<String, String>,
    #[serde(default)]
    pub effects: BTreeMap<String, EffectDecl>,
    #[serde(default)]
    pub actions: BTreeMap<String, ActionDecl>,
    #[serde(default)]
    pub worlds: BTreeMap<String, WorldNode>,
    #[serde(default)]
    pub plans: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub hierarchies: BTreeMap<String, HierarchyDecl>,
    #[serde(default)]
    pub utilities: BTreeMap<String, UtilityDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDecl {
    pub attributes: Vec<AttributeDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeDecl {
    Range { name: String, min: i64, max: i64 },
    Values { name: String, values: Vec<i64> },
}

/// A probability written as a number or as a string: decimal or `p/q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Float(f64),
    Text(String),
}

impl Num {
    pub fn value(&self) -> Result<f64> {
        match self {
            Num::Float(x) => Ok(*x),
            Num::Text(s) => {
                let bad = || Error::Domain(format!("`{s}` is not a number or a fraction p/q"));
                match s.split_once('/') {
                    Some((p, q)) => {
                        let p: f64 = p.trim().parse().map_err(|_| bad())?;
                        let q: f64 = q.trim().parse().map_err(|_| bad())?;
                        if q == 0.0 {
                            return Err(bad());
                        }
                        Ok(p / q)
                    }
                    None => s.trim().parse().map_err(|_| bad()),
                }
            }
        }
    }
}

fn interval_of(pair: &[Num; 2]) -> Result<ProbInterval> {
    ProbInterval::new(pair[0].value()?, pair[1].value()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EffectDecl {
    Rules {
        rules: Vec<RuleDecl>,
    },
    /// Per state index, the list of successor state indices.
    Table {
        table: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDecl {
    pub attr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<[i64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDecl {
    #[serde(default = "concrete")]
    pub kind: ActionKind,
    pub branches: Vec<BranchDecl>,
}

fn concrete() -> ActionKind {
    ActionKind::Concrete
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDecl {
    /// A condition name or an inline condition expression.
    pub condition: String,
    pub interval: [Num; 2],
    pub effect: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldNode {
    /// A leaf given by a condition name or expression.
    Condition {
        condition: String,
    },
    /// A leaf given by state indices.
    States {
        states: Vec<usize>,
    },
    Internal {
        children: Vec<WorldEdge>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldEdge {
    pub interval: [Num; 2],
    pub node: WorldNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyDecl {
    pub root: String,
    pub nodes: BTreeMap<String, NodeDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeDecl {
    Inter {
        inter: Vec<String>,
        /// One group pairing per fold step.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pairing: Option<Vec<GroupPairing>>,
    },
    Seq {
        seq: Vec<String>,
    },
    Intra {
        intra: String,
        merge: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UtilityDecl {
    Table {
        table: Vec<f64>,
    },
    Linear {
        linear: BTreeMap<String, f64>,
        #[serde(default)]
        constant: f64,
    },
}

/// A compiled domain file.
#[derive(Debug, Clone)]
pub struct Domain {
    pub file: DomainFile,
    pub space: StateSpace,
    pub conditions: BTreeMap<String, StateSet>,
    pub effects: BTreeMap<String, Arc<Effect>>,
    pub actions: BTreeMap<String, Arc<Action>>,
    pub worlds: BTreeMap<String, Cma>,
    pub plans: BTreeMap<String, Vec<String>>,
    pub hierarchies: BTreeMap<String, Hierarchy>,
    pub utilities: BTreeMap<String, UtilityFn>,
    /// Non-fatal remarks from compilation, such as saturated effect rules.
    pub warnings: Vec<String>,
}

impl Domain {
    /// Parses and compiles a domain document. JSON syntax errors carry line
    /// and column.
    pub fn parse(text: &str) -> Result<Self> {
        let file: DomainFile = serde_json::from_str(text)
            .map_err(|e| Error::Domain(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        Self::compile(file)
    }

    pub fn compile(file: DomainFile) -> Result<Self> {
        if file.schema_version != 1 {
            return Err(Error::Domain(format!(
                "unsupported schemaVersion {}",
                file.schema_version
            )));
        }
        let attributes = file
            .space
            .attributes
            .iter()
            .map(|a| match a {
                AttributeDecl::Range { name, min, max } => {
                    Attribute::range(name.clone(), *min, *max)
                }
                AttributeDecl::Values { name, values } => {
                    Attribute::new(name.clone(), values.clone())
                }
            })
            .collect();
        let space = StateSpace::new(attributes)?;
        let n = space.size();
        let mut warnings = Vec::new();

        let mut conditions = BTreeMap::new();
        for (name, text) in &file.conditions {
            let set = ConditionExpr::parse(text)
                .and_then(|e| e.compile(&space))
                .map_err(|e| Error::Domain(format!("condition `{name}`: {e}")))?;
            conditions.insert(name.clone(), set);
        }
        let resolve_condition = |text: &str, at: &str| -> Result<StateSet> {
            if let Some(s) = conditions.get(text) {
                return Ok(s.clone());
            }
            ConditionExpr::parse(text)
                .and_then(|e| e.compile(&space))
                .map_err(|e| {
                    Error::Domain(format!(
                        "{at}: `{text}` is neither a named condition nor a valid expression ({e})"
                    ))
                })
        };

        let mut effects = BTreeMap::new();
        for (name, decl) in &file.effects {
            let effect = match decl {
                EffectDecl::Rules { rules } => {
                    let mut compiled = Vec::with_capacity(rules.len());
                    for r in rules {
                        compiled.push(match (r.add, r.set) {
                            (Some([lo, hi]), None) => EffectRule::add(r.attr.clone(), lo, hi),
                            (None, Some([lo, hi])) => EffectRule::set(r.attr.clone(), lo, hi),
                            _ => {
                                return Err(Error::Domain(format!(
                                    "effect `{name}`: rule on `{}` needs exactly one of add or set",
                                    r.attr
                                )))
                            }
                        });
                    }
                    let c = compile_effect(&compiled, &space)
                        .map_err(|e| Error::Domain(format!("effect `{name}`: {e}")))?;
                    warnings.extend(
                        c.warnings
                            .into_iter()
                            .map(|w| format!("effect `{name}`: {w}")),
                    );
                    c.effect
                }
                EffectDecl::Table { table } => Effect::from_images(n, table.clone())
                    .map_err(|e| Error::Domain(format!("effect `{name}`: {e}")))?,
            };
            effects.insert(name.clone(), Arc::new(effect));
        }

        let mut actions = BTreeMap::new();
        for (name, decl) in &file.actions {
            let mut branches = Vec::with_capacity(decl.branches.len());
            for (i, b) in decl.branches.iter().enumerate() {
                let at = format!("action `{name}` branch {i}");
                let condition = resolve_condition(&b.condition, &at)?;
                let interval =
                    interval_of(&b.interval).map_err(|e| Error::Domain(format!("{at}: {e}")))?;
                let effect = effects
                    .get(&b.effect)
                    .ok_or_else(|| Error::Domain(format!("{at}: unknown effect `{}`", b.effect)))?
                    .clone();
                branches.push(Branch::new(condition, interval, effect).labeled(b.effect.clone()));
            }
            let action = Action::new(name.clone(), decl.kind, branches)
                .map_err(|e| Error::Domain(e.to_string()))?;
            actions.insert(name.clone(), Arc::new(action));
        }

        let mut worlds = BTreeMap::new();
        for (name, node) in &file.worlds {
            let root = compile_world(node, n, &|t: &str| {
                resolve_condition(t, &format!("world `{name}`"))
            })?;
            worlds.insert(name.clone(), Cma::new(n, root));
        }

        let mut hierarchies = BTreeMap::new();
        let mut node_owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (hname, decl) in &file.hierarchies {
            let mut nodes = BTreeMap::new();
            for (node, d) in &decl.nodes {
                if actions.contains_key(node) {
                    return Err(Error::Domain(format!(
                        "hierarchy `{hname}`: node `{node}` shadows an action"
                    )));
                }
                if let Some(other) = node_owner.insert(node, hname) {
                    return Err(Error::Domain(format!(
                        "node `{node}` is defined in hierarchies `{other}` and `{hname}`"
                    )));
                }
                nodes.insert(
                    node.clone(),
                    match d {
                        NodeDecl::Inter { inter, pairing } => HierarchyNode::Inter {
                            children: inter.clone(),
                            pairing: pairing.clone(),
                        },
                        NodeDecl::Seq { seq } => HierarchyNode::Seq(seq.clone()),
                        NodeDecl::Intra { intra, merge } => HierarchyNode::Intra {
                            child: intra.clone(),
                            merge: merge.clone(),
                        },
                    },
                );
            }
            if !nodes.contains_key(&decl.root) {
                return Err(Error::Domain(format!(
                    "hierarchy `{hname}`: root `{}` is not one of its nodes",
                    decl.root
                )));
            }
            hierarchies.insert(
                hname.clone(),
                Hierarchy {
                    root: decl.root.clone(),
                    nodes,
                },
            );
        }

        for (pname, steps) in &file.plans {
            if steps.is_empty() {
                return Err(Error::Domain(format!("plan `{pname}` is empty")));
            }
            for s in steps {
                if !actions.contains_key(s) && !node_owner.contains_key(s.as_str()) {
                    return Err(Error::Domain(format!(
                        "plan `{pname}`: unknown action or hierarchy node `{s}`"
                    )));
                }
            }
        }

        let mut utilities = BTreeMap::new();
        for (name, decl) in &file.utilities {
            let values = match decl {
                UtilityDecl::Table { table } => {
                    if table.len() != n {
                        return Err(Error::Domain(format!(
                            "utility `{name}` has {} values for {n} states",
                            table.len()
                        )));
                    }
                    table.clone()
                }
                UtilityDecl::Linear { linear, constant } => {
                    let mut coef = Vec::new();
                    for (attr, c) in linear {
                        coef.push((
                            space
                                .attribute_position(attr)
                                .map_err(|e| Error::Domain(format!("utility `{name}`: {e}")))?,
                            *c,
                        ));
                    }
                    (0..n)
                        .map(|b| {
                            constant
                                + coef
                                    .iter()
                                    .map(|&(p, c)| c * space.value_unchecked(b, p) as f64)
                                    .sum::<f64>()
                        })
                        .collect()
                }
            };
            utilities.insert(
                name.clone(),
                UtilityFn::new(values)
                    .map_err(|e| Error::Domain(format!("utility `{name}`: {e}")))?,
            );
        }

        Ok(Self {
            plans: file.plans.clone(),
            file,
            space,
            conditions,
            effects,
            actions,
            worlds,
            hierarchies,
            utilities,
            warnings,
        })
    }

    /// Serializes the source document; parsing the result yields an equal
    /// domain.
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_canonical(&self.file)
    }

    pub fn world(&self, name: &str) -> Result<&Cma> {
        self.worlds
            .get(name)
            .ok_or_else(|| Error::Domain(format!("unknown world `{name}`")))
    }

    pub fn utility(&self, name: &str) -> Result<&UtilityFn> {
        self.utilities
            .get(name)
            .ok_or_else(|| Error::Domain(format!("unknown utility `{name}`")))
    }

    pub fn hierarchy(&self, name: &str) -> Result<&Hierarchy> {
        self.hierarchies
            .get(name)
            .ok_or_else(|| Error::Domain(format!("unknown hierarchy `{name}`")))
    }

    /// Every node of a hierarchy, derived.
    pub fn derive_hierarchy(&self, name: &str) -> Result<BTreeMap<String, Arc<Derived>>> {
        self.hierarchy(name)?.build_all(&self.actions)
    }

    fn hierarchy_of_node(&self, node: &str) -> Option<&Hierarchy> {
        self.hierarchies
            .values()
            .find(|h| h.nodes.contains_key(node))
    }

    /// An action name or a hierarchy node name, as a derived action.
    pub fn resolve_step(&self, name: &str) -> Result<Arc<Derived>> {
        if let Some(a) = self.actions.get(name) {
            return Ok(Arc::new(Derived::Base(a.clone())));
        }
        let h = self
            .hierarchy_of_node(name)
            .ok_or_else(|| Error::Domain(format!("unknown action or hierarchy node `{name}`")))?;
        let built = h.build_all(&self.actions)?;
        Ok(built[name].clone())
    }

    pub fn resolve_plan(&self, name: &str) -> Result<Vec<Arc<Derived>>> {
        let steps = self
            .plans
            .get(name)
            .ok_or_else(|| Error::Domain(format!("unknown plan `{name}`")))?;
        steps.iter().map(|s| self.resolve_step(s)).collect()
    }

    /// Every validation finding in the domain: actions, worlds, and the
    /// actions derived by each hierarchy.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for w in &self.warnings {
            report.warning("effects", w.clone());
        }
        for a in self.actions.values() {
            report.extend(a.validate());
        }
        for (name, w) in &self.worlds {
            report.extend(w.validate().prefixed(&format!("world {name}")));
        }
        for (name, h) in &self.hierarchies {
            match h.build_all(&self.actions) {
                Ok(nodes) => {
                    for (node, d) in nodes {
                        if h.nodes.contains_key(&node) {
                            report.extend(
                                d.action().validate().prefixed(&format!("hierarchy {name}")),
                            );
                        }
                    }
                }
                Err(e) => report.error(format!("hierarchy {name}"), e.to_string()),
            }
        }
        report
    }
}

fn compile_world(
    node: &WorldNode,
    n: usize,
    condition: &dyn Fn(&str) -> Result<StateSet>,
) -> Result<Node> {
    Ok(match node {
        WorldNode::Condition { condition: c } => Node::Leaf(condition(c)?),
        WorldNode::States { states } => {
            Node::Leaf(StateSet::from_indices(n, states.iter().copied())?)
        }
        WorldNode::Internal { children } => Node::Internal(
            children
                .iter()
                .map(|e| {
                    Ok(crate::cma::Edge::new(
                        interval_of(&e.interval)?,
                        compile_world(&e.node, n, condition)?,
                    ))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

/// A tree as JSON in the world schema, leaves as state lists with a
/// readable description alongside.
pub fn cma_to_json(m: &Cma, space: &StateSpace) -> Value {
    fn node(n: &Node, space: &StateSpace) -> Value {
        match n {
            Node::Leaf(s) => json!({ "states": s.to_vec(), "description": space.describe(s) }),
            Node::Internal(es) => json!({
                "children": es
                    .iter()
                    .map(|e| json!({ "interval": [e.interval.lo, e.interval.hi], "node": node(&e.node, space) }))
                    .collect::<Vec<_>>()
            }),
        }
    }
    node(m.root(), space)
}

/// Reads a tree in the world schema, accepting only state-list leaves (as
/// written by [`cma_to_json`]; descriptions are ignored).
pub fn cma_from_json(v: &Value, universe: usize) -> Result<Cma> {
    fn node(v: &Value, n: usize) -> Result<Node> {
        let bad = || Error::Domain("malformed tree node".into());
        if let Some(states) = v.get("states") {
            let ids: Vec<usize> = serde_json::from_value(states.clone()).map_err(|_| bad())?;
            return Ok(Node::Leaf(StateSet::from_indices(n, ids)?));
        }
        let children = v
            .get("children")
            .and_then(Value::as_array)
            .ok_or_else(bad)?;
        let mut edges = Vec::with_capacity(children.len());
        for c in children {
            let [lo, hi]: [f64; 2] =
                serde_json::from_value(c.get("interval").cloned().ok_or_else(bad)?)
                    .map_err(|_| bad())?;
            edges.push(crate::cma::Edge::new(
                ProbInterval::new(lo, hi)?,
                node(c.get("node").ok_or_else(bad)?, n)?,
            ));
        }
        Ok(Node::Internal(edges))
    }
    Ok(Cma::new(universe, node(v, universe)?))
}

pub fn action_to_json(a: &Action, space: &StateSpace) -> Value {
    json!({
        "name": a.name(),
        "kind": a.kind(),
        "branches": a.branches().iter().map(|b| json!({
            "condition": space.describe(&b.condition),
            "conditionStates": b.condition.to_vec(),
            "interval": [b.interval.lo, b.interval.hi],
            "label": b.label,
            "effect": b.effect.to_table(),
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "space": {"attributes": [{"name": "x", "min": 0, "max": 3}]},
        "conditions": {"low": "x <= 1"},
        "effects": {
            "up": {"rules": [{"attr": "x", "add": [1, 2]}]},
            "stay": {"table": [[0], [1], [2], [3]]}
        },
        "actions": {
            "step": {"branches": [
                {"condition": "low", "interval": ["1/3", 0.5], "effect": "up"},
                {"condition": "low", "interval": [0.5, "2/3"], "effect": "stay"},
                {"condition": "x >= 2", "interval": [1, 1], "effect": "stay"}
            ]}
        },
        "worlds": {"w": {"children": [
            {"interval": [0.5, 0.5], "node": {"condition": "low"}},
            {"interval": [0.5, 0.5], "node": {"states": [3]}}
        ]}},
        "plans": {"p": ["step", "step"], "q": ["S"]},
        "hierarchies": {"h": {"root": "S", "nodes": {"S": {"seq": ["step", "step"]}}}},
        "utilities": {"u": {"linear": {"x": 2.0}, "constant": 1.0}, "t": {"table": [0, 1, 2, 3]}}
    }"#;

    #[test]
    fn compiles_every_section() {
        let d = Domain::parse(SMALL).unwrap();
        assert_eq!(d.space.size(), 4);
        let step = &d.actions["step"];
        assert_eq!(step.groups().len(), 2);
        assert!((step.branches()[0].interval.lo - 1.0 / 3.0).abs() < 1e-15);
        assert!(d.validate().is_ok(), "{}", d.validate());
        assert!(
            d.warnings.iter().any(|w| w.contains("up")),
            "{:?}",
            d.warnings
        );
        assert_eq!(d.utilities["u"].values(), &[1.0, 3.0, 5.0, 7.0]);
        assert_eq!(d.resolve_plan("q").unwrap()[0].action().branches().len(), 6);
        assert!(d.world("w").unwrap().validate().is_ok());
    }

    #[test]
    fn round_trip() {
        let d = Domain::parse(SMALL).unwrap();
        let again = Domain::parse(&d.to_json().unwrap()).unwrap();
        assert_eq!(d.file, again.file);
        assert_eq!(d.actions, again.actions);
        assert_eq!(d.worlds, again.worlds);
        assert_eq!(d.hierarchies, again.hierarchies);
        assert_eq!(d.utilities, again.utilities);
        assert_eq!(d.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn resolution_errors() {
        let dangling = SMALL.replace("\"effect\": \"stay\"}\n", "\"effect\": \"nowhere\"}\n");
        let e = Domain::parse(&dangling).unwrap_err().to_string();
        assert!(e.contains("unknown effect `nowhere`"), "{e}");
        let syntax = Domain::parse("{\"space\": ").unwrap_err().to_string();
        assert!(syntax.contains("line 1"), "{syntax}");
        let plan = SMALL.replace("[\"S\"]", "[\"T\"]");
        assert!(Domain::parse(&plan).is_err());
        let cond = SMALL.replace("\"x >= 2\"", "\"y >= 2\"");
        assert!(Domain::parse(&cond)
            .unwrap_err()
            .to_string()
            .contains("neither"));
    }

    #[test]
    fn tree_json_round_trip() {
        let d = Domain::parse(SMALL).unwrap();
        let w = d.world("w").unwrap();
        let v = cma_to_json(w, &d.space);
        assert_eq!(&cma_from_json(&v, 4).unwrap(), w);
    }
}
