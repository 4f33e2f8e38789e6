//! Projection of CMAs through actions and plans.
//!
//! Every leaf B of the input tree grows one child per condition of the
//! action that B meets, and under each condition one grandchild per triple
//! leading to E(B ∩ c). The input tree stays a prefix of the output.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::action::Action;
use crate::cma::{Cma, Edge, Node};
use crate::error::{Error, Result};
use crate::mass::{Pd, ProbInterval, DEFAULT_TOL};
use crate::sampling::group_feasible;
use crate::state::StateSet;

/// Bound on the probability that a leaf's mass falls under a condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LooseProb {
    Zero,
    One,
    Unit,
}

impl LooseProb {
    pub fn interval(self) -> ProbInterval {
        match self {
            LooseProb::Zero => ProbInterval::ZERO,
            LooseProb::One => ProbInterval::ONE,
            LooseProb::Unit => ProbInterval::UNIT,
        }
    }
}

pub fn loose_cond_prob(a: &Action, c: &StateSet, b: &StateSet) -> Result<LooseProb> {
    if !a.groups().iter().any(|g| &g.condition == c) {
        return Err(Error::NotAConditionOf);
    }
    if !b.intersects(c) {
        return Ok(LooseProb::Zero);
    }
    let others = a
        .groups()
        .iter()
        .filter(|g| &g.condition != c && g.condition.intersects(b))
        .count();
    Ok(if others == 0 {
        LooseProb::One
    } else {
        LooseProb::Unit
    })
}

/// Deliberate projector faults, used only to show that the soundness oracle
/// notices them.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    None,
    /// Every effect interval [lo, hi] becomes [lo, lo].
    CollapseEffectIntervals,
    /// Every condition branch gets [1, 1], even when several conditions meet
    /// the leaf.
    ForceOneCondition,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepStats {
    pub action: String,
    pub leaves_in: usize,
    /// Effect-level nodes added (one per surviving triple per leaf).
    pub nodes_added: usize,
    pub condition_nodes_added: usize,
    /// Condition branches not materialized because P_L was zero.
    pub pruned: usize,
    /// How many leaves met t conditions, keyed by t.
    pub t_histogram: BTreeMap<usize, usize>,
    /// Sibling effect leaves with a set equal to an earlier sibling's.
    pub potential_merges: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectionStats {
    /// Nodes with condition-level nodes collapsed into their effect children,
    /// so that each projected leaf grows t·k children.
    pub node_count: usize,
    /// Every node of the tree, condition level included.
    pub tree_node_count: usize,
    pub steps: Vec<StepStats>,
}

pub fn project_action(a: &Action, m: &Cma) -> Result<(Cma, ProjectionStats)> {
    project_plan(std::slice::from_ref(a), m)
}

pub fn project_plan(plan: &[Action], m: &Cma) -> Result<(Cma, ProjectionStats)> {
    project_plan_mutated(plan, m, Mutation::None)
}

#[doc(hidden)]
pub fn project_plan_mutated(
    plan: &[Action],
    m: &Cma,
    mutation: Mutation,
) -> Result<(Cma, ProjectionStats)> {
    if plan.is_empty() {
        return Err(Error::InvalidPlan("empty plan".into()));
    }
    let report = m.validate();
    if let Some(i) = report.errors().next() {
        return Err(Error::InvalidCma(format!("{}: {}", i.path, i.message)));
    }
    let universe = m.universe();
    let mut stats = ProjectionStats {
        node_count: m.node_count(),
        tree_node_count: m.node_count(),
        steps: Vec::new(),
    };
    let mut root = m.clone().into_root();
    for a in plan {
        if a.universe() != universe {
            return Err(Error::SpaceMismatch {
                expected: universe,
                found: a.universe(),
            });
        }
        let mut step = StepStats {
            action: a.name().to_string(),
            ..StepStats::default()
        };
        grow(&mut root, a, mutation, &mut step)?;
        stats.node_count += step.nodes_added;
        stats.tree_node_count += step.nodes_added + step.condition_nodes_added;
        stats.steps.push(step);
    }
    Ok((Cma::new(universe, root), stats))
}

fn grow(node: &mut Node, a: &Action, mutation: Mutation, step: &mut StepStats) -> Result<()> {
    match node {
        Node::Internal(es) => {
            for e in es {
                grow(&mut e.node, a, mutation, step)?;
            }
            Ok(())
        }
        Node::Leaf(b) => {
            step.leaves_in += 1;
            let meeting: Vec<usize> = (0..a.groups().len())
                .filter(|&g| a.groups()[g].condition.intersects(b))
                .collect();
            step.pruned += a.groups().len() - meeting.len();
            *step.t_histogram.entry(meeting.len()).or_default() += 1;
            let cond_interval = if meeting.len() == 1 || mutation == Mutation::ForceOneCondition {
                ProbInterval::ONE
            } else {
                ProbInterval::UNIT
            };
            let mut children = Vec::with_capacity(meeting.len());
            for &g in &meeting {
                let group = &a.groups()[g];
                let inside = b.intersection(&group.condition);
                let mut effects: Vec<Edge> = Vec::with_capacity(group.members.len());
                for &i in &group.members {
                    let br = &a.branches()[i];
                    let interval = match mutation {
                        Mutation::CollapseEffectIntervals => ProbInterval {
                            lo: br.interval.lo,
                            hi: br.interval.lo,
                        },
                        _ => br.interval,
                    };
                    let leaf = br.effect.apply(&inside);
                    if effects.iter().any(|e| e.node == Node::Leaf(leaf.clone())) {
                        step.potential_merges += 1;
                    }
                    effects.push(Edge::new(interval, Node::Leaf(leaf)));
                }
                if mutation == Mutation::None {
                    let intervals: Vec<ProbInterval> = effects.iter().map(|e| e.interval).collect();
                    if !group_feasible(&intervals, DEFAULT_TOL) {
                        return Err(Error::InvalidAction {
                            action: a.name().to_string(),
                            message: format!("condition {g}: intervals admit no distribution"),
                        });
                    }
                }
                step.nodes_added += effects.len();
                step.condition_nodes_added += 1;
                children.push(Edge::new(cond_interval, Node::Internal(effects)));
            }
            *node = Node::Internal(children);
            Ok(())
        }
    }
}

/// ((tk)^(n+1) − 1) / (tk − 1), or n + 1 when tk = 1. `None` on overflow or
/// when an argument is zero.
pub fn predicted_node_count(t: u64, k: u64, n: u32) -> Option<u128> {
    let tk = u128::from(t).checked_mul(u128::from(k))?;
    if tk == 0 {
        return None;
    }
    if tk == 1 {
        return Some(u128::from(n) + 1);
    }
    Some((tk.checked_pow(n.checked_add(1)?)? - 1) / (tk - 1))
}

/// State marginal of a tree whose intervals are all points and whose leaves
/// are singletons: path products summed per state.
pub fn point_marginal(m: &Cma) -> Result<Pd> {
    fn walk(node: &Node, acc: f64, out: &mut [f64]) -> Result<()> {
        match node {
            Node::Leaf(s) => {
                if s.count() != 1 {
                    return Err(Error::NotSpd(format!("leaf with {} states", s.count())));
                }
                out[s.first().expect("one state")] += acc;
                Ok(())
            }
            Node::Internal(es) => {
                for e in es {
                    if !e.interval.is_point() {
                        return Err(Error::NotSpd(format!(
                            "interval [{}, {}]",
                            e.interval.lo, e.interval.hi
                        )));
                    }
                    walk(&e.node, acc * e.interval.lo, out)?;
                }
                Ok(())
            }
        }
    }
    let mut probs = vec![0.0; m.universe()];
    walk(m.root(), 1.0, &mut probs)?;
    Pd::new(probs)
}
