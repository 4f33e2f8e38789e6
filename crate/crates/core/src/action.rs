//! Concrete and abstract actions as lists of ⟨condition, interval, effect⟩
//! triples.
//!
//! Triples that share a condition set form a *group*. Executing an action at
//! a state picks one of the groups whose condition holds there (exactly one
//! for concrete actions), draws one number per triple of that group inside
//! the triple's interval with the numbers summing to one, and sends that share
//! of the state's mass into the triple's effect image.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cma::Cma;
use crate::error::{Error, Result};
use crate::mass::{ProbInterval, DEFAULT_TOL};
use crate::report::ValidationReport;
use crate::sampling::group_feasible;
use crate::state::{Effect, StateSet, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Concrete,
    Abstract,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub condition: StateSet,
    pub interval: ProbInterval,
    pub effect: Arc<Effect>,
    /// Display name, e.g. the effect's name in a domain file.
    pub label: Option<String>,
}

impl Branch {
    pub fn new(condition: StateSet, interval: ProbInterval, effect: Arc<Effect>) -> Self {
        Self {
            condition,
            interval,
            effect,
            label: None,
        }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn is_padding(&self) -> bool {
        self.condition.is_empty()
    }
}

/// Branches sharing one condition set, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub condition: StateSet,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    name: String,
    kind: ActionKind,
    universe: usize,
    branches: Vec<Branch>,
    groups: Vec<Group>,
    group_of: Vec<usize>,
    derived: bool,
}

impl Action {
    pub fn new(name: impl Into<String>, kind: ActionKind, branches: Vec<Branch>) -> Result<Self> {
        let name = name.into();
        let Some(first) = branches.first() else {
            return Err(Error::InvalidAction {
                action: name,
                message: "no branches".into(),
            });
        };
        let universe = first.condition.universe();
        for (i, b) in branches.iter().enumerate() {
            if b.condition.universe() != universe || b.effect.universe() != universe {
                return Err(Error::InvalidAction {
                    action: name,
                    message: format!("branch {i} is over a different state space"),
                });
            }
        }
        let mut groups: Vec<Group> = Vec::new();
        let mut group_of = Vec::with_capacity(branches.len());
        for (i, b) in branches.iter().enumerate() {
            match groups.iter().position(|g| g.condition == b.condition) {
                Some(g) => {
                    groups[g].members.push(i);
                    group_of.push(g);
                }
                None => {
                    group_of.push(groups.len());
                    groups.push(Group {
                        condition: b.condition.clone(),
                        members: vec![i],
                    });
                }
            }
        }
        Ok(Self {
            name,
            kind,
            universe,
            branches,
            groups,
            group_of,
            derived: false,
        })
    }

    pub fn concrete(name: impl Into<String>, branches: Vec<Branch>) -> Result<Self> {
        Self::new(name, ActionKind::Concrete, branches)
    }

    /// The one-branch action ⟨Ω, [1,1], identity⟩.
    pub fn identity(name: impl Into<String>, universe: usize) -> Self {
        let b = Branch::new(
            StateSet::full(universe),
            ProbInterval::ONE,
            Arc::new(Effect::identity(universe)),
        );
        Self::concrete(name, vec![b]).expect("identity action is well formed")
    }

    pub(crate) fn derived(name: impl Into<String>, branches: Vec<Branch>) -> Result<Self> {
        let mut a = Self::new(name, ActionKind::Abstract, branches)?;
        a.derived = true;
        Ok(a)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn is_concrete(&self) -> bool {
        self.kind == ActionKind::Concrete
    }

    /// True when the action was produced by an abstraction operator.
    pub fn is_derived(&self) -> bool {
        self.derived
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_of_branch(&self, branch: usize) -> usize {
        self.group_of[branch]
    }

    /// Groups whose condition holds at `state`.
    pub fn groups_at(&self, state: usize) -> impl Iterator<Item = usize> + '_ {
        self.groups
            .iter()
            .enumerate()
            .filter(move |(_, g)| g.condition.contains(state))
            .map(|(i, _)| i)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_action(self)
    }

    /// The IMA M_ib: one branch per triple of the condition holding at `b`,
    /// each leading to the image of `{b}`.
    pub fn instantiate_ima(&self, b: usize) -> Result<Cma> {
        if !self.is_concrete() {
            return Err(Error::InvalidAction {
                action: self.name.clone(),
                message: "cannot instantiate an abstract action".into(),
            });
        }
        if b >= self.universe {
            return Err(Error::IndexOutOfRange {
                index: b,
                size: self.universe,
            });
        }
        let g = self
            .groups_at(b)
            .find(|&g| !self.groups[g].condition.is_empty())
            .ok_or_else(|| Error::InvalidAction {
                action: self.name.clone(),
                message: format!("state {b} satisfies no condition"),
            })?;
        let leaves = self.groups[g]
            .members
            .iter()
            .map(|&i| {
                (
                    self.branches[i].interval,
                    self.branches[i].effect.image_set(b),
                )
            })
            .collect();
        Ok(Cma::ima(self.universe, leaves))
    }

    /// Human-readable listing of the triples.
    pub fn describe(&self, space: &StateSpace) -> String {
        let mut out = format!("{} ({:?})\n", self.name, self.kind);
        for (gi, g) in self.groups.iter().enumerate() {
            out.push_str(&format!("  group {gi}: {}\n", space.describe(&g.condition)));
            for &i in &g.members {
                let b = &self.branches[i];
                let label = b.label.as_deref().unwrap_or("-");
                out.push_str(&format!(
                    "    [{}, {}] {label}\n",
                    b.interval.lo, b.interval.hi
                ));
            }
        }
        out
    }
}

const LISTED_STATES: usize = 8;

fn list_states(set: &StateSet) -> String {
    let v = set.to_vec();
    let shown: Vec<String> = v
        .iter()
        .take(LISTED_STATES)
        .map(|s| s.to_string())
        .collect();
    if v.len() > LISTED_STATES {
        format!("{{{}, … ({} states)}}", shown.join(", "), v.len())
    } else {
        format!("{{{}}}", shown.join(", "))
    }
}

pub fn validate_action(a: &Action) -> ValidationReport {
    let mut report = ValidationReport::default();
    let path = format!("action {}", a.name);
    for (i, b) in a.branches.iter().enumerate() {
        if b.is_padding() && b.interval.hi > 0.0 {
            report.error(
                format!("{path}/branch {i}"),
                "empty condition requires interval [0, 0]",
            );
        }
        if a.is_concrete() && b.is_padding() {
            report.error(
                format!("{path}/branch {i}"),
                "concrete actions cannot have padding branches",
            );
        }
    }
    let mut covered = StateSet::empty(a.universe);
    for g in &a.groups {
        covered.union_with(&g.condition);
    }
    if !covered.is_full() {
        let gap = covered.complement();
        let msg = format!(
            "conditions are not exhaustive, uncovered states {}",
            list_states(&gap)
        );
        if a.is_concrete() || !a.derived {
            report.error(&path, msg);
        } else {
            report.warning(&path, msg);
        }
    }
    let real: Vec<(usize, &Group)> = a
        .groups
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.condition.is_empty())
        .collect();
    if a.is_concrete() {
        for (x, (i, gi)) in real.iter().enumerate() {
            for (j, gj) in real.iter().skip(x + 1) {
                let both = gi.condition.intersection(&gj.condition);
                if !both.is_empty() {
                    report.error(
                        &path,
                        format!(
                            "conditions {i} and {j} overlap on states {}",
                            list_states(&both)
                        ),
                    );
                }
            }
        }
    }
    for (gi, g) in &real {
        let intervals: Vec<ProbInterval> =
            g.members.iter().map(|&i| a.branches[i].interval).collect();
        if !group_feasible(&intervals, DEFAULT_TOL) {
            let lo: f64 = intervals.iter().map(|i| i.lo).sum();
            let hi: f64 = intervals.iter().map(|i| i.hi).sum();
            let msg =
                format!("condition {gi}: intervals admit no distribution (Σlo = {lo}, Σhi = {hi})");
            if a.is_concrete() {
                report.error(&path, msg);
            } else {
                report.warning(&path, msg);
            }
        }
    }
    report
}

pub fn validate_plan(plan: &[Action]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let Some(first) = plan.first() else {
        report.error("plan", "empty plan");
        return report;
    };
    for (i, a) in plan.iter().enumerate() {
        if a.universe != first.universe {
            report.error(format!("plan/{i}"), "action over a different state space");
        }
        report.extend(validate_action(a));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cma::Node;

    fn set(n: usize, xs: &[usize]) -> StateSet {
        StateSet::from_indices(n, xs.iter().copied()).unwrap()
    }

    fn iv(lo: f64, hi: f64) -> ProbInterval {
        ProbInterval::new(lo, hi).unwrap()
    }

    fn shift(n: usize, by: usize) -> Arc<Effect> {
        Arc::new(Effect::from_images(n, (0..n).map(|s| vec![(s + by) % n]).collect()).unwrap())
    }

    #[test]
    fn identity_is_valid_and_instantiates_to_a_point() {
        let a = Action::identity("id", 4);
        assert!(a.validate().is_ok());
        let m = a.instantiate_ima(2).unwrap();
        assert_eq!(m, Cma::ima(4, vec![(ProbInterval::ONE, set(4, &[2]))]));
    }

    #[test]
    fn overlapping_concrete_conditions_are_reported() {
        let a = Action::concrete(
            "bad",
            vec![
                Branch::new(set(4, &[0, 1, 2]), ProbInterval::ONE, shift(4, 0)),
                Branch::new(set(4, &[2, 3]), ProbInterval::ONE, shift(4, 0)),
            ],
        )
        .unwrap();
        let r = a.validate();
        assert!(!r.is_ok());
        assert!(r.to_string().contains("overlap on states {2}"), "{r}");
    }

    #[test]
    fn infeasible_condition_is_reported() {
        let a = Action::concrete(
            "short",
            vec![
                Branch::new(set(2, &[0, 1]), iv(0.3, 0.4), shift(2, 0)),
                Branch::new(set(2, &[0, 1]), iv(0.2, 0.3), shift(2, 1)),
            ],
        )
        .unwrap();
        let r = a.validate();
        assert!(r.to_string().contains("Σhi = 0.7"), "{r}");
    }

    #[test]
    fn gaps_and_padding_rules() {
        let gap = Action::concrete(
            "gap",
            vec![Branch::new(set(3, &[0, 1]), ProbInterval::ONE, shift(3, 0))],
        )
        .unwrap();
        assert!(gap.validate().to_string().contains("uncovered states {2}"));
        let abs = Action::derived(
            "gap",
            vec![Branch::new(set(3, &[0, 1]), ProbInterval::ONE, shift(3, 0))],
        )
        .unwrap();
        let r = abs.validate();
        assert!(r.is_ok() && r.warnings().count() == 1);
        let pad = Action::new(
            "pad",
            ActionKind::Abstract,
            vec![
                Branch::new(StateSet::full(3), ProbInterval::ONE, shift(3, 0)),
                Branch::new(set(3, &[]), iv(0.0, 0.5), shift(3, 1)),
            ],
        )
        .unwrap();
        assert!(!pad.validate().is_ok());
    }

    #[test]
    fn two_branch_instantiation() {
        let n = 4;
        let a = Action::concrete(
            "flip",
            vec![
                Branch::new(StateSet::full(n), iv(0.5, 0.5), shift(n, 1)),
                Branch::new(StateSet::full(n), iv(0.5, 0.5), shift(n, 2)),
            ],
        )
        .unwrap();
        let m = a.instantiate_ima(3).unwrap();
        let Node::Internal(es) = m.root() else {
            panic!()
        };
        assert_eq!(es.len(), 2);
        assert_eq!(es[0].node, Node::Leaf(set(n, &[0])));
        assert_eq!(es[1].node, Node::Leaf(set(n, &[1])));
        assert!(m.validate().is_ok());
        assert_eq!(a.groups().len(), 1);
        assert_eq!(a.groups_at(3).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn abstract_actions_do_not_instantiate() {
        let a = Action::new(
            "x",
            ActionKind::Abstract,
            vec![Branch::new(
                StateSet::full(2),
                ProbInterval::ONE,
                shift(2, 0),
            )],
        )
        .unwrap();
        assert!(a.instantiate_ima(0).is_err());
        assert!(Action::concrete("none", vec![]).is_err());
    }
}
