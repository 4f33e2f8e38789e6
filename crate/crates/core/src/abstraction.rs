//! Intra-, inter- and sequential abstraction, and abstraction hierarchies.
//!
//! Every operator keeps the group structure intact: triples of one input
//! group end up in one output group, so a group's numbers still sum to one.
//! When two different input groups would land on the same output condition
//! set, the lower bounds of their triples drop to zero, since the merged
//! group then splits its mass between them in unknown proportion.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::action::{Action, Branch};
use crate::error::{Error, Result};
use crate::mass::ProbInterval;
use crate::state::StateSet;

/// Builds the derived action, relaxing lower bounds where distinct
/// provenance groups share a condition set.
fn assemble(name: &str, mut branches: Vec<Branch>, provenance: &[usize]) -> Result<Action> {
    let mut owners: BTreeMap<&StateSet, BTreeSet<usize>> = BTreeMap::new();
    for (b, &p) in branches.iter().zip(provenance) {
        owners.entry(&b.condition).or_default().insert(p);
    }
    let shared: Vec<StateSet> = owners
        .into_iter()
        .filter(|(_, p)| p.len() > 1)
        .map(|(c, _)| c.clone())
        .collect();
    for b in &mut branches {
        if shared.contains(&b.condition) {
            b.interval.lo = 0.0;
        }
    }
    Action::derived(name, branches)
}

fn merged_label(a: &Branch, b: &Branch) -> Option<String> {
    match (&a.label, &b.label) {
        (Some(x), Some(y)) if x == y => Some(x.clone()),
        (Some(x), Some(y)) => Some(format!("{x}|{y}")),
        (x, y) => x.clone().or_else(|| y.clone()),
    }
}

/// Merges branches `i` and `j`. Returns the new action and, for every old
/// branch index, its index in the new action.
fn intra_pair(a: &Action, i: usize, j: usize) -> Result<(Action, Vec<usize>)> {
    let n = a.branches().len();
    if i >= n || j >= n {
        return Err(Error::IndexOutOfRange {
            index: i.max(j),
            size: n,
        });
    }
    if i == j {
        return Err(Error::InvalidAbstraction(format!(
            "cannot merge branch {i} with itself"
        )));
    }
    let (bi, bj) = (&a.branches()[i], &a.branches()[j]);
    let gi = a.group_of_branch(i);
    let gj = a.group_of_branch(j);
    let interval = if bi.condition.is_disjoint(&bj.condition) {
        bi.interval.hull(&bj.interval)
    } else {
        ProbInterval {
            lo: bi.interval.lo.min(bj.interval.lo),
            hi: (bi.interval.hi + bj.interval.hi).min(1.0),
        }
    };
    let condition = bi.condition.union(&bj.condition);
    let star = Branch {
        condition: condition.clone(),
        interval,
        effect: Arc::new(bi.effect.union(&bj.effect)?),
        label: merged_label(bi, bj),
    };
    let first = i.min(j);
    let second = i.max(j);
    let mut out = Vec::with_capacity(n - 1);
    let mut provenance = Vec::with_capacity(n - 1);
    let mut map = vec![0; n];
    for (t, b) in a.branches().iter().enumerate() {
        let g = a.group_of_branch(t);
        if t == second {
            map[t] = map[first];
            continue;
        }
        map[t] = out.len();
        if t == first {
            out.push(star.clone());
            provenance.push(gi);
        } else if gi != gj && (g == gi || g == gj) {
            // The two groups become one: each side may receive nothing when
            // the other side's condition is the one that holds.
            out.push(Branch {
                condition: condition.clone(),
                interval: ProbInterval {
                    lo: 0.0,
                    hi: b.interval.hi,
                },
                ..b.clone()
            });
            provenance.push(gi);
        } else {
            out.push(b.clone());
            provenance.push(g);
        }
    }
    Ok((assemble(a.name(), out, &provenance)?, map))
}

/// Applies each merge group in turn; indices always refer to `a`'s branches.
pub fn intra_abstract_groups(a: &Action, groups: &[Vec<usize>]) -> Result<(Action, Vec<usize>)> {
    let n = a.branches().len();
    let mut seen = BTreeSet::new();
    for g in groups {
        if g.len() < 2 {
            return Err(Error::InvalidAbstraction(
                "a merge group needs at least two branches".into(),
            ));
        }
        for &i in g {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, size: n });
            }
            if !seen.insert(i) {
                return Err(Error::InvalidAbstraction(format!(
                    "branch {i} appears in more than one merge position"
                )));
            }
        }
    }
    let mut current = a.clone();
    let mut map: Vec<usize> = (0..n).collect();
    for g in groups {
        for &next in &g[1..] {
            let (merged, step) = intra_pair(&current, map[g[0]], map[next])?;
            current = merged;
            for m in &mut map {
                *m = step[*m];
            }
        }
    }
    Ok((Action::derived(a.name(), current.branches().to_vec())?, map))
}

/// Merges the branches listed in `group` into one abstract branch.
pub fn intra_abstract(a: &Action, group: &[usize]) -> Result<Action> {
    Ok(intra_abstract_groups(a, &[group.to_vec()])?.0)
}

/// Group-level pairing for [`inter_abstract`]: `(Some(g), Some(h))` pairs
/// group g of the first action with group h of the second; `None` stands for
/// a padding group.
pub type GroupPairing = Vec<(Option<usize>, Option<usize>)>;

fn default_pairing(n1: usize, n2: usize) -> GroupPairing {
    (0..n1.max(n2))
        .map(|i| ((i < n1).then_some(i), (i < n2).then_some(i)))
        .collect()
}

fn check_pairing(p: &GroupPairing, n1: usize, n2: usize) -> Result<()> {
    let mut left = vec![false; n1];
    let mut right = vec![false; n2];
    for (x, y) in p {
        if x.is_none() && y.is_none() {
            return Err(Error::PairingNotBijective(
                "a pair of two padding groups".into(),
            ));
        }
        for (side, slot, n) in [(x, &mut left, n1), (y, &mut right, n2)] {
            if let Some(g) = *side {
                if g >= n {
                    return Err(Error::PairingNotBijective(format!(
                        "group {g} does not exist"
                    )));
                }
                if std::mem::replace(&mut slot[g], true) {
                    return Err(Error::PairingNotBijective(format!(
                        "group {g} paired twice"
                    )));
                }
            }
        }
    }
    if left.iter().chain(&right).any(|used| !used) {
        return Err(Error::PairingNotBijective(
            "some group is left unpaired".into(),
        ));
    }
    Ok(())
}

/// Inter-abstraction with its branch index maps (first action, second
/// action) into the result.
pub fn inter_with_maps(
    a1: &Action,
    a2: &Action,
    pairing: Option<&GroupPairing>,
) -> Result<(Action, Vec<usize>, Vec<usize>)> {
    if a1.universe() != a2.universe() {
        return Err(Error::SpaceMismatch {
            expected: a1.universe(),
            found: a2.universe(),
        });
    }
    let pairing = match pairing {
        Some(p) => {
            check_pairing(p, a1.groups().len(), a2.groups().len())?;
            p.clone()
        }
        None => default_pairing(a1.groups().len(), a2.groups().len()),
    };
    let mut out = Vec::new();
    let mut provenance = Vec::new();
    let mut left_map = vec![0; a1.branches().len()];
    let mut right_map = vec![0; a2.branches().len()];
    for (pi, (g1, g2)) in pairing.iter().enumerate() {
        match (g1, g2) {
            (Some(g1), Some(g2)) => {
                let (x, y) = (&a1.groups()[*g1], &a2.groups()[*g2]);
                let condition = x.condition.union(&y.condition);
                for p in 0..x.members.len().max(y.members.len()) {
                    let l = x.members.get(p).map(|&t| (t, &a1.branches()[t]));
                    let r = y.members.get(p).map(|&t| (t, &a2.branches()[t]));
                    let branch = match (l, r) {
                        (Some((_, bl)), Some((_, br))) => Branch {
                            condition: condition.clone(),
                            interval: bl.interval.hull(&br.interval),
                            effect: Arc::new(bl.effect.union(&br.effect)?),
                            label: merged_label(bl, br),
                        },
                        // The partner is a padding triple: interval [0, 0]
                        // and, within this group, a vacuous effect.
                        (Some((_, b)), None) | (None, Some((_, b))) => Branch {
                            condition: condition.clone(),
                            interval: b.interval.hull(&ProbInterval::ZERO),
                            ..b.clone()
                        },
                        (None, None) => unreachable!("p is below the longer group's size"),
                    };
                    if let Some((t, _)) = l {
                        left_map[t] = out.len();
                    }
                    if let Some((t, _)) = r {
                        right_map[t] = out.len();
                    }
                    out.push(branch);
                    provenance.push(pi);
                }
            }
            (Some(g), None) | (None, Some(g)) => {
                let (action, map) = if g1.is_some() {
                    (a1, &mut left_map)
                } else {
                    (a2, &mut right_map)
                };
                // Paired with a padding group whose condition never holds:
                // the triples carry over unchanged.
                for &t in &action.groups()[*g].members {
                    map[t] = out.len();
                    out.push(action.branches()[t].clone());
                    provenance.push(pi);
                }
            }
            (None, None) => unreachable!("rejected by check_pairing"),
        }
    }
    let name = format!("{}+{}", a1.name(), a2.name());
    Ok((assemble(&name, out, &provenance)?, left_map, right_map))
}

pub fn inter_abstract(a1: &Action, a2: &Action, pairing: Option<&GroupPairing>) -> Result<Action> {
    Ok(inter_with_maps(a1, a2, pairing)?.0)
}

/// Sequential abstraction with the map from (first-action branch,
/// second-action branch) to the result's branch, `None` for dropped pairs.
pub fn seq_with_map(a1: &Action, a2: &Action) -> Result<(Action, Vec<Vec<Option<usize>>>)> {
    if a1.universe() != a2.universe() {
        return Err(Error::SpaceMismatch {
            expected: a1.universe(),
            found: a2.universe(),
        });
    }
    // States that satisfy group h's condition and no other condition of a2.
    let exclusive: Vec<StateSet> = a2
        .groups()
        .iter()
        .enumerate()
        .map(|(h, g)| {
            let mut others = StateSet::empty(a2.universe());
            for (h2, g2) in a2.groups().iter().enumerate() {
                if h2 != h {
                    others.union_with(&g2.condition);
                }
            }
            g.condition.difference(&others)
        })
        .collect();
    let mut out = Vec::new();
    let mut provenance = Vec::new();
    let mut map = vec![vec![None; a2.branches().len()]; a1.branches().len()];
    for (g, group) in a1.groups().iter().enumerate() {
        for &k in &group.members {
            let bk = &a1.branches()[k];
            let landing = bk.effect.apply(&group.condition);
            for (h, target) in a2.groups().iter().enumerate() {
                let regression: Vec<usize> = group
                    .condition
                    .iter()
                    .filter(|&b| bk.effect.image(b).any(|s| target.condition.contains(s)))
                    .collect();
                if regression.is_empty() {
                    continue;
                }
                let guaranteed = landing.is_subset(&exclusive[h]);
                for &l in &target.members {
                    let bl = &a2.branches()[l];
                    let hi = bk.interval.hi * bl.interval.hi;
                    let lo = if guaranteed {
                        bk.interval.lo * bl.interval.lo
                    } else {
                        0.0
                    };
                    let label = match (&bk.label, &bl.label) {
                        (Some(x), Some(y)) => Some(format!("{x};{y}")),
                        _ => None,
                    };
                    map[k][l] = Some(out.len());
                    out.push(Branch {
                        condition: group.condition.clone(),
                        interval: ProbInterval { lo, hi },
                        effect: Arc::new(bk.effect.then(&bl.effect)?),
                        label,
                    });
                    provenance.push(g);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidAbstraction(format!(
            "no branch pair of {} then {} can occur",
            a1.name(),
            a2.name()
        )));
    }
    let name = format!("{};{}", a1.name(), a2.name());
    Ok((assemble(&name, out, &provenance)?, map))
}

pub fn seq_abstract(a1: &Action, a2: &Action) -> Result<Action> {
    Ok(seq_with_map(a1, a2)?.0)
}

/// How a derived action was built, with the branch maps needed to follow a
/// concrete execution through it.
#[derive(Debug, Clone)]
pub enum Derived {
    Base(Arc<Action>),
    Intra {
        child: Arc<Derived>,
        map: Vec<usize>,
        action: Arc<Action>,
    },
    Inter {
        left: Arc<Derived>,
        right: Arc<Derived>,
        left_map: Vec<usize>,
        right_map: Vec<usize>,
        action: Arc<Action>,
    },
    Seq {
        left: Arc<Derived>,
        right: Arc<Derived>,
        pair_map: Vec<Vec<Option<usize>>>,
        action: Arc<Action>,
    },
}

/// One concrete reading of a derived action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    Leaf,
    Intra(Box<Choice>),
    /// `right` picks the second operand.
    Inter {
        right: bool,
        inner: Box<Choice>,
    },
    Seq(Box<Choice>, Box<Choice>),
}

impl Derived {
    pub fn base(a: Action) -> Arc<Self> {
        Arc::new(Derived::Base(Arc::new(a)))
    }

    pub fn intra(child: Arc<Derived>, groups: &[Vec<usize>], name: &str) -> Result<Arc<Self>> {
        let (action, map) = intra_abstract_groups(child.action(), groups)?;
        Ok(Arc::new(Derived::Intra {
            child,
            map,
            action: Arc::new(action.renamed(name)),
        }))
    }

    pub fn inter(
        left: Arc<Derived>,
        right: Arc<Derived>,
        pairing: Option<&GroupPairing>,
        name: &str,
    ) -> Result<Arc<Self>> {
        let (action, left_map, right_map) =
            inter_with_maps(left.action(), right.action(), pairing)?;
        Ok(Arc::new(Derived::Inter {
            left,
            right,
            left_map,
            right_map,
            action: Arc::new(action.renamed(name)),
        }))
    }

    pub fn seq(left: Arc<Derived>, right: Arc<Derived>, name: &str) -> Result<Arc<Self>> {
        let (action, pair_map) = seq_with_map(left.action(), right.action())?;
        Ok(Arc::new(Derived::Seq {
            left,
            right,
            pair_map,
            action: Arc::new(action.renamed(name)),
        }))
    }

    pub fn action(&self) -> &Arc<Action> {
        match self {
            Derived::Base(a) => a,
            Derived::Intra { action, .. }
            | Derived::Inter { action, .. }
            | Derived::Seq { action, .. } => action,
        }
    }

    /// Every concrete reading, in order: left operand's before the right
    /// operand's, sequences in lexicographic order.
    pub fn choices(&self) -> Vec<Choice> {
        match self {
            Derived::Base(_) => vec![Choice::Leaf],
            Derived::Intra { child, .. } => child
                .choices()
                .into_iter()
                .map(|c| Choice::Intra(Box::new(c)))
                .collect(),
            Derived::Inter { left, right, .. } => {
                let l = left.choices().into_iter().map(|c| Choice::Inter {
                    right: false,
                    inner: Box::new(c),
                });
                let r = right.choices().into_iter().map(|c| Choice::Inter {
                    right: true,
                    inner: Box::new(c),
                });
                l.chain(r).collect()
            }
            Derived::Seq { left, right, .. } => {
                let rs = right.choices();
                left.choices()
                    .into_iter()
                    .flat_map(|a| {
                        rs.iter()
                            .map(move |b| Choice::Seq(Box::new(a.clone()), Box::new(b.clone())))
                    })
                    .collect()
            }
        }
    }

    /// The concrete plan a choice stands for.
    pub fn plan_of(&self, choice: &Choice) -> Result<Vec<Arc<Action>>> {
        let mut out = Vec::new();
        self.collect_plan(choice, &mut out)?;
        Ok(out)
    }

    fn collect_plan(&self, choice: &Choice, out: &mut Vec<Arc<Action>>) -> Result<()> {
        match (self, choice) {
            (Derived::Base(a), Choice::Leaf) => {
                out.push(a.clone());
                Ok(())
            }
            (Derived::Intra { child, .. }, Choice::Intra(c)) => child.collect_plan(c, out),
            (Derived::Inter { left, right, .. }, Choice::Inter { right: r, inner }) => {
                if *r { right } else { left }.collect_plan(inner, out)
            }
            (Derived::Seq { left, right, .. }, Choice::Seq(a, b)) => {
                left.collect_plan(a, out)?;
                right.collect_plan(b, out)
            }
            _ => Err(Error::Mapping(
                "choice does not match the derivation".into(),
            )),
        }
    }

    /// The concrete plans this action stands for, in [`Derived::choices`]
    /// order.
    pub fn instantiations(&self) -> Result<Vec<Vec<Arc<Action>>>> {
        self.choices().iter().map(|c| self.plan_of(c)).collect()
    }
}

/// All readings of a plan of derived actions: the product of each step's
/// choices, earlier steps varying slowest.
pub fn plan_choices(plan: &[Arc<Derived>]) -> Vec<Vec<Choice>> {
    let mut out: Vec<Vec<Choice>> = vec![Vec::new()];
    for d in plan {
        let cs = d.choices();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                cs.iter()
                    .map(move |c| [prefix.clone(), vec![c.clone()]].concat())
            })
            .collect();
    }
    out
}

pub fn plan_concrete(plan: &[Arc<Derived>], choices: &[Choice]) -> Result<Vec<Arc<Action>>> {
    if plan.len() != choices.len() {
        return Err(Error::Mapping(
            "one choice per plan step is required".into(),
        ));
    }
    let mut out = Vec::new();
    for (d, c) in plan.iter().zip(choices) {
        d.collect_plan(c, &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HierarchyNode {
    Inter {
        children: Vec<String>,
        pairing: Option<Vec<GroupPairing>>,
    },
    Seq(Vec<String>),
    Intra {
        child: String,
        merge: Vec<Vec<usize>>,
    },
}

/// Named abstraction nodes; child names refer to other nodes or to actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    pub root: String,
    pub nodes: BTreeMap<String, HierarchyNode>,
}

impl Hierarchy {
    /// Derives every node reachable from the root. The returned map also
    /// holds the concrete actions used as leaves.
    pub fn build(
        &self,
        actions: &BTreeMap<String, Arc<Action>>,
    ) -> Result<BTreeMap<String, Arc<Derived>>> {
        let mut done = BTreeMap::new();
        let mut visiting = BTreeSet::new();
        self.derive(&self.root, actions, &mut done, &mut visiting)?;
        Ok(done)
    }

    /// Derives every node of the hierarchy, reachable from the root or not.
    pub fn build_all(
        &self,
        actions: &BTreeMap<String, Arc<Action>>,
    ) -> Result<BTreeMap<String, Arc<Derived>>> {
        let mut done = BTreeMap::new();
        let mut visiting = BTreeSet::new();
        for name in self.nodes.keys() {
            self.derive(name, actions, &mut done, &mut visiting)?;
        }
        Ok(done)
    }

    fn derive(
        &self,
        name: &str,
        actions: &BTreeMap<String, Arc<Action>>,
        done: &mut BTreeMap<String, Arc<Derived>>,
        visiting: &mut BTreeSet<String>,
    ) -> Result<Arc<Derived>> {
        if let Some(d) = done.get(name) {
            return Ok(d.clone());
        }
        let Some(node) = self.nodes.get(name) else {
            let a = actions.get(name).ok_or_else(|| {
                Error::InvalidHierarchy(format!("unknown node or action `{name}`"))
            })?;
            if !a.is_concrete() {
                return Err(Error::InvalidHierarchy(format!(
                    "leaf `{name}` is not a concrete action"
                )));
            }
            let d = Arc::new(Derived::Base(a.clone()));
            done.insert(name.to_string(), d.clone());
            return Ok(d);
        };
        if !visiting.insert(name.to_string()) {
            return Err(Error::InvalidHierarchy(format!("cycle through `{name}`")));
        }
        let mut kids = |names: &[String]| -> Result<Vec<Arc<Derived>>> {
            if names.len() < 2 {
                return Err(Error::InvalidHierarchy(format!(
                    "`{name}` needs at least two children"
                )));
            }
            names
                .iter()
                .map(|c| self.derive(c, actions, done, visiting))
                .collect()
        };
        let d = match node {
            HierarchyNode::Inter { children, pairing } => {
                let ds = kids(children)?;
                if let Some(p) = pairing {
                    if p.len() != ds.len() - 1 {
                        return Err(Error::InvalidHierarchy(format!(
                            "`{name}` needs one pairing per fold step"
                        )));
                    }
                }
                let mut acc = ds[0].clone();
                for (i, next) in ds[1..].iter().enumerate() {
                    let step = fold_name(name, i, ds.len() - 1);
                    acc =
                        Derived::inter(acc, next.clone(), pairing.as_ref().map(|p| &p[i]), &step)?;
                }
                acc
            }
            HierarchyNode::Seq(children) => {
                let ds = kids(children)?;
                let mut acc = ds[0].clone();
                for (i, next) in ds[1..].iter().enumerate() {
                    acc = Derived::seq(acc, next.clone(), &fold_name(name, i, ds.len() - 1))?;
                }
                acc
            }
            HierarchyNode::Intra { child, merge } => {
                let c = self.derive(child, actions, done, visiting)?;
                Derived::intra(c, merge, name)?
            }
        };
        visiting.remove(name);
        done.insert(name.to_string(), d.clone());
        Ok(d)
    }
}

fn fold_name(name: &str, step: usize, steps: usize) -> String {
    if step + 1 == steps {
        name.to_string()
    } else {
        format!("{name}#{}", step + 1)
    }
}
