//! Reference execution by sampling, and witness-based soundness checks.
//!
//! A sample draws an MA from the initial world, a distribution consistent
//! with it, and then executes a concrete plan state by state. The mass flows
//! of that execution are folded onto the projected tree to give one number
//! per edge; the sample passes when those numbers respect every interval and
//! sibling sum, and the final distribution is consistent with the MA that the
//! numbers generate.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::abstraction::{plan_concrete, Choice, Derived};
use crate::action::Action;
use crate::cma::{Cma, Node, NumberAssignment};
use crate::error::{Error, Result};
use crate::mass::{
    max_violation, sample_consistent_pd, AllocationRecord, ConsistencyMethod, MassAssignment, Pd,
    ProbInterval, DEFAULT_TOL,
};
use crate::projection::{project_plan_mutated, Mutation};
use crate::sampling::{box_simplex_point, dirichlet_weights, sample_box_simplex, sub_seed};
use crate::state::StateSet;

/// What happened to the mass at one state during one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateChoice {
    pub state: usize,
    /// Index of the action's group (condition) holding at the state.
    pub group: usize,
    /// One number per branch of that group, inside its interval.
    pub probs: Vec<f64>,
    /// Per branch, the fraction of its share sent to each image state.
    pub alloc: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExecTrace {
    pub seed: u64,
    pub pre_focals: Vec<(Vec<usize>, f64)>,
    pub pre_numbers: Vec<f64>,
    pub allocation: AllocationRecord,
    pub p_pre: Vec<f64>,
    /// Per step, the choices at every state carrying mass, by state.
    pub steps: Vec<Vec<StateChoice>>,
    /// Distribution after each step.
    pub distributions: Vec<Vec<f64>>,
    #[serde(skip)]
    m_pre: Option<MassAssignment>,
}

impl ExecTrace {
    pub fn p_post(&self) -> &[f64] {
        self.distributions
            .last()
            .map(Vec::as_slice)
            .unwrap_or(&self.p_pre)
    }

    pub fn m_pre(&self) -> &MassAssignment {
        self.m_pre.as_ref().expect("set by sample_exec_plan")
    }

    fn choice(&self, step: usize, state: usize) -> Option<&StateChoice> {
        let v = &self.steps[step];
        v.binary_search_by_key(&state, |c| c.state)
            .ok()
            .map(|i| &v[i])
    }

    /// Largest deviation from total mass one over all distributions.
    pub fn max_conservation_error(&self) -> f64 {
        std::iter::once(&self.p_pre)
            .chain(&self.distributions)
            .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Executes a concrete plan once, starting from a random member of ℘(M_pre).
pub fn sample_exec_plan(plan: &[Arc<Action>], m_pre: &Cma, seed: u64) -> Result<ExecTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_exec_with(plan, m_pre, seed, &mut rng)
}

fn sample_exec_with<R: Rng + ?Sized>(
    plan: &[Arc<Action>],
    m_pre: &Cma,
    seed: u64,
    rng: &mut R,
) -> Result<ExecTrace> {
    for a in plan {
        if !a.is_concrete() {
            return Err(Error::InvalidPlan(format!(
                "`{}` is abstract and cannot be executed",
                a.name()
            )));
        }
        if a.universe() != m_pre.universe() {
            return Err(Error::SpaceMismatch {
                expected: m_pre.universe(),
                found: a.universe(),
            });
        }
    }
    let (m, witness) = m_pre.sample_ma(rng)?;
    let (p_pre, allocation) = sample_consistent_pd(&m, rng);
    let mut current = p_pre.probs().to_vec();
    let mut steps = Vec::with_capacity(plan.len());
    let mut distributions = Vec::with_capacity(plan.len());
    for a in plan {
        let mut next = vec![0.0; current.len()];
        let mut choices = Vec::new();
        for (b, &mass) in current.iter().enumerate() {
            if mass <= 0.0 {
                continue;
            }
            let group = a.groups_at(b).next().ok_or_else(|| Error::InvalidAction {
                action: a.name().to_string(),
                message: format!("state {b} satisfies no condition"),
            })?;
            let members = &a.groups()[group].members;
            let intervals: Vec<ProbInterval> =
                members.iter().map(|&t| a.branches()[t].interval).collect();
            let probs = sample_box_simplex(&intervals, rng)?;
            let mut alloc = Vec::with_capacity(members.len());
            for (&t, &q) in members.iter().zip(&probs) {
                let image: Vec<usize> = a.branches()[t].effect.image(b).collect();
                let w = dirichlet_weights(image.len(), rng);
                for (&s, &x) in image.iter().zip(&w) {
                    next[s] += mass * q * x;
                }
                alloc.push(image.into_iter().zip(w).collect());
            }
            choices.push(StateChoice {
                state: b,
                group,
                probs,
                alloc,
            });
        }
        steps.push(choices);
        distributions.push(next.clone());
        current = next;
    }
    Ok(ExecTrace {
        seed,
        pre_focals: m.focals().iter().map(|(s, w)| (s.to_vec(), *w)).collect(),
        pre_numbers: witness.numbers,
        allocation,
        p_pre: p_pre.probs().to_vec(),
        steps,
        distributions,
        m_pre: Some(m),
    })
}

/// Per output branch of a derived action, where the mass from one unit at a
/// source state ends up.
type Flow = Vec<BTreeMap<usize, f64>>;

fn flow_mass(f: &BTreeMap<usize, f64>) -> f64 {
    f.values().sum()
}

struct Walker<'a> {
    plan: &'a [Arc<Derived>],
    choices: &'a [Choice],
    offsets: Vec<usize>,
    trace: &'a ExecTrace,
    memo: HashMap<(usize, usize, usize), Arc<Flow>>,
    numbers: Vec<f64>,
    finals: Vec<(StateSet, BTreeMap<usize, f64>)>,
}

impl<'a> Walker<'a> {
    fn flow(&mut self, d: &Derived, c: &Choice, step: usize, b: usize) -> Result<Arc<Flow>> {
        let key = (d as *const Derived as usize, step, b);
        if let Some(f) = self.memo.get(&key) {
            return Ok(f.clone());
        }
        let n = d.action().branches().len();
        let mut out: Flow = vec![BTreeMap::new(); n];
        match (d, c) {
            (Derived::Base(a), Choice::Leaf) => {
                let sc = self.trace.choice(step, b).ok_or_else(|| {
                    Error::Mapping(format!("no recorded choice for state {b} at step {step}"))
                })?;
                let members = &a.groups()[sc.group].members;
                for ((&t, &q), alloc) in members.iter().zip(&sc.probs).zip(&sc.alloc) {
                    for &(s, x) in alloc {
                        *out[t].entry(s).or_default() += q * x;
                    }
                }
            }
            (Derived::Intra { child, map, .. }, Choice::Intra(inner)) => {
                let f = self.flow(child, inner, step, b)?;
                for (t, part) in f.iter().enumerate() {
                    for (&s, &x) in part {
                        *out[map[t]].entry(s).or_default() += x;
                    }
                }
            }
            (
                Derived::Inter {
                    left,
                    right,
                    left_map,
                    right_map,
                    ..
                },
                Choice::Inter { right: r, inner },
            ) => {
                let (side, map) = if *r {
                    (right, right_map)
                } else {
                    (left, left_map)
                };
                let f = self.flow(side, inner, step, b)?;
                for (t, part) in f.iter().enumerate() {
                    for (&s, &x) in part {
                        *out[map[t]].entry(s).or_default() += x;
                    }
                }
            }
            (
                Derived::Seq {
                    left,
                    right,
                    pair_map,
                    ..
                },
                Choice::Seq(ca, cb),
            ) => {
                let first = self.flow(left, ca, step, b)?;
                let mid = step + left.plan_of(ca)?.len();
                for (k, part) in first.iter().enumerate() {
                    for (&s1, &x1) in part {
                        if x1 <= 0.0 {
                            continue;
                        }
                        let second = self.flow(right, cb, mid, s1)?;
                        for (l, part2) in second.iter().enumerate() {
                            for (&s2, &x2) in part2 {
                                let x = x1 * x2;
                                if x <= 0.0 {
                                    continue;
                                }
                                let idx = pair_map[k][l].ok_or_else(|| {
                                    Error::Mapping(format!(
                                        "mass flows through dropped branch pair ({k}, {l})"
                                    ))
                                })?;
                                *out[idx].entry(s2).or_default() += x;
                            }
                        }
                    }
                }
            }
            _ => {
                return Err(Error::Mapping(
                    "choice does not match the derivation".into(),
                ))
            }
        }
        let f = Arc::new(out);
        self.memo.insert(key, f.clone());
        Ok(f)
    }

    /// Walks the part of the projected tree copied from the initial world.
    fn walk_pre(
        &mut self,
        t: &Node,
        m: &Node,
        pre: &[f64],
        cursor: &mut usize,
        leaf_masses: &mut std::vec::IntoIter<BTreeMap<usize, f64>>,
    ) -> Result<()> {
        match (t, m) {
            (_, Node::Leaf(b)) => {
                let pi = leaf_masses
                    .next()
                    .ok_or_else(|| Error::Mapping("more leaves than masses".into()))?;
                self.grow(t, b, pi, 0)
            }
            (Node::Internal(ts), Node::Internal(ms)) if ts.len() == ms.len() => {
                for (et, em) in ts.iter().zip(ms) {
                    self.numbers.push(pre[*cursor]);
                    *cursor += 1;
                    self.walk_pre(&et.node, &em.node, pre, cursor, leaf_masses)?;
                }
                Ok(())
            }
            _ => Err(Error::Mapping(
                "projected tree does not contain the initial world".into(),
            )),
        }
    }

    /// Walks the growth below a leaf `b` whose mass is spread as `pi`.
    fn grow(
        &mut self,
        node: &Node,
        b: &StateSet,
        pi: BTreeMap<usize, f64>,
        j: usize,
    ) -> Result<()> {
        if j == self.plan.len() {
            let Node::Leaf(set) = node else {
                return Err(Error::Mapping(
                    "projected tree is deeper than the plan".into(),
                ));
            };
            self.finals.push((set.clone(), pi));
            return Ok(());
        }
        let Node::Internal(cond_edges) = node else {
            return Err(Error::Mapping(
                "projected tree is shallower than the plan".into(),
            ));
        };
        let d = self.plan[j].clone();
        let action = d.action().clone();
        let meeting: Vec<usize> = (0..action.groups().len())
            .filter(|&g| action.groups()[g].condition.intersects(b))
            .collect();
        if meeting.len() != cond_edges.len() {
            return Err(Error::Mapping(format!(
                "{} conditions meet the leaf but the tree has {}",
                meeting.len(),
                cond_edges.len()
            )));
        }
        let step = self.offsets[j];
        let choice = &self.choices[j];
        let mut flows = Vec::new();
        for (&s, &mass) in &pi {
            if mass > 0.0 {
                flows.push((mass, self.flow(&d, choice, step, s)?));
            }
        }
        let total: f64 = flows.iter().map(|(m, _)| m).sum();
        let group_mass: Vec<f64> = meeting
            .iter()
            .map(|&g| {
                flows
                    .iter()
                    .map(|(m, f)| {
                        m * action.groups()[g]
                            .members
                            .iter()
                            .map(|&t| flow_mass(&f[t]))
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect();
        let routed: f64 = group_mass.iter().sum();
        if (routed - total).abs() > 1e-9 * total.max(1.0) {
            return Err(Error::Mapping(format!(
                "mass {} of {} reaches a condition that does not meet the leaf",
                total - routed,
                total
            )));
        }
        let cond_numbers = if total > 0.0 {
            group_mass.iter().map(|m| m / total).collect()
        } else {
            fallback(&cond_edges.iter().map(|e| e.interval).collect::<Vec<_>>())
        };
        for ((edge, &g), (&x, &gm)) in cond_edges
            .iter()
            .zip(&meeting)
            .zip(cond_numbers.iter().zip(&group_mass))
        {
            self.numbers.push(x);
            let Node::Internal(effect_edges) = &edge.node else {
                return Err(Error::Mapping(
                    "condition node without effect branches".into(),
                ));
            };
            let group = &action.groups()[g];
            if effect_edges.len() != group.members.len() {
                return Err(Error::Mapping(
                    "effect branch count differs from the action".into(),
                ));
            }
            let inside = b.intersection(&group.condition);
            let numbers = if gm > 0.0 {
                group
                    .members
                    .iter()
                    .map(|&t| flows.iter().map(|(m, f)| m * flow_mass(&f[t])).sum::<f64>() / gm)
                    .collect()
            } else {
                fallback(&effect_edges.iter().map(|e| e.interval).collect::<Vec<_>>())
            };
            for ((edge, &t), &y) in effect_edges.iter().zip(&group.members).zip(&numbers) {
                self.numbers.push(y);
                let mut next: BTreeMap<usize, f64> = BTreeMap::new();
                for (m, f) in &flows {
                    for (&s, &x) in &f[t] {
                        *next.entry(s).or_default() += m * x;
                    }
                }
                let leaf = action.branches()[t].effect.apply(&inside);
                if let Some((&s, _)) = next.iter().find(|(s, x)| **x > 0.0 && !leaf.contains(**s)) {
                    return Err(Error::Mapping(format!(
                        "mass reaches state {s} outside its projected leaf"
                    )));
                }
                self.grow(&edge.node, &leaf, next, j + 1)?;
            }
        }
        Ok(())
    }
}

/// Numbers for a group that receives no mass: any feasible point will do.
fn fallback(intervals: &[ProbInterval]) -> Vec<f64> {
    box_simplex_point(intervals).unwrap_or_else(|| intervals.iter().map(|i| i.lo).collect())
}

/// Per-state mass of every leaf of the initial world, in depth-first order.
fn leaf_state_masses(m_pre: &Cma, trace: &ExecTrace) -> Result<Vec<BTreeMap<usize, f64>>> {
    let witness = NumberAssignment {
        numbers: trace.pre_numbers.clone(),
    };
    let leaves = m_pre.leaf_masses(&witness)?;
    let focals = trace.m_pre().focals();
    let index: HashMap<&StateSet, usize> = focals
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (s, i))
        .collect();
    let mut out = Vec::with_capacity(leaves.len());
    for (set, mu) in leaves {
        let mut pi = BTreeMap::new();
        if mu > 0.0 {
            let f = *index
                .get(set)
                .ok_or_else(|| Error::Mapping("leaf set missing from the sampled MA".into()))?;
            let total = focals[f].1;
            for &(s, x) in &trace.allocation.per_focal[f] {
                pi.insert(s, x * mu / total);
            }
        }
        out.push(pi);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleFailure {
    pub sample: usize,
    pub seed: u64,
    pub violation: String,
    pub trace: ExecTraceSummary,
}

/// The replayable part of a failing trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecTraceSummary {
    pub pre_focals: Vec<(Vec<usize>, f64)>,
    pub p_pre: Vec<f64>,
    pub p_post: Vec<f64>,
    pub steps: Vec<Vec<StateChoice>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SoundnessReport {
    /// Names of the concrete actions executed.
    pub instantiation: Vec<String>,
    pub samples: usize,
    pub passes: usize,
    /// Mean over samples of the smallest distance from a witness number to
    /// its interval's nearer end. Informational only.
    pub mean_min_slack: f64,
    pub max_conservation_error: f64,
    pub first_failure: Option<SampleFailure>,
}

impl SoundnessReport {
    pub fn all_passed(&self) -> bool {
        self.passes == self.samples
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    #[doc(hidden)]
    pub mutation: Mutation,
}

impl CheckConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            tol: DEFAULT_TOL,
            mutation: Mutation::None,
        }
    }
}

struct Outcome {
    violation: Option<String>,
    slack: f64,
    conservation: f64,
    trace: ExecTrace,
}

/// Checks one concrete reading of a plan of derived actions against the
/// projection of the plan itself.
pub fn check_soundness(
    plan: &[Arc<Derived>],
    choices: &[Choice],
    m_pre: &Cma,
    cfg: &CheckConfig,
) -> Result<SoundnessReport> {
    let actions: Vec<Action> = plan.iter().map(|d| (**d.action()).clone()).collect();
    let (projected, _) = project_plan_mutated(&actions, m_pre, cfg.mutation)?;
    check_against(plan, choices, m_pre, &projected, cfg)
}

/// Concrete plans are their own only reading.
pub fn check_concrete(plan: &[Action], m_pre: &Cma, cfg: &CheckConfig) -> Result<SoundnessReport> {
    let derived: Vec<Arc<Derived>> = plan.iter().map(|a| Derived::base(a.clone())).collect();
    let choices = vec![Choice::Leaf; plan.len()];
    check_soundness(&derived, &choices, m_pre, cfg)
}

/// One report per concrete reading, each with its own derived seed.
pub fn check_all_instantiations(
    plan: &[Arc<Derived>],
    m_pre: &Cma,
    cfg: &CheckConfig,
) -> Result<Vec<SoundnessReport>> {
    let actions: Vec<Action> = plan.iter().map(|d| (**d.action()).clone()).collect();
    let (projected, _) = project_plan_mutated(&actions, m_pre, cfg.mutation)?;
    crate::abstraction::plan_choices(plan)
        .iter()
        .enumerate()
        .map(|(i, choices)| {
            let sub = CheckConfig {
                seed: sub_seed(cfg.seed, i as u64),
                ..*cfg
            };
            check_against(plan, choices, m_pre, &projected, &sub)
        })
        .collect()
}

fn check_against(
    plan: &[Arc<Derived>],
    choices: &[Choice],
    m_pre: &Cma,
    projected: &Cma,
    cfg: &CheckConfig,
) -> Result<SoundnessReport> {
    let concrete = plan_concrete(plan, choices)?;
    let mut offsets = Vec::with_capacity(plan.len());
    let mut at = 0;
    for (d, c) in plan.iter().zip(choices) {
        offsets.push(at);
        at += d.plan_of(c)?.len();
    }
    let outcomes: Vec<Result<Outcome>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let seed = sub_seed(cfg.seed, i as u64);
            let trace = sample_exec_plan(&concrete, m_pre, seed)?;
            let (violation, slack) =
                verify(plan, choices, &offsets, m_pre, projected, &trace, cfg.tol)?;
            Ok(Outcome {
                violation,
                slack,
                conservation: trace.max_conservation_error(),
                trace,
            })
        })
        .collect();
    let mut passes = 0;
    let mut slack_sum = 0.0;
    let mut conservation: f64 = 0.0;
    let mut first_failure = None;
    for (i, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        slack_sum += o.slack;
        conservation = conservation.max(o.conservation);
        match o.violation {
            None => passes += 1,
            Some(v) if first_failure.is_none() => {
                first_failure = Some(SampleFailure {
                    sample: i,
                    seed: o.trace.seed,
                    violation: v,
                    trace: ExecTraceSummary {
                        pre_focals: o.trace.pre_focals.clone(),
                        p_pre: o.trace.p_pre.clone(),
                        p_post: o.trace.p_post().to_vec(),
                        steps: o.trace.steps.clone(),
                    },
                });
            }
            Some(_) => {}
        }
    }
    Ok(SoundnessReport {
        instantiation: concrete.iter().map(|a| a.name().to_string()).collect(),
        samples: cfg.samples,
        passes,
        mean_min_slack: if cfg.samples > 0 {
            slack_sum / cfg.samples as f64
        } else {
            0.0
        },
        max_conservation_error: conservation,
        first_failure,
    })
}

/// Builds the witness for one trace and checks it. Returns the violated
/// constraint, if any, and the sample's smallest interval slack.
fn verify(
    plan: &[Arc<Derived>],
    choices: &[Choice],
    offsets: &[usize],
    m_pre: &Cma,
    projected: &Cma,
    trace: &ExecTrace,
    tol: f64,
) -> Result<(Option<String>, f64)> {
    let mut walker = Walker {
        plan,
        choices,
        offsets: offsets.to_vec(),
        trace,
        memo: HashMap::new(),
        numbers: Vec::with_capacity(projected.edge_count()),
        finals: Vec::new(),
    };
    let mut leaf_masses = leaf_state_masses(m_pre, trace)?.into_iter();
    let mut cursor = 0;
    walker.walk_pre(
        projected.root(),
        m_pre.root(),
        &trace.pre_numbers,
        &mut cursor,
        &mut leaf_masses,
    )?;
    let witness = NumberAssignment {
        numbers: std::mem::take(&mut walker.numbers),
    };
    let slack = min_slack(projected.root(), &witness.numbers);

    let flow_ma = MassAssignment::merged(
        projected.universe(),
        walker
            .finals
            .iter()
            .map(|(s, pi)| (s.clone(), pi.values().sum::<f64>())),
    )?;
    if let Some(v) = projected.witness_violation(&flow_ma, &witness, tol)? {
        // Distinguish broken interval constraints from a witness that does
        // not reproduce the flows, which would be a construction bug.
        return Ok((Some(v), slack));
    }
    let post = Pd::with_tol(trace.p_post().to_vec(), 1e-6)?;
    let mut landed = vec![0.0; projected.universe()];
    for (_, pi) in &walker.finals {
        for (&s, &x) in pi {
            landed[s] += x;
        }
    }
    let drift = landed
        .iter()
        .zip(post.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if drift > tol {
        return Err(Error::Mapping(format!(
            "leaf flows miss the final distribution by {drift}"
        )));
    }
    let v = max_violation(&post, &flow_ma, ConsistencyMethod::Auto)?;
    if v > tol {
        return Ok((
            Some(format!(
                "final distribution violates a lower-probability inequality by {v}"
            )),
            slack,
        ));
    }
    Ok((None, slack))
}

fn min_slack(root: &Node, numbers: &[f64]) -> f64 {
    fn walk(node: &Node, numbers: &[f64], cursor: &mut usize, best: &mut f64) {
        if let Node::Internal(es) = node {
            for e in es {
                let x = numbers[*cursor];
                *cursor += 1;
                *best = best.min((x - e.interval.lo).min(e.interval.hi - x));
                walk(&e.node, numbers, cursor, best);
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(root, numbers, &mut 0, &mut best);
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Classical forward projection of a single distribution through a plan of
/// actions with point intervals, partitioning conditions and deterministic
/// branch effects.
pub fn spd_project(plan: &[Action], p0: &Pd) -> Result<Pd> {
    let n = p0.universe();
    let mut p = p0.probs().to_vec();
    for a in plan {
        let matrix = transition_matrix(a, n)?;
        let mut next = vec![0.0; n];
        for (b, row) in matrix.iter().enumerate() {
            if p[b] == 0.0 {
                continue;
            }
            for &(s, x) in row {
                next[s] += p[b] * x;
            }
        }
        p = next;
    }
    Pd::new(p)
}

fn transition_matrix(a: &Action, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let not_spd = |msg: String| Error::NotSpd(format!("{}: {msg}", a.name()));
    if a.universe() != n {
        return Err(Error::SpaceMismatch {
            expected: n,
            found: a.universe(),
        });
    }
    let mut rows: Vec<Option<Vec<(usize, f64)>>> = vec![None; n];
    for b in a.branches() {
        if b.interval.lo != b.interval.hi {
            return Err(not_spd(format!(
                "interval [{}, {}]",
                b.interval.lo, b.interval.hi
            )));
        }
    }
    for (gi, g) in a.groups().iter().enumerate() {
        let total: f64 = g.members.iter().map(|&t| a.branches()[t].interval.lo).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(not_spd(format!(
                "condition {gi} probabilities sum to {total}"
            )));
        }
        for s in g.condition.iter() {
            if rows[s].is_some() {
                return Err(not_spd(format!("state {s} satisfies two conditions")));
            }
            let mut row = Vec::with_capacity(g.members.len());
            for &t in &g.members {
                let br = &a.branches()[t];
                let img: Vec<usize> = br.effect.image(s).collect();
                if img.len() != 1 {
                    return Err(not_spd(format!(
                        "branch {t} is nondeterministic at state {s}"
                    )));
                }
                row.push((img[0], br.interval.lo));
            }
            rows[s] = Some(row);
        }
    }
    rows.into_iter()
        .enumerate()
        .map(|(s, r)| r.ok_or_else(|| not_spd(format!("state {s} satisfies no condition"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Branch;
    use crate::state::Effect;

    fn set(n: usize, xs: &[usize]) -> StateSet {
        StateSet::from_indices(n, xs.iter().copied()).unwrap()
    }

    fn iv(lo: f64, hi: f64) -> ProbInterval {
        ProbInterval::new(lo, hi).unwrap()
    }

    fn to(n: usize, target: usize) -> Arc<Effect> {
        Arc::new(Effect::from_images(n, vec![vec![target]; n]).unwrap())
    }

    fn world(n: usize) -> Cma {
        Cma::ima(
            n,
            vec![
                (iv(0.2, 0.6), set(n, &[0, 1])),
                (iv(0.4, 0.8), set(n, &[1, 2, 3])),
            ],
        )
    }

    #[test]
    fn identity_plan_keeps_the_distribution() {
        let id = Arc::new(Action::identity("id", 4));
        let t = sample_exec_plan(&[id.clone(), id], &world(4), 9).unwrap();
        for (a, b) in t.p_post().iter().zip(&t.p_pre) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = check_concrete(
            &[Action::identity("id", 4)],
            &world(4),
            &CheckConfig::new(50, 1),
        )
        .unwrap();
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn absorbing_two_state_action() {
        let a = Action::concrete(
            "move",
            vec![Branch::new(StateSet::full(2), ProbInterval::ONE, to(2, 1))],
        )
        .unwrap();
        let p = spd_project(&[a], &Pd::new(vec![0.3, 0.7]).unwrap()).unwrap();
        assert_eq!(p.probs(), &[0.0, 1.0]);
        let id = Action::identity("id", 2);
        assert_eq!(
            spd_project(&[id], &Pd::new(vec![0.3, 0.7]).unwrap())
                .unwrap()
                .probs(),
            &[0.3, 0.7]
        );
        let wide = Action::concrete(
            "w",
            vec![
                Branch::new(StateSet::full(2), iv(0.5, 1.0), to(2, 1)),
                Branch::new(StateSet::full(2), iv(0.0, 0.5), to(2, 0)),
            ],
        )
        .unwrap();
        assert!(spd_project(&[wide], &Pd::new(vec![0.3, 0.7]).unwrap()).is_err());
    }

    fn noisy(n: usize) -> Action {
        let low = set(n, &[0, 1]);
        let high = low.complement();
        Action::concrete(
            "noisy",
            vec![
                Branch::new(low.clone(), iv(0.3, 0.7), to(n, 2)),
                Branch::new(
                    low,
                    iv(0.3, 0.7),
                    Arc::new(Effect::from_images(n, vec![vec![0, 1]; n]).unwrap()),
                ),
                Branch::new(high.clone(), iv(0.1, 0.5), to(n, 0)),
                Branch::new(
                    high,
                    iv(0.5, 0.9),
                    Arc::new(Effect::from_images(n, vec![vec![2, 3]; n]).unwrap()),
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn projection_contains_sampled_executions() {
        let a = noisy(4);
        let r = check_concrete(
            &[a.clone(), a.clone(), a],
            &world(4),
            &CheckConfig::new(200, 3),
        )
        .unwrap();
        assert!(r.all_passed(), "{:?}", r.first_failure);
        assert!(r.max_conservation_error < 1e-9);
    }

    #[test]
    fn mutated_projector_is_caught() {
        let a = noisy(4);
        let cfg = CheckConfig {
            mutation: Mutation::CollapseEffectIntervals,
            ..CheckConfig::new(200, 3)
        };
        let r = check_concrete(&[a.clone(), a], &world(4), &cfg).unwrap();
        assert!(!r.all_passed());
        assert!(r.first_failure.unwrap().violation.contains("outside"));
        let cfg = CheckConfig {
            mutation: Mutation::ForceOneCondition,
            ..CheckConfig::new(200, 3)
        };
        let r = check_concrete(&[noisy(4)], &world(4), &cfg).unwrap();
        assert!(!r.all_passed());
    }

    #[test]
    fn reports_do_not_depend_on_thread_count() {
        let a = noisy(4);
        let cfg = CheckConfig {
            mutation: Mutation::CollapseEffectIntervals,
            ..CheckConfig::new(64, 11)
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let r1 = one.install(|| check_concrete(std::slice::from_ref(&a), &world(4), &cfg).unwrap());
        let r4 =
            four.install(|| check_concrete(std::slice::from_ref(&a), &world(4), &cfg).unwrap());
        assert_eq!(r1, r4);
    }

    #[test]
    fn abstract_actions_are_not_executable() {
        let a = crate::abstraction::intra_abstract(&noisy(4), &[0, 1]).unwrap();
        assert!(sample_exec_plan(&[Arc::new(a)], &world(4), 0).is_err());
    }
}
