//! Mass assignments and the set of distributions consistent with them.
//!
//! A distribution P is consistent with m when P(B) ≥ Σ_{C⊆B} m(C) for every
//! B ⊆ Ω. Only unions of focal elements can be binding, and the condition is
//! equivalent to the existence of a transport of each focal mass onto its own
//! states that reproduces P; both forms are implemented.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::dirichlet_weights;
use crate::state::StateSet;

pub const DEFAULT_TOL: f64 = 1e-9;

/// Closed probability interval `[lo, hi] ⊆ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct ProbInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ProbInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn point(p: f64) -> Result<Self> {
        Self::new(p, p)
    }

    pub const ZERO: ProbInterval = ProbInterval { lo: 0.0, hi: 0.0 };
    pub const ONE: ProbInterval = ProbInterval { lo: 1.0, hi: 1.0 };
    pub const UNIT: ProbInterval = ProbInterval { lo: 0.0, hi: 1.0 };

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Smallest interval containing both.
    pub fn hull(&self, other: &Self) -> Self {
        Self {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

impl TryFrom<[f64; 2]> for ProbInterval {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Self::new(v[0], v[1])
    }
}

impl From<ProbInterval> for [f64; 2] {
    fn from(i: ProbInterval) -> Self {
        [i.lo, i.hi]
    }
}

/// A probability distribution over the states of Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pd {
    probs: Vec<f64>,
}

impl Pd {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tol(probs, DEFAULT_TOL)
    }

    pub fn with_tol(probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < -tol) {
            return Err(Error::InvalidDistribution(format!("bad probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn point(universe: usize, state: usize) -> Self {
        let mut probs = vec![0.0; universe];
        probs[state] = 1.0;
        Self { probs }
    }

    pub fn universe(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, state: usize) -> f64 {
        self.probs[state]
    }

    pub fn prob(&self, set: &StateSet) -> f64 {
        set.iter().map(|b| self.probs[b]).sum()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Largest absolute difference between two distributions.
    pub fn max_abs_diff(&self, other: &Pd) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassAssignment {
    universe: usize,
    focals: Vec<(StateSet, f64)>,
}

impl MassAssignment {
    pub fn new(universe: usize, focals: Vec<(StateSet, f64)>) -> Result<Self> {
        Self::with_tol(universe, focals, DEFAULT_TOL)
    }

    pub fn with_tol(universe: usize, focals: Vec<(StateSet, f64)>, tol: f64) -> Result<Self> {
        if focals.is_empty() {
            return Err(Error::InvalidMass("no focal elements".into()));
        }
        for (set, mass) in &focals {
            set.check_universe(universe)?;
            if set.is_empty() {
                return Err(Error::InvalidMass("empty focal element".into()));
            }
            if !(mass.is_finite() && *mass > 0.0) {
                return Err(Error::InvalidMass(format!("non-positive mass {mass}")));
            }
        }
        let total: f64 = focals.iter().map(|(_, m)| m).sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidMass(format!("masses sum to {total}")));
        }
        Ok(Self { universe, focals })
    }

    /// Builds an MA from possibly repeated sets: identical sets are merged by
    /// summing, zero masses are dropped. Order follows first appearance.
    pub fn merged(
        universe: usize,
        pairs: impl IntoIterator<Item = (StateSet, f64)>,
    ) -> Result<Self> {
        let mut focals: Vec<(StateSet, f64)> = Vec::new();
        let mut index: std::collections::HashMap<StateSet, usize> =
            std::collections::HashMap::new();
        for (set, mass) in pairs {
            if mass < 0.0 {
                return Err(Error::InvalidMass(format!("negative mass {mass}")));
            }
            if mass == 0.0 {
                continue;
            }
            match index.get(&set) {
                Some(&i) => focals[i].1 += mass,
                None => {
                    index.insert(set.clone(), focals.len());
                    focals.push((set, mass));
                }
            }
        }
        Self::new(universe, focals)
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn focals(&self) -> &[(StateSet, f64)] {
        &self.focals
    }

    /// Mass of the focal element equal to `set`, zero if absent.
    pub fn mass_of(&self, set: &StateSet) -> f64 {
        self.focals
            .iter()
            .filter(|(s, _)| s == set)
            .map(|(_, m)| m)
            .sum()
    }

    /// Σ m(C) over focal elements C ⊆ B.
    pub fn lower_prob(&self, set: &StateSet) -> Result<f64> {
        set.check_universe(self.universe)?;
        Ok(self
            .focals
            .iter()
            .filter(|(c, _)| c.is_subset(set))
            .map(|(_, m)| m)
            .sum())
    }

    /// Same focal sets with masses equal within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.focals.len() == other.focals.len()
            && self
                .focals
                .iter()
                .all(|(s, m)| (other.mass_of(s) - m).abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyMethod {
    /// Unions of focals while their closure stays small, transport otherwise.
    Auto,
    FocalUnions,
    Transport,
}

const UNION_CLOSURE_LIMIT: usize = 4096;

/// max over B ⊆ Ω of (Σ_{C⊆B} m(C) − P(B)), clipped at zero.
pub fn max_violation(p: &Pd, m: &MassAssignment, method: ConsistencyMethod) -> Result<f64> {
    if p.universe() != m.universe() {
        return Err(Error::SpaceMismatch {
            expected: m.universe(),
            found: p.universe(),
        });
    }
    match method {
        ConsistencyMethod::FocalUnions => {
            Ok(union_violation(p, m, usize::MAX).expect("unbounded closure"))
        }
        ConsistencyMethod::Transport => Ok(transport_violation(p, m)),
        ConsistencyMethod::Auto => Ok(match union_violation(p, m, UNION_CLOSURE_LIMIT) {
            Some(v) => v,
            None => transport_violation(p, m),
        }),
    }
}

pub fn is_consistent(p: &Pd, m: &MassAssignment) -> Result<bool> {
    is_consistent_with(p, m, DEFAULT_TOL)
}

pub fn is_consistent_with(p: &Pd, m: &MassAssignment, tol: f64) -> Result<bool> {
    Ok(max_violation(p, m, ConsistencyMethod::Auto)? <= tol)
}

fn union_violation(p: &Pd, m: &MassAssignment, limit: usize) -> Option<f64> {
    let mut unions: Vec<StateSet> = Vec::new();
    let mut seen: HashSet<StateSet> = HashSet::new();
    for (focal, _) in m.focals() {
        let mut fresh = Vec::new();
        if seen.insert(focal.clone()) {
            fresh.push(focal.clone());
        }
        for u in &unions {
            let w = u.union(focal);
            if seen.insert(w.clone()) {
                fresh.push(w);
            }
        }
        unions.extend(fresh);
        if unions.len() > limit {
            return None;
        }
    }
    let worst = unions
        .iter()
        .map(|b| m.lower_prob(b).expect("same universe") - p.prob(b))
        .fold(0.0, f64::max);
    Some(worst)
}

/// 1 − (max flow) in the network source → focal (cap m(C)) → state in C →
/// sink (cap P(b)). By max-flow/min-cut this equals the largest violation.
fn transport_violation(p: &Pd, m: &MassAssignment) -> f64 {
    let nf = m.focals().len();
    let n = m.universe();
    let source = 0;
    let sink = nf + n + 1;
    let mut net = FlowNetwork::new(nf + n + 2);
    for (i, (set, mass)) in m.focals().iter().enumerate() {
        net.add_edge(source, 1 + i, *mass);
        for b in set.iter() {
            net.add_edge(1 + i, 1 + nf + b, *mass);
        }
    }
    for b in 0..n {
        let pb = p.get(b).max(0.0);
        if pb > 0.0 {
            net.add_edge(1 + nf + b, sink, pb);
        }
    }
    let total: f64 = m.focals().iter().map(|(_, w)| w).sum();
    (total - net.max_flow(source, sink)).max(0.0)
}

/// Dinic's algorithm over f64 capacities.
struct FlowNetwork {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

const FLOW_EPS: f64 = 1e-15;

impl FlowNetwork {
    fn new(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, c: f64) {
        self.adj[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(c);
        self.adj[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(0.0);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let n = self.adj.len();
        let mut flow = 0.0;
        loop {
            let mut level = vec![usize::MAX; n];
            level[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if self.cap[e] > FLOW_EPS && level[v] == usize::MAX {
                        level[v] = level[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if level[t] == usize::MAX {
                return flow;
            }
            let mut next = vec![0usize; n];
            loop {
                let pushed = self.augment(s, t, f64::INFINITY, &level, &mut next);
                if pushed <= FLOW_EPS {
                    break;
                }
                flow += pushed;
            }
        }
    }

    fn augment(
        &mut self,
        u: usize,
        t: usize,
        limit: f64,
        level: &[usize],
        next: &mut [usize],
    ) -> f64 {
        if u == t {
            return limit;
        }
        while next[u] < self.adj[u].len() {
            let e = self.adj[u][next[u]];
            let v = self.to[e];
            if self.cap[e] > FLOW_EPS && level[v] == level[u] + 1 {
                let got = self.augment(v, t, limit.min(self.cap[e]), level, next);
                if got > FLOW_EPS {
                    self.cap[e] -= got;
                    self.cap[e ^ 1] += got;
                    return got;
                }
            }
            next[u] += 1;
        }
        0.0
    }
}

/// Per focal element, how its mass was spread over its member states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub per_focal: Vec<Vec<(usize, f64)>>,
}

/// Splits every focal mass over the focal's states with Dirichlet(1) weights.
/// The result is consistent with `m` by construction.
pub fn sample_consistent_pd<R: Rng + ?Sized>(
    m: &MassAssignment,
    rng: &mut R,
) -> (Pd, AllocationRecord) {
    let mut probs = vec![0.0; m.universe()];
    let mut per_focal = Vec::with_capacity(m.focals().len());
    for (set, mass) in m.focals() {
        let members = set.to_vec();
        let w = dirichlet_weights(members.len(), rng);
        let split: Vec<(usize, f64)> = members
            .iter()
            .zip(&w)
            .map(|(&b, &x)| (b, mass * x))
            .collect();
        for &(b, x) in &split {
            probs[b] += x;
        }
        per_focal.push(split);
    }
    (Pd { probs }, AllocationRecord { per_focal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(n: usize, xs: &[usize]) -> StateSet {
        StateSet::from_indices(n, xs.iter().copied()).unwrap()
    }

    fn overlapping() -> MassAssignment {
        MassAssignment::new(3, vec![(set(3, &[0, 1]), 0.7), (set(3, &[1, 2]), 0.3)]).unwrap()
    }

    #[test]
    fn intervals_validate() {
        assert!(ProbInterval::new(0.2, 0.1).is_err());
        assert!(ProbInterval::new(-0.1, 0.1).is_err());
        assert!(ProbInterval::new(0.0, 1.1).is_err());
        assert!(ProbInterval::new(f64::NAN, 1.0).is_err());
        let i = ProbInterval::new(0.2, 0.4).unwrap();
        assert_eq!(
            i.hull(&ProbInterval::new(0.5, 0.6).unwrap()),
            ProbInterval::new(0.2, 0.6).unwrap()
        );
        let json = serde_json::to_string(&i).unwrap();
        assert_eq!(json, "[0.2,0.4]");
        assert!(serde_json::from_str::<ProbInterval>("[0.5,0.4]").is_err());
    }

    #[test]
    fn mass_assignment_invariants() {
        assert!(MassAssignment::new(3, vec![(set(3, &[]), 1.0)]).is_err());
        assert!(MassAssignment::new(3, vec![(set(3, &[0]), 0.5)]).is_err());
        assert!(MassAssignment::new(3, vec![(set(3, &[0]), 1.5), (set(3, &[1]), -0.5)]).is_err());
        assert!(MassAssignment::new(3, vec![(set(4, &[0]), 1.0)]).is_err());
        let m = MassAssignment::merged(
            3,
            vec![
                (set(3, &[0]), 0.25),
                (set(3, &[1]), 0.0),
                (set(3, &[0]), 0.75),
            ],
        )
        .unwrap();
        assert_eq!(m.focals().len(), 1);
        assert_eq!(m.mass_of(&set(3, &[0])), 1.0);
    }

    #[test]
    fn lower_prob_examples() {
        let m = overlapping();
        assert_eq!(m.lower_prob(&StateSet::full(3)).unwrap(), 1.0);
        assert_eq!(m.lower_prob(&StateSet::empty(3)).unwrap(), 0.0);
        assert_eq!(m.lower_prob(&set(3, &[0, 1])).unwrap(), 0.7);
        assert!(m.lower_prob(&StateSet::empty(4)).is_err());
    }

    #[test]
    fn consistency_examples() {
        let vacuous = MassAssignment::new(2, vec![(StateSet::full(2), 1.0)]).unwrap();
        assert!(is_consistent(&Pd::new(vec![0.3, 0.7]).unwrap(), &vacuous).unwrap());
        let point = MassAssignment::new(2, vec![(set(2, &[0]), 1.0)]).unwrap();
        assert!(!is_consistent(&Pd::new(vec![0.5, 0.5]).unwrap(), &point).unwrap());
        let p = Pd::new(vec![0.4, 0.4, 0.2]).unwrap();
        for method in [
            ConsistencyMethod::FocalUnions,
            ConsistencyMethod::Transport,
            ConsistencyMethod::Auto,
        ] {
            assert!(max_violation(&p, &overlapping(), method).unwrap() <= DEFAULT_TOL);
        }
        let bad = Pd::new(vec![0.1, 0.4, 0.5]).unwrap();
        for method in [ConsistencyMethod::FocalUnions, ConsistencyMethod::Transport] {
            let v = max_violation(&bad, &overlapping(), method).unwrap();
            assert!((v - 0.2).abs() < 1e-12, "{method:?}: {v}");
        }
        assert!(is_consistent(&Pd::new(vec![0.5, 0.5]).unwrap(), &overlapping()).is_err());
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let single = MassAssignment::new(3, vec![(set(3, &[2]), 1.0)]).unwrap();
        let (p, _) = sample_consistent_pd(&single, &mut rng);
        assert_eq!(p, Pd::point(3, 2));
        let full = MassAssignment::new(3, vec![(StateSet::full(3), 1.0)]).unwrap();
        for _ in 0..100 {
            let (p, _) = sample_consistent_pd(&full, &mut rng);
            assert!((p.total() - 1.0).abs() < 1e-12);
            assert!(is_consistent(&p, &full).unwrap());
            let (q, rec) = sample_consistent_pd(&overlapping(), &mut rng);
            assert!(q.prob(&set(3, &[0, 1])) >= 0.7 - 1e-12);
            assert_eq!(rec.per_focal.len(), 2);
        }
    }
}
