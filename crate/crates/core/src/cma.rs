//! Constraint mass assignments: interval-weighted trees over state sets.
//!
//! A CMA encodes the set of mass assignments obtained by putting a number on
//! every edge (inside the edge interval, siblings summing to one) and giving
//! each leaf the product of the numbers on its root path. An IMA is a CMA of
//! depth one.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mass::{MassAssignment, ProbInterval, DEFAULT_TOL};
use crate::report::ValidationReport;
use crate::sampling::{group_feasible, sample_box_simplex};
use crate::state::{StateSet, StateSpace};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(StateSet),
    Internal(Vec<Edge>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub interval: ProbInterval,
    pub node: Node,
}

impl Edge {
    pub fn new(interval: ProbInterval, node: Node) -> Self {
        Self { interval, node }
    }
}

impl Node {
    pub fn internal(edges: Vec<(ProbInterval, Node)>) -> Self {
        Node::Internal(edges.into_iter().map(|(i, n)| Edge::new(i, n)).collect())
    }

    fn count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Internal(es) => 1 + es.iter().map(|e| e.node.count()).sum::<usize>(),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Internal(es) => 1 + es.iter().map(|e| e.node.depth()).max().unwrap_or(0),
        }
    }

    fn edge_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Internal(es) => es.len() + es.iter().map(|e| e.node.edge_count()).sum::<usize>(),
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a StateSet>) {
        match self {
            Node::Leaf(s) => out.push(s),
            Node::Internal(es) => es.iter().for_each(|e| e.node.collect_leaves(out)),
        }
    }
}

/// One number per edge of a CMA tree, in preorder (an edge's number comes
/// before the numbers of the subtree below it).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NumberAssignment {
    pub numbers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cma {
    universe: usize,
    root: Node,
}

/// Per-state utility values.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityFn {
    values: Vec<f64>,
}

impl UtilityFn {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("utility values must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| scale * v + shift).collect(),
        }
    }

    fn bounds_on(&self, set: &StateSet) -> (f64, f64) {
        set.iter()
            .map(|b| self.values[b])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl Cma {
    /// Wraps a tree without validating it; see [`Cma::validate`].
    pub fn new(universe: usize, root: Node) -> Self {
        Self { universe, root }
    }

    /// The depth-zero world whose only focal element is `set`.
    pub fn leaf(set: StateSet) -> Self {
        Self {
            universe: set.universe(),
            root: Node::Leaf(set),
        }
    }

    pub fn ima(universe: usize, branches: Vec<(ProbInterval, StateSet)>) -> Self {
        Self::new(
            universe,
            Node::internal(
                branches
                    .into_iter()
                    .map(|(i, s)| (i, Node::Leaf(s)))
                    .collect(),
            ),
        )
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.root.count()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn edge_count(&self) -> usize {
        self.root.edge_count()
    }

    pub fn is_ima(&self) -> bool {
        match &self.root {
            Node::Leaf(_) => false,
            Node::Internal(es) => es.iter().all(|e| matches!(e.node, Node::Leaf(_))),
        }
    }

    /// Leaf sets in depth-first order.
    pub fn leaves(&self) -> Vec<&StateSet> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(DEFAULT_TOL)
    }

    pub fn validate_with(&self, tol: f64) -> ValidationReport {
        let mut report = ValidationReport::default();
        validate_node(&self.root, self.universe, "root", tol, &mut report);
        report
    }

    fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        let first = report
            .errors()
            .next()
            .map(|i| format!("{}: {}", i.path, i.message));
        match first {
            None => Ok(()),
            Some(msg) => Err(Error::InvalidCma(msg)),
        }
    }

    /// Draws one member MA together with the numbers that generate it.
    pub fn sample_ma<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(MassAssignment, NumberAssignment)> {
        self.ensure_valid()?;
        let mut numbers = Vec::with_capacity(self.edge_count());
        sample_node(&self.root, rng, &mut numbers)?;
        let witness = NumberAssignment { numbers };
        let m = self.induced_ma(&witness)?;
        Ok((m, witness))
    }

    /// (leaf set, path product) for every leaf, in depth-first order.
    pub fn leaf_masses(&self, witness: &NumberAssignment) -> Result<Vec<(&StateSet, f64)>> {
        if witness.numbers.len() != self.edge_count() {
            return Err(Error::WitnessShape(format!(
                "{} numbers for {} edges",
                witness.numbers.len(),
                self.edge_count()
            )));
        }
        let mut out = Vec::new();
        let mut cursor = 0;
        collect_masses(&self.root, 1.0, &witness.numbers, &mut cursor, &mut out);
        Ok(out)
    }

    /// The MA generated by `witness`: path products, equal sets merged, zero
    /// masses dropped.
    pub fn induced_ma(&self, witness: &NumberAssignment) -> Result<MassAssignment> {
        let masses = self.leaf_masses(witness)?;
        MassAssignment::merged(
            self.universe,
            masses.into_iter().map(|(s, w)| (s.clone(), w)),
        )
    }

    pub fn contains_ma(&self, m: &MassAssignment, witness: &NumberAssignment) -> Result<bool> {
        Ok(self.witness_violation(m, witness, DEFAULT_TOL)?.is_none())
    }

    /// First constraint that `witness` breaks for `m ∈ self`, if any.
    pub fn witness_violation(
        &self,
        m: &MassAssignment,
        witness: &NumberAssignment,
        tol: f64,
    ) -> Result<Option<String>> {
        if m.universe() != self.universe {
            return Err(Error::SpaceMismatch {
                expected: self.universe,
                found: m.universe(),
            });
        }
        let masses = self.leaf_masses(witness)?;
        let mut cursor = 0;
        if let Some(v) = check_numbers(&self.root, &witness.numbers, &mut cursor, "root", tol) {
            return Ok(Some(v));
        }
        let induced = match MassAssignment::merged(
            self.universe,
            masses.into_iter().map(|(s, w)| (s.clone(), w)),
        ) {
            Ok(ma) => ma,
            Err(e) => return Ok(Some(format!("path products do not form an MA: {e}"))),
        };
        if !induced.approx_eq(m, tol) {
            return Ok(Some(
                "path products do not reproduce the focal masses".into(),
            ));
        }
        Ok(None)
    }

    /// Collapses the tree into an IMA with one branch per root-to-leaf path,
    /// interval endpoints multiplied along the path.
    pub fn flatten(&self) -> Result<Cma> {
        self.ensure_valid()?;
        let mut branches = Vec::new();
        flatten_node(&self.root, 1.0, 1.0, &mut branches);
        let flat = Cma::new(
            self.universe,
            Node::Internal(
                branches
                    .into_iter()
                    .map(|(lo, hi, s)| {
                        Edge::new(
                            ProbInterval {
                                lo,
                                hi: hi.min(1.0),
                            },
                            Node::Leaf(s),
                        )
                    })
                    .collect(),
            ),
        );
        flat.ensure_valid()?;
        Ok(flat)
    }

    /// Witness for `m ∈ self.flatten()` given a witness for `m ∈ self`: the
    /// path products become the flat branch numbers.
    pub fn flatten_witness(&self, witness: &NumberAssignment) -> Result<NumberAssignment> {
        Ok(NumberAssignment {
            numbers: self
                .leaf_masses(witness)?
                .into_iter()
                .map(|(_, w)| w)
                .collect(),
        })
    }

    /// Bounds [lo, hi] on the expected utility of every distribution in ℘(M).
    pub fn eu_interval(&self, u: &UtilityFn) -> Result<(f64, f64)> {
        self.ensure_valid()?;
        if u.values.len() != self.universe {
            return Err(Error::SpaceMismatch {
                expected: self.universe,
                found: u.values.len(),
            });
        }
        Ok(eu_node(&self.root, u))
    }

    pub fn to_dot(&self, space: &StateSpace) -> String {
        let mut out = String::from("digraph cma {\n  node [fontname=\"Helvetica\"];\n");
        let mut next = 0;
        dot_node(&self.root, space, &mut next, &mut out);
        out.push_str("}\n");
        out
    }
}

fn validate_node(
    node: &Node,
    universe: usize,
    path: &str,
    tol: f64,
    report: &mut ValidationReport,
) {
    match node {
        Node::Leaf(s) => {
            if s.universe() != universe {
                report.error(
                    path,
                    format!("leaf over {} states in a space of {universe}", s.universe()),
                );
            } else if s.is_empty() {
                report.error(path, "empty leaf set");
            }
        }
        Node::Internal(es) => {
            if es.is_empty() {
                report.error(path, "internal node without children");
                return;
            }
            let intervals: Vec<ProbInterval> = es.iter().map(|e| e.interval).collect();
            if !group_feasible(&intervals, tol) {
                let lo: f64 = intervals.iter().map(|i| i.lo).sum();
                let hi: f64 = intervals.iter().map(|i| i.hi).sum();
                report.error(
                    path,
                    format!("infeasible sibling group: Σlo = {lo}, Σhi = {hi}"),
                );
            }
            for (i, e) in es.iter().enumerate() {
                validate_node(&e.node, universe, &format!("{path}/{i}"), tol, report);
            }
        }
    }
}

fn sample_node<R: Rng + ?Sized>(node: &Node, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
    if let Node::Internal(es) = node {
        let intervals: Vec<ProbInterval> = es.iter().map(|e| e.interval).collect();
        let xs = sample_box_simplex(&intervals, rng)?;
        for (e, x) in es.iter().zip(xs) {
            out.push(x);
            sample_node(&e.node, rng, out)?;
        }
    }
    Ok(())
}

fn collect_masses<'a>(
    node: &'a Node,
    acc: f64,
    nums: &[f64],
    cursor: &mut usize,
    out: &mut Vec<(&'a StateSet, f64)>,
) {
    match node {
        Node::Leaf(s) => out.push((s, acc)),
        Node::Internal(es) => {
            for e in es {
                let x = nums[*cursor];
                *cursor += 1;
                collect_masses(&e.node, acc * x, nums, cursor, out);
            }
        }
    }
}

fn check_numbers(
    node: &Node,
    nums: &[f64],
    cursor: &mut usize,
    path: &str,
    tol: f64,
) -> Option<String> {
    let Node::Internal(es) = node else {
        return None;
    };
    let mut sum = 0.0;
    let mut children = Vec::with_capacity(es.len());
    for (i, e) in es.iter().enumerate() {
        let x = nums[*cursor];
        *cursor += 1;
        if !e.interval.contains(x, tol) {
            return Some(format!(
                "{path}/{i}: number {x} outside [{}, {}]",
                e.interval.lo, e.interval.hi
            ));
        }
        sum += x;
        let sub = format!("{path}/{i}");
        if let Some(v) = check_numbers(&e.node, nums, cursor, &sub, tol) {
            return Some(v);
        }
        children.push(i);
    }
    if (sum - 1.0).abs() > tol {
        return Some(format!("{path}: sibling numbers sum to {sum}"));
    }
    None
}

fn flatten_node(node: &Node, lo: f64, hi: f64, out: &mut Vec<(f64, f64, StateSet)>) {
    match node {
        Node::Leaf(s) => out.push((lo, hi, s.clone())),
        Node::Internal(es) => {
            for e in es {
                flatten_node(&e.node, lo * e.interval.lo, hi * e.interval.hi, out);
            }
        }
    }
}

fn eu_node(node: &Node, u: &UtilityFn) -> (f64, f64) {
    match node {
        Node::Leaf(s) => u.bounds_on(s),
        Node::Internal(es) => {
            let bounds: Vec<(ProbInterval, (f64, f64))> = es
                .iter()
                .map(|e| (e.interval, eu_node(&e.node, u)))
                .collect();
            let lows: Vec<(ProbInterval, f64)> = bounds.iter().map(|(i, b)| (*i, b.0)).collect();
            let highs: Vec<(ProbInterval, f64)> = bounds.iter().map(|(i, b)| (*i, -b.1)).collect();
            (greedy_min(&lows), -greedy_min(&highs))
        }
    }
}

/// min Σ p_c·v_c over p in the box with Σ p = 1: start every p at its lower
/// bound and pour the rest into the cheapest children first.
fn greedy_min(children: &[(ProbInterval, f64)]) -> f64 {
    let mut order: Vec<usize> = (0..children.len()).collect();
    order.sort_by(|&a, &b| children[a].1.total_cmp(&children[b].1));
    let mut rest = 1.0 - children.iter().map(|(i, _)| i.lo).sum::<f64>();
    let mut value: f64 = children.iter().map(|(i, v)| i.lo * v).sum();
    for c in order {
        if rest <= 0.0 {
            break;
        }
        let (iv, v) = children[c];
        let add = iv.width().min(rest);
        value += add * v;
        rest -= add;
    }
    value
}

fn dot_node(node: &Node, space: &StateSpace, next: &mut usize, out: &mut String) -> usize {
    let id = *next;
    *next += 1;
    match node {
        Node::Leaf(s) => {
            let label = space.describe(s).replace('"', "\\\"");
            let _ = writeln!(out, "  n{id} [shape=box, label=\"{label}\"];");
        }
        Node::Internal(es) => {
            let _ = writeln!(out, "  n{id} [shape=circle, label=\"\"];");
            for e in es {
                let child = dot_node(&e.node, space, next, out);
                let _ = writeln!(
                    out,
                    "  n{id} -> n{child} [label=\"[{},{}]\"];",
                    e.interval.lo, e.interval.hi
                );
            }
        }
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Attribute;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iv(lo: f64, hi: f64) -> ProbInterval {
        ProbInterval::new(lo, hi).unwrap()
    }

    fn set(n: usize, xs: &[usize]) -> StateSet {
        StateSet::from_indices(n, xs.iter().copied()).unwrap()
    }

    fn leaf(n: usize, xs: &[usize]) -> Node {
        Node::Leaf(set(n, xs))
    }

    #[test]
    fn validation_examples() {
        assert!(Cma::leaf(StateSet::full(4)).validate().is_ok());
        let over = Cma::ima(
            3,
            vec![(iv(0.6, 0.7), set(3, &[0])), (iv(0.5, 0.9), set(3, &[1]))],
        );
        let r = over.validate();
        assert!(!r.is_ok());
        assert!(r.issues[0].message.contains("infeasible"));
        let under = Cma::ima(
            3,
            vec![(iv(0.0, 0.3), set(3, &[0])), (iv(0.0, 0.4), set(3, &[1]))],
        );
        assert!(!under.validate().is_ok());
        let empty_leaf = Cma::ima(3, vec![(iv(1.0, 1.0), set(3, &[]))]);
        assert_eq!(empty_leaf.validate().issues[0].path, "root/0");
        assert!(!Cma::new(3, Node::Internal(vec![])).validate().is_ok());
    }

    #[test]
    fn forced_and_point_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let forced = Cma::ima(3, vec![(iv(1.0, 1.0), set(3, &[1, 2]))]);
        let (m, _) = forced.sample_ma(&mut rng).unwrap();
        assert_eq!(m.focals(), &[(set(3, &[1, 2]), 1.0)]);
        let point = Cma::ima(
            3,
            vec![
                (iv(0.3, 0.3), set(3, &[0])),
                (iv(0.7, 0.7), set(3, &[1, 2])),
            ],
        );
        for _ in 0..50 {
            let (m, w) = point.sample_ma(&mut rng).unwrap();
            assert!((m.mass_of(&set(3, &[0])) - 0.3).abs() < 1e-12);
            assert!((m.mass_of(&set(3, &[1, 2])) - 0.7).abs() < 1e-12);
            assert!(point.contains_ma(&m, &w).unwrap());
        }
    }

    /// Depth-3 tree in the style of the fuel example: the bold numbers pick
    /// one member MA, leaves with equal sets merge.
    #[test]
    fn depth_three_generation_mechanism() {
        let n = 6;
        let tree = Cma::new(
            n,
            Node::internal(vec![
                (
                    iv(0.5, 0.7),
                    Node::internal(vec![
                        (iv(0.2, 0.4), leaf(n, &[0, 1])),
                        (
                            iv(0.6, 0.8),
                            Node::internal(vec![
                                (iv(0.5, 1.0), leaf(n, &[2])),
                                (iv(0.0, 0.5), leaf(n, &[3, 4])),
                            ]),
                        ),
                    ]),
                ),
                (
                    iv(0.3, 0.5),
                    Node::internal(vec![(iv(1.0, 1.0), leaf(n, &[0, 1]))]),
                ),
            ]),
        );
        assert!(tree.validate().is_ok());
        assert_eq!(tree.depth(), 3);
        // Preorder: 0.6, 0.25, 0.75, 0.8, 0.2, 0.4, 1.0
        let w = NumberAssignment {
            numbers: vec![0.6, 0.25, 0.75, 0.8, 0.2, 0.4, 1.0],
        };
        let m = tree.induced_ma(&w).unwrap();
        assert!((m.mass_of(&set(n, &[0, 1])) - (0.6 * 0.25 + 0.4)).abs() < 1e-12);
        assert!((m.mass_of(&set(n, &[2])) - 0.6 * 0.75 * 0.8).abs() < 1e-12);
        assert!((m.mass_of(&set(n, &[3, 4])) - 0.6 * 0.75 * 0.2).abs() < 1e-12);
        assert!(tree.contains_ma(&m, &w).unwrap());
    }

    #[test]
    fn contains_ma_checks_every_constraint() {
        let tree = Cma::ima(
            3,
            vec![
                (iv(0.2, 0.5), set(3, &[0])),
                (iv(0.5, 0.8), set(3, &[1, 2])),
            ],
        );
        let m = MassAssignment::new(3, vec![(set(3, &[0]), 0.4), (set(3, &[1, 2]), 0.6)]).unwrap();
        assert!(tree
            .contains_ma(
                &m,
                &NumberAssignment {
                    numbers: vec![0.4, 0.6]
                }
            )
            .unwrap());
        let out =
            MassAssignment::new(3, vec![(set(3, &[0]), 0.1), (set(3, &[1, 2]), 0.9)]).unwrap();
        assert!(!tree
            .contains_ma(
                &out,
                &NumberAssignment {
                    numbers: vec![0.1, 0.9]
                }
            )
            .unwrap());
        assert!(!tree
            .contains_ma(
                &m,
                &NumberAssignment {
                    numbers: vec![0.45, 0.6]
                }
            )
            .unwrap());
        assert!(!tree
            .contains_ma(
                &m,
                &NumberAssignment {
                    numbers: vec![0.45, 0.55]
                }
            )
            .unwrap());
        assert!(tree
            .contains_ma(&m, &NumberAssignment { numbers: vec![0.4] })
            .is_err());
    }

    #[test]
    fn flatten_examples() {
        let ima = Cma::ima(
            3,
            vec![
                (iv(0.2, 0.5), set(3, &[0])),
                (iv(0.5, 0.8), set(3, &[1, 2])),
            ],
        );
        assert_eq!(ima.flatten().unwrap(), ima);
        let tree = Cma::new(
            3,
            Node::internal(vec![
                (
                    iv(0.5, 0.6),
                    Node::internal(vec![
                        (iv(0.2, 0.4), leaf(3, &[0])),
                        (iv(0.6, 0.8), leaf(3, &[1])),
                    ]),
                ),
                (iv(0.4, 0.5), leaf(3, &[2])),
            ]),
        );
        let flat = tree.flatten().unwrap();
        let Node::Internal(es) = flat.root() else {
            panic!()
        };
        assert_eq!(es.len(), 3);
        assert!((es[0].interval.lo - 0.10).abs() < 1e-12);
        assert!((es[0].interval.hi - 0.24).abs() < 1e-12);
        let single = Cma::leaf(set(3, &[1])).flatten().unwrap();
        assert!(single.is_ima());
    }

    #[test]
    fn eu_examples() {
        let u = UtilityFn::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(Cma::leaf(set(4, &[2])).eu_interval(&u).unwrap(), (2.0, 2.0));
        assert_eq!(
            Cma::ima(4, vec![(iv(1.0, 1.0), set(4, &[0, 1, 3]))])
                .eu_interval(&u)
                .unwrap(),
            (0.0, 3.0)
        );
        let two = Cma::ima(
            4,
            vec![
                (iv(0.2, 0.6), set(4, &[0, 1])),
                (iv(0.4, 0.8), set(4, &[2, 3])),
            ],
        );
        let (lo, hi) = two.eu_interval(&u).unwrap();
        assert!((lo - 0.8).abs() < 1e-12, "{lo}");
        assert!((hi - 2.6).abs() < 1e-12, "{hi}");
        assert!(two
            .eu_interval(&UtilityFn::new(vec![0.0; 3]).unwrap())
            .is_err());
    }

    #[test]
    fn counts_and_dot() {
        assert_eq!(
            (
                Cma::leaf(set(2, &[0])).node_count(),
                Cma::leaf(set(2, &[0])).depth()
            ),
            (1, 0)
        );
        let two = Cma::ima(
            2,
            vec![(iv(0.5, 0.5), set(2, &[0])), (iv(0.5, 0.5), set(2, &[1]))],
        );
        assert_eq!((two.node_count(), two.depth()), (3, 1));
        fn perfect(branching: usize, depth: usize) -> Node {
            if depth == 0 {
                return leaf(1, &[0]);
            }
            let p = 1.0 / branching as f64;
            Node::internal(
                (0..branching)
                    .map(|_| (iv(p, p), perfect(branching, depth - 1)))
                    .collect(),
            )
        }
        assert_eq!(Cma::new(1, perfect(4, 2)).node_count(), 21);
        let space = StateSpace::new(vec![Attribute::range("x", 0, 1)]).unwrap();
        let dot = two.to_dot(&space);
        assert!(dot.contains("[label=\"[0.5,0.5]\"]"));
        assert!(dot.contains("x∈{0}"));
    }
}
