//! Random and structured fixtures for tests, benchmarks and the acceptance
//! suite.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::abstraction::{Hierarchy, HierarchyNode};
use crate::action::{Action, Branch};
use crate::cma::{Cma, Node};
use crate::mass::ProbInterval;
use crate::sampling::dirichlet_weights;
use crate::state::{Effect, StateSet};

/// A random nonempty subset with at most `max` states.
pub fn random_subset<R: Rng + ?Sized>(n: usize, max: usize, rng: &mut R) -> StateSet {
    let size = rng.random_range(1..=max.clamp(1, n));
    let mut states: Vec<usize> = (0..n).collect();
    states.shuffle(rng);
    StateSet::from_indices(n, states.into_iter().take(size)).expect("indices in range")
}

/// Splits Ω into `parts` nonempty blocks.
pub fn random_partition<R: Rng + ?Sized>(n: usize, parts: usize, rng: &mut R) -> Vec<StateSet> {
    let parts = parts.clamp(1, n);
    let mut states: Vec<usize> = (0..n).collect();
    states.shuffle(rng);
    let mut blocks: Vec<Vec<usize>> = states[..parts].iter().map(|&s| vec![s]).collect();
    for &s in &states[parts..] {
        blocks[rng.random_range(0..parts)].push(s);
    }
    blocks
        .into_iter()
        .map(|b| StateSet::from_indices(n, b).expect("indices in range"))
        .collect()
}

/// `k` intervals around a random point of the simplex, so the group is
/// feasible by construction.
pub fn random_intervals<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<ProbInterval> {
    dirichlet_weights(k, rng)
        .into_iter()
        .map(|p| {
            let lo = p * rng.random_range(0.0..=1.0);
            let hi = p + (1.0 - p) * rng.random_range(0.0..=1.0) * 0.5;
            ProbInterval {
                lo,
                hi: hi.min(1.0),
            }
        })
        .collect()
}

pub fn point_intervals<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<ProbInterval> {
    dirichlet_weights(k, rng)
        .into_iter()
        .map(|p| ProbInterval { lo: p, hi: p })
        .collect()
}

/// Every state maps to between 1 and `max_image` random states.
pub fn random_effect<R: Rng + ?Sized>(n: usize, max_image: usize, rng: &mut R) -> Effect {
    let images = (0..n)
        .map(|_| random_subset(n, max_image, rng).to_vec())
        .collect();
    Effect::from_images(n, images).expect("nonempty images")
}

#[derive(Debug, Clone, Copy)]
pub struct ActionShape {
    /// Number of conditions (blocks of the partition).
    pub conditions: usize,
    /// Largest number of branches per condition.
    pub max_branches: usize,
    /// Largest effect image.
    pub max_image: usize,
    pub point_intervals: bool,
}

pub fn random_action<R: Rng + ?Sized>(
    name: &str,
    n: usize,
    shape: ActionShape,
    rng: &mut R,
) -> Action {
    let mut branches = Vec::new();
    for (ci, c) in random_partition(n, shape.conditions, rng)
        .into_iter()
        .enumerate()
    {
        let k = rng.random_range(1..=shape.max_branches.max(1));
        let intervals = if shape.point_intervals {
            point_intervals(k, rng)
        } else {
            random_intervals(k, rng)
        };
        for (bi, iv) in intervals.into_iter().enumerate() {
            let e = Arc::new(random_effect(n, shape.max_image, rng));
            branches.push(Branch::new(c.clone(), iv, e).labeled(format!("{name}.{ci}.{bi}")));
        }
    }
    Action::concrete(name, branches).expect("well-formed random action")
}

/// A random tree with feasible sibling groups and nonempty leaves.
pub fn random_cma<R: Rng + ?Sized>(
    n: usize,
    depth: usize,
    max_children: usize,
    max_leaf: usize,
    rng: &mut R,
) -> Cma {
    fn node<R: Rng + ?Sized>(
        n: usize,
        depth: usize,
        max_children: usize,
        max_leaf: usize,
        rng: &mut R,
    ) -> Node {
        if depth == 0 {
            return Node::Leaf(random_subset(n, max_leaf, rng));
        }
        let k = rng.random_range(1..=max_children.max(1));
        let intervals = random_intervals(k, rng);
        Node::internal(
            intervals
                .into_iter()
                .map(|iv| {
                    let below = if rng.random_bool(0.5) { depth - 1 } else { 0 };
                    (iv, node(n, below, max_children, max_leaf, rng))
                })
                .collect(),
        )
    }
    let root = if depth == 0 {
        Node::Leaf(random_subset(n, max_leaf, rng))
    } else {
        // Keep the root internal so every tree has at least one edge.
        let k = rng.random_range(1..=max_children.max(1));
        Node::internal(
            random_intervals(k, rng)
                .into_iter()
                .map(|iv| (iv, node(n, depth - 1, max_children, max_leaf, rng)))
                .collect(),
        )
    };
    Cma::new(n, root)
}

/// A point-interval IMA over singleton leaves, i.e. a single distribution.
pub fn random_spd_world<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Cma {
    let support = random_subset(n, n, rng).to_vec();
    let weights = dirichlet_weights(support.len(), rng);
    Cma::ima(
        n,
        support
            .into_iter()
            .zip(weights)
            .map(|(s, w)| (ProbInterval { lo: w, hi: w }, StateSet::singleton(n, s)))
            .collect(),
    )
}

/// World and plan for the node-count law: a two-state space, every effect
/// maps to both states, and the conditions are either Ω (t = 1) or the two
/// single states (t = 2), so every leaf meets exactly t conditions.
pub fn node_count_fixture(t: usize, k: usize, steps: usize) -> (Cma, Vec<Action>) {
    assert!(t == 1 || t == 2, "fixture supports t ∈ {{1, 2}}");
    let n = 2;
    let both = Arc::new(Effect::from_images(n, vec![vec![0, 1]; n]).expect("valid images"));
    let conditions: Vec<StateSet> = if t == 1 {
        vec![StateSet::full(n)]
    } else {
        vec![StateSet::singleton(n, 0), StateSet::singleton(n, 1)]
    };
    let p = 1.0 / k as f64;
    let branches: Vec<Branch> = conditions
        .iter()
        .flat_map(|c| {
            (0..k).map(|_| Branch::new(c.clone(), ProbInterval { lo: p, hi: p }, both.clone()))
        })
        .collect();
    let a = Action::concrete(format!("t{t}k{k}"), branches).expect("valid fixture action");
    (Cma::leaf(StateSet::full(n)), vec![a; steps])
}

/// The eight concrete actions A–H used by [`survey_hierarchy`].
pub fn survey_actions<R: Rng + ?Sized>(n: usize, rng: &mut R) -> BTreeMap<String, Arc<Action>> {
    ["A", "B", "C", "D", "E", "F", "G", "H"]
        .iter()
        .map(|&name| {
            let shape = ActionShape {
                conditions: rng.random_range(1..=2),
                max_branches: 3,
                max_image: 2,
                point_intervals: false,
            };
            let mut a = random_action(name, n, shape, rng);
            // L merges branches 0 and 1 of inter(D, E); make sure they exist.
            while name == "D" && a.branches().len() < 2 {
                a = random_action(name, n, shape, rng);
            }
            (name.to_string(), Arc::new(a))
        })
        .collect()
}

/// P = seq(N, L, K), N = inter(A, M), M = inter(B, C), L = intra(inter(D, E)),
/// K = inter(F, G, H). P has 3 · 2 · 3 = 18 concrete instantiations.
pub fn survey_hierarchy() -> Hierarchy {
    let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let inter = |xs: &[&str]| HierarchyNode::Inter {
        children: names(xs),
        pairing: None,
    };
    Hierarchy {
        root: "P".into(),
        nodes: BTreeMap::from([
            ("P".to_string(), HierarchyNode::Seq(names(&["N", "L", "K"]))),
            ("N".to_string(), inter(&["A", "M"])),
            ("M".to_string(), inter(&["B", "C"])),
            ("DE".to_string(), inter(&["D", "E"])),
            (
                "L".to_string(),
                HierarchyNode::Intra {
                    child: "DE".into(),
                    merge: vec![vec![0, 1]],
                },
            ),
            ("K".to_string(), inter(&["F", "G", "H"])),
        ]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{predicted_node_count, project_plan};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_produce_valid_objects() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(1..=16);
            let shape = ActionShape {
                conditions: 3,
                max_branches: 3,
                max_image: 3,
                point_intervals: false,
            };
            let a = random_action("a", n, shape, &mut rng);
            assert!(a.validate().is_ok(), "{}", a.validate());
            let m = random_cma(n, 3, 3, 4, &mut rng);
            assert!(m.validate().is_ok(), "{}", m.validate());
            assert!(random_spd_world(n, &mut rng).validate().is_ok());
            let parts = random_partition(n, 4, &mut rng);
            let total: usize = parts.iter().map(StateSet::count).sum();
            assert_eq!(total, n);
        }
    }

    #[test]
    fn node_count_fixture_matches_formula() {
        for t in 1..=2 {
            for k in 1..=3 {
                for steps in 1..=3 {
                    let (w, plan) = node_count_fixture(t, k, steps);
                    let (_, stats) = project_plan(&plan, &w).unwrap();
                    let expected = predicted_node_count(t as u64, k as u64, steps as u32).unwrap();
                    assert_eq!(stats.node_count as u128, expected, "t={t} k={k} n={steps}");
                }
            }
        }
    }

    #[test]
    fn survey_hierarchy_builds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let actions = survey_actions(6, &mut rng);
        let built = survey_hierarchy().build(&actions).unwrap();
        assert_eq!(built["P"].instantiations().unwrap().len(), 18);
        for d in built.values() {
            assert!(d.action().validate().is_ok(), "{}", d.action().validate());
        }
    }
}
