//! Greedy CART with Gini impurity.
//!
//! Split scores are compared as exact rationals so that ties are broken by
//! the documented order (lowest feature index, then lowest threshold) and
//! never by floating-point noise.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::tree::{DecisionTree, Node};
use super::{LabeledDataset, TreeParams};
use crate::env::Action;
use crate::features::Feature;

const N_ACTIONS: usize = Action::ALL.len();

type Counts = [u64; N_ACTIONS];

/// `num / den`, compared exactly.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    num: u128,
    den: u128,
}

impl Ratio {
    fn cmp(&self, other: &Ratio) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn sum_sq(c: &Counts) -> u128 {
    c.iter().map(|&x| (x as u128) * (x as u128)).sum()
}

/// `sum_sq(L)/nL + sum_sq(R)/nR`. Weighted child Gini is `1 - score / n`,
/// so maximizing the score minimizes impurity.
fn purity_score(left: &Counts, n_left: u64, right: &Counts, n_right: u64) -> Ratio {
    let (nl, nr) = (n_left as u128, n_right as u128);
    Ratio {
        num: sum_sq(left) * nr + sum_sq(right) * nl,
        den: nl * nr,
    }
}

/// Gini impurity of a class-count vector.
pub fn gini(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: Feature,
    threshold: f64,
    score: Ratio,
}

struct Builder<'a> {
    data: &'a LabeledDataset,
    params: TreeParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Counts {
        let mut c = [0u64; N_ACTIONS];
        for &i in idx {
            c[self.data.rows[i].1.index()] += 1;
        }
        c
    }

    fn best_split(&self, idx: &[usize]) -> Option<Candidate> {
        let n = idx.len() as u64;
        let min_leaf = self.params.min_samples_leaf as u64;
        let mut best: Option<Candidate> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for feature in Feature::ALL {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| {
                let (fv, action) = &self.data.rows[i];
                (fv.get(feature), action.index())
            }));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = [0u64; N_ACTIONS];
            let mut right = [0u64; N_ACTIONS];
            for &(_, a) in &sorted {
                right[a] += 1;
            }
            for j in 0..sorted.len() - 1 {
                let (v, a) = sorted[j];
                left[a] += 1;
                right[a] -= 1;
                let next = sorted[j + 1].0;
                if v == next {
                    continue;
                }
                let n_left = j as u64 + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let score = purity_score(&left, n_left, &right, n_right);
                if best.is_none_or(|b| score.cmp(&b.score) == Ordering::Greater) {
                    best = Some(Candidate {
                        feature,
                        threshold: (v + next) / 2.0,
                        score,
                    });
                }
            }
        }
        best
    }

    fn leaf(&self, counts: &Counts, n: usize) -> Node {
        // max_by_key keeps the last maximum; scan in reverse so the first action wins ties
        let (best, _) = counts
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|(_, c)| **c)
            .expect("non-empty counts");
        let distribution: BTreeMap<Action, f64> = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(a, c)| (Action::ALL[a], *c as f64 / n as f64))
            .collect();
        Node::Leaf {
            action: Action::ALL[best],
            distribution,
            samples: n,
        }
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || depth >= self.params.max_depth {
            None
        } else {
            self.best_split(&idx)
        };
        let Some(split) = split else {
            let leaf = self.leaf(&counts, idx.len());
            self.nodes.push(leaf);
            return id;
        };

        // placeholder, patched once the children exist
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.data.rows[i].0.get(split.feature) <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        if let Node::Split {
            left: lslot,
            right: rslot,
            ..
        } = &mut self.nodes[id]
        {
            *lslot = left;
            *rslot = right;
        }
        id
    }
}

pub(super) fn fit(data: &LabeledDataset, params: TreeParams) -> DecisionTree {
    let mut b = Builder {
        data,
        params,
        nodes: Vec::new(),
    };
    b.build((0..data.rows.len()).collect(), 0);
    DecisionTree::from_nodes(b.nodes)
}
