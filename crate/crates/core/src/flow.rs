//! Backward object-flow slicing over seed paths.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::AnalysisError;
use crate::seed::{Analysis, SeedPath, StatementNode};
use crate::trace::RefId;

/// Used and mutated object sets of one path position.
pub trait RefSets {
    fn used(&self) -> &BTreeSet<RefId>;
    fn mutated(&self) -> &BTreeSet<RefId>;
}

impl RefSets for StatementNode {
    fn used(&self) -> &BTreeSet<RefId> {
        &self.used_refs
    }

    fn mutated(&self) -> &BTreeSet<RefId> {
        &self.mutated_refs
    }
}

impl<T: RefSets> RefSets for &T {
    fn used(&self) -> &BTreeSet<RefId> {
        (*self).used()
    }

    fn mutated(&self) -> &BTreeSet<RefId> {
        (*self).mutated()
    }
}

/// Plain (used, mutated) pair, handy for synthetic paths.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefSetPair {
    pub used: BTreeSet<RefId>,
    pub mutated: BTreeSet<RefId>,
}

impl RefSets for RefSetPair {
    fn used(&self) -> &BTreeSet<RefId> {
        &self.used
    }

    fn mutated(&self) -> &BTreeSet<RefId> {
        &self.mutated
    }
}

/// Statements feeding the seed at path index `seed`, by path index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowSlice {
    pub seed: usize,
    /// Ascending path indices.
    pub deps: Vec<usize>,
    /// `(l, n)`: statement `n` uses an object mutated by earlier statement `l`.
    pub edges: Vec<(usize, usize)>,
}

/// Worklist closure of the mutates-before-use relation, backwards from `seed`.
pub fn slice_indices<S: RefSets>(stmts: &[S], seed: usize) -> FlowSlice {
    let mut in_slice = vec![false; stmts.len()];
    let mut worklist = vec![seed];
    let mut edges = BTreeSet::new();
    while let Some(n) = worklist.pop() {
        let used = stmts[n].used();
        if used.is_empty() {
            continue;
        }
        for l in (0..n).rev() {
            if stmts[l].mutated().is_disjoint(used) {
                continue;
            }
            edges.insert((l, n));
            if !in_slice[l] {
                in_slice[l] = true;
                worklist.push(l);
            }
        }
    }
    FlowSlice {
        seed,
        deps: (0..stmts.len()).filter(|&i| in_slice[i]).collect(),
        edges: edges.into_iter().collect(),
    }
}

/// Slice of `path` for the DEP-bearing statement at index `k`.
pub fn compute_slice(analysis: &Analysis, path: &SeedPath, k: usize) -> Result<FlowSlice, AnalysisError> {
    let Some(&stmt) = path.statements.get(k) else {
        return Err(AnalysisError::Usage(format!(
            "seed index {k} out of bounds for path of {} statements",
            path.statements.len()
        )));
    };
    if !analysis.has_dep(stmt) {
        return Err(AnalysisError::Usage(format!(
            "statement at index {k} spawned no dependency context"
        )));
    }
    Ok(slice_indices(&analysis.path_statements(path), k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(used: &[RefId], mutated: &[RefId]) -> RefSetPair {
        RefSetPair {
            used: used.iter().copied().collect(),
            mutated: mutated.iter().copied().collect(),
        }
    }

    #[test]
    fn transitive_chain() {
        let path = vec![pair(&[], &[1]), pair(&[1], &[2]), pair(&[2], &[])];
        let s = slice_indices(&path, 2);
        assert_eq!(s.deps, vec![0, 1]);
        assert_eq!(s.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn primitive_seed_has_empty_slice() {
        let path = vec![pair(&[], &[1]), pair(&[], &[])];
        assert!(slice_indices(&path, 1).deps.is_empty());
    }

    #[test]
    fn later_statements_and_self_edges_are_ignored() {
        let path = vec![pair(&[], &[3]), pair(&[1], &[1]), pair(&[1], &[]), pair(&[], &[1])];
        let s = slice_indices(&path, 1);
        assert!(s.deps.is_empty());
        let s = slice_indices(&path, 2);
        assert_eq!(s.deps, vec![1]);
    }
}
