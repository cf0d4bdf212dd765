//! Topology rearrangements used by the sampler.
//!
//! Moves never touch the root or its two children, except the root move
//! itself, so a canonical unrooted tree stays canonical and the branches at
//! the root are only re-hung deliberately. Subtrees carry their branch and
//! node id with them.

use super::Phylogeny;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NniMove {
    /// Lower end of the internal branch crossed.
    pub v: usize,
    /// Former sibling of `v`, now its child.
    pub down: usize,
    /// Former child of `v`, now its sibling.
    pub up: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SprMove {
    pub pruned: usize,
    /// Node carried with the pruned subtree; it receives a new branch.
    pub attach: usize,
    /// Former sibling whose branch absorbed the old attachment branch.
    pub old_sibling: usize,
    pub old_parent: usize,
    pub target: usize,
    /// ln of ℓ_target / (ℓ_sibling + ℓ_attach).
    pub log_jacobian: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootMove {
    /// Grandchild of the root that became a root child.
    pub x: usize,
    /// Former parent of `x`; remains a root child.
    pub pivot: usize,
    /// Former root child now hanging below `pivot` on the merged branch.
    pub demoted: usize,
    /// ln of ℓ_x / (ℓ_pivot + ℓ_demoted).
    pub log_jacobian: f64,
}

impl Phylogeny {
    fn replace_child(&mut self, parent: usize, old: usize, new: usize) {
        let kids = self.nodes[parent].children.as_mut().expect("internal node");
        if kids[0] == old {
            kids[0] = new;
        } else {
            debug_assert_eq!(kids[1], old);
            kids[1] = new;
        }
        self.nodes[new].parent = Some(parent);
    }

    /// Internal vertices whose parent is neither absent nor the root.
    pub fn nni_candidates(&self) -> Vec<usize> {
        (self.n_leaves()..self.n_nodes())
            .filter(|&v| matches!(self.nodes[v].parent, Some(p) if p != self.root))
            .collect()
    }

    /// Exchanges the sibling of `v` with child `which` (0 or 1) of `v`.
    pub fn apply_nni(&mut self, v: usize, which: usize) -> Result<NniMove> {
        if !self.nni_candidates().contains(&v) || which > 1 {
            return Err(Error::InvalidTree(format!("no NNI at node {v}")));
        }
        let p = self.nodes[v].parent.unwrap();
        let s = self.sibling(v).unwrap();
        let a = self.nodes[v].children.unwrap()[which];
        self.replace_child(p, s, a);
        self.replace_child(v, a, s);
        Ok(NniMove { v, down: s, up: a })
    }

    /// Subtrees that may be pruned: their parent is below a root child.
    pub fn spr_prune_candidates(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&s| match self.nodes[s].parent {
                Some(p) => p != self.root && !self.is_root_child(p),
                None => false,
            })
            .collect()
    }

    /// Regraft targets for pruning `s`: every branch of the remaining tree
    /// below the root children. Includes the sibling, which undoes the prune.
    pub fn spr_targets(&self, s: usize) -> Vec<usize> {
        let p = match self.nodes[s].parent {
            Some(p) => p,
            None => return Vec::new(),
        };
        (0..self.n_nodes())
            .filter(|&r| r != self.root && r != p && !self.is_root_child(r) && !self.is_descendant(r, s))
            .collect()
    }

    /// Prunes `s` together with its parent and regrafts onto the branch
    /// above `r`, leaving fraction `u` of that branch below the graft point.
    pub fn apply_spr(&mut self, s: usize, r: usize, u: f64) -> Result<SprMove> {
        if !self.spr_prune_candidates().contains(&s) || !self.spr_targets(s).contains(&r) {
            return Err(Error::InvalidTree(format!("invalid SPR {s} -> {r}")));
        }
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidParameter(format!("split fraction {u}")));
        }
        let p = self.nodes[s].parent.unwrap();
        let t = self.sibling(s).unwrap();
        let g = self.nodes[p].parent.unwrap();
        let merged = self.nodes[t].length + self.nodes[p].length;
        self.replace_child(g, p, t);
        self.nodes[t].length = merged;

        let lr = self.nodes[r].length;
        let gr = self.nodes[r].parent.unwrap();
        self.replace_child(gr, r, p);
        let kids = self.nodes[p].children.as_mut().unwrap();
        if kids[0] == s {
            kids[1] = r;
        } else {
            kids[0] = r;
        }
        self.nodes[r].parent = Some(p);
        self.nodes[r].length = u * lr;
        self.nodes[p].length = (1.0 - u) * lr;
        Ok(SprMove {
            pruned: s,
            attach: p,
            old_sibling: t,
            old_parent: g,
            target: r,
            log_jacobian: lr.ln() - merged.ln(),
        })
    }

    /// Grandchildren of the root: the branches the root may move onto.
    pub fn root_move_candidates(&self) -> Vec<usize> {
        self.root_children().iter().filter_map(|&c| self.nodes[c].children).flatten().collect()
    }

    /// Moves the root onto the branch above grandchild `x`, leaving fraction
    /// `u` of it below the root; the old root branches merge.
    pub fn apply_root_move(&mut self, x: usize, u: f64) -> Result<RootMove> {
        if !self.root_move_candidates().contains(&x) {
            return Err(Error::InvalidTree(format!("node {x} is not a grandchild of the root")));
        }
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidParameter(format!("split fraction {u}")));
        }
        let l = self.nodes[x].parent.unwrap();
        let r = self.sibling(l).unwrap();
        let lx = self.nodes[x].length;
        let merged = self.nodes[l].length + self.nodes[r].length;
        let root = self.root;
        // x takes r's place at the root, r takes x's place under l
        self.replace_child(root, r, x);
        self.replace_child(l, x, r);
        self.nodes[x].length = u * lx;
        self.nodes[l].length = (1.0 - u) * lx;
        self.nodes[r].length = merged;
        Ok(RootMove { x, pivot: l, demoted: r, log_jacobian: lx.ln() - merged.ln() })
    }
}

#[cfg(test)]
mod tests {
    use super::super::splits::{splits_of, unrooted_lengths};
    use super::super::tests::names;
    use super::super::{parse_newick, serialize_newick, Split};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn topology(t: &Phylogeny, rooted: bool) -> Vec<Split> {
        splits_of(t, rooted).into_iter().filter(|s| !s.is_trivial()).collect()
    }

    #[test]
    fn nni_four_leaves_reaches_both_alternatives() {
        let t = parse_newick("(A:1,((B:1,C:1):1,D:1):0);").unwrap();
        let start = topology(&t, false);
        let cands = t.nni_candidates();
        assert_eq!(cands.len(), 1);
        let mut seen = BTreeSet::new();
        for which in 0..2 {
            let mut u = t.clone();
            u.apply_nni(cands[0], which).unwrap();
            assert!(u.is_canonical_unrooted());
            let top = topology(&u, false);
            assert_ne!(top, start);
            seen.insert(top);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn spr_onto_sibling_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = Phylogeny::random_rooted(names(8), 2.0, &mut rng).unwrap();
        for s in t.spr_prune_candidates() {
            let mut u = t.clone();
            let sib = t.sibling(s).unwrap();
            let lsum = t.length(sib) + t.length(t.parent(s).unwrap());
            let mv = u.apply_spr(s, sib, 0.25).unwrap();
            assert_eq!(topology(&u, true), topology(&t, true));
            assert!(mv.log_jacobian.abs() < 1e-12);
            assert!((u.length(sib) - 0.25 * lsum).abs() < 1e-12);
        }
    }

    #[test]
    fn spr_reverse_restores_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let t = Phylogeny::random_rooted(names(9), 2.0, &mut rng).unwrap();
            let cands = t.spr_prune_candidates();
            if cands.is_empty() {
                continue;
            }
            let s = cands[rng.random_range(0..cands.len())];
            let targets = t.spr_targets(s);
            let r = targets[rng.random_range(0..targets.len())];
            let mut u = t.clone();
            let mv = u.apply_spr(s, r, rng.random()).unwrap();
            assert_eq!(u.postorder().len(), u.n_nodes());
            assert_eq!(u.spr_targets(s).len(), targets.len());
            let t_len = t.length(mv.old_sibling);
            let avail = if mv.target == mv.old_sibling {
                u.length(mv.old_sibling) + u.length(mv.attach)
            } else {
                u.length(mv.old_sibling)
            };
            let back_u = t_len / avail;
            let rev = u.apply_spr(s, mv.old_sibling, back_u).unwrap();
            assert!((rev.log_jacobian + mv.log_jacobian).abs() < 1e-9);
            assert_eq!(topology(&u, true), topology(&t, true));
            for v in t.branches() {
                assert!((u.length(v) - t.length(v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moves_keep_canonical_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut t = Phylogeny::random_unrooted(names(10), 2.0, &mut rng).unwrap();
        let total = t.tree_length();
        for _ in 0..500 {
            if rng.random_bool(0.5) {
                let c = t.nni_candidates();
                let v = c[rng.random_range(0..c.len())];
                t.apply_nni(v, rng.random_range(0..2)).unwrap();
            } else {
                let c = t.spr_prune_candidates();
                let s = c[rng.random_range(0..c.len())];
                let tg = t.spr_targets(s);
                t.apply_spr(s, tg[rng.random_range(0..tg.len())], rng.random()).unwrap();
            }
            assert!(t.is_canonical_unrooted());
            assert_eq!(topology(&t, false).len(), 7);
        }
        assert!((t.tree_length() - total).abs() < 1e-9);
    }

    #[test]
    fn root_move_is_reversible() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let t = Phylogeny::random_rooted(names(7), 2.0, &mut rng).unwrap();
            let cands = t.root_move_candidates();
            let x = cands[rng.random_range(0..cands.len())];
            let mut u = t.clone();
            let mv = u.apply_root_move(x, rng.random()).unwrap();
            // unrooted tree unchanged
            let (a, b) = (unrooted_lengths(&t), unrooted_lengths(&u));
            assert_eq!(a.len(), b.len());
            for (k, v) in &a {
                assert!((b[k] - v).abs() < 1e-12);
            }
            assert!(u.root_move_candidates().contains(&mv.demoted));
            let back = t.length(mv.demoted) / u.length(mv.demoted);
            let rev = u.apply_root_move(mv.demoted, back).unwrap();
            assert!((rev.log_jacobian + mv.log_jacobian).abs() < 1e-9);
            assert_eq!(topology(&u, true), topology(&t, true));
            for v in t.branches() {
                assert!((u.length(v) - t.length(v)).abs() < 1e-12, "{}", serialize_newick(&u));
            }
        }
    }

    #[test]
    fn invalid_moves_rejected() {
        let mut t = parse_newick("((A:1,B:1):1,(C:1,D:1):1);").unwrap();
        assert!(t.nni_candidates().is_empty());
        assert!(t.spr_prune_candidates().is_empty());
        assert!(t.apply_nni(4, 0).is_err());
        assert!(t.apply_root_move(t.root(), 0.5).is_err());
        assert_eq!(t.root_move_candidates().len(), 4);
    }
}
