//! Single-category site likelihoods: plain pruning, generic over the scalar,
//! and exhaustive enumeration of internal states for checking it.

use super::alignment::state_mask;
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::scalar::Real;
use crate::tree::Phylogeny;

fn check<T: Real>(tree: &Phylogeny, mats: &[SquareMatrix<T>], root_dist: &[T], pattern: &[u8]) -> Result<usize> {
    let k = root_dist.len();
    if mats.len() != tree.n_nodes() {
        return Err(Error::Dimension(format!("{} matrices for {} nodes", mats.len(), tree.n_nodes())));
    }
    if pattern.len() != tree.n_leaves() {
        return Err(Error::Dimension(format!("pattern of {} for {} leaves", pattern.len(), tree.n_leaves())));
    }
    if tree.branches().any(|v| mats[v].dim() != k) {
        return Err(Error::Dimension("matrix and root distribution sizes differ".into()));
    }
    if k != 4 {
        return Err(Error::Dimension("leaf characters are nucleotides".into()));
    }
    Ok(k)
}

fn leaf_vector<T: Real>(c: u8) -> Result<[T; 4]> {
    let m = state_mask(c).ok_or_else(|| Error::Alignment(format!("invalid character '{}'", c as char)))?;
    Ok(std::array::from_fn(|s| if m >> s & 1 == 1 { T::one() } else { T::zero() }))
}

/// Pruning recursion for one pattern under one set of branch matrices
/// (`mats[v]` is the matrix on the branch above node `v`).
pub fn site_likelihood<T: Real>(tree: &Phylogeny, mats: &[SquareMatrix<T>], root_dist: &[T], pattern: &[u8]) -> Result<T> {
    let k = check(tree, mats, root_dist, pattern)?;
    let mut partial: Vec<[T; 4]> = vec![[T::zero(); 4]; tree.n_nodes()];
    for v in tree.postorder() {
        partial[v] = match tree.children(v) {
            None => leaf_vector(pattern[v])?,
            Some(kids) => {
                let mut out = [T::one(); 4];
                for c in kids {
                    for (s, o) in out.iter_mut().enumerate().take(k) {
                        let mut acc = T::zero();
                        for t in 0..k {
                            acc += mats[c][(s, t)] * partial[c][t];
                        }
                        *o *= acc;
                    }
                }
                out
            }
        };
    }
    let r = partial[tree.root()];
    Ok((0..k).map(|s| root_dist[s] * r[s]).sum())
}

/// Sum over every assignment of states to internal vertices. Cost K^(n−1).
pub fn brute_force_site_likelihood<T: Real>(
    tree: &Phylogeny,
    mats: &[SquareMatrix<T>],
    root_dist: &[T],
    pattern: &[u8],
) -> Result<T> {
    let k = check(tree, mats, root_dist, pattern)?;
    let n = tree.n_leaves();
    let internal: Vec<usize> = (n..tree.n_nodes()).collect();
    let leaves: Vec<[T; 4]> = pattern.iter().map(|&c| leaf_vector(c)).collect::<Result<_>>()?;
    let mut state = vec![0usize; tree.n_nodes()];
    let total_assignments = k.pow(internal.len() as u32);
    let mut total = T::zero();
    for code in 0..total_assignments {
        let mut c = code;
        for &v in &internal {
            state[v] = c % k;
            c /= k;
        }
        let mut term = root_dist[state[tree.root()]];
        for v in tree.branches() {
            let p = tree.parent(v).unwrap();
            if v < n {
                let mut acc = T::zero();
                for t in 0..k {
                    acc += mats[v][(state[p], t)] * leaves[v][t];
                }
                term *= acc;
            } else {
                term *= mats[v][(state[p], state[v])];
            }
        }
        total += term;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratemat::{build_tn93, transition_matrix, Composition};
    use crate::tree::parse_newick;

    fn jc_p(ell: f64) -> SquareMatrix<f64> {
        let q = build_tn93(1.0, 1.0, &Composition::uniform(4)).unwrap();
        transition_matrix(&q, ell).unwrap().entries().clone()
    }

    #[test]
    fn two_leaf_jukes_cantor() {
        let t = parse_newick("(A:0.5,B:0.5);").unwrap();
        let mats = vec![jc_p(0.5), jc_p(0.5), SquareMatrix::identity(4)];
        let pi = [0.25f64; 4];
        // Q has off-diagonal 1/4 so P_same(ℓ) = 1/4 + 3/4 e^{−ℓ}
        let same = 0.25 + 0.75 * (-0.5f64).exp();
        let diff = 0.25 - 0.25 * (-0.5f64).exp();
        let want_same = 0.25 * (same * same + 3.0 * diff * diff);
        let want_diff = 0.25 * (2.0 * same * diff + 2.0 * diff * diff);
        assert!((site_likelihood(&t, &mats, &pi, b"AA").unwrap() - want_same).abs() < 1e-15);
        assert!((site_likelihood(&t, &mats, &pi, b"AG").unwrap() - want_diff).abs() < 1e-15);
        assert!((site_likelihood(&t, &mats, &pi, b"A-").unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_lengths_give_root_distribution() {
        let t = parse_newick("((A:0,B:0):0,C:0);").unwrap();
        let mats = vec![SquareMatrix::identity(4); 5];
        let pi = [0.1f64, 0.2, 0.3, 0.4];
        assert!((site_likelihood(&t, &mats, &pi, b"CCC").unwrap() - 0.3).abs() < 1e-16);
        assert_eq!(site_likelihood(&t, &mats, &pi, b"CCA").unwrap(), 0.0);
        assert_eq!(brute_force_site_likelihood(&t, &mats, &pi, b"GGG").unwrap(), 0.2);
    }

    #[test]
    fn dimension_errors() {
        let t = parse_newick("(A:0.5,B:0.5);").unwrap();
        let mats = vec![jc_p(0.5); 3];
        assert!(site_likelihood(&t, &mats, &[0.25; 4], b"A").is_err());
        assert!(site_likelihood(&t, &mats[..2], &[0.25; 4], b"AA").is_err());
    }
}
