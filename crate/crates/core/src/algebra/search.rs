use std::collections::BTreeSet;

use super::param::{q, Parameterization, Q};
use super::phase::classify;
use crate::error::Error;

/// `from, from + step, …` up to and including `to`.
pub fn rational_grid(from: Q, to: Q, step: Q) -> Vec<Q> {
    assert!(step > Q::from(0), "grid step must be positive");
    let mut out = Vec::new();
    let mut x = from;
    while x <= to {
        out.push(x);
        x += step;
    }
    out
}

/// Default search ranges: `d` over `[-3/2, 3/2]`, each `d_l` over `[-1, 2]`, step 1/4.
pub fn default_search_grids() -> (Vec<Q>, Vec<Q>) {
    (
        rational_grid(q(-3, 2), q(3, 2), q(1, 4)),
        rational_grid(q(-1, 1), q(2, 1), q(1, 4)),
    )
}

/// Exhaustive search over `(d, d_1, …, d_{L+1})` with `(b, c)` fixed. Returns the distinct
/// canonical `(d, d_l)` classes that are stable with every layer effectively perturbed.
pub fn search_all_effective(b: &[Q], c: &[Q], d_grid: &[Q], layer_grid: &[Q]) -> Result<BTreeSet<(Q, Vec<Q>)>, Error> {
    let o = b.len();
    let mut p = Parameterization::new(b.to_vec(), c.to_vec(), Q::from(0), vec![Q::from(0); o])?;
    let mut found = BTreeSet::new();
    if layer_grid.is_empty() || d_grid.is_empty() {
        return Ok(found);
    }
    let mut idx = vec![0usize; o];
    loop {
        for (l, &i) in idx.iter().enumerate() {
            p.d_layers[l] = layer_grid[i];
        }
        for &d in d_grid {
            p.d_global = d;
            let r = classify(&p);
            if r.stable && r.all_effective() {
                let canon = p.canonicalize();
                found.insert((canon.d_global, canon.d_layers));
            }
        }
        // Odometer over the per-layer grid.
        let mut k = 0;
        loop {
            if k == o {
                return Ok(found);
            }
            idx[k] += 1;
            if idx[k] < layer_grid.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{derive_mpp, mup_b, mup_c};

    #[test]
    fn grid_endpoints() {
        let (d, l) = default_search_grids();
        assert_eq!(d.len(), 13);
        assert_eq!(l.len(), 13);
        assert_eq!(d[0], q(-3, 2));
        assert_eq!(*l.last().unwrap(), q(2, 1));
    }

    #[test]
    fn coarse_search_finds_the_derived_scaling() {
        let (b, c) = (mup_b(1), mup_c(1));
        let grid = rational_grid(q(-1, 1), q(2, 1), q(1, 2));
        let found = search_all_effective(&b, &c, &grid, &grid).unwrap();
        let want = derive_mpp(&b, &c).unwrap().unwrap();
        assert_eq!(found.into_iter().collect::<Vec<_>>(), vec![want]);
    }
}
