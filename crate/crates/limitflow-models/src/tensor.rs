//! Site-indexed tensor helpers for chains of `d`-level sites.

use limitflow_core::linalg::{c, CMat};
use limitflow_core::{CoreError, CoreResult};

/// Number of sites `n` with `d^n == dim`.
pub fn sites_of(dim: usize, d: usize) -> CoreResult<usize> {
    let mut n = 0;
    let mut p = 1;
    while p < dim {
        p *= d;
        n += 1;
    }
    if p != dim {
        return Err(CoreError::Refused(format!("dimension {dim} is not a power of {d}")));
    }
    Ok(n)
}

/// Site digits of a basis index, site 0 most significant.
pub fn digits(mut idx: usize, n: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for s in (0..n).rev() {
        out[s] = idx % d;
        idx /= d;
    }
    out
}

pub fn index_of(digs: &[usize], d: usize) -> usize {
    digs.iter().fold(0, |acc, &x| acc * d + x)
}

/// `A` acting on the listed sites, in that order, of an `n`-site system.
pub fn place(a: &CMat, sites: &[usize], n: usize, d: usize) -> CMat {
    let dim = d.pow(n as u32);
    let mut out = CMat::zeros(dim, dim);
    let sub = a.nrows();
    for i in 0..dim {
        let di = digits(i, n, d);
        let row = index_of(&sites.iter().map(|&s| di[s]).collect::<Vec<_>>(), d);
        for col in 0..sub {
            let v = a[(row, col)];
            if v == c(0.0, 0.0) {
                continue;
            }
            let mut dj = di.clone();
            for (k, &s) in sites.iter().enumerate() {
                dj[s] = digits(col, sites.len(), d)[k];
            }
            out[(i, index_of(&dj, d))] += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use limitflow_core::linalg;

    #[test]
    fn digits_round_trip() {
        for idx in 0..27 {
            assert_eq!(index_of(&digits(idx, 3, 3), 3), idx);
        }
        assert_eq!(digits(6, 3, 2), vec![1, 1, 0]);
        assert_eq!(sites_of(16, 2).unwrap(), 4);
        assert!(sites_of(12, 2).is_err());
    }

    #[test]
    fn place_matches_kronecker_products() {
        let [x, y, z] = linalg::paulis();
        let xy = linalg::kron(&x, &y);
        let expected = linalg::kron(&linalg::kron(&linalg::identity(2), &xy), &linalg::identity(2));
        assert_eq!(place(&xy, &[1, 2], 4, 2), expected);
        // Reversed site order swaps the factors.
        let yx = linalg::kron(&linalg::kron(&y, &linalg::identity(2)), &x);
        assert_eq!(place(&xy, &[2, 0], 3, 2), yx);
        assert_eq!(place(&z, &[0], 1, 2), z);
    }
}
