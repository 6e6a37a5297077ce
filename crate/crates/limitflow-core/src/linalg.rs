//! Dense complex linear algebra used throughout the workspace.
//!
//! Storage is `nalgebra`. Large complex products are routed through real matrix
//! multiplications, which use the blocked `matrixmultiply` kernels. Hermitian
//! eigenproblems go to `faer`, whose residuals stay at round-off on highly
//! degenerate spectra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;
pub type CVec = DVector<C64>;

/// Products below this many scalar multiply-adds use the generic complex kernel.
const SPLIT_THRESHOLD: usize = 64 * 64 * 64;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn real_part(a: &CMat) -> RMat {
    a.map(|z| z.re)
}

pub fn imag_part(a: &CMat) -> RMat {
    a.map(|z| z.im)
}

pub fn from_parts(re: &RMat, im: &RMat) -> CMat {
    assert_eq!(re.shape(), im.shape());
    CMat::from_fn(re.nrows(), re.ncols(), |i, j| c(re[(i, j)], im[(i, j)]))
}

pub fn to_complex(a: &RMat) -> CMat {
    a.map(|x| c(x, 0.0))
}

/// Complex matrix product.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    if a.nrows() * a.ncols() * b.ncols() < SPLIT_THRESHOLD {
        return a * b;
    }
    let (ar, ai) = (real_part(a), imag_part(a));
    let (br, bi) = (real_part(b), imag_part(b));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    from_parts(&re, &im)
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint()
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    matmul(a, b) - matmul(b, a)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Euclidean norm of all entries (vector 2-norm, Hilbert-Schmidt norm for matrices).
pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    a.clone().singular_values().iter().copied().collect()
}

/// Largest singular value.
pub fn op_norm(a: &CMat) -> f64 {
    if a.ncols() == 1 || a.nrows() == 1 {
        return frobenius(a);
    }
    if a.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
        return 0.0;
    }
    if is_hermitian(a, 1e-14 * (1.0 + max_abs(a))) {
        return op_norm_hermitian(a);
    }
    singular_values(a).into_iter().fold(0.0, f64::max)
}

/// Operator norm of a hermitian matrix as its largest absolute eigenvalue.
pub fn op_norm_hermitian(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    eigvalsh(a).iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Sum of singular values.
pub fn trace_norm(a: &CMat) -> f64 {
    if a.ncols() == 1 || a.nrows() == 1 {
        return frobenius(a);
    }
    if is_hermitian(a, 1e-14 * (1.0 + max_abs(a))) {
        return eigvalsh(a).iter().map(|x| x.abs()).sum();
    }
    singular_values(a).into_iter().sum()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m: f64, z| m.max(z.norm()))
}

pub fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let n = a.nrows();
    for i in 0..n {
        for j in i..n {
            if (a[(i, j)] - a[(j, i)].conj()).norm() > tol {
                return false;
            }
        }
    }
    true
}

pub fn trace(a: &CMat) -> C64 {
    a.diagonal().iter().sum()
}

fn to_faer(a: &CMat) -> faer::Mat<faer::c64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        let z = a[(i, j)];
        faer::c64::new(z.re, z.im)
    })
}

/// Ascending eigenvalues of a hermitian matrix.
pub fn eigvalsh(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let vals = to_faer(a)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .expect("hermitian eigenvalues converge");
    let mut vals: Vec<f64> = vals.into_iter().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Eigen-decomposition of a hermitian matrix: ascending eigenvalues and unitary columns.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = to_faer(a)
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("hermitian eigendecomposition converges");
    let (s, u) = (eig.S(), eig.U());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| s[i].re.total_cmp(&s[j].re));
    let vals = idx.iter().map(|&i| s[i].re).collect();
    let vecs = CMat::from_fn(n, n, |r, k| {
        let z = u[(r, idx[k])];
        c(z.re, z.im)
    });
    (vals, vecs)
}

/// Eigen-decomposition of a real symmetric matrix, ascending.
pub fn eigh_real(a: &RMat) -> (Vec<f64>, RMat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), RMat::zeros(0, 0));
    }
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("symmetric eigendecomposition converges");
    let (s, u) = (eig.S(), eig.U());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let vals = idx.iter().map(|&i| s[i]).collect();
    let vecs = RMat::from_fn(n, n, |r, k| u[(r, idx[k])]);
    (vals, vecs)
}

/// `f(a)` for hermitian `a` through its spectral decomposition, with complex `f`.
pub fn hermitian_function(a: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let (vals, v) = eigh(a);
    let mut vd = v.clone();
    for (k, lam) in vals.iter().enumerate() {
        let s = f(*lam);
        vd.column_mut(k).iter_mut().for_each(|z| *z *= s);
    }
    matmul(&vd, &v.adjoint())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("matrix is singular to working precision")]
pub struct SingularMatrix;

/// Solve `a x = b` by LU with partial pivoting.
pub fn solve(a: &CMat, b: &CMat) -> Result<CMat, SingularMatrix> {
    assert_eq!(a.nrows(), a.ncols());
    let lu = a.clone().lu();
    let x = lu.solve(b).ok_or(SingularMatrix)?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SingularMatrix);
    }
    Ok(x)
}

// Padé(13) coefficients and the matching scaling threshold for the 1-norm.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &CMat) -> CMat {
    assert_eq!(a.nrows(), a.ncols(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let norm = one_norm(a);
    if norm == 0.0 {
        return identity(n);
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * c(0.5f64.powi(s), 0.0);
    let id = identity(n);
    let a2 = matmul(&a, &a);
    let a4 = matmul(&a2, &a2);
    let a6 = matmul(&a4, &a2);
    let b = |k: usize| c(PADE13[k], 0.0);

    let u_inner = &a6 * b(13) + &a4 * b(11) + &a2 * b(9);
    let u_inner = matmul(&a6, &u_inner) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1);
    let u = matmul(&a, &u_inner);
    let v_inner = &a6 * b(12) + &a4 * b(10) + &a2 * b(8);
    let v = matmul(&a6, &v_inner) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = solve(&q, &p).expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = matmul(&r, &r);
    }
    r
}

/// Column vector from a slice.
pub fn col(v: &[C64]) -> CMat {
    CMat::from_column_slice(v.len(), 1, v)
}

pub fn basis(n: usize, k: usize) -> CMat {
    let mut e = CMat::zeros(n, 1);
    e[(k, 0)] = c(1.0, 0.0);
    e
}

/// Pauli matrices `(σ1, σ2, σ3)`.
pub fn paulis() -> [CMat; 3] {
    let o = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    [
        CMat::from_row_slice(2, 2, &[o, one, one, o]),
        CMat::from_row_slice(2, 2, &[o, -i, i, o]),
        CMat::from_row_slice(2, 2, &[one, o, o, -one]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_fn(n, n, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    fn taylor_expm(a: &CMat) -> CMat {
        // Plain Taylor series; only used on small norms.
        let mut term = identity(a.nrows());
        let mut sum = term.clone();
        for k in 1..60 {
            term = &term * a / c(k as f64, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_scalar_cases() {
        let z = CMat::zeros(3, 3);
        assert!((expm(&z) - identity(3)).norm() < 1e-15);
        let e = expm(&(-identity(2)));
        assert!((e[(0, 0)].re - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn expm_matches_taylor_on_small_norm() {
        let a = random(8, 1);
        let diff = frobenius(&(expm(&a) - taylor_expm(&a)));
        assert!(diff < 1e-13, "{diff}");
    }

    #[test]
    fn expm_large_norm_against_eigendecomposition() {
        let h = random(12, 2);
        let h = (&h + h.adjoint()) * c(4.0, 0.0);
        let direct = expm(&(&h * c(0.0, 1.0)));
        let spectral = hermitian_function(&h, |x| c(0.0, x).exp());
        assert!(frobenius(&(direct - spectral)) < 1e-11);
    }

    #[test]
    fn expm_semigroup_law() {
        let a = random(10, 3) * c(3.0, 0.0);
        let lhs = matmul(&expm(&(&a * c(0.3, 0.0))), &expm(&(&a * c(0.7, 0.0))));
        let rhs = expm(&a);
        assert!(frobenius(&(lhs - &rhs)) / frobenius(&rhs) < 1e-12);
    }

    #[test]
    fn split_product_matches_generic() {
        let a = CMat::from_fn(70, 90, |i, j| c((i * j % 7) as f64, (i + 2 * j) as f64 * 0.01));
        let b = CMat::from_fn(90, 80, |i, j| c((i + j) as f64 * 0.1, -(((i * 3 + j) % 5) as f64)));
        assert!(frobenius(&(matmul(&a, &b) - &a * &b)) < 1e-9);
    }

    #[test]
    fn norms_of_diagonal() {
        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(3.0, 0.0), c(0.0, -4.0), c(1.0, 0.0)]));
        assert!((op_norm(&d) - 4.0).abs() < 1e-12);
        assert!((trace_norm(&d) - 8.0).abs() < 1e-12);
        assert!((frobenius(&d) - 26f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn solve_detects_singular() {
        let z = CMat::zeros(2, 2);
        assert_eq!(solve(&z, &identity(2)), Err(SingularMatrix));
    }

    #[test]
    fn pauli_algebra() {
        let [s1, s2, s3] = paulis();
        let lhs = commutator(&s1, &s2);
        assert!(frobenius(&(lhs - &s3 * c(0.0, 2.0))) < 1e-15);
    }
}
