//! Permutation-symmetric mean-field limits of `N` identical sites.
//!
//! Level `N` is the algebra of `d^N x d^N` matrices and `j_NM(A)` is the
//! symmetrization of `A (x) 1`. Limit elements are functions on the one-site
//! state space, probed here on a fixed grid of Bloch states.

use std::sync::Arc;

use limitflow_core::inductive::{make_basic_net, multiplicativity_defect, tensor_system, MapRule, TripleReport};
use limitflow_core::linalg::{self, c, CMat, C64};
use limitflow_core::{CoreError, CoreResult, LevelSpace, NormKind, ScaleChain, SoftSystem};
use serde::{Deserialize, Serialize};

use crate::tensor::{digits, index_of, sites_of};
pub use crate::tensor::place;

/// Hard cap on the number of sites.
pub const MAX_SITES: usize = 8;
/// Cap for the dense flip superoperator, of dimension `d^{2N}`.
pub const MAX_FLIP_SITES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteAlgebra {
    pub d: usize,
}

impl SiteAlgebra {
    pub fn new(d: usize) -> CoreResult<Self> {
        if d < 2 {
            return Err(CoreError::Refused(format!("site dimension {d} below 2")));
        }
        Ok(Self { d })
    }

    pub fn qubit() -> Self {
        Self { d: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricLevel {
    pub n: usize,
    pub site: SiteAlgebra,
}

impl SymmetricLevel {
    pub fn new(n: usize, site: SiteAlgebra) -> CoreResult<Self> {
        check_sites(n, MAX_SITES)?;
        Ok(Self { n, site })
    }

    pub fn dim(&self) -> usize {
        self.site.d.pow(self.n as u32)
    }

    pub fn symmetrize(&self, x: &CMat) -> CoreResult<CMat> {
        symmetrize(self.n, x, self.site.d)
    }
}

fn check_sites(n: usize, cap: usize) -> CoreResult<()> {
    if n == 0 {
        return Err(CoreError::Refused("zero sites".into()));
    }
    if n > cap {
        return Err(CoreError::ResourceCap(format!("{n} sites exceed the cap {cap}")));
    }
    Ok(())
}

/// Average over all site permutations of an `n`-site operator.
///
/// Entries are averaged over orbits of index pairs, which is the permutation
/// average and makes the result exactly invariant.
pub fn symmetrize_full(x: &CMat, n: usize, d: usize) -> CMat {
    let dim = x.nrows();
    let types = d * d;
    let key = |i: usize, j: usize| {
        let (di, dj) = (digits(i, n, d), digits(j, n, d));
        let mut counts = vec![0usize; types];
        for s in 0..n {
            counts[di[s] * d + dj[s]] += 1;
        }
        counts.iter().fold(0usize, |acc, &k| acc * (n + 1) + k)
    };
    let keys: Vec<usize> = (0..dim * dim).map(|k| key(k / dim, k % dim)).collect();
    let slots = (n + 1).pow(types as u32);
    let mut sums = vec![c(0.0, 0.0); slots];
    let mut sizes = vec![0usize; slots];
    for (k, &kk) in keys.iter().enumerate() {
        sums[kk] += x[(k / dim, k % dim)];
        sizes[kk] += 1;
    }
    CMat::from_fn(dim, dim, |i, j| {
        let kk = keys[i * dim + j];
        sums[kk] / sizes[kk] as f64
    })
}

/// `j_NM(A) = sym_N(A (x) 1^{(x)(N-M)})` for `A` on `M <= N` sites.
pub fn symmetrize(n: usize, a: &CMat, d: usize) -> CoreResult<CMat> {
    check_sites(n, MAX_SITES)?;
    let m = sites_of(a.nrows(), d)?;
    if m > n {
        return Err(CoreError::Refused(format!("{m}-site observable does not fit {n} sites")));
    }
    let padded = linalg::kron(a, &linalg::identity(d.pow((n - m) as u32)));
    Ok(symmetrize_full(&padded, n, d))
}

/// `F_ij X F_ij` with `F_ij` the flip of sites `i` and `j`.
pub fn flip_conjugate(x: &CMat, i: usize, j: usize, n: usize, d: usize) -> CMat {
    let dim = x.nrows();
    let perm: Vec<usize> = (0..dim)
        .map(|k| {
            let mut dk = digits(k, n, d);
            dk.swap(i, j);
            index_of(&dk, d)
        })
        .collect();
    CMat::from_fn(dim, dim, |r, s| x[(perm[r], perm[s])])
}

/// Mean-field system on `N = 1..=n_max` sites; strict, with operator norms.
pub fn mean_field_system(n_max: usize, site: SiteAlgebra) -> CoreResult<SoftSystem> {
    check_sites(n_max, MAX_SITES)?;
    let d = site.d;
    let chain = ScaleChain::integers(1..=n_max as i64)?;
    let levels = (1..=n_max)
        .map(|n| LevelSpace::matrices(d.pow(n as u32), NormKind::Operator, true))
        .collect();
    let rule: MapRule = Arc::new(move |n, _m, x| symmetrize(n + 1, x, d).expect("level within cap"));
    SoftSystem::from_rule(chain, levels, rule, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlochState {
    pub rho: CMat,
}

impl BlochState {
    /// `(1 + r.sigma)/2` for `|r| <= 1`.
    pub fn from_bloch(r: [f64; 3]) -> CoreResult<Self> {
        let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if len > 1.0 + 1e-12 {
            return Err(CoreError::Refused(format!("Bloch vector of length {len}")));
        }
        let [sx, sy, sz] = linalg::paulis();
        let rho = (linalg::identity(2) + sx * c(r[0], 0.0) + sy * c(r[1], 0.0) + sz * c(r[2], 0.0)) * c(0.5, 0.0);
        Ok(Self { rho })
    }

    pub fn from_density(rho: CMat) -> CoreResult<Self> {
        if !linalg::is_hermitian(&rho, 1e-12) {
            return Err(CoreError::Refused("density matrix is not hermitian".into()));
        }
        let tr = linalg::trace(&rho);
        if (tr - c(1.0, 0.0)).norm() > 1e-12 {
            return Err(CoreError::Refused(format!("trace {tr} differs from 1")));
        }
        let (eig, _) = linalg::eigh(&rho);
        if eig.iter().any(|&e| e < -1e-12) {
            return Err(CoreError::Refused("density matrix is not positive".into()));
        }
        Ok(Self { rho })
    }

    pub fn expect(&self, a: &CMat) -> C64 {
        pair(&self.rho, a)
    }

    pub fn power(&self, n: usize) -> CMat {
        (1..n).fold(self.rho.clone(), |acc, _| linalg::kron(&acc, &self.rho))
    }
}

/// `tr(rho a)`.
fn pair(rho: &CMat, a: &CMat) -> C64 {
    rho.transpose().component_mul(a).sum()
}

/// Center, the six poles and the six half-radius points on the axes.
pub fn bloch_grid() -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]];
    for r in [1.0, 0.5] {
        for axis in 0..3 {
            for s in [1.0, -1.0] {
                let mut v = [0.0; 3];
                v[axis] = s * r;
                out.push(v);
            }
        }
    }
    out
}

/// `sigma^{(x)N}(A_N)`.
pub fn eval_product_state(state: &BlochState, a: &CMat) -> CoreResult<C64> {
    let n = sites_of(a.nrows(), state.rho.nrows())?;
    if a.ncols() != a.nrows() {
        return Err(CoreError::Refused("observable is not square".into()));
    }
    Ok(pair(&state.power(n), a))
}

/// `rho (x) sigma^{(x)(N-1)}(A_N)` with the tagged site first.
pub fn eval_tagged(rho: &BlochState, sigma: &BlochState, a: &CMat) -> CoreResult<C64> {
    let n = sites_of(a.nrows(), sigma.rho.nrows())?;
    let state = if n == 1 { rho.rho.clone() } else { linalg::kron(&rho.rho, &sigma.power(n - 1)) };
    Ok(pair(&state, a))
}

/// `v = v_inf + c/N` least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseNFit {
    pub limit: f64,
    pub slope: f64,
    pub residual: f64,
}

pub fn fit_inverse_n(ns: &[usize], values: &[f64]) -> InverseNFit {
    let k = ns.len() as f64;
    let xs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = values.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(values).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let limit = my - slope * mx;
    let residual = xs
        .iter()
        .zip(values)
        .map(|(x, y)| (y - limit - slope * x).abs())
        .fold(0.0, f64::max);
    InverseNFit { limit, slope, residual }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketReport {
    pub ns: Vec<usize>,
    /// `sigma^{(x)N}(iN[j_N1 a, j_N1 b])` per `N`, real part.
    pub values: Vec<f64>,
    pub max_imag: f64,
    pub fit: InverseNFit,
}

pub fn bracket_estimate(a: &CMat, b: &CMat, sigma: &BlochState, ns: &[usize]) -> CoreResult<BracketReport> {
    let d = a.nrows();
    let mut values = Vec::new();
    let mut max_imag: f64 = 0.0;
    for &n in ns {
        if n < 2 {
            return Err(CoreError::Refused(format!("bracket needs N >= 2, got {n}")));
        }
        let (an, bn) = (symmetrize(n, a, d)?, symmetrize(n, b, d)?);
        let v = eval_product_state(sigma, &(linalg::commutator(&an, &bn) * c(0.0, n as f64)))?;
        values.push(v.re);
        max_imag = max_imag.max(v.im.abs());
    }
    let fit = fit_inverse_n(ns, &values);
    Ok(BracketReport { ns: ns.to_vec(), values, max_imag, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochBracketRow {
    pub r: [f64; 3],
    pub extrapolant: f64,
    pub oracle: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochBracketReport {
    pub rows: Vec<BlochBracketRow>,
    pub max_residual: f64,
    pub pass: bool,
}

/// `{x_1, x_2} = -2 x_3` from `sigma_1`, `sigma_2` brackets on the Bloch grid.
pub fn bloch_bracket_check(ns: &[usize], tol: f64) -> CoreResult<BlochBracketReport> {
    let [sx, sy, _] = linalg::paulis();
    let mut rows = Vec::new();
    for r in bloch_grid() {
        let sigma = BlochState::from_bloch(r)?;
        let rep = bracket_estimate(&sx, &sy, &sigma, ns)?;
        let oracle = -2.0 * r[2];
        rows.push(BlochBracketRow { r, extrapolant: rep.fit.limit, oracle, residual: (rep.fit.limit - oracle).abs() });
    }
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok(BlochBracketReport { rows, max_residual, pass: max_residual < tol })
}

/// `H_inf(sigma) = sigma^{(x)R}(sym h)` for `h` on `R` sites.
pub fn mean_field_energy(h: &CMat, sigma: &BlochState) -> CoreResult<f64> {
    Ok(eval_product_state(sigma, h)?.re)
}

/// `dH(sigma) = R tr_{2..R}[(1 (x) sigma^{(x)(R-1)}) sym h] - R H_inf(sigma)`.
pub fn gradient_dh(h: &CMat, sigma: &BlochState) -> CoreResult<CMat> {
    let d = sigma.rho.nrows();
    let r = sites_of(h.nrows(), d)?;
    if r > 4 {
        return Err(CoreError::Refused(format!("gradient of a {r}-site observable")));
    }
    if !linalg::is_hermitian(h, 1e-12) {
        return Err(CoreError::Refused("gradient needs a hermitian observable".into()));
    }
    let sym = symmetrize_full(h, r, d);
    let rest = d.pow(r as u32 - 1);
    let env = if r == 1 { CMat::from_element(1, 1, c(1.0, 0.0)) } else { sigma.power(r - 1) };
    // Partial trace over sites 2..R against the environment state.
    let reduced = CMat::from_fn(d, d, |i, j| {
        let mut acc = c(0.0, 0.0);
        for p in 0..rest {
            for q in 0..rest {
                acc += sym[(i * rest + p, j * rest + q)] * env[(q, p)];
            }
        }
        acc
    });
    let energy = mean_field_energy(&sym, sigma)?;
    Ok((reduced - linalg::identity(d) * c(energy, 0.0)) * c(r as f64, 0.0))
}

/// `Gamma_N(X) = (N-1)^{-1} sum_{i != j} (F_ij X F_ij - X)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipGenerator {
    pub n: usize,
    pub d: usize,
}

impl FlipGenerator {
    pub fn new(n: usize, site: SiteAlgebra) -> CoreResult<Self> {
        check_sites(n, MAX_FLIP_SITES)?;
        if n < 2 {
            return Err(CoreError::Refused("flip generator needs two sites".into()));
        }
        Ok(Self { n, d: site.d })
    }

    pub fn apply(&self, x: &CMat) -> CMat {
        let mut out = CMat::zeros(x.nrows(), x.ncols());
        for i in 0..self.n {
            for j in i + 1..self.n {
                out += (flip_conjugate(x, i, j, self.n, self.d) - x) * c(2.0, 0.0);
            }
        }
        out / c((self.n - 1) as f64, 0.0)
    }

    /// Dense superoperator on column-major `vec(X)`.
    pub fn superoperator(&self) -> CMat {
        let dim = self.d.pow(self.n as u32);
        let mut out = CMat::zeros(dim * dim, dim * dim);
        for k in 0..dim * dim {
            let mut e = CMat::zeros(dim, dim);
            e[(k % dim, k / dim)] = c(1.0, 0.0);
            let img = self.apply(&e);
            for (r, z) in img.iter().enumerate() {
                if *z != c(0.0, 0.0) {
                    out[(r, k)] = *z;
                }
            }
        }
        out
    }

    /// `e^{t Gamma_N} X` by Taylor series on substeps with `h ||Gamma|| <= 1`.
    pub fn evolve(&self, x: &CMat, t: f64) -> CoreResult<CMat> {
        if t < 0.0 {
            return Err(CoreError::NegativeTime(t));
        }
        let bound = 2.0 * self.n as f64;
        let steps = (t * bound).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut state = x.clone();
        for _ in 0..steps {
            let mut term = state.clone();
            let mut acc = state.clone();
            for k in 1..60 {
                term = self.apply(&term) * c(h / k as f64, 0.0);
                acc += &term;
                if linalg::max_abs(&term) <= 1e-17 * linalg::max_abs(&acc) {
                    break;
                }
            }
            state = acc;
        }
        Ok(state)
    }
}

/// Tagged system: one distinguished site tensored with a mean-field bulk of
/// `1..=bulk_max` sites.
pub fn tagged_system(bulk_max: usize, site: SiteAlgebra) -> CoreResult<SoftSystem> {
    let bulk = mean_field_system(bulk_max, site)?;
    let tag = SoftSystem::constant(bulk.chain().clone(), LevelSpace::matrices(site.d, NormKind::Operator, true));
    tensor_system(&tag, &bulk)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRow {
    pub n: usize,
    pub value: f64,
    pub limit: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub rows: Vec<FlipRow>,
    /// `defect(N) / defect(2N)` for the doubling pairs present.
    pub doubling_ratios: Vec<f64>,
    /// `N defect(N)` spread relative to its mean; small for `1/N` decay.
    pub inverse_n_spread: f64,
    pub decreasing: bool,
    pub pass: bool,
}

/// Allowed deviation of the halving ratio from 2 for the tagged flip defect.
pub const FLIP_HALVING_TOL: f64 = 0.3;

/// Tagged `X_N = a (x) j_{N-1,1}(b)` against `2(sigma - rho)(a) sigma(b)`.
pub fn flip_limit_defect(
    a: &CMat,
    b: &CMat,
    rho: &BlochState,
    sigma: &BlochState,
    ns: &[usize],
) -> CoreResult<FlipReport> {
    let site = SiteAlgebra::new(a.nrows())?;
    let n_max = *ns.iter().max().ok_or(CoreError::ChainTooShort(0))?;
    check_sites(n_max, MAX_FLIP_SITES)?;
    let sys = tagged_system(n_max - 1, site)?;
    let net = make_basic_net(&sys, 1.0, &linalg::kron(a, b))?;
    let limit = 2.0 * (sigma.expect(a) - rho.expect(a)).re * sigma.expect(b).re;
    let mut rows = Vec::new();
    for &n in ns {
        if n < 2 {
            return Err(CoreError::Refused(format!("flip defect needs N >= 2, got {n}")));
        }
        let x = &net.entries[n - 2];
        let gamma = FlipGenerator::new(n, site)?.apply(x);
        let value = eval_tagged(rho, sigma, &gamma)?.re;
        rows.push(FlipRow { n, value, limit, defect: (value - limit).abs() });
    }
    let doubling_ratios: Vec<f64> = rows
        .iter()
        .filter_map(|r| rows.iter().find(|s| s.n == 2 * r.n).map(|s| r.defect / s.defect))
        .collect();
    let scaled: Vec<f64> = rows.iter().map(|r| r.n as f64 * r.defect).collect();
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    let inverse_n_spread = scaled.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max) / mean;
    let decreasing = limitflow_core::report::strictly_decreasing(&rows.iter().map(|r| r.defect).collect::<Vec<_>>());
    let pass = decreasing
        && !doubling_ratios.is_empty()
        && doubling_ratios.iter().all(|r| (r - 2.0).abs() <= 2.0 * FLIP_HALVING_TOL);
    Ok(FlipReport { rows, doubling_ratios, inverse_n_spread, decreasing, pass })
}

/// Largest `||Gamma_N(sym X)||` over the given bulk probes; zero in exact arithmetic
/// and bitwise zero here.
pub fn bulk_annihilation(n: usize, probes: &[CMat], site: SiteAlgebra) -> CoreResult<f64> {
    let gen = FlipGenerator::new(n, site)?;
    let mut worst: f64 = 0.0;
    for p in probes {
        let bulk = symmetrize(n, p, site.d)?;
        worst = worst.max(linalg::max_abs(&gen.apply(&bulk)));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipDynamicsReport {
    pub t: f64,
    pub ns: Vec<usize>,
    pub values: Vec<f64>,
    pub fit: InverseNFit,
    /// `sigma(x) + e^{-2t}(rho(x) - sigma(x))`.
    pub limit: f64,
    pub defect: f64,
}

/// Tagged one-site observable under `e^{t Gamma_N}`, extrapolated in `1/N`.
pub fn flip_dynamics(x: &CMat, rho: &BlochState, sigma: &BlochState, ns: &[usize], t: f64) -> CoreResult<FlipDynamicsReport> {
    let site = SiteAlgebra::new(x.nrows())?;
    let mut values = Vec::new();
    for &n in ns {
        let gen = FlipGenerator::new(n, site)?;
        let tagged = place(x, &[0], n, site.d);
        values.push(eval_tagged(rho, sigma, &gen.evolve(&tagged, t)?)?.re);
    }
    let fit = fit_inverse_n(ns, &values);
    let (r, s) = (rho.expect(x).re, sigma.expect(x).re);
    let limit = s + (-2.0 * t).exp() * (r - s);
    Ok(FlipDynamicsReport { t, ns: ns.to_vec(), values, fit, limit, defect: (fit.limit - limit).abs() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDefectReport {
    pub multiplicativity: TripleReport,
    /// `(m, n, D(1, m, n))` for `n = 2m`.
    pub doubling: Vec<(usize, usize, f64)>,
    pub multiplicativity_ratios: Vec<f64>,
    /// `||[j_N1 a, j_N1 b]||` for each `N`.
    pub commutators: Vec<(usize, f64)>,
    pub commutator_ratios: Vec<f64>,
    pub pass: bool,
}

pub const MF_RATIO_RANGE: (f64, f64) = (1.5, 2.6);

/// Multiplicativity and commutator trails for one-site probes `a`, `b`.
///
/// The multiplicativity defect at scale `N` is the table entry
/// `D(1, N/2, N)`; ratios compare doubling pairs.
pub fn product_defect_experiment(a: &CMat, b: &CMat, n_max: usize, commutator_ns: &[usize]) -> CoreResult<ProductDefectReport> {
    let site = SiteAlgebra::new(a.nrows())?;
    let sys = mean_field_system(n_max, site)?;
    let multiplicativity = multiplicativity_defect(&sys, &[(1.0, a.clone(), b.clone())], 1e-12)?;
    let doubling: Vec<(usize, usize, f64)> = multiplicativity
        .entries
        .iter()
        .filter(|e| e.n == 2.0 * e.m)
        .map(|e| (e.m as usize, e.n as usize, e.value))
        .collect();
    let multiplicativity_ratios: Vec<f64> = doubling
        .iter()
        .filter_map(|&(m, _, v)| doubling.iter().find(|e| e.0 == 2 * m).map(|e| v / e.2))
        .collect();
    let mut commutators = Vec::new();
    for &n in commutator_ns {
        let comm = linalg::commutator(&symmetrize(n, a, site.d)?, &symmetrize(n, b, site.d)?);
        commutators.push((n, linalg::op_norm(&comm)));
    }
    let commutator_ratios: Vec<f64> = commutators
        .iter()
        .filter_map(|&(n, v)| commutators.iter().find(|e| e.0 == 2 * n).map(|e| v / e.1))
        .collect();
    let in_range = |r: &f64| (MF_RATIO_RANGE.0..=MF_RATIO_RANGE.1).contains(r);
    let pass = !multiplicativity_ratios.is_empty()
        && !commutator_ratios.is_empty()
        && multiplicativity_ratios.iter().all(in_range)
        && commutator_ratios.iter().all(in_range);
    Ok(ProductDefectReport { multiplicativity, doubling, multiplicativity_ratios, commutators, commutator_ratios, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanFieldExperiment {
    All,
    Bracket,
    Flip,
    Gradient,
    ProductDefect,
}

impl MeanFieldExperiment {
    fn runs(self, part: MeanFieldExperiment) -> bool {
        self == MeanFieldExperiment::All || self == part
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanFieldConfig {
    #[serde(rename = "N_max")]
    pub n_max: usize,
    pub experiment: MeanFieldExperiment,
    pub bracket_tol: f64,
    /// Site counts of the flip checks, capped by the dense superoperator.
    pub flip_ns: Vec<usize>,
    pub rho: [f64; 3],
    pub sigma: [f64; 3],
    pub flip_t: f64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self {
            n_max: 8,
            experiment: MeanFieldExperiment::All,
            bracket_tol: 1e-2,
            flip_ns: vec![3, 4, 5, 6],
            rho: [0.6, 0.0, -0.3],
            sigma: [0.1, 0.2, 0.7],
            flip_t: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub r: [f64; 3],
    /// `rho(dH(sigma))` against a central difference of `H` along `sigma -> rho`.
    pub directional: f64,
    pub finite_difference: f64,
    /// `|sigma(dH(sigma))|`, zero for a tangent vector.
    pub tangency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub rows: Vec<GradientRow>,
    pub max_residual: f64,
    pub pass: bool,
}

pub const GRADIENT_TOL: f64 = 1e-7;

/// `dH` of a three-site hamiltonian against central differences on the Bloch grid.
pub fn gradient_check(rho: &BlochState) -> CoreResult<GradientReport> {
    let [sx, _, sz] = linalg::paulis();
    let h = linalg::kron(&linalg::kron(&sx, &sz), &sx) + linalg::kron(&linalg::kron(&sz, &sz), &sz);
    let sym = symmetrize_full(&h, 3, 2);
    let eps = 1e-5;
    let mut rows = Vec::new();
    for r in bloch_grid().into_iter().filter(|r| r.iter().map(|x| x * x).sum::<f64>() < 1.0) {
        let sigma = BlochState::from_bloch(r)?;
        let dh = gradient_dh(&h, &sigma)?;
        let energy = |s: f64| {
            let mix = BlochState { rho: &rho.rho * c(s, 0.0) + &sigma.rho * c(1.0 - s, 0.0) };
            mean_field_energy(&sym, &mix)
        };
        let finite_difference = (energy(eps)? - energy(-eps)?) / (2.0 * eps);
        rows.push(GradientRow {
            r,
            directional: rho.expect(&dh).re,
            finite_difference,
            tangency: sigma.expect(&dh).norm(),
        });
    }
    let max_residual = rows
        .iter()
        .map(|r| (r.directional - r.finite_difference).abs().max(r.tangency))
        .fold(0.0, f64::max);
    Ok(GradientReport { rows, max_residual, pass: max_residual < GRADIENT_TOL })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldReport {
    pub n_max: usize,
    pub bracket: Option<BlochBracketReport>,
    pub flip: Option<FlipReport>,
    /// Largest `|Gamma_N(sym X)|` over the flip site counts.
    pub bulk_annihilation: Option<f64>,
    pub flip_dynamics: Option<FlipDynamicsReport>,
    pub gradient: Option<GradientReport>,
    pub product: Option<ProductDefectReport>,
    pub pass: bool,
}

pub fn mean_field_experiment(cfg: &MeanFieldConfig) -> CoreResult<MeanFieldReport> {
    check_sites(cfg.n_max, MAX_SITES)?;
    if cfg.n_max < 4 {
        return Err(CoreError::Refused(format!("N_max = {} leaves no doubling pair", cfg.n_max)));
    }
    let run = |part| cfg.experiment.runs(part);
    let [sx, sy, sz] = linalg::paulis();
    let ns: Vec<usize> = (4..=cfg.n_max).collect();
    let rho = BlochState::from_bloch(cfg.rho)?;
    let sigma = BlochState::from_bloch(cfg.sigma)?;
    let bracket = if run(MeanFieldExperiment::Bracket) { Some(bloch_bracket_check(&ns, cfg.bracket_tol)?) } else { None };
    let (flip, bulk, dynamics) = if run(MeanFieldExperiment::Flip) {
        let flip = flip_limit_defect(&sz, &sx, &rho, &sigma, &cfg.flip_ns)?;
        let probes = [sx.clone(), linalg::kron(&sz, &sy), linalg::kron(&sx, &sx)];
        let mut bulk: f64 = 0.0;
        for &n in cfg.flip_ns.iter().filter(|&&n| n >= 2) {
            bulk = bulk.max(bulk_annihilation(n, &probes, SiteAlgebra::qubit())?);
        }
        let dynamics = flip_dynamics(&sz, &rho, &sigma, &cfg.flip_ns, cfg.flip_t)?;
        (Some(flip), Some(bulk), Some(dynamics))
    } else {
        (None, None, None)
    };
    let gradient = if run(MeanFieldExperiment::Gradient) { Some(gradient_check(&rho)?) } else { None };
    let product =
        if run(MeanFieldExperiment::ProductDefect) { Some(product_defect_experiment(&sx, &sy, cfg.n_max, &ns)?) } else { None };
    let pass = bracket.as_ref().is_none_or(|b| b.pass)
        && flip.as_ref().is_none_or(|f| f.pass)
        && bulk.is_none_or(|b| b == 0.0)
        && gradient.as_ref().is_none_or(|g| g.pass)
        && product.as_ref().is_none_or(|p| p.pass);
    Ok(MeanFieldReport { n_max: cfg.n_max, bracket, flip, bulk_annihilation: bulk, flip_dynamics: dynamics, gradient, product, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perm_oracle(x: &CMat, n: usize, d: usize) -> CMat {
        // Explicit average over all n! permutations.
        let mut perms: Vec<Vec<usize>> = vec![vec![]];
        for k in 0..n {
            perms = perms
                .into_iter()
                .flat_map(|p| (0..=k).map(move |pos| {
                    let mut q = p.clone();
                    q.insert(pos, k);
                    q
                }))
                .collect();
        }
        let dim = x.nrows();
        let mut out = CMat::zeros(dim, dim);
        for p in &perms {
            let map: Vec<usize> = (0..dim)
                .map(|i| {
                    let di = digits(i, n, d);
                    index_of(&p.iter().map(|&s| di[s]).collect::<Vec<_>>(), d)
                })
                .collect();
            out += CMat::from_fn(dim, dim, |r, s| x[(map[r], map[s])]);
        }
        out / c(perms.len() as f64, 0.0)
    }

    #[test]
    fn symmetrize_examples() {
        let [sx, _, sz] = linalg::paulis();
        let id2 = linalg::identity(2);
        let two = symmetrize(2, &sx, 2).unwrap();
        let expect = (linalg::kron(&sx, &id2) + linalg::kron(&id2, &sx)) * c(0.5, 0.0);
        assert!(linalg::max_abs(&(two - expect)) < 1e-15);
        for n in 1..=5 {
            let one = symmetrize(n, &linalg::identity(2), 2).unwrap();
            assert!(linalg::max_abs(&(one - linalg::identity(1 << n))) < 1e-15);
        }
        let zz = linalg::kron(&sz, &sz);
        let three = symmetrize(3, &zz, 2).unwrap();
        let pairs = (place(&zz, &[0, 1], 3, 2) + place(&zz, &[0, 2], 3, 2) + place(&zz, &[1, 2], 3, 2)) * c(1.0 / 3.0, 0.0);
        assert!(linalg::max_abs(&(&three - pairs)) < 1e-15);
        assert!(linalg::max_abs(&(three - perm_oracle(&linalg::kron(&zz, &id2), 3, 2))) < 1e-15);
        assert!(matches!(symmetrize(9, &sx, 2), Err(CoreError::ResourceCap(_))));
        assert!(symmetrize(1, &zz, 2).is_err());
    }

    #[test]
    fn symmetrization_matches_permutation_average_and_is_idempotent() {
        let mut x = CMat::zeros(16, 16);
        for i in 0..16 {
            for j in 0..16 {
                x[(i, j)] = c(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i + 2 * j) % 5) as f64);
            }
        }
        let s = symmetrize_full(&x, 4, 2);
        assert!(linalg::max_abs(&(&s - perm_oracle(&x, 4, 2))) < 1e-13);
        assert!(linalg::max_abs(&(symmetrize_full(&s, 4, 2) - &s)) < 1e-12);
        assert!(linalg::op_norm(&s) <= linalg::op_norm(&x) + 1e-12);
    }

    #[test]
    fn mean_field_system_is_strict() {
        let sys = mean_field_system(5, SiteAlgebra::qubit()).unwrap();
        let [sx, sy, _] = linalg::paulis();
        let a = linalg::kron(&sx, &sy);
        let direct = sys.connect(4, 1, &a);
        let stepped = sys.connect(4, 2, &sys.connect(2, 1, &a));
        assert!(linalg::max_abs(&(direct - stepped)) < 1e-14);
    }

    #[test]
    fn product_state_examples() {
        let sigma = BlochState::from_bloch([0.3, -0.2, 0.6]).unwrap();
        let [sx, sy, sz] = linalg::paulis();
        assert!((eval_product_state(&sigma, &linalg::identity(8)).unwrap() - c(1.0, 0.0)).norm() < 1e-14);
        for n in 1..=6 {
            let v = eval_product_state(&sigma, &symmetrize(n, &sz, 2).unwrap()).unwrap();
            assert!((v - c(0.6, 0.0)).norm() < 1e-14);
        }
        let ab = linalg::kron(&sx, &sy);
        for n in 2..=6 {
            let v = eval_product_state(&sigma, &symmetrize(n, &ab, 2).unwrap()).unwrap();
            assert!((v - c(0.3 * -0.2, 0.0)).norm() < 1e-14);
        }
        assert!(eval_product_state(&sigma, &CMat::zeros(3, 3)).is_err());
        assert!(BlochState::from_bloch([1.0, 1.0, 0.0]).is_err());
        assert!(BlochState::from_density(linalg::identity(2)).is_err());
    }

    #[test]
    fn bracket_examples() {
        let [sx, sy, sz] = linalg::paulis();
        let sigma = BlochState::from_bloch([0.1, 0.4, -0.5]).unwrap();
        let same = bracket_estimate(&sx, &sx, &sigma, &[2, 3, 4]).unwrap();
        assert!(same.values.iter().all(|v| *v == 0.0));
        let commuting = bracket_estimate(&sz, &(sz.clone() * c(2.0, 0.0)), &sigma, &[2, 3]).unwrap();
        assert!(commuting.values.iter().all(|v| v.abs() < 1e-15));
        let rep = bracket_estimate(&sx, &sy, &sigma, &[2, 3, 4, 5]).unwrap();
        assert!((rep.fit.limit - 1.0).abs() < 1e-12);
        assert!(bloch_grid().len() == 13);
    }

    #[test]
    fn gradient_examples() {
        let [sx, _, sz] = linalg::paulis();
        let sigma = BlochState::from_bloch([0.2, 0.1, 0.5]).unwrap();
        assert!(linalg::max_abs(&gradient_dh(&linalg::identity(4), &sigma).unwrap()) < 1e-14);
        let one = gradient_dh(&sz, &sigma).unwrap();
        assert!(linalg::max_abs(&(one - (&sz - linalg::identity(2) * c(0.5, 0.0)))) < 1e-14);
        let two = gradient_dh(&linalg::kron(&sx, &sx), &sigma).unwrap();
        let expect = &sx * c(2.0 * 0.2, 0.0) - linalg::identity(2) * c(2.0 * 0.04, 0.0);
        assert!(linalg::max_abs(&(&two - expect)) < 1e-14);
        // Central differences of H along mixtures with rho.
        let rho = BlochState::from_bloch([-0.4, 0.3, 0.1]).unwrap();
        let h = linalg::kron(&linalg::kron(&sx, &sz), &sx) + linalg::kron(&linalg::kron(&sz, &sz), &sz);
        let dh = gradient_dh(&h, &sigma).unwrap();
        let energy = |s: f64| {
            let mix = BlochState { rho: &rho.rho * c(s, 0.0) + &sigma.rho * c(1.0 - s, 0.0) };
            mean_field_energy(&symmetrize_full(&h, 3, 2), &mix).unwrap()
        };
        let eps = 1e-5;
        let fd = (energy(eps) - energy(-eps)) / (2.0 * eps);
        assert!((rho.expect(&dh).re - fd).abs() < 1e-8);
        assert!(sigma.expect(&dh).norm() < 1e-12);
        assert!(linalg::is_hermitian(&dh, 1e-14));
    }

    #[test]
    fn flip_generator_examples() {
        let [sx, sy, sz] = linalg::paulis();
        let id2 = linalg::identity(2);
        let g2 = FlipGenerator::new(2, SiteAlgebra::qubit()).unwrap();
        let x = linalg::kron(&sx, &id2);
        let expect = (linalg::kron(&id2, &sx) - &x) * c(2.0, 0.0);
        assert!(linalg::max_abs(&(g2.apply(&x) - expect)) < 1e-15);
        // Gamma_2(X) = F[X, F] + [F, X]F.
        let f = CMat::from_fn(4, 4, |r, s| c(if r == [0, 2, 1, 3][s] { 1.0 } else { 0.0 }, 0.0));
        let y = linalg::kron(&sy, &sz);
        let alt = &f * linalg::commutator(&y, &f) + linalg::commutator(&f, &y) * &f;
        assert!(linalg::max_abs(&(g2.apply(&y) - alt)) < 1e-14);
        assert_eq!(bulk_annihilation(5, &[sx.clone(), linalg::kron(&sx, &sz)], SiteAlgebra::qubit()).unwrap(), 0.0);
        assert!(FlipGenerator::new(7, SiteAlgebra::qubit()).is_err());
        let g3 = FlipGenerator::new(3, SiteAlgebra::qubit()).unwrap();
        let z = place(&sz, &[1], 3, 2);
        let dense = g3.superoperator() * CMat::from_column_slice(64, 1, z.as_slice());
        assert!(linalg::max_abs(&(CMat::from_column_slice(8, 8, dense.as_slice()) - g3.apply(&z))) < 1e-15);
    }

    #[test]
    fn tagged_flip_defect_is_exactly_inverse_n_minus_one() {
        // Oracle: defect = 2 sigma(a) (rho(b) - sigma(b)) / (N - 1).
        let [sx, _, sz] = linalg::paulis();
        let rho = BlochState::from_bloch([0.6, 0.0, -0.3]).unwrap();
        let sigma = BlochState::from_bloch([0.1, 0.2, 0.7]).unwrap();
        let rep = flip_limit_defect(&sz, &sx, &rho, &sigma, &[3, 4, 5, 6]).unwrap();
        for row in &rep.rows {
            let oracle = (2.0 * 0.7 * (0.6 - 0.1) / (row.n - 1) as f64).abs();
            assert!((row.defect - oracle).abs() < 1e-13, "{row:?}");
        }
        assert!((rep.doubling_ratios[0] - 2.5).abs() < 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn flip_dynamics_closed_form() {
        // e^{t Gamma} x_1 = j(x) + e^{-2Nt/(N-1)} (x_1 - j(x)).
        let [_, _, sz] = linalg::paulis();
        let rho = BlochState::from_bloch([0.0, 0.0, 1.0]).unwrap();
        let sigma = BlochState::from_bloch([0.0, 0.0, -0.4]).unwrap();
        let rep = flip_dynamics(&sz, &rho, &sigma, &[3, 4, 5, 6], 0.5).unwrap();
        for (&n, &v) in rep.ns.iter().zip(&rep.values) {
            let nf = n as f64;
            let mean = (1.0 + (nf - 1.0) * -0.4) / nf;
            let oracle = mean + (-2.0 * nf * 0.5 / (nf - 1.0)).exp() * (1.0 - mean);
            assert!((v - oracle).abs() < 1e-13);
        }
        assert!(rep.defect < 0.05, "{rep:?}");
    }

    #[test]
    fn commutators_decay_like_inverse_n() {
        let [sx, sy, _] = linalg::paulis();
        let rep = product_defect_experiment(&sx, &sy, 8, &[4, 5, 6, 7, 8]).unwrap();
        for &(n, v) in &rep.commutators {
            assert!((v - 2.0 / n as f64).abs() < 1e-12);
        }
        assert!((rep.commutator_ratios[0] - 2.0).abs() < 1e-12);
        assert!(rep.pass, "{:?}", rep.multiplicativity_ratios);
    }
}
