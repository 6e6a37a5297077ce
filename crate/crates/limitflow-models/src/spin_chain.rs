//! Finite-range qubit chains on growing intervals: local Hamiltonians,
//! derivations, boundary terms and Heisenberg dynamics.
//!
//! The interval of length `L` holds the sites `-L/2..L/2`; its observables are
//! `2^L x 2^L` matrices with site 0 of the interval as the leading tensor factor.
//! Embeddings pad with identities on both sides.

use std::sync::Arc;

use limitflow_core::inductive::{jconvergence_diagnostic, ConvergenceReport, ElementNet, MapRule};
use limitflow_core::linalg::{self, c, CMat};
use limitflow_core::report::strictly_decreasing;
use limitflow_core::{CoreError, CoreResult, LevelSpace, NormKind, ScaleChain, SoftSystem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::place;

pub const MAX_SITES: usize = 10;

/// One translation-invariant term: `op` acting on the sites `x + offsets`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub offsets: Vec<usize>,
    pub op: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSpec {
    pub terms: Vec<Term>,
}

impl InteractionSpec {
    pub fn new(terms: Vec<Term>) -> CoreResult<Self> {
        for t in &terms {
            let ok_offsets = !t.offsets.is_empty()
                && t.offsets[0] == 0
                && t.offsets.windows(2).all(|w| w[0] < w[1]);
            if !ok_offsets {
                return Err(CoreError::Refused(format!("offsets {:?} must start at 0 and increase", t.offsets)));
            }
            if t.op.nrows() != 1 << t.offsets.len() || t.op.ncols() != t.op.nrows() {
                return Err(CoreError::Refused(format!("term on {} sites has shape {:?}", t.offsets.len(), t.op.shape())));
            }
            if !linalg::is_hermitian(&t.op, 1e-14) {
                return Err(CoreError::Refused("interaction terms must be hermitian".into()));
            }
        }
        Ok(Self { terms })
    }

    /// `-J sum sigma_z sigma_z - g sum sigma_x`.
    pub fn ising(j: f64, g: f64) -> Self {
        let [sx, _, sz] = linalg::paulis();
        let mut terms = Vec::new();
        if g != 0.0 {
            terms.push(Term { offsets: vec![0], op: sx * c(-g, 0.0) });
        }
        if j != 0.0 {
            terms.push(Term { offsets: vec![0, 1], op: linalg::kron(&sz, &sz) * c(-j, 0.0) });
        }
        Self { terms }
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn range(&self) -> usize {
        self.terms.iter().map(|t| *t.offsets.last().expect("non-empty")).max().unwrap_or(0)
    }

    /// `p_Phi(x) = sum_{X containing x} ||Phi(X)||`, the same at every site.
    pub fn p_phi(&self) -> f64 {
        self.terms.iter().map(|t| t.offsets.len() as f64 * linalg::op_norm(&t.op)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Open,
    Periodic,
    /// Wrap terms with flipped sign.
    AntiPeriodic,
}

fn check_length(len: usize) -> CoreResult<()> {
    if len == 0 {
        return Err(CoreError::Refused("empty interval".into()));
    }
    if len > MAX_SITES {
        return Err(CoreError::ResourceCap(format!("interval of {len} sites exceeds the cap {MAX_SITES}")));
    }
    Ok(())
}

/// Sum of the terms whose placement lies inside `0..len`.
pub fn bulk_hamiltonian(spec: &InteractionSpec, len: usize) -> CoreResult<CMat> {
    check_length(len)?;
    let mut h = CMat::zeros(1 << len, 1 << len);
    for t in &spec.terms {
        let span = *t.offsets.last().expect("non-empty");
        for x in 0..len.saturating_sub(span) {
            let sites: Vec<usize> = t.offsets.iter().map(|o| x + o).collect();
            h += place(&t.op, &sites, len, 2);
        }
    }
    Ok(h)
}

/// `B_L`: the wrapped placements for (anti-)periodic conditions, zero for open.
pub fn boundary_term(spec: &InteractionSpec, len: usize, bc: BoundaryCondition) -> CoreResult<CMat> {
    check_length(len)?;
    let mut b = CMat::zeros(1 << len, 1 << len);
    let sign = match bc {
        BoundaryCondition::Open => return Ok(b),
        BoundaryCondition::Periodic => 1.0,
        BoundaryCondition::AntiPeriodic => -1.0,
    };
    if spec.range() >= len {
        return Err(CoreError::Refused(format!("range {} does not wrap on {len} sites", spec.range())));
    }
    for t in &spec.terms {
        let span = *t.offsets.last().expect("non-empty");
        for x in len - span..len {
            let sites: Vec<usize> = t.offsets.iter().map(|o| (x + o) % len).collect();
            b += place(&t.op, &sites, len, 2) * c(sign, 0.0);
        }
    }
    Ok(b)
}

pub fn local_hamiltonian(spec: &InteractionSpec, len: usize, bc: BoundaryCondition) -> CoreResult<CMat> {
    Ok(bulk_hamiltonian(spec, len)? + boundary_term(spec, len, bc)?)
}

/// `a` on the `k` sites starting at index `start` of an interval of length `len`.
pub fn embed_local(a: &CMat, start: usize, len: usize) -> CoreResult<CMat> {
    let k = crate::tensor::sites_of(a.nrows(), 2)?;
    if start + k > len {
        return Err(CoreError::Refused(format!("{k}-site observable at {start} leaves {len} sites")));
    }
    let left = linalg::identity(1 << start);
    let right = linalg::identity(1 << (len - start - k));
    Ok(linalg::kron(&linalg::kron(&left, a), &right))
}

/// Index of site 0 in an interval of even length.
pub fn center_index(len: usize) -> usize {
    len / 2
}

/// `delta_L(a) = i sum [Phi(X), a]` over placements `X` inside the interval that
/// meet the support `start..start+k` of `a`.
pub fn derivation_apply(spec: &InteractionSpec, a: &CMat, start: usize, len: usize) -> CoreResult<CMat> {
    check_length(len)?;
    let k = crate::tensor::sites_of(a.nrows(), 2)?;
    let a_emb = embed_local(a, start, len)?;
    let mut out = CMat::zeros(1 << len, 1 << len);
    for t in &spec.terms {
        let span = *t.offsets.last().expect("non-empty");
        for x in 0..len.saturating_sub(span) {
            let sites: Vec<usize> = t.offsets.iter().map(|o| x + o).collect();
            if sites.iter().any(|&s| s >= start && s < start + k) {
                out += linalg::commutator(&place(&t.op, &sites, len, 2), &a_emb);
            }
        }
    }
    Ok(out * c(0.0, 1.0))
}

/// `beta_L(a) = i[B_L, a]`.
pub fn boundary_derivation(spec: &InteractionSpec, bc: BoundaryCondition, a: &CMat, start: usize, len: usize) -> CoreResult<CMat> {
    let b = boundary_term(spec, len, bc)?;
    Ok(linalg::commutator(&b, &embed_local(a, start, len)?) * c(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeBound {
    pub len: usize,
    pub support: usize,
    pub lhs: f64,
    /// `2 |Lambda_0| sup p_Phi ||a||`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn fe_bound(spec: &InteractionSpec, a: &CMat, start: usize, len: usize) -> CoreResult<FeBound> {
    let support = crate::tensor::sites_of(a.nrows(), 2)?;
    let lhs = linalg::op_norm(&derivation_apply(spec, a, start, len)?);
    let rhs = 2.0 * support as f64 * spec.p_phi() * linalg::op_norm(a);
    Ok(FeBound { len, support, lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-12) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    pub p_phi: f64,
    /// `(lambda, sum_n e^{n lambda} sup_x sum_{X containing x, |X| = n+1} ||Phi(X)||)`.
    pub sums: Vec<(f64, f64)>,
    pub finite: bool,
}

pub fn decay_profile(spec: &InteractionSpec, lambdas: &[f64]) -> DecayProfile {
    let max_size = spec.terms.iter().map(|t| t.offsets.len()).max().unwrap_or(0);
    let by_size: Vec<f64> = (1..=max_size)
        .map(|size| {
            spec.terms
                .iter()
                .filter(|t| t.offsets.len() == size)
                .map(|t| size as f64 * linalg::op_norm(&t.op))
                .sum()
        })
        .collect();
    let sums: Vec<(f64, f64)> = lambdas
        .iter()
        .map(|&lam| (lam, by_size.iter().enumerate().map(|(n, w)| (n as f64 * lam).exp() * w).sum()))
        .collect();
    let finite = sums.iter().all(|s| s.1.is_finite());
    DecayProfile { p_phi: spec.p_phi(), sums, finite }
}

/// Nested intervals of even lengths; embeddings are isometric *-homomorphisms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeChain {
    pub lengths: Vec<usize>,
}

impl CubeChain {
    pub fn new(lengths: Vec<usize>) -> CoreResult<Self> {
        if lengths.len() < 3 {
            return Err(CoreError::ChainTooShort(lengths.len()));
        }
        if lengths.iter().any(|&l| l % 2 != 0) || !lengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(CoreError::NotOrdered);
        }
        check_length(*lengths.last().expect("non-empty"))?;
        Ok(Self { lengths })
    }

    pub fn default_chain() -> Self {
        Self { lengths: vec![4, 6, 8, 10] }
    }

    pub fn system(&self) -> CoreResult<SoftSystem> {
        let chain = ScaleChain::new(self.lengths.iter().map(|&l| l as f64).collect(), limitflow_core::Direction::ToInfinity)?;
        let levels = self.lengths.iter().map(|&l| LevelSpace::matrices(1 << l, NormKind::Operator, true)).collect();
        let lens = self.lengths.clone();
        let rule: MapRule = Arc::new(move |n, m, x| embed(x, lens[m], lens[n]));
        SoftSystem::from_rule(chain, levels, rule, true)
    }
}

/// Pads an observable of the interval of length `from` to length `to`.
pub fn embed(x: &CMat, from: usize, to: usize) -> CMat {
    let pad = (to - from) / 2;
    let side = linalg::identity(1 << pad);
    linalg::kron(&linalg::kron(&side, x), &side)
}

/// `e^{itH} a e^{-itH}` through the spectral decomposition of `H`.
pub fn heisenberg_evolve(h: &CMat, a: &CMat, t: f64) -> CMat {
    if t == 0.0 {
        return a.clone();
    }
    let u = if h.iter().all(|z| z.im == 0.0) {
        let (vals, v) = linalg::eigh_real(&linalg::real_part(h));
        let scaled = |f: fn(f64) -> f64| {
            let mut vd = v.clone();
            for (k, l) in vals.iter().enumerate() {
                vd.column_mut(k).iter_mut().for_each(|x| *x *= f(l * t));
            }
            &vd * v.transpose()
        };
        linalg::from_parts(&scaled(f64::cos), &scaled(f64::sin))
    } else {
        linalg::hermitian_function(h, |l| c((l * t).cos(), (l * t).sin()))
    };
    linalg::matmul(&linalg::matmul(&u, a), &u.adjoint())
}

/// Same evolution with the Padé exponential, used as an oracle.
pub fn heisenberg_evolve_expm(h: &CMat, a: &CMat, t: f64) -> CMat {
    let u = linalg::expm(&(h * c(0.0, t)));
    linalg::matmul(&linalg::matmul(&u, a), &u.adjoint())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub len: usize,
    pub defect: f64,
    pub oracle_defect: f64,
    /// Largest entry difference between spectral and Padé evolutions.
    pub oracle_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDefectReport {
    pub t: f64,
    pub pair: (BoundaryCondition, BoundaryCondition),
    pub rows: Vec<BoundaryRow>,
    pub strictly_decreasing: bool,
    pub max_oracle_gap: f64,
    /// j-convergence diagnostics of the evolved nets under each condition.
    pub convergence: Vec<ConvergenceReport>,
    pub trails_decreasing: bool,
    pub pass: bool,
}

pub const ORACLE_TOL: f64 = 1e-10;

/// `||tau_t^{first}(a) - tau_t^{second}(a)||` for `a` at the center of each interval.
pub fn boundary_defect(
    spec: &InteractionSpec,
    a: &CMat,
    t: f64,
    chain: &CubeChain,
    pair: (BoundaryCondition, BoundaryCondition),
) -> CoreResult<BoundaryDefectReport> {
    let sys = chain.system()?;
    let per_len: Vec<CoreResult<(BoundaryRow, CMat, CMat)>> = chain
        .lengths
        .par_iter()
        .map(|&len| {
            let a_emb = embed_local(a, center_index(len), len)?;
            let h1 = local_hamiltonian(spec, len, pair.0)?;
            let h2 = local_hamiltonian(spec, len, pair.1)?;
            let (e1, e2) = (heisenberg_evolve(&h1, &a_emb, t), heisenberg_evolve(&h2, &a_emb, t));
            let (o1, o2) = (heisenberg_evolve_expm(&h1, &a_emb, t), heisenberg_evolve_expm(&h2, &a_emb, t));
            let defect = linalg::op_norm(&(&e1 - &e2));
            let oracle_defect = linalg::op_norm(&(&o1 - &o2));
            let oracle_gap = linalg::max_abs(&(&e1 - &o1)).max(linalg::max_abs(&(&e2 - &o2)));
            Ok((BoundaryRow { len, defect, oracle_defect, oracle_gap }, e1, e2))
        })
        .collect();
    let mut rows = Vec::new();
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for r in per_len {
        let (row, e1, e2) = r?;
        rows.push(row);
        first.push(e1);
        second.push(e2);
    }
    let defects: Vec<f64> = rows.iter().map(|r| r.defect).collect();
    let decreasing = strictly_decreasing(&defects);
    let max_oracle_gap = rows
        .iter()
        .map(|r| r.oracle_gap.max((r.defect - r.oracle_defect).abs()))
        .fold(0.0, f64::max);
    let convergence = vec![
        jconvergence_diagnostic(&sys, &ElementNet::new(first), 1e-2)?,
        jconvergence_diagnostic(&sys, &ElementNet::new(second), 1e-2)?,
    ];
    let trails_decreasing = convergence.iter().all(|rep| strictly_decreasing(&rep.dhat_values()));
    let pass = decreasing && max_oracle_gap < ORACLE_TOL && trails_decreasing;
    Ok(BoundaryDefectReport { t, pair, rows, strictly_decreasing: decreasing, max_oracle_gap, convergence, trails_decreasing, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationReport {
    pub lengths: Vec<usize>,
    /// `||delta_L(a) - j(delta_{L_min}(a))||` entrywise max, per `L`.
    pub differences: Vec<f64>,
    /// `||beta_L(a)||` entrywise max per `L` and condition.
    pub boundary_values: Vec<(usize, BoundaryCondition, f64)>,
    pub exact: bool,
}

/// Derivation of a centered observable across the chain, compared with the
/// smallest interval that contains its support fattened by the range.
pub fn derivation_stabilization(spec: &InteractionSpec, a: &CMat, chain: &CubeChain) -> CoreResult<StabilizationReport> {
    let k = crate::tensor::sites_of(a.nrows(), 2)?;
    let r = spec.range();
    let base = chain
        .lengths
        .iter()
        .copied()
        .find(|&l| center_index(l) >= r && center_index(l) + k + r <= l)
        .ok_or_else(|| CoreError::Refused("no interval contains the fattened support".into()))?;
    let reference = derivation_apply(spec, a, center_index(base), base)?;
    let mut differences = Vec::new();
    let mut boundary_values = Vec::new();
    let mut lengths = Vec::new();
    for &len in chain.lengths.iter().filter(|&&l| l >= base) {
        let d = derivation_apply(spec, a, center_index(len), len)?;
        differences.push(linalg::max_abs(&(d - embed(&reference, base, len))));
        for bc in [BoundaryCondition::Periodic, BoundaryCondition::AntiPeriodic] {
            let b = boundary_derivation(spec, bc, a, center_index(len), len)?;
            boundary_values.push((len, bc, linalg::max_abs(&b)));
        }
        lengths.push(len);
    }
    let exact = differences.iter().all(|&d| d == 0.0) && boundary_values.iter().all(|b| b.2 == 0.0);
    Ok(StabilizationReport { lengths, differences, boundary_values, exact })
}

/// `1 / max_k (||delta_L^k(a)|| / k!)^{1/k}` per interval length.
pub fn analytic_lower_bounds(spec: &InteractionSpec, a: &CMat, lengths: &[usize], k_max: usize) -> CoreResult<Vec<f64>> {
    lengths
        .iter()
        .map(|&len| {
            let h = bulk_hamiltonian(spec, len)?;
            let mut x = embed_local(a, center_index(len), len)?;
            let mut worst: f64 = 0.0;
            let mut log_fact = 0.0;
            for k in 1..=k_max {
                x = linalg::commutator(&h, &x) * c(0.0, 1.0);
                log_fact += (k as f64).ln();
                let n = linalg::op_norm(&x);
                if n == 0.0 {
                    break;
                }
                worst = worst.max(((n.ln() - log_fact) / k as f64).exp());
            }
            Ok(if worst == 0.0 { f64::INFINITY } else { 1.0 / worst })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteObservable {
    X,
    Y,
    Z,
}

impl SiteObservable {
    pub fn matrix(self) -> CMat {
        let [sx, sy, sz] = linalg::paulis();
        match self {
            SiteObservable::X => sx,
            SiteObservable::Y => sy,
            SiteObservable::Z => sz,
        }
    }
}

/// Transverse-field Ising couplings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsingModel {
    #[serde(rename = "J")]
    pub j: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinConfig {
    pub model: IsingModel,
    pub observable: SiteObservable,
    pub t_grid: Vec<f64>,
    #[serde(rename = "L_chain")]
    pub lengths: Vec<usize>,
    /// Pairs of boundary conditions whose evolutions are compared.
    #[serde(rename = "bc_set")]
    pub bc_pairs: Vec<(BoundaryCondition, BoundaryCondition)>,
}

impl Default for SpinConfig {
    fn default() -> Self {
        Self {
            model: IsingModel { j: 1.0, g: 1.0 },
            observable: SiteObservable::X,
            t_grid: vec![0.5],
            lengths: vec![4, 6, 8, 10],
            bc_pairs: vec![
                (BoundaryCondition::Periodic, BoundaryCondition::Open),
                (BoundaryCondition::AntiPeriodic, BoundaryCondition::Open),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinReport {
    pub fe: Vec<FeBound>,
    pub fe_holds: bool,
    pub stabilization: StabilizationReport,
    pub decay: DecayProfile,
    pub boundary: Vec<BoundaryDefectReport>,
    pub pass: bool,
}

pub fn spin_chain_experiment(cfg: &SpinConfig) -> CoreResult<SpinReport> {
    let spec = InteractionSpec::ising(cfg.model.j, cfg.model.g);
    let chain = CubeChain::new(cfg.lengths.clone())?;
    let a = cfg.observable.matrix();
    let [sx, sy, sz] = linalg::paulis();
    let probes = [a.clone(), linalg::kron(&sx, &sz), linalg::kron(&sy, &sy)];
    let mut fe = Vec::new();
    for &len in &chain.lengths {
        for p in &probes {
            let k = crate::tensor::sites_of(p.nrows(), 2)?;
            for start in 0..=len - k {
                fe.push(fe_bound(&spec, p, start, len)?);
            }
        }
    }
    let fe_holds = fe.iter().all(|f| f.holds);
    let stabilization = derivation_stabilization(&spec, &a, &chain)?;
    let decay = decay_profile(&spec, &[0.0, 0.5, 1.0]);
    let mut boundary = Vec::new();
    for &t in &cfg.t_grid {
        for &pair in &cfg.bc_pairs {
            boundary.push(boundary_defect(&spec, &a, t, &chain, pair)?);
        }
    }
    let pass = fe_holds && stabilization.exact && boundary.iter().all(|b| b.pass);
    Ok(SpinReport { fe, fe_holds, stabilization, decay, boundary, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamiltonian_examples() {
        let [sx, _, sz] = linalg::paulis();
        let field = InteractionSpec::ising(0.0, 0.7);
        assert!(linalg::max_abs(&(bulk_hamiltonian(&field, 1).unwrap() - &sx * c(-0.7, 0.0))) < 1e-15);
        let id = linalg::identity(2);
        let h2 = local_hamiltonian(&InteractionSpec::ising(1.0, 1.0), 2, BoundaryCondition::Open).unwrap();
        let expect = -(linalg::kron(&sz, &sz) + linalg::kron(&sx, &id) + linalg::kron(&id, &sx));
        assert!(linalg::max_abs(&(&h2 - expect)) < 1e-15);
        // Ground energy of the L = 2 open chain: -sqrt(5).
        let (eig, _) = linalg::eigh(&h2);
        assert!((eig[0] + 5f64.sqrt()).abs() < 1e-12);
        let spec = InteractionSpec::ising(1.3, 0.4);
        for len in [3, 5, 6] {
            let open = local_hamiltonian(&spec, len, BoundaryCondition::Open).unwrap();
            let per = local_hamiltonian(&spec, len, BoundaryCondition::Periodic).unwrap();
            let anti = local_hamiltonian(&spec, len, BoundaryCondition::AntiPeriodic).unwrap();
            let wrap = place(&linalg::kron(&sz, &sz), &[len - 1, 0], len, 2) * c(-1.3, 0.0);
            assert_eq!(boundary_term(&spec, len, BoundaryCondition::Periodic).unwrap(), wrap);
            assert!(linalg::max_abs(&(&per - &open - &wrap)) < 1e-15);
            assert!(linalg::max_abs(&(&anti - &open + &wrap)) < 1e-15);
            assert!(linalg::is_hermitian(&per, 0.0));
        }
        assert!(bulk_hamiltonian(&spec, 11).is_err());
    }

    #[test]
    fn derivation_examples() {
        let [sx, sy, sz] = linalg::paulis();
        let spec = InteractionSpec::ising(1.0, 1.0);
        assert_eq!(linalg::max_abs(&derivation_apply(&spec, &linalg::identity(2), 2, 6).unwrap()), 0.0);
        // Direct commutator oracle for sigma_x at the center of 6 sites.
        let len = 6;
        let a = embed_local(&sx, 3, len).unwrap();
        let zz = linalg::kron(&sz, &sz);
        let h_local = -(place(&zz, &[2, 3], len, 2) + place(&zz, &[3, 4], len, 2) + place(&sx, &[3], len, 2));
        let oracle = linalg::commutator(&h_local, &a) * c(0.0, 1.0);
        assert!(linalg::max_abs(&(derivation_apply(&spec, &sx, 3, len).unwrap() - oracle)) < 1e-15);
        let b = boundary_derivation(&spec, BoundaryCondition::Periodic, &sy, 3, len).unwrap();
        assert_eq!(linalg::max_abs(&b), 0.0);
        let rep = derivation_stabilization(&spec, &sx, &CubeChain::default_chain()).unwrap();
        assert!(rep.exact, "{rep:?}");
    }

    #[test]
    fn fe_bound_and_decay_profile() {
        let spec = InteractionSpec::ising(1.0, 1.0);
        assert_eq!(spec.p_phi(), 3.0);
        let [sx, _, sz] = linalg::paulis();
        for start in 0..6 {
            assert!(fe_bound(&spec, &sx, start, 6).unwrap().holds);
        }
        assert!(fe_bound(&spec, &linalg::kron(&sx, &sz), 2, 6).unwrap().holds);
        let prof = decay_profile(&spec, &[1.0]);
        assert!((prof.sums[0].1 - (1.0 + std::f64::consts::E * 2.0)).abs() < 1e-12);
        assert_eq!(decay_profile(&InteractionSpec::zero(), &[1.0]).sums[0].1, 0.0);
        assert!(InteractionSpec::new(vec![Term { offsets: vec![1], op: sx.clone() }]).is_err());
        assert!(InteractionSpec::new(vec![Term { offsets: vec![0], op: linalg::paulis()[1].clone() * c(0.0, 1.0) }]).is_err());
    }

    #[test]
    fn chain_system_is_strict_and_isometric() {
        let sys = CubeChain::default_chain().system().unwrap();
        let [sx, sy, _] = linalg::paulis();
        let a = embed_local(&linalg::kron(&sx, &sy), 1, 4).unwrap();
        let direct = sys.connect(2, 0, &a);
        let stepped = sys.connect(2, 1, &sys.connect(1, 0, &a));
        assert_eq!(direct, stepped);
        let b = embed_local(&sy, 3, 4).unwrap();
        let (ja, jb) = (sys.connect(1, 0, &a), sys.connect(1, 0, &b));
        assert_eq!(&ja * &jb, sys.connect(1, 0, &(&a * &b)));
        assert!((linalg::op_norm(&ja) - linalg::op_norm(&a)).abs() < 1e-14);
        assert!(CubeChain::new(vec![4, 5, 6]).is_err());
        assert!(CubeChain::new(vec![4, 6]).is_err());
        assert!(CubeChain::new(vec![4, 6, 12]).is_err());
    }

    #[test]
    fn heisenberg_examples() {
        let [sx, _, sz] = linalg::paulis();
        let spec = InteractionSpec::ising(1.0, 1.0);
        let chain = CubeChain::new(vec![4, 6, 8]).unwrap();
        let zero_t = boundary_defect(&spec, &sx, 0.0, &chain, (BoundaryCondition::Periodic, BoundaryCondition::Open)).unwrap();
        assert!(zero_t.rows.iter().all(|r| r.defect == 0.0));
        let classical = InteractionSpec::ising(1.0, 0.0);
        let h = local_hamiltonian(&classical, 6, BoundaryCondition::Periodic).unwrap();
        let a = embed_local(&sz, 3, 6).unwrap();
        assert!(linalg::max_abs(&(heisenberg_evolve(&h, &a, 0.9) - &a)) < 1e-13);
        // Complex hamiltonian branch against the Padé oracle.
        let hc = h + embed_local(&linalg::paulis()[1], 2, 6).unwrap() * c(0.3, 0.0);
        let x = embed_local(&sx, 3, 6).unwrap();
        assert!(linalg::max_abs(&(heisenberg_evolve(&hc, &x, 0.7) - heisenberg_evolve_expm(&hc, &x, 0.7))) < 1e-12);
    }

    #[test]
    fn analytic_bounds_are_uniform() {
        let [sx, _, _] = linalg::paulis();
        let b = analytic_lower_bounds(&InteractionSpec::ising(1.0, 1.0), &sx, &[4, 6, 8], 6).unwrap();
        let (lo, hi) = b.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        assert!(lo > 0.0 && lo > 0.5 * hi, "{b:?}");
    }
}
