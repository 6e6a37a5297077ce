//! One-particle wavelet renormalization of a lattice Majorana chain.
//!
//! Level `n` is the periodic lattice `eps_n * {-L_n, .., L_n - 1}` with a two
//! component spinor per site. Vectors are columns of length `2 * sites`, with
//! the spinor components of site `j` at rows `2j` and `2j + 1`. Site index `j`
//! sits at position `eps_n * (j - L_n)`.

use std::path::Path;

use limitflow_core::inductive::{
    jconvergence_diagnostic, make_basic_net, ConvergenceReport, DefectEntry,
};
use limitflow_core::linalg::{self, c, CMat, C64};
use limitflow_core::report::{strictly_decreasing, successive_ratios, LabelValue};
use limitflow_core::{
    CoreError, CoreResult, ElementNet, LevelSpace, NormKind, ScaleChain, SoftSystem,
};
use nalgebra::Matrix2;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::thompson::{thompson_experiment, ThompsonReport};

pub type Mat2 = Matrix2<C64>;

pub const FILTER_TOL: f64 = 1e-12;
pub const PROJECTION_TOL: f64 = 1e-10;
pub const KERNEL_RATIO_RANGE: (f64, f64) = (1.7, 2.3);
pub const DYNAMICS_RATIO_RANGE: (f64, f64) = (1.6, 2.4);
pub const COVARIANCE_TOL: f64 = 1e-2;
/// Largest lattice scale any experiment may touch (`2^22` sites).
pub const MAX_SCALE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyadicLattice {
    pub n: usize,
    pub eps0: f64,
    pub l0: usize,
}

impl DyadicLattice {
    pub fn new(n: usize, eps0: f64, l0: usize) -> Self {
        Self { n, eps0, l0 }
    }

    /// `eps0 = 1`, `L0 = 2`.
    pub fn standard(n: usize) -> Self {
        Self::new(n, 1.0, 2)
    }

    pub fn at(&self, n: usize) -> Self {
        Self { n, ..*self }
    }

    pub fn eps(&self) -> f64 {
        self.eps0 * 0.5f64.powi(self.n as i32)
    }

    /// `L_n = 2^n L0`.
    pub fn half_sites(&self) -> usize {
        self.l0 << self.n
    }

    pub fn sites(&self) -> usize {
        2 * self.half_sites()
    }

    pub fn dim(&self) -> usize {
        2 * self.sites()
    }

    /// Physical half-length `L = eps_n L_n`, the same at every scale.
    pub fn length(&self) -> f64 {
        self.eps() * self.half_sites() as f64
    }

    pub fn position(&self, j: usize) -> f64 {
        self.eps() * (j as f64 - self.half_sites() as f64)
    }

    /// Signed momentum label `q` of DFT slot `idx`, with `k = pi q / L`.
    pub fn momentum_label(&self, idx: usize) -> i64 {
        let (idx, n) = (idx as i64, self.sites() as i64);
        if idx < n / 2 {
            idx
        } else {
            idx - n
        }
    }

    /// `eps_n k` for DFT slot `idx`.
    pub fn theta(&self, idx: usize) -> f64 {
        std::f64::consts::PI * self.momentum_label(idx) as f64 / self.half_sites() as f64
    }

    pub fn momentum(&self, idx: usize) -> f64 {
        std::f64::consts::PI * self.momentum_label(idx) as f64 / self.length()
    }

    /// DFT slot of the momentum `pi q / L`, if it lies on the grid.
    pub fn slot_of(&self, q: i64) -> Option<usize> {
        let half = self.half_sites() as i64;
        (-half..half).contains(&q).then(|| q.rem_euclid(self.sites() as i64) as usize)
    }
}

/// Orthonormal low-pass filter taps `h_alpha`, `alpha = 0, 1, ..`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    name: String,
    taps: Vec<C64>,
}

impl FilterSpec {
    pub fn new(name: impl Into<String>, taps: Vec<C64>) -> CoreResult<Self> {
        let name = name.into();
        if taps.is_empty() {
            return Err(CoreError::Refused(format!("filter {name} has no taps")));
        }
        let defect = orthonormality_defect(&taps);
        if defect > FILTER_TOL {
            return Err(CoreError::Refused(format!(
                "filter {name} fails orthonormality by {defect:.3e}"
            )));
        }
        Ok(Self { name, taps })
    }

    pub fn haar() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::new("haar", vec![c(h, 0.0), c(h, 0.0)]).expect("haar taps are orthonormal")
    }

    /// Daubechies taps with two vanishing moments.
    pub fn d4() -> Self {
        let s3 = 3f64.sqrt();
        let norm = 4.0 * 2f64.sqrt();
        let taps = [1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3].map(|t| c(t / norm, 0.0));
        Self::new("d4", taps.to_vec()).expect("d4 taps are orthonormal")
    }

    /// One tap per line, `re` or `re im`; `#` starts a comment.
    pub fn parse_taps(name: &str, text: &str) -> CoreResult<Self> {
        let mut taps = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            match parts.as_deref() {
                Ok([re]) => taps.push(c(*re, 0.0)),
                Ok([re, im]) => taps.push(c(*re, *im)),
                _ => {
                    return Err(CoreError::Refused(format!(
                        "tap file line {}: expected `re` or `re im`",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(name, taps)
    }

    pub fn load(path: &Path) -> CoreResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Refused(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_taps(&path.display().to_string(), &text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn taps(&self) -> &[C64] {
        &self.taps
    }

    /// Centre of mass `sum alpha h_alpha / sum h_alpha` of the scaling function.
    pub fn first_moment(&self) -> f64 {
        let total: C64 = self.taps.iter().sum();
        let moment: C64 = self.taps.iter().enumerate().map(|(a, h)| h * a as f64).sum();
        (moment / total).re
    }
}

/// `max_beta |sum_alpha h_alpha conj(h_{alpha + 2 beta}) - delta_{beta,0}|`.
pub fn orthonormality_defect(taps: &[C64]) -> f64 {
    let len = taps.len() as i64;
    let mut worst = 0.0f64;
    for beta in -(len / 2)..=(len / 2) {
        let s: C64 = (0..len)
            .filter_map(|a| {
                let b = a + 2 * beta;
                (0..len).contains(&b).then(|| taps[a as usize] * taps[b as usize].conj())
            })
            .sum();
        let target = if beta == 0 { 1.0 } else { 0.0 };
        worst = worst.max((s - target).norm());
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterChoice {
    Haar,
    D4,
    /// Complex taps as `[re, im]` pairs.
    #[serde(rename = "custom-taps")]
    Taps { taps: Vec<[f64; 2]> },
    /// Taps read from a whitespace-separated file.
    File { path: String },
}

impl FilterChoice {
    pub fn resolve(&self) -> CoreResult<FilterSpec> {
        match self {
            FilterChoice::Haar => Ok(FilterSpec::haar()),
            FilterChoice::D4 => Ok(FilterSpec::d4()),
            FilterChoice::Taps { taps } => {
                FilterSpec::new("custom", taps.iter().map(|t| c(t[0], t[1])).collect())
            }
            FilterChoice::File { path } => FilterSpec::load(Path::new(path)),
        }
    }
}

/// One refinement step `delta_j -> sum_alpha h_alpha delta_{2j + alpha}` on
/// `comps` components per site, periodic in the site index.
pub fn wavelet_step(filter: &FilterSpec, x: &CMat, comps: usize) -> CMat {
    let sites = x.nrows() / comps;
    let out_sites = 2 * sites;
    let mut out = CMat::zeros(out_sites * comps, x.ncols());
    for col in 0..x.ncols() {
        for i in 0..sites {
            for (a, h) in filter.taps.iter().enumerate() {
                let t = (2 * i + a) % out_sites;
                for s in 0..comps {
                    out[(t * comps + s, col)] += h * x[(i * comps + s, col)];
                }
            }
        }
    }
    out
}

/// `v_{n m} x` by `n - m` refinement steps.
pub fn wavelet_isometry(filter: &FilterSpec, x: &CMat, steps: usize, comps: usize) -> CMat {
    (0..steps).fold(x.clone(), |y, _| wavelet_step(filter, &y, comps))
}

/// Taps of the `k`-fold refinement: `g^{k+1}_beta = sum_{2 gamma + alpha = beta} g^k_gamma h_alpha`.
pub fn cascade_taps(filter: &FilterSpec, k: usize) -> Vec<C64> {
    let mut g = vec![c(1.0, 0.0)];
    for _ in 0..k {
        let mut next = vec![C64::default(); 2 * (g.len() - 1) + filter.taps.len()];
        for (gamma, gv) in g.iter().enumerate() {
            for (alpha, h) in filter.taps.iter().enumerate() {
                next[2 * gamma + alpha] += gv * h;
            }
        }
        g = next;
    }
    g
}

/// `v_{m+k, m} x` in one pass with the cascade taps.
pub fn cascade_apply(filter: &FilterSpec, x: &CMat, k: usize, comps: usize) -> CMat {
    let g = cascade_taps(filter, k);
    let sites = x.nrows() / comps;
    let out_sites = sites << k;
    let mut out = CMat::zeros(out_sites * comps, x.ncols());
    for col in 0..x.ncols() {
        for i in 0..sites {
            for (beta, gv) in g.iter().enumerate() {
                let t = ((i << k) + beta) % out_sites;
                for s in 0..comps {
                    out[(t * comps + s, col)] += gv * x[(i * comps + s, col)];
                }
            }
        }
    }
    out
}

/// The strict system of spinor lattices over `scales` connected by `filter`.
pub fn wavelet_system(
    filter: &FilterSpec,
    lattice: DyadicLattice,
    scales: &[usize],
) -> CoreResult<SoftSystem> {
    check_scales(scales)?;
    let chain = ScaleChain::integers(scales.iter().map(|&n| n as i64))?;
    let levels = scales
        .iter()
        .map(|&n| LevelSpace::vectors(lattice.at(n).dim(), NormKind::Hilbert))
        .collect();
    let filter = filter.clone();
    let gaps: Vec<usize> = scales.windows(2).map(|w| w[1] - w[0]).collect();
    SoftSystem::from_steps(chain, levels, move |k, x| wavelet_isometry(&filter, x, gaps[k], 2))
}

fn check_scales(scales: &[usize]) -> CoreResult<()> {
    if !scales.windows(2).all(|w| w[0] < w[1]) {
        return Err(CoreError::NotOrdered);
    }
    if let Some(&top) = scales.iter().max() {
        if top > MAX_SCALE {
            return Err(CoreError::ResourceCap(format!(
                "scale {top} exceeds the cap {MAX_SCALE}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletCheck {
    pub filter: String,
    pub scales: Vec<usize>,
    pub orthonormality_defect: f64,
    /// `max |v^dagger v - 1|` over all scale pairs.
    pub isometry_defect: f64,
    /// `max |v_{nm} v_{ml} - v_{nl}|` with `v_{nl}` from the cascade taps.
    pub transitivity_defect: f64,
    /// `max |p_m p_n - p_min(m,n)|` for the range projections at the top scale.
    pub nesting_defect: f64,
    /// Largest entry of the defect table of a basic net started at the base scale.
    pub basic_net_defect: f64,
    pub pass: bool,
}

/// Isometry, transitivity and nesting of the wavelet maps on basis vectors.
pub fn wavelet_check(
    filter: &FilterSpec,
    lattice: DyadicLattice,
    scales: &[usize],
    tol: f64,
) -> CoreResult<WaveletCheck> {
    let system = wavelet_system(filter, lattice, scales)?;
    let len = scales.len();
    let maps: Vec<Vec<CMat>> = (0..len)
        .map(|m| (0..len).map(|n| if n >= m { system.map_matrix(n, m) } else { CMat::zeros(0, 0) }).collect())
        .collect();
    let mut isometry_defect = 0.0f64;
    let mut transitivity_defect = 0.0f64;
    for m in 0..len {
        for n in m + 1..len {
            let v = &maps[m][n];
            let gram = linalg::matmul(&v.adjoint(), v) - linalg::identity(v.ncols());
            isometry_defect = isometry_defect.max(linalg::max_abs(&gram));
            let base = linalg::identity(v.ncols());
            let direct = cascade_apply(filter, &base, scales[n] - scales[m], 2);
            transitivity_defect = transitivity_defect.max(linalg::max_abs(&(v - direct)));
            for l in 0..m {
                let composed = linalg::matmul(v, &maps[l][m]);
                transitivity_defect =
                    transitivity_defect.max(linalg::max_abs(&(composed - &maps[l][n])));
            }
        }
    }
    let top = len - 1;
    let projections: Vec<CMat> = (0..len)
        .map(|m| linalg::matmul(&maps[m][top], &maps[m][top].adjoint()))
        .collect();
    let mut nesting_defect = 0.0f64;
    for m in 0..len {
        for n in 0..len {
            let prod = linalg::matmul(&projections[m], &projections[n]);
            nesting_defect = nesting_defect.max(linalg::max_abs(&(prod - &projections[m.min(n)])));
        }
    }
    let probe = CMat::from_fn(system.level(0).dim(), 1, |r, _| c((r as f64 * 0.37).sin(), (r as f64 * 0.11).cos()));
    let basic = make_basic_net(&system, scales[0] as f64, &probe)?;
    let report = jconvergence_diagnostic(&system, &basic, tol)?;
    let basic_net_defect = report.defects.iter().map(|d| d.value).fold(0.0, f64::max);
    let orthonormality_defect = orthonormality_defect(filter.taps());
    Ok(WaveletCheck {
        filter: filter.name.clone(),
        scales: scales.to_vec(),
        orthonormality_defect,
        isometry_defect,
        transitivity_defect,
        nesting_defect,
        basic_net_defect,
        pass: isometry_defect <= tol
            && transitivity_defect <= tol
            && nesting_defect <= tol
            && basic_net_defect == 0.0,
    })
}

/// Couplings `(J_n, g_n)` at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub j: f64,
    pub g: f64,
}

impl Couplings {
    pub fn lambda(&self) -> f64 {
        1.0 - self.g / self.j
    }
}

/// The default flow `J_n = J`, `lambda_n = eps_n m0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingFlow {
    pub m0: f64,
    pub j: f64,
}

impl CouplingFlow {
    pub fn new(m0: f64) -> Self {
        Self { m0, j: 1.0 }
    }

    pub fn at(&self, lattice: &DyadicLattice) -> Couplings {
        Couplings { j: self.j, g: self.j * (1.0 - lattice.eps() * self.m0) }
    }

    /// `(n, eps_n^{-1} lambda_n, J_n)` along `scales`.
    pub fn rg_conditions(&self, lattice: DyadicLattice, scales: &[usize]) -> Vec<(usize, f64, f64)> {
        scales
            .iter()
            .map(|&n| {
                let l = lattice.at(n);
                let cp = self.at(&l);
                (n, cp.lambda() / l.eps(), cp.j)
            })
            .collect()
    }
}

/// `h_n(k)` at DFT slot `idx`.
pub fn momentum_kernel(lattice: &DyadicLattice, cp: Couplings, idx: usize) -> Mat2 {
    let th = lattice.theta(idx);
    let a = -th.sin();
    let b = (th.cos() - 1.0) + cp.lambda();
    Mat2::new(c(a, 0.0), c(0.0, b), c(0.0, -b), c(-a, 0.0)) * c(cp.j, 0.0)
}

/// `eps_n^{-1} h_n(k)`.
pub fn rescaled_kernel(lattice: &DyadicLattice, cp: Couplings, idx: usize) -> Mat2 {
    momentum_kernel(lattice, cp, idx) / c(lattice.eps(), 0.0)
}

/// `h_inf(k) = -k sigma_3 - m0 sigma_2`.
pub fn limit_kernel(k: f64, m0: f64) -> Mat2 {
    Mat2::new(c(-k, 0.0), c(0.0, m0), c(0.0, -m0), c(k, 0.0))
}

/// `mu_n(k) = sqrt((J - g)^2 + 4 J g sin^2(eps_n k / 2))`.
pub fn dispersion(lattice: &DyadicLattice, cp: Couplings, idx: usize) -> f64 {
    let s = (lattice.theta(idx) / 2.0).sin();
    ((cp.j - cp.g).powi(2) + 4.0 * cp.j * cp.g * s * s).sqrt()
}

pub fn rescaled_dispersion(lattice: &DyadicLattice, cp: Couplings, idx: usize) -> f64 {
    dispersion(lattice, cp, idx) / lattice.eps()
}

pub fn limit_dispersion(k: f64, m0: f64) -> f64 {
    k.hypot(m0)
}

/// Positive eigenvalue of a traceless hermitian `[[a, z], [conj z, -a]]`.
fn kernel_gap(h: &Mat2) -> f64 {
    h[(0, 0)].re.hypot(h[(0, 1)].norm())
}

/// `P = (1 + h / mu) / 2`. At `mu = 0` the zero mode is filled with the
/// convention `sign(0) = 1`, `P = diag(0, 1)`; the flag reports it.
pub fn ground_projection(h: &Mat2) -> (Mat2, bool) {
    let mu = kernel_gap(h);
    if mu == 0.0 {
        return (Mat2::new(C64::default(), C64::default(), C64::default(), c(1.0, 0.0)), true);
    }
    ((Mat2::identity() + h / c(mu, 0.0)) * c(0.5, 0.0), false)
}

pub fn limit_projection(k: f64, m0: f64) -> Mat2 {
    ground_projection(&limit_kernel(k, m0)).0
}

/// `e^{-2 i t h}` for a traceless hermitian `h`.
pub fn kernel_propagator(h: &Mat2, t: f64) -> Mat2 {
    let mu = kernel_gap(h);
    let phase = 2.0 * t * mu;
    if mu == 0.0 {
        return Mat2::identity();
    }
    Mat2::identity() * c(phase.cos(), 0.0) - h * c(0.0, phase.sin() / mu)
}

fn max_entry(m: &Mat2) -> f64 {
    m.iter().fold(0.0, |a: f64, z| a.max(z.norm()))
}

/// `x -> F^{-1} M(k) F x` on the spinor lattice, column by column.
pub fn apply_multiplier(
    lattice: &DyadicLattice,
    x: &CMat,
    multiplier: impl Fn(usize) -> Mat2 + Sync,
) -> CMat {
    let n = lattice.sites();
    assert_eq!(x.nrows(), 2 * n, "vector does not live on scale {}", lattice.n);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let table: Vec<Mat2> = (0..n).into_par_iter().map(&multiplier).collect();
    let cols: Vec<Vec<C64>> = (0..x.ncols())
        .into_par_iter()
        .map(|col| {
            let mut up: Vec<C64> = (0..n).map(|j| x[(2 * j, col)]).collect();
            let mut down: Vec<C64> = (0..n).map(|j| x[(2 * j + 1, col)]).collect();
            fwd.process(&mut up);
            fwd.process(&mut down);
            for k in 0..n {
                let m = &table[k];
                let (u, d) = (up[k], down[k]);
                up[k] = m[(0, 0)] * u + m[(0, 1)] * d;
                down[k] = m[(1, 0)] * u + m[(1, 1)] * d;
            }
            inv.process(&mut up);
            inv.process(&mut down);
            let scale = 1.0 / n as f64;
            (0..n).flat_map(|j| [up[j] * scale, down[j] * scale]).collect()
        })
        .collect();
    CMat::from_fn(2 * n, x.ncols(), |r, col| cols[col][r])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCheck {
    pub scale: usize,
    pub m0: f64,
    /// `max_k |P^2 - P|`.
    pub idempotency: f64,
    pub trace: f64,
    pub hermiticity: f64,
    /// `max_k |[P, h]|`.
    pub commutation: f64,
    /// `max_k |P - (1 + h_hat / mu_hat) / 2|`.
    pub rescaling: f64,
    /// `max_k |mu_n - gap of h_n| / (1 + mu_n)`.
    pub dispersion_consistency: f64,
    pub gapless_modes: usize,
    pub pass: bool,
}

/// Projection invariants of `P_n(k)` over the whole momentum grid.
pub fn projection_check(lattice: DyadicLattice, flow: CouplingFlow) -> ProjectionCheck {
    let cp = flow.at(&lattice);
    let mut out = ProjectionCheck {
        scale: lattice.n,
        m0: flow.m0,
        idempotency: 0.0,
        trace: 0.0,
        hermiticity: 0.0,
        commutation: 0.0,
        rescaling: 0.0,
        dispersion_consistency: 0.0,
        gapless_modes: 0,
        pass: false,
    };
    for idx in 0..lattice.sites() {
        let h = momentum_kernel(&lattice, cp, idx);
        let (p, gapless) = ground_projection(&h);
        out.gapless_modes += gapless as usize;
        out.idempotency = out.idempotency.max(max_entry(&(p * p - p)));
        out.trace = out.trace.max((p.trace() - c(1.0, 0.0)).norm());
        out.hermiticity = out.hermiticity.max(max_entry(&(p - p.adjoint())));
        out.commutation = out.commutation.max(max_entry(&(p * h - h * p)));
        let (p_hat, _) = ground_projection(&rescaled_kernel(&lattice, cp, idx));
        out.rescaling = out.rescaling.max(max_entry(&(p - p_hat)));
        let mu = dispersion(&lattice, cp, idx);
        out.dispersion_consistency =
            out.dispersion_consistency.max((mu - kernel_gap(&h)).abs() / (1.0 + mu));
    }
    out.pass = [out.idempotency, out.trace, out.hermiticity, out.commutation, out.rescaling]
        .iter()
        .all(|&v| v <= PROJECTION_TOL)
        && out.dispersion_consistency <= PROJECTION_TOL;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFlowReport {
    pub kernel_momentum: f64,
    pub kernel_m0: f64,
    /// `n -> max entry of |eps_n^{-1} h_n(k) - h_inf(k)|`.
    pub kernel_defects: Vec<LabelValue>,
    pub kernel_ratios: Vec<f64>,
    pub dispersion_momentum: f64,
    pub dispersion_m0: f64,
    /// `n -> |mu_hat_n(k) - sqrt(k^2 + m0^2)|`.
    pub dispersion_defects: Vec<LabelValue>,
    pub dispersion_ratios: Vec<f64>,
    pub rg_conditions: Vec<(usize, f64, f64)>,
    /// The massless limit projection at `k = pi`.
    pub hardy_projection: [[f64; 4]; 2],
    pub hardy_exact: bool,
    pub projections: Vec<ProjectionCheck>,
    pub pass: bool,
}

fn in_range(values: &[f64], range: (f64, f64)) -> bool {
    !values.is_empty() && values.iter().all(|r| (range.0..=range.1).contains(r))
}

/// Kernel and dispersion convergence along `scales` at the momenta `pi q / L`.
pub fn kernel_flow(
    lattice: DyadicLattice,
    scales: &[usize],
    kernel: (i64, f64),
    dispersion_at: (i64, f64),
) -> CoreResult<KernelFlowReport> {
    check_scales(scales)?;
    let slot = |l: &DyadicLattice, q: i64| {
        l.slot_of(q).ok_or_else(|| {
            CoreError::Refused(format!("momentum label {q} is not on the grid at scale {}", l.n))
        })
    };
    let (kq, km0) = kernel;
    let (dq, dm0) = dispersion_at;
    let mut kernel_defects = Vec::new();
    let mut dispersion_defects = Vec::new();
    let mut projections = Vec::new();
    let kflow = CouplingFlow::new(km0);
    let dflow = CouplingFlow::new(dm0);
    for &n in scales {
        let l = lattice.at(n);
        let idx = slot(&l, kq)?;
        let h_hat = rescaled_kernel(&l, kflow.at(&l), idx);
        let limit = limit_kernel(l.momentum(idx), km0);
        kernel_defects.push(LabelValue { label: n as f64, value: max_entry(&(h_hat - limit)) });
        let idx = slot(&l, dq)?;
        let mu_hat = rescaled_dispersion(&l, dflow.at(&l), idx);
        let value = (mu_hat - limit_dispersion(l.momentum(idx), dm0)).abs();
        dispersion_defects.push(LabelValue { label: n as f64, value });
        projections.push(projection_check(l, kflow));
        projections.push(projection_check(l, dflow));
    }
    let vals = |v: &[LabelValue]| v.iter().map(|lv| lv.value).collect::<Vec<_>>();
    let kernel_ratios = successive_ratios(&vals(&kernel_defects));
    let dispersion_ratios = successive_ratios(&vals(&dispersion_defects));
    let p = limit_projection(std::f64::consts::PI, 0.0);
    let hardy_projection = [
        [p[(0, 0)].re, p[(0, 0)].im, p[(0, 1)].re, p[(0, 1)].im],
        [p[(1, 0)].re, p[(1, 0)].im, p[(1, 1)].re, p[(1, 1)].im],
    ];
    let target = Mat2::new(C64::default(), C64::default(), C64::default(), c(1.0, 0.0));
    let hardy_exact = p == target;
    let pass = in_range(&kernel_ratios, KERNEL_RATIO_RANGE)
        && in_range(&dispersion_ratios, KERNEL_RATIO_RANGE)
        && hardy_exact
        && projections.iter().all(|p| p.pass);
    Ok(KernelFlowReport {
        kernel_momentum: std::f64::consts::PI * kq as f64 / lattice.length(),
        kernel_m0: km0,
        kernel_defects,
        kernel_ratios,
        dispersion_momentum: std::f64::consts::PI * dq as f64 / lattice.length(),
        dispersion_m0: dm0,
        dispersion_defects,
        dispersion_ratios,
        rg_conditions: kflow.rg_conditions(lattice, scales),
        hardy_projection,
        hardy_exact,
        projections,
        pass,
    })
}

/// `P_n (v_{nm} x)` on the lattice at scale `n`.
fn lattice_projection(l: &DyadicLattice, flow: CouplingFlow, x: &CMat) -> CMat {
    let cp = flow.at(l);
    apply_multiplier(l, x, |idx| ground_projection(&momentum_kernel(l, cp, idx)).0)
}

fn continuum_projection(l: &DyadicLattice, m0: f64, x: &CMat) -> CMat {
    apply_multiplier(l, x, |idx| limit_projection(l.momentum(idx), m0))
}

/// `(v_{nm} (x) 1)^dagger P_n (v_{nm} (x) 1)` on level `m`.
pub fn renormalized_covariance(
    lattice: DyadicLattice,
    n: usize,
    m: usize,
    filter: &FilterSpec,
    flow: CouplingFlow,
) -> CoreResult<CMat> {
    if m > n {
        return Err(CoreError::NotOrdered);
    }
    check_scales(&[n])?;
    let base = linalg::identity(lattice.at(m).dim());
    let v = wavelet_isometry(filter, &base, n - m, 2);
    let pv = lattice_projection(&lattice.at(n), flow, &v);
    Ok(linalg::matmul(&v.adjoint(), &pv))
}

/// Compression of the continuum projection `P_{m0}` to level `m`, with the
/// scaling functions sampled at scale `sample`.
pub fn continuum_covariance(
    lattice: DyadicLattice,
    m: usize,
    sample: usize,
    filter: &FilterSpec,
    m0: f64,
) -> CoreResult<CMat> {
    if m > sample {
        return Err(CoreError::NotOrdered);
    }
    check_scales(&[sample])?;
    let base = linalg::identity(lattice.at(m).dim());
    let v = wavelet_isometry(filter, &base, sample - m, 2);
    let pv = continuum_projection(&lattice.at(sample), m0, &v);
    Ok(linalg::matmul(&v.adjoint(), &pv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub filter: String,
    pub m0: f64,
    pub level: usize,
    pub reference_scale: usize,
    /// `n -> max |C_n - C_{n'}|` for consecutive chain scales.
    pub increments: Vec<LabelValue>,
    pub increments_decreasing: bool,
    /// `n -> max |C_n - C_ref|`.
    pub continuum_gaps: Vec<LabelValue>,
    pub top_gap: f64,
    /// `n -> Re C_n[0, 0]`.
    pub entry00: Vec<LabelValue>,
    /// `n -> tr C_n / dim`.
    pub filling: Vec<LabelValue>,
    pub half_filling_gap: Option<f64>,
    /// The trail as a net in the constant system on level `m`.
    pub convergence: ConvergenceReport,
    pub pass: bool,
}

/// Covariance trail over `chain[1..]` compressed to `chain[0]`.
pub fn rg_flow_report(
    lattice: DyadicLattice,
    chain: &[usize],
    filter: &FilterSpec,
    m0: f64,
    quadrature_offset: usize,
    tol: f64,
) -> CoreResult<CovarianceReport> {
    check_scales(chain)?;
    if chain.len() < 4 {
        return Err(CoreError::ChainTooShort(chain.len().saturating_sub(1)));
    }
    let m = chain[0];
    let ns = &chain[1..];
    let top = *ns.last().expect("non-empty");
    let reference_scale = top + quadrature_offset;
    let flow = CouplingFlow::new(m0);
    let trail: Vec<CMat> = ns
        .par_iter()
        .map(|&n| renormalized_covariance(lattice, n, m, filter, flow))
        .collect::<CoreResult<_>>()?;
    let reference = continuum_covariance(lattice, m, reference_scale, filter, m0)?;
    let lv = |n: usize, value: f64| LabelValue { label: n as f64, value };
    let increments: Vec<LabelValue> = ns
        .windows(2)
        .zip(trail.windows(2))
        .map(|(w, cw)| lv(w[1], linalg::max_abs(&(&cw[1] - &cw[0]))))
        .collect();
    let inc_vals: Vec<f64> = increments.iter().map(|x| x.value).collect();
    let continuum_gaps: Vec<LabelValue> =
        ns.iter().zip(&trail).map(|(&n, cm)| lv(n, linalg::max_abs(&(cm - &reference)))).collect();
    let top_gap = continuum_gaps.last().map(|x| x.value).unwrap_or(f64::INFINITY);
    let dim = lattice.at(m).dim() as f64;
    let filling: Vec<LabelValue> =
        ns.iter().zip(&trail).map(|(&n, cm)| lv(n, linalg::trace(cm).re / dim)).collect();
    let half_filling_gap =
        (m0 == 0.0).then(|| (filling.last().expect("non-empty").value - 0.5).abs());
    let entry00 = ns.iter().zip(&trail).map(|(&n, cm)| lv(n, cm[(0, 0)].re)).collect();
    let chain_labels = ScaleChain::integers(ns.iter().map(|&n| n as i64))?;
    let constant = SoftSystem::constant(
        chain_labels,
        LevelSpace::matrices(lattice.at(m).dim(), NormKind::GridSup, false),
    );
    let convergence = jconvergence_diagnostic(&constant, &ElementNet::new(trail), tol)?;
    let increments_decreasing = strictly_decreasing(&inc_vals);
    let pass = increments_decreasing
        && top_gap < COVARIANCE_TOL
        && half_filling_gap.map_or(true, |g| g < COVARIANCE_TOL);
    Ok(CovarianceReport {
        filter: filter.name.clone(),
        m0,
        level: m,
        reference_scale,
        increments,
        increments_decreasing,
        continuum_gaps,
        top_gap,
        entry00,
        filling,
        half_filling_gap,
        convergence,
        pass,
    })
}

/// `e^{-2 i t h_hat_n}` applied at scale `n`. Exactly the identity at `t = 0`.
pub fn one_particle_dynamics(lattice: &DyadicLattice, flow: CouplingFlow, x: &CMat, t: f64) -> CMat {
    if t == 0.0 {
        return x.clone();
    }
    let cp = flow.at(lattice);
    apply_multiplier(lattice, x, |idx| kernel_propagator(&rescaled_kernel(lattice, cp, idx), t))
}

/// The continuum multiplier `e^{-2 i t h_inf(k)}` sampled on the grid at scale `n`.
pub fn continuum_dynamics(lattice: &DyadicLattice, m0: f64, x: &CMat, t: f64) -> CMat {
    if t == 0.0 {
        return x.clone();
    }
    apply_multiplier(lattice, x, |idx| kernel_propagator(&limit_kernel(lattice.momentum(idx), m0), t))
}

/// Smooth spinor probe at scale `n`: `sqrt(eps) f(x_j + eps M1) (s_0, s_1)` with
/// a gaussian `f`, the offset `M1` centring the filter's scaling function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinorProbe {
    pub center: f64,
    pub width: f64,
    pub spinor: [[f64; 2]; 2],
}

impl Default for SpinorProbe {
    fn default() -> Self {
        Self { center: 0.2, width: 0.3, spinor: [[1.0, 0.0], [0.0, 0.5]] }
    }
}

impl SpinorProbe {
    pub fn sample(&self, lattice: &DyadicLattice, filter: &FilterSpec) -> CMat {
        let eps = lattice.eps();
        let shift = filter.first_moment();
        let s = [c(self.spinor[0][0], self.spinor[0][1]), c(self.spinor[1][0], self.spinor[1][1])];
        let mut out = CMat::zeros(lattice.dim(), 1);
        for j in 0..lattice.sites() {
            let x = lattice.position(j) + eps * shift;
            let f = eps.sqrt() * (-(x - self.center).powi(2) / (2.0 * self.width.powi(2))).exp();
            out[(2 * j, 0)] = s[0] * f;
            out[(2 * j + 1, 0)] = s[1] * f;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub filter: String,
    pub m0: f64,
    pub t: f64,
    pub base: usize,
    pub scales: Vec<usize>,
    /// `||v_{nm} U_m v_{ml} xi - U_n v_{nl} xi||` for every `m < n`.
    pub table: Vec<DefectEntry>,
    /// `m -> D(m, m + 1)`.
    pub step_defects: Vec<LabelValue>,
    pub step_ratios: Vec<f64>,
    pub reference_scale: usize,
    /// `n -> ||v_{ref,n} U_n v_{nl} xi - U_inf v_{ref,l} xi||`.
    pub continuum_gaps: Vec<LabelValue>,
    pub pass: bool,
}

/// Dynamics defects of a smooth probe prepared at `base`, over `scales`.
pub fn dynamics_defect(
    lattice: DyadicLattice,
    base: usize,
    scales: &[usize],
    filter: &FilterSpec,
    flow: CouplingFlow,
    t: f64,
    probe: &SpinorProbe,
    quadrature_offset: usize,
) -> CoreResult<DynamicsReport> {
    if t < 0.0 {
        return Err(CoreError::NegativeTime(t));
    }
    check_scales(scales)?;
    if scales.len() < 3 || scales[0] < base {
        return Err(CoreError::Refused("dynamics needs three scales at or above the base".into()));
    }
    let top = *scales.last().expect("non-empty");
    let reference_scale = top + quadrature_offset;
    check_scales(&[reference_scale])?;
    let xi = probe.sample(&lattice.at(base), filter);
    let lifted: Vec<CMat> =
        scales.iter().map(|&n| wavelet_isometry(filter, &xi, n - base, 2)).collect();
    let evolved: Vec<CMat> = scales
        .par_iter()
        .zip(&lifted)
        .map(|(&n, x)| one_particle_dynamics(&lattice.at(n), flow, x, t))
        .collect();
    let pairs: Vec<(usize, usize)> =
        (0..scales.len()).flat_map(|m| (m + 1..scales.len()).map(move |n| (m, n))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(m, n)| {
            let y = wavelet_isometry(filter, &evolved[m], scales[n] - scales[m], 2);
            linalg::frobenius(&(y - &evolved[n]))
        })
        .collect();
    let table: Vec<DefectEntry> = pairs
        .iter()
        .zip(&values)
        .map(|(&(m, n), &value)| DefectEntry { m: scales[m] as f64, n: scales[n] as f64, value })
        .collect();
    let step_defects: Vec<LabelValue> = pairs
        .iter()
        .zip(&values)
        .filter(|((m, n), _)| n - m == 1)
        .map(|(&(m, _), &value)| LabelValue { label: scales[m] as f64, value })
        .collect();
    let step_vals: Vec<f64> = step_defects.iter().map(|x| x.value).collect();
    let step_ratios = successive_ratios(&step_vals);
    let ref_lattice = lattice.at(reference_scale);
    let limit = continuum_dynamics(
        &ref_lattice,
        flow.m0,
        &wavelet_isometry(filter, &xi, reference_scale - base, 2),
        t,
    );
    let continuum_gaps = scales
        .par_iter()
        .zip(&evolved)
        .map(|(&n, y)| {
            let lifted = wavelet_isometry(filter, y, reference_scale - n, 2);
            LabelValue { label: n as f64, value: linalg::frobenius(&(lifted - &limit)) }
        })
        .collect();
    let pass = t > 0.0 && in_range(&step_ratios, DYNAMICS_RATIO_RANGE);
    Ok(DynamicsReport {
        filter: filter.name.clone(),
        m0: flow.m0,
        t,
        base,
        scales: scales.to_vec(),
        table,
        step_defects,
        step_ratios,
        reference_scale,
        continuum_gaps,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FermionExperiment {
    All,
    Wavelets,
    Kernel,
    Covariance,
    Dynamics,
    Thompson,
}

impl FermionExperiment {
    fn runs(self, part: FermionExperiment) -> bool {
        self == FermionExperiment::All || self == part
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FermionConfig {
    pub experiment: FermionExperiment,
    /// Filter of the covariance flow.
    pub filter: FilterChoice,
    /// Filter of the dynamics experiment.
    pub dynamics_filter: FilterChoice,
    /// Filters whose isometries are checked.
    pub wavelet_filters: Vec<FilterChoice>,
    pub wavelet_scales: Vec<usize>,
    pub m0: f64,
    /// Mass used where the massless defect is of higher order.
    pub massive_m0: f64,
    pub chain: Vec<usize>,
    pub kernel_scales: Vec<usize>,
    /// Momentum labels `q` with `k = pi q / L`.
    pub kernel_momentum: i64,
    pub dispersion_momentum: i64,
    pub dynamics_base: usize,
    pub dynamics_scales: Vec<usize>,
    pub dynamics_m0: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub probe: SpinorProbe,
    pub quadrature_offset: usize,
    pub thompson_scale_offset: usize,
}

impl Default for FermionConfig {
    fn default() -> Self {
        Self {
            experiment: FermionExperiment::All,
            filter: FilterChoice::Haar,
            dynamics_filter: FilterChoice::D4,
            wavelet_filters: vec![FilterChoice::Haar, FilterChoice::D4],
            wavelet_scales: vec![2, 3, 4, 5],
            m0: 0.0,
            massive_m0: 1.0,
            chain: (2..=9).collect(),
            kernel_scales: (4..=8).collect(),
            kernel_momentum: 8,
            dispersion_momentum: 2,
            dynamics_base: 8,
            dynamics_scales: (8..=14).collect(),
            dynamics_m0: vec![0.0, 1.0],
            t_grid: vec![0.5],
            probe: SpinorProbe::default(),
            quadrature_offset: 4,
            thompson_scale_offset: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FermionReport {
    pub wavelets: Vec<WaveletCheck>,
    pub kernel: Option<KernelFlowReport>,
    pub covariance: Option<CovarianceReport>,
    pub dynamics: Vec<DynamicsReport>,
    pub thompson: Option<ThompsonReport>,
    pub pass: bool,
}

pub fn fermion_rg_experiment(cfg: &FermionConfig, tol: f64) -> CoreResult<FermionReport> {
    let lattice = DyadicLattice::standard(0);
    let run = |part| cfg.experiment.runs(part);
    let mut wavelets = Vec::new();
    if run(FermionExperiment::Wavelets) {
        for choice in &cfg.wavelet_filters {
            wavelets.push(wavelet_check(&choice.resolve()?, lattice, &cfg.wavelet_scales, 1e-12)?);
        }
    }
    let kernel = run(FermionExperiment::Kernel)
        .then(|| {
            kernel_flow(
                lattice,
                &cfg.kernel_scales,
                (cfg.kernel_momentum, cfg.m0),
                (cfg.dispersion_momentum, cfg.massive_m0),
            )
        })
        .transpose()?;
    let covariance = run(FermionExperiment::Covariance)
        .then(|| {
            rg_flow_report(lattice, &cfg.chain, &cfg.filter.resolve()?, cfg.m0, cfg.quadrature_offset, tol)
        })
        .transpose()?;
    let mut dynamics = Vec::new();
    if run(FermionExperiment::Dynamics) {
        let filter = cfg.dynamics_filter.resolve()?;
        for &m0 in &cfg.dynamics_m0 {
            for &t in &cfg.t_grid {
                dynamics.push(dynamics_defect(
                    lattice,
                    cfg.dynamics_base,
                    &cfg.dynamics_scales,
                    &filter,
                    CouplingFlow::new(m0),
                    t,
                    &cfg.probe,
                    cfg.quadrature_offset,
                )?);
            }
        }
    }
    let thompson = run(FermionExperiment::Thompson)
        .then(|| thompson_experiment(cfg.thompson_scale_offset))
        .transpose()?;
    let pass = wavelets.iter().all(|w| w.pass)
        && kernel.as_ref().map_or(true, |k| k.pass)
        && covariance.as_ref().map_or(true, |c| c.pass)
        && dynamics.iter().all(|d| d.pass)
        && thompson.as_ref().map_or(true, |t| t.pass);
    Ok(FermionReport { wavelets, kernel, covariance, dynamics, thompson, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn lattice_geometry_is_dyadic() {
        for n in 0..8 {
            let l = DyadicLattice::standard(n);
            assert_eq!(l.length(), 2.0);
            assert_eq!(l.sites(), 2 * l.half_sites());
            assert_eq!(l.position(0), -2.0);
            assert_eq!(l.theta(l.slot_of(-(l.half_sites() as i64)).unwrap()), -PI);
        }
        assert_eq!(DyadicLattice::standard(3).slot_of(16), None);
    }

    #[test]
    fn haar_step_matches_the_explicit_rule() {
        let haar = FilterSpec::haar();
        let mut x = CMat::zeros(8, 1);
        x[(2 * 1, 0)] = c(1.0, 0.0);
        let y = wavelet_step(&haar, &x, 2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for r in 0..16 {
            let expected = if r == 4 || r == 6 { h } else { 0.0 };
            assert_eq!(y[(r, 0)], c(expected, 0.0), "row {r}");
        }
        assert_eq!(wavelet_step(&haar, &CMat::zeros(8, 1), 2), CMat::zeros(16, 1));
    }

    #[test]
    fn filters_are_validated() {
        assert!(orthonormality_defect(FilterSpec::d4().taps()) < 1e-15);
        assert!(FilterSpec::new("bad", vec![c(1.0, 0.0), c(1.0, 0.0)]).is_err());
        let text = "# haar\n0.7071067811865476\n0.7071067811865476 0.0\n";
        assert_eq!(FilterSpec::parse_taps("f", text).unwrap().taps().len(), 2);
        assert!(FilterSpec::parse_taps("f", "1 2 3\n").is_err());
        // First moment of the D4 scaling function: (3 - sqrt 3) / 2.
        assert!((FilterSpec::d4().first_moment() - (3.0 - 3f64.sqrt()) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn cascade_taps_of_haar_are_flat() {
        let g = cascade_taps(&FilterSpec::haar(), 3);
        assert_eq!(g.len(), 8);
        for v in g {
            assert!((v - c(0.125f64.sqrt(), 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn wavelet_maps_are_exact_isometries() {
        for f in [FilterSpec::haar(), FilterSpec::d4()] {
            let r = wavelet_check(&f, DyadicLattice::standard(0), &[1, 2, 3, 4], 1e-12).unwrap();
            assert!(r.pass, "{r:?}");
            assert_eq!(r.basic_net_defect, 0.0);
        }
    }

    #[test]
    fn kernel_at_zero_momentum_without_mass_vanishes() {
        let l = DyadicLattice::standard(3);
        let h = momentum_kernel(&l, CouplingFlow::new(0.0).at(&l), 0);
        assert_eq!(h, Mat2::zeros());
        let (p, gapless) = ground_projection(&h);
        assert!(gapless);
        assert_eq!(p, limit_projection(0.0, 0.0));
    }

    #[test]
    fn critical_dispersion_is_a_sine() {
        let l = DyadicLattice::standard(4);
        let cp = Couplings { j: 1.3, g: 1.3 };
        for idx in 0..l.sites() {
            let expected = 2.0 * 1.3 * (l.theta(idx) / 2.0).sin().abs();
            assert!((dispersion(&l, cp, idx) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn rescaled_kernel_defect_matches_taylor_oracle() {
        // At m0 = 0 the largest entry defect is |cos(eps k) - 1| / eps.
        let r = kernel_flow(DyadicLattice::standard(0), &[4, 5, 6, 7, 8], (8, 0.0), (2, 1.0)).unwrap();
        let k = 4.0 * PI;
        for lv in &r.kernel_defects {
            let eps = 0.5f64.powi(lv.label as i32);
            let oracle = (1.0 - (eps * k).cos()) / eps;
            assert!((lv.value - oracle).abs() < 1e-12 * (1.0 + oracle), "{lv:?}");
        }
        assert!(r.pass, "{r:?}");
        // Frozen: first kernel ratio 2 cos^2(pi / 16).
        assert!((r.kernel_ratios[0] - 2.0 * (PI / 16.0).cos().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn hardy_projection_is_exact() {
        let p = limit_projection(PI, 0.0);
        assert_eq!(p, Mat2::new(C64::default(), C64::default(), C64::default(), c(1.0, 0.0)));
        let m = limit_projection(-PI, 0.0);
        assert_eq!(m, Mat2::new(c(1.0, 0.0), C64::default(), C64::default(), C64::default()));
    }

    #[test]
    fn projections_are_projections() {
        for m0 in [0.0, 1.0] {
            let r = projection_check(DyadicLattice::standard(5), CouplingFlow::new(m0));
            assert!(r.pass, "{r:?}");
            assert_eq!(r.gapless_modes, usize::from(m0 == 0.0));
        }
    }

    #[test]
    fn multiplier_matches_dense_circulant() {
        let l = DyadicLattice::standard(1);
        let flow = CouplingFlow::new(0.7);
        let cp = flow.at(&l);
        let n = l.sites();
        let x = CMat::from_fn(2 * n, 1, |r, _| c((r as f64).sin(), (r as f64 * 0.3).cos()));
        let y = apply_multiplier(&l, &x, |idx| momentum_kernel(&l, cp, idx));
        // Dense position-space kernel: h(j - i) = (1/N) sum_k e^{i theta_k (j - i)} h(k).
        let mut dense = CMat::zeros(2 * n, 2 * n);
        for j in 0..n {
            for i in 0..n {
                let mut acc = Mat2::zeros();
                for idx in 0..n {
                    let w = c(0.0, l.theta(idx) * (j as f64 - i as f64)).exp();
                    acc += momentum_kernel(&l, cp, idx) * w;
                }
                for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dense[(2 * j + a, 2 * i + b)] = acc[(a, b)] / n as f64;
                }
            }
        }
        assert!(linalg::max_abs(&(linalg::matmul(&dense, &x) - y)) < 1e-12);
    }

    #[test]
    fn dynamics_is_unitary_and_trivial_at_time_zero() {
        let l = DyadicLattice::standard(3);
        let x = SpinorProbe::default().sample(&l, &FilterSpec::haar());
        let y = one_particle_dynamics(&l, CouplingFlow::new(1.0), &x, 0.7);
        assert!((linalg::frobenius(&y) - linalg::frobenius(&x)).abs() < 1e-13);
        let r = dynamics_defect(
            DyadicLattice::standard(0),
            3,
            &[3, 4, 5],
            &FilterSpec::d4(),
            CouplingFlow::new(0.0),
            0.0,
            &SpinorProbe::default(),
            1,
        )
        .unwrap();
        assert!(r.table.iter().all(|d| d.value == 0.0));
    }

    #[test]
    fn covariance_at_equal_scales_is_the_projection() {
        let l = DyadicLattice::standard(0);
        let flow = CouplingFlow::new(0.0);
        let cov = renormalized_covariance(l, 2, 2, &FilterSpec::haar(), flow).unwrap();
        let direct = lattice_projection(&l.at(2), flow, &linalg::identity(l.at(2).dim()));
        assert!(linalg::max_abs(&(cov - direct)) < 1e-15);
    }

    #[test]
    fn massless_covariance_is_half_filled() {
        // Particle-hole symmetry: tr P_n(k) = 1 for every k, so the compressed
        // trace is exactly half the dimension.
        let cov = renormalized_covariance(DyadicLattice::standard(0), 6, 2, &FilterSpec::haar(), CouplingFlow::new(0.0))
            .unwrap();
        let dim = cov.nrows() as f64;
        assert!((linalg::trace(&cov).re / dim - 0.5).abs() < 1e-12);
    }
}
