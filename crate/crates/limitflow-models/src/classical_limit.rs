//! Coherent-state quantization on truncated Fock spaces and its classical limit.
//!
//! Levels are Fock spaces of dimension `cutoff` at action scale `hbar`; the
//! limit side is a square phase-space grid with the Riemann-sum L1 norm. The
//! coherent vectors of every grid point are tabulated once per level as real
//! and imaginary parts, so both maps reduce to real matrix products.

use std::f64::consts::PI;
use std::sync::Arc;

use limitflow_core::inductive::{soft_transitivity_defect, split_system, LevelMap, SplitCheck, TripleReport};
use limitflow_core::report::strictly_decreasing;
use limitflow_core::linalg::{self, c, CMat, RMat, C64};
use limitflow_core::{CoreError, CoreResult, Direction, LevelSpace, NormKind, ScaleChain, SoftSystem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockLevel {
    pub hbar: f64,
    pub cutoff: usize,
}

impl FockLevel {
    pub fn new(hbar: f64, cutoff: usize) -> CoreResult<Self> {
        if !(hbar > 0.0 && hbar <= 1.0) {
            return Err(CoreError::Refused(format!("hbar {hbar} outside (0, 1]")));
        }
        if cutoff < 16 {
            return Err(CoreError::Refused(format!("cutoff {cutoff} below 16")));
        }
        Ok(Self { hbar, cutoff })
    }

    pub fn r_valid(&self) -> f64 {
        (self.hbar * self.cutoff as f64).sqrt() / 2.0
    }

    /// Annihilation operator truncated to the level.
    pub fn lowering(&self) -> CMat {
        let n = self.cutoff;
        CMat::from_fn(n, n, |i, j| if j == i + 1 { c((j as f64).sqrt(), 0.0) } else { c(0.0, 0.0) })
    }

    /// Truncated position and momentum, `x = sqrt(hbar/2)(a + a*)` and
    /// `p = i sqrt(hbar/2)(a* - a)`.
    pub fn canonical(&self) -> [CMat; 2] {
        let a = self.lowering();
        let ad = a.adjoint();
        let s = (self.hbar / 2.0).sqrt();
        [(&a + &ad) * c(s, 0.0), (&ad - &a) * c(0.0, s)]
    }

    /// `hbar (n + 1/2)`, the oscillator `(x^2 + p^2)/2` on the Fock basis.
    pub fn oscillator(&self) -> CMat {
        CMat::from_fn(self.cutoff, self.cutoff, |i, j| {
            if i == j {
                c(self.hbar * (i as f64 + 0.5), 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGrid {
    pub half_width: f64,
    pub spacing: f64,
    pub points_per_axis: usize,
}

impl PhaseGrid {
    pub fn new(half_width: f64, spacing: f64) -> CoreResult<Self> {
        if half_width < 4.0 {
            return Err(CoreError::Refused(format!("grid half width {half_width} below 4")));
        }
        if spacing <= 0.0 {
            return Err(CoreError::Refused("grid spacing must be positive".into()));
        }
        let points_per_axis = (2.0 * half_width / spacing).round() as usize + 1;
        Ok(Self { half_width, spacing, points_per_axis })
    }

    pub fn standard() -> Self {
        Self::new(6.0, 0.05).expect("valid")
    }

    pub fn len(&self) -> usize {
        self.points_per_axis * self.points_per_axis
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self) -> f64 {
        self.spacing * self.spacing
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing
    }

    /// Point `g = i * points_per_axis + j` is `(q_i, p_j)`.
    pub fn point(&self, g: usize) -> (f64, f64) {
        (self.coord(g / self.points_per_axis), self.coord(g % self.points_per_axis))
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
        (0..self.len()).into_par_iter().map(|g| {
            let (q, p) = self.point(g);
            f(q, p)
        }).collect()
    }

    pub fn l1(&self, f: &[f64]) -> f64 {
        self.cell() * f.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn integral(&self, f: &[f64]) -> f64 {
        self.cell() * f.iter().sum::<f64>()
    }

    pub fn l1_distance(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cell() * f.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    pub fn mean(&self, f: &[f64]) -> (f64, f64) {
        let mass = self.integral(f);
        let (mut mq, mut mp) = (0.0, 0.0);
        for (g, v) in f.iter().enumerate() {
            let (q, p) = self.point(g);
            mq += q * v;
            mp += p * v;
        }
        (mq * self.cell() / mass, mp * self.cell() / mass)
    }

    /// Mass of `f` outside the disc of radius `r`.
    pub fn mass_outside(&self, f: &[f64], r: f64) -> f64 {
        self.cell()
            * f.iter()
                .enumerate()
                .filter(|(g, _)| {
                    let (q, p) = self.point(*g);
                    q * q + p * p > r * r
                })
                .map(|(_, v)| v.abs())
                .sum::<f64>()
    }

    pub fn as_element(f: &[f64]) -> CMat {
        CMat::from_iterator(f.len(), 1, f.iter().map(|v| c(*v, 0.0)))
    }

    pub fn from_element(x: &CMat) -> Vec<f64> {
        x.iter().map(|z| z.re).collect()
    }

    pub fn level_space(&self) -> LevelSpace {
        LevelSpace::vectors(self.len(), NormKind::GridL1 { cell: self.cell() })
    }
}

/// Normalized isotropic Gaussian density `N((q0, p0), s^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBump {
    pub q0: f64,
    pub p0: f64,
    pub s: f64,
}

impl GaussianBump {
    pub fn eval(&self, q: f64, p: f64) -> f64 {
        let r2 = (q - self.q0).powi(2) + (p - self.p0).powi(2);
        (-r2 / (2.0 * self.s * self.s)).exp() / (2.0 * PI * self.s * self.s)
    }

    pub fn on(&self, grid: &PhaseGrid) -> Vec<f64> {
        let b = *self;
        grid.sample(move |q, p| b.eval(q, p))
    }

    /// Convolution with the heat kernel of variance `hbar`.
    pub fn blurred(&self, hbar: f64) -> Self {
        Self { s: (self.s * self.s + hbar).sqrt(), ..*self }
    }

    /// Pushforward under the oscillator flow `q' = q cos t + p sin t`,
    /// `p' = p cos t - q sin t`.
    pub fn rotated(&self, t: f64) -> Self {
        let (s, co) = t.sin_cos();
        Self { q0: self.q0 * co + self.p0 * s, p0: self.p0 * co - self.q0 * s, s: self.s }
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for k in 1..n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

fn coherent_coefficients(level: &FockLevel, q: f64, p: f64, lnf: &[f64]) -> Vec<C64> {
    let alpha = c(q, p) / (2.0 * level.hbar).sqrt();
    let r = alpha.norm();
    let phi = alpha.arg();
    (0..level.cutoff)
        .map(|k| {
            if r == 0.0 {
                return c(if k == 0 { 1.0 } else { 0.0 }, 0.0);
            }
            let lm = -r * r / 2.0 + k as f64 * r.ln() - 0.5 * lnf[k];
            C64::from_polar(lm.exp(), k as f64 * phi)
        })
        .collect()
}

/// Fock coefficients `e^{-|a|^2/2} a^k / sqrt(k!)`, `a = (q + ip)/sqrt(2 hbar)`.
pub fn coherent_vector(level: &FockLevel, q: f64, p: f64) -> CoreResult<CMat> {
    let r = (q * q + p * p).sqrt();
    if r > level.r_valid() {
        return Err(CoreError::Refused(format!(
            "|z| = {r:.3} exceeds the validity radius {:.3}",
            level.r_valid()
        )));
    }
    let lnf = ln_factorials(level.cutoff);
    Ok(linalg::col(&coherent_coefficients(level, q, p, &lnf)))
}

/// Coherent vectors of every grid point, split as `C = X + iY` (grid x Fock).
#[derive(Debug, Clone)]
pub struct CoherentTable {
    pub level: FockLevel,
    pub grid: PhaseGrid,
    re: RMat,
    im: RMat,
}

impl CoherentTable {
    pub fn new(level: FockLevel, grid: PhaseGrid) -> Self {
        let lnf = ln_factorials(level.cutoff);
        let rows: Vec<Vec<C64>> = (0..grid.len())
            .into_par_iter()
            .map(|g| {
                let (q, p) = grid.point(g);
                coherent_coefficients(&level, q, p, &lnf)
            })
            .collect();
        let n = level.cutoff;
        let re = RMat::from_fn(grid.len(), n, |g, k| rows[g][k].re);
        let im = RMat::from_fn(grid.len(), n, |g, k| rows[g][k].im);
        Self { level, grid, re, im }
    }

    pub fn hbar(&self) -> f64 {
        self.level.hbar
    }

    pub fn dim(&self) -> usize {
        self.level.cutoff
    }

    pub fn level_space(&self) -> LevelSpace {
        LevelSpace::matrices(self.dim(), NormKind::Trace, true)
    }

    /// `delta^2 sum_z f(z) |z><z|`.
    pub fn quantize(&self, f: &[f64]) -> CMat {
        let w = self.grid.cell();
        let mut wx = self.re.clone();
        let mut wy = self.im.clone();
        for (g, v) in f.iter().enumerate() {
            let s = v * w;
            wx.row_mut(g).scale_mut(s);
            wy.row_mut(g).scale_mut(s);
        }
        let re = self.re.tr_mul(&wx) + self.im.tr_mul(&wy);
        let b = self.im.tr_mul(&wx);
        let im = &b - b.transpose();
        linalg::from_parts(&re, &im)
    }

    /// Husimi function `<z|rho|z> / (2 pi hbar)` on the grid.
    pub fn dequantize(&self, rho: &CMat) -> Vec<f64> {
        let p = linalg::real_part(rho);
        let q = linalg::imag_part(rho);
        let v_re = &self.re * p.transpose() - &self.im * q.transpose();
        let v_im = &self.im * p.transpose() + &self.re * q.transpose();
        let norm = 1.0 / (2.0 * PI * self.hbar());
        (0..self.grid.len())
            .into_par_iter()
            .map(|g| {
                let s: f64 = (0..self.dim())
                    .map(|k| self.re[(g, k)] * v_re[(g, k)] + self.im[(g, k)] * v_im[(g, k)])
                    .sum();
                s * norm
            })
            .collect()
    }

    /// `delta^2 sum_z |z><z|`, close to `2 pi hbar` times the identity on low Fock states.
    pub fn resolution_of_identity(&self) -> CMat {
        self.quantize(&vec![1.0; self.grid.len()])
    }
}

/// `j_{hbar hbar'} = quantize_hbar o dequantize_hbar'`.
pub fn cl_connecting_map(to: &CoherentTable, from: &CoherentTable, rho: &CMat) -> CoreResult<CMat> {
    if to.hbar() > from.hbar() {
        return Err(CoreError::Refused("the chain is directed toward hbar = 0".into()));
    }
    Ok(to.quantize(&from.dequantize(rho)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeReport {
    pub trace: f64,
    pub grid_mass: f64,
    /// `1 - tr rho / mass`: weight lost above the Fock cutoff.
    pub fock_tail: f64,
    pub mass_outside_valid: f64,
    pub warnings: Vec<String>,
}

pub fn quantize_report(table: &CoherentTable, f: &[f64], rho: &CMat) -> QuantizeReport {
    let grid_mass = table.grid.integral(f);
    let trace = linalg::trace(rho).re;
    let mass_outside_valid = table.grid.mass_outside(f, table.level.r_valid());
    let mut warnings = Vec::new();
    if table.grid.spacing > 0.1 {
        warnings.push(format!("grid spacing {} is coarser than 0.1", table.grid.spacing));
    }
    if mass_outside_valid > 1e-6 {
        warnings.push(format!(
            "probe mass {mass_outside_valid:.2e} lies outside the validity radius {:.3}",
            table.level.r_valid()
        ));
    }
    let fock_tail = if grid_mass != 0.0 { 1.0 - trace / grid_mass } else { 0.0 };
    QuantizeReport { trace, grid_mass, fock_tail, mass_outside_valid, warnings }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatReport {
    pub hbar: f64,
    pub cutoff: usize,
    /// `||dequantize(quantize f) - G_hbar * f||_1`.
    pub defect: f64,
    /// `||dequantize(quantize f) - f||_1`.
    pub identity_defect: f64,
    pub fock_tail: f64,
}

pub fn heat_transform_defect(table: &CoherentTable, f: &[f64], reference: &[f64]) -> HeatReport {
    let rho = table.quantize(f);
    let back = table.dequantize(&rho);
    let rep = quantize_report(table, f, &rho);
    HeatReport {
        hbar: table.hbar(),
        cutoff: table.dim(),
        defect: table.grid.l1_distance(&back, reference),
        identity_defect: table.grid.l1_distance(&back, f),
        fock_tail: rep.fock_tail,
    }
}

/// Discrete convolution with the heat kernel of variance `hbar`, sampled on the grid.
pub fn grid_heat_convolution(grid: &PhaseGrid, f: &[f64], hbar: f64) -> Vec<f64> {
    let n = grid.points_per_axis;
    let reach = ((12.0 * hbar).sqrt() * 3.0 / grid.spacing).ceil() as isize;
    let kernel: Vec<f64> = (-reach..=reach)
        .map(|d| {
            let x = d as f64 * grid.spacing;
            (-x * x / (2.0 * hbar)).exp() / (2.0 * PI * hbar).sqrt() * grid.spacing
        })
        .collect();
    let pass = |src: &[f64], along_q: bool| -> Vec<f64> {
        (0..n * n)
            .into_par_iter()
            .map(|g| {
                let (i, j) = ((g / n) as isize, (g % n) as isize);
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let d = k as isize - reach;
                    let (ii, jj) = if along_q { (i - d, j) } else { (i, j - d) };
                    if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                        acc += w * src[ii as usize * n + jj as usize];
                    }
                }
                acc
            })
            .collect()
    };
    pass(&pass(f, true), false)
}

/// Oracle for the heat-transform threshold: the quadrature change under grid
/// refinement plus the gentle-measurement bound on the Fock tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatThreshold {
    pub coarse: HeatReport,
    pub refined: HeatReport,
    pub threshold: f64,
    pub pass: bool,
}

pub const ROUNDOFF_FLOOR: f64 = 1e-12;

pub fn heat_threshold_check(level: FockLevel, grid: PhaseGrid, bump: GaussianBump) -> CoreResult<HeatThreshold> {
    let fine = PhaseGrid::new(grid.half_width, grid.spacing / 2.0)?;
    let run = |g: PhaseGrid| {
        let table = CoherentTable::new(level, g);
        heat_transform_defect(&table, &bump.on(&g), &bump.blurred(level.hbar).on(&g))
    };
    let coarse = run(grid);
    let refined = run(fine);
    let threshold = (coarse.defect - refined.defect).abs()
        + 2.0 * coarse.fock_tail.max(0.0).sqrt()
        + ROUNDOFF_FLOOR;
    Ok(HeatThreshold { pass: coarse.defect < threshold, coarse, refined, threshold })
}

/// The soft system on a decreasing hbar-chain with `i = dequantize` and
/// `p = quantize`, so `j_{nm} = quantize_n o dequantize_m`.
pub struct ClassicalSystem {
    pub tables: Vec<Arc<CoherentTable>>,
    pub grid: PhaseGrid,
    pub system: SoftSystem,
    pub split_check: SplitCheck,
}

impl ClassicalSystem {
    pub fn new(hbars: &[f64], cutoffs: &[usize], grid: PhaseGrid, probes: &[GaussianBump], tol: f64) -> CoreResult<Self> {
        if hbars.len() != cutoffs.len() {
            return Err(CoreError::ChainMismatch);
        }
        let chain = ScaleChain::new(hbars.to_vec(), Direction::ToZero)?;
        let levels_fock: Vec<FockLevel> = hbars
            .iter()
            .zip(cutoffs)
            .map(|(&h, &n)| FockLevel::new(h, n))
            .collect::<CoreResult<_>>()?;
        let tables: Vec<Arc<CoherentTable>> =
            levels_fock.iter().map(|l| Arc::new(CoherentTable::new(*l, grid))).collect();
        let i_maps: Vec<LevelMap> = tables
            .iter()
            .map(|t| {
                let t = t.clone();
                Arc::new(move |x: &CMat| PhaseGrid::as_element(&t.dequantize(x))) as LevelMap
            })
            .collect();
        let p_maps: Vec<LevelMap> = tables
            .iter()
            .map(|t| {
                let t = t.clone();
                Arc::new(move |y: &CMat| t.quantize(&PhaseGrid::from_element(y))) as LevelMap
            })
            .collect();
        let limit_probes: Vec<CMat> = probes.iter().map(|b| PhaseGrid::as_element(&b.on(&grid))).collect();
        let levels = tables.iter().map(|t| t.level_space()).collect();
        let (system, split_check) =
            split_system(chain, levels, grid.level_space(), i_maps, p_maps, &limit_probes, tol)?;
        Ok(Self { tables, grid, system, split_check })
    }

    pub fn table(&self, idx: usize) -> &CoherentTable {
        &self.tables[idx]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatConfig {
    pub hbar_chain: Vec<f64>,
    pub cutoffs: Vec<usize>,
    /// Chain of the soft-transitivity check; it needs four levels for two steps.
    pub soft_chain: Vec<f64>,
    pub soft_cutoffs: Vec<usize>,
    pub grid: PhaseGrid,
    pub bumps: Vec<GaussianBump>,
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self {
            hbar_chain: vec![0.4, 0.2, 0.1],
            cutoffs: vec![32, 48, 64],
            soft_chain: vec![0.4, 0.2, 0.1, 0.05],
            soft_cutoffs: vec![32, 48, 64, 96],
            grid: PhaseGrid::standard(),
            bumps: vec![
                GaussianBump { q0: 0.8, p0: 0.0, s: 0.7 },
                GaussianBump { q0: -0.5, p0: 0.4, s: 0.6 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatExperimentReport {
    /// Heat defect against the quadrature oracle at the last level of the chain.
    pub threshold: HeatThreshold,
    pub identity: Vec<HeatReport>,
    pub identity_decreasing: bool,
    pub split: SplitCheck,
    pub soft: TripleReport,
    /// Per probe: `||(j_{n,l} - j_{n,m} j_{m,l}) x||` for consecutive `(m, n)`.
    pub soft_steps: Vec<Vec<f64>>,
    pub soft_decreasing: bool,
    pub pass: bool,
}

/// Heat-transform and identity defects on `hbar_chain`, and soft transitivity
/// of the quantize/dequantize system on `soft_chain`.
pub fn heat_experiment(cfg: &HeatConfig, tol: f64) -> CoreResult<HeatExperimentReport> {
    if cfg.hbar_chain.len() != cfg.cutoffs.len() || cfg.soft_chain.len() != cfg.soft_cutoffs.len() {
        return Err(CoreError::ChainMismatch);
    }
    let bump = *cfg.bumps.first().ok_or_else(|| CoreError::Refused("no probe bumps".into()))?;
    ScaleChain::new(cfg.hbar_chain.clone(), Direction::ToZero)?;
    let grid = cfg.grid;
    let f = bump.on(&grid);
    let identity: Vec<HeatReport> = cfg
        .hbar_chain
        .iter()
        .zip(&cfg.cutoffs)
        .map(|(&hbar, &cutoff)| {
            let table = CoherentTable::new(FockLevel::new(hbar, cutoff)?, grid);
            Ok(heat_transform_defect(&table, &f, &bump.blurred(hbar).on(&grid)))
        })
        .collect::<CoreResult<_>>()?;
    let identity_values: Vec<f64> = identity.iter().map(|r| r.identity_defect).collect();
    let identity_decreasing = strictly_decreasing(&identity_values);
    let last = cfg.hbar_chain.len() - 1;
    let threshold =
        heat_threshold_check(FockLevel::new(cfg.hbar_chain[last], cfg.cutoffs[last])?, grid, bump)?;
    let cs = ClassicalSystem::new(&cfg.soft_chain, &cfg.soft_cutoffs, grid, &cfg.bumps, tol)?;
    let base = cfg.soft_chain[0];
    let probes: Vec<(f64, CMat)> =
        cfg.bumps.iter().map(|b| (base, cs.table(0).quantize(&b.on(&grid)))).collect();
    let soft = soft_transitivity_defect(&cs.system, &probes, tol)?;
    let per_probe = (cfg.soft_chain.len() - 1) * (cfg.soft_chain.len() - 2) / 2;
    let soft_steps: Vec<Vec<f64>> = soft
        .entries
        .chunks(per_probe)
        .map(|rows| {
            cfg.soft_chain
                .windows(2)
                .skip(1)
                .filter_map(|w| rows.iter().find(|e| e.m == w[0] && e.n == w[1]).map(|e| e.value))
                .collect()
        })
        .collect();
    let soft_decreasing = soft_steps.iter().all(|steps| steps.len() >= 2 && strictly_decreasing(steps));
    Ok(HeatExperimentReport {
        pass: threshold.pass && identity_decreasing && soft_decreasing,
        threshold,
        identity,
        identity_decreasing,
        split: cs.split_check.clone(),
        soft,
        soft_steps,
        soft_decreasing,
    })
}

/// `-(i/hbar)[H, rho]` for the Fock-diagonal oscillator.
pub fn oscillator_commutator(level: &FockLevel, rho: &CMat) -> CMat {
    let h = level.oscillator();
    linalg::commutator(&h, rho) * c(0.0, -1.0 / level.hbar)
}

/// `e^{-itH/hbar} rho e^{itH/hbar}` with `H/hbar = n + 1/2`.
pub fn oscillator_evolve(rho: &CMat, t: f64) -> CMat {
    CMat::from_fn(rho.nrows(), rho.ncols(), |i, j| rho[(i, j)] * C64::from_polar(1.0, -t * (i as f64 - j as f64)))
}

/// Poisson bracket `{H_0, f}` with `H_0 = (q^2 + p^2)/2`, by central differences.
pub fn oscillator_poisson(grid: &PhaseGrid, f: &[f64]) -> Vec<f64> {
    let n = grid.points_per_axis;
    let h = grid.spacing;
    (0..n * n)
        .map(|g| {
            let (i, j) = (g / n, g % n);
            if i == 0 || j == 0 || i + 1 == n || j + 1 == n {
                return 0.0;
            }
            let (q, p) = grid.point(g);
            let dq = (f[g + n] - f[g - n]) / (2.0 * h);
            let dp = (f[g + 1] - f[g - 1]) / (2.0 * h);
            q * dp - p * dq
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLindbladSpec {
    /// Real symmetric.
    pub a: [[f64; 2]; 2],
    /// Complex positive semi-definite, as `(re, im)` pairs.
    pub m: [[(f64, f64); 2]; 2],
}

impl GaussianLindbladSpec {
    pub fn new(a: [[f64; 2]; 2], m: [[(f64, f64); 2]; 2]) -> CoreResult<Self> {
        if (a[0][1] - a[1][0]).abs() > 1e-12 {
            return Err(CoreError::Refused("A must be symmetric".into()));
        }
        let spec = Self { a, m };
        let mm = spec.m_matrix();
        let herm = (&mm + mm.adjoint()) * c(0.5, 0.0);
        let (ev, _) = linalg::eigh(&herm);
        if ev[0] < -1e-10 {
            return Err(CoreError::Refused(format!("M has negative eigenvalue {:.3e}", ev[0])));
        }
        Ok(spec)
    }

    pub fn oscillator() -> Self {
        Self { a: [[1.0, 0.0], [0.0, 1.0]], m: [[(0.0, 0.0); 2]; 2] }
    }

    /// `A = I`, `M = alpha [[1, i], [-i, 1]]`.
    pub fn damped(alpha: f64) -> Self {
        Self { a: [[1.0, 0.0], [0.0, 1.0]], m: [[(alpha, 0.0), (0.0, alpha)], [(0.0, -alpha), (alpha, 0.0)]] }
    }

    pub fn m_matrix(&self) -> CMat {
        CMat::from_fn(2, 2, |j, k| c(self.m[j][k].0, self.m[j][k].1))
    }

    /// Rate `kappa` with `tr L(rho) = kappa tr rho` for the displayed generator.
    pub fn trace_rate(&self) -> f64 {
        // tr L(rho) = i (M_12 - M_21) tr rho, using [x, p] = i hbar.
        let m = self.m_matrix();
        (c(0.0, 1.0) * (m[(0, 1)] - m[(1, 0)])).re
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LindbladForm {
    /// The generator exactly as displayed. Its dissipator is the GKSL one for
    /// the noise matrix `-M` plus `trace_rate` times the identity, so it is
    /// neither positive nor trace preserving.
    Literal,
    /// `-(i/hbar)[H, rho] + (1/hbar) sum_kl N_kl (R_k rho R_l - {R_l R_k, rho}/2)`
    /// with `N = conj(M)`. Same first-moment drift as the displayed form.
    Gksl,
}

pub const LINDBLAD_MAX_CUTOFF: usize = 48;

/// `L(rho) = X rho + rho Y + sum_i c_i P_i rho Q_i` on the truncated Fock space.
#[derive(Debug, Clone)]
pub struct LindbladTerms {
    pub dim: usize,
    pub left: CMat,
    pub right: CMat,
    pub sandwiches: Vec<(C64, CMat, CMat)>,
    /// Crude bound on the generator norm, used for step control.
    pub norm_bound: f64,
}

impl LindbladTerms {
    pub fn new(spec: &GaussianLindbladSpec, level: &FockLevel, form: LindbladForm) -> Self {
        let n = level.cutoff;
        let r = level.canonical();
        let mm = spec.m_matrix();
        let mut left = CMat::zeros(n, n);
        let mut right = CMat::zeros(n, n);
        // Coefficients of R_j rho R_k, diagonalized into at most two jump terms below.
        let mut cross = CMat::zeros(2, 2);
        let h_scale = c(0.0, -1.0 / (2.0 * level.hbar));
        for j in 0..2 {
            for k in 0..2 {
                let rjk = &r[j] * &r[k];
                let ajk = spec.a[j][k];
                if ajk != 0.0 {
                    left += &rjk * (h_scale * ajk);
                    right -= &rjk * (h_scale * ajk);
                }
                let mjk = mm[(j, k)];
                if mjk == c(0.0, 0.0) {
                    continue;
                }
                match form {
                    LindbladForm::Literal => {
                        // R_j [R_k, rho] + [rho, R_j] R_k
                        let coef = h_scale * c(0.0, 1.0) * mjk;
                        left += &rjk * coef;
                        right += &rjk * coef;
                        cross[(j, k)] += coef * -2.0;
                    }
                    LindbladForm::Gksl => {
                        let coef = mjk.conj() / level.hbar;
                        let rkj = &r[k] * &r[j];
                        left -= &rkj * (coef * 0.5);
                        right -= &rkj * (coef * 0.5);
                        cross[(j, k)] += coef;
                    }
                }
            }
        }
        let (weights, vecs) = linalg::eigh(&cross);
        let scale = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let sandwiches: Vec<(C64, CMat, CMat)> = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| w.abs() > 1e-14 * scale)
            .map(|(i, &w)| {
                let jump = &r[0] * vecs[(0, i)] + &r[1] * vecs[(1, i)];
                let jd = jump.adjoint();
                (c(w, 0.0), jump, jd)
            })
            .collect();
        let op = |m: &CMat| linalg::one_norm(m).max(linalg::one_norm(&m.adjoint()));
        let norm_bound = op(&left)
            + op(&right)
            + sandwiches.iter().map(|(w, p, q)| w.norm() * op(p) * op(q)).sum::<f64>();
        Self { dim: n, left, right, sandwiches, norm_bound }
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = &self.left * rho + rho * &self.right;
        for (w, p, q) in &self.sandwiches {
            out += (p * rho * q) * *w;
        }
        out
    }

    /// Matrix `K` with `tr L(rho) = tr(K rho)`.
    pub fn trace_functional(&self) -> CMat {
        let mut k = &self.left + &self.right;
        for (w, p, q) in &self.sandwiches {
            k += (q * p) * *w;
        }
        k
    }

    /// `||L*(1)||` entrywise on the Fock block below `cutoff - 2`, where
    /// truncation does not interfere.
    pub fn trace_defect(&self) -> f64 {
        let safe = self.dim.saturating_sub(2);
        linalg::max_abs(&self.trace_functional().view((0, 0), (safe, safe)).into_owned())
    }

    /// `e^{tL} rho` by Taylor series on substeps with `h ||L|| <= 2`.
    pub fn evolve(&self, rho: &CMat, t: f64) -> CoreResult<CMat> {
        if t < 0.0 {
            return Err(CoreError::NegativeTime(t));
        }
        let steps = (0.5 * t * self.norm_bound).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut state = rho.clone();
        for _ in 0..steps {
            let mut term = state.clone();
            let mut acc = state.clone();
            for k in 1..80 {
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

    /// Superoperator on column-major `vec(rho)`.
    pub fn superoperator(&self) -> CoreResult<CMat> {
        let n = self.dim;
        if n > LINDBLAD_MAX_CUTOFF {
            let bytes = (n * n) * (n * n) * 16;
            return Err(CoreError::ResourceCap(format!(
                "cutoff {n} exceeds {LINDBLAD_MAX_CUTOFF}; the superoperator alone needs {:.1} MiB",
                bytes as f64 / (1 << 20) as f64
            )));
        }
        let id = linalg::identity(n);
        // vec(X rho Y) = (Y^T (x) X) vec(rho).
        let mut out = linalg::kron(&id, &self.left) + linalg::kron(&self.right.transpose(), &id);
        for (w, p, q) in &self.sandwiches {
            out += linalg::kron(&q.transpose(), p) * *w;
        }
        Ok(out)
    }
}

pub fn lindblad_generator(spec: &GaussianLindbladSpec, level: &FockLevel, form: LindbladForm) -> CoreResult<CMat> {
    LindbladTerms::new(spec, level, form).superoperator()
}

/// `||L*(1)||` from a superoperator, on the same block as `LindbladTerms::trace_defect`.
pub fn trace_defect(generator: &CMat, n: usize) -> f64 {
    // tr L(E_ab) = sum_d L[(d,d), (a,b)].
    let safe = n.saturating_sub(2);
    let mut worst: f64 = 0.0;
    for a in 0..safe {
        for b in 0..safe {
            let col = b * n + a;
            let s: C64 = (0..n).map(|d| generator[(d * n + d, col)]).sum();
            worst = worst.max(s.norm());
        }
    }
    worst
}

pub fn sigma() -> [[f64; 2]; 2] {
    [[0.0, 1.0], [-1.0, 0.0]]
}

fn mat2_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat2_t(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mat2_scale(a: [[f64; 2]; 2], s: f64) -> [[f64; 2]; 2] {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

/// `e^{B}` for a real 2x2 matrix.
pub fn expm2(b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let m = (b[0][0] + b[1][1]) / 2.0;
    let det_shift = (b[0][0] - m) * (b[1][1] - m) - b[0][1] * b[1][0];
    // (B - m)^2 = -det_shift * I.
    let d = -det_shift;
    let (ch, sh) = if d > 0.0 {
        let mu = d.sqrt();
        (mu.cosh(), mu.sinh() / mu)
    } else if d < 0.0 {
        let mu = (-d).sqrt();
        (mu.cos(), mu.sin() / mu)
    } else {
        (1.0, 1.0)
    };
    let em = m.exp();
    [
        [em * (ch + sh * (b[0][0] - m)), em * sh * b[0][1]],
        [em * sh * b[1][0], em * (ch + sh * (b[1][1] - m))],
    ]
}

/// Principal logarithm of a real 2x2 matrix with no eigenvalue on `(-inf, 0]`.
pub fn logm2(phi: [[f64; 2]; 2]) -> CoreResult<[[f64; 2]; 2]> {
    let m = (phi[0][0] + phi[1][1]) / 2.0;
    let det = phi[0][0] * phi[1][1] - phi[0][1] * phi[1][0];
    let disc = m * m - det;
    let (scalar, coeff) = if disc < 0.0 {
        let mu = (-disc).sqrt();
        let theta = mu.atan2(m);
        (0.5 * det.ln(), theta / mu)
    } else {
        let mu = disc.sqrt();
        let (lp, lm) = (m + mu, m - mu);
        if lm <= 0.0 {
            return Err(CoreError::Refused("matrix has a non-positive real eigenvalue".into()));
        }
        if mu < 1e-14 {
            (m.ln(), 1.0 / m)
        } else {
            (0.5 * (lp.ln() + lm.ln()), (lp.ln() - lm.ln()) / (2.0 * mu))
        }
    };
    Ok([
        [scalar + coeff * (phi[0][0] - m), coeff * phi[0][1]],
        [coeff * phi[1][0], scalar + coeff * (phi[1][1] - m)],
    ])
}

/// Which reading of the limit generator produced a moment flow `z' = B z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowConvention {
    /// `Im M = (i/2)(conj(M) - M)` entrywise; densities transported as
    /// `rho_0(e^{tK^T} z)`, so points move with `B = -K^T`.
    EntrywiseTransport,
    /// Entrywise `Im M`; points move with `B = K`.
    EntrywiseDirect,
    /// `Im M = (i/2)(M^dagger - M)`; points move with `B = -K^T`.
    AdjointTransport,
    /// The vector field of the damped oscillator exactly as displayed,
    /// `q' = -alpha q - p`, `p' = q - alpha p`.
    DisplayedField,
}

impl FlowConvention {
    pub const ALL: [FlowConvention; 4] = [
        FlowConvention::EntrywiseTransport,
        FlowConvention::EntrywiseDirect,
        FlowConvention::AdjointTransport,
        FlowConvention::DisplayedField,
    ];
}

/// `K = (A - Im M) sigma` under the chosen reading of `Im M`.
pub fn limit_generator(spec: &GaussianLindbladSpec, entrywise: bool) -> [[f64; 2]; 2] {
    let m = spec.m_matrix();
    let other = if entrywise { m.map(|z| z.conj()) } else { m.adjoint() };
    let im_m = (other - &m) * c(0.0, 0.5);
    let mut diff = spec.a;
    for j in 0..2 {
        for k in 0..2 {
            diff[j][k] -= im_m[(j, k)].re;
        }
    }
    mat2_mul(diff, sigma())
}

/// Point velocity matrix `B` of the moment flow under a convention.
pub fn moment_generator(spec: &GaussianLindbladSpec, conv: FlowConvention) -> [[f64; 2]; 2] {
    match conv {
        FlowConvention::EntrywiseTransport => mat2_scale(mat2_t(limit_generator(spec, true)), -1.0),
        FlowConvention::EntrywiseDirect => limit_generator(spec, true),
        FlowConvention::AdjointTransport => mat2_scale(mat2_t(limit_generator(spec, false)), -1.0),
        FlowConvention::DisplayedField => {
            // Only defined for the damped oscillator; alpha = Re M_11.
            let alpha = spec.m[0][0].0;
            [[-alpha, -1.0], [1.0, -alpha]]
        }
    }
}

/// Flow map `e^{tB}` of the phase-space points under a convention.
pub fn classical_flow(spec: &GaussianLindbladSpec, t: f64, conv: FlowConvention) -> [[f64; 2]; 2] {
    expm2(mat2_scale(moment_generator(spec, conv), t))
}

pub fn det2(a: [[f64; 2]; 2]) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Decomposition `B = -r I + w J + S` with `J = [[0, 1], [-1, 0]]` and `S`
/// symmetric traceless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFlowShape {
    pub contraction_rate: f64,
    /// Positive for clockwise rotation (`q' = p`).
    pub rotation_rate: f64,
    pub shear: f64,
}

pub fn flow_shape(b: [[f64; 2]; 2]) -> LinearFlowShape {
    let r = -(b[0][0] + b[1][1]) / 2.0;
    let w = (b[0][1] - b[1][0]) / 2.0;
    let s00 = (b[0][0] - b[1][1]) / 2.0;
    let s01 = (b[0][1] + b[1][0]) / 2.0;
    LinearFlowShape { contraction_rate: r, rotation_rate: w, shear: (s00 * s00 + s01 * s01).sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub hbar: f64,
    pub cutoff: usize,
    pub t: f64,
    pub fitted: [[f64; 2]; 2],
    pub shape: LinearFlowShape,
    /// Distance of the fitted generator to each convention, in `FlowConvention::ALL` order.
    pub distances: Vec<(FlowConvention, f64)>,
    pub resolved: FlowConvention,
    pub min_husimi: f64,
    /// The same fit under the displayed generator.
    pub literal_fitted: [[f64; 2]; 2],
    pub literal_shape: LinearFlowShape,
    /// Trace of the literal generator's output state, `e^{kappa t}` in exact arithmetic.
    pub literal_trace: f64,
    pub trace_defect_literal: f64,
    pub trace_defect_gksl: f64,
}

/// Evolves two coherent states under the GKSL generator, fits the
/// linear flow of their trace-normalized Husimi means, and picks the closest
/// reading of the limit generator.
pub fn fit_moment_flow(
    spec: &GaussianLindbladSpec,
    level: FockLevel,
    grid: PhaseGrid,
    t: f64,
    starts: [(f64, f64); 2],
) -> CoreResult<MomentFit> {
    let table = CoherentTable::new(level, grid);
    let gksl = LindbladTerms::new(spec, &level, LindbladForm::Gksl);
    let literal = LindbladTerms::new(spec, &level, LindbladForm::Literal);
    let (fitted, _, min_husimi) = fit_one(&gksl, &table, t, starts)?;
    let (literal_fitted, literal_trace, _) = fit_one(&literal, &table, t, starts)?;
    let distances: Vec<(FlowConvention, f64)> = FlowConvention::ALL
        .iter()
        .map(|&conv| {
            let cand = moment_generator(spec, conv);
            let d: f64 = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| (fitted[i][j] - cand[i][j]).powi(2))
                .sum::<f64>()
                .sqrt();
            (conv, d)
        })
        .collect();
    let resolved = distances
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|d| d.0)
        .expect("non-empty");
    let n = level.cutoff;
    Ok(MomentFit {
        hbar: level.hbar,
        cutoff: n,
        t,
        fitted,
        shape: flow_shape(fitted),
        distances,
        resolved,
        min_husimi,
        literal_fitted,
        literal_shape: flow_shape(literal_fitted),
        literal_trace,
        trace_defect_literal: literal.trace_defect(),
        trace_defect_gksl: gksl.trace_defect(),
    })
}

/// Generator of the linear map sending the start points to the trace-normalized
/// Husimi means at time `t`; also the trace of the last evolved state and the
/// most negative Husimi value seen.
fn fit_one(
    gen: &LindbladTerms,
    table: &CoherentTable,
    t: f64,
    starts: [(f64, f64); 2],
) -> CoreResult<([[f64; 2]; 2], f64, f64)> {
    let mut moved = [[0.0; 2]; 2];
    let mut trace = 0.0;
    let mut min_husimi = f64::INFINITY;
    for (col, &(q, p)) in starts.iter().enumerate() {
        let v = coherent_vector(&table.level, q, p)?;
        let rho = &v * v.adjoint();
        let rho_t = gen.evolve(&rho, t)?;
        trace = linalg::trace(&rho_t).re;
        let hus = table.dequantize(&rho_t);
        min_husimi = hus.iter().copied().fold(min_husimi, f64::min);
        let (mq, mp) = table.grid.mean(&hus);
        moved[0][col] = mq;
        moved[1][col] = mp;
    }
    let z = [[starts[0].0, starts[1].0], [starts[0].1, starts[1].1]];
    let dz = det2(z);
    let z_inv = [[z[1][1] / dz, -z[0][1] / dz], [-z[1][0] / dz, z[0][0] / dz]];
    let phi = mat2_mul(moved, z_inv);
    Ok((mat2_scale(logm2(phi)?, 1.0 / t), trace, min_husimi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    HamiltonianHo,
    GaussianLindblad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalConfig {
    pub hbar_chain: Vec<f64>,
    pub cutoffs: Vec<usize>,
    pub grid: PhaseGrid,
    pub bump: GaussianBump,
    pub t: f64,
    pub alpha: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            hbar_chain: vec![0.4, 0.2, 0.1],
            cutoffs: vec![32, 48, 64],
            grid: PhaseGrid::standard(),
            bump: GaussianBump { q0: 0.8, p0: 0.0, s: 0.7 },
            t: 1.0,
            alpha: 0.3,
        }
    }
}

impl ClassicalConfig {
    /// Default chain with cutoffs small enough for the Lindblad superoperator.
    pub fn lindblad() -> Self {
        Self { cutoffs: vec![24, 32, 48], ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalRow {
    pub hbar: f64,
    pub cutoff: usize,
    pub error: f64,
    /// Error of the same comparison at `t = 0`: the quantize/dequantize blur.
    pub blur_only: f64,
    pub fock_tail: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalReport {
    pub kind: ExperimentKind,
    pub rows: Vec<ClassicalRow>,
    pub ratios: Vec<f64>,
    pub moment_fits: Vec<MomentFit>,
    pub pass: bool,
}

pub const HALVING_RANGE: (f64, f64) = (1.6, 2.6);
pub const MOMENT_RATE_TOL: f64 = 0.1;

fn lindblad_density(spec: &GaussianLindbladSpec, level: FockLevel, rho: &CMat, t: f64) -> CoreResult<CMat> {
    LindbladTerms::new(spec, &level, LindbladForm::Gksl).evolve(rho, t)
}

/// Pushforward of a density along the linear point flow `z -> F z`.
fn pushforward(grid: &PhaseGrid, f0: impl Fn(f64, f64) -> f64 + Sync, flow: [[f64; 2]; 2]) -> Vec<f64> {
    let d = det2(flow);
    let inv = [[flow[1][1] / d, -flow[0][1] / d], [-flow[1][0] / d, flow[0][0] / d]];
    grid.sample(move |q, p| {
        let (q0, p0) = (inv[0][0] * q + inv[0][1] * p, inv[1][0] * q + inv[1][1] * p);
        f0(q0, p0) / d.abs()
    })
}

pub fn classical_limit_experiment(kind: ExperimentKind, cfg: &ClassicalConfig) -> CoreResult<ClassicalReport> {
    if cfg.hbar_chain.len() != cfg.cutoffs.len() {
        return Err(CoreError::ChainMismatch);
    }
    ScaleChain::new(cfg.hbar_chain.clone(), Direction::ToZero)?;
    if kind == ExperimentKind::GaussianLindblad {
        if let Some(&n) = cfg.cutoffs.iter().find(|&&n| n > LINDBLAD_MAX_CUTOFF) {
            return Err(CoreError::ResourceCap(format!("Lindblad cutoff {n} exceeds {LINDBLAD_MAX_CUTOFF}")));
        }
    }
    let grid = cfg.grid;
    let f0 = cfg.bump.on(&grid);
    let mut rows = Vec::new();
    let mut moment_fits = Vec::new();
    for (&hbar, &cutoff) in cfg.hbar_chain.iter().zip(&cfg.cutoffs) {
        let level = FockLevel::new(hbar, cutoff)?;
        let table = CoherentTable::new(level, grid);
        let rho0 = table.quantize(&f0);
        let qrep = quantize_report(&table, &f0, &rho0);
        let blur_only = grid.l1_distance(&table.dequantize(&rho0), &f0);
        let error = match kind {
            ExperimentKind::HamiltonianHo => {
                let rho_t = oscillator_evolve(&rho0, cfg.t);
                grid.l1_distance(&table.dequantize(&rho_t), &cfg.bump.rotated(cfg.t).on(&grid))
            }
            ExperimentKind::GaussianLindblad => {
                let spec = GaussianLindbladSpec::damped(cfg.alpha);
                let rho_t = lindblad_density(&spec, level, &rho0, cfg.t)?;
                let hus = table.dequantize(&rho_t);
                let mass = grid.integral(&hus);
                let hus: Vec<f64> = hus.iter().map(|v| v / mass).collect();
                let flow = classical_flow(&spec, cfg.t, FlowConvention::EntrywiseTransport);
                let bump = cfg.bump;
                let target = pushforward(&grid, move |q, p| bump.eval(q, p), flow);
                let fit = fit_moment_flow(&spec, level, grid, cfg.t, [(0.6, 0.0), (0.0, 0.6)])?;
                moment_fits.push(fit);
                grid.l1_distance(&hus, &target)
            }
        };
        rows.push(ClassicalRow { hbar, cutoff, error, blur_only, fock_tail: qrep.fock_tail, warnings: qrep.warnings });
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let ratios = limitflow_core::report::successive_ratios(&errors);
    let pass = match kind {
        ExperimentKind::HamiltonianHo => {
            ratios.iter().all(|r| (HALVING_RANGE.0..=HALVING_RANGE.1).contains(r))
        }
        ExperimentKind::GaussianLindblad => moment_fits.iter().all(|f| moment_fit_passes(f, cfg.alpha)),
    };
    Ok(ClassicalReport { kind, rows, ratios, moment_fits, pass })
}

/// Rotation at unit rate plus uniform contraction at rate `alpha`, each within 10%.
pub fn moment_fit_passes(fit: &MomentFit, alpha: f64) -> bool {
    let s = fit.shape;
    (s.contraction_rate - alpha).abs() <= MOMENT_RATE_TOL * alpha
        && (s.rotation_rate.abs() - 1.0).abs() <= MOMENT_RATE_TOL
        && s.shear <= MOMENT_RATE_TOL * alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> PhaseGrid {
        PhaseGrid::new(5.0, 0.1).unwrap()
    }

    #[test]
    fn level_validation() {
        assert!(FockLevel::new(0.0, 32).is_err());
        assert!(FockLevel::new(0.1, 8).is_err());
        let l = FockLevel::new(0.1, 64).unwrap();
        assert!((l.r_valid() - 6.4f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(PhaseGrid::new(3.0, 0.05).is_err());
        assert_eq!(PhaseGrid::standard().len(), 241 * 241);
    }

    #[test]
    fn coherent_vector_examples() {
        let l = FockLevel::new(0.1, 48).unwrap();
        let v0 = coherent_vector(&l, 0.0, 0.0).unwrap();
        assert_eq!(v0, linalg::basis(48, 0));
        let (q, p) = (0.5, -0.3);
        let v = coherent_vector(&l, q, p).unwrap();
        assert!((linalg::frobenius(&v) - 1.0).abs() < 1e-8);
        // Oracle: displacement exp(alpha a* - conj(alpha) a) applied to the vacuum.
        let alpha = c(q, p) / (2.0 * l.hbar).sqrt();
        let a = l.lowering();
        let gen = a.adjoint() * alpha - &a * alpha.conj();
        let big = FockLevel::new(0.1, 48).unwrap();
        let disp = linalg::expm(&gen) * linalg::basis(big.cutoff, 0);
        assert!(linalg::frobenius(&(&disp.rows(0, 30).into_owned() - v.rows(0, 30))) < 1e-8);
        let overlap = v0.adjoint() * &v;
        assert!((overlap[(0, 0)].norm_sqr() - (-(q * q + p * p) / (2.0 * l.hbar)).exp()).abs() < 1e-12);
        let w = coherent_vector(&l, -0.2, 0.4).unwrap();
        let beta = c(-0.2, 0.4) / (2.0 * l.hbar).sqrt();
        let ov = (w.adjoint() * &v)[(0, 0)].norm();
        assert!((ov - (-(alpha - beta).norm_sqr() / 2.0).exp()).abs() < 1e-10);
        assert!(matches!(coherent_vector(&l, 3.0, 0.0), Err(CoreError::Refused(_))));
    }

    #[test]
    fn quantize_and_dequantize_examples() {
        let grid = PhaseGrid::standard();
        let level = FockLevel::new(0.1, 64).unwrap();
        let table = CoherentTable::new(level, grid);
        let f = GaussianBump { q0: 0.0, p0: 0.0, s: 0.3 }.on(&grid);
        let rho = table.quantize(&f);
        assert!((linalg::trace(&rho).re - 1.0).abs() < 1e-4);
        assert!(linalg::is_hermitian(&rho, 1e-14));
        assert!(linalg::eigh(&rho).0[0] > -1e-12);
        assert_eq!(table.quantize(&vec![0.0; grid.len()]), CMat::zeros(64, 64));
        let vac = linalg::basis(64, 0) * linalg::basis(64, 0).transpose();
        let hus = table.dequantize(&vac);
        let centre = (grid.points_per_axis / 2) * grid.points_per_axis + grid.points_per_axis / 2;
        assert_eq!(grid.point(centre), (0.0, 0.0));
        assert!((hus[centre] - 1.0 / (2.0 * PI * 0.1)).abs() < 1e-12);
        assert!((grid.integral(&hus) - 1.0).abs() < 1e-4);
        assert!(hus.iter().all(|v| *v >= -1e-12));
        assert!(table.dequantize(&CMat::zeros(64, 64)).iter().all(|v| *v == 0.0));
        // |z0><z0| dequantizes to a Gaussian of variance hbar about z0.
        let v = coherent_vector(&level, 0.5, 0.2).unwrap();
        let bump = GaussianBump { q0: 0.5, p0: 0.2, s: 0.1f64.sqrt() }.on(&grid);
        let hus = table.dequantize(&(&v * v.adjoint()));
        assert!(grid.l1_distance(&hus, &bump) < 1e-9);
    }

    #[test]
    fn resolution_of_identity_on_low_block() {
        let level = FockLevel::new(0.2, 32).unwrap();
        let table = CoherentTable::new(level, PhaseGrid::standard());
        let r = table.resolution_of_identity() / c(2.0 * PI * 0.2, 0.0);
        let block = r.view((0, 0), (16, 16)).into_owned();
        assert!(linalg::max_abs(&(block - linalg::identity(16))) < 1e-4);
    }

    #[test]
    fn vacuum_maps_to_gaussian_with_added_variance() {
        let grid = small_grid();
        let from = CoherentTable::new(FockLevel::new(0.4, 32).unwrap(), grid);
        let to = CoherentTable::new(FockLevel::new(0.2, 48).unwrap(), grid);
        let vac = linalg::basis(32, 0) * linalg::basis(32, 0).transpose();
        let out = cl_connecting_map(&to, &from, &vac).unwrap();
        assert!((linalg::trace(&out).re - 1.0).abs() < 1e-4);
        let hus = to.dequantize(&out);
        let oracle = GaussianBump { q0: 0.0, p0: 0.0, s: (0.4f64 + 0.2).sqrt() }.on(&grid);
        let d = grid.l1_distance(&hus, &oracle);
        assert!(d < 1e-3, "{d}");
        assert!(cl_connecting_map(&from, &to, &out).is_err());
        assert_eq!(cl_connecting_map(&to, &from, &CMat::zeros(32, 32)).unwrap(), CMat::zeros(48, 48));
    }

    #[test]
    fn heat_transform_matches_convolutions() {
        let grid = small_grid();
        let table = CoherentTable::new(FockLevel::new(0.2, 64).unwrap(), grid);
        let bump = GaussianBump { q0: 0.5, p0: -0.5, s: 0.15 };
        let f = bump.on(&grid);
        let direct = grid_heat_convolution(&grid, &f, 0.2);
        let rep = heat_transform_defect(&table, &f, &direct);
        assert!(rep.defect < 1e-8, "{}", rep.defect);
        let zero = heat_transform_defect(&table, &vec![0.0; grid.len()], &vec![0.0; grid.len()]);
        assert_eq!(zero.defect, 0.0);
    }

    #[test]
    fn oscillator_matches_canonical_operators() {
        let level = FockLevel::new(0.3, 24).unwrap();
        let [x, p] = level.canonical();
        let h = (&x * &x + &p * &p) * c(0.5, 0.0);
        let diff = (h - level.oscillator()).view((0, 0), (23, 23)).into_owned();
        assert!(linalg::max_abs(&diff) < 1e-12);
        let comm = linalg::commutator(&x, &p).view((0, 0), (23, 23)).into_owned();
        assert!(linalg::max_abs(&(comm - linalg::identity(23) * c(0.0, 0.3))) < 1e-12);
    }

    #[test]
    fn oscillator_evolution_rotates_coherent_states() {
        let level = FockLevel::new(0.1, 64).unwrap();
        let v = coherent_vector(&level, 0.8, 0.0).unwrap();
        let rho = oscillator_evolve(&(&v * v.adjoint()), 1.0);
        let b = GaussianBump { q0: 0.8, p0: 0.0, s: 0.0 }.rotated(1.0);
        let w = coherent_vector(&level, b.q0, b.p0).unwrap();
        assert!(linalg::max_abs(&(rho - &w * w.adjoint())) < 1e-12);
    }

    #[test]
    fn matrix_helpers() {
        let b = [[-0.3, 1.0], [-1.0, -0.3]];
        let back = logm2(expm2(mat2_scale(b, 0.7))).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[i][j] - 0.7 * b[i][j]).abs() < 1e-13);
            }
        }
        let real = [[0.2, 0.1], [0.05, -0.4]];
        let back = logm2(expm2(real)).unwrap();
        assert!((back[0][1] - 0.1).abs() < 1e-13 && (back[1][1] + 0.4).abs() < 1e-13);
        let s = flow_shape(b);
        assert!((s.contraction_rate - 0.3).abs() < 1e-15 && (s.rotation_rate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn classical_flow_examples() {
        let zero = GaussianLindbladSpec { a: [[0.0; 2]; 2], m: [[(0.0, 0.0); 2]; 2] };
        assert_eq!(classical_flow(&zero, 1.3, FlowConvention::EntrywiseTransport), [[1.0, 0.0], [0.0, 1.0]]);
        let osc = GaussianLindbladSpec::oscillator();
        let f = classical_flow(&osc, 0.9, FlowConvention::EntrywiseTransport);
        assert!((det2(f) - 1.0).abs() < 1e-14);
        assert!((f[0][0] - 0.9f64.cos()).abs() < 1e-14 && (f[0][1] - 0.9f64.sin()).abs() < 1e-14);
        let damped = GaussianLindbladSpec::damped(0.3);
        let k = limit_generator(&damped, true);
        assert_eq!(k, [[0.3, 1.0], [-1.0, 0.3]]);
        assert_eq!(limit_generator(&damped, false), [[0.0, 1.0], [-1.0, 0.0]]);
        let f = classical_flow(&damped, 1.0, FlowConvention::EntrywiseTransport);
        assert!((det2(f) - (-0.6f64).exp()).abs() < 1e-14);
        assert!(GaussianLindbladSpec::new([[1.0, 0.0], [0.0, 1.0]], damped.m).is_ok());
        assert!(GaussianLindbladSpec::new([[1.0, 0.0], [0.0, 1.0]], [[(-1.0, 0.0), (0.0, 0.0)], [(0.0, 0.0), (0.0, 0.0)]]).is_err());
    }

    #[test]
    fn lindblad_generator_examples() {
        let level = FockLevel::new(0.2, 16).unwrap();
        let zero = GaussianLindbladSpec { a: [[0.0; 2]; 2], m: [[(0.0, 0.0); 2]; 2] };
        let g = lindblad_generator(&zero, &level, LindbladForm::Literal).unwrap();
        assert_eq!(linalg::max_abs(&g), 0.0);
        let too_big = FockLevel::new(0.2, 64).unwrap();
        assert!(matches!(lindblad_generator(&zero, &too_big, LindbladForm::Literal), Err(CoreError::ResourceCap(_))));
        // Pure oscillator: evolution is unitary conjugation, so purity stays 1.
        let osc = lindblad_generator(&GaussianLindbladSpec::oscillator(), &level, LindbladForm::Literal).unwrap();
        let v = coherent_vector(&level, 0.3, 0.1).unwrap();
        let rho = &v * v.adjoint();
        let out = linalg::expm(&(osc * c(0.7, 0.0))) * CMat::from_column_slice(256, 1, rho.as_slice());
        let rho_t = CMat::from_column_slice(16, 16, out.as_slice());
        let purity = linalg::trace(&(&rho_t * &rho_t)).re;
        assert!((purity - 1.0).abs() < 1e-6);
        let damped = GaussianLindbladSpec::damped(0.3);
        assert!((damped.trace_rate() + 0.6).abs() < 1e-15);
        let lit = lindblad_generator(&damped, &level, LindbladForm::Literal).unwrap();
        let fixed = lindblad_generator(&damped, &level, LindbladForm::Gksl).unwrap();
        assert!((trace_defect(&lit, 16) - 0.6).abs() < 1e-10);
        assert!(trace_defect(&fixed, 16) < 1e-8);
    }

    #[test]
    fn taylor_evolution_matches_superoperator_exponential() {
        let level = FockLevel::new(0.2, 16).unwrap();
        let v = coherent_vector(&level, 0.3, 0.2).unwrap();
        let rho = &v * v.adjoint();
        for form in [LindbladForm::Literal, LindbladForm::Gksl] {
            let terms = LindbladTerms::new(&GaussianLindbladSpec::damped(0.3), &level, form);
            let prop = linalg::expm(&(terms.superoperator().unwrap() * c(0.7, 0.0)));
            let dense = CMat::from_column_slice(16, 16, (prop * CMat::from_column_slice(256, 1, rho.as_slice())).as_slice());
            assert!(linalg::max_abs(&(terms.evolve(&rho, 0.7).unwrap() - dense)) < 1e-11);
        }
    }

    #[test]
    fn gksl_form_matches_annihilation_jump_and_literal_form() {
        // N = conj(M) = w w* with w = sqrt(alpha)(1, i), so the jump is sqrt(alpha)(x + ip).
        let alpha = 0.3;
        let level = FockLevel::new(0.2, 16).unwrap();
        let spec = GaussianLindbladSpec::damped(alpha);
        let [x, p] = level.canonical();
        let h = (&x * &x + &p * &p) * c(0.5, 0.0);
        let jump = (&x + &p * c(0.0, 1.0)) * c(alpha.sqrt(), 0.0);
        let jd = jump.adjoint();
        let v = coherent_vector(&level, 0.2, -0.1).unwrap();
        let rho = &v * v.adjoint();
        let apply = |g: &CMat| CMat::from_column_slice(16, 16, (g * CMat::from_column_slice(256, 1, rho.as_slice())).as_slice());
        let anti = |a: &CMat| a * &rho + &rho * a;
        let explicit = linalg::commutator(&h, &rho) * c(0.0, -1.0 / level.hbar)
            + (&jump * &rho * &jd - anti(&(&jd * &jump)) * c(0.5, 0.0)) * c(1.0 / level.hbar, 0.0);
        let gksl = apply(&lindblad_generator(&spec, &level, LindbladForm::Gksl).unwrap());
        assert!(linalg::max_abs(&(&gksl - &explicit)) < 1e-12);
        // Displayed form = GKSL with noise -M plus trace_rate times rho.
        let flipped = GaussianLindbladSpec { a: spec.a, m: [[(-alpha, 0.0), (0.0, alpha)], [(0.0, -alpha), (-alpha, 0.0)]] };
        let reference = apply(&lindblad_generator(&flipped, &level, LindbladForm::Gksl).unwrap()) + &rho * c(spec.trace_rate(), 0.0);
        let literal = apply(&lindblad_generator(&spec, &level, LindbladForm::Literal).unwrap());
        let diff = (literal - reference).view((0, 0), (12, 12)).into_owned();
        assert!(linalg::max_abs(&diff) < 1e-10);
    }

    #[test]
    fn commutator_tends_to_poisson_bracket() {
        let grid = small_grid();
        let bump = GaussianBump { q0: 0.6, p0: 0.3, s: 0.5 };
        let f = bump.on(&grid);
        let target = oscillator_poisson(&grid, &bump.blurred(0.0).on(&grid));
        let errs: Vec<f64> = [(0.4, 32), (0.2, 48), (0.1, 64)]
            .iter()
            .map(|&(h, n)| {
                let table = CoherentTable::new(FockLevel::new(h, n).unwrap(), grid);
                let comm = oscillator_commutator(&table.level, &table.quantize(&f));
                grid.l1_distance(&table.dequantize(&comm), &target)
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }
}
