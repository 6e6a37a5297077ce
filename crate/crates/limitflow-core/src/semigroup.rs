//! Generator nets, semigroups and resolvents, with numeric checkers for the
//! equivalent conditions of the evolution theorem.
//!
//! Generators act on vectorized level elements (column-major), so a net of
//! column vectors is acted on directly and matrix-valued nets are flattened.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::inductive::{
    jconvergence_diagnostic, seminorm_from, tail_start, ConvergenceReport, CoreError, CoreResult,
    ElementNet, SoftSystem,
};
use crate::linalg::{self, c, CMat, C64};
use crate::report::{successive_ratios, Verdict};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub labels: Vec<f64>,
    pub entries: Vec<CMat>,
    pub dissipative: bool,
}

impl GeneratorNet {
    pub fn new(system: &SoftSystem, entries: Vec<CMat>, dissipative: bool) -> CoreResult<Self> {
        if entries.len() != system.len() {
            return Err(CoreError::ChainMismatch);
        }
        for (i, a) in entries.iter().enumerate() {
            let d = system.level(i).dim();
            if a.shape() != (d, d) {
                return Err(CoreError::DimensionMismatch {
                    label: system.chain().label(i),
                    expected: (d, d),
                    got: a.shape(),
                });
            }
        }
        Ok(Self { labels: system.chain().labels().to_vec(), entries, dissipative })
    }

    pub fn zero(system: &SoftSystem) -> Self {
        let entries = system.levels().iter().map(|l| CMat::zeros(l.dim(), l.dim())).collect();
        Self { labels: system.chain().labels().to_vec(), entries, dissipative: true }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            labels: self.labels.clone(),
            entries: self.entries.iter().map(|a| -a).collect(),
            dissipative: false,
        }
    }

    pub fn sum(&self, other: &GeneratorNet) -> Self {
        Self {
            labels: self.labels.clone(),
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
            dissipative: self.dissipative && other.dissipative,
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.entries.iter().map(linalg::op_norm).fold(0.0, f64::max)
    }
}

/// `a` applied to the column-major vectorization of `x`, reshaped back.
pub fn act(a: &CMat, x: &CMat) -> CMat {
    if x.ncols() == 1 {
        return linalg::matmul(a, x);
    }
    let v = CMat::from_column_slice(x.len(), 1, x.as_slice());
    let y = linalg::matmul(a, &v);
    CMat::from_column_slice(x.nrows(), x.ncols(), y.as_slice())
}

fn check_shapes(gen: &GeneratorNet, net: &ElementNet) -> CoreResult<()> {
    if gen.len() != net.len() {
        return Err(CoreError::ChainMismatch);
    }
    for (i, (a, x)) in gen.entries.iter().zip(&net.entries).enumerate() {
        if a.ncols() != x.len() {
            return Err(CoreError::DimensionMismatch {
                label: gen.labels[i],
                expected: (a.ncols(), 1),
                got: x.shape(),
            });
        }
    }
    Ok(())
}

pub fn propagators(gen: &GeneratorNet, t: f64) -> CoreResult<Vec<CMat>> {
    if t < 0.0 {
        return Err(CoreError::NegativeTime(t));
    }
    Ok(gen.entries.par_iter().map(|a| linalg::expm(&(a * c(t, 0.0)))).collect())
}

/// Entrywise `e^{t A_n} x_n`.
pub fn evolve(gen: &GeneratorNet, t: f64, net: &ElementNet) -> CoreResult<ElementNet> {
    check_shapes(gen, net)?;
    let props = propagators(gen, t)?;
    Ok(ElementNet::new(props.iter().zip(&net.entries).map(|(u, x)| act(u, x)).collect()))
}

/// Reversible evolution as two semigroups: negative times run `-A` forward,
/// which is only allowed when `-A` is dissipative too.
pub fn evolve_group(gen: &GeneratorNet, t: f64, net: &ElementNet, tol: f64) -> CoreResult<ElementNet> {
    if t >= 0.0 {
        return evolve(gen, t, net);
    }
    let back = gen.negated();
    let probes = random_probes(&back, 8, 0x67726f7570);
    let rep = dissipativity_margin(&back, &[0.5, 1.0, 2.0], &probes, tol);
    if !rep.pass {
        return Err(CoreError::Refused(format!(
            "backward generator is not dissipative (margin {:.3e})",
            rep.min_margin
        )));
    }
    evolve(&back, -t, net)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventNet {
    pub lambda: C64,
    pub entries: Vec<CMat>,
}

impl ResolventNet {
    /// Largest `||(lambda - A_n) R_n - 1||` over the levels.
    pub fn identity_defect(&self, gen: &GeneratorNet) -> f64 {
        gen.entries
            .iter()
            .zip(&self.entries)
            .map(|(a, r)| {
                let n = a.nrows();
                let shifted = linalg::identity(n) * self.lambda - a;
                linalg::op_norm(&(linalg::matmul(&shifted, r) - linalg::identity(n)))
            })
            .fold(0.0, f64::max)
    }
}

pub fn resolvent(gen: &GeneratorNet, lambda: C64) -> CoreResult<ResolventNet> {
    let entries: Vec<CoreResult<CMat>> = gen
        .entries
        .par_iter()
        .zip(&gen.labels)
        .map(|(a, &label)| {
            let n = a.nrows();
            let shifted = linalg::identity(n) * lambda - a;
            linalg::solve(&shifted, &linalg::identity(n)).map_err(|_| CoreError::Singular(label))
        })
        .collect();
    Ok(ResolventNet { lambda, entries: entries.into_iter().collect::<CoreResult<_>>()? })
}

/// Entrywise `(lambda - A_n)^{-1} x_n` by linear solves.
pub fn resolvent_apply(gen: &GeneratorNet, lambda: C64, net: &ElementNet) -> CoreResult<ElementNet> {
    check_shapes(gen, net)?;
    let out: Vec<CoreResult<CMat>> = gen
        .entries
        .par_iter()
        .zip(&net.entries)
        .zip(&gen.labels)
        .map(|((a, x), &label)| {
            let n = a.nrows();
            let shifted = linalg::identity(n) * lambda - a;
            let v = CMat::from_column_slice(x.len(), 1, x.as_slice());
            let y = linalg::solve(&shifted, &v).map_err(|_| CoreError::Singular(label))?;
            Ok(CMat::from_column_slice(x.nrows(), x.ncols(), y.as_slice()))
        })
        .collect();
    Ok(ElementNet::new(out.into_iter().collect::<CoreResult<_>>()?))
}

/// Seeded unit probes, `count` per level.
pub fn random_probes(gen: &GeneratorNet, count: usize, seed: u64) -> Vec<Vec<CMat>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen.entries
        .iter()
        .map(|a| {
            (0..count)
                .map(|_| {
                    let v = CMat::from_fn(a.ncols(), 1, |_, _| {
                        c(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
                    });
                    let n = linalg::frobenius(&v);
                    v / c(n, 0.0)
                })
                .collect()
        })
        .collect()
}

/// Seeded dissipative matrix: a skew-hermitian part minus a positive part.
pub fn random_dissipative(dim: usize, rng: &mut impl Rng) -> CMat {
    let g = CMat::from_fn(dim, dim, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let h = CMat::from_fn(dim, dim, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let skew = (&g - g.adjoint()) * c(0.5, 0.0);
    let psd = linalg::matmul(&h.adjoint(), &h) * c(1.0 / dim as f64, 0.0);
    skew - psd
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// Per level: `min ||(lambda - A)y|| - lambda ||y||`.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub pass: bool,
}

pub fn dissipativity_margin(
    gen: &GeneratorNet,
    lambdas: &[f64],
    probes: &[Vec<CMat>],
    tol: f64,
) -> MarginReport {
    let margins: Vec<f64> = gen
        .entries
        .iter()
        .zip(probes)
        .map(|(a, ys)| {
            let mut worst = f64::INFINITY;
            for &lambda in lambdas {
                for y in ys {
                    let image = y * c(lambda, 0.0) - linalg::matmul(a, y);
                    worst = worst.min(linalg::frobenius(&image) - lambda * linalg::frobenius(y));
                }
            }
            worst
        })
        .collect();
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    MarginReport { pass: min_margin >= -tol, margins, min_margin }
}

/// Relative residual of `y` against the span of `vectors`.
pub fn span_residual(vectors: &[CMat], y: &CMat) -> f64 {
    let ny = linalg::frobenius(y);
    if ny == 0.0 {
        return 0.0;
    }
    if vectors.is_empty() {
        return 1.0;
    }
    let cols: Vec<CMat> = vectors
        .iter()
        .map(|v| CMat::from_column_slice(v.len(), 1, v.as_slice()))
        .collect();
    let v = CMat::from_columns(&cols.iter().map(|c| c.column(0)).collect::<Vec<_>>());
    let svd = v.svd(true, false);
    let u = svd.u.expect("requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let yv = CMat::from_column_slice(y.len(), 1, y.as_slice());
    let mut r = yv.clone();
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-12 * smax {
            let uk = u.column(k);
            let coeff = uk.dotc(&yv.column(0));
            r -= uk * coeff;
        }
    }
    linalg::frobenius(&r) / ny
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub t_grid: Vec<f64>,
    /// Verdict of every evolved corpus net, indexed `[t][net]`.
    pub evolved_verdicts: Vec<Vec<Verdict>>,
    /// Per corpus net: tail seminorm of `T(t)x - x` along the grid.
    pub continuity: Vec<Vec<f64>>,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// The grid `{1, 1/2, 1/4, 1/8} * t0`.
pub fn time_grid(t0: f64) -> Vec<f64> {
    [1.0, 0.5, 0.25, 0.125].iter().map(|s| s * t0).collect()
}

fn require_convergent(system: &SoftSystem, corpus: &[ElementNet], tol: f64) -> CoreResult<()> {
    for (k, net) in corpus.iter().enumerate() {
        let rep = jconvergence_diagnostic(system, net, tol)?;
        if !rep.is_convergent() {
            return Err(CoreError::Refused(format!("corpus net {k} is not j-convergent")));
        }
    }
    Ok(())
}

/// Condition (1): evolved corpus nets stay convergent and `T(t)x - x` shrinks
/// as `t` runs down the grid.
pub fn check_semigroup_convergence(
    system: &SoftSystem,
    gen: &GeneratorNet,
    t0: f64,
    corpus: &[ElementNet],
    tol: f64,
) -> CoreResult<SemigroupReport> {
    require_convergent(system, corpus, tol)?;
    let t_grid = time_grid(t0);
    let start = tail_start(system.len());
    let mut evolved_verdicts = Vec::new();
    let mut continuity = vec![Vec::new(); corpus.len()];
    for &t in &t_grid {
        let props = propagators(gen, t)?;
        let mut row = Vec::new();
        for (k, net) in corpus.iter().enumerate() {
            check_shapes(gen, net)?;
            let ev = ElementNet::new(props.iter().zip(&net.entries).map(|(u, x)| act(u, x)).collect());
            row.push(jconvergence_diagnostic(system, &ev, tol)?.verdict);
            continuity[k].push(seminorm_from(system, &ev.sub(net), start)?);
        }
        evolved_verdicts.push(row);
    }
    let mut notes = Vec::new();
    let all_conv = evolved_verdicts.iter().flatten().all(|v| v.passed());
    if !all_conv {
        notes.push("some evolved corpus net is not j-convergent".into());
    }
    let continuous = continuity.iter().all(|trail| {
        trail.windows(2).all(|w| w[1] <= w[0] + 1e-14) && trail.last().copied().unwrap_or(0.0) <= trail[0]
    });
    if !continuous {
        notes.push("T(t)x - x does not shrink along the time grid".into());
    }
    Ok(SemigroupReport { t_grid, evolved_verdicts, continuity, pass: all_conv && continuous, notes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventReport {
    pub lambda: (f64, f64),
    pub resolved_verdicts: Vec<Verdict>,
    /// Relative best-approximation residual of each density probe.
    pub residuals: Vec<f64>,
    pub threshold: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Condition (2): resolved corpus nets are convergent and their last entries
/// approximately span the declared limit-side density probes.
pub fn check_resolvent_convergence(
    system: &SoftSystem,
    gen: &GeneratorNet,
    lambda: C64,
    corpus: &[ElementNet],
    density_probes: &[CMat],
    tol: f64,
    threshold: f64,
) -> CoreResult<ResolventReport> {
    require_convergent(system, corpus, tol)?;
    let mut resolved_verdicts = Vec::new();
    let mut images = Vec::new();
    for net in corpus {
        let r = resolvent_apply(gen, lambda, net)?;
        resolved_verdicts.push(jconvergence_diagnostic(system, &r, tol)?.verdict);
        images.push(r.last().clone());
    }
    let residuals: Vec<f64> = density_probes.iter().map(|y| span_residual(&images, y)).collect();
    let mut notes = Vec::new();
    let all_conv = resolved_verdicts.iter().all(|v| v.passed());
    if !all_conv {
        notes.push("some resolved corpus net is not j-convergent".into());
    }
    let dense = residuals.iter().all(|r| *r < threshold);
    if !dense {
        notes.push(format!("density residual above threshold {threshold:e}"));
    }
    if density_probes.is_empty() {
        notes.push("no density probes supplied".into());
    }
    Ok(ResolventReport {
        lambda: (lambda.re, lambda.im),
        resolved_verdicts,
        residuals,
        threshold,
        pass: all_conv && dense && !density_probes.is_empty(),
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreCheckReport {
    /// Per net of `D`: whether both `x` and `A x` are convergent.
    pub in_domain: Vec<bool>,
    pub image_verdicts: Vec<Verdict>,
    pub residuals: Vec<f64>,
    pub threshold: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

fn apply_gen(gen: &GeneratorNet, net: &ElementNet) -> ElementNet {
    ElementNet::new(gen.entries.iter().zip(&net.entries).map(|(a, x)| act(a, x)).collect())
}

/// Condition (3): `D` lies in the net domain and `(lambda - A)D` is dense.
pub fn check_net_core(
    system: &SoftSystem,
    gen: &GeneratorNet,
    lambda: C64,
    domain: &[ElementNet],
    density_probes: &[CMat],
    tol: f64,
    threshold: f64,
) -> CoreResult<CoreCheckReport> {
    let mut notes = Vec::new();
    if domain.is_empty() {
        notes.push("empty core: nothing to make dense".into());
        return Ok(CoreCheckReport {
            in_domain: vec![],
            image_verdicts: vec![],
            residuals: density_probes.iter().map(|_| 1.0).collect(),
            threshold,
            pass: false,
            notes,
        });
    }
    let mut in_domain = Vec::new();
    let mut image_verdicts = Vec::new();
    let mut images = Vec::new();
    for (k, x) in domain.iter().enumerate() {
        check_shapes(gen, x)?;
        let ax = apply_gen(gen, x);
        let ok = jconvergence_diagnostic(system, x, tol)?.is_convergent()
            && jconvergence_diagnostic(system, &ax, tol)?.is_convergent();
        if !ok {
            notes.push(format!("net {k} violates the net domain"));
        }
        in_domain.push(ok);
        let image = x.scale(lambda).sub(&ax);
        image_verdicts.push(jconvergence_diagnostic(system, &image, tol)?.verdict);
        images.push(image.last().clone());
    }
    let residuals: Vec<f64> = density_probes.iter().map(|y| span_residual(&images, y)).collect();
    let pass = in_domain.iter().all(|b| *b)
        && image_verdicts.iter().all(|v| v.passed())
        && residuals.iter().all(|r| *r < threshold);
    Ok(CoreCheckReport { in_domain, image_verdicts, residuals, threshold, pass, notes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellDefinedReport {
    pub image_seminorms: Vec<f64>,
    pub bound: f64,
    pub pass: bool,
}

/// Null nets in the domain must map to null nets.
pub fn well_definedness_probe(
    system: &SoftSystem,
    gen: &GeneratorNet,
    null_corpus: &[ElementNet],
    tol: f64,
) -> CoreResult<WellDefinedReport> {
    let start = tail_start(system.len());
    let mut image_seminorms = Vec::new();
    for x in null_corpus {
        check_shapes(gen, x)?;
        image_seminorms.push(seminorm_from(system, &apply_gen(gen, x), start)?);
    }
    let bound = tol * (1.0 + gen.max_norm());
    Ok(WellDefinedReport { pass: image_seminorms.iter().all(|s| *s < bound), image_seminorms, bound })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrotterReport {
    pub t: f64,
    pub ks: Vec<usize>,
    /// Largest tail seminorm of the product-formula error over the corpus, per k.
    pub errors: Vec<f64>,
    pub ratios: Vec<f64>,
    pub commuting: bool,
    pub pass: bool,
}

pub const TROTTER_RATIO_RANGE: (f64, f64) = (1.5, 2.5);
pub const TROTTER_EXACT: f64 = 1e-10;

/// `[e^{tA/k} e^{tB/k}]^k x - e^{t(A+B)} x` for each `k`.
pub fn trotter_defect(
    system: &SoftSystem,
    gen_t: &GeneratorNet,
    gen_s: &GeneratorNet,
    t: f64,
    ks: &[usize],
    corpus: &[ElementNet],
) -> CoreResult<TrotterReport> {
    if t < 0.0 {
        return Err(CoreError::NegativeTime(t));
    }
    let start = tail_start(system.len());
    let exact = propagators(&gen_t.sum(gen_s), t)?;
    let mut errors = Vec::new();
    for &k in ks {
        let step = t / k as f64;
        let et = propagators(gen_t, step)?;
        let es = propagators(gen_s, step)?;
        let mut worst: f64 = 0.0;
        for net in corpus {
            check_shapes(gen_t, net)?;
            let diff: Vec<CMat> = (0..net.len())
                .into_par_iter()
                .map(|n| {
                    let x = &net.entries[n];
                    let mut y = x.clone();
                    for _ in 0..k {
                        y = act(&et[n], &act(&es[n], &y));
                    }
                    y - act(&exact[n], x)
                })
                .collect();
            worst = worst.max(seminorm_from(system, &ElementNet::new(diff), start)?);
        }
        errors.push(worst);
    }
    let ratios = successive_ratios(&errors);
    let commuting = errors.iter().all(|e| *e < TROTTER_EXACT);
    let (lo, hi) = TROTTER_RATIO_RANGE;
    let pass = commuting || ratios.iter().all(|r| (lo..=hi).contains(r));
    Ok(TrotterReport { t, ks: ks.to_vec(), errors, ratios, commuting, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeBound {
    pub a: f64,
    pub b: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeBoundReport {
    pub per_level: Vec<RelativeBound>,
    pub uniform_a: f64,
    pub pass: bool,
}

/// Smallest `a` with `||Bx|| <= a||Ax|| + b_max||x||` on the samples, then the
/// smallest `b` for that `a`. Samples are `(||Ax||, ||Bx||, ||x||)`.
pub fn fit_relative_bound(samples: &[(f64, f64, f64)], b_max: f64) -> RelativeBound {
    let slack = |v: f64| v.abs() * 1e-12;
    let mut a: f64 = 0.0;
    let mut feasible = true;
    for &(na, nb, nx) in samples {
        let excess = nb - b_max * nx;
        if excess <= slack(nb) {
            continue;
        }
        if na <= slack(nb) {
            feasible = false;
        } else {
            a = a.max(excess / na);
        }
    }
    if !feasible {
        return RelativeBound { a: f64::INFINITY, b: b_max, feasible };
    }
    let b = samples
        .iter()
        .filter(|s| s.2 > 0.0)
        .map(|&(na, nb, nx)| {
            let r = (nb - a * na) / nx;
            if r.abs() <= 1e-12 * (nb / nx).max(1.0) {
                0.0
            } else {
                r
            }
        })
        .fold(0.0, f64::max);
    RelativeBound { a, b, feasible }
}

pub fn relative_bound_fit(
    gen_a: &GeneratorNet,
    gen_b: &GeneratorNet,
    probes: &[Vec<CMat>],
    b_max: f64,
) -> RelativeBoundReport {
    let per_level: Vec<RelativeBound> = gen_a
        .entries
        .iter()
        .zip(&gen_b.entries)
        .zip(probes)
        .map(|((a, b), xs)| {
            let samples: Vec<(f64, f64, f64)> = xs
                .iter()
                .map(|x| {
                    (
                        linalg::frobenius(&act(a, x)),
                        linalg::frobenius(&act(b, x)),
                        linalg::frobenius(x),
                    )
                })
                .collect();
            fit_relative_bound(&samples, b_max)
        })
        .collect();
    relative_report(per_level)
}

pub fn relative_report(per_level: Vec<RelativeBound>) -> RelativeBoundReport {
    let uniform_a = per_level.iter().map(|r| r.a).fold(0.0, f64::max);
    let pass = per_level.iter().all(|r| r.feasible) && uniform_a < 1.0;
    RelativeBoundReport { per_level, uniform_a, pass }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRadius {
    /// `ln |||A^k x|||` for `k = 0..=k_max`; `-inf` once the iterate vanishes.
    pub log_seminorms: Vec<f64>,
    pub infinite: bool,
    /// Ratio-test estimate; `+inf` when `infinite`.
    pub radius: f64,
    /// `1 / max_k (|||A^k x||| / k!)^{1/k}`, a conservative estimate.
    pub lower_bound: f64,
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

/// Ratio test on `|||A^k x||| / k!` with log-domain accumulation.
pub fn analytic_radius(
    system: &SoftSystem,
    gen: &GeneratorNet,
    net: &ElementNet,
    k_max: usize,
) -> CoreResult<AnalyticRadius> {
    analytic_radius_with(system, net, k_max, |y| apply_gen(gen, y))
}

/// As [`analytic_radius`] for an operator net given by its action.
pub fn analytic_radius_with(
    system: &SoftSystem,
    net: &ElementNet,
    k_max: usize,
    apply: impl Fn(&ElementNet) -> ElementNet,
) -> CoreResult<AnalyticRadius> {
    if k_max < 4 {
        return Err(CoreError::Refused("k_max must be at least 4".into()));
    }
    let start = tail_start(system.len());
    let mut logs = Vec::with_capacity(k_max + 1);
    let mut y = net.clone();
    let mut log_scale = 0.0;
    for k in 0..=k_max {
        if k > 0 {
            y = apply(&y);
        }
        let s = seminorm_from(system, &y, start)?;
        if s == 0.0 {
            logs.push(f64::NEG_INFINITY);
            break;
        }
        logs.push(log_scale + s.ln());
        // Renormalize so the iterates never overflow.
        let peak = y.uniform_bound(system);
        y = y.scale(c(1.0 / peak, 0.0));
        log_scale += peak.ln();
    }
    let vanished = logs.last().map(|l| l.is_infinite()).unwrap_or(false);
    let lower_bound = {
        let worst = logs
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, l)| l.is_finite())
            .map(|(k, l)| (l - ln_factorial(k)) / k as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        if worst == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            (-worst).exp()
        }
    };
    if vanished {
        return Ok(AnalyticRadius { log_seminorms: logs, infinite: true, radius: f64::INFINITY, lower_bound });
    }
    // g_k = s_{k+1} / s_k and q_k = g_k / (k + 1).
    let g: Vec<f64> = logs.windows(2).map(|w| (w[1] - w[0]).exp()).collect();
    let q: Vec<f64> = g.iter().enumerate().map(|(k, gk)| gk / (k + 1) as f64).collect();
    let last = g.len() - 1;
    let bounded = g[last] <= 1.5 * g[last - 2];
    let q_decreasing = q[last] < q[last - 2];
    let infinite = bounded && q_decreasing;
    let radius = if infinite { f64::INFINITY } else { 1.0 / q[last] };
    Ok(AnalyticRadius { log_seminorms: logs, infinite, radius, lower_bound })
}

/// `t ||A_n - A|| e^{t max(||A_n||, ||A||)}`.
pub fn uniform_continuity_bound(a_n: &CMat, a: &CMat, t: f64) -> f64 {
    let spread = linalg::op_norm(&(a_n - a));
    t * spread * (t * linalg::op_norm(a_n).max(linalg::op_norm(a))).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    pub net: usize,
    /// `e^{tA_N} x_N` at the last level.
    pub from_semigroup: Vec<(f64, f64)>,
    /// `exp(t(lambda - R_N(lambda)^{-1})) x_N` at the last level.
    pub from_resolvent: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionVerdict {
    pub condition1: SemigroupReport,
    pub condition2: ResolventReport,
    pub condition3: Option<CoreCheckReport>,
    /// Largest distance between the two resolved limit actions.
    pub agreement: f64,
    pub cross_consistent: bool,
    pub samples: Vec<LimitSample>,
}

impl EvolutionVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn any_failed(&self) -> bool {
        !self.condition1.pass || !self.condition2.pass || self.condition3.as_ref().is_some_and(|c| !c.pass)
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionInputs<'a> {
    pub t0: f64,
    pub lambda: C64,
    pub corpus: &'a [ElementNet],
    pub density_probes: &'a [CMat],
    pub core: Option<&'a [ElementNet]>,
    pub tol: f64,
    pub density_threshold: f64,
    pub agreement_tol: f64,
}

fn pairs(x: &CMat) -> Vec<(f64, f64)> {
    x.iter().map(|z| (z.re, z.im)).collect()
}

/// Runs conditions (1), (2) and optionally (3), and compares the limit action
/// recovered from the semigroup with the one recovered from the resolvent.
pub fn evolution_theorem(
    system: &SoftSystem,
    gen: &GeneratorNet,
    inputs: &EvolutionInputs<'_>,
) -> CoreResult<EvolutionVerdict> {
    let tol = inputs.tol;
    let c1 = check_semigroup_convergence(system, gen, inputs.t0, inputs.corpus, tol)?;
    let c2 = check_resolvent_convergence(
        system,
        gen,
        inputs.lambda,
        inputs.corpus,
        inputs.density_probes,
        tol,
        inputs.density_threshold,
    )?;
    let c3 = match inputs.core {
        Some(d) => Some(check_net_core(
            system,
            gen,
            inputs.lambda,
            d,
            inputs.density_probes,
            tol,
            inputs.density_threshold,
        )?),
        None => None,
    };
    let last = gen.len() - 1;
    let a_last = &gen.entries[last];
    let n = a_last.nrows();
    let r_last = resolvent(gen, inputs.lambda)?.entries.swap_remove(last);
    let r_inv = linalg::solve(&r_last, &linalg::identity(n))
        .map_err(|_| CoreError::Singular(gen.labels[last]))?;
    let recovered = linalg::identity(n) * inputs.lambda - r_inv;
    let u_sg = linalg::expm(&(a_last * c(inputs.t0, 0.0)));
    let u_res = linalg::expm(&(recovered * c(inputs.t0, 0.0)));
    let mut agreement: f64 = 0.0;
    let mut samples = Vec::new();
    for (k, net) in inputs.corpus.iter().enumerate() {
        let x = &net.entries[last];
        let a = act(&u_sg, x);
        let b = act(&u_res, x);
        agreement = agreement.max(linalg::frobenius(&(&a - &b)));
        samples.push(LimitSample { net: k, from_semigroup: pairs(&a), from_resolvent: pairs(&b) });
    }
    let cross_consistent = !(c1.pass && c2.pass) || agreement <= inputs.agreement_tol;
    Ok(EvolutionVerdict {
        condition1: c1,
        condition2: c2,
        condition3: c3,
        agreement,
        cross_consistent,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub dim: usize,
    pub levels: usize,
    pub t0: f64,
    pub lambda: f64,
    pub agreement_tol: f64,
    pub density_threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { dim: 16, levels: 40, t0: 1.0, lambda: 1.0, agreement_tol: 1e-8, density_threshold: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub seed: u64,
    /// `A_n = A + 2^{-n} B`.
    pub convergent: EvolutionVerdict,
    /// Per level: `||e^{tA_n} - e^{tA}||` against the uniform-continuity bound.
    pub semigroup_gaps: Vec<(f64, f64)>,
    pub bound_holds: bool,
    /// `A_n = A + (-1)^n B`.
    pub oscillating: EvolutionVerdict,
    pub pass: bool,
}

fn basis_corpus(system: &SoftSystem, dim: usize) -> CoreResult<Vec<ElementNet>> {
    let first = system.chain().label(0);
    (0..dim).map(|k| crate::inductive::make_basic_net(system, first, &linalg::basis(dim, k))).collect()
}

/// Evolution-theorem checkers on a constant system of seeded dissipative
/// generators, once with `A_n -> A` in norm and once with an oscillating net.
pub fn ensemble_experiment(cfg: &EnsembleConfig, seed: u64, tol: f64) -> CoreResult<EnsembleReport> {
    use crate::inductive::{LevelSpace, NormKind, ScaleChain};
    let chain = ScaleChain::integers(1..=cfg.levels as i64)?;
    let system = SoftSystem::constant(chain, LevelSpace::vectors(cfg.dim, NormKind::Hilbert));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_dissipative(cfg.dim, &mut rng);
    let b = random_dissipative(cfg.dim, &mut rng);
    let net = |coef: &dyn Fn(i32) -> f64| -> Vec<CMat> {
        (1..=cfg.levels as i32).map(|n| &a + &b * c(coef(n), 0.0)).collect()
    };
    let conv = GeneratorNet::new(&system, net(&|n| 0.5f64.powi(n)), true)?;
    let osc = GeneratorNet::new(&system, net(&|n| if n % 2 == 0 { 1.0 } else { -1.0 }), false)?;
    let corpus = basis_corpus(&system, cfg.dim)?;
    let probes: Vec<CMat> = random_probes(&conv, 4, seed ^ 0x5eed).swap_remove(0);
    let inputs = EvolutionInputs {
        t0: cfg.t0,
        lambda: c(cfg.lambda, 0.0),
        corpus: &corpus,
        density_probes: &probes,
        core: None,
        tol,
        density_threshold: cfg.density_threshold,
        agreement_tol: cfg.agreement_tol,
    };
    let convergent = evolution_theorem(&system, &conv, &inputs)?;
    let oscillating = evolution_theorem(&system, &osc, &inputs)?;
    let limit = linalg::expm(&(&a * c(cfg.t0, 0.0)));
    let semigroup_gaps: Vec<(f64, f64)> = conv
        .entries
        .iter()
        .map(|a_n| {
            let gap = linalg::op_norm(&(linalg::expm(&(a_n * c(cfg.t0, 0.0))) - &limit));
            (gap, uniform_continuity_bound(a_n, &a, cfg.t0))
        })
        .collect();
    let bound_holds = semigroup_gaps.iter().all(|(gap, bound)| *gap <= bound * (1.0 + 1e-9) + 1e-14);
    let pass = convergent.condition1.pass
        && convergent.condition2.pass
        && convergent.agreement <= cfg.agreement_tol
        && bound_holds
        && oscillating.any_failed();
    Ok(EnsembleReport { seed, convergent, semigroup_gaps, bound_holds, oscillating, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrotterConfig {
    pub dim: usize,
    pub levels: usize,
    pub t: f64,
    pub ks: Vec<usize>,
    pub probes: usize,
}

impl Default for TrotterConfig {
    fn default() -> Self {
        Self { dim: 16, levels: 4, t: 1.0, ks: vec![8, 16, 32, 64], probes: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrotterExperiment {
    pub seed: u64,
    /// `A` against `A/2 - 3/10`, which commutes with it.
    pub commuting: TrotterReport,
    pub seeded: TrotterReport,
    pub pass: bool,
}

/// Product-formula errors for a commuting pair and a seeded non-commuting pair.
pub fn trotter_experiment(cfg: &TrotterConfig, seed: u64) -> CoreResult<TrotterExperiment> {
    use crate::inductive::{make_basic_net, LevelSpace, NormKind, ScaleChain};
    let chain = ScaleChain::integers(1..=cfg.levels as i64)?;
    let system = SoftSystem::constant(chain, LevelSpace::vectors(cfg.dim, NormKind::Hilbert));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_dissipative(cfg.dim, &mut rng);
    let b = random_dissipative(cfg.dim, &mut rng);
    let fixed = |m: &CMat| GeneratorNet::new(&system, vec![m.clone(); cfg.levels], true);
    let gen_a = fixed(&a)?;
    let partner = &a * c(0.5, 0.0) - linalg::identity(cfg.dim) * c(0.3, 0.0);
    let first = system.chain().label(0);
    let corpus: Vec<ElementNet> = random_probes(&gen_a, cfg.probes, seed ^ 0x7207)
        .swap_remove(0)
        .iter()
        .map(|x| make_basic_net(&system, first, x))
        .collect::<CoreResult<_>>()?;
    let commuting = trotter_defect(&system, &gen_a, &fixed(&partner)?, cfg.t, &cfg.ks, &corpus)?;
    let seeded = trotter_defect(&system, &gen_a, &fixed(&b)?, cfg.t, &cfg.ks, &corpus)?;
    let (lo, hi) = TROTTER_RATIO_RANGE;
    let pass = commuting.commuting
        && !seeded.commuting
        && !seeded.ratios.is_empty()
        && seeded.ratios.iter().all(|r| (lo..=hi).contains(r));
    Ok(TrotterExperiment { seed, commuting, seeded, pass })
}

/// Re-export for callers building reports from semigroup outputs.
pub fn diagnose(system: &SoftSystem, net: &ElementNet, tol: f64) -> CoreResult<ConvergenceReport> {
    jconvergence_diagnostic(system, net, tol)
}
