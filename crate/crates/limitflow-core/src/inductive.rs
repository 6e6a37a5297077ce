//! Soft inductive systems over finite scale chains.
//!
//! A system assigns a finite-dimensional normed space to every label of a
//! [`ScaleChain`] and a contraction `j_nm` to every ordered pair `m <= n`.
//! Nets carry one element per label. The diagnostics estimate limits along the
//! chain by tail maxima, and the verdicts only look at trends.
//!
//! Labels are addressed by their position in the chain. Positions grow toward
//! the limit regardless of whether the labels themselves grow or shrink.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, c, CMat, C64};
use crate::report::{LabelValue, Tolerances, Verdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("a scale chain needs at least 3 labels, got {0}")]
    ChainTooShort(usize),
    #[error("labels must be strictly ordered in the direction of the limit")]
    NotOrdered,
    #[error("label {0} is not in the chain")]
    LabelNotInChain(f64),
    #[error("dimension mismatch at label {label}: expected {expected:?}, got {got:?}")]
    DimensionMismatch { label: f64, expected: (usize, usize), got: (usize, usize) },
    #[error("the level at label {0} carries no algebra structure")]
    AlgebraMissing(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("the systems live on different chains")]
    ChainMismatch,
    #[error("singular solve at label {0}")]
    Singular(f64),
    #[error("negative time {0}; only forward evolution is modelled")]
    NegativeTime(f64),
    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),
}

pub type CoreResult<T> = Result<T, CoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The limit is `label -> infinity`.
    ToInfinity,
    /// The limit is `label -> 0`.
    ToZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleChain {
    labels: Vec<f64>,
    direction: Direction,
}

impl ScaleChain {
    pub fn new(labels: Vec<f64>, direction: Direction) -> CoreResult<Self> {
        if labels.len() < 3 {
            return Err(CoreError::ChainTooShort(labels.len()));
        }
        let ordered = labels.windows(2).all(|w| match direction {
            Direction::ToInfinity => w[0] < w[1],
            Direction::ToZero => w[0] > w[1],
        });
        if !ordered {
            return Err(CoreError::NotOrdered);
        }
        Ok(Self { labels, direction })
    }

    pub fn integers(range: impl IntoIterator<Item = i64>) -> CoreResult<Self> {
        Self::new(range.into_iter().map(|n| n as f64).collect(), Direction::ToInfinity)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, idx: usize) -> f64 {
        self.labels[idx]
    }

    pub fn index_of(&self, label: f64) -> CoreResult<usize> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .ok_or(CoreError::LabelNotInChain(label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormKind {
    Hilbert,
    Trace,
    Operator,
    GridSup,
    /// Riemann-sum L1 norm with the given cell area.
    GridL1 { cell: f64 },
}

impl NormKind {
    pub fn eval(&self, x: &CMat) -> f64 {
        match self {
            NormKind::Hilbert => linalg::frobenius(x),
            NormKind::Trace => linalg::trace_norm(x),
            NormKind::Operator => linalg::op_norm(x),
            NormKind::GridSup => linalg::max_abs(x),
            NormKind::GridL1 { cell } => cell * x.iter().map(|z| z.norm()).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpace {
    pub rows: usize,
    pub cols: usize,
    pub norm: NormKind,
    pub algebra: bool,
}

impl LevelSpace {
    pub fn vectors(dim: usize, norm: NormKind) -> Self {
        Self { rows: dim, cols: 1, norm, algebra: false }
    }

    pub fn matrices(dim: usize, norm: NormKind, algebra: bool) -> Self {
        Self { rows: dim, cols: dim, norm, algebra }
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn norm(&self, x: &CMat) -> f64 {
        self.norm.eval(x)
    }

    pub fn zero(&self) -> CMat {
        CMat::zeros(self.rows, self.cols)
    }

    pub fn unit(&self) -> Option<CMat> {
        (self.algebra && self.rows == self.cols).then(|| linalg::identity(self.rows))
    }

    /// The `k`-th matrix unit in column-major order.
    pub fn basis_element(&self, k: usize) -> CMat {
        let mut e = self.zero();
        e[(k % self.rows, k / self.rows)] = c(1.0, 0.0);
        e
    }
}

/// `rule(n, m, x)` evaluates `j_nm x` for chain positions `n > m`.
pub type MapRule = Arc<dyn Fn(usize, usize, &CMat) -> CMat + Send + Sync>;

#[derive(Clone)]
pub struct SoftSystem {
    chain: ScaleChain,
    levels: Vec<LevelSpace>,
    rule: MapRule,
    strict: bool,
}

impl fmt::Debug for SoftSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SoftSystem")
            .field("chain", &self.chain)
            .field("levels", &self.levels)
            .field("strict", &self.strict)
            .finish()
    }
}

impl SoftSystem {
    pub fn from_rule(
        chain: ScaleChain,
        levels: Vec<LevelSpace>,
        rule: MapRule,
        strict: bool,
    ) -> CoreResult<Self> {
        if levels.len() != chain.len() {
            return Err(CoreError::ChainMismatch);
        }
        Ok(Self { chain, levels, rule, strict })
    }

    /// A strict system generated by single-step maps `step(k, x) = j_{k+1,k} x`.
    pub fn from_steps(
        chain: ScaleChain,
        levels: Vec<LevelSpace>,
        step: impl Fn(usize, &CMat) -> CMat + Send + Sync + 'static,
    ) -> CoreResult<Self> {
        let rule: MapRule = Arc::new(move |n, m, x| {
            let mut y = x.clone();
            for k in m..n {
                y = step(k, &y);
            }
            y
        });
        Self::from_rule(chain, levels, rule, true)
    }

    /// A strict system with single-step matrices acting on column vectors.
    pub fn from_step_matrices(
        chain: ScaleChain,
        levels: Vec<LevelSpace>,
        steps: Vec<CMat>,
    ) -> CoreResult<Self> {
        if steps.len() + 1 != chain.len() {
            return Err(CoreError::ChainMismatch);
        }
        Self::from_steps(chain, levels, move |k, x| linalg::matmul(&steps[k], x))
    }

    /// Every level equal, every connecting map the identity.
    pub fn constant(chain: ScaleChain, level: LevelSpace) -> Self {
        let levels = vec![level; chain.len()];
        let rule: MapRule = Arc::new(|_, _, x| x.clone());
        Self { chain, levels, rule, strict: true }
    }

    pub fn chain(&self) -> &ScaleChain {
        &self.chain
    }

    pub fn levels(&self) -> &[LevelSpace] {
        &self.levels
    }

    pub fn level(&self, idx: usize) -> &LevelSpace {
        &self.levels[idx]
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn len(&self) -> usize {
        self.chain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain.is_empty()
    }

    /// `j_nm x`: identity on the diagonal and zero when `n` precedes `m`.
    pub fn connect(&self, n: usize, m: usize, x: &CMat) -> CMat {
        match n.cmp(&m) {
            std::cmp::Ordering::Equal => x.clone(),
            std::cmp::Ordering::Less => self.levels[n].zero(),
            std::cmp::Ordering::Greater => (self.rule)(n, m, x),
        }
    }

    pub fn check_element(&self, idx: usize, x: &CMat) -> CoreResult<()> {
        let lvl = &self.levels[idx];
        if x.shape() != lvl.shape() {
            return Err(CoreError::DimensionMismatch {
                label: self.chain.label(idx),
                expected: lvl.shape(),
                got: x.shape(),
            });
        }
        Ok(())
    }

    pub fn check_net(&self, net: &ElementNet) -> CoreResult<()> {
        if net.len() != self.len() {
            return Err(CoreError::ChainMismatch);
        }
        for (i, x) in net.entries.iter().enumerate() {
            self.check_element(i, x)?;
        }
        Ok(())
    }

    /// Dense matrix of `j_nm` on vectorized elements (column-major).
    pub fn map_matrix(&self, n: usize, m: usize) -> CMat {
        let src = &self.levels[m];
        let dst = &self.levels[n];
        let mut out = CMat::zeros(dst.dim(), src.dim());
        for k in 0..src.dim() {
            let y = self.connect(n, m, &src.basis_element(k));
            for (r, z) in y.iter().enumerate() {
                out[(r, k)] = *z;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementNet {
    pub entries: Vec<CMat>,
}

impl ElementNet {
    pub fn new(entries: Vec<CMat>) -> Self {
        Self { entries }
    }

    pub fn zeros(system: &SoftSystem) -> Self {
        Self::new(system.levels().iter().map(|l| l.zero()).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norms(&self, system: &SoftSystem) -> Vec<f64> {
        self.entries.iter().enumerate().map(|(i, x)| system.level(i).norm(x)).collect()
    }

    pub fn uniform_bound(&self, system: &SoftSystem) -> f64 {
        self.norms(system).into_iter().fold(0.0, f64::max)
    }

    pub fn add(&self, other: &ElementNet) -> ElementNet {
        ElementNet::new(self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &ElementNet) -> ElementNet {
        ElementNet::new(self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: C64) -> ElementNet {
        ElementNet::new(self.entries.iter().map(|a| a * s).collect())
    }

    pub fn map(&self, f: impl Fn(usize, &CMat) -> CMat) -> ElementNet {
        ElementNet::new(self.entries.iter().enumerate().map(|(i, x)| f(i, x)).collect())
    }

    pub fn last(&self) -> &CMat {
        self.entries.last().expect("nets are never empty")
    }
}

/// One covector per label, paired with elements by `sum_ij phi_ij x_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalNet {
    pub entries: Vec<CMat>,
}

impl FunctionalNet {
    pub fn new(entries: Vec<CMat>) -> Self {
        Self { entries }
    }

    pub fn pair(phi: &CMat, x: &CMat) -> C64 {
        phi.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn uniform_bound(&self) -> f64 {
        // Dual of the Hilbert norm; for other norms this is a proxy.
        self.entries.iter().map(linalg::frobenius).fold(0.0, f64::max)
    }
}

/// `j_{•m} x`: zero before `m`, `j_nm x` from `m` on.
pub fn make_basic_net(system: &SoftSystem, m_label: f64, x: &CMat) -> CoreResult<ElementNet> {
    let m = system.chain().index_of(m_label)?;
    system.check_element(m, x)?;
    Ok(ElementNet::new((0..system.len()).map(|n| system.connect(n, m, x)).collect()))
}

/// Truncated lim-sup: the largest norm from `tail_start` on.
pub fn seminorm(system: &SoftSystem, net: &ElementNet, tail_start: f64) -> CoreResult<f64> {
    let start = system.chain().index_of(tail_start)?;
    seminorm_from(system, net, start)
}

pub fn seminorm_from(system: &SoftSystem, net: &ElementNet, start: usize) -> CoreResult<f64> {
    if start >= net.len() {
        return Err(CoreError::Refused("empty tail".into()));
    }
    Ok(net.entries[start..]
        .iter()
        .enumerate()
        .map(|(k, x)| system.level(start + k).norm(x))
        .fold(0.0, f64::max))
}

/// Position where the reported tail starts: the last three labels.
pub fn tail_start(len: usize) -> usize {
    len.saturating_sub(3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectEntry {
    pub m: f64,
    pub n: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub labels: Vec<f64>,
    pub defects: Vec<DefectEntry>,
    /// `m -> max_{n > m} defect(m, n)`.
    pub dhat: Vec<LabelValue>,
    pub seminorm_estimate: f64,
    pub norm_trail: Vec<LabelValue>,
    pub verdict: Verdict,
    pub tolerances: Tolerances,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_csv(&self) -> String {
        crate::report::defects_csv(&self.defects)
    }

    pub fn dhat_values(&self) -> Vec<f64> {
        self.dhat.iter().map(|lv| lv.value).collect()
    }

    pub fn last_dhat(&self) -> f64 {
        self.dhat.last().map(|lv| lv.value).unwrap_or(0.0)
    }

    pub fn is_convergent(&self) -> bool {
        self.verdict == Verdict::Convergent
    }
}

/// Trend rule shared by all tail diagnostics.
///
/// Convergent: the last value is below `tol` and the final three values do not
/// increase. Divergent: the last value is at least `tol` and the final three
/// values do not decrease by more than `tol`. Anything else is inconclusive.
pub fn trend_verdict(values: &[f64], tol: f64) -> Verdict {
    let Some(&last) = values.last() else {
        return Verdict::Inconclusive;
    };
    let tail = &values[values.len().saturating_sub(3)..];
    let slack = |a: f64| a.abs() * 1e-12 + 1e-300;
    let non_increasing = tail.windows(2).all(|w| w[1] <= w[0] + slack(w[0]));
    let no_decay = tail.windows(2).all(|w| w[1] + tol >= w[0]);
    if last < tol && non_increasing {
        Verdict::Convergent
    } else if last >= tol && no_decay {
        Verdict::Divergent
    } else {
        Verdict::Inconclusive
    }
}

/// Defect table `||x_n - j_nm x_m||` over all `m < n` with the trend verdict.
pub fn jconvergence_diagnostic(
    system: &SoftSystem,
    net: &ElementNet,
    tol: f64,
) -> CoreResult<ConvergenceReport> {
    system.check_net(net)?;
    let len = system.len();
    let pairs: Vec<(usize, usize)> =
        (0..len).flat_map(|m| (m + 1..len).map(move |n| (m, n))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(m, n)| {
            let image = system.connect(n, m, &net.entries[m]);
            system.level(n).norm(&(&net.entries[n] - image))
        })
        .collect();
    let labels = system.chain().labels().to_vec();
    let defects: Vec<DefectEntry> = pairs
        .iter()
        .zip(&values)
        .map(|(&(m, n), &value)| DefectEntry { m: labels[m], n: labels[n], value })
        .collect();
    let dhat: Vec<LabelValue> = (0..len - 1)
        .map(|m| {
            let value = pairs
                .iter()
                .zip(&values)
                .filter(|((mm, _), _)| *mm == m)
                .map(|(_, v)| *v)
                .fold(0.0, f64::max);
            LabelValue { label: labels[m], value }
        })
        .collect();
    let norms = net.norms(system);
    let norm_trail =
        labels.iter().zip(&norms).map(|(&label, &value)| LabelValue { label, value }).collect();
    let dvals: Vec<f64> = dhat.iter().map(|lv| lv.value).collect();
    Ok(ConvergenceReport {
        seminorm_estimate: seminorm_from(system, net, tail_start(len))?,
        verdict: trend_verdict(&dvals, tol),
        labels,
        defects,
        dhat,
        norm_trail,
        tolerances: Tolerances { exact: crate::report::EXACT_TOL, trend: tol },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleEntry {
    pub l: f64,
    pub m: f64,
    pub n: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleReport {
    pub entries: Vec<TripleEntry>,
    /// One verdict per probe.
    pub probe_verdicts: Vec<Verdict>,
    pub verdict: Verdict,
    pub tolerance: f64,
}

impl TripleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn max_value(&self) -> f64 {
        self.entries.iter().map(|e| e.value).fold(0.0, f64::max)
    }
}

fn triple_verdict(rows: &[(usize, usize, f64)], tol: f64, strict: bool) -> Verdict {
    if rows.is_empty() {
        return Verdict::Inconclusive;
    }
    let max = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    if strict || max <= tol * 1e-6 {
        return if max <= tol { Verdict::Convergent } else { Verdict::Divergent };
    }
    let tail = rows.iter().max_by_key(|r| (r.0, r.1)).map(|r| r.2).unwrap_or(0.0);
    let min = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    if tail <= min && tail < tol {
        Verdict::Convergent
    } else if tail <= min {
        Verdict::Inconclusive
    } else {
        Verdict::Divergent
    }
}

/// `||(j_nl - j_nm j_ml) x_l||` for every probe and every `l < m < n`.
///
/// A probe passes when its tail entry (largest `m`, then largest `n`) is the
/// smallest in its row and lies below `tol`; for strict systems every entry must
/// lie below `tol`.
pub fn soft_transitivity_defect(
    system: &SoftSystem,
    probes: &[(f64, CMat)],
    tol: f64,
) -> CoreResult<TripleReport> {
    let len = system.len();
    let labels = system.chain().labels();
    let mut entries = Vec::new();
    let mut probe_verdicts = Vec::new();
    for (label, x) in probes {
        let l = system.chain().index_of(*label)?;
        system.check_element(l, x)?;
        let direct: Vec<CMat> = (0..len).map(|n| system.connect(n, l, x)).collect();
        let triples: Vec<(usize, usize)> =
            (l + 1..len).flat_map(|m| (m + 1..len).map(move |n| (m, n))).collect();
        let rows: Vec<(usize, usize, f64)> = triples
            .par_iter()
            .map(|&(m, n)| {
                let two_step = system.connect(n, m, &direct[m]);
                (m, n, system.level(n).norm(&(&direct[n] - two_step)))
            })
            .collect();
        probe_verdicts.push(triple_verdict(&rows, tol, system.is_strict()));
        entries.extend(rows.iter().map(|&(m, n, value)| TripleEntry {
            l: labels[l],
            m: labels[m],
            n: labels[n],
            value,
        }));
    }
    Ok(TripleReport { entries, verdict: combine(&probe_verdicts), probe_verdicts, tolerance: tol })
}

pub fn combine(verdicts: &[Verdict]) -> Verdict {
    if verdicts.iter().any(|v| *v == Verdict::Divergent) {
        Verdict::Divergent
    } else if !verdicts.is_empty() && verdicts.iter().all(|v| *v == Verdict::Convergent) {
        Verdict::Convergent
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    /// `(m, n, lambda_nm)` for `m < n`.
    pub entries: Vec<DefectEntry>,
    pub method: String,
    pub verdict: Verdict,
}

impl IsometryReport {
    pub fn min_lambda(&self) -> f64 {
        self.entries.iter().map(|e| e.value).fold(f64::INFINITY, f64::min)
    }
}

/// Number of quasi-random probe directions for non-Hilbert norms.
pub const PROBE_SPHERE_POINTS: usize = 200;
const PROBE_SPHERE_SEED: u64 = 0x6c66_7072_6f62;

fn probe_sphere(level: &LevelSpace, count: usize, seed: u64) -> Vec<CMat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = CMat::from_fn(level.rows, level.cols, |_, _| {
                c(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
            });
            let nrm = level.norm(&x);
            x / c(nrm, 0.0)
        })
        .collect()
}

/// `lambda_nm = inf_{||x|| = 1} ||j_nm x||` for all `m < n`.
///
/// Hilbert levels use the smallest singular value of the map matrix; trace and
/// operator levels minimize over a deterministic probe sphere.
pub fn asymptotic_isometry_defect(system: &SoftSystem, tol: f64) -> CoreResult<IsometryReport> {
    let len = system.len();
    let labels = system.chain().labels();
    let mut entries = Vec::new();
    let mut method = "smallest-singular-value";
    for m in 0..len {
        for n in m + 1..len {
            let (src, dst) = (system.level(m), system.level(n));
            let lambda = match (src.norm, dst.norm) {
                (NormKind::Hilbert, NormKind::Hilbert) => {
                    let mat = system.map_matrix(n, m);
                    if mat.nrows() < mat.ncols() {
                        0.0
                    } else {
                        linalg::singular_values(&mat).into_iter().fold(f64::INFINITY, f64::min)
                    }
                }
                (NormKind::Trace | NormKind::Operator, NormKind::Trace | NormKind::Operator) => {
                    method = "probe-sphere";
                    probe_sphere(src, PROBE_SPHERE_POINTS, PROBE_SPHERE_SEED)
                        .iter()
                        .map(|x| dst.norm(&system.connect(n, m, x)))
                        .fold(f64::INFINITY, f64::min)
                }
                (a, b) => {
                    return Err(CoreError::Unsupported(format!(
                        "no minimizer for the unit sphere of {a:?} -> {b:?}"
                    )))
                }
            };
            entries.push(DefectEntry { m: labels[m], n: labels[n], value: lambda });
        }
    }
    let gaps: Vec<f64> = (0..len - 1)
        .map(|m| {
            entries
                .iter()
                .filter(|e| e.m == labels[m])
                .map(|e| 1.0 - e.value)
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(IsometryReport { entries, method: method.into(), verdict: trend_verdict(&gaps, tol) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTrail {
    pub labels: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    /// `m -> max_{n > m} |s_n - s_m|`.
    pub increments: Vec<f64>,
    pub verdict: Verdict,
}

impl ScalarTrail {
    pub fn last(&self) -> C64 {
        c(*self.re.last().unwrap_or(&0.0), *self.im.last().unwrap_or(&0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JStarReport {
    pub trails: Vec<ScalarTrail>,
    /// Per `m`: how far `phi_n o j_nm` still moves along the tail, when the level
    /// is small enough to tabulate.
    pub weak_star: Vec<Option<f64>>,
    pub verdict: Verdict,
}

const WEAK_STAR_MAX_DIM: usize = 256;

fn cauchy_increments(values: &[C64]) -> Vec<f64> {
    (0..values.len() - 1)
        .map(|m| values[m + 1..].iter().map(|v| (v - values[m]).norm()).fold(0.0, f64::max))
        .collect()
}

/// Scalar trails `n -> <x_n, phi_n>` for j-convergent probe nets.
pub fn jstar_diagnostic(
    system: &SoftSystem,
    fnet: &FunctionalNet,
    probe_nets: &[ElementNet],
    tol: f64,
) -> CoreResult<JStarReport> {
    if fnet.entries.len() != system.len() {
        return Err(CoreError::ChainMismatch);
    }
    let mut trails = Vec::new();
    for (k, net) in probe_nets.iter().enumerate() {
        let rep = jconvergence_diagnostic(system, net, tol)?;
        if !rep.is_convergent() {
            return Err(CoreError::Refused(format!(
                "probe net {k} is not j-convergent (verdict {:?})",
                rep.verdict
            )));
        }
        let values: Vec<C64> =
            fnet.entries.iter().zip(&net.entries).map(|(p, x)| FunctionalNet::pair(p, x)).collect();
        let increments = cauchy_increments(&values);
        trails.push(ScalarTrail {
            labels: system.chain().labels().to_vec(),
            re: values.iter().map(|v| v.re).collect(),
            im: values.iter().map(|v| v.im).collect(),
            verdict: trend_verdict(&increments, tol),
            increments,
        });
    }
    let len = system.len();
    let weak_star = (0..len - 1)
        .map(|m| {
            let dim = system.level(m).dim();
            (dim <= WEAK_STAR_MAX_DIM).then(|| {
                let pulled: Vec<Vec<C64>> = (m..len)
                    .map(|n| {
                        (0..dim)
                            .map(|b| {
                                let e = system.level(m).basis_element(b);
                                FunctionalNet::pair(&fnet.entries[n], &system.connect(n, m, &e))
                            })
                            .collect()
                    })
                    .collect();
                let last = pulled.last().expect("non-empty");
                pulled
                    .iter()
                    .map(|p| p.iter().zip(last).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            })
        })
        .collect();
    let verdict = combine(&trails.iter().map(|t| t.verdict).collect::<Vec<_>>());
    Ok(JStarReport { trails, weak_star, verdict })
}

fn require_algebra(system: &SoftSystem) -> CoreResult<()> {
    for (i, l) in system.levels().iter().enumerate() {
        if !l.algebra {
            return Err(CoreError::AlgebraMissing(system.chain().label(i)));
        }
    }
    Ok(())
}

pub fn net_product(system: &SoftSystem, a: &ElementNet, b: &ElementNet) -> CoreResult<ElementNet> {
    require_algebra(system)?;
    system.check_net(a)?;
    system.check_net(b)?;
    Ok(ElementNet::new(a.entries.iter().zip(&b.entries).map(|(x, y)| linalg::matmul(x, y)).collect()))
}

pub fn net_adjoint(system: &SoftSystem, a: &ElementNet) -> CoreResult<ElementNet> {
    require_algebra(system)?;
    system.check_net(a)?;
    Ok(a.map(|_, x| x.adjoint()))
}

pub fn unit_net(system: &SoftSystem) -> CoreResult<ElementNet> {
    require_algebra(system)?;
    Ok(ElementNet::new(system.levels().iter().map(|l| l.unit().expect("algebra level")).collect()))
}

/// `||j_nm((j_ml a)(j_ml b)) - (j_nl a)(j_nl b)||` over `l < m < n`.
pub fn multiplicativity_defect(
    system: &SoftSystem,
    probes: &[(f64, CMat, CMat)],
    tol: f64,
) -> CoreResult<TripleReport> {
    require_algebra(system)?;
    let len = system.len();
    let labels = system.chain().labels();
    let mut entries = Vec::new();
    let mut probe_verdicts = Vec::new();
    for (label, a, b) in probes {
        let l = system.chain().index_of(*label)?;
        system.check_element(l, a)?;
        system.check_element(l, b)?;
        let prods: Vec<CMat> = (0..len)
            .map(|n| linalg::matmul(&system.connect(n, l, a), &system.connect(n, l, b)))
            .collect();
        let triples: Vec<(usize, usize)> =
            (l + 1..len).flat_map(|m| (m + 1..len).map(move |n| (m, n))).collect();
        let rows: Vec<(usize, usize, f64)> = triples
            .par_iter()
            .map(|&(m, n)| {
                let pushed = system.connect(n, m, &prods[m]);
                (m, n, system.level(n).norm(&(pushed - &prods[n])))
            })
            .collect();
        let per_m: Vec<f64> = (l + 1..len - 1)
            .map(|m| rows.iter().filter(|r| r.0 == m).map(|r| r.2).fold(0.0, f64::max))
            .collect();
        let all_tiny = rows.iter().all(|r| r.2 <= tol);
        probe_verdicts.push(if all_tiny { Verdict::Convergent } else { trend_verdict(&per_m, tol) });
        entries.extend(rows.iter().map(|&(m, n, value)| TripleEntry {
            l: labels[l],
            m: labels[m],
            n: labels[n],
            value,
        }));
    }
    Ok(TripleReport { entries, verdict: combine(&probe_verdicts), probe_verdicts, tolerance: tol })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraReport {
    /// Eigenvalues per level as `(re, im)` pairs.
    pub spectra: Vec<Vec<(f64, f64)>>,
    /// Largest distance from a point of the last spectrum to the earlier spectra.
    pub envelope_defect: f64,
    pub envelope_ok: bool,
    pub min_eigenvalue: Option<f64>,
    pub positive: bool,
    pub functional_calculus: Option<FunctionalCalculusCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalCalculusCheck {
    pub coefficients: Vec<f64>,
    pub verdict: Verdict,
    /// `||f(a_last) - f(a)_last||`, zero up to rounding for polynomials.
    pub last_entry_defect: f64,
}

fn eigenvalues(a: &CMat) -> Vec<C64> {
    if linalg::is_hermitian(a, 1e-12 * (1.0 + linalg::max_abs(a))) {
        return linalg::eigvalsh(a).into_iter().map(|x| c(x, 0.0)).collect();
    }
    a.clone()
        .schur()
        .eigenvalues()
        .map(|v| v.iter().copied().collect())
        .unwrap_or_default()
}

pub fn polynomial(a: &CMat, coefficients: &[f64]) -> CMat {
    // Horner scheme, coefficients from the constant term up.
    let n = a.nrows();
    let mut acc = CMat::zeros(n, n);
    for &co in coefficients.iter().rev() {
        acc = linalg::matmul(&acc, a) + linalg::identity(n) * c(co, 0.0);
    }
    acc
}

/// Spectra, spectral envelope, positivity and an optional polynomial calculus check.
pub fn algebra_diagnostics(
    system: &SoftSystem,
    net: &ElementNet,
    poly: Option<&[f64]>,
    tol: f64,
) -> CoreResult<AlgebraReport> {
    for (i, x) in net.entries.iter().enumerate() {
        if x.nrows() != x.ncols() {
            return Err(CoreError::DimensionMismatch {
                label: system.chain().label(i),
                expected: (x.nrows(), x.nrows()),
                got: x.shape(),
            });
        }
    }
    let spectra: Vec<Vec<C64>> = net.entries.iter().map(eigenvalues).collect();
    let (last, earlier) = spectra.split_last().expect("nets are never empty");
    let envelope_defect = last
        .iter()
        .map(|z| earlier.iter().flatten().map(|w| (z - w).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let hermitian = net.entries.iter().all(|x| linalg::is_hermitian(x, 1e-12 * (1.0 + linalg::max_abs(x))));
    let min_eigenvalue = hermitian.then(|| {
        spectra.iter().flatten().map(|z| z.re).fold(f64::INFINITY, f64::min)
    });
    let functional_calculus = match poly {
        Some(co) => {
            let fnet = net.map(|_, x| polynomial(x, co));
            let rep = jconvergence_diagnostic(system, &fnet, tol)?;
            let direct = polynomial(net.last(), co);
            Some(FunctionalCalculusCheck {
                coefficients: co.to_vec(),
                verdict: rep.verdict,
                last_entry_defect: linalg::frobenius(&(direct - fnet.last())),
            })
        }
        None => None,
    };
    Ok(AlgebraReport {
        spectra: spectra.iter().map(|s| s.iter().map(|z| (z.re, z.im)).collect()).collect(),
        envelope_ok: envelope_defect <= tol,
        envelope_defect,
        positive: min_eigenvalue.map(|m| m >= -tol).unwrap_or(false),
        min_eigenvalue,
        functional_calculus,
    })
}

pub type LevelMap = Arc<dyn Fn(&CMat) -> CMat + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCheck {
    /// Per label: largest `||i_n p_n y - y||` over the limit-side probes.
    pub defects: Vec<LabelValue>,
    pub verdict: Verdict,
}

/// The system `j_nm = p_n o i_m` built from level-to-limit embeddings `i` and
/// limit-to-level compressions `p`.
///
/// Refused unless `i_n o p_n` approaches the identity on the limit-side probes.
pub fn split_system(
    chain: ScaleChain,
    levels: Vec<LevelSpace>,
    limit_level: LevelSpace,
    i_maps: Vec<LevelMap>,
    p_maps: Vec<LevelMap>,
    limit_probes: &[CMat],
    tol: f64,
) -> CoreResult<(SoftSystem, SplitCheck)> {
    if i_maps.len() != chain.len() || p_maps.len() != chain.len() || levels.len() != chain.len() {
        return Err(CoreError::ChainMismatch);
    }
    let defects: Vec<LabelValue> = (0..chain.len())
        .map(|n| {
            let value = limit_probes
                .iter()
                .map(|y| limit_level.norm(&(i_maps[n](&p_maps[n](y)) - y)))
                .fold(0.0, f64::max);
            LabelValue { label: chain.label(n), value }
        })
        .collect();
    let values: Vec<f64> = defects.iter().map(|d| d.value).collect();
    let decreasing = values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-14);
    let verdict = if values.last().copied().unwrap_or(0.0) < tol && decreasing {
        Verdict::Convergent
    } else if decreasing {
        Verdict::Inconclusive
    } else {
        Verdict::Divergent
    };
    let check = SplitCheck { defects, verdict };
    if !decreasing {
        return Err(CoreError::Refused(format!(
            "i o p defect does not decrease along the chain: {values:?}"
        )));
    }
    let strict = false;
    let rule: MapRule = Arc::new(move |n, m, x| p_maps[n](&i_maps[m](x)));
    Ok((SoftSystem::from_rule(chain, levels, rule, strict)?, check))
}

/// Levels are Kronecker products and maps are Kronecker products of maps.
pub fn tensor_system(a: &SoftSystem, b: &SoftSystem) -> CoreResult<SoftSystem> {
    if a.chain() != b.chain() {
        return Err(CoreError::ChainMismatch);
    }
    let mut levels = Vec::new();
    for (la, lb) in a.levels().iter().zip(b.levels()) {
        if la.norm != lb.norm {
            return Err(CoreError::Unsupported(format!(
                "tensor of {:?} and {:?} levels",
                la.norm, lb.norm
            )));
        }
        let vector = la.cols == 1 && lb.cols == 1;
        let square = la.rows == la.cols && lb.rows == lb.cols;
        if !vector && !square {
            return Err(CoreError::Unsupported("mixed vector/matrix tensor levels".into()));
        }
        levels.push(LevelSpace {
            rows: la.rows * lb.rows,
            cols: la.cols * lb.cols,
            norm: la.norm,
            algebra: la.algebra && lb.algebra,
        });
    }
    let (sa, sb) = (a.clone(), b.clone());
    let la: Vec<LevelSpace> = a.levels().to_vec();
    let lb: Vec<LevelSpace> = b.levels().to_vec();
    let rule: MapRule = Arc::new(move |n, m, x| {
        let (am, bm) = (&la[m], &lb[m]);
        let (an, bn) = (&la[n], &lb[n]);
        if am.cols == 1 {
            // x = vec of the am.rows x bm.rows coefficient matrix X (row-major).
            let mut out = CMat::zeros(an.rows * bn.rows, 1);
            let bimg: Vec<CMat> =
                (0..bm.rows).map(|q| sb.connect(n, m, &bm.basis_element(q))).collect();
            for p in 0..am.rows {
                let mut row = CMat::zeros(bn.rows, 1);
                for (q, img) in bimg.iter().enumerate() {
                    let coeff = x[(p * bm.rows + q, 0)];
                    if coeff != c(0.0, 0.0) {
                        row += img * coeff;
                    }
                }
                if row.iter().all(|z| *z == c(0.0, 0.0)) {
                    continue;
                }
                out += linalg::kron(&sa.connect(n, m, &am.basis_element(p)), &row);
            }
            out
        } else {
            // x = sum_{pq} x^{pq} (x) E_pq with blocks taken along the second factor.
            let db = bm.rows;
            let da = am.rows;
            let mut out = CMat::zeros(an.rows * bn.rows, an.cols * bn.cols);
            for p in 0..db {
                for q in 0..db {
                    let block = CMat::from_fn(da, da, |i, j| x[(i * db + p, j * db + q)]);
                    if block.iter().all(|z| *z == c(0.0, 0.0)) {
                        continue;
                    }
                    let mut e = CMat::zeros(db, db);
                    e[(p, q)] = c(1.0, 0.0);
                    out += linalg::kron(&sa.connect(n, m, &block), &sb.connect(n, m, &e));
                }
            }
            out
        }
    });
    SoftSystem::from_rule(a.chain().clone(), levels, rule, a.is_strict() && b.is_strict())
}

/// Entrywise Kronecker product of two nets.
pub fn tensor_net(x: &ElementNet, y: &ElementNet) -> ElementNet {
    ElementNet::new(x.entries.iter().zip(&y.entries).map(|(a, b)| linalg::kron(a, b)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// Tail defect of every basic net of one family diagnosed under the other.
    pub cross_defects: Vec<f64>,
    pub cross_pass: bool,
    /// Whether each test net receives the same verdict under both families.
    pub agreement: Vec<bool>,
}

/// Compares two map families on one chain via cross-basic defects and verdicts.
pub fn equivalence_of_maps(
    first: &SoftSystem,
    second: &SoftSystem,
    probes: &[(f64, CMat)],
    test_nets: &[ElementNet],
    tol: f64,
) -> CoreResult<EquivalenceReport> {
    if first.chain() != second.chain() {
        return Err(CoreError::ChainMismatch);
    }
    let mut cross_defects = Vec::new();
    let mut cross_pass = true;
    for (label, x) in probes {
        for (gen, diag) in [(first, second), (second, first)] {
            let rep = jconvergence_diagnostic(diag, &make_basic_net(gen, *label, x)?, tol)?;
            cross_defects.push(rep.last_dhat());
            cross_pass &= rep.is_convergent();
        }
    }
    let agreement = test_nets
        .iter()
        .map(|net| {
            let a = jconvergence_diagnostic(first, net, tol)?.verdict;
            let b = jconvergence_diagnostic(second, net, tol)?.verdict;
            Ok(a == b)
        })
        .collect::<CoreResult<Vec<bool>>>()?;
    Ok(EquivalenceReport { cross_defects, cross_pass, agreement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{basis, col};

    fn chain(n: usize) -> ScaleChain {
        ScaleChain::integers(1..=n as i64).unwrap()
    }

    fn constant(n: usize, dim: usize) -> SoftSystem {
        SoftSystem::constant(chain(n), LevelSpace::vectors(dim, NormKind::Hilbert))
    }

    #[test]
    fn chain_validation() {
        assert_eq!(ScaleChain::integers(0..2), Err(CoreError::ChainTooShort(2)));
        assert_eq!(
            ScaleChain::new(vec![1.0, 3.0, 2.0], Direction::ToInfinity),
            Err(CoreError::NotOrdered)
        );
        assert!(ScaleChain::new(vec![0.4, 0.2, 0.1], Direction::ToZero).is_ok());
        assert!(ScaleChain::new(vec![0.1, 0.2, 0.4], Direction::ToZero).is_err());
    }

    #[test]
    fn connect_identity_and_zero_conventions() {
        let steps = vec![CMat::from_element(2, 1, c(1.0, 0.0)) * c(0.5, 0.0); 1];
        let levels = vec![LevelSpace::vectors(1, NormKind::Hilbert), LevelSpace::vectors(2, NormKind::Hilbert), LevelSpace::vectors(2, NormKind::Hilbert)];
        let mut st = steps;
        st.push(linalg::identity(2));
        let sys = SoftSystem::from_step_matrices(chain(3), levels, st).unwrap();
        let x = col(&[c(2.0, 0.0)]);
        assert_eq!(sys.connect(0, 0, &x), x);
        assert_eq!(sys.connect(0, 1, &col(&[c(1.0, 0.0), c(1.0, 0.0)])), CMat::zeros(1, 1));
    }

    #[test]
    fn basic_net_in_constant_system_is_constant() {
        let sys = constant(6, 3);
        let x = col(&[c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 0.5)]);
        let net = make_basic_net(&sys, 3.0, &x).unwrap();
        assert_eq!(net.entries[0], CMat::zeros(3, 1));
        assert_eq!(net.entries[1], CMat::zeros(3, 1));
        for n in 2..6 {
            assert_eq!(net.entries[n], x);
        }
    }

    #[test]
    fn basic_net_errors() {
        let sys = constant(4, 2);
        assert_eq!(
            make_basic_net(&sys, 9.0, &basis(2, 0)),
            Err(CoreError::LabelNotInChain(9.0))
        );
        assert!(matches!(
            make_basic_net(&sys, 1.0, &basis(3, 0)),
            Err(CoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seminorm_examples() {
        let sys = constant(8, 1);
        let null = ElementNet::zeros(&sys);
        assert_eq!(seminorm(&sys, &null, 1.0).unwrap(), 0.0);
        let x = col(&[c(3.0, 4.0)]);
        let constant_net = make_basic_net(&sys, 1.0, &x).unwrap();
        assert_eq!(seminorm(&sys, &constant_net, 2.0).unwrap(), 5.0);
        // ||x_n|| = 1 + 2^-n; tail from n = 5.
        let decaying = ElementNet::new((1..=8).map(|n| col(&[c(1.0 + 0.5f64.powi(n), 0.0)])).collect());
        assert_eq!(seminorm(&sys, &decaying, 5.0).unwrap(), 1.0 + 0.5f64.powi(5));
    }

    #[test]
    fn basic_nets_in_strict_systems_have_zero_defects() {
        let steps: Vec<CMat> = (0..5)
            .map(|k| {
                let mut m = CMat::zeros(k + 2, k + 1);
                for i in 0..=k {
                    m[(i, i)] = c(0.8, 0.1 * i as f64);
                    m[(i + 1, i)] = c(0.3, 0.0);
                }
                m
            })
            .collect();
        let levels = (1..=6).map(|d| LevelSpace::vectors(d, NormKind::Hilbert)).collect();
        let sys = SoftSystem::from_step_matrices(chain(6), levels, steps).unwrap();
        let x = col(&[c(0.3, 0.0), c(-1.0, 0.2)]);
        let net = make_basic_net(&sys, 2.0, &x).unwrap();
        let rep = jconvergence_diagnostic(&sys, &net, 1e-2).unwrap();
        for e in rep.defects.iter().filter(|e| e.m >= 2.0) {
            assert_eq!(e.value, 0.0);
        }
        assert_eq!(rep.verdict, Verdict::Convergent);
    }

    #[test]
    fn alternating_net_is_divergent() {
        let sys = constant(8, 2);
        let e = col(&[c(0.6, 0.0), c(0.0, 0.8)]);
        let net = ElementNet::new((1..=8).map(|n| &e * c(1.0 + (-1f64).powi(n), 0.0)).collect());
        let rep = jconvergence_diagnostic(&sys, &net, 1e-2).unwrap();
        for d in rep.dhat_values() {
            assert!((d - 2.0).abs() < 1e-15);
        }
        assert_eq!(rep.verdict, Verdict::Divergent);
    }

    #[test]
    fn null_net_does_not_change_report() {
        let sys = constant(8, 2);
        let y = ElementNet::new((1..=8).map(|n| col(&[c(1.0 + 0.5f64.powi(n), 0.0), c(0.5, 0.0)])).collect());
        let null = ElementNet::new((1..=8).map(|n| col(&[c(0.0, 1e-6 * 0.5f64.powi(n)), c(0.0, 0.0)])).collect());
        let r_null = jconvergence_diagnostic(&sys, &null, 1e-2).unwrap();
        assert!(r_null.is_convergent() && r_null.seminorm_estimate < 1e-2);
        let r_y = jconvergence_diagnostic(&sys, &y, 1e-2).unwrap();
        let r_sum = jconvergence_diagnostic(&sys, &y.add(&null), 1e-2).unwrap();
        assert_eq!(r_y.verdict, r_sum.verdict);
        assert!((r_y.seminorm_estimate - r_sum.seminorm_estimate).abs() < 1e-2);
    }

    #[test]
    fn norm_trail_is_cauchy_for_convergent_nets() {
        let sys = constant(8, 1);
        let net = ElementNet::new((1..=8).map(|n| col(&[c(2.0 - 0.5f64.powi(n), 0.0)])).collect());
        let rep = jconvergence_diagnostic(&sys, &net, 1e-1).unwrap();
        assert!(rep.is_convergent());
        let norms: Vec<f64> = rep.norm_trail.iter().map(|lv| lv.value).collect();
        let dhat = rep.dhat_values();
        for m in 0..norms.len() - 1 {
            for n in m + 1..norms.len() {
                assert!((norms[n] - norms[m]).abs() <= dhat[m] + 1e-12);
            }
        }
    }

    #[test]
    fn contraction_does_not_raise_seminorm() {
        let sys = constant(6, 2);
        let contraction = CMat::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.2, 0.0), c(0.0, 0.0), c(0.9, 0.0)]);
        let net = ElementNet::new((1..=6).map(|n| col(&[c(1.0, 0.0), c(n as f64 * 0.1, 0.0)])).collect());
        let image = net.map(|_, x| &contraction * x);
        assert!(linalg::op_norm(&contraction) <= 1.0);
        let s0 = seminorm_from(&sys, &net, 3).unwrap();
        let s1 = seminorm_from(&sys, &image, 3).unwrap();
        assert!(s1 <= s0 + 1e-12);
    }

    #[test]
    fn report_serialization() {
        let sys = constant(4, 1);
        let net = make_basic_net(&sys, 1.0, &col(&[c(1.0, 0.0)])).unwrap();
        let rep = jconvergence_diagnostic(&sys, &net, 1e-2).unwrap();
        let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(json["verdict"], "convergent");
        assert_eq!(json["defects"].as_array().unwrap().len(), 6);
        assert!(json["defects"][0].get("m").is_some());
        assert_eq!(json["tolerances"]["trend"], 1e-2);
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("m,n,value"));
    }

    #[test]
    fn strict_soft_transitivity_is_zero() {
        let sys = constant(5, 2);
        let rep = soft_transitivity_defect(&sys, &[(1.0, basis(2, 1))], 1e-8).unwrap();
        assert!(rep.entries.iter().all(|e| e.value == 0.0));
        assert_eq!(rep.verdict, Verdict::Convergent);
    }

    #[test]
    fn isometry_of_zero_map_and_identity() {
        let sys = constant(4, 3);
        let rep = asymptotic_isometry_defect(&sys, 1e-8).unwrap();
        assert!(rep.entries.iter().all(|e| (e.value - 1.0).abs() < 1e-12));
        let levels = vec![LevelSpace::vectors(2, NormKind::Hilbert); 3];
        let zero = SoftSystem::from_rule(chain(3), levels, Arc::new(|_, _, x| x * c(0.0, 0.0)), false).unwrap();
        let rep = asymptotic_isometry_defect(&zero, 1e-8).unwrap();
        assert!(rep.entries.iter().all(|e| e.value == 0.0));
    }

    #[test]
    fn isometry_probe_sphere_and_unsupported() {
        let lvl = LevelSpace::matrices(2, NormKind::Trace, true);
        let sys = SoftSystem::constant(chain(3), lvl);
        let rep = asymptotic_isometry_defect(&sys, 1e-8).unwrap();
        assert_eq!(rep.method, "probe-sphere");
        assert!((rep.min_lambda() - 1.0).abs() < 1e-12);
        let grid = SoftSystem::constant(chain(3), LevelSpace::vectors(4, NormKind::GridSup));
        assert!(matches!(asymptotic_isometry_defect(&grid, 1e-8), Err(CoreError::Unsupported(_))));
    }

    #[test]
    fn jstar_consistent_functional_is_constant() {
        // Strict system R^1 -> R^2 -> R^3 ... by padding with zeros; phi_n = phi_inf o j_inf,n.
        let steps: Vec<CMat> = (1..5)
            .map(|k| CMat::from_fn(k + 1, k, |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }))
            .collect();
        let levels = (1..=5).map(|d| LevelSpace::vectors(d, NormKind::Hilbert)).collect();
        let sys = SoftSystem::from_step_matrices(chain(5), levels, steps).unwrap();
        let phi_inf = [c(1.0, 0.0), c(-2.0, 0.0), c(0.5, 1.0), c(3.0, 0.0), c(0.1, 0.0)];
        let fnet = FunctionalNet::new((1..=5).map(|d| col(&phi_inf[..d])).collect());
        let probe = make_basic_net(&sys, 2.0, &col(&[c(1.0, 0.0), c(1.0, 1.0)])).unwrap();
        let rep = jstar_diagnostic(&sys, &fnet, &[probe], 1e-8).unwrap();
        let t = &rep.trails[0];
        for k in 2..5 {
            assert_eq!(t.re[k], t.re[1]);
            assert_eq!(t.im[k], t.im[1]);
        }
        assert_eq!(rep.verdict, Verdict::Convergent);
        let zero = FunctionalNet::new((1..=5).map(|d| CMat::zeros(d, 1)).collect());
        let probe = make_basic_net(&sys, 1.0, &col(&[c(1.0, 0.0)])).unwrap();
        let rep = jstar_diagnostic(&sys, &zero, &[probe], 1e-8).unwrap();
        assert!(rep.trails[0].re.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn jstar_refuses_divergent_probe() {
        let sys = constant(6, 1);
        let fnet = FunctionalNet::new(vec![col(&[c(1.0, 0.0)]); 6]);
        let bad = ElementNet::new((0..6).map(|n| col(&[c((n % 2) as f64, 0.0)])).collect());
        assert!(matches!(jstar_diagnostic(&sys, &fnet, &[bad], 1e-2), Err(CoreError::Refused(_))));
    }

    #[test]
    fn products_and_adjoints() {
        let lvl = LevelSpace::matrices(2, NormKind::Operator, true);
        let sys = SoftSystem::constant(chain(4), lvl);
        let unit = unit_net(&sys).unwrap();
        assert_eq!(net_product(&sys, &unit, &unit).unwrap(), unit);
        let [s1, _, s3] = linalg::paulis();
        let h = make_basic_net(&sys, 1.0, &(&s1 + &s3)).unwrap();
        assert_eq!(net_adjoint(&sys, &h).unwrap(), h);
        let plain = SoftSystem::constant(chain(4), LevelSpace::matrices(2, NormKind::Operator, false));
        assert_eq!(net_product(&plain, &unit, &unit), Err(CoreError::AlgebraMissing(1.0)));
    }

    #[test]
    fn c_star_identity_on_probes() {
        let lvl = LevelSpace::matrices(3, NormKind::Operator, true);
        for x in probe_sphere(&lvl, 20, 7) {
            let lhs = lvl.norm(&(x.adjoint() * &x));
            let rhs = lvl.norm(&x).powi(2);
            assert!((lhs - rhs).abs() < 1e-10 * rhs.max(1.0));
        }
        assert!((lvl.norm(&lvl.unit().unwrap()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn algebra_diagnostics_examples() {
        let lvl = LevelSpace::matrices(2, NormKind::Operator, true);
        let sys = SoftSystem::constant(ScaleChain::integers(1..=20).unwrap(), lvl);
        let projections = ElementNet::new(vec![CMat::from_diagonal_element(2, 2, c(0.0, 0.0)) + basis(2, 0) * basis(2, 0).transpose(); 20]);
        let rep = algebra_diagnostics(&sys, &projections, None, 1e-8).unwrap();
        assert!(rep.positive);
        assert!(rep.spectra.iter().flatten().all(|z| z.0.abs() < 1e-12 || (z.0 - 1.0).abs() < 1e-12));
        let diag = ElementNet::new(
            (1..=20)
                .map(|n| CMat::from_diagonal(&crate::linalg::CVec::from_vec(vec![c(1.0, 0.0), c(1.0 + 1.0 / n as f64, 0.0)])))
                .collect(),
        );
        let rep = algebra_diagnostics(&sys, &diag, Some(&[0.0, 0.0, 1.0]), 1e-2).unwrap();
        assert!(rep.envelope_ok);
        assert!(rep.spectra.last().unwrap().iter().any(|z| (z.0 - 1.0).abs() < 1e-12));
        let fc = rep.functional_calculus.unwrap();
        assert_eq!(fc.verdict, Verdict::Convergent);
        assert!(fc.last_entry_defect < 1e-14);
    }

    #[test]
    fn split_identity_is_constant_system() {
        let lvl = LevelSpace::vectors(2, NormKind::Hilbert);
        let id: LevelMap = Arc::new(|x: &CMat| x.clone());
        let (sys, check) = split_system(
            chain(4),
            vec![lvl; 4],
            lvl,
            vec![id.clone(); 4],
            vec![id; 4],
            &[basis(2, 0), basis(2, 1)],
            1e-8,
        )
        .unwrap();
        assert_eq!(check.verdict, Verdict::Convergent);
        let rep = soft_transitivity_defect(&sys, &[(1.0, basis(2, 0))], 1e-8).unwrap();
        assert!(rep.entries.iter().all(|e| e.value == 0.0));
    }

    #[test]
    fn split_refuses_growing_defect() {
        let lvl = LevelSpace::vectors(1, NormKind::Hilbert);
        let i: Vec<LevelMap> = (0..4).map(|_| Arc::new(|x: &CMat| x.clone()) as LevelMap).collect();
        let p: Vec<LevelMap> = (0..4)
            .map(|k| Arc::new(move |x: &CMat| x * c(1.0 - 0.1 * k as f64, 0.0)) as LevelMap)
            .collect();
        let res = split_system(chain(4), vec![lvl; 4], lvl, i, p, &[basis(1, 0)], 1e-8);
        assert!(matches!(res, Err(CoreError::Refused(_))));
    }

    #[test]
    fn tensor_with_trivial_system_is_a_copy() {
        let steps: Vec<CMat> = (0..3)
            .map(|_| CMat::from_row_slice(2, 2, &[c(0.6, 0.0), c(0.8, 0.0), c(-0.8, 0.0), c(0.6, 0.0)]))
            .collect();
        let levels = vec![LevelSpace::vectors(2, NormKind::Hilbert); 4];
        let a = SoftSystem::from_step_matrices(chain(4), levels, steps).unwrap();
        let trivial = SoftSystem::constant(chain(4), LevelSpace::vectors(1, NormKind::Hilbert));
        let t = tensor_system(&a, &trivial).unwrap();
        let x = col(&[c(1.0, 0.5), c(-0.3, 0.0)]);
        for n in 0..4 {
            assert!(linalg::frobenius(&(t.connect(n, 0, &x) - a.connect(n, 0, &x))) < 1e-15);
        }
    }

    #[test]
    fn tensor_of_basic_nets_obeys_triangle_bound() {
        let rot = |th: f64| CMat::from_row_slice(2, 2, &[c(th.cos(), 0.0), c(-th.sin(), 0.0), c(th.sin(), 0.0), c(th.cos(), 0.0)]);
        let levels = vec![LevelSpace::vectors(2, NormKind::Hilbert); 5];
        let a = SoftSystem::from_step_matrices(chain(5), levels.clone(), (0..4).map(|k| rot(0.1 * k as f64)).collect()).unwrap();
        let b = SoftSystem::constant(chain(5), LevelSpace::vectors(2, NormKind::Hilbert));
        let t = tensor_system(&a, &b).unwrap();
        let x = make_basic_net(&a, 1.0, &col(&[c(1.0, 0.0), c(0.0, 1.0)])).unwrap();
        // y is a perturbed constant net, so it carries nonzero defects.
        let y = ElementNet::new((1..=5).map(|n| col(&[c(1.0, 0.0), c(0.5f64.powi(n), 0.0)])).collect());
        let rt = jconvergence_diagnostic(&t, &tensor_net(&x, &y), 1e-2).unwrap();
        let rx = jconvergence_diagnostic(&a, &x, 1e-2).unwrap();
        let ry = jconvergence_diagnostic(&b, &y, 1e-2).unwrap();
        let nx = x.norms(&a);
        for (k, e) in rt.defects.iter().enumerate() {
            let (m, n) = (e.m as usize - 1, e.n as usize - 1);
            let bound = nx[n] * ry.defects[k].value
                + rx.defects[k].value * linalg::frobenius(&b.connect(n, m, &y.entries[m]));
            assert!(e.value <= bound + 1e-12);
        }
    }

    #[test]
    fn tensor_of_matrix_levels() {
        let lvl = LevelSpace::matrices(2, NormKind::Operator, true);
        let a = SoftSystem::constant(chain(3), lvl);
        let t = tensor_system(&a, &a).unwrap();
        let [s1, s2, _] = linalg::paulis();
        let x = linalg::kron(&s1, &s2);
        assert_eq!(t.connect(2, 0, &x), x);
        assert!(t.level(0).algebra);
    }

    #[test]
    fn equivalent_families_agree() {
        let sys = constant(6, 2);
        // j'_nm = j_nm + 2^-n perturbation: same notion of convergence.
        let levels = vec![LevelSpace::vectors(2, NormKind::Hilbert); 6];
        let other = SoftSystem::from_rule(
            chain(6),
            levels,
            Arc::new(|n, _, x: &CMat| x * c(1.0 - 0.5f64.powi(n as i32 + 8), 0.0)),
            false,
        )
        .unwrap();
        let nets = vec![
            ElementNet::new((0..6).map(|n| col(&[c(1.0, 0.0), c(0.5f64.powi(3 * n), 0.0)])).collect()),
            ElementNet::new((0..6).map(|n| col(&[c((n % 2) as f64, 0.0), c(0.0, 0.0)])).collect()),
        ];
        let rep = equivalence_of_maps(&sys, &other, &[(1.0, basis(2, 0))], &nets, 1e-2).unwrap();
        assert!(rep.cross_pass);
        assert!(rep.agreement.iter().all(|a| *a));
    }
}
