//! Piecewise-linear dyadic homeomorphisms of `[0, 1]` and their action on Haar
//! coefficient vectors.
//!
//! A vector at scale `n` holds the coefficients of `sum_i xi_i phi_{n,i}` with
//! `phi_{n,i} = 2^{n/2} 1_{[i 2^-n, (i+1) 2^-n)}`. An element whose smallest
//! slope is `2^-s` maps scale `n` to scale `n + s`.

use limitflow_core::linalg::{self, c, CMat};
use limitflow_core::{CoreError, CoreResult};
use serde::{Deserialize, Serialize};

use crate::fermion_rg::{wavelet_isometry, FilterSpec};

/// Deepest dyadic denominator accepted for a breakpoint.
pub const MAX_DEPTH: u32 = 40;
pub const THOMPSON_TOL: f64 = 1e-12;

/// Smallest `d` with `x 2^d` an integer.
pub fn dyadic_depth(x: f64) -> Option<u32> {
    (0..=MAX_DEPTH).find(|&d| (x * 2f64.powi(d as i32)).fract() == 0.0)
}

fn log2_exact(s: f64) -> Option<i32> {
    let e = s.log2().round() as i32;
    (2f64.powi(e) == s).then_some(e)
}

/// Breakpoints `(x_i, f(x_i))` from `(0, 0)` to `(1, 1)`, affine in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThompsonElement {
    points: Vec<(f64, f64)>,
}

impl ThompsonElement {
    pub fn new(points: Vec<(f64, f64)>) -> CoreResult<Self> {
        let refuse = |msg: &str| Err(CoreError::Refused(format!("not a dyadic PL homeomorphism: {msg}")));
        if points.first() != Some(&(0.0, 0.0)) || points.last() != Some(&(1.0, 1.0)) {
            return refuse("must run from (0, 0) to (1, 1)");
        }
        for w in points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if !(x1 > x0 && y1 > y0) {
                return refuse("breakpoints must increase");
            }
            if log2_exact((y1 - y0) / (x1 - x0)).is_none() {
                return refuse("slopes must be powers of two");
            }
        }
        if points.iter().any(|&(x, y)| dyadic_depth(x).is_none() || dyadic_depth(y).is_none()) {
            return refuse("breakpoints must be dyadic rationals");
        }
        Ok(Self { points }.simplified())
    }

    pub fn identity() -> Self {
        Self { points: vec![(0.0, 0.0), (1.0, 1.0)] }
    }

    /// The generator with breakpoints at 1/4 and 1/2 and slopes 2, 1, 1/2.
    pub fn generator_a() -> Self {
        Self { points: vec![(0.0, 0.0), (0.25, 0.5), (0.5, 0.75), (1.0, 1.0)] }
    }

    /// The second generator: identity on `[0, 1/2]`, a rescaled copy of A on `[1/2, 1]`.
    pub fn generator_b() -> Self {
        Self {
            points: vec![(0.0, 0.0), (0.5, 0.5), (0.625, 0.75), (0.75, 0.875), (1.0, 1.0)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn simplified(mut self) -> Self {
        let mut out = vec![self.points[0]];
        for k in 1..self.points.len() {
            let p = self.points[k];
            if let (Some(&prev), Some(&next)) = (out.last(), self.points.get(k + 1)) {
                let s0 = (p.1 - prev.1) / (p.0 - prev.0);
                let s1 = (next.1 - p.1) / (next.0 - p.0);
                if s0 == s1 {
                    continue;
                }
            }
            out.push(p);
        }
        self.points = out;
        self
    }

    pub fn inverse(&self) -> Self {
        Self { points: self.points.iter().map(|&(x, y)| (y, x)).collect() }
    }

    fn piece(&self, x: f64) -> usize {
        let k = self.points.partition_point(|p| p.0 <= x);
        k.clamp(1, self.points.len() - 1) - 1
    }

    pub fn apply(&self, x: f64) -> f64 {
        let k = self.piece(x);
        let ((x0, y0), (x1, y1)) = (self.points[k], self.points[k + 1]);
        y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    }

    /// Exponent `a` of the slope `2^a` on the piece containing `x`.
    pub fn slope_exponent(&self, x: f64) -> i32 {
        let k = self.piece(x);
        let ((x0, y0), (x1, y1)) = (self.points[k], self.points[k + 1]);
        log2_exact((y1 - y0) / (x1 - x0)).expect("validated slopes")
    }

    /// `self o g`.
    pub fn compose(&self, g: &ThompsonElement) -> Self {
        let ginv = g.inverse();
        let mut xs: Vec<f64> = g.points.iter().map(|p| p.0).collect();
        xs.extend(self.points.iter().map(|p| ginv.apply(p.0)));
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        Self { points: xs.into_iter().map(|x| (x, self.apply(g.apply(x)))).collect() }.simplified()
    }

    /// `s = max(0, -min a)`: the action raises the scale by `s`.
    pub fn scale_shift(&self) -> usize {
        self.points
            .windows(2)
            .map(|w| log2_exact((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).expect("validated slopes"))
            .min()
            .map_or(0, |a| (-a).max(0) as usize)
    }

    /// Smallest `n` with every `x_i` on the grid `2^-n` and every `f(x_i)` on
    /// the grid `2^-(n + s)`.
    pub fn resolving_scale(&self) -> usize {
        let s = self.scale_shift();
        self.points
            .iter()
            .map(|&(x, y)| {
                let dx = dyadic_depth(x).expect("validated") as usize;
                let dy = dyadic_depth(y).expect("validated") as usize;
                dx.max(dy.saturating_sub(s))
            })
            .max()
            .unwrap_or(0)
    }
}

/// `(f xi)(x) = |(f^-1)'(x)|^{1/2} xi(f^-1(x))` from scale `n` to scale `n + s`.
pub fn thompson_action(f: &ThompsonElement, n: usize, xi: &CMat) -> CoreResult<(usize, CMat)> {
    let minimal = f.resolving_scale();
    if n < minimal {
        return Err(CoreError::Refused(format!(
            "element not resolvable at scale {n}; minimal resolving scale is {minimal}"
        )));
    }
    if xi.nrows() != 1 << n {
        return Err(CoreError::DimensionMismatch {
            label: n as f64,
            expected: (1 << n, xi.ncols()),
            got: xi.shape(),
        });
    }
    let s = f.scale_shift();
    let out_scale = n + s;
    let cells = 1usize << out_scale;
    let finv = f.inverse();
    let mut out = CMat::zeros(cells, xi.ncols());
    for j in 0..cells {
        let mid = (j as f64 + 0.5) / cells as f64;
        let x = finv.apply(mid);
        let a = f.slope_exponent(x);
        let i = (x * (1usize << n) as f64).floor() as usize;
        let weight = 0.5f64.powf((s as i32 + a) as f64 / 2.0);
        for col in 0..xi.ncols() {
            out[(j, col)] = xi[(i, col)] * weight;
        }
    }
    Ok((out_scale, out))
}

fn lift(x: &CMat, from: usize, to: usize) -> CMat {
    wavelet_isometry(&FilterSpec::haar(), x, to - from, 1)
}

/// Coefficients of the orthogonal projection of `psi` onto scale `n`, by
/// `QUAD` point midpoint quadrature per cell.
pub fn haar_coefficients(psi: impl Fn(f64) -> f64, n: usize) -> CMat {
    const QUAD: usize = 16;
    let cells = 1usize << n;
    let width = 1.0 / cells as f64;
    CMat::from_fn(cells, 1, |i, _| {
        let avg = (0..QUAD)
            .map(|q| psi((i as f64 + (q as f64 + 0.5) / QUAD as f64) * width))
            .sum::<f64>()
            / QUAD as f64;
        c(avg * width.sqrt(), 0.0)
    })
}

/// `n -> ||T_f P_n psi - P_{n+s} (f psi)||` with `f psi` evaluated pointwise.
pub fn continuum_action_defect(
    f: &ThompsonElement,
    psi: impl Fn(f64) -> f64 + Copy,
    scales: &[usize],
) -> CoreResult<Vec<(usize, f64)>> {
    let finv = f.inverse();
    let moved = |x: f64| {
        let y = finv.apply(x);
        2f64.powf(-f.slope_exponent(y) as f64 / 2.0) * psi(y)
    };
    scales
        .iter()
        .map(|&n| {
            let (m, lattice) = thompson_action(f, n, &haar_coefficients(psi, n))?;
            Ok((n, linalg::frobenius(&(lattice - haar_coefficients(&moved, m)))))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementCheck {
    pub name: String,
    pub resolving_scale: usize,
    pub scale: usize,
    /// `max |T^dagger T - 1|` on the basis at `scale`.
    pub isometry_defect: f64,
    /// `||T_{f^-1} T_f - v||` on the basis.
    pub inverse_defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionCheck {
    pub f: String,
    pub g: String,
    pub scale: usize,
    /// `max |T_{f o g} - T_f T_g|` on the basis, compared at a common scale.
    pub defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThompsonReport {
    pub elements: Vec<ElementCheck>,
    pub compositions: Vec<CompositionCheck>,
    /// `f o f^-1` reduces to the identity breakpoint list.
    pub inverse_is_identity: bool,
    /// Values of `T_A 1` on `[0, 1/2)`, `[1/2, 3/4)` and `[3/4, 1)`.
    pub constant_image: [f64; 3],
    /// `n -> ||T_A P_n psi - P_{n+1}(A psi)||` for a smooth `psi`.
    pub continuum_defects: Vec<(usize, f64)>,
    pub pass: bool,
}

pub fn check_element(name: &str, f: &ThompsonElement, n: usize) -> CoreResult<ElementCheck> {
    let basis = linalg::identity(1 << n);
    let (m, t) = thompson_action(f, n, &basis)?;
    let isometry_defect =
        linalg::max_abs(&(linalg::matmul(&t.adjoint(), &t) - linalg::identity(1 << n)));
    let (back_scale, back) = thompson_action(&f.inverse(), m, &t)?;
    let inverse_defect = linalg::max_abs(&(back - lift(&basis, n, back_scale)));
    Ok(ElementCheck {
        name: name.into(),
        resolving_scale: f.resolving_scale(),
        scale: n,
        isometry_defect,
        inverse_defect,
        pass: isometry_defect <= THOMPSON_TOL && inverse_defect <= THOMPSON_TOL,
    })
}

pub fn check_composition(
    (fname, f): (&str, &ThompsonElement),
    (gname, g): (&str, &ThompsonElement),
    n: usize,
) -> CoreResult<CompositionCheck> {
    let basis = linalg::identity(1 << n);
    let (gs, tg) = thompson_action(g, n, &basis)?;
    let (fgs, tftg) = thompson_action(f, gs, &tg)?;
    let (cs, tc) = thompson_action(&f.compose(g), n, &basis)?;
    let defect = linalg::max_abs(&(lift(&tc, cs, fgs) - tftg));
    Ok(CompositionCheck {
        f: fname.into(),
        g: gname.into(),
        scale: n,
        defect,
        pass: defect <= THOMPSON_TOL,
    })
}

/// Unitarity, inverses and composition for the generators, their inverses and
/// a product, each checked at its minimal resolving scale plus `offset` scales.
pub fn thompson_experiment(offset: usize) -> CoreResult<ThompsonReport> {
    let a = ThompsonElement::generator_a();
    let b = ThompsonElement::generator_b();
    let named = vec![
        ("id", ThompsonElement::identity()),
        ("A", a.clone()),
        ("A^-1", a.inverse()),
        ("B", b.clone()),
        ("B^-1", b.inverse()),
        ("AB", a.compose(&b)),
        ("A^-1 B A", a.inverse().compose(&b).compose(&a)),
    ];
    let mut elements = Vec::new();
    for (name, f) in &named {
        for n in [f.resolving_scale(), f.resolving_scale() + offset] {
            elements.push(check_element(name, f, n)?);
        }
    }
    let mut compositions = Vec::new();
    for (fname, f) in &named {
        for (gname, g) in &named {
            let n = f.resolving_scale().max(g.resolving_scale()).max(f.compose(g).resolving_scale());
            compositions.push(check_composition((fname, f), (gname, g), n)?);
        }
    }
    let inverse_is_identity = named
        .iter()
        .all(|(_, f)| f.compose(&f.inverse()) == ThompsonElement::identity());
    let n = a.resolving_scale();
    let ones = CMat::from_element(1 << n, 1, c(0.5f64.powf(n as f64 / 2.0), 0.0));
    let (m, image) = thompson_action(&a, n, &ones)?;
    let value = |x: f64| {
        let cell = (x * (1usize << m) as f64) as usize;
        image[(cell, 0)].re * 2f64.powf(m as f64 / 2.0)
    };
    let constant_image = [value(0.25), value(0.625), value(0.875)];
    let psi = |x: f64| (std::f64::consts::TAU * x).sin() + x * x;
    let continuum_defects = continuum_action_defect(&a, psi, &[n, n + 1, n + 2, n + 3, n + 4])?;
    let pass = elements.iter().all(|e| e.pass)
        && compositions.iter().all(|c| c.pass)
        && inverse_is_identity;
    Ok(ThompsonReport {
        elements,
        compositions,
        inverse_is_identity,
        constant_image,
        continuum_defects,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_acts_trivially() {
        let xi = CMat::from_fn(8, 1, |r, _| c(r as f64, 1.0));
        let (m, y) = thompson_action(&ThompsonElement::identity(), 3, &xi).unwrap();
        assert_eq!(m, 3);
        assert_eq!(y, xi);
    }

    #[test]
    fn generator_a_rescales_the_constant_function() {
        // T_A 1 = |(A^-1)'|^{1/2}: 2^{-1/2} on [0, 1/2), 1 on [1/2, 3/4), 2^{1/2} on [3/4, 1).
        let r = thompson_experiment(1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [h, 1.0, 2f64.sqrt()];
        for (v, e) in r.constant_image.iter().zip(expected) {
            assert!((v - e).abs() < 1e-15, "{v} vs {e}");
        }
        // Norm: 1/2 * 1/2 + 1/4 * 1 + 1/4 * 2 = 1.
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn resolving_scales_are_minimal() {
        let a = ThompsonElement::generator_a();
        assert_eq!(a.scale_shift(), 1);
        assert_eq!(a.resolving_scale(), 2);
        assert_eq!(ThompsonElement::generator_b().resolving_scale(), 3);
        assert_eq!(ThompsonElement::identity().resolving_scale(), 0);
        let err = thompson_action(&a, 1, &CMat::zeros(2, 1)).unwrap_err();
        assert!(err.to_string().contains("minimal resolving scale is 2"), "{err}");
    }

    #[test]
    fn composition_and_inverse_are_exact_on_breakpoints() {
        let a = ThompsonElement::generator_a();
        assert_eq!(a.compose(&a.inverse()), ThompsonElement::identity());
        let aa = a.compose(&a);
        for x in [0.0, 0.1, 0.25, 0.3, 0.6, 0.9, 1.0] {
            assert_eq!(aa.apply(x), a.apply(a.apply(x)));
        }
    }

    #[test]
    fn lattice_action_approaches_the_continuum_action() {
        let a = ThompsonElement::generator_a();
        let psi = |x: f64| (std::f64::consts::TAU * x).sin() + x * x;
        let d = continuum_action_defect(&a, psi, &[3, 4, 5, 6, 7]).unwrap();
        for w in d.windows(2) {
            let ratio = w[0].1 / w[1].1;
            assert!((1.6..2.4).contains(&ratio), "{d:?}");
        }
        // Constant functions are reproduced exactly: both sides equal |(A^-1)'|^{1/2}.
        let d = continuum_action_defect(&a, |_| 1.0, &[2, 3]).unwrap();
        assert!(d.iter().all(|&(_, v)| v < 1e-14), "{d:?}");
    }

    #[test]
    fn invalid_elements_are_refused() {
        assert!(ThompsonElement::new(vec![(0.0, 0.0), (0.5, 0.25 * 3.0), (1.0, 1.0)]).is_err());
        assert!(ThompsonElement::new(vec![(0.0, 0.0), (1.0, 0.5)]).is_err());
        let ok = ThompsonElement::new(vec![(0.0, 0.0), (0.25, 0.5), (0.5, 0.75), (1.0, 1.0)]);
        assert_eq!(ok.unwrap(), ThompsonElement::generator_a());
    }
}
