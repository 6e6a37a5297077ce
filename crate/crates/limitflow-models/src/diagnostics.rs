//! Structural checks of the strict systems: spin-chain embeddings and wavelet
//! isometries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use limitflow_core::inductive::{jconvergence_diagnostic, make_basic_net};
use limitflow_core::linalg::{self, c, CMat};
use limitflow_core::{CoreError, CoreResult};

use crate::fermion_rg::{wavelet_check, DyadicLattice, FilterChoice, WaveletCheck};
use crate::spin_chain::CubeChain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub cube_lengths: Vec<usize>,
    /// Seeded hermitian observables drawn at each of the two smallest cubes.
    pub observables: usize,
    pub wavelet_filters: Vec<FilterChoice>,
    pub wavelet_scales: Vec<usize>,
    pub tol: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            cube_lengths: CubeChain::default_chain().lengths,
            observables: 2,
            wavelet_filters: vec![FilterChoice::Haar, FilterChoice::D4],
            wavelet_scales: vec![2, 3, 4, 5],
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCheck {
    pub lengths: Vec<usize>,
    /// `max | ||j x|| - ||x|| |` in operator norm.
    pub isometry_defect: f64,
    /// `max |tr((j x)^* j y)/2^n - tr(x^* y)/2^m|`.
    pub inner_product_defect: f64,
    /// `max |j_{nm} j_{ml} x - j_{nl} x|`.
    pub transitivity_defect: f64,
    /// Largest entry of the defect tables of basic nets started at the smallest cube.
    pub basic_net_defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub seed: u64,
    pub spin: EmbeddingCheck,
    pub wavelets: Vec<WaveletCheck>,
    pub pass: bool,
}

fn random_hermitian(dim: usize, rng: &mut impl Rng) -> CMat {
    let g = CMat::from_fn(dim, dim, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    (&g + g.adjoint()) * c(0.5, 0.0)
}

fn normalized_inner(x: &CMat, y: &CMat) -> f64 {
    let s: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a.conj() * b).re).sum();
    s / x.nrows() as f64
}

pub fn embedding_check(lengths: &[usize], observables: usize, seed: u64, tol: f64) -> CoreResult<EmbeddingCheck> {
    let chain = CubeChain::new(lengths.to_vec())?;
    let system = chain.system()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut iso, mut inner, mut trans, mut basic): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for m in 0..2.min(system.len() - 1) {
        let dim = system.level(m).shape().0;
        let xs: Vec<CMat> = (0..observables.max(2)).map(|_| random_hermitian(dim, &mut rng)).collect();
        for (k, x) in xs.iter().enumerate() {
            let y = &xs[(k + 1) % xs.len()];
            let norm = linalg::op_norm_hermitian(x);
            let ip = normalized_inner(x, y);
            for n in m + 1..system.len() {
                let jx = system.connect(n, m, x);
                iso = iso.max((linalg::op_norm_hermitian(&jx) - norm).abs());
                inner = inner.max((normalized_inner(&jx, &system.connect(n, m, y)) - ip).abs());
                for l in m + 1..n {
                    let two = system.connect(n, l, &system.connect(l, m, x));
                    trans = trans.max(linalg::max_abs(&(two - &jx)));
                }
            }
            if m == 0 {
                let net = make_basic_net(&system, system.chain().label(0), x)?;
                let rep = jconvergence_diagnostic(&system, &net, tol)?;
                basic = rep.defects.iter().map(|d| d.value).fold(basic, f64::max);
            }
        }
    }
    if !system.is_strict() {
        return Err(CoreError::Refused("cube chain is not strict".into()));
    }
    Ok(EmbeddingCheck {
        lengths: lengths.to_vec(),
        isometry_defect: iso,
        inner_product_defect: inner,
        transitivity_defect: trans,
        basic_net_defect: basic,
        pass: iso <= tol && inner <= tol && trans <= tol && basic == 0.0,
    })
}

pub fn diagnostics_experiment(cfg: &DiagnosticsConfig, seed: u64) -> CoreResult<DiagnosticsReport> {
    let spin = embedding_check(&cfg.cube_lengths, cfg.observables, seed, cfg.tol)?;
    let wavelets = cfg
        .wavelet_filters
        .iter()
        .map(|f| wavelet_check(&f.resolve()?, DyadicLattice::standard(0), &cfg.wavelet_scales, cfg.tol))
        .collect::<CoreResult<Vec<_>>>()?;
    let pass = spin.pass && wavelets.iter().all(|w| w.pass && w.basic_net_defect == 0.0);
    Ok(DiagnosticsReport { seed, spin, wavelets, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_of_small_cubes_are_exact() {
        let rep = embedding_check(&[2, 4, 6], 2, 1, 1e-12).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.transitivity_defect, 0.0);
        assert_eq!(rep.basic_net_defect, 0.0);
    }

    #[test]
    fn normalized_inner_product_of_identity_is_one() {
        let one = linalg::identity(8);
        assert_eq!(normalized_inner(&one, &one), 1.0);
        let padded = crate::spin_chain::embed(&one, 3, 7);
        assert_eq!(normalized_inner(&padded, &padded), 1.0);
    }
}
