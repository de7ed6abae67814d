//! Affine Grassmannians `X_{k,d}` as orbits in projective space. The group
//! `GL_d(R) ⋉ R^d` acts on `u ⊕ R = R^{d+1}` by `(l, u)·(w, s) = (l w + s u, s)`;
//! its `(k+1)`-th exterior power preserves `W = ∧^{k+1} u`, and the affine
//! subspace `u₀ + x` is the line through `(x, 1) ∧ e_1 ∧ … ∧ e_k`.
//!
//! Coordinates on `∧^{k+1}(u ⊕ R)` list the wedge basis elements not
//! involving the extra direction first, so `W` is a coordinate block.

use rand_distr::StandardNormal;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::{split_point, BundleState};
use crate::ensemble::{realify_c2, restrict_to_invariant, sl2c_atoms, BlockSystem, MatrixEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{binomial, is_invertible, proj_normalize, wedge_basis, wedge_power, Matrix, ProjPoint, Subspace, Vector};
use crate::lyapunov::{spectrum, top_exponent};
use crate::measures::{tightness_diagnostic, uniqueness_probe, TightnessReport, Trend, UniquenessReport};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HomogeneousSpace {
    u_dim: usize,
    k: usize,
    /// Wedge basis subsets of `{0, …, d}` in coordinate order.
    order: Vec<Vec<usize>>,
    w_dim: usize,
}

impl HomogeneousSpace {
    pub fn new(u_dim: usize, k: usize) -> Result<Self> {
        if u_dim == 0 || k >= u_dim {
            return Err(Error::arg(format!("need 0 ≤ k < d, got k = {k}, d = {u_dim}")));
        }
        let all = wedge_basis(u_dim + 1, k + 1);
        let (mut order, rest): (Vec<_>, Vec<_>) = all.into_iter().partition(|s| !s.contains(&u_dim));
        let w_dim = order.len();
        order.extend(rest);
        Ok(HomogeneousSpace { u_dim, k, order, w_dim })
    }

    pub fn u_dim(&self) -> usize {
        self.u_dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn v_dim(&self) -> usize {
        self.order.len()
    }

    pub fn w_dim(&self) -> usize {
        self.w_dim
    }

    pub fn w_subspace(&self) -> Subspace {
        Subspace::coordinate(self.v_dim(), &(0..self.w_dim).collect::<Vec<_>>())
    }

    pub fn block_system(&self) -> Result<BlockSystem> {
        Ok(BlockSystem::coordinate(self.v_dim(), self.w_dim)?.with_block_tol(0.0))
    }

    /// Coordinate of `e_{i_0} ∧ … ∧ e_{i_k}` for a sorted index set.
    pub fn index_of(&self, subset: &[usize]) -> Option<usize> {
        self.order.iter().position(|s| s == subset)
    }

    /// Generator of `∧^{k+1}(u₀ ⊕ R)`, `u₀ = span(e_1, …, e_k)`.
    pub fn base_line(&self) -> Vector {
        let mut subset: Vec<usize> = (0..self.k).collect();
        subset.push(self.u_dim);
        let mut v = Vector::zeros(self.v_dim());
        v[self.index_of(&subset).expect("base subset is a basis element")] = 1.0;
        v
    }

    fn permute(&self, m: &Matrix) -> Matrix {
        let lex = wedge_basis(self.u_dim + 1, self.k + 1);
        let pos: Vec<usize> = self.order.iter().map(|s| lex.iter().position(|t| t == s).expect("same basis")).collect();
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(pos[i], pos[j])])
    }
}

/// `(l, u)` as the `(d+1)×(d+1)` matrix `[[l, u], [0, 1]]`.
pub fn affine_block(l: &Matrix, u: &Vector) -> Result<Matrix> {
    let d = l.nrows();
    if !l.is_square() || u.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: u.len() });
    }
    if !is_invertible(l) {
        return Err(Error::Singular);
    }
    let mut g = Matrix::identity(d + 1, d + 1);
    g.view_mut((0, 0), (d, d)).copy_from(l);
    g.view_mut((0, d), (d, 1)).copy_from(u);
    Ok(g)
}

/// `∧^{k+1}` of [`affine_block`] in the space's coordinates.
pub fn lift_group_element(l: &Matrix, u: &Vector, hs: &HomogeneousSpace) -> Result<Matrix> {
    if l.nrows() != hs.u_dim {
        return Err(Error::DimensionMismatch { expected: hs.u_dim, got: l.nrows() });
    }
    Ok(hs.permute(&wedge_power(&affine_block(l, u)?, hs.k + 1)?))
}

/// `ψ(gH) = g·W₀`.
pub fn psi_embed(l: &Matrix, u: &Vector, hs: &HomogeneousSpace) -> Result<ProjPoint> {
    proj_normalize(&(lift_group_element(l, u, hs)? * hs.base_line()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupElement {
    pub l: Matrix,
    pub u: Vector,
}

/// Finitely supported measure on `GL_d(R) ⋉ R^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupEnsemble {
    atoms: Vec<(f64, GroupElement)>,
    label: String,
}

impl GroupEnsemble {
    pub fn new(atoms: Vec<(f64, GroupElement)>, label: impl Into<String>) -> Result<Self> {
        let d = atoms.first().ok_or(Error::Empty("group ensemble"))?.1.l.nrows();
        for (_, g) in &atoms {
            affine_block(&g.l, &g.u)?;
            if g.l.nrows() != d {
                return Err(Error::DimensionMismatch { expected: d, got: g.l.nrows() });
            }
        }
        let total: f64 = atoms.iter().map(|a| a.0).sum();
        if atoms.iter().any(|a| !(a.0 > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnsemble(format!("weights must be positive and sum to 1, got {total}")));
        }
        Ok(GroupEnsemble { atoms, label: label.into() })
    }

    pub fn u_dim(&self) -> usize {
        self.atoms[0].1.l.nrows()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn atoms(&self) -> &[(f64, GroupElement)] {
        &self.atoms
    }

    /// The Levi projection `(l, u) ↦ (l, 0)`.
    pub fn levi(&self) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|(w, g)| (*w, GroupElement { l: g.l.clone(), u: Vector::zeros(g.u.len()) }))
            .collect();
        GroupEnsemble { atoms, label: format!("{}|L", self.label) }
    }

    /// Law of `l` acting on `u`.
    pub fn linear_part(&self) -> Result<MatrixEnsemble> {
        MatrixEnsemble::finite(
            self.atoms.iter().map(|(w, g)| (*w, g.l.clone())).collect(),
            format!("{}|u", self.label),
        )
    }

    /// The pushed-forward ensemble on `∧^{k+1}(u ⊕ R)` with `W = ∧^{k+1} u`.
    pub fn lift(&self, hs: &HomogeneousSpace) -> Result<(MatrixEnsemble, BlockSystem)> {
        let atoms = self
            .atoms
            .iter()
            .map(|(w, g)| Ok((*w, lift_group_element(&g.l, &g.u, hs)?)))
            .collect::<Result<Vec<_>>>()?;
        let ens = MatrixEnsemble::finite(atoms, format!("{}^(k={})", self.label, hs.k))?;
        Ok((ens, hs.block_system()?))
    }
}

/// Shipped atom count and translation scale of the `SL_2(C) ⋉ C^2` ensemble.
pub const SL2C_AFFINE_ATOMS: usize = 8;
pub const SL2C_TRANSLATION_SCALE: f64 = 1.0;
pub const SL2C_DEFAULT_SEED: u64 = 2024;

/// `SL_2(C)` atoms realized on `R^4` with independent Gaussian
/// translations of standard deviation `translation_scale`.
pub fn build_sl2c_affine_ensemble(atom_count: usize, seed: u64, translation_scale: f64) -> Result<GroupEnsemble> {
    let ls = sl2c_atoms(atom_count, seed)?;
    let mut rng = rng::stream(rng::derive_seed(seed, 1), 0);
    let w = 1.0 / ls.len() as f64;
    let atoms = ls
        .iter()
        .map(|c| {
            let u = Vector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal) * translation_scale);
            (w, GroupElement { l: realify_c2(c), u })
        })
        .collect();
    GroupEnsemble::new(atoms, format!("sl2c-affine(n={atom_count},seed={seed},scale={translation_scale})"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrassmannianVerdict {
    NoStationary,
    UniqueStationary,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrassmannianReport {
    pub k: usize,
    pub v_dim: usize,
    pub w_dim: usize,
    pub radius: f64,
    pub escape_fraction: f64,
    pub tightness: TightnessReport,
    pub probe: Option<UniquenessReport>,
    pub verdict: GrassmannianVerdict,
    pub summary: String,
}

/// Thresholds of the behavioral verdicts.
pub const ESCAPED: f64 = 0.95;
pub const CONFINED: f64 = 0.05;
pub const PROBE_MAX: f64 = 0.05;

/// Drift radius separating escape from recurrence on the shipped
/// ensemble.
pub const CALIBRATED_RADIUS: f64 = 9.210340371976184; // ln 1e4

/// Lifts `ens_g` to `X_{k,d}` and runs the tightness diagnostic from the
/// base point, followed by a uniqueness probe from three translated base
/// points when the fiber coordinate stays confined.
pub fn grassmannian_experiment(k: usize, ens_g: &GroupEnsemble, n: usize, radius: f64, seed: u64) -> Result<GrassmannianReport> {
    let d = ens_g.u_dim();
    let hs = HomogeneousSpace::new(d, k)?;
    let (ens, bs) = ens_g.lift(&hs)?;
    let id = Matrix::identity(d, d);
    let start = |u: Vector| -> Result<BundleState> { split_point(&psi_embed(&id, &u, &hs)?, &bs) };
    let x0 = start(Vector::zeros(d))?;
    let tightness = tightness_diagnostic(&bs, &ens, &x0, n, &[radius], rng::derive_seed(seed, 10))?;
    let escape_fraction = tightness.escape_fractions[0];
    let mut probe = None;
    let verdict = match tightness.trend {
        Trend::Escaping if escape_fraction >= ESCAPED => GrassmannianVerdict::NoStationary,
        Trend::Recurrent if escape_fraction <= CONFINED => {
            let mut shifted = Vector::zeros(d);
            shifted[0] = 10.0;
            let mut other = Vector::zeros(d);
            other[d - 1] = -10.0;
            let starts = [x0, start(shifted)?, start(other)?];
            let p = uniqueness_probe(&bs, &ens, &starts, n, rng::derive_seed(seed, 11))?;
            let ok = p.max <= PROBE_MAX;
            probe = Some(p);
            if ok {
                GrassmannianVerdict::UniqueStationary
            } else {
                GrassmannianVerdict::Indeterminate
            }
        }
        _ => GrassmannianVerdict::Indeterminate,
    };
    let summary = match verdict {
        GrassmannianVerdict::NoStationary => format!("escaping on X_{{{k},{d}}}: consistent with no stationary probability measure"),
        GrassmannianVerdict::UniqueStationary => {
            format!("recurrent with agreeing starts on X_{{{k},{d}}}: consistent with a unique stationary probability measure")
        }
        GrassmannianVerdict::Indeterminate => format!("no behavioral verdict on X_{{{k},{d}}}"),
    };
    Ok(GrassmannianReport {
        k,
        v_dim: hs.v_dim(),
        w_dim: hs.w_dim(),
        radius,
        escape_fraction,
        tightness,
        probe,
        verdict,
        summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeviReport {
    pub spec_mu: Vec<f64>,
    pub spec_mu_l: Vec<f64>,
    pub stderr_mu: Vec<f64>,
    pub stderr_mu_l: Vec<f64>,
    pub max_gap: f64,
    /// Largest `|gap_i| / combined stderr_i` (0 where both are exact).
    pub max_gap_stderrs: f64,
}

/// Lyapunov spectra of the lift of `ens_g` to `∧^{k+1}(u ⊕ R)` and of its
/// Levi projection, on common random numbers.
pub fn levi_spectrum_check(ens_g: &GroupEnsemble, hs: &HomogeneousSpace, n: usize, reps: usize, seed: u64) -> Result<LeviReport> {
    let (full, _) = ens_g.lift(hs)?;
    let (levi, _) = ens_g.levi().lift(hs)?;
    let (a, b) = rayon::join(|| spectrum(&full, n, reps, seed), || spectrum(&levi, n, reps, seed));
    let (a, b) = (a?, b?);
    let mut max_gap = 0.0_f64;
    let mut max_gap_stderrs = 0.0_f64;
    for (x, y) in a.exponents.iter().zip(&b.exponents) {
        let gap = (x.value - y.value).abs();
        max_gap = max_gap.max(gap);
        let s = x.combined_stderr(y);
        if gap > 0.0 {
            max_gap_stderrs = max_gap_stderrs.max(if s > 0.0 { gap / s } else { f64::INFINITY });
        }
    }
    Ok(LeviReport {
        spec_mu: a.values(),
        spec_mu_l: b.values(),
        stderr_mu: a.exponents.iter().map(|e| e.stderr).collect(),
        stderr_mu_l: b.exponents.iter().map(|e| e.stderr).collect(),
        max_gap,
        max_gap_stderrs,
    })
}

/// Top exponent of `W = ∧^{k+1}u` under the lift, next to
/// `λ_1 + … + λ_{k+1}` of the linear part on `u`.
pub fn w_exponent_bookkeeping(
    ens_g: &GroupEnsemble,
    hs: &HomogeneousSpace,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<(crate::stats::GrowthEstimate, crate::stats::GrowthEstimate)> {
    let (ens, bs) = ens_g.lift(hs)?;
    let on_w = restrict_to_invariant(&bs, &ens)?;
    let (w, s) = rayon::join(|| top_exponent(&on_w, n, reps, seed), || -> Result<_> {
        Ok(spectrum(&ens_g.linear_part()?, n, reps, seed)?.partial_sum(hs.k + 1))
    });
    Ok((w?, s?))
}

/// Number of lifted coordinates, `C(d+1, k+1)`.
pub fn lifted_dim(d: usize, k: usize) -> usize {
    binomial(d + 1, k + 1)
}

/// Quotient component norms of `ψ(l, u)` for many random `(l, u)`; the
/// image never approaches `P(W)`.
pub fn psi_quotient_norms(hs: &HomogeneousSpace, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let d = hs.u_dim;
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let l = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0);
            let p = psi_embed(&l, &u, hs)?;
            Ok(p.coords().rows(hs.w_dim, hs.v_dim() - hs.w_dim).norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::proj_distance;

    fn random_pair(seed: u64, d: usize) -> (Matrix, Vector) {
        let mut rng = rng::stream(seed, 0);
        let l = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        (l, u)
    }

    #[test]
    fn coordinates_put_w_first() {
        let hs = HomogeneousSpace::new(3, 1).unwrap();
        assert_eq!((hs.v_dim(), hs.w_dim()), (6, 3));
        assert_eq!(hs.order, vec![vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 3], vec![1, 3], vec![2, 3]]);
        assert_eq!(hs.base_line()[hs.index_of(&[0, 3]).unwrap()], 1.0);
        assert_eq!(lifted_dim(4, 2), 10);
        assert!(HomogeneousSpace::new(4, 4).is_err());
    }

    #[test]
    fn lift_examples() {
        let hs = HomogeneousSpace::new(3, 1).unwrap();
        assert_eq!(lift_group_element(&Matrix::identity(3, 3), &Vector::zeros(3), &hs).unwrap(), Matrix::identity(6, 6));
        let hs1 = HomogeneousSpace::new(1, 0).unwrap();
        let g = lift_group_element(&Matrix::from_element(1, 1, 2.5), &Vector::from_element(1, -0.5), &hs1).unwrap();
        assert_eq!(g, Matrix::from_row_slice(2, 2, &[2.5, -0.5, 0.0, 1.0]));
        assert!(lift_group_element(&Matrix::zeros(3, 3), &Vector::zeros(3), &hs).is_err());
    }

    #[test]
    fn lift_is_a_homomorphism_with_exact_zero_block() {
        for k in 0..4 {
            let hs = HomogeneousSpace::new(4, k).unwrap();
            let bs = hs.block_system().unwrap();
            for s in 0..20 {
                let (l1, u1) = random_pair(100 * k as u64 + s, 4);
                let (l2, u2) = random_pair(1000 + 100 * k as u64 + s, 4);
                // oracle: compose in the group, (l1,u1)(l2,u2) = (l1 l2, l1 u2 + u1)
                let l = &l1 * &l2;
                let u = &l1 * &u2 + &u1;
                let prod = lift_group_element(&l1, &u1, &hs).unwrap() * lift_group_element(&l2, &u2, &hs).unwrap();
                let direct = lift_group_element(&l, &u, &hs).unwrap();
                assert!((&prod - &direct).amax() <= 1e-10 * direct.amax());
                bs.blocks(&direct).unwrap();
            }
        }
    }

    #[test]
    fn psi_examples() {
        let hs = HomogeneousSpace::new(2, 0).unwrap();
        let id = Matrix::identity(2, 2);
        let p = psi_embed(&id, &Vector::zeros(2), &hs).unwrap();
        assert_eq!(p.coords(), &hs.base_line());
        let p = psi_embed(&id, &Vector::from_vec(vec![3.0, 0.0]), &hs).unwrap();
        let s = split_point(&p, &hs.block_system().unwrap()).unwrap();
        assert!((s.t() - Vector::from_vec(vec![3.0, 0.0])).amax() < 1e-15 && s.theta()[0] == 1.0);

        for k in 0..4 {
            let hs = HomogeneousSpace::new(4, k).unwrap();
            let norms = psi_quotient_norms(&hs, 250, k as u64).unwrap();
            assert!(norms.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn psi_is_equivariant() {
        let hs = HomogeneousSpace::new(4, 2).unwrap();
        for s in 0..50 {
            let (l1, u1) = random_pair(s, 4);
            let (l2, u2) = random_pair(s + 500, 4);
            let composed = psi_embed(&(&l1 * &l2), &(&l1 * &u2 + &u1), &hs).unwrap();
            let acted = proj_normalize(&(lift_group_element(&l1, &u1, &hs).unwrap() * psi_embed(&l2, &u2, &hs).unwrap().coords())).unwrap();
            assert!(proj_distance(&composed, &acted).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn levi_check_on_pure_levi_and_scalar_affine() {
        let ge = build_sl2c_affine_ensemble(4, 3, 0.0).unwrap();
        let r = levi_spectrum_check(&ge, &HomogeneousSpace::new(4, 1).unwrap(), 2000, 4, 1).unwrap();
        assert_eq!(r.max_gap, 0.0);

        let mut atoms = Vec::new();
        for s in [-0.3f64, 0.3] {
            for b in [-1.0, 1.0] {
                atoms.push((0.25, GroupElement { l: Matrix::from_element(1, 1, (-0.2 + s).exp()), u: Vector::from_element(1, b) }));
            }
        }
        let ge = GroupEnsemble::new(atoms, "affine").unwrap();
        let r = levi_spectrum_check(&ge, &HomogeneousSpace::new(1, 0).unwrap(), 20_000, 20, 2).unwrap();
        // oracle: (0, E log a) for both
        for (spec, se) in [(&r.spec_mu, &r.stderr_mu), (&r.spec_mu_l, &r.stderr_mu_l)] {
            assert!(spec[0].abs() <= 3.0 * se[0] + 1e-12, "{r:?}");
            assert!((spec[1] + 0.2).abs() <= 3.0 * se[1], "{r:?}");
        }
        assert!(r.max_gap_stderrs <= 3.0, "{r:?}");
    }
}
