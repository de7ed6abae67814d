//! Which of the lift regimes a block-triangular system is in, read off by
//! comparing the cocycle average on the quotient with the exponent levels
//! of `W`, plus the search for an invariant partial complement.

use serde::Serialize;

use super::{cocycle_average, EmpiricalMeasure};
use crate::ensemble::{quotient_ensemble, restrict_to_invariant, BlockSystem, Blocks, MatrixEnsemble};
use crate::error::{Error, Result};
use crate::fkh::{fkh_estimate, CLOSURE_TOL, SAME_SUBSPACE_TOL};
use crate::linalg::{rank_span, svd, Matrix, Subspace, Vector, DEFAULT_RANK_TOL};
use crate::rng;
use crate::stats::GrowthEstimate;

/// Comparisons closer than this many combined standard errors are treated
/// as unresolved.
pub const RESOLUTION_STDERRS: f64 = 3.0;

/// Sampled matrices used for the complement equations when the ensemble
/// is not finitely supported.
const SAMPLED_CONSTRAINTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Contracting,
    PurelyExpanding,
    Mixed,
    CriticalIndeterminate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    UniqueLiftExists,
    LiftIffComplement,
    LiftIffPartialComplement,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LiftClassification {
    pub regime: Regime,
    pub alpha_bar: GrowthEstimate,
    pub lambda1_w: Option<GrowthEstimate>,
    pub beta_levels_w: Vec<f64>,
    pub beta_stderrs_w: Vec<f64>,
    pub verdict: Verdict,
    /// Invariant `W′` with the required intersection with `W`, in ambient
    /// coordinates.
    pub witness: Option<Subspace>,
    pub notes: Vec<String>,
}

impl LiftClassification {
    fn indeterminate(alpha_bar: GrowthEstimate, note: String) -> Self {
        LiftClassification {
            regime: Regime::CriticalIndeterminate,
            alpha_bar,
            lambda1_w: None,
            beta_levels_w: Vec::new(),
            beta_stderrs_w: Vec::new(),
            verdict: Verdict::Indeterminate,
            witness: None,
            notes: vec![note],
        }
    }
}

/// `base` is a cloud on `P(V/W)` in adapted quotient coordinates, standing
/// in for the stationary measure `ν̄`.
pub fn classify_regime(
    bs: &BlockSystem,
    ens: &MatrixEnsemble,
    base: &EmpiricalMeasure,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<LiftClassification> {
    if base.ambient_dim() != bs.quotient_dim() {
        return Err(Error::DimensionMismatch { expected: bs.quotient_dim(), got: base.ambient_dim() });
    }
    let quotient = quotient_ensemble(bs, ens)?;
    let alpha = cocycle_average(&quotient, base, 64, rng::derive_seed(seed, 1))?;
    let restricted = restrict_to_invariant(bs, ens)?;
    let fkh = match fkh_estimate(&restricted, None, n, reps, rng::derive_seed(seed, 2)) {
        Ok(r) => r,
        Err(e) => return Ok(LiftClassification::indeterminate(alpha, format!("exponent levels of W unavailable: {e}"))),
    };
    let levels: Vec<GrowthEstimate> = (0..fkh.len()).map(|i| fkh.level(i)).collect();
    let mut out = LiftClassification {
        regime: Regime::CriticalIndeterminate,
        alpha_bar: alpha,
        lambda1_w: levels.first().copied(),
        beta_levels_w: fkh.exponents.clone(),
        beta_stderrs_w: fkh.stderrs.clone(),
        verdict: Verdict::Indeterminate,
        witness: None,
        notes: vec![fkh.notes.clone()],
    };
    for (i, b) in levels.iter().enumerate() {
        let gap = (alpha.value - b.value).abs();
        if gap <= RESOLUTION_STDERRS * alpha.combined_stderr(b) {
            out.notes.push(format!(
                "alpha = {:.6} is within {} combined stderr of level {} ({:.6})",
                alpha.value,
                RESOLUTION_STDERRS,
                i + 1,
                b.value
            ));
            return Ok(out);
        }
    }
    let above = levels.iter().filter(|b| b.value > alpha.value).count();
    if above == 0 {
        out.regime = Regime::Contracting;
        out.verdict = Verdict::UniqueLiftExists;
        return Ok(out);
    }
    let (regime, verdict, f) = if above == levels.len() {
        (Regime::PurelyExpanding, Verdict::LiftIffComplement, Subspace::zero(bs.rank()))
    } else {
        (Regime::Mixed, Verdict::LiftIffPartialComplement, fkh.filtration[above].clone())
    };
    out.regime = regime;
    out.verdict = verdict;
    let support = base.support_span(DEFAULT_RANK_TOL)?;
    match complement_witness(bs, ens, &support, &f, rng::derive_seed(seed, 3))? {
        Some(w) => out.witness = Some(w),
        None => out.notes.push(format!(
            "no invariant W' over the support span (dim {}) meeting W in a subspace of dim {}",
            support.dim(),
            f.dim()
        )),
    }
    Ok(out)
}

fn constraint_blocks(bs: &BlockSystem, ens: &MatrixEnsemble, seed: u64) -> Result<Vec<Blocks>> {
    match ens.atoms() {
        Some(atoms) => atoms.iter().map(|a| bs.blocks(&a.matrix)).collect(),
        None => {
            let mut rng = rng::stream(seed, 0);
            (0..SAMPLED_CONSTRAINTS)
                .map(|_| {
                    let g = ens.sample(&mut rng)?;
                    bs.blocks(&g)
                })
                .collect()
        }
    }
}

/// Searches for an invariant `W′` with `W′ ∩ W = F` and `(W′ + W)/W = S`,
/// where `S` is given in quotient coordinates and `F` in the coordinates
/// of `W`. Writing `W′ = F ⊕ {(GZφ, φ) : φ ∈ S}` with `G` a basis of `F^⊥`
/// in `W`, invariance reduces to the Sylvester system
/// `(GᵀAG) Z − Z M = −GᵀBΦ` for every constraint matrix, where
/// `CΦ = ΦM`. The least-squares solution is accepted only if the
/// resulting subspace is closed under every constraint matrix and meets
/// `W` in exactly `F`.
pub fn complement_witness(
    bs: &BlockSystem,
    ens: &MatrixEnsemble,
    s: &Subspace,
    f: &Subspace,
    seed: u64,
) -> Result<Option<Subspace>> {
    let r = bs.rank();
    if s.ambient_dim() != bs.quotient_dim() || f.ambient_dim() != r {
        return Err(Error::arg("support must live in V/W and F in W"));
    }
    if s.is_zero() {
        return Ok(None);
    }
    let blocks = constraint_blocks(bs, ens, seed)?;
    let phi = s.basis();
    let sd = s.dim();
    let g = f.orthogonal_complement();
    let gb = g.basis();
    let m = g.dim();

    let mut ms = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let c_phi = &b.c * phi;
        let mm = phi.transpose() * &c_phi;
        if (&c_phi - phi * &mm).amax() > CLOSURE_TOL * (1.0 + c_phi.amax()) {
            return Ok(None);
        }
        ms.push(mm);
    }

    let z = if m == 0 {
        Matrix::zeros(0, sd)
    } else {
        let rows = blocks.len() * m * sd;
        let mut k = Matrix::zeros(rows, m * sd);
        let mut rhs = Vector::zeros(rows);
        for (idx, (b, mm)) in blocks.iter().zip(&ms).enumerate() {
            let a_hat = gb.transpose() * &b.a * gb;
            let target = -(gb.transpose() * &b.b * phi);
            let off = idx * m * sd;
            // column-major vec: vec(ÂZ) = (I ⊗ Â) vec Z, vec(ZM) = (Mᵀ ⊗ I) vec Z
            for col in 0..sd {
                for i in 0..m {
                    let row = off + col * m + i;
                    rhs[row] = target[(i, col)];
                    for j in 0..m {
                        k[(row, col * m + j)] += a_hat[(i, j)];
                    }
                    for c2 in 0..sd {
                        k[(row, c2 * m + i)] -= mm[(c2, col)];
                    }
                }
            }
        }
        let dec = svd(&k);
        let smax = dec.singular_values.iter().fold(0.0_f64, |a, &x| a.max(x));
        let sol = dec.solve(&rhs, 1e-12 * smax.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Matrix::from_column_slice(m, sd, sol.as_slice())
    };

    let d = bs.dim();
    let mut vs: Vec<Vector> = Vec::new();
    for fc in f.basis_vectors() {
        let mut x = Vector::zeros(d);
        x.rows_mut(0, r).copy_from(&fc);
        vs.push(bs.vector_from_adapted(&x));
    }
    let y = gb * &z;
    for c in 0..sd {
        let mut x = Vector::zeros(d);
        x.rows_mut(0, r).copy_from(&y.column(c));
        x.rows_mut(r, d - r).copy_from(&phi.column(c));
        vs.push(bs.vector_from_adapted(&x));
    }
    let w_prime = rank_span(&vs, DEFAULT_RANK_TOL)?;

    let closed = blocks.iter().all(|b| {
        let h = bs.from_adapted(&block_matrix(b));
        (&h * w_prime.basis()).column_iter().all(|c| {
            let c = c.into_owned();
            w_prime.residual(&c) <= CLOSURE_TOL * c.norm()
        })
    });
    if !closed {
        return Ok(None);
    }
    let meet = w_prime.intersection(bs.invariant(), SAME_SUBSPACE_TOL)?;
    if meet.dim() != f.dim() {
        return Ok(None);
    }
    Ok(Some(w_prime))
}

fn block_matrix(b: &Blocks) -> Matrix {
    let r = b.a.nrows();
    let q = b.c.nrows();
    let mut h = Matrix::zeros(r + q, r + q);
    h.view_mut((0, 0), (r, r)).copy_from(&b.a);
    h.view_mut((0, r), (r, q)).copy_from(&b.b);
    h.view_mut((r, r), (q, q)).copy_from(&b.c);
    h
}
