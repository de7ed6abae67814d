//! Exponent levels `β_1 > … > β_k` and the flag `V = F_1 ⊃ … ⊃ F_k` of
//! invariant subspaces: `F_i` is the largest invariant subspace whose top
//! exponent is at most `β_i`.
//!
//! The flag is not visible from generic trajectories, so the search runs
//! over invariant subspaces first and measures exponents second:
//! candidate seeds (eigenvectors of short words, slow singular directions
//! of long products, a caller hint) are closed under the support, each
//! closure gets its top exponent estimated, and `F_i` is the sum of the
//! closures at level `≤ β_i`.

use itertools::Itertools;
use nalgebra::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{restrict_to_invariant, BlockSystem, MatrixEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_columns, principal_angle_distance, rank_span, Matrix, Subspace, Vector};
use crate::lyapunov::top_exponent;
use crate::rng;
use crate::stats::GrowthEstimate;

/// Rank tolerance for orbit closures.
pub const CLOSURE_TOL: f64 = 1e-8;
/// Largest principal-angle sine at which two candidates count as equal.
pub const SAME_SUBSPACE_TOL: f64 = 1e-6;
/// Levels closer than this many combined standard errors are merged.
pub const MERGE_STDERRS: f64 = 4.0;

const MAX_CLOSURE_ROUNDS: usize = 64;
const MAX_WORDS: usize = 48;
const SINGULAR_HORIZONS: [usize; 3] = [100, 1_000, 10_000];

/// Smallest subspace containing `seeds` and mapped into itself by every
/// atom, found by iterating `S ← span(S ∪ g·S)` until the rank stops
/// growing. The result is checked: `dist(g·b, S) ≤ tol·‖g·b‖` for every
/// atom `g` and basis vector `b`.
pub fn find_invariant_subspace(
    ens: &MatrixEnsemble,
    seeds: &[Vector],
    tol: f64,
    max_rounds: usize,
) -> Result<Subspace> {
    let atoms = ens.require_atoms("invariant subspace search")?;
    let mut s = rank_span(seeds, tol)?;
    if s.ambient_dim() != ens.dim() {
        return Err(Error::DimensionMismatch { expected: ens.dim(), got: s.ambient_dim() });
    }
    for _ in 0..max_rounds {
        if s.is_zero() || s.is_full() {
            return Ok(s);
        }
        let mut vs = s.basis_vectors();
        for a in atoms {
            let img = &a.matrix * s.basis();
            vs.extend(img.column_iter().map(|c| c.into_owned()));
        }
        let next = rank_span(&vs, tol)?;
        if next.dim() == s.dim() {
            let closed = atoms.iter().all(|a| {
                (&a.matrix * next.basis()).column_iter().all(|c| {
                    let c = c.into_owned();
                    next.residual(&c) <= tol * c.norm()
                })
            });
            if closed {
                return Ok(next);
            }
        }
        s = next;
    }
    Err(Error::NoStabilization(max_rounds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkhReport {
    pub exponents: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub filtration: Vec<Subspace>,
    pub notes: String,
    pub horizon: usize,
    pub repetitions: usize,
}

impl FkhReport {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn beta_min(&self) -> f64 {
        *self.exponents.last().expect("report has at least one level")
    }

    pub fn level(&self, i: usize) -> GrowthEstimate {
        GrowthEstimate {
            value: self.exponents[i],
            stderr: self.stderrs[i],
            horizon: self.horizon,
            repetitions: self.repetitions,
        }
    }
}

/// Real eigen-directions of `w`: null vectors of `w − λI` for real
/// eigenvalues and the real 2-planes `ker((w − aI)² + b²I)` for complex
/// pairs `a ± ib`.
fn eigen_seeds(w: &Matrix) -> Vec<Vec<Vector>> {
    let d = w.nrows();
    let scale = w.amax().max(1e-300);
    let eig = w.clone().complex_eigenvalues();
    let mut out = Vec::new();
    let mut seen: Vec<Complex<f64>> = Vec::new();
    for z in eig.iter() {
        if z.im < -1e-10 * scale || seen.iter().any(|s| (s - z).norm() <= 1e-10 * scale) {
            continue;
        }
        seen.push(*z);
        let id = Matrix::identity(d, d);
        let (m, want) = if z.im.abs() <= 1e-10 * scale {
            (w - &id * z.re, 1)
        } else {
            let shifted = w - &id * z.re;
            (&shifted * &shifted + id * (z.im * z.im), 2)
        };
        let svd = crate::linalg::svd(&m);
        let Some(vt) = svd.v_t else { continue };
        let sv = &svd.singular_values;
        let mut idx: Vec<usize> = (0..sv.len()).collect();
        idx.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
        let smax = sv.iter().fold(0.0_f64, |a, &s| a.max(s)).max(1e-300);
        let null: Vec<Vector> = idx
            .iter()
            .enumerate()
            .filter(|&(k, &i)| k < want || sv[i] <= 1e-8 * smax)
            .map(|(_, &i)| vt.row(i).transpose())
            .collect();
        out.push(null);
    }
    out
}

/// Words of length 1 to 3 in the atoms; a seeded subset when there are
/// more than `MAX_WORDS`.
fn short_words(ens: &MatrixEnsemble, seed: u64) -> Result<Vec<Matrix>> {
    let atoms = ens.require_atoms("word enumeration")?;
    let m = atoms.len();
    let mut words: Vec<Vec<usize>> = Vec::new();
    for len in 1..=3 {
        words.extend((0..len).map(|_| 0..m).multi_cartesian_product());
        if words.len() > 4 * MAX_WORDS {
            break;
        }
    }
    if words.len() > MAX_WORDS {
        let mut rng = rng::stream(rng::derive_seed(seed, 0x30d5), 0);
        let mut keep: Vec<Vec<usize>> = words[..m.min(MAX_WORDS / 2)].to_vec();
        while keep.len() < MAX_WORDS {
            keep.push(words[rng.random_range(0..words.len())].clone());
        }
        words = keep;
    }
    Ok(words
        .into_iter()
        .map(|w| w.iter().fold(Matrix::identity(ens.dim(), ens.dim()), |acc, &i| &atoms[i].matrix * acc))
        .collect())
}

/// Frames from iterated orthonormalization under the transpose measure at
/// the horizons of `SINGULAR_HORIZONS`: the trailing `j` columns span the
/// slowest right-singular directions of a product distributed like `L_n`.
fn singular_seeds(ens: &MatrixEnsemble, seed: u64) -> Result<Vec<Vec<Vector>>> {
    let d = ens.dim();
    let t = ens.transpose();
    let mut rng = rng::stream(rng::derive_seed(seed, 0x5176), 0);
    let mut q = Matrix::identity(d, d);
    let mut logs = vec![0.0; d];
    let mut out = Vec::new();
    let last = *SINGULAR_HORIZONS.last().expect("nonempty");
    for step in 1..=last {
        let x = t.sample(&mut rng)?;
        q = &*x * q;
        orthonormalize_columns(&mut q, &mut logs)?;
        if SINGULAR_HORIZONS.contains(&step) {
            for j in 1..d {
                out.push((d - j..d).map(|c| q.column(c).into_owned()).collect());
                out.push((0..j).map(|c| q.column(c).into_owned()).collect());
            }
        }
    }
    Ok(out)
}

fn top_of(ens: &MatrixEnsemble, s: &Subspace, n: usize, reps: usize, seed: u64) -> Result<GrowthEstimate> {
    if s.is_full() {
        return top_exponent(ens, n, reps, seed);
    }
    let bs = BlockSystem::new(s.clone())?;
    top_exponent(&restrict_to_invariant(&bs, ens)?, n, reps, seed)
}

fn merge_tol(a: &GrowthEstimate, b: &GrowthEstimate) -> f64 {
    (MERGE_STDERRS * a.combined_stderr(b)).max(1e-9 * (1.0 + a.value.abs().max(b.value.abs())))
}

/// Searches the invariant-subspace lattice and measures exponents; see
/// the module docs. `hint` contributes its invariant subspace as an extra
/// seed.
pub fn fkh_estimate(
    ens: &MatrixEnsemble,
    hint: Option<&BlockSystem>,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<FkhReport> {
    ens.require_atoms("FKH estimation")?;
    let d = ens.dim();
    let mut seed_sets: Vec<Vec<Vector>> = Vec::new();
    for w in short_words(ens, seed)? {
        seed_sets.extend(eigen_seeds(&w));
    }
    seed_sets.extend(singular_seeds(ens, seed)?);
    if let Some(bs) = hint {
        seed_sets.push(bs.invariant().basis_vectors());
    }
    // one vector at a time as well: sums are recovered later
    let singles: Vec<Vec<Vector>> =
        seed_sets.iter().filter(|s| s.len() > 1).flat_map(|s| s.iter().map(|v| vec![v.clone()])).collect();
    seed_sets.extend(singles);

    let closures: Vec<Subspace> = seed_sets
        .par_iter()
        .map(|s| find_invariant_subspace(ens, s, CLOSURE_TOL, MAX_CLOSURE_ROUNDS).ok())
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut candidates: Vec<Subspace> = vec![Subspace::full(d)];
    for c in closures {
        if c.is_zero() {
            continue;
        }
        let dup = candidates
            .iter()
            .any(|k| k.dim() == c.dim() && principal_angle_distance(k, &c).is_ok_and(|x| x <= SAME_SUBSPACE_TOL));
        if !dup {
            candidates.push(c);
        }
    }

    let tops: Vec<GrowthEstimate> =
        candidates.par_iter().map(|c| top_of(ens, c, n, reps, seed)).collect::<Result<Vec<_>>>()?;

    // cluster the measured values from the top down
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| tops[b].value.total_cmp(&tops[a].value).then(a.cmp(&b)));
    let mut level_of = vec![0usize; candidates.len()];
    let mut anchors: Vec<GrowthEstimate> = Vec::new();
    for &i in &order {
        match anchors.last() {
            Some(a) if (a.value - tops[i].value).abs() <= merge_tol(a, &tops[i]) => {}
            _ => anchors.push(tops[i]),
        }
        level_of[i] = anchors.len() - 1;
    }

    let mut exponents = Vec::new();
    let mut stderrs = Vec::new();
    let mut filtration: Vec<Subspace> = Vec::new();
    for lvl in 0..anchors.len() {
        let members: Vec<Vector> = (0..candidates.len())
            .filter(|&i| level_of[i] >= lvl)
            .flat_map(|i| candidates[i].basis_vectors())
            .collect();
        let f = rank_span(&members, CLOSURE_TOL)?;
        if let Some(prev) = filtration.last() {
            if f.dim() >= prev.dim() || !prev.contains_subspace(&f, SAME_SUBSPACE_TOL) {
                return Err(Error::FiltrationDiagnostic(format!(
                    "level {} does not shrink the flag (dims {} then {})",
                    lvl + 1,
                    prev.dim(),
                    f.dim()
                )));
            }
        }
        let top = top_of(ens, &f, n, reps, seed)?;
        if (top.value - anchors[lvl].value).abs() > merge_tol(&top, &anchors[lvl]) {
            return Err(Error::FiltrationDiagnostic(format!(
                "sum of level-{} subspaces grows at {:.6} but the level is {:.6}",
                lvl + 1,
                top.value,
                anchors[lvl].value
            )));
        }
        exponents.push(top.value);
        stderrs.push(top.stderr);
        filtration.push(f);
    }
    Ok(FkhReport {
        exponents,
        stderrs,
        filtration,
        notes: format!(
            "{} candidate invariant subspaces from {} seed sets; levels merged within {} combined stderr",
            candidates.len(),
            seed_sets.len(),
            MERGE_STDERRS
        ),
        horizon: n,
        repetitions: reps,
    })
}

/// `F_{r'+1}(μᵗ)^⊥ ∩ F_r(μ)` for the 1-based level `r` of `μ`, where `r'`
/// is the largest level of `μᵗ` with `β_{r'}(μᵗ) ≥ β_r(μ)` (up to the
/// merge tolerance). For `r = 1` this is the subspace carrying every
/// stationary measure whose cocycle average is the top exponent.
pub fn transpose_dual_space(ens: &MatrixEnsemble, r: usize, n: usize, reps: usize, seed: u64) -> Result<Subspace> {
    let mu = fkh_estimate(ens, None, n, reps, seed)?;
    let mt = fkh_estimate(&ens.transpose(), None, n, reps, seed)?;
    dual_from_reports(&mu, &mt, r)
}

pub fn dual_from_reports(mu: &FkhReport, mt: &FkhReport, r: usize) -> Result<Subspace> {
    if r == 0 || r > mu.len() {
        return Err(Error::FiltrationIndex { index: r, len: mu.len() });
    }
    let beta = mu.level(r - 1);
    let r_prime = (0..mt.len())
        .rfind(|&i| mt.exponents[i] >= beta.value - merge_tol(&mt.level(i), &beta))
        .map_or(0, |i| i + 1);
    let d = mu.filtration[0].ambient_dim();
    let perp = if r_prime >= mt.len() {
        Subspace::full(d)
    } else {
        mt.filtration[r_prime].orthogonal_complement()
    };
    perp.intersection(&mu.filtration[r - 1], SAME_SUBSPACE_TOL)
}
