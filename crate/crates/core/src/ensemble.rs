//! Driving measures on `GL_d(R)`: finitely supported ensembles and seeded
//! samplers, together with the algebraic operations (transpose, block
//! restriction and quotient, exterior powers, affine embedding) that turn
//! one measure into another.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{
    self, gauge_n, is_finite_matrix, is_invertible, op_norm, wedge_power, Matrix, Subspace, Vector,
};
use crate::rng::{self, SimRng};
use crate::stats::{mean_stderr, GrowthEstimate};

/// Seeded generator of (almost surely invertible) matrices.
pub trait MatrixSampler: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut SimRng) -> Result<Matrix>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub matrix: Matrix,
}

#[derive(Clone, Debug)]
enum Kind {
    Finite { atoms: Vec<Atom>, cumulative: Vec<f64> },
    Sampler(Arc<dyn MatrixSampler>),
}

/// A probability measure on invertible `dim×dim` matrices.
#[derive(Clone, Debug)]
pub struct MatrixEnsemble {
    dim: usize,
    kind: Kind,
    label: String,
}

impl MatrixEnsemble {
    /// Finitely supported measure; weights must be positive and sum to 1
    /// within 1e-12 and every atom must be invertible.
    pub fn finite(atoms: Vec<(f64, Matrix)>, label: impl Into<String>) -> Result<Self> {
        let first = atoms.first().ok_or(Error::Empty("ensemble atoms"))?;
        let dim = first.1.nrows();
        let mut total = 0.0;
        for (i, (w, g)) in atoms.iter().enumerate() {
            if g.nrows() != dim || g.ncols() != dim {
                return Err(Error::InvalidEnsemble(format!("atom {i} is not {dim}x{dim}")));
            }
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidEnsemble(format!("atom {i} has weight {w}")));
            }
            if !is_invertible(g) {
                return Err(Error::InvalidEnsemble(format!("atom {i} is not invertible")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnsemble(format!("weights sum to {total}, not 1")));
        }
        let atoms: Vec<Atom> = atoms.into_iter().map(|(weight, matrix)| Atom { weight, matrix }).collect();
        Ok(Self::from_atoms_unchecked(dim, atoms, label.into()))
    }

    fn from_atoms_unchecked(dim: usize, atoms: Vec<Atom>, label: String) -> Self {
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.weight;
                acc
            })
            .collect();
        MatrixEnsemble { dim, kind: Kind::Finite { atoms, cumulative }, label }
    }

    /// Equal weights on the given matrices.
    pub fn uniform(mats: Vec<Matrix>, label: impl Into<String>) -> Result<Self> {
        let w = 1.0 / mats.len().max(1) as f64;
        let atoms: Vec<(f64, Matrix)> = mats.into_iter().map(|m| (w, m)).collect();
        // 1/n summed n times can miss 1 by a few ulps only
        Self::finite(atoms, label)
    }

    pub fn dirac(g: Matrix, label: impl Into<String>) -> Result<Self> {
        Self::finite(vec![(1.0, g)], label)
    }

    pub fn from_sampler(sampler: Arc<dyn MatrixSampler>, label: impl Into<String>) -> Self {
        MatrixEnsemble { dim: sampler.dim(), kind: Kind::Sampler(sampler), label: label.into() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.kind, Kind::Finite { .. })
    }

    pub fn atoms(&self) -> Option<&[Atom]> {
        match &self.kind {
            Kind::Finite { atoms, .. } => Some(atoms),
            Kind::Sampler(_) => None,
        }
    }

    pub fn require_atoms(&self, what: &'static str) -> Result<&[Atom]> {
        self.atoms().ok_or(Error::NeedsFiniteSupport(what))
    }

    /// Index of a random atom; `None` for sampler ensembles.
    pub fn draw_index(&self, rng: &mut SimRng) -> Option<usize> {
        match &self.kind {
            Kind::Finite { cumulative, .. } => Some(pick(cumulative, rng.random::<f64>())),
            Kind::Sampler(_) => None,
        }
    }

    /// One draw from the measure. Advances `rng`.
    pub fn sample(&self, rng: &mut SimRng) -> Result<Cow<'_, Matrix>> {
        match &self.kind {
            Kind::Finite { atoms, cumulative } => {
                Ok(Cow::Borrowed(&atoms[pick(cumulative, rng.random::<f64>())].matrix))
            }
            Kind::Sampler(s) => {
                let g = s.sample(rng)?;
                if g.nrows() != self.dim || g.ncols() != self.dim {
                    return Err(Error::DimensionMismatch { expected: self.dim, got: g.nrows() });
                }
                if !is_finite_matrix(&g) {
                    return Err(Error::NonFinite("sampled matrix"));
                }
                if g.clone().lu().determinant() == 0.0 {
                    return Err(Error::Singular);
                }
                Ok(Cow::Owned(g))
            }
        }
    }

    /// Applies `f` to every atom (or every sample) and keeps the weights.
    pub fn map(&self, out_dim: usize, label: String, f: Arc<MapFn>) -> Result<Self> {
        match &self.kind {
            Kind::Finite { atoms, .. } => {
                let mapped = atoms
                    .iter()
                    .map(|a| Ok(Atom { weight: a.weight, matrix: f(&a.matrix)? }))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::from_atoms_unchecked(out_dim, mapped, label))
            }
            Kind::Sampler(s) => Ok(Self::from_sampler(
                Arc::new(MappedSampler { inner: s.clone(), out_dim, f }),
                label,
            )),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(self.dim, format!("{}^T", self.label), Arc::new(|g: &Matrix| Ok(g.transpose())))
            .expect("transpose cannot fail")
    }

    pub fn wedge(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dim {
            return Err(Error::WedgeDegree { k, dim: self.dim });
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let out = linalg::binomial(self.dim, k);
        self.map(out, format!("wedge{k}({})", self.label), Arc::new(move |g: &Matrix| wedge_power(g, k)))
    }

    /// Exact `∫ log N(g) dμ` for finite support, a Monte Carlo estimate with
    /// standard error otherwise.
    pub fn first_moment(&self, n_samples: usize, seed: u64) -> Result<GrowthEstimate> {
        match &self.kind {
            Kind::Finite { atoms, .. } => {
                let mut value = 0.0;
                for a in atoms {
                    value += a.weight * gauge_n(&a.matrix)?.ln();
                }
                if !value.is_finite() {
                    return Err(Error::NonFinite("first moment"));
                }
                Ok(GrowthEstimate::exact(value, 1))
            }
            Kind::Sampler(_) => {
                let mut rng = rng::stream(seed, 0);
                let logs = (0..n_samples.max(2))
                    .map(|_| -> Result<f64> {
                        let g = self.sample(&mut rng)?;
                        Ok(gauge_n(&g)?.ln())
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (value, stderr) = mean_stderr(&logs);
                if !value.is_finite() {
                    return Err(Error::NonFinite("first moment"));
                }
                Ok(GrowthEstimate { value, stderr, horizon: 1, repetitions: logs.len() })
            }
        }
    }
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

pub type MapFn = dyn Fn(&Matrix) -> Result<Matrix> + Send + Sync;

struct MappedSampler {
    inner: Arc<dyn MatrixSampler>,
    out_dim: usize,
    f: Arc<MapFn>,
}

impl fmt::Debug for MappedSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MappedSampler").field("inner", &self.inner).field("out_dim", &self.out_dim).finish()
    }
}

impl MatrixSampler for MappedSampler {
    fn dim(&self) -> usize {
        self.out_dim
    }

    fn sample(&self, rng: &mut SimRng) -> Result<Matrix> {
        (self.f)(&self.inner.sample(rng)?)
    }
}

/// `mean + scale·G` with `G` a standard Gaussian matrix.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    pub mean: Matrix,
    pub scale: f64,
}

impl MatrixSampler for GaussianSampler {
    fn dim(&self) -> usize {
        self.mean.nrows()
    }

    fn sample(&self, rng: &mut SimRng) -> Result<Matrix> {
        let d = self.mean.nrows();
        Ok(Matrix::from_fn(d, d, |i, j| self.mean[(i, j)] + self.scale * rng.sample::<f64, _>(StandardNormal)))
    }
}

/// Lower-left block of `g` in adapted coordinates together with the blocks
/// `g = [[A, B], [0, C]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Blocks {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

/// A distinguished subspace `W` with an orthogonal adapted basis whose
/// first `r` columns span `W`.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    invariant: Subspace,
    adapted: Matrix,
    coordinate: bool,
    block_tol: f64,
}

pub const DEFAULT_BLOCK_TOL: f64 = 1e-9;

impl BlockSystem {
    pub fn new(invariant: Subspace) -> Result<Self> {
        let d = invariant.ambient_dim();
        let r = invariant.dim();
        if r == 0 || r >= d {
            return Err(Error::arg(format!("invariant subspace must be proper and nonzero, got dim {r} in {d}")));
        }
        let coordinate = invariant.basis() == &Matrix::identity(d, r);
        let adapted = if coordinate {
            Matrix::identity(d, d)
        } else {
            let comp = invariant.orthogonal_complement();
            let mut p = Matrix::zeros(d, d);
            p.columns_mut(0, r).copy_from(invariant.basis());
            p.columns_mut(r, d - r).copy_from(comp.basis());
            p
        };
        Ok(BlockSystem { invariant, adapted, coordinate, block_tol: DEFAULT_BLOCK_TOL })
    }

    /// `W = span(e_1, …, e_r)` in `R^d`, with the identity as adapted basis.
    pub fn coordinate(d: usize, r: usize) -> Result<Self> {
        Self::new(Subspace::coordinate(d, &(0..r).collect::<Vec<_>>()))
    }

    pub fn with_block_tol(mut self, tol: f64) -> Self {
        self.block_tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.adapted.nrows()
    }

    /// `r = dim W`.
    pub fn rank(&self) -> usize {
        self.invariant.dim()
    }

    pub fn quotient_dim(&self) -> usize {
        self.dim() - self.rank()
    }

    pub fn invariant(&self) -> &Subspace {
        &self.invariant
    }

    pub fn adapted_basis(&self) -> &Matrix {
        &self.adapted
    }

    pub fn block_tol(&self) -> f64 {
        self.block_tol
    }

    /// The orthogonal complement of `W`, spanned by the last `d − r` adapted
    /// columns.
    pub fn complement(&self) -> Subspace {
        let r = self.rank();
        Subspace::from_orthonormal(self.adapted.columns(r, self.quotient_dim()).into_owned())
            .expect("adapted basis is orthogonal")
    }

    pub fn to_adapted(&self, g: &Matrix) -> Matrix {
        if self.coordinate {
            g.clone()
        } else {
            self.adapted.transpose() * g * &self.adapted
        }
    }

    pub fn from_adapted(&self, h: &Matrix) -> Matrix {
        if self.coordinate {
            h.clone()
        } else {
            &self.adapted * h * self.adapted.transpose()
        }
    }

    pub fn vector_to_adapted(&self, v: &Vector) -> Vector {
        if self.coordinate {
            v.clone()
        } else {
            self.adapted.transpose() * v
        }
    }

    pub fn vector_from_adapted(&self, v: &Vector) -> Vector {
        if self.coordinate {
            v.clone()
        } else {
            &self.adapted * v
        }
    }

    /// `(A, B, C)` of `g` in the adapted basis, after checking that the
    /// lower-left block is below `block_tol·‖g‖`.
    pub fn blocks(&self, g: &Matrix) -> Result<Blocks> {
        let h = self.to_adapted(g);
        let r = self.rank();
        let q = self.quotient_dim();
        let lower_left = h.view((r, 0), (q, r));
        if lower_left.iter().any(|&x| x != 0.0) {
            let residual = op_norm(&lower_left.into_owned());
            let bound = self.block_tol * op_norm(g);
            if !(residual <= bound) {
                return Err(Error::InvarianceViolation { residual, bound });
            }
        }
        Ok(Blocks {
            a: h.view((0, 0), (r, r)).into_owned(),
            b: h.view((0, r), (r, q)).into_owned(),
            c: h.view((r, r), (q, q)).into_owned(),
        })
    }

    /// Checks the invariance condition on every atom, or on a few seeded
    /// samples for sampler ensembles.
    pub fn check(&self, ens: &MatrixEnsemble) -> Result<()> {
        if ens.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: ens.dim() });
        }
        match ens.atoms() {
            Some(atoms) => atoms.iter().try_for_each(|a| self.blocks(&a.matrix).map(|_| ())),
            None => {
                let mut rng = rng::stream(0x5eed, 0);
                (0..16).try_for_each(|_| -> Result<()> {
                    let g = ens.sample(&mut rng)?;
                    self.blocks(&g)?;
                    Ok(())
                })
            }
        }
    }
}

/// The `r×r` ensemble of `A`-blocks: the action on `W`.
pub fn restrict_to_invariant(bs: &BlockSystem, ens: &MatrixEnsemble) -> Result<MatrixEnsemble> {
    bs.check(ens)?;
    let bs2 = bs.clone();
    ens.map(bs.rank(), format!("{}|W", ens.label()), Arc::new(move |g: &Matrix| Ok(bs2.blocks(g)?.a)))
}

/// The `(d−r)×(d−r)` ensemble of `C`-blocks: the action on `V/W`.
pub fn quotient_ensemble(bs: &BlockSystem, ens: &MatrixEnsemble) -> Result<MatrixEnsemble> {
    bs.check(ens)?;
    let bs2 = bs.clone();
    ens.map(bs.quotient_dim(), format!("{}|V/W", ens.label()), Arc::new(move |g: &Matrix| Ok(bs2.blocks(g)?.c)))
}

/// Law of the translation part of an affine map.
#[derive(Clone, Debug)]
pub enum TranslationLaw {
    Constant(Vector),
    Finite(Vec<(f64, Vector)>),
    /// Independent `N(mean, scale²)` coordinates.
    Gaussian { mean: Vector, scale: f64 },
}

impl TranslationLaw {
    fn dim(&self) -> Result<usize> {
        match self {
            TranslationLaw::Constant(b) => Ok(b.len()),
            TranslationLaw::Gaussian { mean, .. } => Ok(mean.len()),
            TranslationLaw::Finite(atoms) => {
                let d = atoms.first().ok_or(Error::Empty("translation atoms"))?.1.len();
                if atoms.iter().any(|(_, b)| b.len() != d) {
                    return Err(Error::arg("translation atoms have different lengths"));
                }
                Ok(d)
            }
        }
    }
}

/// `[[A, b], [0, 1]]` for an invertible `A` and a translation `b`.
pub fn affine_matrix(a: &Matrix, b: &Vector) -> Matrix {
    let d = a.nrows();
    let mut g = Matrix::zeros(d + 1, d + 1);
    g.view_mut((0, 0), (d, d)).copy_from(a);
    g.view_mut((0, d), (d, 1)).copy_from(b);
    g[(d, d)] = 1.0;
    g
}

#[derive(Debug)]
struct AffineSampler {
    linear: MatrixEnsemble,
    translations: TranslationLaw,
}

impl MatrixSampler for AffineSampler {
    fn dim(&self) -> usize {
        self.linear.dim() + 1
    }

    fn sample(&self, rng: &mut SimRng) -> Result<Matrix> {
        let a = self.linear.sample(rng)?.into_owned();
        let b = match &self.translations {
            TranslationLaw::Constant(b) => b.clone(),
            TranslationLaw::Finite(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = &atoms[atoms.len() - 1].1;
                for (w, b) in atoms {
                    acc += w;
                    if u < acc {
                        chosen = b;
                        break;
                    }
                }
                chosen.clone()
            }
            TranslationLaw::Gaussian { mean, scale } => {
                Vector::from_fn(mean.len(), |i, _| mean[i] + scale * rng.sample::<f64, _>(StandardNormal))
            }
        };
        Ok(affine_matrix(&a, &b))
    }
}

/// Embeds an affine random walk in `GL_{d+1}`: atoms `[[A, b], [0, 1]]`
/// with `W = span(e_1..e_d)`, the fixed points of the translations.
/// Independent finite linear and translation laws give the product
/// measure on pairs as a finite ensemble.
pub fn build_affine_embedding(
    linear: &MatrixEnsemble,
    translations: TranslationLaw,
) -> Result<(MatrixEnsemble, BlockSystem)> {
    let d = linear.dim();
    let td = translations.dim()?;
    if td != d {
        return Err(Error::DimensionMismatch { expected: d, got: td });
    }
    let label = format!("affine({})", linear.label());
    let ens = match (linear.atoms(), &translations) {
        (Some(atoms), TranslationLaw::Constant(b)) => {
            let atoms = atoms.iter().map(|a| (a.weight, affine_matrix(&a.matrix, b))).collect();
            MatrixEnsemble::finite(atoms, label)?
        }
        (Some(atoms), TranslationLaw::Finite(ts)) => {
            let mut out = Vec::with_capacity(atoms.len() * ts.len());
            for a in atoms {
                for (w, b) in ts {
                    out.push((a.weight * w, affine_matrix(&a.matrix, b)));
                }
            }
            let total: f64 = out.iter().map(|(w, _)| w).sum();
            out.iter_mut().for_each(|(w, _)| *w /= total);
            MatrixEnsemble::finite(out, label)?
        }
        _ => MatrixEnsemble::from_sampler(Arc::new(AffineSampler { linear: linear.clone(), translations }), label),
    };
    Ok((ens, BlockSystem::coordinate(d + 1, d)?.with_block_tol(0.0)))
}

type C2 = [[Complex64; 2]; 2];

fn c2_mul(x: &C2, y: &C2) -> C2 {
    let mut z = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            z[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
        }
    }
    z
}

/// Inverse of a determinant-one matrix.
fn c2_inv_sl(x: &C2) -> C2 {
    [[x[1][1], -x[0][1]], [-x[1][0], x[0][0]]]
}

/// `exp(X)` for traceless `X`: `X² = s²·I` with `s² = −det X`, so
/// `exp X = cosh(s)·I + sinh(s)/s·X`.
fn c2_exp_traceless(x: &C2) -> C2 {
    let s2 = x[0][0] * x[0][0] + x[0][1] * x[1][0];
    let s = s2.sqrt();
    let sinhc = if s.norm() < 1e-6 { Complex64::new(1.0, 0.0) + s2 / 6.0 } else { s.sinh() / s };
    let ch = s.cosh();
    [[ch + sinhc * x[0][0], sinhc * x[0][1]], [sinhc * x[1][0], ch + sinhc * x[1][1]]]
}

/// Real `4×4` form of a complex `2×2` matrix: the entry `a + ib` becomes
/// the block `[[a, −b], [b, a]]`. The result commutes with
/// `J = diag(J1, J1)`, `J1 = [[0, −1], [1, 0]]`.
pub fn realify_c2(x: &[[Complex64; 2]; 2]) -> Matrix {
    let mut g = Matrix::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            let z = x[i][j];
            g[(2 * i, 2 * j)] = z.re;
            g[(2 * i, 2 * j + 1)] = -z.im;
            g[(2 * i + 1, 2 * j)] = z.im;
            g[(2 * i + 1, 2 * j + 1)] = z.re;
        }
    }
    g
}

/// The complex structure `J = diag(J1, J1)` on `R^4`.
pub fn complex_structure() -> Matrix {
    let mut j = Matrix::zeros(4, 4);
    j[(0, 1)] = -1.0;
    j[(1, 0)] = 1.0;
    j[(2, 3)] = -1.0;
    j[(3, 2)] = 1.0;
    j
}

/// Scale of the Lie-algebra generators of [`build_sl2c_ensemble`].
pub const SL2C_GENERATOR_SCALE: f64 = 0.6;

/// Random elements of `SL_2(C)` realized in `SL_4(R)`. Two generators
/// `exp(X1)`, `exp(X2)` with Gaussian traceless `X_i`; the atoms are the two
/// generators followed by random words of length 2 to 4 in the generators
/// and their inverses, all with equal weight.
pub fn build_sl2c_ensemble(atom_count: usize, seed: u64) -> Result<MatrixEnsemble> {
    MatrixEnsemble::uniform(
        sl2c_atoms(atom_count, seed)?.iter().map(realify_c2).collect(),
        format!("sl2c(n={atom_count},seed={seed})"),
    )
}

pub(crate) fn sl2c_atoms(atom_count: usize, seed: u64) -> Result<Vec<C2>> {
    if atom_count < 2 {
        return Err(Error::arg("sl2c ensemble needs at least 2 atoms"));
    }
    let mut rng = rng::stream(seed, 0);
    let gaussian = |rng: &mut SimRng| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
            * SL2C_GENERATOR_SCALE
    };
    let generator = |rng: &mut SimRng| {
        let a = gaussian(rng);
        let b = gaussian(rng);
        let c = gaussian(rng);
        c2_exp_traceless(&[[a, b], [c, -a]])
    };
    let g1 = generator(&mut rng);
    let g2 = generator(&mut rng);
    let letters = [g1, g2, c2_inv_sl(&g1), c2_inv_sl(&g2)];
    let mut atoms = vec![g1, g2];
    while atoms.len() < atom_count {
        let len = rng.random_range(2..=4);
        let mut w = letters[rng.random_range(0..4)];
        let mut last = letters.iter().position(|l| l == &w).unwrap_or(0);
        let mut i = 1;
        while i < len {
            let next = rng.random_range(0..4);
            // skip immediate cancellations x·x⁻¹
            if next ^ 2 == last {
                continue;
            }
            w = c2_mul(&letters[next], &w);
            last = next;
            i += 1;
        }
        atoms.push(w);
    }
    Ok(atoms)
}
