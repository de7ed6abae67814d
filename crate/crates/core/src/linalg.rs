//! Dense linear algebra primitives shared by every other module: projective
//! points, exterior powers, the gauge `N(g) = max(‖g‖, ‖g⁻¹‖)`, and
//! tolerance-aware span/rank machinery on subspaces.
//!
//! Norms are Euclidean on vectors and spectral (largest singular value) on
//! matrices. Everything here is a pure function of its inputs.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, Dyn, SVD};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff used by [`rank_span`] when callers have no
/// better information.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Smallest admissible ratio of extreme singular values.
pub const INVERTIBILITY_TOL: f64 = 1e-12;

const SINGULAR_RATIO: f64 = 1e-14;

pub fn is_finite_matrix(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn is_finite_vector(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Spectral norm.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 {
        return m.norm();
    }
    svd(m).singular_values.iter().fold(0.0_f64, |a, &s| a.max(s))
}

/// Thin SVD with singular values in nonincreasing order. Computed with
/// faer; nalgebra's own SVD returns wrong factors for some nearly
/// rank-deficient input, so it is only a fallback when the faer result
/// does not verify.
pub fn svd(m: &Matrix) -> SVD<f64, Dyn, Dyn> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if let Some(s) = faer_svd(m).filter(|s| svd_verifies(m, s, scale)) {
        return s;
    }
    m.clone().svd_unordered(true, true)
}

fn faer_svd(m: &Matrix) -> Option<SVD<f64, Dyn, Dyn>> {
    let (r, c) = m.shape();
    let k = r.min(c);
    let f = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let s = f.thin_svd().ok()?;
    let (u, v, sv) = (s.U(), s.V(), s.S().column_vector());
    Some(SVD {
        u: Some(Matrix::from_fn(r, k, |i, j| u[(i, j)])),
        v_t: Some(Matrix::from_fn(k, c, |i, j| v[(j, i)])),
        singular_values: DVector::from_fn(k, |i, _| sv[i]),
    })
}

fn svd_verifies(m: &Matrix, s: &SVD<f64, Dyn, Dyn>, scale: f64) -> bool {
    let (Some(u), Some(vt)) = (&s.u, &s.v_t) else { return false };
    let orth = |q: &Matrix| (q.transpose() * q - Matrix::identity(q.ncols(), q.ncols())).amax() <= 1e-10;
    let vt_t = vt.transpose();
    if !orth(u) || !orth(&vt_t) {
        return false;
    }
    let back = u * Matrix::from_diagonal(&s.singular_values) * vt;
    (back - m).amax() <= 1e-10 * scale
}

/// `σ_min(g) > tol · σ_max(g)`, the invertibility criterion used for atoms
/// and samples.
pub fn is_invertible(g: &Matrix) -> bool {
    if !g.is_square() || g.is_empty() || !is_finite_matrix(g) {
        return false;
    }
    let sv = svd(g).singular_values;
    let hi = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    let lo = sv.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    hi > 0.0 && lo > INVERTIBILITY_TOL * hi
}

pub fn log_abs_det(g: &Matrix) -> f64 {
    g.clone().lu().determinant().abs().ln()
}

/// Index of the largest-magnitude coordinate, first one on ties.
fn sign_pivot(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// `+1` or `-1` so that multiplying `v` by it makes the sign pivot positive.
pub fn canonical_sign(v: &[f64]) -> f64 {
    if v.is_empty() || v[sign_pivot(v)] >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// A point of the projective space: a unit vector whose largest-magnitude
/// coordinate is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjPoint {
    coords: Vector,
}

impl ProjPoint {
    pub fn coords(&self) -> &Vector {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_vector(self) -> Vector {
        self.coords
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        proj_normalize(&Vector::from_column_slice(v))
    }

    /// The standard basis line `[e_i]`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut coords = Vector::zeros(dim);
        coords[i] = 1.0;
        ProjPoint { coords }
    }
}

impl Serialize for ProjPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProjPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ProjPoint::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

/// Normalizes `v` to a unit vector with canonical sign.
pub fn proj_normalize(v: &Vector) -> Result<ProjPoint> {
    let norm = v.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateVector);
    }
    let mut coords = v / norm;
    if canonical_sign(coords.as_slice()) < 0.0 {
        coords.neg_mut();
    }
    Ok(ProjPoint { coords })
}

/// Sine of the angle between two lines, computed as `‖p − ⟨p,q⟩q‖` which
/// keeps full relative accuracy for nearby lines.
pub fn proj_distance(p: &ProjPoint, q: &ProjPoint) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    // evaluate in a fixed argument order so the result is bitwise symmetric
    let (a, b) = if lex_le(p.coords.as_slice(), q.coords.as_slice()) { (p, q) } else { (q, p) };
    Ok(line_sine(a.coords.as_slice(), b.coords.as_slice()))
}

fn lex_le(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    true
}

/// Sine of the angle between the lines through unit vectors `a` and `b`.
pub(crate) fn line_sine(a: &[f64], b: &[f64]) -> f64 {
    let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - c * y).powi(2)).sum();
    r2.sqrt().min(1.0)
}

/// Distance from a projective point to the projective subspace `P(S)`, as
/// the sine of the angle between the line and `S`.
pub fn distance_to_subspace(p: &ProjPoint, s: &Subspace) -> Result<f64> {
    if p.dim() != s.ambient_dim() {
        return Err(Error::DimensionMismatch { expected: s.ambient_dim(), got: p.dim() });
    }
    Ok(s.residual(p.coords()).min(1.0))
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// The `k`-subsets of `0..d` in lexicographic order; position in this list
/// is the index of `e_{i1}∧…∧e_{ik}` in the exterior power basis.
pub fn wedge_basis(d: usize, k: usize) -> Vec<Vec<usize>> {
    (0..d).combinations(k).collect()
}

/// Position of a sorted subset in [`wedge_basis`].
pub fn wedge_index(d: usize, subset: &[usize]) -> Option<usize> {
    wedge_basis(d, subset.len()).iter().position(|s| s == subset)
}

/// Matrix of the induced action on `∧^k R^d` in the lexicographic basis;
/// entry `(I, J)` is the minor of `g` on rows `I` and columns `J`.
pub fn wedge_power(g: &Matrix, k: usize) -> Result<Matrix> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), got: g.ncols() });
    }
    let d = g.nrows();
    if k == 0 || k > d {
        return Err(Error::WedgeDegree { k, dim: d });
    }
    if k == 1 {
        return Ok(g.clone());
    }
    let basis = wedge_basis(d, k);
    let m = basis.len();
    let mut out = Matrix::zeros(m, m);
    let mut buf = vec![0.0; k * k];
    for (i, rows) in basis.iter().enumerate() {
        for (j, cols) in basis.iter().enumerate() {
            for (a, &r) in rows.iter().enumerate() {
                for (b, &c) in cols.iter().enumerate() {
                    buf[a * k + b] = g[(r, c)];
                }
            }
            out[(i, j)] = det_in_place(&mut buf, k);
        }
    }
    Ok(out)
}

/// Determinant of a row-major `k×k` buffer by partial-pivot elimination.
/// An exactly zero row yields exactly zero.
fn det_in_place(a: &mut [f64], k: usize) -> f64 {
    match k {
        1 => return a[0],
        2 => return a[0] * a[3] - a[1] * a[2],
        _ => {}
    }
    let mut det = 1.0;
    for col in 0..k {
        let mut piv = col;
        for r in col + 1..k {
            if a[r * k + col].abs() > a[piv * k + col].abs() {
                piv = r;
            }
        }
        let p = a[piv * k + col];
        if p == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..k {
                a.swap(piv * k + c, col * k + c);
            }
            det = -det;
        }
        det *= p;
        for r in col + 1..k {
            let f = a[r * k + col] / p;
            if f != 0.0 {
                for c in col + 1..k {
                    a[r * k + c] -= f * a[col * k + c];
                }
            }
        }
    }
    det
}

/// `N(g) = max(‖g‖, ‖g⁻¹‖)`, read off the extreme singular values.
pub fn gauge_n(g: &Matrix) -> Result<f64> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), got: g.ncols() });
    }
    if !is_finite_matrix(g) {
        return Err(Error::NonFinite("gauge_n input"));
    }
    let sv = g.clone().singular_values();
    let smax = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    let smin = sv.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    if !(smin > SINGULAR_RATIO * smax) {
        return Err(Error::Singular);
    }
    Ok(smax.max(1.0 / smin))
}

/// Orthonormalizes the columns of `q` in place (modified Gram–Schmidt with a
/// second re-orthogonalization pass) and adds the log of each column's
/// residual norm, the diagonal of the triangular factor, to `log_stretch`.
pub fn orthonormalize_columns(q: &mut Matrix, log_stretch: &mut [f64]) -> Result<()> {
    let d = q.nrows();
    let m = q.ncols();
    debug_assert!(log_stretch.len() >= m);
    let data = q.as_mut_slice();
    for j in 0..m {
        let (prev, rest) = data.split_at_mut(j * d);
        let v = &mut rest[..d];
        for _ in 0..2 {
            for i in 0..j {
                let qi = &prev[i * d..(i + 1) * d];
                let r: f64 = qi.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (x, a) in v.iter_mut().zip(qi) {
                    *x -= r * a;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Singular);
        }
        log_stretch[j] += norm.ln();
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    Ok(())
}

/// A linear subspace given by an orthonormal basis (columns of `basis`).
/// The zero subspace has a `d×0` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    ambient_dim: usize,
    basis: Matrix,
}

impl Subspace {
    pub fn zero(d: usize) -> Self {
        Subspace { ambient_dim: d, basis: Matrix::zeros(d, 0) }
    }

    pub fn full(d: usize) -> Self {
        Subspace { ambient_dim: d, basis: Matrix::identity(d, d) }
    }

    /// `span(e_i : i ∈ indices)` with exact coordinate vectors.
    pub fn coordinate(d: usize, indices: &[usize]) -> Self {
        let mut basis = Matrix::zeros(d, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            basis[(i, c)] = 1.0;
        }
        Subspace { ambient_dim: d, basis }
    }

    pub fn from_orthonormal(basis: Matrix) -> Result<Self> {
        let gram = basis.transpose() * &basis;
        let err = (gram - Matrix::identity(basis.ncols(), basis.ncols())).amax();
        if err > 1e-10 || !is_finite_matrix(&basis) {
            return Err(Error::arg(format!("basis is not orthonormal (Gram error {err:e})")));
        }
        Ok(Subspace { ambient_dim: basis.nrows(), basis })
    }

    /// Orthonormal basis of the column span of `m` (see [`rank_span`]).
    pub fn column_span(m: &Matrix, tol: f64) -> Self {
        let d = m.nrows();
        if m.ncols() == 0 {
            return Subspace::zero(d);
        }
        let svd = svd(m);
        let u = svd.u.expect("left singular vectors requested");
        let sv = svd.singular_values;
        let smax = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
        if !(smax > 0.0) {
            return Subspace::zero(d);
        }
        let mut keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > tol * smax).collect();
        keep.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
        let mut basis = Matrix::zeros(d, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            basis.set_column(c, &u.column(i));
        }
        Subspace { ambient_dim: d, basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn basis_vectors(&self) -> Vec<Vector> {
        self.basis.column_iter().map(|c| c.into_owned()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient_dim
    }

    pub fn project(&self, v: &Vector) -> Vector {
        if self.is_zero() {
            return Vector::zeros(v.len());
        }
        &self.basis * (self.basis.transpose() * v)
    }

    /// `‖v − P_S v‖`.
    pub fn residual(&self, v: &Vector) -> f64 {
        (v - self.project(v)).norm()
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        self.residual(v) <= tol * v.norm()
    }

    /// Whether every basis vector of `other` lies in `self` up to `tol`.
    pub fn contains_subspace(&self, other: &Subspace, tol: f64) -> bool {
        other.basis.column_iter().all(|c| self.contains(&c.into_owned(), tol))
    }

    pub fn orthogonal_complement(&self) -> Subspace {
        let d = self.ambient_dim;
        if self.is_zero() {
            return Subspace::full(d);
        }
        if self.is_full() {
            return Subspace::zero(d);
        }
        let proj = Matrix::identity(d, d) - &self.basis * self.basis.transpose();
        // singular values of the complementary projector are 1 or 0
        Subspace::column_span(&proj, 0.5)
    }

    pub fn sum(&self, other: &Subspace, tol: f64) -> Result<Subspace> {
        self.check_ambient(other)?;
        let mut m = Matrix::zeros(self.ambient_dim, self.dim() + other.dim());
        m.columns_mut(0, self.dim()).copy_from(&self.basis);
        m.columns_mut(self.dim(), other.dim()).copy_from(&other.basis);
        Ok(Subspace::column_span(&m, tol))
    }

    /// Directions of `self` whose angle to `other` has sine at most
    /// `angle_tol`, read off the principal angles.
    pub fn intersection(&self, other: &Subspace, angle_tol: f64) -> Result<Subspace> {
        self.check_ambient(other)?;
        if self.is_zero() || other.is_zero() {
            return Ok(Subspace::zero(self.ambient_dim));
        }
        let cross = self.basis.transpose() * &other.basis;
        let svd = svd(&cross);
        let u = svd.u.expect("left singular vectors requested");
        let cos_min = (1.0 - angle_tol * angle_tol).max(0.0).sqrt();
        let keep: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] >= cos_min).collect();
        let mut coeffs = Matrix::zeros(self.dim(), keep.len());
        for (c, &i) in keep.iter().enumerate() {
            coeffs.set_column(c, &u.column(i));
        }
        let basis = &self.basis * coeffs;
        // re-orthonormalize to clean accumulated rounding
        Ok(Subspace::column_span(&basis, 0.5))
    }

    fn check_ambient(&self, other: &Subspace) -> Result<()> {
        if self.ambient_dim != other.ambient_dim {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim, got: other.ambient_dim });
        }
        Ok(())
    }
}

/// Orthonormal basis of `span(vectors)`, keeping singular directions above
/// `tol · σ_max`.
pub fn rank_span(vectors: &[Vector], tol: f64) -> Result<Subspace> {
    let first = vectors.first().ok_or(Error::Empty("rank_span vectors"))?;
    let d = first.len();
    let mut m = Matrix::zeros(d, vectors.len());
    for (c, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.len() });
        }
        m.set_column(c, v);
    }
    Ok(Subspace::column_span(&m, tol))
}

/// Sine of the largest principal angle between two subspaces of equal
/// dimension.
pub fn principal_angle_distance(s1: &Subspace, s2: &Subspace) -> Result<f64> {
    s1.check_ambient(s2)?;
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch { expected: s1.dim(), got: s2.dim() });
    }
    if s1.is_zero() {
        return Ok(0.0);
    }
    let resid = &s2.basis - &s1.basis * (s1.basis.transpose() * &s2.basis);
    Ok(op_norm(&resid).min(1.0))
}

#[derive(Serialize, Deserialize)]
struct SubspaceRepr {
    dim: usize,
    ambient_dim: usize,
    basis: Vec<Vec<f64>>,
}

impl Serialize for Subspace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SubspaceRepr {
            dim: self.dim(),
            ambient_dim: self.ambient_dim,
            basis: self.basis.column_iter().map(|c| c.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Subspace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SubspaceRepr::deserialize(d)?;
        let mut basis = Matrix::zeros(repr.ambient_dim, repr.basis.len());
        for (c, v) in repr.basis.iter().enumerate() {
            if v.len() != repr.ambient_dim {
                return Err(serde::de::Error::custom("basis vector length differs from ambient_dim"));
            }
            basis.set_column(c, &Vector::from_column_slice(v));
        }
        Subspace::from_orthonormal(basis).map_err(serde::de::Error::custom)
    }
}

/// Matrix from nested rows.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::Empty("matrix rows"));
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::arg("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn complement_of_hyperplane_is_orthogonal() {
        // a rank-one projector the default SVD threshold gets wrong
        let b = Matrix::from_row_slice(5, 4, &[
            -0.415793569330255, 0.24285286388074245, -0.15535172055336327, 0.6678450439953456,
            -0.707734872061735, -0.3596510359055541, 0.34347378689883956, 0.15905046241866821,
            -0.196092913884828, 0.016018692622754526, -0.9029886389803627, -0.02649713653516944,
            -0.011323327081196854, -0.8499236477215569, -0.20615586378429274, -0.12809753535819843,
            0.5363267753518709, -0.2984071269378868, -0.0016965654201449645, 0.7152446230527392,
        ]);
        let w = Subspace::from_orthonormal(b.clone()).unwrap();
        let c = w.orthogonal_complement();
        assert_eq!(c.dim(), 1);
        assert!((b.transpose() * c.basis()).amax() < 1e-14);
    }

    #[test]
    fn svd_of_nearly_rank_one_projector() {
        let p = Matrix::from_row_slice(2, 2, &[
            0.00000000992604665, -0.00009962954603985,
            -0.00009962954603985, 0.999_999_990_073_953_5,
        ]);
        let s = svd(&p);
        let back = s.u.as_ref().unwrap() * Matrix::from_diagonal(&s.singular_values) * s.v_t.as_ref().unwrap();
        assert!((back - &p).amax() < 1e-14);
        assert!(s.singular_values[0] >= s.singular_values[1]);
        let w = Subspace::column_span(&Matrix::from_row_slice(2, 1, &[0.9999999950370, 0.0000996295]), 0.5);
        let c = w.orthogonal_complement();
        assert!((w.basis().transpose() * c.basis()).amax() < 1e-14);
    }

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
        Matrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn proj_normalize_examples() {
        assert_eq!(proj_normalize(&v(&[0.0, -3.0])).unwrap().coords().as_slice(), &[0.0, 1.0]);
        assert_eq!(proj_normalize(&v(&[1.0, 0.0])).unwrap().coords().as_slice(), &[1.0, 0.0]);
        let p = proj_normalize(&v(&[3.0, 4.0])).unwrap();
        assert!(close(p.coords()[0], 0.6, 1e-15) && close(p.coords()[1], 0.8, 1e-15));
        assert!(matches!(proj_normalize(&v(&[0.0, 0.0])), Err(Error::DegenerateVector)));
        assert!(matches!(proj_normalize(&v(&[f64::NAN, 1.0])), Err(Error::DegenerateVector)));
        // tie between |1| and |-1|: lowest index wins
        let t = proj_normalize(&v(&[-1.0, 1.0])).unwrap();
        assert!(t.coords()[0] > 0.0);
    }

    #[test]
    fn proj_distance_examples() {
        let e1 = ProjPoint::basis(2, 0);
        let e2 = ProjPoint::basis(2, 1);
        let diag = ProjPoint::from_slice(&[1.0, 1.0]).unwrap();
        assert_eq!(proj_distance(&e1, &e1).unwrap(), 0.0);
        assert!(close(proj_distance(&e1, &e2).unwrap(), 1.0, 1e-15));
        assert!(close(proj_distance(&e1, &diag).unwrap(), 0.5f64.sqrt(), 1e-15));
        assert!(proj_distance(&e1, &ProjPoint::basis(3, 0)).is_err());
    }

    #[test]
    fn wedge_examples() {
        let id = Matrix::identity(4, 4);
        for k in 1..=4 {
            let w = wedge_power(&id, k).unwrap();
            assert_eq!(w, Matrix::identity(binomial(4, k), binomial(4, k)));
        }
        let g = Matrix::from_diagonal(&v(&[3.0, 2.0, 1.0]));
        assert_eq!(wedge_power(&g, 2).unwrap(), Matrix::from_diagonal(&v(&[6.0, 3.0, 2.0])));
        assert_eq!(wedge_power(&g, 3).unwrap()[(0, 0)], 6.0);
        assert!(matches!(wedge_power(&g, 0), Err(Error::WedgeDegree { .. })));
        assert!(matches!(wedge_power(&g, 4), Err(Error::WedgeDegree { .. })));
    }

    #[test]
    fn wedge_multiplicative_random_4x4() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_matrix(&mut rng, 4);
        let h = random_matrix(&mut rng, 4);
        // oracle: multiply first, then take minors
        let lhs = wedge_power(&(&g * &h), 2).unwrap();
        let rhs = wedge_power(&g, 2).unwrap() * wedge_power(&h, 2).unwrap();
        let scale = lhs.amax();
        assert!((lhs - rhs).amax() <= 1e-10 * scale);
    }

    #[test]
    fn wedge_index_is_lexicographic() {
        assert_eq!(wedge_basis(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(wedge_index(5, &[0, 4]), Some(3));
    }

    #[test]
    fn gauge_examples() {
        assert!(close(gauge_n(&Matrix::identity(3, 3)).unwrap(), 1.0, 1e-14));
        assert!(close(gauge_n(&Matrix::from_diagonal(&v(&[2.0, 0.5]))).unwrap(), 2.0, 1e-14));
        assert!(close(gauge_n(&Matrix::from_diagonal(&v(&[4.0, 1.0]))).unwrap(), 4.0, 1e-14));
        let sing = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(gauge_n(&sing), Err(Error::Singular)));
    }

    #[test]
    fn rank_span_examples() {
        let s = rank_span(&[v(&[1.0, 0.0]), v(&[2.0, 0.0])], DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.dim(), 1);
        assert!(principal_angle_distance(&s, &Subspace::coordinate(2, &[0])).unwrap() < 1e-15);
        assert_eq!(rank_span(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])], DEFAULT_RANK_TOL).unwrap().dim(), 2);
        let s = rank_span(&[v(&[1.0, 0.0, 0.0]), v(&[1.0, 1e-12, 0.0])], 1e-8).unwrap();
        assert_eq!(s.dim(), 1);
        assert!(matches!(rank_span(&[], 1e-8), Err(Error::Empty(_))));
    }

    #[test]
    fn principal_angle_examples() {
        let e1 = Subspace::coordinate(2, &[0]);
        let e2 = Subspace::coordinate(2, &[1]);
        let diag = rank_span(&[v(&[1.0, 1.0])], 1e-8).unwrap();
        assert_eq!(principal_angle_distance(&e1, &e1).unwrap(), 0.0);
        assert!(close(principal_angle_distance(&e1, &e2).unwrap(), 1.0, 1e-15));
        assert!(close(principal_angle_distance(&e1, &diag).unwrap(), 0.5f64.sqrt(), 1e-15));
        assert!(principal_angle_distance(&e1, &Subspace::full(2)).is_err());
    }

    #[test]
    fn complement_and_intersection() {
        let w = Subspace::coordinate(3, &[0, 1]);
        let c = w.orthogonal_complement();
        assert_eq!(c.dim(), 1);
        assert!(principal_angle_distance(&c, &Subspace::coordinate(3, &[2])).unwrap() < 1e-14);
        let u = Subspace::coordinate(3, &[1, 2]);
        let i = w.intersection(&u, 1e-8).unwrap();
        assert_eq!(i.dim(), 1);
        assert!(principal_angle_distance(&i, &Subspace::coordinate(3, &[1])).unwrap() < 1e-14);
        assert_eq!(w.sum(&u, 1e-8).unwrap().dim(), 3);
        assert!(Subspace::zero(3).orthogonal_complement().is_full());
    }

    #[test]
    fn orthonormalize_diagonal_stretch() {
        let mut q = Matrix::from_diagonal(&v(&[3.0, -2.0, 1.0]));
        let mut logs = [0.0; 3];
        orthonormalize_columns(&mut q, &mut logs).unwrap();
        assert!(close(logs[0], 3f64.ln(), 1e-15));
        assert!(close(logs[1], 2f64.ln(), 1e-15));
        assert!(close(logs[2], 0.0, 1e-15));
    }

    proptest! {
        #[test]
        fn normalize_idempotent_and_sign_invariant(x in proptest::collection::vec(-10.0f64..10.0, 1..6)) {
            let vec = Vector::from_vec(x);
            prop_assume!(vec.norm() > 1e-6);
            let p = proj_normalize(&vec).unwrap();
            let q = proj_normalize(&-vec.clone()).unwrap();
            prop_assert_eq!(&p, &q);
            let pp = proj_normalize(p.coords()).unwrap();
            prop_assert!((pp.coords() - p.coords()).amax() <= 1e-15);
            prop_assert!((p.coords().norm() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn wedge_norm_is_product_of_top_singular_values(seed in 0u64..200, d in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_matrix(&mut rng, d);
            let mut sv: Vec<f64> = g.clone().singular_values().iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            for k in 1..=d {
                let expected: f64 = sv[..k].iter().product();
                let got = op_norm(&wedge_power(&g, k).unwrap());
                prop_assert!((got - expected).abs() <= 1e-9 * expected);
            }
        }

        #[test]
        fn wedge_multiplicative(seed in 0u64..200, d in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_matrix(&mut rng, d);
            let h = random_matrix(&mut rng, d);
            for k in 1..=d {
                let lhs = wedge_power(&(&g * &h), k).unwrap();
                let rhs = wedge_power(&g, k).unwrap() * wedge_power(&h, k).unwrap();
                let scale = lhs.amax().max(rhs.amax());
                prop_assert!((lhs - rhs).amax() <= 1e-10 * scale);
            }
        }

        #[test]
        fn rank_span_orthonormal_and_stable(seed in 0u64..200, d in 2usize..6, m in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vs: Vec<Vector> = (0..m).map(|_| Vector::from_fn(d, |_, _| rng.random::<f64>() - 0.5)).collect();
            let s = rank_span(&vs, DEFAULT_RANK_TOL).unwrap();
            let gram = s.basis().transpose() * s.basis();
            prop_assert!((gram - Matrix::identity(s.dim(), s.dim())).amax() <= 1e-10);
            let again = rank_span(&s.basis_vectors(), DEFAULT_RANK_TOL).unwrap();
            prop_assert!(principal_angle_distance(&s, &again).unwrap() <= 1e-10);
        }

        #[test]
        fn complement_is_orthogonal_even_near_coordinate_planes(
            seed in 0u64..500,
            d in 2usize..6,
            tilt in prop_oneof![Just(0.0), 1e-12f64..1e-3, 1e-3f64..1.0],
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = 1 + (seed as usize) % (d - 1);
            let mut b = Matrix::identity(d, r);
            b += Matrix::from_fn(d, r, |_, _| tilt * (rng.random::<f64>() - 0.5));
            let w = Subspace::column_span(&b, 1e-14);
            let c = w.orthogonal_complement();
            prop_assert_eq!(c.dim(), d - r);
            prop_assert!((w.basis().transpose() * c.basis()).amax() <= 1e-13);
            let gram = c.basis().transpose() * c.basis();
            prop_assert!((gram - Matrix::identity(d - r, d - r)).amax() <= 1e-13);
        }
    }
}
