//! Random products `L_n = X_n⋯X_1` and the exponent estimators built on them.
//!
//! Every estimator takes a seed instead of a generator: repetition `r` draws
//! from [`rng::stream`]`(seed, r)`. Two estimators run with the same seed on
//! ensembles with the same atom layout therefore see the same matrix
//! sequence, and results do not depend on how repetitions are scheduled.

use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{quotient_ensemble, restrict_to_invariant, BlockSystem, MatrixEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{is_finite_vector, op_norm, orthonormalize_columns, Matrix, Vector};
use crate::rng::{self, SimRng};
use crate::stats::{mean, mean_stderr, GrowthEstimate};

/// `exp(log_scale) · matrix`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMatrix {
    pub matrix: Matrix,
    pub log_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductOrder {
    /// `L_n = X_n ⋯ X_1`.
    Left,
    /// `R_n = X_1 ⋯ X_n`.
    Right,
}

/// Running product that is renormalized by a power of two after every
/// step, so the stored matrix stays near unit size and the scale is an
/// exact integer exponent.
#[derive(Clone, Debug)]
pub(crate) struct ScaledProduct {
    pub(crate) m: Matrix,
    buf: Matrix,
    exp2: i64,
}

impl ScaledProduct {
    pub(crate) fn new(d: usize) -> Self {
        ScaledProduct { m: Matrix::identity(d, d), buf: Matrix::zeros(d, d), exp2: 0 }
    }

    pub(crate) fn step(&mut self, x: &Matrix, order: ProductOrder) -> Result<()> {
        match order {
            ProductOrder::Left => self.buf.gemm(1.0, x, &self.m, 0.0),
            ProductOrder::Right => self.buf.gemm(1.0, &self.m, x, 0.0),
        }
        std::mem::swap(&mut self.m, &mut self.buf);
        let amax = self.m.amax();
        if !(amax.is_finite() && amax > 0.0) {
            return Err(Error::NonFinite("random product"));
        }
        let e = amax.log2().floor() as i32;
        if e != 0 {
            // power-of-two scaling is exact
            self.m *= 2f64.powi(-e);
            self.exp2 += e as i64;
        }
        Ok(())
    }

    pub(crate) fn log_scale(&self) -> f64 {
        self.exp2 as f64 * std::f64::consts::LN_2
    }

    pub(crate) fn log_norm(&self) -> f64 {
        op_norm(&self.m).ln() + self.log_scale()
    }
}

/// Lazily yields `L_1, …, L_n` (or the right products) in scaled form.
pub struct ProductTrajectory<'a> {
    ens: &'a MatrixEnsemble,
    rng: SimRng,
    remaining: usize,
    order: ProductOrder,
    prod: ScaledProduct,
}

impl Iterator for ProductTrajectory<'_> {
    type Item = Result<ScaledMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let step = self.ens.sample(&mut self.rng).and_then(|x| self.prod.step(&x, self.order));
        Some(step.map(|_| ScaledMatrix { matrix: self.prod.m.clone(), log_scale: self.prod.log_scale() }))
    }
}

pub fn product_trajectory(ens: &MatrixEnsemble, n: usize, rng: SimRng) -> ProductTrajectory<'_> {
    ProductTrajectory { ens, rng, remaining: n, order: ProductOrder::Left, prod: ScaledProduct::new(ens.dim()) }
}

pub fn right_product_trajectory(ens: &MatrixEnsemble, n: usize, rng: SimRng) -> ProductTrajectory<'_> {
    ProductTrajectory { ens, rng, remaining: n, order: ProductOrder::Right, prod: ScaledProduct::new(ens.dim()) }
}

fn check_horizon(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::arg("horizon n must be at least 1"));
    }
    Ok(())
}

fn per_rep<T: Send>(reps: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..reps).into_par_iter().map(f).collect()
}

/// Mean over repetitions of `(1/n) log ‖L_n‖`.
pub fn top_exponent(ens: &MatrixEnsemble, n: usize, reps: usize, seed: u64) -> Result<GrowthEstimate> {
    check_horizon(n)?;
    if reps < 2 {
        return Err(Error::arg("top_exponent needs at least 2 repetitions"));
    }
    let samples = per_rep(reps, |r| {
        let mut rng = rng::stream(seed, r as u64);
        let mut prod = ScaledProduct::new(ens.dim());
        for _ in 0..n {
            let x = ens.sample(&mut rng)?;
            prod.step(&x, ProductOrder::Left)?;
        }
        Ok(prod.log_norm() / n as f64)
    })?;
    Ok(GrowthEstimate::from_samples(&samples, n))
}

/// Full-spectrum estimate with the per-repetition values kept for partial
/// sums and consistency checks.
#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    pub exponents: Vec<GrowthEstimate>,
    /// `samples[r][i]`: repetition `r`, exponent `i` (same order as
    /// `exponents`).
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
    /// `(1/n) log |det L_n|` per repetition.
    #[serde(skip)]
    pub log_det: Vec<f64>,
}

impl Spectrum {
    pub fn values(&self) -> Vec<f64> {
        self.exponents.iter().map(|e| e.value).collect()
    }

    /// `λ_1 + … + λ_k` with the standard error of the per-repetition sums.
    pub fn partial_sum(&self, k: usize) -> GrowthEstimate {
        let sums: Vec<f64> = self.samples.iter().map(|s| s[..k].iter().sum()).collect();
        let horizon = self.exponents.first().map_or(0, |e| e.horizon);
        GrowthEstimate::from_samples(&sums, horizon)
    }

    pub fn mean_log_det(&self) -> f64 {
        mean(&self.log_det)
    }
}

/// Lyapunov spectrum by iterated orthonormalization: `Q ← X·Q`, then
/// Gram–Schmidt, summing the log of each column's stretch. Starts from the
/// identity frame; the exponents are reported in nonincreasing order of
/// their means, with each repetition's values permuted the same way.
pub fn spectrum(ens: &MatrixEnsemble, n: usize, reps: usize, seed: u64) -> Result<Spectrum> {
    check_horizon(n)?;
    let reps = reps.max(1);
    let d = ens.dim();
    let atom_log_det: Option<Vec<f64>> =
        ens.atoms().map(|a| a.iter().map(|a| a.matrix.clone().lu().determinant().abs().ln()).collect());
    let runs = per_rep(reps, |r| {
        let mut rng = rng::stream(seed, r as u64);
        let mut q = Matrix::identity(d, d);
        let mut buf = Matrix::zeros(d, d);
        let mut logs = vec![0.0; d];
        let mut log_det = 0.0;
        for _ in 0..n {
            let x = match (&atom_log_det, ens.draw_index(&mut rng)) {
                (Some(ld), Some(i)) => {
                    log_det += ld[i];
                    std::borrow::Cow::Borrowed(&ens.atoms().expect("finite")[i].matrix)
                }
                _ => {
                    let x = ens.sample(&mut rng)?;
                    log_det += x.clone().into_owned().lu().determinant().abs().ln();
                    x
                }
            };
            buf.gemm(1.0, &x, &q, 0.0);
            std::mem::swap(&mut q, &mut buf);
            orthonormalize_columns(&mut q, &mut logs)?;
        }
        let nf = n as f64;
        Ok((logs.into_iter().map(|l| l / nf).collect::<Vec<f64>>(), log_det / nf))
    })?;
    let means: Vec<f64> = (0..d).map(|i| mean(&runs.iter().map(|r| r.0[i]).collect::<Vec<_>>())).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let samples: Vec<Vec<f64>> = runs.iter().map(|(v, _)| order.iter().map(|&i| v[i]).collect()).collect();
    let exponents = (0..d)
        .map(|i| GrowthEstimate::from_samples(&samples.iter().map(|s| s[i]).collect::<Vec<_>>(), n))
        .collect();
    let log_det = runs.into_iter().map(|(_, ld)| ld).collect();
    Ok(Spectrum { exponents, samples, log_det })
}

/// Mean over repetitions of `(1/n) log(‖L_n v‖ / ‖v‖)`, accumulated one
/// step at a time so the vector never under- or overflows.
pub fn vector_growth(ens: &MatrixEnsemble, v: &Vector, n: usize, reps: usize, seed: u64) -> Result<GrowthEstimate> {
    check_horizon(n)?;
    if v.len() != ens.dim() {
        return Err(Error::DimensionMismatch { expected: ens.dim(), got: v.len() });
    }
    let norm = v.norm();
    if !(norm > 0.0 && is_finite_vector(v)) {
        return Err(Error::DegenerateVector);
    }
    let start = v / norm;
    let samples = per_rep(reps.max(1), |r| {
        let mut rng = rng::stream(seed, r as u64);
        let mut x = start.clone();
        let mut buf = Vector::zeros(x.len());
        let mut log = 0.0;
        for _ in 0..n {
            let g = ens.sample(&mut rng)?;
            buf.gemv(1.0, &g, &x, 0.0);
            let nr = buf.norm();
            if !(nr > 0.0 && nr.is_finite()) {
                return Err(Error::NonFinite("vector growth"));
            }
            log += nr.ln();
            x.copy_from(&buf);
            x /= nr;
        }
        Ok(log / n as f64)
    })?;
    Ok(GrowthEstimate::from_samples(&samples, n))
}

#[derive(Clone, Debug, Serialize)]
pub struct SubspaceExponents {
    pub lambda1_w: GrowthEstimate,
    pub lambda1_q: GrowthEstimate,
    pub spectrum_w: Vec<GrowthEstimate>,
    pub spectrum_q: Vec<GrowthEstimate>,
}

/// Spectra of the actions on `W` and on `V/W`.
pub fn subspace_exponents(
    bs: &BlockSystem,
    ens: &MatrixEnsemble,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<SubspaceExponents> {
    let sw = spectrum(&restrict_to_invariant(bs, ens)?, n, reps, seed)?.exponents;
    let sq = spectrum(&quotient_ensemble(bs, ens)?, n, reps, seed)?.exponents;
    Ok(SubspaceExponents { lambda1_w: sw[0], lambda1_q: sq[0], spectrum_w: sw, spectrum_q: sq })
}

const DIRECTION_STREAM: u64 = 0xd1;

/// Minimum over the standard basis and `v_samples` random unit directions
/// of the Monte Carlo estimate (over `paths` independent products) of
/// `(1/n) E log(‖L_n v‖/‖v‖)`.
pub fn uniform_growth_floor(ens: &MatrixEnsemble, n: usize, v_samples: usize, paths: usize, seed: u64) -> Result<f64> {
    Ok(growth_profile(ens, n, v_samples, paths, seed)?
        .into_iter()
        .map(|(_, e)| e.value)
        .fold(f64::INFINITY, f64::min))
}

/// Per-direction estimates behind [`uniform_growth_floor`].
pub fn growth_profile(
    ens: &MatrixEnsemble,
    n: usize,
    v_samples: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<(Vector, GrowthEstimate)>> {
    check_horizon(n)?;
    if v_samples == 0 || paths == 0 {
        return Err(Error::arg("uniform_growth_floor needs v_samples ≥ 1 and paths ≥ 1"));
    }
    let d = ens.dim();
    let mut dirs = Matrix::zeros(d, d + v_samples);
    dirs.columns_mut(0, d).copy_from(&Matrix::identity(d, d));
    let mut rng = rng::stream(rng::derive_seed(seed, DIRECTION_STREAM), 0);
    for c in d..d + v_samples {
        let v = random_unit(d, &mut rng);
        dirs.set_column(c, &v);
    }
    let m = dirs.ncols();
    let runs = per_rep(paths, |p| {
        let mut rng = rng::stream(seed, p as u64);
        let mut x = dirs.clone();
        let mut buf = Matrix::zeros(d, m);
        let mut logs = vec![0.0; m];
        for _ in 0..n {
            let g = ens.sample(&mut rng)?;
            buf.gemm(1.0, &g, &x, 0.0);
            std::mem::swap(&mut x, &mut buf);
            for (j, mut col) in x.column_iter_mut().enumerate() {
                let nr = col.norm();
                if !(nr > 0.0 && nr.is_finite()) {
                    return Err(Error::NonFinite("growth profile"));
                }
                logs[j] += nr.ln();
                col /= nr;
            }
        }
        Ok(logs.into_iter().map(|l| l / n as f64).collect::<Vec<f64>>())
    })?;
    Ok((0..m)
        .map(|j| {
            let s: Vec<f64> = runs.iter().map(|r| r[j]).collect();
            let (value, stderr) = mean_stderr(&s);
            (dirs.column(j).into_owned(), GrowthEstimate { value, stderr, horizon: n, repetitions: paths })
        })
        .collect())
}

/// Uniform random unit vector (normalized Gaussian).
pub fn random_unit(d: usize, rng: &mut SimRng) -> Vector {
    use rand::Rng;
    use rand_distr::StandardNormal;
    loop {
        let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let nr = v.norm();
        if nr > 1e-12 {
            return v / nr;
        }
    }
}
