//! Empirical stationary measures on projective space and the diagnostics
//! built on them: cocycle averages, tightness of the fiber coordinate and
//! agreement of clouds started from different points.

mod discrepancy;
mod regime;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

pub use discrepancy::{discrepancy, DEFAULT_DICT_SIZE, NOISE_FLOOR, RADII};
pub use regime::{classify_regime, complement_witness, LiftClassification, Regime, Verdict};

use crate::bundle::{join_state, walk, AdaptedEnsemble, BundleState};
use crate::ensemble::{BlockSystem, MatrixEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{distance_to_subspace, proj_normalize, ProjPoint, Subspace, Vector};
use crate::rng::{self, SimRng};
use crate::stats::{batch_means, compensated_sum, GrowthEstimate, KahanSum};

/// Batches used for standard errors of averages over serially correlated
/// clouds.
pub const AVERAGE_BATCHES: usize = 20;

/// A finitely supported probability measure on `P(R^d)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    weights: Vec<f64>,
    points: Vec<ProjPoint>,
    ambient_dim: usize,
}

impl EmpiricalMeasure {
    /// Weights are renormalized to sum to one.
    pub fn new(atoms: Vec<(f64, ProjPoint)>) -> Result<Self> {
        let d = atoms.first().ok_or(Error::Empty("empirical measure"))?.1.dim();
        let total = compensated_sum(atoms.iter().map(|a| a.0));
        if atoms.iter().any(|a| !(a.0 > 0.0 && a.0.is_finite())) || !(total > 0.0 && total.is_finite()) {
            return Err(Error::arg("weights must be positive and finite"));
        }
        if let Some(bad) = atoms.iter().find(|a| a.1.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.1.dim() });
        }
        let (weights, points) = atoms.into_iter().map(|(w, p)| (w / total, p)).unzip();
        Ok(EmpiricalMeasure { weights, points, ambient_dim: d })
    }

    pub fn uniform(points: Vec<ProjPoint>) -> Result<Self> {
        let d = points.first().ok_or(Error::Empty("empirical measure"))?.dim();
        if let Some(bad) = points.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.dim() });
        }
        let w = 1.0 / points.len() as f64;
        Ok(EmpiricalMeasure { weights: vec![w; points.len()], points, ambient_dim: d })
    }

    pub fn dirac(p: ProjPoint) -> Self {
        let d = p.dim();
        EmpiricalMeasure { weights: vec![1.0], points: vec![p], ambient_dim: d }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[ProjPoint] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &ProjPoint)> {
        self.weights.iter().copied().zip(&self.points)
    }

    /// `∫ f dm`.
    pub fn integrate(&self, f: impl Fn(&ProjPoint) -> f64) -> f64 {
        compensated_sum(self.iter().map(|(w, p)| w * f(p)))
    }

    /// Mass of the points within `tol` of `P(s)`.
    pub fn mass_near(&self, s: &Subspace, tol: f64) -> Result<f64> {
        if s.ambient_dim() != self.ambient_dim {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim, got: s.ambient_dim() });
        }
        let mut mass = KahanSum::default();
        for (w, p) in self.iter() {
            if distance_to_subspace(p, s)? <= tol {
                mass.add(w);
            }
        }
        Ok(mass.value())
    }

    /// Orthonormal basis of the span of the support.
    pub fn support_span(&self, tol: f64) -> Result<Subspace> {
        let vs: Vec<Vector> = self.points.iter().map(|p| p.coords().clone()).collect();
        crate::linalg::rank_span(&vs, tol)
    }

    /// CSV `weight, x_1, …, x_d`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let cols: Vec<String> = (1..=self.ambient_dim).map(|i| format!("x_{i}")).collect();
        writeln!(out, "weight,{}", cols.join(","))?;
        for (w, p) in self.iter() {
            let xs: Vec<String> = p.coords().iter().map(|x| x.to_string()).collect();
            writeln!(out, "{w},{}", xs.join(","))?;
        }
        Ok(())
    }
}

fn check_start(ens: &MatrixEnsemble, x: &ProjPoint) -> Result<()> {
    if x.dim() != ens.dim() {
        return Err(Error::DimensionMismatch { expected: ens.dim(), got: x.dim() });
    }
    Ok(())
}

fn push(ens: &MatrixEnsemble, v: &Vector, rng: &mut SimRng) -> Result<Vector> {
    let g = ens.sample(rng)?;
    let w = &*g * v;
    let nw = w.norm();
    if !(nw > 0.0 && nw.is_finite()) {
        return Err(Error::NonFinite("projective step"));
    }
    Ok(w / nw)
}

/// Cesàro average `(1/n) Σ_{i≤n} μ^{*i} ∗ δ_x`, estimated with
/// `samples_per_step` independent trajectories: trajectory `j` contributes
/// its point `L_i·x` to every step `i`, so each step carries
/// `samples_per_step` draws of `L_i`.
pub fn cesaro_empirical(
    ens: &MatrixEnsemble,
    x: &ProjPoint,
    n: usize,
    samples_per_step: usize,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    check_start(ens, x)?;
    if n == 0 || samples_per_step == 0 {
        return Err(Error::arg("n and samples_per_step must be at least 1"));
    }
    let paths = (0..samples_per_step)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream(seed, j as u64);
            let mut v = x.coords().clone();
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                v = push(ens, &v, &mut rng)?;
                pts.push(proj_normalize(&v)?);
            }
            Ok(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::uniform(paths.into_iter().flatten().collect())
}

/// Default burn-in of a Birkhoff run of length `n`.
pub fn default_burn_in(n: usize) -> usize {
    n / 10
}

/// Occupation measure of the steps `burn_in + 1 ..= n` of one trajectory
/// started at `x`.
pub fn birkhoff_empirical(ens: &MatrixEnsemble, x: &ProjPoint, n: usize, burn_in: usize, seed: u64) -> Result<EmpiricalMeasure> {
    check_start(ens, x)?;
    if n <= burn_in {
        return Err(Error::arg(format!("n = {n} must exceed burn_in = {burn_in}")));
    }
    let mut rng = rng::stream(seed, 0);
    let mut v = x.coords().clone();
    let mut pts = Vec::with_capacity(n - burn_in);
    for i in 1..=n {
        v = push(ens, &v, &mut rng)?;
        if i > burn_in {
            pts.push(proj_normalize(&v)?);
        }
    }
    EmpiricalMeasure::uniform(pts)
}

/// Each point moved by one independent draw of the ensemble.
pub fn push_one_step(ens: &MatrixEnsemble, m: &EmpiricalMeasure, seed: u64) -> Result<EmpiricalMeasure> {
    if m.ambient_dim() != ens.dim() {
        return Err(Error::DimensionMismatch { expected: ens.dim(), got: m.ambient_dim() });
    }
    let mut rng = rng::stream(seed, 0);
    let atoms = m
        .iter()
        .map(|(w, p)| Ok((w, proj_normalize(&push(ens, p.coords(), &mut rng)?)?)))
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::new(atoms)
}

/// `∬ log(‖gv‖/‖v‖) dμ(g) dm([v])`. Finite ensembles are integrated
/// exactly at each point; otherwise `inner_samples` draws per point are
/// averaged. The standard error comes from batch means over the cloud in
/// its stored order.
pub fn cocycle_average(ens: &MatrixEnsemble, m: &EmpiricalMeasure, inner_samples: usize, seed: u64) -> Result<GrowthEstimate> {
    if m.ambient_dim() != ens.dim() {
        return Err(Error::DimensionMismatch { expected: ens.dim(), got: m.ambient_dim() });
    }
    if m.is_empty() {
        return Err(Error::Empty("empirical measure"));
    }
    let per_point = |i: usize, v: &Vector| -> Result<f64> {
        match ens.atoms() {
            Some(atoms) => Ok(compensated_sum(atoms.iter().map(|a| a.weight * (&a.matrix * v).norm().ln()))),
            None => {
                let k = inner_samples.max(1);
                let mut rng = rng::stream(seed, i as u64);
                let mut s = 0.0;
                for _ in 0..k {
                    let g = ens.sample(&mut rng)?;
                    s += (&*g * v).norm().ln();
                }
                Ok(s / k as f64)
            }
        }
    };
    let n = m.len();
    let contrib = m
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| Ok(m.weights()[i] * n as f64 * per_point(i, p.coords())?))
        .collect::<Result<Vec<f64>>>()?;
    if contrib.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cocycle average"));
    }
    let (value, stderr) = batch_means(&contrib, AVERAGE_BATCHES);
    Ok(GrowthEstimate { value, stderr, horizon: n, repetitions: n.min(AVERAGE_BATCHES) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Recurrent,
    Escaping,
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TightnessReport {
    pub radii: Vec<f64>,
    pub escape_fractions: Vec<f64>,
    pub first_third_median: f64,
    pub last_third_median: f64,
    pub trend: Trend,
}

impl TightnessReport {
    /// Escape fraction at the grid radius closest to `r`.
    pub fn escape_fraction(&self, r: f64) -> Option<f64> {
        let i = (0..self.radii.len()).min_by(|&a, &b| (self.radii[a] - r).abs().total_cmp(&(self.radii[b] - r).abs()))?;
        Some(self.escape_fractions[i])
    }
}

/// Medians of the drift over the last and first thirds differing by more
/// than this are read as escape.
pub const ESCAPE_GAP: f64 = 4.605170185988092; // ln 100
/// A difference of at most this is read as recurrence.
pub const RECURRENT_GAP: f64 = std::f64::consts::LN_10;

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs the fiber dynamics from `x` for `n` steps and records, for each
/// radius `R`, the fraction of steps with drift `log(1 + ‖t‖) > R`.
pub fn tightness_diagnostic(
    bs: &BlockSystem,
    ens: &MatrixEnsemble,
    x: &BundleState,
    n: usize,
    radius_grid: &[f64],
    seed: u64,
) -> Result<TightnessReport> {
    if n < 3 {
        return Err(Error::arg("tightness needs at least 3 steps"));
    }
    let ad = AdaptedEnsemble::new(bs, ens)?;
    let mut drifts = Vec::with_capacity(n);
    walk(&ad, x, n, &mut rng::stream(seed, 0), |_, st| {
        drifts.push(st.drift());
        Ok(())
    })?;
    let escape_fractions = radius_grid
        .iter()
        .map(|&r| drifts.iter().filter(|&&f| f > r).count() as f64 / n as f64)
        .collect();
    let third = n / 3;
    let first = median(&mut drifts[..third].to_vec());
    let last = median(&mut drifts[n - third..].to_vec());
    let trend = if last - first > ESCAPE_GAP {
        Trend::Escaping
    } else if (last - first).abs() <= RECURRENT_GAP {
        Trend::Recurrent
    } else {
        Trend::Unresolved
    };
    Ok(TightnessReport {
        radii: radius_grid.to_vec(),
        escape_fractions,
        first_third_median: first,
        last_third_median: last,
        trend,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub discrepancies: Vec<Vec<f64>>,
    pub max: f64,
}

/// Birkhoff clouds (default burn-in) from each start on independent
/// streams, compared pairwise.
pub fn uniqueness_probe(
    bs: &BlockSystem,
    ens: &MatrixEnsemble,
    starts: &[BundleState],
    n: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    if starts.len() < 2 {
        return Err(Error::arg("uniqueness probe needs at least two starts"));
    }
    bs.check(ens)?;
    let clouds = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let x = join_state(s, bs)?;
            birkhoff_empirical(ens, &x, n, default_burn_in(n), rng::derive_seed(seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = clouds.len();
    let dict_seed = rng::derive_seed(seed, u64::MAX);
    let mut d = vec![vec![0.0; k]; k];
    let mut max = 0.0_f64;
    for i in 0..k {
        for j in i + 1..k {
            let x = discrepancy(&clouds[i], &clouds[j], DEFAULT_DICT_SIZE, dict_seed)?;
            d[i][j] = x;
            d[j][i] = x;
            max = max.max(x);
        }
    }
    Ok(UniquenessReport { discrepancies: d, max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs;
    use crate::linalg::{proj_distance, Matrix};
    use crate::lyapunov::top_exponent;

    fn p(x: &[f64]) -> ProjPoint {
        ProjPoint::from_slice(x).unwrap()
    }

    fn diag2() -> MatrixEnsemble {
        MatrixEnsemble::dirac(Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]), "diag(2,1)").unwrap()
    }

    #[test]
    fn constructors_normalize() {
        let m = EmpiricalMeasure::new(vec![(2.0, p(&[1.0, 0.0])), (6.0, p(&[0.0, 1.0]))]).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(EmpiricalMeasure::new(vec![(1.0, p(&[1.0, 0.0])), (1.0, p(&[1.0, 0.0, 0.0]))]).is_err());
        assert!(EmpiricalMeasure::new(vec![(-1.0, p(&[1.0, 0.0]))]).is_err());
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "weight,x_1,x_2\n0.25,1,0\n0.75,0,1\n");
    }

    #[test]
    fn identity_clouds_are_point_masses() {
        let id = MatrixEnsemble::dirac(Matrix::identity(2, 2), "id").unwrap();
        let x = p(&[0.6, 0.8]);
        for m in [cesaro_empirical(&id, &x, 50, 3, 1).unwrap(), birkhoff_empirical(&id, &x, 50, 5, 1).unwrap()] {
            assert!(m.points().iter().all(|q| proj_distance(q, &x).unwrap() < 1e-15));
        }
    }

    #[test]
    fn cesaro_of_deterministic_contraction() {
        // L_i x = (2^i x1, x2): within 1e-3 of [e1] once 2^i > 1e3·|x2/x1|
        let n = 1000;
        let m = cesaro_empirical(&diag2(), &p(&[1.0, 1.0]), n, 2, 0).unwrap();
        let near = m.integrate(|q| if proj_distance(q, &p(&[1.0, 0.0])).unwrap() <= 1e-3 { 1.0 } else { 0.0 });
        let transient = (1e3f64).log2().ceil() / n as f64;
        assert!(near >= 1.0 - transient - 1e-12, "{near}");
        let b = birkhoff_empirical(&diag2(), &p(&[1.0, 1.0]), 200, 100, 0).unwrap();
        assert!(b.points().iter().all(|q| proj_distance(q, &p(&[1.0, 0.0])).unwrap() < 1e-20));
    }

    #[test]
    fn cocycle_average_examples() {
        let a = cocycle_average(&diag2(), &EmpiricalMeasure::dirac(p(&[1.0, 0.0])), 1, 0).unwrap();
        assert!((a.value - 2f64.ln()).abs() < 1e-15 && a.stderr == 0.0);
        let rot = |t: f64| Matrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let iso = MatrixEnsemble::uniform(vec![rot(0.3), rot(1.1)], "rot").unwrap();
        let m = birkhoff_empirical(&iso, &p(&[1.0, 2.0]), 500, 0, 3).unwrap();
        assert!(cocycle_average(&iso, &m, 1, 0).unwrap().value.abs() < 1e-14);
    }

    #[test]
    fn furstenberg_formula_matches_top_exponent() {
        let ens = MatrixEnsemble::uniform(
            vec![
                Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]),
                Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.5, 0.7]),
                Matrix::from_row_slice(2, 2, &[0.3, -1.0, 1.0, 0.8]),
            ],
            "proximal",
        )
        .unwrap();
        let m = birkhoff_empirical(&ens, &p(&[1.0, 0.3]), 100_000, 1000, 8).unwrap();
        let a = cocycle_average(&ens, &m, 1, 0).unwrap();
        let l = top_exponent(&ens, 10_000, 20, 9).unwrap();
        assert!((a.value - l.value).abs() <= 3.0 * a.combined_stderr(&l), "{a:?} {l:?}");
    }

    #[test]
    fn tightness_of_identity_and_affine_examples() {
        let id = MatrixEnsemble::dirac(Matrix::identity(2, 2), "id").unwrap();
        let bs = BlockSystem::coordinate(2, 1).unwrap();
        let x = BundleState::new(Vector::from_element(1, 1.0), Vector::from_element(1, 5.0)).unwrap();
        let r = tightness_diagnostic(&bs, &id, &x, 100, &[6f64.ln() + 1e-9, 10.0], 0).unwrap();
        assert_eq!(r.escape_fractions, vec![0.0, 0.0]);
        assert_eq!(r.trend, Trend::Recurrent);

        let (e, bs) = designs::affine_scalar(-0.2).unwrap();
        let r = tightness_diagnostic(&bs, &e, &x, 20_000, &[1e3f64.ln()], 2).unwrap();
        assert!(r.escape_fractions[0] <= 0.01 && r.trend == Trend::Recurrent, "{r:?}");
        let (e, bs) = designs::affine_scalar(0.2).unwrap();
        let r = tightness_diagnostic(&bs, &e, &x, 5_000, &[1e6f64.ln()], 2).unwrap();
        assert!(r.escape_fractions[0] >= 0.95 && r.trend == Trend::Escaping, "{r:?}");
    }

    #[test]
    fn probe_separates_distinct_ergodic_components() {
        // W = span(e1) contracts, the quotient preserves [e2] and [e3]
        let mut mats = Vec::new();
        for s in [-0.3f64, 0.3] {
            for u in [-0.2f64, 0.2] {
                mats.push(Matrix::from_diagonal(&Vector::from_vec(vec![(-1.0 + s).exp(), u.exp(), (-u).exp()])));
            }
        }
        let ens = MatrixEnsemble::uniform(mats, "two-lines").unwrap();
        let bs = BlockSystem::coordinate(3, 1).unwrap();
        let starts = [
            BundleState::new(Vector::from_vec(vec![1.0, 0.0]), Vector::from_element(1, 0.0)).unwrap(),
            BundleState::new(Vector::from_vec(vec![0.0, 1.0]), Vector::from_element(1, 0.0)).unwrap(),
        ];
        let r = uniqueness_probe(&bs, &ens, &starts, 2000, 4).unwrap();
        assert!(r.max >= 0.5, "{r:?}");

        let c = MatrixEnsemble::dirac(Matrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 1.0]), "c").unwrap();
        let starts: Vec<BundleState> =
            [0.0, 10.0, -10.0].iter().map(|&t| BundleState::new(Vector::from_element(1, 1.0), Vector::from_element(1, t)).unwrap()).collect();
        let r = uniqueness_probe(&BlockSystem::coordinate(2, 1).unwrap(), &c, &starts, 1000, 4).unwrap();
        assert!(r.max < 1e-9, "{r:?}");
    }
}
