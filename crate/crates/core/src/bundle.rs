//! The fibered picture of `P(V) ∖ P(W)`: a point `[ξ]` outside `P(W)` is
//! written in the adapted basis as `ξ = ξ_W + ξ_Q` and identified with
//! `θ = ξ_Q/‖ξ_Q‖` on the unit sphere of `V/W` and the fiber coordinate
//! `t = ξ_W/‖ξ_Q‖ ∈ W`, modulo the joint sign `(θ, t) ~ (−θ, −t)`.
//! A block-triangular `g = [[A, B], [0, C]]` acts by
//! `(θ, t) ↦ (Cθ/‖Cθ‖, (A t + B θ)/‖Cθ‖)`.

use std::borrow::Cow;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{BlockSystem, Blocks, MatrixEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, gauge_n, is_finite_vector, proj_normalize, Matrix, ProjPoint, Vector};
use crate::lyapunov::{ProductOrder, ScaledProduct};
use crate::rng::{self, SimRng};
use crate::stats::GrowthEstimate;

/// Quotient components at or below this norm are treated as lying in `P(W)`.
pub const INSIDE_W_CUTOFF: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BundleState {
    theta: Vector,
    t: Vector,
}

impl BundleState {
    /// Canonical representative of `(θ/‖θ‖, t/‖θ‖)`.
    pub fn new(theta: Vector, t: Vector) -> Result<Self> {
        let n = theta.norm();
        if !(n > 0.0 && n.is_finite()) || !is_finite_vector(&t) {
            return Err(Error::DegenerateVector);
        }
        let mut s = BundleState { theta: theta / n, t: t / n };
        s.canonicalize();
        Ok(s)
    }

    fn canonicalize(&mut self) {
        if canonical_sign(self.theta.as_slice()) < 0.0 {
            self.theta.neg_mut();
            self.t.neg_mut();
        }
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    pub fn t(&self) -> &Vector {
        &self.t
    }
}

/// Chart `P(V) ∖ P(W) → (S(V/W) × W)/±1`.
pub fn split_point(p: &ProjPoint, bs: &BlockSystem) -> Result<BundleState> {
    if p.dim() != bs.dim() {
        return Err(Error::DimensionMismatch { expected: bs.dim(), got: p.dim() });
    }
    let xi = bs.vector_to_adapted(p.coords());
    let r = bs.rank();
    let q = xi.rows(r, bs.quotient_dim()).into_owned();
    let qn = q.norm();
    if !(qn > INSIDE_W_CUTOFF) {
        return Err(Error::InsideInvariant(qn));
    }
    let mut s = BundleState { theta: q / qn, t: xi.rows(0, r).into_owned() / qn };
    s.canonicalize();
    Ok(s)
}

/// Inverse chart: `[t + θ]` mapped back through the adapted basis.
pub fn join_state(s: &BundleState, bs: &BlockSystem) -> Result<ProjPoint> {
    let xi = stack(&s.t, &s.theta);
    proj_normalize(&bs.vector_from_adapted(&xi))
}

fn stack(top: &Vector, bottom: &Vector) -> Vector {
    let mut xi = Vector::zeros(top.len() + bottom.len());
    xi.rows_mut(0, top.len()).copy_from(top);
    xi.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    xi
}

/// Action of `g` in the chart.
pub fn cocycle_step(g: &Matrix, s: &BundleState, bs: &BlockSystem) -> Result<BundleState> {
    let b = bs.blocks(g)?;
    step_blocks(&b, s)
}

fn step_blocks(b: &Blocks, s: &BundleState) -> Result<BundleState> {
    let c_theta = &b.c * &s.theta;
    let nc = c_theta.norm();
    let t = (&b.a * &s.t + &b.b * &s.theta) / nc;
    if !(nc > 0.0) || !is_finite_vector(&t) || !is_finite_vector(&c_theta) {
        return Err(Error::NonFinite("cocycle step"));
    }
    let mut out = BundleState { theta: c_theta / nc, t };
    out.canonicalize();
    Ok(out)
}

/// `f(θ, t) = log(1 + ‖t‖)`.
pub fn drift_value(s: &BundleState) -> f64 {
    s.t.norm().ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftCheck {
    pub delta: f64,
    pub bound: f64,
    pub ok: bool,
}

/// One-step increment of the drift function against
/// `log 3 + 2 log N(g)`.
pub fn drift_step_bound_check(g: &Matrix, s: &BundleState, bs: &BlockSystem) -> Result<DriftCheck> {
    let next = cocycle_step(g, s, bs)?;
    let delta = drift_value(&next) - drift_value(s);
    let bound = 3f64.ln() + 2.0 * gauge_n(g)?.ln();
    Ok(DriftCheck { delta, bound, ok: delta <= bound + 1e-9 })
}

/// Draws `(A, B, C)` blocks from an ensemble, precomputed per atom for
/// finite support.
#[derive(Clone, Debug)]
pub struct AdaptedEnsemble<'a> {
    ens: &'a MatrixEnsemble,
    bs: BlockSystem,
    atom_blocks: Option<Vec<Blocks>>,
}

impl<'a> AdaptedEnsemble<'a> {
    pub fn new(bs: &BlockSystem, ens: &'a MatrixEnsemble) -> Result<Self> {
        bs.check(ens)?;
        let atom_blocks = match ens.atoms() {
            Some(atoms) => Some(atoms.iter().map(|a| bs.blocks(&a.matrix)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Ok(AdaptedEnsemble { ens, bs: bs.clone(), atom_blocks })
    }

    pub fn block_system(&self) -> &BlockSystem {
        &self.bs
    }

    pub fn ensemble(&self) -> &MatrixEnsemble {
        self.ens
    }

    pub fn draw(&self, rng: &mut SimRng) -> Result<Cow<'_, Blocks>> {
        match (&self.atom_blocks, self.ens.draw_index(rng)) {
            (Some(b), Some(i)) => Ok(Cow::Borrowed(&b[i])),
            _ => {
                let g = self.ens.sample(rng)?;
                Ok(Cow::Owned(self.bs.blocks(&g)?))
            }
        }
    }
}

/// Chart state stored as `t = e^{log_scale}·v`, so trajectories in
/// expanding regimes can run far past the range of `f64`. While `‖t‖`
/// stays moderate the scale is exactly zero and each step is the plain
/// cocycle formula.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberState {
    theta: Vector,
    v: Vector,
    log_scale: f64,
}

const RESCALE_ABOVE: f64 = 1e100;

impl FiberState {
    pub fn new(s: &BundleState) -> Self {
        FiberState { theta: s.theta.clone(), v: s.t.clone(), log_scale: 0.0 }
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    /// `log ‖t‖` (`−∞` on the zero section).
    pub fn log_norm_t(&self) -> f64 {
        self.log_scale + self.v.norm().ln()
    }

    pub fn drift(&self) -> f64 {
        if self.log_scale == 0.0 {
            return self.v.norm().ln_1p();
        }
        let l = self.log_norm_t();
        l + (-l).exp().ln_1p()
    }

    /// Back to an explicit state; fails once `‖t‖` is not representable.
    pub fn state(&self) -> Result<BundleState> {
        let t = &self.v * self.log_scale.exp();
        if !is_finite_vector(&t) {
            return Err(Error::NonFinite("fiber coordinate"));
        }
        Ok(BundleState { theta: self.theta.clone(), t })
    }

    /// The projective point, computed without forming `t`.
    pub fn point(&self, bs: &BlockSystem) -> Result<ProjPoint> {
        if self.log_scale == 0.0 {
            return proj_normalize(&bs.vector_from_adapted(&stack(&self.v, &self.theta)));
        }
        let theta = &self.theta * (-self.log_scale).exp();
        proj_normalize(&bs.vector_from_adapted(&stack(&self.v, &theta)))
    }

    pub fn step(&mut self, b: &Blocks) -> Result<()> {
        let c_theta = &b.c * &self.theta;
        let nc = c_theta.norm();
        if !(nc > 0.0 && nc.is_finite()) {
            return Err(Error::NonFinite("cocycle step"));
        }
        let mut v = &b.a * &self.v;
        if self.log_scale == 0.0 {
            v += &b.b * &self.theta;
        } else {
            v += &b.b * &self.theta * (-self.log_scale).exp();
        }
        v /= nc;
        self.theta = c_theta / nc;
        if canonical_sign(self.theta.as_slice()) < 0.0 {
            self.theta.neg_mut();
            v.neg_mut();
        }
        let nv = v.norm();
        if !nv.is_finite() {
            return Err(Error::NonFinite("fiber coordinate"));
        }
        if self.log_scale == 0.0 {
            if nv > RESCALE_ABOVE {
                self.log_scale = nv.ln();
                v /= nv;
            }
        } else if nv > 0.0 {
            self.log_scale += nv.ln();
            v /= nv;
            if self.log_scale < RESCALE_ABOVE.ln() / 2.0 {
                v *= self.log_scale.exp();
                self.log_scale = 0.0;
            }
        }
        self.v = v;
        Ok(())
    }
}

/// `(1/n) log(‖A(L_n)‖ / ‖C(L_n)θ₀‖)`, the fiber Lipschitz rate along the
/// trajectory of `θ₀`.
pub fn fiber_contraction_rate(
    bs: &BlockSystem,
    ens: &MatrixEnsemble,
    theta0: &Vector,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<GrowthEstimate> {
    if n == 0 {
        return Err(Error::arg("horizon n must be at least 1"));
    }
    if theta0.len() != bs.quotient_dim() {
        return Err(Error::DimensionMismatch { expected: bs.quotient_dim(), got: theta0.len() });
    }
    let th_norm = theta0.norm();
    if !(th_norm > 0.0) {
        return Err(Error::DegenerateVector);
    }
    let ad = AdaptedEnsemble::new(bs, ens)?;
    let samples = (0..reps.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r as u64);
            let mut a = ScaledProduct::new(bs.rank());
            let mut theta = theta0 / th_norm;
            let mut log_c = 0.0;
            for _ in 0..n {
                let b = ad.draw(&mut rng)?;
                a.step(&b.a, ProductOrder::Left)?;
                let ct = &b.c * &theta;
                let nc = ct.norm();
                log_c += nc.ln();
                theta = ct / nc;
            }
            Ok((a.log_norm() - log_c) / n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GrowthEstimate::from_samples(&samples, n))
}

/// Runs the chart dynamics for `n` steps from `start`, calling `visit`
/// after every step.
pub fn walk(
    ad: &AdaptedEnsemble<'_>,
    start: &BundleState,
    n: usize,
    rng: &mut SimRng,
    mut visit: impl FnMut(usize, &FiberState) -> Result<()>,
) -> Result<FiberState> {
    let mut st = FiberState::new(start);
    for step in 1..=n {
        let b = ad.draw(rng)?;
        st.step(&b)?;
        visit(step, &st)?;
    }
    Ok(st)
}

/// CSV trace `step, drift_value, theta_1.., log_norm_t` of one trajectory.
pub fn write_trajectory_csv(
    out: &mut impl Write,
    ad: &AdaptedEnsemble<'_>,
    start: &BundleState,
    n: usize,
    every: usize,
    seed: u64,
) -> Result<()> {
    let q = start.theta.len();
    let theta_cols: Vec<String> = (1..=q).map(|i| format!("theta_{i}")).collect();
    writeln!(out, "step,drift_value,{},log_norm_t", theta_cols.join(","))?;
    let mut rng = rng::stream(seed, 0);
    let every = every.max(1);
    walk(ad, start, n, &mut rng, |step, st| {
        if step % every == 0 || step == n {
            let theta: Vec<String> = st.theta().iter().map(|x| x.to_string()).collect();
            writeln!(out, "{step},{},{},{}", st.drift(), theta.join(","), st.log_norm_t())?;
        }
        Ok(())
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs;
    use crate::linalg::{proj_distance, Subspace};
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn bs21() -> BlockSystem {
        BlockSystem::coordinate(2, 1).unwrap()
    }

    #[test]
    fn split_examples() {
        let s = split_point(&ProjPoint::basis(2, 1), &bs21()).unwrap();
        assert_eq!((s.theta()[0], s.t()[0]), (1.0, 0.0));
        let s = split_point(&ProjPoint::from_slice(&[4.0, 2.0]).unwrap(), &bs21()).unwrap();
        assert!((s.theta()[0] - 1.0).abs() < 1e-15 && (s.t()[0] - 2.0).abs() < 1e-14);
        assert!(matches!(split_point(&ProjPoint::basis(2, 0), &bs21()), Err(Error::InsideInvariant(_))));
    }

    #[test]
    fn join_examples() {
        let p = join_state(&BundleState::new(v(&[1.0]), v(&[0.0])).unwrap(), &bs21()).unwrap();
        assert_eq!(p, ProjPoint::basis(2, 1));
        let p = join_state(&BundleState::new(v(&[1.0]), v(&[2.0])).unwrap(), &bs21()).unwrap();
        assert!(proj_distance(&p, &ProjPoint::from_slice(&[2.0, 1.0]).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn cocycle_examples() {
        let s = BundleState::new(v(&[1.0]), v(&[4.0])).unwrap();
        assert_eq!(cocycle_step(&Matrix::identity(2, 2), &s, &bs21()).unwrap(), s);
        let g = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let out = cocycle_step(&g, &s, &bs21()).unwrap();
        assert_eq!((out.theta()[0], out.t()[0]), (1.0, 2.0));
        // negative c flips θ, and t jointly
        let g = Matrix::from_row_slice(2, 2, &[3.0, 1.0, 0.0, -2.0]);
        let out = cocycle_step(&g, &s, &bs21()).unwrap();
        assert_eq!((out.theta()[0], out.t()[0]), (1.0, -(3.0 * 4.0 + 1.0) / 2.0));
    }

    #[test]
    fn drift_examples() {
        let st = |t: f64| BundleState::new(v(&[1.0]), v(&[t])).unwrap();
        assert_eq!(drift_value(&st(0.0)), 0.0);
        assert!((drift_value(&st(std::f64::consts::E - 1.0)) - 1.0).abs() < 1e-15);
        assert!((drift_value(&st(1.0)) - 2f64.ln()).abs() < 1e-15);
        let c = drift_step_bound_check(&Matrix::identity(2, 2), &st(3.0), &bs21()).unwrap();
        assert!(c.ok && c.delta == 0.0 && (c.bound - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn fiber_rate_examples() {
        let e = MatrixEnsemble::dirac(Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]), "t").unwrap();
        let r = fiber_contraction_rate(&bs21(), &e, &v(&[1.0]), 200, 2, 0).unwrap();
        assert!((r.value - (2f64.ln() - 3f64.ln())).abs() < 1e-12);

        let rot = Matrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let mut g = Matrix::identity(4, 4);
        g.view_mut((0, 0), (2, 2)).copy_from(&rot);
        g.view_mut((2, 2), (2, 2)).copy_from(&rot.transpose());
        let iso = MatrixEnsemble::dirac(g, "iso").unwrap();
        let r = fiber_contraction_rate(&BlockSystem::coordinate(4, 2).unwrap(), &iso, &v(&[1.0, 0.0]), 500, 2, 0).unwrap();
        assert!(r.value.abs() < 1e-12);

        let (e, bs) = designs::two_block(-0.2, 0.1).unwrap();
        // oracle: E log a − E log c, exact from the atoms
        let atoms = e.atoms().unwrap();
        let want: f64 = atoms.iter().map(|a| a.weight * (a.matrix[(0, 0)].ln() - a.matrix[(1, 1)].ln())).sum();
        assert!((want + 0.3).abs() < 1e-12);
        let r = fiber_contraction_rate(&bs, &e, &v(&[1.0]), 100_000, 20, 4).unwrap();
        assert!(r.within(want, 3.0), "{r:?}");
    }

    #[test]
    fn fiber_state_follows_plain_cocycle_and_survives_expansion() {
        let (e, bs) = designs::affine_scalar(-0.2).unwrap();
        let ad = AdaptedEnsemble::new(&bs, &e).unwrap();
        let start = BundleState::new(v(&[1.0]), v(&[10.0])).unwrap();
        let mut plain = start.clone();
        let mut rng = rng::stream(5, 0);
        let mut rng2 = rng::stream(5, 0);
        walk(&ad, &start, 200, &mut rng, |_, st| {
            let b = ad.draw(&mut rng2).unwrap();
            plain = step_blocks(&b, &plain).unwrap();
            assert_eq!(st.state().unwrap(), plain);
            Ok(())
        })
        .unwrap();

        let (e, bs) = designs::affine_scalar(0.2).unwrap();
        let ad = AdaptedEnsemble::new(&bs, &e).unwrap();
        let end = walk(&ad, &start, 20_000, &mut rng::stream(1, 0), |_, _| Ok(())).unwrap();
        let l = end.log_norm_t();
        assert!(l.is_finite() && l > 1000.0, "{l}");
        assert!((end.drift() - l).abs() < 1e-12);
        let p = end.point(&bs).unwrap();
        assert!(crate::linalg::distance_to_subspace(&p, bs.invariant()).unwrap() < 1e-100);
    }

    fn random_block_system(rng: &mut SimRng, d: usize, r: usize) -> BlockSystem {
        let m = Matrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let q = m.qr().q();
        BlockSystem::new(Subspace::from_orthonormal(q.columns(0, r).into_owned()).unwrap()).unwrap()
    }

    fn random_triangular(rng: &mut SimRng, bs: &BlockSystem) -> Matrix {
        let d = bs.dim();
        let r = bs.rank();
        let mut m = Matrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        m.view_mut((r, 0), (d - r, r)).fill(0.0);
        for i in 0..d {
            m[(i, i)] += if rng.random::<bool>() { 1.5 } else { -1.5 };
        }
        bs.from_adapted(&m)
    }

    fn random_state(rng: &mut SimRng, bs: &BlockSystem) -> BundleState {
        let theta = Vector::from_fn(bs.quotient_dim(), |_, _| rng.random::<f64>() - 0.5);
        let t = Vector::from_fn(bs.rank(), |_, _| (rng.random::<f64>() - 0.5) * 20.0);
        BundleState::new(theta, t).unwrap()
    }

    #[test]
    fn drift_bound_holds_on_random_cases() {
        let mut rng = rng::stream(77, 0);
        for case in 0..1000 {
            let d = 2 + case % 4;
            let r = 1 + case % (d - 1);
            let bs = random_block_system(&mut rng, d, r);
            let g = random_triangular(&mut rng, &bs);
            let s = random_state(&mut rng, &bs);
            let c = drift_step_bound_check(&g, &s, &bs).unwrap_or_else(|e| panic!("{case} {d} {r} {e:?} {}", bs.adapted_basis()));
            assert!(c.ok, "{c:?}");
        }
    }

    proptest! {
        #[test]
        fn chart_round_trip_and_equivariance(seed in 0u64..10_000) {
            let mut rng = rng::stream(seed, 0);
            let d = 2 + (seed % 4) as usize;
            let r = 1 + (seed as usize / 4) % (d - 1);
            let bs = random_block_system(&mut rng, d, r);
            let s = random_state(&mut rng, &bs);
            let back = split_point(&join_state(&s, &bs).unwrap(), &bs).unwrap();
            // rounding in the ambient point is relative to ‖ξ‖ ≈ 1 + ‖t‖
            let amp = (1.0 + s.t().norm()).powi(2);
            prop_assert!((back.theta() - s.theta()).amax() <= 1e-13 * amp);
            prop_assert!((back.t() - s.t()).amax() <= 1e-13 * amp);

            let g = random_triangular(&mut rng, &bs);
            let h = random_triangular(&mut rng, &bs);
            // oracle: act on the ambient line directly
            let direct = proj_normalize(&(&g * join_state(&s, &bs).unwrap().coords())).unwrap();
            let via = join_state(&cocycle_step(&g, &s, &bs).unwrap(), &bs).unwrap();
            prop_assert!(proj_distance(&direct, &via).unwrap() <= 1e-10);

            let two = cocycle_step(&g, &cocycle_step(&h, &s, &bs).unwrap(), &bs).unwrap();
            let one = cocycle_step(&(&g * &h), &s, &bs).unwrap();
            let scale = 1.0 + one.t().amax();
            prop_assert!((two.theta() - one.theta()).amax() <= 1e-10);
            prop_assert!((two.t() - one.t()).amax() <= 1e-10 * scale);
        }
    }
}
