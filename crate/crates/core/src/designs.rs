//! Shipped example ensembles whose exponents and invariant subspaces are
//! known by construction. The acceptance suite, the CLI builders and the
//! tests all draw from here.

use crate::ensemble::{affine_matrix, BlockSystem, MatrixEnsemble};
use crate::error::Result;
use crate::linalg::{Matrix, Subspace, Vector};
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// Half-spread of `log|a|` in the scalar affine recursion.
pub const AFFINE_LOG_SPREAD: f64 = 0.3;

/// `t ↦ a t + b` embedded as `[[a, b], [0, 1]]` with
/// `log a ∈ {m − 0.3, m + 0.3}` and `b ∈ {−1, +1}`, all four pairs equally
/// likely. `E log|a| = m`; the maps have no common fixed point.
pub fn affine_scalar(log_mean: f64) -> Result<(MatrixEnsemble, BlockSystem)> {
    let mut atoms = Vec::new();
    for s in [-AFFINE_LOG_SPREAD, AFFINE_LOG_SPREAD] {
        for b in [-1.0, 1.0] {
            let a = Matrix::from_element(1, 1, (log_mean + s).exp());
            atoms.push((0.25, affine_matrix(&a, &Vector::from_element(1, b))));
        }
    }
    let ens = MatrixEnsemble::finite(atoms, format!("affine-scalar({log_mean})"))?;
    Ok((ens, BlockSystem::coordinate(2, 1)?.with_block_tol(0.0)))
}

/// `[[a, b], [0, c]]` with `log a = w ± 0.5`, `log c = q ± 0.4`,
/// `b ∈ {−1, 1}`: `W = span(e1)` grows at `w`, the quotient at `q`.
pub fn two_block(w: f64, q: f64) -> Result<(MatrixEnsemble, BlockSystem)> {
    let mut atoms = Vec::new();
    for sa in [-0.5, 0.5] {
        for sc in [-0.4f64, 0.4] {
            for b in [-1.0, 1.0] {
                let g = Matrix::from_row_slice(2, 2, &[(w + sa).exp(), b, 0.0, (q + sc).exp()]);
                atoms.push((0.125, g));
            }
        }
    }
    let ens = MatrixEnsemble::finite(atoms, format!("two-block({w},{q})"))?;
    Ok((ens, BlockSystem::coordinate(2, 1)?.with_block_tol(0.0)))
}

/// Fixed rotation of `R^3` used to move [`transpose_support`] off the
/// coordinate axes.
pub fn tilt3() -> Matrix {
    let m = Matrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, -1.0, 2.0, 0.3, 0.4, -0.2, 2.0]);
    m.qr().q()
}

/// `O·[[A, b], [0, c]]·Oᵀ` for a fixed rotation `O`, with `A` a random
/// `2×2` block, `log|c|` well below the top exponent of `A`. The transpose
/// measure preserves the line `O·e3`, so `F_2(μᵗ) = O·e3` and the
/// top-average stationary measures live on `P(O·span(e1, e2))`.
pub fn transpose_support(seed: u64) -> Result<(MatrixEnsemble, Subspace)> {
    let o = tilt3();
    let mut rng = rng::stream(seed, 0);
    let mut mats = Vec::new();
    for i in 0..4 {
        let mut g = Matrix::zeros(3, 3);
        for r in 0..2 {
            for c in 0..2 {
                g[(r, c)] = rng.sample::<f64, _>(StandardNormal);
            }
            g[(r, 2)] = rng.sample::<f64, _>(StandardNormal);
        }
        g[(2, 2)] = if i % 2 == 0 { 0.3 } else { 0.2 };
        mats.push(&o * g * o.transpose());
    }
    let v1 = Subspace::from_orthonormal(o.columns(0, 2).into_owned())?;
    Ok((MatrixEnsemble::uniform(mats, format!("transpose-support({seed})"))?, v1))
}

fn rotation(t: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
}

/// `diag(A, R)` on `R^4` with `W = span(e1, e2)` and invariant complement
/// `W′ = span(e3, e4)`. `A` is upper triangular with `log` diagonal
/// `0.2 ± 0.3` and `0.5 ± 0.3`, so the exponent levels of `W` are 0.5 and
/// 0.2; `R` is a random rotation, rate 0.
pub fn purely_expanding() -> Result<(MatrixEnsemble, BlockSystem)> {
    let mut atoms = Vec::new();
    let angles = [0.7, 2.1, -1.3, 0.4];
    let mut k = 0;
    for s1 in [-0.3f64, 0.3] {
        for s2 in [-0.3f64, 0.3] {
            let mut g = Matrix::zeros(4, 4);
            g[(0, 0)] = (0.2 + s1).exp();
            g[(0, 1)] = if k % 2 == 0 { 1.0 } else { -0.5 };
            g[(1, 1)] = (0.5 + s2).exp();
            g.view_mut((2, 2), (2, 2)).copy_from(&rotation(angles[k]));
            atoms.push((0.25, g));
            k += 1;
        }
    }
    let ens = MatrixEnsemble::finite(atoms, "purely-expanding")?;
    Ok((ens, BlockSystem::coordinate(4, 2)?.with_block_tol(0.0)))
}

/// `[[a1, 0, 0], [0, a2, b], [0, 0, c]]` with `W = span(e1, e2)`: rates
/// 0.5 on `e1`, −0.5 on `e2`, 0 on the quotient. The quotient average sits
/// strictly between the two levels of `W`, and `W′ = span(e2, e3)` is the
/// invariant subspace with `W′ ∩ W = F_2(W) = span(e2)`.
pub fn mixed() -> Result<(MatrixEnsemble, BlockSystem)> {
    let mut atoms = Vec::new();
    for s1 in [-0.3f64, 0.3] {
        for s2 in [-0.3f64, 0.3] {
            for sc in [-0.4f64, 0.4] {
                for b in [-1.0, 1.0] {
                    let mut g = Matrix::zeros(3, 3);
                    g[(0, 0)] = (0.5 + s1).exp();
                    g[(1, 1)] = (-0.5 + s2).exp();
                    g[(1, 2)] = b;
                    g[(2, 2)] = sc.exp();
                    atoms.push((1.0 / 16.0, g));
                }
            }
        }
    }
    let ens = MatrixEnsemble::finite(atoms, "mixed")?;
    Ok((ens, BlockSystem::coordinate(3, 2)?.with_block_tol(0.0)))
}

/// `atoms` independent standard Gaussian `d×d` matrices, equal weights.
pub fn random_ensemble(d: usize, atoms: usize, seed: u64) -> Result<MatrixEnsemble> {
    let mut rng = rng::stream(seed, 0);
    let mats = (0..atoms)
        .map(|_| Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    MatrixEnsemble::uniform(mats, format!("gaussian(d={d},n={atoms},seed={seed})"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn designs_are_valid_and_respect_their_block_systems() {
        for (e, bs) in [affine_scalar(-0.2).unwrap(), two_block(-0.2, 0.3).unwrap(), purely_expanding().unwrap(), mixed().unwrap()] {
            bs.check(&e).unwrap();
        }
        let (e, v1) = transpose_support(3).unwrap();
        // O·e3 is fixed by every transposed atom
        let line = tilt3().column(2).into_owned();
        for a in e.transpose().atoms().unwrap() {
            let img = &a.matrix * &line;
            assert!((&img - &line * img.dot(&line)).norm() < 1e-12);
        }
        assert_eq!(v1.dim(), 2);
    }
}
