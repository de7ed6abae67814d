//! Bounded-Lipschitz discrepancy between two clouds: the largest gap in
//! mass under a seeded dictionary of tent functions
//! `φ(x) = max(0, 1 − dist(x, p)/r)`.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;

use super::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::linalg::{line_sine, Vector};
use crate::lyapunov::random_unit;
use crate::rng;
use crate::stats::compensated_sum;

pub const RADII: [f64; 3] = [0.1, 0.3, 0.6];
pub const DEFAULT_DICT_SIZE: usize = 192;

/// Largest discrepancy measured between independent `10^5`-step Birkhoff
/// clouds of the same law (shipped 2- and 3-dimensional examples, default
/// dictionary).
pub const NOISE_FLOOR: f64 = 0.008;

/// Fixed-order comparison so that the dictionary, which draws some centers
/// from the clouds themselves, does not depend on the argument order.
fn cmp_clouds(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        for ((wa, pa), (wb, pb)) in a.iter().zip(b.iter()) {
            let o = wa.total_cmp(&wb).then_with(|| {
                pa.coords().iter().zip(pb.coords().iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
            });
            if o.is_ne() {
                return o;
            }
        }
        Ordering::Equal
    })
}

/// Entries cycle through: a uniformly random center, a point of the first
/// cloud, a uniformly random center, a point of the second cloud. Radii
/// cycle through [`RADII`].
fn dictionary(m1: &EmpiricalMeasure, m2: &EmpiricalMeasure, size: usize, seed: u64) -> Vec<(Vector, f64)> {
    let d = m1.ambient_dim();
    let mut rng = rng::stream(seed, 0);
    (0..size)
        .map(|j| {
            let center = match j % 4 {
                1 => m1.points()[rng.random_range(0..m1.len())].coords().clone(),
                3 => m2.points()[rng.random_range(0..m2.len())].coords().clone(),
                _ => random_unit(d, &mut rng),
            };
            (center, RADII[j % RADII.len()])
        })
        .collect()
}

fn tent_mass(m: &EmpiricalMeasure, p: &Vector, r: f64) -> f64 {
    compensated_sum(m.iter().map(|(w, x)| w * (1.0 - line_sine(x.coords().as_slice(), p.as_slice()) / r).max(0.0)))
}

/// `max_φ |∫φ dm1 − ∫φ dm2|` over `dict_size` tent functions generated
/// from `dict_seed`. Symmetric, zero for identical clouds.
pub fn discrepancy(m1: &EmpiricalMeasure, m2: &EmpiricalMeasure, dict_size: usize, dict_seed: u64) -> Result<f64> {
    if m1.ambient_dim() != m2.ambient_dim() {
        return Err(Error::DimensionMismatch { expected: m1.ambient_dim(), got: m2.ambient_dim() });
    }
    if m1.is_empty() || m2.is_empty() {
        return Err(Error::Empty("empirical measure"));
    }
    let (a, b) = if cmp_clouds(m1, m2).is_le() { (m1, m2) } else { (m2, m1) };
    let dict = dictionary(a, b, dict_size, dict_seed);
    let gaps: Vec<f64> = dict.par_iter().map(|(p, r)| (tent_mass(a, p, *r) - tent_mass(b, p, *r)).abs()).collect();
    Ok(gaps.into_iter().fold(0.0, f64::max))
}
