//! Spectral quantities of a model: the fractal dimension D, the constant
//! lambda(D), the lattice/non-lattice classification of the log-contraction
//! measure, the branching martingale, and the moment condition that makes
//! the martingale limit non-degenerate.

use crate::error::{Error, Result};
use crate::geometry::neumaier_sum;
use crate::model::RifsModel;
use crate::tree::{CodeTree, StopRule};

/// `phi(s) = E(sum_i r_i^s)`, exactly evaluated as a finite double sum;
/// strictly decreasing on s >= 0 for any supercritical law.
pub fn phi(model: &RifsModel, s: f64) -> f64 {
    model
        .atoms
        .iter()
        .map(|a| {
            a.probability
                * a.maps
                    .iter()
                    .map(|m| m.ratio.powf(s))
                    .sum::<f64>()
        })
        .sum()
}

/// Unique root of `phi(D) = 1`, found by bisection (unconditionally
/// convergent; the bracket is halved to machine precision, well below the
/// 1e-12 contract). The boolean flags `D > d`, which signals an open set
/// condition inconsistency.
pub fn hausdorff_dimension(model: &RifsModel) -> Result<(f64, bool)> {
    let mean = model.mean_offspring();
    if mean <= 1.0 {
        return Err(Error::Subcritical { mean });
    }
    let d = model.dimension() as f64;
    let mut hi = d;
    let mut guard = 0;
    while phi(model, hi) >= 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 64 {
            return Err(Error::Gate("dimension root bracket did not close".into()));
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(model, mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    Ok((root, root > d + 1e-12))
}

/// `lambda(D) = E(sum_i |ln r_i| r_i^D)`, exact finite sum.
pub fn lambda_of_dimension(model: &RifsModel, fractal_dim: f64) -> f64 {
    model
        .atoms
        .iter()
        .map(|a| {
            a.probability
                * a.maps
                    .iter()
                    .map(|m| -m.ratio.ln() * m.ratio.powf(fractal_dim))
                    .sum::<f64>()
        })
        .sum()
}

/// `E(M_1 ln+ M_1)`, exact finite sum over atoms; finite for every finite
/// law, so the martingale limit satisfies E(M_inf) = 1 and is positive on
/// non-extinction.
pub fn biggins_moment(model: &RifsModel, fractal_dim: f64) -> f64 {
    model
        .atoms
        .iter()
        .map(|a| {
            let m1: f64 = a.maps.iter().map(|m| m.ratio.powf(fractal_dim)).sum();
            a.probability * m1 * m1.ln().max(0.0)
        })
        .sum()
}

/// Lattice classification of the measure mu concentrated on the distinct
/// values `|ln r_i|`.
#[derive(Clone, Debug, PartialEq)]
pub enum LatticeClass {
    /// All values are integer multiples of `constant` (the largest common
    /// generator); `multipliers[i]` is the integer for the i-th distinct
    /// value in ascending order.
    Lattice { constant: f64, multipliers: Vec<u64> },
    /// Witnessed by a value ratio with no admissible rational approximation.
    NonLattice {
        witness: (f64, f64),
        partial_quotients: Vec<u64>,
    },
}

impl LatticeClass {
    pub fn constant(&self) -> Option<f64> {
        match self {
            LatticeClass::Lattice { constant, .. } => Some(*constant),
            LatticeClass::NonLattice { .. } => None,
        }
    }
}

/// Rationality certificate for one ratio x: the first continued-fraction
/// convergent p/q with q <= denom_bound and |q*x - p| <= tol, if any.
fn rational_certificate(
    x: f64,
    denom_bound: u64,
    tol: f64,
) -> std::result::Result<Option<(u64, u64)>, (Vec<u64>, String)> {
    let mut quotients = Vec::new();
    // convergent recurrence p_k = a_k p_{k-1} + p_{k-2}
    let (mut p0, mut q0) = (0u128, 1u128); // k-2
    let (mut p1, mut q1) = (1u128, 0u128); // k-1 (before first quotient)
    let mut y = x;
    let mut first_fit: Option<(u64, u64)> = None;
    for _ in 0..64 {
        let a = y.floor();
        if !(a >= 0.0) || a > 1e18 {
            break;
        }
        let ai = a as u128;
        let p = ai * p1 + p0;
        let q = ai * q1 + q0;
        quotients.push(a as u64);
        if q > denom_bound as u128 {
            break;
        }
        let err = (q as f64 * x - p as f64).abs();
        if err <= tol {
            if let Some((fp, fq)) = first_fit {
                return Err((
                    quotients,
                    format!(
                        "both {fp}/{fq} and {p}/{q} fit |q*x - p| <= {tol}; tighten tol"
                    ),
                ));
            }
            first_fit = Some((p as u64, q as u64));
        }
        let frac = y - a;
        if frac < 1e-15 {
            break; // terminated: x is (numerically) exactly rational
        }
        p0 = p1;
        q0 = q1;
        p1 = p;
        q1 = q;
        y = 1.0 / frac;
    }
    match first_fit {
        Some(c) => Ok(Some(c)),
        None => Err((quotients, String::new())),
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Classifies the log-contraction measure. The distinct values `|ln r_i|`
/// are tested against the smallest one: a ratio x counts as rational when a
/// continued-fraction convergent p/q with q <= `denom_bound` satisfies
/// `|q*x - p| <= tol` (the denominator-weighted test keeps genuinely
/// irrational ratios like ln3/ln2 out, which any |x - p/q| threshold would
/// admit through large-denominator convergents). Testing against one base
/// value decides all pairwise ratios at once.
pub fn lattice_analysis(model: &RifsModel, denom_bound: u64, tol: f64) -> Result<LatticeClass> {
    let mean = model.mean_offspring();
    if mean <= 1.0 {
        return Err(Error::Subcritical { mean });
    }
    let mut values: Vec<f64> = model
        .atoms
        .iter()
        .flat_map(|a| a.maps.iter().map(|m| -m.ratio.ln()))
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    if values.is_empty() {
        return Err(Error::Gate("no similarity maps in any atom".into()));
    }
    let base = values[0];
    if values.len() == 1 {
        return Ok(LatticeClass::Lattice { constant: base, multipliers: vec![1] });
    }
    let mut fracs: Vec<(u128, u128)> = vec![(1, 1)];
    for &w in &values[1..] {
        let x = w / base;
        match rational_certificate(x, denom_bound, tol) {
            Ok(Some((p, q))) => fracs.push((p as u128, q as u128)),
            Ok(None) => unreachable!(),
            Err((quotients, msg)) if msg.is_empty() => {
                return Ok(LatticeClass::NonLattice {
                    witness: (w, base),
                    partial_quotients: quotients,
                });
            }
            Err((_, msg)) => return Err(Error::AmbiguousLattice(msg)),
        }
    }
    // common generator of base * {p_i / q_i}
    let mut lcm: u128 = 1;
    for &(_, q) in &fracs {
        lcm = lcm / gcd(lcm, q) * q;
        if lcm > 1_000_000_000_000 {
            return Err(Error::AmbiguousLattice(
                "common denominator overflow; tighten tol or lower denom_bound".into(),
            ));
        }
    }
    let mut g: u128 = 0;
    let numerators: Vec<u128> = fracs.iter().map(|&(p, q)| p * (lcm / q)).collect();
    for &n in &numerators {
        g = gcd(g, n);
    }
    let constant = base * g as f64 / lcm as f64;
    let multipliers: Vec<u64> = numerators.iter().map(|&n| (n / g) as u64).collect();
    // every value must be an integer multiple of the generator
    for (&w, &m) in values.iter().zip(&multipliers) {
        debug_assert!((w / constant - m as f64).abs() < 1e-9);
    }
    Ok(LatticeClass::Lattice { constant, multipliers })
}

pub const DEFAULT_DENOM_BOUND: u64 = 1_000_000;
pub const DEFAULT_LATTICE_TOL: f64 = 1e-9;

/// Spectral summary of a model.
#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub fractal_dim: f64,
    pub lambda: f64,
    pub lattice: LatticeClass,
    pub mean_offspring: f64,
    pub biggins_moment: f64,
    /// `E(M_1) = phi(D)`; equals 1 up to the root residual.
    pub mean_m1: f64,
    /// Set when D exceeds the ambient dimension.
    pub dimension_warning: bool,
}

pub fn spectral_report(model: &RifsModel) -> Result<SpectralReport> {
    let (fractal_dim, dimension_warning) = hausdorff_dimension(model)?;
    Ok(SpectralReport {
        fractal_dim,
        lambda: lambda_of_dimension(model, fractal_dim),
        lattice: lattice_analysis(model, DEFAULT_DENOM_BOUND, DEFAULT_LATTICE_TOL)?,
        mean_offspring: model.mean_offspring(),
        biggins_moment: biggins_moment(model, fractal_dim),
        mean_m1: phi(model, fractal_dim),
        dimension_warning,
    })
}

/// Martingale sequence M_0..M_n of a depth-stopped tree.
#[derive(Clone, Debug)]
pub struct MartingaleSeries {
    pub values: Vec<f64>,
    /// False when the last step still moves by more than 1% of max(1, M_n).
    pub settled: bool,
}

impl MartingaleSeries {
    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// `M_k = sum over generation-k nodes of composed_ratio^D` for k = 0..n.
pub fn martingale_values(tree: &CodeTree, fractal_dim: f64) -> Result<MartingaleSeries> {
    let n = match tree.rule {
        StopRule::Depth(n) => n,
        _ => {
            return Err(Error::Gate(
                "martingale_values requires a Depth-stopped tree".into(),
            ))
        }
    };
    let mut per_depth: Vec<Vec<f64>> = vec![Vec::new(); n as usize + 1];
    for node in &tree.nodes {
        per_depth[node.depth as usize].push(node.composed_ratio.powf(fractal_dim));
    }
    let values: Vec<f64> = per_depth.into_iter().map(neumaier_sum).collect();
    let settled = if values.len() >= 2 {
        let m_n = values[values.len() - 1];
        let m_prev = values[values.len() - 2];
        (m_n - m_prev).abs() <= 0.01 * m_n.abs().max(1.0)
    } else {
        false
    };
    Ok(MartingaleSeries { values, settled })
}
