//! Limit estimators.
//!
//! Assembles curvature curves eps -> C_k(F(eps)) over geometric radius
//! grids, forms the rescaled values eps^(D-k) C_k and their logarithmic
//! average, evaluates the deterministic integral constant
//! (1/lambda) int_0^rho r^(D-k-1) E(R_k(r)) dr by quadrature and Monte
//! Carlo over replicates, extracts lattice subsequences, and regresses the
//! per-realization average limits on the martingale estimates.
//!
//! Resolution policies
//! * dimension 1: leaf diameter at most `eta * eps` for every evaluated
//!   radius (one cover at `eta * eps_min` serves the whole curve);
//! * dimension 2: per-octave pixel sizes `h = h_base * 2^m` chosen so that
//!   `eps / h` stays in [kappa, 2*kappa) wherever `eps >= kappa * h_base`,
//!   with the finest level pinned at `h_base`. Every level renders the same
//!   realization (keyed node streams), so a curve remains one sample path.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{neumaier_sum, polygon_distance, ConvexPolygon};
use crate::grid::{
    self, curvatures_2d, edt, render_child_cover_2d, render_cover_2d, SqDistField,
};
use crate::interval::{render_cover_1d, CorrectionProfiles};
use crate::model::{BaseSet, RifsModel};
use crate::rng::{self, Stream};
use crate::spectral::martingale_values;
use crate::tree::{collect_leaves, sample_tree, StopRule};

pub const DEFAULT_ETA: f64 = 1.0 / 64.0;
pub const DEFAULT_KAPPA: f64 = 64.0;
pub const DEFAULT_POINTS_PER_UNIT: u32 = 64;
pub const DEFAULT_POINTS_PER_DECADE: u32 = 48;
pub const DEFAULT_BIG_R: f64 = 1.5;
/// Fewer points per unit of t than this is refused by the averaging rule.
pub const MIN_POINTS_PER_UNIT: f64 = 16.0;

/// Geometric radius grid from `eps_max` down to `eps_min`, uniform in
/// t = ln(1/eps), endpoints included exactly.
pub fn geometric_grid(eps_max: f64, eps_min: f64, points_per_unit: u32) -> Result<Vec<f64>> {
    if !(eps_max > eps_min && eps_min > 0.0) {
        return Err(Error::Gate(format!(
            "geometric grid needs eps_max > eps_min > 0, got {eps_max}, {eps_min}"
        )));
    }
    if points_per_unit == 0 {
        return Err(Error::Gate("points_per_unit must be positive".into()));
    }
    let span = (eps_max / eps_min).ln();
    let n = (span * points_per_unit as f64).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..=n)
        .map(|i| eps_max * (-(span * i as f64 / n as f64)).exp())
        .collect();
    grid[0] = eps_max;
    grid[n] = eps_min;
    Ok(grid)
}

/// Radius grid hitting exactly the lattice points e^{-(s + n c)} for every
/// s in `s_grid` and n = 0..=n_max, sorted decreasing.
pub fn lattice_grid(c: f64, s_grid: &[f64], n_max: u32) -> Vec<f64> {
    let mut eps: Vec<f64> = s_grid
        .iter()
        .flat_map(|&s| (0..=n_max).map(move |n| (-(s + n as f64 * c)).exp()))
        .collect();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eps.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs());
    eps
}

/// Grid/resolution parameters for curve assembly.
#[derive(Clone, Debug)]
pub struct CurveRequest {
    pub k_list: Vec<usize>,
    /// Strictly decreasing radii.
    pub epsilons: Vec<f64>,
    /// Dimension-1 resolution policy (leaf diameter <= eta * eps).
    pub eta: f64,
    /// Dimension-2 finest pixel size.
    pub h_base: f64,
    /// Dimension-2 radius-to-pixel target.
    pub kappa: f64,
    pub big_r: f64,
    /// Drop leaves whose line dies within the look-ahead horizon.
    pub prune: bool,
}

impl CurveRequest {
    pub fn new_1d(k_list: Vec<usize>, epsilons: Vec<f64>) -> Self {
        CurveRequest {
            k_list,
            epsilons,
            eta: DEFAULT_ETA,
            h_base: 0.0,
            kappa: DEFAULT_KAPPA,
            big_r: DEFAULT_BIG_R,
            prune: true,
        }
    }

    pub fn new_2d(k_list: Vec<usize>, epsilons: Vec<f64>, h_base: f64) -> Self {
        CurveRequest {
            k_list,
            epsilons,
            eta: DEFAULT_ETA,
            h_base,
            kappa: DEFAULT_KAPPA,
            big_r: DEFAULT_BIG_R,
            prune: true,
        }
    }
}

/// Provenance and resolution metadata carried by every curve.
#[derive(Clone, Copy, Debug)]
pub struct CurveMeta {
    pub k: usize,
    pub fractal_dim: f64,
    pub big_r: f64,
    /// Stopping threshold rho = R * diam(J).
    pub rho: f64,
    /// h_base (dimension 2) or the cover leaf bound (dimension 1).
    pub resolution: f64,
    pub eta: f64,
    pub seed: u64,
    pub replicate: u64,
}

/// Sampled curvature curve eps -> C_k(F(eps)) on a decreasing radius grid.
#[derive(Clone, Debug)]
pub struct CurvatureCurve {
    pub epsilons: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: CurveMeta,
}

impl CurvatureCurve {
    /// Pointwise rescale (eps, eps^(D-k) * C_k).
    pub fn rescaled(&self) -> Vec<(f64, f64)> {
        let e = self.meta.fractal_dim - self.meta.k as f64;
        self.epsilons
            .iter()
            .zip(&self.values)
            .map(|(&eps, &v)| (eps, eps.powf(e) * v))
            .collect()
    }

    /// Largest relative residual of the time-change bookkeeping identity:
    /// with t = ln(rho/eps) and Z_t = rho^-k e^kt C_k(F(rho e^-t)), the
    /// rescaled value eps^(D-k) C_k equals rho^D e^-Dt Z_t. Pure algebra;
    /// stays at rounding level.
    pub fn substitution_identity_residual(&self) -> f64 {
        let d = self.meta.fractal_dim;
        let k = self.meta.k as f64;
        let rho = self.meta.rho;
        self.epsilons
            .iter()
            .zip(&self.values)
            .map(|(&eps, &v)| {
                let direct = eps.powf(d - k) * v;
                let t = (rho / eps).ln();
                let z = rho.powf(-k) * (k * t).exp() * v;
                let via_t = rho.powf(d) * (-d * t).exp() * z;
                (direct - via_t).abs() / direct.abs().max(1e-300)
            })
            .fold(0.0, f64::max)
    }
}

/// Pointwise rescaled curve (eps, eps^(D-k) * C_k(F(eps))).
pub fn scaling_curve(curve: &CurvatureCurve) -> Vec<(f64, f64)> {
    curve.rescaled()
}

fn check_k(dim: u8, k_list: &[usize]) -> Result<()> {
    for &k in k_list {
        if k > dim as usize {
            return Err(Error::Gate(format!(
                "curvature order k = {k} exceeds the ambient dimension {dim}"
            )));
        }
    }
    Ok(())
}

/// Samples one realization and evaluates its curvature curves for every
/// requested k on the request's radius grid.
pub fn curvature_curves(
    model: &RifsModel,
    fractal_dim: f64,
    req: &CurveRequest,
    seed: u64,
    replicate: u64,
) -> Result<Vec<CurvatureCurve>> {
    if req.epsilons.is_empty() {
        return Err(Error::Gate("empty radius grid".into()));
    }
    for w in req.epsilons.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Gate("radius grid must be strictly decreasing".into()));
        }
    }
    check_k(model.dimension(), &req.k_list)?;
    match model.dimension() {
        1 => curves_1d(model, fractal_dim, req, seed, replicate),
        _ => curves_2d(model, fractal_dim, req, seed, replicate),
    }
}

fn meta_for(
    model: &RifsModel,
    fractal_dim: f64,
    req: &CurveRequest,
    k: usize,
    resolution: f64,
    seed: u64,
    replicate: u64,
) -> CurveMeta {
    CurveMeta {
        k,
        fractal_dim,
        big_r: req.big_r,
        rho: req.big_r * model.base.diam(),
        resolution,
        eta: req.eta,
        seed,
        replicate,
    }
}

fn curves_1d(
    model: &RifsModel,
    fractal_dim: f64,
    req: &CurveRequest,
    seed: u64,
    replicate: u64,
) -> Result<Vec<CurvatureCurve>> {
    let eps_min = *req.epsilons.last().unwrap();
    let resolution = req.eta * eps_min;
    let leaves = collect_leaves(model, seed, replicate, resolution, req.prune)?;
    let cover = render_cover_1d(&leaves, model)?;
    let profile = crate::interval::GapProfile::new(&cover.set);
    let values_per_eps: Vec<(usize, f64)> = req
        .epsilons
        .iter()
        .map(|&eps| profile.curvatures_at(eps))
        .collect();
    Ok(req
        .k_list
        .iter()
        .map(|&k| {
            let values = values_per_eps
                .iter()
                .map(|&(c0, c1)| if k == 0 { c0 as f64 } else { c1 })
                .collect();
            CurvatureCurve {
                epsilons: req.epsilons.clone(),
                values,
                meta: meta_for(model, fractal_dim, req, k, resolution, seed, replicate),
            }
        })
        .collect())
}

fn octave_h(eps: f64, h_base: f64, kappa: f64) -> f64 {
    let m = (eps / (kappa * h_base)).log2().floor().max(0.0).min(40.0);
    h_base * 2.0f64.powi(m as i32)
}

fn curves_2d(
    model: &RifsModel,
    fractal_dim: f64,
    req: &CurveRequest,
    seed: u64,
    replicate: u64,
) -> Result<Vec<CurvatureCurve>> {
    if !(req.h_base > 0.0) {
        return Err(Error::Gate("dimension-2 curves need h_base > 0".into()));
    }
    let eps_min = *req.epsilons.last().unwrap();
    if eps_min < grid::EPS_GATE_FACTOR * req.h_base {
        return Err(Error::ResolutionTooCoarse(format!(
            "smallest radius {eps_min} is below the gate {} * h_base = {}",
            grid::EPS_GATE_FACTOR,
            grid::EPS_GATE_FACTOR * req.h_base
        )));
    }
    let n = req.epsilons.len();
    let mut per_k: Vec<Vec<f64>> = vec![vec![0.0; n]; req.k_list.len()];
    let mut idx = 0;
    while idx < n {
        let h_level = octave_h(req.epsilons[idx], req.h_base, req.kappa);
        let mut end = idx + 1;
        while end < n && octave_h(req.epsilons[end], req.h_base, req.kappa) == h_level {
            end += 1;
        }
        let leaves = collect_leaves(model, seed, replicate, h_level / 2.0, req.prune)?;
        if leaves.leaves.is_empty() {
            // extinct root: every value stays at zero
            break;
        }
        let mask = render_cover_2d(&leaves, model, h_level, req.epsilons[idx])?;
        let field = edt(&mask)?;
        for t in idx..end {
            let c = curvatures_2d(&field, req.epsilons[t])?;
            for (slot, &k) in req.k_list.iter().enumerate() {
                per_k[slot][t] = match k {
                    0 => c.euler as f64,
                    1 => c.boundary,
                    _ => c.area,
                };
            }
        }
        idx = end;
    }
    // an extinct root keeps every value at zero
    Ok(req
        .k_list
        .iter()
        .enumerate()
        .map(|(slot, &k)| CurvatureCurve {
            epsilons: req.epsilons.clone(),
            values: std::mem::take(&mut per_k[slot]),
            meta: meta_for(model, fractal_dim, req, k, req.h_base, seed, replicate),
        })
        .collect())
}

/// Logarithmically averaged limit
/// `(1/|ln delta|) int_delta^1 eps^(D-k) C_k(F(eps)) eps^-1 d eps`,
/// trapezoidal in t = ln(1/eps) over the curve points inside [delta, 1].
/// Requires the curve to cover the range with at least 16 points per unit
/// of t.
pub fn average_limit(curve: &CurvatureCurve, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Gate(format!("delta must lie in (0,1), got {delta}")));
    }
    let d = curve.meta.fractal_dim;
    let k = curve.meta.k as f64;
    let tol = 1e-9;
    let pts: Vec<(f64, f64)> = curve
        .epsilons
        .iter()
        .zip(&curve.values)
        .filter(|(&eps, _)| eps <= 1.0 + tol && eps >= delta * (1.0 - tol))
        .map(|(&eps, &v)| ((1.0 / eps).ln(), eps.powf(d - k) * v))
        .collect();
    if pts.len() < 2 {
        return Err(Error::GridTooCoarse(
            "curve has fewer than two points inside [delta, 1]".into(),
        ));
    }
    let t_lo = pts.first().unwrap().0;
    let t_hi = pts.last().unwrap().0;
    let target = (1.0 / delta).ln();
    if t_lo > tol.max(1.0 / MIN_POINTS_PER_UNIT) || t_hi < target - 1e-6 {
        return Err(Error::Gate(format!(
            "curve does not cover [delta, 1]: t range [{t_lo}, {t_hi}] vs [0, {target}]"
        )));
    }
    let mut integral = 0.0;
    for w in pts.windows(2) {
        let dt = w[1].0 - w[0].0;
        if dt > 1.0 / MIN_POINTS_PER_UNIT + 1e-12 {
            return Err(Error::GridTooCoarse(format!(
                "step {dt} in t exceeds 1/{MIN_POINTS_PER_UNIT}"
            )));
        }
        integral += 0.5 * dt * (w[0].1 + w[1].1);
    }
    Ok(integral / (t_hi - t_lo))
}

/// Specification of the r-quadrature behind the integral constant.
#[derive(Clone, Debug)]
pub struct RhsSpec {
    /// Lower truncation of the r-grid; defaults to rho * 1e-3 (raised to the
    /// raster gate 4 h_base in dimension 2).
    pub r_min: Option<f64>,
    pub points_per_decade: u32,
    pub eta: f64,
    pub h_base: f64,
    pub kappa: f64,
    pub big_r: f64,
    pub prune: bool,
}

impl RhsSpec {
    pub fn new_1d() -> Self {
        RhsSpec {
            r_min: None,
            points_per_decade: DEFAULT_POINTS_PER_DECADE,
            eta: DEFAULT_ETA,
            h_base: 0.0,
            kappa: DEFAULT_KAPPA,
            big_r: DEFAULT_BIG_R,
            prune: true,
        }
    }

    pub fn new_2d(h_base: f64) -> Self {
        RhsSpec { h_base, ..RhsSpec::new_1d() }
    }
}

/// Monte Carlo estimate of the deterministic constant
/// `(1/lambda) int_0^rho r^(D-k-1) E(R_k(r)) dr`.
#[derive(Clone, Debug)]
pub struct RhsEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Heuristic bound on the truncated tail below r_min.
    pub tail_bound: f64,
    pub r_min: f64,
    pub rho: f64,
    pub replicates: u64,
    /// Set when |D - k| vanishes and the integral cannot carry a
    /// fractal-curvature reading; `value` is NaN then.
    pub non_fractal: bool,
    pub message: Option<String>,
}

/// Evaluates the right-hand-side constant for one curvature order.
/// Deterministic models collapse to a single replicate with zero standard
/// error.
pub fn rhs_constant(
    model: &RifsModel,
    fractal_dim: f64,
    lambda: f64,
    k: usize,
    spec: &RhsSpec,
    replicates: u64,
    seed: u64,
) -> Result<RhsEstimate> {
    check_k(model.dimension(), &[k])?;
    let rho = spec.big_r * model.base.diam();
    if (fractal_dim - k as f64).abs() < 1e-6 {
        return Ok(RhsEstimate {
            value: f64::NAN,
            stderr: f64::NAN,
            tail_bound: f64::NAN,
            r_min: f64::NAN,
            rho,
            replicates: 0,
            non_fractal: true,
            message: Some(format!(
                "rescaling exponent D - k = {} vanishes; the r-integral does not \
                 define a fractal curvature here - verify the exponent choice \
                 before reading these values as curvatures",
                fractal_dim - k as f64
            )),
        });
    }
    let mut r_min = spec.r_min.unwrap_or(rho * 1e-3);
    if model.dimension() == 2 {
        r_min = r_min.max(grid::EPS_GATE_FACTOR * spec.h_base);
    }
    if !(r_min > 0.0 && r_min < rho) {
        return Err(Error::Gate(format!(
            "rhs quadrature needs 0 < r_min < rho, got {r_min}, {rho}"
        )));
    }
    let decades = (rho / r_min).log10();
    let n = (decades * spec.points_per_decade as f64).ceil().max(4.0) as usize;
    let reps = if model.is_deterministic() { 1 } else { replicates.max(1) };

    let per_rep: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<(f64, f64)> {
            // cheap probe for the realized first generation: the indicator
            // 1{r <= rho r_i} makes R_k jump at each rho r_i, and splitting
            // the quadrature there removes the O(step) trapezoid error
            let probe = collect_leaves(model, seed, rep, model.base.diam() * 0.999, false)?;
            if probe.root_extinct {
                return Ok((0.0, 0.0));
            }
            let mut thresholds: Vec<f64> = probe
                .first_generation
                .iter()
                .map(|f| rho * f.ratio)
                .filter(|&t| t > r_min * (1.0 + 1e-9) && t < rho * (1.0 - 1e-9))
                .collect();
            thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            thresholds.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());

            // grid phase jitter decorrelates lattice radii (plane, k = 0)
            let phase = if model.dimension() == 2 && k == 0 {
                Stream::new(seed, rep, rng::DOMAIN_JITTER).next_unit()
            } else {
                0.0
            };
            let mut radii: Vec<f64> = (0..=n)
                .map(|j| r_min * (rho / r_min).powf((j as f64 + phase) / n as f64))
                .filter(|&r| r <= rho * (1.0 + 1e-12))
                .collect();
            if phase == 0.0 {
                let len = radii.len();
                radii[0] = r_min;
                radii[len - 1] = rho;
            }
            for &t in &thresholds {
                radii.push(t);
                radii.push(t * (1.0 + 1e-12));
            }
            radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
            radii.dedup_by(|a, b| *a == *b);
            radii.retain(|&r| r <= rho * (1.0 + 1e-12));
            let corrections = match model.dimension() {
                1 => corrections_1d(model, seed, rep, &radii, spec, k)?,
                _ => corrections_2d(model, seed, rep, &radii, spec, k, rho)?,
            };
            // trapezoid in s = ln r of e^((D-k)s) R_k(e^s)
            let e = fractal_dim - k as f64;
            let pts: Vec<(f64, f64)> = radii
                .iter()
                .zip(&corrections)
                .map(|(&r, &v)| (r.ln(), (e * r.ln()).exp() * v))
                .collect();
            let mut integral = 0.0;
            for w in pts.windows(2) {
                integral += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
            }
            let small = corrections
                .iter()
                .take(3)
                .map(|v| v.abs())
                .fold(0.0f64, f64::max);
            let tail = 2.0 * small * r_min.powf(e) / lambda;
            Ok((integral / lambda, tail))
        })
        .collect::<Result<Vec<_>>>()?;

    let values: Vec<f64> = per_rep.iter().map(|p| p.0).collect();
    let mean = neumaier_sum(values.iter().cloned()) / values.len() as f64;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64;
        (var / values.len() as f64).sqrt()
    } else {
        0.0
    };
    let tail_bound = per_rep.iter().map(|p| p.1).fold(0.0f64, f64::max);
    Ok(RhsEstimate {
        value: mean,
        stderr,
        tail_bound,
        r_min,
        rho,
        replicates: reps,
        non_fractal: false,
        message: None,
    })
}

fn corrections_1d(
    model: &RifsModel,
    seed: u64,
    rep: u64,
    radii: &[f64],
    spec: &RhsSpec,
    k: usize,
) -> Result<Vec<f64>> {
    let resolution = spec.eta * radii[0];
    let leaves = collect_leaves(model, seed, rep, resolution, spec.prune)?;
    let cover = render_cover_1d(&leaves, model)?;
    if cover.root_extinct {
        return Ok(vec![0.0; radii.len()]);
    }
    let rho = spec.big_r * model.base.diam();
    let profiles = CorrectionProfiles::new(&cover);
    Ok(radii
        .iter()
        .map(|&r| profiles.r_correction(rho, r, k))
        .collect())
}

fn corrections_2d(
    model: &RifsModel,
    seed: u64,
    rep: u64,
    radii: &[f64],
    spec: &RhsSpec,
    k: usize,
    rho: f64,
) -> Result<Vec<f64>> {
    // coarse probe for the first generation only
    let diam = model.base.diam();
    let probe = collect_leaves(model, seed, rep, diam * 0.999, false)?;
    if probe.root_extinct {
        return Ok(vec![0.0; radii.len()]);
    }
    let base_poly = match &model.base {
        BaseSet::Polygon(p) => p.clone(),
        _ => unreachable!(),
    };
    let first_gen = probe.first_generation.clone();
    let child_polys: Vec<ConvexPolygon> = first_gen
        .iter()
        .map(|fg| base_poly.transform(&fg.map))
        .collect();
    let mut min_gap = f64::INFINITY;
    for i in 0..child_polys.len() {
        for j in i + 1..child_polys.len() {
            min_gap = min_gap.min(polygon_distance(&child_polys[i], &child_polys[j]));
        }
    }
    let min_ratio = first_gen.iter().map(|f| f.ratio).fold(f64::INFINITY, f64::min);

    let pick = |c: &grid::Curvatures2| -> f64 {
        match k {
            0 => c.euler as f64,
            1 => c.boundary,
            _ => c.area,
        }
    };

    let mut out = vec![0.0; radii.len()];
    let mut idx = 0;
    while idx < radii.len() {
        let h_level = octave_h(radii[idx], spec.h_base, spec.kappa);
        let mut end = idx + 1;
        while end < radii.len() && octave_h(radii[end], spec.h_base, spec.kappa) == h_level {
            end += 1;
        }
        // radii whose child parallel sets are provably pairwise disjoint
        // while every indicator is active contribute an exact zero
        let needed: Vec<usize> = (idx..end)
            .filter(|&t| {
                let r = radii[t];
                !(r <= rho * min_ratio && 2.0 * r < min_gap - 2.0 * h_level)
            })
            .collect();
        if !needed.is_empty() {
            let r_max = radii[end - 1].max(radii[idx]);
            let leaves = collect_leaves(model, seed, rep, h_level / 2.0, spec.prune)?;
            let mask = render_cover_2d(&leaves, model, h_level, r_max)?;
            let field = edt(&mask)?;
            let mut child_fields: Vec<(f64, Option<SqDistField>)> = Vec::new();
            for fg in &first_gen {
                let has_leaves = leaves.leaves.iter().any(|l| l.first_gen == fg.index);
                let f = if has_leaves {
                    let child_mask =
                        render_child_cover_2d(&leaves, model, fg.index, h_level, r_max)?;
                    Some(edt(&child_mask)?)
                } else {
                    None
                };
                child_fields.push((fg.ratio, f));
            }
            for &t in &needed {
                let r = radii[t];
                let full = pick(&curvatures_2d(&field, r)?);
                let mut child_sum = 0.0;
                for (ratio, f) in &child_fields {
                    if r <= rho * ratio {
                        if let Some(f) = f {
                            child_sum += pick(&curvatures_2d(f, r)?);
                        }
                    }
                }
                out[t] = full - child_sum;
            }
        }
        idx = end;
    }
    Ok(out)
}

/// First-generation correction R_k(r) in the plane for a single radius,
/// rendered at the per-octave resolution; the one-radius form of the rhs
/// machinery for direct probing and tests.
pub fn r_correction_2d(
    model: &RifsModel,
    seed: u64,
    replicate: u64,
    r: f64,
    k: usize,
    spec: &RhsSpec,
) -> Result<f64> {
    let rho = spec.big_r * model.base.diam();
    Ok(corrections_2d(model, seed, replicate, &[r], spec, k, rho)?[0])
}

/// One lattice subsequence: the rescaled values along eps = e^{-(s + n c)}.
#[derive(Clone, Debug)]
pub struct LatticeSeq {
    pub s: f64,
    pub values: Vec<f64>,
    pub settled: bool,
    pub limit: f64,
}

/// Extracts, for each offset s, the sequence
/// `e^{(k-D)(s+nc)} C_k(F(e^{-(s+nc)}))` over n. The curve must contain the
/// lattice radii exactly (build it with [`lattice_grid`]). A sequence is
/// settled when its last two entries differ by less than `rel_tol`
/// relatively.
pub fn lattice_sequences(
    curve: &CurvatureCurve,
    c: f64,
    s_grid: &[f64],
    rel_tol: f64,
) -> Result<Vec<LatticeSeq>> {
    if !(c > 0.0) {
        return Err(Error::Gate(format!("lattice constant must be positive, got {c}")));
    }
    let d = curve.meta.fractal_dim;
    let k = curve.meta.k as f64;
    let eps_min = *curve.epsilons.last().unwrap();
    let mut out = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let mut values = Vec::new();
        let mut n = 0u32;
        loop {
            let target = (-(s + n as f64 * c)).exp();
            if target < eps_min * (1.0 - 1e-9) {
                break;
            }
            let found = curve
                .epsilons
                .iter()
                .position(|&e| (e - target).abs() <= 1e-9 * target)
                .ok_or_else(|| {
                    Error::Gate(format!(
                        "curve lacks the lattice radius e^-({s} + {n} * {c}) = {target}"
                    ))
                })?;
            values.push(target.powf(d - k) * curve.values[found]);
            n += 1;
        }
        if values.len() < 2 {
            return Err(Error::GridTooCoarse(format!(
                "lattice sequence at s = {s} has fewer than two points"
            )));
        }
        let last = values[values.len() - 1];
        let prev = values[values.len() - 2];
        let settled = (last - prev).abs() < rel_tol * last.abs().max(1e-300);
        out.push(LatticeSeq { s, values, settled, limit: last });
    }
    Ok(out)
}

/// One replicate of the regression sample.
#[derive(Clone, Copy, Debug)]
pub struct RegressionPoint {
    pub replicate: u64,
    pub m_depth: f64,
    pub avg_limit: f64,
    pub settled: bool,
}

/// Ordinary least squares of per-realization average limits on martingale
/// estimates, with a label-permutation negative control.
#[derive(Clone, Debug)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub slope_ci: (f64, f64),
    pub intercept_ci: (f64, f64),
    /// All martingale values coincide; slope fields then hold the direct
    /// mean of y with its confidence band and the intercept is pinned at 0.
    pub degenerate: bool,
    pub n_used: usize,
    pub excluded_nonsettled: usize,
    pub permutation_slope: f64,
    pub permutation_ci: (f64, f64),
    pub points: Vec<RegressionPoint>,
}

/// Parameters for [`m_infinity_regression`].
#[derive(Clone, Debug)]
pub struct RegressionSpec {
    pub k: usize,
    pub replicates: u64,
    pub depth: u32,
    pub delta: f64,
    pub points_per_unit: u32,
    pub eta: f64,
    pub h_base: f64,
    pub kappa: f64,
    pub big_r: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let sigma2 = rss / (n - 2.0).max(1.0);
    let se_slope = (sigma2 / sxx).sqrt();
    let se_intercept = (sigma2 * (1.0 / n + xm * xm / sxx)).sqrt();
    (slope, intercept, se_slope, se_intercept)
}

/// Per replicate, pairs the martingale estimate `x = M_depth` with the
/// average limit `y = average_limit(curve, delta)` of the same realization
/// and regresses y on x. The expected slope is the rhs constant and the
/// expected intercept 0. Non-settled martingale replicates are excluded
/// (counted), and a deterministic permutation of y against x provides the
/// negative control.
pub fn m_infinity_regression(
    model: &RifsModel,
    fractal_dim: f64,
    spec: &RegressionSpec,
    seed: u64,
) -> Result<Regression> {
    if spec.replicates < 100 {
        return Err(Error::Gate(format!(
            "regression needs at least 100 replicates, got {}",
            spec.replicates
        )));
    }
    if model.has_extinction() {
        return Err(Error::Gate(
            "regression requires a model without extinction atoms".into(),
        ));
    }
    let grid_eps = geometric_grid(1.0, spec.delta, spec.points_per_unit)?;
    let req = CurveRequest {
        k_list: vec![spec.k],
        epsilons: grid_eps,
        eta: spec.eta,
        h_base: spec.h_base,
        kappa: spec.kappa,
        big_r: spec.big_r,
        prune: false,
    };
    let points: Vec<RegressionPoint> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| -> Result<RegressionPoint> {
            let tree = sample_tree(model, seed, rep, StopRule::Depth(spec.depth), spec.big_r)?;
            let series = martingale_values(&tree, fractal_dim)?;
            let curves = curvature_curves(model, fractal_dim, &req, seed, rep)?;
            let y = average_limit(&curves[0], spec.delta)?;
            Ok(RegressionPoint {
                replicate: rep,
                m_depth: series.last(),
                avg_limit: y,
                settled: series.settled,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let used: Vec<&RegressionPoint> = points.iter().filter(|p| p.settled).collect();
    let excluded = points.len() - used.len();
    if used.len() < 8 {
        return Err(Error::Gate(format!(
            "only {} settled replicates; cannot regress",
            used.len()
        )));
    }
    let xs: Vec<f64> = used.iter().map(|p| p.m_depth).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.avg_limit).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let z = 1.959963984540054; // normal 97.5% quantile

    if sxx <= 1e-14 * n {
        let ym = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - ym) * (y - ym)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let half = z * sd / n.sqrt();
        return Ok(Regression {
            slope: ym,
            intercept: 0.0,
            slope_ci: (ym - half, ym + half),
            intercept_ci: (0.0, 0.0),
            degenerate: true,
            n_used: used.len(),
            excluded_nonsettled: excluded,
            permutation_slope: f64::NAN,
            permutation_ci: (f64::NAN, f64::NAN),
            points,
        });
    }

    let (slope, intercept, se_s, se_i) = ols(&xs, &ys);
    let perm = rng::permutation(seed, ys.len());
    let ys_perm: Vec<f64> = perm.iter().map(|&i| ys[i]).collect();
    let (pslope, _, pse, _) = ols(&xs, &ys_perm);
    Ok(Regression {
        slope,
        intercept,
        slope_ci: (slope - z * se_s, slope + z * se_s),
        intercept_ci: (intercept - z * se_i, intercept + z * se_i),
        degenerate: false,
        n_used: used.len(),
        excluded_nonsettled: excluded,
        permutation_slope: pslope,
        permutation_ci: (pslope - z * pse, pslope + z * pse),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cantor_model;
    use crate::spectral::hausdorff_dimension;

    fn cantor_dim() -> f64 {
        2.0f64.ln() / 3.0f64.ln()
    }

    #[test]
    fn geometric_grid_endpoints_and_density() {
        let g = geometric_grid(1.0, 1e-4, 64).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(*g.last().unwrap(), 1e-4);
        for w in g.windows(2) {
            let dt = (w[0] / w[1]).ln();
            assert!(dt <= 1.0 / 64.0 + 1e-12);
        }
    }

    #[test]
    fn average_of_constant_is_constant() {
        // k = D in the meta makes eps^(D-k) = 1, so a constant curve
        // averages to itself
        let eps = geometric_grid(1.0, 1e-6, 64).unwrap();
        let n = eps.len();
        let curve = CurvatureCurve {
            epsilons: eps,
            values: vec![2.5; n],
            meta: CurveMeta {
                k: 1,
                fractal_dim: 1.0,
                big_r: 1.5,
                rho: 1.5,
                resolution: 1e-8,
                eta: 1.0 / 64.0,
                seed: 0,
                replicate: 0,
            },
        };
        for &delta in &[1e-2, 1e-4, 1e-6] {
            let v = average_limit(&curve, delta).unwrap();
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn average_kills_pure_lattice_oscillation() {
        // integrand cos(2 pi t / c) in t = ln(1/eps): build C_k values so the
        // rescaled integrand is exactly the cosine; closed form of the mean
        // over [0, T] is sin(2 pi T / c) / (2 pi T / c) -> 0
        let c = 3.0f64.ln();
        let eps = geometric_grid(1.0, 1e-8, 128).unwrap();
        let d = cantor_dim();
        let values: Vec<f64> = eps
            .iter()
            .map(|&e| {
                let t = (1.0 / e).ln();
                (2.0 * std::f64::consts::PI * t / c).cos() / e.powf(d - 1.0)
            })
            .collect();
        let curve = CurvatureCurve {
            epsilons: eps,
            values,
            meta: CurveMeta {
                k: 1,
                fractal_dim: d,
                big_r: 1.5,
                rho: 1.5,
                resolution: 1e-10,
                eta: 1.0 / 64.0,
                seed: 0,
                replicate: 0,
            },
        };
        let delta = 1e-8f64;
        let t_span = (1.0 / delta).ln();
        let closed_form = (2.0 * std::f64::consts::PI * t_span / c).sin()
            / (2.0 * std::f64::consts::PI * t_span / c);
        let v = average_limit(&curve, delta).unwrap();
        assert!((v - closed_form).abs() < 1e-3, "{v} vs {closed_form}");
        assert!(v.abs() < 0.02);
    }

    #[test]
    fn grid_too_coarse_rejected() {
        let eps = geometric_grid(1.0, 1e-3, 8).unwrap();
        let n = eps.len();
        let curve = CurvatureCurve {
            epsilons: eps,
            values: vec![1.0; n],
            meta: CurveMeta {
                k: 1,
                fractal_dim: 1.0,
                big_r: 1.5,
                rho: 1.5,
                resolution: 1e-6,
                eta: 1.0 / 64.0,
                seed: 0,
                replicate: 0,
            },
        };
        assert!(matches!(
            average_limit(&curve, 1e-3),
            Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn cantor_curve_matches_closed_form_everywhere() {
        let model = cantor_model();
        let d = hausdorff_dimension(&model).unwrap().0;
        let eps = geometric_grid(1.0, 1e-5, 32).unwrap();
        let req = CurveRequest::new_1d(vec![0, 1], eps.clone());
        let curves = curvature_curves(&model, d, &req, 42, 0).unwrap();
        let c1 = &curves[1];
        for (&e, &v) in c1.epsilons.iter().zip(&c1.values) {
            let expect = crate::interval::cantor_parallel_length(e);
            assert!(
                (v - expect).abs() <= 1e-12 * expect.max(1.0),
                "eps={e}: {v} vs {expect}"
            );
        }
        // component count: 1 + sum over open gap generations = 2^M with
        // M = floor(ln(1/2 eps)/ln 3), 1 once every gap is closed
        let c0 = &curves[0];
        for (&e, &v) in c0.epsilons.iter().zip(&c0.values) {
            let m = ((1.0 / (2.0 * e)).ln() / 3.0f64.ln()).floor();
            let expect = if 2.0 * e >= 1.0 / 3.0 { 1.0 } else { 2.0f64.powf(m) };
            assert_eq!(v, expect, "eps={e}");
        }
        assert!(c1.substitution_identity_residual() < 1e-12);
    }

    #[test]
    fn scaling_curve_lattice_oscillation_visible() {
        let model = cantor_model();
        let d = cantor_dim();
        let eps = geometric_grid(0.1, 1e-6, 64).unwrap();
        let req = CurveRequest::new_1d(vec![1], eps);
        let curves = curvature_curves(&model, d, &req, 1, 0).unwrap();
        let resc = scaling_curve(&curves[0]);
        let vals: Vec<f64> = resc.iter().map(|p| p.1).collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min > 1.005, "log-periodic oscillation expected");
        assert!(max / min < 1.10, "oscillation is a few percent for the cantor set");
    }

    #[test]
    fn rhs_constant_cantor_against_closed_form() {
        // R_1(r) piecewise closed form: 0 on (0,1/6], 1/3 - 2r on (1/6,1/2],
        // 1 + 2r on (1/2, 3/2]; integral of r^(D-2) R_1(r) evaluated by the
        // antiderivative a r^(D-1)/(D-1) + b r^D/D per piece
        let model = cantor_model();
        let d = cantor_dim();
        let lambda = 3.0f64.ln();
        let prim = |a: f64, b: f64, r: f64| a * r.powf(d - 1.0) / (d - 1.0) + b * r.powf(d) / d;
        let analytic = (prim(1.0 / 3.0, -2.0, 0.5) - prim(1.0 / 3.0, -2.0, 1.0 / 6.0)
            + prim(1.0, 2.0, 1.5)
            - prim(1.0, 2.0, 0.5))
            / lambda;
        let spec = RhsSpec {
            points_per_decade: 192,
            r_min: Some(0.02),
            ..RhsSpec::new_1d()
        };
        let est = rhs_constant(&model, d, lambda, 1, &spec, 1, 7).unwrap();
        assert_eq!(est.stderr, 0.0);
        assert!(
            (est.value - analytic).abs() < 2e-3 * analytic.abs(),
            "quadrature {} vs closed form {analytic}",
            est.value
        );
        assert!(est.tail_bound < 1e-12, "integrand vanishes below 1/6");
    }

    #[test]
    fn rhs_independent_of_stopping_factor() {
        let model = cantor_model();
        let d = cantor_dim();
        let lambda = 3.0f64.ln();
        let mk = |big_r: f64| RhsSpec {
            points_per_decade: 192,
            r_min: Some(0.02),
            big_r,
            ..RhsSpec::new_1d()
        };
        let a = rhs_constant(&model, d, lambda, 1, &mk(1.5), 1, 7).unwrap();
        let b = rhs_constant(&model, d, lambda, 1, &mk(1.6), 1, 7).unwrap();
        assert!(
            (a.value - b.value).abs() < 0.01 * a.value.abs(),
            "R = 1.5 gives {}, R = 1.6 gives {}",
            a.value,
            b.value
        );
    }

    #[test]
    fn non_fractal_exponent_flagged() {
        // two maps of ratio 1/2 tile [0,1]: D = 1 = k
        let text = r#"
name = "tiling"
dimension = 1

[base]
interval = [0.0, 1.0]

[[atoms]]
probability = 1.0
maps = [
  { ratio = 0.5, rotation = 1.0, translation = [0.0] },
  { ratio = 0.5, rotation = 1.0, translation = [0.5] },
]
"#;
        let model = RifsModel::from_toml_str(text).unwrap();
        let d = hausdorff_dimension(&model).unwrap().0;
        assert!((d - 1.0).abs() < 1e-12);
        let est = rhs_constant(&model, d, 2.0f64.ln(), 1, &RhsSpec::new_1d(), 1, 1).unwrap();
        assert!(est.non_fractal);
        assert!(est.value.is_nan());
        assert!(est.message.is_some());
    }

    #[test]
    fn tiling_rescaled_curve_and_average_closed_forms() {
        // space-filling model: F = [0,1], k = 1 = D. The rescaled values are
        // the plain lengths 1 + 2 eps -> 1, and the finite-delta average has
        // the closed form 1 + 2 (1 - delta) / |ln delta|.
        let text = r#"
name = "tiling"
dimension = 1

[base]
interval = [0.0, 1.0]

[[atoms]]
probability = 1.0
maps = [
  { ratio = 0.5, rotation = 1.0, translation = [0.0] },
  { ratio = 0.5, rotation = 1.0, translation = [0.5] },
]
"#;
        let model = RifsModel::from_toml_str(text).unwrap();
        let delta = 1e-3f64;
        let eps = geometric_grid(1.0, delta, 64).unwrap();
        let req = CurveRequest::new_1d(vec![1], eps);
        let curves = curvature_curves(&model, 1.0, &req, 3, 0).unwrap();
        let resc = scaling_curve(&curves[0]);
        let (e_last, v_last) = *resc.last().unwrap();
        assert!((v_last - (1.0 + 2.0 * e_last)).abs() < 1e-12);
        let avg = average_limit(&curves[0], delta).unwrap();
        let closed = 1.0 + 2.0 * (1.0 - delta) / (1.0 / delta).ln();
        assert!((avg - closed).abs() < 1e-4, "average {avg} vs closed form {closed}");
    }

    #[test]
    fn lattice_sequences_cantor_settle_and_disagree() {
        let model = cantor_model();
        let d = cantor_dim();
        let c = 3.0f64.ln();
        let s_grid = [0.1, 0.5, 0.9];
        let eps = lattice_grid(c, &s_grid, 12);
        let req = CurveRequest::new_1d(vec![1], eps);
        let curves = curvature_curves(&model, d, &req, 1, 0).unwrap();
        let seqs = lattice_sequences(&curves[0], c, &s_grid, 1e-3).unwrap();
        assert_eq!(seqs.len(), 3);
        let mut limits = Vec::new();
        for seq in &seqs {
            assert!(seq.settled, "s = {} did not settle", seq.s);
            limits.push(seq.limit);
            // closed-form check: v(s) = 1.5 e^((1-D)s) + e^(-sD) for s < ln 2,
            // e^((1-D)s) + 2 e^(-sD) for s > ln 2
            let s = seq.s;
            let expect = if s < 2.0f64.ln() {
                1.5 * ((1.0 - d) * s).exp() + (-s * d).exp()
            } else {
                ((1.0 - d) * s).exp() + 2.0 * (-s * d).exp()
            };
            assert!(
                (seq.limit - expect).abs() < 1e-9 * expect,
                "s={s}: {} vs {expect}",
                seq.limit
            );
        }
        let max = limits.iter().cloned().fold(f64::MIN, f64::max);
        let min = limits.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / min > 0.005, "log-periodicity is real");
    }

    #[test]
    fn lattice_sequences_missing_radii_refused() {
        let model = cantor_model();
        let d = cantor_dim();
        let eps = geometric_grid(1.0, 1e-4, 64).unwrap();
        let req = CurveRequest::new_1d(vec![1], eps);
        let curves = curvature_curves(&model, d, &req, 1, 0).unwrap();
        assert!(lattice_sequences(&curves[0], 3.0f64.ln(), &[0.1], 1e-3).is_err());
    }
}
