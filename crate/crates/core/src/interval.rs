//! Exact one-dimensional geometry: canonical unions of disjoint closed
//! intervals, their parallel sets, the curvatures C_0 (component count) and
//! C_1 (total length), and the first-generation correction term R_k(r).

use crate::error::{Error, Result};
use crate::geometry::neumaier_sum;
use crate::model::RifsModel;
use crate::tree::{CodeTree, LeafCover, StopRule};

/// Sorted union of pairwise disjoint closed intervals. Touching intervals are
/// merged on construction; floating-point ties merge.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalSet {
    spans: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet { spans: Vec::new() }
    }

    /// Canonicalize an arbitrary list of closed intervals.
    pub fn from_spans(mut spans: Vec<(f64, f64)>) -> Self {
        spans.retain(|s| s.1 >= s.0);
        spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
        for (a, b) in spans {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        IntervalSet { spans: out }
    }

    pub fn spans(&self) -> &[(f64, f64)] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn count(&self) -> usize {
        self.spans.len()
    }

    /// Parallel set of radius `eps >= 0`, exact arithmetic on endpoints.
    pub fn parallel(&self, eps: f64) -> IntervalSet {
        debug_assert!(eps >= 0.0);
        IntervalSet::from_spans(self.spans.iter().map(|&(a, b)| (a - eps, b + eps)).collect())
    }

    /// (C_0, C_1) = (number of components, total length). Lengths are summed
    /// with compensation so disjoint decompositions cancel exactly.
    pub fn curvatures(&self) -> (usize, f64) {
        let len = neumaier_sum(self.spans.iter().map(|&(a, b)| b - a));
        (self.spans.len(), len)
    }

    pub fn total_length(&self) -> f64 {
        self.curvatures().1
    }

    pub fn translate(&self, shift: f64) -> IntervalSet {
        IntervalSet { spans: self.spans.iter().map(|&(a, b)| (a + shift, b + shift)).collect() }
    }

    pub fn scale(&self, factor: f64) -> IntervalSet {
        debug_assert!(factor > 0.0);
        IntervalSet { spans: self.spans.iter().map(|&(a, b)| (a * factor, b * factor)).collect() }
    }

    pub fn extent(&self) -> Option<(f64, f64)> {
        match (self.spans.first(), self.spans.last()) {
            (Some(&(a, _)), Some(&(_, b))) => Some((a, b)),
            _ => None,
        }
    }

    /// Gap lengths between consecutive components (all strictly positive).
    pub fn gaps(&self) -> Vec<f64> {
        self.spans.windows(2).map(|w| w[1].0 - w[0].1).collect()
    }

    /// Distance from the point `x` to the complement of the set; 0 when `x`
    /// lies outside.
    pub fn depth_inside(&self, x: f64) -> f64 {
        match self.spans.binary_search_by(|&(a, _)| a.partial_cmp(&x).unwrap()) {
            Ok(i) => {
                let (a, b) = self.spans[i];
                (x - a).min(b - x).max(0.0)
            }
            Err(0) => 0.0,
            Err(i) => {
                let (a, b) = self.spans[i - 1];
                if x <= b {
                    (x - a).min(b - x)
                } else {
                    0.0
                }
            }
        }
    }

    /// Distance from the closed interval [lo, hi] to the complement of the
    /// set: `min` over the interval of the distance to the complement.
    pub fn interval_depth(&self, lo: f64, hi: f64) -> f64 {
        self.depth_inside(lo).min(self.depth_inside(hi))
    }
}

/// Precomputed gap statistics of a canonical set, answering parallel-set
/// curvature queries in O(log n) instead of rebuilding the merged set. Used
/// by the curve assembler where one cover is probed at hundreds of radii.
#[derive(Clone, Debug)]
pub struct GapProfile {
    extent: Option<(f64, f64)>,
    gaps: Vec<f64>,        // ascending
    suffix_sums: Vec<f64>, // suffix_sums[i] = sum of gaps[i..], compensated
}

impl GapProfile {
    pub fn new(set: &IntervalSet) -> Self {
        let mut gaps = set.gaps();
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut suffix_sums = vec![0.0; gaps.len() + 1];
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for i in (0..gaps.len()).rev() {
            let v = gaps[i];
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
            suffix_sums[i] = sum + comp;
        }
        GapProfile { extent: set.extent(), gaps, suffix_sums }
    }

    /// (C_0, C_1) of the parallel set of radius `eps`.
    pub fn curvatures_at(&self, eps: f64) -> (usize, f64) {
        let (lo, hi) = match self.extent {
            Some(e) => e,
            None => return (0, 0.0),
        };
        let threshold = 2.0 * eps;
        // first index with gap > threshold
        let idx = self.gaps.partition_point(|&g| g <= threshold);
        let open = self.gaps.len() - idx;
        let open_sum = self.suffix_sums[idx];
        let length = (hi - lo + threshold) - (open_sum - threshold * open as f64);
        (1 + open, length)
    }
}

/// Cover restricted to the subtree of one first-generation child.
#[derive(Clone, Debug)]
pub struct ChildCover1d {
    pub child_index: u32,
    pub ratio: f64,
    pub set: IntervalSet,
}

/// Finite-level realization of a one-dimensional model: the union of the
/// retained leaf base images, split by first-generation ancestor.
#[derive(Clone, Debug)]
pub struct Cover1d {
    pub set: IntervalSet,
    pub children: Vec<ChildCover1d>,
    /// Maximum leaf diameter (the resolution the cover was stopped at).
    pub resolution: f64,
    pub root_extinct: bool,
    pub dropped_leaves: usize,
    /// Probability that a retained line still dies beyond the pruning
    /// horizon; the residual bias scale of extinction pruning.
    pub survival_tail: f64,
}

/// Renders the leaf cover of a one-dimensional model. Dead leaves have
/// already been dropped by the collector's pruning policy; an extinct root
/// yields an empty, flagged set.
pub fn render_cover_1d(cover: &LeafCover, model: &RifsModel) -> Result<Cover1d> {
    if model.dimension() != 1 {
        return Err(Error::Gate("render_cover_1d requires a dimension-1 model".into()));
    }
    let (blo, bhi) = match model.base {
        crate::model::BaseSet::Interval { lo, hi } => (lo, hi),
        _ => unreachable!(),
    };
    let mut all: Vec<(f64, f64)> = Vec::with_capacity(cover.leaves.len());
    let mut per_child: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cover.first_generation.len()];
    for leaf in &cover.leaves {
        let a = leaf.map.apply([blo, 0.0])[0];
        let b = leaf.map.apply([bhi, 0.0])[0];
        let span = (a.min(b), a.max(b));
        all.push(span);
        if let Some(slot) = cover
            .first_generation
            .iter()
            .position(|fg| fg.index == leaf.first_gen)
        {
            per_child[slot].push(span);
        }
    }
    let children = cover
        .first_generation
        .iter()
        .zip(per_child)
        .map(|(fg, spans)| ChildCover1d {
            child_index: fg.index,
            ratio: fg.ratio,
            set: IntervalSet::from_spans(spans),
        })
        .collect();
    Ok(Cover1d {
        set: IntervalSet::from_spans(all),
        children,
        resolution: cover.resolution,
        root_extinct: cover.root_extinct,
        dropped_leaves: cover.dropped,
        survival_tail: cover.survival_tail,
    })
}

/// Renders from an already sampled tree stopped at `Resolution(l)`.
pub fn cover_from_tree_1d(tree: &CodeTree, model: &RifsModel) -> Result<Cover1d> {
    match tree.rule {
        StopRule::Resolution(_) => {}
        _ => {
            return Err(Error::Gate(
                "cover_from_tree_1d requires a Resolution-stopped tree".into(),
            ))
        }
    }
    render_cover_1d(&tree.leaf_cover(model), model)
}

/// First-generation correction term
/// `R_k(r) = C_k(F(r)) - sum_i 1{r <= rho * r_i} C_k(F_i(r))`
/// evaluated on the finite cover with exact interval arithmetic.
///
/// `rho` is the stopping threshold (R * diam J) and `eta` the cover
/// resolution policy: the cover's leaf diameter must satisfy
/// `resolution <= eta * r`.
pub fn r_correction_1d(cover: &Cover1d, rho: f64, eta: f64, r: f64, k: usize) -> Result<f64> {
    if k > 1 {
        return Err(Error::Gate(format!("r_correction_1d: k must be 0 or 1, got {k}")));
    }
    if cover.root_extinct {
        return Err(Error::EmptyRealization);
    }
    if cover.resolution > eta * r {
        return Err(Error::ResolutionTooCoarse(format!(
            "cover resolution {} exceeds eta*r = {}",
            cover.resolution,
            eta * r
        )));
    }
    let pick = |set: &IntervalSet| -> f64 {
        let (c0, c1) = set.parallel(r).curvatures();
        if k == 0 {
            c0 as f64
        } else {
            c1
        }
    };
    let total = pick(&cover.set);
    let child_sum = neumaier_sum(cover.children.iter().filter_map(|c| {
        if r <= rho * c.ratio && !c.set.is_empty() {
            Some(pick(&c.set))
        } else {
            None
        }
    }));
    Ok(total - child_sum)
}

/// Same correction evaluated through gap profiles; used on hot paths where
/// one cover is probed at many radii. Agrees with `r_correction_1d` up to
/// summation rounding.
pub struct CorrectionProfiles {
    pub full: GapProfile,
    pub children: Vec<(f64, GapProfile)>,
}

impl CorrectionProfiles {
    pub fn new(cover: &Cover1d) -> Self {
        CorrectionProfiles {
            full: GapProfile::new(&cover.set),
            children: cover
                .children
                .iter()
                .map(|c| (c.ratio, GapProfile::new(&c.set)))
                .collect(),
        }
    }

    pub fn r_correction(&self, rho: f64, r: f64, k: usize) -> f64 {
        let pick = |p: &GapProfile| -> f64 {
            let (c0, c1) = p.curvatures_at(r);
            if k == 0 {
                c0 as f64
            } else {
                c1
            }
        };
        let child_sum = neumaier_sum(
            self.children
                .iter()
                .filter(|(ratio, _)| r <= rho * ratio)
                .map(|(_, p)| pick(p)),
        );
        pick(&self.full) - child_sum
    }
}

/// Helper used by derived tests and the spectral examples: exact closed-form
/// boundary length of the parallel Cantor set, C_1(F(eps)) for the
/// middle-third generator on [0,1].
pub fn cantor_parallel_length(eps: f64) -> f64 {
    debug_assert!(eps > 0.0);
    if 2.0 * eps >= 1.0 / 3.0 {
        return 1.0 + 2.0 * eps;
    }
    let m = ((1.0 / (2.0 * eps)).ln() / 3.0f64.ln()).floor();
    (2.0f64 / 3.0).powf(m) + 2.0f64.powf(m + 1.0) * eps
}
