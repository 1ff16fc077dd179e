//! Galton-Watson code trees.
//!
//! Nodes are sampled generation by generation; each node draws its offspring
//! atom from a keyed counter-based stream (see [`crate::rng`]), so sampling
//! the same `(seed, replicate)` under any stop rule or traversal order
//! reproduces the same realization, and a deeper stop extends a shallower one.

use crate::error::{Error, Result};
use crate::geometry::SimMap;
use crate::model::{atom_images_1d, BaseSet, OffspringAtom, RifsModel};
use crate::rng::{child_key, tree_root_key, unit_from, DOMAIN_ATOM};
use crate::spectral;

/// When to stop expanding a line.
///
/// * `Depth(n)`: keep generations 0..=n.
/// * `Resolution(l)`: stop at the first node whose base image has diameter
///   at most `l`.
/// * `Markov(r)`: stop at the first node with `rho * composed_ratio <= r`
///   where `rho = R * diam(J)`; the leaf set is the stopping antichain T(r).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    Depth(u32),
    Resolution(f64),
    Markov(f64),
}

/// One sampled node: the composed similarity, its contraction data, and the
/// key that reproduces every draw below it.
#[derive(Clone, Debug)]
pub struct CodeNode {
    /// Parent index; `u32::MAX` for the root.
    pub parent: u32,
    /// Position among the parent's offspring, 1-based; 0 for the root.
    pub child_index: u32,
    pub depth: u32,
    /// Drawn atom index; `None` when the stop rule froze this node before a
    /// draw was made (stop leaves).
    pub atom: Option<u32>,
    /// Contraction ratio of this node's own map (1 for the root).
    pub ratio: f64,
    /// Product of ratios along the path from the root.
    pub composed_ratio: f64,
    /// Composed similarity mapping J onto this node's base image.
    pub map: SimMap,
    pub key: u64,
    child_start: u32,
    child_count: u32,
}

impl CodeNode {
    /// Branching random walk value W = -ln(composed ratio).
    pub fn walk(&self) -> f64 {
        -self.composed_ratio.ln()
    }

    pub fn children(&self) -> std::ops::Range<usize> {
        self.child_start as usize..(self.child_start + self.child_count) as usize
    }

    pub fn is_dead(&self) -> bool {
        matches!(self.atom, Some(_) if self.child_count == 0)
    }
}

/// First-generation offspring record (index, ratio, map).
#[derive(Clone, Debug)]
pub struct FirstGen {
    pub index: u32,
    pub ratio: f64,
    pub map: SimMap,
}

/// A sampled code tree in breadth-first order (children contiguous).
#[derive(Clone, Debug)]
pub struct CodeTree {
    pub nodes: Vec<CodeNode>,
    pub seed: u64,
    pub replicate: u64,
    pub rule: StopRule,
    /// The factor R used for Markov stopping (recorded even when unused).
    pub big_r: f64,
    /// Indices of the nodes frozen by the stop rule (the leaf antichain).
    pub stop_leaves: Vec<u32>,
}

impl CodeTree {
    pub fn root(&self) -> &CodeNode {
        &self.nodes[0]
    }

    pub fn root_extinct(&self) -> bool {
        self.nodes[0].is_dead()
    }

    /// The root's offspring; empty on extinction at the root.
    pub fn first_generation(&self) -> Vec<FirstGen> {
        self.nodes[0]
            .children()
            .map(|i| {
                let n = &self.nodes[i];
                FirstGen { index: n.child_index, ratio: n.ratio, map: n.map }
            })
            .collect()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Leaf cover view of the stop leaves (used by the render stages).
    pub fn leaf_cover(&self, model: &RifsModel) -> LeafCover {
        let diam = model.base.diam();
        let resolution = self
            .stop_leaves
            .iter()
            .map(|&i| self.nodes[i as usize].composed_ratio * diam)
            .fold(0.0, f64::max);
        let leaves = self
            .stop_leaves
            .iter()
            .map(|&i| {
                let n = &self.nodes[i as usize];
                Leaf {
                    map: n.map,
                    composed_ratio: n.composed_ratio,
                    first_gen: self.first_gen_ancestor(i),
                }
            })
            .collect();
        LeafCover {
            leaves,
            first_generation: self.first_generation(),
            resolution,
            root_extinct: self.root_extinct(),
            dropped: 0,
            survival_tail: 0.0,
        }
    }

    fn first_gen_ancestor(&self, node: u32) -> u32 {
        let mut i = node as usize;
        if i == 0 {
            return 0;
        }
        while self.nodes[i].depth > 1 {
            i = self.nodes[i].parent as usize;
        }
        self.nodes[i].child_index
    }
}

pub(crate) struct CompiledAtom {
    pub cum: f64,
    pub maps: Vec<(f64, SimMap)>,
}

pub(crate) fn compile_law(model: &RifsModel) -> Vec<CompiledAtom> {
    let dim = model.dimension();
    let mut cum = 0.0;
    model
        .atoms
        .iter()
        .map(|a: &OffspringAtom| {
            cum += a.probability;
            CompiledAtom {
                cum,
                maps: a.maps.iter().map(|m| (m.ratio, m.to_map(dim))).collect(),
            }
        })
        .collect()
}

pub(crate) fn draw_atom(law: &[CompiledAtom], key: u64) -> usize {
    let u = unit_from(key, DOMAIN_ATOM);
    for (i, atom) in law.iter().enumerate() {
        if u < atom.cum {
            return i;
        }
    }
    law.len() - 1
}

/// Samples a code tree under the given stop rule. `big_r` is the Markov
/// stopping factor R (threshold `rho = R * diam(J)`), recorded in the result
/// for every rule.
pub fn sample_tree(
    model: &RifsModel,
    seed: u64,
    replicate: u64,
    rule: StopRule,
    big_r: f64,
) -> Result<CodeTree> {
    let mean = model.mean_offspring();
    if mean <= 1.0 {
        return Err(Error::Subcritical { mean });
    }
    match rule {
        StopRule::Resolution(l) if !(l > 0.0) => {
            return Err(Error::Gate(format!("Resolution stop needs l > 0, got {l}")))
        }
        StopRule::Markov(r) if !(r > 0.0) => {
            return Err(Error::Gate(format!("Markov stop needs r > 0, got {r}")))
        }
        _ => {}
    }
    let law = compile_law(model);
    let diam = model.base.diam();
    let rho = big_r * diam;
    let stops = |depth: u32, composed: f64| -> bool {
        match rule {
            StopRule::Depth(n) => depth >= n,
            StopRule::Resolution(l) => composed * diam <= l,
            StopRule::Markov(r) => rho * composed <= r,
        }
    };

    let mut nodes = vec![CodeNode {
        parent: u32::MAX,
        child_index: 0,
        depth: 0,
        atom: None,
        ratio: 1.0,
        composed_ratio: 1.0,
        map: SimMap::identity(),
        key: tree_root_key(seed, replicate),
        child_start: 0,
        child_count: 0,
    }];
    let mut stop_leaves = Vec::new();
    let mut i = 0usize;
    while i < nodes.len() {
        let (depth, composed, key) = {
            let n = &nodes[i];
            (n.depth, n.composed_ratio, n.key)
        };
        if stops(depth, composed) {
            stop_leaves.push(i as u32);
            i += 1;
            continue;
        }
        let atom = draw_atom(&law, key);
        let start = nodes.len() as u32;
        let count = law[atom].maps.len() as u32;
        {
            let n = &mut nodes[i];
            n.atom = Some(atom as u32);
            n.child_start = start;
            n.child_count = count;
        }
        let parent_map = nodes[i].map;
        for (j, &(ratio, ref m)) in law[atom].maps.iter().enumerate() {
            let child_index = j as u32 + 1;
            nodes.push(CodeNode {
                parent: i as u32,
                child_index,
                depth: depth + 1,
                atom: None,
                ratio,
                composed_ratio: composed * ratio,
                map: parent_map.compose(m),
                key: child_key(key, child_index),
                child_start: 0,
                child_count: 0,
            });
        }
        if nodes.len() > u32::MAX as usize - 64 {
            return Err(Error::Gate("tree exceeds the supported node count".into()));
        }
        i += 1;
    }
    Ok(CodeTree { nodes, seed, replicate, rule, big_r, stop_leaves })
}

/// Members of the boundary subtree T_b(r): Markov leaves whose base image
/// lies within 2r of the complement of the first iterate SJ.
///
/// The distance is evaluated exactly against the merged first-generation
/// image union in dimension 1; in dimension 2 it is lower-bounded by the
/// deepest inset margin inside any single first-generation image, which can
/// only enlarge the reported subtree (the diagnostic stays conservative).
pub fn boundary_subtree(tree: &CodeTree, model: &RifsModel, r: f64) -> Result<Vec<u32>> {
    match tree.rule {
        StopRule::Markov(rr) if (rr - r).abs() <= 1e-12 * r.max(1.0) => {}
        _ => {
            return Err(Error::Gate(
                "boundary_subtree requires a tree stopped by Markov(r) at the same r".into(),
            ))
        }
    }
    if tree.root_extinct() || tree.nodes.len() == 1 {
        // a root-only antichain has no first iterate to be interior to
        return Ok(tree.stop_leaves.clone());
    }
    let mut members = Vec::new();
    match &model.base {
        BaseSet::Interval { lo, hi } => {
            let root_atom = tree.nodes[0].atom.expect("non-extinct root") as usize;
            let sj = atom_images_1d(&model.atoms[root_atom], *lo, *hi);
            for &leaf in &tree.stop_leaves {
                let n = &tree.nodes[leaf as usize];
                let a = n.map.apply([*lo, 0.0])[0];
                let b = n.map.apply([*hi, 0.0])[0];
                let depth = sj.interval_depth(a.min(b), a.max(b));
                if depth < 2.0 * r {
                    members.push(leaf);
                }
            }
        }
        BaseSet::Polygon(base) => {
            let firstgen = tree.first_generation();
            let images: Vec<_> = firstgen.iter().map(|fg| base.transform(&fg.map)).collect();
            for &leaf in &tree.stop_leaves {
                let n = &tree.nodes[leaf as usize];
                let leaf_poly = base.transform(&n.map);
                let mut depth = 0.0f64;
                for img in &images {
                    let m = leaf_poly
                        .verts()
                        .iter()
                        .map(|&v| img.inner_margin(v))
                        .fold(f64::INFINITY, f64::min);
                    depth = depth.max(m.max(0.0));
                }
                if depth < 2.0 * r {
                    members.push(leaf);
                }
            }
        }
    }
    Ok(members)
}

/// One row of the T_b growth table.
#[derive(Clone, Debug)]
pub struct TbGrowthRow {
    pub r: f64,
    pub mean_scaled: f64,
    pub max_scaled: f64,
}

/// Empirical monitor of `E[sup_r r^(D-delta) #T_b(r)]`.
#[derive(Clone, Debug)]
pub struct TbGrowth {
    pub rows: Vec<TbGrowthRow>,
    pub per_replicate_sup: Vec<f64>,
    pub sup_mean: f64,
    pub sup_max: f64,
    pub delta: f64,
    pub big_r: f64,
    pub fractal_dim: f64,
}

/// Tabulates `r^(D-delta) * #T_b(r)` over the given radius grid and
/// replicates: per-radius statistics and the per-replicate running supremum.
pub fn tb_growth_diagnostic(
    model: &RifsModel,
    delta: f64,
    r_grid: &[f64],
    replicates: u64,
    seed: u64,
    big_r: f64,
) -> Result<TbGrowth> {
    let fractal_dim = spectral::hausdorff_dimension(model)?.0;
    if !(delta > 0.0 && delta < fractal_dim) {
        return Err(Error::Gate(format!(
            "tb_growth_diagnostic needs 0 < delta < D = {fractal_dim}, got {delta}"
        )));
    }
    let mut rows: Vec<TbGrowthRow> = r_grid
        .iter()
        .map(|&r| TbGrowthRow { r, mean_scaled: 0.0, max_scaled: 0.0 })
        .collect();
    let mut per_replicate_sup = Vec::with_capacity(replicates as usize);
    for rep in 0..replicates {
        let mut sup = 0.0f64;
        for (row, &r) in rows.iter_mut().zip(r_grid) {
            let tree = sample_tree(model, seed, rep, StopRule::Markov(r), big_r)?;
            let count = boundary_subtree(&tree, model, r)?.len();
            let scaled = r.powf(fractal_dim - delta) * count as f64;
            row.mean_scaled += scaled / replicates as f64;
            row.max_scaled = row.max_scaled.max(scaled);
            sup = sup.max(scaled);
        }
        per_replicate_sup.push(sup);
    }
    let sup_mean = per_replicate_sup.iter().sum::<f64>() / per_replicate_sup.len().max(1) as f64;
    let sup_max = per_replicate_sup.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(TbGrowth {
        rows,
        per_replicate_sup,
        sup_mean,
        sup_max,
        delta,
        big_r,
        fractal_dim,
    })
}

/// One retained leaf of a resolution-stopped cover.
#[derive(Clone, Debug)]
pub struct Leaf {
    pub map: SimMap,
    pub composed_ratio: f64,
    /// Child index of the generation-1 ancestor (0 when the leaf is the root).
    pub first_gen: u32,
}

/// Leaves of a resolution-stopped realization, without materializing the
/// tree. Same keyed draws as [`sample_tree`], so both views agree.
#[derive(Clone, Debug)]
pub struct LeafCover {
    pub leaves: Vec<Leaf>,
    pub first_generation: Vec<FirstGen>,
    pub resolution: f64,
    pub root_extinct: bool,
    pub dropped: usize,
    pub survival_tail: f64,
}

/// Streams the `Resolution(l)` leaf antichain of `(seed, replicate)`.
///
/// With `prune` set, a leaf is dropped when its whole subtree dies within a
/// 10-generation look-ahead; the residual bias scale is reported as
/// `survival_tail` (eventual minus within-horizon extinction probability).
/// Models without an extinction atom skip the look-ahead entirely.
pub fn collect_leaves(
    model: &RifsModel,
    seed: u64,
    replicate: u64,
    resolution: f64,
    prune: bool,
) -> Result<LeafCover> {
    const LOOKAHEAD: u32 = 10;
    let mean = model.mean_offspring();
    if mean <= 1.0 {
        return Err(Error::Subcritical { mean });
    }
    if !(resolution > 0.0) {
        return Err(Error::Gate(format!(
            "collect_leaves needs resolution > 0, got {resolution}"
        )));
    }
    let law = compile_law(model);
    let diam = model.base.diam();
    let check_survival = prune && model.has_extinction();

    struct Walker<'a> {
        law: &'a [CompiledAtom],
        diam: f64,
        resolution: f64,
        check_survival: bool,
        leaves: Vec<Leaf>,
        first_generation: Vec<FirstGen>,
        dropped: usize,
        root_extinct: bool,
    }

    impl Walker<'_> {
        fn survives(&self, key: u64, horizon: u32) -> bool {
            if horizon == 0 {
                return true;
            }
            let atom = draw_atom(self.law, key);
            let maps = &self.law[atom].maps;
            for j in 1..=maps.len() as u32 {
                if self.survives(child_key(key, j), horizon - 1) {
                    return true;
                }
            }
            false
        }

        fn visit(&mut self, key: u64, depth: u32, map: SimMap, composed: f64, first_gen: u32) {
            if composed * self.diam <= self.resolution {
                if self.check_survival && !self.survives(key, LOOKAHEAD) {
                    self.dropped += 1;
                    return;
                }
                self.leaves.push(Leaf { map, composed_ratio: composed, first_gen });
                return;
            }
            let atom = draw_atom(self.law, key);
            let maps = &self.law[atom].maps;
            if depth == 0 {
                if maps.is_empty() {
                    self.root_extinct = true;
                }
                for (j, &(ratio, ref m)) in maps.iter().enumerate() {
                    self.first_generation.push(FirstGen {
                        index: j as u32 + 1,
                        ratio,
                        map: *m,
                    });
                }
            }
            for (j, &(ratio, ref m)) in maps.iter().enumerate() {
                let ci = j as u32 + 1;
                let fg = if depth == 0 { ci } else { first_gen };
                self.visit(child_key(key, ci), depth + 1, map.compose(m), composed * ratio, fg);
            }
        }
    }

    let mut walker = Walker {
        law: &law,
        diam,
        resolution,
        check_survival,
        leaves: Vec::new(),
        first_generation: Vec::new(),
        dropped: 0,
        root_extinct: false,
    };
    let root_key = tree_root_key(seed, replicate);
    if diam <= resolution {
        // the root itself is already fine enough
        walker.leaves.push(Leaf { map: SimMap::identity(), composed_ratio: 1.0, first_gen: 0 });
    } else {
        walker.visit(root_key, 0, SimMap::identity(), 1.0, 0);
    }
    let survival_tail = if check_survival {
        model.extinction_probability() - model.extinction_within(LOOKAHEAD)
    } else {
        0.0
    };
    Ok(LeafCover {
        leaves: walker.leaves,
        first_generation: walker.first_generation,
        resolution,
        root_extinct: walker.root_extinct,
        dropped: walker.dropped,
        survival_tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cantor_model;

    #[test]
    fn deterministic_cantor_depth_two() {
        let tree = sample_tree(&cantor_model(), 1, 0, StopRule::Depth(2), 1.5).unwrap();
        assert_eq!(tree.nodes.len(), 1 + 2 + 4);
        for n in &tree.nodes {
            let expect = 3.0f64.powi(-(n.depth as i32));
            assert!((n.composed_ratio - expect).abs() < 1e-15);
        }
        assert_eq!(tree.stop_leaves.len(), 4);
    }

    #[test]
    fn markov_stop_depth_matches_hand_evaluation() {
        // rho = 1.5, r = 0.4: 1.5/9 = 0.1667 <= 0.4 < 1.5/3 = 0.5,
        // so every leaf sits at depth 2
        let tree = sample_tree(&cantor_model(), 1, 0, StopRule::Markov(0.4), 1.5).unwrap();
        for &leaf in &tree.stop_leaves {
            assert_eq!(tree.nodes[leaf as usize].depth, 2);
        }
        assert_eq!(tree.stop_leaves.len(), 4);
    }

    #[test]
    fn markov_partition_inequalities() {
        let model = cantor_model();
        let rho = 1.5;
        for &r in &[0.02, 0.11, 0.49, 0.7] {
            let tree = sample_tree(&model, 9, 3, StopRule::Markov(r), 1.5).unwrap();
            for &leaf in &tree.stop_leaves {
                let n = &tree.nodes[leaf as usize];
                assert!(rho * n.composed_ratio <= r);
                if n.parent != u32::MAX {
                    let p = &tree.nodes[n.parent as usize];
                    assert!(rho * p.composed_ratio > r);
                }
            }
            // no internal node may satisfy the leaf inequality
            for (i, n) in tree.nodes.iter().enumerate() {
                if !tree.stop_leaves.contains(&(i as u32)) && n.atom.is_some() {
                    assert!(rho * n.composed_ratio > r);
                }
            }
        }
    }

    #[test]
    fn markov_root_leaf_for_large_r() {
        let tree = sample_tree(&cantor_model(), 1, 0, StopRule::Markov(2.0), 1.5).unwrap();
        assert_eq!(tree.stop_leaves, vec![0]);
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn multiplicativity_along_paths() {
        let tree = sample_tree(&cantor_model(), 5, 1, StopRule::Depth(6), 1.5).unwrap();
        for n in tree.nodes.iter().skip(1) {
            let p = &tree.nodes[n.parent as usize];
            let expect = p.composed_ratio * n.ratio;
            assert!((n.composed_ratio - expect).abs() <= 1e-14 * expect);
            assert!((n.walk() - (p.walk() + (1.0 / n.ratio).ln())).abs() < 1e-12);
        }
        assert_eq!(tree.root().walk(), 0.0);
        assert_eq!(tree.root().composed_ratio, 1.0);
    }

    #[test]
    fn seed_determinism_and_replicate_separation() {
        let model = cantor_model();
        let a = sample_tree(&model, 11, 0, StopRule::Depth(4), 1.5).unwrap();
        let b = sample_tree(&model, 11, 0, StopRule::Depth(4), 1.5).unwrap();
        assert_eq!(a.nodes.len(), b.nodes.len());
        for (x, y) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!(x.key, y.key);
            assert_eq!(x.composed_ratio, y.composed_ratio);
        }
    }

    #[test]
    fn first_generation_of_cantor() {
        let tree = sample_tree(&cantor_model(), 1, 0, StopRule::Depth(1), 1.5).unwrap();
        let fg = tree.first_generation();
        assert_eq!(fg.len(), 2);
        assert!((fg[0].ratio - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(fg[0].index, 1);
        assert_eq!(fg[1].index, 2);
    }

    #[test]
    fn boundary_subtree_small_r_keeps_gap_and_outer_leaves() {
        // depth-2 Cantor leaves: [0,1/9],[2/9,1/3],[2/3,7/9],[8/9,1];
        // SJ = [0,1/3] u [2/3,1]. Interval depths: outer leaves touch the
        // SJ boundary (depth 0), inner leaves reach depth 1/9.
        let model = cantor_model();
        let r = 0.4; // leaves at depth 2
        let tree = sample_tree(&model, 1, 0, StopRule::Markov(r), 1.5).unwrap();
        let members = boundary_subtree(&tree, &model, r).unwrap();
        // 2r = 0.8 > 1/9: every leaf qualifies
        assert_eq!(members.len(), 4);

        let r2 = 0.04; // leaves at depth 4, 2r = 0.08 < depth of deep-interior leaves?
        let tree2 = sample_tree(&model, 1, 0, StopRule::Markov(r2), 1.5).unwrap();
        let members2 = boundary_subtree(&tree2, &model, r2).unwrap();
        // depth-4 leaves: those within 0.08 of the SJ complement; the deepest
        // interior distance of a depth-4 leaf inside [0,1/3] is 4/27 > 0.08,
        // so strictly fewer than all leaves qualify
        assert!(members2.len() < tree2.stop_leaves.len());
        assert!(!members2.is_empty());
    }

    #[test]
    fn boundary_subtree_all_leaves_for_huge_r() {
        let model = cantor_model();
        let r = 0.49;
        let tree = sample_tree(&model, 1, 0, StopRule::Markov(r), 1.5).unwrap();
        let members = boundary_subtree(&tree, &model, r).unwrap();
        assert_eq!(members.len(), tree.stop_leaves.len());
    }

    #[test]
    fn collect_leaves_matches_tree_leaves() {
        let model = cantor_model();
        let l = 0.02;
        let cover = collect_leaves(&model, 3, 7, l, true).unwrap();
        let tree = sample_tree(&model, 3, 7, StopRule::Resolution(l), 1.5).unwrap();
        let tree_cover = tree.leaf_cover(&model);
        assert_eq!(cover.leaves.len(), tree_cover.leaves.len());
        for (a, b) in cover.leaves.iter().zip(&tree_cover.leaves) {
            assert_eq!(a.composed_ratio, b.composed_ratio);
            assert_eq!(a.first_gen, b.first_gen);
            assert_eq!(a.map, b.map);
        }
    }

    #[test]
    fn cantor_resolution_leaf_count() {
        // 3^-3 = 1/27 <= l < 1/9 stops exactly at depth 3
        let cover = collect_leaves(&cantor_model(), 1, 0, 0.05, false).unwrap();
        assert_eq!(cover.leaves.len(), 8);
        assert!((cover.resolution - 0.05).abs() < 1e-15);
    }
}
