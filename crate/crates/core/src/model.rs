//! Random iterated function systems: the offspring law (probability-weighted
//! lists of contracting similarities), the base set, the open set condition
//! check, and the model file loader.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{ConvexPolygon, Point, SimMap};
use crate::interval::IntervalSet;

/// One contracting similarity as written in a model file.
///
/// For one-dimensional models `rotation` is the sign (+1 or -1) and the
/// translation has a single component; for two-dimensional models `rotation`
/// is an angle in radians and `reflection` mirrors across the x-axis before
/// rotating.
#[derive(Clone, Debug)]
pub struct Similarity {
    pub ratio: f64,
    pub rotation: f64,
    pub reflection: bool,
    pub translation: [f64; 2],
}

impl Similarity {
    pub fn to_map(&self, dimension: u8) -> SimMap {
        match dimension {
            1 => SimMap::line(self.ratio, self.rotation, self.translation[0]),
            _ => SimMap::plane(self.ratio, self.rotation, self.reflection, self.translation),
        }
    }
}

/// One branch of the offspring law. An empty map list is the extinction
/// branch (offspring number zero).
#[derive(Clone, Debug)]
pub struct OffspringAtom {
    pub probability: f64,
    pub maps: Vec<Similarity>,
}

/// The base set J: a closed interval in dimension 1, a convex polygon in
/// dimension 2. Either way J equals the closure of its interior.
#[derive(Clone, Debug)]
pub enum BaseSet {
    Interval { lo: f64, hi: f64 },
    Polygon(ConvexPolygon),
}

impl BaseSet {
    pub fn dimension(&self) -> u8 {
        match self {
            BaseSet::Interval { .. } => 1,
            BaseSet::Polygon(_) => 2,
        }
    }

    pub fn diam(&self) -> f64 {
        match self {
            BaseSet::Interval { lo, hi } => hi - lo,
            BaseSet::Polygon(p) => p.diameter(),
        }
    }

    /// Reference point used when rendering leaf sets; any fixed interior
    /// point works, the centroid keeps the quantization bias symmetric.
    pub fn anchor(&self) -> Point {
        match self {
            BaseSet::Interval { lo, hi } => [0.5 * (lo + hi), 0.0],
            BaseSet::Polygon(p) => p.centroid(),
        }
    }

    pub fn bbox(&self) -> (Point, Point) {
        match self {
            BaseSet::Interval { lo, hi } => ([*lo, 0.0], [*hi, 0.0]),
            BaseSet::Polygon(p) => p.bbox(),
        }
    }
}

/// A validated random iterated function system over its base set.
#[derive(Clone, Debug)]
pub struct RifsModel {
    pub name: String,
    pub base: BaseSet,
    pub atoms: Vec<OffspringAtom>,
}

impl RifsModel {
    pub fn dimension(&self) -> u8 {
        self.base.dimension()
    }

    /// Mean offspring number E(nu).
    pub fn mean_offspring(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.probability * a.maps.len() as f64)
            .sum()
    }

    pub fn has_extinction(&self) -> bool {
        self.atoms.iter().any(|a| a.maps.is_empty() && a.probability > 0.0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.atoms.len() == 1
    }

    /// Probability generating function of the offspring number.
    fn pgf(&self, s: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.probability * s.powi(a.maps.len() as i32))
            .sum()
    }

    /// Probability that a line dies within `generations` generations.
    pub fn extinction_within(&self, generations: u32) -> f64 {
        let mut q = 0.0;
        for _ in 0..generations {
            q = self.pgf(q);
        }
        q
    }

    /// Eventual extinction probability (smallest fixed point of the pgf).
    pub fn extinction_probability(&self) -> f64 {
        let mut q = 0.0;
        for _ in 0..256 {
            let next = self.pgf(q);
            if (next - q).abs() < 1e-15 {
                return next;
            }
            q = next;
        }
        q
    }

    /// Structural validation plus the open set condition; run on load.
    pub fn validate(&self, osc_tol: f64) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Model("atoms: list must not be empty".into()));
        }
        let mut psum = 0.0;
        for (ai, atom) in self.atoms.iter().enumerate() {
            if atom.probability < 0.0 {
                return Err(Error::Model(format!(
                    "atoms[{ai}].probability: must be >= 0, got {}",
                    atom.probability
                )));
            }
            psum += atom.probability;
            for (mi, map) in atom.maps.iter().enumerate() {
                if !(map.ratio > 0.0 && map.ratio < 1.0) {
                    return Err(Error::Model(format!(
                        "atoms[{ai}].maps[{mi}].ratio: must lie in (0,1), got {}",
                        map.ratio
                    )));
                }
                if self.dimension() == 1 {
                    if (map.rotation.abs() - 1.0).abs() > 1e-12 {
                        return Err(Error::Model(format!(
                            "atoms[{ai}].maps[{mi}].rotation: must be +1 or -1 for dimension 1"
                        )));
                    }
                    if map.reflection {
                        return Err(Error::Model(format!(
                            "atoms[{ai}].maps[{mi}].reflection: not available for dimension 1"
                        )));
                    }
                }
            }
        }
        if (psum - 1.0).abs() > 1e-12 {
            return Err(Error::Model(format!(
                "atoms: probabilities must sum to 1 within 1e-12, got {psum}"
            )));
        }
        let mean = self.mean_offspring();
        if mean <= 1.0 {
            return Err(Error::Subcritical { mean });
        }
        let report = check_osc(self, osc_tol);
        if !report.pass {
            return Err(Error::OscViolation(report.summary()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<RifsModel> {
        let file: ModelFile = toml::from_str(text)
            .map_err(|e| Error::Model(format!("parse failure: {e}")))?;
        let model = file.into_model()?;
        model.validate(DEFAULT_OSC_TOL)?;
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<RifsModel> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

pub const DEFAULT_OSC_TOL: f64 = 1e-9;

/// Open-set-condition verdict for one atom.
#[derive(Clone, Debug)]
pub struct OscAtomReport {
    pub pass: bool,
    /// Worst containment violation: how far an image sticks out of J
    /// (a length in model units, 0 when contained).
    pub containment_violation: f64,
    /// Worst pairwise overlap: interval overlap length for d=1, overlap area
    /// as a fraction of area(J) for d=2; 0 when disjoint.
    pub overlap_violation: f64,
}

/// Per-atom open-set-condition report; `check_osc` never fails, callers
/// decide whether to reject the model.
#[derive(Clone, Debug)]
pub struct OscReport {
    pub atoms: Vec<OscAtomReport>,
    pub pass: bool,
    pub tol: f64,
}

impl OscReport {
    pub fn worst(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.containment_violation.max(a.overlap_violation))
            .fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        let failing: Vec<String> = self
            .atoms
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.pass)
            .map(|(i, a)| {
                format!(
                    "atom {i}: containment violation {:.3e}, overlap {:.3e}",
                    a.containment_violation, a.overlap_violation
                )
            })
            .collect();
        if failing.is_empty() {
            "all atoms pass".into()
        } else {
            failing.join("; ")
        }
    }
}

/// Checks, for each atom, that the images of Int(J) are pairwise disjoint
/// subsets of Int(J). Dimension 1 uses exact interval arithmetic, dimension 2
/// uses convex polygon clipping with the area tolerance `tol * area(J)` and a
/// vertex containment margin of `-tol`.
pub fn check_osc(model: &RifsModel, tol: f64) -> OscReport {
    let atoms = model
        .atoms
        .iter()
        .map(|atom| match &model.base {
            BaseSet::Interval { lo, hi } => check_atom_1d(atom, *lo, *hi, tol),
            BaseSet::Polygon(p) => check_atom_2d(atom, p, tol),
        })
        .collect::<Vec<_>>();
    let pass = atoms.iter().all(|a| a.pass);
    OscReport { atoms, pass, tol }
}

fn check_atom_1d(atom: &OffspringAtom, lo: f64, hi: f64, tol: f64) -> OscAtomReport {
    let mut images: Vec<(f64, f64)> = atom
        .maps
        .iter()
        .map(|m| {
            let f = m.to_map(1);
            let a = f.apply([lo, 0.0])[0];
            let b = f.apply([hi, 0.0])[0];
            (a.min(b), a.max(b))
        })
        .collect();
    let mut containment: f64 = 0.0;
    for &(a, b) in &images {
        containment = containment.max(lo - a).max(b - hi);
    }
    images.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut overlap: f64 = 0.0;
    for w in images.windows(2) {
        overlap = overlap.max(w[0].1 - w[1].0);
    }
    OscAtomReport {
        pass: containment <= tol && overlap <= tol,
        containment_violation: containment.max(0.0),
        overlap_violation: overlap.max(0.0),
    }
}

fn check_atom_2d(atom: &OffspringAtom, base: &ConvexPolygon, tol: f64) -> OscAtomReport {
    let images: Vec<ConvexPolygon> = atom
        .maps
        .iter()
        .map(|m| base.transform(&m.to_map(2)))
        .collect();
    let mut containment: f64 = 0.0;
    for img in &images {
        for &v in img.verts() {
            containment = containment.max(-base.inner_margin(v));
        }
    }
    let area_j = base.area();
    let mut overlap: f64 = 0.0;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            overlap = overlap.max(images[i].intersection_area(&images[j]) / area_j);
        }
    }
    OscAtomReport {
        pass: containment <= tol && overlap <= tol,
        containment_violation: containment.max(0.0),
        overlap_violation: overlap.max(0.0),
    }
}

/// Union of the first-generation base images for one atom (used by the
/// boundary-subtree distance test in dimension 1).
pub fn atom_images_1d(atom: &OffspringAtom, lo: f64, hi: f64) -> IntervalSet {
    IntervalSet::from_spans(
        atom.maps
            .iter()
            .map(|m| {
                let f = m.to_map(1);
                let a = f.apply([lo, 0.0])[0];
                let b = f.apply([hi, 0.0])[0];
                (a.min(b), a.max(b))
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Model file schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    dimension: u8,
    base: BaseFile,
    atoms: Vec<AtomFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseFile {
    interval: Option<[f64; 2]>,
    polygon: Option<Vec<[f64; 2]>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomFile {
    probability: f64,
    #[serde(default)]
    maps: Vec<MapFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    ratio: f64,
    rotation: Option<f64>,
    reflection: Option<bool>,
    translation: Vec<f64>,
}

impl ModelFile {
    fn into_model(self) -> Result<RifsModel> {
        let dim = self.dimension;
        if dim != 1 && dim != 2 {
            return Err(Error::Model(format!(
                "dimension: must be 1 or 2, got {dim}"
            )));
        }
        let base = match (dim, self.base.interval, self.base.polygon) {
            (1, Some([lo, hi]), None) => {
                if !(hi > lo) {
                    return Err(Error::Model(
                        "base.interval: endpoints must satisfy lo < hi".into(),
                    ));
                }
                BaseSet::Interval { lo, hi }
            }
            (2, None, Some(verts)) => BaseSet::Polygon(ConvexPolygon::new(
                verts.into_iter().collect(),
            )?),
            (1, _, _) => {
                return Err(Error::Model(
                    "base: dimension 1 requires exactly the key base.interval".into(),
                ))
            }
            _ => {
                return Err(Error::Model(
                    "base: dimension 2 requires exactly the key base.polygon".into(),
                ))
            }
        };
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (ai, atom) in self.atoms.into_iter().enumerate() {
            let mut maps = Vec::with_capacity(atom.maps.len());
            for (mi, m) in atom.maps.into_iter().enumerate() {
                if m.translation.len() != dim as usize {
                    return Err(Error::Model(format!(
                        "atoms[{ai}].maps[{mi}].translation: expected {dim} components, got {}",
                        m.translation.len()
                    )));
                }
                let translation = if dim == 1 {
                    [m.translation[0], 0.0]
                } else {
                    [m.translation[0], m.translation[1]]
                };
                maps.push(Similarity {
                    ratio: m.ratio,
                    rotation: m.rotation.unwrap_or(if dim == 1 { 1.0 } else { 0.0 }),
                    reflection: m.reflection.unwrap_or(false),
                    translation,
                });
            }
            atoms.push(OffspringAtom { probability: atom.probability, maps });
        }
        Ok(RifsModel { name: self.name, base, atoms })
    }
}

// ---------------------------------------------------------------------------
// Convenience constructors for bundled deterministic generators (tests, docs)
// ---------------------------------------------------------------------------

/// Middle-third Cantor generator on [0,1].
pub fn cantor_model() -> RifsModel {
    let third = 1.0 / 3.0;
    RifsModel {
        name: "cantor".into(),
        base: BaseSet::Interval { lo: 0.0, hi: 1.0 },
        atoms: vec![OffspringAtom {
            probability: 1.0,
            maps: vec![
                Similarity { ratio: third, rotation: 1.0, reflection: false, translation: [0.0, 0.0] },
                Similarity { ratio: third, rotation: 1.0, reflection: false, translation: [2.0 / 3.0, 0.0] },
            ],
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overlap_model() -> RifsModel {
        RifsModel {
            name: "overlap".into(),
            base: BaseSet::Interval { lo: 0.0, hi: 1.0 },
            atoms: vec![OffspringAtom {
                probability: 1.0,
                maps: vec![
                    Similarity { ratio: 0.6, rotation: 1.0, reflection: false, translation: [0.0, 0.0] },
                    Similarity { ratio: 0.6, rotation: 1.0, reflection: false, translation: [0.4, 0.0] },
                ],
            }],
        }
    }

    fn sierpinski_model() -> RifsModel {
        let h = 3.0f64.sqrt() / 2.0;
        let tri = ConvexPolygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap();
        RifsModel {
            name: "sierpinski".into(),
            base: BaseSet::Polygon(tri),
            atoms: vec![OffspringAtom {
                probability: 1.0,
                maps: vec![
                    Similarity { ratio: 0.5, rotation: 0.0, reflection: false, translation: [0.0, 0.0] },
                    Similarity { ratio: 0.5, rotation: 0.0, reflection: false, translation: [0.5, 0.0] },
                    Similarity { ratio: 0.5, rotation: 0.0, reflection: false, translation: [0.25, h / 2.0] },
                ],
            }],
        }
    }

    #[test]
    fn cantor_generator_passes_osc() {
        let report = check_osc(&cantor_model(), 1e-9);
        assert!(report.pass);
        assert_eq!(report.worst(), 0.0);
    }

    #[test]
    fn overlapping_maps_fail_osc() {
        let report = check_osc(&overlap_model(), 1e-9);
        assert!(!report.pass);
        // images [0, 0.6] and [0.4, 1.0] overlap on [0.4, 0.6]
        assert!((report.atoms[0].overlap_violation - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sierpinski_generator_passes_osc() {
        let report = check_osc(&sierpinski_model(), 1e-9);
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn sierpinski_pairwise_intersection_oracle() {
        // exact polygon-intersection oracle: corner images of the triangle
        // meet in at most a point, so every pairwise area is 0
        let m = sierpinski_model();
        let base = match &m.base {
            BaseSet::Polygon(p) => p.clone(),
            _ => unreachable!(),
        };
        let imgs: Vec<ConvexPolygon> = m.atoms[0]
            .maps
            .iter()
            .map(|s| base.transform(&s.to_map(2)))
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(imgs[i].intersection_area(&imgs[j]) < 1e-15);
            }
        }
    }

    #[test]
    fn toml_roundtrip_and_validation() {
        let text = r#"
name = "cantor"
dimension = 1

[base]
interval = [0.0, 1.0]

[[atoms]]
probability = 1.0
maps = [
  { ratio = 0.3333333333333333, rotation = 1.0, translation = [0.0] },
  { ratio = 0.3333333333333333, rotation = 1.0, translation = [0.6666666666666666] },
]
"#;
        let model = RifsModel::from_toml_str(text).unwrap();
        assert_eq!(model.dimension(), 1);
        assert_eq!(model.atoms[0].maps.len(), 2);
        assert!((model.mean_offspring() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn parse_error_cites_location() {
        let text = "name = \"x\"\ndimension = 1\n[base]\ninterval = [0.0, \"oops\"]\n";
        let err = RifsModel::from_toml_str(text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("line"), "expected location in {msg}");
    }

    #[test]
    fn subcritical_is_rejected() {
        let text = r#"
name = "single"
dimension = 1

[base]
interval = [0.0, 1.0]

[[atoms]]
probability = 1.0
maps = [ { ratio = 0.5, rotation = 1.0, translation = [0.0] } ]
"#;
        match RifsModel::from_toml_str(text) {
            Err(Error::Subcritical { mean }) => assert!((mean - 1.0).abs() < 1e-15),
            other => panic!("expected subcritical rejection, got {other:?}"),
        }
    }

    #[test]
    fn extinction_probability_binary_branching() {
        // p(0 children) = 1/4, p(2 children) = 3/4: q solves q = 1/4 + 3/4 q^2,
        // smallest root q = 1/3
        let m = RifsModel {
            name: "ext".into(),
            base: BaseSet::Interval { lo: 0.0, hi: 1.0 },
            atoms: vec![
                OffspringAtom { probability: 0.25, maps: vec![] },
                OffspringAtom {
                    probability: 0.75,
                    maps: vec![
                        Similarity { ratio: 1.0 / 3.0, rotation: 1.0, reflection: false, translation: [0.0, 0.0] },
                        Similarity { ratio: 1.0 / 3.0, rotation: 1.0, reflection: false, translation: [2.0 / 3.0, 0.0] },
                    ],
                },
            ],
        };
        assert!((m.extinction_probability() - 1.0 / 3.0).abs() < 1e-9);
        assert!(m.extinction_within(10) < m.extinction_probability());
    }
}
