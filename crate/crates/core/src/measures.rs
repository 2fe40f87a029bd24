//! Points, box domains, discrete signed measures and the extremal atoms of the
//! KR unit ball (scaled Diracs and scaled dipoles).

use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in a one- or two-dimensional domain.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; 2],
    dim: u8,
}

impl Point {
    pub fn new1(x: f64) -> Self {
        Point { coords: [x, 0.0], dim: 1 }
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Point { coords: [x, y], dim: 2 }
    }

    pub fn from_slice(xs: &[f64]) -> Result<Self> {
        match xs {
            [x] => Ok(Point::new1(*x)),
            [x, y] => Ok(Point::new2(*x, *y)),
            _ => Err(Error::DimensionMismatch { expected: 2, got: xs.len() }),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn dist_sq(&self, other: &Point) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let d = self.coords[i] - other.coords[i];
            s += d * d;
        }
        s
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.dim()))?;
        for v in self.as_slice() {
            seq.serialize_element(v)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct PointVisitor;
        impl<'de> Visitor<'de> for PointVisitor {
            type Value = Point;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an array of 1 or 2 numbers")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Point, A::Error> {
                let mut xs = Vec::with_capacity(2);
                while let Some(v) = seq.next_element::<f64>()? {
                    xs.push(v);
                }
                Point::from_slice(&xs).map_err(de::Error::custom)
            }
        }
        d.deserialize_seq(PointVisitor)
    }
}

/// Axis-aligned box in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRaw")]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct DomainRaw {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<DomainRaw> for Domain {
    type Error = Error;
    fn try_from(raw: DomainRaw) -> Result<Self> {
        Domain::new(raw.lower, raw.upper)
    }
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || !(1..=2).contains(&lower.len()) {
            return Err(Error::InvalidDomain(format!(
                "bounds must both have length 1 or 2, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidDomain(format!("need lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(Domain { lower, upper })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Domain::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn diam(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l) * (u - l)).sum::<f64>().sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, z: &Point) -> bool {
        z.dim() == self.dim()
            && z.as_slice().iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Componentwise clamp of coordinates `xs` (length a multiple of `dim`) onto the box.
    pub fn clamp(&self, xs: &mut [f64]) {
        let n = self.dim();
        for (i, v) in xs.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i % n], self.upper[i % n]);
        }
    }

    /// Tensor grid with `per_axis` nodes along each axis, endpoints included.
    pub fn grid(&self, per_axis: usize) -> Vec<Point> {
        let per_axis = per_axis.max(2);
        let axis = |i: usize| linspace(self.lower[i], self.upper[i], per_axis);
        match self.dim() {
            1 => axis(0).into_iter().map(Point::new1).collect(),
            _ => {
                let xs = axis(0);
                let ys = axis(1);
                xs.iter().flat_map(|&x| ys.iter().map(move |&y| Point::new2(x, y))).collect()
            }
        }
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { b } else { a + i as f64 * h }).collect()
        }
    }
}

/// Parameters of the KR norm: creation weight `alpha`, transport weight `beta`
/// and cost exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KrParamsRaw")]
pub struct KrParams {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
}

#[derive(Deserialize)]
struct KrParamsRaw {
    alpha: f64,
    beta: f64,
    p: f64,
}

impl TryFrom<KrParamsRaw> for KrParams {
    type Error = Error;
    fn try_from(r: KrParamsRaw) -> Result<Self> {
        KrParams::new(r.alpha, r.beta, r.p)
    }
}

impl KrParams {
    pub fn new(alpha: f64, beta: f64, p: f64) -> Result<Self> {
        let params = KrParams { alpha, beta, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let KrParams { alpha, beta, p } = *self;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParams(format!("alpha must be > 0, got {alpha}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParams(format!("beta must be > 0, got {beta}")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParams(format!("p must lie in (0, 1], got {p}")));
        }
        if 2.0 * alpha - beta <= 0.0 {
            return Err(Error::InvalidParams(format!("need 2*alpha - beta > 0, got {}", 2.0 * alpha - beta)));
        }
        Ok(())
    }

    /// Ground cost `|x - y|^p`.
    #[inline]
    pub fn cost(&self, x: &Point, y: &Point) -> f64 {
        x.dist(y).powf(self.p)
    }

    /// Cost of moving one unit of mass from `x` to `y`: `beta + |x - y|^p`.
    #[inline]
    pub fn transport_cost(&self, x: &Point, y: &Point) -> f64 {
        self.beta + self.cost(x, y)
    }

    /// Upper bound (exclusive) on `|x - y|^p` for a dipole to be extremal.
    #[inline]
    pub fn extremal_window(&self) -> f64 {
        2.0 * self.alpha - self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Point,
    pub w: f64,
}

/// Finitely supported signed measure, stored as a flat list of weighted atoms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscreteMeasure {
    pub atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn new() -> Self {
        DiscreteMeasure::default()
    }

    pub fn from_atoms<I: IntoIterator<Item = (Point, f64)>>(atoms: I) -> Self {
        DiscreteMeasure { atoms: atoms.into_iter().map(|(x, w)| Atom { x, w }).collect() }
    }

    pub fn dirac(x: Point, w: f64) -> Self {
        DiscreteMeasure { atoms: vec![Atom { x, w }] }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn push(&mut self, x: Point, w: f64) {
        self.atoms.push(Atom { x, w });
    }

    pub fn scaled(&self, c: f64) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().map(|a| Atom { x: a.x, w: c * a.w }).collect() }
    }

    /// Sum of two measures (atom lists concatenated, not coalesced).
    pub fn plus(&self, other: &DiscreteMeasure) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        DiscreteMeasure { atoms }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    pub fn positive_part(&self) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().filter(|a| a.w > 0.0).copied().collect() }
    }

    pub fn negative_part(&self) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().filter(|a| a.w < 0.0).map(|a| Atom { x: a.x, w: -a.w }).collect() }
    }

    pub fn check_in(&self, domain: &Domain) -> Result<()> {
        for a in &self.atoms {
            if !domain.contains(&a.x) {
                return Err(Error::InvalidDomain(format!("atom {:?} lies outside the domain", a.x)));
            }
        }
        Ok(())
    }
}

/// Total variation `|mu|(Omega)`, with coincident atoms cancelled first.
pub fn total_variation(mu: &DiscreteMeasure) -> f64 {
    coalesce(mu, 0.0).atoms.iter().map(|a| a.w.abs()).sum()
}

/// Merge atoms within `radius` of each other (transitive closure).
///
/// Each cluster is replaced by one atom at the `|w|`-weighted centroid carrying the
/// summed weight; clusters whose weights cancel are dropped.
pub fn coalesce(mu: &DiscreteMeasure, radius: f64) -> DiscreteMeasure {
    let n = mu.atoms.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let r2 = radius * radius;
    for i in 0..n {
        for j in (i + 1)..n {
            if mu.atoms[i].x.dist_sq(&mu.atoms[j].x) <= r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    // clusters in order of their first member
    let mut order: Vec<usize> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    let mut sums: Vec<(Vec<f64>, f64, f64, f64)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = sums.len();
            order.push(i);
            sums.push((vec![0.0; mu.atoms[i].x.dim()], 0.0, 0.0, 0.0));
        }
        let entry = &mut sums[slot[root]];
        let a = &mu.atoms[i];
        let m = a.w.abs();
        for (c, v) in entry.0.iter_mut().zip(a.x.as_slice()) {
            *c += m * v;
        }
        entry.1 += a.w;
        entry.2 += m;
        entry.3 += 1.0;
    }

    let mut out = DiscreteMeasure::new();
    for (first, (centroid, w, abs_w, count)) in order.into_iter().zip(sums) {
        if w == 0.0 || w.abs() <= 1e-14 * abs_w {
            continue;
        }
        let x = if count == 1.0 || abs_w == 0.0 {
            mu.atoms[first].x
        } else {
            let c: Vec<f64> = centroid.iter().map(|v| v / abs_w).collect();
            Point::from_slice(&c).expect("centroid keeps the dimension")
        };
        out.push(x, w);
    }
    out
}

/// Extremal point of the KR unit ball: `sign * delta_z / alpha` or the dipole
/// `(delta_x - delta_y) / (beta + |x - y|^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ExtremalAtom {
    Dirac { sign: i8, z: Point },
    Dipole { x: Point, y: Point },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomKind {
    Dirac,
    Dipole,
}

impl ExtremalAtom {
    pub fn dirac(sign: i8, z: Point) -> Self {
        ExtremalAtom::Dirac { sign, z }
    }

    pub fn dipole(x: Point, y: Point) -> Self {
        ExtremalAtom::Dipole { x, y }
    }

    pub fn kind(&self) -> AtomKind {
        match self {
            ExtremalAtom::Dirac { .. } => AtomKind::Dirac,
            ExtremalAtom::Dipole { .. } => AtomKind::Dipole,
        }
    }

    pub fn validate(&self, params: &KrParams) -> Result<()> {
        match *self {
            ExtremalAtom::Dirac { sign, z } => {
                if sign != 1 && sign != -1 {
                    return Err(Error::InvalidAtom(format!("dirac sign must be +-1, got {sign}")));
                }
                if !z.is_finite() {
                    return Err(Error::InvalidAtom("non-finite dirac location".into()));
                }
            }
            ExtremalAtom::Dipole { x, y } => {
                if x.dim() != y.dim() {
                    return Err(Error::InvalidAtom("dipole endpoints differ in dimension".into()));
                }
                let c = params.cost(&x, &y);
                if !(c > 0.0) {
                    return Err(Error::InvalidAtom(format!("dipole endpoints coincide at {x:?}")));
                }
                if c >= params.extremal_window() {
                    return Err(Error::InvalidAtom(format!(
                        "dipole cost {c} is not below 2*alpha - beta = {}",
                        params.extremal_window()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_in(&self, domain: &Domain) -> Result<()> {
        let ok = match self {
            ExtremalAtom::Dirac { z, .. } => domain.contains(z),
            ExtremalAtom::Dipole { x, y } => domain.contains(x) && domain.contains(y),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidAtom(format!("{self:?} lies outside the domain")))
        }
    }

    /// Distance used for insertion coalescing: Diracs match when signs agree,
    /// dipoles compare as ordered pairs. `None` if the atoms are not comparable.
    pub fn distance_to(&self, other: &ExtremalAtom) -> Option<f64> {
        match (self, other) {
            (ExtremalAtom::Dirac { sign: s1, z: z1 }, ExtremalAtom::Dirac { sign: s2, z: z2 }) => {
                (s1 == s2).then(|| z1.dist(z2))
            }
            (ExtremalAtom::Dipole { x: x1, y: y1 }, ExtremalAtom::Dipole { x: x2, y: y2 }) => {
                Some(x1.dist(x2).max(y1.dist(y2)))
            }
            _ => None,
        }
    }
}

/// The measure represented by an extremal atom.
pub fn as_measure(atom: &ExtremalAtom, params: &KrParams) -> Result<DiscreteMeasure> {
    atom.validate(params)?;
    Ok(match *atom {
        ExtremalAtom::Dirac { sign, z } => DiscreteMeasure::dirac(z, f64::from(sign) / params.alpha),
        ExtremalAtom::Dipole { x, y } => {
            let s = 1.0 / params.transport_cost(&x, &y);
            DiscreteMeasure::from_atoms([(x, s), (y, -s)])
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Transport plan over the atom indices of a measure (or of a pair of measures).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
}

impl TransportPlan {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p1(x: f64) -> Point {
        Point::new1(x)
    }

    fn params() -> KrParams {
        KrParams::new(0.9, 0.4, 1.0).unwrap()
    }

    #[test]
    fn dirac_as_measure() {
        let m = as_measure(&ExtremalAtom::dirac(1, p1(7.0)), &params()).unwrap();
        assert_eq!(m.len(), 1);
        assert_relative_eq!(m.atoms[0].w, 1.0 / 0.9, epsilon = 1e-15);
    }

    #[test]
    fn dipole_as_measure() {
        let m = as_measure(&ExtremalAtom::dipole(p1(6.26), p1(6.78)), &params()).unwrap();
        assert_relative_eq!(m.atoms[0].w, 1.0 / 0.92, epsilon = 1e-12);
        assert_relative_eq!(m.atoms[1].w, -1.0 / 0.92, epsilon = 1e-12);
        assert_relative_eq!(m.atoms[0].w, 1.08696, epsilon = 1e-5);
    }

    #[test]
    fn degenerate_and_long_dipoles_are_rejected() {
        let e = as_measure(&ExtremalAtom::dipole(p1(0.0), p1(0.0)), &params());
        assert!(matches!(e, Err(Error::InvalidAtom(_))));
        // 2a - b = 1.4
        let e = as_measure(&ExtremalAtom::dipole(p1(0.0), p1(1.4)), &params());
        assert!(matches!(e, Err(Error::InvalidAtom(_))));
        assert!(as_measure(&ExtremalAtom::dirac(0, p1(0.0)), &params()).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(KrParams::new(0.9, 0.4, 1.0).is_ok());
        assert!(KrParams::new(0.0, 0.4, 1.0).is_err());
        assert!(KrParams::new(0.9, 0.0, 1.0).is_err());
        assert!(KrParams::new(0.9, 0.4, 1.5).is_err());
        assert!(KrParams::new(0.9, 0.4, 0.0).is_err());
        assert!(KrParams::new(0.5, 1.0, 1.0).is_err());
        assert!(serde_json::from_str::<KrParams>(r#"{"alpha":1,"beta":3,"p":1}"#).is_err());
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(total_variation(&DiscreteMeasure::new()), 0.0);
        let m = DiscreteMeasure::from_atoms([(p1(1.0), 2.0), (p1(1.0), -0.5)]);
        assert_relative_eq!(total_variation(&m), 1.5);
        let m = DiscreteMeasure::from_atoms([(p1(0.0), 1.0), (p1(1.0), -1.0)]);
        assert_relative_eq!(total_variation(&m), 2.0);
    }

    #[test]
    fn coalesce_examples() {
        let m = DiscreteMeasure::from_atoms([(p1(1.0), 1.0), (p1(1.0 + 1e-12), 1.0)]);
        let c = coalesce(&m, 1e-9);
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c.atoms[0].x[0], 1.0, epsilon = 1e-11);
        assert_eq!(c.atoms[0].w, 2.0);

        let m = DiscreteMeasure::from_atoms([(p1(0.0), 1.0), (p1(5.0), -1.0)]);
        assert_eq!(coalesce(&m, 1e-9), m);

        let m = DiscreteMeasure::from_atoms([(p1(2.0), 1.0), (p1(2.0), -1.0)]);
        assert!(coalesce(&m, 0.0).is_empty());
    }

    #[test]
    fn coalesce_is_transitive() {
        let m = DiscreteMeasure::from_atoms([(p1(0.0), 1.0), (p1(0.8), 1.0), (p1(1.6), 1.0)]);
        let c = coalesce(&m, 1.0);
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c.atoms[0].x[0], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn serde_formats() {
        let m = DiscreteMeasure::from_atoms([(p1(1.5), -2.0), (Point::new2(0.0, 1.0), 1.0)]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"[{"x":[1.5],"w":-2.0},{"x":[0.0,1.0],"w":1.0}]"#);
        assert_eq!(serde_json::from_str::<DiscreteMeasure>(&s).unwrap(), m);

        let a = ExtremalAtom::dirac(-1, p1(3.0));
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"type":"dirac","sign":-1,"z":[3.0]}"#);
        let d = ExtremalAtom::dipole(p1(1.0), p1(2.0));
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"{"type":"dipole","x":[1.0],"y":[2.0]}"#);
        assert!(serde_json::from_str::<Point>("[1,2,3]").is_err());
    }

    #[test]
    fn domain_checks() {
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::new(vec![0.0], vec![1.0, 2.0]).is_err());
        let d = Domain::new(vec![0.0, 0.0], vec![3.0, 4.0]).unwrap();
        assert_relative_eq!(d.diam(), 5.0);
        assert_eq!(d.grid(3).len(), 9);
        assert!(d.contains(&Point::new2(3.0, 0.0)));
        assert!(!d.contains(&Point::new2(3.1, 0.0)));
        assert!(!d.contains(&p1(1.0)));
    }

    fn arb_measure() -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec((0.0..10.0f64, -3.0..3.0f64), 0..12).prop_map(|v| {
            // snap locations so that near-coincidences actually occur
            DiscreteMeasure::from_atoms(v.into_iter().map(|(x, w)| (p1((x * 4.0).round() / 4.0), w)))
        })
    }

    proptest! {
        #[test]
        fn coalesce_idempotent(m in arb_measure(), r in 0.0..0.6f64) {
            let once = coalesce(&m, r);
            let twice = coalesce(&once, r);
            prop_assert_eq!(once.len(), twice.len());
            for (a, b) in once.atoms.iter().zip(&twice.atoms) {
                prop_assert!((a.w - b.w).abs() <= 1e-12 * (1.0 + a.w.abs()));
                prop_assert!(a.x.dist(&b.x) <= 1e-12);
            }
        }

        #[test]
        fn total_variation_is_absolutely_homogeneous(m in arb_measure(), c in -5.0..5.0f64) {
            let lhs = total_variation(&m.scaled(c));
            let rhs = c.abs() * total_variation(&m);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn extremal_atoms_have_expected_mass(
            x in 0.0..5.0f64, dx in 0.01..1.0f64, alpha in 0.3..2.0f64, bf in 0.05..0.95f64, p in 0.2..=1.0f64,
        ) {
            let params = KrParams::new(alpha, bf * 2.0 * alpha, p).unwrap();
            let d = as_measure(&ExtremalAtom::dirac(1, p1(x)), &params).unwrap();
            prop_assert!((total_variation(&d) - 1.0 / alpha).abs() < 1e-12);
            let (a, b) = (p1(x), p1(x + dx));
            if params.cost(&a, &b) < params.extremal_window() {
                let m = as_measure(&ExtremalAtom::dipole(a, b), &params).unwrap();
                let expect = 2.0 / params.transport_cost(&a, &b);
                prop_assert!((total_variation(&m) - expect).abs() < 1e-12);
            }
        }
    }
}
