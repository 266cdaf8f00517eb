//! Edge-edge contact detection across the periodic tile and its ghost copies.

use std::collections::{HashSet, VecDeque};

use crate::pattern::{Seam, Tiling};
use crate::rod::Vec3;

/// Broadphase margin as a multiple of the yarn radius.
pub const DEFAULT_MARGIN_FACTOR: f64 = 0.5;

/// Ghost offsets whose edges are tested against the tile. Together with the
/// tile itself these cover each periodic pair exactly once.
pub const CONTACT_OFFSETS: [(i32, i32); 5] = [(0, 0), (1, 0), (0, 1), (1, 1), (1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeRef {
    pub yarn: usize,
    pub edge: usize,
}

/// Closest-point pair between edge `a` of the tile and edge `b` taken from
/// the ghost tile at `offset`. `normal` points from `b` to `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub a: EdgeRef,
    pub b: EdgeRef,
    pub offset: (i32, i32),
    pub s: f64,
    pub t: f64,
    pub distance: f64,
    pub normal: Vec3,
}

impl Contact {
    /// Penetration `2r − distance`; negative inside the broadphase margin.
    pub fn depth(&self, radius: f64) -> f64 {
        2.0 * radius - self.distance
    }

    pub fn key(&self) -> (EdgeRef, EdgeRef, (i32, i32)) {
        (self.a, self.b, self.offset)
    }
}

/// Closest points between segments `[p0, p1]` and `[q0, q1]`, returned as
/// parameters `(s, t)` in `[0, 1]`. Parallel pairs use the midpoint of the
/// overlap of their projections; zero-length segments use their midpoint.
pub fn segment_closest_params(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> (f64, f64) {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let scale = a.max(e).max(f64::MIN_POSITIVE);
    let tiny = 1e-14 * scale;
    if a <= tiny && e <= tiny {
        return (0.5, 0.5);
    }
    if a <= tiny {
        return (0.5, ((d2.dot(&(p0 + 0.5 * d1 - q0))) / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= tiny {
        return ((-(d1.dot(&(p0 - (q0 + 0.5 * d2)))) / a).clamp(0.0, 1.0), 0.5);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let s = if denom > 1e-12 * a * e {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        // parallel: centre of the overlap of q projected onto p
        let u0 = (q0 - p0).dot(&d1) / a;
        let u1 = (q1 - p0).dot(&d1) / a;
        let (lo, hi) = (u0.min(u1).max(0.0), u0.max(u1).min(1.0));
        if lo <= hi {
            0.5 * (lo + hi)
        } else if hi < 0.0 || u0.max(u1) < 0.0 {
            0.0
        } else {
            1.0
        }
    };
    let mut t = (b * s + f) / e;
    let s = if t < 0.0 {
        t = 0.0;
        (-c / a).clamp(0.0, 1.0)
    } else if t > 1.0 {
        t = 1.0;
        ((b - c) / a).clamp(0.0, 1.0)
    } else {
        s
    };
    (s, t)
}

pub fn segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let (s, t) = segment_closest_params(p0, p1, q0, q1);
    (p0.lerp(p1, s) - q0.lerp(q1, t)).norm()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn of_segment(a: &Vec3, b: &Vec3, pad: f64) -> Self {
        let pad = Vec3::repeat(pad);
        Aabb { min: a.inf(b) - pad, max: a.sup(b) + pad }
    }

    fn merge(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= o.max[k] && o.min[k] <= self.max[k])
    }

    fn centre(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }
}

enum Node {
    Leaf { bounds: Aabb, items: Vec<usize> },
    Inner { bounds: Aabb, children: Box<[Node; 2]> },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy over axis-aligned boxes, median split on the
/// longest axis.
struct Bvh {
    root: Option<Node>,
    boxes: Vec<Aabb>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    fn build(boxes: Vec<Aabb>) -> Self {
        let mut idx: Vec<usize> = (0..boxes.len()).collect();
        let root = (!idx.is_empty()).then(|| Self::build_node(&boxes, &mut idx));
        Bvh { root, boxes }
    }

    fn build_node(boxes: &[Aabb], idx: &mut [usize]) -> Node {
        let bounds = idx.iter().skip(1).fold(boxes[idx[0]], |acc, &i| acc.merge(&boxes[i]));
        if idx.len() <= LEAF_SIZE {
            return Node::Leaf { bounds, items: idx.to_vec() };
        }
        let extent = bounds.max - bounds.min;
        let axis = extent.imax();
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| boxes[a].centre()[axis].total_cmp(&boxes[b].centre()[axis]));
        let (left, right) = idx.split_at_mut(mid);
        Node::Inner {
            bounds,
            children: Box::new([Self::build_node(boxes, left), Self::build_node(boxes, right)]),
        }
    }

    fn query(&self, q: &Aabb, out: &mut Vec<usize>) {
        let mut stack: Vec<&Node> = self.root.iter().collect();
        while let Some(node) = stack.pop() {
            if !node.bounds().overlaps(q) {
                continue;
            }
            match node {
                Node::Leaf { items, .. } => out.extend(items.iter().copied().filter(|&i| self.boxes[i].overlaps(q))),
                Node::Inner { children, .. } => stack.extend(children.iter()),
            }
        }
    }
}

/// Edge connectivity of a periodic pattern, used to skip pairs of edges that
/// are close along a yarn (including across seams).
#[derive(Debug, Clone)]
pub struct ContactTopology {
    edge_counts: Vec<usize>,
    seams: Vec<Seam>,
    exclusion_hops: usize,
}

impl ContactTopology {
    pub fn new(edge_counts: Vec<usize>, seams: Vec<Seam>, exclusion_hops: usize) -> Self {
        Self { edge_counts, seams, exclusion_hops }
    }

    /// Hop count covering every edge within `2r + margin` of an edge along a
    /// straight yarn with edges no shorter than `min_edge`; at least 2.
    pub fn hops_for(radius: f64, margin: f64, min_edge: f64) -> usize {
        let reach = ((2.0 * radius + margin) / min_edge).ceil() as usize + 1;
        reach.max(2)
    }

    pub fn edge_counts(&self) -> &[usize] {
        &self.edge_counts
    }

    pub fn exclusion_hops(&self) -> usize {
        self.exclusion_hops
    }

    fn neighbours(&self, e: EdgeRef, off: (i32, i32)) -> Vec<(EdgeRef, (i32, i32))> {
        let mut out = Vec::with_capacity(2);
        let n = self.edge_counts[e.yarn];
        if e.edge > 0 {
            out.push((EdgeRef { yarn: e.yarn, edge: e.edge - 1 }, off));
        }
        if e.edge + 1 < n {
            out.push((EdgeRef { yarn: e.yarn, edge: e.edge + 1 }, off));
        }
        for s in &self.seams {
            if s.end_yarn == e.yarn && e.edge + 1 == n {
                out.push((EdgeRef { yarn: s.start_yarn, edge: 0 }, (off.0 + s.offset.0, off.1 + s.offset.1)));
            }
            if s.start_yarn == e.yarn && e.edge == 0 {
                let m = self.edge_counts[s.end_yarn];
                out.push((EdgeRef { yarn: s.end_yarn, edge: m - 1 }, (off.0 - s.offset.0, off.1 - s.offset.1)));
            }
        }
        out
    }

    /// Edges (with tile offsets) within `exclusion_hops` of `e` in the tile.
    pub fn excluded(&self, e: EdgeRef) -> HashSet<(EdgeRef, (i32, i32))> {
        let mut seen = HashSet::new();
        seen.insert((e, (0, 0)));
        let mut queue = VecDeque::from([((e, (0, 0)), 0usize)]);
        while let Some((node, d)) = queue.pop_front() {
            if d == self.exclusion_hops {
                continue;
            }
            for nb in self.neighbours(node.0, node.1) {
                if seen.insert(nb) {
                    queue.push_back((nb, d + 1));
                }
            }
        }
        seen
    }

    fn edges(&self) -> impl Iterator<Item = EdgeRef> + '_ {
        self.edge_counts
            .iter()
            .enumerate()
            .flat_map(|(yarn, &n)| (0..n).map(move |edge| EdgeRef { yarn, edge }))
    }
}

/// Closest-point record for edge `a` against edge `b` of the ghost tile at `offset`.
pub fn contact_between(positions: &[Vec<Vec3>], tiling: &dyn Tiling, a: EdgeRef, b: EdgeRef, offset: (i32, i32)) -> Contact {
    let g = tiling.ghost(offset);
    let (p0, p1) = (positions[a.yarn][a.edge], positions[a.yarn][a.edge + 1]);
    let (q0, q1) = (g.apply(&positions[b.yarn][b.edge]), g.apply(&positions[b.yarn][b.edge + 1]));
    let (s, t) = segment_closest_params(&p0, &p1, &q0, &q1);
    let d = p0.lerp(&p1, s) - q0.lerp(&q1, t);
    let distance = d.norm();
    let normal = if distance > 0.0 {
        d / distance
    } else {
        // coincident closest points: separate along the common perpendicular
        let n = (p1 - p0).cross(&(q1 - q0));
        if n.norm() > 0.0 { n.normalize() } else { Vec3::z() }
    };
    Contact { a, b, offset, s, t, distance, normal }
}

/// All non-excluded edge pairs whose distance is below `2r + margin`,
/// found through a BVH over the (ghost) edges.
pub fn detect_contacts(
    positions: &[Vec<Vec3>],
    topology: &ContactTopology,
    tiling: &dyn Tiling,
    radius: f64,
    margin: f64,
) -> Vec<Contact> {
    let threshold = 2.0 * radius + margin;
    let edges: Vec<EdgeRef> = topology.edges().collect();
    let excluded: Vec<HashSet<(EdgeRef, (i32, i32))>> = edges.iter().map(|&e| topology.excluded(e)).collect();
    let tile_boxes: Vec<Aabb> = edges
        .iter()
        .map(|e| Aabb::of_segment(&positions[e.yarn][e.edge], &positions[e.yarn][e.edge + 1], 0.5 * threshold))
        .collect();
    let mut contacts = Vec::new();
    let mut hits = Vec::new();
    for offset in CONTACT_OFFSETS {
        let g = tiling.ghost(offset);
        let ghost_boxes: Vec<Aabb> = edges
            .iter()
            .map(|e| {
                Aabb::of_segment(&g.apply(&positions[e.yarn][e.edge]), &g.apply(&positions[e.yarn][e.edge + 1]), 0.5 * threshold)
            })
            .collect();
        let bvh = Bvh::build(ghost_boxes);
        for (ia, a) in edges.iter().enumerate() {
            hits.clear();
            bvh.query(&tile_boxes[ia], &mut hits);
            hits.sort_unstable();
            for &ib in &hits {
                if offset == (0, 0) && ib <= ia {
                    continue;
                }
                let b = edges[ib];
                if excluded[ia].contains(&(b, offset)) {
                    continue;
                }
                let c = contact_between(positions, tiling, *a, b, offset);
                if c.distance < threshold {
                    contacts.push(c);
                }
            }
        }
    }
    contacts.sort_by_key(|c| (c.a, c.b, c.offset));
    contacts
}

/// Exhaustive O(n²) counterpart of [`detect_contacts`].
pub fn detect_contacts_brute_force(
    positions: &[Vec<Vec3>],
    topology: &ContactTopology,
    tiling: &dyn Tiling,
    radius: f64,
    margin: f64,
) -> Vec<Contact> {
    let threshold = 2.0 * radius + margin;
    let edges: Vec<EdgeRef> = topology.edges().collect();
    let mut contacts = Vec::new();
    for (ia, &a) in edges.iter().enumerate() {
        let excluded = topology.excluded(a);
        for offset in CONTACT_OFFSETS {
            for (ib, &b) in edges.iter().enumerate() {
                if (offset == (0, 0) && ib <= ia) || excluded.contains(&(b, offset)) {
                    continue;
                }
                let c = contact_between(positions, tiling, a, b, offset);
                if c.distance < threshold {
                    contacts.push(c);
                }
            }
        }
    }
    contacts.sort_by_key(|c| (c.a, c.b, c.offset));
    contacts
}

/// Smallest distance between non-excluded edge pairs, or infinity.
pub fn min_separation(positions: &[Vec<Vec3>], topology: &ContactTopology, tiling: &dyn Tiling, search: f64) -> f64 {
    detect_contacts(positions, topology, tiling, 0.0, search)
        .iter()
        .map(|c| c.distance)
        .fold(f64::INFINITY, f64::min)
}

/// Point corrections from projecting one contact.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactCorrection {
    /// `(yarn, point, Δx)` in tile coordinates.
    pub moves: Vec<(usize, usize, Vec3)>,
    pub normal_magnitude: f64,
    pub tangential_magnitude: f64,
}

/// Position-based projection of a contact to separation `2r` with a
/// Coulomb clamp on the tangential correction, which opposes the relative
/// tangential slide of the contact points since `previous`. All four
/// endpoints carry equal weight.
pub fn resolve_contact(
    contact: &Contact,
    positions: &[Vec<Vec3>],
    previous: &[Vec<Vec3>],
    tiling: &dyn Tiling,
    radius: f64,
    friction: f64,
) -> ContactCorrection {
    let c = contact_between(positions, tiling, contact.a, contact.b, contact.offset);
    let violation = c.distance - 2.0 * radius;
    if violation >= 0.0 {
        return ContactCorrection { moves: Vec::new(), normal_magnitude: 0.0, tangential_magnitude: 0.0 };
    }
    let g = tiling.ghost(c.offset);
    let back = g.linear.try_inverse().unwrap_or_else(nalgebra::Matrix3::identity);
    let (s, t) = (c.s, c.t);
    let weights = [1.0 - s, s, -(1.0 - t), -t];
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();

    let contact_point = |pos: &[Vec<Vec3>], e: EdgeRef, u: f64, ghost: bool| {
        let (x0, x1) = (pos[e.yarn][e.edge], pos[e.yarn][e.edge + 1]);
        let (x0, x1) = if ghost { (g.apply(&x0), g.apply(&x1)) } else { (x0, x1) };
        x0.lerp(&x1, u)
    };
    let slide = (contact_point(positions, c.a, s, false) - contact_point(previous, c.a, s, false))
        - (contact_point(positions, c.b, t, true) - contact_point(previous, c.b, t, true));
    let tangential = slide - c.normal * c.normal.dot(&slide);
    let normal_magnitude = -violation;
    let tangential_magnitude = tangential.norm().min(friction * normal_magnitude);
    let tangent_dir = if tangential.norm() > 0.0 { tangential.normalize() } else { Vec3::zeros() };

    // relative correction of the contact points: +normal push, −tangential slide
    let relative = c.normal * normal_magnitude - tangent_dir * tangential_magnitude;
    let endpoints = [
        (c.a.yarn, c.a.edge, false),
        (c.a.yarn, c.a.edge + 1, false),
        (c.b.yarn, c.b.edge, true),
        (c.b.yarn, c.b.edge + 1, true),
    ];
    let moves = endpoints
        .iter()
        .zip(weights)
        .map(|(&(y, p, ghost), w)| {
            let dx = relative * (w / sum_sq);
            (y, p, if ghost { back * dx } else { dx })
        })
        .collect();
    ContactCorrection { moves, normal_magnitude, tangential_magnitude }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{plain_weave_matrix, twill_matrix, woven_pattern, FlatTiling};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_segments(a0: Vec3, a1: Vec3, b0: Vec3, b1: Vec3) -> (Vec<Vec<Vec3>>, ContactTopology, FlatTiling) {
        let positions = vec![vec![a0, a1], vec![b0, b1]];
        (positions, ContactTopology::new(vec![1, 1], Vec::new(), 0), FlatTiling { period: (100.0, 100.0) })
    }

    #[test]
    fn parallel_segments_outside_threshold() {
        let r = 0.1;
        let (p, topo, tiling) = two_segments(
            Vec3::zeros(),
            Vec3::x(),
            Vec3::new(0.0, 3.0 * r, 0.0),
            Vec3::new(1.0, 3.0 * r, 0.0),
        );
        assert!(detect_contacts(&p, &topo, &tiling, r, 0.5 * r).is_empty());
    }

    #[test]
    fn crossing_segments_at_distance_r() {
        let r = 0.1;
        let (p, topo, tiling) = two_segments(
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, r),
            Vec3::new(0.0, 1.0, r),
        );
        let c = detect_contacts(&p, &topo, &tiling, r, 0.5 * r);
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c[0].depth(r), r, epsilon = 1e-15);
        assert_relative_eq!(c[0].normal, -Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn parallel_overlap_uses_midpoint() {
        let (s, t) = segment_closest_params(
            &Vec3::zeros(),
            &Vec3::new(2.0, 0.0, 0.0),
            &Vec3::new(1.0, 1.0, 0.0),
            &Vec3::new(3.0, 1.0, 0.0),
        );
        assert_relative_eq!(s, 0.75, epsilon = 1e-15);
        assert_relative_eq!(t, 0.25, epsilon = 1e-15);
        let (s, t) = segment_closest_params(&Vec3::zeros(), &Vec3::zeros(), &Vec3::x(), &Vec3::x());
        assert_eq!((s, t), (0.5, 0.5));
    }

    proptest! {
        #[test]
        fn segment_distance_is_minimal(c in proptest::collection::vec(-1.0f64..1.0, 12)) {
            let v = |i: usize| Vec3::new(c[i], c[i + 1], c[i + 2]);
            let (p0, p1, q0, q1) = (v(0), v(3), v(6), v(9));
            let d = segment_distance(&p0, &p1, &q0, &q1);
            let n = 60;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                for j in 0..=n {
                    let x = p0.lerp(&p1, i as f64 / n as f64) - q0.lerp(&q1, j as f64 / n as f64);
                    best = best.min(x.norm());
                }
            }
            prop_assert!(d <= best + 1e-12);
            prop_assert!(d >= best - 0.05 * ((p1 - p0).norm() + (q1 - q0).norm()));
        }
    }

    fn topology_of(p: &crate::pattern::YarnPattern, hops: usize) -> ContactTopology {
        ContactTopology::new(p.yarns.iter().map(|y| y.len() - 1).collect(), p.seams().to_vec(), hops)
    }

    #[test]
    fn bvh_matches_brute_force_on_weaves() {
        for m in [plain_weave_matrix(), twill_matrix()] {
            let p = woven_pattern(&m, 6e-4, 1.1e-4, 4).unwrap();
            let tiling = FlatTiling { period: p.period };
            for (r, hops) in [(9e-5, 3), (1.5e-4, 2), (3e-4, 2)] {
                let topo = topology_of(&p, hops);
                let fast = detect_contacts(&p.yarns, &topo, &tiling, r, 0.5 * r);
                let slow = detect_contacts_brute_force(&p.yarns, &topo, &tiling, r, 0.5 * r);
                assert!(!fast.is_empty());
                assert_eq!(fast, slow);
            }
        }
    }

    #[test]
    fn exclusion_crosses_seams() {
        let p = woven_pattern(&plain_weave_matrix(), 6e-4, 1.1e-4, 4).unwrap();
        let topo = topology_of(&p, 2);
        let ex = topo.excluded(EdgeRef { yarn: 0, edge: 7 });
        assert!(ex.contains(&(EdgeRef { yarn: 0, edge: 0 }, (1, 0))));
        assert!(ex.contains(&(EdgeRef { yarn: 0, edge: 1 }, (1, 0))));
        assert!(!ex.contains(&(EdgeRef { yarn: 0, edge: 2 }, (1, 0))));
        assert!(ex.contains(&(EdgeRef { yarn: 0, edge: 5 }, (0, 0))));
        assert_eq!(ex.len(), 5);
    }

    #[test]
    fn straight_yarn_has_no_self_contacts_with_scaled_hops() {
        let n = 10;
        let l = 1e-3 / n as f64;
        let pts: Vec<Vec3> = (0..=n).map(|k| Vec3::new(k as f64 * l, 0.5e-3, 0.0)).collect();
        let r = 1.3 * l;
        let seam = Seam { end_yarn: 0, start_yarn: 0, offset: (1, 0) };
        let hops = ContactTopology::hops_for(r, 0.5 * r, l);
        let topo = ContactTopology::new(vec![n], vec![seam], hops);
        let tiling = FlatTiling { period: (1e-3, 1e-3) };
        assert!(detect_contacts(&[pts], &topo, &tiling, r, 0.5 * r).is_empty());
    }

    fn perpendicular_penetrating(r: f64) -> (Vec<Vec<Vec3>>, Contact, FlatTiling) {
        let (p, topo, tiling) = two_segments(
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, -r),
            Vec3::new(0.0, 1.0, -r),
        );
        let c = detect_contacts(&p, &topo, &tiling, r, 0.0)[0];
        (p, c, tiling)
    }

    fn apply(p: &mut [Vec<Vec3>], corr: &ContactCorrection) {
        for &(y, i, dx) in &corr.moves {
            p[y][i] += dx;
        }
    }

    #[test]
    fn frictionless_projection_reaches_two_r() {
        let r = 0.1;
        let (mut p, c, tiling) = perpendicular_penetrating(r);
        let prev = p.clone();
        let corr = resolve_contact(&c, &p, &prev, &tiling, r, 0.0);
        assert_eq!(corr.tangential_magnitude, 0.0);
        apply(&mut p, &corr);
        let d = segment_distance(&p[0][0], &p[0][1], &p[1][0], &p[1][1]);
        assert_relative_eq!(d, 2.0 * r, epsilon = 1e-15);
        // no tangential motion of either contact point
        let mid_a = 0.5 * (p[0][0] + p[0][1]);
        let mid_b = 0.5 * (p[1][0] + p[1][1]);
        assert_relative_eq!(mid_a.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(mid_b.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn friction_clamps_tangential_correction() {
        let r = 0.1;
        let mu = 0.2;
        for slide in [0.001, 0.005, 0.05] {
            let (p, c, tiling) = perpendicular_penetrating(r);
            // previous state: edge a displaced by −slide along x, so the
            // contact points slid +slide relative to each other
            let mut prev = p.clone();
            prev[0][0].x -= slide;
            prev[0][1].x -= slide;
            let corr = resolve_contact(&c, &p, &prev, &tiling, r, mu);
            let normal_correction = 2.0 * r - r;
            assert_relative_eq!(corr.normal_magnitude, normal_correction, epsilon = 1e-15);
            assert_relative_eq!(corr.tangential_magnitude, slide.min(mu * normal_correction), epsilon = 1e-15);
            let mut q = p.clone();
            apply(&mut q, &corr);
            let moved = (0.5 * (q[0][0] + q[0][1]) - 0.5 * (q[1][0] + q[1][1])) - (0.5 * (p[0][0] + p[0][1]) - 0.5 * (p[1][0] + p[1][1]));
            assert_relative_eq!(-moved.x, slide.min(mu * normal_correction), epsilon = 1e-14);
        }
    }

    #[test]
    fn separated_pair_is_untouched() {
        let r = 0.1;
        let (p, topo, tiling) = two_segments(
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 2.2 * r),
            Vec3::new(0.0, 1.0, 2.2 * r),
        );
        let c = detect_contacts(&p, &topo, &tiling, r, 0.5 * r)[0];
        let corr = resolve_contact(&c, &p, &p, &tiling, r, 0.2);
        assert!(corr.moves.is_empty());
    }
}
