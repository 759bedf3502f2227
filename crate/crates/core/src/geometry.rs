//! Object key points, partial noisy observation, and planar convex hulls.
//!
//! A cuboid is described by 27 key points: 8 vertices, 12 edge centres,
//! 6 face centres and the geometric centre. The policy never sees the full
//! set; [`observe`] keeps the half facing the hand and perturbs it with
//! Gaussian noise.
//!
//! Hulls are computed on horizontal projections. A point counts as enclosed
//! by the hand when its projection lies inside the hull and its height lies
//! within the hand's vertical slab (see [`HullSlab`]).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::{HandGeometry, HandState};
use crate::error::invalid;
use crate::{Result, Vec2, Vec3};

/// Boundary tolerance for hull containment, in metres.
pub const CONTAINS_TOL: f64 = 1e-9;

/// Ground-truth key points of a cuboid object.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPointCloud {
    pub points: Vec<Vec3>,
    /// Outward orientation of each point: face normal, or the direction from
    /// the centre for vertices and edge centres. Zero for the centre point.
    pub outward: Vec<Vec3>,
    pub true_center: Vec3,
}

impl KeyPointCloud {
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Generate the 27 key points of a cuboid rotated by `yaw` about the vertical
/// axis through `center`.
pub fn cuboid_key_points(center: Vec3, half_extents: Vec3, yaw: f64) -> Result<KeyPointCloud> {
    if !(half_extents.iter().all(|h| h.is_finite() && *h > 0.0)) {
        return Err(invalid(format!(
            "cuboid half extents must be strictly positive, got {half_extents:?}"
        )));
    }
    let (s, c) = yaw.sin_cos();
    let rotate = |v: Vec3| Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z);

    let mut points = Vec::with_capacity(27);
    let mut outward = Vec::with_capacity(27);
    // Lattice {-1,0,1}^3 scaled by the half extents: the number of nonzero
    // coordinates tells vertex (3), edge centre (2), face centre (1), centre (0).
    for ix in -1i32..=1 {
        for iy in -1i32..=1 {
            for iz in -1i32..=1 {
                let unit = Vec3::new(ix as f64, iy as f64, iz as f64);
                let local = unit.component_mul(&half_extents);
                points.push(center + rotate(local));
                let dir = if local.norm() > 0.0 {
                    // Faces and edges use the lattice direction so that a
                    // face centre's orientation is its face normal.
                    rotate(unit.normalize())
                } else {
                    Vec3::zeros()
                };
                outward.push(dir);
            }
        }
    }
    Ok(KeyPointCloud { points, outward, true_center: center })
}

/// What the policy observes of the object: a noisy half of the key points.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedCloud {
    pub points: Vec<Vec3>,
    pub estimated_center: Vec3,
    pub source_indices: Vec<usize>,
}

impl ObservedCloud {
    /// Build a cloud from explicit points (fixtures, full observation).
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let estimated_center = mean(&points);
        let source_indices = (0..points.len()).collect();
        Self { points, estimated_center, source_indices }
    }

    /// Noise-free observation of every key point.
    pub fn complete(cloud: &KeyPointCloud) -> Self {
        Self::from_points(cloud.points.clone())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn mean(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Keep the `ceil(N/2)` key points facing `hand_position` and add i.i.d.
/// Gaussian noise of standard deviation `sigma` to every coordinate.
///
/// Points are ranked by the dot product of their outward orientation with the
/// direction from the object centre to the hand; equal orientations are
/// ordered by distance to the hand, then by index.
pub fn observe<R: Rng + ?Sized>(
    cloud: &KeyPointCloud,
    hand_position: Vec3,
    sigma: f64,
    rng: &mut R,
) -> ObservedCloud {
    let keep = cloud.count().div_ceil(2);
    let to_hand = hand_position - cloud.true_center;
    let dir = if to_hand.norm() > 0.0 { to_hand.normalize() } else { Vec3::zeros() };

    let mut ranked: Vec<(i64, f64, usize)> = cloud
        .outward
        .iter()
        .zip(&cloud.points)
        .enumerate()
        .map(|(i, (o, p))| {
            // Quantize so that geometrically equal orientations tie exactly.
            let score = (o.dot(&dir) * 1e9).round() as i64;
            (score, (hand_position - p).norm(), i)
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut source_indices: Vec<usize> = ranked.iter().take(keep).map(|r| r.2).collect();
    source_indices.sort_unstable();

    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let points: Vec<Vec3> = source_indices
        .iter()
        .map(|&i| {
            let p = cloud.points[i];
            match &noise {
                Some(n) => p + Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)),
                None => p,
            }
        })
        .collect();
    let estimated_center = mean(&points);
    ObservedCloud { points, estimated_center, source_indices }
}

/// Minimum Euclidean distance from `p` to any observed key point.
pub fn nearest_key_point_distance(p: Vec3, cloud: &ObservedCloud) -> Result<f64> {
    cloud
        .points
        .iter()
        .map(|y| (p - y).norm())
        .min_by(f64::total_cmp)
        .ok_or_else(|| invalid("nearest key point of an empty cloud"))
}

/// Hand key points used by the distance and orientation rewards: the three
/// fingertips followed by the palm centre, each with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandKeyPoints {
    pub positions: [Vec3; 4],
    pub normals: [Vec3; 4],
}

/// Counter-clockwise convex polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull2D {
    pub vertices: Vec<Vec2>,
    /// Set when all generators are collinear (or coincide). A degenerate
    /// hull contains nothing.
    pub degenerate: bool,
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain. Collinear boundary points are dropped so the
/// result is strictly convex.
pub fn convex_hull(points: &[Vec2]) -> ConvexHull2D {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return ConvexHull2D { vertices: pts, degenerate: true };
    }

    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    let degenerate = hull.len() < 3;
    ConvexHull2D { vertices: hull, degenerate }
}

impl ConvexHull2D {
    pub fn area(&self) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
    }

    /// True iff `p` is inside the hull or within [`CONTAINS_TOL`] of its
    /// boundary.
    pub fn contains(&self, p: Vec2) -> bool {
        if self.degenerate {
            return false;
        }
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let edge = b - a;
            // Signed distance of p to the edge line, positive on the inside.
            cross(a, b, p) / edge.norm() >= -CONTAINS_TOL
        })
    }

    /// Apply a rigid planar transform (rotation then translation).
    pub fn transformed(&self, angle: f64, offset: Vec2) -> Self {
        let (s, c) = angle.sin_cos();
        let vertices = self
            .vertices
            .iter()
            .map(|v| Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y) + offset)
            .collect();
        Self { vertices, degenerate: self.degenerate }
    }
}

/// Planar hull plus the vertical extent of the hand: a 3-D point is enclosed
/// when its projection is in the hull and `|z - z_center| <= half_height`.
#[derive(Debug, Clone, PartialEq)]
pub struct HullSlab {
    pub hull: ConvexHull2D,
    pub z_center: f64,
    pub half_height: f64,
}

impl HullSlab {
    pub fn encloses(&self, p: &Vec3) -> bool {
        (p.z - self.z_center).abs() <= self.half_height + CONTAINS_TOL
            && self.hull.contains(Vec2::new(p.x, p.y))
    }

    pub fn count_enclosed(&self, points: &[Vec3]) -> usize {
        points.iter().filter(|p| self.encloses(p)).count()
    }
}

/// Convex hull of the hand's horizontal footprint: fingertips, finger base
/// joints and the four palm corners.
pub fn hand_hull(hand: &HandState, geom: &HandGeometry) -> ConvexHull2D {
    convex_hull(&geom.hull_generators(hand))
}

/// [`hand_hull`] together with the hand's vertical slab.
pub fn hand_hull_slab(hand: &HandState, geom: &HandGeometry) -> HullSlab {
    HullSlab {
        hull: hand_hull(hand, geom),
        z_center: geom.grasp_height,
        half_height: geom.slab_half_height,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> ConvexHull2D {
        convex_hull(&[
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ])
    }

    #[test]
    fn unit_cube_has_27_points_and_all_vertices() {
        let cloud = cuboid_key_points(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.5), 0.0).unwrap();
        assert_eq!(cloud.count(), 27);
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                for sz in [-0.5, 0.5] {
                    let v = Vec3::new(sx, sy, sz);
                    assert!(cloud.points.iter().any(|p| (p - v).norm() < 1e-15));
                }
            }
        }
    }

    #[test]
    fn non_positive_extent_rejected() {
        let err = cuboid_key_points(Vec3::zeros(), Vec3::new(0.5, 0.0, 0.5), 0.0);
        assert!(matches!(err, Err(crate::Error::InvalidArgument(_))));
        let err = cuboid_key_points(Vec3::zeros(), Vec3::new(0.5, -1.0, 0.5), 0.0);
        assert!(err.is_err());
    }

    #[test]
    fn quarter_turn_maps_vertices() {
        let h = Vec3::new(0.5, 0.5, 0.5);
        let a = cuboid_key_points(Vec3::zeros(), h, 0.0).unwrap();
        let b = cuboid_key_points(Vec3::zeros(), h, std::f64::consts::FRAC_PI_2).unwrap();
        for p in &a.points {
            let mapped = Vec3::new(-p.y, p.x, p.z);
            let best = b.points.iter().map(|q| (q - mapped).amax()).fold(f64::MAX, f64::min);
            assert!(best < 1e-12);
        }
    }

    #[test]
    fn all_points_inside_bounding_box() {
        let h = Vec3::new(0.03, 0.02, 0.05);
        let c = Vec3::new(0.1, -0.2, 0.05);
        let cloud = cuboid_key_points(c, h, 0.0).unwrap();
        for p in &cloud.points {
            let d = p - c;
            assert!(d.x.abs() <= h.x + 1e-15 && d.y.abs() <= h.y + 1e-15 && d.z.abs() <= h.z + 1e-15);
        }
    }

    #[test]
    fn observe_east_half_without_noise() {
        let cloud = cuboid_key_points(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.5), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = observe(&cloud, Vec3::new(3.0, 0.0, 0.0), 0.0, &mut rng);
        assert_eq!(obs.len(), 14);
        assert!(obs.points.iter().all(|p| p.x >= -1e-12));
        assert!(obs.estimated_center.x > cloud.true_center.x);
        // Exact subset of the key points.
        for (p, &i) in obs.points.iter().zip(&obs.source_indices) {
            assert_eq!(*p, cloud.points[i]);
        }
    }

    #[test]
    fn observe_is_deterministic_for_a_seed() {
        let cloud = cuboid_key_points(Vec3::new(0.1, 0.1, 0.03), Vec3::new(0.03, 0.03, 0.03), 0.4).unwrap();
        let hand = Vec3::new(-0.2, 0.0, 0.03);
        let a = observe(&cloud, hand, 0.02, &mut ChaCha8Rng::seed_from_u64(9));
        let b = observe(&cloud, hand, 0.02, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 14);
    }

    #[test]
    fn nearest_distance_cases() {
        let cloud = ObservedCloud::from_points(vec![Vec3::new(1.0, 0.0, 0.0)]);
        assert_eq!(nearest_key_point_distance(Vec3::new(1.0, 0.0, 0.0), &cloud).unwrap(), 0.0);
        assert!((nearest_key_point_distance(Vec3::new(1.0, 1.0, 0.0), &cloud).unwrap() - 1.0).abs() < 1e-15);
        let empty = ObservedCloud::from_points(vec![]);
        assert!(nearest_key_point_distance(Vec3::zeros(), &empty).is_err());
    }

    #[test]
    fn unit_square_containment() {
        let sq = unit_square();
        assert!(sq.contains(Vec2::new(0.5, 0.5)));
        assert!(!sq.contains(Vec2::new(2.0, 0.0)));
        assert!(sq.contains(Vec2::new(1.0, 0.5)));
        assert!(sq.contains(Vec2::new(1.0 + 5e-10, 0.5)));
        assert!(!sq.contains(Vec2::new(1.0 + 1e-8, 0.5)));
        assert!((sq.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let hull = convex_hull(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)]);
        assert!(hull.degenerate);
        assert!(!hull.contains(Vec2::new(1.0, 1.0)));
        assert_eq!(hull.area(), 0.0);
    }

    #[test]
    fn hull_drops_collinear_boundary_points() {
        let hull = convex_hull(&[
            Vec2::new(0.0, 0.0),
            Vec2::new(0.5, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.4, 0.6),
        ]);
        assert_eq!(hull.vertices.len(), 4);
        assert!(hull.area() > 0.0);
    }
}
