//! Chief inspection model: a fixed lattice of surface points that the deputy
//! marks as inspected when they face it (and, optionally, the sun).

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::sun_vector;

pub const NUM_POINTS: usize = 99;
pub const CHIEF_RADIUS: f64 = 10.0;
pub const DEFAULT_CLUSTERS: usize = 6;
pub const DEFAULT_CLUSTER_SEED: u64 = 0x5eed;

const KMEANS_TOL: f64 = 1e-6;
const KMEANS_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionSphere {
    points: Vec<Vector3<f64>>,
    inspected: Vec<bool>,
    radius: f64,
    /// Half-angle of the visibility cone around the deputy direction.
    /// `π/2` is the plain hemisphere test.
    fov_half_angle: f64,
}

/// Fibonacci-lattice layout of [`NUM_POINTS`] points on a sphere of `radius`.
pub fn generate_points(radius: f64) -> InspectionSphere {
    InspectionSphere::new(radius)
}

impl InspectionSphere {
    pub fn new(radius: f64) -> Self {
        assert!(radius > 0.0 && radius.is_finite(), "sphere radius must be positive");
        let golden_angle = PI * (3.0 - 5f64.sqrt());
        let n = NUM_POINTS as f64;
        let points = (0..NUM_POINTS)
            .map(|i| {
                let z = 1.0 - (2 * i + 1) as f64 / n;
                let r = (1.0 - z * z).sqrt();
                let (s, c) = (golden_angle * i as f64).sin_cos();
                Vector3::new(r * c, r * s, z).normalize() * radius
            })
            .collect();
        Self {
            points,
            inspected: vec![false; NUM_POINTS],
            radius,
            fov_half_angle: FRAC_PI_2,
        }
    }

    pub fn with_fov_half_angle(mut self, half_angle: f64) -> Self {
        assert!(
            half_angle > 0.0 && half_angle <= FRAC_PI_2,
            "half-angle must be in (0, π/2]"
        );
        self.fov_half_angle = half_angle;
        self
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn inspected(&self) -> &[bool] {
        &self.inspected
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn inspected_count(&self) -> usize {
        self.inspected.iter().filter(|&&f| f).count()
    }

    pub fn all_inspected(&self) -> bool {
        self.inspected.iter().all(|&f| f)
    }

    pub fn reset(&mut self) {
        self.inspected.fill(false);
    }

    /// Whether point `i` faces the deputy and, if `illumination` is set, the sun.
    /// Both tests are strict half-space tests.
    pub fn is_observable(&self, i: usize, deputy_position: &Vector3<f64>, sun_angle: f64, illumination: bool) -> bool {
        let range = deputy_position.norm();
        if !(range > self.radius) {
            return false;
        }
        let dir = self.points[i] / self.radius;
        let cos_min = self.fov_half_angle.cos().max(0.0);
        if !(dir.dot(&(deputy_position / range)) > cos_min) {
            return false;
        }
        !illumination || dir.dot(&sun_vector(sun_angle)) > 0.0
    }

    /// Marks every observable point and returns how many were newly marked.
    pub fn update_inspected(&mut self, deputy_position: &Vector3<f64>, sun_angle: f64, illumination: bool) -> usize {
        let mut newly = 0;
        for i in 0..NUM_POINTS {
            if !self.inspected[i] && self.is_observable(i, deputy_position, sun_angle, illumination) {
                self.inspected[i] = true;
                newly += 1;
            }
        }
        newly
    }

    fn uninspected_points(&self) -> Vec<Vector3<f64>> {
        self.points
            .iter()
            .zip(&self.inspected)
            .filter(|(_, &done)| !done)
            .map(|(p, _)| *p)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Unit vector toward the selected centroid, or zero when nothing is left.
    pub direction: Vector3<f64>,
    pub cluster_size: usize,
    pub converged: bool,
}

impl ClusterResult {
    fn empty() -> Self {
        Self {
            direction: Vector3::zeros(),
            cluster_size: 0,
            converged: true,
        }
    }
}

/// Clusters the uninspected points with k-means and returns the direction of
/// the centroid nearest the deputy.
pub fn nearest_uninspected_cluster(
    sphere: &InspectionSphere,
    deputy_position: &Vector3<f64>,
    k: usize,
    seed: u64,
) -> ClusterResult {
    assert!(k >= 1, "k must be at least 1");
    let data = sphere.uninspected_points();
    if data.is_empty() {
        return ClusterResult::empty();
    }
    let fit = kmeans(&data, k.min(data.len()), seed);

    let (best, _) = fit
        .centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, (c - deputy_position).norm_squared()))
        .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });

    let members: Vec<&Vector3<f64>> = data
        .iter()
        .zip(&fit.labels)
        .filter(|(_, &l)| l == best)
        .map(|(p, _)| p)
        .collect();

    let centroid = fit.centroids[best];
    let direction = if centroid.norm() > 1e-9 {
        centroid.normalize()
    } else {
        // members straddle the chief symmetrically; aim at the member closest to the deputy
        members
            .iter()
            .min_by(|a, b| {
                (**a - deputy_position)
                    .norm_squared()
                    .total_cmp(&(**b - deputy_position).norm_squared())
            })
            .map(|p| p.normalize())
            .unwrap_or_else(|| data[0].normalize())
    };

    ClusterResult {
        direction,
        cluster_size: members.len(),
        converged: fit.converged,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct KMeansFit {
    pub centroids: Vec<Vector3<f64>>,
    pub labels: Vec<usize>,
    pub converged: bool,
}

fn nearest(centroids: &[Vector3<f64>], p: &Vector3<f64>) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, (c - p).norm_squared()))
        .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc })
}

/// Lloyd's algorithm with k-means++ seeding.
pub(crate) fn kmeans(data: &[Vector3<f64>], k: usize, seed: u64) -> KMeansFit {
    debug_assert!(k >= 1 && k <= data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Vec::with_capacity(k);
    centroids.push(data[rng.random_range(0..data.len())]);
    while centroids.len() < k {
        let weights: Vec<f64> = data.iter().map(|p| nearest(&centroids, p).1).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            // fewer distinct points than k; duplicate centroids are harmless
            centroids.push(data[rng.random_range(0..data.len())]);
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = data.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        centroids.push(data[pick]);
    }

    let mut labels = vec![0; data.len()];
    let mut converged = false;
    for _ in 0..KMEANS_MAX_ITER {
        for (label, p) in labels.iter_mut().zip(data) {
            *label = nearest(&centroids, p).0;
        }
        let mut sums = vec![Vector3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &l) in data.iter().zip(&labels) {
            sums[l] += p;
            counts[l] += 1;
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] > 0 {
                let c = sums[j] / counts[j] as f64;
                shift = shift.max((c - centroids[j]).norm());
                centroids[j] = c;
            }
        }
        if shift < KMEANS_TOL {
            converged = true;
            break;
        }
    }
    for (label, p) in labels.iter_mut().zip(data) {
        *label = nearest(&centroids, p).0;
    }

    KMeansFit {
        centroids,
        labels,
        converged,
    }
}
