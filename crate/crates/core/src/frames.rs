//! Node-wise orthonormal frames built from an atom and the centroid of its
//! neighbourhood, frame averaging, and tensorisation of invariant scalars
//! into equivariant vectors.
//!
//! For atom `x` with neighbourhood centroid `c`:
//! `e1 = (x − c)/‖x − c‖`, `e2 = (c × x)/‖c × x‖`, `e3 = e1 × e2`.
//! `e2` uses absolute positions, so inputs are expected in the zero-centroid
//! gauge. Under a rotation `R` every axis maps to `R·e_k`; under the point
//! reflection `x → −x`, `e1` and `e3` flip while `e2` is unchanged.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;

/// Below this norm a construction vector counts as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-8;
pub const DEFAULT_CUTOFF: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub e1: Vec3,
    pub e2: Vec3,
    pub e3: Vec3,
}

impl Default for Frame {
    fn default() -> Self {
        Self::identity()
    }
}

impl Frame {
    pub fn identity() -> Self {
        Self { e1: Vec3::x(), e2: Vec3::y(), e3: Vec3::z() }
    }

    /// Columns `[e1 e2 e3]`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.e1, self.e2, self.e3])
    }

    pub fn axes(&self) -> [Vec3; 3] {
        [self.e1, self.e2, self.e3]
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    /// `max |FᵀF − I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let m = self.matrix();
        (m.transpose() * m - Matrix3::identity()).abs().max()
    }

    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self { e1: r * self.e1, e2: r * self.e2, e3: r * self.e3 }
    }

    /// Coordinates of `v` in this frame (`F⁻¹ v = Fᵀ v`).
    pub fn project(&self, v: &Vec3) -> Vec3 {
        Vec3::new(self.e1.dot(v), self.e2.dot(v), self.e3.dot(v))
    }

    pub fn max_abs_diff(&self, other: &Frame) -> f64 {
        (self.matrix() - other.matrix()).abs().max()
    }
}

/// Frame of `x` relative to the centroid of `neighbors`.
///
/// Falls back to the canonical axes when either construction vector is
/// degenerate or there are no neighbours.
pub fn local_frame(x: &Vec3, neighbors: &[Vec3]) -> Frame {
    if neighbors.is_empty() {
        return Frame::identity();
    }
    let centroid = neighbors.iter().sum::<Vec3>() / neighbors.len() as f64;
    frame_from_centroid(x, &centroid)
}

pub fn frame_from_centroid(x: &Vec3, centroid: &Vec3) -> Frame {
    let radial = x - centroid;
    let normal = centroid.cross(x);
    if radial.norm() < DEGENERACY_EPS || normal.norm() < DEGENERACY_EPS {
        return Frame::identity();
    }
    let e1 = radial.normalize();
    let e2 = normal.normalize();
    Frame { e1, e2, e3: e1.cross(&e2) }
}

/// Neighbour indices of atom `i`: atoms within `cutoff`, or all other atoms
/// when none fall inside it.
pub fn neighborhood(positions: &[Vec3], i: usize, cutoff: f64) -> Vec<usize> {
    let inside: Vec<usize> = (0..positions.len())
        .filter(|&j| j != i && (positions[j] - positions[i]).norm() < cutoff)
        .collect();
    if inside.is_empty() {
        (0..positions.len()).filter(|&j| j != i).collect()
    } else {
        inside
    }
}

/// Smooth cutoff weight `½(cos(πr/r_c) + 1)` for `r < r_c`, else 0.
pub fn cutoff_weight(r: f64, cutoff: f64) -> f64 {
    if r < cutoff {
        0.5 * ((std::f64::consts::PI * r / cutoff).cos() + 1.0)
    } else {
        0.0
    }
}

/// Neighbourhood centre of atom `i`, weighted by [`cutoff_weight`]. When
/// nothing lies inside the cutoff, every other atom is used with the
/// radius widened to twice the farthest distance.
///
/// A plain mean over a neighbourhood that is the whole rest of a
/// zero-centred molecule equals `−x_i/(n−1)`, which is parallel to `x_i`
/// and makes `e2` undefined; the distance weights avoid that.
pub fn neighborhood_center(positions: &[Vec3], i: usize, cutoff: f64) -> Option<Vec3> {
    let weighted = |radius: f64| {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for (j, p) in positions.iter().enumerate() {
            if j != i {
                let w = cutoff_weight((p - positions[i]).norm(), radius);
                acc += p * w;
                total += w;
            }
        }
        (total > 0.0).then(|| acc / total)
    };
    weighted(cutoff).or_else(|| {
        let far = positions.iter().map(|p| (p - positions[i]).norm()).fold(0.0, f64::max);
        (far > 0.0).then(|| weighted(2.0 * far)).flatten()
    })
}

/// Local frame for every atom, from its weighted neighbourhood centre.
pub fn node_frames(positions: &[Vec3], cutoff: f64) -> Vec<Frame> {
    (0..positions.len())
        .map(|i| match neighborhood_center(positions, i, cutoff) {
            Some(c) => frame_from_centroid(&positions[i], &c),
            None => Frame::identity(),
        })
        .collect()
}

pub fn to_vec3(p: &[[f64; 3]]) -> Vec<Vec3> {
    p.iter().map(|a| Vec3::new(a[0], a[1], a[2])).collect()
}

/// Columnwise mean of `frames`, re-orthonormalised by Gram–Schmidt in
/// order e1, e2, e3. Degenerate directions are skipped and the basis is
/// completed deterministically; an all-degenerate input yields the identity.
pub fn global_frame(frames: &[Frame]) -> Frame {
    if frames.is_empty() {
        return Frame::identity();
    }
    let n = frames.len() as f64;
    let means = [
        frames.iter().map(|f| f.e1).sum::<Vec3>() / n,
        frames.iter().map(|f| f.e2).sum::<Vec3>() / n,
        frames.iter().map(|f| f.e3).sum::<Vec3>() / n,
    ];
    let mut basis: Vec<Vec3> = Vec::with_capacity(3);
    let push_gs = |basis: &mut Vec<Vec3>, v: &Vec3| {
        let mut u = *v;
        for b in basis.iter() {
            u -= b * b.dot(&u);
        }
        if u.norm() >= DEGENERACY_EPS {
            basis.push(u.normalize());
            true
        } else {
            false
        }
    };
    for m in &means {
        if basis.len() < 3 {
            push_gs(&mut basis, m);
        }
    }
    if basis.is_empty() {
        return Frame::identity();
    }
    // Complete with the canonical axis least aligned with what we have.
    if basis.len() == 1 {
        let b = basis[0];
        let axis = [Vec3::x(), Vec3::y(), Vec3::z()]
            .into_iter()
            .min_by(|a, c| a.dot(&b).abs().total_cmp(&c.dot(&b).abs()))
            .expect("three axes");
        push_gs(&mut basis, &axis);
    }
    if basis.len() == 2 {
        basis.push(basis[0].cross(&basis[1]));
    }
    let mut f = Frame { e1: basis[0], e2: basis[1], e3: basis[2] };
    if f.det() < 0.0 {
        f.e3 = -f.e3;
    }
    f
}

/// Uniformly random rotation (normalised Gaussian quaternion).
pub fn random_rotation(rng: &mut impl rand::Rng) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(
        crate::rng::normal(rng),
        crate::rng::normal(rng),
        crate::rng::normal(rng),
        crate::rng::normal(rng),
    );
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Applies a linear map to every point.
pub fn transform_points(points: &[[f64; 3]], m: &Matrix3<f64>) -> Vec<[f64; 3]> {
    points.iter().map(|p| (m * Vec3::from(*p)).into()).collect()
}

/// Applies a linear map to every row of an n×3 tensor.
pub fn transform_rows(t: &crate::autodiff::Tensor, m: &Matrix3<f64>) -> crate::autodiff::Tensor {
    let d = t
        .data()
        .chunks(3)
        .flat_map(|c| {
            let v = m * Vec3::new(c[0], c[1], c[2]);
            [v.x, v.y, v.z]
        })
        .collect();
    crate::autodiff::Tensor::new(t.shape().to_vec(), d).expect("n×3 rows")
}

/// `h1·e1 + h2·e2 + h3·e3`.
pub fn tensorize(h: [f64; 3], frame: &Frame) -> Vec3 {
    frame.e1 * h[0] + frame.e2 * h[1] + frame.e3 * h[2]
}
