//! Shared test support: an independent 3x3 rotation-matrix oracle for
//! checking quaternion arithmetic, plus seeded random rotation sampling.
//! Deliberately avoids the quaternion composition paths under test.

use manipfail::geometry::Orientation;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub type Mat3 = [[f64; 3]; 3];

/// Direction-cosine matrix of a unit quaternion (scalar-first).
pub fn quat_to_matrix(q: &Orientation) -> Mat3 {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

/// Rotation angle of `a * b^T`, the geodesic distance between two rotation
/// matrices.
#[allow(dead_code)]
pub fn mat_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    // trace(a * b^T)
    let mut trace = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            trace += a[i][j] * b[i][j];
        }
    }
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Seeded random rotation; rejection-sampled from the 4-cube then
/// normalized by the constructor.
pub fn random_orientation(rng: &mut ChaCha12Rng) -> Orientation {
    loop {
        let w: f64 = rng.random_range(-1.0..=1.0);
        let x: f64 = rng.random_range(-1.0..=1.0);
        let y: f64 = rng.random_range(-1.0..=1.0);
        let z: f64 = rng.random_range(-1.0..=1.0);
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if (0.1..=1.0).contains(&n) {
            return Orientation::new(w, x, y, z).expect("valid quaternion sample");
        }
    }
}
