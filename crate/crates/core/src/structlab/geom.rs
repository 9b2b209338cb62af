//! Small fixed-size vector helpers (rows are lattice vectors).

pub type Vec3 = [f64; 3];
pub type Mat3 = [Vec3; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Reciprocal lattice vectors including the 2π factor, or `None` for a singular cell.
pub fn reciprocal(m: &Mat3) -> Option<Mat3> {
    let v = det(m);
    if v.abs() < 1e-12 || !v.is_finite() {
        return None;
    }
    let f = 2.0 * std::f64::consts::PI / v;
    Some([
        scale(cross(m[1], m[2]), f),
        scale(cross(m[2], m[0]), f),
        scale(cross(m[0], m[1]), f),
    ])
}

/// Fractional coordinates of an in-plane point with respect to the first two cell vectors.
pub fn in_plane_fractional(cell: &Mat3, xy: [f64; 2]) -> Option<[f64; 2]> {
    let (a, b) = (cell[0], cell[1]);
    let d = a[0] * b[1] - a[1] * b[0];
    if d.abs() < 1e-12 {
        return None;
    }
    Some([
        (xy[0] * b[1] - xy[1] * b[0]) / d,
        (a[0] * xy[1] - a[1] * xy[0]) / d,
    ])
}

/// Shortest in-plane distance between two points under the 2D periodicity of `cell`.
pub fn min_image_distance_2d(cell: &Mat3, p: [f64; 2], q: [f64; 2]) -> f64 {
    let Some(f) = in_plane_fractional(cell, [p[0] - q[0], p[1] - q[1]]) else {
        return f64::INFINITY;
    };
    let base = [f[0] - f[0].round(), f[1] - f[1].round()];
    let mut best = f64::INFINITY;
    for di in -1..=1 {
        for dj in -1..=1 {
            let s = [base[0] + di as f64, base[1] + dj as f64];
            let x = s[0] * cell[0][0] + s[1] * cell[1][0];
            let y = s[0] * cell[0][1] + s[1] * cell[1][1];
            best = best.min((x * x + y * y).sqrt());
        }
    }
    best
}

/// Rotate `v` by `degrees` about a Cartesian axis (right-handed).
pub fn rotate(v: Vec3, degrees: f64, axis: Axis) -> Vec3 {
    let (s, c) = degrees.to_radians().sin_cos();
    match axis {
        Axis::X => [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]],
        Axis::Y => [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]],
        Axis::Z => [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("rotation axis must be one of x, y, z (got {other:?})")),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}
