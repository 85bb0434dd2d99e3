use crate::math::{self, cross3, dot3, norm3, scale3};

/// Rotation quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let (s, c) = (math::sin(angle / 2.0), math::cos(angle / 2.0));
        Self::new(c, axis[0] * s, axis[1] * s, axis[2] * s)
    }

    pub fn norm(self) -> f64 {
        math::sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Unit quaternion in the `w >= 0` hemisphere; `None` for a (near) zero input.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return None;
        }
        Some(Self::new(self.w / n, self.x / n, self.y / n, self.z / n).canonical())
    }

    /// Flips sign so that `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }

    pub fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// `q v q*` for a unit quaternion.
    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        let u = [self.x, self.y, self.z];
        let t = scale3(cross3(u, v), 2.0);
        let c = cross3(u, t);
        [
            v[0] + self.w * t[0] + c[0],
            v[1] + self.w * t[1] + c[1],
            v[2] + self.w * t[2] + c[2],
        ]
    }

    /// Minimal-angle rotation taking unit vector `from` onto unit vector `to`.
    pub fn between(from: [f64; 3], to: [f64; 3]) -> Quat {
        let d = dot3(from, to);
        if d < -1.0 + 1e-12 {
            // antiparallel: half turn about any axis orthogonal to `from`
            let pick = if from[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let axis = cross3(from, pick);
            let n = norm3(axis);
            return Quat::new(0.0, axis[0] / n, axis[1] / n, axis[2] / n);
        }
        let c = cross3(from, to);
        Quat::new(1.0 + d, c[0], c[1], c[2])
            .normalized()
            .unwrap_or(Quat::IDENTITY)
    }

    /// Quaternion of a proper rotation matrix given as rows.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Quat {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = math::sqrt(trace + 1.0) * 2.0;
            Quat::new(0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = math::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2.0;
            Quat::new((m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = math::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2.0;
            Quat::new((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = math::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2.0;
            Quat::new((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s)
        };
        q.normalized().unwrap_or(Quat::IDENTITY)
    }

    /// Signed rotation angle about the z axis, assuming a pure z rotation.
    pub fn angle_about_z(self) -> f64 {
        2.0 * math::atan2(self.z, self.w)
    }
}
