//! Points, rigid transforms between the camera (C), laser (L), and
//! robot-base (R) frames, and pinhole deprojection.
//!
//! Transforms follow the row-vector convention: a homogeneous point
//! `[x y z 1]` is multiplied on the left of the 4x4 matrix, so chaining
//! reads left to right (`p * a * b` applies `a` first).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// The three coordinate frames of the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameId {
    #[serde(rename = "C")]
    Camera,
    #[serde(rename = "L")]
    Laser,
    #[serde(rename = "R")]
    RobotBase,
}

/// A rigid transform from `source` to `target`, stored as a 4x4
/// row-major matrix applied to row vectors (`p_target = p_source * m`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub source: FrameId,
    pub target: FrameId,
    pub matrix: [[f64; 4]; 4],
}

fn mat_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

impl RigidTransform {
    pub fn identity(source: FrameId, target: FrameId) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        RigidTransform { source, target, matrix: m }
    }

    /// Rotation by `yaw` about +z followed by translation, row-vector layout:
    /// the translation lives in the last row.
    pub fn planar(source: FrameId, target: FrameId, tx: f64, ty: f64, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        RigidTransform {
            source,
            target,
            matrix: [
                [c, s, 0.0, 0.0],
                [-s, c, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [tx, ty, 0.0, 1.0],
            ],
        }
    }

    pub fn translation(source: FrameId, target: FrameId, tx: f64, ty: f64, tz: f64) -> Self {
        let mut t = Self::identity(source, target);
        t.matrix[3][0] = tx;
        t.matrix[3][1] = ty;
        t.matrix[3][2] = tz;
        t
    }

    /// Checks the rotation block is orthonormal with determinant +1 and the
    /// last column is [0 0 0 1]^T.
    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        for i in 0..3 {
            if m[i][3].abs() > ORTHO_TOL {
                return Err(Error::InvalidArgument(format!(
                    "last column entry [{i}][3] = {} is not 0",
                    m[i][3]
                )));
            }
        }
        if (m[3][3] - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument("matrix[3][3] must be 1".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += m[i][k] * m[j][k];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ORTHO_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "rotation block not orthonormal: row {i} . row {j} = {dot}"
                    )));
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        Ok(())
    }
}

/// Applies `m` to `p` as the homogeneous row-vector product `[p 1] * m`.
pub fn transform_point(p: &Point3, m: &RigidTransform) -> Result<Point3> {
    if !p.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite point {p:?}")));
    }
    let v = [p.x, p.y, p.z, 1.0];
    let mut out = [0.0; 4];
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in 0..4 {
            s += v[k] * m.matrix[k][j];
        }
        *o = s;
    }
    let w = out[3];
    Ok(Point3::new(out[0] / w, out[1] / w, out[2] / w))
}

/// Transform applying `a` then `b`; requires `a.target == b.source`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> Result<RigidTransform> {
    if a.target != b.source {
        return Err(Error::FrameMismatch {
            expected: a.target,
            got: b.source,
        });
    }
    Ok(RigidTransform {
        source: a.source,
        target: b.target,
        // row-vector convention: p*(a*b) applies a first
        matrix: mat_mul(&a.matrix, &b.matrix),
    })
}

/// Inverse transform, exploiting rigidity: R^-1 = R^T, t^-1 = -t R^T.
pub fn invert(m: &RigidTransform) -> RigidTransform {
    let r = &m.matrix;
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r[j][i];
        }
    }
    for j in 0..3 {
        let mut s = 0.0;
        for k in 0..3 {
            s += r[3][k] * out[k][j];
        }
        out[3][j] = -s;
    }
    out[3][3] = 1.0;
    RigidTransform {
        source: m.target,
        target: m.source,
        matrix: out,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::InvalidArgument("principal point outside image".into()));
        }
        Ok(())
    }
}

/// A labeled 3D keypoint in a named frame (camera branch input).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Keypoint3D {
    pub point: Point3,
    pub frame: FrameId,
    pub timestamp: f64,
    pub label: String,
    pub confidence: f64,
}

/// Back-projects an image pixel with metric depth into the camera frame.
pub fn deproject_pixel(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if depth <= 0.0 || !depth.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid depth {depth}")));
    }
    if u < 0.0 || u >= k.width as f64 || v < 0.0 || v >= k.height as f64 {
        return Err(Error::InvalidArgument(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            k.width, k.height
        )));
    }
    Ok(Point3::new(
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Forward pinhole projection of a camera-frame point; inverse of
/// [`deproject_pixel`] for positive depth.
pub fn project_point(p: &Point3, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if p.z <= 0.0 {
        return Err(Error::InvalidArgument(format!("point behind camera, z = {}", p.z)));
    }
    Ok((p.x * k.fx / p.z + k.cx, p.y * k.fy / p.z + k.cy))
}

/// On-disk transform config: `{"source": "L", "target": "R", "matrix": [[..4]x4]}`.
pub fn transforms_from_json(text: &str) -> Result<Vec<RigidTransform>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(RigidTransform),
        Many(Vec<RigidTransform>),
    }
    let parsed: OneOrMany = serde_json::from_str(text)
        .map_err(|e| Error::Format { offset: 0, message: format!("transform config: {e}") })?;
    let list = match parsed {
        OneOrMany::One(t) => vec![t],
        OneOrMany::Many(v) => v,
    };
    for t in &list {
        t.validate()?;
    }
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn l2r_fixture() -> RigidTransform {
        // 30 degrees about z plus a translation, hand-checkable
        RigidTransform::planar(FrameId::Laser, FrameId::RobotBase, -0.2, 0.1, 30f64.to_radians())
    }

    #[test]
    fn identity_transform_is_noop() {
        let p = Point3::new(1.0, 2.0, 3.0);
        let m = RigidTransform::identity(FrameId::Laser, FrameId::RobotBase);
        let q = transform_point(&p, &m).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn pure_translation() {
        let p = Point3::new(1.0, 0.0, 0.0);
        let m = RigidTransform::translation(FrameId::Laser, FrameId::RobotBase, 0.5, 0.0, 0.0);
        let q = transform_point(&p, &m).unwrap();
        assert_abs_diff_eq!(q.x, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transform_matches_hand_multiplied_product() {
        // [0.40 -0.12 0 1] * M for the planar fixture, multiplied by hand:
        // x' = 0.40*cos30 - (-0.12)*(-sin30)... laid out explicitly below.
        let p = Point3::new(0.40, -0.12, 0.0);
        let m = l2r_fixture();
        let c = 30f64.to_radians().cos();
        let s = 30f64.to_radians().sin();
        let ex = 0.40 * c + (-0.12) * (-s) + (-0.2);
        let ey = 0.40 * s + (-0.12) * c + 0.1;
        let q = transform_point(&p, &m).unwrap();
        assert_abs_diff_eq!(q.x, ex, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, ey, epsilon = 1e-12);
        assert_abs_diff_eq!(q.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_point_rejected() {
        let m = l2r_fixture();
        assert!(transform_point(&Point3::new(f64::NAN, 0.0, 0.0), &m).is_err());
    }

    #[test]
    fn compose_identity_law() {
        let i = RigidTransform::identity(FrameId::Laser, FrameId::Laser);
        let c = compose(&i, &i).unwrap();
        assert_eq!(c.matrix, i.matrix);
    }

    #[test]
    fn compose_frame_mismatch() {
        let a = RigidTransform::identity(FrameId::Laser, FrameId::RobotBase);
        let b = RigidTransform::identity(FrameId::Camera, FrameId::RobotBase);
        assert!(matches!(compose(&a, &b), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = l2r_fixture();
        let c = compose(&t, &invert(&t)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(c.matrix[i][j], expect, epsilon = 1e-9);
            }
        }
        assert_eq!(c.source, FrameId::Laser);
        assert_eq!(c.target, FrameId::Laser);
    }

    #[test]
    fn compose_equals_hand_product() {
        let a = l2r_fixture();
        let b = RigidTransform::planar(FrameId::RobotBase, FrameId::Camera, 0.3, -0.4, -1.1);
        let c = compose(&a, &b).unwrap();
        let hand = mat_mul(&a.matrix, &b.matrix);
        assert_eq!(c.matrix, hand);
        c.validate().unwrap();
    }

    #[test]
    fn invert_translation() {
        let t = RigidTransform::translation(FrameId::Laser, FrameId::RobotBase, 1.0, -2.0, 0.5);
        let inv = invert(&t);
        assert_abs_diff_eq!(inv.matrix[3][0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inv.matrix[3][1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inv.matrix[3][2], -0.5, epsilon = 1e-12);
        assert_eq!(inv.source, FrameId::RobotBase);
    }

    #[test]
    fn deproject_principal_point() {
        let k = CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        let p = deproject_pixel(320.0, 240.0, 2.0, &k).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn deproject_one_focal_length_off_axis() {
        let k = CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 320.0, width: 1024, height: 768 };
        let p = deproject_pixel(820.0, 320.0, 1.0, &k).unwrap();
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn deproject_rejects_bad_depth() {
        let k = CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        assert!(deproject_pixel(10.0, 10.0, 0.0, &k).is_err());
        assert!(deproject_pixel(10.0, 10.0, -1.0, &k).is_err());
    }

    #[test]
    fn transform_config_round_trip() {
        let t = l2r_fixture();
        let json = serde_json::to_string(&vec![t]).unwrap();
        let back = transforms_from_json(&json).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].matrix, t.matrix);
        assert_eq!(back[0].source, FrameId::Laser);
    }
}
