//! Pinhole camera with ground-based extrinsics and viewing-frustum tests.
//!
//! Conventions: the world frame is z-up; the camera sits at height `h` above
//! the origin, yaw and roll are zero, and the optical axis is pitched up from
//! horizontal (world +y) by the inclination angle. The camera frame is
//! right-handed with x to the right, y down (image v grows downward) and z
//! along the optical axis. Projection is the undistorted pinhole map
//! `u = f·X/Z + p_x`, `v = f·Y/Z + p_y`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("focal length must be positive, got {0}")]
    NonPositiveFocal(f64),
    #[error("principal point ({0}, {1}) outside the image")]
    PrincipalOutOfImage(f64, f64),
    #[error("image size must be positive, got {0} x {1}")]
    NonPositiveImage(f64, f64),
    #[error("camera height must be positive, got {0}")]
    NonPositiveHeight(f64),
    #[error("point is behind the camera (depth {0:.3e} m)")]
    BehindCamera(f64),
    #[error("invalid frustum range: near {near} must satisfy 0 < near < far = {far}")]
    InvalidRange { near: f64, far: f64 },
}

/// Pinhole intrinsics, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(
        focal_px: f64,
        principal_x: f64,
        principal_y: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, CameraError> {
        if !focal_px.is_finite() || focal_px <= 0.0 {
            return Err(CameraError::NonPositiveFocal(focal_px));
        }
        if !(width > 0.0 && height > 0.0) {
            return Err(CameraError::NonPositiveImage(width, height));
        }
        if !(0.0..width).contains(&principal_x) || !(0.0..height).contains(&principal_y) {
            return Err(CameraError::PrincipalOutOfImage(principal_x, principal_y));
        }
        Ok(Self {
            focal_px,
            principal_x,
            principal_y,
            width,
            height,
        })
    }
}

impl Default for Intrinsics {
    /// The default synthetic camera: a 1176 × 640 image with a 1240 px focal
    /// length and principal point (579, 212).
    fn default() -> Self {
        Self {
            focal_px: 1240.0,
            principal_x: 579.0,
            principal_y: 212.0,
            width: 1176.0,
            height: 640.0,
        }
    }
}

/// Camera pose: height above ground and upward pitch of the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub height_m: f64,
    pub inclination_rad: f64,
}

impl Extrinsics {
    pub fn new(height_m: f64, inclination_rad: f64) -> Result<Self, CameraError> {
        if !height_m.is_finite() || height_m <= 0.0 {
            return Err(CameraError::NonPositiveHeight(height_m));
        }
        Ok(Self {
            height_m,
            inclination_rad,
        })
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.height_m)
    }

    /// Rotation mapping world vectors into the camera frame (rows are the
    /// camera axes expressed in world coordinates).
    pub fn world_to_camera_rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.inclination_rad.sin_cos();
        Matrix3::from_rows(&[
            Vector3::new(1.0, 0.0, 0.0).transpose(), // image right
            Vector3::new(0.0, s, -c).transpose(),    // image down
            Vector3::new(0.0, c, s).transpose(),     // optical axis
        ])
    }
}

/// Intrinsics plus extrinsics: everything needed to map world points to
/// pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

impl CameraRig {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics) -> Self {
        Self {
            intrinsics,
            extrinsics,
        }
    }

    /// World point expressed in camera coordinates (x right, y down, z depth).
    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsics.world_to_camera_rotation()
            * (point - self.extrinsics.camera_center())
    }

    /// Project a world point to pixel coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<(f64, f64), CameraError> {
        let pc = self.world_to_camera(point);
        if pc.z <= 1e-9 {
            return Err(CameraError::BehindCamera(pc.z));
        }
        let k = &self.intrinsics;
        Ok((
            k.focal_px * pc.x / pc.z + k.principal_x,
            k.focal_px * pc.y / pc.z + k.principal_y,
        ))
    }

    /// Invert the projection at a known camera-frame depth.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let pc = Vector3::new(
            (u - k.principal_x) * depth / k.focal_px,
            (v - k.principal_y) * depth / k.focal_px,
            depth,
        );
        self.extrinsics.world_to_camera_rotation().transpose() * pc
            + self.extrinsics.camera_center()
    }

    /// Viewing frustum between perpendicular depths `d_near` and `d_far`.
    pub fn frustum(&self, d_near: f64, d_far: f64) -> Result<Frustum, CameraError> {
        if !(d_near > 0.0 && d_near < d_far && d_far.is_finite()) {
            return Err(CameraError::InvalidRange {
                near: d_near,
                far: d_far,
            });
        }
        let rot_t = self.extrinsics.world_to_camera_rotation().transpose();
        let center = self.extrinsics.camera_center();
        let k = &self.intrinsics;

        // Plane normals in camera coordinates, pointing out of the frustum,
        // with the inside condition n·p_c <= o.
        let camera_planes = [
            (Vector3::new(0.0, 0.0, -1.0), -d_near),
            (Vector3::new(0.0, 0.0, 1.0), d_far),
            (Vector3::new(-k.focal_px, 0.0, -k.principal_x), 0.0),
            (Vector3::new(k.focal_px, 0.0, k.principal_x - k.width), 0.0),
            (Vector3::new(0.0, -k.focal_px, -k.principal_y), 0.0),
            (Vector3::new(0.0, k.focal_px, k.principal_y - k.height), 0.0),
        ];
        let planes = camera_planes.map(|(n_c, o_c)| {
            let scale = n_c.norm();
            let normal = rot_t * (n_c / scale);
            let offset = o_c / scale + normal.dot(&center);
            Plane { normal, offset }
        });

        let mut corners = [Vector3::zeros(); 8];
        let mut idx = 0;
        for depth in [d_near, d_far] {
            for v in [0.0, k.height] {
                for u in [0.0, k.width] {
                    corners[idx] = self.backproject(u, v, depth);
                    idx += 1;
                }
            }
        }
        Ok(Frustum {
            planes,
            d_near,
            d_far,
            corners,
        })
    }
}

/// Half-space boundary; a point is inside when `normal · p <= offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, point: &Vector3<f64>) -> f64 {
        self.normal.dot(point) - self.offset
    }
}

/// Truncated viewing pyramid bounded by near, far and four side planes
/// (outward unit normals, world frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    planes: [Plane; 6],
    pub d_near: f64,
    pub d_far: f64,
    corners: [Vector3<f64>; 8],
}

impl Frustum {
    pub fn planes(&self) -> &[Plane; 6] {
        &self.planes
    }

    /// Corner points: near plane first, each quad ordered row-major over
    /// (v, u) image extremes.
    pub fn corners(&self) -> &[Vector3<f64>; 8] {
        &self.corners
    }

    /// Closed membership test: faces count as inside (with a 1e-9 slack so
    /// points constructed exactly on a face do not flip on rounding).
    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        self.planes
            .iter()
            .all(|p| p.signed_distance(point) <= 1e-9)
    }

    /// Axis-aligned bounding box (min corner, max corner).
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = self.corners[0];
        let mut hi = self.corners[0];
        for c in &self.corners[1..] {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        (lo, hi)
    }
}
