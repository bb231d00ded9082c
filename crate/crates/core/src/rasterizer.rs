//! Depth rendering with a pinhole camera, ROI crops and back-projection.
//!
//! Pixel `(u, v)` has its center at integer coordinates; rows run top to
//! bottom. Pixels that no surface covers hold `+∞`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloudprep::PointCloud;
use crate::geometry::{ObjectModel, Pose};
use crate::{Error, Result};

pub const DPR_MAGIC: &[u8; 4] = b"DPR1";

/// Margin on the ROI half extent, in units of the object radius.
pub const ROI_RADIUS_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 160.0,
            fy: 160.0,
            cx: 79.5,
            cy: 59.5,
            width: 160,
            height: 120,
            near: 0.5,
            far: 10.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidCamera(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad("need 0 < near < far");
        }
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        Ok(())
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl DepthImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![f32::INFINITY; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.pixels[v * self.width + u]
    }

    pub fn finite_count(&self) -> usize {
        self.pixels.iter().filter(|d| d.is_finite()).count()
    }

    pub fn to_dpr_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.pixels.len());
        out.extend_from_slice(DPR_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for d in &self.pixels {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    pub fn from_dpr_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != DPR_MAGIC {
            return Err(Error::Format("missing DPR1 magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (width, height) = (word(4), word(8));
        let payload = &bytes[12..];
        if payload.len() != 4 * width * height {
            return Err(Error::Format(format!(
                "DPR1 payload has {} bytes, expected {} for {width}x{height}",
                payload.len(),
                4 * width * height
            )));
        }
        let pixels = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn write_dpr(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_dpr_bytes())?;
        Ok(())
    }

    pub fn read_dpr(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_dpr_bytes(&bytes)
    }

    /// 16-bit binary PGM; `[near, far]` maps linearly onto `[0, 65535]` and
    /// no-hit pixels are white.
    pub fn to_pgm16(&self, near: f64, far: f64) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for &d in &self.pixels {
            let level = if d.is_finite() {
                (((d as f64 - near) / (far - near)).clamp(0.0, 1.0) * 65535.0).round() as u16
            } else {
                u16::MAX
            };
            out.extend_from_slice(&level.to_be_bytes());
        }
        out
    }
}

/// Square image region around a projected hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiRect {
    pub center_u: f64,
    pub center_v: f64,
    pub half_extent: f64,
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Z-buffer rendering of every instance of `model` placed at `poses`.
///
/// Triangles with any vertex at or in front of the near plane are dropped
/// rather than clipped. Depth is interpolated perspective-correctly.
pub fn render_depth(model: &ObjectModel, poses: &[Pose], cam: &CameraIntrinsics) -> DepthImage {
    let (w, h) = (cam.width, cam.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    for pose in poses {
        let cam_vertices: Vec<Vector3<f64>> = model.mesh.vertices.iter().map(|v| pose.transform_point(v)).collect();
        for tri in &model.mesh.triangles {
            let p = [cam_vertices[tri[0]], cam_vertices[tri[1]], cam_vertices[tri[2]]];
            if p.iter().any(|q| q.z <= cam.near) {
                continue;
            }
            let s = [cam.project(&p[0]), cam.project(&p[1]), cam.project(&p[2])];
            let area = edge(s[0], s[1], s[2]);
            if area.abs() < 1e-12 {
                continue;
            }
            let umin = s.iter().map(|q| q.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let umax = s.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
            let vmin = s.iter().map(|q| q.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
            let vmax = s.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
            if umin > umax || vmin > vmax {
                continue;
            }
            let inv_z = [1.0 / p[0].z, 1.0 / p[1].z, 1.0 / p[2].z];
            for v in vmin as usize..=vmax as usize {
                for u in umin as usize..=umax as usize {
                    let q = (u as f64, v as f64);
                    let b0 = edge(s[1], s[2], q) / area;
                    let b1 = edge(s[2], s[0], q) / area;
                    let b2 = edge(s[0], s[1], q) / area;
                    if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                        continue;
                    }
                    let z = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2]);
                    let slot = &mut zbuf[v * w + u];
                    if z >= cam.near && z <= cam.far && z < *slot {
                        *slot = z;
                    }
                }
            }
        }
    }
    DepthImage {
        width: w,
        height: h,
        pixels: zbuf.into_iter().map(|z| z as f32).collect(),
    }
}

/// ROI centered on the projected hypothesis origin, half extent covering
/// 1.2 object radii at the hypothesis depth.
pub fn roi_from_pose(p: &Pose, model: &ObjectModel, cam: &CameraIntrinsics) -> Result<RoiRect> {
    let t = p.translation;
    if t.z <= cam.near {
        return Err(Error::BehindCamera {
            tz: t.z,
            near: cam.near,
        });
    }
    let (center_u, center_v) = cam.project(&t);
    Ok(RoiRect {
        center_u,
        center_v,
        half_extent: cam.fx.max(cam.fy) * ROI_RADIUS_FACTOR * model.radius / t.z,
    })
}

/// Bilinear resample of a square ROI to `out_size × out_size`.
///
/// Out-of-image and no-hit pixels read as `far`; outputs within 1e-6 of
/// `far` become no-hit again.
pub fn crop_resize(img: &DepthImage, roi: &RoiRect, out_size: usize, far: f64) -> DepthImage {
    let fetch = |i: i64, j: i64| -> f64 {
        if i < 0 || j < 0 || i >= img.width as i64 || j >= img.height as i64 {
            return far;
        }
        let d = img.pixels[j as usize * img.width + i as usize];
        if d.is_finite() {
            d as f64
        } else {
            far
        }
    };
    let step = 2.0 * roi.half_extent / out_size as f64;
    let u0 = roi.center_u - roi.half_extent;
    let v0 = roi.center_v - roi.half_extent;
    let mut pixels = Vec::with_capacity(out_size * out_size);
    for j in 0..out_size {
        let y = v0 + (j as f64 + 0.5) * step;
        let (yi, fy) = (y.floor(), y - y.floor());
        for i in 0..out_size {
            let x = u0 + (i as f64 + 0.5) * step;
            let (xi, fx) = (x.floor(), x - x.floor());
            let (xi, yi_) = (xi as i64, yi as i64);
            let top = fetch(xi, yi_) * (1.0 - fx) + fetch(xi + 1, yi_) * fx;
            let bottom = fetch(xi, yi_ + 1) * (1.0 - fx) + fetch(xi + 1, yi_ + 1) * fx;
            let d = top * (1.0 - fy) + bottom * fy;
            pixels.push(if d >= far - 1e-6 { f32::INFINITY } else { d as f32 });
        }
    }
    DepthImage {
        width: out_size,
        height: out_size,
        pixels,
    }
}

/// Scene crop `D`, rendered hypothesis crop `D̃`, and the shared ROI.
pub fn make_depth_pair(
    model: &ObjectModel,
    theta_hat: &Pose,
    scene: &DepthImage,
    cam: &CameraIntrinsics,
    out_size: usize,
) -> Result<(DepthImage, DepthImage, RoiRect)> {
    let roi = roi_from_pose(theta_hat, model, cam)?;
    let rendered = render_depth(model, std::slice::from_ref(theta_hat), cam);
    let d_tilde = crop_resize(&rendered, &roi, out_size, cam.far);
    let d = crop_resize(scene, &roi, out_size, cam.far);
    Ok((d, d_tilde, roi))
}

pub fn backproject(img: &DepthImage, cam: &CameraIntrinsics) -> PointCloud {
    let mut points = Vec::with_capacity(img.finite_count());
    for v in 0..img.height {
        for u in 0..img.width {
            let d = img.get(u, v);
            if d.is_finite() {
                let d = d as f64;
                points.push(Vector3::new(
                    (u as f64 - cam.cx) * d / cam.fx,
                    (v as f64 - cam.cy) * d / cam.fy,
                    d,
                ));
            }
        }
    }
    PointCloud { points }
}

/// Maps depth to the network input range: `(d − t_z)/(1.2·radius)` clamped
/// to `[-1, 1]`, background at `+1`.
pub fn normalize_depth(img: &DepthImage, hypothesis_depth: f64, radius: f64) -> Vec<f32> {
    let scale = ROI_RADIUS_FACTOR * radius;
    img.pixels
        .iter()
        .map(|&d| {
            if d.is_finite() {
                ((d as f64 - hypothesis_depth) / scale).clamp(-1.0, 1.0) as f32
            } else {
                1.0
            }
        })
        .collect()
}
