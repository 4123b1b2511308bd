//! Deterministic software rasterizer.
//!
//! Produces RGB, eye-space depth and the per-pixel hit records needed for
//! the analytic backward pass. Coverage is decided by intersecting the
//! pixel-center ray with each candidate triangle in world space, so the
//! stored barycentrics are perspective-correct by construction. Back
//! faces are not culled: the texture must cover every visible surface
//! regardless of winding.

use crate::field::{SparseGrad, TextureField};
use crate::img::{DepthMap, Img};
use crate::mesh::{TriangleMesh, V3};

pub const DEFAULT_BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

const NEAR_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Camera {
    pub eye: V3,
    pub forward: V3,
    pub right: V3,
    pub up: V3,
    pub vertical_fov_deg: f64,
    pub resolution: usize,
}

impl Camera {
    /// Unnormalized pixel-center ray direction with unit forward
    /// component, so the ray parameter t equals eye-space depth along
    /// forward.
    pub fn pixel_ray(&self, x: usize, y: usize) -> V3 {
        let tan = (self.vertical_fov_deg.to_radians() * 0.5).tan();
        let res = self.resolution as f64;
        let px = (2.0 * (x as f64 + 0.5) / res - 1.0) * tan;
        let py = (1.0 - 2.0 * (y as f64 + 0.5) / res) * tan;
        self.forward + self.right * px + self.up * py
    }
}

/// eye = distance * (cos e cos a, sin e, cos e sin a), looking at the
/// origin; up derived from world +Y with a +X fallback at the poles.
pub fn camera_from_spherical(
    elevation_deg: f64,
    azimuth_deg: f64,
    distance: f64,
    fov_deg: f64,
    resolution: usize,
) -> Camera {
    let e = elevation_deg.to_radians();
    let a = azimuth_deg.to_radians();
    let eye = V3::new(e.cos() * a.cos(), e.sin(), e.cos() * a.sin()) * distance;
    let forward = (-eye).normalize();
    let up_hint = if (elevation_deg.abs() - 90.0).abs() < 1e-9 {
        V3::new(1.0, 0.0, 0.0)
    } else {
        V3::new(0.0, 1.0, 0.0)
    };
    let right = forward.cross(&up_hint).normalize();
    let up = right.cross(&forward);
    Camera {
        eye,
        forward,
        right,
        up,
        vertical_fov_deg: fov_deg,
        resolution,
    }
}

/// Per-pixel rasterization record.
#[derive(Debug, Clone)]
pub struct GBuffer {
    pub res: usize,
    pub mask: Vec<bool>,
    /// Eye-space distance along forward; only meaningful where mask set.
    pub depth: Vec<f64>,
    pub surface_point: Vec<V3>,
    pub triangle_id: Vec<usize>,
    pub barycentric: Vec<[f64; 3]>,
}

impl GBuffer {
    fn new(res: usize) -> Self {
        GBuffer {
            res,
            mask: vec![false; res * res],
            depth: vec![f64::INFINITY; res * res],
            surface_point: vec![V3::zeros(); res * res],
            triangle_id: vec![usize::MAX; res * res],
            barycentric: vec![[0.0; 3]; res * res],
        }
    }

    pub fn hit_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Intersect a ray with one triangle; returns (t, barycentrics).
pub(crate) fn intersect_ray_triangle(
    eye: V3,
    dir: V3,
    a: V3,
    b: V3,
    c: V3,
) -> Option<(f64, [f64; 3])> {
    let e1 = b - a;
    let e2 = c - a;
    let n = e1.cross(&e2);
    let denom = dir.dot(&n);
    if denom.abs() < 1e-30 {
        return None;
    }
    let t = (a - eye).dot(&n) / denom;
    if t <= NEAR_EPS {
        return None;
    }
    let v = eye + dir * t - a;
    // barycentrics from the 2x2 Gram system of the triangle edges
    let d11 = e1.dot(&e1);
    let d12 = e1.dot(&e2);
    let d22 = e2.dot(&e2);
    let r1 = e1.dot(&v);
    let r2 = e2.dot(&v);
    let det = d11 * d22 - d12 * d12;
    if det.abs() < 1e-30 {
        return None;
    }
    let b1 = (d22 * r1 - d12 * r2) / det;
    let b2 = (d11 * r2 - d12 * r1) / det;
    let b0 = 1.0 - b1 - b2;
    if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
        return None;
    }
    Some((t, [b0, b1, b2]))
}

pub fn rasterize(mesh: &TriangleMesh, camera: &Camera) -> GBuffer {
    let res = camera.resolution;
    let mut gb = GBuffer::new(res);
    let tan = (camera.vertical_fov_deg.to_radians() * 0.5).tan();

    for (tri_id, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.positions[tri[0]];
        let b = mesh.positions[tri[1]];
        let c = mesh.positions[tri[2]];

        // conservative screen bounding box; any vertex at or behind the
        // eye plane falls back to the full frame
        let mut x_min = res as isize;
        let mut x_max = -1isize;
        let mut y_min = res as isize;
        let mut y_max = -1isize;
        let mut behind = false;
        for &v in &[a, b, c] {
            let rel = v - camera.eye;
            let z = rel.dot(&camera.forward);
            if z <= NEAR_EPS {
                behind = true;
                break;
            }
            let sx = rel.dot(&camera.right) / (z * tan);
            let sy = rel.dot(&camera.up) / (z * tan);
            let px = ((sx + 1.0) * 0.5 * res as f64).floor() as isize;
            let py = ((1.0 - sy) * 0.5 * res as f64).floor() as isize;
            x_min = x_min.min(px - 1);
            x_max = x_max.max(px + 1);
            y_min = y_min.min(py - 1);
            y_max = y_max.max(py + 1);
        }
        if behind {
            x_min = 0;
            x_max = res as isize - 1;
            y_min = 0;
            y_max = res as isize - 1;
        }
        let x0 = x_min.clamp(0, res as isize - 1) as usize;
        let x1 = x_max.clamp(-1, res as isize - 1);
        let y0 = y_min.clamp(0, res as isize - 1) as usize;
        let y1 = y_max.clamp(-1, res as isize - 1);
        if x1 < x0 as isize || y1 < y0 as isize {
            continue;
        }

        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let dir = camera.pixel_ray(x, y);
                if let Some((t, bary)) = intersect_ray_triangle(camera.eye, dir, a, b, c) {
                    let idx = y * res + x;
                    if t < gb.depth[idx] {
                        gb.depth[idx] = t;
                        gb.mask[idx] = true;
                        gb.triangle_id[idx] = tri_id;
                        gb.barycentric[idx] = bary;
                        gb.surface_point[idx] = a * bary[0] + b * bary[1] + c * bary[2];
                    }
                }
            }
        }
    }
    gb
}

pub fn shade(gbuffer: &GBuffer, field: &TextureField, background: [f64; 3]) -> Img {
    let res = gbuffer.res;
    let mut im = Img::new(res);
    for p in 0..res * res {
        let rgb = if gbuffer.mask[p] {
            field.eval_color(gbuffer.surface_point[p])
        } else {
            background
        };
        im.data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
    }
    im
}

/// Sum of per-pixel color gradients over hit pixels, in fixed row-major
/// order so the reduction is bit-reproducible. Visibility and
/// barycentrics are treated as constants (the mesh is fixed).
pub fn shade_backward(gbuffer: &GBuffer, field: &TextureField, upstream: &Img) -> Vec<f64> {
    assert_eq!(gbuffer.res, upstream.res, "upstream resolution mismatch");
    let mut grad = vec![0.0f64; field.params.len()];
    for p in 0..gbuffer.res * gbuffer.res {
        if !gbuffer.mask[p] {
            continue;
        }
        let up = [
            upstream.data[p * 3],
            upstream.data[p * 3 + 1],
            upstream.data[p * 3 + 2],
        ];
        if up == [0.0, 0.0, 0.0] {
            continue;
        }
        let sparse: SparseGrad = field.eval_color_backward(gbuffer.surface_point[p], up);
        sparse.accumulate_into(&mut grad);
    }
    grad
}

/// Min-max normalize hit depths so nearest maps to +1 and farthest to
/// -1; background pixels are -1; a constant-depth frame maps to +1.
pub fn normalize_depth(gbuffer: &GBuffer) -> DepthMap {
    let res = gbuffer.res;
    let mut dm = DepthMap::new(res);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for p in 0..res * res {
        if gbuffer.mask[p] {
            min = min.min(gbuffer.depth[p]);
            max = max.max(gbuffer.depth[p]);
        }
    }
    if !min.is_finite() {
        return dm; // empty: all -1
    }
    for p in 0..res * res {
        if gbuffer.mask[p] {
            dm.data[p] = if max > min {
                1.0 - 2.0 * (gbuffer.depth[p] - min) / (max - min)
            } else {
                1.0
            };
        }
    }
    dm
}
