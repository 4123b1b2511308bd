//! Shared fixtures for the integration suites: an independent
//! Möller–Trumbore ray caster, random mesh generation and small meshes
//! with known geometry.

// each test target compiles its own copy; not all use every fixture
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use meshtex::mesh::{TriangleMesh, V3};
use meshtex::render::Camera;

pub fn cube_path() -> PathBuf {
    PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/assets/cube.obj"
    ))
}

/// Möller–Trumbore intersection, written independently of the renderer's
/// Gram-system route. Returns the ray parameter t (p = eye + t*dir).
pub fn moller_trumbore(eye: V3, dir: V3, a: V3, b: V3, c: V3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-30 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = eye - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t <= 1e-9 {
        return None;
    }
    Some(t)
}

/// Brute-force reference rasterization: every pixel ray against every
/// triangle, nearest hit wins. Returns (triangle id, depth) per pixel.
pub fn raycast_reference(mesh: &TriangleMesh, cam: &Camera) -> Vec<Option<(usize, f64)>> {
    let res = cam.resolution;
    let mut out = vec![None; res * res];
    for y in 0..res {
        for x in 0..res {
            let dir = cam.pixel_ray(x, y);
            let mut best: Option<(usize, f64)> = None;
            for (i, tri) in mesh.triangles.iter().enumerate() {
                if let Some(t) = moller_trumbore(
                    cam.eye,
                    dir,
                    mesh.positions[tri[0]],
                    mesh.positions[tri[1]],
                    mesh.positions[tri[2]],
                ) {
                    if best.map_or(true, |(_, bt)| t < bt) {
                        best = Some((i, t));
                    }
                }
            }
            out[y * res + x] = best;
        }
    }
    out
}

/// Random triangle soup inside [-1, 1]^3 with up to `max_tris` faces.
pub fn random_mesh(rng: &mut ChaCha8Rng, max_tris: usize) -> TriangleMesh {
    let n = rng.gen_range(1..=max_tris);
    let mut positions = Vec::with_capacity(n * 3);
    let mut triangles = Vec::with_capacity(n);
    for i in 0..n {
        for _ in 0..3 {
            positions.push(V3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
        }
        triangles.push([i * 3, i * 3 + 1, i * 3 + 2]);
    }
    TriangleMesh {
        positions,
        triangles,
        uvs: None,
        uv_triangles: None,
    }
}

/// Two parallel quads facing +X viewers: one nearer plane offset up, one
/// farther plane offset down, laterally separated so narrow-azimuth
/// cameras see both at distinct depths.
pub fn two_plane_mesh() -> TriangleMesh {
    let quad = |x: f64, y0: f64, y1: f64| -> Vec<V3> {
        vec![
            V3::new(x, y0, -0.7),
            V3::new(x, y0, 0.7),
            V3::new(x, y1, 0.7),
            V3::new(x, y1, -0.7),
        ]
    };
    let mut positions = quad(0.3, 0.05, 0.7);
    positions.extend(quad(-0.3, -0.7, -0.05));
    TriangleMesh {
        positions,
        triangles: vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]],
        uvs: None,
        uv_triangles: None,
    }
}
