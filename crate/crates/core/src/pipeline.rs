//! The SDS training loop: sample cameras, render RGB + depth, noise,
//! predict, pull the weighted residual back through the renderer, average
//! over the batch and update the field. Also texture baking, per-texel
//! view coverage and the gradient-variance probe.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{OracleConfig, RunConfig, SdsConfig};
use crate::error::{Error, Result};
use crate::field::{init_random, save_checkpoint, TextureField};
use crate::guidance::{
    add_noise, cfg_combine, make_schedule, GuidanceInput, GuidanceModel, NoiseSchedule, OracleSet,
    Target, ViewTargets, RENDER_CONDITION,
};
use crate::img::{DepthMap, Img};
use crate::mesh::{load_obj, normalize_mesh, TriangleMesh, V3};
use crate::optim::{adam_step, clip_global_norm, AdamState};
use crate::render::{
    camera_from_spherical, normalize_depth, rasterize, shade, shade_backward, Camera, GBuffer,
};

/// Resolved guidance: oracles plus loaded targets and the active
/// condition ids.
pub struct GuidanceSetup {
    pub oracles: OracleSet,
    pub targets: HashMap<String, Target>,
    pub condition: String,
    /// CFG base condition; the reserved "render" condition when absent.
    pub negative: Option<String>,
}

impl GuidanceSetup {
    pub fn from_config(cfg: &OracleConfig) -> Result<GuidanceSetup> {
        cfg.validate()?;
        let mut targets = HashMap::new();
        for (id, spec) in &cfg.targets {
            targets.insert(id.clone(), Target::load(spec)?);
        }
        let mut oracles = OracleSet::default();
        for (id, c) in &cfg.conditions {
            oracles.insert(id.clone(), c.clone());
        }
        Ok(GuidanceSetup {
            oracles,
            targets,
            condition: cfg.condition.clone(),
            negative: cfg.negative_condition.clone(),
        })
    }

    /// Resolve every needed target image for one view.
    fn view_targets(&self, gbuffer: &GBuffer, x0: &Img, background: [f64; 3]) -> Result<ViewTargets> {
        let mut vt = ViewTargets::default();
        vt.insert(RENDER_CONDITION, x0.clone());
        for id in self.oracles.required_targets() {
            let target = self
                .targets
                .get(id)
                .ok_or_else(|| Error::UnknownCondition(id.to_string()))?;
            vt.insert(id, target.resolve(gbuffer, background)?);
        }
        Ok(vt)
    }
}

/// Per-view random draws recorded for the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewDraw {
    pub elevation: f64,
    pub azimuth: f64,
    pub distance: f64,
    pub timestep: usize,
}

#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub step: usize,
    /// Mean over the batch of mean |w(t)(eps_hat - eps)|^2 over hit pixels.
    pub residual: f64,
    pub grad_norm: f64,
    pub draws: Vec<ViewDraw>,
    pub elapsed_ms: f64,
}

fn uniform_in(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

pub fn sample_camera(config: &SdsConfig, rng: &mut impl Rng) -> (Camera, [f64; 3]) {
    let elevation = uniform_in(rng, config.elevation_range);
    let azimuth = uniform_in(rng, config.azimuth_range);
    let distance = uniform_in(rng, config.camera_distance_range);
    (
        camera_from_spherical(elevation, azimuth, distance, config.fov_deg, config.resolution),
        [elevation, azimuth, distance],
    )
}

pub fn sample_cameras(config: &SdsConfig, rng: &mut impl Rng) -> Vec<Camera> {
    (0..config.batch_size)
        .map(|_| sample_camera(config, rng).0)
        .collect()
}

/// Integer timestep range [ceil(tmin N), floor(tmax N)] clamped to [1, N].
pub fn timestep_bounds(config: &SdsConfig, schedule: &NoiseSchedule) -> (usize, usize) {
    let n = schedule.steps;
    let lo = ((config.t_frac_range[0] * n as f64).ceil() as usize).max(1);
    let hi = ((config.t_frac_range[1] * n as f64).floor() as usize).min(n);
    (lo, hi.max(lo))
}

fn draw_timestep(config: &SdsConfig, schedule: &NoiseSchedule, rng: &mut impl Rng) -> usize {
    let (lo, hi) = timestep_bounds(config, schedule);
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Deterministically forked generator: same seed, distinct ChaCha stream
/// per (step, view), so parallel view order never changes results.
fn view_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct ViewPass {
    grad: Vec<f64>,
    residual: f64,
    draw: ViewDraw,
}

/// One view of one SDS step: render, noise, predict, CFG-combine, form
/// the weighted residual on hit pixels and pull it back to parameters.
/// The denoiser Jacobian is never used.
fn view_pass(
    field: &TextureField,
    mesh: &TriangleMesh,
    config: &SdsConfig,
    schedule: &NoiseSchedule,
    setup: &GuidanceSetup,
    rng: &mut ChaCha8Rng,
) -> Result<ViewPass> {
    let (camera, cam_draw) = sample_camera(config, rng);
    let gbuffer = rasterize(mesh, &camera);
    let x0 = shade(&gbuffer, field, config.background);
    let depth = normalize_depth(&gbuffer);

    let t = draw_timestep(config, schedule, rng);
    let mut eps = Img::new(config.resolution);
    for v in eps.data.iter_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    let x_t = add_noise(&x0, schedule, t, &eps);

    let targets = setup.view_targets(&gbuffer, &x0, config.background)?;
    let input = GuidanceInput {
        x_t: &x_t,
        t,
        schedule,
        depth: Some(&depth),
        targets: &targets,
    };
    let eps_cond = setup.oracles.predict_noise(&input, &setup.condition)?;
    let base_condition = setup.negative.as_deref().unwrap_or(RENDER_CONDITION);
    let eps_base = setup.oracles.predict_noise(&input, base_condition)?;
    let eps_hat = cfg_combine(&eps_cond, &eps_base, config.guidance_scale);

    let w = schedule.weight(t);
    let mut upstream = Img::new(config.resolution);
    let mut residual = 0.0;
    let mut hits = 0usize;
    for p in 0..config.resolution * config.resolution {
        if !gbuffer.mask[p] {
            continue;
        }
        hits += 1;
        for c in 0..3 {
            let i = p * 3 + c;
            let u = w * (eps_hat.data[i] - eps.data[i]);
            upstream.data[i] = u;
            residual += u * u;
        }
    }
    if hits > 0 {
        residual /= (hits * 3) as f64;
    }
    let grad = shade_backward(&gbuffer, field, &upstream);
    Ok(ViewPass {
        grad,
        residual,
        draw: ViewDraw {
            elevation: cam_draw[0],
            azimuth: cam_draw[1],
            distance: cam_draw[2],
            timestep: t,
        },
    })
}

/// Average of the per-view SDS gradients at a fixed field, without an
/// optimizer update. Views run in parallel; the reduction is ordered.
fn batch_gradient(
    field: &TextureField,
    mesh: &TriangleMesh,
    config: &SdsConfig,
    schedule: &NoiseSchedule,
    setup: &GuidanceSetup,
    seed: u64,
    stream_base: u64,
) -> Result<(Vec<f64>, f64, Vec<ViewDraw>)> {
    let passes: Vec<Result<ViewPass>> = (0..config.batch_size)
        .into_par_iter()
        .map(|v| {
            let mut rng = view_rng(seed, stream_base + v as u64);
            view_pass(field, mesh, config, schedule, setup, &mut rng)
        })
        .collect();
    let mut grad = vec![0.0f64; field.params.len()];
    let mut residual = 0.0;
    let mut draws = Vec::with_capacity(config.batch_size);
    for pass in passes {
        let pass = pass?;
        for (g, pg) in grad.iter_mut().zip(&pass.grad) {
            *g += pg;
        }
        residual += pass.residual;
        draws.push(pass.draw);
    }
    let b = config.batch_size as f64;
    for g in grad.iter_mut() {
        *g /= b;
    }
    Ok((grad, residual / b, draws))
}

/// Streams for training steps; probe streams live in a disjoint half.
fn step_stream(step: usize) -> u64 {
    (step as u64) << 16
}

pub fn sds_step(
    field: &mut TextureField,
    mesh: &TriangleMesh,
    config: &SdsConfig,
    schedule: &NoiseSchedule,
    setup: &GuidanceSetup,
    adam: &mut AdamState,
    step: usize,
) -> Result<TrainRecord> {
    let started = Instant::now();
    let (mut grad, residual, draws) = batch_gradient(
        field,
        mesh,
        config,
        schedule,
        setup,
        config.seed,
        step_stream(step),
    )?;
    if !residual.is_finite() {
        return Err(Error::NonFiniteResidual(step));
    }
    if let Some(max_norm) = config.clip_max_norm {
        clip_global_norm(&mut grad, max_norm);
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    adam_step(&mut field.params, &grad, adam)?;
    Ok(TrainRecord {
        step,
        residual,
        grad_norm,
        draws,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

// ---------------------------------------------------------------------
// Gradient variance probe

/// Trace of the covariance of the batch-averaged SDS gradient at a fixed
/// field, estimated over independent trials per batch size.
pub fn gradient_variance_probe(
    field: &TextureField,
    mesh: &TriangleMesh,
    config: &SdsConfig,
    schedule: &NoiseSchedule,
    setup: &GuidanceSetup,
    batch_sizes: &[usize],
    trials: usize,
) -> Result<Vec<(usize, f64)>> {
    if trials < 2 {
        return Err(Error::Config(
            "gradient variance estimation requires trials >= 2".into(),
        ));
    }
    let mut out = Vec::new();
    for (bi, &b) in batch_sizes.iter().enumerate() {
        let mut cfg = *config;
        cfg.batch_size = b;
        let mut sum = vec![0.0f64; field.params.len()];
        let mut sum_sq_norm = 0.0;
        for trial in 0..trials {
            // disjoint stream region from training steps
            let stream = (1u64 << 48) | ((bi as u64) << 40) | ((trial as u64) << 16);
            let (grad, _, _) =
                batch_gradient(field, mesh, &cfg, schedule, setup, cfg.seed, stream)?;
            sum_sq_norm += grad.iter().map(|g| g * g).sum::<f64>();
            for (s, g) in sum.iter_mut().zip(&grad) {
                *s += g;
            }
        }
        let t = trials as f64;
        let mean_sq_norm: f64 = sum.iter().map(|s| (s / t) * (s / t)).sum();
        let var = (sum_sq_norm - t * mean_sq_norm) / (t - 1.0);
        out.push((b, var.max(0.0)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Baking and coverage

/// Texel-grid coordinates of a UV coordinate pair.
fn uv_to_grid(uv: [f64; 2], res: usize) -> [f64; 2] {
    [uv[0] * res as f64, (1.0 - uv[1]) * res as f64]
}

/// Nearest-texel lookup used when re-rendering with a baked atlas.
pub fn lookup_nearest(atlas: &Img, uv: [f64; 2]) -> [f64; 3] {
    let g = uv_to_grid(uv, atlas.res);
    let tx = (g[0].floor() as isize).clamp(0, atlas.res as isize - 1) as usize;
    let ty = (g[1].floor() as isize).clamp(0, atlas.res as isize - 1) as usize;
    atlas.pixel(tx, ty)
}

/// Rasterize the mesh over its UV atlas: for every covered texel center,
/// the reconstructed 3D surface point. Degenerate UV triangles are
/// skipped.
pub fn texel_surface_points(mesh: &TriangleMesh, res: usize) -> Result<Vec<Option<V3>>> {
    Ok(texel_points_tris(mesh, res)?
        .into_iter()
        .map(|e| e.map(|(p, _)| p))
        .collect())
}

/// Same rasterization, also reporting which triangle owns each texel.
fn texel_points_tris(mesh: &TriangleMesh, res: usize) -> Result<Vec<Option<(V3, usize)>>> {
    let (uvs, uvt) = match (&mesh.uvs, &mesh.uv_triangles) {
        (Some(u), Some(t)) => (u, t),
        _ => return Err(Error::MissingUvs("baking requires a UV atlas".into())),
    };
    let mut points: Vec<Option<(V3, usize)>> = vec![None; res * res];
    for (i, tri_uv) in uvt.iter().enumerate() {
        let a = uv_to_grid(uvs[tri_uv[0]], res);
        let b = uv_to_grid(uvs[tri_uv[1]], res);
        let c = uv_to_grid(uvs[tri_uv[2]], res);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if det.abs() < 1e-12 {
            continue;
        }
        let min_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let max_x = (a[0].max(b[0]).max(c[0]).ceil() as usize).min(res);
        let min_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let max_y = (a[1].max(b[1]).max(c[1]).ceil() as usize).min(res);
        let [p0, p1, p2] = mesh.triangles[i];
        for ty in min_y..max_y {
            for tx in min_x..max_x {
                let px = tx as f64 + 0.5;
                let py = ty as f64 + 0.5;
                let w1 = ((px - a[0]) * (c[1] - a[1]) - (py - a[1]) * (c[0] - a[0])) / det;
                let w2 = ((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])) / det;
                let w0 = 1.0 - w1 - w2;
                let eps = -1e-9;
                if w0 < eps || w1 < eps || w2 < eps {
                    continue;
                }
                points[ty * res + tx] = Some((
                    mesh.positions[p0] * w0 + mesh.positions[p1] * w1 + mesh.positions[p2] * w2,
                    i,
                ));
            }
        }
    }
    Ok(points)
}

/// Sample the field into a UV atlas; uncovered texels are flood-filled
/// from the nearest covered texel to avoid seam bleed.
pub fn bake_texture(field: &TextureField, mesh: &TriangleMesh, res: usize) -> Result<Img> {
    let points = texel_surface_points(mesh, res)?;
    let mut atlas = Img::new(res);
    let mut covered = vec![false; res * res];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (idx, p) in points.iter().enumerate() {
        if let Some(p) = p {
            let rgb = field.eval_color(*p);
            atlas.data[idx * 3..idx * 3 + 3].copy_from_slice(&rgb);
            covered[idx] = true;
            queue.push_back(idx);
        }
    }
    // multi-source BFS dilation
    while let Some(idx) = queue.pop_front() {
        let (tx, ty) = (idx % res, idx / res);
        let src = [
            atlas.data[idx * 3],
            atlas.data[idx * 3 + 1],
            atlas.data[idx * 3 + 2],
        ];
        let push = |nx: isize, ny: isize, queue: &mut VecDeque<usize>, covered: &mut Vec<bool>, atlas: &mut Img| {
            if nx < 0 || ny < 0 || nx >= res as isize || ny >= res as isize {
                return;
            }
            let n = ny as usize * res + nx as usize;
            if !covered[n] {
                covered[n] = true;
                atlas.data[n * 3..n * 3 + 3].copy_from_slice(&src);
                queue.push_back(n);
            }
        };
        push(tx as isize - 1, ty as isize, &mut queue, &mut covered, &mut atlas);
        push(tx as isize + 1, ty as isize, &mut queue, &mut covered, &mut atlas);
        push(tx as isize, ty as isize - 1, &mut queue, &mut covered, &mut atlas);
        push(tx as isize, ty as isize + 1, &mut queue, &mut covered, &mut atlas);
    }
    Ok(atlas)
}

/// Shade a gbuffer through a baked atlas with nearest-texel lookup
/// instead of evaluating the field.
pub fn shade_baked(
    gbuffer: &GBuffer,
    mesh: &TriangleMesh,
    atlas: &Img,
    background: [f64; 3],
) -> Result<Img> {
    let (uvs, uvt) = match (&mesh.uvs, &mesh.uv_triangles) {
        (Some(u), Some(t)) => (u, t),
        _ => return Err(Error::MissingUvs("baked rendering requires a UV atlas".into())),
    };
    let res = gbuffer.res;
    let mut im = Img::new(res);
    for p in 0..res * res {
        let rgb = if gbuffer.mask[p] {
            let tri = gbuffer.triangle_id[p];
            let bar = gbuffer.barycentric[p];
            let [u0, u1, u2] = uvt[tri];
            let uv = [
                uvs[u0][0] * bar[0] + uvs[u1][0] * bar[1] + uvs[u2][0] * bar[2],
                uvs[u0][1] * bar[0] + uvs[u1][1] * bar[1] + uvs[u2][1] * bar[2],
            ];
            lookup_nearest(atlas, uv)
        } else {
            background
        };
        im.data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
    }
    Ok(im)
}

/// Per-texel count of views in which the texel's surface point is
/// visible: inside the frame, in front of the camera and not occluded.
pub fn coverage_map(mesh: &TriangleMesh, cameras: &[Camera], res: usize) -> Result<Vec<u32>> {
    let points = texel_points_tris(mesh, res)?;
    let normals: Vec<V3> = mesh
        .triangles
        .iter()
        .map(|t| {
            (mesh.positions[t[1]] - mesh.positions[t[0]])
                .cross(&(mesh.positions[t[2]] - mesh.positions[t[0]]))
        })
        .collect();
    let mut counts = vec![0u32; res * res];
    for cam in cameras {
        let tan = (cam.vertical_fov_deg.to_radians() * 0.5).tan();
        let visible: Vec<u32> = points
            .par_iter()
            .map(|p| {
                let (p, tri_id) = match p {
                    Some(p) => *p,
                    None => return 0,
                };
                let rel = p - cam.eye;
                let z = rel.dot(&cam.forward);
                if z <= 1e-9 {
                    return 0;
                }
                let sx = rel.dot(&cam.right) / (z * tan);
                let sy = rel.dot(&cam.up) / (z * tan);
                if sx.abs() > 1.0 || sy.abs() > 1.0 {
                    return 0;
                }
                // edge-on faces project to zero area: not covered
                let dir = p - cam.eye; // t = 1 at the texel point
                let n = normals[tri_id];
                if n.dot(&dir).abs() <= 1e-6 * n.norm() * dir.norm() {
                    return 0;
                }
                // occlusion: any triangle strictly between eye and point
                for tri in &mesh.triangles {
                    if let Some((t, _)) = crate::render::intersect_ray_triangle(
                        cam.eye,
                        dir,
                        mesh.positions[tri[0]],
                        mesh.positions[tri[1]],
                        mesh.positions[tri[2]],
                    ) {
                        if t < 1.0 - 1e-6 {
                            return 0;
                        }
                    }
                }
                1
            })
            .collect();
        for (c, v) in counts.iter_mut().zip(&visible) {
            *c += v;
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------
// Full runs

pub struct RunOutput {
    pub field: TextureField,
    pub records: Vec<TrainRecord>,
    pub baked: Option<Img>,
    pub normalize_report: crate::mesh::NormalizeReport,
}

pub fn write_metrics(records: &[TrainRecord], path: &Path) -> Result<()> {
    let mut text = String::from("step,residual,grad_norm,t_values,elapsed_ms\n");
    for r in records {
        let ts: Vec<String> = r.draws.iter().map(|d| d.timestep.to_string()).collect();
        text.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.step,
            r.residual,
            r.grad_norm,
            ts.join("|"),
            r.elapsed_ms
        ));
    }
    atomic_write(path, text.as_bytes())
}

/// Write via temp file + rename so readers never see partial rows.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn render_turntable(
    mesh: &TriangleMesh,
    field: &TextureField,
    config: &SdsConfig,
    n_views: usize,
    elevation: f64,
) -> Vec<(Img, DepthMap)> {
    let distance = 0.5 * (config.camera_distance_range[0] + config.camera_distance_range[1]);
    (0..n_views)
        .map(|k| {
            let azimuth = 360.0 * k as f64 / n_views.max(1) as f64;
            let cam = camera_from_spherical(
                elevation,
                azimuth,
                distance,
                config.fov_deg,
                config.resolution,
            );
            let gb = rasterize(mesh, &cam);
            (shade(&gb, field, config.background), normalize_depth(&gb))
        })
        .collect()
}

/// Full optimization run driven by a [`RunConfig`]: trains for the
/// configured steps, writes periodic snapshots and the metrics log, and
/// bakes the final atlas when the mesh has UVs.
pub fn generate_texture(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let raw_mesh = load_obj(&cfg.mesh)?;
    let (mesh, normalize_report) = normalize_mesh(&raw_mesh)?;
    let schedule = make_schedule(
        cfg.schedule.steps,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
    )?;
    let setup = GuidanceSetup::from_config(&cfg.oracle)?;
    let mut field = init_random(cfg.grid, cfg.sds.seed)?;
    let mut adam = AdamState::new(field.params.len(), cfg.sds.lr);

    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        atomic_write(&out.join("config.toml"), cfg.to_toml_string().as_bytes())?;
        atomic_write(
            &out.join("version.txt"),
            format!("meshtex {}\n", env!("CARGO_PKG_VERSION")).as_bytes(),
        )?;
    }

    let mut records = Vec::with_capacity(cfg.sds.steps);
    for step in 0..cfg.sds.steps {
        let record = sds_step(&mut field, &mesh, &cfg.sds, &schedule, &setup, &mut adam, step)?;
        records.push(record);
        if let Some(out) = &cfg.out {
            let cadence = cfg.sds.snapshot_every;
            if cadence > 0 && (step + 1) % cadence == 0 {
                let azimuth = (45.0 * ((step + 1) / cadence) as f64) % 360.0;
                let cam = camera_from_spherical(
                    20.0,
                    azimuth,
                    0.5 * (cfg.sds.camera_distance_range[0] + cfg.sds.camera_distance_range[1]),
                    cfg.sds.fov_deg,
                    cfg.sds.resolution,
                );
                let gb = rasterize(&mesh, &cam);
                shade(&gb, &field, cfg.sds.background)
                    .save_png(&out.join(format!("snapshot_{:05}.png", step + 1)))?;
            }
        }
    }

    let baked = if mesh.has_uvs() {
        Some(bake_texture(&field, &mesh, cfg.atlas_resolution)?)
    } else {
        None
    };

    if let Some(out) = &cfg.out {
        write_metrics(&records, &out.join("metrics.csv"))?;
        save_checkpoint(&field, &out.join("field.ckpt"))?;
        if let Some(atlas) = &baked {
            atlas.save_png(&out.join("texture.png"))?;
            let sidecar = serde_json::json!({
                "mesh": cfg.mesh.display().to_string(),
                "config_hash": cfg.hash(),
                "seed": cfg.sds.seed,
                "atlas_resolution": cfg.atlas_resolution,
            });
            atomic_write(
                &out.join("texture.json"),
                serde_json::to_string_pretty(&sidecar).unwrap().as_bytes(),
            )?;
        }
    }

    Ok(RunOutput {
        field,
        records,
        baked,
        normalize_report,
    })
}

/// Mean absolute error between current renders and the active
/// condition's reference image over hit pixels, averaged over a fixed
/// ring of evaluation cameras. The ablation summary metric.
pub fn eval_mae_to_target(
    field: &TextureField,
    mesh: &TriangleMesh,
    config: &SdsConfig,
    setup: &GuidanceSetup,
    n_views: usize,
) -> Result<f64> {
    let distance = 0.5 * (config.camera_distance_range[0] + config.camera_distance_range[1]);
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..n_views {
        let azimuth = 360.0 * k as f64 / n_views as f64;
        let cam =
            camera_from_spherical(30.0, azimuth, distance, config.fov_deg, config.resolution);
        let gb = rasterize(mesh, &cam);
        let render = shade(&gb, field, config.background);
        let reference = reference_image(setup, &gb, config.background)?;
        for p in 0..gb.res * gb.res {
            if !gb.mask[p] {
                continue;
            }
            for c in 0..3 {
                total += (render.data[p * 3 + c] - reference.data[p * 3 + c]).abs();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Deterministic reference for MAE evaluation: the delta target, the
/// weight-averaged mixture modes, or the depth-routed per-pixel blend.
pub fn reference_image(
    setup: &GuidanceSetup,
    gbuffer: &GBuffer,
    background: [f64; 3],
) -> Result<Img> {
    use crate::guidance::ConditionOracle;
    let oracle = setup
        .oracles
        .conditions
        .get(&setup.condition)
        .ok_or_else(|| Error::UnknownCondition(setup.condition.clone()))?;
    let resolve = |id: &str| -> Result<Img> {
        setup
            .targets
            .get(id)
            .ok_or_else(|| Error::UnknownCondition(id.to_string()))?
            .resolve(gbuffer, background)
    };
    match oracle {
        ConditionOracle::Delta { target } => resolve(target),
        ConditionOracle::Mixture { modes } => {
            let wsum: f64 = modes.iter().map(|m| m.weight).sum();
            let mut out = Img::new(gbuffer.res);
            for m in modes {
                let im = resolve(&m.target)?;
                for i in 0..out.data.len() {
                    out.data[i] += m.weight / wsum * im.data[i];
                }
            }
            Ok(out)
        }
        ConditionOracle::DepthRouted {
            near,
            far,
            threshold,
        } => {
            let near = resolve(near)?;
            let far = resolve(far)?;
            let depth = normalize_depth(gbuffer);
            let mut out = Img::new(gbuffer.res);
            for p in 0..gbuffer.res * gbuffer.res {
                let src = if depth.data[p] > *threshold { &near } else { &far };
                for c in 0..3 {
                    out.data[p * 3 + c] = src.data[p * 3 + c];
                }
            }
            Ok(out)
        }
    }
}
