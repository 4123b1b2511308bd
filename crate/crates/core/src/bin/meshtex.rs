//! Command-line front end: texture generation, parameter sweeps,
//! gradient checking, turntable renders and atlas baking.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use meshtex::config::RunConfig;
use meshtex::error::Error;
use meshtex::field::{init_random, load_checkpoint, HashGridConfig, TextureField};
use meshtex::guidance::default_schedule;
use meshtex::img::Img;
use meshtex::mesh::{load_obj, normalize_mesh, TriangleMesh, V3};
use meshtex::pipeline::{
    atomic_write, bake_texture, coverage_map, eval_mae_to_target, generate_texture,
    gradient_variance_probe, render_turntable, sample_camera, GuidanceSetup,
};
use meshtex::render::{camera_from_spherical, rasterize, shade, shade_backward};

#[derive(Parser)]
#[command(name = "meshtex", version, about = "SDS texture generation for triangle meshes")]
struct Cli {
    /// Run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread count (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full SDS optimization and emit all run artifacts
    Generate,
    /// Sweep one parameter axis and summarize the sub-runs
    Ablate {
        /// Sweep key: batch_size, guidance_scale, elevation_range,
        /// t_frac_range, camera_distance_range, negative_prompt, clipping
        #[arg(long)]
        axis: String,
        /// JSON list of values, e.g. '[1,2,4,8]' or '[[0,0],[10,80]]'
        #[arg(long)]
        values: String,
    },
    /// Finite-difference checks of the analytic backward passes
    Gradcheck {
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
    /// Render paired RGB/depth turntable images
    Views {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 20.0)]
        elevation: f64,
        /// Field checkpoint to render; random init when absent
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Bake a field checkpoint into a UV atlas PNG
    Bake {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

const SWEEP_AXES: &[&str] = &[
    "batch_size",
    "guidance_scale",
    "elevation_range",
    "t_frac_range",
    "camera_distance_range",
    "negative_prompt",
    "clipping",
];

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(
                e,
                Error::Config(_) | Error::Io { .. } | Error::ObjParse { .. } | Error::ObjIndex { .. }
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.sds.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn require_out(cfg: &RunConfig) -> Result<PathBuf, Error> {
    cfg.out
        .clone()
        .ok_or_else(|| Error::Config("output directory required (key: out or --out)".into()))
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    match &cli.cmd {
        Cmd::Generate => {
            let mut cfg = load_config(cli)?;
            cfg.out = Some(require_out(&cfg)?);
            let out = generate_texture(&cfg)?;
            let final_residual = out.records.last().map(|r| r.residual);
            println!(
                "generate: {} steps, dropped {} degenerate triangles, final residual {:?}",
                out.records.len(),
                out.normalize_report.dropped_degenerate,
                final_residual
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Ablate { axis, values } => {
            let cfg = load_config(cli)?;
            cmd_ablate(&cfg, axis, values)
        }
        Cmd::Gradcheck { inject_sign_flip } => {
            let cfg = load_config(cli)?;
            cmd_gradcheck(&cfg, *inject_sign_flip)
        }
        Cmd::Views {
            n,
            elevation,
            checkpoint,
        } => {
            let cfg = load_config(cli)?;
            let out = require_out(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mesh = normalized_mesh(&cfg)?;
            let field = load_field(&cfg, checkpoint.as_deref())?;
            for (k, (rgb, depth)) in render_turntable(&mesh, &field, &cfg.sds, *n, *elevation)
                .iter()
                .enumerate()
            {
                rgb.save_png(&out.join(format!("view_{k:03}_rgb.png")))?;
                depth.save_png(&out.join(format!("view_{k:03}_depth.png")))?;
            }
            println!("views: wrote {n} RGB/depth pairs to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bake { checkpoint } => {
            let cfg = load_config(cli)?;
            let out = require_out(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mesh = normalized_mesh(&cfg)?;
            let field = load_field(&cfg, checkpoint.as_deref())?;
            let atlas = bake_texture(&field, &mesh, cfg.atlas_resolution)?;
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
            println!("bake: wrote {}x{} atlas", cfg.atlas_resolution, cfg.atlas_resolution);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn normalized_mesh(cfg: &RunConfig) -> Result<TriangleMesh, Error> {
    cfg.validate()?;
    Ok(normalize_mesh(&load_obj(&cfg.mesh)?)?.0)
}

fn load_field(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<TextureField, Error> {
    match checkpoint {
        Some(path) => load_checkpoint(path),
        None => init_random(cfg.grid, cfg.sds.seed),
    }
}

// ---------------------------------------------------------------------
// ablate

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sub-run seeds derive from (base seed, axis, value) so runs are
/// independent yet individually reproducible. Masked to 63 bits so the
/// echoed config stays a representable TOML integer.
fn sweep_seed(base: u64, axis: &str, value: &serde_json::Value) -> u64 {
    fnv1a(format!("{base}/{axis}/{value}").as_bytes()) & (i64::MAX as u64)
}

fn pair_of(value: &serde_json::Value, axis: &str) -> Result<[f64; 2], Error> {
    let arr = value
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::Config(format!("axis {axis} expects [min, max] pairs")))?;
    let mut out = [0.0; 2];
    for (i, v) in arr.iter().enumerate() {
        out[i] = v
            .as_f64()
            .ok_or_else(|| Error::Config(format!("axis {axis}: non-numeric bound {v}")))?;
    }
    Ok(out)
}

fn apply_axis(cfg: &mut RunConfig, axis: &str, value: &serde_json::Value) -> Result<(), Error> {
    match axis {
        "batch_size" => {
            cfg.sds.batch_size = value
                .as_u64()
                .ok_or_else(|| Error::Config("batch_size values must be integers".into()))?
                as usize;
        }
        "guidance_scale" => {
            cfg.sds.guidance_scale = value
                .as_f64()
                .ok_or_else(|| Error::Config("guidance_scale values must be numbers".into()))?;
        }
        "elevation_range" => cfg.sds.elevation_range = pair_of(value, axis)?,
        "t_frac_range" => cfg.sds.t_frac_range = pair_of(value, axis)?,
        "camera_distance_range" => cfg.sds.camera_distance_range = pair_of(value, axis)?,
        "negative_prompt" => {
            let on = value
                .as_bool()
                .ok_or_else(|| Error::Config("negative_prompt values must be booleans".into()))?;
            if on {
                if cfg.oracle.negative_condition.is_none() {
                    return Err(Error::Config(
                        "negative_prompt sweep needs oracle.negative_condition in the config"
                            .into(),
                    ));
                }
            } else {
                cfg.oracle.negative_condition = None;
            }
        }
        "clipping" => {
            let on = value
                .as_bool()
                .ok_or_else(|| Error::Config("clipping values must be booleans".into()))?;
            cfg.sds.clip_max_norm = if on {
                Some(cfg.sds.clip_max_norm.unwrap_or(1.0))
            } else {
                None
            };
        }
        other => {
            return Err(Error::Config(format!(
                "unknown sweep axis '{other}'; valid axes: {}",
                SWEEP_AXES.join(", ")
            )))
        }
    }
    Ok(())
}

fn cmd_ablate(base_cfg: &RunConfig, axis: &str, values_json: &str) -> Result<ExitCode, Error> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(Error::Config(format!(
            "unknown sweep axis '{axis}'; valid axes: {}",
            SWEEP_AXES.join(", ")
        )));
    }
    let values: Vec<serde_json::Value> = serde_json::from_str(values_json)
        .map_err(|e| Error::Config(format!("--values must be a JSON list: {e}")))?;
    if values.is_empty() {
        return Err(Error::Config("--values list is empty".into()));
    }
    let out_root = require_out(base_cfg)?;
    std::fs::create_dir_all(&out_root).map_err(|e| Error::io(&out_root, e))?;

    let mut rows = Vec::new();
    for (k, value) in values.iter().enumerate() {
        let mut cfg = base_cfg.clone();
        apply_axis(&mut cfg, axis, value)?;
        cfg.sds.seed = sweep_seed(base_cfg.sds.seed, axis, value);
        cfg.out = Some(out_root.join(format!("{axis}_{k}")));
        let run = generate_texture(&cfg)?;

        let mesh = normalized_mesh(&cfg)?;
        let setup = GuidanceSetup::from_config(&cfg.oracle)?;
        let schedule = default_schedule();
        let final_mae = eval_mae_to_target(&run.field, &mesh, &cfg.sds, &setup, 8)?;
        let residual_mid = run
            .records
            .get(run.records.len() / 2)
            .map(|r| r.residual)
            .unwrap_or(f64::NAN);
        let residual_final = run.records.last().map(|r| r.residual).unwrap_or(f64::NAN);

        // coverage over the run's camera distribution
        let coverage_zero = if mesh.has_uvs() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.sds.seed);
            let cams: Vec<_> = (0..64).map(|_| sample_camera(&cfg.sds, &mut rng).0).collect();
            let counts = coverage_map(&mesh, &cams, 64)?;
            let points = meshtex::pipeline::texel_surface_points(&mesh, 64)?;
            counts
                .iter()
                .zip(&points)
                .filter(|(c, p)| p.is_some() && **c == 0)
                .count() as i64
        } else {
            -1
        };

        let variance = gradient_variance_probe(
            &run.field,
            &mesh,
            &cfg.sds,
            &schedule,
            &setup,
            &[cfg.sds.batch_size],
            8,
        )?[0]
            .1;

        rows.push(format!(
            "{axis},{value},{final_mae},{residual_mid},{residual_final},{coverage_zero},{variance}"
        ));
        println!("ablate {axis}={value}: mae {final_mae:.4} variance {variance:.3e}");
    }

    let mut csv =
        String::from("axis,value,final_mae,residual_mid,residual_final,coverage_zero_texels,grad_variance\n");
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    atomic_write(&out_root.join("summary.csv"), csv.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------
// gradcheck

const GRADCHECK_TOL: f64 = 1e-5;

fn cmd_gradcheck(cfg: &RunConfig, inject_sign_flip: bool) -> Result<ExitCode, Error> {
    cfg.grid.validate()?;
    let seed = cfg.sds.seed;
    let flip = if inject_sign_flip { -1.0 } else { 1.0 };

    let field_err = gradcheck_field(cfg.grid, seed, flip);
    println!(
        "gradcheck field    : max relative error {field_err:.3e} (tolerance {GRADCHECK_TOL:.0e})"
    );
    let render_err = gradcheck_render(cfg, seed, flip)?;
    println!(
        "gradcheck renderer : max relative error {render_err:.3e} (tolerance {GRADCHECK_TOL:.0e})"
    );

    if field_err < GRADCHECK_TOL && render_err < GRADCHECK_TOL {
        println!("gradcheck: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck: FAIL");
        Ok(ExitCode::from(1))
    }
}

fn gradcheck_field(grid: HashGridConfig, seed: u64, flip: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let mut field = init_random(grid, seed.wrapping_add(trial)).unwrap();
        for p in field.params.iter_mut() {
            *p *= 10.0;
        }
        let point = V3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let upstream = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let sparse = field.eval_color_backward(point, upstream);
        let mut dense = vec![0.0; field.params.len()];
        sparse.accumulate_into(&mut dense);
        let h = 1e-4;
        for idx in sparse.support() {
            // gradients below FD roundoff carry no signal
            if dense[idx].abs() < 1e-6 {
                continue;
            }
            let saved = field.params[idx];
            field.params[idx] = saved + h;
            let up = dot_color(&field, point, upstream);
            field.params[idx] = saved - h;
            let dn = dot_color(&field, point, upstream);
            field.params[idx] = saved;
            let fd = (up - dn) / (2.0 * h);
            let analytic = flip * dense[idx];
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            worst = worst.max((fd - analytic).abs() / denom);
        }
    }
    worst
}

fn dot_color(field: &TextureField, point: V3, upstream: [f64; 3]) -> f64 {
    let y = field.eval_color(point);
    y[0] * upstream[0] + y[1] * upstream[1] + y[2] * upstream[2]
}

fn gradcheck_render(cfg: &RunConfig, seed: u64, flip: f64) -> Result<f64, Error> {
    let mesh = normalized_mesh(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let mut field = init_random(cfg.grid, seed.wrapping_add(100 + trial)).unwrap();
        for p in field.params.iter_mut() {
            *p *= 10.0;
        }
        let cam = camera_from_spherical(
            rng.gen_range(-60.0..60.0),
            rng.gen_range(0.0..360.0),
            rng.gen_range(1.0..1.5),
            cfg.sds.fov_deg,
            32,
        );
        let gb = rasterize(&mesh, &cam);
        let mut upstream = Img::new(32);
        for p in 0..32 * 32 {
            if gb.mask[p] {
                for c in 0..3 {
                    upstream.data[p * 3 + c] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let grad = shade_backward(&gb, &field, &upstream);
        let nonzero: Vec<usize> = grad
            .iter()
            .enumerate()
            .filter(|(_, g)| g.abs() > 1e-6)
            .map(|(i, _)| i)
            .collect();
        let stride = (nonzero.len() / 20).max(1);
        let touched: Vec<usize> = nonzero.iter().copied().step_by(stride).take(20).collect();
        let h = 1e-4;
        for idx in touched {
            let saved = field.params[idx];
            field.params[idx] = saved + h;
            let up_im = shade(&gb, &field, cfg.sds.background);
            field.params[idx] = saved - h;
            let dn_im = shade(&gb, &field, cfg.sds.background);
            field.params[idx] = saved;
            let mut fd = 0.0;
            for i in 0..upstream.data.len() {
                fd += upstream.data[i] * (up_im.data[i] - dn_im.data[i]);
            }
            fd /= 2.0 * h;
            let analytic = flip * grad[idx];
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            worst = worst.max((fd - analytic).abs() / denom);
        }
    }
    Ok(worst)
}
