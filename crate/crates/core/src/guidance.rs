//! Diffusion machinery with closed-form guidance oracles.
//!
//! A DDPM noise schedule, forward noising, classifier-free guidance
//! combination, and a set of pluggable depth-conditioned noise
//! predictors. The oracles replace a latent diffusion model at desk
//! scale: each one has an exact score, so predictions can be checked
//! against finite-difference gradients of log p_t.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{DepthMap, Img};
use crate::render::GBuffer;

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    pub alphas_bar: Vec<f64>,
    /// w(t) = 1 - alpha_bar_t
    pub weights: Vec<f64>,
}

impl NoiseSchedule {
    /// Timesteps are 1-based, t in [1, steps].
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_bar[t - 1]
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.weights[t - 1]
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least 1 step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "invalid beta range [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alphas_bar = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for &b in &betas {
        prod *= 1.0 - b;
        alphas_bar.push(prod);
    }
    let weights = alphas_bar.iter().map(|&ab| 1.0 - ab).collect();
    Ok(NoiseSchedule {
        steps,
        betas,
        alphas_bar,
        weights,
    })
}

pub fn default_schedule() -> NoiseSchedule {
    make_schedule(1000, 1e-4, 2e-2).expect("default schedule")
}

/// x_t = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps
pub fn add_noise(x0: &Img, schedule: &NoiseSchedule, t: usize, eps: &Img) -> Img {
    assert_eq!(x0.res, eps.res, "noise shape mismatch");
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = Img::new(x0.res);
    for i in 0..x0.data.len() {
        out.data[i] = sa * x0.data[i] + sb * eps.data[i];
    }
    out
}

/// eps_base + scale * (eps_cond - eps_base)
pub fn cfg_combine(eps_cond: &Img, eps_base: &Img, scale: f64) -> Img {
    assert_eq!(eps_cond.res, eps_base.res, "cfg shape mismatch");
    let mut out = Img::new(eps_cond.res);
    for i in 0..out.data.len() {
        out.data[i] = eps_base.data[i] + scale * (eps_cond.data[i] - eps_base.data[i]);
    }
    out
}

// ---------------------------------------------------------------------
// Targets

/// Target specification as written in run configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    /// Constant color over the whole surface.
    Solid { rgb: [f64; 3] },
    /// 3D checkerboard over object space, cells of size 2/scale.
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        scale: u32,
    },
    /// Linear ramp along one object-space axis (0 = x, 1 = y, 2 = z).
    Gradient {
        axis: usize,
        from: [f64; 3],
        to: [f64; 3],
    },
    /// Fixed screen-space image, must match the render resolution.
    Png { path: PathBuf },
}

/// Runtime target: procedural colors are functions of the 3D surface
/// point and get resolved per camera through the gbuffer; fixed images
/// are camera-independent.
#[derive(Debug, Clone)]
pub enum Target {
    Solid { rgb: [f64; 3] },
    Checker { a: [f64; 3], b: [f64; 3], scale: u32 },
    Gradient { axis: usize, from: [f64; 3], to: [f64; 3] },
    Fixed(Img),
}

impl Target {
    pub fn load(spec: &TargetSpec) -> Result<Target> {
        Ok(match spec {
            TargetSpec::Solid { rgb } => Target::Solid { rgb: *rgb },
            TargetSpec::Checker { a, b, scale } => {
                if *scale == 0 {
                    return Err(Error::Config("checker scale must be >= 1".into()));
                }
                Target::Checker {
                    a: *a,
                    b: *b,
                    scale: *scale,
                }
            }
            TargetSpec::Gradient { axis, from, to } => {
                if *axis > 2 {
                    return Err(Error::Config("gradient axis must be 0, 1 or 2".into()));
                }
                Target::Gradient {
                    axis: *axis,
                    from: *from,
                    to: *to,
                }
            }
            TargetSpec::Png { path } => Target::Fixed(Img::load_png(path)?),
        })
    }

    pub fn color_at(&self, p: crate::mesh::V3) -> [f64; 3] {
        match self {
            Target::Solid { rgb } => *rgb,
            Target::Checker { a, b, scale } => {
                let mut parity = 0u32;
                for axis in 0..3 {
                    let u = ((p[axis] + 1.0) * 0.5).clamp(0.0, 1.0 - 1e-12);
                    parity += (u * *scale as f64).floor() as u32;
                }
                if parity % 2 == 0 {
                    *a
                } else {
                    *b
                }
            }
            Target::Gradient { axis, from, to } => {
                let u = ((p[*axis] + 1.0) * 0.5).clamp(0.0, 1.0);
                std::array::from_fn(|c| from[c] + u * (to[c] - from[c]))
            }
            Target::Fixed(_) => panic!("fixed targets are screen-space, not point-sampled"),
        }
    }

    /// Ground-truth image for the active camera.
    pub fn resolve(&self, gbuffer: &GBuffer, background: [f64; 3]) -> Result<Img> {
        if let Target::Fixed(im) = self {
            if im.res != gbuffer.res {
                return Err(Error::ShapeMismatch(format!(
                    "fixed target is {}px, render is {}px",
                    im.res, gbuffer.res
                )));
            }
            return Ok(im.clone());
        }
        let res = gbuffer.res;
        let mut out = Img::new(res);
        for p in 0..res * res {
            let rgb = if gbuffer.mask[p] {
                self.color_at(gbuffer.surface_point[p])
            } else {
                background
            };
            out.data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
        }
        Ok(out)
    }
}

/// Per-view resolved target images keyed by condition id. The pipeline
/// inserts the current render under the reserved id "render", which acts
/// as the unconditional CFG base when no negative condition is set.
#[derive(Debug, Default)]
pub struct ViewTargets {
    map: HashMap<String, Img>,
}

pub const RENDER_CONDITION: &str = "render";

impl ViewTargets {
    pub fn insert(&mut self, id: impl Into<String>, img: Img) {
        self.map.insert(id.into(), img);
    }

    pub fn get(&self, id: &str) -> Result<&Img> {
        self.map
            .get(id)
            .ok_or_else(|| Error::UnknownCondition(id.to_string()))
    }
}

// ---------------------------------------------------------------------
// Oracles

/// Optimal noise prediction when the target distribution is a point mass
/// at mu: eps_hat = (x_t - sqrt(ab) mu) / sqrt(1 - ab).
pub fn delta_predict(x_t: &Img, alpha_bar: f64, mu: &Img) -> Img {
    assert_eq!(x_t.res, mu.res, "delta target shape mismatch");
    let sa = alpha_bar.sqrt();
    let sb = (1.0 - alpha_bar).sqrt();
    let mut out = Img::new(x_t.res);
    for i in 0..out.data.len() {
        out.data[i] = (x_t.data[i] - sa * mu.data[i]) / sb;
    }
    out
}

/// Exact score of a Gaussian mixture with point-mass modes:
/// p_t(x) = sum_i w_i N(sqrt(ab) mu_i, (1-ab) I). The prediction is the
/// responsibility-weighted average of the per-mode delta predictions,
/// with log-sum-exp stabilization.
pub fn mixture_predict(x_t: &Img, alpha_bar: f64, modes: &[(f64, &Img)]) -> Result<Img> {
    if modes.is_empty() {
        return Err(Error::Guidance("mixture needs at least one mode".into()));
    }
    let wsum: f64 = modes.iter().map(|(w, _)| *w).sum();
    if modes.iter().any(|(w, _)| *w < 0.0) || wsum <= 0.0 {
        return Err(Error::Guidance(
            "mixture weights must be nonnegative with positive sum".into(),
        ));
    }
    let sa = alpha_bar.sqrt();
    let var = 1.0 - alpha_bar;
    let mut log_resp = Vec::with_capacity(modes.len());
    for (w, mu) in modes {
        assert_eq!(x_t.res, mu.res, "mixture mode shape mismatch");
        if *w == 0.0 {
            log_resp.push(f64::NEG_INFINITY);
            continue;
        }
        let mut sq = 0.0;
        for i in 0..x_t.data.len() {
            let d = x_t.data[i] - sa * mu.data[i];
            sq += d * d;
        }
        log_resp.push((w / wsum).ln() - sq / (2.0 * var));
    }
    let m = log_resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = log_resp.iter().map(|&l| (l - m).exp()).sum();
    let mut out = Img::new(x_t.res);
    for (k, (_, mu)) in modes.iter().enumerate() {
        let r = (log_resp[k] - m).exp() / denom;
        if r == 0.0 {
            continue;
        }
        let pred = delta_predict(x_t, alpha_bar, mu);
        for i in 0..out.data.len() {
            out.data[i] += r * pred.data[i];
        }
    }
    Ok(out)
}

/// Per-pixel routing: near_target where normalized depth > threshold,
/// far_target otherwise, then the delta formula pixelwise.
pub fn depth_routed_predict(
    x_t: &Img,
    alpha_bar: f64,
    depth: &DepthMap,
    near: &Img,
    far: &Img,
    threshold: f64,
) -> Result<Img> {
    if depth.res != x_t.res || near.res != x_t.res || far.res != x_t.res {
        return Err(Error::ShapeMismatch(
            "depth-routed oracle inputs must share one resolution".into(),
        ));
    }
    let sa = alpha_bar.sqrt();
    let sb = (1.0 - alpha_bar).sqrt();
    let mut out = Img::new(x_t.res);
    for p in 0..x_t.res * x_t.res {
        let mu = if depth.data[p] >= threshold { near } else { far };
        for c in 0..3 {
            let i = p * 3 + c;
            out.data[i] = (x_t.data[i] - sa * mu.data[i]) / sb;
        }
    }
    Ok(out)
}

/// One named condition's noise predictor, referencing targets by id.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionOracle {
    Delta {
        target: String,
    },
    Mixture {
        modes: Vec<MixtureMode>,
    },
    DepthRouted {
        near: String,
        far: String,
        threshold: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixtureMode {
    pub weight: f64,
    pub target: String,
}

/// Everything a noise predictor sees for one view.
pub struct GuidanceInput<'a> {
    pub x_t: &'a Img,
    pub t: usize,
    pub schedule: &'a NoiseSchedule,
    /// Normalized depth concatenated as a 4th channel.
    pub depth: Option<&'a DepthMap>,
    pub targets: &'a ViewTargets,
}

pub trait GuidanceModel {
    fn predict_noise(&self, input: &GuidanceInput, condition: &str) -> Result<Img>;
}

/// Registry mapping condition ids to oracles; the pipeline's stand-in
/// for prompt conditioning.
#[derive(Debug, Clone, Default)]
pub struct OracleSet {
    pub conditions: HashMap<String, ConditionOracle>,
}

impl OracleSet {
    pub fn insert(&mut self, id: impl Into<String>, oracle: ConditionOracle) {
        self.conditions.insert(id.into(), oracle);
    }

    /// Target ids this oracle set needs resolved per view.
    pub fn required_targets(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for c in self.conditions.values() {
            match c {
                ConditionOracle::Delta { target } => ids.push(target),
                ConditionOracle::Mixture { modes } => {
                    ids.extend(modes.iter().map(|m| m.target.as_str()))
                }
                ConditionOracle::DepthRouted { near, far, .. } => {
                    ids.push(near);
                    ids.push(far);
                }
            }
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

impl GuidanceModel for OracleSet {
    fn predict_noise(&self, input: &GuidanceInput, condition: &str) -> Result<Img> {
        // the current render acts as its own point-mass target: the
        // unconditional base prediction is then exactly the drawn noise
        if condition == RENDER_CONDITION {
            let mu = input.targets.get(RENDER_CONDITION)?;
            return Ok(delta_predict(input.x_t, input.schedule.alpha_bar(input.t), mu));
        }
        let oracle = self
            .conditions
            .get(condition)
            .ok_or_else(|| Error::UnknownCondition(condition.to_string()))?;
        let ab = input.schedule.alpha_bar(input.t);
        match oracle {
            ConditionOracle::Delta { target } => {
                Ok(delta_predict(input.x_t, ab, input.targets.get(target)?))
            }
            ConditionOracle::Mixture { modes } => {
                let resolved: Vec<(f64, &Img)> = modes
                    .iter()
                    .map(|m| Ok((m.weight, input.targets.get(&m.target)?)))
                    .collect::<Result<_>>()?;
                mixture_predict(input.x_t, ab, &resolved)
            }
            ConditionOracle::DepthRouted {
                near,
                far,
                threshold,
            } => {
                let depth = input.depth.ok_or_else(|| {
                    Error::Guidance("depth-routed oracle needs a depth channel".into())
                })?;
                depth_routed_predict(
                    input.x_t,
                    ab,
                    depth,
                    input.targets.get(near)?,
                    input.targets.get(far)?,
                    *threshold,
                )
            }
        }
    }
}
