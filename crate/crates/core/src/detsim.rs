//! Synthetic scenes and a seeded noisy detector.
//!
//! Scenes are boxes plus surface-sampled points with distance-decaying
//! density and uniform ground clutter (including a few dense clutter
//! clumps that act as hard distractors). The detector perturbs ground
//! truth in a view frame, drops objects with both a persistent (range
//! dependent) and a per-view miss component, and hallucinates false
//! boxes at per-frame distractor sites that fire per view. Everything is
//! a pure function of (config, seed), so runs are exactly reproducible.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom3d::{normalize_yaw, transform_box, Box3D, ClassId, Detection, ViewTransform};

#[derive(Debug, Error)]
pub enum DetsimError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad record: {0}")]
    Parse(String),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive mixing of seed components into one 64-bit stream seed.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3; // arbitrary fixed salt
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

fn view_hash(view: &ViewTransform) -> u64 {
    mix_seed(&[
        view.flip_x as u64,
        view.flip_y as u64,
        view.rotation.to_bits(),
    ])
}

const SALT_SCENE: u64 = 0xA1;
const SALT_MISS_PERSIST: u64 = 0xB2;
const SALT_MISS_VIEW: u64 = 0xC3;
const SALT_FP_SITES: u64 = 0xD4;
const SALT_FP_VIEW: u64 = 0xE5;
const SALT_EPOCH: u64 = 0xF6;

fn std_normal(rng: &mut impl Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Beta draw parameterized by mean and concentration. Degenerate means
/// collapse to the exact endpoint so a noiseless model emits score 1.0.
fn sample_beta(mean: f64, concentration: f64, rng: &mut impl Rng) -> f64 {
    if mean >= 1.0 - 1e-9 {
        return 1.0;
    }
    if mean <= 1e-9 {
        return 0.0;
    }
    let alpha = mean * concentration;
    let beta = (1.0 - mean) * concentration;
    Beta::new(alpha, beta).expect("beta params").sample(rng)
}

fn sample_poisson(lambda: f64, rng: &mut impl Rng) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let d = Poisson::new(lambda).expect("poisson lambda");
    <Poisson<f64> as Distribution<f64>>::sample(&d, rng) as usize
}

/// Mean object dimensions for one class plus a relative spread.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SizePrior {
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub rel_std: f64,
}

/// Per-class size priors (Vehicle, Pedestrian, Cyclist). Also used for
/// the sizes of hallucinated false boxes.
pub const DEFAULT_SIZE_PRIORS: [SizePrior; 3] = [
    SizePrior {
        l: 4.5,
        w: 1.9,
        h: 1.6,
        rel_std: 0.08,
    },
    SizePrior {
        l: 0.8,
        w: 0.8,
        h: 1.7,
        rel_std: 0.10,
    },
    SizePrior {
        l: 1.8,
        w: 0.6,
        h: 1.7,
        rel_std: 0.10,
    },
];

/// Scene generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_objects_min: usize,
    pub n_objects_max: usize,
    /// Class mix weights (Vehicle, Pedestrian, Cyclist); need not sum to 1.
    pub class_mix: [f64; 3],
    /// Scene spans `[-half_range, half_range]` in x and y.
    pub half_range: f64,
    pub size_priors: [SizePrior; 3],
    /// Surface points a box would get at zero range; actual count decays
    /// with distance.
    pub points_base: f64,
    pub clutter_points: usize,
    pub clutter_clumps: usize,
    pub clutter_clump_points: usize,
    pub clutter_clump_radius: f64,
}

impl Default for SceneConfig {
    fn default() -> SceneConfig {
        SceneConfig {
            n_objects_min: 6,
            n_objects_max: 16,
            class_mix: [0.60, 0.25, 0.15],
            half_range: 75.0,
            size_priors: DEFAULT_SIZE_PRIORS,
            points_base: 360.0,
            clutter_points: 2500,
            clutter_clumps: 40,
            clutter_clump_points: 30,
            clutter_clump_radius: 1.5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), DetsimError> {
        if self.n_objects_min > self.n_objects_max {
            return Err(DetsimError::Config(format!(
                "n_objects_min {} > n_objects_max {}",
                self.n_objects_min, self.n_objects_max
            )));
        }
        if !self.class_mix.iter().any(|&w| w > 0.0) || self.class_mix.iter().any(|&w| w < 0.0) {
            return Err(DetsimError::Config(
                "class_mix must have nonnegative weights with at least one positive".into(),
            ));
        }
        if self.half_range <= 5.0 {
            return Err(DetsimError::Config("half_range too small".into()));
        }
        if self.points_base <= 0.0 {
            return Err(DetsimError::Config("points_base must be positive".into()));
        }
        Ok(())
    }
}

/// A generated frame: ground-truth boxes plus a sampled point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame_id: u64,
    pub half_range: f64,
    pub gt_boxes: Vec<(Box3D, ClassId)>,
    pub points: Vec<[f64; 3]>,
}

fn pick_class(mix: &[f64; 3], rng: &mut impl Rng) -> ClassId {
    let total: f64 = mix.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, &w) in mix.iter().enumerate() {
        if u < w {
            return ClassId::from_index(i).unwrap();
        }
        u -= w;
    }
    ClassId::Cyclist
}

/// Surface point density falls off with BEV range roughly like a scanning
/// sensor: `points_base / (1 + (r / 20)^2)`, floored at one point.
fn points_for_range(points_base: f64, range: f64) -> usize {
    let n = points_base / (1.0 + (range / 20.0).powi(2));
    (n.round() as usize).max(1)
}

fn sample_box_surface(b: &Box3D, n: usize, rng: &mut impl Rng, out: &mut Vec<[f64; 3]>) {
    // four sides plus the top face, weighted by area (ground face is hidden)
    let areas = [
        b.w * b.h,
        b.w * b.h,
        b.l * b.h,
        b.l * b.h,
        b.l * b.w,
    ];
    let total: f64 = areas.iter().sum();
    let (s, c) = b.yaw.sin_cos();
    for _ in 0..n {
        let mut u = rng.gen_range(0.0..total);
        let mut face = 4;
        for (i, &a) in areas.iter().enumerate() {
            if u < a {
                face = i;
                break;
            }
            u -= a;
        }
        let hl = 0.5 * b.l;
        let hw = 0.5 * b.w;
        let hh = 0.5 * b.h;
        let (lx, ly, lz) = match face {
            0 => (hl, rng.gen_range(-hw..hw), rng.gen_range(-hh..hh)),
            1 => (-hl, rng.gen_range(-hw..hw), rng.gen_range(-hh..hh)),
            2 => (rng.gen_range(-hl..hl), hw, rng.gen_range(-hh..hh)),
            3 => (rng.gen_range(-hl..hl), -hw, rng.gen_range(-hh..hh)),
            _ => (rng.gen_range(-hl..hl), rng.gen_range(-hw..hw), hh),
        };
        out.push([
            b.cx + c * lx - s * ly,
            b.cy + s * lx + c * ly,
            b.cz + lz,
        ]);
    }
}

/// Generate a reproducible scene for `(seed, frame_id)`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64, frame_id: u64) -> Result<Scene, DetsimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, frame_id, SALT_SCENE]));
    let n = rng.gen_range(cfg.n_objects_min..=cfg.n_objects_max);
    let margin = 3.0;
    let lim = cfg.half_range - margin;

    let mut gt_boxes: Vec<(Box3D, ClassId)> = Vec::with_capacity(n);
    for _ in 0..n {
        let class = pick_class(&cfg.class_mix, &mut rng);
        let prior = cfg.size_priors[class.index()];
        let jitter = |m: f64, rng: &mut ChaCha8Rng| {
            (m * (1.0 + prior.rel_std * std_normal(rng))).max(0.3 * m)
        };
        let l = jitter(prior.l, &mut rng);
        let w = jitter(prior.w, &mut rng);
        let h = jitter(prior.h, &mut rng);
        // rejection-sample a non-overlapping footprint; after enough
        // failed attempts the last position is accepted as-is
        let mut placed = None;
        for attempt in 0..100 {
            let cx = rng.gen_range(-lim..lim);
            let cy = rng.gen_range(-lim..lim);
            let yaw = rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
            let cand = Box3D::new(cx, cy, h * 0.5, l, w, h, yaw).expect("generated box");
            let overlaps = gt_boxes.iter().any(|(b, _)| {
                let d = (b.cx - cand.cx).hypot(b.cy - cand.cy);
                d < 1.0 || crate::geom3d::bev_iou(b, &cand) > 1e-9
            });
            if !overlaps || attempt == 99 {
                placed = Some(cand);
                break;
            }
        }
        gt_boxes.push((placed.unwrap(), class));
    }

    let mut points = Vec::new();
    for (b, _) in &gt_boxes {
        let n_pts = points_for_range(cfg.points_base, b.range());
        sample_box_surface(b, n_pts, &mut rng, &mut points);
    }
    for _ in 0..cfg.clutter_points {
        points.push([
            rng.gen_range(-cfg.half_range..cfg.half_range),
            rng.gen_range(-cfg.half_range..cfg.half_range),
            rng.gen_range(0.0..0.3),
        ]);
    }
    for _ in 0..cfg.clutter_clumps {
        let cx = rng.gen_range(-lim..lim);
        let cy = rng.gen_range(-lim..lim);
        for _ in 0..cfg.clutter_clump_points {
            points.push([
                cx + cfg.clutter_clump_radius * std_normal(&mut rng),
                cy + cfg.clutter_clump_radius * std_normal(&mut rng),
                rng.gen_range(0.0..1.6),
            ]);
        }
    }

    Ok(Scene {
        frame_id,
        half_range: cfg.half_range,
        gt_boxes,
        points,
    })
}

/// Error model of one detector checkpoint.
///
/// Misses have two parts: a range-dependent persistent part
/// (`fn_distance_coeff * range`, drawn once per object per checkpoint, so
/// hard objects stay hard in every view) and a per-view part (`fn_base`,
/// drawn per object per view, so different views miss different objects).
/// False boxes live at per-frame distractor sites shared by all views;
/// each site fires in a given view with probability `fp_view_prob`, and
/// `fp_rate` is the expected number of false boxes in a single view.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub fn_base: f64,
    pub fn_distance_coeff: f64,
    pub fp_rate: f64,
    pub fp_view_prob: f64,
    pub loc_sigma: f64,
    pub yaw_sigma: f64,
    /// Relative (log-normal) size jitter.
    pub size_sigma: f64,
    pub score_tp_mean: f64,
    pub score_fp_mean: f64,
    pub score_tp_concentration: f64,
    pub score_fp_concentration: f64,
    /// Temporal-checkpoint identity.
    pub epoch_id: u32,
}

impl Default for NoiseModel {
    fn default() -> NoiseModel {
        NoiseModel {
            fn_base: 0.065,
            fn_distance_coeff: 0.0027,
            fp_rate: 26.0,
            fp_view_prob: 0.55,
            loc_sigma: 0.12,
            yaw_sigma: 0.03,
            size_sigma: 0.03,
            score_tp_mean: 0.25,
            score_fp_mean: 0.15,
            score_tp_concentration: 45.0,
            score_fp_concentration: 30.0,
            epoch_id: 0,
        }
    }
}

impl NoiseModel {
    /// All-zero noise: detections equal ground truth with score 1.0.
    pub fn noiseless() -> NoiseModel {
        NoiseModel {
            fn_base: 0.0,
            fn_distance_coeff: 0.0,
            fp_rate: 0.0,
            fp_view_prob: 0.5,
            loc_sigma: 0.0,
            yaw_sigma: 0.0,
            size_sigma: 0.0,
            score_tp_mean: 1.0,
            score_fp_mean: 0.5,
            score_tp_concentration: 30.0,
            score_fp_concentration: 30.0,
            epoch_id: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DetsimError> {
        for (name, v) in [
            ("fn_base", self.fn_base),
            ("fp_view_prob", self.fp_view_prob),
            ("score_tp_mean", self.score_tp_mean),
            ("score_fp_mean", self.score_fp_mean),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DetsimError::Noise(format!("{name} must be in [0,1], got {v}")));
            }
        }
        for (name, v) in [
            ("fn_distance_coeff", self.fn_distance_coeff),
            ("fp_rate", self.fp_rate),
            ("loc_sigma", self.loc_sigma),
            ("yaw_sigma", self.yaw_sigma),
            ("size_sigma", self.size_sigma),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(DetsimError::Noise(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.score_tp_concentration <= 0.0 || self.score_fp_concentration <= 0.0 {
            return Err(DetsimError::Noise("score concentrations must be positive".into()));
        }
        if self.fp_rate > 0.0 && self.fp_view_prob <= 0.0 {
            return Err(DetsimError::Noise(
                "fp_view_prob must be positive when fp_rate > 0".into(),
            ));
        }
        Ok(())
    }

    /// The same detector as seen at another training checkpoint: epoch 0
    /// is the reference; other epochs get deterministically jittered
    /// error rates, so checkpoints disagree about which objects they miss
    /// and how precisely they localize.
    pub fn for_epoch(&self, epoch: u32) -> NoiseModel {
        let mut m = self.clone();
        m.epoch_id = epoch;
        if epoch != 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[SALT_EPOCH, epoch as u64]));
            let u = |rng: &mut ChaCha8Rng| rng.gen_range(-1.0..1.0);
            m.fn_base = (self.fn_base * (1.0 + 0.25 * u(&mut rng))).clamp(0.0, 1.0);
            m.fn_distance_coeff = (self.fn_distance_coeff * (1.0 + 0.20 * u(&mut rng))).max(0.0);
            m.loc_sigma = (self.loc_sigma * (1.0 + 0.15 * u(&mut rng))).max(0.0);
            m.score_tp_mean = (self.score_tp_mean * (1.0 + 0.10 * u(&mut rng))).clamp(0.01, 1.0);
            m.fp_rate = (self.fp_rate * (1.0 + 0.15 * u(&mut rng))).max(0.0);
        }
        m
    }
}

/// A deterministic noisy detector: identical (scene, view, noise, seed)
/// always produce identical detections.
#[derive(Debug, Clone)]
pub struct DetectorHandle {
    pub noise: NoiseModel,
    pub base_seed: u64,
}

impl DetectorHandle {
    pub fn new(noise: NoiseModel, base_seed: u64) -> Result<DetectorHandle, DetsimError> {
        noise.validate()?;
        Ok(DetectorHandle { noise, base_seed })
    }

    /// One detector handle per requested checkpoint.
    pub fn for_epochs(
        noise: &NoiseModel,
        base_seed: u64,
        epochs: &[u32],
    ) -> Result<Vec<DetectorHandle>, DetsimError> {
        epochs
            .iter()
            .map(|&e| DetectorHandle::new(noise.for_epoch(e), base_seed))
            .collect()
    }

    /// Detect objects in `scene` as observed through `view`. Detections
    /// are expressed in the view frame.
    pub fn detect(&self, scene: &Scene, view: &ViewTransform) -> Vec<Detection> {
        let nm = &self.noise;
        let vh = view_hash(view);
        let epoch = nm.epoch_id as u64;
        let mut out = Vec::new();

        for (i, (gt, class)) in scene.gt_boxes.iter().enumerate() {
            let idx = i as u64;
            // persistent miss: same outcome in every view of this checkpoint
            let p_persist = (nm.fn_distance_coeff * gt.range()).min(1.0);
            let mut rng_p = ChaCha8Rng::seed_from_u64(mix_seed(&[
                self.base_seed,
                epoch,
                scene.frame_id,
                SALT_MISS_PERSIST,
                idx,
            ]));
            if rng_p.gen::<f64>() < p_persist {
                continue;
            }
            // per-view miss and perturbation
            let mut rng_v = ChaCha8Rng::seed_from_u64(mix_seed(&[
                self.base_seed,
                epoch,
                scene.frame_id,
                SALT_MISS_VIEW,
                idx,
                vh,
            ]));
            if rng_v.gen::<f64>() < nm.fn_base {
                continue;
            }
            let viewed = transform_box(gt, view);
            let b = perturb_box(&viewed, nm, &mut rng_v);
            let score = sample_beta(nm.score_tp_mean, nm.score_tp_concentration, &mut rng_v);
            out.push(Detection::new(b, *class, score));
        }

        // distractor sites are a per-frame property of this checkpoint
        let mut rng_s = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.base_seed,
            epoch,
            scene.frame_id,
            SALT_FP_SITES,
        ]));
        let n_sites = if nm.fp_rate > 0.0 {
            sample_poisson(nm.fp_rate / nm.fp_view_prob, &mut rng_s)
        } else {
            0
        };
        for s in 0..n_sites {
            let class = ClassId::from_index(rng_s.gen_range(0..3)).unwrap();
            let prior = DEFAULT_SIZE_PRIORS[class.index()];
            let l = prior.l * (0.12 * std_normal(&mut rng_s)).exp();
            let w = prior.w * (0.12 * std_normal(&mut rng_s)).exp();
            let h = prior.h * (0.12 * std_normal(&mut rng_s)).exp();
            let lim = (scene.half_range - 2.0).max(1.0);
            let site = Box3D::new(
                rng_s.gen_range(-lim..lim),
                rng_s.gen_range(-lim..lim),
                h * 0.5,
                l,
                w,
                h,
                rng_s.gen_range(-std::f64::consts::PI..=std::f64::consts::PI),
            )
            .expect("site box");

            let mut rng_sv = ChaCha8Rng::seed_from_u64(mix_seed(&[
                self.base_seed,
                epoch,
                scene.frame_id,
                SALT_FP_VIEW,
                s as u64,
                vh,
            ]));
            if rng_sv.gen::<f64>() >= nm.fp_view_prob {
                continue;
            }
            let viewed = transform_box(&site, view);
            let b = perturb_box(&viewed, nm, &mut rng_sv);
            let score = sample_beta(nm.score_fp_mean, nm.score_fp_concentration, &mut rng_sv);
            out.push(Detection::new(b, class, score));
        }
        out
    }
}

fn perturb_box(b: &Box3D, nm: &NoiseModel, rng: &mut impl Rng) -> Box3D {
    Box3D {
        cx: b.cx + nm.loc_sigma * std_normal(rng),
        cy: b.cy + nm.loc_sigma * std_normal(rng),
        cz: b.cz + nm.loc_sigma * std_normal(rng),
        l: b.l * (nm.size_sigma * std_normal(rng)).exp(),
        w: b.w * (nm.size_sigma * std_normal(rng)).exp(),
        h: b.h * (nm.size_sigma * std_normal(rng)).exp(),
        yaw: normalize_yaw(b.yaw + nm.yaw_sigma * std_normal(rng)),
    }
}

// ---------------------------------------------------------------------------
// Exchange formats: point blobs and ground-truth text records.

/// Write points as little-endian f32 quadruples (x, y, z, intensity).
/// Intensity is not modeled and is written as zero.
pub fn save_points(path: &Path, points: &[[f64; 3]]) -> Result<(), DetsimError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in points {
        for v in [p[0] as f32, p[1] as f32, p[2] as f32, 0.0f32] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_points(path: &Path) -> Result<Vec<[f64; 3]>, DetsimError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(DetsimError::Parse(format!(
            "point blob length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]) as f64;
            [f(0), f(4), f(8)]
        })
        .collect())
}

/// One ground-truth record: `frame_id cx cy cz l w h yaw class`.
pub fn gt_line(frame_id: u64, b: &Box3D, class: ClassId) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {}",
        frame_id, b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, class
    )
}

pub fn parse_gt_line(line: &str) -> Result<(u64, Box3D, ClassId), DetsimError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 9 {
        return Err(DetsimError::Parse(format!(
            "expected 9 fields, got {}: `{line}`"
        , fields.len())));
    }
    let frame_id: u64 = fields[0]
        .parse()
        .map_err(|e| DetsimError::Parse(format!("frame_id: {e}")))?;
    let mut nums = [0.0f64; 7];
    for (i, n) in nums.iter_mut().enumerate() {
        *n = fields[i + 1]
            .parse()
            .map_err(|e| DetsimError::Parse(format!("field {}: {e}", i + 1)))?;
    }
    let class = ClassId::parse(fields[8])
        .ok_or_else(|| DetsimError::Parse(format!("unknown class `{}`", fields[8])))?;
    let b = Box3D::new(nums[0], nums[1], nums[2], nums[3], nums[4], nums[5], nums[6])
        .map_err(|e| DetsimError::Parse(e.to_string()))?;
    Ok((frame_id, b, class))
}
