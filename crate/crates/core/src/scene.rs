//! Synthetic street scenes seen by the RIS cameras.
//!
//! Vehicles (the candidate UEs) are boxes on a lane grid. Cameras are
//! pinhole models mounted at the surface; the detector projects every
//! visible vehicle box into a class + bounding box, with optional jitter,
//! misses and clutter. Detections are then encoded into the fixed-width,
//! zero-padded UE-information matrix fed to the beam-set network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::channel::{segment_clear, ArrayPose};
use crate::error::invalid;
use crate::geometry::{Aabb, Vec3};
use crate::{Error, Result};

pub const DEFAULT_CLASSES: usize = 3;
pub const DEFAULT_MAX_UES: usize = 8;

/// Pinhole camera. `yaw_deg` is the heading in the ground plane measured
/// from +x, `pitch_deg` is positive upwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub position: Vec3,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
    pub image_w: u32,
    pub image_h: u32,
}

const NEAR_PLANE: f64 = 0.1;

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(invalid(
                "fov_deg",
                format!("must lie in (0, 180), got {}", self.fov_deg),
            ));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(invalid("image size", "dimensions must be positive"));
        }
        Ok(())
    }

    /// Forward, right and down unit vectors.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (y, p) = (self.yaw_deg.to_radians(), self.pitch_deg.to_radians());
        let fwd = Vec3::new(p.cos() * y.cos(), p.cos() * y.sin(), p.sin());
        let right = fwd.cross(Vec3::new(0.0, 0.0, 1.0)).normalized();
        let down = fwd.cross(right);
        (fwd, right, down)
    }

    pub fn focal_px(&self) -> f64 {
        0.5 * self.image_w as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    /// Pixel coordinates of `p`, or `None` when it is behind the near plane.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let (fwd, right, down) = self.basis();
        let rel = p - self.position;
        let z = rel.dot(fwd);
        if z <= NEAR_PLANE {
            return None;
        }
        let f = self.focal_px();
        Some((
            0.5 * self.image_w as f64 + f * rel.dot(right) / z,
            0.5 * self.image_h as f64 + f * rel.dot(down) / z,
        ))
    }

    pub fn in_image(&self, px: (f64, f64)) -> bool {
        (0.0..=self.image_w as f64).contains(&px.0) && (0.0..=self.image_h as f64).contains(&px.1)
    }

    pub fn sees_point(&self, p: Vec3) -> bool {
        self.project(p).is_some_and(|px| self.in_image(px))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneUe {
    /// Centre of the vehicle box.
    pub position: Vec3,
    /// Box extents (length along x, width along y, height).
    pub size: Vec3,
    pub class_id: usize,
}

impl SceneUe {
    pub fn body(&self) -> Aabb {
        Aabb::from_center(self.position, self.size)
    }

    /// Roof-mounted antenna.
    pub fn antenna(&self) -> Vec3 {
        self.position + Vec3::new(0.0, 0.0, 0.5 * self.size.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ues: Vec<SceneUe>,
    pub blockers: Vec<Aabb>,
    pub ris_pose: ArrayPose,
    pub bs_pos: Vec3,
    pub classes: usize,
    pub seed: u64,
}

impl Scene {
    pub fn bs_has_los(&self, ue: &SceneUe) -> bool {
        segment_clear(self.bs_pos, ue.antenna(), &self.blockers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub lanes_y: Vec<f64>,
    pub street_x: [f64; 2],
    pub ue_count_mean: f64,
    pub max_ues: usize,
    /// Sampling weight of each vehicle class.
    pub class_mix: Vec<f64>,
    /// Box extents per class.
    pub class_sizes: Vec<Vec3>,
    pub min_gap_m: f64,
    pub blocked_only: bool,
    pub placement_attempts: usize,
    pub ris_pose: ArrayPose,
    pub bs_pos: Vec3,
    pub blockers: Vec<Aabb>,
    /// When nonempty, a vehicle is only placed where some camera sees it.
    pub cameras: Vec<CameraModel>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            lanes_y: vec![4.0, 8.0, 12.0, 16.0, 20.0],
            street_x: [-40.0, 40.0],
            ue_count_mean: 2.0,
            max_ues: DEFAULT_MAX_UES,
            class_mix: vec![0.7, 0.15, 0.15],
            // car, bus, truck
            class_sizes: vec![
                Vec3::new(4.5, 1.8, 1.5),
                Vec3::new(12.0, 2.5, 3.2),
                Vec3::new(8.0, 2.5, 3.6),
            ],
            min_gap_m: 1.0,
            blocked_only: true,
            placement_attempts: 64,
            ris_pose: default_ris_pose(),
            // on the RIS boresight
            bs_pos: Vec3::new(0.0, -60.0, 8.0),
            blockers: default_buildings(),
            cameras: default_cameras().to_vec(),
        }
    }
}

pub fn default_ris_pose() -> ArrayPose {
    ArrayPose::new(
        Vec3::new(0.0, 30.0, 8.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
    )
}

/// Two corner blocks flanking the cross street where the BS stands, plus
/// the facade carrying the surface.
pub fn default_buildings() -> Vec<Aabb> {
    vec![
        Aabb::new(Vec3::new(-90.0, -90.0, 0.0), Vec3::new(-6.0, 0.0, 40.0)),
        Aabb::new(Vec3::new(6.0, -90.0, 0.0), Vec3::new(90.0, 0.0, 40.0)),
        Aabb::new(Vec3::new(-90.0, 30.2, 0.0), Vec3::new(90.0, 60.0, 40.0)),
    ]
}

/// Central wide camera and an oblique side camera.
pub fn default_cameras() -> [CameraModel; 2] {
    let pos = default_ris_pose().position;
    [
        CameraModel {
            position: pos,
            yaw_deg: -90.0,
            pitch_deg: -20.0,
            fov_deg: 110.0,
            image_w: 640,
            image_h: 360,
        },
        CameraModel {
            position: pos,
            yaw_deg: -35.0,
            pitch_deg: -15.0,
            fov_deg: 75.0,
            image_w: 640,
            image_h: 360,
        },
    ]
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lanes_y.is_empty() {
            return Err(invalid("lanes_y", "street needs at least one lane"));
        }
        if !(self.street_x[1] > self.street_x[0]) {
            return Err(invalid("street_x", "empty street extent"));
        }
        if self.class_mix.is_empty() || self.class_mix.len() != self.class_sizes.len() {
            return Err(invalid("class_mix", "needs one weight per class size"));
        }
        if !(self.ue_count_mean >= 0.0 && self.ue_count_mean.is_finite()) {
            return Err(invalid("ue_count_mean", "must be finite and nonnegative"));
        }
        for cam in &self.cameras {
            cam.validate()?;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.class_sizes.len()
    }
}

/// Sample one scene. Vehicle count is Poisson with mean `ue_count_mean`,
/// capped at `max_ues`; a vehicle that cannot be placed within
/// `placement_attempts` draws is dropped.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = if config.ue_count_mean > 0.0 && config.max_ues > 0 {
        let pois = Poisson::new(config.ue_count_mean)
            .map_err(|e| invalid("ue_count_mean", e.to_string()))?;
        (pois.sample(&mut rng) as usize).min(config.max_ues)
    } else {
        0
    };
    let classes =
        WeightedIndex::new(&config.class_mix).map_err(|e| invalid("class_mix", e.to_string()))?;
    let mut scene = Scene {
        ues: Vec::with_capacity(count),
        blockers: config.blockers.clone(),
        ris_pose: config.ris_pose,
        bs_pos: config.bs_pos,
        classes: config.classes(),
        seed,
    };
    let gap = Vec3::new(config.min_gap_m, 0.0, 0.0);
    for _ in 0..count {
        for _ in 0..config.placement_attempts {
            let class_id = classes.sample(&mut rng);
            let size = config.class_sizes[class_id];
            let lane = config.lanes_y[rng.gen_range(0..config.lanes_y.len())];
            let x = rng.gen_range(config.street_x[0]..config.street_x[1]);
            let ue = SceneUe {
                position: Vec3::new(x, lane, 0.5 * size.z),
                size,
                class_id,
            };
            let padded = Aabb::from_center(ue.position, ue.size + gap * 2.0);
            if scene.ues.iter().any(|o| o.body().overlaps(&padded)) {
                continue;
            }
            if config.blocked_only && scene.bs_has_los(&ue) {
                continue;
            }
            if !config.cameras.is_empty()
                && !config.cameras.iter().any(|c| c.sees_point(ue.position))
            {
                continue;
            }
            scene.ues.push(ue);
            break;
        }
    }
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    fn from_edges(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x_center: 0.5 * (x0 + x1),
            y_center: 0.5 * (y0 + y1),
            width: x1 - x0,
            height: y1 - y0,
        }
    }

    /// Clip to the image and keep at least one pixel of extent.
    fn clamped(self, w: f64, h: f64) -> Self {
        let clip = |lo: f64, hi: f64, max: f64| {
            let lo = lo.clamp(0.0, max - 1.0);
            let hi = hi.clamp(lo + 1.0, max);
            (lo, hi)
        };
        let (x0, x1) = clip(
            self.x_center - 0.5 * self.width,
            self.x_center + 0.5 * self.width,
            w,
        );
        let (y0, y1) = clip(
            self.y_center - 0.5 * self.height,
            self.y_center + 0.5 * self.height,
            h,
        );
        Self::from_edges(x0, y0, x1, y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedUE {
    pub class_id: usize,
    pub bbox: BBox,
    /// Scene vehicle that produced the detection; `None` for clutter.
    #[serde(default)]
    pub source: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    pub sigma_px: f64,
    pub p_miss: f64,
    /// Mean clutter detections per frame.
    pub false_alarm_rate: f64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            sigma_px: 2.0,
            p_miss: 0.05,
            false_alarm_rate: 0.02,
        }
    }
}

impl DetectorNoise {
    pub fn none() -> Self {
        Self {
            sigma_px: 0.0,
            p_miss: 0.0,
            false_alarm_rate: 0.0,
        }
    }
}

/// Noise-free projected box of a vehicle, if the camera sees it: centre in
/// the image, whole box in front of the camera and the line of sight from
/// the camera to the centre clear of blockers.
pub fn projected_bbox(ue: &SceneUe, cam: &CameraModel, blockers: &[Aabb]) -> Option<BBox> {
    if !cam.sees_point(ue.position) || !segment_clear(cam.position, ue.position, blockers) {
        return None;
    }
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in ue.body().corners() {
        let (x, y) = cam.project(corner)?;
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    Some(BBox::from_edges(lo.0, lo.1, hi.0, hi.1).clamped(cam.image_w as f64, cam.image_h as f64))
}

/// Indices of the scene vehicles the camera sees (ground-truth candidates).
pub fn visible_ues(scene: &Scene, cam: &CameraModel) -> Vec<usize> {
    scene
        .ues
        .iter()
        .enumerate()
        .filter(|(_, ue)| projected_bbox(ue, cam, &scene.blockers).is_some())
        .map(|(i, _)| i)
        .collect()
}

/// Synthetic detector: projected boxes with pixel jitter, random misses and
/// clutter, sorted by `x_center`.
pub fn project_detect(
    scene: &Scene,
    cam: &CameraModel,
    noise: &DetectorNoise,
    seed: u64,
) -> Vec<DetectedUE> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cam.image_w as f64, cam.image_h as f64);
    let jitter = Normal::new(0.0, noise.sigma_px.max(0.0)).ok();
    let mut out = Vec::new();
    for (i, ue) in scene.ues.iter().enumerate() {
        // Draw every random quantity per vehicle so visibility changes do not
        // shift the stream for the others.
        let miss = rng.gen::<f64>() < noise.p_miss;
        let mut d = [0.0; 4];
        if let Some(n) = jitter.filter(|_| noise.sigma_px > 0.0) {
            for v in &mut d {
                *v = n.sample(&mut rng);
            }
        }
        let Some(bb) = projected_bbox(ue, cam, &scene.blockers) else {
            continue;
        };
        if miss {
            continue;
        }
        let bbox = BBox {
            x_center: bb.x_center + d[0],
            y_center: bb.y_center + d[1],
            width: (bb.width + d[2]).max(1.0),
            height: (bb.height + d[3]).max(1.0),
        }
        .clamped(w, h);
        out.push(DetectedUE {
            class_id: ue.class_id,
            bbox,
            source: Some(i),
        });
    }
    if noise.false_alarm_rate > 0.0 {
        if let Ok(p) = Poisson::new(noise.false_alarm_rate) {
            let n = p.sample(&mut rng) as usize;
            for _ in 0..n {
                let bbox = BBox {
                    x_center: rng.gen_range(0.0..w),
                    y_center: rng.gen_range(0.0..h),
                    width: rng.gen_range(20.0..120.0),
                    height: rng.gen_range(15.0..80.0),
                }
                .clamped(w, h);
                out.push(DetectedUE {
                    class_id: rng.gen_range(0..scene.classes.max(1)),
                    bbox,
                    source: None,
                });
            }
        }
    }
    out.sort_by(|a, b| a.bbox.x_center.total_cmp(&b.bbox.x_center));
    out
}

/// Associate each detection with the visible vehicle whose projected centre
/// is nearest, gated at half the box diagonal.
pub fn match_detections(
    dets: &[DetectedUE],
    scene: &Scene,
    cam: &CameraModel,
) -> Vec<Option<usize>> {
    let centres: Vec<(usize, (f64, f64))> = visible_ues(scene, cam)
        .into_iter()
        .filter_map(|i| cam.project(scene.ues[i].position).map(|px| (i, px)))
        .collect();
    dets.iter()
        .map(|d| {
            let gate = 0.5 * d.bbox.width.hypot(d.bbox.height);
            centres
                .iter()
                .map(|&(i, (x, y))| (i, (x - d.bbox.x_center).hypot(y - d.bbox.y_center)))
                .filter(|&(_, dist)| dist <= gate)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
        })
        .collect()
}

/// Zero-padded matrix of per-UE vectors `[one-hot class, x/w, y/h, bw/w, bh/h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UEInfoMatrix {
    pub columns: Vec<Vec<f64>>,
    pub valid_count: usize,
    /// Set when more than `U_max` detections were supplied.
    #[serde(default)]
    pub truncated: bool,
}

impl UEInfoMatrix {
    pub fn column_len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn max_ues(&self) -> usize {
        self.columns.len()
    }

    pub fn valid_columns(&self) -> &[Vec<f64>] {
        &self.columns[..self.valid_count]
    }
}

pub fn encode_ue_info(
    dets: &[DetectedUE],
    cam: &CameraModel,
    classes: usize,
    max_ues: usize,
) -> Result<UEInfoMatrix> {
    let (w, h) = (cam.image_w as f64, cam.image_h as f64);
    let mut columns = vec![vec![0.0; classes + 4]; max_ues];
    for d in dets {
        if d.class_id >= classes {
            return Err(Error::ClassOutOfRange {
                class_id: d.class_id,
                classes,
            });
        }
    }
    let valid = dets.len().min(max_ues);
    for (col, d) in columns.iter_mut().zip(dets) {
        col[d.class_id] = 1.0;
        let b = d.bbox;
        for (slot, v) in col[classes..].iter_mut().zip([
            b.x_center / w,
            b.y_center / h,
            b.width / w,
            b.height / h,
        ]) {
            *slot = v.clamp(0.0, 1.0);
        }
    }
    Ok(UEInfoMatrix {
        columns,
        valid_count: valid,
        truncated: dets.len() > max_ues,
    })
}
