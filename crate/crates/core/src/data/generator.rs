//! Ray-cast synthetic street scenes with paired camera images and point clouds.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetManifest, Splits, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::frame::{Calibration, Domain, Frame};
use crate::seed::derive_seed;

/// Offset added to target frame ids so ids never collide across domains.
pub const TARGET_ID_BASE: u64 = 1_000_000;

const MAX_RANGE: f64 = 60.0;
const CAMERA_LIFT: f64 = 0.1;
const SKY: [f64; 3] = [0.6, 0.75, 0.95];
const LIGHT: [f64; 3] = [0.4, 0.3, 0.866_025_403_784_438_6];
const AMBIENT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Ground,
    Box,
    Cylinder,
    Wall,
    Pole,
    Sphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub primitive: Primitive,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub classes: Vec<ClassSpec>,
    /// Object frequency per class; ground classes are always present.
    pub weights: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub focal: f64,
    pub illumination: f64,
    /// Per-channel colour of the light.
    pub light_color: [f64; 3],
    pub brightness_offset: f64,
    pub image_noise: f64,
    /// Range noise σ in metres.
    pub geometry_noise: f64,
    pub points: (usize, usize),
    pub objects: (usize, usize),
    pub dropout: f64,
    pub shape_scale: f64,
    pub sensor_height: f64,
    /// Share of rays cast outside the camera frustum.
    pub outside_fraction: f64,
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

impl DomainSpec {
    pub fn source() -> Self {
        let class = |name: &str, primitive, color| ClassSpec { name: name.into(), primitive, color };
        DomainSpec {
            classes: vec![
                class("ground", Primitive::Ground, [0.45, 0.42, 0.38]),
                class("car", Primitive::Box, [0.8, 0.15, 0.15]),
                class("person", Primitive::Cylinder, [0.9, 0.75, 0.2]),
                class("building", Primitive::Wall, [0.5, 0.55, 0.75]),
                class("pole", Primitive::Pole, [0.15, 0.15, 0.2]),
                class("vegetation", Primitive::Sphere, [0.2, 0.65, 0.2]),
            ],
            weights: vec![0.0, 0.3, 0.2, 0.15, 0.15, 0.2],
            height: 64,
            width: 64,
            focal: 32.0,
            illumination: 1.0,
            light_color: [1.0, 1.0, 1.0],
            brightness_offset: 0.0,
            image_noise: 0.02,
            geometry_noise: 0.02,
            points: (512, 1024),
            objects: (8, 14),
            dropout: 0.0,
            shape_scale: 1.0,
            sensor_height: 1.5,
            outside_fraction: 0.1,
        }
    }

    /// Source settings moved toward the most shifted knobs by `shift ∈ [0, 1]`.
    pub fn target(shift: f64) -> Self {
        let s = shift.clamp(0.0, 1.0);
        let base = Self::source();
        DomainSpec {
            illumination: lerp(base.illumination, 0.3, s),
            light_color: [1.0, lerp(1.0, 0.8, s), lerp(1.0, 0.55, s)],
            brightness_offset: lerp(base.brightness_offset, 0.05, s),
            image_noise: lerp(base.image_noise, 0.08, s),
            geometry_noise: lerp(base.geometry_noise, 0.06, s),
            dropout: lerp(base.dropout, 0.5, s),
            shape_scale: lerp(base.shape_scale, 1.5, s),
            sensor_height: lerp(base.sensor_height, 2.1, s),
            ..base
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            rotation: [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
            translation: [0.0, CAMERA_LIFT, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.classes.len() < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes.len()));
        }
        if self.weights.len() != self.classes.len() {
            return bad("one weight per class required".into());
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("class weights must be non-negative and sum to 1".into());
        }
        let active = self
            .classes
            .iter()
            .zip(&self.weights)
            .any(|(c, w)| c.primitive == Primitive::Ground || *w > 0.0);
        if !active {
            return bad("no class can produce points".into());
        }
        let objects_active = self
            .classes
            .iter()
            .zip(&self.weights)
            .any(|(c, w)| c.primitive != Primitive::Ground && *w > 0.0);
        if self.objects.1 > 0 && !objects_active {
            return bad("objects requested but every object weight is zero".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.points.0 == 0 || self.points.0 > self.points.1 || self.objects.0 > self.objects.1 {
            return bad("invalid point or object count range".into());
        }
        if self.height == 0 || self.width == 0 || !(self.focal > 0.0) || !(self.shape_scale > 0.0) {
            return bad("image size, focal length and shape scale must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.illumination)
            || !(0.0..1.0).contains(&self.outside_fraction)
            || self.light_color.iter().any(|c| !(0.0..=1.0).contains(c))
        {
            return bad("illumination, light colour or outside fraction out of range".into());
        }
        Ok(())
    }
}

/// Hex sha256 of the serialised specs.
pub fn spec_hash(specs: &[&DomainSpec]) -> String {
    let json = serde_json::to_vec(specs).expect("specs serialise");
    hex::encode(Sha256::digest(&json))
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Plane { z: f64 },
    /// Box standing on the ground, rotated by `yaw` about the vertical axis.
    Block { center: [f64; 3], half: [f64; 3], yaw: f64 },
    Column { x: f64, y: f64, radius: f64, z0: f64, z1: f64 },
    Ball { center: [f64; 3], radius: f64 },
}

#[derive(Clone, Copy, Debug)]
struct Object {
    class: usize,
    shape: Shape,
    tint: f64,
}

struct Hit {
    t: f64,
    normal: [f64; 3],
    class: usize,
    tint: f64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn intersect(shape: &Shape, o: [f64; 3], d: [f64; 3]) -> Option<(f64, [f64; 3])> {
    const EPS: f64 = 1e-9;
    match *shape {
        Shape::Plane { z } => {
            if d[2] >= -EPS {
                return None;
            }
            let t = (z - o[2]) / d[2];
            let reach = t * dot(d, d).sqrt();
            (t > EPS && reach <= MAX_RANGE).then_some((t, [0.0, 0.0, 1.0]))
        }
        Shape::Block { center, half, yaw } => {
            let (s, c) = yaw.sin_cos();
            let rel = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
            let lo = [c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]];
            let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
            let (mut t0, mut t1, mut axis, mut sign) = (f64::NEG_INFINITY, f64::INFINITY, 0, 1.0);
            for k in 0..3 {
                if ld[k].abs() < EPS {
                    if lo[k].abs() > half[k] {
                        return None;
                    }
                    continue;
                }
                let (mut a, mut b) = ((-half[k] - lo[k]) / ld[k], (half[k] - lo[k]) / ld[k]);
                let mut sg = -1.0;
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                    sg = 1.0;
                }
                if a > t0 {
                    t0 = a;
                    axis = k;
                    sign = sg;
                }
                t1 = t1.min(b);
            }
            if t0 > t1 || t0 <= EPS {
                return None;
            }
            let mut ln = [0.0; 3];
            ln[axis] = sign;
            Some((t0, [c * ln[0] - s * ln[1], s * ln[0] + c * ln[1], ln[2]]))
        }
        Shape::Column { x, y, radius, z0, z1 } => {
            let (px, py) = (o[0] - x, o[1] - y);
            let a = d[0] * d[0] + d[1] * d[1];
            let mut best: Option<(f64, [f64; 3])> = None;
            if a > EPS {
                let b = px * d[0] + py * d[1];
                let cc = px * px + py * py - radius * radius;
                let disc = b * b - a * cc;
                if disc >= 0.0 {
                    let t = (-b - disc.sqrt()) / a;
                    let z = o[2] + t * d[2];
                    if t > EPS && z >= z0 && z <= z1 {
                        let (nx, ny) = ((px + t * d[0]) / radius, (py + t * d[1]) / radius);
                        best = Some((t, [nx, ny, 0.0]));
                    }
                }
            }
            if d[2] < -EPS {
                let t = (z1 - o[2]) / d[2];
                let (qx, qy) = (px + t * d[0], py + t * d[1]);
                if t > EPS && qx * qx + qy * qy <= radius * radius && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, [0.0, 0.0, 1.0]));
                }
            }
            best
        }
        Shape::Ball { center, radius } => {
            let rel = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
            let a = dot(d, d);
            let b = dot(rel, d);
            let disc = b * b - a * (dot(rel, rel) - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let t = (-b - disc.sqrt()) / a;
            if t <= EPS {
                return None;
            }
            let p = [rel[0] + t * d[0], rel[1] + t * d[1], rel[2] + t * d[2]];
            Some((t, [p[0] / radius, p[1] / radius, p[2] / radius]))
        }
    }
}

fn cast(objects: &[Object], o: [f64; 3], d: [f64; 3]) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for obj in objects {
        if let Some((t, normal)) = intersect(&obj.shape, o, d) {
            if best.as_ref().is_none_or(|b| t < b.t) {
                best = Some(Hit { t, normal, class: obj.class, tint: obj.tint });
            }
        }
    }
    best
}

fn place(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Vec<Object> {
    let g = -spec.sensor_height;
    let k = spec.shape_scale;
    let mut objects: Vec<Object> = spec
        .classes
        .iter()
        .enumerate()
        .filter(|(_, c)| c.primitive == Primitive::Ground)
        .map(|(class, _)| Object { class, shape: Shape::Plane { z: g }, tint: rng.random_range(0.9..1.1) })
        .collect();
    let pool: Vec<(usize, f64)> = spec
        .classes
        .iter()
        .zip(&spec.weights)
        .enumerate()
        .filter(|(_, (c, w))| c.primitive != Primitive::Ground && **w > 0.0)
        .map(|(i, (_, w))| (i, *w))
        .collect();
    let total: f64 = pool.iter().map(|p| p.1).sum();
    if pool.is_empty() {
        return objects;
    }
    let n = rng.random_range(spec.objects.0..=spec.objects.1);
    for _ in 0..n {
        let mut r = rng.random::<f64>() * total;
        let mut class = pool[pool.len() - 1].0;
        for &(i, w) in &pool {
            if r < w {
                class = i;
                break;
            }
            r -= w;
        }
        let far = spec.classes[class].primitive == Primitive::Wall;
        let x = if far { rng.random_range(16.0..30.0) } else { rng.random_range(4.0..22.0) };
        let y = rng.random_range(-0.8..0.8) * x;
        let yaw = rng.random_range(0.0..std::f64::consts::PI);
        let shape = match spec.classes[class].primitive {
            Primitive::Box => {
                let half = [2.0 * k, 0.9 * k, 0.75 * k];
                Shape::Block { center: [x, y, g + half[2]], half, yaw }
            }
            Primitive::Wall => {
                let half = [rng.random_range(4.0..8.0) * k, 0.5 * k, rng.random_range(3.0..5.0) * k];
                Shape::Block { center: [x, y, g + half[2]], half, yaw }
            }
            Primitive::Cylinder => Shape::Column { x, y, radius: 0.35 * k, z0: g, z1: g + 1.8 * k },
            Primitive::Pole => Shape::Column { x, y, radius: 0.12 * k, z0: g, z1: g + 5.0 * k },
            Primitive::Sphere => {
                let radius = rng.random_range(1.0..2.0) * k;
                Shape::Ball { center: [x, y, g + 0.8 * radius], radius }
            }
            Primitive::Ground => Shape::Plane { z: g },
        };
        objects.push(Object { class, shape, tint: rng.random_range(0.85..1.15) });
    }
    objects
}

/// A generated frame plus the generator-side camera-visibility of each point.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedFrame {
    pub frame: Frame,
    pub visible: Vec<bool>,
}

pub fn generate_frame(spec: &DomainSpec, seed: u64, id: u64, domain: Domain) -> Result<GeneratedFrame> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = place(spec, &mut rng);
    let calib = spec.calibration();
    let origin = calib.camera_center();
    let (h, w) = (spec.height, spec.width);
    let ray = |u: f64, v: f64| calib.direction_to_sensor([(u - calib.cx) / calib.fx, (v - calib.cy) / calib.fy, 1.0]);

    let noise = Normal::new(0.0, spec.image_noise.max(0.0)).map_err(|e| Error::Spec(e.to_string()))?;
    let mut image = Vec::with_capacity(h * w * 3);
    for v in 0..h {
        for u in 0..w {
            let d = ray(u as f64 + 0.5, v as f64 + 0.5);
            let (base, shade) = match cast(&objects, origin, d) {
                Some(hit) => {
                    let lambert = dot(hit.normal, LIGHT).abs();
                    let c = spec.classes[hit.class].color;
                    ([c[0] * hit.tint, c[1] * hit.tint, c[2] * hit.tint], AMBIENT + (1.0 - AMBIENT) * lambert)
                }
                None => (SKY, 1.0),
            };
            for (ch, light) in base.into_iter().zip(spec.light_color) {
                let val = ch * light * shade * spec.illumination + spec.brightness_offset + noise.sample(&mut rng);
                image.push(val.clamp(0.0, 1.0));
            }
        }
    }

    let range_noise = Normal::new(0.0, spec.geometry_noise.max(0.0)).map_err(|e| Error::Spec(e.to_string()))?;
    let wanted = rng.random_range(spec.points.0..=spec.points.1);
    let (mut points, mut labels, mut visible) = (Vec::new(), Vec::new(), Vec::new());
    let (mut hits, mut attempts) = (0usize, 0usize);
    while hits < wanted && attempts < 20 * wanted {
        attempts += 1;
        let outside = rng.random::<f64>() < spec.outside_fraction;
        let (u, v) = if outside {
            let band = 0.3 * w as f64;
            let u = if rng.random::<bool>() {
                rng.random_range(-band..-0.05)
            } else {
                w as f64 + rng.random_range(0.05..band)
            };
            (u, rng.random_range(0.05..h as f64 - 0.05))
        } else {
            let cu = rng.random_range(0..w) as f64;
            let cv = rng.random_range(0..h) as f64;
            (cu + rng.random_range(0.05..0.95), cv + rng.random_range(0.05..0.95))
        };
        let d = ray(u, v);
        let Some(hit) = cast(&objects, origin, d) else { continue };
        hits += 1;
        let t = (hit.t + range_noise.sample(&mut rng) / dot(d, d).sqrt()).max(0.05);
        if rng.random::<f64>() < spec.dropout {
            continue;
        }
        points.push([origin[0] + t * d[0], origin[1] + t * d[1], origin[2] + t * d[2]]);
        labels.push(Some(hit.class));
        visible.push(!outside);
    }
    if points.is_empty() {
        return Err(Error::Spec(format!("frame {id} produced no points")));
    }
    let frame = Frame { id, domain, height: h, width: w, image, points, labels, calibration: calib };
    frame.validate(spec.num_classes())?;
    Ok(GeneratedFrame { frame, visible })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub source: usize,
    pub target_train: usize,
    pub target_test: usize,
}

impl Default for PairCounts {
    fn default() -> Self {
        PairCounts { source: 60, target_train: 40, target_test: 20 }
    }
}

/// Generator-side metadata withheld from the learner.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenMeta {
    pub version: u32,
    /// Source frames drawn from the target settings.
    pub target_like: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    pub source: Dataset,
    pub target: Dataset,
    pub hidden: HiddenMeta,
}

/// Source frames are a `rho`-mixture of target-like and pure-source scenes.
pub fn generate_domain_pair(
    source: &DomainSpec,
    target: &DomainSpec,
    counts: PairCounts,
    rho: f64,
    seed: u64,
) -> Result<DomainPair> {
    if counts.source == 0 || counts.target_train == 0 || counts.target_test == 0 {
        return Err(Error::arg("every frame count must be positive"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::arg(format!("overlap fraction {rho} outside [0, 1]")));
    }
    if source.num_classes() != target.num_classes() {
        return Err(Error::Spec("source and target class counts differ".into()));
    }
    source.validate()?;
    target.validate()?;
    let hash = spec_hash(&[source, target]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xF1A6));
    let n_like = (rho * counts.source as f64).round() as usize;
    let mut like = sample(&mut rng, counts.source, n_like).into_vec();
    like.sort_unstable();

    let mut src_frames = Vec::with_capacity(counts.source);
    for i in 0..counts.source {
        let spec = if like.binary_search(&i).is_ok() { target } else { source };
        let s = derive_seed(derive_seed(seed, 1), i as u64);
        src_frames.push(generate_frame(spec, s, i as u64, Domain::Source)?.frame);
    }
    let n_tgt = counts.target_train + counts.target_test;
    let mut tgt_frames = Vec::with_capacity(n_tgt);
    for i in 0..n_tgt {
        let s = derive_seed(derive_seed(seed, 2), i as u64);
        tgt_frames.push(generate_frame(target, s, TARGET_ID_BASE + i as u64, Domain::Target)?.frame);
    }
    let ids = |fs: &[Frame]| fs.iter().map(|f| f.id).collect::<Vec<_>>();
    let src_ids = ids(&src_frames);
    let tgt_ids = ids(&tgt_frames);
    let manifest = |domain, frame_ids: Vec<u64>, splits| DatasetManifest {
        version: FORMAT_VERSION,
        domain,
        classes: source.class_names(),
        spec_hash: hash.clone(),
        seed,
        frame_ids,
        splits,
    };
    Ok(DomainPair {
        source: Dataset {
            manifest: manifest(Domain::Source, src_ids.clone(), Splits { train: src_ids, test: vec![] }),
            frames: src_frames,
        },
        target: Dataset {
            manifest: manifest(
                Domain::Target,
                tgt_ids.clone(),
                Splits {
                    train: tgt_ids[..counts.target_train].to_vec(),
                    test: tgt_ids[counts.target_train..].to_vec(),
                },
            ),
            frames: tgt_frames,
        },
        hidden: HiddenMeta { version: FORMAT_VERSION, target_like: like.iter().map(|&i| i as u64).collect() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::project_points;

    #[test]
    fn deterministic_and_labeled() {
        let spec = DomainSpec::source();
        let a = generate_frame(&spec, 5, 0, Domain::Source).unwrap();
        let b = generate_frame(&spec, 5, 0, Domain::Source).unwrap();
        assert_eq!(a, b);
        let f = &a.frame;
        assert!(f.points.len() >= 400 && f.points.len() <= 1024, "{}", f.points.len());
        assert!(f.labels.iter().all(|l| l.is_some_and(|c| c < spec.num_classes())));
        assert!(f.image.iter().all(|v| (0.0..=1.0).contains(v)));
        let classes: std::collections::HashSet<_> = f.labels.iter().flatten().collect();
        assert!(classes.len() >= 3, "{classes:?}");
    }

    #[test]
    fn visible_points_survive_projection() {
        for seed in 0..5 {
            let g = generate_frame(&DomainSpec::target(1.0), seed, 0, Domain::Target).unwrap();
            let p = project_points(&g.frame.points, &g.frame.calibration, (64, 64)).unwrap();
            let kept: std::collections::HashSet<usize> = p.kept.iter().copied().collect();
            for (i, vis) in g.visible.iter().enumerate() {
                assert_eq!(*vis, kept.contains(&i), "seed {seed} point {i}");
            }
            let share = g.visible.iter().filter(|v| !**v).count() as f64 / g.visible.len() as f64;
            assert!(share > 0.03 && share < 0.2, "{share}");
        }
    }

    #[test]
    fn illumination_raises_intensity() {
        let dark = DomainSpec { illumination: 0.0, ..DomainSpec::source() };
        let bright = DomainSpec { illumination: 1.0, ..DomainSpec::source() };
        let a = generate_frame(&dark, 3, 0, Domain::Source).unwrap().frame;
        let b = generate_frame(&bright, 3, 0, Domain::Source).unwrap().frame;
        assert!(b.mean_intensity() > a.mean_intensity());
    }

    #[test]
    fn dropout_thins_points() {
        let full = generate_frame(&DomainSpec::source(), 9, 0, Domain::Source).unwrap().frame;
        let spec = DomainSpec { dropout: 0.5, ..DomainSpec::source() };
        let thin = generate_frame(&spec, 9, 0, Domain::Source).unwrap().frame;
        assert!(thin.points.len() < full.points.len() * 3 / 4);
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut s = DomainSpec::source();
        s.classes.truncate(1);
        s.weights = vec![1.0];
        assert!(matches!(s.validate(), Err(Error::Spec(_))));
        let mut s = DomainSpec::source();
        for c in &mut s.classes {
            c.primitive = Primitive::Box;
        }
        s.weights = vec![0.0; 6];
        assert!(matches!(generate_frame(&s, 0, 0, Domain::Source), Err(Error::Spec(_))));
        let s = DomainSpec { dropout: 1.0, ..DomainSpec::source() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn pair_mixture_counts() {
        let counts = PairCounts { source: 10, target_train: 3, target_test: 2 };
        let src = DomainSpec { points: (60, 80), ..DomainSpec::source() };
        let tgt = DomainSpec { points: (60, 80), ..DomainSpec::target(1.0) };
        let p = generate_domain_pair(&src, &tgt, counts, 0.3, 1).unwrap();
        assert_eq!(p.hidden.target_like.len(), 3);
        assert_eq!(p.source.frames.len(), 10);
        assert_eq!(p.target.manifest.splits.train.len(), 3);
        assert_eq!(p.target.manifest.splits.test.len(), 2);
        assert!(p.source.frames.iter().all(|f| f.domain == Domain::Source));
        let none = generate_domain_pair(&src, &tgt, counts, 0.0, 1).unwrap();
        assert!(none.hidden.target_like.is_empty());
        let zero = PairCounts { source: 0, ..counts };
        assert!(matches!(generate_domain_pair(&src, &tgt, zero, 0.3, 1), Err(Error::Argument(_))));
    }
}
