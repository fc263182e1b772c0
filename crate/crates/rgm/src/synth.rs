//! Procedural registration-problem generator.
//!
//! Produces (source, target, ground truth) triples under four protocols:
//! clean one-to-one pairs, Gaussian-noise pairs, partial overlaps from
//! random plane crops, and their combination. Shapes come from a small
//! procedural family instead of mesh datasets so every sample is
//! reproducible from a seed.

use crate::correspondence::BinaryCorrespondence;
use crate::geom::{apply_transform, random_transform, PointCloud, RigidTransform, Vec3};
use crate::scalar::{cast, Real};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

/// Procedural shape family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeId {
    Sphere,
    Box,
    Cylinder,
    Torus,
    TwoBox,
    Helix,
}

/// Every shape, in the order datasets cycle through them.
pub const ALL_SHAPES: [ShapeId; 6] = [
    ShapeId::Sphere,
    ShapeId::Box,
    ShapeId::Cylinder,
    ShapeId::Torus,
    ShapeId::TwoBox,
    ShapeId::Helix,
];

impl fmt::Display for ShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ShapeId::Sphere => "sphere",
            ShapeId::Box => "box",
            ShapeId::Cylinder => "cylinder",
            ShapeId::Torus => "torus",
            ShapeId::TwoBox => "two_box",
            ShapeId::Helix => "helix",
        };
        f.write_str(name)
    }
}

impl FromStr for ShapeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeId::Sphere),
            "box" => Ok(ShapeId::Box),
            "cylinder" => Ok(ShapeId::Cylinder),
            "torus" => Ok(ShapeId::Torus),
            "two_box" => Ok(ShapeId::TwoBox),
            "helix" => Ok(ShapeId::Helix),
            other => Err(Error::Parameter(format!(
                "unknown shape `{other}` (expected sphere, box, cylinder, torus, two_box or helix)"
            ))),
        }
    }
}

/// Samples `n_points` from the shape's surface, then rescales about the
/// shape's canonical origin so the farthest point has norm exactly 1.
pub fn sample_shape<T: Real, R: Rng>(
    shape: ShapeId,
    n_points: usize,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    if n_points < 8 {
        return Err(Error::Parameter(format!(
            "need at least 8 points, got {n_points}"
        )));
    }
    let mut points: Vec<[f64; 3]> = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        points.push(match shape {
            ShapeId::Sphere => sample_sphere(rng),
            ShapeId::Box => sample_box([0.0; 3], [1.0; 3], rng),
            ShapeId::Cylinder => sample_cylinder(0.5, 1.0, rng),
            ShapeId::Torus => sample_torus(0.7, 0.3, rng),
            ShapeId::TwoBox => sample_two_box(rng),
            ShapeId::Helix => sample_helix(rng),
        });
    }
    let max_norm = points
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0f64, f64::max);
    PointCloud::new(
        points
            .iter()
            .map(|p| {
                Vec3::new(
                    cast(p[0] / max_norm),
                    cast(p[1] / max_norm),
                    cast(p[2] / max_norm),
                )
            })
            .collect(),
    )
}

/// Standard normal draw via the Box-Muller transform; one uniform pair per
/// sample keeps the stream layout independent of call history.
pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn sample_sphere<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z = rng.random::<f64>() * 2.0 - 1.0;
    let phi = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Uniform draw on a cuboid surface, faces weighted by area.
fn sample_box<R: Rng>(center: [f64; 3], half: [f64; 3], rng: &mut R) -> [f64; 3] {
    let areas = [
        half[1] * half[2], // x faces
        half[0] * half[2], // y faces
        half[0] * half[1], // z faces
    ];
    let total: f64 = 2.0 * (areas[0] + areas[1] + areas[2]);
    let mut pick = rng.random::<f64>() * total;
    let mut axis = 2;
    for (a, &area) in areas.iter().enumerate() {
        if pick < 2.0 * area {
            axis = a;
            break;
        }
        pick -= 2.0 * area;
    }
    let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
    let mut p = [0.0; 3];
    p[axis] = sign * half[axis];
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    p[u] = (rng.random::<f64>() * 2.0 - 1.0) * half[u];
    p[v] = (rng.random::<f64>() * 2.0 - 1.0) * half[v];
    [p[0] + center[0], p[1] + center[1], p[2] + center[2]]
}

fn sample_cylinder<R: Rng>(radius: f64, half_height: f64, rng: &mut R) -> [f64; 3] {
    let side = 2.0 * std::f64::consts::PI * radius * 2.0 * half_height;
    let cap = std::f64::consts::PI * radius * radius;
    let pick = rng.random::<f64>() * (side + 2.0 * cap);
    let theta = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    if pick < side {
        let z = (rng.random::<f64>() * 2.0 - 1.0) * half_height;
        [radius * theta.cos(), radius * theta.sin(), z]
    } else {
        let r = radius * rng.random::<f64>().sqrt();
        let z = if pick < side + cap {
            half_height
        } else {
            -half_height
        };
        [r * theta.cos(), r * theta.sin(), z]
    }
}

fn sample_torus<R: Rng>(major: f64, minor: f64, rng: &mut R) -> [f64; 3] {
    // Rejection on the tube angle corrects for the smaller outer
    // circumference on the inner side of the ring.
    let phi = loop {
        let phi = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
        let accept = (major + minor * phi.cos()) / (major + minor);
        if rng.random::<f64>() <= accept {
            break phi;
        }
    };
    let theta = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    let ring = major + minor * phi.cos();
    [ring * theta.cos(), ring * theta.sin(), minor * phi.sin()]
}

fn sample_two_box<R: Rng>(rng: &mut R) -> [f64; 3] {
    const A_CENTER: [f64; 3] = [-0.35, 0.0, 0.0];
    const A_HALF: [f64; 3] = [0.65, 0.4, 0.4];
    const B_CENTER: [f64; 3] = [0.45, 0.25, 0.2];
    const B_HALF: [f64; 3] = [0.45, 0.3, 0.3];
    let area = |h: &[f64; 3]| 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]);
    let (a, b) = (area(&A_HALF), area(&B_HALF));
    if rng.random::<f64>() * (a + b) < a {
        sample_box(A_CENTER, A_HALF, rng)
    } else {
        sample_box(B_CENTER, B_HALF, rng)
    }
}

fn sample_helix<R: Rng>(rng: &mut R) -> [f64; 3] {
    let t = rng.random::<f64>();
    let angle = (t - 0.5) * 3.0 * std::f64::consts::PI;
    [0.8 * angle.cos(), 0.8 * angle.sin(), (t - 0.5) * 1.8]
}

// ---------------------------------------------------------------------------
// Crop and noise
// ---------------------------------------------------------------------------

/// Keeps the `ceil(keep_fraction * N)` points farthest along a uniformly
/// random plane normal through the origin; original point order survives.
pub fn crop_by_plane<T: Real, R: Rng>(
    cloud: &PointCloud<T>,
    keep_fraction: f64,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    let normal = loop {
        let v = [gaussian(rng), gaussian(rng), gaussian(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            break [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    crop_with_normal(cloud, keep_fraction, normal)
}

/// Deterministic core of [`crop_by_plane`] with the plane normal supplied.
pub fn crop_with_normal<T: Real>(
    cloud: &PointCloud<T>,
    keep_fraction: f64,
    normal: [f64; 3],
) -> Result<PointCloud<T>> {
    if !(0.0..=1.0).contains(&keep_fraction) || keep_fraction == 0.0 {
        return Err(Error::Parameter(format!(
            "keep_fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    let n = cloud.len();
    let keep = (keep_fraction * n as f64).ceil() as usize;
    if keep < 4 {
        return Err(Error::DegenerateSample(format!(
            "crop keeps {keep} of {n} points; at least 4 required"
        )));
    }
    // Signed distances in f64 so the selection is identical across scalar
    // types; ties go to the lower index.
    let mut order: Vec<(f64, usize)> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = p.x().to_f64().unwrap() * normal[0]
                + p.y().to_f64().unwrap() * normal[1]
                + p.z().to_f64().unwrap() * normal[2];
            (d, i)
        })
        .collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut selected: Vec<usize> = order[..keep].iter().map(|&(_, i)| i).collect();
    selected.sort_unstable();
    PointCloud::new(selected.iter().map(|&i| cloud.points[i]).collect())
}

/// Perturbs every coordinate by a clipped Gaussian draw (`sigma` is the
/// standard deviation, draws clamped to `[-clip, clip]`).
pub fn add_gaussian_noise<T: Real, R: Rng>(
    cloud: &PointCloud<T>,
    sigma: f64,
    clip: f64,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    if sigma < 0.0 || clip < 0.0 {
        return Err(Error::Parameter(format!(
            "sigma and clip must be nonnegative, got sigma={sigma} clip={clip}"
        )));
    }
    PointCloud::new(
        cloud
            .points
            .iter()
            .map(|p| {
                let mut q = *p;
                for a in 0..3 {
                    let d = (gaussian(rng) * sigma).clamp(-clip, clip);
                    q[a] = q[a] + cast(d);
                }
                q
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Ground-truth correspondences
// ---------------------------------------------------------------------------

/// Two rounds of mutual-nearest-neighbor matching with a strict distance
/// cutoff. Pairs found in round one are removed before round two runs on
/// the leftovers, which recovers matches whose nearest neighbor was taken.
pub fn rebuild_correspondences<T: Real>(
    x_aligned: &PointCloud<T>,
    y: &PointCloud<T>,
    max_dist: f64,
) -> Result<BinaryCorrespondence> {
    if max_dist <= 0.0 {
        return Err(Error::Parameter(format!(
            "max_dist must be positive, got {max_dist}"
        )));
    }
    let mut x_free: Vec<usize> = (0..x_aligned.len()).collect();
    let mut y_free: Vec<usize> = (0..y.len()).collect();
    let mut pairs = Vec::new();
    for _round in 0..2 {
        let found = mutual_nn_round(x_aligned, y, &x_free, &y_free, max_dist);
        if found.is_empty() {
            break;
        }
        x_free.retain(|i| !found.iter().any(|&(a, _)| a == *i));
        y_free.retain(|j| !found.iter().any(|&(_, b)| b == *j));
        pairs.extend(found);
    }
    BinaryCorrespondence::new(x_aligned.len(), y.len(), pairs)
}

fn mutual_nn_round<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    x_free: &[usize],
    y_free: &[usize],
    max_dist: f64,
) -> Vec<(usize, usize)> {
    if x_free.is_empty() || y_free.is_empty() {
        return Vec::new();
    }
    // Nearest free partner on each side; f64 distances, ties to lower index.
    let nearest = |p: &Vec3<T>, pool: &PointCloud<T>, free: &[usize]| -> (usize, f64) {
        let mut best = (free[0], f64::INFINITY);
        for &j in free {
            let d = p.dist(&pool.points[j]).to_f64().unwrap();
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    };
    let mut nn_x: Vec<(usize, usize, f64)> = Vec::new();
    for &i in x_free {
        let (j, d) = nearest(&x.points[i], y, y_free);
        nn_x.push((i, j, d));
    }
    let mut pairs = Vec::new();
    for &(i, j, d) in &nn_x {
        if d < max_dist {
            let (back, _) = nearest(&y.points[j], x, x_free);
            if back == i {
                pairs.push((i, j));
            }
        }
    }
    // Mutual-NN pairs are disjoint: each side points at exactly one partner.
    pairs
}

// ---------------------------------------------------------------------------
// Protocols and full samples
// ---------------------------------------------------------------------------

/// Degradation protocol applied to a generated pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Clean,
    Noise,
    Partial,
    PartialNoise,
}

impl Mode {
    pub fn crops(&self) -> bool {
        matches!(self, Mode::Partial | Mode::PartialNoise)
    }

    pub fn adds_noise(&self) -> bool {
        matches!(self, Mode::Noise | Mode::PartialNoise)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mode::Clean => "clean",
            Mode::Noise => "noise",
            Mode::Partial => "partial",
            Mode::PartialNoise => "partial_noise",
        };
        f.write_str(name)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Mode::Clean),
            "noise" => Ok(Mode::Noise),
            "partial" => Ok(Mode::Partial),
            "partial_noise" => Ok(Mode::PartialNoise),
            other => Err(Error::Parameter(format!(
                "unknown mode `{other}` (expected clean, noise, partial or partial_noise)"
            ))),
        }
    }
}

/// Generation parameters for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolSettings {
    pub mode: Mode,
    pub n_points: usize,
    pub rot_range_deg: f64,
    pub trans_range: f64,
    pub keep_fraction: f64,
    pub noise_sigma: f64,
    pub noise_clip: f64,
    pub max_corr_dist: f64,
    pub seed: u64,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        ProtocolSettings {
            mode: Mode::Clean,
            n_points: 1024,
            rot_range_deg: 45.0,
            trans_range: 0.5,
            keep_fraction: 0.7,
            noise_sigma: 0.01,
            noise_clip: 0.05,
            max_corr_dist: 0.1,
            seed: 0,
        }
    }
}

impl ProtocolSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| -> Result<()> { Err(Error::Parameter(msg)) };
        if self.n_points < 8 {
            return bad(format!("n_points must be >= 8, got {}", self.n_points));
        }
        if !(0.0..=180.0).contains(&self.rot_range_deg) {
            return bad(format!(
                "rot_range_deg must be in [0, 180], got {}",
                self.rot_range_deg
            ));
        }
        if self.trans_range < 0.0 {
            return bad(format!(
                "trans_range must be >= 0, got {}",
                self.trans_range
            ));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad(format!(
                "keep_fraction must be in (0, 1], got {}",
                self.keep_fraction
            ));
        }
        if self.noise_sigma < 0.0 {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if self.noise_clip < 0.0 {
            return bad(format!("noise_clip must be >= 0, got {}", self.noise_clip));
        }
        if self.max_corr_dist <= 0.0 {
            return bad(format!(
                "max_corr_dist must be > 0, got {}",
                self.max_corr_dist
            ));
        }
        Ok(())
    }
}

/// One generated registration problem with full ground truth.
#[derive(Debug, Clone)]
pub struct RegistrationSample<T> {
    /// X, the cloud the estimated transform is applied to.
    pub source: PointCloud<T>,
    /// Y, shuffled and degraded per the protocol.
    pub target: PointCloud<T>,
    /// Maps source onto target space.
    pub gt_transform: RigidTransform<T>,
    /// Ground-truth marks, `source.len() x target.len()`.
    pub gt_correspondence: BinaryCorrespondence,
    pub shape: ShapeId,
    pub seed: u64,
    pub settings: ProtocolSettings,
}

/// Generates one sample: base shape, independent crops (partial modes), a
/// random ground-truth transform, independent noise (noise modes), a target
/// shuffle, and the matching ground-truth correspondence.
pub fn make_pair<T: Real, R: Rng>(
    shape: ShapeId,
    settings: &ProtocolSettings,
    seed: u64,
    rng: &mut R,
) -> Result<RegistrationSample<T>> {
    settings.validate()?;
    let base: PointCloud<T> = sample_shape(shape, settings.n_points, rng)?;

    let (mut x, mut y_aligned) = if settings.mode.crops() {
        (
            crop_by_plane(&base, settings.keep_fraction, rng)?,
            crop_by_plane(&base, settings.keep_fraction, rng)?,
        )
    } else {
        (base.clone(), base)
    };

    let gt_transform: RigidTransform<T> =
        random_transform(settings.rot_range_deg, settings.trans_range, rng)?;
    y_aligned = apply_transform(&gt_transform, &y_aligned);

    if settings.mode.adds_noise() {
        x = add_gaussian_noise(&x, settings.noise_sigma, settings.noise_clip, rng)?;
        y_aligned = add_gaussian_noise(&y_aligned, settings.noise_sigma, settings.noise_clip, rng)?;
    }

    // Shuffle the target so index order carries no information.
    let m = y_aligned.len();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let target = PointCloud::new(perm.iter().map(|&j| y_aligned.points[j]).collect())?;
    let mut new_index_of = vec![0usize; m];
    for (slot, &old) in perm.iter().enumerate() {
        new_index_of[old] = slot;
    }

    let gt_correspondence = if settings.mode == Mode::Clean {
        BinaryCorrespondence::identity(x.len()).relabel_cols(&new_index_of)?
    } else {
        rebuild_correspondences(
            &apply_transform(&gt_transform, &x),
            &target,
            settings.max_corr_dist,
        )?
    };

    Ok(RegistrationSample {
        source: x,
        target,
        gt_transform,
        gt_correspondence,
        shape,
        seed,
        settings: settings.clone(),
    })
}

// ---------------------------------------------------------------------------
// Datasets on disk
// ---------------------------------------------------------------------------

/// Current manifest schema version.
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub shape: ShapeId,
    pub settings: ProtocolSettings,
    pub files: SampleFiles,
}

/// Per-sample file paths, relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleFiles {
    pub source: String,
    pub target: String,
    pub transform: String,
    pub correspondence: String,
}

/// Generates `count` samples. Seeds are `settings.seed + index`; shapes are
/// `shape` if given, otherwise cycled through [`ALL_SHAPES`].
pub fn generate_dataset<T: Real>(
    count: usize,
    shape: Option<ShapeId>,
    settings: &ProtocolSettings,
) -> Result<Vec<RegistrationSample<T>>> {
    (0..count)
        .map(|i| {
            let seed = settings.seed.wrapping_add(i as u64);
            let shape = shape.unwrap_or(ALL_SHAPES[i % ALL_SHAPES.len()]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_pair(shape, settings, seed, &mut rng)
        })
        .collect()
}

/// Writes per-sample files plus `manifest.json` into `dir`.
pub fn write_dataset<T: Real>(dir: &Path, samples: &[RegistrationSample<T>]) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let files = SampleFiles {
            source: format!("sample_{i:04}_source.ply"),
            target: format!("sample_{i:04}_target.ply"),
            transform: format!("sample_{i:04}_transform.txt"),
            correspondence: format!("sample_{i:04}_corr.csv"),
        };
        crate::io::write_cloud(&dir.join(&files.source), &s.source)?;
        crate::io::write_cloud(&dir.join(&files.target), &s.target)?;
        crate::io::write_transform(&dir.join(&files.transform), &s.gt_transform)?;
        s.gt_correspondence
            .write_csv(&dir.join(&files.correspondence))?;
        records.push(SampleRecord {
            seed: s.seed,
            shape: s.shape,
            settings: s.settings.clone(),
            files,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        samples: records,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset<T: Real>(dir: &Path) -> Result<Vec<RegistrationSample<T>>> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported manifest version {} (expected {MANIFEST_VERSION})",
            path.display(),
            manifest.version
        )));
    }
    manifest
        .samples
        .iter()
        .map(|rec| {
            let source = crate::io::read_cloud(&dir.join(&rec.files.source))?;
            let target = crate::io::read_cloud(&dir.join(&rec.files.target))?;
            let gt_transform = crate::io::read_transform(&dir.join(&rec.files.transform))?;
            let gt_correspondence = BinaryCorrespondence::read_csv(
                &dir.join(&rec.files.correspondence),
                source.len(),
                target.len(),
            )?;
            Ok(RegistrationSample {
                source,
                target,
                gt_transform,
                gt_correspondence,
                shape: rec.shape,
                seed: rec.seed,
                settings: rec.settings.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sphere_points_lie_on_unit_sphere() {
        let cloud: PointCloud<f64> = sample_shape(ShapeId::Sphere, 256, &mut rng(1)).unwrap();
        for p in &cloud.points {
            assert!((p.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn every_shape_rescales_to_unit_max_norm() {
        for shape in ALL_SHAPES {
            let cloud: PointCloud<f64> = sample_shape(shape, 200, &mut rng(2)).unwrap();
            assert_eq!(cloud.len(), 200);
            assert!(
                (cloud.max_norm() - 1.0).abs() < 1e-12,
                "{shape}: max norm {}",
                cloud.max_norm()
            );
        }
    }

    #[test]
    fn shape_sampling_is_seed_deterministic() {
        for shape in ALL_SHAPES {
            let a: PointCloud<f64> = sample_shape(shape, 64, &mut rng(7)).unwrap();
            let b: PointCloud<f64> = sample_shape(shape, 64, &mut rng(7)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shape_rejects_tiny_counts() {
        assert!(sample_shape::<f64, _>(ShapeId::Sphere, 7, &mut rng(0)).is_err());
        assert!(sample_shape::<f64, _>(ShapeId::Sphere, 8, &mut rng(0)).is_ok());
    }

    #[test]
    fn shape_names_roundtrip() {
        for shape in ALL_SHAPES {
            assert_eq!(shape.to_string().parse::<ShapeId>().unwrap(), shape);
        }
        assert!("pyramid".parse::<ShapeId>().is_err());
    }

    #[test]
    fn crop_keep_all_preserves_cloud() {
        let cloud: PointCloud<f64> = sample_shape(ShapeId::Torus, 50, &mut rng(3)).unwrap();
        let out = crop_by_plane(&cloud, 1.0, &mut rng(4)).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn crop_count_uses_ceil() {
        let cloud: PointCloud<f64> = sample_shape(ShapeId::Sphere, 1024, &mut rng(5)).unwrap();
        let out = crop_by_plane(&cloud, 0.7, &mut rng(6)).unwrap();
        assert_eq!(out.len(), 717);
    }

    #[test]
    fn crop_with_forced_normal_keeps_top_half() {
        // Cube corners: keep 0.5 under +z must select exactly the z=+1 four.
        let mut pts = Vec::new();
        for &x in &[-1.0, 1.0] {
            for &y in &[-1.0, 1.0] {
                for &z in &[-1.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let out = crop_with_normal(&cloud, 0.5, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(out.len(), 4);
        for p in &out.points {
            assert_eq!(p.z(), 1.0);
        }
    }

    #[test]
    fn crop_rejects_degenerate_results() {
        let cloud: PointCloud<f64> = sample_shape(ShapeId::Sphere, 16, &mut rng(8)).unwrap();
        let r = crop_by_plane(&cloud, 0.1, &mut rng(9));
        assert!(matches!(r, Err(Error::DegenerateSample(_))));
        assert!(crop_by_plane(&cloud, 0.0, &mut rng(9)).is_err());
        assert!(crop_by_plane(&cloud, 1.1, &mut rng(9)).is_err());
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let cloud: PointCloud<f64> = sample_shape(ShapeId::Box, 32, &mut rng(10)).unwrap();
        let out = add_gaussian_noise(&cloud, 0.0, 0.05, &mut rng(11)).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn noise_respects_clip() {
        let cloud: PointCloud<f64> = sample_shape(ShapeId::Box, 512, &mut rng(12)).unwrap();
        let out = add_gaussian_noise(&cloud, 0.1, 0.05, &mut rng(13)).unwrap();
        for (p, q) in cloud.points.iter().zip(&out.points) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() <= 0.05 + 1e-15);
            }
        }
    }

    #[test]
    fn noise_empirical_std_matches_sigma() {
        let mut r = rng(14);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| gaussian(&mut r) * 0.01).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!(
            (0.0095..=0.0105).contains(&std),
            "empirical std {std} outside [0.0095, 0.0105]"
        );
    }

    #[test]
    fn rebuild_identity_when_clouds_match() {
        let cloud: PointCloud<f64> = sample_shape(ShapeId::Cylinder, 40, &mut rng(15)).unwrap();
        let c = rebuild_correspondences(&cloud, &cloud, 0.1).unwrap();
        assert!(c.is_permutation());
        for i in 0..cloud.len() {
            assert_eq!(c.col_for_row(i), Some(i));
        }
    }

    #[test]
    fn rebuild_respects_distance_cutoff() {
        let a = PointCloud::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)]).unwrap();
        let b = PointCloud::new(vec![Vec3::new(0.2, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)]).unwrap();
        let c = rebuild_correspondences(&a, &b, 0.1).unwrap();
        assert_eq!(c.pairs(), &[(1, 1)]);
        // Distance exactly max_dist is excluded (strict inequality).
        let b = PointCloud::new(vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)]).unwrap();
        let c = rebuild_correspondences(&a, &b, 0.1).unwrap();
        assert_eq!(c.pairs(), &[(1, 1)]);
    }

    #[test]
    fn rebuild_second_round_recovers_taken_neighbors() {
        // x0's nearest y is y0, but y0 mutually pairs with x1 in round one
        // (0.01 apart versus 0.02). Round two then pairs x0 with y1.
        let x = PointCloud::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.03, 0.0, 0.0)])
            .unwrap();
        let y = PointCloud::new(vec![Vec3::new(0.02, 0.0, 0.0), Vec3::new(-0.075, 0.0, 0.0)])
            .unwrap();
        let c = rebuild_correspondences(&x, &y, 0.1).unwrap();
        assert_eq!(c.pairs(), &[(0, 1), (1, 0)]);
    }

    /// Exhaustive oracle: the same two-round mutual-NN procedure written
    /// directly against the full distance table.
    fn two_round_oracle(x: &PointCloud<f64>, y: &PointCloud<f64>, max_dist: f64) -> Vec<(usize, usize)> {
        let mut xf: Vec<usize> = (0..x.len()).collect();
        let mut yf: Vec<usize> = (0..y.len()).collect();
        let mut all = Vec::new();
        for _ in 0..2 {
            let mut found = Vec::new();
            for &i in &xf {
                let mut bj = usize::MAX;
                let mut bd = f64::INFINITY;
                for &j in &yf {
                    let d = x.points[i].dist(&y.points[j]);
                    if d < bd {
                        bd = d;
                        bj = j;
                    }
                }
                if bd < max_dist {
                    let mut bi = usize::MAX;
                    let mut bdi = f64::INFINITY;
                    for &k in &xf {
                        let d = y.points[bj].dist(&x.points[k]);
                        if d < bdi {
                            bdi = d;
                            bi = k;
                        }
                    }
                    if bi == i {
                        found.push((i, bj));
                    }
                }
            }
            xf.retain(|i| !found.iter().any(|&(a, _)| a == *i));
            yf.retain(|j| !found.iter().any(|&(_, b)| b == *j));
            all.extend(found);
        }
        all.sort_unstable();
        all
    }

    #[test]
    fn rebuild_matches_exhaustive_oracle() {
        for seed in 0..20u64 {
            let mut r = rng(100 + seed);
            let n = 10 + (seed as usize % 40);
            let x = PointCloud::new(
                (0..n)
                    .map(|_| {
                        Vec3::new(
                            r.random::<f64>() - 0.5,
                            r.random::<f64>() - 0.5,
                            r.random::<f64>() - 0.5,
                        )
                    })
                    .collect(),
            )
            .unwrap();
            let y = add_gaussian_noise(&x, 0.02, 0.05, &mut r).unwrap();
            let got = rebuild_correspondences(&x, &y, 0.1).unwrap();
            assert_eq!(got.pairs(), &two_round_oracle(&x, &y, 0.1)[..], "seed {seed}");
        }
    }

    #[test]
    fn clean_pair_has_full_permutation_truth() {
        let settings = ProtocolSettings {
            n_points: 64,
            ..ProtocolSettings::default()
        };
        let s: RegistrationSample<f64> =
            make_pair(ShapeId::Torus, &settings, 3, &mut rng(3)).unwrap();
        assert!(s.gt_correspondence.is_permutation());
        assert_eq!(s.source.len(), 64);
        assert_eq!(s.target.len(), 64);
        // Marked pairs coincide exactly under the ground-truth transform.
        for &(i, j) in s.gt_correspondence.pairs() {
            let moved = s.gt_transform.apply(&s.source.points[i]);
            assert!(moved.dist(&s.target.points[j]) < 1e-12);
        }
    }

    #[test]
    fn partial_pair_has_unmatched_points() {
        let settings = ProtocolSettings {
            mode: Mode::Partial,
            n_points: 128,
            ..ProtocolSettings::default()
        };
        let s: RegistrationSample<f64> =
            make_pair(ShapeId::Sphere, &settings, 5, &mut rng(5)).unwrap();
        assert_eq!(s.source.len(), 90); // ceil(0.7 * 128)
        assert_eq!(s.target.len(), 90);
        assert!(s.gt_correspondence.len() < s.source.len());
        assert!(!s.gt_correspondence.is_empty());
    }

    #[test]
    fn make_pair_is_seed_deterministic() {
        let settings = ProtocolSettings {
            mode: Mode::PartialNoise,
            n_points: 48,
            ..ProtocolSettings::default()
        };
        let a: RegistrationSample<f64> =
            make_pair(ShapeId::Helix, &settings, 9, &mut rng(9)).unwrap();
        let b: RegistrationSample<f64> =
            make_pair(ShapeId::Helix, &settings, 9, &mut rng(9)).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_eq!(a.gt_transform, b.gt_transform);
        assert_eq!(a.gt_correspondence, b.gt_correspondence);
    }

    #[test]
    fn dataset_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let settings = ProtocolSettings {
            mode: Mode::Noise,
            n_points: 32,
            seed: 11,
            ..ProtocolSettings::default()
        };
        let samples: Vec<RegistrationSample<f64>> =
            generate_dataset(4, None, &settings).unwrap();
        assert_eq!(samples[0].shape, ShapeId::Sphere);
        assert_eq!(samples[1].shape, ShapeId::Box);
        write_dataset(dir.path(), &samples).unwrap();

        let back: Vec<RegistrationSample<f64>> = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.source, b.source);
            assert_eq!(a.target, b.target);
            assert_eq!(a.gt_transform, b.gt_transform);
            assert_eq!(a.gt_correspondence, b.gt_correspondence);
            assert_eq!(a.seed, b.seed);
        }
    }

    #[test]
    fn read_dataset_rejects_bad_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_dataset::<f64>(dir.path()).is_err());
        std::fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        assert!(read_dataset::<f64>(dir.path()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Every marked ground-truth pair is within the correspondence
        /// radius after applying the ground-truth transform.
        #[test]
        fn marked_pairs_lie_within_radius(seed in 0u64..1000, mode_pick in 0usize..4) {
            let mode = [Mode::Clean, Mode::Noise, Mode::Partial, Mode::PartialNoise][mode_pick];
            let settings = ProtocolSettings {
                mode,
                n_points: 40,
                ..ProtocolSettings::default()
            };
            let shape = ALL_SHAPES[(seed % 6) as usize];
            let s: RegistrationSample<f64> =
                make_pair(shape, &settings, seed, &mut rng(seed)).unwrap();
            for &(i, j) in s.gt_correspondence.pairs() {
                let moved = s.gt_transform.apply(&s.source.points[i]);
                prop_assert!(moved.dist(&s.target.points[j]) < settings.max_corr_dist);
            }
        }
    }
}
