//! Deterministic generator of contextual scenes, and the on-disk dataset
//! format.
//!
//! Each scene type adds a shared context vector to the raw features of all
//! its pixels, and the context directions are built from differences of
//! class embeddings: in a shifted scene, one "victim" class is moved
//! toward where an "alias" class sits in the unshifted scene. With the
//! default settings the two clusters are closer than the noise floor, so a
//! per-pixel classifier cannot separate them — while the classes that
//! co-occur in each scene still identify the scene at the image level.
//! That is the regime in which a context-aware classifier can win.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"CACDATA1";
pub const DATASET_VERSION: u32 = 1;

/// Every fourth sample gets a one-pixel ignore border (grids of at least
/// 3×3 only), so the ignore paths are exercised by every generated set.
const IGNORE_BORDER_PERIOD: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub n_classes: usize,
    pub n_scene_types: usize,
    pub d_in: usize,
    pub height: usize,
    pub width: usize,
    /// Magnitude of the per-scene additive offset; 0 degenerates to a
    /// context-free dataset, and at `class_embedding_separation` the victim
    /// cluster lands exactly on its alias.
    pub context_shift_scale: f64,
    pub noise_scale: f64,
    pub class_embedding_separation: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_classes: 8,
            n_scene_types: 4,
            d_in: 16,
            height: 16,
            width: 16,
            context_shift_scale: 0.75,
            noise_scale: 0.25,
            class_embedding_separation: 1.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            )));
        }
        if self.n_scene_types < 2 {
            return Err(Error::Config(format!(
                "n_scene_types must be at least 2, got {}",
                self.n_scene_types
            )));
        }
        if self.d_in == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(
                "d_in, height and width must be positive".into(),
            ));
        }
        if self.height * self.width < 2 {
            return Err(Error::Config("grid must contain at least 2 pixels".into()));
        }
        if self.context_shift_scale < 0.0 || self.noise_scale < 0.0 {
            return Err(Error::Config(
                "context_shift_scale and noise_scale must be non-negative".into(),
            ));
        }
        if self.n_classes > u16::MAX as usize - 1 {
            return Err(Error::Config("n_classes exceeds the label range".into()));
        }
        Ok(())
    }

    pub fn hw(&self) -> usize {
        self.height * self.width
    }
}

/// One generated image. `scene_id` is metadata for analysis only; nothing
/// in the model may read it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f32>,
    pub y: Vec<u16>,
    pub scene_id: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub d_in: usize,
    pub n_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn hw(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_map(&self, index: usize) -> LabelMap {
        LabelMap::new(self.samples[index].y.clone(), self.n_classes)
            .expect("generated labels are valid")
    }

    /// Raw features of one sample as an `[hw × d_in]` tensor.
    pub fn features(&self, index: usize) -> Tensor {
        let data: Vec<f64> = self.samples[index].x.iter().map(|&v| f64::from(v)).collect();
        Tensor::matrix(self.hw(), self.d_in, data).expect("sample feature shape")
    }
}

/// Class embedding directions and per-scene context vectors and class
/// pools, all derived deterministically from the spec.
pub struct SceneLayout {
    /// Unit (orthonormal when `d_in >= n_classes`) direction per class.
    pub basis: Vec<Vec<f64>>,
    /// Class embedding = separation · basis.
    pub embeddings: Vec<Vec<f64>>,
    /// Additive context vector per scene type; scene 0 is unshifted.
    pub contexts: Vec<Vec<f64>>,
    /// Classes allowed to appear in each scene type.
    pub allowed: Vec<Vec<u16>>,
    /// (victim, alias) pair per shifted scene.
    pub confusions: Vec<(usize, usize)>,
}

fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller, first coordinate only; keeps the stream layout simple
    // and version-independent.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl SceneLayout {
    pub fn build(spec: &SceneSpec) -> Result<SceneLayout> {
        spec.validate()?;
        let (n, d) = (spec.n_classes, spec.d_in);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5CEE));

        // Gram-Schmidt over seeded Gaussian rows; rows beyond d_in stay
        // merely normalized.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v: Vec<f64> = (0..d).map(|_| sample_normal(&mut rng)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= dot * bi;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                // Exhausted the space; fall back to a fresh normalized draw.
                v = (0..d).map(|_| sample_normal(&mut rng)).collect();
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
            } else {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
            }
            basis.push(v);
        }

        let embeddings: Vec<Vec<f64>> = basis
            .iter()
            .map(|b| b.iter().map(|v| v * spec.class_embedding_separation).collect())
            .collect();

        // Shifted scene s gets context shift·(basis[alias] − basis[victim]).
        let mut contexts = vec![vec![0.0; d]];
        let mut confusions = Vec::new();
        for s in 1..spec.n_scene_types {
            let victim = (2 * (s - 1)) % n;
            let alias = (2 * (s - 1) + 1) % n;
            confusions.push((victim, alias));
            let c: Vec<f64> = (0..d)
                .map(|j| spec.context_shift_scale * (basis[alias][j] - basis[victim][j]))
                .collect();
            contexts.push(c);
        }

        // Scene 0 shows everything except the victims; shifted scene s
        // shows its own victim/alias pair plus the neutral classes. Pools
        // are padded to two classes when a small n leaves them short.
        let victims: Vec<usize> = confusions.iter().map(|&(v, _)| v).collect();
        let aliases: Vec<usize> = confusions.iter().map(|&(_, a)| a).collect();
        let mut allowed: Vec<Vec<u16>> = Vec::with_capacity(spec.n_scene_types);
        let mut base_pool: Vec<u16> = (0..n as u16)
            .filter(|&k| !victims.contains(&usize::from(k)))
            .collect();
        pad_pool(&mut base_pool, n);
        allowed.push(base_pool);
        for s in 1..spec.n_scene_types {
            let (victim, alias) = confusions[s - 1];
            let mut pool: Vec<u16> = vec![victim as u16, alias as u16];
            for k in 0..n {
                if !victims.contains(&k) && !aliases.contains(&k) && !pool.contains(&(k as u16)) {
                    pool.push(k as u16);
                }
            }
            pool.sort_unstable();
            pool.dedup();
            pad_pool(&mut pool, n);
            allowed.push(pool);
        }

        Ok(SceneLayout {
            basis,
            embeddings,
            contexts,
            allowed,
            confusions,
        })
    }
}

fn pad_pool(pool: &mut Vec<u16>, n: usize) {
    let mut k = 0u16;
    while pool.len() < 2 && usize::from(k) < n {
        if !pool.contains(&k) {
            pool.push(k);
        }
        k += 1;
    }
    pool.sort_unstable();
}

#[derive(Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

fn split_rects<R: Rng>(rng: &mut R, h: usize, w: usize) -> Vec<Rect> {
    let target = rng.gen_range(3..=6);
    let mut rects = vec![Rect {
        top: 0,
        left: 0,
        height: h,
        width: w,
    }];
    while rects.len() < target {
        let splittable: Vec<usize> = rects
            .iter()
            .enumerate()
            .filter(|(_, r)| r.height >= 2 || r.width >= 2)
            .map(|(i, _)| i)
            .collect();
        if splittable.is_empty() {
            break;
        }
        let idx = splittable[rng.gen_range(0..splittable.len())];
        let rect = rects[idx];
        let horizontal = if rect.height >= 2 && rect.width >= 2 {
            rng.gen_range(0..2) == 0
        } else {
            rect.height >= 2
        };
        let (a, b) = if horizontal {
            let at = rng.gen_range(1..rect.height);
            (
                Rect { height: at, ..rect },
                Rect {
                    top: rect.top + at,
                    height: rect.height - at,
                    ..rect
                },
            )
        } else {
            let at = rng.gen_range(1..rect.width);
            (
                Rect { width: at, ..rect },
                Rect {
                    left: rect.left + at,
                    width: rect.width - at,
                    ..rect
                },
            )
        };
        rects[idx] = a;
        rects.push(b);
    }
    rects
}

/// Generates `count` samples. Deterministic: a pure function of
/// `(spec, count)`.
pub fn generate(spec: &SceneSpec, count: usize) -> Result<Dataset> {
    generate_range(spec, 0, count)
}

/// Generates `count` samples after skipping the first `skip` of the
/// spec's sample stream. Train/val splits come from one stream this way:
/// same world (class embeddings, scene contexts), disjoint samples.
pub fn generate_range(spec: &SceneSpec, skip: usize, count: usize) -> Result<Dataset> {
    let mut dataset = generate_all(spec, skip + count)?;
    dataset.samples.drain(..skip);
    Ok(dataset)
}

fn generate_all(spec: &SceneSpec, count: usize) -> Result<Dataset> {
    let layout = SceneLayout::build(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w, d) = (spec.height, spec.width, spec.d_in);
    let hw = h * w;
    let border = h >= 3 && w >= 3;

    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let scene = rng.gen_range(0..spec.n_scene_types);
        let pool = &layout.allowed[scene];
        let with_border = border && index % IGNORE_BORDER_PERIOD == IGNORE_BORDER_PERIOD - 1;

        // Resample the partition until at least two distinct classes
        // survive outside the ignore border. Pools hold ≥ 2 classes, so
        // this terminates quickly.
        let mut classes = vec![0u16; hw];
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > 10_000 {
                return Err(Error::Config(
                    "could not realize a sample with two distinct classes".into(),
                ));
            }
            let rects = split_rects(&mut rng, h, w);
            for rect in &rects {
                let class = pool[rng.gen_range(0..pool.len())];
                for r in rect.top..rect.top + rect.height {
                    for c in rect.left..rect.left + rect.width {
                        classes[r * w + c] = class;
                    }
                }
            }
            let mut seen = vec![false; spec.n_classes];
            let mut distinct = 0;
            for r in 0..h {
                for c in 0..w {
                    if with_border && (r == 0 || c == 0 || r == h - 1 || c == w - 1) {
                        continue;
                    }
                    let k = usize::from(classes[r * w + c]);
                    if !seen[k] {
                        seen[k] = true;
                        distinct += 1;
                    }
                }
            }
            if distinct >= 2 {
                break;
            }
        }

        let mut y = classes.clone();
        if with_border {
            for r in 0..h {
                for c in 0..w {
                    if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                        y[r * w + c] = IGNORE;
                    }
                }
            }
        }

        // Raw feature = class embedding + scene context + Gaussian noise;
        // ignored border pixels keep their underlying class appearance.
        let context = &layout.contexts[scene];
        let mut x = Vec::with_capacity(hw * d);
        for pixel in 0..hw {
            let emb = &layout.embeddings[usize::from(classes[pixel])];
            for j in 0..d {
                let noise = spec.noise_scale * sample_normal(&mut rng);
                x.push((emb[j] + context[j] + noise) as f32);
            }
        }

        samples.push(Sample {
            x,
            y,
            scene_id: scene as u16,
        });
    }

    Ok(Dataset {
        height: h,
        width: w,
        d_in: d,
        n_classes: spec.n_classes,
        samples,
    })
}

// ── On-disk format ────────────────────────────────────────────────────
//
// Little-endian. Header: magic "CACDATA1", u32 version=1, u32 count, h,
// w, d_in, n_classes. Per sample: f32[hw·d_in] raw features, u16[hw]
// labels (65535 = IGNORE), u16 scene_id, u16 padding.

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<u64> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(path, at, format!("truncated file while reading {what}"))
            } else {
                Error::io(path, e)
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(at)
    }

    fn read_u32(&mut self, path: &Path, what: &str) -> Result<(u32, u64)> {
        let mut buf = [0u8; 4];
        let at = self.read_exact_at(&mut buf, path, what)?;
        Ok((u32::from_le_bytes(buf), at))
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(DATASET_MAGIC).map_err(io_err)?;
    w.write_all(&DATASET_VERSION.to_le_bytes()).map_err(io_err)?;
    for v in [
        dataset.len() as u32,
        dataset.height as u32,
        dataset.width as u32,
        dataset.d_in as u32,
        dataset.n_classes as u32,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    for sample in &dataset.samples {
        for &v in &sample.x {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        for &v in &sample.y {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        w.write_all(&sample.scene_id.to_le_bytes()).map_err(io_err)?;
        w.write_all(&0u16.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = CountingReader {
        inner: BufReader::new(file),
        offset: 0,
    };

    let mut magic = [0u8; 8];
    let at = r.read_exact_at(&mut magic, path, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format(path, at, "bad magic, expected \"CACDATA1\""));
    }
    let (version, at) = r.read_u32(path, "version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(
            path,
            at,
            format!("unsupported version {version}, expected {DATASET_VERSION}"),
        ));
    }
    let (count, _) = r.read_u32(path, "count")?;
    let (height, _) = r.read_u32(path, "height")?;
    let (width, _) = r.read_u32(path, "width")?;
    let (d_in, at) = r.read_u32(path, "d_in")?;
    let (n_classes, _) = r.read_u32(path, "n_classes")?;
    let (height, width, d_in, n_classes) = (
        height as usize,
        width as usize,
        d_in as usize,
        n_classes as usize,
    );
    let hw = height.checked_mul(width).filter(|&hw| hw > 0 && d_in > 0).ok_or_else(|| {
        Error::format(path, at, "header describes an empty grid")
    })?;

    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut x = Vec::with_capacity(hw * d_in);
        let mut buf = [0u8; 4];
        for _ in 0..hw * d_in {
            r.read_exact_at(&mut buf, path, "raw features")?;
            x.push(f32::from_le_bytes(buf));
        }
        let mut y = Vec::with_capacity(hw);
        let mut lbuf = [0u8; 2];
        for _ in 0..hw {
            let at = r.read_exact_at(&mut lbuf, path, "labels")?;
            let label = u16::from_le_bytes(lbuf);
            if label != IGNORE && usize::from(label) >= n_classes {
                return Err(Error::format(
                    path,
                    at,
                    format!("label {label} out of range for {n_classes} classes"),
                ));
            }
            y.push(label);
        }
        r.read_exact_at(&mut lbuf, path, "scene id")?;
        let scene_id = u16::from_le_bytes(lbuf);
        r.read_exact_at(&mut lbuf, path, "padding")?;
        samples.push(Sample { x, y, scene_id });
    }

    Ok(Dataset {
        height,
        width,
        d_in,
        n_classes,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_spec_gives_identical_class_features() {
        let spec = SceneSpec {
            context_shift_scale: 0.0,
            noise_scale: 0.0,
            ..SceneSpec::default()
        };
        let data = generate(&spec, 12).unwrap();
        // Collect the feature of the first pixel seen per class; all later
        // pixels of that class must match exactly.
        let mut seen: Vec<Option<Vec<f32>>> = vec![None; spec.n_classes];
        for sample in &data.samples {
            for (pixel, &label) in sample.y.iter().enumerate() {
                if label == IGNORE {
                    continue;
                }
                let f = &sample.x[pixel * spec.d_in..(pixel + 1) * spec.d_in];
                match &seen[usize::from(label)] {
                    Some(expected) => assert_eq!(expected.as_slice(), f),
                    None => seen[usize::from(label)] = Some(f.to_vec()),
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::default();
        let a = generate(&spec, 20).unwrap();
        let b = generate(&spec, 20).unwrap();
        assert_eq!(a, b);
        let other = generate(
            &SceneSpec {
                seed: 1,
                ..SceneSpec::default()
            },
            20,
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn every_sample_has_two_distinct_classes() {
        let data = generate(&SceneSpec::default(), 64).unwrap();
        for sample in &data.samples {
            let mut present = std::collections::BTreeSet::new();
            for &label in &sample.y {
                if label != IGNORE {
                    present.insert(label);
                }
            }
            assert!(present.len() >= 2);
        }
        // The ignore border shows up on every fourth sample.
        assert!(data.samples[3].y[0] == IGNORE);
        assert!(data.samples[0].y[0] != IGNORE);
    }

    #[test]
    fn rejects_impossible_specs() {
        let spec = SceneSpec {
            n_classes: 1,
            ..SceneSpec::default()
        };
        assert!(matches!(generate(&spec, 1), Err(Error::Config(_))));
        let spec = SceneSpec {
            n_scene_types: 1,
            ..SceneSpec::default()
        };
        assert!(matches!(generate(&spec, 1), Err(Error::Config(_))));
    }

    #[test]
    fn nearest_embedding_rule_solves_separable_raw_features() {
        // With separation ≫ noise and no shift, nearest class embedding on
        // raw features is near-perfect; checked via per-class IoU.
        let spec = SceneSpec {
            context_shift_scale: 0.0,
            noise_scale: 0.01,
            class_embedding_separation: 1.0,
            ..SceneSpec::default()
        };
        let layout = SceneLayout::build(&spec).unwrap();
        let data = generate(&spec, 32).unwrap();

        let mut inter = vec![0u64; spec.n_classes];
        let mut union = vec![0u64; spec.n_classes];
        for sample in &data.samples {
            for (pixel, &label) in sample.y.iter().enumerate() {
                if label == IGNORE {
                    continue;
                }
                let f = &sample.x[pixel * spec.d_in..(pixel + 1) * spec.d_in];
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (k, emb) in layout.embeddings.iter().enumerate() {
                    let dist: f64 = f
                        .iter()
                        .zip(emb)
                        .map(|(&a, &b)| (f64::from(a) - b).powi(2))
                        .sum();
                    if dist < best_d {
                        best_d = dist;
                        best = k;
                    }
                }
                let truth = usize::from(label);
                if best == truth {
                    inter[truth] += 1;
                    union[truth] += 1;
                } else {
                    union[truth] += 1;
                    union[best] += 1;
                }
            }
        }
        let mut miou = 0.0;
        let mut counted = 0;
        for k in 0..spec.n_classes {
            if union[k] > 0 {
                miou += inter[k] as f64 / union[k] as f64;
                counted += 1;
            }
        }
        miou /= counted as f64;
        assert!(miou >= 0.99, "nearest-centroid mIoU {miou}");
    }

    #[test]
    fn scene_separability_gap() {
        // Within-class distance across scenes exceeds within-class
        // distance within a scene, in expectation, when the shift is on.
        let spec = SceneSpec::default();
        let data = generate(&spec, 64).unwrap();

        // Mean feature per (class, scene).
        let mut sums: std::collections::HashMap<(u16, u16), (Vec<f64>, usize)> =
            std::collections::HashMap::new();
        for sample in &data.samples {
            for (pixel, &label) in sample.y.iter().enumerate() {
                if label == IGNORE {
                    continue;
                }
                let f = &sample.x[pixel * spec.d_in..(pixel + 1) * spec.d_in];
                let entry = sums
                    .entry((label, sample.scene_id))
                    .or_insert_with(|| (vec![0.0; spec.d_in], 0));
                for (acc, &v) in entry.0.iter_mut().zip(f) {
                    *acc += f64::from(v);
                }
                entry.1 += 1;
            }
        }
        let centroids: std::collections::HashMap<(u16, u16), Vec<f64>> = sums
            .into_iter()
            .map(|(key, (sum, count))| {
                (key, sum.into_iter().map(|v| v / count as f64).collect())
            })
            .collect();

        let mut cross = Vec::new();
        for (&(class_a, scene_a), ca) in &centroids {
            for (&(class_b, scene_b), cb) in &centroids {
                if class_a == class_b && scene_a < scene_b {
                    let d: f64 = ca
                        .iter()
                        .zip(cb)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    cross.push(d);
                }
            }
        }
        assert!(!cross.is_empty());
        let mean_cross = cross.iter().sum::<f64>() / cross.len() as f64;
        // Within-scene spread of a class is noise-limited; centroid
        // distance across scenes must clear it by a margin.
        assert!(
            mean_cross > 3.0 * spec.noise_scale,
            "cross-scene centroid distance {mean_cross}"
        );
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.cacdata");
        let data = generate(&SceneSpec::default(), 9).unwrap();
        write_dataset(&path, &data).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(data, back);

        // Exact size arithmetic: header + per-sample payload.
        let hw = data.hw();
        let per_sample = hw * data.d_in * 4 + hw * 2 + 2 + 2;
        let expected = 8 + 4 + 5 * 4 + data.len() * per_sample;
        let size = std::fs::metadata(&path).unwrap().len();
        assert_eq!(size, expected as u64);
    }

    #[test]
    fn corrupted_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.cacdata");
        let data = generate(&SceneSpec::default(), 2).unwrap();
        write_dataset(&path, &data).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("byte 0"), "{err}");

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'C';
        bytes[8] = 9;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        bytes[8] = 1;
        bytes.truncate(40);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
