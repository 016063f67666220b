//! Synthetic surface-texture datasets with controlled contamination.
//!
//! Normal images are smooth two-sinusoid backgrounds with seeded random
//! phases plus small pixel noise; anomalous images additionally carry one
//! localized blob defect with a seeded random center and radius. A fraction
//! of the train split ("noise level") is truly anomalous but presented as
//! normal; the ground-truth label is kept only for evaluation accounting
//! and is never read by training code.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::{fmt_g17, fmt_g9};

const LAYOUT_TAG: u64 = 0x6c61_796f_7574; // substream for label placement
const PIXEL_TAG: u64 = 0x7069_7865_6c73; // substream for per-sample pixels

/// Square grayscale image, pixels row-major in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    size: usize,
    pixels: Vec<f64>,
}

impl RawImage {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(Error::invalid(format!(
                "image must be square: got {} pixels for size {}",
                pixels.len(),
                size
            )));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(Error::invalid(
                "image pixels must be finite and within [0, 1]".to_string(),
            ));
        }
        Ok(Self { size, pixels })
    }

    fn from_valid(size: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), size * size);
        Self { size, pixels }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One item flowing through the pipeline. `true_label` is hidden ground
/// truth: evaluation and removal accounting read it, training never does.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub image: RawImage,
    pub true_label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub contamination_rate: f64,
    pub image_size: usize,
}

/// Sizes of the label-preserving transform set (dihedral-8 family):
/// `count_train` transforms during refinement scoring, `count_eval` during
/// test-split evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformSpec {
    pub count_train: usize,
    pub count_eval: usize,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            count_train: 4,
            count_eval: 8,
        }
    }
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("count_train", self.count_train), ("count_eval", self.count_eval)] {
            if !(1..=8).contains(&c) {
                return Err(Error::invalid(format!(
                    "{name} must be within 1..=8, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Generation parameters for one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_anomalous: usize,
    pub image_size: usize,
    /// Fraction of the train split that is truly anomalous, in [0, 0.5].
    pub contamination: f64,
    /// Peak additive intensity of the blob defect; each defect scales it
    /// by a seeded severity factor in (0.15, 1.0].
    pub defect_intensity: f64,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub pixel_noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 400,
            n_test_normal: 100,
            n_test_anomalous: 100,
            image_size: 16,
            contamination: 0.2,
            defect_intensity: 0.7,
            pixel_noise: 0.02,
        }
    }
}

/// Round a pixel to 9 significant digits, the dataset file precision, so
/// that save/load is the identity on pixel data.
fn quantize9(v: f64) -> f64 {
    fmt_g9(v).parse().expect("formatted float reparses")
}

/// Smooth background: base level plus one sinusoid across columns and one
/// across rows, each with a seeded random phase and a seeded low frequency
/// (1..=2 cycles), plus pixel noise; clipped to [0, 1].
pub fn synth_normal_image(size: usize, pixel_noise: f64, rng: &mut Rng) -> RawImage {
    let phase_col = rng.range_f64(0.0, 2.0 * PI);
    let phase_row = rng.range_f64(0.0, 2.0 * PI);
    let freq_col = (1 + rng.below(2)) as f64;
    let freq_row = (1 + rng.below(2)) as f64;
    let mut pixels = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let wave_c = (2.0 * PI * freq_col * c as f64 / size as f64 + phase_col).sin();
            let wave_r = (2.0 * PI * freq_row * r as f64 / size as f64 + phase_row).sin();
            let v = 0.45 + 0.15 * wave_c + 0.15 * wave_r + pixel_noise * rng.normal();
            pixels.push(quantize9(v.clamp(0.0, 1.0)));
        }
    }
    RawImage::from_valid(size, pixels)
}

/// Add one localized blob defect: seeded random center over the full image,
/// radius uniform in [size/8, size/4], additive parabolic cap peaking at
/// `intensity` times a seeded severity factor; result clipped to [0, 1].
///
/// The severity factor is heavy-tailed in (0.15, 1.0]: most defects are
/// faint, a small fraction is severe. Real surface-defect corpora share
/// this shape, and the refinement dynamics depend on it: a handful of
/// catastrophic contaminants drive most of the density-model damage.
pub fn add_defect(image: &mut RawImage, intensity: f64, rng: &mut Rng) {
    let size = image.size;
    let center_r = rng.range_f64(0.0, size as f64);
    let center_c = rng.range_f64(0.0, size as f64);
    let radius = rng.range_f64(size as f64 / 8.0, size as f64 / 4.0);
    let u = rng.next_f64();
    let severity = 0.15 + 0.85 * u.powi(2);
    let peak = intensity * severity;
    for r in 0..size {
        for c in 0..size {
            let dr = r as f64 + 0.5 - center_r;
            let dc = c as f64 + 0.5 - center_c;
            let d2 = dr * dr + dc * dc;
            if d2 < radius * radius {
                let bump = peak * (1.0 - d2 / (radius * radius));
                let v = image.pixels[r * size + c] + bump;
                image.pixels[r * size + c] = quantize9(v.clamp(0.0, 1.0));
            }
        }
    }
}

/// Generate a dataset. Pure function of (config, seed): the train split
/// holds exactly round(contamination * n_train) anomalous samples at
/// seeded random positions, the test split is balanced as configured.
pub fn generate(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    if !(0.0..=0.5).contains(&cfg.contamination) || !cfg.contamination.is_finite() {
        return Err(Error::invalid(format!(
            "contamination must be within [0, 0.5], got {}",
            cfg.contamination
        )));
    }
    if cfg.n_train < 10 {
        return Err(Error::invalid(format!(
            "n_train must be at least 10, got {}",
            cfg.n_train
        )));
    }
    if cfg.image_size < 8 || cfg.image_size % 4 != 0 {
        return Err(Error::invalid(format!(
            "image_size must be a multiple of 4 and at least 8, got {}",
            cfg.image_size
        )));
    }
    if cfg.defect_intensity <= 0.0 || !cfg.defect_intensity.is_finite() {
        return Err(Error::invalid(format!(
            "defect_intensity must be positive, got {}",
            cfg.defect_intensity
        )));
    }
    if cfg.pixel_noise < 0.0 || !cfg.pixel_noise.is_finite() {
        return Err(Error::invalid(format!(
            "pixel_noise must be non-negative, got {}",
            cfg.pixel_noise
        )));
    }

    let n_anomalous_train = (cfg.contamination * cfg.n_train as f64).round() as usize;
    let mut train_labels = vec![Label::Anomalous; n_anomalous_train];
    train_labels.resize(cfg.n_train, Label::Normal);
    Rng::substream(seed, LAYOUT_TAG).shuffle(&mut train_labels);

    let mut plan: Vec<(Label, Split)> = train_labels
        .into_iter()
        .map(|l| (l, Split::Train))
        .collect();
    plan.extend(std::iter::repeat_n((Label::Normal, Split::Test), cfg.n_test_normal));
    plan.extend(std::iter::repeat_n((Label::Anomalous, Split::Test), cfg.n_test_anomalous));

    let pixel_base = derive_seed(seed, PIXEL_TAG);
    let samples = plan
        .into_iter()
        .enumerate()
        .map(|(id, (label, split))| {
            let mut rng = Rng::new(derive_seed(pixel_base, id as u64));
            let mut image = synth_normal_image(cfg.image_size, cfg.pixel_noise, &mut rng);
            if label == Label::Anomalous {
                add_defect(&mut image, cfg.defect_intensity, &mut rng);
            }
            Sample {
                id: id as u64,
                image,
                true_label: label,
                split,
            }
        })
        .collect();

    Ok(Dataset {
        samples,
        seed,
        contamination_rate: cfg.contamination,
        image_size: cfg.image_size,
    })
}

impl Dataset {
    pub fn split_samples(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn train_size(&self) -> usize {
        self.split_samples(Split::Train).count()
    }

    pub fn sample_by_id(&self, id: u64) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Serialize: one manifest line, then one CSV row per sample
    /// (`id,split,label,` followed by size*size pixels at 9 significant
    /// digits). UTF-8, LF line endings.
    pub fn to_string_repr(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "manifest seed={} image_size={} contamination_rate={} samples={}\n",
            self.seed,
            self.image_size,
            fmt_g17(self.contamination_rate),
            self.samples.len()
        ));
        for s in &self.samples {
            out.push_str(&format!("{},{},{}", s.id, s.split, s.true_label));
            for p in s.image.pixels() {
                out.push(',');
                out.push_str(&fmt_g9(*p));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string_repr())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_string_repr(&text)
    }

    pub fn from_string_repr(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, manifest) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing manifest"))?;
        let manifest = manifest
            .strip_prefix("manifest ")
            .ok_or_else(|| Error::parse(1, "missing manifest"))?;

        let mut seed = None;
        let mut image_size = None;
        let mut rate = None;
        let mut declared = None;
        for field in manifest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::parse(1, format!("malformed manifest field '{field}'")))?;
            match key {
                "seed" => seed = Some(parse_manifest::<u64>(value, "seed")?),
                "image_size" => image_size = Some(parse_manifest::<usize>(value, "image_size")?),
                "contamination_rate" => {
                    rate = Some(parse_manifest::<f64>(value, "contamination_rate")?)
                }
                "samples" => declared = Some(parse_manifest::<usize>(value, "samples")?),
                other => return Err(Error::parse(1, format!("unknown manifest key '{other}'"))),
            }
        }
        let seed = seed.ok_or_else(|| Error::parse(1, "manifest missing 'seed'"))?;
        let image_size = image_size.ok_or_else(|| Error::parse(1, "manifest missing 'image_size'"))?;
        let rate = rate.ok_or_else(|| Error::parse(1, "manifest missing 'contamination_rate'"))?;
        let declared = declared.ok_or_else(|| Error::parse(1, "manifest missing 'samples'"))?;

        let pixels_per_row = image_size * image_size;
        let mut samples = Vec::with_capacity(declared);
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id: u64 = fields
                .next()
                .unwrap()
                .parse()
                .map_err(|_| Error::parse(line_no, "invalid sample id"))?;
            let split = match fields.next() {
                Some("train") => Split::Train,
                Some("test") => Split::Test,
                other => {
                    return Err(Error::parse(
                        line_no,
                        format!("invalid split '{}'", other.unwrap_or("")),
                    ))
                }
            };
            let label = match fields.next() {
                Some("normal") => Label::Normal,
                Some("anomalous") => Label::Anomalous,
                other => {
                    return Err(Error::parse(
                        line_no,
                        format!("invalid label '{}'", other.unwrap_or("")),
                    ))
                }
            };
            let mut pixels = Vec::with_capacity(pixels_per_row);
            for field in fields {
                let v: f64 = field.parse().map_err(|_| {
                    Error::parse(line_no, format!("invalid pixel value '{field}'"))
                })?;
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::parse(
                        line_no,
                        format!("pixel value {v} out of [0, 1]"),
                    ));
                }
                pixels.push(v);
            }
            if pixels.len() != pixels_per_row {
                return Err(Error::parse(
                    line_no,
                    format!(
                        "expected {} pixel values, found {}",
                        pixels_per_row,
                        pixels.len()
                    ),
                ));
            }
            samples.push(Sample {
                id,
                image: RawImage::from_valid(image_size, pixels),
                true_label: label,
                split,
            });
        }

        if samples.len() != declared {
            return Err(Error::invalid(format!(
                "manifest declares {declared} samples, file holds {}",
                samples.len()
            )));
        }
        let mut ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != samples.len() {
            return Err(Error::invalid("duplicate sample ids".to_string()));
        }
        let n_train = samples.iter().filter(|s| s.split == Split::Train).count();
        if n_train > 0 {
            let n_bad = samples
                .iter()
                .filter(|s| s.split == Split::Train && s.true_label == Label::Anomalous)
                .count() as f64;
            let expected = (rate * n_train as f64).round();
            if (n_bad - expected).abs() > 1.0 {
                return Err(Error::invalid(format!(
                    "contamination_rate {rate} inconsistent with {n_bad} anomalous of {n_train} train samples"
                )));
            }
        }

        Ok(Dataset {
            samples,
            seed,
            contamination_rate: rate,
            image_size,
        })
    }
}

fn parse_manifest<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(1, format!("invalid manifest value for '{key}'")))
}

// ── dihedral transforms ─────────────────────────────────────────────────────

/// The 8 symmetries of the square in their fixed order: identity, rotations
/// by 90/180/270 degrees (clockwise), horizontal mirror, vertical mirror,
/// transpose, anti-transpose.
pub const DIHEDRAL_COUNT: usize = 8;

/// Apply dihedral symmetry `k` (0..8, order documented above).
pub fn dihedral_apply(image: &RawImage, k: usize) -> RawImage {
    let n = image.size;
    let src = |r: usize, c: usize| image.pixels[r * n + c];
    let mut pixels = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let v = match k {
                0 => src(r, c),
                1 => src(n - 1 - c, r),
                2 => src(n - 1 - r, n - 1 - c),
                3 => src(c, n - 1 - r),
                4 => src(r, n - 1 - c),
                5 => src(n - 1 - r, c),
                6 => src(c, r),
                7 => src(n - 1 - c, n - 1 - r),
                _ => panic!("dihedral index {k} out of range"),
            };
            pixels.push(v);
        }
    }
    RawImage::from_valid(n, pixels)
}

/// The first `count` dihedral symmetries of `image`; identity is always
/// element 0. `count` must be within 1..=8.
pub fn dihedral_transforms(image: &RawImage, count: usize) -> Result<Vec<RawImage>> {
    if !(1..=DIHEDRAL_COUNT).contains(&count) {
        return Err(Error::invalid(format!(
            "transform count must be within 1..=8, got {count}"
        )));
    }
    Ok((0..count).map(|k| dihedral_apply(image, k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n_train: usize, contamination: f64) -> DatasetConfig {
        DatasetConfig {
            n_train,
            n_test_normal: 10,
            n_test_anomalous: 10,
            contamination,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn zero_contamination_all_normal() {
        let d = generate(&small_cfg(100, 0.0), 7).unwrap();
        assert_eq!(d.train_size(), 100);
        assert!(d
            .split_samples(Split::Train)
            .all(|s| s.true_label == Label::Normal));
    }

    #[test]
    fn contamination_count_exact() {
        let d = generate(&small_cfg(100, 0.3), 7).unwrap();
        let bad = d
            .split_samples(Split::Train)
            .filter(|s| s.true_label == Label::Anomalous)
            .count();
        assert_eq!(bad, 30);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_cfg(100, 0.3), 7).unwrap();
        let b = generate(&small_cfg(100, 0.3), 7).unwrap();
        assert_eq!(a.to_string_repr().into_bytes(), b.to_string_repr().into_bytes());
    }

    #[test]
    fn rejects_bad_rate_and_size() {
        assert!(generate(&small_cfg(100, 0.6), 7).is_err());
        assert!(generate(&small_cfg(100, -0.1), 7).is_err());
        assert!(generate(&small_cfg(9, 0.1), 7).is_err());
    }

    #[test]
    fn pixels_in_unit_interval() {
        let d = generate(&small_cfg(20, 0.5), 3).unwrap();
        for s in &d.samples {
            assert!(s
                .image
                .pixels()
                .iter()
                .all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn transform_count_one_is_identity() {
        let d = generate(&small_cfg(10, 0.0), 1).unwrap();
        let img = &d.samples[0].image;
        let ts = dihedral_transforms(img, 1).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(&ts[0], img);
    }

    #[test]
    fn rotation_180_is_involution() {
        let d = generate(&small_cfg(10, 0.0), 2).unwrap();
        let img = &d.samples[0].image;
        let ts = dihedral_transforms(img, 4).unwrap();
        assert_eq!(ts.len(), 4);
        let twice = dihedral_apply(&ts[2], 2);
        assert_eq!(&twice, img);
    }

    #[test]
    fn constant_image_invariant_under_all_transforms() {
        let img = RawImage::new(8, vec![0.25; 64]).unwrap();
        let ts = dihedral_transforms(&img, 8).unwrap();
        for t in &ts {
            assert_eq!(t, &img);
        }
    }

    #[test]
    fn dihedral_group_is_closed() {
        // Composing any two of the 8 symmetries lands back in the set;
        // identity is element 0.
        let mut rng = Rng::new(5);
        let img = synth_normal_image(8, 0.05, &mut rng);
        let all: Vec<RawImage> = (0..8).map(|k| dihedral_apply(&img, k)).collect();
        assert_eq!(all[0], img);
        for i in 0..8 {
            for j in 0..8 {
                let composed = dihedral_apply(&all[i], j);
                assert!(
                    all.iter().any(|t| t == &composed),
                    "composition of {i} then {j} left the group"
                );
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let d = generate(&small_cfg(25, 0.2), 11).unwrap();
        let text = d.to_string_repr();
        let back = Dataset::from_string_repr(&text).unwrap();
        assert_eq!(d, back);
        assert_eq!(text, back.to_string_repr());
    }

    #[test]
    fn load_rejects_bad_pixel_with_line_number() {
        let d = generate(&small_cfg(10, 0.0), 1).unwrap();
        let mut text = d.to_string_repr();
        // corrupt a pixel on the third data line (file line 4)
        let lines: Vec<&str> = text.lines().collect();
        let target = lines[3];
        let corrupted = {
            let mut fields: Vec<&str> = target.split(',').collect();
            fields[5] = "not-a-number";
            fields.join(",")
        };
        text = text.replace(target, &corrupted);
        match Dataset::from_string_repr(&text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("not-a-number"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_empty_file_is_missing_manifest() {
        match Dataset::from_string_repr("") {
            Err(Error::Parse { line: 1, msg }) => assert_eq!(msg, "missing manifest"),
            other => panic!("expected missing manifest, got {other:?}"),
        }
    }

    #[test]
    fn defect_changes_the_image() {
        let mut rng = Rng::new(9);
        let base = synth_normal_image(16, 0.02, &mut rng);
        let mut defective = base.clone();
        add_defect(&mut defective, 0.4, &mut rng);
        assert_ne!(base, defective);
    }
}
