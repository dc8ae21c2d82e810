//! Synthetic bi-temporal scenes and the on-disk dataset format.
//!
//! A scene is a value-noise ground texture with a few static buildings.
//! The second acquisition may add or remove target buildings (the pixel
//! ground truth), add or remove small bright "vehicles" (distractors,
//! recorded in `noise_mask`), and carries a global brightness / colour
//! shift plus sensor noise. Distractors show up more often in changed scenes
//! than in unchanged ones, which is what makes them co-occurring noise for
//! an image-level classifier.
//!
//! Sample `i` of a split is a pure function of `(seed, split, i)`.
//!
//! Directory layout:
//!
//! ```text
//! index.csv          id,label
//! t1/<id>.png        8-bit RGB
//! t2/<id>.png        8-bit RGB
//! gt/<id>.png        8-bit gray, 0/255   (val/test only)
//! noise/<id>.png     8-bit gray, 0/255   (val/test only)
//! ```

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    /// Whether the on-disk format carries `gt/` and `noise/` for this split.
    pub fn has_masks_on_disk(self) -> bool {
        !matches!(self, Split::Train)
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One co-registered image pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// 3×H×W in `[0, 1]`, channel-major.
    pub x_t1: Vec<f64>,
    pub x_t2: Vec<f64>,
    pub label: u8,
    /// Changed pixels, evaluation only.
    pub gt_mask: Option<Vec<u8>>,
    /// Distractor pixels, diagnostics only.
    pub noise_mask: Option<Vec<u8>>,
}

impl PairedSample {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// A stacked mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub x_t1: Tensor,
    pub x_t2: Tensor,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
}

impl PairedBatch {
    pub fn from_samples(samples: &[&PairedSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("empty batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut a = Vec::with_capacity(samples.len() * CHANNELS * h * w);
        let mut b = Vec::with_capacity(a.capacity());
        for s in samples {
            if (s.height, s.width) != (h, w) {
                return Err(Error::Shape(format!(
                    "sample {} is {}x{}, batch is {h}x{w}",
                    s.id, s.height, s.width
                )));
            }
            a.extend_from_slice(&s.x_t1);
            b.extend_from_slice(&s.x_t2);
        }
        let n = samples.len();
        Ok(PairedBatch {
            x_t1: Tensor::new(vec![n, CHANNELS, h, w], a)?,
            x_t2: Tensor::new(vec![n, CHANNELS, h, w], b)?,
            labels: samples.iter().map(|s| s.label).collect(),
            ids: samples.iter().map(|s| s.id.clone()).collect(),
        })
    }

    pub fn from_tensors(x_t1: Tensor, x_t2: Tensor, labels: Vec<u8>) -> Result<Self> {
        let n = x_t1.dims4()?[0];
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} pairs", labels.len())));
        }
        Ok(PairedBatch {
            x_t1,
            x_t2,
            labels,
            ids: (0..n).map(|i| format!("pair{i}")).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Inclusive range helper used by the scene configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: PartialOrd + Copy + std::fmt::Debug> Range<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Range { lo, hi }
    }

    fn check(&self, field: &str) -> Result<()> {
        if self.lo > self.hi {
            return Err(Error::Config(format!(
                "{field}: empty range {:?}..={:?}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub image_size: usize,
    /// Probability that a pair contains a target change.
    pub change_rate: f64,
    /// Target buildings added/removed in a changed pair.
    pub changes_per_scene: Range<usize>,
    pub building_size: Range<usize>,
    pub static_buildings: Range<usize>,
    /// Distractors in a changed pair.
    pub distractor_count: Range<usize>,
    /// Probability that an unchanged pair gets distractors at all.
    pub unchanged_distractor_rate: f64,
    pub distractor_size: Range<usize>,
    /// Magnitude of the global brightness offset applied to t2.
    pub brightness_shift: Range<f64>,
    /// Magnitude of the per-channel colour offset applied to t2.
    pub hue_shift: Range<f64>,
    /// Per-pixel sensor noise amplitude (uniform, both dates).
    pub pixel_noise: f64,
    pub texture_octaves: usize,
    pub texture_cell: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 64,
            change_rate: 0.5,
            changes_per_scene: Range::new(1, 2),
            building_size: Range::new(10, 18),
            static_buildings: Range::new(0, 2),
            distractor_count: Range::new(2, 4),
            unchanged_distractor_rate: 0.6,
            distractor_size: Range::new(3, 5),
            brightness_shift: Range::new(0.02, 0.08),
            hue_shift: Range::new(0.0, 0.04),
            pixel_noise: 0.02,
            texture_octaves: 3,
            texture_cell: 16,
            train_size: 2000,
            val_size: 200,
            test_size: 400,
            seed: 42,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config("image_size must be at least 16".into()));
        }
        for (name, p) in [
            ("change_rate", self.change_rate),
            ("unchanged_distractor_rate", self.unchanged_distractor_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        self.changes_per_scene.check("changes_per_scene")?;
        self.building_size.check("building_size")?;
        self.static_buildings.check("static_buildings")?;
        self.distractor_count.check("distractor_count")?;
        self.distractor_size.check("distractor_size")?;
        self.brightness_shift.check("brightness_shift")?;
        self.hue_shift.check("hue_shift")?;
        if self.changes_per_scene.lo == 0 && self.change_rate > 0.0 {
            return Err(Error::Config(
                "changes_per_scene must start at 1 when change_rate > 0".into(),
            ));
        }
        if self.building_size.lo < 2 || self.building_size.hi > self.image_size / 2 {
            return Err(Error::Config(format!(
                "building_size must lie in 2..={}",
                self.image_size / 2
            )));
        }
        if self.distractor_size.lo < 1 || self.distractor_size.hi > self.image_size / 4 {
            return Err(Error::Config(format!(
                "distractor_size must lie in 1..={}",
                self.image_size / 4
            )));
        }
        if self.brightness_shift.lo < 0.0 || self.hue_shift.lo < 0.0 || self.pixel_noise < 0.0 {
            return Err(Error::Config("shift and noise magnitudes must be nonnegative".into()));
        }
        if self.texture_cell == 0 {
            return Err(Error::Config("texture_cell must be positive".into()));
        }
        Ok(())
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_size,
            Split::Val => self.val_size,
            Split::Test => self.test_size,
        }
    }
}

/// Generates every sample of `split`.
pub fn generate(config: &SceneConfig, split: Split) -> Result<Vec<PairedSample>> {
    config.validate()?;
    (0..config.split_size(split))
        .map(|i| generate_sample(config, split, i))
        .collect()
}

/// Sample `index` of `split`, independent of every other sample.
pub fn generate_sample(config: &SceneConfig, split: Split, index: usize) -> Result<PairedSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream((split.stream() << 40) | index as u64);
    Ok(SceneBuilder::new(config, &mut rng).build(format!("{}_{index:05}", split.name())))
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    y: usize,
    x: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn overlaps(&self, o: &Rect, margin: usize) -> bool {
        self.y < o.y + o.h + margin
            && o.y < self.y + self.h + margin
            && self.x < o.x + o.w + margin
            && o.x < self.x + self.w + margin
    }
}

struct SceneBuilder<'a, R: Rng> {
    cfg: &'a SceneConfig,
    rng: &'a mut R,
    size: usize,
}

impl<'a, R: Rng> SceneBuilder<'a, R> {
    fn new(cfg: &'a SceneConfig, rng: &'a mut R) -> Self {
        SceneBuilder {
            cfg,
            rng,
            size: cfg.image_size,
        }
    }

    fn range(&mut self, r: Range<usize>) -> usize {
        self.rng.gen_range(r.lo..=r.hi)
    }

    fn signed(&mut self, r: Range<f64>) -> f64 {
        let mag = if r.hi > r.lo {
            self.rng.gen_range(r.lo..=r.hi)
        } else {
            r.lo
        };
        if self.rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    }

    fn place(&mut self, h: usize, w: usize, avoid: &[Rect], margin: usize) -> Option<Rect> {
        for _ in 0..64 {
            let r = Rect {
                y: self.rng.gen_range(0..=self.size - h),
                x: self.rng.gen_range(0..=self.size - w),
                h,
                w,
            };
            if avoid.iter().all(|a| !a.overlaps(&r, margin)) {
                return Some(r);
            }
        }
        None
    }

    fn build(mut self, id: String) -> PairedSample {
        let n = self.size;
        let plane = n * n;
        let ground = self.texture();
        let mut t1 = ground.clone();

        let mut occupied = Vec::new();
        let statics = self.range(self.cfg.static_buildings);
        for _ in 0..statics {
            let (h, w) = (self.range(self.cfg.building_size), self.range(self.cfg.building_size));
            if let Some(r) = self.place(h, w, &occupied, 2) {
                let roof = self.roof_colour();
                paint_building(&mut t1, n, r, roof);
                occupied.push(r);
            }
        }
        let mut t2 = t1.clone();
        let mut gt = vec![0u8; plane];

        let changed = self.rng.gen_bool(self.cfg.change_rate);
        if changed {
            let count = self.range(self.cfg.changes_per_scene);
            let mut placed = 0;
            for _ in 0..count {
                let (h, w) = (self.range(self.cfg.building_size), self.range(self.cfg.building_size));
                let Some(r) = self.place(h, w, &occupied, 2) else { continue };
                let roof = self.roof_colour();
                // appear in t2, or disappear from t1
                if self.rng.gen_bool(0.5) {
                    paint_building(&mut t2, n, r, roof);
                } else {
                    paint_building(&mut t1, n, r, roof);
                }
                fill_mask(&mut gt, n, r);
                occupied.push(r);
                placed += 1;
            }
            if placed == 0 {
                // guarantee the label invariant even if placement failed
                let s = self.cfg.building_size.lo;
                let r = Rect { y: 0, x: 0, h: s, w: s };
                let roof = self.roof_colour();
                paint_building(&mut t2, n, r, roof);
                fill_mask(&mut gt, n, r);
                occupied.push(r);
            }
        }

        let mut noise = vec![0u8; plane];
        let distractors = if changed || self.rng.gen_bool(self.cfg.unchanged_distractor_rate) {
            self.range(self.cfg.distractor_count)
        } else {
            0
        };
        let targets: Vec<Rect> = occupied.clone();
        for _ in 0..distractors {
            let (h, w) = (self.range(self.cfg.distractor_size), self.range(self.cfg.distractor_size));
            let Some(r) = self.place(h, w, &targets, 1) else { continue };
            let colour = self.vehicle_colour();
            if self.rng.gen_bool(0.5) {
                paint_rect(&mut t2, n, r, colour);
            } else {
                paint_rect(&mut t1, n, r, colour);
            }
            fill_mask(&mut noise, n, r);
        }
        for (g, m) in gt.iter().zip(noise.iter_mut()) {
            if *g != 0 {
                *m = 0;
            }
        }

        let bright = self.signed(self.cfg.brightness_shift);
        for c in 0..CHANNELS {
            let offset = bright + self.signed(self.cfg.hue_shift);
            for v in &mut t2[c * plane..(c + 1) * plane] {
                *v += offset;
            }
        }
        let amp = self.cfg.pixel_noise;
        for img in [&mut t1, &mut t2] {
            for v in img.iter_mut() {
                if amp > 0.0 {
                    *v += self.rng.gen_range(-amp..=amp);
                }
                *v = quantize(*v);
            }
        }

        PairedSample {
            id,
            height: n,
            width: n,
            x_t1: t1,
            x_t2: t2,
            label: u8::from(gt.iter().any(|&g| g != 0)),
            gt_mask: Some(gt),
            noise_mask: Some(noise),
        }
    }

    /// Multi-octave value noise tinted towards vegetation / bare soil.
    fn texture(&mut self) -> Vec<f64> {
        let n = self.size;
        let mut field = vec![0.0; n * n];
        let mut amp = 1.0;
        let mut total = 0.0;
        let mut cell = self.cfg.texture_cell as f64;
        for _ in 0..self.cfg.texture_octaves.max(1) {
            let lattice = (n as f64 / cell).ceil() as usize + 2;
            let values: Vec<f64> = (0..lattice * lattice).map(|_| self.rng.gen()).collect();
            for y in 0..n {
                let fy = y as f64 / cell;
                let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
                for x in 0..n {
                    let fx = x as f64 / cell;
                    let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
                    let v00 = values[y0 * lattice + x0];
                    let v01 = values[y0 * lattice + x0 + 1];
                    let v10 = values[(y0 + 1) * lattice + x0];
                    let v11 = values[(y0 + 1) * lattice + x0 + 1];
                    let top = v00 + (v01 - v00) * tx;
                    let bot = v10 + (v11 - v10) * tx;
                    field[y * n + x] += amp * (top + (bot - top) * ty);
                }
            }
            total += amp;
            amp *= 0.5;
            cell = (cell / 2.0).max(1.0);
        }
        let base = [
            self.rng.gen_range(0.25..0.45),
            self.rng.gen_range(0.35..0.55),
            self.rng.gen_range(0.20..0.35),
        ];
        let mut img = vec![0.0; CHANNELS * n * n];
        for c in 0..CHANNELS {
            for (i, f) in field.iter().enumerate() {
                img[c * n * n + i] = base[c] * (0.7 + 0.6 * f / total);
            }
        }
        img
    }

    fn roof_colour(&mut self) -> [f64; 3] {
        if self.rng.gen_bool(0.5) {
            let g = self.rng.gen_range(0.55..0.75);
            [g, g, g + 0.03]
        } else {
            [
                self.rng.gen_range(0.55..0.70),
                self.rng.gen_range(0.25..0.35),
                self.rng.gen_range(0.20..0.28),
            ]
        }
    }

    fn vehicle_colour(&mut self) -> [f64; 3] {
        match self.rng.gen_range(0..3) {
            0 => [0.95, 0.95, 0.95],
            1 => [0.95, 0.90, 0.15],
            _ => [0.15, 0.35, 0.95],
        }
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn paint_rect(img: &mut [f64], n: usize, r: Rect, colour: [f64; 3]) {
    for (c, &col) in colour.iter().enumerate() {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                img[c * n * n + y * n + x] = col;
            }
        }
    }
}

/// Roof with a one-pixel darker rim.
fn paint_building(img: &mut [f64], n: usize, r: Rect, roof: [f64; 3]) {
    paint_rect(img, n, r, roof.map(|v| v * 0.6));
    if r.h > 2 && r.w > 2 {
        paint_rect(
            img,
            n,
            Rect {
                y: r.y + 1,
                x: r.x + 1,
                h: r.h - 2,
                w: r.w - 2,
            },
            roof,
        );
    }
}

fn fill_mask(mask: &mut [u8], n: usize, r: Rect) {
    for y in r.y..r.y + r.h {
        for x in r.x..r.x + r.w {
            mask[y * n + x] = 1;
        }
    }
}

// -------------------------------------------------------------------------
// on-disk format
// -------------------------------------------------------------------------

/// Writes samples in the directory layout described at module level.
/// Masks are written only when `with_masks` is set and the sample has them.
pub fn write_dataset(samples: &[PairedSample], dir: &Path, with_masks: bool) -> Result<()> {
    for sub in ["t1", "t2", "gt", "noise"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
    index.write_record(["id", "label"])?;
    for s in samples {
        index.write_record([s.id.as_str(), &s.label.to_string()])?;
        rgb_image(&s.x_t1, s.height, s.width).save(dir.join("t1").join(format!("{}.png", s.id)))?;
        rgb_image(&s.x_t2, s.height, s.width).save(dir.join("t2").join(format!("{}.png", s.id)))?;
        if with_masks {
            if let Some(gt) = &s.gt_mask {
                mask_image(gt, s.height, s.width).save(dir.join("gt").join(format!("{}.png", s.id)))?;
            }
            if let Some(nm) = &s.noise_mask {
                mask_image(nm, s.height, s.width)
                    .save(dir.join("noise").join(format!("{}.png", s.id)))?;
            }
        }
    }
    index.flush()?;
    Ok(())
}

/// Reads a dataset directory. Missing `gt/` or `noise/` files yield samples
/// whose masks are `None`.
pub fn load_dataset(dir: &Path) -> Result<Vec<PairedSample>> {
    let index_path = dir.join("index.csv");
    let ds_err = |msg: String| Error::Dataset {
        path: index_path.clone(),
        msg,
    };
    if !index_path.exists() {
        return Err(ds_err("index.csv not found".into()));
    }
    let mut reader = csv::Reader::from_path(&index_path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "label"] {
        return Err(ds_err(format!("expected header id,label, got {headers:?}")));
    }
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(ds_err(format!("row {} has {} fields", line + 2, rec.len())));
        }
        let id = rec[0].to_string();
        let label: u8 = match rec[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(ds_err(format!("label {other:?} for {id} is not 0 or 1"))),
        };
        let (x_t1, h, w) = read_rgb(&dir.join("t1").join(format!("{id}.png")))?;
        let (x_t2, h2, w2) = read_rgb(&dir.join("t2").join(format!("{id}.png")))?;
        if (h, w) != (h2, w2) {
            return Err(ds_err(format!("t1/t2 sizes differ for {id}")));
        }
        let gt_mask = read_mask(&dir.join("gt").join(format!("{id}.png")), h, w)?;
        let noise_mask = read_mask(&dir.join("noise").join(format!("{id}.png")), h, w)?;
        out.push(PairedSample {
            id,
            height: h,
            width: w,
            x_t1,
            x_t2,
            label,
            gt_mask,
            noise_mask,
        });
    }
    Ok(out)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_image(data: &[f64], h: usize, w: usize) -> RgbImage {
    let plane = h * w;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(data[i]), to_u8(data[plane + i]), to_u8(data[2 * plane + i])])
    })
}

pub fn mask_image(mask: &[u8], h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[y as usize * w + x as usize] != 0 { 255 } else { 0 }])
    })
}

/// Grayscale PNG of a `[0, 1]` map, `round(255·v)`.
pub fn heat_image(values: &[f64], h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([to_u8(values[y as usize * w + x as usize])])
    })
}

fn read_rgb(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    if !path.exists() {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            msg: "missing image".into(),
        });
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let mut data = vec![0.0; CHANNELS * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..CHANNELS {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Ok((data, h, w))
}

fn read_mask(path: &Path, h: usize, w: usize) -> Result<Option<Vec<u8>>> {
    if !path.exists() {
        return Ok(None);
    }
    let img = image::open(path)?.to_luma8();
    if (img.height() as usize, img.width() as usize) != (h, w) {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            msg: format!("mask is {}x{}, images are {h}x{w}", img.height(), img.width()),
        });
    }
    Ok(Some(img.pixels().map(|p| u8::from(p[0] >= 128)).collect()))
}
