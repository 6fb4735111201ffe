//! Patch-blur noise injection and face-size statistics.
//!
//! With probability `p` the face box is cut into a `grid x grid` partition,
//! one cell is picked uniformly and blurred with a separable Gaussian of odd
//! size drawn from `[kernel_min, kernel_max]`. Padding reflects inside the
//! cell (half-sample symmetric), so nothing outside the cell is read or
//! written and the cell mean is preserved.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FaceBox, ImageRecord};
use crate::embednet::InputTransform;
use crate::error::{Error, Result};
use crate::race::RaceCategory;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub p: f64,
    pub grid: u32,
    pub kernel_min: usize,
    pub kernel_max: usize,
    /// Gaussian variance in pixels squared.
    pub variance: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            p: 0.0,
            grid: 4,
            kernel_min: 11,
            kernel_max: 21,
            variance: 1.5,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.p)
            && self.grid >= 1
            && self.kernel_min <= self.kernel_max
            && self.variance > 0.0
            && !self.kernel_sizes().is_empty();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid noise config {self:?}"
            )))
        }
    }

    /// Odd sizes in `[kernel_min, kernel_max]`.
    pub fn kernel_sizes(&self) -> Vec<usize> {
        (self.kernel_min..=self.kernel_max)
            .filter(|k| k % 2 == 1)
            .collect()
    }
}

/// Row-major, channel-interleaved intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f64>,
}

impl PixelImage {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(
                "image dimensions must be positive".into(),
            ));
        }
        let expected = (width * height * channels) as usize;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u32, value: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; (width * height * channels) as usize],
        )
    }

    fn at(&self, x: u32, y: u32, c: u32) -> usize {
        ((y * self.width + x) * self.channels + c) as usize
    }

    pub fn get(&self, x: u32, y: u32, c: u32) -> f64 {
        self.data[self.at(x, y, c)]
    }

    /// 8-bit gray or RGB PNG; alpha is dropped.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        let (data, channels, w, h) = if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            (rgb.into_raw(), 3, w, h)
        } else {
            let l = img.to_luma8();
            let (w, h) = l.dimensions();
            (l.into_raw(), 1, w, h)
        };
        Self::new(
            w,
            h,
            channels,
            data.into_iter().map(|v| v as f64 / 255.0).collect(),
        )
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            n => {
                return Err(Error::InvalidArgument(format!(
                    "cannot write {n}-channel PNG"
                )));
            }
        };
        image::save_buffer(path.as_ref(), &bytes, self.width, self.height, color)?;
        Ok(())
    }
}

pub fn gaussian_kernel(size: usize, variance: f64) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) || !(variance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd and variance > 0, got {size} / {variance}"
        )));
    }
    let c = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * variance)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    Ok(w)
}

/// Index into a length-`n` run extended by half-sample symmetric reflection.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Separable blur of the rectangle `(x0, y0, w, h)`, horizontal then
/// vertical, reading only pixels inside it.
pub fn blur_rect(img: &mut PixelImage, rect: (u32, u32, u32, u32), kernel: &[f64]) {
    let (x0, y0, w, h) = rect;
    let r = (kernel.len() / 2) as isize;
    let (wu, hu) = (w as usize, h as usize);
    let mut buf = vec![0.0; wu * hu];
    let mut tmp = vec![0.0; wu * hu];
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..w {
                buf[y as usize * wu + x as usize] = img.get(x0 + x, y0 + y, c);
            }
        }
        for y in 0..hu {
            for x in 0..wu {
                tmp[y * wu + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * buf[y * wu + reflect(x as isize + k as isize - r, wu)])
                    .sum();
            }
        }
        for y in 0..hu {
            for x in 0..wu {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[reflect(y as isize + k as isize - r, hu) * wu + x])
                    .sum();
                let i = img.at(x0 + x as u32, y0 + y as u32, c);
                img.data[i] = v.clamp(0.0, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlurPatch {
    /// Grid cell (column, row).
    pub cell: (u32, u32),
    /// Pixel rectangle `(x, y, width, height)`.
    pub rect: (u32, u32, u32, u32),
    pub kernel: usize,
}

/// Cell `(col, row)` of a `grid x grid` partition of the box; the last
/// row and column absorb the remainder pixels.
pub fn grid_cell(face: &FaceBox, grid: u32, col: u32, row: u32) -> (u32, u32, u32, u32) {
    let cw = face.width / grid;
    let ch = face.height / grid;
    let w = if col + 1 == grid {
        face.width - cw * (grid - 1)
    } else {
        cw
    };
    let h = if row + 1 == grid {
        face.height - ch * (grid - 1)
    } else {
        ch
    };
    (face.x + col * cw, face.y + row * ch, w, h)
}

/// Returns the (possibly unchanged) image and the blurred patch, if any.
/// The injection draw comes first, so `p = 0` never consumes further
/// randomness.
pub fn inject_patch_blur(
    img: &PixelImage,
    face: &FaceBox,
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<(PixelImage, Option<BlurPatch>)> {
    cfg.validate()?;
    if face.area() == 0 {
        return Err(Error::Degenerate("face box has zero area".into()));
    }
    if !face.fits_within(img.width, img.height) {
        return Err(Error::InvalidArgument(format!(
            "face box {face:?} outside image"
        )));
    }
    if face.width < cfg.grid || face.height < cfg.grid {
        return Err(Error::Degenerate(format!(
            "face box {}x{} smaller than the {} grid",
            face.width, face.height, cfg.grid
        )));
    }
    if !rng.gen_bool(cfg.p) {
        return Ok((img.clone(), None));
    }
    let col = rng.gen_range(0..cfg.grid);
    let row = rng.gen_range(0..cfg.grid);
    let sizes = cfg.kernel_sizes();
    let size = sizes[rng.gen_range(0..sizes.len())];
    let rect = grid_cell(face, cfg.grid, col, row);
    let mut out = img.clone();
    blur_rect(&mut out, rect, &gaussian_kernel(size, cfg.variance)?);
    Ok((
        out,
        Some(BlurPatch {
            cell: (col, row),
            rect,
            kernel: size,
        }),
    ))
}

pub fn face_ratio(record: &ImageRecord) -> Result<f64> {
    let (face, (w, h)) = match (&record.face_box, record.dims) {
        (Some(b), Some(d)) => (b, d),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{} lacks face box or image dimensions",
                record.image_id
            )))
        }
    };
    if w == 0 || h == 0 {
        return Err(Error::Degenerate(format!(
            "{} has zero-size image",
            record.image_id
        )));
    }
    Ok(face.area() as f64 / (w as u64 * h as u64) as f64)
}

/// Per race, ascending face ratios; races without records stay empty.
pub fn ratio_curve(records: &[ImageRecord]) -> Result<[Vec<f64>; 4]> {
    let mut out: [Vec<f64>; 4] = Default::default();
    for r in records {
        out[r.race.index()].push(face_ratio(r)?);
    }
    for v in out.iter_mut() {
        v.sort_by(f64::total_cmp);
    }
    Ok(out)
}

/// CSV `race,index,ratio`.
pub fn write_ratio_curve(curve: &[Vec<f64>; 4], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["race", "index", "ratio"])?;
    for race in RaceCategory::ALL {
        for (i, v) in curve[race.index()].iter().enumerate() {
            w.write_record([race.name(), &i.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Patch blur on feature vectors: a vector is viewed through a sigmoid as a
/// one-channel `height x width` image whose whole frame is the face box.
/// Only pixels of the chosen cell are mapped back through the logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureBlur {
    pub cfg: NoiseConfig,
    pub height: u32,
    pub width: u32,
}

impl FeatureBlur {
    /// Most-square factorization of `dim`.
    pub fn new(cfg: NoiseConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        let h = (1..=dim)
            .filter(|h| dim.is_multiple_of(*h) && h * h <= dim)
            .max()
            .unwrap_or(1);
        let fb = Self {
            cfg,
            height: h as u32,
            width: (dim / h) as u32,
        };
        if fb.height < cfg.grid || fb.width < cfg.grid {
            return Err(Error::InvalidArgument(format!(
                "feature dim {dim} folds to {}x{}, smaller than the {} grid",
                fb.height, fb.width, cfg.grid
            )));
        }
        Ok(fb)
    }

    pub fn blur(&self, x: &mut [f64], rng: &mut impl Rng) -> Result<Option<BlurPatch>> {
        let n = (self.height * self.width) as usize;
        if x.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: x.len(),
            });
        }
        let pixels: Vec<f64> = x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let img = PixelImage::new(self.width, self.height, 1, pixels)?;
        let face = FaceBox {
            x: 0,
            y: 0,
            width: self.width,
            height: self.height,
        };
        let (out, patch) = inject_patch_blur(&img, &face, &self.cfg, rng)?;
        if let Some(p) = patch {
            let (x0, y0, w, h) = p.rect;
            for yy in y0..y0 + h {
                for xx in x0..x0 + w {
                    let i = (yy * self.width + xx) as usize;
                    let v = out.data[i].clamp(1e-12, 1.0 - 1e-12);
                    x[i] = (v / (1.0 - v)).ln();
                }
            }
        }
        Ok(patch)
    }
}

impl InputTransform for FeatureBlur {
    fn apply(&self, epoch: usize, image_id: &str, x: &mut [f64]) -> Result<()> {
        let mut rng = seeds::stream(self.cfg.seed, &["noise", &epoch.to_string(), image_id]);
        self.blur(x, &mut rng).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: u32, h: u32, c: u32, seed: u64) -> PixelImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PixelImage::new(w, h, c, (0..w * h * c).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(gaussian_kernel(1, 1.5).unwrap(), vec![1.0]);
        let k = gaussian_kernel(3, 1.5).unwrap();
        assert!((k[1] / k[0] - (1.0f64 / 3.0).exp()).abs() < 1e-12);
        for (a, b) in k.iter().zip([0.2945, 0.4110, 0.2945]) {
            assert!((a - b).abs() < 1e-3);
        }
        for size in (1..=21).step_by(2) {
            for var in [0.5, 1.5, 4.0] {
                let k = gaussian_kernel(size, var).unwrap();
                assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(k.iter().zip(k.iter().rev()).all(|(a, b)| a == b));
            }
        }
        assert!(gaussian_kernel(4, 1.5).is_err());
    }

    #[test]
    fn reflection_stays_in_range() {
        assert_eq!(
            (-3..7).map(|i| reflect(i, 3)).collect::<Vec<_>>(),
            [2, 1, 0, 0, 1, 2, 2, 1, 0, 0]
        );
        for n in 1..6 {
            for i in -40..40 {
                assert!(reflect(i, n) < n);
            }
        }
    }

    #[test]
    fn zero_probability_is_identity() {
        let img = random_image(40, 30, 3, 1);
        let face = FaceBox {
            x: 5,
            y: 2,
            width: 30,
            height: 25,
        };
        let cfg = NoiseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (out, patch) = inject_patch_blur(&img, &face, &cfg, &mut rng).unwrap();
            assert!(patch.is_none());
            assert_eq!(out, img);
        }
    }

    #[test]
    fn constant_cell_is_unchanged() {
        let img = PixelImage::filled(32, 32, 1, 0.37).unwrap();
        let face = FaceBox {
            x: 0,
            y: 0,
            width: 32,
            height: 32,
        };
        let cfg = NoiseConfig {
            p: 1.0,
            ..Default::default()
        };
        let (out, patch) =
            inject_patch_blur(&img, &face, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(patch.is_some());
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn blur_touches_only_the_cell_and_keeps_its_mean() {
        let face = FaceBox {
            x: 3,
            y: 4,
            width: 37,
            height: 29,
        };
        let cfg = NoiseConfig {
            p: 1.0,
            ..Default::default()
        };
        for seed in 0..30 {
            let img = random_image(48, 40, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (out, patch) = inject_patch_blur(&img, &face, &cfg, &mut rng).unwrap();
            let (x0, y0, w, h) = patch.unwrap().rect;
            let mut sums = [0.0f64; 2];
            for y in 0..img.height {
                for x in 0..img.width {
                    for c in 0..2 {
                        let inside = x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
                        if inside {
                            sums[c as usize] += out.get(x, y, c) - img.get(x, y, c);
                        } else {
                            assert_eq!(out.get(x, y, c), img.get(x, y, c));
                        }
                    }
                }
            }
            let n = (w * h) as f64;
            assert!(sums.iter().all(|s| (s / n).abs() < 1e-6), "{sums:?}");
        }
    }

    #[test]
    fn remainder_goes_to_last_cells() {
        let face = FaceBox {
            x: 10,
            y: 0,
            width: 11,
            height: 9,
        };
        assert_eq!(grid_cell(&face, 4, 0, 0), (10, 0, 2, 2));
        assert_eq!(grid_cell(&face, 4, 3, 3), (16, 6, 5, 3));
        let total: u32 = (0..4).map(|c| grid_cell(&face, 4, c, 0).2).sum();
        assert_eq!(total, 11);
    }

    /// Dense 2-D convolution over the reflected cell, no separability.
    fn dense_oracle(cell: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
        let r = (k.len() / 2) as isize;
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ky, wy) in k.iter().enumerate() {
                    for (kx, wx) in k.iter().enumerate() {
                        let sy = reflect(y as isize + ky as isize - r, h);
                        let sx = reflect(x as isize + kx as isize - r, w);
                        acc += wy * wx * cell[sy * w + sx];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    #[test]
    fn impulse_matches_dense_convolution() {
        let (w, h) = (2usize, 7usize);
        let mut data = vec![0.0; w * h];
        data[3 * w] = 1.0;
        let mut img = PixelImage::new(w as u32, h as u32, 1, data.clone()).unwrap();
        for size in [1, 3, 11, 21] {
            let k = gaussian_kernel(size, 1.5).unwrap();
            let mut probe = img.clone();
            blur_rect(&mut probe, (0, 0, w as u32, h as u32), &k);
            let expect = dense_oracle(&data, w, h, &k);
            for (a, b) in probe.data.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        img.data[0] = 0.5;
        assert_eq!(img.get(0, 0, 0), 0.5);
    }

    #[test]
    fn injection_rate_tracks_p() {
        let img = PixelImage::filled(16, 16, 1, 0.5).unwrap();
        let face = FaceBox {
            x: 0,
            y: 0,
            width: 16,
            height: 16,
        };
        for p in [0.1, 0.3, 0.5] {
            let cfg = NoiseConfig {
                p,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let hits = (0..10_000)
                .filter(|_| {
                    inject_patch_blur(&img, &face, &cfg, &mut rng)
                        .unwrap()
                        .1
                        .is_some()
                })
                .count();
            assert!((hits as f64 / 10_000.0 - p).abs() <= 0.02, "{p}: {hits}");
        }
    }

    #[test]
    fn kernel_sizes_are_odd_and_inclusive() {
        assert_eq!(
            NoiseConfig::default().kernel_sizes(),
            vec![11, 13, 15, 17, 19, 21]
        );
        let face = FaceBox {
            x: 0,
            y: 0,
            width: 0,
            height: 5,
        };
        let img = PixelImage::filled(8, 8, 1, 0.0).unwrap();
        assert!(inject_patch_blur(
            &img,
            &face,
            &NoiseConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
    }

    fn record(bw: u32, bh: u32, w: u32, h: u32, race: RaceCategory) -> ImageRecord {
        ImageRecord {
            image_id: format!("{bw}x{bh}"),
            subject_id: "s".into(),
            race,
            path: String::new(),
            face_box: Some(FaceBox {
                x: 0,
                y: 0,
                width: bw,
                height: bh,
            }),
            dims: Some((w, h)),
        }
    }

    #[test]
    fn face_ratio_examples() {
        assert_eq!(
            face_ratio(&record(64, 64, 128, 128, RaceCategory::Asian)).unwrap(),
            0.25
        );
        assert_eq!(
            face_ratio(&record(50, 40, 50, 40, RaceCategory::Asian)).unwrap(),
            1.0
        );
        assert!(
            (face_ratio(&record(30, 40, 100, 200, RaceCategory::Asian)).unwrap() - 0.06).abs()
                < 1e-15
        );
        let mut r = record(1, 1, 2, 2, RaceCategory::Indian);
        r.dims = None;
        assert!(face_ratio(&r).is_err());
    }

    #[test]
    fn ratio_curve_sorts_per_race() {
        let recs = vec![
            record(30, 10, 10, 100, RaceCategory::African),
            record(10, 10, 10, 100, RaceCategory::African),
            record(20, 10, 10, 100, RaceCategory::African),
            record(5, 5, 10, 10, RaceCategory::Asian),
        ];
        let c = ratio_curve(&recs).unwrap();
        assert_eq!(c[0], vec![0.1, 0.2, 0.3]);
        assert_eq!(c[1], vec![0.25]);
        assert!(c[2].is_empty());
    }

    #[test]
    fn feature_blur_is_local_and_optional() {
        let cfg = NoiseConfig {
            p: 1.0,
            seed: 4,
            ..Default::default()
        };
        let fb = FeatureBlur::new(cfg, 32).unwrap();
        assert_eq!((fb.height, fb.width), (4, 8));
        let x0: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let mut x = x0.clone();
        let patch = fb
            .blur(&mut x, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .unwrap();
        let (cx, cy, w, h) = patch.rect;
        for i in 0..32u32 {
            let (xx, yy) = (i % 8, i / 8);
            if !(xx >= cx && xx < cx + w && yy >= cy && yy < cy + h) {
                assert_eq!(x[i as usize], x0[i as usize]);
            }
        }
        let off = FeatureBlur::new(NoiseConfig { p: 0.0, ..cfg }, 32).unwrap();
        let mut y = x0.clone();
        off.apply(3, "img", &mut y).unwrap();
        assert_eq!(y, x0);
        assert!(FeatureBlur::new(cfg, 31).is_err());
    }

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img =
            PixelImage::new(3, 2, 3, (0..18).map(|i| i as f64 * 10.0 / 255.0).collect()).unwrap();
        let path = dir.path().join("x.png");
        img.write_png(&path).unwrap();
        let back = PixelImage::read_png(&path).unwrap();
        assert_eq!(back.channels, 3);
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
