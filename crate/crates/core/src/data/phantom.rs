use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ScanSlice;
use crate::grid::{Image, Mask};
use crate::{seed, Error, Result};

/// Control points per side of the grid-distortion displacement field.
const DISTORTION_GRID: usize = 4;
const MAX_PLACEMENT_ATTEMPTS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Pixels per side.
    pub image_size: usize,
    pub n_slices: usize,
    pub abnormal_fraction: f64,
    pub blob_sigma: f64,
    pub blob_radius: f64,
    /// Anomaly peak intensity is drawn uniformly from this interval.
    pub blob_amplitude_range: [f64; 2],
    pub min_organ_area: usize,
    pub seed: u64,
    /// Blob rotation is drawn uniformly from ±this many degrees.
    pub rotation_deg: f64,
    pub scale_range: [f64; 2],
    /// Largest grid-distortion displacement as a fraction of the image side.
    pub distortion: f64,
    /// Standard deviation of per-pixel acquisition noise.
    pub noise_std: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_slices: 640,
            abnormal_fraction: 0.5,
            blob_sigma: 3.0,
            blob_radius: 7.0,
            blob_amplitude_range: [0.35, 0.5],
            min_organ_area: 32,
            seed: 0,
            rotation_deg: 180.0,
            scale_range: [0.85, 1.2],
            distortion: 0.1,
            noise_std: 0.01,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::config("image_size", "must be at least 16"));
        }
        if self.n_slices == 0 {
            return Err(Error::config("n_slices", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.abnormal_fraction) {
            return Err(Error::config("abnormal_fraction", "must lie in [0, 1]"));
        }
        if !(self.blob_sigma > 0.0) {
            return Err(Error::config("blob_sigma", "must be positive"));
        }
        if !(self.blob_radius >= self.blob_sigma) {
            return Err(Error::config("blob_radius", "must be at least blob_sigma"));
        }
        let [lo, hi] = self.blob_amplitude_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config("blob_amplitude_range", "must satisfy 0 < lo <= hi <= 1"));
        }
        if self.min_organ_area == 0 {
            return Err(Error::config("min_organ_area", "must be at least 1"));
        }
        if self.min_organ_area > self.image_size * self.image_size {
            return Err(Error::config("min_organ_area", "exceeds the image area"));
        }
        let [slo, shi] = self.scale_range;
        if !(0.0 < slo && slo <= shi) {
            return Err(Error::config("scale_range", "must satisfy 0 < lo <= hi"));
        }
        if !(0.0..0.5).contains(&self.distortion) {
            return Err(Error::config("distortion", "must lie in [0, 0.5)"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std", "must be non-negative"));
        }
        Ok(())
    }
}

fn ellipse_mask(size: usize, center: (f64, f64), axes: (f64, f64), angle: f64) -> Mask {
    let (sa, ca) = angle.sin_cos();
    Mask::from_fn(size, size, |r, c| {
        let (dy, dx) = (r as f64 - center.0, c as f64 - center.1);
        let u = dx * ca + dy * sa;
        let v = -dx * sa + dy * ca;
        (u / axes.0).powi(2) + (v / axes.1).powi(2) <= 1.0
    })
}

/// Smooth field in `[0, 1]`: uniform noise on a coarse grid, bilinearly upsampled.
fn low_frequency_field(size: usize, coarse: usize, rng: &mut impl Rng) -> Image {
    let values = (0..coarse * coarse).map(|_| rng.gen::<f64>()).collect();
    Image::new(coarse, coarse, values).expect("coarse grid").resize_bilinear(size, size)
}

/// Background slice with one elliptical "organ" region.
pub fn generate_phantom_background(config: &PhantomConfig, seed: u64) -> Result<(Image, Mask)> {
    config.validate()?;
    let size = config.image_size;
    let s = size as f64;
    let mut rng = seed::rng(seed);

    let background = low_frequency_field(size, 6, &mut rng).map(|v| 0.15 + 0.2 * v);

    let mut organ = None;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let center = (rng.gen_range(0.35..0.65) * s, rng.gen_range(0.35..0.65) * s);
        let mut axes = (rng.gen_range(0.14..0.26) * s, rng.gen_range(0.14..0.26) * s);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let mut mask = ellipse_mask(size, center, axes, angle);
        if mask.area() < config.min_organ_area {
            let grow = (config.min_organ_area as f64 / mask.area().max(1) as f64).sqrt() * 1.05;
            axes = ((axes.0 * grow).min(0.5 * s), (axes.1 * grow).min(0.5 * s));
            mask = ellipse_mask(size, center, axes, angle);
        }
        if mask.area() >= config.min_organ_area {
            organ = Some(mask);
            break;
        }
    }
    let organ = organ.ok_or_else(|| {
        Error::config("min_organ_area", format!("no organ of {} pixels fits a {size}×{size} image", config.min_organ_area))
    })?;

    let texture = low_frequency_field(size, 10, &mut rng);
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut image = Image::zeros(size, size);
    for r in 0..size {
        for c in 0..size {
            let mut v = background.get(r, c);
            if organ.get(r, c) {
                v += 0.2 + 0.06 * (texture.get(r, c) - 0.5);
            }
            if config.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            image.set(r, c, v.clamp(0.0, 1.0));
        }
    }
    Ok((image, organ))
}

/// Truncated isotropic Gaussian: `amplitude·exp(−d²/(2σ²))` for `d ≤ radius`, else 0.
pub fn gaussian_blob(
    height: usize,
    width: usize,
    center: (f64, f64),
    sigma: f64,
    radius: f64,
    amplitude: f64,
) -> Result<Image> {
    if !(sigma > 0.0) {
        return Err(Error::config("blob_sigma", "must be positive"));
    }
    if !(0.0..height as f64).contains(&center.0) || !(0.0..width as f64).contains(&center.1) {
        return Err(Error::Data(format!("blob centre {center:?} outside a {height}×{width} image")));
    }
    Ok(Image::from_fn(height, width, |r, c| {
        let d2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
        if d2.sqrt() <= radius {
            amplitude * (-d2 / (2.0 * sigma * sigma)).exp()
        } else {
            0.0
        }
    }))
}

/// Parameters of one blob warp: rotation and isotropic scale about the blob
/// centroid followed by a smooth displacement field.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobWarp {
    pub rotation_rad: f64,
    pub scale: f64,
    /// `DISTORTION_GRID²` control-point displacements `(dy, dx)` in pixels, row-major.
    pub displacement: Vec<(f64, f64)>,
}

impl BlobWarp {
    pub fn identity() -> Self {
        Self { rotation_rad: 0.0, scale: 1.0, displacement: vec![(0.0, 0.0); DISTORTION_GRID * DISTORTION_GRID] }
    }

    pub fn sample(config: &PhantomConfig, rng: &mut impl Rng) -> Self {
        let rot = config.rotation_deg.to_radians();
        let rotation_rad = if rot > 0.0 { rng.gen_range(-rot..=rot) } else { 0.0 };
        let [lo, hi] = config.scale_range;
        let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let d = config.distortion * config.image_size as f64;
        let displacement = (0..DISTORTION_GRID * DISTORTION_GRID)
            .map(|_| if d > 0.0 { (rng.gen_range(-d..=d), rng.gen_range(-d..=d)) } else { (0.0, 0.0) })
            .collect();
        Self { rotation_rad, scale, displacement }
    }

    fn displacement_at(&self, r: f64, c: f64, height: usize, width: usize) -> (f64, f64) {
        let g = DISTORTION_GRID - 1;
        let gy = (r / (height - 1).max(1) as f64 * g as f64).clamp(0.0, g as f64);
        let gx = (c / (width - 1).max(1) as f64 * g as f64).clamp(0.0, g as f64);
        let (y0, x0) = ((gy.floor() as usize).min(g - 1), (gx.floor() as usize).min(g - 1));
        let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
        let at = |y: usize, x: usize| self.displacement[y * DISTORTION_GRID + x];
        let lerp = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        let top = lerp(at(y0, x0), at(y0, x0 + 1), fx);
        let bot = lerp(at(y0 + 1, x0), at(y0 + 1, x0 + 1), fx);
        lerp(top, bot, fy)
    }
}

fn centroid(blob: &Image) -> Option<(f64, f64)> {
    let (mut sr, mut sc, mut s) = (0.0, 0.0, 0.0);
    for r in 0..blob.height() {
        for c in 0..blob.width() {
            let v = blob.get(r, c).abs();
            sr += v * r as f64;
            sc += v * c as f64;
            s += v;
        }
    }
    (s > 0.0).then(|| (sr / s, sc / s))
}

/// Apply an explicit warp by inverse mapping with bilinear resampling.
pub fn augment_blob_with(blob: &Image, warp: &BlobWarp) -> Image {
    let Some(center) = centroid(blob) else { return blob.clone() };
    let (h, w) = blob.dims();
    let (sin, cos) = warp.rotation_rad.sin_cos();
    Image::from_fn(h, w, |r, c| {
        let (dy, dx) = warp.displacement_at(r as f64, c as f64, h, w);
        let (py, px) = (r as f64 + dy - center.0, c as f64 + dx - center.1);
        // Inverse rotation and scale back into the source frame.
        let sy = (cos * py - sin * px) / warp.scale + center.0;
        let sx = (sin * py + cos * px) / warp.scale + center.1;
        blob.sample_bilinear(snap(sy), snap(sx)).clamp(0.0, 1.0)
    })
}

/// Remove round-off from coordinates that land on the pixel grid, so exact
/// lattice maps (quarter turns, unit scale) do not leak weight into neighbours.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Random rotation, isotropic scaling and grid distortion of a blob.
pub fn augment_blob(blob: &Image, config: &PhantomConfig, seed: u64) -> Image {
    let mut rng = seed::rng(seed);
    augment_blob_with(blob, &BlobWarp::sample(config, &mut rng))
}

/// Add one augmented Gaussian anomaly centred on a random organ pixel.
pub fn inject_anomaly(image: &Image, organ_mask: &Mask, config: &PhantomConfig, seed: u64) -> Result<ScanSlice> {
    let organ_pixels: Vec<(usize, usize)> = (0..organ_mask.height())
        .flat_map(|r| (0..organ_mask.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| organ_mask.get(r, c))
        .collect();
    if organ_pixels.is_empty() {
        return Err(Error::Data("cannot inject an anomaly into an empty organ mask".into()));
    }
    let (h, w) = image.dims();
    let mut rng = seed::rng(seed);
    // Reject slivers cut off by the organ boundary.
    let nominal = std::f64::consts::PI * 2.0 * std::f64::consts::LN_2 * config.blob_sigma.powi(2);
    let min_area = ((nominal / 4.0) as usize).max(1);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let (r, c) = organ_pixels[rng.gen_range(0..organ_pixels.len())];
        let [lo, hi] = config.blob_amplitude_range;
        let amplitude = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let blob = gaussian_blob(h, w, (r as f64, c as f64), config.blob_sigma, config.blob_radius, amplitude)?;
        let warp = BlobWarp::sample(config, &mut rng);
        let warped = augment_blob_with(&blob, &warp);
        let clipped = Image::from_fn(h, w, |y, x| if organ_mask.get(y, x) { warped.get(y, x) } else { 0.0 });
        let anomaly = clipped.threshold(0.5 * amplitude);
        if anomaly.area() < min_area {
            continue;
        }
        let out = image.zip_map(&clipped, |a, b| (a + b).clamp(0.0, 1.0))?;
        return Ok(ScanSlice {
            id: String::new(),
            image: out,
            organ_mask: organ_mask.clone(),
            anomaly_mask: Some(anomaly),
            label: 1,
        });
    }
    Err(Error::Data(format!("no valid anomaly placement after {MAX_PLACEMENT_ATTEMPTS} attempts")))
}
