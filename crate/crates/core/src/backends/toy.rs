//! Deterministic toy backend.
//!
//! Faces are 3 x 32 x 32. Pixel rows are split into three disjoint bands:
//!
//! * rows 0..8: identity band, read by the identity embedder;
//! * rows 8..30: appearance band (pose, lighting, background);
//! * rows 30..32: age band, every pixel is `tanh` of the latent age coordinate.
//!
//! The decoder mixes the 18 style rows with fixed positive weights into one
//! 512-vector `h`, then maps each band pixel to one coordinate of `h`
//! through a signed gain and `tanh`. Coordinate 0 carries age, coordinates
//! 1..65 identity and 65..512 appearance. Every coordinate owns at least one
//! pixel, so the encoder can invert the decoder exactly on its range.
//!
//! The encoder plays the global aging prior: it inverts the image, writes the
//! requested age into coordinate 0 and moves identity along one fixed
//! population-wide aging direction in proportion to the requested age change.
//! Per-style offsets that cancel under the style mix make the 18 rows differ
//! without changing the decoded image.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    AgeEncoder, AgeEstimator, AlignedFace, BackendError, BackendResult, CropBox, FaceAligner,
    FaceSwapper, IdentityEmbedder, LatentDecoder, PerceptualMetric, SwapOutcome,
};
use crate::image::ImageTensor;
use crate::latent::{AgeYears, IdentityEmbedding, LatentCode, MeanLatent, NUM_STYLES, STYLE_DIM};

pub const RESOLUTION: usize = 32;
pub const IDENTITY_ROWS: Range<usize> = 0..8;
pub const AGE_ROWS: Range<usize> = 30..32;
pub const AGE_COORD: usize = 0;
pub const IDENTITY_COORDS: Range<usize> = 1..65;
pub const APPEARANCE_COORDS: Range<usize> = 65..STYLE_DIM;
pub const EMBED_DIM: usize = 512;
pub const CONV_CHANNELS: usize = 8;

/// Typical size of a latent coordinate. Latents are small and the decoder
/// gain large, as with a pretrained generator.
pub const LATENT_SCALE: f64 = 0.05;
/// Per-pixel gain from latent coordinate to pre-activation.
const GAIN: f64 = 0.5 / LATENT_SCALE;
/// Age band values span [-AGE_SPAN, AGE_SPAN] so the inverse stays finite.
const AGE_SPAN: f64 = 0.98;
/// Pixels are clipped here before `atanh` during encoding.
const PIXEL_LIMIT: f64 = 0.999;
/// Weight of the source face in the toy swap blend.
pub const SWAP_ALPHA: f64 = 0.75;
/// Identity band standard deviation below which a frame has no face.
pub const FACE_STD_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
struct PixelMap {
    coord: usize,
    sign: f64,
}

#[derive(Debug)]
pub struct ToyBackend {
    seed: u64,
    style_mix: [f64; NUM_STYLES],
    style_offsets: Array2<f64>,
    mean_latent: MeanLatent,
    /// Pre-activation offset per flat pixel index.
    base: Vec<f64>,
    /// Mapping for identity and appearance pixels (None for age pixels).
    pixel_map: Vec<Option<PixelMap>>,
    /// Flat pixel indices owned by each latent coordinate (empty for 0).
    coord_pixels: Vec<Vec<usize>>,
    identity_pixels: Vec<usize>,
    age_pixels: Vec<usize>,
    global_drift: Array1<f64>,
    identity_proj: Array2<f64>,
    conv: Array4<f64>,
}

fn flat(c: usize, y: usize, x: usize) -> usize {
    (c * RESOLUTION + y) * RESOLUTION + x
}

fn band_pixels(rows: Range<usize>) -> Vec<usize> {
    let mut out = Vec::new();
    for c in 0..3 {
        for y in rows.clone() {
            for x in 0..RESOLUTION {
                out.push(flat(c, y, x));
            }
        }
    }
    out
}

fn datanh(v: f64) -> f64 {
    1.0 / (1.0 - v * v)
}

impl ToyBackend {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let n_pix = 3 * RESOLUTION * RESOLUTION;

        let mut style_mix = [0.0; NUM_STYLES];
        for c in style_mix.iter_mut() {
            *c = rng.random_range(0.5..1.5);
        }
        let total: f64 = style_mix.iter().sum();
        style_mix.iter_mut().for_each(|c| *c /= total);

        let identity_pixels = band_pixels(IDENTITY_ROWS);
        let age_pixels = band_pixels(AGE_ROWS);
        let appearance_pixels = band_pixels(IDENTITY_ROWS.end..AGE_ROWS.start);

        let mut pixel_map = vec![None; n_pix];
        let mut coord_pixels = vec![Vec::new(); STYLE_DIM];
        for (pixels, coords) in [
            (&identity_pixels, IDENTITY_COORDS),
            (&appearance_pixels, APPEARANCE_COORDS),
        ] {
            let mut order = pixels.clone();
            order.shuffle(&mut rng);
            let n_coords = coords.len();
            for (i, &p) in order.iter().enumerate() {
                let coord = coords.start + i % n_coords;
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                pixel_map[p] = Some(PixelMap { coord, sign });
                coord_pixels[coord].push(p);
            }
        }
        for list in coord_pixels.iter_mut() {
            list.sort_unstable();
        }

        let mut base = vec![0.0; n_pix];
        for &p in &appearance_pixels {
            base[p] = 0.3 * normal.sample(&mut rng);
        }

        let mut global_drift = Array1::zeros(STYLE_DIM);
        for j in IDENTITY_COORDS {
            global_drift[j] = 0.4 * LATENT_SCALE * normal.sample(&mut rng);
        }

        let mut style_offsets = Array2::from_shape_fn((NUM_STYLES, STYLE_DIM), |_| {
            0.5 * LATENT_SCALE * normal.sample(&mut rng)
        });
        cancel_under_mix(&mut style_offsets, &style_mix);

        let mut mean = Array2::from_shape_fn((NUM_STYLES, STYLE_DIM), |_| {
            0.1 * LATENT_SCALE * normal.sample(&mut rng)
        });
        cancel_under_mix(&mut mean, &style_mix);
        let mean_latent = MeanLatent::new(mean).expect("finite mean");

        let scale = 1.0 / (identity_pixels.len() as f64).sqrt();
        let identity_proj = Array2::from_shape_fn((EMBED_DIM, identity_pixels.len()), |_| {
            scale * normal.sample(&mut rng)
        });

        let conv_scale = 1.0 / 27f64.sqrt();
        let conv = Array4::from_shape_fn((CONV_CHANNELS, 3, 3, 3), |_| {
            conv_scale * normal.sample(&mut rng)
        });

        Self {
            seed,
            style_mix,
            style_offsets,
            mean_latent,
            base,
            pixel_map,
            coord_pixels,
            identity_pixels,
            age_pixels,
            global_drift,
            identity_proj,
            conv,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_latent(&self) -> &MeanLatent {
        &self.mean_latent
    }

    pub fn style_mix(&self) -> &[f64; NUM_STYLES] {
        &self.style_mix
    }

    pub fn identity_pixels(&self) -> &[usize] {
        &self.identity_pixels
    }

    pub fn age_pixels(&self) -> &[usize] {
        &self.age_pixels
    }

    pub fn identity_projection(&self) -> &Array2<f64> {
        &self.identity_proj
    }

    pub fn conv_kernel(&self) -> &Array4<f64> {
        &self.conv
    }

    pub fn global_drift(&self) -> &Array1<f64> {
        &self.global_drift
    }

    /// Latent age coordinate that decodes to exactly `age`.
    pub fn age_code(age: AgeYears) -> f64 {
        LATENT_SCALE * (AGE_SPAN * (2.0 * age.normalized() - 1.0)).atanh()
    }

    /// Age-band pixel value to years.
    fn band_value_to_years(v: f64) -> f64 {
        50.0 + 50.0 * v / AGE_SPAN
    }

    /// Expands a mixed vector `h` into a full code (`h` plus style offsets).
    pub fn compose(&self, mixed: &Array1<f64>) -> LatentCode {
        let mut styles = self.style_offsets.clone();
        for mut row in styles.rows_mut() {
            row += mixed;
        }
        LatentCode::from_array(styles).expect("finite composed latent")
    }

    pub fn mix(&self, code: &LatentCode) -> Array1<f64> {
        let mut h = Array1::zeros(STYLE_DIM);
        for (k, row) in code.styles().rows().into_iter().enumerate() {
            h.scaled_add(self.style_mix[k], &row);
        }
        h
    }

    fn check_face(&self, image: &ImageTensor) -> BackendResult<()> {
        if image.height() != RESOLUTION || image.width() != RESOLUTION {
            return Err(BackendError::Shape(format!(
                "toy backend expects {RESOLUTION}x{RESOLUTION} faces, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    fn age_band_mean(&self, px: &[f64]) -> f64 {
        self.age_pixels.iter().map(|&p| px[p]).sum::<f64>() / self.age_pixels.len() as f64
    }

    /// Training-estimator age in years, unclamped.
    fn raw_train_age(&self, px: &[f64]) -> f64 {
        Self::band_value_to_years(self.age_band_mean(px))
    }

    fn identity_raw(&self, px: &[f64]) -> Array1<f64> {
        let x_id: Array1<f64> = self.identity_pixels.iter().map(|&p| px[p]).collect();
        self.identity_proj.dot(&x_id)
    }

    /// Identity band standard deviation, the toy face detector.
    pub fn identity_spread(&self, image: &ImageTensor) -> f64 {
        let px = image.as_slice();
        let n = self.identity_pixels.len() as f64;
        let mean = self.identity_pixels.iter().map(|&p| px[p]).sum::<f64>() / n;
        let var = self
            .identity_pixels
            .iter()
            .map(|&p| (px[p] - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt()
    }

    /// Same-padded 3x3 convolution, 3 -> CONV_CHANNELS.
    fn conv_forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (_, h, w) = x.dim();
        let mut out = Array3::zeros((CONV_CHANNELS, h, w));
        for o in 0..CONV_CHANNELS {
            for c in 0..3 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = self.conv[[o, c, ky, kx]];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                out[[o, y, xx]] += k * x[[c, sy as usize, sx as usize]];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn conv_transpose(&self, g: &Array3<f64>) -> Array3<f64> {
        let (_, h, w) = g.dim();
        let mut out = Array3::zeros((3, h, w));
        for o in 0..CONV_CHANNELS {
            for c in 0..3 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = self.conv[[o, c, ky, kx]];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                out[[c, sy as usize, sx as usize]] += k * g[[o, y, xx]];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Shifts rows so that the mix-weighted sum of `rows` is zero in every
/// column, and zeroes the age column.
fn cancel_under_mix(rows: &mut Array2<f64>, mix: &[f64; NUM_STYLES]) {
    rows.column_mut(AGE_COORD).fill(0.0);
    let mut weighted = Array1::zeros(STYLE_DIM);
    for (k, row) in rows.rows().into_iter().enumerate() {
        weighted.scaled_add(mix[k], &row);
    }
    for mut row in rows.rows_mut() {
        row -= &weighted;
    }
}

impl LatentDecoder for ToyBackend {
    fn decode(&self, code: &LatentCode) -> BackendResult<ImageTensor> {
        let h = self.mix(code);
        let n_pix = self.base.len();
        let mut px = vec![0.0; n_pix];
        for p in 0..n_pix {
            let pre = match self.pixel_map[p] {
                Some(m) => self.base[p] + GAIN * m.sign * h[m.coord],
                None => h[AGE_COORD] / LATENT_SCALE,
            };
            px[p] = pre.tanh();
        }
        let arr = Array3::from_shape_vec((3, RESOLUTION, RESOLUTION), px).expect("shape");
        ImageTensor::new(arr).map_err(|e| BackendError::Domain(e.to_string()))
    }

    fn decode_vjp(&self, code: &LatentCode, grad_image: &Array3<f64>) -> BackendResult<Array2<f64>> {
        if grad_image.dim() != (3, RESOLUTION, RESOLUTION) {
            return Err(BackendError::Shape("decoder gradient shape".into()));
        }
        let y = self.decode(code)?;
        let px = y.as_slice();
        let g = grad_image.as_standard_layout();
        let g = g.as_slice().expect("standard layout");
        let mut dh = Array1::<f64>::zeros(STYLE_DIM);
        for p in 0..px.len() {
            let dpre = g[p] * (1.0 - px[p] * px[p]);
            match self.pixel_map[p] {
                Some(m) => dh[m.coord] += GAIN * m.sign * dpre,
                None => dh[AGE_COORD] += dpre / LATENT_SCALE,
            }
        }
        let mut out = Array2::zeros((NUM_STYLES, STYLE_DIM));
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            row.scaled_add(self.style_mix[k], &dh);
        }
        Ok(out)
    }

    fn resolution(&self) -> usize {
        RESOLUTION
    }
}

impl AgeEncoder for ToyBackend {
    fn encode(&self, image: &ImageTensor, target_age: AgeYears) -> BackendResult<LatentCode> {
        self.check_face(image)?;
        let px = image.as_slice();
        let mut h = Array1::zeros(STYLE_DIM);
        for (j, pixels) in self.coord_pixels.iter().enumerate().skip(1) {
            let mut acc = 0.0;
            for &p in pixels {
                let m = self.pixel_map[p].expect("mapped pixel");
                let v = px[p].clamp(-PIXEL_LIMIT, PIXEL_LIMIT);
                acc += m.sign * (v.atanh() - self.base[p]);
            }
            h[j] = acc / (GAIN * pixels.len() as f64);
        }
        let input_age = self.raw_train_age(px).clamp(0.0, 100.0) / 100.0;
        let shift = target_age.normalized() - input_age;
        for j in IDENTITY_COORDS {
            h[j] += shift * self.global_drift[j];
        }
        h[AGE_COORD] = Self::age_code(target_age);
        Ok(self.compose(&h))
    }

    fn encode_vjp(
        &self,
        image: &ImageTensor,
        _target_age: AgeYears,
        grad_code: &Array2<f64>,
    ) -> BackendResult<Array3<f64>> {
        self.check_face(image)?;
        if grad_code.dim() != (NUM_STYLES, STYLE_DIM) {
            return Err(BackendError::Shape("encoder gradient shape".into()));
        }
        let px = image.as_slice();
        let dh = grad_code.sum_axis(ndarray::Axis(0));
        let mut dx = vec![0.0; px.len()];
        for (j, pixels) in self.coord_pixels.iter().enumerate().skip(1) {
            let scale = dh[j] / (GAIN * pixels.len() as f64);
            for &p in pixels {
                if px[p].abs() < PIXEL_LIMIT {
                    let m = self.pixel_map[p].expect("mapped pixel");
                    dx[p] += scale * m.sign * datanh(px[p]);
                }
            }
        }
        let raw_age = self.raw_train_age(px);
        if (0.0..=100.0).contains(&raw_age) {
            let d_input_age: f64 = -IDENTITY_COORDS
                .map(|j| dh[j] * self.global_drift[j])
                .sum::<f64>();
            // input_age = (50 + 50 * mean / AGE_SPAN) / 100
            let d_mean = d_input_age * 0.5 / AGE_SPAN;
            let per_pixel = d_mean / self.age_pixels.len() as f64;
            for &p in &self.age_pixels {
                dx[p] += per_pixel;
            }
        }
        Ok(Array3::from_shape_vec((3, RESOLUTION, RESOLUTION), dx).expect("shape"))
    }
}

impl IdentityEmbedder for ToyBackend {
    fn embed(&self, image: &ImageTensor) -> BackendResult<IdentityEmbedding> {
        self.check_face(image)?;
        IdentityEmbedding::normalize(self.identity_raw(image.as_slice()))
            .map_err(|e| BackendError::Domain(e.to_string()))
    }

    fn embed_vjp(&self, image: &ImageTensor, grad: &Array1<f64>) -> BackendResult<Array3<f64>> {
        self.check_face(image)?;
        let raw = self.identity_raw(image.as_slice());
        let norm = raw.dot(&raw).sqrt();
        if norm <= f64::MIN_POSITIVE {
            return Err(BackendError::Domain("embedding has zero norm".into()));
        }
        let e = &raw / norm;
        let dv = (grad - &(&e * e.dot(grad))) / norm;
        let dx_id = self.identity_proj.t().dot(&dv);
        let mut dx = Array3::zeros((3, RESOLUTION, RESOLUTION));
        let slice = dx.as_slice_mut().expect("standard layout");
        for (i, &p) in self.identity_pixels.iter().enumerate() {
            slice[p] = dx_id[i];
        }
        Ok(dx)
    }
}

impl PerceptualMetric for ToyBackend {
    /// Mean squared difference of fixed random 3x3 convolution features.
    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> BackendResult<f64> {
        if !a.same_shape(b) {
            return Err(BackendError::Shape("perceptual distance operands differ".into()));
        }
        let diff = a.pixels() - b.pixels();
        let f = self.conv_forward(&diff);
        Ok(f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64)
    }

    fn distance_grad(&self, a: &ImageTensor, b: &ImageTensor) -> BackendResult<Array3<f64>> {
        if !a.same_shape(b) {
            return Err(BackendError::Shape("perceptual distance operands differ".into()));
        }
        let diff = a.pixels() - b.pixels();
        let f = self.conv_forward(&diff);
        let n = f.len() as f64;
        Ok(self.conv_transpose(&f) * (2.0 / n))
    }
}

impl FaceSwapper for ToyBackend {
    /// Blends the source face's identity and age bands into the target face.
    fn swap(&self, source: &ImageTensor, target: &ImageTensor) -> BackendResult<SwapOutcome> {
        self.check_face(source)?;
        self.check_face(target)?;
        if self.identity_spread(target) < FACE_STD_MIN {
            return Ok(SwapOutcome::NoFace);
        }
        let src = source.as_slice();
        let mut out = target.pixels().clone();
        let dst = out.as_slice_mut().expect("standard layout");
        for &p in self.identity_pixels.iter().chain(self.age_pixels.iter()) {
            dst[p] += SWAP_ALPHA * (src[p] - dst[p]);
        }
        ImageTensor::new(out)
            .map(SwapOutcome::Swapped)
            .map_err(|e| BackendError::Domain(e.to_string()))
    }
}

impl FaceAligner for ToyBackend {
    /// Center crop to a square, then resize to the face resolution.
    fn align(&self, raw: &ImageTensor) -> BackendResult<AlignedFace> {
        let (h, w) = (raw.height(), raw.width());
        let size = h.min(w);
        if size < RESOLUTION {
            return Err(BackendError::NoFace(format!(
                "{h}x{w} frame is smaller than the {RESOLUTION}px face crop"
            )));
        }
        let crop = CropBox {
            top: (h - size) / 2,
            left: (w - size) / 2,
            size,
        };
        let patch = raw
            .pixels()
            .slice(s![.., crop.top..crop.top + size, crop.left..crop.left + size])
            .to_owned();
        let face = resize(&patch, RESOLUTION);
        let face = ImageTensor::new(face).map_err(|e| BackendError::Domain(e.to_string()))?;
        Ok(AlignedFace { face, crop })
    }

    fn paste_back(&self, frame: &ImageTensor, face: &ImageTensor, crop: CropBox) -> BackendResult<ImageTensor> {
        if crop.top + crop.size > frame.height() || crop.left + crop.size > frame.width() {
            return Err(BackendError::Shape("crop box outside frame".into()));
        }
        let patch = resize(face.pixels(), crop.size);
        let mut out = frame.pixels().clone();
        out.slice_mut(s![.., crop.top..crop.top + crop.size, crop.left..crop.left + crop.size])
            .assign(&patch);
        ImageTensor::new(out).map_err(|e| BackendError::Domain(e.to_string()))
    }
}

/// Resizes a square 3 x n x n array to 3 x size x size. Integer downscales
/// use box averaging, everything else bilinear sampling at pixel centers.
pub fn resize(src: &Array3<f64>, size: usize) -> Array3<f64> {
    let (c, h, w) = src.dim();
    if h == size && w == size {
        return src.to_owned();
    }
    if h == w && h % size == 0 {
        let f = h / size;
        let norm = (f * f) as f64;
        return Array3::from_shape_fn((c, size, size), |(ch, y, x)| {
            src.slice(s![ch, y * f..(y + 1) * f, x * f..(x + 1) * f]).sum() / norm
        });
    }
    let sy = h as f64 / size as f64;
    let sx = w as f64 / size as f64;
    Array3::from_shape_fn((c, size, size), |(ch, y, x)| {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = src[[ch, y0, x0]] * (1.0 - tx) + src[[ch, y0, x1]] * tx;
        let bot = src[[ch, y1, x0]] * (1.0 - tx) + src[[ch, y1, x1]] * tx;
        top * (1.0 - ty) + bot * ty
    })
}

/// Training-mode estimator: linear read of the age band, differentiable.
#[derive(Debug, Clone)]
pub struct ToyTrainAgeEstimator(pub Arc<ToyBackend>);

/// Evaluation-mode estimator: median of the age band.
#[derive(Debug, Clone)]
pub struct ToyEvalAgeEstimator(pub Arc<ToyBackend>);

impl AgeEstimator for ToyTrainAgeEstimator {
    fn estimate(&self, image: &ImageTensor) -> BackendResult<AgeYears> {
        self.0.check_face(image)?;
        Ok(AgeYears::saturating(self.0.raw_train_age(image.as_slice())))
    }

    fn gradient(&self, image: &ImageTensor) -> BackendResult<Array3<f64>> {
        self.0.check_face(image)?;
        let mut g = Array3::zeros((3, RESOLUTION, RESOLUTION));
        let raw = self.0.raw_train_age(image.as_slice());
        if (0.0..=100.0).contains(&raw) {
            let slope = 50.0 / (AGE_SPAN * self.0.age_pixels.len() as f64);
            let slice = g.as_slice_mut().expect("standard layout");
            for &p in &self.0.age_pixels {
                slice[p] = slope;
            }
        }
        Ok(g)
    }
}

impl AgeEstimator for ToyEvalAgeEstimator {
    fn estimate(&self, image: &ImageTensor) -> BackendResult<AgeYears> {
        self.0.check_face(image)?;
        let px = image.as_slice();
        let mut band: Vec<f64> = self.0.age_pixels.iter().map(|&p| px[p]).collect();
        band.sort_by(f64::total_cmp);
        let n = band.len();
        let median = if n % 2 == 0 {
            0.5 * (band[n / 2 - 1] + band[n / 2])
        } else {
            band[n / 2]
        };
        Ok(AgeYears::saturating(ToyBackend::band_value_to_years(median)))
    }

    fn gradient(&self, _image: &ImageTensor) -> BackendResult<Array3<f64>> {
        Err(BackendError::NotDifferentiable("evaluation age estimator"))
    }
}
