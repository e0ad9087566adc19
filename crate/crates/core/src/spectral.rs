//! Frequency-domain mixed augmentation.
//!
//! An image is taken to the frequency domain (unnormalised forward DFT,
//! DC moved to the centre), high-pass filtered with a Gaussian, and then a
//! random square of the filtered spectrum is replaced by the unfiltered one.
//! The inverse DFT (with `1/(HW)` normalisation) of that mixture is the
//! high-frequency view fed to the second stream.

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::probe;
use crate::raster::GrayImage;

/// Default Gaussian cutoff, as a fraction of `min(H, W)`.
pub const DEFAULT_CUTOFF: f64 = 0.05;
/// Upper bound of the mixing ratio.
pub const MAX_ALPHA: f64 = 0.5;

/// Complex coefficients in centred layout: DC sits at `(H/2, W/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != height * width {
            return Err(Error::Shape(format!(
                "{} coefficients for a {height}x{width} spectrum",
                coeffs.len()
            )));
        }
        Ok(Spectrum { height, width, coeffs })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Spectrum {
            height,
            width,
            coeffs: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.coeffs[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.coeffs[row * self.width + col] = value;
    }

    /// Position of the DC coefficient.
    pub fn dc_index(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn dc(&self) -> Complex64 {
        let (r, c) = self.dc_index();
        self.get(r, c)
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `log(1 + |F|)` rescaled to `[0, 1]`, for visual inspection.
    pub fn log_magnitude(&self) -> GrayImage {
        let mags: Vec<f64> = self.coeffs.iter().map(|c| c.norm().ln_1p()).collect();
        let pixels = min_max_rescale(&mags);
        GrayImage::new(self.height, self.width, pixels).expect("rescaled values are in [0, 1]")
    }

    fn check_same(&self, other: &Spectrum) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "spectrum {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Gaussian high-pass filter `g = 1 - exp(-D^2 / (2 sigma^2))` with
/// `sigma = cutoff_fraction * min(H, W)` and `D` the distance to the centred DC.
#[derive(Debug, Clone, PartialEq)]
pub struct HighPassFilter {
    cutoff_fraction: f64,
    height: usize,
    width: usize,
    gain: Vec<f64>,
}

/// Largest double strictly below one; gains never reach unity.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

impl HighPassFilter {
    pub fn new(cutoff_fraction: f64, height: usize, width: usize) -> Result<Self> {
        if !(cutoff_fraction > 0.0 && cutoff_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "cutoff fraction {cutoff_fraction} not in (0, 1)"
            )));
        }
        let sigma = cutoff_fraction * height.min(width) as f64;
        let (cr, cc) = (height / 2, width / 2);
        let mut gain = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let dr = r as f64 - cr as f64;
                let dc = c as f64 - cc as f64;
                let d2 = dr * dr + dc * dc;
                let g = 1.0 - (-d2 / (2.0 * sigma * sigma)).exp();
                gain.push(g.min(BELOW_ONE));
            }
        }
        Ok(HighPassFilter {
            cutoff_fraction,
            height,
            width,
            gain,
        })
    }

    pub fn cutoff_fraction(&self) -> f64 {
        self.cutoff_fraction
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub fn gain_at(&self, row: usize, col: usize) -> f64 {
        self.gain[row * self.width + col]
    }
}

/// Binary mask with a single `side x side` square of ones anchored at `(row, col)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixMask {
    height: usize,
    width: usize,
    side: usize,
    row: usize,
    col: usize,
}

impl MixMask {
    /// Mask with an explicit square placement.
    pub fn with_square(height: usize, width: usize, side: usize, row: usize, col: usize) -> Result<Self> {
        if row + side > height || col + side > width {
            return Err(Error::Parameter(format!(
                "square {side} at ({row}, {col}) leaves a {height}x{width} grid"
            )));
        }
        Ok(MixMask {
            height,
            width,
            side,
            row,
            col,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn anchor(&self) -> (usize, usize) {
        (self.row, self.col)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.side && col >= self.col && col < self.col + self.side
    }

    pub fn count_ones(&self) -> usize {
        self.side * self.side
    }

    /// Dense 0/1 grid.
    pub fn grid(&self) -> Vec<u8> {
        let mut g = vec![0u8; self.height * self.width];
        for r in self.row..self.row + self.side {
            for c in self.col..self.col + self.side {
                g[r * self.width + c] = 1;
            }
        }
        g
    }
}

/// Side length of the mixing square for ratio `alpha`: `round(sqrt(alpha·H·W))`,
/// capped at the shorter grid dimension.
pub fn mask_side(alpha: f64, height: usize, width: usize) -> usize {
    let side = (alpha * (height * width) as f64).sqrt().round() as usize;
    side.min(height.min(width))
}

pub fn sample_mask<R: Rng + ?Sized>(alpha: f64, height: usize, width: usize, rng: &mut R) -> Result<MixMask> {
    if !(0.0..=MAX_ALPHA).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha {alpha} not in [0, {MAX_ALPHA}]")));
    }
    let side = mask_side(alpha, height, width);
    let row = rng.random_range(0..=height - side);
    let col = rng.random_range(0..=width - side);
    MixMask::with_square(height, width, side, row, col)
}

fn fft_2d(height: usize, width: usize, data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
}

/// Forward DFT of an arbitrary real grid, returned in centred layout.
pub fn forward_transform_grid(height: usize, width: usize, values: &[f64]) -> Result<Spectrum> {
    probe::hit(probe::Path::Spectral);
    if values.len() != height * width {
        return Err(Error::Shape(format!(
            "{} values for a {height}x{width} grid",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite pixel {v}")));
    }
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_2d(height, width, &mut data, false);
    let (sh, sw) = (height / 2, width / 2);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); height * width];
    for r in 0..height {
        for c in 0..width {
            coeffs[((r + sh) % height) * width + (c + sw) % width] = data[r * width + c];
        }
    }
    Spectrum::new(height, width, coeffs)
}

pub fn forward_transform(img: &GrayImage) -> Result<Spectrum> {
    forward_transform_grid(img.height(), img.width(), img.pixels())
}

pub fn apply_high_pass(spec: &Spectrum, filter: &HighPassFilter) -> Result<Spectrum> {
    if (spec.height, spec.width) != (filter.height, filter.width) {
        return Err(Error::Shape(format!(
            "filter {}x{} vs spectrum {}x{}",
            filter.height, filter.width, spec.height, spec.width
        )));
    }
    let coeffs = spec.coeffs.iter().zip(&filter.gain).map(|(c, g)| c * *g).collect();
    Spectrum::new(spec.height, spec.width, coeffs)
}

/// `(1 - M) * high + M * orig`, coefficient-wise.
pub fn mix_spectra(high: &Spectrum, orig: &Spectrum, mask: &MixMask) -> Result<Spectrum> {
    high.check_same(orig)?;
    if mask.dims() != (high.height, high.width) {
        return Err(Error::Shape(format!(
            "mask {:?} vs spectrum {}x{}",
            mask.dims(),
            high.height,
            high.width
        )));
    }
    let mut out = high.clone();
    for r in mask.row..mask.row + mask.side {
        for c in mask.col..mask.col + mask.side {
            out.set(r, c, orig.get(r, c));
        }
    }
    Ok(out)
}

/// Real spatial grid produced by the inverse transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Largest absolute imaginary part discarded by taking the real part.
    pub max_imag_residue: f64,
}

impl SpatialGrid {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Min-max rescale to `[0, 1]`; a constant grid maps to zeros.
    pub fn rescaled(&self) -> GrayImage {
        GrayImage::new(self.height, self.width, min_max_rescale(&self.values)).expect("rescaled values are in [0, 1]")
    }

    /// Clamp to `[0, 1]` without rescaling.
    pub fn clamped(&self) -> GrayImage {
        let v = self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        GrayImage::new(self.height, self.width, v).expect("clamped values are in [0, 1]")
    }
}

/// Spans below this are transform round-off on a flat grid, not signal.
const FLAT_SPAN: f64 = 1e-12;

fn min_max_rescale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= FLAT_SPAN || !span.is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Inverse DFT with `1/(HW)` normalisation, keeping the real part.
pub fn inverse_transform(spec: &Spectrum) -> SpatialGrid {
    let (h, w) = (spec.height, spec.width);
    let (sh, sw) = (h / 2, w / 2);
    let mut data = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            data[r * w + c] = spec.coeffs[((r + sh) % h) * w + (c + sw) % w];
        }
    }
    fft_2d(h, w, &mut data, true);
    let norm = 1.0 / (h * w) as f64;
    let mut max_imag_residue: f64 = 0.0;
    let values = data
        .iter()
        .map(|c| {
            max_imag_residue = max_imag_residue.max((c.im * norm).abs());
            c.re * norm
        })
        .collect();
    SpatialGrid {
        height: h,
        width: w,
        values,
        max_imag_residue,
    }
}

/// How the mixing ratio is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// `alpha ~ Uniform(0, 0.5)` drawn per call.
    Random,
    Fixed(f64),
}

/// Knobs for [`fma_augment_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmaConfig {
    pub cutoff_fraction: f64,
    pub alpha: AlphaMode,
    /// When false the spectrum passes through unfiltered.
    pub high_pass: bool,
    /// When false the inverse transform is clamped rather than min-max rescaled.
    pub rescale: bool,
}

impl Default for FmaConfig {
    fn default() -> Self {
        FmaConfig {
            cutoff_fraction: DEFAULT_CUTOFF,
            alpha: AlphaMode::Random,
            high_pass: true,
            rescale: true,
        }
    }
}

impl FmaConfig {
    /// High-pass only, no mixing.
    pub fn pure_high_pass(cutoff_fraction: f64) -> Self {
        FmaConfig {
            cutoff_fraction,
            alpha: AlphaMode::Fixed(0.0),
            ..Default::default()
        }
    }

    /// Spectrum passes through untouched; output is the grayscale input.
    pub fn identity() -> Self {
        FmaConfig {
            cutoff_fraction: DEFAULT_CUTOFF,
            alpha: AlphaMode::Fixed(0.0),
            high_pass: false,
            rescale: false,
        }
    }
}

/// Every intermediate of one augmentation, for previews.
#[derive(Debug, Clone)]
pub struct FmaTrace {
    pub alpha: f64,
    pub mask: MixMask,
    pub original: Spectrum,
    pub filtered: Spectrum,
    pub mixed: Spectrum,
    pub spatial: SpatialGrid,
    pub output: GrayImage,
}

pub fn fma_trace<R: Rng + ?Sized>(img: &GrayImage, config: &FmaConfig, rng: &mut R) -> Result<FmaTrace> {
    probe::hit(probe::Path::Spectral);
    let (h, w) = (img.height(), img.width());
    let alpha = match config.alpha {
        AlphaMode::Random => rng.random_range(0.0..MAX_ALPHA),
        AlphaMode::Fixed(a) => a,
    };
    let mask = sample_mask(alpha, h, w, rng)?;
    let original = forward_transform(img)?;
    let filtered = if config.high_pass {
        apply_high_pass(&original, &HighPassFilter::new(config.cutoff_fraction, h, w)?)?
    } else {
        original.clone()
    };
    let mixed = mix_spectra(&filtered, &original, &mask)?;
    let spatial = inverse_transform(&mixed);
    let output = if config.rescale {
        spatial.rescaled()
    } else {
        spatial.clamped()
    };
    Ok(FmaTrace {
        alpha,
        mask,
        original,
        filtered,
        mixed,
        spatial,
        output,
    })
}

pub fn fma_augment_with<R: Rng + ?Sized>(img: &GrayImage, config: &FmaConfig, rng: &mut R) -> Result<GrayImage> {
    Ok(fma_trace(img, config, rng)?.output)
}

/// Full augmentation with a freshly drawn `alpha ~ Uniform(0, 0.5)`.
pub fn fma_augment<R: Rng + ?Sized>(img: &GrayImage, cutoff_fraction: f64, rng: &mut R) -> Result<GrayImage> {
    let config = FmaConfig {
        cutoff_fraction,
        ..Default::default()
    };
    fma_augment_with(img, &config, rng)
}
