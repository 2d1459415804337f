//! K-space (2-D spatial-frequency) representation and artefact injection.
//!
//! All degradations follow the same recipe: forward FFT the reference
//! image(s), manipulate rows/blocks of the DC-centered spectrum,
//! inverse FFT, take the magnitude and clamp to `[0, 1]`.
//!
//! Layout convention: every spectrum here is DC-centered. Row index `j`
//! runs `0..height` top to bottom with the DC row at `height / 2`;
//! `j = 0` is the most negative row frequency. The transforms are
//! unitary (scaled by `1 / sqrt(height * width)` in each direction) so
//! forward followed by inverse is the identity without bookkeeping.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::{CineStack, ImageGray};

/// The artefact taxonomy. `Temporary` is the placeholder class assigned
/// to unlabelled images during meta-training; it never appears in
/// fine-tune or test labels and cannot be synthesised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArtefactClass {
    RespiratoryMotion,
    CardiacMotion,
    Gibbs,
    Aliasing,
    ArtefactFree,
    Temporary(u16),
}

impl ArtefactClass {
    /// The five synthesisable classes, in canonical order.
    pub const CONCRETE: [ArtefactClass; 5] = [
        ArtefactClass::RespiratoryMotion,
        ArtefactClass::CardiacMotion,
        ArtefactClass::Gibbs,
        ArtefactClass::Aliasing,
        ArtefactClass::ArtefactFree,
    ];

    pub fn name(&self) -> String {
        match self {
            ArtefactClass::RespiratoryMotion => "respiratory_motion".into(),
            ArtefactClass::CardiacMotion => "cardiac_motion".into(),
            ArtefactClass::Gibbs => "gibbs".into(),
            ArtefactClass::Aliasing => "aliasing".into(),
            ArtefactClass::ArtefactFree => "artefact_free".into(),
            ArtefactClass::Temporary(code) => format!("temporary_{code}"),
        }
    }
}

impl std::fmt::Display for ArtefactClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl std::str::FromStr for ArtefactClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "respiratory_motion" => Ok(ArtefactClass::RespiratoryMotion),
            "cardiac_motion" => Ok(ArtefactClass::CardiacMotion),
            "gibbs" => Ok(ArtefactClass::Gibbs),
            "aliasing" => Ok(ArtefactClass::Aliasing),
            "artefact_free" => Ok(ArtefactClass::ArtefactFree),
            other => match other.strip_prefix("temporary_").and_then(|c| c.parse().ok()) {
                Some(code) => Ok(ArtefactClass::Temporary(code)),
                None => Err(Error::config(format!("unknown artefact class '{other}'"))),
            },
        }
    }
}

/// Severity knobs for one injection.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtefactParams {
    /// Respiratory shift amplitude along the row (phase-encode) axis.
    pub translation_px: i64,
    /// K-space rows per respiratory cycle.
    pub sine_period: f64,
    /// Fraction of lines taken from the moved image, in (0, 1].
    pub sine_duty: f64,
    /// Central k-space fraction retained by the Gibbs low-pass, (0, 1].
    pub gibbs_keep_fraction: f64,
    /// Keep every n-th k-space row (>= 2, must divide the height).
    pub aliasing_factor: usize,
    /// Seeds the sinusoid phase; same seed + inputs -> identical output.
    pub rng_seed: u64,
}

impl ArtefactParams {
    fn validate_respiratory(&self, height: usize) -> Result<()> {
        if self.translation_px.unsigned_abs() as usize >= height / 4 {
            return Err(Error::param(format!(
                "|translation_px| = {} must be < height/4 = {}",
                self.translation_px.unsigned_abs(),
                height / 4
            )));
        }
        if !(self.sine_period > 0.0) {
            return Err(Error::param("sine_period must be positive"));
        }
        if !(self.sine_duty > 0.0 && self.sine_duty <= 1.0) {
            return Err(Error::param("sine_duty must lie in (0, 1]"));
        }
        Ok(())
    }

    fn validate_gibbs(&self) -> Result<()> {
        if !(self.gibbs_keep_fraction > 0.0 && self.gibbs_keep_fraction <= 1.0) {
            return Err(Error::param("gibbs_keep_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    fn validate_aliasing(&self, height: usize) -> Result<()> {
        if self.aliasing_factor < 2 {
            return Err(Error::param("aliasing_factor must be >= 2"));
        }
        if height % self.aliasing_factor != 0 {
            return Err(Error::param(format!(
                "aliasing_factor {} must divide height {height}",
                self.aliasing_factor
            )));
        }
        Ok(())
    }
}

/// Complex spectrum of an image, DC-centered (DC at `(h/2, w/2)`).
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceGrid {
    height: usize,
    width: usize,
    coeffs: Vec<Complex64>,
}

impl KSpaceGrid {
    pub fn new(height: usize, width: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != height * width {
            return Err(Error::shape(format!(
                "expected {} coefficients, got {}",
                height * width,
                coeffs.len()
            )));
        }
        Ok(Self { height, width, coeffs })
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

    /// Row slice in the DC-centered layout.
    pub fn row(&self, j: usize) -> &[Complex64] {
        &self.coeffs[j * self.width..(j + 1) * self.width]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [Complex64] {
        &mut self.coeffs[j * self.width..(j + 1) * self.width]
    }

    /// Total spectral energy (sum of squared magnitudes).
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Swap quadrants so the DC coefficient moves between corner (0, 0) and
/// center (h/2, w/2). Self-inverse for the even dimensions used here.
fn shift_quadrants(height: usize, width: usize, data: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    let (hh, hw) = (height / 2, width / 2);
    for r in 0..height {
        let sr = (r + hh) % height;
        for c in 0..width {
            let sc = (c + hw) % width;
            out[sr * width + sc] = data[r * width + c];
        }
    }
    out
}

fn fft_2d(height: usize, width: usize, data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let direction = if inverse {
        rustfft::FftDirection::Inverse
    } else {
        rustfft::FftDirection::Forward
    };
    let row_fft = planner.plan_fft(width, direction);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut transposed = transpose(height, width, data);
    let col_fft = planner.plan_fft(height, direction);
    for col in transposed.chunks_exact_mut(height) {
        col_fft.process(col);
    }
    let back = transpose(width, height, &transposed);
    data.copy_from_slice(&back);
}

fn transpose(rows: usize, cols: usize, data: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Unitary 2-D transform of an image, DC-centered.
pub fn forward_fft(img: &ImageGray) -> KSpaceGrid {
    let (h, w) = (img.height(), img.width());
    let mut data: Vec<Complex64> = img.pixels().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_2d(h, w, &mut data, false);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for c in data.iter_mut() {
        *c *= scale;
    }
    let centered = shift_quadrants(h, w, &data);
    KSpaceGrid { height: h, width: w, coeffs: centered }
}

/// Unitary inverse transform; the reconstruction is the complex
/// magnitude clamped to `[0, 1]`.
pub fn inverse_fft(grid: &KSpaceGrid) -> ImageGray {
    let (h, w) = (grid.height, grid.width);
    let mut data = shift_quadrants(h, w, &grid.coeffs);
    fft_2d(h, w, &mut data, true);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let pixels: Vec<f64> = data.iter().map(|c| (c * scale).norm().clamp(0.0, 1.0)).collect();
    ImageGray::new(h, w, pixels).expect("magnitude reconstruction is always in range")
}

/// True when k-space row `j` (DC-centered index) should come from the
/// moved image. The sinusoid emulates the breathing cycle; `phase` is
/// drawn once per injection from the seed.
fn respiratory_row_moved(j: usize, period: f64, duty: f64, phase: f64) -> bool {
    if duty >= 1.0 {
        return true;
    }
    let s = ((std::f64::consts::TAU * (j as f64 + phase) / period).sin() + 1.0) / 2.0;
    s < duty
}

/// Respiratory motion: mix k-space rows of the reference image and a
/// circularly row-shifted copy according to a seeded sinusoidal pattern.
pub fn inject_respiratory_motion(img: &ImageGray, p: &ArtefactParams) -> Result<ImageGray> {
    p.validate_respiratory(img.height())?;
    let reference = forward_fft(img);
    let moved = forward_fft(&img.shift_rows(p.translation_px));
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let phase: f64 = rng.random_range(0.0..p.sine_period);
    let mut mixed = reference.clone();
    for j in 0..img.height() {
        if respiratory_row_moved(j, p.sine_period, p.sine_duty, phase) {
            mixed.row_mut(j).copy_from_slice(moved.row(j));
        }
    }
    Ok(inverse_fft(&mixed))
}

/// Cardiac motion: assemble the degraded spectrum by sweeping the cine
/// temporally over k-space rows; row `j` (DC-centered index) comes from
/// frame `floor(j * T / height)`.
pub fn inject_cardiac_motion(cine: &CineStack, _p: &ArtefactParams) -> Result<ImageGray> {
    let t_frames = cine.len();
    let h = cine.height();
    let spectra: Vec<KSpaceGrid> = cine.frames().iter().map(forward_fft).collect();
    let mut mixed = spectra[0].clone();
    for j in 0..h {
        let t = (j * t_frames) / h;
        mixed.row_mut(j).copy_from_slice(spectra[t].row(j));
    }
    Ok(inverse_fft(&mixed))
}

/// Number of central rows/columns kept by the Gibbs low-pass, and the
/// first kept index. The block is centered so the DC index `n/2` is
/// always retained.
fn gibbs_kept_range(n: usize, keep_fraction: f64) -> (usize, usize) {
    let kept = ((keep_fraction * n as f64).round() as usize).clamp(1, n);
    let start = n / 2 - kept / 2;
    (start, kept)
}

/// Gibbs ringing: zero every coefficient outside the central
/// `keep_fraction * h` x `keep_fraction * w` block (ideal low-pass).
pub fn inject_gibbs(img: &ImageGray, p: &ArtefactParams) -> Result<ImageGray> {
    p.validate_gibbs()?;
    let mut grid = forward_fft(img);
    let (row_start, rows_kept) = gibbs_kept_range(img.height(), p.gibbs_keep_fraction);
    let (col_start, cols_kept) = gibbs_kept_range(img.width(), p.gibbs_keep_fraction);
    for r in 0..img.height() {
        let row_kept = r >= row_start && r < row_start + rows_kept;
        for c in 0..img.width() {
            let col_kept = c >= col_start && c < col_start + cols_kept;
            if !(row_kept && col_kept) {
                grid.set(r, c, Complex64::new(0.0, 0.0));
            }
        }
    }
    Ok(inverse_fft(&grid))
}

/// Aliasing: zero every k-space row not on the kept lattice. The
/// lattice is anchored at the DC row (`h/2`), i.e. row `j` survives iff
/// `(j - h/2) % factor == 0`, so the global intensity scale is kept.
/// The image size is unchanged; the missing lines show up as ghost
/// replicas at fractions of the field of view.
pub fn inject_aliasing(img: &ImageGray, p: &ArtefactParams) -> Result<ImageGray> {
    let h = img.height();
    p.validate_aliasing(h)?;
    let mut grid = forward_fft(img);
    let dc = (h / 2) as i64;
    for j in 0..h {
        if (j as i64 - dc).rem_euclid(p.aliasing_factor as i64) != 0 {
            for v in grid.row_mut(j) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(inverse_fft(&grid))
}

/// Produce one degraded (or clean) sample of the requested class.
/// Cardiac motion consumes the whole stack; the other injectors and the
/// artefact-free class use frame 0.
pub fn synthesize_sample(
    source: &CineStack,
    class: ArtefactClass,
    p: &ArtefactParams,
) -> Result<ImageGray> {
    match class {
        ArtefactClass::RespiratoryMotion => inject_respiratory_motion(source.frame(0), p),
        ArtefactClass::CardiacMotion => inject_cardiac_motion(source, p),
        ArtefactClass::Gibbs => inject_gibbs(source.frame(0), p),
        ArtefactClass::Aliasing => inject_aliasing(source.frame(0), p),
        ArtefactClass::ArtefactFree => Ok(source.frame(0).clone()),
        ArtefactClass::Temporary(_) => {
            Err(Error::param("temporary labels cannot be synthesised"))
        }
    }
}
