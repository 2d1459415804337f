//! Independent brute-force references shared by the integration tests.
//!
//! Everything here recomputes results from first principles (direct
//! DFT summation, spatial-domain constructions) without touching the
//! library's FFT path, so it can serve as an oracle for it.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metaqc::image::{CineStack, ImageGray};
use metaqc::kspace::ArtefactParams;

/// Direct unitary 2-D DFT, DC-centered: index `(j, l)` carries the
/// frequency pair `(j - h/2, l - w/2)`.
pub fn dft2(img: &ImageGray) -> Vec<Complex64> {
    let (h, w) = (img.height(), img.width());
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::default(); h * w];
    for j in 0..h {
        let kr = j as f64 - (h / 2) as f64;
        for l in 0..w {
            let kc = l as f64 - (w / 2) as f64;
            let mut acc = Complex64::default();
            for r in 0..h {
                for c in 0..w {
                    let angle = -std::f64::consts::TAU
                        * (kr * r as f64 / h as f64 + kc * c as f64 / w as f64);
                    acc += img.get(r, c) * Complex64::new(angle.cos(), angle.sin());
                }
            }
            out[j * w + l] = acc * scale;
        }
    }
    out
}

/// Direct unitary inverse of [`dft2`], reduced to a clamped magnitude
/// image.
pub fn idft2_magnitude(h: usize, w: usize, coeffs: &[Complex64]) -> Vec<f64> {
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = Complex64::default();
            for j in 0..h {
                let kr = j as f64 - (h / 2) as f64;
                for l in 0..w {
                    let kc = l as f64 - (w / 2) as f64;
                    let angle = std::f64::consts::TAU
                        * (kr * r as f64 / h as f64 + kc * c as f64 / w as f64);
                    acc += coeffs[j * w + l] * Complex64::new(angle.cos(), angle.sin());
                }
            }
            out[r * w + c] = (acc * scale).norm().clamp(0.0, 1.0);
        }
    }
    out
}

/// The documented row-selection rule: phase drawn uniformly from the
/// seed, row `j` taken from the moved image when the sinusoid value
/// falls below the duty cycle.
pub fn respiratory_selector(height: usize, p: &ArtefactParams) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let phase: f64 = rng.random_range(0.0..p.sine_period);
    (0..height)
        .map(|j| {
            if p.sine_duty >= 1.0 {
                return true;
            }
            let s = ((std::f64::consts::TAU * (j as f64 + phase) / p.sine_period).sin() + 1.0)
                / 2.0;
            s < p.sine_duty
        })
        .collect()
}

/// Brute-force respiratory injection: spatial shift, two direct DFTs,
/// row mix, direct inverse.
pub fn oracle_respiratory(img: &ImageGray, p: &ArtefactParams) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    // independent circular row shift
    let mut moved = ImageGray::zeros(h, w).unwrap();
    for r in 0..h {
        for c in 0..w {
            let dst = ((r as i64 + p.translation_px).rem_euclid(h as i64)) as usize;
            moved.set(dst, c, img.get(r, c));
        }
    }
    let reference = dft2(img);
    let shifted = dft2(&moved);
    let select = respiratory_selector(h, p);
    let mut mixed = reference;
    for j in 0..h {
        if select[j] {
            mixed[j * w..(j + 1) * w].copy_from_slice(&shifted[j * w..(j + 1) * w]);
        }
    }
    idft2_magnitude(h, w, &mixed)
}

/// Brute-force cardiac injection: per-frame direct DFTs assembled with
/// the monotone temporal sweep `frame = floor(j * t / h)`.
pub fn oracle_cardiac(cine: &CineStack, _p: &ArtefactParams) -> Vec<f64> {
    let (h, w) = (cine.height(), cine.width());
    let t = cine.len();
    let spectra: Vec<Vec<Complex64>> = cine.frames().iter().map(dft2).collect();
    let mut mixed = vec![Complex64::default(); h * w];
    for j in 0..h {
        let frame = (j * t) / h;
        mixed[j * w..(j + 1) * w].copy_from_slice(&spectra[frame][j * w..(j + 1) * w]);
    }
    idft2_magnitude(h, w, &mixed)
}

/// Brute-force ideal low-pass: central block kept, rest zeroed.
pub fn oracle_gibbs(img: &ImageGray, p: &ArtefactParams) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let kept = |n: usize| -> (usize, usize) {
        let k = ((p.gibbs_keep_fraction * n as f64).round() as usize).clamp(1, n);
        (n / 2 - k / 2, k)
    };
    let (row_start, rows) = kept(h);
    let (col_start, cols) = kept(w);
    let mut spectrum = dft2(img);
    for j in 0..h {
        for l in 0..w {
            let keep = j >= row_start && j < row_start + rows && l >= col_start && l < col_start + cols;
            if !keep {
                spectrum[j * w + l] = Complex64::default();
            }
        }
    }
    idft2_magnitude(h, w, &spectrum)
}

/// Brute-force aliasing: zero every row off the DC-anchored lattice.
pub fn oracle_aliasing(img: &ImageGray, p: &ArtefactParams) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut spectrum = dft2(img);
    let dc = (h / 2) as i64;
    for j in 0..h {
        if (j as i64 - dc).rem_euclid(p.aliasing_factor as i64) != 0 {
            for v in &mut spectrum[j * w..(j + 1) * w] {
                *v = Complex64::default();
            }
        }
    }
    idft2_magnitude(h, w, &spectrum)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGray {
    let data = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    ImageGray::new(h, w, data).unwrap()
}

pub fn random_cine(rng: &mut ChaCha8Rng, h: usize, w: usize, frames: usize) -> CineStack {
    CineStack::new((0..frames).map(|_| random_image(rng, h, w)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_params(rng: &mut ChaCha8Rng) -> ArtefactParams {
    ArtefactParams {
        translation_px: rng.random_range(1..=3),
        sine_period: rng.random_range(4.0..12.0),
        sine_duty: rng.random_range(0.2..0.8),
        gibbs_keep_fraction: rng.random_range(0.2..0.8),
        aliasing_factor: *[2, 4].get(rng.random_range(0..2)).unwrap(),
        rng_seed: rng.random(),
    }
}
