//! Synthetic short-axis-like cine phantoms.
//!
//! Each phantom is a shaded background, a rotated elliptical torso, a
//! few clutter blobs, and a bright myocardium-like annulus around a
//! mid-intensity blood pool, plus seeded texture noise. The annulus
//! contracts over the cine: the inner radius follows the closed form in
//! [`PhantomScene::inner_radius`], completing exactly one cycle per
//! stack. Geometry, intensities, clutter and noise all jitter per seed,
//! so the class-irrelevant variation between phantoms is substantial
//! and no two are pixel-identical.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{CineStack, ImageGray};
use crate::seeds;

/// Minimum phantom side; smaller grids render too coarsely to carry a
/// visible annulus.
pub const MIN_PHANTOM_SIZE: usize = 32;

/// A clutter feature: a soft additive bump well away from the annulus.
#[derive(Debug, Clone, Copy)]
pub struct Blob {
    pub center: (f64, f64),
    pub radius: f64,
    pub intensity: f64,
}

/// Ring-shaped clutter (vessel-like cross sections). Rings also mimic
/// the ghost annuli that fold in under k-space undersampling, so they
/// keep small-sample classifiers honest.
#[derive(Debug, Clone, Copy)]
pub struct RingBlob {
    pub center: (f64, f64),
    pub radius: f64,
    pub thickness: f64,
    pub intensity: f64,
}

/// The randomly drawn geometry of one phantom, exposed so tests can
/// check rendered frames against the closed-form radii.
#[derive(Debug, Clone)]
pub struct PhantomScene {
    pub size: usize,
    pub frames: usize,
    /// Heart center in pixels (row, col).
    pub heart_center: (f64, f64),
    /// Torso center, semi-axes (row, col order) and rotation.
    pub torso_center: (f64, f64),
    pub torso_semi_axes: (f64, f64),
    pub torso_angle: f64,
    /// Outer annulus radius in pixels (fixed over the cycle).
    pub outer_radius: f64,
    /// Inner radius at end-diastole (t = 0), in pixels.
    pub base_inner_radius: f64,
    /// Peak radial contraction, in pixels.
    pub contraction: f64,
    pub background: f64,
    pub torso_intensity: f64,
    pub myocardium_intensity: f64,
    pub pool_intensity: f64,
    /// Linear shading slope across the image (row, col directions).
    pub gradient: (f64, f64),
    pub blobs: Vec<Blob>,
    pub rings: Vec<RingBlob>,
    pub noise_amplitude: f64,
    /// Global signal scale already folded into the intensities above;
    /// kept for introspection. Varying it widely across phantoms stops
    /// global contrast from acting as a shortcut label.
    pub contrast: f64,
    seed: u64,
}

impl PhantomScene {
    pub fn from_seed(seed: u64, size: usize, frames: usize) -> Result<Self> {
        if size < MIN_PHANTOM_SIZE || !size.is_power_of_two() {
            return Err(Error::param(format!(
                "phantom size must be a power of two >= {MIN_PHANTOM_SIZE}, got {size}"
            )));
        }
        if frames < 2 {
            return Err(Error::param(format!("phantom needs >= 2 frames, got {frames}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 0x5CE9E));
        let s = size as f64;
        let mut jitter = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let contrast = jitter(0.45, 1.0);
        let heart_center = (
            s * 0.5 + jitter(-0.08, 0.08) * s,
            s * 0.5 + jitter(-0.08, 0.08) * s,
        );
        let torso_center = (
            s * 0.5 + jitter(-0.03, 0.03) * s,
            s * 0.5 + jitter(-0.03, 0.03) * s,
        );
        let torso_semi_axes = (s * jitter(0.34, 0.46), s * jitter(0.36, 0.48));
        let torso_angle = jitter(-0.5, 0.5);
        let outer_radius = s * jitter(0.16, 0.24);
        let base_inner_radius = outer_radius * jitter(0.55, 0.68);
        let contraction = base_inner_radius * jitter(0.30, 0.55);
        let background = jitter(0.02, 0.08) * contrast;
        let torso_intensity = jitter(0.22, 0.38) * contrast;
        let myocardium_intensity = jitter(0.68, 0.86) * contrast;
        let pool_intensity = jitter(0.36, 0.52) * contrast;
        let gradient = (
            jitter(-0.12, 0.12) * contrast,
            jitter(-0.12, 0.12) * contrast,
        );
        let noise_amplitude = jitter(0.05, 0.10) * contrast;

        // clutter bumps kept clear of the annulus
        let n_blobs = rng.random_range(2..=4usize);
        let mut blobs = Vec::with_capacity(n_blobs);
        while blobs.len() < n_blobs {
            let center = (rng.random_range(0.1..0.9) * s, rng.random_range(0.1..0.9) * s);
            let radius = s * rng.random_range(0.05..0.11);
            let d = ((center.0 - heart_center.0).powi(2) + (center.1 - heart_center.1).powi(2))
                .sqrt();
            if d < outer_radius + radius + 2.0 {
                continue;
            }
            let magnitude = rng.random_range(0.10..0.30) * contrast;
            let sign = if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
            blobs.push(Blob { center, radius, intensity: sign * magnitude });
        }

        // annular clutter
        let n_rings = rng.random_range(1..=2usize);
        let mut rings = Vec::with_capacity(n_rings);
        while rings.len() < n_rings {
            let center = (rng.random_range(0.1..0.9) * s, rng.random_range(0.1..0.9) * s);
            let radius = s * rng.random_range(0.06..0.16);
            let thickness = s * rng.random_range(0.02..0.05);
            let d = ((center.0 - heart_center.0).powi(2) + (center.1 - heart_center.1).powi(2))
                .sqrt();
            if d < outer_radius + radius + thickness + 2.0 {
                continue;
            }
            rings.push(RingBlob {
                center,
                radius,
                thickness,
                intensity: rng.random_range(0.12..0.35) * contrast,
            });
        }

        Ok(PhantomScene {
            size,
            frames,
            heart_center,
            torso_center,
            torso_semi_axes,
            torso_angle,
            outer_radius,
            base_inner_radius,
            contraction,
            background,
            torso_intensity,
            myocardium_intensity,
            pool_intensity,
            gradient,
            blobs,
            rings,
            noise_amplitude,
            contrast,
            seed,
        })
    }

    /// Inner annulus radius at frame `t`:
    /// `base - contraction * (1 - cos(2*pi*t / frames)) / 2`.
    /// One full contraction/relaxation cycle per stack.
    pub fn inner_radius(&self, t: usize) -> f64 {
        let phase = std::f64::consts::TAU * t as f64 / self.frames as f64;
        self.base_inner_radius - self.contraction * (1.0 - phase.cos()) / 2.0
    }

    /// Render frame `t`. Edges are softened over roughly one pixel.
    pub fn render(&self, t: usize) -> ImageGray {
        let n = self.size;
        let s = n as f64;
        let inner_r = self.inner_radius(t);
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive2(self.seed, 0xF7A3, t as u64));
        let (sin_a, cos_a) = self.torso_angle.sin_cos();
        let mut data = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let y = row as f64 + 0.5;
                let x = col as f64 + 0.5;
                let mut v = self.background
                    + self.gradient.0 * (y / s - 0.5)
                    + self.gradient.1 * (x / s - 0.5);

                let (tc, ta) = (self.torso_center, self.torso_semi_axes);
                let (dy, dx) = (y - tc.0, x - tc.1);
                let ry = dy * cos_a - dx * sin_a;
                let rx = dy * sin_a + dx * cos_a;
                let torso_d = (((ry / ta.0).powi(2) + (rx / ta.1).powi(2)).sqrt() - 1.0)
                    * ta.0.min(ta.1);
                v = blend(v, self.torso_intensity, torso_d);

                for blob in &self.blobs {
                    let d = ((y - blob.center.0).powi(2) + (x - blob.center.1).powi(2)).sqrt()
                        - blob.radius;
                    v += blob.intensity * coverage(d);
                }
                for ring in &self.rings {
                    let r = ((y - ring.center.0).powi(2) + (x - ring.center.1).powi(2)).sqrt();
                    v += ring.intensity * coverage((r - ring.radius).abs() - ring.thickness);
                }

                let (hc_r, hc_c) = self.heart_center;
                let r = ((y - hc_r).powi(2) + (x - hc_c).powi(2)).sqrt();
                v = blend(v, self.myocardium_intensity, r - self.outer_radius);
                v = blend(v, self.pool_intensity, r - inner_r);

                let noise: f64 = rng.random_range(-self.noise_amplitude..self.noise_amplitude);
                data.push((v + noise).clamp(0.0, 1.0));
            }
        }
        ImageGray::new(n, n, data).expect("rendered values are clamped")
    }
}

/// Soft inside fraction: 1 for signed distance <= -0.5 px, 0 for >= 0.5.
fn coverage(signed_distance: f64) -> f64 {
    (0.5 - signed_distance).clamp(0.0, 1.0)
}

fn blend(base: f64, inside: f64, signed_distance: f64) -> f64 {
    base + (inside - base) * coverage(signed_distance)
}

/// Generate a seeded cine phantom stack.
pub fn generate_phantom(seed: u64, size: usize, frames: usize) -> Result<CineStack> {
    let scene = PhantomScene::from_seed(seed, size, frames)?;
    let rendered: Vec<ImageGray> = (0..frames).map(|t| scene.render(t)).collect();
    CineStack::new(rendered)
}
