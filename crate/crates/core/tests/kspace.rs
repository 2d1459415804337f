//! Injector behaviour against brute-force direct-DFT references.

mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metaqc::image::{CineStack, ImageGray};
use metaqc::kspace::{
    forward_fft, inject_aliasing, inject_cardiac_motion, inject_gibbs,
    inject_respiratory_motion, inverse_fft, synthesize_sample, ArtefactClass, ArtefactParams,
};

fn base_params() -> ArtefactParams {
    ArtefactParams {
        translation_px: 2,
        sine_period: 8.0,
        sine_duty: 0.5,
        gibbs_keep_fraction: 0.5,
        aliasing_factor: 2,
        rng_seed: 11,
    }
}

#[test]
fn impulse_spectrum_is_flat_at_one_eighth() {
    // 8x8 impulse at (0, 0): every coefficient has magnitude 1/8.
    let mut img = ImageGray::zeros(8, 8).unwrap();
    img.set(0, 0, 1.0);
    let grid = forward_fft(&img);
    for c in grid.coeffs() {
        assert!((c.norm() - 0.125).abs() < 1e-12);
    }
    // and the whole spectrum agrees with the direct summation
    let reference = dft2(&img);
    for (a, b) in grid.coeffs().iter().zip(&reference) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn forward_matches_direct_dft_on_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..3 {
        let img = random_image(&mut rng, 16, 16);
        let grid = forward_fft(&img);
        let reference = dft2(&img);
        let worst = grid
            .coeffs()
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "spectrum mismatch {worst}");
    }
}

#[test]
fn respiratory_matches_line_mix_oracle_on_impulse() {
    // 32x32 impulse, translation 4, duty 0.5, period 8.
    let mut img = ImageGray::zeros(32, 32).unwrap();
    img.set(13, 20, 1.0);
    let p = ArtefactParams {
        translation_px: 4,
        sine_period: 8.0,
        sine_duty: 0.5,
        ..base_params()
    };
    let out = inject_respiratory_motion(&img, &p).unwrap();
    let expected = oracle_respiratory(&img, &p);
    assert!(max_abs_diff(out.pixels(), &expected) < 1e-9);
}

#[test]
fn cardiac_matches_row_assembly_oracle_with_shifting_impulse() {
    // t = height frames, frame t holds an impulse shifted t pixels.
    let h = 16;
    let frames: Vec<ImageGray> = (0..h)
        .map(|t| {
            let mut f = ImageGray::zeros(h, h).unwrap();
            f.set((2 + t) % h, 7, 1.0);
            f
        })
        .collect();
    let cine = CineStack::new(frames).unwrap();
    let p = base_params();
    let out = inject_cardiac_motion(&cine, &p).unwrap();
    let expected = oracle_cardiac(&cine, &p);
    assert!(max_abs_diff(out.pixels(), &expected) < 1e-9);
}

#[test]
fn injectors_match_brute_force_oracles_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    for draw in 0..5 {
        let img = random_image(&mut rng, 16, 16);
        let cine = random_cine(&mut rng, 16, 16, 4);
        let p = random_params(&mut rng);

        let respiratory = inject_respiratory_motion(&img, &p).unwrap();
        assert!(
            max_abs_diff(respiratory.pixels(), &oracle_respiratory(&img, &p)) < 1e-5,
            "respiratory draw {draw}"
        );
        let cardiac = inject_cardiac_motion(&cine, &p).unwrap();
        assert!(
            max_abs_diff(cardiac.pixels(), &oracle_cardiac(&cine, &p)) < 1e-5,
            "cardiac draw {draw}"
        );
        let gibbs = inject_gibbs(&img, &p).unwrap();
        assert!(
            max_abs_diff(gibbs.pixels(), &oracle_gibbs(&img, &p)) < 1e-5,
            "gibbs draw {draw}"
        );
        let aliasing = inject_aliasing(&img, &p).unwrap();
        assert!(
            max_abs_diff(aliasing.pixels(), &oracle_aliasing(&img, &p)) < 1e-5,
            "aliasing draw {draw}"
        );
    }
}

#[test]
fn aliasing_equals_average_with_half_fov_shift() {
    // Keeping every second line is, in the image domain, the average of
    // the image with its half-height circular shift. This reference
    // needs no Fourier machinery at all.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let img = random_image(&mut rng, 16, 16);
    let p = ArtefactParams { aliasing_factor: 2, ..base_params() };
    let out = inject_aliasing(&img, &p).unwrap();
    let shifted = img.shift_rows(8);
    for r in 0..16 {
        for c in 0..16 {
            let expected = (img.get(r, c) + shifted.get(r, c)) / 2.0;
            assert!((out.get(r, c) - expected).abs() < 1e-9);
        }
    }
}

#[test]
fn gibbs_overshoot_sits_in_the_ringing_band() {
    // A centered step edge along each 256-wide row; keeping a quarter
    // of k-space must overshoot the high plateau by 5..12 % of the step
    // height. Verified against a direct truncated-Fourier partial sum.
    let (h, w) = (8, 256);
    let low = 0.25;
    let high = 0.75;
    let mut data = vec![low; h * w];
    for r in 0..h {
        for c in w / 4..3 * w / 4 {
            data[r * w + c] = high;
        }
    }
    let img = ImageGray::new(h, w, data).unwrap();
    let p = ArtefactParams { gibbs_keep_fraction: 0.25, ..base_params() };
    let out = inject_gibbs(&img, &p).unwrap();

    let reference = oracle_gibbs(&img, &p);
    assert!(max_abs_diff(out.pixels(), &reference) < 1e-9);

    let peak = out.pixels().iter().fold(0.0f64, |a, &b| a.max(b));
    let overshoot = peak - high;
    let step = high - low;
    assert!(
        overshoot > 0.05 * step && overshoot < 0.12 * step,
        "overshoot {overshoot} outside [{}, {}]",
        0.05 * step,
        0.12 * step
    );
}

#[test]
fn synthesize_dispatches_to_the_aliasing_oracle() {
    let mut img = ImageGray::zeros(16, 16).unwrap();
    img.set(5, 3, 1.0);
    let zero = ImageGray::zeros(16, 16).unwrap();
    let cine = CineStack::new(vec![img.clone(), zero]).unwrap();
    let p = ArtefactParams { aliasing_factor: 2, ..base_params() };
    let out = synthesize_sample(&cine, ArtefactClass::Aliasing, &p).unwrap();
    let expected = oracle_aliasing(&img, &p);
    assert!(max_abs_diff(out.pixels(), &expected) < 1e-9);
}

#[test]
fn masking_injections_never_gain_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..5 {
        let img = random_image(&mut rng, 16, 16);
        let p = random_params(&mut rng);
        let input_energy = img.energy();
        let gibbs = inject_gibbs(&img, &p).unwrap();
        assert!(gibbs.energy() <= input_energy + 1e-9);
        let aliasing = inject_aliasing(&img, &p).unwrap();
        assert!(aliasing.energy() <= input_energy + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fft_round_trip_is_identity(
        seed in 0u64..1_000_000,
        size_pick in 0usize..2,
    ) {
        let size = [8, 16][size_pick];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, size, size);
        let back = inverse_fft(&forward_fft(&img));
        prop_assert!(img.max_abs_diff(&back) < 1e-6);
    }

    #[test]
    fn spectral_energy_matches_image_energy(seed in 0u64..1_000_000) {
        // unitary transform: Parseval holds
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, 16, 16);
        let grid = forward_fft(&img);
        prop_assert!((grid.energy() - img.energy()).abs() < 1e-8);
    }
}
