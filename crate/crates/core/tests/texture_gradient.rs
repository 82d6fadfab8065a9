use periph_core::texture::{StatConfig, TextureModel, Window};
use periph_core::{compute_stats, stat_gradient, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(n, n, |_, _| rng.random::<f64>())
}

fn smooth_noise(n: usize, seed: u64) -> ImageBuffer {
    let img = noise(n, seed);
    periph_core::gaussian::blur(&img)
}

/// Central differences on the loss along random pixel coordinates.
fn check_fd(model: &TextureModel, img: &ImageBuffer, targets: &[(Option<&Window>, &[f64])], probes: usize) {
    let (_, grad) = model.loss_and_gradient(img, targets).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let scale = grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..probes {
        let i = rng.random_range(0..img.len());
        let mut plus = img.clone();
        plus.data_mut()[i] += h;
        let mut minus = img.clone();
        minus.data_mut()[i] -= h;
        let lp = model.loss_and_gradient(&plus, targets).unwrap().0;
        let lm = model.loss_and_gradient(&minus, targets).unwrap().0;
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((fd - grad.data()[i]).abs() / scale);
    }
    assert!(worst < 1e-4, "relative gradient error {worst}");
}

#[test]
fn global_gradient_matches_finite_differences() {
    let cfg = StatConfig::new(2, 4, 3);
    let model = TextureModel::new(cfg, 16).unwrap();
    let img = smooth_noise(16, 1);
    let target = compute_stats(&noise(16, 2), &cfg).unwrap();
    check_fd(&model, &img, &[(None, &target.values)], 40);
    let g = stat_gradient(&img, &target, &cfg).unwrap();
    assert_eq!(g.dims(), (16, 16));
}

#[test]
fn pooled_gradient_matches_finite_differences() {
    let cfg = StatConfig::new(2, 3, 3);
    let model = TextureModel::new(cfg, 16).unwrap();
    let mut dense = vec![0.0; 256];
    for y in 0..16 {
        for x in 0..16 {
            let dx = x as f64 - 4.0;
            let dy = y as f64 - 9.0;
            dense[y * 16 + x] = (1.0 - (dx * dx + dy * dy).sqrt() / 8.0).max(0.0);
        }
    }
    let win = Window::from_dense(16, &dense).unwrap();
    let img = smooth_noise(16, 3);
    let target = model.pooled_stats(&noise(16, 4), std::slice::from_ref(&win)).unwrap();
    let global = compute_stats(&noise(16, 5), &cfg).unwrap();
    check_fd(
        &model,
        &img,
        &[(Some(&win), &target[0].values), (None, &global.values)],
        40,
    );
}

#[test]
fn pooled_uniform_window_equals_global() {
    let cfg = StatConfig::new(2, 4, 3);
    let model = TextureModel::new(cfg, 32).unwrap();
    let img = noise(32, 6);
    let global = model.stats(&img).unwrap();
    let pooled = model.pooled_stats(&img, &[Window::uniform(32)]).unwrap();
    for (a, b) in global.values.iter().zip(&pooled[0].values) {
        assert!((a - b).abs() < 1e-12);
    }
}
