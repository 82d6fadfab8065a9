use periph_core::gaussian;
use periph_core::iqa::{
    mse, optimize_texform_params, pyramid_iqa, GridSearch, IqaPair, Mse, OptTarget, PerceptualMetric,
    TextureMetric,
};
use periph_core::pooling::PoolingConfig;
use periph_core::synthesis::{synthesize_texform, SynthesisConfig};
use periph_core::texture::{stat_distance, StatConfig, TextureModel};
use periph_core::textures::{corpus, TextureSpec};
use periph_core::ImageBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(n, n, |_, _| rng.random::<f64>())
}

#[test]
fn metric_axioms() {
    let tex = TextureMetric::new(StatConfig::new(3, 4, 5));
    let metrics: [&dyn PerceptualMetric; 2] = [&Mse, &tex];
    let imgs: Vec<ImageBuffer> = corpus(4, 64, 3).into_iter().map(|c| c.1).chain([noise(64, 1)]).collect();
    for m in metrics {
        for a in &imgs {
            assert_eq!(m.distance(a, a).unwrap(), 0.0, "{}", m.id());
            for b in &imgs {
                let (ab, ba) = (m.distance(a, b).unwrap(), m.distance(b, a).unwrap());
                assert!(ab >= 0.0);
                assert!((ab - ba).abs() <= 1e-12, "{}: {ab} {ba}", m.id());
            }
        }
        assert!(m.distance(&imgs[0], &noise(32, 1)).is_err());
    }
}

#[test]
fn texture_metric_prefers_same_texture_over_noise() {
    let metric = TextureMetric::new(StatConfig::new(3, 4, 5));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut wins = 0;
    for _ in 0..50 {
        let spec = TextureSpec::random(&mut rng);
        let a = spec.render(64, 64, rng.random());
        let b = spec.render(64, 64, rng.random());
        let n = noise(64, rng.random());
        if metric.distance(&a, &b).unwrap() < metric.distance(&a, &n).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 45, "{wins}/50");
}

#[test]
fn alpha_one_is_normalized_stat_distance() {
    let cfg = StatConfig::new(3, 4, 5);
    let mut metric = TextureMetric::new(cfg);
    metric.alpha = 1.0;
    metric.stat_median = 0.7;
    let imgs = corpus(2, 64, 9);
    let (a, b) = (&imgs[0].1, &imgs[1].1);
    let model = TextureModel::new(cfg, 64).unwrap();
    let ds = stat_distance(&model.stats(a).unwrap(), &model.stats(b).unwrap()).unwrap();
    assert_eq!(metric.distance(a, b).unwrap(), ds / (ds + 0.7));
}

#[test]
fn calibration_sets_medians() {
    let cfg = StatConfig::new(3, 4, 5);
    let imgs = corpus(3, 64, 2);
    let pairs = [(&imgs[0].1, &imgs[1].1), (&imgs[1].1, &imgs[2].1), (&imgs[0].1, &imgs[2].1)];
    let mut metric = TextureMetric::new(cfg);
    metric.calibrate(&pairs).unwrap();
    let mut ds: Vec<f64> = pairs.iter().map(|(a, b)| metric.components(a, b).unwrap().0).collect();
    ds.sort_by(f64::total_cmp);
    assert_eq!(metric.stat_median, ds[1]);
    // A pair at the median distance lands halfway on that component.
    let v = metric.distance(pairs[0].0, pairs[0].1).unwrap();
    assert!(v > 0.0 && v < 1.0);
}

fn pairs(n: usize, side: usize, f: impl Fn(&ImageBuffer) -> ImageBuffer) -> Vec<IqaPair> {
    corpus(n, side, 5)
        .into_iter()
        .enumerate()
        .map(|(i, (_, img))| IqaPair {
            id: format!("p{i}"),
            condition: "original-vs-synth".into(),
            b: f(&img),
            a: img,
        })
        .collect()
}

#[test]
fn identical_pairs_score_zero() {
    let tex = TextureMetric::new(StatConfig::new(2, 4, 3));
    let report = pyramid_iqa(&pairs(4, 128, |x| x.clone()), &[&Mse, &tex], &[0, 3]);
    assert!(report.skipped.is_empty());
    assert_eq!(report.scores.len(), 16);
    assert!(report.scores.iter().all(|s| s.value == 0.0));
    assert!(report.aggregates.iter().all(|a| a.mean == 0.0 && a.lower == 0.0 && a.upper == 0.0));
}

#[test]
fn blur_hurts_fine_level_more() {
    let report = pyramid_iqa(&pairs(10, 32, gaussian::blur), &[&Mse], &[0, 3]);
    for i in 0..10 {
        let get = |level| {
            report
                .scores
                .iter()
                .find(|s| s.pair == format!("p{i}") && s.level == level)
                .unwrap()
                .value
        };
        assert!(get(3) < get(0), "pair {i}: {} vs {}", get(3), get(0));
    }
}

#[test]
fn report_shape_for_45_pairs() {
    let tex = TextureMetric::new(StatConfig::new(2, 4, 3));
    let mut ps = pairs(45, 128, gaussian::blur);
    // One unmatched pair is skipped and itemized.
    ps.push(IqaPair {
        id: "bad".into(),
        condition: "original-vs-synth".into(),
        a: noise(128, 1),
        b: noise(64, 1),
    });
    let report = pyramid_iqa(&ps, &[&Mse, &tex], &[0, 3]);
    assert_eq!(report.scores.len(), 180);
    assert_eq!(report.aggregates.len(), 4);
    assert!(report.aggregates.iter().all(|a| a.n == 45 && a.lower <= a.mean && a.mean <= a.upper));
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].0, "bad");
    let csv = report.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 181);
}

fn quick_search(s_grid: Vec<f64>, z_grid: Vec<f64>) -> GridSearch {
    GridSearch {
        s_grid,
        z_grid,
        min_region_px: 8.0,
        stat_cfg: StatConfig::new(2, 4, 3),
        synth: SynthesisConfig {
            max_steps: 40,
            ..Default::default()
        },
    }
}

fn targets(search: &GridSearch, truth: Option<(f64, f64)>) -> Vec<OptTarget> {
    corpus(2, 32, 17)
        .into_iter()
        .enumerate()
        .map(|(i, (_, image))| {
            let seed = 100 + i as u64;
            let reference = match truth {
                Some((s, z)) => {
                    let mut pooling = PoolingConfig::new(32, 32, s, z);
                    pooling.min_region_px = search.min_region_px;
                    let sc = SynthesisConfig { seed, ..search.synth };
                    synthesize_texform(&image, &pooling, &search.stat_cfg, &sc).unwrap().image
                }
                None => gaussian::blur(&image),
            };
            OptTarget {
                id: format!("t{i}"),
                seed,
                image,
                reference,
            }
        })
        .collect()
}

#[test]
fn single_point_grid() {
    let search = quick_search(vec![0.5], vec![40.0]);
    let ts = targets(&search, None);
    let r = optimize_texform_params(&ts, &search, &Mse, None).unwrap();
    assert_eq!(r.points.len(), 1);
    assert_eq!(r.best, Some((0.5, 40.0)));
    assert_eq!(r.best_z_value, r.points[0].z_value);
    assert!(r.best_z_value.unwrap() >= 0.0);
}

#[test]
fn planted_parameters_are_recovered_and_cached() {
    let search = quick_search(vec![0.4, 0.8], vec![24.0, 48.0]);
    let truth = (0.8, 24.0);
    let ts = targets(&search, Some(truth));
    let dir = tempfile::tempdir().unwrap();
    let r = optimize_texform_params(&ts, &search, &Mse, Some(dir.path())).unwrap();
    assert_eq!(r.best, Some(truth));
    assert_eq!(r.best_z_value, Some(0.0));
    for p in &r.points {
        let z = p.z_value.unwrap();
        assert!(z >= r.best_z_value.unwrap());
        assert!((p.recompute().unwrap() - z).abs() <= 1e-9);
        assert!(!p.cached);
    }
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 4);
    assert!(files.iter().all(|f| {
        let f = f.to_string_lossy();
        f.starts_with("point-") && f.ends_with(".json")
    }));

    // Second run is served from the cache and agrees exactly.
    let again = optimize_texform_params(&ts, &search, &Mse, Some(dir.path())).unwrap();
    assert!(again.points.iter().all(|p| p.cached));
    assert_eq!(again.best, r.best);
    assert_eq!(
        again.points.iter().map(|p| p.z_value).collect::<Vec<_>>(),
        r.points.iter().map(|p| p.z_value).collect::<Vec<_>>()
    );
}

#[test]
fn ties_prefer_smaller_scale_then_fixation() {
    // A constant metric makes every grid point tie.
    struct Constant;
    impl PerceptualMetric for Constant {
        fn id(&self) -> String {
            "constant".into()
        }
        fn distance(&self, _: &ImageBuffer, _: &ImageBuffer) -> periph_core::Result<f64> {
            Ok(0.25)
        }
    }
    let search = quick_search(vec![0.8, 0.4], vec![48.0, 24.0]);
    let ts = targets(&search, None);
    let r = optimize_texform_params(&ts, &search, &Constant, None).unwrap();
    assert_eq!(r.best, Some((0.4, 24.0)));
    assert_eq!(r.ties.len(), 3);
}

#[test]
fn grid_errors() {
    let search = quick_search(vec![], vec![24.0]);
    let ts = targets(&quick_search(vec![0.5], vec![24.0]), None);
    assert!(optimize_texform_params(&ts, &search, &Mse, None).is_err());
    // An invalid scale marks its point invalid rather than failing the search.
    let search = quick_search(vec![-1.0, 0.5], vec![24.0]);
    let r = optimize_texform_params(&ts, &search, &Mse, None).unwrap();
    assert!(r.points[0].error.is_some() && r.points[0].z_value.is_none());
    assert_eq!(r.best, Some((0.5, 24.0)));
    assert_eq!(mse(&ts[0].image, &ts[0].image).unwrap(), 0.0);
}
