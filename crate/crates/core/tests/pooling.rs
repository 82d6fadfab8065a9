use std::f64::consts::PI;

use periph_core::pooling::{build_regions, PoolingConfig, RegionKind};

/// Count lattice cells whose open support contains at least one pixel,
/// enumerating cells first and scanning pixels for each.
fn oracle_region_count(w: usize, h: usize, s: f64, z: (f64, f64), min_px: f64) -> usize {
    let dt = 2.0 * (s / 2.0).asinh();
    let n_theta = ((2.0 * PI / s).round() as usize).max(1);
    let dth = 2.0 * PI / n_theta as f64;
    let tf = (min_px / s).ln();
    let pixels: Vec<(f64, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x as f64 - z.0, y as f64 - z.1)))
        .collect();
    let mut count = 0;
    if pixels.iter().any(|(dx, dy)| dx.hypot(*dy) < (tf + dt).exp()) {
        count += 1;
    }
    for j in 1..60 {
        let tj = tf + j as f64 * dt;
        for k in 0..n_theta {
            let thk = -PI + k as f64 * dth;
            let hit = pixels.iter().any(|&(dx, dy)| {
                let r = dx.hypot(dy);
                if r == 0.0 || (r.ln() - tj).abs() >= dt {
                    return false;
                }
                if n_theta == 1 {
                    return true;
                }
                let mut d = dy.atan2(dx) - thk;
                while d > PI {
                    d -= 2.0 * PI;
                }
                while d <= -PI {
                    d += 2.0 * PI;
                }
                d.abs() < dth
            });
            if hit {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn region_count_matches_enumeration_oracle() {
    let mut cfg = PoolingConfig::new(256, 256, 0.5, 640.0);
    cfg.min_region_px = 16.0;
    assert_eq!(cfg.z, (640.0, 128.0));
    let set = build_regions(&cfg).unwrap();
    assert!(!set.global_fallback);
    assert_eq!(set.len(), oracle_region_count(256, 256, 0.5, (640.0, 128.0), 16.0));

    let cfg = PoolingConfig::new(64, 64, 0.7, 32.0);
    let set = build_regions(&cfg).unwrap();
    assert_eq!(set.len(), oracle_region_count(64, 64, 0.7, (32.0, 32.0), 16.0));
}

#[test]
fn partition_of_unity_over_grid() {
    for &s in &[0.3, 0.5, 0.9] {
        for &zx in &[32.0, -40.0, 160.0, 300.0] {
            let cfg = PoolingConfig::new(64, 64, s, zx);
            let set = build_regions(&cfg).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    let sum = set.weight_sum_at(x, y);
                    assert!((sum - 1.0).abs() < 1e-6, "s={s} zx={zx} ({x},{y}) sum={sum}");
                }
            }
        }
    }
}

#[test]
fn diameter_at_eccentricity_100() {
    let cfg = PoolingConfig::new(256, 256, 0.5, 128.0);
    let set = build_regions(&cfg).unwrap();
    let dt = set.lattice.dt;
    let nearest = set
        .regions
        .iter()
        .filter(|r| matches!(r.kind, RegionKind::Cell { .. }))
        .min_by(|a, b| {
            (a.eccentricity.ln() - 100f64.ln())
                .abs()
                .total_cmp(&(b.eccentricity.ln() - 100f64.ln()).abs())
        })
        .unwrap();
    let d = nearest.nominal_diameter;
    assert!(d >= 50.0 * (-dt).exp() && d <= 50.0 * dt.exp(), "diameter {d}");
}

#[test]
fn diameters_grow_with_eccentricity() {
    let cfg = PoolingConfig::new(256, 256, 0.4, 128.0);
    let set = build_regions(&cfg).unwrap();
    let mut pairs: Vec<(f64, f64)> = set.regions.iter().map(|r| (r.eccentricity, r.nominal_diameter)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(pairs.windows(2).all(|p| p[1].1 >= p[0].1));
}

#[test]
fn fixation_outside_gives_far_regions() {
    let cfg = PoolingConfig::new(256, 256, 0.5, 640.0);
    let set = build_regions(&cfg).unwrap();
    for r in &set.regions {
        assert!(r.mean_eccentricity >= 384.0 - 1e-9);
        assert!(matches!(r.kind, RegionKind::Cell { .. }));
    }
    let ecc: Vec<f64> = set.regions.iter().map(|r| r.mean_eccentricity).collect();
    let (lo, hi) = ecc.iter().fold((f64::MAX, 0.0f64), |(l, h), d| (l.min(*d), h.max(*d)));
    // Every pixel lies between 384 and ~655 px from fixation.
    assert!(hi / lo < 655.0 / 384.0, "{lo} {hi}");
}

#[test]
fn huge_scaling_falls_back_to_global() {
    let cfg = PoolingConfig::new(64, 64, 3.0, 200.0);
    let set = build_regions(&cfg).unwrap();
    assert!(set.global_fallback);
    assert_eq!(set.len(), 1);
    assert!((set.weight_sum_at(10, 10) - 1.0).abs() < 1e-12);
}

#[test]
fn json_export_lists_geometry() {
    let set = build_regions(&PoolingConfig::new(64, 64, 0.5, 100.0)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&set.to_json().unwrap()).unwrap();
    let first = &v["regions"][0];
    assert!(first["center"].is_array());
    assert!(first["eccentricity"].is_number());
    assert!(first["width"].is_number());
}
