use posecheck_web::{pr_comparison, view_pose, Core};

#[test]
fn pr_comparison_is_reproducible() {
    let core = Core::new("cross4").unwrap();
    let a = serde_json::to_string(&pr_comparison(&core, 6, 0.9, 11).unwrap()).unwrap();
    let b = serde_json::to_string(&pr_comparison(&core, 6, 0.9, 11).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn coin_flip_validator_gains_nothing_on_average() {
    let core = Core::new("wedge").unwrap();
    let gains: f64 = (0..4)
        .map(|s| {
            let c = pr_comparison(&core, 20, 0.5, s).unwrap();
            c.validator.ap - c.confidence.ap
        })
        .sum::<f64>()
        / 4.0;
    assert!(gains.abs() < 15.0, "{gains}");
}

#[test]
fn revolution_sweep_about_its_axis_is_flat() {
    let core = Core::new("cone_rev").unwrap();
    assert!(core.distance_sweep("z", 12).unwrap().iter().all(|d| *d < 1e-6));
    assert!(core.distance_sweep("x", 12).unwrap()[3] > 0.1);
}

#[test]
fn farther_views_render_fewer_pixels() {
    let core = Core::new("bar2").unwrap();
    let lit = |z| core.render_rgba(&view_pose(0.0, -40.0, 0.0, z)).chunks(4).filter(|p| p[0] > 0).count();
    assert!(lit(2.5) > lit(5.0));
}
