use air_rl_demo::{baseline_gap, bound_curve, price_path};

#[test]
fn holding_every_share_earns_nothing() {
    let p = price_path(3, 0.5, 0).unwrap();
    assert_eq!(p.prices.len(), 100);
    assert_eq!(p.total, 0.0);
    assert!(p.shares.iter().all(|&s| s == 10));
}

#[test]
fn selling_one_share_per_step_empties_the_position() {
    let p = price_path(3, 0.0, 1).unwrap();
    assert_eq!(p.shares[..11], [10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0]);
    assert!(p.total > 0.0);
    assert!(price_path(3, 1.5, 1).is_err());
}

#[test]
fn bound_curve_decreases_in_n() {
    let ys = bound_curve(100, 5.0, 0.01, 0.0, 0.05, 100).unwrap();
    assert_eq!(ys.len(), 100);
    assert!(ys.windows(2).all(|w| w[1] < w[0]));
    assert!((ys[99] - 567.905).abs() < 1e-3);
    assert!(bound_curve(100, 5.0, 0.01, 0.0, 2.0, 10).is_err());
}

#[test]
fn gap_respects_its_bound() {
    for seed in 0..20 {
        let g = baseline_gap(seed, 4, 3, 2, 5, 0.2).unwrap();
        assert!(g.gap <= g.bound + 1e-12, "{g:?}");
    }
    let g = baseline_gap(1, 4, 3, 2, 5, 0.0).unwrap();
    assert!(g.gap < 1e-12);
}
