use aperture_forge::metrics::PatternEvaluator;
use aperture_forge::pattern::AperturePattern;
use aperture_forge_wasm::*;

#[test]
fn kernel_view_is_normalized_and_centred() {
    let v = kernel_view_native(&selected_pattern(), 7).unwrap();
    assert_eq!(v.side(), 7);
    assert!((v.kernel().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // |K(0)|^2 = 1 lands in the middle of the shifted grid
    let n = v.spectrum_size();
    assert!(v.spectrum()[(n / 2) * n + n / 2].abs() < 1e-12);
    assert!(v.spectrum().iter().all(|&x| x <= 1e-12));
}

#[test]
fn bad_patterns_are_rejected() {
    assert!(kernel_view_native(&[1; 10], 3).is_err());
    assert!(score_native(&[0; 49]).is_err());
    assert!(kernel_view_native(&selected_pattern(), 0).is_err());
}

#[test]
fn score_matches_the_library() {
    let got = score_native(&circular_pattern()).unwrap();
    let want = PatternEvaluator::standard()
        .score_pattern(&AperturePattern::circular())
        .unwrap();
    assert_eq!(&got[..3], &[want.r_max, want.d_min, want.d_r_min]);
    assert_eq!(got.len(), 6);
}

#[test]
fn scale_estimate_recovers_sign_and_size() {
    for s in [-6, 4] {
        let e = estimate_scale_native(&selected_pattern(), s, 0.001, 3).unwrap();
        assert_eq!(e.best(), s);
        assert_eq!(e.scales().len(), 20);
        assert_eq!(e.qualities().len(), 20);
        assert_eq!(e.blurred().len(), e.size() * e.size());
        assert!((e.best_prob() + e.second_prob() - 1.0).abs() < 1e-9);
    }
    assert!(estimate_scale_native(&selected_pattern(), 11, 0.001, 3).is_err());
}
