use proptest::prelude::*;
use spordinal::rotation::{
    classify_quadrant, from_positivity_neutrality, to_positivity_neutrality, CoefficientPair, Quadrant,
};

fn pair(b_neg: f64, b_zero: f64) -> CoefficientPair {
    CoefficientPair {
        b_neg,
        b_zero,
        label: "x".into(),
    }
}

proptest! {
    #[test]
    fn rotation_is_orthogonal(a in -50.0..50.0f64, b in -50.0..50.0f64, c in -50.0..50.0f64, d in -50.0..50.0f64) {
        let (u, v) = (to_positivity_neutrality(&pair(a, b)), to_positivity_neutrality(&pair(c, d)));
        let scale = 1e-12 * (1.0 + a.abs() + b.abs() + c.abs() + d.abs()).powi(2);
        prop_assert!((u.positivity * v.positivity + u.neutrality * v.neutrality - (a * c + b * d)).abs() <= scale);
        prop_assert!((u.positivity.hypot(u.neutrality) - a.hypot(b)).abs() <= 1e-12 * (1.0 + a.hypot(b)));
        let back = from_positivity_neutrality(&u);
        prop_assert!((back.b_neg - a).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()));
        prop_assert!((back.b_zero - b).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()));
        prop_assert_eq!(back.label, "x");
    }

    #[test]
    fn quadrant_follows_the_sign_pattern(
        sa in -1i8..=1, sb in -1i8..=1, ma in 1e-6..10.0f64, mb in 1e-6..10.0f64, tol in 0.0..1e-7f64,
    ) {
        let q = classify_quadrant(&pair(sa as f64 * ma, sb as f64 * mb), tol);
        let expected = match (sa, sb) {
            (1, 1) => Quadrant::HarmfulOrIrrelevant,
            (-1, 1) => Quadrant::IncreasedNeutrality,
            (-1, -1) => Quadrant::Beneficial,
            (1, -1) => Quadrant::Polarization,
            _ => Quadrant::AxisBorderline,
        };
        prop_assert_eq!(q, expected);
        // Anything within the tolerance band is borderline.
        prop_assert_eq!(classify_quadrant(&pair(sa as f64 * ma, tol * 0.5), tol), Quadrant::AxisBorderline);
    }

    #[test]
    fn beneficial_pairs_have_positive_positivity(a in 1e-3..10.0f64, b in 1e-3..10.0f64) {
        let r = to_positivity_neutrality(&pair(-a, -b));
        prop_assert!(r.positivity > 0.0);
        let r = to_positivity_neutrality(&pair(-a, b));
        prop_assert!(r.neutrality > 0.0);
    }
}
