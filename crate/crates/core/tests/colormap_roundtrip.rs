use pothole_core::colormap::{jet_decode, jet_decode_u8, jet_encode, jet_encode_u8};
use proptest::prelude::*;

// Independent jet reference written as explicit breakpoints.
fn jet_reference(x: f64) -> [f64; 3] {
    let knots = [
        (0.0, [0.0, 0.0, 0.5]),
        (0.125, [0.0, 0.0, 1.0]),
        (0.375, [0.0, 1.0, 1.0]),
        (0.625, [1.0, 1.0, 0.0]),
        (0.875, [1.0, 0.0, 0.0]),
        (1.0, [0.5, 0.0, 0.0]),
    ];
    let i = knots.windows(2).position(|w| x <= w[1].0).unwrap();
    let (x0, c0) = knots[i];
    let (x1, c1) = knots[i + 1];
    let t = (x - x0) / (x1 - x0);
    [0, 1, 2].map(|k| c0[k] + t * (c1[k] - c0[k]))
}

proptest! {
    #[test]
    fn encode_matches_breakpoint_table(x in 0.0f64..=1.0) {
        let got = jet_encode(x).unwrap();
        let want = jet_reference(x);
        for k in 0..3 {
            prop_assert!((got[k] - want[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn float_round_trip(x in 0.0f64..=1.0) {
        prop_assert!((jet_decode(jet_encode(x).unwrap()) - x).abs() < 1e-12);
    }

    #[test]
    fn eight_bit_round_trip_within_one_step(x in 0.0f64..=1.0) {
        let d = jet_decode_u8(jet_encode_u8(x).unwrap());
        // one 8-bit step along the steepest channel moves x by 1/(4*255)
        prop_assert!((d.value - x).abs() <= 1.0 / (4.0 * 255.0) + 1e-9, "x {} got {}", x, d.value);
        prop_assert!(!d.off_curve());
    }
}

#[test]
fn knots_decode_exactly_through_eight_bits() {
    for x in [0.125, 0.375, 0.625, 0.875] {
        let d = jet_decode_u8(jet_encode_u8(x).unwrap());
        assert!((d.value - x).abs() < 1e-12, "{x} -> {}", d.value);
        assert!(d.distance < 1e-12);
    }
}
