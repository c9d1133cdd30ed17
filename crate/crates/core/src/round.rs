//! Report rounding.
//!
//! Published tables round halves away from zero (0.575 -> 0.58,
//! -16.235 -> -16.24). Binary floats rarely hit an exact half, so a value
//! within a relative 1e-9 of the midpoint counts as a tie.

const TIE_TOLERANCE: f64 = 1e-9;

pub fn round_half_up(value: f64, places: u32) -> f64 {
    if !value.is_finite() {
        return value;
    }
    let scale = 10f64.powi(places as i32);
    let scaled = value.abs() * scale;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let tol = TIE_TOLERANCE * scaled.max(1.0);
    let rounded = if frac >= 0.5 - tol { floor + 1.0 } else { floor };
    (rounded / scale).copysign(value)
}

/// Round to two decimals.
pub fn round2(value: f64) -> f64 {
    round_half_up(value, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_up() {
        assert_eq!(round2(0.575), 0.58);
        assert_eq!(round2(0.535), 0.54);
        assert_eq!(round2(36.725), 36.73);
        assert_eq!(round2(64.275), 64.28);
        assert_eq!(round2(-16.235), -16.24);
        assert_eq!(round2(0.085), 0.09);
    }

    #[test]
    fn non_ties() {
        assert_eq!(round2(60.178978), 60.18);
        assert_eq!(round2(26.6643), 26.66);
        assert_eq!(round2(0.0), 0.0);
        assert_eq!(round2(100.0), 100.0);
        assert_eq!(round_half_up(0.123456, 4), 0.1235);
    }
}
