//! Rounding helpers shared by the fraction and grid code.

const SNAP_TOLERANCE: f64 = 1e-9;

/// Ceiling that treats values within a relative 1e-9 of an integer as that
/// integer, so `0.3 * 10.0` yields 3 rather than 4.
pub(crate) fn ceil_snapped(x: f64) -> f64 {
    let nearest = libm::round(x);
    if libm::fabs(x - nearest) <= SNAP_TOLERANCE * libm::fmax(1.0, libm::fabs(x)) {
        nearest
    } else {
        libm::ceil(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snaps_float_noise() {
        assert_eq!(ceil_snapped(0.3 * 10.0), 3.0);
        assert_eq!(ceil_snapped(1.0 / (1.0 / 3.0)), 3.0);
        assert_eq!(ceil_snapped(7.5), 8.0);
        assert_eq!(ceil_snapped(0.0), 0.0);
        assert_eq!(ceil_snapped(2.000001), 3.0);
    }
}
