//! Compactly supported correlation functions, all written in the scaled distance `r = h / theta`
//! and exactly zero for `r >= 1`.

/// Spherical correlation `1 - 1.5 r + 0.5 r^3`.
#[inline]
pub(crate) fn spherical_r(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        1.0 - r * (1.5 - 0.5 * r * r)
    }
}

/// `(1 - r)^4 (1 + 4 r)`
#[inline]
pub(crate) fn wendland1_r(r: f64) -> f64 {
    if r >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - r;
    let s2 = s * s;
    s2 * s2 * (1.0 + 4.0 * r)
}

/// `(1 - r)^6 (1 + 6 r + 35 r^2 / 3)`
#[inline]
pub(crate) fn wendland2_r(r: f64) -> f64 {
    if r >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - r;
    let s3 = s * s * s;
    s3 * s3 * (1.0 + r * (6.0 + r * 35.0 / 3.0))
}

/// `(1 - r)^8 (1 + 8 r + 25 r^2 + 32 r^3)`
#[inline]
pub(crate) fn wendland3_r(r: f64) -> f64 {
    if r >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - r;
    let s2 = s * s;
    let s4 = s2 * s2;
    s4 * s4 * (1.0 + r * (8.0 + r * (25.0 + 32.0 * r)))
}

#[inline]
pub(crate) fn wendland_r(order: u32, r: f64) -> f64 {
    match order {
        1 => wendland1_r(r),
        2 => wendland2_r(r),
        3 => wendland3_r(r),
        _ => unreachable!("wendland order validated by caller"),
    }
}
