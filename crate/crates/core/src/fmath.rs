//! Float math routed through `libm` so results do not depend on
//! whether the crate is built with `std`.

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// floor(n * ratio) with a tolerance for the binary representation of
/// decimal ratios: 10 * 0.3 evaluates to 2.999..96 in f64 but the
/// intended count is 3.
pub(crate) fn ratio_floor(n: usize, ratio: f64) -> usize {
    floor(n as f64 * ratio + 1e-9) as usize
}
