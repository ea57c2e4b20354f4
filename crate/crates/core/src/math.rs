//! Float intrinsics: the platform's with `std`, `libm` without.

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub(crate) fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }

    #[inline]
    pub(crate) fn sin(x: f64) -> f64 {
        x.sin()
    }

    #[inline]
    pub(crate) fn cos(x: f64) -> f64 {
        x.cos()
    }

    #[inline]
    pub(crate) fn powf(x: f64, y: f64) -> f64 {
        x.powf(y)
    }

    #[inline]
    pub(crate) fn ceil(x: f64) -> f64 {
        x.ceil()
    }

    #[inline]
    pub(crate) fn log2(x: f64) -> f64 {
        x.log2()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    pub(crate) use libm::{ceil, cos, log2, sin, sqrt};

    #[inline]
    pub(crate) fn powf(x: f64, y: f64) -> f64 {
        libm::pow(x, y)
    }
}

pub(crate) use imp::*;
