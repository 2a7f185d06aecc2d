//! Reduction policy for per-sample partial gradients.
//!
//! Convolution gradients are computed per sample in parallel. In
//! deterministic mode (the default) partials are summed in sample order, so
//! results are bit-identical for any thread count. Setting
//! `CXRAD_DETERMINISTIC=0` switches to a tree reduction whose order depends on
//! work stealing; results then agree only to rounding.

use std::sync::OnceLock;

use rayon::prelude::*;

pub const DETERMINISTIC_ENV: &str = "CXRAD_DETERMINISTIC";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelMode {
    Deterministic,
    Fast,
}

impl KernelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelMode::Deterministic => "deterministic",
            KernelMode::Fast => "fast",
        }
    }
}

pub fn kernel_mode() -> KernelMode {
    static MODE: OnceLock<KernelMode> = OnceLock::new();
    *MODE.get_or_init(|| match std::env::var(DETERMINISTIC_ENV) {
        Ok(v) if matches!(v.trim(), "0" | "false" | "off" | "no") => KernelMode::Fast,
        _ => KernelMode::Deterministic,
    })
}

/// Sums equally sized partial vectors into `acc`.
pub(crate) fn accumulate_partials<I>(partials: I, acc: &mut [f64])
where
    I: IndexedParallelIterator<Item = Vec<f64>>,
{
    let len = acc.len();
    match kernel_mode() {
        KernelMode::Deterministic => {
            let all: Vec<Vec<f64>> = partials.collect();
            for part in &all {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        KernelMode::Fast => {
            let total = partials.reduce(
                || vec![0.0; len],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    a
                },
            );
            for (a, t) in acc.iter_mut().zip(&total) {
                *a += t;
            }
        }
    }
}
