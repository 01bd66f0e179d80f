//! Deterministic fixtures shared by the benchmarks.

use mupp_core::algebra::{preset, PerturbationRule};
use mupp_core::net::{Activation, Dims, InitSpec, Network, Stream};
use mupp_core::opt::{LayerScales, StepConfig};
use ndarray::Array2;

/// Input dimension and class count of every fixture.
pub const D_IN: usize = 32;
pub const CLASSES: usize = 10;

pub struct Fixture {
    pub net: Network,
    pub scales: LayerScales,
    pub cfg: StepConfig,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

/// A μP² network of the given width and depth 3 with one fixed batch.
pub fn fixture(width: usize, batch: usize) -> Fixture {
    let p = preset("mupp", 3).expect("preset");
    let dims = Dims::new(D_IN, width, 3, CLASSES).expect("dims");
    let rule = PerturbationRule::SamJointLp;
    let net = Network::init(dims, Activation::Tanh, &InitSpec::bcd(&p, &dims).expect("init"), 7).expect("net");
    let scales = LayerScales::bcd(&p, &rule, &dims).expect("scales");
    let mut s = Stream::new(7, 77);
    let x = Array2::from_shape_fn((batch, D_IN), |_| s.normal());
    let y = Array2::from_shape_fn((batch, CLASSES), |(i, j)| if i % CLASSES == j { 1.0 } else { 0.0 });
    Fixture { net, scales, cfg: StepConfig::new(0.1, 0.1, rule), x, y }
}

/// Square Gaussian matrix with unit-variance entries.
pub fn gaussian(n: usize, seed: u64) -> Array2<f64> {
    let mut s = Stream::new(seed, 5);
    Array2::from_shape_fn((n, n), |_| s.normal())
}
