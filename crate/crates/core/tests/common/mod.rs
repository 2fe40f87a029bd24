//! Generators and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kr_agcg::config::ExperimentConfig;
use kr_agcg::measures::Domain;
use kr_agcg::measures::{DiscreteMeasure, ExtremalAtom, KrParams, Point};
use kr_agcg::operators::{
    GaussianFieldOperator, GaussianSensorOperator, ObservationKind, ObservationVector, OperatorConfig, SensorLayout,
};

pub const EXP1: &str = include_str!("../../configs/exp1.json");
pub const EXP2: &str = include_str!("../../configs/exp2.json");

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_params(rng: &mut impl Rng) -> KrParams {
    let alpha: f64 = rng.random_range(0.2..2.0);
    let beta = rng.random_range(0.05..(2.0 * alpha).min(3.0) * 0.95);
    let p = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.3..1.0) };
    KrParams::new(alpha, beta, p).unwrap()
}

pub fn random_point(rng: &mut impl Rng, dim: usize) -> Point {
    if dim == 1 {
        Point::new1(rng.random_range(0.0..3.0))
    } else {
        Point::new2(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0))
    }
}

/// One to three atoms with weights of either sign.
pub fn random_measure(rng: &mut impl Rng, dim: usize) -> DiscreteMeasure {
    let n = rng.random_range(1..=3);
    DiscreteMeasure::from_atoms((0..n).map(|_| {
        let w = rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        (random_point(rng, dim), w)
    }))
}

/// A Dirac or an extremal dipole.
pub fn random_valid_atom(rng: &mut impl Rng, params: &KrParams, dim: usize) -> ExtremalAtom {
    if rng.random_bool(0.4) {
        let sign = if rng.random_bool(0.5) { 1 } else { -1 };
        return ExtremalAtom::dirac(sign, random_point(rng, dim));
    }
    let max_d = params.extremal_window().powf(1.0 / params.p);
    loop {
        let x = random_point(rng, dim);
        let r = rng.random_range(0.02..0.98) * max_d;
        let dir = if dim == 1 {
            vec![if rng.random_bool(0.5) { 1.0 } else { -1.0 }]
        } else {
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            vec![th.cos(), th.sin()]
        };
        let y = Point::from_slice(&x.as_slice().iter().zip(&dir).map(|(a, d)| a + r * d).collect::<Vec<_>>()).unwrap();
        if x.dist(&y) > 0.0 {
            return ExtremalAtom::dipole(x, y);
        }
    }
}

/// Sensor operator with randomly placed sensors on `[0, 3]^dim`.
pub fn random_sensor_operator(rng: &mut impl Rng, dim: usize) -> GaussianSensorOperator {
    let m = rng.random_range(4..12);
    let t = rng.random_range(0.03..0.3);
    GaussianSensorOperator::new(t, (0..m).map(|_| random_point(rng, dim)).collect()).unwrap()
}

pub fn random_field_operator(rng: &mut impl Rng, dim: usize) -> GaussianFieldOperator {
    let domain = if dim == 1 {
        Domain::interval(0.0, 3.0).unwrap()
    } else {
        Domain::new(vec![0.0, 0.0], vec![3.0, 3.0]).unwrap()
    };
    let n = if dim == 1 { 301 } else { 41 };
    GaussianFieldOperator::new(&domain, rng.random_range(0.05..0.3), n).unwrap()
}

pub fn random_observation(rng: &mut impl Rng, kind: ObservationKind, len: usize) -> ObservationVector {
    ObservationVector { kind, values: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

/// Experiment 1 observed only by its ten sensors closest to the reference
/// atoms, where the dipoles form.
pub fn miniature_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(EXP1).unwrap();
    let reference: Vec<f64> = cfg.reference.atoms.iter().map(|a| a.x[0]).collect();
    let gap = |x: f64| reference.iter().map(|r| (x - r).abs()).fold(f64::INFINITY, f64::min);
    let mut sensors: Vec<f64> = (0..30).map(|i| 20.0 * i as f64 / 29.0).collect();
    sensors.sort_by(|a, b| gap(*a).total_cmp(&gap(*b)));
    sensors.truncate(10);
    sensors.sort_by(f64::total_cmp);
    cfg.operator = OperatorConfig::GaussSensors {
        t: 0.045,
        sensors: SensorLayout::Points { points: sensors.into_iter().map(Point::new1).collect() },
    };
    cfg.validate().unwrap();
    cfg
}
