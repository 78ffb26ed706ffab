//! Long-orbit sampling of the attractor from Lebesgue-random seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use crate::leaf::Leaf;
use crate::maps::{BaseOrbit, MapModel, Point};

/// Skew orbits need this many steps before every branch bit of the leaf
/// history is determined by the orbit itself.
pub const HISTORY_BURN_IN: usize = 64;

#[derive(Debug, Clone)]
pub struct OrbitSampler {
    map: MapModel,
    pub point: Point,
    base: BaseOrbit,
}

impl OrbitSampler {
    pub fn new(map: &MapModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = BaseOrbit::new(rng.random(), rng.random());
        let point = if map.is_skew() {
            let r = rng.random::<f64>().sqrt();
            let a = TAU * rng.random::<f64>();
            [base.t(), r * a.cos(), r * a.sin()]
        } else {
            [rng.random(), rng.random(), 0.0]
        };
        let mut s = OrbitSampler {
            map: map.clone(),
            point,
            base,
        };
        if map.is_skew() {
            for _ in 0..HISTORY_BURN_IN {
                s.step();
            }
        }
        s
    }

    pub fn step(&mut self) -> Point {
        if self.map.is_skew() {
            let t = self.base.t();
            let y = self.map.evaluate_lift(&[t, self.point[1], self.point[2]]);
            self.base.step();
            self.point = [self.base.t(), y[1], y[2]];
        } else {
            let y = self.map.evaluate_lift(&self.point);
            self.point = self.map.reduce(&y);
        }
        self.point
    }

    /// Unstable leaf through the current point and the point's leaf coordinate.
    pub fn leaf(&self) -> (Leaf, f64) {
        if self.map.is_skew() {
            (
                Leaf::Skew {
                    history: self.base.history,
                },
                TAU * self.point[0],
            )
        } else {
            (
                Leaf::Line {
                    anchor: [self.point[0], self.point[1]],
                },
                0.0,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_orbit_point_lies_on_its_leaf() {
        let m = MapModel::mostly_contracting(0.25, 0.15).unwrap();
        let mut s = OrbitSampler::new(&m, 3);
        for _ in 0..500 {
            s.step();
        }
        let (leaf, th) = s.leaf();
        let q = leaf.point(&m, th);
        assert!(m.chart_distance(&s.point, &q) < 1e-12);
    }

    #[test]
    fn base_orbit_does_not_collapse() {
        let m = MapModel::solenoid(0.25).unwrap();
        let mut s = OrbitSampler::new(&m, 9);
        let mut mean = 0.0;
        for _ in 0..20000 {
            mean += s.step()[0];
        }
        assert!((mean / 20000.0 - 0.5).abs() < 0.02);
    }
}
