//! USBL acoustic fixes: horizontal offset only, inside the transducer cone.

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UsblParams {
    pub ping_period: f64,
    /// Horizontal 1-sigma per axis, m.
    pub sigma: f64,
    pub dropout: f64,
    /// Diameter of the cone where it meets the surface, m.
    pub cone_diameter: f64,
    pub station_depth: f64,
}

impl Default for UsblParams {
    fn default() -> Self {
        Self {
            ping_period: 2.0,
            sigma: 0.5,
            dropout: 0.1,
            cone_diameter: 100.0,
            station_depth: 90.0,
        }
    }
}

impl UsblParams {
    pub fn cone_half_angle(&self) -> f64 {
        (0.5 * self.cone_diameter / self.station_depth).atan()
    }

    /// True if a vehicle at `offset_ne` from the station axis and `height`
    /// metres above the station is inside the acoustic cone.
    pub fn in_cone(&self, offset_ne: [f64; 2], height: f64) -> bool {
        if height < 0.0 {
            return false;
        }
        offset_ne[0].hypot(offset_ne[1]) <= height * self.cone_half_angle().tan()
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.ping_period > 0.0 && self.sigma >= 0.0) {
            return Err("USBL ping period must be positive and sigma non-negative");
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err("USBL dropout must lie in [0, 1]");
        }
        if !(self.cone_diameter > 0.0 && self.station_depth > 0.0) {
            return Err("USBL cone geometry must be positive");
        }
        Ok(())
    }
}

/// Station-to-vehicle horizontal offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsblFix {
    pub north: f64,
    pub east: f64,
    pub t: f64,
}

/// One ping. `vehicle` and `station` are world NED positions.
pub fn sample_usbl<R: Rng + ?Sized>(
    vehicle: [f64; 3],
    station: [f64; 3],
    params: &UsblParams,
    t: f64,
    rng: &mut R,
) -> Option<UsblFix> {
    let off = [vehicle[0] - station[0], vehicle[1] - station[1]];
    if !params.in_cone(off, station[2] - vehicle[2]) {
        return None;
    }
    if params.dropout > 0.0 && rng.random::<f64>() < params.dropout {
        return None;
    }
    Some(UsblFix {
        north: off[0] + gaussian(rng, params.sigma),
        east: off[1] + gaussian(rng, params.sigma),
        t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact() -> UsblParams {
        UsblParams {
            sigma: 0.0,
            dropout: 0.0,
            ..UsblParams::default()
        }
    }

    #[test]
    fn directly_above_station() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fix = sample_usbl([0.0, 0.0, 0.0], [0.0, 0.0, 90.0], &exact(), 4.0, &mut rng).unwrap();
        assert_eq!((fix.north, fix.east, fix.t), (0.0, 0.0, 4.0));
    }

    #[test]
    fn outside_cone_at_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Cone radius at the surface is 50 m.
        assert!(sample_usbl([60.0, 0.0, 0.0], [0.0, 0.0, 90.0], &exact(), 0.0, &mut rng).is_none());
        assert!(sample_usbl([49.0, 0.0, 0.0], [0.0, 0.0, 90.0], &exact(), 0.0, &mut rng).is_some());
    }

    #[test]
    fn half_angle_from_cone() {
        let p = UsblParams::default();
        assert_close!(p.cone_half_angle().tan(), 50.0 / 90.0, 1e-12);
    }

    #[test]
    fn noise_std() {
        let p = UsblParams {
            dropout: 0.0,
            ..UsblParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: std::vec::Vec<f64> = (0..10_000)
            .map(|i| {
                sample_usbl([3.0, -2.0, 10.0], [0.0, 0.0, 90.0], &p, i as f64, &mut rng)
                    .unwrap()
                    .north
            })
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.45..=0.55).contains(&sd), "{sd}");
        assert_close!(mean, 3.0, 0.05);
    }

    #[test]
    fn dropout_rate() {
        let p = UsblParams {
            dropout: 0.3,
            ..UsblParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let got = (0..10_000)
            .filter(|_| sample_usbl([0.0; 3], [0.0, 0.0, 90.0], &p, 0.0, &mut rng).is_some())
            .count();
        assert!((6700..=7300).contains(&got), "{got}");
    }
}
