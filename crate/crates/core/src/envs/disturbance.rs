//! Disturbance and prediction-noise generators.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// One piece of a time-varying noise schedule: `sigma` applies for `start <= t < end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSegment {
    pub start: usize,
    pub end: usize,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    IidGaussian {
        sigma: f64,
    },
    /// `w_{t+1} = (1 − θ·dt) w_t + σ √dt ξ_t`, started from its stationary law.
    OrnsteinUhlenbeck {
        theta_ou: f64,
        sigma: f64,
        dt: f64,
    },
    /// Gaussian with a step-dependent standard deviation; zero outside every segment.
    PiecewiseNoiseSchedule {
        segments: Vec<NoiseSegment>,
    },
    /// Independent coordinates uniform on `[−bound, bound]`.
    UniformBox {
        bound: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    #[serde(default)]
    pub seed: u64,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl DisturbanceKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            DisturbanceKind::IidGaussian { sigma } if !(sigma >= 0.0) => {
                bad(format!("sigma must be >= 0, got {sigma}"))
            }
            DisturbanceKind::OrnsteinUhlenbeck { theta_ou, sigma, dt } => {
                if !(sigma >= 0.0) {
                    bad(format!("sigma must be >= 0, got {sigma}"))
                } else if !(theta_ou * dt > 0.0 && theta_ou * dt < 2.0) {
                    bad(format!("OU needs 0 < theta_ou*dt < 2, got {}", theta_ou * dt))
                } else {
                    Ok(())
                }
            }
            DisturbanceKind::PiecewiseNoiseSchedule { ref segments } => {
                match segments.iter().find(|s| !(s.sigma >= 0.0) || s.start > s.end) {
                    Some(s) => bad(format!("invalid noise segment {s:?}")),
                    None => Ok(()),
                }
            }
            DisturbanceKind::UniformBox { bound } if !(bound >= 0.0) => bad(format!("bound must be >= 0, got {bound}")),
            _ => Ok(()),
        }
    }

    /// Stationary per-coordinate variance for the OU kind.
    pub fn ou_stationary_variance(theta_ou: f64, sigma: f64, dt: f64) -> f64 {
        sigma * sigma / (2.0 * theta_ou - theta_ou * theta_ou * dt)
    }

    /// Draws `len` vectors of dimension `dim` from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
        match *self {
            DisturbanceKind::IidGaussian { sigma } => (0..len)
                .map(|_| (0..dim).map(|_| sigma * normal(rng)).collect())
                .collect(),
            DisturbanceKind::OrnsteinUhlenbeck { theta_ou, sigma, dt } => {
                let phi = 1.0 - theta_ou * dt;
                let step_sd = sigma * dt.sqrt();
                let stationary_sd = Self::ou_stationary_variance(theta_ou, sigma, dt).sqrt();
                let mut w: Vec<f64> = (0..dim).map(|_| stationary_sd * normal(rng)).collect();
                let mut out = Vec::with_capacity(len);
                for _ in 0..len {
                    out.push(w.clone());
                    for wi in w.iter_mut() {
                        *wi = phi * *wi + step_sd * normal(rng);
                    }
                }
                out
            }
            DisturbanceKind::PiecewiseNoiseSchedule { ref segments } => (0..len)
                .map(|t| {
                    let sigma = segments
                        .iter()
                        .find(|s| s.start <= t && t < s.end)
                        .map_or(0.0, |s| s.sigma);
                    (0..dim).map(|_| sigma * normal(rng)).collect()
                })
                .collect(),
            DisturbanceKind::UniformBox { bound } => (0..len)
                .map(|_| {
                    (0..dim)
                        .map(|_| {
                            if bound > 0.0 {
                                rng.random_range(-bound..=bound)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl DisturbanceSpec {
    pub fn new(kind: DisturbanceKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Realization of length `len`, drawn from the spec's own seeded stream.
    pub fn generate(&self, len: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
        self.kind.validate()?;
        let mut rng: SimRng = rng::stream(self.seed, "disturbance");
        Ok(self.kind.sample(len, dim, &mut rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_lag_one_autocorrelation() {
        let (theta_ou, dt) = (0.5, 0.1);
        let spec = DisturbanceSpec::new(
            DisturbanceKind::OrnsteinUhlenbeck {
                theta_ou,
                sigma: 1.0,
                dt,
            },
            3,
        );
        let w: Vec<f64> = spec.generate(100_000, 1).unwrap().into_iter().map(|v| v[0]).collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let cov = w.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum::<f64>();
        assert!((cov / var - (1.0 - theta_ou * dt)).abs() < 0.05, "{}", cov / var);
    }

    #[test]
    fn piecewise_schedule_switches() {
        let spec = DisturbanceSpec::new(
            DisturbanceKind::PiecewiseNoiseSchedule {
                segments: vec![
                    NoiseSegment {
                        start: 0,
                        end: 1000,
                        sigma: 2.0,
                    },
                    NoiseSegment {
                        start: 1000,
                        end: 2000,
                        sigma: 0.02,
                    },
                ],
            },
            1,
        );
        let w = spec.generate(2500, 1).unwrap();
        let rms =
            |r: std::ops::Range<usize>| (w[r.clone()].iter().map(|v| v[0] * v[0]).sum::<f64>() / r.len() as f64).sqrt();
        assert!((rms(0..1000) - 2.0).abs() < 0.15);
        assert!((rms(1000..2000) - 0.02).abs() < 0.0015);
        assert_eq!(rms(2000..2500), 0.0);
    }

    #[test]
    fn uniform_box_is_bounded() {
        let w = DisturbanceSpec::new(DisturbanceKind::UniformBox { bound: 0.3 }, 9)
            .generate(1000, 3)
            .unwrap();
        assert!(w.iter().flatten().all(|v| v.abs() <= 0.3));
    }

    #[test]
    fn invalid_specs_rejected() {
        let ou = DisturbanceKind::OrnsteinUhlenbeck {
            theta_ou: 30.0,
            sigma: 1.0,
            dt: 0.1,
        };
        assert!(ou.validate().is_err());
        assert!(DisturbanceKind::IidGaussian { sigma: -1.0 }.validate().is_err());
    }

    #[test]
    fn same_seed_same_realization() {
        let spec = DisturbanceSpec::new(DisturbanceKind::IidGaussian { sigma: 1.0 }, 77);
        assert_eq!(spec.generate(50, 2).unwrap(), spec.generate(50, 2).unwrap());
    }
}
