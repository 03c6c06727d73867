//! Synthetic ground-truth fields, the noisy sensor and the true safety split.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, Point};
use crate::rng::{self, Rng};

/// Shape of each source's contribution as a function of distance `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceForm {
    /// `A * exp(-r^2 / s)` with `s` the source spread.
    GaussianBump,
    /// `A * exp(-s * r)` with `s` the decay rate.
    ExponentialDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub center: Vec<f64>,
    pub amplitude: f64,
    /// Spread for bumps, decay rate for exponentials.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub dimension: usize,
    pub form: SourceForm,
    pub bounds: Bounds,
    pub sources: Vec<Source>,
}

impl FieldSpec {
    /// Two unit Gaussian bumps on the unit square.
    pub fn sim2d() -> Self {
        let bump = |x: f64, y: f64| Source {
            center: vec![x, y],
            amplitude: 1.0,
            scale: 0.08,
        };
        FieldSpec {
            dimension: 2,
            form: SourceForm::GaussianBump,
            bounds: Bounds::unit_square(),
            sources: vec![bump(0.25, 0.75), bump(0.75, 0.25)],
        }
    }

    /// Four exponentially decaying ground-level sources in a 10 m cube.
    pub fn sim3d() -> Self {
        let src = |x: f64, y: f64, a: f64| Source {
            center: vec![x, y, 0.0],
            amplitude: a,
            scale: 1.7,
        };
        FieldSpec {
            dimension: 3,
            form: SourceForm::ExponentialDecay,
            bounds: Bounds::cube(0.0, 10.0),
            sources: vec![
                src(2.0, 2.0, 40.0),
                src(2.0, 8.0, 20.0),
                src(8.0, 2.0, 20.0),
                src(8.0, 8.0, 40.0),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != self.bounds.dim() {
            return Err(Error::arg(format!(
                "field dimension {} does not match {}D bounds",
                self.dimension,
                self.bounds.dim()
            )));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.center.len() != self.dimension {
                return Err(Error::arg(format!(
                    "source {i} center has {} components, field is {}D",
                    s.center.len(),
                    self.dimension
                )));
            }
            if !(s.scale > 0.0 && s.scale.is_finite()) {
                return Err(Error::arg(format!("source {i} spread/decay must be > 0")));
            }
            if !s.amplitude.is_finite() || s.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::arg(format!("source {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    /// Field value without the domain check.
    pub fn value(&self, x: &Point) -> f64 {
        self.sources
            .iter()
            .map(|s| {
                let c = Point::from_slice(&s.center).unwrap_or_default();
                let r2 = x.dist2(&c);
                match self.form {
                    SourceForm::GaussianBump => s.amplitude * (-r2 / s.scale).exp(),
                    SourceForm::ExponentialDecay => s.amplitude * (-s.scale * r2.sqrt()).exp(),
                }
            })
            .sum()
    }

    pub fn source_points(&self) -> Vec<Point> {
        self.sources
            .iter()
            .filter_map(|s| Point::from_slice(&s.center).ok())
            .collect()
    }
}

pub fn eval_field(spec: &FieldSpec, x: &Point) -> Result<f64> {
    spec.bounds.check(x)?;
    Ok(spec.value(x))
}

/// Additive Gaussian sensor noise drawn from a dedicated seeded stream.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    noise_std: f64,
    rng: Rng,
}

impl MeasurementModel {
    pub fn new(noise_std: f64, seed: u64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::arg("noise_std must be finite and >= 0"));
        }
        Ok(MeasurementModel {
            noise_std,
            rng: rng::stream(seed, rng::NOISE_STREAM),
        })
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn measure(&mut self, spec: &FieldSpec, x: &Point) -> Result<f64> {
        let f = eval_field(spec, x)?;
        let z: f64 = StandardNormal.sample(&mut self.rng);
        Ok(f + self.noise_std * z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyThreshold {
    pub f_bar: f64,
}

impl SafetyThreshold {
    /// Checks that the threshold splits the sampled values non-trivially.
    pub fn validate_against(&self, values: &[f64]) -> Result<()> {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo < self.f_bar && self.f_bar < hi {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "threshold {} outside sampled field range ({lo}, {hi})",
                self.f_bar
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Safety {
    Safe,
    Unsafe,
}

pub fn true_safety(spec: &FieldSpec, threshold: &SafetyThreshold, x: &Point) -> Result<Safety> {
    Ok(if eval_field(spec, x)? > threshold.f_bar {
        Safety::Unsafe
    } else {
        Safety::Safe
    })
}

/// Largest central-difference gradient norm over `points`.
///
/// Differences use step `eps`; probes that would leave the domain fall back
/// to one-sided differences.
pub fn estimate_lipschitz(spec: &FieldSpec, points: &[Point], eps: f64) -> f64 {
    let b = &spec.bounds;
    let mut best = 0.0_f64;
    for p in points {
        let mut g2 = 0.0;
        for a in 0..spec.dimension {
            let mut hi = *p;
            let mut lo = *p;
            hi.0[a] = (p.0[a] + eps).min(b.max()[a]);
            lo.0[a] = (p.0[a] - eps).max(b.min()[a]);
            let span = hi.0[a] - lo.0[a];
            if span > 0.0 {
                let d = (spec.value(&hi) - spec.value(&lo)) / span;
                g2 += d * d;
            }
        }
        best = best.max(g2.sqrt());
    }
    best
}
