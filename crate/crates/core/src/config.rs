//! Experiment configuration files (TOML) and their validation.

use serde::{Deserialize, Serialize};

use crate::detector::{ComponentParams, DetectorParams, HoughParams};
use crate::error::{Error, Result};
use crate::field::{estimate_lipschitz, FieldSpec, SafetyThreshold};
use crate::geometry::Point;
use crate::gp::KernelParams;
use crate::replanner::{EpisodeConfig, SamplingMode};
use crate::rrtstar::PlannerParams;
use crate::safety::{ConfidenceSchedule, PiRule, TestGrid};

const SIM2D: &str = include_str!("../presets/sim2d.toml");
const SIM3D: &str = include_str!("../presets/sim3d.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Preset { preset: String },
    Inline(FieldSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    #[serde(flatten)]
    pub source: FieldSource,
    pub noise_std: f64,
    pub f_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub alpha: f64,
    pub length_scale: f64,
    /// Regression nugget; defaults to `noise_std^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub delta: f64,
    #[serde(default)]
    pub pi_rule: PiRule,
    /// Fixed Lipschitz constant; estimated from the field when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub budget: usize,
    pub start: Vec<f64>,
    pub grid_points_per_axis: usize,
    #[serde(default = "yes")]
    pub plan_paths: bool,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub mode: SamplingMode,
    pub field: FieldConfig,
    pub kernel: KernelConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub hough: HoughParams,
    #[serde(default)]
    pub components: ComponentParams,
    #[serde(default)]
    pub rrt: PlannerParams,
    #[serde(default)]
    pub require_mean_evidence: bool,
}

fn yes() -> bool {
    true
}

fn syntax_error(text: &str, e: toml::de::Error) -> Error {
    let path = e
        .span()
        .map(|s| format!("line {}", text[..s.start].matches('\n').count() + 1))
        .unwrap_or_else(|| "<root>".into());
    Error::config(path, e.message().trim().to_string())
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "sim2d" => SIM2D,
            "sim3d" => SIM3D,
            other => return Err(Error::config("preset", format!("unknown preset `{other}`"))),
        };
        Self::parse(text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| syntax_error(text, e))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn field_spec(&self) -> Result<FieldSpec> {
        match &self.field.source {
            FieldSource::Preset { preset } => match preset.as_str() {
                "sim2d" => Ok(FieldSpec::sim2d()),
                "sim3d" => Ok(FieldSpec::sim3d()),
                other => Err(Error::config(
                    "field.preset",
                    format!("unknown field preset `{other}`"),
                )),
            },
            FieldSource::Inline(spec) => Ok(spec.clone()),
        }
    }

    pub fn kernel_params(&self) -> Result<KernelParams> {
        let noise_var = self
            .kernel
            .noise_var
            .unwrap_or(self.field.noise_std * self.field.noise_std);
        let k = KernelParams {
            alpha: self.kernel.alpha,
            length_scale: self.kernel.length_scale,
            noise_var,
        };
        k.validate()
            .map_err(|e| Error::config("kernel", e.to_string()))?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let field = self.field_spec()?;
        field
            .validate()
            .map_err(|e| Error::config("field", e.to_string()))?;
        if !(self.field.noise_std >= 0.0 && self.field.noise_std.is_finite()) {
            return Err(Error::config("field.noise_std", "must be finite and >= 0"));
        }
        if !self.field.f_bar.is_finite() {
            return Err(Error::config("field.f_bar", "must be finite"));
        }
        if self.kernel.noise_var.is_none() && self.field.noise_std == 0.0 {
            return Err(Error::config(
                "kernel.noise_var",
                "required when field.noise_std is 0",
            ));
        }
        self.kernel_params()?;
        let start =
            Point::from_slice(&self.start).map_err(|e| Error::config("start", e.to_string()))?;
        if self.start.len() != field.dimension || !field.bounds.contains(&start) {
            return Err(Error::config(
                "start",
                "must be a point inside the field bounds",
            ));
        }
        if self.grid_points_per_axis < 2 {
            return Err(Error::config("grid_points_per_axis", "must be >= 2"));
        }
        let m = self.grid_points_per_axis.pow(field.dimension as u32);
        if let SamplingMode::Planned = self.mode {
            if self.budget > m {
                return Err(Error::config(
                    "budget",
                    format!("budget {} exceeds the {m} grid points", self.budget),
                ));
            }
        }
        let sched = ConfidenceSchedule {
            delta: self.schedule.delta,
            pi_rule: self.schedule.pi_rule,
            lipschitz: self.schedule.lipschitz.unwrap_or(1.0),
        };
        sched
            .validate()
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        if field.dimension == 2 {
            self.hough
                .validate()
                .map_err(|e| Error::config("hough", e.to_string()))?;
        }
        if !(self.components.radius_min >= 0.0
            && self.components.radius_min < self.components.radius_max)
        {
            return Err(Error::config(
                "components",
                "need 0 <= radius_min < radius_max",
            ));
        }
        self.rrt
            .validate()
            .map_err(|e| Error::config("rrt", e.to_string()))?;
        Ok(())
    }

    /// Builds the episode configuration, estimating the Lipschitz constant
    /// when none is given.
    pub fn resolve(&self) -> Result<EpisodeConfig> {
        self.validate()?;
        let field = self.field_spec()?;
        let grid = TestGrid::uniform(field.bounds.clone(), self.grid_points_per_axis)?;
        let lipschitz = match self.schedule.lipschitz {
            Some(l) => l,
            None => {
                let eps = 1e-3 * grid.spacing(0);
                let l = estimate_lipschitz(&field, grid.points(), eps);
                log::info!("estimated Lipschitz constant {l:.4}");
                l
            }
        };
        let threshold = SafetyThreshold {
            f_bar: self.field.f_bar,
        };
        let values: Vec<f64> = grid.points().iter().map(|p| field.value(p)).collect();
        threshold
            .validate_against(&values)
            .map_err(|e| Error::config("field.f_bar", e.to_string()))?;
        let schedule = ConfidenceSchedule {
            delta: self.schedule.delta,
            pi_rule: self.schedule.pi_rule,
            lipschitz,
        };
        schedule
            .validate()
            .map_err(|e| Error::config("schedule.lipschitz", e.to_string()))?;
        let mut planner = self.rrt.clone();
        planner.seed = self.seed;
        Ok(EpisodeConfig {
            start: Point::from_slice(&self.start)?,
            kernel: self.kernel_params()?,
            noise_std: self.field.noise_std,
            schedule,
            grid_points_per_axis: self.grid_points_per_axis,
            budget: self.budget,
            detector: DetectorParams {
                hough: self.hough.clone(),
                components: self.components.clone(),
                require_mean_evidence: self.require_mean_evidence,
            },
            planner,
            seed: self.seed,
            mode: self.mode,
            plan_paths: self.plan_paths,
            snapshot_every: self.snapshot_every,
            threshold,
            field,
        })
    }
}
