//! Run directories: the files an episode emits, their manifest, and the
//! plan / run / analyze commands built on top of them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{convergence_audit, info_loss, rmse_on_safe, ConvergenceReport, InfoReport};
use crate::config::ExperimentConfig;
use crate::detector::DetectedRegionSet;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::gp::Posterior;
use crate::planner::{mvs_select, nn_order, MeasurementPlan};
use crate::replanner::{region_records, run_episode, AbortRecord, Episode, Leg, Snapshot, StepLog};
use crate::safety::TestGrid;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const PLAN_INITIAL: &str = "plan_initial.csv";
pub const PLAN_FINAL: &str = "plan_final.csv";
pub const MEASUREMENTS: &str = "measurements.csv";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const REGIONS: &str = "regions.json";
pub const STEPS: &str = "steps.jsonl";
pub const SNAPSHOTS: &str = "snapshots.jsonl";
pub const ABORT: &str = "abort.json";
pub const ANALYSIS_DIR: &str = "analysis";
/// Interior margin used by `analyze` unless overridden.
pub const DEFAULT_ETA: f64 = 0.1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn axes(dim: usize) -> &'static [&'static str] {
    if dim == 3 {
        &["x", "y", "z"]
    } else {
        &["x", "y"]
    }
}

fn csv_bytes(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
    what: &str,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::format(what, e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| Error::format(what, e.to_string()))
}

fn coords(p: &Point, dim: usize) -> impl Iterator<Item = String> {
    p.coords(dim).into_iter().map(|c| c.to_string())
}

pub fn plan_csv(plan: &MeasurementPlan, dim: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    plan.write_csv(&mut buf, dim)?;
    Ok(buf)
}

/// One row per executed measurement.
pub fn measurements_csv(ep: &Episode, dim: usize) -> Result<Vec<u8>> {
    let mut header = vec!["t"];
    header.extend(axes(dim));
    header.extend(["value", "grid_index", "in_detected", "truly_unsafe"]);
    let rows = ep.logs.iter().zip(&ep.executed_grid).map(|(l, g)| {
        let mut r = vec![l.t.to_string()];
        r.extend(l.x_t.iter().map(|c| c.to_string()));
        r.extend([
            l.y_t.to_string(),
            g.to_string(),
            l.in_detected.to_string(),
            l.truly_unsafe.to_string(),
        ]);
        r
    });
    csv_bytes(&header, rows, MEASUREMENTS)
}

pub fn trajectory_csv(legs: &[Leg], dim: usize) -> Result<Vec<u8>> {
    let mut header = vec!["leg_index", "waypoint_index"];
    header.extend(axes(dim));
    let rows = legs.iter().flat_map(|leg| {
        leg.waypoints.iter().enumerate().map(move |(i, p)| {
            let mut r = vec![leg.index.to_string(), i.to_string()];
            r.extend(coords(p, dim));
            r
        })
    });
    csv_bytes(&header, rows, TRAJECTORY)
}

pub fn regions_json(set: &DetectedRegionSet, dim: usize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(&region_records(set, dim))
        .map_err(|e| Error::format(REGIONS, e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

pub fn steps_jsonl(logs: &[StepLog]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for l in logs {
        serde_json::to_writer(&mut out, l).map_err(|e| Error::format(STEPS, e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    t: usize,
    mean: Vec<f64>,
    variance: Vec<f64>,
}

pub fn snapshots_jsonl(snaps: &[Snapshot]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for s in snaps {
        let line = SnapshotLine {
            t: s.t,
            mean: s.posterior.mean.clone(),
            variance: s.posterior.variance.clone(),
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| Error::format(SNAPSHOTS, e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_snapshots(path: &Path) -> Result<Vec<Snapshot>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let s: SnapshotLine = serde_json::from_str(l)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            Ok(Snapshot {
                t: s.t,
                posterior: Posterior {
                    mean: s.mean,
                    variance: s.variance,
                },
            })
        })
        .collect()
}

/// Reads the coordinate columns of a CSV written by this module.
pub fn read_points_csv(path: &Path, dim: usize) -> Result<Vec<Point>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = rd
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let cols: Vec<usize> = axes(dim)
        .iter()
        .map(|a| {
            header
                .iter()
                .position(|h| h == *a)
                .ok_or_else(|| Error::format(path, format!("missing column `{a}`")))
        })
        .collect::<Result<_>>()?;
    let status = header.iter().position(|h| h == "status");
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if status.is_some_and(|s| rec.get(s) == Some("blocked")) {
            continue;
        }
        let mut p = Point::default();
        for (a, &c) in cols.iter().enumerate() {
            p.0[a] = rec.get(c).and_then(|v| v.parse().ok()).ok_or_else(|| {
                Error::format(path, format!("bad number in column `{}`", axes(dim)[a]))
            })?;
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub dimension: usize,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<AbortRecord>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::format(&path, format!("cannot read manifest: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    /// Checks every listed file against its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for f in &self.files {
            let path = dir.join(&f.path);
            let bytes = fs::read(&path).map_err(|e| {
                Error::format(&path, format!("listed in manifest but unreadable: {e}"))
            })?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(Error::format(
                    &path,
                    "content hash does not match the manifest",
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, rel: &str) -> bool {
        self.files.iter().any(|f| f.path == rel)
    }
}

/// Writes files under a root directory and records them for the manifest.
struct RunWriter {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl RunWriter {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunWriter {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }
}

fn json_bytes<T: Serialize>(v: &T, what: &str) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| Error::format(what, e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Fill distance.
    pub h: f64,
    /// Separation radius.
    pub q: f64,
    /// Number of grid points.
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSummary {
    pub points: usize,
    pub geometry: GridGeometry,
}

/// Offline plan: maximum-variance picks ordered as a nearest-neighbour tour.
pub fn cmd_plan(cfg: &ExperimentConfig, out: &Path) -> Result<PlanSummary> {
    let ep = cfg.resolve()?;
    let grid = TestGrid::uniform(ep.field.bounds.clone(), ep.grid_points_per_axis)?;
    let picks = mvs_select(&ep.kernel, &grid, ep.budget, &ep.start)?;
    let plan = nn_order(&grid, &picks, &ep.start);
    let geometry = GridGeometry {
        h: grid.fill_distance(),
        q: grid.separation(),
        m: grid.len(),
    };
    let mut w = RunWriter::new(out)?;
    w.put("plan.csv", &plan_csv(&plan, grid.dim())?)?;
    w.put("geometry.json", &json_bytes(&geometry, "geometry.json")?)?;
    Ok(PlanSummary {
        points: plan.len(),
        geometry,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub regions: usize,
    pub relocations: usize,
    pub abort: Option<AbortRecord>,
    pub manifest: Manifest,
}

/// Writes every output of a finished (or aborted) episode plus the manifest.
pub fn write_run(cfg: &ExperimentConfig, ep: &Episode, out: &Path) -> Result<Manifest> {
    let dim = ep.grid.dim();
    let config_text = cfg.to_toml();
    let mut w = RunWriter::new(out)?;
    w.put(CONFIG, config_text.as_bytes())?;
    w.put(PLAN_INITIAL, &plan_csv(&ep.initial_plan, dim)?)?;
    w.put(PLAN_FINAL, &plan_csv(&ep.plan, dim)?)?;
    w.put(MEASUREMENTS, &measurements_csv(ep, dim)?)?;
    w.put(TRAJECTORY, &trajectory_csv(&ep.trajectory, dim)?)?;
    w.put(REGIONS, &regions_json(&ep.regions, dim)?)?;
    w.put(STEPS, &steps_jsonl(&ep.logs)?)?;
    if !ep.snapshots.is_empty() {
        w.put(SNAPSHOTS, &snapshots_jsonl(&ep.snapshots)?)?;
    }
    for map in &ep.maps {
        let stem = format!("maps/g_{:04}", map.t);
        w.put(&format!("{stem}.pgm"), &map.to_pgm())?;
        w.put(
            &format!("{stem}.json"),
            &json_bytes(&map.sidecar(), "map sidecar")?,
        )?;
    }
    if let Some(a) = &ep.abort {
        w.put(ABORT, &json_bytes(a, ABORT)?)?;
    }
    let manifest = Manifest {
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: cfg.seed,
        dimension: dim,
        steps: ep.logs.len(),
        abort: ep.abort.clone(),
        files: w.files,
    };
    fs::write(out.join(MANIFEST), json_bytes(&manifest, MANIFEST)?)
        .map_err(|e| Error::io(out.join(MANIFEST), e))?;
    Ok(manifest)
}

/// Runs one episode and writes its outputs. An abort is reported in the
/// summary; the partial outputs stay on disk.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let ep_cfg = cfg.resolve()?;
    let ep = run_episode(&ep_cfg)?;
    let manifest = write_run(cfg, &ep, out)?;
    Ok(RunSummary {
        steps: ep.logs.len(),
        regions: ep.regions.count(),
        relocations: ep.relocation_count(),
        abort: ep.abort,
        manifest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub eta: f64,
    pub event_held: bool,
    pub soundness_violations: usize,
    pub interior_count: usize,
    pub interior_certified: usize,
    pub t_star: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSummary {
    pub info: InfoReport,
    pub convergence: Option<ConvergenceSummary>,
    pub files: Vec<PathBuf>,
}

/// Post-hoc reports for a run directory, written to its `analysis/`
/// subdirectory. Run outputs are only read.
pub fn cmd_analyze(run_dir: &Path, eta: f64) -> Result<AnalysisSummary> {
    let manifest = Manifest::load(run_dir)?;
    manifest.verify(run_dir)?;
    for rel in [CONFIG, PLAN_INITIAL, MEASUREMENTS] {
        if !manifest.contains(rel) {
            return Err(Error::format(
                run_dir.join(MANIFEST),
                format!("manifest does not list `{rel}`"),
            ));
        }
    }
    let cfg = ExperimentConfig::load(&run_dir.join(CONFIG))?;
    let ep = cfg.resolve()?;
    let dim = manifest.dimension;
    let grid = TestGrid::uniform(ep.field.bounds.clone(), ep.grid_points_per_axis)?;

    let planned = read_points_csv(&run_dir.join(PLAN_INITIAL), dim)?;
    let executed = read_points_csv(&run_dir.join(MEASUREMENTS), dim)?;
    let info = if executed.len() == planned.len() {
        info_loss(&ep.kernel, &planned, &executed, None)?
    } else {
        // Aborted run: compare against the plan prefix of equal size.
        log::warn!(
            "run executed {} of {} planned points",
            executed.len(),
            planned.len()
        );
        info_loss(
            &ep.kernel,
            &planned[..executed.len().min(planned.len())],
            &executed[..executed.len().min(planned.len())],
            None,
        )?
    };

    let dir = run_dir.join(ANALYSIS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        files.push(p);
        Ok(())
    };
    put("info.json", json_bytes(&info, "info.json")?)?;
    let spectra = (0..info.eig_g.len().max(info.eig_s.len())).map(|i| {
        vec![
            i.to_string(),
            info.eig_g.get(i).map(|v| v.to_string()).unwrap_or_default(),
            info.eig_s.get(i).map(|v| v.to_string()).unwrap_or_default(),
        ]
    });
    put(
        "spectra.csv",
        csv_bytes(&["i", "lambda_g", "lambda_s"], spectra, "spectra.csv")?,
    )?;

    let convergence = if manifest.contains(SNAPSHOTS) {
        let snaps = read_snapshots(&run_dir.join(SNAPSHOTS))?;
        let f_bar = ep.threshold.f_bar;
        let report: ConvergenceReport =
            convergence_audit(&snaps, &ep.field, f_bar, &ep.schedule, &grid, eta)?;
        let rmse = rmse_on_safe(&snaps, &ep.field, f_bar, &grid)?;
        put("convergence.json", json_bytes(&report, "convergence.json")?)?;
        let rows = rmse
            .iter()
            .map(|r| vec![r.t.to_string(), r.rmse.to_string()]);
        put("rmse.csv", csv_bytes(&["t", "rmse"], rows, "rmse.csv")?)?;
        Some(ConvergenceSummary {
            eta,
            event_held: report.event_held,
            soundness_violations: report.soundness_violations,
            interior_count: report.interior_count,
            interior_certified: report.interior_certified(),
            t_star: report.t_star,
        })
    } else {
        log::warn!("run has no posterior snapshots; convergence audit skipped");
        None
    };
    Ok(AnalysisSummary {
        info,
        convergence,
        files,
    })
}
