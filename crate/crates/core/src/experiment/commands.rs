//! The `fit-kernel`, `register`, `export-fields` and `check` drivers.
//!
//! Every command works in `output_dir/run-<hash>`, where the hash covers the
//! fields that change numerical results (ladder, measure, kernel, shapes,
//! steps, weight and optimizer). Export and threshold settings can therefore
//! be overridden without refitting or re-registering. Each command rewrites
//! `manifest.json` with the SHA-256 of every file in the run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BackendChoice, ExperimentConfig};
use super::shapes::diameter;
use crate::error::{Error, Result};
use crate::fit::{
    certify_pairwise_positivity, fit_kernel_table, FitOptions, KernelTable, PositivityReport,
};
use crate::flow::{
    integrate_forward, residual_composition_error, residual_maps, transport_grid, transport_points,
    DeformationField, FlowTrajectory, Grid2, LandmarkSystem, ResidualCheck,
};
use crate::kernel::{KernelBackend, MultiscaleKernel};
use crate::ladder::{GaussianScaleFamily, ScaleMeasure};
use crate::registration::{optimize, Objective, RegistrationRecord, StopReason};
use crate::scale_kernels::{sum_dirac_node_spectrum, DiracKernel, IntegratedDiracKernel};
use crate::spectral::{
    compute_spectral_table, default_xi_max, SpectralGrid, SpectralKernel, SpectralTable,
    TabulatedKernel,
};

pub const KERNEL_TABLE_FILE: &str = "kernel_table.bin";
pub const KERNEL_CSV_FILE: &str = "kernel_table.csv";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const CONTROLS_FILE: &str = "controls.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FIELDS_SUMMARY_FILE: &str = "fields_summary.json";
pub const CHECK_FILE: &str = "check_report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// SHA-256 over the result-determining part of the config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let key = serde_json::json!({
        "version": cfg.version,
        "ladder": cfg.ladder,
        "measure": cfg.measure,
        "kernel": cfg.kernel,
        "base": cfg.base,
        "steps": cfg.steps,
        "weight": cfg.weight,
        "optimizer": cfg.optimizer,
    });
    hex(&Sha256::digest(key.to_string().as_bytes()))
}

pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .join(format!("run-{}", &config_hash(cfg)[..12]))
}

fn prepare_run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json())?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    /// Relative path to SHA-256, sorted by path.
    pub files: BTreeMap<String, String>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path
            .strip_prefix(root)
            .map(|p| p != Path::new(MANIFEST_FILE))
            .unwrap_or(false)
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Rewrites the manifest from the current contents of the run directory.
pub fn write_manifest(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    let mut paths = Vec::new();
    collect_files(dir, dir, &mut paths)?;
    let mut files = BTreeMap::new();
    for p in paths {
        let rel = p
            .strip_prefix(dir)
            .expect("collected under dir")
            .to_string_lossy()
            .replace('\\', "/");
        files.insert(rel, hex(&Sha256::digest(std::fs::read(&p)?)));
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_hash: config_hash(cfg),
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Spectra of the configured measure on the configured frequency grid.
pub fn spectral_table(cfg: &ExperimentConfig) -> Result<SpectralTable> {
    let ladder = cfg.ladder()?;
    let grid = SpectralGrid::uniform(cfg.kernel.frequencies, default_xi_max(&ladder), 2)?;
    match cfg.measure {
        ScaleMeasure::Lebesgue { sigma } => compute_spectral_table(&ladder, sigma, &grid),
        ScaleMeasure::SumDirac { w1, w2 } => {
            let family = GaussianScaleFamily::new(ladder.clone(), 2, cfg.ladder.profile);
            SpectralTable::tabulate(&ladder, f64::NAN, &grid, |xi| {
                Ok(sum_dirac_node_spectrum(&family, w1, w2, xi))
            })
        }
        ScaleMeasure::Dirac { .. } => Err(Error::Config("Dirac measures are not fitted".into())),
    }
}

/// Numerical inverse transform of the configured measure's spectra.
pub fn spectral_kernel(cfg: &ExperimentConfig) -> Result<SpectralKernel> {
    let ladder = cfg.ladder()?;
    match cfg.measure {
        ScaleMeasure::Lebesgue { sigma } => SpectralKernel::lebesgue(ladder, sigma, 2),
        ScaleMeasure::SumDirac { w1, w2 } => {
            let family = GaussianScaleFamily::new(ladder.clone(), 2, cfg.ladder.profile);
            let xi_max = default_xi_max(&ladder);
            SpectralKernel::new(ladder, 2, xi_max, KernelBackend::SpectralTable, move |xi| {
                Ok(sum_dirac_node_spectrum(&family, w1, w2, xi))
            })
        }
        ScaleMeasure::Dirac { .. } => {
            Err(Error::Config("Dirac measures have a closed form".into()))
        }
    }
}

pub fn fit_table(cfg: &ExperimentConfig) -> Result<KernelTable> {
    let options = FitOptions {
        basis_len: cfg.kernel.basis_len,
        pairs: cfg.kernel.pairs.clone(),
        interpolate: cfg.kernel.interpolate,
    };
    fit_kernel_table(&spectral_table(cfg)?, &options)
}

/// The configured evaluator; a fitted table is read from the run directory
/// when present and fitted (and saved) otherwise.
pub fn build_kernel(cfg: &ExperimentConfig, dir: &Path) -> Result<Box<dyn MultiscaleKernel>> {
    let ladder = cfg.ladder()?;
    let family = GaussianScaleFamily::new(ladder.clone(), 2, cfg.ladder.profile);
    Ok(match cfg.kernel.backend {
        BackendChoice::ClosedForm => Box::new(DiracKernel::new(family, cfg.measure)?),
        BackendChoice::IntegratedDirac => Box::new(IntegratedDiracKernel::new(family)),
        BackendChoice::Spectral => Box::new(spectral_kernel(cfg)?),
        BackendChoice::Tabulated => {
            Box::new(TabulatedKernel::from_spectral(&spectral_kernel(cfg)?)?)
        }
        BackendChoice::Fitted => {
            let path = dir.join(KERNEL_TABLE_FILE);
            if path.exists() {
                Box::new(KernelTable::read_binary(&path)?)
            } else {
                let table = fit_table(cfg)?;
                save_table(&table, dir)?;
                Box::new(table)
            }
        }
    })
}

fn save_table(table: &KernelTable, dir: &Path) -> Result<()> {
    table.write_binary(&dir.join(KERNEL_TABLE_FILE))?;
    table.write_csv(&dir.join(KERNEL_CSV_FILE))?;
    table.write_report(&dir.join(FIT_REPORT_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub run_dir: PathBuf,
    /// `false` for Dirac measures, whose kernels have a closed form.
    pub fitted: bool,
    pub nodes: usize,
    pub fitted_pairs: usize,
    pub max_relative_residual: f64,
    /// Largest real-space gap between the fitted table and the quadrature
    /// kernel over node pairs, relative to `sqrt(kappa_kk(0) kappa_ll(0))`.
    pub max_spatial_deviation: f64,
}

/// Real-space gap between a fitted table and the reference kernel, sampled
/// at 64 radii on `[0, 3 s2]` for every fitted pair.
pub fn spatial_deviation(table: &KernelTable, reference: &dyn MultiscaleKernel) -> Result<f64> {
    let nodes = table.ladder.nodes();
    let r_max = 3.0 * nodes.last().copied().unwrap_or(1.0);
    let mut worst = 0.0f64;
    for (k, l) in table.fitted_pairs() {
        let (lam, mu) = (nodes[k], nodes[l]);
        let scale =
            (reference.radial(lam, lam, 0.0)?.value * reference.radial(mu, mu, 0.0)?.value).sqrt();
        for i in 0..64 {
            let r2 = (r_max * i as f64 / 63.0).powi(2);
            let gap =
                (table.radial(lam, mu, r2)?.value - reference.radial(lam, mu, r2)?.value).abs();
            worst = worst.max(gap / scale);
        }
    }
    Ok(worst)
}

/// Fits the Gaussian-basis table for the configured measure and writes it
/// with its CSV dump and fit report. Dirac measures need no fit. Fails with
/// [`Error::Threshold`] after writing if a pair misses the residual bound.
pub fn cmd_fit_kernel(cfg: &ExperimentConfig) -> Result<FitSummary> {
    let dir = prepare_run(cfg)?;
    let nodes = cfg.ladder()?.len();
    if matches!(cfg.measure, ScaleMeasure::Dirac { .. }) {
        write_manifest(cfg, &dir)?;
        return Ok(FitSummary {
            run_dir: dir,
            fitted: false,
            nodes,
            fitted_pairs: 0,
            max_relative_residual: 0.0,
            max_spatial_deviation: 0.0,
        });
    }
    let table = fit_table(cfg)?;
    save_table(&table, &dir)?;
    write_manifest(cfg, &dir)?;
    let reference = TabulatedKernel::from_spectral(&spectral_kernel(cfg)?)?;
    let summary = FitSummary {
        run_dir: dir,
        fitted: true,
        nodes,
        fitted_pairs: table.report.pairs.len(),
        max_relative_residual: table.report.max_relative_residual,
        max_spatial_deviation: spatial_deviation(&table, &reference)?,
    };
    if summary.max_relative_residual > cfg.kernel.max_residual {
        return Err(Error::Threshold(format!(
            "kernel fit residual {:.3e} exceeds {:.3e} (see {FIT_REPORT_FILE})",
            summary.max_relative_residual, cfg.kernel.max_residual
        )));
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub scale: f64,
    pub landmarks: usize,
    pub initial_rmse: f64,
    pub rmse: f64,
    pub target_diameter: f64,
    pub rmse_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterSummary {
    pub name: String,
    pub run_dir: PathBuf,
    pub steps: usize,
    pub weight: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub converged: bool,
    pub initial_objective: f64,
    pub objective: f64,
    pub energy: f64,
    pub matching: f64,
    pub groups: Vec<GroupSummary>,
}

fn group_diameters(system: &LandmarkSystem) -> Vec<f64> {
    system
        .groups
        .iter()
        .map(|g| diameter(&g.targets.iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>()))
        .collect()
}

/// Optimizes the controls and writes `controls.json`, `history.csv` and
/// `summary.json`.
pub fn cmd_register(cfg: &ExperimentConfig) -> Result<RegisterSummary> {
    let dir = prepare_run(cfg)?;
    let kernel = build_kernel(cfg, &dir)?;
    let system = cfg.landmark_system()?;
    system.check_ladder(&cfg.ladder()?)?;
    let objective = Objective::new(kernel.as_ref(), &system, cfg.steps)?;
    let init = objective.zero_controls();
    let start = objective.evaluate(&init)?;
    let result = optimize(&objective, &init, &cfg.optimizer)?;

    RegistrationRecord {
        system: system.clone(),
        controls: result.controls.clone(),
    }
    .write_json(&dir.join(CONTROLS_FILE))?;
    result.write_history_csv(&dir.join(HISTORY_FILE))?;
    let rmse0 = start.group_rmse(&system);
    let rmse = result.evaluation.group_rmse(&system);
    let groups = system
        .groups
        .iter()
        .zip(group_diameters(&system))
        .enumerate()
        .map(|(g, (group, diam))| GroupSummary {
            scale: group.scale,
            landmarks: group.points.len(),
            initial_rmse: rmse0[g],
            rmse: rmse[g],
            target_diameter: diam,
            rmse_fraction: if diam > 0.0 { rmse[g] / diam } else { rmse[g] },
        })
        .collect();
    let summary = RegisterSummary {
        name: cfg.name.clone(),
        run_dir: dir.clone(),
        steps: cfg.steps,
        weight: cfg.weight,
        iterations: result.iterations(),
        stop: result.stop,
        converged: result.converged(),
        initial_objective: start.value,
        objective: result.evaluation.value,
        energy: result.evaluation.energy,
        matching: result.evaluation.matching,
        groups,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    write_manifest(cfg, &dir)?;
    if let Some(limit) = cfg.thresholds.max_rmse_fraction {
        if let Some(g) = summary.groups.iter().find(|g| g.rmse_fraction > limit) {
            return Err(Error::Threshold(format!(
                "endpoint RMSE at base scale {} is {:.4} of the target diameter (limit {limit})",
                g.scale, g.rmse_fraction
            )));
        }
    }
    Ok(summary)
}

/// Registered controls and the trajectory they generate.
pub struct Registered {
    pub kernel: Box<dyn MultiscaleKernel>,
    pub record: RegistrationRecord,
    pub trajectory: FlowTrajectory,
}

pub fn load_registration(cfg: &ExperimentConfig) -> Result<Registered> {
    let dir = run_dir(cfg);
    let path = dir.join(CONTROLS_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `register` first",
            path.display()
        )));
    }
    let record = RegistrationRecord::read_json(&path)?;
    let kernel = build_kernel(cfg, &dir)?;
    let trajectory = integrate_forward(kernel.as_ref(), &record.system, &record.controls)?;
    Ok(Registered {
        kernel,
        record,
        trajectory,
    })
}

/// Export grid from the config: the explicit box, or the landmark and
/// target extent grown by the margin.
pub fn export_grid(
    cfg: &ExperimentConfig,
    system: &LandmarkSystem,
    size: [usize; 2],
) -> Result<Grid2> {
    match cfg.grid.bbox {
        Some([x0, y0, x1, y1]) => Grid2::new(size[0], size[1], [x0, y0], [x1, y1]),
        None => {
            let mut pts = system.initial();
            pts.extend(system.targets());
            Grid2::around(&pts, cfg.grid.margin, size[0], size[1])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub scale: f64,
    pub file: String,
    pub min_jacobian: f64,
    pub folded_nodes: usize,
    pub displacement_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub grid: Grid2,
    pub fields: Vec<FieldSummary>,
    pub residuals: Vec<FieldSummary>,
    /// Composition of residuals against the direct map, on the check grid.
    pub residual_check: Option<ResidualCheck>,
    /// `composition_error / inverse_error`.
    pub residual_ratio: Option<f64>,
    /// Nodes with nonpositive Jacobian across all exported grids.
    pub folded_total: usize,
}

fn scale_tag(s: f64) -> String {
    format!("{s:.4}")
}

fn field_summary(f: &DeformationField, file: String) -> FieldSummary {
    FieldSummary {
        scale: f.scale,
        file,
        min_jacobian: f.min_jacobian(),
        folded_nodes: f.folded().len(),
        displacement_sup: f.displacement_sup(),
    }
}

/// Deformed grids with log-Jacobians for each export scale, residual maps
/// between consecutive export scales, the residual reconstruction check and
/// optional SVG renderings. Folding is reported, not fatal.
pub fn cmd_export_fields(cfg: &ExperimentConfig) -> Result<ExportSummary> {
    let reg = load_registration(cfg)?;
    let dir = run_dir(cfg);
    let kernel = reg.kernel.as_ref();
    let controls = &reg.record.controls;
    let grid = export_grid(cfg, &reg.record.system, cfg.grid.size)?;
    let mut scales = cfg.export_scales()?;
    scales.sort_by(f64::total_cmp);
    scales.dedup();

    let fields_dir = dir.join("fields");
    std::fs::create_dir_all(&fields_dir)?;
    let mut fields = Vec::with_capacity(scales.len());
    let mut svgs = Vec::new();
    for &s in &scales {
        let field = transport_grid(kernel, &reg.trajectory, controls, s, &grid)?;
        let name = format!("fields/scale_{}", scale_tag(s));
        field.write_csv(&dir.join(format!("{name}.csv")))?;
        field.write_binary(&dir.join(format!("{name}.bin")))?;
        fields.push(field_summary(&field, format!("{name}.csv")));
        if cfg.export.svg {
            svgs.push((s, render_svg(kernel, &reg, &field)?));
        }
    }

    let mut residuals = Vec::new();
    let mut residual_check = None;
    if cfg.export.residuals {
        let res_dir = dir.join("residuals");
        std::fs::create_dir_all(&res_dir)?;
        for field in residual_maps(kernel, &reg.trajectory, controls, &scales, &grid)? {
            let name = format!("residuals/residual_{}.csv", scale_tag(field.scale));
            field.write_csv(&dir.join(&name))?;
            residuals.push(field_summary(&field, name));
        }
        let n = cfg.export.check_grid.max(2);
        let check_grid = export_grid(cfg, &reg.record.system, [n, n])?;
        residual_check = Some(residual_composition_error(
            kernel,
            &reg.trajectory,
            controls,
            &scales,
            &check_grid.points(),
        )?);
    }

    if !svgs.is_empty() {
        let svg_dir = dir.join("svg");
        std::fs::create_dir_all(&svg_dir)?;
        for (s, svg) in svgs {
            std::fs::write(svg_dir.join(format!("scale_{}.svg", scale_tag(s))), svg)?;
        }
    }

    let folded_total = fields
        .iter()
        .chain(&residuals)
        .map(|f| f.folded_nodes)
        .sum();
    let summary = ExportSummary {
        grid,
        fields,
        residuals,
        residual_ratio: residual_check.map(|c| c.ratio()),
        residual_check,
        folded_total,
    };
    write_json(&dir.join(FIELDS_SUMMARY_FILE), &summary)?;
    write_manifest(cfg, &dir)?;
    Ok(summary)
}

/// Deformed grid lines, deformed template contours and target points.
fn render_svg(
    kernel: &dyn MultiscaleKernel,
    reg: &Registered,
    field: &DeformationField,
) -> Result<String> {
    let grid = &field.grid;
    let moved = transport_points(
        kernel,
        &reg.trajectory,
        &reg.record.controls,
        field.scale,
        &reg.record.system.initial(),
    )?;
    let (w, h) = (grid.max[0] - grid.min[0], grid.max[1] - grid.min[1]);
    let pad = 0.1 * w.max(h);
    let stroke = 0.002 * w.max(h);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="600" height="600">"#,
        grid.min[0] - pad,
        -(grid.max[1] + pad),
        w + 2.0 * pad,
        h + 2.0 * pad
    );
    let _ = writeln!(
        s,
        r#"<g transform="scale(1,-1)" fill="none" stroke-width="{stroke:e}">"#
    );
    let node = |ix: usize, iy: usize| {
        let i = iy * grid.nx + ix;
        (field.mapped[2 * i], field.mapped[2 * i + 1])
    };
    let mut polyline = |pts: &mut dyn Iterator<Item = (f64, f64)>, color: &str, closed: bool| {
        let coords: Vec<String> = pts.map(|(x, y)| format!("{x:.6},{y:.6}")).collect();
        let tag = if closed { "polygon" } else { "polyline" };
        let _ = writeln!(
            s,
            r#"<{tag} stroke="{color}" points="{}"/>"#,
            coords.join(" ")
        );
    };
    for iy in 0..grid.ny {
        polyline(&mut (0..grid.nx).map(|ix| node(ix, iy)), "#999999", false);
    }
    for ix in 0..grid.nx {
        polyline(&mut (0..grid.ny).map(|iy| node(ix, iy)), "#999999", false);
    }
    for r in reg.record.system.group_ranges() {
        polyline(
            &mut r.map(|p| (moved[2 * p], moved[2 * p + 1])),
            "#1f4e9c",
            true,
        );
    }
    for g in &reg.record.system.groups {
        for t in &g.targets {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.6}" cy="{:.6}" r="{:e}" fill="#c0392b"/>"##,
                t[0],
                t[1],
                3.0 * stroke
            );
        }
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub items: Vec<CheckItem>,
    pub positivity: Option<PositivityReport>,
}

fn item(name: &str, pass: bool, detail: String) -> CheckItem {
    CheckItem {
        name: name.into(),
        pass,
        detail,
    }
}

/// Invariant suite for a config: round-trip, kernel symmetry, pairwise
/// positivity on the landmarks, fit quality, identity flow and an adjoint
/// gradient spot check. Writes `check_report.json`; any failure is a
/// threshold error.
pub fn cmd_check(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let dir = prepare_run(cfg)?;
    let mut items = Vec::new();

    let round = ExperimentConfig::from_json(&cfg.to_json())?;
    items.push(item("config_round_trip", round == *cfg, String::new()));

    let kernel = build_kernel(cfg, &dir)?;
    let ladder = cfg.ladder()?;
    let system = cfg.landmark_system()?;

    let mut worst = 0.0f64;
    let nodes = ladder.nodes();
    let stride = (nodes.len() / 5).max(1);
    for &a in nodes
        .iter()
        .step_by(stride)
        .chain(std::iter::once(&ladder.s2()))
    {
        for &b in nodes.iter().step_by(stride) {
            for r in [0.0, 0.1, 0.5] {
                let (x, y) = (kernel.value(a, b, r)?, kernel.value(b, a, r)?);
                worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE));
            }
        }
    }
    items.push(item(
        "kernel_symmetry",
        worst <= 1e-12,
        format!("max relative asymmetry {worst:.3e}"),
    ));

    let samples: Vec<(f64, Vec<f64>)> = system
        .groups
        .iter()
        .flat_map(|g| g.points.iter().map(move |p| (g.scale, p.clone())))
        .collect();
    let positivity = certify_pairwise_positivity(kernel.as_ref(), &samples)?;
    items.push(item(
        "pairwise_positivity",
        positivity.pass,
        format!(
            "min eigenvalue {:.3e}, max {:.3e}",
            positivity.min_eigenvalue, positivity.max_eigenvalue
        ),
    ));

    if cfg.kernel.backend == BackendChoice::Fitted {
        let table = KernelTable::read_binary(&dir.join(KERNEL_TABLE_FILE))?;
        let r = &table.report;
        let min_det = r
            .pairs
            .iter()
            .filter_map(|p| p.min_determinant)
            .fold(f64::INFINITY, f64::min);
        let min_diag = r
            .pairs
            .iter()
            .filter(|p| p.k == p.l)
            .map(|p| p.min_margin)
            .fold(f64::INFINITY, f64::min);
        items.push(item(
            "fit_quality",
            r.max_relative_residual <= cfg.kernel.max_residual
                && min_diag >= 0.0
                && !(min_det < -1e-12),
            format!(
                "residual {:.3e}, min diagonal {min_diag:.3e}, min determinant {min_det:.3e}",
                r.max_relative_residual
            ),
        ));
    }

    let objective = Objective::new(kernel.as_ref(), &system, cfg.steps)?;
    let zero = objective.zero_controls();
    let traj = integrate_forward(kernel.as_ref(), &system, &zero)?;
    let moved = traj
        .endpoint()
        .iter()
        .zip(system.initial())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    items.push(item(
        "identity_flow",
        moved == 0.0 && traj.energy == 0.0,
        format!("max landmark motion {moved:e}"),
    ));

    let mut probe = zero.clone();
    for (i, v) in probe.values.iter_mut().enumerate() {
        *v = 0.05 * (1.7 * i as f64 + 0.3).sin();
    }
    let (_, grad, _) = objective.gradient(&probe)?;
    let count = probe.values.len();
    let mut worst_fd = 0.0f64;
    let eps = 1e-6;
    for j in (0..count).step_by((count / 8).max(1)) {
        let mut plus = probe.clone();
        plus.values[j] += eps;
        let mut minus = probe.clone();
        minus.values[j] -= eps;
        let fd =
            (objective.evaluate(&plus)?.value - objective.evaluate(&minus)?.value) / (2.0 * eps);
        let scale = grad.sup_norm().max(1e-8);
        worst_fd = worst_fd.max((fd - grad.values[j]).abs() / scale);
    }
    items.push(item(
        "adjoint_gradient",
        worst_fd <= 1e-5,
        format!("max deviation from central differences {worst_fd:.3e}"),
    ));

    let pass = items.iter().all(|i| i.pass);
    let report = CheckReport {
        name: cfg.name.clone(),
        pass,
        items,
        positivity: Some(positivity),
    };
    write_json(&dir.join(CHECK_FILE), &report)?;
    write_manifest(cfg, &dir)?;
    if !pass {
        let failed: Vec<&str> = report
            .items
            .iter()
            .filter(|i| !i.pass)
            .map(|i| i.name.as_str())
            .collect();
        return Err(Error::Threshold(format!(
            "invariant checks failed: {}",
            failed.join(", ")
        )));
    }
    Ok(report)
}
