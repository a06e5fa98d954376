//! Execution of a validated [`Scenario`] and the artifacts it leaves on disk.

use crate::scenario::{
    Command, ContinueOptions, CoreOptions, OverlayOptions, PhaseOptions, Scenario, SimulateOptions,
    SpectrumOptions, ThresholdOptions, VerifyOptions,
};
use serde::Serialize;
use serde_json::{json, Value};
use spikelab::continuation::{
    branches_svg, multi_branch_atlas, one_spike_branch, one_spike_branch_both_ways, overlay,
    richardson_fold, AtlasOptions, SteadyBranch,
};
use spikelab::core_problem::{
    continue_core_branch, farfield_constant, solve_core, BranchOptions, CoreFold, CoreGrid,
    CoreModel, CoreSolution, CoreTarget,
};
use spikelab::io::{read_file, write_file, write_json};
use spikelab::outer::{
    core_model_of, first_threshold, phase_diagram, small_param_threshold, thresholds_csv,
    OuterOptions, PhaseFamily, PhaseGrid, ThresholdMethod,
};
use spikelab::pde::{
    export_heatmap, export_snapshots, simulate_growing_with, Checkpoint, CheckpointPolicy,
    SimTrajectory,
};
use spikelab::spectrum::{
    core_spectrum, stability_bracket, stability_csv, stability_scan, EIGEN_NOTE,
};
use spikelab::verify::{matrix, run_criterion};
use spikelab::{ModelKind, ModelSpec, SpikeError};
use std::path::{Path, PathBuf};

/// What a finished command reports.
#[derive(Debug)]
pub struct Report {
    /// JSON summary printed on stdout and stored in the manifest.
    pub summary: Value,
    /// Human-readable text printed before the summary (the verify matrix).
    pub text: Option<String>,
    /// Set when the command ran but its checks failed.
    pub failure: Option<String>,
}

/// Files written under the output directory, in creation order.
struct Artifacts {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), SpikeError> {
        if let Some(dir) = &self.dir {
            write_file(dir.join(name), contents)?;
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), SpikeError> {
        if let Some(dir) = &self.dir {
            write_json(dir.join(name), value)?;
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Record files some library routine wrote itself.
    fn adopt(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        if let Some(dir) = &self.dir {
            for p in paths {
                if let Ok(rel) = p.strip_prefix(dir) {
                    self.files.push(rel.to_string_lossy().replace('\\', "/"));
                }
            }
        }
    }
}

/// Run a scenario, writing its artifacts (and `manifest.json`) under `out`.
pub fn run(scenario: &Scenario, out: Option<&Path>) -> Result<Report, SpikeError> {
    scenario.validate()?;
    let mut art = Artifacts {
        dir: out.map(Path::to_path_buf),
        files: Vec::new(),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| {
            SpikeError::InvalidParameter(format!("cannot create {}: {e}", dir.display()))
        })?;
    }
    let report = match scenario.command {
        Command::Core => core(scenario, scenario.options()?, &mut art)?,
        Command::Spectrum => spectrum(scenario, scenario.options()?, &mut art)?,
        Command::Thresholds => thresholds(scenario, scenario.options()?, &mut art)?,
        Command::PhaseDiagram => phase(scenario, scenario.options()?, &mut art)?,
        Command::Simulate => simulate(scenario, scenario.options()?, &mut art)?,
        Command::Continue => continue_branch(scenario, scenario.options()?, &mut art)?,
        Command::Atlas => atlas(scenario, scenario.options()?, &mut art)?,
        Command::Overlay => overlay_cmd(scenario, scenario.options()?, &mut art)?,
        Command::Verify => verify(scenario.options()?, &mut art)?,
    };
    if art.dir.is_some() {
        art.write("scenario.json", scenario.to_json())?;
        let mut files = art.files.clone();
        files.sort();
        let manifest = json!({
            "name": scenario.name,
            "command": scenario.command.as_str(),
            "version": env!("CARGO_PKG_VERSION"),
            "status": if report.failure.is_some() { "failed" } else { "ok" },
            "files": files,
            "summary": report.summary,
        });
        art.json("manifest.json", &manifest)?;
    }
    Ok(report)
}

fn done(summary: Value) -> Report {
    Report {
        summary,
        text: None,
        failure: None,
    }
}

fn core_model(spec: &ModelSpec) -> Result<CoreModel, SpikeError> {
    core_model_of(spec).ok_or_else(|| {
        SpikeError::RegimeMismatch(
            "the GM spike core is explicit; core problems exist for Schnakenberg and Brusselator"
                .into(),
        )
    })
}

/// The profile at a fold: the one retained by the branch trace, or a solve at
/// `B_c` when the branch kept none.
fn fold_profile(
    model: CoreModel,
    fold: &CoreFold,
    grid: CoreGrid,
) -> Result<CoreSolution, SpikeError> {
    match &fold.solution {
        Some(sol) => Ok(sol.as_ref().clone()),
        None => solve_core(model, CoreTarget::B(fold.b_c), grid, None),
    }
}

fn core(sc: &Scenario, opts: CoreOptions, art: &mut Artifacts) -> Result<Report, SpikeError> {
    let model = core_model(&sc.model()?)?;
    let grid = CoreGrid {
        y_max: opts.y_max,
        n: opts.n,
    };
    let target = match (opts.b, opts.beta) {
        (Some(_), Some(_)) => {
            return Err(SpikeError::InvalidParameter(
                "give either B or beta, not both".into(),
            ))
        }
        (Some(b), None) => Some(CoreTarget::B(b)),
        (None, Some(beta)) => Some(CoreTarget::Beta(beta)),
        (None, None) => None,
    };
    if let Some(target) = target {
        let sol = solve_core(model, target, grid, None)?;
        let ff = farfield_constant(&sol)?;
        art.write("core_solution.csv", sol.to_csv())?;
        return Ok(done(json!({
            "B": sol.b, "beta": sol.beta, "C": sol.c, "tail_deviation": ff.deviation,
            "residual": sol.residual_norm, "volcano": sol.is_volcano(),
        })));
    }
    let branch = continue_core_branch(
        model,
        &BranchOptions {
            grid,
            keep_solutions: false,
            ..Default::default()
        },
    )?;
    let fold = branch
        .fold
        .clone()
        .ok_or_else(|| SpikeError::NoSolution("the core branch has no fold".into()))?;
    let at_fold = fold_profile(model, &fold, grid)?;
    art.write("core_fold_profile.csv", at_fold.to_csv())?;
    if opts.branch {
        art.write("core_branch.csv", branch.to_csv())?;
    }
    art.json("core_fold.json", &fold)?;
    Ok(done(
        json!({ "B_c": fold.b_c, "beta_c": fold.beta_c, "C_c": fold.c_c, "samples": branch.samples.len() }),
    ))
}

fn spectrum(
    sc: &Scenario,
    opts: SpectrumOptions,
    art: &mut Artifacts,
) -> Result<Report, SpikeError> {
    let model = core_model(&sc.model()?)?;
    let grid = CoreGrid {
        y_max: opts.y_max,
        n: opts.n,
    };
    let need_branch = opts.b.is_none() || opts.scan;
    let branch = if need_branch {
        Some(continue_core_branch(
            model,
            &BranchOptions {
                grid,
                keep_solutions: opts.scan,
                ..Default::default()
            },
        )?)
    } else {
        None
    };
    let sol = match opts.b {
        Some(b) => solve_core(model, CoreTarget::B(b), grid, None)?,
        None => {
            let fold = branch
                .as_ref()
                .and_then(|b| b.fold.clone())
                .ok_or_else(|| SpikeError::NoSolution("no fold".into()))?;
            fold_profile(model, &fold, grid)?
        }
    };
    let er = core_spectrum(&sol, opts.n_eigs)?;
    art.write("eigen.json", er.to_json() + "\n")?;
    for k in 0..er.modes.len() {
        art.write(&format!("mode_{k}.csv"), er.mode_csv(k))?;
    }
    let mut summary = json!({
        "B": er.b, "beta": er.beta,
        "eigenvalues": er.eigenvalues.iter().map(|l| [l.re, l.im]).collect::<Vec<_>>(),
        "note": EIGEN_NOTE,
    });
    if opts.scan {
        let scan = stability_scan(branch.as_ref().expect("built for the scan"), 200)?;
        art.write("stability_scan.csv", stability_csv(&scan))?;
        summary["stability_bracket_beta"] = json!(stability_bracket(&scan));
    }
    Ok(done(summary))
}

fn thresholds(
    sc: &Scenario,
    opts: ThresholdOptions,
    art: &mut Artifacts,
) -> Result<Report, SpikeError> {
    let spec = sc.model()?;
    let r = match opts.method {
        ThresholdMethod::Full => first_threshold(
            &spec,
            opts.k,
            &OuterOptions {
                v0_mode: opts.v0_mode,
            },
        )?,
        ThresholdMethod::SmallParam => small_param_threshold(&spec, opts.k)?,
    };
    art.write("thresholds.csv", thresholds_csv(std::slice::from_ref(&r)))?;
    art.json("thresholds.json", &r)?;
    Ok(done(serde_json::to_value(&r)?))
}

fn phase(sc: &Scenario, opts: PhaseOptions, art: &mut Artifacts) -> Result<Report, SpikeError> {
    let kind = opts.family.or(sc.model.map(|m| m.kind())).ok_or_else(|| {
        SpikeError::InvalidParameter("phase-diagram needs a family or a model".into())
    })?;
    let family = match kind {
        ModelKind::Schnakenberg => PhaseFamily::Schnakenberg,
        ModelKind::Brusselator => PhaseFamily::Brusselator,
        ModelKind::Gm => PhaseFamily::Gm,
    };
    let (nx, ny) = opts.grid_size()?;
    let mut grid = PhaseGrid::default_for(family, nx, ny);
    if let Some(r) = opts.x_range {
        grid.x_range = r;
    }
    if let Some(r) = opts.y_range {
        grid.y_range = r;
    }
    if let Some(m) = sc.model {
        grid.epsilon = m.epsilon;
        grid.big_d = m.big_d;
    }
    let pd = phase_diagram(family, &grid)?;
    art.write("phase.csv", pd.to_csv())?;
    art.write("phase.svg", pd.to_svg())?;
    art.json("phase.json", &pd)?;
    let mut counts = serde_json::Map::new();
    for c in &pd.cells {
        let key = serde_json::to_value(c.regime)?
            .as_str()
            .unwrap_or("marginal")
            .to_string();
        *counts.entry(key).or_insert(json!(0)) =
            json!(counts.get(&key).and_then(Value::as_u64).unwrap_or(0) + 1);
    }
    Ok(done(
        json!({ "family": kind, "nx": nx, "ny": ny, "f_c": pd.f_c, "cells": counts }),
    ))
}

fn run_simulation(
    spec: ModelSpec,
    opts: &SimulateOptions,
    art: &mut Artifacts,
) -> Result<SimTrajectory, SpikeError> {
    let cfg = opts.config(spec);
    cfg.validate()?;
    let resume = match &opts.resume {
        Some(path) => Some(serde_json::from_str::<Checkpoint>(&read_file(path)?)?),
        None => None,
    };
    let policy = art.dir.as_ref().map(|d| CheckpointPolicy {
        path: d.join("checkpoint.json"),
        every_seconds: opts.checkpoint_seconds,
    });
    let traj = simulate_growing_with(&cfg, resume, policy.as_ref())?;
    if let Some(p) = &policy {
        // the run finished; a stale checkpoint would only invite a bogus resume
        let _ = std::fs::remove_file(&p.path);
    }
    Ok(traj)
}

fn trajectory_summary(traj: &SimTrajectory) -> Value {
    json!({
        "final_t": traj.final_t,
        "final_L": traj.final_length,
        "events": traj.events.entries,
        "final_count": traj.snapshots.last().map(|s| s.spikes.count),
        "steps": traj.stats.steps,
        "rejected": traj.stats.rejected,
    })
}

fn simulate(
    sc: &Scenario,
    opts: SimulateOptions,
    art: &mut Artifacts,
) -> Result<Report, SpikeError> {
    let traj = run_simulation(sc.model()?, &opts, art)?;
    art.write("events.csv", traj.events.to_csv())?;
    if let Some(dir) = art.dir.clone() {
        let written = export_heatmap(&traj, &dir, &opts.heatmap)?;
        art.adopt(written);
        if opts.snapshots {
            export_snapshots(&traj, &dir.join("snapshots"))?;
            art.files.extend(
                (0..traj.snapshots.len()).map(|k| format!("snapshots/snapshot_{k:05}.csv")),
            );
        }
        let final_state = json!({ "t": traj.final_t, "L": traj.final_length, "x": traj.x, "z": traj.final_state });
        art.json("final_state.json", &final_state)?;
    }
    Ok(done(trajectory_summary(&traj)))
}

fn branch_summary(b: &SteadyBranch) -> Value {
    json!({
        "branch_id": b.branch_id,
        "points": b.points.len(),
        "L_range": [
            b.points.iter().map(|p| p.length).fold(f64::INFINITY, f64::min),
            b.points.iter().map(|p| p.length).fold(f64::NEG_INFINITY, f64::max),
        ],
        "folds": b.folds,
        "branch_points": b.branch_points.iter().map(|&i| b.points[i].length).collect::<Vec<_>>(),
        "stop": b.stop,
    })
}

fn continue_branch(
    sc: &Scenario,
    opts: ContinueOptions,
    art: &mut Artifacts,
) -> Result<Report, SpikeError> {
    let spec = sc.model()?;
    let branch = if opts.both_ways {
        one_spike_branch_both_ways(&spec, opts.n, opts.start_length, &opts.continuation)?
    } else {
        one_spike_branch(&spec, opts.n, opts.start_length, &opts.continuation)?
    };
    art.write("branch.csv", branch.to_csv(true))?;
    art.json("branch.json", &branch)?;
    let one = std::slice::from_ref(&branch);
    art.write(
        "branch_mu.svg",
        branches_svg(one, |m| m.mu, "mu = v(1)", None),
    )?;
    art.write(
        "branch_u0v0.svg",
        branches_svg(one, |m| m.u0v0, "u(0) v(0)", None),
    )?;
    let mut summary = branch_summary(&branch);
    if opts.richardson {
        summary["richardson"] = serde_json::to_value(richardson_fold(
            &spec,
            opts.n,
            opts.start_length,
            &opts.continuation,
        )?)?;
    }
    Ok(done(summary))
}

fn run_atlas(
    spec: &ModelSpec,
    opts: &AtlasOptions,
    art: &mut Artifacts,
) -> Result<(Vec<SteadyBranch>, Value), SpikeError> {
    let entries = multi_branch_atlas(spec, opts);
    let mut manifest = Vec::new();
    let mut branches = Vec::new();
    for e in entries {
        manifest.push(json!({
            "half_spikes": e.half_spikes,
            "boundary": e.boundary,
            "centers": e.centers,
            "branch": e.branch.as_ref().map(branch_summary),
            "error": e.error,
        }));
        if let Some(b) = e.branch {
            branches.push(b);
        }
    }
    if branches.is_empty() {
        return Err(SpikeError::NoSolution(
            "no atlas branch could be started".into(),
        ));
    }
    let csv: String = branches
        .iter()
        .enumerate()
        .map(|(i, b)| b.to_csv(i == 0))
        .collect();
    art.write("branches.csv", csv)?;
    let manifest = json!({ "options": opts, "branches": manifest });
    art.json("atlas.json", &manifest)?;
    Ok((branches, manifest))
}

fn atlas(sc: &Scenario, opts: AtlasOptions, art: &mut Artifacts) -> Result<Report, SpikeError> {
    let (branches, manifest) = run_atlas(&sc.model()?, &opts, art)?;
    art.write(
        "atlas_l2.svg",
        branches_svg(&branches, |m| m.l2_v, "||v||_2", None),
    )?;
    Ok(done(manifest["branches"].clone()))
}

fn overlay_cmd(
    sc: &Scenario,
    opts: OverlayOptions,
    art: &mut Artifacts,
) -> Result<Report, SpikeError> {
    let spec = sc.model()?;
    let traj = run_simulation(spec, &opts.simulate, art)?;
    let (branches, manifest) = run_atlas(&spec, &opts.atlas, art)?;
    let ov = overlay(&traj, &branches);
    art.write("events.csv", traj.events.to_csv())?;
    art.write("overlay.csv", ov.to_csv())?;
    let path: Vec<(f64, f64)> = ov
        .rows
        .iter()
        .filter(|r| r.source == "trajectory")
        .map(|r| (r.length, r.l2norm_v))
        .collect();
    art.write(
        "overlay.svg",
        branches_svg(&branches, |m| m.l2_v, "||v||_2", Some(&path)),
    )?;
    Ok(done(json!({
        "trajectory": trajectory_summary(&traj),
        "jumps": ov.jumps,
        "branches": manifest["branches"],
    })))
}

fn verify(opts: VerifyOptions, art: &mut Artifacts) -> Result<Report, SpikeError> {
    let ids = opts.criteria.clone().unwrap_or_else(|| opts.suite.ids());
    if let Some(bad) = ids.iter().find(|&&i| !(1..=10).contains(&i)) {
        return Err(SpikeError::InvalidParameter(format!(
            "criteria are numbered 1 to 10, got {bad}"
        )));
    }
    let mut text = String::new();
    let mut reports = Vec::new();
    for id in ids {
        let r = run_criterion(id);
        eprintln!("{}", r.summary_line());
        text.push_str(&r.detail());
        reports.push(r);
    }
    text.push('\n');
    text.push_str(&matrix(&reports));
    art.json("verify.json", &reports)?;
    art.write("verify.txt", &text)?;
    let failed: Vec<u8> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.id)
        .collect();
    let summary = json!({
        "passed": reports.iter().filter(|r| r.passed()).map(|r| r.id).collect::<Vec<_>>(),
        "failed": failed,
    });
    let failure = (!failed.is_empty()).then(|| format!("criteria {failed:?} failed"));
    Ok(Report {
        summary,
        text: Some(text),
        failure,
    })
}
