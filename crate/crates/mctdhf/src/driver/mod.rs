//! Batch orchestration: configuration, ground-state preparation, real-time
//! propagation, observables, spectra, and checkpoint/resume.

pub mod config;
pub mod observables;
pub mod output;
pub mod spectrum;

pub use config::{ConfigError, RunConfig};
pub use observables::{ObservableOps, ObservableRecord};
pub use output::{read_checkpoint, write_checkpoint, CheckpointData};
pub use spectrum::{hhg_spectrum, Quantity, SpectrumError, Window};

use crate::ci::{self, CiError};
use crate::eom::{self, EomError, StepOptions, System, WaveFunction};
use crate::fem::{build_space, CoulombHandling, EcsConfig, FemError, Nuclei};
use crate::field::{FieldSource, NoField, Pulse};
use crate::krylov::{self, ImagTimeOptions, KrylovError};
use crate::meanfield::Interaction;
use crate::mesh::{self, Mesh, MeshError, RefinementPolicy, SimulationBox, MAX_DIM};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("mesh stage: {0}")]
    Mesh(#[from] MeshError),
    #[error("space/assembly stage: {0}")]
    Fem(#[from] FemError),
    #[error("determinant stage: {0}")]
    Ci(#[from] CiError),
    #[error("coupling stage: {0}")]
    Eom(#[from] EomError),
    #[error("propagation stage: {0}")]
    Krylov(#[from] KrylovError),
    #[error("spectrum stage: {0}")]
    Spectrum(#[from] SpectrumError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl DriverError {
    /// CLI exit code: 1 for configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub struct RunOutcome {
    pub outdir: PathBuf,
    pub ground_energy: f64,
    pub records: Vec<ObservableRecord>,
    pub final_wf: WaveFunction,
}

fn nuclei_from(cfg: &RunConfig) -> Nuclei {
    let positions: Vec<[f64; MAX_DIM]> = cfg
        .nuclei
        .positions
        .iter()
        .map(|p| {
            let mut out = [0.0; MAX_DIM];
            out[..p.len()].copy_from_slice(p);
            out
        })
        .collect();
    Nuclei::new(cfg.nuclei.charges.clone(), positions, cfg.nuclei.softening)
}

/// Mesh pipeline: uniform coarse grid, then Kelly refinement against the
/// (guarded) nuclear Coulomb potential.
pub fn build_run_mesh(cfg: &RunConfig) -> Result<Mesh, DriverError> {
    let b = SimulationBox::new(&cfg.domain.lo, &cfg.domain.hi)?;
    let coarse = mesh::build_uniform(b, cfg.domain.coarse_size)?;
    let nuclei = nuclei_from(cfg);
    let dim = cfg.dimension();
    let policy = RefinementPolicy::new(
        cfg.refinement.threshold,
        cfg.refinement.min_size,
        cfg.refinement.max_size,
        cfg.refinement.max_passes,
    )
    .with_max_leaves(cfg.refinement.max_leaves);
    let refined = mesh::refine_adapt(
        &coarse,
        move |p| nuclei.potential_guarded(p, dim),
        &policy,
        cfg.space.order,
    )?;
    Ok(refined)
}

/// Build the full system (mesh, space, operators, determinant space).
pub fn prepare(cfg: &RunConfig) -> Result<(System, ObservableOps), DriverError> {
    let mesh = build_run_mesh(cfg)?;
    log::info!("mesh: {} leaves", mesh.n_leaves());
    let ecs = cfg.ecs.as_ref().map(|e| {
        let mut r0 = [f64::INFINITY; MAX_DIM];
        r0[..e.r0.len()].copy_from_slice(&e.r0);
        EcsConfig { r0, theta: e.theta }
    });
    let space = build_space(mesh, cfg.space.order, ecs)?;
    log::info!(
        "space: {} nodes, {} masters, {} constraints",
        space.n_nodes,
        space.n_masters,
        space.constraints.len()
    );
    let nuclei = nuclei_from(cfg);
    let dets = ci::enumerate(
        cfg.electrons.n_alpha,
        cfg.electrons.n_beta,
        cfg.electrons.orbitals,
        ci::DEFAULT_DIM_CAP,
    )?;
    log::info!("determinant space: {} configurations", dets.dim());
    let interaction = if cfg.dimension() == 3 {
        Interaction::Poisson3d
    } else {
        Interaction::SoftCore { epsilon: cfg.nuclei.softening }
    };
    let obs_ops_space;
    let system = System::build(
        space,
        &nuclei,
        CoulombHandling::Regularize,
        dets,
        interaction,
        cfg.tolerances.poisson_tol,
        cfg.tolerances.mass_tol,
    )?;
    obs_ops_space = ObservableOps::build(&system.space);
    Ok((system, obs_ops_space))
}

fn init_threads(cfg_threads: usize) {
    let n = std::env::var("MCTDHF_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(cfg_threads);
    if n > 0 {
        // fails harmlessly if a pool already exists (tests, repeated runs)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn field_from(cfg: &RunConfig) -> Box<dyn FieldSource> {
    match &cfg.pulse {
        Some(p) => Box::new(Pulse::new(p.wavelength_nm, p.peak_intensity_wcm2, &p.polarization)),
        None => Box::new(NoField),
    }
}

fn spectrum_axis(cfg: &RunConfig) -> usize {
    match &cfg.pulse {
        Some(p) => p
            .polarization
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0),
        None => 0,
    }
}

/// Full batch run from a validated config and its original text.
pub fn run(cfg: &RunConfig, config_text: &str) -> Result<RunOutcome, DriverError> {
    init_threads(cfg.run.threads);
    let outdir = PathBuf::from(&cfg.run.outdir);
    std::fs::create_dir_all(&outdir)?;
    std::fs::write(outdir.join("config.cfg"), config_text)?;

    let (system, obs_ops) = prepare(cfg)?;
    {
        let mut f = std::fs::File::create(outdir.join("mesh.txt"))?;
        system.space.mesh.dump_text(&mut f)?;
        let mut f = std::fs::File::create(outdir.join("mesh.vtk"))?;
        system.space.mesh.dump_vtk(&mut f)?;
    }

    // ground state by imaginary time
    let m = cfg.electrons.orbitals;
    let orbitals = eom::seed_orbitals(&system, m, cfg.run.seed, 15, cfg.imaginary.dt);
    let ci_v = eom::seed_ci(&system.dets, cfg.run.seed);
    let mut wf = WaveFunction { orbitals, ci: ci_v };
    let imag_opts = ImagTimeOptions {
        dt: cfg.imaginary.dt,
        tol_energy: cfg.imaginary.tol_energy,
        max_steps: cfg.imaginary.max_steps,
        m_max: cfg.tolerances.arnoldi_max_dim,
        arnoldi_tol: cfg.tolerances.arnoldi_tol,
    };
    let ground_energy = match krylov::propagate_imaginary(&system, &mut wf, &imag_opts) {
        Ok(res) => res.energy,
        Err(KrylovError::NoConvergence { steps, tol, last }) => {
            log::warn!(
                "imaginary time stopped after {steps} steps before |dE| < {tol:e} (last {last:e}); continuing with the current state"
            );
            f64::NAN
        }
        Err(e) => return Err(e.into()),
    };
    log::info!("ground-state energy: {ground_energy:.10}");

    run_real_time(cfg, config_text, system, obs_ops, wf, 0, outdir, ground_energy)
}

/// Continue a checkpointed run to its configured end.
pub fn resume(data: CheckpointData, outdir_override: Option<&str>) -> Result<RunOutcome, DriverError> {
    let cfg = RunConfig::from_str_validated(&data.config_text)?;
    init_threads(cfg.run.threads);
    let outdir = PathBuf::from(
        outdir_override.map(str::to_string).unwrap_or_else(|| format!("{}_resumed", cfg.run.outdir)),
    );
    std::fs::create_dir_all(&outdir)?;
    let (system, obs_ops) = prepare(&cfg)?;
    run_real_time(
        &cfg,
        &data.config_text,
        system,
        obs_ops,
        data.wf,
        data.step,
        outdir,
        f64::NAN,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_real_time(
    cfg: &RunConfig,
    config_text: &str,
    system: System,
    obs_ops: ObservableOps,
    mut wf: WaveFunction,
    start_step: usize,
    outdir: PathBuf,
    ground_energy: f64,
) -> Result<RunOutcome, DriverError> {
    let field = field_from(cfg);
    let dt = cfg.propagation.dt;
    let steps = cfg.propagation.steps;
    let cadence = cfg.propagation.output_every;
    let step_opts = StepOptions {
        m_max: cfg.tolerances.arnoldi_max_dim,
        arnoldi_tol: cfg.tolerances.arnoldi_tol,
        strang_ci_split: cfg.run.strang_ci_split,
    };
    let initial = wf.clone();
    let dim = cfg.dimension();

    let mut obs_file = std::fs::File::create(outdir.join("observables.dat"))?;
    output::write_observable_header(&mut obs_file, dim)?;
    let mut records: Vec<ObservableRecord> = Vec::new();
    let mut dim_histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let wall_start = std::time::Instant::now();

    for s in start_step..=steps {
        let t = s as f64 * dt;
        let a_t = field.vector_potential(t);
        let fc = eom::freeze(&system, &wf, a_t)?;
        if s % cadence == 0 {
            let rec =
                observables::record(&system, &obs_ops, &fc, &wf, &initial, field.as_ref(), s, t);
            output::write_observable_row(&mut obs_file, &rec, dim)?;
            obs_file.flush()?;
            records.push(rec);
        }
        if cfg.propagation.checkpoint_every > 0
            && s > start_step
            && s % cfg.propagation.checkpoint_every == 0
        {
            let path = outdir.join(format!("checkpoint_{s:08}.bin"));
            let mut f = std::fs::File::create(&path)?;
            output::write_checkpoint(&mut f, config_text, s, &wf)?;
            log::info!("checkpoint written: {}", path.display());
        }
        if s == steps {
            break;
        }
        let info = eom::advance_with(&system, &fc, &mut wf, dt, &step_opts)?;
        *dim_histogram.entry(info.orbital_report.dim_used).or_insert(0) += 1;
        for r in &info.ci_reports {
            *dim_histogram.entry(r.dim_used).or_insert(0) += 1;
        }
        if info.orbital_report.hit_max {
            log::warn!(
                "step {s}: Krylov dimension cap {} reached (estimate {:e})",
                step_opts.m_max,
                info.orbital_report.error_estimate
            );
        }
    }

    // spectrum of the recorded dipole along the laser polarization
    let axis = spectrum_axis(cfg);
    if records.len() >= 8 {
        let trace: Vec<(f64, f64)> =
            records.iter().map(|r| (r.t, r.dipole[axis])).collect();
        let spec = hhg_spectrum(&trace, Window::Hann, Quantity::AccelerationByDifferentiation)?;
        let mut f = std::fs::File::create(outdir.join("spectrum.dat"))?;
        writeln!(f, "# omega[au]  intensity[normalized]  (dipole axis {axis}, Hann window, acceleration form)")?;
        for (w, v) in &spec {
            writeln!(f, "{w:.12e} {v:.12e}")?;
        }
    } else {
        log::info!("fewer than 8 observable records; spectrum skipped");
    }

    // run summary
    {
        let mut f = std::fs::File::create(outdir.join("runinfo.txt"))?;
        writeln!(f, "ground_energy_hartree: {ground_energy:.12}")?;
        if let Some(last) = records.last() {
            writeln!(f, "final_energy_hartree: {:.12} {:+.3e}i", last.energy.re, last.energy.im)?;
            writeln!(f, "final_norm_c: {:.12}", last.norm_c)?;
        }
        writeln!(f, "steps: {} (from {start_step})", steps)?;
        writeln!(f, "wall_seconds: {:.1}", wall_start.elapsed().as_secs_f64())?;
        writeln!(f, "krylov_dim_histogram:")?;
        for (d, count) in &dim_histogram {
            writeln!(f, "  {d}: {count}")?;
        }
    }
    log::info!(
        "run finished in {:.1} s; Krylov dims used: {:?}",
        wall_start.elapsed().as_secs_f64(),
        dim_histogram
    );

    Ok(RunOutcome { outdir, ground_energy, records, final_wf: wf })
}

/// Convenience entry: parse, validate, run.
pub fn run_from_path(path: &str, overrides: &[String]) -> Result<RunOutcome, DriverError> {
    let (_, text) = RunConfig::load(path)?;
    let text = if overrides.is_empty() {
        text
    } else {
        RunConfig::apply_overrides(&text, overrides)?
    };
    let cfg = RunConfig::from_str_validated(&text)?;
    run(&cfg, &text)
}

/// Resume from a checkpoint file.
pub fn resume_from_path(path: &str, outdir: Option<&str>) -> Result<RunOutcome, DriverError> {
    let f = std::fs::File::open(path)?;
    let data = read_checkpoint(std::io::BufReader::new(f))?;
    resume(data, outdir)
}

/// `mesh-dump`: write the refined mesh as text (stdout-style writer) and
/// optionally legacy VTK.
pub fn mesh_dump<W: Write>(cfg: &RunConfig, mut text_out: W, vtk_path: Option<&Path>) -> Result<usize, DriverError> {
    let mesh = build_run_mesh(cfg)?;
    mesh.dump_text(&mut text_out)?;
    if let Some(p) = vtk_path {
        let mut f = std::fs::File::create(p)?;
        mesh.dump_vtk(&mut f)?;
    }
    Ok(mesh.n_leaves())
}
