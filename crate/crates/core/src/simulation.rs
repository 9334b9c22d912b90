//! Experiment driver: builds the initial state from a configuration, runs the
//! time loop with optional adaptivity, and writes CSV, manifest and checkpoints.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::adaptivity::{adapt_state, AdaptConfig, AdaptReport};
use crate::checkpoint::{self, Checkpoint, Reference};
use crate::config::SimConfig;
use crate::dg::DgSpace;
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::integrators::{integrators, run, Problem, RunHooks, RunOptions};
use crate::lowrank::{init_state, LowRankState, SeparableTerm};
use crate::mesh::PeriodicMesh;
use crate::output::{adapt_header, adapt_row, csv_header, csv_row, write_manifest, CsvWriter, RunInfo};

pub const CSV_FILE: &str = "run.csv";
pub const ADAPT_CSV_FILE: &str = "adapt.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const FAILURE_CHECKPOINT: &str = "failure.ckpt";

#[derive(Debug, Clone)]
pub struct AdaptEvent {
    pub step: usize,
    pub t: f64,
    pub report: AdaptReport,
}

/// Everything a run needs before the first step.
pub struct Prepared {
    pub state: LowRankState,
    pub problem: Problem,
    pub t0: f64,
    pub step0: usize,
    /// Known for resumed runs; otherwise taken from the first record.
    pub reference: Option<Reference>,
    /// Mesh changes made while adapting the initial condition.
    pub initial_adapt: Vec<AdaptEvent>,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub state: LowRankState,
    pub records: Vec<DiagnosticsRecord>,
    pub reference: Reference,
    pub adapt_log: Vec<AdaptEvent>,
    pub steps: usize,
    pub t: f64,
}

pub fn build_spaces(cfg: &SimConfig) -> Result<(Arc<DgSpace>, Arc<DgSpace>)> {
    let m = &cfg.mesh;
    let ext = |d: &[[f64; 2]]| d.iter().map(|[a, b]| (*a, *b)).collect::<Vec<_>>();
    let mx = PeriodicMesh::build_uniform(m.dim, &ext(&m.x_domain), &m.n_x)?;
    let mv = PeriodicMesh::build_uniform(m.dim, &ext(&m.v_domain), &m.n_v)?;
    Ok((Arc::new(DgSpace::new(Arc::new(mx), m.degree)), Arc::new(DgSpace::new(Arc::new(mv), m.degree))))
}

fn adapt_config(cfg: &SimConfig) -> Option<AdaptConfig> {
    cfg.adaptivity.enabled.then(|| cfg.adaptivity.adapt())
}

fn initial_terms(cfg: &SimConfig) -> Result<Vec<SeparableTerm>> {
    Ok(cfg.scenario_impl()?.initial_terms(cfg.mesh.dim, &cfg.custom))
}

/// Projects the initial condition; with adaptivity on, the mesh is adapted and
/// the initial condition projected again until the mesh stops changing.
pub fn prepare(cfg: &SimConfig) -> Result<Prepared> {
    let (sx, sv) = build_spaces(cfg)?;
    let terms = initial_terms(cfg)?;
    let it = &cfg.integrator;
    let project = |sx: &Arc<DgSpace>, sv: &Arc<DgSpace>| init_state(&terms, sx, sv, it.m, it.weight, it.min_rank);
    let mut state = project(&sx, &sv)?;
    let mut initial_adapt = Vec::new();
    if let Some(acfg) = adapt_config(cfg) {
        for _ in 0..=acfg.max_level as usize + 1 {
            let (adapted, report) = adapt_state(&state, &acfg)?;
            if !report.changed() {
                break;
            }
            initial_adapt.push(AdaptEvent { step: 0, t: 0.0, report });
            state = project(adapted.space_x(), adapted.space_v())?;
        }
        log::info!(
            "initial mesh: {} spatial and {} velocity elements",
            state.space_x().n_elements(),
            state.space_v().n_elements()
        );
    }
    let problem = Problem::for_state(&state, cfg.field.model, &cfg.field.solver)?;
    Ok(Prepared { state, problem, t0: 0.0, step0: 0, reference: None, initial_adapt })
}

/// Continues from a checkpoint written by a run with compatible settings.
pub fn prepare_resume(cfg: &SimConfig, ck: Checkpoint) -> Result<Prepared> {
    let st = &ck.state;
    let mut problems = Vec::new();
    if st.space_x().dim() != cfg.mesh.dim {
        problems.push(format!("dimension {} (config: {})", st.space_x().dim(), cfg.mesh.dim));
    }
    if st.m != cfg.integrator.m {
        problems.push(format!("m = {} (config: {})", st.m, cfg.integrator.m));
    }
    if st.weight != cfg.integrator.weight {
        problems.push(format!("weight {:?} (config: {:?})", st.weight, cfg.integrator.weight));
    }
    if st.space_x().degree() != cfg.mesh.degree {
        problems.push(format!("degree {} (config: {})", st.space_x().degree(), cfg.mesh.degree));
    }
    if !(ck.t < cfg.time.t_final) {
        problems.push(format!("checkpoint time {} is not before t_final = {}", ck.t, cfg.time.t_final));
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!("incompatible with configuration: {}", problems.join("; "))));
    }
    let problem = Problem::for_state(st, cfg.field.model, &cfg.field.solver)?;
    Ok(Prepared {
        problem,
        t0: ck.t,
        step0: ck.step as usize,
        reference: Some(ck.reference),
        initial_adapt: Vec::new(),
        state: ck.state,
    })
}

struct Driver<'a> {
    cfg: &'a SimConfig,
    adapt: Option<AdaptConfig>,
    out_dir: Option<&'a Path>,
    csv: Option<CsvWriter>,
    adapt_csv: Option<CsvWriter>,
    reference: Option<Reference>,
    adapt_log: Vec<AdaptEvent>,
    progress_every: usize,
    /// A resumed run already wrote its first record.
    skip_first_row: bool,
    steps_done: u64,
    t: f64,
}

impl Driver<'_> {
    fn log_adapt(&mut self, ev: AdaptEvent) -> Result<()> {
        if let Some(w) = self.adapt_csv.as_mut() {
            for (name, r) in [("x", &ev.report.spatial), ("v", &ev.report.velocity)] {
                if let Some(r) = r {
                    w.write_row(&adapt_row(ev.step, ev.t, name, r))?;
                }
            }
        }
        self.adapt_log.push(ev);
        Ok(())
    }

    fn checkpoint(&self, name: &str, step: usize, t: f64, state: &LowRankState) -> Result<()> {
        let (Some(dir), Some(reference)) = (self.out_dir, &self.reference) else {
            return Ok(());
        };
        let ck = Checkpoint { t, step: step as u64, reference: reference.clone(), state: state.clone() };
        checkpoint::save(&dir.join(name), &ck)
    }
}

impl RunHooks for Driver<'_> {
    fn post_step(&mut self, step: usize, t: f64, state: LowRankState, problem: &mut Problem) -> Result<LowRankState> {
        if self.progress_every > 0 && step % self.progress_every == 0 {
            log::info!("step {step}, t = {t:.6}, rank {}", state.rank());
        }
        let Some(acfg) = self.adapt else {
            return Ok(state);
        };
        if step % self.cfg.adaptivity.stride != 0 {
            return Ok(state);
        }
        let (adapted, report) = adapt_state(&state, &acfg)?;
        if !report.changed() {
            return Ok(state);
        }
        let strategy = problem.poisson_strategy().to_string();
        *problem = Problem::for_state(&adapted, problem.model, &strategy)?;
        self.log_adapt(AdaptEvent { step, t, report })?;
        Ok(adapted)
    }

    fn record(&mut self, step: usize, rec: &DiagnosticsRecord, state: &LowRankState) -> Result<()> {
        let reference = self.reference.get_or_insert_with(|| Reference::of(rec));
        if let Some(w) = self.csv.as_mut() {
            if !std::mem::take(&mut self.skip_first_row) {
                w.write_row(&csv_row(rec, reference))?;
                w.flush()?;
            }
        }
        self.steps_done = step as u64;
        self.t = rec.t;
        let every = self.cfg.output.checkpoint_stride;
        if every > 0 && step > 0 && step % every == 0 {
            self.checkpoint(LATEST_CHECKPOINT, step, rec.t, state)?;
        }
        Ok(())
    }

    fn on_failure(&mut self, step: usize, t: f64, state: &LowRankState, err: &Error) {
        log::error!("run failed after step {step} (t = {t}): {err}");
        if let Err(e) = self.checkpoint(FAILURE_CHECKPOINT, step, t, state) {
            log::error!("could not write failure checkpoint: {e}");
        }
    }
}

/// Builds and runs a simulation. With `out_dir` set, writes `run.csv`,
/// `adapt.csv` (adaptive runs), `manifest.toml` and checkpoints there.
pub fn simulate(cfg: &SimConfig, out_dir: Option<&Path>, resume: Option<&Path>) -> Result<SimulationOutcome> {
    let prepared = match resume {
        Some(p) => prepare_resume(cfg, checkpoint::load(p)?)?,
        None => prepare(cfg)?,
    };
    simulate_prepared(cfg, prepared, out_dir, resume)
}

pub fn simulate_prepared(
    cfg: &SimConfig,
    prepared: Prepared,
    out_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<SimulationOutcome> {
    let integrator = integrators().get(&cfg.integrator.scheme)?;
    let icfg = cfg.integrator_config();
    let Prepared { state, mut problem, t0, step0, reference, initial_adapt } = prepared;
    let resumed = reference.is_some();

    let (mut csv, mut adapt_csv) = (None, None);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CSV_FILE);
        csv = Some(if resumed && path.exists() {
            CsvWriter::append(&path)?
        } else {
            CsvWriter::create(&path, &csv_header(cfg.mesh.dim))?
        });
        if cfg.adaptivity.enabled {
            let path = dir.join(ADAPT_CSV_FILE);
            adapt_csv = Some(if resumed && path.exists() {
                CsvWriter::append(&path)?
            } else {
                CsvWriter::create(&path, &adapt_header())?
            });
        }
    }

    let n_steps = crate::integrators::step_count(t0, cfg.time.t_final, cfg.time.tau);
    let mut driver = Driver {
        cfg,
        adapt: adapt_config(cfg),
        out_dir,
        csv,
        adapt_csv,
        reference,
        adapt_log: Vec::new(),
        progress_every: (n_steps / 10).max(1),
        skip_first_row: resumed && out_dir.is_some_and(|d| d.join(CSV_FILE).exists()),
        steps_done: step0 as u64,
        t: t0,
    };
    for ev in initial_adapt {
        driver.log_adapt(ev)?;
    }

    let opts = RunOptions { t_final: cfg.time.t_final, stride: cfg.output.stride, t0, step0 };
    let result = run(state, &mut problem, integrator.as_ref(), &icfg, &opts, &mut driver);
    if let Some(w) = driver.adapt_csv.as_mut() {
        w.flush()?;
    }
    let status = match &result {
        Ok(_) => "completed".to_string(),
        Err(e) => format!("failed: {e}"),
    };
    if let Some(dir) = out_dir {
        let info = RunInfo {
            program: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            status,
            steps: driver.steps_done,
            t_final_reached: driver.t,
            resumed_from: resume.map(|p| p.display().to_string()),
        };
        write_manifest(&dir.join(MANIFEST_FILE), &info, cfg)?;
    }
    let outcome = result?;
    driver.checkpoint(FINAL_CHECKPOINT, step0 + outcome.steps, outcome.t, &outcome.state)?;
    Ok(SimulationOutcome {
        reference: driver.reference.clone().expect("the initial state is always recorded"),
        adapt_log: driver.adapt_log,
        state: outcome.state,
        records: outcome.records,
        steps: outcome.steps,
        t: outcome.t,
    })
}

/// Output directory: the CLI flag wins over the configured one.
pub fn output_dir(cfg: &SimConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.clone())
}
