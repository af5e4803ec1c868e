//! The four subcommands. Each returns its data so callers can test it
//! without going through files or stdout.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use fpg_core::divergence::GeneratorKind;
use fpg_core::envs::Environment;
use fpg_core::fpg::{
    compute_constants, landscape, optimal_value, recommend_schedule, train_with_optimum, LandscapePoint, Mode,
    Schedule, TauChoice, TheoryConstants, TrainConfig,
};
use fpg_core::gradients::exact_point;
use fpg_core::improve::Threshold;
use fpg_core::mdp::RegularizedProblem;
use fpg_core::table::Logits;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Config, StepSize};
use crate::error::{CliError, Result};

pub const LANDSCAPE_HEADER: &str = "theta1,theta2,reg_value,grad_norm";

fn environment(cfg: &Config) -> Result<Environment> {
    Ok(cfg.env_spec()?.build(cfg.gamma)?)
}

fn problem(env: &Environment, kind: GeneratorKind, lambda: f64) -> Result<RegularizedProblem> {
    Ok(RegularizedProblem::with_uniform_reference(
        env.mdp.clone(),
        kind,
        lambda,
    )?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `git describe` of the working directory, or `"unknown"` outside a repository.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Grid of `(θ₁, θ₂, ṽ_θ(ρ), ‖∇ṽ_θ‖₂)` on a two-action bandit, written as CSV to `out`.
pub fn cmd_landscape(cfg: &Config, out: impl Write) -> Result<Vec<LandscapePoint>> {
    let env = environment(cfg)?;
    let (kind, lambda) = cfg.single_problem()?;
    if env.mdp.n_states() != 1 || env.mdp.n_actions() != 2 {
        return Err(CliError::Invalid(format!(
            "landscape needs a two-armed bandit, got {}",
            env.name
        )));
    }
    let prob = problem(&env, kind, lambda)?;
    let points = landscape(&prob, cfg.grid_lo, cfg.grid_hi, cfg.grid_step)?;
    let mut w = csv::Writer::from_writer(out);
    for p in &points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| CliError::io("landscape output", e))?;
    Ok(points)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub env: String,
    pub gamma: f64,
    pub generator: String,
    pub lambda: f64,
    pub horizon_for_beta: usize,
    pub epsilon: f64,
    pub batch_size: usize,
    /// `ṽ⋆(ρ) − ṽ_0(ρ)` at zero logits.
    pub initial_gap: f64,
    pub constants: TheoryConstants,
    pub recommended: Schedule,
}

pub fn cmd_constants(cfg: &Config) -> Result<ConstantsReport> {
    let env = environment(cfg)?;
    let (kind, lambda) = cfg.single_problem()?;
    let prob = problem(&env, kind, lambda)?;
    let constants = compute_constants(&prob, cfg.horizon)?;
    let start = exact_point(&prob, &Logits::zeros(env.mdp.n_states(), env.mdp.n_actions()))?;
    let initial_gap = (optimal_value(&prob)? - start.value_at(env.mdp.rho())).max(0.0);
    let recommended = recommend_schedule(&prob, &constants, cfg.epsilon, cfg.batch_size, initial_gap);
    Ok(ConstantsReport {
        env: env.name,
        gamma: cfg.gamma,
        generator: kind.to_string(),
        lambda,
        horizon_for_beta: cfg.horizon,
        epsilon: cfg.epsilon,
        batch_size: cfg.batch_size,
        initial_gap,
        constants,
        recommended,
    })
}

pub fn cmd_env(cfg: &Config) -> Result<Environment> {
    environment(cfg)
}

/// Settings shared by every run of a grid cell; hashed into `meta.json`.
#[derive(Debug, Clone, Serialize)]
pub struct CellConfig {
    pub env: String,
    pub gamma: f64,
    pub generator: String,
    pub lambda: f64,
    pub eta: f64,
    pub eta_auto: bool,
    pub batch_size: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub mode: Mode,
    pub tau: TauChoice,
    pub log_every: usize,
    pub stop_gap: Option<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub csv: String,
    pub csv_sha256: String,
    pub final_value: f64,
    pub final_reg_value: f64,
    pub final_gap: f64,
    pub tau: Option<Threshold>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellMeta {
    pub experiment: String,
    pub cell: String,
    pub config: CellConfig,
    pub config_hash: String,
    pub git_describe: String,
    pub optimum: f64,
    pub constants: TheoryConstants,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub generator: String,
    pub lambda: f64,
    pub eta: f64,
    pub runs: usize,
    pub final_return_mean: f64,
    /// `None` with fewer than two runs.
    pub final_return_se: Option<f64>,
    pub final_reg_value_mean: f64,
    pub final_reg_value_se: Option<f64>,
    pub final_gap_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub experiment: String,
    pub config_hash: String,
    pub git_describe: String,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
    pub summary: TrainSummary,
    pub cells: Vec<CellMeta>,
}

struct Cell {
    id: String,
    prob: RegularizedProblem,
    config: CellConfig,
    train: TrainConfig,
    constants: TheoryConstants,
    optimum: f64,
}

fn cell_id(kind: GeneratorKind, lambda: f64, eta: StepSize) -> String {
    let eta = match eta {
        StepSize::Auto => "auto".to_string(),
        StepSize::Fixed(e) => e.to_string(),
    };
    format!("{}_lambda{lambda}_eta{eta}", kind.to_string().replace(':', "-"))
}

fn build_cells(cfg: &Config) -> Result<Vec<Cell>> {
    let env = environment(cfg)?;
    let tau = cfg.tau_choice()?;
    let seeds = cfg.seed_list();
    let mut cells = Vec::new();
    for kind in cfg.generators()? {
        for lambda in cfg.lambda.values() {
            let prob = problem(&env, kind, lambda)?;
            let constants = compute_constants(&prob, cfg.horizon)?;
            let optimum = optimal_value(&prob)?;
            for step in cfg.step_sizes()? {
                let eta = match step {
                    StepSize::Auto => constants.eta_default,
                    StepSize::Fixed(e) => e,
                };
                let train = TrainConfig {
                    eta,
                    batch_size: cfg.batch_size,
                    horizon: cfg.horizon,
                    iterations: cfg.iterations,
                    mode: cfg.mode,
                    tau,
                    seed: cfg.seed,
                    log_every: cfg.log_every,
                    stop_gap: cfg.stop_gap,
                };
                train.validate()?;
                cells.push(Cell {
                    id: cell_id(kind, lambda, step),
                    config: CellConfig {
                        env: env.name.clone(),
                        gamma: cfg.gamma,
                        generator: kind.to_string(),
                        lambda,
                        eta,
                        eta_auto: step == StepSize::Auto,
                        batch_size: cfg.batch_size,
                        horizon: cfg.horizon,
                        iterations: cfg.iterations,
                        mode: cfg.mode,
                        tau,
                        log_every: cfg.log_every,
                        stop_gap: cfg.stop_gap,
                        seeds: seeds.clone(),
                    },
                    prob: prob.clone(),
                    train,
                    constants: constants.clone(),
                    optimum,
                });
            }
        }
    }
    let mut ids: Vec<&str> = cells.iter().map(|c| c.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Invalid(format!("grid contains the cell {} twice", w[0])));
    }
    Ok(cells)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn run_one(cell: &Cell, seed: u64, dir: &Path) -> Result<RunSummary> {
    let cfg = TrainConfig {
        seed,
        ..cell.train.clone()
    };
    let mdp = &cell.prob.mdp;
    let theta0 = Logits::zeros(mdp.n_states(), mdp.n_actions());
    let (_, record) = train_with_optimum(&cell.prob, &cfg, &theta0, cell.optimum)?;
    let csv = record.to_csv();
    let name = format!("{seed}.csv");
    write(&dir.join(&name), csv.as_bytes())?;
    let last = record.last().expect("a run logs its initial iterate");
    Ok(RunSummary {
        seed,
        csv: name,
        csv_sha256: sha256_hex(csv.as_bytes()),
        final_value: last.value,
        final_reg_value: last.reg_value,
        final_gap: last.gap,
        tau: record.tau,
        warnings: record.warnings,
    })
}

fn mean_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Runs every (generator × λ × η) cell for every seed, `jobs` runs at a time.
///
/// Writes `<out_dir>/<experiment>/<cell>/<seed>.csv`, a `meta.json` per cell
/// and `<out_dir>/<experiment>/summary.json`.
pub fn cmd_train(cfg: &Config, jobs: usize) -> Result<TrainOutput> {
    let cells = build_cells(cfg)?;
    let dir = Path::new(&cfg.out_dir).join(&cfg.experiment);
    for c in &cells {
        let d = dir.join(&c.id);
        std::fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
    }
    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|i| cells[i].config.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let results: Vec<Result<RunSummary>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, seed)| run_one(&cells[i], seed, &dir.join(&cells[i].id)))
            .collect()
    });

    let git = git_describe();
    let mut runs: Vec<Vec<RunSummary>> = vec![Vec::new(); cells.len()];
    for (&(i, _), r) in tasks.iter().zip(results) {
        runs[i].push(r?);
    }
    let mut metas = Vec::with_capacity(cells.len());
    let mut summaries = Vec::with_capacity(cells.len());
    for (cell, runs) in cells.into_iter().zip(runs) {
        let finals: Vec<f64> = runs.iter().map(|r| r.final_value).collect();
        let regs: Vec<f64> = runs.iter().map(|r| r.final_reg_value).collect();
        let gaps: Vec<f64> = runs.iter().map(|r| r.final_gap).collect();
        let (final_return_mean, final_return_se) = mean_se(&finals);
        let (final_reg_value_mean, final_reg_value_se) = mean_se(&regs);
        summaries.push(CellSummary {
            cell: cell.id.clone(),
            generator: cell.config.generator.clone(),
            lambda: cell.config.lambda,
            eta: cell.config.eta,
            runs: runs.len(),
            final_return_mean,
            final_return_se,
            final_reg_value_mean,
            final_reg_value_se,
            final_gap_mean: mean_se(&gaps).0,
        });
        let meta = CellMeta {
            experiment: cfg.experiment.clone(),
            config_hash: sha256_hex(&serde_json::to_vec(&cell.config)?),
            cell: cell.id,
            config: cell.config,
            git_describe: git.clone(),
            optimum: cell.optimum,
            constants: cell.constants,
            runs,
        };
        write(
            &dir.join(&meta.cell).join("meta.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        metas.push(meta);
    }
    let summary = TrainSummary {
        experiment: cfg.experiment.clone(),
        config_hash: sha256_hex(&serde_json::to_vec(cfg)?),
        git_describe: git,
        cells: summaries,
    };
    write(&dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(TrainOutput {
        dir,
        summary,
        cells: metas,
    })
}
