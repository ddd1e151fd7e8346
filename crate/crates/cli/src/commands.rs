//! Subcommand runners. Each writes its artifacts plus a `run.json` sidecar
//! into a single output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gdlab::lyapunov::{self, init_seed};
use gdlab::sharpness::sharpness_trace;
use gdlab::sweep::{find_sweet_spot, lr_sweep};
use gdlab::toymap::{self, ToyMapConfig};
use gdlab::trainer::train;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::task;

pub const SIDECAR: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Lyap,
    Sweep,
    SweetSpot,
    Sharpness,
    ToyBifurcation,
    ToyLyap,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Lyap => "lyap",
            Command::Sweep => "sweep",
            Command::SweetSpot => "sweetspot",
            Command::Sharpness => "sharpness",
            Command::ToyBifurcation => "toymap bifurcation",
            Command::ToyLyap => "toymap lyap",
        }
    }

    /// Default output directory name under `out/`.
    pub fn dir_name(self) -> &'static str {
        match self {
            Command::ToyBifurcation => "toymap-bifurcation",
            Command::ToyLyap => "toymap-lyap",
            c => c.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub subcommand: String,
    pub resolved_config: ExperimentConfig,
    pub master_seed: u64,
    pub artifact_files: Vec<String>,
    pub tool_version: String,
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Create `dir`, refusing to reuse a non-empty directory unless `overwrite`.
/// When overwriting, files listed by a previous sidecar are removed first so
/// no stale artifacts survive.
fn prepare_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .with_context(|| format!("cannot read {}", dir.display()))?
            .next()
            .is_some();
        if non_empty && !overwrite {
            bail!(
                "output directory {} already exists and is not empty (pass --overwrite to replace it)",
                dir.display()
            );
        }
        let old = dir.join(SIDECAR);
        if let Ok(text) = fs::read_to_string(&old) {
            if let Ok(prev) = serde_json::from_str::<Sidecar>(&text) {
                for f in prev.artifact_files {
                    let p = dir.join(&f);
                    if Path::new(&f).file_name() == Some(f.as_ref()) && p.is_file() {
                        fs::remove_file(&p)?;
                    }
                }
            }
            fs::remove_file(&old)?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(())
}

fn toy_config(cfg: &ExperimentConfig) -> ToyMapConfig {
    ToyMapConfig {
        n_transient: cfg.toymap.n_transient,
        n_record: cfg.toymap.n_record,
        n_lyapunov: cfg.toymap.n_lyapunov,
        seed: cfg.master_seed,
        ..ToyMapConfig::default()
    }
}

/// Run one subcommand and write its artifacts into `dir`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, dir: &Path, overwrite: bool) -> Result<Sidecar> {
    let needs_task = !matches!(cmd, Command::ToyBifurcation | Command::ToyLyap);
    let loaded = if needs_task {
        Some(task::load(cfg.task()?)?)
    } else {
        None
    };
    prepare_dir(dir, overwrite)?;
    let mut out = Output {
        dir: dir.to_path_buf(),
        files: Vec::new(),
    };
    let master = cfg.master_seed;
    log::info!("{}: writing to {}", cmd.name(), dir.display());

    match cmd {
        Command::Train => {
            let t = loaded.as_ref().expect("task loaded");
            let params0 = t.spec.init_params(t.scheme, init_seed(master, cfg.init_index));
            let rec = train(&t.spec, &t.split, &params0, &cfg.train)?;
            log::info!(
                "{} epochs, tau = {:?}, diverged = {}",
                rec.epochs(),
                rec.tau,
                rec.diverged
            );
            out.write("trajectory.csv", |w| Ok(rec.write_csv(w)?))?;
        }
        Command::Lyap => {
            let t = loaded.as_ref().expect("task loaded");
            let (est, series) = lyapunov::estimate_nmle(
                &t.spec,
                &t.split,
                &cfg.train,
                &cfg.perturbation,
                t.scheme,
                cfg.n_inits,
                master,
            )?;
            log::info!("nmle = {} +/- {}, rho = {}%", est.nmle, est.nmle_std, est.rho);
            out.write("lyapunov.csv", |w| Ok(est.write_csv(w)?))?;
            for (i, s) in series.iter().enumerate() {
                out.write(&format!("divergence_{i:03}.csv"), |w| Ok(s.write_csv(w)?))?;
            }
        }
        Command::Sweep => {
            let t = loaded.as_ref().expect("task loaded");
            let res = lr_sweep(
                &t.spec,
                &t.split,
                &cfg.sweep.etas,
                &cfg.train,
                &cfg.perturbation,
                t.scheme,
                cfg.n_inits,
                master,
            )?;
            out.write("sweep.csv", |w| Ok(res.write_csv(w)?))?;
        }
        Command::SweetSpot => {
            let t = loaded.as_ref().expect("task loaded");
            let s = &cfg.sweetspot;
            let b = find_sweet_spot(
                &t.spec,
                &t.split,
                s.eta_lo,
                s.eta_hi,
                &cfg.train,
                &cfg.perturbation,
                t.scheme,
                cfg.n_inits,
                s.rho_target,
                s.tol,
                master,
            )?;
            log::info!("eta_star = {}", b.eta_star);
            out.write("sweetspot.json", |w| {
                serde_json::to_writer_pretty(&mut *w, &b)?;
                writeln!(w)?;
                Ok(())
            })?;
        }
        Command::Sharpness => {
            let t = loaded.as_ref().expect("task loaded");
            let seed = init_seed(master, cfg.init_index);
            let params0 = t.spec.init_params(t.scheme, seed);
            let s = &cfg.sharpness;
            let trace = sharpness_trace(
                &t.spec,
                &t.split,
                &params0,
                &cfg.train,
                s.every,
                s.pi_iters,
                s.pi_tol,
                seed,
            )?;
            log::info!("{} samples, {} Hessian-vector products", trace.samples.len(), trace.hvp_calls);
            out.write("sharpness.csv", |w| Ok(trace.write_csv(w)?))?;
        }
        Command::ToyBifurcation => {
            let cols = toymap::bifurcation_diagram(&cfg.toymap.grid(), &toy_config(cfg))?;
            out.write("bifurcation.csv", |w| Ok(toymap::write_bifurcation_csv(&cols, w)?))?;
        }
        Command::ToyLyap => {
            let curve = toymap::lyapunov_curve(&cfg.toymap.grid(), &toy_config(cfg))?;
            out.write("toy_lyapunov.csv", |w| Ok(toymap::write_lyapunov_csv(&curve, w)?))?;
        }
    }

    let sidecar = Sidecar {
        subcommand: cmd.name().to_string(),
        resolved_config: cfg.clone(),
        master_seed: master,
        artifact_files: out.files.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    out.write(SIDECAR, |w| {
        serde_json::to_writer_pretty(&mut *w, &sidecar)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(sidecar)
}

/// Look up a subcommand by its sidecar name.
pub fn from_name(name: &str) -> Option<Command> {
    [
        Command::Train,
        Command::Lyap,
        Command::Sweep,
        Command::SweetSpot,
        Command::Sharpness,
        Command::ToyBifurcation,
        Command::ToyLyap,
    ]
    .into_iter()
    .find(|c| c.name() == name)
}
