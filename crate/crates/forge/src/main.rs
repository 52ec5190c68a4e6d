use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use cuap_core::detector::ArchId;
use cuap_core::eval::{ModelKey, ModelRole, ScenarioKind};
use cuap_forge::{DataKind, ExperimentConfig, Workspace};

/// Class-specific universal perturbation experiments on synthetic RF
/// spectrograms.
#[derive(Debug, Parser)]
#[command(name = "cuap-forge", version)]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides the config's `out_dir`.
    #[arg(long, global = true, env = "CUAP_FORGE_OUT")]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the detector and attack datasets and their manifests.
    GenData,
    /// Train one detector (or every configured one with --all).
    TrainDetector {
        #[arg(long, value_parser = parse_arch, required_unless_present = "all")]
        arch: Option<ArchId>,
        #[arg(long, value_parser = parse_role, default_value = "victim")]
        role: ModelRole,
        /// Victims and surrogates of every configured architecture.
        #[arg(long, conflicts_with = "arch")]
        all: bool,
    },
    /// Train a perturbation tile for one scenario and evaluated model.
    TrainAttack {
        #[arg(long, value_parser = parse_scenario)]
        scenario: ScenarioKind,
        #[arg(long, value_parser = parse_arch)]
        arch: ArchId,
        /// Minimum signal-to-perturbation ratio in dB.
        #[arg(long)]
        spr: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Write AP, over-the-air MDR and shift tables to reports/.
    Evaluate {
        /// Accept inputs produced under a different config.
        #[arg(long)]
        force: bool,
        /// Only the clean row per model.
        #[arg(long)]
        clean_only: bool,
    },
    /// Train and evaluate white-box tiles across budget levels.
    SweepSpr {
        #[arg(long, value_parser = parse_arch)]
        arch: Option<ArchId>,
        /// Comma-separated levels in dB, weakest first.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Export a scene's spectrogram as PNG and raw f32 with box overlays.
    Render {
        #[arg(long, value_parser = parse_kind, default_value = "attack")]
        dataset: DataKind,
        #[arg(long)]
        index: usize,
        /// Overlay this victim's detections.
        #[arg(long, value_parser = parse_arch)]
        arch: Option<ArchId>,
        /// Apply a stored perturbation (by name) before rendering.
        #[arg(long)]
        attack: Option<String>,
    },
}

fn parse_arch(s: &str) -> Result<ArchId, String> {
    ArchId::parse(s).ok_or_else(|| format!("unknown architecture `{s}` (expected A, B or C)"))
}

fn parse_role(s: &str) -> Result<ModelRole, String> {
    match s {
        "victim" => Ok(ModelRole::Victim),
        "surrogate" => Ok(ModelRole::Surrogate),
        _ => Err(format!("unknown role `{s}` (expected victim or surrogate)")),
    }
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    ScenarioKind::parse(s).ok_or_else(|| format!("unknown scenario `{s}` (expected WB, GB, CS or BB)"))
}

fn parse_kind(s: &str) -> Result<DataKind, String> {
    DataKind::parse(s).ok_or_else(|| format!("unknown dataset `{s}` (expected detector or attack)"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let root = cli.out.clone().or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ws = Workspace::new(root, config)?.with_progress(|m| eprintln!("{m}"));
    let cfg = ws.config().clone();

    match cli.command {
        Command::GenData => {
            let s = ws.gen_data()?;
            println!("{} {}", s.detector_manifest_sha256, s.detector_manifest.display());
            println!("{} {}", s.attack_manifest_sha256, s.attack_manifest.display());
        }
        Command::TrainDetector { arch, role, all } => {
            let keys: Vec<ModelKey> = if all {
                cfg.detector
                    .archs
                    .iter()
                    .flat_map(|&a| [ModelKey::victim(a), ModelKey::surrogate(a)])
                    .collect()
            } else {
                vec![ModelKey { arch: arch.expect("required by clap"), role }]
            };
            for key in keys {
                let t = ws.train_detector(key, |e| {
                    eprintln!("  epoch {:>3} loss {:.4} (cls {:.4}, box {:.4})", e.epoch + 1, e.loss, e.class_loss, e.box_loss)
                })?;
                println!(
                    "{} {} target AP {} non-target mAP {}",
                    t.descriptor.weights_sha256,
                    t.path.display(),
                    fmt_opt(t.metrics.target_ap),
                    fmt_opt(t.metrics.non_target_map)
                );
            }
        }
        Command::TrainAttack { scenario, arch, spr, iterations } => {
            let spr = spr.unwrap_or(cfg.attack.min_spr_db);
            let t = ws.train_attack(scenario, arch, spr, iterations, |l| {
                if l.iter % 10 == 0 || l.val_target_ap.is_some() {
                    eprintln!(
                        "  iter {:>4} evade {:.4} protect {:.5} SPR {:.2} dB{}",
                        l.iter,
                        l.evade,
                        l.protect,
                        l.spr_db,
                        l.val_target_ap.map_or(String::new(), |a| format!(" val AP {a:.3}"))
                    );
                }
            })?;
            println!("{} {}", t.sidecar.samples_sha256, t.path.display());
        }
        Command::Evaluate { force, clean_only } => {
            let s = ws.evaluate(force, clean_only)?;
            println!("{:<6} {:<10} {:>10} {:>14}", "model", "condition", "target AP", "non-target mAP");
            for r in &s.ap.rows {
                println!(
                    "{:<6} {:<10} {:>10} {:>14}",
                    r.model,
                    r.condition,
                    fmt_opt(r.target_ap),
                    fmt_opt(r.non_target_map)
                );
            }
            if let Some(ota) = &s.ota {
                println!("{:<6} {:<10} {:>10} {:>14}", "model", "condition", "target MDR", "non-target MDR");
                for r in &ota.rows {
                    println!(
                        "{:<6} {:<10} {:>10} {:>14}",
                        r.model,
                        r.condition,
                        fmt_opt(r.target_mdr),
                        fmt_opt(r.non_target_mdr)
                    );
                }
            }
            println!("reports written to {}", ws.reports_dir().display());
        }
        Command::SweepSpr { arch, levels, iterations } => {
            let arch = arch.unwrap_or(cfg.eval.focus_arch);
            let levels = levels.unwrap_or_else(|| cfg.eval.sweep_spr_db.clone());
            if levels.is_empty() || !levels.windows(2).all(|w| w[0] > w[1]) {
                bail!("--levels must be strictly descending, weakest perturbation first");
            }
            let t = ws.sweep_spr(arch, &levels, iterations, |level, l| {
                if l.iter % 25 == 0 {
                    eprintln!("  {level} dB iter {:>4} evade {:.4}", l.iter, l.evade);
                }
            })?;
            println!("{:<8} {:>10} {:>14}", "SPR dB", "target AP", "non-target mAP");
            for r in &t.rows {
                println!("{:<8} {:>10} {:>14}", r.spr_db, fmt_opt(r.target_ap), fmt_opt(r.non_target_map));
            }
        }
        Command::Render { dataset, index, arch, attack } => {
            let path = ws.render(dataset, index, arch, attack.as_deref())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
