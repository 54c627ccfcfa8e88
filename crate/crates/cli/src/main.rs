use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dxagent::agent::Agent;
use dxagent::diagnoser::{train_diagnoser, Diagnoser};
use dxagent::eval::{baseline_full_observation, baseline_random, evaluate_with_episodes, run_ablation, EvalReport};
use dxagent::kb::{generate_dataset, load_knowledge_base, read_dataset, write_dataset, KbGenerator, KnowledgeBase};
use dxagent::ppo::{pretrain, train, TrainerConfig, Variant};
use dxagent::vae::{train_vae, PartialVae};
use dxagent_service::{FileStore, ModelBundle, SessionService};

#[derive(Parser)]
#[command(name = "dxagent", version, about = "Symptom-inquiry diagnosis agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random disease-symptom knowledge base.
    GenKb {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        diseases: usize,
        #[arg(long, default_value_t = 60)]
        symptoms: usize,
        #[arg(long, default_value_t = 3)]
        min_profile: usize,
        #[arg(long, default_value_t = 8)]
        max_profile: usize,
    },
    /// Sample train/valid/test patient records from a knowledge base.
    Synth {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        n_train: usize,
        #[arg(long, default_value_t = 5_000)]
        n_valid: usize,
        #[arg(long, default_value_t = 5_000)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the supervised diagnoser on a synthesized dataset.
    TrainDiagnoser {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretrain the partial VAE on a synthesized dataset.
    PretrainVae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Full pipeline: data, diagnoser, VAE, PPO, test evaluation.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Single rollout worker (the only mode; accepted for compatibility).
        #[arg(long)]
        serial: bool,
    },
    /// Greedy evaluation of a trained agent on the test split.
    Eval {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        diagnoser: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        max_turns: usize,
        /// Ranks to print; reports always carry top 1, 3 and 5.
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        topk: Vec<usize>,
        /// Include per-episode logs in the report.
        #[arg(long)]
        episodes: bool,
    },
    /// Reference policies without an agent.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long, default_value_t = 0)]
        budget: usize,
        #[arg(long)]
        diagnoser: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        max_turns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate an ablated variant.
    Ablate {
        /// `no_rs` or `no_vae`.
        #[arg(long)]
        variant: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Reuse the data, diagnoser and VAE of a previous `train` output directory.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve consultation sessions over HTTP.
    Serve {
        /// Output directory of `train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        max_turns: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Random,
    Full,
}

fn load_config(path: Option<&Path>) -> Result<TrainerConfig> {
    Ok(match path {
        Some(p) => TrainerConfig::from_json_file(p)?,
        None => TrainerConfig::default(),
    })
}

fn print_report(report: &EvalReport, topk: &[usize]) -> Result<()> {
    for &k in topk {
        let v = match k {
            1 => report.top1,
            3 => report.top3,
            5 => report.top5,
            other => bail!("top-{other} is not reported (use 1, 3 or 5)"),
        };
        println!("top{k}: {v:.2}%");
    }
    println!("avg_inquiries: {:.3}", report.avg_inquiries);
    println!("episodes: {}", report.n_episodes);
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::GenKb { out, seed, diseases, symptoms, min_profile, max_profile } => {
            let generator = KbGenerator { diseases, symptoms, min_profile, max_profile, ..KbGenerator::default() };
            let kb = generator.generate(seed)?;
            fs::write(&out, kb.to_json()).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Synth { kb, out, n_train, n_valid, n_test, seed } => {
            let kb = load_knowledge_base(&kb)?;
            let split = generate_dataset(&kb, n_train, n_valid, n_test, seed)?;
            write_dataset(&out, &kb, &split)?;
        }
        Command::TrainDiagnoser { data, out, config } => {
            let config = load_config(config.as_deref())?;
            let (kb, split) = read_dataset(&data)?;
            let (diag, log) = train_diagnoser(kb.symptoms().to_vec(), kb.diseases().to_vec(), &split.train, &split.valid, &config.diagnoser)?;
            diag.save(&out)?;
            if let Some(last) = log.last() {
                println!("valid_accuracy: {:.4}", last.valid_accuracy);
            }
        }
        Command::PretrainVae { data, out, config } => {
            let config = load_config(config.as_deref())?;
            let (kb, split) = read_dataset(&data)?;
            let (vae, log) = train_vae(kb.symptoms().to_vec(), &split.train, &split.valid, &config.vae)?;
            vae.save(&out)?;
            if let Some(last) = log.last() {
                println!("valid_loss: {:.4}", last.valid_loss);
            }
        }
        Command::Train { config, kb, out, serial: _ } => {
            let config = load_config(config.as_deref())?;
            let outputs = train(&config, &kb, &out)?;
            print_report(&outputs.test_report, &[1, 3, 5])?;
        }
        Command::Eval { agent, diagnoser, vae, data, out, max_turns, topk, episodes } => {
            let agent = Agent::load(&agent)?;
            let diagnoser = Diagnoser::load(&diagnoser)?;
            let vae = PartialVae::load(&vae)?;
            agent.check_compatible(&vae, &diagnoser)?;
            let (_, split) = read_dataset(&data)?;
            let report = evaluate_with_episodes(&agent, &diagnoser, &vae, &split.test, max_turns, episodes)?;
            report.save(&out)?;
            print_report(&report, &topk)?;
        }
        Command::Baseline { kind, budget, diagnoser, vae, data, out, max_turns, seed } => {
            let diagnoser = Diagnoser::load(&diagnoser)?;
            let vae = PartialVae::load(&vae)?;
            let (_, split) = read_dataset(&data)?;
            let report = match kind {
                BaselineKind::Random => {
                    if budget > max_turns {
                        bail!("budget {budget} exceeds the turn cap {max_turns}");
                    }
                    baseline_random(&diagnoser, &vae, &split.test, budget, max_turns, seed)?
                }
                BaselineKind::Full => baseline_full_observation(&diagnoser, &split.test)?,
            };
            report.save(&out)?;
            print_report(&report, &[1, 3, 5])?;
        }
        Command::Ablate { variant, config, kb, from, out } => {
            let variant = Variant::parse(&variant)?;
            if variant == Variant::Standard {
                bail!("ablation variant must be no_rs or no_vae");
            }
            let config = load_config(config.as_deref())?;
            let (diagnoser, vae, split) = match (&from, &kb) {
                (Some(dir), _) => {
                    let (_, split) = read_dataset(&dir.join("data"))?;
                    (Diagnoser::load(&dir.join("diagnoser.json"))?, PartialVae::load(&dir.join("vae.json"))?, split)
                }
                (None, Some(kb)) => {
                    let kb: KnowledgeBase = load_knowledge_base(kb)?;
                    let split = generate_dataset(&kb, config.data.n_train, config.data.n_valid, config.data.n_test, config.seed)?;
                    let pre = pretrain(&kb, &split, &config)?;
                    (pre.diagnoser, pre.vae, split)
                }
                (None, None) => bail!("pass --from DIR or --kb PATH"),
            };
            let (agent, report) = run_ablation(variant, &diagnoser, &vae, &split, &config)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            agent.save(&out.join("agent.json"))?;
            report.save(&out.join("report.json"))?;
            print_report(&report, &[1, 3, 5])?;
        }
        Command::Serve { models, sessions, addr, max_turns } => {
            let bundle = ModelBundle::load(&models, max_turns)?;
            let store = FileStore::open(&sessions)?;
            let service = Arc::new(SessionService::new(Arc::new(bundle), Arc::new(store)));
            tokio::runtime::Runtime::new()?.block_on(dxagent_service::serve(addr, service))?;
        }
    }
    Ok(())
}
