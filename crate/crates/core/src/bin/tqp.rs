use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use tqp::matchlog::Segment;
use tqp::pipeline::PipelineConfig;
use tqp::policyeval::parse_policy_list;
use tqp::service::AppState;
use tqp::stages::{self, WorkDir};

#[derive(Parser)]
#[command(name = "tqp", version, about = "Deck-switch advice from match logs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Work directory holding the artifacts of earlier stages.
    #[arg(long, default_value = "work")]
    work: PathBuf,
    /// Model sizes: full, desk or smoke.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl Common {
    fn parts(&self) -> tqp::Result<(WorkDir, PipelineConfig)> {
        Ok((
            WorkDir::new(&self.work),
            PipelineConfig::preset(&self.preset, self.seed)?,
        ))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Load, filter and copy a matchlog into a work directory.
    Ingest {
        #[arg(long)]
        matchlog: PathBuf,
        #[arg(long)]
        cards: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic population (matchlog, cards, ground truth).
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage from a raw matchlog to the evaluation report.
    Pipeline {
        #[arg(long)]
        matchlog: PathBuf,
        #[arg(long)]
        cards: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    #[command(subcommand)]
    Archetype(ArchetypeCmd),
    #[command(subcommand)]
    Subtype(SubtypeCmd),
    #[command(subcommand)]
    Encoder(EncoderCmd),
    #[command(subcommand)]
    Transition(TransitionCmd),
    #[command(subcommand)]
    Heads(HeadsCmd),
    #[command(subcommand)]
    Fuse(FuseCmd),
    /// Baselines and ablation rows on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "all")]
        policies: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// HTTP advisor over a frozen model directory.
    Serve {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of append-only session logs.
        #[arg(long, default_value = "sessions")]
        sessions: PathBuf,
    },
}

#[derive(Subcommand)]
enum ArchetypeCmd {
    Fit(Common),
    Assign(Common),
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
}

#[derive(Subcommand)]
enum SubtypeCmd {
    Fit(Common),
    Assign {
        #[command(flatten)]
        common: Common,
        /// Histories to label; defaults to the work directory's matchlog.
        #[arg(long)]
        matchlog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EncoderCmd {
    Pretrain(Common),
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        segment: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check on the tiny configuration.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        windows: usize,
    },
}

#[derive(Subcommand)]
enum TransitionCmd {
    Extract(Common),
    Baseline(Common),
    Labels(Common),
}

#[derive(Subcommand)]
enum HeadsCmd {
    TrainGate(Common),
    TrainQuality(Common),
    Eval(Common),
}

#[derive(Subcommand)]
enum FuseCmd {
    TuneAlpha(Common),
    Recommend {
        #[arg(long, default_value = "work/models")]
        models: PathBuf,
        /// JSON decision context or a one-player matchlog.
        #[arg(long)]
        context: PathBuf,
    },
}

fn run(cmd: Cmd) -> tqp::Result<()> {
    match cmd {
        Cmd::Ingest {
            matchlog,
            cards,
            out,
        } => {
            print!("{}", stages::ingest(&matchlog, &cards, &out)?);
        }
        Cmd::Synth { config, out } => {
            let n = stages::synth(config.as_deref(), &out)?;
            println!("wrote {n} players to {}", out.display());
        }
        Cmd::Pipeline {
            matchlog,
            cards,
            out,
            preset,
            seed,
        } => {
            let cfg = PipelineConfig::preset(&preset, seed)?;
            print!(
                "{}",
                stages::pipeline(&matchlog, &cards, &out, &cfg)?.render_report()
            );
        }
        Cmd::Archetype(c) => match c {
            ArchetypeCmd::Fit(c) => {
                let (w, cfg) = c.parts()?;
                let m = stages::archetype_fit(&w, &cfg)?;
                println!(
                    "states {}  silhouette {:.4}  inertia {:.4}",
                    m.n_states(),
                    m.silhouette,
                    m.inertia
                );
            }
            ArchetypeCmd::Assign(c) => {
                let n = stages::archetype_assign(&c.parts()?.0)?;
                println!("assigned {n} matches");
            }
            ArchetypeCmd::Stability { common, runs } => {
                let (w, cfg) = common.parts()?;
                let s = stages::archetype_stability(&w, &cfg, runs)?;
                println!(
                    "runs {runs}  ARI {:.4}  NMI {:.4}  silhouette {:.4}",
                    s.ari, s.nmi, s.silhouette
                );
            }
        },
        Cmd::Subtype(c) => match c {
            SubtypeCmd::Fit(c) => {
                let (w, cfg) = c.parts()?;
                let (m, rows) = stages::subtype_fit(&w, &cfg)?;
                println!("players {}  silhouette {:.4}", rows.len(), m.silhouette);
            }
            SubtypeCmd::Assign {
                common,
                matchlog,
                out,
            } => {
                let n = stages::subtype_assign(&common.parts()?.0, matchlog.as_deref(), &out)?;
                println!("labelled {n} players");
            }
        },
        Cmd::Encoder(c) => match c {
            EncoderCmd::Pretrain(c) => {
                let (w, cfg) = c.parts()?;
                print!(
                    "{}",
                    stages::render_train_report(&stages::encoder_pretrain(&w, &cfg)?)
                );
            }
            EncoderCmd::Encode {
                common,
                segment,
                out,
            } => {
                let (w, cfg) = common.parts()?;
                let seg = Segment::parse(&segment)
                    .ok_or_else(|| tqp::Error::Config(format!("unknown segment `{segment}`")))?;
                let n = stages::encoder_encode(&w, &cfg, seg, &out)?;
                println!("encoded {n} windows");
            }
            EncoderCmd::Gradcheck { seed, windows } => {
                let g = stages::encoder_gradcheck(seed, windows)?;
                println!(
                    "checked {} parameters  max relative error {:.3e}  worst {}",
                    g.n_checked, g.max_rel_error, g.worst_param
                );
            }
        },
        Cmd::Transition(c) => match c {
            TransitionCmd::Extract(c) => {
                let (w, cfg) = c.parts()?;
                let r = stages::transition_extract(&w, &cfg)?;
                println!("events {}  switches {}", r.events, r.switches);
            }
            TransitionCmd::Baseline(c) => {
                let (w, cfg) = c.parts()?;
                let t = stages::transition_baseline(&w, &cfg)?;
                println!("cells {}  global mean {:.4}", t.cells.len(), t.global.mean);
            }
            TransitionCmd::Labels(c) => {
                let (w, cfg) = c.parts()?;
                let m = stages::transition_labels(&w, &cfg)?;
                println!(
                    "{} switches, {} of {} stays sampled",
                    m.n_switch, m.n_stay_sampled, m.n_stay_available
                );
            }
        },
        Cmd::Heads(c) => match c {
            HeadsCmd::TrainGate(c) => {
                let (w, cfg) = c.parts()?;
                let g = stages::heads_train_gate(&w, &cfg)?;
                println!(
                    "theta {:.2}  feasible {}",
                    g.threshold.theta, g.threshold.feasible
                );
            }
            HeadsCmd::TrainQuality(c) => {
                let (w, cfg) = c.parts()?;
                println!("{} epochs", stages::heads_train_quality(&w, &cfg)?.len());
            }
            HeadsCmd::Eval(c) => {
                let (w, cfg) = c.parts()?;
                stages::heads_eval(&w, &cfg)?;
                print!(
                    "{}",
                    std::fs::read_to_string(w.path("predictor_report.txt")).unwrap_or_default()
                );
            }
        },
        Cmd::Fuse(c) => match c {
            FuseCmd::TuneAlpha(c) => {
                let (w, cfg) = c.parts()?;
                let a = stages::fuse_tune_alpha(&w, &cfg)?;
                println!("alpha {:.1}  degenerate {}", a.alpha, a.degenerate);
            }
            FuseCmd::Recommend { models, context } => {
                let out = stages::fuse_recommend(&models, &context)?;
                println!(
                    "{}",
                    serde_json::to_string_pretty(&out).expect("serializable")
                );
            }
        },
        Cmd::Eval {
            common,
            policies,
            out,
        } => {
            let (w, cfg) = common.parts()?;
            let kinds = parse_policy_list(&policies)?;
            print!(
                "{}",
                stages::evaluate(&w, &cfg, &kinds, &out)?.render_table()
            );
        }
        Cmd::Serve {
            models,
            port,
            sessions,
        } => {
            let state = Arc::new(AppState::open(&models, &sessions)?);
            let rt =
                tokio::runtime::Runtime::new().map_err(|e| tqp::Error::Config(e.to_string()))?;
            rt.block_on(tqp::service::serve(state, port))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
