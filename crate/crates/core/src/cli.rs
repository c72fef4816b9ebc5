//! The `reconcile` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::align::{match_pair, nearest_neighbor_assignment, DEFAULT_CHUNK_LEN};
use crate::base::Dataset;
use crate::dynamics::{synthesize, train_predictor};
use crate::embed::{train, Embedder, RandomEmbedding, Whitener};
use crate::error::{Error, Result};
use crate::eval::{self, curve_text, EvalReport, RetrievalParams};
use crate::io::{self, RunConfig};
use crate::par;
use crate::rng::RngState;
use crate::synthdata::{generate_dataset, resample_pair};

const EMBED_STREAM: u64 = 1;
const PREDICTOR_STREAM: u64 = 2;
const PAIR_STREAM: u64 = 100;

#[derive(Debug, Parser)]
#[command(name = "reconcile", version, about = "Activity representations from temporally constrained sequence matching")]
struct Cli {
    /// Overrides the seed of the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 runs everything on the main thread).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML run config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match a query sequence against every chunk of a target.
    Align {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = DEFAULT_CHUNK_LEN)]
        chunk_len: usize,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the posture embedding.
    TrainEmbed {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the next-frame predictor on a frozen embedding.
    TrainDyn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate against the latent ground truth.
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// Project embedded frames to two dimensions.
    Project {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll the predictor forward from the first frames of a sequence.
    Synth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        seed_seq: String,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    /// Directory receiving `<metric>.json`, `<metric>.txt` and curve files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Posture retrieval AUC, with raw-feature and chance baselines.
    Retrieval(EvalArgs),
    /// Pose transfer from the nearest training frame.
    Zeroshot(EvalArgs),
    /// Next-frame prediction error against the k-th-neighbour curve.
    Predict {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Matching accuracy on freshly resampled pairs.
    Alignment {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, default_value_t = DEFAULT_CHUNK_LEN)]
        chunk_len: usize,
    },
}

/// Runs the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{}", e.render());
            return 1;
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be >= 1");
            return 1;
        }
        par::init_threads(t);
    }
    match dispatch(cli.command, cli.seed) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn load_config(arg: &ConfigArg, seed: Option<u64>) -> Result<RunConfig> {
    let cfg = match &arg.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(format!("{}.json", report.metric)), &(report.to_json()? + "\n"))?;
    write_file(&dir.join(format!("{}.txt", report.metric)), &report.to_text())?;
    for (name, points) in &report.curves {
        write_file(&dir.join(format!("{}.{name}.dat", report.metric)), &curve_text(points))?;
    }
    Ok(())
}

fn sequence<'a>(data: &'a Dataset, id: &str) -> Result<&'a crate::base::Sequence> {
    data.get(id).ok_or_else(|| Error::Index(format!("no sequence {id:?} in dataset")))
}

fn dispatch(command: Command, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Gen { config, out } => {
            let cfg = load_config(&config, seed)?;
            let data = generate_dataset(&cfg.generator)?;
            io::write_seqpack(&data, &out)
        }
        Command::Align {
            data,
            model,
            query,
            target,
            chunk_len,
            config,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            crate::align::chunk_target(2, chunk_len)?;
            let data = io::read_seqpack(&data)?;
            let model = io::load_embedding(&model)?;
            let (q, t) = (sequence(&data, &query)?, sequence(&data, &target)?);
            let matchings = match_pair(q, t, &model, &cfg.penalties.spec()?, chunk_len)?;
            let text = serde_json::to_string_pretty(&matchings).expect("matchings serialize");
            write_file(&out, &(text + "\n"))
        }
        Command::TrainEmbed { data, config, out } => {
            let cfg = load_config(&config, seed)?;
            let data = io::read_seqpack(&data)?;
            let mut rng = RngState::new(cfg.seed).fork(EMBED_STREAM);
            let (model, log) = train(&data, &cfg.train, &cfg.penalties.spec()?, cfg.chunk_len, &mut rng)?;
            for e in &log.epochs {
                eprintln!(
                    "epoch {} percentile {} batches {} loss {:.6} moved {:.6}",
                    e.epoch, e.percentile, e.batches, e.mean_loss, e.param_delta
                );
            }
            io::save_embedding(&model, &out)
        }
        Command::TrainDyn {
            data,
            model,
            config,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let data = io::read_seqpack(&data)?;
            let model = io::load_embedding(&model)?;
            let mut rng = RngState::new(cfg.seed).fork(PREDICTOR_STREAM);
            let (pred, log) = train_predictor(&data, &model, &cfg.predictor, &mut rng)?;
            for w in &log.warnings {
                eprintln!("warning: {w}");
            }
            for (i, l) in log.epoch_loss.iter().enumerate() {
                eprintln!("epoch {i} loss {l:.6}");
            }
            io::save_predictor(&pred, &out)
        }
        Command::Eval { which } => run_eval(which, seed),
        Command::Project { data, model, out } => {
            let data = io::read_seqpack(&data)?;
            let model = io::load_embedding(&model)?;
            let p = eval::pca_project_2d(&data, &model)?;
            if p.degenerate {
                eprintln!("warning: embeddings have no variance; projection is all zeros");
            }
            let mut text = format!(
                "# explained_variance {} {}\n# degenerate {}\n# sequence frame x y\n",
                p.explained_variance[0], p.explained_variance[1], p.degenerate
            );
            let mut row = 0;
            for s in data.sequences() {
                for t in 0..s.len() {
                    let _ = writeln!(text, "{} {t} {} {}", s.id, p.coords[[row, 0]], p.coords[[row, 1]]);
                    row += 1;
                }
            }
            write_file(&out, &text)
        }
        Command::Synth {
            data,
            model,
            pred,
            seed_seq,
            steps,
            out,
        } => {
            let data = io::read_seqpack(&data)?;
            let model = io::load_embedding(&model)?;
            let pred = io::load_predictor(&pred)?;
            let s = sequence(&data, &seed_seq)?;
            let l = pred.context_len();
            if s.len() < l {
                return Err(Error::config(format!("sequence {seed_seq:?} is shorter than the context length {l}")));
            }
            let trail = synthesize(&pred, &model, s.frames().slice(ndarray::s![..l, ..]), steps, data.sequences())?;
            let mut text = String::from("# sequence frame\n");
            for r in &trail {
                let _ = writeln!(text, "{} {}", r.sequence, r.frame);
            }
            write_file(&out, &text)
        }
    }
}

fn run_eval(which: EvalCommand, seed: Option<u64>) -> Result<()> {
    let (args, extra) = match &which {
        EvalCommand::Retrieval(a) | EvalCommand::Zeroshot(a) => (a, None),
        EvalCommand::Predict { args, pred } => (args, Some(pred.clone())),
        EvalCommand::Alignment { args, .. } => (args, None),
    };
    let cfg = load_config(&args.config, seed)?;
    let data = io::read_seqpack(&args.data)?;
    let model = io::load_embedding(&args.model)?;
    let mut report;
    match which {
        EvalCommand::Retrieval(_) => {
            let params = RetrievalParams {
                pose_epsilon: cfg.eval.pose_epsilon,
                queries: cfg.eval.queries,
                seed: cfg.seed,
            };
            let trained = eval::retrieval_auc(&data, &model, &params)?;
            let whitened = eval::retrieval_auc(&data, &Whitener::fit(&data)?, &params)?;
            let random = RandomEmbedding {
                input: data.dim(),
                output: model.output_dim(),
                seed: cfg.seed,
            };
            let chance = eval::retrieval_auc(&data, &random, &params)?;
            let oracle = eval::retrieval_auc_oracle(&data, &params)?;
            report = EvalReport::new("retrieval", cfg.seed)
                .value("auc", trained.auc)
                .value("auc_whitened", whitened.auc)
                .value("auc_random", chance.auc)
                .value("auc_oracle", oracle.auc)
                .value("pose_epsilon", trained.pose_epsilon)
                .value("queries", trained.per_query.len() as f64);
            report.breakdown = trained.per_query;
        }
        EvalCommand::Zeroshot(_) => {
            let (train, test) = data.split(&cfg.eval.held_out)?;
            let r = eval::zero_shot_pose_error(&train, &test, &model, &cfg.eval.taus)?;
            let raw = eval::zero_shot_pose_error(&train, &test, &Whitener::fit(&train)?, &cfg.eval.taus)?;
            report = EvalReport::new("zeroshot", cfg.seed)
                .value("mean_error", r.mean_error)
                .value("mean_error_whitened", raw.mean_error)
                .value("mean_error_oracle", r.oracle_mean_error);
            report.curves.insert("accuracy".into(), r.accuracy);
            report.curves.insert("accuracy_oracle".into(), r.oracle_accuracy);
            report.breakdown = r.per_frame;
        }
        EvalCommand::Predict { .. } => {
            let pred = io::load_predictor(&extra.expect("predict has a predictor path"))?;
            let c = eval::knn_prediction_curve(&data, &model, &pred, cfg.eval.k_max, cfg.eval.exclusion_window)?;
            report = EvalReport::new("predict", cfg.seed)
                .value("prediction_mean", c.prediction_mean)
                .value("prediction_std", c.prediction_std)
                .value("transitions", c.transitions as f64);
            let ks = |v: &[f64]| v.iter().enumerate().map(|(k, m)| ((k + 1) as f64, *m)).collect::<Vec<_>>();
            report.curves.insert("knn_mean".into(), ks(&c.knn_mean));
            report.curves.insert("knn_std".into(), ks(&c.knn_std));
        }
        EvalCommand::Alignment { chunk_len, .. } => {
            let spec = cfg.penalties.spec()?;
            let (mut dp, mut nn) = (Vec::new(), Vec::new());
            for i in 0..cfg.eval.pairs as u64 {
                let pair_seed = rand::RngCore::next_u64(&mut RngState::new(cfg.seed).fork(PAIR_STREAM + i));
                let (a, b, truth) = resample_pair(&cfg.generator, pair_seed)?;
                let m = match_pair(&a, &b, &model, &spec, chunk_len)?;
                dp.push(eval::alignment_accuracy(&m, &truth)?);
                let (ea, eb) = (model.embed_frames(a.frames())?, model.embed_frames(b.frames())?);
                let assign = nearest_neighbor_assignment(ea.view(), eb.view());
                nn.push(eval::alignment_accuracy(&[eval::assignment_as_matching(&assign)], &truth)?);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            report = EvalReport::new("alignment", cfg.seed)
                .value("accuracy", mean(&dp))
                .value("accuracy_nearest", mean(&nn))
                .value("pairs", dp.len() as f64);
            report.breakdown = dp;
        }
    }
    report.config = serde_json::to_value(&cfg.eval).expect("config serializes");
    write_report(&args.out, &report)
}
