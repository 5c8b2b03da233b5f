use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use sgmt::corpus::{gen_corpus, read_examples, read_grammar, read_sentences, write_sentences, Corpus, CorpusConfig};
use sgmt::grammar::ToyGrammar;
use sgmt::harness::{self, Checkpoint, TrainConfig};
use sgmt::model::{Direction, Model};
use sgmt::scene_graph::{deserialize, graph_stats, parse_toy_lsg, pooled, serialize, Modality, SceneGraph};

#[derive(Parser)]
#[command(
    name = "sgmt",
    version,
    about = "Scene-graph pivoted translation on a synthetic corpus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into a directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_mono: usize,
        #[arg(long, default_value_t = 50)]
        n_test: usize,
        #[arg(long, default_value_t = 64)]
        z_dim: usize,
    },
    /// Run the three training stages.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `key = value` configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Translate source sentences, one per line.
    Translate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        src: PathBuf,
        /// Examples file whose gold visual graphs replace hallucination, line by line.
        #[arg(long)]
        gold_vsg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hallucinate a visual graph for each language graph and print the node growth.
    Hallucinate {
        /// Language graphs in the canonical format, one per line.
        #[arg(long, conflicts_with = "src")]
        lsg: Option<PathBuf>,
        /// Source sentences, one per line, parsed into language graphs.
        #[arg(long)]
        src: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory whose grammar the checkpoint was trained on; the default grammar otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test set: image-free and gold-graph BLEU plus augmentor recovery.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score this hypothesis file against the references instead of running a model.
        #[arg(long)]
        hyp: Option<PathBuf>,
        #[arg(long)]
        smooth: bool,
    },
    /// Finite-difference check of every loss on a miniature batch.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Node growth per kind from language graphs to visual graphs.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Use hallucinated graphs from this model instead of the gold ones.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Examples to measure: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
}

#[derive(Debug)]
struct NumericFailure(String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn load_model(data: &Path, checkpoint: &Path) -> Result<Model> {
    let grammar = read_grammar(data)?;
    let ck = Checkpoint::load(checkpoint, &grammar).with_context(|| format!("loading {}", checkpoint.display()))?;
    Ok(ck.into_model(grammar)?)
}

/// Reads canonical language graphs, one per non-empty line.
fn read_graphs(path: &Path) -> Result<Vec<SceneGraph>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let g = deserialize(line)
            .map_err(sgmt::Error::from)
            .with_context(|| format!("{} line {}", path.display(), n + 1))?;
        if g.modality() != Modality::Language {
            bail!(sgmt::Error::Data(format!(
                "{} line {}: expected a language graph",
                path.display(),
                n + 1
            )));
        }
        out.push(g);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            seed,
            n_train,
            n_mono,
            n_test,
            z_dim,
        } => {
            let cfg = CorpusConfig {
                n_train,
                n_mono,
                n_test,
                z_dim,
                seed,
                ..CorpusConfig::default()
            };
            let corpus = gen_corpus(&ToyGrammar::default(), &cfg)?;
            corpus.write(&out)?;
            println!(
                "wrote {} train, {} monolingual and {} test examples to {}",
                corpus.train.len(),
                corpus.mono.len(),
                corpus.test.len(),
                out.display()
            );
        }
        Command::Train { data, out, config } => {
            let cfg = match config {
                Some(p) => {
                    TrainConfig::parse(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?
                }
                None => TrainConfig::default(),
            };
            let corpus = Corpus::read(&data)?;
            let mut examples = corpus.train.clone();
            examples.extend(corpus.mono.iter().cloned());
            let mut model = harness::init_model(&cfg, &corpus.grammar, &examples)?;
            info!(
                "training {} parameters on {} examples",
                model.store.total_numel(),
                examples.len()
            );
            harness::train(&mut model, &cfg, &examples, Some(&out), |stage, _| {
                info!("stage {stage} done");
                Ok(())
            })?;
            let final_path = out.join("final.ckpt");
            Checkpoint::of(&model, &cfg).save(&final_path)?;
            if corpus.refs.reads() != 0 {
                bail!("training read the test references");
            }
            println!("saved {}", final_path.display());
        }
        Command::Translate {
            data,
            checkpoint,
            src,
            gold_vsg,
            out,
        } => {
            let model = load_model(&data, &checkpoint)?;
            let sentences = read_sentences(&src)?;
            let gold = match gold_vsg {
                Some(p) => {
                    let ex = read_examples(&p)?;
                    if ex.len() != sentences.len() {
                        bail!(sgmt::Error::Data(format!(
                            "{} sentences but {} gold graphs",
                            sentences.len(),
                            ex.len()
                        )));
                    }
                    Some(ex)
                }
                None => None,
            };
            let mut hyps = Vec::with_capacity(sentences.len());
            for (i, s) in sentences.iter().enumerate() {
                let h = match &gold {
                    Some(ex) => {
                        let lsg = parse_toy_lsg(s, &model.grammar)?;
                        model.translate(Direction::Forward, &lsg, &ex[i].vsg)?
                    }
                    None => model.translate_image_free(s)?,
                };
                hyps.push(h);
            }
            write_sentences(&out, &hyps)?;
        }
        Command::Hallucinate {
            lsg,
            src,
            checkpoint,
            data,
            out,
        } => {
            let grammar = match &data {
                Some(d) => read_grammar(d)?,
                None => ToyGrammar::default(),
            };
            let ck =
                Checkpoint::load(&checkpoint, &grammar).with_context(|| format!("loading {}", checkpoint.display()))?;
            let model = ck.into_model(grammar)?;
            let graphs = match (lsg, src) {
                (Some(p), None) => read_graphs(&p)?,
                (None, Some(p)) => read_sentences(&p)?
                    .iter()
                    .map(|s| parse_toy_lsg(s, &model.grammar))
                    .collect::<Result<_, _>>()?,
                _ => bail!(UsageFailure("hallucinate needs --lsg or --src".into())),
            };
            let mut lines = String::new();
            let mut reports = Vec::with_capacity(graphs.len());
            for g in &graphs {
                let v = model.hallucinate(g)?;
                lines.push_str(&serialize(&v));
                lines.push('\n');
                reports.push(graph_stats(g, &v));
            }
            fs::write(&out, lines).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", pooled(&reports));
        }
        Command::Eval {
            data,
            checkpoint,
            hyp,
            smooth,
        } => {
            let corpus = Corpus::read(&data)?;
            match (hyp, checkpoint) {
                (Some(h), _) => {
                    let hyps = read_sentences(&h)?;
                    let bleu = harness::corpus_bleu(&hyps, corpus.refs.read(), smooth)?;
                    println!("bleu\t{bleu:.2}");
                }
                (None, Some(ck)) => {
                    let model = load_model(&data, &ck)?;
                    let r = harness::evaluate(&model, &corpus.test, &corpus.refs, smooth)?;
                    println!("sentences\t{}", r.sentences);
                    println!("bleu_image_free\t{:.2}", r.bleu_image_free);
                    println!("bleu_gold_vsg\t{:.2}", r.bleu_gold);
                    let rate = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.3}"));
                    println!("node_recovery\t{}", rate(r.recovery.node_rate()));
                    println!("edge_recovery\t{}", rate(r.recovery.edge_rate()));
                    println!("spurious_additions\t{}", r.recovery.spurious);
                }
                (None, None) => bail!(UsageFailure("eval needs --checkpoint or --hyp".into())),
            }
        }
        Command::Gradcheck { seed } => {
            let checks = harness::run_gradcheck(seed, None)?;
            let mut failed = Vec::new();
            for c in &checks {
                let status = if c.report.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{}\t{status}\tmax_rel_error={:.3e}\tcoords={}",
                    c.loss,
                    c.report.max_rel_error,
                    c.report.checked.len()
                );
                if !c.report.passed() {
                    failed.push(format!("{} ({})", c.loss, c.report.failing_tensors().join(", ")));
                }
            }
            if !failed.is_empty() {
                bail!(NumericFailure(format!(
                    "gradient check failed for {}",
                    failed.join("; ")
                )));
            }
        }
        Command::Stats {
            data,
            checkpoint,
            split,
        } => {
            let corpus = Corpus::read(&data)?;
            let examples = match split.as_str() {
                "train" => &corpus.train,
                "test" => &corpus.test,
                other => bail!(UsageFailure(format!("unknown split {other:?}"))),
            };
            let model = checkpoint.map(|ck| load_model(&data, &ck)).transpose()?;
            print!("{}", harness::growth_stats(model.as_ref(), examples)?);
        }
    }
    Ok(())
}

#[derive(Debug)]
struct UsageFailure(String);

impl std::fmt::Display for UsageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageFailure>().is_some() {
        return 1;
    }
    if err.downcast_ref::<NumericFailure>().is_some() {
        return 3;
    }
    match err.downcast_ref::<sgmt::Error>() {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
