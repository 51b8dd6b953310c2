use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xdoc::accounting::{count_parameters, enumerate_parameters};
use xdoc::bench::time_forward;
use xdoc::config::{AdaptiveSpec, ModelConfig};
use xdoc::corpus::{load_doc, load_plain, load_web, Corpora, ErrorPolicy, InputSpec};
use xdoc::diagnostics::{check_mlm_gradients, mask_statistics, ModelCheck};
use xdoc::dom::{extract_text_nodes, parse_html, DepthPolicy, ExtractOptions, TagVocab, XPathRecord};
use xdoc::input::Format;
use xdoc::model::{ForwardCtx, XDocModel};
use xdoc::numeric::{GradCheckConfig, Tape};
use xdoc::pretrain::{derive_seed, load_checkpoint, save_checkpoint, write_loss_csv, MaskConfig, TrainConfig, Trainer};
use xdoc::synthetic;
use xdoc::tokenizer::Vocab;
use xdoc::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "xdoc", version, about = "Unified plain/document/web text encoder toolkit")]
struct Cli {
    /// TOML training configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed.
    #[arg(long, global = true, env = "XDOC_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split text into WordPiece tokens and ids.
    Tokenize(TokenizeArgs),
    /// Emit every text node of an HTML page with its XPath, as JSON Lines.
    Xpath(XpathArgs),
    /// Dump per-position embeddings for one record.
    Embed(EmbedArgs),
    /// Run masked-language-model pre-training; prints the loss curve as CSV.
    Pretrain(PretrainArgs),
    /// Finite-difference check of the full MLM loss on the toy model.
    Gradcheck(GradcheckArgs),
    /// Parameter counts per component and model profile.
    Paramcount(ParamcountArgs),
    /// Empirical masking rates over random sequences.
    Maskstats(MaskstatsArgs),
    /// Write the synthetic three-format corpus.
    Gencorpus(GencorpusArgs),
    /// Time forward batches and the share spent in adaptive layers.
    Timebench(TimebenchArgs),
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, conflicts_with = "file")]
    text: Option<String>,
    #[arg(long)]
    file: Option<PathBuf>,
    /// Also print the padded id sequence of this length.
    #[arg(long)]
    max_len: Option<usize>,
    /// Keep case instead of lowercasing.
    #[arg(long)]
    cased: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthArg {
    Truncate,
    Error,
}

#[derive(Args)]
struct XpathArgs {
    page: PathBuf,
    #[arg(long, default_value_t = xdoc::dom::DEFAULT_MAX_DEPTH)]
    max_depth: usize,
    #[arg(long, value_enum, default_value_t = DepthArg::Truncate)]
    depth_policy: DepthArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plain,
    Doc,
    Web,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Plain => Format::Plain,
            FormatArg::Doc => Format::Doc,
            FormatArg::Web => Format::Web,
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, value_enum)]
    format: FormatArg,
    /// Corpus file (plain/doc JSON Lines or text, web HTML directory or JSON Lines).
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary; the synthetic vocabulary when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    preset: String,
    /// Parameters to load instead of a seeded initialization.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Which record of the input to embed.
    #[arg(long, default_value_t = 0)]
    record: usize,
    #[arg(long)]
    max_len: Option<usize>,
    /// Print the normalized embedding fed to the encoder instead of the raw sum.
    #[arg(long)]
    normalized: bool,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    steps: Option<u64>,
    /// Directory for periodic and final checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write the loss curve here instead of stdout.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 6)]
    coords: usize,
    /// Formats in the checked batch.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FormatArg::Plain, FormatArg::Doc, FormatArg::Web])]
    formats: Vec<FormatArg>,
}

#[derive(Args)]
struct ParamcountArgs {
    #[arg(long, default_value = "base")]
    preset: String,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// ReLU count of the adaptive layers.
    #[arg(long, conflicts_with = "no_adaptive")]
    adaptive_relu: Option<usize>,
    /// Identity adaptive layers.
    #[arg(long)]
    no_adaptive: bool,
    /// One adaptive layer shared by both branches.
    #[arg(long)]
    symmetric: bool,
    /// One x table and one y table instead of four coordinate tables.
    #[arg(long)]
    share_xy: bool,
    /// Also instantiate the model and compare against the runtime count.
    #[arg(long)]
    enumerate: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct MaskstatsArgs {
    #[arg(long, default_value_t = 1_000_000)]
    tokens: u64,
    #[arg(long, default_value_t = 50265)]
    vocab_size: usize,
}

#[derive(Args)]
struct GencorpusArgs {
    #[arg(long)]
    out: PathBuf,
    /// Records per format.
    #[arg(long, default_value_t = 17)]
    count: usize,
}

#[derive(Args)]
struct TimebenchArgs {
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 17)]
    count: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

fn run(cli: Cli) -> xdoc::Result<ExitCode> {
    let seed = cli.seed.unwrap_or(0);
    let mut out = std::io::stdout().lock();
    let text = match cli.command {
        Command::Tokenize(a) => tokenize(a)?,
        Command::Xpath(a) => xpath(a)?,
        Command::Embed(a) => embed(a, seed)?,
        Command::Pretrain(a) => pretrain(a, cli.config.as_deref(), cli.seed)?,
        Command::Gradcheck(a) => {
            let (report, passed) = gradcheck(a, seed)?;
            let _ = out.write_all(report.as_bytes());
            return Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(4) });
        }
        Command::Paramcount(a) => paramcount(a, seed)?,
        Command::Maskstats(a) => {
            let s = mask_statistics(a.tokens, a.vocab_size, seed, &MaskConfig::default())?;
            let [m, r, k] = s.bucket_split();
            format!(
                "maskable {}\nselected {}\nselection_rate {:.5}\nmask {:.5}\nrandom {:.5}\nkeep {:.5}\nspecial_violations {}\n",
                s.maskable,
                s.selected,
                s.selection_rate(),
                m,
                r,
                k,
                s.special_violations
            )
        }
        Command::Gencorpus(a) => {
            let c = synthetic::generate(a.count, seed);
            c.write_to(&a.out)?;
            format!(
                "wrote {} plain, {} doc, {} web records and a {}-entry vocab to {}\n",
                c.plain.len(),
                c.doc.len(),
                c.html.len(),
                c.vocab.len(),
                a.out.display()
            )
        }
        Command::Timebench(a) => timebench(a, seed)?,
    };
    let _ = out.write_all(text.as_bytes());
    Ok(ExitCode::SUCCESS)
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn tokenize(a: TokenizeArgs) -> xdoc::Result<String> {
    let vocab = Vocab::load(&a.vocab)?.with_lowercase(!a.cased);
    let text = match (a.text, a.file) {
        (Some(t), _) => t,
        (None, Some(p)) => fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?,
        (None, None) => return Err(usage("pass --text or --file")),
    };
    let tokens = vocab.tokenize(&text);
    let ids = vocab.ids_of(&tokens);
    let mut s = String::new();
    for (t, id) in tokens.iter().zip(&ids) {
        s.push_str(&format!("{t}\t{id}\n"));
    }
    if let Some(l) = a.max_len {
        let enc = vocab.encode(&tokens, l)?;
        let joined: Vec<String> = enc.ids.iter().map(|i| i.to_string()).collect();
        s.push_str(&format!("ids {}\n", joined.join(" ")));
    }
    Ok(s)
}

fn xpath(a: XpathArgs) -> xdoc::Result<String> {
    let src = fs::read_to_string(&a.page).map_err(|e| Error::io(&a.page, e))?;
    let tags = TagVocab::default();
    let opts = ExtractOptions {
        max_depth: a.max_depth,
        depth_policy: match a.depth_policy {
            DepthArg::Truncate => DepthPolicy::Truncate,
            DepthArg::Error => DepthPolicy::Error,
        },
    };
    let with_file = |e| Error::in_file(&a.page, e);
    let root = parse_html(&src).map_err(with_file)?;
    let nodes = extract_text_nodes(&root, &tags, &opts).map_err(with_file)?;
    let mut s = String::new();
    for n in &nodes {
        let rec = XPathRecord::from_node(n, &tags);
        s.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        s.push('\n');
    }
    Ok(s)
}

fn model_for(preset: &str, vocab: &Vocab, max_len: Option<usize>) -> xdoc::Result<ModelConfig> {
    let mut cfg = ModelConfig::preset(preset, Some(vocab.len()))?;
    if let Some(l) = max_len {
        cfg.encoder.max_len = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn embed(a: EmbedArgs, seed: u64) -> xdoc::Result<String> {
    let vocab = match &a.vocab {
        Some(p) => Vocab::load(p)?,
        None => synthetic::synthetic_vocab(),
    };
    let cfg = model_for(&a.preset, &vocab, a.max_len)?;
    let spec = InputSpec::from_model(&cfg);
    let tags = TagVocab::default();
    let format = Format::from(a.format);
    let corpora = match format {
        Format::Plain => Corpora::build(&load_plain(&a.input)?, &[], &[], &vocab, &tags, &spec)?,
        Format::Doc => Corpora::build(&[], &load_doc(&a.input)?, &[], &vocab, &tags, &spec)?,
        Format::Web => {
            let web = load_web(&a.input, &tags, &ExtractOptions::default(), ErrorPolicy::Abort)?;
            Corpora::build(&[], &[], &web.records, &vocab, &tags, &spec)?
        }
    };
    let inputs = corpora.get(format);
    let input = inputs.get(a.record).ok_or(Error::Index {
        what: "record",
        index: a.record,
        size: inputs.len(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let (model, mut store) = XDocModel::new(&cfg, vocab.special().pad, tags.pad_id(), &mut rng)?;
    if let Some(p) = &a.checkpoint {
        load_checkpoint(p)?.load_params_into(&mut store)?;
    }
    let mut tape = Tape::new(&store);
    let mut ctx = ForwardCtx::eval();
    let v = if a.normalized {
        model.embed(&mut tape, input, &mut ctx)?
    } else {
        model.embed_sum(&mut tape, input, &mut ctx)?
    };
    let t = tape.value(v);
    let mut s = String::new();
    for i in 0..t.rows() {
        let row = serde_json::json!({
            "pos": i,
            "id": input.seq.ids[i],
            "token": vocab.token(input.seq.ids[i]).unwrap_or("?"),
            "vector": t.row(i),
        });
        s.push_str(&row.to_string());
        s.push('\n');
    }
    Ok(s)
}

fn pretrain(a: PretrainArgs, config: Option<&Path>, seed: Option<u64>) -> xdoc::Result<String> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = a.steps {
        cfg.steps = n;
    }
    if let Some(d) = &a.out {
        cfg.output_dir = Some(d.clone());
    }
    if let Some(d) = &cfg.output_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut trainer = Trainer::new(cfg)?;
    if let Some(p) = &a.resume {
        trainer.restore(&load_checkpoint(p)?)?;
    }
    trainer.run(|_| {})?;
    if let Some(d) = &trainer.cfg.output_dir {
        save_checkpoint(&trainer.checkpoint(), d.join("final.ckpt"))?;
    }
    let csv = write_loss_csv(&trainer.curve, trainer.cfg.log_every);
    match &a.loss_csv {
        Some(p) => {
            fs::write(p, &csv).map_err(|e| Error::io(p, e))?;
            let last = trainer.curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
            Ok(format!("steps {} final_loss {last}\n", trainer.step_count()))
        }
        None => Ok(csv),
    }
}

fn gradcheck(a: GradcheckArgs, seed: u64) -> xdoc::Result<(String, bool)> {
    if a.preset != "toy" {
        return Err(usage(format!("gradcheck supports the toy preset only, got {:?}", a.preset)));
    }
    let check = ModelCheck {
        seed,
        formats: a.formats.iter().map(|&f| f.into()).collect(),
        grad: GradCheckConfig {
            step: a.step,
            tolerance: a.tolerance,
            coords_per_param: a.coords,
            seed,
        },
        ..ModelCheck::default()
    };
    let report = check_mlm_gradients(&check)?;
    Ok((format!("{report}\n"), report.passed()))
}

fn paramcount(a: ParamcountArgs, seed: u64) -> xdoc::Result<String> {
    let mut cfg = ModelConfig::preset(&a.preset, a.vocab_size)?;
    if cfg.vocab_size == 0 {
        cfg.vocab_size = synthetic::synthetic_vocab().len();
    }
    if a.no_adaptive {
        cfg.adaptive = AdaptiveSpec::Disabled;
    }
    if let Some(k) = a.adaptive_relu {
        cfg.adaptive = AdaptiveSpec::Relu(k);
    }
    cfg.symmetric_adaptive = a.symmetric;
    cfg.share_xy_tables |= a.share_xy;
    cfg.validate()?;
    let b = count_parameters(&cfg);
    let runtime = if a.enumerate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, store) = XDocModel::new(&cfg, 0, TagVocab::default().pad_id(), &mut rng)?;
        Some(enumerate_parameters(&store))
    } else {
        None
    };
    if a.json {
        let v = serde_json::json!({
            "config": a.preset,
            "components": b,
            "profiles": b.profiles(),
            "sharing_ratio": b.profiles().sharing_ratio(),
            "runtime": runtime,
        });
        return Ok(format!("{v}\n"));
    }
    let mut s = format!("{b}\n");
    if let Some(r) = runtime {
        s.push_str(&format!("runtime total {} ({})\n", r.total(), if r == b { "matches" } else { "MISMATCH" }));
    }
    s.push_str(&format!(
        "note: pos1d is the position table alone, max_len x hidden = {} x {} = {}\n",
        cfg.encoder.max_len,
        cfg.hidden(),
        b.pos1d
    ));
    Ok(s)
}

fn timebench(a: TimebenchArgs, seed: u64) -> xdoc::Result<String> {
    let syn = synthetic::generate(a.count, seed);
    let cfg = model_for(&a.preset, &syn.vocab, None)?;
    let tags = TagVocab::default();
    let spec = InputSpec::from_model(&cfg);
    let web = syn.web_records(&tags)?;
    let corpora = Corpora::build(&syn.plain, &syn.doc, &web, &syn.vocab, &tags, &spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let (model, store) = XDocModel::new(&cfg, syn.vocab.special().pad, tags.pad_id(), &mut rng)?;
    let mut inputs = Vec::new();
    for f in Format::ALL {
        inputs.extend(corpora.get(f).iter().cloned());
    }
    let r = time_forward(&model, &store, &inputs, a.batch_size, a.batches)?;
    Ok(format!(
        "batches {}\nbatch_size {}\nbatch_ms {:.3}\nadaptive_ms {:.3}\nadaptive_fraction {:.5}\n",
        r.batches,
        r.batch_size,
        r.total_ms,
        r.adaptive_ms,
        r.adaptive_fraction()
    ))
}
