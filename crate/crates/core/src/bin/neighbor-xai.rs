use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use neighbor_xai::error::{Error, ExplainError};
use neighbor_xai::explain::{
    self, ExplainSettings, Explanation, Method, PgExplainerConfig, PgExplainerModel,
};
use neighbor_xai::graph::{self, Graph, Split};
use neighbor_xai::metrics::{self, AllDeleted, Direction, EvalOptions, MetricKind};
use neighbor_xai::model::{self, Arch, ModelConfig, TrainedModel};
use neighbor_xai::report::{self, AllDeletedRow, AucRow, RunLabel};
use neighbor_xai::rng::SEED_ENV;

#[derive(Parser)]
#[command(
    name = "neighbor-xai",
    version,
    about = "Neighbor-importance explanations for GCN/GATv2 node classifiers"
)]
struct Cli {
    /// key = value file whose entries replace the built-in defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and write a checkpoint plus a training-log CSV
    Train(TrainArgs),
    /// Explain the test-split nodes with one or all methods
    Explain(ExplainArgs),
    /// Deletion curves, AUC table, all-deleted table and SVG plots
    Evaluate(EvaluateArgs),
    /// Show a neighbor that matters yet receives zero gradient
    Gadget(GadgetArgs),
    /// Load a converted dataset, verify checksums and print a summary
    ConvertCheck(ConvertCheckArgs),
}

#[derive(Args)]
struct Common {
    /// dataset directory in the interchange format
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads, 0 = one per core
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// gcn or gat
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, overrides_with = "no_self_loops")]
    self_loops: bool,
    #[arg(long)]
    no_self_loops: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// checkpoint path
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// training-log CSV, defaults to the checkpoint path with `.log.csv`
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    /// method name or `all`
    #[arg(long)]
    method: Option<String>,
    /// train the edge-mask explainer on the training split first
    #[arg(long)]
    train_explainer: bool,
    /// edge-mask explainer artifact, defaults to `<out>/pgexplainer.json`
    #[arg(long)]
    explainer: Option<PathBuf>,
    /// output directory for `<method>.jsonl`
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    /// explanation JSONL files
    #[arg(long, num_args = 1.., required = true)]
    explanations: Vec<PathBuf>,
    /// comma-separated metric names or `all`
    #[arg(long)]
    metrics: Option<String>,
    /// add the row obtained by deleting every neighbor
    #[arg(long, value_parser = ["without-neighbors"])]
    baseline: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_svg: bool,
}

#[derive(Args)]
struct GadgetArgs {
    #[arg(long)]
    self_loops: bool,
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConvertCheckArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
}

/// Values from the config file, consumed key by key so leftovers can be
/// reported as unknown.
struct Config(BTreeMap<String, String>);

impl Config {
    fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Config(BTreeMap::new()));
        };
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        report::parse_key_values(&text).map(Config)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, Error>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Usage(format!("config key {key}: {e}"))),
        }
    }

    fn finish(self) -> Result<(), Error> {
        match self.0.keys().next() {
            Some(k) => Err(Error::Usage(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }
}

fn pick<T>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}

fn required<T>(value: Option<T>, what: &str) -> Result<T, Error> {
    value.ok_or_else(|| {
        Error::Usage(format!(
            "missing --{what} (or `{}` in the config file)",
            what.replace('-', "_")
        ))
    })
}

fn seed(flag: Option<u64>, cfg: &mut Config) -> Result<u64, Error> {
    if let Some(s) = pick(flag, cfg.take("seed")?) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|e| Error::Usage(format!("{SEED_ENV}={v:?}: {e}"))),
        Err(_) => Ok(0),
    }
}

fn load_dataset(path: &Path) -> Result<Graph, Error> {
    if !path.is_dir() {
        return Err(Error::Usage(format!(
            "dataset directory {} does not exist",
            path.display()
        )));
    }
    graph::verify_checksums(path)?;
    Ok(graph::load_graph(path)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.into(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.into(),
        source,
    }
}

fn cmd_train(args: TrainArgs, mut cfg: Config) -> Result<(), Error> {
    let dataset: PathBuf = required(pick(args.common.dataset, cfg.take("dataset")?), "dataset")?;
    let seed = seed(args.common.seed, &mut cfg)?;
    let arch: Arch = match pick(args.arch, cfg.take("arch")?) {
        Some(a) => a.parse().map_err(Error::Usage)?,
        None => Arch::Gcn,
    };
    let mut config = ModelConfig {
        seed,
        ..ModelConfig::for_arch(arch)
    };
    let flag_loops = match (args.self_loops, args.no_self_loops) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    };
    config.self_loops = pick(flag_loops, cfg.take("self_loops")?).unwrap_or(true);
    config.epochs = pick(args.epochs, cfg.take("epochs")?).unwrap_or(config.epochs);
    config.hidden_dim = pick(args.hidden_dim, cfg.take("hidden_dim")?).unwrap_or(config.hidden_dim);
    config.heads = cfg.take("heads")?.unwrap_or(config.heads);
    config.output_heads = cfg.take("output_heads")?.unwrap_or(config.output_heads);
    config.learning_rate =
        pick(args.learning_rate, cfg.take("learning_rate")?).unwrap_or(config.learning_rate);
    config.weight_decay = cfg.take("weight_decay")?.unwrap_or(config.weight_decay);
    config.dropout_rate = pick(args.dropout, cfg.take("dropout")?).unwrap_or(config.dropout_rate);
    let out: PathBuf = pick(args.out, cfg.take("model")?).unwrap_or_else(|| "model.json".into());
    let log_path = args.log.unwrap_or_else(|| out.with_extension("log.csv"));
    cfg.finish()?;
    config.validate()?;

    let g = load_dataset(&dataset)?.set_self_loops(config.self_loops);
    let m = model::train(&g, &config)?;
    model::save_checkpoint(&m, &out)?;

    let mut log = create(&log_path)?;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut text = String::from("epoch,loss,train_accuracy,val_accuracy,test_accuracy\n");
    for e in &m.log {
        text += &format!(
            "{},{},{},{},{}\n",
            e.epoch,
            e.loss,
            cell(e.train_accuracy),
            cell(e.val_accuracy),
            cell(e.test_accuracy)
        );
    }
    log.write_all(text.as_bytes())
        .and_then(|_| log.flush())
        .map_err(io_at(&log_path))?;

    let last = m.log.last();
    let acc = |f: fn(&model::EpochLog) -> Option<f64>| {
        last.and_then(f)
            .map_or("n/a".to_string(), |a| format!("{a:.4}"))
    };
    println!(
        "trained {} on {} (self_loops={}, seed={seed}): val accuracy {}, test accuracy {}",
        config.arch,
        g.name(),
        config.self_loops,
        acc(|l| l.val_accuracy),
        acc(|l| l.test_accuracy)
    );
    println!("checkpoint {}, log {}", out.display(), log_path.display());
    Ok(())
}

/// Dataset with the self-loop setting the model was trained with.
fn model_and_graph(
    common: &mut Common,
    model_flag: Option<PathBuf>,
    cfg: &mut Config,
) -> Result<(TrainedModel, Graph), Error> {
    let dataset: PathBuf = required(pick(common.dataset.take(), cfg.take("dataset")?), "dataset")?;
    let model_path: PathBuf = required(pick(model_flag, cfg.take("model")?), "model")?;
    let m = model::load_checkpoint(&model_path)?;
    let g = load_dataset(&dataset)?.set_self_loops(m.config.self_loops);
    m.check_graph(&g)?;
    Ok((m, g))
}

fn parse_methods(spec: &str) -> Result<Vec<Method>, Error> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<Method>()
                .map_err(|e: ExplainError| Error::Usage(e.to_string()))
        })
        .collect()
}

fn cmd_explain(mut args: ExplainArgs, mut cfg: Config) -> Result<(), Error> {
    let seed = seed(args.common.seed, &mut cfg)?;
    let jobs = pick(args.common.jobs, cfg.take("jobs")?).unwrap_or(0);
    let methods = parse_methods(&required(
        pick(args.method.take(), cfg.take("method")?),
        "method",
    )?)?;
    let out: PathBuf =
        pick(args.out.take(), cfg.take("out")?).unwrap_or_else(|| "explanations".into());
    let sg_samples: Option<usize> = cfg.take("smoothgrad_samples")?;
    let sg_sigma: Option<f64> = cfg.take("smoothgrad_sigma")?;
    let mask_epochs: Option<usize> = cfg.take("mask_epochs")?;
    let mask_lr: Option<f64> = cfg.take("mask_learning_rate")?;
    let pg_epochs: Option<usize> = cfg.take("pg_epochs")?;
    let pg_lr: Option<f64> = cfg.take("pg_learning_rate")?;
    let (m, g) = model_and_graph(&mut args.common, args.model.take(), &mut cfg)?;
    cfg.finish()?;

    let mut settings = ExplainSettings::for_graph(&g, seed);
    settings.smoothgrad.n = sg_samples.unwrap_or(settings.smoothgrad.n);
    settings.smoothgrad.sigma = sg_sigma.unwrap_or(settings.smoothgrad.sigma);
    settings.mask.epochs = mask_epochs.unwrap_or(settings.mask.epochs);
    settings.mask.learning_rate = mask_lr.unwrap_or(settings.mask.learning_rate);

    let artifact = args
        .explainer
        .clone()
        .unwrap_or_else(|| out.join("pgexplainer.json"));
    if args.train_explainer {
        let defaults = PgExplainerConfig::default();
        let pg_config = PgExplainerConfig {
            seed,
            epochs: pg_epochs.unwrap_or(defaults.epochs),
            learning_rate: pg_lr.unwrap_or(defaults.learning_rate),
            ..defaults
        };
        let pg = explain::pgexplainer_train(&m, &g, &g.nodes_in(Split::Train), &pg_config)?;
        fs::create_dir_all(artifact.parent().unwrap_or(Path::new(".")))
            .map_err(io_at(&artifact))?;
        pg.save(&artifact)?;
        println!("edge-mask explainer written to {}", artifact.display());
        settings.pg = Some(pg);
    } else if methods.contains(&Method::PgExplainer) {
        if !artifact.exists() {
            return Err(Error::Usage(format!(
                "pgexplainer needs a trained explainer: run with --train-explainer or pass --explainer ({} not found)",
                artifact.display()
            )));
        }
        settings.pg = Some(PgExplainerModel::load(&artifact)?);
    }

    let targets = g.nodes_in(Split::Test);
    for method in methods {
        let exps = explain::explain_nodes(method, &m, &g, &targets, &settings, jobs)?;
        let path = out.join(format!("{method}.jsonl"));
        let mut w = create(&path)?;
        explain::write_jsonl(&mut w, &exps)
            .and_then(|_| w.flush())
            .map_err(io_at(&path))?;
        println!(
            "{method}: {} explanations -> {}",
            exps.len(),
            path.display()
        );
    }
    Ok(())
}

fn parse_metrics(spec: &str) -> Result<Vec<(MetricKind, Direction)>, Error> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok([MetricKind::Loyalty, MetricKind::LoyaltyProbabilities]
            .into_iter()
            .flat_map(|k| [(k, Direction::Descending), (k, Direction::Ascending)])
            .collect());
    }
    spec.split(',')
        .map(|s| {
            MetricKind::parse(s)
                .ok_or_else(|| Error::Usage(format!("unknown metric {:?}", s.trim())))
        })
        .collect()
}

fn cmd_evaluate(mut args: EvaluateArgs, mut cfg: Config) -> Result<(), Error> {
    let jobs = pick(args.common.jobs, cfg.take("jobs")?).unwrap_or(0);
    let wanted = parse_metrics(
        &pick(args.metrics.take(), cfg.take("metrics")?).unwrap_or_else(|| "all".into()),
    )?;
    let out: PathBuf =
        pick(args.out.take(), cfg.take("out")?).unwrap_or_else(|| "evaluation".into());
    let _ = seed(args.common.seed, &mut cfg)?;
    let (m, g) = model_and_graph(&mut args.common, args.model.take(), &mut cfg)?;
    cfg.finish()?;

    let mut runs: Vec<(Method, Vec<Explanation>)> = Vec::new();
    for path in &args.explanations {
        let file = File::open(path).map_err(io_at(path))?;
        let exps = explain::read_jsonl(BufReader::new(file), path)?;
        let Some(first) = exps.first() else {
            return Err(Error::Usage(format!(
                "{} holds no explanations",
                path.display()
            )));
        };
        let method = first.method;
        if exps.iter().any(|e| e.method != method) {
            return Err(Error::Usage(format!(
                "{} mixes several methods",
                path.display()
            )));
        }
        runs.push((method, exps));
    }

    let label = |method| RunLabel {
        method,
        dataset: g.name().to_string(),
        arch: m.config.arch,
        self_loops: m.config.self_loops,
    };
    let options = EvalOptions {
        jobs,
        ..EvalOptions::default()
    };
    let mut curve_csv = format!("{}\n", report::CURVE_HEADER).into_bytes();
    let mut auc_rows = Vec::new();
    let mut deleted = Vec::new();
    let svg_dir = out.join("svg");
    for (method, exps) in &runs {
        let mut curves = Vec::new();
        for direction in [Direction::Descending, Direction::Ascending] {
            if wanted.iter().any(|w| w.1 == direction) {
                let (l, p) = metrics::curves(&m, &g, exps, direction, &options)?;
                curves.extend(
                    [l, p]
                        .into_iter()
                        .filter(|c| wanted.contains(&(c.kind, c.direction))),
                );
            }
        }
        for c in &curves {
            report::write_curve_rows(&mut curve_csv, &label(*method), c)
                .expect("writing to memory");
            if !args.no_svg {
                let path = svg_dir.join(format!("{}_{method}.svg", c.name()));
                let title = format!(
                    "{} of {} on {} ({})",
                    c.name(),
                    method.display_name(),
                    g.name(),
                    m.config.arch
                );
                write_file(&path, report::curve_svg(c, &title).as_bytes())?;
            }
        }
        for kind in [MetricKind::Loyalty, MetricKind::LoyaltyProbabilities] {
            if wanted.iter().any(|w| w.0 == kind) {
                auc_rows.push(AucRow::from_curves(kind, label(*method), &curves)?);
            }
        }
        deleted.push(AllDeletedRow {
            dataset: g.name().to_string(),
            arch: m.config.arch,
            self_loops: m.config.self_loops,
            method: Some(*method),
            value: metrics::all_deleted_loyalty_with(
                &m,
                &g,
                AllDeleted::NonzeroImportance(exps),
                jobs,
            )?,
            n_nodes: exps.len(),
        });
    }
    if args.baseline.is_some() {
        let targets = runs.first().map_or_else(
            || g.nodes_in(Split::Test),
            |(_, exps)| exps.iter().map(|e| e.target).collect(),
        );
        deleted.push(AllDeletedRow {
            dataset: g.name().to_string(),
            arch: m.config.arch,
            self_loops: m.config.self_loops,
            method: None,
            value: metrics::all_deleted_loyalty_with(
                &m,
                &g,
                AllDeleted::AllNeighbors(&targets),
                jobs,
            )?,
            n_nodes: targets.len(),
        });
    }

    write_file(&out.join("curves.csv"), &curve_csv)?;
    let mut auc_csv = format!("{}\n", report::AUC_HEADER).into_bytes();
    report::write_auc_rows(&mut auc_csv, &auc_rows).expect("writing to memory");
    write_file(&out.join("auc.csv"), &auc_csv)?;
    let mut del_csv = format!("{}\n", report::ALL_DELETED_HEADER).into_bytes();
    report::write_all_deleted_rows(&mut del_csv, &deleted).expect("writing to memory");
    write_file(&out.join("all_deleted.csv"), &del_csv)?;

    print!("{}", String::from_utf8_lossy(&auc_csv));
    print!("{}", String::from_utf8_lossy(&del_csv));
    println!("outputs in {}", out.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let mut w = create(path)?;
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(io_at(path))
}

fn cmd_gadget(args: GadgetArgs, mut cfg: Config) -> Result<(), Error> {
    let seed = seed(args.seed, &mut cfg)?;
    cfg.finish()?;
    let r = report::gadget_report(args.self_loops, args.epochs, seed)?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&r).expect("report serializes")
        );
    } else {
        print!("{r}");
        let leaf = r.leaf_row();
        println!(
            "leaf j={}: gradient {:e}, |delta logit| {:e}",
            leaf.node,
            leaf.gradient,
            leaf.delta_logit.abs()
        );
    }
    Ok(())
}

fn cmd_convert_check(args: ConvertCheckArgs, mut cfg: Config) -> Result<(), Error> {
    let dataset: PathBuf = required(pick(args.dataset, cfg.take("dataset")?), "dataset")?;
    cfg.finish()?;
    if !dataset.is_dir() {
        return Err(Error::Usage(format!(
            "dataset directory {} does not exist",
            dataset.display()
        )));
    }
    let checked = graph::verify_checksums(&dataset)?;
    let g = graph::load_graph(&dataset)?;
    let count = |s| g.nodes_in(s).len();
    println!(
        "{}: {} nodes, {} edges, {} features, {} classes, self_loops={}",
        g.name(),
        g.num_nodes(),
        g.edges().len(),
        g.num_features(),
        g.num_classes(),
        g.has_self_loops()
    );
    println!(
        "splits: train {}, val {}, test {}; labeled {}",
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        g.labels().iter().flatten().count()
    );
    if checked > 0 {
        println!("checksums: {checked} files verified");
    } else {
        println!("checksums: none recorded");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => cmd_train(a, cfg),
        Command::Explain(a) => cmd_explain(a, cfg),
        Command::Evaluate(a) => cmd_evaluate(a, cfg),
        Command::Gadget(a) => cmd_gadget(a, cfg),
        Command::ConvertCheck(a) => cmd_convert_check(a, cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
