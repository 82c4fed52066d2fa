use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use milt_core::data::{dataset_name_from_path, read_musk_uci};
use milt_core::synthetic::{generate_clustered, generate_synthetic, ClusteredConfig, PlantedConfig};
use milt_core::tree::PositionKind;
use milt_core::{
    build_miltree, classify_positions, positioning_experiment, run_benchmark_on, BenchConfig, EvalResult, Method,
    MilDataset, SelectionConfig, SvmConfig, SvmVariant, TrainingMode, TrainingSource,
};

#[derive(Parser)]
#[command(name = "milt", version, about = "Multiple-instance learning workbench")]
struct Cli {
    /// Directory holding `<name>.csv` datasets.
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset file to the canonical CSV in the data directory.
    Ingest {
        input: PathBuf,
        /// Input is the UCI Musk `.data` layout.
        #[arg(long)]
        musk_uci: bool,
        /// Dataset name (defaults to the file stem).
        #[arg(long)]
        name: Option<String>,
        /// Output path (defaults to `<data-dir>/<name>.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the bag tree and write it as JSON.
    Tree {
        dataset: String,
        #[arg(long, default_value = "med")]
        method: Method,
        #[arg(long)]
        out: PathBuf,
        /// Also write a Newick file next to the JSON.
        #[arg(long)]
        newick: bool,
    },
    /// Suggest, train, update and score on the held-out bags.
    Bench {
        dataset: String,
        #[command(flatten)]
        bench: BenchArgs,
        /// Training bags: suggested by tree position or a random split.
        #[arg(long, default_value = "combined")]
        source: Source,
    },
    /// External/internal bag positions, optionally with the three-way
    /// training-set experiment.
    Positions {
        dataset: String,
        /// List every bag.
        #[arg(long)]
        bags: bool,
        /// Run the External / Internal / Combined comparison.
        #[arg(long)]
        experiment: bool,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        kind: SynthKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Args, Clone)]
struct BenchArgs {
    #[arg(long, default_value = "med")]
    method: Method,
    /// Training fraction.
    #[arg(long, default_value_t = 0.3)]
    split: f64,
    /// A seed, an inclusive range `a..b` or a list `a,b,c`.
    #[arg(long, default_value = "1")]
    seed: String,
    #[arg(long, default_value = "nu")]
    svm: SvmVariant,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.6)]
    nu: f64,
    /// Automatic update rounds after the first training.
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    /// Min-max scale features on the training rows.
    #[arg(long)]
    scale: bool,
    /// CSV output instead of an aligned table.
    #[arg(long)]
    csv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Combined,
    External,
    Internal,
    Random,
}

impl From<Source> for TrainingSource {
    fn from(s: Source) -> Self {
        match s {
            Source::Combined => TrainingSource::Suggested {
                mode: TrainingMode::Combined,
            },
            Source::External => TrainingSource::Suggested {
                mode: TrainingMode::External,
            },
            Source::Internal => TrainingSource::Suggested {
                mode: TrainingMode::Internal,
            },
            Source::Random => TrainingSource::Random,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// One planted positive instance per positive bag.
    Planted,
    /// Three classes with sub-clusters.
    Clustered,
    /// Three overlapping classes of about 67 bags each.
    ImageLike,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().context("bad seed range start")?;
        let b: u64 = b.trim().parse().context("bad seed range end")?;
        if a > b {
            bail!("empty seed range {text}");
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

impl BenchArgs {
    fn svm_config(&self) -> Result<SvmConfig> {
        let cfg = SvmConfig {
            variant: self.svm,
            c: self.c,
            nu: self.nu,
            scale: self.scale,
            ..SvmConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn config(&self, seed: u64, source: TrainingSource) -> Result<BenchConfig> {
        Ok(BenchConfig {
            method: self.method,
            train_fraction: self.split,
            seed,
            selection: SelectionConfig::default(),
            svm: self.svm_config()?,
            rounds: self.rounds,
            source,
        })
    }
}

fn load_dataset(data_dir: &Path, name: &str) -> Result<Arc<MilDataset>> {
    let direct = PathBuf::from(name);
    let path = if direct.is_file() {
        direct
    } else {
        data_dir.join(format!("{name}.csv"))
    };
    let ds = MilDataset::load_csv(&path).with_context(|| format!("cannot load dataset from {}", path.display()))?;
    Ok(Arc::new(ds))
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        println!("{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
}

const RESULT_HEADER: [&str; 10] = [
    "dataset", "method", "source", "seed", "train", "test", "matching", "accuracy", "precision", "f1",
];

fn result_row(r: &EvalResult) -> Vec<String> {
    vec![
        r.dataset.clone(),
        r.method.to_string(),
        r.source_label(),
        r.seed.to_string(),
        r.n_train.to_string(),
        r.n_test.to_string(),
        format!("{} ({:.1}%)", r.matching, 100.0 * r.accuracy),
        format!("{:.4}", r.accuracy),
        format!("{:.4}", r.precision),
        format!("{:.4}", r.f1),
    ]
}

fn print_results(results: &[EvalResult], csv: bool) {
    if csv {
        println!("{}", EvalResult::CSV_HEADER);
        for r in results {
            println!("{}", r.csv_row());
        }
        return;
    }
    let rows: Vec<Vec<String>> = results.iter().map(result_row).collect();
    print_table(&RESULT_HEADER, &rows);
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ingest(data_dir: &Path, input: &Path, musk_uci: bool, name: Option<String>, out: Option<PathBuf>) -> Result<()> {
    let name = name.unwrap_or_else(|| dataset_name_from_path(input));
    let ds = if musk_uci {
        let file = File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
        read_musk_uci(BufReader::new(file), name.clone())?
    } else {
        MilDataset::load_csv(input)?.renamed(name.clone())
    };
    let out = out.unwrap_or_else(|| data_dir.join(format!("{name}.csv")));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    ds.save_csv(&out)?;
    let counts: Vec<String> = ds.class_counts().iter().map(usize::to_string).collect();
    println!(
        "{name}: {} bags ({}), {} instances, dimension {} -> {}",
        ds.len(),
        counts.join("/"),
        ds.instance_count(),
        ds.dimension(),
        out.display()
    );
    Ok(())
}

fn tree(data_dir: &Path, dataset: &str, method: Method, out: &Path, newick: bool) -> Result<()> {
    let ds = load_dataset(data_dir, dataset)?;
    let (tree, _) = build_miltree(ds.clone(), method, &SelectionConfig::default())?;
    let positions = classify_positions(&tree);
    let json = tree.layout_json(&positions);
    std::fs::write(out, serde_json::to_string_pretty(&json)?)?;
    if newick {
        let path = out.with_extension("nwk");
        std::fs::write(&path, tree.bag_tree().to_newick(|b| ds.bag(b).id.clone()))?;
        println!("newick -> {}", path.display());
    }
    println!(
        "{}: {} leaves, {} virtual nodes ({method}) -> {}",
        ds.name(),
        tree.bag_tree().leaf_count(),
        tree.bag_tree().internal_count(),
        out.display()
    );
    Ok(())
}

fn bench(data_dir: &Path, dataset: &str, args: &BenchArgs, source: Source) -> Result<()> {
    let ds = load_dataset(data_dir, dataset)?;
    let seeds = parse_seeds(&args.seed)?;
    let (tree, _) = build_miltree(ds, args.method, &SelectionConfig::default())?;
    let tree = Arc::new(tree);
    let results = seeds
        .iter()
        .map(|&seed| Ok(run_benchmark_on(tree.clone(), &args.config(seed, source.into())?)?))
        .collect::<Result<Vec<_>>>()?;
    print_results(&results, args.csv);
    if !args.csv && results.len() > 1 {
        println!(
            "mean over {} seeds: accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
            results.len(),
            mean(results.iter().map(|r| r.accuracy)),
            mean(results.iter().map(|r| r.precision)),
            mean(results.iter().map(|r| r.recall)),
            mean(results.iter().map(|r| r.f1))
        );
    }
    Ok(())
}

fn positions(data_dir: &Path, dataset: &str, bags: bool, experiment: bool, args: &BenchArgs) -> Result<()> {
    let method = args.method;
    let ds = load_dataset(data_dir, dataset)?;
    let (tree, _) = build_miltree(ds.clone(), method, &SelectionConfig::default())?;
    let positions = classify_positions(&tree);
    if bags {
        let rows: Vec<Vec<String>> = positions
            .iter()
            .zip(ds.bags())
            .map(|(p, b)| vec![p.bag_id.clone(), ds.class_names()[b.label].clone(), p.kind.to_string(), p.depth_score.to_string()])
            .collect();
        print_table(&["bag_id", "class", "position", "depth"], &rows);
    }
    let rows: Vec<Vec<String>> = (0..ds.n_classes())
        .map(|c| {
            let count = |kind| {
                positions
                    .iter()
                    .zip(ds.bags())
                    .filter(|(p, b)| b.label == c && p.kind == kind)
                    .count()
            };
            vec![
                ds.class_names()[c].clone(),
                count(PositionKind::External).to_string(),
                count(PositionKind::Internal).to_string(),
            ]
        })
        .collect();
    print_table(&["class", "external", "internal"], &rows);
    if experiment {
        let tree = Arc::new(tree);
        let mut results = Vec::new();
        for seed in parse_seeds(&args.seed)? {
            results.extend(positioning_experiment(tree.clone(), &args.config(seed, TrainingSource::default())?)?);
        }
        println!();
        print_results(&results, args.csv);
    }
    Ok(())
}

fn synth(kind: SynthKind, seed: u64, out: &Path) -> Result<()> {
    let (ds, manifest) = match kind {
        SynthKind::Planted => {
            let s = generate_synthetic(&PlantedConfig {
                seed,
                ..PlantedConfig::default()
            })?;
            let manifest = s.manifest_json();
            (s.dataset, Some(manifest))
        }
        SynthKind::Clustered => (
            generate_clustered(&ClusteredConfig {
                seed,
                ..ClusteredConfig::default()
            })?
            .dataset,
            None,
        ),
        SynthKind::ImageLike => (generate_clustered(&ClusteredConfig::image_like(seed))?.dataset, None),
    };
    ds.renamed(dataset_name_from_path(out)).save_csv(out)?;
    if let Some(m) = manifest {
        let path = out.with_extension("manifest.json");
        std::fs::write(&path, m)?;
        println!("manifest -> {}", path.display());
    }
    println!("{} bags, {} instances -> {}", ds.len(), ds.instance_count(), out.display());
    Ok(())
}

async fn serve(data_dir: PathBuf, host: &str, port: u16) -> Result<()> {
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
    let server = milt_api::Server::bind(addr, &data_dir)
        .await
        .with_context(|| format!("cannot serve {} on {addr}", data_dir.display()))?;
    println!("serving {} on http://{}", data_dir.display(), server.local_addr()?);
    server.run().await?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest {
            input,
            musk_uci,
            name,
            out,
        } => ingest(&cli.data_dir, &input, musk_uci, name, out),
        Command::Tree {
            dataset,
            method,
            out,
            newick,
        } => tree(&cli.data_dir, &dataset, method, &out, newick),
        Command::Bench { dataset, bench: args, source } => bench(&cli.data_dir, &dataset, &args, source),
        Command::Positions {
            dataset,
            bags,
            experiment,
            bench: args,
        } => positions(&cli.data_dir, &dataset, bags, experiment, &args),
        Command::Synth { kind, seed, out } => synth(kind, seed, &out),
        Command::Serve { port, host } => tokio::runtime::Runtime::new()?.block_on(serve(cli.data_dir, &host, port)),
    }
}
