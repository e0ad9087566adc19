//! Command-line front end. Every subcommand writes under `--out`, or under
//! `$HFREID_OUT/<subcommand>` when `--out` is absent, and records its
//! resolved config there. Exit codes: 0 success, 1 input error, 2 numeric failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hfreid::datapipe::synth::{write_dataset, Background, SynthConfig};
use hfreid::datapipe::{split_identities, Manifest, SplitSpec};
use hfreid::evaluator::{distance_matrix, evaluate};
use hfreid::harness::viz::{attnmap, augment_preview};
use hfreid::harness::{
    ablate, gallery, output_root, sweep, train, write_json, Checkpoint, ImageSet, Stage, SweepParam, TrainConfig,
};
use hfreid::raster::ColorImage;
use hfreid::spectral::AlphaMode;
use hfreid::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hfreid",
    version,
    about = "Two-stream high-frequency re-identification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one side of a split.
    Eval(EvalArgs),
    /// Train over a grid of mu or lambda values.
    Sweep(SweepArgs),
    /// Train the ablation ladder and tabulate it.
    Ablate(AblateArgs),
    /// Render class-attention heatmaps and selected patches.
    Attnmap(AttnArgs),
    /// Write every stage of the frequency augmentation for one image.
    AugmentPreview(PreviewArgs),
    /// Split a manifest's identities into train and test.
    Split(SplitArgs),
    /// Generate a synthetic textured-identity dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value config file; keys mirror the training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point before the file and overrides: base, desk or toy.
    #[arg(long, default_value = "toy")]
    preset: String,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig::load_with(
            TrainConfig::preset(&self.preset)?,
            self.config.as_deref(),
            &self.overrides,
        )?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Split sidecar; when absent the identities are split with the config seed.
    #[arg(long)]
    split: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self, cfg: &TrainConfig, out: &Path) -> Result<(ImageSet, ImageSet)> {
        let manifest = Manifest::load(&self.manifest)?;
        let split = match &self.split {
            Some(p) => SplitSpec::load(p)?,
            None => {
                let s = split_identities(&manifest, cfg.seed)?;
                s.save(&out.join("split.txt"))?;
                s
            }
        };
        ImageSet::load_split(&manifest, &split, cfg.image_height, cfg.image_width)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Report path; defaults to `report.json` under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate the training identities instead of the test identities.
    #[arg(long)]
    train_side: bool,
    /// Also write the query-by-gallery distance matrix as TSV.
    #[arg(long)]
    distances: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// `mu` or `lambda`.
    #[arg(long)]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated stages; defaults to the whole ladder.
    #[arg(long, value_delimiter = ',')]
    stages: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttnArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(required = true)]
    images: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PreviewArgs {
    #[arg(long)]
    image: PathBuf,
    /// Mixing ratio in [0, 0.5], or `random`.
    #[arg(long, default_value = "random")]
    alpha: String,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sidecar path; defaults to `split.txt` under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    ids: usize,
    #[arg(long, default_value_t = 10)]
    imgs_per_id: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// `clutter` or `plain`.
    #[arg(long, default_value = "clutter")]
    background: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(out: &Option<PathBuf>, command: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| output_root().join(command))
}

fn out_file(out: &Option<PathBuf>, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| output_root().join(name))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            let dir = out_dir(&a.out, "train");
            create_dir(&dir)?;
            let (tr, te) = a.data.load(&cfg, &dir)?;
            let run = train(&cfg, &tr, Some(&te), Some(&dir))?;
            if let Some(r) = &run.record.final_report {
                println!("mAP {:.4}  rank1 {:.4}  mINP {:.4}", r.map, r.rank1, r.minp);
            }
            println!("outputs in {}", dir.display());
        }
        Command::Eval(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let manifest = Manifest::load(&a.manifest)?;
            let split = SplitSpec::load(&a.split)?;
            let (tr, te) = ImageSet::load_split(&manifest, &split, ck.config.image_height, ck.config.image_width)?;
            let set = if a.train_side { tr } else { te };
            let g = gallery(&ck.model()?, &set)?;
            let report = evaluate(&g, ck.config.metric)?;
            let path = out_file(&a.out, "report.json");
            let dir = path
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            create_dir(dir)?;
            ck.config.save(&dir.join("config.toml"))?;
            write_json(&path, &report)?;
            if let Some(p) = &a.distances {
                let d = distance_matrix(&g, ck.config.metric);
                let mut text = String::new();
                let _ = writeln!(text, "\t{}", g.ids.join("\t"));
                for (id, row) in g.ids.iter().zip(d.rows()) {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
                    let _ = writeln!(text, "{id}\t{}", cells.join("\t"));
                }
                std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
            }
            println!(
                "mAP {:.4}  rank1 {:.4}  rank5 {:.4}  mINP {:.4}  ({} queries, {} skipped)",
                report.map, report.rank1, report.rank5, report.minp, report.num_queries, report.num_skipped
            );
        }
        Command::Sweep(a) => {
            let cfg = a.config.resolve()?;
            let dir = out_dir(&a.out, "sweep");
            create_dir(&dir)?;
            let (tr, te) = a.data.load(&cfg, &dir)?;
            let table = sweep(
                &cfg,
                SweepParam::parse(&a.param)?,
                &a.values,
                &a.seeds,
                &tr,
                &te,
                Some(&dir),
            )?;
            print!("{}", table.render());
        }
        Command::Ablate(a) => {
            let cfg = a.config.resolve()?;
            let stages = if a.stages.is_empty() {
                Stage::LADDER.to_vec()
            } else {
                a.stages.iter().map(|s| Stage::parse(s)).collect::<Result<_>>()?
            };
            let dir = out_dir(&a.out, "ablate");
            create_dir(&dir)?;
            let (tr, te) = a.data.load(&cfg, &dir)?;
            let table = ablate(&cfg, &stages, &a.seeds, &tr, &te, Some(&dir))?;
            print!("{}", table.render());
        }
        Command::Attnmap(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let dir = out_dir(&a.out, "attnmap");
            for p in attnmap(&ck, &a.images, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::AugmentPreview(a) => {
            let mut cfg = a.config.resolve()?;
            if let Some(c) = a.cutoff {
                cfg.cutoff = c;
            }
            let alpha = match a.alpha.as_str() {
                "random" => AlphaMode::Random,
                v => AlphaMode::Fixed(
                    v.parse()
                        .map_err(|_| Error::Config(format!("alpha must be a number or `random`, got {v:?}")))?,
                ),
            };
            let dir = out_dir(&a.out, "augment_preview");
            let trace = augment_preview(&ColorImage::load(&a.image)?, &cfg, alpha, a.seed, &dir)?;
            println!(
                "alpha {:.4}, mask side {}, outputs in {}",
                trace.alpha,
                trace.mask.side(),
                dir.display()
            );
        }
        Command::Split(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let split = split_identities(&manifest, a.seed)?;
            let path = out_file(&a.out, "split.txt");
            split.save(&path)?;
            println!(
                "{} train / {} test identities -> {}",
                split.train.len(),
                split.test.len(),
                path.display()
            );
        }
        Command::Synth(a) => {
            let background = match a.background.as_str() {
                "clutter" => Background::Clutter,
                "plain" => Background::Plain,
                other => {
                    return Err(Error::Config(format!(
                        "background must be clutter or plain, got {other:?}"
                    )))
                }
            };
            let cfg = SynthConfig {
                ids: a.ids,
                imgs_per_id: a.imgs_per_id,
                size: a.size,
                background,
                seed: a.seed,
            };
            let dir = out_dir(&a.out, "synth");
            let manifest = write_dataset(&cfg, &dir)?;
            println!(
                "{} images -> {}",
                manifest.records.len(),
                dir.join("manifest.tsv").display()
            );
        }
    }
    Ok(())
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
