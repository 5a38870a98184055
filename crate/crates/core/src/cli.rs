//! The `aquanet` command suite.
//!
//! Every command writes its reports plus a `run_manifest.json` under
//! `--out`. Flags fall back to `AQUANET_*` environment variables
//! (`AQUANET_CONFIG`, `AQUANET_DATASET`, `AQUANET_OUT`, `AQUANET_SEED`,
//! `AQUANET_ITERS`). Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ablation::{run_ablation, Toggles};
use crate::analytics::{dataset_consistency, frequency_pixel_correlation, label_frequency, spatial_mode_map};
use crate::atex::{atex_eval, atex_train, extract_dataset, split_patches, write_patch_store, AtexLabelMap, ClassifierConfig};
use crate::dataset::{save_rgb, Dataset, Split};
use crate::error::{Error, Result};
use crate::modulation::modulation_grad_check;
use crate::network::{AquaNet, AquaNetConfig};
use crate::synthgen::{content_hash, generate_fixture, read_fixture_info, FIXTURES, REANNOTATIONS_DIR};
use crate::training::{evaluate, load_pairs, train, TrainConfig, TrainOptions, TrainPair, CHECKPOINT_FILE, LOG_FILE};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Model, training and texture-classifier settings read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: AquaNetConfig,
    pub train: TrainConfig,
    pub atex: ClassifierConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    fn resolve(path: Option<&Path>, common: &Common) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(seed) = common.seed {
            cfg.model.seed = seed;
            cfg.train.seed = seed;
            cfg.atex.seed = seed;
        }
        if let Some(iters) = common.iters {
            cfg.train.max_iters = iters;
            cfg.atex.iters = iters;
        }
        for t in &common.toggle {
            match t.name {
                ToggleName::TwoPaths => cfg.model.two_paths = t.on,
                ToggleName::Lm => cfg.model.low_level_modulation = t.on,
                ToggleName::Cm => cfg.model.cross_path_modulation = t.on,
            }
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ToggleName {
    TwoPaths,
    Lm,
    Cm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggle {
    name: ToggleName,
    on: bool,
}

fn parse_toggle(s: &str) -> std::result::Result<Toggle, String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=on|off, got `{s}`"))?;
    let name = match k.trim() {
        "two_paths" => ToggleName::TwoPaths,
        "lm" => ToggleName::Lm,
        "cm" => ToggleName::Cm,
        other => return Err(format!("unknown toggle `{other}` (two_paths, lm, cm)")),
    };
    let on = match v.trim() {
        "on" | "true" | "1" => true,
        "off" | "false" | "0" => false,
        other => return Err(format!("toggle value must be on or off, got `{other}`")),
    };
    Ok(Toggle { name, on })
}

fn parse_ratios(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a >= 0.0 && b >= 0.0 && c >= 0.0 && (a + b + c - 1.0).abs() <= 1e-9 => Ok((a, b, c)),
        [_, _, _] => Err(format!("ratios `{s}` must be non-negative and sum to 1")),
        _ => Err(format!("expected three comma-separated ratios, got `{s}`")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "aquanet", version, about = "Aquatic scene segmentation: training, evaluation and dataset analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Root seed for every random consumer of the run.
    #[arg(long, env = "AQUANET_SEED")]
    pub seed: Option<u64>,
    /// Training iterations (overrides the config).
    #[arg(long, env = "AQUANET_ITERS")]
    pub iters: Option<usize>,
    /// Component switch, repeatable: two_paths|lm|cm=on|off.
    #[arg(long, value_parser = parse_toggle)]
    pub toggle: Vec<Toggle>,
}

#[derive(Debug, Args, Clone)]
pub struct Io {
    /// Dataset root (images/, masks/, manifest.csv, taxonomy.toml).
    #[arg(long, env = "AQUANET_DATASET")]
    pub dataset: PathBuf,
    /// Output directory for reports and the run manifest.
    #[arg(long, env = "AQUANET_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write its checkpoint and loss log.
    Train {
        #[command(flatten)]
        io: Io,
        /// TOML file with [model], [train] and [atex] tables.
        #[arg(long, env = "AQUANET_CONFIG")]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Split to train on.
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Evaluate a checkpoint: acc, mIoU, A-acc, A-mIoU and per-class IoU.
    Eval {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate; every sample when omitted.
        #[arg(long)]
        split: Option<Split>,
    },
    /// Train and evaluate the five component-ablation rows.
    Ablate {
        #[command(flatten)]
        io: Io,
        #[arg(long, env = "AQUANET_CONFIG")]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Split used for the table; falls back to the training split when empty.
        #[arg(long, default_value = "val")]
        eval_split: Split,
    },
    /// Label frequencies, group fractions and the count/pixel correlation.
    Stats {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Spatial mode map for one primary label.
    Spatial {
        #[command(flatten)]
        io: Io,
        /// Class name or id.
        #[arg(long)]
        label: String,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Re-annotation consistency against the reference masks.
    Consistency {
        #[command(flatten)]
        io: Io,
        /// Directory of `<annotator>/<name>.png`; defaults to `<dataset>/reannotations`.
        #[arg(long)]
        reannotations: Option<PathBuf>,
    },
    /// Cut texture patches, split them, train and score the texture classifier.
    Atex {
        #[command(flatten)]
        io: Io,
        #[arg(long, env = "AQUANET_CONFIG")]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Train, val, test fractions.
        #[arg(long, default_value = "0.7,0.1,0.2", value_parser = parse_ratios)]
        ratios: (f64, f64, f64),
    },
    /// Write a synthetic fixture dataset.
    Synth {
        /// One of aqua16, consistency4, atex-textures.
        #[arg(long)]
        fixture: String,
        #[arg(long, env = "AQUANET_OUT")]
        out: PathBuf,
        #[arg(long, env = "AQUANET_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of the modulation block gradients.
    Gradcheck {
        #[arg(long, env = "AQUANET_OUT", default_value = "runs/gradcheck")]
        out: PathBuf,
        #[arg(long, env = "AQUANET_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 2)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        size: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Stats { .. } => "stats",
            Command::Spatial { .. } => "spatial",
            Command::Consistency { .. } => "consistency",
            Command::Atex { .. } => "atex",
            Command::Synth { .. } => "synth",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Train { io, .. }
            | Command::Eval { io, .. }
            | Command::Ablate { io, .. }
            | Command::Stats { io, .. }
            | Command::Spatial { io, .. }
            | Command::Consistency { io, .. }
            | Command::Atex { io, .. } => &io.out,
            Command::Synth { out, .. } | Command::Gradcheck { out, .. } => out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Content hashes of the inputs, keyed by role.
    pub hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub version: String,
}

/// What a command reports back for the manifest.
#[derive(Default)]
struct Outcome {
    config: serde_json::Value,
    seed: Option<u64>,
    hashes: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    /// Exit code when the command ran but its check failed.
    failed: bool,
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    write_text(path, &(text + "\n"))
}

fn dataset_hash(root: &Path) -> Result<String> {
    match read_fixture_info(root)? {
        Some(info) => Ok(info.content_hash),
        None => Ok(content_hash(root)?.1),
    }
}

fn open_dataset(root: &Path, hashes: &mut BTreeMap<String, String>) -> Result<Dataset> {
    let ds = Dataset::open_nonempty(root)?;
    hashes.insert("dataset".into(), dataset_hash(root)?);
    Ok(ds)
}

fn file_hash(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn pairs(ds: &Dataset, split: Option<Split>) -> Result<Vec<TrainPair>> {
    let samples = ds.select(split);
    if samples.is_empty() {
        let what = split.map(|s| format!("{} split of ", s)).unwrap_or_default();
        return Err(Error::EmptyDataset(format!("{what}{}", ds.root.display())));
    }
    load_pairs(&samples)
}

fn run_command(cmd: &Command) -> Result<Outcome> {
    let mut o = Outcome::default();
    let out = cmd.out();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match cmd {
        Command::Train {
            io,
            config,
            common,
            split,
        } => {
            let cfg = RunConfig::resolve(config.as_deref(), common)?;
            let ds = open_dataset(&io.dataset, &mut o.hashes)?;
            let data = pairs(&ds, Some(*split))?;
            let mut net = AquaNet::new(cfg.model.clone(), ds.taxonomy.clone())?;
            let opts = TrainOptions {
                out_dir: Some(out),
                progress_every: 50,
            };
            let outcome = train(&mut net, &cfg.train, &data, &opts)?;
            if let Some(last) = outcome.log.rows.last() {
                println!("trained {} iterations, final loss {:.4}", outcome.log.rows.len(), last.loss_total);
            }
            println!("checkpoint: {}", out.join(CHECKPOINT_FILE).display());
            o.outputs.extend([out.join(CHECKPOINT_FILE), out.join(LOG_FILE)]);
            o.seed = Some(cfg.train.seed);
            o.config = serde_json::to_value(&cfg).expect("config serializes");
        }
        Command::Eval { io, checkpoint, split } => {
            let net = AquaNet::load(checkpoint)?;
            o.hashes.insert("checkpoint".into(), file_hash(checkpoint)?);
            let ds = open_dataset(&io.dataset, &mut o.hashes)?;
            let data = pairs(&ds, *split)?;
            let report = evaluate(&net, &data, &net.taxonomy)?;
            let table = report.render_table("AQUANet");
            print!("{table}");
            o.outputs.push(write_json(&out.join("metrics.json"), &report)?);
            o.outputs.push(write_text(&out.join("metrics.txt"), &table)?);
            o.config = serde_json::json!({ "checkpoint": checkpoint, "split": split, "model": net.config });
        }
        Command::Ablate {
            io,
            config,
            common,
            eval_split,
        } => {
            let cfg = RunConfig::resolve(config.as_deref(), common)?;
            let ds = open_dataset(&io.dataset, &mut o.hashes)?;
            let train_data = pairs(&ds, Some(Split::Train))?;
            let eval_data = if ds.split(*eval_split).is_empty() {
                log::warn!("{eval_split} split is empty, scoring on the training split");
                train_data.clone()
            } else {
                pairs(&ds, Some(*eval_split))?
            };
            let table = run_ablation(&cfg.model, &cfg.train, &ds.taxonomy, &train_data, &eval_data, Some(out))?;
            let text = table.render_table();
            print!("{text}");
            o.outputs.push(write_json(&out.join("ablation.json"), &table)?);
            o.outputs.push(write_text(&out.join("ablation.txt"), &text)?);
            for (_, t) in crate::ablation::ABLATION_ROWS {
                o.outputs.push(out.join(Toggles::tag(t)).join(CHECKPOINT_FILE));
            }
            o.seed = Some(cfg.train.seed);
            let rows: Vec<_> = table
                .rows
                .iter()
                .map(|r| serde_json::json!({ "label": r.label, "model": r.model }))
                .collect();
            o.config = serde_json::json!({ "base": cfg, "rows": rows, "eval_split": eval_split });
        }
        Command::Stats { io, split } => {
            let ds = open_dataset(&io.dataset, &mut o.hashes)?;
            let stats = label_frequency(&ds.select(*split), &ds.taxonomy)?;
            let corr = frequency_pixel_correlation(&stats.classes).ok();
            let sum = stats.unlabeled_fraction + stats.classes.iter().map(|c| c.pixel_fraction).sum::<f64>();
            println!(
                "{} images: unlabeled {:.2}%, waterbody {:.2}%, general {:.2}% (fractions sum {:.12})",
                stats.num_images,
                100.0 * stats.unlabeled_fraction,
                100.0 * stats.groups.waterbody,
                100.0 * stats.groups.general,
                sum
            );
            match corr {
                Some(r) => println!("image count vs pixels, Pearson r = {r:.4}"),
                None => println!("image count vs pixels: correlation undefined"),
            }
            let json = serde_json::json!({ "stats": stats, "fraction_sum": sum, "pearson_count_pixels": corr });
            o.outputs.push(write_json(&out.join("stats.json"), &json)?);
            o.outputs.push(write_text(&out.join("label_frequency.csv"), &stats.to_csv())?);
            o.config = serde_json::json!({ "split": split });
        }
        Command::Spatial { io, label, split } => {
            let ds = open_dataset(&io.dataset, &mut o.hashes)?;
            let id = label
                .parse::<u8>()
                .ok()
                .filter(|&i| ds.taxonomy.class(i).is_some())
                .or_else(|| ds.taxonomy.id_of(label))
                .ok_or_else(|| Error::NoImagesForLabel(format!("`{label}` is not a class of the taxonomy")))?;
            let map = spatial_mode_map(&ds.select(*split), id)?;
            let slug = ds.taxonomy.name(id).replace(' ', "_");
            let index_path = out.join(format!("mode_{slug}.png"));
            map.grid.save_png(&index_path)?;
            let color_path = out.join(format!("mode_{slug}_color.png"));
            save_rgb(&color_path, &map.render(ds.taxonomy.ignore_id()))?;
            let composition: Vec<_> = map
                .composition()
                .into_iter()
                .map(|(i, f)| {
                    let name = ds.taxonomy.class(i).map(|c| c.name.clone()).unwrap_or_else(|| "unlabeled".into());
                    serde_json::json!({ "id": i, "name": name, "fraction": f })
                })
                .collect();
            println!("mode map of `{}` over {} images written to {}", ds.taxonomy.name(id), map.n_images, index_path.display());
            o.outputs.push(index_path);
            o.outputs.push(color_path);
            let summary = serde_json::json!({ "label": id, "name": ds.taxonomy.name(id), "n_images": map.n_images, "composition": composition });
            o.outputs.push(write_json(&out.join(format!("mode_{slug}.json")), &summary)?);
            o.config = serde_json::json!({ "label": id, "split": split });
        }
        Command::Consistency { io, reannotations } => {
            let ds = open_dataset(&io.dataset, &mut o.hashes)?;
            let dir = reannotations.clone().unwrap_or_else(|| io.dataset.join(REANNOTATIONS_DIR));
            let report = dataset_consistency(&ds, &dir)?;
            let table = report.render_table();
            print!("{table}");
            o.outputs.push(write_json(&out.join("consistency.json"), &report)?);
            o.outputs.push(write_text(&out.join("consistency.txt"), &table)?);
            o.config = serde_json::json!({ "reannotations": dir });
        }
        Command::Atex {
            io,
            config,
            common,
            ratios,
        } => {
            let cfg = RunConfig::resolve(config.as_deref(), common)?;
            let ds = open_dataset(&io.dataset, &mut o.hashes)?;
            let map = AtexLabelMap::new(&ds.taxonomy);
            let patches = extract_dataset(&ds.select(None), &ds.taxonomy, &map)?;
            let total = patches.len();
            let splits = split_patches(patches, *ratios, cfg.atex.seed)?;
            println!(
                "{total} patches: {} train, {} val, {} test",
                splits.train.len(),
                splits.val.len(),
                splits.test.len()
            );
            let store = out.join("patches");
            o.outputs.push(write_patch_store(&store, &splits, &map)?);
            let (model, losses) = atex_train(&splits.train, map.labels.clone(), &cfg.atex)?;
            let ckpt = out.join("texture_classifier.aqn");
            model.save(&ckpt)?;
            o.outputs.push(ckpt);
            let eval_set = if splits.test.is_empty() { &splits.train } else { &splits.test };
            let report = atex_eval(&model, eval_set)?;
            let table = report.render_table("texture cnn");
            print!("{table}");
            let losses_csv: String = std::iter::once("iter,loss\n".to_string())
                .chain(losses.iter().enumerate().map(|(i, l)| format!("{i},{l:e}\n")))
                .collect();
            o.outputs.push(write_text(&out.join("atex_train_log.csv"), &losses_csv)?);
            o.outputs.push(write_json(&out.join("atex_report.json"), &report)?);
            o.outputs.push(write_text(&out.join("atex_report.txt"), &table)?);
            o.seed = Some(cfg.atex.seed);
            o.config = serde_json::json!({ "atex": cfg.atex, "ratios": ratios, "labels": map.labels });
        }
        Command::Synth { fixture, out, seed } => {
            if !FIXTURES.contains(&fixture.as_str()) {
                return Err(Error::InvalidSpec(format!("unknown fixture `{fixture}` (expected one of {})", FIXTURES.join(", "))));
            }
            let info = generate_fixture(fixture, out, *seed)?;
            println!("{} written to {} ({} files, hash {})", info.name, out.display(), info.files, info.content_hash);
            o.hashes.insert("fixture".into(), info.content_hash.clone());
            o.outputs.push(out.clone());
            o.seed = Some(*seed);
            o.config = serde_json::json!({ "fixture": fixture });
        }
        Command::Gradcheck {
            seed,
            epsilon,
            channels,
            size,
            ..
        } => {
            let report = modulation_grad_check(*channels, *size, *epsilon, *seed)?;
            let pass = report.max_relative_error < GRADCHECK_TOLERANCE;
            println!(
                "max relative error {:.3e} over {} entries: {}",
                report.max_relative_error,
                report.checked,
                if pass { "PASS" } else { "FAIL" }
            );
            let json = serde_json::json!({
                "max_relative_error": report.max_relative_error,
                "checked": report.checked,
                "tolerance": GRADCHECK_TOLERANCE,
                "pass": pass,
            });
            o.outputs.push(write_json(&out.join("gradcheck.json"), &json)?);
            o.failed = !pass;
            o.seed = Some(*seed);
            o.config = serde_json::json!({ "epsilon": epsilon, "channels": channels, "size": size });
        }
    }
    Ok(o)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let outcome = match run_command(&cli.command) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        config: outcome.config,
        seed: outcome.seed,
        hashes: outcome.hashes,
        outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
        started_unix,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    if let Err(e) = write_json(&cli.command.out().join(MANIFEST_FILE), &manifest) {
        eprintln!("error: {e}");
        return 2;
    }
    if outcome.failed {
        2
    } else {
        0
    }
}
