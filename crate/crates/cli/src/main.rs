//! `irstkit`: the pipeline stages as subcommands with shared config
//! parsing, seeding, and line-oriented logging.
//!
//! Diagnostics go to stderr, data to files or stdout, and every flag can
//! also come from a `key = value` config file (explicit flags win). Builds
//! and evaluations are deterministic for a fixed seed.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use irstkit::aff::check::{all_passed, run_all};
use irstkit::dataset::{build_dataset, validate_dataset, BuildConfig, NegativesFrom};
use irstkit::imaging::list_raster_files;
use irstkit::metrics::{evaluate_report, MatchCriterion};
use irstkit::negaug::{extract_targets, make_negatives};
use irstkit::noise::{displace, select_noise_prone, NoiseField, NoiseSamplerConfig};
use irstkit::rng::derive_rng;
use irstkit::{with_jobs, GrayImage, Mask, Rect};

const DEFAULT_ALPHA: f64 = 0.1;
const DEFAULT_PATCH_SIDE: u32 = 3;
const DEFAULT_GRID: u32 = 8;
const DEFAULT_MATCH_DIST: f64 = 3.0;
const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(
    name = "irstkit",
    version,
    about = "Dataset synthesis and evaluation toolkit for single-frame infrared small-target detection"
)]
struct Cli {
    /// Key-value config file; explicit flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads for per-image stages (default: machine parallelism).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SamplerFlags {
    /// Regions per side of the sampling grid [default: 8].
    #[arg(long, value_name = "N", value_parser = parse_grid)]
    grid: Option<u32>,

    /// Strict upper bound on region variance (working scale, in (0, 1]);
    /// derived from the corpus (25th percentile) when omitted.
    #[arg(long, value_name = "F", value_parser = parse_positive)]
    var_max: Option<f64>,

    /// Strict upper bound on region mean (working scale, in (0, 1]);
    /// derived from the corpus (50th percentile) when omitted.
    #[arg(long, value_name = "F", value_parser = parse_positive)]
    mean_max: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthesized dataset: originals, noise-displaced variants,
    /// and rotation negatives, with a reproducible manifest.
    Build {
        /// Input directory containing images/ and masks/ with matching stems.
        #[arg(long = "in", value_name = "DIR")]
        in_dir: PathBuf,
        /// Output dataset directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Noise blend weight in [0, 1]; 0 disables displacement [default: 0.1].
        #[arg(long, value_name = "F", value_parser = parse_alpha)]
        alpha: Option<f64>,
        /// Anchor patch side for negatives, odd [default: 3].
        #[arg(long = "s", value_name = "N", value_parser = parse_odd)]
        patch_side: Option<u32>,
        #[command(flatten)]
        sampler: SamplerFlags,
        /// Number of corpus images sampled as noise sources [default: all].
        #[arg(long, value_name = "N", value_parser = parse_count)]
        n_sources: Option<usize>,
        /// Global seed for all randomized choices [default: 0].
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Which images feed the negative stage [default: both].
        #[arg(long, value_name = "WHICH")]
        negatives_from: Option<NegativesFrom>,
        /// Drop the zero-rotation (identity) negatives.
        #[arg(long)]
        drop_identity: bool,
    },
    /// Evaluate predicted masks against ground truth (matching stems).
    Evaluate {
        /// Directory of predicted binary masks.
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        /// Directory of ground-truth masks.
        #[arg(long, value_name = "DIR")]
        gt: PathBuf,
        /// Centroid matching cutoff in pixels [default: 3].
        #[arg(long, value_name = "N", value_parser = parse_dist)]
        max_dist: Option<f64>,
        /// Also write the report to this file.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Select noise-prone regions and write full-frame noise fields.
    SampleNoise {
        /// One image file or a flat directory of images.
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        /// Output directory for the noise fields.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        sampler: SamplerFlags,
        /// Seed for the uniform choice among qualifying regions [default: 0].
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Blend a noise field into an image.
    Displace {
        /// Input image.
        #[arg(long, value_name = "IMG")]
        input: PathBuf,
        /// Noise field image (same dimensions as the input).
        #[arg(long, value_name = "IMG")]
        noise: PathBuf,
        /// Blend weight in [0, 1] [default: 0.1].
        #[arg(long, value_name = "F", value_parser = parse_alpha)]
        alpha: Option<f64>,
        /// Output image path.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Generate the rotation negatives of one image/mask pair.
    Negaug {
        /// Input image.
        #[arg(long, value_name = "IMG")]
        image: PathBuf,
        /// Binary annotation mask for the image.
        #[arg(long, value_name = "MASK")]
        mask: PathBuf,
        /// Output directory (gains images/ and masks/).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Anchor patch side, odd [default: 3].
        #[arg(long = "s", value_name = "N", value_parser = parse_odd)]
        patch_side: Option<u32>,
    },
    /// Run the attention/loss invariant and gradient suite.
    AffCheck {
        /// Seed for the randomized instances [default: 0].
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Comma-separated CxHxW sizes [default: 4x8x8,3x9x9,1x8x8].
        #[arg(long, value_name = "SIZES")]
        sizes: Option<String>,
    },
    /// Re-check every invariant of a built dataset.
    Validate {
        /// Dataset directory holding manifest.txt, images/, masks/.
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
    },
}

// Flag parsers double as range checks so a bad value names its field.

fn parse_alpha(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("alpha must be a number in [0, 1], got `{s}`"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("alpha must lie in [0, 1], got {v}"))
    }
}

fn parse_odd(s: &str) -> Result<u32, String> {
    let v: u32 = s.parse().map_err(|_| format!("patch side must be an odd integer, got `{s}`"))?;
    if v % 2 == 1 {
        Ok(v)
    } else {
        Err(format!("patch side must be odd, got {v}"))
    }
}

fn parse_grid(s: &str) -> Result<u32, String> {
    let v: u32 = s.parse().map_err(|_| format!("grid must be a positive integer, got `{s}`"))?;
    if v >= 1 {
        Ok(v)
    } else {
        Err("grid must be at least 1".to_string())
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a positive number, got `{s}`"))?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("value must be positive, got {v}"))
    }
}

fn parse_count(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("expected a positive integer, got `{s}`"))?;
    if v >= 1 {
        Ok(v)
    } else {
        Err("count must be at least 1".to_string())
    }
}

fn parse_dist(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("max-dist must be a number >= 0, got `{s}`"))?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("max-dist must be non-negative, got {v}"))
    }
}

/// `key = value` config file; `#` starts a comment. Keys use the flag
/// spelling (`var-max`) with `_` accepted as an alias separator.
fn load_config_file(path: &Path) -> anyhow::Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("failed to read config file {}", path.display()))?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config {} line {}: expected `key = value`", path.display(), lineno + 1);
        };
        map.insert(key.trim().replace('_', "-").to_ascii_lowercase(), value.trim().to_string());
    }
    Ok(map)
}

/// Resolved global configuration: builtin defaults, overridden by the
/// config file, overridden by explicit flags.
struct GlobalConfig {
    seed: u64,
    alpha: f64,
    patch_side: u32,
    grid: u32,
    var_max: Option<f64>,
    mean_max: Option<f64>,
    n_sources: Option<usize>,
    match_dist: f64,
    negatives_from: NegativesFrom,
    drop_identity: bool,
    jobs: Option<usize>,
}

struct ConfigSource {
    file: HashMap<String, String>,
}

impl ConfigSource {
    fn get<T>(&self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> anyhow::Result<Option<T>> {
        match self.file.get(key) {
            Some(raw) => {
                let value = parse(raw).map_err(|e| anyhow::anyhow!("config field {key}: {e}"))?;
                Ok(Some(value))
            }
            None => Ok(None),
        }
    }
}

impl GlobalConfig {
    #[allow(clippy::too_many_arguments)]
    fn resolve(
        source: &ConfigSource,
        jobs: Option<usize>,
        seed: Option<u64>,
        alpha: Option<f64>,
        patch_side: Option<u32>,
        sampler: &SamplerFlags,
        n_sources: Option<usize>,
        match_dist: Option<f64>,
        negatives_from: Option<NegativesFrom>,
        drop_identity: bool,
    ) -> anyhow::Result<GlobalConfig> {
        let parse_seed = |s: &str| s.parse::<u64>().map_err(|_| "seed must be an integer".to_string());
        let parse_negfrom = |s: &str| s.parse::<NegativesFrom>().map_err(|e| e.to_string());
        let parse_bool = |s: &str| s.parse::<bool>().map_err(|_| "expected true or false".to_string());
        Ok(GlobalConfig {
            seed: seed.or(source.get("seed", parse_seed)?).unwrap_or(DEFAULT_SEED),
            alpha: alpha.or(source.get("alpha", parse_alpha)?).unwrap_or(DEFAULT_ALPHA),
            patch_side: patch_side.or(source.get("s", parse_odd)?).unwrap_or(DEFAULT_PATCH_SIDE),
            grid: sampler.grid.or(source.get("grid", parse_grid)?).unwrap_or(DEFAULT_GRID),
            var_max: sampler.var_max.or(source.get("var-max", parse_positive)?),
            mean_max: sampler.mean_max.or(source.get("mean-max", parse_positive)?),
            n_sources: n_sources.or(source.get("n-sources", parse_count)?),
            match_dist: match_dist.or(source.get("match-dist", parse_dist)?).unwrap_or(DEFAULT_MATCH_DIST),
            negatives_from: negatives_from
                .or(source.get("negatives-from", parse_negfrom)?)
                .unwrap_or(NegativesFrom::Both),
            drop_identity: drop_identity || source.get("drop-identity", parse_bool)?.unwrap_or(false),
            jobs,
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let source = ConfigSource {
        file: match &cli.config {
            Some(path) => load_config_file(path)?,
            None => HashMap::new(),
        },
    };
    let jobs = match cli.jobs {
        Some(j) => Some(j),
        None => source.get("jobs", |s| {
            s.parse::<usize>().map_err(|_| "jobs must be an integer".to_string())
        })?,
    };

    match cli.command {
        Command::Build {
            in_dir,
            out,
            alpha,
            patch_side,
            sampler,
            n_sources,
            seed,
            negatives_from,
            drop_identity,
        } => {
            let cfg = GlobalConfig::resolve(
                &source,
                jobs,
                seed,
                alpha,
                patch_side,
                &sampler,
                n_sources,
                None,
                negatives_from,
                drop_identity,
            )?;
            let build_cfg = BuildConfig {
                grid: cfg.grid,
                var_max: cfg.var_max,
                mean_max: cfg.mean_max,
                n_sources: cfg.n_sources,
                alpha: cfg.alpha,
                patch_side: cfg.patch_side,
                negatives_from: cfg.negatives_from,
                drop_identity: cfg.drop_identity,
            };
            let manifest =
                with_jobs(cfg.jobs, || build_dataset(&in_dir, &out, &build_cfg, cfg.seed))?;
            println!(
                "built\toriginals={}\tnoise={}\tnegatives={}\ttotal={}",
                manifest.counts.originals,
                manifest.counts.noise_variants,
                manifest.counts.negatives,
                manifest.counts.total
            );
            println!("manifest\t{}", out.join(irstkit::dataset::MANIFEST_FILE).display());
            Ok(())
        }
        Command::Evaluate { pred, gt, max_dist, report } => {
            let cfg = GlobalConfig::resolve(
                &source,
                jobs,
                None,
                None,
                None,
                &SamplerFlags::default(),
                None,
                max_dist,
                None,
                false,
            )?;
            let crit = MatchCriterion { max_centroid_dist: cfg.match_dist };
            let result = with_jobs(cfg.jobs, || evaluate_report(&pred, &gt, &crit))?;
            let text = result.render();
            print!("{text}");
            if let Some(path) = report {
                std::fs::write(&path, &text)
                    .with_context(|| format!("failed to write report {}", path.display()))?;
            }
            Ok(())
        }
        Command::SampleNoise { input, out, sampler, seed } => {
            let cfg = GlobalConfig::resolve(
                &source,
                jobs,
                seed,
                None,
                None,
                &sampler,
                None,
                None,
                None,
                false,
            )?;
            sample_noise(&input, &out, &cfg)
        }
        Command::Displace { input, noise, alpha, out } => {
            let cfg = GlobalConfig::resolve(
                &source,
                jobs,
                None,
                alpha,
                None,
                &SamplerFlags::default(),
                None,
                None,
                None,
                false,
            )?;
            let image = GrayImage::load(&input)?;
            let noise_image = GrayImage::load(&noise)?;
            let (w, h) = noise_image.dimensions();
            let field = NoiseField {
                image: noise_image,
                source_id: noise.file_stem().and_then(|s| s.to_str()).unwrap_or("noise").to_string(),
                source_rect: Rect::new(0, 0, w, h),
            };
            let blended = displace(&image, &field, cfg.alpha)?;
            blended.save(&out)?;
            println!("displaced\talpha={}\tout={}", cfg.alpha, out.display());
            Ok(())
        }
        Command::Negaug { image, mask, out, patch_side } => {
            let cfg = GlobalConfig::resolve(
                &source,
                jobs,
                None,
                None,
                patch_side,
                &SamplerFlags::default(),
                None,
                None,
                None,
                false,
            )?;
            let img = GrayImage::load(&image)?;
            let msk = Mask::load(&mask)?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("frame").to_string();
            let targets = extract_targets(&msk);
            let variants = make_negatives(&img, &msk, &targets, cfg.patch_side)?;
            std::fs::create_dir_all(out.join("images"))
                .with_context(|| format!("failed to create {}", out.display()))?;
            std::fs::create_dir_all(out.join("masks"))
                .with_context(|| format!("failed to create {}", out.display()))?;
            for v in &variants {
                let id = format!("{stem}__a0__t{}__b{}", v.target_id, v.beta);
                v.image.save(out.join("images").join(format!("{id}.png")))?;
                v.mask.save(out.join("masks").join(format!("{id}.png")))?;
                println!("variant\t{id}\ttarget={}\tbeta={}", v.target_id, v.beta);
            }
            println!("negatives\ttargets={}\tvariants={}", targets.len(), variants.len());
            Ok(())
        }
        Command::AffCheck { seed, sizes } => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let sizes = parse_sizes(sizes.as_deref().unwrap_or("4x8x8,3x9x9,1x8x8"))?;
            let outcomes = run_all(seed, &sizes);
            for o in &outcomes {
                println!("{}\t{}\t{}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            if !all_passed(&outcomes) {
                bail!("{} of {} checks failed", outcomes.iter().filter(|o| !o.passed).count(), outcomes.len());
            }
            Ok(())
        }
        Command::Validate { dir } => {
            let report = validate_dataset(&dir)?;
            print!("{}", report.render());
            if !report.passed() {
                bail!("dataset validation failed");
            }
            Ok(())
        }
    }
}

fn sample_noise(input: &Path, out: &Path, cfg: &GlobalConfig) -> anyhow::Result<()> {
    let frames: Vec<(String, GrayImage)> = if input.is_dir() {
        list_raster_files(input)?
            .into_iter()
            .map(|(stem, path)| Ok::<_, irstkit::Error>((stem, GrayImage::load(&path)?)))
            .collect::<Result<_, _>>()?
    } else {
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("frame").to_string();
        vec![(stem, GrayImage::load(input)?)]
    };
    if frames.is_empty() {
        bail!("no raster files under {}", input.display());
    }

    // Explicit thresholds win; otherwise derive from what was given.
    let (var_max, mean_max) = match (cfg.var_max, cfg.mean_max) {
        (Some(v), Some(m)) => (v, m),
        (v, m) => {
            let images: Vec<GrayImage> = frames.iter().map(|(_, img)| img.clone()).collect();
            let (dv, dm) = irstkit::noise::derive_thresholds(&images, cfg.grid)?;
            (v.unwrap_or(dv), m.unwrap_or(dm))
        }
    };
    let sampler = NoiseSamplerConfig::new(cfg.grid, var_max, mean_max, frames.len())?;
    std::fs::create_dir_all(out).with_context(|| format!("failed to create {}", out.display()))?;

    for (stem, image) in &frames {
        let mut rng = derive_rng(cfg.seed, stem, 0);
        match select_noise_prone(image, stem, &sampler, &mut rng) {
            Some(field) => {
                let path = out.join(format!("{stem}__noise.png"));
                field.image.save(&path)?;
                println!(
                    "sampled\t{stem}\tregion={},{}+{}x{}\tout={}",
                    field.source_rect.x,
                    field.source_rect.y,
                    field.source_rect.w,
                    field.source_rect.h,
                    path.display()
                );
            }
            None => println!("sampled\t{stem}\tnone"),
        }
    }
    Ok(())
}

fn parse_sizes(spec: &str) -> anyhow::Result<Vec<(usize, usize, usize)>> {
    let mut sizes = Vec::new();
    for part in spec.split(',') {
        let dims: Vec<&str> = part.trim().split('x').collect();
        if dims.len() != 3 {
            bail!("sizes must be CxHxW triples, got `{part}`");
        }
        let parse = |s: &str| -> anyhow::Result<usize> {
            let v: usize = s.parse().with_context(|| format!("bad size component `{s}`"))?;
            if v == 0 {
                bail!("size components must be nonzero");
            }
            Ok(v)
        };
        sizes.push((parse(dims[0])?, parse(dims[1])?, parse(dims[2])?));
    }
    Ok(sizes)
}
