//! Dataset synthesis: originals pass through, one noise-displaced variant
//! per target-bearing image, and rotation negatives generated from the
//! originals and/or the displaced variants, with a line-oriented manifest
//! recording the provenance of every file.
//!
//! Builds are deterministic for a fixed seed: per-image generators derive
//! from `(seed, stem)` so parallel scheduling cannot reorder draws, and
//! manifest entries are emitted in sorted-stem order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{check_same_dims, list_raster_files, GrayImage, Mask};
use crate::negaug::{extract_targets, make_negatives, AugmentationRecord, Rotation};
use crate::noise::{derive_thresholds, displace, select_noise_prone, NoiseField, NoiseSamplerConfig};
use crate::par;
use crate::rng::derive_rng;

/// Manifest file name inside a built dataset directory.
pub const MANIFEST_FILE: &str = "manifest.txt";

const MANIFEST_VERSION: u32 = 1;
const STREAM_POOL: u64 = 1;
const STREAM_SELECT: u64 = 2;
const STREAM_PICK: u64 = 3;

/// Which images feed the rotation-negative stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativesFrom {
    Originals,
    Mixed,
    Both,
}

impl fmt::Display for NegativesFrom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativesFrom::Originals => "originals",
            NegativesFrom::Mixed => "mixed",
            NegativesFrom::Both => "both",
        })
    }
}

impl FromStr for NegativesFrom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "originals" => Ok(NegativesFrom::Originals),
            "mixed" => Ok(NegativesFrom::Mixed),
            "both" => Ok(NegativesFrom::Both),
            other => Err(Error::InvalidConfig(format!(
                "negatives-from must be originals|mixed|both, got {other}"
            ))),
        }
    }
}

/// Build-time configuration. Unset gate thresholds are derived from the
/// corpus (25th percentile of region variances, 50th of region means);
/// an unset source count uses the whole corpus as the noise pool.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub grid: u32,
    pub var_max: Option<f64>,
    pub mean_max: Option<f64>,
    pub n_sources: Option<usize>,
    /// Noise blend weight; 0 disables the displacement stage entirely.
    pub alpha: f64,
    /// Anchor patch side for negatives, odd.
    pub patch_side: u32,
    pub negatives_from: NegativesFrom,
    /// Drop the zero-rotation (identity) negatives instead of keeping the
    /// full angle set.
    pub drop_identity: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            grid: NoiseSamplerConfig::DEFAULT_GRID,
            var_max: None,
            mean_max: None,
            n_sources: None,
            alpha: 0.1,
            patch_side: 3,
            negatives_from: NegativesFrom::Both,
            drop_identity: false,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if self.patch_side % 2 == 0 || self.patch_side == 0 {
            return Err(Error::EvenPatchSide(self.patch_side));
        }
        if self.grid < 1 {
            return Err(Error::InvalidConfig("grid must be at least 1".into()));
        }
        if let Some(v) = self.var_max {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("var_max must be positive, got {v}")));
            }
        }
        if let Some(m) = self.mean_max {
            if !(m > 0.0) {
                return Err(Error::InvalidConfig(format!("mean_max must be positive, got {m}")));
            }
        }
        if self.n_sources == Some(0) {
            return Err(Error::InvalidConfig("n_sources must be at least 1".into()));
        }
        Ok(())
    }
}

/// The configuration a build actually ran with, thresholds and source
/// count resolved; echoed verbatim into the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub grid: u32,
    pub var_max: f64,
    pub mean_max: f64,
    pub n_sources: usize,
    pub alpha: f64,
    pub patch_side: u32,
    pub negatives_from: NegativesFrom,
    pub drop_identity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub originals: u64,
    pub noise_variants: u64,
    pub negatives: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Original,
    NoiseVariant,
    Negative,
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryKind::Original => "original",
            EntryKind::NoiseVariant => "noise",
            EntryKind::Negative => "negative",
        })
    }
}

impl FromStr for EntryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(EntryKind::Original),
            "noise" => Ok(EntryKind::NoiseVariant),
            "negative" => Ok(EntryKind::Negative),
            other => Err(Error::InvalidConfig(format!("unknown entry kind {other}"))),
        }
    }
}

/// One manifest row: what was generated, from what, and where it lives
/// (paths relative to the dataset directory).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub kind: EntryKind,
    pub record: AugmentationRecord,
    pub image_path: String,
    pub mask_path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: ResolvedConfig,
    pub counts: Counts,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Serialize to the line-oriented manifest format: tab-separated
    /// `key value` header lines, a column comment, then one `entry` row
    /// per generated file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("manifest-version\t{}\n", self.version));
        out.push_str(&format!("seed\t{}\n", self.seed));
        out.push_str(&format!("grid\t{}\n", self.config.grid));
        out.push_str(&format!("var-max\t{}\n", self.config.var_max));
        out.push_str(&format!("mean-max\t{}\n", self.config.mean_max));
        out.push_str(&format!("n-sources\t{}\n", self.config.n_sources));
        out.push_str(&format!("alpha\t{}\n", self.config.alpha));
        out.push_str(&format!("patch-side\t{}\n", self.config.patch_side));
        out.push_str(&format!("negatives-from\t{}\n", self.config.negatives_from));
        out.push_str(&format!("drop-identity\t{}\n", self.config.drop_identity));
        out.push_str(&format!(
            "counts\toriginals={}\tnoise={}\tnegatives={}\ttotal={}\n",
            self.counts.originals, self.counts.noise_variants, self.counts.negatives, self.counts.total
        ));
        out.push_str("# entry\tkind\toutput_id\tsource_id\talpha\ttarget\tbeta\timage_path\tmask_path\n");
        for e in &self.entries {
            let target = match e.record.target_id {
                Some(t) => t.to_string(),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "entry\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.kind,
                e.record.output_id,
                e.record.source_id,
                e.record.alpha,
                target,
                e.record.beta,
                e.image_path,
                e.mask_path
            ));
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |detail: String| Error::ManifestParse { path: origin.to_path_buf(), detail };
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut counts_line = None;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "entry" => {
                    if fields.len() != 9 {
                        return Err(bad(format!("line {}: expected 9 entry fields", lineno + 1)));
                    }
                    let kind: EntryKind = fields[1]
                        .parse()
                        .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?;
                    let alpha: f64 = fields[4]
                        .parse()
                        .map_err(|_| bad(format!("line {}: bad alpha {}", lineno + 1, fields[4])))?;
                    let target_id = match fields[5] {
                        "-" => None,
                        t => Some(t.parse::<usize>().map_err(|_| {
                            bad(format!("line {}: bad target {t}", lineno + 1))
                        })?),
                    };
                    let degrees: u16 = fields[6]
                        .parse()
                        .map_err(|_| bad(format!("line {}: bad beta {}", lineno + 1, fields[6])))?;
                    let beta = Rotation::from_degrees(degrees).ok_or_else(|| {
                        bad(format!("line {}: beta {degrees} not in {{0,90,180,270}}", lineno + 1))
                    })?;
                    entries.push(ManifestEntry {
                        kind,
                        record: AugmentationRecord {
                            source_id: fields[3].to_string(),
                            alpha,
                            target_id,
                            beta,
                            output_id: fields[2].to_string(),
                        },
                        image_path: fields[7].to_string(),
                        mask_path: fields[8].to_string(),
                    });
                }
                "counts" => counts_line = Some(fields.iter().skip(1).map(|s| s.to_string()).collect::<Vec<_>>()),
                key => {
                    if fields.len() != 2 {
                        return Err(bad(format!("line {}: expected `key\\tvalue`", lineno + 1)));
                    }
                    header.insert(key.to_string(), fields[1].to_string());
                }
            }
        }

        let get = |key: &str| -> Result<&String> {
            header.get(key).ok_or_else(|| bad(format!("missing header field {key}")))
        };
        let parse_num = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| bad(format!("bad numeric header field {key}")))
        };

        let counts_fields = counts_line.ok_or_else(|| bad("missing counts line".into()))?;
        let mut counts = Counts::default();
        for field in &counts_fields {
            let (name, value) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("bad counts field {field}")))?;
            let value: u64 = value.parse().map_err(|_| bad(format!("bad counts value {field}")))?;
            match name {
                "originals" => counts.originals = value,
                "noise" => counts.noise_variants = value,
                "negatives" => counts.negatives = value,
                "total" => counts.total = value,
                other => return Err(bad(format!("unknown counts field {other}"))),
            }
        }

        Ok(DatasetManifest {
            version: parse_num("manifest-version")? as u32,
            seed: parse_num("seed")? as u64,
            config: ResolvedConfig {
                grid: parse_num("grid")? as u32,
                var_max: parse_num("var-max")?,
                mean_max: parse_num("mean-max")?,
                n_sources: parse_num("n-sources")? as usize,
                alpha: parse_num("alpha")?,
                patch_side: parse_num("patch-side")? as u32,
                negatives_from: get("negatives-from")?.parse()?,
                drop_identity: get("drop-identity")?
                    .parse()
                    .map_err(|_| bad("bad drop-identity flag".into()))?,
            },
            counts,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingManifest(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }
}

struct InputPair {
    stem: String,
    image_path: PathBuf,
    mask_path: PathBuf,
}

struct LoadedPair {
    stem: String,
    image_path: PathBuf,
    mask_path: PathBuf,
    image: GrayImage,
    mask: Mask,
}

fn scan_pairs(in_dir: &Path) -> Result<Vec<InputPair>> {
    let images_dir = in_dir.join("images");
    let masks_dir = in_dir.join("masks");
    if !images_dir.is_dir() || !masks_dir.is_dir() {
        return Err(Error::EmptyInput(format!(
            "expected images/ and masks/ subdirectories under {}",
            in_dir.display()
        )));
    }
    let images = list_raster_files(&images_dir)?;
    let masks = list_raster_files(&masks_dir)?;
    if images.is_empty() {
        return Err(Error::EmptyInput(format!("no raster files under {}", images_dir.display())));
    }
    let image_stems: Vec<&String> = images.keys().collect();
    let mask_stems: Vec<&String> = masks.keys().collect();
    if image_stems != mask_stems {
        let only_images: Vec<&str> =
            images.keys().filter(|s| !masks.contains_key(*s)).map(|s| s.as_str()).collect();
        let only_masks: Vec<&str> =
            masks.keys().filter(|s| !images.contains_key(*s)).map(|s| s.as_str()).collect();
        return Err(Error::UnpairedFiles {
            dir: in_dir.to_path_buf(),
            detail: format!("image-only stems {only_images:?}, mask-only stems {only_masks:?}"),
        });
    }
    Ok(images
        .into_iter()
        .map(|(stem, image_path)| {
            let mask_path = masks[&stem].clone();
            InputPair { stem, image_path, mask_path }
        })
        .collect())
}

/// Run the full synthesis over `in_dir` (expects `images/` and `masks/`
/// with matching stems) into `out_dir`, returning the written manifest.
pub fn build_dataset(in_dir: &Path, out_dir: &Path, cfg: &BuildConfig, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    let pairs = scan_pairs(in_dir)?;

    let loaded: Vec<LoadedPair> = par::map_ordered(pairs, |pair| {
        let image = GrayImage::load(&pair.image_path)?;
        let mask = Mask::load(&pair.mask_path)?;
        check_same_dims(image.dimensions(), mask.dimensions())?;
        Ok::<_, Error>(LoadedPair {
            stem: pair.stem,
            image_path: pair.image_path,
            mask_path: pair.mask_path,
            image,
            mask,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    // Resolve the gate thresholds: explicit values win, otherwise derive
    // the corpus percentiles.
    let (var_max, mean_max) = match (cfg.var_max, cfg.mean_max) {
        (Some(v), Some(m)) => (v, m),
        (v, m) => {
            let images: Vec<GrayImage> = loaded.iter().map(|p| p.image.clone()).collect();
            let (derived_v, derived_m) = derive_thresholds(&images, cfg.grid)?;
            let resolved_v = v.unwrap_or(derived_v);
            let resolved_m = m.unwrap_or(derived_m);
            if !(resolved_v > 0.0) {
                log::warn!(
                    "derived var-max is {resolved_v}; the strict gate will reject every region \
                     (corpus likely has constant cells) - consider --var-max"
                );
            }
            (resolved_v, resolved_m)
        }
    };
    let n_sources = cfg.n_sources.unwrap_or(loaded.len()).min(loaded.len());
    let resolved = ResolvedConfig {
        grid: cfg.grid,
        var_max,
        mean_max,
        n_sources,
        alpha: cfg.alpha,
        patch_side: cfg.patch_side,
        negatives_from: cfg.negatives_from,
        drop_identity: cfg.drop_identity,
    };

    // Noise pool: harvest one field per qualifying sampled source image.
    // Alpha zero disables the displacement stage outright.
    let pool: Vec<NoiseField> = if cfg.alpha > 0.0 && var_max > 0.0 {
        let mut pool_rng = derive_rng(seed, "noise-pool", STREAM_POOL);
        let mut chosen: Vec<usize> =
            rand::seq::index::sample(&mut pool_rng, loaded.len(), n_sources).into_vec();
        chosen.sort_unstable();
        let sampler = NoiseSamplerConfig::new(cfg.grid, var_max, mean_max, n_sources)?;
        par::map_ordered(chosen, |idx| {
            let pair = &loaded[idx];
            let mut rng = derive_rng(seed, &pair.stem, STREAM_SELECT);
            select_noise_prone(&pair.image, &pair.stem, &sampler, &mut rng)
        })
        .into_iter()
        .flatten()
        .collect()
    } else {
        Vec::new()
    };

    let images_out = out_dir.join("images");
    let masks_out = out_dir.join("masks");
    std::fs::create_dir_all(&images_out).map_err(|source| Error::Write {
        path: images_out.clone(),
        source,
    })?;
    std::fs::create_dir_all(&masks_out).map_err(|source| Error::Write {
        path: masks_out.clone(),
        source,
    })?;

    let entry_groups: Vec<Vec<ManifestEntry>> = {
        let pool = &pool;
        let resolved = &resolved;
        par::map_ordered(loaded, |pair| build_one(&pair, pool, resolved, seed, out_dir))
            .into_iter()
            .collect::<Result<_>>()?
    };

    let entries: Vec<ManifestEntry> = entry_groups.into_iter().flatten().collect();
    let mut counts = Counts::default();
    for e in &entries {
        match e.kind {
            EntryKind::Original => counts.originals += 1,
            EntryKind::NoiseVariant => counts.noise_variants += 1,
            EntryKind::Negative => counts.negatives += 1,
        }
        counts.total += 1;
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed,
        config: resolved,
        counts,
        entries,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn file_name_of(path: &Path) -> String {
    path.file_name().and_then(|n| n.to_str()).unwrap_or("unnamed").to_string()
}

fn build_one(
    pair: &LoadedPair,
    pool: &[NoiseField],
    cfg: &ResolvedConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();

    // Originals are copied byte-for-byte under their incoming names.
    let image_name = file_name_of(&pair.image_path);
    let mask_name = file_name_of(&pair.mask_path);
    copy_file(&pair.image_path, &out_dir.join("images").join(&image_name))?;
    copy_file(&pair.mask_path, &out_dir.join("masks").join(&mask_name))?;
    entries.push(ManifestEntry {
        kind: EntryKind::Original,
        record: AugmentationRecord {
            source_id: pair.stem.clone(),
            alpha: 0.0,
            target_id: None,
            beta: Rotation::Deg0,
            output_id: pair.stem.clone(),
        },
        image_path: format!("images/{image_name}"),
        mask_path: format!("masks/{mask_name}"),
    });

    let targets = extract_targets(&pair.mask);
    if targets.is_empty() {
        // Nothing to augment: the image passes through as an original only.
        return Ok(entries);
    }

    // Noise-displaced variant, one per image when the pool has a field.
    let mut mixed: Option<GrayImage> = None;
    if !pool.is_empty() && cfg.alpha > 0.0 {
        let mut pick_rng = derive_rng(seed, &pair.stem, STREAM_PICK);
        let field = &pool[pick_rng.gen_range(0..pool.len())];
        let field_resized;
        let field_ref = if field.image.dimensions() == pair.image.dimensions() {
            field
        } else {
            let (w, h) = pair.image.dimensions();
            field_resized = NoiseField {
                image: field.image.resize_bilinear(w, h)?,
                source_id: field.source_id.clone(),
                source_rect: field.source_rect,
            };
            &field_resized
        };
        let blended = displace(&pair.image, field_ref, cfg.alpha)?;
        let output_id = variant_id(&pair.stem, cfg.alpha, None, Rotation::Deg0);
        let entry = write_generated(
            out_dir,
            &output_id,
            &blended,
            &pair.mask,
            EntryKind::NoiseVariant,
            AugmentationRecord {
                source_id: pair.stem.clone(),
                alpha: cfg.alpha,
                target_id: None,
                beta: Rotation::Deg0,
                output_id: output_id.clone(),
            },
        )?;
        entries.push(entry);
        mixed = Some(blended);
    }

    // Rotation negatives from the configured sources.
    let mut sources: Vec<(&GrayImage, f64)> = Vec::new();
    if matches!(cfg.negatives_from, NegativesFrom::Originals | NegativesFrom::Both) {
        sources.push((&pair.image, 0.0));
    }
    if matches!(cfg.negatives_from, NegativesFrom::Mixed | NegativesFrom::Both) {
        if let Some(ref m) = mixed {
            sources.push((m, cfg.alpha));
        }
    }
    for (source_img, alpha) in sources {
        for variant in make_negatives(source_img, &pair.mask, &targets, cfg.patch_side)? {
            if cfg.drop_identity && variant.beta == Rotation::Deg0 {
                continue;
            }
            let output_id = variant_id(&pair.stem, alpha, Some(variant.target_id), variant.beta);
            entries.push(write_generated(
                out_dir,
                &output_id,
                &variant.image,
                &variant.mask,
                EntryKind::Negative,
                AugmentationRecord {
                    source_id: pair.stem.clone(),
                    alpha,
                    target_id: Some(variant.target_id),
                    beta: variant.beta,
                    output_id: output_id.clone(),
                },
            )?);
        }
    }
    Ok(entries)
}

/// Generated-file naming: `<stem>__a<alpha>__t<target>__b<beta>`, with
/// `tnone` for noise-only variants. Originals keep their stems.
fn variant_id(stem: &str, alpha: f64, target: Option<usize>, beta: Rotation) -> String {
    let target = match target {
        Some(t) => t.to_string(),
        None => "none".to_string(),
    };
    format!("{stem}__a{alpha}__t{target}__b{beta}")
}

fn write_generated(
    out_dir: &Path,
    output_id: &str,
    image: &GrayImage,
    mask: &Mask,
    kind: EntryKind,
    record: AugmentationRecord,
) -> Result<ManifestEntry> {
    let image_rel = format!("images/{output_id}.png");
    let mask_rel = format!("masks/{output_id}.png");
    image.save(out_dir.join(&image_rel))?;
    mask.save(out_dir.join(&mask_rel))?;
    Ok(ManifestEntry { kind, record, image_path: image_rel, mask_path: mask_rel })
}

fn copy_file(from: &Path, to: &Path) -> Result<()> {
    std::fs::copy(from, to)
        .map(|_| ())
        .map_err(|source| Error::Write { path: to.to_path_buf(), source })
}

/// One validation check with the entries (or files) that violated it.
#[derive(Debug, Clone)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub offenders: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{status}\t{}\t{}\n", c.name, c.detail));
            for offender in &c.offenders {
                out.push_str(&format!("\toffender\t{offender}\n"));
            }
        }
        out
    }
}

fn check(name: &str, offenders: Vec<String>, detail_ok: &str) -> ValidationCheck {
    let passed = offenders.is_empty();
    let detail = if passed {
        detail_ok.to_string()
    } else {
        format!("{} violation(s)", offenders.len())
    };
    ValidationCheck { name: name.to_string(), passed, detail, offenders }
}

/// Re-derive every invariant of a built dataset from its files: counts,
/// loadability, mask binarity, dimensions, rotation legality, and
/// foreground conservation on generated masks.
pub fn validate_dataset(dir: &Path) -> Result<ValidationReport> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    let mut checks = Vec::new();

    // Counts header vs entry list.
    let mut recount = Counts::default();
    for e in &manifest.entries {
        match e.kind {
            EntryKind::Original => recount.originals += 1,
            EntryKind::NoiseVariant => recount.noise_variants += 1,
            EntryKind::Negative => recount.negatives += 1,
        }
        recount.total += 1;
    }
    let counts_ok = recount == manifest.counts
        && manifest.counts.total
            == manifest.counts.originals + manifest.counts.noise_variants + manifest.counts.negatives;
    checks.push(ValidationCheck {
        name: "counts-consistent".into(),
        passed: counts_ok,
        detail: if counts_ok {
            format!("total {}", recount.total)
        } else {
            format!("header {:?} vs recount {:?}", manifest.counts, recount)
        },
        offenders: Vec::new(),
    });

    // Load everything once, keyed by output id.
    let mut images: BTreeMap<&str, Option<GrayImage>> = BTreeMap::new();
    let mut masks: BTreeMap<&str, Option<Mask>> = BTreeMap::new();
    let mut image_failures = Vec::new();
    let mut mask_failures = Vec::new();
    for e in &manifest.entries {
        let img = GrayImage::load(dir.join(&e.image_path));
        if img.is_err() {
            image_failures.push(e.record.output_id.clone());
        }
        images.insert(&e.record.output_id, img.ok());
        let mask = Mask::load(dir.join(&e.mask_path));
        if mask.is_err() {
            mask_failures.push(e.record.output_id.clone());
        }
        masks.insert(&e.record.output_id, mask.ok());
    }
    checks.push(check("images-load", image_failures, "every image decodes"));
    checks.push(check(
        "masks-binary",
        mask_failures,
        "every mask decodes to background plus one foreground value",
    ));

    // Dimension agreement: mask vs image, and generated vs source original.
    let mut dim_offenders = Vec::new();
    let mut source_dims: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    for e in &manifest.entries {
        if e.kind == EntryKind::Original {
            if let Some(Some(img)) = images.get(e.record.output_id.as_str()) {
                source_dims.insert(&e.record.output_id, img.dimensions());
            }
        }
    }
    for e in &manifest.entries {
        let (img, mask) = (
            images.get(e.record.output_id.as_str()).and_then(|o| o.as_ref()),
            masks.get(e.record.output_id.as_str()).and_then(|o| o.as_ref()),
        );
        let (Some(img), Some(mask)) = (img, mask) else { continue };
        if img.dimensions() != mask.dimensions() {
            dim_offenders.push(e.record.output_id.clone());
            continue;
        }
        if e.kind != EntryKind::Original {
            if let Some(&dims) = source_dims.get(e.record.source_id.as_str()) {
                if img.dimensions() != dims {
                    dim_offenders.push(e.record.output_id.clone());
                }
            }
        }
    }
    checks.push(check("dims-match", dim_offenders, "image/mask and source dims agree"));

    // Rotation legality: re-checked from the parsed degrees.
    let beta_offenders: Vec<String> = manifest
        .entries
        .iter()
        .filter(|e| Rotation::from_degrees(e.record.beta.degrees()).is_none())
        .map(|e| e.record.output_id.clone())
        .collect();
    checks.push(check("beta-legal", beta_offenders, "all angles in {0,90,180,270}"));

    // Foreground conservation: every generated mask keeps its source
    // original's foreground pixel count.
    let mut fg_offenders = Vec::new();
    let original_fg: BTreeMap<&str, u64> = manifest
        .entries
        .iter()
        .filter(|e| e.kind == EntryKind::Original)
        .filter_map(|e| {
            masks
                .get(e.record.output_id.as_str())
                .and_then(|o| o.as_ref())
                .map(|m| (e.record.output_id.as_str(), m.foreground_count()))
        })
        .collect();
    for e in &manifest.entries {
        if e.kind == EntryKind::Original {
            continue;
        }
        let (Some(Some(mask)), Some(&want)) = (
            masks.get(e.record.output_id.as_str()),
            original_fg.get(e.record.source_id.as_str()),
        ) else {
            continue;
        };
        if mask.foreground_count() != want {
            fg_offenders.push(e.record.output_id.clone());
        }
    }
    checks.push(check(
        "foreground-preserved",
        fg_offenders,
        "generated masks keep their source foreground count",
    ));

    // Files on disk match the manifest exactly.
    let images_on_disk = list_raster_files(&dir.join("images")).map(|m| m.len()).unwrap_or(0);
    let masks_on_disk = list_raster_files(&dir.join("masks")).map(|m| m.len()).unwrap_or(0);
    let disk_ok = images_on_disk == manifest.entries.len() && masks_on_disk == manifest.entries.len();
    checks.push(ValidationCheck {
        name: "entries-match-disk".into(),
        passed: disk_ok,
        detail: format!(
            "{} entries, {images_on_disk} images and {masks_on_disk} masks on disk",
            manifest.entries.len()
        ),
        offenders: Vec::new(),
    });

    Ok(ValidationReport { checks })
}
