//! The `prep` command: crop, augment and describe a directory of PGM frames.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use drowsyfed_core::vision::{
    augment, crop_face, hog_descriptor, parse_augment_spec, read_pgm, write_descriptors_csv,
    write_pgm, FaceDetector, FullFrameDetector, HogConfig,
};

pub const DESCRIPTORS_CSV: &str = "descriptors.csv";
pub const MANIFEST_CSV: &str = "manifest.csv";

#[derive(Debug, Clone)]
pub struct PrepOptions {
    pub input: PathBuf,
    /// HoG settings file; defaults apply when absent.
    pub hog: Option<PathBuf>,
    /// Comma-separated augmentations, e.g. `flip,rotate:10`.
    pub augment: String,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepReport {
    pub processed: usize,
    /// Inputs that were skipped, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
    pub outputs: usize,
}

pub fn load_hog_config(path: &Path) -> Result<HogConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read HoG config {}", path.display()))?;
    let cfg: HogConfig = toml::from_str(&text).map_err(|e| {
        let at = e
            .span()
            .map(|s| format!(":{}", text[..s.start].matches('\n').count() + 1))
            .unwrap_or_default();
        anyhow!("{}{at}: {}", path.display(), e.message())
    })?;
    cfg.validate()
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(cfg)
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn prep(opts: &PrepOptions) -> Result<PrepReport> {
    prep_with_detector(opts, &FullFrameDetector)
}

pub fn prep_with_detector(opts: &PrepOptions, detector: &dyn FaceDetector) -> Result<PrepReport> {
    let hog = match &opts.hog {
        Some(p) => load_hog_config(p)?,
        None => HogConfig::default(),
    };
    let ops = parse_augment_spec(&opts.augment)?;
    let inputs = pgm_files(&opts.input)?;
    if inputs.is_empty() {
        bail!("no .pgm frames in {}", opts.input.display());
    }
    let frames_dir = opts.out.join("frames");
    std::fs::create_dir_all(&frames_dir)?;

    let mut manifest = BufWriter::new(File::create(opts.out.join(MANIFEST_CSV))?);
    writeln!(manifest, "row,source,transform,output")?;
    let mut descriptors = Vec::new();
    let mut report = PrepReport {
        processed: 0,
        skipped: Vec::new(),
        outputs: 0,
    };
    for path in &inputs {
        let frame = match read_pgm(path) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path.clone(), e.to_string()));
                continue;
            }
        };
        let Some(face) = crop_face(&frame, detector)? else {
            log::warn!("skipping {}: no face found", path.display());
            report.skipped.push((path.clone(), "no face found".into()));
            continue;
        };
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let set = augment(&face, &ops)?;
        for (k, img) in set.images.iter().enumerate() {
            let name = format!("{stem}_{k}.pgm");
            write_pgm(&frames_dir.join(&name), img)?;
            let desc = hog_descriptor(img, &hog).with_context(|| format!("HoG of {name}"))?;
            let transform = if k == 0 {
                "original".to_string()
            } else {
                ops[k - 1].to_string()
            };
            let source = path.file_name().unwrap_or_default().to_string_lossy();
            writeln!(
                manifest,
                "{},{source},{transform},frames/{name}",
                descriptors.len()
            )?;
            descriptors.push(desc);
        }
        report.processed += 1;
    }
    manifest.flush()?;
    if report.processed == 0 {
        bail!(
            "none of the {} frames in {} could be used",
            inputs.len(),
            opts.input.display()
        );
    }
    let mut out = BufWriter::new(File::create(opts.out.join(DESCRIPTORS_CSV))?);
    write_descriptors_csv(&mut out, &descriptors)?;
    out.flush()?;
    report.outputs = descriptors.len();
    Ok(report)
}
