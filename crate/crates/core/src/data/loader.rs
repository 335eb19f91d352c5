//! Chest X-ray dataset ingestion.
//!
//! Expected layout under the data root (`$LUNGSEG_DATA_ROOT` or an explicit
//! path), one directory per collection:
//!
//! ```text
//! <root>/MCX/images/MCUCXR_0001_0.png      masks/left/<stem>.png + masks/right/<stem>.png
//! <root>/SCX/images/CHNCXR_0001_0.png      masks/<stem>.png or masks/<stem>_mask.png
//! <root>/JCX/images/JPCLN001.IMG (or .png) masks/left/<stem>.gif + masks/right/<stem>.gif
//! ```
//!
//! A mask is either a single file in `masks/` or the union of the files in
//! `masks/left/` and `masks/right/`. Class labels come from an optional
//! `labels.csv` (`source_id,class_name`) or from the public file naming
//! conventions: a trailing `_0` / `_1` is normal / TB for MCX and SCX, and a
//! `JPCLN` / `JPCNN` prefix is nodule / normal for JSRT. JSRT `.IMG` files are
//! raw big-endian 16-bit squares, min-max windowed per image.
//!
//! SCX is restricted to 527 images: the ids in `SCX/curated.txt` when
//! present, otherwise images with a nonempty mask are drawn per class to the
//! published 248 normal / 279 TB counts. CCX is the union of the three with
//! classes normal / TB / nodule.
//!
//! When `<root>/<NAME>/manifest.txt` exists (sorted `source_id<TAB>split`
//! lines) the split is read from it, otherwise a seeded stratified split
//! reproducing the published train/validation/test sizes is drawn.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, ImageBuffer, Luma};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{preprocess, stratified_split, synth_dataset, Dataset, Sample, SplitTag};
use crate::{Error, Result};

/// Environment variable naming the directory that holds MCX/SCX/JCX.
pub const DATA_ROOT_ENV: &str = "LUNGSEG_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    Mcx,
    Scx,
    Jcx,
    Ccx,
    Synth,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Mcx,
        DatasetKind::Scx,
        DatasetKind::Jcx,
        DatasetKind::Ccx,
        DatasetKind::Synth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mcx => "MCX",
            DatasetKind::Scx => "SCX",
            DatasetKind::Jcx => "JCX",
            DatasetKind::Ccx => "CCX",
            DatasetKind::Synth => "SYNTH",
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            DatasetKind::Mcx | DatasetKind::Scx => &["normal", "TB"],
            DatasetKind::Jcx => &["normal", "nodule"],
            DatasetKind::Ccx => &["normal", "TB", "nodule"],
            DatasetKind::Synth => &super::synth::SYNTH_CLASSES,
        }
    }

    /// Published train / validation / test sizes.
    pub fn split_sizes(self) -> Option<(usize, usize, usize)> {
        match self {
            DatasetKind::Mcx => Some((93, 10, 35)),
            DatasetKind::Scx => Some((355, 40, 132)),
            DatasetKind::Jcx => Some((166, 19, 62)),
            DatasetKind::Ccx => Some((615, 69, 228)),
            DatasetKind::Synth => None,
        }
    }

    /// Published per-class totals after curation.
    pub fn class_totals(self) -> Option<&'static [usize]> {
        match self {
            DatasetKind::Mcx => Some(&[80, 58]),
            DatasetKind::Scx => Some(&[248, 279]),
            DatasetKind::Jcx => Some(&[93, 154]),
            DatasetKind::Ccx => Some(&[421, 337, 154]),
            DatasetKind::Synth => None,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownName {
                kind: "dataset",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Directory containing `MCX/`, `SCX/`, `JCX/`. Unused for SYNTH.
    pub root: Option<PathBuf>,
    pub input_size: usize,
    pub seed: u64,
    /// Sample count for SYNTH.
    pub synth_count: usize,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, input_size: usize, seed: u64) -> Self {
        Self {
            kind,
            root: std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from),
            input_size,
            seed,
            synth_count: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    fn from_tags(ds: &Dataset, tags: &[SplitTag]) -> Self {
        let pick = |t: SplitTag| {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| tags[i] == t).collect();
            ds.subset(&idx)
        };
        Splits {
            train: pick(SplitTag::Train),
            val: pick(SplitTag::Val),
            test: pick(SplitTag::Test),
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

/// 75:25 train/test, then 10% of train for validation.
fn synth_split_sizes(n: usize) -> (usize, usize, usize) {
    let test = round_half_up(n as f64 * 0.25);
    let val = round_half_up((n - test) as f64 * 0.1);
    (n - test - val, val, test)
}

/// Loads and splits a dataset.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Splits> {
    let (ds, sizes) = match spec.kind {
        DatasetKind::Synth => {
            let ds = synth_dataset(spec.synth_count, spec.seed, spec.input_size)?;
            let sizes = synth_split_sizes(ds.len());
            (ds, sizes)
        }
        kind => {
            let root = spec.root.as_deref().ok_or_else(|| {
                Error::Data(format!("no data root: set {DATA_ROOT_ENV} or pass a path"))
            })?;
            let ds = load_collection(root, kind, spec.input_size)?;
            (ds, kind.split_sizes().expect("real datasets have published sizes"))
        }
    };
    ds.validate()?;
    let manifest = spec
        .root
        .as_ref()
        .map(|r| r.join(spec.kind.name()).join("manifest.txt"))
        .filter(|p| spec.kind != DatasetKind::Synth && p.exists());
    let tags = match manifest {
        Some(path) => tags_from_manifest(&ds, &read_manifest(&path)?, &path)?,
        None => {
            let labels: Vec<usize> = ds.samples.iter().map(|s| s.class_label.unwrap_or(0)).collect();
            stratified_split(&labels, ds.n_classes(), sizes, spec.seed)?
        }
    };
    let splits = Splits::from_tags(&ds, &tags);
    if splits.sizes() != sizes {
        return Err(Error::Data(format!(
            "{}: split sizes {:?} differ from expected {:?}",
            spec.kind,
            splits.sizes(),
            sizes
        )));
    }
    Ok(splits)
}

fn tags_from_manifest(
    ds: &Dataset,
    manifest: &BTreeMap<String, SplitTag>,
    path: &Path,
) -> Result<Vec<SplitTag>> {
    if manifest.len() != ds.len() {
        return Err(Error::Data(format!(
            "{}: manifest lists {} ids, dataset has {}",
            path.display(),
            manifest.len(),
            ds.len()
        )));
    }
    ds.samples
        .iter()
        .map(|s| {
            manifest.get(&s.source_id).copied().ok_or_else(|| {
                Error::Data(format!("{}: `{}` not in manifest", path.display(), s.source_id))
            })
        })
        .collect()
}

/// Reads `source_id<TAB>split` lines.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, SplitTag>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, tag) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("{}:{}: expected `id<TAB>split`", path.display(), n + 1)))?;
        if out.insert(id.to_string(), tag.trim().parse()?).is_some() {
            return Err(Error::Data(format!("{}:{}: duplicate id `{id}`", path.display(), n + 1)));
        }
    }
    Ok(out)
}

/// Writes a manifest sorted by source id.
pub fn write_manifest(path: &Path, splits: &Splits) -> Result<()> {
    let mut lines: Vec<String> = [
        (&splits.train, SplitTag::Train),
        (&splits.val, SplitTag::Val),
        (&splits.test, SplitTag::Test),
    ]
    .iter()
    .flat_map(|(ds, tag)| ds.samples.iter().map(move |s| format!("{}\t{tag}", s.source_id)))
    .collect();
    lines.sort();
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Serialises a dataset to the directory layout above: 16-bit PNG images,
/// 0/255 PNG masks and `labels.csv`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut labels = String::from("source_id,class_name\n");
    for s in &ds.samples {
        let m = s.size() as u32;
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(m, m, |x, y| {
            Luma([(s.image[(y as usize, x as usize)] * 65535.0).round() as u16])
        });
        img.save(images.join(format!("{}.png", s.source_id)))?;
        if let Some(mask) = &s.mask {
            let out = GrayImage::from_fn(m, m, |x, y| Luma([mask[(y as usize, x as usize)] * 255]));
            out.save(masks.join(format!("{}.png", s.source_id)))?;
        }
        if let Some(c) = s.class_label {
            labels.push_str(&format!("{},{}\n", s.source_id, ds.class_names[c]));
        }
    }
    let path = dir.join("labels.csv");
    std::fs::write(&path, labels).map_err(|e| Error::io(&path, e))
}

fn load_collection(root: &Path, kind: DatasetKind, size: usize) -> Result<Dataset> {
    match kind {
        DatasetKind::Ccx => {
            let mut samples = Vec::new();
            for (part, relabel) in [
                (DatasetKind::Mcx, [0usize, 1]),
                (DatasetKind::Scx, [0, 1]),
                (DatasetKind::Jcx, [0, 2]),
            ] {
                let ds = load_collection(root, part, size)?;
                samples.extend(ds.samples.into_iter().map(|mut s| {
                    s.class_label = s.class_label.map(|c| relabel[c]);
                    s.source_id = format!("{part}/{}", s.source_id);
                    s
                }));
            }
            let ds = Dataset {
                name: kind.name().into(),
                class_names: kind.class_names().iter().map(|s| s.to_string()).collect(),
                samples,
            };
            check_totals(&ds, kind)?;
            Ok(ds)
        }
        DatasetKind::Synth => unreachable!("synthetic data is generated"),
        kind => {
            let dir = root.join(kind.name());
            let ds = read_directory(&dir, kind, size)?;
            let ds = if kind == DatasetKind::Scx { curate_scx(&dir, ds)? } else { ds };
            check_totals(&ds, kind)?;
            Ok(ds)
        }
    }
}

fn check_totals(ds: &Dataset, kind: DatasetKind) -> Result<()> {
    if let Some(expected) = kind.class_totals() {
        let got = ds.class_counts();
        if got != expected {
            return Err(Error::Data(format!(
                "{kind}: class counts {got:?}, expected {expected:?}"
            )));
        }
    }
    Ok(())
}

fn curate_scx(dir: &Path, ds: Dataset) -> Result<Dataset> {
    let curated = dir.join("curated.txt");
    if curated.exists() {
        let text = std::fs::read_to_string(&curated).map_err(|e| Error::io(&curated, e))?;
        let ids: BTreeSet<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let keep: Vec<usize> = (0..ds.len())
            .filter(|&i| ids.contains(ds.samples[i].source_id.as_str()))
            .collect();
        if keep.len() != ids.len() {
            return Err(Error::Data(format!(
                "{}: {} ids listed, {} found",
                curated.display(),
                ids.len(),
                keep.len()
            )));
        }
        return Ok(ds.subset(&keep));
    }
    let totals = DatasetKind::Scx.class_totals().expect("SCX totals");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut keep = Vec::new();
    for (class, &quota) in totals.iter().enumerate() {
        let mut pool: Vec<usize> = (0..ds.len())
            .filter(|&i| {
                let s = &ds.samples[i];
                s.class_label == Some(class) && s.mask.as_ref().is_some_and(|m| m.iter().any(|v| *v == 1))
            })
            .collect();
        if pool.len() < quota {
            return Err(Error::Data(format!(
                "SCX: only {} usable {} images, need {quota}",
                pool.len(),
                ds.class_names[class]
            )));
        }
        pool.shuffle(&mut rng);
        keep.extend_from_slice(&pool[..quota]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

fn stem(path: &Path) -> Option<String> {
    path.file_stem().and_then(|s| s.to_str()).map(str::to_string)
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn read_labels_csv(dir: &Path) -> Result<Option<BTreeMap<String, String>>> {
    let path = dir.join("labels.csv");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (id, class) = line
            .split_once(',')
            .ok_or_else(|| Error::Data(format!("{}:{}: expected `id,class`", path.display(), n + 1)))?;
        out.insert(id.trim().to_string(), class.trim().to_string());
    }
    Ok(Some(out))
}

fn infer_class(kind: DatasetKind, id: &str) -> Option<&'static str> {
    match kind {
        DatasetKind::Mcx | DatasetKind::Scx => {
            if id.ends_with("_0") {
                Some("normal")
            } else if id.ends_with("_1") {
                Some("TB")
            } else {
                None
            }
        }
        DatasetKind::Jcx => {
            if id.starts_with("JPCLN") {
                Some("nodule")
            } else if id.starts_with("JPCNN") {
                Some("normal")
            } else {
                None
            }
        }
        _ => None,
    }
}

fn read_gray(path: &Path) -> Result<Array2<f32>> {
    let is_raw = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("img"));
    if is_raw {
        return read_jsrt_raw(path);
    }
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        img.get_pixel(c as u32, r as u32)[0] as f32
    }))
}

/// Raw big-endian 16-bit square image.
fn read_jsrt_raw(path: &Path) -> Result<Array2<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = bytes.len() / 2;
    let side = (n as f64).sqrt().round() as usize;
    if bytes.len() % 2 != 0 || side * side != n || side == 0 {
        return Err(Error::Data(format!(
            "{}: {} bytes is not a square 16-bit raw image",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32)
        .collect();
    Array2::from_shape_vec((side, side), values).map_err(|e| Error::Data(e.to_string()))
}

fn read_mask_file(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        img.get_pixel(c as u32, r as u32)[0] as f32 / 255.0
    }))
}

fn find_in(dir: &Path, id: &str) -> Option<PathBuf> {
    ["png", "gif"]
        .iter()
        .flat_map(|ext| [format!("{id}.{ext}"), format!("{id}_mask.{ext}")])
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

fn find_mask(masks: &Path, id: &str) -> Result<Option<Array2<f32>>> {
    if let Some(p) = find_in(masks, id) {
        return Ok(Some(read_mask_file(&p)?));
    }
    let parts: Vec<PathBuf> = ["left", "right"]
        .iter()
        .filter_map(|side| find_in(&masks.join(side), id))
        .collect();
    if parts.is_empty() {
        return Ok(None);
    }
    let mut union = read_mask_file(&parts[0])?;
    for p in &parts[1..] {
        let other = read_mask_file(p)?;
        if other.dim() != union.dim() {
            return Err(Error::Data(format!("{}: left/right mask sizes differ", p.display())));
        }
        union.zip_mut_with(&other, |a, b| *a = a.max(*b));
    }
    Ok(Some(union))
}

fn read_directory(dir: &Path, kind: DatasetKind, size: usize) -> Result<Dataset> {
    let class_names: Vec<String> = kind.class_names().iter().map(|s| s.to_string()).collect();
    let labels = read_labels_csv(dir)?;
    let masks_dir = dir.join("masks");
    let mut samples = Vec::new();
    for path in list_files(&dir.join("images"))? {
        let Some(id) = stem(&path) else { continue };
        let class_name = match &labels {
            Some(map) => map.get(&id).cloned(),
            None => infer_class(kind, &id).map(str::to_string),
        }
        .ok_or_else(|| Error::Data(format!("{}: no class label", path.display())))?;
        let class = class_names
            .iter()
            .position(|c| c.eq_ignore_ascii_case(&class_name))
            .ok_or_else(|| Error::Data(format!("{}: unknown class `{class_name}`", path.display())))?;
        let image = read_gray(&path)?;
        let mask = find_mask(&masks_dir, &id)?;
        if mask.is_none() && kind != DatasetKind::Scx {
            return Err(Error::Data(format!("{}: no mask for `{id}`", dir.display())));
        }
        let mask = match mask {
            Some(m) if m.dim() != image.dim() => Some(nearest_to(&m, image.dim())),
            other => other,
        };
        let mut sample: Sample = preprocess(&image, mask.as_ref(), size, &id)?;
        sample.class_label = Some(class);
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: no images found", dir.display())));
    }
    Ok(Dataset {
        name: kind.name().into(),
        class_names,
        samples,
    })
}

/// JSRT lung masks are stored at half the image resolution.
fn nearest_to(m: &Array2<f32>, dim: (usize, usize)) -> Array2<f32> {
    let (h, w) = m.dim();
    Array2::from_shape_fn(dim, |(r, c)| {
        m[(((r * h) / dim.0).min(h - 1), ((c * w) / dim.1).min(w - 1))]
    })
}
