//! Directory scanning, validation and stratified splitting.
//!
//! Expected layout under the dataset root:
//!
//! ```text
//! real/<id>/frames/00000.png ...   real/<id>/audio.wav
//! fake/<generator>/<id>/frames/... fake/<generator>/<id>/audio.wav
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, VIDEO_FPS};
use crate::error::{Error, Result};

use super::clip::ClipSource;
use super::{Generator, Label, FRAME_SIZE, MIN_DURATION};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];
const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    /// Directory of zero-padded numeric PNG frames, relative to the manifest.
    pub frames: PathBuf,
    /// 16 kHz mono WAV, relative to the manifest.
    pub audio: PathBuf,
    pub label: Label,
    pub generator: Generator,
    pub duration: f64,
    pub frame_count: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub ratios: [f64; 3],
    #[serde(default)]
    pub stratify_by_generator: bool,
    pub entries: Vec<VideoEntry>,
    /// Directory that entry paths are relative to.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub path: PathBuf,
    pub reasons: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ManifestBuild {
    pub manifest: Manifest,
    pub rejected: Vec<Rejection>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifestOptions {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub stratify_by_generator: bool,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS,
            seed: 0,
            stratify_by_generator: false,
        }
    }
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::file(path, format!("bad manifest: {e}")))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::file(
                path,
                format!("manifest version {} is not supported", manifest.version),
            ));
        }
        for e in &manifest.entries {
            if (e.label == Label::Real) != (e.generator == Generator::None) {
                return Err(Error::file(
                    path,
                    format!(
                        "entry {}: label and generator {} disagree",
                        e.id, e.generator
                    ),
                ));
            }
        }
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    /// Writes JSON with entry paths rewritten relative to `path`'s directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut out = self.clone();
        for e in &mut out.entries {
            e.frames = relative_to(&self.base_dir.join(&e.frames), &dir)?;
            e.audio = relative_to(&self.base_dir.join(&e.audio), &dir)?;
        }
        let text = serde_json::to_string_pretty(&out).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].split == split)
            .collect()
    }

    /// A clip source over every entry, or only those of `split`.
    pub fn source(&self, split: Option<Split>) -> ManifestSource {
        let entries = self
            .entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .cloned()
            .collect();
        ManifestSource::new(self.base_dir.clone(), entries)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    Ok(cwd.join(p))
}

fn relative_to(target: &Path, dir: &Path) -> Result<PathBuf> {
    let (target, dir) = (absolute(target)?, absolute(dir)?);
    pathdiff::diff_paths(&target, &dir)
        .ok_or_else(|| Error::file(target, "cannot be expressed relative to the manifest"))
}

/// Scans `root`, validates every video directory and assigns splits.
pub fn build_manifest(
    root: impl AsRef<Path>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<ManifestBuild> {
    build_manifest_with(
        root,
        ManifestOptions {
            ratios,
            seed,
            ..ManifestOptions::default()
        },
    )
}

pub fn build_manifest_with(root: impl AsRef<Path>, opts: ManifestOptions) -> Result<ManifestBuild> {
    let root = root.as_ref();
    check_ratios(opts.ratios)?;
    if !root.is_dir() {
        return Err(Error::file(root, "dataset root is not a directory"));
    }
    let mut candidates = Vec::new();
    let mut rejected = Vec::new();
    for dir in sorted_subdirs(&root.join("real"))? {
        candidates.push((dir, Label::Real, Generator::None));
    }
    for gen_dir in sorted_subdirs(&root.join("fake"))? {
        let name = gen_dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        match name.parse::<Generator>() {
            Ok(g) if g != Generator::None => {
                for dir in sorted_subdirs(&gen_dir)? {
                    candidates.push((dir, Label::Fake, g));
                }
            }
            _ => rejected.push(Rejection {
                path: gen_dir,
                reasons: vec![format!("{name:?} is not a known generator")],
            }),
        }
    }
    if candidates.is_empty() {
        return Err(Error::file(
            root,
            "no video directories found under real/ or fake/<generator>/",
        ));
    }

    let mut entries: Vec<VideoEntry> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (dir, label, generator) in candidates {
        match scan_video(root, &dir, label, generator) {
            Ok(entry) if !seen.insert(entry.id.clone()) => rejected.push(Rejection {
                path: dir,
                reasons: vec![format!("duplicate id {:?}", entry.id)],
            }),
            Ok(entry) => entries.push(entry),
            Err(reasons) => rejected.push(Rejection { path: dir, reasons }),
        }
    }
    if entries.is_empty() {
        return Err(Error::file(
            root,
            format!("all {} video directories were rejected", rejected.len()),
        ));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let keys: Vec<(Label, Generator)> = entries.iter().map(|e| (e.label, e.generator)).collect();
    let splits = assign_splits(&keys, opts.ratios, opts.seed, opts.stratify_by_generator)?;
    for (e, s) in entries.iter_mut().zip(splits) {
        e.split = s;
    }
    Ok(ManifestBuild {
        manifest: Manifest {
            version: MANIFEST_VERSION,
            seed: opts.seed,
            ratios: opts.ratios,
            stratify_by_generator: opts.stratify_by_generator,
            entries,
            base_dir: root.to_path_buf(),
        },
        rejected,
    })
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(format!(
            "split ratios must be non-negative with a positive sum, got {ratios:?}"
        )));
    }
    Ok(())
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for item in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Frame files of a directory in temporal order, checking their names.
pub(crate) fn frame_files(dir: &Path) -> std::result::Result<Vec<PathBuf>, String> {
    let listing = fs::read_dir(dir).map_err(|e| format!("cannot read frames directory: {e}"))?;
    let mut numbered = Vec::new();
    for item in listing {
        let path = item
            .map_err(|e| format!("cannot read frames directory: {e}"))?
            .path();
        if path.extension().and_then(|x| x.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        match stem.parse::<usize>() {
            Ok(n) if stem.bytes().all(|b| b.is_ascii_digit()) => {
                numbered.push((n, stem.len(), path))
            }
            _ => return Err(format!("frame name {stem:?} is not numeric")),
        }
    }
    if numbered.is_empty() {
        return Err("no PNG frames".into());
    }
    numbered.sort();
    let width = numbered[0].1;
    for (i, (n, w, _)) in numbered.iter().enumerate() {
        if *n != i || *w != width {
            return Err("frame names are not consecutive zero-padded numbers from 0".into());
        }
    }
    Ok(numbered.into_iter().map(|(_, _, p)| p).collect())
}

fn scan_video(
    root: &Path,
    dir: &Path,
    label: Label,
    generator: Generator,
) -> std::result::Result<VideoEntry, Vec<String>> {
    let mut reasons = Vec::new();
    let frames_dir = dir.join("frames");
    let audio_path = dir.join("audio.wav");

    let mut frame_count = None;
    if !frames_dir.is_dir() {
        reasons.push("missing frames/ directory".to_string());
    } else {
        match frame_files(&frames_dir) {
            Ok(files) => {
                // headers only, so checking every frame is cheap
                for f in &files {
                    let name = f.file_name().unwrap_or_default().to_string_lossy();
                    match image::image_dimensions(f) {
                        Ok((w, h)) if (w as usize, h as usize) == (FRAME_SIZE, FRAME_SIZE) => {
                            continue
                        }
                        Ok((w, h)) => {
                            reasons.push(format!("frame {name} is {w}x{h}, expected 96x96"))
                        }
                        Err(e) => reasons.push(format!("unreadable frame {name}: {e}")),
                    }
                    break;
                }
                frame_count = Some(files.len());
            }
            Err(r) => reasons.push(r),
        }
    }

    let mut duration = None;
    if !audio_path.is_file() {
        reasons.push("missing audio.wav".to_string());
    } else {
        match hound::WavReader::open(&audio_path) {
            Ok(reader) => {
                let spec = reader.spec();
                if spec.channels != 1
                    || spec.sample_rate != SAMPLE_RATE
                    || spec.bits_per_sample != 16
                    || spec.sample_format != hound::SampleFormat::Int
                {
                    reasons.push(format!(
                        "audio is {} ch / {} Hz / {} bit, expected 16 kHz 16-bit mono",
                        spec.channels, spec.sample_rate, spec.bits_per_sample
                    ));
                } else {
                    duration = Some(reader.duration() as f64 / SAMPLE_RATE as f64);
                }
            }
            Err(e) => reasons.push(format!("unreadable audio: {e}")),
        }
    }

    if let Some(d) = duration {
        if d < MIN_DURATION - 1e-9 {
            reasons.push(format!(
                "duration {d:.3} s is shorter than {MIN_DURATION} s"
            ));
        }
        if let Some(n) = frame_count {
            let expected = d * VIDEO_FPS;
            if (n as f64 - expected).abs() > 1.0 {
                reasons.push(format!(
                    "{n} frames but audio covers {expected:.2} frames at {VIDEO_FPS} fps"
                ));
            }
        }
    }
    if !reasons.is_empty() {
        return Err(reasons);
    }
    let rel = |p: &Path| {
        p.strip_prefix(root)
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| p.to_path_buf())
    };
    Ok(VideoEntry {
        id: dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned(),
        frames: rel(&frames_dir),
        audio: rel(&audio_path),
        label,
        generator,
        duration: duration.expect("checked"),
        frame_count: frame_count.expect("checked"),
        split: Split::Train,
    })
}

/// Seeded split assignment stratified by label (and optionally generator).
///
/// Within each stratum of size `n` the first `round(n·r_train)` shuffled
/// members go to train, the next `round(n·r_val)` to validation and the rest
/// to test.
pub fn assign_splits(
    keys: &[(Label, Generator)],
    ratios: [f64; 3],
    seed: u64,
    by_generator: bool,
) -> Result<Vec<Split>> {
    check_ratios(ratios)?;
    let total: f64 = ratios.iter().sum();
    let mut strata: BTreeMap<(Label, Option<Generator>), Vec<usize>> = BTreeMap::new();
    for (i, &(label, generator)) in keys.iter().enumerate() {
        strata
            .entry((label, by_generator.then_some(generator)))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; keys.len()];
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((n as f64 * ratios[0] / total).round() as usize).min(n);
        let n_val = ((n as f64 * ratios[1] / total).round() as usize).min(n - n_train);
        for (k, &i) in members.iter().enumerate() {
            out[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Clip source reading PNG frames and WAV audio from disk.
#[derive(Debug)]
pub struct ManifestSource {
    base_dir: PathBuf,
    entries: Vec<VideoEntry>,
    frame_lists: Vec<OnceLock<std::result::Result<Vec<PathBuf>, String>>>,
}

impl ManifestSource {
    pub fn new(base_dir: PathBuf, entries: Vec<VideoEntry>) -> Self {
        let frame_lists = entries.iter().map(|_| OnceLock::new()).collect();
        Self {
            base_dir,
            entries,
            frame_lists,
        }
    }

    /// A source over one unlabeled video given by its frame directory and
    /// audio file (the label is reported as real and is meaningless).
    pub fn single(frames_dir: &Path, audio: &Path) -> Result<Self> {
        let files = frame_files(frames_dir).map_err(|r| Error::file(frames_dir, r))?;
        let entry = VideoEntry {
            id: frames_dir
                .parent()
                .and_then(Path::file_name)
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned(),
            frames: frames_dir.to_path_buf(),
            audio: audio.to_path_buf(),
            label: Label::Real,
            generator: Generator::None,
            duration: 0.0,
            frame_count: files.len(),
            split: Split::Test,
        };
        Ok(Self::new(PathBuf::new(), vec![entry]))
    }

    pub fn entries(&self) -> &[VideoEntry] {
        &self.entries
    }

    fn frames_of(&self, index: usize) -> Result<&[PathBuf]> {
        let dir = self.base_dir.join(&self.entries[index].frames);
        self.frame_lists[index]
            .get_or_init(|| frame_files(&dir))
            .as_deref()
            .map_err(|reason| Error::file(&dir, reason.clone()))
    }
}

impl ClipSource for ManifestSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn video_id(&self, index: usize) -> &str {
        &self.entries[index].id
    }

    fn label(&self, index: usize) -> Label {
        self.entries[index].label
    }

    fn frame_count(&self, index: usize) -> usize {
        self.entries[index].frame_count
    }

    fn load_frames(&self, index: usize, start: usize, count: usize) -> Result<Vec<RgbImage>> {
        let files = self.frames_of(index)?;
        if start + count > files.len() {
            return Err(Error::data(format!(
                "video {} has {} frames on disk, frames {start}..{} requested",
                self.entries[index].id,
                files.len(),
                start + count
            )));
        }
        files[start..start + count]
            .iter()
            .map(|path| read_frame(path))
            .collect()
    }

    fn load_audio(&self, index: usize) -> Result<Vec<f64>> {
        let path = self.base_dir.join(&self.entries[index].audio);
        let wav = read_wav(&path)?;
        if wav.sample_rate != SAMPLE_RATE {
            return Err(Error::file(
                &path,
                format!(
                    "sample rate {} Hz, expected {SAMPLE_RATE} Hz",
                    wav.sample_rate
                ),
            ));
        }
        Ok(wav.samples())
    }
}

/// Reads one 96×96 face crop.
pub(crate) fn read_frame(path: &Path) -> Result<RgbImage> {
    let img =
        image::open(path).map_err(|e| Error::file(path, format!("cannot decode PNG: {e}")))?;
    let img = img.to_rgb8();
    if (img.width() as usize, img.height() as usize) != (FRAME_SIZE, FRAME_SIZE) {
        return Err(Error::file(
            path,
            format!("frame is {}x{}, expected 96x96", img.width(), img.height()),
        ));
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(real: usize, fake: usize) -> Vec<(Label, Generator)> {
        let mut k = vec![(Label::Real, Generator::None); real];
        k.extend(vec![(Label::Fake, Generator::Wav2lip); fake]);
        k
    }

    fn count(splits: &[Split], keys: &[(Label, Generator)], s: Split, l: Label) -> usize {
        splits
            .iter()
            .zip(keys)
            .filter(|(x, k)| **x == s && k.0 == l)
            .count()
    }

    #[test]
    fn ten_entries_split_six_two_two() {
        let k = keys(5, 5);
        let splits = assign_splits(&k, DEFAULT_RATIOS, 3, false).unwrap();
        for (s, per_class) in [(Split::Train, 3), (Split::Val, 1), (Split::Test, 1)] {
            assert_eq!(count(&splits, &k, s, Label::Real), per_class);
            assert_eq!(count(&splits, &k, s, Label::Fake), per_class);
        }
        assert_eq!(splits, assign_splits(&k, DEFAULT_RATIOS, 3, false).unwrap());
        assert_ne!(splits, assign_splits(&k, DEFAULT_RATIOS, 4, false).unwrap());
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(assign_splits(&keys(1, 1), [0.6, -0.2, 0.6], 0, false).is_err());
        assert!(assign_splits(&keys(1, 1), [0.0; 3], 0, false).is_err());
    }

    #[test]
    fn empty_root_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = build_manifest(dir.path(), DEFAULT_RATIOS, 0).unwrap_err();
        assert!(err.to_string().contains("no video directories"), "{err}");
        assert!(build_manifest(dir.path().join("absent"), DEFAULT_RATIOS, 0).is_err());
    }
}
