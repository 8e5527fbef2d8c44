//! Per-utterance frame-level feature matrices: loading, saving,
//! standardization and a synthetic corpus generator.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! manifest.jsonl        {"id", "path", "label", "speaker", "session"} per line
//! classes.json          optional; explicit list of class names
//! features/<id>.csv     frame_index,f0,...,f{d-1}
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic, write_json_atomic};
use crate::matrix::Matrix;
use crate::rng::{self, Stream};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CLASSES_FILE: &str = "classes.json";

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `n × d` frame features, one row per frame.
    pub features: Matrix,
    pub label: usize,
    pub speaker: String,
    pub session: String,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub d: usize,
    pub class_names: Vec<String>,
    pub speakers: BTreeSet<String>,
}

impl Dataset {
    /// Assembles a dataset, checking labels, frame counts, finiteness and a
    /// common feature dimension.
    pub fn new(utterances: Vec<Utterance>, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Invalid(format!("at least 2 classes required, got {}", class_names.len())));
        }
        let d = utterances.first().map(|u| u.features.cols()).unwrap_or(0);
        let mut seen = HashSet::new();
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate utterance id {:?}", u.id)));
            }
            if u.n_frames() == 0 {
                return Err(Error::Invalid(format!("empty utterance {:?}", u.id)));
            }
            if u.features.cols() != d {
                return Err(Error::Invalid(format!(
                    "utterance {:?} has d={}, expected {d}",
                    u.id,
                    u.features.cols()
                )));
            }
            if u.label >= class_names.len() {
                return Err(Error::Invalid(format!(
                    "utterance {:?} has label {} but only {} classes",
                    u.id,
                    u.label,
                    class_names.len()
                )));
            }
            if !u.features.is_finite() {
                return Err(Error::Invalid(format!("non-finite feature value in utterance {:?}", u.id)));
            }
        }
        let speakers = utterances.iter().map(|u| u.speaker.clone()).collect();
        Ok(Self { utterances, d, class_names, speakers })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(|u| u.id.as_str())
    }

    /// Sub-dataset of the utterances accepted by `keep`, preserving order and
    /// class names.
    pub fn filter(&self, mut keep: impl FnMut(&Utterance) -> bool) -> Dataset {
        let utterances: Vec<_> = self.utterances.iter().filter(|u| keep(u)).cloned().collect();
        let speakers = utterances.iter().map(|u| u.speaker.clone()).collect();
        Dataset { utterances, d: self.d, class_names: self.class_names.clone(), speakers }
    }

    pub fn by_speakers(&self, speakers: &BTreeSet<String>) -> Dataset {
        self.filter(|u| speakers.contains(&u.speaker))
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizeStats {
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }
}

/// Per-dimension mean and (population) standard deviation over every frame
/// of the included utterances. Unknown ids are ignored.
pub fn fit_standardizer<'a, I>(dataset: &Dataset, include_ids: I) -> Result<StandardizeStats>
where
    I: IntoIterator<Item = &'a str>,
{
    let include: HashSet<&str> = include_ids.into_iter().collect();
    if include.is_empty() {
        return Err(Error::Invalid("standardizer needs a non-empty id set".into()));
    }
    let d = dataset.d;
    let mut count = 0usize;
    let mut sum = vec![0.0; d];
    for u in dataset.utterances.iter().filter(|u| include.contains(u.id.as_str())) {
        for row in u.features.iter_rows() {
            count += 1;
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    if count == 0 {
        return Err(Error::Invalid("standardizer ids matched no frames".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    // Second pass on centred values keeps the variance accurate for large means.
    let mut sq = vec![0.0; d];
    for u in dataset.utterances.iter().filter(|u| include.contains(u.id.as_str())) {
        for row in u.features.iter_rows() {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
    }
    let std = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(StandardizeStats { mean, std })
}

pub fn standardize_matrix(x: &Matrix, stats: &StandardizeStats) -> Result<Matrix> {
    if x.cols() != stats.d() {
        return Err(Error::Shape(format!("features have d={}, standardizer has d={}", x.cols(), stats.d())));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        for ((v, m), s) in out.row_mut(i).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

pub fn apply_standardizer(dataset: &Dataset, stats: &StandardizeStats) -> Result<Dataset> {
    if dataset.d != stats.d() {
        return Err(Error::Shape(format!("dataset has d={}, standardizer has d={}", dataset.d, stats.d())));
    }
    let utterances = dataset
        .utterances
        .iter()
        .map(|u| Ok(Utterance { features: standardize_matrix(&u.features, stats)?, ..u.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { utterances, ..dataset.clone() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    path: String,
    label: String,
    speaker: String,
    #[serde(default)]
    session: String,
}

/// Loads a dataset from a JSON Lines manifest. Class names come from a
/// sibling `classes.json` when present, otherwise from the sorted set of
/// labels in the manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    load_dataset_with_classes(manifest_path, None)
}

/// As [`load_dataset`], but with an explicit class list (for instance the
/// one stored in a checkpoint). Labels outside the list are rejected.
pub fn load_dataset_with_classes(manifest_path: &Path, class_names: Option<&[String]>) -> Result<Dataset> {
    let manifest_path =
        if manifest_path.is_dir() { manifest_path.join(MANIFEST_FILE) } else { manifest_path.to_path_buf() };
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = read_to_string(&manifest_path)?;

    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::data(&manifest_path, Some(lineno + 1), format!("bad manifest entry: {e}")))?;
        entries.push((lineno + 1, entry));
    }

    let class_names: Vec<String> = match class_names {
        Some(names) => names.to_vec(),
        None => {
            let classes_path = base.join(CLASSES_FILE);
            if classes_path.exists() {
                serde_json::from_str(&read_to_string(&classes_path)?)
                    .map_err(|e| Error::data(&classes_path, None, e.to_string()))?
            } else {
                let set: BTreeSet<&str> = entries.iter().map(|(_, e)| e.label.as_str()).collect();
                set.into_iter().map(str::to_owned).collect()
            }
        }
    };
    let index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut utterances = Vec::with_capacity(entries.len());
    let mut d: Option<usize> = None;
    for (lineno, e) in &entries {
        let label = *index.get(e.label.as_str()).ok_or_else(|| {
            Error::data(&manifest_path, Some(*lineno), format!("unknown label {:?}", e.label))
        })?;
        let path = base.join(&e.path);
        let features = read_feature_csv(&path)?;
        match d {
            None => d = Some(features.cols()),
            Some(d) if d != features.cols() => {
                return Err(Error::data(
                    &path,
                    None,
                    format!("d mismatch: {} features, expected {d}", features.cols()),
                ))
            }
            _ => {}
        }
        utterances.push(Utterance {
            id: e.id.clone(),
            features,
            label,
            speaker: e.speaker.clone(),
            session: e.session.clone(),
        });
    }
    Dataset::new(utterances, class_names).map_err(|e| match e {
        Error::Invalid(msg) => Error::data(&manifest_path, None, msg),
        other => other,
    })
}

/// Parses one feature CSV (`frame_index,f0,...,f{d-1}`).
pub fn read_feature_csv(path: &Path) -> Result<Matrix> {
    let text = read_to_string(path)?;
    parse_feature_csv(&text, path)
}

fn parse_feature_csv(text: &str, path: &Path) -> Result<Matrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::data(path, Some(1), "missing header"))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first().map(|c| c.trim()) != Some("frame_index") {
        return Err(Error::data(path, Some(1), "header must start with frame_index"));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if c.trim() != format!("f{j}") {
            return Err(Error::data(
                path,
                Some(1),
                format!("header column {} should be f{j}, got {c:?}", j + 1),
            ));
        }
    }
    let d = cols.len() - 1;
    if d == 0 {
        return Err(Error::data(path, Some(1), "no feature columns"));
    }

    let mut data = Vec::new();
    let mut n = 0usize;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::data(
                path,
                Some(lineno),
                format!("ragged row: {} fields, expected {}", fields.len(), d + 1),
            ));
        }
        let idx: usize =
            fields[0].trim().parse().map_err(|_| Error::data(path, Some(lineno), "bad frame_index"))?;
        if idx != n {
            return Err(Error::data(
                path,
                Some(lineno),
                format!("frame_index {idx} out of sequence, expected {n}"),
            ));
        }
        for f in &fields[1..] {
            let v: f64 =
                f.trim().parse().map_err(|_| Error::data(path, Some(lineno), format!("bad number {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::data(path, Some(lineno), "non-finite feature value"));
            }
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::data(path, None, "empty utterance"));
    }
    Matrix::from_vec(n, d, data)
}

pub fn feature_csv_string(x: &Matrix) -> String {
    let mut out = String::from("frame_index");
    for j in 0..x.cols() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (i, row) in x.iter_rows().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            // `Display` for f64 prints the shortest string that round-trips.
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes `dataset` under `dir` (manifest, classes list, one CSV per
/// utterance). Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let features_dir = dir.join("features");
    std::fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    let mut manifest = String::new();
    for u in &dataset.utterances {
        let rel = format!("features/{}.csv", u.id);
        write_atomic(&dir.join(&rel), feature_csv_string(&u.features).as_bytes())?;
        let entry = ManifestEntry {
            id: u.id.clone(),
            path: rel,
            label: dataset.class_names[u.label].clone(),
            speaker: u.speaker.clone(),
            session: u.session.clone(),
        };
        manifest.push_str(&serde_json::to_string(&entry)?);
        manifest.push('\n');
    }
    write_json_atomic(&dir.join(CLASSES_FILE), &dataset.class_names)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    write_atomic(&manifest_path, manifest.as_bytes())?;
    Ok(manifest_path)
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_speakers: usize,
    pub utt_per_speaker: usize,
    pub frames_lo: usize,
    pub frames_hi: usize,
    /// Fraction of frames per utterance drawn from the shared "vacuum"
    /// distribution instead of the class cluster.
    pub noise_frac: f64,
    pub d: usize,
    /// Distance of each cluster centre from the origin, in units of the
    /// per-frame noise standard deviation.
    pub cluster_sep: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_speakers: 8,
            utt_per_speaker: 20,
            frames_lo: 20,
            frames_hi: 40,
            noise_frac: 0.3,
            d: 88,
            cluster_sep: 4.0,
            seed: 0,
        }
    }
}

/// Per-speaker offset magnitude relative to `cluster_sep`.
const SPEAKER_OFFSET: f64 = 0.25;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.n_speakers < 2 {
            return bad("n_speakers must be at least 2 for leave-one-speaker-out evaluation");
        }
        if self.utt_per_speaker < 1 {
            return bad("utt_per_speaker must be at least 1");
        }
        if self.frames_lo < 2 || self.frames_hi < self.frames_lo {
            return bad("frame range must satisfy 2 <= frames_lo <= frames_hi");
        }
        if !(0.0..1.0).contains(&self.noise_frac) {
            return bad("noise_frac must lie in [0, 1)");
        }
        if self.d < 1 {
            return bad("d must be at least 1");
        }
        if !(self.cluster_sep.is_finite() && self.cluster_sep >= 0.0) {
            return bad("cluster_sep must be finite and non-negative");
        }
        Ok(())
    }
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

fn gaussian_vec(rng: &mut rng::Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn direction(rng: &mut rng::Rng, d: usize, scale: f64) -> Vec<f64> {
    let mut v = gaussian_vec(rng, d);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = if norm > 0.0 { scale / norm } else { 0.0 };
    v.iter_mut().for_each(|x| *x *= s);
    v
}

/// Generates a labelled corpus that mimics voiced frames interleaved with
/// class-independent silence frames.
///
/// Each class owns a cluster centre at distance `cluster_sep` from the
/// origin; voiced frames are that centre plus a small per-speaker offset plus
/// unit Gaussian noise. A fraction `noise_frac` of each utterance's frames,
/// at random positions, comes instead from a single "vacuum" cluster shared by
/// all classes. Labels cycle through the classes within each speaker, so
/// every speaker is class-balanced whenever `utt_per_speaker` is a multiple of
/// `n_classes`.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Synth, 0);
    let d = spec.d;

    let class_centres: Vec<Vec<f64>> =
        (0..spec.n_classes).map(|_| direction(&mut rng, d, spec.cluster_sep)).collect();
    let vacuum_centre = direction(&mut rng, d, spec.cluster_sep);
    let speaker_offsets: Vec<Vec<f64>> =
        (0..spec.n_speakers).map(|_| direction(&mut rng, d, SPEAKER_OFFSET * spec.cluster_sep)).collect();

    let cw = width(spec.n_classes);
    let sw = width(spec.n_speakers);
    let uw = width(spec.utt_per_speaker).max(3);
    let class_names = (0..spec.n_classes).map(|c| format!("class{c:0cw$}")).collect();

    let mut utterances = Vec::with_capacity(spec.n_speakers * spec.utt_per_speaker);
    for s in 0..spec.n_speakers {
        let speaker = format!("spk{s:0sw$}");
        let session = format!("sess{}", s / 2);
        for u in 0..spec.utt_per_speaker {
            let label = u % spec.n_classes;
            let n = rng.gen_range(spec.frames_lo..=spec.frames_hi);
            let n_vacuum = ((spec.noise_frac * n as f64).round() as usize).min(n - 1);
            let mut is_vacuum = vec![false; n];
            is_vacuum[..n_vacuum].iter_mut().for_each(|v| *v = true);
            is_vacuum.shuffle(&mut rng);

            let mut features = Matrix::zeros(n, d);
            for (i, &vac) in is_vacuum.iter().enumerate() {
                let row = features.row_mut(i);
                for j in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    row[j] = if vac {
                        vacuum_centre[j] + noise
                    } else {
                        class_centres[label][j] + speaker_offsets[s][j] + noise
                    };
                }
            }
            utterances.push(Utterance {
                id: format!("{speaker}_u{u:0uw$}"),
                features,
                label,
                speaker: speaker.clone(),
                session: session.clone(),
            });
        }
    }
    Dataset::new(utterances, class_names)
}
