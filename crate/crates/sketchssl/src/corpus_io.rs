//! On-disk corpus: an NDJSON file per sketch split, a manifest listing every
//! photo, and one file per photo.
//!
//! ```text
//! <dir>/manifest.ndjson      {"id": "L00000", "split": "labeled", "photo": "photos/L00000.f64"}
//! <dir>/sketches.ndjson      {"id": "L00000", "photo": "L00000", "points": [[dx, dy, p1, p2, p3], ...]}
//! <dir>/test_sketches.ndjson
//! <dir>/photos/<id>.f64      3*H*W little-endian f64 values, shape in the manifest
//! ```
//!
//! `.png` photos are also accepted on load (8-bit channels scaled to
//! `[0, 1]`), so externally prepared data can be dropped in.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sketchssl_core::sketch::{
    Corpus, LabeledPair, LabeledPairSet, RasterImage, StrokeSequence, UnlabeledPhoto,
    UnlabeledPhotoSet, DEFAULT_MAX_LEN,
};
use sketchssl_core::Tensor;

pub const MANIFEST: &str = "manifest.ndjson";
pub const SKETCHES: &str = "sketches.ndjson";
pub const TEST_SKETCHES: &str = "test_sketches.ndjson";

#[derive(Debug, thiserror::Error)]
pub enum CorpusIoError {
    #[error("{file}:{line}: {msg}")]
    Line {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Photo { path: PathBuf, msg: String },
    #[error("corpus: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, CorpusIoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusIoError + '_ {
    move |source| CorpusIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub photo: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchLine {
    pub id: String,
    pub photo: String,
    pub points: Vec<[f64; 5]>,
}

pub fn sketch_line(id: &str, photo: &str, seq: &StrokeSequence) -> SketchLine {
    SketchLine {
        id: id.into(),
        photo: photo.into(),
        points: seq.points().iter().map(|p| p.to_stroke5()).collect(),
    }
}

/// Parse one NDJSON sketch record, validating the stroke-5 rows.
pub fn parse_sketch_line(
    text: &str,
    max_len: usize,
) -> std::result::Result<(SketchLine, StrokeSequence), String> {
    let line: SketchLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let seq = StrokeSequence::from_stroke5(&line.points, max_len).map_err(|e| e.to_string())?;
    Ok((line, seq))
}

/// Non-empty lines of a file with their 1-based numbers; a missing file
/// reads as empty.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Sketch records with their line numbers.
pub fn read_sketches(path: &Path) -> Result<Vec<(usize, SketchLine, StrokeSequence)>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, text)| {
            parse_sketch_line(&text, DEFAULT_MAX_LEN)
                .map(|(l, s)| (n, l, s))
                .map_err(|msg| CorpusIoError::Line {
                    file: path.to_path_buf(),
                    line: n,
                    msg,
                })
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, text)| {
            serde_json::from_str(&text).map_err(|e| CorpusIoError::Line {
                file: path.to_path_buf(),
                line: n,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn write_ndjson<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for r in rows {
        let s = serde_json::to_string(r).map_err(|e| CorpusIoError::Invalid(e.to_string()))?;
        writeln!(out, "{s}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn write_photo_raw(path: &Path, img: &RasterImage) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_photo(path: &Path, height: Option<usize>, width: Option<usize>) -> Result<RasterImage> {
    let bad = |msg: String| CorpusIoError::Photo {
        path: path.to_path_buf(),
        msg,
    };
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let tensor = if is_png {
        let img = image::open(path).map_err(|e| bad(e.to_string()))?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * h * w + y as usize * w + x as usize] = px.0[c] as f64 / 255.0;
            }
        }
        Tensor::new(vec![3, h, w], data)
    } else {
        let (h, w) = height
            .zip(width)
            .ok_or_else(|| bad("raw photos need height and width in the manifest".into()))?;
        let bytes = fs::read(path).map_err(io_err(path))?;
        if bytes.len() != 3 * h * w * 8 {
            return Err(bad(format!(
                "expected {} bytes for 3x{h}x{w}, found {}",
                3 * h * w * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(vec![3, h, w], data)
    };
    let tensor = tensor.map_err(|e| bad(e.to_string()))?;
    RasterImage::from_tensor(tensor).map_err(|e| bad(e.to_string()))
}

/// Write a corpus under `dir` (created if needed).
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let photos = dir.join("photos");
    fs::create_dir_all(&photos).map_err(io_err(&photos))?;
    let mut manifest = Vec::new();
    let mut entry = |id: &str, split: Split, img: &RasterImage| -> Result<()> {
        let rel = format!("photos/{id}.f64");
        write_photo_raw(&dir.join(&rel), img)?;
        manifest.push(ManifestEntry {
            id: id.into(),
            split,
            photo: rel,
            height: Some(img.height()),
            width: Some(img.width()),
        });
        Ok(())
    };
    for p in &corpus.labeled.pairs {
        entry(&p.id, Split::Labeled, &p.photo)?;
    }
    for p in &corpus.unlabeled.photos {
        entry(&p.id, Split::Unlabeled, &p.photo)?;
    }
    for p in &corpus.test.pairs {
        entry(&p.id, Split::Test, &p.photo)?;
    }
    write_ndjson(&dir.join(MANIFEST), &manifest)?;
    let lines = |set: &LabeledPairSet| {
        set.pairs
            .iter()
            .map(|p| sketch_line(&p.id, &p.id, &p.sketch))
            .collect::<Vec<_>>()
    };
    write_ndjson(&dir.join(SKETCHES), &lines(&corpus.labeled))?;
    write_ndjson(&dir.join(TEST_SKETCHES), &lines(&corpus.test))
}

/// Read a corpus written by [`save_corpus`] or prepared by hand in the same
/// layout. Missing files read as empty.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = read_manifest(&dir.join(MANIFEST))?;
    let mut photos: BTreeMap<String, (Split, RasterImage)> = BTreeMap::new();
    for e in &manifest {
        let img = read_photo(&dir.join(&e.photo), e.height, e.width)?;
        if photos.insert(e.id.clone(), (e.split, img)).is_some() {
            return Err(CorpusIoError::Invalid(format!(
                "photo id {:?} listed twice in the manifest",
                e.id
            )));
        }
    }
    let pairs = |file: &str, split: Split| -> Result<LabeledPairSet> {
        let path = dir.join(file);
        let mut out = Vec::new();
        for (n, line, seq) in read_sketches(&path)? {
            let photo = match photos.get(&line.photo) {
                Some((s, img)) if *s == split => img.clone(),
                _ => {
                    return Err(CorpusIoError::Line {
                        file: path.clone(),
                        line: n,
                        msg: format!(
                            "photo {:?} is not a {split:?} photo in the manifest",
                            line.photo
                        ),
                    })
                }
            };
            out.push(LabeledPair {
                id: line.id,
                photo,
                sketch: seq,
            });
        }
        LabeledPairSet::new(out).map_err(|e| CorpusIoError::Invalid(e.to_string()))
    };
    let labeled = pairs(SKETCHES, Split::Labeled)?;
    let test = pairs(TEST_SKETCHES, Split::Test)?;
    let unlabeled = UnlabeledPhotoSet::new(
        manifest
            .iter()
            .filter(|e| e.split == Split::Unlabeled)
            .map(|e| UnlabeledPhoto {
                id: e.id.clone(),
                photo: photos[&e.id].1.clone(),
            })
            .collect(),
    )
    .map_err(|e| CorpusIoError::Invalid(e.to_string()))?;
    let corpus = Corpus {
        labeled,
        unlabeled,
        test,
    };
    corpus
        .validate()
        .map_err(|e| CorpusIoError::Invalid(e.to_string()))?;
    Ok(corpus)
}
