use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::image::load_image;

/// Identity value marking gallery distractors.
pub const DISTRACTOR: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    /// Path as written in the manifest or directory listing, relative to the
    /// dataset root unless absolute.
    pub image_path: String,
    pub identity: i64,
    pub camera: u32,
}

impl DatasetRecord {
    pub fn is_distractor(&self) -> bool {
        self.identity < 0
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    records: Vec<DatasetRecord>,
    identity_index: BTreeMap<i64, Vec<usize>>,
    classes: Vec<i64>,
}

impl Dataset {
    /// Sorts records by path and rejects empty sets and duplicate paths.
    pub fn from_records(root: impl Into<PathBuf>, mut records: Vec<DatasetRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        records.sort_by(|a, b| a.image_path.cmp(&b.image_path));
        for pair in records.windows(2) {
            if pair[0].image_path == pair[1].image_path {
                return Err(Error::DuplicatePath(pair[0].image_path.clone()));
            }
        }
        for r in &records {
            if r.image_path.is_empty() {
                return Err(Error::Format("record with empty path".into()));
            }
            if r.camera == 0 {
                return Err(Error::Format(format!("{}: camera ids start at 1", r.image_path)));
            }
            if r.identity < DISTRACTOR {
                return Err(Error::Format(format!("{}: identity {} below -1", r.image_path, r.identity)));
            }
        }
        let mut identity_index: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            identity_index.entry(r.identity).or_default().push(i);
        }
        let classes = identity_index.keys().copied().filter(|&id| id >= 0).collect();
        Ok(Self {
            root: root.into(),
            records,
            identity_index,
            classes,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record positions per identity, distractors included under -1.
    pub fn identity_index(&self) -> &BTreeMap<i64, Vec<usize>> {
        &self.identity_index
    }

    /// Non-distractor identities in ascending order; position = class index.
    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, identity: i64) -> Option<usize> {
        self.classes.binary_search(&identity).ok()
    }

    /// Positions of all non-distractor records.
    pub fn trainable_positions(&self) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| !self.records[i].is_distractor())
            .collect()
    }

    pub fn resolve(&self, index: usize) -> PathBuf {
        let p = Path::new(&self.records[index].image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_image(&self, index: usize) -> Result<Tensor<f32>> {
        load_image(self.resolve(index))
    }

    /// Decodes every image in record order.
    pub fn load_images(&self) -> Result<Vec<Tensor<f32>>> {
        (0..self.len()).map(|i| self.load_image(i)).collect()
    }
}

/// Loads a dataset from a manifest CSV (`path,identity,camera`, header
/// optional) when given, otherwise from Market-1501 style file names in
/// `root`. Manifest paths are resolved against `root`.
pub fn load_dataset(root: impl AsRef<Path>, manifest: Option<&Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let records = match manifest {
        Some(m) => read_manifest(m)?,
        None => scan_directory(root)?,
    };
    Dataset::from_records(root, records)
}

/// Parses manifest rows; identity `-1` marks distractors.
pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub(crate) fn parse_manifest(text: &str, path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 1;
        let err = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let row = row.map_err(|e| err(e.to_string()))?;
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", row.len())));
        }
        if i == 0 && &row[1] == "identity" {
            continue;
        }
        let identity = row[1]
            .parse::<i64>()
            .map_err(|_| err(format!("bad identity {:?}", &row[1])))?;
        let camera = row[2]
            .parse::<u32>()
            .map_err(|_| err(format!("bad camera {:?}", &row[2])))?;
        if row[0].is_empty() {
            return Err(err("empty path".into()));
        }
        records.push(DatasetRecord {
            image_path: row[0].to_string(),
            identity,
            camera,
        });
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["path", "identity", "camera"]).map_err(io)?;
    for r in records {
        w.write_record([r.image_path.clone(), r.identity.to_string(), r.camera.to_string()])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

const IMAGE_EXTENSIONS: [&str; 2] = ["rten", "ppm"];

fn scan_directory(root: &Path) -> Result<Vec<DatasetRecord>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if !entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let ext = Path::new(&name)
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            names.insert(name);
        }
    }
    names.into_iter().map(|n| parse_market_name(&n)).collect()
}

/// `0002_c1s1_000451_03.rten` → identity 2, camera 1. `-1_c3...` is a
/// distractor.
pub fn parse_market_name(name: &str) -> Result<DatasetRecord> {
    let bad = || Error::UnparseableName(name.to_string());
    let (id, rest) = name.split_once('_').ok_or_else(bad)?;
    let identity: i64 = id.parse().map_err(|_| bad())?;
    if identity < DISTRACTOR {
        return Err(bad());
    }
    let digits: String = rest
        .strip_prefix('c')
        .ok_or_else(bad)?
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    let camera: u32 = digits.parse().map_err(|_| bad())?;
    if camera == 0 {
        return Err(bad());
    }
    Ok(DatasetRecord {
        image_path: name.to_string(),
        identity,
        camera,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<DatasetRecord>> {
        parse_manifest(text, Path::new("m.csv"))
    }

    #[test]
    fn manifest_line_becomes_record() {
        let r = parse("img001.rten,5,2\n").unwrap();
        assert_eq!(
            r,
            vec![DatasetRecord {
                image_path: "img001.rten".into(),
                identity: 5,
                camera: 2
            }]
        );
    }

    #[test]
    fn header_is_optional() {
        let a = parse("path,identity,camera\nx.rten,1,1\n").unwrap();
        let b = parse("x.rten,1,1\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let err = Dataset::from_records(".", parse("").unwrap()).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
        let err = Dataset::from_records(".", parse("path,identity,camera\n").unwrap()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
    }

    #[test]
    fn duplicate_path_is_named() {
        let recs = parse("b.rten,1,1\na.rten,2,1\nb.rten,3,2\n").unwrap();
        let err = Dataset::from_records(".", recs).unwrap_err();
        assert!(err.to_string().contains("b.rten"), "{err}");
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = parse("a.rten,1,1\nb.rten,x,1\n").unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(parse("a.rten,1\n").is_err());
    }

    #[test]
    fn records_sorted_and_indexed() {
        let recs = parse("c.rten,3,1\na.rten,-1,2\nb.rten,3,2\nd.rten,1,1\n").unwrap();
        let ds = Dataset::from_records(".", recs).unwrap();
        let paths: Vec<_> = ds.records().iter().map(|r| r.image_path.as_str()).collect();
        assert_eq!(paths, ["a.rten", "b.rten", "c.rten", "d.rten"]);
        assert_eq!(ds.identity_index()[&3], vec![1, 2]);
        assert_eq!(ds.classes(), &[1, 3]);
        assert_eq!(ds.class_of(3), Some(1));
        assert_eq!(ds.class_of(-1), None);
        assert_eq!(ds.trainable_positions(), vec![1, 2, 3]);
    }

    #[test]
    fn market_names() {
        let r = parse_market_name("0002_c1s1_000451_03.rten").unwrap();
        assert_eq!((r.identity, r.camera), (2, 1));
        let r = parse_market_name("-1_c3s2_000001_00.ppm").unwrap();
        assert_eq!((r.identity, r.camera), (-1, 3));
        for bad in ["abc.rten", "0002_x1.rten", "0002_c.rten", "0002_c0s1.rten", "-2_c1.rten"] {
            assert!(matches!(parse_market_name(bad), Err(Error::UnparseableName(_))), "{bad}");
        }
    }
}
