//! File formats for every matrix and record type.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so write-then-read is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{ConceptSet, Configuration, DissimilarityMatrix, FeatureMatrix};
use crate::error::{Error, Result};

const UNKNOWN_CATEGORY: &str = "unknown";

/// Reads a `label,category` CSV.
pub fn read_concept_set<R: Read>(reader: R) -> Result<ConceptSet> {
    #[derive(Deserialize)]
    struct Row {
        label: String,
        category: String,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["label", "category"] {
        return Err(Error::Parse(format!(
            "concept file header must be `label,category`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let (mut labels, mut categories) = (Vec::new(), Vec::new());
    for row in rdr.deserialize() {
        let row: Row = row?;
        labels.push(row.label);
        categories.push(row.category);
    }
    ConceptSet::new(labels, categories)
}

pub fn write_concept_set<W: Write>(cs: &ConceptSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "category"])?;
    for (l, c) in cs.labels().iter().zip(cs.categories()) {
        w.write_record([l, c])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a wide feature CSV (`concept,<feature>...`). When `concepts` is
/// given, rows are matched to it by label; otherwise the file's row order
/// defines the concept set. The matrix is flagged binarized when every
/// cell is 0 or 1.
pub fn read_feature_matrix<R: Read>(
    reader: R,
    concepts: Option<&Arc<ConceptSet>>,
) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("concept") {
        return Err(Error::Parse("feature file must start with a `concept` column".into()));
    }
    let features: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let mut rows: Vec<(String, Vec<u8>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let label = rec.get(0).unwrap_or_default().to_string();
        let cells = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.trim().parse::<u8>().map_err(|_| {
                    Error::Parse(format!("row `{label}`: cell {c:?} is not a small integer"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != features.len() {
            return Err(Error::Parse(format!(
                "row `{label}` has {} cells, header has {} features",
                cells.len(),
                features.len()
            )));
        }
        rows.push((label, cells));
    }
    let concepts = match concepts {
        Some(cs) => {
            if rows.len() != cs.len() {
                return Err(Error::ConceptMismatch(format!(
                    "feature file has {} rows, concept set has {}",
                    rows.len(),
                    cs.len()
                )));
            }
            let mut ordered: Vec<Option<Vec<u8>>> = vec![None; cs.len()];
            for (label, cells) in rows {
                let i = cs.index_of(&label).ok_or_else(|| {
                    Error::ConceptMismatch(format!("unknown concept `{label}` in feature file"))
                })?;
                if ordered[i].replace(cells).is_some() {
                    return Err(Error::Parse(format!("concept `{label}` appears twice")));
                }
            }
            rows = ordered
                .into_iter()
                .enumerate()
                .map(|(i, c)| (cs.label(i).to_string(), c.expect("every row matched once")))
                .collect();
            Arc::clone(cs)
        }
        None => {
            let labels: Vec<String> = rows.iter().map(|(l, _)| l.clone()).collect();
            let n = labels.len();
            Arc::new(ConceptSet::new(labels, vec![UNKNOWN_CATEGORY.to_string(); n])?)
        }
    };
    let values: Vec<u8> = rows.into_iter().flat_map(|(_, c)| c).collect();
    let binarized = values.iter().all(|&v| v <= 1);
    FeatureMatrix::new(concepts, features, values, binarized)
}

pub fn write_feature_matrix<W: Write>(m: &FeatureMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["concept".to_string()];
    header.extend(m.feature_labels().iter().cloned());
    w.write_record(&header)?;
    for i in 0..m.n_concepts() {
        let mut rec = vec![m.concepts().label(i).to_string()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a labeled square CSV: first row and first column are concept labels.
pub fn read_dissimilarity<R: Read>(
    reader: R,
    concepts: Option<&Arc<ConceptSet>>,
) -> Result<DissimilarityMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Parse("empty dissimilarity file".into()))??;
    let labels: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let n = labels.len();
    let mut values = DMatrix::zeros(n, n);
    let mut row_count = 0;
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if i >= n {
            return Err(Error::Parse("more rows than header labels".into()));
        }
        if rec.get(0) != Some(labels[i].as_str()) {
            return Err(Error::Parse(format!(
                "row {i} is labeled {:?}, expected {:?}",
                rec.get(0).unwrap_or_default(),
                labels[i]
            )));
        }
        if rec.len() != n + 1 {
            return Err(Error::Parse(format!("row {i} has {} cells, expected {n}", rec.len() - 1)));
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            values[(i, j)] = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("cell ({i}, {j}) = {cell:?} is not a number")))?;
        }
        row_count += 1;
    }
    if row_count != n {
        return Err(Error::Parse(format!("{row_count} rows for {n} labels")));
    }
    let file_set = Arc::new(ConceptSet::new(labels, vec![UNKNOWN_CATEGORY.to_string(); n])?);
    let d = DissimilarityMatrix::new(file_set, values)?;
    match concepts {
        Some(cs) => d.align_to(cs),
        None => Ok(d),
    }
}

pub fn write_dissimilarity<W: Write>(d: &DissimilarityMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(d.concepts().labels().iter().cloned());
    w.write_record(&header)?;
    for i in 0..d.len() {
        let mut rec = vec![d.concepts().label(i).to_string()];
        rec.extend((0..d.len()).map(|j| fmt_f64(d.get(i, j))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// JSON shape of an embedding file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub labels: Vec<String>,
    pub dims: usize,
    pub coords: Vec<Vec<f64>>,
}

impl From<&Configuration> for EmbeddingFile {
    fn from(c: &Configuration) -> Self {
        Self {
            labels: c.concepts().labels().to_vec(),
            dims: c.dims(),
            coords: c
                .coords()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl EmbeddingFile {
    pub fn into_configuration(self, concepts: Option<&Arc<ConceptSet>>) -> Result<Configuration> {
        let n = self.labels.len();
        if self.coords.len() != n {
            return Err(Error::Parse(format!("{} coordinate rows for {n} labels", self.coords.len())));
        }
        if let Some(row) = self.coords.iter().position(|r| r.len() != self.dims) {
            return Err(Error::Parse(format!("row {row} does not have {} coordinates", self.dims)));
        }
        let flat: Vec<f64> = self.coords.into_iter().flatten().collect();
        let coords = DMatrix::from_row_slice(n, self.dims, &flat);
        let file_set = Arc::new(ConceptSet::new(self.labels, vec![UNKNOWN_CATEGORY.to_string(); n])?);
        let c = Configuration::new(file_set, coords)?;
        match concepts {
            Some(cs) => c.align_to(cs),
            None => Ok(c),
        }
    }
}

pub fn read_configuration<R: Read>(
    reader: R,
    concepts: Option<&Arc<ConceptSet>>,
) -> Result<Configuration> {
    let file: EmbeddingFile = serde_json::from_reader(reader)?;
    file.into_configuration(concepts)
}

pub fn write_configuration<W: Write>(c: &Configuration, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, &EmbeddingFile::from(c))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // `{}` on f64 is the shortest string that round-trips exactly.
    format!("{v}")
}
