//! File formats.
//!
//! * hierarchy TSV: `child<TAB>parent` per line, `#` comments
//! * annotations JSON: `{"image": ["tag", ...], ...}`
//! * activation CSV: header `image,0,1,...`, one row per image
//! * label CSV: `neuron,label`, header optional
//! * image-set manifest JSON: `{"label": ["image", ...], ...}`
//! * concept manifest JSON: `{"concept": {"positive": [...], "negative": [...]}}`
//! * image list: one image name per line, `#` comments

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::concept_activation::ConceptManifest;
use crate::error::{Error, Result};
use crate::hierarchy::{parse_hierarchy, ClassHierarchy};
use crate::knowledge_base::ImageAnnotation;
use crate::neuron_analysis::{ActivationMatrix, ImageSetManifest};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Attaches the path to line-level parse errors.
fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::MalformedLine { .. } => Error::format(path, e),
        other => other,
    }
}

pub fn read_hierarchy(path: &Path) -> Result<ClassHierarchy> {
    parse_hierarchy(open(path)?).map_err(|e| in_file(path, e))
}

/// One `child<TAB>parent` line per edge, ordered by child then parent id.
/// Parentless classes without children cannot be expressed and are dropped.
pub fn write_hierarchy_to<W: Write>(h: &ClassHierarchy, mut w: W) -> std::io::Result<()> {
    for (child, parent) in h.edges() {
        writeln!(w, "{}\t{}", h.name(child), h.name(parent))?;
    }
    Ok(())
}

pub fn write_hierarchy(h: &ClassHierarchy, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_hierarchy_to(h, &mut w).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

/// Annotations in file order; duplicate image keys are rejected.
struct Annotations(Vec<ImageAnnotation>);

impl<'de> Deserialize<'de> for Annotations {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Annotations;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping image names to tag lists")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Annotations, A::Error> {
                let mut seen = std::collections::HashSet::new();
                let mut out = Vec::new();
                while let Some((image, tags)) = map.next_entry::<String, Vec<String>>()? {
                    if !seen.insert(image.clone()) {
                        return Err(de::Error::custom(format!("duplicate image `{image}`")));
                    }
                    out.push(ImageAnnotation { image, tags });
                }
                Ok(Annotations(out))
            }
        }
        d.deserialize_map(V)
    }
}

struct AnnotationsRef<'a>(&'a [ImageAnnotation]);

impl Serialize for AnnotationsRef<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for a in self.0 {
            map.serialize_entry(&a.image, &a.tags)?;
        }
        map.end()
    }
}

pub fn parse_annotations<R: Read>(r: R) -> std::result::Result<Vec<ImageAnnotation>, serde_json::Error> {
    serde_json::from_reader::<_, Annotations>(r).map(|a| a.0)
}

pub fn read_annotations(path: &Path) -> Result<Vec<ImageAnnotation>> {
    parse_annotations(open(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_annotations(annotations: &[ImageAnnotation], path: &Path) -> Result<()> {
    write_json(&AnnotationsRef(annotations), path)
}

pub fn parse_activation_csv<R: Read>(r: R) -> std::result::Result<ActivationMatrix, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    if header.get(0).map(str::trim) != Some("image") {
        return Err("header must start with `image`".into());
    }
    let neurons = header.len() - 1;
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = i + 2;
        let mut fields = rec.iter();
        let name = fields.next().unwrap_or_default().to_string();
        for (j, raw) in fields.enumerate() {
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| format!("row {row}, neuron {j}: `{raw}` is not a number"))?;
            if !v.is_finite() || v < 0.0 {
                return Err(format!(
                    "row {row}, neuron {j}: activation {v} must be finite and non-negative"
                ));
            }
            values.push(v);
        }
        names.push(name);
    }
    ActivationMatrix::new(names, neurons, values).map_err(|e| e.to_string())
}

pub fn read_activation_csv(path: &Path) -> Result<ActivationMatrix> {
    parse_activation_csv(open(path)?).map_err(|e| Error::format(path, e))
}

/// Values use the shortest representation that reads back exactly.
pub fn write_activation_csv_to<W: Write>(m: &ActivationMatrix, w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["image".to_string()];
    header.extend((0..m.neuron_count()).map(|j| j.to_string()));
    wtr.write_record(&header)?;
    let mut rec = Vec::with_capacity(m.neuron_count() + 1);
    for (row, name) in m.image_names().enumerate() {
        rec.clear();
        rec.push(name.to_string());
        rec.extend(m.row(row).iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_activation_csv(m: &ActivationMatrix, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_activation_csv_to(m, &mut w).map_err(|e| Error::format(path, e))?;
    finish(w, path)
}

/// Neuron -> label. A `neuron,label` header is optional. With `neuron_count`,
/// ids at or beyond it are rejected.
pub fn parse_labels_csv<R: Read>(
    r: R,
    neuron_count: Option<usize>,
) -> std::result::Result<BTreeMap<usize, String>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = i + 1;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 2 {
            return Err(format!("line {line}: expected `neuron,label`"));
        }
        if i == 0 && rec[0].eq_ignore_ascii_case("neuron") {
            continue;
        }
        let neuron: usize = rec[0]
            .parse()
            .map_err(|_| format!("line {line}: neuron id `{}` is not a non-negative integer", &rec[0]))?;
        if let Some(n) = neuron_count.filter(|&n| neuron >= n) {
            return Err(format!("line {line}: neuron {neuron} out of range (network has {n})"));
        }
        if out.insert(neuron, rec[1].to_string()).is_some() {
            return Err(format!("line {line}: neuron {neuron} labelled twice"));
        }
    }
    Ok(out)
}

pub fn read_labels_csv(path: &Path, neuron_count: Option<usize>) -> Result<BTreeMap<usize, String>> {
    parse_labels_csv(open(path)?, neuron_count).map_err(|e| Error::format(path, e))
}

pub fn write_labels_csv(labels: &BTreeMap<usize, String>, path: &Path) -> Result<()> {
    let rows: Vec<(usize, &str)> = labels.iter().map(|(&n, l)| (n, l.as_str())).collect();
    write_csv(
        path,
        &["neuron", "label"],
        rows.iter().map(|(n, l)| vec![n.to_string(), l.to_string()]),
    )
}

pub fn read_image_manifest(path: &Path) -> Result<ImageSetManifest> {
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e))?;
    Ok(raw.into_iter().collect())
}

pub fn write_image_manifest(m: &ImageSetManifest, path: &Path) -> Result<()> {
    write_json(m, path)
}

pub fn read_concept_manifest(path: &Path) -> Result<ConceptManifest> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_concept_manifest(m: &ConceptManifest, path: &Path) -> Result<()> {
    write_json(m, path)
}

pub fn read_image_list(path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let name = line.trim();
        if !name.is_empty() && !name.starts_with('#') {
            out.push(name.to_string());
        }
    }
    Ok(out)
}

/// Numeric values of one named column of a CSV file with a header.
pub fn read_csv_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let fmt = |msg: String| Error::format(path, msg);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let idx = rdr
        .headers()
        .map_err(|e| fmt(e.to_string()))?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| fmt(format!("no column `{column}`")))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let raw = rec.get(idx).unwrap_or_default();
        out.push(
            raw.parse()
                .map_err(|_| fmt(format!("row {}: `{raw}` is not a number", i + 2)))?,
        );
    }
    Ok(out)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let w = create(path)?;
    let mut wtr = csv::Writer::from_writer(w);
    let to_err = |e: csv::Error| Error::format(path, e);
    wtr.write_record(header).map_err(to_err)?;
    for r in rows {
        wtr.write_record(r).map_err(to_err)?;
    }
    let w = wtr.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    finish(w, path)
}
