//! Feature datasets, label distributions and round bookkeeping.
//!
//! Two on-disk layouts are supported for [`FeatureDataset`]:
//!
//! * CSV, for small fixtures. An optional first line
//!   `# lamda classes=<C> domain=<source|target>` declares the class count,
//!   followed by a header `id,f0,..,f{d-1}[,label]` and one row per sample.
//! * A little-endian binary layout for large pools:
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 8         | magic `LAMDAFT\0`                       |
//! | 8      | 4 (u32)   | format version (1)                      |
//! | 12     | 1         | domain (0 = source, 1 = target)         |
//! | 13     | 1         | has labels (0/1)                        |
//! | 14     | 2         | reserved, zero                          |
//! | 16     | 8 (u64)   | n                                       |
//! | 24     | 8 (u64)   | d_f                                     |
//! | 32     | 4 (u32)   | class count C                           |
//! | 36     | 8n        | ids (u64)                               |
//! | ...    | 4nd       | features, row-major f32                 |
//! | ...    | 4n        | labels (u32), only when has labels = 1  |

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"LAMDAFT\0";
pub const BINARY_VERSION: u32 = 1;
const BINARY_HEADER_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    fn code(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(Domain::Source),
            "target" => Some(Domain::Target),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// An `n x d_f` matrix of features with optional labels and stable ids.
///
/// Every value of this type satisfies: `n >= 1`, `d_f >= 1`, finite
/// features, labels (when present) below `num_classes`, and unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Array2<f32>,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    domain: Domain,
    ids: Vec<u64>,
}

impl FeatureDataset {
    pub fn new(
        features: Array2<f32>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        domain: Domain,
        ids: Vec<u64>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if d == 0 {
            return Err(Error::InvalidDataset("dataset has zero feature columns".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidDataset("class count must be at least 1".into()));
        }
        if ids.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} ids for {} rows",
                ids.len(),
                n
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    n
                )));
            }
            if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: num_classes,
                });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            domain,
            ids,
        })
    }

    /// Builds a dataset with ids `0..n`.
    pub fn with_sequential_ids(
        features: Array2<f32>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        domain: Domain,
    ) -> Result<Self> {
        let ids = (0..features.nrows() as u64).collect();
        Self::new(features, labels, num_classes, domain, ids)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    /// Features widened to `f64`.
    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Sub-dataset made of the given row positions, in that order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    len: self.len(),
                });
            }
        }
        let features = self.features.select(ndarray::Axis(0), rows);
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        let ids = rows.iter().map(|&r| self.ids[r]).collect();
        Self::new(features, labels, self.num_classes, self.domain, ids)
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }
}

/// Class frequencies `count(c) / n` of a labeled dataset.
pub fn empirical_label_distribution(ds: &FeatureDataset) -> Result<LabelDistribution> {
    let labels = ds.labels().ok_or(Error::Unlabeled)?;
    LabelDistribution::from_labels(labels, ds.num_classes())
}

/// A probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no classes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidDistribution("no classes".into()));
        }
        Ok(Self {
            probs: vec![1.0 / classes as f64; classes],
        })
    }

    /// Normalises nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDistribution("no labels".into()));
        }
        let mut counts = vec![0usize; classes];
        for &l in labels {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
            counts[l] += 1;
        }
        let n = labels.len() as f64;
        Self::new(counts.iter().map(|&c| c as f64 / n).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(d: LabelDistribution) -> Self {
        d.probs
    }
}

/// Budget bookkeeping carried from one sampling round to the next.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundState {
    pub round_index: usize,
    /// X_L: every target id that has consumed budget so far.
    pub labeled_ids: BTreeSet<u64>,
    pub budget_per_round: usize,
    pub total_budget_spent: usize,
    /// Answers received for ids in `labeled_ids`.
    pub oracle_labels: BTreeMap<u64, usize>,
    /// Ids in `labeled_ids` whose annotation has been requested but not yet
    /// answered (file-based annotation queue).
    #[serde(default)]
    pub pending: BTreeSet<u64>,
}

impl RoundState {
    pub fn initial(budget_per_round: usize) -> Self {
        Self {
            budget_per_round,
            ..Self::default()
        }
    }

    /// Answers previously pending annotations.
    pub fn resolve_pending(&mut self, answers: &BTreeMap<u64, usize>) {
        let resolved: Vec<u64> = self
            .pending
            .iter()
            .copied()
            .filter(|id| answers.contains_key(id))
            .collect();
        for id in resolved {
            self.pending.remove(&id);
            self.oracle_labels.insert(id, answers[&id]);
        }
    }
}

// ---------------------------------------------------------------------------
// Loading and saving
// ---------------------------------------------------------------------------

/// Loads a dataset, choosing the layout from the leading magic bytes.
///
/// CSV files must declare the class count in their `# lamda` directive line.
pub fn load_feature_dataset(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    load_feature_dataset_with(path, None)
}

/// Like [`load_feature_dataset`], with a class count used for CSV files that
/// carry no directive line. A class count declared in the file wins.
pub fn load_feature_dataset_with(
    path: impl AsRef<Path>,
    classes: Option<usize>,
) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(path, &bytes)
    } else {
        parse_csv(path, &bytes, classes)
    }
}

pub fn save_binary(ds: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_binary(ds)).map_err(|e| Error::io(path, e))
}

pub fn encode_binary(ds: &FeatureDataset) -> Vec<u8> {
    let (n, d) = ds.features.dim();
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + 8 * n + 4 * n * d + 4 * n);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.push(ds.domain.code());
    out.push(u8::from(ds.labels.is_some()));
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&(ds.num_classes as u32).to_le_bytes());
    for id in &ds.ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for v in ds.features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &ds.labels {
        for &l in labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    out
}

fn decode_binary(path: &Path, bytes: &[u8]) -> Result<FeatureDataset> {
    let bad = |reason: &str| Error::malformed(path, reason);
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(bad("truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != BINARY_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let domain = Domain::from_code(bytes[12]).ok_or_else(|| bad("bad domain tag"))?;
    let has_labels = match bytes[13] {
        0 => false,
        1 => true,
        _ => return Err(bad("bad label flag")),
    };
    let n = usize::try_from(u64_at(16)).map_err(|_| bad("row count overflows"))?;
    let d = usize::try_from(u64_at(24)).map_err(|_| bad("column count overflows"))?;
    let classes = u32_at(32) as usize;

    let feature_count = n.checked_mul(d).ok_or_else(|| bad("size overflows"))?;
    let expected = feature_count
        .checked_mul(4)
        .and_then(|f| f.checked_add(8 * n))
        .and_then(|f| f.checked_add(if has_labels { 4 * n } else { 0 }))
        .and_then(|f| f.checked_add(BINARY_HEADER_LEN))
        .ok_or_else(|| bad("size overflows"))?;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "expected {expected} bytes for {n}x{d}, found {}",
            bytes.len()
        )));
    }

    let mut offset = BINARY_HEADER_LEN;
    let ids: Vec<u64> = (0..n).map(|i| u64_at(offset + 8 * i)).collect();
    offset += 8 * n;
    let values: Vec<f32> = (0..feature_count)
        .map(|i| f32::from_le_bytes(bytes[offset + 4 * i..offset + 4 * i + 4].try_into().unwrap()))
        .collect();
    offset += 4 * feature_count;
    let labels = has_labels.then(|| (0..n).map(|i| u32_at(offset + 4 * i) as usize).collect());
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| bad(&e.to_string()))?;
    FeatureDataset::new(features, labels, classes, domain, ids)
}

pub fn save_csv(ds: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_csv(ds, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_csv<W: Write>(ds: &FeatureDataset, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "# lamda classes={} domain={}",
        ds.num_classes,
        ds.domain.as_str()
    )?;
    let mut header = vec!["id".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    if ds.labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, row) in ds.features.outer_iter().enumerate() {
        write!(w, "{}", ds.ids[i])?;
        for v in row {
            // `Display` for f32 prints the shortest string that parses back
            // to the same bits.
            write!(w, ",{v}")?;
        }
        if let Some(labels) = &ds.labels {
            write!(w, ",{}", labels[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

struct CsvDirective {
    classes: Option<usize>,
    domain: Option<Domain>,
}

fn parse_directive(path: &Path, line: &str) -> Result<CsvDirective> {
    let mut out = CsvDirective {
        classes: None,
        domain: None,
    };
    let rest = line.trim_start_matches('#').trim();
    let mut tokens = rest.split_whitespace();
    if tokens.next() != Some("lamda") {
        return Ok(out);
    }
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::malformed(path, format!("bad directive token `{token}`")))?;
        match key {
            "classes" => {
                out.classes = Some(
                    value
                        .parse()
                        .map_err(|_| Error::malformed(path, format!("bad class count `{value}`")))?,
                )
            }
            "domain" => {
                out.domain = Some(
                    Domain::parse(value)
                        .ok_or_else(|| Error::malformed(path, format!("bad domain `{value}`")))?,
                )
            }
            other => return Err(Error::malformed(path, format!("unknown directive key `{other}`"))),
        }
    }
    Ok(out)
}

fn parse_csv(path: &Path, bytes: &[u8], classes: Option<usize>) -> Result<FeatureDataset> {
    let mut directive = CsvDirective {
        classes: None,
        domain: None,
    };
    if let Some(first) = BufReader::new(bytes).lines().next() {
        let first = first.map_err(|e| Error::io(path, e))?;
        if first.starts_with('#') {
            directive = parse_directive(path, &first)?;
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::malformed(path, e.to_string()))?
        .clone();
    if headers.get(0) != Some("id") {
        return Err(Error::malformed(path, "first column must be `id`"));
    }
    let has_labels = headers.iter().next_back() == Some("label");
    let d = headers.len() - 1 - usize::from(has_labels);
    for (j, h) in headers.iter().skip(1).take(d).enumerate() {
        if h != format!("f{j}") {
            return Err(Error::malformed(path, format!("unexpected column `{h}`")));
        }
    }

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(path, e.to_string()))?;
        let line = row + 2;
        let field_err = |what: &str, v: &str| {
            Error::malformed(path, format!("row {line}: bad {what} `{v}`"))
        };
        let id = &record[0];
        ids.push(id.parse::<u64>().map_err(|_| field_err("id", id))?);
        for j in 0..d {
            let v = &record[1 + j];
            values.push(v.parse::<f32>().map_err(|_| field_err("feature", v))?);
        }
        if has_labels {
            let v = &record[1 + d];
            labels.push(v.parse::<usize>().map_err(|_| field_err("label", v))?);
        }
    }

    let classes = directive
        .classes
        .or(classes)
        .ok_or_else(|| Error::malformed(path, "class count not declared"))?;
    let n = ids.len();
    let features =
        Array2::from_shape_vec((n, d), values).map_err(|e| Error::malformed(path, e.to_string()))?;
    FeatureDataset::new(
        features,
        has_labels.then_some(labels),
        classes,
        directive.domain.unwrap_or(Domain::Target),
        ids,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_csv() {
        let f = write_tmp("# lamda classes=3 domain=source\nid,f0,f1,label\n0,0.5,1\n1,2,3,1\n");
        // ragged row
        assert!(load_feature_dataset(f.path()).is_err());

        let f = write_tmp(
            "# lamda classes=3 domain=source\nid,f0,f1,label\n10,0.5,1,0\n11,2,3,1\n12,-1,4.25,2\n",
        );
        let ds = load_feature_dataset(f.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.domain(), Domain::Source);
        assert_eq!(ds.ids(), &[10, 11, 12]);
        assert_eq!(ds.labels().unwrap(), &[0, 1, 2]);
        assert_eq!(ds.features()[[2, 1]], 4.25);
    }

    #[test]
    fn label_equal_to_class_count_is_rejected() {
        let f = write_tmp("# lamda classes=3\nid,f0,f1,label\n0,0,0,3\n");
        let err = load_feature_dataset(f.path()).unwrap_err();
        assert!(err.to_string().contains("label out of range"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let f = write_tmp("# lamda classes=2\nid,f0\n4,0\n4,1\n");
        assert!(matches!(
            load_feature_dataset(f.path()),
            Err(Error::DuplicateId(4))
        ));
    }

    #[test]
    fn csv_without_class_count_needs_override() {
        let f = write_tmp("id,f0,label\n0,1,0\n1,2,1\n");
        assert!(load_feature_dataset(f.path()).is_err());
        let ds = load_feature_dataset_with(f.path(), Some(4)).unwrap();
        assert_eq!(ds.num_classes(), 4);
    }

    #[test]
    fn constructor_rejects_degenerate_shapes() {
        let empty = Array2::<f32>::zeros((0, 2));
        assert!(FeatureDataset::with_sequential_ids(empty, None, 2, Domain::Target).is_err());
        let no_cols = Array2::<f32>::zeros((3, 0));
        assert!(FeatureDataset::with_sequential_ids(no_cols, None, 2, Domain::Target).is_err());
        let nan = array![[f32::NAN]];
        assert!(FeatureDataset::with_sequential_ids(nan, None, 2, Domain::Target).is_err());
    }

    #[test]
    fn binary_rejects_truncation_and_bad_magic() {
        let ds = FeatureDataset::with_sequential_ids(
            array![[1.0f32, 2.0], [3.0, 4.0]],
            Some(vec![0, 1]),
            2,
            Domain::Target,
        )
        .unwrap();
        let bytes = encode_binary(&ds);
        let p = Path::new("mem");
        assert_eq!(decode_binary(p, &bytes).unwrap(), ds);
        assert!(decode_binary(p, &bytes[..bytes.len() - 1]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(decode_binary(p, &wrong_version).is_err());
    }

    #[test]
    fn empirical_distribution_counts() {
        let ds = FeatureDataset::with_sequential_ids(
            Array2::zeros((4, 1)),
            Some(vec![0, 0, 1, 2]),
            3,
            Domain::Source,
        )
        .unwrap();
        assert_eq!(empirical_label_distribution(&ds).unwrap().probs(), &[0.5, 0.25, 0.25]);

        let ds = FeatureDataset::with_sequential_ids(
            Array2::zeros((5, 1)),
            Some(vec![0; 5]),
            2,
            Domain::Source,
        )
        .unwrap();
        assert_eq!(empirical_label_distribution(&ds).unwrap().probs(), &[1.0, 0.0]);

        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let ds = FeatureDataset::with_sequential_ids(
            Array2::zeros((400, 1)),
            Some(labels),
            4,
            Domain::Source,
        )
        .unwrap();
        assert_eq!(empirical_label_distribution(&ds).unwrap().probs(), &[0.25; 4]);

        let unlabeled = ds.without_labels();
        assert!(matches!(
            empirical_label_distribution(&unlabeled),
            Err(Error::Unlabeled)
        ));
    }

    #[test]
    fn distribution_validation() {
        assert!(LabelDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(LabelDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(LabelDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(LabelDistribution::new(vec![]).is_err());
        let parsed: std::result::Result<LabelDistribution, _> = serde_json::from_str("[0.2,0.2]");
        assert!(parsed.is_err());
    }

    #[test]
    fn pending_annotations_resolve() {
        let mut state = RoundState::initial(2);
        state.labeled_ids.extend([1, 2]);
        state.pending.extend([1, 2]);
        state.resolve_pending(&BTreeMap::from([(2, 5), (9, 1)]));
        assert_eq!(state.pending, BTreeSet::from([1]));
        assert_eq!(state.oracle_labels, BTreeMap::from([(2, 5)]));
    }
}
