use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which part of a chronological split a block of rows belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Full,
    Train,
    Val,
    Test,
}

/// Row-range fingerprint: which rows of which dataset a block was cut from.
///
/// Fits that must only see training data (scalers, correlation matrices)
/// carry the span they were computed on so guards can reject leakage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowSpan {
    pub dataset: u64,
    pub start: usize,
    pub end: usize,
    pub role: SplitRole,
}

impl RowSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &RowSpan) -> bool {
        self.dataset == other.dataset && other.start >= self.start && other.end <= self.end
    }
}

/// Hourly multivariate link measurements, T rows by N series.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMts {
    timestamps: Vec<DateTime<Utc>>,
    link_ids: Vec<String>,
    values: Array2<f64>,
    pub metadata: BTreeMap<String, String>,
    span: RowSpan,
}

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

impl NetworkMts {
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        link_ids: Vec<String>,
        values: Array2<f64>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let (t, n) = values.dim();
        if timestamps.len() != t {
            return Err(Error::shape("timestamps", t, timestamps.len()));
        }
        if link_ids.len() != n {
            return Err(Error::shape("link_ids", n, link_ids.len()));
        }
        if t == 0 || n == 0 {
            return Err(Error::Argument("dataset must have at least one row and one series".into()));
        }
        check_hourly(&timestamps)?;
        let mut seen = std::collections::HashSet::new();
        for id in &link_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Integrity(format!("duplicate link id {id:?}")));
            }
        }
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Data {
                    row: row + 1,
                    col: col + 1,
                    message: format!("value {v} is not a finite non-negative number"),
                });
            }
        }
        let dataset = fingerprint(&timestamps, &link_ids, values.view());
        let mut metadata = metadata;
        metadata.entry("unit".into()).or_insert_with(|| "Mbit/s".into());
        Ok(Self {
            timestamps,
            link_ids,
            values,
            metadata,
            span: RowSpan {
                dataset,
                start: 0,
                end: t,
                role: SplitRole::Full,
            },
        })
    }

    /// Hourly timestamps starting at `start`.
    pub fn hourly_from(
        start: DateTime<Utc>,
        link_ids: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let timestamps = (0..values.nrows())
            .map(|i| start + Duration::hours(i as i64))
            .collect();
        Self::new(timestamps, link_ids, values, BTreeMap::new())
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn link_ids(&self) -> &[String] {
        &self.link_ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn span(&self) -> RowSpan {
        self.span
    }

    pub fn series(&self, n: usize) -> Vec<f64> {
        self.values.column(n).to_vec()
    }

    /// Rows `range` (relative to this block), keeping the dataset fingerprint and role.
    pub fn slice_rows(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_rows() {
            return Err(Error::Argument(format!(
                "row range {range:?} outside 0..{}",
                self.n_rows()
            )));
        }
        Ok(Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            link_ids: self.link_ids.clone(),
            values: self.values.slice(s![range.clone(), ..]).to_owned(),
            metadata: self.metadata.clone(),
            span: RowSpan {
                dataset: self.span.dataset,
                start: self.span.start + range.start,
                end: self.span.start + range.end,
                role: self.span.role,
            },
        })
    }

    /// Subset of series (columns), same rows and provenance.
    pub fn select_series(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Argument("empty series selection".into()));
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_series()) {
            return Err(Error::Argument(format!("series index {bad} out of range")));
        }
        Ok(Self {
            timestamps: self.timestamps.clone(),
            link_ids: columns.iter().map(|&c| self.link_ids[c].clone()).collect(),
            values: self.values.select(Axis(1), columns),
            metadata: self.metadata.clone(),
            span: self.span,
        })
    }

    /// Same rows and provenance with replaced values (e.g. after scaling).
    /// Finiteness is still enforced but negativity is allowed.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::shape("values", self.values.dim(), values.dim()));
        }
        Ok(Self {
            timestamps: self.timestamps.clone(),
            link_ids: self.link_ids.clone(),
            values,
            metadata: self.metadata.clone(),
            span: self.span,
        })
    }

    pub(crate) fn with_role(mut self, role: SplitRole) -> Self {
        self.span.role = role;
        self
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || header.get(0).map(str::trim) != Some("timestamp") {
            return Err(Error::Parse {
                row: 0,
                message: "header must be `timestamp,<link_id>,...`".into(),
            });
        }
        let link_ids: Vec<String> = header.iter().skip(1).map(|h| h.trim().to_string()).collect();
        let n = link_ids.len();

        let mut timestamps = Vec::new();
        let mut flat = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            if record.len() != n + 1 {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {} fields, found {}", n + 1, record.len()),
                });
            }
            timestamps.push(parse_timestamp(record[0].trim()).ok_or_else(|| Error::Parse {
                row,
                message: format!("malformed timestamp {:?}", &record[0]),
            })?);
            for (col, field) in record.iter().skip(1).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Data {
                    row,
                    col: col + 1,
                    message: format!("unparseable value {field:?}"),
                })?;
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Data {
                        row,
                        col: col + 1,
                        message: format!("value {field:?} is not a finite non-negative number"),
                    });
                }
                flat.push(v);
            }
        }
        let t = timestamps.len();
        if t == 0 {
            return Err(Error::Parse {
                row: 1,
                message: "no data rows".into(),
            });
        }
        let values = Array2::from_shape_vec((t, n), flat).expect("row lengths checked");
        Self::new(timestamps, link_ids, values, BTreeMap::new())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "timestamp")?;
        for id in &self.link_ids {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
        for (ts, row) in self.timestamps.iter().zip(self.values.rows()) {
            write!(w, "{}", ts.format(TIMESTAMP_FORMAT))?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

fn check_hourly(timestamps: &[DateTime<Utc>]) -> Result<()> {
    for (i, pair) in timestamps.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if step <= Duration::zero() {
            return Err(Error::Integrity(format!(
                "timestamps not strictly increasing at data row {} ({} then {})",
                i + 2,
                pair[0].format(TIMESTAMP_FORMAT),
                pair[1].format(TIMESTAMP_FORMAT)
            )));
        }
        if step != Duration::hours(1) {
            return Err(Error::Integrity(format!(
                "gap of {} minutes at data row {}; expected hourly sampling",
                step.num_minutes(),
                i + 2
            )));
        }
    }
    Ok(())
}

fn fingerprint(timestamps: &[DateTime<Utc>], link_ids: &[String], values: ArrayView2<f64>) -> u64 {
    let mut h = Sha256::new();
    for id in link_ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    if let (Some(first), Some(last)) = (timestamps.first(), timestamps.last()) {
        h.update(first.timestamp().to_le_bytes());
        h.update(last.timestamp().to_le_bytes());
    }
    for v in values.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "timestamp,a->b,b->a\n\
        2024-01-01T00:00:00Z,1.5,2\n\
        2024-01-01T01:00:00Z,0,3\n\
        2024-01-01T02:00:00Z,4,5.25\n";

    #[test]
    fn loads_small_csv() {
        let mts = NetworkMts::read_csv(GOOD.as_bytes()).unwrap();
        assert_eq!(mts.n_rows(), 3);
        assert_eq!(mts.n_series(), 2);
        assert_eq!(mts.link_ids(), &["a->b".to_string(), "b->a".to_string()]);
        assert_eq!(mts.values()[[2, 1]], 5.25);
        assert_eq!(mts.metadata["unit"], "Mbit/s");
    }

    #[test]
    fn duplicated_timestamp_is_integrity_error() {
        let csv = "timestamp,x\n2024-01-01T00:00:00Z,1\n2024-01-01T00:00:00Z,2\n";
        assert!(matches!(
            NetworkMts::read_csv(csv.as_bytes()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn gap_is_integrity_error() {
        let csv = "timestamp,x\n2024-01-01T00:00:00Z,1\n2024-01-01T02:00:00Z,2\n";
        assert!(matches!(
            NetworkMts::read_csv(csv.as_bytes()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        let mut csv = String::from("timestamp,x,y\n");
        for h in 0..6 {
            let y = if h == 4 { "NaN".to_string() } else { "1".to_string() };
            csv.push_str(&format!("2024-01-01T{h:02}:00:00Z,1,{y}\n"));
        }
        match NetworkMts::read_csv(csv.as_bytes()) {
            Err(Error::Data { row, col, .. }) => assert_eq!((row, col), (5, 2)),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn negative_value_rejected() {
        let csv = "timestamp,x\n2024-01-01T00:00:00Z,-1\n";
        assert!(matches!(
            NetworkMts::read_csv(csv.as_bytes()),
            Err(Error::Data { row: 1, col: 1, .. })
        ));
    }

    #[test]
    fn malformed_timestamp_names_row() {
        let csv = "timestamp,x\n2024-01-01T00:00:00Z,1\nyesterday,2\n";
        match NetworkMts::read_csv(csv.as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mts = NetworkMts::read_csv(GOOD.as_bytes()).unwrap();
        let mut buf = Vec::new();
        mts.write_csv_to(&mut buf).unwrap();
        let back = NetworkMts::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, mts);
    }

    #[test]
    fn slicing_tracks_span() {
        let mts = NetworkMts::read_csv(GOOD.as_bytes()).unwrap();
        let tail = mts.slice_rows(1..3).unwrap();
        assert_eq!(tail.span().start, 1);
        assert_eq!(tail.span().end, 3);
        assert_eq!(tail.span().dataset, mts.span().dataset);
        assert!(mts.span().contains(&tail.span()));
    }
}
