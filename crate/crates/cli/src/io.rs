//! Unit-level CSV files: one row per unit with the columns
//! `cluster_id, n, w1, r, x1, y, x2_1..x2_p, z2_1..z2_q`.
//!
//! Cluster-level fields repeat on every row of the cluster and must agree.
//! `x1` is empty for clusters whose true exposure is unknown.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use misclass_core::data::{Cluster, Dataset, Unit};

const FIXED: [&str; 6] = ["cluster_id", "n", "w1", "r", "x1", "y"];

#[derive(Debug, thiserror::Error)]
pub enum DataFileError {
    #[error("{path}: {source}")]
    Open { path: String, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("header must start with {expected}, then x2_* and z2_* columns; found {found}")]
    Header { expected: String, found: String },

    #[error("file has no data rows")]
    Empty,

    #[error("{}", .0.join("\n"))]
    Rows(Vec<String>),
}

struct Pending {
    first_line: u64,
    n: u32,
    w1: u8,
    r: u8,
    x1: Option<u8>,
    z2: Vec<f64>,
    units: Vec<Unit>,
}

fn parse_bit(field: &str, name: &str) -> Result<u8, String> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format!("{name} must be 0 or 1, got {other:?}")),
    }
}

fn parse_real(field: &str, name: &str) -> Result<f64, String> {
    let v: f64 = field.trim().parse().map_err(|_| format!("{name} is not a number: {field:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name} must be finite"))
    }
}

/// Reads a dataset and checks every invariant. All problems are reported
/// together, each with its line number or cluster id.
pub fn read_dataset(reader: impl Read) -> Result<Dataset, DataFileError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let header_ok = header.len() >= FIXED.len() && header.iter().zip(FIXED).all(|(h, f)| h == f) && {
        let rest = &header[FIXED.len()..];
        let x2 = rest.iter().take_while(|h| h.starts_with("x2_")).count();
        rest[x2..].iter().all(|h| h.starts_with("z2_"))
    };
    if !header_ok {
        return Err(DataFileError::Header { expected: FIXED.join(","), found: header.join(",") });
    }
    let x2_names: Vec<String> = header[FIXED.len()..].iter().filter(|h| h.starts_with("x2_")).cloned().collect();
    let z2_names: Vec<String> = header[FIXED.len() + x2_names.len()..].to_vec();

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    let mut problems = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            problems.push(format!("line {line}: expected {} fields, found {}", header.len(), record.len()));
            continue;
        }
        let parsed = (|| -> Result<(String, Pending), String> {
            let id = record[0].trim().to_string();
            if id.is_empty() {
                return Err("cluster_id is empty".into());
            }
            let n: u32 = record[1].trim().parse().map_err(|_| format!("n is not a positive integer: {:?}", &record[1]))?;
            let w1 = parse_bit(&record[2], "w1")?;
            let r = parse_bit(&record[3], "r")?;
            let x1 = match record[4].trim() {
                "" => None,
                s => Some(parse_bit(s, "x1")?),
            };
            if r == 1 && x1.is_none() {
                return Err("r = 1 but x1 is empty".into());
            }
            let y = parse_bit(&record[5], "y")?;
            let mut col = FIXED.len();
            let mut x2 = Vec::with_capacity(x2_names.len());
            for name in &x2_names {
                x2.push(parse_real(&record[col], name)?);
                col += 1;
            }
            let mut z2 = Vec::with_capacity(z2_names.len());
            for name in &z2_names {
                z2.push(parse_real(&record[col], name)?);
                col += 1;
            }
            Ok((id, Pending { first_line: line, n, w1, r, x1, z2, units: vec![Unit::new(y == 1, x2)] }))
        })();
        match parsed {
            Err(e) => problems.push(format!("line {line}: {e}")),
            Ok((id, row)) => match pending.get_mut(&id) {
                None => {
                    order.push(id.clone());
                    pending.insert(id, row);
                }
                Some(c) => {
                    if (c.n, c.w1, c.r, c.x1) != (row.n, row.w1, row.r, row.x1) || c.z2 != row.z2 {
                        problems.push(format!("line {line}: cluster {id} fields n, w1, r, x1 or z2 differ from line {}", c.first_line));
                    }
                    c.units.extend(row.units);
                }
            },
        }
    }
    if order.is_empty() && problems.is_empty() {
        return Err(DataFileError::Empty);
    }
    let clusters: Vec<Cluster> = order
        .into_iter()
        .map(|id| {
            let p = pending.remove(&id).expect("every ordered id is pending");
            Cluster::from_raw(id, p.n, p.x1, p.w1, p.r, p.z2, p.units)
        })
        .collect();
    let data = Dataset::new(clusters, x2_names, z2_names);
    problems.extend(data.validate().into_iter().map(|v| v.to_string()));
    if problems.is_empty() {
        Ok(data)
    } else {
        Err(DataFileError::Rows(problems))
    }
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset, DataFileError> {
    let file = File::open(path).map_err(|source| DataFileError::Open { path: path.display().to_string(), source })?;
    read_dataset(file)
}

/// Writes `data` in the unit-level schema. Stored true exposures are written
/// for every cluster that has one; call [`Dataset::redacted`] first to blank
/// them outside the validation sample.
pub fn write_dataset(data: &Dataset, writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED.to_vec();
    header.extend(data.x2_names.iter().map(String::as_str));
    header.extend(data.z2_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for c in &data.clusters {
        let x1 = c.stored_exposure().map_or(String::new(), |v| v.to_string());
        for u in &c.units {
            let mut row = vec![c.id.clone(), c.n.to_string(), c.w1.to_string(), c.r.to_string(), x1.clone(), u.y.to_string()];
            row.extend(u.x2.iter().map(f64::to_string));
            row.extend(c.z2.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(data: &Dataset, path: &Path) -> anyhow::Result<()> {
    let file = File::create(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    write_dataset(data, std::io::BufWriter::new(file))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset, DataFileError> {
        read_dataset(text.as_bytes())
    }

    #[test]
    fn reads_a_well_formed_file() {
        let d = parse("cluster_id,n,w1,r,x1,y,x2_1\na,2,1,1,1,0,0.5\na,2,1,1,1,1,-1\nb,1,0,0,,0,2\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.x2_names, ["x2_1"]);
        assert_eq!(d.clusters[0].units.len(), 2);
        assert_eq!(d.clusters[1].validated_exposure(), None);
        assert_eq!(d.clusters[1].stored_exposure(), None);
    }

    #[test]
    fn validated_rows_without_x1_are_named_by_line() {
        let err = parse("cluster_id,n,w1,r,x1,y\na,1,1,1,,0\nb,1,0,0,,0\nc,1,0,1,,1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("line 4"), "{msg}");
        assert!(!msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn size_mismatch_and_inconsistent_rows_are_reported() {
        let err = parse("cluster_id,n,w1,r,x1,y\na,2,1,0,,0\na,2,1,0,,1\na,2,0,0,,1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("cluster a"), "{msg}");
    }

    #[test]
    fn bad_header_and_empty_file() {
        assert!(matches!(parse("id,n,w1,r,x1,y\n"), Err(DataFileError::Header { .. })));
        assert!(matches!(parse("cluster_id,n,w1,r,x1,y,z2_1,x2_1\n"), Err(DataFileError::Header { .. })));
        assert!(matches!(parse("cluster_id,n,w1,r,x1,y\n"), Err(DataFileError::Empty)));
        assert!(parse("").is_err());
    }

    #[test]
    fn non_binary_and_non_finite_values_are_rejected() {
        let msg = parse("cluster_id,n,w1,r,x1,y,x2_1\na,1,2,0,,0,inf\n").unwrap_err().to_string();
        assert!(msg.contains("w1 must be 0 or 1"), "{msg}");
    }
}
