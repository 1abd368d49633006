//! CSV ingestion and emission.
//!
//! Input files carry one row per unit with columns `y`, `z`, any number of
//! covariate columns, and optionally `subgroup` (integer labels) and `e`
//! (design probabilities). Every cell must parse as a number; failures name
//! the row and column.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::adasplit::IterationTrace;
use crate::data::{validate_dataset, Dataset, RawRecords, SubgroupPartition};
use crate::error::{Error, Result};

/// A parsed input file.
#[derive(Debug, Clone)]
pub struct CsvInput {
    pub dataset: Dataset,
    /// Raw subgroup labels, when the file has a `subgroup` column.
    pub subgroup_labels: Option<Vec<i64>>,
}

impl CsvInput {
    /// Partition from the `subgroup` column, with labels relabelled to
    /// `0..K` in ascending order.
    pub fn partition(&self) -> Option<Result<SubgroupPartition>> {
        self.subgroup_labels.as_ref().map(|labels| {
            let mut map = BTreeMap::new();
            for &l in labels {
                map.insert(l, 0);
            }
            for (k, v) in map.values_mut().enumerate() {
                *v = k;
            }
            let dense: Vec<usize> = labels.iter().map(|l| map[l]).collect();
            SubgroupPartition::from_labels(&dense)
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Column roles for [`read_csv_with`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    /// Name of the integer subgroup-label column.
    pub subgroup_column: String,
    /// Fail when the subgroup column is absent.
    pub require_subgroup: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            subgroup_column: "subgroup".into(),
            require_subgroup: false,
        }
    }
}

/// Reads a dataset from any reader, with an optional `subgroup` column.
pub fn read_csv<R: Read>(reader: R) -> Result<CsvInput> {
    read_csv_with(reader, &CsvOptions::default())
}

/// Reads a dataset from any reader.
pub fn read_csv_with<R: Read>(reader: R, options: &CsvOptions) -> Result<CsvInput> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Csv(format!("missing required column `{name}`"));
    let y_col = find("y").ok_or_else(|| missing("y"))?;
    let z_col = find("z").ok_or_else(|| missing("z"))?;
    let s_name = options.subgroup_column.as_str();
    let s_col = find(s_name);
    if options.require_subgroup && s_col.is_none() {
        return Err(missing(s_name));
    }
    let e_col = find("e");
    let x_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != y_col && c != z_col && Some(c) != s_col && Some(c) != e_col)
        .collect();
    if x_cols.is_empty() {
        return Err(Error::NoCovariates);
    }

    let mut raw = RawRecords {
        covariate_names: x_cols.iter().map(|&c| headers[c].clone()).collect(),
        covariates: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        e: e_col.map(|_| Vec::new()),
    };
    let mut labels = s_col.map(|_| Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(csv_err)?;
        if record.len() != headers.len() {
            return Err(Error::Csv(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let num = |c: usize| -> Result<f64> {
            record[c].parse::<f64>().map_err(|_| {
                Error::Csv(format!(
                    "row {row}, column `{}`: cannot parse `{}` as a number",
                    headers[c], &record[c]
                ))
            })
        };
        raw.covariates
            .push(x_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?);
        raw.y.push(num(y_col)?);
        raw.z.push(num(z_col)?);
        if let (Some(c), Some(e)) = (e_col, raw.e.as_mut()) {
            e.push(num(c)?);
        }
        if let (Some(c), Some(l)) = (s_col, labels.as_mut()) {
            let v = record[c].parse::<i64>().map_err(|_| {
                Error::Csv(format!(
                    "row {row}, column `{s_name}`: cannot parse `{}` as an integer",
                    &record[c]
                ))
            })?;
            l.push(v);
        }
    }
    let dataset = validate_dataset(raw).map_err(|e| match e {
        Error::NonFinite { row, column } => Error::NonFinite {
            row: row + 1,
            column,
        },
        Error::NonBinaryAssignment { row, value } => Error::NonBinaryAssignment {
            row: row + 1,
            value,
        },
        Error::InvalidDesignProbability { row, value } => Error::InvalidDesignProbability {
            row: row + 1,
            value,
        },
        other => other,
    })?;
    Ok(CsvInput {
        dataset,
        subgroup_labels: labels,
    })
}

/// Reads a dataset from a file path.
pub fn read_csv_path(path: &Path, options: &CsvOptions) -> Result<CsvInput> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Csv(format!("cannot open {}: {e}", path.display())))?;
    read_csv_with(std::io::BufReader::new(file), options)
}

/// Writes a dataset, with an optional `subgroup` column.
pub fn write_csv<W: Write>(
    writer: W,
    dataset: &Dataset,
    partition: Option<&SubgroupPartition>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = dataset.covariate_names().to_vec();
    header.extend(["y".to_string(), "z".to_string()]);
    let half = dataset.is_half_design();
    if !half {
        header.push("e".into());
    }
    if partition.is_some() {
        header.push("subgroup".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    let raw = dataset.to_raw();
    for i in 0..dataset.n() {
        let mut rec: Vec<String> = dataset.x().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.y()[i].to_string());
        rec.push(raw.z[i].to_string());
        if !half {
            rec.push(dataset.design_probs()[i].to_string());
        }
        if let Some(p) = partition {
            rec.push(p.group_of(i).to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// Writes the per-iteration trace as `t,selected,subgroup,criterion,loss,pi_1..pi_K`.
pub fn write_trace_csv<W: Write>(writer: W, trace: &[IterationTrace], k: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["t", "selected", "subgroup", "criterion", "loss"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=k).map(|g| format!("pi_{g}")));
    w.write_record(&header).map_err(csv_err)?;
    for step in trace {
        let mut rec = vec![
            step.t.to_string(),
            step.selected.to_string(),
            step.subgroup.to_string(),
            step.criterion.to_string(),
            step.loss.map_or(String::new(), |l| l.to_string()),
        ];
        rec.extend(step.proportions.iter().map(|p| p.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_well_formed_input() {
        let text = "x1,x2,y,z,subgroup\n0.1,1,2.5,1,7\n0.2,0,1.5,0,3\n0.3,1,0.5,1,7\n";
        let input = read_csv(text.as_bytes()).unwrap();
        assert_eq!(input.dataset.n(), 3);
        assert_eq!(input.dataset.d(), 2);
        let p = input.partition().unwrap().unwrap();
        assert_eq!(p.k(), 2);
        assert_eq!(p.group(0), &[1]);
        assert_eq!(p.group(1), &[0, 2]);
    }

    #[test]
    fn missing_z_names_the_column() {
        let err = read_csv("x1,y\n1,2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("`z`"), "{err}");
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let err = read_csv("x1,y,z\n1,2,1\n1,abc,0\n".as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("`y`"), "{msg}");
    }

    #[test]
    fn non_binary_reports_file_row() {
        let err = read_csv("x1,y,z\n1,2,1\n1,2,2\n".as_bytes()).unwrap_err();
        assert_eq!(err, Error::NonBinaryAssignment { row: 2, value: 2.0 });
    }

    #[test]
    fn empty_file_is_rejected() {
        assert_eq!(read_csv("x1,y,z\n".as_bytes()).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn named_subgroup_column() {
        let text = "arm_site,x1,y,z\n2,0.1,1.0,1\n1,0.2,2.0,0\n";
        let options = CsvOptions {
            subgroup_column: "arm_site".into(),
            require_subgroup: true,
        };
        let input = read_csv_with(text.as_bytes(), &options).unwrap();
        assert_eq!(input.dataset.covariate_names(), &["x1".to_string()]);
        assert_eq!(input.subgroup_labels, Some(vec![2, 1]));
        let err = read_csv_with("x1,y,z\n1,2,1\n".as_bytes(), &options).unwrap_err();
        assert!(err.to_string().contains("`arm_site`"), "{err}");
    }
}
