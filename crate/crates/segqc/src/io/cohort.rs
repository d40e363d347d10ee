//! Cohort tables: one row per subject with demographics and one
//! normalized volume column per structure (`vol_<id>`). Optional
//! `weight_<id>` columns carry reliability weights back out of the
//! group analysis.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub subject_id: String,
    pub age: f64,
    /// 0 or 1.
    pub sex: u8,
    /// 0 control, 1 case.
    pub diagnosis: u8,
    pub site: String,
    /// Aligned with `CohortTable::structures`.
    pub volumes: Vec<f64>,
    /// Aligned with `CohortTable::structures`; `None` where absent.
    pub weights: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortTable {
    /// Ascending structure ids parsed from the `vol_<id>` columns.
    pub structures: Vec<u16>,
    pub rows: Vec<CohortRow>,
}

impl CohortTable {
    pub fn structure_index(&self, structure: u16) -> Option<usize> {
        self.structures.iter().position(|&s| s == structure)
    }

    pub fn volume(&self, row: usize, structure: u16) -> Option<f64> {
        let i = self.structure_index(structure)?;
        Some(self.rows[row].volumes[i])
    }

    /// Distinct sites in sorted order.
    pub fn sites(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.site.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }
}

pub fn read_cohort_csv(text: &str) -> Result<CohortTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::DegenerateInput(format!("cannot read header row: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let idx_subject = col("subject_id")?;
    let idx_age = col("age")?;
    let idx_sex = col("sex")?;
    let idx_diag = col("diagnosis")?;
    let idx_site = col("site")?;

    // vol_<id> columns define the structure set; malformed ids are
    // flagged on the header row (row 0).
    let mut vol_cols: Vec<(u16, usize)> = Vec::new();
    let mut weight_cols: Vec<(u16, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(suffix) = h.strip_prefix("vol_") {
            let id = suffix.parse::<u16>().map_err(|_| Error::UnparseableField {
                row: 0,
                column: h.clone(),
                value: suffix.to_string(),
            })?;
            vol_cols.push((id, i));
        } else if let Some(suffix) = h.strip_prefix("weight_") {
            let id = suffix.parse::<u16>().map_err(|_| Error::UnparseableField {
                row: 0,
                column: h.clone(),
                value: suffix.to_string(),
            })?;
            weight_cols.push((id, i));
        }
    }
    if vol_cols.is_empty() {
        return Err(Error::MissingColumn("vol_<structure>".to_string()));
    }
    vol_cols.sort_by_key(|&(id, _)| id);
    if vol_cols.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::DegenerateInput(
            "duplicate vol_<structure> column".to_string(),
        ));
    }
    let structures: Vec<u16> = vol_cols.iter().map(|&(id, _)| id).collect();
    // weight_<id> must refer to a known structure.
    for &(id, _) in &weight_cols {
        if !structures.contains(&id) {
            return Err(Error::MissingColumn(format!("vol_{id}")));
        }
    }

    let mut rows = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (line, record) in reader.records().enumerate() {
        let row_no = line + 1;
        let record =
            record.map_err(|e| Error::DegenerateInput(format!("row {row_no}: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();

        let subject_id = field(idx_subject).to_string();
        if subject_id.is_empty() {
            return Err(Error::UnparseableField {
                row: row_no,
                column: "subject_id".to_string(),
                value: String::new(),
            });
        }
        if !seen_ids.insert(subject_id.clone()) {
            return Err(Error::DegenerateInput(format!(
                "duplicate subject_id {subject_id:?}"
            )));
        }

        let parse_f64 = |column: &str, value: &str| -> Result<f64> {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::UnparseableField {
                    row: row_no,
                    column: column.to_string(),
                    value: value.to_string(),
                })
        };
        let parse_binary = |column: &str, value: &str| -> Result<u8> {
            match value {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::UnparseableField {
                    row: row_no,
                    column: column.to_string(),
                    value: other.to_string(),
                }),
            }
        };

        let age = parse_f64("age", field(idx_age))?;
        let sex = parse_binary("sex", field(idx_sex))?;
        let diagnosis = parse_binary("diagnosis", field(idx_diag))?;
        let site = field(idx_site).to_string();
        if site.is_empty() {
            return Err(Error::UnparseableField {
                row: row_no,
                column: "site".to_string(),
                value: String::new(),
            });
        }

        let mut volumes = Vec::with_capacity(vol_cols.len());
        for &(id, i) in &vol_cols {
            let column = format!("vol_{id}");
            let v = parse_f64(&column, field(i))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::UnparseableField {
                    row: row_no,
                    column,
                    value: field(i).to_string(),
                });
            }
            volumes.push(v);
        }

        let mut weights = vec![None; structures.len()];
        for &(id, i) in &weight_cols {
            let raw = field(i);
            if raw.is_empty() {
                continue;
            }
            let column = format!("weight_{id}");
            let w = parse_f64(&column, raw)?;
            if w < 0.0 {
                return Err(Error::UnparseableField {
                    row: row_no,
                    column,
                    value: raw.to_string(),
                });
            }
            let slot = structures.iter().position(|&s| s == id).unwrap();
            weights[slot] = Some(w);
        }

        rows.push(CohortRow {
            subject_id,
            age,
            sex,
            diagnosis,
            site,
            volumes,
            weights,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(CohortTable { structures, rows })
}

pub fn write_cohort_csv(table: &CohortTable) -> String {
    let with_weights = table
        .rows
        .iter()
        .any(|r| r.weights.iter().any(Option::is_some));
    let mut out = String::from("subject_id,age,sex,diagnosis,site");
    for s in &table.structures {
        out.push_str(&format!(",vol_{s}"));
    }
    if with_weights {
        for s in &table.structures {
            out.push_str(&format!(",weight_{s}"));
        }
    }
    out.push('\n');
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.subject_id, r.age, r.sex, r.diagnosis, r.site
        ));
        for v in &r.volumes {
            out.push_str(&format!(",{v}"));
        }
        if with_weights {
            for w in &r.weights {
                match w {
                    Some(w) => out.push_str(&format!(",{w}")),
                    None => out.push(','),
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_cohort_csv_file(path: impl AsRef<std::path::Path>) -> Result<CohortTable> {
    read_cohort_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "\
subject_id,age,sex,diagnosis,site,vol_1,vol_2
s1,71.5,0,1,siteA,0.011,0.002
s2,64.0,1,0,siteB,0.012,0.0025
";

    #[test]
    fn parses_basic_table() {
        let t = read_cohort_csv(BASIC).unwrap();
        assert_eq!(t.structures, vec![1, 2]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].subject_id, "s1");
        assert_eq!(t.rows[0].age, 71.5);
        assert_eq!(t.rows[0].sex, 0);
        assert_eq!(t.rows[0].diagnosis, 1);
        assert_eq!(t.rows[0].site, "siteA");
        assert_eq!(t.volume(0, 2), Some(0.002));
        assert_eq!(t.volume(1, 1), Some(0.012));
        assert_eq!(t.volume(0, 9), None);
        assert_eq!(t.sites(), vec!["siteA".to_string(), "siteB".to_string()]);
    }

    #[test]
    fn vol_columns_sort_by_id() {
        let text = "\
subject_id,age,sex,diagnosis,site,vol_10,vol_2
s1,70,0,0,a,0.01,0.02
";
        let t = read_cohort_csv(text).unwrap();
        assert_eq!(t.structures, vec![2, 10]);
        assert_eq!(t.rows[0].volumes, vec![0.02, 0.01]);
    }

    #[test]
    fn missing_required_column() {
        let text = "subject_id,age,sex,site,vol_1\ns1,70,0,a,0.01\n";
        assert!(matches!(
            read_cohort_csv(text),
            Err(Error::MissingColumn(c)) if c == "diagnosis"
        ));
        let no_vol = "subject_id,age,sex,diagnosis,site\ns1,70,0,0,a\n";
        assert!(matches!(
            read_cohort_csv(no_vol),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn sex_must_be_binary() {
        let text = "subject_id,age,sex,diagnosis,site,vol_1\ns1,70,2,0,a,0.01\n";
        match read_cohort_csv(text).unwrap_err() {
            Error::UnparseableField { row, column, value } => {
                assert_eq!(row, 1);
                assert_eq!(column, "sex");
                assert_eq!(value, "2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn volume_must_be_normalized() {
        let text = "subject_id,age,sex,diagnosis,site,vol_1\ns1,70,0,0,a,1.5\n";
        assert!(matches!(
            read_cohort_csv(text),
            Err(Error::UnparseableField { column, .. }) if column == "vol_1"
        ));
    }

    #[test]
    fn age_must_parse() {
        let text = "subject_id,age,sex,diagnosis,site,vol_1\ns1,old,0,0,a,0.01\n";
        assert!(matches!(
            read_cohort_csv(text),
            Err(Error::UnparseableField { column, .. }) if column == "age"
        ));
    }

    #[test]
    fn malformed_vol_suffix_is_flagged_on_header() {
        let text = "subject_id,age,sex,diagnosis,site,vol_abc\ns1,70,0,0,a,0.01\n";
        assert!(matches!(
            read_cohort_csv(text),
            Err(Error::UnparseableField { row: 0, .. })
        ));
    }

    #[test]
    fn duplicate_subjects_rejected() {
        let text = "subject_id,age,sex,diagnosis,site,vol_1\ns1,70,0,0,a,0.01\ns1,71,0,0,a,0.01\n";
        assert!(matches!(
            read_cohort_csv(text),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn empty_table_is_an_error() {
        let text = "subject_id,age,sex,diagnosis,site,vol_1\n";
        assert!(matches!(read_cohort_csv(text), Err(Error::EmptyInput)));
    }

    #[test]
    fn weights_parse_and_round_trip() {
        let text = "\
subject_id,age,sex,diagnosis,site,vol_1,weight_1
s1,70,0,0,a,0.01,0.93
s2,71,1,1,b,0.02,
";
        let t = read_cohort_csv(text).unwrap();
        assert_eq!(t.rows[0].weights, vec![Some(0.93)]);
        assert_eq!(t.rows[1].weights, vec![None]);
        let written = write_cohort_csv(&t);
        let back = read_cohort_csv(&written).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn weight_without_matching_volume() {
        let text = "subject_id,age,sex,diagnosis,site,vol_1,weight_3\ns1,70,0,0,a,0.01,1\n";
        assert!(matches!(
            read_cohort_csv(text),
            Err(Error::MissingColumn(c)) if c == "vol_3"
        ));
    }

    #[test]
    fn round_trip_without_weights() {
        let t = read_cohort_csv(BASIC).unwrap();
        let written = write_cohort_csv(&t);
        assert_eq!(read_cohort_csv(&written).unwrap(), t);
        assert!(!written.contains("weight_"));
        // Writing the same table twice is byte-identical.
        assert_eq!(written, write_cohort_csv(&t));
    }
}
