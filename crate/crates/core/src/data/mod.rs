//! Categorical tables, their schemas, and the attribute role partition.
//!
//! A [`Dataset`] stores one column of category codes per attribute. Codes
//! index into the attribute's domain labels held by the [`Schema`], so a
//! dataset can always be written back out as the raw strings it came from.

mod binning;
mod config;
mod roles;

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binning::{discretize, BinRule, BinningSpec};
pub use config::{Config, ConstraintNames, RoleNames};
pub use roles::{validate_partition, validate_roles, CIConstraint, CheckedConfig, RoleAssignment};

/// One named attribute and its ordered domain labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub domain: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, domain: Vec<String>) -> Self {
        Attribute {
            name: name.into(),
            domain,
        }
    }

    /// Attribute with anonymous labels `"0".."k-1"`.
    pub fn with_size(name: impl Into<String>, k: usize) -> Self {
        Attribute::new(name, (0..k).map(|c| c.to_string()).collect())
    }

    pub fn domain_size(&self) -> usize {
        self.domain.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Schema {
    attributes: Vec<Attribute>,
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let attributes = Vec::<Attribute>::deserialize(de)?;
        Schema::new(attributes).map_err(serde::de::Error::custom)
    }
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.len() < 2 {
            return Err(Error::config(format!(
                "a schema needs at least 2 attributes, got {}",
                attributes.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::config(format!("duplicate attribute name {:?}", a.name)));
            }
            if a.domain.is_empty() {
                return Err(Error::config(format!("attribute {:?} has an empty domain", a.name)));
            }
            let labels: BTreeSet<&str> = a.domain.iter().map(String::as_str).collect();
            if labels.len() != a.domain.len() {
                return Err(Error::config(format!(
                    "attribute {:?} has duplicate domain labels",
                    a.name
                )));
            }
        }
        Ok(Schema { attributes })
    }

    /// Schema of anonymous attributes `x0, x1, ...` with the given domain sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        Schema::new(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &k)| Attribute::with_size(format!("x{i}"), k))
                .collect(),
        )
    }

    /// Number of attributes.
    pub fn d(&self) -> usize {
        self.attributes.len()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, i: usize) -> &Attribute {
        &self.attributes[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.attributes[i].name
    }

    pub fn domain_size(&self, i: usize) -> usize {
        self.attributes[i].domain.len()
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::domain_size).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Product of the domain sizes of `attrs`, saturating in `u128`.
    pub fn joint_size(&self, attrs: &[usize]) -> u128 {
        attrs
            .iter()
            .fold(1u128, |acc, &i| acc.saturating_mul(self.domain_size(i) as u128))
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.d() {
            return Err(Error::argument(format!(
                "attribute index {i} out of range for {} attributes",
                self.d()
            )));
        }
        Ok(())
    }
}

/// Column-oriented table of category codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<Vec<u32>>,
    n: usize,
}

impl Dataset {
    pub fn new(schema: Schema, columns: Vec<Vec<u32>>) -> Result<Self> {
        if columns.len() != schema.d() {
            return Err(Error::argument(format!(
                "expected {} columns, got {}",
                schema.d(),
                columns.len()
            )));
        }
        let n = columns[0].len();
        for (i, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::argument(format!(
                    "column {i} has {} rows, expected {n}",
                    col.len()
                )));
            }
            let k = schema.domain_size(i);
            if let Some(&c) = col.iter().find(|&&c| c as usize >= k) {
                return Err(Error::Domain {
                    attribute: schema.name(i).to_string(),
                    value: c.to_string(),
                });
            }
        }
        Ok(Dataset { schema, columns, n })
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<u32>]) -> Result<Self> {
        let d = schema.d();
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Parse {
                    row: r + 1,
                    message: format!("expected {d} codes, found {}", row.len()),
                });
            }
            for (col, &c) in columns.iter_mut().zip(row) {
                col.push(c);
            }
        }
        Dataset::new(schema, columns)
    }

    pub fn empty(schema: Schema) -> Self {
        let columns = vec![Vec::new(); schema.d()];
        Dataset {
            schema,
            columns,
            n: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn d(&self) -> usize {
        self.schema.d()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column(&self, i: usize) -> &[u32] {
        &self.columns[i]
    }

    pub fn row(&self, r: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<u32>> + '_ {
        (0..self.n).map(move |r| self.row(r))
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|col| indices.iter().map(|&r| col[r]).collect())
            .collect();
        Dataset {
            schema: self.schema.clone(),
            columns,
            n: indices.len(),
        }
    }

    /// Decodes every code back to its domain label.
    pub fn to_raw(&self) -> RawTable {
        let header = self.schema.names().into_iter().map(str::to_string).collect();
        let rows = (0..self.n)
            .map(|r| {
                self.columns
                    .iter()
                    .enumerate()
                    .map(|(i, col)| self.schema.attribute(i).domain[col[r] as usize].clone())
                    .collect()
            })
            .collect();
        RawTable { header, rows }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.to_raw().write_csv(w)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Uninterpreted string cells with a header row.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    row: r + 2,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(RawTable { header, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        RawTable::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.header)?;
        for row in &self.rows {
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn column(&self, i: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[i].as_str())
    }
}

/// Loads a CSV file of categorical values.
///
/// Without a hint every attribute's domain is the lexicographically sorted
/// set of its distinct values. An attribute with no observed values (header
/// only file) gets the single placeholder label `""`.
pub fn load_csv(path: impl AsRef<Path>, schema_hint: Option<&Schema>) -> Result<Dataset> {
    encode_categorical(&RawTable::load(path)?, schema_hint)
}

/// Encodes raw string cells as category codes.
pub fn encode_categorical(raw: &RawTable, schema_hint: Option<&Schema>) -> Result<Dataset> {
    let schema = match schema_hint {
        Some(s) => {
            check_header(&raw.header, s)?;
            s.clone()
        }
        None => {
            let attrs = raw
                .header
                .iter()
                .enumerate()
                .map(|(i, name)| Attribute::new(name.clone(), sorted_domain(raw, i)))
                .collect();
            Schema::new(attrs)?
        }
    };
    encode_with(raw, schema, |_, _| None)
}

/// Sorted distinct values of column `i`, or `[""]` when the column is empty.
pub(crate) fn sorted_domain(raw: &RawTable, i: usize) -> Vec<String> {
    let mut domain: Vec<String> = raw
        .column(i)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    if domain.is_empty() {
        domain.push(String::new());
    }
    domain
}

/// Encodes raw cells against a fixed schema. A cell that is not one of the
/// attribute's labels is handed to `fallback`, which may map it to a code.
pub(crate) fn encode_with(
    raw: &RawTable,
    schema: Schema,
    fallback: impl Fn(usize, &str) -> Option<Result<u32>>,
) -> Result<Dataset> {
    check_header(&raw.header, &schema)?;
    let lookups: Vec<HashMap<&str, u32>> = schema
        .attributes()
        .iter()
        .map(|a| {
            a.domain
                .iter()
                .enumerate()
                .map(|(c, l)| (l.as_str(), c as u32))
                .collect()
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(raw.rows.len()); schema.d()];
    for row in &raw.rows {
        for (i, cell) in row.iter().enumerate() {
            let code = match lookups[i].get(cell.as_str()) {
                Some(&c) => c,
                None => match fallback(i, cell) {
                    Some(res) => res?,
                    None => {
                        return Err(Error::Domain {
                            attribute: schema.name(i).to_string(),
                            value: cell.clone(),
                        })
                    }
                },
            };
            columns[i].push(code);
        }
    }
    Dataset::new(schema, columns)
}

fn check_header(header: &[String], schema: &Schema) -> Result<()> {
    if header.len() != schema.d() || header.iter().zip(schema.names()).any(|(h, n)| h != n) {
        return Err(Error::config(format!(
            "header {:?} does not match schema attributes {:?}",
            header,
            schema.names()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(text: &str) -> Result<RawTable> {
        RawTable::read_csv(text.as_bytes())
    }

    #[test]
    fn load_assigns_codes_in_sort_order() {
        let ds = encode_categorical(&raw("a,b\ny,1\nx,0\ny,0\n").unwrap(), None).unwrap();
        assert_eq!(ds.schema().domain_sizes(), vec![2, 2]);
        assert_eq!(ds.column(0), &[1, 0, 1]);
        assert_eq!(ds.column(1), &[1, 0, 0]);
        assert_eq!(ds.schema().attribute(0).domain, vec!["x", "y"]);
    }

    #[test]
    fn header_only_file_gives_empty_dataset() {
        let ds = encode_categorical(&raw("a,b\n").unwrap(), None).unwrap();
        assert_eq!(ds.n(), 0);
        assert_eq!(ds.d(), 2);
    }

    #[test]
    fn ragged_row_reports_row_number() {
        let err = raw("a,b\nx,0\nx,0,1\n").unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hinted_domain_rejects_unknown_value() {
        let schema = Schema::new(vec![
            Attribute::new("a", vec!["x".into(), "y".into()]),
            Attribute::new("b", vec!["0".into()]),
        ])
        .unwrap();
        let err = encode_categorical(&raw("a,b\nz,0\n").unwrap(), Some(&schema)).unwrap_err();
        match err {
            Error::Domain { attribute, value } => {
                assert_eq!(attribute, "a");
                assert_eq!(value, "z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_rejects_duplicates_and_tiny_inputs() {
        assert!(Schema::from_sizes(&[2]).is_err());
        assert!(Schema::from_sizes(&[2, 0]).is_err());
        assert!(Schema::new(vec![Attribute::with_size("a", 2), Attribute::with_size("a", 2)]).is_err());
    }

    #[test]
    fn dataset_rejects_out_of_domain_codes() {
        let schema = Schema::from_sizes(&[2, 2]).unwrap();
        assert!(Dataset::from_rows(schema, &[vec![0, 2]]).is_err());
    }

    #[test]
    fn csv_written_from_file_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "a,b\nfoo,\"x,y\"\nbar,z\n").unwrap();
        let ds = load_csv(&path, None).unwrap();
        let out = dir.path().join("u.csv");
        ds.save_csv(&out).unwrap();
        assert_eq!(load_csv(&out, None).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(rows in proptest::collection::vec(
            proptest::collection::vec("[a-c]{0,2}|[0-9]{1,2}", 3), 0..30)) {
            let table = RawTable {
                header: vec!["p".into(), "q".into(), "r".into()],
                rows,
            };
            let ds = encode_categorical(&table, None).unwrap();
            prop_assert_eq!(ds.to_raw(), table.clone());
            let text = ds.to_csv_string().unwrap();
            let back = RawTable::read_csv(text.as_bytes()).unwrap();
            prop_assert_eq!(back, table);
        }
    }
}
