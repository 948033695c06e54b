//! Count-table and covariate ingestion, sample alignment, and bottom-up count
//! aggregation along the tree.
//!
//! Counts arrive as a TSV with a header of OTU names; covariates as a CSV
//! with a binary group column and optional adjustment columns. Missing values
//! (empty or `NA`) in any selected column drop the sample (complete cases).

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::node_model::DesignMatrix;
use crate::phylo::{NodeId, PhyloTree};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("row {row}: expected {expected} cells, found {found}")]
    HeaderMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column `{column}`: `{value}` is not an integer")]
    NonIntegerCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: negative count {value}")]
    NegativeCount {
        row: usize,
        column: String,
        value: i64,
    },
    #[error("duplicate OTU name `{0}` in header")]
    DuplicateOtu(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("column `{0}` not found in covariate header")]
    UnknownColumn(String),
    #[error("group column `{column}` has {levels} distinct values; exactly 2 required")]
    NonBinaryGroup { column: String, levels: usize },
    #[error("non-numeric column `{column}` has {levels} distinct values; exactly 2 required")]
    NonBinaryColumn { column: String, levels: usize },
    #[error("column `{0}` is constant; cannot be used as a covariate")]
    ZeroVarianceColumn(String),
    #[error("k = {k} exceeds the {available} available OTUs")]
    KTooLarge { k: usize, available: usize },
    #[error("OTU names do not match tree leaves (e.g. {example})")]
    LeafNameMismatch { example: String },
    #[error("sample id `{0}` from the covariate table is missing from the count table")]
    SampleIdMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

/// Raw OTU count table: samples by OTUs.
#[derive(Debug, Clone, PartialEq)]
pub struct OtuTable {
    sample_ids: Vec<String>,
    otu_names: Vec<String>,
    /// Row-per-sample counts, `counts[sample][otu]`.
    counts: Vec<Vec<u64>>,
    totals: Vec<u64>,
}

impl OtuTable {
    pub fn from_parts(
        sample_ids: Vec<String>,
        otu_names: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self, DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for name in &otu_names {
            if !seen.insert(name.clone()) {
                return Err(DatasetError::DuplicateOtu(name.clone()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id.clone()) {
                return Err(DatasetError::DuplicateSample(id.clone()));
            }
        }
        if counts.len() != sample_ids.len() {
            return Err(DatasetError::Invalid(format!(
                "{} count rows vs {} sample ids",
                counts.len(),
                sample_ids.len()
            )));
        }
        for (row, cells) in counts.iter().enumerate() {
            if cells.len() != otu_names.len() {
                return Err(DatasetError::HeaderMismatch {
                    row: row + 1,
                    expected: otu_names.len(),
                    found: cells.len(),
                });
            }
        }
        let totals = counts.iter().map(|row| row.iter().sum()).collect();
        Ok(OtuTable {
            sample_ids,
            otu_names,
            counts,
            totals,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn otu_names(&self) -> &[String] {
        &self.otu_names
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_otus(&self) -> usize {
        self.otu_names.len()
    }

    pub fn count(&self, sample: usize, otu: usize) -> u64 {
        self.counts[sample][otu]
    }

    pub fn row(&self, sample: usize) -> &[u64] {
        &self.counts[sample]
    }

    /// Per-sample total count.
    pub fn total(&self, sample: usize) -> u64 {
        self.totals[sample]
    }

    /// Keep the `k` OTUs with the largest total count across samples, ties
    /// broken toward the lexicographically smaller name. Dropped OTU counts
    /// are excluded entirely (totals shrink accordingly).
    pub fn filter_top_k(&self, k: usize) -> Result<OtuTable, DatasetError> {
        if k > self.n_otus() {
            return Err(DatasetError::KTooLarge {
                k,
                available: self.n_otus(),
            });
        }
        let mut order: Vec<usize> = (0..self.n_otus()).collect();
        let column_total = |otu: usize| -> u64 {
            self.counts.iter().map(|row| row[otu]).sum()
        };
        order.sort_by(|&a, &b| {
            column_total(b)
                .cmp(&column_total(a))
                .then_with(|| self.otu_names[a].cmp(&self.otu_names[b]))
        });
        let mut keep: Vec<usize> = order.into_iter().take(k).collect();
        keep.sort_unstable(); // preserve original column order
        let otu_names = keep.iter().map(|&i| self.otu_names[i].clone()).collect();
        let counts = self
            .counts
            .iter()
            .map(|row| keep.iter().map(|&i| row[i]).collect())
            .collect();
        OtuTable::from_parts(self.sample_ids.clone(), otu_names, counts)
    }

    /// Serialize in the same TSV layout `load_counts` reads.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sample");
        for name in &self.otu_names {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for (id, row) in self.sample_ids.iter().zip(&self.counts) {
            out.push_str(id);
            for value in row {
                out.push('\t');
                out.push_str(&value.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Parse a count TSV: header `sample<TAB>otu...`, one row per sample.
pub fn load_counts(path: &Path) -> Result<OtuTable, DatasetError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|source| DatasetError::Csv {
            path: display.clone(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| DatasetError::Csv {
            path: display.clone(),
            source,
        })?
        .clone();
    if headers.is_empty() {
        return Err(DatasetError::Invalid("empty count table header".into()));
    }
    let otu_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut sample_ids = Vec::new();
    let mut counts = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|source| DatasetError::Csv {
            path: display.clone(),
            source,
        })?;
        let row = row_idx + 1;
        if record.len() != otu_names.len() + 1 {
            return Err(DatasetError::HeaderMismatch {
                row,
                expected: otu_names.len() + 1,
                found: record.len(),
            });
        }
        sample_ids.push(record[0].to_string());
        let mut cells = Vec::with_capacity(otu_names.len());
        for (col, value) in record.iter().skip(1).enumerate() {
            let value = value.trim();
            let parsed: i64 = value.parse().map_err(|_| DatasetError::NonIntegerCell {
                row,
                column: otu_names[col].clone(),
                value: value.to_string(),
            })?;
            if parsed < 0 {
                return Err(DatasetError::NegativeCount {
                    row,
                    column: otu_names[col].clone(),
                    value: parsed,
                });
            }
            cells.push(parsed as u64);
        }
        counts.push(cells);
    }
    OtuTable::from_parts(sample_ids, otu_names, counts)
}

/// How an adjustment column entered the design.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    /// Two-level column coded 0/1 by lexicographic label order.
    Binary { zero: String, one: String },
    /// Numeric column, possibly standardized.
    Numeric,
}

/// Standardization parameters recorded for a continuous column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub mean: f64,
    pub sd: f64,
}

/// Covariate rows (intercept first), group coding, and bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub sample_ids: Vec<String>,
    /// Adjustment column names, excluding the intercept.
    pub column_names: Vec<String>,
    /// `n x (p + 1)` rows with a leading 1.
    pub rows: Vec<Vec<f64>>,
    pub groups: Vec<u8>,
    /// Labels coded 0 and 1, in that order.
    pub group_labels: [String; 2],
    pub column_kinds: Vec<ColumnKind>,
    /// Samples dropped by complete-case filtering.
    pub dropped_samples: usize,
    /// Per adjustment column, `Some` once standardized.
    pub scalings: Vec<Option<Scaling>>,
}

impl Covariates {
    /// Assemble covariates already in numeric form (used by the simulator and
    /// tests). Binary adjustment columns should contain only 0/1.
    pub fn from_parts(
        sample_ids: Vec<String>,
        column_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        groups: Vec<u8>,
    ) -> Result<Self, DatasetError> {
        let n = sample_ids.len();
        if groups.len() != n {
            return Err(DatasetError::Invalid(format!(
                "{} group labels vs {n} samples",
                groups.len()
            )));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(DatasetError::Invalid("ragged covariate columns".into()));
        }
        if groups.iter().any(|&g| g > 1) {
            return Err(DatasetError::Invalid("group labels must be 0/1".into()));
        }
        let kinds = columns
            .iter()
            .map(|col| {
                let mut distinct: Vec<f64> = Vec::new();
                for &v in col {
                    if !distinct.contains(&v) {
                        distinct.push(v);
                    }
                }
                if distinct.len() == 2 {
                    ColumnKind::Binary {
                        zero: "0".into(),
                        one: "1".into(),
                    }
                } else {
                    ColumnKind::Numeric
                }
            })
            .collect();
        let rows = (0..n)
            .map(|i| {
                let mut row = Vec::with_capacity(columns.len() + 1);
                row.push(1.0);
                row.extend(columns.iter().map(|c| c[i]));
                row
            })
            .collect();
        let p = column_names.len();
        Ok(Covariates {
            sample_ids,
            column_names,
            rows,
            groups,
            group_labels: ["0".into(), "1".into()],
            column_kinds: kinds,
            dropped_samples: 0,
            scalings: vec![None; p],
        })
    }

    /// Rescale each continuous adjustment column (3 or more distinct values)
    /// to mean 0 and sample standard deviation 1 (divisor `n - 1`); binary
    /// columns and the intercept are untouched.
    pub fn standardize(&mut self) -> Result<(), DatasetError> {
        let n = self.rows.len();
        for (j, name) in self.column_names.iter().enumerate() {
            let col = j + 1; // skip intercept
            let values: Vec<f64> = self.rows.iter().map(|r| r[col]).collect();
            let mut distinct: Vec<f64> = Vec::new();
            for &v in &values {
                if !distinct.contains(&v) {
                    distinct.push(v);
                }
                if distinct.len() > 2 {
                    break;
                }
            }
            match distinct.len() {
                0 | 1 => return Err(DatasetError::ZeroVarianceColumn(name.clone())),
                2 => continue, // binary-valued: leave as coded
                _ => {}
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = (ss / (n as f64 - 1.0)).sqrt();
            if sd == 0.0 {
                return Err(DatasetError::ZeroVarianceColumn(name.clone()));
            }
            for row in &mut self.rows {
                row[col] = (row[col] - mean) / sd;
            }
            self.scalings[j] = Some(Scaling { mean, sd });
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_adjust(&self) -> usize {
        self.column_names.len()
    }
}

const MISSING_MARKERS: [&str; 2] = ["", "NA"];

fn is_missing(value: &str) -> bool {
    MISSING_MARKERS.contains(&value.trim())
}

/// Load a covariate CSV, code the binary group column 0/1 by lexicographic
/// label order, and drop samples with missing values in any selected column.
pub fn load_covariates(
    path: &Path,
    group_col: &str,
    adjust_cols: &[String],
) -> Result<Covariates, DatasetError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| DatasetError::Csv {
            path: display.clone(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| DatasetError::Csv {
            path: display.clone(),
            source,
        })?
        .clone();
    let col_index = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))
    };
    let group_idx = col_index(group_col)?;
    let adjust_idx: Vec<usize> = adjust_cols
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_, _>>()?;

    let mut sample_ids = Vec::new();
    let mut group_values: Vec<String> = Vec::new();
    let mut adjust_values: Vec<Vec<String>> = vec![Vec::new(); adjust_idx.len()];
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record.map_err(|source| DatasetError::Csv {
            path: display.clone(),
            source,
        })?;
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();
        let group = cell(group_idx);
        let adjust: Vec<String> = adjust_idx.iter().map(|&i| cell(i)).collect();
        if is_missing(&group) || adjust.iter().any(|v| is_missing(v)) {
            dropped += 1;
            continue;
        }
        sample_ids.push(cell(0));
        group_values.push(group);
        for (store, value) in adjust_values.iter_mut().zip(adjust) {
            store.push(value);
        }
    }

    // Group coding by lexicographic order of the observed labels.
    let mut labels: Vec<String> = group_values.clone();
    labels.sort();
    labels.dedup();
    if labels.len() != 2 {
        return Err(DatasetError::NonBinaryGroup {
            column: group_col.to_string(),
            levels: labels.len(),
        });
    }
    let groups: Vec<u8> = group_values
        .iter()
        .map(|v| u8::from(*v == labels[1]))
        .collect();

    // Adjustment columns: numeric as-is, otherwise two-level 0/1 coding.
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(adjust_idx.len());
    let mut kinds = Vec::with_capacity(adjust_idx.len());
    for (name, raw) in adjust_cols.iter().zip(&adjust_values) {
        let parsed: Option<Vec<f64>> = raw.iter().map(|v| v.parse::<f64>().ok()).collect();
        match parsed {
            Some(numeric) => {
                columns.push(numeric);
                kinds.push(ColumnKind::Numeric);
            }
            None => {
                let mut levels: Vec<String> = raw.clone();
                levels.sort();
                levels.dedup();
                if levels.len() != 2 {
                    return Err(DatasetError::NonBinaryColumn {
                        column: name.clone(),
                        levels: levels.len(),
                    });
                }
                columns.push(raw.iter().map(|v| f64::from(*v == levels[1])).collect());
                kinds.push(ColumnKind::Binary {
                    zero: levels[0].clone(),
                    one: levels[1].clone(),
                });
            }
        }
    }

    let n = sample_ids.len();
    let rows = (0..n)
        .map(|i| {
            let mut row = Vec::with_capacity(columns.len() + 1);
            row.push(1.0);
            row.extend(columns.iter().map(|c| c[i]));
            row
        })
        .collect();
    let p = adjust_cols.len();
    Ok(Covariates {
        sample_ids,
        column_names: adjust_cols.to_vec(),
        rows,
        groups,
        group_labels: [labels[0].clone(), labels[1].clone()],
        column_kinds: kinds,
        dropped_samples: dropped,
        scalings: vec![None; p],
    })
}

/// Per-node aggregated counts aligned with design rows and group indicators.
#[derive(Debug, Clone)]
pub struct AlignedDataset {
    /// `node_counts[node][sample]`, every tree node.
    pub node_counts: Vec<Vec<u64>>,
    pub sample_ids: Vec<String>,
    pub groups: Vec<u8>,
    /// Number of adjustment covariates (excluding intercept and group).
    pub n_adjust: usize,
    design_null: DesignMatrix,
    design_alt: DesignMatrix,
}

impl AlignedDataset {
    /// Aggregate counts bottom-up along the tree, aligning count rows to the
    /// covariate table's samples.
    pub fn aggregate(
        table: &OtuTable,
        tree: &PhyloTree,
        covariates: &Covariates,
    ) -> Result<Self, DatasetError> {
        // Leaf names and OTU names must agree as sets.
        let leaf_ids = tree.leaves();
        let mut otu_index: HashMap<&str, usize> = HashMap::new();
        for (i, name) in table.otu_names().iter().enumerate() {
            otu_index.insert(name, i);
        }
        if leaf_ids.len() != table.n_otus() {
            return Err(DatasetError::LeafNameMismatch {
                example: format!(
                    "tree has {} leaves, table has {} OTUs",
                    leaf_ids.len(),
                    table.n_otus()
                ),
            });
        }
        for &leaf in &leaf_ids {
            let name = tree.leaf_name(leaf).unwrap_or("");
            if !otu_index.contains_key(name) {
                return Err(DatasetError::LeafNameMismatch {
                    example: format!("leaf `{name}` has no OTU column"),
                });
            }
        }

        // Reorder count rows to match the covariate sample order.
        let mut sample_index: HashMap<&str, usize> = HashMap::new();
        for (i, id) in table.sample_ids().iter().enumerate() {
            sample_index.insert(id, i);
        }
        let mut row_of: Vec<usize> = Vec::with_capacity(covariates.n_samples());
        for id in &covariates.sample_ids {
            match sample_index.get(id.as_str()) {
                Some(&i) => row_of.push(i),
                None => return Err(DatasetError::SampleIdMismatch(id.clone())),
            }
        }

        let n = covariates.n_samples();
        let mut node_counts = vec![vec![0u64; n]; tree.node_count()];
        for &leaf in &leaf_ids {
            let otu = otu_index[tree.leaf_name(leaf).unwrap()];
            for (s, &raw_row) in row_of.iter().enumerate() {
                node_counts[leaf][s] = table.count(raw_row, otu);
            }
        }
        for node in tree.internal_nodes_by_depth() {
            let (l, r) = tree.children(node).expect("internal node");
            for s in 0..n {
                node_counts[node][s] = node_counts[l][s] + node_counts[r][s];
            }
        }

        let design_null = DesignMatrix::from_rows(&covariates.rows);
        let alt_rows: Vec<Vec<f64>> = covariates
            .rows
            .iter()
            .zip(&covariates.groups)
            .map(|(row, &z)| {
                let mut r = row.clone();
                r.push(z as f64);
                r
            })
            .collect();
        let design_alt = DesignMatrix::from_rows(&alt_rows);

        Ok(AlignedDataset {
            node_counts,
            sample_ids: covariates.sample_ids.clone(),
            groups: covariates.groups.clone(),
            n_adjust: covariates.n_adjust(),
            design_null,
            design_alt,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn design_null(&self) -> &DesignMatrix {
        &self.design_null
    }

    pub fn design_alt(&self) -> &DesignMatrix {
        &self.design_alt
    }

    /// Regression view of one internal node.
    pub fn node_data<'a>(&'a self, tree: &PhyloTree, node: NodeId) -> crate::node_model::NodeData<'a> {
        let (l, _) = tree.children(node).expect("internal node");
        crate::node_model::NodeData {
            y_left: &self.node_counts[l],
            y_total: &self.node_counts[node],
            design_null: &self.design_null,
            design_alt: &self.design_alt,
        }
    }

    /// Copy of the dataset keeping only the flagged adjustment covariates
    /// (intercept and group indicator always retained).
    pub fn with_adjust_subset(&self, keep: &[bool]) -> AlignedDataset {
        assert_eq!(keep.len(), self.n_adjust, "mask length must equal p");
        let select = |row: &[f64]| -> Vec<f64> {
            let mut out = vec![row[0]];
            for (j, &flag) in keep.iter().enumerate() {
                if flag {
                    out.push(row[j + 1]);
                }
            }
            out
        };
        let n = self.n_samples();
        let null_rows: Vec<Vec<f64>> = (0..n).map(|i| select(self.design_null.row(i))).collect();
        let alt_rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = select(self.design_null.row(i));
                row.push(self.groups[i] as f64);
                row
            })
            .collect();
        AlignedDataset {
            node_counts: self.node_counts.clone(),
            sample_ids: self.sample_ids.clone(),
            groups: self.groups.clone(),
            n_adjust: keep.iter().filter(|&&k| k).count(),
            design_null: DesignMatrix::from_rows(&null_rows),
            design_alt: DesignMatrix::from_rows(&alt_rows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str, suffix: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir();
        let path = dir.join(format!(
            "bgcr-dataset-test-{}-{suffix}",
            std::process::id()
        ));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn load_counts_parses_and_totals() {
        let path = write_temp("sample\totuA\totuB\ns1\t3\t1\ns2\t0\t5\n", "counts.tsv");
        let table = load_counts(&path).unwrap();
        assert_eq!(table.n_samples(), 2);
        assert_eq!(table.otu_names(), &["otuA", "otuB"]);
        assert_eq!(table.total(0), 4);
        assert_eq!(table.total(1), 5);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn load_counts_rejects_bad_cells() {
        let path = write_temp("sample\ta\tb\ns1\t-1\t2\n", "neg.tsv");
        assert!(matches!(
            load_counts(&path),
            Err(DatasetError::NegativeCount { .. })
        ));
        std::fs::remove_file(path).ok();

        let path = write_temp("sample\ta\tb\ns1\t2.5\t2\n", "frac.tsv");
        assert!(matches!(
            load_counts(&path),
            Err(DatasetError::NonIntegerCell { .. })
        ));
        std::fs::remove_file(path).ok();

        let path = write_temp("sample\ta\tb\ns1\t1\n", "ragged.tsv");
        assert!(matches!(
            load_counts(&path),
            Err(DatasetError::HeaderMismatch { .. })
        ));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn filter_top_k_keeps_largest_totals() {
        let table = OtuTable::from_parts(
            vec!["s1".into(), "s2".into()],
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![6, 3, 4], vec![4, 2, 3]],
        )
        .unwrap();
        // totals: a=10, b=5, c=7
        let top = table.filter_top_k(2).unwrap();
        assert_eq!(top.otu_names(), &["a", "c"]);
        assert_eq!(top.total(0), 10);

        assert_eq!(table.filter_top_k(3).unwrap(), table);
        assert!(matches!(
            table.filter_top_k(4),
            Err(DatasetError::KTooLarge { .. })
        ));
    }

    #[test]
    fn filter_top_k_breaks_ties_by_name() {
        let table = OtuTable::from_parts(
            vec!["s1".into()],
            vec!["zed".into(), "abc".into(), "mid".into()],
            vec![vec![5, 5, 1]],
        )
        .unwrap();
        let top = table.filter_top_k(1).unwrap();
        assert_eq!(top.otu_names(), &["abc"]);
    }

    #[test]
    fn covariates_complete_case_and_coding() {
        let csv = "id,sex,age,diet\n\
                   s1,male,30,low\n\
                   s2,female,40,high\n\
                   s3,male,,high\n\
                   s4,female,50,low\n";
        let path = write_temp(csv, "covs.csv");
        let covs = load_covariates(&path, "diet", &["sex".into(), "age".into()]).unwrap();
        assert_eq!(covs.dropped_samples, 1);
        assert_eq!(covs.sample_ids, vec!["s1", "s2", "s4"]);
        // diet: high < low lexicographically, so high = 0, low = 1.
        assert_eq!(covs.group_labels, ["high".to_string(), "low".to_string()]);
        assert_eq!(covs.groups, vec![1, 0, 1]);
        // sex: female < male, so female = 0, male = 1.
        assert_eq!(covs.rows[0][1], 1.0);
        assert_eq!(covs.rows[1][1], 0.0);
        // intercept first.
        assert!(covs.rows.iter().all(|r| r[0] == 1.0));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn covariates_errors() {
        let csv = "id,g\ns1,a\ns2,b\ns3,c\n";
        let path = write_temp(csv, "covs3.csv");
        assert!(matches!(
            load_covariates(&path, "g", &[]),
            Err(DatasetError::NonBinaryGroup { levels: 3, .. })
        ));
        assert!(matches!(
            load_covariates(&path, "missing", &[]),
            Err(DatasetError::UnknownColumn(_))
        ));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn standardize_uses_sample_sd() {
        let mut covs = Covariates::from_parts(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "flag".into()],
            vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0]],
            vec![0, 0, 1],
        )
        .unwrap();
        covs.standardize().unwrap();
        let x: Vec<f64> = covs.rows.iter().map(|r| r[1]).collect();
        assert!((x[0] + 1.0).abs() < 1e-12);
        assert!(x[1].abs() < 1e-12);
        assert!((x[2] - 1.0).abs() < 1e-12);
        // Binary column untouched.
        let flags: Vec<f64> = covs.rows.iter().map(|r| r[2]).collect();
        assert_eq!(flags, vec![0.0, 1.0, 1.0]);
        let scaling = covs.scalings[0].unwrap();
        assert!((scaling.mean - 2.0).abs() < 1e-12);
        assert!((scaling.sd - 1.0).abs() < 1e-12);
        assert!(covs.scalings[1].is_none());
    }

    #[test]
    fn standardize_normalizes_mean_and_sd() {
        let values = vec![3.1, -0.4, 7.7, 2.2, 9.0, -3.3];
        let n = values.len();
        let mut covs = Covariates::from_parts(
            (0..n).map(|i| format!("s{i}")).collect(),
            vec!["x".into()],
            vec![values],
            vec![0, 1, 0, 1, 0, 1],
        )
        .unwrap();
        covs.standardize().unwrap();
        let x: Vec<f64> = covs.rows.iter().map(|r| r[1]).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let mut covs = Covariates::from_parts(
            vec!["a".into(), "b".into()],
            vec!["c".into()],
            vec![vec![4.0, 4.0]],
            vec![0, 1],
        )
        .unwrap();
        assert!(matches!(
            covs.standardize(),
            Err(DatasetError::ZeroVarianceColumn(_))
        ));
    }

    #[test]
    fn aggregate_sums_children_exactly() {
        let tree = PhyloTree::parse_newick("((A,B),(C,D));").unwrap();
        let table = OtuTable::from_parts(
            vec!["s1".into()],
            vec!["A".into(), "B".into(), "C".into(), "D".into()],
            vec![vec![1, 2, 3, 4]],
        )
        .unwrap();
        let covs = Covariates::from_parts(vec!["s1".into()], vec![], vec![], vec![0]).unwrap();
        let data = AlignedDataset::aggregate(&table, &tree, &covs).unwrap();
        let root = tree.root();
        let (left, _) = tree.children(root).unwrap();
        assert_eq!(data.node_counts[left][0], 3);
        assert_eq!(data.node_counts[root][0], 10);
    }

    #[test]
    fn aggregate_matches_descendant_set_oracle() {
        use rand::{Rng, SeedableRng};
        let tree = PhyloTree::parse_newick("(((A,B),C),(D,E));").unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let names = vec!["A", "B", "C", "D", "E"];
        let counts: Vec<Vec<u64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.gen_range(0..100)).collect())
            .collect();
        let table = OtuTable::from_parts(
            (0..4).map(|i| format!("s{i}")).collect(),
            names.iter().map(|s| s.to_string()).collect(),
            counts.clone(),
        )
        .unwrap();
        let covs = Covariates::from_parts(
            (0..4).map(|i| format!("s{i}")).collect(),
            vec![],
            vec![],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let data = AlignedDataset::aggregate(&table, &tree, &covs).unwrap();

        // Oracle: sum leaf counts over each node's descendant leaf set.
        fn descendant_leaves(tree: &PhyloTree, node: NodeId, out: &mut Vec<NodeId>) {
            match tree.children(node) {
                None => out.push(node),
                Some((l, r)) => {
                    descendant_leaves(tree, l, out);
                    descendant_leaves(tree, r, out);
                }
            }
        }
        for node in 0..tree.node_count() {
            let mut leaves = Vec::new();
            descendant_leaves(&tree, node, &mut leaves);
            for s in 0..4 {
                let expect: u64 = leaves
                    .iter()
                    .map(|&leaf| {
                        let name = tree.leaf_name(leaf).unwrap();
                        let otu = names.iter().position(|n| *n == name).unwrap();
                        counts[s][otu]
                    })
                    .sum();
                assert_eq!(data.node_counts[node][s], expect);
            }
        }
        // Root counts are per-sample totals.
        for s in 0..4 {
            assert_eq!(data.node_counts[tree.root()][s], table.total(s));
        }
    }

    #[test]
    fn aggregate_rejects_mismatches() {
        let tree = PhyloTree::parse_newick("(A,B);").unwrap();
        let table = OtuTable::from_parts(
            vec!["s1".into()],
            vec!["A".into(), "X".into()],
            vec![vec![1, 2]],
        )
        .unwrap();
        let covs = Covariates::from_parts(vec!["s1".into()], vec![], vec![], vec![0]).unwrap();
        assert!(matches!(
            AlignedDataset::aggregate(&table, &tree, &covs),
            Err(DatasetError::LeafNameMismatch { .. })
        ));

        let table = OtuTable::from_parts(
            vec!["s1".into()],
            vec!["A".into(), "B".into()],
            vec![vec![1, 2]],
        )
        .unwrap();
        let covs =
            Covariates::from_parts(vec!["other".into()], vec![], vec![], vec![0]).unwrap();
        assert!(matches!(
            AlignedDataset::aggregate(&table, &tree, &covs),
            Err(DatasetError::SampleIdMismatch(_))
        ));
    }

    #[test]
    fn adjust_subset_drops_columns() {
        let tree = PhyloTree::parse_newick("(A,B);").unwrap();
        let table = OtuTable::from_parts(
            vec!["s1".into(), "s2".into()],
            vec!["A".into(), "B".into()],
            vec![vec![1, 2], vec![3, 4]],
        )
        .unwrap();
        let covs = Covariates::from_parts(
            vec!["s1".into(), "s2".into()],
            vec!["x".into(), "w".into()],
            vec![vec![0.5, -0.5], vec![2.0, 3.0]],
            vec![0, 1],
        )
        .unwrap();
        let data = AlignedDataset::aggregate(&table, &tree, &covs).unwrap();
        assert_eq!(data.design_null().ncols(), 3);
        assert_eq!(data.design_alt().ncols(), 4);
        let sub = data.with_adjust_subset(&[false, true]);
        assert_eq!(sub.n_adjust, 1);
        assert_eq!(sub.design_null().ncols(), 2);
        assert_eq!(sub.design_null().row(0), &[1.0, 2.0]);
        assert_eq!(sub.design_alt().row(1), &[1.0, 3.0, 1.0]);
    }
}
