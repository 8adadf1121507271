//! The comparison matrix and its CSV and JSON exports.

use serde::Serialize;

use super::meta::{engine_meta, COLUMNS, DESCRIPTIVE_ROWS};

pub const MEASURED_ROWS: [&str; 4] = ["Local ACID", "Global Atomicity", "Global Isolation", "Session Consistency"];

/// Violating runs out of all runs for one criterion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub violations: usize,
    pub runs: usize,
}

impl Cell {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Text of a measured cell: isolation reads `1CS` when it holds.
pub fn verdict_text(row: usize, cell: &Cell) -> &'static str {
    match (row, cell.holds()) {
        (2, true) => "1CS",
        (_, true) => "yes",
        (_, false) => "no",
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfigReport {
    pub label: String,
    pub protocol: String,
    pub cells: [Cell; 4],
}

impl ConfigReport {
    pub fn booleans(&self) -> [bool; 4] {
        self.cells.map(|c| c.holds())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ColumnReport {
    pub name: String,
    pub configs: Vec<ConfigReport>,
    pub cells: [Cell; 4],
    pub descriptive: [String; 5],
}

impl ColumnReport {
    pub fn booleans(&self) -> [bool; 4] {
        self.cells.map(|c| c.holds())
    }

    /// Every configuration of the column reaches the same verdicts.
    pub fn collapses(&self) -> bool {
        self.configs.windows(2).all(|w| w[0].booleans() == w[1].booleans())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ReportMatrix {
    pub runs_per_scenario: usize,
    pub seed_base: u64,
    pub columns: Vec<ColumnReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (expected csv or json)")),
        }
    }
}

impl ReportMatrix {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header).expect("in-memory write");
        for (i, row) in MEASURED_ROWS.iter().enumerate() {
            let mut rec = vec![row.to_string()];
            rec.extend(self.columns.iter().map(|c| {
                let cell = &c.cells[i];
                format!("{} ({}/{})", verdict_text(i, cell), cell.violations, cell.runs)
            }));
            w.write_record(&rec).expect("in-memory write");
        }
        for (i, row) in DESCRIPTIVE_ROWS.iter().enumerate() {
            let mut rec = vec![row.to_string()];
            rec.extend(self.columns.iter().map(|c| c.descriptive[i].clone()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn export(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    /// Differences from the reference matrix, one line each. Empty when
    /// every column has the reference verdicts and metadata and all of its
    /// configurations agree.
    pub fn mismatches(&self) -> Vec<String> {
        let mut out = Vec::new();
        for col in &self.columns {
            if !COLUMNS.iter().any(|c| c.name == col.name) {
                out.push(format!("unexpected column {:?}", col.name));
            }
        }
        for want in &COLUMNS {
            let Some(col) = self.columns.iter().find(|c| c.name == want.name) else {
                out.push(format!("missing column {:?}", want.name));
                continue;
            };
            for (i, (got, exp)) in col.booleans().iter().zip(want.expected).enumerate() {
                if *got != exp {
                    out.push(format!(
                        "{}: {} is {} ({}/{} violating runs), expected {}",
                        col.name,
                        MEASURED_ROWS[i],
                        verdict_text(i, &col.cells[i]),
                        col.cells[i].violations,
                        col.cells[i].runs,
                        if exp { "to hold" } else { "a violation" },
                    ));
                }
            }
            if !col.collapses() {
                out.push(format!("{}: configurations disagree", col.name));
            }
            let meta = engine_meta(want.configs[0].protocol).rows();
            for (i, (got, exp)) in col.descriptive.iter().zip(meta).enumerate() {
                if got != exp {
                    out.push(format!("{}: {} is {got:?}, expected {exp:?}", col.name, DESCRIPTIVE_ROWS[i]));
                }
            }
        }
        out
    }

    /// Human-readable boolean matrix.
    pub fn to_table(&self) -> String {
        let width = 32;
        let mut s = format!("{:<width$}", "");
        for c in &self.columns {
            s.push_str(&format!("{:<width$}", c.name));
        }
        s.push('\n');
        for (i, row) in MEASURED_ROWS.iter().enumerate() {
            s.push_str(&format!("{row:<width$}"));
            for c in &self.columns {
                let cell = &c.cells[i];
                let text = format!("{} ({}/{})", verdict_text(i, cell), cell.violations, cell.runs);
                s.push_str(&format!("{text:<width$}"));
            }
            s.push('\n');
        }
        for (i, row) in DESCRIPTIVE_ROWS.iter().enumerate() {
            s.push_str(&format!("{row:<width$}"));
            for c in &self.columns {
                s.push_str(&format!("{:<width$}", c.descriptive[i]));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(name: &str, violations: usize) -> ColumnReport {
        let cell = Cell { violations, runs: 10 };
        ColumnReport {
            name: name.into(),
            configs: Vec::new(),
            cells: [cell; 4],
            descriptive: ["anywhere", "symmetric", "eager", "serial execution", "kernel-based"].map(String::from),
        }
    }

    #[test]
    fn wrong_verdict_is_reported() {
        let col = &COLUMNS[1];
        let mut report = column(col.name, 0);
        report.descriptive = engine_meta(col.configs[0].protocol).rows().map(String::from);
        let m = ReportMatrix {
            runs_per_scenario: 10,
            seed_base: 0,
            columns: vec![report],
        };
        let diffs = m.mismatches();
        assert_eq!(diffs.len(), COLUMNS.len() - 1, "{diffs:?}");
        assert!(diffs.iter().all(|d| d.starts_with("missing column")));
        let mut bad = m.clone();
        bad.columns[0].cells[1].violations = 2;
        assert!(bad.mismatches().iter().any(|d| d.contains("Quorum/Ripple: Global Atomicity")));
    }

    #[test]
    fn empty_matrix_exports_header_only() {
        let m = ReportMatrix::default();
        assert_eq!(m.to_csv().lines().next(), Some("row"));
    }

    #[test]
    fn csv_and_json_carry_the_same_counts() {
        let m = ReportMatrix {
            runs_per_scenario: 10,
            seed_base: 0,
            columns: vec![column("A", 3), column("B", 0)],
        };
        let csv = m.to_csv();
        assert!(csv.starts_with("row,A,B\n"));
        assert!(csv.contains("Global Isolation,no (3/10),1CS (0/10)"));
        let json: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(json["columns"][0]["cells"][2]["violations"], 3);
        assert_eq!(json["columns"][1]["cells"][2]["runs"], 10);
    }
}
