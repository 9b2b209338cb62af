//! Aligned text and versioned CSV reports. Numbers use fixed precision so the
//! same seed gives byte-identical files.

use std::fs;
use std::path::Path;

use super::pipelines::{AdsorptionResult, BeefResult, LatticeResult};
use super::{io_err, WorkflowError};

pub const LATTICE_CSV: &str = "# matscreen-sol27lc v1";
pub const ADSORPTION_CSV: &str = "# matscreen-adsorption v1";
pub const BEEF_CSV: &str = "# matscreen-beef v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

impl Report {
    /// Write `<stem>.txt` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), WorkflowError> {
        for (ext, body) in [("txt", &self.text), ("csv", &self.csv)] {
            let p = dir.join(format!("{stem}.{ext}"));
            fs::write(&p, body).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

/// Left-aligned first column, right-aligned numbers, two-space gutters.
fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let s: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        s.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn csv_text(version: &str, headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    format!("{version}\n{body}")
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

pub fn lattice_report(r: &LatticeResult) -> Report {
    let headers = ["system", "lattice", "a_exp", "a_expert", "a_computed", "ecutwfc", "kgrid", "err_vs_expert_pct", "outcome"];
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.entry.system.clone(),
                row.entry.lattice.clone(),
                format!("{:.4}", row.entry.a_exp),
                format!("{:.4}", row.entry.a_expert),
                opt(row.a_computed, 4),
                opt(row.ecutwfc, 0),
                row.kgrid.map_or_else(|| "-".into(), |k| format!("{}x{}x{}", k[0], k[1], k[2])),
                opt(row.error_vs_expert(), 4),
                format!("{:?}", row.run.outcome()),
            ]
        })
        .collect();
    let mut text = table(&headers, &rows);
    let mut mape_rows = Vec::new();
    text.push('\n');
    for class in ["bcc", "fcc", "diamond"] {
        if let Some(m) = r.mape(class) {
            text.push_str(&format!("MAPE vs expert ({}): {m:.2}%\n", class.to_ascii_uppercase()));
            mape_rows.push(vec![format!("MAPE_{class}"), format!("{m:.4}")]);
        }
    }
    let mut csv = csv_text(LATTICE_CSV, &headers, &rows);
    for m in mape_rows {
        csv.push_str(&format!("# {} {}\n", m[0], m[1]));
    }
    Report { text, csv }
}

pub fn adsorption_report(r: &AdsorptionResult) -> Report {
    let headers = ["configuration", "site", "orientation", "E_ads_eV"];
    let rows: Vec<Vec<String>> = r
        .configs
        .iter()
        .map(|c| vec![c.file.clone(), c.site.to_string(), c.orientation.to_string(), format!("{:.4}", c.e_ads)])
        .collect();
    let mut text = format!("functional: {}\n\n", r.functional);
    text.push_str(&table(&headers, &rows));
    text.push('\n');
    if let Some((fcc, top)) = &r.favored {
        text.push_str(&format!("most favorable fcc:   {} ({:.4} eV)\n", fcc.file, fcc.e_ads));
        text.push_str(&format!("most favorable ontop: {} ({:.4} eV)\n", top.file, top.e_ads));
    }
    if let Some(d) = r.delta_be {
        text.push_str(&format!("delta_BE = E_ads(ontop) - E_ads(fcc) = {d:.4} eV\n"));
    }
    if let Some(site) = r.favored_site() {
        text.push_str(&format!("favored site: {site}\n"));
    }
    if let Some((f, n)) = r.initial_failures {
        text.push_str(&format!("initial production failures: {f} of {n}\n"));
    }
    text.push_str(&format!("repair rounds: {}\n", r.repair_rounds));
    text.push_str(&format!("outcome: {:?}\n", r.run.outcome()));
    if r.run.outcome() != super::Outcome::Success {
        text.push_str(&format!("reason: {}\n", r.run.run.response));
    }
    let mut csv = csv_text(ADSORPTION_CSV, &headers, &rows);
    csv.push_str(&format!("# delta_be_eV {}\n", opt(r.delta_be, 6)));
    csv.push_str(&format!("# favored_site {}\n", r.favored_site().map_or("-".to_string(), |s| s.to_string())));
    if let Some((f, n)) = r.initial_failures {
        csv.push_str(&format!("# initial_failures {f} {n}\n"));
    }
    csv.push_str(&format!("# repair_rounds {}\n", r.repair_rounds));
    csv.push_str(&format!("# outcome {:?}\n", r.run.outcome()));
    Report { text, csv }
}

pub fn beef_report(r: &BeefResult) -> Report {
    let headers = ["quantity", "value"];
    let mut rows = Vec::new();
    if let Some(s) = &r.stats {
        rows.push(vec!["members".to_string(), s.n.to_string()]);
        rows.push(vec!["mean_eV".to_string(), format!("{:.6}", s.mean)]);
        rows.push(vec!["std_eV".to_string(), format!("{:.6}", s.std)]);
        rows.push(vec![
            "sigma_distance".to_string(),
            if s.sigma_distance.is_finite() { format!("{:.3}", s.sigma_distance) } else { "inf".into() },
        ]);
        rows.push(vec!["route_discrepancy_eV".to_string(), format!("{:.3e}", s.route_discrepancy)]);
        rows.push(vec!["route_tolerance_eV".to_string(), format!("{:.3e}", s.route_tolerance)]);
    }
    if let Some(v) = &r.verdict {
        rows.push(vec!["verdict".to_string(), v.clone()]);
    }
    let mut text = table(&headers, &rows);
    for w in &r.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    text.push_str(&format!("outcome: {:?}\n", r.run.outcome()));
    if r.run.outcome() != super::Outcome::Success {
        text.push_str(&format!("reason: {}\n", r.run.run.response));
    }
    let mut csv = csv_text(BEEF_CSV, &headers, &rows);
    csv.push_str(&format!("# outcome {:?}\n", r.run.outcome()));
    Report { text, csv }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = table(&["a", "bb"], &[vec!["xyz".into(), "1.0".into()], vec!["q".into(), "10.25".into()]]);
        assert_eq!(t, "a       bb\n---  -----\nxyz    1.0\nq    10.25\n");
    }

    #[test]
    fn csv_has_version_line() {
        let c = csv_text(BEEF_CSV, &["k", "v"], &[vec!["a,b".into(), "1".into()]]);
        assert_eq!(c, "# matscreen-beef v1\nk,v\n\"a,b\",1\n");
    }
}
