//! Result tables as CSV and JSON, and the SPR sweep as an SVG line chart.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, Result};
use crate::iqfile::{write_bytes, write_json};

/// One model under one condition: `clean`, `awgn` or a scenario code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub model: String,
    pub condition: String,
    pub target_ap: Option<f64>,
    pub non_target_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApTable {
    pub config_hash: String,
    pub target_class: usize,
    pub rows: Vec<ApRow>,
}

impl ApTable {
    pub fn get(&self, model: &str, condition: &str) -> Option<&ApRow> {
        self.rows.iter().find(|r| r.model == model && r.condition == condition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdrRow {
    pub model: String,
    pub condition: String,
    pub target_mdr: Option<f64>,
    pub target_missed: usize,
    pub target_total: usize,
    pub non_target_mdr: Option<f64>,
    pub non_target_missed: usize,
    pub non_target_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdrTable {
    pub config_hash: String,
    pub target_class: usize,
    pub rows: Vec<MdrRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub spr_db: f64,
    pub target_ap: Option<f64>,
    pub non_target_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub config_hash: String,
    pub target_class: usize,
    pub model: String,
    pub rows: Vec<SweepRow>,
}

fn csv_bytes<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    w.into_inner().map_err(|e| format_err(path, e.to_string()))
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_table<T: Serialize, R: Serialize>(dir: &Path, stem: &str, table: &T, rows: &[R]) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let bytes = csv_bytes(&csv_path, rows)?;
    write_bytes(&csv_path, &bytes)?;
    write_json(&dir.join(format!("{stem}.json")), table)
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    model: &'a str,
    spr_db: f64,
    target_ap: Option<f64>,
    non_target_map: Option<f64>,
}

pub fn write_sweep(dir: &Path, stem: &str, table: &SweepTable) -> Result<()> {
    let rows: Vec<_> = table
        .rows
        .iter()
        .map(|r| SweepCsvRow {
            model: &table.model,
            spr_db: r.spr_db,
            target_ap: r.target_ap,
            non_target_map: r.non_target_map,
        })
        .collect();
    write_table(dir, stem, table, &rows)?;
    write_bytes(&dir.join(format!("{stem}.svg")), sweep_svg(table).as_bytes())
}

/// AP against SPR, one polyline per metric; finite levels only.
pub fn sweep_svg(table: &SweepTable) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let pts: Vec<&SweepRow> = table.rows.iter().filter(|r| r.spr_db.is_finite()).collect();
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.spr_db), b.max(r.spr_db)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |spr: f64| PAD + (spr - lo) / span * (W - 2.0 * PAD);
    let y = |ap: f64| H - PAD - ap.clamp(0.0, 1.0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{tick:.1}</text>"#,
            PAD - 6.0,
            y(tick) + 4.0
        );
    }
    for r in &pts {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            x(r.spr_db),
            H - PAD + 16.0,
            r.spr_db
        );
    }
    let series: [(&str, &str, fn(&SweepRow) -> Option<f64>); 2] = [
        ("target AP", "#c0392b", |r| r.target_ap),
        ("non-target mAP", "#2c7fb8", |r| r.non_target_map),
    ];
    for (i, (label, color, get)) in series.iter().enumerate() {
        let coords: Vec<String> =
            pts.iter().filter_map(|r| get(r).map(|v| format!("{:.1},{:.1}", x(r.spr_db), y(v)))).collect();
        if !coords.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                coords.join(" ")
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{label}</text>"#,
            PAD + 8.0,
            PAD + 14.0 * (i as f64 + 1.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">SPR (dB), model {}</text>"#,
        W / 2.0,
        H - 10.0,
        table.model
    );
    s.push_str("</svg>\n");
    s
}
