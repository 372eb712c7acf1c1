//! Fixed-format MPS writer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::lp::{LpModel, Sense};

/// MPS text plus the map from the 8-character names back to the model's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpsExport {
    pub text: String,
    pub columns: BTreeMap<String, String>,
    pub rows: BTreeMap<String, String>,
}

impl MpsExport {
    pub fn sidecar_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            schema: &'static str,
            objective_row: &'static str,
            columns: &'a BTreeMap<String, String>,
            rows: &'a BTreeMap<String, String>,
        }
        let s = Sidecar { schema: "v1", objective_row: "OBJ", columns: &self.columns, rows: &self.rows };
        serde_json::to_string_pretty(&s).expect("string maps serialize")
    }
}

/// Shortest rendering of `v` that fits the 12-character numeric field,
/// keeping as many significant digits as possible.
fn num(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 12 {
        return plain;
    }
    let mut best: Option<(f64, String)> = None;
    for p in (0..=11).rev() {
        for cand in [format!("{v:.p$e}"), format!("{v:.p$}")] {
            if cand.len() <= 12 {
                let err = (cand.parse::<f64>().unwrap_or(f64::INFINITY) - v).abs();
                if best.as_ref().map_or(true, |b| err < b.0) {
                    best = Some((err, cand));
                }
            }
        }
    }
    best.map_or(plain, |b| b.1)
}

fn line(out: &mut String, f1: &str, f2: &str, f3: &str, f4: &str, f5: &str, f6: &str) {
    let mut s = format!(" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}");
    if !f5.is_empty() {
        let _ = write!(s, "   {f5:<8}  {f6:>12}");
    }
    let _ = writeln!(out, "{}", s.trim_end());
}

pub fn export_mps(model: &LpModel) -> MpsExport {
    let col_name = |j: usize| format!("C{:07}", j + 1);
    let row_name = |i: usize| format!("R{:07}", i + 1);
    let mut out = String::new();
    out.push_str("NAME          SMFMODEL\nOBJSENSE\n    MAX\nROWS\n N  OBJ\n");
    for (i, r) in model.rows.iter().enumerate() {
        let t = match r.sense {
            Sense::Eq => "E",
            Sense::Le => "L",
            Sense::Ge => "G",
        };
        let _ = writeln!(out, " {t}  {}", row_name(i));
    }

    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.num_columns()];
    for (i, r) in model.rows.iter().enumerate() {
        for &(j, a) in &r.coefs {
            by_col[j].push((i, a));
        }
    }
    out.push_str("COLUMNS\n");
    let mut in_int = false;
    let mut marker = 0;
    for (j, c) in model.columns.iter().enumerate() {
        if c.integer != in_int {
            let kind = if c.integer { "'INTORG'" } else { "'INTEND'" };
            let _ = writeln!(out, "    M{marker:07}  'MARKER'                 {kind}");
            marker += 1;
            in_int = c.integer;
        }
        let name = col_name(j);
        let mut entries: Vec<(String, f64)> = Vec::new();
        if c.objective != 0.0 {
            entries.push(("OBJ".into(), c.objective));
        }
        let mut col = by_col[j].clone();
        col.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (i, a) in col {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += a,
                _ => merged.push((i, a)),
            }
        }
        entries.extend(merged.into_iter().filter(|e| e.1 != 0.0).map(|(i, a)| (row_name(i), a)));
        if entries.is_empty() {
            // Keep the column declared even if it appears nowhere.
            entries.push(("OBJ".into(), 0.0));
        }
        for pair in entries.chunks(2) {
            let (r1, v1) = (&pair[0].0, num(pair[0].1));
            match pair.get(1) {
                Some((r2, v2)) => line(&mut out, "", &name, r1, &v1, r2, &num(*v2)),
                None => line(&mut out, "", &name, r1, &v1, "", ""),
            }
        }
    }
    if in_int {
        let _ = writeln!(out, "    M{marker:07}  'MARKER'                 'INTEND'");
    }

    out.push_str("RHS\n");
    for (i, r) in model.rows.iter().enumerate() {
        if r.rhs != 0.0 {
            line(&mut out, "", "RHS", &row_name(i), &num(r.rhs), "", "");
        }
    }
    out.push_str("RANGES\nBOUNDS\n");
    for (j, c) in model.columns.iter().enumerate() {
        let name = col_name(j);
        let (lo, up) = (c.lower, c.upper);
        if c.integer && lo == 0.0 && up == 1.0 {
            line(&mut out, "BV", "BND", &name, "", "", "");
            continue;
        }
        if lo == up {
            line(&mut out, "FX", "BND", &name, &num(lo), "", "");
            continue;
        }
        match (lo.is_finite(), up.is_finite()) {
            (false, false) => line(&mut out, "FR", "BND", &name, "", "", ""),
            (false, true) => {
                line(&mut out, "MI", "BND", &name, "", "", "");
                line(&mut out, "UP", "BND", &name, &num(up), "", "");
            }
            (true, fin_up) => {
                if lo != 0.0 {
                    line(&mut out, "LO", "BND", &name, &num(lo), "", "");
                }
                if fin_up {
                    line(&mut out, "UP", "BND", &name, &num(up), "", "");
                }
            }
        }
    }
    out.push_str("ENDATA\n");

    MpsExport {
        text: out,
        columns: model.columns.iter().enumerate().map(|(j, c)| (col_name(j), c.name.clone())).collect(),
        rows: model.rows.iter().enumerate().map(|(i, r)| (row_name(i), r.name.clone())).collect(),
    }
}
