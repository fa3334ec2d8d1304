//! CSV and JSON writers for estimation, impact and homophily tables.
//!
//! Floats are written with the shortest representation that parses back to
//! the same value, so output bytes depend only on the numbers.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::estimation::{MGResult, UnitEstimates};
use crate::homophily::{HomophilyReport, LinkFormationFit};
use crate::impact::{EffectsTable, QuintileSpillin, Spillin};
use crate::panel::FacilityMeta;
use crate::stats;

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Names of the mean-group parameters: `psi` then one per covariate.
pub fn param_names(var_names: &[String]) -> Vec<String> {
    std::iter::once("psi".to_string()).chain(var_names.iter().cloned()).collect()
}

/// Pretty JSON with a trailing newline.
pub fn json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_mg_table<W: Write>(mg: &MGResult, var_names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "estimate", "se", "z", "p_value", "stars", "n_units"])?;
    for (p, name) in param_names(var_names).iter().enumerate() {
        let (b, se) = (mg.theta_mg[p], mg.se[p]);
        let z = if se > 0.0 { b / se } else { f64::NAN };
        let pv = if z.is_finite() { stats::two_sided_p(z) } else { f64::NAN };
        w.write_record([
            name.clone(),
            num(b),
            num(se),
            num(z),
            num(pv),
            stats::stars_for(b, se).to_string(),
            mg.n_units_used[p].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_unit_estimates<W: Write>(
    units: &UnitEstimates,
    meta: &[FacilityMeta],
    var_names: &[String],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit_id".to_string(), "psi".to_string()];
    header.extend(var_names.iter().map(|v| format!("beta_{v}")));
    header.extend(["sigma", "psi_identified", "condition", "instruments"].map(String::from));
    w.write_record(&header)?;
    for (u, m) in units.units.iter().zip(meta) {
        let mut rec = vec![m.unit_id.clone(), opt(u.psi())];
        rec.extend(u.beta().iter().map(|&b| num(b)));
        rec.push(num(u.sigma));
        rec.push(u.psi_identified.to_string());
        rec.push(num(u.condition));
        rec.push(serde_json::to_value(u.instruments)?.as_str().unwrap_or_default().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_effects<W: Write>(table: &EffectsTable, var_names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "de", "de_se", "de_stars", "ie", "ie_se", "ie_stars", "te", "te_se", "te_stars"])?;
    for (l, e) in table.effects.iter().enumerate() {
        let se = table.se.as_ref().map(|s| s[l]);
        let cell = |v: f64, s: Option<f64>| -> [String; 3] {
            [num(v), opt(s), s.map(|s| stats::stars_for(v, s)).unwrap_or("").to_string()]
        };
        let mut rec = vec![var_names[l].clone()];
        rec.extend(cell(e.de, se.map(|s| s.de)));
        rec.extend(cell(e.ie, se.map(|s| s.ie)));
        rec.extend(cell(e.te, se.map(|s| s.te)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One block of spillins per grouping dimension.
pub fn write_spillins<W: Write>(blocks: &[(String, Vec<Spillin>)], var_names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dimension", "variable", "within", "between", "all", "within_share"])?;
    for (dim, rows) in blocks {
        for (l, s) in rows.iter().enumerate() {
            w.write_record([
                dim.clone(),
                var_names[l].clone(),
                num(s.within),
                num(s.between),
                num(s.all),
                opt(s.within_share),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_quintile_spillins<W: Write>(rows: &[Vec<QuintileSpillin>], var_names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "quintile", "units", "within", "between", "within_share"])?;
    for (l, qs) in rows.iter().enumerate() {
        for q in qs {
            w.write_record([
                var_names[l].clone(),
                q.quintile.to_string(),
                q.units.to_string(),
                num(q.within),
                num(q.between),
                opt(q.within_share),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_homophily<W: Write>(reports: &[HomophilyReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dimension", "l_same", "l_total", "h", "h_null", "excess", "p_value", "permutations"])?;
    for r in reports {
        w.write_record([
            r.dimension.clone(),
            num(r.l_same),
            num(r.l_total),
            num(r.h),
            num(r.h_null),
            num(r.excess),
            num(r.p_value),
            r.permutations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_link_formation<W: Write>(fit: &LinkFormationFit, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "coef", "se", "odds_ratio", "stars", "dropped"])?;
    w.write_record([
        "intercept".to_string(),
        num(fit.alpha),
        num(fit.se_alpha),
        String::new(),
        stats::stars_for(fit.alpha, fit.se_alpha).to_string(),
        "false".into(),
    ])?;
    for (l, name) in fit.var_names.iter().enumerate() {
        w.write_record([
            format!("dist_{name}"),
            num(fit.delta[l]),
            num(fit.se[l]),
            num(fit.odds_ratios[l]),
            stats::stars_for(fit.delta[l], fit.se[l]).to_string(),
            fit.dropped[l].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Render rows as a fixed-width text table with a header rule.
pub fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (c, cell) in r.iter().enumerate().take(cols) {
            width[c] = width[c].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = width[c]) } else { format!("{s:>w$}", w = width[c]) })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols.saturating_sub(1))));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}
