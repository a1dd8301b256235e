//! Posterior files: `recording_id  p_cn  p_mci  p_adrd`, tab-separated,
//! one header line. Probabilities are written in shortest round-trip form.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mmfuse_core::fusion::ClassPosterior;

pub const HEADER: &str = "recording_id\tp_cn\tp_mci\tp_adrd";

pub fn format(rows: &[(String, ClassPosterior)]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (id, p) in rows {
        let [a, b, c] = p.0;
        out.push_str(&format!("{id}\t{a}\t{b}\t{c}\n"));
    }
    out
}

pub fn parse(text: &str, what: &str) -> Result<Vec<(String, ClassPosterior)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == HEADER => {}
        _ => bail!("{what}: expected header {HEADER:?}"),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            bail!("{what}:{}: expected 4 fields, found {}", n + 1, fields.len());
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields[1..]) {
            *slot = f
                .trim()
                .parse()
                .with_context(|| format!("{what}:{}: bad probability {f:?}", n + 1))?;
        }
        let post = ClassPosterior::new(p).with_context(|| format!("{what}:{}", n + 1))?;
        rows.push((fields[0].to_string(), post));
    }
    Ok(rows)
}

pub fn read(path: &Path) -> Result<Vec<(String, ClassPosterior)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text, &path.display().to_string())
}
