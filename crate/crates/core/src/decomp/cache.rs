//! Text cache for decompositions: `key=value` header lines, then one
//! `omega m_g var_g m_x var_x` record per term. Numbers use the shortest
//! representation that parses back to the same `f64`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::fsg::{FsgDecomposition, FsgScales};
use super::psg::PsgDecomposition;
use super::{DecompositionKind, Interval, Term};

pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CachedDecomposition {
    Fsg(FsgDecomposition),
    Psg(PsgDecomposition),
}

impl CachedDecomposition {
    pub fn kind(&self) -> DecompositionKind {
        match self {
            CachedDecomposition::Fsg(_) => DecompositionKind::Fsg,
            CachedDecomposition::Psg(_) => DecompositionKind::Psg,
        }
    }

    pub fn terms(&self) -> &[Term] {
        match self {
            CachedDecomposition::Fsg(d) => d.terms(),
            CachedDecomposition::Psg(d) => d.terms(),
        }
    }

    pub fn region(&self) -> Interval {
        match self {
            CachedDecomposition::Fsg(d) => d.region(),
            CachedDecomposition::Psg(d) => d.region(),
        }
    }
}

pub fn write_cache<W: Write>(decomp: &CachedDecomposition, mut out: W) -> Result<()> {
    writeln!(out, "# gmf transition decomposition")?;
    writeln!(out, "version={CACHE_VERSION}")?;
    writeln!(out, "kind={}", decomp.kind())?;
    writeln!(out, "n_x=1")?;
    writeln!(out, "terms={}", decomp.terms().len())?;
    let region = decomp.region();
    match decomp {
        CachedDecomposition::Fsg(d) => {
            writeln!(out, "k={}", d.k())?;
            writeln!(out, "region={},{}", region.lo, region.hi)?;
            writeln!(out, "spacing={}", d.spacing())?;
            writeln!(out, "q={}", d.q())?;
            writeln!(out, "sigma_bar={}", d.scales().sigma_bar)?;
            writeln!(out, "omega_bar={}", d.scales().omega_bar)?;
            writeln!(out, "weights={}", d.weight_rule().name())?;
        }
        CachedDecomposition::Psg(d) => {
            writeln!(out, "k=-")?;
            writeln!(out, "region={},{}", region.lo, region.hi)?;
            writeln!(out, "spacing={}", d.step())?;
            writeln!(out, "q={}", d.base_q())?;
            writeln!(out, "sigma_bar=-")?;
            writeln!(out, "omega_bar=-")?;
            writeln!(out, "weights=-")?;
        }
    }
    writeln!(out, "# omega m_g var_g m_x var_x")?;
    for t in decomp.terms() {
        writeln!(out, "{} {} {} {} {}", t.omega, t.m_g, t.var_g, t.m_x, t.var_x)?;
    }
    Ok(())
}

const HEADER_KEYS: [&str; 11] =
    ["version", "kind", "n_x", "terms", "k", "region", "spacing", "q", "sigma_bar", "omega_bar", "weights"];

pub fn read_cache<R: BufRead>(input: R) -> Result<CachedDecomposition> {
    let mut header: Vec<(String, String, usize)> = Vec::new();
    let mut terms = Vec::new();
    let mut expected_terms = None;
    let mut last_line = 0;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        last_line = lineno;
        let err = |message: String| Error::Parse { line: lineno, message };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if header.len() < HEADER_KEYS.len() {
            let (key, value) =
                trimmed.split_once('=').ok_or_else(|| err(format!("expected key=value, found '{trimmed}'")))?;
            let want = HEADER_KEYS[header.len()];
            if key != want {
                return Err(err(format!("expected header key '{want}', found '{key}'")));
            }
            if key == "version" {
                let found: u32 = value.parse().map_err(|e| err(format!("bad version: {e}")))?;
                if found != CACHE_VERSION {
                    return Err(Error::VersionMismatch { found, expected: CACHE_VERSION });
                }
            }
            if key == "terms" {
                expected_terms = Some(value.parse::<usize>().map_err(|e| err(format!("bad term count: {e}")))?);
            }
            header.push((key.to_string(), value.to_string(), lineno));
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad number '{f}': {e}"))))
            .collect::<Result<_>>()?;
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        terms.push(Term { omega: fields[0], m_g: fields[1], var_g: fields[2], m_x: fields[3], var_x: fields[4] });
    }
    if header.len() < HEADER_KEYS.len() {
        return Err(Error::Parse {
            line: last_line,
            message: format!("missing header key '{}'", HEADER_KEYS[header.len()]),
        });
    }
    let get = |key: &str| header.iter().find(|(k, _, _)| k == key).expect("all keys present");
    let parse_f64 = |key: &str| {
        let (_, v, line) = get(key);
        v.parse::<f64>().map_err(|e| Error::Parse { line: *line, message: format!("bad {key}: {e}") })
    };
    let (_, n_x, n_x_line) = get("n_x");
    if n_x != "1" {
        return Err(Error::Parse { line: *n_x_line, message: format!("only n_x=1 is supported, found {n_x}") });
    }
    if Some(terms.len()) != expected_terms {
        return Err(Error::Parse {
            line: last_line,
            message: format!("header declares {} terms, found {}", expected_terms.unwrap_or(0), terms.len()),
        });
    }
    let (_, region_text, region_line) = get("region");
    let region = region_text
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
        .ok_or_else(|| Error::Parse { line: *region_line, message: format!("bad region '{region_text}'") })?;
    let region =
        Interval::new(region.0, region.1).map_err(|e| Error::Parse { line: *region_line, message: e.to_string() })?;
    let spacing = parse_f64("spacing")?;
    let q = parse_f64("q")?;
    let (_, kind, kind_line) = get("kind");
    match kind.as_str() {
        "FSG" => {
            let (_, k, k_line) = get("k");
            let k = k.parse::<usize>().map_err(|e| Error::Parse { line: *k_line, message: format!("bad k: {e}") })?;
            let scales = FsgScales { sigma_bar: parse_f64("sigma_bar")?, omega_bar: parse_f64("omega_bar")? };
            let (_, rule, rule_line) = get("weights");
            let rule = rule.parse().map_err(|message| Error::Parse { line: *rule_line, message })?;
            Ok(CachedDecomposition::Fsg(FsgDecomposition::from_parts(terms, rule, k, region, spacing, q, scales)?))
        }
        "PSG" => Ok(CachedDecomposition::Psg(PsgDecomposition::from_parts(terms, region, q, spacing)?)),
        other => Err(Error::Parse { line: *kind_line, message: format!("unknown kind '{other}'") }),
    }
}
