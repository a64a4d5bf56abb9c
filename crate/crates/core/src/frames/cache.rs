//! Plain-text frame cache.
//!
//! ```text
//! # ellipt3d-frames v1 kmax=<k>
//! [E k]       one direction per line
//! [V k]       one frame per line (nine integers)
//! [dtheta k]  the angular resolution of V_k
//! [T1 k]      key vector, then up to five aligned vectors
//! [T2 k]      key vector, mu, then up to five aligned vectors
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{DirectionSet, Frame, FrameError, FrameHierarchy, FrameSet, IVec};

pub const CACHE_VERSION: &str = "v1";

fn write_ivecs(w: &mut impl Write, vs: &[IVec]) -> std::io::Result<()> {
    let mut first = true;
    for v in vs {
        for c in v {
            if !first {
                write!(w, " ")?;
            }
            write!(w, "{c}")?;
            first = false;
        }
    }
    writeln!(w)
}

pub fn write_cache(h: &FrameHierarchy, mut w: impl Write) -> Result<(), FrameError> {
    writeln!(w, "# ellipt3d-frames {CACHE_VERSION} kmax={}", h.k_max)?;
    for k in 1..=h.k_max {
        writeln!(w, "[E {k}]")?;
        for d in &h.directions[k - 1].directions {
            write_ivecs(&mut w, &[*d])?;
        }
        writeln!(w, "[V {k}]")?;
        for f in &h.levels[k - 1].frames {
            write_ivecs(&mut w, f)?;
        }
        writeln!(w, "[dtheta {k}]")?;
        writeln!(w, "{:?}", h.levels[k - 1].dtheta)?;
        if k < h.k_max {
            writeln!(w, "[T1 {k}]")?;
            for (key, vals) in &h.map1[k - 1] {
                let mut row = vec![*key];
                row.extend(vals);
                write_ivecs(&mut w, &row)?;
            }
            writeln!(w, "[T2 {k}]")?;
            for ((key, mu), vals) in &h.map2[k - 1] {
                let mut row = vec![*key, *mu];
                row.extend(vals);
                write_ivecs(&mut w, &row)?;
            }
        }
    }
    Ok(())
}

fn parse_ivecs(line: &str, lineno: usize) -> Result<Vec<IVec>, FrameError> {
    let nums: Vec<i32> = line
        .split_whitespace()
        .map(|t| t.parse::<i32>())
        .collect::<Result<_, _>>()
        .map_err(|e| FrameError::Cache(format!("line {lineno}: {e}")))?;
    if nums.is_empty() || !nums.len().is_multiple_of(3) {
        return Err(FrameError::Cache(format!("line {lineno}: expected integer triples")));
    }
    Ok(nums.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    E,
    V,
    Dtheta,
    T1,
    T2,
}

pub fn read_cache(r: impl BufRead) -> Result<FrameHierarchy, FrameError> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(FrameError::Cache("empty file".into())),
    };
    let rest = header
        .strip_prefix("# ellipt3d-frames ")
        .ok_or_else(|| FrameError::Cache("missing header".into()))?;
    let mut parts = rest.split_whitespace();
    let version = parts.next().unwrap_or("");
    if version != CACHE_VERSION {
        return Err(FrameError::Cache(format!("unsupported version `{version}`")));
    }
    let k_max: usize = parts
        .next()
        .and_then(|p| p.strip_prefix("kmax="))
        .and_then(|v| v.parse().ok())
        .filter(|&k| k >= 1)
        .ok_or_else(|| FrameError::Cache("bad kmax in header".into()))?;

    let mut directions: Vec<Vec<IVec>> = vec![Vec::new(); k_max];
    let mut frames: Vec<Vec<Frame>> = vec![Vec::new(); k_max];
    let mut dtheta: Vec<Option<f64>> = vec![None; k_max];
    let mut map1: Vec<BTreeMap<IVec, Vec<IVec>>> = vec![BTreeMap::new(); k_max.saturating_sub(1)];
    let mut map2: Vec<BTreeMap<(IVec, IVec), Vec<IVec>>> = vec![BTreeMap::new(); k_max.saturating_sub(1)];
    let mut current: Option<(Section, usize)> = None;

    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let mut it = inner.split_whitespace();
            let section = match it.next() {
                Some("E") => Section::E,
                Some("V") => Section::V,
                Some("dtheta") => Section::Dtheta,
                Some("T1") => Section::T1,
                Some("T2") => Section::T2,
                _ => return Err(FrameError::Cache(format!("line {lineno}: unknown section"))),
            };
            let k: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .filter(|&k| k >= 1 && k <= k_max)
                .ok_or_else(|| FrameError::Cache(format!("line {lineno}: bad level")))?;
            if matches!(section, Section::T1 | Section::T2) && k >= k_max {
                return Err(FrameError::Cache(format!("line {lineno}: map level out of range")));
            }
            current = Some((section, k));
            continue;
        }
        let Some((section, k)) = current else {
            return Err(FrameError::Cache(format!("line {lineno}: data before any section")));
        };
        match section {
            Section::Dtheta => {
                let v: f64 = line.parse().map_err(|e| FrameError::Cache(format!("line {lineno}: {e}")))?;
                dtheta[k - 1] = Some(v);
            }
            Section::E => {
                let v = parse_ivecs(line, lineno)?;
                if v.len() != 1 {
                    return Err(FrameError::Cache(format!("line {lineno}: expected one vector")));
                }
                directions[k - 1].push(v[0]);
            }
            Section::V => {
                let v = parse_ivecs(line, lineno)?;
                if v.len() != 3 {
                    return Err(FrameError::Cache(format!("line {lineno}: expected a frame")));
                }
                frames[k - 1].push([v[0], v[1], v[2]]);
            }
            Section::T1 => {
                let v = parse_ivecs(line, lineno)?;
                map1[k - 1].insert(v[0], v[1..].to_vec());
            }
            Section::T2 => {
                let v = parse_ivecs(line, lineno)?;
                if v.len() < 2 {
                    return Err(FrameError::Cache(format!("line {lineno}: missing map key")));
                }
                map2[k - 1].insert((v[0], v[1]), v[2..].to_vec());
            }
        }
    }

    let mut levels = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let dt = dtheta[k - 1].ok_or_else(|| FrameError::Cache(format!("missing dtheta for level {k}")))?;
        if frames[k - 1].is_empty() || directions[k - 1].is_empty() {
            return Err(FrameError::Cache(format!("level {k} is empty")));
        }
        levels.push(FrameSet { k, frames: std::mem::take(&mut frames[k - 1]), dtheta: dt });
    }
    for k in 1..k_max {
        if map1[k - 1].is_empty() || map2[k - 1].is_empty() {
            return Err(FrameError::Cache(format!("alignment maps missing for level {k}")));
        }
    }
    let directions = directions.into_iter().enumerate().map(|(i, d)| DirectionSet { k: i + 1, directions: d }).collect();
    Ok(FrameHierarchy { k_max, directions, levels, map1, map2 })
}
