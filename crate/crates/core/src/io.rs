//! Binary and CSV artifacts for paths, sufficient statistics and diagnostics.
//!
//! Binary layouts are little-endian:
//!
//! ```text
//! path:  "EBDPATH1" | u64 n | f64 T | f64 dt | u64 seed | u32 len | drift utf8 | n × f64
//! stats: "EBDSTAT1" | u64 J | f64 T | f64 dt | J × f64 b | J(J+1)/2 × f64 G (lower, row-major)
//! ```
//!
//! CSV files start with `# key=value` metadata lines followed by a header
//! row. Floats are written with 17 significant digits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::{DensityProfile, EquivalenceReport};
use crate::error::{Error, Result};
use crate::path_stats::SuffStats;
use crate::sde_sim::SamplePath;

const PATH_MAGIC: &[u8; 8] = b"EBDPATH1";
const STATS_MAGIC: &[u8; 8] = b"EBDSTAT1";

/// Full-precision decimal (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8, _>(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8, _>(r)?))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_path_bin<W: Write>(path: &SamplePath, mut w: W) -> Result<()> {
    w.write_all(PATH_MAGIC)?;
    w.write_all(&(path.values.len() as u64).to_le_bytes())?;
    w.write_all(&path.horizon.to_le_bytes())?;
    w.write_all(&path.dt.to_le_bytes())?;
    w.write_all(&path.seed.to_le_bytes())?;
    let desc = path.drift_id.as_bytes();
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(desc)?;
    for v in &path.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_path_bin<R: Read>(mut r: R) -> Result<SamplePath> {
    if &read_exact::<8, _>(&mut r)? != PATH_MAGIC {
        return Err(Error::Format("not a path file (bad magic)".into()));
    }
    let n = read_u64(&mut r)? as usize;
    let horizon = read_f64(&mut r)?;
    let dt = read_f64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let len = u32::from_le_bytes(read_exact::<4, _>(&mut r)?) as usize;
    let mut desc = vec![0u8; len];
    r.read_exact(&mut desc)?;
    let drift_id =
        String::from_utf8(desc).map_err(|_| Error::Format("drift descriptor not UTF-8".into()))?;
    let values = read_f64s(&mut r, n)?;
    SamplePath::from_values(values, dt, horizon, seed, drift_id)
}

pub fn write_path_csv<W: Write>(path: &SamplePath, mut w: W) -> Result<()> {
    writeln!(w, "# T={}", fmt_f64(path.horizon))?;
    writeln!(w, "# dt={}", fmt_f64(path.dt))?;
    writeln!(w, "# seed={}", path.seed)?;
    writeln!(w, "# drift={}", path.drift_id)?;
    writeln!(w, "index,x")?;
    for (i, v) in path.values.iter().enumerate() {
        writeln!(w, "{i},{}", fmt_f64(*v))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}

/// Split leading `# key=value` lines from the remaining rows.
fn split_metadata<R: BufRead>(r: R) -> Result<(Vec<(String, String)>, Vec<String>)> {
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once('=') {
                meta.push((k.to_string(), v.to_string()));
                continue;
            }
        }
        if !line.trim().is_empty() {
            rows.push(line);
        }
    }
    Ok((meta, rows))
}

fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Format(format!("missing metadata key {key}")))
}

pub fn read_path_csv<R: BufRead>(r: R) -> Result<SamplePath> {
    let (meta, rows) = split_metadata(r)?;
    let horizon = parse_f64(meta_value(&meta, "T")?, "T")?;
    let dt = parse_f64(meta_value(&meta, "dt")?, "dt")?;
    let seed = meta_value(&meta, "seed")?
        .parse()
        .map_err(|_| Error::Format("bad seed".into()))?;
    let drift = meta_value(&meta, "drift")?.to_string();
    let mut it = rows.iter();
    if it.next().map(|h| h.trim()) != Some("index,x") {
        return Err(Error::Format("expected header index,x".into()));
    }
    let values = it
        .map(|row| {
            let (_, x) = row
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad row {row:?}")))?;
            parse_f64(x, "x")
        })
        .collect::<Result<Vec<_>>>()?;
    SamplePath::from_values(values, dt, horizon, seed, drift)
}

pub fn write_stats_bin<W: Write>(stats: &SuffStats, mut w: W) -> Result<()> {
    let j = stats.truncation();
    w.write_all(STATS_MAGIC)?;
    w.write_all(&(j as u64).to_le_bytes())?;
    w.write_all(&stats.horizon.to_le_bytes())?;
    w.write_all(&stats.dt.to_le_bytes())?;
    for v in stats.b.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for r in 0..j {
        for c in 0..=r {
            w.write_all(&stats.gram[(r, c)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_bin<R: Read>(mut r: R) -> Result<SuffStats> {
    if &read_exact::<8, _>(&mut r)? != STATS_MAGIC {
        return Err(Error::Format("not a stats file (bad magic)".into()));
    }
    let j = read_u64(&mut r)? as usize;
    if j == 0 || j > 1 << 20 {
        return Err(Error::Format(format!("implausible truncation J = {j}")));
    }
    let horizon = read_f64(&mut r)?;
    let dt = read_f64(&mut r)?;
    let b = read_f64s(&mut r, j)?;
    let packed = read_f64s(&mut r, j * (j + 1) / 2)?;
    let mut gram = DMatrix::zeros(j, j);
    let mut idx = 0;
    for row in 0..j {
        for col in 0..=row {
            gram[(row, col)] = packed[idx];
            gram[(col, row)] = packed[idx];
            idx += 1;
        }
    }
    SuffStats::new(DVector::from_vec(b), gram, horizon, dt)
}

pub fn write_stats_csv<W: Write>(stats: &SuffStats, mut w: W) -> Result<()> {
    let j = stats.truncation();
    writeln!(w, "# T={}", fmt_f64(stats.horizon))?;
    writeln!(w, "# dt={}", fmt_f64(stats.dt))?;
    writeln!(w, "# J={j}")?;
    writeln!(w, "kind,row,col,value")?;
    for (k, v) in stats.b.iter().enumerate() {
        writeln!(w, "b,{k},,{}", fmt_f64(*v))?;
    }
    for r in 0..j {
        for c in 0..=r {
            writeln!(w, "G,{r},{c},{}", fmt_f64(stats.gram[(r, c)]))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: BufRead>(r: R) -> Result<SuffStats> {
    let (meta, rows) = split_metadata(r)?;
    let horizon = parse_f64(meta_value(&meta, "T")?, "T")?;
    let dt = parse_f64(meta_value(&meta, "dt")?, "dt")?;
    let j: usize = meta_value(&meta, "J")?
        .parse()
        .map_err(|_| Error::Format("bad J".into()))?;
    let mut b = DVector::zeros(j);
    let mut gram = DMatrix::zeros(j, j);
    for row in rows.iter().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("bad row {row:?}")));
        }
        let idx = |s: &str| -> Result<usize> {
            let i: usize = s.parse().map_err(|_| Error::Format(format!("bad index {s:?}")))?;
            if i >= j {
                return Err(Error::Format(format!("index {i} out of range")));
            }
            Ok(i)
        };
        let v = parse_f64(fields[3], "value")?;
        match fields[0] {
            "b" => b[idx(fields[1])?] = v,
            "G" => {
                let (r, c) = (idx(fields[1])?, idx(fields[2])?);
                gram[(r, c)] = v;
                gram[(c, r)] = v;
            }
            other => return Err(Error::Format(format!("unknown row kind {other:?}"))),
        }
    }
    SuffStats::new(b, gram, horizon, dt)
}

pub fn write_density_csv<W: Write>(profile: &DensityProfile, mut w: W) -> Result<()> {
    writeln!(w, "# c_rho={}", fmt_f64(profile.c_rho))?;
    writeln!(w, "# C_rho={}", fmt_f64(profile.big_c_rho))?;
    writeln!(w, "x,rho")?;
    for (x, r) in profile.grid.iter().zip(&profile.rho) {
        writeln!(w, "{},{}", fmt_f64(*x), fmt_f64(*r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_equivalence_csv<W: Write>(report: &EquivalenceReport, mut w: W) -> Result<()> {
    writeln!(w, "# T={}", fmt_f64(report.horizon))?;
    writeln!(w, "# c_rho={}", fmt_f64(report.c_rho))?;
    writeln!(w, "# C_rho={}", fmt_f64(report.big_c_rho))?;
    writeln!(w, "# min_ratio={}", fmt_f64(report.min_ratio))?;
    writeln!(w, "# max_ratio={}", fmt_f64(report.max_ratio))?;
    writeln!(w, "# fraction_in_band={}", fmt_f64(report.fraction_in_band))?;
    writeln!(w, "# skipped={}", report.skipped)?;
    writeln!(w, "pair,ratio,in_band")?;
    for (i, r) in report.ratios.iter().enumerate() {
        let in_band = *r >= report.c_rho && *r <= report.big_c_rho;
        writeln!(w, "{i},{},{in_band}", fmt_f64(*r))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a path, choosing the format by extension (`.csv` or binary).
pub fn load_path(file: &Path) -> Result<SamplePath> {
    let f = BufReader::new(File::open(file)?);
    if file.extension().is_some_and(|e| e == "csv") {
        read_path_csv(f)
    } else {
        read_path_bin(f)
    }
}

pub fn save_path(path: &SamplePath, file: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(file)?);
    if file.extension().is_some_and(|e| e == "csv") {
        write_path_csv(path, w)
    } else {
        write_path_bin(path, w)
    }
}

/// Read stats, choosing the format by extension (`.csv` or binary).
pub fn load_stats(file: &Path) -> Result<SuffStats> {
    let f = BufReader::new(File::open(file)?);
    if file.extension().is_some_and(|e| e == "csv") {
        read_stats_csv(f)
    } else {
        read_stats_bin(f)
    }
}

pub fn save_stats(stats: &SuffStats, file: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(file)?);
    if file.extension().is_some_and(|e| e == "csv") {
        write_stats_csv(stats, w)
    } else {
        write_stats_bin(stats, w)
    }
}
