//! Manifest text format, the contract with external training loops:
//!
//! ```text
//! #dcscene-manifest v1
//! #stage=<k> mode=<mode> seed=<u64> digest=<16 lowercase hex digits>
//! <sample_id>
//! ...
//! ```
//!
//! Every line, including the last, ends with `\n`.

use std::fmt::Write as _;
use std::path::Path;

use dcscene_core::{Manifest, ManifestCheck, QualityPoint, SampleId};

use crate::error::{Error, LineError, Result};

pub const MAGIC_LINE: &str = "#dcscene-manifest v1";

pub fn render(m: &Manifest) -> String {
    let mut out = String::with_capacity(64 + m.entries.iter().map(|e| e.as_str().len() + 1).sum::<usize>());
    out.push_str(MAGIC_LINE);
    out.push('\n');
    writeln!(
        out,
        "#stage={} mode={} seed={} digest={:016x}",
        m.stage_k, m.mode, m.seed, m.pool_digest
    )
    .unwrap();
    for id in &m.entries {
        out.push_str(id.as_str());
        out.push('\n');
    }
    out
}

fn malformed(line: usize, msg: impl Into<String>) -> (usize, LineError) {
    (line, LineError::Malformed(msg.into()))
}

/// Parses manifest text. Duplicate entries are allowed here so that
/// verification can report them.
pub fn parse(text: &str) -> Result<Manifest, (usize, LineError)> {
    let mut lines = text.split_terminator('\n');
    if lines.next() != Some(MAGIC_LINE) {
        return Err(malformed(1, format!("expected {MAGIC_LINE:?}")));
    }
    let header = lines
        .next()
        .ok_or_else(|| malformed(2, "missing stage header"))?;
    let fields = header
        .strip_prefix('#')
        .ok_or_else(|| malformed(2, "stage header must start with '#'"))?;
    let mut parts = fields.split(' ');
    let mut field = |name: &str| {
        parts
            .next()
            .and_then(|p| p.strip_prefix(name))
            .and_then(|p| p.strip_prefix('='))
            .ok_or_else(|| malformed(2, format!("expected field {name}")))
    };
    let stage_k = field("stage")?
        .parse::<usize>()
        .map_err(|e| malformed(2, format!("stage: {e}")))?;
    let mode = field("mode")?.to_string();
    let seed = field("seed")?
        .parse::<u64>()
        .map_err(|e| malformed(2, format!("seed: {e}")))?;
    let digest_hex = field("digest")?;
    if digest_hex.len() != 16 || !digest_hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(malformed(2, "digest must be 16 lowercase hex digits"));
    }
    let pool_digest = u64::from_str_radix(digest_hex, 16).map_err(|e| malformed(2, e.to_string()))?;
    if mode.is_empty() || parts.next().is_some() {
        return Err(malformed(2, "unexpected stage header layout"));
    }

    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let id = SampleId::new(line).map_err(|e| malformed(i + 3, e.to_string()))?;
        entries.push(id);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(malformed(entries.len() + 2, "missing final newline"));
    }
    Ok(Manifest {
        stage_k,
        seed,
        mode,
        pool_digest,
        entries,
    })
}

pub fn write_manifest(m: &Manifest, path: &Path) -> Result<()> {
    std::fs::write(path, render(m)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|(line, source)| Error::Line {
        path: path.to_path_buf(),
        line,
        source,
    })
}

/// Shuffles `pool` into a stage manifest and writes it to `path`.
pub fn emit_manifest(pool: &[QualityPoint], stage_k: usize, mode: &str, seed: u64, path: &Path) -> Result<Manifest> {
    let manifest = Manifest::from_pool(pool, stage_k, mode, seed)?;
    write_manifest(&manifest, path)?;
    Ok(manifest)
}

pub fn verify_manifest(path: &Path, pool: &[QualityPoint]) -> Result<ManifestCheck> {
    Ok(read_manifest(path)?.check(pool))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_manifest() {
        let m = Manifest::from_ids(&[], 0, "fraction", 42).unwrap();
        let text = render(&m);
        assert_eq!(text, "#dcscene-manifest v1\n#stage=0 mode=fraction seed=42 digest=cbf29ce484222325\n");
        assert_eq!(parse(&text).unwrap(), m);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert_eq!(parse("nope\n").unwrap_err().0, 1);
        assert_eq!(parse("#dcscene-manifest v1\n#stage=x mode=f seed=1 digest=0000000000000000\n").unwrap_err().0, 2);
        assert_eq!(parse("#dcscene-manifest v1\n#stage=0 mode=f seed=1 digest=00000000000000\n").unwrap_err().0, 2);
        let bad_entry = "#dcscene-manifest v1\n#stage=0 mode=f seed=1 digest=0000000000000000\na\n\n";
        assert_eq!(parse(bad_entry).unwrap_err().0, 4);
    }

    #[test]
    fn duplicates_parse() {
        let text = "#dcscene-manifest v1\n#stage=1 mode=fraction seed=1 digest=0000000000000000\na\na\n";
        assert_eq!(parse(text).unwrap().entries.len(), 2);
    }
}
