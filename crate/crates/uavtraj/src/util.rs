//! Small shared plumbing: stable hashing, per-index RNG streams and the flat
//! key/value config format used by the generation and training configs.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a, used wherever a hash must be stable across platforms and builds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Independent deterministic RNG stream for (seed, stream index). Streams
/// with different indices never overlap, so work items can run in any order
/// or in parallel without changing results.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are ignored.
/// Returns (line number, key, value) triples in file order.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>, String> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got `{raw}`", idx + 1))?;
        out.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_field<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("line {line}: bad value for `{key}`: {e}"))
}
