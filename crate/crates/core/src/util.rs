//! Small shared helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-item seed so parallel and serial runs draw identical streams.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    seed ^ stable_hash(key)
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Lossless text form of f64 values: 16 lowercase hex digits of the bit
/// pattern per value.
pub fn f64s_to_hex(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 16);
    for v in values {
        s.push_str(&format!("{:016x}", v.to_bits()));
    }
    s
}

pub fn hex_to_f64s(s: &str) -> Option<Vec<f64>> {
    if s.len() % 16 != 0 || !s.is_ascii() {
        return None;
    }
    (0..s.len() / 16)
        .map(|i| u64::from_str_radix(&s[i * 16..(i + 1) * 16], 16).ok().map(f64::from_bits))
        .collect()
}
