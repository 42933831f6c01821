//! Byte quantities: decimal display, decimal or binary input.

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid size {0:?}: expected bytes or a number with B, kB, MB, GB, TB, KiB, MiB, GiB or TiB")]
pub struct SizeParseError(pub String);

/// Parses `"10GB"`, `"500 MB"`, `"4MiB"`, `"1.5GB"` or a bare byte count.
/// Decimal suffixes are powers of 1000, `i` suffixes powers of 1024.
pub fn parse_byte_size(text: &str) -> Result<u64, SizeParseError> {
    let err = || SizeParseError(text.to_string());
    let t = text.trim();
    let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(t.len());
    let (number, suffix) = t.split_at(split);
    if number.is_empty() {
        return Err(err());
    }
    let multiplier: u64 = match suffix.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" => 1_000,
        "m" | "mb" => 1_000_000,
        "g" | "gb" => 1_000_000_000,
        "t" | "tb" => 1_000_000_000_000,
        "kib" => 1 << 10,
        "mib" => 1 << 20,
        "gib" => 1 << 30,
        "tib" => 1 << 40,
        _ => return Err(err()),
    };
    if let Ok(whole) = number.parse::<u64>() {
        return whole.checked_mul(multiplier).ok_or_else(err);
    }
    let value: f64 = number.parse().map_err(|_| err())?;
    let bytes = (value * multiplier as f64).round();
    if !bytes.is_finite() || bytes < 0.0 || bytes > u64::MAX as f64 {
        return Err(err());
    }
    Ok(bytes as u64)
}

/// Decimal rendering: kB and MB with one decimal, GB and TB with two.
pub fn format_bytes(bytes: f64) -> String {
    let abs = bytes.abs();
    if abs >= 1e12 {
        format!("{:.2} TB", bytes / 1e12)
    } else if abs >= 1e9 {
        format!("{:.2} GB", bytes / 1e9)
    } else if abs >= 1e6 {
        format!("{:.1} MB", bytes / 1e6)
    } else if abs >= 1e3 {
        format!("{:.1} kB", bytes / 1e3)
    } else {
        format!("{} B", bytes.round() as i64)
    }
}

/// Like [`format_bytes`] but renders a missing value as `-`.
pub fn format_opt_bytes(bytes: Option<f64>) -> String {
    bytes.map(format_bytes).unwrap_or_else(|| "-".to_string())
}
