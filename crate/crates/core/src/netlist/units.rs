//! SI-suffixed number parsing and exact canonical formatting.

const SUFFIXES: [(&str, f64); 6] = [
    ("meg", 1e6),
    ("k", 1e3),
    ("m", 1e-3),
    ("u", 1e-6),
    ("n", 1e-9),
    ("p", 1e-12),
];

/// Why a numeric token was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumberError {
    BadSuffix,
    NotFinite,
    Malformed,
}

fn split_suffix(lower: &str) -> (&str, f64) {
    for (suffix, scale) in SUFFIXES {
        if let Some(mantissa) = lower.strip_suffix(suffix) {
            // "1e-3m" is fine, but an exponent marker must not be eaten as a suffix
            if !mantissa.is_empty() {
                return (mantissa, scale);
            }
        }
    }
    (lower, 1.0)
}

/// Parse a number with an optional SI suffix (`p n u m k meg`), case-insensitive.
pub fn parse_si(token: &str) -> Result<f64, NumberError> {
    let lower = token.to_ascii_lowercase();
    let (mantissa, scale) = split_suffix(&lower);
    let numeric = |c: char| c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e');
    if mantissa.is_empty() || !mantissa.starts_with(|c: char| c.is_ascii_digit() || matches!(c, '+' | '-' | '.')) {
        return Err(NumberError::Malformed);
    }
    if let Some(bad) = mantissa.find(|c: char| !numeric(c)) {
        // digits followed by letters: a unit suffix we do not know
        return Err(if mantissa[..bad].parse::<f64>().is_ok() {
            NumberError::BadSuffix
        } else {
            NumberError::Malformed
        });
    }
    let value: f64 = mantissa.parse().map_err(|_| NumberError::Malformed)?;
    // dividing by an exact power of ten rounds once, so "150n" == 150e-9
    let scaled = if scale >= 1.0 { value * scale } else { value / scale.recip().round() };
    if scaled.is_finite() {
        Ok(scaled)
    } else {
        Err(NumberError::NotFinite)
    }
}

/// Shortest text that [`parse_si`] maps back to exactly `value`.
pub fn format_si(value: f64) -> String {
    let mut best = format!("{value:e}");
    // shortest wins; on a tie avoid a leading zero ("150n" over "0.15u")
    let rank = |t: &str| (t.len(), t.trim_start_matches('-').starts_with("0."));
    let mut consider = |text: String| {
        if parse_si(&text) == Ok(value) && rank(&text) < rank(&best) {
            best = text;
        }
    };
    consider(format!("{value}"));
    for (suffix, scale) in SUFFIXES {
        let mantissa = if scale >= 1.0 { value / scale } else { value * scale.recip().round() };
        consider(format!("{mantissa}{suffix}"));
        consider(format!("{mantissa:e}{suffix}"));
    }
    best
}
