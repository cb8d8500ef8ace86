//! Scenario files: TOML documents deserialized into [`ScenarioConfig`].
//!
//! Every field is optional and defaults to the `point_nominal` preset.
//! Errors carry the line of the offending entry when it can be found.

use std::path::Path;

use wncs::sim::ScenarioConfig;

use crate::error::CliError;

/// Scenario files shipped with the binary, by name.
pub const BUNDLED: [(&str, &str); 3] = [
    ("point_nominal", include_str!("../scenarios/point_nominal.toml")),
    ("circle_nominal", include_str!("../scenarios/circle_nominal.toml")),
    ("eight_nominal", include_str!("../scenarios/eight_nominal.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}

/// Parses and validates `source`. `origin` prefixes error messages.
pub fn parse_scenario(source: &str, origin: &str) -> Result<ScenarioConfig, CliError> {
    let sc: ScenarioConfig = toml::from_str(source).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(source, s.start));
        let message = e.message().trim_end().to_string();
        match line {
            Some(l) => CliError::Usage(format!("{origin}:{l}: {message}")),
            None => CliError::Usage(format!("{origin}: {message}")),
        }
    })?;
    sc.validate().map_err(|e| match locate_field(source, &e.field) {
        Some(l) => CliError::Usage(format!("{origin}:{l}: invalid field `{}`: {}", e.field, e.message)),
        None => CliError::Usage(format!("{origin}: invalid field `{}`: {}", e.field, e.message)),
    })?;
    Ok(sc)
}

/// Resolves a bundled scenario name, a task shorthand (`point`, `circle`,
/// `eight`) or a file path.
pub fn load_scenario(spec: &str) -> Result<ScenarioConfig, CliError> {
    let name = match spec {
        "point" | "circle" | "eight" => format!("{spec}_nominal"),
        other => other.to_string(),
    };
    if let Some(src) = bundled(&name) {
        return parse_scenario(src, &format!("<bundled {name}>"));
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(CliError::Usage(format!("`{spec}` is neither a scenario file nor a bundled scenario")));
    }
    let source = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{spec}: {e}")))?;
    parse_scenario(&source, spec)
}

pub fn to_toml(sc: &ScenarioConfig) -> String {
    toml::to_string(sc).expect("scenario config serializes to TOML")
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// 1-based line defining the dotted field path `field` (for instance
/// `obstacles[2].radius`), or the closest enclosing entry.
pub fn locate_field(source: &str, field: &str) -> Option<usize> {
    let mut table = String::new();
    let mut array_counts: Vec<(String, usize)> = Vec::new();
    let mut best: Option<(usize, usize)> = None;
    let consider = |path: &str, line: usize, best: &mut Option<(usize, usize)>| {
        if path == field {
            return true;
        }
        let encloses = field.starts_with(path) && matches!(field.as_bytes().get(path.len()), Some(b'.') | Some(b'['));
        if encloses && best.is_none_or(|(len, _)| path.len() >= len) {
            *best = Some((path.len(), line));
        }
        false
    };
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        if let Some(name) = text.strip_prefix("[[").and_then(|t| t.split("]]").next()) {
            let name = normalize_key(name);
            let index = match array_counts.iter_mut().find(|(n, _)| *n == name) {
                Some((_, c)) => {
                    *c += 1;
                    *c - 1
                }
                None => {
                    array_counts.push((name.clone(), 1));
                    0
                }
            };
            table = format!("{name}[{index}]");
            if consider(&table, line, &mut best) {
                return Some(line);
            }
            continue;
        }
        if let Some(name) = text.strip_prefix('[').and_then(|t| t.split(']').next()) {
            table = normalize_key(name);
            if consider(&table, line, &mut best) {
                return Some(line);
            }
            continue;
        }
        if let Some((key, _)) = text.split_once('=') {
            let key = normalize_key(key);
            let path = if table.is_empty() { key } else { format!("{table}.{key}") };
            if consider(&path, line, &mut best) {
                return Some(line);
            }
        }
    }
    best.map(|(_, line)| line)
}

fn normalize_key(key: &str) -> String {
    key.split('.').map(|part| part.trim().trim_matches('"')).collect::<Vec<_>>().join(".")
}
