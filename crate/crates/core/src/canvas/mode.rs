use std::fmt;
use std::str::FromStr;

use super::Value;

/// Validation schemas for format-restricted keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// List of bare filenames (no directory part) with a known artifact extension.
    FilenameList,
    /// List of finite numbers.
    NumberList,
}

const FILENAME_EXTENSIONS: &[&str] = &["pwi", "pwo", "traj", "res", "json", "csv", "log"];

impl Schema {
    pub fn id(&self) -> &'static str {
        match self {
            Schema::FilenameList => "filename-list",
            Schema::NumberList => "number-list",
        }
    }

    pub fn validate(&self, value: &Value) -> Result<(), String> {
        let items = value
            .as_list()
            .ok_or_else(|| format!("expected a list, got {}", value.kind()))?;
        match self {
            Schema::FilenameList => {
                for (i, item) in items.iter().enumerate() {
                    let name = item
                        .as_str()
                        .ok_or_else(|| format!("element {i} is a {}, not a filename", item.kind()))?;
                    if !is_well_formed_filename(name) {
                        return Err(format!("element {i} ({name:?}) is not a well-formed filename"));
                    }
                }
                Ok(())
            }
            Schema::NumberList => {
                for (i, item) in items.iter().enumerate() {
                    match item {
                        Value::Num(x) if x.is_finite() => {}
                        other => return Err(format!("element {i} is a {}, not a number", other.kind())),
                    }
                }
                Ok(())
            }
        }
    }
}

fn is_well_formed_filename(name: &str) -> bool {
    let Some((stem, ext)) = name.rsplit_once('.') else {
        return false;
    };
    !stem.is_empty()
        && stem
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '+'))
        && FILENAME_EXTENSIONS.contains(&ext)
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filename-list" => Ok(Schema::FilenameList),
            "number-list" => Ok(Schema::NumberList),
            other => Err(format!("unknown schema id {other:?}")),
        }
    }
}

/// Access mode of a canvas entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    Normal,
    ReadOnly,
    /// Only the actor that created the key may overwrite it.
    Protected,
    FormatRestricted(Schema),
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessMode::Normal => write!(f, "normal"),
            AccessMode::ReadOnly => write!(f, "read-only"),
            AccessMode::Protected => write!(f, "protected"),
            AccessMode::FormatRestricted(s) => write!(f, "format-restricted({})", s.id()),
        }
    }
}

impl FromStr for AccessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(AccessMode::Normal),
            "read-only" => Ok(AccessMode::ReadOnly),
            "protected" => Ok(AccessMode::Protected),
            other => {
                let inner = other
                    .strip_prefix("format-restricted(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| format!("unknown access mode {other:?}"))?;
                Ok(AccessMode::FormatRestricted(inner.parse()?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filename_schema() {
        let ok = Value::str_list(["Li_conv_ecut30.pwi", "Pt111_CO.traj"]);
        assert!(Schema::FilenameList.validate(&ok).is_ok());
        let dir = Value::str_list(["work/Li.pwi"]);
        assert!(Schema::FilenameList.validate(&dir).is_err());
        let ext = Value::str_list(["Li.exe"]);
        assert!(Schema::FilenameList.validate(&ext).is_err());
        assert!(Schema::FilenameList.validate(&Value::Num(1.0)).is_err());
    }

    #[test]
    fn mode_text_round_trip() {
        for m in [
            AccessMode::Normal,
            AccessMode::ReadOnly,
            AccessMode::Protected,
            AccessMode::FormatRestricted(Schema::FilenameList),
            AccessMode::FormatRestricted(Schema::NumberList),
        ] {
            assert_eq!(m.to_string().parse::<AccessMode>().unwrap(), m);
        }
    }
}
