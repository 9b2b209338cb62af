//! Closed argument schemas for tools.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value as Json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgType {
    Str,
    Int,
    Float,
    Bool,
    StrList,
    IntList,
    FloatList,
    /// `[[x, y], ...]`
    FloatPairs,
    /// `[[x, y, z], ...]`
    FloatTriples,
    /// `[[angle, "axis"], ...]`
    Rotations,
    /// Flat object of scalar values.
    Dict,
    Any,
}

impl fmt::Display for ArgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArgType::Str => "str",
            ArgType::Int => "int",
            ArgType::Float => "float",
            ArgType::Bool => "bool",
            ArgType::StrList => "list of str",
            ArgType::IntList => "list of int",
            ArgType::FloatList => "list of float",
            ArgType::FloatPairs => "list of [float, float]",
            ArgType::FloatTriples => "list of [float, float, float]",
            ArgType::Rotations => "list of [float, str]",
            ArgType::Dict => "flat dict",
            ArgType::Any => "any",
        })
    }
}

fn is_int(v: &Json) -> bool {
    v.is_i64() || v.is_u64()
}

fn is_float(v: &Json) -> bool {
    v.as_f64().is_some_and(f64::is_finite)
}

fn list_of(v: &Json, n: Option<usize>, item: impl Fn(&Json) -> bool) -> bool {
    v.as_array()
        .is_some_and(|a| a.iter().all(|x| match n {
            None => item(x),
            Some(n) => x.as_array().is_some_and(|t| t.len() == n && t.iter().all(&item)),
        }))
}

impl ArgType {
    pub fn accepts(self, v: &Json) -> bool {
        match self {
            ArgType::Str => v.is_string(),
            ArgType::Int => is_int(v),
            ArgType::Float => is_float(v),
            ArgType::Bool => v.is_boolean(),
            ArgType::StrList => list_of(v, None, Json::is_string),
            ArgType::IntList => list_of(v, None, is_int),
            ArgType::FloatList => list_of(v, None, is_float),
            ArgType::FloatPairs => list_of(v, Some(2), is_float),
            ArgType::FloatTriples => list_of(v, Some(3), is_float),
            ArgType::Rotations => v.as_array().is_some_and(|a| {
                a.iter().all(|r| {
                    r.as_array()
                        .is_some_and(|t| t.len() == 2 && is_float(&t[0]) && t[1].is_string())
                })
            }),
            ArgType::Dict => v
                .as_object()
                .is_some_and(|o| o.values().all(|x| x.is_string() || is_float(x) || x.is_boolean())),
            ArgType::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub ty: ArgType,
    pub required: bool,
    pub default: Option<Json>,
    pub doc: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: &'static str,
    pub doc: &'static str,
    pub params: Vec<ParamSpec>,
    pub result: &'static str,
}

impl ToolSpec {
    pub fn new(name: &'static str, doc: &'static str, result: &'static str) -> Self {
        ToolSpec {
            name,
            doc,
            params: Vec::new(),
            result,
        }
    }

    pub fn param(mut self, name: &'static str, ty: ArgType, doc: &'static str) -> Self {
        self.params.push(ParamSpec {
            name,
            ty,
            required: true,
            default: None,
            doc,
        });
        self
    }

    /// Optional parameter; `default` of `None` leaves it absent.
    pub fn optional(mut self, name: &'static str, ty: ArgType, default: Option<Json>, doc: &'static str) -> Self {
        self.params.push(ParamSpec {
            name,
            ty,
            required: false,
            default,
            doc,
        });
        self
    }

    /// Check a call against the schema and fill defaults.
    pub fn validate(&self, args: &Json) -> Result<Args, String> {
        let empty = serde_json::Map::new();
        let obj = match args {
            Json::Null => &empty,
            Json::Object(o) => o,
            other => return Err(format!("{}: arguments must be an object, got {other}", self.name)),
        };
        let mut unknown: Vec<&str> = obj
            .keys()
            .map(String::as_str)
            .filter(|k| !self.params.iter().any(|p| p.name == *k))
            .collect();
        if !unknown.is_empty() {
            unknown.sort_unstable();
            let allowed: Vec<&str> = self.params.iter().map(|p| p.name).collect();
            return Err(format!(
                "{}: unknown argument(s) {}; accepted: {}",
                self.name,
                unknown.join(", "),
                if allowed.is_empty() { "none".to_string() } else { allowed.join(", ") }
            ));
        }
        let mut out = BTreeMap::new();
        for p in &self.params {
            match obj.get(p.name) {
                Some(v) if !v.is_null() => {
                    if !p.ty.accepts(v) {
                        return Err(format!("{}: argument {} must be {} (got {v})", self.name, p.name, p.ty));
                    }
                    out.insert(p.name.to_string(), v.clone());
                }
                _ if p.required => return Err(format!("{}: missing required argument {} ({})", self.name, p.name, p.ty)),
                _ => {
                    if let Some(d) = &p.default {
                        out.insert(p.name.to_string(), d.clone());
                    }
                }
            }
        }
        Ok(Args(out))
    }

    /// One-paragraph description used in prompts and listings.
    pub fn describe(&self) -> String {
        let mut s = format!("{}: {}\n", self.name, self.doc);
        if self.params.is_empty() {
            s.push_str("  (no arguments)\n");
        }
        for p in &self.params {
            let opt = match (&p.required, &p.default) {
                (true, _) => String::new(),
                (false, Some(d)) => format!(", default {d}"),
                (false, None) => ", optional".to_string(),
            };
            s.push_str(&format!("  {} ({}{opt}): {}\n", p.name, p.ty, p.doc));
        }
        s
    }
}

/// Validated arguments. Accessors panic only on schema/implementation mismatch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Args(BTreeMap<String, Json>);

impl Args {
    pub fn get(&self, name: &str) -> Option<&Json> {
        self.0.get(name)
    }

    fn must(&self, name: &str) -> &Json {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("argument {name} not in the validated set"))
    }

    pub fn str(&self, name: &str) -> &str {
        self.must(name).as_str().expect("validated str")
    }

    pub fn opt_str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(Json::as_str)
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.must(name).as_f64().expect("validated float")
    }

    pub fn opt_f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Json::as_f64)
    }

    pub fn i64(&self, name: &str) -> i64 {
        self.must(name).as_i64().expect("validated int")
    }

    pub fn opt_i64(&self, name: &str) -> Option<i64> {
        self.get(name).and_then(Json::as_i64)
    }

    pub fn bool(&self, name: &str) -> bool {
        self.must(name).as_bool().expect("validated bool")
    }

    pub fn json(&self, name: &str) -> &Json {
        self.must(name)
    }

    pub fn str_list(&self, name: &str) -> Vec<String> {
        self.list(name).iter().map(|v| v.as_str().expect("validated").to_string()).collect()
    }

    pub fn f64_list(&self, name: &str) -> Vec<f64> {
        self.list(name).iter().map(|v| v.as_f64().expect("validated")).collect()
    }

    pub fn i64_list(&self, name: &str) -> Vec<i64> {
        self.list(name).iter().map(|v| v.as_i64().expect("validated")).collect()
    }

    pub fn pairs(&self, name: &str) -> Vec<[f64; 2]> {
        self.tuples(name).map(|t| [t[0], t[1]]).collect()
    }

    pub fn triples(&self, name: &str) -> Vec<[f64; 3]> {
        self.tuples(name).map(|t| [t[0], t[1], t[2]]).collect()
    }

    pub fn rotations(&self, name: &str) -> Vec<(f64, String)> {
        self.list(name)
            .iter()
            .map(|r| {
                let t = r.as_array().expect("validated");
                (t[0].as_f64().expect("validated"), t[1].as_str().expect("validated").to_string())
            })
            .collect()
    }

    /// Dict values as text: strings verbatim, numbers and booleans in JSON form.
    pub fn dict(&self, name: &str) -> BTreeMap<String, String> {
        self.must(name)
            .as_object()
            .expect("validated dict")
            .iter()
            .map(|(k, v)| {
                let text = match v {
                    Json::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), text)
            })
            .collect()
    }

    fn list(&self, name: &str) -> &[Json] {
        self.must(name).as_array().expect("validated list")
    }

    fn tuples<'a>(&'a self, name: &str) -> impl Iterator<Item = Vec<f64>> + 'a {
        self.list(name)
            .iter()
            .map(|t| t.as_array().expect("validated").iter().map(|x| x.as_f64().expect("validated")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn spec() -> ToolSpec {
        ToolSpec::new("t", "test tool", "str")
            .param("name", ArgType::Str, "a name")
            .param("sites", ArgType::FloatPairs, "sites")
            .optional("overwrite", ArgType::Bool, Some(json!(false)), "flag")
            .optional("b", ArgType::Float, None, "maybe")
    }

    #[test]
    fn defaults_are_filled() {
        let a = spec().validate(&json!({"name": "x", "sites": [[0.0, 1.0]]})).unwrap();
        assert!(!a.bool("overwrite"));
        assert_eq!(a.opt_f64("b"), None);
        assert_eq!(a.pairs("sites"), vec![[0.0, 1.0]]);
    }

    #[test]
    fn unknown_and_missing_and_mistyped() {
        let e = spec().validate(&json!({"name": "x", "sites": [], "colour": 1})).unwrap_err();
        assert!(e.contains("unknown argument(s) colour"), "{e}");
        let e = spec().validate(&json!({"sites": []})).unwrap_err();
        assert!(e.contains("missing required argument name"), "{e}");
        let e = spec().validate(&json!({"name": 3, "sites": []})).unwrap_err();
        assert!(e.contains("must be str"), "{e}");
        assert!(spec().validate(&json!({"name": "x", "sites": [[1.0]]})).is_err());
        assert!(spec().validate(&json!([1])).is_err());
    }

    #[test]
    fn type_acceptance() {
        assert!(ArgType::Int.accepts(&json!(3)));
        assert!(!ArgType::Int.accepts(&json!(3.5)));
        assert!(ArgType::Float.accepts(&json!(3)));
        assert!(ArgType::Rotations.accepts(&json!([[90.0, "x"]])));
        assert!(!ArgType::Rotations.accepts(&json!([["x", 90.0]])));
        assert!(ArgType::Dict.accepts(&json!({"a": 1, "b": "s", "c": true})));
        assert!(!ArgType::Dict.accepts(&json!({"a": [1]})));
        assert!(ArgType::FloatTriples.accepts(&json!([[0, 0, 1.1]])));
    }

    #[test]
    fn null_means_no_arguments() {
        let s = ToolSpec::new("inspect", "d", "list");
        assert!(s.validate(&Json::Null).is_ok());
        assert!(s.validate(&json!({"x": 1})).unwrap_err().contains("accepted: none"));
    }
}
