use std::fmt;

use serde::{Deserialize, Serialize};

/// Kind of a module parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Int,
    Float,
    String,
    Bool,
    /// Enumeration over the listed tokens.
    Enum(Vec<String>),
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueKind::Int => f.write_str("int"),
            ValueKind::Float => f.write_str("float"),
            ValueKind::String => f.write_str("string"),
            ValueKind::Bool => f.write_str("bool"),
            ValueKind::Enum(tokens) => write!(f, "enum{{{}}}", tokens.join(",")),
        }
    }
}

/// A typed parameter value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    String(String),
    Bool(bool),
    Enum(String),
}

impl ParamValue {
    /// Canonical text form. Floats use the shortest representation that
    /// round-trips; negative zero is folded into zero.
    pub fn canonical(&self) -> String {
        match self {
            ParamValue::Int(v) => v.to_string(),
            ParamValue::Float(v) => {
                let v = if *v == 0.0 { 0.0 } else { *v };
                format!("{v:?}")
            }
            ParamValue::String(s) | ParamValue::Enum(s) => s.clone(),
            ParamValue::Bool(b) => b.to_string(),
        }
    }

    pub(crate) fn tag(&self) -> &'static str {
        match self {
            ParamValue::Int(_) => "int",
            ParamValue::Float(_) => "float",
            ParamValue::String(_) => "string",
            ParamValue::Bool(_) => "bool",
            ParamValue::Enum(_) => "enum",
        }
    }

    pub fn conforms_to(&self, kind: &ValueKind) -> bool {
        match (self, kind) {
            (ParamValue::Float(v), ValueKind::Float) => v.is_finite(),
            (ParamValue::Int(_), ValueKind::Int)
            | (ParamValue::String(_), ValueKind::String)
            | (ParamValue::Bool(_), ValueKind::Bool) => true,
            (ParamValue::Enum(tok), ValueKind::Enum(tokens)) => tokens.contains(tok),
            _ => false,
        }
    }

    /// Interprets a plain JSON value under `kind`. Integers are accepted for
    /// float parameters; nothing else is coerced.
    pub fn from_json(value: &serde_json::Value, kind: &ValueKind) -> Option<ParamValue> {
        use serde_json::Value;
        let v = match (kind, value) {
            (ValueKind::Int, Value::Number(n)) => ParamValue::Int(n.as_i64()?),
            (ValueKind::Float, Value::Number(n)) => ParamValue::Float(n.as_f64()?),
            (ValueKind::String, Value::String(s)) => ParamValue::String(s.clone()),
            (ValueKind::Bool, Value::Bool(b)) => ParamValue::Bool(*b),
            (ValueKind::Enum(tokens), Value::String(s)) if tokens.contains(s) => {
                ParamValue::Enum(s.clone())
            }
            _ => return None,
        };
        v.conforms_to(kind).then_some(v)
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            ParamValue::Int(v) => (*v).into(),
            ParamValue::Float(v) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            ParamValue::String(s) | ParamValue::Enum(s) => s.clone().into(),
            ParamValue::Bool(b) => (*b).into(),
        }
    }
}

/// Values are equal when their kind tag and canonical form agree.
impl PartialEq for ParamValue {
    fn eq(&self, other: &Self) -> bool {
        self.tag() == other.tag() && self.canonical() == other.canonical()
    }
}

impl Eq for ParamValue {}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}
