//! Open-schema document model.

use std::cmp::Ordering;
use std::fmt;
use std::hash::Hasher;
use std::sync::Arc;

use indexmap::IndexMap;
use serde_json::{Map as JsonMap, Number, Value as Json};

use crate::error::{EngineError, Result};
use crate::time::{format_datetime, format_duration, parse_datetime, parse_duration};

pub type Object = IndexMap<String, Value>;

const POINT_TAG: &str = "$point";
const DATETIME_TAG: &str = "$datetime";
const DURATION_TAG: &str = "$duration";

/// A 2-d point with finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    x: f64,
    y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(EngineError::malformed(format!("point coordinates must be finite, got ({x}, {y})")));
        }
        Ok(Point { x, y })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    String(String),
    Point(Point),
    /// Epoch microseconds, UTC.
    Datetime(i64),
    /// Microseconds.
    Duration(i64),
    Array(Vec<Value>),
    Object(Object),
}

impl serde::Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl Value {
    pub fn str(s: impl Into<String>) -> Value {
        Value::String(s.into())
    }

    pub fn point(x: f64, y: f64) -> Result<Value> {
        Ok(Value::Point(Point::new(x, y)?))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "boolean",
            Value::Int(_) => "int64",
            Value::Float(_) => "float64",
            Value::String(_) => "string",
            Value::Point(_) => "point",
            Value::Datetime(_) => "datetime",
            Value::Duration(_) => "duration",
            Value::Array(_) => "array",
            Value::Object(_) => "object",
        }
    }

    pub fn as_object(&self) -> Option<&Object> {
        match self {
            Value::Object(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.as_object().and_then(|o| o.get(field))
    }

    /// Follows a dotted field path through nested objects.
    pub fn get_path<'a, S: AsRef<str>>(&'a self, path: &[S]) -> Option<&'a Value> {
        let mut cur = self;
        for seg in path {
            cur = cur.get(seg.as_ref())?;
        }
        Some(cur)
    }

    /// Coerces points and 2-element numeric arrays into a point.
    pub fn as_point(&self) -> Option<Point> {
        match self {
            Value::Point(p) => Some(*p),
            Value::Array(items) if items.len() == 2 => {
                let x = items[0].as_f64()?;
                let y = items[1].as_f64()?;
                Point::new(x, y).ok()
            }
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, Value::Null | Value::Array(_) | Value::Object(_) | Value::Point(_))
    }

    /// Canonical JSON form. Points, datetimes and durations carry a one-key
    /// type wrapper so they survive a round trip.
    pub fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Bool(b) => Json::Bool(*b),
            Value::Int(i) => Json::Number((*i).into()),
            Value::Float(f) => Number::from_f64(*f).map(Json::Number).unwrap_or(Json::Null),
            Value::String(s) => Json::String(s.clone()),
            Value::Point(p) => {
                let mut m = JsonMap::new();
                m.insert(
                    POINT_TAG.to_string(),
                    Json::Array(vec![Value::Float(p.x).to_json(), Value::Float(p.y).to_json()]),
                );
                Json::Object(m)
            }
            Value::Datetime(us) => tagged(DATETIME_TAG, format_datetime(*us)),
            Value::Duration(us) => tagged(DURATION_TAG, format_duration(*us)),
            Value::Array(items) => Json::Array(items.iter().map(Value::to_json).collect()),
            Value::Object(o) => Json::Object(o.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
        }
    }

    pub fn from_json(json: &Json) -> Result<Value> {
        Ok(match json {
            Json::Null => Value::Null,
            Json::Bool(b) => Value::Bool(*b),
            Json::Number(n) => match n.as_i64() {
                Some(i) => Value::Int(i),
                None => Value::Float(n.as_f64().ok_or_else(|| EngineError::malformed("unrepresentable number"))?),
            },
            Json::String(s) => Value::String(s.clone()),
            Json::Array(items) => Value::Array(items.iter().map(Value::from_json).collect::<Result<_>>()?),
            Json::Object(m) => {
                if m.len() == 1 {
                    let (k, v) = m.iter().next().expect("one entry");
                    match k.as_str() {
                        POINT_TAG => return decode_point(v),
                        DATETIME_TAG => {
                            let text = v.as_str().ok_or_else(|| EngineError::malformed("$datetime expects a string"))?;
                            return Ok(Value::Datetime(parse_datetime(text).map_err(|e| EngineError::malformed(e.message))?));
                        }
                        DURATION_TAG => {
                            let text = v.as_str().ok_or_else(|| EngineError::malformed("$duration expects a string"))?;
                            return Ok(Value::Duration(parse_duration(text).map_err(|e| EngineError::malformed(e.message))?));
                        }
                        _ => {}
                    }
                }
                let mut obj = Object::with_capacity(m.len());
                for (k, v) in m {
                    obj.insert(k.clone(), Value::from_json(v)?);
                }
                Value::Object(obj)
            }
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("json values always serialize")
    }

    pub fn parse_json(text: &str) -> Result<Value> {
        let json: Json = serde_json::from_str(text).map_err(|e| EngineError::malformed(format!("invalid JSON: {e}")))?;
        Value::from_json(&json)
    }
}

fn tagged(tag: &str, text: String) -> Json {
    let mut m = JsonMap::new();
    m.insert(tag.to_string(), Json::String(text));
    Json::Object(m)
}

fn decode_point(v: &Json) -> Result<Value> {
    let coords = v.as_array().filter(|a| a.len() == 2).ok_or_else(|| EngineError::malformed("$point expects [x, y]"))?;
    let x = coords[0].as_f64().ok_or_else(|| EngineError::malformed("point x must be a number"))?;
    let y = coords[1].as_f64().ok_or_else(|| EngineError::malformed("point y must be a number"))?;
    Value::point(x, y)
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json_string())
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::String(s.to_string())
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<f64> for Value {
    fn from(f: f64) -> Self {
        Value::Float(f)
    }
}

/// Orders two values. Numbers compare across int/float; every other pair of
/// distinct types is incomparable (`None`). Points, arrays and objects only
/// support equality.
pub fn compare_values(a: &Value, b: &Value) -> Option<Ordering> {
    use Value::*;
    match (a, b) {
        (Null, Null) => Some(Ordering::Equal),
        (Bool(x), Bool(y)) => Some(x.cmp(y)),
        (Int(x), Int(y)) => Some(x.cmp(y)),
        (Int(x), Float(y)) => (*x as f64).partial_cmp(y),
        (Float(x), Int(y)) => x.partial_cmp(&(*y as f64)),
        (Float(x), Float(y)) => x.partial_cmp(y),
        (String(x), String(y)) => Some(x.cmp(y)),
        (Datetime(x), Datetime(y)) => Some(x.cmp(y)),
        (Duration(x), Duration(y)) => Some(x.cmp(y)),
        (Point(x), Point(y)) => (x == y).then_some(Ordering::Equal),
        (Array(_), Array(_)) | (Object(_), Object(_)) => (a == b).then_some(Ordering::Equal),
        _ => None,
    }
}

pub fn spatial_distance(a: Point, b: Point) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Primary-key value in a form that can be hashed and totally ordered.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PkKey {
    Bool(bool),
    Int(i64),
    /// IEEE bits of a finite float; ordering is done on the numeric value.
    Float(u64),
    Datetime(i64),
    Str(Arc<str>),
}

impl PkKey {
    pub fn from_value(v: &Value) -> Result<PkKey> {
        Ok(match v {
            Value::Bool(b) => PkKey::Bool(*b),
            Value::Int(i) => PkKey::Int(*i),
            Value::Float(f) if f.is_finite() => PkKey::Float(f.to_bits()),
            Value::Datetime(d) => PkKey::Datetime(*d),
            Value::String(s) => PkKey::Str(Arc::from(s.as_str())),
            other => {
                return Err(EngineError::malformed(format!(
                    "primary key must be a non-null scalar, got {}",
                    other.type_name()
                )))
            }
        })
    }

    pub fn to_value(&self) -> Value {
        match self {
            PkKey::Bool(b) => Value::Bool(*b),
            PkKey::Int(i) => Value::Int(*i),
            PkKey::Float(bits) => Value::Float(f64::from_bits(*bits)),
            PkKey::Datetime(d) => Value::Datetime(*d),
            PkKey::Str(s) => Value::String(s.to_string()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            PkKey::Bool(_) => 0,
            PkKey::Int(_) => 1,
            PkKey::Float(_) => 2,
            PkKey::Datetime(_) => 3,
            PkKey::Str(_) => 4,
        }
    }

    /// Stable 64-bit FNV-1a hash of the key's canonical JSON encoding.
    pub fn stable_hash(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        h.write(self.to_value().to_json_string().as_bytes());
        h.finish()
    }
}

impl Ord for PkKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (PkKey::Bool(a), PkKey::Bool(b)) => a.cmp(b),
            (PkKey::Int(a), PkKey::Int(b)) => a.cmp(b),
            (PkKey::Float(a), PkKey::Float(b)) => f64::from_bits(*a).total_cmp(&f64::from_bits(*b)),
            (PkKey::Datetime(a), PkKey::Datetime(b)) => a.cmp(b),
            (PkKey::Str(a), PkKey::Str(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for PkKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_value())
    }
}

/// A stored document: an object root plus its extracted primary key.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    root: Object,
    pk: PkKey,
}

impl Document {
    pub fn new(root: Object, pk_field: &str) -> Result<Document> {
        let pk_value = root
            .get(pk_field)
            .ok_or_else(|| EngineError::malformed(format!("record is missing primary key field `{pk_field}`")))?;
        let pk = PkKey::from_value(pk_value)?;
        Ok(Document { root, pk })
    }

    pub fn from_value(value: Value, pk_field: &str) -> Result<Document> {
        match value {
            Value::Object(root) => Document::new(root, pk_field),
            other => Err(EngineError::malformed(format!("records must be objects, got {}", other.type_name()))),
        }
    }

    pub fn root(&self) -> &Object {
        &self.root
    }

    pub fn pk(&self) -> &PkKey {
        &self.pk
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.root.get(field)
    }

    pub fn to_value(&self) -> Value {
        Value::Object(self.root.clone())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&Value::Object(self.root.clone()).to_json()).expect("json values always serialize")
    }
}
