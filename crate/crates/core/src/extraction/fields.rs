//! Mapping parsed JSON onto typed extraction fields through the taxonomy.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::prompting::RoleId;
use crate::taxonomy::{
    Canonical, EffectiveYear, FoodCategory, FoodFlags, LegalStrategy, PolicyType, StateName,
    StrategySet, Taxonomy,
};

/// A predicted field. `Unrecognized` keeps the offending raw value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot<T> {
    Value(T),
    Unrecognized(String),
    Missing,
}

impl<T> Slot<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Slot::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(self, Slot::Value(_))
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Slot::Missing)
    }

    pub fn is_unrecognized(&self) -> bool {
        matches!(self, Slot::Unrecognized(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hallucination {
    pub field: String,
    pub raw: String,
}

/// Per-category food predictions, serialized as an object in canonical
/// category order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoodPrediction(pub [Slot<bool>; 6]);

impl Default for FoodPrediction {
    fn default() -> Self {
        FoodPrediction::missing()
    }
}

impl FoodPrediction {
    pub fn missing() -> Self {
        FoodPrediction(std::array::from_fn(|_| Slot::Missing))
    }

    pub fn get(&self, c: FoodCategory) -> &Slot<bool> {
        &self.0[c.position()]
    }

    /// True when every category holds a value.
    pub fn flags(&self) -> Option<FoodFlags> {
        let mut flags = FoodFlags::default();
        for c in FoodCategory::ALL {
            flags.set(c, *self.get(c).value()?);
        }
        Some(flags)
    }

    pub fn is_missing(&self) -> bool {
        self.0.iter().all(Slot::is_missing)
    }
}

impl From<FoodFlags> for FoodPrediction {
    fn from(flags: FoodFlags) -> Self {
        FoodPrediction(flags.0.map(Slot::Value))
    }
}

impl Serialize for FoodPrediction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(6))?;
        for c in FoodCategory::ALL {
            map.serialize_entry(c.key(), self.get(c))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FoodPrediction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let mut map = std::collections::BTreeMap::<String, Slot<bool>>::deserialize(deserializer)?;
        let mut out = FoodPrediction::missing();
        for c in FoodCategory::ALL {
            out.0[c.position()] = map
                .remove(c.key())
                .ok_or_else(|| serde::de::Error::missing_field(c.key()))?;
        }
        if let Some(extra) = map.keys().next() {
            return Err(serde::de::Error::custom(format!(
                "unknown food category {extra:?}"
            )));
        }
        Ok(out)
    }
}

/// Fields recovered from one response. `None` groups were not this
/// response's responsibility.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldSet {
    pub state: Option<Slot<StateName>>,
    pub effect_year: Option<Slot<EffectiveYear>>,
    pub policy_type: Option<Slot<PolicyType>>,
    pub strategies: Option<Slot<StrategySet>>,
    pub strategy_overflow: bool,
    pub food: Option<FoodPrediction>,
    pub hallucinations: Vec<Hallucination>,
}

/// Which attribute groups a response is responsible for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldGroup {
    Analyst,
    Strategist,
    Food,
}

impl FieldGroup {
    pub fn for_role(role: RoleId) -> FieldGroup {
        match role {
            RoleId::PolicyAnalyst => FieldGroup::Analyst,
            RoleId::LegalStrategist => FieldGroup::Strategist,
            RoleId::FoodExpert => FieldGroup::Food,
        }
    }

    pub const ALL: [FieldGroup; 3] = [
        FieldGroup::Analyst,
        FieldGroup::Strategist,
        FieldGroup::Food,
    ];
}

impl FieldSet {
    /// Every field in `groups` set to Missing, as when a response carried no
    /// JSON at all.
    pub fn missing(groups: &[FieldGroup]) -> FieldSet {
        let mut out = FieldSet::default();
        for g in groups {
            match g {
                FieldGroup::Analyst => {
                    out.state = Some(Slot::Missing);
                    out.effect_year = Some(Slot::Missing);
                    out.policy_type = Some(Slot::Missing);
                }
                FieldGroup::Strategist => out.strategies = Some(Slot::Missing),
                FieldGroup::Food => out.food = Some(FoodPrediction::missing()),
            }
        }
        out
    }

    fn hallucinate<T>(&mut self, field: &str, raw: String) -> Slot<T> {
        self.hallucinations.push(Hallucination {
            field: field.to_string(),
            raw: raw.clone(),
        });
        Slot::Unrecognized(raw)
    }
}

fn raw_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Absent, null, or blank values are omissions rather than hallucinations.
fn present(object: &Map<String, Value>, key: &str) -> Option<Value> {
    match object.get(key)? {
        Value::Null => None,
        Value::String(s) if s.trim().is_empty() => None,
        v => Some(v.clone()),
    }
}

fn string_field<T>(
    out: &mut FieldSet,
    object: &Map<String, Value>,
    key: &str,
    canonicalize: impl Fn(&str) -> Canonical<T>,
) -> Slot<T> {
    match present(object, key) {
        None => Slot::Missing,
        Some(Value::String(s)) => match canonicalize(&s) {
            Canonical::Known(v) => Slot::Value(v),
            Canonical::Unrecognized => out.hallucinate(key, s),
        },
        Some(other) => out.hallucinate(key, raw_text(&other)),
    }
}

fn year_field(out: &mut FieldSet, object: &Map<String, Value>) -> Slot<EffectiveYear> {
    const KEY: &str = "effect_year";
    match present(object, KEY) {
        None => Slot::Missing,
        Some(Value::Number(n)) => match n.as_i64().map(EffectiveYear::new) {
            Some(Ok(y)) => Slot::Value(y),
            _ => out.hallucinate(KEY, n.to_string()),
        },
        Some(Value::String(s)) => match EffectiveYear::canonicalize(&s) {
            Canonical::Known(y) => Slot::Value(y),
            Canonical::Unrecognized => out.hallucinate(KEY, s),
        },
        Some(other) => out.hallucinate(KEY, raw_text(&other)),
    }
}

/// Numeric suffix of `strategy_N` keys.
fn strategy_slot_index(key: &str) -> Option<u32> {
    key.strip_prefix("strategy_")?.parse().ok()
}

fn strategy_fields(out: &mut FieldSet, object: &Map<String, Value>) {
    let mut keyed: Vec<(u32, &String)> = object
        .keys()
        .filter_map(|k| strategy_slot_index(k).map(|i| (i, k)))
        .collect();
    keyed.sort();
    let has_list = object.contains_key("strategies");
    if keyed.is_empty() && !has_list {
        out.strategies = Some(Slot::Missing);
        return;
    }

    // (field name, raw value) in emission order
    let mut emitted: Vec<(String, Value)> = Vec::new();
    let mut push = |field: String, value: &Value| match value {
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                emitted.push((format!("{field}[{i}]"), item.clone()));
            }
        }
        v => emitted.push((field, v.clone())),
    };
    for (_, key) in &keyed {
        push((*key).clone(), &object[key.as_str()]);
    }
    if let Some(list) = object.get("strategies") {
        push("strategies".to_string(), list);
    }

    let mut set = StrategySet::empty();
    for (field, value) in emitted {
        let raw = match value {
            Value::Null => continue,
            Value::String(s) if s.trim().is_empty() => continue,
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            other => {
                out.hallucinate::<()>(&field, raw_text(&other));
                continue;
            }
        };
        match LegalStrategy::canonicalize(&raw) {
            Canonical::Known(s) => {
                if set.insert(s).is_err() {
                    out.strategy_overflow = true;
                }
            }
            Canonical::Unrecognized => {
                out.hallucinate::<()>(&field, raw);
            }
        }
    }
    out.strategies = Some(Slot::Value(set));
}

fn flag_value(value: &Value) -> Option<bool> {
    match value {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_f64()? {
            0.0 => Some(false),
            1.0 => Some(true),
            _ => None,
        },
        Value::String(s) => match s.trim() {
            "0" => Some(false),
            "1" => Some(true),
            _ => None,
        },
        _ => None,
    }
}

fn food_fields(out: &mut FieldSet, object: &Map<String, Value>) {
    let mut food = FoodPrediction::missing();
    for c in FoodCategory::ALL {
        food.0[c.position()] = match present(object, c.key()) {
            None => Slot::Missing,
            Some(v) => match flag_value(&v) {
                Some(b) => Slot::Value(b),
                None => out.hallucinate(c.key(), raw_text(&v)),
            },
        };
    }
    out.food = Some(food);
}

/// Maps `object` onto the fields owned by `groups`. Never fails: values
/// outside the vocabulary become `Unrecognized` with a hallucination entry,
/// absent keys become `Missing`.
pub fn parse_fields(
    groups: &[FieldGroup],
    object: &Map<String, Value>,
    taxonomy: &Taxonomy,
) -> FieldSet {
    let mut out = FieldSet::default();
    for group in groups {
        match group {
            FieldGroup::Analyst => {
                out.state = Some(string_field(&mut out, object, "state", |s| {
                    taxonomy.canonicalize_state(s)
                }));
                out.effect_year = Some(year_field(&mut out, object));
                out.policy_type = Some(string_field(
                    &mut out,
                    object,
                    "policy_type",
                    PolicyType::canonicalize,
                ));
            }
            FieldGroup::Strategist => strategy_fields(&mut out, object),
            FieldGroup::Food => food_fields(&mut out, object),
        }
    }
    out
}

pub fn parse_role_output(
    role: RoleId,
    object: &Map<String, Value>,
    taxonomy: &Taxonomy,
) -> FieldSet {
    parse_fields(&[FieldGroup::for_role(role)], object, taxonomy)
}
