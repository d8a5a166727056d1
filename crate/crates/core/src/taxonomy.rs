//! Closed label vocabularies and the canonicalizers that map free-text model
//! output onto them.
//!
//! Anything that does not land exactly on a known label comes back as
//! [`Canonical::Unrecognized`]. There is no fuzzy matching: a near miss is
//! scored as a hallucination downstream, so guessing here would hide errors.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Outcome of mapping raw text into a closed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Canonical<T> {
    Known(T),
    Unrecognized,
}

impl<T> Canonical<T> {
    pub fn known(self) -> Option<T> {
        match self {
            Canonical::Known(v) => Some(v),
            Canonical::Unrecognized => None,
        }
    }

    pub fn is_known(&self) -> bool {
        matches!(self, Canonical::Known(_))
    }
}

/// Lowercase and drop everything that is not alphanumeric.
pub(crate) fn normalize_token(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Lowercase and collapse runs of whitespace; punctuation is kept.
fn normalize_spacing(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------
// Policy type

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyType {
    AdministrativeRule,
    Law,
    ExecutiveOrder,
    Other,
}

impl PolicyType {
    pub const ALL: [PolicyType; 4] = [
        PolicyType::AdministrativeRule,
        PolicyType::Law,
        PolicyType::ExecutiveOrder,
        PolicyType::Other,
    ];

    pub fn display(self) -> &'static str {
        match self {
            PolicyType::AdministrativeRule => "Administrative Rule",
            PolicyType::Law => "Law",
            PolicyType::ExecutiveOrder => "Executive Order",
            PolicyType::Other => "Other",
        }
    }

    /// Definition text used in prompts.
    pub fn definition(self) -> &'static str {
        match self {
            PolicyType::AdministrativeRule => {
                "regulations or directives issued by government agencies"
            }
            PolicyType::Law => "legislation passed by legislatures",
            PolicyType::ExecutiveOrder => {
                "directives issued by executives under existing authority"
            }
            PolicyType::Other => "policies not clearly fitting the previous categories",
        }
    }

    /// Plural forms. "Ordinance" is deliberately absent.
    const ALIASES: [(&'static str, PolicyType); 3] = [
        ("Administrative Rules", PolicyType::AdministrativeRule),
        ("Laws", PolicyType::Law),
        ("Executive Orders", PolicyType::ExecutiveOrder),
    ];

    pub fn canonicalize(raw: &str) -> Canonical<PolicyType> {
        let key = normalize_token(raw);
        if key.is_empty() {
            return Canonical::Unrecognized;
        }
        Self::ALL
            .iter()
            .map(|t| (t.display(), *t))
            .chain(Self::ALIASES)
            .find(|(name, _)| normalize_token(name) == key)
            .map_or(Canonical::Unrecognized, |(_, t)| Canonical::Known(t))
    }
}

impl fmt::Display for PolicyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display())
    }
}

impl Serialize for PolicyType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.display())
    }
}

impl<'de> Deserialize<'de> for PolicyType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        PolicyType::canonicalize(&raw)
            .known()
            .ok_or_else(|| serde::de::Error::custom(format!("unknown policy type {raw:?}")))
    }
}

// ---------------------------------------------------------------------------
// Legal strategies

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LegalStrategy {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
}

impl LegalStrategy {
    pub const ALL: [LegalStrategy; 7] = [
        LegalStrategy::S1,
        LegalStrategy::S2,
        LegalStrategy::S3,
        LegalStrategy::S4,
        LegalStrategy::S5,
        LegalStrategy::S6,
        LegalStrategy::S7,
    ];

    pub fn display(self) -> &'static str {
        match self {
            LegalStrategy::S1 => "Creates a fund or enables access to funding streams",
            LegalStrategy::S2 => "Creates an exemption",
            LegalStrategy::S3 => "Creates an incentive for change",
            LegalStrategy::S4 => "Expressly allows something",
            LegalStrategy::S5 => "Prohibits or discourages something",
            LegalStrategy::S6 => "Provides education, promotes awareness, or provides information",
            LegalStrategy::S7 => "Requires something or sets standards",
        }
    }

    /// 1-based list position.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn code(self) -> &'static str {
        ["S1", "S2", "S3", "S4", "S5", "S6", "S7"][self as usize]
    }

    pub fn from_index(index: usize) -> Option<LegalStrategy> {
        index.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    /// Accepts the exact display string, a leading list index (`"(3)"`,
    /// `"3"`, `"3."`, `"S3"`) optionally followed by that same strategy's
    /// text, or the display string modulo case and punctuation.
    pub fn canonicalize(raw: &str) -> Canonical<LegalStrategy> {
        let trimmed = raw.trim();
        if let Some(s) = Self::ALL.iter().find(|s| s.display() == trimmed) {
            return Canonical::Known(*s);
        }
        if let Some((index, rest)) = split_leading_index(trimmed) {
            let Some(strategy) = Self::from_index(index) else {
                return Canonical::Unrecognized;
            };
            let rest = normalize_token(rest);
            return if rest.is_empty() || rest == normalize_token(strategy.display()) {
                Canonical::Known(strategy)
            } else {
                Canonical::Unrecognized
            };
        }
        let key = normalize_token(trimmed);
        if key.is_empty() {
            return Canonical::Unrecognized;
        }
        Self::ALL
            .iter()
            .find(|s| normalize_token(s.display()) == key)
            .map_or(Canonical::Unrecognized, |s| Canonical::Known(*s))
    }
}

/// Parses `(3)`, `3`, `3.`, `3)`, `S3` at the start of `text`.
fn split_leading_index(text: &str) -> Option<(usize, &str)> {
    let mut rest = text;
    let parenthesized = rest.starts_with('(');
    if parenthesized || rest.starts_with(['S', 's']) {
        rest = &rest[1..];
    }
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let index: usize = rest[..digits].parse().ok()?;
    rest = &rest[digits..];
    if parenthesized {
        rest = rest.strip_prefix(')')?;
    } else if let Some(r) = rest.strip_prefix(['.', ')', ':']) {
        rest = r;
    }
    // "3 Creates..." is fine, "30" or "3rd" is not an index form.
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some((index, rest))
}

impl fmt::Display for LegalStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display())
    }
}

impl Serialize for LegalStrategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.display())
    }
}

impl<'de> Deserialize<'de> for LegalStrategy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        LegalStrategy::canonicalize(&raw)
            .known()
            .ok_or_else(|| serde::de::Error::custom(format!("unknown legal strategy {raw:?}")))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("a policy carries at most two legal strategies")]
pub struct StrategyOverflow;

/// Unordered set of at most two legal strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StrategySet {
    bits: u8,
}

impl StrategySet {
    pub const MAX: usize = 2;

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_strategies<I: IntoIterator<Item = LegalStrategy>>(
        items: I,
    ) -> Result<Self, StrategyOverflow> {
        let mut set = Self::empty();
        for s in items {
            set.insert(s)?;
        }
        Ok(set)
    }

    /// Returns `Ok(false)` when `s` is already present.
    pub fn insert(&mut self, s: LegalStrategy) -> Result<bool, StrategyOverflow> {
        if self.contains(s) {
            return Ok(false);
        }
        if self.len() >= Self::MAX {
            return Err(StrategyOverflow);
        }
        self.bits |= s.bit();
        Ok(true)
    }

    pub fn contains(&self, s: LegalStrategy) -> bool {
        self.bits & s.bit() != 0
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    /// Members in S1..S7 order.
    pub fn iter(&self) -> impl Iterator<Item = LegalStrategy> + '_ {
        LegalStrategy::ALL.into_iter().filter(|s| self.contains(*s))
    }

    pub fn intersects(&self, other: &StrategySet) -> bool {
        self.bits & other.bits != 0
    }

    /// Members that belong to `group` under `groups`.
    pub fn restrict(&self, group: StrategyGroup, groups: &GroupMap) -> StrategySet {
        let bits = self
            .iter()
            .filter(|s| groups.group_of(*s) == group)
            .fold(0u8, |acc, s| acc | s.bit());
        StrategySet { bits }
    }
}

impl Serialize for StrategySet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for StrategySet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items = Vec::<LegalStrategy>::deserialize(deserializer)?;
        StrategySet::from_strategies(items).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyGroup {
    /// Funding/Access.
    #[serde(rename = "A")]
    GroupA,
    /// Incentives/Permissions.
    #[serde(rename = "B")]
    GroupB,
    #[serde(rename = "U")]
    Ungrouped,
}

/// Strategy → group membership. Every strategy maps to exactly one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupMap([StrategyGroup; 7]);

impl Default for GroupMap {
    fn default() -> Self {
        use StrategyGroup::*;
        GroupMap([
            GroupA, Ungrouped, GroupB, GroupB, Ungrouped, Ungrouped, Ungrouped,
        ])
    }
}

impl GroupMap {
    pub fn group_of(&self, s: LegalStrategy) -> StrategyGroup {
        self.0[s as usize]
    }

    pub fn set(&mut self, s: LegalStrategy, group: StrategyGroup) {
        self.0[s as usize] = group;
    }

    pub fn members(&self, group: StrategyGroup) -> Vec<LegalStrategy> {
        LegalStrategy::ALL
            .into_iter()
            .filter(|s| self.group_of(*s) == group)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Food system

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FoodCategory {
    Grow,
    Process,
    Distribute,
    Get,
    Make,
    Surplus,
}

impl FoodCategory {
    /// Canonical serialization order.
    pub const ALL: [FoodCategory; 6] = [
        FoodCategory::Grow,
        FoodCategory::Process,
        FoodCategory::Distribute,
        FoodCategory::Get,
        FoodCategory::Make,
        FoodCategory::Surplus,
    ];

    pub fn display(self) -> &'static str {
        match self {
            FoodCategory::Grow => "Grow",
            FoodCategory::Process => "Process",
            FoodCategory::Distribute => "Distribute",
            FoodCategory::Get => "Get",
            FoodCategory::Make => "Make",
            FoodCategory::Surplus => "Surplus",
        }
    }

    /// JSON key / CSV column.
    pub fn key(self) -> &'static str {
        match self {
            FoodCategory::Grow => "grow",
            FoodCategory::Process => "process",
            FoodCategory::Distribute => "distribute",
            FoodCategory::Get => "get",
            FoodCategory::Make => "make",
            FoodCategory::Surplus => "surplus",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            FoodCategory::Grow => "food production and resource access",
            FoodCategory::Process => "transforming fresh foods for sale",
            FoodCategory::Distribute => "transportation and marketing",
            FoodCategory::Get => "facilities and systems affecting food access",
            FoodCategory::Make => "non-commercial food preparation",
            FoodCategory::Surplus => "food recovery and waste management",
        }
    }

    pub fn canonicalize(raw: &str) -> Canonical<FoodCategory> {
        let key = normalize_token(raw);
        Self::ALL
            .iter()
            .find(|c| c.key() == key)
            .map_or(Canonical::Unrecognized, |c| Canonical::Known(*c))
    }

    pub fn position(self) -> usize {
        self as usize
    }
}

/// Six binary indicators in canonical category order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FoodFlags(pub [bool; 6]);

impl FoodFlags {
    pub fn get(&self, c: FoodCategory) -> bool {
        self.0[c.position()]
    }

    pub fn set(&mut self, c: FoodCategory, value: bool) {
        self.0[c.position()] = value;
    }

    pub fn from_bits(bits: [u8; 6]) -> Self {
        FoodFlags(bits.map(|b| b != 0))
    }

    pub fn complement(&self) -> Self {
        FoodFlags(self.0.map(|b| !b))
    }
}

impl Serialize for FoodFlags {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(6))?;
        for c in FoodCategory::ALL {
            map.serialize_entry(c.key(), &u8::from(self.get(c)))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FoodFlags {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, u8>::deserialize(deserializer)?;
        let mut flags = FoodFlags::default();
        for c in FoodCategory::ALL {
            match map.get(c.key()) {
                Some(0) => {}
                Some(1) => flags.set(c, true),
                Some(v) => {
                    return Err(serde::de::Error::custom(format!(
                        "food flag {} must be 0 or 1, got {v}",
                        c.key()
                    )))
                }
                None => return Err(serde::de::Error::missing_field(c.key())),
            }
        }
        if map.len() != 6 {
            return Err(serde::de::Error::custom("unexpected food category key"));
        }
        Ok(flags)
    }
}

// ---------------------------------------------------------------------------
// Years

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct EffectiveYear(u16);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("year {0} outside 1800..=2100")]
pub struct ImplausibleYear(pub i64);

impl EffectiveYear {
    pub const MIN: u16 = 1800;
    pub const MAX: u16 = 2100;

    pub fn new(year: i64) -> Result<Self, ImplausibleYear> {
        if (Self::MIN as i64..=Self::MAX as i64).contains(&year) {
            Ok(EffectiveYear(year as u16))
        } else {
            Err(ImplausibleYear(year))
        }
    }

    pub fn get(self) -> u16 {
        self.0
    }

    /// Accepts `"2017"` and year ranges such as `"2017-2018"` or `"2017–18"`,
    /// which resolve to their first year.
    pub fn canonicalize(raw: &str) -> Canonical<EffectiveYear> {
        let text = raw.trim();
        if text.len() < 4 || !text.as_bytes()[..4].iter().all(u8::is_ascii_digit) {
            return Canonical::Unrecognized;
        }
        let (head, tail) = text.split_at(4);
        let tail = tail.trim_start();
        let valid_tail = tail.is_empty()
            || tail
                .strip_prefix(['-', '–', '\u{2014}'])
                .map(str::trim_start)
                .is_some_and(|t| {
                    (t.len() == 2 || t.len() == 4) && t.bytes().all(|b| b.is_ascii_digit())
                });
        if !valid_tail {
            return Canonical::Unrecognized;
        }
        head.parse::<i64>()
            .ok()
            .and_then(|y| EffectiveYear::new(y).ok())
            .map_or(Canonical::Unrecognized, Canonical::Known)
    }
}

impl TryFrom<u16> for EffectiveYear {
    type Error = ImplausibleYear;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        EffectiveYear::new(value as i64)
    }
}

impl From<EffectiveYear> for u16 {
    fn from(y: EffectiveYear) -> u16 {
        y.0
    }
}

impl fmt::Display for EffectiveYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// States

/// A canonical name from the taxonomy's state roster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateName(String);

impl StateName {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Full name, USPS code, then any extra abbreviations.
const STATES: &[(&str, &str, &[&str])] = &[
    ("Alabama", "AL", &["Ala."]),
    ("Alaska", "AK", &[]),
    ("Arizona", "AZ", &["Ariz."]),
    ("Arkansas", "AR", &["Ark."]),
    ("California", "CA", &["Calif.", "Cal."]),
    ("Colorado", "CO", &["Colo."]),
    ("Connecticut", "CT", &["Conn."]),
    ("Delaware", "DE", &["Del."]),
    (
        "District of Columbia",
        "DC",
        &["D.C.", "Washington, D.C.", "Washington D.C."],
    ),
    ("Florida", "FL", &["Fla."]),
    ("Georgia", "GA", &["Ga."]),
    ("Hawaii", "HI", &[]),
    ("Idaho", "ID", &[]),
    ("Illinois", "IL", &["Ill."]),
    ("Indiana", "IN", &["Ind."]),
    ("Iowa", "IA", &[]),
    ("Kansas", "KS", &["Kan.", "Kans."]),
    ("Kentucky", "KY", &["Ky."]),
    ("Louisiana", "LA", &["La."]),
    ("Maine", "ME", &[]),
    ("Maryland", "MD", &["Md."]),
    ("Massachusetts", "MA", &["Mass."]),
    ("Michigan", "MI", &["Mich."]),
    ("Minnesota", "MN", &["Minn."]),
    ("Mississippi", "MS", &["Miss."]),
    ("Missouri", "MO", &["Mo."]),
    ("Montana", "MT", &["Mont."]),
    ("Nebraska", "NE", &["Neb.", "Nebr."]),
    ("Nevada", "NV", &["Nev."]),
    ("New Hampshire", "NH", &["N.H."]),
    ("New Jersey", "NJ", &["N.J."]),
    ("New Mexico", "NM", &["N.M.", "N.Mex."]),
    ("New York", "NY", &["N.Y."]),
    ("North Carolina", "NC", &["N.C."]),
    ("North Dakota", "ND", &["N.D.", "N.Dak."]),
    ("Ohio", "OH", &[]),
    ("Oklahoma", "OK", &["Okla."]),
    ("Oregon", "OR", &["Ore.", "Or."]),
    ("Pennsylvania", "PA", &["Pa.", "Penn."]),
    ("Rhode Island", "RI", &["R.I."]),
    ("South Carolina", "SC", &["S.C."]),
    ("South Dakota", "SD", &["S.D.", "S.Dak."]),
    ("Tennessee", "TN", &["Tenn."]),
    ("Texas", "TX", &["Tex."]),
    ("Utah", "UT", &[]),
    ("Vermont", "VT", &["Vt."]),
    ("Virginia", "VA", &["Va."]),
    ("Washington", "WA", &["Wash."]),
    ("West Virginia", "WV", &["W.Va.", "W. Va."]),
    ("Wisconsin", "WI", &["Wis.", "Wisc."]),
    ("Wyoming", "WY", &["Wyo."]),
];

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("reading taxonomy extension {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing taxonomy extension: {0}")]
    Json(#[from] serde_json::Error),
    #[error("alias {alias:?} targets {target:?}, which is not on the state roster")]
    UnknownAliasTarget { alias: String, target: String },
    #[error("alias {alias:?} maps to both {first:?} and {second:?}")]
    ConflictingAlias {
        alias: String,
        first: String,
        second: String,
    },
    #[error("unknown strategy key {0:?} in strategy_groups (expected S1..S7)")]
    UnknownStrategyKey(String),
    #[error("empty state name in extra_states")]
    EmptyState,
}

/// On-disk taxonomy extension.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyExtension {
    #[serde(default)]
    pub extra_states: Vec<String>,
    #[serde(default)]
    pub state_aliases: BTreeMap<String, String>,
    #[serde(default)]
    pub strategy_groups: BTreeMap<String, StrategyGroup>,
}

impl TaxonomyExtension {
    pub fn from_path(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// The closed state roster with its alias table, plus the strategy group map.
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    roster: Vec<StateName>,
    /// normalized full name → roster index
    by_name: HashMap<String, usize>,
    /// normalized alias → roster index
    aliases: HashMap<String, usize>,
    groups: GroupMap,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::with_extension(&TaxonomyExtension::default())
            .expect("built-in roster is consistent")
    }
}

impl Taxonomy {
    pub fn with_extension(ext: &TaxonomyExtension) -> Result<Self, TaxonomyError> {
        let mut taxonomy = Taxonomy {
            roster: Vec::new(),
            by_name: HashMap::new(),
            aliases: HashMap::new(),
            groups: GroupMap::default(),
        };
        for (name, code, extra) in STATES {
            let idx = taxonomy.push_state(name);
            taxonomy.add_alias(code, idx)?;
            for alias in *extra {
                taxonomy.add_alias(alias, idx)?;
            }
        }
        for name in &ext.extra_states {
            if name.trim().is_empty() {
                return Err(TaxonomyError::EmptyState);
            }
            if !taxonomy.by_name.contains_key(&normalize_spacing(name)) {
                taxonomy.push_state(name.trim());
            }
        }
        for (alias, target) in &ext.state_aliases {
            let idx = *taxonomy
                .by_name
                .get(&normalize_spacing(target))
                .ok_or_else(|| TaxonomyError::UnknownAliasTarget {
                    alias: alias.clone(),
                    target: target.clone(),
                })?;
            taxonomy.add_alias(alias, idx)?;
        }
        for (key, group) in &ext.strategy_groups {
            let strategy = LegalStrategy::ALL
                .into_iter()
                .find(|s| s.code().eq_ignore_ascii_case(key.trim()))
                .ok_or_else(|| TaxonomyError::UnknownStrategyKey(key.clone()))?;
            taxonomy.groups.set(strategy, *group);
        }
        Ok(taxonomy)
    }

    pub fn from_path(path: &Path) -> Result<Self, TaxonomyError> {
        Taxonomy::with_extension(&TaxonomyExtension::from_path(path)?)
    }

    fn push_state(&mut self, name: &str) -> usize {
        let idx = self.roster.len();
        self.roster.push(StateName(name.to_string()));
        self.by_name.insert(normalize_spacing(name), idx);
        idx
    }

    fn add_alias(&mut self, alias: &str, idx: usize) -> Result<(), TaxonomyError> {
        let key = normalize_spacing(alias);
        if let Some(name_idx) = self.by_name.get(&key) {
            if *name_idx != idx {
                return Err(self.conflict(alias, *name_idx, idx));
            }
        }
        match self.aliases.insert(key, idx) {
            Some(prev) if prev != idx => Err(self.conflict(alias, prev, idx)),
            _ => Ok(()),
        }
    }

    fn conflict(&self, alias: &str, first: usize, second: usize) -> TaxonomyError {
        TaxonomyError::ConflictingAlias {
            alias: alias.to_string(),
            first: self.roster[first].0.clone(),
            second: self.roster[second].0.clone(),
        }
    }

    pub fn states(&self) -> &[StateName] {
        &self.roster
    }

    pub fn groups(&self) -> &GroupMap {
        &self.groups
    }

    /// Alias table first, then case-insensitive full-name match.
    pub fn canonicalize_state(&self, raw: &str) -> Canonical<StateName> {
        let key = normalize_spacing(raw);
        self.aliases
            .get(&key)
            .or_else(|| self.by_name.get(&key))
            .map_or(Canonical::Unrecognized, |idx| {
                Canonical::Known(self.roster[*idx].clone())
            })
    }

    pub fn canonicalize_policy_type(&self, raw: &str) -> Canonical<PolicyType> {
        PolicyType::canonicalize(raw)
    }

    pub fn canonicalize_strategy(&self, raw: &str) -> Canonical<LegalStrategy> {
        LegalStrategy::canonicalize(raw)
    }
}
