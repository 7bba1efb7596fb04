//! JSON scenario documents.
//!
//! ```json
//! {
//!   "m": [1, 1],
//!   "p_min": ["0", "0"],
//!   "eps": ["1/4", "1/4"],
//!   "bidders": {
//!     "alice": {"0,0": "0", "1,0": "9", "0,1": "10", "1,1": "14"},
//!     "bob":   {"0,0": "0", "1,0": "4", "0,1": "3",  "1,1": "6"}
//!   },
//!   "player": "alice",
//!   "opponents": ["bob"],
//!   "nonmonotone_ok": ["alice"]
//! }
//! ```
//!
//! Rationals may be JSON integers or strings (`"7"`, `"-3/4"`, `"905.5"`).
//! Every schema error carries a JSON-pointer style path.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::complex::{enumerate_cells, substitutes_check, SubstitutesReport};
use crate::error::{AuctionError, Result};
use crate::lattice::{AuctionInstance, Bundle, Lattice};
use crate::rational::Q;
use crate::valuation::{aggregate_valuations, validate_valuation, ValidationReport, Valuation};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Experiment {
    pub verb: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub instance: AuctionInstance,
    pub bidders: BTreeMap<String, Valuation>,
    pub player: Option<String>,
    pub opponents: Vec<String>,
    /// Aggregate of all opponents restricted to the supply lattice.
    #[serde(skip)]
    pub opponent: Valuation,
    /// Full Minkowski-sum aggregate (equal to `opponent` for one opponent).
    #[serde(skip)]
    pub opponent_aggregate: Valuation,
    pub reports: BTreeMap<String, ValidationReport>,
    /// Facet test of the restricted aggregate; `None` if the cell complex
    /// could not be built (not strictly concave).
    pub substitutes: Option<bool>,
    #[serde(skip)]
    pub substitutes_report: Option<SubstitutesReport>,
    pub experiment: Option<Experiment>,
}

impl Scenario {
    pub fn player_valuation(&self) -> Result<&Valuation> {
        let name = self.player.as_ref().ok_or_else(|| AuctionError::Schema {
            path: "/player".into(),
            message: "a player valuation is required for value computations".into(),
        })?;
        Ok(&self.bidders[name])
    }

    /// Swaps roles: `name` becomes the player against all other bidders.
    pub fn with_player(&self, name: &str) -> Result<Scenario> {
        if !self.bidders.contains_key(name) {
            return Err(schema("/player", format!("unknown bidder `{name}`")));
        }
        let opponents: Vec<String> = self
            .bidders
            .keys()
            .filter(|b| b.as_str() != name)
            .cloned()
            .collect();
        build(
            self.instance.clone(),
            self.bidders.clone(),
            Some(name.to_string()),
            opponents,
            self.experiment.clone(),
        )
    }
}

fn schema(path: &str, message: impl Into<String>) -> AuctionError {
    AuctionError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

fn rational(v: &Value, path: &str) -> Result<Q> {
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Q::int(i as i128))
            } else {
                n.to_string()
                    .parse()
                    .map_err(|e| schema(path, format!("{e}")))
            }
        }
        Value::String(s) => s.parse().map_err(|e| schema(path, format!("{e}"))),
        _ => Err(schema(path, "expected a rational (integer or string)")),
    }
}

fn rationals(v: &Value, path: &str, len: usize) -> Result<Vec<Q>> {
    let arr = v
        .as_array()
        .ok_or_else(|| schema(path, "expected an array"))?;
    if arr.len() != len {
        return Err(schema(path, format!("expected {len} entries, found {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, x)| rational(x, &format!("{path}/{i}")))
        .collect()
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema(&format!("/{key}"), "missing required field"))
}

fn names(v: Option<&Value>, path: &str) -> Result<Vec<String>> {
    match v {
        None => Ok(Vec::new()),
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(i, x)| {
                x.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| schema(&format!("{path}/{i}"), "expected a bidder name"))
            })
            .collect(),
        Some(_) => Err(schema(path, "expected an array of bidder names")),
    }
}

fn valuation(v: &Value, path: &str, lat: &Lattice) -> Result<Valuation> {
    let obj = v
        .as_object()
        .ok_or_else(|| schema(path, "expected an object mapping bundles to values"))?;
    let mut entries = Vec::with_capacity(obj.len());
    for (key, x) in obj {
        let p = format!("{path}/{}", escape(key));
        let b: Bundle = key.parse().map_err(|e: String| schema(&p, e))?;
        if !lat.contains(&b) {
            return Err(schema(&p, format!("bundle outside the lattice {:?}", lat.bounds())));
        }
        entries.push((b, rational(x, &p)?));
    }
    Valuation::from_entries(lat.clone(), entries).map_err(|e| match e {
        AuctionError::MissingEntry(b) => schema(&format!("{path}/{}", String::from(b)), "missing bundle"),
        other => other,
    })
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let doc: Value = serde_json::from_str(text).map_err(|e| schema("", e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| schema("", "expected a JSON object"))?;

    let m_val = field(obj, "m")?;
    let m: Vec<u32> = m_val
        .as_array()
        .ok_or_else(|| schema("/m", "expected an array"))?
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_u64()
                .filter(|&n| n >= 1 && n <= u32::MAX as u64)
                .map(|n| n as u32)
                .ok_or_else(|| schema(&format!("/m/{i}"), "expected a positive integer"))
        })
        .collect::<Result<_>>()?;
    let dim = m.len();
    if let Some(mm) = obj.get("M") {
        if mm.as_u64() != Some(dim as u64) {
            return Err(schema("/M", format!("must equal the length of m ({dim})")));
        }
    }
    let p_min = rationals(field(obj, "p_min")?, "/p_min", dim)?;
    let eps = rationals(field(obj, "eps")?, "/eps", dim)?;
    let instance = AuctionInstance::new(m, p_min, eps)?;
    let lat = instance.lattice();

    let nonmono = names(obj.get("nonmonotone_ok"), "/nonmonotone_ok")?;
    let bidders_obj = field(obj, "bidders")?
        .as_object()
        .ok_or_else(|| schema("/bidders", "expected an object"))?;
    let mut bidders = BTreeMap::new();
    for (name, v) in bidders_obj {
        let mut val = valuation(v, &format!("/bidders/{}", escape(name)), &lat)?;
        if nonmono.contains(name) {
            val = val.with_nonmonotone_override();
        }
        bidders.insert(name.clone(), val);
    }
    for (i, n) in nonmono.iter().enumerate() {
        if !bidders.contains_key(n) {
            return Err(schema(&format!("/nonmonotone_ok/{i}"), format!("unknown bidder `{n}`")));
        }
    }

    let player = match obj.get("player") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema("/player", "expected a bidder name")),
    };
    let mut opponents = names(obj.get("opponents"), "/opponents")?;
    if opponents.is_empty() {
        opponents = bidders
            .keys()
            .filter(|b| Some(*b) != player.as_ref())
            .cloned()
            .collect();
    }
    if let Some(p) = &player {
        if !bidders.contains_key(p) {
            return Err(schema("/player", format!("unknown bidder `{p}`")));
        }
    }
    for (i, n) in opponents.iter().enumerate() {
        if !bidders.contains_key(n) {
            return Err(schema(&format!("/opponents/{i}"), format!("unknown bidder `{n}`")));
        }
        if Some(n) == player.as_ref() {
            return Err(schema(&format!("/opponents/{i}"), "the player cannot also be an opponent"));
        }
    }
    let experiment = match obj.get("experiment") {
        None | Some(Value::Null) => None,
        Some(e) => Some(
            serde_json::from_value(e.clone()).map_err(|err| schema("/experiment", err.to_string()))?,
        ),
    };
    build(instance, bidders, player, opponents, experiment)
}

fn build(
    instance: AuctionInstance,
    bidders: BTreeMap<String, Valuation>,
    player: Option<String>,
    opponents: Vec<String>,
    experiment: Option<Experiment>,
) -> Result<Scenario> {
    if opponents.is_empty() {
        return Err(schema("/opponents", "at least one straightforward opponent is required"));
    }
    let mut reports = BTreeMap::new();
    for (name, v) in &bidders {
        let r = validate_valuation(v, &instance)?;
        if !r.is_valid() {
            let first = &r.violations[0];
            return Err(AuctionError::InvalidValuation(format!(
                "bidder `{name}`: {first:?}"
            )));
        }
        reports.insert(name.clone(), r);
    }
    let opp_vals: Vec<Valuation> = opponents.iter().map(|n| bidders[n].clone()).collect();
    let opponent_aggregate = if opp_vals.len() == 1 {
        opp_vals[0].clone()
    } else {
        aggregate_valuations(&opp_vals)?
    };
    let mut opponent = opponent_aggregate.restrict(&instance.m)?;
    opponent.allow_nonmonotone = opp_vals.iter().any(|v| v.allow_nonmonotone);
    let substitutes_report = enumerate_cells(&opponent).ok().map(|cc| substitutes_check(&cc));
    Ok(Scenario {
        instance,
        bidders,
        player,
        opponents,
        opponent,
        opponent_aggregate,
        reports,
        substitutes: substitutes_report.as_ref().map(|r| r.holds),
        substitutes_report,
        experiment,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// Serialises a scenario back to the document format.
pub fn scenario_document(s: &Scenario) -> Value {
    let bidders: Map<String, Value> = s
        .bidders
        .iter()
        .map(|(n, v)| {
            let entries: Map<String, Value> = v
                .entries()
                .into_iter()
                .map(|(b, q)| (String::from(b), Value::String(q.to_string())))
                .collect();
            (n.clone(), Value::Object(entries))
        })
        .collect();
    let nonmono: Vec<Value> = s
        .bidders
        .iter()
        .filter(|(_, v)| v.allow_nonmonotone)
        .map(|(n, _)| Value::String(n.clone()))
        .collect();
    let mut doc = serde_json::json!({
        "m": s.instance.m,
        "p_min": s.instance.p_min.iter().map(|q| q.to_string()).collect::<Vec<_>>(),
        "eps": s.instance.eps.iter().map(|q| q.to_string()).collect::<Vec<_>>(),
        "bidders": bidders,
        "opponents": s.opponents,
        "nonmonotone_ok": nonmono,
    });
    if let Some(p) = &s.player {
        doc["player"] = Value::String(p.clone());
    }
    if let Some(e) = &s.experiment {
        doc["experiment"] = serde_json::to_value(e).expect("plain data");
    }
    doc
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "m": [1, 1], "p_min": [0, 0], "eps": ["1/4", "1/4"],
        "bidders": {
            "opp": {"0,0": 0, "1,0": 4, "0,1": 3, "1,1": 6},
            "me":  {"0,0": 0, "1,0": 9, "0,1": 10, "1,1": 14}
        },
        "player": "me"
    }"#;

    #[test]
    fn minimal_single_opponent() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.opponents, vec!["opp".to_string()]);
        assert_eq!(s.substitutes, Some(true));
        assert_eq!(s.opponent, s.bidders["opp"]);
        assert_eq!(s.player_valuation().unwrap().value(&[1, 1]).unwrap(), Q::int(14));
    }

    #[test]
    fn two_opponents_are_convolved() {
        let text = r#"{
            "m": [1, 1], "p_min": ["0", "0"], "eps": ["1/2", "1/2"],
            "bidders": {
                "a": {"0,0": 0, "1,0": 4, "0,1": 3, "1,1": 6},
                "b": {"0,0": 0, "1,0": 2, "0,1": 5, "1,1": 6}
            }
        }"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.opponents.len(), 2);
        assert_eq!(s.opponent_aggregate.lattice().bounds(), &[2, 2]);
        // Max-plus convolution by brute force.
        let (a, b) = (&s.bidders["a"], &s.bidders["b"]);
        for k in s.opponent_aggregate.lattice().bundles() {
            let mut best: Option<Q> = None;
            for x in a.lattice().bundles() {
                if x.iter().zip(k.iter()).any(|(xi, ki)| xi > ki) {
                    continue;
                }
                let y: Vec<u32> = k.iter().zip(x.iter()).map(|(ki, xi)| ki - xi).collect();
                if let Ok(vb) = b.value(&y) {
                    let t = a.value(&x).unwrap() + vb;
                    best = Some(best.map_or(t, |c: Q| c.max(t)));
                }
            }
            assert_eq!(s.opponent_aggregate.value(&k).unwrap(), best.unwrap(), "{k}");
        }
    }

    #[test]
    fn zero_denominator_is_a_schema_error() {
        let text = MINIMAL.replace("\"1,1\": 14", "\"1,1\": \"1/0\"");
        match parse_scenario(&text) {
            Err(AuctionError::Schema { path, message }) => {
                assert_eq!(path, "/bidders/me/1,1");
                assert!(message.contains("1/0"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn field_paths() {
        let cases = [
            (MINIMAL.replace("\"eps\": [\"1/4\", \"1/4\"],", ""), "/eps"),
            (MINIMAL.replace("\"p_min\": [0, 0]", "\"p_min\": [0, \"x\"]"), "/p_min/1"),
            (MINIMAL.replace("\"0,1\": 3,", ""), "/bidders/opp/0,1"),
            (MINIMAL.replace("\"player\": \"me\"", "\"player\": \"nobody\""), "/player"),
            (MINIMAL.replace("\"m\": [1, 1]", "\"m\": [1, 0]"), "/m/1"),
        ];
        for (text, want) in cases {
            match parse_scenario(&text) {
                Err(AuctionError::Schema { path, .. }) => assert_eq!(path, want),
                other => panic!("{want}: {other:?}"),
            }
        }
    }

    #[test]
    fn validation_failures_are_forwarded() {
        let text = MINIMAL.replace("\"1,1\": 6", "\"1,1\": 2");
        assert!(matches!(parse_scenario(&text), Err(AuctionError::InvalidValuation(_))));
        let text = text.replace("\"player\": \"me\"", "\"player\": \"me\", \"nonmonotone_ok\": [\"opp\"]");
        assert!(parse_scenario(&text).is_ok());
    }

    #[test]
    fn document_round_trip() {
        let s = parse_scenario(MINIMAL).unwrap();
        let doc = scenario_document(&s);
        let again = parse_scenario(&doc.to_string()).unwrap();
        assert_eq!(again.bidders, s.bidders);
        assert_eq!(again.instance, s.instance);
        assert_eq!(again.player, s.player);
    }
}
