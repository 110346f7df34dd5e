//! Fixture generators and brute-force oracles shared by the integration
//! tests. Oracles work from record labels and plain collections only; they
//! never call into the mining code they check.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulekit::schema::{DataDictionary, RecordSet, VariableSchema};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dictionary(vars: &[(&str, &[&str])]) -> Arc<DataDictionary> {
    Arc::new(
        DataDictionary::new(
            "test",
            vars.iter()
                .map(|(name, cats)| VariableSchema {
                    name: name.to_string(),
                    categories: cats.iter().map(|c| c.to_string()).collect(),
                    role_hint: Default::default(),
                })
                .collect(),
        )
        .unwrap(),
    )
}

pub fn records(dict: &Arc<DataDictionary>, rows: &[Vec<&str>]) -> RecordSet {
    RecordSet::from_rows(
        Arc::clone(dict),
        rows.iter()
            .enumerate()
            .map(|(i, r)| (format!("r{i}"), r.clone())),
    )
    .unwrap()
}

/// Random dictionary of 2..=5 variables with at most `max_items` categories
/// in total, and `n` records drawn with skewed category probabilities.
pub fn random_fixture(rng: &mut ChaCha8Rng, max_items: usize, n: usize) -> RecordSet {
    let n_vars = rng.gen_range(2..=5usize);
    let mut budget = max_items;
    let mut vars = Vec::new();
    for v in 0..n_vars {
        let remaining_vars = n_vars - v - 1;
        let most = (budget - 2 * remaining_vars).min(4);
        if most < 2 {
            break;
        }
        let k = rng.gen_range(2..=most);
        budget -= k;
        let cats: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        vars.push(VariableSchema {
            name: format!("v{v}"),
            categories: cats,
            role_hint: Default::default(),
        });
    }
    let dict = Arc::new(DataDictionary::new("rand", vars).unwrap());
    let weights: Vec<Vec<f64>> = dict
        .variables()
        .iter()
        .map(|v| {
            (0..v.categories.len())
                .map(|_| rng.gen_range(0.05..1.0))
                .collect()
        })
        .collect();
    let rows = (0..n).map(|i| {
        let values: Vec<String> = dict
            .variables()
            .iter()
            .zip(&weights)
            .map(|(v, w)| {
                let total: f64 = w.iter().sum();
                let mut x = rng.gen_range(0.0..total);
                let mut pick = w.len() - 1;
                for (j, wj) in w.iter().enumerate() {
                    if x < *wj {
                        pick = j;
                        break;
                    }
                    x -= wj;
                }
                v.categories[pick].clone()
            })
            .collect();
        (format!("t{i}"), values)
    });
    let rows: Vec<_> = rows.collect();
    RecordSet::from_rows(dict, rows).unwrap()
}

/// Each record as a set of `variable=category` labels.
pub fn label_transactions(rs: &RecordSet) -> Vec<HashSet<String>> {
    let dict = rs.dictionary();
    (0..rs.len())
        .map(|i| {
            (0..dict.len())
                .map(|v| format!("{}={}", dict.variable(v).name, rs.category(i, v)))
                .collect()
        })
        .collect()
}

pub fn brute_count(txns: &[HashSet<String>], itemset: &[String]) -> u64 {
    txns.iter()
        .filter(|t| itemset.iter().all(|i| t.contains(i)))
        .count() as u64
}

/// Every itemset of 1..=max_len occurring labels, counted by scanning.
pub fn oracle_frequent(
    txns: &[HashSet<String>],
    max_len: usize,
    min_count: u64,
) -> HashMap<BTreeSet<String>, u64> {
    let universe: Vec<String> = txns
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = HashMap::new();
    let n = universe.len();
    // Enumerate subsets by bitmask; fixtures keep the universe small.
    assert!(n <= 20, "oracle universe too large: {n}");
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > max_len {
            continue;
        }
        let items: Vec<String> = (0..n)
            .filter(|b| mask & (1 << b) != 0)
            .map(|b| universe[b].clone())
            .collect();
        let count = brute_count(txns, &items);
        if count >= min_count {
            out.insert(items.into_iter().collect(), count);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRule {
    pub antecedent: BTreeSet<String>,
    pub consequent: String,
    pub joint: u64,
    pub count_x: u64,
    pub count_y: u64,
}

impl OracleRule {
    pub fn confidence(&self) -> f64 {
        self.joint as f64 / self.count_x as f64
    }

    pub fn lift(&self, n: u64) -> f64 {
        (self.joint as f64 * n as f64) / (self.count_x as f64 * self.count_y as f64)
    }
}

/// Enumerates every nonempty antecedent subset for every consequent label.
pub fn oracle_rules(
    txns: &[HashSet<String>],
    max_items: usize,
    min_count: u64,
    min_conf: f64,
    min_lift: f64,
    consequent: Option<&str>,
) -> Vec<OracleRule> {
    let n = txns.len() as u64;
    let frequent = oracle_frequent(txns, max_items, min_count);
    let mut out = Vec::new();
    for (z, &joint) in &frequent {
        if z.len() < 2 {
            continue;
        }
        for y in z {
            if consequent.is_some_and(|c| c != y) {
                continue;
            }
            let x: BTreeSet<String> = z.iter().filter(|i| *i != y).cloned().collect();
            let count_x = brute_count(txns, &x.iter().cloned().collect::<Vec<_>>());
            let count_y = brute_count(txns, std::slice::from_ref(y));
            let rule = OracleRule {
                antecedent: x,
                consequent: y.clone(),
                joint,
                count_x,
                count_y,
            };
            if rule.confidence() >= min_conf && rule.lift(n) >= min_lift {
                out.push(rule);
            }
        }
    }
    out
}

/// Response is a deterministic function of `predictor`; `noise_0..` are
/// independent uniform draws.
pub fn planted_forest_fixture(n: usize, n_noise: usize, seed: u64) -> RecordSet {
    let mut vars: Vec<(String, Vec<&str>)> = vec![
        ("response".into(), vec!["r0", "r1", "r2"]),
        ("predictor".into(), vec!["a", "b", "c"]),
    ];
    for j in 0..n_noise {
        vars.push((format!("noise_{j}"), vec!["x", "y", "z"]));
    }
    let dict = Arc::new(
        DataDictionary::new(
            "planted",
            vars.iter()
                .map(|(name, cats)| VariableSchema {
                    name: name.clone(),
                    categories: cats.iter().map(|c| c.to_string()).collect(),
                    role_hint: Default::default(),
                })
                .collect(),
        )
        .unwrap(),
    );
    let mut rng = rng(seed);
    let rows: Vec<(String, Vec<String>)> = (0..n)
        .map(|i| {
            let p = rng.gen_range(0..3usize);
            let mut values = vec![
                ["r0", "r1", "r2"][p].to_string(),
                ["a", "b", "c"][p].to_string(),
            ];
            for _ in 0..n_noise {
                values.push(["x", "y", "z"][rng.gen_range(0..3usize)].to_string());
            }
            (format!("p{i}"), values)
        })
        .collect();
    RecordSet::from_rows(dict, rows).unwrap()
}

pub fn noise_names(n_noise: usize) -> Vec<String> {
    (0..n_noise).map(|j| format!("noise_{j}")).collect()
}

/// 1,800 transactions where `a=x1 -> y=yes` has joint 180, |X| 200, |Y| 810:
/// support 0.10, confidence 0.90, lift 2.0. Two balanced noise variables
/// split every block evenly.
pub fn planted_rule_fixture() -> RecordSet {
    let dict = dictionary(&[
        ("a", &["x1", "x2", "x3"]),
        ("b", &["p", "q"]),
        ("c", &["s", "t", "u"]),
        ("y", &["yes", "no"]),
    ]);
    let mut rows = Vec::new();
    let blocks: [(usize, &str, &str); 4] = [
        (180, "x1", "yes"),
        (20, "x1", "no"),
        (630, "x2", "yes"),
        (970, "x3", "no"),
    ];
    for (size, a, y) in blocks {
        for j in 0..size {
            rows.push(vec![a, ["p", "q"][j % 2], ["s", "t", "u"][j % 3], y]);
        }
    }
    records(&dict, &rows)
}

pub const LIGHTING: [&str; 6] = [
    "daylight",
    "dark_with_streetlight",
    "dark_no_streetlight",
    "dusk",
    "dawn",
    "unknown",
];

pub fn crash_dictionary_json() -> String {
    r#"{
  "version": "synthetic-1",
  "variables": [
    {"name": "rwd", "categories": ["yes", "no"]},
    {"name": "injury_severity", "categories": ["fatal", "severe", "moderate", "complaint", "no_injury"]},
    {"name": "lighting_condition", "role_hint": "response",
     "categories": ["daylight", "dark_with_streetlight", "dark_no_streetlight", "dusk", "dawn", "unknown"]},
    {"name": "streetlight", "categories": ["yes", "no", "not_dark"]},
    {"name": "driver_age", "categories": ["15-24", "25-34", "35-44", "45-54", "55-64", ">64", "unknown"]},
    {"name": "driver_gender", "categories": ["male", "female", "unknown"]},
    {"name": "driver_condition", "categories": ["normal", "inattentive", "distracted", "alcohol", "drug", "ill_fatigued_asleep", "unknown"]},
    {"name": "driver_protection_system", "categories": ["properly_used", "improperly_used", "none_used", "unknown"]},
    {"name": "weather_condition", "categories": ["clear", "cloudy", "rain", "snow_sleet_hail", "other"]},
    {"name": "road_condition", "categories": ["no_abnormalities", "standing_water", "construction", "shoulder_abnormality", "animal", "unknown"]},
    {"name": "manner_of_collision", "categories": ["single_vehicle", "head_on", "rear_end", "right_angle", "other"]},
    {"name": "vehicle_type", "categories": ["car_van_SUV", "light_truck", "truck", "others"]},
    {"name": "day_of_week", "categories": ["weekday", "weekend"]}
  ]
}
"#
    .to_string()
}

fn pick<'a>(rng: &mut ChaCha8Rng, cats: &[&'a str], weights: &[f64]) -> &'a str {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (c, w) in cats.iter().zip(weights) {
        if x < *w {
            return c;
        }
        x -= w;
    }
    cats[cats.len() - 1]
}

/// Synthetic crash table. `kept` holds the number of fatal/severe/moderate
/// roadway-departure records per lighting class (daylight, dark with
/// streetlight, dark no streetlight); `fatal_dark_no` of the last group are
/// fatal. `extra` further records fail one of the three filters.
pub fn crash_csv(kept: [usize; 3], fatal_dark_no: usize, extra: usize, seed: u64) -> String {
    let mut rng = rng(seed);
    let mut out = String::from(
        "crash_number,rwd,injury_severity,lighting_condition,streetlight,driver_age,driver_gender,\
         driver_condition,driver_protection_system,weather_condition,road_condition,\
         manner_of_collision,vehicle_type,day_of_week\n",
    );
    let mut id = 100000;
    let mut row = |rng: &mut ChaCha8Rng, rwd: &str, injury: &str, light: &str| {
        let dark = light.starts_with("dark");
        let street = match light {
            "dark_with_streetlight" => "yes",
            "dark_no_streetlight" => "no",
            _ => "not_dark",
        };
        let age = if dark {
            pick(
                rng,
                &[
                    "15-24", "25-34", "35-44", "45-54", "55-64", ">64", "unknown",
                ],
                &[35.0, 22.0, 14.0, 12.0, 8.0, 3.0, 6.0],
            )
        } else {
            pick(
                rng,
                &[
                    "15-24", "25-34", "35-44", "45-54", "55-64", ">64", "unknown",
                ],
                &[28.0, 18.0, 13.0, 13.0, 10.0, 7.0, 11.0],
            )
        };
        let condition = if dark {
            pick(
                rng,
                &[
                    "normal",
                    "inattentive",
                    "distracted",
                    "alcohol",
                    "drug",
                    "ill_fatigued_asleep",
                    "unknown",
                ],
                &[27.0, 20.0, 8.0, 18.0, 4.0, 8.0, 15.0],
            )
        } else {
            pick(
                rng,
                &[
                    "normal",
                    "inattentive",
                    "distracted",
                    "alcohol",
                    "drug",
                    "ill_fatigued_asleep",
                    "unknown",
                ],
                &[24.0, 30.0, 14.0, 5.0, 2.0, 5.0, 20.0],
            )
        };
        let protection = if condition == "alcohol" {
            pick(
                rng,
                &["properly_used", "improperly_used", "none_used", "unknown"],
                &[30.0, 5.0, 60.0, 5.0],
            )
        } else {
            pick(
                rng,
                &["properly_used", "improperly_used", "none_used", "unknown"],
                &[62.0, 3.0, 28.0, 7.0],
            )
        };
        let road = if street == "no" {
            pick(
                rng,
                &[
                    "no_abnormalities",
                    "standing_water",
                    "construction",
                    "shoulder_abnormality",
                    "animal",
                    "unknown",
                ],
                &[88.0, 1.0, 0.5, 1.5, 6.0, 3.0],
            )
        } else {
            pick(
                rng,
                &[
                    "no_abnormalities",
                    "standing_water",
                    "construction",
                    "shoulder_abnormality",
                    "animal",
                    "unknown",
                ],
                &[92.0, 1.5, 2.5, 1.5, 0.5, 2.0],
            )
        };
        let cols = [
            rwd.to_string(),
            injury.to_string(),
            light.to_string(),
            street.to_string(),
            age.to_string(),
            pick(rng, &["male", "female", "unknown"], &[70.0, 28.0, 2.0]).to_string(),
            condition.to_string(),
            protection.to_string(),
            pick(
                rng,
                &["clear", "cloudy", "rain", "snow_sleet_hail", "other"],
                &[73.0, 15.0, 10.0, 0.5, 1.5],
            )
            .to_string(),
            road.to_string(),
            pick(
                rng,
                &[
                    "single_vehicle",
                    "head_on",
                    "rear_end",
                    "right_angle",
                    "other",
                ],
                &[92.0, 3.0, 2.0, 1.0, 2.0],
            )
            .to_string(),
            pick(
                rng,
                &["car_van_SUV", "light_truck", "truck", "others"],
                &[52.0, 35.0, 5.0, 8.0],
            )
            .to_string(),
            pick(rng, &["weekday", "weekend"], &[62.0, 38.0]).to_string(),
        ];
        id += 1;
        writeln!(out, "{id},{}", cols.join(",")).unwrap();
    };
    let lights = ["daylight", "dark_with_streetlight", "dark_no_streetlight"];
    for (g, &count) in kept.iter().enumerate() {
        for j in 0..count {
            let injury = if g == 2 && j < fatal_dark_no {
                "fatal"
            } else if g == 2 {
                pick(&mut rng, &["severe", "moderate"], &[1.0, 4.0])
            } else {
                pick(&mut rng, &["fatal", "severe", "moderate"], &[1.0, 1.0, 6.0])
            };
            row(&mut rng, "yes", injury, lights[g]);
        }
    }
    for j in 0..extra {
        match j % 3 {
            0 => row(&mut rng, "no", "moderate", "daylight"),
            1 => row(&mut rng, "yes", "complaint", "dark_no_streetlight"),
            _ => row(
                &mut rng,
                "yes",
                "severe",
                ["dusk", "dawn", "unknown"][j % 9 / 3],
            ),
        }
    }
    out
}

/// Writes dictionary, data and a config with three lighting cases into `dir`.
pub fn write_crash_project(
    dir: &Path,
    kept: [usize; 3],
    n_trees: usize,
    extra_config: &str,
) -> std::path::PathBuf {
    std::fs::write(dir.join("dictionary.json"), crash_dictionary_json()).unwrap();
    std::fs::write(
        dir.join("crashes.csv"),
        crash_csv(kept, kept[2] / 5, 30, 11),
    )
    .unwrap();
    let config = format!(
        r#"{{
  "dictionary": "dictionary.json",
  "data": "crashes.csv",
  "filters": [
    {{"variable": "rwd", "keep": ["yes"]}},
    {{"variable": "injury_severity", "keep": ["fatal", "severe", "moderate"]}},
    {{"variable": "lighting_condition", "keep": ["daylight", "dark_with_streetlight", "dark_no_streetlight"]}}
  ],
  "stratum": "lighting_condition",
  "response": "lighting_condition",
  "features": ["injury_severity", "driver_age", "driver_gender", "driver_condition",
               "driver_protection_system", "weather_condition", "road_condition",
               "manner_of_collision", "vehicle_type", "day_of_week"],
  "top_k_variables": 6,
  "forest": {{"n_trees": {n_trees}}},
  "seed": 20240501,
  "cases": [
    {{"name": "daylight", "consequent": "lighting_condition=daylight",
      "min_support": {{"percent": 0.001}}, "min_confidence": 0.6}},
    {{"name": "dark_with_streetlight", "consequent": "streetlight=yes",
      "filters": [{{"variable": "streetlight", "keep": ["yes", "no"]}}],
      "min_support": {{"percent": 0.00005}}, "min_confidence": 0.55}},
    {{"name": "dark_no_streetlight", "consequent": "streetlight=no",
      "filters": [{{"variable": "streetlight", "keep": ["yes", "no"]}}],
      "min_support": {{"percent": 0.004}}, "min_confidence": 0.55}}
  ]{extra_config}
}}
"#
    );
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}
