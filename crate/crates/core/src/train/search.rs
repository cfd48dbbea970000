use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

/// Candidate values of one hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    List(Vec<Value>),
    Range {
        low: f64,
        high: f64,
        #[serde(default = "default_scale")]
        scale: Scale,
        /// Grid points used when the strategy is `grid`.
        #[serde(default = "default_steps")]
        steps: usize,
    },
}

fn default_scale() -> Scale {
    Scale::Linear
}

fn default_steps() -> usize {
    5
}

impl ParamSpec {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            Self::List(v) if v.is_empty() => Err(Error::Config(format!("{name}: empty value list"))),
            Self::List(_) => Ok(()),
            Self::Range { low, high, scale, steps } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::Config(format!("{name}: range needs finite low < high")));
                }
                if *scale == Scale::Log && *low <= 0.0 {
                    return Err(Error::Config(format!("{name}: log range needs low > 0")));
                }
                if *steps < 2 {
                    return Err(Error::Config(format!("{name}: a range needs at least 2 grid steps")));
                }
                Ok(())
            }
        }
    }

    fn grid_values(&self) -> Vec<Value> {
        match self {
            Self::List(v) => v.clone(),
            Self::Range { low, high, scale, steps } => (0..*steps)
                .map(|k| {
                    let f = k as f64 / (*steps - 1) as f64;
                    let v = match scale {
                        Scale::Linear => low + f * (high - low),
                        Scale::Log => (low.ln() + f * (high.ln() - low.ln())).exp(),
                    };
                    Value::from(v)
                })
                .collect(),
        }
    }

    fn sample(&self, r: &mut rng::StreamRng) -> Value {
        match self {
            Self::List(v) => v[r.random_range(0..v.len())].clone(),
            Self::Range { low, high, scale, .. } => {
                let u: f64 = r.random();
                let v = match scale {
                    Scale::Linear => low + u * (high - low),
                    Scale::Log => (low.ln() + u * (high.ln() - low.ln())).exp(),
                };
                Value::from(v)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SearchStrategy {
    /// Cartesian product in lexicographic key order, truncated to the budget.
    Grid,
    Random { seed: u64 },
}

/// Hyperparameter space keyed by dotted paths into the configuration
/// document, e.g. `"model.alpha"` or `"train.sgd.learning_rate"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamSpec>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_strategy")]
    pub strategy: SearchStrategy,
}

fn default_budget() -> usize {
    40
}

fn default_strategy() -> SearchStrategy {
    SearchStrategy::Random { seed: 0 }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("search budget must be ≥ 1".into()));
        }
        self.params.iter().try_for_each(|(k, v)| v.validate(k))
    }

    /// The parameter assignment of every trial, in trial order.
    pub fn assignments(&self) -> Result<Vec<BTreeMap<String, Value>>> {
        self.validate()?;
        match self.strategy {
            SearchStrategy::Grid => {
                let axes: Vec<(&String, Vec<Value>)> = self.params.iter().map(|(k, v)| (k, v.grid_values())).collect();
                let total: usize = axes.iter().map(|(_, v)| v.len()).product();
                Ok((0..total.min(self.budget))
                    .map(|mut idx| {
                        let mut out = BTreeMap::new();
                        for (k, values) in axes.iter().rev() {
                            out.insert((*k).clone(), values[idx % values.len()].clone());
                            idx /= values.len();
                        }
                        out
                    })
                    .collect())
            }
            SearchStrategy::Random { seed } => Ok((0..self.budget)
                .map(|trial| {
                    let mut r = rng::seeded(rng::derive(seed, trial as u64));
                    self.params.iter().map(|(k, v)| (k.clone(), v.sample(&mut r))).collect()
                })
                .collect()),
        }
    }
}

/// Writes `value` at a dotted path of `doc`. The path must already exist;
/// integers in the template stay integers (rounded).
pub fn set_path(doc: &mut Value, path: &str, value: &Value) -> Result<()> {
    let mut node = doc;
    for part in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown hyperparameter {path}")))?;
    }
    *node = match (&*node, value.as_f64()) {
        (Value::Number(n), Some(v)) if (n.is_u64() || n.is_i64()) && !value.is_u64() && !value.is_i64() => {
            Value::from(v.round() as i64)
        }
        _ => value.clone(),
    };
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub params: BTreeMap<String, Value>,
    pub validation_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    /// Successful trials by ascending validation MSE (ties by trial index),
    /// then failed trials by index.
    pub trials: Vec<TrialResult>,
    pub best_config: Value,
}

impl Leaderboard {
    pub fn best(&self) -> &TrialResult {
        &self.trials[0]
    }
}

/// Runs one trial per assignment. `run` receives the trial index and the
/// template with that trial's values applied and returns the validation MSE.
pub fn search(space: &SearchSpace, template: &Value, mut run: impl FnMut(usize, &Value) -> Result<f64>) -> Result<Leaderboard> {
    let assignments = space.assignments()?;
    let mut trials = Vec::with_capacity(assignments.len());
    let mut configs = Vec::with_capacity(assignments.len());
    for (trial, params) in assignments.into_iter().enumerate() {
        let mut config = template.clone();
        for (k, v) in &params {
            set_path(&mut config, k, v)?;
        }
        let (validation_mse, error) = match run(trial, &config) {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("non-finite validation MSE {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        trials.push(TrialResult {
            trial,
            params,
            validation_mse,
            error,
        });
        configs.push(config);
    }
    if trials.iter().all(|t| t.validation_mse.is_none()) {
        return Err(Error::AllTrialsFailed(trials.len()));
    }
    trials.sort_by(|a, b| match (a.validation_mse, b.validation_mse) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.trial.cmp(&b.trial)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.trial.cmp(&b.trial),
    });
    let best_config = configs[trials[0].trial].clone();
    Ok(Leaderboard { trials, best_config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn space(strategy: SearchStrategy, budget: usize) -> SearchSpace {
        serde_json::from_value(json!({
            "params": {
                "model.alpha": [0.1, 0.01],
                "train.lr": {"low": 1e-4, "high": 1e-1, "scale": "log"}
            },
            "budget": budget,
            "strategy": strategy,
        }))
        .unwrap()
    }

    #[test]
    fn grid_enumerates_product() {
        let mut s = space(SearchStrategy::Grid, 100);
        s.params.insert("train.lr".into(), ParamSpec::List(vec![json!(1), json!(2)]));
        let a = s.assignments().unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a[0]["model.alpha"], json!(0.1));
        assert_eq!(a[1]["train.lr"], json!(2));
        s.budget = 3;
        assert_eq!(s.assignments().unwrap().len(), 3);
    }

    #[test]
    fn random_is_seeded_and_in_range() {
        let s = space(SearchStrategy::Random { seed: 4 }, 20);
        let a = s.assignments().unwrap();
        assert_eq!(a, s.assignments().unwrap());
        for t in &a {
            let lr = t["train.lr"].as_f64().unwrap();
            assert!((1e-4..=1e-1).contains(&lr));
        }
        assert_ne!(a, space(SearchStrategy::Random { seed: 5 }, 20).assignments().unwrap());
    }

    #[test]
    fn set_path_keeps_integers() {
        let mut doc = json!({"model": {"n": 3, "x": 0.5, "v": [1, 2]}});
        set_path(&mut doc, "model.n", &json!(4.6)).unwrap();
        set_path(&mut doc, "model.x", &json!(2)).unwrap();
        set_path(&mut doc, "model.v.1", &json!(7)).unwrap();
        assert_eq!(doc, json!({"model": {"n": 5, "x": 2, "v": [1, 7]}}));
        assert!(set_path(&mut doc, "model.missing", &json!(1)).is_err());
    }

    #[test]
    fn leaderboard_order_and_failures() {
        let s = SearchSpace {
            params: [("a".to_string(), ParamSpec::List(vec![json!(3.0), json!(1.0), json!(-1.0), json!(1.0)]))].into(),
            budget: 10,
            strategy: SearchStrategy::Grid,
        };
        let board = search(&s, &json!({"a": 0.0}), |_, c| {
            let a = c["a"].as_f64().unwrap();
            if a < 0.0 {
                Err(Error::Divergence { epoch: 0, learning_rate: 1.0 })
            } else {
                Ok(a)
            }
        })
        .unwrap();
        let order: Vec<usize> = board.trials.iter().map(|t| t.trial).collect();
        assert_eq!(order, vec![1, 3, 0, 2]);
        assert_eq!(board.best_config, json!({"a": 1.0}));
        assert!(board.trials[3].error.is_some());

        let all_fail = search(&s, &json!({"a": 0.0}), |_, _| Err(Error::Singular));
        assert!(matches!(all_fail, Err(Error::AllTrialsFailed(4))));
    }
}
