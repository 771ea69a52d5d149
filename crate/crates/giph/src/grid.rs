//! Parameter grids: every field may hold one value or a list of values, and
//! the grid expands to the cross-product of all combinations.

use anyhow::{anyhow, bail};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Expands `grid` over the fields of `defaults`. Fields missing from the grid
/// keep their default. A field whose default is itself a list (such as
/// `hw_tags`) takes alternatives only as a list of such lists.
///
/// Combinations are ordered with the last field (in key order) varying fastest.
pub fn expand<T: Serialize + DeserializeOwned>(section: &str, defaults: &T, grid: &Value) -> anyhow::Result<Vec<T>> {
    let base = match serde_json::to_value(defaults)? {
        Value::Object(map) => map,
        _ => bail!("{section}: defaults are not an object"),
    };
    let grid = match grid {
        Value::Null => Map::new(),
        Value::Object(map) => map.clone(),
        other => bail!("{section}: expected an object, got {other}"),
    };
    for key in grid.keys() {
        if !base.contains_key(key) {
            bail!("{section}.{key}: unknown parameter");
        }
    }
    let mut axes: Vec<(String, Vec<Value>)> = Vec::new();
    for (key, default) in &base {
        let options = match grid.get(key) {
            None => vec![default.clone()],
            Some(given) => alternatives(default, given),
        };
        if options.is_empty() {
            bail!("{section}.{key}: empty list of values");
        }
        axes.push((key.clone(), options));
    }

    let total: usize = axes.iter().map(|(_, o)| o.len()).product();
    let mut out = Vec::with_capacity(total);
    for mut index in 0..total {
        let mut picked = vec![0; axes.len()];
        for (slot, (_, options)) in picked.iter_mut().zip(&axes).rev() {
            *slot = index % options.len();
            index /= options.len();
        }
        let object: Map<String, Value> =
            axes.iter().zip(&picked).map(|((key, options), &i)| (key.clone(), options[i].clone())).collect();
        let value: T = serde_json::from_value(Value::Object(object.clone())).map_err(|e| {
            let fields = serde_json::to_string(&object).unwrap_or_default();
            anyhow!("{section}: {e} in combination {fields}")
        })?;
        out.push(value);
    }
    Ok(out)
}

fn alternatives(default: &Value, given: &Value) -> Vec<Value> {
    let nested = |v: &Value| matches!(v, Value::Array(items) if items.iter().all(Value::is_array));
    match (default, given) {
        (Value::Array(_), Value::Array(items)) if !items.is_empty() && items.iter().all(nested) && items.iter().any(|i| !i.as_array().unwrap().is_empty()) => {
            items.clone()
        }
        (Value::Array(_), _) => vec![given.clone()],
        (_, Value::Array(items)) => items.clone(),
        _ => vec![given.clone()],
    }
}
