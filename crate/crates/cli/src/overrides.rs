use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

/// Sets `dotted.key` inside a JSON object, creating nothing: the key's
/// parents must exist so typos fail here rather than deep in serde.
pub fn set(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("`{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                bail!("unknown config key `{key}`");
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
    }
    unreachable!("split yields at least one part")
}

/// Parses `key=value`; the value is JSON when it parses as JSON and a
/// plain string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .with_context(|| format!("`{s}` is not KEY=VALUE"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
