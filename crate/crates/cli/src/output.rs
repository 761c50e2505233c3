use anyhow::Result;
use serde_json::{Map, Value};

use crate::args::Format;

/// Rows under a fixed header. CSV output always starts with the header row;
/// JSON output is an array of objects keyed by the same column names.
#[derive(Debug)]
pub struct Table {
    pub headers: &'static [&'static str],
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(headers: &'static [&'static str]) -> Self {
        Table { headers, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(self.headers)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(cell))?;
                }
                Ok(String::from_utf8(w.into_inner()?)?)
            }
            Format::Json => {
                let records: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let map: Map<String, Value> =
                            self.headers.iter().map(|h| h.to_string()).zip(row.iter().cloned()).collect();
                        Value::Object(map)
                    })
                    .collect();
                let mut s = serde_json::to_string_pretty(&records)?;
                s.push('\n');
                Ok(s)
            }
        }
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn csv_and_json_agree() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![json!("1.5"), json!(3)]);
        t.push(vec![Value::Null, json!("x,y")]);
        assert_eq!(t.render(Format::Csv).unwrap(), "a,b\n1.5,3\n,\"x,y\"\n");
        let parsed: Value = serde_json::from_str(&t.render(Format::Json).unwrap()).unwrap();
        assert_eq!(parsed, json!([{"a": "1.5", "b": 3}, {"a": null, "b": "x,y"}]));
    }

    #[test]
    fn empty_table_keeps_header() {
        assert_eq!(Table::new(&["x"]).render(Format::Csv).unwrap(), "x\n");
        assert_eq!(Table::new(&["x"]).render(Format::Json).unwrap(), "[]\n");
    }
}
