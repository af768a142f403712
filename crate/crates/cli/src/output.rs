use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

/// Where an artifact goes: a file, or standard output.
pub fn open(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Run metadata echoed into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub version: &'static str,
    pub config: Value,
    /// Extra facts such as error bounds, in insertion order.
    pub notes: Vec<(String, Value)>,
}

impl Meta {
    pub fn new(config: &impl Serialize) -> Self {
        Meta {
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::to_value(config).expect("config serializes"),
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, key: &str, value: impl Serialize) -> Self {
        self.notes.push((
            key.to_owned(),
            serde_json::to_value(value).expect("note serializes"),
        ));
        self
    }

    pub fn write_csv_header(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "# fdp {}", self.version)?;
        writeln!(out, "# config: {}", self.config)?;
        for (k, v) in &self.notes {
            writeln!(out, "# {k}: {v}")?;
        }
        Ok(())
    }

    /// `{"meta": {...}, <payload fields>}`.
    pub fn wrap_json(&self, payload: Value) -> Value {
        let notes: serde_json::Map<String, Value> = self.notes.iter().cloned().collect();
        let mut root = serde_json::Map::new();
        root.insert(
            "meta".into(),
            json!({ "version": self.version, "config": self.config, "notes": notes }),
        );
        match payload {
            Value::Object(fields) => root.extend(fields),
            other => {
                root.insert("result".into(), other);
            }
        }
        Value::Object(root)
    }
}

pub fn write_json(out: &mut dyn Write, value: &Value) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)
}

/// `x` with six significant digits, fixed notation for moderate magnitudes.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}
