//! Plain-text checkpoint container.
//!
//! ```text
//! seminj-checkpoint 1
//! net rff_features 64
//! net rff_scale 4.0
//! net width 64
//! net blocks 3
//! net embed_dim 16
//! net embed_slots 6
//! meta convention add
//! meta epochs 2000
//! meta initial_mse 3.02
//! meta final_mse 0.0415
//! dataset circle 101 103 104 105 106 107
//! config 412
//! <412 bytes of TOML>
//! array rff 32 2
//! <one row of the last dimension per line>
//! array block0.weight 80 64
//! ...
//! end
//! ```
//!
//! Arrays appear in the order `rff` and then [`ModelParams::groups`]. Floats
//! are written in Rust's shortest round-trip form, so load is bitwise exact
//! and save → load → save reproduces the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use seminj_core::net::{ModelParams, NetConfig};
use seminj_core::sampler::VelocityConvention;

pub const MAGIC: &str = "seminj-checkpoint 1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("checkpoint i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint contents rejected: {0}")]
    Core(#[from] seminj_core::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Direction the sampler applies the learned velocity in.
    pub convention: VelocityConvention,
    pub epochs: usize,
    pub initial_mse: f64,
    /// Full-dataset MSE after training; drives the untrained warning.
    pub final_mse: f64,
    /// Seed banks trained on, `(shape name, seeds in slot order)`.
    pub datasets: Vec<(String, Vec<u64>)>,
    /// TOML of the run configuration that produced the checkpoint.
    pub config: String,
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = self.params.config();
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "net rff_features {}", c.rff_features);
        let _ = writeln!(s, "net rff_scale {}", float(c.rff_scale));
        let _ = writeln!(s, "net width {}", c.width);
        let _ = writeln!(s, "net blocks {}", c.blocks);
        let _ = writeln!(s, "net embed_dim {}", c.embed_dim);
        let _ = writeln!(s, "net embed_slots {}", c.embed_slots);
        let _ = writeln!(s, "meta convention {}", self.convention.as_str());
        let _ = writeln!(s, "meta epochs {}", self.epochs);
        let _ = writeln!(s, "meta initial_mse {}", float(self.initial_mse));
        let _ = writeln!(s, "meta final_mse {}", float(self.final_mse));
        for (name, seeds) in &self.datasets {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "dataset {name} {}", list.join(" "));
        }
        let _ = writeln!(s, "config {}", self.config.len());
        s.push_str(&self.config);
        s.push('\n');
        write_array(&mut s, "rff", &[c.rff_features / 2, 2], self.params.rff_matrix());
        let theta = self.params.learnable();
        for g in self.params.groups() {
            write_array(&mut s, &g.name, &g.shape, &theta[g.range.clone()]);
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cur = Cursor { text, pos: 0 };
        let magic = cur.line()?;
        if magic != MAGIC {
            return Err(cur.error_at(0, format!("expected header {MAGIC:?}")));
        }
        let net = NetConfig {
            rff_features: cur.keyed(&["net", "rff_features"], parse_usize)?,
            rff_scale: cur.keyed(&["net", "rff_scale"], parse_f64)?,
            width: cur.keyed(&["net", "width"], parse_usize)?,
            blocks: cur.keyed(&["net", "blocks"], parse_usize)?,
            embed_dim: cur.keyed(&["net", "embed_dim"], parse_usize)?,
            embed_slots: cur.keyed(&["net", "embed_slots"], parse_usize)?,
        };
        let convention = cur.keyed(&["meta", "convention"], |s| VelocityConvention::parse(s).map_err(|e| e.to_string()))?;
        let epochs = cur.keyed(&["meta", "epochs"], parse_usize)?;
        let initial_mse = cur.keyed(&["meta", "initial_mse"], parse_f64)?;
        let final_mse = cur.keyed(&["meta", "final_mse"], parse_f64)?;
        let mut datasets = Vec::new();
        while cur.peek_word() == Some("dataset") {
            let start = cur.pos;
            let line = cur.line()?;
            let mut words = line.split(' ').skip(1);
            let name = words.next().filter(|w| !w.is_empty()).ok_or_else(|| cur.error_at(start, "dataset line without a name"))?;
            let seeds = words
                .map(|w| w.parse::<u64>().map_err(|_| cur.error_at(start, format!("bad seed {w:?}"))))
                .collect::<Result<Vec<_>>>()?;
            datasets.push((name.to_string(), seeds));
        }
        let len = cur.keyed(&["config"], parse_usize)?;
        let config = cur.take(len)?.to_string();
        cur.expect_newline()?;
        net.validate()?;
        let rff = cur.array("rff", &[net.rff_features / 2, 2])?;
        let probe = ModelParams::init(net, 0)?;
        let mut theta = vec![0.0; probe.learnable().len()];
        for g in probe.groups() {
            let values = cur.array(&g.name, &g.shape)?;
            theta[g.range].copy_from_slice(&values);
        }
        let end = cur.pos;
        if cur.line()? != "end" {
            return Err(cur.error_at(end, "expected \"end\""));
        }
        if cur.pos != text.len() {
            return Err(cur.error_at(cur.pos, "trailing data after \"end\""));
        }
        let params = ModelParams::from_parts(net, rff, theta)?;
        Ok(Checkpoint { params, convention, epochs, initial_mse, final_mse, datasets, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        let text = std::str::from_utf8(&text)
            .map_err(|e| CheckpointError::Format { offset: e.valid_up_to(), message: "invalid UTF-8".into() })?;
        Self::parse(text)
    }
}

fn write_array(s: &mut String, name: &str, shape: &[usize], values: &[f64]) {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let _ = writeln!(s, "array {name} {}", dims.join(" "));
    let row = shape.last().copied().unwrap_or(1).max(1);
    for chunk in values.chunks(row) {
        let line: Vec<String> = chunk.iter().map(|&v| float(v)).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("expected an unsigned integer, got {s:?}"))
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite number, got {s:?}")),
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn error_at(&self, offset: usize, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Format { offset, message: message.into() }
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.text[self.pos..];
        let Some(n) = rest.find('\n') else {
            return Err(self.error_at(self.text.len(), "unexpected end of file"));
        };
        self.pos += n + 1;
        Ok(&rest[..n])
    }

    fn peek_word(&self) -> Option<&'a str> {
        self.text[self.pos..].split([' ', '\n']).next()
    }

    fn take(&mut self, len: usize) -> Result<&'a str> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.text.len());
        let Some(end) = end.filter(|&e| self.text.is_char_boundary(e)) else {
            return Err(self.error_at(self.text.len().min(self.pos.saturating_add(len)), "block runs past end of file"));
        };
        let out = &self.text[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn expect_newline(&mut self) -> Result<()> {
        if self.text[self.pos..].starts_with('\n') {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error_at(self.pos, "expected newline"))
        }
    }

    /// `prefix… value` on one line.
    fn keyed<T>(&mut self, prefix: &[&str], parse: impl FnOnce(&str) -> std::result::Result<T, String>) -> Result<T> {
        let start = self.pos;
        let line = self.line()?;
        let mut words = line.split(' ');
        for want in prefix {
            if words.next() != Some(*want) {
                return Err(self.error_at(start, format!("expected \"{}\"", prefix.join(" "))));
            }
        }
        let value = words.next().ok_or_else(|| self.error_at(start, "missing value"))?;
        if words.next().is_some() {
            return Err(self.error_at(start, "unexpected extra fields"));
        }
        parse(value).map_err(|m| self.error_at(start, m))
    }

    fn array(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let start = self.pos;
        let header = self.line()?;
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        let want = format!("array {name} {}", dims.join(" "));
        if header != want {
            return Err(self.error_at(start, format!("expected {want:?}, found {header:?}")));
        }
        let total: usize = shape.iter().product();
        let row = shape.last().copied().unwrap_or(1).max(1);
        let mut out = Vec::with_capacity(total);
        while out.len() < total {
            let line_start = self.pos;
            let line = self.line()?;
            let before = out.len();
            for w in line.split(' ') {
                out.push(parse_f64(w).map_err(|m| self.error_at(line_start, m))?);
            }
            if out.len() - before != row.min(total - before) {
                return Err(self.error_at(line_start, format!("expected {} values on this row of {name}", row.min(total - before))));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let net = NetConfig { rff_features: 8, width: 4, blocks: 2, embed_dim: 3, ..NetConfig::default() };
        Checkpoint {
            params: ModelParams::init(net, 3).unwrap(),
            convention: VelocityConvention::Add,
            epochs: 5,
            initial_mse: 2.5,
            final_mse: 1e-20,
            datasets: vec![("circle".into(), vec![101, 103])],
            config: "seed = 0\n[train]\nepochs = 5\n".into(),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let ck = small();
        let text = ck.to_text();
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn truncation_reports_offset() {
        let text = small().to_text();
        for cut in [0, 10, text.len() / 2, text.len() - 1] {
            match Checkpoint::parse(&text[..cut]) {
                Err(CheckpointError::Format { offset, .. }) => assert!(offset <= cut, "{offset} > {cut}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_value_is_located() {
        let text = small().to_text();
        let at = text.find("array head.bias").unwrap();
        let line_end = at + text[at..].find('\n').unwrap() + 1;
        let mut bad = text.clone();
        bad.replace_range(line_end..line_end + 1, "x");
        match Checkpoint::parse(&bad) {
            Err(CheckpointError::Format { offset, .. }) => assert_eq!(offset, line_end),
            other => panic!("{other:?}"),
        }
    }
}
