//! Text checkpoints, CSV tables with `#` metadata headers, and key=value
//! configuration files.
//!
//! Floats in checkpoints are written with 17 significant digits so every
//! `f64` survives a save/load cycle bit for bit. CSV values use Rust's
//! shortest round-trip formatting, which never depends on locale.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::Trajectory;
use crate::model::{Activation, Arch, Classifier, Conditioning, NoisePredictor};
use crate::schedules::{Schedule, ScheduleKind};

pub const CHECKPOINT_TAG: &str = "difflab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CSV_FORMAT_VERSION: u32 = 1;

/// Model stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Eps(NoisePredictor),
    Classifier(Classifier),
}

impl StoredModel {
    fn arch(&self) -> &Arch {
        match self {
            StoredModel::Eps(m) => m.arch(),
            StoredModel::Classifier(c) => c.arch(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            StoredModel::Eps(m) => m.params(),
            StoredModel::Classifier(c) => c.params(),
        }
    }
}

/// Where a checkpoint's parameters came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub train_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: StoredModel,
    pub schedule: Schedule,
    pub provenance: Provenance,
    /// `#` comment lines carried verbatim (without the leading `# `).
    pub comments: Vec<String>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_TAG} v{CHECKPOINT_VERSION}");
        for c in &self.comments {
            let _ = writeln!(s, "# {c}");
        }
        let arch = self.model.arch();
        match &self.model {
            StoredModel::Eps(m) => {
                let _ = writeln!(s, "model eps");
                match m.conditioning() {
                    Conditioning::None => {
                        let _ = writeln!(s, "conditioning none");
                    }
                    Conditioning::Classes(k) => {
                        let _ = writeln!(s, "conditioning classes {k}");
                    }
                }
            }
            StoredModel::Classifier(c) => {
                let _ = writeln!(s, "model classifier");
                let _ = writeln!(s, "classes {}", c.classes());
            }
        }
        let _ = writeln!(s, "data_dim {}", arch.data_dim);
        let _ = writeln!(s, "hidden {}", join(&arch.hidden));
        let _ = writeln!(s, "activation {}", arch.activation.name());
        match self.schedule.kind() {
            ScheduleKind::Linear {
                beta_start,
                beta_end,
            } => {
                let _ = writeln!(s, "schedule linear {} {}", fmt_f64(beta_start), fmt_f64(beta_end));
            }
            ScheduleKind::Cosine { offset } => {
                let _ = writeln!(s, "schedule cosine {}", fmt_f64(offset));
            }
        }
        let _ = writeln!(s, "timesteps {}", self.schedule.steps());
        let _ = writeln!(s, "seed {}", self.provenance.seed);
        let _ = writeln!(s, "train_steps {}", self.provenance.train_steps);
        let params = self.model.params();
        let _ = writeln!(s, "params {}", params.len());
        for p in params {
            let _ = writeln!(s, "{}", fmt_f64(*p));
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut r = LineReader::new(text, path);
        let header = r.next_line()?;
        let expected = format!("{CHECKPOINT_TAG} v{CHECKPOINT_VERSION}");
        if header != expected {
            return Err(r.error(if header.starts_with(CHECKPOINT_TAG) {
                format!("unsupported checkpoint version {header:?}, expected {expected:?}")
            } else {
                format!("not a checkpoint: expected {expected:?}")
            }));
        }
        let mut comments = Vec::new();
        let mut line = r.next_line()?;
        while let Some(c) = line.strip_prefix('#') {
            comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
            line = r.next_line()?;
        }
        let kind = r.field_in(line, "model")?.to_string();
        let (conditioning, classes) = match kind.as_str() {
            "eps" => {
                let v = r.field("conditioning")?;
                let c = match v.split_whitespace().collect::<Vec<_>>().as_slice() {
                    ["none"] => Conditioning::None,
                    ["classes", k] => Conditioning::Classes(r.number(k)?),
                    _ => return Err(r.error(format!("bad conditioning {v:?}"))),
                };
                (Some(c), None)
            }
            "classifier" => {
                let k = r.field("classes")?;
                (None, Some(r.number::<usize>(k)?))
            }
            other => return Err(r.error(format!("unknown model kind {other:?}"))),
        };
        let data_dim: usize = {
            let v = r.field("data_dim")?;
            r.number(v)?
        };
        let hidden = {
            let v = r.field("hidden")?;
            if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(|h| r.number::<usize>(h)).collect::<Result<Vec<_>>>()?
            }
        };
        let activation = match r.field("activation")? {
            "tanh" => Activation::Tanh,
            other => return Err(r.error(format!("unknown activation {other:?}"))),
        };
        let sched_kind = {
            let v = r.field("schedule")?;
            match v.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["linear", a, b] => ScheduleKind::Linear {
                    beta_start: r.number(a)?,
                    beta_end: r.number(b)?,
                },
                ["cosine", o] => ScheduleKind::Cosine { offset: r.number(o)? },
                _ => return Err(r.error(format!("bad schedule {v:?}"))),
            }
        };
        let steps: usize = {
            let v = r.field("timesteps")?;
            r.number(v)?
        };
        let schedule = Schedule::from_kind(sched_kind, steps).map_err(|e| r.error(e.to_string()))?;
        let seed: u64 = {
            let v = r.field("seed")?;
            r.number(v)?
        };
        let train_steps: usize = {
            let v = r.field("train_steps")?;
            r.number(v)?
        };
        let count: usize = {
            let v = r.field("params")?;
            r.number(v)?
        };
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let v = r.next_line()?;
            params.push(r.number::<f64>(v)?);
        }
        if r.next_line()? != "end" {
            return Err(r.error("expected \"end\" after the parameter block".into()));
        }
        if let Some(extra) = r.lines.next() {
            r.line += 1;
            return Err(r.error(format!("trailing content {extra:?}")));
        }
        let arch = Arch {
            data_dim,
            hidden,
            activation,
        };
        let at_end = |e: Error| Error::Parse {
            path: path.to_path_buf(),
            line: r.line,
            msg: e.to_string(),
        };
        let model = match (conditioning, classes) {
            (Some(c), _) => StoredModel::Eps(NoisePredictor::from_params(arch, c, params).map_err(at_end)?),
            (_, Some(k)) => StoredModel::Classifier(Classifier::from_params(arch, k, params).map_err(at_end)?),
            _ => unreachable!(),
        };
        Ok(Self {
            model,
            schedule,
            provenance: Provenance { seed, train_steps },
            comments,
        })
    }
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line: usize,
    path: &'a Path,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        Self {
            lines: text.lines(),
            line: 0,
            path,
        }
    }

    fn error(&self, msg: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.line += 1;
        self.lines
            .next()
            .ok_or_else(|| self.error("unexpected end of file".into()))
    }

    fn field_in(&self, line: &'a str, key: &str) -> Result<&'a str> {
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            None if line == key => Ok(""),
            _ => Err(self.error(format!("expected {key:?}, found {line:?}"))),
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        self.field_in(line, key)
    }

    fn number<T: std::str::FromStr>(&self, v: &str) -> Result<T> {
        v.trim()
            .parse()
            .map_err(|_| self.error(format!("cannot parse {v:?} as a number")))
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_file(path, &ckpt.render())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::parse(&read_file(path)?, path)
}

/// Ordered `key = value` pairs written as the `#` header of every CSV file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(kind: &str) -> Self {
        let mut m = Self::default();
        m.push("format", format!("difflab-{kind} v{CSV_FORMAT_VERSION}"));
        m
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s
    }
}

/// Simple CSV builder: metadata block, header row, data rows.
#[derive(Debug, Clone)]
pub struct CsvTable {
    meta: Metadata,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(meta: Metadata, header: &[&str]) -> Self {
        Self {
            meta,
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.meta.render();
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }
}

/// One row of a [`SampleTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub chain: usize,
    pub t: usize,
    pub x: Vec<f64>,
}

/// Sampled or simulated chain states.
///
/// Columns: `chain,t,dim0,…,dim{d−1}`, followed by `label` when a class
/// label was requested and `scale` when guidance was applied; those two are
/// constant over the table.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub dim: usize,
    pub rows: Vec<SampleRow>,
    pub label: Option<usize>,
    pub scale: Option<f64>,
}

impl SampleTable {
    pub fn from_trajectories(dim: usize, trajs: &[Trajectory]) -> Self {
        let rows = trajs
            .iter()
            .enumerate()
            .flat_map(|(chain, tr)| {
                tr.states.iter().map(move |(t, x)| SampleRow {
                    chain,
                    t: *t,
                    x: x.clone(),
                })
            })
            .collect();
        Self {
            dim,
            rows,
            label: None,
            scale: None,
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["chain".to_string(), "t".to_string()];
        h.extend((0..self.dim).map(|k| format!("dim{k}")));
        if self.label.is_some() {
            h.push("label".into());
        }
        if self.scale.is_some() {
            h.push("scale".into());
        }
        h
    }

    pub fn render(&self, meta: &Metadata) -> String {
        let mut s = meta.render();
        let _ = writeln!(s, "{}", self.header().join(","));
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.chain, r.t);
            for v in &r.x {
                let _ = write!(s, ",{v}");
            }
            if let Some(l) = self.label {
                let _ = write!(s, ",{l}");
            }
            if let Some(sc) = self.scale {
                let _ = write!(s, ",{sc}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| err(1, "missing header row".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "chain" || cols[1] != "t" {
            return Err(err(hl + 1, format!("unexpected header {header:?}")));
        }
        let dim = cols[2..].iter().take_while(|c| c.starts_with("dim")).count();
        for (k, c) in cols[2..2 + dim].iter().enumerate() {
            if *c != format!("dim{k}") {
                return Err(err(hl + 1, format!("unexpected column {c:?}")));
            }
        }
        let rest = &cols[2 + dim..];
        let has_label = rest.first() == Some(&"label");
        let has_scale = rest.last() == Some(&"scale");
        if dim == 0 || rest.len() != has_label as usize + has_scale as usize {
            return Err(err(hl + 1, format!("unexpected header {header:?}")));
        }
        let mut table = SampleTable {
            dim,
            rows: Vec::new(),
            label: None,
            scale: None,
        };
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(err(i + 1, format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| err(i + 1, format!("bad number {s:?}"))) };
            let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| err(i + 1, format!("bad integer {s:?}"))) };
            let x = f[2..2 + dim].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            if has_label {
                table.label = Some(int(f[2 + dim])?);
            }
            if has_scale {
                table.scale = Some(num(f[f.len() - 1])?);
            }
            table.rows.push(SampleRow {
                chain: int(f[0])?,
                t: int(f[1])?,
                x,
            });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?, path)
    }
}

/// Parse a `key = value` configuration file. Blank lines and lines starting
/// with `#` are ignored; repeated keys are an error.
pub fn parse_config(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(format!("duplicate key {k:?}")));
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config(&read_file(path)?, path)
}

/// Write `content` to `path`, or to standard output when `path` is `None`.
pub fn emit(path: Option<&PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, content)?,
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn sample_ckpt() -> Checkpoint {
        let arch = Arch::new(1, vec![5, 3]);
        let m = NoisePredictor::init(arch, Conditioning::Classes(2), &mut RngState::new(4, 0).rng()).unwrap();
        Checkpoint {
            model: StoredModel::Eps(m),
            schedule: Schedule::linear(30, 1e-3, 0.2).unwrap(),
            provenance: Provenance { seed: 4, train_steps: 0 },
            comments: vec!["command = init".into()],
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let c = sample_ckpt();
        let text = c.render();
        let back = Checkpoint::parse(&text, Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.render(), text);
    }

    #[test]
    fn classifier_and_cosine_round_trip() {
        let cl = Classifier::init(Arch::new(2, vec![]), 3, &mut RngState::new(1, 0).rng()).unwrap();
        let c = Checkpoint {
            model: StoredModel::Classifier(cl),
            schedule: Schedule::cosine(17, 0.008).unwrap(),
            provenance: Provenance { seed: 9, train_steps: 12 },
            comments: vec![],
        };
        let back = Checkpoint::parse(&c.render(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seventeen_digits_round_trip_awkward_values() {
        for v in [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 5e-324, -1.7976931348623157e308, 2.0f64.sqrt()] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn truncation_reports_the_line() {
        let text = sample_ckpt().render();
        let lines: Vec<&str> = text.lines().collect();
        let cut = lines[..14].join("\n");
        match Checkpoint::parse(&cut, Path::new("ck.txt")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 15);
                assert!(msg.contains("end of file"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_and_field_errors() {
        let text = sample_ckpt().render();
        let bumped = text.replacen("v1", "v9", 1);
        let e = Checkpoint::parse(&bumped, Path::new("c")).unwrap_err();
        assert!(e.to_string().contains("version"), "{e}");
        assert!(Checkpoint::parse("hello\n", Path::new("c")).is_err());
        let bad = text.replacen("timesteps 30", "timesteps x", 1);
        match Checkpoint::parse(&bad, Path::new("c")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
        let bad_sched = text.replacen("timesteps 30", "timesteps 0", 1);
        assert!(Checkpoint::parse(&bad_sched, Path::new("c")).is_err());
        let trailing = format!("{text}extra\n");
        assert!(Checkpoint::parse(&trailing, Path::new("c")).is_err());
    }

    #[test]
    fn sample_table_round_trip() {
        let mut tr = Trajectory::new();
        tr.push(2, vec![0.5, -1.25]);
        tr.push(1, vec![0.1, 3.0]);
        let mut t = SampleTable::from_trajectories(2, &[tr.clone(), tr]);
        t.label = Some(1);
        t.scale = Some(2.5);
        let text = t.render(&Metadata::new("samples"));
        assert!(text.starts_with("# format = difflab-samples v1\nchain,t,dim0,dim1,label,scale\n"));
        assert_eq!(SampleTable::parse(&text, Path::new("s")).unwrap(), t);
        let plain = SampleTable { label: None, scale: None, ..t };
        assert_eq!(SampleTable::parse(&plain.render(&Metadata::default()), Path::new("s")).unwrap(), plain);
    }

    #[test]
    fn sample_table_rejects_ragged_rows() {
        let e = SampleTable::parse("chain,t,dim0\n0,1,0.5\n0,0\n", Path::new("s")).unwrap_err();
        match e {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_parsing() {
        let c = parse_config("# comment\n\nsteps = 10\n lr=0.5 \n", Path::new("c")).unwrap();
        assert_eq!(c["steps"], "10");
        assert_eq!(c["lr"], "0.5");
        assert!(parse_config("a=1\na=2\n", Path::new("c")).is_err());
        match parse_config("ok=1\nnot a pair\n", Path::new("c")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_numbers_use_a_period() {
        let mut t = CsvTable::new(Metadata::new("test"), &["a"]);
        t.push(vec![format!("{}", 1234567.5f64)]);
        assert!(t.render().ends_with("a\n1234567.5\n"));
    }
}
