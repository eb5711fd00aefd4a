use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ControlError;

pub const TRACE_COLUMNS: [&str; 9] = [
    "t_s",
    "depth_mm",
    "f_handle_n",
    "f_tip_true_n",
    "f_tip_est_n",
    "f_friction_n",
    "f_shaft_n",
    "e_f_n",
    "trigger",
];

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub t_s: f64,
    pub depth_mm: f64,
    pub f_handle_n: f64,
    pub f_tip_true_n: f64,
    pub f_tip_est_n: f64,
    pub f_friction_n: f64,
    pub f_shaft_n: f64,
    pub e_f_n: f64,
    pub trigger: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMode {
    Auto,
    Collab,
}

impl TraceMode {
    fn as_str(self) -> &'static str {
        match self {
            TraceMode::Auto => "auto",
            TraceMode::Collab => "collab",
        }
    }
}

/// Provenance header written as the first comment line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub version: String,
    pub seed: u64,
    pub insertion: u64,
    pub phantom: String,
    pub phantom_hash: String,
    pub config_hash: String,
    pub mode: TraceMode,
    pub estimator: String,
    /// Who drove the handle: `robot` for constant-velocity runs.
    pub operator: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertionTrace {
    pub meta: TraceMeta,
    pub samples: Vec<ForceSample>,
}

#[derive(Deserialize)]
struct Row {
    t_s: f64,
    depth_mm: f64,
    f_handle_n: f64,
    f_tip_true_n: f64,
    f_tip_est_n: f64,
    f_friction_n: f64,
    f_shaft_n: f64,
    e_f_n: f64,
    trigger: u8,
}

impl TraceMeta {
    fn header_line(&self) -> String {
        format!(
            "# tipforce-trace version={} seed={} insertion={} phantom={} phantom_hash={} config_hash={} mode={} estimator={} operator={} alpha={}",
            self.version,
            self.seed,
            self.insertion,
            self.phantom,
            self.phantom_hash,
            self.config_hash,
            self.mode.as_str(),
            self.estimator,
            self.operator,
            self.alpha
        )
    }

    fn parse(line: &str) -> Result<Self, ControlError> {
        let body = line
            .strip_prefix("# tipforce-trace")
            .ok_or_else(|| ControlError::Trace("missing trace header comment".into()))?;
        let kv: BTreeMap<&str, &str> = body
            .split_whitespace()
            .filter_map(|p| p.split_once('='))
            .collect();
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| ControlError::Trace(format!("header lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64, ControlError> {
            get(k)?
                .parse()
                .map_err(|_| ControlError::Trace(format!("header field `{k}` is not a number")))
        };
        let int = |k: &str| -> Result<u64, ControlError> {
            get(k)?
                .parse()
                .map_err(|_| ControlError::Trace(format!("header field `{k}` is not an integer")))
        };
        Ok(Self {
            version: get("version")?.to_string(),
            seed: int("seed")?,
            insertion: int("insertion")?,
            phantom: get("phantom")?.to_string(),
            phantom_hash: get("phantom_hash")?.to_string(),
            config_hash: get("config_hash")?.to_string(),
            mode: match get("mode")? {
                "auto" => TraceMode::Auto,
                "collab" => TraceMode::Collab,
                m => return Err(ControlError::Trace(format!("unknown mode `{m}`"))),
            },
            estimator: get("estimator")?.to_string(),
            operator: get("operator")?.to_string(),
            alpha: num("alpha")?,
        })
    }
}

impl InsertionTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_depth(&self) -> f64 {
        self.samples.iter().map(|s| s.depth_mm).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ControlError> {
        let mut w = w;
        writeln!(w, "{}", self.meta.header_line())?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(TRACE_COLUMNS)?;
        for s in &self.samples {
            csv.write_record([
                s.t_s.to_string(),
                s.depth_mm.to_string(),
                s.f_handle_n.to_string(),
                s.f_tip_true_n.to_string(),
                s.f_tip_est_n.to_string(),
                s.f_friction_n.to_string(),
                s.f_shaft_n.to_string(),
                s.e_f_n.to_string(),
                (s.trigger as u8).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut r: R) -> Result<Self, ControlError> {
        let mut first = String::new();
        r.read_line(&mut first)?;
        let meta = TraceMeta::parse(first.trim_end())?;
        let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = csv.headers()?.clone();
        if headers.iter().ne(TRACE_COLUMNS) {
            return Err(ControlError::Trace(format!(
                "unexpected columns: {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for row in csv.deserialize() {
            let r: Row = row?;
            samples.push(ForceSample {
                t_s: r.t_s,
                depth_mm: r.depth_mm,
                f_handle_n: r.f_handle_n,
                f_tip_true_n: r.f_tip_true_n,
                f_tip_est_n: r.f_tip_est_n,
                f_friction_n: r.f_friction_n,
                f_shaft_n: r.f_shaft_n,
                e_f_n: r.e_f_n,
                trigger: r.trigger != 0,
            });
        }
        Ok(Self { meta, samples })
    }

    pub fn save(&self, path: &Path) -> Result<(), ControlError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ControlError> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
