//! Strict experiment-config ingestion. Configs are flat JSON documents:
//! `system`, `task`, `seed`, `out`, `workers`, plus task-specific keys at
//! the top level. Every unknown key anywhere is an error with its full
//! path, and all numeric parameters are range-checked at parse time; the
//! canonical serialization materializes defaults so parse(serialize(c)) == c.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use pesinlab_core::domination::DichotomyParams;
use pesinlab_core::entropy::MeasureMethod;
use pesinlab_core::systems::{make_system, SystemDescriptor};
use serde_json::{json, Map, Value};

#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid config:")?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemDescriptor,
    pub task: TaskConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskConfig {
    Lyap(LyapTask),
    Dominate(DominateTask),
    Dichotomy(DichotomyTask),
    Bowen(BowenTask),
    Graph(GraphTask),
    Pesin(PesinTask),
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Lyap(_) => "lyap",
            TaskConfig::Dominate(_) => "dominate",
            TaskConfig::Dichotomy(_) => "dichotomy",
            TaskConfig::Bowen(_) => "bowen",
            TaskConfig::Graph(_) => "graph",
            TaskConfig::Pesin(_) => "pesin",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapTask {
    pub n: usize,
    pub qr_stride: usize,
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominateTask {
    pub j: usize,
    pub n_max: u32,
    pub window: u32,
    pub split_horizon: usize,
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyTask {
    pub params: DichotomyParams,
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowenTask {
    pub delta: f64,
    pub n_range: (usize, usize),
    pub method: MeasureMethod,
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphTask {
    pub c: f64,
    pub delta: f64,
    pub n: usize,
    pub count: usize,
    pub j: usize,
    pub split_horizon: usize,
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PesinTask {
    pub delta: f64,
    pub points: usize,
    pub n_range: (usize, usize),
    pub spectrum_horizon: usize,
    pub qr_stride: usize,
    pub gap_threshold: f64,
    pub method: Option<MeasureMethod>,
    pub tolerance: f64,
    pub inequality_slack: f64,
}

/// Key-tracking view of one JSON object; every successful read marks its
/// key, and `finish` reports whatever was never read as unknown.
struct Section<'a> {
    map: &'a Map<String, Value>,
    path: String,
    taken: BTreeSet<&'a str>,
    errors: Vec<String>,
}

impl<'a> Section<'a> {
    fn new(map: &'a Map<String, Value>, path: &str) -> Self {
        Section { map, path: path.to_string(), taken: BTreeSet::new(), errors: Vec::new() }
    }

    fn at(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn take(&mut self, key: &'a str) -> Option<&'a Value> {
        let v = self.map.get(key);
        if v.is_some() {
            self.taken.insert(key);
        }
        v
    }

    fn error(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn u64_range(&mut self, key: &'a str, lo: u64, hi: u64, default: u64) -> u64 {
        match self.take(key) {
            None => default,
            Some(v) => match v.as_u64() {
                Some(n) if (lo..=hi).contains(&n) => n,
                Some(n) => {
                    let path = self.at(key);
                    self.error(format!("{path}: must be in [{lo}, {hi}], got {n}"));
                    default
                }
                None => {
                    let path = self.at(key);
                    self.error(format!("{path}: expected a non-negative integer"));
                    default
                }
            },
        }
    }

    fn f64_range(&mut self, key: &'a str, lo: f64, hi: f64, default: f64) -> f64 {
        match self.take(key) {
            None => default,
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() && x >= lo && x <= hi => x,
                Some(x) => {
                    let path = self.at(key);
                    self.error(format!("{path}: must be in [{lo}, {hi}], got {x}"));
                    default
                }
                None => {
                    let path = self.at(key);
                    self.error(format!("{path}: expected a number"));
                    default
                }
            },
        }
    }

    fn string(&mut self, key: &'a str) -> Option<String> {
        match self.take(key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                let path = self.at(key);
                self.error(format!("{path}: expected a string"));
                None
            }
        }
    }

    /// Pair [lo, hi] of non-negative integers with lo < hi.
    fn usize_pair(&mut self, key: &'a str, default: (usize, usize)) -> (usize, usize) {
        let Some(v) = self.take(key) else { return default };
        let path = self.at(key);
        let items: Option<Vec<u64>> =
            v.as_array().map(|a| a.iter().filter_map(|x| x.as_u64()).collect());
        match items {
            Some(pair) if pair.len() == 2 && v.as_array().unwrap().len() == 2 => {
                if pair[0] >= pair[1] {
                    self.error(format!("{path}: first entry must be below the second"));
                    default
                } else {
                    (pair[0] as usize, pair[1] as usize)
                }
            }
            _ => {
                self.error(format!("{path}: expected [lo, hi] with two non-negative integers"));
                default
            }
        }
    }

    fn point(&mut self, key: &'a str) -> Option<Vec<f64>> {
        let v = self.take(key)?;
        let path = self.at(key);
        let coords: Option<Vec<f64>> =
            v.as_array().map(|a| a.iter().filter_map(|x| x.as_f64()).collect());
        match coords {
            Some(c)
                if !c.is_empty()
                    && c.len() == v.as_array().unwrap().len()
                    && c.iter().all(|x| x.is_finite()) =>
            {
                Some(c)
            }
            _ => {
                self.error(format!("{path}: expected an array of finite coordinates"));
                None
            }
        }
    }

    fn finish(mut self) -> Vec<String> {
        for key in self.map.keys() {
            if !self.taken.contains(key.as_str()) {
                let path = self.at(key);
                self.errors.push(format!("{path}: unknown key"));
            }
        }
        self.errors
    }
}

fn as_object<'a>(v: &'a Value, path: &str, errors: &mut Vec<String>) -> Option<&'a Map<String, Value>> {
    match v.as_object() {
        Some(m) => Some(m),
        None => {
            errors.push(format!("{path}: expected an object"));
            None
        }
    }
}

/// Validates the `system` subtree key-by-key, then defers semantic checks
/// (unimodularity, invertibility) to the system constructor.
fn parse_system(v: &Value, path: &str, errors: &mut Vec<String>) -> Option<SystemDescriptor> {
    let map = as_object(v, path, errors)?;
    let mut sec = Section::new(map, path);
    let name = sec.string("name");
    let descriptor = match name.as_deref() {
        Some("cat_map") => Some(SystemDescriptor::CatMap),
        Some("linear_automorphism") => {
            let m = sec.take("matrix").and_then(|v| {
                serde_json::from_value::<Vec<Vec<i64>>>(v.clone()).ok()
            });
            match m {
                Some(matrix) => Some(SystemDescriptor::LinearAutomorphism { matrix }),
                None => {
                    sec.error(format!("{path}.matrix: expected an integer matrix"));
                    None
                }
            }
        }
        Some("perturbed_cat") => {
            let epsilon = sec.f64_range("epsilon", -1.0, 1.0, 0.0);
            Some(SystemDescriptor::PerturbedCat { epsilon })
        }
        Some("rotation") => {
            let angles = sec.take("angles").and_then(|v| {
                serde_json::from_value::<Vec<f64>>(v.clone()).ok()
            });
            match angles {
                Some(a) if !a.is_empty() && a.iter().all(|x| x.is_finite()) => {
                    Some(SystemDescriptor::Rotation { angles: a })
                }
                _ => {
                    sec.error(format!("{path}.angles: expected a non-empty array of finite numbers"));
                    None
                }
            }
        }
        Some("standard_map") => {
            let k = sec.f64_range("k", 0.0, 100.0, 0.0);
            Some(SystemDescriptor::StandardMap { k })
        }
        Some("block") => {
            let blocks = sec.take("blocks");
            match blocks.and_then(|b| b.as_array()) {
                Some(parts) if !parts.is_empty() => {
                    let mut out = Vec::new();
                    for (i, part) in parts.iter().enumerate() {
                        if let Some(d) = parse_system(part, &format!("{path}.blocks[{i}]"), errors) {
                            out.push(d);
                        }
                    }
                    (out.len() == parts.len()).then_some(SystemDescriptor::Block { blocks: out })
                }
                _ => {
                    sec.error(format!("{path}.blocks: expected a non-empty array of systems"));
                    None
                }
            }
        }
        Some("power") => {
            let exponent = sec.u64_range("exponent", 1, 20, 1) as u32;
            let base = sec
                .take("base")
                .and_then(|b| parse_system(b, &format!("{path}.base"), errors));
            base.map(|b| SystemDescriptor::Power { base: Box::new(b), exponent })
        }
        Some(other) => {
            sec.error(format!(
                "{path}.name: unknown system '{other}' (expected cat_map, linear_automorphism, perturbed_cat, rotation, standard_map, block, or power)"
            ));
            None
        }
        None => {
            sec.error(format!("{path}.name: required"));
            None
        }
    };
    errors.extend(sec.finish());
    let descriptor = descriptor?;
    if errors.is_empty() {
        if let Err(e) = make_system(&descriptor) {
            errors.push(format!("{path}: {e}"));
            return None;
        }
    }
    Some(descriptor)
}

fn parse_method(v: &Value, path: &str, errors: &mut Vec<String>) -> Option<MeasureMethod> {
    let map = as_object(v, path, errors)?;
    let mut sec = Section::new(map, path);
    let method = match sec.string("method").as_deref() {
        Some("grid") => {
            let resolution = sec.u64_range("resolution", 16, 65_536, 4096) as u32;
            Some(MeasureMethod::Grid { resolution })
        }
        Some("nested_mc") => {
            let population = sec.u64_range("population", 100, 1_000_000, 4000) as usize;
            let jitter = sec.f64_range("jitter", 1e-9, 0.25, 0.005);
            let moves = sec.u64_range("moves", 0, 100, 3) as usize;
            Some(MeasureMethod::NestedMc { population, jitter, moves })
        }
        Some(other) => {
            sec.error(format!("{path}.method: unknown method '{other}' (expected grid or nested_mc)"));
            None
        }
        None => {
            sec.error(format!("{path}.method: required"));
            None
        }
    };
    errors.extend(sec.finish());
    method
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| ConfigErrors(vec![format!("malformed JSON: {e}")]))?;
    let mut errors = Vec::new();
    let Some(map) = as_object(&value, "<root>", &mut errors) else {
        return Err(ConfigErrors(errors));
    };
    let mut sec = Section::new(map, "");

    let system = sec.take("system").cloned();
    let task_name = sec.string("task");
    let seed = sec.u64_range("seed", 0, u64::MAX, 0);
    let out = sec.string("out");
    let workers = sec.u64_range("workers", 1, 512, 1) as usize;

    let task = match task_name.as_deref() {
        Some("lyap") => Some(TaskConfig::Lyap(LyapTask {
            n: sec.u64_range("n", 100, 10_000_000, 2000) as usize,
            qr_stride: sec.u64_range("qr_stride", 1, 10, 1) as usize,
            point: sec.point("point"),
        })),
        Some("dominate") => Some(TaskConfig::Dominate(DominateTask {
            j: sec.u64_range("j", 1, 16, 1) as usize,
            n_max: sec.u64_range("n_max", 1, 200, 20) as u32,
            window: sec.u64_range("window", 0, 10_000, 10) as u32,
            split_horizon: sec.u64_range("split_horizon", 1, 100_000, 50) as usize,
            point: sec.point("point"),
        })),
        Some("dichotomy") => {
            let d = DichotomyParams::default();
            Some(TaskConfig::Dichotomy(DichotomyTask {
                params: DichotomyParams {
                    n: sec.u64_range("n", 500, 10_000_000, d.n as u64) as usize,
                    qr_stride: sec.u64_range("qr_stride", 1, 10, d.qr_stride as u64) as usize,
                    n_max: sec.u64_range("n_max", 1, 200, d.n_max as u64) as u32,
                    window: sec.u64_range("window", 0, 10_000, d.window as u64) as u32,
                    gap_threshold: sec.f64_range("gap_threshold", 1e-9, 1.0, d.gap_threshold),
                    split_horizon: sec
                        .u64_range("split_horizon", 1, 100_000, d.split_horizon as u64)
                        as usize,
                },
                point: sec.point("point"),
            }))
        }
        Some("bowen") => {
            let method = match sec.take("method") {
                Some(v) => parse_method(v, "method", &mut errors),
                None => Some(MeasureMethod::default_grid()),
            };
            let n_range = sec.usize_pair("n_range", (2, 6));
            if n_range.1 - n_range.0 < 3 {
                errors.push("n_range: must span at least 3 depths".into());
            }
            if n_range.1 > 60 {
                errors.push("n_range: depth limit is 60".into());
            }
            Some(TaskConfig::Bowen(BowenTask {
                delta: sec.f64_range("delta", 1e-6, 0.25, 0.1),
                n_range,
                method: method.unwrap_or(MeasureMethod::default_grid()),
                point: sec.point("point"),
            }))
        }
        Some("graph") => Some(TaskConfig::Graph(GraphTask {
            c: sec.f64_range("c", 1e-9, 10.0, 0.3),
            delta: sec.f64_range("delta", 1e-6, 0.25, 0.05),
            n: sec.u64_range("n", 0, 100, 10) as usize,
            count: sec.u64_range("count", 2, 10_000, 200) as usize,
            j: sec.u64_range("j", 1, 16, 1) as usize,
            split_horizon: sec.u64_range("split_horizon", 1, 100_000, 50) as usize,
            point: sec.point("point"),
        })),
        Some("pesin") => {
            let method = sec.take("method").and_then(|v| parse_method(v, "method", &mut errors));
            let n_range = sec.usize_pair("n_range", (2, 6));
            if n_range.1 - n_range.0 < 3 {
                errors.push("n_range: must span at least 3 depths".into());
            }
            Some(TaskConfig::Pesin(PesinTask {
                delta: sec.f64_range("delta", 1e-6, 0.25, 0.1),
                points: sec.u64_range("points", 1, 10_000, 20) as usize,
                n_range,
                spectrum_horizon: sec.u64_range("spectrum_horizon", 100, 1_000_000, 1000) as usize,
                qr_stride: sec.u64_range("qr_stride", 1, 10, 1) as usize,
                gap_threshold: sec.f64_range("gap_threshold", 1e-9, 1.0, 1e-2),
                method,
                tolerance: sec.f64_range("tolerance", 1e-9, 10.0, 0.1),
                inequality_slack: sec.f64_range("inequality_slack", 0.0, 10.0, 0.02),
            }))
        }
        Some(other) => {
            let path = sec.at("task");
            sec.error(format!(
                "{path}: unknown task '{other}' (expected lyap, dominate, dichotomy, bowen, graph, or pesin)"
            ));
            None
        }
        None => {
            let path = sec.at("task");
            sec.error(format!("{path}: required"));
            None
        }
    };

    errors.extend(sec.finish());

    let system = match system {
        Some(v) => parse_system(&v, "system", &mut errors),
        None => {
            errors.push("system: required".into());
            None
        }
    };
    if out.is_none() {
        errors.push("out: required".into());
    }

    // Cross-field checks need both the system and the task.
    if let (Some(system), Some(task)) = (&system, &task) {
        let dim = make_system(system).map(|s| s.dimension()).unwrap_or(0);
        let check_point = |point: &Option<Vec<f64>>, errors: &mut Vec<String>| {
            if let Some(p) = point {
                if p.len() != dim {
                    errors.push(format!("point: expected {dim} coordinates, got {}", p.len()));
                }
            }
        };
        match task {
            TaskConfig::Lyap(t) => check_point(&t.point, &mut errors),
            TaskConfig::Dominate(t) => {
                check_point(&t.point, &mut errors);
                if t.j >= dim {
                    errors.push(format!("j: must be below the system dimension {dim}"));
                }
            }
            TaskConfig::Dichotomy(t) => check_point(&t.point, &mut errors),
            TaskConfig::Bowen(t) => check_point(&t.point, &mut errors),
            TaskConfig::Graph(t) => {
                check_point(&t.point, &mut errors);
                if t.j >= dim {
                    errors.push(format!("j: must be below the system dimension {dim}"));
                }
            }
            TaskConfig::Pesin(_) => {}
        }
    }

    match (system, task, out, errors.is_empty()) {
        (Some(system), Some(task), Some(out), true) => {
            Ok(ExperimentConfig { system, task, seed, out: PathBuf::from(out), workers })
        }
        _ => Err(ConfigErrors(errors)),
    }
}

impl ExperimentConfig {
    /// Canonical JSON form with every default materialized; parsing it
    /// reproduces this config exactly.
    pub fn to_value(&self) -> Value {
        let mut map = Map::new();
        map.insert("system".into(), serde_json::to_value(&self.system).expect("descriptor serializes"));
        map.insert("task".into(), json!(self.task.name()));
        map.insert("seed".into(), json!(self.seed));
        map.insert("out".into(), json!(self.out.to_string_lossy()));
        map.insert("workers".into(), json!(self.workers));
        let point_entry = |map: &mut Map<String, Value>, point: &Option<Vec<f64>>| {
            if let Some(p) = point {
                map.insert("point".into(), json!(p));
            }
        };
        match &self.task {
            TaskConfig::Lyap(t) => {
                map.insert("n".into(), json!(t.n));
                map.insert("qr_stride".into(), json!(t.qr_stride));
                point_entry(&mut map, &t.point);
            }
            TaskConfig::Dominate(t) => {
                map.insert("j".into(), json!(t.j));
                map.insert("n_max".into(), json!(t.n_max));
                map.insert("window".into(), json!(t.window));
                map.insert("split_horizon".into(), json!(t.split_horizon));
                point_entry(&mut map, &t.point);
            }
            TaskConfig::Dichotomy(t) => {
                map.insert("n".into(), json!(t.params.n));
                map.insert("qr_stride".into(), json!(t.params.qr_stride));
                map.insert("n_max".into(), json!(t.params.n_max));
                map.insert("window".into(), json!(t.params.window));
                map.insert("gap_threshold".into(), json!(t.params.gap_threshold));
                map.insert("split_horizon".into(), json!(t.params.split_horizon));
                point_entry(&mut map, &t.point);
            }
            TaskConfig::Bowen(t) => {
                map.insert("delta".into(), json!(t.delta));
                map.insert("n_range".into(), json!([t.n_range.0, t.n_range.1]));
                map.insert("method".into(), method_value(&t.method));
                point_entry(&mut map, &t.point);
            }
            TaskConfig::Graph(t) => {
                map.insert("c".into(), json!(t.c));
                map.insert("delta".into(), json!(t.delta));
                map.insert("n".into(), json!(t.n));
                map.insert("count".into(), json!(t.count));
                map.insert("j".into(), json!(t.j));
                map.insert("split_horizon".into(), json!(t.split_horizon));
                point_entry(&mut map, &t.point);
            }
            TaskConfig::Pesin(t) => {
                map.insert("delta".into(), json!(t.delta));
                map.insert("points".into(), json!(t.points));
                map.insert("n_range".into(), json!([t.n_range.0, t.n_range.1]));
                map.insert("spectrum_horizon".into(), json!(t.spectrum_horizon));
                map.insert("qr_stride".into(), json!(t.qr_stride));
                map.insert("gap_threshold".into(), json!(t.gap_threshold));
                if let Some(m) = &t.method {
                    map.insert("method".into(), method_value(m));
                }
                map.insert("tolerance".into(), json!(t.tolerance));
                map.insert("inequality_slack".into(), json!(t.inequality_slack));
            }
        }
        Value::Object(map)
    }
}

fn method_value(method: &MeasureMethod) -> Value {
    serde_json::to_value(method).expect("method serializes")
}
