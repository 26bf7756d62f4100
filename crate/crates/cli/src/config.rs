//! Run configuration: a line-oriented, sectioned key–value format.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Values are numbers, comma-separated lists, or `;`-separated rows of lists (matrices and
//! point lists).  Unknown sections or keys are errors.  See `docs/config.md`.

use critical_ls::coupling::CouplingModel;
use critical_ls::domain::{DomainModel, GridDomain, QuadParams};
use critical_ls::Point;
use nalgebra::DMatrix;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

fn err(line: Option<usize>, msg: impl Into<String>) -> ConfigError {
    ConfigError { line, msg: msg.into() }
}

type Section = BTreeMap<String, (usize, String)>;

const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["name", "seed"]),
    ("suite", &["configs"]),
    ("coupling", &["beta", "decomposition"]),
    ("domain", &["kind", "center", "radius", "corner", "widths", "spacing", "base", "eta", "quadrature"]),
    ("ansatz", &["xi"]),
    ("kernel", &["resolution"]),
    ("robin", &["starts", "expected"]),
    ("scaling", &["deltas", "lambda", "cross_deltas"]),
    ("reduce", &["deltas", "lambda", "contraction_beta"]),
    ("energy", &["lambda0", "samples", "delta0"]),
    ("schedule", &["lambda"]),
    ("trajectory", &["cross_beta", "segregation", "check_lambda", "center_tol"]),
    ("coercivity", &["lambdas", "cross_beta", "sweep", "threshold"]),
];

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err(Some(line_no), "unterminated section header"))?.trim();
            let keys = SCHEMA
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| err(Some(line_no), format!("unknown section [{name}]")))?;
            if out.contains_key(name) {
                return Err(err(Some(line_no), format!("duplicate section [{name}]")));
            }
            out.insert(keys.0.to_string(), Section::new());
            current = Some(name.to_string());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(Some(line_no), "expected `key = value`"))?;
        let sec = current.as_ref().ok_or_else(|| err(Some(line_no), "key outside of a section"))?;
        let k = k.trim();
        let allowed = SCHEMA.iter().find(|(s, _)| s == sec).unwrap().1;
        if !allowed.contains(&k) {
            return Err(err(Some(line_no), format!("unknown key `{k}` in [{sec}]")));
        }
        let s = out.get_mut(sec).unwrap();
        if s.insert(k.to_string(), (line_no, v.trim().to_string())).is_some() {
            return Err(err(Some(line_no), format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

struct Reader<'a> {
    sections: &'a BTreeMap<String, Section>,
}

impl Reader<'_> {
    fn raw(&self, sec: &str, key: &str) -> Option<&(usize, String)> {
        self.sections.get(sec).and_then(|s| s.get(key))
    }

    fn has(&self, sec: &str) -> bool {
        self.sections.contains_key(sec)
    }

    fn list(&self, sec: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some((l, v)) => parse_list(v).map(Some).map_err(|m| err(Some(*l), format!("{sec}.{key}: {m}"))),
        }
    }

    fn rows(&self, sec: &str, key: &str) -> Result<Option<Vec<Vec<f64>>>, ConfigError> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some((l, v)) => v
                .split(';')
                .map(|r| parse_list(r).map_err(|m| err(Some(*l), format!("{sec}.{key}: {m}"))))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn num(&self, sec: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.list(sec, key)? {
            None => Ok(None),
            Some(v) if v.len() == 1 => Ok(Some(v[0])),
            Some(_) => Err(err(self.raw(sec, key).map(|r| r.0), format!("{sec}.{key}: expected a single number"))),
        }
    }

    fn int(&self, sec: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.num(sec, key)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(Some(v as usize)),
            Some(v) => Err(err(self.raw(sec, key).map(|r| r.0), format!("{sec}.{key}: expected a nonnegative integer, got {v}"))),
        }
    }

    fn text(&self, sec: &str, key: &str) -> Option<(usize, String)> {
        self.raw(sec, key).cloned()
    }

    fn point(&self, sec: &str, key: &str) -> Result<Option<Point>, ConfigError> {
        match self.list(sec, key)? {
            None => Ok(None),
            Some(v) => to_point(&v).map(Some).map_err(|m| err(self.raw(sec, key).map(|r| r.0), format!("{sec}.{key}: {m}"))),
        }
    }

    fn points(&self, sec: &str, key: &str) -> Result<Option<Vec<Point>>, ConfigError> {
        match self.rows(sec, key)? {
            None => Ok(None),
            Some(rows) => rows
                .iter()
                .map(|r| to_point(r).map_err(|m| err(self.raw(sec, key).map(|r| r.0), format!("{sec}.{key}: {m}"))))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| if v.is_empty() { Err("empty list".to_string()) } else { Ok(v) })
}

fn to_point(v: &[f64]) -> Result<Point, String> {
    if v.len() != 4 {
        return Err(format!("expected 4 coordinates, got {}", v.len()));
    }
    Ok([v[0], v[1], v[2], v[3]])
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Ball { center: Point, radius: f64 },
    Box { corner: Point, widths: [f64; 4] },
    GridBall { center: Point, radius: f64, spacing: f64 },
    GridBox { corner: Point, widths: [f64; 4], spacing: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub spec: DomainSpec,
    pub eta: Option<f64>,
    pub coarse: bool,
}

impl DomainConfig {
    pub fn build(&self) -> Result<DomainModel, critical_ls::Error> {
        let mut dom = match &self.spec {
            DomainSpec::Ball { center, radius } => DomainModel::ball(*center, *radius)?,
            DomainSpec::Box { corner, widths } => DomainModel::cuboid(*corner, *widths)?,
            DomainSpec::GridBall { center, radius, spacing } => DomainModel::grid(GridDomain::ball(*center, *radius, *spacing)?),
            DomainSpec::GridBox { corner, widths, spacing } => DomainModel::grid(GridDomain::cuboid(*corner, *widths, *spacing)?),
        };
        if let Some(eta) = self.eta {
            dom = dom.with_eta(eta)?;
        }
        if self.coarse {
            dom = dom.with_quad(QuadParams::coarse());
        }
        Ok(dom)
    }

    /// The same geometry with analytic Green function, for grid domains.
    pub fn analytic(&self) -> Option<DomainConfig> {
        let spec = match &self.spec {
            DomainSpec::GridBall { center, radius, .. } => DomainSpec::Ball { center: *center, radius: *radius },
            DomainSpec::GridBox { corner, widths, .. } => DomainSpec::Box { corner: *corner, widths: *widths },
            _ => return None,
        };
        Some(DomainConfig { spec, ..self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub path: PathBuf,
    pub seed: u64,
    pub suite: Vec<PathBuf>,
    pub coupling: Option<CouplingModel>,
    pub domain: Option<DomainConfig>,
    pub xi: Option<Vec<Point>>,
    pub kernel_resolution: usize,
    pub robin_starts: usize,
    pub robin_expected: Option<Point>,
    pub scaling_deltas: Vec<f64>,
    pub scaling_lambda: f64,
    pub cross_deltas: Vec<f64>,
    pub reduce_deltas: Vec<f64>,
    pub reduce_lambda: f64,
    pub contraction_beta: Option<f64>,
    pub energy_lambda0: f64,
    pub energy_samples: usize,
    pub energy_delta0: f64,
    pub schedule: Vec<f64>,
    pub trajectory_cross_beta: Option<f64>,
    pub segregation: bool,
    pub check_lambda: f64,
    pub center_tol: f64,
    pub coercivity_lambdas: Vec<f64>,
    pub coercivity_cross_beta: Option<f64>,
    pub sweep: Option<(f64, f64, usize)>,
    pub sweep_threshold: f64,
    /// Section names present in the file; stages run iff their section is present.
    pub sections: BTreeSet<String>,
}

fn check_lambda_range(v: &[f64], what: &str) -> Result<(), ConfigError> {
    if let Some(l) = v.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(err(None, format!("{what}: lambda entries must lie in (0,1), got {l}")));
    }
    Ok(())
}

fn check_positive(v: &[f64], what: &str) -> Result<(), ConfigError> {
    if let Some(x) = v.iter().find(|x| !(**x > 0.0)) {
        return Err(err(None, format!("{what}: entries must be positive, got {x}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let sections = parse_sections(text)?;
        let r = Reader { sections: &sections };
        let name = r
            .text("run", "name")
            .map(|t| t.1)
            .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into()));
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(err(None, format!("run.name `{name}` must be nonempty [A-Za-z0-9_-]")));
        }
        let seed = match r.num("run", "seed")? {
            None => 0,
            Some(v) if v >= 0.0 && v.fract() == 0.0 => v as u64,
            Some(v) => return Err(err(None, format!("run.seed must be a nonnegative integer, got {v}"))),
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let suite = r
            .text("suite", "configs")
            .map(|(_, v)| v.split(',').map(|s| base.join(s.trim())).collect())
            .unwrap_or_default();

        let coupling = if r.has("coupling") {
            let rows = r.rows("coupling", "beta")?.ok_or_else(|| err(None, "coupling.beta is required"))?;
            let dec = r.list("coupling", "decomposition")?.ok_or_else(|| err(None, "coupling.decomposition is required"))?;
            if dec.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                return Err(err(None, "MalformedDecomposition: coupling.decomposition entries must be nonnegative integers"));
            }
            let m = rows.len();
            if rows.iter().any(|row| row.len() != m) {
                return Err(err(None, "coupling.beta must be square"));
            }
            let beta = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
            Some(
                CouplingModel::new(beta, dec.iter().map(|v| *v as usize).collect())
                    .map_err(|e| err(None, format!("{}: {e}", e.kind())))?,
            )
        } else {
            None
        };

        let domain = if r.has("domain") {
            let kind = r.text("domain", "kind").map(|t| t.1).unwrap_or_else(|| "ball".into());
            let ball = || -> Result<(Point, f64), ConfigError> {
                let c = r.point("domain", "center")?.unwrap_or([0.0; 4]);
                let rad = r.num("domain", "radius")?.unwrap_or(1.0);
                check_positive(&[rad], "domain.radius")?;
                Ok((c, rad))
            };
            let cube = || -> Result<(Point, [f64; 4]), ConfigError> {
                let c = r.point("domain", "corner")?.unwrap_or([0.0; 4]);
                let w = r.point("domain", "widths")?.ok_or_else(|| err(None, "domain.widths is required for a box"))?;
                check_positive(&w, "domain.widths")?;
                Ok((c, w))
            };
            let spacing = || -> Result<f64, ConfigError> {
                let s = r.num("domain", "spacing")?.ok_or_else(|| err(None, "domain.spacing is required for a grid"))?;
                check_positive(&[s], "domain.spacing")?;
                Ok(s)
            };
            let spec = match kind.as_str() {
                "ball" => {
                    let (center, radius) = ball()?;
                    DomainSpec::Ball { center, radius }
                }
                "box" => {
                    let (corner, widths) = cube()?;
                    DomainSpec::Box { corner, widths }
                }
                "grid" => match r.text("domain", "base").map(|t| t.1).as_deref() {
                    Some("box") => {
                        let (corner, widths) = cube()?;
                        DomainSpec::GridBox { corner, widths, spacing: spacing()? }
                    }
                    Some("ball") | None => {
                        let (center, radius) = ball()?;
                        DomainSpec::GridBall { center, radius, spacing: spacing()? }
                    }
                    Some(o) => return Err(err(None, format!("domain.base `{o}` must be ball or box"))),
                },
                o => return Err(err(None, format!("domain.kind `{o}` must be ball, box or grid"))),
            };
            let eta = r.num("domain", "eta")?;
            if let Some(e) = eta {
                if !(e > 0.0 && e < 1.0) {
                    return Err(err(None, format!("domain.eta must lie in (0,1), got {e}")));
                }
            }
            let coarse = match r.text("domain", "quadrature").map(|t| t.1).as_deref() {
                None | Some("default") => false,
                Some("coarse") => true,
                Some(o) => return Err(err(None, format!("domain.quadrature `{o}` must be default or coarse"))),
            };
            Some(DomainConfig { spec, eta, coarse })
        } else {
            None
        };

        let xi = r.points("ansatz", "xi")?;
        if let (Some(x), Some(c)) = (&xi, &coupling) {
            if x.len() != c.q() {
                return Err(err(None, format!("ansatz.xi has {} centres for {} groups", x.len(), c.q())));
            }
        }
        let dyadic = |d0: f64, n: usize| (0..n).map(|k| d0 * 0.5f64.powi(k as i32)).collect::<Vec<_>>();
        let scaling_deltas = r.list("scaling", "deltas")?.unwrap_or_else(|| dyadic(1e-2, 4));
        let cross_deltas = r.list("scaling", "cross_deltas")?.unwrap_or_else(|| dyadic(1e-2, 4));
        let scaling_lambda = r.num("scaling", "lambda")?.unwrap_or(1e-2);
        let reduce_deltas = r.list("reduce", "deltas")?.unwrap_or_else(|| dyadic(1e-2, 4));
        let reduce_lambda = r.num("reduce", "lambda")?.unwrap_or(1e-3);
        let contraction_beta = r.num("reduce", "contraction_beta")?;
        let energy_lambda0 = r.num("energy", "lambda0")?.unwrap_or(0.02);
        let energy_samples = r.int("energy", "samples")?.unwrap_or(10);
        let energy_delta0 = r.num("energy", "delta0")?.unwrap_or(1e-2);
        let schedule = r.list("schedule", "lambda")?.unwrap_or_else(critical_ls::reduction::default_schedule);
        let coercivity_lambdas = r.list("coercivity", "lambdas")?.unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3]);
        let sweep = match r.list("coercivity", "sweep")? {
            None => None,
            Some(v) if v.len() == 3 && v[2] >= 2.0 && v[2].fract() == 0.0 && v[1] > v[0] => Some((v[0], v[1], v[2] as usize)),
            Some(_) => return Err(err(None, "coercivity.sweep must be `start, end, count` with end > start and count >= 2")),
        };
        let segregation = match r.text("trajectory", "segregation").map(|t| t.1).as_deref() {
            None | Some("false") => false,
            Some("true") => true,
            Some(o) => return Err(err(None, format!("trajectory.segregation `{o}` must be true or false"))),
        };
        check_lambda_range(&[scaling_lambda, reduce_lambda, energy_lambda0], "lambda")?;
        check_lambda_range(&schedule, "schedule.lambda")?;
        check_lambda_range(&coercivity_lambdas, "coercivity.lambdas")?;
        check_positive(&scaling_deltas, "scaling.deltas")?;
        check_positive(&cross_deltas, "scaling.cross_deltas")?;
        check_positive(&reduce_deltas, "reduce.deltas")?;
        check_positive(&[energy_delta0], "energy.delta0")?;
        let cfg = RunConfig {
            sections: sections.keys().cloned().collect(),
            name,
            path: path.to_path_buf(),
            seed,
            suite,
            coupling,
            domain,
            xi,
            kernel_resolution: r.int("kernel", "resolution")?.unwrap_or(200),
            robin_starts: r.int("robin", "starts")?.unwrap_or(8),
            robin_expected: r.point("robin", "expected")?,
            scaling_deltas,
            scaling_lambda,
            cross_deltas,
            reduce_deltas,
            reduce_lambda,
            contraction_beta,
            energy_lambda0,
            energy_samples,
            energy_delta0,
            schedule,
            trajectory_cross_beta: r.num("trajectory", "cross_beta")?,
            segregation,
            check_lambda: r.num("trajectory", "check_lambda")?.unwrap_or(1e-2),
            center_tol: r.num("trajectory", "center_tol")?.unwrap_or(1e-2),
            coercivity_lambdas,
            coercivity_cross_beta: r.num("coercivity", "cross_beta")?,
            sweep,
            sweep_threshold: r.num("coercivity", "threshold")?.unwrap_or(1e-3),
        };
        check_positive(&[cfg.center_tol, cfg.sweep_threshold], "tolerances")?;
        if cfg.kernel_resolution < 16 {
            return Err(err(None, "kernel.resolution must be at least 16"));
        }
        if cfg.energy_samples < 8 {
            return Err(err(None, "energy.samples must be at least 8"));
        }
        Ok(cfg)
    }
}
