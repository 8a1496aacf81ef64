//! Flat `key=value` configuration files with `#` comments and overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::graph::{make_balanced_tree, make_path, make_star, Graph};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn split_pair(text: &str) -> Option<(String, String)> {
    let (k, v) = text.split_once('=')?;
    let k = k.trim();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line).ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate key {k:?}") });
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair).ok_or_else(|| Error::Config(format!("bad override {pair:?}")))?;
        self.entries.insert(k, v);
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key}={v}: {e}"))))
            .transpose()
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// Comma-separated list; empty items are rejected.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                let item = item.trim();
                if item.is_empty() {
                    return Err(Error::Config(format!("{key}: empty list item")));
                }
                item.parse::<T>().map_err(|e| Error::Config(format!("{key}: {item}: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        let known: BTreeSet<&str> = known.iter().copied().collect();
        let unknown: Vec<&str> = self.keys().filter(|k| !known.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }

    /// One `# key=value` line per entry, sorted by key.
    pub fn comment_lines(&self) -> Vec<String> {
        self.entries.iter().map(|(k, v)| format!("# {k}={v}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    Path,
    Tree,
    Star,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Path => "path",
            Family::Tree => "tree",
            Family::Star => "star",
        }
    }

    /// `n` must be `2^h - 1` for balanced binary trees.
    pub fn build(self, n: usize) -> Result<Graph> {
        match self {
            Family::Path => make_path(n),
            Family::Star => make_star(n),
            Family::Tree => {
                if n == 0 || !(n + 1).is_power_of_two() {
                    return Err(Error::Config(format!("tree size {n} is not 2^h - 1")));
                }
                make_balanced_tree(2, (n + 1).trailing_zeros() as usize - 1)
            }
        }
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "path" => Ok(Family::Path),
            "tree" => Ok(Family::Tree),
            "star" => Ok(Family::Star),
            _ => Err(format!("unknown family {s:?} (path, tree, star)")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Tvbp,
    Tvbpd,
    IndependentBp,
    IndependentBpdn,
    StepwiseBp,
    GroupLasso,
    Admm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tvbp => "tvbp",
            Method::Tvbpd => "tvbpd",
            Method::IndependentBp => "independent_bp",
            Method::IndependentBpdn => "independent_bpdn",
            Method::StepwiseBp => "stepwise_bp",
            Method::GroupLasso => "group_lasso",
            Method::Admm => "admm",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "tvbp" => Method::Tvbp,
            "tvbpd" => Method::Tvbpd,
            "independent_bp" => Method::IndependentBp,
            "independent_bpdn" => Method::IndependentBpdn,
            "stepwise_bp" => Method::StepwiseBp,
            "group_lasso" => Method::GroupLasso,
            "admm" => Method::Admm,
            _ => return Err(format!("unknown method {s:?}")),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    PhaseTransition,
    Convergence,
    NoisyComparison,
    UnmixDemo,
    VerifySuite,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PhaseTransition => "phase_transition",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::NoisyComparison => "noisy_comparison",
            ExperimentKind::UnmixDemo => "unmix_demo",
            ExperimentKind::VerifySuite => "verify_suite",
        }
    }
}

pub fn parse_mode(s: &str) -> Result<ExecMode> {
    match s {
        "parallel" => Ok(ExecMode::Parallel),
        "sequential" => Ok(ExecMode::Sequential),
        _ => Err(Error::Config(format!("mode must be parallel or sequential, got {s:?}"))),
    }
}

/// Settings shared by the experiment runners. Which fields matter depends on
/// the kind; see the per-kind defaults in [`ExperimentConfig::from_config`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub families: Vec<Family>,
    pub path_sizes: Vec<usize>,
    pub tree_sizes: Vec<usize>,
    pub star_sizes: Vec<usize>,
    pub d: usize,
    pub s: usize,
    pub s_prime: usize,
    /// Root sample count; `None` means `root_sample_size(s, d)`.
    pub n1: Option<usize>,
    /// Non-root sample counts (phase transition sweep, or one value).
    pub sweep: Vec<usize>,
    pub noise_sd: f64,
    /// Explicit noise budget; `None` uses the generator's rule.
    pub eta: Option<f64>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub rounds: usize,
    pub rho: f64,
    pub admm_rho: f64,
    pub admm_max_iters: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    pub group_lasso_iters: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub bands: usize,
    pub mode: ExecMode,
    /// The resolved settings, for CSV headers.
    pub resolved: Config,
}

const COMMON_KEYS: &[&str] = &[
    "families",
    "path_sizes",
    "tree_sizes",
    "star_sizes",
    "d",
    "s",
    "s_prime",
    "n1",
    "sweep",
    "noise_sd",
    "eta",
    "methods",
    "replications",
    "seed",
    "output",
    "rounds",
    "rho",
    "admm_rho",
    "admm_max_iters",
    "lambda_min",
    "lambda_max",
    "lambda_count",
    "group_lasso_iters",
    "grid_rows",
    "grid_cols",
    "bands",
    "mode",
];

struct Defaults {
    families: &'static str,
    path_sizes: &'static str,
    tree_sizes: &'static str,
    d: usize,
    s: Option<usize>,
    s_prime: usize,
    n1: Option<usize>,
    sweep: &'static str,
    noise_sd: f64,
    methods: &'static str,
    replications: usize,
    rounds: usize,
    admm_rho: f64,
}

fn defaults(kind: ExperimentKind) -> Defaults {
    let base = Defaults {
        families: "path",
        path_sizes: "2,4,8",
        tree_sizes: "3,7",
        d: 128,
        s: Some(12),
        s_prime: 4,
        n1: Some(80),
        sweep: "8,16,24,32,40,48,56,64",
        noise_sd: 0.0,
        methods: "tvbp,independent_bp",
        replications: 20,
        rounds: 500,
        admm_rho: 10.0,
    };
    match kind {
        ExperimentKind::PhaseTransition => base,
        ExperimentKind::Convergence => Defaults {
            families: "tree,path",
            path_sizes: "7",
            tree_sizes: "7",
            d: 512,
            s: None,
            n1: None,
            sweep: "150",
            methods: "admm",
            replications: 1,
            ..base
        },
        ExperimentKind::NoisyComparison => Defaults {
            families: "path,tree",
            path_sizes: "2,4,8,16",
            tree_sizes: "3,7,15",
            d: 512,
            s: Some(25),
            n1: Some(200),
            sweep: "200",
            noise_sd: 0.1,
            methods: "tvbpd,group_lasso",
            replications: 5,
            admm_rho: 100.0,
            ..base
        },
        ExperimentKind::UnmixDemo => Defaults {
            d: 60,
            s: Some(3),
            s_prime: 1,
            n1: None,
            sweep: "20",
            noise_sd: 0.01,
            methods: "tvbpd,independent_bpdn",
            replications: 10,
            ..base
        },
        ExperimentKind::VerifySuite => Defaults { d: 10, s: Some(4), s_prime: 1, sweep: "6", replications: 20, ..base },
    }
}

impl ExperimentConfig {
    pub fn from_config(kind: ExperimentKind, cfg: &Config) -> Result<Self> {
        cfg.reject_unknown(COMMON_KEYS)?;
        let def = defaults(kind);
        let mut resolved = Config::default();
        let mut list_or = |key: &str, default: &str| -> Result<String> {
            let v = cfg.get(key).unwrap_or(default).to_string();
            resolved.insert(key, &v);
            Ok(v)
        };
        let families_s = list_or("families", def.families)?;
        let path_s = list_or("path_sizes", def.path_sizes)?;
        let tree_s = list_or("tree_sizes", def.tree_sizes)?;
        let star_s = list_or("star_sizes", "4")?;
        let sweep_s = list_or("sweep", def.sweep)?;
        let methods_s = list_or("methods", def.methods)?;
        let mut tmp = Config::default();
        for (k, v) in [
            ("families", &families_s),
            ("path_sizes", &path_s),
            ("tree_sizes", &tree_s),
            ("star_sizes", &star_s),
            ("sweep", &sweep_s),
            ("methods", &methods_s),
        ] {
            tmp.insert(k, v);
        }
        let d: usize = cfg.or("d", def.d)?;
        let s = match cfg.parsed::<usize>("s")? {
            Some(s) => s,
            None => def.s.unwrap_or(d / 10),
        };
        let n1 = match cfg.parsed::<usize>("n1")? {
            Some(n) => Some(n),
            None => def.n1,
        };
        let mode = parse_mode(cfg.get("mode").unwrap_or("parallel"))?;
        let out = ExperimentConfig {
            kind,
            families: tmp.list("families")?.unwrap_or_default(),
            path_sizes: tmp.list("path_sizes")?.unwrap_or_default(),
            tree_sizes: tmp.list("tree_sizes")?.unwrap_or_default(),
            star_sizes: tmp.list("star_sizes")?.unwrap_or_default(),
            d,
            s,
            s_prime: cfg.or("s_prime", def.s_prime)?,
            n1,
            sweep: tmp.list("sweep")?.unwrap_or_default(),
            noise_sd: cfg.or("noise_sd", def.noise_sd)?,
            eta: cfg.parsed("eta")?,
            methods: tmp.list("methods")?.unwrap_or_default(),
            replications: cfg.or("replications", def.replications)?,
            seed: cfg.or("seed", 2024u64)?,
            output: cfg.get("output").map(PathBuf::from),
            rounds: cfg.or("rounds", def.rounds)?,
            rho: cfg.or("rho", 10.0)?,
            admm_rho: cfg.or("admm_rho", def.admm_rho)?,
            admm_max_iters: cfg.or("admm_max_iters", 20_000usize)?,
            lambda_min: cfg.or("lambda_min", 1e-6)?,
            lambda_max: cfg.or("lambda_max", 1e-2)?,
            lambda_count: cfg.or("lambda_count", 9usize)?,
            group_lasso_iters: cfg.or("group_lasso_iters", 1000usize)?,
            grid_rows: cfg.or("grid_rows", 4usize)?,
            grid_cols: cfg.or("grid_cols", 4usize)?,
            bands: cfg.or("bands", 20usize)?,
            mode,
            resolved,
        };
        out.validate()?;
        Ok(out.with_resolved())
    }

    fn with_resolved(mut self) -> Self {
        let mut r = std::mem::take(&mut self.resolved);
        r.insert("experiment", self.kind.name());
        r.insert("d", self.d);
        r.insert("s", self.s);
        r.insert("s_prime", self.s_prime);
        r.insert("n1", self.n1.map_or("auto".to_string(), |n| n.to_string()));
        r.insert("noise_sd", self.noise_sd);
        r.insert("eta", self.eta.map_or("auto".to_string(), |e| e.to_string()));
        r.insert("replications", self.replications);
        r.insert("seed", self.seed);
        r.insert("rounds", self.rounds);
        r.insert("rho", self.rho);
        r.insert("admm_rho", self.admm_rho);
        r.insert("admm_max_iters", self.admm_max_iters);
        r.insert("lambda_grid", format!("{}..{}x{}", self.lambda_min, self.lambda_max, self.lambda_count));
        r.insert("group_lasso_iters", self.group_lasso_iters);
        if self.kind == ExperimentKind::UnmixDemo {
            r.insert("grid", format!("{}x{}", self.grid_rows, self.grid_cols));
            r.insert("bands", self.bands);
        }
        self.resolved = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty".into());
        }
        if self.families.is_empty() && !matches!(self.kind, ExperimentKind::UnmixDemo | ExperimentKind::VerifySuite) {
            return bad("families must be nonempty".into());
        }
        if self.sweep.is_empty() || self.sweep.contains(&0) {
            return bad("sweep values must be positive".into());
        }
        if self.d == 0 || self.s == 0 || self.s > self.d {
            return bad(format!("need 1 <= s <= d, got s={} d={}", self.s, self.d));
        }
        if self.n1 == Some(0) {
            return bad("n1 must be positive".into());
        }
        if !(self.noise_sd >= 0.0) || self.eta.is_some_and(|e| !(e >= 0.0)) {
            return bad("noise_sd and eta must be non-negative".into());
        }
        if !(self.rho > 0.0) || !(self.admm_rho > 0.0) || self.rounds == 0 || self.admm_max_iters == 0 {
            return bad("rho, admm_rho, rounds and admm_max_iters must be positive".into());
        }
        if !(self.lambda_min > 0.0 && self.lambda_max >= self.lambda_min) || self.lambda_count == 0 {
            return bad("lambda grid must satisfy 0 < lambda_min <= lambda_max, lambda_count >= 1".into());
        }
        if self.grid_rows == 0 || self.grid_cols == 0 || self.bands == 0 {
            return bad("grid_rows, grid_cols and bands must be positive".into());
        }
        for &f in &self.families {
            for &n in self.sizes(f) {
                f.build(n)?;
            }
        }
        Ok(())
    }

    pub fn sizes(&self, f: Family) -> &[usize] {
        match f {
            Family::Path => &self.path_sizes,
            Family::Tree => &self.tree_sizes,
            Family::Star => &self.star_sizes,
        }
    }

    /// `(family, n)` pairs in configuration order.
    pub fn topologies(&self) -> Vec<(Family, usize)> {
        self.families.iter().flat_map(|&f| self.sizes(f).iter().map(move |&n| (f, n))).collect()
    }

    pub fn root_samples(&self) -> usize {
        self.n1.unwrap_or_else(|| crate::problem::root_sample_size(self.s, self.d))
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        crate::solvers::log_grid(self.lambda_min, self.lambda_max, self.lambda_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_errors() {
        let c = Config::parse("# header\nd = 64\n\ns=4 # trailing\nmethods=tvbp, independent_bp\n").unwrap();
        assert_eq!(c.get("d"), Some("64"));
        assert_eq!(c.get("s"), Some("4"));
        assert_eq!(c.list::<Method>("methods").unwrap().unwrap(), vec![Method::Tvbp, Method::IndependentBp]);
        assert!(matches!(Config::parse("d 64"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("d=1\nd=2"), Err(Error::Parse { line: 2, .. })));
        assert!(Config::parse("a b=1").is_err());
    }

    #[test]
    fn overrides_replace_values() {
        let mut c = Config::parse("d=64").unwrap();
        c.set("d=32").unwrap();
        c.set("seed = 9").unwrap();
        assert_eq!(c.get("d"), Some("32"));
        assert_eq!(c.parsed::<u64>("seed").unwrap(), Some(9));
        assert!(c.set("novalue").is_err());
        assert!(c.parsed::<usize>("d").is_ok());
        c.set("d=x").unwrap();
        assert!(matches!(c.parsed::<usize>("d"), Err(Error::Config(_))));
    }

    #[test]
    fn defaults_per_kind() {
        let c = Config::default();
        let p = ExperimentConfig::from_config(ExperimentKind::PhaseTransition, &c).unwrap();
        assert_eq!((p.d, p.s, p.s_prime, p.root_samples(), p.replications), (128, 12, 4, 80, 20));
        assert_eq!(p.path_sizes, vec![2, 4, 8]);
        let v = ExperimentConfig::from_config(ExperimentKind::Convergence, &c).unwrap();
        assert_eq!((v.d, v.s, v.sweep[0], v.rho), (512, 51, 150, 10.0));
        assert_eq!(v.root_samples(), crate::problem::root_sample_size(51, 512));
        assert_eq!(v.topologies(), vec![(Family::Tree, 7), (Family::Path, 7)]);
        let n = ExperimentConfig::from_config(ExperimentKind::NoisyComparison, &c).unwrap();
        assert_eq!((n.s, n.sweep[0], n.replications, n.noise_sd), (25, 200, 5, 0.1));
        assert_eq!(n.lambda_grid().len(), 9);
    }

    #[test]
    fn invalid_configs_rejected() {
        let kind = ExperimentKind::PhaseTransition;
        for bad in ["replications=0", "methods=", "sweep=8,0", "families=tree", "bogus=1", "methods=magic", "mode=fast"] {
            let mut c = Config::default();
            if bad == "families=tree" {
                c.set("tree_sizes=6").unwrap();
            }
            c.set(bad).unwrap();
            let r = ExperimentConfig::from_config(kind, &c);
            assert!(matches!(r, Err(Error::Config(_))), "{bad}: {r:?}");
        }
    }

    #[test]
    fn resolved_lines_are_sorted_and_complete() {
        let mut c = Config::default();
        c.set("seed=5").unwrap();
        let p = ExperimentConfig::from_config(ExperimentKind::PhaseTransition, &c).unwrap();
        let lines = p.resolved.comment_lines();
        assert!(lines.contains(&"# seed=5".to_string()));
        assert!(lines.contains(&"# experiment=phase_transition".to_string()));
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
    }

    #[test]
    fn family_builders() {
        assert_eq!(Family::Tree.build(7).unwrap().n(), 7);
        assert!(Family::Tree.build(6).is_err());
        assert_eq!(Family::Path.build(3).unwrap().n(), 3);
        assert_eq!("star".parse::<Family>().unwrap(), Family::Star);
    }
}
