//! One instance, one method: regenerates a cell from its seed and solves it.

use std::path::PathBuf;

use crate::distributed::{run_admm, DistributedConfig};
use crate::error::{Error, Result};
use crate::optim::{AdmmConfig, BpBackend};
use crate::problem::{DesignSharing, SignalScheme};
use crate::solvers::{
    group_lasso, independent_bp, independent_bpdn, stepwise_bp, tvbp_with, tvbpd, SolveResult, SummaryInfo,
    SUMMARY_HEADER,
};

use super::config::{parse_mode, Config, Family, Method};
use super::{build_instance, Instance, InstanceSpec};

const KEYS: &[&str] = &[
    "method", "family", "n", "d", "s", "s_prime", "n1", "n_v", "noise_sd", "eta", "seed", "scheme", "sharing",
    "backend", "rho", "max_iters", "lambda", "iters", "rounds", "mode", "output",
];

#[derive(Debug, Clone)]
pub struct SolveRequest {
    pub method: Method,
    pub spec: InstanceSpec,
    pub seed: u64,
    pub eta: Option<f64>,
    pub backend: BpBackend,
    pub admm: AdmmConfig,
    pub lambda: f64,
    pub iters: usize,
    pub rounds: usize,
    pub dist: DistributedConfig,
    /// Container file for the full result.
    pub output: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<SignalScheme> {
    match s {
        "disjoint" => Ok(SignalScheme::DisjointPm1),
        "gaussian" => Ok(SignalScheme::GaussianDiffs),
        _ => Err(Error::Config(format!("scheme must be disjoint or gaussian, got {s:?}"))),
    }
}

fn parse_sharing(s: &str) -> Result<DesignSharing> {
    match s {
        "independent" => Ok(DesignSharing::Independent),
        "shared_nonroot" => Ok(DesignSharing::SharedNonRoot),
        "shared_all" => Ok(DesignSharing::SharedAll),
        _ => Err(Error::Config(format!("sharing must be independent, shared_nonroot or shared_all, got {s:?}"))),
    }
}

fn parse_backend(s: &str) -> Result<BpBackend> {
    match s {
        "lp" => Ok(BpBackend::Lp),
        "admm" => Ok(BpBackend::Admm),
        "auto" => Ok(BpBackend::Auto),
        _ => Err(Error::Config(format!("backend must be lp, admm or auto, got {s:?}"))),
    }
}

impl SolveRequest {
    pub fn from_config(c: &Config) -> Result<Self> {
        c.reject_unknown(KEYS)?;
        let method: Method = c.parsed("method")?.ok_or_else(|| Error::Config("solve needs method=...".into()))?;
        let d: usize = c.or("d", 128)?;
        let s: usize = c.or("s", 12)?;
        if d == 0 || s == 0 || s > d {
            return Err(Error::Config(format!("need 1 <= s <= d, got s={s} d={d}")));
        }
        let noise_sd: f64 = c.or("noise_sd", 0.0)?;
        if !(noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        let spec = InstanceSpec {
            family: c.or("family", Family::Path)?,
            n: c.or("n", 4)?,
            d,
            s,
            s_prime: c.or("s_prime", 4)?,
            n1: c.or("n1", crate::problem::root_sample_size(s, d))?,
            n_v: c.or("n_v", 48)?,
            noise_sd,
            scheme: parse_scheme(c.get("scheme").unwrap_or("disjoint"))?,
            sharing: parse_sharing(c.get("sharing").unwrap_or("independent"))?,
        };
        spec.family.build(spec.n)?;
        let rho: f64 = c.or("rho", 10.0)?;
        let mode = parse_mode(c.get("mode").unwrap_or("parallel"))?;
        Ok(SolveRequest {
            method,
            spec,
            seed: c.or("seed", 2024)?,
            eta: c.parsed("eta")?,
            backend: parse_backend(c.get("backend").unwrap_or("auto"))?,
            admm: AdmmConfig { rho, max_iters: c.or("max_iters", 20_000)?, ..AdmmConfig::default() },
            lambda: c.or("lambda", 1e-3)?,
            iters: c.or("iters", 1000)?,
            rounds: c.or("rounds", 500)?,
            dist: DistributedConfig { rho, mode, ..DistributedConfig::default() },
            output: c.get("output").map(PathBuf::from),
        })
    }

    pub fn instance(&self) -> Result<Instance> {
        build_instance(&self.spec, self.seed)
    }

    pub fn info(&self) -> SummaryInfo {
        SummaryInfo {
            n: self.spec.n,
            d: self.spec.d,
            s: self.spec.s,
            s_prime: self.spec.s_prime,
            n_v: self.spec.n_v,
            seed: self.seed,
        }
    }
}

pub fn solve_instance(req: &SolveRequest, inst: &Instance) -> Result<SolveResult> {
    let (g, ds, m) = (&inst.graph, &inst.designs, &inst.meas);
    let eta = req.eta.unwrap_or(m.eta);
    let mut res = match req.method {
        Method::Tvbp => tvbp_with(g, ds, m, req.backend, &req.admm)?,
        Method::Tvbpd => tvbpd(g, ds, m, eta, &req.admm)?,
        Method::IndependentBp => independent_bp(ds, m, req.backend)?,
        Method::IndependentBpdn => independent_bpdn(ds, m, eta / (g.n() as f64).sqrt(), &req.admm)?,
        Method::StepwiseBp => stepwise_bp(g, ds, m, req.backend)?,
        Method::GroupLasso => group_lasso(ds, m, req.lambda, req.iters)?,
        Method::Admm => run_admm(g, ds, m, req.rounds, &req.dist, None)?.1,
    };
    res.score(&inst.truth());
    Ok(res)
}

/// Summary header and row for one solve.
pub fn run_solve(req: &SolveRequest) -> Result<(SolveResult, String)> {
    let inst = req.instance()?;
    let res = solve_instance(req, &inst)?;
    if let Some(p) = &req.output {
        res.to_container().save(p)?;
    }
    let text = format!("{SUMMARY_HEADER}\n{}\n", res.summary_row(&req.info(), &inst.truth()));
    Ok((res, text))
}
