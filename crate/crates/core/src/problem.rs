//! Synthetic (G, s, s')-sparse signal ensembles, Gaussian designs and
//! (optionally noisy) measurements. Every generator is a pure function of its
//! inputs and a seed.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::graph::{all_root_paths, Graph};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalScheme {
    /// Root and edge differences take values in {+1, -1} on mutually
    /// disjoint supports.
    DisjointPm1,
    /// Root values in {+1, -1}; each edge difference has `s_prime` standard
    /// normal entries at independently drawn locations.
    GaussianDiffs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalEnsemble {
    pub graph: Graph,
    pub d: usize,
    pub s: usize,
    pub s_prime: usize,
    pub root_signal: DVector<f64>,
    /// `diffs[e - 1]` is the difference across edge `e`, child minus parent.
    pub diffs: Vec<DVector<f64>>,
    /// Sorted 0-based coordinates.
    pub root_support: Vec<usize>,
    pub edge_supports: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SignalEnsemble {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// `x_v = x_1 + sum of diffs on the root path of v`, for every node.
    pub fn node_signals(&self) -> Vec<DVector<f64>> {
        all_root_paths(&self.graph)
            .into_iter()
            .map(|p| {
                let mut x = self.root_signal.clone();
                for e in p.edges {
                    x += &self.diffs[e - 1];
                }
                x
            })
            .collect()
    }

    /// Stack `(x_1, diff_1, ..., diff_{n-1})` into one vector of length `n * d`.
    pub fn stacked(&self) -> DVector<f64> {
        let d = self.d;
        let mut z = DVector::zeros(self.n() * d);
        z.rows_mut(0, d).copy_from(&self.root_signal);
        for (i, delta) in self.diffs.iter().enumerate() {
            z.rows_mut((i + 1) * d, d).copy_from(delta);
        }
        z
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "signal_ensemble",
            "d": self.d, "s": self.s, "s_prime": self.s_prime,
            "seed": self.seed,
            "graph": self.graph.to_edge_list(),
            "root_support": self.root_support,
            "edge_supports": self.edge_supports,
        }));
        c.push_vector("root_signal", &self.root_signal);
        for (i, delta) in self.diffs.iter().enumerate() {
            c.push_vector(format!("diff_{}", i + 1), delta);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = &c.meta;
        let field = |k: &str| {
            meta.get(k).cloned().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing `{k}`"),
            })
        };
        let de = |k: &str| -> Result<serde_json::Value> { field(k) };
        let as_usize = |k: &str| -> Result<usize> {
            de(k)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    msg: format!("`{k}` is not an integer"),
                })
        };
        let graph = Graph::from_edge_list(de("graph")?.as_str().unwrap_or(""))?;
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: 0,
            msg: e.to_string(),
        };
        let root_support: Vec<usize> =
            serde_json::from_value(de("root_support")?).map_err(parse_err)?;
        let edge_supports: Vec<Vec<usize>> =
            serde_json::from_value(de("edge_supports")?).map_err(parse_err)?;
        let diffs = (1..graph.n())
            .map(|e| c.vector(&format!("diff_{e}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(SignalEnsemble {
            d: as_usize("d")?,
            s: as_usize("s")?,
            s_prime: as_usize("s_prime")?,
            seed: de("seed")?.as_u64().unwrap_or(0),
            root_signal: c.vector("root_signal")?,
            graph,
            diffs,
            root_support,
            edge_supports,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignSharing {
    /// Independent draws at every node.
    Independent,
    /// One matrix shared by all non-root nodes; the root has its own.
    SharedNonRoot,
    /// One matrix shared by every node (requires equal row counts).
    SharedAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    /// `matrices[v - 1]` has shape `N_v x d`.
    pub matrices: Vec<DMatrix<f64>>,
    pub sample_counts: Vec<usize>,
    pub d: usize,
    /// All non-root matrices are bitwise identical.
    pub shared_nonroot: bool,
    /// Entries were divided by `sqrt(N_v)`.
    pub scaled: bool,
}

impl DesignSet {
    pub fn n(&self) -> usize {
        self.matrices.len()
    }

    /// Wrap caller-provided matrices, checking shapes and detecting sharing.
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>, scaled: bool) -> Result<Self> {
        let d = matrices
            .first()
            .map(|m| m.ncols())
            .ok_or_else(|| Error::InvalidSize("design set needs at least one node".into()))?;
        if let Some(m) = matrices.iter().find(|m| m.ncols() != d) {
            return Err(Error::ShapeMismatch(format!(
                "design with {} columns, expected {d}",
                m.ncols()
            )));
        }
        let shared_nonroot = matrices
            .iter()
            .skip(2)
            .all(|m| m == &matrices[1.min(matrices.len() - 1)]);
        Ok(DesignSet {
            sample_counts: matrices.iter().map(|m| m.nrows()).collect(),
            matrices,
            d,
            shared_nonroot,
            scaled,
        })
    }

    /// Designs shared by every node, i.e. whether all blocks are bitwise equal.
    pub fn all_identical(&self) -> bool {
        self.matrices.iter().all(|m| m == &self.matrices[0])
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "design_set",
            "d": self.d,
            "sample_counts": self.sample_counts,
            "shared_nonroot": self.shared_nonroot,
            "scaled": self.scaled,
        }));
        for (i, m) in self.matrices.iter().enumerate() {
            c.push_matrix(format!("A_{}", i + 1), m);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let n = c.arrays.len();
        let matrices = (1..=n)
            .map(|v| c.matrix(&format!("A_{v}")))
            .collect::<Result<Vec<_>>>()?;
        let scaled = c
            .meta
            .get("scaled")
            .and_then(|v| v.as_bool())
            .unwrap_or(true);
        DesignSet::from_matrices(matrices, scaled)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// `responses[v - 1] = A_v x_v + noise[v - 1]`.
    pub responses: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
    /// Noise budget; zero in noiseless mode.
    pub eta: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl MeasurementSet {
    pub fn noise_energy(&self) -> f64 {
        self.noise.iter().map(|e| e.norm_squared()).sum()
    }

    pub fn total_samples(&self) -> usize {
        self.responses.iter().map(|y| y.len()).sum()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({
            "kind": "measurement_set",
            "eta": self.eta,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
        }));
        for (i, (y, e)) in self.responses.iter().zip(&self.noise).enumerate() {
            c.push_vector(format!("y_{}", i + 1), y);
            c.push_vector(format!("noise_{}", i + 1), e);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let n = c.arrays.len() / 2;
        let responses = (1..=n)
            .map(|v| c.vector(&format!("y_{v}")))
            .collect::<Result<_>>()?;
        let noise = (1..=n)
            .map(|v| c.vector(&format!("noise_{v}")))
            .collect::<Result<_>>()?;
        let num = |k: &str| c.meta.get(k).and_then(|v| v.as_f64()).unwrap_or(0.0);
        Ok(MeasurementSet {
            responses,
            noise,
            eta: num("eta"),
            noise_sd: num("noise_sd"),
            seed: c.meta.get("seed").and_then(|v| v.as_u64()).unwrap_or(0),
        })
    }
}

/// `rows x d` standard normal entries scaled by `1 / sqrt(rows)`.
pub fn gen_design(rows: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed);
    let scale = if rows > 0 {
        1.0 / (rows as f64).sqrt()
    } else {
        1.0
    };
    // Fill row by row so a prefix of rows does not depend on `rows`' layout.
    let mut m = DMatrix::zeros(rows, d);
    for i in 0..rows {
        for j in 0..d {
            let z: f64 = r.sample(StandardNormal);
            m[(i, j)] = z * scale;
        }
    }
    m
}

/// Per-node designs with the requested sharing pattern.
pub fn gen_designs(
    sample_counts: &[usize],
    d: usize,
    sharing: DesignSharing,
    seed: u64,
) -> Result<DesignSet> {
    let n = sample_counts.len();
    if n == 0 || d == 0 {
        return Err(Error::InvalidSize(
            "need at least one node and d >= 1".into(),
        ));
    }
    let nonroot_equal = sample_counts
        .iter()
        .skip(1)
        .all(|&c| c == sample_counts[n.min(2) - 1]);
    let matrices = match sharing {
        DesignSharing::Independent => (0..n)
            .map(|v| gen_design(sample_counts[v], d, rng::derive(seed, v as u64 + 1)))
            .collect(),
        DesignSharing::SharedNonRoot => {
            if !nonroot_equal {
                return Err(Error::ShapeMismatch(
                    "shared non-root designs need equal non-root sample counts".into(),
                ));
            }
            let root = gen_design(sample_counts[0], d, rng::derive(seed, 1));
            let mut ms = vec![root];
            if n > 1 {
                let shared = gen_design(sample_counts[1], d, rng::derive(seed, 2));
                ms.extend(std::iter::repeat_n(shared, n - 1));
            }
            ms
        }
        DesignSharing::SharedAll => {
            if sample_counts.iter().any(|&c| c != sample_counts[0]) {
                return Err(Error::ShapeMismatch(
                    "fully shared designs need equal sample counts".into(),
                ));
            }
            vec![gen_design(sample_counts[0], d, rng::derive(seed, 1)); n]
        }
    };
    let mut set = DesignSet::from_matrices(matrices, true)?;
    set.shared_nonroot |= !matches!(sharing, DesignSharing::Independent);
    Ok(set)
}

fn random_signs<R: Rng>(r: &mut R, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| if r.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

pub fn gen_signals(
    g: &Graph,
    d: usize,
    s: usize,
    s_prime: usize,
    scheme: SignalScheme,
    seed: u64,
) -> Result<SignalEnsemble> {
    if d == 0 {
        return Err(Error::InvalidSize("d must be >= 1".into()));
    }
    let n_edges = g.num_edges();
    let mut r = rng::stream(rng::derive_str(seed, "signals"));
    let mut coords: Vec<usize> = (0..d).collect();
    let mut root_signal = DVector::zeros(d);
    let mut diffs = vec![DVector::zeros(d); n_edges];
    let mut edge_supports = vec![Vec::new(); n_edges];
    let root_support;
    match scheme {
        SignalScheme::DisjointPm1 => {
            let needed = s + n_edges * s_prime;
            if needed > d {
                return Err(Error::DimensionExhausted { needed, d });
            }
            coords.shuffle(&mut r);
            let mut rs = coords[..s].to_vec();
            rs.sort_unstable();
            for (&i, v) in rs.iter().zip(random_signs(&mut r, s)) {
                root_signal[i] = v;
            }
            root_support = rs;
            for e in 0..n_edges {
                let start = s + e * s_prime;
                let mut es = coords[start..start + s_prime].to_vec();
                es.sort_unstable();
                for (&i, v) in es.iter().zip(random_signs(&mut r, s_prime)) {
                    diffs[e][i] = v;
                }
                edge_supports[e] = es;
            }
        }
        SignalScheme::GaussianDiffs => {
            if s > d || s_prime > d {
                return Err(Error::DimensionExhausted {
                    needed: s.max(s_prime),
                    d,
                });
            }
            coords.shuffle(&mut r);
            let mut rs = coords[..s].to_vec();
            rs.sort_unstable();
            for (&i, v) in rs.iter().zip(random_signs(&mut r, s)) {
                root_signal[i] = v;
            }
            root_support = rs;
            for e in 0..n_edges {
                coords.shuffle(&mut r);
                let mut es = coords[..s_prime].to_vec();
                es.sort_unstable();
                for &i in &es {
                    let z: f64 = r.sample(StandardNormal);
                    diffs[e][i] = z;
                }
                edge_supports[e] = es;
            }
        }
    }
    Ok(SignalEnsemble {
        graph: g.clone(),
        d,
        s,
        s_prime,
        root_signal,
        diffs,
        root_support,
        edge_supports,
        seed,
    })
}

/// `y_v = A_v x_v + eps_v` with `eps_v ~ N(0, noise_sd^2)`. The noise budget is
/// set to `sqrt(sum_v N_v) * noise_sd`.
pub fn measure(
    designs: &DesignSet,
    ens: &SignalEnsemble,
    noise_sd: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if designs.n() != ens.n() {
        return Err(Error::ShapeMismatch(format!(
            "{} designs for {} nodes",
            designs.n(),
            ens.n()
        )));
    }
    if designs.d != ens.d {
        return Err(Error::ShapeMismatch(format!(
            "designs have d = {}, signals d = {}",
            designs.d, ens.d
        )));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument("noise_sd must be >= 0".into()));
    }
    let signals = ens.node_signals();
    let mut responses = Vec::with_capacity(ens.n());
    let mut noise = Vec::with_capacity(ens.n());
    for (v, (a, x)) in designs.matrices.iter().zip(&signals).enumerate() {
        let mut r = rng::stream(rng::derive(rng::derive_str(seed, "noise"), v as u64 + 1));
        let eps = if noise_sd > 0.0 {
            DVector::from_fn(a.nrows(), |_, _| {
                let z: f64 = r.sample(StandardNormal);
                z * noise_sd
            })
        } else {
            DVector::zeros(a.nrows())
        };
        responses.push(a * x + &eps);
        noise.push(eps);
    }
    let total: usize = designs.sample_counts.iter().sum();
    Ok(MeasurementSet {
        responses,
        noise,
        eta: (total as f64).sqrt() * noise_sd,
        noise_sd,
        seed,
    })
}

/// `floor(2 s ln(e d / s))`.
pub fn root_sample_size(s: usize, d: usize) -> usize {
    assert!(s >= 1 && s <= d, "root_sample_size needs 1 <= s <= d");
    let (s, d) = (s as f64, d as f64);
    (2.0 * s * (1.0 + (d / s).ln())).floor() as usize
}
