//! Decentralized TVBP: per-node state machines exchanging messages over the
//! edges of a tree, run in synchronous rounds.
//!
//! Every edge `e = (v, w)` carries the constraint `x_v - x_w = Delta_e` with
//! multiplier `gamma_e`. A round is: x-update at every node, one message per
//! edge direction carrying the sender's fresh `x` and its replica of the edge
//! state, then both endpoints apply the identical shrinkage and dual step to
//! their replicas.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::graph::Graph;
use crate::optim::linalg::{least_norm_affine_with, pinv};
use crate::optim::prox::shrink_delta;
use crate::optim::root::{root_subproblem_report, BbConfig};
use crate::problem::{DesignSet, MeasurementSet};
use crate::reformulation::{expand_solution, stack_solution};
use crate::solvers::{NodeStatus, SolveResult};

/// Order of the node updates inside a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// All nodes update from the previous round's messages.
    Jacobi,
    /// Even-depth nodes first, then odd-depth nodes using their fresh values.
    #[default]
    RedBlack,
}

#[derive(Debug, Clone)]
pub struct DistributedConfig {
    pub rho: f64,
    pub root: BbConfig,
    pub schedule: Schedule,
    pub mode: ExecMode,
}

impl Default for DistributedConfig {
    fn default() -> Self {
        DistributedConfig {
            rho: 10.0,
            root: BbConfig::default(),
            schedule: Schedule::default(),
            mode: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeState {
    pub id: usize,
    /// `x_tail - x_head = delta`.
    pub tail: usize,
    pub head: usize,
    pub delta: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl EdgeState {
    fn sign_for(&self, node: usize) -> f64 {
        if node == self.tail {
            1.0
        } else {
            -1.0
        }
    }

    fn other(&self, node: usize) -> usize {
        if node == self.tail {
            self.head
        } else {
            self.tail
        }
    }
}

#[derive(Debug, Clone)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub edge: usize,
    pub x: DVector<f64>,
    pub delta: DVector<f64>,
    pub gamma: DVector<f64>,
}

pub const VECTORS_PER_MESSAGE: usize = 3;

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub x: DVector<f64>,
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Cached pseudo-inverse (non-root nodes).
    pub a_pinv: Option<DMatrix<f64>>,
    /// Warm-start multiplier (root).
    pub lambda: Option<DVector<f64>>,
    /// Replicas of the incident edges, by edge id.
    pub edges: BTreeMap<usize, EdgeState>,
    pub inbox: Vec<Message>,
    pub inner_iters: usize,
    pub inner_converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub graph: Graph,
    pub nodes: Vec<NodeState>,
    pub rho: f64,
    pub round: usize,
}

impl Network {
    /// Canonical edge view (the tail's replica), ordered by edge id.
    pub fn edges(&self) -> Vec<&EdgeState> {
        (1..=self.graph.num_edges())
            .map(|e| {
                let (v, _) = self.graph.edge(e);
                &self.nodes[v - 1].edges[&e]
            })
            .collect()
    }

    pub fn estimates(&self) -> Vec<DVector<f64>> {
        self.nodes.iter().map(|n| n.x.clone()).collect()
    }

    /// `max_e ||x_v - x_w - Delta_e||_2`.
    pub fn primal_residual(&self) -> f64 {
        self.edges()
            .iter()
            .map(|e| (&self.nodes[e.tail - 1].x - &self.nodes[e.head - 1].x - &e.delta).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    /// `sum_v ||x_v - x*_v||^2` against the reference, when one was given.
    pub sq_error: Option<f64>,
    pub primal_residual: f64,
    /// Vectors exchanged this round.
    pub messages: usize,
    pub root_inner_iters: usize,
    pub inner_iters: Vec<usize>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str =
    "round,sq_error_to_reference,primal_residual,messages,root_inner_iters";

impl RoundTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let err = r
                .sq_error
                .map_or_else(|| "nan".to_string(), |e| format!("{e:.6e}"));
            let _ = writeln!(
                s,
                "{},{},{:.6e},{},{}",
                r.round, err, r.primal_residual, r.messages, r.root_inner_iters
            );
        }
        s
    }

    pub fn sq_errors(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.sq_error.unwrap_or(f64::NAN))
            .collect()
    }
}

/// Zero-initialised network; non-root nodes cache their pseudo-inverse.
pub fn init_network(
    g: &Graph,
    designs: &DesignSet,
    meas: &MeasurementSet,
    rho: f64,
) -> Result<Network> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument("rho must be positive".into()));
    }
    let n = g.n();
    if designs.n() != n || meas.responses.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "graph has {n} nodes, {} designs, {} responses",
            designs.n(),
            meas.responses.len()
        )));
    }
    let d = designs.d;
    let pinvs = exec::map_range(ExecMode::default(), n, |v| {
        if v == 0 {
            Ok(None)
        } else {
            pinv(&designs.matrices[v]).map(Some)
        }
    });
    let mut nodes = Vec::with_capacity(n);
    for (v, pi) in pinvs.into_iter().enumerate() {
        let a = designs.matrices[v].clone();
        let y = meas.responses[v].clone();
        if a.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "node {}: {} rows, {} responses",
                v + 1,
                a.nrows(),
                y.len()
            )));
        }
        let id = v + 1;
        let mut edges = BTreeMap::new();
        let mut inbox = Vec::new();
        for &(w, e) in g.neighbors(id) {
            let (tail, head) = g.edge(e);
            let state = EdgeState {
                id: e,
                tail,
                head,
                delta: DVector::zeros(d),
                gamma: DVector::zeros(d),
            };
            inbox.push(Message {
                from: w,
                to: id,
                edge: e,
                x: DVector::zeros(d),
                delta: state.delta.clone(),
                gamma: state.gamma.clone(),
            });
            edges.insert(e, state);
        }
        nodes.push(NodeState {
            id,
            x: DVector::zeros(d),
            a,
            y,
            a_pinv: pi?,
            lambda: if id == 1 {
                Some(DVector::zeros(meas.responses[0].len()))
            } else {
                None
            },
            edges,
            inbox,
            inner_iters: 0,
            inner_converged: true,
            failure: None,
        });
    }
    Ok(Network {
        graph: g.clone(),
        nodes,
        rho,
        round: 0,
    })
}

struct XUpdate {
    x: DVector<f64>,
    lambda: Option<DVector<f64>>,
    iters: usize,
    converged: bool,
}

/// The message on `edge` in `inbox`, after checking where it came from.
fn incoming<'a>(node: &NodeState, edge: &EdgeState, inbox: &'a [Message]) -> Result<&'a Message> {
    let other = edge.other(node.id);
    inbox
        .iter()
        .find(|m| m.edge == edge.id)
        .filter(|m| m.from == other && m.to == node.id)
        .ok_or(Error::LocalityViolation {
            reader: node.id,
            owner: other,
        })
}

/// Node-local x-update from its own state and inbox only.
fn x_update(node: &NodeState, rho: f64, root_cfg: &BbConfig) -> Result<XUpdate> {
    let d = node.x.len();
    let deg = node.edges.len();
    let mut nu = DVector::zeros(d);
    for edge in node.edges.values() {
        let msg = incoming(node, edge, &node.inbox)?;
        let sigma = edge.sign_for(node.id);
        let c_e = &msg.x + &edge.delta * sigma;
        nu += &edge.gamma * sigma - c_e * rho;
    }
    if node.id == 1 {
        let (nu, c) = if deg == 0 {
            // proximal-point step when there is nothing to couple to
            (&node.x * (-rho), rho / 2.0)
        } else {
            (nu, rho * deg as f64 / 2.0)
        };
        let cfg = BbConfig {
            warm_start: node.lambda.clone(),
            ..root_cfg.clone()
        };
        let sol = root_subproblem_report(&node.a, &node.y, &nu, c, &cfg)?;
        Ok(XUpdate {
            x: sol.x,
            lambda: Some(sol.lambda),
            iters: sol.iterations,
            converged: sol.converged,
        })
    } else {
        let pinv = node
            .a_pinv
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("missing pseudo-inverse".into()))?;
        let lin = nu * (2.0 / (rho * deg as f64));
        let x = least_norm_affine_with(&node.a, pinv, &node.y, &lin)?;
        Ok(XUpdate {
            x,
            lambda: None,
            iters: 1,
            converged: true,
        })
    }
}

fn update_nodes(net: &mut Network, select: &[bool], root_cfg: &BbConfig, mode: ExecMode) {
    let rho = net.rho;
    exec::for_each_mut(mode, &mut net.nodes, |i, node| {
        if !select[i] {
            return;
        }
        match x_update(node, rho, root_cfg) {
            Ok(u) => {
                node.x = u.x;
                if u.lambda.is_some() {
                    node.lambda = u.lambda;
                }
                node.inner_iters = u.iters;
                node.inner_converged = u.converged;
                node.failure = None;
            }
            Err(e) => {
                node.inner_iters = 0;
                node.inner_converged = false;
                node.failure = Some(e.to_string());
            }
        }
    });
}

/// Send one message along every incident edge of the selected nodes.
/// Returns the number of vectors exchanged.
fn exchange(net: &mut Network, senders: &[bool]) -> Result<usize> {
    let mut outgoing = Vec::new();
    for node in &net.nodes {
        if !senders[node.id - 1] {
            continue;
        }
        for edge in node.edges.values() {
            outgoing.push(Message {
                from: node.id,
                to: edge.other(node.id),
                edge: edge.id,
                x: node.x.clone(),
                delta: edge.delta.clone(),
                gamma: edge.gamma.clone(),
            });
        }
    }
    let count = outgoing.len() * VECTORS_PER_MESSAGE;
    for msg in outgoing {
        deliver(net, msg)?;
    }
    Ok(count)
}

/// Put `msg` in its recipient's inbox, replacing the previous one on that edge.
pub fn deliver(net: &mut Network, msg: Message) -> Result<()> {
    let n = net.graph.n();
    if msg.to == 0 || msg.to > n || msg.from == 0 || msg.from > n {
        return Err(Error::LocalityViolation {
            reader: msg.to,
            owner: msg.from,
        });
    }
    let linked = net
        .graph
        .neighbors(msg.to)
        .iter()
        .any(|&(w, e)| w == msg.from && e == msg.edge);
    if !linked {
        return Err(Error::LocalityViolation {
            reader: msg.to,
            owner: msg.from,
        });
    }
    let inbox = &mut net.nodes[msg.to - 1].inbox;
    inbox.retain(|m| m.edge != msg.edge);
    inbox.push(msg);
    Ok(())
}

/// Shrinkage and dual ascent on every replica, from local `x` and the
/// neighbour's message.
fn update_edges(net: &mut Network, mode: ExecMode) -> Result<()> {
    let rho = net.rho;
    let slots: Vec<Mutex<Result<()>>> = (0..net.nodes.len()).map(|_| Mutex::new(Ok(()))).collect();
    exec::for_each_mut(mode, &mut net.nodes, |i, node| {
        *slots[i].lock().expect("slot lock") = edge_step(node, rho);
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock"))
        .collect()
}

fn edge_step(node: &mut NodeState, rho: f64) -> Result<()> {
    let id = node.id;
    let mut updated = Vec::with_capacity(node.edges.len());
    for edge in node.edges.values() {
        let msg = incoming(node, edge, &node.inbox)?;
        if msg.delta != edge.delta || msg.gamma != edge.gamma {
            return Err(Error::InvalidArgument(format!(
                "edge {} replicas diverged at node {id}",
                edge.id
            )));
        }
        let (x_tail, x_head) = if id == edge.tail {
            (&node.x, &msg.x)
        } else {
            (&msg.x, &node.x)
        };
        let delta = shrink_delta(&edge.gamma, rho, x_tail, x_head);
        let gamma = &edge.gamma + (x_tail - x_head - &delta) * rho;
        updated.push((edge.id, delta, gamma));
    }
    for (e, delta, gamma) in updated {
        let edge = node.edges.get_mut(&e).expect("incident edge");
        edge.delta = delta;
        edge.gamma = gamma;
    }
    Ok(())
}

/// One synchronous round. Returns the number of vectors exchanged.
pub fn admm_round(net: &mut Network, cfg: &DistributedConfig) -> Result<usize> {
    let n = net.graph.n();
    let mut messages = 0;
    match cfg.schedule {
        Schedule::Jacobi => {
            let all = vec![true; n];
            update_nodes(net, &all, &cfg.root, cfg.mode);
            messages += exchange(net, &all)?;
        }
        Schedule::RedBlack => {
            let even: Vec<bool> = (1..=n).map(|v| net.graph.depth(v) % 2 == 0).collect();
            let odd: Vec<bool> = even.iter().map(|b| !b).collect();
            update_nodes(net, &even, &cfg.root, cfg.mode);
            messages += exchange(net, &even)?;
            update_nodes(net, &odd, &cfg.root, cfg.mode);
            messages += exchange(net, &odd)?;
        }
    }
    update_edges(net, cfg.mode)?;
    net.round += 1;
    Ok(messages)
}

fn trace_row(net: &Network, reference: Option<&[DVector<f64>]>, messages: usize) -> TraceRow {
    let sq_error = reference.map(|r| {
        net.nodes
            .iter()
            .zip(r)
            .map(|(n, x)| (&n.x - x).norm_squared())
            .sum()
    });
    TraceRow {
        round: net.round,
        sq_error,
        primal_residual: net.primal_residual(),
        messages,
        root_inner_iters: net.nodes[0].inner_iters,
        inner_iters: net.nodes.iter().map(|n| n.inner_iters).collect(),
        failures: net
            .nodes
            .iter()
            .filter_map(|n| n.failure.as_ref().map(|f| format!("node {}: {f}", n.id)))
            .collect(),
    }
}

/// Run `rounds` rounds from zero. `reference` is a stacked centralized
/// solution; when given, the distance column of the trace is filled.
pub fn run_admm(
    g: &Graph,
    designs: &DesignSet,
    meas: &MeasurementSet,
    rounds: usize,
    cfg: &DistributedConfig,
    reference: Option<&DVector<f64>>,
) -> Result<(RoundTrace, SolveResult)> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be >= 1".into()));
    }
    let start = Instant::now();
    let reference = reference.map(|r| expand_solution(g, r)).transpose()?;
    let mut net = init_network(g, designs, meas, cfg.rho)?;
    let mut trace = RoundTrace::default();
    trace.rows.push(trace_row(&net, reference.as_deref(), 0));
    for _ in 0..rounds {
        let messages = admm_round(&mut net, cfg)?;
        trace
            .rows
            .push(trace_row(&net, reference.as_deref(), messages));
    }
    let estimates = net.estimates();
    let residuals = designs
        .matrices
        .iter()
        .zip(&meas.responses)
        .zip(&estimates)
        .map(|((a, y), x)| (a * x - y).norm())
        .collect();
    let stacked = stack_solution(g, &estimates);
    let status = net
        .nodes
        .iter()
        .map(|n| n.failure.clone().map_or(NodeStatus::Ok, NodeStatus::Failed))
        .collect();
    let result = SolveResult {
        method: "admm".into(),
        objective: stacked.lp_norm(1),
        stacked,
        recovered: vec![false; g.n()],
        estimates,
        residuals,
        iterations: rounds,
        status,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((trace, result))
}
