//! Max-flow / min-cut on small dense-ish graphs by shortest augmenting paths
//! (Dinic's blocking flows).

use std::collections::VecDeque;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
}

/// Directed graph with two implicit terminals.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    nodes: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    /// A graph of `nodes` ordinary nodes; the terminals are `nodes` (source)
    /// and `nodes + 1` (sink).
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes + 2],
        }
    }

    pub fn source(&self) -> usize {
        self.nodes
    }

    pub fn sink(&self) -> usize {
        self.nodes + 1
    }

    /// Adds `from -> to` with capacity `cap` (and a zero-capacity reverse edge).
    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        debug_assert!(cap >= 0.0);
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0.0 });
    }

    /// Terminal capacities of a node: `source -> v` and `v -> sink`.
    pub fn add_terminal(&mut self, v: usize, from_source: f64, to_sink: f64) {
        if from_source > 0.0 {
            self.add_edge(self.source(), v, from_source);
        }
        if to_sink > 0.0 {
            self.add_edge(v, self.sink(), to_sink);
        }
    }

    fn levels(&self) -> Vec<i32> {
        let mut level = vec![-1; self.nodes + 2];
        let mut queue = VecDeque::new();
        level[self.source()] = 0;
        queue.push_back(self.source());
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let edge = &self.edges[e];
                if edge.cap > EPS && level[edge.to] < 0 {
                    level[edge.to] = level[v] + 1;
                    queue.push_back(edge.to);
                }
            }
        }
        level
    }

    /// Iterative blocking-flow search from the source along level edges.
    fn augment(&mut self, level: &[i32], next: &mut [usize]) -> f64 {
        let (s, t) = (self.source(), self.sink());
        let mut total = 0.0;
        let mut path: Vec<usize> = Vec::new();
        let mut v = s;
        loop {
            if v == t {
                let bottleneck = path.iter().map(|&e| self.edges[e].cap).fold(f64::INFINITY, f64::min);
                for &e in &path {
                    self.edges[e].cap -= bottleneck;
                    self.edges[e ^ 1].cap += bottleneck;
                }
                total += bottleneck;
                path.clear();
                v = s;
                continue;
            }
            let mut advanced = false;
            while next[v] < self.adj[v].len() {
                let e = self.adj[v][next[v]];
                let edge = &self.edges[e];
                if edge.cap > EPS && level[edge.to] == level[v] + 1 {
                    path.push(e);
                    v = edge.to;
                    advanced = true;
                    break;
                }
                next[v] += 1;
            }
            if !advanced {
                if v == s {
                    return total;
                }
                // dead end: retreat and skip the edge that led here
                let e = path.pop().expect("non-source node has an incoming path edge");
                v = self.edges[e ^ 1].to;
                next[v] += 1;
            }
        }
    }

    /// Runs max-flow and returns its value. Afterwards [`Self::source_side`]
    /// reports the minimum cut.
    pub fn max_flow(&mut self) -> f64 {
        let mut flow = 0.0;
        loop {
            let level = self.levels();
            if level[self.sink()] < 0 {
                return flow;
            }
            let mut next = vec![0usize; self.nodes + 2];
            flow += self.augment(&level, &mut next);
        }
    }

    /// Nodes reachable from the source in the residual graph.
    pub fn source_side(&self) -> Vec<bool> {
        let level = self.levels();
        (0..self.nodes).map(|v| level[v] >= 0).collect()
    }
}
