//! Scalar reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends a node holding its value
//! and the local partial derivatives with respect to its parents. A reverse
//! sweep from the output visits each node once, in reverse recording order,
//! and accumulates adjoints.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{NpsError, Result};

#[derive(Clone, Copy, Debug)]
struct Node {
    start: u32,
    len: u32,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    edges: RefCell<Vec<(u32, f64)>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(nodes)),
            edges: RefCell::new(Vec::with_capacity(2 * nodes)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: f64, parents: &[(u32, f64)]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let mut edges = self.edges.borrow_mut();
        let start = edges.len() as u32;
        edges.extend_from_slice(parents);
        nodes.push(Node {
            start,
            len: parents.len() as u32,
        });
        Var {
            tape: self,
            index: (nodes.len() - 1) as u32,
            value,
        }
    }

    /// A leaf (independent variable).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, &[])
    }

    pub fn vars<const N: usize>(&self, values: [f64; N]) -> [Var<'_>; N] {
        values.map(|v| self.var(v))
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    /// n-ary sum recorded as a single node.
    pub fn sum(&self, terms: &[Var<'_>]) -> Var<'_> {
        let value = terms.iter().map(|v| v.value).sum();
        let parents: Vec<(u32, f64)> = terms.iter().map(|v| (v.index, 1.0)).collect();
        self.push(value, &parents)
    }

    /// Euclidean norm, with the zero subgradient at the origin.
    pub fn norm(&self, terms: &[Var<'_>]) -> Var<'_> {
        let value = terms.iter().map(|v| v.value * v.value).sum::<f64>().sqrt();
        let parents: Vec<(u32, f64)> = terms
            .iter()
            .map(|v| (v.index, if value > 0.0 { v.value / value } else { 0.0 }))
            .collect();
        self.push(value, &parents)
    }

    pub fn dot(&self, a: &[Var<'_>], b: &[Var<'_>]) -> Var<'_> {
        let value = a.iter().zip(b).map(|(x, y)| x.value * y.value).sum();
        let mut parents = Vec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            parents.push((x.index, y.value));
            parents.push((y.index, x.value));
        }
        self.push(value, &parents)
    }

    /// Reverse sweep from `output`. Fails if a non-finite adjoint appears.
    pub fn gradient(&self, output: Var<'_>) -> Result<Adjoints> {
        let nodes = self.nodes.borrow();
        let edges = self.edges.borrow();
        let mut adj = vec![0.0f64; nodes.len()];
        adj[output.index as usize] = 1.0;
        let mut swept = 0usize;
        for i in (0..=output.index as usize).rev() {
            swept += 1;
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            if !a.is_finite() {
                return Err(NpsError::NonFinite(format!("adjoint of tape node {i}")));
            }
            let node = nodes[i];
            for &(p, d) in &edges[node.start as usize..(node.start + node.len) as usize] {
                adj[p as usize] += a * d;
            }
        }
        Ok(Adjoints { values: adj, swept })
    }
}

pub struct Adjoints {
    values: Vec<f64>,
    swept: usize,
}

impl Adjoints {
    pub fn get(&self, v: Var<'_>) -> f64 {
        self.values[v.index as usize]
    }

    /// Number of nodes visited by the sweep.
    pub fn swept(&self) -> usize {
        self.swept
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        self.tape.push(s, &[(self.index, 0.5 / s)])
    }

    pub fn abs(self) -> Var<'t> {
        let d = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.tape.push(self.value.abs(), &[(self.index, d)])
    }

    pub fn square(self) -> Var<'t> {
        self.tape
            .push(self.value * self.value, &[(self.index, 2.0 * self.value)])
    }

    pub fn max0(self) -> Var<'t> {
        if self.value > 0.0 {
            self
        } else {
            self.tape.push(0.0, &[])
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.tape
            .push(self.value + o.value, &[(self.index, 1.0), (o.index, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.tape
            .push(self.value - o.value, &[(self.index, 1.0), (o.index, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.tape.push(
            self.value * o.value,
            &[(self.index, o.value), (o.index, self.value)],
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let q = self.value / o.value;
        self.tape
            .push(q, &[(self.index, 1.0 / o.value), (o.index, -q / o.value)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(-self.value, &[(self.index, -1.0)])
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.tape.push(self.value + c, &[(self.index, 1.0)])
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.tape.push(self.value - c, &[(self.index, 1.0)])
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.tape.push(self.value * c, &[(self.index, c)])
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.tape.push(self.value / c, &[(self.index, 1.0 / c)])
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.tape.push(self - v.value, &[(v.index, -1.0)])
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

/// Cross product of two 3-vectors on the tape.
pub fn cross<'t>(a: [Var<'t>; 3], b: [Var<'t>; 3]) -> [Var<'t>; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn sub3<'t>(a: [Var<'t>; 3], b: [Var<'t>; 3]) -> [Var<'t>; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Unit vector `v / |v|`.
pub fn normalize<'t>(v: [Var<'t>; 3]) -> [Var<'t>; 3] {
    let n = v[0].tape().norm(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}
