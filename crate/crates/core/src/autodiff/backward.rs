//! The reverse sweep.

use std::collections::{HashMap, HashSet};
use std::ops::Index;
use std::rc::Rc;

use crate::autodiff::node::{no_grad, Op};
use crate::autodiff::{Node, NodeId, Real};
use crate::error::{Error, Result};

/// Gradients keyed by the node they were taken with respect to, in the
/// order the nodes were requested.
#[derive(Debug, Clone)]
pub struct GradMap<F: Real> {
    entries: Vec<(NodeId, Node<F>)>,
}

impl<F: Real> GradMap<F> {
    pub fn get(&self, wrt: &Node<F>) -> Option<&Node<F>> {
        self.entries.iter().find(|(id, _)| *id == wrt.id()).map(|(_, g)| g)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Node<F>> {
        self.entries.iter().map(|(_, g)| g)
    }

    pub fn into_vec(self) -> Vec<Node<F>> {
        self.entries.into_iter().map(|(_, g)| g).collect()
    }
}

impl<F: Real> Index<usize> for GradMap<F> {
    type Output = Node<F>;

    fn index(&self, i: usize) -> &Node<F> {
        &self.entries[i].1
    }
}

/// Gradients of the scalar `loss` with respect to each node in `wrt`.
///
/// With `create_graph` the returned gradients carry lineage and can be
/// differentiated again. Without it they are constants and the lineage of
/// every intermediate visited is released afterwards, so the graph cannot
/// be walked a second time. Nodes `loss` does not depend on get exact
/// zeros.
pub fn backward<F: Real>(loss: &Node<F>, wrt: &[Node<F>], create_graph: bool) -> Result<GradMap<F>> {
    run(loss, wrt, create_graph, !create_graph)
}

/// Like [`backward`] but always keeps the graph alive.
pub fn backward_retained<F: Real>(loss: &Node<F>, wrt: &[Node<F>], create_graph: bool) -> Result<GradMap<F>> {
    run(loss, wrt, create_graph, false)
}

/// Nodes with lineage reachable from `root`, each before all of its parents.
fn reverse_topological<F: Real>(root: &Node<F>) -> Vec<Node<F>> {
    let mut post = Vec::new();
    let mut seen = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            post.push(node);
            continue;
        }
        if !seen.insert(node.id()) {
            continue;
        }
        let parents: Vec<Node<F>> = match &*node.op() {
            Some(op) => op
                .parents()
                .into_iter()
                .filter(|p| p.has_lineage() && !seen.contains(&p.id()))
                .cloned()
                .collect(),
            None => Vec::new(),
        };
        stack.push((node, true));
        stack.extend(parents.into_iter().map(|p| (p, false)));
    }
    post.reverse();
    post
}

fn run<F: Real>(loss: &Node<F>, wrt: &[Node<F>], create_graph: bool, release: bool) -> Result<GradMap<F>> {
    if loss.numel() != 1 {
        return Err(Error::structural(format!("backward needs a scalar loss, got shape {:?}", loss.shape())));
    }
    let order = if loss.has_lineage() { reverse_topological(loss) } else { Vec::new() };
    let wanted: HashSet<NodeId> = wrt.iter().map(Node::id).collect();
    let mut captured: HashMap<NodeId, Node<F>> = HashMap::new();
    let mut grads: HashMap<NodeId, Node<F>> = HashMap::new();
    grads.insert(loss.id(), Node::filled(loss.shape(), F::one()));

    {
        let _guard = (!create_graph).then(no_grad);
        for node in &order {
            let Some(g) = grads.remove(&node.id()) else { continue };
            if wanted.contains(&node.id()) {
                captured.insert(node.id(), g.clone());
            }
            let op = node.op();
            let Some(op) = op.as_ref() else { continue };
            let parents = op.parents();
            let needs: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
            let pgrads = vjp(op, node, &g, &needs, create_graph)?;
            for ((p, pg), need) in parents.iter().zip(pgrads).zip(needs) {
                let (Some(pg), true) = (pg, need) else { continue };
                debug_assert_eq!(pg.shape(), p.shape(), "vjp of {} has the wrong shape", op.name());
                let acc = match grads.remove(&p.id()) {
                    Some(prev) => prev.add(&pg)?,
                    None => pg,
                };
                grads.insert(p.id(), acc);
            }
        }
    }

    let entries = wrt
        .iter()
        .map(|w| {
            let g = captured
                .remove(&w.id())
                .or_else(|| grads.get(&w.id()).cloned())
                .unwrap_or_else(|| Node::zeros(w.shape()));
            (w.id(), g)
        })
        .collect();

    if release {
        for node in &order {
            node.release();
        }
    }
    Ok(GradMap { entries })
}

/// Vector-Jacobian products of one op, aligned with `op.parents()`.
fn vjp<F: Real>(op: &Op<F>, out: &Node<F>, g: &Node<F>, needs: &[bool], create_graph: bool) -> Result<Vec<Option<Node<F>>>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    let grads = match op {
        Op::Add(_, _) => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub(_, _) => vec![Some(g.clone()), want(1).then(|| g.neg())],
        Op::Mul(a, b) => vec![
            if want(0) { Some(g.mul(b)?) } else { None },
            if want(1) { Some(g.mul(a)?) } else { None },
        ],
        Op::Div(_, b) => {
            let ga = g.div(b)?;
            let gb = if want(1) { Some(ga.mul(out)?.neg()) } else { None };
            vec![Some(ga), gb]
        }
        Op::Neg(_) => vec![Some(g.neg())],
        Op::Abs(a) => vec![Some(g.mul(&a.sign())?)],
        Op::Exp(_) => vec![Some(g.mul(out)?)],
        Op::Ln(a) => vec![Some(g.div(a)?)],
        Op::Sign(_) => vec![None],
        Op::Scale(_, c) => vec![Some(g.scale(*c))],
        Op::Offset(_, _) => vec![Some(g.clone())],
        Op::ClampMin(a, c) => {
            let mask: Vec<F> = a.value().iter().map(|&x| if x > *c { F::one() } else { F::zero() }).collect();
            let mask = Node::leaf(crate::autodiff::Tensor::new(a.shape().to_vec(), mask)?, false);
            vec![Some(g.mul(&mask)?)]
        }
        Op::BroadcastTo(a) => vec![Some(g.sum_to(a.shape())?)],
        Op::SumTo(a) => vec![Some(g.broadcast_to(a.shape())?)],
        Op::Reshape(a) => vec![Some(g.reshape(a.shape())?)],
        Op::Permute(_, perm) => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            vec![Some(g.permute(&inv)?)]
        }
        Op::MatMul(a, b) => vec![
            if want(0) { Some(g.matmul(&b.t()?)?) } else { None },
            if want(1) { Some(a.t()?.matmul(g)?) } else { None },
        ],
        Op::Im2Col(_, geom) => vec![Some(g.col2im(*geom))],
        Op::Col2Im(_, geom) => vec![Some(g.im2col(*geom))],
        Op::Gather(a, idx) => vec![Some(g.scatter_add(Rc::clone(idx), a.shape())?)],
        Op::ScatterAdd(a, idx) => vec![Some(g.gather(Rc::clone(idx), a.shape())?)],
        Op::Stack(parts) => (0..parts.len())
            .map(|i| if want(i) { g.index0(i).map(Some) } else { Ok(None) })
            .collect::<Result<_>>()?,
        Op::Custom(a, custom, order) => {
            if *order == 0 && create_graph && !custom.has_second_order() {
                return Err(Error::structural(format!(
                    "custom op '{}' has no second derivative; cannot record a second-order graph",
                    custom.name()
                )));
            }
            if *order >= 2 {
                return Err(Error::structural(format!(
                    "custom op '{}' has no third derivative",
                    custom.name()
                )));
            }
            vec![Some(g.mul(&custom.eval(a, order + 1))?)]
        }
    };
    Ok(grads)
}
