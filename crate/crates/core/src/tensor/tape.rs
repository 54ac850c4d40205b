use std::sync::{Arc, Mutex, MutexGuard};

use super::ops::{vjp, Op};
use super::{Result, Tensor, TensorError};

/// Append-only record of differentiable operations.
///
/// A tape is meant to be owned by one logical training step. Independent
/// tapes may live on different threads; operands from two different tapes
/// must never be combined.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Arc<Mutex<Vec<Node>>>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: usize,
}

/// An input captured at record time. Constants keep `id = None`.
#[derive(Clone)]
pub(crate) struct Operand {
    pub id: Option<usize>,
    pub tensor: Tensor,
}

#[derive(Clone)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Operand>,
    pub output: Tensor,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register `t` as a differentiation leaf on this tape. The returned
    /// tensor shares storage with `t`.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let value = t.detach();
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            output: value.clone(),
        });
        Tensor::from_parts(
            value.shape_arc().clone(),
            value.data_arc().clone(),
            Some(NodeRef { tape: self.clone(), id }),
        )
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.nodes, &other.nodes)
    }

    fn lock(&self) -> MutexGuard<'_, Vec<Node>> {
        self.nodes.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        let mut nodes = self.lock();
        nodes.push(node);
        nodes.len() - 1
    }

    fn snapshot(&self, end: usize) -> Vec<Node> {
        self.lock()[..=end].to_vec()
    }
}

/// Build the output tensor of an operation, recording it on the tape of
/// whichever input is tracked. Constant-only inputs yield a constant.
///
/// Panics when tracked inputs come from two different tapes.
pub(crate) fn record(op: Op, inputs: &[&Tensor], shape: &[usize], data: Vec<f64>) -> Tensor {
    let out = Tensor::raw(shape, data);
    let tape = inputs.iter().find_map(|t| t.node().map(|n| n.tape.clone()));
    let Some(tape) = tape else {
        return out;
    };
    for t in inputs {
        if let Some(n) = t.node() {
            assert!(n.tape.same(&tape), "operands are recorded on different tapes");
        }
    }
    let operands = inputs
        .iter()
        .map(|t| Operand {
            id: t.node().map(|n| n.id),
            tensor: t.detach(),
        })
        .collect();
    let id = tape.push(Node {
        op,
        inputs: operands,
        output: out.clone(),
    });
    Tensor::from_parts(
        out.shape_arc().clone(),
        out.data_arc().clone(),
        Some(NodeRef { tape, id }),
    )
}

fn handle(t: &Tensor, id: Option<usize>, tape: &Tape, attach: bool) -> Tensor {
    let node = match (attach, id) {
        (true, Some(id)) => Some(NodeRef { tape: tape.clone(), id }),
        _ => None,
    };
    Tensor::from_parts(t.shape_arc().clone(), t.data_arc().clone(), node)
}

/// Gradients of the scalar `loss` with respect to each tensor in `wrt`.
///
/// With `create_graph`, the backward pass is itself recorded on the tape and
/// the returned gradients are differentiable. Tensors in `wrt` that `loss`
/// does not depend on receive zeros.
pub fn grad(loss: &Tensor, wrt: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    let loss_ref = loss.node().ok_or(TensorError::LossNotOnTape)?;
    let tape = loss_ref.tape.clone();
    let end = loss_ref.id;

    let mut targets = Vec::with_capacity(wrt.len());
    for (i, w) in wrt.iter().enumerate() {
        match w.node() {
            Some(n) if n.tape.same(&tape) && n.id <= end => targets.push(Some(n.id)),
            // recorded after the loss: cannot influence it
            Some(n) if n.tape.same(&tape) => targets.push(None),
            _ => return Err(TensorError::NotOnTape(i)),
        }
    }
    let Some(start) = targets.iter().flatten().min().copied() else {
        return Ok(wrt.iter().map(Tensor::zeros_like).collect());
    };

    let nodes = tape.snapshot(end);
    let mut is_target = vec![false; end + 1];
    let mut needed = vec![false; end + 1];
    for &t in targets.iter().flatten() {
        is_target[t] = true;
        needed[t] = true;
    }
    for i in start..=end {
        if !needed[i] {
            needed[i] = nodes[i].inputs.iter().any(|o| o.id.is_some_and(|j| needed[j]));
        }
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; end + 1];
    let mut kept: Vec<Option<Tensor>> = vec![None; end + 1];
    if needed[end] {
        grads[end] = Some(Tensor::raw(loss.shape(), vec![1.0]));
    }

    for i in (start..=end).rev() {
        let Some(g) = grads[i].take() else { continue };
        if is_target[i] {
            kept[i] = Some(g.clone());
        }
        let node = &nodes[i];
        let need: Vec<bool> = node.inputs.iter().map(|o| o.id.is_some_and(|j| needed[j])).collect();
        if !need.iter().any(|&b| b) {
            continue;
        }
        let inputs: Vec<Tensor> = node
            .inputs
            .iter()
            .map(|o| handle(&o.tensor, o.id, &tape, create_graph))
            .collect();
        let output = handle(&node.output, Some(i), &tape, create_graph);
        let g = if create_graph { g } else { g.detach() };
        let input_grads = vjp(&node.op, &inputs, &output, &g, &need)?;
        for (operand, ig) in node.inputs.iter().zip(input_grads) {
            let (Some(j), Some(ig)) = (operand.id, ig) else {
                continue;
            };
            grads[j] = Some(match grads[j].take() {
                None => ig,
                Some(prev) => prev.add(&ig)?,
            });
        }
    }

    Ok(wrt
        .iter()
        .zip(&targets)
        .map(|(w, t)| match t.and_then(|id| kept[id].clone()) {
            Some(g) if create_graph => g,
            Some(g) => g.detach(),
            None => w.zeros_like(),
        })
        .collect())
}
