use super::tensor::{Input, OpKind};
use super::{Array, AutodiffError, GradRecord, Tensor};

/// Gradients of a scalar `loss` with respect to each of `params`.
///
/// Parameters the loss does not depend on (or that live on another record)
/// get an all-zero gradient of their own shape. With `create_graph` the
/// returned gradients are recorded on the loss's record and can be
/// differentiated again; otherwise they are plain constants.
pub fn grad(
    loss: &Tensor,
    params: &[&Tensor],
    create_graph: bool,
) -> Result<Vec<Tensor>, AutodiffError> {
    if loss.value().len() != 1 {
        return Err(AutodiffError::NonScalarLoss(loss.shape().to_vec()));
    }
    let zeros = |p: &Tensor| Tensor::constant(Array::zeros(p.shape()));
    let (Some(record), Some(root)) = (loss.record().cloned(), loss.node_id()) else {
        return Ok(params.iter().map(|p| zeros(p)).collect());
    };

    let param_ids: Vec<Option<usize>> = params
        .iter()
        .map(|p| match p.record() {
            Some(r) if r.same(&record) => p.node_id().filter(|&id| id <= root),
            _ => None,
        })
        .collect();

    // Only nodes lying on a path from a requested parameter to the loss need
    // an adjoint.
    let mut needed = vec![false; root + 1];
    for id in param_ids.iter().flatten() {
        needed[*id] = true;
    }
    for i in 0..=root {
        if !needed[i] {
            needed[i] = record.with_node(i, |n| {
                n.inputs.iter().any(|inp| inp.id.is_some_and(|j| needed[j]))
            });
        }
    }
    if !needed[root] {
        return Ok(params.iter().map(|p| zeros(p)).collect());
    }

    let mut adjoints: Vec<Option<Tensor>> = vec![None; root + 1];
    adjoints[root] = Some(Tensor::constant(Array::full(loss.shape(), 1.0)));

    for i in (0..=root).rev() {
        if !needed[i] {
            continue;
        }
        let (kind, inputs, out) = record.with_node(i, |n| {
            (n.kind.clone(), n.inputs.clone(), n.value.clone())
        });
        if matches!(kind, OpKind::Leaf) {
            continue;
        }
        let Some(g) = adjoints[i].take() else {
            continue;
        };
        let out = if create_graph {
            record.tensor_at(i)
        } else {
            Tensor::from_shared(out)
        };
        let operands: Vec<Tensor> = inputs
            .iter()
            .map(|inp| operand(&record, inp, create_graph))
            .collect();
        let contributions = vjp(&kind, &operands, &out, &g)?;
        for (inp, contrib) in inputs.iter().zip(contributions) {
            let (Some(j), Some(c)) = (inp.id, contrib) else {
                continue;
            };
            if !needed[j] {
                continue;
            }
            adjoints[j] = Some(match adjoints[j].take() {
                None => c,
                Some(prev) => prev.add(&c)?,
            });
        }
    }

    Ok(params
        .iter()
        .zip(&param_ids)
        .map(|(p, id)| match id.and_then(|j| adjoints[j].clone()) {
            Some(g) if create_graph => g,
            Some(g) => g.detach(),
            None => zeros(p),
        })
        .collect())
}

fn operand(record: &GradRecord, input: &Input, create_graph: bool) -> Tensor {
    match input.id {
        Some(id) if create_graph => record.tensor_at(id),
        _ => Tensor::from_shared(input.value.clone()),
    }
}

fn mask(x: &Tensor, keep: impl Fn(f64) -> bool) -> Tensor {
    Tensor::constant(x.value().map(|v| if keep(v) { 1.0 } else { 0.0 }))
}

/// Vector-Jacobian products of one primitive, expressed with tensor ops so
/// they are themselves recorded when the operands are tracked.
fn vjp(
    kind: &OpKind,
    inputs: &[Tensor],
    out: &Tensor,
    g: &Tensor,
) -> Result<Vec<Option<Tensor>>, AutodiffError> {
    let a = &inputs[0];
    Ok(match kind {
        OpKind::Leaf => vec![],
        OpKind::MatMul {
            transpose_lhs: ta,
            transpose_rhs: tb,
        } => {
            let b = &inputs[1];
            let da = if *ta {
                b.matmul_t(g, *tb, true)?
            } else {
                g.matmul_t(b, false, !tb)?
            };
            let db = if *tb {
                g.matmul_t(a, true, *ta)?
            } else {
                a.matmul_t(g, !ta, false)?
            };
            vec![Some(da), Some(db)]
        }
        OpKind::Add => vec![Some(g.clone()), Some(g.clone())],
        OpKind::Sub => vec![Some(g.clone()), Some(g.neg())],
        OpKind::Mul => vec![Some(g.mul(&inputs[1])?), Some(g.mul(a)?)],
        OpKind::Scale(c) => vec![Some(g.scale(*c))],
        OpKind::AddScalar => vec![Some(g.clone())],
        OpKind::Relu => vec![Some(g.mul(&mask(a, |v| v > 0.0))?)],
        OpKind::Tanh => vec![Some(g.mul(&out.square().neg().add_scalar(1.0))?)],
        OpKind::Sign => vec![None],
        OpKind::Log => vec![Some(g.mul(&a.recip())?)],
        OpKind::Exp => vec![Some(g.mul(out)?)],
        OpKind::Square => vec![Some(g.mul(a)?.scale(2.0))],
        OpKind::Recip => vec![Some(g.mul(&out.square().neg())?)],
        OpKind::Clip { lo, hi } => vec![Some(g.mul(&mask(a, |v| v > *lo && v < *hi))?)],
        OpKind::BroadcastTo => vec![Some(g.sum_to(a.shape())?)],
        OpKind::SumTo => vec![Some(g.broadcast_to(a.shape())?)],
        OpKind::Reshape => vec![Some(g.reshape(a.shape())?)],
        OpKind::SliceCols { start } => vec![Some(g.pad_cols(*start, a.shape()[1])?)],
        OpKind::PadCols { start } => vec![Some(g.slice_cols(*start, a.shape()[1])?)],
        OpKind::ConcatCols => {
            let ca = a.shape()[1];
            let cb = inputs[1].shape()[1];
            vec![Some(g.slice_cols(0, ca)?), Some(g.slice_cols(ca, cb)?)]
        }
        OpKind::Gather(index) => vec![Some(g.scatter_rows(index, a.shape()[1])?)],
        OpKind::Scatter(index) => vec![Some(g.gather_rows(index)?)],
    })
}
