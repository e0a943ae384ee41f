use nalgebra::DMatrix;

use super::{DescriptorError, DescriptorModel, Result};
use crate::geomgraph::RadiusGraph;
use crate::nn::{silu, silu_grad};

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// `n x width` node states after the last message-passing layer.
    pub embeddings: DMatrix<f64>,
    pub noise_pred: Vec<[f64; 3]>,
}

struct LayerCache {
    h: DMatrix<f64>,
    filter: DMatrix<f64>,
    pre_in: DMatrix<f64>,
    a: DMatrix<f64>,
    s: DMatrix<f64>,
}

/// Intermediates kept for the reverse pass.
pub struct ForwardCache {
    rbf: DMatrix<f64>,
    layers: Vec<LayerCache>,
    h_final: DMatrix<f64>,
    pair_in: DMatrix<f64>,
    pair_pre: DMatrix<f64>,
    q: DMatrix<f64>,
    fr: DMatrix<f64>,
}

fn add_row_bias(m: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    for c in 0..m.ncols() {
        m.column_mut(c).add_scalar_mut(b[(0, c)]);
    }
}

fn column_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(1, m.ncols(), |_, c| m.column(c).sum())
}

fn check_inputs(model: &DescriptorModel, graph: &RadiusGraph, atomic_numbers: &[u8]) -> Result<()> {
    if graph.n_nodes != atomic_numbers.len() {
        return Err(DescriptorError::NodeCountMismatch {
            graph: graph.n_nodes,
            atoms: atomic_numbers.len(),
        });
    }
    if graph.cutoff != model.config.cutoff {
        return Err(DescriptorError::CutoffMismatch {
            graph: graph.cutoff,
            model: model.config.cutoff,
        });
    }
    let n_el = model.config.n_elements;
    if let Some((atom, &z)) = atomic_numbers
        .iter()
        .enumerate()
        .find(|(_, &z)| z as usize >= n_el)
    {
        return Err(DescriptorError::UnknownElement {
            atom,
            z,
            n_elements: n_el,
        });
    }
    Ok(())
}

fn rbf_matrix(model: &DescriptorModel, graph: &RadiusGraph) -> Result<DMatrix<f64>> {
    let spec = model.config.rbf()?;
    let r = spec.n_rbf;
    let mut data = vec![0.0; graph.n_edges() * r];
    for (e, &d) in graph.distances.iter().enumerate() {
        spec.expand_into(d, &mut data[e * r..(e + 1) * r]);
    }
    Ok(DMatrix::from_row_slice(graph.n_edges(), r, &data))
}

fn ensure_finite(m: &DMatrix<f64>, layer: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DescriptorError::NumericalFailure { layer })
    }
}

pub fn forward(
    model: &DescriptorModel,
    graph: &RadiusGraph,
    atomic_numbers: &[u8],
) -> Result<ForwardOutput> {
    forward_with_cache(model, graph, atomic_numbers).map(|(out, _)| out)
}

pub fn forward_with_cache(
    model: &DescriptorModel,
    graph: &RadiusGraph,
    atomic_numbers: &[u8],
) -> Result<(ForwardOutput, ForwardCache)> {
    check_inputs(model, graph, atomic_numbers)?;
    let n = graph.n_nodes;
    let w = model.config.width;
    let rbf = rbf_matrix(model, graph)?;

    let mut h = DMatrix::zeros(n, w);
    for (i, &z) in atomic_numbers.iter().enumerate() {
        h.row_mut(i).copy_from(&model.element_embedding.row(z as usize));
    }

    let mut layers = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let filter = &rbf * &layer.filter;
        let mut pre_in = h.clone();
        for (e, &(i, j)) in graph.edges.iter().enumerate() {
            for c in 0..w {
                pre_in[(i, c)] += filter[(e, c)] * h[(j, c)];
            }
        }
        let mut a = &pre_in * &layer.w1;
        add_row_bias(&mut a, &layer.b1);
        let s = a.map(silu);
        let mut h_next = &s * &layer.w2;
        add_row_bias(&mut h_next, &layer.b2);
        h_next += &h;
        ensure_finite(&h_next, l)?;
        layers.push(LayerCache {
            h: std::mem::replace(&mut h, h_next),
            filter,
            pre_in,
            a,
            s,
        });
    }

    let ro = &model.readout;
    let ne = graph.n_edges();
    let mut pair_in = DMatrix::zeros(ne, w);
    for (e, &(i, j)) in graph.edges.iter().enumerate() {
        for c in 0..w {
            pair_in[(e, c)] = h[(i, c)] + h[(j, c)];
        }
    }
    let mut pair_pre = &pair_in * &ro.pair_w;
    add_row_bias(&mut pair_pre, &ro.pair_b);
    let q = pair_pre.map(silu);
    let fr = &rbf * &ro.filter;
    let mut noise_pred = vec![[0.0; 3]; n];
    for (e, &(i, _)) in graph.edges.iter().enumerate() {
        let mut g = 0.0;
        for c in 0..w {
            g += ro.gate[(c, 0)] * fr[(e, c)] * q[(e, c)];
        }
        let u = graph.unit_vectors[e];
        for k in 0..3 {
            noise_pred[i][k] += g * u[k];
        }
    }
    if noise_pred.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DescriptorError::NumericalFailure {
            layer: model.layers.len(),
        });
    }

    let out = ForwardOutput {
        embeddings: h.clone(),
        noise_pred,
    };
    Ok((
        out,
        ForwardCache {
            rbf,
            layers,
            h_final: h,
            pair_in,
            pair_pre,
            q,
            fr,
        },
    ))
}

/// Reverse pass. Given upstream gradients on the node embeddings (optional)
/// and on the noise prediction, return the gradient for every weight in the
/// layout of `model`.
pub fn backward(
    model: &DescriptorModel,
    graph: &RadiusGraph,
    atomic_numbers: &[u8],
    cache: &ForwardCache,
    d_embeddings: Option<&DMatrix<f64>>,
    d_noise: &[[f64; 3]],
) -> DescriptorModel {
    let n = graph.n_nodes;
    let w = model.config.width;
    let ne = graph.n_edges();
    let mut grad = model.zeros_like();

    let mut d_h = match d_embeddings {
        Some(d) => d.clone(),
        None => DMatrix::zeros(n, w),
    };

    // readout
    let ro = &model.readout;
    let mut d_fr = DMatrix::zeros(ne, w);
    let mut d_pre = DMatrix::zeros(ne, w);
    for (e, &(i, _)) in graph.edges.iter().enumerate() {
        let u = graph.unit_vectors[e];
        let dg = d_noise[i][0] * u[0] + d_noise[i][1] * u[1] + d_noise[i][2] * u[2];
        if dg == 0.0 {
            continue;
        }
        for c in 0..w {
            let gate = ro.gate[(c, 0)];
            let fr = cache.fr[(e, c)];
            let q = cache.q[(e, c)];
            grad.readout.gate[(c, 0)] += dg * fr * q;
            d_fr[(e, c)] = dg * gate * q;
            d_pre[(e, c)] = dg * gate * fr * silu_grad(cache.pair_pre[(e, c)]);
        }
    }
    grad.readout.filter = cache.rbf.transpose() * &d_fr;
    grad.readout.pair_w = cache.pair_in.transpose() * &d_pre;
    grad.readout.pair_b = column_sums(&d_pre);
    let d_pair_in = &d_pre * ro.pair_w.transpose();
    for (e, &(i, j)) in graph.edges.iter().enumerate() {
        for c in 0..w {
            let v = d_pair_in[(e, c)];
            d_h[(i, c)] += v;
            d_h[(j, c)] += v;
        }
    }
    debug_assert_eq!(cache.h_final.shape(), d_h.shape());

    for (l, layer) in model.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let g = &mut grad.layers[l];
        g.w2 = lc.s.transpose() * &d_h;
        g.b2 = column_sums(&d_h);
        let d_s = &d_h * layer.w2.transpose();
        let d_a = d_s.zip_map(&lc.a, |ds, a| ds * silu_grad(a));
        g.w1 = lc.pre_in.transpose() * &d_a;
        g.b1 = column_sums(&d_a);
        let d_pre_in = &d_a * layer.w1.transpose();
        // residual path plus the self term of pre_in = h + m
        let mut d_prev = &d_h + &d_pre_in;
        let mut d_filter = DMatrix::zeros(ne, w);
        for (e, &(i, j)) in graph.edges.iter().enumerate() {
            for c in 0..w {
                let dm = d_pre_in[(i, c)];
                d_filter[(e, c)] = dm * lc.h[(j, c)];
                d_prev[(j, c)] += dm * lc.filter[(e, c)];
            }
        }
        g.filter = cache.rbf.transpose() * &d_filter;
        d_h = d_prev;
    }

    for (i, &z) in atomic_numbers.iter().enumerate() {
        let mut row = grad.element_embedding.row_mut(z as usize);
        row += d_h.row(i);
    }
    grad
}
