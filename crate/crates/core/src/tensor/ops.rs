//! Differentiable primitive operations.
//!
//! Forward values are validated (shape compatibility, finiteness) and each op
//! registers the closure that routes output gradients to its parents.

#![allow(clippy::needless_range_loop)]

use super::special::{erf, normal_pdf};
use super::{Real, Tensor, TensorError, Var};
use crate::rng::Rng;

fn shape_err(op: &'static str, expected: String, got: String) -> TensorError {
    TensorError::ShapeMismatch { op, expected, got }
}

fn require_matrix<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(), TensorError> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(shape_err(op, "matrix".into(), format!("{:?}", t.shape())))
    }
}

/// Element-wise sum of two same-shape tensors.
pub fn add<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>, TensorError> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "add",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let mut value = a.value().clone();
    value.add_scaled(b.value(), T::ONE);
    value.check_finite("add")?;
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        |grad, parents| {
            parents[0].accumulate(grad);
            parents[1].accumulate(grad);
        },
    ))
}

pub fn sub<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>, TensorError> {
    add(a, &scale(b, -1.0)?)
}

/// Element-wise product.
pub fn mul<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>, TensorError> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "mul",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let data: Vec<T> = a
        .value()
        .data()
        .iter()
        .zip(b.value().data())
        .map(|(&x, &y)| x * y)
        .collect();
    let value = Tensor::from_vec(a.shape().to_vec(), data);
    value.check_finite("mul")?;
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        |grad, parents| {
            let a_val = parents[0].value();
            let b_val = parents[1].value();
            if parents[0].requires_grad() {
                let da: Vec<T> = grad
                    .data()
                    .iter()
                    .zip(b_val.data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                parents[0].accumulate(&Tensor::from_vec(grad.shape().to_vec(), da));
            }
            if parents[1].requires_grad() {
                let db: Vec<T> = grad
                    .data()
                    .iter()
                    .zip(a_val.data())
                    .map(|(&g, &x)| g * x)
                    .collect();
                parents[1].accumulate(&Tensor::from_vec(grad.shape().to_vec(), db));
            }
        },
    ))
}

/// Multiply by a scalar constant.
pub fn scale<T: Real>(x: &Var<T>, factor: f64) -> Result<Var<T>, TensorError> {
    let f = T::from_f64(factor);
    let value = x.value().map(|v| v * f);
    value.check_finite("scale")?;
    Ok(Var::from_op(value, vec![x.clone()], move |grad, parents| {
        let mut dx = Tensor::zeros(grad.shape().to_vec());
        dx.add_scaled(grad, f);
        parents[0].accumulate(&dx);
    }))
}

/// Matrix plus a broadcast row vector (bias add).
pub fn add_row<T: Real>(x: &Var<T>, bias: &Var<T>) -> Result<Var<T>, TensorError> {
    require_matrix(x.value(), "add_row")?;
    if bias.shape() != [x.value().cols()] {
        return Err(shape_err(
            "add_row",
            format!("[{}]", x.value().cols()),
            format!("{:?}", bias.shape()),
        ));
    }
    let mut value = x.value().clone();
    for i in 0..value.rows() {
        for (v, b) in value.row_mut(i).iter_mut().zip(bias.value().data()) {
            *v += *b;
        }
    }
    value.check_finite("add_row")?;
    Ok(Var::from_op(
        value,
        vec![x.clone(), bias.clone()],
        |grad, parents| {
            parents[0].accumulate(grad);
            if parents[1].requires_grad() {
                let m = grad.cols();
                let mut db = Tensor::zeros(vec![m]);
                for i in 0..grad.rows() {
                    for (d, g) in db.data_mut().iter_mut().zip(grad.row(i)) {
                        *d += *g;
                    }
                }
                parents[1].accumulate(&db);
            }
        },
    ))
}

/// 2-D matrix product.
pub fn matmul<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>, TensorError> {
    let value = a.value().matmul(b.value())?;
    value.check_finite("matmul")?;
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        |grad, parents| {
            if parents[0].requires_grad() {
                let bt = parents[1].value().transpose2();
                parents[0].accumulate(&grad.matmul(&bt).expect("shapes validated"));
            }
            if parents[1].requires_grad() {
                let at = parents[0].value().transpose2();
                parents[1].accumulate(&at.matmul(grad).expect("shapes validated"));
            }
        },
    ))
}

pub fn transpose<T: Real>(x: &Var<T>) -> Result<Var<T>, TensorError> {
    require_matrix(x.value(), "transpose")?;
    Ok(Var::from_op(
        x.value().transpose2(),
        vec![x.clone()],
        |grad, parents| {
            parents[0].accumulate(&grad.transpose2());
        },
    ))
}

/// Row-wise softmax over the last axis. Columns where `valid` is false get
/// probability zero and receive no gradient.
pub fn softmax_rows<T: Real>(x: &Var<T>, valid: Option<&[bool]>) -> Result<Var<T>, TensorError> {
    require_matrix(x.value(), "softmax")?;
    let (n, m) = (x.value().rows(), x.value().cols());
    if let Some(v) = valid {
        if v.len() != m {
            return Err(shape_err("softmax", format!("mask[{m}]"), format!("mask[{}]", v.len())));
        }
        if !v.iter().any(|&b| b) {
            return Err(TensorError::EmptySequence { op: "softmax" });
        }
    }
    let mut value = Tensor::zeros(vec![n, m]);
    for i in 0..n {
        let row = x.value().row(i);
        let mut max = None::<T>;
        for (j, &v) in row.iter().enumerate() {
            if valid.is_none_or(|mask| mask[j]) {
                max = Some(match max {
                    Some(m) => m.maximum(v),
                    None => v,
                });
            }
        }
        let max = max.expect("at least one valid column");
        let mut z = T::ZERO;
        let out = value.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            if valid.is_none_or(|mask| mask[j]) {
                let e = (v - max).exp();
                out[j] = e;
                z += e;
            }
        }
        for o in out.iter_mut() {
            *o = *o / z;
        }
    }
    value.check_finite("softmax")?;
    let saved = value.clone();
    Ok(Var::from_op(value, vec![x.clone()], move |grad, parents| {
        let mut dx = Tensor::zeros(saved.shape().to_vec());
        for i in 0..saved.rows() {
            let y = saved.row(i);
            let g = grad.row(i);
            let dot: T = y
                .iter()
                .zip(g)
                .fold(T::ZERO, |acc, (&yj, &gj)| acc + yj * gj);
            for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                *d = y[j] * (g[j] - dot);
            }
        }
        parents[0].accumulate(&dx);
    }))
}

pub fn tanh<T: Real>(x: &Var<T>) -> Result<Var<T>, TensorError> {
    let value = x.value().map(|v| v.tanh());
    value.check_finite("tanh")?;
    let saved = value.clone();
    Ok(Var::from_op(value, vec![x.clone()], move |grad, parents| {
        let dx: Vec<T> = grad
            .data()
            .iter()
            .zip(saved.data())
            .map(|(&g, &y)| g * (T::ONE - y * y))
            .collect();
        parents[0].accumulate(&Tensor::from_vec(grad.shape().to_vec(), dx));
    }))
}

/// GELU in the exact Gaussian-CDF form: x * Phi(x).
pub fn gelu<T: Real>(x: &Var<T>) -> Result<Var<T>, TensorError> {
    let value = x.value().map(|v| {
        let xf = v.to_f64();
        T::from_f64(xf * 0.5 * (1.0 + erf(xf / std::f64::consts::SQRT_2)))
    });
    value.check_finite("gelu")?;
    Ok(Var::from_op(value, vec![x.clone()], |grad, parents| {
        let x_val = parents[0].value();
        let dx: Vec<T> = grad
            .data()
            .iter()
            .zip(x_val.data())
            .map(|(&g, &xv)| {
                let xf = xv.to_f64();
                let phi = 0.5 * (1.0 + erf(xf / std::f64::consts::SQRT_2));
                g * T::from_f64(phi + xf * normal_pdf(xf))
            })
            .collect();
        parents[0].accumulate(&Tensor::from_vec(grad.shape().to_vec(), dx));
    }))
}

/// Layer normalization over the last axis with learned gain and bias.
pub fn layer_norm<T: Real>(
    x: &Var<T>,
    gain: &Var<T>,
    bias: &Var<T>,
    eps: f64,
) -> Result<Var<T>, TensorError> {
    require_matrix(x.value(), "layer_norm")?;
    let m = x.value().cols();
    if gain.shape() != [m] || bias.shape() != [m] {
        return Err(shape_err(
            "layer_norm",
            format!("gain/bias [{m}]"),
            format!("{:?}/{:?}", gain.shape(), bias.shape()),
        ));
    }
    let n = x.value().rows();
    let epsilon = T::from_f64(eps);
    let mf = T::from_f64(m as f64);
    let mut value = Tensor::zeros(vec![n, m]);
    let mut normalized = Tensor::zeros(vec![n, m]);
    let mut inv_std = vec![T::ZERO; n];
    for i in 0..n {
        let row = x.value().row(i);
        let mean = row.iter().fold(T::ZERO, |a, &v| a + v) / mf;
        let var = row
            .iter()
            .fold(T::ZERO, |a, &v| a + (v - mean) * (v - mean))
            / mf;
        let istd = T::ONE / (var + epsilon).sqrt();
        inv_std[i] = istd;
        for j in 0..m {
            let xhat = (row[j] - mean) * istd;
            normalized.set2(i, j, xhat);
            value.set2(i, j, gain.value().data()[j] * xhat + bias.value().data()[j]);
        }
    }
    value.check_finite("layer_norm")?;
    Ok(Var::from_op(
        value,
        vec![x.clone(), gain.clone(), bias.clone()],
        move |grad, parents| {
            let gain_val = parents[1].value().clone();
            let (n, m) = (grad.rows(), grad.cols());
            let mf = T::from_f64(m as f64);
            if parents[1].requires_grad() {
                let mut dg = Tensor::zeros(vec![m]);
                for i in 0..n {
                    for (j, d) in dg.data_mut().iter_mut().enumerate() {
                        *d += grad.get2(i, j) * normalized.get2(i, j);
                    }
                }
                parents[1].accumulate(&dg);
            }
            if parents[2].requires_grad() {
                let mut db = Tensor::zeros(vec![m]);
                for i in 0..n {
                    for (j, d) in db.data_mut().iter_mut().enumerate() {
                        *d += grad.get2(i, j);
                    }
                }
                parents[2].accumulate(&db);
            }
            if parents[0].requires_grad() {
                let mut dx = Tensor::zeros(vec![n, m]);
                for i in 0..n {
                    let mut sum_dxhat = T::ZERO;
                    let mut sum_dxhat_xhat = T::ZERO;
                    for j in 0..m {
                        let dxhat = grad.get2(i, j) * gain_val.data()[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * normalized.get2(i, j);
                    }
                    for j in 0..m {
                        let dxhat = grad.get2(i, j) * gain_val.data()[j];
                        let term =
                            dxhat - sum_dxhat / mf - normalized.get2(i, j) * sum_dxhat_xhat / mf;
                        dx.set2(i, j, inv_std[i] * term);
                    }
                }
                parents[0].accumulate(&dx);
            }
        },
    ))
}

/// 1-D convolution along the sequence axis with same-length zero padding.
/// Kernel shape is `[k, c_in, c_out]`.
pub fn conv1d_same<T: Real>(
    x: &Var<T>,
    kernel: &Var<T>,
    bias: &Var<T>,
) -> Result<Var<T>, TensorError> {
    require_matrix(x.value(), "conv1d")?;
    let kshape = kernel.shape().to_vec();
    if kshape.len() != 3 || kshape[1] != x.value().cols() {
        return Err(shape_err(
            "conv1d",
            format!("[k, {}, c_out]", x.value().cols()),
            format!("{kshape:?}"),
        ));
    }
    let (k, c_in, c_out) = (kshape[0], kshape[1], kshape[2]);
    if bias.shape() != [c_out] {
        return Err(shape_err(
            "conv1d",
            format!("bias [{c_out}]"),
            format!("{:?}", bias.shape()),
        ));
    }
    let n = x.value().rows();
    let pad = k / 2;
    let kidx = move |t: usize, ci: usize, co: usize| (t * c_in + ci) * c_out + co;

    let mut value = Tensor::zeros(vec![n, c_out]);
    for i in 0..n {
        let out = value.row_mut(i);
        out.copy_from_slice(bias.value().data());
        for t in 0..k {
            let src = i as isize + t as isize - pad as isize;
            if src < 0 || src >= n as isize {
                continue;
            }
            let xr = x.value().row(src as usize);
            for (ci, &xv) in xr.iter().enumerate() {
                if xv == T::ZERO {
                    continue;
                }
                let kbase = kidx(t, ci, 0);
                for (co, o) in out.iter_mut().enumerate() {
                    *o += xv * kernel.value().data()[kbase + co];
                }
            }
        }
    }
    value.check_finite("conv1d")?;
    Ok(Var::from_op(
        value,
        vec![x.clone(), kernel.clone(), bias.clone()],
        move |grad, parents| {
            let n = grad.rows();
            let x_val = parents[0].value();
            let k_val = parents[1].value();
            if parents[2].requires_grad() {
                let mut db = Tensor::zeros(vec![c_out]);
                for i in 0..n {
                    for (d, g) in db.data_mut().iter_mut().zip(grad.row(i)) {
                        *d += *g;
                    }
                }
                parents[2].accumulate(&db);
            }
            if parents[1].requires_grad() {
                let mut dk = Tensor::zeros(vec![k, c_in, c_out]);
                for i in 0..n {
                    let g = grad.row(i);
                    for t in 0..k {
                        let src = i as isize + t as isize - pad as isize;
                        if src < 0 || src >= n as isize {
                            continue;
                        }
                        let xr = x_val.row(src as usize);
                        for (ci, &xv) in xr.iter().enumerate() {
                            let kbase = kidx(t, ci, 0);
                            for (co, &gv) in g.iter().enumerate() {
                                dk.data_mut()[kbase + co] += xv * gv;
                            }
                        }
                    }
                }
                parents[1].accumulate(&dk);
            }
            if parents[0].requires_grad() {
                let mut dx = Tensor::zeros(vec![n, c_in]);
                for i in 0..n {
                    let g = grad.row(i);
                    for t in 0..k {
                        let src = i as isize + t as isize - pad as isize;
                        if src < 0 || src >= n as isize {
                            continue;
                        }
                        let dxr = dx.row_mut(src as usize);
                        for (ci, d) in dxr.iter_mut().enumerate() {
                            let kbase = kidx(t, ci, 0);
                            for (co, &gv) in g.iter().enumerate() {
                                *d += k_val.data()[kbase + co] * gv;
                            }
                        }
                    }
                }
                parents[0].accumulate(&dx);
            }
        },
    ))
}

/// Select rows of an embedding table; gradients scatter-add back.
pub fn embedding_lookup<T: Real>(table: &Var<T>, ids: &[usize]) -> Result<Var<T>, TensorError> {
    require_matrix(table.value(), "embedding_lookup")?;
    let (v, h) = (table.value().rows(), table.value().cols());
    if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
        return Err(TensorError::IndexOutOfRange {
            op: "embedding_lookup",
            index: bad,
            limit: v,
        });
    }
    let mut value = Tensor::zeros(vec![ids.len(), h]);
    for (i, &id) in ids.iter().enumerate() {
        value.row_mut(i).copy_from_slice(table.value().row(id));
    }
    let ids = ids.to_vec();
    Ok(Var::from_op(
        value,
        vec![table.clone()],
        move |grad, parents| {
            if !parents[0].requires_grad() {
                return;
            }
            let mut dt = Tensor::zeros(parents[0].shape().to_vec());
            for (i, &id) in ids.iter().enumerate() {
                for (d, g) in dt.row_mut(id).iter_mut().zip(grad.row(i)) {
                    *d += *g;
                }
            }
            parents[0].accumulate(&dt);
        },
    ))
}

/// General 2-D gather: out[p] = x[rows[p], cols[p]], reshaped to `out_shape`.
pub fn gather2<T: Real>(
    x: &Var<T>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    out_shape: Vec<usize>,
) -> Result<Var<T>, TensorError> {
    require_matrix(x.value(), "gather2")?;
    let (r, c) = (x.value().rows(), x.value().cols());
    let len: usize = out_shape.iter().product();
    if rows.len() != len || cols.len() != len {
        return Err(shape_err(
            "gather2",
            format!("{len} indices"),
            format!("{}/{}", rows.len(), cols.len()),
        ));
    }
    for (&i, &j) in rows.iter().zip(&cols) {
        if i >= r || j >= c {
            return Err(TensorError::IndexOutOfRange {
                op: "gather2",
                index: i.max(j),
                limit: r.max(c),
            });
        }
    }
    let data: Vec<T> = rows
        .iter()
        .zip(&cols)
        .map(|(&i, &j)| x.value().get2(i, j))
        .collect();
    let value = Tensor::from_vec(out_shape, data);
    Ok(Var::from_op(value, vec![x.clone()], move |grad, parents| {
        if !parents[0].requires_grad() {
            return;
        }
        let mut dx = Tensor::zeros(parents[0].shape().to_vec());
        for (p, (&i, &j)) in rows.iter().zip(&cols).enumerate() {
            let c = dx.cols();
            dx.data_mut()[i * c + j] += grad.data()[p];
        }
        parents[0].accumulate(&dx);
    }))
}

/// Inverted dropout: identity in eval mode, Bernoulli mask scaled by
/// 1/(1-rate) in training mode.
pub fn dropout<T: Real>(
    x: &Var<T>,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<Var<T>, TensorError> {
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let keep = 1.0 - rate;
    let inv = T::from_f64(1.0 / keep);
    let mask: Vec<T> = (0..x.value().len())
        .map(|_| {
            if rng.bernoulli(keep) {
                inv
            } else {
                T::ZERO
            }
        })
        .collect();
    let mask = Tensor::from_vec(x.shape().to_vec(), mask);
    mul(x, &Var::constant(mask))
}

/// Mean over the rows where `keep` is true; output shape [1, cols].
pub fn mean_rows_masked<T: Real>(x: &Var<T>, keep: &[bool]) -> Result<Var<T>, TensorError> {
    require_matrix(x.value(), "mean_pool")?;
    if keep.len() != x.value().rows() {
        return Err(shape_err(
            "mean_pool",
            format!("mask[{}]", x.value().rows()),
            format!("mask[{}]", keep.len()),
        ));
    }
    let m = keep.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(TensorError::EmptySequence { op: "mean_pool" });
    }
    let h = x.value().cols();
    let inv = T::from_f64(1.0 / m as f64);
    let mut value = Tensor::zeros(vec![1, h]);
    for (i, &k) in keep.iter().enumerate() {
        if k {
            for (o, v) in value.row_mut(0).iter_mut().zip(x.value().row(i)) {
                *o += *v * inv;
            }
        }
    }
    let keep = keep.to_vec();
    Ok(Var::from_op(value, vec![x.clone()], move |grad, parents| {
        let mut dx = Tensor::zeros(parents[0].shape().to_vec());
        for (i, &k) in keep.iter().enumerate() {
            if k {
                for (d, g) in dx.row_mut(i).iter_mut().zip(grad.row(0)) {
                    *d += *g * inv;
                }
            }
        }
        parents[0].accumulate(&dx);
    }))
}

/// Stack matrices with equal column counts along the row axis.
pub fn concat_rows<T: Real>(parts: &[Var<T>]) -> Result<Var<T>, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::EmptySequence { op: "concat_rows" });
    }
    let cols = parts[0].value().cols();
    let mut total = 0;
    for p in parts {
        require_matrix(p.value(), "concat_rows")?;
        if p.value().cols() != cols {
            return Err(shape_err(
                "concat_rows",
                format!("cols {cols}"),
                format!("cols {}", p.value().cols()),
            ));
        }
        total += p.value().rows();
    }
    let mut value = Tensor::zeros(vec![total, cols]);
    let mut offset = 0;
    let mut row_counts = Vec::with_capacity(parts.len());
    for p in parts {
        let r = p.value().rows();
        for i in 0..r {
            value.row_mut(offset + i).copy_from_slice(p.value().row(i));
        }
        row_counts.push(r);
        offset += r;
    }
    Ok(Var::from_op(
        value,
        parts.to_vec(),
        move |grad, parents| {
            let mut offset = 0;
            for (p, &r) in parents.iter().zip(&row_counts) {
                if p.requires_grad() {
                    let mut dp = Tensor::zeros(vec![r, grad.cols()]);
                    for i in 0..r {
                        dp.row_mut(i).copy_from_slice(grad.row(offset + i));
                    }
                    p.accumulate(&dp);
                }
                offset += r;
            }
        },
    ))
}

/// Contiguous column slice of a matrix (per-head views of projections).
pub fn slice_cols<T: Real>(
    x: &Var<T>,
    start: usize,
    width: usize,
) -> Result<Var<T>, TensorError> {
    require_matrix(x.value(), "slice_cols")?;
    let (n, m) = (x.value().rows(), x.value().cols());
    if start + width > m {
        return Err(TensorError::IndexOutOfRange {
            op: "slice_cols",
            index: start + width,
            limit: m,
        });
    }
    let mut value = Tensor::zeros(vec![n, width]);
    for i in 0..n {
        value
            .row_mut(i)
            .copy_from_slice(&x.value().row(i)[start..start + width]);
    }
    Ok(Var::from_op(value, vec![x.clone()], move |grad, parents| {
        let mut dx = Tensor::zeros(parents[0].shape().to_vec());
        for i in 0..grad.rows() {
            dx.row_mut(i)[start..start + width].copy_from_slice(grad.row(i));
        }
        parents[0].accumulate(&dx);
    }))
}

/// Stack matrices with equal row counts along the column axis.
pub fn concat_cols<T: Real>(parts: &[Var<T>]) -> Result<Var<T>, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::EmptySequence { op: "concat_cols" });
    }
    let n = parts[0].value().rows();
    let mut total = 0;
    for p in parts {
        require_matrix(p.value(), "concat_cols")?;
        if p.value().rows() != n {
            return Err(shape_err(
                "concat_cols",
                format!("rows {n}"),
                format!("rows {}", p.value().rows()),
            ));
        }
        total += p.value().cols();
    }
    let mut value = Tensor::zeros(vec![n, total]);
    let mut offset = 0;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let w = p.value().cols();
        for i in 0..n {
            value.row_mut(i)[offset..offset + w].copy_from_slice(p.value().row(i));
        }
        widths.push(w);
        offset += w;
    }
    Ok(Var::from_op(value, parts.to_vec(), move |grad, parents| {
        let mut offset = 0;
        for (p, &w) in parents.iter().zip(&widths) {
            if p.requires_grad() {
                let mut dp = Tensor::zeros(vec![grad.rows(), w]);
                for i in 0..grad.rows() {
                    dp.row_mut(i)
                        .copy_from_slice(&grad.row(i)[offset..offset + w]);
                }
                p.accumulate(&dp);
            }
            offset += w;
        }
    }))
}

/// Sum of all elements, as a scalar node.
pub fn sum_all<T: Real>(x: &Var<T>) -> Result<Var<T>, TensorError> {
    let total = x.value().data().iter().fold(T::ZERO, |a, &v| a + v);
    let value = Tensor::scalar(total);
    value.check_finite("sum")?;
    Ok(Var::from_op(value, vec![x.clone()], |grad, parents| {
        let g = grad.item();
        parents[0].accumulate(&Tensor::full(parents[0].shape().to_vec(), g));
    }))
}

/// Summed cross-entropy of row-wise logits against integer targets, counted
/// only where `mask` is true. Returns the loss sum and the masked count; the
/// caller divides to get a mean.
pub fn cross_entropy_sum<T: Real>(
    logits: &Var<T>,
    targets: &[usize],
    mask: &[bool],
) -> Result<(Var<T>, usize), TensorError> {
    require_matrix(logits.value(), "cross_entropy")?;
    let (n, v) = (logits.value().rows(), logits.value().cols());
    if targets.len() != n || mask.len() != n {
        return Err(shape_err(
            "cross_entropy",
            format!("targets/mask [{n}]"),
            format!("{}/{}", targets.len(), mask.len()),
        ));
    }
    if let Some(&bad) = targets
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(t, _)| t)
        .find(|&&t| t >= v)
    {
        return Err(TensorError::IndexOutOfRange {
            op: "cross_entropy",
            index: bad,
            limit: v,
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    // Softmax probabilities for masked rows, saved for the backward pass.
    let mut probs = Tensor::zeros(vec![n, v]);
    let mut loss = T::ZERO;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let row = logits.value().row(i);
        let max = row.iter().fold(row[0], |a, &b| a.maximum(b));
        let mut z = T::ZERO;
        for (j, &l) in row.iter().enumerate() {
            let e = (l - max).exp();
            probs.set2(i, j, e);
            z += e;
        }
        for j in 0..v {
            let p = probs.get2(i, j) / z;
            probs.set2(i, j, p);
        }
        loss += -(probs.get2(i, targets[i]).ln());
    }
    let value = Tensor::scalar(loss);
    value.check_finite("cross_entropy")?;
    let targets = targets.to_vec();
    let mask = mask.to_vec();
    let var = Var::from_op(value, vec![logits.clone()], move |grad, parents| {
        let g = grad.item();
        let mut dl = Tensor::zeros(vec![n, v]);
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            for j in 0..v {
                let indicator = if j == targets[i] { T::ONE } else { T::ZERO };
                dl.set2(i, j, (probs.get2(i, j) - indicator) * g);
            }
        }
        parents[0].accumulate(&dl);
    });
    Ok((var, count))
}

/// Mean squared error against a constant target vector.
pub fn mse_mean<T: Real>(pred: &Var<T>, target: &[f64]) -> Result<Var<T>, TensorError> {
    let n = pred.value().len();
    if target.len() != n {
        return Err(shape_err(
            "mse",
            format!("target [{n}]"),
            format!("[{}]", target.len()),
        ));
    }
    if n == 0 {
        return Err(TensorError::EmptySequence { op: "mse" });
    }
    let inv = T::from_f64(1.0 / n as f64);
    let mut loss = T::ZERO;
    for (&p, &y) in pred.value().data().iter().zip(target) {
        let d = p - T::from_f64(y);
        loss += d * d * inv;
    }
    let value = Tensor::scalar(loss);
    value.check_finite("mse")?;
    let target = target.to_vec();
    Ok(Var::from_op(value, vec![pred.clone()], move |grad, parents| {
        let g = grad.item();
        let two = T::from_f64(2.0);
        let dp: Vec<T> = parents[0]
            .value()
            .data()
            .iter()
            .zip(&target)
            .map(|(&p, &y)| two * (p - T::from_f64(y)) * inv * g)
            .collect();
        parents[0].accumulate(&Tensor::from_vec(parents[0].shape().to_vec(), dp));
    }))
}

/// Mean binary cross-entropy on logits with a positive-class weight.
/// Stable via softplus: loss_i = w_i * softplus(-z) [y=1] or softplus(z) [y=0].
pub fn bce_logits_weighted<T: Real>(
    logits: &Var<T>,
    labels: &[bool],
    pos_weight: f64,
) -> Result<Var<T>, TensorError> {
    let n = logits.value().len();
    if labels.len() != n {
        return Err(shape_err(
            "bce",
            format!("labels [{n}]"),
            format!("[{}]", labels.len()),
        ));
    }
    if n == 0 {
        return Err(TensorError::EmptySequence { op: "bce" });
    }
    let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
    let mut loss = 0.0f64;
    for (&z, &y) in logits.value().data().iter().zip(labels) {
        let zf = z.to_f64();
        loss += if y {
            pos_weight * softplus(-zf)
        } else {
            softplus(zf)
        };
    }
    let value = Tensor::scalar(T::from_f64(loss / n as f64));
    value.check_finite("bce")?;
    let labels = labels.to_vec();
    Ok(Var::from_op(value, vec![logits.clone()], move |grad, parents| {
        let g = grad.item().to_f64();
        let inv = 1.0 / n as f64;
        let dz: Vec<T> = parents[0]
            .value()
            .data()
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| {
                let s = 1.0 / (1.0 + (-z.to_f64()).exp());
                let d = if y { pos_weight * (s - 1.0) } else { s };
                T::from_f64(d * inv * g)
            })
            .collect();
        parents[0].accumulate(&Tensor::from_vec(parents[0].shape().to_vec(), dz));
    }))
}
