use super::autograd::trace_kinks;
use super::{same_shape, Tensor};
use crate::error::{Error, Result};

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        zip_map(a, b, |x, y| x + y),
        "add",
        &[a, b],
        |g, _| vec![Some(g.to_vec()), Some(g.to_vec())],
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        zip_map(a, b, |x, y| x - y),
        "sub",
        &[a, b],
        |g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        zip_map(a, b, |x, y| x * y),
        "mul",
        &[a, b],
        move |g, needs| {
            let ga = needs[0].then(|| g.iter().zip(bc.data()).map(|(g, y)| g * y).collect());
            let gb = needs[1].then(|| g.iter().zip(ac.data()).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        },
    ))
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    Tensor::from_op(
        a.shape().to_vec(),
        a.data().iter().map(|v| v * factor).collect(),
        "scale",
        &[a],
        move |g, _| vec![Some(g.iter().map(|v| v * factor).collect())],
    )
}

pub fn neg(a: &Tensor) -> Tensor {
    scale(a, -1.0)
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    Tensor::from_op(
        a.shape().to_vec(),
        a.data().iter().map(|v| v + c).collect(),
        "add_scalar",
        &[a],
        |g, _| vec![Some(g.to_vec())],
    )
}

/// Elementwise square root; the input must be strictly positive.
pub fn sqrt(a: &Tensor) -> Result<Tensor> {
    if let Some(v) = a.data().iter().find(|v| **v <= 0.0) {
        return Err(Error::invalid("sqrt", format!("non-positive input {v}")));
    }
    let out: Vec<f64> = a.data().iter().map(|v| v.sqrt()).collect();
    let root = out.clone();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        "sqrt",
        &[a],
        move |g, _| vec![Some(g.iter().zip(&root).map(|(g, r)| g * 0.5 / r).collect())],
    ))
}

/// Elementwise reciprocal; zero entries are rejected.
pub fn recip(a: &Tensor) -> Result<Tensor> {
    if a.data().iter().any(|v| *v == 0.0) {
        return Err(Error::invalid("recip", "zero input"));
    }
    let out: Vec<f64> = a.data().iter().map(|v| 1.0 / v).collect();
    let inv = out.clone();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        "recip",
        &[a],
        move |g, _| vec![Some(g.iter().zip(&inv).map(|(g, r)| -g * r * r).collect())],
    ))
}

/// Elementwise `max(0, x)`, with subgradient 0 at the kink. NaN passes
/// through so that divergence stays visible downstream.
pub fn relu(a: &Tensor) -> Tensor {
    trace_kinks(a.data());
    let mask: Vec<bool> = a.data().iter().map(|v| !(*v <= 0.0)).collect();
    let out = a
        .data()
        .iter()
        .zip(&mask)
        .map(|(v, m)| if *m { *v } else { 0.0 })
        .collect();
    Tensor::from_op(a.shape().to_vec(), out, "relu", &[a], move |g, _| {
        vec![Some(
            g.iter()
                .zip(&mask)
                .map(|(g, m)| if *m { *g } else { 0.0 })
                .collect(),
        )]
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn abs(a: &Tensor) -> Tensor {
    trace_kinks(a.data());
    let signs: Vec<f64> = a.data().iter().map(|v| sign(*v)).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        a.data().iter().map(|v| v.abs()).collect(),
        "abs",
        &[a],
        move |g, _| vec![Some(g.iter().zip(&signs).map(|(g, s)| g * s).collect())],
    )
}

pub fn sum(a: &Tensor) -> Tensor {
    let n = a.numel();
    Tensor::from_op(
        Vec::new(),
        vec![a.data().iter().sum()],
        "sum",
        &[a],
        move |g, _| vec![Some(vec![g[0]; n])],
    )
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    let inv = 1.0 / n as f64;
    Tensor::from_op(
        Vec::new(),
        vec![a.data().iter().sum::<f64>() * inv],
        "mean",
        &[a],
        move |g, _| vec![Some(vec![g[0] * inv; n])],
    )
}

/// Mean absolute difference over all elements.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape("l1_loss", pred, target)?;
    let diff: Vec<f64> = zip_map(pred, target, |p, t| p - t);
    trace_kinks(&diff);
    let n = diff.len();
    let inv = 1.0 / n as f64;
    let value = diff.iter().map(|d| d.abs()).sum::<f64>() * inv;
    let signs: Vec<f64> = diff.iter().map(|d| sign(*d)).collect();
    Ok(Tensor::from_op(
        Vec::new(),
        vec![value],
        "l1_loss",
        &[pred, target],
        move |g, needs| {
            let s = g[0] * inv;
            let gp = needs[0].then(|| signs.iter().map(|v| v * s).collect());
            let gt = needs[1].then(|| signs.iter().map(|v| -v * s).collect());
            vec![gp, gt]
        },
    ))
}

/// Stacks `N × Ci × H × W` tensors along the channel axis, in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
    let [n, _, h, w] = first.dims4("concat_channels")?;
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let [tn, tc, th, tw] = t.dims4("concat_channels")?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", first.shape(), t.shape()),
            ));
        }
        channels.push(tc);
    }
    if inputs.len() == 1 {
        return Ok((*first).clone());
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for (t, c) in inputs.iter().zip(&channels) {
            out.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    Ok(Tensor::from_op(
        vec![n, total, h, w],
        out,
        "concat_channels",
        inputs,
        move |g, needs| {
            let mut grads: Vec<Option<Vec<f64>>> = needs
                .iter()
                .zip(&channels)
                .map(|(need, c)| need.then(|| Vec::with_capacity(n * c * plane)))
                .collect();
            for b in 0..n {
                let mut offset = b * total * plane;
                for (grad, c) in grads.iter_mut().zip(&channels) {
                    let len = c * plane;
                    if let Some(grad) = grad {
                        grad.extend_from_slice(&g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            grads
        },
    ))
}

/// Channels `start..start + len` of an `N × C × H × W` tensor.
pub fn slice_channels(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let [n, c, h, w] = a.dims4("slice_channels")?;
    if len == 0 || start + len > c {
        return Err(Error::shape(
            "slice_channels",
            format!("channels {start}..{} out of 0..{c}", start + len),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        let base = (b * c + start) * plane;
        out.extend_from_slice(&a.data()[base..base + len * plane]);
    }
    Ok(Tensor::from_op(
        vec![n, len, h, w],
        out,
        "slice_channels",
        &[a],
        move |g, _| {
            let mut grad = vec![0.0; n * c * plane];
            for b in 0..n {
                let base = (b * c + start) * plane;
                grad[base..base + len * plane]
                    .copy_from_slice(&g[b * len * plane..(b + 1) * len * plane]);
            }
            vec![Some(grad)]
        },
    ))
}

/// Per-channel mean over the batch and spatial axes: `N×C×H×W → C`.
pub fn channel_mean(a: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = a.dims4("channel_mean")?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut out = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let base = (b * c + ch) * plane;
            *acc += a.data()[base..base + plane].iter().sum::<f64>();
        }
    }
    out.iter_mut().for_each(|v| *v /= count);
    Ok(Tensor::from_op(vec![c], out, "channel_mean", &[a], move |g, _| {
        let mut grad = vec![0.0; n * c * plane];
        for b in 0..n {
            for (ch, gc) in g.iter().enumerate() {
                let base = (b * c + ch) * plane;
                grad[base..base + plane].fill(gc / count);
            }
        }
        vec![Some(grad)]
    }))
}

fn check_channel_vector(op: &'static str, a: &Tensor, v: &Tensor) -> Result<[usize; 4]> {
    let dims = a.dims4(op)?;
    if v.shape() != [dims[1]] {
        return Err(Error::shape(
            op,
            format!("per-channel vector {:?} does not match {:?}", v.shape(), a.shape()),
        ));
    }
    Ok(dims)
}

/// `a[n, c, :, :] + v[c]`.
pub fn add_channel(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = check_channel_vector("add_channel", a, v)?;
    let plane = h * w;
    let mut out = a.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            out[base..base + plane].iter_mut().for_each(|x| *x += v.data()[ch]);
        }
    }
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        "add_channel",
        &[a, v],
        move |g, needs| {
            let gv = needs[1].then(|| {
                let mut gv = vec![0.0; c];
                for b in 0..n {
                    for (ch, acc) in gv.iter_mut().enumerate() {
                        let base = (b * c + ch) * plane;
                        *acc += g[base..base + plane].iter().sum::<f64>();
                    }
                }
                gv
            });
            vec![needs[0].then(|| g.to_vec()), gv]
        },
    ))
}

/// `a[n, c, :, :] * v[c]`.
pub fn mul_channel(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = check_channel_vector("mul_channel", a, v)?;
    let plane = h * w;
    let mut out = a.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            out[base..base + plane].iter_mut().for_each(|x| *x *= v.data()[ch]);
        }
    }
    let (ac, vc) = (a.clone(), v.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        "mul_channel",
        &[a, v],
        move |g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = g.to_vec();
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        ga[base..base + plane]
                            .iter_mut()
                            .for_each(|x| *x *= vc.data()[ch]);
                    }
                }
                ga
            });
            let gv = needs[1].then(|| {
                let mut gv = vec![0.0; c];
                for b in 0..n {
                    for (ch, acc) in gv.iter_mut().enumerate() {
                        let base = (b * c + ch) * plane;
                        *acc += g[base..base + plane]
                            .iter()
                            .zip(&ac.data()[base..base + plane])
                            .map(|(g, x)| g * x)
                            .sum::<f64>();
                    }
                }
                gv
            });
            vec![ga, gv]
        },
    ))
}
