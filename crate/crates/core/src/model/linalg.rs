//! Row-major dense kernels sized for the small encoders trained on CPU.

/// `out = a · b` with `a: m×k`, `b: k×n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · w + bias` (bias broadcast over rows).
pub fn affine(a: &[f64], w: &[f64], bias: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = matmul(a, w, m, k, n);
    for row in out.chunks_exact_mut(n) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

/// `acc += aᵀ · d` with `a: m×k`, `d: m×n`, `acc: k×n`.
pub fn matmul_tn_acc(a: &[f64], d: &[f64], m: usize, k: usize, n: usize, acc: &mut [f64]) {
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &dv) in acc[p * n..(p + 1) * n].iter_mut().zip(drow) {
                *o += av * dv;
            }
        }
    }
}

/// `d · wᵀ` with `d: m×n`, `w: k×n`, result `m×k`.
pub fn matmul_nt(d: &[f64], w: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(drow, &w[p * n..(p + 1) * n]);
        }
    }
    out
}

/// Column sums of an `m×n` matrix added into `acc`.
pub fn col_sum_acc(d: &[f64], n: usize, acc: &mut [f64]) {
    for row in d.chunks_exact(n) {
        for (o, &v) in acc.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Debug, Clone, Default)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], n: usize) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / n;
    let mut out = vec![0.0; x.len()];
    let mut cache = LayerNormCache {
        xhat: vec![0.0; x.len()],
        rstd: vec![0.0; rows],
    };
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        cache.rstd[r] = rstd;
        for c in 0..n {
            let xh = (row[c] - mean) * rstd;
            cache.xhat[r * n + c] = xh;
            out[r * n + c] = xh * gain[c] + bias[c];
        }
    }
    (out, cache)
}

/// Returns dx and accumulates gain/bias gradients.
pub fn layer_norm_backward(
    dy: &[f64],
    gain: &[f64],
    cache: &LayerNormCache,
    n: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / n;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; n];
    for r in 0..rows {
        let dyr = &dy[r * n..(r + 1) * n];
        let xh = &cache.xhat[r * n..(r + 1) * n];
        if dyr.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..n {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d /= n as f64;
        mean_dx /= n as f64;
        let rstd = cache.rstd[r];
        for c in 0..n {
            dx[r * n + c] = rstd * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

/// In-place numerically stable softmax over one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
