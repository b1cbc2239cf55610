//! Layer primitives with hand-written backward passes, and the stage blocks
//! built from them.

use crate::numeric::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Rng, Tensor};

/// Fully connected map `y = x·w + b` with `w: in×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn new(w: Tensor, b: Tensor) -> Self {
        Self { w, b }
    }

    /// Gaussian weights with the given standard deviation, zero biases.
    pub fn gaussian(n_in: usize, n_out: usize, std: f64, rng: &mut Rng) -> Self {
        let w = Tensor::from_parts(vec![n_in, n_out], (0..n_in * n_out).map(|_| std * rng.normal()).collect());
        Self {
            w,
            b: Tensor::zeros(&[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, d_in, d_out) = (x.rows(), self.n_in(), self.n_out());
        debug_assert_eq!(x.cols(), d_in);
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(self.b.data());
        }
        gemm_acc(n, d_in, d_out, x.data(), self.w.data(), &mut out);
        Tensor::from_parts(vec![n, d_out], out)
    }

    /// Returns `(dx, dw, db)`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let (n, d_in, d_out) = (x.rows(), self.n_in(), self.n_out());
        let mut dw = vec![0.0; d_in * d_out];
        gemm_tn_acc(d_in, n, d_out, x.data(), dy.data(), &mut dw);
        let mut db = vec![0.0; d_out];
        for i in 0..n {
            for (acc, g) in db.iter_mut().zip(dy.row(i)) {
                *acc += g;
            }
        }
        let mut dx = vec![0.0; n * d_in];
        gemm_nt_acc(n, d_out, d_in, dy.data(), self.w.data(), &mut dx);
        (
            Tensor::from_parts(vec![n, d_in], dx),
            Tensor::from_parts(vec![d_in, d_out], dw),
            Tensor::from_parts(vec![d_out], db),
        )
    }
}

/// Stride-1 "same" convolution with `w: out×in×k×k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub w: Tensor,
    pub b: Tensor,
}

impl Conv2d {
    pub fn he(c_in: usize, c_out: usize, k: usize, rng: &mut Rng) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = c_out * c_in * k * k;
        Self {
            w: Tensor::from_parts(vec![c_out, c_in, k, k], (0..n).map(|_| std * rng.normal()).collect()),
            b: Tensor::zeros(&[c_out]),
        }
    }

    pub fn c_out(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn k(&self) -> usize {
        self.w.shape()[2]
    }

    fn im2col(&self, img: &[f64], h: usize, w: usize, col: &mut [f64]) {
        let k = self.k();
        let pad = k / 2;
        let hw = h * w;
        for c in 0..self.c_in() {
            let plane = &img[c * hw..(c + 1) * hw];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ki as isize - pad as isize;
                        for x in 0..w {
                            let sx = x as isize + kj as isize - pad as isize;
                            dst[y * w + x] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                plane[sy as usize * w + sx as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], h: usize, w: usize, img: &mut [f64]) {
        let k = self.k();
        let pad = k / 2;
        let hw = h * w;
        for c in 0..self.c_in() {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &col[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ki as isize - pad as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + kj as isize - pad as isize;
                            if sx >= 0 && sx < w as isize {
                                img[c * hw + sy as usize * w + sx as usize] += src[y * w + x];
                            }
                        }
                    }
                }
            }
        }
    }

    /// `x: [n, c_in, h, w]` → `[n, c_out, h, w]`.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (co, ci, k) = (self.c_out(), self.c_in(), self.k());
        let (hw, ckk) = (h * w, ci * k * k);
        let mut col = vec![0.0; ckk * hw];
        let mut out = vec![0.0; n * co * hw];
        for i in 0..n {
            self.im2col(&x.data()[i * ci * hw..(i + 1) * ci * hw], h, w, &mut col);
            let o = &mut out[i * co * hw..(i + 1) * co * hw];
            for (c, chunk) in o.chunks_mut(hw).enumerate() {
                chunk.fill(self.b.data()[c]);
            }
            gemm_acc(co, ckk, hw, self.w.data(), &col, o);
        }
        Tensor::from_parts(vec![n, co, h, w], out)
    }

    /// Returns `(dx, dw, db)`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (co, ci, k) = (self.c_out(), self.c_in(), self.k());
        let (hw, ckk) = (h * w, ci * k * k);
        let mut col = vec![0.0; ckk * hw];
        let mut dcol = vec![0.0; ckk * hw];
        let mut dw = vec![0.0; co * ckk];
        let mut db = vec![0.0; co];
        let mut dx = vec![0.0; n * ci * hw];
        for i in 0..n {
            self.im2col(&x.data()[i * ci * hw..(i + 1) * ci * hw], h, w, &mut col);
            let g = &dy.data()[i * co * hw..(i + 1) * co * hw];
            gemm_nt_acc(co, hw, ckk, g, &col, &mut dw);
            for (c, chunk) in g.chunks(hw).enumerate() {
                db[c] += chunk.iter().sum::<f64>();
            }
            dcol.fill(0.0);
            gemm_tn_acc(ckk, co, hw, self.w.data(), g, &mut dcol);
            self.col2im(&dcol, h, w, &mut dx[i * ci * hw..(i + 1) * ci * hw]);
        }
        (
            Tensor::from_parts(x.shape().to_vec(), dx),
            Tensor::from_parts(self.w.shape().to_vec(), dw),
            Tensor::from_parts(vec![co], db),
        )
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(&o, &g)| if o > 0.0 { g } else { 0.0 }).collect();
    Tensor::from_parts(dy.shape().to_vec(), data)
}

/// 2×2 stride-2 max pool. Returns the output and the flat argmax per output cell.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let d = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..ho {
            for xx in 0..wo {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    (Tensor::from_parts(vec![n, c, ho, wo], out), arg)
}

pub fn maxpool2_backward(input_shape: &[usize], arg: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in arg.iter().zip(dy.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// One body stage.
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Dense(Dense),
    Conv { c1: Conv2d, c2: Conv2d },
    Residual { c1: Conv2d, c2: Conv2d, proj: Option<Conv2d> },
}

pub(crate) enum StageCache {
    Dense { x: Tensor, y: Tensor },
    Conv { x: Tensor, a1: Tensor, a2: Tensor, arg: Vec<usize> },
}

impl Stage {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Stage::Dense(_) => &["w", "b"],
            Stage::Conv { .. } | Stage::Residual { proj: None, .. } => &["c1.w", "c1.b", "c2.w", "c2.b"],
            Stage::Residual { proj: Some(_), .. } => &["c1.w", "c1.b", "c2.w", "c2.b", "proj.w", "proj.b"],
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Stage::Dense(d) => vec![&d.w, &d.b],
            Stage::Conv { c1, c2 } | Stage::Residual { c1, c2, proj: None } => vec![&c1.w, &c1.b, &c2.w, &c2.b],
            Stage::Residual { c1, c2, proj: Some(p) } => vec![&c1.w, &c1.b, &c2.w, &c2.b, &p.w, &p.b],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Stage::Dense(d) => vec![&mut d.w, &mut d.b],
            Stage::Conv { c1, c2 } | Stage::Residual { c1, c2, proj: None } => {
                vec![&mut c1.w, &mut c1.b, &mut c2.w, &mut c2.b]
            }
            Stage::Residual { c1, c2, proj: Some(p) } => {
                vec![&mut c1.w, &mut c1.b, &mut c2.w, &mut c2.b, &mut p.w, &mut p.b]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_cached(x).0
    }

    pub(crate) fn forward_cached(&self, x: &Tensor) -> (Tensor, StageCache) {
        match self {
            Stage::Dense(d) => {
                let y = relu(&d.forward(x));
                (y.clone(), StageCache::Dense { x: x.clone(), y })
            }
            Stage::Conv { c1, c2 } => {
                let a1 = relu(&c1.forward(x));
                let a2 = relu(&c2.forward(&a1));
                let (y, arg) = maxpool2(&a2);
                (y, StageCache::Conv { x: x.clone(), a1, a2, arg })
            }
            Stage::Residual { c1, c2, proj } => {
                let a1 = relu(&c1.forward(x));
                let mut z2 = c2.forward(&a1);
                let shortcut = match proj {
                    Some(p) => p.forward(x),
                    None => x.clone(),
                };
                z2.axpy(1.0, &shortcut).expect("shortcut shape matches");
                let a2 = relu(&z2);
                let (y, arg) = maxpool2(&a2);
                (y, StageCache::Conv { x: x.clone(), a1, a2, arg })
            }
        }
    }

    /// Returns the input gradient and parameter gradients ordered as [`Stage::params`].
    pub(crate) fn backward(&self, cache: &StageCache, dy: &Tensor) -> (Tensor, Vec<Tensor>) {
        match (self, cache) {
            (Stage::Dense(d), StageCache::Dense { x, y }) => {
                let dz = relu_backward(y, dy);
                let (dx, dw, db) = d.backward(x, &dz);
                (dx, vec![dw, db])
            }
            (Stage::Conv { c1, c2 }, StageCache::Conv { x, a1, a2, arg }) => {
                let da2 = maxpool2_backward(a2.shape(), arg, dy);
                let dz2 = relu_backward(a2, &da2);
                let (da1, dw2, db2) = c2.backward(a1, &dz2);
                let dz1 = relu_backward(a1, &da1);
                let (dx, dw1, db1) = c1.backward(x, &dz1);
                (dx, vec![dw1, db1, dw2, db2])
            }
            (Stage::Residual { c1, c2, proj }, StageCache::Conv { x, a1, a2, arg }) => {
                let da2 = maxpool2_backward(a2.shape(), arg, dy);
                let dz2 = relu_backward(a2, &da2);
                let (da1, dw2, db2) = c2.backward(a1, &dz2);
                let dz1 = relu_backward(a1, &da1);
                let (mut dx, dw1, db1) = c1.backward(x, &dz1);
                let mut grads = vec![dw1, db1, dw2, db2];
                match proj {
                    Some(p) => {
                        let (dxs, dwp, dbp) = p.backward(x, &dz2);
                        dx.axpy(1.0, &dxs).expect("same shape");
                        grads.push(dwp);
                        grads.push(dbp);
                    }
                    None => dx.axpy(1.0, &dz2).expect("same shape"),
                }
                (dx, grads)
            }
            _ => unreachable!("stage cache kind always matches the stage that produced it"),
        }
    }
}
