//! Layer primitives with explicit forward and backward passes over a single
//! sample. Parameters live in a [`ParamStore`]; layers hold their ids.

use rand::Rng;

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{gemm, MatRef, Scalar, Tensor};

/// Square-kernel convolution with zero padding `k / 2`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        let weight = store.add_normal(format!("{name}.weight"), vec![out_c, in_c, k, k], fan_in, 2f64.sqrt(), rng);
        let bias = store.add_zeros(format!("{name}.bias"), vec![out_c]);
        Conv2d { in_c, out_c, k, stride, pad: k / 2, weight, bias }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn im2col<T: Scalar>(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = oh * ow;
        let mut cols = vec![T::zero(); self.in_c * k * k * p];
        for c in 0..self.in_c {
            let plane = &x.data[c * x.h * x.w..(c + 1) * x.h * x.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..][..x.w];
                        let dst = &mut row[oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Tensor<T> {
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = oh * ow;
        let mut dx = Tensor::zeros(self.in_c, h, w);
        for c in 0..self.in_c {
            let plane = &mut dx.data[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..][..w];
                        for (ox, &v) in row[oy * ow..][..ow].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_dims(x.h, x.w);
        let p = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let bias = store.get(self.bias);
        let mut out = Tensor::zeros(self.out_c, oh, ow);
        for (o, plane) in out.data.chunks_mut(p).enumerate() {
            plane.fill(bias[o]);
        }
        let owned;
        let cols: &[T] = if self.is_pointwise() {
            &x.data
        } else {
            owned = self.im2col(x, oh, ow);
            &owned
        };
        gemm(self.out_c, kk, p, MatRef::rows(store.get(self.weight), kk), MatRef::rows(cols, p), T::one(), &mut out.data);
        out
    }

    /// Accumulate parameter gradients; return the input gradient if asked.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (oh, ow) = (dy.h, dy.w);
        let p = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let owned;
        let cols: &[T] = if self.is_pointwise() {
            &x.data
        } else {
            owned = self.im2col(x, oh, ow);
            &owned
        };
        gemm(
            self.out_c,
            p,
            kk,
            MatRef::rows(&dy.data, p),
            MatRef::transposed(cols, p),
            T::one(),
            grads.get_mut(self.weight),
        );
        let db = grads.get_mut(self.bias);
        for (o, plane) in dy.data.chunks(p).enumerate() {
            db[o] += plane.iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * p];
        gemm(kk, self.out_c, p, MatRef::transposed(store.get(self.weight), kk), MatRef::rows(&dy.data, p), T::zero(), &mut dcols);
        if self.is_pointwise() {
            Some(Tensor::from_vec(self.in_c, x.h, x.w, dcols))
        } else {
            Some(self.col2im(&dcols, x.h, x.w, oh, ow))
        }
    }
}

/// Per-channel (depthwise) convolution, stride 1, zero padding `k / 2`,
/// over the channel range `[start, start + channels)` of its input.
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub start: usize,
    pub channels: usize,
    pub k: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DepthwiseConv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        start: usize,
        channels: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), vec![channels, 1, k, k], k * k, 2f64.sqrt(), rng);
        let bias = store.add_zeros(format!("{name}.bias"), vec![channels]);
        DepthwiseConv2d { start, channels, k, weight, bias }
    }

    /// For kernel offset `d = kx - pad`, output columns whose source column
    /// lies inside the image.
    fn valid_range(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).clamp(0, len as isize) as usize;
        (lo, hi.max(lo))
    }

    /// Writes into the matching channels of `out`.
    pub fn forward_into<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, out: &mut Tensor<T>) {
        let (h, w, k) = (x.h, x.w, self.k);
        let pad = (k / 2) as isize;
        let wts = store.get(self.weight);
        let bias = store.get(self.bias);
        for ci in 0..self.channels {
            let c = self.start + ci;
            let src = &x.data[c * h * w..(c + 1) * h * w];
            let dst = &mut out.data[c * h * w..(c + 1) * h * w];
            dst.fill(bias[ci]);
            for ky in 0..k {
                let dy_off = ky as isize - pad;
                let (y_lo, y_hi) = Self::valid_range(h, dy_off);
                for kx in 0..k {
                    let dx_off = kx as isize - pad;
                    let (x_lo, x_hi) = Self::valid_range(w, dx_off);
                    let wv = wts[(ci * k + ky) * k + kx];
                    for oy in y_lo..y_hi {
                        let iy = (oy as isize + dy_off) as usize;
                        let s = &src[iy * w..][..w];
                        let d = &mut dst[oy * w..][..w];
                        for ox in x_lo..x_hi {
                            d[ox] += wv * s[(ox as isize + dx_off) as usize];
                        }
                    }
                }
            }
        }
    }

    /// Accumulates into the matching channels of `dx`.
    pub fn backward_into<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
        dx: &mut Tensor<T>,
    ) {
        let (h, w, k) = (x.h, x.w, self.k);
        let pad = (k / 2) as isize;
        let wts = store.get(self.weight);
        for ci in 0..self.channels {
            let c = self.start + ci;
            let src = &x.data[c * h * w..(c + 1) * h * w];
            let g = &dy.data[c * h * w..(c + 1) * h * w];
            let dsrc = &mut dx.data[c * h * w..(c + 1) * h * w];
            grads.get_mut(self.bias)[ci] += g.iter().copied().sum::<T>();
            for ky in 0..k {
                let dy_off = ky as isize - pad;
                let (y_lo, y_hi) = Self::valid_range(h, dy_off);
                for kx in 0..k {
                    let dx_off = kx as isize - pad;
                    let (x_lo, x_hi) = Self::valid_range(w, dx_off);
                    let wv = wts[(ci * k + ky) * k + kx];
                    let mut gw = T::zero();
                    for oy in y_lo..y_hi {
                        let iy = (oy as isize + dy_off) as usize;
                        let grow = &g[oy * w..][..w];
                        let srow = &src[iy * w..][..w];
                        let drow = &mut dsrc[iy * w..][..w];
                        for ox in x_lo..x_hi {
                            let ix = (ox as isize + dx_off) as usize;
                            gw += grow[ox] * srow[ix];
                            drow[ix] += wv * grow[ox];
                        }
                    }
                    grads.get_mut(self.weight)[(ci * k + ky) * k + kx] += gw;
                }
            }
        }
    }
}

/// Fully connected layer `y = W·x + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_f: usize,
        out_f: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), vec![out_f, in_f], in_f, 1.0, rng);
        let bias = store.add_zeros(format!("{name}.bias"), vec![out_f]);
        Linear { in_f, out_f, weight, bias }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.in_f, "linear input size");
        let w = store.get(self.weight);
        store
            .get(self.bias)
            .iter()
            .enumerate()
            .map(|(o, &b)| b + w[o * self.in_f..][..self.in_f].iter().zip(x).map(|(&a, &v)| a * v).sum::<T>())
            .collect()
    }

    pub fn backward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], dy: &[T], grads: &mut Grads<T>) -> Vec<T> {
        let w = store.get(self.weight);
        let mut dx = vec![T::zero(); self.in_f];
        {
            let gw = grads.get_mut(self.weight);
            for (o, &g) in dy.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                let row = &mut gw[o * self.in_f..][..self.in_f];
                row.iter_mut().zip(x).for_each(|(r, &v)| *r += g * v);
                dx.iter_mut().zip(&w[o * self.in_f..][..self.in_f]).for_each(|(d, &a)| *d += g * a);
            }
        }
        grads.get_mut(self.bias).iter_mut().zip(dy).for_each(|(b, &g)| *b += g);
        dx
    }
}

/// Global depthwise convolution: one full-plane kernel per channel, giving a
/// learned spatially weighted pooling `g_c = sum_p w[c, p] x[c, p] + b_c`.
#[derive(Debug, Clone)]
pub struct GlobalDepthwise {
    pub channels: usize,
    pub plane: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl GlobalDepthwise {
    /// Weights start at uniform averaging `1 / plane` with He-scaled noise
    /// of relative size `jitter`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        plane: usize,
        jitter: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), vec![channels, plane], plane, jitter, rng);
        let mean = T::of(1.0 / plane as f64);
        store.get_mut(weight).iter_mut().for_each(|w| *w = *w / T::of((plane as f64).sqrt()) + mean);
        let bias = store.add_zeros(format!("{name}.bias"), vec![channels]);
        GlobalDepthwise { channels, plane, weight, bias }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Vec<T> {
        assert_eq!((x.c, x.plane_len()), (self.channels, self.plane), "global depthwise input shape");
        let w = store.get(self.weight);
        store
            .get(self.bias)
            .iter()
            .enumerate()
            .map(|(c, &b)| b + x.channels(c, 1).iter().zip(&w[c * self.plane..][..self.plane]).map(|(&v, &k)| v * k).sum::<T>())
            .collect()
    }

    pub fn backward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, dy: &[T], grads: &mut Grads<T>) -> Tensor<T> {
        let w = store.get(self.weight);
        let mut dx = Tensor::zeros(x.c, x.h, x.w);
        {
            let gw = grads.get_mut(self.weight);
            for (c, &g) in dy.iter().enumerate() {
                let xs = x.channels(c, 1);
                let range = c * self.plane..(c + 1) * self.plane;
                gw[range.clone()].iter_mut().zip(xs).for_each(|(a, &v)| *a += g * v);
                dx.data[range.clone()].iter_mut().zip(&w[range]).for_each(|(d, &k)| *d = g * k);
            }
        }
        grads.get_mut(self.bias).iter_mut().zip(dy).for_each(|(b, &g)| *b += g);
        dx
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::from_vec(x.c, x.h, x.w, x.data.iter().map(|&v| v.max(T::zero())).collect())
}

/// Gradient through a ReLU given its pre-activation input.
pub fn relu_backward<T: Scalar>(pre: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = pre.data.iter().zip(&dy.data).map(|(&p, &g)| if p > T::zero() { g } else { T::zero() }).collect();
    Tensor::from_vec(pre.c, pre.h, pre.w, data)
}

/// 2×2 average pooling with stride 2 (even spatial sizes only).
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "avg_pool2 needs even dims, got {}x{}", x.h, x.w);
    let (oh, ow) = (x.h / 2, x.w / 2);
    let q = T::of(0.25);
    let mut out = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = &x.data[c * x.h * x.w..];
        let dst = &mut out.data[c * oh * ow..];
        for oy in 0..oh {
            let r0 = &src[2 * oy * x.w..][..x.w];
            let r1 = &src[(2 * oy + 1) * x.w..][..x.w];
            for ox in 0..ow {
                dst[oy * ow + ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * q;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let q = T::of(0.25);
    let mut dx = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for y in 0..h {
            for x in 0..w {
                dx.data[(c * h + y) * w + x] = dy.data[(c * dy.h + y / 2) * dy.w + x / 2] * q;
            }
        }
    }
    dx
}

/// Channel permutation `out[i] = in[perm[i]]`.
pub fn permute_channels<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let p = x.plane_len();
    let mut data = Vec::with_capacity(x.data.len());
    for &src in perm {
        data.extend_from_slice(&x.data[src * p..(src + 1) * p]);
    }
    Tensor::from_vec(x.c, x.h, x.w, data)
}

pub fn permute_channels_backward<T: Scalar>(dy: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let p = dy.plane_len();
    let mut dx = Tensor::zeros(dy.c, dy.h, dy.w);
    for (i, &src) in perm.iter().enumerate() {
        dx.data[src * p..(src + 1) * p].copy_from_slice(&dy.data[i * p..(i + 1) * p]);
    }
    dx
}

/// Round-robin interleave of contiguous channel groups, the generalisation
/// of channel shuffle to unequal group sizes.
pub fn shuffle_permutation(group_sizes: &[usize]) -> Vec<usize> {
    let starts: Vec<usize> = group_sizes.iter().scan(0, |acc, &n| {
        let s = *acc;
        *acc += n;
        Some(s)
    }).collect();
    let longest = group_sizes.iter().copied().max().unwrap_or(0);
    let mut perm = Vec::with_capacity(group_sizes.iter().sum());
    for i in 0..longest {
        for (g, &n) in group_sizes.iter().enumerate() {
            if i < n {
                perm.push(starts[g] + i);
            }
        }
    }
    perm
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct convolution straight from the definition.
    fn naive_conv(store: &ParamStore<f64>, conv: &Conv2d, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.out_dims(x.h, x.w);
        let w = store.get(conv.weight);
        let b = store.get(conv.bias);
        let mut out = Tensor::zeros(conv.out_c, oh, ow);
        for o in 0..conv.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..conv.in_c {
                        for ky in 0..conv.k {
                            for kx in 0..conv.k {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += w[((o * conv.in_c + c) * conv.k + ky) * conv.k + kx]
                                        * x.data[(c * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s) in [(3, 1), (3, 2), (1, 1), (5, 1)] {
            let mut store = ParamStore::<f64>::default();
            let conv = Conv2d::new(&mut store, "c", 3, 4, k, s, &mut rng);
            store.get_mut(conv.bias).iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            let x = random_tensor(3, 8, 6, &mut rng);
            let got = conv.forward(&store, &x);
            let want = naive_conv(&store, &conv, &x);
            assert_eq!((got.c, got.h, got.w), (want.c, want.h, want.w));
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_input_gradient_is_adjoint() {
        // <conv(x) - b, dy> = <x, dx> for the linear part.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::default();
        let conv = Conv2d::new(&mut store, "c", 2, 3, 3, 2, &mut rng);
        let x = random_tensor(2, 7, 9, &mut rng);
        let y = conv.forward(&store, &x);
        let dy = random_tensor(y.c, y.h, y.w, &mut rng);
        let mut g = store.zero_grads();
        let dx = conv.backward(&store, &x, &dy, &mut g, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn depthwise_matches_grouped_direct_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::default();
        let dw = DepthwiseConv2d::new(&mut store, "d", 1, 2, 5, &mut rng);
        let x = random_tensor(4, 6, 7, &mut rng);
        let mut out = Tensor::zeros(4, 6, 7);
        dw.forward_into(&store, &x, &mut out);
        let w = store.get(dw.weight);
        for ci in 0..2 {
            let c = 1 + ci;
            for oy in 0..6 {
                for ox in 0..7 {
                    let mut acc = 0.0;
                    for ky in 0..5 {
                        for kx in 0..5 {
                            let iy = oy as isize + ky as isize - 2;
                            let ix = ox as isize + kx as isize - 2;
                            if (0..6).contains(&iy) && (0..7).contains(&ix) {
                                acc += w[(ci * 5 + ky) * 5 + kx] * x.data[(c * 6 + iy as usize) * 7 + ix as usize];
                            }
                        }
                    }
                    assert!((out.data[(c * 6 + oy) * 7 + ox] - acc).abs() < 1e-12);
                }
            }
        }
        // Channels outside the range are untouched.
        assert!(out.channels(0, 1).iter().all(|&v| v == 0.0));
        assert!(out.channels(3, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shuffle_interleaves_groups() {
        assert_eq!(shuffle_permutation(&[2, 2, 2]), vec![0, 2, 4, 1, 3, 5]);
        assert_eq!(shuffle_permutation(&[3, 2, 1]), vec![0, 3, 5, 1, 4, 2]);
        let x = Tensor::<f64>::from_vec(3, 1, 1, vec![1.0, 2.0, 3.0]);
        let perm = shuffle_permutation(&[2, 1]);
        let y = permute_channels(&x, &perm);
        assert_eq!(y.data, vec![1.0, 3.0, 2.0]);
        assert_eq!(permute_channels_backward(&y, &perm), x);
    }

    #[test]
    fn pooling_backward_spreads_evenly() {
        let x = Tensor::<f64>::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 6.0]);
        assert_eq!(avg_pool2(&x).data, vec![3.0]);
        let dx = avg_pool2_backward(&Tensor::from_vec(1, 1, 1, vec![4.0]));
        assert_eq!(dx.data, vec![1.0; 4]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
