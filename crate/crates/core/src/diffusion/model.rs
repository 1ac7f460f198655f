//! Noise-prediction network with hand-written reverse-mode gradients.
//!
//! Scene encoder: per-point `Linear -> SiLU -> Linear`, max-pooled per sample
//! and point class.
//! Conditioning: `[scene code, sinusoidal time embedding] -> Linear -> SiLU`.
//! Trunk: per-step token embedding plus sinusoidal position, then residual
//! blocks of `depthwise temporal conv -> (+ global mean, + conditioning) ->
//! Linear -> SiLU -> Linear`, and a linear head back to `d`.
//!
//! All tensors are batched by stacking samples along rows: tokens are
//! `(B*H) x width`, scene points `(B*M) x features`.

use std::fmt::Debug;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::PointClass;

pub trait Real: Float + NumAssign + LinalgScalar + ScalarOperand + FromPrimitive + Send + Sync + Debug + 'static {}
impl<T: Float + NumAssign + LinalgScalar + ScalarOperand + FromPrimitive + Send + Sync + Debug + 'static> Real for T {}

#[inline]
fn cast<A: Real>(v: f64) -> A {
    A::from_f64(v).expect("representable")
}

/// Per-point input features: position plus one-hot class.
pub const POINT_FEATURES: usize = 2 + PointClass::COUNT;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub dof: usize,
    pub horizon: usize,
    pub encoder_hidden: usize,
    pub scene_code: usize,
    pub time_dim: usize,
    pub width: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub kernel: usize,
}

impl Arch {
    pub fn new(dof: usize, horizon: usize) -> Self {
        Self {
            dof,
            horizon,
            encoder_hidden: 64,
            scene_code: 64,
            time_dim: 128,
            width: 128,
            hidden: 256,
            blocks: 4,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dof > 0
            && self.horizon >= 2
            && self.encoder_hidden > 0
            && self.scene_code > 0
            && self.time_dim > 0
            && self.time_dim % 2 == 0
            && self.width > 0
            && self.width % 2 == 0
            && self.hidden > 0
            && self.kernel % 2 == 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid network architecture".into()))
        }
    }

    /// Width of the pooled scene code: one `scene_code` block per point class.
    pub fn pooled_dim(&self) -> usize {
        self.scene_code * PointClass::COUNT
    }

    fn cond_dim(&self) -> usize {
        self.pooled_dim() + self.time_dim
    }
}

/// Location of one parameter matrix inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn view<'a, A>(&self, data: &'a [A]) -> ArrayView2<'a, A> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.range()]).expect("slot in bounds")
    }

    pub fn view_mut<'a, A>(&self, data: &'a mut [A]) -> ArrayViewMut2<'a, A> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.range()]).expect("slot in bounds")
    }
}

#[derive(Debug, Clone)]
struct BlockSlots {
    conv: Slot,
    w1: Slot,
    b1: Slot,
    wg: Slot,
    wc: Slot,
    w2: Slot,
    b2: Slot,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Parameter layout for an architecture.
#[derive(Debug, Clone)]
pub struct Layout {
    pub arch: Arch,
    enc_w1: Slot,
    enc_b1: Slot,
    enc_w2: Slot,
    enc_b2: Slot,
    cond_w: Slot,
    cond_b: Slot,
    tok_w: Slot,
    tok_b: Slot,
    blocks: Vec<BlockSlots>,
    head_w: Slot,
    head_b: Slot,
    specs: Vec<(ParamSpec, Slot)>,
    total: usize,
}

impl Layout {
    pub fn new(arch: &Arch) -> Self {
        let mut specs = Vec::new();
        let mut total = 0;
        let mut add = |name: String, rows: usize, cols: usize| {
            let slot = Slot {
                offset: total,
                rows,
                cols,
            };
            total += rows * cols;
            let shape = if rows == 1 { vec![cols] } else { vec![rows, cols] };
            specs.push((ParamSpec { name, shape }, slot));
            slot
        };
        let a = arch;
        let enc_w1 = add("encoder.w1".into(), POINT_FEATURES, a.encoder_hidden);
        let enc_b1 = add("encoder.b1".into(), 1, a.encoder_hidden);
        let enc_w2 = add("encoder.w2".into(), a.encoder_hidden, a.scene_code);
        let enc_b2 = add("encoder.b2".into(), 1, a.scene_code);
        let cond_w = add("cond.w".into(), a.cond_dim(), a.hidden);
        let cond_b = add("cond.b".into(), 1, a.hidden);
        let tok_w = add("token.w".into(), a.dof, a.width);
        let tok_b = add("token.b".into(), 1, a.width);
        let blocks = (0..a.blocks)
            .map(|k| BlockSlots {
                conv: add(format!("block{k}.conv"), a.kernel, a.width),
                w1: add(format!("block{k}.w1"), a.width, a.hidden),
                b1: add(format!("block{k}.b1"), 1, a.hidden),
                wg: add(format!("block{k}.wg"), a.width, a.hidden),
                wc: add(format!("block{k}.wc"), a.hidden, a.hidden),
                w2: add(format!("block{k}.w2"), a.hidden, a.width),
                b2: add(format!("block{k}.b2"), 1, a.width),
            })
            .collect();
        let head_w = add("head.w".into(), a.width, a.dof);
        let head_b = add("head.b".into(), 1, a.dof);
        Self {
            arch: arch.clone(),
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            cond_w,
            cond_b,
            tok_w,
            tok_b,
            blocks,
            head_w,
            head_b,
            specs,
            total,
        }
    }

    pub fn num_params(&self) -> usize {
        self.total
    }

    /// Named parameter arrays in storage order.
    pub fn specs(&self) -> impl Iterator<Item = (&ParamSpec, Slot)> {
        self.specs.iter().map(|(p, s)| (p, *s))
    }

    pub fn slot(&self, name: &str) -> Option<Slot> {
        self.specs.iter().find(|(p, _)| p.name == name).map(|(_, s)| *s)
    }

    /// Uniform fan-in initialization; biases and the output head start at zero
    /// so an untrained model predicts zero noise.
    pub fn init(&self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; self.total];
        for (spec, slot) in &self.specs {
            let is_bias = spec.shape.len() == 1;
            if is_bias || spec.name.starts_with("head.") {
                continue;
            }
            let bound = 1.0 / (slot.rows as f32).sqrt();
            for v in &mut params[slot.range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }
}

#[inline]
fn sigmoid<A: Real>(x: A) -> A {
    A::one() / (A::one() + (-x).exp())
}

#[inline]
fn silu<A: Real>(x: A) -> A {
    x * sigmoid(x)
}

#[inline]
fn silu_grad<A: Real>(x: A) -> A {
    let s = sigmoid(x);
    s * (A::one() + x * (A::one() - s))
}

/// `[sin(v f_k), cos(v f_k)]` with geometric frequencies `f_k = 10000^(-k/half)`.
pub fn sinusoidal<A: Real>(v: f64, dim: usize) -> Vec<A> {
    let half = dim / 2;
    let mut out = vec![A::zero(); dim];
    for k in 0..half {
        let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = cast((v * f).sin());
        out[half + k] = cast((v * f).cos());
    }
    out
}

/// Builds the `M x POINT_FEATURES` feature matrix for labelled points.
pub fn point_features<A: Real>(points: &[[f64; 2]], labels: &[PointClass]) -> Array2<A> {
    assert_eq!(points.len(), labels.len());
    let mut f = Array2::zeros((points.len(), POINT_FEATURES));
    for (k, (p, l)) in points.iter().zip(labels).enumerate() {
        f[[k, 0]] = cast(p[0]);
        f[[k, 1]] = cast(p[1]);
        f[[k, 2 + l.index()]] = A::one();
    }
    f
}

/// `c += a . b`.
#[inline]
fn mm_acc<A: Real>(a: &ArrayView2<A>, b: &ArrayView2<A>, c: &mut ArrayViewMut2<A>) {
    general_mat_mul(A::one(), a, b, A::one(), c);
}

fn mm<A: Real>(a: &ArrayView2<A>, b: &ArrayView2<A>) -> Array2<A> {
    a.dot(b)
}

fn add_row<A: Real>(m: &mut Array2<A>, bias: &ArrayView2<A>) {
    let b = bias.row(0);
    for mut row in m.outer_iter_mut() {
        row += &b;
    }
}

fn colsum_into<A: Real>(m: &Array2<A>, out: &mut ArrayViewMut2<A>) {
    let s = m.sum_axis(Axis(0));
    let mut r = out.row_mut(0);
    r += &s;
}

/// Scene-encoder activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<A> {
    feats: Array2<A>,
    e1: Array2<A>,
    s1: Array2<A>,
    /// Global row index of the pooled maximum, per sample and pooled
    /// channel; `None` when the sample has no point of that class.
    argmax: Vec<Vec<Option<usize>>>,
}

#[derive(Debug, Clone)]
struct BlockCache<A> {
    z: Array2<A>,
    g: Array2<A>,
    a: Array2<A>,
    hh: Array2<A>,
    xin: Array2<A>,
}

/// Trunk activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TrunkCache<A> {
    x_in: Array2<A>,
    cond: Array2<A>,
    u: Array2<A>,
    c: Array2<A>,
    blocks: Vec<BlockCache<A>>,
    x_out: Array2<A>,
}

/// A network bound to a layout and a flat parameter vector.
pub struct Denoiser<'a, A> {
    pub layout: &'a Layout,
    pub params: &'a [A],
}

impl<'a, A: Real> Denoiser<'a, A> {
    pub fn new(layout: &'a Layout, params: &'a [A]) -> Self {
        assert_eq!(params.len(), layout.num_params(), "parameter vector length mismatch");
        Self { layout, params }
    }

    fn p(&self, s: Slot) -> ArrayView2<'a, A> {
        s.view(self.params)
    }

    /// Scene codes `B x pooled_dim` for `B` stacked point sets of `m` points
    /// each. Each class is max-pooled separately; absent classes pool to zero.
    pub fn encode_scene(&self, feats: &Array2<A>, m: usize) -> (Array2<A>, EncoderCache<A>) {
        let l = self.layout;
        assert_eq!(feats.ncols(), POINT_FEATURES, "point feature width");
        assert!(m > 0 && feats.nrows() % m == 0, "point rows must be a multiple of m");
        let b = feats.nrows() / m;
        let mut e1 = mm(&feats.view(), &self.p(l.enc_w1));
        add_row(&mut e1, &self.p(l.enc_b1));
        let s1 = e1.mapv(silu);
        let mut e2 = mm(&s1.view(), &self.p(l.enc_w2));
        add_row(&mut e2, &self.p(l.enc_b2));
        let code_dim = l.arch.scene_code;
        let mut codes = Array2::zeros((b, l.arch.pooled_dim()));
        let mut argmax = vec![vec![None; l.arch.pooled_dim()]; b];
        for k in 0..b {
            for r in k * m..(k + 1) * m {
                let Some(c) = (0..PointClass::COUNT).find(|&c| feats[[r, 2 + c]] == A::one()) else {
                    continue;
                };
                for j in 0..code_dim {
                    let slot = c * code_dim + j;
                    let v = e2[[r, j]];
                    if argmax[k][slot].is_none() || v > codes[[k, slot]] {
                        codes[[k, slot]] = v;
                        argmax[k][slot] = Some(r);
                    }
                }
            }
        }
        (
            codes,
            EncoderCache {
                feats: feats.clone(),
                e1,
                s1,
                argmax,
            },
        )
    }

    /// Predicted noise `(B*H) x d` for stacked trajectories `x`, steps `t`
    /// and precomputed scene codes.
    pub fn forward_trunk(&self, x: &Array2<A>, t: &[usize], codes: &Array2<A>) -> (Array2<A>, TrunkCache<A>) {
        let l = self.layout;
        let a = &l.arch;
        let (h, w) = (a.horizon, a.width);
        let b = t.len();
        assert_eq!(x.dim(), (b * h, a.dof), "trajectory batch shape");
        assert_eq!(codes.dim(), (b, a.pooled_dim()), "scene code shape");

        let mut cond = Array2::zeros((b, a.cond_dim()));
        cond.slice_mut(s![.., ..a.pooled_dim()]).assign(codes);
        for (k, &tk) in t.iter().enumerate() {
            let e = sinusoidal::<A>(tk as f64, a.time_dim);
            for (j, v) in e.into_iter().enumerate() {
                cond[[k, a.pooled_dim() + j]] = v;
            }
        }
        let mut u = mm(&cond.view(), &self.p(l.cond_w));
        add_row(&mut u, &self.p(l.cond_b));
        let c = u.mapv(silu);

        let mut xt = mm(&x.view(), &self.p(l.tok_w));
        add_row(&mut xt, &self.p(l.tok_b));
        for step in 0..h {
            let pe = sinusoidal::<A>(step as f64, w);
            for k in 0..b {
                let mut row = xt.row_mut(k * h + step);
                for (j, v) in pe.iter().enumerate() {
                    row[j] += *v;
                }
            }
        }

        let inv_h: A = cast(1.0 / h as f64);
        let half_k = (a.kernel / 2) as isize;
        let mut caches = Vec::with_capacity(a.blocks);
        for bs in &l.blocks {
            let conv = self.p(bs.conv);
            let mut z = xt.clone();
            for k in 0..b {
                for step in 0..h as isize {
                    let mut zr = z.row_mut(k * h + step as usize);
                    for tap in 0..a.kernel as isize {
                        let src = step + tap - half_k;
                        if src < 0 || src >= h as isize {
                            continue;
                        }
                        let xr = xt.row(k * h + src as usize);
                        let cr = conv.row(tap as usize);
                        for j in 0..w {
                            zr[j] += cr[j] * xr[j];
                        }
                    }
                }
            }
            let mut g = Array2::zeros((b, w));
            for k in 0..b {
                let m = z.slice(s![k * h..(k + 1) * h, ..]).sum_axis(Axis(0));
                g.row_mut(k).assign(&(m * inv_h));
            }
            let mut shift = mm(&g.view(), &self.p(bs.wg));
            mm_acc(&c.view(), &self.p(bs.wc), &mut shift.view_mut());
            add_row(&mut shift, &self.p(bs.b1));
            let mut act = mm(&z.view(), &self.p(bs.w1));
            for k in 0..b {
                let sr = shift.row(k);
                for mut row in act.slice_mut(s![k * h..(k + 1) * h, ..]).outer_iter_mut() {
                    row += &sr;
                }
            }
            let hh = act.mapv(silu);
            let mut out = mm(&hh.view(), &self.p(bs.w2));
            add_row(&mut out, &self.p(bs.b2));
            let xin = xt.clone();
            xt += &out;
            caches.push(BlockCache {
                z,
                g,
                a: act,
                hh,
                xin,
            });
        }
        let mut y = mm(&xt.view(), &self.p(l.head_w));
        add_row(&mut y, &self.p(l.head_b));
        (
            y,
            TrunkCache {
                x_in: x.clone(),
                cond,
                u,
                c,
                blocks: caches,
                x_out: xt,
            },
        )
    }

    /// Convenience: encoder plus trunk.
    pub fn forward(&self, x: &Array2<A>, t: &[usize], feats: &Array2<A>, m: usize) -> Array2<A> {
        let (codes, _) = self.encode_scene(feats, m);
        self.forward_trunk(x, t, &codes).0
    }

    /// Accumulates parameter gradients of `sum(dy . y)` into `grads` and
    /// returns the gradient with respect to the scene codes.
    pub fn backward_trunk(&self, cache: &TrunkCache<A>, dy: &Array2<A>, grads: &mut [A]) -> Array2<A> {
        let l = self.layout;
        let a = &l.arch;
        let (h, w) = (a.horizon, a.width);
        let b = cache.cond.nrows();
        let inv_h: A = cast(1.0 / h as f64);
        let half_k = (a.kernel / 2) as isize;

        mm_acc(&cache.x_out.t(), &dy.view(), &mut l.head_w.view_mut(grads));
        colsum_into(dy, &mut l.head_b.view_mut(grads));
        let mut dx = mm(&dy.view(), &self.p(l.head_w).t());
        let mut dc = Array2::<A>::zeros((b, a.hidden));

        for (bs, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
            // out = silu(act) . w2 + b2, residual onto x.
            mm_acc(&bc.hh.t(), &dx.view(), &mut bs.w2.view_mut(grads));
            colsum_into(&dx, &mut bs.b2.view_mut(grads));
            let mut da = mm(&dx.view(), &self.p(bs.w2).t());
            da.zip_mut_with(&bc.a, |d, &x| *d *= silu_grad(x));

            mm_acc(&bc.z.t(), &da.view(), &mut bs.w1.view_mut(grads));
            let mut dz = mm(&da.view(), &self.p(bs.w1).t());

            let mut sa = Array2::zeros((b, a.hidden));
            for k in 0..b {
                sa.row_mut(k).assign(&da.slice(s![k * h..(k + 1) * h, ..]).sum_axis(Axis(0)));
            }
            colsum_into(&sa, &mut bs.b1.view_mut(grads));
            mm_acc(&bc.g.t(), &sa.view(), &mut bs.wg.view_mut(grads));
            mm_acc(&cache.c.t(), &sa.view(), &mut bs.wc.view_mut(grads));
            mm_acc(&sa.view(), &self.p(bs.wc).t(), &mut dc.view_mut());
            let dg = mm(&sa.view(), &self.p(bs.wg).t()) * inv_h;
            for k in 0..b {
                let gr = dg.row(k);
                for mut row in dz.slice_mut(s![k * h..(k + 1) * h, ..]).outer_iter_mut() {
                    row += &gr;
                }
            }

            // z = x + conv(x).
            let conv = self.p(bs.conv);
            let mut dconv = Array2::<A>::zeros((a.kernel, w));
            dx += &dz;
            for k in 0..b {
                for step in 0..h as isize {
                    let dzr = dz.row(k * h + step as usize);
                    for tap in 0..a.kernel as isize {
                        let src = step + tap - half_k;
                        if src < 0 || src >= h as isize {
                            continue;
                        }
                        let srow = k * h + src as usize;
                        let xr = bc.xin.row(srow);
                        let cr = conv.row(tap as usize);
                        let mut dcr = dconv.row_mut(tap as usize);
                        for j in 0..w {
                            dcr[j] += dzr[j] * xr[j];
                        }
                        let mut dxr = dx.row_mut(srow);
                        for j in 0..w {
                            dxr[j] += dzr[j] * cr[j];
                        }
                    }
                }
            }
            bs.conv.view_mut(grads).zip_mut_with(&dconv, |g, &v| *g += v);
        }

        // Token embedding (positional encoding has no parameters).
        mm_acc(&cache.x_in.t(), &dx.view(), &mut l.tok_w.view_mut(grads));
        colsum_into(&dx, &mut l.tok_b.view_mut(grads));

        // Conditioning MLP.
        let mut du = dc;
        du.zip_mut_with(&cache.u, |d, &x| *d *= silu_grad(x));
        mm_acc(&cache.cond.t(), &du.view(), &mut l.cond_w.view_mut(grads));
        colsum_into(&du, &mut l.cond_b.view_mut(grads));
        let dcond = mm(&du.view(), &self.p(l.cond_w).t());
        dcond.slice(s![.., ..a.pooled_dim()]).to_owned()
    }

    /// Accumulates encoder parameter gradients given the scene-code gradient.
    /// Max pooling routes each channel's gradient to its arg-max point only.
    pub fn backward_encoder(&self, cache: &EncoderCache<A>, dcodes: &Array2<A>, grads: &mut [A]) {
        let l = self.layout;
        let hid = l.arch.encoder_hidden;
        let w2 = self.p(l.enc_w2);
        let mut ds1 = std::collections::BTreeMap::<usize, Vec<A>>::new();
        {
            let mut gw2 = l.enc_w2.view_mut(grads);
            for (k, rows) in cache.argmax.iter().enumerate() {
                for (slot, &r) in rows.iter().enumerate() {
                    let (Some(r), j) = (r, slot % l.arch.scene_code) else {
                        continue;
                    };
                    let v = dcodes[[k, slot]];
                    if v == A::zero() {
                        continue;
                    }
                    let s1 = cache.s1.row(r);
                    for i in 0..hid {
                        gw2[[i, j]] += s1[i] * v;
                    }
                    let acc = ds1.entry(r).or_insert_with(|| vec![A::zero(); hid]);
                    for i in 0..hid {
                        acc[i] += w2[[i, j]] * v;
                    }
                }
            }
        }
        {
            let mut gb2 = l.enc_b2.view_mut(grads);
            for (k, rows) in cache.argmax.iter().enumerate() {
                for (slot, r) in rows.iter().enumerate() {
                    if r.is_some() {
                        gb2[[0, slot % l.arch.scene_code]] += dcodes[[k, slot]];
                    }
                }
            }
        }
        for (r, mut d) in ds1 {
            for (i, v) in d.iter_mut().enumerate() {
                *v *= silu_grad(cache.e1[[r, i]]);
            }
            {
                let mut gw1 = l.enc_w1.view_mut(grads);
                for f in 0..POINT_FEATURES {
                    let x = cache.feats[[r, f]];
                    if x == A::zero() {
                        continue;
                    }
                    for i in 0..hid {
                        gw1[[f, i]] += x * d[i];
                    }
                }
            }
            let mut gb1 = l.enc_b1.view_mut(grads);
            for i in 0..hid {
                gb1[[0, i]] += d[i];
            }
        }
    }
}
