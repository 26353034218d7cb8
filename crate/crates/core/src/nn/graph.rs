//! Reverse-mode differentiation over a recorded tape of tensor operations.

use crate::error::{Error, Result};
use crate::nn::kernels::{self, ConvGeometry};
use crate::nn::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Eval,
    Train,
}

/// Batch statistics observed by a train-mode normalization, to be folded
/// into the running estimates after the step.
#[derive(Clone, Debug)]
pub struct BnObservation {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        cout: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    /// `x[n, c, h, w] * s[n, 0, h, w]`
    MulSpatial {
        x: Var,
        s: Var,
    },
    Concat(Vec<Var>),
    MaxPool3 {
        x: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    L1 {
        pred: Var,
        target: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of operations recorded during one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    tags: Vec<(String, Var)>,
    observations: Vec<BnObservation>,
    record_tags: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            tags: Vec::new(),
            observations: Vec::new(),
            record_tags: false,
        }
    }

    /// Keep named handles to intermediate activations (see [`Graph::tag`]).
    pub fn with_instrumentation() -> Self {
        Graph {
            record_tags: true,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tag(&mut self, name: impl Into<String>, v: Var) {
        if self.record_tags {
            self.tags.push((name.into(), v));
        }
    }

    /// Instrumented activations in recording order.
    pub fn tags(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tags.iter().map(|(n, v)| (n.as_str(), self.value(*v)))
    }

    pub fn tagged(&self, name: &str) -> Option<&Tensor> {
        self.tags.iter().find(|(n, _)| n == name).map(|(_, v)| self.value(*v))
    }

    pub fn observations(&self) -> &[BnObservation] {
        &self.observations
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let rg = p.role.is_trainable();
        self.push(p.value.clone(), Op::Param(id), rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let [cout, cin, k, k2] = ws;
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape(format!("unsupported kernel shape {ws:?}")));
        }
        if xs[1] != cin {
            return Err(Error::shape(format!(
                "convolution expects {cin} input channels, got {}",
                xs[1]
            )));
        }
        let geom = ConvGeometry {
            cin,
            cout,
            kernel: k,
            stride,
            pad: k / 2,
            h: xs[2],
            w: xs[3],
        };
        let bias = b.map(|b| self.value(b).data().to_vec());
        let out = kernels::conv2d_forward(self.value(x), self.value(w).data(), bias.as_deref(), &geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv { x, w, b, geom }, rg))
    }

    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape();
        let [cin, cout, kh, kw] = self.value(w).shape();
        if (kh, kw) != (2, 2) || cin != xs[1] {
            return Err(Error::shape(format!(
                "transposed convolution weight {:?} incompatible with input {:?}",
                self.value(w).shape(),
                xs
            )));
        }
        let bias = b.map(|b| self.value(b).data().to_vec());
        let out = kernels::conv_transpose2x2_forward(self.value(x), self.value(w).data(), bias.as_deref(), cout);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::ConvTranspose { x, w, b, cout }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "cannot add {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Multiply every channel of `x` by the single-channel map `s`.
    pub fn mul_spatial(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let [n, c, h, w] = tx.shape();
        if ts.shape() != [n, 1, h, w] {
            return Err(Error::shape(format!(
                "spatial map {:?} does not match features {:?}",
                ts.shape(),
                tx.shape()
            )));
        }
        let mut out = tx.clone();
        let hw = h * w;
        for ni in 0..n {
            let sm = ts.sample(ni);
            let o = out.sample_mut(ni);
            for ci in 0..c {
                for (v, &m) in o[ci * hw..(ci + 1) * hw].iter_mut().zip(sm) {
                    *v *= m;
                }
            }
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::MulSpatial { x, s }, rg))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape();
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::shape(format!("cannot concatenate {s:?} with {first:?}")));
            }
            channels += s[1];
        }
        let [n, _, h, w] = first;
        let mut out = Tensor::zeros([n, channels, h, w]);
        for ni in 0..n {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).sample(ni);
                out.sample_mut(ni)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn max_pool3x3(&mut self, x: Var) -> Var {
        let (out, argmax) = kernels::max_pool3x3_same(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::MaxPool3 { x, argmax }, rg)
    }

    /// Normalization with either batch statistics (recording an observation
    /// for the running estimates) or the supplied running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (ParamId, ParamId),
        store: &ParamStore,
        mode: Mode,
        eps: f64,
    ) -> Result<Var> {
        let c = self.value(x).channels();
        if self.value(gamma).len() != c {
            return Err(Error::shape(format!(
                "normalization over {} channels applied to {c}",
                self.value(gamma).len()
            )));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                let (m, v) = kernels::channel_moments(self.value(x));
                self.observations.push(BnObservation {
                    running_mean: running.0,
                    running_var: running.1,
                    mean: m.clone(),
                    var: v.clone(),
                });
                (m, v)
            }
            Mode::Eval => (
                store.value(running.0).data().to_vec(),
                store.value(running.1).data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (out, xhat) = kernels::batch_norm_apply(
            self.value(x),
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            rg,
        ))
    }

    /// Mean absolute difference as a `[1, 1, 1, 1]` scalar.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape(format!(
                "prediction {:?} vs target {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let sum: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum();
        let out = Tensor::full([1, 1, 1, 1], sum / p.len() as f64);
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(out, Op::L1 { pred, target }, rg))
    }

    /// Hash of the active piece of every piecewise-linear op: ReLU signs,
    /// max-pool winners and L1 signs. Two evaluations with equal signatures
    /// lie on the same linear piece of those ops.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => self.value(*x).data().iter().for_each(|v| (*v > 0.0).hash(&mut h)),
                Op::MaxPool3 { argmax, .. } => argmax.hash(&mut h),
                Op::L1 { pred, target } => {
                    let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                    p.iter().zip(t).for_each(|(a, b)| a.partial_cmp(b).hash(&mut h));
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of the scalar `root` with respect to every trainable
    /// parameter, indexed by [`ParamId`].
    pub fn backward(&self, root: Var, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        let mut out: Vec<Option<Tensor>> = (0..store.len()).map(|_| None).collect();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let send = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut out[id.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                },
                Op::Conv { x, w, b, geom } => {
                    let want = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                    let r = kernels::conv2d_backward(self.value(*x), self.value(*w).data(), &g, geom, want);
                    if let Some(dx) = r.dx {
                        send(*x, dx, &mut grads);
                    }
                    if let Some(dw) = r.dweight {
                        send(*w, Tensor::from_vec(self.value(*w).shape(), dw).unwrap(), &mut grads);
                    }
                    if let (Some(b), Some(db)) = (b, r.dbias) {
                        send(*b, Tensor::from_vec(self.value(*b).shape(), db).unwrap(), &mut grads);
                    }
                }
                Op::ConvTranspose { x, w, b, cout } => {
                    let want = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                    let r = kernels::conv_transpose2x2_backward(self.value(*x), self.value(*w).data(), &g, *cout, want);
                    if let Some(dx) = r.dx {
                        send(*x, dx, &mut grads);
                    }
                    if let Some(dw) = r.dweight {
                        send(*w, Tensor::from_vec(self.value(*w).shape(), dw).unwrap(), &mut grads);
                    }
                    if let (Some(b), Some(db)) = (b, r.dbias) {
                        send(*b, Tensor::from_vec(self.value(*b).shape(), db).unwrap(), &mut grads);
                    }
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    send(*x, dx, &mut grads);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y * (1.0 - y);
                    }
                    send(*x, dx, &mut grads);
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        send(*b, g.clone(), &mut grads);
                    }
                    send(*a, g, &mut grads);
                }
                Op::MulSpatial { x, s } => {
                    let (tx, ts) = (self.value(*x), self.value(*s));
                    let [n, c, h, w] = tx.shape();
                    let hw = h * w;
                    if self.rg(*s) {
                        let mut ds = Tensor::zeros(ts.shape());
                        for ni in 0..n {
                            let (gs, xs) = (g.sample(ni), tx.sample(ni));
                            let d = ds.sample_mut(ni);
                            for ci in 0..c {
                                for (p, acc) in d.iter_mut().enumerate() {
                                    *acc += gs[ci * hw + p] * xs[ci * hw + p];
                                }
                            }
                        }
                        send(*s, ds, &mut grads);
                    }
                    if self.rg(*x) {
                        let mut dx = g;
                        for ni in 0..n {
                            let sm = ts.sample(ni);
                            let d = dx.sample_mut(ni);
                            for ci in 0..c {
                                for (v, &m) in d[ci * hw..(ci + 1) * hw].iter_mut().zip(sm) {
                                    *v *= m;
                                }
                            }
                        }
                        send(*x, dx, &mut grads);
                    }
                }
                Op::Concat(parts) => {
                    let n = g.batch();
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.value(p).shape();
                        let per = shape[1] * shape[2] * shape[3];
                        if self.rg(p) {
                            let mut d = Tensor::zeros(shape);
                            for ni in 0..n {
                                d.sample_mut(ni).copy_from_slice(&g.sample(ni)[off..off + per]);
                            }
                            send(p, d, &mut grads);
                        }
                        off += per;
                    }
                }
                Op::MaxPool3 { x, argmax } => {
                    send(*x, kernels::max_pool3x3_backward(&g, argmax), &mut grads);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (dx, dgamma, dbeta) =
                        kernels::batch_norm_backward(&g, xhat, inv_std, self.value(*gamma).data(), *batch_stats);
                    let gshape = self.value(*gamma).shape();
                    send(*gamma, Tensor::from_vec(gshape, dgamma).unwrap(), &mut grads);
                    send(*beta, Tensor::from_vec(gshape, dbeta).unwrap(), &mut grads);
                    send(*x, dx, &mut grads);
                }
                Op::L1 { pred, target } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let scale = g.data()[0] / p.len() as f64;
                    let dp = Tensor::from_vec(
                        p.shape(),
                        p.data()
                            .iter()
                            .zip(t.data())
                            .map(|(a, b)| scale * sign(a - b))
                            .collect(),
                    )
                    .unwrap();
                    if self.rg(*target) {
                        send(*target, dp.map(|v| -v), &mut grads);
                    }
                    send(*pred, dp, &mut grads);
                }
            }
        }
        out
    }
}

/// Subgradient of `|d|` with `0` at the kink.
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamRole;
    use crate::seed::stream_rng;
    use rand::Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    /// Max relative error between backward() and central differences of the
    /// scalar built by `f` over every trainable entry of `store`.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Graph, &ParamStore, &[Var]) -> Var) -> f64 {
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        let run = |s: &ParamStore| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            let root = f(&mut g, s, &vars);
            (g, root)
        };
        let (g, root) = run(store);
        let grads = g.backward(root, store);
        let h = 1e-6;
        let mut worst = 0.0f64;
        for &id in &ids {
            if !store.get(id).role.is_trainable() {
                continue;
            }
            let (mut err, mut scale) = (0.0f64, 0.0f64);
            for k in 0..store.value(id).len() {
                let orig = store.value(id).data()[k];
                store.value_mut(id).data_mut()[k] = orig + h;
                let (g1, r1) = run(store);
                store.value_mut(id).data_mut()[k] = orig - h;
                let (g2, r2) = run(store);
                store.value_mut(id).data_mut()[k] = orig;
                let num = (g1.value(r1).data()[0] - g2.value(r2).data()[0]) / (2.0 * h);
                let ana = grads[id.index()].as_ref().map_or(0.0, |t| t.data()[k]);
                err = err.max((num - ana).abs());
                scale = scale.max(num.abs()).max(ana.abs());
            }
            worst = worst.max(err / scale.max(1e-9));
        }
        worst
    }

    fn setup(seed: u64, shapes: &[(&str, ParamRole, [usize; 4])]) -> (ParamStore, Tensor) {
        let mut rng = stream_rng(seed, "graph-test", &[]);
        let mut store = ParamStore::new();
        for (name, role, shape) in shapes {
            store.add(name.to_string(), *role, rand_tensor(&mut rng, *shape));
        }
        let target = rand_tensor(&mut rng, [64, 1, 1, 1]);
        (store, target)
    }

    fn l1_to(g: &mut Graph, v: Var, seed: u64) -> Var {
        let mut rng = stream_rng(seed, "target", &[]);
        let t = rand_tensor(&mut rng, g.value(v).shape());
        let t = g.input(t);
        g.l1_loss(v, t).unwrap()
    }

    const W: ParamRole = ParamRole::Weight;

    #[test]
    fn conv_and_transpose_gradients() {
        for stride in [1, 2] {
            let (mut s, _) = setup(
                1,
                &[("x", W, [2, 3, 6, 6]), ("w", W, [4, 3, 3, 3]), ("b", W, [4, 1, 1, 1])],
            );
            let e = check(&mut s, |g, _, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride).unwrap();
                l1_to(g, y, 2)
            });
            assert!(e < 1e-6, "conv stride {stride}: {e}");
        }
        let (mut s, _) = setup(
            3,
            &[("x", W, [2, 3, 3, 4]), ("w", W, [3, 2, 2, 2]), ("b", W, [2, 1, 1, 1])],
        );
        let e = check(&mut s, |g, _, v| {
            let y = g.conv_transpose2x2(v[0], v[1], Some(v[2])).unwrap();
            l1_to(g, y, 4)
        });
        assert!(e < 1e-6, "transpose: {e}");
    }

    #[test]
    fn pointwise_gradients() {
        let (mut s, _) = setup(
            5,
            &[("x", W, [2, 3, 4, 4]), ("m", W, [2, 1, 4, 4]), ("y", W, [2, 2, 4, 4])],
        );
        let e = check(&mut s, |g, _, v| {
            let a = g.relu(v[0]);
            let b = g.sigmoid(v[1]);
            let c = g.mul_spatial(a, b).unwrap();
            let d = g.concat(&[c, v[2]]).unwrap();
            let d2 = g.concat(&[v[0], v[2]]).unwrap();
            let s = g.add(d, d2).unwrap();
            let p = g.max_pool3x3(s);
            l1_to(g, p, 6)
        });
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn batch_norm_gradients() {
        for mode in [Mode::Train, Mode::Eval] {
            let (mut s, _) = setup(
                7,
                &[
                    ("x", W, [3, 2, 3, 3]),
                    ("gamma", ParamRole::Gamma, [2, 1, 1, 1]),
                    ("beta", ParamRole::Beta, [2, 1, 1, 1]),
                ],
            );
            let rm = s.add("rm".into(), ParamRole::RunningMean, Tensor::full([2, 1, 1, 1], 0.1));
            let rv = s.add("rv".into(), ParamRole::RunningVar, Tensor::full([2, 1, 1, 1], 0.7));
            let e = check(&mut s, |g, st, v| {
                let y = g.batch_norm(v[0], v[1], v[2], (rm, rv), st, mode, 1e-5).unwrap();
                l1_to(g, y, 8)
            });
            assert!(e < 1e-5, "{mode:?}: {e}");
        }
    }
}
