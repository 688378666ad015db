//! Small manually-differentiated 1-D classifier: valid conv, relu, max-pool,
//! dense layers, softmax cross-entropy, SGD and Adam steps. The backward pass
//! produces weight gradients and input gradients in one traversal; the input
//! gradient is what the dual ascent consumes.

use crate::error::CoreError;
use crate::rng::{self, streams};
use crate::Result;
use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv1d { out_channels: usize, kernel: usize },
    Relu,
    MaxPool1d { width: usize },
    Dense { units: usize },
}

/// Architecture: input shape, layer stack, class count, and the source string
/// it was parsed from (kept for checkpoints).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub in_len: usize,
    pub num_classes: usize,
    pub layers: Vec<Layer>,
    pub source: String,
}

/// Shape of the tensor flowing between layers: channels x time, or a flat
/// vector once a dense layer has been applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Map { c: usize, t: usize },
    Vec { d: usize },
}

impl Flow {
    fn flat(self) -> usize {
        match self {
            Flow::Map { c, t } => c * t,
            Flow::Vec { d } => d,
        }
    }
}

impl ArchSpec {
    /// Parse the compact appendix-style string, e.g.
    /// `C:100,K:5;C:50,K:5;P:4;R:200;R:100`. Each `C` and `R` segment carries
    /// an implicit relu; a `num_classes`-unit linear output layer is appended.
    /// The empty string yields the bare linear classifier.
    pub fn parse(
        source: &str,
        in_channels: usize,
        in_len: usize,
        num_classes: usize,
    ) -> Result<ArchSpec> {
        if in_channels == 0 || in_len == 0 {
            return Err(CoreError::Arch("input shape must be nonzero".into()));
        }
        if num_classes < 2 {
            return Err(CoreError::Arch("need at least 2 classes".into()));
        }
        let mut layers = Vec::new();
        for seg in source.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            if let Some(rest) = seg.strip_prefix("C:") {
                let (oc, k) = match rest.split_once(",K:") {
                    Some((a, b)) => (parse_dim(a, seg)?, parse_dim(b, seg)?),
                    None => {
                        return Err(CoreError::Arch(format!(
                            "conv segment `{seg}` must look like C:<out>,K:<kernel>"
                        )))
                    }
                };
                layers.push(Layer::Conv1d {
                    out_channels: oc,
                    kernel: k,
                });
                layers.push(Layer::Relu);
            } else if let Some(rest) = seg.strip_prefix("P:") {
                layers.push(Layer::MaxPool1d {
                    width: parse_dim(rest, seg)?,
                });
            } else if let Some(rest) = seg.strip_prefix("R:") {
                layers.push(Layer::Dense {
                    units: parse_dim(rest, seg)?,
                });
                layers.push(Layer::Relu);
            } else {
                return Err(CoreError::Arch(format!(
                    "unknown layer segment `{seg}` (expected C:.. , P:.. or R:..)"
                )));
            }
        }
        layers.push(Layer::Dense {
            units: num_classes,
        });
        let spec = ArchSpec {
            in_channels,
            in_len,
            num_classes,
            layers,
            source: source.to_string(),
        };
        spec.flow_shapes()?; // validate the chain
        Ok(spec)
    }

    /// Shapes entering each layer, plus the final output shape.
    fn flow_shapes(&self) -> Result<Vec<Flow>> {
        let mut shapes = vec![Flow::Map {
            c: self.in_channels,
            t: self.in_len,
        }];
        for (idx, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().expect("nonempty");
            let next = match *layer {
                Layer::Conv1d {
                    out_channels,
                    kernel,
                } => match cur {
                    Flow::Map { c: _, t } if t >= kernel && kernel >= 1 => Flow::Map {
                        c: out_channels,
                        t: t - kernel + 1,
                    },
                    Flow::Map { t, .. } => {
                        return Err(CoreError::Arch(format!(
                            "layer {idx}: conv kernel {kernel} exceeds length {t}"
                        )))
                    }
                    Flow::Vec { .. } => {
                        return Err(CoreError::Arch(format!(
                            "layer {idx}: conv after dense is not supported"
                        )))
                    }
                },
                Layer::MaxPool1d { width } => match cur {
                    Flow::Map { c, t } if t >= width && width >= 1 => Flow::Map { c, t: t / width },
                    Flow::Map { t, .. } => {
                        return Err(CoreError::Arch(format!(
                            "layer {idx}: pool width {width} exceeds length {t}"
                        )))
                    }
                    Flow::Vec { .. } => {
                        return Err(CoreError::Arch(format!(
                            "layer {idx}: pool after dense is not supported"
                        )))
                    }
                },
                Layer::Dense { units } => {
                    if units == 0 {
                        return Err(CoreError::Arch(format!("layer {idx}: zero units")));
                    }
                    Flow::Vec { d: units }
                }
                Layer::Relu => cur,
            };
            shapes.push(next);
        }
        Ok(shapes)
    }
}

fn parse_dim(s: &str, seg: &str) -> Result<usize> {
    let v: usize = s
        .trim()
        .parse()
        .map_err(|_| CoreError::Arch(format!("bad dimension in segment `{seg}`")))?;
    if v == 0 {
        return Err(CoreError::Arch(format!("zero dimension in segment `{seg}`")));
    }
    Ok(v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LayerParams {
    Conv {
        // out_channels x in_channels x kernel
        w: Array3<f64>,
        b: Array1<f64>,
    },
    Dense {
        // units x in_dim
        w: Array2<f64>,
        b: Array1<f64>,
    },
    None,
}

impl LayerParams {
    fn len(&self) -> usize {
        match self {
            LayerParams::Conv { w, b } => w.len() + b.len(),
            LayerParams::Dense { w, b } => w.len() + b.len(),
            LayerParams::None => 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub arch: ArchSpec,
    pub params: Vec<LayerParams>,
}

/// Weight gradient (flat, ordered like [`Model::flat_params`]) plus the
/// gradient of the batch-mean loss with respect to each input.
#[derive(Debug, Clone)]
pub struct GradPair {
    pub weight_grad: Vec<f64>,
    pub input_grad: Vec<Array2<f64>>,
}

/// Kaiming-uniform initialization (bound sqrt(6/fan_in)), zero biases,
/// deterministic per seed.
pub fn init_model(arch: &ArchSpec, seed: u64) -> Result<Model> {
    let mut r = rng::stream(seed, streams::INIT);
    let shapes = arch.flow_shapes()?;
    let mut params = Vec::with_capacity(arch.layers.len());
    for (layer, flow_in) in arch.layers.iter().zip(shapes.iter()) {
        params.push(match *layer {
            Layer::Conv1d {
                out_channels,
                kernel,
            } => {
                let in_c = match *flow_in {
                    Flow::Map { c, .. } => c,
                    Flow::Vec { .. } => unreachable!("validated by flow_shapes"),
                };
                let bound = (6.0 / (in_c * kernel) as f64).sqrt();
                LayerParams::Conv {
                    w: Array3::from_shape_fn((out_channels, in_c, kernel), |_| {
                        r.random_range(-bound..bound)
                    }),
                    b: Array1::zeros(out_channels),
                }
            }
            Layer::Dense { units } => {
                let in_dim = flow_in.flat();
                let bound = (6.0 / in_dim as f64).sqrt();
                LayerParams::Dense {
                    w: Array2::from_shape_fn((units, in_dim), |_| r.random_range(-bound..bound)),
                    b: Array1::zeros(units),
                }
            }
            Layer::Relu | Layer::MaxPool1d { .. } => LayerParams::None,
        });
    }
    Ok(Model {
        arch: arch.clone(),
        params,
    })
}

impl Model {
    pub fn num_params(&self) -> usize {
        self.params.iter().map(LayerParams::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.params {
            match p {
                LayerParams::Conv { w, b } => {
                    out.extend(w.iter());
                    out.extend(b.iter());
                }
                LayerParams::Dense { w, b } => {
                    out.extend(w.iter());
                    out.extend(b.iter());
                }
                LayerParams::None => {}
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(CoreError::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                v.len()
            )));
        }
        let mut it = v.iter().copied();
        for p in &mut self.params {
            match p {
                LayerParams::Conv { w, b } => {
                    for x in w.iter_mut() {
                        *x = it.next().expect("length checked");
                    }
                    for x in b.iter_mut() {
                        *x = it.next().expect("length checked");
                    }
                }
                LayerParams::Dense { w, b } => {
                    for x in w.iter_mut() {
                        *x = it.next().expect("length checked");
                    }
                    for x in b.iter_mut() {
                        *x = it.next().expect("length checked");
                    }
                }
                LayerParams::None => {}
            }
        }
        Ok(())
    }
}

/// Intermediate activations of one forward pass: the tensor entering each
/// layer (flattened where the layer consumes a vector) plus pool argmaxes.
pub struct ForwardCache {
    // Value flowing INTO layer idx, in map form when applicable.
    inputs: Vec<CachedValue>,
    pub logits: Array1<f64>,
}

enum CachedValue {
    Map(Array2<f64>),
    Vec(Array1<f64>),
}

fn check_input_shape(model: &Model, x: &Array2<f64>) -> Result<()> {
    if x.nrows() != model.arch.in_channels || x.ncols() != model.arch.in_len {
        return Err(CoreError::Shape(format!(
            "input shape {:?} does not match architecture input {}x{}",
            x.dim(),
            model.arch.in_channels,
            model.arch.in_len
        )));
    }
    Ok(())
}

fn conv_forward(w: &Array3<f64>, b: &Array1<f64>, x: &Array2<f64>) -> Array2<f64> {
    let (oc, ic, k) = w.dim();
    let t_out = x.ncols() - k + 1;
    let mut y = Array2::zeros((oc, t_out));
    for o in 0..oc {
        for t in 0..t_out {
            let mut acc = b[o];
            for c in 0..ic {
                for q in 0..k {
                    acc += w[[o, c, q]] * x[[c, t + q]];
                }
            }
            y[[o, t]] = acc;
        }
    }
    y
}

fn pool_forward(x: &Array2<f64>, width: usize) -> (Array2<f64>, Array2<usize>) {
    let (c, t) = x.dim();
    let t_out = t / width;
    let mut y = Array2::zeros((c, t_out));
    let mut arg = Array2::zeros((c, t_out));
    for ch in 0..c {
        for u in 0..t_out {
            let base = u * width;
            let mut best = x[[ch, base]];
            let mut best_t = base;
            for off in 1..width {
                let v = x[[ch, base + off]];
                if v > best {
                    best = v;
                    best_t = base + off;
                }
            }
            y[[ch, u]] = best;
            arg[[ch, u]] = best_t;
        }
    }
    (y, arg)
}

/// Forward pass for one sample, retaining everything backward needs.
pub fn forward_cached(model: &Model, x: &Array2<f64>) -> Result<ForwardCache> {
    check_input_shape(model, x)?;
    let mut inputs = Vec::with_capacity(model.arch.layers.len());
    let mut map: Option<Array2<f64>> = Some(x.clone());
    let mut vec: Option<Array1<f64>> = None;
    for (layer, p) in model.arch.layers.iter().zip(&model.params) {
        match (*layer, p) {
            (Layer::Conv1d { .. }, LayerParams::Conv { w, b }) => {
                let cur = map.take().expect("validated: conv consumes a map");
                let y = conv_forward(w, b, &cur);
                inputs.push(CachedValue::Map(cur));
                map = Some(y);
            }
            (Layer::MaxPool1d { width }, _) => {
                let cur = map.take().expect("validated: pool consumes a map");
                let (y, _) = pool_forward(&cur, width);
                inputs.push(CachedValue::Map(cur));
                map = Some(y);
            }
            (Layer::Relu, _) => {
                if let Some(cur) = map.take() {
                    let y = cur.mapv(|v| v.max(0.0));
                    inputs.push(CachedValue::Map(cur));
                    map = Some(y);
                } else {
                    let cur = vec.take().expect("one of map/vec is live");
                    let y = cur.mapv(|v| v.max(0.0));
                    inputs.push(CachedValue::Vec(cur));
                    vec = Some(y);
                }
            }
            (Layer::Dense { .. }, LayerParams::Dense { w, b }) => {
                let flat: Array1<f64> = match (map.take(), vec.take()) {
                    (Some(m), None) => {
                        let f = Array1::from_iter(m.iter().copied());
                        inputs.push(CachedValue::Map(m));
                        f
                    }
                    (None, Some(v)) => {
                        inputs.push(CachedValue::Vec(v.clone()));
                        v
                    }
                    _ => unreachable!("exactly one of map/vec is live"),
                };
                vec = Some(w.dot(&flat) + b);
            }
            _ => unreachable!("layer/params aligned by construction"),
        }
    }
    let logits = vec.ok_or_else(|| {
        CoreError::Arch("architecture produced no dense output".into())
    })?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric("non-finite logits".into()));
    }
    Ok(ForwardCache { inputs, logits })
}

/// Backpropagate `dlogits` through the cached pass; returns the flat weight
/// gradient and the gradient with respect to the input.
pub fn backward(model: &Model, cache: &ForwardCache, dlogits: &Array1<f64>) -> Result<GradFlat> {
    let mut wgrads: Vec<LayerParams> = Vec::with_capacity(model.params.len());
    let mut dmap: Option<Array2<f64>> = None;
    let mut dvec: Option<Array1<f64>> = Some(dlogits.clone());
    for ((layer, p), cached) in model
        .arch
        .layers
        .iter()
        .zip(&model.params)
        .zip(&cache.inputs)
        .rev()
    {
        match (*layer, p, cached) {
            (Layer::Dense { .. }, LayerParams::Dense { w, .. }, cached_in) => {
                let dy = dvec.take().expect("dense output is a vector");
                let (flat_in, was_map) = match cached_in {
                    CachedValue::Map(m) => (Array1::from_iter(m.iter().copied()), Some(m.dim())),
                    CachedValue::Vec(v) => (v.clone(), None),
                };
                let dw = dy
                    .view()
                    .insert_axis(ndarray::Axis(1))
                    .dot(&flat_in.view().insert_axis(ndarray::Axis(0)));
                let db = dy.clone();
                let dx = w.t().dot(&dy);
                wgrads.push(LayerParams::Dense { w: dw, b: db });
                match was_map {
                    Some((c, t)) => {
                        dmap = Some(
                            Array2::from_shape_vec((c, t), dx.to_vec())
                                .expect("shape product preserved"),
                        );
                        dvec = None;
                    }
                    None => dvec = Some(dx),
                }
            }
            (Layer::Relu, _, CachedValue::Map(x_in)) => {
                let mut dy = dmap.take().expect("relu grad mirrors forward form");
                dy.zip_mut_with(x_in, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                dmap = Some(dy);
            }
            (Layer::Relu, _, CachedValue::Vec(x_in)) => {
                let mut dy = dvec.take().expect("relu grad mirrors forward form");
                dy.zip_mut_with(x_in, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                dvec = Some(dy);
            }
            (Layer::MaxPool1d { width }, _, CachedValue::Map(x_in)) => {
                let dy = dmap.take().expect("pool output is a map");
                let (_, arg) = pool_forward(x_in, width);
                let mut dx = Array2::zeros(x_in.dim());
                for ch in 0..dy.nrows() {
                    for u in 0..dy.ncols() {
                        dx[[ch, arg[[ch, u]]]] += dy[[ch, u]];
                    }
                }
                wgrads.push(LayerParams::None);
                dmap = Some(dx);
            }
            (Layer::Conv1d { .. }, LayerParams::Conv { w, .. }, CachedValue::Map(x_in)) => {
                let dy = dmap.take().expect("conv output is a map");
                let (oc, ic, k) = w.dim();
                let t_out = dy.ncols();
                let mut dw = Array3::zeros((oc, ic, k));
                let mut db = Array1::zeros(oc);
                let mut dx = Array2::zeros(x_in.dim());
                for o in 0..oc {
                    for t in 0..t_out {
                        let g = dy[[o, t]];
                        db[o] += g;
                        for c in 0..ic {
                            for q in 0..k {
                                dw[[o, c, q]] += g * x_in[[c, t + q]];
                                dx[[c, t + q]] += g * w[[o, c, q]];
                            }
                        }
                    }
                }
                wgrads.push(LayerParams::Conv { w: dw, b: db });
                dmap = Some(dx);
            }
            _ => unreachable!("layer/params aligned by construction"),
        }
        // Pool layers were pushed above only for MaxPool; keep wgrads aligned
        // with params by pushing placeholders for relu here.
        if matches!(layer, Layer::Relu) {
            wgrads.push(LayerParams::None);
        }
    }
    wgrads.reverse();
    let input_grad = dmap.ok_or_else(|| {
        CoreError::Shape("backward did not reach the input map".into())
    })?;
    let mut flat = Vec::with_capacity(model.num_params());
    for g in &wgrads {
        match g {
            LayerParams::Conv { w, b } => {
                flat.extend(w.iter());
                flat.extend(b.iter());
            }
            LayerParams::Dense { w, b } => {
                flat.extend(w.iter());
                flat.extend(b.iter());
            }
            LayerParams::None => {}
        }
    }
    Ok(GradFlat {
        weight_grad: flat,
        input_grad,
    })
}

/// Per-sample backward result.
pub struct GradFlat {
    pub weight_grad: Vec<f64>,
    pub input_grad: Array2<f64>,
}

/// Batch forward: one logits row per sample.
pub fn forward(model: &Model, batch: &[Array2<f64>]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((batch.len(), model.arch.num_classes));
    for (i, x) in batch.iter().enumerate() {
        let cache = forward_cached(model, x)?;
        out.row_mut(i).assign(&cache.logits);
    }
    Ok(out)
}

/// Numerically stable log(sum(exp(z))).
pub fn logsumexp(z: ArrayView1<f64>) -> f64 {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.fold(0.0, |acc, &v| acc + (v - m).exp()).ln()
}

pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let lse = logsumexp(z);
    z.mapv(|v| (v - lse).exp())
}

/// Cross-entropy of one sample given logits.
pub fn cross_entropy(logits: ArrayView1<f64>, label: usize) -> f64 {
    logsumexp(logits) - logits[label]
}

/// Mean softmax cross-entropy over the batch; weight gradient and per-input
/// gradients of that mean in one traversal.
pub fn loss_and_grads(
    model: &Model,
    batch: &[Array2<f64>],
    labels: &[usize],
) -> Result<(f64, GradPair)> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(CoreError::Arg(
            "batch and labels must be nonempty and aligned".into(),
        ));
    }
    for &y in labels {
        if y >= model.arch.num_classes {
            return Err(CoreError::Arg(format!(
                "label {y} out of range for {} classes",
                model.arch.num_classes
            )));
        }
    }
    let bsz = batch.len() as f64;
    let mut loss = 0.0;
    let mut weight_grad = vec![0.0; model.num_params()];
    let mut input_grad = Vec::with_capacity(batch.len());
    for (x, &y) in batch.iter().zip(labels) {
        let cache = forward_cached(model, x)?;
        loss += cross_entropy(cache.logits.view(), y);
        let mut dlogits = softmax(cache.logits.view());
        dlogits[y] -= 1.0;
        dlogits.mapv_inplace(|v| v / bsz);
        let g = backward(model, &cache, &dlogits)?;
        for (acc, v) in weight_grad.iter_mut().zip(&g.weight_grad) {
            *acc += v;
        }
        input_grad.push(g.input_grad);
    }
    Ok((
        loss / bsz,
        GradPair {
            weight_grad,
            input_grad,
        },
    ))
}

/// Fraction of samples whose argmax logit equals the label (ties -> lowest index).
pub fn accuracy(model: &Model, samples: &[(Array2<f64>, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CoreError::Arg("empty evaluation set".into()));
    }
    let mut hits = 0usize;
    for (x, y) in samples {
        let cache = forward_cached(model, x)?;
        let mut best = 0usize;
        for (i, &v) in cache.logits.iter().enumerate() {
            if v > cache.logits[best] {
                best = i;
            }
        }
        if best == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

pub fn sgd_step(model: &mut Model, grad: &[f64], eta: f64) -> Result<()> {
    if eta <= 0.0 {
        return Err(CoreError::Arg("eta must be positive".into()));
    }
    let mut p = model.flat_params();
    if p.len() != grad.len() {
        return Err(CoreError::Shape(format!(
            "gradient length {} does not match parameter count {}",
            grad.len(),
            p.len()
        )));
    }
    for (w, g) in p.iter_mut().zip(grad) {
        *w -= eta * g;
    }
    model.set_flat_params(&p)
}

/// Standard Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> AdamState {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(state: &mut AdamState, model: &mut Model, grad: &[f64], eta: f64) -> Result<()> {
    if eta <= 0.0 {
        return Err(CoreError::Arg("eta must be positive".into()));
    }
    let mut p = model.flat_params();
    if p.len() != grad.len() || p.len() != state.m.len() {
        return Err(CoreError::Shape(
            "adam state/gradient/parameter sizes disagree".into(),
        ));
    }
    state.t += 1;
    let b1t = 1.0 - state.beta1.powi(state.t as i32);
    let b2t = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..p.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let mhat = state.m[i] / b1t;
        let vhat = state.v[i] / b2t;
        p[i] -= eta * mhat / (vhat.sqrt() + state.eps);
    }
    model.set_flat_params(&p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn small_arch() -> ArchSpec {
        ArchSpec::parse("C:3,K:3;P:2;R:5", 2, 10, 4).unwrap()
    }

    #[test]
    fn appendix_arch_produces_class_logits() {
        let arch = ArchSpec::parse("C:100,K:5;C:50,K:5;P:4;R:200;R:100", 1, 97, 3).unwrap();
        let model = init_model(&arch, 7).unwrap();
        let x = Array2::from_shape_fn((1, 97), |(_, t)| (t as f64 * 0.1).sin());
        let cache = forward_cached(&model, &x).unwrap();
        assert_eq!(cache.logits.len(), 3);
    }

    #[test]
    fn dense_param_count() {
        let arch = ArchSpec::parse("", 1, 3, 4).unwrap();
        let model = init_model(&arch, 0).unwrap();
        assert_eq!(model.num_params(), 16); // 12 weights + 4 biases
    }

    #[test]
    fn zero_weights_give_zero_logits_and_ln4_loss() {
        let arch = ArchSpec::parse("C:2,K:2;R:3", 1, 6, 4).unwrap();
        let mut model = init_model(&arch, 1).unwrap();
        model.set_flat_params(&vec![0.0; model.num_params()]).unwrap();
        let x = Array2::from_shape_fn((1, 6), |(_, t)| t as f64);
        let cache = forward_cached(&model, &x).unwrap();
        assert!(cache.logits.iter().all(|&v| v == 0.0));
        let (loss, _) = loss_and_grads(&model, &[x], &[2]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let arch = small_arch();
        let a = init_model(&arch, 5).unwrap();
        let b = init_model(&arch, 5).unwrap();
        let c = init_model(&arch, 6).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn batch_rows_are_independent() {
        let arch = small_arch();
        let model = init_model(&arch, 9).unwrap();
        let mut r = crate::rng::stream(2, "net-batch");
        let x1 = Array2::from_shape_fn((2, 10), |_| r.random_range(-1.0..1.0));
        let x2 = Array2::from_shape_fn((2, 10), |_| r.random_range(-1.0..1.0));
        let single = forward(&model, &[x1.clone()]).unwrap();
        let pair = forward(&model, &[x2, x1]).unwrap();
        for j in 0..4 {
            assert_eq!(single[[0, j]], pair[[1, j]]);
        }
    }

    /// Independent convolution oracle with a different loop structure:
    /// dot products over explicitly materialized windows.
    #[test]
    fn conv_matches_window_dot_oracle() {
        let mut r = crate::rng::stream(3, "conv-oracle");
        let (oc, ic, k, t) = (3usize, 2usize, 4usize, 9usize);
        let w = Array3::from_shape_fn((oc, ic, k), |_| r.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(oc, |_| r.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((ic, t), |_| r.random_range(-1.0..1.0));
        let y = conv_forward(&w, &b, &x);
        for o in 0..oc {
            for tt in 0..(t - k + 1) {
                let mut window = Vec::new();
                let mut weights = Vec::new();
                for c in 0..ic {
                    for q in 0..k {
                        window.push(x[[c, tt + q]]);
                        weights.push(w[[o, c, q]]);
                    }
                }
                let dot: f64 = window.iter().zip(&weights).map(|(a, b)| a * b).sum();
                assert!((y[[o, tt]] - (dot + b[o])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pool_takes_first_max_on_ties() {
        let x = array![[1.0, 1.0, 0.5, 2.0]];
        let (y, arg) = pool_forward(&x, 2);
        assert_eq!(y, array![[1.0, 2.0]]);
        assert_eq!(arg[[0, 0]], 0); // tie -> first index
        assert_eq!(arg[[0, 1]], 3);
    }

    #[test]
    fn sgd_arithmetic() {
        let arch = ArchSpec::parse("", 1, 1, 2).unwrap();
        let mut model = init_model(&arch, 0).unwrap();
        model.set_flat_params(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        sgd_step(&mut model, &[0.25, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(model.flat_params(), vec![0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn adam_first_steps_match_hand_recurrence() {
        let arch = ArchSpec::parse("", 1, 1, 2).unwrap();
        let mut model = init_model(&arch, 0).unwrap();
        model.set_flat_params(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut st = AdamState::new(4);
        let g1 = [0.5, -0.2, 0.0, 1.0];
        adam_step(&mut st, &mut model, &g1, 0.1).unwrap();
        // Hand recurrence, step 1: mhat = g, vhat = g^2, update = -eta*g/(|g|+eps).
        let p = model.flat_params();
        for i in 0..4 {
            let expect = -0.1 * g1[i] / (g1[i].abs() + 1e-8);
            assert!((p[i] - expect).abs() < 1e-12, "{} vs {}", p[i], expect);
        }
        // Step 2 with a different gradient, fully hand-evaluated.
        let g2 = [0.1, 0.4, 0.0, -1.0];
        let before = model.flat_params();
        adam_step(&mut st, &mut model, &g2, 0.1).unwrap();
        let after = model.flat_params();
        for i in 0..4 {
            let m2 = 0.9 * (0.1 * g1[i]) + 0.1 * g2[i];
            let v2 = 0.999 * (0.001 * g1[i] * g1[i]) + 0.001 * g2[i] * g2[i];
            let mhat = m2 / (1.0 - 0.9f64.powi(2));
            let vhat = v2 / (1.0 - 0.999f64.powi(2));
            let expect = before[i] - 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert!((after[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_grad_stream_keeps_model_fixed() {
        let arch = small_arch();
        let mut model = init_model(&arch, 11).unwrap();
        let before = model.flat_params();
        let mut st = AdamState::new(model.num_params());
        for _ in 0..3 {
            adam_step(&mut st, &mut model, &vec![0.0; before.len()], 0.05).unwrap();
        }
        assert_eq!(model.flat_params(), before);
    }

    #[test]
    fn weight_and_input_gradients_match_finite_differences() {
        let arch = small_arch();
        let model = init_model(&arch, 21).unwrap();
        let mut r = crate::rng::stream(22, "net-fd");
        let x = Array2::from_shape_fn((2, 10), |_| r.random_range(-1.0..1.0));
        let y = 1usize;
        let (_, gp) = loss_and_grads(&model, &[x.clone()], &[y]).unwrap();
        let eps = 1e-5;
        // Spot-check 20 random weight coordinates.
        let p0 = model.flat_params();
        for _ in 0..20 {
            let i = r.random_range(0..p0.len());
            let mut m2 = model.clone();
            let mut p = p0.clone();
            p[i] += eps;
            m2.set_flat_params(&p).unwrap();
            let (lp, _) = loss_and_grads(&m2, &[x.clone()], &[y]).unwrap();
            p[i] -= 2.0 * eps;
            m2.set_flat_params(&p).unwrap();
            let (lm, _) = loss_and_grads(&m2, &[x.clone()], &[y]).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (gp.weight_grad[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-3),
                "coord {i}: {} vs {}",
                gp.weight_grad[i],
                fd
            );
        }
        // Spot-check input coordinates.
        for _ in 0..20 {
            let (c, t) = (r.random_range(0..2), r.random_range(0..10));
            let mut xp = x.clone();
            xp[[c, t]] += eps;
            let (lp, _) = loss_and_grads(&model, &[xp.clone()], &[y]).unwrap();
            xp[[c, t]] -= 2.0 * eps;
            let (lm, _) = loss_and_grads(&model, &[xp], &[y]).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (gp.input_grad[0][[c, t]] - fd).abs() <= 1e-4 * fd.abs().max(1e-3),
                "input ({c},{t}): {} vs {}",
                gp.input_grad[0][[c, t]],
                fd
            );
        }
    }

    #[test]
    fn sgd_reaches_full_accuracy_on_a_separable_set() {
        // Two constant-level classes, linear classifier.
        let arch = ArchSpec::parse("", 1, 4, 2).unwrap();
        let mut model = init_model(&arch, 3).unwrap();
        let mut samples = Vec::new();
        let mut r = crate::rng::stream(4, "separable");
        for i in 0..20 {
            let base = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = Array2::from_shape_fn((1, 4), |_| base + 0.05 * r.random_range(-1.0..1.0));
            samples.push((x, (i % 2) as usize));
        }
        let batch: Vec<_> = samples.iter().map(|(x, _)| x.clone()).collect();
        let labels: Vec<_> = samples.iter().map(|(_, y)| *y).collect();
        let (initial, _) = loss_and_grads(&model, &batch, &labels).unwrap();
        for _ in 0..200 {
            let (_, gp) = loss_and_grads(&model, &batch, &labels).unwrap();
            sgd_step(&mut model, &gp.weight_grad, 0.5).unwrap();
        }
        let (fin, _) = loss_and_grads(&model, &batch, &labels).unwrap();
        assert!(fin < initial);
        assert_eq!(accuracy(&model, &samples).unwrap(), 1.0);
    }

    #[test]
    fn arch_errors_name_the_problem() {
        assert!(matches!(
            ArchSpec::parse("C:4,K:20", 1, 10, 2),
            Err(CoreError::Arch(_))
        ));
        assert!(matches!(
            ArchSpec::parse("Q:3", 1, 10, 2),
            Err(CoreError::Arch(_))
        ));
        assert!(matches!(
            ArchSpec::parse("P:40", 1, 10, 2),
            Err(CoreError::Arch(_))
        ));
    }
}
