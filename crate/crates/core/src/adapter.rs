//! The personalized age adapter.
//!
//! Three MLP stages turn a global W+ code and a target age into an additive
//! offset:
//!
//! * a Global MLP, shared across styles, compresses every style row to a
//!   small feature; the flattened 18 x `global_feat` block is projected to
//!   one 512-d global representation;
//! * an Aging MLP maps the normalized target age to an age feature;
//! * 18 independent Style MLPs each read their own style row, the global
//!   representation and the age feature, and emit that row's offset.
//!
//! Every MLP has two layers with a ReLU between them. The last layer of each
//! Style MLP starts at zero, so a fresh adapter returns a zero offset and the
//! personalized path initially coincides with the global one.
//!
//! Backpropagation is written out by hand; [`AdapterNetwork::backward`]
//! accumulates parameter gradients and returns the gradient with respect to
//! the input code, which the cycle pass needs.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayViewMut1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendBundle, BackendError};
use crate::image::ImageTensor;
use crate::latent::{AgeYears, LatentCode, NUM_STYLES, STYLE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterShape {
    pub global_hidden: usize,
    pub global_feat: usize,
    pub aging_hidden: usize,
    pub aging_feat: usize,
    pub style_hidden: usize,
}

impl Default for AdapterShape {
    fn default() -> Self {
        Self {
            global_hidden: 256,
            global_feat: 32,
            aging_hidden: 64,
            aging_feat: 16,
            style_hidden: 512,
        }
    }
}

impl AdapterShape {
    /// Hidden widths divided by `divisor`; feature widths and the 18 x 512
    /// interface are kept.
    pub fn reduced(divisor: usize) -> Self {
        let d = Self::default();
        let div = |w: usize| (w / divisor.max(1)).max(1);
        Self {
            global_hidden: div(d.global_hidden),
            aging_hidden: div(d.aging_hidden),
            style_hidden: div(d.style_hidden),
            ..d
        }
    }

    pub fn flat_global(&self) -> usize {
        NUM_STYLES * self.global_feat
    }

    pub fn style_input(&self) -> usize {
        2 * STYLE_DIM + self.aging_feat
    }
}

/// Names of the parameter tensors, in storage order.
pub const PARAM_NAMES: [&str; 14] = [
    "global_w1",
    "global_b1",
    "global_w2",
    "global_b2",
    "global_proj_w",
    "global_proj_b",
    "aging_w1",
    "aging_b1",
    "aging_w2",
    "aging_b2",
    "style_w1",
    "style_b1",
    "style_w2",
    "style_b2",
];

/// Trainable tensors of the adapter. Also used as the gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub global_w1: Array2<f64>,
    pub global_b1: Array1<f64>,
    pub global_w2: Array2<f64>,
    pub global_b2: Array1<f64>,
    pub global_proj_w: Array2<f64>,
    pub global_proj_b: Array1<f64>,
    pub aging_w1: Array2<f64>,
    pub aging_b1: Array1<f64>,
    pub aging_w2: Array2<f64>,
    pub aging_b2: Array1<f64>,
    pub style_w1: Array3<f64>,
    pub style_b1: Array2<f64>,
    pub style_w2: Array3<f64>,
    pub style_b2: Array2<f64>,
}

impl AdapterParams {
    pub fn zeros(shape: &AdapterShape) -> Self {
        Self {
            global_w1: Array2::zeros((shape.global_hidden, STYLE_DIM)),
            global_b1: Array1::zeros(shape.global_hidden),
            global_w2: Array2::zeros((shape.global_feat, shape.global_hidden)),
            global_b2: Array1::zeros(shape.global_feat),
            global_proj_w: Array2::zeros((STYLE_DIM, shape.flat_global())),
            global_proj_b: Array1::zeros(STYLE_DIM),
            aging_w1: Array2::zeros((shape.aging_hidden, 1)),
            aging_b1: Array1::zeros(shape.aging_hidden),
            aging_w2: Array2::zeros((shape.aging_feat, shape.aging_hidden)),
            aging_b2: Array1::zeros(shape.aging_feat),
            style_w1: Array3::zeros((NUM_STYLES, shape.style_hidden, shape.style_input())),
            style_b1: Array2::zeros((NUM_STYLES, shape.style_hidden)),
            style_w2: Array3::zeros((NUM_STYLES, STYLE_DIM, shape.style_hidden)),
            style_b2: Array2::zeros((NUM_STYLES, STYLE_DIM)),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 14] {
        fn sl<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            (PARAM_NAMES[0], sl(&self.global_w1)),
            (PARAM_NAMES[1], sl(&self.global_b1)),
            (PARAM_NAMES[2], sl(&self.global_w2)),
            (PARAM_NAMES[3], sl(&self.global_b2)),
            (PARAM_NAMES[4], sl(&self.global_proj_w)),
            (PARAM_NAMES[5], sl(&self.global_proj_b)),
            (PARAM_NAMES[6], sl(&self.aging_w1)),
            (PARAM_NAMES[7], sl(&self.aging_b1)),
            (PARAM_NAMES[8], sl(&self.aging_w2)),
            (PARAM_NAMES[9], sl(&self.aging_b2)),
            (PARAM_NAMES[10], sl(&self.style_w1)),
            (PARAM_NAMES[11], sl(&self.style_b1)),
            (PARAM_NAMES[12], sl(&self.style_w2)),
            (PARAM_NAMES[13], sl(&self.style_b2)),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 14] {
        fn sl<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        [
            (PARAM_NAMES[0], sl(&mut self.global_w1)),
            (PARAM_NAMES[1], sl(&mut self.global_b1)),
            (PARAM_NAMES[2], sl(&mut self.global_w2)),
            (PARAM_NAMES[3], sl(&mut self.global_b2)),
            (PARAM_NAMES[4], sl(&mut self.global_proj_w)),
            (PARAM_NAMES[5], sl(&mut self.global_proj_b)),
            (PARAM_NAMES[6], sl(&mut self.aging_w1)),
            (PARAM_NAMES[7], sl(&mut self.aging_b1)),
            (PARAM_NAMES[8], sl(&mut self.aging_w2)),
            (PARAM_NAMES[9], sl(&mut self.aging_b2)),
            (PARAM_NAMES[10], sl(&mut self.style_w1)),
            (PARAM_NAMES[11], sl(&mut self.style_b1)),
            (PARAM_NAMES[12], sl(&mut self.style_w2)),
            (PARAM_NAMES[13], sl(&mut self.style_b2)),
        ]
    }

    pub fn shapes(&self) -> [(&'static str, Vec<usize>); 14] {
        [
            (PARAM_NAMES[0], self.global_w1.shape().to_vec()),
            (PARAM_NAMES[1], self.global_b1.shape().to_vec()),
            (PARAM_NAMES[2], self.global_w2.shape().to_vec()),
            (PARAM_NAMES[3], self.global_b2.shape().to_vec()),
            (PARAM_NAMES[4], self.global_proj_w.shape().to_vec()),
            (PARAM_NAMES[5], self.global_proj_b.shape().to_vec()),
            (PARAM_NAMES[6], self.aging_w1.shape().to_vec()),
            (PARAM_NAMES[7], self.aging_b1.shape().to_vec()),
            (PARAM_NAMES[8], self.aging_w2.shape().to_vec()),
            (PARAM_NAMES[9], self.aging_b2.shape().to_vec()),
            (PARAM_NAMES[10], self.style_w1.shape().to_vec()),
            (PARAM_NAMES[11], self.style_b1.shape().to_vec()),
            (PARAM_NAMES[12], self.style_w2.shape().to_vec()),
            (PARAM_NAMES[13], self.style_b2.shape().to_vec()),
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill_zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Activations recorded by a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct AdapterTrace {
    input: Array2<f64>,
    age_norm: f64,
    global_pre: Array2<f64>,
    global_hidden: Array2<f64>,
    global_flat: Array1<f64>,
    aging_pre: Array1<f64>,
    aging_hidden: Array1<f64>,
    style_in: Array2<f64>,
    style_pre: Array2<f64>,
    style_hidden: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterNetwork {
    shape: AdapterShape,
    params: AdapterParams,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn uniform_fill(rng: &mut ChaCha8Rng, values: &mut [f64], bound: f64) {
    for v in values {
        *v = rng.random_range(-bound..bound);
    }
}

/// `out += scale * row` for two slices of equal length.
fn axpy(out: &mut ArrayViewMut1<f64>, scale: f64, row: &ArrayView1<f64>) {
    out.scaled_add(scale, row);
}

impl AdapterNetwork {
    /// Freshly initialized adapter: fan-in uniform weights, zero Style MLP
    /// output layers.
    pub fn new(shape: AdapterShape, seed: u64) -> Self {
        let mut params = AdapterParams::zeros(&shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        {
            let p = &mut params;
            uniform_fill(&mut rng, p.global_w1.as_slice_mut().unwrap(), fan(STYLE_DIM));
            uniform_fill(&mut rng, p.global_b1.as_slice_mut().unwrap(), fan(STYLE_DIM));
            uniform_fill(&mut rng, p.global_w2.as_slice_mut().unwrap(), fan(shape.global_hidden));
            uniform_fill(&mut rng, p.global_b2.as_slice_mut().unwrap(), fan(shape.global_hidden));
            uniform_fill(&mut rng, p.global_proj_w.as_slice_mut().unwrap(), fan(shape.flat_global()));
            uniform_fill(&mut rng, p.global_proj_b.as_slice_mut().unwrap(), fan(shape.flat_global()));
            uniform_fill(&mut rng, p.aging_w1.as_slice_mut().unwrap(), 1.0);
            uniform_fill(&mut rng, p.aging_b1.as_slice_mut().unwrap(), 1.0);
            uniform_fill(&mut rng, p.aging_w2.as_slice_mut().unwrap(), fan(shape.aging_hidden));
            uniform_fill(&mut rng, p.aging_b2.as_slice_mut().unwrap(), fan(shape.aging_hidden));
            uniform_fill(&mut rng, p.style_w1.as_slice_mut().unwrap(), fan(shape.style_input()));
            uniform_fill(&mut rng, p.style_b1.as_slice_mut().unwrap(), fan(shape.style_input()));
        }
        Self { shape, params }
    }

    pub fn from_params(shape: AdapterShape, params: AdapterParams) -> Result<Self, BackendError> {
        let expected = AdapterParams::zeros(&shape);
        if expected.shapes() != params.shapes() {
            return Err(BackendError::Shape("adapter parameters do not match shape".into()));
        }
        if !params.is_finite() {
            return Err(BackendError::Domain("non-finite adapter parameter".into()));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &AdapterShape {
        &self.shape
    }

    pub fn params(&self) -> &AdapterParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut AdapterParams {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Randomizes the zero-initialized Style MLP output layers. Used to get
    /// a non-trivial adapter in tests and benchmarks.
    pub fn perturb_output_layers(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = scale / (self.shape.style_hidden as f64).sqrt();
        uniform_fill(&mut rng, self.params.style_w2.as_slice_mut().unwrap(), bound);
        uniform_fill(&mut rng, self.params.style_b2.as_slice_mut().unwrap(), bound);
    }

    pub fn forward(&self, code: &LatentCode, target_age: AgeYears) -> Result<LatentCode, BackendError> {
        self.forward_traced(code, target_age).map(|(offset, _)| offset)
    }

    pub fn forward_traced(
        &self,
        code: &LatentCode,
        target_age: AgeYears,
    ) -> Result<(LatentCode, AdapterTrace), BackendError> {
        let p = &self.params;
        let s = &self.shape;
        let input = code.styles().clone();
        let age_norm = target_age.normalized();

        let mut global_pre = input.dot(&p.global_w1.t());
        global_pre += &p.global_b1;
        let global_hidden = global_pre.mapv(relu);
        let mut global_feat = global_hidden.dot(&p.global_w2.t());
        global_feat += &p.global_b2;
        let global_flat = global_feat
            .into_shape_with_order(s.flat_global())
            .expect("row-major flatten");
        let w_global = p.global_proj_w.dot(&global_flat) + &p.global_proj_b;

        let aging_pre = &p.aging_w1.column(0) * age_norm + &p.aging_b1;
        let aging_hidden = aging_pre.mapv(relu);
        let aging_feat = p.aging_w2.dot(&aging_hidden) + &p.aging_b2;

        let mut style_in = Array2::zeros((NUM_STYLES, s.style_input()));
        for (k, mut row) in style_in.rows_mut().into_iter().enumerate() {
            row.slice_mut(ndarray::s![..STYLE_DIM]).assign(&input.row(k));
            row.slice_mut(ndarray::s![STYLE_DIM..2 * STYLE_DIM]).assign(&w_global);
            row.slice_mut(ndarray::s![2 * STYLE_DIM..]).assign(&aging_feat);
        }
        let mut style_pre = Array2::zeros((NUM_STYLES, s.style_hidden));
        let mut offset = Array2::zeros((NUM_STYLES, STYLE_DIM));
        for k in 0..NUM_STYLES {
            let pre = p.style_w1.index_axis(Axis(0), k).dot(&style_in.row(k)) + &p.style_b1.row(k);
            let hidden = pre.mapv(relu);
            let out = p.style_w2.index_axis(Axis(0), k).dot(&hidden) + &p.style_b2.row(k);
            style_pre.row_mut(k).assign(&pre);
            offset.row_mut(k).assign(&out);
        }
        let style_hidden = style_pre.mapv(relu);

        let offset = LatentCode::from_array(offset)
            .map_err(|e| BackendError::Domain(format!("adapter offset: {e}")))?;
        let trace = AdapterTrace {
            input,
            age_norm,
            global_pre,
            global_hidden,
            global_flat,
            aging_pre,
            aging_hidden,
            style_in,
            style_pre,
            style_hidden,
        };
        Ok((offset, trace))
    }

    /// Accumulates d(loss)/d(params) into `grads` and returns d(loss)/d(code).
    pub fn backward(
        &self,
        trace: &AdapterTrace,
        grad_offset: &Array2<f64>,
        grads: &mut AdapterParams,
    ) -> Array2<f64> {
        let p = &self.params;
        let s = &self.shape;
        let mut grad_input = Array2::<f64>::zeros((NUM_STYLES, STYLE_DIM));
        let mut grad_w_global = Array1::<f64>::zeros(STYLE_DIM);
        let mut grad_aging_feat = Array1::<f64>::zeros(s.aging_feat);

        for k in 0..NUM_STYLES {
            let d_out = grad_offset.row(k);
            let hidden = trace.style_hidden.row(k);
            let pre = trace.style_pre.row(k);
            let z = trace.style_in.row(k);
            let w2 = p.style_w2.index_axis(Axis(0), k);
            let w1 = p.style_w1.index_axis(Axis(0), k);

            {
                let mut gw2 = grads.style_w2.index_axis_mut(Axis(0), k);
                for (i, mut row) in gw2.rows_mut().into_iter().enumerate() {
                    if d_out[i] != 0.0 {
                        axpy(&mut row, d_out[i], &hidden);
                    }
                }
            }
            grads.style_b2.row_mut(k).scaled_add(1.0, &d_out);

            let d_hidden = w2.t().dot(&d_out);
            let d_pre: Array1<f64> = d_hidden
                .iter()
                .zip(pre.iter())
                .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                .collect();

            let mut d_z = Array1::<f64>::zeros(s.style_input());
            {
                let mut gw1 = grads.style_w1.index_axis_mut(Axis(0), k);
                for (i, mut row) in gw1.rows_mut().into_iter().enumerate() {
                    let g = d_pre[i];
                    if g != 0.0 {
                        axpy(&mut row, g, &z);
                        d_z.scaled_add(g, &w1.row(i));
                    }
                }
            }
            grads.style_b1.row_mut(k).scaled_add(1.0, &d_pre);

            grad_input
                .row_mut(k)
                .scaled_add(1.0, &d_z.slice(ndarray::s![..STYLE_DIM]));
            grad_w_global.scaled_add(1.0, &d_z.slice(ndarray::s![STYLE_DIM..2 * STYLE_DIM]));
            grad_aging_feat.scaled_add(1.0, &d_z.slice(ndarray::s![2 * STYLE_DIM..]));
        }

        // Aging MLP.
        for (i, mut row) in grads.aging_w2.rows_mut().into_iter().enumerate() {
            row.scaled_add(grad_aging_feat[i], &trace.aging_hidden);
        }
        grads.aging_b2 += &grad_aging_feat;
        let d_aging_hidden = p.aging_w2.t().dot(&grad_aging_feat);
        for i in 0..s.aging_hidden {
            if trace.aging_pre[i] > 0.0 {
                grads.aging_w1[[i, 0]] += d_aging_hidden[i] * trace.age_norm;
                grads.aging_b1[i] += d_aging_hidden[i];
            }
        }

        // Global MLP and projection.
        for (i, mut row) in grads.global_proj_w.rows_mut().into_iter().enumerate() {
            if grad_w_global[i] != 0.0 {
                row.scaled_add(grad_w_global[i], &trace.global_flat);
            }
        }
        grads.global_proj_b += &grad_w_global;
        let d_flat = p.global_proj_w.t().dot(&grad_w_global);
        let d_feat = d_flat
            .into_shape_with_order((NUM_STYLES, s.global_feat))
            .expect("row-major reshape");
        general_mat_mul(1.0, &d_feat.t(), &trace.global_hidden, 1.0, &mut grads.global_w2);
        grads.global_b2 += &d_feat.sum_axis(Axis(0));
        let mut d_pre = d_feat.dot(&p.global_w2);
        ndarray::Zip::from(&mut d_pre)
            .and(&trace.global_pre)
            .for_each(|g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            });
        general_mat_mul(1.0, &d_pre.t(), &trace.input, 1.0, &mut grads.global_w1);
        grads.global_b1 += &d_pre.sum_axis(Axis(0));
        general_mat_mul(1.0, &d_pre, &p.global_w1, 1.0, &mut grad_input);

        grad_input
    }
}

/// Free-function form of [`AdapterNetwork::forward`].
pub fn adapter_forward(
    net: &AdapterNetwork,
    code: &LatentCode,
    target_age: AgeYears,
) -> Result<LatentCode, BackendError> {
    net.forward(code, target_age)
}

/// y = D(E(x, a) + AN(E(x, a), a)). With `net == None` the adapter is
/// bypassed and the result is the global path.
///
/// Returns the decoded image and the combined code that was decoded.
pub fn personalized_reage(
    bundle: &BackendBundle,
    net: Option<&AdapterNetwork>,
    image: &ImageTensor,
    target_age: AgeYears,
) -> Result<(ImageTensor, LatentCode), BackendError> {
    let global = bundle.encode(image, target_age)?;
    let combined = match net {
        Some(net) => {
            let offset = net.forward(&global, target_age)?;
            global
                .add(&offset)
                .map_err(|e| BackendError::Domain(e.to_string()))?
        }
        None => global,
    };
    let out = bundle.decode(&combined)?;
    Ok((out, combined))
}
