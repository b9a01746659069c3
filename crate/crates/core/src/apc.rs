//! Recurrent speech encoder: a stack of unidirectional GRU layers over
//! log-mel frames. The final layer's hidden state is the speech
//! representation. A linear head predicting future frames exists only for
//! the self-supervised objective and is never applied on the inference path.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{GruCell, Linear};
use crate::weights::WeightStore;

pub const MEL_DIM: usize = 80;
pub const REPR_DIM: usize = 512;
pub const LAYERS: usize = 3;
/// Prediction horizon of the self-supervised objective.
pub const PREDICTION_SHIFT: usize = 3;

#[derive(Debug, Clone)]
pub struct ApcModel {
    layers: Vec<GruCell>,
    head: Option<Linear>,
    states: Vec<Vec<f32>>,
    scratch: Vec<f32>,
}

impl ApcModel {
    pub fn new(layers: Vec<GruCell>, head: Option<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("encoder needs at least one GRU layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(Error::dim(
                    "encoder layer chaining",
                    pair[0].hidden_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        let out = layers.last().unwrap().hidden_dim();
        if let Some(h) = &head {
            if h.input_dim() != out || h.output_dim() != layers[0].input_dim() {
                return Err(Error::dim(
                    "encoder head",
                    format!("[{}, {}]", layers[0].input_dim(), out),
                    format!("[{}, {}]", h.output_dim(), h.input_dim()),
                ));
            }
        }
        let states = layers.iter().map(|l| vec![0.0; l.hidden_dim()]).collect();
        let widest = layers.iter().map(GruCell::hidden_dim).max().unwrap();
        Ok(Self {
            layers,
            head,
            states,
            scratch: vec![0.0; widest],
        })
    }

    fn dims(input: usize, hidden: usize, layers: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..layers).map(move |l| (if l == 0 { input } else { hidden }, hidden))
    }

    pub fn zeros(input: usize, hidden: usize, layers: usize) -> Self {
        let cells = Self::dims(input, hidden, layers)
            .map(|(i, h)| GruCell::zeros(i, h))
            .collect();
        Self::new(cells, None).expect("consistent dims")
    }

    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let cells = Self::dims(input, hidden, layers)
            .map(|(i, h)| GruCell::random(i, h, rng))
            .collect();
        let head = Linear::random(hidden, input, rng);
        Self::new(cells, Some(head)).expect("consistent dims")
    }

    /// 80 → 512 → 512 → 512 with seeded random weights.
    pub fn random_default<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::random(MEL_DIM, REPR_DIM, LAYERS, rng)
    }

    /// Loads `apc.gru{1,2,3}.{weight_ih,weight_hh,bias_ih,bias_hh}` and the
    /// optional `apc.head.{weight,bias}`.
    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let mut layers = Vec::new();
        for l in 1.. {
            let prefix = format!("apc.gru{l}.");
            if !store.contains_prefix(&prefix) {
                break;
            }
            let get = |s: &str| store.require(&format!("{prefix}{s}")).cloned();
            layers.push(GruCell::new(
                get("weight_ih")?,
                get("weight_hh")?,
                get("bias_ih")?,
                get("bias_hh")?,
            )?);
        }
        if layers.is_empty() {
            return Err(Error::MissingTensor("apc.gru1.weight_ih".into()));
        }
        let head = match (store.get("apc.head.weight"), store.get("apc.head.bias")) {
            (Some(w), Some(b)) => Some(Linear::new(w.clone(), b.clone())?),
            _ => None,
        };
        Self::new(layers, head)
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        for (l, cell) in self.layers.iter().enumerate() {
            for (suffix, t) in cell.tensors() {
                store
                    .insert(format!("apc.gru{}.{suffix}", l + 1), t.clone())
                    .expect("unique");
            }
        }
        if let Some(h) = &self.head {
            store.insert("apc.head.weight", h.weight().clone()).expect("unique");
            store.insert("apc.head.bias", h.bias().clone()).expect("unique");
        }
        store
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().hidden_dim()
    }

    pub fn layers(&self) -> &[GruCell] {
        &self.layers
    }

    /// Trainable parameters of the GRU stack (the head excluded).
    pub fn gru_param_count(&self) -> usize {
        self.layers.iter().map(GruCell::param_count).sum()
    }

    pub fn reset(&mut self) {
        for s in &mut self.states {
            s.fill(0.0);
        }
    }

    /// Consumes one log-mel frame and returns the final-layer hidden state.
    pub fn step(&mut self, mel: &[f32]) -> Result<Vec<f32>> {
        if mel.len() != self.input_dim() {
            return Err(Error::dim("encoder input width", self.input_dim(), mel.len()));
        }
        for l in 0..self.layers.len() {
            let h = self.layers[l].hidden_dim();
            let (before, rest) = self.states.split_at_mut(l);
            let input: &[f32] = if l == 0 { mel } else { &before[l - 1] };
            let out = &mut self.scratch[..h];
            self.layers[l].step_into(input, &rest[0], out)?;
            rest[0].copy_from_slice(out);
        }
        let out = self.states.last().unwrap();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("speech encoder".into()));
        }
        Ok(out.clone())
    }

    pub fn forward<S: AsRef<[f32]>>(&mut self, frames: &[S]) -> Result<Vec<Vec<f32>>> {
        frames.iter().map(|f| self.step(f.as_ref())).collect()
    }

    /// Applies the training-time prediction head to a representation.
    pub fn predict_future(&self, repr: &[f32]) -> Result<Vec<f32>> {
        self.head
            .as_ref()
            .ok_or_else(|| Error::MissingTensor("apc.head.weight".into()))?
            .forward(repr)
    }
}

/// L1 objective of predicting the frame `shift` steps ahead:
/// `Σ_{i < T − shift} Σ_d |inputs[i + shift][d] − predictions[i][d]|`.
pub fn apc_loss<A: AsRef<[f32]>, B: AsRef<[f32]>>(inputs: &[A], predictions: &[B], shift: usize) -> Result<f64> {
    if inputs.len() != predictions.len() {
        return Err(Error::dim("loss sequence length", inputs.len(), predictions.len()));
    }
    if inputs.len() <= shift {
        return Err(Error::Domain(format!(
            "sequence length {} must exceed the prediction shift {shift}",
            inputs.len()
        )));
    }
    let mut total = 0.0f64;
    for i in 0..inputs.len() - shift {
        let x = inputs[i + shift].as_ref();
        let y = predictions[i].as_ref();
        if x.len() != y.len() {
            return Err(Error::dim("loss frame width", x.len(), y.len()));
        }
        total += x.iter().zip(y).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_dims_have_expected_parameter_count() {
        let model = ApcModel::zeros(MEL_DIM, REPR_DIM, LAYERS);
        assert_eq!(model.gru_param_count(), 4_064_256);
    }

    #[test]
    fn one_output_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ApcModel::random(80, 16, 3, &mut rng);
        let frames = vec![vec![0.1f32; 80]; 7];
        let out = model.forward(&frames).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(|v| v.len() == 16));
    }

    #[test]
    fn zero_weights_stay_zero() {
        let mut model = ApcModel::zeros(80, 8, 3);
        for _ in 0..3 {
            assert_eq!(model.step(&[1.0; 80]).unwrap(), vec![0.0; 8]);
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let mut model = ApcModel::zeros(80, 8, 3);
        assert!(matches!(model.step(&[0.0; 79]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn matches_unrolled_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut model = ApcModel::random(80, 24, 3, &mut rng);
        let frame: Vec<f32> = (0..80).map(|i| (i as f32 * 0.37).sin()).collect();
        let got = model.step(&frame).unwrap();

        let cells = model.layers().to_vec();
        let h1 = cells[0].step(&frame, &[0.0; 24]).unwrap();
        let h2 = cells[1].step(&h1, &[0.0; 24]).unwrap();
        let h3 = cells[2].step(&h2, &[0.0; 24]).unwrap();
        assert_eq!(got, h3);
    }

    #[test]
    fn streaming_equals_batch_and_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ApcModel::random(80, 12, 3, &mut rng);
        let frames: Vec<Vec<f32>> = (0..10)
            .map(|t| (0..80).map(|d| ((t * 80 + d) as f32 * 0.01).cos()).collect())
            .collect();
        let batch = model.clone().forward(&frames).unwrap();
        let mut streaming = model.clone();
        let one_by_one: Vec<_> = frames.iter().map(|f| streaming.step(f).unwrap()).collect();
        assert_eq!(batch, one_by_one);

        let mut altered = frames.clone();
        altered[6][3] += 5.0;
        let out = model.clone().forward(&altered).unwrap();
        assert_eq!(out[..6], batch[..6]);
        assert_ne!(out[6], batch[6]);
    }

    #[test]
    fn store_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = ApcModel::random(80, 8, 3, &mut rng);
        let back = ApcModel::from_store(&model.to_store()).unwrap();
        assert_eq!(back.to_store(), model.to_store());
        assert!(back.predict_future(&[0.0; 8]).is_ok());
    }

    #[test]
    fn loss_cases() {
        let xs: Vec<Vec<f32>> = (0..6).map(|t| vec![t as f32; 80]).collect();
        let shifted: Vec<Vec<f32>> = (0..6).map(|t| vec![(t + 3).min(5) as f32; 80]).collect();
        assert_eq!(apc_loss(&xs, &shifted, 3).unwrap(), 0.0);

        // T = 5, n = 3: two terms of 80 dims each differing by c
        let c = 0.75f32;
        let a = vec![vec![1.0f32; 80]; 5];
        let b = vec![vec![1.0f32 + c; 80]; 5];
        let direct: f64 = (0..2).map(|_| (0..80).map(|_| c as f64).sum::<f64>()).sum();
        assert_eq!(apc_loss(&a, &b, 3).unwrap(), direct);
        assert_eq!(direct, 2.0 * 80.0 * c as f64);

        assert!(matches!(apc_loss(&a[..3], &b[..3], 3), Err(Error::Domain(_))));
        assert_eq!(PREDICTION_SHIFT, 3);
    }
}
