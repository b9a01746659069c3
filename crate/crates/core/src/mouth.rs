//! Speech representation → 3D mouth-landmark displacements.
//!
//! A stacked LSTM runs over the representation stream and an MLP decodes
//! its state. The lookahead is realized by delaying emission: the output for
//! frame `t` is decoded from the LSTM state after consuming frame `t + d`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Linear, LstmCell};
use crate::weights::WeightStore;

pub const MOUTH_POINTS: usize = 25;
pub const DEFAULT_DELAY: usize = 18;
pub const LSTM_HIDDEN: usize = 256;
pub const MLP_WIDTHS: [usize; 3] = [256, 512, MOUTH_POINTS * 3];

#[derive(Debug, Clone, PartialEq)]
pub struct MouthDisplacement {
    /// Offsets from the target's mean mouth positions, object space.
    pub delta: Vec<[f32; 3]>,
    pub frame_index: u64,
}

impl MouthDisplacement {
    pub fn zeros(frame_index: u64) -> Self {
        Self {
            delta: vec![[0.0; 3]; MOUTH_POINTS],
            frame_index,
        }
    }

    pub fn flat(&self) -> Vec<f32> {
        self.delta.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct MouthModel {
    lstm: Vec<LstmCell>,
    mlp: Vec<Linear>,
    delay: usize,
    hidden: Vec<Vec<f32>>,
    cell: Vec<Vec<f32>>,
    consumed: u64,
}

impl MouthModel {
    pub fn new(lstm: Vec<LstmCell>, mlp: Vec<Linear>, delay: usize) -> Result<Self> {
        if lstm.is_empty() || mlp.is_empty() {
            return Err(Error::Domain("mouth model needs LSTM and MLP layers".into()));
        }
        for pair in lstm.windows(2) {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(Error::dim(
                    "mouth LSTM chaining",
                    pair[0].hidden_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        let mut width = lstm.last().unwrap().hidden_dim();
        for layer in &mlp {
            if layer.input_dim() != width {
                return Err(Error::dim("mouth MLP chaining", width, layer.input_dim()));
            }
            width = layer.output_dim();
        }
        if width != MOUTH_POINTS * 3 {
            return Err(Error::dim("mouth MLP output", MOUTH_POINTS * 3, width));
        }
        let hidden = lstm.iter().map(|l| vec![0.0; l.hidden_dim()]).collect();
        let cell = lstm.iter().map(|l| vec![0.0; l.hidden_dim()]).collect();
        Ok(Self {
            lstm,
            mlp,
            delay,
            hidden,
            cell,
            consumed: 0,
        })
    }

    pub fn zeros(input: usize, delay: usize) -> Self {
        let lstm = (0..3)
            .map(|l| LstmCell::zeros(if l == 0 { input } else { LSTM_HIDDEN }, LSTM_HIDDEN))
            .collect();
        let mut prev = LSTM_HIDDEN;
        let mlp = MLP_WIDTHS
            .iter()
            .map(|&w| {
                let l = Linear::zeros(prev, w);
                prev = w;
                l
            })
            .collect();
        Self::new(lstm, mlp, delay).expect("consistent dims")
    }

    /// Seeded random weights with a damped output layer so decoded offsets
    /// stay at landmark scale. Not a trained model.
    pub fn random<R: Rng + ?Sized>(input: usize, delay: usize, rng: &mut R) -> Self {
        let lstm = (0..3)
            .map(|l| LstmCell::random(if l == 0 { input } else { LSTM_HIDDEN }, LSTM_HIDDEN, rng))
            .collect();
        let mut prev = LSTM_HIDDEN;
        let mut mlp: Vec<Linear> = MLP_WIDTHS
            .iter()
            .map(|&w| {
                let l = Linear::random(prev, w, rng);
                prev = w;
                l
            })
            .collect();
        let out = mlp.last_mut().unwrap();
        for v in out.weight_mut().data_mut() {
            *v *= 0.02;
        }
        out.bias_mut().data_mut().fill(0.0);
        Self::new(lstm, mlp, delay).expect("consistent dims")
    }

    /// Loads `mouth.lstm{1,2,3}.{weight_ih,weight_hh,bias}` and
    /// `mouth.mlp{1,2,3}.{weight,bias}`.
    pub fn from_store(store: &WeightStore, delay: usize) -> Result<Self> {
        let get = |n: String| store.require(&n).cloned();
        let mut lstm = Vec::new();
        for l in 1.. {
            let p = format!("mouth.lstm{l}.");
            if !store.contains_prefix(&p) {
                break;
            }
            lstm.push(LstmCell::new(
                get(format!("{p}weight_ih"))?,
                get(format!("{p}weight_hh"))?,
                get(format!("{p}bias"))?,
            )?);
        }
        let mut mlp = Vec::new();
        for l in 1.. {
            let p = format!("mouth.mlp{l}.");
            if !store.contains_prefix(&p) {
                break;
            }
            mlp.push(Linear::new(get(format!("{p}weight"))?, get(format!("{p}bias"))?)?);
        }
        if lstm.is_empty() {
            return Err(Error::MissingTensor("mouth.lstm1.weight_ih".into()));
        }
        if mlp.is_empty() {
            return Err(Error::MissingTensor("mouth.mlp1.weight".into()));
        }
        Self::new(lstm, mlp, delay)
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        for (l, cell) in self.lstm.iter().enumerate() {
            for (suffix, t) in cell.tensors() {
                store
                    .insert(format!("mouth.lstm{}.{suffix}", l + 1), t.clone())
                    .expect("unique");
            }
        }
        for (l, layer) in self.mlp.iter().enumerate() {
            store
                .insert(format!("mouth.mlp{}.weight", l + 1), layer.weight().clone())
                .expect("unique");
            store
                .insert(format!("mouth.mlp{}.bias", l + 1), layer.bias().clone())
                .expect("unique");
        }
        store
    }

    pub fn input_dim(&self) -> usize {
        self.lstm[0].input_dim()
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn param_count(&self) -> usize {
        self.lstm.iter().map(LstmCell::param_count).sum::<usize>()
            + self.mlp.iter().map(Linear::param_count).sum::<usize>()
    }

    pub fn reset(&mut self) {
        self.hidden
            .iter_mut()
            .chain(self.cell.iter_mut())
            .for_each(|v| v.fill(0.0));
        self.consumed = 0;
    }

    /// Consumes the representation of the next frame. Returns nothing for
    /// the first `delay` calls; afterwards returns the displacement for frame
    /// `calls − 1 − delay`.
    pub fn step(&mut self, repr: &[f32]) -> Result<Option<MouthDisplacement>> {
        if repr.len() != self.input_dim() {
            return Err(Error::dim("mouth input width", self.input_dim(), repr.len()));
        }
        for l in 0..self.lstm.len() {
            let (h_prev, h_rest) = self.hidden.split_at_mut(l);
            let input: &[f32] = if l == 0 { repr } else { &h_prev[l - 1] };
            let (h, c) = self.lstm[l].step(input, &h_rest[0], &self.cell[l])?;
            h_rest[0] = h;
            self.cell[l] = c;
        }
        self.consumed += 1;
        if self.consumed <= self.delay as u64 {
            return Ok(None);
        }
        let frame_index = self.consumed - 1 - self.delay as u64;

        let mut x = self.hidden.last().unwrap().clone();
        let last = self.mlp.len() - 1;
        for (i, layer) in self.mlp.iter().enumerate() {
            x = layer.forward(&x)?;
            if i < last {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mouth predictor".into()));
        }
        Ok(Some(MouthDisplacement {
            delta: x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            frame_index,
        }))
    }
}

/// `Σ_t Σ_i ‖pred[t][i] − gt[t][i]‖²`.
pub fn mouth_l2_loss(pred: &[MouthDisplacement], gt: &[MouthDisplacement]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::dim("displacement sequence length", gt.len(), pred.len()));
    }
    let mut total = 0.0f64;
    for (p, g) in pred.iter().zip(gt) {
        if p.delta.len() != g.delta.len() {
            return Err(Error::dim("displacement point count", g.delta.len(), p.delta.len()));
        }
        for (a, b) in p.delta.iter().zip(&g.delta) {
            total += (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum::<f64>();
        }
    }
    Ok(total)
}

/// Builds a displacement from a flat 75-vector.
pub fn displacement_from_flat(values: &[f32], frame_index: u64) -> Result<MouthDisplacement> {
    if values.len() != MOUTH_POINTS * 3 {
        return Err(Error::dim("mouth displacement", MOUTH_POINTS * 3, values.len()));
    }
    Ok(MouthDisplacement {
        delta: values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        frame_index,
    })
}
