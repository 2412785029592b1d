//! Recurrent discharge model: per-channel embeddings averaged per day,
//! one 64-unit GRU layer, three sigmoid heads (discharge-in-24h,
//! inpatient-now, inpatient-next-step), inverted dropout, Adam, and manual
//! backpropagation through time. Everything is f64 so gradients can be
//! checked against central finite differences.

mod adam;
mod net;
#[cfg(test)]
pub(crate) mod testutil;
mod train;

pub use adam::{adam_step, AdamState};
pub use net::{batch_loss, forward_sequence, loss_and_grads, DropoutMode};
pub use train::{probe_auroc, train_gru, EpochLog, TrainedGru, ValidationProbe};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::CHANNELS;
use crate::rng::{SeedBank, Stream};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn uniform(rows: usize, cols: usize, bound: f64, stream: &mut Stream) -> Self {
        let data = (0..rows * cols).map(|_| stream.range_f64(-bound, bound)).collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn validate_shape(&self) -> Result<()> {
        if self.rows.checked_mul(self.cols) != Some(self.data.len()) {
            return Err(Error::data(format!(
                "matrix shape {}x{} does not match {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite matrix entry"));
        }
        Ok(())
    }
}

/// y += M x
#[inline]
pub(crate) fn matvec_add(m: &Matrix, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(m.cols, x.len());
    debug_assert_eq!(m.rows, y.len());
    for (o, yo) in y.iter_mut().enumerate() {
        let row = m.row(o);
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *yo += acc;
    }
}

/// x += M^T dy
#[inline]
pub(crate) fn matvec_t_add(m: &Matrix, dy: &[f64], x: &mut [f64]) {
    debug_assert_eq!(m.rows, dy.len());
    debug_assert_eq!(m.cols, x.len());
    for (o, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (xi, a) in x.iter_mut().zip(m.row(o)) {
            *xi += d * a;
        }
    }
}

/// G += dy (outer) x
#[inline]
pub(crate) fn outer_add(g: &mut Matrix, dy: &[f64], x: &[f64]) {
    debug_assert_eq!(g.rows, dy.len());
    debug_assert_eq!(g.cols, x.len());
    for (o, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (gi, xi) in g.row_mut(o).iter_mut().zip(x) {
            *gi += d * xi;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    /// One 25-dimensional table per feature channel.
    PerFeature25,
    /// Two 50-dimensional tables: internal factors (diagnosis, lab code,
    /// lab category) and external factors (procedure, medication,
    /// encounter type).
    Grouped50,
}

pub const PER_FEATURE_DIM: usize = 25;
pub const GROUPED_DIM: usize = 50;
/// CHANNELS indices of the "internal" group under [`EmbedMode::Grouped50`].
pub const INTERNAL_GROUP: [usize; 3] = [0, 3, 4];
pub const EXTERNAL_GROUP: [usize; 3] = [1, 2, 5];

/// How channel tokens map into embedding tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedLayout {
    pub mode: EmbedMode,
    /// (vocab size, embedding dim) per table.
    pub tables: Vec<(usize, usize)>,
    /// channel slot -> (table, offset of the channel's tokens inside it).
    pub channel_map: Vec<(usize, usize)>,
}

impl EmbedLayout {
    pub fn new(mode: EmbedMode, channel_vocab_sizes: &[usize]) -> Result<Self> {
        match mode {
            EmbedMode::PerFeature25 => Ok(EmbedLayout {
                mode,
                tables: channel_vocab_sizes.iter().map(|&v| (v, PER_FEATURE_DIM)).collect(),
                channel_map: (0..channel_vocab_sizes.len()).map(|i| (i, 0)).collect(),
            }),
            EmbedMode::Grouped50 => {
                if channel_vocab_sizes.len() != CHANNELS.len() {
                    return Err(Error::config(format!(
                        "grouped embedding expects {} channels",
                        CHANNELS.len()
                    )));
                }
                let mut channel_map = vec![(0usize, 0usize); channel_vocab_sizes.len()];
                let mut tables = Vec::new();
                for (table, members) in [INTERNAL_GROUP, EXTERNAL_GROUP].iter().enumerate() {
                    let mut offset = 0;
                    for &c in members.iter() {
                        channel_map[c] = (table, offset);
                        offset += channel_vocab_sizes[c];
                    }
                    tables.push((offset, GROUPED_DIM));
                }
                Ok(EmbedLayout { mode, tables, channel_map })
            }
        }
    }

    /// Width of the embedding concat (one mean vector per table).
    pub fn concat_width(&self) -> usize {
        self.tables.iter().map(|&(_, d)| d).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Discharge24,
    InpatientNow,
    InpatientNext,
}

pub const TASKS: [Task; 3] = [Task::Discharge24, Task::InpatientNow, Task::InpatientNext];

impl Task {
    pub fn head(&self) -> usize {
        match self {
            Task::Discharge24 => 0,
            Task::InpatientNow => 1,
            Task::InpatientNext => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSchedule {
    /// discharge24 -> inpatient_now -> inpatient_next, repeating per batch.
    RoundRobin,
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub embed_mode: EmbedMode,
    pub hidden: usize,
    pub batch_size: usize,
    pub task_schedule: TaskSchedule,
    /// Chunk length for truncated backpropagation through time; None
    /// backpropagates through the whole sequence.
    pub bptt_chunk: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.003,
            dropout: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            embed_mode: EmbedMode::PerFeature25,
            hidden: 64,
            batch_size: 16,
            task_schedule: TaskSchedule::RoundRobin,
            bptt_chunk: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden size must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}

/// All trainable parameters. Field order is the canonical flattening order
/// shared by gradients, Adam state, and the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParameters {
    pub layout: EmbedLayout,
    pub hidden: usize,
    pub demo_width: usize,
    pub embeddings: Vec<Matrix>,
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

impl GruParameters {
    pub fn input_width(&self) -> usize {
        self.layout.concat_width() + self.demo_width
    }

    pub fn zeros_like(&self) -> GruParameters {
        GruParameters {
            layout: self.layout.clone(),
            hidden: self.hidden,
            demo_width: self.demo_width,
            embeddings: self
                .embeddings
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
            w_z: Matrix::zeros(self.w_z.rows, self.w_z.cols),
            u_z: Matrix::zeros(self.u_z.rows, self.u_z.cols),
            b_z: vec![0.0; self.b_z.len()],
            w_r: Matrix::zeros(self.w_r.rows, self.w_r.cols),
            u_r: Matrix::zeros(self.u_r.rows, self.u_r.cols),
            b_r: vec![0.0; self.b_r.len()],
            w_h: Matrix::zeros(self.w_h.rows, self.w_h.cols),
            u_h: Matrix::zeros(self.u_h.rows, self.u_h.cols),
            b_h: vec![0.0; self.b_h.len()],
            head_w: Matrix::zeros(self.head_w.rows, self.head_w.cols),
            head_b: vec![0.0; self.head_b.len()],
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.embeddings.iter().map(|m| m.data.as_slice()).collect();
        out.extend([
            self.w_z.data.as_slice(),
            self.u_z.data.as_slice(),
            self.b_z.as_slice(),
            self.w_r.data.as_slice(),
            self.u_r.data.as_slice(),
            self.b_r.as_slice(),
            self.w_h.data.as_slice(),
            self.u_h.data.as_slice(),
            self.b_h.as_slice(),
            self.head_w.data.as_slice(),
            self.head_b.as_slice(),
        ]);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> =
            self.embeddings.iter_mut().map(|m| m.data.as_mut_slice()).collect();
        out.extend([
            self.w_z.data.as_mut_slice(),
            self.u_z.data.as_mut_slice(),
            self.b_z.as_mut_slice(),
            self.w_r.data.as_mut_slice(),
            self.u_r.data.as_mut_slice(),
            self.b_r.as_mut_slice(),
            self.w_h.data.as_mut_slice(),
            self.u_h.data.as_mut_slice(),
            self.b_h.as_mut_slice(),
            self.head_w.data.as_mut_slice(),
            self.head_b.as_mut_slice(),
        ]);
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Shape consistency for untrusted model files.
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::data("hidden size must be positive"));
        }
        if self.layout.channel_map.len() != self.embeddings.len()
            && self.layout.mode == EmbedMode::PerFeature25
        {
            return Err(Error::data("embedding tables do not match channel map"));
        }
        if self.layout.tables.len() != self.embeddings.len() {
            return Err(Error::data("embedding tables do not match layout"));
        }
        for (m, &(vocab, dim)) in self.embeddings.iter().zip(&self.layout.tables) {
            m.validate_shape()?;
            if m.rows != vocab || m.cols != dim {
                return Err(Error::data("embedding table shape mismatch"));
            }
        }
        for (table, offset) in &self.layout.channel_map {
            if *table >= self.layout.tables.len() || *offset > self.layout.tables[*table].0 {
                return Err(Error::data("channel map points outside its table"));
            }
        }
        let x = self.input_width();
        for (name, m, rows, cols) in [
            ("w_z", &self.w_z, self.hidden, x),
            ("u_z", &self.u_z, self.hidden, self.hidden),
            ("w_r", &self.w_r, self.hidden, x),
            ("u_r", &self.u_r, self.hidden, self.hidden),
            ("w_h", &self.w_h, self.hidden, x),
            ("u_h", &self.u_h, self.hidden, self.hidden),
            ("head_w", &self.head_w, 3, self.hidden),
        ] {
            m.validate_shape()?;
            if m.rows != rows || m.cols != cols {
                return Err(Error::data(format!("{name} has wrong shape")));
            }
        }
        for (name, b, len) in [
            ("b_z", &self.b_z, self.hidden),
            ("b_r", &self.b_r, self.hidden),
            ("b_h", &self.b_h, self.hidden),
            ("head_b", &self.head_b, 3),
        ] {
            if b.len() != len {
                return Err(Error::data(format!("{name} has wrong length")));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }
}

/// Deterministic initialization: gate weights uniform in
/// +-sqrt(6/(fan_in+fan_out)), biases zero, embeddings uniform +-0.05.
pub fn init_gru(
    channel_vocab_sizes: &[usize],
    demo_width: usize,
    config: &TrainConfig,
) -> Result<GruParameters> {
    config.validate()?;
    let layout = EmbedLayout::new(config.embed_mode, channel_vocab_sizes)?;
    let hidden = config.hidden;
    let x_dim = layout.concat_width() + demo_width;
    if x_dim == 0 {
        return Err(Error::config("recurrent input width is zero"));
    }
    let mut stream = SeedBank::new(config.seed).stream("gru-init");
    let embeddings = layout
        .tables
        .iter()
        .map(|&(vocab, dim)| Matrix::uniform(vocab, dim, 0.05, &mut stream))
        .collect();
    let gate_w = |s: &mut Stream| {
        let bound = (6.0 / (x_dim + hidden) as f64).sqrt();
        Matrix::uniform(hidden, x_dim, bound, s)
    };
    let gate_u = |s: &mut Stream| {
        let bound = (6.0 / (hidden + hidden) as f64).sqrt();
        Matrix::uniform(hidden, hidden, bound, s)
    };
    let w_z = gate_w(&mut stream);
    let u_z = gate_u(&mut stream);
    let w_r = gate_w(&mut stream);
    let u_r = gate_u(&mut stream);
    let w_h = gate_w(&mut stream);
    let u_h = gate_u(&mut stream);
    let head_bound = (6.0 / (hidden + 3) as f64).sqrt();
    let head_w = Matrix::uniform(3, hidden, head_bound, &mut stream);
    Ok(GruParameters {
        layout,
        hidden,
        demo_width,
        embeddings,
        w_z,
        u_z,
        b_z: vec![0.0; hidden],
        w_r,
        u_r,
        b_r: vec![0.0; hidden],
        w_h,
        u_h,
        b_h: vec![0.0; hidden],
        head_w,
        head_b: vec![0.0; 3],
    })
}

/// Versioned on-disk model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GruModelFile {
    pub version: u32,
    pub config: TrainConfig,
    pub params: GruParameters,
}

pub const GRU_MODEL_VERSION: u32 = 1;

/// Parse and validate a recurrent model file from untrusted bytes.
pub fn parse_gru_model(bytes: &[u8]) -> Result<GruModelFile> {
    let file: GruModelFile = serde_json::from_slice(bytes)?;
    if file.version != GRU_MODEL_VERSION {
        return Err(Error::data(format!("unsupported model version {}", file.version)));
    }
    file.config.validate()?;
    file.params.validate()?;
    Ok(file)
}
