//! Fixed-point network quantization and bit-exact integer inference.
//!
//! A float net's parameters are rescaled per layer so the largest one lands
//! on the top of the signed k-bit range, rounded, and stored as integers.
//! Inference then runs entirely on integers: widened multiply-accumulate,
//! then for each hidden layer an arithmetic right shift to pull magnitudes
//! back down and a saturating store into the k-bit range. The final pair of
//! sums skips the store and feeds the class comparison at full accumulator
//! width. The same bits in always produce the same logits out, on any
//! platform.

use ndarray::Array2;

use crate::dataset::Dataset;
use crate::neural::{Batch, EvalReport, FeedforwardNet, InputMode, NetShape, NeuralError};

/// Bumped when the quantized container layout changes.
pub const QMODEL_VERSION: u32 = 1;

const QMODEL_MAGIC: &str = "ftqec-qmodel";

/// Fraction of activations allowed to saturate before calibration bumps a
/// layer's shift.
const SATURATION_BUDGET: f64 = 1e-3;

/// Smallest number of bits holding `n` distinct nonnegative values minus
/// one, i.e. the ceiling of log2(n).
pub fn ceil_log2(n: u64) -> u32 {
    assert!(n >= 1);
    64 - (n - 1).leading_zeros()
}

/// Signed k-bit parameter range: one step short of symmetric at the bottom,
/// so the scale rule can place the largest parameter exactly on `2^(k-1)`.
pub fn qrange(k: u32) -> (i64, i64) {
    let top = 1i64 << (k - 1);
    (-top + 1, top)
}

/// Right shift applied after accumulating over `fan_in` inputs, before
/// calibration has a say.
pub fn default_shift(fan_in: usize) -> u32 {
    ceil_log2(fan_in as u64 + 1) - 1
}

/// Integer mirror of one affine layer plus its post-accumulation shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QLayer {
    pub w: Array2<i64>,
    pub b: Vec<i64>,
    pub shift: u32,
}

/// Integer twin of a [`FeedforwardNet`]: same shape, k-bit parameters,
/// per-layer shifts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedNet {
    pub k: u32,
    pub shape: NetShape,
    pub heads: [Vec<QLayer>; 2],
}

/// Rescale and round every layer into signed k-bit integers. Each layer's
/// scale is `2^(k-1)` over its largest parameter magnitude (scale 1 for an
/// all-zero layer); hidden layers' shifts start at [`default_shift`] of the
/// fan-in. The output layer keeps shift 0: its pair of sums goes straight
/// to the comparison at accumulator width instead of being stored back into
/// k bits, so truncating it would only erase small logit gaps.
pub fn quantize(net: &FeedforwardNet, k: u32) -> QuantizedNet {
    assert!(k >= 2, "need at least two bits");
    let max_fan = net
        .heads
        .iter()
        .flatten()
        .map(|l| l.w.nrows())
        .max()
        .expect("net has layers");
    assert!(
        2 * k + ceil_log2(max_fan as u64 + 1) <= 63,
        "accumulators would not hold a worst-case sum at k = {k}"
    );
    let (lo, hi) = qrange(k);
    let top = (1u64 << (k - 1)) as f64;
    let heads = [0, 1].map(|h| {
        let depth = net.heads[h].len();
        net.heads[h]
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let maxabs = layer
                    .w
                    .iter()
                    .chain(layer.b.iter())
                    .fold(0.0f64, |m, &v| m.max(v.abs()));
                let scale = if maxabs == 0.0 { 1.0 } else { top / maxabs };
                let q = |v: f64| ((v * scale).round() as i64).clamp(lo, hi);
                let hidden = l + 1 < depth;
                QLayer {
                    w: layer.w.mapv(q),
                    b: layer.b.iter().map(|&v| q(v)).collect(),
                    shift: if hidden { default_shift(layer.w.nrows()) } else { 0 },
                }
            })
            .collect()
    });
    QuantizedNet { k, shape: net.shape.clone(), heads }
}

/// Accumulate one layer over an integer activation vector, before the
/// shift. Skipping zero activations changes nothing and saves most of the
/// work on bit inputs and rectified layers.
fn accumulate(layer: &QLayer, a: &[i64]) -> Vec<i64> {
    let mut acc = layer.b.clone();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        let row = layer.w.row(i);
        let row = row.as_slice().expect("row-major weights");
        for (out, &w) in acc.iter_mut().zip(row) {
            *out += ai * w;
        }
    }
    acc
}

fn store(v: i64, shift: u32, lo: i64, hi: i64, rectify: bool) -> i64 {
    let s = (v >> shift).clamp(lo, hi);
    if rectify {
        s.max(0)
    } else {
        s
    }
}

fn q_head_pass(layers: &[QLayer], bits: &[i64], lo: i64, hi: i64) -> [i64; 2] {
    let mut a = bits.to_vec();
    let (last, hidden) = layers.split_last().expect("head has layers");
    for layer in hidden {
        a = accumulate(layer, &a)
            .into_iter()
            .map(|v| store(v, layer.shift, lo, hi, true))
            .collect();
    }
    // The output pair is never written back into k bits: it only feeds the
    // comparison, and saturating both sums at the same bound would erase the
    // winner. The layer's shift is still honored (quantize leaves it at 0;
    // a right shift is monotone, so a nonzero one can only merge near-ties,
    // never swap the order).
    let out = accumulate(last, &a);
    [out[0] >> last.shift, out[1] >> last.shift]
}

/// Integer logits of both heads for one bit-valued sample.
pub fn quantized_forward(
    qnet: &QuantizedNet,
    x_bits: &[i64],
    z_bits: &[i64],
) -> Result<([i64; 2], [i64; 2]), NeuralError> {
    for (got, expected) in
        [(x_bits.len(), qnet.shape.x_inputs), (z_bits.len(), qnet.shape.z_inputs)]
    {
        if got != expected {
            return Err(NeuralError::ShapeMismatch { expected, got });
        }
    }
    debug_assert!(x_bits.iter().chain(z_bits).all(|&v| v == 0 || v == 1));
    let (lo, hi) = qrange(qnet.k);
    Ok((
        q_head_pass(&qnet.heads[0], x_bits, lo, hi),
        q_head_pass(&qnet.heads[1], z_bits, lo, hi),
    ))
}

fn batch_bits(batch: &Batch, head: usize, row: usize) -> Vec<i64> {
    let m = if head == 0 { &batch.x } else { &batch.z };
    m.row(row).iter().map(|&v| v as i64).collect()
}

/// Argmax supplement bits per head through integer inference; ties choose
/// "no supplement", matching the float decision rule.
pub fn quantized_predict(qnet: &QuantizedNet, batch: &Batch) -> (Vec<bool>, Vec<bool>) {
    let (lo, hi) = qrange(qnet.k);
    let out = [0, 1].map(|h| {
        (0..batch.len())
            .map(|i| {
                let logits = q_head_pass(&qnet.heads[h], &batch_bits(batch, h, i), lo, hi);
                logits[1] > logits[0]
            })
            .collect::<Vec<bool>>()
    });
    let [px, pz] = out;
    (px, pz)
}

/// Logical fault rate of baseline-plus-quantized-network over the subset
/// `idx`, renormalized the same way as the float evaluation.
pub fn quantized_eval(
    qnet: &QuantizedNet,
    dataset: &Dataset,
    idx: &[u32],
) -> Result<EvalReport, NeuralError> {
    if idx.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let geometry = dataset.geometry();
    let mut faults = 0u64;
    for chunk in idx.chunks(4096) {
        let batch = Batch::gather(&qnet.shape, geometry, &dataset.samples, chunk)?;
        let (px, pz) = quantized_predict(qnet, &batch);
        for i in 0..batch.len() {
            if px[i] != batch.b1[i] || pz[i] != batch.b2[i] {
                faults += 1;
            }
        }
    }
    let effective_shots =
        dataset.meta.total_shots as f64 * idx.len() as f64 / dataset.meta.kept as f64;
    Ok(EvalReport { faults, n_samples: idx.len(), effective_shots })
}

/// Walk the calibration samples through each head's hidden layers, raising
/// any layer's shift until at most [`SATURATION_BUDGET`] of its stored
/// activations clip. Shifts only ever increase; raising a shift shrinks
/// magnitudes, so one upward scan per layer settles it. The output layer is
/// left alone because its sums are never stored back into k bits.
pub fn calibrate(qnet: &mut QuantizedNet, batch: &Batch) {
    let (lo, hi) = qrange(qnet.k);
    for h in 0..2 {
        let mut acts: Vec<Vec<i64>> =
            (0..batch.len()).map(|i| batch_bits(batch, h, i)).collect();
        let hidden = qnet.heads[h].len() - 1;
        for l in 0..hidden {
            let accs: Vec<Vec<i64>> =
                acts.iter().map(|a| accumulate(&qnet.heads[h][l], a)).collect();
            let total = accs.iter().map(|v| v.len()).sum::<usize>() as f64;
            let mut shift = qnet.heads[h][l].shift;
            while shift < 63 {
                let clipped = accs
                    .iter()
                    .flatten()
                    .filter(|&&v| {
                        let s = v >> shift;
                        s < lo || s > hi
                    })
                    .count();
                if clipped as f64 <= SATURATION_BUDGET * total {
                    break;
                }
                shift += 1;
            }
            qnet.heads[h][l].shift = shift;
            acts = accs
                .into_iter()
                .map(|v| v.into_iter().map(|x| store(x, shift, lo, hi, true)).collect())
                .collect();
        }
    }
}

/// Serialize: text header (k, shape, per-head shifts), a blank line, then
/// little-endian i64 blocks per head and layer (weights row-major, then
/// biases).
pub fn save_qmodel(qnet: &QuantizedNet) -> Vec<u8> {
    let shape = &qnet.shape;
    let hidden: Vec<String> = shape.hidden.iter().map(|h| h.to_string()).collect();
    let shifts = |head: &[QLayer]| {
        head.iter().map(|l| l.shift.to_string()).collect::<Vec<_>>().join(",")
    };
    let mut out = format!(
        "{QMODEL_MAGIC} v{QMODEL_VERSION}\nk: {}\nmode: {}\nx_inputs: {}\nz_inputs: {}\n\
         hidden: {}\nx_shifts: {}\nz_shifts: {}\n\n",
        qnet.k,
        shape.mode,
        shape.x_inputs,
        shape.z_inputs,
        hidden.join(","),
        shifts(&qnet.heads[0]),
        shifts(&qnet.heads[1]),
    )
    .into_bytes();
    for head in &qnet.heads {
        for layer in head {
            for &v in layer.w.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &v in &layer.b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn load_qmodel(bytes: &[u8]) -> Result<QuantizedNet, NeuralError> {
    let bad = |m: &str| NeuralError::Format(m.to_string());
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("missing header terminator"))?;
    let header =
        std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines();
    let magic = lines.next().ok_or_else(|| bad("empty header"))?;
    if magic != format!("{QMODEL_MAGIC} v{QMODEL_VERSION}") {
        return Err(bad(&format!("unsupported container tag {magic:?}")));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines {
        let (k, v) = line.split_once(": ").ok_or_else(|| bad("malformed header line"))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let field = |k: &str| {
        fields.get(k).cloned().ok_or_else(|| bad(&format!("missing header field {k}")))
    };
    let ints = |s: &str| -> Result<Vec<u32>, NeuralError> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|v| v.parse().map_err(|_| bad("bad integer list"))).collect()
    };
    let k: u32 = field("k")?.parse().map_err(|_| bad("bad value for k"))?;
    let mode = InputMode::parse(&field("mode")?).ok_or_else(|| bad("unknown input mode"))?;
    let hidden: Vec<usize> =
        ints(&field("hidden")?)?.into_iter().map(|v| v as usize).collect();
    let shape = NetShape {
        x_inputs: field("x_inputs")?.parse().map_err(|_| bad("bad value for x_inputs"))?,
        z_inputs: field("z_inputs")?.parse().map_err(|_| bad("bad value for z_inputs"))?,
        hidden,
        mode,
    };
    let shifts = [ints(&field("x_shifts")?)?, ints(&field("z_shifts")?)?];

    let mut body = &bytes[split + 2..];
    let mut take = |count: usize| -> Result<Vec<i64>, NeuralError> {
        let need = count * 8;
        if body.len() < need {
            return Err(bad("parameter blocks truncated"));
        }
        let vals = body[..need]
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        body = &body[need..];
        Ok(vals)
    };
    let sizes = |head: usize| {
        let input = if head == 0 { shape.x_inputs } else { shape.z_inputs };
        let mut v = vec![input];
        v.extend_from_slice(&shape.hidden);
        v.push(2);
        v
    };
    let heads_vec: Vec<Vec<QLayer>> = (0..2)
        .map(|h| {
            let sizes = sizes(h);
            if shifts[h].len() != sizes.len() - 1 {
                return Err(bad("shift count does not match layer count"));
            }
            sizes
                .windows(2)
                .zip(&shifts[h])
                .map(|(io, &shift)| {
                    let w = Array2::from_shape_vec((io[0], io[1]), take(io[0] * io[1])?)
                        .expect("shape matches count");
                    let b = take(io[1])?;
                    Ok(QLayer { w, b, shift })
                })
                .collect()
        })
        .collect::<Result<_, NeuralError>>()?;
    if !body.is_empty() {
        return Err(bad("trailing bytes after parameter blocks"));
    }
    let heads: [Vec<QLayer>; 2] = heads_vec.try_into().unwrap();
    Ok(QuantizedNet { k, shape, heads })
}
