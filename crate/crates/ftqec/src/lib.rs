//! Fault-tolerant quantum error correction protocols under circuit-level
//! depolarizing noise, with lookup-table, pure-error, and neural decoders.

pub mod circuit;
pub mod code;
pub mod dataset;
pub mod decoder;
pub mod frame;
pub mod neural;
pub mod noise;
pub mod pauli;
pub mod protocol;
pub mod quantize;

pub use circuit::{Basis, Circuit, CircuitError, CnotOrders, EcStyle, ExRec, Op};
pub use code::{CodeError, StabilizerCode};
pub use dataset::{
    generate, surface_round_padding, Dataset, DatasetError, DatasetMeta, ProtocolId, Sample,
    SampleGeometry,
};
pub use decoder::{naive_decode, Baseline, Decision, DecoderError, LookupTable, ProtocolState};
pub use frame::{FrameRun, SimRecord};
pub use neural::{
    backprop, cross_train_eval, evaluate, forward, hypertune, latin_hypercube, load_model, loss,
    predict, save_model, softmax2, step, train, Batch, CrossPoint, EpochStats, EvalReport,
    FeedforwardNet, Grads, Hyperparams, InputMode, Layer, NetShape, NeuralError, Optimizer,
    OptimizerState, Query, SearchSpace, TrainResult, TuneResult,
};
pub use noise::{Fault, LocationClass, LocationMap, NoiseModel, Payload};
pub use pauli::{Pauli, PauliKind, PauliParseError};
pub use protocol::{
    ft_check_steane_ec, ft_check_surface_d3, ft_check_surface_d5, geometric_grid, sweep_points,
    EcSyndrome, ExRecShot, ExRecSim, FtReport, ShotScratch, SingleEcSim, SurfaceShot, SurfaceSim,
    SweepPoint, VerifiedPrepSim,
};
pub use quantize::{
    calibrate, ceil_log2, default_shift, load_qmodel, qrange, quantize, quantized_eval,
    quantized_forward, quantized_predict, save_qmodel, QLayer, QuantizedNet,
};
