//! The traffic-delay predictor: correlation-augmented adjacency over the
//! segment network, two graph-convolution layers with ReLU, an LSTM over the
//! H input slots, and full-batch gradient-descent training.

mod adjacency;
mod net;
mod train;

pub use adjacency::{
    augment_adjacency, correlation_matrix, normalize_adjacency, threshold_correlation,
};
pub use net::{
    forward, gcn_forward, loss_and_grads, recurrent_forward, DelayModelParams, Gate, NetShape,
};
pub use train::{
    evaluate_rmse, hyperparameter_search, read_model, read_model_file, train, windows_from_matrix,
    write_model, write_model_file, DelayModel, Hyperparams, SearchCell, SearchResult,
    Standardizer, TrainingWindow,
};
