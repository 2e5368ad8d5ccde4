#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rover/errors.hpp"

namespace rover {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fully connected layer, out x in weights plus bias.
struct Layer {
    MatRM w;
    Eigen::VectorXd b;
};

/// Small fully connected net: affine + Leaky ReLU for every layer except
/// the last, which stays affine. Pixel inputs are divided by input_scale
/// before the first layer; outputs are meters. input_scale is a
/// preprocessing constant, not part of the serialized weights.
struct MlpNet {
    std::vector<Layer> layers;
    double leak_alpha = 0.01;
    double input_scale = 1024.0;

    /// The reference layout: 4 -> 128 -> 64 -> 16 -> 3.
    static const std::vector<int>& canonical_shape();

    /// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
    static MlpNet glorot(const std::vector<int>& shape, std::uint64_t seed);

    int input_dim() const { return static_cast<int>(layers.front().w.cols()); }
    int output_dim() const { return static_cast<int>(layers.back().w.rows()); }

    /// Throws InvalidNet unless the layers match canonical_shape() exactly
    /// and every parameter is finite.
    void validate() const;
};

struct TrainConfig {
    double learning_rate = 0.001;  // initial; decays on validation plateau
    int patience = 10;             // early-stopping epochs
    int max_epochs = 150;
    int batch_size = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    double lr_factor = 0.5;  // plateau decay multiplier
    int lr_patience = 5;     // epochs without val improvement before decay
    double lr_min = 1e-5;
};

/// Per-parameter first/second moments for the optimizer.
struct OptimizerState {
    std::vector<Layer> m;  // same shapes as the net
    std::vector<Layer> v;
    long long step = 0;

    static OptimizerState zeros_like(const MlpNet& net);
};

struct Gradients {
    std::vector<Layer> g;  // dL/dW, dL/db per layer
};

struct HistoryRow {
    int epoch = 0;          // 1-based
    double train_mae_cm = 0;  // running mean over the epoch's minibatches
    double val_mae_cm = 0;
};

struct TrainReport {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_mae = 0;  // cm
    double train_mae = 0;     // cm, recomputed with the returned weights
    std::vector<HistoryRow> loss_history;
};

struct TrainResult {
    MlpNet net;
    TrainReport report;
};

struct InvalidNet : Error {
    using Error::Error;
};
struct ShapeMismatch : Error {
    using Error::Error;
};
struct DivergedLoss : Error {
    using Error::Error;
};
struct CorruptWeights : Error {
    using Error::Error;
};

double leaky_relu(double x, double alpha);

/// One sample through the net; equivalent to predict_batch on one row.
Eigen::Vector3d forward(const MlpNet& net, const Eigen::Vector4d& input);

/// Batched inference over n x input_dim pixels, one output row per input
/// row. Bit-identical to n independent forward calls.
Eigen::MatrixXd predict_batch(const MlpNet& net, const Eigen::MatrixXd& inputs);

/// Mean absolute error between n x 3 predictions and targets (meters),
/// averaged over every coordinate of every sample, reported in cm.
double mae_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);

/// Exact gradients of mae_loss over the batch. The derivative at the exact
/// loss kink (pred == truth) and the exact activation kink (pre-activation
/// zero) is taken as 0.
Gradients backward(const MlpNet& net, const Eigen::MatrixXd& inputs,
                   const Eigen::MatrixXd& targets);

/// One NAdam update (standard formulation):
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta -= lr (b1 m_hat + (1-b1) g / (1-b1^t)) / (sqrt(v_hat) + eps)
/// with m_hat, v_hat the bias-corrected moments and t the step counter.
/// The lr argument is passed explicitly so the caller can schedule it.
void nadam_step(OptimizerState& state, MlpNet& net, const Gradients& grads,
                const TrainConfig& cfg, double lr);

/// Patience logic shared by early stopping and the plateau schedule:
/// update() feeds one validation value per epoch and reports when the run
/// should stop (no strict improvement for `patience` consecutive epochs).
class EarlyStopping {
  public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    bool update(double val) {
        ++epoch_;
        if (val < best_) {
            best_ = val;
            best_epoch_ = epoch_;
            bad_ = 0;
            return false;
        }
        return ++bad_ >= patience_;
    }

    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }
    int bad_epochs() const { return bad_; }
    void reset_counter() { bad_ = 0; }

  private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    int bad_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

/// Minibatch training with seeded shuffling, NAdam, plateau learning-rate
/// decay and early stopping on validation MAE. Returns the weights of the
/// best validation epoch. Deterministic for a fixed seed (single thread).
/// Inputs are n x input_dim pixels, targets n x output_dim meters.
TrainResult train(const MlpNet& initial, const Eigen::MatrixXd& train_x,
                  const Eigen::MatrixXd& train_y, const Eigen::MatrixXd& val_x,
                  const Eigen::MatrixXd& val_y, const TrainConfig& cfg);

/// Binary weight container: magic "MLP1", uint32 layer count, then per
/// layer uint32 rows, uint32 cols, row-major float64 weights, float64
/// biases. Little-endian. load enforces the canonical 4-128-64-16-3 shape.
void save_weights(const MlpNet& net, const std::string& path);
MlpNet load_weights(const std::string& path);

/// Epoch history CSV: header epoch,train_mae_cm,val_mae_cm.
void save_history(const TrainReport& report, const std::string& path);

}  // namespace rover
