#include "rover/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace rover {

// ---------------------------------------------------------------------------
// Inference kernel. Eight samples ride the lanes of one 64-byte vector; the
// output loop is unrolled four ways so the accumulators stay in registers.
// Each lane's arithmetic is an independent, fixed-order dot product, which
// makes batched results bit-identical to one-at-a-time calls.
// ---------------------------------------------------------------------------

namespace {

typedef double v8 __attribute__((vector_size(64)));

inline v8 splat(double s) { return v8{s, s, s, s, s, s, s, s}; }

inline v8 vleaky(v8 a, double alpha) { return (a >= 0) ? a : splat(alpha) * a; }

template <int O, int I, bool Act>
void layer_fixed(const double* __restrict w, const double* __restrict b,
                 const v8* __restrict x, v8* __restrict y, double alpha) {
    int o = 0;
    for (; o + 4 <= O; o += 4) {
        v8 a0 = splat(b[o]), a1 = splat(b[o + 1]), a2 = splat(b[o + 2]),
           a3 = splat(b[o + 3]);
        const double *w0 = w + static_cast<size_t>(o) * I, *w1 = w0 + I,
                     *w2 = w1 + I, *w3 = w2 + I;
        for (int i = 0; i < I; ++i) {
            const v8 xv = x[i];
            a0 += splat(w0[i]) * xv;
            a1 += splat(w1[i]) * xv;
            a2 += splat(w2[i]) * xv;
            a3 += splat(w3[i]) * xv;
        }
        if (Act) {
            a0 = vleaky(a0, alpha);
            a1 = vleaky(a1, alpha);
            a2 = vleaky(a2, alpha);
            a3 = vleaky(a3, alpha);
        }
        y[o] = a0;
        y[o + 1] = a1;
        y[o + 2] = a2;
        y[o + 3] = a3;
    }
    for (; o < O; ++o) {
        v8 a = splat(b[o]);
        const double* wr = w + static_cast<size_t>(o) * I;
        for (int i = 0; i < I; ++i) a += splat(wr[i]) * x[i];
        if (Act) a = vleaky(a, alpha);
        y[o] = a;
    }
}

void layer_any(int rows, int cols, const double* w, const double* b, const v8* x,
               v8* y, bool act, double alpha) {
    for (int o = 0; o < rows; ++o) {
        v8 a = splat(b[o]);
        const double* wr = w + static_cast<size_t>(o) * cols;
        for (int i = 0; i < cols; ++i) a += splat(wr[i]) * x[i];
        if (act) a = vleaky(a, alpha);
        y[o] = a;
    }
}

bool is_canonical(const MlpNet& net) {
    const auto& shape = MlpNet::canonical_shape();
    if (net.layers.size() + 1 != shape.size()) return false;
    for (size_t l = 0; l < net.layers.size(); ++l)
        if (net.layers[l].w.rows() != shape[l + 1] || net.layers[l].w.cols() != shape[l])
            return false;
    return true;
}

// Activation slope with the kink mapped to 0; works on post-activation
// values since Leaky ReLU preserves sign.
inline double slope_of(double post, double alpha) {
    return post > 0.0 ? 1.0 : (post < 0.0 ? alpha : 0.0);
}

}  // namespace

const std::vector<int>& MlpNet::canonical_shape() {
    static const std::vector<int> shape = {4, 128, 64, 16, 3};
    return shape;
}

MlpNet MlpNet::glorot(const std::vector<int>& shape, std::uint64_t seed) {
    if (shape.size() < 2) throw InvalidNet("need at least one layer");
    MlpNet net;
    std::mt19937_64 rng(seed);
    for (size_t l = 0; l + 1 < shape.size(); ++l) {
        const int fan_in = shape[l], fan_out = shape[l + 1];
        if (fan_in < 1 || fan_out < 1) throw InvalidNet("layer widths must be positive");
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Layer layer;
        layer.w.resize(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) layer.w(r, c) = u(rng);
        layer.b = Eigen::VectorXd::Zero(fan_out);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

void MlpNet::validate() const {
    if (!is_canonical(*this))
        throw InvalidNet("layer shapes are not the canonical 4-128-64-16-3 layout");
    for (const Layer& l : layers)
        if (!l.w.allFinite() || !l.b.allFinite())
            throw InvalidNet("network parameters are not finite");
    if (!(input_scale > 0.0)) throw InvalidNet("input scale must be positive");
}

OptimizerState OptimizerState::zeros_like(const MlpNet& net) {
    OptimizerState st;
    for (const Layer& l : net.layers) {
        Layer zero;
        zero.w = MatRM::Zero(l.w.rows(), l.w.cols());
        zero.b = Eigen::VectorXd::Zero(l.b.size());
        st.m.push_back(zero);
        st.v.push_back(std::move(zero));
    }
    return st;
}

double leaky_relu(double x, double alpha) { return x >= 0.0 ? x : alpha * x; }

Eigen::MatrixXd predict_batch(const MlpNet& net, const Eigen::MatrixXd& inputs) {
    if (net.layers.empty()) throw InvalidNet("empty network");
    if (inputs.cols() != net.input_dim())
        throw ShapeMismatch("predict_batch: input has " + std::to_string(inputs.cols()) +
                            " columns, net expects " + std::to_string(net.input_dim()));
    const int n = static_cast<int>(inputs.rows());
    const int in_dim = net.input_dim();
    const int out_dim = net.output_dim();
    Eigen::MatrixXd out(n, out_dim);
    if (n == 0) return out;

    int widest = in_dim;
    for (const Layer& l : net.layers) widest = std::max(widest, static_cast<int>(l.w.rows()));
    std::vector<v8> buf_a(static_cast<size_t>(widest)), buf_b(static_cast<size_t>(widest));

    const bool fast = is_canonical(net);
    const double inv_scale = 1.0 / net.input_scale;
    const double alpha = net.leak_alpha;

    for (int n0 = 0; n0 < n; n0 += 8) {
        const int lanes = std::min(8, n - n0);
        for (int i = 0; i < in_dim; ++i) {
            v8 xv = splat(0.0);
            for (int t = 0; t < lanes; ++t) xv[t] = inputs(n0 + t, i) * inv_scale;
            buf_a[static_cast<size_t>(i)] = xv;
        }
        v8* cur = buf_a.data();
        v8* nxt = buf_b.data();
        if (fast) {
            layer_fixed<128, 4, true>(net.layers[0].w.data(), net.layers[0].b.data(),
                                      cur, nxt, alpha);
            std::swap(cur, nxt);
            layer_fixed<64, 128, true>(net.layers[1].w.data(), net.layers[1].b.data(),
                                       cur, nxt, alpha);
            std::swap(cur, nxt);
            layer_fixed<16, 64, true>(net.layers[2].w.data(), net.layers[2].b.data(),
                                      cur, nxt, alpha);
            std::swap(cur, nxt);
            layer_fixed<3, 16, false>(net.layers[3].w.data(), net.layers[3].b.data(),
                                      cur, nxt, alpha);
            std::swap(cur, nxt);
        } else {
            for (size_t l = 0; l < net.layers.size(); ++l) {
                const Layer& layer = net.layers[l];
                layer_any(static_cast<int>(layer.w.rows()), static_cast<int>(layer.w.cols()),
                          layer.w.data(), layer.b.data(), cur, nxt,
                          l + 1 < net.layers.size(), alpha);
                std::swap(cur, nxt);
            }
        }
        for (int t = 0; t < lanes; ++t)
            for (int o = 0; o < out_dim; ++o) out(n0 + t, o) = cur[o][t];
    }
    return out;
}

Eigen::Vector3d forward(const MlpNet& net, const Eigen::Vector4d& input) {
    if (net.output_dim() != 3 || net.input_dim() != 4)
        throw ShapeMismatch("forward expects a 4-in 3-out network");
    const Eigen::MatrixXd out = predict_batch(net, input.transpose());
    return Eigen::Vector3d(out(0, 0), out(0, 1), out(0, 2));
}

double mae_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw ShapeMismatch("mae_loss: prediction and truth shapes differ");
    if (pred.size() == 0) throw ShapeMismatch("mae_loss: empty batch");
    return (pred - truth).array().abs().mean() * 100.0;
}

namespace {

// Column-major training layout: one column per sample. acts[0] holds the
// normalized input, acts[k] the post-activation output of layer k-1.
std::vector<Eigen::MatrixXd> forward_cols(const MlpNet& net, const Eigen::MatrixXd& x_cols) {
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(net.layers.size() + 1);
    acts.push_back(x_cols);
    for (size_t l = 0; l < net.layers.size(); ++l) {
        Eigen::MatrixXd z =
            (net.layers[l].w * acts.back()).colwise() + net.layers[l].b;
        if (l + 1 < net.layers.size()) {
            const double alpha = net.leak_alpha;
            z = z.unaryExpr([alpha](double v) { return v >= 0.0 ? v : alpha * v; });
        }
        acts.push_back(std::move(z));
    }
    return acts;
}

Gradients backward_from_acts(const MlpNet& net, const std::vector<Eigen::MatrixXd>& acts,
                             const Eigen::MatrixXd& targets_cols) {
    const auto n_layers = net.layers.size();
    const double batch = static_cast<double>(targets_cols.cols());
    const double alpha = net.leak_alpha;

    Gradients grads;
    grads.g.resize(n_layers);

    // Gradient of the cm-valued mean absolute error, sign(0) = 0.
    const double scale = 100.0 / (static_cast<double>(targets_cols.rows()) * batch);
    Eigen::MatrixXd delta =
        (acts.back() - targets_cols)
            .unaryExpr([scale](double e) {
                return e > 0.0 ? scale : (e < 0.0 ? -scale : 0.0);
            });

    for (size_t l = n_layers; l-- > 0;) {
        grads.g[l].w = delta * acts[l].transpose();
        grads.g[l].b = delta.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd up = net.layers[l].w.transpose() * delta;
            delta = up.cwiseProduct(acts[l].unaryExpr(
                [alpha](double a) { return slope_of(a, alpha); }));
        }
    }
    return grads;
}

}  // namespace

Gradients backward(const MlpNet& net, const Eigen::MatrixXd& inputs,
                   const Eigen::MatrixXd& targets) {
    if (inputs.rows() == 0) throw ShapeMismatch("backward: empty batch");
    if (inputs.cols() != net.input_dim() || targets.cols() != net.output_dim() ||
        inputs.rows() != targets.rows())
        throw ShapeMismatch("backward: batch shapes do not match the network");
    const Eigen::MatrixXd x_cols = (inputs * (1.0 / net.input_scale)).transpose();
    return backward_from_acts(net, forward_cols(net, x_cols), targets.transpose());
}

void nadam_step(OptimizerState& state, MlpNet& net, const Gradients& grads,
                const TrainConfig& cfg, double lr) {
    if (state.m.size() != net.layers.size() || grads.g.size() != net.layers.size())
        throw ShapeMismatch("nadam_step: state/gradient layer counts differ");
    const long long t = ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));

    auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
        if (p.rows() != g.rows() || p.cols() != g.cols())
            throw ShapeMismatch("nadam_step: gradient shape differs from parameter");
        m.array() = cfg.beta1 * m.array() + (1.0 - cfg.beta1) * g.array();
        v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square();
        p.array() -= lr *
                     (cfg.beta1 * (m.array() / bc1) + (1.0 - cfg.beta1) * g.array() / bc1) /
                     ((v.array() / bc2).sqrt() + cfg.epsilon);
    };
    for (size_t l = 0; l < net.layers.size(); ++l) {
        update(net.layers[l].w, state.m[l].w, state.v[l].w, grads.g[l].w);
        update(net.layers[l].b, state.m[l].b, state.v[l].b, grads.g[l].b);
    }
}

TrainResult train(const MlpNet& initial, const Eigen::MatrixXd& train_x,
                  const Eigen::MatrixXd& train_y, const Eigen::MatrixXd& val_x,
                  const Eigen::MatrixXd& val_y, const TrainConfig& cfg) {
    if (train_x.rows() == 0 || val_x.rows() == 0)
        throw ShapeMismatch("train: empty training or validation set");
    if (train_x.cols() != initial.input_dim() || train_y.cols() != initial.output_dim() ||
        val_x.cols() != initial.input_dim() || val_y.cols() != initial.output_dim() ||
        train_x.rows() != train_y.rows() || val_x.rows() != val_y.rows())
        throw ShapeMismatch("train: set shapes do not match the network");
    if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1 ||
        !(cfg.learning_rate > 0.0))
        throw InvalidNet("train: bad config");

    TrainResult res;
    res.net = initial;
    OptimizerState opt = OptimizerState::zeros_like(res.net);

    const double inv_scale = 1.0 / res.net.input_scale;
    const Eigen::MatrixXd tx = (train_x * inv_scale).transpose();  // d x n
    const Eigen::MatrixXd ty = train_y.transpose();
    const Eigen::MatrixXd vx = (val_x * inv_scale).transpose();
    const Eigen::MatrixXd vy = val_y.transpose();
    const int n = static_cast<int>(tx.cols());

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    EarlyStopping stopper(cfg.patience);
    std::vector<Layer> best_weights = res.net.layers;
    double lr = cfg.learning_rate;
    int plateau_bad = 0;

    Eigen::MatrixXd xb, yb;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (int s0 = 0; s0 < n; s0 += cfg.batch_size) {
            const int bs = std::min(cfg.batch_size, n - s0);
            xb.resize(tx.rows(), bs);
            yb.resize(ty.rows(), bs);
            for (int k = 0; k < bs; ++k) {
                xb.col(k) = tx.col(order[static_cast<size_t>(s0 + k)]);
                yb.col(k) = ty.col(order[static_cast<size_t>(s0 + k)]);
            }
            const auto acts = forward_cols(res.net, xb);
            loss_sum += (acts.back() - yb).array().abs().mean() * 100.0 * bs;
            const Gradients grads = backward_from_acts(res.net, acts, yb);
            nadam_step(opt, res.net, grads, cfg, lr);
        }
        const double train_running = loss_sum / n;
        if (!std::isfinite(train_running))
            throw DivergedLoss("training loss became non-finite at epoch " +
                               std::to_string(epoch));

        const double val_mae =
            (forward_cols(res.net, vx).back() - vy).array().abs().mean() * 100.0;
        res.report.loss_history.push_back({epoch, train_running, val_mae});
        res.report.epochs_run = epoch;

        const bool stop = stopper.update(val_mae);
        if (stopper.best_epoch() == epoch) {
            best_weights = res.net.layers;
            plateau_bad = 0;
        } else if (++plateau_bad >= cfg.lr_patience && lr > cfg.lr_min) {
            lr = std::max(lr * cfg.lr_factor, cfg.lr_min);
            plateau_bad = 0;
        }
        if (stop) break;
    }

    res.net.layers = best_weights;
    res.report.best_epoch = stopper.best_epoch();
    res.report.best_val_mae = stopper.best();
    res.report.train_mae =
        (forward_cols(res.net, tx).back() - ty).array().abs().mean() * 100.0;
    return res;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t take_u32(const std::string& s, size_t& pos, const std::string& path) {
    if (pos + 4 > s.size()) throw CorruptWeights(path + ": truncated header field");
    std::uint32_t v;
    std::memcpy(&v, s.data() + pos, 4);
    pos += 4;
    return v;
}

}  // namespace

void save_weights(const MlpNet& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open weight file for writing: " + path);
    os.write("MLP1", 4);
    put_u32(os, static_cast<std::uint32_t>(net.layers.size()));
    for (const Layer& l : net.layers) {
        put_u32(os, static_cast<std::uint32_t>(l.w.rows()));
        put_u32(os, static_cast<std::uint32_t>(l.w.cols()));
        os.write(reinterpret_cast<const char*>(l.w.data()),
                 static_cast<std::streamsize>(sizeof(double) * l.w.size()));
        os.write(reinterpret_cast<const char*>(l.b.data()),
                 static_cast<std::streamsize>(sizeof(double) * l.b.size()));
    }
    if (!os) throw IoError("failed writing weight file: " + path);
}

MlpNet load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open weight file: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string s = buf.str();

    if (s.size() < 4 || s.compare(0, 4, "MLP1") != 0)
        throw CorruptWeights(path + ": bad magic");
    size_t pos = 4;
    const std::uint32_t count = take_u32(s, pos, path);
    const auto& shape = MlpNet::canonical_shape();
    if (count + 1 != shape.size())
        throw CorruptWeights(path + ": " + std::to_string(count) +
                             " layers, expected " + std::to_string(shape.size() - 1));
    MlpNet net;
    for (std::uint32_t l = 0; l < count; ++l) {
        const std::uint32_t rows = take_u32(s, pos, path);
        const std::uint32_t cols = take_u32(s, pos, path);
        if (rows != static_cast<std::uint32_t>(shape[l + 1]) ||
            cols != static_cast<std::uint32_t>(shape[l]))
            throw CorruptWeights(path + ": layer " + std::to_string(l) + " is " +
                                 std::to_string(rows) + "x" + std::to_string(cols) +
                                 ", expected " + std::to_string(shape[l + 1]) + "x" +
                                 std::to_string(shape[l]));
        const size_t wbytes = sizeof(double) * rows * cols;
        const size_t bbytes = sizeof(double) * rows;
        if (pos + wbytes + bbytes > s.size())
            throw CorruptWeights(path + ": truncated layer " + std::to_string(l));
        Layer layer;
        layer.w.resize(rows, cols);
        std::memcpy(layer.w.data(), s.data() + pos, wbytes);
        pos += wbytes;
        layer.b.resize(rows);
        std::memcpy(layer.b.data(), s.data() + pos, bbytes);
        pos += bbytes;
        net.layers.push_back(std::move(layer));
    }
    if (pos != s.size()) throw CorruptWeights(path + ": trailing bytes");
    net.validate();
    return net;
}

void save_history(const TrainReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open history file for writing: " + path);
    os << "epoch,train_mae_cm,val_mae_cm\n";
    char buf[128];
    for (const HistoryRow& row : report.loss_history) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", row.epoch,
                      row.train_mae_cm, row.val_mae_cm);
        os << buf;
    }
    if (!os) throw IoError("failed writing history file: " + path);
}

}  // namespace rover
