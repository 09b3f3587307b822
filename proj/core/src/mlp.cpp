#include "desot/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "desot/io_util.hpp"
#include "desot/rng.hpp"

namespace desot {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348464cull;  // "SHFL"
constexpr std::uint64_t kDropoutStream = 0x44524f50ull;  // "DROP"

// Stateless per-unit uniform draw; both the scalar and the batched forward
// paths produce identical masks for the same (seed, layer, unit).
double unit_uniform(std::uint64_t seed, std::size_t layer, std::size_t unit) {
    const std::uint64_t key = mix_seed(seed, kDropoutStream, layer, unit);
    return static_cast<double>(key >> 11) * 0x1.0p-53;
}

double dropout_scale_for(std::uint64_t seed, std::size_t layer, std::size_t unit, double rate) {
    if (rate <= 0.0) return 1.0;
    return unit_uniform(seed, layer, unit) < rate ? 0.0 : 1.0 / (1.0 - rate);
}

// Y[b] = X[b] W^T + bias, X is B x K, W is O x K row-major.
void affine_batch(const double* x, std::size_t batch, std::size_t in_dim, const double* w,
                  const double* bias, std::size_t out_dim, double* y) {
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xb = x + b * in_dim;
        double* yb = y + b * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wo = w + o * in_dim;
            double acc = bias[o];
            for (std::size_t k = 0; k < in_dim; ++k) {
                acc += xb[k] * wo[k];
            }
            yb[o] = acc;
        }
    }
}

}  // namespace

void MlpModel::validate() const {
    if (layer_dims.size() < 2) {
        throw std::invalid_argument("MlpModel: need at least input and output dims");
    }
    for (std::size_t d : layer_dims) {
        if (d == 0) throw std::invalid_argument("MlpModel: zero layer dimension");
    }
    if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size()) {
        throw std::invalid_argument("MlpModel: layer count mismatch");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].size() != layer_dims[l + 1] * layer_dims[l]) {
            throw std::invalid_argument("MlpModel: weight shape mismatch at layer " +
                                        std::to_string(l));
        }
        if (biases[l].size() != layer_dims[l + 1]) {
            throw std::invalid_argument("MlpModel: bias shape mismatch at layer " +
                                        std::to_string(l));
        }
        for (double v : weights[l]) {
            if (!std::isfinite(v)) throw std::invalid_argument("MlpModel: non-finite weight");
        }
        for (double v : biases[l]) {
            if (!std::isfinite(v)) throw std::invalid_argument("MlpModel: non-finite bias");
        }
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw std::invalid_argument("MlpModel: dropout_rate must lie in [0,1)");
    }
}

ParamTensors ParamTensors::zeros_like(const MlpModel& model) {
    ParamTensors t;
    t.weights.reserve(model.weights.size());
    t.biases.reserve(model.biases.size());
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        t.weights.emplace_back(model.weights[l].size(), 0.0);
        t.biases.emplace_back(model.biases[l].size(), 0.0);
    }
    return t;
}

MlpModel init_model(const std::vector<std::size_t>& layer_dims, double dropout_rate,
                    std::uint64_t seed) {
    if (layer_dims.size() < 2) {
        throw std::invalid_argument("init_model: need at least 2 layer dims");
    }
    for (std::size_t d : layer_dims) {
        if (d == 0) throw std::invalid_argument("init_model: zero layer dimension");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw std::invalid_argument("init_model: dropout_rate must lie in [0,1)");
    }

    MlpModel model;
    model.layer_dims = layer_dims;
    model.dropout_rate = dropout_rate;
    model.seed = seed;

    Rng rng(mix_seed(seed, 0x494e4954ull));  // "INIT"
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const std::size_t fan_in = layer_dims[l];
        const std::size_t fan_out = layer_dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::vector<double> w(fan_out * fan_in);
        for (double& v : w) {
            v = rng.uniform(-bound, bound);
        }
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(fan_out, 0.0);
    }
    return model;
}

std::vector<double> forward(const MlpModel& model, std::span<const float> x, ForwardMode mode,
                            std::uint64_t rng_seed, ForwardCache* cache) {
    if (x.size() != model.input_dim()) {
        throw std::invalid_argument("forward: input has dim " + std::to_string(x.size()) +
                                    ", model expects " + std::to_string(model.input_dim()));
    }
    for (float v : x) {
        if (!std::isfinite(v)) throw std::invalid_argument("forward: non-finite input");
    }

    const bool use_dropout = mode != ForwardMode::eval_deterministic && model.dropout_rate > 0.0;
    std::vector<double> act(x.begin(), x.end());
    if (cache) {
        cache->activations.clear();
        cache->pre_activations.clear();
        cache->dropout_scale.clear();
        cache->activations.push_back(act);
    }

    const std::size_t layers = model.num_layers();
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in_dim = model.layer_dims[l];
        const std::size_t out_dim = model.layer_dims[l + 1];
        std::vector<double> z(out_dim);
        affine_batch(act.data(), 1, in_dim, model.weights[l].data(), model.biases[l].data(),
                     out_dim, z.data());
        if (l + 1 == layers) {
            if (cache) cache->activations.push_back(z);
            return z;
        }
        if (cache) cache->pre_activations.push_back(z);
        std::vector<double> scales(out_dim, 1.0);
        for (std::size_t j = 0; j < out_dim; ++j) {
            double a = z[j] > 0.0 ? z[j] : 0.0;
            if (use_dropout) {
                scales[j] = dropout_scale_for(rng_seed, l, j, model.dropout_rate);
                a *= scales[j];
            }
            z[j] = a;
        }
        if (cache) {
            cache->dropout_scale.push_back(std::move(scales));
            cache->activations.push_back(z);
        }
        act = std::move(z);
    }
    return act;  // unreachable for valid models
}

CategoricalDist softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
    double max_v = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite logit");
        max_v = std::max(max_v, v);
    }
    CategoricalDist dist;
    dist.probs.resize(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        dist.probs[i] = std::exp(logits[i] - max_v);
        sum += dist.probs[i];
    }
    for (double& p : dist.probs) {
        p /= sum;
    }
    return dist;
}

std::pair<double, std::vector<double>> cross_entropy_and_grad(std::span<const double> logits,
                                                              std::size_t label) {
    if (label >= logits.size()) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(logits.size()) +
                                    " classes");
    }
    double max_v = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (!std::isfinite(v)) throw std::invalid_argument("cross_entropy: non-finite logit");
        max_v = std::max(max_v, v);
    }
    double sum = 0.0;
    std::vector<double> grad(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        grad[i] = std::exp(logits[i] - max_v);
        sum += grad[i];
    }
    const double loss = std::log(sum) + max_v - logits[label];
    for (double& g : grad) {
        g /= sum;
    }
    grad[label] -= 1.0;
    return {loss, std::move(grad)};
}

void adamw_step(MlpModel& model, AdamWState& state, const ParamTensors& grads, double lr_t,
                double weight_decay) {
    if (!(lr_t >= 0.0) || !std::isfinite(lr_t)) {
        throw std::invalid_argument("adamw_step: bad learning rate");
    }
    if (grads.weights.size() != model.weights.size() ||
        grads.biases.size() != model.biases.size()) {
        throw std::invalid_argument("adamw_step: gradient layer count mismatch");
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));

    auto update = [&](std::vector<double>& param, std::vector<double>& m, std::vector<double>& v,
                      const std::vector<double>& g) {
        if (g.size() != param.size()) {
            throw std::invalid_argument("adamw_step: gradient shape mismatch");
        }
        for (std::size_t i = 0; i < param.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw std::invalid_argument("adamw_step: non-finite gradient");
            }
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            param[i] -= lr_t * (m_hat / (std::sqrt(v_hat) + state.epsilon) +
                                weight_decay * param[i]);
        }
    };
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        update(model.weights[l], state.first_moment.weights[l], state.second_moment.weights[l],
               grads.weights[l]);
        update(model.biases[l], state.first_moment.biases[l], state.second_moment.biases[l],
               grads.biases[l]);
    }
}

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double base_lr) {
    if (total_epochs == 0 || epoch >= total_epochs) {
        throw std::invalid_argument("cosine_lr: epoch out of range");
    }
    const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

ParamTensors backward(const MlpModel& model, const ForwardCache& cache,
                      std::span<const double> grad_logits) {
    const std::size_t layers = model.num_layers();
    ParamTensors grads = ParamTensors::zeros_like(model);
    std::vector<double> delta(grad_logits.begin(), grad_logits.end());
    for (std::size_t li = layers; li-- > 0;) {
        const std::size_t in_dim = model.layer_dims[li];
        const std::size_t out_dim = model.layer_dims[li + 1];
        const std::vector<double>& a_in = cache.activations[li];
        for (std::size_t o = 0; o < out_dim; ++o) {
            double* wrow = grads.weights[li].data() + o * in_dim;
            const double d = delta[o];
            for (std::size_t k = 0; k < in_dim; ++k) {
                wrow[k] += d * a_in[k];
            }
            grads.biases[li][o] += d;
        }
        if (li == 0) break;
        std::vector<double> prev(in_dim, 0.0);
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wrow = model.weights[li].data() + o * in_dim;
            const double d = delta[o];
            for (std::size_t k = 0; k < in_dim; ++k) {
                prev[k] += d * wrow[k];
            }
        }
        const std::vector<double>& z_prev = cache.pre_activations[li - 1];
        const std::vector<double>& scale_prev = cache.dropout_scale[li - 1];
        for (std::size_t k = 0; k < in_dim; ++k) {
            prev[k] *= (z_prev[k] > 0.0 ? 1.0 : 0.0) * scale_prev[k];
        }
        delta = std::move(prev);
    }
    return grads;
}

TrainLog train(MlpModel& model, const FrameDataset& dataset, const TrainConfig& cfg) {
    model.validate();
    if (dataset.size() == 0) throw std::invalid_argument("train: empty dataset");
    if (dataset.frame_dim() != model.input_dim()) {
        throw std::invalid_argument("train: dataset frame dim does not match model input dim");
    }
    const std::size_t num_classes = model.output_dim();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset.labels[i] >= num_classes) {
            throw std::invalid_argument("train: label out of range at sample " +
                                        std::to_string(i));
        }
    }
    if (cfg.epochs == 0 || cfg.batch_size == 0) {
        throw std::invalid_argument("train: epochs and batch_size must be >= 1");
    }

    const std::size_t n = dataset.size();
    const std::size_t in_dim = model.input_dim();
    const std::size_t layers = model.num_layers();
    const bool use_dropout = model.dropout_rate > 0.0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, kShuffleStream));

    AdamWState state(model);
    ParamTensors grads = ParamTensors::zeros_like(model);
    TrainLog log;
    log.epoch_loss.reserve(cfg.epochs);

    // flat batch buffers, reused across steps
    std::vector<std::vector<double>> acts(layers + 1);     // per layer, B x dim
    std::vector<std::vector<double>> scales(layers - 1);   // hidden dropout scales
    std::vector<std::vector<std::uint8_t>> relu_on(layers - 1);
    std::vector<double> delta, delta_prev;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr_t = cosine_lr(epoch, cfg.epochs, cfg.learning_rate);
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t batch = std::min(cfg.batch_size, n - start);

            acts[0].resize(batch * in_dim);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto frame = dataset.frame(order[start + b]);
                double* row = acts[0].data() + b * in_dim;
                for (std::size_t k = 0; k < in_dim; ++k) {
                    row[k] = static_cast<double>(frame[k]);
                }
            }

            // forward
            for (std::size_t l = 0; l < layers; ++l) {
                const std::size_t li = model.layer_dims[l];
                const std::size_t lo = model.layer_dims[l + 1];
                acts[l + 1].resize(batch * lo);
                affine_batch(acts[l].data(), batch, li, model.weights[l].data(),
                             model.biases[l].data(), lo, acts[l + 1].data());
                if (l + 1 == layers) break;
                scales[l].assign(batch * lo, 1.0);
                relu_on[l].assign(batch * lo, 0);
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::uint64_t sample_seed =
                        mix_seed(cfg.seed, kDropoutStream, epoch, start + b);
                    double* row = acts[l + 1].data() + b * lo;
                    double* srow = scales[l].data() + b * lo;
                    std::uint8_t* rrow = relu_on[l].data() + b * lo;
                    for (std::size_t j = 0; j < lo; ++j) {
                        if (row[j] > 0.0) {
                            rrow[j] = 1;
                            if (use_dropout) {
                                srow[j] = dropout_scale_for(sample_seed, l, j,
                                                            model.dropout_rate);
                                row[j] *= srow[j];
                            }
                        } else {
                            row[j] = 0.0;
                        }
                    }
                }
            }

            // loss and logit gradient, averaged over the batch; computed
            // inline so a diverged run aborts with a diagnostic instead of
            // tripping a precondition in the scalar helpers
            const std::size_t out_dim = num_classes;
            delta.assign(batch * out_dim, 0.0);
            double batch_loss = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* logits = acts[layers].data() + b * out_dim;
                const std::size_t label = dataset.labels[order[start + b]];
                double max_v = logits[0];
                for (std::size_t c = 1; c < out_dim; ++c) max_v = std::max(max_v, logits[c]);
                double sum = 0.0;
                double* drow = delta.data() + b * out_dim;
                for (std::size_t c = 0; c < out_dim; ++c) {
                    drow[c] = std::exp(logits[c] - max_v);
                    sum += drow[c];
                }
                batch_loss += std::log(sum) + max_v - logits[label];
                const double inv = 1.0 / (sum * static_cast<double>(batch));
                for (std::size_t c = 0; c < out_dim; ++c) {
                    drow[c] *= inv;
                }
                drow[label] -= 1.0 / static_cast<double>(batch);
            }
            if (!std::isfinite(batch_loss)) {
                throw std::runtime_error(
                    "train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(start / cfg.batch_size) + "; aborting");
            }
            epoch_loss += batch_loss;

            // backward
            for (std::size_t l = 0; l < layers; ++l) {
                std::fill(grads.weights[l].begin(), grads.weights[l].end(), 0.0);
                std::fill(grads.biases[l].begin(), grads.biases[l].end(), 0.0);
            }
            for (std::size_t li = layers; li-- > 0;) {
                const std::size_t k_dim = model.layer_dims[li];
                const std::size_t o_dim = model.layer_dims[li + 1];
                double* gw = grads.weights[li].data();
                double* gb = grads.biases[li].data();
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* drow = delta.data() + b * o_dim;
                    const double* arow = acts[li].data() + b * k_dim;
                    for (std::size_t o = 0; o < o_dim; ++o) {
                        const double d = drow[o];
                        if (d == 0.0) continue;
                        double* gwo = gw + o * k_dim;
                        for (std::size_t k = 0; k < k_dim; ++k) {
                            gwo[k] += d * arow[k];
                        }
                        gb[o] += d;
                    }
                }
                if (li == 0) break;
                delta_prev.assign(batch * k_dim, 0.0);
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* drow = delta.data() + b * o_dim;
                    double* prow = delta_prev.data() + b * k_dim;
                    for (std::size_t o = 0; o < o_dim; ++o) {
                        const double d = drow[o];
                        if (d == 0.0) continue;
                        const double* wrow = model.weights[li].data() + o * k_dim;
                        for (std::size_t k = 0; k < k_dim; ++k) {
                            prow[k] += d * wrow[k];
                        }
                    }
                    const double* srow = scales[li - 1].data() + b * k_dim;
                    const std::uint8_t* rrow = relu_on[li - 1].data() + b * k_dim;
                    for (std::size_t k = 0; k < k_dim; ++k) {
                        prow[k] *= rrow[k] ? srow[k] : 0.0;
                    }
                }
                std::swap(delta, delta_prev);
            }

            adamw_step(model, state, grads, lr_t, cfg.weight_decay);
        }
        log.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
    }
    return log;
}

// ---- MLPW container ---------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'M', 'L', 'P', 'W'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_model(const MlpModel& model, std::ostream& out) {
    model.validate();
    out.write(kModelMagic, 4);
    io::write_u32(out, kModelVersion);
    io::write_u32(out, static_cast<std::uint32_t>(model.num_layers()));
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        io::write_u32(out, static_cast<std::uint32_t>(model.layer_dims[l]));
        io::write_u32(out, static_cast<std::uint32_t>(model.layer_dims[l + 1]));
    }
    io::write_f64(out, model.dropout_rate);
    for (const auto& w : model.weights) {
        for (double v : w) io::write_f32(out, static_cast<float>(v));
    }
    for (const auto& b : model.biases) {
        for (double v : b) io::write_f32(out, static_cast<float>(v));
    }
    if (!out) throw std::runtime_error("save_model: write failed");
}

MlpModel load_model(std::istream& in, const std::string& origin) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw std::runtime_error("load_model: bad magic in " + origin);
    }
    const std::uint32_t version = io::read_u32(in, origin);
    if (version != kModelVersion) {
        throw std::runtime_error("load_model: unsupported version " + std::to_string(version) +
                                 " in " + origin);
    }
    const std::uint32_t layers = io::read_u32(in, origin);
    if (layers == 0) throw std::runtime_error("load_model: zero layers in " + origin);

    MlpModel model;
    model.layer_dims.resize(layers + 1);
    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::uint32_t in_dim = io::read_u32(in, origin);
        const std::uint32_t out_dim = io::read_u32(in, origin);
        if (in_dim == 0 || out_dim == 0) {
            throw std::runtime_error("load_model: zero dimension in " + origin);
        }
        if (l == 0) {
            model.layer_dims[0] = in_dim;
        } else if (model.layer_dims[l] != in_dim) {
            throw std::runtime_error("load_model: inconsistent layer chain in " + origin);
        }
        model.layer_dims[l + 1] = out_dim;
    }
    model.dropout_rate = io::read_f64(in, origin);
    if (!(model.dropout_rate >= 0.0 && model.dropout_rate < 1.0)) {
        throw std::runtime_error("load_model: dropout_rate out of range in " + origin);
    }
    for (std::uint32_t l = 0; l < layers; ++l) {
        std::vector<double> w(model.layer_dims[l + 1] * model.layer_dims[l]);
        for (double& v : w) {
            v = static_cast<double>(io::read_f32(in, origin));
            if (!std::isfinite(v)) {
                throw std::runtime_error("load_model: non-finite weight in " + origin);
            }
        }
        model.weights.push_back(std::move(w));
    }
    for (std::uint32_t l = 0; l < layers; ++l) {
        std::vector<double> b(model.layer_dims[l + 1]);
        for (double& v : b) {
            v = static_cast<double>(io::read_f32(in, origin));
            if (!std::isfinite(v)) {
                throw std::runtime_error("load_model: non-finite bias in " + origin);
            }
        }
        model.biases.push_back(std::move(b));
    }
    return model;
}

void save_model(const MlpModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_model: cannot open " + path);
    save_model(model, out);
}

MlpModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_model: cannot open " + path);
    return load_model(in, path);
}

}  // namespace desot
