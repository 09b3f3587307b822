#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "desot/dataset.hpp"
#include "desot/distribution.hpp"

namespace desot {

// Feed-forward ReLU classifier. weights[l] has shape layer_dims[l+1] x
// layer_dims[l], row-major; a dropout layer sits after every ReLU.
struct MlpModel {
    std::vector<std::size_t> layer_dims;
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;

    std::size_t num_layers() const { return weights.size(); }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
    void validate() const;
};

enum class ForwardMode {
    train_with_dropout,
    eval_deterministic,
    eval_with_dropout,
};

// Per-layer buffers kept by forward() for the backward pass.
struct ForwardCache {
    // activations[0] is the input; activations[l+1] is layer l's output after
    // ReLU and dropout (the final entry holds raw logits).
    std::vector<std::vector<double>> activations;
    // pre_activations[l] = W_l a_l + b_l for hidden layers (logits excluded).
    std::vector<std::vector<double>> pre_activations;
    // dropout_scale[l][j] is 0 (dropped) or 1/(1-p) (kept), per hidden unit.
    std::vector<std::vector<double>> dropout_scale;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 256;
    double learning_rate = 5e-4;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    double dropout_rate = 0.0;
};

// Gradient (or moment) buffers shaped like the model parameters.
struct ParamTensors {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    static ParamTensors zeros_like(const MlpModel& model);
};

struct AdamWState {
    ParamTensors first_moment;
    ParamTensors second_moment;
    std::uint64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamWState(const MlpModel& model)
        : first_moment(ParamTensors::zeros_like(model)),
          second_moment(ParamTensors::zeros_like(model)) {}
};

struct TrainLog {
    std::vector<double> epoch_loss;
};

// He-uniform weights (bound sqrt(6/fan_in)), zero biases, all drawn from the
// seed; identical (layer_dims, seed) give bit-identical models.
MlpModel init_model(const std::vector<std::size_t>& layer_dims, double dropout_rate,
                    std::uint64_t seed);

// One forward pass. Dropout masks in the two stochastic modes are a pure
// function of rng_seed; eval_deterministic ignores dropout entirely (inverted
// dropout keeps expectations aligned). Pass a cache to retain activations.
std::vector<double> forward(const MlpModel& model, std::span<const float> x,
                            ForwardMode mode, std::uint64_t rng_seed,
                            ForwardCache* cache = nullptr);

CategoricalDist softmax(std::span<const double> logits);

// loss = -log softmax(logits)[label]; grad = softmax(logits) - onehot(label).
std::pair<double, std::vector<double>> cross_entropy_and_grad(std::span<const double> logits,
                                                              std::size_t label);

// Decoupled weight decay: theta <- theta - lr_t*(m_hat/(sqrt(v_hat)+eps) + wd*theta).
void adamw_step(MlpModel& model, AdamWState& state, const ParamTensors& grads, double lr_t,
                double weight_decay);

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double base_lr);

// Full training loop: seeded shuffling, minibatch cross-entropy, AdamW with a
// per-epoch cosine schedule. Deterministic given (cfg.seed, dataset order).
// Throws std::runtime_error with a diagnostic if the loss goes non-finite.
TrainLog train(MlpModel& model, const FrameDataset& dataset, const TrainConfig& cfg);

// Backward pass for a single sample; used by the training loop and exposed
// for gradient checking. grad_logits is dLoss/dlogits.
ParamTensors backward(const MlpModel& model, const ForwardCache& cache,
                      std::span<const double> grad_logits);

// ---- MLPW weight container --------------------------------------------------
// "MLPW" magic, format version, layer count, per-layer (in, out) u32 pairs,
// dropout_rate f64, then all weights followed by all biases as little-endian
// f32 in layer order, row-major. save/load/save is byte-identical.

void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);
void save_model(const MlpModel& model, std::ostream& out);
MlpModel load_model(std::istream& in, const std::string& origin);

}  // namespace desot
