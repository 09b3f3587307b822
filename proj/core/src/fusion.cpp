#include "desot/fusion.hpp"

#include <iostream>
#include <stdexcept>
#include <string>

#include "desot/rng.hpp"

namespace desot {

void CostCounter::merge(const CostCounter& other) {
    if (other.per_member.size() != per_member.size()) {
        throw std::invalid_argument("CostCounter::merge: member count mismatch");
    }
    for (std::size_t m = 0; m < per_member.size(); ++m) {
        per_member[m] += other.per_member[m];
    }
    forward_passes += other.forward_passes;
}

namespace {

CategoricalDist mean_of(std::span<const CategoricalDist> dists, const char* context) {
    if (dists.empty()) {
        throw std::invalid_argument(std::string(context) + ": empty distribution list");
    }
    const std::size_t num_classes = dists.front().size();
    CategoricalDist acc;
    acc.probs.assign(num_classes, 0.0);
    for (const CategoricalDist& d : dists) {
        if (d.size() != num_classes) {
            throw std::invalid_argument(std::string(context) + ": class count mismatch");
        }
        check_dist(d, context);
        for (std::size_t c = 0; c < num_classes; ++c) {
            acc.probs[c] += d.probs[c];
        }
    }
    const double inv = 1.0 / static_cast<double>(dists.size());
    for (double& p : acc.probs) {
        p *= inv;
    }
    return acc;
}

CategoricalDist frame_dist(const MlpModel& model, const SequenceSample& seq, std::size_t t,
                           double temperature) {
    std::vector<double> logits =
        forward(model, seq.frame(t), ForwardMode::eval_deterministic, 0);
    if (temperature != 1.0) {
        for (double& z : logits) z /= temperature;
    }
    return softmax(logits);
}

void check_temperature(double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("predict: temperature must be positive");
    }
}

}  // namespace

CategoricalDist fuse_time(std::span<const CategoricalDist> frame_dists) {
    return mean_of(frame_dists, "fuse_time");
}

CategoricalDist fuse_ensemble(std::span<const CategoricalDist> member_dists) {
    return mean_of(member_dists, "fuse_ensemble");
}

MemberSchedule round_robin_schedule(std::size_t seq_len, std::size_t member_count,
                                    std::size_t offset) {
    if (seq_len == 0 || member_count == 0) {
        throw std::invalid_argument("round_robin_schedule: seq_len and member_count must be >= 1");
    }
    if (offset >= member_count) {
        throw std::invalid_argument("round_robin_schedule: offset must lie below member_count");
    }
    MemberSchedule schedule;
    schedule.member_count = member_count;
    schedule.assignment.resize(seq_len);
    for (std::size_t t = 0; t < seq_len; ++t) {
        schedule.assignment[t] = (t + offset) % member_count;
    }
    return schedule;
}

CategoricalDist predict_sm(const MlpModel& model, const SequenceSample& seq,
                           CostCounter& counter, double temperature) {
    check_temperature(temperature);
    const std::size_t seq_len = seq.length();
    if (seq_len == 0) throw std::invalid_argument("predict_sm: empty sequence");
    CategoricalDist acc;
    acc.probs.assign(model.output_dim(), 0.0);
    for (std::size_t t = 0; t < seq_len; ++t) {
        const CategoricalDist p = frame_dist(model, seq, t, temperature);
        for (std::size_t c = 0; c < acc.probs.size(); ++c) {
            acc.probs[c] += p.probs[c];
        }
        counter.record(0);
    }
    const double inv = 1.0 / static_cast<double>(seq_len);
    for (double& p : acc.probs) p *= inv;
    return acc;
}

CategoricalDist predict_de(std::span<const MlpModel> models, const SequenceSample& seq,
                           CostCounter& counter, double temperature) {
    check_temperature(temperature);
    if (models.empty()) throw std::invalid_argument("predict_de: empty model list");
    const std::size_t seq_len = seq.length();
    if (seq_len == 0) throw std::invalid_argument("predict_de: empty sequence");
    const std::size_t num_classes = models.front().output_dim();
    for (const MlpModel& m : models) {
        if (m.output_dim() != num_classes) {
            throw std::invalid_argument("predict_de: members disagree on class count");
        }
    }
    CategoricalDist acc;
    acc.probs.assign(num_classes, 0.0);
    for (std::size_t m = 0; m < models.size(); ++m) {
        for (std::size_t t = 0; t < seq_len; ++t) {
            const CategoricalDist p = frame_dist(models[m], seq, t, temperature);
            for (std::size_t c = 0; c < num_classes; ++c) {
                acc.probs[c] += p.probs[c];
            }
            counter.record(m);
        }
    }
    const double inv = 1.0 / static_cast<double>(models.size() * seq_len);
    for (double& p : acc.probs) p *= inv;
    return acc;
}

CategoricalDist predict_desot(std::span<const MlpModel> models, const SequenceSample& seq,
                              const MemberSchedule& schedule, CostCounter& counter,
                              double temperature) {
    check_temperature(temperature);
    if (models.empty()) throw std::invalid_argument("predict_desot: empty model list");
    const std::size_t seq_len = seq.length();
    if (schedule.length() != seq_len) {
        throw std::invalid_argument("predict_desot: schedule length " +
                                    std::to_string(schedule.length()) +
                                    " does not match sequence length " + std::to_string(seq_len));
    }
    if (schedule.member_count != models.size()) {
        throw std::invalid_argument("predict_desot: schedule expects " +
                                    std::to_string(schedule.member_count) + " members, got " +
                                    std::to_string(models.size()));
    }
    const std::size_t num_classes = models.front().output_dim();
    for (const MlpModel& m : models) {
        if (m.output_dim() != num_classes) {
            throw std::invalid_argument("predict_desot: members disagree on class count");
        }
    }
    CategoricalDist acc;
    acc.probs.assign(num_classes, 0.0);
    for (std::size_t t = 0; t < seq_len; ++t) {
        const std::size_t member = schedule.assignment[t];
        if (member >= models.size()) {
            throw std::invalid_argument("predict_desot: schedule references member " +
                                        std::to_string(member));
        }
        const CategoricalDist p = frame_dist(models[member], seq, t, temperature);
        for (std::size_t c = 0; c < num_classes; ++c) {
            acc.probs[c] += p.probs[c];
        }
        counter.record(member);
    }
    const double inv = 1.0 / static_cast<double>(seq_len);
    for (double& p : acc.probs) p *= inv;
    return acc;
}

CategoricalDist predict_mc_dropout(const MlpModel& model, const SequenceSample& seq,
                                   std::uint64_t rng_seed, CostCounter& counter,
                                   double temperature) {
    check_temperature(temperature);
    const std::size_t seq_len = seq.length();
    if (seq_len == 0) throw std::invalid_argument("predict_mc_dropout: empty sequence");
    if (model.dropout_rate == 0.0) {
        std::cerr << "warning: predict_mc_dropout on a model with dropout_rate=0 "
                     "degenerates to predict_sm\n";
    }
    CategoricalDist acc;
    acc.probs.assign(model.output_dim(), 0.0);
    for (std::size_t t = 0; t < seq_len; ++t) {
        std::vector<double> logits = forward(model, seq.frame(t),
                                             ForwardMode::eval_with_dropout,
                                             mix_seed(rng_seed, t));
        if (temperature != 1.0) {
            for (double& z : logits) z /= temperature;
        }
        const CategoricalDist p = softmax(logits);
        for (std::size_t c = 0; c < acc.probs.size(); ++c) {
            acc.probs[c] += p.probs[c];
        }
        counter.record(0);
    }
    const double inv = 1.0 / static_cast<double>(seq_len);
    for (double& p : acc.probs) p *= inv;
    return acc;
}

StreamingFuser::StreamingFuser(std::size_t window) : window_(window) {
    if (window == 0) throw std::invalid_argument("StreamingFuser: window must be >= 1");
    buffer_.reserve(window);
}

CategoricalDist StreamingFuser::push(const CategoricalDist& dist) {
    check_dist(dist, "StreamingFuser::push");
    if (buffer_.size() < window_) {
        buffer_.push_back(dist);
    } else {
        buffer_[next_] = dist;
        next_ = (next_ + 1) % window_;
    }
    // mean in chronological order, matching fuse_time's summation order
    CategoricalDist acc;
    acc.probs.assign(dist.size(), 0.0);
    const std::size_t count = buffer_.size();
    const std::size_t oldest = buffer_.size() < window_ ? 0 : next_;
    for (std::size_t i = 0; i < count; ++i) {
        const CategoricalDist& d = buffer_[(oldest + i) % count];
        if (d.size() != dist.size()) {
            throw std::invalid_argument("StreamingFuser::push: class count changed mid-stream");
        }
        for (std::size_t c = 0; c < acc.probs.size(); ++c) {
            acc.probs[c] += d.probs[c];
        }
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (double& p : acc.probs) p *= inv;
    return acc;
}

}  // namespace desot
