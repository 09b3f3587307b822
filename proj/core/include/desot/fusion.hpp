#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "desot/dataset.hpp"
#include "desot/distribution.hpp"
#include "desot/mlp.hpp"

namespace desot {

// t -> member assignment for one sequence; members are 0-based indices below
// member_count.
struct MemberSchedule {
    std::vector<std::size_t> assignment;
    std::size_t member_count = 0;

    std::size_t length() const { return assignment.size(); }
};

// Forward-pass bookkeeping. forward_passes always equals the sum of
// per_member entries.
struct CostCounter {
    std::uint64_t forward_passes = 0;
    std::vector<std::uint64_t> per_member;

    explicit CostCounter(std::size_t member_count = 1) : per_member(member_count, 0) {}

    void record(std::size_t member, std::uint64_t count = 1) {
        per_member.at(member) += count;
        forward_passes += count;
    }

    // Deterministic merge of per-worker counters.
    void merge(const CostCounter& other);
};

// Element-wise (class-wise) average across per-frame output distributions.
CategoricalDist fuse_time(std::span<const CategoricalDist> frame_dists);

// Same averaging across ensemble members' sequence-level distributions.
CategoricalDist fuse_ensemble(std::span<const CategoricalDist> member_dists);

// sigma(t) = (t + offset) mod member_count; usage counts differ by at most 1.
MemberSchedule round_robin_schedule(std::size_t seq_len, std::size_t member_count,
                                    std::size_t offset);

// Single model on every frame, fused over time. Counts seq_len passes against
// member 0 of the counter. Logits are divided by temperature before softmax.
CategoricalDist predict_sm(const MlpModel& model, const SequenceSample& seq,
                           CostCounter& counter, double temperature = 1.0);

// Every member on every frame (M*T passes), all fused.
CategoricalDist predict_de(std::span<const MlpModel> models, const SequenceSample& seq,
                           CostCounter& counter, double temperature = 1.0);

// One scheduled member per frame (T passes total).
CategoricalDist predict_desot(std::span<const MlpModel> models, const SequenceSample& seq,
                              const MemberSchedule& schedule, CostCounter& counter,
                              double temperature = 1.0);

// One stochastic dropout pass per frame, mask keyed by (rng_seed, t), fused
// over time. Warns (returns normally) when the model has no dropout, since the
// result then degenerates to predict_sm.
CategoricalDist predict_mc_dropout(const MlpModel& model, const SequenceSample& seq,
                                   std::uint64_t rng_seed, CostCounter& counter,
                                   double temperature = 1.0);

// Moving average over the most recent `window` frame distributions.
class StreamingFuser {
public:
    explicit StreamingFuser(std::size_t window);

    // Adds one frame distribution and returns the mean of the up-to-`window`
    // most recent ones, oldest first.
    CategoricalDist push(const CategoricalDist& dist);

    std::size_t stored() const { return buffer_.size(); }

private:
    std::size_t window_;
    std::size_t next_ = 0;  // ring insertion point once full
    std::vector<CategoricalDist> buffer_;
};

}  // namespace desot
