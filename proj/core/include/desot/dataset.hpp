#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace desot {

// Fixed-size image frames, pixel values in [0, 1]. Pixel layout is
// row-major with interleaved channels: (y, x, ch) -> (y*width + x)*channels + ch.
struct FrameDataset {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::size_t num_classes = 0;
    std::vector<std::string> class_names;
    std::vector<std::uint16_t> labels;
    std::vector<float> pixels;  // size() * frame_dim()

    std::size_t size() const { return labels.size(); }
    std::size_t frame_dim() const { return height * width * channels; }

    std::span<const float> frame(std::size_t i) const {
        return {pixels.data() + i * frame_dim(), frame_dim()};
    }
    std::span<float> frame(std::size_t i) {
        return {pixels.data() + i * frame_dim(), frame_dim()};
    }

    // Throws std::invalid_argument on any violated invariant.
    void validate() const;
};

// One tracked object: seq_len frames sharing one label. Frames are stored
// flat, frame t at [t*frame_dim, (t+1)*frame_dim).
struct SequenceSample {
    std::vector<float> frames;
    std::size_t frame_dim = 0;
    std::size_t label = 0;
    std::int64_t group_id = 0;

    std::size_t length() const { return frame_dim == 0 ? 0 : frames.size() / frame_dim; }
    std::span<const float> frame(std::size_t t) const {
        return {frames.data() + t * frame_dim, frame_dim};
    }
    std::span<float> frame(std::size_t t) {
        return {frames.data() + t * frame_dim, frame_dim};
    }
};

struct JitterParams {
    double translate_frac = 0.10;  // per-frame shift, fraction of width
    double scale_frac = 0.10;      // per-frame zoom in [1-f, 1+f]
    double noise_sigma = 0.02;     // additive Gaussian pixel noise

    bool is_zero() const {
        return translate_frac == 0.0 && scale_frac == 0.0 && noise_sigma == 0.0;
    }
};

struct SequenceDataset {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::size_t num_classes = 0;
    std::size_t seq_len = 0;
    std::vector<std::string> class_names;
    std::vector<SequenceSample> sequences;
    // generation provenance
    std::uint64_t gen_seed = 0;
    JitterParams jitter;

    std::size_t size() const { return sequences.size(); }
    std::size_t frame_dim() const { return height * width * channels; }
    void validate() const;
};

// ---- container I/O (bit-exact round trip) ----------------------------------

void save_dataset(const FrameDataset& ds, const std::string& path);
FrameDataset load_dataset(const std::string& path);
void save_dataset(const FrameDataset& ds, std::ostream& out);
FrameDataset load_dataset(std::istream& in, const std::string& origin);

void save_sequences(const SequenceDataset& ds, const std::string& path);
SequenceDataset load_sequences(const std::string& path);
void save_sequences(const SequenceDataset& ds, std::ostream& out);
SequenceDataset load_sequences(std::istream& in, const std::string& origin);

// ---- dataset surgery --------------------------------------------------------

struct ClassFilterResult {
    FrameDataset dataset;
    // new dense label -> original label
    std::vector<std::size_t> kept_classes;
};

// Drops classes whose sample count falls outside [min_count, max_count] and
// re-indexes the remaining labels densely.
ClassFilterResult filter_classes(const FrameDataset& ds, std::size_t min_count,
                                 std::optional<std::size_t> max_count);

struct OodHoldout {
    FrameDataset in_dist;
    FrameDataset ood;
};

// Removes the named classes from the label space entirely; their samples form
// the OOD set (labels re-indexed within each part).
OodHoldout holdout_ood_classes(const FrameDataset& ds,
                               const std::vector<std::string>& class_names);

// Expands each base frame into a sequence of seq_len frames: seq_len-1 jittered
// views followed by the unperturbed base frame. Pure function of
// (ds, seq_len, jitter, seed); per-frame randomness is keyed as
// mix_seed(seed, sample_index, frame_index).
SequenceDataset synthesize_sequences(const FrameDataset& ds, std::size_t seq_len,
                                     const JitterParams& jitter, std::uint64_t seed);

}  // namespace desot
