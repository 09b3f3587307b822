#include "desot/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "desot/io_util.hpp"
#include "desot/rng.hpp"

namespace desot {

namespace {
constexpr char kFrameMagic[4] = {'D', 'S', 'E', 'T'};
constexpr char kSeqMagic[4] = {'D', 'S', 'E', 'Q'};
constexpr std::uint32_t kContainerVersion = 1;

void write_class_names(std::ostream& out, const std::vector<std::string>& names) {
    for (const std::string& name : names) {
        io::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
}

std::vector<std::string> read_class_names(std::istream& in, std::size_t count,
                                          const std::string& origin) {
    std::vector<std::string> names(count);
    for (std::string& name : names) {
        const std::uint32_t len = io::read_u32(in, origin);
        if (len > (1u << 20)) throw std::runtime_error("class name too long in " + origin);
        name.resize(len);
        in.read(name.data(), len);
        if (!in) throw std::runtime_error("truncated file: " + origin);
    }
    return names;
}

void check_pixel(float v, std::size_t index, const std::string& origin) {
    if (!(v >= 0.0f && v <= 1.0f)) {
        throw std::runtime_error("pixel out of range at index " + std::to_string(index) +
                                 " in " + origin);
    }
}
}  // namespace

void FrameDataset::validate() const {
    if (height == 0 || width == 0 || channels == 0) {
        throw std::invalid_argument("FrameDataset: zero geometry");
    }
    if (num_classes == 0) throw std::invalid_argument("FrameDataset: zero classes");
    if (class_names.size() != num_classes) {
        throw std::invalid_argument("FrameDataset: class_names size mismatch");
    }
    if (pixels.size() != size() * frame_dim()) {
        throw std::invalid_argument("FrameDataset: pixel buffer size mismatch");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw std::invalid_argument("FrameDataset: label out of range at record " +
                                        std::to_string(i));
        }
    }
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        if (!(pixels[i] >= 0.0f && pixels[i] <= 1.0f)) {
            throw std::invalid_argument("FrameDataset: pixel out of range at index " +
                                        std::to_string(i));
        }
    }
}

void SequenceDataset::validate() const {
    if (height == 0 || width == 0 || channels == 0 || seq_len == 0) {
        throw std::invalid_argument("SequenceDataset: zero geometry");
    }
    if (class_names.size() != num_classes) {
        throw std::invalid_argument("SequenceDataset: class_names size mismatch");
    }
    std::unordered_set<std::int64_t> seen;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        const SequenceSample& s = sequences[i];
        if (s.frame_dim != frame_dim() || s.length() != seq_len) {
            throw std::invalid_argument("SequenceDataset: shape mismatch at sequence " +
                                        std::to_string(i));
        }
        if (s.label >= num_classes) {
            throw std::invalid_argument("SequenceDataset: label out of range at sequence " +
                                        std::to_string(i));
        }
        if (!seen.insert(s.group_id).second) {
            throw std::invalid_argument("SequenceDataset: duplicate group_id " +
                                        std::to_string(s.group_id));
        }
    }
}

// ---- frame container --------------------------------------------------------

void save_dataset(const FrameDataset& ds, std::ostream& out) {
    ds.validate();
    out.write(kFrameMagic, 4);
    io::write_u32(out, kContainerVersion);
    io::write_u32(out, static_cast<std::uint32_t>(ds.size()));
    io::write_u32(out, static_cast<std::uint32_t>(ds.height));
    io::write_u32(out, static_cast<std::uint32_t>(ds.width));
    io::write_u32(out, static_cast<std::uint32_t>(ds.channels));
    io::write_u32(out, static_cast<std::uint32_t>(ds.num_classes));
    write_class_names(out, ds.class_names);
    for (std::uint16_t label : ds.labels) {
        out.put(static_cast<char>(label & 0xff));
        out.put(static_cast<char>(label >> 8));
    }
    for (float v : ds.pixels) {
        io::write_f32(out, v);
    }
    if (!out) throw std::runtime_error("save_dataset: write failed");
}

FrameDataset load_dataset(std::istream& in, const std::string& origin) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kFrameMagic, 4) != 0) {
        throw std::runtime_error("load_dataset: bad magic in " + origin);
    }
    const std::uint32_t version = io::read_u32(in, origin);
    if (version != kContainerVersion) {
        throw std::runtime_error("load_dataset: unsupported version in " + origin);
    }
    FrameDataset ds;
    const std::uint32_t n = io::read_u32(in, origin);
    ds.height = io::read_u32(in, origin);
    ds.width = io::read_u32(in, origin);
    ds.channels = io::read_u32(in, origin);
    ds.num_classes = io::read_u32(in, origin);
    if (ds.height == 0 || ds.width == 0 || ds.channels == 0 || ds.num_classes == 0) {
        throw std::runtime_error("load_dataset: zero header field in " + origin);
    }
    ds.class_names = read_class_names(in, ds.num_classes, origin);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        if (!in) throw std::runtime_error("truncated file: " + origin);
        ds.labels[i] = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
        if (ds.labels[i] >= ds.num_classes) {
            throw std::runtime_error("load_dataset: label out of range at record " +
                                     std::to_string(i) + " in " + origin);
        }
    }
    ds.pixels.resize(static_cast<std::size_t>(n) * ds.frame_dim());
    for (std::size_t i = 0; i < ds.pixels.size(); ++i) {
        ds.pixels[i] = io::read_f32(in, origin);
        check_pixel(ds.pixels[i], i, origin);
    }
    return ds;
}

void save_dataset(const FrameDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    save_dataset(ds, out);
}

FrameDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
    return load_dataset(in, path);
}

// ---- sequence container -----------------------------------------------------

void save_sequences(const SequenceDataset& ds, std::ostream& out) {
    ds.validate();
    out.write(kSeqMagic, 4);
    io::write_u32(out, kContainerVersion);
    io::write_u32(out, static_cast<std::uint32_t>(ds.size()));
    io::write_u32(out, static_cast<std::uint32_t>(ds.seq_len));
    io::write_u32(out, static_cast<std::uint32_t>(ds.height));
    io::write_u32(out, static_cast<std::uint32_t>(ds.width));
    io::write_u32(out, static_cast<std::uint32_t>(ds.channels));
    io::write_u32(out, static_cast<std::uint32_t>(ds.num_classes));
    write_class_names(out, ds.class_names);
    for (const SequenceSample& s : ds.sequences) {
        out.put(static_cast<char>(s.label & 0xff));
        out.put(static_cast<char>((s.label >> 8) & 0xff));
    }
    for (const SequenceSample& s : ds.sequences) {
        io::write_u64(out, static_cast<std::uint64_t>(s.group_id));
    }
    for (const SequenceSample& s : ds.sequences) {
        for (float v : s.frames) {
            io::write_f32(out, v);
        }
    }
    if (!out) throw std::runtime_error("save_sequences: write failed");
}

SequenceDataset load_sequences(std::istream& in, const std::string& origin) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kSeqMagic, 4) != 0) {
        throw std::runtime_error("load_sequences: bad magic in " + origin);
    }
    const std::uint32_t version = io::read_u32(in, origin);
    if (version != kContainerVersion) {
        throw std::runtime_error("load_sequences: unsupported version in " + origin);
    }
    SequenceDataset ds;
    const std::uint32_t n = io::read_u32(in, origin);
    ds.seq_len = io::read_u32(in, origin);
    ds.height = io::read_u32(in, origin);
    ds.width = io::read_u32(in, origin);
    ds.channels = io::read_u32(in, origin);
    ds.num_classes = io::read_u32(in, origin);
    if (ds.seq_len == 0 || ds.height == 0 || ds.width == 0 || ds.channels == 0 ||
        ds.num_classes == 0) {
        throw std::runtime_error("load_sequences: zero header field in " + origin);
    }
    ds.class_names = read_class_names(in, ds.num_classes, origin);
    ds.sequences.resize(n);
    for (SequenceSample& s : ds.sequences) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        if (!in) throw std::runtime_error("truncated file: " + origin);
        s.label = static_cast<std::size_t>(b[0] | (b[1] << 8));
        if (s.label >= ds.num_classes) {
            throw std::runtime_error("load_sequences: label out of range in " + origin);
        }
    }
    for (SequenceSample& s : ds.sequences) {
        s.group_id = static_cast<std::int64_t>(io::read_u64(in, origin));
    }
    const std::size_t dim = ds.frame_dim();
    for (SequenceSample& s : ds.sequences) {
        s.frame_dim = dim;
        s.frames.resize(dim * ds.seq_len);
        for (std::size_t i = 0; i < s.frames.size(); ++i) {
            s.frames[i] = io::read_f32(in, origin);
            check_pixel(s.frames[i], i, origin);
        }
    }
    ds.validate();
    return ds;
}

void save_sequences(const SequenceDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_sequences: cannot open " + path);
    save_sequences(ds, out);
}

SequenceDataset load_sequences(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_sequences: cannot open " + path);
    return load_sequences(in, path);
}

// ---- dataset surgery --------------------------------------------------------

ClassFilterResult filter_classes(const FrameDataset& ds, std::size_t min_count,
                                 std::optional<std::size_t> max_count) {
    ds.validate();
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (std::uint16_t label : ds.labels) {
        counts[label] += 1;
    }
    std::vector<std::size_t> kept;
    std::vector<std::size_t> old_to_new(ds.num_classes, static_cast<std::size_t>(-1));
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        if (counts[c] < min_count) continue;
        if (max_count && counts[c] > *max_count) continue;
        old_to_new[c] = kept.size();
        kept.push_back(c);
    }
    if (kept.empty()) throw std::invalid_argument("filter_classes: all classes filtered out");

    ClassFilterResult result;
    result.kept_classes = kept;
    FrameDataset& out = result.dataset;
    out.height = ds.height;
    out.width = ds.width;
    out.channels = ds.channels;
    out.num_classes = kept.size();
    for (std::size_t c : kept) {
        out.class_names.push_back(ds.class_names[c]);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::size_t mapped = old_to_new[ds.labels[i]];
        if (mapped == static_cast<std::size_t>(-1)) continue;
        out.labels.push_back(static_cast<std::uint16_t>(mapped));
        const auto frame = ds.frame(i);
        out.pixels.insert(out.pixels.end(), frame.begin(), frame.end());
    }
    return result;
}

OodHoldout holdout_ood_classes(const FrameDataset& ds,
                               const std::vector<std::string>& class_names) {
    ds.validate();
    std::unordered_map<std::string, std::size_t> name_to_index;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        name_to_index[ds.class_names[c]] = c;
    }
    std::vector<bool> held(ds.num_classes, false);
    for (const std::string& name : class_names) {
        auto it = name_to_index.find(name);
        if (it == name_to_index.end()) {
            throw std::invalid_argument("holdout_ood_classes: unknown class '" + name + "'");
        }
        held[it->second] = true;
    }

    OodHoldout result;
    auto& in_dist = result.in_dist;
    auto& ood = result.ood;
    in_dist.height = ood.height = ds.height;
    in_dist.width = ood.width = ds.width;
    in_dist.channels = ood.channels = ds.channels;

    std::vector<std::size_t> old_to_in(ds.num_classes, static_cast<std::size_t>(-1));
    std::vector<std::size_t> old_to_ood(ds.num_classes, static_cast<std::size_t>(-1));
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        if (held[c]) {
            old_to_ood[c] = ood.class_names.size();
            ood.class_names.push_back(ds.class_names[c]);
        } else {
            old_to_in[c] = in_dist.class_names.size();
            in_dist.class_names.push_back(ds.class_names[c]);
        }
    }
    in_dist.num_classes = in_dist.class_names.size();
    ood.num_classes = ood.class_names.size();
    if (in_dist.num_classes == 0) {
        throw std::invalid_argument("holdout_ood_classes: no classes left in-distribution");
    }

    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::size_t c = ds.labels[i];
        FrameDataset& target = held[c] ? ood : in_dist;
        const std::size_t mapped = held[c] ? old_to_ood[c] : old_to_in[c];
        target.labels.push_back(static_cast<std::uint16_t>(mapped));
        const auto frame = ds.frame(i);
        target.pixels.insert(target.pixels.end(), frame.begin(), frame.end());
    }
    return result;
}

// ---- sequence synthesis -----------------------------------------------------

namespace {

// Bilinear sample with clamp-to-edge; coordinates in pixel units.
float sample_bilinear(std::span<const float> frame, std::size_t h, std::size_t w, std::size_t k,
                      double y, double x, std::size_t ch) {
    const double max_y = static_cast<double>(h - 1);
    const double max_x = static_cast<double>(w - 1);
    y = std::clamp(y, 0.0, max_y);
    x = std::clamp(x, 0.0, max_x);
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    auto pix = [&](std::size_t yy, std::size_t xx) {
        return static_cast<double>(frame[(yy * w + xx) * k + ch]);
    };
    const double top = pix(y0, x0) * (1.0 - fx) + pix(y0, x1) * fx;
    const double bot = pix(y1, x0) * (1.0 - fx) + pix(y1, x1) * fx;
    return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

}  // namespace

SequenceDataset synthesize_sequences(const FrameDataset& ds, std::size_t seq_len,
                                     const JitterParams& jitter, std::uint64_t seed) {
    ds.validate();
    if (seq_len == 0) throw std::invalid_argument("synthesize_sequences: seq_len must be >= 1");
    if (jitter.translate_frac < 0.0 || jitter.scale_frac < 0.0 || jitter.noise_sigma < 0.0) {
        throw std::invalid_argument("synthesize_sequences: negative jitter parameter");
    }

    SequenceDataset out;
    out.height = ds.height;
    out.width = ds.width;
    out.channels = ds.channels;
    out.num_classes = ds.num_classes;
    out.class_names = ds.class_names;
    out.seq_len = seq_len;
    out.gen_seed = seed;
    out.jitter = jitter;

    const std::size_t dim = ds.frame_dim();
    const std::size_t h = ds.height;
    const std::size_t w = ds.width;
    const std::size_t k = ds.channels;
    const bool geometric = jitter.translate_frac > 0.0 || jitter.scale_frac > 0.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;

    out.sequences.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        SequenceSample& s = out.sequences[i];
        s.frame_dim = dim;
        s.label = ds.labels[i];
        s.group_id = static_cast<std::int64_t>(i);
        s.frames.resize(dim * seq_len);
        const auto base = ds.frame(i);

        for (std::size_t t = 0; t < seq_len; ++t) {
            auto dest = s.frame(t);
            if (t + 1 == seq_len || jitter.is_zero()) {
                // the annotated frame: unperturbed base
                std::copy(base.begin(), base.end(), dest.begin());
                continue;
            }
            Rng rng(mix_seed(seed, i, t));
            if (geometric) {
                const double shift = jitter.translate_frac * static_cast<double>(w);
                const double dx = rng.uniform(-shift, shift);
                const double dy = rng.uniform(-shift, shift);
                const double scale = rng.uniform(1.0 - jitter.scale_frac,
                                                 1.0 + jitter.scale_frac);
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        const double sy = cy + (static_cast<double>(y) - cy - dy) / scale;
                        const double sx = cx + (static_cast<double>(x) - cx - dx) / scale;
                        for (std::size_t c = 0; c < k; ++c) {
                            dest[(y * w + x) * k + c] = sample_bilinear(base, h, w, k, sy, sx, c);
                        }
                    }
                }
            } else {
                std::copy(base.begin(), base.end(), dest.begin());
            }
            if (jitter.noise_sigma > 0.0) {
                for (float& v : dest) {
                    const double noisy =
                        static_cast<double>(v) + jitter.noise_sigma * rng.normal();
                    v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
                }
            }
        }
    }
    return out;
}

}  // namespace desot
