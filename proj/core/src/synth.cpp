#include "desot/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "desot/rng.hpp"

namespace desot {

namespace {

constexpr std::size_t kColorCount = 3;

const char* kShapeNames[] = {"disc", "square", "triangle", "diamond", "plus", "hbars",
                             "ring", "vbars", "xcross", "checker", "frame", "wedge"};
constexpr std::size_t kShapeCount = sizeof(kShapeNames) / sizeof(kShapeNames[0]);

const char* kColorNames[] = {"red", "green", "blue"};

const double kColorBase[kColorCount][3] = {
    {0.85, 0.15, 0.15},
    {0.15, 0.85, 0.15},
    {0.20, 0.25, 0.90},
};

// u = (y - cy)/r, v = (x - cx)/r
bool shape_mask(std::size_t shape, double u, double v) {
    switch (shape) {
        case 0: return u * u + v * v <= 1.0;                          // disc
        case 1: return std::max(std::abs(u), std::abs(v)) <= 0.85;    // square
        case 2: return u <= 0.9 && u >= -1.0 && std::abs(v) <= 0.9 * (u + 1.0) / 2.0;
        case 3: return std::abs(u) + std::abs(v) <= 1.1;              // diamond
        case 4:                                                        // plus
            return (std::abs(v) <= 0.35 && std::abs(u) <= 1.0) ||
                   (std::abs(u) <= 0.35 && std::abs(v) <= 1.0);
        case 5: {                                                      // horizontal bars
            if (std::abs(u) > 1.0 || std::abs(v) > 0.95) return false;
            return static_cast<int>(std::floor((u + 1.0) * 2.5)) % 2 == 0;
        }
        case 6: {                                                      // ring
            const double rr = std::sqrt(u * u + v * v);
            return rr >= 0.55 && rr <= 1.0;
        }
        case 7: {                                                      // vertical bars
            if (std::abs(v) > 1.0 || std::abs(u) > 0.95) return false;
            return static_cast<int>(std::floor((v + 1.0) * 2.5)) % 2 == 0;
        }
        case 8:                                                        // diagonal cross
            return std::max(std::abs(u), std::abs(v)) <= 1.0 &&
                   (std::abs(u - v) <= 0.35 || std::abs(u + v) <= 0.35);
        case 9: {                                                      // checker
            if (std::max(std::abs(u), std::abs(v)) > 0.9) return false;
            const int cell = static_cast<int>(std::floor((u + 1.0) * 2.0)) +
                             static_cast<int>(std::floor((v + 1.0) * 2.0));
            return cell % 2 == 0;
        }
        case 10: {                                                     // hollow frame
            const double m = std::max(std::abs(u), std::abs(v));
            return m >= 0.55 && m <= 0.95;
        }
        case 11:                                                       // wedge
            return u >= -0.9 && u <= 0.9 && v >= -0.9 && v <= u;
        default:
            throw std::invalid_argument("shape_mask: shape id out of range");
    }
}

struct ClassDef {
    std::size_t shape;
    std::size_t color;
    std::string name;
};

std::vector<ClassDef> class_table(const GlyphDatasetSpec& spec) {
    const std::size_t in_shapes = (spec.in_dist_classes + kColorCount - 1) / kColorCount;
    if (in_shapes + spec.ood_classes > kShapeCount) {
        throw std::invalid_argument("glyph generator: not enough distinct shapes for " +
                                    std::to_string(spec.in_dist_classes) + "+" +
                                    std::to_string(spec.ood_classes) + " classes");
    }
    std::vector<ClassDef> table;
    for (std::size_t c = 0; c < spec.in_dist_classes; ++c) {
        const std::size_t shape = c / kColorCount;
        const std::size_t color = c % kColorCount;
        table.push_back({shape, color,
                         std::string(kShapeNames[shape]) + "_" + kColorNames[color]});
    }
    for (std::size_t j = 0; j < spec.ood_classes; ++j) {
        const std::size_t shape = in_shapes + j;  // shapes unseen in-distribution
        const std::size_t color = j % kColorCount;
        table.push_back({shape, color,
                         std::string(kShapeNames[shape]) + "_" + kColorNames[color]});
    }
    return table;
}

// Largest-remainder apportionment of n samples over long-tailed weights.
std::vector<std::size_t> tail_counts(std::size_t num_classes, std::size_t n, double exponent) {
    std::vector<double> weights(num_classes);
    double total = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        weights[c] = std::pow(static_cast<double>(c + 1), -exponent);
        total += weights[c];
    }
    std::vector<std::size_t> counts(num_classes);
    std::vector<std::pair<double, std::size_t>> remainders(num_classes);
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double exact = static_cast<double>(n) * weights[c] / total;
        counts[c] = static_cast<std::size_t>(exact);
        remainders[c] = {exact - static_cast<double>(counts[c]), c};
        assigned += counts[c];
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) {
        counts[remainders[i % num_classes].second] += 1;
    }
    return counts;
}

void render_glyph(std::span<float> frame, std::size_t h, std::size_t w, const ClassDef& cls,
                  Rng& rng) {
    const double bg_level = rng.uniform(0.25, 0.75);
    double bg[3];
    for (double& b : bg) b = std::clamp(bg_level + rng.uniform(-0.06, 0.06), 0.0, 1.0);

    double color[3];
    for (std::size_t c = 0; c < 3; ++c) {
        color[c] = std::clamp(kColorBase[cls.color][c] + rng.uniform(-0.10, 0.10), 0.0, 1.0);
    }

    const double cy = (static_cast<double>(h) - 1.0) / 2.0 + rng.uniform(-0.8, 0.8);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0 + rng.uniform(-0.8, 0.8);
    const double radius = rng.uniform(0.30, 0.42) * static_cast<double>(std::min(h, w));
    const double alpha = rng.uniform(0.85, 1.0);
    const double sigma = rng.uniform(0.04, 0.12);

    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double u = (static_cast<double>(y) - cy) / radius;
            const double v = (static_cast<double>(x) - cx) / radius;
            const bool inside = shape_mask(cls.shape, u, v);
            for (std::size_t c = 0; c < 3; ++c) {
                double val = inside ? alpha * color[c] + (1.0 - alpha) * bg[c] : bg[c];
                val += sigma * rng.normal();
                frame[(y * w + x) * 3 + c] = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
        }
    }
}

}  // namespace

std::vector<std::string> ood_class_names(const GlyphDatasetSpec& spec) {
    std::vector<std::string> names;
    const auto table = class_table(spec);
    for (std::size_t j = 0; j < spec.ood_classes; ++j) {
        names.push_back(table[spec.in_dist_classes + j].name);
    }
    return names;
}

FrameDataset generate_glyph_frames(const GlyphDatasetSpec& spec) {
    if (spec.in_dist_classes == 0) {
        throw std::invalid_argument("glyph generator: need at least one class");
    }
    if (spec.height < 6 || spec.width < 6) {
        throw std::invalid_argument("glyph generator: frames must be at least 6x6");
    }
    const auto table = class_table(spec);

    FrameDataset ds;
    ds.height = spec.height;
    ds.width = spec.width;
    ds.channels = 3;
    ds.num_classes = table.size();
    for (const ClassDef& cls : table) ds.class_names.push_back(cls.name);

    std::vector<std::size_t> counts =
        tail_counts(spec.in_dist_classes, spec.in_dist_frames, spec.tail_exponent);
    if (spec.ood_classes > 0) {
        const auto ood = tail_counts(spec.ood_classes, spec.ood_frames, 0.0);
        counts.insert(counts.end(), ood.begin(), ood.end());
    }

    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    const std::size_t dim = ds.frame_dim();
    ds.labels.resize(total);
    ds.pixels.resize(total * dim);

    std::size_t index = 0;
    for (std::size_t c = 0; c < table.size(); ++c) {
        for (std::size_t j = 0; j < counts[c]; ++j, ++index) {
            ds.labels[index] = static_cast<std::uint16_t>(c);
            Rng rng(mix_seed(spec.seed, 0x474c5946ull, c, j));  // "GLYF"
            render_glyph({ds.pixels.data() + index * dim, dim}, spec.height, spec.width,
                         table[c], rng);
        }
    }

    // shuffle record order so file order carries no class structure
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(spec.seed, 0x4f524452ull));  // "ORDR"
    rng.shuffle(order);
    FrameDataset shuffled = ds;
    for (std::size_t i = 0; i < total; ++i) {
        shuffled.labels[i] = ds.labels[order[i]];
        std::copy_n(ds.pixels.begin() + static_cast<std::ptrdiff_t>(order[i] * dim), dim,
                    shuffled.pixels.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    return shuffled;
}

}  // namespace desot
