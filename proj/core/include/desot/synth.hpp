#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "desot/dataset.hpp"

namespace desot {

// Synthetic sign-like dataset: colored geometric glyphs on noisy backgrounds
// with long-tailed class counts. Classes are (shape, color) pairs; the OOD
// classes use shapes that never appear in the in-distribution label space.
struct GlyphDatasetSpec {
    std::size_t in_dist_classes = 20;
    std::size_t ood_classes = 3;
    std::size_t in_dist_frames = 14200;
    std::size_t ood_frames = 500;
    std::size_t height = 10;
    std::size_t width = 10;
    double tail_exponent = 1.0;  // class c weight ~ (c+1)^-a
    std::uint64_t seed = 1;
};

// Master dataset containing both in-distribution and OOD classes; feed it to
// holdout_ood_classes with ood_class_names() to carve off the OOD set.
FrameDataset generate_glyph_frames(const GlyphDatasetSpec& spec);

std::vector<std::string> ood_class_names(const GlyphDatasetSpec& spec);

}  // namespace desot
