#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace desot {

enum class AugmentationKind {
    rotation,        // angle 0 -> 180 degrees
    hue_shift,       // 0 -> 0.5 of the hue circle
    motion_blur,     // horizontal kernel length 1 -> 15 px
    gaussian_noise,  // sigma 0 -> 0.3
    brightness,      // offset 0 -> +/-0.5
    occlusion,       // masked square 0 -> 60% of the short side
};

struct AugmentationSpec {
    AugmentationKind kind = AugmentationKind::gaussian_noise;
    std::size_t severity = 0;
    std::size_t max_severity = 5;
};

const std::vector<AugmentationKind>& all_augmentation_kinds();
std::string augmentation_name(AugmentationKind kind);
AugmentationKind augmentation_from_name(const std::string& name);

// Severity 0 returns the frame bitwise-unchanged; outputs are clamped to
// [0,1]; the named parameter scales linearly with severity/max_severity.
// Randomized kinds (noise, brightness sign, occlusion position) draw from
// the seed only.
std::vector<float> apply_augmentation(std::span<const float> frame, std::size_t height,
                                      std::size_t width, std::size_t channels,
                                      const AugmentationSpec& spec, std::uint64_t seed);

}  // namespace desot
