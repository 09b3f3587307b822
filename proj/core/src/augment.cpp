#include "desot/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "desot/rng.hpp"

namespace desot {

namespace {

constexpr double kPi = 3.14159265358979323846;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

std::size_t pix(std::size_t y, std::size_t x, std::size_t w, std::size_t k, std::size_t c) {
    return (y * w + x) * k + c;
}

double bilinear(std::span<const float> frame, std::size_t h, std::size_t w, std::size_t k,
                double y, double x, std::size_t c) {
    if (y < 0.0 || x < 0.0 || y > static_cast<double>(h - 1) || x > static_cast<double>(w - 1)) {
        return 0.0;  // rotated-out area
    }
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double top = frame[pix(y0, x0, w, k, c)] * (1.0 - fx) +
                       frame[pix(y0, x1, w, k, c)] * fx;
    const double bot = frame[pix(y1, x0, w, k, c)] * (1.0 - fx) +
                       frame[pix(y1, x1, w, k, c)] * fx;
    return top * (1.0 - fy) + bot * fy;
}

std::vector<float> rotate(std::span<const float> frame, std::size_t h, std::size_t w,
                          std::size_t k, double angle_deg) {
    const double theta = angle_deg * kPi / 180.0;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    std::vector<float> out(frame.size());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            // inverse rotation
            const double sy = cy + dy * cos_t - dx * sin_t;
            const double sx = cx + dy * sin_t + dx * cos_t;
            for (std::size_t c = 0; c < k; ++c) {
                out[pix(y, x, w, k, c)] = clamp01(bilinear(frame, h, w, k, sy, sx, c));
            }
        }
    }
    return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
        h = (b - r) / d + 2.0;
    } else {
        h = (r - g) / d + 4.0;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double h6 = h * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

std::vector<float> shift_hue(std::span<const float> frame, std::size_t h, std::size_t w,
                             std::size_t k, double shift) {
    if (k != 3) throw std::invalid_argument("hue_shift requires 3 channels");
    std::vector<float> out(frame.size());
    for (std::size_t i = 0; i < h * w; ++i) {
        double hue, sat, val;
        rgb_to_hsv(frame[i * 3], frame[i * 3 + 1], frame[i * 3 + 2], hue, sat, val);
        hue = std::fmod(hue + shift, 1.0);
        double r, g, b;
        hsv_to_rgb(hue, sat, val, r, g, b);
        out[i * 3] = clamp01(r);
        out[i * 3 + 1] = clamp01(g);
        out[i * 3 + 2] = clamp01(b);
    }
    return out;
}

std::vector<float> blur_horizontal(std::span<const float> frame, std::size_t h, std::size_t w,
                                   std::size_t k, std::size_t length) {
    std::vector<float> out(frame.size());
    const long half = static_cast<long>(length) / 2;
    const double inv = 1.0 / static_cast<double>(length);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < k; ++c) {
                double acc = 0.0;
                for (long o = -half; o <= half; ++o) {
                    const long xx = std::clamp<long>(static_cast<long>(x) + o, 0,
                                                     static_cast<long>(w) - 1);
                    acc += frame[pix(y, static_cast<std::size_t>(xx), w, k, c)];
                }
                out[pix(y, x, w, k, c)] = clamp01(acc * inv);
            }
        }
    }
    return out;
}

}  // namespace

const std::vector<AugmentationKind>& all_augmentation_kinds() {
    static const std::vector<AugmentationKind> kinds = {
        AugmentationKind::rotation,       AugmentationKind::hue_shift,
        AugmentationKind::motion_blur,    AugmentationKind::gaussian_noise,
        AugmentationKind::brightness,     AugmentationKind::occlusion,
    };
    return kinds;
}

std::string augmentation_name(AugmentationKind kind) {
    switch (kind) {
        case AugmentationKind::rotation: return "rotation";
        case AugmentationKind::hue_shift: return "hue_shift";
        case AugmentationKind::motion_blur: return "motion_blur";
        case AugmentationKind::gaussian_noise: return "gaussian_noise";
        case AugmentationKind::brightness: return "brightness";
        case AugmentationKind::occlusion: return "occlusion";
    }
    throw std::invalid_argument("augmentation_name: unknown kind");
}

AugmentationKind augmentation_from_name(const std::string& name) {
    for (AugmentationKind kind : all_augmentation_kinds()) {
        if (augmentation_name(kind) == name) return kind;
    }
    throw std::invalid_argument("unknown augmentation kind '" + name + "'");
}

std::vector<float> apply_augmentation(std::span<const float> frame, std::size_t height,
                                      std::size_t width, std::size_t channels,
                                      const AugmentationSpec& spec, std::uint64_t seed) {
    if (frame.size() != height * width * channels) {
        throw std::invalid_argument("apply_augmentation: frame size mismatch");
    }
    if (spec.max_severity == 0) {
        throw std::invalid_argument("apply_augmentation: max_severity must be >= 1");
    }
    if (spec.severity > spec.max_severity) {
        throw std::invalid_argument("apply_augmentation: severity " +
                                    std::to_string(spec.severity) + " exceeds max " +
                                    std::to_string(spec.max_severity));
    }
    if (spec.severity == 0) {
        return {frame.begin(), frame.end()};  // identity, bitwise
    }
    const double level =
        static_cast<double>(spec.severity) / static_cast<double>(spec.max_severity);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(spec.kind), spec.severity));

    switch (spec.kind) {
        case AugmentationKind::rotation:
            return rotate(frame, height, width, channels, 180.0 * level);
        case AugmentationKind::hue_shift:
            return shift_hue(frame, height, width, channels, 0.5 * level);
        case AugmentationKind::motion_blur: {
            // odd kernel length, 1..15
            const std::size_t length =
                1 + 2 * static_cast<std::size_t>(std::lround(7.0 * level));
            if (length <= 1) return {frame.begin(), frame.end()};
            return blur_horizontal(frame, height, width, channels, length);
        }
        case AugmentationKind::gaussian_noise: {
            const double sigma = 0.3 * level;
            std::vector<float> out(frame.size());
            for (std::size_t i = 0; i < frame.size(); ++i) {
                out[i] = clamp01(static_cast<double>(frame[i]) + sigma * rng.normal());
            }
            return out;
        }
        case AugmentationKind::brightness: {
            const double offset = (rng.coin() ? 1.0 : -1.0) * 0.5 * level;
            std::vector<float> out(frame.size());
            for (std::size_t i = 0; i < frame.size(); ++i) {
                out[i] = clamp01(static_cast<double>(frame[i]) + offset);
            }
            return out;
        }
        case AugmentationKind::occlusion: {
            const std::size_t short_side = std::min(height, width);
            const std::size_t side = static_cast<std::size_t>(
                std::lround(0.6 * level * static_cast<double>(short_side)));
            std::vector<float> out(frame.begin(), frame.end());
            if (side == 0) return out;
            const std::size_t y0 = rng.below(height - side + 1);
            const std::size_t x0 = rng.below(width - side + 1);
            for (std::size_t y = y0; y < y0 + side; ++y) {
                for (std::size_t x = x0; x < x0 + side; ++x) {
                    for (std::size_t c = 0; c < channels; ++c) {
                        out[pix(y, x, width, channels, c)] = 0.0f;
                    }
                }
            }
            return out;
        }
    }
    throw std::invalid_argument("apply_augmentation: unknown kind");
}

}  // namespace desot
