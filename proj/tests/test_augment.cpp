#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "desot/augment.hpp"
#include "desot/rng.hpp"

using namespace desot;

namespace {

std::vector<float> random_frame(std::size_t h, std::size_t w, std::size_t k,
                                std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> frame(h * w * k);
    for (float& v : frame) v = static_cast<float>(rng.uniform01());
    return frame;
}

}  // namespace

TEST_CASE("severity 0 is a bitwise identity for every kind") {
    const auto frame = random_frame(10, 10, 3, 1);
    for (AugmentationKind kind : all_augmentation_kinds()) {
        const auto out = apply_augmentation(frame, 10, 10, 3, {kind, 0, 5}, 99);
        CHECK(std::memcmp(out.data(), frame.data(), frame.size() * 4) == 0);
    }
}

TEST_CASE("outputs stay in [0,1] at every severity") {
    const auto frame = random_frame(10, 10, 3, 2);
    for (AugmentationKind kind : all_augmentation_kinds()) {
        for (std::size_t severity = 1; severity <= 5; ++severity) {
            const auto out = apply_augmentation(frame, 10, 10, 3, {kind, severity, 5}, 7);
            for (float v : out) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
        }
    }
}

TEST_CASE("augmentations are deterministic in the seed") {
    const auto frame = random_frame(10, 10, 3, 3);
    for (AugmentationKind kind :
         {AugmentationKind::gaussian_noise, AugmentationKind::brightness,
          AugmentationKind::occlusion}) {
        const auto a = apply_augmentation(frame, 10, 10, 3, {kind, 3, 5}, 11);
        const auto b = apply_augmentation(frame, 10, 10, 3, {kind, 3, 5}, 11);
        CHECK(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
        const auto c = apply_augmentation(frame, 10, 10, 3, {kind, 3, 5}, 12);
        CHECK(std::memcmp(a.data(), c.data(), a.size() * 4) != 0);
    }
}

TEST_CASE("gaussian noise at full severity keeps a constant image's mean") {
    // 60x60x3 = 10800 pixels at 0.5; sigma 0.3 with symmetric clamping
    std::vector<float> frame(60 * 60 * 3, 0.5f);
    const auto out = apply_augmentation(frame, 60, 60, 3,
                                        {AugmentationKind::gaussian_noise, 5, 5}, 21);
    double mean = 0.0;
    for (float v : out) mean += v;
    mean /= static_cast<double>(out.size());
    CHECK(std::abs(mean - 0.5) <= 0.01);
    CHECK(std::memcmp(out.data(), frame.data(), frame.size() * 4) != 0);
}

TEST_CASE("two max-severity rotations compose to a full turn") {
    const auto frame = random_frame(12, 12, 3, 4);
    const AugmentationSpec half_turn{AugmentationKind::rotation, 5, 5};
    const auto once = apply_augmentation(frame, 12, 12, 3, half_turn, 0);
    const auto twice = apply_augmentation(once, 12, 12, 3, half_turn, 0);
    for (std::size_t i = 0; i < frame.size(); ++i) {
        CHECK(std::abs(twice[i] - frame[i]) <= 1e-3f);
    }
}

TEST_CASE("two half-circle hue shifts return to the original colors") {
    const auto frame = random_frame(8, 8, 3, 5);
    const AugmentationSpec half{AugmentationKind::hue_shift, 5, 5};
    const auto once = apply_augmentation(frame, 8, 8, 3, half, 0);
    const auto twice = apply_augmentation(once, 8, 8, 3, half, 0);
    for (std::size_t i = 0; i < frame.size(); ++i) {
        CHECK(std::abs(twice[i] - frame[i]) <= 1e-5f);
    }
}

TEST_CASE("motion blur preserves constant images and actually blurs") {
    std::vector<float> flat(10 * 10 * 3, 0.25f);
    const auto blurred_flat =
        apply_augmentation(flat, 10, 10, 3, {AugmentationKind::motion_blur, 5, 5}, 0);
    for (float v : blurred_flat) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));

    // a vertical edge smears horizontally
    std::vector<float> edge(10 * 10 * 1, 0.0f);
    for (std::size_t y = 0; y < 10; ++y) {
        for (std::size_t x = 5; x < 10; ++x) edge[y * 10 + x] = 1.0f;
    }
    const auto blurred =
        apply_augmentation(edge, 10, 10, 1, {AugmentationKind::motion_blur, 5, 5}, 0);
    CHECK(blurred[4] > 0.0f);  // mass leaked across the edge
    CHECK(blurred[4] < 1.0f);
}

TEST_CASE("occlusion masks exactly one square of the scaled side") {
    std::vector<float> frame(10 * 10 * 3, 0.5f);
    const auto out =
        apply_augmentation(frame, 10, 10, 3, {AugmentationKind::occlusion, 5, 5}, 31);
    std::size_t zeros = 0;
    for (float v : out) {
        if (v == 0.0f) ++zeros;
    }
    const std::size_t side = 6;  // 0.6 * 10 at max severity
    CHECK(zeros == side * side * 3);
}

TEST_CASE("brightness shifts every channel by the same offset") {
    std::vector<float> frame(6 * 6 * 3, 0.5f);
    const auto out =
        apply_augmentation(frame, 6, 6, 3, {AugmentationKind::brightness, 2, 5}, 17);
    // offset magnitude 0.5 * 2/5 = 0.2, direction seeded
    const float delta = out[0] - 0.5f;
    CHECK(std::abs(std::abs(delta) - 0.2f) <= 1e-6f);
    for (float v : out) CHECK(v == doctest::Approx(0.5f + delta).epsilon(1e-6));
}

TEST_CASE("spec validation errors") {
    const auto frame = random_frame(6, 6, 3, 6);
    CHECK_THROWS_AS(
        apply_augmentation(frame, 6, 6, 3, {AugmentationKind::rotation, 6, 5}, 0),
        std::invalid_argument);
    const auto gray = random_frame(6, 6, 1, 7);
    CHECK_THROWS_AS(apply_augmentation(gray, 6, 6, 1, {AugmentationKind::hue_shift, 3, 5}, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_augmentation(frame, 5, 6, 3, {AugmentationKind::rotation, 1, 5}, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(augmentation_from_name("solarize"), std::invalid_argument);
    CHECK(augmentation_from_name("motion_blur") == AugmentationKind::motion_blur);
    for (AugmentationKind kind : all_augmentation_kinds()) {
        CHECK(augmentation_from_name(augmentation_name(kind)) == kind);
    }
}
