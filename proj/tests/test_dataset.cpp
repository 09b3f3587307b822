#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <sstream>

#include "desot/dataset.hpp"
#include "desot/rng.hpp"
#include "desot/synth.hpp"

using namespace desot;

namespace {

FrameDataset random_frames(std::size_t n, std::size_t num_classes, std::uint64_t seed,
                           std::size_t h = 4, std::size_t w = 5, std::size_t k = 3) {
    FrameDataset ds;
    ds.height = h;
    ds.width = w;
    ds.channels = k;
    ds.num_classes = num_classes;
    for (std::size_t c = 0; c < num_classes; ++c) {
        ds.class_names.push_back("class" + std::to_string(c));
    }
    Rng rng(seed);
    ds.labels.resize(n);
    ds.pixels.resize(n * ds.frame_dim());
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<std::uint16_t>(rng.below(num_classes));
    for (float& v : ds.pixels) v = static_cast<float>(rng.uniform01());
    return ds;
}

std::string dataset_bytes(const FrameDataset& ds) {
    std::ostringstream out(std::ios::binary);
    save_dataset(ds, out);
    return out.str();
}

std::string sequences_bytes(const SequenceDataset& ds) {
    std::ostringstream out(std::ios::binary);
    save_sequences(ds, out);
    return out.str();
}

}  // namespace

TEST_CASE("frame container round-trips byte-exactly") {
    const FrameDataset ds = random_frames(37, 6, 5);
    const std::string first = dataset_bytes(ds);
    std::istringstream in(first, std::ios::binary);
    const FrameDataset loaded = load_dataset(in, "mem");
    CHECK(dataset_bytes(loaded) == first);
    CHECK(loaded.class_names == ds.class_names);
    CHECK(loaded.labels == ds.labels);
}

TEST_CASE("frame container rejects corruption") {
    const FrameDataset ds = random_frames(5, 3, 7);
    const std::string bytes = dataset_bytes(ds);

    std::string bad_magic = bytes;
    bad_magic[1] = 'X';
    std::istringstream m(bad_magic, std::ios::binary);
    CHECK_THROWS_WITH_AS(load_dataset(m, "mem"), doctest::Contains("bad magic"),
                         std::runtime_error);

    std::istringstream t(bytes.substr(0, bytes.size() / 2), std::ios::binary);
    CHECK_THROWS_WITH_AS(load_dataset(t, "mem"), doctest::Contains("truncated"),
                         std::runtime_error);

    // patch a label beyond C; the loader must name the record
    FrameDataset tampered = ds;
    tampered.labels[2] = 9;  // > num_classes, bypassing save-side validation
    std::string bad_label = bytes;
    // label block starts after header + class names
    std::size_t offset = 4 + 4 * 6;
    for (const std::string& name : ds.class_names) offset += 4 + name.size();
    bad_label[offset + 2 * 2] = 9;
    std::istringstream l(bad_label, std::ios::binary);
    CHECK_THROWS_WITH_AS(load_dataset(l, "mem"), doctest::Contains("record 2"),
                         std::runtime_error);

    // pixel out of range
    std::string bad_pixel = bytes;
    const float big = 2.5f;
    std::memcpy(bad_pixel.data() + offset + 2 * ds.size(), &big, 4);
    std::istringstream p(bad_pixel, std::ios::binary);
    CHECK_THROWS_WITH_AS(load_dataset(p, "mem"), doctest::Contains("pixel out of range"),
                         std::runtime_error);
}

TEST_CASE("filter_classes: bounds, re-indexing, idempotence") {
    FrameDataset ds = random_frames(0, 4, 1);
    // counts: class0 x12, class1 x9, class2 x501, class3 x20
    auto add = [&](std::size_t cls, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            ds.labels.push_back(static_cast<std::uint16_t>(cls));
            for (std::size_t p = 0; p < ds.frame_dim(); ++p) ds.pixels.push_back(0.5f);
        }
    };
    add(0, 12);
    add(1, 9);
    add(2, 501);
    add(3, 20);

    const ClassFilterResult min_only = filter_classes(ds, 10, std::nullopt);
    CHECK(min_only.kept_classes == std::vector<std::size_t>{0, 2, 3});
    CHECK(min_only.dataset.num_classes == 3);
    CHECK(min_only.dataset.size() == 12 + 501 + 20);

    const ClassFilterResult capped = filter_classes(ds, 10, 500);
    CHECK(capped.kept_classes == std::vector<std::size_t>{0, 3});
    CHECK(capped.dataset.class_names ==
          std::vector<std::string>{"class0", "class3"});

    const ClassFilterResult identity = filter_classes(ds, 0, std::nullopt);
    CHECK(identity.kept_classes == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(dataset_bytes(identity.dataset) == dataset_bytes(ds));

    // applying the same bounds twice changes nothing further
    const ClassFilterResult once = filter_classes(ds, 10, 500);
    const ClassFilterResult twice = filter_classes(once.dataset, 10, 500);
    CHECK(dataset_bytes(once.dataset) == dataset_bytes(twice.dataset));

    CHECK_THROWS_AS(filter_classes(ds, 1000, std::nullopt), std::invalid_argument);
}

TEST_CASE("holdout_ood_classes partitions exactly") {
    const FrameDataset ds = random_frames(80, 5, 9);
    const OodHoldout parts = holdout_ood_classes(ds, {"class1", "class4"});
    CHECK(parts.in_dist.num_classes == 3);
    CHECK(parts.ood.num_classes == 2);
    CHECK(parts.in_dist.size() + parts.ood.size() == ds.size());
    CHECK(parts.in_dist.class_names ==
          std::vector<std::string>{"class0", "class2", "class3"});
    CHECK(parts.ood.class_names == std::vector<std::string>{"class1", "class4"});
    for (std::uint16_t label : parts.in_dist.labels) CHECK(label < 3);
    for (std::uint16_t label : parts.ood.labels) CHECK(label < 2);

    const OodHoldout none = holdout_ood_classes(ds, {});
    CHECK(none.ood.size() == 0);
    CHECK(none.in_dist.size() == ds.size());

    CHECK_THROWS_AS(holdout_ood_classes(ds, {"nope"}), std::invalid_argument);
    CHECK_THROWS_AS(
        holdout_ood_classes(ds, {"class0", "class1", "class2", "class3", "class4"}),
        std::invalid_argument);
}

TEST_CASE("sequence synthesis: identity jitter, determinism, shape") {
    const FrameDataset ds = random_frames(6, 3, 11);

    JitterParams zero{0.0, 0.0, 0.0};
    const SequenceDataset still = synthesize_sequences(ds, 11, zero, 42);
    CHECK(still.seq_len == 11);
    CHECK(still.size() == ds.size());
    for (std::size_t i = 0; i < still.size(); ++i) {
        const auto base = ds.frame(i);
        for (std::size_t t = 0; t < 11; ++t) {
            const auto frame = still.sequences[i].frame(t);
            CHECK(std::memcmp(frame.data(), base.data(), base.size() * 4) == 0);
        }
    }

    JitterParams jitter;  // defaults: 0.10 translate, 0.10 scale, 0.02 noise
    const SequenceDataset a = synthesize_sequences(ds, 7, jitter, 42);
    const SequenceDataset b = synthesize_sequences(ds, 7, jitter, 42);
    CHECK(sequences_bytes(a) == sequences_bytes(b));
    const SequenceDataset c = synthesize_sequences(ds, 7, jitter, 43);
    CHECK(sequences_bytes(a) != sequences_bytes(c));

    // the last frame is the unperturbed base
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto base = ds.frame(i);
        const auto last = a.sequences[i].frame(6);
        CHECK(std::memcmp(last.data(), base.data(), base.size() * 4) == 0);
        CHECK(a.sequences[i].label == ds.labels[i]);
    }

    a.validate();  // pixels stay in [0,1], group ids unique

    JitterParams negative{-0.1, 0.0, 0.0};
    CHECK_THROWS_AS(synthesize_sequences(ds, 5, negative, 1), std::invalid_argument);
    CHECK_THROWS_AS(synthesize_sequences(ds, 0, jitter, 1), std::invalid_argument);
}

TEST_CASE("sequence container round-trips byte-exactly") {
    const FrameDataset ds = random_frames(9, 4, 13);
    const SequenceDataset seqs = synthesize_sequences(ds, 5, JitterParams{}, 3);
    const std::string first = sequences_bytes(seqs);
    std::istringstream in(first, std::ios::binary);
    const SequenceDataset loaded = load_sequences(in, "mem");
    CHECK(sequences_bytes(loaded) == first);
    CHECK(loaded.seq_len == 5);
    CHECK(loaded.sequences[3].group_id == seqs.sequences[3].group_id);

    std::string bad = first;
    bad[0] = 'Z';
    std::istringstream badin(bad, std::ios::binary);
    CHECK_THROWS_WITH_AS(load_sequences(badin, "mem"), doctest::Contains("bad magic"),
                         std::runtime_error);
}

TEST_CASE("glyph generator: long-tailed counts, determinism, OOD shapes") {
    GlyphDatasetSpec spec;
    spec.in_dist_classes = 8;
    spec.ood_classes = 2;
    spec.in_dist_frames = 600;
    spec.ood_frames = 60;
    spec.height = 8;
    spec.width = 8;
    spec.seed = 5;

    const FrameDataset a = generate_glyph_frames(spec);
    const FrameDataset b = generate_glyph_frames(spec);
    CHECK(dataset_bytes(a) == dataset_bytes(b));
    CHECK(a.num_classes == 10);
    CHECK(a.size() == 660);
    a.validate();

    std::vector<std::size_t> counts(a.num_classes, 0);
    for (std::uint16_t label : a.labels) counts[label] += 1;
    // in-distribution counts decay with class index
    CHECK(counts[0] > counts[7]);
    std::size_t ood_total = 0;
    for (std::size_t c = 8; c < 10; ++c) ood_total += counts[c];
    CHECK(ood_total == 60);

    // the OOD class names use shapes absent from the in-distribution names
    const std::vector<std::string> ood_names = ood_class_names(spec);
    CHECK(ood_names.size() == 2);
    for (const std::string& name : ood_names) {
        const std::string shape = name.substr(0, name.find('_'));
        for (std::size_t c = 0; c < spec.in_dist_classes; ++c) {
            CHECK(a.class_names[c].substr(0, a.class_names[c].find('_')) != shape);
        }
    }
}
