#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "desot/fusion.hpp"
#include "desot/rng.hpp"

using namespace desot;

namespace {

CategoricalDist dist(std::initializer_list<double> probs) { return CategoricalDist{probs}; }

CategoricalDist random_dist(Rng& rng, std::size_t num_classes) {
    CategoricalDist d;
    d.probs.resize(num_classes);
    double sum = 0.0;
    for (double& p : d.probs) {
        p = -std::log(1.0 - rng.uniform01());
        sum += p;
    }
    for (double& p : d.probs) p /= sum;
    return d;
}

SequenceSample random_sequence(Rng& rng, std::size_t seq_len, std::size_t dim) {
    SequenceSample s;
    s.frame_dim = dim;
    s.frames.resize(seq_len * dim);
    for (float& v : s.frames) v = static_cast<float>(rng.uniform01());
    return s;
}

double max_abs_diff(const CategoricalDist& a, const CategoricalDist& b) {
    double m = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        m = std::max(m, std::abs(a.probs[c] - b.probs[c]));
    }
    return m;
}

}  // namespace

TEST_CASE("fuse_time: averages and edge cases") {
    const std::vector<CategoricalDist> single = {dist({0.3, 0.7})};
    CHECK(max_abs_diff(fuse_time(single), single[0]) == 0.0);

    const std::vector<CategoricalDist> two = {dist({1.0, 0.0}), dist({0.5, 0.5})};
    const CategoricalDist fused = fuse_time(two);
    CHECK(fused.probs[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(fused.probs[1] == doctest::Approx(0.25).epsilon(1e-15));

    CHECK_THROWS_AS(fuse_time({}), std::invalid_argument);
    const std::vector<CategoricalDist> ragged = {dist({1.0, 0.0}), dist({1.0, 0.0, 0.0})};
    CHECK_THROWS_AS(fuse_time(ragged), std::invalid_argument);
}

TEST_CASE("fuse_time is invariant to frame permutation") {
    Rng rng(11);
    std::vector<CategoricalDist> dists;
    for (int i = 0; i < 9; ++i) dists.push_back(random_dist(rng, 6));
    const CategoricalDist base = fuse_time(dists);
    std::vector<CategoricalDist> shuffled = dists;
    rng.shuffle(shuffled);
    CHECK(max_abs_diff(base, fuse_time(shuffled)) <= 1e-12);
}

TEST_CASE("fuse_ensemble agrees with fuse_time and commutes with it") {
    const std::vector<CategoricalDist> same = {dist({0.2, 0.8}), dist({0.2, 0.8}),
                                               dist({0.2, 0.8})};
    CHECK(max_abs_diff(fuse_ensemble(same), same[0]) <= 1e-15);

    const std::vector<CategoricalDist> opposed = {dist({1.0, 0.0}), dist({0.0, 1.0})};
    const CategoricalDist mixed = fuse_ensemble(opposed);
    CHECK(mixed.probs[0] == doctest::Approx(0.5).epsilon(1e-15));

    // double mean commutes on an M x T grid
    Rng rng(7);
    const std::size_t members = 4, frames = 5, num_classes = 3;
    std::vector<std::vector<CategoricalDist>> grid(members);
    for (auto& row : grid) {
        for (std::size_t t = 0; t < frames; ++t) row.push_back(random_dist(rng, num_classes));
    }
    std::vector<CategoricalDist> per_member;
    for (const auto& row : grid) per_member.push_back(fuse_time(row));
    const CategoricalDist ensemble_of_time = fuse_ensemble(per_member);

    std::vector<CategoricalDist> per_frame;
    for (std::size_t t = 0; t < frames; ++t) {
        std::vector<CategoricalDist> column;
        for (std::size_t m = 0; m < members; ++m) column.push_back(grid[m][t]);
        per_frame.push_back(fuse_ensemble(column));
    }
    const CategoricalDist time_of_ensemble = fuse_time(per_frame);
    CHECK(max_abs_diff(ensemble_of_time, time_of_ensemble) <= 1e-12);
}

TEST_CASE("round robin schedule: pattern, balance, errors") {
    const MemberSchedule s33 = round_robin_schedule(3, 3, 0);
    CHECK(s33.assignment == std::vector<std::size_t>{0, 1, 2});

    const MemberSchedule s52 = round_robin_schedule(5, 2, 0);
    CHECK(s52.assignment == std::vector<std::size_t>{0, 1, 0, 1, 0});

    const MemberSchedule s41 = round_robin_schedule(4, 1, 0);
    CHECK(s41.assignment == std::vector<std::size_t>{0, 0, 0, 0});

    const MemberSchedule off = round_robin_schedule(4, 3, 1);
    CHECK(off.assignment == std::vector<std::size_t>{1, 2, 0, 1});

    CHECK_THROWS_AS(round_robin_schedule(0, 3, 0), std::invalid_argument);
    CHECK_THROWS_AS(round_robin_schedule(3, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(round_robin_schedule(3, 3, 3), std::invalid_argument);

    // usage balance: |uses(m) - T/M| < 1 for every member
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t seq_len = 1 + rng.below(40);
        const std::size_t members = 1 + rng.below(8);
        const std::size_t offset = rng.below(members);
        const MemberSchedule s = round_robin_schedule(seq_len, members, offset);
        std::vector<std::size_t> uses(members, 0);
        for (std::size_t m : s.assignment) uses[m] += 1;
        const double target = static_cast<double>(seq_len) / static_cast<double>(members);
        for (std::size_t m = 0; m < members; ++m) {
            CHECK(std::abs(static_cast<double>(uses[m]) - target) < 1.0);
        }
    }
}

TEST_CASE("predict_sm: single frame identity, counting, identical frames") {
    const MlpModel model = init_model({6, 8, 4}, 0.0, 2);
    Rng rng(5);

    SequenceSample one = random_sequence(rng, 1, 6);
    CostCounter c1(1);
    const CategoricalDist p1 = predict_sm(model, one, c1);
    const CategoricalDist direct =
        softmax(forward(model, one.frame(0), ForwardMode::eval_deterministic, 0));
    CHECK(max_abs_diff(p1, direct) <= 1e-15);
    CHECK(c1.forward_passes == 1);

    SequenceSample eleven = random_sequence(rng, 11, 6);
    CostCounter c11(1);
    predict_sm(model, eleven, c11);
    CHECK(c11.forward_passes == 11);

    // identical frames fuse to the single-frame prediction
    SequenceSample repeated;
    repeated.frame_dim = 6;
    for (int t = 0; t < 7; ++t) {
        repeated.frames.insert(repeated.frames.end(), one.frames.begin(), one.frames.end());
    }
    CostCounter c7(1);
    CHECK(max_abs_diff(predict_sm(model, repeated, c7), direct) <= 1e-12);
}

TEST_CASE("equivalence family: M=1 makes all strategies the single model") {
    const std::vector<MlpModel> one_member = {init_model({5, 9, 3}, 0.0, 4)};
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const SequenceSample seq = random_sequence(rng, 1 + rng.below(14), 5);
        CostCounter ca(1), cb(1), cc(1);
        const CategoricalDist sm = predict_sm(one_member[0], seq, ca);
        const CategoricalDist de = predict_de(one_member, seq, cb);
        const MemberSchedule schedule = round_robin_schedule(seq.length(), 1, 0);
        const CategoricalDist desot = predict_desot(one_member, seq, schedule, cc);
        CHECK(max_abs_diff(sm, de) <= 1e-12);
        CHECK(max_abs_diff(sm, desot) <= 1e-12);
    }
}

TEST_CASE("byte-identical members make all strategies agree") {
    const MlpModel base = init_model({5, 9, 3}, 0.0, 4);
    const std::vector<MlpModel> clones(4, base);
    Rng rng(10);
    const SequenceSample seq = random_sequence(rng, 11, 5);
    CostCounter ca(1), cb(4), cc(4);
    const CategoricalDist sm = predict_sm(base, seq, ca);
    const CategoricalDist de = predict_de(clones, seq, cb);
    const MemberSchedule schedule = round_robin_schedule(11, 4, 0);
    const CategoricalDist desot = predict_desot(clones, seq, schedule, cc);
    CHECK(max_abs_diff(sm, de) <= 1e-12);
    CHECK(max_abs_diff(sm, desot) <= 1e-12);
}

TEST_CASE("cost exactness over many sequences") {
    std::vector<MlpModel> members;
    for (std::uint64_t m = 0; m < 5; ++m) members.push_back(init_model({4, 6, 3}, 0.0, m));
    const MlpModel mc_model = init_model({4, 6, 3}, 0.2, 50);
    Rng rng(17);

    const std::size_t n = 23, seq_len = 11;
    CostCounter sm_c(1), de_c(5), desot_c(5), mc_c(1);
    const MemberSchedule schedule = round_robin_schedule(seq_len, 5, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const SequenceSample seq = random_sequence(rng, seq_len, 4);
        predict_sm(members[0], seq, sm_c);
        predict_de(members, seq, de_c);
        predict_desot(members, seq, schedule, desot_c);
        predict_mc_dropout(mc_model, seq, 1000 + i, mc_c);
    }
    CHECK(sm_c.forward_passes == n * seq_len);
    CHECK(de_c.forward_passes == n * 5 * seq_len);
    CHECK(desot_c.forward_passes == n * seq_len);
    CHECK(mc_c.forward_passes == n * seq_len);
    for (std::size_t m = 0; m < 5; ++m) {
        CHECK(de_c.per_member[m] == n * seq_len);
    }
    // schedule for T=11, M=5, offset 0 uses member 0 three times
    CHECK(desot_c.per_member[0] == n * 3);
    for (std::size_t m = 1; m < 5; ++m) CHECK(desot_c.per_member[m] == n * 2);

    std::uint64_t total = 0;
    for (std::uint64_t v : desot_c.per_member) total += v;
    CHECK(total == desot_c.forward_passes);
}

TEST_CASE("predict_desot is invariant under permuting members with the schedule") {
    std::vector<MlpModel> members;
    for (std::uint64_t m = 0; m < 3; ++m) members.push_back(init_model({4, 6, 3}, 0.0, m));
    Rng rng(23);
    const SequenceSample seq = random_sequence(rng, 9, 4);
    const MemberSchedule schedule = round_robin_schedule(9, 3, 0);

    CostCounter c0(3);
    const CategoricalDist base = predict_desot(members, seq, schedule, c0);

    const std::vector<std::size_t> perm = {2, 0, 1};  // new index of old member
    std::vector<MlpModel> permuted(3, members[0]);
    for (std::size_t m = 0; m < 3; ++m) permuted[perm[m]] = members[m];
    MemberSchedule relabeled = schedule;
    for (std::size_t& m : relabeled.assignment) m = perm[m];
    CostCounter c1(3);
    const CategoricalDist moved = predict_desot(permuted, seq, relabeled, c1);
    CHECK(max_abs_diff(base, moved) <= 1e-12);
}

TEST_CASE("predict_desot validates schedule against the model list") {
    std::vector<MlpModel> members = {init_model({4, 6, 3}, 0.0, 0),
                                     init_model({4, 6, 3}, 0.0, 1)};
    Rng rng(29);
    const SequenceSample seq = random_sequence(rng, 6, 4);
    const MemberSchedule wrong_len = round_robin_schedule(5, 2, 0);
    CostCounter c(2);
    CHECK_THROWS_AS(predict_desot(members, seq, wrong_len, c), std::invalid_argument);
    const MemberSchedule wrong_m = round_robin_schedule(6, 3, 0);
    CHECK_THROWS_AS(predict_desot(members, seq, wrong_m, c), std::invalid_argument);
    CHECK_THROWS_AS(predict_de({}, seq, c), std::invalid_argument);
}

TEST_CASE("predict_mc_dropout: determinism, counting, degenerate rate") {
    Rng rng(31);
    const SequenceSample seq = random_sequence(rng, 11, 4);

    const MlpModel with_dropout = init_model({4, 12, 3}, 0.2, 3);
    CostCounter c1(1), c2(1);
    const CategoricalDist a = predict_mc_dropout(with_dropout, seq, 42, c1);
    const CategoricalDist b = predict_mc_dropout(with_dropout, seq, 42, c2);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(c1.forward_passes == 11);

    const CategoricalDist other = predict_mc_dropout(with_dropout, seq, 43, c2);
    CHECK(max_abs_diff(a, other) > 0.0);

    // rate 0 degenerates to the plain single model (warned, not an error)
    const MlpModel no_dropout = init_model({4, 12, 3}, 0.0, 3);
    CostCounter c3(1), c4(1);
    const CategoricalDist mc = predict_mc_dropout(no_dropout, seq, 42, c3);
    const CategoricalDist sm = predict_sm(no_dropout, seq, c4);
    CHECK(max_abs_diff(mc, sm) <= 1e-12);
}

TEST_CASE("fused outputs are valid distributions") {
    std::vector<MlpModel> members;
    for (std::uint64_t m = 0; m < 3; ++m) members.push_back(init_model({4, 6, 5}, 0.0, m));
    Rng rng(37);
    const MemberSchedule schedule = round_robin_schedule(7, 3, 0);
    for (int trial = 0; trial < 30; ++trial) {
        const SequenceSample seq = random_sequence(rng, 7, 4);
        CostCounter c(3);
        for (const CategoricalDist& d :
             {predict_sm(members[0], seq, c), predict_de(members, seq, c),
              predict_desot(members, seq, schedule, c)}) {
            double sum = 0.0;
            for (double p : d.probs) {
                CHECK(p >= 0.0);
                sum += p;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("streaming fuser: window semantics") {
    CHECK_THROWS_AS(StreamingFuser(0), std::invalid_argument);

    StreamingFuser passthrough(1);
    const CategoricalDist a = dist({1.0, 0.0});
    const CategoricalDist b = dist({0.0, 1.0});
    CHECK(max_abs_diff(passthrough.push(a), a) == 0.0);
    CHECK(max_abs_diff(passthrough.push(b), b) == 0.0);

    // W >= T reproduces full-sequence fusion
    Rng rng(41);
    std::vector<CategoricalDist> dists;
    for (int t = 0; t < 6; ++t) dists.push_back(random_dist(rng, 4));
    StreamingFuser wide(10);
    CategoricalDist last;
    for (const CategoricalDist& d : dists) last = wide.push(d);
    CHECK(max_abs_diff(last, fuse_time(dists)) <= 1e-12);

    StreamingFuser two(2);
    two.push(dist({1.0, 0.0}));
    two.push(dist({0.0, 1.0}));
    const CategoricalDist final_out = two.push(dist({1.0, 0.0}));
    CHECK(final_out.probs[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(final_out.probs[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("cost counters merge deterministically") {
    CostCounter a(3), b(3);
    a.record(0, 5);
    a.record(2, 1);
    b.record(1, 4);
    a.merge(b);
    CHECK(a.forward_passes == 10);
    CHECK(a.per_member == std::vector<std::uint64_t>{5, 4, 1});
    CostCounter wrong(2);
    CHECK_THROWS_AS(a.merge(wrong), std::invalid_argument);
}
