#include "desot/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "desot/calibration.hpp"
#include "desot/csv.hpp"
#include "desot/digest.hpp"
#include "desot/ood.hpp"
#include "desot/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace desot {

namespace {

constexpr std::uint64_t kSplitStream = 0x53504c54ull;   // "SPLT"
constexpr std::uint64_t kTestSeqStream = 0x54534551ull; // "TSEQ"
constexpr std::uint64_t kOodSeqStream = 0x4f534551ull;  // "OSEQ"
constexpr std::uint64_t kFrameStream = 0x4652414dull;   // "FRAM"
constexpr std::uint64_t kMcStream = 0x4d434450ull;      // "MCDP"
constexpr std::uint64_t kSweepStream = 0x53574550ull;   // "SWEP"
constexpr std::int64_t kOodGroupOffset = 1000000;

std::string path_join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

}  // namespace

std::string strategy_name(Strategy strategy) {
    switch (strategy) {
        case Strategy::sm_single_frame: return "sm_single_frame";
        case Strategy::sm: return "sm";
        case Strategy::de: return "de";
        case Strategy::desot: return "desot";
        case Strategy::mcdropout: return "mcdropout";
    }
    throw std::invalid_argument("strategy_name: unknown strategy");
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "sm_single_frame") return Strategy::sm_single_frame;
    if (name == "sm") return Strategy::sm;
    if (name == "de") return Strategy::de;
    if (name == "desot") return Strategy::desot;
    if (name == "mcdropout") return Strategy::mcdropout;
    throw std::invalid_argument("unknown strategy '" + name + "'");
}

// ---- config -------------------------------------------------------------------

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + origin + ": " + e.what());
    }
    RunConfig cfg;
    if (j.contains("data")) {
        const json& d = j.at("data");
        cfg.data.train = get_or<std::string>(d, "train", "");
        cfg.data.val = get_or<std::string>(d, "val", "");
        cfg.data.test_frames = get_or<std::string>(d, "test_frames", "");
        cfg.data.test_sequences = get_or<std::string>(d, "test_sequences", "");
        cfg.data.ood_sequences = get_or<std::string>(d, "ood_sequences", "");
    }
    cfg.members = get_or<std::size_t>(j, "members", cfg.members);
    cfg.seq_len = get_or<std::size_t>(j, "seq_len", cfg.seq_len);
    cfg.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", cfg.seeds);
    if (j.contains("strategies")) {
        cfg.strategies.clear();
        for (const auto& name : j.at("strategies")) {
            cfg.strategies.push_back(strategy_from_name(name.get<std::string>()));
        }
    }
    cfg.hidden_dims = get_or<std::vector<std::size_t>>(j, "hidden_dims", cfg.hidden_dims);
    if (j.contains("train")) {
        const json& t = j.at("train");
        cfg.train.epochs = get_or<std::size_t>(t, "epochs", cfg.train.epochs);
        cfg.train.batch_size = get_or<std::size_t>(t, "batch_size", cfg.train.batch_size);
        cfg.train.learning_rate = get_or<double>(t, "learning_rate", cfg.train.learning_rate);
        cfg.train.weight_decay = get_or<double>(t, "weight_decay", cfg.train.weight_decay);
        cfg.train.dropout_rate = get_or<double>(t, "dropout_rate", cfg.train.dropout_rate);
    }
    cfg.calibration = get_or<bool>(j, "calibration", cfg.calibration);
    cfg.ece_bins = get_or<std::size_t>(j, "ece_bins", cfg.ece_bins);
    cfg.brier_bins = get_or<std::size_t>(j, "brier_bins", cfg.brier_bins);
    cfg.entropy_bins = get_or<std::size_t>(j, "entropy_bins", cfg.entropy_bins);
    cfg.minority_max_train_count =
        get_or<std::size_t>(j, "minority_max_train_count", cfg.minority_max_train_count);
    cfg.ood_split_seed = get_or<std::uint64_t>(j, "ood_split_seed", cfg.ood_split_seed);
    cfg.eval_seed = get_or<std::uint64_t>(j, "eval_seed", cfg.eval_seed);
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        if (s.contains("kinds")) {
            cfg.sweep.kinds.clear();
            for (const auto& name : s.at("kinds")) {
                cfg.sweep.kinds.push_back(augmentation_from_name(name.get<std::string>()));
            }
        }
        cfg.sweep.severities =
            get_or<std::vector<std::size_t>>(s, "severities", cfg.sweep.severities);
        cfg.sweep.max_severity = get_or<std::size_t>(s, "max_severity", cfg.sweep.max_severity);
        cfg.sweep.max_sequences =
            get_or<std::size_t>(s, "max_sequences", cfg.sweep.max_sequences);
    }
    cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir);

    if (cfg.members == 0) throw std::invalid_argument("config: members must be >= 1");
    if (cfg.seeds.empty()) throw std::invalid_argument("config: seeds must be non-empty");
    if (cfg.strategies.empty()) throw std::invalid_argument("config: strategies must be non-empty");
    if (cfg.seq_len == 0) throw std::invalid_argument("config: seq_len must be >= 1");
    return cfg;
}

RunConfig run_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return run_config_from_json_text(buf.str(), path);
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["data"] = {{"train", cfg.data.train},
                 {"val", cfg.data.val},
                 {"test_frames", cfg.data.test_frames},
                 {"test_sequences", cfg.data.test_sequences},
                 {"ood_sequences", cfg.data.ood_sequences}};
    j["members"] = cfg.members;
    j["seq_len"] = cfg.seq_len;
    j["seeds"] = cfg.seeds;
    std::vector<std::string> strategy_names;
    for (Strategy s : cfg.strategies) strategy_names.push_back(strategy_name(s));
    j["strategies"] = strategy_names;
    j["hidden_dims"] = cfg.hidden_dims;
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"weight_decay", cfg.train.weight_decay},
                  {"dropout_rate", cfg.train.dropout_rate}};
    j["calibration"] = cfg.calibration;
    j["ece_bins"] = cfg.ece_bins;
    j["brier_bins"] = cfg.brier_bins;
    j["entropy_bins"] = cfg.entropy_bins;
    j["minority_max_train_count"] = cfg.minority_max_train_count;
    j["ood_split_seed"] = cfg.ood_split_seed;
    j["eval_seed"] = cfg.eval_seed;
    std::vector<std::string> kind_names;
    for (AugmentationKind k : cfg.sweep.kinds) kind_names.push_back(augmentation_name(k));
    j["sweep"] = {{"kinds", kind_names},
                  {"severities", cfg.sweep.severities},
                  {"max_severity", cfg.sweep.max_severity},
                  {"max_sequences", cfg.sweep.max_sequences}};
    j["out_dir"] = cfg.out_dir;
    return j.dump();
}

// ---- manifest helpers ----------------------------------------------------------

namespace {

std::string manifest_path(const RunConfig& cfg) {
    return path_join(cfg.out_dir, "manifest.json");
}

json load_manifest(const RunConfig& cfg, const char* needed_by) {
    const std::string path = manifest_path(cfg);
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error(std::string(needed_by) + ": " + path +
                                 " not found; run `desot train` first");
    }
    json m;
    in >> m;
    return m;
}

// Digest over the provenance-bearing parts: config snapshot, model file
// digests, fitted temperatures. Every CSV row carries this value.
std::string manifest_digest(const json& m) {
    json core;
    core["config"] = m.at("config");
    json model_digests = json::array();
    if (m.contains("train")) {
        for (const auto& run : m.at("train").at("runs")) {
            for (const auto& member : run.at("members")) {
                model_digests.push_back(member.at("digest"));
            }
            if (run.contains("mc") && !run.at("mc").is_null()) {
                model_digests.push_back(run.at("mc").at("digest"));
            }
        }
    }
    core["model_digests"] = model_digests;
    json temps = json::object();
    if (m.contains("calibration")) {
        for (const auto& [key, entry] : m.at("calibration").at("temperatures").items()) {
            temps[key] = entry.at("value");
        }
    }
    core["temperatures"] = temps;
    return digest_string(core.dump());
}

void write_manifest(const RunConfig& cfg, json& m) {
    m["digest"] = manifest_digest(m);
    std::ofstream out(manifest_path(cfg), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + manifest_path(cfg));
    out << m.dump(2) << "\n";
}

struct SeedModels {
    std::uint64_t seed = 0;
    std::vector<MlpModel> members;
    std::optional<MlpModel> mc;
};

SeedModels load_seed_models(const RunConfig& cfg, const json& manifest,
                            std::size_t seed_index) {
    const json& runs = manifest.at("train").at("runs");
    if (seed_index >= runs.size()) {
        throw std::runtime_error("manifest has no models for seed index " +
                                 std::to_string(seed_index));
    }
    const json& run = runs.at(seed_index);
    SeedModels out;
    out.seed = run.at("seed").get<std::uint64_t>();
    for (const auto& member : run.at("members")) {
        const std::string path = path_join(cfg.out_dir, member.at("path").get<std::string>());
        if (digest_file(path) != member.at("digest").get<std::string>()) {
            throw std::runtime_error("model file digest mismatch: " + path);
        }
        out.members.push_back(load_model(path));
    }
    if (run.contains("mc") && !run.at("mc").is_null()) {
        const std::string path =
            path_join(cfg.out_dir, run.at("mc").at("path").get<std::string>());
        if (digest_file(path) != run.at("mc").at("digest").get<std::string>()) {
            throw std::runtime_error("model file digest mismatch: " + path);
        }
        out.mc = load_model(path);
    }
    return out;
}

double strategy_temperature(const RunConfig& cfg, const json& manifest, Strategy strategy) {
    if (!cfg.calibration) return 1.0;
    if (!manifest.contains("calibration")) {
        throw std::runtime_error("config requests temperature scaling but no calibration "
                                 "section is present; run `desot calibrate` first");
    }
    const json& temps = manifest.at("calibration").at("temperatures");
    const std::string key = strategy_name(strategy);
    if (!temps.contains(key)) {
        throw std::runtime_error("no fitted temperature for strategy " + key);
    }
    return temps.at(key).at("value").get<double>();
}

bool has_strategy(const RunConfig& cfg, Strategy s) {
    return std::find(cfg.strategies.begin(), cfg.strategies.end(), s) != cfg.strategies.end();
}

// strategies evaluated on sequences (everything but the single-frame baseline)
std::vector<Strategy> sequence_strategies(const RunConfig& cfg) {
    std::vector<Strategy> out;
    for (Strategy s : cfg.strategies) {
        if (s != Strategy::sm_single_frame) out.push_back(s);
    }
    return out;
}

}  // namespace

// ---- strategy evaluation -------------------------------------------------------

std::uint64_t passes_per_sequence(Strategy strategy, std::size_t members, std::size_t seq_len) {
    switch (strategy) {
        case Strategy::sm_single_frame: return 1;
        case Strategy::sm: return seq_len;
        case Strategy::de: return members * seq_len;
        case Strategy::desot: return seq_len;
        case Strategy::mcdropout: return seq_len;
    }
    throw std::invalid_argument("passes_per_sequence: unknown strategy");
}

StrategyEval evaluate_strategy(Strategy strategy, std::span<const MlpModel> members,
                               const MlpModel* mc_model, const SequenceDataset& sequences,
                               double temperature, std::uint64_t eval_seed, bool ood_marker) {
    if (sequences.size() == 0) {
        throw std::invalid_argument("evaluate_strategy: no sequences");
    }
    if (members.empty()) {
        throw std::invalid_argument("evaluate_strategy: empty ensemble");
    }
    if (strategy == Strategy::mcdropout && mc_model == nullptr) {
        throw std::invalid_argument("evaluate_strategy: mcdropout requires the dropout model");
    }

    StrategyEval out{{}, CostCounter(members.size())};
    out.records.reserve(sequences.size());

    MemberSchedule schedule;
    if (strategy == Strategy::desot) {
        schedule = round_robin_schedule(sequences.seq_len, members.size(), 0);
    }

    for (std::size_t i = 0; i < sequences.size(); ++i) {
        const SequenceSample& seq = sequences.sequences[i];
        CategoricalDist dist;
        switch (strategy) {
            case Strategy::sm:
                dist = predict_sm(members[0], seq, out.counter, temperature);
                break;
            case Strategy::de:
                dist = predict_de(members, seq, out.counter, temperature);
                break;
            case Strategy::desot:
                dist = predict_desot(members, seq, schedule, out.counter, temperature);
                break;
            case Strategy::mcdropout:
                dist = predict_mc_dropout(*mc_model, seq,
                                          mix_seed(eval_seed, kMcStream, i), out.counter,
                                          temperature);
                break;
            case Strategy::sm_single_frame: {
                Rng rng(mix_seed(eval_seed, kFrameStream, i));
                const std::size_t t = rng.below(seq.length());
                SequenceSample one;
                one.frame_dim = seq.frame_dim;
                one.label = seq.label;
                one.group_id = seq.group_id;
                const auto frame = seq.frame(t);
                one.frames.assign(frame.begin(), frame.end());
                dist = predict_sm(members[0], one, out.counter, temperature);
                break;
            }
        }
        PredictionRecord record;
        record.dist = std::move(dist);
        record.label = ood_marker ? 0 : seq.label;
        record.group_id = seq.group_id;
        record.ood_marker = ood_marker;
        out.records.push_back(std::move(record));
    }
    return out;
}

// ---- gen-data -------------------------------------------------------------------

namespace {

FrameDataset gather_frames(const FrameDataset& ds, std::span<const std::size_t> indices) {
    FrameDataset out;
    out.height = ds.height;
    out.width = ds.width;
    out.channels = ds.channels;
    out.num_classes = ds.num_classes;
    out.class_names = ds.class_names;
    const std::size_t dim = ds.frame_dim();
    out.labels.reserve(indices.size());
    out.pixels.reserve(indices.size() * dim);
    for (std::size_t i : indices) {
        out.labels.push_back(ds.labels[i]);
        const auto frame = ds.frame(i);
        out.pixels.insert(out.pixels.end(), frame.begin(), frame.end());
    }
    return out;
}

// Re-index three splits consistently after dropping low-count classes.
void drop_classes_jointly(std::vector<FrameDataset*> splits, const std::vector<bool>& keep) {
    const FrameDataset& first = *splits.front();
    std::vector<std::size_t> old_to_new(first.num_classes, static_cast<std::size_t>(-1));
    std::vector<std::string> names;
    for (std::size_t c = 0; c < first.num_classes; ++c) {
        if (keep[c]) {
            old_to_new[c] = names.size();
            names.push_back(first.class_names[c]);
        }
    }
    if (names.empty()) {
        throw std::invalid_argument("gen-data: the class-count filter removed every class");
    }
    for (FrameDataset* ds : splits) {
        FrameDataset out;
        out.height = ds->height;
        out.width = ds->width;
        out.channels = ds->channels;
        out.num_classes = names.size();
        out.class_names = names;
        const std::size_t dim = ds->frame_dim();
        for (std::size_t i = 0; i < ds->size(); ++i) {
            const std::size_t mapped = old_to_new[ds->labels[i]];
            if (mapped == static_cast<std::size_t>(-1)) continue;
            out.labels.push_back(static_cast<std::uint16_t>(mapped));
            const auto frame = ds->frame(i);
            out.pixels.insert(out.pixels.end(), frame.begin(), frame.end());
        }
        *ds = std::move(out);
    }
}

}  // namespace

void cmd_gen_data(const GenDataConfig& cfg) {
    if (cfg.train_frac <= 0.0 || cfg.val_frac < 0.0 || cfg.train_frac + cfg.val_frac >= 1.0) {
        throw std::invalid_argument("gen-data: need 0 < train_frac and train_frac+val_frac < 1");
    }
    fs::create_directories(cfg.out_dir);

    const FrameDataset master = generate_glyph_frames(cfg.glyphs);
    const std::vector<std::string> ood_names = ood_class_names(cfg.glyphs);

    FrameDataset in_dist;
    FrameDataset ood;
    if (!ood_names.empty()) {
        OodHoldout parts = holdout_ood_classes(master, ood_names);
        in_dist = std::move(parts.in_dist);
        ood = std::move(parts.ood);
    } else {
        in_dist = master;
    }

    // train/val/test split of the in-distribution frames
    std::vector<std::size_t> order(in_dist.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.glyphs.seed, kSplitStream));
    rng.shuffle(order);
    const std::size_t n = order.size();
    const std::size_t n_train = static_cast<std::size_t>(cfg.train_frac * static_cast<double>(n));
    const std::size_t n_val = static_cast<std::size_t>(cfg.val_frac * static_cast<double>(n));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
        throw std::invalid_argument("gen-data: split fractions leave an empty split");
    }
    FrameDataset train = gather_frames(in_dist, {order.data(), n_train});
    FrameDataset val = gather_frames(in_dist, {order.data() + n_train, n_val});
    FrameDataset test =
        gather_frames(in_dist, {order.data() + n_train + n_val, n - n_train - n_val});

    // drop classes under-represented across train+val
    std::vector<std::size_t> joint_counts(train.num_classes, 0);
    for (std::uint16_t label : train.labels) joint_counts[label] += 1;
    for (std::uint16_t label : val.labels) joint_counts[label] += 1;
    std::vector<bool> keep(train.num_classes);
    bool any_dropped = false;
    for (std::size_t c = 0; c < keep.size(); ++c) {
        keep[c] = joint_counts[c] >= cfg.min_class_count;
        any_dropped = any_dropped || !keep[c];
    }
    if (any_dropped) {
        drop_classes_jointly({&train, &val, &test}, keep);
    }

    SequenceDataset test_seq =
        synthesize_sequences(test, cfg.seq_len, cfg.jitter, mix_seed(cfg.glyphs.seed,
                                                                     kTestSeqStream));
    save_dataset(train, path_join(cfg.out_dir, "train.dset"));
    save_dataset(val, path_join(cfg.out_dir, "val.dset"));
    save_dataset(test, path_join(cfg.out_dir, "test_frames.dset"));
    save_sequences(test_seq, path_join(cfg.out_dir, "test_seq.dseq"));

    json files = {{"train", digest_file(path_join(cfg.out_dir, "train.dset"))},
                  {"val", digest_file(path_join(cfg.out_dir, "val.dset"))},
                  {"test_frames", digest_file(path_join(cfg.out_dir, "test_frames.dset"))},
                  {"test_seq", digest_file(path_join(cfg.out_dir, "test_seq.dseq"))}};

    if (ood.size() > 0) {
        SequenceDataset ood_seq = synthesize_sequences(ood, cfg.seq_len, cfg.jitter,
                                                       mix_seed(cfg.glyphs.seed, kOodSeqStream));
        for (SequenceSample& s : ood_seq.sequences) {
            s.group_id += kOodGroupOffset;  // keep group ids disjoint from test_seq
        }
        save_sequences(ood_seq, path_join(cfg.out_dir, "ood_seq.dseq"));
        files["ood_seq"] = digest_file(path_join(cfg.out_dir, "ood_seq.dseq"));
    }

    std::vector<std::size_t> train_counts(train.num_classes, 0);
    for (std::uint16_t label : train.labels) train_counts[label] += 1;

    json gen;
    gen["tool_version"] = kToolVersion;
    gen["spec"] = {{"in_dist_classes", cfg.glyphs.in_dist_classes},
                   {"ood_classes", cfg.glyphs.ood_classes},
                   {"in_dist_frames", cfg.glyphs.in_dist_frames},
                   {"ood_frames", cfg.glyphs.ood_frames},
                   {"height", cfg.glyphs.height},
                   {"width", cfg.glyphs.width},
                   {"tail_exponent", cfg.glyphs.tail_exponent},
                   {"seed", cfg.glyphs.seed},
                   {"train_frac", cfg.train_frac},
                   {"val_frac", cfg.val_frac},
                   {"seq_len", cfg.seq_len},
                   {"min_class_count", cfg.min_class_count},
                   {"jitter", {{"translate_frac", cfg.jitter.translate_frac},
                               {"scale_frac", cfg.jitter.scale_frac},
                               {"noise_sigma", cfg.jitter.noise_sigma}}}};
    gen["files"] = files;
    gen["class_names"] = train.class_names;
    gen["ood_class_names"] = ood_names;
    gen["train_class_counts"] = train_counts;
    std::ofstream out(path_join(cfg.out_dir, "gen.json"), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write gen.json");
    out << gen.dump(2) << "\n";
}

// ---- train ----------------------------------------------------------------------

void cmd_train(const RunConfig& cfg) {
    const FrameDataset train_ds = load_dataset(cfg.data.train);
    fs::create_directories(cfg.out_dir);

    std::vector<std::size_t> dims;
    dims.push_back(train_ds.frame_dim());
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(train_ds.num_classes);

    const bool want_mc = has_strategy(cfg, Strategy::mcdropout);

    json runs = json::array();
    for (std::uint64_t seed : cfg.seeds) {
        const std::string rel_dir = "models/seed_" + std::to_string(seed);
        fs::create_directories(path_join(cfg.out_dir, rel_dir));
        json members = json::array();
        for (std::size_t m = 0; m < cfg.members; ++m) {
            TrainConfig tc = cfg.train;
            tc.seed = seed + m;
            tc.dropout_rate = 0.0;
            MlpModel model = init_model(dims, 0.0, tc.seed);
            const TrainLog log = train(model, train_ds, tc);
            const std::string rel = rel_dir + "/member_" + std::to_string(m) + ".mlpw";
            save_model(model, path_join(cfg.out_dir, rel));
            members.push_back({{"path", rel},
                               {"seed", tc.seed},
                               {"digest", digest_file(path_join(cfg.out_dir, rel))},
                               {"final_loss", log.epoch_loss.back()}});
        }
        json run = {{"seed", seed}, {"members", members}, {"mc", nullptr}};
        if (want_mc) {
            TrainConfig tc = cfg.train;
            tc.seed = seed + cfg.members;
            MlpModel model = init_model(dims, tc.dropout_rate, tc.seed);
            const TrainLog log = train(model, train_ds, tc);
            const std::string rel = rel_dir + "/mcdropout.mlpw";
            save_model(model, path_join(cfg.out_dir, rel));
            run["mc"] = {{"path", rel},
                         {"seed", tc.seed},
                         {"digest", digest_file(path_join(cfg.out_dir, rel))},
                         {"final_loss", log.epoch_loss.back()}};
        }
        runs.push_back(run);
    }

    std::vector<std::size_t> class_counts(train_ds.num_classes, 0);
    for (std::uint16_t label : train_ds.labels) class_counts[label] += 1;

    json m;
    m["tool_version"] = kToolVersion;
    m["config"] = json::parse(run_config_to_json(cfg));
    m["train"] = {{"runs", runs},
                  {"layer_dims", dims},
                  {"class_counts", class_counts},
                  {"train_data_digest", digest_file(cfg.data.train)}};
    write_manifest(cfg, m);
}

// ---- calibrate --------------------------------------------------------------------

void cmd_calibrate(const RunConfig& cfg) {
    json m = load_manifest(cfg, "calibrate");
    if (cfg.data.train.empty() || cfg.data.val.empty()) {
        throw std::invalid_argument("calibrate: train and val paths are required");
    }
    if (digest_file(cfg.data.train) == digest_file(cfg.data.val)) {
        throw std::invalid_argument(
            "calibrate: validation split is identical to the training split; the "
            "temperature must be fitted on held-out data");
    }

    const FrameDataset val = load_dataset(cfg.data.val);
    const SeedModels models = load_seed_models(cfg, m, 0);

    // deterministic member logits on the validation frames
    const std::size_t n = val.size();
    std::vector<MemberLogits> joint_sets(n);
    std::vector<MemberLogits> sm_sets(n);
    std::vector<MemberLogits> mc_sets;
    std::vector<std::size_t> labels(n);
    if (models.mc) mc_sets.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = val.labels[i];
        joint_sets[i].reserve(models.members.size());
        for (const MlpModel& member : models.members) {
            joint_sets[i].push_back(
                forward(member, val.frame(i), ForwardMode::eval_deterministic, 0));
        }
        sm_sets[i].push_back(joint_sets[i][0]);
        if (models.mc) {
            mc_sets[i].push_back(
                forward(*models.mc, val.frame(i), ForwardMode::eval_deterministic, 0));
        }
    }

    json temps = json::object();
    auto store = [&temps](const std::string& key, const TemperatureFit& fit) {
        temps[key] = {{"value", fit.temperature.value},
                      {"nll", fit.nll},
                      {"nll_at_unit", fit.nll_at_unit},
                      {"clamped", fit.clamped}};
    };

    const bool need_sm = has_strategy(cfg, Strategy::sm) ||
                         has_strategy(cfg, Strategy::sm_single_frame);
    if (need_sm) {
        const TemperatureFit fit = fit_temperature(sm_sets, labels, CalibrationMode::single);
        if (has_strategy(cfg, Strategy::sm)) store("sm", fit);
        if (has_strategy(cfg, Strategy::sm_single_frame)) store("sm_single_frame", fit);
    }
    if (has_strategy(cfg, Strategy::de) || has_strategy(cfg, Strategy::desot)) {
        const TemperatureFit fit =
            fit_temperature(joint_sets, labels, CalibrationMode::joint_ensemble);
        if (has_strategy(cfg, Strategy::de)) store("de", fit);
        if (has_strategy(cfg, Strategy::desot)) store("desot", fit);
    }
    if (has_strategy(cfg, Strategy::mcdropout)) {
        if (!models.mc) {
            throw std::runtime_error("calibrate: mcdropout strategy configured but the "
                                     "dropout member is missing from the manifest");
        }
        const TemperatureFit fit = fit_temperature(mc_sets, labels, CalibrationMode::single);
        store("mcdropout", fit);
    }

    m["calibration"] = {{"temperatures", temps},
                        {"search_lo", kTempSearchLo},
                        {"search_hi", kTempSearchHi},
                        {"val_data_digest", digest_file(cfg.data.val)},
                        {"mode_note", "de/desot share one joint temperature"}};
    write_manifest(cfg, m);
}

// ---- eval -----------------------------------------------------------------------

namespace {

struct Aggregate {
    double mean = 0.0;
    double std_dev = 0.0;
};

Aggregate aggregate_of(const std::vector<double>& values) {
    Aggregate a;
    const double n = static_cast<double>(values.size());
    for (double v : values) a.mean += v;
    a.mean /= n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.std_dev = std::sqrt(ss / (n - 1.0));
    }
    return a;
}

json report_to_json(const EvalReport& r) {
    return {{"accuracy", r.accuracy},
            {"macro_f1", r.macro_f1},
            {"ece", r.ece},
            {"brier_score", r.brier_score},
            {"brier_reliability", r.brier_reliability},
            {"mean_entropy", r.mean_entropy},
            {"forward_passes", r.forward_passes},
            {"n_samples", r.n_samples}};
}

std::vector<std::string> metrics_row(const std::string& strategy, const std::string& seed,
                                     const std::string& temp_scaled, const std::string& dataset,
                                     const EvalReport& r, const std::string& digest) {
    return {strategy,
            seed,
            temp_scaled,
            dataset,
            csv::format_u64(r.n_samples),
            csv::format_double(100.0 * r.accuracy),
            csv::format_double(100.0 * r.macro_f1),
            csv::format_double(100.0 * r.ece),
            csv::format_double(r.brier_score),
            csv::format_double(r.brier_reliability),
            csv::format_double(r.mean_entropy),
            csv::format_u64(r.forward_passes),
            digest};
}

}  // namespace

void cmd_eval(const RunConfig& cfg) {
    json m = load_manifest(cfg, "eval");
    const SequenceDataset seqs = load_sequences(cfg.data.test_sequences);
    if (seqs.seq_len != cfg.seq_len) {
        throw std::invalid_argument("eval: sequence file has T=" + std::to_string(seqs.seq_len) +
                                    " but config expects " + std::to_string(cfg.seq_len));
    }

    // minority subset: classes with at most minority_max_train_count training samples
    const std::vector<std::size_t> class_counts =
        m.at("train").at("class_counts").get<std::vector<std::size_t>>();
    if (class_counts.size() != seqs.num_classes) {
        throw std::invalid_argument("eval: sequence label space differs from training data");
    }
    std::vector<bool> minority_class(class_counts.size());
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
        minority_class[c] = class_counts[c] <= cfg.minority_max_train_count;
    }
    std::vector<std::size_t> minority_indices;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        if (minority_class[seqs.sequences[i].label]) minority_indices.push_back(i);
    }

    const std::string temp_scaled = cfg.calibration ? "on" : "off";
    const std::string digest = m.at("digest").get<std::string>();

    // seed-major evaluation so each ensemble loads once
    std::map<std::string, std::vector<EvalReport>> full_reports;
    std::map<std::string, std::vector<EvalReport>> minority_reports;
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
        const SeedModels models = load_seed_models(cfg, m, si);
        for (Strategy strategy : cfg.strategies) {
            const double temp = strategy_temperature(cfg, m, strategy);
            StrategyEval ev =
                evaluate_strategy(strategy, models.members,
                                  models.mc ? &*models.mc : nullptr, seqs, temp, cfg.eval_seed);
            const std::string name = strategy_name(strategy);
            full_reports[name].push_back(make_report(ev.records, seqs.num_classes, cfg.ece_bins,
                                                     cfg.brier_bins,
                                                     ev.counter.forward_passes));
            if (!minority_indices.empty()) {
                std::vector<PredictionRecord> subset;
                subset.reserve(minority_indices.size());
                for (std::size_t i : minority_indices) subset.push_back(ev.records[i]);
                const std::uint64_t passes =
                    static_cast<std::uint64_t>(minority_indices.size()) *
                    passes_per_sequence(strategy, cfg.members, seqs.seq_len);
                minority_reports[name].push_back(make_report(
                    subset, seqs.num_classes, cfg.ece_bins, cfg.brier_bins, passes));
            }
        }
    }

    csv::Writer csv_out(path_join(cfg.out_dir, "metrics.csv"));
    csv_out.row({"strategy", "seed", "temp_scaled", "dataset", "n_sequences", "accuracy",
                 "macro_f1", "ece", "brier_score", "brier_reliability", "mean_entropy",
                 "forward_passes", "manifest_digest"});

    json eval_json;
    eval_json["single_frame_policy"] = "uniform_seeded";
    eval_json["temp_scaled"] = cfg.calibration;
    json per_seed = json::object();
    json aggregates = json::object();

    auto emit_block = [&](const std::string& name, const std::string& dataset,
                          const std::vector<EvalReport>& reports) {
        for (std::size_t si = 0; si < reports.size(); ++si) {
            csv_out.row(metrics_row(name, std::to_string(cfg.seeds[si]), temp_scaled, dataset,
                                    reports[si], digest));
            per_seed[name][dataset].push_back(report_to_json(reports[si]));
        }
        // aggregate rows, recomputable from the per-seed rows above
        auto collect = [&](auto field) {
            std::vector<double> values;
            for (const EvalReport& r : reports) values.push_back(field(r));
            return aggregate_of(values);
        };
        const Aggregate acc = collect([](const EvalReport& r) { return r.accuracy; });
        const Aggregate f1 = collect([](const EvalReport& r) { return r.macro_f1; });
        const Aggregate e = collect([](const EvalReport& r) { return r.ece; });
        const Aggregate bs = collect([](const EvalReport& r) { return r.brier_score; });
        const Aggregate br = collect([](const EvalReport& r) { return r.brier_reliability; });
        const Aggregate ent = collect([](const EvalReport& r) { return r.mean_entropy; });
        const Aggregate fp = collect(
            [](const EvalReport& r) { return static_cast<double>(r.forward_passes); });

        EvalReport mean_row;
        mean_row.accuracy = acc.mean;
        mean_row.macro_f1 = f1.mean;
        mean_row.ece = e.mean;
        mean_row.brier_score = bs.mean;
        mean_row.brier_reliability = br.mean;
        mean_row.mean_entropy = ent.mean;
        mean_row.forward_passes = static_cast<std::uint64_t>(fp.mean);
        mean_row.n_samples = reports.front().n_samples;
        csv_out.row(metrics_row(name, "mean", temp_scaled, dataset, mean_row, digest));

        EvalReport std_row;
        std_row.accuracy = acc.std_dev;
        std_row.macro_f1 = f1.std_dev;
        std_row.ece = e.std_dev;
        std_row.brier_score = bs.std_dev;
        std_row.brier_reliability = br.std_dev;
        std_row.mean_entropy = ent.std_dev;
        std_row.forward_passes = 0;
        std_row.n_samples = reports.front().n_samples;
        csv_out.row(metrics_row(name, "std", temp_scaled, dataset, std_row, digest));

        aggregates[name][dataset] = {
            {"accuracy", {{"mean", acc.mean}, {"std", acc.std_dev}}},
            {"macro_f1", {{"mean", f1.mean}, {"std", f1.std_dev}}},
            {"ece", {{"mean", e.mean}, {"std", e.std_dev}}},
            {"brier_score", {{"mean", bs.mean}, {"std", bs.std_dev}}},
            {"brier_reliability", {{"mean", br.mean}, {"std", br.std_dev}}},
            {"mean_entropy", {{"mean", ent.mean}, {"std", ent.std_dev}}}};
    };

    for (Strategy strategy : cfg.strategies) {
        const std::string name = strategy_name(strategy);
        emit_block(name, "sequences", full_reports[name]);
        if (!minority_reports[name].empty()) {
            emit_block(name, "minority", minority_reports[name]);
        }
    }

    eval_json["per_seed"] = per_seed;
    eval_json["aggregates"] = aggregates;
    eval_json["minority_sequences"] = minority_indices.size();
    m["eval"] = eval_json;
    write_manifest(cfg, m);
}

// ---- ood ------------------------------------------------------------------------

void cmd_ood(const RunConfig& cfg) {
    json m = load_manifest(cfg, "ood");
    const SequenceDataset in_seqs = load_sequences(cfg.data.test_sequences);
    const SequenceDataset ood_seqs = load_sequences(cfg.data.ood_sequences);
    if (ood_seqs.size() == 0) throw std::invalid_argument("ood: empty OOD sequence set");
    const SeedModels models = load_seed_models(cfg, m, 0);
    const std::string digest = m.at("digest").get<std::string>();
    const double ln_c = std::log(static_cast<double>(in_seqs.num_classes));

    csv::Writer csv_out(path_join(cfg.out_dir, "ood.csv"));
    csv_out.row({"strategy", "temp_scaled", "threshold", "accuracy", "precision", "recall",
                 "f1", "manifest_digest"});

    json ood_json;
    ood_json["split_seed"] = cfg.ood_split_seed;
    json entries = json::array();

    std::vector<bool> scaled_options = {false};
    if (cfg.calibration) scaled_options.push_back(true);

    for (Strategy strategy : sequence_strategies(cfg)) {
        const std::string name = strategy_name(strategy);
        for (bool scaled : scaled_options) {
            const double temp = scaled ? strategy_temperature(cfg, m, strategy) : 1.0;
            StrategyEval in_ev =
                evaluate_strategy(strategy, models.members,
                                  models.mc ? &*models.mc : nullptr, in_seqs, temp,
                                  cfg.eval_seed);
            StrategyEval ood_ev = evaluate_strategy(strategy, models.members,
                                                    models.mc ? &*models.mc : nullptr, ood_seqs,
                                                    temp, cfg.eval_seed, /*ood_marker=*/true);

            std::vector<OodRecord> records;
            std::vector<double> in_entropies, ood_entropies;
            records.reserve(in_ev.records.size() + ood_ev.records.size());
            for (const PredictionRecord& r : in_ev.records) {
                const double h = entropy(r.dist);
                records.push_back({h, false, r.group_id});
                in_entropies.push_back(h);
            }
            for (const PredictionRecord& r : ood_ev.records) {
                const double h = entropy(r.dist);
                records.push_back({h, true, r.group_id});
                ood_entropies.push_back(h);
            }

            auto [fit_split, eval_split] = split_halves(records, cfg.ood_split_seed);
            const ThresholdFit fit = fit_threshold(fit_split);
            const OodReport report = evaluate_detection(eval_split, fit.threshold);

            csv_out.row({name, scaled ? "on" : "off", csv::format_double(report.threshold),
                         csv::format_double(report.accuracy),
                         csv::format_double(report.precision),
                         csv::format_double(report.recall), csv::format_double(report.f1),
                         digest});

            const EntropyHistogram in_hist =
                entropy_histogram(in_entropies, cfg.entropy_bins, 0.0, ln_c);
            const EntropyHistogram ood_hist =
                entropy_histogram(ood_entropies, cfg.entropy_bins, 0.0, ln_c);
            const std::string hist_name =
                "entropy_hist_" + name + (scaled ? "_tscaled" : "") + ".csv";
            csv::Writer hist_out(path_join(cfg.out_dir, hist_name));
            hist_out.row({"bin_left", "bin_right", "count_in", "count_ood"});
            const double bin_w = ln_c / static_cast<double>(cfg.entropy_bins);
            for (std::size_t b = 0; b < cfg.entropy_bins; ++b) {
                hist_out.row({csv::format_double(static_cast<double>(b) * bin_w),
                              csv::format_double(static_cast<double>(b + 1) * bin_w),
                              csv::format_u64(in_hist.counts[b]),
                              csv::format_u64(ood_hist.counts[b])});
            }

            entries.push_back({{"strategy", name},
                               {"temp_scaled", scaled},
                               {"temperature", temp},
                               {"threshold", report.threshold},
                               {"fit_f1", fit.fit_f1},
                               {"degenerate_fit", fit.degenerate},
                               {"accuracy", report.accuracy},
                               {"precision", report.precision},
                               {"recall", report.recall},
                               {"f1", report.f1},
                               {"precision_defaulted", report.precision_defaulted},
                               {"recall_defaulted", report.recall_defaulted},
                               {"mean_entropy_in", in_hist.mean_entropy},
                               {"mean_entropy_ood", ood_hist.mean_entropy},
                               {"histogram_csv", hist_name}});
        }
    }
    ood_json["entries"] = entries;
    m["ood"] = ood_json;
    write_manifest(cfg, m);
}

// ---- sweep ----------------------------------------------------------------------

namespace {

SequenceSample augment_sequence(const SequenceSample& seq, const SequenceDataset& ds,
                                const AugmentationSpec& spec, std::uint64_t base_seed,
                                std::size_t seq_index) {
    SequenceSample out;
    out.frame_dim = seq.frame_dim;
    out.label = seq.label;
    out.group_id = seq.group_id;
    out.frames.resize(seq.frames.size());
    for (std::size_t t = 0; t < seq.length(); ++t) {
        const std::vector<float> augmented =
            apply_augmentation(seq.frame(t), ds.height, ds.width, ds.channels, spec,
                               mix_seed(base_seed, seq_index, t));
        std::copy(augmented.begin(), augmented.end(), out.frame(t).begin());
    }
    return out;
}

}  // namespace

void cmd_sweep(const RunConfig& cfg) {
    json m = load_manifest(cfg, "sweep");
    SequenceDataset seqs = load_sequences(cfg.data.test_sequences);
    if (!std::is_sorted(cfg.sweep.severities.begin(), cfg.sweep.severities.end())) {
        throw std::invalid_argument("sweep: severities must be sorted ascending");
    }
    if (cfg.sweep.severities.empty() || cfg.sweep.severities.front() != 0) {
        throw std::invalid_argument("sweep: severities must include 0");
    }
    if (cfg.sweep.max_sequences > 0 && cfg.sweep.max_sequences < seqs.size()) {
        seqs.sequences.resize(cfg.sweep.max_sequences);
    }

    const SeedModels models = load_seed_models(cfg, m, 0);
    const std::string digest = m.at("digest").get<std::string>();
    const std::uint64_t base_seed = mix_seed(cfg.eval_seed, kSweepStream);
    const std::vector<Strategy> strategies = sequence_strategies(cfg);

    csv::Writer csv_out(path_join(cfg.out_dir, "sweep.csv"));
    csv_out.row({"strategy", "kind", "severity", "accuracy", "brier_reliability",
                 "mean_entropy", "manifest_digest"});

    json cells = json::array();
    for (AugmentationKind kind : cfg.sweep.kinds) {
        for (std::size_t severity : cfg.sweep.severities) {
            AugmentationSpec spec{kind, severity, cfg.sweep.max_severity};
            SequenceDataset augmented = seqs;
            for (std::size_t i = 0; i < augmented.size(); ++i) {
                augmented.sequences[i] =
                    augment_sequence(seqs.sequences[i], seqs, spec, base_seed, i);
            }
            for (Strategy strategy : strategies) {
                StrategyEval ev = evaluate_strategy(strategy, models.members,
                                                    models.mc ? &*models.mc : nullptr,
                                                    augmented, 1.0, cfg.eval_seed);
                const EvalReport report =
                    make_report(ev.records, seqs.num_classes, cfg.ece_bins, cfg.brier_bins,
                                ev.counter.forward_passes);
                csv_out.row({strategy_name(strategy), augmentation_name(kind),
                             csv::format_u64(severity),
                             csv::format_double(100.0 * report.accuracy),
                             csv::format_double(report.brier_reliability),
                             csv::format_double(report.mean_entropy), digest});
                cells.push_back({{"strategy", strategy_name(strategy)},
                                 {"kind", augmentation_name(kind)},
                                 {"severity", severity},
                                 {"accuracy", report.accuracy},
                                 {"brier_reliability", report.brier_reliability},
                                 {"mean_entropy", report.mean_entropy}});
            }
        }
    }

    m["sweep"] = {{"n_sequences", seqs.size()}, {"cells", cells}};
    write_manifest(cfg, m);
}

void run_pipeline(const RunConfig& cfg) {
    cmd_train(cfg);
    if (cfg.calibration) cmd_calibrate(cfg);
    cmd_eval(cfg);
    cmd_ood(cfg);
    cmd_sweep(cfg);
}

}  // namespace desot
