#pragma once

// Run configuration: flat `key = value` files with [section] headers and #
// comments, command-line overrides, and validation that reports every
// violation at once instead of stopping at the first.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cda/data.hpp"
#include "cda/nn.hpp"
#include "cda/trainer.hpp"
#include "cda/types.hpp"

namespace cda {

struct DataSpec {
    std::string generator = "two_moons";  // two_moons | blobs | csv | idx
    Eigen::Index n_source = 1000;
    Eigen::Index n_target = 1000;
    Real noise_sd = 0.1;
    Real rotation_deg = 30;  // target-domain shift for two_moons
    Real translate_x = 0;
    Real translate_y = 0;
    std::string centers;  // blobs: "x,y,sd; x,y,sd; ..."
    Real shift_x = 0;     // blobs target shift
    Real shift_y = 0;
    std::string source_path;  // csv
    std::string target_path;
    std::string images_path;  // idx
    std::string labels_path;
    Eigen::Index limit = 1000;  // idx: samples per domain
    bool colorize_target = true;
    std::uint64_t seed = 1;
};

struct ModelSpec {
    std::vector<Eigen::Index> hidden = {32, 32};
    Eigen::Index embed_dim = 16;
    std::vector<Eigen::Index> head_hidden = {64, 32};
    Real dropout = 0.3;
};

struct RunConfig {
    std::string name = "experiment";
    std::string out_dir;  // resolved: config value, else $CDA_OUT_DIR/name, else out/name
    DataSpec data;
    ModelSpec model;
    TrainConfig train;
};

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "experiment.name",      "experiment.out_dir",
        "data.generator",       "data.n_source",
        "data.n_target",        "data.noise_sd",
        "data.rotation_deg",    "data.translate_x",
        "data.translate_y",     "data.centers",
        "data.shift_x",         "data.shift_y",
        "data.source_path",     "data.target_path",
        "data.images_path",     "data.labels_path",
        "data.limit",           "data.colorize_target",
        "data.seed",            "model.hidden",
        "model.embed_dim",      "model.head_hidden",
        "model.dropout",        "schedule.epochs",
        "schedule.adv_start",   "schedule.cross_start",
        "schedule.gamma",       "schedule.alpha",
        "train.lr0",            "train.lr_decay",
        "train.lr_period",      "train.batch_size",
        "train.tau",            "train.weight_decay",
        "train.beta1",          "train.beta2",
        "train.eps",            "train.seed",
        "train.contrastive_enabled", "train.adversarial_enabled",
        "train.checkpoint_every"};
    return keys;
}

}  // namespace detail

inline KeyValues parse_config_text(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', "config: malformed section header at line " +
                                            std::to_string(lineno));
            section = detail::trim(line.substr(1, line.size() - 2));
            require(!section.empty(), "config: empty section name at line " +
                                          std::to_string(lineno));
            continue;
        }
        size_t eq = line.find('=');
        require(eq != std::string::npos,
                "config: expected key = value at line " + std::to_string(lineno));
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        require(!key.empty(), "config: empty key at line " + std::to_string(lineno));
        require(!section.empty(),
                "config: key '" + key + "' appears before any [section] at line " +
                    std::to_string(lineno));
        std::string full = section + "." + key;
        require(kv.find(full) == kv.end(), "config: duplicate key '" + full + "'");
        kv[full] = value;
    }
    return kv;
}

inline KeyValues parse_config_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// Overrides are `key=value` with either a full `section.key` or a bare key
// that matches exactly one known key's last component.
inline void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides) {
    for (const std::string& ov : overrides) {
        size_t eq = ov.find('=');
        require(eq != std::string::npos, "override: expected key=value, got '" + ov + "'");
        std::string key = detail::trim(ov.substr(0, eq));
        std::string value = detail::trim(ov.substr(eq + 1));
        require(!key.empty(), "override: empty key in '" + ov + "'");
        if (key.find('.') == std::string::npos) {
            std::string found;
            for (const std::string& k : detail::known_keys())
                if (k.substr(k.find('.') + 1) == key) {
                    require(found.empty(), "override: key '" + key + "' is ambiguous ('" +
                                               found + "' vs '" + k + "')");
                    found = k;
                }
            require(!found.empty(), "override: unknown key '" + key + "'");
            key = found;
        }
        kv[key] = value;
    }
}

// Canonical serialization of the effective key-value map; its FNV-1a hash
// stamps checkpoints so a model can be traced back to its exact config.
inline std::string canonical_config_text(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += "=";
        out += v;
        out += "\n";
    }
    return out;
}

namespace detail {

// Typed getters: parse failures land in `violations`, and the default
// survives so validation can continue collecting.
struct KvReader {
    const KeyValues& kv;
    std::vector<std::string>& violations;

    bool has(const std::string& key) const { return kv.find(key) != kv.end(); }

    std::string get_str(const std::string& key, const std::string& dflt) const {
        auto it = kv.find(key);
        return it == kv.end() ? dflt : it->second;
    }

    Real get_real(const std::string& key, Real dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        Real v = dflt;
        auto res = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
        if (res.ec != std::errc() || res.ptr != it->second.data() + it->second.size())
            violations.push_back(key + ": not a number: '" + it->second + "'");
        return v;
    }

    long long get_int(const std::string& key, long long dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        long long v = dflt;
        auto res = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
        if (res.ec != std::errc() || res.ptr != it->second.data() + it->second.size())
            violations.push_back(key + ": not an integer: '" + it->second + "'");
        return v;
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        std::uint64_t v = dflt;
        auto res = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
        if (res.ec != std::errc() || res.ptr != it->second.data() + it->second.size())
            violations.push_back(key + ": not an unsigned integer: '" + it->second + "'");
        return v;
    }

    bool get_bool(const std::string& key, bool dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        std::string v = it->second;
        std::transform(v.begin(), v.end(), v.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        violations.push_back(key + ": not a boolean: '" + it->second + "'");
        return dflt;
    }

    std::vector<Eigen::Index> get_dims(const std::string& key,
                                       const std::vector<Eigen::Index>& dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        if (detail::trim(it->second).empty()) return {};
        std::vector<Eigen::Index> dims;
        std::istringstream ss(it->second);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cell = detail::trim(cell);
            long long v = 0;
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || v < 1) {
                violations.push_back(key + ": not a dimension list: '" + it->second + "'");
                return dflt;
            }
            dims.push_back(static_cast<Eigen::Index>(v));
        }
        return dims;
    }
};

inline std::vector<BlobCenter> parse_centers(const std::string& text,
                                             std::vector<std::string>* violations) {
    std::vector<BlobCenter> centers;
    std::istringstream groups(text);
    std::string group;
    while (std::getline(groups, group, ';')) {
        group = trim(group);
        if (group.empty()) continue;
        std::vector<Real> nums;
        std::istringstream cells(group);
        std::string cell;
        bool ok = true;
        while (std::getline(cells, cell, ',')) {
            cell = trim(cell);
            Real v = 0;
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
                ok = false;
                break;
            }
            nums.push_back(v);
        }
        if (!ok || nums.size() < 2) {
            if (violations)
                violations->push_back("data.centers: malformed center '" + group +
                                      "' (want x,y,...,sd)");
            return {};
        }
        BlobCenter c;
        c.sd = nums.back();
        nums.pop_back();
        c.mean = nums;
        centers.push_back(std::move(c));
    }
    return centers;
}

}  // namespace detail

// Builds a RunConfig from parsed key-values, collecting every violation.
// A non-empty violation list means the config must not be run.
inline RunConfig resolve_run_config(const KeyValues& kv,
                                    std::vector<std::string>& violations) {
    for (const auto& [k, v] : kv) {
        (void)v;
        const auto& known = detail::known_keys();
        if (std::find(known.begin(), known.end(), k) == known.end())
            violations.push_back("unknown key '" + k + "'");
    }

    detail::KvReader r{kv, violations};
    RunConfig rc;
    rc.name = r.get_str("experiment.name", rc.name);
    if (rc.name.empty()) violations.push_back("experiment.name: must not be empty");

    DataSpec& d = rc.data;
    d.generator = r.get_str("data.generator", d.generator);
    d.n_source = static_cast<Eigen::Index>(r.get_int("data.n_source", d.n_source));
    d.n_target = static_cast<Eigen::Index>(r.get_int("data.n_target", d.n_target));
    d.noise_sd = r.get_real("data.noise_sd", d.noise_sd);
    d.rotation_deg = r.get_real("data.rotation_deg", d.rotation_deg);
    d.translate_x = r.get_real("data.translate_x", d.translate_x);
    d.translate_y = r.get_real("data.translate_y", d.translate_y);
    d.centers = r.get_str("data.centers", d.centers);
    d.shift_x = r.get_real("data.shift_x", d.shift_x);
    d.shift_y = r.get_real("data.shift_y", d.shift_y);
    d.source_path = r.get_str("data.source_path", d.source_path);
    d.target_path = r.get_str("data.target_path", d.target_path);
    d.images_path = r.get_str("data.images_path", d.images_path);
    d.labels_path = r.get_str("data.labels_path", d.labels_path);
    d.limit = static_cast<Eigen::Index>(r.get_int("data.limit", d.limit));
    d.colorize_target = r.get_bool("data.colorize_target", d.colorize_target);
    d.seed = r.get_u64("data.seed", d.seed);

    ModelSpec& m = rc.model;
    m.hidden = r.get_dims("model.hidden", m.hidden);
    m.embed_dim = static_cast<Eigen::Index>(r.get_int("model.embed_dim", m.embed_dim));
    m.head_hidden = r.get_dims("model.head_hidden", m.head_hidden);
    m.dropout = r.get_real("model.dropout", m.dropout);

    TrainConfig& t = rc.train;
    t.schedule.epochs = static_cast<int>(r.get_int("schedule.epochs", t.schedule.epochs));
    t.schedule.adv_start =
        static_cast<int>(r.get_int("schedule.adv_start", t.schedule.adv_start));
    t.schedule.cross_start =
        static_cast<int>(r.get_int("schedule.cross_start", t.schedule.cross_start));
    t.schedule.gamma = r.get_real("schedule.gamma", t.schedule.gamma);
    t.schedule.alpha = r.get_real("schedule.alpha", t.schedule.alpha);
    t.lr0 = r.get_real("train.lr0", t.lr0);
    t.lr_decay = r.get_real("train.lr_decay", t.lr_decay);
    t.lr_period = static_cast<int>(r.get_int("train.lr_period", t.lr_period));
    t.batch_size = static_cast<Eigen::Index>(r.get_int("train.batch_size", t.batch_size));
    t.tau = r.get_real("train.tau", t.tau);
    t.adam.weight_decay = r.get_real("train.weight_decay", t.adam.weight_decay);
    t.adam.beta1 = r.get_real("train.beta1", t.adam.beta1);
    t.adam.beta2 = r.get_real("train.beta2", t.adam.beta2);
    t.adam.eps = r.get_real("train.eps", t.adam.eps);
    t.seed = r.get_u64("train.seed", t.seed);
    t.contrastive_enabled = r.get_bool("train.contrastive_enabled", t.contrastive_enabled);
    t.adversarial_enabled = r.get_bool("train.adversarial_enabled", t.adversarial_enabled);
    t.checkpoint_every = static_cast<int>(r.get_int("train.checkpoint_every",
                                                    t.checkpoint_every));

    // without the contrastive stages the schedule collapses: adversarial
    // alignment runs from the first epoch
    if (!t.contrastive_enabled) {
        t.schedule.adv_start = 0;
        t.schedule.cross_start = 0;
    }

    // output directory: explicit setting, then environment, then out/<name>
    rc.out_dir = r.get_str("experiment.out_dir", "");
    if (rc.out_dir.empty()) {
        const char* env = std::getenv("CDA_OUT_DIR");
        rc.out_dir = env && *env ? std::string(env) + "/" + rc.name : "out/" + rc.name;
    }
    t.out_dir = rc.out_dir;
    t.config_hash = fnv1a_hash(canonical_config_text(kv));

    // dataset-spec validation
    namespace fs = std::filesystem;
    if (d.generator == "two_moons" || d.generator == "blobs") {
        if (d.n_source < 2) violations.push_back("data.n_source: must be >= 2");
        if (d.n_target < 2) violations.push_back("data.n_target: must be >= 2");
        if (d.noise_sd < 0) violations.push_back("data.noise_sd: must be >= 0");
        Eigen::Index shorter = std::min(d.n_source, d.n_target);
        if (t.batch_size > shorter)
            violations.push_back("train.batch_size: " + std::to_string(t.batch_size) +
                                 " exceeds smaller dataset size " + std::to_string(shorter));
        if (d.generator == "blobs" &&
            detail::parse_centers(d.centers, &violations).size() < 2)
            violations.push_back("data.centers: need at least 2 centers");
    } else if (d.generator == "csv") {
        for (auto [key, path] : {std::pair<std::string, std::string>{"data.source_path",
                                                                     d.source_path},
                                 {"data.target_path", d.target_path}}) {
            if (path.empty())
                violations.push_back(key + ": required for the csv generator");
            else if (!fs::exists(path))
                violations.push_back(key + ": no such file: " + path);
        }
    } else if (d.generator == "idx") {
        for (auto [key, path] : {std::pair<std::string, std::string>{"data.images_path",
                                                                     d.images_path},
                                 {"data.labels_path", d.labels_path}}) {
            if (path.empty())
                violations.push_back(key + ": required for the idx generator");
            else if (!fs::exists(path))
                violations.push_back(key + ": no such file: " + path);
        }
        if (d.limit < 1) violations.push_back("data.limit: must be >= 1");
    } else {
        violations.push_back("data.generator: unknown generator '" + d.generator + "'");
    }

    // model-spec validation
    for (Eigen::Index h : m.hidden)
        if (h < 1) violations.push_back("model.hidden: dimensions must be >= 1");
    for (Eigen::Index h : m.head_hidden)
        if (h < 1) violations.push_back("model.head_hidden: dimensions must be >= 1");
    if (m.embed_dim < 1) violations.push_back("model.embed_dim: must be >= 1");
    if (!(m.dropout >= 0 && m.dropout <= 0.5))
        violations.push_back("model.dropout: must be in [0, 0.5]");

    for (const std::string& v : train_config_violations(t)) violations.push_back(v);
    return rc;
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::string>& overrides,
                                 std::vector<std::string>& violations) {
    KeyValues kv = parse_config_file(path);
    apply_overrides(kv, overrides);
    return resolve_run_config(kv, violations);
}

// Materializes the configured datasets. Generator-backed domains draw from
// stream-separated seeds so source and target are independent samples.
inline std::pair<LabeledDataset, UnlabeledDataset> build_datasets(const RunConfig& rc) {
    const DataSpec& d = rc.data;
    if (d.generator == "two_moons") {
        LabeledDataset src =
            gen_two_moons(d.n_source, d.noise_sd, 0.0, 0.0, 0.0, mix_seed(d.seed, 0));
        LabeledDataset tgt = gen_two_moons(d.n_target, d.noise_sd, d.rotation_deg,
                                           d.translate_x, d.translate_y, mix_seed(d.seed, 1));
        tgt.domain_tag = "two_moons_target";
        return {std::move(src), to_unlabeled(tgt, true)};
    }
    if (d.generator == "blobs") {
        std::vector<BlobCenter> centers = detail::parse_centers(d.centers, nullptr);
        require(centers.size() >= 2, "build_datasets: data.centers must define >= 2 centers");
        size_t dim = centers.front().mean.size();
        std::vector<Real> no_shift(dim, 0.0);
        std::vector<Real> shift(dim, 0.0);
        if (dim >= 1) shift[0] = d.shift_x;
        if (dim >= 2) shift[1] = d.shift_y;
        LabeledDataset src = gen_blobs(d.n_source, centers, no_shift, mix_seed(d.seed, 0));
        LabeledDataset tgt = gen_blobs(d.n_target, centers, shift, mix_seed(d.seed, 1));
        tgt.domain_tag = "blobs_target";
        return {std::move(src), to_unlabeled(tgt, true)};
    }
    if (d.generator == "csv") {
        LabeledDataset src = load_csv_labeled(d.source_path, "source");
        UnlabeledDataset tgt = load_csv_unlabeled(d.target_path);
        require(src.X.cols() == tgt.X.cols(),
                "build_datasets: source and target csv widths differ");
        return {std::move(src), std::move(tgt)};
    }
    require(d.generator == "idx", "build_datasets: unknown generator '" + d.generator + "'");
    // one file provides both halves: front half becomes the grayscale source,
    // back half the color-shifted target, disjoint by construction
    LabeledDataset all = load_idx(d.images_path, d.labels_path, 2 * d.limit);
    Eigen::Index half = all.X.rows() / 2;
    require(half >= 2, "build_datasets: idx file too small to split into two domains");
    LabeledDataset src_gray{all.X.topRows(half), all.Y.head(half), all.num_classes, "source"};
    LabeledDataset tgt_gray{all.X.bottomRows(all.X.rows() - half),
                            all.Y.tail(all.Y.size() - half), all.num_classes, "target"};
    validate_labeled(src_gray, "build_datasets");
    validate_labeled(tgt_gray, "build_datasets");
    if (d.colorize_target) {
        LabeledDataset tgt_color = colorize_shift(tgt_gray, mix_seed(d.seed, 2));
        return {replicate_channels(src_gray), to_unlabeled(tgt_color, true)};
    }
    return {std::move(src_gray), to_unlabeled(tgt_gray, true)};
}

inline CdaModel build_model(const RunConfig& rc, Eigen::Index in_dim, int num_classes) {
    std::vector<Eigen::Index> layer_dims;
    layer_dims.push_back(in_dim);
    for (Eigen::Index h : rc.model.hidden) layer_dims.push_back(h);
    return init_model(layer_dims, rc.model.embed_dim, num_classes, rc.train.seed,
                      rc.model.head_hidden, rc.model.dropout);
}

}  // namespace cda
