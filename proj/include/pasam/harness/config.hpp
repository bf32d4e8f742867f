#pragma once

// Flat key=value run configuration: model, sampler, adapter and training
// hyperparameters in one diffable text format.

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pasam/model.hpp"
#include "pasam/training/trainer.hpp"

namespace pasam::harness {

struct RunConfig {
    ModelConfig model;
    training::TrainConfig train;

    RunConfig() {
        model.adapter_enabled = false;
        train.eval_train = true;
    }
};

inline std::string format_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <class Get>
Field size_field(Get ref) {
    return {[ref](const RunConfig& c) { return std::to_string(ref(c)); },
            [ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = std::size_t(parse_u64(k, v)); }};
}

template <class Get>
Field u64_field(Get ref) {
    return {[ref](const RunConfig& c) { return std::to_string(ref(c)); },
            [ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_u64(k, v); }};
}

template <class Get>
Field double_field(Get ref) {
    return {[ref](const RunConfig& c) { return format_double(ref(c)); },
            [ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_double(k, v); }};
}

template <class Get>
Field bool_field(Get ref) {
    return {[ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); },
            [ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_bool(k, v); }};
}

template <class Get>
Field list_field(Get ref) {
    return {[ref](const RunConfig& c) { return join(ref(c)); },
            [ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_list(k, v); }};
}

template <class Get, class Print, class Parse>
Field enum_field(Get ref, Print print, Parse parse) {
    return {[ref, print](const RunConfig& c) { return print(ref(c)); },
            [ref, parse](RunConfig& c, const std::string&, const std::string& v) { ref(c) = parse(v); }};
}

inline std::string st_to_string(sampler::StraightThrough s) { return s == sampler::StraightThrough::PerStep ? "per_step" : "combined"; }
inline sampler::StraightThrough parse_st(const std::string& s) {
    if (s == "per_step") return sampler::StraightThrough::PerStep;
    if (s == "combined") return sampler::StraightThrough::Combined;
    throw ConfigError("unknown straight_through '" + s + "' (per_step|combined)");
}
inline std::string edges_to_string(adapter::EdgeOperator e) { return e == adapter::EdgeOperator::Sobel ? "sobel" : "canny"; }
inline adapter::EdgeOperator parse_edges(const std::string& s) {
    if (s == "sobel") return adapter::EdgeOperator::Sobel;
    if (s == "canny") return adapter::EdgeOperator::Canny;
    throw ConfigError("unknown edges '" + s + "' (sobel|canny)");
}

// Ordered: this is also the serialization order.
inline const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> f = {
        {"image_size", size_field([](auto& c) -> auto& { return c.model.sam.image_size; })},
        {"encoder_widths", list_field([](auto& c) -> auto& { return c.model.sam.encoder_widths; })},
        {"mask_encoder_widths", list_field([](auto& c) -> auto& { return c.model.sam.mask_encoder_widths; })},
        {"channels", size_field([](auto& c) -> auto& { return c.model.sam.decoder.channels; })},
        {"heads", size_field([](auto& c) -> auto& { return c.model.sam.decoder.heads; })},
        {"mlp_width", size_field([](auto& c) -> auto& { return c.model.sam.decoder.mlp_width; })},
        {"n_blocks", size_field([](auto& c) -> auto& { return c.model.sam.decoder.n_blocks; })},
        {"n_mask_tokens", size_field([](auto& c) -> auto& { return c.model.sam.decoder.n_mask_tokens; })},
        {"adapter_connection", enum_field([](auto& c) -> auto& { return c.model.sam.decoder.adapter_connection; },
                                          [](AdapterConnection v) { return to_string(v); }, parse_connection)},
        {"adapter_blocks", enum_field([](auto& c) -> auto& { return c.model.sam.decoder.adapter_blocks; },
                                      [](AdapterBlocks v) { return to_string(v); }, parse_adapter_blocks)},
        {"crm", enum_field([](auto& c) -> auto& { return c.model.adapter.crm; },
                           [](adapter::CrmKind v) { return adapter::to_string(v); }, adapter::parse_crm)},
        {"edges", enum_field([](auto& c) -> auto& { return c.model.adapter.edges; }, edges_to_string, parse_edges)},
        {"n_sample", size_field([](auto& c) -> auto& { return c.model.adapter.n_sample; })},
        {"temperature", double_field([](auto& c) -> auto& { return c.model.adapter.temperature; })},
        {"straight_through", enum_field([](auto& c) -> auto& { return c.model.adapter.straight_through; },
                                        st_to_string, parse_st)},
        {"init_seed", u64_field([](auto& c) -> auto& { return c.model.init_seed; })},
        {"learning_rate", double_field([](auto& c) -> auto& { return c.train.learning_rate; })},
        {"batch_size", size_field([](auto& c) -> auto& { return c.train.batch_size; })},
        {"epochs", size_field([](auto& c) -> auto& { return c.train.epochs; })},
        {"w_sam", double_field([](auto& c) -> auto& { return c.train.weights.sam; })},
        {"w_pa", double_field([](auto& c) -> auto& { return c.train.weights.pa; })},
        {"w_u", double_field([](auto& c) -> auto& { return c.train.weights.uncertain; })},
        {"iou_head_weight", double_field([](auto& c) -> auto& { return c.train.iou_head_weight; })},
        {"uncertain_radius", size_field([](auto& c) -> auto& { return c.train.uncertain_radius; })},
        {"metric_radius", size_field([](auto& c) -> auto& { return c.train.metric_radius; })},
        {"seed", u64_field([](auto& c) -> auto& { return c.train.seed; })},
        {"eval_train", bool_field([](auto& c) -> auto& { return c.train.eval_train; })},
        {"max_steps", size_field([](auto& c) -> auto& { return c.train.max_steps; })},
    };
    return f;
}

// Keys describing the network itself; a checkpoint header records these.
inline bool is_model_key(const std::string& k) {
    static const char* keys[] = {"image_size", "encoder_widths", "mask_encoder_widths", "channels",     "heads",
                                 "mlp_width",  "n_blocks",       "n_mask_tokens",       "adapter_connection", "adapter_blocks",
                                 "crm",        "edges",          "n_sample",            "temperature",  "straight_through",
                                 "init_seed"};
    for (const char* k2 : keys)
        if (k == k2) return true;
    return false;
}

}  // namespace detail

inline bool is_config_key(const std::string& key) {
    for (const auto& [k, f] : detail::fields())
        if (k == key) return true;
    return false;
}

inline void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& [k, f] : detail::fields()) {
        if (k == key) {
            f.set(cfg, key, detail::trim(value));
            return;
        }
    }
    throw ConfigError("unknown key '" + key + "'");
}

inline std::string get_value(const RunConfig& cfg, const std::string& key) {
    for (const auto& [k, f] : detail::fields())
        if (k == key) return f.get(cfg);
    throw ConfigError("unknown key '" + key + "'");
}

/// "key=value" override, as given on the command line.
inline void apply_override(RunConfig& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    set_value(cfg, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
}

/// Parses key=value lines; '#' starts a comment. Errors cite the source and line.
inline void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        try {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'");
            set_value(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    parse_config_text(cfg, ss.str(), path);
    return cfg;
}

/// Every key, in a fixed order; `prefix` is prepended to each line.
inline std::string to_config_text(const RunConfig& cfg, const std::string& prefix = "", bool model_only = false) {
    std::string out;
    for (const auto& [k, f] : detail::fields()) {
        if (model_only && !detail::is_model_key(k)) continue;
        out += prefix + k + "=" + f.get(cfg) + "\n";
    }
    return out;
}

inline void validate(const RunConfig& cfg) {
    cfg.model.validate();
    cfg.train.validate();
}

}  // namespace pasam::harness
