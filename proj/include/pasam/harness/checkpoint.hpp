#pragma once

// PAADAPT1 container:
//   "PAADAPT1\n" "<header bytes>\n" <UTF-8 header> <float32 little-endian payload>
// The header holds "config <key>=<value>" lines for the network shape and
// "param <name> <group> <d0>x<d1>... <offset>" lines, offsets in floats
// from the start of the payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pasam/harness/config.hpp"

namespace pasam::harness {

inline constexpr const char* kCheckpointMagic = "PAADAPT1";

namespace detail {

inline const char* group_name(diff::ParamGroup g) {
    switch (g) {
        case diff::ParamGroup::Backbone: return "backbone";
        case diff::ParamGroup::Upsampler: return "upsampler";
        default: return "adapter";
    }
}

inline std::string shape_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out.empty() ? "scalar" : out;
}

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) | (v >> 24);
}

}  // namespace detail

/// FNV-1a over the names and float bytes of the frozen backbone group.
inline std::uint64_t backbone_checksum(const diff::ParamStore<float>& store) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    for (const auto& e : store.entries()) {
        if (e.group != diff::ParamGroup::Backbone) continue;
        mix(e.name.data(), e.name.size());
        mix(e.tensor.data().data(), e.tensor.numel() * sizeof(float));
    }
    return h;
}

inline void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model<float>& model) {
    std::string header = to_config_text(cfg, "config ", true);
    header += "config adapter_enabled=" + std::string(model.has_adapter() ? "true" : "false") + "\n";
    std::size_t offset = 0;
    for (const auto& e : model.params().entries()) {
        header += "param " + e.name + " " + detail::group_name(e.group) + " " + detail::shape_text(e.tensor.shape()) + " " +
                  std::to_string(offset) + "\n";
        offset += e.tensor.numel();
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out << kCheckpointMagic << "\n" << header.size() << "\n" << header;
    for (const auto& e : model.params().entries()) {
        for (float v : e.tensor.data()) {
            const std::uint32_t bits = detail::to_le(std::bit_cast<std::uint32_t>(v));
            out.write(reinterpret_cast<const char*>(&bits), 4);
        }
    }
    if (!out) throw IoError("cannot write checkpoint " + path);
}

struct Checkpoint {
    RunConfig config;  // only the model keys come from the file
    bool adapter_enabled = false;
    std::unique_ptr<Model<float>> model;
};

/// Reads a checkpoint and rebuilds its model. `base` supplies the non-model
/// keys (training settings) of the returned config.
inline Checkpoint load_checkpoint(const std::string& path, const RunConfig& base = RunConfig{}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path);
    std::string magic, size_line;
    std::getline(in, magic);
    if (magic != kCheckpointMagic) throw CompatibilityError(path + " is not a " + kCheckpointMagic + " checkpoint");
    std::getline(in, size_line);
    std::size_t header_size = 0;
    try {
        header_size = std::stoul(size_line);
    } catch (const std::exception&) {
        throw CompatibilityError(path + ": malformed header length");
    }
    std::string header(header_size, '\0');
    in.read(header.data(), std::streamsize(header_size));
    if (!in) throw CompatibilityError(path + ": truncated header");

    Checkpoint ck;
    ck.config = base;
    struct ParamLine {
        std::string name, group, shape;
        std::size_t offset;
    };
    std::vector<ParamLine> params;
    std::istringstream hs(header);
    std::string line;
    while (std::getline(hs, line)) {
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "config") {
            std::string kv;
            std::getline(ls, kv);
            kv = detail::trim(kv);
            if (kv == "adapter_enabled=true") {
                ck.adapter_enabled = true;
            } else if (kv != "adapter_enabled=false") {
                apply_override(ck.config, kv);
            }
        } else if (kind == "param") {
            ParamLine p;
            if (!(ls >> p.name >> p.group >> p.shape >> p.offset)) throw CompatibilityError(path + ": malformed param line '" + line + "'");
            params.push_back(p);
        } else if (!kind.empty()) {
            throw CompatibilityError(path + ": unknown header line '" + line + "'");
        }
    }
    ck.config.model.adapter_enabled = ck.adapter_enabled;
    ck.model = std::make_unique<Model<float>>(ck.config.model);

    auto& entries = ck.model->params().entries();
    if (entries.size() != params.size()) {
        throw CompatibilityError(path + ": " + std::to_string(params.size()) + " parameters, model expects " +
                                 std::to_string(entries.size()));
    }
    std::size_t total = 0;
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& e = entries[k];
        const auto& p = params[k];
        if (p.name != e.name || p.shape != detail::shape_text(e.tensor.shape()) || p.offset != total) {
            throw CompatibilityError(path + ": parameter " + p.name + " " + p.shape + " does not match " + e.name + " " +
                                     detail::shape_text(e.tensor.shape()));
        }
        total += e.tensor.numel();
    }
    for (auto& e : entries) {
        auto out = e.tensor.mutable_data();
        for (auto& v : out) {
            std::uint32_t bits = 0;
            in.read(reinterpret_cast<char*>(&bits), 4);
            v = std::bit_cast<float>(detail::to_le(bits));
        }
    }
    if (!in) throw CompatibilityError(path + ": truncated payload");
    in.peek();
    if (!in.eof()) throw CompatibilityError(path + ": trailing bytes after payload");
    return ck;
}

}  // namespace pasam::harness
