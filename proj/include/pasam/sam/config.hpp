#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pasam/diff/error.hpp"

namespace pasam {

/// How the prompt adapter's outputs re-enter the decoder streams.
enum class AdapterConnection { Serial, Parallel, Fusion };

/// Which decoder blocks host an adapter.
enum class AdapterBlocks { SecondOnly, Both };

inline std::string to_string(AdapterConnection c) {
    switch (c) {
        case AdapterConnection::Serial: return "serial";
        case AdapterConnection::Parallel: return "parallel";
        case AdapterConnection::Fusion: return "fusion";
    }
    return "?";
}

inline AdapterConnection parse_connection(const std::string& s) {
    if (s == "serial") return AdapterConnection::Serial;
    if (s == "parallel") return AdapterConnection::Parallel;
    if (s == "fusion") return AdapterConnection::Fusion;
    throw ConfigError("unknown adapter connection '" + s + "' (serial|parallel|fusion)");
}

inline std::string to_string(AdapterBlocks b) { return b == AdapterBlocks::Both ? "both" : "second_only"; }

inline AdapterBlocks parse_adapter_blocks(const std::string& s) {
    if (s == "second_only") return AdapterBlocks::SecondOnly;
    if (s == "both") return AdapterBlocks::Both;
    throw ConfigError("unknown adapter_blocks '" + s + "' (second_only|both)");
}

struct DecoderConfig {
    std::size_t n_blocks = 2;
    std::size_t channels = 64;
    std::size_t heads = 2;
    std::size_t mlp_width = 128;
    std::size_t n_mask_tokens = 4;
    AdapterConnection adapter_connection = AdapterConnection::Parallel;
    AdapterBlocks adapter_blocks = AdapterBlocks::SecondOnly;

    /// Per-block adapter placement. Empty or all-false with an adapter attached
    /// is a configuration error caught by decode().
    std::vector<bool> adapter_mask() const {
        std::vector<bool> m(n_blocks, false);
        if (n_blocks == 0) return m;
        if (adapter_blocks == AdapterBlocks::Both) {
            m.assign(n_blocks, true);
        } else if (n_blocks >= 2) {
            m[1] = true;
        }
        return m;
    }
};

struct SamConfig {
    std::size_t image_size = 128;
    std::vector<std::size_t> encoder_widths{16, 32, 64};  // final stage width is DecoderConfig::channels
    std::vector<std::size_t> mask_encoder_widths{4, 8, 16};
    DecoderConfig decoder;

    std::size_t grid() const { return image_size / 16; }
    std::size_t channels() const { return decoder.channels; }

    void validate() const {
        if (image_size == 0 || image_size % 16 != 0) {
            throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by 16");
        }
        if (decoder.channels % 4 != 0 || decoder.channels < 8) {
            throw ConfigError("channels must be a multiple of 4 and at least 8");
        }
        if (decoder.heads == 0 || decoder.channels % decoder.heads != 0) {
            throw ConfigError("channels must divide evenly into attention heads");
        }
        if (encoder_widths.size() != 3 || mask_encoder_widths.size() != 3) {
            throw ConfigError("encoders have exactly four stride-2 stages (three intermediate widths)");
        }
        if (decoder.n_blocks == 0) throw ConfigError("decoder needs at least one block");
    }
};

}  // namespace pasam
