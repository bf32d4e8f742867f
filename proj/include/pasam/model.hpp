#pragma once

// The full promptable model: frozen-able backbone plus an optional prompt adapter.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "pasam/adapter/prompt_adapter.hpp"
#include "pasam/sam/decoder.hpp"
#include "pasam/sam/image_encoder.hpp"
#include "pasam/sam/prompt_encoder.hpp"

namespace pasam {

struct ModelConfig {
    SamConfig sam;
    bool adapter_enabled = false;
    adapter::AdapterConfig adapter;
    std::uint64_t init_seed = 0;

    void validate() const {
        sam.validate();
        adapter.validate();
        if (adapter_enabled && adapter.n_sample > sam.grid() * sam.grid()) {
            throw ConfigError("n_sample " + std::to_string(adapter.n_sample) + " exceeds the " +
                              std::to_string(sam.grid() * sam.grid()) + "-cell decoder grid");
        }
    }
};

/// Backbone outputs that do not depend on trainable adapter state.
template <class T>
struct Encoded {
    diff::Tensor<T> feature;       // [C,h,w]
    diff::Tensor<T> dense_prompt;  // [C,h,w]
};

struct ForwardOptions {
    bool use_adapter = true;
    sampler::SamplerMode mode = sampler::SamplerMode::InferDeterministic;
    std::uint64_t seed = 0;
};

template <class T>
struct ForwardResult {
    sam::DecodeResult<T> decoded;
    std::vector<adapter::AdapterOutputs<T>> intermediates;  // empty without the adapter
};

template <class T>
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        // Backbone and adapter draw from separate generators so the backbone
        // initialization does not depend on whether an adapter is attached.
        std::mt19937_64 rng(cfg_.init_seed);
        diff::Builder<T> b(store_, rng, "", diff::ParamGroup::Backbone);
        image_encoder_ = sam::ImageEncoder<T>(b.scope("image_encoder"), cfg_.sam);
        mask_encoder_ = sam::MaskEncoder<T>(b.scope("mask_encoder"), cfg_.sam);
        prompt_encoder_ = sam::PromptEncoder<T>(b.scope("prompt_encoder"), cfg_.sam);
        decoder_ = sam::MaskDecoder<T>(b.scope("decoder"), cfg_.sam.decoder);
        if (cfg_.adapter_enabled) {
            std::mt19937_64 arng(mix_seed(cfg_.init_seed, 7, 1));
            diff::Builder<T> ab(store_, arng, "", diff::ParamGroup::Adapter);
            adapter_ = adapter::PromptAdapter<T>(ab.scope("adapter"), cfg_.sam, cfg_.adapter);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    diff::ParamStore<T>& params() { return store_; }
    const diff::ParamStore<T>& params() const { return store_; }
    bool has_adapter() const { return adapter_.has_value(); }
    const sam::MaskDecoder<T>& decoder() const { return decoder_; }
    const sam::PromptEncoder<T>& prompt_encoder() const { return prompt_encoder_; }
    const adapter::PromptAdapter<T>& prompt_adapter() const { return *adapter_; }

    Encoded<T> encode(const diff::Tensor<T>& image, const diff::Tensor<T>& coarse_mask) const {
        return {image_encoder_(image), mask_encoder_(coarse_mask)};
    }

    /// `edges` is the image-gradient map; only consulted when the adapter runs.
    ForwardResult<T> decode(const Encoded<T>& enc, const diff::Tensor<T>& image, const diff::Tensor<T>& edges,
                            const Prompts& prompts, const ForwardOptions& opt) const {
        ForwardResult<T> r;
        auto tokens = prompt_encoder_(prompts);
        if (adapter_ && opt.use_adapter) {
            typename adapter::PromptAdapter<T>::Run run(*adapter_, adapter_->guide(image, edges), opt.mode, opt.seed);
            r.decoded = decoder_.decode(enc.feature, enc.dense_prompt, tokens, &run);
            r.intermediates = run.outputs();
        } else {
            r.decoded = decoder_.decode(enc.feature, enc.dense_prompt, tokens);
        }
        return r;
    }

    ForwardResult<T> forward(const diff::Tensor<T>& image, const diff::Tensor<T>& coarse_mask, const Prompts& prompts,
                             const ForwardOptions& opt) const {
        diff::Tensor<T> edges;
        if (adapter_ && opt.use_adapter) edges = adapter::image_gradient(image, cfg_.adapter.edges);
        return decode(encode(image, coarse_mask), image, edges, prompts, opt);
    }

    /// Copies every non-adapter parameter by name from another model's store
    /// (typically a baseline trained without the adapter).
    template <class U>
    void load_backbone(const diff::ParamStore<U>& src) {
        for (auto& e : store_.entries()) {
            if (e.group == diff::ParamGroup::Adapter) continue;
            const auto* s = src.find(e.name);
            if (!s || s->tensor.shape() != e.tensor.shape()) {
                throw CompatibilityError("baseline parameter " + e.name + " is missing or has a different shape");
            }
            auto out = e.tensor.mutable_data();
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(s->tensor.data()[i]);
        }
    }

    /// Sets requires_grad per group; frozen groups get no gradient and no tape.
    void set_trainable(bool backbone, bool upsampler, bool adapter_group) {
        for (auto& e : store_.entries()) {
            bool on = e.group == diff::ParamGroup::Backbone    ? backbone
                      : e.group == diff::ParamGroup::Upsampler ? upsampler
                                                               : adapter_group;
            e.tensor.set_requires_grad(on);
        }
    }

private:
    ModelConfig cfg_;
    diff::ParamStore<T> store_;
    sam::ImageEncoder<T> image_encoder_;
    sam::MaskEncoder<T> mask_encoder_;
    sam::PromptEncoder<T> prompt_encoder_;
    sam::MaskDecoder<T> decoder_;
    std::optional<adapter::PromptAdapter<T>> adapter_;
};

}  // namespace pasam
