#pragma once

// The prompt adapter hosted inside decoder blocks: dense prompt compensation,
// sparse prompt optimization, refine/uncertain tokens, the mask triple, hard
// point mining, and the merge of its outputs back into the decoder streams.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pasam/adapter/crm.hpp"
#include "pasam/adapter/image_gradient.hpp"
#include "pasam/adapter/mask_triple.hpp"
#include "pasam/sam/decoder.hpp"
#include "pasam/sampler/gumbel_topk.hpp"
#include "pasam/seed.hpp"

namespace pasam::adapter {

struct AdapterConfig {
    CrmKind crm = CrmKind::GuidedGate;
    EdgeOperator edges = EdgeOperator::Sobel;
    std::size_t n_sample = 4;  // per polarity
    double temperature = 1.0;
    sampler::StraightThrough straight_through = sampler::StraightThrough::PerStep;

    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("sampler temperature must be positive");
    }
};

template <class T>
struct AdapterOutputs {
    std::size_t block = 0;
    Tensor<T> x_pa;  // [C,h,w]
    SparseTokens<T> t_pa;
    MaskTriple<T> masks;
    Tensor<T> r_pa, u_pa;  // [1,C]
    Tensor<T> phi0_positive, phi0_negative;
    std::vector<std::size_t> positive_points, negative_points;  // flat grid indices
};

/// t_attn = t_in + Attention(q = t_in, k = x_pa, v = x_pa).
template <class T>
Tensor<T> optimize_sparse_prompts(const sam::Attention<T>& attn, const Tensor<T>& t_in, const Tensor<T>& x_pa) {
    if (x_pa.rank() != 3 || t_in.rank() != 2 || t_in.dim(1) != x_pa.dim(0)) {
        throw DimensionError("optimize_sparse_prompts: tokens " + shape_str(t_in.shape()) + " vs x_pa " +
                             shape_str(x_pa.shape()));
    }
    auto rows = diff::channels_to_rows(x_pa);
    return diff::add(t_in, attn(t_in, rows, rows));
}

/// r_pa = MLP_r([mean(mask tokens), refine]); u_pa = MLP_u([mean(mask tokens), uncertain]).
template <class T>
std::pair<Tensor<T>, Tensor<T>> derive_refine_uncertain_tokens(const diff::Mlp<T>& mlp_r, const diff::Mlp<T>& mlp_u,
                                                               const Tensor<T>& mask_tokens,
                                                               const Tensor<T>& static_refine,
                                                               const Tensor<T>& static_uncertain) {
    using namespace diff;
    const std::size_t c = mask_tokens.dim(1);
    if (static_refine.numel() != c || static_uncertain.numel() != c) {
        throw DimensionError("derive_refine_uncertain_tokens: static tokens must have width " + std::to_string(c));
    }
    auto pooled = mean_rows(mask_tokens);
    auto r = mlp_r(concat<T>({pooled, reshape(static_refine, Shape{1, c})}, 1));
    auto u = mlp_u(concat<T>({pooled, reshape(static_uncertain, Shape{1, c})}, 1));
    return {r, u};
}

/// Per-pixel channel dot products of `feature` with each token, squashed by sigmoid.
template <class T>
MaskTriple<T> predict_mask_triple(const Tensor<T>& feature, const Tensor<T>& mask_token, const Tensor<T>& r_pa,
                                  const Tensor<T>& u_pa) {
    using namespace diff;
    if (feature.rank() != 3) throw DimensionError("predict_mask_triple: feature must be [C,h,w]");
    const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
    for (const auto* t : {&mask_token, &r_pa, &u_pa}) {
        if (t->numel() != c) throw DimensionError("predict_mask_triple: token width must be " + std::to_string(c));
    }
    auto rows = channels_to_rows(feature);
    auto project = [&](const Tensor<T>& token) {
        return sigmoid(reshape(matmul(rows, reshape(token, Shape{c, 1})), Shape{h, w}));
    };
    return make_triple(project(mask_token), project(r_pa), project(u_pa));
}

/// t_pa = [iou_pa, r_pa, p_pa, p_sample, b_pa] with role tags.
template <class T>
SparseTokens<T> assemble_pa_tokens(const Tensor<T>& iou_pa, const Tensor<T>& r_pa,
                                   const std::optional<Tensor<T>>& p_pa, const std::optional<Tensor<T>>& p_sample,
                                   const std::optional<Tensor<T>>& b_pa) {
    auto rows = [](const Tensor<T>& t) { return t.rank() == 2 ? t.dim(0) : std::size_t(1); };
    if (rows(iou_pa) != 1) throw ContractError("assemble_pa_tokens: " + std::to_string(rows(iou_pa)) + " rows tagged iou");
    if (rows(r_pa) != 1) throw ContractError("assemble_pa_tokens: " + std::to_string(rows(r_pa)) + " rows tagged refine");
    if (b_pa && rows(*b_pa) != 2) throw ContractError("assemble_pa_tokens: box needs exactly two corner rows");
    const std::size_t c = iou_pa.numel();

    SparseTokens<T> out;
    std::vector<Tensor<T>> parts;
    auto push = [&](const Tensor<T>& t, TokenRole role) {
        if (t.numel() % c != 0) throw DimensionError("assemble_pa_tokens: token width mismatch");
        const std::size_t n = t.numel() / c;
        parts.push_back(diff::reshape(t, Shape{n, c}));
        out.roles.insert(out.roles.end(), n, role);
    };
    push(iou_pa, TokenRole::Iou);
    push(r_pa, TokenRole::StaticRefine);
    if (p_pa) push(*p_pa, TokenRole::Point);
    if (p_sample) push(*p_sample, TokenRole::SampledPoint);
    if (b_pa) push(*b_pa, TokenRole::BoxCorner);
    out.tokens = diff::concat(parts, 0);
    return out;
}

template <class T>
struct PromptAdapter {
    AdapterConfig cfg;
    AdapterConnection connection = AdapterConnection::Parallel;
    std::size_t channels = 0;
    GuideEncoder<T> guide_encoder;
    Crm<T> crm;
    sam::Attention<T> token_attn;
    diff::Mlp<T> mlp_r, mlp_u;
    Tensor<T> label_positive, label_negative;  // [1,C]
    diff::Linear<T> dense_out, token_out;      // parallel
    diff::Linear<T> dense_fuse, token_fuse;    // fusion

    PromptAdapter() = default;
    PromptAdapter(diff::Builder<T> b, const SamConfig& sam_cfg, const AdapterConfig& cfg_)
        : cfg(cfg_), connection(sam_cfg.decoder.adapter_connection), channels(sam_cfg.channels()) {
        cfg.validate();
        const std::size_t c = channels;
        guide_encoder = GuideEncoder<T>(b.scope("guide"), c);
        crm = Crm<T>(b.scope("crm"), c, cfg.crm);
        token_attn = sam::Attention<T>(b.scope("token_attn"), c, 1, false);
        mlp_r = diff::Mlp<T>(b.scope("mlp_r"), 2 * c, 2 * c, c);
        mlp_u = diff::Mlp<T>(b.scope("mlp_u"), 2 * c, 2 * c, c);
        if (cfg.n_sample > 0) {
            label_positive = b.normal("label_positive", {1, c}, 1.0);
            label_negative = b.normal("label_negative", {1, c}, 1.0);
        }
        if (connection == AdapterConnection::Parallel) {
            dense_out = diff::Linear<T>(b.scope("dense_out"), c, c, true);
            token_out = diff::Linear<T>(b.scope("token_out"), c, c, true);
        } else if (connection == AdapterConnection::Fusion) {
            dense_fuse = identity_fuse(b.scope("dense_fuse"), c);
            token_fuse = identity_fuse(b.scope("token_fuse"), c);
        }
    }

    /// Guide features W_g([I, grad I]) for one image; computed once per forward.
    Tensor<T> guide(const Tensor<T>& image, const Tensor<T>& edges) const { return guide_encoder(image, edges); }

    /// Per-forward hook: owns the guide and the sampler settings, collects outputs.
    class Run : public sam::BlockHook<T> {
    public:
        Run(const PromptAdapter& adapter, Tensor<T> guide, sampler::SamplerMode mode, std::uint64_t seed)
            : adapter_(adapter), guide_(std::move(guide)), mode_(mode), seed_(seed) {}

        void apply(std::size_t block, sam::DecoderStreams<T>& s) override {
            outputs_.push_back(adapter_.run_block(block, s, guide_, mode_, seed_));
        }

        const std::vector<AdapterOutputs<T>>& outputs() const { return outputs_; }

    private:
        const PromptAdapter& adapter_;
        Tensor<T> guide_;
        sampler::SamplerMode mode_;
        std::uint64_t seed_;
        std::vector<AdapterOutputs<T>> outputs_;
    };

    AdapterOutputs<T> run_block(std::size_t block, sam::DecoderStreams<T>& s, const Tensor<T>& guide,
                                sampler::SamplerMode mode, std::uint64_t seed) const {
        using namespace diff;
        const std::size_t c = channels;
        auto x = rows_to_channels(s.image, s.h, s.w);
        AdapterOutputs<T> out;
        out.block = block;
        out.x_pa = crm(guide, x);
        auto t_attn = optimize_sparse_prompts(token_attn, s.tokens, out.x_pa);

        auto slots = [&](TokenRole r) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < s.roles.size(); ++i)
                if (s.roles[i] == r) idx.push_back(i);
            return idx;
        };
        const auto iou = slots(TokenRole::Iou), masks = slots(TokenRole::Mask);
        const auto refine = slots(TokenRole::StaticRefine), uncertain = slots(TokenRole::StaticUncertain);
        const auto points = slots(TokenRole::Point), corners = slots(TokenRole::BoxCorner);
        if (iou.size() != 1 || refine.size() != 1 || uncertain.size() != 1 || masks.empty()) {
            throw ContractError("prompt adapter: token stream needs one iou, one refine, one uncertain and >=1 mask token");
        }

        auto [r_pa, u_pa] = derive_refine_uncertain_tokens(mlp_r, mlp_u, gather_rows(t_attn, masks),
                                                           gather_rows(t_attn, refine), gather_rows(t_attn, uncertain));
        out.r_pa = r_pa;
        out.u_pa = u_pa;
        out.masks = predict_mask_triple(out.x_pa, gather_rows(t_attn, {masks.front()}), r_pa, u_pa);

        std::optional<Tensor<T>> p_sample;
        std::vector<std::size_t> sampled_cells;
        out.phi0_positive = sampler::init_guidance(out.masks, sampler::Polarity::Positive);
        out.phi0_negative = sampler::init_guidance(out.masks, sampler::Polarity::Negative);
        if (cfg.n_sample > 0) {
            std::vector<Tensor<T>> sampled;
            for (auto pol : {sampler::Polarity::Positive, sampler::Polarity::Negative}) {
                sampler::SamplerConfig sc;
                sc.n_sample = cfg.n_sample;
                sc.temperature = cfg.temperature;
                sc.polarity = pol;
                sc.mode = mode;
                sc.straight_through = cfg.straight_through;
                const bool pos = pol == sampler::Polarity::Positive;
                sc.rng_seed = mix_seed(seed, block, pos ? 0 : 1);
                auto st = sampler::gumbel_topk(pos ? out.phi0_positive : out.phi0_negative, sc);
                sampled.push_back(sampler::sample_point_tokens(st, out.x_pa, pos ? label_positive : label_negative));
                (pos ? out.positive_points : out.negative_points) = st.selected;
                sampled_cells.insert(sampled_cells.end(), st.selected.begin(), st.selected.end());
            }
            p_sample = concat(sampled, 0);
        }

        std::optional<Tensor<T>> p_pa, b_pa;
        if (!points.empty()) p_pa = gather_rows(t_attn, points);
        if (!corners.empty()) b_pa = gather_rows(t_attn, corners);
        out.t_pa = assemble_pa_tokens(gather_rows(t_attn, iou), r_pa, p_pa, p_sample, b_pa);

        // Rows of t_pa with a counterpart in the stream, in t_pa order.
        std::vector<std::size_t> targets{iou.front(), refine.front()};
        targets.insert(targets.end(), points.begin(), points.end());
        std::vector<std::size_t> source_rows{0, 1};
        for (std::size_t i = 0; i < points.size(); ++i) source_rows.push_back(2 + i);
        const std::size_t box_start = out.t_pa.size() - corners.size();
        for (std::size_t i = 0; i < corners.size(); ++i) {
            targets.push_back(corners[i]);
            source_rows.push_back(box_start + i);
        }
        auto mapped = gather_rows(out.t_pa.tokens, source_rows);
        auto x_pa_rows = channels_to_rows(out.x_pa);

        switch (connection) {
            case AdapterConnection::Parallel:
                s.image = add(s.image, dense_out(x_pa_rows));
                s.tokens = index_put_rows(s.tokens, token_out(mapped), targets, true);
                break;
            case AdapterConnection::Serial:
                s.image = x_pa_rows;
                s.tokens = index_put_rows(s.tokens, mapped, targets, false);
                break;
            case AdapterConnection::Fusion:
                s.image = dense_fuse(concat<T>({s.image, x_pa_rows}, 1));
                s.tokens = index_put_rows(
                    s.tokens, token_fuse(concat<T>({gather_rows(s.tokens, targets), mapped}, 1)), targets, false);
                break;
        }
        if (p_sample) {
            s.tokens = concat<T>({s.tokens, *p_sample}, 0);
            s.query_pe = concat<T>({s.query_pe, sampler::sampled_positional<T>(sampled_cells, s.h, s.w, c)}, 0);
            s.roles.insert(s.roles.end(), sampled_cells.size(), TokenRole::SampledPoint);
        }
        return out;
    }

private:
    // Linear(2C -> C) that starts as "keep the stream": weight [I; 0], zero bias.
    static diff::Linear<T> identity_fuse(diff::Builder<T> b, std::size_t c) {
        diff::Linear<T> l(b, 2 * c, c, true);
        auto w = l.weight.mutable_data();
        for (std::size_t i = 0; i < c; ++i) w[i * c + i] = T(1);
        return l;
    }
};

}  // namespace pasam::adapter
