#pragma once

// The CLI subcommands as library calls: gen-data, train, eval, ablate, visualize.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pasam/harness/checkpoint.hpp"
#include "pasam/harness/dataset_io.hpp"
#include "pasam/harness/manifest.hpp"

namespace pasam::harness {

inline const char* kLogHeader = "epoch,split,miou,mbiou,loss";

inline std::string log_row(const training::EpochLog& l) {
    return std::to_string(l.epoch) + "," + l.split + "," + format_double(l.miou) + "," + format_double(l.mbiou) + "," +
           format_double(l.loss);
}

// ---- gen-data

struct GenDataOptions {
    std::size_t n = 100;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t resolution = 128;
};

inline void gen_data(const GenDataOptions& o, std::ostream& log) {
    training::GeometryConfig g;
    g.resolution = o.resolution;
    try {
        g.validate();
    } catch (const ConfigError& e) {
        throw UsageError(std::string("--resolution: ") + e.what());
    }
    if (o.n < 1) throw UsageError("--n must be >= 1");
    auto m = new_manifest("gen-data");
    write_dataset(o.out, o.n, g, o.seed);
    m.set("n", std::to_string(o.n));
    m.set("n_val", std::to_string(validation_count(o.n)));
    m.set("seed", std::to_string(o.seed));
    m.set("resolution", std::to_string(o.resolution));
    m.set("out", fs::absolute(o.out).string());
    m.set("finished", utc_timestamp());
    write_manifest((fs::path(o.out) / "manifest.txt").string(), m);
    log << "wrote " << o.n << " samples (" << validation_count(o.n) << " val) to " << o.out << "\n";
}

// ---- shared loading

struct Splits {
    std::vector<training::Sample> train, val;
};

inline std::vector<training::Sample> read_optional_split(const fs::path& dir, std::size_t radius) {
    if (!fs::is_directory(dir) || list_samples(dir).empty()) return {};
    return read_split(dir, radius);
}

inline Splits load_splits(const std::string& data, const RunConfig& cfg) {
    if (!fs::is_directory(data)) throw IoError("no such dataset directory " + data);
    Splits s;
    s.train = read_split(fs::path(data) / "train", cfg.train.uncertain_radius);
    s.val = read_optional_split(fs::path(data) / "val", cfg.train.uncertain_radius);
    for (const auto* split : {&s.train, &s.val})
        for (const auto& smp : *split)
            if (smp.size != cfg.model.sam.image_size) {
                throw CompatibilityError("dataset images are " + std::to_string(smp.size) + " px, model expects " +
                                         std::to_string(cfg.model.sam.image_size));
            }
    return s;
}

// ---- train

struct TrainOptions {
    std::string phase;
    std::string data;
    std::string config;  // optional key=value file
    std::vector<std::string> overrides;
    std::string out;
    std::string baseline;  // checkpoint, phase adapter only
    std::string manifest;  // replay a previous run's manifest
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> default_seed;  // below config files and overrides
};

struct TrainOutcome {
    training::TrainResult result;
    std::string checkpoint, log, manifest;
    std::uint64_t backbone_checksum = 0;
};

inline RunConfig resolve_config(const std::string& config, const std::vector<std::string>& overrides,
                                std::optional<std::uint64_t> seed, RunConfig base = RunConfig{}) {
    RunConfig cfg = std::move(base);
    if (!config.empty()) {
        std::ifstream in(config);
        if (!in) throw IoError("cannot read config " + config);
        std::stringstream ss;
        ss << in.rdbuf();
        parse_config_text(cfg, ss.str(), config);
    }
    for (const auto& kv : overrides) {
        try {
            apply_override(cfg, kv);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("--set ") + e.what());
        }
    }
    if (seed) cfg.train.seed = *seed;
    validate(cfg);
    return cfg;
}

/// Trains one phase from fully resolved inputs and writes checkpoint, log and manifest.
inline TrainOutcome run_training(training::Phase phase, const RunConfig& cfg_in, const Splits& data,
                                 const Model<float>* baseline, const std::string& out_dir, RunManifest manifest,
                                 std::ostream& log) {
    detail::ensure_dir(out_dir);
    RunConfig cfg = cfg_in;
    cfg.model.adapter_enabled = phase == training::Phase::Adapter;
    Model<float> model(cfg.model);
    if (baseline) model.load_backbone(baseline->params());

    TrainOutcome o;
    o.log = (fs::path(out_dir) / "log.csv").string();
    o.checkpoint = (fs::path(out_dir) / "checkpoint.paadapt").string();
    o.manifest = (fs::path(out_dir) / "manifest.txt").string();
    std::ofstream csv(o.log);
    if (!csv) throw IoError("cannot write " + o.log);
    csv << kLogHeader << "\n";
    o.result = training::train(phase, model, data.train, data.val, cfg.train, [&](const training::EpochLog& l) {
        csv << log_row(l) << "\n" << std::flush;
        log << "epoch " << l.epoch << " " << l.split << " miou=" << format_double(l.miou)
            << " mbiou=" << format_double(l.mbiou) << " loss=" << format_double(l.loss) << "\n";
    });
    if (!csv) throw IoError("cannot write " + o.log);
    save_checkpoint(o.checkpoint, cfg, model);
    o.backbone_checksum = backbone_checksum(model.params());
    if (!o.result.dead_parameters.empty()) {
        log << "warning: " << o.result.dead_parameters.size() << " trainable tensors got no gradient in epoch 1, first "
            << o.result.dead_parameters.front() << "\n";
    }

    manifest.set("phase", training::to_string(phase));
    manifest.set("seed", std::to_string(cfg.train.seed));
    manifest.set("out", fs::absolute(out_dir).string());
    manifest.set("checkpoint", fs::absolute(o.checkpoint).string());
    manifest.set("log", fs::absolute(o.log).string());
    manifest.set("steps", std::to_string(o.result.steps));
    manifest.set("backbone_checksum", std::to_string(o.backbone_checksum));
    manifest.set_config(cfg);
    manifest.set("finished", utc_timestamp());
    write_manifest(o.manifest, manifest);
    return o;
}

inline TrainOutcome train_command(TrainOptions o, std::ostream& log) {
    RunConfig base;
    if (o.default_seed) base.train.seed = *o.default_seed;
    auto manifest = new_manifest("train");
    if (!o.manifest.empty()) {
        auto m = read_manifest(o.manifest);
        base = m.config();
        if (o.phase.empty()) o.phase = m.get("phase");
        if (o.data.empty()) o.data = m.get("data");
        if (o.baseline.empty() && m.find("baseline")) o.baseline = m.get("baseline");
        manifest.set("replayed_from", fs::absolute(o.manifest).string());
    }
    if (o.phase.empty()) throw UsageError("--phase is required (baseline|adapter)");
    if (o.data.empty()) throw UsageError("--data is required");
    if (o.out.empty()) throw UsageError("--out is required");
    training::Phase phase;
    try {
        phase = training::parse_phase(o.phase);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (phase == training::Phase::Adapter && o.baseline.empty()) throw UsageError("phase adapter requires --baseline <checkpoint>");
    if (phase == training::Phase::Baseline && !o.baseline.empty()) throw UsageError("--baseline only applies to phase adapter");

    const RunConfig cfg = resolve_config(o.config, o.overrides, o.seed, base);
    std::optional<Checkpoint> baseline;
    if (!o.baseline.empty()) {
        if (!fs::exists(o.baseline)) throw IoError("baseline checkpoint " + o.baseline + " does not exist");
        baseline = load_checkpoint(o.baseline, cfg);
        manifest.set("baseline", fs::absolute(o.baseline).string());
    }
    auto data = load_splits(o.data, cfg);
    manifest.set("data", fs::absolute(o.data).string());
    return run_training(phase, cfg, data, baseline ? baseline->model.get() : nullptr, o.out, manifest, log);
}

// ---- eval

struct EvalOptions {
    std::string checkpoint;
    std::string data;
    std::string predictions;  // optional: masks laid out like the dataset, scored instead of the model
    std::string split = "all";
    std::string out;          // optional CSV path
    std::vector<std::string> overrides;
};

struct EvalRow {
    std::string split;
    std::size_t count = 0;
    double miou = 0, mbiou = 0;
};

inline std::vector<EvalRow> eval_command(const EvalOptions& o, std::ostream& log) {
    if (o.data.empty()) throw UsageError("--data is required");
    if (o.checkpoint.empty() && o.predictions.empty()) throw UsageError("--checkpoint or --predictions is required");
    RunConfig cfg = resolve_config("", o.overrides, std::nullopt);
    std::optional<Checkpoint> ck;
    if (!o.checkpoint.empty()) {
        ck = load_checkpoint(o.checkpoint, cfg);
        cfg = ck->config;
    }
    std::vector<std::string> splits;
    if (o.split == "all") {
        for (const char* s : {"train", "val"})
            if (fs::is_directory(fs::path(o.data) / s) && !list_samples(fs::path(o.data) / s).empty()) splits.push_back(s);
    } else if (o.split == "train" || o.split == "val") {
        splits.push_back(o.split);
    } else {
        throw UsageError("--split must be train, val or all");
    }
    if (splits.empty()) throw InputError("no samples under " + o.data);

    std::vector<EvalRow> rows;
    for (const auto& split : splits) {
        const auto dir = fs::path(o.data) / split;
        EvalRow row{split, 0, 0, 0};
        if (ck) {
            auto samples = read_split(dir, cfg.train.uncertain_radius);
            for (const auto& s : samples)
                if (s.size != cfg.model.sam.image_size) {
                    throw CompatibilityError("sample size " + std::to_string(s.size) + " px does not match checkpoint image_size " +
                                             std::to_string(cfg.model.sam.image_size));
                }
            const auto phase = ck->model->has_adapter() ? training::Phase::Adapter : training::Phase::Baseline;
            auto ev = training::evaluate(*ck->model, samples, cfg.train, phase);
            row = {split, samples.size(), ev.miou, ev.mbiou};
        } else {
            training::MetricAccumulator acc;
            for (const auto& stem : list_samples(dir)) {
                auto gt_img = read_png(stem.string() + "_mask.png", 1);
                const auto pred_path = (fs::path(o.predictions) / split / stem.filename()).string() + "_mask.png";
                auto pred_img = read_png(pred_path, 1);
                if (pred_img.width != gt_img.width || pred_img.height != gt_img.height) {
                    throw CompatibilityError(pred_path + " does not match the ground-truth size");
                }
                auto gt = training::to_binary(detail::mask_tensor(gt_img, stem.string()));
                training::BinaryMask pred(pred_img.pixels.size());
                for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = pred_img.pixels[i] > 127 ? 1 : 0;
                const std::size_t h = gt_img.height, w = gt_img.width;
                acc.add(pred, gt, h, w, cfg.train.metric_radius ? cfg.train.metric_radius : training::default_boundary_radius(h, w));
            }
            row = {split, acc.count, acc.miou(), acc.mbiou()};
        }
        rows.push_back(row);
    }
    std::string table = "split,count,miou,mbiou\n";
    for (const auto& r : rows) table += r.split + "," + std::to_string(r.count) + "," + format_double(r.miou) + "," + format_double(r.mbiou) + "\n";
    log << table;
    if (!o.out.empty()) {
        std::ofstream out(o.out);
        if (!out) throw IoError("cannot write " + o.out);
        out << table;
    }
    return rows;
}

// ---- ablate

inline std::vector<std::string> axis_values(const std::string& axis) {
    if (axis == "crm") return {"guided_gate", "cross_attention"};
    if (axis == "nsample") return {"0", "1", "4", "8"};
    if (axis == "connection") return {"serial", "parallel", "fusion"};
    if (axis == "blocks") return {"second_only", "both"};
    throw UsageError("unknown ablation axis '" + axis + "' (crm|nsample|connection|blocks)");
}

inline std::string axis_key(const std::string& axis) {
    if (axis == "crm") return "crm";
    if (axis == "nsample") return "n_sample";
    if (axis == "connection") return "adapter_connection";
    return "adapter_blocks";
}

struct AblateOptions {
    std::string axis;
    std::string data;
    std::string config;
    std::vector<std::string> overrides;
    std::string baseline;  // optional; trained first when absent
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> default_seed;
};

struct AblationRow {
    std::string value;
    RunConfig config;
    double miou = 0, mbiou = 0;
    std::uint64_t backbone_checksum = 0;
};

inline std::vector<AblationRow> ablate_command(const AblateOptions& o, std::ostream& log) {
    const auto values = axis_values(o.axis);
    if (o.data.empty()) throw UsageError("--data is required");
    if (o.out.empty()) throw UsageError("--out is required");
    RunConfig base;
    if (o.default_seed) base.train.seed = *o.default_seed;
    const RunConfig cfg = resolve_config(o.config, o.overrides, o.seed, base);
    auto data = load_splits(o.data, cfg);
    detail::ensure_dir(o.out);

    std::optional<Checkpoint> baseline;
    std::string baseline_path = o.baseline;
    if (baseline_path.empty()) {
        auto m = new_manifest("train");
        m.set("data", fs::absolute(o.data).string());
        log << "training baseline\n";
        baseline_path = run_training(training::Phase::Baseline, cfg, data, nullptr, (fs::path(o.out) / "baseline").string(), m, log).checkpoint;
    } else if (!fs::exists(baseline_path)) {
        throw IoError("baseline checkpoint " + baseline_path + " does not exist");
    }
    baseline = load_checkpoint(baseline_path, cfg);
    const auto base_sum = backbone_checksum(baseline->model->params());

    std::vector<AblationRow> rows;
    for (const auto& v : values) {
        RunConfig run = cfg;
        set_value(run, axis_key(o.axis), v);
        validate(run);
        auto m = new_manifest("train");
        m.set("data", fs::absolute(o.data).string());
        m.set("baseline", fs::absolute(baseline_path).string());
        log << o.axis << "=" << v << "\n";
        auto outcome = run_training(training::Phase::Adapter, run, data, baseline->model.get(),
                                    (fs::path(o.out) / (o.axis + "_" + v)).string(), m, log);
        const auto& final_row = outcome.result.log.back();
        if (outcome.backbone_checksum != base_sum) {
            throw ContractError("ablation run " + v + " changed the frozen backbone");
        }
        rows.push_back({v, run, final_row.miou, final_row.mbiou, outcome.backbone_checksum});
    }

    const auto csv_path = (fs::path(o.out) / ("ablation_" + o.axis + ".csv")).string();
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write " + csv_path);
    const std::string header = "axis,value,crm,n_sample,connection,blocks,miou,mbiou,baseline_checksum";
    csv << header << "\n";
    log << header << "\n";
    for (const auto& r : rows) {
        const std::string line = o.axis + "," + r.value + "," + get_value(r.config, "crm") + "," + get_value(r.config, "n_sample") +
                                 "," + get_value(r.config, "adapter_connection") + "," + get_value(r.config, "adapter_blocks") +
                                 "," + format_double(r.miou) + "," + format_double(r.mbiou) + "," +
                                 std::to_string(r.backbone_checksum);
        csv << line << "\n";
        log << line << "\n";
    }
    if (!csv) throw IoError("cannot write " + csv_path);
    return rows;
}

// ---- visualize

struct VisualizeOptions {
    std::string checkpoint;
    std::string sample;  // sample stem, e.g. data/val/000080
    std::string out;
};

struct VisualizeReport {
    std::vector<std::string> files;
    std::size_t positive_points = 0, negative_points = 0;
    std::vector<std::size_t> positive_cells, negative_cells;  // decoder-grid indices
    double uncertain_band_fraction = 0;  // share of M_U > 0.5 pixels inside the uncertain-target band
};

namespace detail {

inline Image8 probability_image(const diff::Tensor<float>& m, std::size_t size) {
    auto up = training::to_target_resolution(m, size, size);
    Image8 img{size, size, 1, std::vector<std::uint8_t>(size * size)};
    for (std::size_t i = 0; i < size * size; ++i) {
        img.pixels[i] = std::uint8_t(std::lround(std::clamp(up.data()[i], 0.0f, 1.0f) * 255.0f));
    }
    return img;
}

}  // namespace detail

inline VisualizeReport visualize_command(const VisualizeOptions& o, std::ostream& log) {
    if (o.checkpoint.empty() || o.sample.empty() || o.out.empty()) throw UsageError("--checkpoint, --sample and --out are required");
    auto ck = load_checkpoint(o.checkpoint);
    if (!ck.model->has_adapter()) throw ConfigError("visualize needs an adapter checkpoint");
    auto s = read_sample(o.sample, ck.config.train.uncertain_radius);
    const std::size_t n = s.size;
    if (n != ck.config.model.sam.image_size) {
        throw CompatibilityError("sample size " + std::to_string(n) + " px does not match checkpoint image_size " +
                                 std::to_string(ck.config.model.sam.image_size));
    }
    ForwardOptions fo;
    fo.mode = sampler::SamplerMode::InferDeterministic;
    auto r = ck.model->forward(s.image, s.coarse_mask, s.prompts, fo);
    const auto& a = r.intermediates.back();
    detail::ensure_dir(o.out);
    VisualizeReport rep;
    auto put = [&](const std::string& name, const Image8& img) {
        const auto path = (fs::path(o.out) / name).string();
        write_png(path, img);
        rep.files.push_back(path);
    };
    put("m_gt.png", detail::mask_image(s.gt_mask));
    put("m_pa.png", detail::probability_image(a.masks.composed, n));
    put("m_c.png", detail::probability_image(a.masks.coarse, n));
    auto mu = detail::probability_image(a.masks.uncertain, n);
    put("m_u.png", mu);

    // Reference map: positive-polarity phi0 on the decoder grid, min-max scaled.
    const std::size_t g = ck.config.model.sam.grid(), cell = n / g;
    const auto phi = a.phi0_positive.data();
    const auto [lo, hi] = std::minmax_element(phi.begin(), phi.end());
    Image8 ref{n, n, 1, std::vector<std::uint8_t>(n * n)};
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const float v = phi[(y / cell) * g + x / cell];
            ref.pixels[y * n + x] = std::uint8_t(std::lround(*hi > *lo ? 255.0f * (v - *lo) / (*hi - *lo) : 0.0f));
        }
    put("reference_map.png", ref);

    // Input image with the sampled grid cells marked: positive green, negative red.
    Image8 overlay{n, n, 3, std::vector<std::uint8_t>(3 * n * n)};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n * n; ++i) overlay.pixels[i * 3 + c] = std::uint8_t(std::lround(s.image.data()[c * n * n + i] * 255.0f));
    auto mark = [&](std::size_t idx, std::uint8_t r8, std::uint8_t g8) {
        const long cy = long((idx / g) * cell + cell / 2), cx = long((idx % g) * cell + cell / 2);
        for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
                const long y = cy + dy, x = cx + dx;
                if (y < 0 || x < 0 || y >= long(n) || x >= long(n)) continue;
                auto* p = &overlay.pixels[(std::size_t(y) * n + std::size_t(x)) * 3];
                p[0] = r8, p[1] = g8, p[2] = 0;
            }
    };
    for (auto idx : a.positive_points) mark(idx, 0, 255);
    for (auto idx : a.negative_points) mark(idx, 255, 0);
    put("points.png", overlay);
    rep.positive_points = a.positive_points.size();
    rep.negative_points = a.negative_points.size();
    rep.positive_cells = a.positive_points;
    rep.negative_cells = a.negative_points;

    const auto band = training::boundary_dilate(training::to_binary(s.gt_mask), n, n, ck.config.train.uncertain_radius);
    std::size_t hot = 0, inside = 0;
    for (std::size_t i = 0; i < n * n; ++i)
        if (mu.pixels[i] > 127) {
            ++hot;
            inside += band[i] ? 1 : 0;
        }
    rep.uncertain_band_fraction = hot ? double(inside) / double(hot) : 1.0;
    log << "wrote " << rep.files.size() << " images to " << o.out << "; points " << rep.positive_points << "+"
        << rep.negative_points << "; m_u band fraction " << format_double(rep.uncertain_band_fraction) << "\n";
    return rep;
}

}  // namespace pasam::harness
