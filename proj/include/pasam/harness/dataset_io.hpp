#pragma once

// On-disk dataset: <root>/<split>/<id>_image.png (RGB), <id>_mask.png and
// <id>_coarse.png (gray, 0/255) plus <id>.json with the sparse prompts.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasam/harness/png_io.hpp"
#include "pasam/training/dataset.hpp"

namespace pasam::harness {

namespace fs = std::filesystem;

inline std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", index);
    return buf;
}

namespace detail {

inline Image8 mask_image(const diff::Tensor<float>& m) {
    Image8 img{m.dim(2), m.dim(1), 1, {}};
    img.pixels.resize(m.numel());
    for (std::size_t i = 0; i < m.numel(); ++i) img.pixels[i] = m.data()[i] > 0.5f ? 255 : 0;
    return img;
}

inline diff::Tensor<float> mask_tensor(const Image8& img, const std::string& path) {
    std::vector<float> v(img.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (img.pixels[i] != 0 && img.pixels[i] != 255) throw InputError(path + ": mask values must be 0 or 255");
        v[i] = img.pixels[i] ? 1.0f : 0.0f;
    }
    return diff::Tensor<float>(Shape{1, img.height, img.width}, std::move(v));
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

}  // namespace detail

/// Writes one sample under `dir` with file stem `id`.
inline void write_sample(const fs::path& dir, const std::string& id, const training::Sample& s) {
    const std::size_t n = s.size;
    Image8 rgb{n, n, 3, std::vector<std::uint8_t>(3 * n * n)};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n * n; ++i) {
            rgb.pixels[i * 3 + c] = std::uint8_t(std::lround(s.image.data()[c * n * n + i] * 255.0f));
        }
    write_png((dir / (id + "_image.png")).string(), rgb);
    write_png((dir / (id + "_mask.png")).string(), detail::mask_image(s.gt_mask));
    write_png((dir / (id + "_coarse.png")).string(), detail::mask_image(s.coarse_mask));

    nlohmann::json j;
    j["points"] = nlohmann::json::array();
    for (const auto& p : s.prompts.points) j["points"].push_back({p.x, p.y, p.positive ? 1 : 0});
    if (s.prompts.box) j["box"] = {s.prompts.box->x0, s.prompts.box->y0, s.prompts.box->x1, s.prompts.box->y1};
    j["coarse_op"] = s.coarse_op == training::CoarseOp::Erode ? "erode" : "dilate";
    j["coarse_radius"] = s.coarse_radius;
    const auto path = dir / (id + ".json");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(1) << "\n";
    if (!out) throw IoError("cannot write " + path.string());
}

/// Loads the sample with stem `stem` (path without the _image.png suffix).
inline training::Sample read_sample(const fs::path& stem, std::size_t uncertain_radius = 3) {
    const std::string base = stem.string();
    auto rgb = read_png(base + "_image.png", 3);
    if (rgb.width != rgb.height) throw InputError(base + "_image.png is not square");
    const std::size_t n = rgb.width;
    training::Sample s;
    s.size = n;
    std::vector<float> px(3 * n * n);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n * n; ++i) px[c * n * n + i] = float(rgb.pixels[i * 3 + c]) / 255.0f;
    s.image = diff::Tensor<float>(Shape{3, n, n}, std::move(px));
    for (const auto& [suffix, target] : {std::pair{"_mask.png", &s.gt_mask}, std::pair{"_coarse.png", &s.coarse_mask}}) {
        const auto path = base + suffix;
        auto img = read_png(path, 1);
        if (img.width != n || img.height != n) throw InputError(path + " does not match the image size");
        *target = detail::mask_tensor(img, path);
    }
    s.gt_uncertain = training::from_binary(
        training::boundary_dilate(training::to_binary(s.gt_mask), n, n, uncertain_radius), n, n);

    const auto jpath = base + ".json";
    std::ifstream in(jpath);
    if (!in) throw IoError("cannot read " + jpath);
    try {
        auto j = nlohmann::json::parse(in);
        for (const auto& p : j.at("points")) {
            s.prompts.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<int>() != 0});
        }
        if (j.contains("box")) {
            const auto& b = j["box"];
            s.prompts.box = BoxPrompt{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        }
        if (j.contains("coarse_op")) s.coarse_op = j["coarse_op"] == "erode" ? training::CoarseOp::Erode : training::CoarseOp::Dilate;
        if (j.contains("coarse_radius")) s.coarse_radius = j["coarse_radius"].get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(jpath + ": " + e.what());
    }
    return s;
}

/// Sample stems in a split directory, sorted.
inline std::vector<fs::path> list_samples(const fs::path& split_dir) {
    if (!fs::is_directory(split_dir)) throw IoError("no such dataset split " + split_dir.string());
    std::vector<fs::path> stems;
    const std::string suffix = "_image.png";
    for (const auto& e : fs::directory_iterator(split_dir)) {
        const auto name = e.path().filename().string();
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            stems.push_back(split_dir / name.substr(0, name.size() - suffix.size()));
        }
    }
    std::sort(stems.begin(), stems.end());
    return stems;
}

inline std::vector<training::Sample> read_split(const fs::path& split_dir, std::size_t uncertain_radius = 3) {
    std::vector<training::Sample> out;
    for (const auto& stem : list_samples(split_dir)) out.push_back(read_sample(stem, uncertain_radius));
    if (out.empty()) throw InputError("dataset split " + split_dir.string() + " holds no samples");
    for (const auto& s : out)
        if (s.size != out.front().size) throw InputError("dataset split " + split_dir.string() + " mixes image sizes");
    return out;
}

/// The last floor(n/5) samples form the held-out split.
inline std::size_t validation_count(std::size_t n) { return n / 5; }

/// Generates and writes train/ and val/ under `root`.
inline void write_dataset(const fs::path& root, std::size_t n, const training::GeometryConfig& g, std::uint64_t seed) {
    if (n < 1) throw ParameterError("dataset size must be >= 1");
    g.validate();
    const std::size_t n_val = validation_count(n);
    for (const char* split : {"train", "val"}) detail::ensure_dir(root / split);
    for (std::size_t i = 0; i < n; ++i) {
        const bool val = i >= n - n_val;
        write_sample(root / (val ? "val" : "train"), sample_id(i), training::generate_sample(g, seed, i));
    }
}

}  // namespace pasam::harness
