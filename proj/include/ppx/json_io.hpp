#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppx/classifier.hpp"
#include "ppx/degrade.hpp"
#include "ppx/dncnn.hpp"
#include "ppx/errors.hpp"
#include "ppx/eval.hpp"
#include "ppx/geometry.hpp"

namespace ppx {

using json = nlohmann::json;

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("no such file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw CorruptStream("malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("short write: " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

/// Unknown keys are config errors: silent typos in experiment configs are
/// the main reproducibility hazard.
inline void require_known_keys(const json& j, const std::vector<std::string>& allowed,
                               const std::string& context) {
    if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw ConfigError(context + ": unknown key \"" + item.key() + "\"");
    }
}

namespace detail {

template <class T>
void maybe_get(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("bad value for key \"") + key + "\"");
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Configs

inline json to_json(const DegradationConfig& c) {
    return json{{"keystone_strength", c.keystone_strength},
                {"gamma", c.gamma},
                {"gain", c.gain},
                {"offset", c.offset},
                {"ambient_gradient_amp", c.ambient_gradient_amp},
                {"glare_count", c.glare_count},
                {"glare_radius", c.glare_radius},
                {"glare_intensity", c.glare_intensity},
                {"blur_sigma", c.blur_sigma},
                {"noise_sigma", c.noise_sigma},
                {"moire_amp", c.moire_amp},
                {"moire_period", c.moire_period},
                {"seed", c.seed}};
}

inline DegradationConfig degradation_config_from_json(const json& j,
                                                      DegradationConfig base = DegradationConfig{}) {
    require_known_keys(j,
                       {"keystone_strength", "gamma", "gain", "offset", "ambient_gradient_amp",
                        "glare_count", "glare_radius", "glare_intensity", "blur_sigma", "noise_sigma",
                        "moire_amp", "moire_period", "seed"},
                       "degradation config");
    detail::maybe_get(j, "keystone_strength", base.keystone_strength);
    detail::maybe_get(j, "gamma", base.gamma);
    detail::maybe_get(j, "gain", base.gain);
    detail::maybe_get(j, "offset", base.offset);
    detail::maybe_get(j, "ambient_gradient_amp", base.ambient_gradient_amp);
    detail::maybe_get(j, "glare_count", base.glare_count);
    detail::maybe_get(j, "glare_radius", base.glare_radius);
    detail::maybe_get(j, "glare_intensity", base.glare_intensity);
    detail::maybe_get(j, "blur_sigma", base.blur_sigma);
    detail::maybe_get(j, "noise_sigma", base.noise_sigma);
    detail::maybe_get(j, "moire_amp", base.moire_amp);
    detail::maybe_get(j, "moire_period", base.moire_period);
    detail::maybe_get(j, "seed", base.seed);
    base.validate();
    return base;
}

inline json to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate}, {"beta1", c.beta1},
                {"beta2", c.beta2},                 {"epsilon", c.epsilon},
                {"epochs", c.epochs},               {"batch_size", c.batch_size},
                {"patch_size", c.patch_size},       {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = TrainConfig{}) {
    require_known_keys(
        j, {"learning_rate", "beta1", "beta2", "epsilon", "epochs", "batch_size", "patch_size", "seed"},
        "train config");
    detail::maybe_get(j, "learning_rate", base.learning_rate);
    detail::maybe_get(j, "beta1", base.beta1);
    detail::maybe_get(j, "beta2", base.beta2);
    detail::maybe_get(j, "epsilon", base.epsilon);
    detail::maybe_get(j, "epochs", base.epochs);
    detail::maybe_get(j, "batch_size", base.batch_size);
    detail::maybe_get(j, "patch_size", base.patch_size);
    detail::maybe_get(j, "seed", base.seed);
    base.validate();
    return base;
}

inline json to_json(const AugmentConfig& c) {
    return json{{"hflip_prob", c.hflip_prob},
                {"max_rotation", c.max_rotation},
                {"brightness_jitter", c.brightness_jitter},
                {"seed", c.seed}};
}

inline AugmentConfig augment_config_from_json(const json& j, AugmentConfig base = AugmentConfig{}) {
    require_known_keys(j, {"hflip_prob", "max_rotation", "brightness_jitter", "seed"},
                       "augment config");
    detail::maybe_get(j, "hflip_prob", base.hflip_prob);
    detail::maybe_get(j, "max_rotation", base.max_rotation);
    detail::maybe_get(j, "brightness_jitter", base.brightness_jitter);
    detail::maybe_get(j, "seed", base.seed);
    base.validate();
    return base;
}

// ---------------------------------------------------------------------------
// Corner files: a JSON array of four [x, y] pairs in tl, tr, br, bl order.

inline json to_json(const CornerQuad& q) {
    return json::array({{q.tl.x, q.tl.y}, {q.tr.x, q.tr.y}, {q.br.x, q.br.y}, {q.bl.x, q.bl.y}});
}

inline CornerQuad corners_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4)
        throw ConfigError("corner file must be a JSON array of four [x,y] pairs");
    PixelPoint pts[4];
    for (int i = 0; i < 4; ++i) {
        const json& p = j[std::size_t(i)];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            throw ConfigError("corner file must be a JSON array of four [x,y] pairs");
        pts[i] = {p[0].get<double>(), p[1].get<double>()};
    }
    CornerQuad q{pts[0], pts[1], pts[2], pts[3]};
    validate_quad(q);
    return q;
}

// ---------------------------------------------------------------------------
// Paired-corpus manifest

struct ManifestPair {
    std::string clean;
    std::string photo;
    CornerQuad corners;
    std::uint64_t seed = 0;
};

struct CorpusManifest {
    DegradationConfig config;
    std::vector<ManifestPair> pairs;
};

inline json to_json(const CorpusManifest& m) {
    json pairs = json::array();
    for (const ManifestPair& p : m.pairs)
        pairs.push_back(json{{"clean", p.clean},
                             {"photo", p.photo},
                             {"corners", to_json(p.corners)},
                             {"seed", p.seed}});
    return json{{"config", to_json(m.config)}, {"pairs", pairs}};
}

inline CorpusManifest corpus_manifest_from_json(const json& j) {
    require_known_keys(j, {"config", "pairs", "mean_prior_psnr_db"}, "corpus manifest");
    CorpusManifest m;
    if (j.contains("config")) m.config = degradation_config_from_json(j.at("config"));
    if (!j.contains("pairs") || !j.at("pairs").is_array())
        throw ConfigError("corpus manifest: missing \"pairs\" array");
    for (const json& p : j.at("pairs")) {
        require_known_keys(p, {"clean", "photo", "corners", "seed"}, "corpus manifest pair");
        ManifestPair mp;
        try {
            mp.clean = p.at("clean").get<std::string>();
            mp.photo = p.at("photo").get<std::string>();
            mp.seed = p.at("seed").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("corpus manifest pair: ") + e.what());
        }
        mp.corners = corners_from_json(p.at("corners"));
        m.pairs.push_back(std::move(mp));
    }
    return m;
}

/// Load manifest pairs back into memory; paths are taken relative to the
/// manifest location.
inline std::vector<DegradedPair> load_corpus(const std::filesystem::path& manifest_path) {
    const json j = read_json_file(manifest_path);
    const CorpusManifest m = corpus_manifest_from_json(j);
    const std::filesystem::path dir = manifest_path.parent_path();
    std::vector<DegradedPair> pairs;
    pairs.reserve(m.pairs.size());
    for (const ManifestPair& mp : m.pairs) {
        DegradedPair p;
        p.clean = to_grayscale(load_image(dir / mp.clean));
        p.photo = to_grayscale(load_image(dir / mp.photo));
        p.true_corners = mp.corners;
        p.config_used = m.config;
        p.config_used.seed = mp.seed;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Labeled-dataset manifest: {"items": [{"path", "label", "id"?}, ...]}

inline LabeledDataset load_dataset_manifest(const std::filesystem::path& manifest_path) {
    const json j = read_json_file(manifest_path);
    require_known_keys(j, {"items"}, "dataset manifest");
    if (!j.contains("items") || !j.at("items").is_array())
        throw ConfigError("dataset manifest: missing \"items\" array");
    const std::filesystem::path dir = manifest_path.parent_path();
    LabeledDataset ds;
    for (const json& it : j.at("items")) {
        require_known_keys(it, {"path", "label", "id"}, "dataset manifest item");
        std::string path;
        int label = -1;
        try {
            path = it.at("path").get<std::string>();
            label = it.at("label").get<int>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("dataset manifest item: ") + e.what());
        }
        if (label != 0 && label != 1) throw ConfigError("dataset labels must be 0 or 1");
        ds.images.push_back(to_grayscale(load_image(dir / path)));
        ds.labels.push_back(label);
        ds.ids.push_back(it.contains("id") ? it.at("id").get<std::string>() : path);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// EvalReport files

namespace detail {

// Non-finite doubles have no JSON representation; encode them as strings.
inline json num_or_tag(double v) {
    if (std::isnan(v)) return json("nan");
    if (std::isinf(v)) return json(v > 0 ? "inf" : "-inf");
    return json(v);
}

inline double num_from_tag(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw ConfigError("bad numeric value in report");
}

inline std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

} // namespace detail

inline json to_json(const EvalReport& r) {
    json quality = json::array();
    for (const QualityRow& q : r.quality)
        quality.push_back(json{{"split", q.split},
                               {"count", q.count},
                               {"psnr_prior_avg", detail::num_or_tag(q.psnr_prior_avg)},
                               {"psnr_prior_std", detail::num_or_tag(q.psnr_prior_std)},
                               {"psnr_after_avg", detail::num_or_tag(q.psnr_after_avg)},
                               {"psnr_after_std", detail::num_or_tag(q.psnr_after_std)},
                               {"ssim_prior_avg", detail::num_or_tag(q.ssim_prior_avg)},
                               {"ssim_prior_std", detail::num_or_tag(q.ssim_prior_std)},
                               {"ssim_after_avg", detail::num_or_tag(q.ssim_after_avg)},
                               {"ssim_after_std", detail::num_or_tag(q.ssim_after_std)},
                               {"psnr_prior_excluded", q.psnr_prior_excluded},
                               {"psnr_after_excluded", q.psnr_after_excluded}});
    json cells = json::array();
    for (const AurocCell& c : r.cells)
        cells.push_back(json{{"split", c.split},
                             {"repeat", c.repeat},
                             {"auroc_clean", c.auroc_clean},
                             {"auroc_photo", c.auroc_photo},
                             {"auroc_restored", c.auroc_restored}});
    return json{{"std_convention", "population"},
                {"quality_table", quality},
                {"auroc_table", cells},
                {"summary",
                 json{{"auroc_clean_mean", r.summary.auroc_clean_mean},
                      {"auroc_photo_mean", r.summary.auroc_photo_mean},
                      {"auroc_restored_mean", r.summary.auroc_restored_mean}}}};
}

inline EvalReport report_from_json(const json& j) {
    require_known_keys(j, {"std_convention", "quality_table", "auroc_table", "summary"}, "report");
    EvalReport r;
    for (const json& q : j.at("quality_table")) {
        QualityRow row;
        row.split = q.at("split").get<std::string>();
        row.count = q.at("count").get<int>();
        row.psnr_prior_avg = detail::num_from_tag(q.at("psnr_prior_avg"));
        row.psnr_prior_std = detail::num_from_tag(q.at("psnr_prior_std"));
        row.psnr_after_avg = detail::num_from_tag(q.at("psnr_after_avg"));
        row.psnr_after_std = detail::num_from_tag(q.at("psnr_after_std"));
        row.ssim_prior_avg = detail::num_from_tag(q.at("ssim_prior_avg"));
        row.ssim_prior_std = detail::num_from_tag(q.at("ssim_prior_std"));
        row.ssim_after_avg = detail::num_from_tag(q.at("ssim_after_avg"));
        row.ssim_after_std = detail::num_from_tag(q.at("ssim_after_std"));
        row.psnr_prior_excluded = q.at("psnr_prior_excluded").get<int>();
        row.psnr_after_excluded = q.at("psnr_after_excluded").get<int>();
        r.quality.push_back(std::move(row));
    }
    for (const json& c : j.at("auroc_table")) {
        AurocCell cell;
        cell.split = c.at("split").get<int>();
        cell.repeat = c.at("repeat").get<int>();
        cell.auroc_clean = c.at("auroc_clean").get<double>();
        cell.auroc_photo = c.at("auroc_photo").get<double>();
        cell.auroc_restored = c.at("auroc_restored").get<double>();
        r.cells.push_back(cell);
    }
    r.summary.auroc_clean_mean = j.at("summary").at("auroc_clean_mean").get<double>();
    r.summary.auroc_photo_mean = j.at("summary").at("auroc_photo_mean").get<double>();
    r.summary.auroc_restored_mean = j.at("summary").at("auroc_restored_mean").get<double>();
    return r;
}

/// Writes report.json, quality_table.csv and auroc_table.csv. Byte-stable
/// for identical reports.
inline void emit_report(const EvalReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_json_file(dir / "report.json", to_json(r));

    std::string q = "split,count,metric,avg_prior,std_prior,avg_after,std_after\n";
    for (const QualityRow& row : r.quality) {
        q += row.split + "," + std::to_string(row.count) + ",PSNR," +
             detail::fmt_num(row.psnr_prior_avg) + "," + detail::fmt_num(row.psnr_prior_std) + "," +
             detail::fmt_num(row.psnr_after_avg) + "," + detail::fmt_num(row.psnr_after_std) + "\n";
        q += row.split + "," + std::to_string(row.count) + ",SSIM," +
             detail::fmt_num(row.ssim_prior_avg) + "," + detail::fmt_num(row.ssim_prior_std) + "," +
             detail::fmt_num(row.ssim_after_avg) + "," + detail::fmt_num(row.ssim_after_std) + "\n";
    }
    write_text_file(dir / "quality_table.csv", q);

    std::string a = "split,repeat,auroc_clean,auroc_photo,auroc_restored\n";
    for (const AurocCell& c : r.cells)
        a += std::to_string(c.split) + "," + std::to_string(c.repeat) + "," +
             detail::fmt_num(c.auroc_clean) + "," + detail::fmt_num(c.auroc_photo) + "," +
             detail::fmt_num(c.auroc_restored) + "\n";
    write_text_file(dir / "auroc_table.csv", a);
}

} // namespace ppx
