#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "ppx/classifier.hpp"
#include "ppx/degrade.hpp"
#include "ppx/dncnn.hpp"
#include "ppx/errors.hpp"
#include "ppx/metrics.hpp"

namespace ppx {

/// AUROC as the Mann-Whitney statistic:
/// (#concordant + 0.5 #tied) / (#pos * #neg), equal to trapezoidal ROC
/// area. Computed by rank sums with average ranks for ties.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DimensionMismatch("scores/labels lengths differ");
    if (scores.empty()) throw InvalidArgument("AUROC of an empty set");
    for (int l : labels)
        if (l != 0 && l != 1) throw InvalidArgument("labels must be 0 or 1");
    return detail::rank_auroc(scores, labels);
}

/// One cross-validation split: disjoint train/valid/test index sets that
/// cover the dataset.
struct SplitSpec {
    std::vector<int> train_idx, valid_idx, test_idx;
    std::uint64_t seed = 0;
};

struct CvPlan {
    int n_splits = 10;
    int repeats_per_split = 3;
    std::uint64_t base_seed = 0;

    void validate() const {
        if (n_splits < 2) throw ConfigError("plan needs n_splits >= 2");
        if (repeats_per_split < 1) throw ConfigError("plan needs repeats_per_split >= 1");
    }
};

/// Stratified random 80/10/10 partition per split, seeded by
/// base_seed + split index. Each class contributes at least one item to
/// test and valid.
inline std::vector<SplitSpec> make_cv_splits(int n_items, const CvPlan& plan,
                                             const std::vector<int>& labels) {
    plan.validate();
    if (int(labels.size()) != n_items) throw DimensionMismatch("labels length must equal n_items");
    if (n_items < 10) throw InvalidArgument("dataset too small for stratified 80/10/10 splits");

    std::vector<int> class0, class1;
    for (int i = 0; i < n_items; ++i) (labels[std::size_t(i)] == 0 ? class0 : class1).push_back(i);
    if (class0.empty() || class1.empty()) throw InvalidArgument("both classes must be present");
    if (class0.size() < 3 || class1.size() < 3)
        throw InvalidArgument("each class needs >= 3 items to fill train/valid/test");

    std::vector<SplitSpec> splits;
    for (int s = 0; s < plan.n_splits; ++s) {
        SplitSpec spec;
        spec.seed = plan.base_seed + std::uint64_t(s);
        Rng rng(spec.seed);
        for (const std::vector<int>* cls : {&class0, &class1}) {
            std::vector<int> idx = *cls;
            rng.shuffle(idx);
            const std::size_t n = idx.size();
            const std::size_t n_test = std::max<std::size_t>(1, std::size_t(std::lround(0.1 * double(n))));
            const std::size_t n_valid = std::max<std::size_t>(1, std::size_t(std::lround(0.1 * double(n))));
            if (n_test + n_valid >= n) throw InvalidArgument("class too small for stratified parts");
            spec.test_idx.insert(spec.test_idx.end(), idx.begin(), idx.begin() + n_test);
            spec.valid_idx.insert(spec.valid_idx.end(), idx.begin() + n_test, idx.begin() + n_test + n_valid);
            spec.train_idx.insert(spec.train_idx.end(), idx.begin() + n_test + n_valid, idx.end());
        }
        splits.push_back(std::move(spec));
    }
    return splits;
}

// ---------------------------------------------------------------------------
// Table-shaped quality statistics

/// Per-split quality statistics. Standard deviations use the population
/// (n) divisor. +inf PSNR rows (identical image pairs) are excluded from
/// the PSNR means/stds, with the exclusion counts recorded.
struct QualityRow {
    std::string split;
    int count = 0;
    double psnr_prior_avg = 0, psnr_prior_std = 0;
    double psnr_after_avg = 0, psnr_after_std = 0;
    double ssim_prior_avg = 0, ssim_prior_std = 0;
    double ssim_after_avg = 0, ssim_after_std = 0;
    int psnr_prior_excluded = 0;
    int psnr_after_excluded = 0;
};

namespace detail {

struct MeanStd {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stdev = std::numeric_limits<double>::quiet_NaN();
    int excluded = 0;
};

inline MeanStd finite_mean_std(const std::vector<double>& v) {
    MeanStd out;
    double sum = 0.0;
    std::size_t n = 0;
    for (double x : v) {
        if (std::isfinite(x)) {
            sum += x;
            ++n;
        } else {
            ++out.excluded;
        }
    }
    if (n == 0) return out;
    out.mean = sum / double(n);
    double ss = 0.0;
    for (double x : v)
        if (std::isfinite(x)) {
            const double d = x - out.mean;
            ss += d * d;
        }
    out.stdev = std::sqrt(ss / double(n)); // population divisor
    return out;
}

} // namespace detail

/// prior = metric(clean, rectified photo); after = metric(clean,
/// restore(model, rectified photo)). Pairs whose photo still carries the
/// capture geometry are rectified here first.
inline QualityRow quality_table(const std::vector<DegradedPair>& pairs, const DnCnnModel& model,
                                const std::string& split, int tile = 48) {
    if (pairs.empty()) throw InvalidArgument("quality_table needs at least one pair");
    std::vector<double> psnr_prior, psnr_after, ssim_prior, ssim_after;
    for (const DegradedPair& p : pairs) {
        const ImageBuffer rect = p.photo.same_shape(p.clean)
                                     ? p.photo
                                     : rectify(p.photo, p.true_corners, p.clean.width, p.clean.height);
        const ImageBuffer restored = restore(model, rect, tile);
        psnr_prior.push_back(psnr(p.clean, rect));
        psnr_after.push_back(psnr(p.clean, restored));
        ssim_prior.push_back(mean_ssim(p.clean, rect));
        ssim_after.push_back(mean_ssim(p.clean, restored));
    }
    QualityRow row;
    row.split = split;
    row.count = int(pairs.size());
    const auto pp = detail::finite_mean_std(psnr_prior);
    const auto pa = detail::finite_mean_std(psnr_after);
    const auto sp = detail::finite_mean_std(ssim_prior);
    const auto sa = detail::finite_mean_std(ssim_after);
    row.psnr_prior_avg = pp.mean;
    row.psnr_prior_std = pp.stdev;
    row.psnr_prior_excluded = pp.excluded;
    row.psnr_after_avg = pa.mean;
    row.psnr_after_std = pa.stdev;
    row.psnr_after_excluded = pa.excluded;
    row.ssim_prior_avg = sp.mean;
    row.ssim_prior_std = sp.stdev;
    row.ssim_after_avg = sa.mean;
    row.ssim_after_std = sa.stdev;
    return row;
}

// ---------------------------------------------------------------------------
// End-to-end experiment

struct AurocCell {
    int split = 0;
    int repeat = 0;
    double auroc_clean = 0;    // original images
    double auroc_photo = 0;    // degraded + rectified
    double auroc_restored = 0; // degraded + rectified + restored
};

struct EvalSummary {
    double auroc_clean_mean = 0;
    double auroc_photo_mean = 0;
    double auroc_restored_mean = 0;
};

struct EvalReport {
    std::vector<QualityRow> quality;
    std::vector<AurocCell> cells;
    EvalSummary summary;

    void recompute_summary() {
        summary = {};
        if (cells.empty()) return;
        for (const AurocCell& c : cells) {
            summary.auroc_clean_mean += c.auroc_clean;
            summary.auroc_photo_mean += c.auroc_photo;
            summary.auroc_restored_mean += c.auroc_restored;
        }
        summary.auroc_clean_mean /= double(cells.size());
        summary.auroc_photo_mean /= double(cells.size());
        summary.auroc_restored_mean /= double(cells.size());
    }
};

/// A trained restorer plus the ids of the images it was trained on, used
/// to enforce that evaluation data is disjoint from its training data.
struct RestorerRef {
    const DnCnnModel* model = nullptr;
    std::vector<std::string> sources;
};

struct EndToEndOptions {
    int jobs = 1;             // parallelism over (split, repeat) cells
    int restore_tile = 48;
    int classifier_width = 8;
};

/// The cross-validated three-way comparison: per (split, repeat), train a
/// classifier on clean training images (with augmentation), select the
/// best-validation snapshot, then record test AUROC on the clean images,
/// their degraded+rectified variants, and the restored variants.
/// Degraded/restored variants are precomputed once per image with seed
/// degrade_cfg.seed + image index, so cells are order-independent and the
/// report is reproducible for any jobs count.
inline EvalReport run_end_to_end(const LabeledDataset& dataset, const CvPlan& plan,
                                 const DegradationConfig& degrade_cfg, const RestorerRef& restorer,
                                 const TrainConfig& train_cfg, const AugmentConfig& aug,
                                 const EndToEndOptions& opts = {}) {
    plan.validate();
    dataset.validate();
    if (!restorer.model) throw InvalidArgument("run_end_to_end needs a restorer");
    for (const std::string& id : dataset.ids)
        for (const std::string& src : restorer.sources)
            if (id == src)
                throw ProvenanceError("restorer was trained on evaluation image: " + id);

    const int n = int(dataset.images.size());
    std::vector<ImageBuffer> photo_imgs(n), restored_imgs(n);
    {
        std::atomic<int> next{0};
        const auto worker = [&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                DegradationConfig cfg = degrade_cfg;
                cfg.seed = degrade_cfg.seed + std::uint64_t(i);
                const DegradedPair pair = degrade(dataset.images[std::size_t(i)], cfg);
                photo_imgs[std::size_t(i)] = rectify(pair.photo, pair.true_corners,
                                                     pair.clean.width, pair.clean.height);
                restored_imgs[std::size_t(i)] =
                    restore(*restorer.model, photo_imgs[std::size_t(i)], opts.restore_tile);
            }
        };
        std::vector<std::thread> pool;
        for (int j = 1; j < opts.jobs; ++j) pool.emplace_back(worker);
        worker();
        for (std::thread& th : pool) th.join();
    }

    const std::vector<SplitSpec> splits = make_cv_splits(n, plan, dataset.labels);

    EvalReport report;
    report.cells.resize(std::size_t(plan.n_splits) * plan.repeats_per_split);

    std::atomic<std::size_t> next_cell{0};
    const std::size_t n_cells = report.cells.size();
    const auto cell_worker = [&] {
        for (std::size_t ci = next_cell.fetch_add(1); ci < n_cells; ci = next_cell.fetch_add(1)) {
            const int s = int(ci) / plan.repeats_per_split;
            const int r = int(ci) % plan.repeats_per_split;
            const SplitSpec& spec = splits[std::size_t(s)];

            const auto pick = [&](const std::vector<int>& idx, const std::vector<ImageBuffer>& from) {
                LabeledDataset d;
                for (int i : idx) {
                    d.images.push_back(from[std::size_t(i)]);
                    d.labels.push_back(dataset.labels[std::size_t(i)]);
                    d.ids.push_back(dataset.ids[std::size_t(i)]);
                }
                return d;
            };
            const LabeledDataset train = pick(spec.train_idx, dataset.images);
            const LabeledDataset valid = pick(spec.valid_idx, dataset.images);
            const LabeledDataset test_clean = pick(spec.test_idx, dataset.images);
            const LabeledDataset test_photo = pick(spec.test_idx, photo_imgs);
            const LabeledDataset test_restored = pick(spec.test_idx, restored_imgs);

            TrainConfig cell_cfg = train_cfg;
            cell_cfg.seed = plan.base_seed + std::uint64_t(s) * 1000 + std::uint64_t(r);
            const CompactClassifier model =
                train_classifier(train, valid, cell_cfg, aug, nullptr, opts.classifier_width);

            AurocCell cell;
            cell.split = s;
            cell.repeat = r;
            cell.auroc_clean = auroc(predict_scores(model, test_clean.images), test_clean.labels);
            cell.auroc_photo = auroc(predict_scores(model, test_photo.images), test_photo.labels);
            cell.auroc_restored =
                auroc(predict_scores(model, test_restored.images), test_restored.labels);
            report.cells[ci] = cell;
        }
    };
    std::vector<std::thread> pool;
    for (int j = 1; j < opts.jobs; ++j) pool.emplace_back(cell_worker);
    cell_worker();
    for (std::thread& th : pool) th.join();

    report.recompute_summary();
    return report;
}

} // namespace ppx
