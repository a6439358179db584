#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sinkflow/errors.hpp"
#include "sinkflow/generator.hpp"
#include "sinkflow/matrix.hpp"
#include "sinkflow/ot.hpp"
#include "sinkflow/rng.hpp"
#include "sinkflow/table.hpp"

namespace sinkflow::detect {

struct ScoreConfig {
    std::size_t latent_restarts = 4;
    std::size_t latent_steps = 100;
    double latent_lr = 0.05;
    std::size_t score_batch = 256;       // samples scored per batched pass
    double percentile = 95.0;
    std::uint64_t seed = 1;
    std::size_t calibrate_subsample = 500;
    std::string condition_label;         // class condition at scoring time; empty = first class

    void validate() const {
        if (latent_restarts < 1) throw ValidationError("latent_restarts must be >= 1");
        if (latent_steps < 1) throw ValidationError("latent_steps must be >= 1");
        if (!(latent_lr > 0.0)) throw ValidationError("latent_lr must be > 0");
        if (score_batch < 1) throw ValidationError("score_batch must be >= 1");
        if (!(percentile > 0.0 && percentile < 100.0))
            throw ValidationError("percentile must lie in (0, 100)");
        if (calibrate_subsample < 1) throw ValidationError("calibrate_subsample must be >= 1");
    }
};

struct DetectionReport {
    std::vector<double> scores;
    double threshold = 0.0;
    std::vector<std::uint8_t> predicted;  // 1 = anomaly (score > threshold)
    std::string calibration_source;
    double percentile = 95.0;
    double timing_s = 0.0;
};

// Class condition used while scoring; the model trained on benign flows only
// knows its benign class(es).
inline netgen::ConditionVector scoring_condition(const netgen::GeneratorModel& model,
                                                 const std::string& label_value) {
    if (model.condition_dim == 0) return netgen::ConditionVector::of(0, 0);
    if (label_value.empty() || model.class_names.empty())
        return netgen::ConditionVector::of(0, model.condition_dim);
    for (std::size_t i = 0; i < model.class_names.size(); ++i)
        if (model.class_names[i] == label_value)
            return netgen::ConditionVector::of(i, model.condition_dim);
    throw ValidationError("model was not trained on class '" + label_value + "'");
}

namespace detail {

// Batched latent search: for every row x of targets, descend on z to
// minimize the singleton-vs-singleton divergence between x and G(z, c).
// For singletons the debiased divergence reduces exactly to the squared
// distance |x - G(z, c)|^2 (the 1x1 coupling is forced and both self terms
// vanish), so the inner loop uses that form directly; the gradient pulled
// back through the generator is 2 (G(z, c) - x).
//
// Per-sample RNG streams are derived from (seed, row index, restart), so
// scores do not depend on batching or evaluation order, and the result with
// R restarts is a min over a superset of the draws used for R' < R.
inline std::vector<double> score_matrix(const netgen::GeneratorModel& model, const Matrix& targets,
                                        const netgen::ConditionVector& c, const ScoreConfig& cfg,
                                        std::uint64_t first_row_index) {
    const std::size_t n = targets.rows();
    const std::size_t d_out = model.output_dim();
    if (targets.cols() != d_out)
        throw SchemaError("score: sample dimension " + std::to_string(targets.cols()) +
                          " does not match generator output " + std::to_string(d_out));
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    if (n == 0) return best;

    auto eval = [&](const Matrix& out, std::size_t i) {
        const double* y = out.row_ptr(i);
        const double* x = targets.row_ptr(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < d_out; ++k) {
            const double diff = y[k] - x[k];
            acc += diff * diff;
        }
        return acc;
    };

    for (std::size_t restart = 0; restart < cfg.latent_restarts; ++restart) {
        Matrix z(n, model.latent_dim);
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = Rng::derive(cfg.seed, first_row_index + i, restart);
            double* row = z.row_ptr(i);
            for (std::size_t k = 0; k < model.latent_dim; ++k) row[k] = rng.next_normal();
        }
        for (std::size_t step = 0; step < cfg.latent_steps; ++step) {
            const auto fp = netgen::detail::forward(model, z, c);
            const Matrix& out = fp.activations.back();
            Matrix upstream(n, d_out);
            for (std::size_t i = 0; i < n; ++i) {
                best[i] = std::min(best[i], eval(out, i));
                const double* y = out.row_ptr(i);
                const double* x = targets.row_ptr(i);
                double* u = upstream.row_ptr(i);
                for (std::size_t k = 0; k < d_out; ++k) u[k] = 2.0 * (y[k] - x[k]);
            }
            const auto grads = netgen::detail::backward_pass(model, fp, upstream);
            for (std::size_t i = 0; i < n; ++i) {
                double* zrow = z.row_ptr(i);
                const double* g = grads.input.row_ptr(i);
                for (std::size_t k = 0; k < model.latent_dim; ++k)
                    zrow[k] -= cfg.latent_lr * g[k];
            }
        }
        const auto fp = netgen::detail::forward(model, z, c);
        for (std::size_t i = 0; i < n; ++i) best[i] = std::min(best[i], eval(fp.activations.back(), i));
    }
    return best;
}

inline Matrix table_features(const tab::FlowTable& t, const netgen::GeneratorModel& model) {
    const Matrix features = t.feature_matrix();
    if (features.cols() != model.output_dim())
        throw SchemaError("table has " + std::to_string(features.cols()) +
                          " features but the model generates " + std::to_string(model.output_dim()));
    return features;
}

}  // namespace detail

// Anomaly score of a single preprocessed sample: the minimum divergence
// between x and its closest generated approximation over seeded restarts.
inline double score(const netgen::GeneratorModel& model, const std::vector<double>& x,
                    const netgen::ConditionVector& c, const ScoreConfig& cfg,
                    std::uint64_t row_index = 0) {
    cfg.validate();
    model.validate();
    Matrix targets(1, x.size());
    for (std::size_t k = 0; k < x.size(); ++k) targets(0, k) = x[k];
    return detail::score_matrix(model, targets, c, cfg, row_index)[0];
}

inline std::vector<double> score_table(const netgen::GeneratorModel& model, const tab::FlowTable& t,
                                       const ScoreConfig& cfg) {
    cfg.validate();
    model.validate();
    const Matrix features = detail::table_features(t, model);
    const netgen::ConditionVector c = scoring_condition(model, cfg.condition_label);
    std::vector<double> scores;
    scores.reserve(features.rows());
    for (std::size_t start = 0; start < features.rows(); start += cfg.score_batch) {
        const std::size_t count = std::min(cfg.score_batch, features.rows() - start);
        Matrix chunk(count, features.cols());
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < features.cols(); ++j) chunk(i, j) = features(start + i, j);
        const auto part = detail::score_matrix(model, chunk, c, cfg, start);
        scores.insert(scores.end(), part.begin(), part.end());
    }
    return scores;
}

// Nearest-rank percentile: the smallest value with at least p percent of the
// sample at or below it.
inline double nearest_rank_percentile(std::vector<double> values, double percentile) {
    if (values.empty()) throw ValidationError("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    std::size_t rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
    if (rank < 1) rank = 1;
    if (rank > values.size()) rank = values.size();
    return values[rank - 1];
}

// Threshold = nearest-rank percentile of benign scores. Tables larger than
// cfg.calibrate_subsample are scored on a seeded subsample of that size.
inline double calibrate(const netgen::GeneratorModel& model, const tab::FlowTable& benign_train,
                        const ScoreConfig& cfg) {
    cfg.validate();
    model.validate();
    benign_train.validate();
    if (benign_train.rows() == 0) throw ValidationError("calibrate: benign table is empty");

    tab::FlowTable sample = benign_train;
    if (benign_train.rows() > cfg.calibrate_subsample) {
        std::vector<std::size_t> idx(benign_train.rows());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng = Rng::derive(cfg.seed, 0x63616c6962ULL);  // calibration subsample stream
        for (std::size_t i = 0; i < cfg.calibrate_subsample; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.next_index(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(cfg.calibrate_subsample);
        std::sort(idx.begin(), idx.end());
        sample = benign_train.select_rows(idx);
    }
    return nearest_rank_percentile(score_table(model, sample, cfg), cfg.percentile);
}

// Batch scoring against a calibrated threshold; predicted[i] is anomaly
// exactly when scores[i] > threshold.
inline DetectionReport classify(const netgen::GeneratorModel& model, const tab::FlowTable& t,
                                double threshold, const ScoreConfig& cfg) {
    cfg.validate();
    model.validate();
    const auto t0 = std::chrono::steady_clock::now();
    DetectionReport report;
    report.threshold = threshold;
    report.percentile = cfg.percentile;
    if (t.rows() > 0) {
        report.scores = score_table(model, t, cfg);
        report.predicted.reserve(report.scores.size());
        for (double s : report.scores) report.predicted.push_back(s > threshold ? 1 : 0);
    }
    report.timing_s =
        std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - t0)
            .count();
    return report;
}

}  // namespace sinkflow::detect
