#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sinkflow/errors.hpp"
#include "sinkflow/matrix.hpp"
#include "sinkflow/rng.hpp"
#include "sinkflow/table.hpp"

namespace sinkflow::aug {

constexpr double kStddevFloor = 1e-6;

// One-dimensional Gaussian mixture fitted to a continuous column.
struct ColumnModes {
    std::string column;
    std::vector<double> means;    // component centers
    std::vector<double> stddevs;  // floored at kStddevFloor
    std::vector<double> weights;  // sum to 1

    std::size_t k() const { return means.size(); }
};

// Mode-specific normalization model: per continuous column a mixture chosen
// by BIC, plus one-hot maps for any categorical columns so raw tables can be
// encoded too. The label column is never encoded.
struct ModeModel {
    std::vector<ColumnModes> columns;  // continuous columns, table order
    std::vector<std::pair<std::string, std::vector<std::string>>> categorical_maps;
    std::string label_column;

    std::size_t encoded_dim() const {
        std::size_t d = 0;
        for (const auto& c : columns) d += 1 + c.k();  // alpha + mode one-hot
        for (const auto& [name, values] : categorical_maps) d += values.size();
        return d;
    }

    // encoded feature names: col#alpha, col#mode<k>..., then cat=value blocks
    std::vector<std::string> encoded_names() const {
        std::vector<std::string> names;
        for (const auto& c : columns) {
            names.push_back(c.column + "#alpha");
            for (std::size_t k = 0; k < c.k(); ++k)
                names.push_back(c.column + "#mode" + std::to_string(k));
        }
        for (const auto& [name, values] : categorical_maps)
            for (const auto& v : values) names.push_back(name + "=" + v);
        return names;
    }
};

namespace detail {

inline double log_normal_pdf(double x, double mean, double stddev) {
    const double z = (x - mean) / stddev;
    return -0.5 * z * z - std::log(stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
}

struct EmFit {
    ColumnModes modes;
    double log_likelihood = 0.0;
};

// EM for a K-component 1-D mixture, seeded k-means++-style init.
inline EmFit fit_em(const std::vector<double>& values, std::size_t k, Rng& rng) {
    const std::size_t n = values.size();
    EmFit fit;
    fit.modes.means.resize(k);
    fit.modes.stddevs.resize(k);
    fit.modes.weights.assign(k, 1.0 / static_cast<double>(k));

    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double base_std = std::max(std::sqrt(var), kStddevFloor);

    // k-means++ style seeding on the data points
    fit.modes.means[0] = values[rng.next_index(n)];
    for (std::size_t c = 1; c < k; ++c) {
        std::vector<double> d2(n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t p = 0; p < c; ++p)
                best = std::min(best, (values[i] - fit.modes.means[p]) * (values[i] - fit.modes.means[p]));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            fit.modes.means[c] = values[rng.next_index(n)];
            continue;
        }
        double target = rng.next_double() * total;
        std::size_t pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            target -= d2[i];
            if (target <= 0.0) { pick = i; break; }
        }
        fit.modes.means[c] = values[pick];
    }
    for (std::size_t c = 0; c < k; ++c) fit.modes.stddevs[c] = base_std / static_cast<double>(k);

    std::vector<double> resp(n * k);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
        // E step
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double lp = std::log(std::max(fit.modes.weights[c], 1e-300)) +
                                  log_normal_pdf(values[i], fit.modes.means[c], fit.modes.stddevs[c]);
                resp[i * k + c] = lp;
                mx = std::max(mx, lp);
            }
            double sum = 0.0;
            for (std::size_t c = 0; c < k; ++c) sum += std::exp(resp[i * k + c] - mx);
            const double lse = mx + std::log(sum);
            ll += lse;
            for (std::size_t c = 0; c < k; ++c) resp[i * k + c] = std::exp(resp[i * k + c] - lse);
        }
        // M step
        for (std::size_t c = 0; c < k; ++c) {
            double rsum = 0.0, msum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                rsum += resp[i * k + c];
                msum += resp[i * k + c] * values[i];
            }
            const double w = rsum / static_cast<double>(n);
            const double mu = rsum > 0.0 ? msum / rsum : fit.modes.means[c];
            double vsum = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                vsum += resp[i * k + c] * (values[i] - mu) * (values[i] - mu);
            fit.modes.weights[c] = std::max(w, 1e-12);
            fit.modes.means[c] = mu;
            fit.modes.stddevs[c] = std::max(rsum > 0.0 ? std::sqrt(vsum / rsum) : base_std, kStddevFloor);
        }
        double wsum = 0.0;
        for (double w : fit.modes.weights) wsum += w;
        for (double& w : fit.modes.weights) w /= wsum;

        fit.log_likelihood = ll;
        if (ll - prev_ll < 1e-8 * std::abs(ll) + 1e-12 && iter > 0) break;
        prev_ll = ll;
    }
    return fit;
}

}  // namespace detail

// Per-column Gaussian mixtures with the component count chosen by BIC up to
// k_max; columns with fewer distinct values get K reduced automatically.
inline ModeModel fit_modes(const tab::FlowTable& t, std::size_t k_max, std::uint64_t seed) {
    t.validate();
    if (k_max < 1) throw ValidationError("fit_modes: k_max must be >= 1");
    ModeModel model;
    model.label_column = t.label_column().name;

    std::size_t col_index = 0;
    bool any_continuous = false;
    for (const auto& c : t.columns) {
        if (c.kind == tab::ColumnKind::categorical) {
            std::set<std::string> values(c.cats.begin(), c.cats.end());
            model.categorical_maps.emplace_back(c.name,
                                                std::vector<std::string>(values.begin(), values.end()));
            continue;
        }
        if (c.kind != tab::ColumnKind::continuous) continue;
        any_continuous = true;

        std::vector<double> values;
        values.reserve(c.nums.size());
        for (double v : c.nums)
            if (!std::isnan(v)) values.push_back(v);
        if (values.empty()) throw ValidationError("fit_modes: column " + c.name + " has no values");

        std::set<double> distinct(values.begin(), values.end());
        const std::size_t k_cap = std::min(k_max, distinct.size());

        double best_bic = std::numeric_limits<double>::infinity();
        ColumnModes best;
        for (std::size_t k = 1; k <= k_cap; ++k) {
            Rng rng = Rng::derive(seed, 0x6d6f646573ULL, (col_index << 8) | k);
            const auto fit = detail::fit_em(values, k, rng);
            const double params = static_cast<double>(3 * k - 1);
            const double bic = -2.0 * fit.log_likelihood +
                               params * std::log(static_cast<double>(values.size()));
            if (bic < best_bic) {
                best_bic = bic;
                best = fit.modes;
            }
        }
        best.column = c.name;
        // deterministic order: sort components by mean
        std::vector<std::size_t> order(best.k());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return best.means[a] < best.means[b]; });
        ColumnModes sorted;
        sorted.column = best.column;
        for (std::size_t i : order) {
            sorted.means.push_back(best.means[i]);
            sorted.stddevs.push_back(best.stddevs[i]);
            sorted.weights.push_back(best.weights[i]);
        }
        model.columns.push_back(std::move(sorted));
        ++col_index;
    }
    if (!any_continuous) throw ValidationError("fit_modes: table has no continuous columns");
    return model;
}

struct EncodedValue {
    double alpha = 0.0;     // (x - mean_k) / (4 stddev_k), clipped to [-1, 1]
    std::size_t mode = 0;   // argmax-responsibility component
    bool clipped = false;
};

struct EncodedRow {
    std::vector<EncodedValue> continuous;   // per continuous column
    std::vector<std::size_t> categorical;   // value index per categorical column
};

inline std::size_t argmax_responsibility(const ColumnModes& modes, double x) {
    std::size_t best = 0;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < modes.k(); ++c) {
        const double lp = std::log(std::max(modes.weights[c], 1e-300)) +
                          detail::log_normal_pdf(x, modes.means[c], modes.stddevs[c]);
        if (lp > best_lp) {
            best_lp = lp;
            best = c;
        }
    }
    return best;
}

// Mode-specific normalization of one row of continuous values (and optional
// categorical values). Deterministic: the mode is the argmax responsibility.
inline EncodedRow encode(const std::vector<double>& cont_values,
                         const std::vector<std::string>& cat_values, const ModeModel& model) {
    if (cont_values.size() != model.columns.size())
        throw SchemaError("encode: expected " + std::to_string(model.columns.size()) +
                          " continuous values");
    if (cat_values.size() != model.categorical_maps.size())
        throw SchemaError("encode: expected " + std::to_string(model.categorical_maps.size()) +
                          " categorical values");
    EncodedRow row;
    row.continuous.reserve(cont_values.size());
    for (std::size_t i = 0; i < cont_values.size(); ++i) {
        const double x = cont_values[i];
        if (!std::isfinite(x)) throw NumericError("encode: non-finite value in " + model.columns[i].column);
        EncodedValue ev;
        ev.mode = argmax_responsibility(model.columns[i], x);
        ev.alpha = (x - model.columns[i].means[ev.mode]) / (4.0 * model.columns[i].stddevs[ev.mode]);
        if (ev.alpha > 1.0) { ev.alpha = 1.0; ev.clipped = true; }
        if (ev.alpha < -1.0) { ev.alpha = -1.0; ev.clipped = true; }
        row.continuous.push_back(ev);
    }
    for (std::size_t i = 0; i < cat_values.size(); ++i) {
        const auto& values = model.categorical_maps[i].second;
        const auto it = std::find(values.begin(), values.end(), cat_values[i]);
        if (it == values.end())
            throw ValidationError("encode: unseen category '" + cat_values[i] + "' in column " +
                                  model.categorical_maps[i].first);
        row.categorical.push_back(static_cast<std::size_t>(it - values.begin()));
    }
    return row;
}

// Inverse of encode on the continuous part: x = mean_k + 4 stddev_k * alpha.
inline std::vector<double> decode(const EncodedRow& row, const ModeModel& model) {
    if (row.continuous.size() != model.columns.size())
        throw SchemaError("decode: encoded row does not match mode model");
    std::vector<double> out(row.continuous.size());
    for (std::size_t i = 0; i < row.continuous.size(); ++i) {
        const auto& modes = model.columns[i];
        if (row.continuous[i].mode >= modes.k()) throw SchemaError("decode: mode index out of range");
        out[i] = modes.means[row.continuous[i].mode] +
                 4.0 * modes.stddevs[row.continuous[i].mode] * row.continuous[i].alpha;
    }
    return out;
}

struct EncodeTableResult {
    tab::FlowTable table;     // encoded feature columns + label column
    std::size_t clip_events = 0;
};

// Whole-table encode: every continuous column becomes an alpha column plus a
// one-hot mode block, categorical columns become one-hot blocks, the label
// passes through. Ready for generator training.
inline EncodeTableResult encode_table(const tab::FlowTable& t, const ModeModel& model) {
    t.validate();
    EncodeTableResult res;
    std::vector<const tab::Column*> cont, cats;
    for (const auto& c : model.columns) {
        const tab::Column* col = t.find(c.column);
        if (!col || col->kind != tab::ColumnKind::continuous)
            throw SchemaError("encode_table: missing continuous column " + c.column);
        cont.push_back(col);
    }
    for (const auto& [name, values] : model.categorical_maps) {
        const tab::Column* col = t.find(name);
        if (!col || col->kind != tab::ColumnKind::categorical)
            throw SchemaError("encode_table: missing categorical column " + name);
        cats.push_back(col);
    }

    const std::size_t n = t.rows();
    const auto names = model.encoded_names();
    for (const auto& name : names) {
        tab::Column col;
        col.name = name;
        col.kind = tab::ColumnKind::continuous;
        col.nums.assign(n, 0.0);
        res.table.columns.push_back(std::move(col));
    }

    std::vector<double> cont_values(cont.size());
    std::vector<std::string> cat_values(cats.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < cont.size(); ++j) cont_values[j] = cont[j]->nums[i];
        for (std::size_t j = 0; j < cats.size(); ++j) cat_values[j] = cats[j]->cats[i];
        const EncodedRow row = encode(cont_values, cat_values, model);
        std::size_t off = 0;
        for (std::size_t j = 0; j < row.continuous.size(); ++j) {
            res.table.columns[off].nums[i] = row.continuous[j].alpha;
            res.table.columns[off + 1 + row.continuous[j].mode].nums[i] = 1.0;
            if (row.continuous[j].clipped) ++res.clip_events;
            off += 1 + model.columns[j].k();
        }
        for (std::size_t j = 0; j < row.categorical.size(); ++j) {
            res.table.columns[off + row.categorical[j]].nums[i] = 1.0;
            off += model.categorical_maps[j].second.size();
        }
    }

    const tab::Column& label = t.label_column();
    tab::Column lab;
    lab.name = label.name;
    lab.kind = tab::ColumnKind::label;
    lab.cats = label.cats;
    res.table.columns.push_back(std::move(lab));
    res.table.provenance = t.provenance;
    res.table.validate();
    return res;
}

// Decode a generated matrix in encoded space (rows x encoded_dim) back to
// original feature space. Alphas are clipped to [-1, 1]; mode and category
// choices are the argmax of their blocks.
inline std::pair<std::vector<std::vector<double>>, std::vector<std::vector<std::string>>>
decode_matrix(const Matrix& generated, const ModeModel& model) {
    if (generated.cols() != model.encoded_dim())
        throw SchemaError("decode_matrix: column count does not match encoded dim");
    std::vector<std::vector<double>> cont_rows;
    std::vector<std::vector<std::string>> cat_rows;
    for (std::size_t i = 0; i < generated.rows(); ++i) {
        const double* row = generated.row_ptr(i);
        EncodedRow enc;
        std::size_t off = 0;
        for (const auto& modes : model.columns) {
            EncodedValue ev;
            ev.alpha = std::clamp(row[off], -1.0, 1.0);
            std::size_t best = 0;
            for (std::size_t k = 1; k < modes.k(); ++k)
                if (row[off + 1 + k] > row[off + 1 + best]) best = k;
            ev.mode = best;
            enc.continuous.push_back(ev);
            off += 1 + modes.k();
        }
        std::vector<std::string> cats;
        for (const auto& [name, values] : model.categorical_maps) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < values.size(); ++k)
                if (row[off + k] > row[off + best]) best = k;
            cats.push_back(values[best]);
            off += values.size();
        }
        cont_rows.push_back(decode(enc, model));
        cat_rows.push_back(std::move(cats));
    }
    return {std::move(cont_rows), std::move(cat_rows)};
}

}  // namespace sinkflow::aug
