#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sinkflow/errors.hpp"
#include "sinkflow/rng.hpp"
#include "sinkflow/table.hpp"

namespace sinkflow::tab {

struct DroppedFeature {
    std::string feature;
    std::string partner;  // higher-importance feature it duplicated; empty for zero variance
    double abs_rho = 0.0;
    std::string reason;  // "correlated" | "zero variance"
};

// Everything needed to transform unseen data exactly like the training set.
struct PreprocessPlan {
    std::uint32_t version = 1;
    std::string label_column;
    std::vector<std::string> kept_features;  // continuous, original column order
    std::map<std::string, double> importance_scores;
    std::vector<DroppedFeature> dropped;
    std::map<std::string, std::pair<double, double>> minmax_bounds;  // per kept feature
    std::vector<std::string> zero_range;  // kept features whose train range collapsed
    std::vector<std::pair<std::string, std::vector<std::string>>> onehot_maps;  // column -> sorted values
    std::vector<std::string> label_classes;  // sorted
};

struct SplitSpec {
    double train_fraction = 0.7;
    bool stratify_by_label = true;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw ValidationError("train_fraction must lie in (0, 1)");
    }
};

namespace detail {

struct LabeledData {
    Matrix features;             // rows complete in every ranked feature
    std::vector<int> classes;    // label codes
    std::vector<std::string> feature_names;
    std::size_t n_classes = 0;
    std::size_t dropped_rows = 0;
};

// Assemble the ranking design matrix: continuous features as-is, categorical
// features as integer codes over their sorted values.
inline LabeledData ranking_data(const FlowTable& t) {
    t.validate();
    LabeledData data;
    const Column& label = t.label_column();

    std::map<std::string, int> class_codes;
    for (const auto& v : label.cats) class_codes.emplace(v, 0);
    int next = 0;
    for (auto& [k, v] : class_codes) v = next++;
    data.n_classes = class_codes.size();

    std::vector<std::vector<double>> cols;
    for (const auto& c : t.columns) {
        if (c.kind == ColumnKind::label) continue;
        if (c.kind == ColumnKind::continuous) {
            cols.push_back(c.nums);
            data.feature_names.push_back(c.name);
        } else {
            std::map<std::string, double> codes;
            for (const auto& v : c.cats) codes.emplace(v, 0.0);
            double code = 0.0;
            for (auto& [k, v] : codes) v = code++;
            std::vector<double> enc(c.cats.size());
            for (std::size_t i = 0; i < c.cats.size(); ++i) enc[i] = codes[c.cats[i]];
            cols.push_back(std::move(enc));
            data.feature_names.push_back(c.name);
        }
    }

    std::vector<std::size_t> keep_rows;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        bool ok = true;
        for (const auto& col : cols)
            if (std::isnan(col[i])) { ok = false; break; }
        if (ok) keep_rows.push_back(i);
    }
    data.dropped_rows = t.rows() - keep_rows.size();

    data.features = Matrix(keep_rows.size(), cols.size());
    data.classes.resize(keep_rows.size());
    for (std::size_t r = 0; r < keep_rows.size(); ++r) {
        for (std::size_t j = 0; j < cols.size(); ++j) data.features(r, j) = cols[j][keep_rows[r]];
        data.classes[r] = class_codes[label.cats[keep_rows[r]]];
    }
    return data;
}

inline double gini(const std::vector<std::size_t>& counts, std::size_t total) {
    if (total == 0) return 0.0;
    double acc = 1.0;
    for (std::size_t c : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        acc -= p * p;
    }
    return acc;
}

struct TreeContext {
    const Matrix& x;
    const std::vector<int>& y;
    std::size_t n_classes;
    std::size_t max_depth;
    std::size_t features_per_split;
    std::size_t n_root;
    std::vector<double>& importance;
    Rng& rng;
};

inline void grow_tree(TreeContext& ctx, std::vector<std::size_t>& rows, std::size_t depth) {
    const std::size_t n = rows.size();
    if (n < 2 || depth >= ctx.max_depth) return;

    std::vector<std::size_t> counts(ctx.n_classes, 0);
    for (std::size_t r : rows) ++counts[static_cast<std::size_t>(ctx.y[r])];
    const double node_impurity = gini(counts, n);
    if (node_impurity == 0.0) return;

    // sample candidate features without replacement
    std::vector<std::size_t> candidates(ctx.x.cols());
    for (std::size_t j = 0; j < candidates.size(); ++j) candidates[j] = j;
    for (std::size_t j = 0; j < ctx.features_per_split && j < candidates.size(); ++j) {
        const std::size_t k = j + static_cast<std::size_t>(ctx.rng.next_index(candidates.size() - j));
        std::swap(candidates[j], candidates[k]);
    }
    candidates.resize(std::min(ctx.features_per_split, candidates.size()));

    double best_gain = 0.0;
    std::size_t best_feature = 0;
    double best_threshold = 0.0;
    std::vector<std::pair<double, std::size_t>> order(n);
    for (std::size_t f : candidates) {
        for (std::size_t i = 0; i < n; ++i) order[i] = {ctx.x(rows[i], f), rows[i]};
        std::sort(order.begin(), order.end());
        std::vector<std::size_t> left(ctx.n_classes, 0);
        std::vector<std::size_t> right = counts;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const std::size_t cls = static_cast<std::size_t>(ctx.y[order[i].second]);
            ++left[cls];
            --right[cls];
            if (order[i].first == order[i + 1].first) continue;
            const std::size_t nl = i + 1, nr = n - nl;
            const double gain = node_impurity -
                                (static_cast<double>(nl) / n) * gini(left, nl) -
                                (static_cast<double>(nr) / n) * gini(right, nr);
            if (gain > best_gain + 1e-15) {
                best_gain = gain;
                best_feature = f;
                best_threshold = 0.5 * (order[i].first + order[i + 1].first);
            }
        }
    }
    if (best_gain <= 0.0) return;

    ctx.importance[best_feature] +=
        (static_cast<double>(n) / static_cast<double>(ctx.n_root)) * best_gain;

    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows)
        (ctx.x(r, best_feature) <= best_threshold ? left_rows : right_rows).push_back(r);
    grow_tree(ctx, left_rows, depth + 1);
    grow_tree(ctx, right_rows, depth + 1);
}

}  // namespace detail

struct ForestConfig {
    std::size_t n_trees = 50;
    std::size_t max_depth = 8;
    std::uint64_t seed = 1;
};

// Mean decrease in Gini impurity over a seeded ensemble of depth-limited
// trees on bootstrap samples, sqrt(d) candidate features per split.
// Categorical features participate as integer codes over sorted values.
inline std::map<std::string, double> rank_features(const FlowTable& t, const ForestConfig& cfg) {
    if (cfg.n_trees < 1) throw ValidationError("rank_features needs at least one tree");
    const auto data = detail::ranking_data(t);
    if (data.n_classes < 2) throw ValidationError("rank_features needs at least two label classes");
    if (data.features.rows() < 2) throw ValidationError("rank_features needs at least two complete rows");

    const std::size_t n = data.features.rows();
    const std::size_t d = data.features.cols();
    const std::size_t per_split = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d)))));

    std::vector<double> total(d, 0.0);
    for (std::size_t tree = 0; tree < cfg.n_trees; ++tree) {
        Rng rng = Rng::derive(cfg.seed, 0x74726565ULL, tree);  // per-tree stream
        std::vector<std::size_t> rows(n);
        for (auto& r : rows) r = static_cast<std::size_t>(rng.next_index(n));
        std::vector<double> importance(d, 0.0);
        detail::TreeContext ctx{data.features, data.classes, data.n_classes, cfg.max_depth,
                                per_split,     n,            importance,     rng};
        detail::grow_tree(ctx, rows, 0);
        for (std::size_t j = 0; j < d; ++j) total[j] += importance[j];
    }

    std::map<std::string, double> scores;
    for (std::size_t j = 0; j < d; ++j)
        scores[data.feature_names[j]] = total[j] / static_cast<double>(cfg.n_trees);
    return scores;
}

namespace detail {

// Pearson correlation over rows complete in both columns; NaN when either
// side has zero variance.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::isnan(a[i]) || std::isnan(b[i])) continue;
        ++n;
        sx += a[i];
        sy += b[i];
        sxx += a[i] * a[i];
        syy += b[i] * b[i];
        sxy += a[i] * b[i];
    }
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const double nn = static_cast<double>(n);
    const double cov = sxy / nn - (sx / nn) * (sy / nn);
    const double vx = sxx / nn - (sx / nn) * (sx / nn);
    const double vy = syy / nn - (sy / nn) * (sy / nn);
    if (vx <= 0.0 || vy <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return cov / std::sqrt(vx * vy);
}

}  // namespace detail

struct PruneResult {
    std::vector<std::string> kept;  // continuous features, original column order
    std::vector<DroppedFeature> dropped;
};

// For every continuous pair with |rho| above rho_max, drop the
// lower-importance member. Zero-variance columns are dropped outright.
inline PruneResult prune_correlated(const FlowTable& t, const std::map<std::string, double>& scores,
                                    double rho_max) {
    std::vector<const Column*> cont;
    for (const auto& c : t.columns)
        if (c.kind == ColumnKind::continuous) cont.push_back(&c);
    for (const auto* c : cont)
        if (!scores.count(c->name))
            throw SchemaError("prune_correlated: no importance score for feature " + c->name);

    PruneResult res;
    std::set<std::string> removed;

    std::vector<const Column*> usable;
    for (const auto* c : cont) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (double v : c->nums) {
            if (std::isnan(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (!(hi > lo)) {
            res.dropped.push_back({c->name, "", 0.0, "zero variance"});
            removed.insert(c->name);
        } else {
            usable.push_back(c);
        }
    }

    // visit by importance (descending, name-ascending ties) so the kept
    // member of every correlated pair is the higher-ranked one
    std::vector<const Column*> by_rank = usable;
    std::sort(by_rank.begin(), by_rank.end(), [&](const Column* a, const Column* b) {
        const double ia = scores.at(a->name), ib = scores.at(b->name);
        if (ia != ib) return ia > ib;
        return a->name < b->name;
    });
    for (std::size_t i = 0; i < by_rank.size(); ++i) {
        if (removed.count(by_rank[i]->name)) continue;
        for (std::size_t j = i + 1; j < by_rank.size(); ++j) {
            if (removed.count(by_rank[j]->name)) continue;
            const double rho = detail::pearson(by_rank[i]->nums, by_rank[j]->nums);
            if (!std::isnan(rho) && std::abs(rho) > rho_max) {
                res.dropped.push_back({by_rank[j]->name, by_rank[i]->name, std::abs(rho), "correlated"});
                removed.insert(by_rank[j]->name);
            }
        }
    }

    for (const auto* c : cont)
        if (!removed.count(c->name)) res.kept.push_back(c->name);
    return res;
}

enum class UnseenPolicy { error, zeros };

struct TransformStats {
    std::size_t dropped_missing = 0;   // rows removed for missing kept-feature values
    std::size_t out_of_range = 0;      // scaled values outside [0, 1] (unseen data only)
    std::size_t unseen_categories = 0; // rows hit by the zeros policy
};

struct FitOptions {
    // kept continuous features; empty means keep all
    std::vector<std::string> kept_features;
    std::map<std::string, double> importance_scores;
    std::vector<DroppedFeature> dropped;
};

// Applies a fitted plan: kept features scaled by the plan's train-set
// bounds (no clamping; out-of-range values are counted, not altered),
// categorical columns expanded to one-hot blocks, label passed through.
inline FlowTable transform(const FlowTable& t, const PreprocessPlan& plan,
                           UnseenPolicy policy = UnseenPolicy::error, TransformStats* stats = nullptr) {
    t.validate();
    TransformStats local;
    TransformStats& st = stats ? *stats : local;

    std::vector<const Column*> kept;
    for (const auto& name : plan.kept_features) {
        const Column* c = t.find(name);
        if (!c || c->kind != ColumnKind::continuous)
            throw SchemaError("transform: input table is missing continuous feature " + name);
        kept.push_back(c);
    }
    std::vector<const Column*> cats;
    for (const auto& [name, values] : plan.onehot_maps) {
        const Column* c = t.find(name);
        if (!c || c->kind == ColumnKind::continuous)
            throw SchemaError("transform: input table is missing categorical column " + name);
        cats.push_back(c);
    }
    const Column& label = t.label_column();
    if (label.name != plan.label_column)
        throw SchemaError("transform: label column " + label.name + " does not match plan's " +
                          plan.label_column);

    // rows kept: complete in every kept feature; unseen categories handled per policy
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        bool ok = true;
        for (const auto* c : kept)
            if (std::isnan(c->nums[i])) { ok = false; break; }
        if (!ok) {
            ++st.dropped_missing;
            continue;
        }
        rows.push_back(i);
    }

    FlowTable out;
    out.provenance = t.provenance;
    out.provenance.row_count = rows.size();

    for (std::size_t k = 0; k < kept.size(); ++k) {
        const auto [lo, hi] = plan.minmax_bounds.at(kept[k]->name);
        Column col;
        col.name = kept[k]->name;
        col.kind = ColumnKind::continuous;
        col.nums.reserve(rows.size());
        const double range = hi - lo;
        for (std::size_t i : rows) {
            double v = range > 0.0 ? (kept[k]->nums[i] - lo) / range : 0.0;
            if (v < 0.0 || v > 1.0) ++st.out_of_range;
            col.nums.push_back(v);
        }
        out.columns.push_back(std::move(col));
    }

    for (std::size_t k = 0; k < cats.size(); ++k) {
        const auto& [name, values] = plan.onehot_maps[k];
        std::map<std::string, std::size_t> index;
        for (std::size_t v = 0; v < values.size(); ++v) index[values[v]] = v;
        std::vector<Column> block(values.size());
        for (std::size_t v = 0; v < values.size(); ++v) {
            block[v].name = name + "=" + values[v];
            block[v].kind = ColumnKind::continuous;
            block[v].nums.assign(rows.size(), 0.0);
        }
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto it = index.find(cats[k]->cats[rows[r]]);
            if (it == index.end()) {
                if (policy == UnseenPolicy::error)
                    throw ValidationError("transform: unseen category '" + cats[k]->cats[rows[r]] +
                                          "' in column " + name);
                ++st.unseen_categories;  // all-zeros block row
            } else {
                block[it->second].nums[r] = 1.0;
            }
        }
        for (auto& b : block) out.columns.push_back(std::move(b));
    }

    Column lab;
    lab.name = label.name;
    lab.kind = ColumnKind::label;
    lab.cats.reserve(rows.size());
    for (std::size_t i : rows) lab.cats.push_back(label.cats[i]);
    out.columns.push_back(std::move(lab));
    out.validate();
    return out;
}

// Fits min-max bounds, one-hot maps and label classes on t (the training
// set) and returns the transformed table together with the completed plan.
inline std::pair<FlowTable, PreprocessPlan> fit_transform(const FlowTable& t,
                                                          const FitOptions& opts = {}) {
    t.validate();
    PreprocessPlan plan;
    plan.label_column = t.label_column().name;
    plan.importance_scores = opts.importance_scores;
    plan.dropped = opts.dropped;

    std::set<std::string> dropped_names;
    for (const auto& d : opts.dropped) dropped_names.insert(d.feature);

    for (const auto& c : t.columns) {
        if (c.kind != ColumnKind::continuous) continue;
        if (!opts.kept_features.empty()) {
            if (std::find(opts.kept_features.begin(), opts.kept_features.end(), c.name) ==
                opts.kept_features.end())
                continue;
        } else if (dropped_names.count(c.name)) {
            continue;
        }
        plan.kept_features.push_back(c.name);
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (double v : c.nums) {
            if (std::isnan(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (!(lo <= hi)) { lo = 0.0; hi = 0.0; }  // all-missing column
        if (!(hi > lo)) plan.zero_range.push_back(c.name);
        plan.minmax_bounds[c.name] = {lo, hi};
    }

    for (const auto& c : t.columns) {
        if (c.kind != ColumnKind::categorical) continue;
        std::set<std::string> values(c.cats.begin(), c.cats.end());
        plan.onehot_maps.emplace_back(c.name, std::vector<std::string>(values.begin(), values.end()));
    }

    std::set<std::string> classes(t.label_column().cats.begin(), t.label_column().cats.end());
    plan.label_classes.assign(classes.begin(), classes.end());

    FlowTable out = transform(t, plan, UnseenPolicy::error, nullptr);
    return {std::move(out), std::move(plan)};
}

// Seeded 70/30-style split, stratified by label when requested. Disjoint and
// exhaustive by construction.
inline std::pair<FlowTable, FlowTable> split(const FlowTable& t, const SplitSpec& spec) {
    spec.validate();
    t.validate();
    if (t.rows() == 0) throw ValidationError("split: table is empty");

    Rng rng = Rng::derive(spec.seed, 0x73706c6974ULL);  // split stream
    std::vector<std::size_t> train_idx, test_idx;

    if (spec.stratify_by_label) {
        const Column& label = t.label_column();
        std::map<std::string, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < t.rows(); ++i) by_class[label.cats[i]].push_back(i);
        for (auto& [name, rows] : by_class) {
            if (rows.size() < 2)
                throw ValidationError("split: class '" + name + "' has fewer than 2 rows");
            rng.shuffle(rows);
            const std::size_t n_train = static_cast<std::size_t>(
                std::floor(static_cast<double>(rows.size()) * spec.train_fraction + 0.5));
            for (std::size_t i = 0; i < rows.size(); ++i)
                (i < n_train ? train_idx : test_idx).push_back(rows[i]);
        }
    } else {
        std::vector<std::size_t> rows(t.rows());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        rng.shuffle(rows);
        const std::size_t n_train = static_cast<std::size_t>(
            std::floor(static_cast<double>(rows.size()) * spec.train_fraction + 0.5));
        for (std::size_t i = 0; i < rows.size(); ++i)
            (i < n_train ? train_idx : test_idx).push_back(rows[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {t.select_rows(train_idx), t.select_rows(test_idx)};
}

// --- plan (de)serialization: versioned JSON document -----------------------

inline nlohmann::json plan_to_json(const PreprocessPlan& plan) {
    nlohmann::json j;
    j["version"] = plan.version;
    j["label_column"] = plan.label_column;
    j["kept_features"] = plan.kept_features;
    j["importance_scores"] = plan.importance_scores;
    nlohmann::json dropped = nlohmann::json::array();
    for (const auto& d : plan.dropped)
        dropped.push_back({{"feature", d.feature},
                           {"partner", d.partner},
                           {"abs_rho", d.abs_rho},
                           {"reason", d.reason}});
    j["dropped"] = dropped;
    nlohmann::json bounds;
    for (const auto& [name, b] : plan.minmax_bounds) bounds[name] = {b.first, b.second};
    j["minmax_bounds"] = bounds;
    j["zero_range"] = plan.zero_range;
    nlohmann::json onehot = nlohmann::json::array();  // array keeps column order
    for (const auto& [name, values] : plan.onehot_maps)
        onehot.push_back({{"column", name}, {"values", values}});
    j["onehot_maps"] = onehot;
    j["label_classes"] = plan.label_classes;
    return j;
}

inline PreprocessPlan plan_from_json(const nlohmann::json& j) {
    PreprocessPlan plan;
    plan.version = j.at("version").get<std::uint32_t>();
    if (plan.version != 1)
        throw IoError("unsupported plan version " + std::to_string(plan.version) + " (expected 1)");
    plan.label_column = j.at("label_column").get<std::string>();
    plan.kept_features = j.at("kept_features").get<std::vector<std::string>>();
    plan.importance_scores = j.at("importance_scores").get<std::map<std::string, double>>();
    for (const auto& d : j.at("dropped"))
        plan.dropped.push_back({d.at("feature").get<std::string>(), d.at("partner").get<std::string>(),
                                d.at("abs_rho").get<double>(), d.at("reason").get<std::string>()});
    for (const auto& [name, b] : j.at("minmax_bounds").items())
        plan.minmax_bounds[name] = {b.at(0).get<double>(), b.at(1).get<double>()};
    plan.zero_range = j.at("zero_range").get<std::vector<std::string>>();
    for (const auto& entry : j.at("onehot_maps"))
        plan.onehot_maps.emplace_back(entry.at("column").get<std::string>(),
                                      entry.at("values").get<std::vector<std::string>>());
    plan.label_classes = j.at("label_classes").get<std::vector<std::string>>();
    return plan;
}

inline void save_plan(const PreprocessPlan& plan, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write plan file: " + path);
    out << plan_to_json(plan).dump(2) << '\n';
    if (!out.good()) throw IoError("failed while writing plan file: " + path);
}

inline PreprocessPlan load_plan(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open plan file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("plan file " + path + " is not valid JSON: " + e.what());
    }
    return plan_from_json(j);
}

}  // namespace sinkflow::tab
