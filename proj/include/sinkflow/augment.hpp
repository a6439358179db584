#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sinkflow/errors.hpp"
#include "sinkflow/generator.hpp"
#include "sinkflow/mixture.hpp"
#include "sinkflow/rng.hpp"
#include "sinkflow/table.hpp"

namespace sinkflow::aug {

// Class conditions drawn with probability proportional to log(1 + count),
// which boosts minority classes relative to their raw frequency.
inline std::vector<std::string> sample_conditions(const tab::FlowTable& t, std::size_t n,
                                                  std::uint64_t seed) {
    t.validate();
    const tab::Column& label = t.label_column();
    std::map<std::string, std::size_t> counts;
    for (const auto& v : label.cats) ++counts[v];
    if (counts.empty()) throw ValidationError("sample_conditions: table has no label values");

    std::vector<std::string> classes;
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& [name, count] : counts) {
        classes.push_back(name);
        total += std::log1p(static_cast<double>(count));
        cumulative.push_back(total);
    }
    if (!(total > 0.0)) throw ValidationError("sample_conditions: all class counts are zero");

    Rng rng = Rng::derive(seed, 0x636f6e64ULL);  // condition stream
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.next_double() * total;
        std::size_t k = 0;
        while (k + 1 < cumulative.size() && u >= cumulative[k]) ++k;
        out.push_back(classes[k]);
    }
    return out;
}

struct AugmentConfig {
    std::map<std::string, std::size_t> target_counts;  // rows to synthesize per class
    bool log_frequency_sampling = true;  // with empty target_counts: balance minorities up to the majority
    std::uint64_t seed = 1;
    std::size_t k_max = 5;
    netgen::TrainConfig train;  // per-class generator settings
};

struct AugmentResult {
    tab::FlowTable table;                 // input schema; original rows then synthetic rows
    std::vector<std::uint8_t> synthetic;  // per output row
    std::size_t clip_events = 0;          // alpha clips during encoding
    std::vector<std::string> warnings;
};

// Minority-class augmentation: per target class, encode that class's rows
// with mode-specific normalization, train a class-conditioned generator on
// the encoded space, sample, decode and append. Classes with fewer than
// 2 * batch_size rows get a reduced batch size (with a warning), not a
// failure. When target_counts is empty and log_frequency_sampling is set,
// every minority class is topped up to the majority count.
inline AugmentResult augment(const tab::FlowTable& t, const AugmentConfig& cfg) {
    t.validate();
    const tab::Column& label = t.label_column();
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < t.rows(); ++i) by_class[label.cats[i]].push_back(i);

    std::map<std::string, std::size_t> targets = cfg.target_counts;
    if (targets.empty() && cfg.log_frequency_sampling) {
        std::size_t majority = 0;
        for (const auto& [name, rows] : by_class) majority = std::max(majority, rows.size());
        for (const auto& [name, rows] : by_class)
            if (rows.size() < majority) targets[name] = majority - rows.size();
    }

    AugmentResult res;
    res.table = t;
    res.synthetic.assign(t.rows(), 0);

    bool any = false;
    for (const auto& [cls, count] : targets)
        if (count > 0) any = true;
    if (!any) return res;  // passthrough

    const ModeModel modes = fit_modes(t, cfg.k_max, Rng::derive(cfg.seed, 0x6d6dULL).next_u64());

    std::size_t class_index = 0;
    for (const auto& [cls, count] : targets) {
        ++class_index;
        if (count == 0) continue;
        const auto it = by_class.find(cls);
        if (it == by_class.end())
            throw ValidationError("augment: target class '" + cls + "' not present in table");

        const tab::FlowTable class_rows = t.select_rows(it->second);
        auto encoded = encode_table(class_rows, modes);
        res.clip_events += encoded.clip_events;

        netgen::TrainConfig tc = cfg.train;
        tc.seed = Rng::derive(cfg.seed, 0x636c617373ULL, class_index).next_u64();
        if (it->second.size() < 2 * tc.batch_size) {
            const std::size_t reduced = std::max<std::size_t>(1, it->second.size() / 2);
            res.warnings.push_back("augment: class '" + cls + "' has " +
                                   std::to_string(it->second.size()) +
                                   " rows; reducing batch size from " + std::to_string(tc.batch_size) +
                                   " to " + std::to_string(reduced));
            tc.batch_size = reduced;
        }

        auto [model, trace] = netgen::train(encoded.table, tc);
        (void)trace;

        Rng zrng = Rng::derive(cfg.seed, 0x73616d706cULL, class_index);  // sampling stream
        Matrix z(count, tc.latent_dim);
        for (double& v : z.data()) v = zrng.next_normal();
        const netgen::ConditionVector c = netgen::ConditionVector::of(0, model.condition_dim);
        const ot::SampleBatch generated = netgen::generate(model, z, c);

        auto [cont_rows, cat_rows] = decode_matrix(generated.points, modes);

        // assemble synthetic rows in the input schema
        tab::FlowTable synth;
        for (const auto& col : t.columns) {
            tab::Column nc;
            nc.name = col.name;
            nc.kind = col.kind;
            synth.columns.push_back(std::move(nc));
        }
        for (std::size_t r = 0; r < count; ++r) {
            std::size_t cont_i = 0, cat_i = 0;
            for (auto& col : synth.columns) {
                if (col.kind == tab::ColumnKind::continuous)
                    col.nums.push_back(cont_rows[r][cont_i++]);
                else if (col.kind == tab::ColumnKind::categorical)
                    col.cats.push_back(cat_rows[r][cat_i++]);
                else
                    col.cats.push_back(cls);
            }
        }
        synth.provenance.row_count = count;
        res.table.append_rows(synth);
        res.synthetic.insert(res.synthetic.end(), count, 1);
    }
    return res;
}

}  // namespace sinkflow::aug
