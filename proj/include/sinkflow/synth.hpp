#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sinkflow/rng.hpp"
#include "sinkflow/table.hpp"

namespace sinkflow::tab {

// Desk-scale synthetic flow generator used by tests and fixtures.
//
// Benign rows are drawn from a three-mode Gaussian mixture over flow-like
// features (interactive / bulk / idle profiles); attack rows emulate
// UDP-flood and SYN-flood signatures. Parameter table (mean, stddev):
//
//   feature               benign A      benign B      benign C      udp_flood     syn_flood
//   flow_duration_ms      (120, 40)     (900, 200)    (3000, 500)   (400, 150)    (250, 90)
//   fwd_packets_per_s     (40, 10)      (220, 40)     (2, 0.5)      (9000, 1500)  (6000, 1200)
//   bwd/fwd ratio         (0.8, 0.1)    (0.6, 0.1)    (0.9, 0.15)   (0.02, 0.01)  (0.05, 0.02)
//   pkt_len_mean          (420, 80)     (1100, 150)   (80, 15)      (120, 30)     (60, 10)
//   syn_flags_per_s       (0.5, 0.2)    (0.2, 0.1)    (0.1, 0.05)   (1.0, 0.5)    (5500, 1100)
//   ack_flags_per_s       (30, 8)       (150, 30)     (1.5, 0.4)    (2.0, 1.0)    (8, 4)
//   urg_flags_per_s       (0.02, 0.01)  (0.02, 0.01)  (0.01, 0.005) (0.5, 0.3)    (0.8, 0.4)
//   down_up_ratio         (1.4, 0.3)    (2.5, 0.5)    (1.0, 0.2)    (0.05, 0.02)  (0.1, 0.05)
//
// Benign mode weights are (0.5, 0.3, 0.2). Derived columns:
// total_packets_per_s = fwd + bwd (a deliberately collinear column for the
// correlation pruner), flow_bytes_per_s = fwd_packets_per_s * pkt_len_mean
// with multiplicative noise, fwd_iat_mean_ms = 1000 / fwd_packets_per_s with
// noise. Attack counts split 60/40 between udp_flood and syn_flood. The
// benign and attack packet-rate means differ by construction, which is what
// the detection fixtures rely on.
inline FlowTable synth_flows(std::size_t n_benign, std::size_t n_attack, std::uint64_t seed) {
    FlowTable t;
    const std::vector<std::string> names = {
        "flow_duration_ms", "fwd_packets_per_s", "bwd_packets_per_s", "total_packets_per_s",
        "flow_bytes_per_s", "pkt_len_mean",      "fwd_iat_mean_ms",   "syn_flags_per_s",
        "ack_flags_per_s",  "urg_flags_per_s",   "down_up_ratio"};
    for (const auto& n : names) {
        Column c;
        c.name = n;
        c.kind = ColumnKind::continuous;
        t.columns.push_back(std::move(c));
    }
    Column proto;
    proto.name = "protocol";
    proto.kind = ColumnKind::categorical;
    t.columns.push_back(std::move(proto));
    Column label;
    label.name = "label";
    label.kind = ColumnKind::label;
    t.columns.push_back(std::move(label));

    Rng rng = Rng::derive(seed, 0x73796e7468ULL);  // synth stream

    auto push_row = [&](double duration, double fwd_pps, double bwd_ratio, double pkt_len,
                        double syn_ps, double ack_ps, double urg_ps, double dur_ratio,
                        const std::string& protocol, const std::string& lbl) {
        const double fwd = std::max(fwd_pps, 0.1);
        const double bwd = std::max(fwd * bwd_ratio, 0.0);
        const double bytes_ps = fwd * std::max(pkt_len, 1.0) * rng.uniform(0.9, 1.1);
        const double iat = 1000.0 / fwd * rng.uniform(0.85, 1.15);
        double vals[11] = {std::max(duration, 1.0),
                           fwd,
                           bwd,
                           fwd + bwd,
                           bytes_ps,
                           std::max(pkt_len, 1.0),
                           iat,
                           std::max(syn_ps, 0.0),
                           std::max(ack_ps, 0.0),
                           std::max(urg_ps, 0.0),
                           std::max(dur_ratio, 0.0)};
        for (int j = 0; j < 11; ++j) t.columns[static_cast<std::size_t>(j)].nums.push_back(vals[j]);
        t.columns[11].cats.push_back(protocol);
        t.columns[12].cats.push_back(lbl);
    };

    for (std::size_t i = 0; i < n_benign; ++i) {
        const double u = rng.next_double();
        const int mode = u < 0.5 ? 0 : (u < 0.8 ? 1 : 2);
        static const double dur[3][2] = {{120, 40}, {900, 200}, {3000, 500}};
        static const double fwd[3][2] = {{40, 10}, {220, 40}, {2, 0.5}};
        static const double bwr[3][2] = {{0.8, 0.1}, {0.6, 0.1}, {0.9, 0.15}};
        static const double len[3][2] = {{420, 80}, {1100, 150}, {80, 15}};
        static const double syn[3][2] = {{0.5, 0.2}, {0.2, 0.1}, {0.1, 0.05}};
        static const double ack[3][2] = {{30, 8}, {150, 30}, {1.5, 0.4}};
        static const double urg[3][2] = {{0.02, 0.01}, {0.02, 0.01}, {0.01, 0.005}};
        static const double dup[3][2] = {{1.4, 0.3}, {2.5, 0.5}, {1.0, 0.2}};
        push_row(rng.normal(dur[mode][0], dur[mode][1]), rng.normal(fwd[mode][0], fwd[mode][1]),
                 rng.normal(bwr[mode][0], bwr[mode][1]), rng.normal(len[mode][0], len[mode][1]),
                 rng.normal(syn[mode][0], syn[mode][1]), rng.normal(ack[mode][0], ack[mode][1]),
                 rng.normal(urg[mode][0], urg[mode][1]), rng.normal(dup[mode][0], dup[mode][1]),
                 rng.next_double() < 0.7 ? "tcp" : "udp", "benign");
    }

    const std::size_t n_udp = (n_attack * 3 + 2) / 5;  // 60 percent, round to nearest
    for (std::size_t i = 0; i < n_attack; ++i) {
        if (i < n_udp) {
            push_row(rng.normal(400, 150), rng.normal(9000, 1500), rng.normal(0.02, 0.01),
                     rng.normal(120, 30), rng.normal(1.0, 0.5), rng.normal(2.0, 1.0),
                     rng.normal(0.5, 0.3), rng.normal(0.05, 0.02), "udp", "udp_flood");
        } else {
            push_row(rng.normal(250, 90), rng.normal(6000, 1200), rng.normal(0.05, 0.02),
                     rng.normal(60, 10), rng.normal(5500, 1100), rng.normal(8, 4),
                     rng.normal(0.8, 0.4), rng.normal(0.1, 0.05), "tcp", "syn_flood");
        }
    }

    t.provenance.source = "synth_flows(seed=" + std::to_string(seed) + ")";
    t.provenance.row_count = t.rows();
    return t;
}

}  // namespace sinkflow::tab
