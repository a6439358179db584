#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sinkflow/errors.hpp"
#include "sinkflow/matrix.hpp"
#include "sinkflow/ot.hpp"
#include "sinkflow/rng.hpp"
#include "sinkflow/table.hpp"

namespace sinkflow::netgen {

// Flow-type class indicator appended to the latent vector.
struct ConditionVector {
    std::vector<double> one_hot;

    static ConditionVector of(std::size_t index, std::size_t dim) {
        ConditionVector c;
        c.one_hot.assign(dim, 0.0);
        if (dim > 0) {
            if (index >= dim) throw SchemaError("condition index out of range");
            c.one_hot[index] = 1.0;
        }
        return c;
    }

    std::size_t dim() const { return one_hot.size(); }

    void validate() const {
        if (one_hot.empty()) return;  // unconditional model
        std::size_t ones = 0;
        for (double v : one_hot) {
            if (v == 1.0) ++ones;
            else if (v != 0.0) throw ValidationError("condition vector entries must be 0 or 1");
        }
        if (ones != 1) throw ValidationError("condition vector must have exactly one active entry");
    }
};

// Fully connected generator: rectifier hidden layers, linear output.
// layer_dims = [d_z + d_c, hidden..., d_out]; weights[l] is (out, in).
struct GeneratorModel {
    std::uint32_t version = 1;
    std::uint64_t seed = 0;
    std::size_t latent_dim = 0;
    std::size_t condition_dim = 0;
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::vector<std::string> class_names;  // condition index -> label value

    std::size_t layer_count() const { return weights.size(); }
    std::size_t input_dim() const { return layer_dims.empty() ? 0 : layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.empty() ? 0 : layer_dims.back(); }

    void validate() const {
        if (layer_dims.size() < 2) throw SchemaError("generator needs at least input and output dims");
        if (latent_dim + condition_dim != layer_dims.front())
            throw SchemaError("generator input dim does not match latent_dim + condition_dim");
        if (weights.size() + 1 != layer_dims.size() || biases.size() != weights.size())
            throw SchemaError("generator layer count mismatch");
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l])
                throw SchemaError("generator weight shape mismatch at layer " + std::to_string(l));
            if (biases[l].size() != layer_dims[l + 1])
                throw SchemaError("generator bias shape mismatch at layer " + std::to_string(l));
            if (!weights[l].all_finite()) throw NumericError("generator weights non-finite at layer " + std::to_string(l));
            for (double v : biases[l])
                if (!std::isfinite(v)) throw NumericError("generator biases non-finite at layer " + std::to_string(l));
        }
        if (!class_names.empty() && class_names.size() != condition_dim)
            throw SchemaError("class name count does not match condition dim");
    }
};

// Uniform init scaled by the inverse square root of fan-in, biases zero.
inline GeneratorModel init_generator(std::size_t latent_dim, std::size_t condition_dim,
                                     const std::vector<std::size_t>& hidden_dims, std::size_t out_dim,
                                     std::uint64_t seed) {
    GeneratorModel model;
    model.seed = seed;
    model.latent_dim = latent_dim;
    model.condition_dim = condition_dim;
    model.layer_dims.push_back(latent_dim + condition_dim);
    for (std::size_t h : hidden_dims) model.layer_dims.push_back(h);
    model.layer_dims.push_back(out_dim);

    Rng rng = Rng::derive(seed, 0x696e6974ULL);  // "init" stream
    for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
        const std::size_t in = model.layer_dims[l], out = model.layer_dims[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Matrix w(out, in);
        for (std::size_t i = 0; i < out; ++i)
            for (std::size_t j = 0; j < in; ++j) w(i, j) = rng.uniform(-bound, bound);
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(out, 0.0);
    }
    model.validate();
    return model;
}

namespace detail {

// Activations of every layer for one batch; index 0 is the assembled input.
struct ForwardPass {
    std::vector<Matrix> activations;
};

inline Matrix assemble_input(const GeneratorModel& model, const Matrix& z, const ConditionVector& c) {
    if (z.cols() != model.latent_dim) throw SchemaError("latent batch has wrong dimension");
    if (c.dim() != model.condition_dim) throw SchemaError("condition vector has wrong dimension");
    c.validate();
    Matrix in(z.rows(), model.input_dim());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double* row = in.row_ptr(i);
        const double* zr = z.row_ptr(i);
        for (std::size_t j = 0; j < model.latent_dim; ++j) row[j] = zr[j];
        for (std::size_t j = 0; j < model.condition_dim; ++j) row[model.latent_dim + j] = c.one_hot[j];
    }
    return in;
}

inline ForwardPass forward(const GeneratorModel& model, const Matrix& z, const ConditionVector& c) {
    ForwardPass fp;
    fp.activations.push_back(assemble_input(model, z, c));
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        const Matrix& prev = fp.activations.back();
        Matrix act(prev.rows(), model.layer_dims[l + 1]);
        for (std::size_t i = 0; i < act.rows(); ++i) {
            double* row = act.row_ptr(i);
            const std::vector<double>& b = model.biases[l];
            for (std::size_t j = 0; j < act.cols(); ++j) row[j] = b[j];
        }
        matmul_a_bt_accumulate(prev, model.weights[l], act);
        if (l + 1 < model.layer_count()) {
            for (double& v : act.data()) v = v > 0.0 ? v : 0.0;  // rectifier
        }
        fp.activations.push_back(std::move(act));
    }
    return fp;
}

}  // namespace detail

// Deterministic forward pass: rows of z (B, d_z) with a shared condition
// produce B feature-space samples with uniform weights.
inline ot::SampleBatch generate(const GeneratorModel& model, const Matrix& z, const ConditionVector& c) {
    model.validate();
    auto fp = detail::forward(model, z, c);
    return ot::SampleBatch::uniform(std::move(fp.activations.back()));
}

struct ParameterGradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    Matrix input;  // (B, d_z + d_c): gradient with respect to the assembled input
};

namespace detail {

inline ParameterGradients backward_pass(const GeneratorModel& model, const ForwardPass& fp,
                                        const Matrix& upstream) {
    const Matrix& output = fp.activations.back();
    if (upstream.rows() != output.rows() || upstream.cols() != output.cols())
        throw SchemaError("backward: upstream gradient shape does not match generator output");

    ParameterGradients grads;
    grads.weights.resize(model.layer_count());
    grads.biases.resize(model.layer_count());

    Matrix delta = upstream;
    for (std::size_t l = model.layer_count(); l-- > 0;) {
        const Matrix& prev = fp.activations[l];
        grads.weights[l] = Matrix(model.weights[l].rows(), model.weights[l].cols());
        matmul_at_b_accumulate(delta, prev, grads.weights[l]);
        grads.biases[l].assign(model.weights[l].rows(), 0.0);
        for (std::size_t i = 0; i < delta.rows(); ++i) {
            const double* row = delta.row_ptr(i);
            for (std::size_t j = 0; j < delta.cols(); ++j) grads.biases[l][j] += row[j];
        }
        Matrix next(delta.rows(), model.weights[l].cols(), 0.0);
        matmul_accumulate(delta, model.weights[l], next);
        if (l > 0) {
            // rectifier mask of the previous layer's activations
            for (std::size_t i = 0; i < next.rows(); ++i) {
                double* row = next.row_ptr(i);
                const double* act = prev.row_ptr(i);
                for (std::size_t j = 0; j < next.cols(); ++j)
                    if (act[j] <= 0.0) row[j] = 0.0;
            }
        }
        delta = std::move(next);
    }
    grads.input = std::move(delta);
    return grads;
}

}  // namespace detail

// Chain rule through the layers for an upstream gradient with respect to the
// generated points. Also returns the input gradient, which the anomaly
// scorer uses to descend on z.
inline ParameterGradients backward(const GeneratorModel& model, const Matrix& z, const ConditionVector& c,
                                   const Matrix& upstream) {
    model.validate();
    const auto fp = detail::forward(model, z, c);
    return detail::backward_pass(model, fp, upstream);
}

struct TrainConfig {
    std::size_t latent_dim = 100;
    std::size_t batch_size = 64;
    double learning_rate = 2e-4;
    std::size_t epochs = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    std::vector<std::size_t> hidden_dims = {128, 256, 256};
    bool conditional = true;
    bool record_batches = true;
    ot::SinkhornConfig sinkhorn;

    void validate() const {
        if (latent_dim < 1) throw ValidationError("latent_dim must be >= 1");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
            throw ValidationError("adam betas must lie in (0, 1)");
        if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be > 0");
        if (hidden_dims.empty()) throw ValidationError("generator needs at least one hidden layer");
        sinkhorn.validate();
    }
};

struct AdamState {
    std::vector<Matrix> m_weights, v_weights;
    std::vector<std::vector<double>> m_biases, v_biases;
    std::uint64_t step = 0;

    static AdamState like(const GeneratorModel& model) {
        AdamState s;
        for (std::size_t l = 0; l < model.layer_count(); ++l) {
            s.m_weights.emplace_back(model.weights[l].rows(), model.weights[l].cols());
            s.v_weights.emplace_back(model.weights[l].rows(), model.weights[l].cols());
            s.m_biases.emplace_back(model.biases[l].size(), 0.0);
            s.v_biases.emplace_back(model.biases[l].size(), 0.0);
        }
        return s;
    }
};

// One Adam update with bias correction over every weight and bias block.
inline void adam_step(GeneratorModel& model, const ParameterGradients& grads, AdamState& state,
                      const TrainConfig& cfg) {
    if (state.m_weights.size() != model.layer_count())
        throw SchemaError("adam state does not match model layout");
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        if (!grads.weights[l].all_finite())
            throw NumericError("non-finite gradient in layer " + std::to_string(l) + " weights");
        for (double v : grads.biases[l])
            if (!std::isfinite(v))
                throw NumericError("non-finite gradient in layer " + std::to_string(l) + " biases");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double corr1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double corr2 = 1.0 - std::pow(cfg.adam_beta2, t);
    auto update = [&](double& param, double g, double& m, double& v) {
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
        param -= cfg.learning_rate * (m / corr1) / (std::sqrt(v / corr2) + cfg.adam_eps);
    };
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        auto& w = model.weights[l].data();
        const auto& gw = grads.weights[l].data();
        auto& mw = state.m_weights[l].data();
        auto& vw = state.v_weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i) update(w[i], gw[i], mw[i], vw[i]);
        for (std::size_t i = 0; i < model.biases[l].size(); ++i)
            update(model.biases[l][i], grads.biases[l][i], state.m_biases[l][i], state.v_biases[l][i]);
    }
}

struct TrainTrace {
    std::vector<double> per_epoch_loss;
    std::vector<double> per_batch_loss;
    double wall_time_s = 0.0;
};

namespace detail {

inline void check_normalized_features(const Matrix& features) {
    for (double v : features.data()) {
        if (!std::isfinite(v)) throw ValidationError("training features contain non-finite values");
        if (v < -1.0 - 1e-9 || v > 1.0 + 1e-9)
            throw ValidationError("training features are not normalized (expected [0,1] scaled or [-1,1] encoded values)");
    }
}

inline Matrix sample_latent(Rng& rng, std::size_t batch, std::size_t dim) {
    Matrix z(batch, dim);
    for (double& v : z.data()) v = rng.next_normal();
    return z;
}

}  // namespace detail

// Sinkhorn-loss training loop: per mini-batch, sample latent noise, generate,
// compute the debiased divergence against the real batch, backpropagate the
// fixed-plan gradient and Adam-update. Batches are drawn within one label
// class at a time so the attached condition is coherent; the last partial
// batch of each class is dropped. Fully reproducible from cfg.seed.
inline std::pair<GeneratorModel, TrainTrace> train(const tab::FlowTable& data, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    if (data.rows() == 0) throw ValidationError("training table is empty");

    const Matrix features = data.feature_matrix();
    if (features.cols() == 0) throw ValidationError("training table has no continuous features");
    detail::check_normalized_features(features);

    // label classes in sorted order; condition index = position
    const tab::Column& label = data.label_column();
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.rows(); ++i) by_class[label.cats[i]].push_back(i);

    const std::size_t d_c = cfg.conditional ? by_class.size() : 0;
    GeneratorModel model = init_generator(cfg.latent_dim, d_c, cfg.hidden_dims, features.cols(), cfg.seed);
    if (cfg.conditional)
        for (const auto& [name, rows] : by_class) model.class_names.push_back(name);

    std::size_t full_batches = 0;
    for (const auto& [name, rows] : by_class) full_batches += rows.size() / cfg.batch_size;
    if (full_batches == 0)
        throw ValidationError("no class has enough rows for a full mini-batch of " +
                              std::to_string(cfg.batch_size));

    AdamState state = AdamState::like(model);
    TrainTrace trace;
    Rng order_rng = Rng::derive(cfg.seed, 0x6f72646572ULL);   // batch order stream
    Rng latent_rng = Rng::derive(cfg.seed, 0x6c6174656eULL);  // latent noise stream

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // (condition index, row indices) for every full batch this epoch
        std::vector<std::pair<std::size_t, std::vector<std::size_t>>> batches;
        std::size_t class_index = 0;
        for (const auto& [name, rows] : by_class) {
            std::vector<std::size_t> shuffled = rows;
            order_rng.shuffle(shuffled);
            for (std::size_t start = 0; start + cfg.batch_size <= shuffled.size(); start += cfg.batch_size)
                batches.emplace_back(class_index,
                                     std::vector<std::size_t>(shuffled.begin() + start,
                                                              shuffled.begin() + start + cfg.batch_size));
            ++class_index;
        }
        order_rng.shuffle(batches);

        double epoch_loss = 0.0;
        for (const auto& [cls, rows] : batches) {
            Matrix real(rows.size(), features.cols());
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::size_t j = 0; j < features.cols(); ++j) real(i, j) = features(rows[i], j);
            const ot::SampleBatch real_batch = ot::SampleBatch::uniform(std::move(real));

            const Matrix z = detail::sample_latent(latent_rng, cfg.batch_size, cfg.latent_dim);
            const ConditionVector c = ConditionVector::of(cls, d_c);
            const auto fp = detail::forward(model, z, c);
            const ot::SampleBatch fake_batch = ot::SampleBatch::uniform(fp.activations.back());

            const auto fused = ot::detail::divergence_and_gradient(real_batch, fake_batch, cfg.sinkhorn);
            const auto param_grads = detail::backward_pass(model, fp, fused.gradient);
            adam_step(model, param_grads, state, cfg);

            epoch_loss += fused.value;
            if (cfg.record_batches) trace.per_batch_loss.push_back(fused.value);
        }
        trace.per_epoch_loss.push_back(epoch_loss / static_cast<double>(batches.size()));
    }
    trace.wall_time_s =
        std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - t0)
            .count();
    return {std::move(model), std::move(trace)};
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    std::uint32_t u32() {
        if (pos + 4 > buf.size()) throw IoError("model file truncated");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        if (pos + 8 > buf.size()) throw IoError("model file truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str() {
        const std::uint32_t len = u32();
        if (pos + len > buf.size()) throw IoError("model file truncated");
        std::string s = buf.substr(pos, len);
        pos += len;
        return s;
    }
};

}  // namespace detail

constexpr std::uint32_t kModelFormatVersion = 1;
constexpr char kModelMagic[4] = {'S', 'F', 'G', 'M'};

// Versioned flat model file: header (magic, version, dims, seed, class
// names) followed by little-endian 64-bit float parameter blocks in layer
// order. Round-trips bit-exactly.
inline std::string serialize_model(const GeneratorModel& model) {
    model.validate();
    std::string out;
    out.append(kModelMagic, 4);
    detail::put_u32(out, model.version);
    detail::put_u64(out, model.seed);
    detail::put_u32(out, static_cast<std::uint32_t>(model.latent_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(model.condition_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(model.layer_dims.size()));
    for (std::size_t d : model.layer_dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
    detail::put_u32(out, static_cast<std::uint32_t>(model.class_names.size()));
    for (const auto& name : model.class_names) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
    }
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        for (double v : model.weights[l].data()) detail::put_f64(out, v);
        for (double v : model.biases[l]) detail::put_f64(out, v);
    }
    return out;
}

inline GeneratorModel deserialize_model(const std::string& buf) {
    if (buf.size() < 4 || std::memcmp(buf.data(), kModelMagic, 4) != 0)
        throw IoError("not a generator model file (bad magic)");
    detail::Reader r(buf);
    r.pos = 4;
    GeneratorModel model;
    model.version = r.u32();
    if (model.version != kModelFormatVersion)
        throw IoError("unsupported model file version " + std::to_string(model.version) +
                      " (expected " + std::to_string(kModelFormatVersion) + ")");
    model.seed = r.u64();
    model.latent_dim = r.u32();
    model.condition_dim = r.u32();
    const std::uint32_t n_dims = r.u32();
    for (std::uint32_t i = 0; i < n_dims; ++i) model.layer_dims.push_back(r.u32());
    const std::uint32_t n_classes = r.u32();
    for (std::uint32_t i = 0; i < n_classes; ++i) model.class_names.push_back(r.str());
    for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
        Matrix w(model.layer_dims[l + 1], model.layer_dims[l]);
        for (double& v : w.data()) v = r.f64();
        model.weights.push_back(std::move(w));
        std::vector<double> b(model.layer_dims[l + 1]);
        for (double& v : b) v = r.f64();
        model.biases.push_back(std::move(b));
    }
    if (r.pos != buf.size()) throw IoError("model file has trailing bytes");
    model.validate();
    return model;
}

inline void save_model(const GeneratorModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model file: " + path);
    const std::string buf = serialize_model(model);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out.good()) throw IoError("failed while writing model file: " + path);
}

inline GeneratorModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(buf);
}

}  // namespace sinkflow::netgen
