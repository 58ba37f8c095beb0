#include "protots/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "protots/errors.hpp"

namespace protots {

void EncoderConfig::validate() const {
    if (d < 1) throw ConfigError("encoder: d must be >= 1");
    if (bottleneck && (d_bottle < 1 || d_bottle >= d)) {
        throw ConfigError("encoder: need 1 <= d_bottle < d, got d_bottle=" + std::to_string(d_bottle) +
                          ", d=" + std::to_string(d));
    }
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = nlohmann::json{{"d", c.d},
                       {"d_bottle", c.d_bottle},
                       {"n_blocks", c.n_blocks},
                       {"t_bottle", c.t_bottle},
                       {"multi_channel", c.multi_channel},
                       {"bottleneck", c.bottleneck}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    EncoderConfig d;
    c.d = j.value("d", d.d);
    c.d_bottle = j.value("d_bottle", d.d_bottle);
    c.n_blocks = j.value("n_blocks", d.n_blocks);
    c.t_bottle = j.value("t_bottle", d.t_bottle);
    c.multi_channel = j.value("multi_channel", d.multi_channel);
    c.bottleneck = j.value("bottleneck", d.bottleneck);
}

namespace {

Tensor uniform_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng);
    return Tensor::from({rows, cols}, std::move(v), true);
}

Tensor normal_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng);
    return Tensor::from({rows, cols}, std::move(v), true);
}

Perceptron clone_perceptron(const Perceptron& p) {
    Perceptron c;
    if (!p.w1.defined()) return c;
    c.w1 = p.w1.clone();
    c.b1 = p.b1.clone();
    c.w2 = p.w2.clone();
    c.b2 = p.b2.clone();
    return c;
}

}  // namespace

Perceptron::Perceptron(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng)
    : w1(uniform_matrix(in, hidden, rng)),
      b1(Tensor::zeros({hidden}, true)),
      w2(uniform_matrix(hidden, out, rng)),
      b2(Tensor::zeros({out}, true)) {}

Tensor Perceptron::forward(Tape& tape, const Tensor& x) const {
    auto h = tape.relu(tape.add_row_bias(tape.matmul(x, w1), b1));
    return tape.add_row_bias(tape.matmul(h, w2), b2);
}

void Perceptron::append_parameters(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".w1", w1, true});
    out.push_back({prefix + ".b1", b1, true});
    out.push_back({prefix + ".w2", w2, true});
    out.push_back({prefix + ".b2", b2, true});
}

Encoder::Encoder(const VariableSchema& schema, const EncoderConfig& config, std::mt19937_64& rng)
    : config_(config), lookback_(schema.lookback_L), horizon_(schema.horizon_H) {
    schema.validate();
    config.validate();
    const auto d = config.d;
    const auto steps = lookback_ + horizon_;
    for (const auto& v : schema.discrete_vars) vocab_.push_back(v.vocab_size);
    n_continuous_ = schema.continuous_vars.size();

    if (config.multi_channel) {
        gamma_ = Perceptron(1, d, d, rng);
        for (auto v : vocab_) tables_.push_back(normal_matrix(v + 1, d, 0.02, rng));
        for (std::size_t j = 0; j < n_continuous_; ++j) psi_.emplace_back(1, d, d, rng);
    } else {
        shared_ = Perceptron(1 + vocab_.size() + n_continuous_, d, d, rng);
    }

    std::size_t feature_hidden = config.d_bottle;
    std::size_t time_hidden = config.t_bottle ? config.t_bottle : std::max<std::size_t>(4, steps / 8);
    if (!config.bottleneck) {
        feature_hidden = d;
        time_hidden = steps;
    }
    for (std::size_t b = 0; b < config.n_blocks; ++b) {
        FusionBlock block;
        block.feature = Perceptron(d, feature_hidden, d, rng);
        block.time = Perceptron(steps, time_hidden, steps, rng);
        blocks_.push_back(std::move(block));
    }
    w_agg_ = uniform_matrix(steps, 1, rng);
}

std::size_t Encoder::table_row(std::size_t var, int value) const {
    if (value < 0 || static_cast<std::size_t>(value) >= vocab_.at(var)) return 0;
    return static_cast<std::size_t>(value) + 1;
}

void Encoder::check_instance(const WindowInstance& instance) const {
    if (instance.y_past.size() != lookback_ || instance.x_past.size() != lookback_ ||
        instance.x_future.size() != horizon_) {
        throw DimensionError("encoder: window has look-back " + std::to_string(instance.y_past.size()) +
                             " and horizon " + std::to_string(instance.x_future.size()) + ", model expects " +
                             std::to_string(lookback_) + " and " + std::to_string(horizon_));
    }
    auto check_row = [&](const ExogenousRow& row) {
        if (row.dis.size() != vocab_.size() || row.con.size() != n_continuous_) {
            throw DimensionError("encoder: exogenous row does not match the schema variable counts");
        }
    };
    std::for_each(instance.x_past.begin(), instance.x_past.end(), check_row);
    std::for_each(instance.x_future.begin(), instance.x_future.end(), check_row);
}

Tensor Encoder::embed(Tape& tape, const WindowInstance& instance) const {
    check_instance(instance);
    const auto steps = lookback_ + horizon_;
    const auto d = config_.d;
    auto exo = [&](std::size_t t) -> const ExogenousRow& {
        return t < lookback_ ? instance.x_past[t] : instance.x_future[t - lookback_];
    };

    if (!config_.multi_channel) {
        const std::size_t width = 1 + vocab_.size() + n_continuous_;
        std::vector<double> features(steps * width, 0.0);
        for (std::size_t t = 0; t < steps; ++t) {
            double* row = features.data() + t * width;
            row[0] = t < lookback_ ? instance.y_past[t] : 0.0;
            const auto& x = exo(t);
            for (std::size_t j = 0; j < vocab_.size(); ++j) row[1 + j] = static_cast<double>(x.dis[j]);
            for (std::size_t j = 0; j < n_continuous_; ++j) row[1 + vocab_.size() + j] = x.con[j];
        }
        return shared_.forward(tape, Tensor::from({steps, width}, std::move(features)));
    }

    Tensor y_col = Tensor::from({lookback_, 1}, instance.y_past);
    Tensor z = tape.vstack(gamma_.forward(tape, y_col), Tensor::zeros({horizon_, d}));
    for (std::size_t j = 0; j < vocab_.size(); ++j) {
        std::vector<std::size_t> rows(steps);
        for (std::size_t t = 0; t < steps; ++t) rows[t] = table_row(j, exo(t).dis[j]);
        z = tape.add(z, tape.gather_rows(tables_[j], rows));
    }
    for (std::size_t j = 0; j < n_continuous_; ++j) {
        std::vector<double> col(steps);
        for (std::size_t t = 0; t < steps; ++t) col[t] = exo(t).con[j];
        z = tape.add(z, psi_[j].forward(tape, Tensor::from({steps, 1}, std::move(col))));
    }
    return z;
}

Tensor Encoder::embed_timestep(Tape& tape, const WindowInstance& instance, std::size_t t) const {
    if (t < 1 || t > steps()) {
        throw ContractError("embed_timestep: t=" + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
    return tape.row(embed(tape, instance), t - 1);
}

Tensor Encoder::fuse(Tape& tape, const Tensor& z) const {
    if (z.rank() != 2 || z.dim(0) != steps() || z.dim(1) != config_.d) {
        throw DimensionError("fuse: expected [" + std::to_string(steps()) + "x" + std::to_string(config_.d) +
                             "], got " + shape_to_string(z.shape()));
    }
    Tensor out = z;
    for (const auto& block : blocks_) {
        auto mixed_features = block.feature.forward(tape, out);
        auto mixed_time = block.time.forward(tape, tape.transpose(mixed_features));
        out = tape.transpose(mixed_time);
    }
    return out;
}

Tensor Encoder::encode(Tape& tape, const WindowInstance& instance) const {
    auto fused = fuse(tape, embed(tape, instance));
    return tape.reshape(tape.matmul(tape.transpose(fused), w_agg_), {config_.d});
}

ParameterList Encoder::parameters() const {
    ParameterList out;
    if (config_.multi_channel) {
        gamma_.append_parameters(out, "encoder.gamma");
        for (std::size_t j = 0; j < tables_.size(); ++j) out.push_back({"encoder.table" + std::to_string(j), tables_[j], true});
        for (std::size_t j = 0; j < psi_.size(); ++j) psi_[j].append_parameters(out, "encoder.psi" + std::to_string(j));
    } else {
        shared_.append_parameters(out, "encoder.shared");
    }
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        blocks_[b].feature.append_parameters(out, "encoder.block" + std::to_string(b) + ".feature");
        blocks_[b].time.append_parameters(out, "encoder.block" + std::to_string(b) + ".time");
    }
    out.push_back({"encoder.w_agg", w_agg_, true});
    return out;
}

Encoder Encoder::clone() const {
    Encoder c = *this;
    c.gamma_ = clone_perceptron(gamma_);
    for (auto& t : c.tables_) t = t.clone();
    for (auto& p : c.psi_) p = clone_perceptron(p);
    c.shared_ = clone_perceptron(shared_);
    for (auto& b : c.blocks_) {
        b.feature = clone_perceptron(b.feature);
        b.time = clone_perceptron(b.time);
    }
    c.w_agg_ = w_agg_.clone();
    return c;
}

}  // namespace protots
