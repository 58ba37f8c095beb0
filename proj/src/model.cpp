#include "protots/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "protots/errors.hpp"

namespace protots {

void ModelConfig::validate() const {
    encoder.validate();
    if (n_roots < 1) throw ConfigError("model: n_roots must be >= 1");
    if (mu_init_std < 0.0 || pattern_init_std < 0.0 || split_jitter < 0.0) {
        throw ConfigError("model: initialization scales must be >= 0");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"encoder", c.encoder},           {"n_roots", c.n_roots},
                       {"mu_init_std", c.mu_init_std},   {"pattern_init_std", c.pattern_init_std},
                       {"split_jitter", c.split_jitter}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.encoder = j.contains("encoder") ? j.at("encoder").get<EncoderConfig>() : d.encoder;
    c.n_roots = j.value("n_roots", d.n_roots);
    c.mu_init_std = j.value("mu_init_std", d.mu_init_std);
    c.pattern_init_std = j.value("pattern_init_std", d.pattern_init_std);
    c.split_jitter = j.value("split_jitter", d.split_jitter);
    c.seed = j.value("seed", d.seed);
}

ProtoTSModel::ProtoTSModel(const VariableSchema& schema, const ModelConfig& config)
    : schema_(schema), config_(config) {
    schema.validate();
    config.validate();
    std::mt19937_64 rng(config.seed);
    encoder_ = Encoder(schema, config.encoder, rng);
    tree_ = PrototypeTree(config.n_roots, config.encoder.d, schema.period_T, config.mu_init_std,
                          config.pattern_init_std, rng);
}

ProtoTSModel::ProtoTSModel(VariableSchema schema, ModelConfig config, Encoder encoder, PrototypeTree tree)
    : schema_(std::move(schema)), config_(std::move(config)), encoder_(std::move(encoder)), tree_(std::move(tree)) {}

ForwardResult ProtoTSModel::forward(Tape& tape, const WindowInstance& instance) const {
    if (instance.phase0 >= schema_.period_T) {
        throw ContractError("window phase " + std::to_string(instance.phase0) + " outside period " +
                            std::to_string(schema_.period_T));
    }
    ForwardResult out;
    out.z = encoder_.encode(tape, instance);
    out.weights = path_weights(tape, out.z, tree_);
    out.prediction = hierarchical_predict(tape, out.weights, tree_, instance.phase0, schema_.horizon_H);
    return out;
}

std::vector<double> ProtoTSModel::predict(const WindowInstance& instance) const {
    Tape tape(Tape::Mode::kInference);
    const auto result = forward(tape, instance);
    const auto p = result.prediction.data();
    return {p.begin(), p.end()};
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// k-means++ seeding followed by a fixed number of Lloyd iterations.
std::vector<std::vector<double>> kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                                        std::mt19937_64& rng, std::size_t iterations = 20) {
    std::vector<std::vector<double>> centers;
    std::uniform_int_distribution<std::size_t> first(0, points.size() - 1);
    centers.push_back(points[first(rng)]);
    std::vector<double> nearest(points.size());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            double best = sq_dist(points[i], centers.front());
            for (const auto& c : centers) best = std::min(best, sq_dist(points[i], c));
            nearest[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centers.push_back(points[first(rng)]);
            continue;
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        std::size_t pick = points.size() - 1;
        for (std::size_t i = 0; i < points.size(); ++i) {
            target -= nearest[i];
            if (target <= 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(points[pick]);
    }
    const auto dim = points.front().size();
    for (std::size_t it = 0; it < iterations; ++it) {
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (const auto& p : points) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c) {
                if (sq_dist(p, centers[c]) < sq_dist(p, centers[best])) best = c;
            }
            for (std::size_t i = 0; i < dim; ++i) sums[best][i] += p[i];
            ++counts[best];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (!counts[c]) continue;
            for (std::size_t i = 0; i < dim; ++i) centers[c][i] = sums[c][i] / static_cast<double>(counts[c]);
        }
    }
    return centers;
}

}  // namespace

void ProtoTSModel::init_patterns_from_data(const std::vector<WindowInstance>& windows) {
    const auto T = schema_.period_T;
    const auto L = schema_.lookback_L;
    const auto n_roots = tree_.roots().size();

    // Whole-period profiles: windows whose look-back starts at phase 0 and
    // whose span covers a full period.
    std::vector<std::vector<double>> profiles;
    if (L + schema_.horizon_H >= T) {
        for (const auto& w : windows) {
            if ((w.phase0 + T - L % T) % T != 0) continue;
            std::vector<double> series = w.y_past;
            series.insert(series.end(), w.y_target.begin(), w.y_target.end());
            profiles.emplace_back(series.begin(), series.begin() + static_cast<std::ptrdiff_t>(T));
        }
    }

    std::vector<std::vector<double>> centers;
    if (profiles.size() >= n_roots) {
        std::mt19937_64 rng(config_.seed ^ 0x5EEDULL);
        centers = kmeans(profiles, n_roots, rng);
    } else {
        std::vector<double> sum(T, 0.0);
        std::vector<std::size_t> count(T, 0);
        for (const auto& w : windows) {
            for (std::size_t t = 0; t < w.y_target.size(); ++t) {
                const auto phase = (w.phase0 + t) % T;
                sum[phase] += w.y_target[t];
                ++count[phase];
            }
        }
        for (std::size_t s = 0; s < T; ++s) {
            if (count[s]) sum[s] /= static_cast<double>(count[s]);
        }
        centers.assign(n_roots, sum);
    }
    for (std::size_t i = 0; i < n_roots; ++i) {
        auto p = tree_.node(tree_.roots()[i]).pattern.mutable_data();
        for (std::size_t s = 0; s < T; ++s) p[s] += centers[i][s];
    }
}

ParameterList ProtoTSModel::parameters() const {
    auto out = encoder_.parameters();
    for (auto& p : tree_.parameters()) out.push_back(std::move(p));
    return out;
}

ProtoTSModel ProtoTSModel::clone() const {
    return ProtoTSModel(schema_, config_, encoder_.clone(), tree_.clone());
}

SplitSelection splitting_rule(const ProtoTSModel& model, const std::vector<WindowInstance>& windows,
                              std::size_t k, double alpha) {
    const auto leaves = model.tree().leaves();
    std::vector<std::vector<double>> scores;
    std::vector<double> losses;
    scores.reserve(windows.size());
    losses.reserve(windows.size());
    for (const auto& w : windows) {
        Tape tape(Tape::Mode::kInference);
        auto f = model.forward(tape, w);
        const auto pred = f.prediction.data();
        double mae = 0.0;
        for (std::size_t t = 0; t < pred.size(); ++t) mae += std::abs(pred[t] - w.y_target[t]);
        losses.push_back(mae / static_cast<double>(pred.size()));
        const auto weights = f.weights.weights.data();
        scores.emplace_back(weights.begin(), weights.end());
    }
    return select_leaves(leaves, scores, losses, k, alpha);
}

}  // namespace protots
