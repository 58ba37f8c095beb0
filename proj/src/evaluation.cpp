#include "protots/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "protots/errors.hpp"

namespace protots {

void to_json(nlohmann::json& j, const MetricReport& m) {
    j = nlohmann::json{{"mse", m.mse}, {"mae", m.mae}, {"mae_per_step", m.mae_per_step}, {"count", m.count}};
}

MetricReport compute_metrics(const std::vector<std::vector<double>>& predictions,
                             const std::vector<std::vector<double>>& targets) {
    if (predictions.empty()) throw ContractError("evaluate: no windows");
    if (predictions.size() != targets.size()) throw DimensionError("evaluate: prediction/target count mismatch");
    const auto H = predictions.front().size();
    MetricReport r;
    r.count = predictions.size();
    r.mae_per_step.assign(H, 0.0);
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].size() != H || targets[i].size() != H) {
            throw DimensionError("evaluate: ragged forecast rows");
        }
        for (std::size_t t = 0; t < H; ++t) {
            const double diff = predictions[i][t] - targets[i][t];
            se += diff * diff;
            ae += std::abs(diff);
            r.mae_per_step[t] += std::abs(diff);
        }
    }
    const double n = static_cast<double>(predictions.size());
    r.mse = se / (n * static_cast<double>(H));
    r.mae = ae / (n * static_cast<double>(H));
    for (auto& v : r.mae_per_step) v /= n;
    return r;
}

MetricReport evaluate(const ProtoTSModel& model, const std::vector<WindowInstance>& windows) {
    if (windows.empty()) throw ContractError("evaluate: no windows");
    std::vector<std::vector<double>> preds, targets;
    preds.reserve(windows.size());
    for (const auto& w : windows) {
        preds.push_back(model.predict(w));
        targets.push_back(w.y_target);
    }
    return compute_metrics(preds, targets);
}

MetricReport evaluate_denormalized(const ProtoTSModel& model, const std::vector<WindowInstance>& windows,
                                   const Normalizer& normalizer) {
    if (windows.empty()) throw ContractError("evaluate: no windows");
    std::vector<std::vector<double>> preds, targets;
    for (const auto& w : windows) {
        auto p = model.predict(w);
        for (auto& v : p) v = normalizer.invert_y(v);
        auto t = w.y_target;
        for (auto& v : t) v = normalizer.invert_y(v);
        preds.push_back(std::move(p));
        targets.push_back(std::move(t));
    }
    return compute_metrics(preds, targets);
}

double Explanation::residual_norm() const {
    double m = 0.0;
    for (double v : residual) m = std::max(m, std::abs(v));
    return m;
}

void to_json(nlohmann::json& j, const Explanation& e) {
    j = nlohmann::json{{"instance", e.instance},
                       {"prediction", e.prediction},
                       {"contributions", nlohmann::json::array()},
                       {"residual", e.residual},
                       {"residual_norm", e.residual_norm()}};
    for (const auto& c : e.contributions) {
        j["contributions"].push_back({{"leaf", c.leaf}, {"weight", c.weight}, {"curve", c.curve}});
    }
}

namespace {

struct RankedLeaves {
    std::vector<NodeId> ids;
    std::vector<double> weights;
};

RankedLeaves ranked(const PathWeights& pw) {
    const auto w = pw.weights.data();
    std::vector<std::size_t> order(pw.leaves.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (w[a] != w[b]) return w[a] > w[b];
        return pw.leaves[a] < pw.leaves[b];
    });
    RankedLeaves out;
    for (auto i : order) {
        out.ids.push_back(pw.leaves[i]);
        out.weights.push_back(w[i]);
    }
    return out;
}

}  // namespace

Explanation explain(const ProtoTSModel& model, const WindowInstance& instance, std::size_t instance_id) {
    Tape tape(Tape::Mode::kInference);
    auto f = model.forward(tape, instance);
    const auto H = model.schema().horizon_H;
    Explanation e;
    e.instance = instance_id;
    e.prediction.assign(f.prediction.data().begin(), f.prediction.data().end());
    e.residual = e.prediction;
    const auto r = ranked(f.weights);
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
        LeafContribution c;
        c.leaf = r.ids[i];
        c.weight = r.weights[i];
        const auto p = model.tree().node(c.leaf).pattern.data();
        c.curve.resize(H);
        for (std::size_t t = 0; t < H; ++t) {
            c.curve[t] = c.weight * p[(instance.phase0 + t) % p.size()];
            e.residual[t] -= c.curve[t];
        }
        e.contributions.push_back(std::move(c));
    }
    return e;
}

void to_json(nlohmann::json& j, const ActivationEntry& e) {
    j = nlohmann::json{{"instance", e.instance}, {"start", e.start}, {"leaves", e.leaves}, {"weights", e.weights}};
}

ActivationTimeline activation_report(const ProtoTSModel& model, const std::vector<WindowInstance>& windows,
                                     std::size_t k) {
    if (k < 1) throw ContractError("activation_report: k must be >= 1");
    ActivationTimeline out;
    out.reserve(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        Tape tape(Tape::Mode::kInference);
        auto z = model.encoder().encode(tape, windows[i]);
        auto r = ranked(path_weights(tape, z, model.tree()));
        const auto keep = std::min(k, r.ids.size());
        ActivationEntry e;
        e.instance = i;
        e.start = windows[i].start;
        e.leaves.assign(r.ids.begin(), r.ids.begin() + static_cast<std::ptrdiff_t>(keep));
        e.weights.assign(r.weights.begin(), r.weights.begin() + static_cast<std::ptrdiff_t>(keep));
        out.push_back(std::move(e));
    }
    return out;
}

std::string timeline_to_csv(const ActivationTimeline& timeline) {
    std::ostringstream out;
    out.precision(17);
    out << "instance,start,rank,leaf,weight\n";
    for (const auto& e : timeline) {
        for (std::size_t r = 0; r < e.leaves.size(); ++r) {
            out << e.instance << ',' << e.start << ',' << r << ',' << e.leaves[r] << ',' << e.weights[r] << '\n';
        }
    }
    return out.str();
}

double regime_purity(const ActivationTimeline& timeline, const std::vector<int>& regimes) {
    if (timeline.size() != regimes.size()) throw DimensionError("regime_purity: label count mismatch");
    if (timeline.empty()) throw ContractError("regime_purity: empty timeline");
    std::map<NodeId, std::map<int, std::size_t>> votes;
    for (std::size_t i = 0; i < timeline.size(); ++i) {
        if (timeline[i].leaves.empty()) throw ContractError("regime_purity: entry without leaves");
        ++votes[timeline[i].leaves.front()][regimes[i]];
    }
    std::size_t agree = 0;
    for (const auto& [leaf, counts] : votes) {
        std::size_t best = 0;
        for (const auto& [regime, c] : counts) best = std::max(best, c);
        agree += best;
    }
    return static_cast<double>(agree) / static_cast<double>(timeline.size());
}

SeasonalNaive::SeasonalNaive(const DatasetBundle& normalized, std::size_t period) : phase_mean_(period, 0.0) {
    std::vector<std::size_t> count(period, 0);
    for (auto i = normalized.train.begin; i < normalized.train.end; ++i) {
        const auto ph = phase_of(normalized.timestamps[i], period);
        phase_mean_[ph] += normalized.y[i];
        ++count[ph];
    }
    for (std::size_t s = 0; s < period; ++s) {
        if (count[s]) phase_mean_[s] /= static_cast<double>(count[s]);
    }
}

std::vector<double> SeasonalNaive::predict(const WindowInstance& instance, std::size_t horizon) const {
    std::vector<double> out(horizon);
    for (std::size_t t = 0; t < horizon; ++t) out[t] = phase_mean_[(instance.phase0 + t) % phase_mean_.size()];
    return out;
}

MetricReport SeasonalNaive::evaluate(const std::vector<WindowInstance>& windows) const {
    std::vector<std::vector<double>> preds, targets;
    for (const auto& w : windows) {
        preds.push_back(predict(w, w.y_target.size()));
        targets.push_back(w.y_target);
    }
    return compute_metrics(preds, targets);
}

double mean_root_entropy(const ProtoTSModel& model, const std::vector<WindowInstance>& windows) {
    if (windows.empty()) throw ContractError("mean_root_entropy: no windows");
    double total = 0.0;
    for (const auto& w : windows) {
        Tape tape(Tape::Mode::kInference);
        auto f = root_similarity(tape, model.encoder().encode(tape, w), model.tree());
        for (double p : f.data()) {
            if (p > 0.0) total -= p * std::log(p);
        }
    }
    return total / static_cast<double>(windows.size());
}

}  // namespace protots
