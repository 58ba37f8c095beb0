#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protots/data.hpp"
#include "protots/model.hpp"

namespace protots {

struct MetricReport {
    double mse = 0.0;
    double mae = 0.0;
    std::vector<double> mae_per_step;
    std::size_t count = 0;
};

void to_json(nlohmann::json& j, const MetricReport& m);

// Metrics over paired forecast/target rows (one row per instance).
MetricReport compute_metrics(const std::vector<std::vector<double>>& predictions,
                             const std::vector<std::vector<double>>& targets);

MetricReport evaluate(const ProtoTSModel& model, const std::vector<WindowInstance>& windows);

// Same metrics after mapping forecasts and targets back to data units.
MetricReport evaluate_denormalized(const ProtoTSModel& model, const std::vector<WindowInstance>& windows,
                                   const Normalizer& normalizer);

struct LeafContribution {
    NodeId leaf = 0;
    double weight = 0.0;
    std::vector<double> curve;  // weight * aligned pattern
};

struct Explanation {
    std::size_t instance = 0;
    std::vector<double> prediction;
    std::vector<LeafContribution> contributions;  // descending weight, ties by id
    std::vector<double> residual;                 // prediction - sum of curves

    double residual_norm() const;
};

void to_json(nlohmann::json& j, const Explanation& e);

Explanation explain(const ProtoTSModel& model, const WindowInstance& instance, std::size_t instance_id = 0);

struct ActivationEntry {
    std::size_t instance = 0;
    std::size_t start = 0;
    std::vector<NodeId> leaves;
    std::vector<double> weights;  // descending
};

using ActivationTimeline = std::vector<ActivationEntry>;

void to_json(nlohmann::json& j, const ActivationEntry& e);

ActivationTimeline activation_report(const ProtoTSModel& model, const std::vector<WindowInstance>& windows,
                                     std::size_t k);

std::string timeline_to_csv(const ActivationTimeline& timeline);

// Fraction of instances whose dominant leaf maps, by majority vote over
// instances, to the instance's true regime.
double regime_purity(const ActivationTimeline& timeline, const std::vector<int>& regimes);

/// Per-phase mean of the training series, read off by phase.
class SeasonalNaive {
public:
    SeasonalNaive(const DatasetBundle& normalized, std::size_t period);

    std::vector<double> predict(const WindowInstance& instance, std::size_t horizon) const;
    MetricReport evaluate(const std::vector<WindowInstance>& windows) const;

private:
    std::vector<double> phase_mean_;
};

// Mean Shannon entropy of the root weights over windows.
double mean_root_entropy(const ProtoTSModel& model, const std::vector<WindowInstance>& windows);

}  // namespace protots
