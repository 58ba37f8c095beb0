#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "protots/data.hpp"
#include "protots/model.hpp"

namespace protots {

enum class LossKind { kL1, kL2 };

/// One split round of the stage plan. A non-empty `leaves` list is an
/// explicit expert choice and bypasses the splitting rule.
struct SplitRound {
    std::size_t m = 2;
    std::size_t k = 1;
    double alpha = 100.0;
    std::vector<NodeId> leaves;
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;
    std::size_t batch_size = 32;
    double lambda = 0.01;
    std::uint64_t seed = 0;
    std::vector<SplitRound> stage_plan;
    LossKind loss_kind = LossKind::kL1;
    // Apply the entropy penalty to every sibling group, not only the roots.
    bool entropy_all_groups = false;
    double clip_norm = 10.0;
    // Fraction of training windows used, taken from the most recent end.
    double train_data_fraction = 1.0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
    std::size_t stage = 0;
    std::size_t epoch = 0;  // global, monotone across stages
    double train_loss = 0.0;
    double val_mae = 0.0;
};

struct StageRecord {
    std::size_t stage = 0;
    std::size_t first_epoch = 0;
    std::size_t last_epoch = 0;
    double initial_val_mae = 0.0;
    double best_val_mae = 0.0;
    std::size_t best_epoch = 0;  // 0: the stage's starting parameters were kept
};

struct SplitEvent {
    std::size_t stage = 0;  // stage that starts after this split
    std::size_t after_epoch = 0;
    std::size_t m = 2;
    bool explicit_choice = false;
    std::vector<NodeId> leaves;
    std::vector<std::vector<NodeId>> children;
    std::vector<std::uint64_t> seeds;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::vector<StageRecord> stages;
    std::vector<SplitEvent> splits;
    std::optional<double> test_mse;
    std::optional<double> test_mae;
    double wall_clock_seconds = 0.0;

    std::vector<double> train_losses() const;
};

void to_json(nlohmann::json& j, const TrainReport& r);

/// Forecast error plus the entropy penalty on the root weights:
/// sum_t |pred - target| - lambda * sum_i f_i log f_i (squared error for L2).
Tensor forecast_loss(Tape& tape, const Tensor& pred, const Tensor& target, const Tensor& root_weights,
                     double lambda, LossKind kind = LossKind::kL1);

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Updates every trainable parameter; absent gradients count as zero.
    void step(const ParameterList& params);

private:
    struct Moments {
        std::vector<double> m, v;
        std::size_t t = 0;
    };
    double lr_, beta1_, beta2_, eps_;
    std::unordered_map<const void*, Moments> state_;
};

struct TrainingData {
    std::vector<WindowInstance> train;
    std::vector<WindowInstance> val;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mean absolute error of the model over windows (normalized units).
double mean_absolute_error(const ProtoTSModel& model, const std::vector<WindowInstance>& windows);

/// Trains until max_epochs or until validation MAE stops improving for
/// `patience` epochs, then restores the best parameters seen (including
/// the parameters the stage started from).
void train_stage(ProtoTSModel& model, const TrainingData& data, const TrainConfig& config, std::size_t stage,
                 TrainReport& report, const EpochCallback& on_epoch = {});

/// Root stage followed by one stage per split round.
TrainReport staged_train(ProtoTSModel& model, const TrainingData& data, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace protots
