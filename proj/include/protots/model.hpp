#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "protots/data.hpp"
#include "protots/encoder.hpp"
#include "protots/prototypes.hpp"

namespace protots {

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t n_roots = 4;
    double mu_init_std = 0.1;
    double pattern_init_std = 0.1;
    double split_jitter = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ForwardResult {
    Tensor z;
    PathWeights weights;
    Tensor prediction;
};

/// Encoder plus prototype hierarchy. Forecasts live in normalized units.
class ProtoTSModel {
public:
    ProtoTSModel() = default;
    ProtoTSModel(const VariableSchema& schema, const ModelConfig& config);
    ProtoTSModel(VariableSchema schema, ModelConfig config, Encoder encoder, PrototypeTree tree);

    ForwardResult forward(Tape& tape, const WindowInstance& instance) const;
    std::vector<double> predict(const WindowInstance& instance) const;

    // Adds k-means centroids of whole-period target profiles to the root
    // patterns (per-phase mean when the windows cannot supply a full period).
    void init_patterns_from_data(const std::vector<WindowInstance>& windows);

    ParameterList parameters() const;
    ProtoTSModel clone() const;

    const VariableSchema& schema() const { return schema_; }
    const ModelConfig& config() const { return config_; }
    const Encoder& encoder() const { return encoder_; }
    Encoder& encoder() { return encoder_; }
    const PrototypeTree& tree() const { return tree_; }
    PrototypeTree& tree() { return tree_; }

private:
    VariableSchema schema_;
    ModelConfig config_;
    Encoder encoder_;
    PrototypeTree tree_;
};

/// Leaves whose attributed forecast error is in the top alpha percent.
/// Leaf similarity is the path weight; instance loss is the forecast MAE.
SplitSelection splitting_rule(const ProtoTSModel& model, const std::vector<WindowInstance>& windows,
                              std::size_t k, double alpha);

}  // namespace protots
