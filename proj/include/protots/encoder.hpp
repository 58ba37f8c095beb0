#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "protots/data.hpp"
#include "protots/parameters.hpp"
#include "protots/tensor.hpp"

namespace protots {

struct EncoderConfig {
    std::size_t d = 16;
    std::size_t d_bottle = 4;
    std::size_t n_blocks = 1;
    std::size_t t_bottle = 0;  // 0: max(4, (L+H)/8)
    // false: one shared perceptron over the concatenated per-step variables
    bool multi_channel = true;
    // false: mixer hidden widths equal their input widths (no compression)
    bool bottleneck = true;

    void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Two-layer perceptron applied row-wise: relu(x W1 + b1) W2 + b2.
struct Perceptron {
    Tensor w1, b1, w2, b2;

    Perceptron() = default;
    Perceptron(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng);

    Tensor forward(Tape& tape, const Tensor& x) const;
    std::size_t in_features() const { return w1.dim(0); }
    std::size_t out_features() const { return w2.dim(1); }
    void append_parameters(ParameterList& out, const std::string& prefix) const;
};

struct FusionBlock {
    Perceptron feature;  // d -> d_bottle -> d
    Perceptron time;     // (L+H) -> t_bottle -> (L+H)
};

/// Maps a window to the query embedding used for prototype matching:
/// additive multi-channel step embeddings, stacked mixer blocks (no skip
/// connections), then a learned linear pooling over the L+H steps.
class Encoder {
public:
    Encoder() = default;
    Encoder(const VariableSchema& schema, const EncoderConfig& config, std::mt19937_64& rng);

    // [(L+H) x d] stack of step embeddings.
    Tensor embed(Tape& tape, const WindowInstance& instance) const;
    // Row t (1-based) of embed().
    Tensor embed_timestep(Tape& tape, const WindowInstance& instance, std::size_t t) const;
    Tensor fuse(Tape& tape, const Tensor& z) const;
    // Query representation, length d.
    Tensor encode(Tape& tape, const WindowInstance& instance) const;

    ParameterList parameters() const;
    Encoder clone() const;

    const EncoderConfig& config() const { return config_; }
    std::size_t steps() const { return lookback_ + horizon_; }

    // Exposed for tests and ablation tooling.
    Perceptron& gamma() { return gamma_; }
    std::vector<Tensor>& tables() { return tables_; }
    std::vector<Perceptron>& psi() { return psi_; }
    Perceptron& shared_channel() { return shared_; }
    std::vector<FusionBlock>& blocks() { return blocks_; }
    Tensor& w_agg() { return w_agg_; }

    // Table row for a discrete value; row 0 is reserved for unseen values.
    std::size_t table_row(std::size_t var, int value) const;

private:
    void check_instance(const WindowInstance& instance) const;

    EncoderConfig config_;
    std::size_t lookback_ = 0;
    std::size_t horizon_ = 0;
    std::vector<std::size_t> vocab_;
    std::size_t n_continuous_ = 0;

    Perceptron gamma_;
    std::vector<Tensor> tables_;
    std::vector<Perceptron> psi_;
    Perceptron shared_;
    std::vector<FusionBlock> blocks_;
    Tensor w_agg_;
};

}  // namespace protots
