#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace protots {

struct DiscreteVariable {
    std::string name;
    std::size_t vocab_size = 0;
};

/// Names and shapes of the variables a model consumes.
struct VariableSchema {
    std::string endogenous_name;
    std::vector<DiscreteVariable> discrete_vars;
    std::vector<std::string> continuous_vars;
    std::size_t period_T = 0;
    std::size_t lookback_L = 0;
    std::size_t horizon_H = 0;

    // Throws SchemaError when an invariant does not hold.
    void validate() const;
};

void to_json(nlohmann::json& j, const VariableSchema& s);
void from_json(const nlohmann::json& j, VariableSchema& s);

VariableSchema load_schema(const std::filesystem::path& path);
void save_schema(const VariableSchema& schema, const std::filesystem::path& path);

/// Half-open row range [begin, end).
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool operator==(const IndexRange&) const = default;
};

enum class Split { kTrain, kVal, kTest };

Split parse_split(const std::string& name);
std::string to_string(Split split);

struct DatasetBundle {
    std::vector<std::int64_t> timestamps;
    std::vector<double> y;
    std::vector<std::vector<int>> x_dis;     // [variable][row]
    std::vector<std::vector<double>> x_con;  // [variable][row]
    IndexRange train;
    IndexRange val;
    IndexRange test;

    std::size_t length() const { return y.size(); }
    const IndexRange& range(Split split) const;

    // Contiguous train/val/test partitions by fraction; test takes the rest.
    void assign_splits(double train_fraction, double val_fraction);

    void validate(const VariableSchema& schema) const;

    bool operator==(const DatasetBundle&) const = default;
};

DatasetBundle load_csv(const std::filesystem::path& path, const VariableSchema& schema);
DatasetBundle parse_csv(const std::string& text, const VariableSchema& schema);
std::string to_csv(const DatasetBundle& bundle, const VariableSchema& schema);
void save_csv(const DatasetBundle& bundle, const VariableSchema& schema,
              const std::filesystem::path& path);

struct ColumnStats {
    double mean = 0.0;
    double std = 1.0;
};

/// Per-variable z-scoring with statistics taken from the train split only.
class Normalizer {
public:
    Normalizer() = default;

    static Normalizer fit(const DatasetBundle& bundle);

    double apply_y(double v) const { return (v - y_.mean) / y_.std; }
    double invert_y(double v) const { return v * y_.std + y_.mean; }
    double apply_con(std::size_t var, double v) const;
    double invert_con(std::size_t var, double v) const;

    // Copy of the bundle with y and continuous columns normalized.
    DatasetBundle transform(const DatasetBundle& bundle) const;

    const ColumnStats& y_stats() const { return y_; }
    const std::vector<ColumnStats>& con_stats() const { return con_; }

    friend void to_json(nlohmann::json& j, const Normalizer& n);
    friend void from_json(const nlohmann::json& j, Normalizer& n);

private:
    ColumnStats y_;
    std::vector<ColumnStats> con_;
};

struct ExogenousRow {
    std::vector<int> dis;
    std::vector<double> con;
};

struct WindowInstance {
    std::size_t start = 0;  // row index of the first look-back step
    std::vector<double> y_past;
    std::vector<ExogenousRow> x_past;
    std::vector<ExogenousRow> x_future;
    std::vector<double> y_target;
    std::size_t phase0 = 0;
};

std::size_t phase_of(std::int64_t timestamp, std::size_t period);

// Windows lying entirely inside `range`. Returns an empty sequence when the
// range is shorter than L + H.
std::vector<WindowInstance> make_windows(const DatasetBundle& bundle, const VariableSchema& schema,
                                         IndexRange range, std::size_t stride = 1);
std::vector<WindowInstance> make_windows(const DatasetBundle& bundle, const VariableSchema& schema,
                                         Split split, std::size_t stride = 1);

/// Planted-pattern generator configuration.
///
/// Regimes are keyed to the discrete covariates `is_holiday` and `season`.
/// Covariates stay constant over runs of whole periods so regime changes
/// happen at period boundaries.
struct SynthConfig {
    std::size_t regimes = 4;
    std::size_t period = 24;
    std::size_t periods = 200;
    double noise_sigma = 0.1;
    std::size_t lookback = 24;
    std::size_t horizon = 12;
    std::size_t min_run = 4;  // periods
    std::size_t max_run = 10;
    std::size_t distractor_continuous = 0;
    std::size_t distractor_discrete = 0;
    std::size_t distractor_vocab = 5;
    double train_fraction = 0.7;
    double val_fraction = 0.1;

    void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SynthDataset {
    VariableSchema schema;
    DatasetBundle bundle;
    std::vector<int> regime;  // ground-truth label per row
    std::vector<std::vector<double>> templates;
};

SynthDataset synth_generate(const SynthConfig& config, std::uint64_t seed);

// Majority regime over each window's forecast steps.
std::vector<int> window_regimes(const std::vector<WindowInstance>& windows,
                                const std::vector<int>& regime, const VariableSchema& schema);

}  // namespace protots
