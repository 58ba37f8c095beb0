#include "protots/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "protots/errors.hpp"
#include "protots/io.hpp"

namespace protots {

// ---------------------------------------------------------------- schema

void VariableSchema::validate() const {
    if (endogenous_name.empty()) throw SchemaError("schema: endogenous_name is empty");
    if (period_T < 1) throw SchemaError("schema: period_T must be >= 1");
    if (lookback_L < 1) throw SchemaError("schema: lookback_L must be >= 1");
    if (horizon_H < 1) throw SchemaError("schema: horizon_H must be >= 1");
    std::set<std::string> names{endogenous_name, "ts"};
    auto claim = [&](const std::string& name) {
        if (name.empty()) throw SchemaError("schema: empty variable name");
        if (!names.insert(name).second) throw SchemaError("schema: duplicate variable name '" + name + "'");
    };
    for (const auto& v : discrete_vars) {
        claim(v.name);
        if (v.vocab_size < 1) throw SchemaError("schema: vocab_size of '" + v.name + "' must be >= 1");
    }
    for (const auto& name : continuous_vars) claim(name);
}

void to_json(nlohmann::json& j, const VariableSchema& s) {
    j = nlohmann::json{{"endogenous_name", s.endogenous_name},
                       {"discrete_vars", nlohmann::json::array()},
                       {"continuous_vars", s.continuous_vars},
                       {"period_T", s.period_T},
                       {"lookback_L", s.lookback_L},
                       {"horizon_H", s.horizon_H}};
    for (const auto& v : s.discrete_vars) {
        j["discrete_vars"].push_back({{"name", v.name}, {"vocab_size", v.vocab_size}});
    }
}

void from_json(const nlohmann::json& j, VariableSchema& s) {
    try {
        s.endogenous_name = j.at("endogenous_name").get<std::string>();
        s.discrete_vars.clear();
        for (const auto& v : j.at("discrete_vars")) {
            s.discrete_vars.push_back({v.at("name").get<std::string>(), v.at("vocab_size").get<std::size_t>()});
        }
        s.continuous_vars = j.at("continuous_vars").get<std::vector<std::string>>();
        s.period_T = j.at("period_T").get<std::size_t>();
        s.lookback_L = j.at("lookback_L").get<std::size_t>();
        s.horizon_H = j.at("horizon_H").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("schema: ") + e.what());
    }
    s.validate();
}

VariableSchema load_schema(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("schema file " + path.string() + ": " + e.what());
    }
    return j.get<VariableSchema>();
}

void save_schema(const VariableSchema& schema, const std::filesystem::path& path) {
    write_file_atomic(path, nlohmann::json(schema).dump(2) + "\n");
}

// ---------------------------------------------------------------- bundle

Split parse_split(const std::string& name) {
    if (name == "train") return Split::kTrain;
    if (name == "val") return Split::kVal;
    if (name == "test") return Split::kTest;
    throw ContractError("unknown split '" + name + "' (expected train, val, or test)");
}

std::string to_string(Split split) {
    switch (split) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    return "?";
}

const IndexRange& DatasetBundle::range(Split split) const {
    switch (split) {
        case Split::kTrain: return train;
        case Split::kVal: return val;
        case Split::kTest: return test;
    }
    return test;
}

void DatasetBundle::assign_splits(double train_fraction, double val_fraction) {
    if (train_fraction <= 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0) {
        throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val <= 1");
    }
    const auto n = length();
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
    train = {0, n_train};
    val = {n_train, n_train + n_val};
    test = {n_train + n_val, n};
}

void DatasetBundle::validate(const VariableSchema& schema) const {
    const auto n = length();
    if (timestamps.size() != n) throw SchemaError("bundle: timestamp column length mismatch");
    if (x_dis.size() != schema.discrete_vars.size() || x_con.size() != schema.continuous_vars.size()) {
        throw SchemaError("bundle: variable count does not match schema");
    }
    for (std::size_t j = 0; j < x_dis.size(); ++j) {
        if (x_dis[j].size() != n) throw SchemaError("bundle: column '" + schema.discrete_vars[j].name + "' length mismatch");
        for (std::size_t r = 0; r < n; ++r) {
            const int v = x_dis[j][r];
            if (v < 0 || static_cast<std::size_t>(v) >= schema.discrete_vars[j].vocab_size) {
                throw VocabularyError("bundle: value " + std::to_string(v) + " of '" +
                                      schema.discrete_vars[j].name + "' at row " + std::to_string(r) +
                                      " outside vocabulary of size " +
                                      std::to_string(schema.discrete_vars[j].vocab_size));
            }
        }
    }
    for (std::size_t j = 0; j < x_con.size(); ++j) {
        if (x_con[j].size() != n) throw SchemaError("bundle: column '" + schema.continuous_vars[j] + "' length mismatch");
    }
    for (std::size_t r = 1; r < n; ++r) {
        if (timestamps[r] <= timestamps[r - 1]) throw SchemaError("bundle: timestamps not strictly increasing");
    }
    if (train.begin != 0 || train.end > val.begin || val.begin != train.end || val.end != test.begin ||
        test.end != n || test.begin > test.end || val.begin > val.end) {
        throw SchemaError("bundle: splits must be contiguous, ordered, and cover the series");
    }
}

// ------------------------------------------------------------------- CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
        while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
        out.push_back(field);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

DatasetBundle parse_csv(const std::string& text, const VariableSchema& schema) {
    schema.validate();
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("csv: empty input, expected a header row");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
    const auto header = split_fields(line);
    std::map<std::string, std::size_t, std::less<>> column;
    for (std::size_t i = 0; i < header.size(); ++i) column.emplace(std::string(header[i]), i);

    auto require = [&](const std::string& name) {
        auto it = column.find(name);
        if (it == column.end()) throw SchemaError("csv: missing column '" + name + "'");
        return it->second;
    };
    const auto ts_col = require("ts");
    const auto y_col = require(schema.endogenous_name);
    std::vector<std::size_t> dis_cols, con_cols;
    for (const auto& v : schema.discrete_vars) dis_cols.push_back(require(v.name));
    for (const auto& name : schema.continuous_vars) con_cols.push_back(require(name));

    struct Row {
        std::int64_t ts;
        double y;
        std::vector<int> dis;
        std::vector<double> con;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw ParseError("csv line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        auto cell = [&](std::size_t col, const std::string& name) {
            if (fields[col].empty()) {
                throw ParseError("csv line " + std::to_string(line_no) + ": blank value in column '" + name + "'");
            }
            return fields[col];
        };
        Row row;
        if (!parse_number(cell(ts_col, "ts"), row.ts)) {
            throw ParseError("csv line " + std::to_string(line_no) + ": non-integer timestamp");
        }
        if (!parse_number(cell(y_col, schema.endogenous_name), row.y) || !std::isfinite(row.y)) {
            throw ParseError("csv line " + std::to_string(line_no) + ": non-numeric value in column '" +
                             schema.endogenous_name + "'");
        }
        for (std::size_t j = 0; j < dis_cols.size(); ++j) {
            const auto& var = schema.discrete_vars[j];
            long long v = 0;
            if (!parse_number(cell(dis_cols[j], var.name), v)) {
                throw ParseError("csv line " + std::to_string(line_no) + ": non-integer value in discrete column '" +
                                 var.name + "'");
            }
            if (v < 0 || static_cast<std::size_t>(v) >= var.vocab_size) {
                throw VocabularyError("csv line " + std::to_string(line_no) + ": value " + std::to_string(v) +
                                      " of '" + var.name + "' outside vocabulary of size " +
                                      std::to_string(var.vocab_size));
            }
            row.dis.push_back(static_cast<int>(v));
        }
        for (std::size_t j = 0; j < con_cols.size(); ++j) {
            double v = 0.0;
            if (!parse_number(cell(con_cols[j], schema.continuous_vars[j]), v) || !std::isfinite(v)) {
                throw ParseError("csv line " + std::to_string(line_no) + ": non-numeric value in column '" +
                                 schema.continuous_vars[j] + "'");
            }
            row.con.push_back(v);
        }
        rows.push_back(std::move(row));
    }

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].ts == rows[i - 1].ts) throw ParseError("csv: duplicate timestamp " + std::to_string(rows[i].ts));
    }

    DatasetBundle b;
    b.x_dis.assign(dis_cols.size(), {});
    b.x_con.assign(con_cols.size(), {});
    for (const auto& r : rows) {
        b.timestamps.push_back(r.ts);
        b.y.push_back(r.y);
        for (std::size_t j = 0; j < r.dis.size(); ++j) b.x_dis[j].push_back(r.dis[j]);
        for (std::size_t j = 0; j < r.con.size(); ++j) b.x_con[j].push_back(r.con[j]);
    }
    b.assign_splits(0.7, 0.1);
    return b;
}

DatasetBundle load_csv(const std::filesystem::path& path, const VariableSchema& schema) {
    return parse_csv(read_text_file(path), schema);
}

std::string to_csv(const DatasetBundle& bundle, const VariableSchema& schema) {
    std::string out = "ts," + schema.endogenous_name;
    for (const auto& v : schema.discrete_vars) out += "," + v.name;
    for (const auto& name : schema.continuous_vars) out += "," + name;
    out += "\n";
    for (std::size_t r = 0; r < bundle.length(); ++r) {
        out += std::to_string(bundle.timestamps[r]);
        out += "," + format_double(bundle.y[r]);
        for (const auto& col : bundle.x_dis) out += "," + std::to_string(col[r]);
        for (const auto& col : bundle.x_con) out += "," + format_double(col[r]);
        out += "\n";
    }
    return out;
}

void save_csv(const DatasetBundle& bundle, const VariableSchema& schema, const std::filesystem::path& path) {
    write_file_atomic(path, to_csv(bundle, schema));
}

// ------------------------------------------------------------ normalizer

namespace {

ColumnStats stats_over(const std::vector<double>& values, IndexRange range) {
    ColumnStats s;
    if (range.size() == 0) return s;
    double sum = 0.0;
    for (auto i = range.begin; i < range.end; ++i) sum += values[i];
    s.mean = sum / static_cast<double>(range.size());
    double sq = 0.0;
    for (auto i = range.begin; i < range.end; ++i) sq += (values[i] - s.mean) * (values[i] - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(range.size()));
    if (s.std < 1e-8) s.std = 1.0;
    return s;
}

}  // namespace

Normalizer Normalizer::fit(const DatasetBundle& bundle) {
    Normalizer n;
    n.y_ = stats_over(bundle.y, bundle.train);
    for (const auto& col : bundle.x_con) n.con_.push_back(stats_over(col, bundle.train));
    return n;
}

double Normalizer::apply_con(std::size_t var, double v) const {
    const auto& s = con_.at(var);
    return (v - s.mean) / s.std;
}

double Normalizer::invert_con(std::size_t var, double v) const {
    const auto& s = con_.at(var);
    return v * s.std + s.mean;
}

DatasetBundle Normalizer::transform(const DatasetBundle& bundle) const {
    if (bundle.x_con.size() != con_.size()) {
        throw SchemaError("normalizer: fitted on " + std::to_string(con_.size()) +
                          " continuous variables, bundle has " + std::to_string(bundle.x_con.size()));
    }
    DatasetBundle out = bundle;
    for (auto& v : out.y) v = apply_y(v);
    for (std::size_t j = 0; j < out.x_con.size(); ++j)
        for (auto& v : out.x_con[j]) v = apply_con(j, v);
    return out;
}

void to_json(nlohmann::json& j, const Normalizer& n) {
    j = nlohmann::json{{"y", {{"mean", n.y_.mean}, {"std", n.y_.std}}}, {"continuous", nlohmann::json::array()}};
    for (const auto& s : n.con_) j["continuous"].push_back({{"mean", s.mean}, {"std", s.std}});
}

void from_json(const nlohmann::json& j, Normalizer& n) {
    n.y_ = {j.at("y").at("mean").get<double>(), j.at("y").at("std").get<double>()};
    n.con_.clear();
    for (const auto& s : j.at("continuous")) n.con_.push_back({s.at("mean").get<double>(), s.at("std").get<double>()});
}

// --------------------------------------------------------------- windows

std::size_t phase_of(std::int64_t timestamp, std::size_t period) {
    const auto p = static_cast<std::int64_t>(period);
    return static_cast<std::size_t>(((timestamp % p) + p) % p);
}

std::vector<WindowInstance> make_windows(const DatasetBundle& bundle, const VariableSchema& schema,
                                         IndexRange range, std::size_t stride) {
    if (stride < 1) throw ContractError("make_windows: stride must be >= 1");
    const auto L = schema.lookback_L;
    const auto H = schema.horizon_H;
    std::vector<WindowInstance> out;
    if (range.size() < L + H) return out;
    const std::size_t count = (range.size() - L - H) / stride + 1;
    out.reserve(count);
    auto row_at = [&](std::size_t r) {
        ExogenousRow row;
        row.dis.reserve(bundle.x_dis.size());
        for (const auto& col : bundle.x_dis) row.dis.push_back(col[r]);
        row.con.reserve(bundle.x_con.size());
        for (const auto& col : bundle.x_con) row.con.push_back(col[r]);
        return row;
    };
    for (std::size_t w = 0; w < count; ++w) {
        WindowInstance inst;
        inst.start = range.begin + w * stride;
        for (std::size_t t = 0; t < L; ++t) {
            inst.y_past.push_back(bundle.y[inst.start + t]);
            inst.x_past.push_back(row_at(inst.start + t));
        }
        for (std::size_t t = 0; t < H; ++t) {
            inst.y_target.push_back(bundle.y[inst.start + L + t]);
            inst.x_future.push_back(row_at(inst.start + L + t));
        }
        inst.phase0 = phase_of(bundle.timestamps[inst.start + L], schema.period_T);
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<WindowInstance> make_windows(const DatasetBundle& bundle, const VariableSchema& schema,
                                         Split split, std::size_t stride) {
    return make_windows(bundle, schema, bundle.range(split), stride);
}

// ------------------------------------------------------------- synthesis

void SynthConfig::validate() const {
    if (regimes < 1) throw ConfigError("synth: regimes must be >= 1");
    if (period < 1) throw ConfigError("synth: period must be >= 1");
    if (periods < 1) throw ConfigError("synth: periods must be >= 1");
    if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
    if (lookback < 1 || horizon < 1) throw ConfigError("synth: lookback and horizon must be >= 1");
    if (min_run < 1 || max_run < min_run) throw ConfigError("synth: need 1 <= min_run <= max_run");
    if (distractor_discrete > 0 && distractor_vocab < 1) throw ConfigError("synth: distractor_vocab must be >= 1");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"regimes", c.regimes},
                       {"period", c.period},
                       {"periods", c.periods},
                       {"noise_sigma", c.noise_sigma},
                       {"lookback", c.lookback},
                       {"horizon", c.horizon},
                       {"min_run", c.min_run},
                       {"max_run", c.max_run},
                       {"distractor_continuous", c.distractor_continuous},
                       {"distractor_discrete", c.distractor_discrete},
                       {"distractor_vocab", c.distractor_vocab},
                       {"train_fraction", c.train_fraction},
                       {"val_fraction", c.val_fraction}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    SynthConfig d;
    c.regimes = j.value("regimes", d.regimes);
    c.period = j.value("period", d.period);
    c.periods = j.value("periods", d.periods);
    c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    c.lookback = j.value("lookback", d.lookback);
    c.horizon = j.value("horizon", d.horizon);
    c.min_run = j.value("min_run", d.min_run);
    c.max_run = j.value("max_run", d.max_run);
    c.distractor_continuous = j.value("distractor_continuous", d.distractor_continuous);
    c.distractor_discrete = j.value("distractor_discrete", d.distractor_discrete);
    c.distractor_vocab = j.value("distractor_vocab", d.distractor_vocab);
    c.train_fraction = j.value("train_fraction", d.train_fraction);
    c.val_fraction = j.value("val_fraction", d.val_fraction);
}

SynthDataset synth_generate(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    const auto K = config.regimes;
    const auto T = config.period;
    const std::size_t seasons = (K + 1) / 2;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    SynthDataset out;
    auto& schema = out.schema;
    schema.endogenous_name = "load";
    schema.discrete_vars = {{"is_holiday", 2}, {"season", seasons}, {"phase", T}};
    for (std::size_t i = 0; i < config.distractor_discrete; ++i) {
        schema.discrete_vars.push_back({"noise_d" + std::to_string(i), config.distractor_vocab});
    }
    schema.continuous_vars = {"temp"};
    for (std::size_t i = 0; i < config.distractor_continuous; ++i) {
        schema.continuous_vars.push_back("noise_c" + std::to_string(i));
    }
    schema.period_T = T;
    schema.lookback_L = config.lookback;
    schema.horizon_H = config.horizon;

    // Each regime gets a distinct level plus a few random harmonics.
    out.templates.assign(K, std::vector<double>(T, 0.0));
    for (std::size_t r = 0; r < K; ++r) {
        const double level = 1.5 * (static_cast<double>(r) - 0.5 * static_cast<double>(K - 1));
        for (int h = 1; h <= 3; ++h) {
            const double amp = (0.6 + 0.8 * unif(rng)) / h;
            const double phi = 2.0 * std::numbers::pi * unif(rng);
            for (std::size_t s = 0; s < T; ++s) {
                out.templates[r][s] += amp * std::sin(2.0 * std::numbers::pi * h * static_cast<double>(s) /
                                                          static_cast<double>(T) + phi);
            }
        }
        for (auto& v : out.templates[r]) v += level;
    }

    // Regime runs over whole periods. Runs visit regimes in shuffled blocks
    // of K so every regime appears early; consecutive runs differ when K > 1.
    std::vector<std::size_t> period_regime;
    std::uniform_int_distribution<std::size_t> run_len(config.min_run, config.max_run);
    std::vector<std::size_t> block(K);
    std::size_t previous = K;
    while (period_regime.size() < config.periods) {
        std::iota(block.begin(), block.end(), std::size_t{0});
        std::shuffle(block.begin(), block.end(), rng);
        if (K > 1 && block.front() == previous) std::swap(block.front(), block.back());
        for (const auto regime : block) {
            const auto len = run_len(rng);
            for (std::size_t i = 0; i < len && period_regime.size() < config.periods; ++i) {
                period_regime.push_back(regime);
            }
            previous = regime;
        }
    }

    const std::size_t n = T * config.periods;
    auto& b = out.bundle;
    b.x_dis.assign(schema.discrete_vars.size(), std::vector<int>(n));
    b.x_con.assign(schema.continuous_vars.size(), std::vector<double>(n));
    out.regime.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t phase = t % T;
        const std::size_t r = period_regime[t / T];
        const std::size_t season = r / 2;
        const std::size_t holiday = r % 2;
        b.timestamps.push_back(static_cast<std::int64_t>(t));
        b.x_dis[0][t] = static_cast<int>(holiday);
        b.x_dis[1][t] = static_cast<int>(season);
        b.x_dis[2][t] = static_cast<int>(phase);
        b.x_con[0][t] = 10.0 * static_cast<double>(season) + 3.0 * static_cast<double>(holiday) +
                        2.0 * std::sin(2.0 * std::numbers::pi * static_cast<double>(phase) / static_cast<double>(T)) +
                        normal(rng);
        out.regime[t] = static_cast<int>(r);
        b.y.push_back(out.templates[r][phase] + config.noise_sigma * normal(rng));
    }
    for (std::size_t i = 0; i < config.distractor_discrete; ++i) {
        std::uniform_int_distribution<int> dv(0, static_cast<int>(config.distractor_vocab) - 1);
        for (std::size_t t = 0; t < n; ++t) b.x_dis[3 + i][t] = dv(rng);
    }
    for (std::size_t i = 0; i < config.distractor_continuous; ++i) {
        for (std::size_t t = 0; t < n; ++t) b.x_con[1 + i][t] = normal(rng);
    }
    b.assign_splits(config.train_fraction, config.val_fraction);
    return out;
}

std::vector<int> window_regimes(const std::vector<WindowInstance>& windows, const std::vector<int>& regime,
                                const VariableSchema& schema) {
    std::vector<int> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        std::map<int, std::size_t> votes;
        const auto first = w.start + schema.lookback_L;
        for (std::size_t t = 0; t < schema.horizon_H; ++t) ++votes[regime.at(first + t)];
        int best = regime.at(first);
        std::size_t best_votes = votes[best];
        for (const auto& [r, c] : votes) {
            if (c > best_votes) {
                best = r;
                best_votes = c;
            }
        }
        out.push_back(best);
    }
    return out;
}

}  // namespace protots
