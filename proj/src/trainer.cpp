#include "protots/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "protots/errors.hpp"

namespace protots {

void TrainConfig::validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(train_data_fraction > 0.0 && train_data_fraction <= 1.0)) {
        throw ConfigError("train: train_data_fraction must be in (0, 1]");
    }
    for (const auto& r : stage_plan) {
        if (r.m < 2) throw ConfigError("train: split rounds need m >= 2");
        if (r.k < 1) throw ConfigError("train: split rounds need k >= 1");
        if (!(r.alpha > 0.0 && r.alpha <= 100.0)) throw ConfigError("train: split alpha must be in (0, 100]");
    }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"max_epochs", c.max_epochs},
                       {"patience", c.patience},
                       {"batch_size", c.batch_size},
                       {"lambda", c.lambda},
                       {"seed", c.seed},
                       {"loss_kind", c.loss_kind == LossKind::kL1 ? "L1" : "L2"},
                       {"entropy_all_groups", c.entropy_all_groups},
                       {"clip_norm", c.clip_norm},
                       {"train_data_fraction", c.train_data_fraction},
                       {"stage_plan", nlohmann::json::array()}};
    for (const auto& r : c.stage_plan) {
        j["stage_plan"].push_back({{"m", r.m}, {"k", r.k}, {"alpha", r.alpha}, {"leaves", r.leaves}});
    }
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.lr = j.value("lr", d.lr);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.patience = j.value("patience", d.patience);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lambda = j.value("lambda", d.lambda);
    c.seed = j.value("seed", d.seed);
    const auto kind = j.value("loss_kind", std::string("L1"));
    if (kind == "L1") c.loss_kind = LossKind::kL1;
    else if (kind == "L2") c.loss_kind = LossKind::kL2;
    else throw ConfigError("train: loss_kind must be \"L1\" or \"L2\"");
    c.entropy_all_groups = j.value("entropy_all_groups", d.entropy_all_groups);
    c.clip_norm = j.value("clip_norm", d.clip_norm);
    c.train_data_fraction = j.value("train_data_fraction", d.train_data_fraction);
    c.stage_plan.clear();
    if (j.contains("stage_plan")) {
        for (const auto& r : j.at("stage_plan")) {
            SplitRound round;
            round.m = r.value("m", round.m);
            round.k = r.value("k", round.k);
            round.alpha = r.value("alpha", round.alpha);
            round.leaves = r.value("leaves", std::vector<NodeId>{});
            c.stage_plan.push_back(std::move(round));
        }
    }
}

std::vector<double> TrainReport::train_losses() const {
    std::vector<double> out;
    for (const auto& e : epochs) out.push_back(e.train_loss);
    return out;
}

void to_json(nlohmann::json& j, const TrainReport& r) {
    j = nlohmann::json{{"epochs", nlohmann::json::array()},
                       {"stages", nlohmann::json::array()},
                       {"splits", nlohmann::json::array()},
                       {"wall_clock_seconds", r.wall_clock_seconds}};
    for (const auto& e : r.epochs) {
        j["epochs"].push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mae", e.val_mae}});
    }
    for (const auto& s : r.stages) {
        j["stages"].push_back({{"stage", s.stage},
                               {"first_epoch", s.first_epoch},
                               {"last_epoch", s.last_epoch},
                               {"initial_val_mae", s.initial_val_mae},
                               {"best_val_mae", s.best_val_mae},
                               {"best_epoch", s.best_epoch}});
    }
    for (const auto& s : r.splits) {
        j["splits"].push_back({{"stage", s.stage},
                               {"after_epoch", s.after_epoch},
                               {"m", s.m},
                               {"explicit", s.explicit_choice},
                               {"leaves", s.leaves},
                               {"children", s.children},
                               {"seeds", s.seeds}});
    }
    if (r.test_mse) j["test"] = {{"mse", *r.test_mse}, {"mae", *r.test_mae}};
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a simple combination
    std::uint64_t x = base ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Tensor forecast_loss(Tape& tape, const Tensor& pred, const Tensor& target, const Tensor& root_weights,
                     double lambda, LossKind kind) {
    auto fit = kind == LossKind::kL1 ? tape.l1(pred, target) : tape.sq_error(pred, target);
    if (lambda == 0.0) return fit;
    return tape.sub(fit, tape.scale(tape.neg_entropy(root_weights), lambda));
}

void Adam::step(const ParameterList& params) {
    for (const auto& p : params) {
        if (!p.trainable) continue;
        Tensor t = p.tensor;
        auto& st = state_[t.id()];
        const auto n = t.size();
        if (st.m.empty()) {
            st.m.assign(n, 0.0);
            st.v.assign(n, 0.0);
        }
        ++st.t;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
        auto data = t.mutable_data();
        const auto grad = t.grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
            st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
            const double mhat = st.m[i] / c1;
            const double vhat = st.v[i] / c2;
            data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

double mean_absolute_error(const ProtoTSModel& model, const std::vector<WindowInstance>& windows) {
    if (windows.empty()) return 0.0;
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& w : windows) {
        const auto pred = model.predict(w);
        for (std::size_t t = 0; t < pred.size(); ++t) total += std::abs(pred[t] - w.y_target[t]);
        n += pred.size();
    }
    return total / static_cast<double>(n);
}

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot take_snapshot(const ParameterList& params) {
    Snapshot s;
    s.reserve(params.size());
    for (const auto& p : params) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return s;
}

void restore_snapshot(const ParameterList& params, const Snapshot& s) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].tensor;
        std::copy(s[i].begin(), s[i].end(), t.mutable_data().begin());
    }
}

double parameter_norm(const ParameterList& params) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double v : p.tensor.data()) sq += v * v;
    return std::sqrt(sq);
}

void clip_gradients(const ParameterList& params, double max_norm) {
    if (!(max_norm > 0.0)) return;
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double factor = max_norm / norm;
    for (const auto& p : params) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        Tensor t = p.tensor;
        for (auto& g : t.mutable_grad()) g *= factor;
    }
}

const std::vector<WindowInstance>& selection_windows(const TrainingData& data) {
    return data.val.empty() ? data.train : data.val;
}

}  // namespace

void train_stage(ProtoTSModel& model, const TrainingData& data, const TrainConfig& config, std::size_t stage,
                 TrainReport& report, const EpochCallback& on_epoch) {
    config.validate();
    if (data.train.empty()) throw ContractError("train_stage: no training windows");

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    {
        const auto keep = static_cast<std::size_t>(
            std::ceil(config.train_data_fraction * static_cast<double>(order.size())));
        order.erase(order.begin(), order.end() - static_cast<std::ptrdiff_t>(std::max<std::size_t>(keep, 1)));
    }

    const auto params = model.parameters();
    const auto& selection = selection_windows(data);
    Adam optimizer(config.lr);

    StageRecord record;
    record.stage = stage;
    record.first_epoch = report.epochs.empty() ? 1 : report.epochs.back().epoch + 1;
    record.initial_val_mae = mean_absolute_error(model, selection);
    record.best_val_mae = record.initial_val_mae;
    Snapshot best = take_snapshot(params);
    std::size_t stale = 0;
    std::size_t epoch = record.first_epoch - 1;

    for (std::size_t e = 0; e < config.max_epochs; ++e) {
        ++epoch;
        std::mt19937_64 rng(derive_seed(config.seed, stage + 1, e + 1));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += config.batch_size, ++batch) {
            const auto end = std::min(order.size(), begin + config.batch_size);
            const double inv = 1.0 / static_cast<double>(end - begin);
            for (const auto& p : params) Tensor(p.tensor).clear_grad();
            for (auto i = begin; i < end; ++i) {
                const auto& w = data.train[order[i]];
                Tape tape;
                auto f = model.forward(tape, w);
                auto target = Tensor::vector(w.y_target);
                Tensor loss = forecast_loss(tape, f.prediction, target, f.weights.root_weights, config.lambda,
                                            config.loss_kind);
                if (config.entropy_all_groups && config.lambda > 0.0) {
                    for (const auto& g : f.weights.child_groups) {
                        loss = tape.sub(loss, tape.scale(tape.neg_entropy(g), config.lambda));
                    }
                }
                if (!std::isfinite(loss.item())) {
                    std::ostringstream msg;
                    msg << "training diverged: non-finite loss at stage " << stage << ", epoch " << epoch
                        << ", batch " << batch << ", parameter norm " << parameter_norm(params);
                    throw NumericError(msg.str());
                }
                loss_sum += loss.item();
                loss = tape.scale(loss, inv);
                tape.backward(loss);
            }
            clip_gradients(params, config.clip_norm);
            optimizer.step(params);
            for (const auto& p : params) {
                for (double v : p.tensor.data()) {
                    if (!std::isfinite(v)) {
                        std::ostringstream msg;
                        msg << "training diverged: non-finite parameter " << p.name << " at stage " << stage
                            << ", epoch " << epoch << ", batch " << batch;
                        throw NumericError(msg.str());
                    }
                }
            }
        }

        EpochRecord er;
        er.stage = stage;
        er.epoch = epoch;
        er.train_loss = loss_sum / static_cast<double>(order.size());
        er.val_mae = mean_absolute_error(model, selection);
        report.epochs.push_back(er);
        if (on_epoch) on_epoch(er);

        if (er.val_mae < record.best_val_mae) {
            record.best_val_mae = er.val_mae;
            record.best_epoch = epoch;
            best = take_snapshot(params);
            stale = 0;
        } else if (++stale >= config.patience) {
            break;
        }
    }
    restore_snapshot(params, best);
    for (const auto& p : params) Tensor(p.tensor).clear_grad();
    record.last_epoch = epoch;
    report.stages.push_back(record);
}

TrainReport staged_train(ProtoTSModel& model, const TrainingData& data, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    TrainReport report;
    train_stage(model, data, config, 0, report, on_epoch);

    for (std::size_t r = 0; r < config.stage_plan.size(); ++r) {
        const auto& round = config.stage_plan[r];
        SplitEvent ev;
        ev.stage = r + 1;
        ev.after_epoch = report.epochs.empty() ? 0 : report.epochs.back().epoch;
        ev.m = round.m;
        ev.explicit_choice = !round.leaves.empty();
        if (ev.explicit_choice) {
            ev.leaves = round.leaves;
            for (auto id : ev.leaves) {
                if (!model.tree().node(id).is_leaf()) {
                    throw ContractError("stage plan: prototype " + std::to_string(id) + " is not a leaf");
                }
            }
        } else {
            ev.leaves = splitting_rule(model, data.train, round.k, round.alpha).selected;
        }
        for (auto id : ev.leaves) {
            const auto seed = derive_seed(config.seed, 1000 + r, id);
            ev.seeds.push_back(seed);
            ev.children.push_back(model.tree().split(id, round.m, seed, model.config().split_jitter));
        }
        report.splits.push_back(ev);
        train_stage(model, data, config, r + 1, report, on_epoch);
    }

    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace protots
