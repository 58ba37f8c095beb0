#include <cmath>

#include "doctest.h"
#include "protots/errors.hpp"
#include "protots/evaluation.hpp"
#include "protots/trainer.hpp"
#include "test_support.hpp"

using namespace protots;
using namespace protots::testing;

namespace {

struct SmallProblem {
    SynthDataset ds;
    DatasetBundle normalized;
    TrainingData data;
};

SmallProblem small_problem(std::size_t periods = 20, std::uint64_t seed = 3) {
    SynthConfig c;
    c.periods = periods;
    c.lookback = 12;
    c.horizon = 6;
    c.period = 12;
    c.min_run = 2;
    c.max_run = 3;
    SmallProblem p;
    p.ds = synth_generate(c, seed);
    p.normalized = Normalizer::fit(p.ds.bundle).transform(p.ds.bundle);
    p.data.train = make_windows(p.normalized, p.ds.schema, Split::kTrain, 2);
    p.data.val = make_windows(p.normalized, p.ds.schema, Split::kVal);
    return p;
}

ModelConfig small_model(std::uint64_t seed = 1) {
    ModelConfig m;
    m.encoder.d = 8;
    m.encoder.d_bottle = 3;
    m.n_roots = 3;
    m.seed = seed;
    return m;
}

std::vector<std::vector<double>> snapshot(const ParameterList& params) {
    std::vector<std::vector<double>> out;
    for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

}  // namespace

TEST_CASE("loss identities") {
    Tape tape(Tape::Mode::kInference);
    auto y = Tensor::vector({0.5, -1.0, 2.0});
    auto uniform = Tensor::vector({0.25, 0.25, 0.25, 0.25});
    CHECK(forecast_loss(tape, y, y, uniform, 0.0).item() == 0.0);
    CHECK(std::abs(forecast_loss(tape, y, y, uniform, 1.0).item() - std::log(4.0)) < 1e-9);
    CHECK(std::abs(forecast_loss(tape, y, y, uniform, 0.3).item() - 0.3 * std::log(4.0)) < 1e-9);
    CHECK(std::abs(forecast_loss(tape, y, y, Tensor::vector({1, 0, 0, 0}), 5.0).item()) < 1e-9);

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        auto pred = Tensor::vector(random_values(6, rng));
        auto target = Tensor::vector(random_values(6, rng));
        double l1 = 0.0, l2 = 0.0;
        for (std::size_t t = 0; t < 6; ++t) {
            l1 += std::abs(pred.at(t) - target.at(t));
            l2 += (pred.at(t) - target.at(t)) * (pred.at(t) - target.at(t));
        }
        auto f = tape.softmax_neg(Tensor::vector(random_values(4, rng, 0.0, 3.0)));
        CHECK(std::abs(forecast_loss(tape, pred, target, f, 0.0).item() - l1) < 1e-12);
        CHECK(std::abs(forecast_loss(tape, pred, target, f, 0.0, LossKind::kL2).item() - l2) < 1e-12);
        double h = 0.0;
        for (double p : f.data()) h -= p * std::log(p);
        CHECK(std::abs(forecast_loss(tape, pred, target, f, 0.7).item() - (l1 + 0.7 * h)) < 1e-12);
    }
}

TEST_CASE("loss grows with root-weight entropy") {
    Tape tape(Tape::Mode::kInference);
    auto y = Tensor::vector({1.0, 2.0});
    double previous = -1.0;
    // entropy increases as the mass spreads from one root to two
    for (double q : {0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5}) {
        auto f = Tensor::vector({1.0 - q, q});
        const double loss = forecast_loss(tape, y, y, f, 0.5).item();
        CHECK(loss > previous);
        previous = loss;
    }
}

TEST_CASE("loss gradients match finite differences") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        auto pred = random_tensor({5}, rng);
        auto target = random_tensor({5}, rng, false);
        auto d = random_tensor({4}, rng, true, 2.0);
        for (auto kind : {LossKind::kL1, LossKind::kL2}) {
            auto r = grad_check({pred, d}, [&](Tape& t) {
                return forecast_loss(t, pred, target, t.softmax_neg(d), 0.3, kind);
            });
            CHECK(r.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("adam first step moves each coordinate by the learning rate") {
    auto x = Tensor::vector({1.0, -2.0, 0.5}, true);
    ParameterList params = {{"x", x, true}};
    auto g = x.mutable_grad();
    g[0] = 3.0;
    g[1] = -0.01;
    g[2] = 0.0;
    Adam adam(0.1);
    adam.step(params);
    CHECK(x.at(0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(x.at(1) == doctest::Approx(-1.9).epsilon(1e-5));
    CHECK(x.at(2) == 0.5);

    auto frozen = Tensor::vector({1.0}, true);
    frozen.mutable_grad()[0] = 1.0;
    adam.step({{"frozen", frozen, false}});
    CHECK(frozen.at(0) == 1.0);
}

TEST_CASE("derive_seed is deterministic and spreads inputs") {
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("train config validation and JSON") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    auto bad = c;
    bad.lr = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.patience = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.lambda = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.stage_plan.push_back({1, 1, 50.0, {}});
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    c.lr = 0.005;
    c.loss_kind = LossKind::kL2;
    c.stage_plan.push_back({3, 2, 20.0, {1, 2}});
    nlohmann::json j = c;
    CHECK(j["loss_kind"] == "L2");
    auto back = j.get<TrainConfig>();
    CHECK(back.lr == 0.005);
    CHECK(back.loss_kind == LossKind::kL2);
    REQUIRE(back.stage_plan.size() == 1);
    CHECK(back.stage_plan[0].m == 3);
    CHECK(back.stage_plan[0].leaves == std::vector<NodeId>{1, 2});
    CHECK_THROWS_AS(nlohmann::json({{"loss_kind", "huber"}}).get<TrainConfig>(), ConfigError);
}

TEST_CASE("model forward is consistent with its parts") {
    auto schema = tiny_schema(6, 3, 4, 2, 1);
    std::mt19937_64 rng(3);
    ProtoTSModel model(schema, small_model());
    model.tree().split(1, 2, 5);
    auto w = random_window(schema, rng);
    Tape tape(Tape::Mode::kInference);
    auto f = model.forward(tape, w);
    std::vector<double> z(f.z.data().begin(), f.z.data().end());
    auto want = brute_predict(z, model.tree(), w.phase0, 3);
    auto got = model.predict(w);
    for (std::size_t t = 0; t < 3; ++t) CHECK(std::abs(got[t] - want[t]) < 1e-12);
    w.phase0 = 4;
    CHECK_THROWS_AS(model.forward(tape, w), ContractError);
}

TEST_CASE("full model gradient matches finite differences") {
    auto schema = tiny_schema(16, 8, 6, 2, 2);
    std::mt19937_64 rng(4);
    auto cfg = small_model();
    cfg.n_roots = 2;
    ProtoTSModel model(schema, cfg);
    randomize(model.encoder().parameters(), rng, 0.3);
    model.tree().split(0, 2, 9, 0.3);
    model.tree().split(1, 2, 10, 0.3);
    auto w = random_window(schema, rng);
    std::vector<Tensor> inputs;
    for (const auto& p : model.parameters()) {
        if (p.trainable) inputs.push_back(p.tensor);
    }
    auto r = grad_check(inputs, [&](Tape& t) {
        auto f = model.forward(t, w);
        return forecast_loss(t, f.prediction, Tensor::vector(w.y_target), f.weights.root_weights, 0.1);
    });
    INFO("worst " << r.worst << " skipped " << r.skipped);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("pattern initialization from data") {
    auto p = small_problem(30);
    ProtoTSModel model(p.ds.schema, small_model());
    std::vector<std::vector<double>> before;
    for (auto id : model.tree().roots()) {
        before.emplace_back(model.tree().node(id).pattern.data().begin(), model.tree().node(id).pattern.data().end());
    }
    model.init_patterns_from_data(p.data.train);
    // roots receive distinct data-driven offsets
    std::set<std::vector<double>> distinct;
    for (auto id : model.tree().roots()) {
        distinct.insert({model.tree().node(id).pattern.data().begin(), model.tree().node(id).pattern.data().end()});
    }
    CHECK(distinct.size() == model.tree().roots().size());
    CHECK(mean_absolute_error(model, p.data.val) < 1.0);

    ProtoTSModel again(p.ds.schema, small_model());
    again.init_patterns_from_data(p.data.train);
    for (auto id : model.tree().roots()) {
        CHECK(std::vector<double>(model.tree().node(id).pattern.data().begin(), model.tree().node(id).pattern.data().end()) ==
              std::vector<double>(again.tree().node(id).pattern.data().begin(), again.tree().node(id).pattern.data().end()));
    }
}

TEST_CASE("zero learning rate leaves every parameter unchanged") {
    auto p = small_problem();
    ProtoTSModel model(p.ds.schema, small_model());
    const auto before = snapshot(model.parameters());
    TrainConfig c;
    c.lr = 0.0;
    c.max_epochs = 3;
    c.patience = 10;
    auto report = staged_train(model, p.data, c);
    CHECK(report.epochs.size() == 3);
    CHECK(snapshot(model.parameters()) == before);
}

TEST_CASE("early stopping honours patience") {
    auto p = small_problem();
    ProtoTSModel model(p.ds.schema, small_model());
    TrainConfig c;
    c.lr = 0.0;  // validation MAE never improves
    c.max_epochs = 50;
    c.patience = 4;
    auto report = staged_train(model, p.data, c);
    CHECK(report.epochs.size() == 4);
    REQUIRE(report.stages.size() == 1);
    CHECK(report.stages[0].best_epoch == 0);
    CHECK(report.stages[0].last_epoch == 4);
}

TEST_CASE("a single instance with one prototype is fitted") {
    auto schema = tiny_schema(4, 4, 4, 1, 1);
    std::mt19937_64 rng(5);
    auto cfg = small_model();
    cfg.n_roots = 1;
    ProtoTSModel model(schema, cfg);
    auto w = random_window(schema, rng);
    TrainingData data{{w}, {}};
    TrainConfig c;
    c.lambda = 0.0;
    c.batch_size = 1;
    c.max_epochs = 2000;
    c.patience = 2000;
    staged_train(model, data, c);
    const auto pred = model.predict(w);
    double l1 = 0.0;
    for (std::size_t t = 0; t < 4; ++t) l1 += std::abs(pred[t] - w.y_target[t]);
    CHECK(l1 < 1e-3);
}

TEST_CASE("identical seeds give identical training runs") {
    auto p = small_problem();
    TrainConfig c;
    c.max_epochs = 3;
    c.stage_plan.push_back({2, 1, 50.0, {}});
    auto run = [&] {
        ProtoTSModel model(p.ds.schema, small_model(4));
        model.init_patterns_from_data(p.data.train);
        auto report = staged_train(model, p.data, c);
        return std::make_pair(report.train_losses(), snapshot(model.parameters()));
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first.size() >= 2);
}

TEST_CASE("locked patterns survive training; unlocked ones drift") {
    auto p = small_problem();
    ProtoTSModel model(p.ds.schema, small_model());
    const std::vector<double> edit(p.ds.schema.period_T, 0.25);
    model.tree().edit_pattern(0, edit, true);
    model.tree().edit_pattern(1, edit, false);
    TrainConfig c;
    c.lr = 1e-2;
    c.max_epochs = 100;
    c.patience = 100;
    c.batch_size = 256;
    TrainingData data{p.data.train, {}};
    auto report = staged_train(model, data, c);
    CHECK(report.epochs.size() == 100);
    const auto locked = model.tree().node(0).pattern.data();
    CHECK(std::vector<double>(locked.begin(), locked.end()) == edit);
    const auto free = model.tree().node(1).pattern.data();
    CHECK(std::vector<double>(free.begin(), free.end()) != edit);
}

TEST_CASE("staged training") {
    auto p = small_problem(30);
    TrainConfig c;
    c.max_epochs = 3;

    SUBCASE("an empty plan is a single stage") {
        ProtoTSModel a(p.ds.schema, small_model());
        ProtoTSModel b(p.ds.schema, small_model());
        auto ra = staged_train(a, p.data, c);
        TrainReport rb;
        train_stage(b, p.data, c, 0, rb);
        CHECK(ra.train_losses() == rb.train_losses());
        CHECK(snapshot(a.parameters()) == snapshot(b.parameters()));
        CHECK(ra.splits.empty());
    }
    SUBCASE("splitting every root doubles the leaves once") {
        ProtoTSModel model(p.ds.schema, small_model());
        c.stage_plan.push_back({2, 1, 100.0, {}});
        auto report = staged_train(model, p.data, c);
        CHECK(model.tree().leaves().size() == 6);
        CHECK(model.tree().depth() == 2);
        REQUIRE(report.splits.size() == 1);
        CHECK(report.splits[0].leaves == std::vector<NodeId>{0, 1, 2});
        CHECK(report.stages.size() == 2);
        // epoch numbering is monotone across stages
        for (std::size_t i = 1; i < report.epochs.size(); ++i) {
            CHECK(report.epochs[i].epoch == report.epochs[i - 1].epoch + 1);
        }
        CHECK(report.stages[1].first_epoch == report.stages[0].last_epoch + 1);
    }
    SUBCASE("validation error never regresses across a split") {
        ProtoTSModel model(p.ds.schema, small_model());
        model.init_patterns_from_data(p.data.train);
        c.stage_plan.push_back({2, 1, 50.0, {}});
        c.stage_plan.push_back({3, 2, 100.0, {}});
        auto report = staged_train(model, p.data, c);
        REQUIRE(report.stages.size() == 3);
        for (std::size_t s = 1; s < report.stages.size(); ++s) {
            CHECK(report.stages[s].best_val_mae <= report.stages[s - 1].best_val_mae + 1e-6);
        }
        CHECK(std::abs(mean_absolute_error(model, p.data.val) - report.stages.back().best_val_mae) < 1e-12);
    }
    SUBCASE("explicit expert choice bypasses the rule") {
        ProtoTSModel model(p.ds.schema, small_model());
        c.stage_plan.push_back({3, 1, 100.0, {2}});
        auto report = staged_train(model, p.data, c);
        REQUIRE(report.splits.size() == 1);
        CHECK(report.splits[0].explicit_choice);
        CHECK(model.tree().node(2).children.size() == 3);
        CHECK(model.tree().node(0).is_leaf());
    }
    SUBCASE("explicit choice of a non-leaf is rejected") {
        ProtoTSModel model(p.ds.schema, small_model());
        c.stage_plan.push_back({2, 1, 100.0, {0}});
        c.stage_plan.push_back({2, 1, 100.0, {0}});
        CHECK_THROWS_AS(staged_train(model, p.data, c), ContractError);
    }
}

TEST_CASE("splitting rule on a model uses path weights and MAE") {
    auto p = small_problem();
    ProtoTSModel model(p.ds.schema, small_model());
    model.tree().split(1, 2, 3);
    const auto leaves = model.tree().leaves();
    std::vector<std::vector<double>> scores;
    std::vector<double> losses;
    for (const auto& w : p.data.train) {
        Tape tape(Tape::Mode::kInference);
        auto f = model.forward(tape, w);
        scores.emplace_back(f.weights.weights.data().begin(), f.weights.weights.data().end());
        double mae = 0.0;
        for (std::size_t t = 0; t < w.y_target.size(); ++t) mae += std::abs(f.prediction.at(t) - w.y_target[t]);
        losses.push_back(mae / static_cast<double>(w.y_target.size()));
    }
    for (std::size_t k : {1, 2}) {
        for (int alpha : {20, 50, 100}) {
            auto got = splitting_rule(model, p.data.train, k, alpha);
            auto want = brute_select(leaves, scores, losses, k, alpha);
            CHECK(std::set<NodeId>(got.selected.begin(), got.selected.end()) == want);
        }
    }
}

TEST_CASE("report JSON carries stages and splits") {
    auto p = small_problem();
    ProtoTSModel model(p.ds.schema, small_model());
    TrainConfig c;
    c.max_epochs = 2;
    c.stage_plan.push_back({2, 1, 100.0, {}});
    auto report = staged_train(model, p.data, c);
    nlohmann::json j = report;
    CHECK(j["epochs"].size() == report.epochs.size());
    CHECK(j["stages"].size() == 2);
    CHECK(j["splits"][0]["leaves"].size() == 3);
    CHECK(j.contains("wall_clock_seconds"));
}
