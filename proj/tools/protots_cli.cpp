#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "protots/checkpoint.hpp"
#include "protots/data.hpp"
#include "protots/errors.hpp"
#include "protots/evaluation.hpp"
#include "protots/io.hpp"
#include "protots/service.hpp"
#include "protots/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace protots;

namespace {

struct Options {
    std::string config;
    std::string data;
    std::string schema;
    std::string checkpoint;
    std::string out;
    std::string split = "test";
    std::string bind = "127.0.0.1:8080";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> regimes;
    std::optional<std::size_t> periods;
    std::optional<std::size_t> instance;
    std::size_t k = 3;
    bool denormalize = false;
    bool csv = false;
};

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError("missing --" + what);
    if (!fs::exists(path)) throw IoError(what + " not found: " + path);
}

json load_config(const Options& o) {
    if (o.config.empty()) return json::object();
    require_file(o.config, "config");
    try {
        auto j = json::parse(read_text_file(o.config));
        if (!j.is_object()) throw ConfigError("config " + o.config + " must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + o.config + ": " + e.what());
    }
}

template <typename T>
T section(const json& config, const char* name) {
    return config.contains(name) ? config.at(name).get<T>() : json::object().get<T>();
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, j.dump(2) + "\n");
}

// Applies the configured split fractions (default 0.7 / 0.1).
DatasetBundle load_data(const Options& o, const json& config, const VariableSchema& schema) {
    require_file(o.data, "data");
    auto bundle = load_csv(o.data, schema);
    if (config.contains("splits")) {
        const auto& s = config.at("splits");
        bundle.assign_splits(s.value("train_fraction", 0.7), s.value("val_fraction", 0.1));
    }
    return bundle;
}

int run_synth(const Options& o) {
    const auto config = load_config(o);
    auto sc = section<SynthConfig>(config, "synth");
    if (o.regimes) sc.regimes = *o.regimes;
    if (o.periods) sc.periods = *o.periods;
    const std::uint64_t seed = o.seed.value_or(config.value("seed", std::uint64_t{0}));
    if (o.out.empty()) throw ConfigError("missing --out");
    const auto ds = synth_generate(sc, seed);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    write_file_atomic(dir / "data.csv", to_csv(ds.bundle, ds.schema));
    write_json(dir / "schema.json", ds.schema);
    std::ostringstream labels;
    labels << "timestamp,regime\n";
    for (std::size_t i = 0; i < ds.regime.size(); ++i) labels << ds.bundle.timestamps[i] << ',' << ds.regime[i] << '\n';
    write_file_atomic(dir / "labels.csv", labels.str());
    write_json(dir / "synth_config.json", json{{"synth", sc}, {"seed", seed}});
    std::cout << "wrote " << ds.bundle.length() << " rows to " << dir.string() << "\n";
    return 0;
}

int run_train(const Options& o) {
    const auto config = load_config(o);
    require_file(o.schema, "schema");
    const auto schema = load_schema(o.schema);
    const auto raw = load_data(o, config, schema);
    auto mc = section<ModelConfig>(config, "model");
    auto tc = section<TrainConfig>(config, "train");
    if (o.seed) {
        mc.seed = *o.seed;
        tc.seed = *o.seed;
    }
    if (o.out.empty()) throw ConfigError("missing --out");

    ModelCheckpoint ck;
    ck.schema = schema;
    ck.normalizer = Normalizer::fit(raw);
    const auto data = ck.normalizer.transform(raw);
    TrainingData windows{make_windows(data, schema, Split::kTrain), make_windows(data, schema, Split::kVal)};
    const auto test = make_windows(data, schema, Split::kTest);
    ck.model = ProtoTSModel(schema, mc);
    if (config.value("init_patterns", true)) ck.model.init_patterns_from_data(windows.train);

    auto report = staged_train(ck.model, windows, tc, [](const EpochRecord& e) {
        std::cerr << "stage " << e.stage << " epoch " << e.epoch << " loss " << e.train_loss << " val_mae " << e.val_mae
                  << "\n";
    });
    std::optional<double> naive_mae;
    if (!test.empty()) {
        const auto m = evaluate(ck.model, test);
        report.test_mse = m.mse;
        report.test_mae = m.mae;
        naive_mae = SeasonalNaive(data, schema.period_T).evaluate(test).mae;
    }
    ck.train_config = tc;
    ck.seed_lineage = {mc.seed, tc.seed};
    for (const auto& s : report.splits) ck.seed_lineage.insert(ck.seed_lineage.end(), s.seeds.begin(), s.seeds.end());
    ck.revision = 1;

    const fs::path dir(o.out);
    fs::create_directories(dir);
    save_checkpoint(ck, dir / "checkpoint.ptsc");
    json rj = report;
    if (naive_mae) rj["test"]["seasonal_naive_mae"] = *naive_mae;
    write_json(dir / "report.json", rj);
    std::cout << "checkpoint " << (dir / "checkpoint.ptsc").string();
    if (report.test_mae) std::cout << " test_mae " << *report.test_mae;
    std::cout << "\n";
    return 0;
}

struct Loaded {
    ModelCheckpoint ck;
    DatasetBundle raw;
    DatasetBundle data;
};

Loaded load_served(const Options& o) {
    const auto config = load_config(o);
    require_file(o.checkpoint, "checkpoint");
    Loaded l;
    l.ck = load_checkpoint(o.checkpoint);
    l.raw = load_data(o, config, l.ck.schema);
    l.data = l.ck.normalizer.transform(l.raw);
    return l;
}

void emit(const Options& o, const std::string& text) {
    if (o.out.empty()) {
        std::cout << text;
    } else {
        if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
        write_file_atomic(o.out, text);
    }
}

int run_eval(const Options& o) {
    const auto l = load_served(o);
    const auto windows = make_windows(l.data, l.ck.schema, parse_split(o.split));
    json m = o.denormalize ? evaluate_denormalized(l.ck.model, windows, l.ck.normalizer) : evaluate(l.ck.model, windows);
    const auto naive = SeasonalNaive(l.data, l.ck.schema.period_T).evaluate(windows);
    m["split"] = o.split;
    m["normalized"] = !o.denormalize;
    m["seasonal_naive_mae"] = o.denormalize ? naive.mae * l.ck.normalizer.y_stats().std : naive.mae;
    emit(o, m.dump(2) + "\n");
    return 0;
}

int run_explain(const Options& o) {
    const auto l = load_served(o);
    const auto windows = make_windows(l.data, l.ck.schema, parse_split(o.split));
    if (o.instance) {
        if (*o.instance >= windows.size()) {
            throw ContractError("instance " + std::to_string(*o.instance) + " outside the " + o.split + " split (" +
                                std::to_string(windows.size()) + " windows)");
        }
        json e = explain(l.ck.model, windows[*o.instance], *o.instance);
        emit(o, e.dump(2) + "\n");
        return 0;
    }
    const auto timeline = activation_report(l.ck.model, windows, o.k);
    emit(o, o.csv ? timeline_to_csv(timeline) : json(timeline).dump(2) + "\n");
    return 0;
}

SteeringService* active_service = nullptr;

int run_serve(const Options& o) {
    const auto l = load_served(o);
    const auto colon = o.bind.rfind(':');
    if (colon == std::string::npos) throw ConfigError("--bind expects host:port, got " + o.bind);
    const auto host = o.bind.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(o.bind.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("--bind expects host:port, got " + o.bind);
    }
    SteeringService service(l.ck, l.raw);
    active_service = &service;
    std::signal(SIGINT, [](int) {
        if (active_service) active_service->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (active_service) active_service->stop();
    });
    std::cerr << "serving on " << host << ":" << port << "\n";
    const bool ok = service.listen(host, port);
    active_service = nullptr;
    if (!ok) throw IoError("cannot listen on " + o.bind);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interpretable prototype forecaster"};
    app.require_subcommand(1);
    Options o;

    auto config_opt = [&](CLI::App* c) { c->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile); };
    auto data_opt = [&](CLI::App* c) { c->add_option("--data", o.data, "CSV dataset")->required(); };
    auto ckpt_opt = [&](CLI::App* c) { c->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required(); };

    auto* synth = app.add_subcommand("synth", "generate a synthetic regime dataset");
    config_opt(synth);
    synth->add_option("--regimes", o.regimes, "number of regimes K");
    synth->add_option("--periods", o.periods, "number of seasonal periods");
    synth->add_option("--seed", o.seed, "generator seed");
    synth->add_option("--out", o.out, "output directory")->required();

    auto* train = app.add_subcommand("train", "staged training; writes checkpoint.ptsc and report.json");
    config_opt(train);
    data_opt(train);
    train->add_option("--schema", o.schema, "schema JSON")->required();
    train->add_option("--seed", o.seed, "overrides model and training seeds");
    train->add_option("--out", o.out, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "metrics on one split");
    config_opt(eval);
    data_opt(eval);
    ckpt_opt(eval);
    eval->add_option("--split", o.split, "train, val, or test");
    eval->add_flag("--denormalize", o.denormalize, "report errors in raw units");
    eval->add_option("--out", o.out, "output file (stdout if omitted)");

    auto* expl = app.add_subcommand("explain", "per-instance explanation or activation timeline");
    config_opt(expl);
    data_opt(expl);
    ckpt_opt(expl);
    expl->add_option("--split", o.split, "train, val, or test");
    expl->add_option("--instance", o.instance, "explain one window instead of the timeline");
    expl->add_option("--k", o.k, "leaves per instance in the timeline");
    expl->add_flag("--csv", o.csv, "timeline as CSV");
    expl->add_option("--out", o.out, "output file (stdout if omitted)");

    auto* serve = app.add_subcommand("serve", "HTTP steering API");
    config_opt(serve);
    data_opt(serve);
    ckpt_opt(serve);
    serve->add_option("--bind", o.bind, "host:port");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*synth) return run_synth(o);
        if (*train) return run_train(o);
        if (*eval) return run_eval(o);
        if (*expl) return run_explain(o);
        if (*serve) return run_serve(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
