#include "protots/service.hpp"

#include <regex>

#include <httplib.h>

#include "protots/errors.hpp"
#include "protots/evaluation.hpp"

namespace protots {

std::string to_string(JobState state) {
    switch (state) {
        case JobState::kIdle: return "idle";
        case JobState::kRunning: return "running";
        case JobState::kSucceeded: return "succeeded";
        case JobState::kFailed: return "failed";
    }
    return "unknown";
}

void to_json(nlohmann::json& j, const SessionStatus& s) {
    // early stopping can finish a job before the planned epoch count
    double progress = s.state == JobState::kSucceeded ? 1.0 : 0.0;
    if (s.state == JobState::kRunning && s.epochs_planned) {
        progress = static_cast<double>(s.epochs_done) / static_cast<double>(s.epochs_planned);
    }
    j = nlohmann::json{{"state", to_string(s.state)},
                       {"job_id", s.job_id},
                       {"epochs_done", s.epochs_done},
                       {"epochs_planned", s.epochs_planned},
                       {"progress", progress},
                       {"message", s.message},
                       {"revision", s.revision}};
}

namespace {

struct RequestError {
    int status;
    std::string message;
    std::string field;
};

HttpResponse error_response(int status, const std::string& message, const std::string& field = {}) {
    nlohmann::json body{{"error", message}};
    if (!field.empty()) body["field"] = field;
    return {status, body};
}

Split split_param(const std::map<std::string, std::string>& query, Split fallback) {
    auto it = query.find("split");
    if (it == query.end()) return fallback;
    try {
        return parse_split(it->second);
    } catch (const ContractError& e) {
        throw RequestError{400, e.what(), "split"};
    }
}

std::size_t size_param(const std::map<std::string, std::string>& query, const std::string& name, std::size_t fallback) {
    auto it = query.find(name);
    if (it == query.end()) return fallback;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw RequestError{400, "query parameter '" + name + "' must be a non-negative integer", name};
    }
}

nlohmann::json parse_body(const std::string& body) {
    if (body.empty()) return nlohmann::json::object();
    try {
        auto j = nlohmann::json::parse(body);
        if (!j.is_object()) throw RequestError{400, "request body must be a JSON object", "/"};
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw RequestError{400, std::string("malformed JSON body: ") + e.what(), "/"};
    }
}

template <typename T>
T field_as(const nlohmann::json& body, const std::string& name, std::optional<T> fallback = std::nullopt) {
    if (!body.contains(name)) {
        if (fallback) return *fallback;
        throw RequestError{400, "missing field '" + name + "'", "/" + name};
    }
    try {
        return body.at(name).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw RequestError{400, "field '" + name + "' has the wrong type", "/" + name};
    }
}

}  // namespace

SteeringService::SteeringService(ModelCheckpoint checkpoint, const DatasetBundle& data)
    : checkpoint_(std::move(checkpoint)) {
    data.validate(checkpoint_.schema);
    data_ = checkpoint_.normalizer.transform(data);
    job_.revision = checkpoint_.revision;
}

SteeringService::~SteeringService() {
    stop();
    if (job_thread_.joinable()) job_thread_.join();
}

std::uint64_t SteeringService::revision() const {
    std::shared_lock lock(model_mutex_);
    return checkpoint_.revision;
}

SessionStatus SteeringService::status() const {
    SessionStatus s;
    {
        std::lock_guard lock(job_mutex_);
        s = job_;
    }
    s.revision = revision();
    return s;
}

bool SteeringService::job_running() const {
    std::lock_guard lock(job_mutex_);
    return job_.state == JobState::kRunning;
}

void SteeringService::wait_for_job() {
    if (job_thread_.joinable()) job_thread_.join();
}

ModelCheckpoint SteeringService::snapshot() const {
    std::shared_lock lock(model_mutex_);
    ModelCheckpoint copy = checkpoint_;
    copy.model = checkpoint_.model.clone();
    return copy;
}

HttpResponse SteeringService::handle(const std::string& method, const std::string& path,
                                     const std::map<std::string, std::string>& query, const std::string& body) {
    static const std::regex explain_re(R"(^/model/explain/(\d+)$)");
    static const std::regex split_re(R"(^/prototypes/(\d+)/split$)");
    static const std::regex pattern_re(R"(^/prototypes/(\d+)/pattern$)");
    try {
        std::smatch m;
        if (method == "GET") {
            if (path == "/model/tree") return get_tree();
            if (path == "/model/activations") return get_activations(query);
            if (path == "/model/metrics") return get_metrics(query);
            if (path == "/train/status") return {200, status()};
            if (std::regex_match(path, m, explain_re)) return get_explain(std::stoull(m[1].str()), query);
        } else if (method == "POST") {
            if (path == "/train") return post_train(parse_body(body));
            if (path == "/checkpoint/save") return post_save(parse_body(body));
            if (path == "/checkpoint/load") return post_load(parse_body(body));
            if (std::regex_match(path, m, split_re)) {
                return post_split(static_cast<NodeId>(std::stoul(m[1].str())), parse_body(body));
            }
        } else if (method == "PATCH") {
            if (std::regex_match(path, m, pattern_re)) {
                return patch_pattern(static_cast<NodeId>(std::stoul(m[1].str())), parse_body(body));
            }
        }
        return error_response(404, "no route for " + method + " " + path);
    } catch (const RequestError& e) {
        return error_response(e.status, e.message, e.field);
    } catch (const ConfigError& e) {
        return error_response(400, e.what());
    } catch (const Error& e) {
        return error_response(500, e.what());
    } catch (const std::out_of_range& e) {
        return error_response(400, std::string("number out of range: ") + e.what());
    }
}

HttpResponse SteeringService::get_tree() const {
    std::shared_lock lock(model_mutex_);
    return {200, {{"revision", checkpoint_.revision}, {"tree", tree_to_json(checkpoint_.model.tree())}}};
}

HttpResponse SteeringService::get_activations(const std::map<std::string, std::string>& query) const {
    const auto split = split_param(query, Split::kTest);
    const auto k = size_param(query, "k", 3);
    if (k < 1) throw RequestError{400, "k must be >= 1", "k"};
    std::shared_lock lock(model_mutex_);
    const auto windows = make_windows(data_, checkpoint_.schema, split);
    nlohmann::json timeline = activation_report(checkpoint_.model, windows, k);
    return {200, {{"revision", checkpoint_.revision}, {"split", to_string(split)}, {"k", k}, {"timeline", timeline}}};
}

HttpResponse SteeringService::get_explain(std::size_t instance, const std::map<std::string, std::string>& query) const {
    const auto split = split_param(query, Split::kTest);
    std::shared_lock lock(model_mutex_);
    const auto windows = make_windows(data_, checkpoint_.schema, split);
    if (instance >= windows.size()) {
        return error_response(404, "instance " + std::to_string(instance) + " outside the " + to_string(split) +
                                       " split (" + std::to_string(windows.size()) + " windows)");
    }
    nlohmann::json e = explain(checkpoint_.model, windows[instance], instance);
    e["revision"] = checkpoint_.revision;
    e["split"] = to_string(split);
    return {200, e};
}

HttpResponse SteeringService::get_metrics(const std::map<std::string, std::string>& query) const {
    const auto split = split_param(query, Split::kTest);
    const bool denormalize = query.contains("denormalize") && query.at("denormalize") == "true";
    std::shared_lock lock(model_mutex_);
    const auto windows = make_windows(data_, checkpoint_.schema, split);
    if (windows.empty()) return error_response(400, "split " + to_string(split) + " has no windows", "split");
    nlohmann::json m = denormalize ? evaluate_denormalized(checkpoint_.model, windows, checkpoint_.normalizer)
                                   : evaluate(checkpoint_.model, windows);
    m["revision"] = checkpoint_.revision;
    m["split"] = to_string(split);
    m["normalized"] = !denormalize;
    return {200, m};
}

HttpResponse SteeringService::post_split(NodeId id, const nlohmann::json& body) {
    const auto m = field_as<std::size_t>(body, "M", std::size_t{2});
    const auto seed = field_as<std::uint64_t>(body, "seed", std::uint64_t{0});
    if (m < 2) throw RequestError{400, "M must be >= 2", "/M"};
    std::lock_guard job_lock(job_mutex_);
    if (job_.state == JobState::kRunning) {
        return error_response(409, "a training job is running; mutations are blocked");
    }
    std::unique_lock lock(model_mutex_);
    auto& tree = checkpoint_.model.tree();
    if (!tree.contains(id)) return error_response(404, "prototype " + std::to_string(id) + " not found");
    if (!tree.node(id).is_leaf()) {
        return error_response(409, "prototype " + std::to_string(id) + " already has children; only leaves can split");
    }
    auto children = tree.split(id, m, seed, checkpoint_.model.config().split_jitter);
    checkpoint_.seed_lineage.push_back(seed);
    ++checkpoint_.revision;
    return {200, {{"revision", checkpoint_.revision}, {"children", children}, {"tree", tree_to_json(tree)}}};
}

HttpResponse SteeringService::patch_pattern(NodeId id, const nlohmann::json& body) {
    if (!body.contains("pattern") || !body.at("pattern").is_array()) {
        throw RequestError{400, "field 'pattern' must be an array of numbers", "/pattern"};
    }
    std::vector<double> pattern;
    for (std::size_t i = 0; i < body.at("pattern").size(); ++i) {
        const auto& v = body.at("pattern")[i];
        if (!v.is_number()) throw RequestError{400, "pattern values must be numbers", "/pattern/" + std::to_string(i)};
        pattern.push_back(v.get<double>());
    }
    const bool lock_pattern = field_as<bool>(body, "lock", false);
    std::lock_guard job_lock(job_mutex_);
    if (job_.state == JobState::kRunning) {
        return error_response(409, "a training job is running; mutations are blocked");
    }
    std::unique_lock lock(model_mutex_);
    auto& tree = checkpoint_.model.tree();
    if (!tree.contains(id)) return error_response(404, "prototype " + std::to_string(id) + " not found");
    if (pattern.size() != tree.period()) {
        throw RequestError{400,
                           "pattern has " + std::to_string(pattern.size()) + " values, expected " +
                               std::to_string(tree.period()),
                           "/pattern"};
    }
    tree.edit_pattern(id, pattern, lock_pattern);
    ++checkpoint_.revision;
    const auto& n = tree.node(id);
    return {200,
            {{"revision", checkpoint_.revision},
             {"id", id},
             {"pattern_locked", n.pattern_locked},
             {"pattern", std::vector<double>(n.pattern.data().begin(), n.pattern.data().end())}}};
}

HttpResponse SteeringService::post_train(const nlohmann::json& body) {
    TrainConfig config;
    {
        std::shared_lock lock(model_mutex_);
        nlohmann::json merged = checkpoint_.train_config;
        merged.erase("stage_plan");
        for (auto it = body.begin(); it != body.end(); ++it) merged[it.key()] = it.value();
        try {
            config = merged.get<TrainConfig>();
            config.validate();
        } catch (const nlohmann::json::exception& e) {
            throw RequestError{400, std::string("invalid training config: ") + e.what(), "/"};
        }
    }

    std::lock_guard job_lock(job_mutex_);
    if (job_.state == JobState::kRunning) return error_response(409, "a training job is already running");
    if (job_thread_.joinable()) job_thread_.join();

    ModelCheckpoint snap = snapshot();
    const auto plan_rounds = config.stage_plan.size();
    job_.state = JobState::kRunning;
    job_.job_id += 1;
    job_.epochs_done = 0;
    job_.epochs_planned = config.max_epochs * (1 + plan_rounds);
    job_.message.clear();
    const auto job_id = job_.job_id;

    job_thread_ = std::thread([this, snap = std::move(snap), config]() mutable {
        try {
            TrainingData data{make_windows(data_, snap.schema, Split::kTrain),
                              make_windows(data_, snap.schema, Split::kVal)};
            auto report = staged_train(snap.model, data, config, [this](const EpochRecord&) {
                std::lock_guard lock(job_mutex_);
                ++job_.epochs_done;
            });
            {
                std::unique_lock lock(model_mutex_);
                checkpoint_.model = std::move(snap.model);
                checkpoint_.train_config = config;
                checkpoint_.seed_lineage.push_back(config.seed);
                ++checkpoint_.revision;
            }
            std::lock_guard lock(job_mutex_);
            job_.state = JobState::kSucceeded;
            job_.message = "trained " + std::to_string(report.epochs.size()) + " epochs";
        } catch (const std::exception& e) {
            std::lock_guard lock(job_mutex_);
            job_.state = JobState::kFailed;
            job_.message = e.what();
        }
    });
    return {202, {{"job_id", job_id}, {"epochs_planned", job_.epochs_planned}}};
}

HttpResponse SteeringService::post_save(const nlohmann::json& body) const {
    const auto path = field_as<std::string>(body, "path");
    ModelCheckpoint snap = snapshot();
    save_checkpoint(snap, path);
    return {200, {{"path", path}, {"revision", snap.revision}}};
}

HttpResponse SteeringService::post_load(const nlohmann::json& body) {
    const auto path = field_as<std::string>(body, "path");
    std::lock_guard job_lock(job_mutex_);
    if (job_.state == JobState::kRunning) {
        return error_response(409, "a training job is running; mutations are blocked");
    }
    ModelCheckpoint loaded;
    try {
        loaded = load_checkpoint(path);
    } catch (const IoError& e) {
        return error_response(404, e.what());
    } catch (const Error& e) {
        return error_response(422, e.what());
    }
    if (nlohmann::json(loaded.schema) != nlohmann::json(checkpoint_.schema)) {
        return error_response(422, "checkpoint schema does not match the served dataset");
    }
    std::unique_lock lock(model_mutex_);
    const auto next = checkpoint_.revision + 1;
    checkpoint_ = std::move(loaded);
    checkpoint_.revision = std::max(checkpoint_.revision, next);
    return {200, {{"revision", checkpoint_.revision}}};
}

void SteeringService::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    auto adapt = [this](const char* method) {
        return [this, method](const httplib::Request& req, httplib::Response& res) {
            std::map<std::string, std::string> query(req.params.begin(), req.params.end());
            auto out = handle(method, req.path, query, req.body);
            res.status = out.status;
            res.set_content(out.body.dump(), "application/json; charset=utf-8");
        };
    };
    server_->Get(".*", adapt("GET"));
    server_->Post(".*", adapt("POST"));
    server_->Patch(".*", adapt("PATCH"));
}

bool SteeringService::listen(const std::string& host, int port) {
    install_routes();
    return server_->listen(host, port);
}

int SteeringService::start_background(const std::string& host) {
    install_routes();
    const int port = server_->bind_to_any_port(host);
    if (port < 0) throw IoError("cannot bind " + host);
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void SteeringService::stop() {
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace protots
