#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "protots/checkpoint.hpp"
#include "protots/data.hpp"

namespace httplib {
class Server;
}

namespace protots {

enum class JobState { kIdle, kRunning, kSucceeded, kFailed };

std::string to_string(JobState state);

struct SessionStatus {
    JobState state = JobState::kIdle;
    std::uint64_t job_id = 0;
    std::size_t epochs_done = 0;
    std::size_t epochs_planned = 0;
    std::string message;
    std::uint64_t revision = 0;
};

void to_json(nlohmann::json& j, const SessionStatus& s);

struct HttpResponse {
    int status = 200;
    nlohmann::json body;
};

/// HTTP steering surface over one model. Reads run concurrently against
/// the committed revision; split, edit, load, and training commits are
/// serialized and each bumps the revision. At most one training job runs,
/// on a snapshot taken at launch.
class SteeringService {
public:
    // `data` is in raw units; the checkpoint's normalizer is applied.
    SteeringService(ModelCheckpoint checkpoint, const DatasetBundle& data);
    ~SteeringService();

    SteeringService(const SteeringService&) = delete;
    SteeringService& operator=(const SteeringService&) = delete;

    HttpResponse handle(const std::string& method, const std::string& path,
                        const std::map<std::string, std::string>& query, const std::string& body);

    // Blocking; returns after stop().
    bool listen(const std::string& host, int port);
    // Binds to an ephemeral port and serves on a background thread.
    int start_background(const std::string& host);
    void stop();

    std::uint64_t revision() const;
    SessionStatus status() const;
    void wait_for_job();
    ModelCheckpoint snapshot() const;

private:
    HttpResponse get_tree() const;
    HttpResponse get_activations(const std::map<std::string, std::string>& query) const;
    HttpResponse get_explain(std::size_t instance, const std::map<std::string, std::string>& query) const;
    HttpResponse get_metrics(const std::map<std::string, std::string>& query) const;
    HttpResponse post_split(NodeId id, const nlohmann::json& body);
    HttpResponse patch_pattern(NodeId id, const nlohmann::json& body);
    HttpResponse post_train(const nlohmann::json& body);
    HttpResponse post_save(const nlohmann::json& body) const;
    HttpResponse post_load(const nlohmann::json& body);

    bool job_running() const;
    void install_routes();

    mutable std::shared_mutex model_mutex_;
    ModelCheckpoint checkpoint_;
    DatasetBundle data_;  // normalized

    mutable std::mutex job_mutex_;
    SessionStatus job_;
    std::thread job_thread_;

    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
};

}  // namespace protots
