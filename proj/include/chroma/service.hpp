#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "chroma/pipeline.hpp"
#include "chroma/session.hpp"

namespace httplib {
class Server;
}

namespace chroma {

struct ServiceOptions {
    std::filesystem::path model_dir;
    std::filesystem::path state_dir = "chroma_state";
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    int queue_depth = 8;

    /// CHROMA_MODEL_DIR, CHROMA_STATE_DIR, CHROMA_HOST, CHROMA_PORT, CHROMA_QUEUE_DEPTH.
    static ServiceOptions from_env();
};

enum class JobStatus { Queued, Running, Done, Failed };
const char* job_status_name(JobStatus s);

struct JobRecord {
    std::string id;
    ColorizeRequest request;
    JobStatus status = JobStatus::Queued;
    std::vector<std::string> results;  // sha256 names of stored PNGs
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> warnings;
    std::string error;
    double queued_at = 0, started_at = 0, finished_at = 0;  // seconds since service start
};

/// HTTP facade: a bounded FIFO of colorize jobs run by one model worker, plus
/// editing sessions persisted as event logs under the state directory.
class Service {
public:
    explicit Service(ServiceOptions opts);
    /// Takes already loaded models (tests, embedding).
    Service(ServiceOptions opts, ModelBundle models);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and serves on a background thread; returns the bound port.
    int start();
    /// Blocks serving on the calling thread.
    void run();
    void stop();

    const std::string& checkpoint_hash() const { return models_.checkpoint_hash; }

private:
    struct SessionSlot {
        std::mutex write;  // one writer per session
        std::optional<Session> live;
        std::string id;
        ColorizeRequest base;
        std::vector<SessionEvent> events;
    };

    void routes();
    void worker_loop();
    int bind();
    nlohmann::json job_json(const JobRecord& job) const;
    nlohmann::json session_json(SessionSlot& slot);
    std::string store_png(const RgbImage& img);
    void persist(const SessionSlot& slot) const;
    void load_sessions();
    Session& ensure_live(SessionSlot& slot);

    ServiceOptions opts_;
    ModelBundle models_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_, worker_;
    std::mutex model_mutex_;  // serialises every model execution

    std::mutex jobs_mutex_;
    std::condition_variable jobs_cv_;
    std::deque<std::string> queue_;
    std::map<std::string, JobRecord> jobs_;
    std::uint64_t next_job_ = 1;
    bool stopping_ = false;

    std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
    std::uint64_t next_session_ = 1;

    std::chrono::steady_clock::time_point started_;
};

}  // namespace chroma
