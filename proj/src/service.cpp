#include "chroma/service.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <httplib.h>

#include "chroma/codec.hpp"
#include "chroma/image_io.hpp"
#include "chroma/log.hpp"

namespace chroma {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string env_or(const char* key, const std::string& fallback) {
    const char* v = std::getenv(key);
    return v && *v ? std::string(v) : fallback;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& field, const std::string& reason) {
    send_json(res, status, json{{"error", {{"field", field}, {"reason", reason}}}});
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        send_error(res, 400, "", std::string("malformed JSON: ") + e.what());
        return std::nullopt;
    }
}

std::string counter_id(const char* prefix, std::uint64_t n) {
    std::ostringstream os;
    os << prefix << std::setw(6) << std::setfill('0') << n;
    return os.str();
}

}  // namespace

ServiceOptions ServiceOptions::from_env() {
    ServiceOptions o;
    o.model_dir = env_or("CHROMA_MODEL_DIR", "model");
    o.state_dir = env_or("CHROMA_STATE_DIR", o.state_dir.string());
    o.host = env_or("CHROMA_HOST", o.host);
    o.port = std::stoi(env_or("CHROMA_PORT", std::to_string(o.port)));
    o.queue_depth = std::stoi(env_or("CHROMA_QUEUE_DEPTH", std::to_string(o.queue_depth)));
    return o;
}

const char* job_status_name(JobStatus s) {
    switch (s) {
        case JobStatus::Queued: return "queued";
        case JobStatus::Running: return "running";
        case JobStatus::Done: return "done";
        case JobStatus::Failed: return "failed";
    }
    return "?";
}

Service::Service(ServiceOptions opts) : Service(opts, load_models(opts.model_dir)) {}

Service::Service(ServiceOptions opts, ModelBundle models)
    : opts_(std::move(opts)), models_(std::move(models)), server_(std::make_unique<httplib::Server>()),
      started_(std::chrono::steady_clock::now()) {
    if (opts_.queue_depth < 1) throw std::invalid_argument("service: queue depth must be >= 1");
    fs::create_directories(opts_.state_dir / "results");
    fs::create_directories(opts_.state_dir / "sessions");
    load_sessions();
    routes();
    worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() { stop(); }

int Service::bind() {
    if (opts_.port == 0) return server_->bind_to_any_port(opts_.host);
    if (!server_->bind_to_port(opts_.host, opts_.port)) {
        throw std::runtime_error("service: cannot bind " + opts_.host + ":" + std::to_string(opts_.port));
    }
    return opts_.port;
}

int Service::start() {
    const int port = bind();
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    log_info("serving on ", opts_.host, ":", port, " (checkpoint ", models_.checkpoint_hash, ")");
    return port;
}

void Service::run() {
    const int port = bind();
    log_info("serving on ", opts_.host, ":", port, " (checkpoint ", models_.checkpoint_hash, ")");
    server_->listen_after_bind();
}

void Service::stop() {
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    {
        std::lock_guard<std::mutex> lock(jobs_mutex_);
        stopping_ = true;
    }
    jobs_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

std::string Service::store_png(const RgbImage& img) {
    const auto bytes = encode_png(img);
    const auto name = sha256_hex(bytes);
    const auto path = opts_.state_dir / "results" / (name + ".png");
    if (!fs::exists(path)) {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    return name;
}

void Service::worker_loop() {
    for (;;) {
        std::string id;
        ColorizeRequest request;
        {
            std::unique_lock<std::mutex> lock(jobs_mutex_);
            jobs_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.pop_front();
            auto& job = jobs_.at(id);
            job.status = JobStatus::Running;
            job.started_at = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
            request = job.request;
        }
        std::vector<std::string> names;
        ColorizeResult result;
        std::string error;
        try {
            std::lock_guard<std::mutex> m(model_mutex_);
            result = colorize(request, models_);
            for (const auto& img : result.images) names.push_back(store_png(img));
        } catch (const std::exception& e) {
            error = e.what();
            log_warn("job ", id, " failed: ", error);
        }
        std::lock_guard<std::mutex> lock(jobs_mutex_);
        auto& job = jobs_.at(id);
        job.finished_at = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        job.status = error.empty() ? JobStatus::Done : JobStatus::Failed;
        job.results = std::move(names);
        job.seeds = result.seeds;
        job.warnings = result.warnings;
        job.error = error;
    }
}

json Service::job_json(const JobRecord& job) const {
    json results = json::array();
    for (const auto& r : job.results) results.push_back("/results/" + r + ".png");
    json j{{"id", job.id},
           {"status", job_status_name(job.status)},
           {"results", results},
           {"seed", job.request.seed},
           {"seeds", job.seeds},
           {"warnings", job.warnings},
           {"checkpoint_hash", models_.checkpoint_hash},
           {"timing", {{"queued", job.queued_at}, {"started", job.started_at}, {"finished", job.finished_at}}}};
    if (!job.error.empty()) j["error"] = job.error;
    return j;
}

void Service::persist(const SessionSlot& slot) const {
    json events = json::array();
    for (const auto& ev : slot.events) events.push_back(event_to_json(ev));
    const json j{{"id", slot.id}, {"base", request_to_json(slot.base)}, {"events", events}};
    const auto path = opts_.state_dir / "sessions" / (slot.id + ".json");
    const auto tmp = fs::path(path.string() + ".tmp");
    std::ofstream(tmp) << j.dump() << '\n';
    fs::rename(tmp, path);
}

void Service::load_sessions() {
    for (const auto& entry : fs::directory_iterator(opts_.state_dir / "sessions")) {
        if (entry.path().extension() != ".json") continue;
        try {
            std::ifstream in(entry.path());
            const json j = json::parse(in);
            auto slot = std::make_shared<SessionSlot>();
            slot->id = j.at("id").get<std::string>();
            slot->base = request_from_json(j.at("base"));
            for (const auto& e : j.at("events")) slot->events.push_back(event_from_json(e));
            sessions_[slot->id] = slot;
            next_session_ = std::max<std::uint64_t>(next_session_, std::stoull(slot->id.substr(8)) + 1);
        } catch (const std::exception& e) {
            log_warn("skipping session file ", entry.path().string(), ": ", e.what());
        }
    }
    if (!sessions_.empty()) log_info("restored ", sessions_.size(), " session log(s)");
}

// Restored sessions replay their log on first access.
Session& Service::ensure_live(SessionSlot& slot) {
    if (!slot.live) {
        std::lock_guard<std::mutex> m(model_mutex_);
        slot.live = replay_session(slot.id, slot.base, slot.events, models_);
    }
    return *slot.live;
}

json Service::session_json(SessionSlot& slot) {
    const Session& s = ensure_live(slot);
    json results = json::array();
    for (std::size_t k = 0; k < s.results.size(); ++k) {
        const auto name = store_png(s.results[k]);
        results.push_back(json{{"sha256", name},
                               {"url", "/results/" + name + ".png"},
                               {"seed", s.current.seed + k}});
    }
    return json{{"id", s.id},
                {"seed", s.current.seed},
                {"checkpoint_hash", models_.checkpoint_hash},
                {"events", s.events.size()},
                {"request", request_to_json(s.current)},
                {"results", results}};
}

void Service::routes() {
    auto& srv = *server_;

    srv.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
        std::lock_guard<std::mutex> lock(jobs_mutex_);
        send_json(res, 200,
                  json{{"status", "ok"},
                       {"checkpoint_hash", models_.checkpoint_hash},
                       {"queue", queue_.size()},
                       {"queue_depth", opts_.queue_depth},
                       {"has_exemplar", models_.has_exemplar},
                       {"has_deformable", models_.has_deformable}});
    });

    // Parses and re-serialises with defaults applied; no model work.
    srv.Post("/echo", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req, res);
        if (!body) return;
        try {
            send_json(res, 200, request_to_json(request_from_json(*body)));
        } catch (const FieldError& e) {
            send_json(res, 422, json{{"error", e.to_json()}});
        }
    });

    srv.Post("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req, res);
        if (!body) return;
        ColorizeRequest request;
        try {
            request = request_from_json(*body);
        } catch (const FieldError& e) {
            send_json(res, 422, json{{"error", e.to_json()}});
            return;
        }
        std::unique_lock<std::mutex> lock(jobs_mutex_);
        if (static_cast<int>(queue_.size()) >= opts_.queue_depth) {
            res.set_header("Retry-After", "1");
            send_error(res, 503, "", "job queue is full");
            return;
        }
        JobRecord job;
        job.id = counter_id("job-", next_job_++);
        job.request = std::move(request);
        job.queued_at = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        const auto out = job_json(job);
        queue_.push_back(job.id);
        jobs_.emplace(job.id, std::move(job));
        lock.unlock();
        jobs_cv_.notify_one();
        send_json(res, 202, out);
    });

    srv.Get(R"(/jobs/([A-Za-z0-9-]+))", [this](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard<std::mutex> lock(jobs_mutex_);
        const auto it = jobs_.find(req.matches[1]);
        if (it == jobs_.end()) return send_error(res, 404, "id", "unknown job");
        send_json(res, 200, job_json(it->second));
    });

    srv.Get(R"(/results/([0-9a-f]{64})\.png)", [this](const httplib::Request& req, httplib::Response& res) {
        const auto path = opts_.state_dir / "results" / (std::string(req.matches[1]) + ".png");
        std::ifstream in(path, std::ios::binary);
        if (!in) return send_error(res, 404, "sha256", "unknown result");
        std::ostringstream os;
        os << in.rdbuf();
        res.set_content(os.str(), "image/png");
    });

    srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req, res);
        if (!body) return;
        auto slot = std::make_shared<SessionSlot>();
        try {
            slot->base = request_from_json(*body);
        } catch (const FieldError& e) {
            send_json(res, 422, json{{"error", e.to_json()}});
            return;
        }
        {
            std::lock_guard<std::mutex> lock(sessions_mutex_);
            slot->id = counter_id("session-", next_session_++);
            sessions_[slot->id] = slot;
        }
        std::lock_guard<std::mutex> w(slot->write);
        try {
            {
                std::lock_guard<std::mutex> m(model_mutex_);
                slot->live = create_session(slot->id, slot->base, models_);
            }
            persist(*slot);
            send_json(res, 201, session_json(*slot));
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(sessions_mutex_);
            sessions_.erase(slot->id);
            send_error(res, 500, "", e.what());
        }
    });

    auto find_session = [this](const std::string& id) -> std::shared_ptr<SessionSlot> {
        std::lock_guard<std::mutex> lock(sessions_mutex_);
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    };

    srv.Post(R"(/sessions/([A-Za-z0-9-]+)/events)", [this, find_session](const httplib::Request& req,
                                                                         httplib::Response& res) {
        const auto slot = find_session(req.matches[1]);
        if (!slot) return send_error(res, 404, "id", "unknown session");
        const auto body = parse_body(req, res);
        if (!body) return;
        SessionEvent ev;
        try {
            ev = event_from_json(*body);
        } catch (const FieldError& e) {
            send_json(res, 422, json{{"error", e.to_json()}});
            return;
        }
        std::lock_guard<std::mutex> w(slot->write);
        try {
            auto& live = ensure_live(*slot);
            {
                std::lock_guard<std::mutex> m(model_mutex_);
                session_apply(live, ev, models_);
            }
            slot->events = live.events;
            persist(*slot);
            send_json(res, 200, session_json(*slot));
        } catch (const std::invalid_argument& e) {
            send_json(res, 422, json{{"error", FieldError::from(e).to_json()}});
        } catch (const std::exception& e) {
            send_error(res, 500, "", e.what());
        }
    });

    srv.Get(R"(/sessions/([A-Za-z0-9-]+))", [this, find_session](const httplib::Request& req, httplib::Response& res) {
        const auto slot = find_session(req.matches[1]);
        if (!slot) return send_error(res, 404, "id", "unknown session");
        std::lock_guard<std::mutex> w(slot->write);
        try {
            send_json(res, 200, session_json(*slot));
        } catch (const std::exception& e) {
            send_error(res, 500, "", e.what());
        }
    });
}

}  // namespace chroma
