#pragma once

// Single entry point for model calls. A Gateway wraps one backend (live
// HTTP, synthetic environment, or none for strict replay) with a JSONL
// response cache, retry with exponential backoff, and rate limiting.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "rlab/error.hpp"
#include "rlab/random.hpp"

namespace rlab::gateway {

using json = nlohmann::json;

// ---- request / response ----------------------------------------------------

enum class Purpose { Tagger, Rewriter, Answerer, Judge, Equivalence, Perturber };

inline std::string_view purpose_name(Purpose p) {
    switch (p) {
    case Purpose::Tagger: return "tagger";
    case Purpose::Rewriter: return "rewriter";
    case Purpose::Answerer: return "answerer";
    case Purpose::Judge: return "judge";
    case Purpose::Equivalence: return "equivalence";
    case Purpose::Perturber: return "perturber";
    }
    return "unknown";
}

inline std::optional<Purpose> purpose_from_name(std::string_view s) {
    for (auto p : {Purpose::Tagger, Purpose::Rewriter, Purpose::Answerer, Purpose::Judge, Purpose::Equivalence,
                   Purpose::Perturber})
        if (purpose_name(p) == s) return p;
    return std::nullopt;
}

struct Message {
    std::string role;
    std::string content;
    bool operator==(const Message&) const = default;
};

struct ChatRequest {
    std::string model;
    std::vector<Message> messages;
    double temperature = 0.0;
    double top_p = 1.0;
    int max_tokens = 512;
    bool structured = false;
    Purpose purpose = Purpose::Answerer;
    /// Distinguishes deliberate repeats of an identical request (e.g. tagging
    /// stability audits). Index 0 is the ordinary request.
    int sample_index = 0;

    void validate() const {
        require(!messages.empty(), "chat request needs at least one message");
        require(temperature >= 0.0 && temperature <= 2.0, "temperature must lie in [0, 2]");
        require(top_p > 0.0 && top_p <= 1.0, "top_p must lie in (0, 1]");
        require(max_tokens >= 1, "max_tokens must be positive");
        require(sample_index >= 0, "sample_index must be nonnegative");
    }

    /// Content of the last message with the given role, or empty.
    std::string content_of(std::string_view role) const {
        for (auto it = messages.rbegin(); it != messages.rend(); ++it)
            if (it->role == role) return it->content;
        return {};
    }
};

struct ChatResponse {
    std::string content;
    std::string finish_reason = "stop";
    int prompt_tokens = 0;
    int completion_tokens = 0;
    double latency_ms = 0.0;
};

inline json to_json(const ChatRequest& r) {
    json messages = json::array();
    for (const auto& m : r.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    json j{{"model", r.model},
           {"messages", messages},
           {"temperature", r.temperature},
           {"top_p", r.top_p},
           {"max_tokens", r.max_tokens},
           {"structured", r.structured},
           {"purpose", purpose_name(r.purpose)}};
    if (r.sample_index > 0) j["sample_index"] = r.sample_index;
    return j;
}

inline json to_json(const ChatResponse& r) {
    return {{"content", r.content},
            {"finish_reason", r.finish_reason},
            {"usage", {{"prompt_tokens", r.prompt_tokens}, {"completion_tokens", r.completion_tokens}}},
            {"latency_ms", r.latency_ms}};
}

inline ChatResponse response_from_json(const json& j) {
    ChatResponse r;
    r.content = j.at("content").get<std::string>();
    r.finish_reason = j.value("finish_reason", "stop");
    if (j.contains("usage")) {
        r.prompt_tokens = j["usage"].value("prompt_tokens", 0);
        r.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
    r.latency_ms = j.value("latency_ms", 0.0);
    return r;
}

// ---- cache key -------------------------------------------------------------

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return out.str();
}

/// SHA-256 over the canonical (sorted-key, compact) JSON of the fields that
/// determine a response: model, messages, temperature, top_p, structured,
/// plus sample_index when nonzero.
inline std::string cache_key(const ChatRequest& r) {
    json messages = json::array();
    for (const auto& m : r.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    json j{{"model", r.model},
           {"messages", messages},
           {"temperature", r.temperature},
           {"top_p", r.top_p},
           {"structured", r.structured}};
    if (r.sample_index > 0) j["sample_index"] = r.sample_index;
    return sha256_hex(j.dump());
}

// ---- backends --------------------------------------------------------------

/// Transient failure (HTTP 429, 5xx, connection loss) that may be retried.
class RetryableError : public TransportError {
public:
    RetryableError(int status, const std::string& what) : TransportError(what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

class Backend {
public:
    virtual ~Backend() = default;
    /// Performs one model call. Throws RetryableError for transient failures
    /// and ProtocolError for permanent ones.
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    /// True when calls leave the process.
    virtual bool networked() const { return false; }
};

/// Backend driven by a callable; used for scripted tests.
class FunctionBackend : public Backend {
public:
    explicit FunctionBackend(std::function<ChatResponse(const ChatRequest&)> fn) : fn_(std::move(fn)) {}
    ChatResponse complete(const ChatRequest& request) override { return fn_(request); }

private:
    std::function<ChatResponse(const ChatRequest&)> fn_;
};

// ---- retry -----------------------------------------------------------------

struct RetryPolicy {
    double base_seconds = 1.0;
    double factor = 2.0;
    int max_attempts = 5;
    double jitter = 0.2;  // multiplicative, uniform in [1 - jitter, 1 + jitter]
    std::uint64_t seed = 0;

    void validate() const {
        if (!(base_seconds >= 0.0)) throw ConfigError("gateway.retry.base_seconds", "must be >= 0");
        if (!(factor >= 1.0)) throw ConfigError("gateway.retry.factor", "must be >= 1");
        if (max_attempts < 1) throw ConfigError("gateway.retry.max_attempts", "must be >= 1");
        if (!(jitter >= 0.0 && jitter < 1.0)) throw ConfigError("gateway.retry.jitter", "must lie in [0, 1)");
    }

    /// Nominal delay before attempt `retry + 1`, retry = 1, 2, ...
    double nominal_delay(int retry) const { return base_seconds * std::pow(factor, retry - 1); }
};

using Sleeper = std::function<void(double seconds)>;

inline void real_sleep(double seconds) {
    if (seconds > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

// ---- rate limiting ---------------------------------------------------------

class Clock {
public:
    virtual ~Clock() = default;
    virtual double now() = 0;  // seconds
    virtual void sleep_until(double t) = 0;
};

class SteadyClock : public Clock {
public:
    double now() override {
        return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
    }
    void sleep_until(double t) override { real_sleep(t - now()); }
};

/// Time only moves when someone sleeps.
class SimulatedClock : public Clock {
public:
    double now() override {
        std::lock_guard lock(mu_);
        return t_;
    }
    void sleep_until(double t) override {
        std::lock_guard lock(mu_);
        t_ = std::max(t_, t);
    }
    void advance(double dt) {
        std::lock_guard lock(mu_);
        t_ += dt;
    }

private:
    std::mutex mu_;
    double t_ = 0.0;
};

/// Bounds in-flight calls and admissions in any trailing 60-second window.
class RateLimiter {
public:
    RateLimiter(int max_concurrent, int max_per_minute, std::shared_ptr<Clock> clock = std::make_shared<SteadyClock>())
        : max_concurrent_(max_concurrent), max_per_minute_(max_per_minute), clock_(std::move(clock)) {
        if (max_concurrent < 1) throw ConfigError("gateway.max_concurrent", "must be >= 1");
        if (max_per_minute < 1) throw ConfigError("gateway.max_per_minute", "must be >= 1");
    }

    /// Blocks until a slot is free; returns the admission time.
    double acquire() {
        std::unique_lock lock(mu_);
        slot_free_.wait(lock, [&] { return in_flight_ < max_concurrent_; });
        ++in_flight_;
        while (true) {
            const double now = clock_->now();
            while (!window_.empty() && window_.front() + 60.0 <= now) window_.pop_front();
            if (static_cast<int>(window_.size()) < max_per_minute_) {
                window_.push_back(now);
                ++admitted_;
                max_seen_in_flight_ = std::max(max_seen_in_flight_, in_flight_);
                return now;
            }
            const double wake = window_.front() + 60.0;
            lock.unlock();
            clock_->sleep_until(wake);
            lock.lock();
        }
    }

    void release() {
        {
            std::lock_guard lock(mu_);
            --in_flight_;
        }
        slot_free_.notify_one();
    }

    int max_seen_in_flight() const {
        std::lock_guard lock(mu_);
        return max_seen_in_flight_;
    }
    std::uint64_t admitted() const {
        std::lock_guard lock(mu_);
        return admitted_;
    }

private:
    int max_concurrent_;
    int max_per_minute_;
    std::shared_ptr<Clock> clock_;
    mutable std::mutex mu_;
    std::condition_variable slot_free_;
    std::deque<double> window_;
    int in_flight_ = 0;
    int max_seen_in_flight_ = 0;
    std::uint64_t admitted_ = 0;
};

// ---- response cache --------------------------------------------------------

/// Append-only JSONL file of {key, request, response, timestamp} with an
/// in-memory index. Later lines win when a key repeats.
class ResponseCache {
public:
    ResponseCache() = default;
    explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
        std::ifstream in(path_);
        if (!in) return;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                const json j = json::parse(line);
                index_[j.at("key").get<std::string>()] = response_from_json(j.at("response"));
            } catch (const json::exception& e) {
                throw ProtocolError("corrupt cache line " + std::to_string(lineno) + " in " + path_.string() + ": " +
                                    e.what());
            }
        }
    }

    std::optional<ChatResponse> find(const std::string& key) const {
        std::lock_guard lock(mu_);
        auto it = index_.find(key);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    void insert(const std::string& key, const ChatRequest& request, const ChatResponse& response) {
        std::lock_guard lock(mu_);
        index_[key] = response;
        if (path_.empty()) return;
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        std::ofstream out(path_, std::ios::app);
        if (!out) throw Error("cannot append to cache file " + path_.string());
        const json line{{"key", key}, {"request", to_json(request)}, {"response", to_json(response)},
                        {"timestamp", utc_timestamp()}};
        out << line.dump() << '\n';
        out.flush();
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return index_.size();
    }

private:
    static std::string utc_timestamp() {
        const std::time_t t = std::time(nullptr);
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, ChatResponse> index_;
};

// ---- gateway facade --------------------------------------------------------

struct GatewayOptions {
    std::optional<std::filesystem::path> cache_path;
    bool use_cache = false;  // in-memory cache when no path is given
    bool strict_replay = false;
    RetryPolicy retry;
    std::optional<std::pair<int, int>> rate_limit;  // (max_concurrent, max_per_minute)
    std::shared_ptr<Clock> clock;
    Sleeper sleeper = real_sleep;
};

struct GatewayCounters {
    std::uint64_t requests = 0;     // chat() invocations
    std::uint64_t cache_hits = 0;
    std::uint64_t backend_calls = 0;  // attempts forwarded to the backend, retries included
    std::uint64_t network_calls = 0;  // backend_calls made by a networked backend
    std::uint64_t retries = 0;
};

class Gateway {
public:
    /// `backend` may be null only in strict replay mode.
    Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {})
        : backend_(std::move(backend)), options_(std::move(options)), jitter_rng_(options_.retry.seed) {
        options_.retry.validate();
        if (!backend_ && !options_.strict_replay)
            throw ConfigError("gateway.mode", "a backend is required unless strict replay is enabled");
        if (options_.cache_path) {
            cache_.emplace(*options_.cache_path);
        } else if (options_.use_cache || options_.strict_replay) {
            cache_.emplace();
        }
        if (options_.rate_limit) {
            auto clock = options_.clock ? options_.clock : std::make_shared<SteadyClock>();
            limiter_.emplace(options_.rate_limit->first, options_.rate_limit->second, clock);
        }
    }

    ChatResponse chat(const ChatRequest& request) {
        request.validate();
        std::string key;
        {
            std::lock_guard lock(mu_);
            ++counters_.requests;
        }
        if (cache_) {
            key = cache_key(request);
            if (auto hit = cache_->find(key)) {
                std::lock_guard lock(mu_);
                ++counters_.cache_hits;
                return *hit;
            }
            if (options_.strict_replay)
                throw CacheMissError("no recorded response for " + std::string(purpose_name(request.purpose)) +
                                     " request " + key);
        }
        ChatResponse response = call_with_retry(request);
        if (cache_) cache_->insert(key, request, response);
        return response;
    }

    GatewayCounters counters() const {
        std::lock_guard lock(mu_);
        return counters_;
    }

    /// Backend attempts since construction (retries included).
    std::uint64_t backend_calls() const { return counters().backend_calls; }

    const RateLimiter* limiter() const { return limiter_ ? &*limiter_ : nullptr; }
    bool strict_replay() const noexcept { return options_.strict_replay; }
    Backend* backend() const noexcept { return backend_.get(); }

private:
    ChatResponse call_with_retry(const ChatRequest& request) {
        const RetryPolicy& rp = options_.retry;
        for (int attempt = 1;; ++attempt) {
            try {
                return call_once(request);
            } catch (const RetryableError& e) {
                if (attempt >= rp.max_attempts)
                    throw TransportError("giving up after " + std::to_string(attempt) + " attempts: " + e.what());
                double u;
                {
                    std::lock_guard lock(mu_);
                    ++counters_.retries;
                    u = jitter_rng_.uniform();
                }
                const double delay = rp.nominal_delay(attempt) * (1.0 + rp.jitter * (2.0 * u - 1.0));
                if (options_.sleeper) options_.sleeper(delay);
            }
        }
    }

    ChatResponse call_once(const ChatRequest& request) {
        struct Release {
            RateLimiter* l;
            ~Release() {
                if (l) l->release();
            }
        } release{limiter_ ? &*limiter_ : nullptr};
        if (limiter_) limiter_->acquire();
        {
            std::lock_guard lock(mu_);
            ++counters_.backend_calls;
            if (backend_->networked()) ++counters_.network_calls;
        }
        const auto start = std::chrono::steady_clock::now();
        ChatResponse r = backend_->complete(request);
        if (r.latency_ms == 0.0)
            r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (r.finish_reason == "stop" && r.content.empty())
            throw ProtocolError("empty response content with finish reason 'stop'");
        return r;
    }

    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;
    std::optional<ResponseCache> cache_;
    std::optional<RateLimiter> limiter_;
    mutable std::mutex mu_;
    GatewayCounters counters_;
    Rng jitter_rng_;
};

// ---- helpers ---------------------------------------------------------------

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

} // namespace rlab::gateway
