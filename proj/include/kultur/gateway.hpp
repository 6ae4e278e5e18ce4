#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "kultur/prompts.hpp"
#include "kultur/responses.hpp"

namespace kultur {

// Network or server failure; retried with backoff.
struct TransportError : Error {
  using Error::Error;
};

// The model answered but declined; never retried.
struct ModelRefusal : Error {
  using Error::Error;
};

struct TransportExhausted : Error {
  using Error::Error;
};

struct ReplayMiss : Error {
  explicit ReplayMiss(std::string h) : Error("replay miss for request " + h), hash(std::move(h)) {}
  std::string hash;
};

class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual std::string complete(const std::string& system_text, const std::string& user_text,
                               const std::optional<ImageRef>& image) = 0;
};

enum class GatewayMode { live, record, replay };

inline GatewayMode gateway_mode_from_string(std::string_view s) {
  if (s == "live") return GatewayMode::live;
  if (s == "record") return GatewayMode::record;
  if (s == "replay") return GatewayMode::replay;
  throw Error("unknown gateway mode '" + std::string(s) + "'");
}

struct GatewayPolicy {
  int max_in_flight = 4;
  int max_retries = 3;
  std::chrono::milliseconds backoff_initial{500};
  double backoff_multiplier = 2.0;
  GatewayMode mode = GatewayMode::replay;

  void validate() const {
    if (max_in_flight < 1) throw Error("gateway: max_in_flight must be >= 1");
    if (max_retries < 0) throw Error("gateway: max_retries must be >= 0");
    if (backoff_multiplier < 1.0) throw Error("gateway: backoff multiplier must be >= 1");
  }
};

// Append-only file of {"hash", "kind", "response"} lines. Read-only in replay
// mode; in record mode each append is a single flushed write under a lock.
class ReplayStore {
 public:
  ReplayStore() = default;
  explicit ReplayStore(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("hash") || !j.contains("response")) {
        // A torn final write is tolerated; anything else is corruption.
        if (in.peek() == std::char_traits<char>::eof()) break;
        throw Error(path_.string() + ":" + std::to_string(n) + ": malformed replay record");
      }
      entries_[j["hash"].get<std::string>()] = j["response"].get<std::string>();
    }
  }

  std::optional<std::string> find(const std::string& hash) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(hash);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void append(const std::string& hash, PromptKind kind, const std::string& response) {
    std::string line = nlohmann::json{{"hash", hash}, {"kind", to_string(kind)}, {"response", response}}.dump() + "\n";
    std::lock_guard lock(mu_);
    entries_[hash] = response;
    if (path_.empty()) return;
    if (!out_.is_open()) {
      out_.open(path_, std::ios::app | std::ios::binary);
      if (!out_) throw Error("cannot append to replay store " + path_.string());
    }
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> entries_;
  std::ofstream out_;
};

// Caps concurrent live calls.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int limit) : limit_(limit) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return used_ < limit_; });
    ++used_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      --used_;
    }
    cv_.notify_one();
  }

 private:
  int limit_;
  int used_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
};

struct GatewayCounters {
  std::atomic<std::size_t> live_calls{0};
  std::atomic<std::size_t> replay_hits{0};
  std::atomic<std::size_t> transport_retries{0};
  std::atomic<std::size_t> malformed_retries{0};
};

class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway(GatewayPolicy policy, ReplayStore* store, Sleeper sleeper = {})
      : policy_(policy), store_(store), limiter_(policy.max_in_flight), sleep_(std::move(sleeper)) {
    policy_.validate();
    if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    if (policy_.mode != GatewayMode::live && !store_) throw Error("gateway: record/replay modes need a replay store");
  }

  const GatewayPolicy& policy() const { return policy_; }
  const GatewayCounters& counters() const { return counters_; }

  // Raw response text for `req`. Replay mode never touches `client`.
  std::string dispatch(const PromptRequest& req, ModelClient* client, int attempt = 0) {
    const std::string hash = request_hash(req, attempt);
    if (policy_.mode == GatewayMode::replay) {
      auto hit = store_->find(hash);
      if (!hit) throw ReplayMiss(hash);
      ++counters_.replay_hits;
      return *hit;
    }
    if (!client) throw Error("gateway: no model client for live call");
    std::string response = call_with_retries(req, *client);
    if (policy_.mode == GatewayMode::record) store_->append(hash, req.kind, response);
    return response;
  }

  // Dispatch and parse; a malformed response is retried once with the same
  // prompt before the MalformedResponse propagates.
  template <class Parse>
  auto ask(const PromptRequest& req, ModelClient* client, Parse&& parse) -> decltype(parse(std::string_view{})) {
    try {
      return parse(std::string_view(dispatch(req, client, 0)));
    } catch (const MalformedResponse&) {
      ++counters_.malformed_retries;
    }
    return parse(std::string_view(dispatch(req, client, 1)));
  }

 private:
  std::string call_with_retries(const PromptRequest& req, ModelClient& client) {
    auto delay = policy_.backoff_initial;
    for (int attempt = 0;; ++attempt) {
      try {
        limiter_.acquire();
        struct Release {
          InFlightLimiter& l;
          ~Release() { l.release(); }
        } release{limiter_};
        ++counters_.live_calls;
        return client.complete(req.system_text, req.user_text, req.image);
      } catch (const TransportError& e) {
        if (attempt >= policy_.max_retries)
          throw TransportExhausted(std::string("gave up after ") + std::to_string(attempt + 1) + " attempts: " + e.what());
      }
      ++counters_.transport_retries;
      sleep_(delay);
      delay = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy_.backoff_multiplier));
    }
  }

  GatewayPolicy policy_;
  ReplayStore* store_;
  InFlightLimiter limiter_;
  Sleeper sleep_;
  GatewayCounters counters_;
};

// (region, language) -> client name. Exact match first, then "*" wildcards
// on either side, then the default.
class RoutingTable {
 public:
  void add(std::string region, std::string language, std::string client) {
    rules_[{std::move(region), std::move(language)}] = std::move(client);
  }
  void set_default(std::string client) { default_ = std::move(client); }

  const std::string& resolve(const std::string& region, const std::string& language) const {
    for (const auto& key : {std::pair{region, language}, std::pair{region, std::string("*")},
                            std::pair{std::string("*"), language}})
      if (auto it = rules_.find(key); it != rules_.end()) return it->second;
    if (default_.empty()) throw Error("no model route for (" + region + ", " + language + ")");
    return default_;
  }

 private:
  std::map<std::pair<std::string, std::string>, std::string> rules_;
  std::string default_;
};

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
  };
  std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < w; ++k) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

}  // namespace kultur
