#pragma once

// Network-backed CommonsClient and ModelClient. Needs cpp-httplib on the
// include path; define CPPHTTPLIB_OPENSSL_SUPPORT (and link OpenSSL) for
// https endpoints.

#include <chrono>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "kultur/gateway.hpp"
#include "kultur/images.hpp"

namespace kultur {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // no trailing slash
};

inline Endpoint split_url(std::string_view url) {
  auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw ConfigError("URL without scheme: " + std::string(url));
  auto slash = url.find('/', scheme + 3);
  Endpoint e;
  e.origin = std::string(url.substr(0, slash));
  if (slash != std::string_view::npos) e.path = std::string(url.substr(slash));
  while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
  return e;
}

namespace detail {

inline std::unique_ptr<httplib::Client> make_http_client(const std::string& origin, std::chrono::seconds timeout) {
  auto c = std::make_unique<httplib::Client>(origin);
  c->set_connection_timeout(timeout);
  c->set_read_timeout(timeout);
  c->set_write_timeout(timeout);
  c->set_follow_location(true);
  return c;
}

inline bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace detail

// Lists category members through the MediaWiki action API, following
// cmcontinue until the listing is exhausted.
class MediaWikiCommonsClient : public CommonsClient {
 public:
  explicit MediaWikiCommonsClient(std::string api_url = "https://commons.wikimedia.org/w/api.php",
                                  std::string user_agent = "kultur/0.1", std::chrono::seconds timeout = std::chrono::seconds(30))
      : endpoint_(split_url(api_url)), user_agent_(std::move(user_agent)), timeout_(timeout) {}

  std::vector<std::string> list_category_files(const std::string& category_title) override {
    const std::string title = "Category:" + normalize_category_title(category_title);
    auto client = detail::make_http_client(endpoint_.origin, timeout_);
    std::vector<std::string> files;
    std::string cont;
    for (;;) {
      httplib::Params params{{"action", "query"}, {"list", "categorymembers"}, {"cmtitle", title}, {"cmtype", "file"},
                             {"cmlimit", "500"},  {"format", "json"},          {"formatversion", "2"}};
      if (!cont.empty()) params.emplace("cmcontinue", cont);
      auto res = client->Get(endpoint_.path.empty() ? "/" : endpoint_.path, params, {{"User-Agent", user_agent_}});
      if (!res) throw FetchError("commons request failed: " + httplib::to_string(res.error()));
      if (res->status != 200) throw FetchError("commons API answered HTTP " + std::to_string(res->status));
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded()) throw FetchError("commons API returned malformed JSON");
      if (j.contains("error")) throw FetchError("commons API error: " + j["error"].dump());
      for (const auto& m : j.value("/query/categorymembers"_json_pointer, nlohmann::json::array()))
        if (m.contains("title")) files.push_back(m["title"].get<std::string>());
      auto next = j.value("/continue/cmcontinue"_json_pointer, std::string());
      if (next.empty()) break;
      cont = next;
    }
    return files;
  }

 private:
  Endpoint endpoint_;
  std::string user_agent_;
  std::chrono::seconds timeout_;
};

struct ChatClientConfig {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string model;
  std::string api_key_env;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::chrono::seconds timeout{120};
};

// OpenAI-compatible /chat/completions. Images are sent as URL parts pointing
// at the Commons file.
class ChatCompletionsClient : public ModelClient {
 public:
  explicit ChatCompletionsClient(ChatClientConfig cfg) : cfg_(std::move(cfg)), endpoint_(split_url(cfg_.base_url)) {
    if (cfg_.model.empty()) throw ConfigError("chat client: model is required");
    if (!cfg_.api_key_env.empty()) {
      const char* key = std::getenv(cfg_.api_key_env.c_str());
      if (!key || !*key) throw ConfigError("environment variable " + cfg_.api_key_env + " is not set");
      api_key_ = key;
    }
  }

  std::string complete(const std::string& system_text, const std::string& user_text,
                       const std::optional<ImageRef>& image) override {
    nlohmann::json user_content;
    if (image) {
      std::string url = image->resolved_url ? *image->resolved_url : commons_file_url(image->commons_title);
      user_content = nlohmann::json::array({{{"type", "text"}, {"text", user_text}},
                                            {{"type", "image_url"}, {"image_url", {{"url", url}}}}});
    } else {
      user_content = user_text;
    }
    nlohmann::json body{{"model", cfg_.model},
                        {"temperature", cfg_.temperature},
                        {"max_tokens", cfg_.max_tokens},
                        {"messages", {{{"role", "system"}, {"content", system_text}}, {{"role", "user"}, {"content", user_content}}}}};
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto client = detail::make_http_client(endpoint_.origin, cfg_.timeout);
    auto res = client->Post(endpoint_.path + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw TransportError("model request failed: " + httplib::to_string(res.error()));
    if (detail::transient_status(res->status)) throw TransportError("model endpoint answered HTTP " + std::to_string(res->status));
    if (res->status != 200) throw ModelRefusal("model endpoint rejected the request: HTTP " + std::to_string(res->status));
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw TransportError("model endpoint returned malformed JSON");
    const auto& choices = j.value("choices", nlohmann::json::array());
    if (choices.empty()) throw ModelRefusal("model returned no choices");
    const auto& choice = choices[0];
    if (choice.value("finish_reason", "") == "content_filter") throw ModelRefusal("response withheld by content filter");
    auto content = choice.value("/message/content"_json_pointer, nlohmann::json());
    if (!content.is_string()) throw ModelRefusal("model returned no text content");
    return content.get<std::string>();
  }

 private:
  ChatClientConfig cfg_;
  Endpoint endpoint_;
  std::string api_key_;
};

}  // namespace kultur
