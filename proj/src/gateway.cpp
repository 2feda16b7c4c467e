#include "normsgame/gateway.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "normsgame/rng.hpp"

namespace normsgame::gateway {

using nlohmann::json;

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Live: return "live";
    case Mode::Record: return "record";
    case Mode::Replay: return "replay";
    case Mode::Stub: return "stub";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "live") return Mode::Live;
  if (text == "record") return Mode::Record;
  if (text == "replay") return Mode::Replay;
  if (text == "stub") return Mode::Stub;
  throw std::invalid_argument("unknown gateway mode '" + std::string(text) +
                              "' (expected live, record, replay or stub)");
}

void ModelRequest::validate() const {
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  if (messages.empty()) throw std::invalid_argument("request has no messages");
  if (messages.front().role != "system") {
    throw std::invalid_argument("first message must have role 'system'");
  }
}

std::string canonical_json(const ModelRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"content", m.content}, {"role", m.role}});
  }
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  json j{{"kind", "chat"},
         {"messages", std::move(messages)},
         {"model", request.model},
         {"temperature", request.temperature}};
  return j.dump();
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string request_hash(const ModelRequest& request) {
  return sha256_hex(canonical_json(request));
}

std::string embedding_hash(std::string_view model, std::string_view text) {
  json j{{"input", std::string(text)}, {"kind", "embedding"}, {"model", std::string(model)}};
  return sha256_hex(j.dump());
}

std::vector<double> stub_embedding(std::string_view text, std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  const std::string digest = sha256_hex(text);
  const std::uint64_t seed = std::stoull(digest.substr(0, 16), nullptr, 16);
  Rng rng(seed);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double norm = std::sqrt(norm2);
  for (auto& x : v) x /= norm;
  return v;
}

std::string echo_last_message(const ModelRequest& request) {
  return request.messages.empty() ? std::string() : request.messages.back().content;
}

std::optional<json> FixtureStore::load(const std::string& hash) const {
  std::ifstream in(dir_ / (hash + ".json"), std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return json::parse(buffer.str());
  } catch (const json::exception& e) {
    throw GatewayError("corrupt fixture " + hash + ": " + e.what());
  }
}

void FixtureStore::save(const std::string& hash, const json& fixture) const {
  std::filesystem::create_directories(dir_);
  const auto final_path = dir_ / (hash + ".json");
  const auto tmp_path = dir_ / (hash + ".json.tmp");
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) throw GatewayError("cannot write fixture " + tmp_path.string());
    out << fixture.dump(2) << '\n';
  }
  std::filesystem::rename(tmp_path, final_path);
}

Gateway::Gateway(GatewayConfig config, std::unique_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  const bool networked = config_.mode == Mode::Live || config_.mode == Mode::Record;
  if (config_.mode == Mode::Record || config_.mode == Mode::Replay) {
    if (config_.fixture_dir.empty()) {
      throw GatewayError(std::string(to_string(config_.mode)) + " mode requires a fixture directory");
    }
    fixtures_.emplace(config_.fixture_dir);
  }
  if (networked) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw GatewayError("environment variable " + config_.api_key_env +
                         " is not set; it must hold the API key for live mode");
    }
    api_key_ = key;
    if (!transport_) transport_ = make_http_transport(config_.endpoint, config_.timeout);
  } else {
    transport_.reset();
  }
}

void Gateway::set_stub_responder(StubResponder responder) { stub_ = std::move(responder); }
void Gateway::set_sleeper(Sleeper sleeper) { sleep_ = std::move(sleeper); }
void Gateway::set_call_observer(CallObserver observer) { observer_ = std::move(observer); }

std::vector<CallRecord> Gateway::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

void Gateway::finish(CallRecord record) {
  CallObserver observer;
  {
    std::lock_guard lock(mutex_);
    calls_.push_back(record);
    observer = observer_;
  }
  if (observer) observer(record);
}

json Gateway::post_with_retry(const std::string& path, const json& body, CallRecord& record) {
  const Headers headers{{"Authorization", "Bearer " + api_key_},
                        {"Content-Type", "application/json"}};
  const std::string payload = body.dump();
  const int attempts = std::max(1, config_.retry.attempts);
  std::string last_error;
  const auto started = std::chrono::steady_clock::now();
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    record.attempts = attempt;
    try {
      const HttpResponse response = transport_->post(path, payload, headers);
      if (response.status >= 200 && response.status < 300) {
        record.latency_ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - started)
                                .count();
        try {
          return json::parse(response.body);
        } catch (const json::exception& e) {
          throw GatewayError("service returned invalid JSON: " + std::string(e.what()));
        }
      }
      last_error = "HTTP " + std::to_string(response.status);
      if (response.status < 500) {
        throw GatewayError(last_error + " from " + path + ": " + response.body.substr(0, 200));
      }
    } catch (const TransportError& e) {
      last_error = std::string("transport: ") + e.what();
    }
    record.retry_log.push_back("attempt " + std::to_string(attempt) + " failed: " + last_error);
    if (attempt < attempts) {
      const auto& backoff = config_.retry.backoff;
      const auto delay = backoff.empty()
                             ? std::chrono::milliseconds(0)
                             : backoff[std::min<std::size_t>(attempt - 1, backoff.size() - 1)];
      record.retry_log.push_back("backoff " + std::to_string(delay.count()) + "ms");
      sleep_(delay);
    }
  }
  throw GatewayError("giving up on " + path + " after " + std::to_string(attempts) +
                     " attempts: " + last_error);
}

std::string Gateway::complete(const ModelRequest& request) {
  request.validate();
  CallRecord record;
  record.kind = "chat";
  record.mode = config_.mode;
  record.hash = request_hash(request);

  std::string text;
  switch (config_.mode) {
    case Mode::Stub:
      text = stub_ ? stub_(request) : config_.stub_response;
      break;
    case Mode::Replay: {
      auto fixture = fixtures_->load(record.hash);
      if (!fixture) throw FixtureMissing(record.hash);
      text = fixture->at("response").get<std::string>();
      break;
    }
    case Mode::Live:
    case Mode::Record: {
      json messages = json::array();
      for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
      }
      json body{{"model", request.model},
                {"temperature", request.temperature},
                {"messages", std::move(messages)}};
      json response = post_with_retry("/chat/completions", body, record);
      try {
        text = response.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& e) {
        throw GatewayError("unexpected chat response shape: " + std::string(e.what()));
      }
      if (auto usage = response.find("usage"); usage != response.end() && usage->is_object()) {
        if (usage->contains("prompt_tokens")) record.prompt_tokens = usage->at("prompt_tokens").get<long>();
        if (usage->contains("completion_tokens")) {
          record.completion_tokens = usage->at("completion_tokens").get<long>();
        }
      }
      if (config_.mode == Mode::Record) {
        fixtures_->save(record.hash, json{{"kind", "chat"},
                                          {"request", json::parse(canonical_json(request))},
                                          {"response", text}});
      }
      break;
    }
  }
  finish(std::move(record));
  return text;
}

EmbeddingVector Gateway::embed(std::string_view text) {
  CallRecord record;
  record.kind = "embedding";
  record.mode = config_.mode;
  record.hash = embedding_hash(config_.embedding_model, text);

  EmbeddingVector out;
  out.model = config_.embedding_model;
  switch (config_.mode) {
    case Mode::Stub:
      out.values = stub_embedding(text, config_.stub_embedding_dim);
      out.model = "stub-sha256-" + std::to_string(config_.stub_embedding_dim);
      break;
    case Mode::Replay: {
      auto fixture = fixtures_->load(record.hash);
      if (!fixture) throw FixtureMissing(record.hash);
      out.values = fixture->at("embedding").get<std::vector<double>>();
      break;
    }
    case Mode::Live:
    case Mode::Record: {
      json body{{"model", config_.embedding_model}, {"input", std::string(text)}};
      json response = post_with_retry("/embeddings", body, record);
      try {
        out.values = response.at("data").at(0).at("embedding").get<std::vector<double>>();
      } catch (const json::exception& e) {
        throw GatewayError("unexpected embedding response shape: " + std::string(e.what()));
      }
      if (auto usage = response.find("usage"); usage != response.end() && usage->is_object()) {
        if (usage->contains("prompt_tokens")) record.prompt_tokens = usage->at("prompt_tokens").get<long>();
      }
      if (config_.mode == Mode::Record) {
        fixtures_->save(record.hash,
                        json{{"kind", "embedding"},
                             {"request", {{"input", std::string(text)}, {"model", config_.embedding_model}}},
                             {"embedding", out.values}});
      }
      break;
    }
  }
  finish(std::move(record));
  return out;
}

}  // namespace normsgame::gateway
