#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

// Client for an OpenAI-compatible chat-completion and embedding service.
//
// LIVE    one HTTPS round trip per call with bounded retries
// RECORD  LIVE, then persist the response under the request hash
// REPLAY  serve persisted responses; never touches the transport
// STUB    canned chat responses and hash-derived unit embeddings; no transport
namespace normsgame::gateway {

enum class Mode { Live, Record, Replay, Stub };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

struct Message {
  std::string role;
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

struct ModelRequest {
  std::string model;
  double temperature = 0.0;
  std::vector<Message> messages;

  // temperature >= 0, messages non-empty, first role is "system".
  void validate() const;
};

struct EmbeddingVector {
  std::vector<double> values;
  std::string model;
};

class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised in REPLAY mode when no fixture exists for a request.
class FixtureMissing : public GatewayError {
 public:
  explicit FixtureMissing(std::string hash)
      : GatewayError("no fixture recorded for request " + hash), hash_(std::move(hash)) {}
  const std::string& hash() const { return hash_; }

 private:
  std::string hash_;
};

// Connection-level failure (DNS, refused, timeout). Always retryable.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

class Transport {
 public:
  virtual ~Transport() = default;
  // POST a JSON body to `path` (relative to the endpoint base URL).
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const Headers& headers) = 0;
};

// HTTP(S) transport for a base URL such as "https://api.openai.com/v1".
std::unique_ptr<Transport> make_http_transport(const std::string& base_url,
                                               std::chrono::seconds timeout);

struct RetryPolicy {
  int attempts = 3;
  std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(1000),
                                                 std::chrono::milliseconds(4000)};
};

struct GatewayConfig {
  Mode mode = Mode::Stub;
  std::string endpoint = "https://api.openai.com/v1";
  std::string chat_model = "gpt-4-0125-preview";
  std::string embedding_model = "text-embedding-3-small";
  double temperature = 0.0;
  std::filesystem::path fixture_dir;
  std::size_t stub_embedding_dim = 64;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string stub_response;
  std::chrono::seconds timeout{120};
  RetryPolicy retry;
};

// One entry per chat/embedding call, for cost and latency accounting.
struct CallRecord {
  std::string kind;  // "chat" | "embedding"
  std::string hash;
  Mode mode = Mode::Stub;
  int attempts = 0;
  double latency_ms = 0.0;
  std::optional<long> prompt_tokens;
  std::optional<long> completion_tokens;
  std::vector<std::string> retry_log;  // one line per failed attempt
};

using StubResponder = std::function<std::string(const ModelRequest&)>;
using Sleeper = std::function<void(std::chrono::milliseconds)>;
using CallObserver = std::function<void(const CallRecord&)>;

// Canonical JSON of a request: sorted keys, compact separators.
std::string canonical_json(const ModelRequest& request);
std::string sha256_hex(std::string_view data);
std::string request_hash(const ModelRequest& request);
std::string embedding_hash(std::string_view model, std::string_view text);

// Deterministic unit vector derived from SHA-256 of the text.
std::vector<double> stub_embedding(std::string_view text, std::size_t dim);

// Persisted responses, one JSON file per request hash.
class FixtureStore {
 public:
  explicit FixtureStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<nlohmann::json> load(const std::string& hash) const;
  void save(const std::string& hash, const nlohmann::json& fixture) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

// Thread-safe; each call blocks until the response is available.
class Gateway {
 public:
  // LIVE/RECORD need an API key in config.api_key_env; when `transport` is
  // null an HTTP transport for config.endpoint is created. REPLAY/STUB never
  // create or use a transport.
  explicit Gateway(GatewayConfig config, std::unique_ptr<Transport> transport = nullptr);

  std::string complete(const ModelRequest& request);
  EmbeddingVector embed(std::string_view text);

  // STUB chat responses; defaults to config.stub_response.
  void set_stub_responder(StubResponder responder);
  void set_sleeper(Sleeper sleeper);
  void set_call_observer(CallObserver observer);

  const GatewayConfig& config() const { return config_; }
  Mode mode() const { return config_.mode; }
  std::vector<CallRecord> calls() const;

 private:
  nlohmann::json post_with_retry(const std::string& path, const nlohmann::json& body,
                                 CallRecord& record);
  void finish(CallRecord record);

  GatewayConfig config_;
  std::unique_ptr<Transport> transport_;
  std::optional<FixtureStore> fixtures_;
  std::string api_key_;
  StubResponder stub_;
  Sleeper sleep_;
  CallObserver observer_;
  mutable std::mutex mutex_;
  std::vector<CallRecord> calls_;
};

// Echo responder: returns the content of the last message.
std::string echo_last_message(const ModelRequest& request);

}  // namespace normsgame::gateway
