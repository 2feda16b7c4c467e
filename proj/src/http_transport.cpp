#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "normsgame/gateway.hpp"

namespace normsgame::gateway {
namespace {

class HttpTransport final : public Transport {
 public:
  HttpTransport(const std::string& base_url, std::chrono::seconds timeout) {
    // Split "scheme://host[:port]/prefix" into the client origin and path prefix.
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
      throw GatewayError("endpoint must start with http:// or https://: " + base_url);
    }
    const auto path_start = base_url.find('/', scheme_end + 3);
    const std::string origin =
        path_start == std::string::npos ? base_url : base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? std::string() : base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();

    client_ = std::make_unique<httplib::Client>(origin);
    if (!client_->is_valid()) throw GatewayError("invalid endpoint: " + base_url);
    client_->set_connection_timeout(timeout);
    client_->set_read_timeout(timeout);
    client_->set_write_timeout(timeout);
  }

  HttpResponse post(const std::string& path, const std::string& body,
                    const Headers& headers) override {
    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        h.emplace(k, v);
      }
    }
    std::lock_guard lock(mutex_);
    auto result = client_->Post(prefix_ + path, h, body, content_type);
    if (!result) throw TransportError(httplib::to_string(result.error()));
    return HttpResponse{result->status, result->body};
  }

 private:
  std::mutex mutex_;
  std::unique_ptr<httplib::Client> client_;
  std::string prefix_;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& base_url,
                                               std::chrono::seconds timeout) {
  return std::make_unique<HttpTransport>(base_url, timeout);
}

}  // namespace normsgame::gateway
