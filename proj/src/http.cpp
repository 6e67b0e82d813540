#include "sba/http.hpp"

#include "sba/wire.hpp"

#include <chrono>
#include <thread>

#include "httplib.h"

namespace sba {

struct HttpOracle::Client {
  explicit Client(const std::string& base_url) : http(base_url) {}
  httplib::Client http;
};

HttpOracle::HttpOracle(const std::string& base_url, const Shape& shape,
                       const HttpOracleOptions& options)
    : shape_(shape), options_(options), client_(std::make_unique<Client>(base_url)) {
  if (!shape_.valid()) throw ShapeError("invalid oracle shape " + to_string(shape_));
  client_->http.set_connection_timeout(options_.timeout_sec);
  client_->http.set_read_timeout(options_.timeout_sec);
  client_->http.set_keep_alive(true);
}

HttpOracle::~HttpOracle() = default;

ScoreResponse HttpOracle::score(const ImageTensor& x) const {
  const std::string body = tensor_to_wire(x).dump();
  std::lock_guard<std::mutex> lock(mutex_);

  int connect_failures = 0;
  int rate_limited = 0;
  for (;;) {
    httplib::Result res = client_->http.Post("/v1/score", body, "application/json");
    if (!res) {
      if (++connect_failures > options_.connect_retries) {
        throw TransportError("score request not delivered: " + httplib::to_string(res.error()));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(options_.retry_backoff_ms));
      continue;
    }
    if (res->status == 429) {
      if (++rate_limited > options_.rate_limit_retries) {
        throw TransportError("rate limited beyond retry budget");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(options_.retry_backoff_ms));
      continue;
    }
    if (res->status != 200) {
      throw ProtocolError("score endpoint returned status " + std::to_string(res->status) +
                          (res->body.empty() ? "" : ": " + res->body));
    }
    try {
      return response_from_json(nlohmann::json::parse(res->body));
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("malformed score response: ") + e.what());
    }
  }
}

}  // namespace sba
