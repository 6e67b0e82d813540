#pragma once

#include "sba/oracle.hpp"

#include <memory>
#include <mutex>
#include <string>

namespace sba {

struct HttpOracleOptions {
  int connect_retries = 3;
  int rate_limit_retries = 50;
  int retry_backoff_ms = 10;
  int timeout_sec = 10;
};

/// Remote score oracle speaking the /v1/score protocol. A 429 is retried
/// after a short backoff and is never counted as a query; 400 and malformed
/// bodies raise ProtocolError; confirmed non-delivery raises TransportError.
/// Requests are serialized over one keep-alive connection, so the client is
/// safe to share between concurrent runs.
class HttpOracle : public ScoreOracle {
 public:
  /// base_url like "http://127.0.0.1:8300". The service does not advertise
  /// its input shape, so the caller supplies the expected one.
  HttpOracle(const std::string& base_url, const Shape& shape,
             const HttpOracleOptions& options = {});
  ~HttpOracle() override;

  Shape input_shape() const override { return shape_; }
  int num_classes() const override { return 0; }
  ScoreResponse score(const ImageTensor& x) const override;

 private:
  struct Client;

  Shape shape_;
  HttpOracleOptions options_;
  mutable std::mutex mutex_;
  std::unique_ptr<Client> client_;
};

}  // namespace sba
