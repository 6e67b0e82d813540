#pragma once

#include "sba/oracle.hpp"
#include "sba/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace sba {

// Score-service wire format. Request:
//   POST /v1/score  {"shape":[c,h,w],"data":"<base64 of little-endian float32>"}
// Response: {"mode":"full","probs":[...]}
//        or {"mode":"concepts","concepts":[{"label":"...","score":0.97},...]}
// 400 on shape/decode errors, 429 on simulated rate limit (retryable).

std::string base64_encode(const std::vector<std::uint8_t>& data);
/// Throws ProtocolError on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

std::vector<std::uint8_t> pack_f32le(const Eigen::VectorXd& values);
Eigen::VectorXd unpack_f32le(const std::vector<std::uint8_t>& bytes);

nlohmann::json tensor_to_wire(const ImageTensor& x);
ImageTensor tensor_from_wire(const nlohmann::json& doc);

nlohmann::json response_to_json(const ScoreResponse& response);
ScoreResponse response_from_json(const nlohmann::json& doc);

}  // namespace sba
