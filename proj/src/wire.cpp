#include "sba/wire.hpp"

#include <cstring>

namespace sba {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= data.size(); i += 3) {
    const std::uint32_t triple = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out.push_back(kAlphabet[(triple >> 18) & 0x3f]);
    out.push_back(kAlphabet[(triple >> 12) & 0x3f]);
    out.push_back(kAlphabet[(triple >> 6) & 0x3f]);
    out.push_back(kAlphabet[triple & 0x3f]);
  }
  const std::size_t rest = data.size() - i;
  if (rest == 1) {
    const std::uint32_t triple = data[i] << 16;
    out.push_back(kAlphabet[(triple >> 18) & 0x3f]);
    out.push_back(kAlphabet[(triple >> 12) & 0x3f]);
    out.push_back('=');
    out.push_back('=');
  } else if (rest == 2) {
    const std::uint32_t triple = (data[i] << 16) | (data[i + 1] << 8);
    out.push_back(kAlphabet[(triple >> 18) & 0x3f]);
    out.push_back(kAlphabet[(triple >> 12) & 0x3f]);
    out.push_back(kAlphabet[(triple >> 6) & 0x3f]);
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 payload length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw ProtocolError("misplaced base64 padding");
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw ProtocolError("base64 data after padding");
        vals[k] = decode_char(c);
        if (vals[k] < 0) throw ProtocolError("invalid base64 character");
      }
    }
    const std::uint32_t triple = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back((triple >> 16) & 0xff);
    if (pad < 2) out.push_back((triple >> 8) & 0xff);
    if (pad < 1) out.push_back(triple & 0xff);
  }
  return out;
}

std::vector<std::uint8_t> pack_f32le(const Eigen::VectorXd& values) {
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(values.size()) * 4);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    out.push_back(u & 0xff);
    out.push_back((u >> 8) & 0xff);
    out.push_back((u >> 16) & 0xff);
    out.push_back((u >> 24) & 0xff);
  }
  return out;
}

Eigen::VectorXd unpack_f32le(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 4 != 0) throw ProtocolError("float payload length not a multiple of 4");
  Eigen::VectorXd out(bytes.size() / 4);
  for (std::size_t i = 0; i < bytes.size(); i += 4) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[i]) |
                            (static_cast<std::uint32_t>(bytes[i + 1]) << 8) |
                            (static_cast<std::uint32_t>(bytes[i + 2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[i + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    out[i / 4] = static_cast<double>(f);
  }
  return out;
}

nlohmann::json tensor_to_wire(const ImageTensor& x) {
  nlohmann::json doc;
  doc["shape"] = {x.shape.channels, x.shape.height, x.shape.width};
  doc["data"] = base64_encode(pack_f32le(x.data));
  return doc;
}

ImageTensor tensor_from_wire(const nlohmann::json& doc) {
  if (!doc.contains("shape") || !doc.contains("data")) {
    throw ProtocolError("tensor payload needs shape and data");
  }
  const auto& shape_doc = doc["shape"];
  if (!shape_doc.is_array() || shape_doc.size() != 3) {
    throw ProtocolError("tensor shape must be [c,h,w]");
  }
  Shape shape;
  try {
    shape = Shape{shape_doc[0].get<int>(), shape_doc[1].get<int>(), shape_doc[2].get<int>()};
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("tensor shape entries must be integers");
  }
  if (!shape.valid()) throw ProtocolError("tensor shape entries must be positive");
  if (!doc["data"].is_string()) throw ProtocolError("tensor data must be a base64 string");
  const Eigen::VectorXd values = unpack_f32le(base64_decode(doc["data"].get<std::string>()));
  if (values.size() != shape.size()) {
    throw ProtocolError("tensor payload length does not match shape");
  }
  return ImageTensor(shape, values);
}

nlohmann::json response_to_json(const ScoreResponse& response) {
  nlohmann::json doc;
  if (response.mode == ScoreMode::FullProbs) {
    doc["mode"] = "full";
    nlohmann::json probs = nlohmann::json::array();
    for (Eigen::Index i = 0; i < response.probs.size(); ++i) probs.push_back(response.probs[i]);
    doc["probs"] = std::move(probs);
  } else {
    doc["mode"] = "concepts";
    nlohmann::json concepts = nlohmann::json::array();
    for (const Concept& c : response.concepts) {
      concepts.push_back({{"label", c.label}, {"score", c.score}});
    }
    doc["concepts"] = std::move(concepts);
  }
  return doc;
}

ScoreResponse response_from_json(const nlohmann::json& doc) {
  ScoreResponse response;
  const std::string mode = doc.value("mode", "");
  if (mode == "full") {
    response.mode = ScoreMode::FullProbs;
    const auto& probs = doc.at("probs");
    if (!probs.is_array() || probs.empty()) throw ProtocolError("full response needs probs");
    response.probs.resize(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) response.probs[i] = probs[i].get<double>();
    return response;
  }
  if (mode == "concepts") {
    response.mode = ScoreMode::TopConcepts;
    const auto& concepts = doc.at("concepts");
    if (!concepts.is_array()) throw ProtocolError("concepts response needs a concept list");
    double prev = 1.0;
    for (const auto& c : concepts) {
      Concept parsed{c.at("label").get<std::string>(), c.at("score").get<double>()};
      if (parsed.score > prev) throw ProtocolError("concept list must be sorted descending");
      prev = parsed.score;
      response.concepts.push_back(std::move(parsed));
    }
    return response;
  }
  throw ProtocolError("unknown response mode '" + mode + "'");
}

}  // namespace sba
