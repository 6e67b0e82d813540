#include "sba/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace sba {

int argmax_class(const ScoreResponse& response) {
  if (response.mode != ScoreMode::FullProbs) {
    throw std::logic_error("argmax-class requires a full probability response");
  }
  if (response.probs.size() == 0) throw std::logic_error("empty probability vector");
  int best = 0;
  for (int i = 1; i < response.probs.size(); ++i) {
    if (response.probs[i] > response.probs[best]) best = i;
  }
  return best;
}

ScoreResponse score(const ScoreOracle& oracle, const ImageTensor& x, QueryLedger& ledger) {
  if (!(x.shape == oracle.input_shape())) {
    throw ShapeError("image shape " + to_string(x.shape) + " does not match oracle shape " +
                     to_string(oracle.input_shape()));
  }
  ledger.check_budget();
  ScoreResponse response = oracle.score(x);
  ledger.charge();
  return response;
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd shifted = (logits.array() - logits.maxCoeff()).exp();
  return shifted / shifted.sum();
}

}  // namespace

LinearSoftmaxModel::LinearSoftmaxModel(const Shape& shape, Eigen::MatrixXd weights,
                                       Eigen::VectorXd bias)
    : shape_(shape), weights_(std::move(weights)), bias_(std::move(bias)) {
  if (!shape_.valid()) throw ShapeError("invalid model shape " + to_string(shape_));
  if (weights_.rows() < 2 || weights_.cols() != shape_.size() ||
      bias_.size() != weights_.rows()) {
    throw std::invalid_argument("linear model dimensions are inconsistent");
  }
  if (!weights_.allFinite() || !bias_.allFinite()) {
    throw std::invalid_argument("linear model has non-finite parameters");
  }
}

ScoreResponse LinearSoftmaxModel::score(const ImageTensor& x) const {
  ScoreResponse response;
  response.mode = ScoreMode::FullProbs;
  response.probs = softmax(weights_ * x.data + bias_);
  return response;
}

Eigen::VectorXd LinearSoftmaxModel::weight_diff(int a, int b) const {
  return weights_.row(a).transpose() - weights_.row(b).transpose();
}

SmallMlpModel::SmallMlpModel(const Shape& shape, std::vector<Eigen::MatrixXd> weights,
                             std::vector<Eigen::VectorXd> biases)
    : shape_(shape), weights_(std::move(weights)), biases_(std::move(biases)) {
  if (!shape_.valid()) throw ShapeError("invalid model shape " + to_string(shape_));
  if (weights_.empty() || weights_.size() != biases_.size()) {
    throw std::invalid_argument("mlp needs one bias per weight matrix");
  }
  long expected_in = shape_.size();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].cols() != expected_in || biases_[l].size() != weights_[l].rows()) {
      throw std::invalid_argument("mlp layer dimensions are inconsistent");
    }
    if (!weights_[l].allFinite() || !biases_[l].allFinite()) {
      throw std::invalid_argument("mlp has non-finite parameters");
    }
    expected_in = weights_[l].rows();
  }
  if (expected_in < 2) throw std::invalid_argument("mlp needs at least two output classes");
}

ScoreResponse SmallMlpModel::score(const ImageTensor& x) const {
  Eigen::VectorXd h = x.data;
  for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
    h = (weights_[l] * h + biases_[l]).cwiseMax(0.0);
  }
  ScoreResponse response;
  response.mode = ScoreMode::FullProbs;
  response.probs = softmax(weights_.back() * h + biases_.back());
  return response;
}

std::string concept_label(int class_index) {
  return "class_" + std::to_string(class_index);
}

ScoreResponse truncate_to_concepts(const ScoreResponse& response, int top_k) {
  if (response.mode == ScoreMode::TopConcepts) return response;
  if (top_k < 1) throw std::invalid_argument("top_k must be at least 1");
  std::vector<int> order(response.probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return response.probs[a] > response.probs[b]; });
  ScoreResponse out;
  out.mode = ScoreMode::TopConcepts;
  const int n = std::min<int>(top_k, static_cast<int>(order.size()));
  out.concepts.reserve(n);
  for (int i = 0; i < n; ++i) {
    out.concepts.push_back({concept_label(order[i]), response.probs[order[i]]});
  }
  return out;
}

TopConceptsOracle::TopConceptsOracle(std::shared_ptr<const ScoreOracle> inner, int top_k)
    : inner_(std::move(inner)), top_k_(top_k) {
  if (!inner_) throw std::invalid_argument("top-concepts oracle needs an inner oracle");
  if (top_k_ < 1) throw std::invalid_argument("top_k must be at least 1");
}

ScoreResponse TopConceptsOracle::score(const ImageTensor& x) const {
  return truncate_to_concepts(inner_->score(x), top_k_);
}

// --- model files -------------------------------------------------------------

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& doc) {
  if (!doc.is_array() || doc.empty()) throw std::invalid_argument("weights must be a 2d array");
  const std::size_t cols = doc.front().size();
  Eigen::MatrixXd m(doc.size(), cols);
  for (std::size_t r = 0; r < doc.size(); ++r) {
    if (doc[r].size() != cols) throw std::invalid_argument("ragged weight rows");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = doc[r][c].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& doc) {
  Eigen::VectorXd v(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) v[i] = doc[i].get<double>();
  return v;
}

Shape shape_from_json(const nlohmann::json& doc) {
  if (!doc.is_array() || doc.size() != 3) throw std::invalid_argument("shape must be [c,h,w]");
  return Shape{doc[0].get<int>(), doc[1].get<int>(), doc[2].get<int>()};
}

}  // namespace

nlohmann::json model_to_json(const LinearSoftmaxModel& model) {
  const Shape s = model.input_shape();
  nlohmann::json doc;
  doc["type"] = "linear_softmax";
  doc["shape"] = {s.channels, s.height, s.width};
  doc["classes"] = model.num_classes();
  doc["weights"] = matrix_to_json(model.weights());
  nlohmann::json bias = nlohmann::json::array();
  for (Eigen::Index i = 0; i < model.bias().size(); ++i) bias.push_back(model.bias()[i]);
  doc["bias"] = std::move(bias);
  return doc;
}

nlohmann::json model_to_json(const SmallMlpModel& model) {
  const Shape s = model.input_shape();
  nlohmann::json doc;
  doc["type"] = "mlp";
  doc["shape"] = {s.channels, s.height, s.width};
  doc["classes"] = model.num_classes();
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < model.weights().size(); ++l) {
    nlohmann::json layer;
    layer["weights"] = matrix_to_json(model.weights()[l]);
    nlohmann::json bias = nlohmann::json::array();
    for (Eigen::Index i = 0; i < model.biases()[l].size(); ++i) {
      bias.push_back(model.biases()[l][i]);
    }
    layer["bias"] = std::move(bias);
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

std::shared_ptr<ScoreOracle> model_from_json(const nlohmann::json& doc) {
  const std::string type = doc.at("type").get<std::string>();
  const Shape shape = shape_from_json(doc.at("shape"));
  if (type == "linear_softmax") {
    auto model = std::make_shared<LinearSoftmaxModel>(shape, matrix_from_json(doc.at("weights")),
                                                      vector_from_json(doc.at("bias")));
    if (doc.contains("classes") && doc["classes"].get<int>() != model->num_classes()) {
      throw std::invalid_argument("model file class count disagrees with weights");
    }
    return model;
  }
  if (type == "mlp") {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    for (const auto& layer : doc.at("layers")) {
      weights.push_back(matrix_from_json(layer.at("weights")));
      biases.push_back(vector_from_json(layer.at("bias")));
    }
    auto model = std::make_shared<SmallMlpModel>(shape, std::move(weights), std::move(biases));
    if (doc.contains("classes") && doc["classes"].get<int>() != model->num_classes()) {
      throw std::invalid_argument("model file class count disagrees with weights");
    }
    return model;
  }
  throw std::invalid_argument("unknown model type '" + type + "'");
}

void save_model(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << "\n";
}

nlohmann::json load_model_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json doc;
  in >> doc;
  return doc;
}

std::shared_ptr<ScoreOracle> load_model(const std::string& path) {
  return model_from_json(load_model_json(path));
}

// --- seeded fixtures ----------------------------------------------------------

LinearSoftmaxModel generate_linear_model(const Shape& shape, int classes, std::uint64_t seed,
                                         const LinearModelOptions& options) {
  if (classes < 2) throw std::invalid_argument("need at least two classes");
  const long n = shape.size();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(classes, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(classes);
  if (!options.zero_weights) {
    std::mt19937_64 rng(seed);
    if (classes == 2) {
      // Dense decision direction with a magnitude floor on every component.
      std::uniform_real_distribution<double> mag(0.5, 1.5);
      std::bernoulli_distribution flip(0.5);
      for (long j = 0; j < n; ++j) {
        const double d = (flip(rng) ? -1.0 : 1.0) * mag(rng);
        w(0, j) = d / 2.0;
        w(1, j) = -d / 2.0;
      }
    } else {
      std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
      for (int r = 0; r < classes; ++r) {
        for (long j = 0; j < n; ++j) w(r, j) = gauss(rng);
      }
      std::normal_distribution<double> bias_gauss(0.0, 0.1);
      for (int r = 0; r < classes; ++r) b[r] = bias_gauss(rng);
    }
  }
  (void)options.margin_hint;  // recorded by the caller in the model file
  return LinearSoftmaxModel(shape, std::move(w), std::move(b));
}

SmallMlpModel generate_mlp_model(const Shape& shape, int classes, const std::vector<int>& hidden,
                                 std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("need at least two classes");
  std::mt19937_64 rng(seed);
  std::vector<long> dims;
  dims.push_back(shape.size());
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden layer sizes must be positive");
    dims.push_back(h);
  }
  dims.push_back(classes);

  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / static_cast<double>(dims[l])));
    Eigen::MatrixXd w(dims[l + 1], dims[l]);
    for (long r = 0; r < w.rows(); ++r) {
      for (long c = 0; c < w.cols(); ++c) w(r, c) = gauss(rng);
    }
    std::normal_distribution<double> bias_gauss(0.0, 0.05);
    Eigen::VectorXd b(dims[l + 1]);
    for (long r = 0; r < b.size(); ++r) b[r] = bias_gauss(rng);
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  return SmallMlpModel(shape, std::move(weights), std::move(biases));
}

}  // namespace sba
