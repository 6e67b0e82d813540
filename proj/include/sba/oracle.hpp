#pragma once

#include "sba/tensor.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace sba {

struct BudgetExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ScoreMode { FullProbs, TopConcepts };

struct Concept {
  std::string label;
  double score = 0.0;
};

/// A single oracle answer: either the full probability vector over classes,
/// or a truncated top-concept list sorted descending by score.
struct ScoreResponse {
  ScoreMode mode = ScoreMode::FullProbs;
  Eigen::VectorXd probs;          // FullProbs
  std::vector<Concept> concepts;  // TopConcepts
};

/// Smallest index attaining the maximum probability. FullProbs only.
int argmax_class(const ScoreResponse& response);

/// Query accounting for one attack run. The budget is enforced before
/// dispatch, so the total never exceeds a finite budget.
class QueryLedger {
 public:
  QueryLedger() = default;
  explicit QueryLedger(std::optional<long> budget) : budget_(budget) {}

  void check_budget() const {
    if (budget_ && total_ >= *budget_) throw BudgetExhausted("query budget exhausted");
  }
  void charge() { ++total_; }

  long total() const { return total_; }
  const std::optional<long>& budget() const { return budget_; }

 private:
  long total_ = 0;
  std::optional<long> budget_;
};

/// The black-box boundary. Implementations must be safe for concurrent use
/// by independent runs; scoring is a pure function of the input image.
class ScoreOracle {
 public:
  virtual ~ScoreOracle() = default;
  virtual Shape input_shape() const = 0;
  /// Number of classes when known, 0 for remote oracles that do not say.
  virtual int num_classes() const = 0;
  virtual ScoreResponse score(const ImageTensor& x) const = 0;
};

/// Budget-checked dispatch: verifies shape and budget, scores, then counts
/// exactly one query. A transport failure (confirmed non-delivery) propagates
/// without charging the ledger.
ScoreResponse score(const ScoreOracle& oracle, const ImageTensor& x, QueryLedger& ledger);

/// softmax(W x + b) with one weight row per class.
class LinearSoftmaxModel : public ScoreOracle {
 public:
  LinearSoftmaxModel(const Shape& shape, Eigen::MatrixXd weights, Eigen::VectorXd bias);

  Shape input_shape() const override { return shape_; }
  int num_classes() const override { return static_cast<int>(weights_.rows()); }
  ScoreResponse score(const ImageTensor& x) const override;

  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::VectorXd& bias() const { return bias_; }
  /// weights.row(a) - weights.row(b); the decision direction of a class pair.
  Eigen::VectorXd weight_diff(int a, int b) const;

 private:
  Shape shape_;
  Eigen::MatrixXd weights_;  // classes x (c*h*w)
  Eigen::VectorXd bias_;
};

/// Fully connected net with rectifier hidden activations and softmax output.
class SmallMlpModel : public ScoreOracle {
 public:
  SmallMlpModel(const Shape& shape, std::vector<Eigen::MatrixXd> weights,
                std::vector<Eigen::VectorXd> biases);

  Shape input_shape() const override { return shape_; }
  int num_classes() const override { return static_cast<int>(weights_.back().rows()); }
  ScoreResponse score(const ImageTensor& x) const override;

  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

 private:
  Shape shape_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

/// Partial-information wrapper: exposes only the inner oracle's top_k classes
/// as (label, score) pairs with synthetic labels "class_<i>", descending by
/// score with ties broken toward lower class index.
class TopConceptsOracle : public ScoreOracle {
 public:
  TopConceptsOracle(std::shared_ptr<const ScoreOracle> inner, int top_k);

  Shape input_shape() const override { return inner_->input_shape(); }
  int num_classes() const override { return inner_->num_classes(); }
  ScoreResponse score(const ImageTensor& x) const override;

  int top_k() const { return top_k_; }

 private:
  std::shared_ptr<const ScoreOracle> inner_;
  int top_k_;
};

/// Truncates a FullProbs response to its top_k concepts; passthrough for a
/// response that is already a concept list.
ScoreResponse truncate_to_concepts(const ScoreResponse& response, int top_k);

std::string concept_label(int class_index);

// --- model files ------------------------------------------------------------
//
// Linear: {"type":"linear_softmax","shape":[c,h,w],"classes":k,
//          "weights":[[...],...],"bias":[...]}
// MLP:    {"type":"mlp","shape":[c,h,w],"classes":k,
//          "layers":[{"weights":[[...],...],"bias":[...]},...]}
// Unknown keys are preserved but ignored by the loader.

nlohmann::json model_to_json(const LinearSoftmaxModel& model);
nlohmann::json model_to_json(const SmallMlpModel& model);
std::shared_ptr<ScoreOracle> model_from_json(const nlohmann::json& doc);

void save_model(const std::string& path, const nlohmann::json& doc);
std::shared_ptr<ScoreOracle> load_model(const std::string& path);
nlohmann::json load_model_json(const std::string& path);

// --- seeded fixtures --------------------------------------------------------

struct LinearModelOptions {
  bool zero_weights = false;
  /// Recorded in the file as a hint for companion dataset generation.
  double margin_hint = 0.0;
};

/// For two classes the rows are +/- w_diff / 2 with every |w_diff_i| in
/// [0.5, 1.5], so the class-pair decision direction is dense with no zero
/// components. More classes get independent Gaussian rows.
LinearSoftmaxModel generate_linear_model(const Shape& shape, int classes, std::uint64_t seed,
                                         const LinearModelOptions& options = {});

SmallMlpModel generate_mlp_model(const Shape& shape, int classes, const std::vector<int>& hidden,
                                 std::uint64_t seed);

}  // namespace sba
