#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sba/attack.hpp"
#include "sba/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

using namespace sba;

namespace {

ImageTensor random_image(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageTensor x(shape);
  for (long i = 0; i < shape.size(); ++i) x.data[i] = u(rng);
  return x;
}

BasisSpec pixel_basis(const Shape& shape) {
  return BasisSpec{BasisKind::Pixel, shape, Fraction(1, 8), Fraction(1, 32)};
}

BasisSpec dct_basis(const Shape& shape) {
  return BasisSpec{BasisKind::Dct, shape, Fraction(1, 8), Fraction(1, 32)};
}

// Binary linear fixture with the clean image shifted to logit margin m.
struct MarginSetup {
  LinearSoftmaxModel model;
  ImageTensor image;
};

MarginSetup margin_setup(const Shape& shape, double margin, std::uint64_t seed) {
  LinearSoftmaxModel model = generate_linear_model(shape, 2, seed);
  ImageTensor x = random_image(shape, seed + 1);
  const Eigen::VectorXd diff = model.weight_diff(0, 1);
  const double gap = diff.dot(x.data) + model.bias()[0] - model.bias()[1];
  x.data += ((margin - gap) / diff.squaredNorm()) * diff;
  return {std::move(model), std::move(x)};
}

void check_query_arithmetic(const AttackResult& r) {
  CHECK(r.queries_used == 1 + r.accepted_first_probe +
                              2 * (r.accepted_second_probe + r.discarded_directions) +
                              r.partial_probe_queries);
}

}  // namespace

TEST_CASE("adversarial loss per mode") {
  ScoreResponse r;
  r.mode = ScoreMode::FullProbs;
  r.probs.resize(3);
  r.probs << 0.1, 0.2, 0.7;
  CHECK(adversarial_loss(AttackMode::untargeted(2), r) == doctest::Approx(0.7));

  r.probs.resize(2);
  r.probs << 0.25, 0.75;
  CHECK(adversarial_loss(AttackMode::targeted(0), r) == doctest::Approx(-0.25));

  ScoreResponse concepts;
  concepts.mode = ScoreMode::TopConcepts;
  concepts.concepts = {{"D", 0.9}, {"B", 0.4}};
  // Original top three were {A, B, C}; A and C are absent and contribute 0.
  CHECK(adversarial_loss(AttackMode::concept_removal(3), concepts, {"A", "B", "C"}) ==
        doctest::Approx(0.4));
  CHECK(adversarial_loss(AttackMode::concept_removal(3), concepts, {"A", "C"}) ==
        doctest::Approx(0.0));

  CHECK_THROWS_AS(adversarial_loss(AttackMode::untargeted(0), concepts), std::logic_error);
}

TEST_CASE("success predicates") {
  ScoreResponse r;
  r.mode = ScoreMode::FullProbs;
  r.probs.resize(2);
  r.probs << 0.6, 0.4;
  CHECK(success_predicate(AttackMode::untargeted(1), r, r));
  CHECK_FALSE(success_predicate(AttackMode::untargeted(0), r, r));
  CHECK_FALSE(success_predicate(AttackMode::targeted(1), r, r));
  CHECK(success_predicate(AttackMode::targeted(0), r, r));

  ScoreResponse original;
  original.mode = ScoreMode::TopConcepts;
  original.concepts = {{"A", 0.9}, {"B", 0.8}, {"C", 0.7}};
  ScoreResponse disjoint;
  disjoint.mode = ScoreMode::TopConcepts;
  disjoint.concepts = {{"D", 0.9}, {"E", 0.8}, {"F", 0.7}};
  CHECK(success_predicate(AttackMode::concept_removal(3), original, disjoint));
  ScoreResponse lingering;
  lingering.mode = ScoreMode::TopConcepts;
  lingering.concepts = {{"D", 0.9}, {"C", 0.1}};
  CHECK_FALSE(success_predicate(AttackMode::concept_removal(3), original, lingering));
}

TEST_CASE("config validation and defaults") {
  AttackConfig config;
  config.mode = AttackMode::untargeted(0);
  config.basis = pixel_basis(Shape{1, 4, 4});
  CHECK(config.resolved_max_iterations() == 10000);
  config.mode = AttackMode::targeted(1);
  CHECK(config.resolved_max_iterations() == 30000);
  CHECK_NOTHROW(config.validate());

  config.epsilon = 0.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config.epsilon = 0.2;
  config.mode = AttackMode::targeted(-1);
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("config json round trip") {
  AttackConfig config;
  config.epsilon = 0.1;
  config.max_iterations = 500;
  config.mode = AttackMode::concept_removal(3);
  config.basis = dct_basis(Shape{3, 16, 16});
  config.clamp = true;
  config.seed = 99;
  config.query_budget = 4000;

  const AttackConfig back = AttackConfig::from_json(config.to_json());
  CHECK(back.to_json().dump() == config.to_json().dump());
  CHECK(back.epsilon == 0.1);
  CHECK(back.basis.initial_fraction == Fraction(1, 8));
  CHECK(back.query_budget == std::optional<long>(4000));

  AttackConfig unlimited;
  unlimited.mode = AttackMode::untargeted(1);
  unlimited.basis = pixel_basis(Shape{1, 2, 2});
  const AttackConfig back2 = AttackConfig::from_json(unlimited.to_json());
  CHECK_FALSE(back2.query_budget.has_value());
}

TEST_CASE("clean image already at the target succeeds with one query") {
  const Shape shape{1, 2, 2};
  const MarginSetup setup = margin_setup(shape, 1.0, 5);  // argmax is class 0

  AttackConfig config;
  config.mode = AttackMode::targeted(0);
  config.basis = pixel_basis(shape);
  const AttackResult r = run_attack(setup.image, config, setup.model);
  CHECK(r.success);
  CHECK(r.queries_used == 1);
  CHECK(r.iterations_used == 0);
  CHECK(r.final_norm == 0.0);
  CHECK(r.perturbation.accepted_count() == 0);
  CHECK(r.termination == Termination::Success);
}

TEST_CASE("misclassified clean image is a precondition error") {
  const Shape shape{1, 2, 2};
  const MarginSetup setup = margin_setup(shape, 1.0, 6);
  AttackConfig config;
  config.mode = AttackMode::untargeted(1);  // model says class 0
  config.basis = pixel_basis(shape);
  CHECK_THROWS_AS(run_attack(setup.image, config, setup.model), PreconditionError);
}

TEST_CASE("binary linear margin attack succeeds and obeys the sign rule") {
  const Shape shape{1, 4, 4};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MarginSetup setup = margin_setup(shape, 1.0, 1000 + seed);
    AttackConfig config;
    config.mode = AttackMode::untargeted(0);
    config.basis = pixel_basis(shape);
    config.seed = seed;

    const AttackResult r = run_attack(setup.image, config, setup.model);
    CHECK(r.success);
    CHECK(r.termination == Termination::Success);

    // Every accepted step must point against the decision direction.
    const Eigen::VectorXd diff = setup.model.weight_diff(0, 1);
    for (const Step& step : r.perturbation.steps()) {
      const ImageTensor q = materialize(step.direction, shape);
      CHECK(step.alpha * diff.dot(q.data) < 0.0);
    }
    check_query_arithmetic(r);

    // Strict descent along the trajectory, starting below the initial loss.
    double last = r.initial_loss;
    for (const TrajectoryPoint& p : r.trajectory) {
      CHECK(p.loss < last);
      last = p.loss;
    }
  }
}

TEST_CASE("same seed replays bit-for-bit") {
  const Shape shape{3, 8, 8};
  const SmallMlpModel model = generate_mlp_model(shape, 5, {12}, 404);
  const ImageTensor x = random_image(shape, 404);
  AttackConfig config;
  config.mode = AttackMode::untargeted(argmax_class(model.score(quantize_to_wire(x))));
  config.basis = pixel_basis(shape);
  config.seed = 17;
  config.max_iterations = 150;

  const AttackResult a = run_attack(x, config, model);
  const AttackResult b = run_attack(x, config, model);
  CHECK(a.to_json(config).dump() == b.to_json(config).dump());
  CHECK((a.perturbation.delta() - b.perturbation.delta()).norm() == 0.0);
}

TEST_CASE("norm law and delta integrity on mlp runs") {
  const Shape shape{3, 8, 8};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SmallMlpModel model = generate_mlp_model(shape, 6, {16}, 500 + seed);
    const ImageTensor x = random_image(shape, 600 + seed);
    AttackConfig config;
    config.mode = AttackMode::untargeted(argmax_class(model.score(quantize_to_wire(x))));
    config.basis = seed % 2 == 0 ? pixel_basis(shape) : dct_basis(shape);
    config.seed = seed;
    config.max_iterations = 120;

    const AttackResult r = run_attack(x, config, model);
    const long k = r.perturbation.accepted_count();
    const double expected_sq = k * config.epsilon * config.epsilon;
    if (k > 0) {
      CHECK(std::abs(r.final_norm * r.final_norm - expected_sq) <= 1e-6 * expected_sq);
    }
    CHECK(r.final_norm <= std::sqrt(double(config.resolved_max_iterations())) * config.epsilon);
    // Discarded directions leave delta untouched: recompute from steps.
    CHECK((r.perturbation.resummed_delta() - r.perturbation.delta()).norm() < 1e-7);
    check_query_arithmetic(r);
    CHECK(r.iterations_used ==
          r.accepted_first_probe + r.accepted_second_probe + r.discarded_directions +
              (r.partial_probe_queries > 0 ? 1 : 0));
  }
}

TEST_CASE("uniform oracle discards every direction and exhausts the basis") {
  const Shape shape{1, 3, 3};
  LinearSoftmaxModel model(shape, Eigen::MatrixXd::Zero(2, shape.size()),
                           Eigen::VectorXd::Zero(2));
  const ImageTensor x = random_image(shape, 8);
  AttackConfig config;
  config.mode = AttackMode::untargeted(0);  // uniform ties resolve to class 0
  config.basis = pixel_basis(shape);

  const AttackResult r = run_attack(x, config, model);
  CHECK_FALSE(r.success);
  CHECK(r.termination == Termination::BasisExhausted);
  CHECK(r.discarded_directions == shape.size());
  CHECK(r.queries_used == 1 + 2 * shape.size());
  CHECK(r.perturbation.accepted_count() == 0);
  CHECK(r.final_norm == 0.0);
  check_query_arithmetic(r);
}

TEST_CASE("query budget terminates the run with exact accounting") {
  const Shape shape{1, 3, 3};
  LinearSoftmaxModel model(shape, Eigen::MatrixXd::Zero(2, shape.size()),
                           Eigen::VectorXd::Zero(2));
  const ImageTensor x = random_image(shape, 9);
  AttackConfig config;
  config.mode = AttackMode::untargeted(0);
  config.basis = pixel_basis(shape);

  for (long budget : {1, 2, 4, 7}) {
    config.query_budget = budget;
    const AttackResult r = run_attack(x, config, model);
    CHECK_FALSE(r.success);
    CHECK(r.termination == Termination::QueryBudget);
    CHECK(r.queries_used == budget);  // never exceeds, and uses it fully here
    check_query_arithmetic(r);
  }

  config.query_budget = 0;
  const AttackResult r = run_attack(x, config, model);
  CHECK(r.termination == Termination::QueryBudget);
  CHECK(r.queries_used == 0);
}

TEST_CASE("clamped runs report the realized distance") {
  const Shape shape{1, 4, 4};
  const MarginSetup setup = margin_setup(shape, 2.0, 77);
  ImageTensor x = setup.image;
  // Push entries to the boundary so clamping visibly bites.
  x.data = x.data.cwiseMin(1.0).cwiseMax(0.0);
  const double gap = setup.model.weight_diff(0, 1).dot(x.data) + setup.model.bias()[0] -
                     setup.model.bias()[1];
  if (gap <= 0.0) return;  // clipping flipped the class; nothing to test

  AttackConfig config;
  config.mode = AttackMode::untargeted(0);
  config.basis = pixel_basis(shape);
  config.clamp = true;
  const AttackResult r = run_attack(x, config, setup.model);
  const long k = r.perturbation.accepted_count();
  if (k > 0) {
    CHECK(r.final_norm <= std::sqrt(double(k)) * config.epsilon + 1e-12);
  }
}

TEST_CASE("targeted attack raises the target probability monotonically") {
  const Shape shape{1, 4, 4};
  const MarginSetup setup = margin_setup(shape, 0.8, 303);
  AttackConfig config;
  config.mode = AttackMode::targeted(1);  // flip the margin toward class 1
  config.basis = pixel_basis(shape);
  const AttackResult r = run_attack(setup.image, config, setup.model);
  CHECK(r.success);
  CHECK(argmax_class(r.final_scores) == 1);
  double last = r.initial_loss;  // -p(target) strictly decreasing
  for (const TrajectoryPoint& p : r.trajectory) {
    CHECK(p.loss < last);
    last = p.loss;
  }
}

TEST_CASE("epsilon sweep on the binary linear model") {
  const Shape shape{1, 4, 4};
  // Plant exact zeros in w_diff so some pixel directions provably cannot
  // descend.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, shape.size());
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  int dense_components = 0;
  for (long j = 0; j < shape.size(); ++j) {
    if (j % 4 == 3) continue;  // every fourth component stays zero
    const double d = (rng() % 2 ? 1.0 : -1.0) * mag(rng);
    w(0, j) = d / 2.0;
    w(1, j) = -d / 2.0;
    ++dense_components;
  }
  LinearSoftmaxModel model(shape, w, Eigen::VectorXd::Zero(2));
  const ImageTensor x = random_image(shape, 16);
  const int label = argmax_class(model.score(quantize_to_wire(x)));

  const int samples = 16;  // the full pixel basis
  const auto rows = epsilon_sweep(x, label, model, pixel_basis(shape),
                                  {0.0, 0.05, 0.1, 0.2, 0.4}, samples, 44);
  REQUIRE(rows.size() == 5);

  // Zero step: no change, nothing strictly descends.
  CHECK(rows[0].mean_delta_p == 0.0);
  CHECK(rows[0].fraction_descending == 0.0);

  // Exactly the directions with a nonzero w_diff component descend.
  const double expected_fraction = double(dense_components) / samples;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].fraction_descending == doctest::Approx(expected_fraction));
  }

  // Mean best-side change is non-increasing in epsilon.
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
    CHECK(rows[i + 1].mean_delta_p <= rows[i].mean_delta_p + 1e-12);
  }
  CHECK(rows[1].mean_delta_p < 0.0);
}

TEST_CASE("concept removal works against a full-probability oracle") {
  // Labels are synthesized as class_<i> and the returned list is the top
  // mode.top_k classes by probability.
  const Shape shape{1, 4, 4};
  const SmallMlpModel model = generate_mlp_model(shape, 6, {12}, 811);
  const ImageTensor x = random_image(shape, 812);

  AttackConfig config;
  config.mode = AttackMode::concept_removal(2);
  config.basis = pixel_basis(shape);
  config.seed = 813;

  const AttackResult r = run_attack(x, config, model);
  CHECK(r.original_top_concepts.size() == 2);
  double last = r.initial_loss;
  for (const TrajectoryPoint& p : r.trajectory) {
    CHECK(p.loss < last);
    last = p.loss;
  }
  if (r.success) {
    const auto final_top = top_labels(r.final_scores, 2);
    for (const std::string& label : r.original_top_concepts) {
      CHECK(std::find(final_top.begin(), final_top.end(), label) == final_top.end());
    }
  }
}

TEST_CASE("dct basis exhausts through every expansion before giving up") {
  const Shape shape{1, 8, 8};
  LinearSoftmaxModel model(shape, Eigen::MatrixXd::Zero(2, shape.size()),
                           Eigen::VectorXd::Zero(2));
  AttackConfig config;
  config.mode = AttackMode::untargeted(0);
  config.basis = dct_basis(shape);
  const AttackResult r = run_attack(random_image(shape, 14), config, model);
  CHECK(r.termination == Termination::BasisExhausted);
  CHECK(r.discarded_directions == shape.size());  // the full frequency set
  CHECK(r.queries_used == 1 + 2 * shape.size());
}

TEST_CASE("epsilon sweep validates its grid") {
  const Shape shape{1, 4, 4};
  const LinearSoftmaxModel model = generate_linear_model(shape, 2, 3);
  const ImageTensor x = random_image(shape, 3);
  CHECK_THROWS_AS(epsilon_sweep(x, 0, model, pixel_basis(shape), {0.2, 0.1}, 4, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(epsilon_sweep(x, 0, model, pixel_basis(shape), {-0.1, 0.2}, 4, 1),
                  std::invalid_argument);
}
