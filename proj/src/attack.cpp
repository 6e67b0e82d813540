#include "sba/attack.hpp"

#include "sba/wire.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sba {

int AttackConfig::resolved_max_iterations() const {
  if (max_iterations > 0) return max_iterations;
  return mode.kind == AttackKind::Targeted ? 30000 : 10000;
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("epsilon must be positive");
  }
  if (max_iterations < 0) throw std::invalid_argument("max_iterations must be positive");
  if (query_budget && *query_budget < 0) throw std::invalid_argument("query budget must be non-negative");
  switch (mode.kind) {
    case AttackKind::Untargeted:
      if (mode.label < 0) throw std::invalid_argument("untargeted mode needs a label");
      break;
    case AttackKind::Targeted:
      if (mode.target < 0) throw std::invalid_argument("targeted mode needs a target class");
      break;
    case AttackKind::ConceptRemoval:
      if (mode.top_k < 1) throw std::invalid_argument("concept removal needs top_k >= 1");
      break;
  }
  basis.validate();
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::Success: return "success";
    case Termination::IterationCap: return "iteration_cap";
    case Termination::QueryBudget: return "query_budget";
    case Termination::BasisExhausted: return "basis_exhausted";
  }
  return "unknown";
}

namespace {

nlohmann::json mode_to_json(const AttackMode& mode) {
  switch (mode.kind) {
    case AttackKind::Untargeted: return {{"kind", "untargeted"}, {"label", mode.label}};
    case AttackKind::Targeted: return {{"kind", "targeted"}, {"target", mode.target}};
    case AttackKind::ConceptRemoval: return {{"kind", "concept_removal"}, {"top_k", mode.top_k}};
  }
  throw std::logic_error("unreachable");
}

AttackMode mode_from_json(const nlohmann::json& doc) {
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "untargeted") return AttackMode::untargeted(doc.at("label").get<int>());
  if (kind == "targeted") return AttackMode::targeted(doc.at("target").get<int>());
  if (kind == "concept_removal") return AttackMode::concept_removal(doc.at("top_k").get<int>());
  throw std::invalid_argument("unknown attack mode '" + kind + "'");
}

nlohmann::json basis_to_json(const BasisSpec& basis) {
  nlohmann::json doc;
  doc["kind"] = basis.kind == BasisKind::Pixel ? "pixel" : "dct";
  doc["shape"] = {basis.shape.channels, basis.shape.height, basis.shape.width};
  if (basis.kind == BasisKind::Dct) {
    doc["initial_fraction"] = basis.initial_fraction.str();
    doc["expansion_increment"] = basis.expansion_increment.str();
  }
  return doc;
}

BasisSpec basis_from_json(const nlohmann::json& doc) {
  BasisSpec basis;
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "pixel") {
    basis.kind = BasisKind::Pixel;
  } else if (kind == "dct") {
    basis.kind = BasisKind::Dct;
  } else {
    throw std::invalid_argument("unknown basis kind '" + kind + "'");
  }
  const auto& shape = doc.at("shape");
  basis.shape = Shape{shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
  if (basis.kind == BasisKind::Dct) {
    basis.initial_fraction = Fraction::parse(doc.at("initial_fraction").get<std::string>());
    basis.expansion_increment = Fraction::parse(doc.at("expansion_increment").get<std::string>());
  }
  return basis;
}

}  // namespace

nlohmann::json AttackConfig::to_json() const {
  nlohmann::json doc;
  doc["epsilon"] = epsilon;
  doc["max_iterations"] = resolved_max_iterations();
  doc["mode"] = mode_to_json(mode);
  doc["basis"] = basis_to_json(basis);
  doc["clamp"] = clamp;
  doc["seed"] = seed;
  doc["query_budget"] = query_budget ? nlohmann::json(*query_budget) : nlohmann::json(nullptr);
  return doc;
}

AttackConfig AttackConfig::from_json(const nlohmann::json& doc) {
  AttackConfig config;
  config.epsilon = doc.at("epsilon").get<double>();
  config.max_iterations = doc.value("max_iterations", 0);
  config.mode = mode_from_json(doc.at("mode"));
  config.basis = basis_from_json(doc.at("basis"));
  config.clamp = doc.value("clamp", false);
  config.seed = doc.value("seed", std::uint64_t{0});
  if (doc.contains("query_budget") && !doc["query_budget"].is_null()) {
    config.query_budget = doc["query_budget"].get<long>();
  }
  return config;
}

std::vector<std::string> top_labels(const ScoreResponse& response, int k) {
  const ScoreResponse truncated = truncate_to_concepts(response, k);
  std::vector<std::string> labels;
  const int n = std::min<int>(k, static_cast<int>(truncated.concepts.size()));
  labels.reserve(n);
  for (int i = 0; i < n; ++i) labels.push_back(truncated.concepts[i].label);
  return labels;
}

double adversarial_loss(const AttackMode& mode, const ScoreResponse& scores,
                        const std::vector<std::string>& original_top) {
  switch (mode.kind) {
    case AttackKind::Untargeted:
      if (scores.mode != ScoreMode::FullProbs) {
        throw std::logic_error("untargeted loss needs full probabilities");
      }
      if (mode.label >= scores.probs.size()) throw std::out_of_range("label out of range");
      return scores.probs[mode.label];
    case AttackKind::Targeted:
      if (scores.mode != ScoreMode::FullProbs) {
        throw std::logic_error("targeted loss needs full probabilities");
      }
      if (mode.target >= scores.probs.size()) throw std::out_of_range("target out of range");
      return -scores.probs[mode.target];
    case AttackKind::ConceptRemoval: {
      // A label missing from the truncated list contributes 0: the only
      // monotone completion under partial information.
      const ScoreResponse view = truncate_to_concepts(scores, mode.top_k);
      double worst = 0.0;
      for (const std::string& label : original_top) {
        for (const Concept& c : view.concepts) {
          if (c.label == label) {
            worst = std::max(worst, c.score);
            break;
          }
        }
      }
      return worst;
    }
  }
  throw std::logic_error("unreachable");
}

bool success_predicate(const AttackMode& mode, const ScoreResponse& original_scores,
                       const ScoreResponse& scores) {
  switch (mode.kind) {
    case AttackKind::Untargeted:
      return argmax_class(scores) != mode.label;
    case AttackKind::Targeted:
      return argmax_class(scores) == mode.target;
    case AttackKind::ConceptRemoval: {
      const std::vector<std::string> original = top_labels(original_scores, mode.top_k);
      const ScoreResponse view = truncate_to_concepts(scores, mode.top_k);
      for (const std::string& label : original) {
        for (const Concept& c : view.concepts) {
          if (c.label == label) return false;
        }
      }
      return true;
    }
  }
  throw std::logic_error("unreachable");
}

namespace {

ImageTensor compose_probe(const ImageTensor& x, const Eigen::VectorXd& delta,
                          const ImageTensor& q, double alpha, bool clamp) {
  ImageTensor probe(x.shape);
  probe.data = x.data + delta + alpha * q.data;
  if (clamp) probe.data = probe.data.cwiseMax(0.0).cwiseMin(1.0);
  return probe;
}

double reported_norm(const ImageTensor& x, const PerturbationAccumulator& acc, bool clamp) {
  if (!clamp) return acc.norm();
  return (perturbed_image(x, acc, true).data - x.data).norm();
}

}  // namespace

AttackResult run_attack(const ImageTensor& x, const AttackConfig& config,
                        const ScoreOracle& oracle) {
  config.validate();
  if (!(x.shape == oracle.input_shape())) {
    throw ShapeError("image shape " + to_string(x.shape) + " does not match oracle shape " +
                     to_string(oracle.input_shape()));
  }
  if (!(x.shape == config.basis.shape)) {
    throw ShapeError("basis shape " + to_string(config.basis.shape) +
                     " does not match image shape " + to_string(x.shape));
  }
  if (!x.all_finite()) throw std::invalid_argument("image has non-finite entries");

  AttackResult result;
  result.perturbation = PerturbationAccumulator(x.shape);
  QueryLedger ledger(config.query_budget);
  const AttackMode& mode = config.mode;

  ScoreResponse initial;
  try {
    initial = score(oracle, quantize_to_wire(x), ledger);
  } catch (const BudgetExhausted&) {
    result.termination = Termination::QueryBudget;
    result.queries_used = ledger.total();
    return result;
  }

  if (mode.kind != AttackKind::ConceptRemoval && initial.mode == ScoreMode::FullProbs) {
    const int classes = static_cast<int>(initial.probs.size());
    if (mode.kind == AttackKind::Untargeted && mode.label >= classes) {
      throw std::invalid_argument("label out of range for oracle with " +
                                  std::to_string(classes) + " classes");
    }
    if (mode.kind == AttackKind::Targeted && mode.target >= classes) {
      throw std::invalid_argument("target out of range for oracle with " +
                                  std::to_string(classes) + " classes");
    }
  }
  if (mode.kind == AttackKind::Untargeted && argmax_class(initial) != mode.label) {
    throw PreconditionError("clean image is not classified as label " +
                            std::to_string(mode.label));
  }
  if (mode.kind == AttackKind::ConceptRemoval) {
    result.original_top_concepts = top_labels(initial, mode.top_k);
  }

  double current_loss = adversarial_loss(mode, initial, result.original_top_concepts);
  result.initial_loss = current_loss;
  result.final_scores = initial;

  if (success_predicate(mode, initial, initial)) {
    result.success = true;
    result.termination = Termination::Success;
    result.queries_used = ledger.total();
    return result;
  }

  BasisSampler sampler(config.basis, config.seed);
  const int max_iterations = config.resolved_max_iterations();
  result.termination = Termination::IterationCap;

  for (int iteration = 1; iteration <= max_iterations; ++iteration) {
    const auto direction = sampler.next_direction();
    if (!direction) {
      result.termination = Termination::BasisExhausted;
      break;
    }
    result.iterations_used = iteration;
    const ImageTensor q = materialize(*direction, x.shape);

    bool accepted = false;
    bool stop = false;
    int probes_this_direction = 0;
    for (const double alpha : {config.epsilon, -config.epsilon}) {
      const ImageTensor probe =
          compose_probe(x, result.perturbation.delta(), q, alpha, config.clamp);
      ScoreResponse response;
      try {
        response = score(oracle, quantize_to_wire(probe), ledger);
      } catch (const BudgetExhausted&) {
        result.termination = Termination::QueryBudget;
        result.partial_probe_queries = probes_this_direction;
        stop = true;
        break;
      }
      ++probes_this_direction;
      const double loss = adversarial_loss(mode, response, result.original_top_concepts);
      if (loss < current_loss) {
        result.perturbation.apply_step(*direction, alpha);
        current_loss = loss;
        result.final_scores = response;
        if (alpha > 0) {
          ++result.accepted_first_probe;
        } else {
          ++result.accepted_second_probe;
        }
        result.trajectory.push_back({iteration, ledger.total(), loss});
        accepted = true;
        if (success_predicate(mode, initial, response)) {
          result.success = true;
          result.termination = Termination::Success;
          stop = true;
        }
        break;
      }
    }
    if (!accepted && !stop) ++result.discarded_directions;
    if (stop) break;
  }

  result.queries_used = ledger.total();
  result.final_norm = reported_norm(x, result.perturbation, config.clamp);
  return result;
}

nlohmann::json AttackResult::to_json(const AttackConfig& config) const {
  nlohmann::json doc;
  doc["config"] = config.to_json();
  doc["success"] = success;
  doc["queries_used"] = queries_used;
  doc["iterations_used"] = iterations_used;
  doc["final_norm"] = final_norm;
  doc["termination_reason"] = to_string(termination);
  doc["initial_loss"] = initial_loss;
  doc["accepted_first_probe"] = accepted_first_probe;
  doc["accepted_second_probe"] = accepted_second_probe;
  doc["discarded_directions"] = discarded_directions;
  doc["partial_probe_queries"] = partial_probe_queries;

  nlohmann::json trajectory_doc = nlohmann::json::array();
  for (const TrajectoryPoint& p : trajectory) {
    trajectory_doc.push_back({{"iteration", p.iteration}, {"queries", p.queries}, {"loss", p.loss}});
  }
  doc["trajectory"] = std::move(trajectory_doc);

  nlohmann::json steps_doc = nlohmann::json::array();
  for (const Step& step : perturbation.steps()) {
    steps_doc.push_back({{"kind", step.direction.kind == DirectionKind::PixelAxis ? "pixel" : "dct"},
                         {"channel", step.direction.channel},
                         {"a", step.direction.a},
                         {"b", step.direction.b},
                         {"alpha", step.alpha}});
  }
  const Shape& s = perturbation.shape();
  doc["perturbation"] = {{"shape", {s.channels, s.height, s.width}},
                         {"accepted_count", perturbation.accepted_count()},
                         {"steps", std::move(steps_doc)}};
  doc["final_scores"] = response_to_json(final_scores);
  if (!original_top_concepts.empty()) doc["original_top_concepts"] = original_top_concepts;
  return doc;
}

std::vector<SweepRow> epsilon_sweep(const ImageTensor& x, int label, const ScoreOracle& oracle,
                                    const BasisSpec& basis, const std::vector<double>& eps_grid,
                                    int samples, std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("sweep needs at least one sample direction");
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    if (eps_grid[i] < 0.0 || (i > 0 && eps_grid[i] <= eps_grid[i - 1])) {
      throw std::invalid_argument("epsilon grid must be non-negative and ascending");
    }
  }
  basis.validate();
  QueryLedger ledger;  // diagnostic: unlimited, separate from any attack budget
  const ScoreResponse baseline = score(oracle, quantize_to_wire(x), ledger);
  if (baseline.mode != ScoreMode::FullProbs) {
    throw std::logic_error("epsilon sweep needs a full-probability oracle");
  }
  if (label < 0 || label >= baseline.probs.size()) throw std::out_of_range("label out of range");
  const double p0 = baseline.probs[label];

  // One direction set shared across the grid, so rows are comparable.
  BasisSampler sampler(basis, seed);
  std::vector<ImageTensor> directions;
  directions.reserve(samples);
  for (int i = 0; i < samples; ++i) {
    const auto direction = sampler.next_direction();
    if (!direction) break;
    directions.push_back(materialize(*direction, x.shape));
  }

  std::vector<SweepRow> rows;
  rows.reserve(eps_grid.size());
  for (const double eps : eps_grid) {
    SweepRow row;
    row.epsilon = eps;
    if (eps == 0.0) {
      rows.push_back(row);
      continue;
    }
    double sum = 0.0;
    long descending = 0;
    for (const ImageTensor& q : directions) {
      ImageTensor probe(x.shape);
      probe.data = x.data + eps * q.data;
      const double p_plus = score(oracle, quantize_to_wire(probe), ledger).probs[label];
      probe.data = x.data - eps * q.data;
      const double p_minus = score(oracle, quantize_to_wire(probe), ledger).probs[label];
      const double delta_p = std::min(p_plus, p_minus) - p0;
      sum += delta_p;
      if (delta_p < 0.0) ++descending;
    }
    row.mean_delta_p = sum / static_cast<double>(directions.size());
    row.fraction_descending = static_cast<double>(descending) / static_cast<double>(directions.size());
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json doc = nlohmann::json::array();
  for (const SweepRow& row : rows) {
    doc.push_back({{"epsilon", row.epsilon},
                   {"mean_delta_p", row.mean_delta_p},
                   {"fraction_descending", row.fraction_descending}});
  }
  return doc;
}

}  // namespace sba
