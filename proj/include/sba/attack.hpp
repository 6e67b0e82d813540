#pragma once

#include "sba/basis.hpp"
#include "sba/oracle.hpp"
#include "sba/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace sba {

/// Clean image not classified as the stated label (untargeted runs require a
/// correctly classified starting point).
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class AttackKind { Untargeted, Targeted, ConceptRemoval };

struct AttackMode {
  AttackKind kind = AttackKind::Untargeted;
  int label = -1;   ///< y, the class to escape (untargeted)
  int target = -1;  ///< y', the class to reach (targeted)
  int top_k = 3;    ///< number of original top concepts to remove

  static AttackMode untargeted(int y) { return {AttackKind::Untargeted, y, -1, 3}; }
  static AttackMode targeted(int y_prime) { return {AttackKind::Targeted, -1, y_prime, 3}; }
  static AttackMode concept_removal(int k = 3) { return {AttackKind::ConceptRemoval, -1, -1, k}; }
};

struct AttackConfig {
  double epsilon = 0.2;
  /// 0 resolves to the mode default: 10000, or 30000 for targeted runs.
  int max_iterations = 0;
  AttackMode mode = AttackMode::untargeted(0);
  BasisSpec basis;
  bool clamp = false;
  std::uint64_t seed = 0;
  std::optional<long> query_budget;

  int resolved_max_iterations() const;
  /// Throws std::invalid_argument on a bad epsilon, iteration cap, budget,
  /// mode field, or basis spec.
  void validate() const;

  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& doc);
};

enum class Termination { Success, IterationCap, QueryBudget, BasisExhausted };

std::string to_string(Termination t);

struct TrajectoryPoint {
  int iteration = 0;
  long queries = 0;
  double loss = 0.0;
};

struct AttackResult {
  bool success = false;
  PerturbationAccumulator perturbation;
  long queries_used = 0;
  int iterations_used = 0;
  ScoreResponse final_scores;
  /// ||x' - x||; recomputed from the clamped image when clamping is on,
  /// otherwise equal to the accumulator norm.
  double final_norm = 0.0;
  /// One point per accepted step; loss values are strictly decreasing.
  std::vector<TrajectoryPoint> trajectory;
  Termination termination = Termination::IterationCap;

  double initial_loss = 0.0;
  /// Query arithmetic: queries_used == 1 + accepted_first_probe
  ///   + 2*(accepted_second_probe + discarded_directions) + partial_probe_queries.
  long accepted_first_probe = 0;
  long accepted_second_probe = 0;
  long discarded_directions = 0;
  /// 1 when the budget ran out between the two probes of one direction.
  long partial_probe_queries = 0;
  /// Concept mode: the labels the run tries to remove, frozen from the
  /// initial response.
  std::vector<std::string> original_top_concepts;

  nlohmann::json to_json(const AttackConfig& config) const;
};

/// Top k labels of a response: the leading entries of a concept list, or the
/// k highest-probability classes of a full response under synthetic labels.
std::vector<std::string> top_labels(const ScoreResponse& response, int k);

/// Untargeted: probs[y]. Targeted: -probs[y']. ConceptRemoval: the maximum
/// current score over `original_top`, where an absent label scores 0.
double adversarial_loss(const AttackMode& mode, const ScoreResponse& scores,
                        const std::vector<std::string>& original_top = {});

/// Untargeted: prediction moved off y. Targeted: prediction equals y'.
/// ConceptRemoval: none of the original top labels appear in the returned
/// concept list.
bool success_predicate(const AttackMode& mode, const ScoreResponse& original_scores,
                       const ScoreResponse& scores);

/// The attack loop. Queries the clean image once, then per iteration draws a
/// direction q without replacement and probes x + delta + eps*q; a strict
/// loss decrease accepts the step, otherwise the -eps side is probed, and a
/// direction that helps neither way is discarded. Success is checked after
/// every accepted step on that step's own response; no confirmation re-query.
/// Probe images are rounded to wire precision before scoring, so a run over
/// HTTP replays a local run exactly.
AttackResult run_attack(const ImageTensor& x, const AttackConfig& config,
                        const ScoreOracle& oracle);

struct SweepRow {
  double epsilon = 0.0;
  double mean_delta_p = 0.0;
  double fraction_descending = 0.0;
};

/// Direction-response diagnostic: samples `samples` directions once, then for
/// each epsilon in the grid reports the mean of min(p(y|x+eq), p(y|x-eq)) -
/// p(y|x) and the fraction of directions where some sign strictly descends.
/// Runs on its own ledger and never counts against an attack budget.
std::vector<SweepRow> epsilon_sweep(const ImageTensor& x, int label, const ScoreOracle& oracle,
                                    const BasisSpec& basis, const std::vector<double>& eps_grid,
                                    int samples, std::uint64_t seed);

nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows);

}  // namespace sba
