#pragma once

#include "sba/attack.hpp"
#include "sba/oracle.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace sba {

// --- datasets ---------------------------------------------------------------
//
// A dataset is a directory of SBT1 tensors plus labels.csv with the exact
// header "filename,label".

struct DatasetEntry {
  std::string name;
  ImageTensor image;
  int label = -1;
  std::string error;  // nonempty when the file failed to load
};

std::vector<DatasetEntry> load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const std::vector<DatasetEntry>& entries);

struct DatasetOptions {
  /// Linear models only: shift each image along the chosen class pair's
  /// decision direction until the logit margin equals this value.
  std::optional<double> margin;
};

/// Seeded images with labels the model assigns them, so every entry is
/// correctly classified by construction.
std::vector<DatasetEntry> generate_dataset(const ScoreOracle& model, int count,
                                           std::uint64_t seed, const DatasetOptions& options = {});

// --- batch evaluation -------------------------------------------------------

enum class ImageStatus { Attacked, Skipped, Error };

struct ImageOutcome {
  std::string image;
  ImageStatus status = ImageStatus::Attacked;
  bool success = false;
  long queries = 0;
  int iterations = 0;
  double l2 = 0.0;
  std::string termination;  // termination reason, or "skipped"/"error"
  std::string detail;       // skip/error explanation
};

struct QueryHistogram {
  struct Bucket {
    long lo = 0;
    long hi = 0;
    long count = 0;
  };
  long bucket_width = 100;
  std::vector<Bucket> buckets;  // successful runs, contiguous from zero
  long overflow = 0;            // attacked but unsuccessful
};

QueryHistogram histogram(const std::vector<ImageOutcome>& results, long bucket_width);
void write_histogram_csv(const std::string& path, const QueryHistogram& hist);

/// Aggregates of one batch. Query and L2 statistics cover successful runs
/// only; failures and skips are reported as separate counts so a low success
/// rate cannot masquerade as query efficiency.
struct BatchReport {
  long n_images = 0;  // attacked (eligible) images
  long skipped = 0;
  long errors = 0;
  long successes = 0;
  long failures = 0;
  std::optional<double> success_rate;
  std::optional<double> average_queries;
  std::optional<double> median_queries;
  std::optional<double> average_l2;
  QueryHistogram query_histogram;
  std::vector<ImageOutcome> results;

  nlohmann::json to_json(const AttackConfig& config, int parallelism) const;
};

/// Aggregates per-image outcomes into a report; run_batch ends here.
BatchReport summarize(std::vector<ImageOutcome> results, long bucket_width);

/// CSV with the exact header "image,success,queries,iterations,l2,termination".
void write_report_csv(const std::string& path, const BatchReport& report);

struct BatchOptions {
  int parallelism = 1;
  long histogram_bucket_width = 100;
  /// Targeted mode with target < 0: draw each image's target uniformly from
  /// the classes other than its label, seeded per image.
  int classes_hint = 0;  // overrides oracle.num_classes() when > 0
};

/// Runs run_attack once per eligible image with per-image seeds derived as
/// base_seed xor image_index. Deterministic for a fixed base seed regardless
/// of parallelism: workers share only the read-only oracle.
BatchReport run_batch(const std::vector<DatasetEntry>& images, const AttackConfig& config,
                      const ScoreOracle& oracle, const BatchOptions& options = {});

// --- mock scoring service ---------------------------------------------------

enum class ServeMode { Full, Concepts };

struct MockServiceOptions {
  ServeMode mode = ServeMode::Full;
  int top_k = 3;
  /// Every Nth request is answered 429 before scoring; 0 disables.
  int rate_limit_every = 0;
};

/// In-process HTTP stand-in for a remote scoring API. Serves POST /v1/score
/// over the wire format and GET /v1/ledger with {"queries":N}. The ledger
/// counts scored requests only (400s and 429s are not queries) and updates
/// atomically under concurrent load.
class MockService {
 public:
  MockService(std::shared_ptr<ScoreOracle> model, const MockServiceOptions& options = {});
  ~MockService();

  MockService(const MockService&) = delete;
  MockService& operator=(const MockService&) = delete;

  /// Binds and serves on a background thread. port 0 picks a free port.
  /// Throws std::runtime_error when the address cannot be bound.
  void start(const std::string& host, int port);
  void stop();

  int port() const;
  std::string url() const;
  long queries() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sba
