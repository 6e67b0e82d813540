#include "sba/harness.hpp"

#include "sba/wire.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "httplib.h"

namespace sba {

namespace fs = std::filesystem;

// --- datasets -----------------------------------------------------------------

std::vector<DatasetEntry> load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream labels(root / "labels.csv");
  if (!labels) throw std::runtime_error("cannot read " + (root / "labels.csv").string());
  std::string line;
  if (!std::getline(labels, line) || line != "filename,label") {
    throw std::runtime_error("labels.csv must start with header 'filename,label'");
  }
  std::vector<DatasetEntry> entries;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw std::runtime_error("bad labels.csv row: " + line);
    DatasetEntry entry;
    entry.name = line.substr(0, comma);
    entry.label = std::stoi(line.substr(comma + 1));
    try {
      entry.image = read_tensor((root / entry.name).string());
    } catch (const std::exception& e) {
      entry.error = e.what();
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

void save_dataset(const std::string& dir, const std::vector<DatasetEntry>& entries) {
  const fs::path root(dir);
  fs::create_directories(root);
  std::ofstream labels(root / "labels.csv");
  if (!labels) throw std::runtime_error("cannot write " + (root / "labels.csv").string());
  labels << "filename,label\n";
  for (const DatasetEntry& entry : entries) {
    write_sbt((root / entry.name).string(), entry.image);
    labels << entry.name << "," << entry.label << "\n";
  }
}

std::vector<DatasetEntry> generate_dataset(const ScoreOracle& model, int count,
                                           std::uint64_t seed, const DatasetOptions& options) {
  if (count < 0) throw std::invalid_argument("dataset count must be non-negative");
  const Shape shape = model.input_shape();
  const auto* linear = dynamic_cast<const LinearSoftmaxModel*>(&model);
  if (options.margin && !linear) {
    throw std::invalid_argument("margin shaping needs a linear_softmax model");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  std::vector<DatasetEntry> entries;
  entries.reserve(count);
  for (int index = 0; index < count; ++index) {
    DatasetEntry entry;
    entry.image = ImageTensor(shape);
    for (long i = 0; i < shape.size(); ++i) entry.image.data[i] = pixel(rng);

    if (options.margin) {
      // Shift along the decision direction of (y, runner-up) until the pair's
      // logit gap equals the requested margin.
      const int classes = linear->num_classes();
      std::uniform_int_distribution<int> pick_class(0, classes - 1);
      const int y = pick_class(rng);
      const Eigen::VectorXd logits = linear->weights() * entry.image.data + linear->bias();
      int rival = y == 0 ? 1 : 0;
      for (int c = 0; c < classes; ++c) {
        if (c != y && logits[c] > logits[rival]) rival = c;
      }
      const Eigen::VectorXd diff = linear->weight_diff(y, rival);
      const double gap = logits[y] - logits[rival];
      entry.image.data += ((*options.margin - gap) / diff.squaredNorm()) * diff;
    }

    const ScoreResponse scored = model.score(quantize_to_wire(entry.image));
    entry.label = argmax_class(scored);
    std::ostringstream name;
    name << "img_" << std::setw(4) << std::setfill('0') << index << ".sbt";
    entry.name = name.str();
    entries.push_back(std::move(entry));
  }
  return entries;
}

// --- batch evaluation -----------------------------------------------------------

QueryHistogram histogram(const std::vector<ImageOutcome>& results, long bucket_width) {
  if (bucket_width < 1) throw std::invalid_argument("bucket width must be at least 1");
  QueryHistogram hist;
  hist.bucket_width = bucket_width;
  long max_bucket = -1;
  for (const ImageOutcome& r : results) {
    if (r.status != ImageStatus::Attacked) continue;
    if (!r.success) {
      ++hist.overflow;
      continue;
    }
    max_bucket = std::max(max_bucket, r.queries / bucket_width);
  }
  hist.buckets.resize(max_bucket + 1);
  for (long b = 0; b <= max_bucket; ++b) {
    hist.buckets[b].lo = b * bucket_width;
    hist.buckets[b].hi = (b + 1) * bucket_width;
  }
  for (const ImageOutcome& r : results) {
    if (r.status != ImageStatus::Attacked || !r.success) continue;
    ++hist.buckets[r.queries / bucket_width].count;
  }
  return hist;
}

void write_histogram_csv(const std::string& path, const QueryHistogram& hist) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "bucket_lo,bucket_hi,count\n";
  for (const QueryHistogram::Bucket& b : hist.buckets) {
    out << b.lo << "," << b.hi << "," << b.count << "\n";
  }
}

namespace {

std::optional<double> median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return (values[mid - 1] + values[mid]) / 2.0;
}

}  // namespace

BatchReport run_batch(const std::vector<DatasetEntry>& images, const AttackConfig& config,
                      const ScoreOracle& oracle, const BatchOptions& options) {
  const bool random_targets = config.mode.kind == AttackKind::Targeted && config.mode.target < 0;
  {
    // target < 0 means "draw per image"; validate the rest of the config.
    AttackConfig probe = config;
    if (random_targets) probe.mode.target = 0;
    probe.validate();
  }
  if (options.parallelism < 1) throw std::invalid_argument("parallelism must be at least 1");
  int classes = options.classes_hint > 0 ? options.classes_hint : oracle.num_classes();
  if (random_targets && classes < 2) {
    throw std::invalid_argument("random targets need a known class count");
  }

  std::vector<ImageOutcome> outcomes(images.size());
  std::atomic<std::size_t> next{0};

  const auto attack_one = [&](std::size_t index) {
    const DatasetEntry& entry = images[index];
    ImageOutcome& outcome = outcomes[index];
    outcome.image = entry.name;
    if (!entry.error.empty()) {
      outcome.status = ImageStatus::Error;
      outcome.termination = "error";
      outcome.detail = entry.error;
      return;
    }
    AttackConfig run_config = config;
    run_config.seed = config.seed ^ static_cast<std::uint64_t>(index);
    if (random_targets) {
      // Uniform over classes other than the true label, seeded per image.
      std::mt19937_64 rng(run_config.seed * 0x9E3779B97F4A7C15ULL + 1);
      std::uniform_int_distribution<int> pick(0, classes - 2);
      int target = pick(rng);
      if (target >= entry.label) ++target;
      run_config.mode.target = target;
    } else if (config.mode.kind == AttackKind::Untargeted) {
      run_config.mode.label = entry.label;
    }
    try {
      const AttackResult result = run_attack(entry.image, run_config, oracle);
      outcome.status = ImageStatus::Attacked;
      outcome.success = result.success;
      outcome.queries = result.queries_used;
      outcome.iterations = result.iterations_used;
      outcome.l2 = result.final_norm;
      outcome.termination = to_string(result.termination);
    } catch (const PreconditionError& e) {
      outcome.status = ImageStatus::Skipped;
      outcome.queries = 1;  // the eligibility check spent the initial query
      outcome.termination = "skipped";
      outcome.detail = e.what();
    } catch (const std::exception& e) {
      outcome.status = ImageStatus::Error;
      outcome.termination = "error";
      outcome.detail = e.what();
    }
  };

  if (options.parallelism == 1) {
    for (std::size_t i = 0; i < images.size(); ++i) attack_one(i);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(options.parallelism);
    for (int w = 0; w < options.parallelism; ++w) {
      workers.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= images.size()) return;
          attack_one(i);
        }
      });
    }
    for (std::thread& worker : workers) worker.join();
  }

  return summarize(std::move(outcomes), options.histogram_bucket_width);
}

BatchReport summarize(std::vector<ImageOutcome> results, long bucket_width) {
  BatchReport report;
  report.results = std::move(results);
  std::vector<double> queries, l2;
  for (const ImageOutcome& r : report.results) {
    switch (r.status) {
      case ImageStatus::Skipped: ++report.skipped; continue;
      case ImageStatus::Error: ++report.errors; continue;
      case ImageStatus::Attacked: break;
    }
    ++report.n_images;
    if (r.success) {
      ++report.successes;
      queries.push_back(static_cast<double>(r.queries));
      l2.push_back(r.l2);
    } else {
      ++report.failures;
    }
  }
  if (report.n_images > 0) {
    report.success_rate = static_cast<double>(report.successes) / report.n_images;
  }
  if (!queries.empty()) {
    report.average_queries =
        std::accumulate(queries.begin(), queries.end(), 0.0) / queries.size();
    report.median_queries = median(queries);
    report.average_l2 = std::accumulate(l2.begin(), l2.end(), 0.0) / l2.size();
  }
  report.query_histogram = histogram(report.results, bucket_width);
  return report;
}

nlohmann::json BatchReport::to_json(const AttackConfig& config, int parallelism) const {
  nlohmann::json doc;
  doc["config"] = config.to_json();
  doc["parallelism"] = parallelism;
  doc["n_images"] = n_images;
  doc["skipped"] = skipped;
  doc["errors"] = errors;
  doc["successes"] = successes;
  doc["failures"] = failures;
  doc["success_rate"] = success_rate ? nlohmann::json(*success_rate) : nlohmann::json(nullptr);
  doc["average_queries"] =
      average_queries ? nlohmann::json(*average_queries) : nlohmann::json(nullptr);
  doc["median_queries"] =
      median_queries ? nlohmann::json(*median_queries) : nlohmann::json(nullptr);
  doc["average_l2"] = average_l2 ? nlohmann::json(*average_l2) : nlohmann::json(nullptr);

  nlohmann::json buckets = nlohmann::json::array();
  for (const QueryHistogram::Bucket& b : query_histogram.buckets) {
    buckets.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
  }
  doc["query_histogram"] = {{"bucket_width", query_histogram.bucket_width},
                            {"buckets", std::move(buckets)},
                            {"overflow", query_histogram.overflow}};

  nlohmann::json results_doc = nlohmann::json::array();
  for (const ImageOutcome& r : results) {
    nlohmann::json row = {{"image", r.image},          {"success", r.success},
                          {"queries", r.queries},      {"iterations", r.iterations},
                          {"l2", r.l2},                {"termination", r.termination}};
    if (!r.detail.empty()) row["detail"] = r.detail;
    results_doc.push_back(std::move(row));
  }
  doc["results"] = std::move(results_doc);
  return doc;
}

void write_report_csv(const std::string& path, const BatchReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "image,success,queries,iterations,l2,termination\n";
  out.precision(17);
  for (const ImageOutcome& r : report.results) {
    out << r.image << "," << (r.success ? "true" : "false") << "," << r.queries << ","
        << r.iterations << "," << r.l2 << "," << r.termination << "\n";
  }
}

// --- mock scoring service --------------------------------------------------------

struct MockService::Impl {
  std::shared_ptr<ScoreOracle> model;
  MockServiceOptions options;
  httplib::Server server;
  std::thread thread;
  std::string host;
  int port = 0;
  std::atomic<long> scored{0};
  std::atomic<long> received{0};
};

MockService::MockService(std::shared_ptr<ScoreOracle> model, const MockServiceOptions& options)
    : impl_(std::make_unique<Impl>()) {
  if (!model) throw std::invalid_argument("mock service needs a model");
  impl_->model = std::move(model);
  impl_->options = options;

  impl_->server.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
    Impl& impl = *impl_;
    const long sequence = ++impl.received;
    if (impl.options.rate_limit_every > 0 && sequence % impl.options.rate_limit_every == 0) {
      res.status = 429;
      res.set_content("{\"error\":\"rate limited\"}", "application/json");
      return;
    }
    ImageTensor x;
    try {
      x = tensor_from_wire(nlohmann::json::parse(req.body));
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    if (!(x.shape == impl.model->input_shape())) {
      res.status = 400;
      res.set_content("{\"error\":\"wrong input shape\"}", "application/json");
      return;
    }
    ScoreResponse response = impl.model->score(x);
    if (impl.options.mode == ServeMode::Concepts) {
      response = truncate_to_concepts(response, impl.options.top_k);
    }
    ++impl.scored;
    res.set_content(response_to_json(response).dump(), "application/json");
  });

  impl_->server.Get("/v1/ledger", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"queries", impl_->scored.load()}}.dump(), "application/json");
  });
}

MockService::~MockService() { stop(); }

void MockService::start(const std::string& host, int port) {
  impl_->host = host;
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
    if (impl_->port <= 0) throw std::runtime_error("cannot bind mock service on " + host);
  } else {
    if (!impl_->server.bind_to_port(host, port)) {
      throw std::runtime_error("cannot bind mock service on " + host + ":" + std::to_string(port));
    }
    impl_->port = port;
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockService::stop() {
  if (impl_ && impl_->thread.joinable()) {
    impl_->server.stop();
    impl_->thread.join();
  }
}

int MockService::port() const { return impl_->port; }

std::string MockService::url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

long MockService::queries() const { return impl_->scored.load(); }

}  // namespace sba
