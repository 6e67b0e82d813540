// sba: score-based black-box attack toolkit.
//
// Subcommands: attack, batch, sweep, serve-mock, gen-model, gen-dataset.
// stdout carries machine-readable JSON only; diagnostics go to stderr.
// Exit codes: 0 attack success / command ok, 1 attack failure, 2 usage or
// configuration error.

#include "sba/attack.hpp"
#include "sba/harness.hpp"
#include "sba/http.hpp"
#include "sba/oracle.hpp"
#include "sba/wire.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"

namespace {

using namespace sba;

Shape parse_shape(const std::string& text) {
  Shape shape;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> shape.channels >> c1 >> shape.height >> c2 >> shape.width) || c1 != ',' ||
      c2 != ',' || !shape.valid()) {
    throw CLI::ValidationError("--shape", "expected c,h,w with positive entries");
  }
  return shape;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) out.push_back(std::stoi(token));
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) out.push_back(std::stod(token));
  return out;
}

bool is_url(const std::string& text) {
  return text.rfind("http://", 0) == 0 || text.rfind("https://", 0) == 0;
}

std::string resolve_oracle_ref(std::string ref) {
  if (ref.empty()) {
    if (const char* env = std::getenv("SBA_ORACLE_URL")) ref = env;
  }
  if (ref.empty()) {
    throw CLI::ValidationError("--oracle", "no oracle given and SBA_ORACLE_URL is unset");
  }
  return ref;
}

std::shared_ptr<ScoreOracle> open_oracle(const std::string& ref, const Shape& shape) {
  if (is_url(ref)) return std::make_shared<HttpOracle>(ref, shape);
  return load_model(ref);
}

struct AttackFlags {
  std::string image, oracle_ref, out;
  int label = -1;
  double eps = 0.2;
  int max_iters = 0;
  std::string basis = "dct";
  std::string dct_fraction = "1/8";
  std::string dct_increment = "1/32";
  int targeted = -1;
  int concept_removal = 0;
  long budget = 0;
  std::uint64_t seed = 0;
  bool clamp = false;
};

void add_attack_config_flags(CLI::App& cmd, AttackFlags& flags) {
  cmd.add_option("--eps", flags.eps, "step size epsilon")->capture_default_str();
  cmd.add_option("--max-iters", flags.max_iters,
                 "iteration cap (default 10000, targeted 30000)");
  cmd.add_option("--basis", flags.basis, "search basis: pixel or dct")
      ->check(CLI::IsMember({"pixel", "dct"}))
      ->capture_default_str();
  cmd.add_option("--dct-fraction", flags.dct_fraction, "initial low-frequency fraction")
      ->capture_default_str();
  cmd.add_option("--dct-increment", flags.dct_increment, "per-axis expansion increment")
      ->capture_default_str();
  cmd.add_option("--budget", flags.budget, "query budget (0 = unlimited)");
  cmd.add_option("--seed", flags.seed, "rng seed")->capture_default_str();
  cmd.add_flag("--clamp", flags.clamp, "clip perturbed images to [0,1]");
}

AttackConfig build_config(const AttackFlags& flags, const Shape& shape) {
  AttackConfig config;
  config.epsilon = flags.eps;
  config.max_iterations = flags.max_iters;
  config.clamp = flags.clamp;
  config.seed = flags.seed;
  if (flags.budget > 0) config.query_budget = flags.budget;
  config.basis.kind = flags.basis == "pixel" ? BasisKind::Pixel : BasisKind::Dct;
  config.basis.shape = shape;
  config.basis.initial_fraction = Fraction::parse(flags.dct_fraction);
  config.basis.expansion_increment = Fraction::parse(flags.dct_increment);
  if (flags.concept_removal > 0) {
    config.mode = AttackMode::concept_removal(flags.concept_removal);
  } else if (flags.targeted >= 0) {
    config.mode = AttackMode::targeted(flags.targeted);
  } else {
    config.mode = AttackMode::untargeted(flags.label);
  }
  return config;
}

void emit(const nlohmann::json& doc, const std::string& out_path) {
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << doc.dump(2) << "\n";
  }
  std::cout << doc.dump() << "\n";
}

int cmd_attack(const AttackFlags& flags) {
  const ImageTensor x = read_tensor(flags.image);
  const AttackConfig config = build_config(flags, x.shape);
  config.validate();
  const auto oracle = open_oracle(resolve_oracle_ref(flags.oracle_ref), x.shape);
  const AttackResult result = run_attack(x, config, *oracle);
  emit(result.to_json(config), flags.out);
  return result.success ? 0 : 1;
}

int cmd_batch(const AttackFlags& flags, const std::string& dataset_dir,
              const std::string& targeted_spec, int parallelism, long hist_width, int classes,
              const std::string& csv_path, const std::string& hist_csv_path) {
  auto entries = load_dataset(dataset_dir);
  if (entries.empty()) throw std::runtime_error("dataset " + dataset_dir + " is empty");
  Shape shape;
  for (const auto& entry : entries) {
    if (entry.error.empty()) {
      shape = entry.image.shape;
      break;
    }
  }
  if (!shape.valid()) throw std::runtime_error("no readable image in dataset");

  AttackFlags batch_flags = flags;
  batch_flags.label = 0;  // per-image labels come from the dataset
  AttackConfig config = build_config(batch_flags, shape);
  if (!targeted_spec.empty()) {
    config.mode = targeted_spec == "random" ? AttackMode::targeted(-1)
                                            : AttackMode::targeted(std::stoi(targeted_spec));
  }

  const auto oracle = open_oracle(resolve_oracle_ref(flags.oracle_ref), shape);
  BatchOptions options;
  options.parallelism = parallelism;
  options.histogram_bucket_width = hist_width;
  options.classes_hint = classes;
  const BatchReport report = run_batch(entries, config, *oracle, options);
  if (!csv_path.empty()) write_report_csv(csv_path, report);
  if (!hist_csv_path.empty()) write_histogram_csv(hist_csv_path, report.query_histogram);
  emit(report.to_json(config, parallelism), flags.out);
  return 0;
}

int cmd_sweep(const AttackFlags& flags, const std::string& grid_spec, int samples) {
  const ImageTensor x = read_tensor(flags.image);
  AttackConfig config = build_config(flags, x.shape);  // reuse basis/seed handling
  const auto oracle = open_oracle(resolve_oracle_ref(flags.oracle_ref), x.shape);
  const auto rows =
      epsilon_sweep(x, flags.label, *oracle, config.basis, parse_double_list(grid_spec), samples,
                    flags.seed);
  nlohmann::json doc;
  doc["label"] = flags.label;
  doc["samples"] = samples;
  doc["seed"] = flags.seed;
  doc["basis"] = config.to_json()["basis"];
  doc["rows"] = sweep_to_json(rows);
  emit(doc, flags.out);
  return 0;
}

int cmd_serve_mock(const std::string& model_path, const std::string& host, int port,
                   const std::string& mode, int top_k, int rate_limit_every) {
  MockServiceOptions options;
  options.mode = mode == "concepts" ? ServeMode::Concepts : ServeMode::Full;
  options.top_k = top_k;
  options.rate_limit_every = rate_limit_every;
  MockService service(load_model(model_path), options);
  service.start(host, port);
  std::cerr << "serving " << model_path << " on " << service.url() << " (mode " << mode << ")\n";

  static std::atomic<bool> stop_requested{false};
  std::signal(SIGINT, [](int) { stop_requested = true; });
  std::signal(SIGTERM, [](int) { stop_requested = true; });
  while (!stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  return 0;
}

int cmd_gen_model(const std::string& kind, const std::string& shape_spec, int classes,
                  std::uint64_t seed, double margin, bool zero_weights,
                  const std::string& hidden_spec, const std::string& out_path) {
  const Shape shape = parse_shape(shape_spec);
  nlohmann::json doc;
  if (kind == "linear") {
    LinearModelOptions options;
    options.zero_weights = zero_weights;
    options.margin_hint = margin;
    doc = model_to_json(generate_linear_model(shape, classes, seed, options));
  } else {
    doc = model_to_json(generate_mlp_model(shape, classes, parse_int_list(hidden_spec), seed));
  }
  doc["seed"] = seed;
  if (margin > 0) doc["margin"] = margin;
  save_model(out_path, doc);
  std::cout << nlohmann::json{{"model", out_path},
                              {"type", doc["type"]},
                              {"classes", classes},
                              {"seed", seed}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_gen_dataset(const std::string& model_path, int count, std::uint64_t seed,
                    std::optional<double> margin, const std::string& out_dir) {
  const nlohmann::json doc = load_model_json(model_path);
  const auto model = model_from_json(doc);
  DatasetOptions options;
  if (margin) {
    options.margin = margin;
  } else if (doc.contains("margin")) {
    options.margin = doc["margin"].get<double>();
  }
  const auto entries = generate_dataset(*model, count, seed, options);
  save_dataset(out_dir, entries);
  std::cout << nlohmann::json{{"dataset", out_dir}, {"count", count}, {"seed", seed}}.dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"score-based black-box attack toolkit"};
  app.require_subcommand(1);

  AttackFlags flags;

  auto* attack = app.add_subcommand("attack", "attack one image");
  attack->add_option("--image", flags.image, "input tensor (SBT1 or csv)")->required();
  attack->add_option("--label", flags.label, "true class of the image");
  attack->add_option("--oracle", flags.oracle_ref, "model file or service url");
  attack->add_option("--targeted", flags.targeted, "target class for a targeted attack");
  attack->add_option("--concept-removal", flags.concept_removal,
                     "remove the original top-k concepts");
  attack->add_option("--out", flags.out, "also write the result JSON here");
  add_attack_config_flags(*attack, flags);

  std::string dataset_dir, targeted_spec, csv_path, hist_csv_path;
  int parallelism = 1, classes = 0;
  long hist_width = 100;
  auto* batch = app.add_subcommand("batch", "attack a dataset and aggregate statistics");
  batch->add_option("--dataset", dataset_dir, "directory with SBT1 files and labels.csv")
      ->required();
  batch->add_option("--oracle", flags.oracle_ref, "model file or service url");
  batch->add_option("--targeted", targeted_spec, "target class, or 'random'");
  batch->add_option("--concept-removal", flags.concept_removal,
                    "remove each image's original top-k concepts");
  batch->add_option("--parallelism", parallelism, "worker threads")->capture_default_str();
  batch->add_option("--classes", classes, "class count override for random targets");
  batch->add_option("--hist-width", hist_width, "query histogram bucket width")
      ->capture_default_str();
  batch->add_option("--csv", csv_path, "write per-image results CSV here");
  batch->add_option("--hist-csv", hist_csv_path, "write query histogram CSV here");
  batch->add_option("--out", flags.out, "also write the report JSON here");
  add_attack_config_flags(*batch, flags);

  std::string grid_spec = "0.05,0.1,0.2,0.4";
  int samples = 100;
  auto* sweep = app.add_subcommand("sweep", "probe response vs epsilon along random directions");
  sweep->add_option("--image", flags.image, "input tensor")->required();
  sweep->add_option("--label", flags.label, "class whose probability is tracked")->required();
  sweep->add_option("--oracle", flags.oracle_ref, "model file or service url");
  sweep->add_option("--eps-grid", grid_spec, "comma-separated ascending epsilons")
      ->capture_default_str();
  sweep->add_option("--samples", samples, "directions to sample")->capture_default_str();
  sweep->add_option("--out", flags.out, "also write the sweep JSON here");
  add_attack_config_flags(*sweep, flags);

  std::string model_path, host = "127.0.0.1", serve_mode = "full";
  int port = 8300, top_k = 3, rate_limit_every = 0;
  auto* serve = app.add_subcommand("serve-mock", "serve a model file over the score protocol");
  serve->add_option("--model", model_path, "model file to serve")->required();
  serve->add_option("--host", host, "bind address")->capture_default_str();
  serve->add_option("--port", port, "bind port")->capture_default_str();
  serve->add_option("--mode", serve_mode, "full or concepts")
      ->check(CLI::IsMember({"full", "concepts"}))
      ->capture_default_str();
  serve->add_option("--top-k", top_k, "concepts returned in concepts mode")->capture_default_str();
  serve->add_option("--rate-limit-every", rate_limit_every, "answer 429 to every nth request");

  std::string gen_kind = "linear", shape_spec, hidden_spec = "24", gen_out;
  int gen_classes = 2;
  std::uint64_t gen_seed = 0;
  double gen_margin = 0.0;
  bool zero_weights = false;
  auto* gen_model = app.add_subcommand("gen-model", "write a seeded model fixture");
  gen_model->add_option("--kind", gen_kind, "linear or mlp")
      ->check(CLI::IsMember({"linear", "mlp"}))
      ->capture_default_str();
  gen_model->add_option("--shape", shape_spec, "input shape c,h,w")->required();
  gen_model->add_option("--classes", gen_classes, "output classes")->capture_default_str();
  gen_model->add_option("--seed", gen_seed, "rng seed")->capture_default_str();
  gen_model->add_option("--margin", gen_margin, "margin hint for companion datasets");
  gen_model->add_flag("--zero-weights", zero_weights, "all-zero parameters (uniform output)");
  gen_model->add_option("--hidden", hidden_spec, "mlp hidden sizes, comma-separated")
      ->capture_default_str();
  gen_model->add_option("--out", gen_out, "output model file")->required();

  std::string ds_model, ds_out;
  int ds_count = 100;
  std::uint64_t ds_seed = 0;
  double ds_margin = 0.0;
  auto* gen_dataset = app.add_subcommand("gen-dataset", "write a seeded dataset for a model");
  gen_dataset->add_option("--model", ds_model, "model file")->required();
  gen_dataset->add_option("--count", ds_count, "number of images")->capture_default_str();
  gen_dataset->add_option("--seed", ds_seed, "rng seed")->capture_default_str();
  gen_dataset->add_option("--margin", ds_margin, "logit margin (linear models)");
  gen_dataset->add_option("--out", ds_out, "output directory")->required();

  try {
    app.parse(argc, argv);

    if (attack->parsed()) {
      if (flags.concept_removal == 0 && flags.label < 0) {
        std::cerr << "error: --label is required unless --concept-removal is set\n";
        return 2;
      }
      return cmd_attack(flags);
    }
    if (batch->parsed()) {
      return cmd_batch(flags, dataset_dir, targeted_spec, parallelism, hist_width, classes,
                       csv_path, hist_csv_path);
    }
    if (sweep->parsed()) return cmd_sweep(flags, grid_spec, samples);
    if (serve->parsed()) {
      return cmd_serve_mock(model_path, host, port, serve_mode, top_k, rate_limit_every);
    }
    if (gen_model->parsed()) {
      return cmd_gen_model(gen_kind, shape_spec, gen_classes, gen_seed, gen_margin, zero_weights,
                           hidden_spec, gen_out);
    }
    if (gen_dataset->parsed()) {
      return cmd_gen_dataset(ds_model, ds_count, ds_seed,
                             ds_margin > 0 ? std::optional<double>(ds_margin) : std::nullopt,
                             ds_out);
    }
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const sba::PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
