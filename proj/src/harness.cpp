#include "scanlearn/harness.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "scanlearn/errors.hpp"
#include "scanlearn/rng.hpp"

namespace scanlearn {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kCorpusDomain = 0x636f72707573ULL;
constexpr std::uint64_t kEpochOrderDomain = 0x65706f6368ULL;

std::string pad_id(std::string_view prefix, std::size_t value, std::size_t count, std::size_t min_width) {
  const auto width = std::max(min_width, std::to_string(count == 0 ? 0 : count - 1).size());
  auto digits = std::to_string(value);
  return std::string(prefix) + std::string(width - std::min(width, digits.size()), '0') + digits;
}

// Shortest text that parses back to the same double.
std::string format_double(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value);
  return {buffer, result.ptr};
}

void check_keys(const json& doc, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!doc.is_object()) {
    throw InvalidConfig(std::string(where) + " must be a JSON object");
  }
  for (const auto& [key, value] : doc.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw InvalidConfig("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read(const json& doc, const char* key, T& target) {
  if (const auto it = doc.find(key); it != doc.end()) {
    target = it->get<T>();
  }
}

void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw InvalidConfig("cannot write " + path.string());
  }
  out << content;
  if (!out) {
    throw InvalidConfig("failed writing " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

bool all_tagged(std::span<const TaskSample> corpus) {
  return std::all_of(corpus.begin(), corpus.end(),
                     [](const TaskSample& task) { return !task.required_insights.empty(); });
}

json fit_document(const std::vector<ProfileResult>& profiles, bool fell_back) {
  json doc;
  if (fell_back) {
    doc["plateau_bs"] = 1;
    doc["fallback"] = "no_speedup";
  } else {
    doc = fit_report(profiles.front());
  }
  if (profiles.size() > 1) {
    doc["reprofiles"] = json::array();
    for (std::size_t i = 1; i < profiles.size(); ++i) {
      doc["reprofiles"].push_back(fit_report(profiles[i]));
    }
  }
  return doc;
}

struct Selection {
  std::size_t batch_size = 1;
  bool fell_back = false;
};

// Profiles, logs the choice, and switches Sequential to NaiveBatch when the
// plateau lands above one.
Selection select_batch_size(std::span<const TaskSample> corpus, const Playbook& playbook, StrategyConfig& strategy,
                            LearnerBackend& backend, const ControllerConfig& controller, std::size_t workers,
                            std::vector<ProfileResult>& profiles, std::ostream* log) {
  Selection selection;
  try {
    profiles.push_back(profile_and_select(corpus, playbook, strategy, backend, controller, workers));
    selection.batch_size = profiles.back().selected;
  } catch (const NoSpeedup& e) {
    if (log) *log << "no speedup from batching (" << e.what() << "); falling back to batch size 1\n";
    ProfileResult fallback;
    fallback.selected = 1;
    profiles.push_back(fallback);
    selection.fell_back = true;
  }
  strategy.batch_size = selection.batch_size;
  if (strategy.kind == StrategyKind::kSequential && selection.batch_size > 1) {
    strategy.kind = StrategyKind::kNaiveBatch;
  }
  if (log) *log << "selected plateau batch size: " << selection.batch_size << "\n";
  return selection;
}

}  // namespace

std::vector<TaskSample> generate_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  if (spec.size == 0) {
    throw InvalidSpec("corpus size must be positive");
  }
  if (spec.insights_per_task == 0) {
    throw InvalidSpec("insights_per_task must be positive");
  }
  if (spec.pool_size < spec.insights_per_task) {
    throw InvalidSpec("insight pool (" + std::to_string(spec.pool_size) + ") is smaller than insights_per_task (" +
                      std::to_string(spec.insights_per_task) + ")");
  }
  std::vector<std::string> pool;
  pool.reserve(spec.pool_size);
  for (std::size_t i = 0; i < spec.pool_size; ++i) {
    pool.push_back(pad_id("ins-", i, spec.pool_size, 3));
  }

  Rng rng(seed);
  std::vector<std::size_t> indices(spec.pool_size);
  std::vector<TaskSample> corpus;
  corpus.reserve(spec.size);
  for (std::size_t t = 0; t < spec.size; ++t) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
      indices[i] = i;
    }
    TaskSample task;
    task.task_id = pad_id("task-", t, spec.size, 4);
    for (std::size_t j = 0; j < spec.insights_per_task; ++j) {
      const auto pick = j + static_cast<std::size_t>(rng.below(spec.pool_size - j));
      std::swap(indices[j], indices[pick]);
      task.required_insights.insert(pool[indices[j]]);
    }
    task.payload = "Synthetic task " + task.task_id;
    corpus.push_back(std::move(task));
  }
  return corpus;
}

std::vector<TaskSample> ingest_traces(std::istream& in, const TraceMapper& mapper) {
  std::vector<TaskSample> corpus;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw ParseError(line_number, "not a JSON object");
    }
    if (mapper) {
      try {
        doc = mapper(std::move(doc));
      } catch (const std::exception& e) {
        throw ParseError(line_number, std::string("trace mapper failed: ") + e.what());
      }
    }

    TaskSample task;
    Trajectory trajectory;
    const auto id = doc.find("task_id");
    if (id == doc.end() || !id->is_string() || id->get<std::string>().empty()) {
      throw ParseError(line_number, "missing task_id");
    }
    task.task_id = id->get<std::string>();
    trajectory.task_id = task.task_id;

    const auto steps = doc.find("steps");
    if (steps == doc.end() || !steps->is_array()) {
      throw ParseError(line_number, "missing steps array");
    }
    for (const auto& step : *steps) {
      if (!step.is_string()) {
        throw ParseError(line_number, "steps must be strings");
      }
      trajectory.steps.push_back(step.get<std::string>());
    }

    const auto outcome = doc.find("outcome");
    if (outcome == doc.end() || !outcome->is_string()) {
      throw ParseError(line_number, "missing outcome");
    }
    if (*outcome == "success") {
      trajectory.outcome = Outcome::kSuccess;
    } else if (*outcome == "failure") {
      trajectory.outcome = Outcome::kFailure;
    } else {
      throw ParseError(line_number, "outcome must be \"success\" or \"failure\"");
    }

    if (const auto insights = doc.find("insights"); insights != doc.end()) {
      if (!insights->is_array()) {
        throw ParseError(line_number, "insights must be an array");
      }
      for (const auto& insight : *insights) {
        if (!insight.is_string()) {
          throw ParseError(line_number, "insights must be strings");
        }
        task.required_insights.insert(insight.get<std::string>());
      }
    }
    if (const auto payload = doc.find("payload"); payload != doc.end()) {
      if (!payload->is_string()) {
        throw ParseError(line_number, "payload must be a string");
      }
      task.payload = payload->get<std::string>();
    }

    for (const auto& [key, value] : doc.items()) {
      if (key != "task_id" && key != "steps" && key != "outcome" && key != "insights" && key != "payload") {
        task.extras[key] = value;
      }
    }
    if (!seen.insert(task.task_id).second) {
      throw DuplicateTaskId(task.task_id);
    }
    task.offline_trajectory = std::move(trajectory);
    corpus.push_back(std::move(task));
  }
  if (corpus.empty()) {
    throw EmptyCorpus();
  }
  return corpus;
}

std::vector<TaskSample> ingest_traces(const fs::path& path, const TraceMapper& mapper) {
  std::ifstream in(path);
  if (!in) {
    throw InvalidConfig("cannot open trace file " + path.string());
  }
  return ingest_traces(in, mapper);
}

void validate(const ExperimentConfig& config) {
  if (config.corpus.has_value() == config.trace_path.has_value()) {
    throw InvalidConfig("exactly one of corpus and trace_path must be set");
  }
  if (!config.seed) {
    throw InvalidConfig("seed is required");
  }
  if (config.workers == 0) {
    throw InvalidConfig("workers must be at least 1");
  }
  if (config.epochs == 0) {
    throw InvalidConfig("epochs must be at least 1");
  }
  if (config.output_dir.empty()) {
    throw InvalidConfig("output_dir must not be empty");
  }
  if (!(config.score.coverage_fraction > 0.0 && config.score.coverage_fraction <= 1.0)) {
    throw InvalidConfig("score.coverage_fraction must lie in (0, 1]");
  }
  validate(config.sim);
}

ExperimentConfig config_from_json(const json& doc, ExperimentConfig config) {
  try {
    check_keys(doc,
               {"corpus", "trace_path", "strategy", "controller", "backend", "sim", "http", "score", "seed",
                "workers", "epochs", "reshuffle_epochs", "output_dir"},
               "config");
    if (const auto it = doc.find("corpus"); it != doc.end()) {
      if (it->is_null()) {
        config.corpus.reset();
      } else {
        check_keys(*it, {"size", "insights_per_task", "pool_size"}, "corpus");
        auto spec = config.corpus.value_or(CorpusSpec{});
        read(*it, "size", spec.size);
        read(*it, "insights_per_task", spec.insights_per_task);
        read(*it, "pool_size", spec.pool_size);
        config.corpus = spec;
        if (!doc.contains("trace_path")) config.trace_path.reset();
      }
    }
    if (const auto it = doc.find("trace_path"); it != doc.end()) {
      if (it->is_null()) {
        config.trace_path.reset();
      } else {
        config.trace_path = it->get<std::string>();
        if (!doc.contains("corpus")) config.corpus.reset();
      }
    }
    if (const auto it = doc.find("strategy"); it != doc.end()) {
      check_keys(*it, {"kind", "batch_size", "duplication", "subgroup_count"}, "strategy");
      auto& strategy = config.strategy;
      if (const auto kind = it->find("kind"); kind != it->end()) {
        strategy.kind = parse_strategy(kind->get<std::string>());
      }
      read(*it, "batch_size", strategy.batch_size);
      read(*it, "duplication", strategy.duplication);
      if (const auto k = it->find("subgroup_count"); k != it->end()) {
        strategy.subgroup_count = k->is_null() ? std::nullopt : std::optional(k->get<std::size_t>());
      }
    }
    if (const auto it = doc.find("controller"); it != doc.end()) {
      if (it->is_null()) {
        config.controller.reset();
      } else {
        check_keys(*it, {"candidates", "tau_fraction", "bs_upper_bound", "reprofile_every"}, "controller");
        auto controller = config.controller.value_or(ControllerConfig{});
        read(*it, "candidates", controller.candidates);
        read(*it, "tau_fraction", controller.tau_fraction);
        read(*it, "bs_upper_bound", controller.bs_upper_bound);
        read(*it, "reprofile_every", controller.reprofile_every);
        config.controller = controller;
      }
    }
    if (const auto it = doc.find("backend"); it != doc.end()) {
      const auto name = it->get<std::string>();
      if (name == "sim") {
        config.backend = BackendKind::kSim;
      } else if (name == "http") {
        config.backend = BackendKind::kHttp;
      } else {
        throw InvalidConfig("backend must be \"sim\" or \"http\"");
      }
    }
    if (const auto it = doc.find("sim"); it != doc.end()) {
      check_keys(*it,
                 {"base_capacity", "crowding", "specificity_bias", "generic_pool_size", "coverage_fraction",
                  "rollout_latency", "rollout_jitter", "reflect_latency", "curate_base", "curate_per_item"},
                 "sim");
      auto& sim = config.sim;
      read(*it, "base_capacity", sim.overload.base_capacity);
      read(*it, "crowding", sim.overload.crowding);
      read(*it, "specificity_bias", sim.overload.specificity_bias);
      read(*it, "generic_pool_size", sim.generic_pool_size);
      read(*it, "coverage_fraction", sim.coverage_fraction);
      read(*it, "rollout_latency", sim.delay.rollout_latency);
      read(*it, "rollout_jitter", sim.delay.rollout_jitter);
      read(*it, "reflect_latency", sim.delay.reflect_latency);
      read(*it, "curate_base", sim.delay.curate_base);
      read(*it, "curate_per_item", sim.delay.curate_per_item);
    }
    if (const auto it = doc.find("http"); it != doc.end()) {
      check_keys(*it,
                 {"base_url", "model", "api_key_env", "temperature", "max_attempts", "retry_base_ms",
                  "retry_cap_ms", "retry_jitter"},
                 "http");
      auto& chat = config.chat;
      read(*it, "base_url", chat.base_url);
      read(*it, "model", chat.model);
      read(*it, "api_key_env", chat.api_key_env);
      read(*it, "temperature", chat.temperature);
      read(*it, "max_attempts", chat.retry.max_attempts);
      read(*it, "retry_jitter", chat.retry.jitter);
      if (const auto base = it->find("retry_base_ms"); base != it->end()) {
        chat.retry.base = std::chrono::milliseconds(base->get<std::int64_t>());
      }
      if (const auto cap = it->find("retry_cap_ms"); cap != it->end()) {
        chat.retry.cap = std::chrono::milliseconds(cap->get<std::int64_t>());
      }
    }
    if (const auto it = doc.find("score"); it != doc.end()) {
      check_keys(*it, {"coverage_fraction"}, "score");
      read(*it, "coverage_fraction", config.score.coverage_fraction);
    }
    if (const auto it = doc.find("seed"); it != doc.end()) {
      config.seed = it->get<std::uint64_t>();
    }
    read(doc, "workers", config.workers);
    read(doc, "epochs", config.epochs);
    read(doc, "reshuffle_epochs", config.reshuffle_epochs);
    if (const auto it = doc.find("output_dir"); it != doc.end()) {
      config.output_dir = it->get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("bad config value: ") + e.what());
  }
  return config;
}

json config_to_json(const ExperimentConfig& config) {
  json doc;
  if (config.corpus) {
    doc["corpus"] = {{"size", config.corpus->size},
                     {"insights_per_task", config.corpus->insights_per_task},
                     {"pool_size", config.corpus->pool_size}};
  }
  if (config.trace_path) {
    doc["trace_path"] = config.trace_path->generic_string();
  }
  json strategy;
  strategy["kind"] = strategy_key(config.strategy.kind);
  strategy["batch_size"] = config.strategy.batch_size;
  strategy["duplication"] = config.strategy.duplication;
  strategy["subgroup_count"] =
      config.strategy.subgroup_count ? json(*config.strategy.subgroup_count) : json(nullptr);
  doc["strategy"] = std::move(strategy);
  if (config.controller) {
    doc["controller"] = {{"candidates", config.controller->candidates},
                         {"tau_fraction", config.controller->tau_fraction},
                         {"bs_upper_bound", config.controller->bs_upper_bound},
                         {"reprofile_every", config.controller->reprofile_every}};
  } else {
    doc["controller"] = nullptr;
  }
  doc["backend"] = config.backend == BackendKind::kSim ? "sim" : "http";
  if (config.backend == BackendKind::kSim) {
    const auto& sim = config.sim;
    doc["sim"] = {{"base_capacity", sim.overload.base_capacity},
                  {"crowding", sim.overload.crowding},
                  {"specificity_bias", sim.overload.specificity_bias},
                  {"generic_pool_size", sim.generic_pool_size},
                  {"coverage_fraction", sim.coverage_fraction},
                  {"rollout_latency", sim.delay.rollout_latency},
                  {"rollout_jitter", sim.delay.rollout_jitter},
                  {"reflect_latency", sim.delay.reflect_latency},
                  {"curate_base", sim.delay.curate_base},
                  {"curate_per_item", sim.delay.curate_per_item}};
  } else {
    const auto& chat = config.chat;
    doc["http"] = {{"base_url", chat.base_url},
                   {"model", chat.model},
                   {"api_key_env", chat.api_key_env},
                   {"temperature", chat.temperature},
                   {"max_attempts", chat.retry.max_attempts},
                   {"retry_base_ms", chat.retry.base.count()},
                   {"retry_cap_ms", chat.retry.cap.count()},
                   {"retry_jitter", chat.retry.jitter}};
  }
  doc["score"] = {{"coverage_fraction", config.score.coverage_fraction}};
  doc["seed"] = config.seed ? json(*config.seed) : json(nullptr);
  doc["workers"] = config.workers;
  doc["epochs"] = config.epochs;
  doc["reshuffle_epochs"] = config.reshuffle_epochs;
  doc["output_dir"] = config.output_dir.generic_string();
  return doc;
}

ExperimentConfig load_config(const fs::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) {
    throw InvalidConfig("cannot open config file " + path.string());
  }
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw InvalidConfig("config file " + path.string() + " is not valid JSON");
  }
  return config_from_json(doc, std::move(base));
}

std::vector<TaskSample> load_corpus(const ExperimentConfig& config) {
  validate(config);
  if (config.trace_path) {
    return ingest_traces(*config.trace_path);
  }
  return generate_corpus(*config.corpus, derive_seed(*config.seed, {kCorpusDomain}));
}

std::unique_ptr<LearnerBackend> make_backend(const ExperimentConfig& config) {
  if (config.backend == BackendKind::kSim) {
    return std::make_unique<SimBackend>(config.sim);
  }
  return std::make_unique<ChatBackend>(config.chat, make_httplib_transport());
}

ExperimentResult simulate_experiment(const ExperimentConfig& config, std::ostream* log) {
  const auto corpus = load_corpus(config);
  return simulate_experiment(config, corpus, log);
}

ExperimentResult simulate_experiment(const ExperimentConfig& config, std::span<const TaskSample> corpus,
                                     std::ostream* log) {
  validate(config);
  if (corpus.empty()) {
    throw EmptyCorpus();
  }
  auto backend = make_backend(config);
  auto strategy = config.strategy;
  strategy.seed = *config.seed;
  const auto eval_corpus =
      backend->provides_insight_tags() && all_tagged(corpus) ? corpus : std::span<const TaskSample>{};

  ExperimentResult result;
  if (config.controller) {
    result.fell_back_to_bs1 = select_batch_size(corpus, result.playbook, strategy, *backend, *config.controller,
                                                config.workers, result.profiles, log)
                                  .fell_back;
  }
  validate(strategy, corpus.size());

  const std::size_t reprofile_every = config.controller ? config.controller->reprofile_every : 0;
  std::uint64_t iteration = 0;
  std::vector<TaskSample> reordered;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::span<const TaskSample> order = corpus;
    if (config.reshuffle_epochs && epoch > 0) {
      reordered.assign(corpus.begin(), corpus.end());
      Rng rng(derive_seed(*config.seed, {kEpochOrderDomain, epoch}));
      rng.shuffle(std::span<TaskSample>(reordered));
      order = reordered;
    }
    if (log) *log << "epoch " << epoch + 1 << ": " << strategy_key(strategy.kind) << " bs=" << strategy.batch_size
                  << "\n";
    double epoch_time = 0.0;
    if (reprofile_every == 0) {
      auto run = run_epoch(order, result.playbook, strategy, *backend,
                           {config.workers, iteration, eval_corpus, config.score});
      epoch_time = run.epoch_time();
      iteration += run.records.size();
      result.playbook = std::move(run.playbook);
      std::move(run.records.begin(), run.records.end(), std::back_inserter(result.records));
    } else {
      for (std::size_t begin = 0; begin < order.size();) {
        if (iteration > 0 && iteration % reprofile_every == 0) {
          select_batch_size(corpus, result.playbook, strategy, *backend, *config.controller, config.workers,
                            result.profiles, log);
          validate(strategy, order.size());
        }
        const auto batch = order.subspan(begin, std::min(strategy.batch_size, order.size() - begin));
        auto step = run_iteration(batch, result.playbook, strategy, *backend, iteration++,
                                  {config.workers, eval_corpus, config.score});
        epoch_time += step.record.delays.total_s;
        result.playbook = std::move(step.playbook);
        result.records.push_back(std::move(step.record));
        begin += batch.size();
      }
    }
    EpochSummary row;
    row.epoch = epoch + 1;
    row.batch_size = strategy.batch_size;
    row.strategy = strategy.kind;
    row.epoch_time = epoch_time;
    row.metrics = result.records.back().metrics.value_or(shape_metrics(result.playbook));
    if (log) *log << "  epoch_time=" << format_double(epoch_time)
                  << " retained_entries=" << row.metrics.retained_entries
                  << " accuracy_proxy=" << format_double(row.metrics.accuracy_proxy) << "\n";
    result.epochs.push_back(row);
  }
  return result;
}

std::string metrics_csv(std::span<const EpochSummary> rows) {
  std::string out(kMetricsCsvHeader);
  out += '\n';
  for (const auto& row : rows) {
    const auto& m = row.metrics;
    out += std::to_string(row.epoch) + ',' + std::to_string(row.batch_size) + ',' +
           std::string(strategy_key(row.strategy)) + ',' + format_double(row.epoch_time) + ',' +
           std::to_string(m.retained_entries) + ',' + format_double(m.accuracy_proxy) + ',' +
           std::to_string(m.token_size) + ',' + std::to_string(m.specific_insights) + ',' +
           std::to_string(m.total_helpful_hits) + '\n';
  }
  return out;
}

static void persist_run(const ExperimentConfig& config, const ExperimentResult& result) {
  const auto& dir = config.output_dir;
  fs::create_directories(dir);
  write_file(dir / "config.json", config_to_json(config).dump(2) + "\n");
  write_file(dir / "playbook.json", serialize_playbook(result.playbook));
  write_file(dir / "playbook.md", export_markdown(result.playbook));
  std::string records;
  for (const auto& record : result.records) {
    records += record_to_json(record).dump();
    records += '\n';
  }
  write_file(dir / "records.jsonl", records);
  write_file(dir / "metrics.csv", metrics_csv(result.epochs));
  if (config.controller) {
    write_file(dir / "fit.json", fit_document(result.profiles, result.fell_back_to_bs1).dump(2) + "\n");
    write_file(dir / "profile.csv", measurements_to_csv(result.profiles.front().measurements));
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log) {
  validate(config);
  auto result = simulate_experiment(config, log);
  persist_run(config, result);
  if (log) *log << "wrote " << config.output_dir.generic_string() << "\n";
  return result;
}

std::vector<EpochSummary> run_sweep(const SweepConfig& sweep, std::ostream* log) {
  validate(sweep.base);
  const auto corpus = load_corpus(sweep.base);
  std::vector<EpochSummary> rows;
  for (const auto kind : sweep.strategies) {
    for (const auto bs : sweep.batch_sizes) {
      if (kind == StrategyKind::kSequential && bs != 1) {
        continue;
      }
      if (bs > corpus.size()) {
        if (log) *log << "skipping bs=" << bs << " (corpus has " << corpus.size() << " tasks)\n";
        continue;
      }
      auto config = sweep.base;
      config.controller.reset();
      config.strategy.kind = kind;
      config.strategy.batch_size = bs;
      config.output_dir = sweep.base.output_dir / (std::string(strategy_key(kind)) + "-bs" + std::to_string(bs));
      if (log) *log << "sweep " << strategy_key(kind) << " bs=" << bs << "\n";
      auto result = simulate_experiment(config, corpus, nullptr);

      persist_run(config, result);
      rows.push_back(result.epochs.back());
    }
  }
  fs::create_directories(sweep.base.output_dir);
  write_file(sweep.base.output_dir / "metrics.csv", metrics_csv(rows));
  return rows;
}

ProfileResult run_profile(const ExperimentConfig& config, std::ostream* log) {
  validate(config);
  const auto corpus = load_corpus(config);
  auto backend = make_backend(config);
  auto strategy = config.strategy;
  strategy.seed = *config.seed;
  const auto controller = config.controller.value_or(ControllerConfig{});
  auto result = profile_and_select(corpus, Playbook{}, strategy, *backend, controller, config.workers);
  fs::create_directories(config.output_dir);
  write_file(config.output_dir / "profile.csv", measurements_to_csv(result.measurements));
  write_file(config.output_dir / "fit.json", fit_report(result).dump(2) + "\n");
  if (log) {
    *log << "A=" << format_double(result.fit.A) << " alpha=" << format_double(result.fit.alpha)
         << " tau=" << format_double(result.tau) << "\n";
    *log << "selected plateau batch size: " << result.selected << "\n";
  }
  return result;
}

ReportSummary report(const fs::path& run_dir) {
  const auto records_path = run_dir / "records.jsonl";
  std::ifstream in(records_path);
  if (!in) {
    throw MissingRunData("no records.jsonl in " + run_dir.string());
  }
  std::vector<RunRecord> records;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const auto doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      throw ParseError(line_number, "records.jsonl line is not JSON");
    }
    records.push_back(record_from_json(doc));
  }
  if (records.empty()) {
    throw MissingRunData("records.jsonl in " + run_dir.string() + " is empty");
  }

  std::vector<ContextDelta> deltas;
  deltas.reserve(records.size());
  for (const auto& record : records) {
    deltas.push_back(record.delta);
  }
  const auto replayed = replay(deltas);

  ReportSummary summary;
  summary.iterations = records.size();
  summary.replayed_entries = replayed.size();
  const auto playbook_path = run_dir / "playbook.json";
  const bool persisted = fs::exists(playbook_path);
  if (persisted) {
    const auto stored = deserialize_playbook(read_file(playbook_path));
    summary.final_entries = stored.size();
    summary.replay_matches = stored == replayed;
  } else {
    summary.final_entries = replayed.size();
  }

  std::ostringstream quality;
  quality << "iteration,bs,strategy,cumulative_delay_s,retained_entries,accuracy_proxy,token_size,"
             "specific_insights,total_helpful_hits\n";
  for (const auto& record : records) {
    summary.total_delay += record.delays.total_s;
    const auto metrics = record.metrics.value_or(Metrics{});
    quality << record.iteration << ',' << record.batch_task_ids.size() << ',' << strategy_key(record.strategy.kind)
            << ',' << format_double(summary.total_delay) << ',' << metrics.retained_entries << ','
            << format_double(metrics.accuracy_proxy) << ',' << metrics.token_size << ','
            << metrics.specific_insights << ',' << metrics.total_helpful_hits << '\n';
  }

  std::map<std::uint64_t, std::size_t> helpful;
  std::map<std::uint64_t, std::size_t> harmful;
  for (const auto& entry : replayed.entries()) {
    ++helpful[entry.helpful];
    ++harmful[entry.harmful];
    summary.total_helpful += entry.helpful;
    summary.total_harmful += entry.harmful;
  }
  std::ostringstream histogram;
  histogram << "counter,value,entries\n";
  for (const auto& [value, count] : helpful) histogram << "helpful," << value << ',' << count << '\n';
  for (const auto& [value, count] : harmful) histogram << "harmful," << value << ',' << count << '\n';

  json doc;
  doc["iterations"] = summary.iterations;
  doc["final_entries"] = summary.final_entries;
  doc["replayed_entries"] = summary.replayed_entries;
  doc["persisted_playbook"] = persisted;
  doc["replay_matches"] = summary.replay_matches;
  doc["total_helpful"] = summary.total_helpful;
  doc["total_harmful"] = summary.total_harmful;
  doc["total_delay_s"] = summary.total_delay;

  write_file(run_dir / "report_quality.csv", quality.str());
  write_file(run_dir / "report_histogram.csv", histogram.str());
  write_file(run_dir / "report.json", doc.dump(2) + "\n");
  return summary;
}

int exit_code_for(const std::exception& error) noexcept {
  if (dynamic_cast<const InvalidConfig*>(&error) || dynamic_cast<const InvalidK*>(&error)) return 2;
  if (dynamic_cast<const ParseError*>(&error) || dynamic_cast<const EmptyCorpus*>(&error) ||
      dynamic_cast<const DuplicateTaskId*>(&error) || dynamic_cast<const MissingRunData*>(&error) ||
      dynamic_cast<const MissingInsightTags*>(&error)) {
    return 3;
  }
  if (dynamic_cast<const RateLimited*>(&error)) return 5;
  if (dynamic_cast<const BackendFailure*>(&error)) return 4;
  if (dynamic_cast<const DegenerateFit*>(&error) || dynamic_cast<const NoSpeedup*>(&error)) return 6;
  if (dynamic_cast<const UnknownEntryId*>(&error) || dynamic_cast<const DuplicateEntryId*>(&error) ||
      dynamic_cast<const InvalidEntry*>(&error)) {
    return 7;
  }
  return 1;
}

}  // namespace scanlearn
