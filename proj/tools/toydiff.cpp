// command-line front end: train, generate, benchmark, suite, config, trace

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "toydiff/config.hpp"
#include "toydiff/eval.hpp"
#include "toydiff/io.hpp"
#include "toydiff/sampler.hpp"
#include "toydiff/suite.hpp"
#include "toydiff/train.hpp"

namespace {

using nlohmann::json;
using namespace toydiff;

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

// relative output paths are rooted at $TOYDIFF_OUT_ROOT when set
std::string rooted(const std::string& path) {
  const char* root = std::getenv("TOYDIFF_OUT_ROOT");
  if (!root || !*root || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(root) / path).string();
}

int default_threads() {
  if (const char* env = std::getenv("TOYDIFF_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

std::string now_string() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string build_id() {
  std::ostringstream s;
  s << "toydiff-"
#if defined(__clang__)
    << "clang-" << __clang_major__ << "." << __clang_minor__;
#elif defined(__GNUC__)
    << "gcc-" << __GNUC__ << "." << __GNUC_MINOR__;
#else
    << "cxx-unknown";
#endif
#ifdef NDEBUG
  s << "-release";
#else
  s << "-debug";
#endif
  return s.str();
}

json manifest_base(const std::string& command, const RunConfig& cfg) {
  json m;
  m["command"] = command;
  m["config"] = json::parse(serialize_config(cfg));
  m["build"] = build_id();
  m["created"] = now_string();
  return m;
}

RunConfig load_config_opt(const std::string& path) {
  if (path.empty()) return default_config();
  return parse_config(read_file(path));
}

std::vector<int> parse_prompt_file(const std::string& text) {
  std::vector<int> tokens;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    bool numeric = !word.empty() && (std::isdigit(word[0]) != 0);
    tokens.push_back(numeric ? std::stoi(word) : vocab::id(word));
  }
  check(!tokens.empty(), "prompt file: no tokens");
  check(tokens.size() <= vocab::kMaxTokens, "prompt file: too many tokens");
  return tokens;
}

void apply_ablations(GuidanceConfig<float>& g, const std::vector<std::string>& ablate) {
  for (const std::string& term : ablate) {
    if (term == "iou") g.use_iou = false;
    else if (term == "mask") g.use_mask = false;
    else if (term == "kl") g.use_kl = false;
    else if (term == "att") g.use_att = false;
    else throw std::invalid_argument("unknown ablation term '" + term + "'");
  }
}

json trace_to_json(const RefineRecord<float>& r) {
  return json{{"kind", "refine"},
              {"step", r.step_index},
              {"t", r.t},
              {"k", r.k},
              {"alpha", r.alpha},
              {"active",
               {{"iou", r.losses.active.iou},
                {"mask", r.losses.active.mask},
                {"kl", r.losses.active.kl},
                {"att", r.losses.active.att}}},
              {"loss",
               {{"iou", r.losses.iou},
                {"mask", r.losses.mask},
                {"kl", r.losses.kl},
                {"sim", r.losses.sim},
                {"dis", r.losses.dis},
                {"att", r.losses.att},
                {"total", r.losses.total}}},
              {"grad_norm", r.grad_norm},
              {"aborted", r.aborted}};
}

// ---- subcommands -------------------------------------------------------------

int cmd_train(const std::string& config_path, int steps_override, int64_t seed_override,
              const std::string& out_dir_raw) {
  RunConfig cfg = load_config_opt(config_path);
  if (steps_override >= 0) cfg.train.steps = steps_override;
  if (seed_override >= 0) cfg.train_seed = static_cast<uint64_t>(seed_override);
  cfg.validate();
  std::string out_dir = rooted(out_dir_raw);

  NoiseSchedule schedule = NoiseSchedule::cosine(cfg.schedule_T, cfg.schedule_s);
  auto t0 = std::chrono::steady_clock::now();
  TrainResult result = train_denoiser(cfg.model, cfg.train, schedule, cfg.train_seed);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::string weights_path = out_dir + "/weights.bin";
  save_weights(weights_path, result.params, schedule);

  std::string curve = "step,loss\n";
  for (auto [step, loss] : result.loss_curve)
    curve += std::to_string(step) + "," + std::to_string(loss) + "\n";
  atomic_write(out_dir + "/loss_curve.csv", curve);

  json m = manifest_base("train", cfg);
  m["seeds"] = {cfg.train_seed};
  m["weights_checksum"] = weights_checksum(result.params);
  m["outputs"] = {weights_path, out_dir + "/loss_curve.csv"};
  m["wall_seconds"] = wall;
  m["holdout_mse"] = {{"baseline", result.baseline_mse}, {"final", result.final_mse}};
  atomic_write(out_dir + "/manifest.json", m.dump(2));

  std::cout << "trained " << cfg.train.steps << " steps in " << wall << "s\n"
            << "holdout mse: baseline " << result.baseline_mse << " -> final "
            << result.final_mse << "\n"
            << "weights: " << weights_path << " (crc32 "
            << weights_checksum(result.params) << ")\n";
  return 0;
}

int cmd_generate(const std::string& weights_path, const std::string& layout_path,
                 const std::string& prompt_path, const std::string& config_path,
                 std::vector<uint64_t> seeds, const std::vector<std::string>& ablate,
                 const std::string& out_dir_raw, bool no_guidance) {
  RunConfig cfg = load_config_opt(config_path);
  apply_ablations(cfg.guidance, ablate);
  cfg.validate();
  std::string out_dir = rooted(out_dir_raw);

  WeightsBundle bundle = load_weights(rooted(weights_path));
  LayoutSpec layout = parse_layout(read_file(layout_path));
  if (!prompt_path.empty()) {
    layout.prompt_tokens = parse_prompt_file(read_file(prompt_path));
    layout.validate();
  }
  if (seeds.empty()) seeds = {0};

  json m = manifest_base("generate", cfg);
  m["weights_checksum"] = bundle.checksum;
  m["layout"] = json::parse(serialize_layout(layout));
  m["seeds"] = seeds;
  json outputs = json::array();

  auto t0 = std::chrono::steady_clock::now();
  for (uint64_t seed : seeds) {
    GenerateOptions opts;
    opts.guidance = !no_guidance;
    GenerateResult<float> gen =
        generate(bundle.params, bundle.schedule, layout, seed, cfg.guidance, opts);
    std::string img_path = out_dir + "/gen_seed" + std::to_string(seed) + ".png";
    save_image(img_path, gen.image, cfg.image_scale);
    std::string trace_path = out_dir + "/trace_seed" + std::to_string(seed) + ".jsonl";
    std::string trace;
    for (const auto& r : gen.refine_trace) trace += trace_to_json(r).dump() + "\n";
    for (const auto& s : gen.step_trace)
      trace += json{{"kind", "step"},
                    {"step", s.step_index},
                    {"t", s.t},
                    {"t_prev", s.t_prev},
                    {"latent_norm", s.latent_norm}}
                   .dump() +
               "\n";
    atomic_write(trace_path, trace);
    outputs.push_back(img_path);
    outputs.push_back(trace_path);
    std::cout << "seed " << seed << " -> " << img_path << "\n";
  }
  m["outputs"] = outputs;
  m["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  atomic_write(out_dir + "/manifest.json", m.dump(2));
  return 0;
}

std::vector<AblationRow> parse_grid(const std::string& grid) {
  std::vector<AblationRow> all = default_ablation_rows();
  if (grid.empty() || grid == "default") return all;
  if (grid == "acceptance")  // the rows the directional comparisons need
    return {all[0], all[3], all[4]};
  std::vector<AblationRow> rows;
  std::istringstream in(grid);
  std::string name;
  while (std::getline(in, name, ',')) {
    bool found = false;
    for (const AblationRow& r : all)
      if (r.name == name) {
        rows.push_back(r);
        found = true;
      }
    check(found, "benchmark: unknown grid row '" + name + "'");
  }
  check(!rows.empty(), "benchmark: empty grid");
  return rows;
}

json report_to_json(const BenchmarkResult& result) {
  json rows = json::array();
  for (const MetricsReport& r : result.rows) {
    json runs = json::array();
    for (const RunRecord& rec : r.per_run) {
      json jr{{"entry", rec.entry_index}, {"seed", rec.seed}, {"failed", rec.failed}};
      if (rec.failed) {
        jr["error"] = rec.error;
      } else {
        jr["precision"] = rec.score.precision;
        jr["recall"] = rec.score.recall;
        jr["f1"] = rec.score.f1;
        jr["spatial"] = rec.score.spatial;
        jr["attribute"] = rec.score.attribute;
        jr["leakage"] = rec.score.leakage;
      }
      runs.push_back(std::move(jr));
    }
    rows.push_back(json{{"name", r.row_name},
                        {"losses",
                         {{"iou", r.row.use_iou},
                          {"mask", r.row.use_mask},
                          {"kl", r.row.use_kl},
                          {"att", r.row.use_att}}},
                        {"precision", r.precision},
                        {"recall", r.recall},
                        {"f1", r.f1},
                        {"spatial", r.spatial},
                        {"attribute", r.attribute},
                        {"leakage", r.leakage},
                        {"runs", r.runs},
                        {"failures", r.failures},
                        {"per_run", std::move(runs)}});
  }
  return json{{"rows", std::move(rows)},
              {"total_runs", result.total_runs},
              {"total_failures", result.total_failures},
              {"wall_seconds", result.wall_seconds}};
}

int cmd_benchmark(const std::string& weights_path, const std::string& suite_path,
                  const std::string& grid, std::vector<uint64_t> seeds,
                  const std::string& config_path, const std::string& out_dir_raw,
                  int threads) {
  RunConfig cfg = load_config_opt(config_path);
  cfg.validate();
  std::string out_dir = rooted(out_dir_raw);
  WeightsBundle bundle = load_weights(rooted(weights_path));
  std::vector<SuiteEntry> suite = suite_path.empty()
                                      ? make_default_suite(0)
                                      : parse_suite(read_file(suite_path));
  if (seeds.empty()) seeds = {0, 42, 2718, 31415};
  std::vector<AblationRow> rows = parse_grid(grid);

  BenchmarkResult result = run_benchmark(bundle.params, bundle.schedule, suite, seeds,
                                         rows, cfg.guidance, threads);
  std::string table = format_benchmark_table(result);
  std::cout << table;
  atomic_write(out_dir + "/report.json", report_to_json(result).dump(2));
  atomic_write(out_dir + "/report.txt", table);

  json m = manifest_base("benchmark", cfg);
  m["weights_checksum"] = bundle.checksum;
  m["seeds"] = seeds;
  m["suite_entries"] = suite.size();
  m["grid"] = grid.empty() ? "default" : grid;
  m["outputs"] = {out_dir + "/report.json", out_dir + "/report.txt"};
  m["wall_seconds"] = result.wall_seconds;
  m["total_failures"] = result.total_failures;
  atomic_write(out_dir + "/manifest.json", m.dump(2));

  if (result.total_failures * 20 > result.total_runs) {  // > 5% failed
    std::cerr << "error: " << result.total_failures << "/" << result.total_runs
              << " runs failed (> 5%)\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_suite(int64_t seed, const std::string& out_path_raw) {
  std::vector<SuiteEntry> suite = make_default_suite(seed < 0 ? 0 : seed);
  std::string out_path = rooted(out_path_raw);
  atomic_write(out_path, serialize_suite(suite));
  std::cout << "wrote " << suite.size() << " entries to " << out_path << "\n";
  return 0;
}

int cmd_config(const std::string& out_path_raw) {
  std::string text = serialize_config(default_config()) + "\n";
  if (out_path_raw.empty()) {
    std::cout << text;
  } else {
    atomic_write(rooted(out_path_raw), text);
    std::cout << "wrote " << rooted(out_path_raw) << "\n";
  }
  return 0;
}

int cmd_trace(const std::string& in_path, int step_filter) {
  std::istringstream in(read_file(in_path));
  std::string line;
  int refines = 0, steps = 0, aborted = 0;
  double last_total = 0, first_total = 0;
  bool seen_refine = false;
  std::cout << "step  k   alpha   iou      mask     kl       sim      dis      total\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.at("kind") == "refine") {
      ++refines;
      if (j.value("aborted", false)) ++aborted;
      double total = j.at("loss").at("total");
      if (!seen_refine) {
        first_total = total;
        seen_refine = true;
      }
      last_total = total;
      int step = j.at("step");
      if (step_filter >= 0 && step != step_filter) continue;
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "%-5d %-3d %-7.3f %-8.4f %-8.4f %-8.4f %-8.4f %-8.4f %-8.4f\n", step,
                    j.at("k").get<int>(), j.at("alpha").get<double>(),
                    j.at("loss").at("iou").get<double>(),
                    j.at("loss").at("mask").get<double>(),
                    j.at("loss").at("kl").get<double>(),
                    j.at("loss").at("sim").get<double>(),
                    j.at("loss").at("dis").get<double>(), total);
      std::cout << buf;
    } else if (j.at("kind") == "step") {
      ++steps;
    }
  }
  std::cout << "records: " << refines << " refine (" << aborted << " aborted), " << steps
            << " step\n";
  if (seen_refine)
    std::cout << "guided total: first " << first_total << ", last " << last_total << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layout-guided toy diffusion workbench"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train the toy denoiser");
  std::string tr_config, tr_out = "out/train";
  int tr_steps = -1;
  int64_t tr_seed = -1;
  train->add_option("--config", tr_config, "config JSON path");
  train->add_option("--steps", tr_steps, "override training steps");
  train->add_option("--seed", tr_seed, "override training seed");
  train->add_option("--out", tr_out, "output directory");

  // generate
  auto* gen = app.add_subcommand("generate", "sample an image for a layout");
  std::string g_weights = "out/train/weights.bin", g_layout, g_prompt, g_config,
              g_out = "out/generate";
  std::vector<uint64_t> g_seeds;
  std::vector<std::string> g_ablate;
  bool g_noguid = false;
  gen->add_option("--weights", g_weights, "weights file");
  gen->add_option("--layout", g_layout, "layout JSON path")->required();
  gen->add_option("--prompt-file", g_prompt, "token list overriding the layout prompt");
  gen->add_option("--config", g_config, "config JSON path");
  gen->add_option("--seed,--seeds", g_seeds, "seed list")->delimiter(',');
  gen->add_option("--ablate", g_ablate, "disable losses: iou, mask, kl, att")
      ->delimiter(',');
  gen->add_flag("--no-guidance", g_noguid, "skip latent refinement entirely");
  gen->add_option("--out", g_out, "output directory");

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "run the ablation grid over a suite");
  std::string b_weights = "out/train/weights.bin", b_suite, b_grid = "default", b_config,
              b_out = "out/benchmark";
  std::vector<uint64_t> b_seeds;
  int b_threads = default_threads();
  bench->add_option("--weights", b_weights, "weights file");
  bench->add_option("--suite", b_suite, "suite JSON path (default: built-in 50 prompts)");
  bench->add_option("--grid", b_grid, "default | acceptance | comma-separated row names");
  bench->add_option("--seeds", b_seeds, "seed list")->delimiter(',');
  bench->add_option("--config", b_config, "config JSON path");
  bench->add_option("--out", b_out, "output directory");
  bench->add_option("--threads", b_threads, "worker threads");

  // suite
  auto* suite = app.add_subcommand("suite", "emit the default benchmark suite");
  std::string s_out = "out/suite.json";
  int64_t s_seed = 0;
  suite->add_option("--seed", s_seed, "suite generation seed");
  suite->add_option("--out", s_out, "output path");

  // config
  auto* conf = app.add_subcommand("config", "print or write the default config");
  std::string c_out;
  conf->add_option("--out", c_out, "write to a file instead of stdout");

  // trace
  auto* trace = app.add_subcommand("trace", "summarize a generation trace");
  std::string x_in;
  int x_step = -1;
  trace->add_option("--in", x_in, "trace JSONL path")->required();
  trace->add_option("--step", x_step, "only show this sampling step");

  try {
    app.parse(argc, argv);
    if (*train) return cmd_train(tr_config, tr_steps, tr_seed, tr_out);
    if (*gen)
      return cmd_generate(g_weights, g_layout, g_prompt, g_config, g_seeds, g_ablate,
                          g_out, g_noguid);
    if (*bench)
      return cmd_benchmark(b_weights, b_suite, b_grid, b_seeds, b_config, b_out, b_threads);
    if (*suite) return cmd_suite(s_seed, s_out);
    if (*conf) return cmd_config(c_out);
    if (*trace) return cmd_trace(x_in, x_step);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
