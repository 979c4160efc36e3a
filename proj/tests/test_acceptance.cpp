// End-to-end acceptance gate: eight checks, one pass/fail line each.
// Everything here is self-contained — training, generation, and benchmarks
// run in-process from fixed seeds.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "toydiff/config.hpp"
#include "toydiff/eval.hpp"
#include "toydiff/sampler.hpp"
#include "toydiff/train.hpp"

using namespace toydiff;

namespace {

using DTape = Tape<double>;
using DRef = DTape::Ref;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool rel_close(double got, double want, double tol) {
  double scale = std::max(std::abs(got), std::abs(want));
  if (scale < 1e-12) return true;  // both are numerically zero
  return std::abs(got - want) <= tol * scale;
}

AttentionBundle<double> lift_bundle(DTape& tape, const oracle::Instance& inst) {
  AttentionBundle<double> b;
  b.h = inst.h;
  b.w = inst.w;
  b.n = inst.n;
  for (const auto& m : inst.cross)
    b.cross.push_back(tape.leaf(Tensor<double>({inst.h * inst.w, inst.n}, m), false));
  for (const auto& m : inst.self)
    b.self.push_back(
        tape.leaf(Tensor<double>({inst.h * inst.w, inst.h * inst.w}, m), false));
  return b;
}

std::vector<DRef> cross_subject_maps(DTape& tape, const AttentionBundle<double>& b,
                                     const LayoutSpec& ly) {
  std::vector<DRef> maps;
  for (const SubjectBinding& s : ly.bindings)
    maps.push_back(aggregate_cross(tape, b, s.subject_tokens));
  return maps;
}

std::vector<DRef> self_subject_maps(DTape& tape, const AttentionBundle<double>& b,
                                    const LayoutSpec& ly) {
  std::vector<DRef> maps;
  for (const SubjectBinding& s : ly.bindings)
    maps.push_back(aggregate_self(tape, b, rasterize_mask(s.box, b.h, b.w)));
  return maps;
}

// ---- 1: oracle equivalence -----------------------------------------------------

Outcome check_loss_oracles() {
  auto start = std::chrono::steady_clock::now();
  const double tol = 1e-6;
  double worst = 0;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    oracle::Instance inst = oracle::random_instance(seed);
    int hw = inst.h * inst.w;

    DTape tape;
    AttentionBundle<double> bundle = lift_bundle(tape, inst);
    auto zl = tape.leaf(Tensor<double>({static_cast<int>(inst.z.size())}, inst.z), false);
    Tensor<double> z_ref({static_cast<int>(inst.z_ref.size())}, inst.z_ref);
    BinaryMask bg{inst.h, inst.w, inst.background};

    double iou_c = tape.scalar_val(
        loss_iou(tape, cross_subject_maps(tape, bundle, inst.layout), inst.layout, inst.h,
                 inst.w));
    double iou_s = tape.scalar_val(
        loss_iou(tape, self_subject_maps(tape, bundle, inst.layout), inst.layout, inst.h,
                 inst.w));
    double mask = tape.scalar_val(loss_mask(tape, zl, z_ref, bg));
    double kl = tape.scalar_val(loss_kl_prior(tape, zl));
    double sim = tape.scalar_val(loss_sim(tape, bundle, inst.layout));
    double dis = tape.scalar_val(loss_dis(tape, bundle, inst.layout, inst.tau));
    LossWeights<double> w;
    ActiveFlags all;
    double total = tape.scalar_val(total_loss(
        tape, tape.scalar(iou_c + iou_s), tape.scalar(mask), tape.scalar(kl),
        tape.scalar(sim), tape.scalar(dis), w, all));

    // independent brute-force values
    std::vector<oracle::Vec> ocross, oself;
    for (const SubjectBinding& b : inst.layout.bindings) {
      ocross.push_back(oracle::cross_agg(inst.cross, hw, inst.n, b.subject_tokens));
      oself.push_back(
          oracle::self_agg(inst.self, hw, oracle::box_cells(b.box, inst.h, inst.w)));
    }
    double o_iou_c = oracle::iou_loss(ocross, inst.layout, inst.h, inst.w);
    double o_iou_s = oracle::iou_loss(oself, inst.layout, inst.h, inst.w);
    double o_mask = oracle::mask_loss(inst.z, inst.z_ref, inst.background, false);
    double o_kl = oracle::kl_prior(inst.z);
    double o_sim = oracle::sim_loss(inst.cross, inst.layout, inst.h, inst.w, inst.n);
    double o_dis =
        oracle::dis_loss(inst.cross, inst.layout, inst.h, inst.w, inst.n, inst.tau);
    double o_total = oracle::total(o_iou_c + o_iou_s, o_mask, o_kl, o_sim, o_dis,
                                   w.mask, w.kl, w.sim, w.dis, w.att, true, true, true,
                                   true);

    // sym_kl on a fresh random simplex pair per instance
    Philox prng(seed, 0xD15C);
    oracle::Vec p(inst.n), q(inst.n);
    double ps = 0, qs = 0;
    for (int i = 0; i < inst.n; ++i) {
      p[i] = prng.uniform(0.0, 1.0);
      q[i] = prng.uniform(0.0, 1.0);
      ps += p[i];
      qs += q[i];
    }
    for (int i = 0; i < inst.n; ++i) {
      p[i] /= ps;
      q[i] /= qs;
    }
    DTape tape2;
    double sym = tape2.scalar_val(
        sym_kl(tape2, tape2.leaf(Tensor<double>({inst.n}, p), false),
               tape2.leaf(Tensor<double>({inst.n}, q), false)));
    double o_sym = oracle::sym_kl(p, q);

    std::pair<double, double> pairs[] = {{iou_c, o_iou_c}, {iou_s, o_iou_s},
                                         {mask, o_mask},   {kl, o_kl},
                                         {sim, o_sim},     {dis, o_dis},
                                         {total, o_total}, {sym, o_sym}};
    for (auto [got, want] : pairs) {
      if (!rel_close(got, want, tol))
        return {false, "instance " + std::to_string(seed) + ": got " +
                           std::to_string(got) + " want " + std::to_string(want)};
      double scale = std::max({std::abs(got), std::abs(want), 1e-12});
      worst = std::max(worst, std::abs(got - want) / scale);
    }
  }
  double dt = seconds_since(start);
  if (dt >= 60) return {false, "took " + std::to_string(dt) + "s (limit 60)"};
  char buf[128];
  std::snprintf(buf, sizeof buf, "1000 instances, max rel err %.2e, %.1fs", worst, dt);
  return {true, buf};
}

// ---- 2: gradient correctness ---------------------------------------------------

LayoutSpec gradcheck_layout(uint64_t seed, int n_bindings) {
  LayoutSpec ly;
  ly.prompt_tokens = {vocab::kBos};
  Philox rng(seed, 0xA11);
  std::vector<Box> slots = {{0.05, 0.05, 0.45, 0.45},
                            {0.55, 0.05, 0.95, 0.45},
                            {0.05, 0.55, 0.45, 0.95}};
  for (int b = 0; b < n_bindings; ++b) {
    int subject = static_cast<int>(ly.prompt_tokens.size());
    ly.prompt_tokens.push_back(vocab::kShapes[rng.next_below(4)]);
    SubjectBinding bind;
    bind.subject_tokens = {subject};
    bind.box = slots[b];
    if (rng.next_below(2)) {  // attributes on roughly half the bindings
      bind.attribute_tokens.push_back(static_cast<int>(ly.prompt_tokens.size()));
      ly.prompt_tokens.push_back(vocab::kColors[rng.next_below(6)]);
    }
    ly.bindings.push_back(std::move(bind));
  }
  ly.prompt_tokens.push_back(vocab::kSep);
  ly.validate();
  return ly;
}

Outcome check_gradients() {
  auto start = std::chrono::steady_clock::now();
  const double h = 1e-4, tol = 1e-4, kink_eps = 1e-6, noise_floor = 1e-7;
  int configs = 0, checked = 0, excluded = 0;
  double worst = 0;

  for (uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig mc;
    mc.image = 8;
    mc.patch = 4;
    mc.d_model = (seed % 2) ? 32 : 16;
    mc.n_blocks = 1 + static_cast<int>(seed % 2);
    mc.n_heads = 2;
    mc.d_ff = 2 * mc.d_model;
    mc.time_dim = 8;
    DenoiserParams<double> params = init_params<double>(mc, 1000 + seed);
    LayoutSpec ly = gradcheck_layout(seed, 1 + static_cast<int>(seed % 3));

    Philox rng(seed, 0xBEEF);
    Tensor<double> z({3, mc.image, mc.image});
    for (auto& v : z.data) v = rng.uniform(-1.0, 1.0);
    Tensor<double> z_ref = z;
    for (auto& v : z_ref.data) v += rng.uniform(0.05, 0.3) * (rng.next_below(2) ? 1 : -1);
    int t = 20 + static_cast<int>(rng.next_below(980));

    LossWeights<double> w;
    ActiveFlags all;
    auto eval = [&](const Tensor<double>& zz) {
      return gradient_of_total<double>(zz, z_ref, t, params, ly, w, all, 10.0);
    };
    auto res = eval(z);
    if (!res.finite) return {false, "non-finite gradient at config " + std::to_string(seed)};

    // a dissimilarity divergence at its clamp would smear non-differentiability
    // over every element; no element-local exclusion exists, so skip (never
    // triggers for untrained attention, where divergences sit far below tau)
    DTape probe;  // cheap check via the breakdown: clamp binds when dis = -tau * pairs
    (void)probe;

    ++configs;
    for (int64_t i = 0; i < z.numel(); ++i) {
      if (std::abs(z.data[i] - z_ref.data[i]) <= kink_eps) {
        ++excluded;  // L1 kink
        continue;
      }
      Tensor<double> zp = z, zm = z;
      zp.data[i] += h;
      zm.data[i] -= h;
      double fd = (eval(zp).breakdown.total - eval(zm).breakdown.total) / (2 * h);
      double got = res.grad.data[i];
      double scale = std::max(std::abs(fd), std::abs(got));
      if (scale < noise_floor) {
        if (std::abs(fd - got) > noise_floor)
          return {false, "config " + std::to_string(seed) + " elem " + std::to_string(i) +
                             ": fd " + std::to_string(fd) + " grad " + std::to_string(got)};
        ++checked;
        continue;
      }
      double rel = std::abs(fd - got) / scale;
      worst = std::max(worst, rel);
      if (rel > tol)
        return {false, "config " + std::to_string(seed) + " elem " + std::to_string(i) +
                           ": rel err " + std::to_string(rel)};
      ++checked;
    }
  }
  double dt = seconds_since(start);
  if (dt >= 300) return {false, "took " + std::to_string(dt) + "s (limit 300)"};
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d configs, %d elements, %d kink-excluded, max rel err %.2e, %.1fs",
                configs, checked, excluded, worst, dt);
  return {true, buf};
}

// ---- 3: invariant suite --------------------------------------------------------

Outcome check_invariants() {
  auto start = std::chrono::steady_clock::now();
  ModelConfig mc;
  mc.image = 8;
  mc.patch = 4;
  mc.d_model = 16;
  mc.n_blocks = 1;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.time_dim = 8;
  DenoiserParams<float> params = init_params<float>(mc, 99);

  for (uint64_t seed = 0; seed < 500; ++seed) {
    oracle::Instance inst = oracle::random_instance(seed + 5000);
    int hw = inst.h * inst.w;
    DTape tape;
    AttentionBundle<double> bundle = lift_bundle(tape, inst);
    auto zl = tape.leaf(Tensor<double>({static_cast<int>(inst.z.size())}, inst.z), true);
    Tensor<double> z_ref({static_cast<int>(inst.z_ref.size())}, inst.z_ref);
    BinaryMask bg{inst.h, inst.w, inst.background};

    double iou = tape.scalar_val(loss_iou(
        tape, cross_subject_maps(tape, bundle, inst.layout), inst.layout, inst.h, inst.w));
    auto mask_ref = loss_mask(tape, zl, z_ref, bg);
    double mask = tape.scalar_val(mask_ref);
    double kl = tape.scalar_val(loss_kl_prior(tape, zl));
    double sim = tape.scalar_val(loss_sim(tape, bundle, inst.layout));
    double dis = tape.scalar_val(loss_dis(tape, bundle, inst.layout, inst.tau));
    double nb = static_cast<double>(inst.layout.bindings.size());
    if (iou < 0 || iou > nb + 1e-12) return {false, "iou range violated"};
    if (mask < 0 || kl < 0 || sim < 0) return {false, "non-negativity violated"};
    if (dis < -inst.tau * nb - 1e-12 || dis > 1e-12) return {false, "dis range violated"};

    // sym_kl symmetry, bit-exact
    Philox prng(seed, 0x51DE);
    oracle::Vec p(inst.n), q(inst.n);
    double ps = 0, qs = 0;
    for (int i = 0; i < inst.n; ++i) {
      p[i] = prng.uniform(0.0, 1.0);
      q[i] = prng.uniform(0.0, 1.0);
      ps += p[i];
      qs += q[i];
    }
    for (int i = 0; i < inst.n; ++i) {
      p[i] /= ps;
      q[i] /= qs;
    }
    DTape t2;
    auto pl = t2.leaf(Tensor<double>({inst.n}, p), false);
    auto ql = t2.leaf(Tensor<double>({inst.n}, q), false);
    if (t2.scalar_val(sym_kl(t2, pl, ql)) != t2.scalar_val(sym_kl(t2, ql, pl)))
      return {false, "sym_kl asymmetric at case " + std::to_string(seed)};

    // matched moments: antithetic z normalized to unit variance
    {
      DTape t3;
      int m = 2 * (2 + static_cast<int>(prng.next_below(30)));
      Tensor<double> zz({m});
      double var = 0;
      for (int i = 0; i < m / 2; ++i) {
        double v = prng.uniform(0.1, 2.0);
        zz.data[2 * i] = v;
        zz.data[2 * i + 1] = -v;
        var += 2 * v * v;
      }
      double sd = std::sqrt(var / m);
      for (auto& v : zz.data) v /= sd;
      double kl0 = t3.scalar_val(loss_kl_prior(t3, t3.leaf(std::move(zz), false)));
      if (std::abs(kl0) > 1e-12)
        return {false, "kl at matched moments = " + std::to_string(kl0)};
    }

    // in-box-only attention gives exactly zero iou
    {
      DTape t4;
      std::vector<DRef> confined;
      for (const SubjectBinding& b : inst.layout.bindings) {
        std::vector<int> cells = oracle::box_cells(b.box, inst.h, inst.w);
        Tensor<double> m({hw});
        for (int c : cells) m.data[c] = 1.0 / cells.size();
        confined.push_back(t4.leaf(std::move(m), false));
      }
      if (t4.scalar_val(loss_iou(t4, confined, inst.layout, inst.h, inst.w)) != 0.0)
        return {false, "confined attention has nonzero iou"};
    }

    // refinement is the identity outside every window
    {
      GuidanceConfig<float> cfg;
      int step = 18 + static_cast<int>(prng.next_below(32));
      Philox zr(seed, 0xF1E1D);
      Tensor<float> zf = zr.normal_tensor<float>({3, 8, 8});
      LayoutSpec ly = gradcheck_layout(seed, 1 + static_cast<int>(seed % 3));
      std::vector<RefineRecord<float>> trace;
      Tensor<float> out = refine_latent(zf, 300, step, params, ly, cfg, &trace);
      if (out.data != zf.data || !trace.empty())
        return {false, "refine modified z outside the windows"};
    }

    // mask gradient vanishes on the foreground
    tape.backward(mask_ref);
    const Tensor<double>& g = tape.grad(zl);
    if (!g.data.empty()) {
      size_t cells = inst.background.size(), channels = inst.z.size() / cells;
      for (size_t c = 0; c < channels; ++c)
        for (size_t i = 0; i < cells; ++i)
          if (!inst.background[i] && g.data[c * cells + i] != 0.0)
            return {false, "mask gradient leaked into the foreground"};
    }
  }
  double dt = seconds_since(start);
  if (dt >= 60) return {false, "took " + std::to_string(dt) + "s (limit 60)"};
  char buf[96];
  std::snprintf(buf, sizeof buf, "500 property cases, %.1fs", dt);
  return {true, buf};
}

// ---- 4: schedule fidelity ------------------------------------------------------

Outcome check_schedules() {
  GuidanceConfig<double> cfg;
  if (cfg.weights.mask != 0.01) return {false, "lambda_mask != 0.01"};
  if (cfg.weights.kl != 5.0) return {false, "lambda_kl != 5"};
  if (cfg.window_mask_kl != 5) return {false, "mask/kl window != 5 steps"};
  if (cfg.window_att != 18) return {false, "association window != 18 steps"};
  if (cfg.k_iters != 5) return {false, "k != 5"};
  if (cfg.total_steps != 50) return {false, "total steps != 50"};
  if (alpha_schedule(0, cfg) != 30.0) return {false, "alpha(0) != 30"};
  if (alpha_schedule(49, cfg) != 8.0) return {false, "alpha(49) != 8"};
  for (int i = 0; i < 50; ++i) {
    double want = 30.0 + (8.0 - 30.0) * static_cast<double>(i) / 49.0;
    if (alpha_schedule(i, cfg) != want)
      return {false, "alpha(" + std::to_string(i) + ") deviates from the line"};
  }
  RunConfig rc = default_config();  // the serialized defaults agree
  if (rc.guidance.weights.mask != 0.01f || rc.guidance.weights.kl != 5.0f ||
      rc.guidance.window_mask_kl != 5 || rc.guidance.window_att != 18 ||
      rc.guidance.k_iters != 5)
    return {false, "run-config defaults disagree"};
  return {true, "0.01 / 5 / 5-step / 18-step / k=5 / 30->8 linear"};
}

// ---- 5: sampler correctness ----------------------------------------------------

Outcome check_sampler() {
  NoiseSchedule sched = NoiseSchedule::cosine();
  Philox rng(4, 0xCAFE);
  Tensor<float> z0({3, 8, 8});
  for (auto& v : z0.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  Tensor<float> eps0 = rng.normal_tensor<float>({3, 8, 8});

  std::vector<int> ts = sched.inference_timesteps(50);
  Tensor<float> z = sched.add_noise(z0, eps0, ts[0]);
  for (size_t i = 0; i < ts.size(); ++i) {
    int t = ts[i];
    int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
    double ab = sched.at(t);
    Tensor<float> eps(z.shape);  // oracle denoiser: exact noise toward z0
    for (int64_t j = 0; j < z.numel(); ++j)
      eps.data[j] = static_cast<float>(
          (z.data[j] - std::sqrt(ab) * z0.data[j]) / std::sqrt(1.0 - ab));
    z = ddim_step(z, eps, t, t_prev, sched);
  }
  double num = 0, den = 0;
  for (int64_t j = 0; j < z.numel(); ++j) {
    double d = static_cast<double>(z.data[j]) - z0.data[j];
    num += d * d;
    den += static_cast<double>(z0.data[j]) * z0.data[j];
  }
  double rel = std::sqrt(num / den);
  if (rel > 1e-3)
    return {false, "round-trip rel err " + std::to_string(rel)};

  // bit-identical regeneration
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_blocks = 2;
  mc.d_ff = 64;
  mc.time_dim = 16;
  DenoiserParams<float> params = init_params<float>(mc, 7);
  LayoutSpec ly = gradcheck_layout(3, 2);
  GuidanceConfig<float> cfg;
  GenerateResult<float> a = generate(params, sched, ly, 42, cfg);
  GenerateResult<float> b = generate(params, sched, ly, 42, cfg);
  if (a.image.data != b.image.data) return {false, "fixed-seed images differ"};
  if (a.refine_trace.size() != 18u * 5u)
    return {false, "unexpected refinement trace length"};
  char buf[96];
  std::snprintf(buf, sizeof buf, "round-trip rel err %.2e; seed 42 bit-stable", rel);
  return {true, buf};
}

// ---- 6 & 7 share the trained model ---------------------------------------------

Outcome check_training(TrainResult& result) {
  auto start = std::chrono::steady_clock::now();
  ModelConfig mc;
  TrainConfig tc;
  NoiseSchedule sched = NoiseSchedule::cosine();
  result = train_denoiser(mc, tc, sched, 0);
  if (!(result.final_mse <= result.baseline_mse / 5.0)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "holdout mse %.4f > baseline %.4f / 5",
                  result.final_mse, result.baseline_mse);
    return {false, buf};
  }
  for (uint64_t s = 0; s < 500; ++s) {
    Philox rng(s, rng_stream::kSceneBase);
    SceneSpec scene = sample_scene(rng);
    std::vector<Detection> dets = detect_objects(render_scene(scene));
    if (dets.size() != scene.objects.size())
      return {false, "scene " + std::to_string(s) + ": object count mismatch"};
    for (const SceneObject& o : scene.objects) {
      int hits = 0;
      for (const Detection& d : dets)
        if (o.box.contains(d.cx, d.cy) && d.shape == o.shape && d.color == o.color &&
            d.texture == o.texture)
          ++hits;
      if (hits != 1)
        return {false, "scene " + std::to_string(s) + ": class recovery failed"};
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "holdout mse %.4f vs baseline %.4f (<=1/5); 500 scenes exact; %.0fs",
                result.final_mse, result.baseline_mse, seconds_since(start));
  return {true, buf};
}

Outcome check_ablation_directions(const TrainResult& trained) {
  auto start = std::chrono::steady_clock::now();
  NoiseSchedule sched = NoiseSchedule::cosine();
  std::vector<SuiteEntry> suite = make_default_suite(0);
  std::vector<uint64_t> seeds = {0, 42, 2718, 31415};
  std::vector<AblationRow> all_rows = default_ablation_rows();
  std::vector<AblationRow> rows = {all_rows[0], all_rows[3], all_rows[4]};
  GuidanceConfig<float> cfg;

  BenchmarkResult r =
      run_benchmark(trained.params, sched, suite, seeds, rows, cfg, /*threads=*/1);
  double dt = seconds_since(start);
  const MetricsReport& iou_only = r.rows[0];
  const MetricsReport& no_att = r.rows[1];
  const MetricsReport& full = r.rows[2];

  char buf[240];
  if (!(no_att.leakage < iou_only.leakage)) {
    std::snprintf(buf, sizeof buf, "leakage %.4f (iou+mask+kl) !< %.4f (iou)",
                  no_att.leakage, iou_only.leakage);
    return {false, buf};
  }
  if (!(full.attribute >= no_att.attribute + 0.05)) {
    std::snprintf(buf, sizeof buf, "attribute %.4f (full) < %.4f (no att) + 5pp",
                  full.attribute, no_att.attribute);
    return {false, buf};
  }
  if (dt > 1800) {
    std::snprintf(buf, sizeof buf, "benchmark took %.0fs (limit 1800)", dt);
    return {false, buf};
  }
  std::snprintf(buf, sizeof buf,
                "leakage %.3f < %.3f; attribute %.3f >= %.3f + 0.05; 600 runs, %.0fs",
                no_att.leakage, iou_only.leakage, full.attribute, no_att.attribute, dt);
  return {true, buf};
}

// ---- 8: degenerate inputs ------------------------------------------------------

Outcome check_degenerate_cases() {
  // single subject: no ordered pairs, dissimilarity is exactly zero
  oracle::Instance inst = oracle::random_instance(17);
  DTape tape;
  AttentionBundle<double> bundle = lift_bundle(tape, inst);
  LayoutSpec single;
  single.prompt_tokens = inst.layout.prompt_tokens;
  single.bindings = {inst.layout.bindings[0]};
  if (single.bindings[0].attribute_tokens.empty())
    single.bindings[0].attribute_tokens.push_back(
        inst.layout.bindings[0].subject_tokens[0] == 0 ? 1 : 0);
  if (tape.scalar_val(loss_dis(tape, bundle, single, 10.0)) != 0.0)
    return {false, "single-subject dissimilarity nonzero"};

  // attribute-free: both association terms are exactly zero
  LayoutSpec bare = inst.layout;
  for (auto& b : bare.bindings) b.attribute_tokens.clear();
  if (tape.scalar_val(loss_sim(tape, bundle, bare)) != 0.0 ||
      tape.scalar_val(loss_dis(tape, bundle, bare, 10.0)) != 0.0)
    return {false, "attribute-free association nonzero"};

  // zero-area boxes are rejected at validation and parse time
  bool threw = false;
  try {
    Box b{0.3, 0.2, 0.3, 0.8};
    b.validate();
  } catch (const std::invalid_argument&) {
    threw = true;
  }
  if (!threw) return {false, "zero-area box accepted"};
  threw = false;
  try {
    parse_layout(R"({"schema":1,"prompt":[1,3],"subjects":)"
                 R"([{"tokens":[1],"box":[0.2,0.2,0.2,0.9]}]})");
  } catch (const std::invalid_argument&) {
    threw = true;
  }
  if (!threw) return {false, "zero-area box parsed"};

  // all-zero attention mass inside a box falls back to the uniform patch
  DTape t2;
  Tensor<double> agg({16});  // 4x4 grid, mass only outside the box
  agg.data[15] = 1.0;
  auto patch = extract_patch(t2, t2.leaf(std::move(agg), false),
                             Box{0.0, 0.0, 0.5, 0.5}, 4, 4);
  const Tensor<double>& pv = t2.val(patch);
  for (double v : pv.data)
    if (v != 1.0 / pv.numel()) return {false, "uniform fallback violated"};
  return {true, "single-subject, attribute-free, zero-area, uniform fallback"};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int idx, const char* name, const Outcome& o) {
    std::printf("criterion %d (%s): %s%s%s\n", idx, name, o.pass ? "PASS" : "FAIL",
                o.detail.empty() ? "" : " — ", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  };
  auto guarded = [](const std::function<Outcome()>& fn) -> Outcome {
    try {
      return fn();
    } catch (const std::exception& e) {
      return {false, std::string("exception: ") + e.what()};
    }
  };

  report(1, "loss oracle equivalence", guarded(check_loss_oracles));
  report(2, "gradient correctness", guarded(check_gradients));
  report(3, "invariant suite", guarded(check_invariants));
  report(4, "schedule fidelity", guarded(check_schedules));
  report(5, "sampler correctness", guarded(check_sampler));

  TrainResult trained;
  Outcome training = guarded([&] { return check_training(trained); });
  report(6, "toy training", training);
  if (training.pass) {
    report(7, "ablation direction", guarded([&] { return check_ablation_directions(trained); }));
  } else {
    report(7, "ablation direction", {false, "skipped: training failed"});
  }
  report(8, "degenerate inputs", guarded(check_degenerate_cases));

  std::printf("%d/8 criteria passed\n", 8 - failures);
  return failures == 0 ? 0 : 1;
}
