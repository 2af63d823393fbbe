#include "libra/commands.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "libra/error.hpp"
#include "libra/gradcheck.hpp"
#include "libra/loss.hpp"
#include "libra/pyramid.hpp"
#include "libra/rng.hpp"
#include "libra/tensor.hpp"

namespace libra {

namespace {

using nlohmann::json;

std::string num(double v, const char* format = "%.12g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes `text` to `path`, or to stdout when path is empty.
void write_output(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  scenario.validate();
  assign.validate();
  sampler.validate();
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (hist_bins < 1) throw std::invalid_argument("hist_bins must be >= 1");
  solve_b(alpha, gamma);
  for (const auto& [a, g] : curve_params) solve_b(a, g);
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (pyramid.levels < 1 || pyramid.base_resolution < 1 || pyramid.channels < 1) {
    throw std::invalid_argument("pyramid levels, base_resolution and channels must be >= 1");
  }
  if (toy.samples < 1 || toy.steps < 1 || !(toy.learning_rate > 0.0) ||
      !(toy.outlier_fraction >= 0.0 && toy.outlier_fraction < 1.0) || !(toy.noise >= 0.0)) {
    throw std::invalid_argument("toy_fit: invalid configuration");
  }
}

RunConfig apply_json_config(RunConfig base, const std::string& json_text) {
  const json j = json::parse(json_text);
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  take(j, "seed", base.seed);
  take(j, "trials", base.trials);
  take(j, "out", base.out);
  take(j, "hist_bins", base.hist_bins);
  if (j.contains("scenario_path")) base.scenario_path = j.at("scenario_path").get<std::string>();
  if (j.contains("scenario")) {
    const json& s = j.at("scenario");
    take(s, "image_width", base.scenario.image_width);
    take(s, "image_height", base.scenario.image_height);
    take(s, "num_ground_truths", base.scenario.num_ground_truths);
    take(s, "num_candidates", base.scenario.num_candidates);
    take(s, "skew", base.scenario.skew);
  }
  if (j.contains("assign")) {
    take(j.at("assign"), "pos_iou_threshold", base.assign.pos_iou_threshold);
    take(j.at("assign"), "neg_iou_threshold", base.assign.neg_iou_threshold);
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    take(s, "num_negatives", base.sampler.num_negatives);
    take(s, "num_bins", base.sampler.num_bins);
    take(s, "bin_lo", base.sampler.bin_lo);
    take(s, "bin_hi", base.sampler.bin_hi);
    take(s, "num_positives", base.sampler.num_positives);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    take(l, "alpha", base.alpha);
    take(l, "gamma", base.gamma);
    take(l, "lambda", base.lambda);
    if (l.contains("curves")) {
      base.curve_params.clear();
      for (const auto& p : l.at("curves")) {
        base.curve_params.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      }
    }
  }
  if (j.contains("pyramid")) {
    const json& p = j.at("pyramid");
    take(p, "levels", base.pyramid.levels);
    take(p, "base_resolution", base.pyramid.base_resolution);
    take(p, "channels", base.pyramid.channels);
    take(p, "refine", base.pyramid.refine);
    take(p, "embed_channels", base.pyramid.embed_channels);
    if (p.contains("target_level")) base.pyramid.target_level = p.at("target_level").get<std::size_t>();
  }
  if (j.contains("toy_fit")) {
    const json& t = j.at("toy_fit");
    take(t, "samples", base.toy.samples);
    take(t, "steps", base.toy.steps);
    take(t, "learning_rate", base.toy.learning_rate);
    take(t, "outlier_fraction", base.toy.outlier_fraction);
    take(t, "outlier_scale", base.toy.outlier_scale);
    take(t, "noise", base.toy.noise);
  }
  return base;
}

// ---------------------------------------------------------------------------
// sample-hist
// ---------------------------------------------------------------------------

int cmd_sample_hist(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  std::optional<Scenario> fixed;
  if (cfg.scenario_path) fixed = parse_scenario_json(read_file(*cfg.scenario_path));

  const IoUBinning display{cfg.hist_bins, cfg.sampler.bin_lo, cfg.sampler.bin_hi};
  const std::size_t B = display.num_bins;
  // Per-bin pool/random/balanced counts, then scalar tallies.
  enum Tally { kPoolNeg, kPoolHard, kRandSel, kRandHard, kBalSel, kBalHard, kPos, kPosSel, kTallies };
  std::vector<std::uint64_t> totals(3 * B + kTallies, 0);

  const auto n = static_cast<std::int64_t>(cfg.trials);
#pragma omp parallel
  {
    std::vector<std::uint64_t> local(totals.size(), 0);
#pragma omp for schedule(static)
    for (std::int64_t t = 0; t < n; ++t) {
      const std::uint64_t trial_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(t));
      const Scenario s = fixed ? *fixed : gen_scenario(cfg.scenario, derive_seed(trial_seed, 0));
      const std::vector<Candidate> pool = assign(s.candidates, s.ground_truths, cfg.assign);

      SamplerConfig sc = cfg.sampler;
      sc.seed = derive_seed(trial_seed, 2);
      const SampleReport rnd =
          sample_random(pool, cfg.sampler.num_negatives, derive_seed(trial_seed, 1), display);
      const SampleReport bal = sample_iou_balanced(pool, sc);
      const SampleReport pos =
          sample_positive_balanced(pool, cfg.sampler.num_positives, derive_seed(trial_seed, 3));

      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].label == Label::negative) {
          ++local[2 * B + display.bin_of(pool[i].iou)];
          ++local[3 * B + kPoolNeg];
          if (pool[i].iou >= kHardNegativeIoU) ++local[3 * B + kPoolHard];
        } else if (pool[i].label == Label::positive) {
          ++local[3 * B + kPos];
        }
      }
      for (auto i : rnd.selected) {
        ++local[display.bin_of(pool[i].iou)];
        ++local[3 * B + kRandSel];
        if (pool[i].iou >= kHardNegativeIoU) ++local[3 * B + kRandHard];
      }
      for (auto i : bal.selected) {
        ++local[B + display.bin_of(pool[i].iou)];
        ++local[3 * B + kBalSel];
        if (pool[i].iou >= kHardNegativeIoU) ++local[3 * B + kBalHard];
      }
      local[3 * B + kPosSel] += pos.selected.size();
    }
#pragma omp critical
    for (std::size_t i = 0; i < totals.size(); ++i) totals[i] += local[i];
  }

  std::string csv = "iou_bin_lo,iou_bin_hi,random_count,balanced_count,pool_count\n";
  for (std::size_t k = 0; k < B; ++k) {
    csv += num(display.lower_edge(k), "%.4f") + "," + num(display.upper_edge(k), "%.4f") + "," +
           std::to_string(totals[k]) + "," + std::to_string(totals[B + k]) + "," +
           std::to_string(totals[2 * B + k]) + "\n";
  }
  auto ratio = [](std::uint64_t a, std::uint64_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  const std::uint64_t* tally = totals.data() + 3 * B;
  json summary;
  summary["trials"] = cfg.trials;
  summary["seed"] = cfg.seed;
  summary["num_bins"] = cfg.sampler.num_bins;
  summary["num_negatives"] = cfg.sampler.num_negatives;
  summary["hard_iou_threshold"] = kHardNegativeIoU;
  summary["pool_negatives"] = tally[kPoolNeg];
  summary["pool_positives"] = tally[kPos];
  summary["pool_hard_fraction"] = ratio(tally[kPoolHard], tally[kPoolNeg]);
  summary["random_selected"] = tally[kRandSel];
  summary["random_hard_fraction"] = ratio(tally[kRandHard], tally[kRandSel]);
  summary["balanced_selected"] = tally[kBalSel];
  summary["balanced_hard_fraction"] = ratio(tally[kBalHard], tally[kBalSel]);
  summary["positives_selected"] = tally[kPosSel];
  const std::string summary_text = summary.dump(2) + "\n";

  write_output(cfg.out, csv);
  if (!cfg.out.empty()) {
    std::filesystem::path summary_path = std::filesystem::path(cfg.out).replace_extension(".json");
    if (summary_path == std::filesystem::path(cfg.out)) summary_path += ".summary.json";
    write_output(summary_path.string(), summary_text);
  }
  log << summary_text;
  return 0;
}

// ---------------------------------------------------------------------------
// loss-curves
// ---------------------------------------------------------------------------

namespace {

std::string curve_csv(const BalancedL1Params& p) {
  std::string csv = "x,smooth_l1_loss,smooth_l1_grad,balanced_l1_loss,balanced_l1_grad\n";
  for (int i = 0; i <= 200; ++i) {
    const double x = i / 100.0;
    csv += num(x, "%.2f") + "," + num(smooth_l1(x), "%.12f") + "," +
           num(smooth_l1_grad(x), "%.12f") + "," + num(balanced_l1(x, p), "%.12f") + "," +
           num(balanced_l1_grad(x, p), "%.12f") + "\n";
  }
  return csv;
}

std::string suffixed_path(const std::string& out, double alpha, double gamma) {
  std::filesystem::path p(out);
  const std::string ext = p.extension().string();
  p.replace_extension();
  return p.string() + "_a" + num(alpha, "%g") + "_g" + num(gamma, "%g") + ext;
}

}  // namespace

int cmd_loss_curves(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  std::vector<std::pair<double, double>> pairs = cfg.curve_params;
  if (pairs.empty()) pairs.emplace_back(cfg.alpha, cfg.gamma);
  for (const auto& [a, g] : pairs) {
    const BalancedL1Params p(a, g);
    const std::string path =
        pairs.size() == 1 || cfg.out.empty() ? cfg.out : suffixed_path(cfg.out, a, g);
    write_output(path, curve_csv(p));
    log << "alpha=" << num(a) << " gamma=" << num(g) << " b=" << num(p.b())
        << " C=" << num(p.c_const()) << (path.empty() ? "" : " -> " + path) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double weighted_sum(const Tensor& t, const Tensor& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * w[i];
  return acc;
}

// Skip offsets within two steps of the |x| = 0 and |x| = 1 kinks.
bool near_kink(double x) {
  const double a = std::abs(x);
  return a < 2 * kFiniteDiffStep || std::abs(a - 1.0) < 2 * kFiniteDiffStep;
}

GradCheckEntry entry(std::string name, const GradCheckResult& r, double tol) {
  return {std::move(name), r.max_rel_error, tol, r.checked};
}

GradCheckEntry merge(std::string name, std::initializer_list<GradCheckResult> parts, double tol) {
  GradCheckEntry e{std::move(name), 0.0, tol, 0};
  for (const auto& r : parts) {
    e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
    e.checked += r.checked;
  }
  return e;
}

// Checks d/dx of sum(w * op(x)) where op's reverse rule is `backward`.
GradCheckResult check_unary(const std::function<Tensor(const Tensor&)>& op,
                            const std::function<Tensor(const Tensor&, const Tensor&)>& backward,
                            const Tensor& x, Rng& rng) {
  const Tensor probe_out = op(x);
  const Tensor w = random_tensor(rng, probe_out.shape());
  const Tensor analytic = backward(x, w);
  return finite_diff_check([&](const Tensor& t) { return weighted_sum(op(t), w); }, x,
                           analytic.data(), kFiniteDiffStep);
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_losses(std::uint64_t seed, const RunConfig& cfg) {
  const BalancedL1Params params(cfg.alpha, cfg.gamma);
  Rng rng(seed);
  constexpr std::size_t kSamples = 100;
  std::vector<GradCheckEntry> out;

  auto elementwise = [&](const char* name, double (*loss)(double, const BalancedL1Params&),
                         double (*grad)(double, const BalancedL1Params&)) {
    const Tensor x = random_tensor(rng, {kSamples}, -3.0, 3.0);
    Tensor analytic(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) analytic[i] = grad(x[i], params);
    auto f = [&](const Tensor& t) {
      double acc = 0.0;
      for (double v : t.data()) acc += loss(v, params);
      return acc;
    };
    out.push_back(entry(name,
                        finite_diff_check(f, x, analytic.data(), kFiniteDiffStep,
                                          [&](std::size_t i) { return near_kink(x[i]); }),
                        kOpTolerance));
  };
  elementwise("balanced_l1", balanced_l1, balanced_l1_grad);
  elementwise(
      "smooth_l1", [](double x, const BalancedL1Params&) { return smooth_l1(x); },
      [](double x, const BalancedL1Params&) { return smooth_l1_grad(x); });

  {
    const Tensor pred = random_tensor(rng, {kSamples, 4}, -2.0, 2.0);
    const Tensor target = random_tensor(rng, {kSamples, 4}, -2.0, 2.0);
    auto row = [](const Tensor& t, std::size_t s) {
      return Vec4{t[4 * s], t[4 * s + 1], t[4 * s + 2], t[4 * s + 3]};
    };
    Tensor analytic(pred.shape());
    for (std::size_t s = 0; s < kSamples; ++s) {
      const auto g = localization_loss(row(pred, s), row(target, s), params).grad;
      for (std::size_t i = 0; i < 4; ++i) analytic[4 * s + i] = g[i];
    }
    auto f = [&](const Tensor& t) {
      double acc = 0.0;
      for (std::size_t s = 0; s < kSamples; ++s) {
        acc += localization_loss(row(t, s), row(target, s), params).value;
      }
      return acc;
    };
    out.push_back(entry("localization_loss",
                        finite_diff_check(f, pred, analytic.data(), kFiniteDiffStep,
                                          [&](std::size_t i) { return near_kink(pred[i] - target[i]); }),
                        kOpTolerance));
  }

  {
    constexpr std::size_t kClasses = 4;
    std::vector<DetectionTarget> targets(kSamples);
    for (auto& d : targets) {
      d.label = static_cast<std::size_t>(rng.below(kClasses));
      for (std::size_t i = 0; i < 4; ++i) {
        d.target[i] = rng.uniform(-2.0, 2.0);
        d.prediction[i] = rng.uniform(-2.0, 2.0);
      }
      const Tensor logits = random_tensor(rng, {kClasses}, -1.5, 1.5);
      const Tensor probs = softmax_rows(logits);
      d.class_scores.assign(probs.data().begin(), probs.data().end());
    }
    Tensor preds({kSamples, 4}), scores({kSamples, kClasses});
    Tensor grad_preds(preds.shape()), grad_scores(scores.shape());
    for (std::size_t s = 0; s < kSamples; ++s) {
      const MultiTaskLoss l = multi_task_loss(targets[s], cfg.lambda, params);
      for (std::size_t i = 0; i < 4; ++i) {
        preds[4 * s + i] = targets[s].prediction[i];
        grad_preds[4 * s + i] = l.grad_prediction[i];
      }
      for (std::size_t c = 0; c < kClasses; ++c) {
        scores[kClasses * s + c] = targets[s].class_scores[c];
        grad_scores[kClasses * s + c] = l.grad_scores[c];
      }
    }
    auto total = [&](const Tensor* p, const Tensor* sc) {
      double acc = 0.0;
      for (std::size_t s = 0; s < kSamples; ++s) {
        DetectionTarget d = targets[s];
        if (p) for (std::size_t i = 0; i < 4; ++i) d.prediction[i] = (*p)[4 * s + i];
        if (sc) for (std::size_t c = 0; c < kClasses; ++c) d.class_scores[c] = (*sc)[kClasses * s + c];
        acc += multi_task_loss(d, cfg.lambda, params).value;
      }
      return acc;
    };
    const auto r_pred = finite_diff_check(
        [&](const Tensor& t) { return total(&t, nullptr); }, preds, grad_preds.data(),
        kFiniteDiffStep, [&](std::size_t i) {
          const std::size_t s = i / 4;
          return near_kink(preds[i] - targets[s].target[i % 4]);
        });
    const auto r_scores = finite_diff_check([&](const Tensor& t) { return total(nullptr, &t); },
                                            scores, grad_scores.data(), kFiniteDiffStep);
    out.push_back(merge("multi_task_loss", {r_pred, r_scores}, kOpTolerance));
  }
  return out;
}

std::vector<GradCheckEntry> gradcheck_tensor_ops(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckEntry> out;

  {
    const Tensor x = random_tensor(rng, {3, 5});
    const Tensor ones(x.shape(), 1.0);
    auto f = [](const Tensor& t) {
      double acc = 0.0;
      for (double v : t.data()) acc += v;
      return acc;
    };
    out.push_back(entry("linear_sum", finite_diff_check(f, x, ones.data(), kFiniteDiffStep),
                        kOpTolerance));
  }

  const Tensor small = random_tensor(rng, {2, 3, 3});
  out.push_back(entry(
      "resize_nearest",
      check_unary([](const Tensor& t) { return resize_nearest(t, {5, 7}); },
                  [](const Tensor& t, const Tensor& g) { return resize_nearest_backward(t.shape(), g); },
                  small, rng),
      kOpTolerance));

  const Tensor fine = random_tensor(rng, {2, 4, 4});
  out.push_back(entry(
      "maxpool_to",
      check_unary([](const Tensor& t) { return maxpool_to(t, {2, 2}); },
                  [](const Tensor& t, const Tensor& g) { return maxpool_to_backward(t, g); }, fine, rng),
      kOpTolerance));

  {
    std::vector<Tensor> stack;
    for (int i = 0; i < 3; ++i) stack.push_back(random_tensor(rng, {2, 2, 2}));
    const Tensor w = random_tensor(rng, {2, 2, 2});
    const std::vector<Tensor> grads = mean_stack_backward(w, stack.size());
    GradCheckEntry e{"mean_stack", 0.0, kOpTolerance, 0};
    for (std::size_t k = 0; k < stack.size(); ++k) {
      auto f = [&](const Tensor& t) {
        std::vector<Tensor> probe = stack;
        probe[k] = t;
        return weighted_sum(mean_stack(probe), w);
      };
      const auto r = finite_diff_check(f, stack[k], grads[k].data(), kFiniteDiffStep);
      e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
      e.checked += r.checked;
    }
    out.push_back(e);
  }

  {
    const Tensor a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 3});
    const Tensor w = random_tensor(rng, {2, 3});
    const auto ra = finite_diff_check([&](const Tensor& t) { return weighted_sum(add(t, b), w); },
                                      a, w.data(), kFiniteDiffStep);
    const auto rb = finite_diff_check([&](const Tensor& t) { return weighted_sum(add(a, t), w); },
                                      b, w.data(), kFiniteDiffStep);
    out.push_back(merge("add", {ra, rb}, kOpTolerance));
  }

  {
    const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2});
    const Tensor w = random_tensor(rng, {3, 2});
    const auto [da, db] = matmul_backward(a, b, w);
    const auto ra = finite_diff_check([&](const Tensor& t) { return weighted_sum(matmul(t, b), w); },
                                      a, da.data(), kFiniteDiffStep);
    const auto rb = finite_diff_check([&](const Tensor& t) { return weighted_sum(matmul(a, t), w); },
                                      b, db.data(), kFiniteDiffStep);
    out.push_back(merge("matmul", {ra, rb}, kOpTolerance));
  }

  out.push_back(entry(
      "softmax_rows",
      check_unary([](const Tensor& t) { return softmax_rows(t); },
                  [](const Tensor& t, const Tensor& g) { return softmax_rows_backward(softmax_rows(t), g); },
                  random_tensor(rng, {3, 5}, -2.0, 2.0), rng),
      kOpTolerance));

  {
    const Tensor weight = random_tensor(rng, {3, 2}), x = random_tensor(rng, {2, 3, 3});
    const Tensor w = random_tensor(rng, {3, 3, 3});
    const auto [dweight, dx] = conv1x1_backward(weight, x, w);
    const auto rw = finite_diff_check(
        [&](const Tensor& t) { return weighted_sum(conv1x1(t, x), w); }, weight, dweight.data(),
        kFiniteDiffStep);
    const auto rx = finite_diff_check(
        [&](const Tensor& t) { return weighted_sum(conv1x1(weight, t), w); }, x, dx.data(),
        kFiniteDiffStep);
    out.push_back(merge("conv1x1", {rw, rx}, kOpTolerance));
  }

  {
    const Tensor x = random_tensor(rng, {4, 3, 3});
    const NonLocalWeights nl = NonLocalWeights::random(4, 2, rng.next());
    const Tensor w = random_tensor(rng, x.shape());
    const NonLocalGrads g = refine_nonlocal_backward(x, nl, w);
    auto with = [&](Tensor NonLocalWeights::*slot) {
      return [&, slot](const Tensor& t) {
        NonLocalWeights probe = nl;
        probe.*slot = t;
        return weighted_sum(refine_nonlocal(x, probe), w);
      };
    };
    out.push_back(merge(
        "refine_nonlocal",
        {finite_diff_check([&](const Tensor& t) { return weighted_sum(refine_nonlocal(t, nl), w); },
                           x, g.input.data(), kFiniteDiffStep),
         finite_diff_check(with(&NonLocalWeights::theta), nl.theta, g.theta.data(), kFiniteDiffStep),
         finite_diff_check(with(&NonLocalWeights::phi), nl.phi, g.phi.data(), kFiniteDiffStep),
         finite_diff_check(with(&NonLocalWeights::g), nl.g, g.g.data(), kFiniteDiffStep),
         finite_diff_check(with(&NonLocalWeights::w_z), nl.w_z, g.w_z.data(), kFiniteDiffStep)},
        kOpTolerance));
  }
  return out;
}

GradCheckEntry gradcheck_pyramid(std::uint64_t seed, std::size_t levels, std::size_t base,
                                 std::size_t channels, bool refine) {
  Rng rng(seed);
  const PyramidLevels input = make_synthetic_pyramid(levels, base, channels, rng.next());
  const NonLocalWeights weights = NonLocalWeights::random(channels, 0, rng.next());
  const std::size_t target = default_target_level(levels);
  std::vector<Tensor> probes;
  for (const auto& l : input.levels) probes.push_back(random_tensor(rng, l.shape()));

  auto functional = [&](const PyramidLevels& lv, const NonLocalWeights& w) {
    const PyramidLevels out = balanced_feature_pyramid(lv, refine ? &w : nullptr, target);
    double acc = 0.0;
    for (std::size_t l = 0; l < out.size(); ++l) acc += weighted_sum(out.levels[l], probes[l]);
    return acc;
  };

  PyramidLevels grads_in = input;
  NonLocalWeights grads_w = weights;
  balanced_feature_pyramid_backward(grads_in, refine ? &grads_w : nullptr, target, probes);

  GradCheckEntry e{"balanced_feature_pyramid", 0.0, kPyramidTolerance, 0};
  auto fold = [&](const GradCheckResult& r) {
    e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
    e.checked += r.checked;
  };
  for (std::size_t l = 0; l < input.size(); ++l) {
    fold(finite_diff_check(
        [&](const Tensor& t) {
          PyramidLevels probe = input;
          probe.levels[l] = t;
          return functional(probe, weights);
        },
        input.levels[l], grads_in.levels[l].grad(), kFiniteDiffStep));
  }
  if (refine) {
    for (auto slot : {&NonLocalWeights::theta, &NonLocalWeights::phi, &NonLocalWeights::g,
                      &NonLocalWeights::w_z}) {
      fold(finite_diff_check(
          [&](const Tensor& t) {
            NonLocalWeights probe = weights;
            probe.*slot = t;
            return functional(input, probe);
          },
          weights.*slot, (grads_w.*slot).grad(), kFiniteDiffStep));
    }
  }
  return e;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  std::vector<GradCheckEntry> entries = gradcheck_losses(derive_seed(cfg.seed, 0), cfg);
  for (auto& e : gradcheck_tensor_ops(derive_seed(cfg.seed, 1))) entries.push_back(std::move(e));
  entries.push_back(gradcheck_pyramid(derive_seed(cfg.seed, 2), 3, 8, 4, true));
  entries.push_back(gradcheck_pyramid(derive_seed(cfg.seed, 3), 3, 8, 4, false));
  entries.back().name = "balanced_feature_pyramid_nonparametric";

  std::string csv = "op,max_rel_error,tolerance,checked,status\n";
  bool ok = true;
  for (const auto& e : entries) {
    const char* status = e.passed() ? "pass" : "FAIL";
    ok = ok && e.passed();
    csv += e.name + "," + num(e.max_rel_error, "%.6e") + "," + num(e.tolerance, "%.0e") + "," +
           std::to_string(e.checked) + "," + status + "\n";
    log << (e.passed() ? "[pass] " : "[FAIL] ") << e.name << " max_rel_err=" << num(e.max_rel_error, "%.3e")
        << " tol=" << num(e.tolerance, "%.0e") << " checked=" << e.checked << "\n";
  }
  write_output(cfg.out, csv);
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// pyramid-stats
// ---------------------------------------------------------------------------

int cmd_pyramid_stats(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const PyramidRunConfig& pc = cfg.pyramid;
  const PyramidLevels input =
      make_synthetic_pyramid(pc.levels, pc.base_resolution, pc.channels, derive_seed(cfg.seed, 0));
  const std::size_t target = pc.target_level.value_or(default_target_level(pc.levels));
  std::optional<NonLocalWeights> weights;
  if (pc.refine) weights = NonLocalWeights::random(pc.channels, pc.embed_channels, derive_seed(cfg.seed, 1));
  const PyramidLevels output =
      balanced_feature_pyramid(input, weights ? &*weights : nullptr, target);

  std::string csv = "level,channels,height,width,mean_before,variance_before,mean_after,variance_after\n";
  for (std::size_t l = 0; l < input.size(); ++l) {
    const LevelStats before = level_stats(input.levels[l]);
    const LevelStats after = level_stats(output.levels[l]);
    const Tensor& t = input.levels[l];
    csv += std::to_string(l) + "," + std::to_string(t.extent(0)) + "," + std::to_string(t.extent(1)) +
           "," + std::to_string(t.extent(2)) + "," + num(before.mean) + "," + num(before.variance) +
           "," + num(after.mean) + "," + num(after.variance) + "\n";
  }
  write_output(cfg.out, csv);
  const LevelStats integrated = level_stats(*output.integrated);
  log << "levels=" << pc.levels << " target=" << target << " refine=" << (pc.refine ? "on" : "off")
      << " integrated_mean=" << num(integrated.mean) << " integrated_variance="
      << num(integrated.variance) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// toy-fit
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kFeatures = 3;  // two random features and a bias

struct ToyPool {
  std::vector<std::array<double, kFeatures>> features;
  std::vector<Vec4> clean;    // noiseless targets
  std::vector<Vec4> targets;  // what the model is fitted to
  std::vector<bool> outlier;
};

ToyPool make_toy_pool(const ToyFitConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  double truth[4][kFeatures];
  for (auto& row : truth)
    for (auto& v : row) v = rng.uniform(-1.0, 1.0);
  ToyPool pool;
  for (std::size_t s = 0; s < cfg.samples; ++s) {
    const std::array<double, kFeatures> f{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 1.0};
    Vec4 clean{}, target{};
    const bool is_outlier = rng.uniform() < cfg.outlier_fraction;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t k = 0; k < kFeatures; ++k) clean[i] += truth[i][k] * f[k];
      if (is_outlier) {
        const double mag = rng.uniform(cfg.outlier_scale, 2.0 * cfg.outlier_scale);
        target[i] = clean[i] + (rng.uniform() < 0.5 ? -mag : mag);
      } else {
        target[i] = clean[i] + cfg.noise * rng.normal();
      }
    }
    pool.features.push_back(f);
    pool.clean.push_back(clean);
    pool.targets.push_back(target);
    pool.outlier.push_back(is_outlier);
  }
  return pool;
}

using GradFn = std::function<double(double)>;

// Plain gradient descent on the mean loss of a linear 4x3 regressor.
// Returns the mean absolute inlier error (against clean targets) after each step.
std::vector<double> fit(const ToyPool& pool, const ToyFitConfig& cfg, const GradFn& loss,
                        const GradFn& grad) {
  double w[4][kFeatures] = {};
  std::vector<double> history;
  const double n = static_cast<double>(pool.features.size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double dw[4][kFeatures] = {};
    double total_loss = 0.0;
    for (std::size_t s = 0; s < pool.features.size(); ++s) {
      for (std::size_t i = 0; i < 4; ++i) {
        double pred = 0.0;
        for (std::size_t k = 0; k < kFeatures; ++k) pred += w[i][k] * pool.features[s][k];
        const double d = pred - pool.targets[s][i];
        total_loss += loss(d);
        const double g = grad(d) / n;
        for (std::size_t k = 0; k < kFeatures; ++k) dw[i][k] += g * pool.features[s][k];
      }
    }
    if (!std::isfinite(total_loss)) {
      throw NumericError("toy-fit diverged at step " + std::to_string(step));
    }
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < kFeatures; ++k) w[i][k] -= cfg.learning_rate * dw[i][k];

    double err = 0.0;
    std::size_t inliers = 0;
    for (std::size_t s = 0; s < pool.features.size(); ++s) {
      if (pool.outlier[s]) continue;
      ++inliers;
      for (std::size_t i = 0; i < 4; ++i) {
        double pred = 0.0;
        for (std::size_t k = 0; k < kFeatures; ++k) pred += w[i][k] * pool.features[s][k];
        err += std::abs(pred - pool.clean[s][i]) / 4.0;
      }
    }
    if (!std::isfinite(err)) throw NumericError("toy-fit diverged at step " + std::to_string(step));
    history.push_back(inliers ? err / static_cast<double>(inliers) : 0.0);
  }
  return history;
}

}  // namespace

int cmd_toy_fit(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const ToyPool pool = make_toy_pool(cfg.toy, derive_seed(cfg.seed, 0));
  const BalancedL1Params params(cfg.alpha, cfg.gamma);
  std::vector<double> smooth, balanced;
  try {
    smooth = fit(pool, cfg.toy, smooth_l1, smooth_l1_grad);
    balanced = fit(
        pool, cfg.toy, [&](double x) { return balanced_l1(x, params); },
        [&](double x) { return balanced_l1_grad(x, params); });
  } catch (const NumericError& e) {
    log << "toy-fit: " << e.what() << "\n";
    return 1;
  }
  std::string csv = "step,smooth_l1_inlier_error,balanced_l1_inlier_error\n";
  for (std::size_t s = 0; s < smooth.size(); ++s) {
    csv += std::to_string(s + 1) + "," + num(smooth[s], "%.12e") + "," + num(balanced[s], "%.12e") + "\n";
  }
  write_output(cfg.out, csv);
  log << "final mean inlier error: smooth_l1=" << num(smooth.back(), "%.6e")
      << " balanced_l1=" << num(balanced.back(), "%.6e") << "\n";
  return 0;
}

int run_command(const RunConfig& cfg, std::ostream& log) {
  if (cfg.subcommand == "sample-hist") return cmd_sample_hist(cfg, log);
  if (cfg.subcommand == "loss-curves") return cmd_loss_curves(cfg, log);
  if (cfg.subcommand == "gradcheck") return cmd_gradcheck(cfg, log);
  if (cfg.subcommand == "pyramid-stats") return cmd_pyramid_stats(cfg, log);
  if (cfg.subcommand == "toy-fit") return cmd_toy_fit(cfg, log);
  throw std::invalid_argument("unknown subcommand '" + cfg.subcommand + "'");
}

}  // namespace libra
