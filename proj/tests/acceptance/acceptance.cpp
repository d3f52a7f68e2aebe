// Acceptance suite: one PASS/FAIL line per criterion, with the measured
// quantity, its bound and the wall time. Exit status is non-zero if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "metrics_oracle.hpp"
#include "op_cases.hpp"

namespace {

using namespace genisp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;
  std::function<Outcome()> run;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("genisp_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::size_t> sample(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(n, k));
  return all;
}

// ------------------------------------------------------------ gradients

Outcome gradient_integrity() {
  constexpr int kInstances = 20;
  constexpr double kTol = 1e-4;
  double worst = 0.0;
  std::string worst_op;
  int instances = 0;
  for (const auto& op : testing::op_cases()) {
    std::mt19937_64 rng(std::hash<std::string>{}(op.name));
    for (int i = 0; i < kInstances; ++i) {
      const auto inst = op.make(rng);
      const double e = grad_check(inst.fn, inst.point);
      ++instances;
      if (e > worst) {
        worst = e;
        worst_op = op.name;
      }
    }
  }

  // Full composite: colour modules, enhancement net, toy-detector loss and
  // the weighted gray-world term. Network-level checks step back from ReLU
  // and max-pool kinks when the first step straddles one.
  const ToyDetector<double> det;
  const LossWeights lw{0.5};
  std::size_t refined = 0, checked = 0;
  double composite_worst = 0.0;
  for (int i = 0; i < kInstances; ++i) {
    std::mt19937_64 rng(1000 + i);
    auto model = testing::perturbed_model(2000 + i);
    auto params = model.parameters();
    const auto image = testing::random_tensor({3, 16, 16}, rng, 0.05, 1.0);
    const std::vector<Box> gt{{1.0 + (rng() % 4), 2.0, 12.0, 9.0 + (rng() % 5), 1}};
    auto loss = [&](const Var<double>& x, const std::vector<Var<double>>& bound) {
      const auto out = GenIspModel<double>::forward(x, bound, {});
      const auto l = det.loss(out.enhanced, gt);
      return add(add(l.cls, l.reg), scale(gray_world_loss(out.enhanced), lw.lambda_wb));
    };
    GradCheckOptions opt;
    opt.refine = true;

    const auto img_comps = sample(image.numel(), 4, rng);
    opt.components = img_comps;
    auto by_image = [&](const Var<double>& x) {
      return loss(x, bind_params<double>(params, nullptr));
    };
    const auto r1 = grad_check_detailed(by_image, image, opt);

    const std::size_t p = static_cast<std::size_t>(i * 7) % params.size();
    const auto par_comps = sample(params[p].second->numel(), 4, rng);
    opt.components = par_comps;
    auto by_param = [&](const Var<double>& w) {
      auto bound = bind_params<double>(params, nullptr);
      bound[p] = w;
      return loss(Var<double>::constant(image), bound);
    };
    const auto r2 = grad_check_detailed(by_param, *params[p].second, opt);

    for (const auto* r : {&r1, &r2}) {
      composite_worst = std::max(composite_worst, r->max_rel_error);
      refined += r->refined;
      checked += r->checked;
    }
  }
  const bool pass = worst <= kTol && composite_worst <= kTol;
  return {pass, std::to_string(testing::op_cases().size()) + " ops x " + std::to_string(kInstances) +
                    " instances, worst " + fmt(worst) + " (" + worst_op + "); composite " +
                    std::to_string(kInstances) + " instances, worst " + fmt(composite_worst) + ", " +
                    std::to_string(refined) + "/" + std::to_string(checked) +
                    " components refined; bound 1e-4"};
}

// ------------------------------------------------------- parameter budget

Outcome parameter_budget() {
  GenIspModel<float> model(0);
  const std::size_t n = model.num_parameters();
  std::ostringstream out, err;
  const int code = cli::run({"inspect", "--model"}, out, err);
  const bool cli_agrees = code == 0 && out.str().find("total       " + std::to_string(n)) != std::string::npos;
  const bool pass = n >= 100000 && n <= 150000 && cli_agrees;
  return {pass, std::to_string(n) + " parameters (bound [100000, 150000]); inspect --model " +
                    (cli_agrees ? "agrees" : "disagrees")};
}

// -------------------------------------------------------- end-to-end identity

Outcome end_to_end_identity() {
  // Packing halves each side, so this raw frame maps to exactly 1333x800.
  std::mt19937_64 rng(7);
  auto [frame, boxes] = testing::synthetic_scene(rng, 2666, 1600, {0.5, 1.0, 0.6});
  const auto dir = scratch("identity");
  const auto in = (dir / "frame.graw").string();
  io::write_graw(in, frame);

  const auto t0 = Clock::now();
  std::ostringstream out, err;
  const int code = cli::run({"process", "--out", (dir / "out").string(), in}, out, err);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();

  // Independent reference: normalise, pack RGGB, average greens (identity CST).
  const std::size_t h = 800, w = 1333;
  Tensor<double> ref({3, h, w});
  const double black = 512.0, range = 16383.0 - 512.0;
  auto s = [&](std::size_t y, std::size_t x) {
    return std::clamp((frame.samples[y * frame.width + x] - black) / range, 0.0, 1.0);
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      ref.at(0, y, x) = s(2 * y, 2 * x);
      ref.at(1, y, x) = 0.5 * (s(2 * y, 2 * x + 1) + s(2 * y + 1, 2 * x));
      ref.at(2, y, x) = s(2 * y + 1, 2 * x + 1);
    }
  }
  GenIspModel<float> model(0);
  const auto enhanced = model.run(preprocess<float>(frame));
  double max_diff = enhanced.shape() == ref.shape() ? 0.0 : 1e9;
  if (max_diff == 0.0) {
    for (std::size_t i = 0; i < ref.numel(); ++i) {
      max_diff = std::max(max_diff, std::abs(static_cast<double>(enhanced[i]) - ref[i]));
    }
  }
  const bool file_ok = code == 0 && io::read_file((dir / "out" / "frame.ppm").string()) ==
                                        io::encode_ppm(enhanced);
  fs::remove_all(dir);
  const bool pass = code == 0 && max_diff <= 1e-6 && file_ok && secs < 10.0;
  return {pass, "max |diff| " + fmt(max_diff) + " (bound 1e-6), exported PPM " +
                    (file_ok ? "matches library output" : "differs from library output") + ", process on 2666x1600 raw (1333x800) took " +
                    fmt(secs) + " s (bound 10 s)"};
}

// ------------------------------------------------------ gray-world training

double mean_imbalance(GenIspModel<float>& model, const std::vector<Tensor<float>>& images) {
  double total = 0.0;
  for (const auto& img : images) total += gray_world_loss(model.run(img));
  return total / static_cast<double>(images.size());
}

Outcome gray_world_convergence() {
  std::mt19937_64 rng(11);
  std::vector<TrainSample> data;
  std::vector<Tensor<float>> images;
  for (int i = 0; i < 16; ++i) {
    auto [frame, boxes] = testing::synthetic_scene(rng, 128, 96, testing::jittered_cast(rng));
    images.push_back(preprocess<float>(frame));
    data.push_back({std::move(frame), {}});
  }
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.epochs = 1000;
  cfg.max_steps = 200;
  cfg.loss.lambda_wb = 1.0;
  cfg.grad_clip_norm = 0.0;
  cfg.seed = 5;
  GenIspModel<float> model(5);
  auto brightness = [&] {
    double sum = 0.0, n = 0.0;
    for (const auto& img : images) {
      const auto out = model.run(img);
      for (float v : out.data()) sum += v;
      n += static_cast<double>(out.numel());
    }
    return sum / n;
  };
  const double before = mean_imbalance(model, images);
  const double bright_before = brightness();
  const auto result = train(model, data, NullGuidance<float>{}, cfg);
  const double after = mean_imbalance(model, images);
  const double bright_after = brightness();
  const double reduction = 1.0 - after / before;
  // Imbalance relative to overall brightness, so uniform darkening is visible.
  const double rel_reduction = 1.0 - (after / bright_after) / (before / bright_before);
  const bool pass = result.steps.size() == 200 && reduction >= 0.8;
  return {pass, "imbalance " + fmt(before) + " -> " + fmt(after) + " after " +
                    std::to_string(result.steps.size()) + " steps, reduction " + fmt(100 * reduction) +
                    "% (bound 80%); brightness " + fmt(bright_before) + " -> " + fmt(bright_after) +
                    ", brightness-relative reduction " + fmt(100 * rel_reduction) + "%"};
}

// ------------------------------------------------------- guided training

std::vector<TrainSample> guided_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < n; ++i) {
    auto [frame, boxes] = testing::synthetic_scene(rng, 256, 192, testing::jittered_cast(rng), 3);
    data.push_back({std::move(frame), std::move(boxes)});
  }
  return data;
}

Outcome guided_training_smoke() {
  const auto data = guided_dataset(8, 21);
  const ToyDetector<float> det;
  const std::vector<Tensor<float>> frozen = det.weights();
  TrainConfig cfg;  // recipe defaults: 15 epochs, batch 8, stepped lr
  cfg.grad_clip_norm = 0.0;
  cfg.seed = 21;
  GenIspModel<float> model(21);
  const auto result = train(model, data, det, cfg);
  bool same = frozen.size() == det.weights().size();
  for (std::size_t i = 0; same && i < frozen.size(); ++i) {
    same = std::memcmp(frozen[i].data().data(), det.weights()[i].data().data(),
                       frozen[i].numel() * sizeof(float)) == 0;
  }
  const double first = result.epochs.front().total, last = result.epochs.back().total;
  const bool pass = result.epochs.size() == 15 && last < first && same;
  return {pass, "epoch 1 loss " + fmt(first) + ", epoch " + std::to_string(result.epochs.size()) +
                    " loss " + fmt(last) + "; detector weights " + (same ? "bit-identical" : "CHANGED")};
}

// ---------------------------------------------------------- metrics oracle

Outcome metrics_oracle() {
  std::mt19937_64 rng(31);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto [d, g] = testing::random_detection_problem(rng);
    const auto r = evaluate(d, g);
    const auto o = testing::oracle_evaluate(d, g);
    worst = std::max({worst, std::abs(r.ap50 - o.ap50), std::abs(r.ap75 - o.ap75), std::abs(r.ap - o.ap)});
  }
  AnnotationSet gts;
  gts.images[0] = {{10, 10, 30, 30, 1}};
  DetectionSet perfect, inverted;
  perfect.images[0] = {{{10, 10, 30, 30, 1}, 0.9}};
  inverted.images[0] = {{{60, 60, 80, 80, 1}, 0.9}, {{10, 10, 30, 30, 1}, 0.4}};
  const auto rp = evaluate(perfect, gts);
  const auto ri = evaluate(inverted, gts);
  const bool hand = rp.ap50 == 1.0 && rp.ap75 == 1.0 && rp.ap == 1.0 && ri.ap50 == 0.5;
  const bool pass = worst <= 1e-9 && hand;
  return {pass, "500 instances, worst |diff| " + fmt(worst) + " (bound 1e-9); perfect AP " + fmt(rp.ap) +
                    ", rank-inverted AP50 " + fmt(ri.ap50)};
}

// ------------------------------------------------------------- ablations

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return 1e9;
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

Outcome ablation_plumbing() {
  // Briefly trained weights so that every stage is away from the identity.
  auto data = guided_dataset(4, 41);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.loss.lambda_wb = 1.0;
  cfg.grad_clip_norm = 0.0;
  GenIspModel<float> model(41);
  train(model, data, ToyDetector<float>{}, cfg);

  BayerFrame frame = data[0].frame;
  frame.cst = CstMatrix{{0.8f, 0.15f, 0.05f, 0.1f, 0.85f, 0.05f, 0.0f, 0.25f, 0.75f}};
  std::set<std::vector<float>> outputs;
  int runs = 0;
  for (bool cst : {true, false}) {
    for (bool wb : {true, false}) {
      for (bool cc : {true, false}) {
        PreprocessOptions opt;
        opt.use_cst = cst;
        const auto out = model.run(preprocess<float>(frame, opt), {wb, cc});
        outputs.insert(std::vector<float>(out.data().begin(), out.data().end()));
        ++runs;
      }
    }
  }

  const auto x = preprocess<float>(frame);
  const WbGains gains = convwb_forward(x, model.convwb());
  const double gain_shift = std::max({std::abs(gains.w[0] - 1), std::abs(gains.w[1] - 1), std::abs(gains.w[2] - 1)});
  double worst = 0.0;
  // ConvWB off equals unit gains.
  worst = std::max(worst, max_abs_diff(model.run(x, {false, true}),
                                       enhance_forward(apply_cc(x, convcc_forward(x, model.convcc())),
                                                       model.enhance())));
  // ConvCC off equals the identity matrix.
  const auto balanced = apply_wb(x, gains);
  worst = std::max(worst, max_abs_diff(model.run(x, {true, false}),
                                       enhance_forward(apply_cc(balanced, CcMatrix::identity()),
                                                       model.enhance())));
  worst = std::max(worst, max_abs_diff(model.run(x, {false, false}), enhance_forward(x, model.enhance())));
  // CST off equals an identity CST.
  BayerFrame with_identity = frame;
  with_identity.cst = CstMatrix::identity();
  PreprocessOptions no_cst;
  no_cst.use_cst = false;
  worst = std::max(worst, max_abs_diff(preprocess<float>(frame, no_cst), preprocess<float>(with_identity)));

  const bool pass = static_cast<int>(outputs.size()) == runs && gain_shift > 1e-4 && worst <= 1e-6;
  return {pass, std::to_string(outputs.size()) + "/" + std::to_string(runs) +
                    " toggle combinations distinct (ConvWB x ConvCC x CST); trained gains differ from 1 by " +
                    fmt(gain_shift) + "; disabled stage vs identity max |diff| " + fmt(worst) +
                    " (bound 1e-6)"};
}

// ----------------------------------------------------------- round trips

Outcome format_round_trips() {
  std::mt19937_64 rng(51);
  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const BayerFrame f = testing::random_frame(rng);
    const auto bytes = io::encode_graw(f);
    const BayerFrame g = io::decode_graw(bytes);
    if (g == f && io::encode_graw(g) == bytes) ++ok;
  }
  auto pixels = [](const Tensor<float>& img) {
    const auto b = io::encode_ppm(img, 8);
    const std::string header = "P6\n" + std::to_string(img.dim(2)) + " " + std::to_string(img.dim(1)) + "\n255\n";
    const bool header_ok = std::string(b.begin(), b.begin() + static_cast<long>(header.size())) == header;
    std::set<std::uint8_t> values(b.begin() + static_cast<long>(header.size()), b.end());
    return std::make_pair(header_ok, values);
  };
  const auto half = pixels(Tensor<float>({3, 4, 5}, 0.5f));
  const auto one = pixels(Tensor<float>({3, 2, 2}, 1.0f));
  const auto neg = pixels(Tensor<float>({3, 2, 2}, -0.2f));
  const bool ppm = half.first && one.first && neg.first && half.second == std::set<std::uint8_t>{128} &&
                   one.second == std::set<std::uint8_t>{255} && neg.second == std::set<std::uint8_t>{0};
  const bool pass = ok == 1000 && ppm;
  return {pass, std::to_string(ok) + "/1000 GRAW frames bit-exact; PPM 0.5->128, 1.0->255, -0.2->0 " +
                    (ppm ? "reproduced" : "NOT reproduced")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"gradient_integrity", 120, gradient_integrity},
      {"parameter_budget", 60, parameter_budget},
      {"end_to_end_identity", 60, end_to_end_identity},
      {"gray_world_convergence", 300, gray_world_convergence},
      {"guided_training_smoke", 600, guided_training_smoke},
      {"metrics_oracle", 60, metrics_oracle},
      {"ablation_plumbing", 300, ablation_plumbing},
      {"format_round_trips", 60, format_round_trips},
  };
  const std::set<std::string> only(argv + 1, argv + argc);
  for (const auto& name : only) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.name == name; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", name.c_str());
      return 2;
    }
  }
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool in_time = secs < c.time_limit_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("%s  %-24s %7.1f s (limit %.0f s)  %s%s\n", pass ? "PASS" : "FAIL", c.name.c_str(), secs,
                c.time_limit_s, o.detail.c_str(), in_time ? "" : "  [over time]");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
