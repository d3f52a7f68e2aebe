#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "genisp/genisp.hpp"

namespace genisp::cli {
namespace {

namespace fs = std::filesystem;
using Real = float;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flags shared by process and train; set values override the config file.
struct CommonFlags {
  std::string config;
  std::string weights;
  std::string out;
  bool no_convwb = false;
  bool no_convcc = false;
  bool no_cst = false;
  std::optional<double> lambda_wb;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--weights", weights, "weights manifest (.json) to load");
    app->add_option("--out", out, "output directory");
    app->add_flag("--no-convwb", no_convwb, "disable the white-balance stage");
    app->add_flag("--no-convcc", no_convcc, "disable the colour-correction stage");
    app->add_flag("--no-cst", no_cst, "ignore the colour space transform");
    app->add_option("--lambda-wb", lambda_wb, "weight of the gray-world term");
    app->add_option("--seed", seed, "random seed");
  }

  io::RunConfig resolve() const {
    io::RunConfig rc;
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw UsageError("cannot open config '" + config + "'");
      std::stringstream ss;
      ss << in.rdbuf();
      rc = io::parse_run_config_text(ss.str());
    }
    if (!weights.empty()) rc.weights = weights;
    if (!out.empty()) rc.out = out;
    if (no_convwb) rc.train.use_convwb = false;
    if (no_convcc) rc.train.use_convcc = false;
    if (no_cst) rc.train.use_cst = false;
    if (lambda_wb) rc.train.loss.lambda_wb = *lambda_wb;
    if (seed) rc.train.seed = *seed;
    rc.validate();
    return rc;
  }
};

GenIspModel<Real> load_model(const io::RunConfig& rc) {
  GenIspModel<Real> model(rc.train.seed);
  if (!rc.weights.empty()) io::load_weights(model.parameters(), rc.weights);
  return model;
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path.string(),
                 std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void warn_missing_cst(const BayerFrame& f, const std::string& path, bool no_cst,
                      std::ostream& err) {
  if (no_cst && !f.cst) {
    err << "warning: " << path << " has no CST matrix; --no-cst has no effect\n";
  }
}

int cmd_process(const std::vector<std::string>& inputs, const CommonFlags& flags,
                const std::string& detections_path, int bit_depth, std::ostream& out,
                std::ostream& err) {
  io::RunConfig rc = flags.resolve();
  if (!inputs.empty()) rc.inputs = inputs;
  if (!detections_path.empty()) rc.detections = detections_path;
  if (bit_depth) rc.bit_depth = bit_depth;
  rc.validate();
  if (rc.inputs.empty()) throw UsageError("process: no input files");
  ensure_dir(rc.out);

  GenIspModel<Real> model = load_model(rc);
  const ToyDetector<Real> detector;
  DetectionSet dets;
  const PreprocessOptions opt = rc.preprocess_options();
  for (std::size_t i = 0; i < rc.inputs.size(); ++i) {
    const std::string& path = rc.inputs[i];
    const BayerFrame frame = io::read_graw(path);
    warn_missing_cst(frame, path, flags.no_cst, err);
    const Tensor<Real> image = preprocess<Real>(frame, opt);
    const Tensor<Real> enhanced = model.run(image, rc.train.toggles());
    const fs::path dst = fs::path(rc.out) / (fs::path(path).stem().string() + ".ppm");
    io::export_image(enhanced, dst.string(), rc.bit_depth);
    out << path << " -> " << dst.string() << " (" << enhanced.dim(2) << "x" << enhanced.dim(1)
        << ")\n";
    if (!rc.detections.empty()) {
      // Report boxes in the coordinates of the raw frame.
      const double sx = static_cast<double>(frame.width) / static_cast<double>(enhanced.dim(2));
      const double sy = static_cast<double>(frame.height) / static_cast<double>(enhanced.dim(1));
      auto& list = dets.images[static_cast<ImageId>(i)];
      for (Detection d : detector.detect(enhanced)) {
        d.box.x_min *= sx;
        d.box.x_max *= sx;
        d.box.y_min *= sy;
        d.box.y_max *= sy;
        list.push_back(d);
      }
    }
  }
  if (!rc.detections.empty()) {
    write_text(rc.detections, io::to_json(dets).dump(2) + "\n");
    out << "detections -> " << rc.detections << "\n";
  }
  return kOk;
}

int cmd_train(const std::string& annotations, const CommonFlags& flags, std::ostream& out,
              std::ostream& err) {
  io::RunConfig rc = flags.resolve();
  if (!annotations.empty()) rc.annotations = annotations;
  if (rc.annotations.empty()) throw UsageError("train: --annotations is required");
  ensure_dir(rc.out);

  const io::AnnotationFile ann = io::parse_annotations(io::load_json(rc.annotations));
  const fs::path base = fs::path(rc.annotations).parent_path();
  std::vector<TrainSample> dataset;
  for (const auto& im : ann.images) {
    const fs::path p = base / im.file;
    TrainSample s{io::read_graw(p.string()), ann.annotations.images.at(im.id)};
    warn_missing_cst(s.frame, p.string(), flags.no_cst, err);
    dataset.push_back(std::move(s));
  }
  if (dataset.empty()) throw io::AnnotationError("annotation file lists no images");

  GenIspModel<Real> model = load_model(rc);
  typename ToyDetector<Real>::Options dopt;
  dopt.categories = ann.category_ids();
  if (dopt.categories.empty()) dopt.categories = {1};
  const ToyDetector<Real> detector(dopt);
  const TrainResult result = train(model, dataset, detector, rc.train);

  std::string log;
  for (const auto& s : result.steps) {
    const nlohmann::json rec = {{"epoch", s.epoch}, {"step", s.step}, {"total", s.total},
                                {"cls", s.cls},     {"reg", s.reg},   {"wb", s.wb},
                                {"lr", s.lr}};
    log += rec.dump() + "\n";
  }
  write_text(fs::path(rc.out) / "train_log.jsonl", log);
  const fs::path weights = fs::path(rc.out) / "weights.json";
  io::save_weights(model.parameters(), weights.string());
  for (const auto& e : result.epochs) {
    out << "epoch " << e.epoch << "  total " << e.total << "  cls " << e.cls << "  reg " << e.reg
        << "  wb " << e.wb << "  lr " << e.lr << "\n";
  }
  out << "weights -> " << weights.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& detections, const std::string& annotations,
             const std::string& out_path, std::ostream& out) {
  const io::AnnotationFile ann = io::parse_annotations(io::load_json(annotations));
  const DetectionSet dets = io::parse_detections(io::load_json(detections));
  const ApReport report = evaluate(dets, ann.annotations);
  const std::string text = io::to_json(report).dump(2) + "\n";
  if (!out_path.empty()) write_text(out_path, text);
  out << text;
  return kOk;
}

int cmd_inspect_model(std::ostream& out) {
  GenIspModel<Real> model(0);
  std::size_t wb = 0, cc = 0, en = 0;
  for (const auto& [name, t] : model.parameters()) {
    if (name.starts_with("convwb.")) wb += t->numel();
    else if (name.starts_with("convcc.")) cc += t->numel();
    else en += t->numel();
  }
  out << "convwb      " << wb << "\n"
      << "convcc      " << cc << "\n"
      << "enhance     " << en << "\n"
      << "total       " << model.num_parameters() << "\n";
  return kOk;
}

int cmd_inspect_file(const std::string& path, std::ostream& out) {
  const BayerFrame f = io::read_graw(path);
  std::uint16_t lo = 0xffff, hi = 0;
  double sum = 0.0;
  for (std::uint16_t s : f.samples) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
    sum += s;
  }
  out << "file        " << path << "\n"
      << "width       " << f.width << "\n"
      << "height      " << f.height << "\n"
      << "cfa         " << cfa_name(f.cfa) << "\n"
      << "black_level " << f.black_level[0] << "\n"
      << "white_level " << f.white_level << "\n"
      << "cst         " << (f.cst ? "present" : "absent") << "\n";
  if (f.cst) {
    for (int r = 0; r < 3; ++r) {
      out << "           ";
      for (int c = 0; c < 3; ++c) out << " " << std::setw(10) << f.cst->m[r * 3 + c];
      out << "\n";
    }
  }
  out << "min         " << lo << "\n"
      << "max         " << hi << "\n"
      << "mean        " << sum / static_cast<double>(f.samples.size()) << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural ISP for low-light raw images"};
  app.require_subcommand(1);

  auto* process = app.add_subcommand("process", "raw frames to enhanced PPM images");
  CommonFlags pflags;
  pflags.attach(process);
  std::vector<std::string> inputs;
  std::string detections;
  int bit_depth = 0;
  process->add_option("inputs", inputs, "GRAW files");
  process->add_option("--detections", detections, "write toy-detector results to this JSON file");
  process->add_option("--bit-depth", bit_depth, "PPM bit depth (8 or 16)");

  auto* train_cmd = app.add_subcommand("train", "train the ISP under the toy detector");
  CommonFlags tflags;
  tflags.attach(train_cmd);
  std::string train_ann;
  train_cmd->add_option("--annotations", train_ann, "annotation JSON listing GRAW files");

  auto* eval_cmd = app.add_subcommand("eval", "AP report for detections against annotations");
  std::string eval_dets, eval_ann, eval_out;
  eval_cmd->add_option("--detections", eval_dets, "detections JSON")->required();
  eval_cmd->add_option("--annotations", eval_ann, "annotation JSON")->required();
  eval_cmd->add_option("--out", eval_out, "write the report here as well");

  auto* inspect = app.add_subcommand("inspect", "print GRAW metadata or model size");
  std::string inspect_file;
  bool inspect_model = false;
  inspect->add_option("file", inspect_file, "GRAW file");
  inspect->add_flag("--model", inspect_model, "print trainable parameter counts");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    } else {
      err << app.help();
    }
    return kUsage;
  }

  try {
    if (process->parsed()) return cmd_process(inputs, pflags, detections, bit_depth, out, err);
    if (train_cmd->parsed()) return cmd_train(train_ann, tflags, out, err);
    if (eval_cmd->parsed()) return cmd_eval(eval_dets, eval_ann, eval_out, out);
    if (inspect_model) return cmd_inspect_model(out);
    if (inspect_file.empty()) throw UsageError("inspect: give a GRAW file or --model");
    return cmd_inspect_file(inspect_file, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const io::ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace genisp::cli
