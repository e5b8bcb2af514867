// Command-line surface: dataset generation, label derivation, training,
// evaluation and report generation. Exit codes: 0 success, 1 usage error,
// 2 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "semimoe/checkpoint.hpp"
#include "semimoe/config.hpp"
#include "semimoe/data.hpp"
#include "semimoe/evaluation.hpp"
#include "semimoe/image_io.hpp"
#include "semimoe/label_transforms.hpp"
#include "semimoe/oracle.hpp"
#include "semimoe/report.hpp"
#include "semimoe/runtime.hpp"
#include "semimoe/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace semimoe;

namespace {

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%FT%TZ", std::gmtime(&t));
  return buf;
}

int cmd_gen_data(int64_t n, int64_t size, int64_t n_test, uint64_t seed, const std::string& out,
                 bool force) {
  if (n_test < 0) n_test = n / 4;
  const auto pairs = synth_generate(n, size, size, seed);
  write_dataset(out, pairs, n_test, seed, force);
  std::cout << "wrote " << n << " image/mask pairs (" << n - n_test << " train, " << n_test
            << " test) to " << out << "\n";
  return 0;
}

int cmd_derive_labels(const std::string& masks_dir, const std::string& out, bool check) {
  fs::create_directories(out);
  int64_t count = 0;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(masks_dir))
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const Tensor mask = read_mask_png(path.string());
    const Tensor sdf = compute_sdf(mask);
    const Tensor bnd = extract_boundary(mask);
    const std::string stem = path.stem().string();
    write_npy_f32((fs::path(out) / (stem + ".sdf.npy")).string(), sdf);
    write_mask_png((fs::path(out) / (stem + "_bnd.png")).string(), bnd);
    if (check) {
      const Tensor sdf_ref = oracle::sdf_by_definition(mask);
      const Tensor bnd_ref = oracle::boundary_by_definition(mask);
      for (int64_t i = 0; i < mask.numel(); ++i) {
        if (std::fabs(sdf[i] - sdf_ref[i]) > 1e-6)
          throw std::runtime_error("sdf oracle mismatch in " + path.string());
        if (bnd[i] != bnd_ref[i])
          throw std::runtime_error("boundary oracle mismatch in " + path.string());
      }
    }
    ++count;
  }
  std::cout << "derived labels for " << count << " masks" << (check ? " (oracle-checked)" : "")
            << "\n";
  return 0;
}

void write_manifest(const std::string& out_dir, const TrainConfig& cfg, const std::string& data,
                    const std::string& label) {
  json m;
  m["config"] = cfg.to_kv();
  m["config_digest"] = config_digest(cfg);
  m["build"] = SEMIMOE_BUILD_REV;
  m["data"] = data;
  m["label"] = label;
  m["started"] = now_iso8601();
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "manifest.json");
  f << m.dump(2) << "\n";
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::vector<std::string>& ablations,
              const std::map<std::string, std::string>& overrides, const std::string& resume,
              bool quiet) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    auto kv = parse_kv_file(config_path);
    for (const auto& [k, v] : overrides) kv[k] = v;  // flags win over file values
    cfg = TrainConfig::from_kv(kv);
  } else {
    auto kv = TrainConfig{}.to_kv();
    for (const auto& [k, v] : overrides) kv[k] = v;
    cfg = TrainConfig::from_kv(kv);
  }
  std::string label = "full";
  for (const auto& a : ablations) {
    cfg = apply_ablation(cfg, a);
    label = a;
  }
  if (ablations.size() > 1) label = "combo";
  cfg.validate();

  const Dataset ds = load_dataset(data);
  write_manifest(out, cfg, data, label);

  TrainState state = resume.empty() ? init_state(cfg) : load_checkpoint(resume);
  if (!resume.empty()) state.cfg.epochs = cfg.epochs;  // allow extending a run
  const TrainSummary s = train(state, ds, out, !quiet);
  std::cout << "best dice " << s.best_dice << " (epoch " << s.best_epoch << "), final dice "
            << s.final_dice << ", wall " << s.wall_seconds << " s\n";
  return 0;
}

Tensor overlay_image(const Tensor& image, const Tensor& pred, const Tensor& truth) {
  Tensor out = image;
  const Tensor pb = extract_boundary(pred);
  const Tensor tb = extract_boundary(truth);
  const int64_t H = image.size(1), W = image.size(2);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      if (tb.at2(y, x) == 1.0) {  // ground truth contour: green
        out.at3(0, y, x) = 0.1;
        out.at3(1, y, x) = 0.9;
        out.at3(2, y, x) = 0.1;
      }
      if (pb.at2(y, x) == 1.0) {  // prediction contour: red
        out.at3(0, y, x) = 0.9;
        out.at3(1, y, x) = 0.1;
        out.at3(2, y, x) = 0.1;
      }
    }
  return out;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split,
             const std::string& overlays) {
  TrainState state = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(data);
  const auto& samples = split == "train" ? ds.train : ds.test;
  const EvalScores ev = evaluate(state.bundle, state.gates, samples);

  if (!overlays.empty()) {
    fs::create_directories(overlays);
    NoGradGuard inference;
    for (const auto& s : samples) {
      Tensor batch({1, 3, s.image.size(1), s.image.size(2)});
      std::copy_n(s.image.data(), s.image.numel(), batch.data());
      const auto out = state.bundle.forward_one(Task::kSeg, constant(std::move(batch)));
      const Tensor am = argmax_channel(out.prediction.value());
      Tensor pred({s.image.size(1), s.image.size(2)});
      std::copy_n(am.data(), pred.numel(), pred.data());
      write_rgb_png((fs::path(overlays) / (s.id + "_overlay.png")).string(),
                    overlay_image(s.image, pred, *s.mask));
    }
  }

  json j;
  j["checkpoint"] = ckpt;
  j["split"] = split;
  j["n_images"] = ev.n_images;
  j["dice"] = ev.dice;
  j["jaccard"] = ev.jaccard;
  j["dice_gate"] = ev.dice_gate;
  j["jaccard_gate"] = ev.jaccard_gate;
  j["best_dice_logged"] = state.best_dice;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  // Aggregation by run label from each manifest; reporting is a pure
  // function of the stored logs.
  struct RunData {
    std::string label;
    double best_dice = -1.0, best_jaccard = 0.0, final_dice = 0.0, final_jaccard = 0.0;
  };
  std::vector<RunData> rows;
  for (const auto& dir : runs) {
    RunData rd;
    {
      std::ifstream mf(fs::path(dir) / "manifest.json");
      if (!mf) throw std::runtime_error("no manifest.json in " + dir);
      json m = json::parse(mf);
      rd.label = m.value("label", "full");
    }
    std::ifstream f(fs::path(dir) / "metrics.jsonl");
    if (!f) throw std::runtime_error("no metrics.jsonl in " + dir);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      if (j.at("type") != "eval") continue;
      const double d = j.at("dice").get<double>();
      rd.final_dice = d;
      rd.final_jaccard = j.at("jaccard").get<double>();
      if (d > rd.best_dice) {
        rd.best_dice = d;
        rd.best_jaccard = j.at("jaccard").get<double>();
      }
    }
    rows.push_back(std::move(rd));
    render_run_plots(dir, (fs::path(out) / "plots" / fs::path(dir).filename()).string());
  }

  std::vector<std::string> labels;
  for (const auto& r : rows)
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end())
      labels.push_back(r.label);

  fs::create_directories(out);
  std::ostringstream text;
  json jrows = json::array();
  text << "label             n  DSC best (%)        JC best (%)         DSC final (%)\n";
  text << "----------------- -- ------------------- ------------------- -------------------\n";
  for (const auto& label : labels) {
    std::vector<double> bd, bj, fd;
    for (const auto& r : rows)
      if (r.label == label) {
        bd.push_back(r.best_dice);
        bj.push_back(r.best_jaccard);
        fd.push_back(r.final_dice);
      }
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%-17s %2zu %7.2f +- %-7.4f  %7.2f +- %-7.4f  %7.2f +- %-7.4f\n", label.c_str(),
                  bd.size(), 100.0 * mean_of(bd), 100.0 * std_of(bd), 100.0 * mean_of(bj),
                  100.0 * std_of(bj), 100.0 * mean_of(fd), 100.0 * std_of(fd));
    text << buf;
    jrows.push_back({{"label", label},
                     {"n", bd.size()},
                     {"mean_best_dice", mean_of(bd)},
                     {"std_best_dice", std_of(bd)},
                     {"mean_best_jaccard", mean_of(bj)},
                     {"std_best_jaccard", std_of(bj)},
                     {"mean_final_dice", mean_of(fd)},
                     {"std_final_dice", std_of(fd)}});
  }
  {
    std::ofstream f(fs::path(out) / "report.txt");
    f << text.str();
  }
  {
    json j;
    j["std_convention"] = "population";
    j["rows"] = jrows;
    std::ofstream f(fs::path(out) / "report.json");
    f << j.dump(2) << "\n";
  }
  std::cout << text.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Semi-supervised multi-expert segmentation workbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("semimoe ") + SEMIMOE_BUILD_REV);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic gland-like dataset");
  int64_t n = 160, size = 64, n_test = -1;
  uint64_t seed = 7;
  std::string out;
  bool force = false;
  gen->add_option("--n", n, "number of image/mask pairs")->check(CLI::PositiveNumber);
  gen->add_option("--size", size, "square image size")->check(CLI::Range(int64_t{32}, int64_t{4096}));
  gen->add_option("--n-test", n_test, "test images (default n/4)");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  // derive-labels
  auto* derive = app.add_subcommand("derive-labels", "derive sdf/boundary labels from masks");
  std::string masks_dir, derive_out;
  bool check = false;
  derive->add_option("--masks", masks_dir, "directory of binary mask PNGs")->required();
  derive->add_option("--out", derive_out, "output directory")->required();
  derive->add_flag("--check", check, "re-validate outputs against the brute-force oracles");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string config_path, data_dir, train_out, resume;
  std::vector<std::string> ablations;
  bool quiet = false;
  std::map<std::string, std::string> overrides;
  double o_ratio = -1, o_lr = -1, o_gamma = -1, o_lambda = -1;
  int64_t o_epochs = -1, o_fold = -1;
  int64_t o_seed = -1;
  tr->add_option("--config", config_path, "key = value config file (presets/desk.toml)");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", train_out, "run output directory")->required();
  tr->add_option("--ablation", ablations,
                 "variant: seg+sdf seg+bnd single_gate linear_sum supervised_only");
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_option("--labeled-ratio", o_ratio, "override labeled_ratio");
  tr->add_option("--epochs", o_epochs, "override epochs");
  tr->add_option("--seed", o_seed, "override seed");
  tr->add_option("--fold", o_fold, "override fold");
  tr->add_option("--lr", o_lr, "override learning rate");
  tr->add_option("--gamma", o_gamma, "override gamma");
  tr->add_option("--lambda-max", o_lambda, "override lambda_max");
  tr->add_flag("--quiet", quiet, "suppress per-epoch output");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt, eval_data, eval_split = "test", overlays;
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--split", eval_split, "test or train")->check(CLI::IsMember({"test", "train"}));
  ev->add_option("--overlays", overlays, "write per-image overlay PNGs here");

  // report
  auto* rep = app.add_subcommand("report", "aggregate runs into a report with plots");
  std::vector<std::string> runs;
  std::string report_out;
  rep->add_option("--runs", runs, "run directories")->required()->expected(-1);
  rep->add_option("--out", report_out, "report output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(n, size, n_test, seed, out, force);
    if (*derive) return cmd_derive_labels(masks_dir, derive_out, check);
    if (*tr) {
      auto fmt = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
      };
      if (o_ratio >= 0) overrides["labeled_ratio"] = fmt(o_ratio);
      if (o_epochs >= 0) overrides["epochs"] = std::to_string(o_epochs);
      if (o_seed >= 0) overrides["seed"] = std::to_string(o_seed);
      if (o_fold >= 0) overrides["fold"] = std::to_string(o_fold);
      if (o_lr >= 0) overrides["lr"] = fmt(o_lr);
      if (o_gamma >= 0) overrides["gamma"] = fmt(o_gamma);
      if (o_lambda >= 0) overrides["lambda_max"] = fmt(o_lambda);
      return cmd_train(config_path, data_dir, train_out, ablations, overrides, resume, quiet);
    }
    if (*ev) return cmd_eval(ckpt, eval_data, eval_split, overlays);
    if (*rep) return cmd_report(runs, report_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
