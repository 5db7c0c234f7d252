// Command-line entry point: synth-data, validate, preprocess, train, eval,
// explain, gradcheck, params.

#include "daam/gradcheck.hpp"
#include "daam/params.hpp"
#include "daam/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace daam;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kMissingInput = 2, kNumerical = 3 };

// Unset optionals leave the config-file (or built-in) value in place.
struct Flags {
  std::string config, arch, preset;
  std::optional<std::string> manifest, features, out, checkpoint, split, balance;
  std::optional<int> heads, gaussians, epochs, batch_size, top_k, n_per_class;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  int cases = 50;
  bool quiet = false;
};

const std::vector<std::string> kArchs{"cnnlstm", "transformer"};
const std::vector<std::string> kPresets{"full", "reduced"};
const std::vector<std::string> kSplits{"train", "dev", "test"};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run config (same layout as run_config.json); flags override it")
      ->check(CLI::ExistingFile);
  cmd->add_flag("--quiet", f.quiet, "Suppress progress messages");
  cmd->add_option("--seed", f.seed, "Random seed");
}

void add_model(CLI::App* cmd, Flags& f) {
  cmd->add_option("--arch", f.arch, "Model architecture: cnnlstm | transformer")->check(CLI::IsMember(kArchs));
  cmd->add_option("--preset", f.preset, "Model size: full (default) | reduced")->check(CLI::IsMember(kPresets));
  cmd->add_option("--heads", f.heads, "DAAM heads (default 4)")->check(CLI::PositiveNumber);
  cmd->add_option("--gaussians", f.gaussians, "Gaussians per DAAM head (default 24)")->check(CLI::PositiveNumber);
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  cfg.model = ModelConfig::full(Architecture::cnnlstm);
  if (!f.config.empty()) cfg = run_config_from_json(nlohmann::json::parse(read_text_file(f.config)), cfg);

  if (!f.arch.empty() || !f.preset.empty()) {
    const Architecture arch = f.arch.empty() ? cfg.model.arch : parse_architecture(f.arch);
    const bool reduced = f.preset == "reduced";
    const DaamConfig daam = cfg.model.daam;
    cfg.model = reduced ? ModelConfig::reduced(arch) : ModelConfig::full(arch);
    cfg.model.daam = daam;
  }
  if (f.heads) cfg.model.daam.n_heads = *f.heads;
  if (f.gaussians) cfg.model.daam.n_gaussians = *f.gaussians;
  if (f.seed) cfg.train.seed = cfg.synth.seed = *f.seed;
  if (f.epochs) cfg.train.max_epochs = *f.epochs;
  if (f.batch_size) cfg.train.batch_size = *f.batch_size;
  if (f.balance) cfg.train.balance_level = *f.balance == "recording" ? BalanceLevel::recording : BalanceLevel::segment;
  if (f.n_per_class) cfg.synth.n_per_class = *f.n_per_class;
  if (f.duration) cfg.synth.duration_s = *f.duration;
  if (f.manifest) cfg.manifest = *f.manifest;
  if (f.features) cfg.features = *f.features;
  if (f.out) cfg.out = *f.out;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  if (f.split) cfg.split = *f.split;
  if (f.top_k) cfg.top_k = *f.top_k;
  return cfg;
}

void require(const fs::path& p, const char* flag) {
  if (p.empty()) throw ValidationError(std::string(flag) + " is required");
}

int report_checks(const std::string& title, const std::vector<TensorCheck>& checks, bool& all_ok) {
  std::cout << title << '\n' << format_checks(checks);
  for (const auto& c : checks) all_ok = all_ok && c.passed;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Density adaptive attention speech-depression toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic two-class WAV corpus and its manifest");
  add_common(synth, f);
  synth->add_option("--out", f.out, "Output directory")->required();
  synth->add_option("--n-per-class", f.n_per_class, "Recordings per class (default 50)")->check(CLI::PositiveNumber);
  synth->add_option("--duration", f.duration, "Seconds per recording (default 8)")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate", "Check a manifest: label consistency, corrections, split counts");
  add_common(validate, f);
  validate->add_option("--manifest", f.manifest, "Manifest CSV")->required();

  auto* prep = app.add_subcommand("preprocess", "Log-mel features per usable recording into a feature cache");
  add_common(prep, f);
  prep->add_option("--manifest", f.manifest, "Manifest CSV")->required();
  prep->add_option("--out", f.out, "Feature cache directory")->required();

  auto* trn = app.add_subcommand("train", "Train a classifier; writes model.ckpt, history.csv, run_config.json");
  add_common(trn, f);
  add_model(trn, f);
  trn->add_option("--features", f.features, "Feature cache directory");
  trn->add_option("--out", f.out, "Run output directory");
  trn->add_option("--epochs", f.epochs, "Maximum epochs (default 100)")->check(CLI::PositiveNumber);
  trn->add_option("--batch-size", f.batch_size, "Minibatch size (default 32)")->check(CLI::PositiveNumber);
  trn->add_option("--balance", f.balance, "ND subsampling unit: segment (default) or recording")
      ->check(CLI::IsMember({"segment", "recording"}));

  auto* ev = app.add_subcommand("eval", "Recording-level metrics of a checkpoint on one split");
  add_common(ev, f);
  ev->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  ev->add_option("--features", f.features, "Feature cache directory")->required();
  ev->add_option("--split", f.split, "train | dev | test (default dev)")->check(CLI::IsMember(kSplits));
  ev->add_option("--out", f.out, "Report directory")->required();
  ev->add_option("--arch", f.arch, "Expected architecture")->check(CLI::IsMember(kArchs));

  auto* ex = app.add_subcommand("explain", "Averaged importance heatmaps, bin ranking and head summary");
  add_common(ex, f);
  ex->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  ex->add_option("--features", f.features, "Feature cache directory")->required();
  ex->add_option("--split", f.split, "train | dev | test (default dev)")->check(CLI::IsMember(kSplits));
  ex->add_option("--out", f.out, "Output directory")->required();
  ex->add_option("--top-k", f.top_k, "Bins to rank (default 10)")->check(CLI::NonNegativeNumber);
  ex->add_option("--arch", f.arch, "Expected architecture")->check(CLI::IsMember(kArchs));

  auto* gc = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients, per tensor");
  add_common(gc, f);
  gc->add_option("--arch", f.arch, "Restrict model checks to one architecture")->check(CLI::IsMember(kArchs));
  gc->add_option("--cases", f.cases, "Random DAAM configurations (default 50)")->check(CLI::PositiveNumber);

  auto* prm = app.add_subcommand("params", "Parameter count of a model configuration");
  add_common(prm, f);
  add_model(prm, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }
  log::set_quiet(f.quiet);

  try {
    RunConfig cfg = resolve(f);

    if (*synth) {
      const Manifest m = generate_synthetic_dataset(cfg.synth, cfg.out);
      write_run_config(cfg.out, cfg);
      std::cout << "wrote " << m.recordings.size() << " recordings and " << m.source.string() << '\n';
      return kOk;
    }

    if (*validate) {
      const Manifest m = apply_label_corrections(load_manifest(cfg.manifest));
      for (const auto& line : validate_manifest(m)) std::cout << line << '\n';
      for (const Split s : {Split::train, Split::dev, Split::test}) {
        const auto [d, nd] = split_counts(m, s);
        std::cout << to_string(s) << ": " << d << " D, " << nd << " ND\n";
      }
      return kOk;
    }

    if (*prep) {
      const auto summary = preprocess(cfg.manifest, cfg.out, cfg.spectrogram);
      write_run_config(cfg.out, cfg);
      std::cout << "wrote " << summary.written << " feature files, skipped " << summary.excluded
                << " excluded, corrected " << summary.labels_corrected << " labels\n";
      if (!summary.failures.empty()) {
        for (const auto& msg : summary.failures) std::cerr << "error: " << msg << '\n';
        return kMissingInput;
      }
      return kOk;
    }

    if (*trn) {
      require(cfg.features, "--features");
      require(cfg.out, "--out");
      if (cfg.train.diagnostic_dump.empty()) cfg.train.diagnostic_dump = cfg.out / "diagnostic.json";
      const auto out = run_training(cfg);
      const auto& h = out.result.history;
      std::cout << "best epoch " << h.best_epoch << ", dev macro F1 " << h.epochs[h.best_epoch].dev_macro_f1
                << "\ncheckpoint " << out.checkpoint.string() << '\n';
      return kOk;
    }

    const std::optional<Architecture> expected =
        f.arch.empty() ? std::nullopt : std::optional<Architecture>(parse_architecture(f.arch));

    if (*ev) {
      const auto out = run_evaluation(cfg.checkpoint, cfg.features, parse_split(cfg.split), cfg.out, expected);
      std::cout << read_text_file(out.text);
      return kOk;
    }

    if (*ex) {
      const auto out = run_explain(cfg.checkpoint, cfg.features, parse_split(cfg.split), cfg.out, cfg.top_k, expected);
      std::cout << "averaged " << out.n_segments << " segments\n" << format_head_summary(out.heads);
      for (const auto& r : out.ranking) std::cout << "bin " << r.index << " (" << r.lower_hz << "-" << r.upper_hz
                                                  << " Hz) " << r.mean_importance << '\n';
      return kOk;
    }

    if (*gc) {
      bool ok = true;
      std::vector<TensorCheck> daam_checks;
      for (int i = 0; i < f.cases; ++i) {
        for (auto& c : check_daam_gradients(random_daam_case(cfg.train.seed, i, i % 5 == 0))) {
          c.name = "case " + std::to_string(i) + " " + c.name;
          daam_checks.push_back(c);
        }
      }
      report_checks("DAAM (" + std::to_string(f.cases) + " random configurations)", daam_checks, ok);
      for (const auto& name : kArchs) {
        if (!f.arch.empty() && f.arch != name) continue;
        const auto arch = parse_architecture(name);
        report_checks(name + " (10x24, eval mode)", check_model_gradients(gradcheck_model_config(arch), cfg.train.seed, false), ok);
        if (arch == Architecture::transformer) {
          report_checks(name + " (10x24, fixed dropout)",
                        check_model_gradients(gradcheck_model_config(arch), cfg.train.seed, true), ok);
        }
      }
      std::cout << (ok ? "gradcheck PASS\n" : "gradcheck FAIL\n");
      return ok ? kOk : kNumerical;
    }

    if (*prm) {
      const auto count = count_parameters(init_parameters(cfg.model, cfg.train.seed));
      std::cout << to_string(cfg.model.arch) << ": " << count << " parameters\n";
      if (auto note = parameter_count_note(cfg.model, count)) std::cout << *note << '\n';
      return kOk;
    }
  } catch (const MissingInputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  return kOk;
}
