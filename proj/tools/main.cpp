// inrmar: simulate fixtures, train the denoiser, reconstruct, evaluate.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "inrmar/commands.hpp"
#include "inrmar/config.hpp"
#include "inrmar/errors.hpp"
#include "inrmar/parallel.hpp"

namespace {

using namespace inrmar;

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  long long workers = -1;
  long long seed = -1;
  std::string mode;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "config file (key = value with [sections])");
  cmd->add_option("--set", c.overrides, "override, section.key=value (repeatable)");
  cmd->add_option("-j,--workers", c.workers, "worker threads (0: all cores)");
  cmd->add_option("--seed", c.seed, "run seed");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.workers >= 0) cfg.workers = static_cast<std::size_t>(c.workers);
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (!c.mode.empty()) cfg.mar.mode = mar_mode_from_string(c.mode);
  cfg.validate();
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  set_worker_count(cfg.workers ? cfg.workers : hw);
  return cfg;
}

std::string pick(const std::string& flag, const std::string& from_config, const char* what) {
  const std::string& v = flag.empty() ? from_config : flag;
  if (v.empty()) throw ConfigError(std::string("no ") + what + " given (flag or [paths] entry)");
  return v;
}

void print_table(const Table& t) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) std::cout << (i ? "\t" : "") << t.columns[i];
  std::cout << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) std::cout << (i ? "\t" : "") << r[i];
    std::cout << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metal artifact reduction with a neural field and a diffusion prior"};
  app.require_subcommand(1);

  Common common;
  std::string manifest, out, corpus, fixture, checkpoint, results;
  bool sweep = false;

  auto* simulate = app.add_subcommand("simulate", "materialize fixtures from a manifest");
  add_common(simulate, common);
  simulate->add_option("-m,--manifest", manifest, "fixture manifest");
  simulate->add_option("-o,--out", out, "output directory");

  auto* train = app.add_subcommand("train-denoiser", "train the noise predictor on clean rasters");
  add_common(train, common);
  train->add_option("--corpus", corpus, "directory searched for gt.raster files");
  train->add_option("-o,--out", out, "checkpoint path");

  auto* recon = app.add_subcommand("reconstruct", "reduce metal artifacts in one fixture");
  add_common(recon, common);
  recon->add_option("-f,--fixture", fixture, "fixture directory")->required();
  recon->add_option("--checkpoint", checkpoint, "denoiser checkpoint");
  recon->add_option("-o,--out", out, "output directory");
  recon->add_option("--mode", common.mode, "full | inr_only | dm_only | li_baseline");

  auto* eval = app.add_subcommand("evaluate", "summarize metric reports");
  add_common(eval, common);
  eval->add_option("-r,--results", results, "directory searched for metrics.tsv")->required();

  auto* ablate = app.add_subcommand("ablate", "simulate and run every mode over a manifest");
  add_common(ablate, common);
  ablate->add_option("-m,--manifest", manifest, "fixture manifest");
  ablate->add_option("--checkpoint", checkpoint, "denoiser checkpoint");
  ablate->add_option("-o,--out", out, "output directory");
  ablate->add_flag("--sweep", sweep, "also run full mode at every [evaluate] sweep interval");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const RunConfig cfg = resolve(common);
    if (*simulate) {
      const auto files = cmd_simulate(pick(manifest, cfg.manifest, "manifest"), pick(out, cfg.output, "output"), cfg);
      std::printf("wrote %zu fixture files\n", files.size());
    } else if (*train) {
      const auto t = cmd_train_denoiser(pick(corpus, cfg.corpus, "corpus"), cfg, pick(out, cfg.checkpoint, "checkpoint"));
      std::printf("trained %zu steps, final loss %.6g\n", t.losses.size(), t.losses.back());
    } else if (*recon) {
      const std::string ck = checkpoint.empty() ? cfg.checkpoint : checkpoint;
      const auto r = cmd_reconstruct(fixture, cfg, ck, pick(out, cfg.output, "output"));
      std::printf("%s: psnr %.4f ssim %.4f (metal excluded), %.1f s\n", to_string(cfg.mar.mode).c_str(), r.metrics->psnr,
                  r.metrics->ssim, r.result.seconds);
    } else if (*eval) {
      print_table(cmd_evaluate(results, cfg).medians);
    } else if (*ablate) {
      const std::string ck = checkpoint.empty() ? cfg.checkpoint : checkpoint;
      print_table(cmd_ablate(pick(manifest, cfg.manifest, "manifest"), cfg, ck, pick(out, cfg.output, "output"), sweep)
                      .medians);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
  return kOk;
}
