#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "masdt/config.hpp"
#include "masdt/pipeline.hpp"

namespace {

// Dotted config overrides (--train.epochs 2, --flow.lambda=0.2) are pulled
// out before CLI11 sees the argv, since their key set is open-ended.
bool is_override_key(const std::string& arg) {
  return arg.size() > 2 && arg.rfind("--", 0) == 0 &&
         arg.find('.') != std::string::npos;
}

struct SplitArgs {
  std::vector<std::string> cli;
  std::vector<std::pair<std::string, std::string>> overrides;
};

SplitArgs split_args(int argc, char** argv) {
  SplitArgs out;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (!is_override_key(arg)) {
      out.cli.push_back(arg);
      continue;
    }
    const std::size_t eq = arg.find('=');
    if (eq != std::string::npos) {
      out.overrides.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
    } else {
      if (i + 1 >= argc) {
        throw CLI::ParseError("override " + arg + " needs a value", 2);
      }
      out.overrides.emplace_back(arg.substr(2), argv[++i]);
    }
  }
  return out;
}

std::string usage() {
  std::string text = "usage: masdt <subcommand> [options]\n\nsubcommands:\n";
  for (const std::string& name : masdt::subcommands()) {
    text += "  " + name + "\n";
  }
  text +=
      "\noptions:\n"
      "  --config PATH      JSON config file\n"
      "  --seed N           run seed\n"
      "  --out DIR          output root (default $MASDT_OUT or ./out)\n"
      "  --jobs N           worker threads\n"
      "  --mode M           fusion mode: score, feature, spatial_only\n"
      "  --branch B         restrict to one branch: spatial, temporal\n"
      "  --force            overwrite existing stage outputs\n"
      "  --trace            evaluate also writes per-frame scores\n"
      "  --from-scratch     finetune without a pretraining checkpoint\n"
      "  --print-config     print the effective config and exit\n"
      "  --KEY.PATH VALUE   override any config key, e.g. --train.epochs 2\n";
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked dual-branch video forgery detector"};
  app.footer(usage());

  std::string subcommand;
  std::string config_path;
  std::string seed_str, out_dir, jobs_str, mode, branch;
  masdt::CliOptions opt;
  bool print_config = false;

  app.add_option("subcommand", subcommand)->required(false);
  app.add_option("--config", config_path)->check(CLI::ExistingFile);
  app.add_option("--seed", seed_str);
  app.add_option("--out", out_dir);
  app.add_option("--jobs", jobs_str);
  app.add_option("--mode", mode);
  app.add_option("--branch", branch);
  app.add_flag("--force", opt.force);
  app.add_flag("--trace", opt.trace);
  app.add_flag("--from-scratch", opt.from_scratch);
  app.add_flag("--print-config", print_config);

  try {
    SplitArgs args = split_args(argc, argv);
    {
      // CLI11 wants mutable char*; parse from the filtered vector instead.
      std::vector<std::string> reversed(args.cli.rbegin(), args.cli.rend());
      app.parse(reversed);
    }

    std::vector<std::pair<std::string, std::string>> overrides;
    if (!seed_str.empty()) overrides.emplace_back("seed", seed_str);
    if (!out_dir.empty()) overrides.emplace_back("out", out_dir);
    if (!jobs_str.empty()) overrides.emplace_back("jobs", jobs_str);
    if (!mode.empty()) overrides.emplace_back("fusion.mode", mode);
    for (auto& kv : args.overrides) overrides.push_back(std::move(kv));
    opt.branch = branch;

    if (out_dir.empty() && config_path.empty()) {
      if (const char* env = std::getenv("MASDT_OUT"); env && *env) {
        overrides.emplace_back("out", env);
      }
    }

    const masdt::RunConfig cfg = masdt::parse_config(config_path, overrides);

    if (print_config) {
      std::cout << masdt::canonical_config_json(cfg);
      return 0;
    }
    if (subcommand.empty()) {
      std::cerr << usage();
      return 2;
    }
    return masdt::dispatch(subcommand, cfg, opt);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
