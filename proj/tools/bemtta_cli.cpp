#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bemtta/store.hpp"

namespace {

bemtta::ExperimentConfig load_config(const std::string& path,
                                     const std::optional<std::uint64_t>& seed) {
  bemtta::ExperimentConfig cfg;
  if (!path.empty()) cfg = bemtta::load_config_file(path);
  if (seed) cfg.world.seed = *seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "bemtta: episodic multi-label test-time adaptation on a synthetic "
      "embedding world"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string file_path;
  std::string what;
  std::string method_name_arg = "bem_full";
  std::string inject;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> reexport;
  int jobs = 1;
  int instance_index = 0;
  bool print_template = false;

  auto* run = app.add_subcommand("run", "run the benchmark and write reports");
  run->add_option("--config", config_path, "config file (defaults when omitted)");
  run->add_option("--seed", seed, "override the world seed");
  run->add_option("--jobs", jobs, "episode parallelism")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "output directory");
  run->add_flag("--print-config", print_template,
                "print the default config template and exit");

  auto* verify = app.add_subcommand("verify", "run the property suite");
  verify->add_option("--inject", inject,
                     "inject a known fault (entropy-grad-sign) to exercise "
                     "failure detection");

  auto* trace = app.add_subcommand("trace", "dump per-class logits for one instance");
  trace->add_option("--config", config_path, "config file");
  trace->add_option("--seed", seed, "override the world seed");
  trace->add_option("--instance", instance_index, "instance index")->required();
  trace->add_option("--method", method_name_arg, "method to trace");
  trace->add_option("--out", out_dir, "output directory");

  auto* exp = app.add_subcommand("export", "write world components to an embedding file");
  exp->add_option("--config", config_path, "config file");
  exp->add_option("--seed", seed, "override the world seed");
  exp->add_option("--what", what, "anchors|captions|instances|context")->required();
  exp->add_option("--file", file_path, "output file")->required();

  auto* imp = app.add_subcommand("import", "validate and summarize an embedding file");
  imp->add_option("--file", file_path, "input file")->required();
  imp->add_option("--reexport", reexport, "write the parsed payload back out");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      if (print_template) {
        std::cout << bemtta::default_config_template();
        return 0;
      }
      return bemtta::cmd_run(load_config(config_path, seed), out_dir, jobs,
                             std::cout);
    }
    if (verify->parsed()) {
      bemtta::VerifyOptions options;
      options.inject = inject;
      return bemtta::run_verification_report(options, std::cout);
    }
    if (trace->parsed()) {
      const auto method = bemtta::parse_method(method_name_arg);
      if (!method) {
        std::cerr << "unknown method '" << method_name_arg << "'\n";
        return 2;
      }
      return bemtta::cmd_trace(load_config(config_path, seed), instance_index,
                               *method, out_dir, std::cout);
    }
    if (exp->parsed()) {
      return bemtta::cmd_export(load_config(config_path, seed), what,
                                file_path, std::cout);
    }
    if (imp->parsed()) {
      std::optional<std::filesystem::path> reexport_path;
      if (reexport) reexport_path = *reexport;
      return bemtta::cmd_import(file_path, reexport_path, std::cout);
    }
  } catch (const bemtta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bemtta::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
