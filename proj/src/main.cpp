#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dr/common.hpp"
#include "dr/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dr: distilled-replay continual learning toolkit"};
  app.require_subcommand(1);

  std::string config, preset, memory;
  std::string export_dir = "buffer_pgms";
  std::size_t experience = 1;

  auto* run = app.add_subcommand(
      "run", "train every configured strategy/seed and write results");
  auto* ablation = app.add_subcommand(
      "ablation", "paired distillation arms: (sum_all_steps, fixed) vs "
                  "(last_step_only, learned)");
  auto* timing = app.add_subcommand(
      "timing", "distillation wall-time over the S and R grids");
  auto* distill = app.add_subcommand(
      "distill", "distill a single experience and export the buffer");
  auto* exportb = app.add_subcommand(
      "export-buffer", "render a stored buffer (.drmem) as PGM images");
  auto* validate = app.add_subcommand(
      "validate-config", "parse and validate a config, reporting problems");

  for (auto* sub : {run, ablation, timing, distill, validate}) {
    sub->add_option("-c,--config", config, "config file (INI)");
    sub->add_option("-p,--preset", preset,
                    "preset name, resolved as presets/<name>.ini");
  }
  distill->add_option("-e,--experience", experience,
                      "1-based experience to distill");
  exportb->add_option("-m,--memory", memory, "stored buffer (.drmem)")
      ->required();
  exportb->add_option("-o,--out", export_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  dr::LogFn log = [](const std::string& line) { std::cout << line << "\n"; };

  try {
    if (app.got_subcommand(exportb)) {
      dr::cmd_export_buffer(memory, export_dir, log);
      return 0;
    }
    std::string path;
    if (!config.empty()) {
      path = config;
    } else if (!preset.empty()) {
      path = "presets/" + preset + ".ini";
    } else {
      throw dr::ContractError("need --config or --preset");
    }
    if (app.got_subcommand(validate))
      return dr::cmd_validate(path, log).empty() ? 0 : 2;
    if (app.got_subcommand(run)) dr::cmd_run(path, log);
    if (app.got_subcommand(ablation)) dr::cmd_ablation(path, log);
    if (app.got_subcommand(timing)) dr::cmd_timing(path, log);
    if (app.got_subcommand(distill)) dr::cmd_distill(path, experience, log);
    return 0;
  } catch (const dr::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const dr::ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dr::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const dr::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
