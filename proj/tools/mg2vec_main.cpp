#include <CLI11.hpp>
#include <iostream>

#include "mg2vec/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kValidationError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mg2vec: k-mer graph + masked-token representations for metagenome reads"};
  app.footer("Stages: simulate, build-graph, train-structural, pretrain, embed, train, evaluate, cluster, run\n\n"
             "Configuration keys and defaults:\n" +
             mg2vec::config_reference());
  std::string stage, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> stages = mg2vec::stage_names();
  stages.push_back("run");
  app.add_option("stage", stage, "pipeline stage, or `run` for run.stages")->required()->check(CLI::IsMember(stages));
  app.add_option("--config", config_path, "configuration file")->required();
  app.add_option("--seed", seed, "override run.seed");
  app.add_option("--out", out_dir, "override paths.artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidationError;
  }

  try {
    auto cfg = mg2vec::load_config_file(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.artifacts = out_dir;
    cfg.validate();
    if (stage == "run") {
      mg2vec::run_pipeline(cfg, std::cerr);
    } else {
      mg2vec::run_stage(stage, cfg, std::cerr);
    }
  } catch (const mg2vec::ValidationError& e) {
    std::cerr << "mg2vec: invalid input: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "mg2vec: error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
