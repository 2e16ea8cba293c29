#include <ostream>

#include "CLI11.hpp"
#include "aem/cli.hpp"

namespace aem::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"AEMatter: trimap-based alpha matting, training, evaluation and studies"};
  app.require_subcommand(1);

  std::string config_path, out_dir, resume, checkpoint, image, trimap, pred, gt, protocol;
  std::optional<std::uint64_t> seed;
  bool tta = false, dry_run = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config (key = value with [sections])");
    sub->add_option("--seed", seed, "Overrides the config seed");
    sub->add_option("--out", out_dir, "Output directory (default: runs/<timestamp>)");
  };
  auto* synth = app.add_subcommand("synth", "Write a synthetic composite dataset");
  common(synth);
  auto* trn = app.add_subcommand("train", "Train a model; writes checkpoint, loss log and config");
  common(trn);
  trn->add_option("--resume", resume, "Continue from this checkpoint");
  auto* inf = app.add_subcommand("infer", "Predict an alpha matte");
  inf->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  inf->add_option("--image", image, "RGB PNG")->required();
  inf->add_option("--trimap", trimap, "Trimap PNG (0/128/255)")->required();
  inf->add_option("--out", out_dir, "Alpha PNG to write")->required();
  inf->add_flag("--tta-hflip", tta, "Average with the horizontally flipped prediction");
  auto* ev = app.add_subcommand("eval", "Score predicted mattes against ground truth");
  ev->add_option("--pred", pred, "Directory of predicted <id>.png")->required();
  ev->add_option("--gt", gt, "Directory of ground-truth <id>.png")->required();
  ev->add_option("--trimap", trimap, "Directory of trimap <id>.png")->required();
  common(ev);
  auto* st = app.add_subcommand("study", "Run a study protocol");
  st->add_option("protocol", protocol, "patch-infer | patch-train | trimap | kernel | erf")->required();
  common(st);
  st->add_option("--checkpoint", checkpoint, "Trained model for patch-infer and trimap");
  st->add_flag("--dry-run", dry_run, "Print the sweep plan and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) {
      if (synth->parsed()) c.synth.seed = *seed;
      else c.train.seed = *seed;
      c.study.seeds = {*seed};
    }
    const std::filesystem::path runs = "runs";
    if (synth->parsed()) {
      const auto dir = out_dir.empty() ? timestamped_dir(runs) / "data" : std::filesystem::path(out_dir);
      cmd_synth(c, dir);
      out << "wrote " << c.synth_count << " samples to " << dir.string() << "\n";
    } else if (trn->parsed()) {
      const auto dir = out_dir.empty() ? timestamped_dir(runs) : std::filesystem::path(out_dir);
      try {
        const auto r = cmd_train(c, dir, resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume));
        if (!r.log.empty()) {
          out << "steps " << r.log.front().step << ".." << r.log.back().step << ", loss " << r.log.front().total
              << " -> " << r.log.back().total << "\n";
        }
        out << "checkpoint " << r.checkpoint.string() << "\n";
      } catch (const NumericError& e) {
        err << "error: " << e.what() << "; last good checkpoint kept at " << (dir / "checkpoint.aemt").string() << "\n";
        return 2;
      }
    } else if (inf->parsed()) {
      cmd_infer(checkpoint, image, trimap, out_dir, tta);
      out << "wrote " << out_dir << "\n";
    } else if (ev->parsed()) {
      const auto csv = out_dir.empty() ? timestamped_dir(runs) / "eval.csv" : std::filesystem::path(out_dir) / "eval.csv";
      const auto rows = cmd_eval(pred, gt, trimap, csv, config_hash(c));
      const auto& m = rows.back().second;
      out << rows.size() - 1 << " samples; mean SAD " << m.sad << " MSE " << m.mse << " Grad " << m.grad << " Conn "
          << m.conn << "\nwrote " << csv.string() << "\n";
    } else if (st->parsed()) {
      const std::string plan = study_plan(protocol, c);
      if (dry_run) {
        out << plan;
        return 0;
      }
      const auto dir = out_dir.empty() ? timestamped_dir(runs) / ("study-" + protocol) : std::filesystem::path(out_dir);
      const auto rows = cmd_study(protocol, c, dir,
                                  checkpoint.empty() ? std::nullopt : std::optional<std::filesystem::path>(checkpoint));
      out << rows.size() << " rows written to " << (dir / "rows.csv").string() << "\n";
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace aem::cli
