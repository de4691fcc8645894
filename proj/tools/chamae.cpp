// chamae: command-line front end for data generation, training, evaluation
// and diagnostics. Every subcommand takes --config FILE and repeated
// --set key=value overrides; --json switches stdout to machine output.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <omp.h>

#include "chamae/grad_check.hpp"
#include "chamae/harness/checkpoint.hpp"
#include "chamae/harness/config.hpp"
#include "chamae/harness/diagnostics.hpp"
#include "chamae/harness/evaluate.hpp"
#include "chamae/harness/train.hpp"

using namespace chamae;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool json = false;
  std::optional<std::uint64_t> seed;
  std::string strategy;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "Run config JSON (defaults apply when omitted)");
  cmd->add_option("--set", c.overrides, "Override, e.g. --set train.peak_lr=1e-3 (repeatable)");
  cmd->add_flag("--json", c.json, "Machine-readable JSON on stdout");
  cmd->add_option("--seed", c.seed, "Shorthand for --set train.seed=N");
}

Json config_json(const Common& c) {
  Json j = Json::object();
  if (!c.config.empty()) {
    std::ifstream f(c.config);
    if (!f) throw std::runtime_error("cannot open config " + c.config);
    j = Json::parse(f);
  }
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back("train.seed=" + std::to_string(*c.seed));
  if (!c.strategy.empty()) overrides.push_back("train.mask.strategy=\"" + c.strategy + "\"");
  apply_overrides(j, overrides);
  // The loader ignores unknown keys, so catch typos in overrides here.
  const Json full = Json(run_config_from_json(j));
  for (const auto& o : overrides) {
    std::string path = "/" + o.substr(0, o.find('='));
    std::replace(path.begin(), path.end(), '.', '/');
    // Presets expand into their fields, so they never appear in the resolved config.
    const bool preset = path.ends_with("/preset") && full.contains(Json::json_pointer(path.substr(0, path.rfind('/'))));
    if (!preset && !full.contains(Json::json_pointer(path))) throw std::invalid_argument("unknown config key '" + o + "'");
  }
  return j;
}

RunConfig load(const Common& c) {
  RunConfig cfg = run_config_from_json(config_json(c));
  if (cfg.train.threads > 0) omp_set_num_threads(static_cast<int>(cfg.train.threads));
  return cfg;
}

std::vector<LabeledSample> load_or_generate(const std::string& dir, const SynthSpec& spec, Split split) {
  if (!dir.empty()) return load_split(dir);
  const std::size_t count = split == Split::kTrain ? spec.train : split == Split::kVal ? spec.val : spec.test;
  return generate_split(spec, split, count);
}

std::vector<int> parse_ids(const std::string& s) {
  std::vector<int> ids;
  std::stringstream in(s);
  for (std::string tok; std::getline(in, tok, ',');)
    if (!tok.empty()) ids.push_back(std::stoi(tok));
  return ids;
}

void emit(const Common& c, const Json& j, const std::string& text) {
  if (c.json) std::cout << j.dump(2) << '\n';
  else std::cout << text;
}

// ------------------------------------------------------------------ commands

int cmd_synth(const Common& c, const std::string& out) {
  const RunConfig cfg = load(c);
  const Dataset d = generate(cfg.data);
  Json summary{{"out", out}, {"config_hash", config_hash(Json(cfg.data))}};
  for (auto [name, split] : {std::pair{"train", &d.train}, std::pair{"val", &d.val}, std::pair{"test", &d.test}}) {
    save_split(fs::path(out) / name, *split);
    summary[name] = split->size();
  }
  std::ofstream(fs::path(out) / "data.json") << Json(cfg.data).dump(2) << '\n';
  emit(c, summary, "wrote " + std::to_string(d.train.size()) + "/" + std::to_string(d.val.size()) + "/" +
                       std::to_string(d.test.size()) + " samples to " + out + "\n");
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& out, const std::string& log_path) {
  const RunConfig cfg = load(c);
  const auto train_set = load_or_generate(data_dir.empty() ? "" : (fs::path(data_dir) / "train").string(), cfg.data,
                                          Split::kTrain);
  std::ofstream log_file;
  TrainOptions opt;
  if (!log_path.empty()) {
    log_file.open(log_path);
    opt.jsonl = &log_file;
  }
  if (!c.json) {
    opt.on_step = [](const StepLog& s) {
      if (s.step % 50 == 0)
        std::cerr << "step " << s.step << " epoch " << s.epoch << " lr " << s.lr << " recon " << s.loss.recon
                  << " task " << s.loss.task << '\n';
    };
  }
  const auto result = train(cfg.train, train_set, init_model(cfg.model, cfg.train.seed, train_set), opt);
  save_checkpoint(out, result.params);
  const LossBreakdown& last = result.log.back().loss;
  emit(c,
       {{"checkpoint", out}, {"steps", result.log.size()}, {"final", last.final}, {"recon", last.recon},
        {"task", last.task}, {"config_hash", config_hash(Json(cfg))}},
       "trained " + std::to_string(result.log.size()) + " steps, saved " + out + "\n");
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& data_dir, const std::string& channels) {
  const RunConfig cfg = load(c);
  const auto params = load_checkpoint(ckpt);
  const auto test = load_or_generate(data_dir, cfg.data, Split::kTest);
  std::vector<int> subset = channels.empty() ? test.front().image.channel_ids : parse_ids(channels);
  const double acc = evaluate(params, test, subset);
  emit(c, {{"channels", subset}, {"accuracy", acc}, {"samples", test.size()}},
       "accuracy " + std::to_string(acc) + " on " + std::to_string(test.size()) + " samples\n");
  return 0;
}

int cmd_sweep(const Common& c, const std::string& ckpt, const std::string& data_dir, std::size_t k,
              const std::string& csv) {
  const RunConfig cfg = load(c);
  const auto params = load_checkpoint(ckpt);
  const auto test = load_or_generate(data_dir, cfg.data, Split::kTest);
  EvalReport rep = leave_k_out_sweep(params, test, k);
  rep.config_hash = config_hash(Json(cfg));
  if (!csv.empty()) {
    std::ofstream f(csv);
    write_csv(f, rep);
  }
  std::ostringstream text;
  write_csv(text, rep);
  emit(c, to_json(rep), text.str());
  return 0;
}

int cmd_mask_stats(const Common& c, std::size_t n, std::size_t channels, std::size_t draws) {
  const RunConfig cfg = load(c);
  std::vector<std::size_t> branch(3), k_hist(channels + 1);
  std::vector<double> column_mean(channels);
  std::size_t masked = 0;
  for (std::size_t s = 0; s < draws; ++s) {
    const MaskPlan p = draw_mask(n, channels, cfg.train.mask, mask_rng(cfg.train.seed, 0, s));
    ++branch[static_cast<std::size_t>(p.branch)];
    ++k_hist[p.masked_channels.size()];
    for (std::size_t j = 0; j < channels; ++j) column_mean[j] += double(p.column_sum(j)) / double(draws);
    masked += p.masked_count();
  }
  Json j{{"strategy", to_string(cfg.train.mask.strategy)},
         {"draws", draws},
         {"branch", {{"patch_only", branch[0]}, {"channel_only", branch[1]}, {"combined", branch[2]}}},
         {"k_histogram", k_hist},
         {"column_mean", column_mean},
         {"masked_fraction", double(masked) / double(draws * n * channels)}};
  const double d = double(draws);
  std::ostringstream csv;
  csv << "stat,key,value\n";
  csv << "branch_freq,patch_only," << branch[0] / d << "\nbranch_freq,channel_only," << branch[1] / d
      << "\nbranch_freq,combined," << branch[2] / d << '\n';
  for (std::size_t k = 0; k < k_hist.size(); ++k) csv << "k_freq," << k << ',' << k_hist[k] / d << '\n';
  for (std::size_t col = 0; col < channels; ++col) csv << "channel_mask_rate," << col << ',' << column_mean[col] / double(n) << '\n';
  emit(c, j, csv.str());
  return 0;
}

int cmd_attn_map(const Common& c, const std::string& ckpt, const std::string& data_dir, std::size_t index,
                 const std::string& out) {
  const RunConfig cfg = load(c);
  const auto params = load_checkpoint(ckpt);
  const auto test = load_or_generate(data_dir, cfg.data, Split::kTest);
  if (index >= test.size()) throw std::out_of_range("sample index " + std::to_string(index) + " out of range");
  const AttentionMap map = attention_map(params, prepare_image(params, test[index].image));
  std::ostringstream csv;
  write_attention_csv(csv, map);
  if (!out.empty()) std::ofstream(out) << csv.str();
  Json rows = Json::array();
  for (std::size_t i = 0; i < map.full.rows(); ++i) rows.push_back(std::vector<double>(map.full.row(i).begin(), map.full.row(i).end()));
  emit(c, {{"channel_ids", map.channel_ids}, {"memory", map.memory}, {"full", rows}}, csv.str());
  return 0;
}

int cmd_recon_dump(const Common& c, const std::string& ckpt, const std::string& data_dir, std::size_t index,
                   const std::string& out) {
  const RunConfig cfg = load(c);
  const auto params = load_checkpoint(ckpt);
  const auto test = load_or_generate(data_dir, cfg.data, Split::kTest);
  if (index >= test.size()) throw std::out_of_range("sample index " + std::to_string(index) + " out of range");
  const auto& img = test[index].image;
  const MaskPlan plan = draw_mask(params.config().patches_per_channel(), img.channels(), cfg.train.mask,
                                  mask_rng(cfg.train.seed, 0, index));
  const ReconDump dump = recon_dump(params, img, plan, out);
  Json files = Json::array();
  for (const auto& f : dump.files) files.push_back(f.string());
  emit(c, {{"branch", to_string(dump.plan.branch)}, {"masked", dump.plan.masked_count()}, {"pixel_loss", dump.pixel_loss},
           {"files", files}},
       "wrote " + std::to_string(dump.files.size()) + " files to " + out + " (pixel loss " +
           std::to_string(dump.pixel_loss) + ")\n");
  return 0;
}

int cmd_finetune(const Common& c, const std::string& ckpt, const std::string& images_dir, const std::string& out,
                 const std::vector<std::string>& remaps) {
  const RunConfig cfg = load(c);
  const auto params = load_checkpoint(ckpt);
  std::vector<MultiChannelImage> images;
  for (const auto& s : load_split(images_dir)) images.push_back(s.image);
  for (const auto& r : remaps) {
    const auto colon = r.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("remap '" + r + "' is not FROM:TO");
    const int from = std::stoi(r.substr(0, colon)), to = std::stoi(r.substr(colon + 1));
    for (auto& img : images) std::replace(img.channel_ids.begin(), img.channel_ids.end(), from, to);
  }
  const MaskConfig& mask = cfg.finetune.mask;
  FinetuneConfig zero = cfg.finetune;
  zero.steps = 0;
  const double before = mean_recon_loss(finetune_channel_tokens(params, images, zero).params, images, mask, cfg.finetune.seed);
  const FinetuneResult res = finetune_channel_tokens(params, images, cfg.finetune);
  const double after = mean_recon_loss(res.params, images, mask, cfg.finetune.seed);
  save_checkpoint(out, res.params);
  emit(c,
       {{"checkpoint", out}, {"novel_channels", res.novel_channels}, {"recon_before", before}, {"recon_after", after},
        {"loss_curve", res.loss_curve}},
       "fine-tuned tokens for " + std::to_string(res.novel_channels.size()) + " channel(s); recon " +
           std::to_string(before) + " -> " + std::to_string(after) + ", saved " + out + "\n");
  return 0;
}

int cmd_grad_check(const Common& c, double tolerance, double epsilon) {
  const RunConfig cfg = load(c);
  ModelConfig mc = cfg.model;
  SynthSpec spec = cfg.data;
  spec.height = mc.image_height;
  spec.width = mc.image_width;
  spec.patch = mc.patch;
  const auto data = generate_split(spec, Split::kTrain, 1);
  auto params = ModelParams<double>::initialize(mc, cfg.train.seed, data[0].image.channel_ids);
  Philox r(cfg.train.seed, 0x6763);
  for (auto& t : params.tensors())
    for (auto& x : t.storage()) x += 0.1 * r.normal();
  const MaskPlan plan = draw_mask(mc.patches_per_channel(), data[0].image.channels(), cfg.train.mask, Philox(cfg.train.seed));
  std::vector<NamedParam> named;
  for (ParamId id = 0; id < params.count(); ++id) named.push_back({params.name(id), &params.tensor(id)});

  LossWeights w = cfg.train.weights;
  w.lambda_recon = std::clamp(w.lambda_recon, 0.1, 0.9);  // keep both branches on the tape
  Json results = Json::object();
  std::ostringstream text;
  bool ok = true;
  for (auto [name, member] : {std::pair{"pixel", &SampleObjective::pixel}, std::pair{"fourier", &SampleObjective::fourier},
                              std::pair{"recon", &SampleObjective::recon}, std::pair{"task", &SampleObjective::task},
                              std::pair{"final", &SampleObjective::final}}) {
    LossFn fn = [&](std::vector<Tensor<double>>* grads) {
      Forward<double> fw(params);
      const SampleObjective obj = sample_objective(fw, data[0].image, data[0].label, plan, w);
      const ad::Var loss = obj.*member;
      if (grads) {
        fw.graph().backward(loss);
        *grads = params.zeros_like();
        fw.accumulate_gradients(*grads);
      }
      return fw.graph().scalar(loss);
    };
    const GradCheckResult res = grad_check(fn, named, {epsilon, 24, cfg.train.seed});
    const bool pass = res.passed(tolerance);
    ok &= pass;
    results[name] = {{"max_rel_error", res.max_rel_error}, {"worst_param", res.worst_param},
                     {"worst_index", res.worst_index}, {"analytic", res.worst_analytic},
                     {"numeric", res.worst_numeric}, {"coords", res.coords_checked}, {"pass", pass}};
    text << name << ": max rel error " << res.max_rel_error << " (" << res.worst_param << "[" << res.worst_index
         << "]) " << (pass ? "ok" : "FAIL") << '\n';
  }
  emit(c, {{"tolerance", tolerance}, {"epsilon", epsilon}, {"losses", results}, {"pass", ok}}, text.str());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-aware masked autoencoder toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Common common;
  std::string out, data_dir, ckpt, channels, csv, log_path, images_dir;
  std::vector<std::string> remaps;
  std::size_t k = 1, index = 0, n = 16, c = 4, draws = 10000;
  double tolerance = 1e-4, epsilon = 1e-4;

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic dataset as MCIF files");
  add_common(synth, common);
  synth->add_option("-o,--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Pretrain/train a model and save a checkpoint");
  add_common(tr, common);
  tr->add_option("-d,--data", data_dir, "Directory written by synth-data (generated from config otherwise)");
  tr->add_option("-o,--out", out, "Checkpoint path")->required();
  tr->add_option("--log", log_path, "Per-step JSONL loss log");

  auto* ev = app.add_subcommand("eval", "Top-1 accuracy with a channel subset");
  add_common(ev, common);
  ev->add_option("-m,--checkpoint", ckpt, "Checkpoint")->required();
  ev->add_option("-d,--data", data_dir, "MCIF split directory (test split generated from config otherwise)");
  ev->add_option("--channels", channels, "Comma-separated channel ids (default: all)");

  auto* sw = app.add_subcommand("sweep", "Leave-k-out evaluation over all channel subsets");
  add_common(sw, common);
  sw->add_option("-m,--checkpoint", ckpt, "Checkpoint")->required();
  sw->add_option("-d,--data", data_dir, "MCIF split directory");
  sw->add_option("-k", k, "Channels left out per row");
  sw->add_option("--csv", csv, "Also write the CSV report here");

  auto* ms = app.add_subcommand("mask-stats", "Empirical statistics of the configured mask generator (CSV)");
  add_common(ms, common);
  ms->add_option("-n", n, "Patches per channel");
  ms->add_option("--channels", c, "Channel count");
  ms->add_option("--draws", draws, "Number of plans");
  ms->add_option("--strategy", common.strategy, "Shorthand for --set train.mask.strategy=NAME");

  auto* am = app.add_subcommand("attn-map", "Patch-to-channel attention diagnostic (CSV)");
  add_common(am, common);
  am->add_option("-m,--checkpoint", ckpt, "Checkpoint")->required();
  am->add_option("-d,--data", data_dir, "MCIF split directory");
  am->add_option("-i,--index", index, "Sample index");
  am->add_option("-o,--out", out, "Also write the CSV here");

  auto* rd = app.add_subcommand("recon-dump", "Masked input / reconstruction PNGs for one sample");
  add_common(rd, common);
  rd->add_option("-m,--checkpoint", ckpt, "Checkpoint")->required();
  rd->add_option("-d,--data", data_dir, "MCIF split directory");
  rd->add_option("-i,--index", index, "Sample index");
  rd->add_option("-o,--out", out, "Output directory")->required();

  auto* ft = app.add_subcommand("finetune-channels", "Train tokens for unseen channel ids only");
  add_common(ft, common);
  ft->add_option("-m,--checkpoint", ckpt, "Checkpoint")->required();
  ft->add_option("--images", images_dir, "MCIF directory with the novel channels")->required();
  ft->add_option("-o,--out", out, "Output checkpoint")->required();
  ft->add_option("--remap", remaps, "Relabel channel FROM as TO, e.g. --remap 3:4 (repeatable)");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every loss term (64-bit)");
  add_common(gc, common);
  gc->add_option("--tolerance", tolerance, "Maximum relative error");
  gc->add_option("--epsilon", epsilon, "Central-difference step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(common, out);
    if (*tr) return cmd_train(common, data_dir, out, log_path);
    if (*ev) return cmd_eval(common, ckpt, data_dir, channels);
    if (*sw) return cmd_sweep(common, ckpt, data_dir, k, csv);
    if (*ms) return cmd_mask_stats(common, n, c, draws);
    if (*am) return cmd_attn_map(common, ckpt, data_dir, index, out);
    if (*rd) return cmd_recon_dump(common, ckpt, data_dir, index, out);
    if (*ft) return cmd_finetune(common, ckpt, images_dir, out, remaps);
    if (*gc) return cmd_grad_check(common, tolerance, epsilon);
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
