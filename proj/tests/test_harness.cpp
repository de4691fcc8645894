#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <omp.h>
#include <zlib.h>

#include "chamae/harness/checkpoint.hpp"
#include "chamae/harness/config.hpp"
#include "chamae/harness/diagnostics.hpp"
#include "chamae/harness/evaluate.hpp"
#include "chamae/harness/train.hpp"

using namespace chamae;

namespace {

SynthSpec tiny_spec() {
  SynthSpec s;
  s.height = s.width = 16;
  s.patch = 8;
  s.train = 24;
  s.val = 6;
  s.test = 12;
  s.seed = 2;
  return s;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.image_height = m.image_width = 16;
  m.patch = 8;
  m.dim = 8;
  m.depth = 1;
  m.heads = 2;
  m.decoder_heads = 2;
  m.mlp_ratio = 2;
  m.memory_tokens = 2;
  return m;
}

const Dataset& tiny_data() {
  static const Dataset d = generate(tiny_spec());
  return d;
}

std::vector<BatchItem> make_batch(const ModelParams<float>& params, std::vector<MultiChannelImage>& storage,
                                  const MaskConfig& mask) {
  const auto& data = tiny_data().train;
  storage.clear();
  for (std::size_t i = 0; i < 6; ++i) storage.push_back(prepare_image(params, data[i].image));
  std::vector<BatchItem> batch;
  for (std::size_t i = 0; i < storage.size(); ++i) {
    batch.push_back({&storage[i], data[i].label,
                     draw_mask(params.config().patches_per_channel(), storage[i].channels(), mask, mask_rng(1, 0, i))});
  }
  return batch;
}

bool all_zero(const Tensor<float>& t) {
  return std::all_of(t.storage().begin(), t.storage().end(), [](float v) { return v == 0.0f; });
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("chamae_harness_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

TrainConfig quick_train() {
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 8;
  t.peak_lr = 1e-3;
  t.warmup_epochs = 1;
  t.seed = 4;
  return t;
}

}  // namespace

// ------------------------------------------------------------------ config

TEST(Config, JsonRoundTrip) {
  RunConfig cfg;
  cfg.data.texture_agreement = 0.7;
  cfg.model = model_preset("small");
  cfg.train.mask = MaskConfig::dcp_combination();
  cfg.train.weights.lambda_recon = 0.5;
  cfg.finetune.steps = 17;
  const Json j = cfg;
  const RunConfig back = run_config_from_json(j);
  EXPECT_EQ(Json(back), j);
  EXPECT_EQ(back.train.mask.patch_ratio, 0.25);
  EXPECT_EQ(back.model.dim, 32u);
}

TEST(Config, OverridesAndPresets) {
  Json j = RunConfig{};
  apply_overrides(j, {"train.peak_lr=0.01", "model.pool=cls", "data.seed=9"});
  const RunConfig cfg = run_config_from_json(j);
  const RunConfig preset = run_config_from_json(Json::parse(R"({"train": {"mask": {"preset": "random_patch"}}})"));
  EXPECT_EQ(cfg.train.peak_lr, 0.01);
  EXPECT_EQ(cfg.model.pool, PoolMode::kCls);
  EXPECT_EQ(preset.train.mask.strategy, MaskStrategy::kRandomPatchFixed);
  EXPECT_EQ(cfg.data.seed, 9u);
  EXPECT_THROW(apply_overrides(j, {"novalue"}), std::invalid_argument);
  EXPECT_THROW(model_preset("huge"), std::invalid_argument);
  EXPECT_EQ(model_preset("toy").dim, ModelConfig::toy().dim);
}

TEST(Config, HashIsStableAndSensitive) {
  const Json a = RunConfig{};
  Json b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b["train"]["seed"] = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Config, Validation) {
  TrainConfig t;
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.warmup_epochs = t.epochs;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.peak_lr = -1.0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

// ------------------------------------------------------------------ optimizer

TEST(Schedule, WarmupThenCosine) {
  TrainConfig cfg;
  cfg.peak_lr = 1.0;
  cfg.min_lr = 0.01;
  const std::size_t total = 100, warmup = 10;
  for (std::size_t s = 1; s < warmup; ++s)
    EXPECT_GT(learning_rate(cfg, s, total, warmup), learning_rate(cfg, s - 1, total, warmup));
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0, total, warmup), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, warmup - 1, total, warmup), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, warmup, total, warmup), 1.0);
  for (std::size_t s = warmup + 1; s < total; ++s)
    EXPECT_LE(learning_rate(cfg, s, total, warmup), learning_rate(cfg, s - 1, total, warmup));
  EXPECT_NEAR(learning_rate(cfg, total - 1, total, warmup), 0.01, 1e-12);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  auto params = ModelParams<float>::initialize(tiny_model(), 1, {0});
  const ParamLayout& L = params.layout();
  const ModelParams<float> before = params;
  auto grads = params.zeros_like();
  grads[L.patch_w][0] = 0.5f;
  grads[L.patch_b][0] = -2.0f;
  AdamW opt(params);
  const double lr = 0.1, wd = 0.2;
  opt.step(params, grads, lr, wd);
  EXPECT_EQ(opt.steps(), 1u);
  // Bias-corrected first step moves by lr * sign(g); weights also decay.
  const float w0 = before.tensor(L.patch_w)[0], w1 = before.tensor(L.patch_w)[1];
  EXPECT_NEAR(params.tensor(L.patch_w)[0], w0 * (1 - lr * wd) - lr, 1e-6);
  EXPECT_NEAR(params.tensor(L.patch_w)[1], w1 * (1 - lr * wd), 1e-7);
  EXPECT_NEAR(params.tensor(L.patch_b)[0], before.tensor(L.patch_b)[0] + lr, 1e-6);
  EXPECT_EQ(params.tensor(L.patch_b)[1], before.tensor(L.patch_b)[1]);  // no decay on biases
  EXPECT_EQ(params.tensor(L.channel_tokens), before.tensor(L.channel_tokens));
}

TEST(AdamW, SkipsFrozenParameters) {
  auto params = ModelParams<float>::initialize(tiny_model(), 1, {0});
  const ModelParams<float> before = params;
  auto grads = params.zeros_like();
  for (auto& g : grads) g.fill(1.0f);
  std::vector<bool> trainable(params.count(), false);
  trainable[params.layout().head_b] = true;
  AdamW opt(params);
  opt.step(params, grads, 0.1, 0.5, &trainable);
  for (ParamId id = 0; id < params.count(); ++id) {
    if (id == params.layout().head_b) EXPECT_FALSE(params.tensor(id) == before.tensor(id));
    else EXPECT_EQ(params.tensor(id), before.tensor(id)) << params.name(id);
  }
}

// ------------------------------------------------------------------ gradients

TEST(BatchGradients, SerialAndParallelAreBitIdentical) {
  const auto params = init_model(tiny_model(), 3, tiny_data().train);
  std::vector<MultiChannelImage> storage;
  const auto batch = make_batch(params, storage, MaskConfig::dcp_alternate());
  const auto serial = compute_batch_gradients<float>(params, batch, LossWeights{}, nullptr, Execution::kSerial);
  for (int threads : {1, 2, 3, 5}) {
    omp_set_num_threads(threads);
    const auto par = compute_batch_gradients<float>(params, batch, LossWeights{}, nullptr, Execution::kParallel);
    EXPECT_EQ(par.grads, serial.grads) << threads;
    EXPECT_EQ(par.mean.final, serial.mean.final);
  }
  omp_set_num_threads(1);
}

TEST(BatchGradients, BreakdownMatchesBlend) {
  auto params = init_model(tiny_model(), 3, tiny_data().train);
  std::vector<MultiChannelImage> storage;
  const auto batch = make_batch(params, storage, MaskConfig::dcp_combination());
  LossWeights w;
  w.lambda_recon = 0.4;
  for (const auto& item : batch) {
    Forward<float> fw(params);
    const auto obj = sample_objective(fw, *item.image, item.label, item.plan, w);
    const auto& b = obj.breakdown;
    EXPECT_NEAR(b.recon, recon_loss(b.pixel, b.fourier, w), 1e-6);
    EXPECT_NEAR(b.final, final_loss(b.task, b.reg, b.recon, w), 1e-5);
    EXPECT_EQ(b.masked, item.plan.masked_count());
  }
}

TEST(BatchGradients, LambdaEndpointsIsolateBranches) {
  const auto params = init_model(tiny_model(), 3, tiny_data().train);
  const ParamLayout& L = params.layout();
  std::vector<MultiChannelImage> storage;
  const auto batch = make_batch(params, storage, MaskConfig::dcp_combination());

  LossWeights recon_only;
  recon_only.lambda_recon = 1.0;
  const auto r = compute_batch_gradients<float>(params, batch, recon_only);
  for (ParamId id : {L.head_w, L.head_b, L.fusion_query, L.fusion_wq, L.fusion_fc2_w})
    EXPECT_TRUE(all_zero(r.grads[id])) << params.name(id);
  EXPECT_FALSE(all_zero(r.grads[L.decoder_head_w]));
  EXPECT_EQ(r.mean.task, 0.0);

  LossWeights task_only;
  task_only.lambda_recon = 0.0;
  const auto t = compute_batch_gradients<float>(params, batch, task_only);
  for (ParamId id : {L.decoder_head_w, L.decoder_head_b, L.mask_token, L.decoder_norm_gamma})
    EXPECT_TRUE(all_zero(t.grads[id])) << params.name(id);
  EXPECT_FALSE(all_zero(t.grads[L.head_w]));
}

TEST(BatchGradients, UnlabeledSamplesSkipTheClassifier) {
  const auto params = init_model(tiny_model(), 3, tiny_data().train);
  std::vector<MultiChannelImage> storage;
  auto batch = make_batch(params, storage, MaskConfig::dcp_combination());
  for (auto& item : batch) item.label.reset();
  const auto g = compute_batch_gradients<float>(params, batch, LossWeights{});
  EXPECT_TRUE(all_zero(g.grads[params.layout().head_w]));
  EXPECT_GT(g.mean.recon, 0.0);
}

// ------------------------------------------------------------------ training

TEST(Train, DeterministicAndLogged) {
  const auto& data = tiny_data().train;
  const TrainConfig cfg = quick_train();
  std::ostringstream jsonl;
  TrainOptions opt;
  opt.jsonl = &jsonl;
  const auto a = train(cfg, data, init_model(tiny_model(), cfg.seed, data), opt);
  TrainOptions serial;
  serial.execution = Execution::kSerial;
  const auto b = train(cfg, data, init_model(tiny_model(), cfg.seed, data), serial);
  EXPECT_EQ(a.params, b.params);
  const std::size_t steps = cfg.epochs * ((data.size() + cfg.batch_size - 1) / cfg.batch_size);
  ASSERT_EQ(a.log.size(), steps);
  std::size_t lines = 0;
  std::string line;
  std::istringstream in(jsonl.str());
  while (std::getline(in, line)) {
    const Json j = Json::parse(line);
    EXPECT_EQ(j.at("step").get<std::size_t>(), lines);
    EXPECT_TRUE(j.contains("recon") && j.contains("task") && j.contains("final"));
    ++lines;
  }
  EXPECT_EQ(lines, steps);
  EXPECT_FALSE(a.params == init_model(tiny_model(), cfg.seed, data));
}

TEST(Train, MaxStepsCaps) {
  TrainConfig cfg = quick_train();
  cfg.max_steps = 2;
  const auto& data = tiny_data().train;
  EXPECT_EQ(train(cfg, data, init_model(tiny_model(), 1, data)).log.size(), 2u);
}

TEST(Train, NonFiniteLossReportsStep) {
  const auto& data = tiny_data().train;
  auto params = init_model(tiny_model(), 1, data);
  params.tensor(params.layout().patch_w)[0] = NAN;
  try {
    train(quick_train(), data, params);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 0u);
  }
}

// ------------------------------------------------------------------ evaluation

TEST(Evaluate, DeterministicAndValidated) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 5, d.train);
  const double a = evaluate(params, d.test, {0, 1, 2, 3});
  EXPECT_EQ(a, evaluate(params, d.test, {0, 1, 2, 3}));
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
  std::size_t correct = 0;
  for (const auto& s : d.test) correct += predict(params, s.image.select_channels({0, 1, 2, 3})) == s.label;
  EXPECT_DOUBLE_EQ(a, double(correct) / double(d.test.size()));
  EXPECT_THROW(evaluate(params, d.test, {}), std::invalid_argument);
  EXPECT_THROW(evaluate(params, d.test, {0, 9}), std::invalid_argument);
}

// Dropping a channel feeds |subset| * n patch tokens: predictions match a
// model run on the reduced image directly.
TEST(Evaluate, PartialSubsetFeedsOnlyThoseChannels) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 5, d.train);
  const std::vector<int> subset{3, 1};
  std::size_t correct = 0;
  for (const auto& s : d.test) {
    const MultiChannelImage reduced = s.image.select_channels(subset);
    Forward<float> fw(params, Forward<float>::Grad::kNone);
    const auto seq = patchify(fw, prepare_image(params, reduced));
    EXPECT_EQ(seq.length(), 1 + params.config().memory_tokens + subset.size() * params.config().patches_per_channel());
    correct += predict(params, reduced) == s.label;
  }
  EXPECT_DOUBLE_EQ(evaluate(params, d.test, subset), double(correct) / double(d.test.size()));
}

TEST(Evaluate, SweepRowsAndStatistics) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 5, d.train);
  const std::size_t expected_rows[] = {0, 4, 6, 4};  // C(4, 4 - k)
  for (std::size_t k = 1; k < 4; ++k) {
    const EvalReport rep = leave_k_out_sweep(params, d.test, k);
    ASSERT_EQ(rep.rows.size(), expected_rows[k]) << k;
    EXPECT_EQ(rep.k, k);
    double m = 0.0;
    for (const auto& r : rep.rows) {
      EXPECT_EQ(r.channel_ids.size(), 4 - k);
      EXPECT_TRUE(std::is_sorted(r.channel_ids.begin(), r.channel_ids.end()));
      m += r.accuracy;
    }
    m /= double(rep.rows.size());
    double v = 0.0;
    for (const auto& r : rep.rows) v += (r.accuracy - m) * (r.accuracy - m);
    EXPECT_NEAR(rep.mean, m, 1e-12);
    EXPECT_NEAR(rep.stddev, std::sqrt(v / double(rep.rows.size())), 1e-12);
    for (std::size_t i = 1; i < rep.rows.size(); ++i) EXPECT_LT(rep.rows[i - 1].channel_ids, rep.rows[i].channel_ids);

    std::ostringstream csv;
    write_csv(csv, rep);
    const std::string text = csv.str();
    EXPECT_EQ(std::size_t(std::count(text.begin(), text.end(), '\n')), rep.rows.size() + 3);  // header, mean, std
    EXPECT_NE(text.find(std::to_string(k) + ",mean,"), std::string::npos);
    EXPECT_EQ(to_json(rep).at("rows").size(), rep.rows.size());
  }
  EXPECT_THROW(leave_k_out_sweep(params, d.test, 0), std::invalid_argument);
  EXPECT_THROW(leave_k_out_sweep(params, d.test, 4), std::invalid_argument);
}

// ------------------------------------------------------------------ fine-tuning

std::vector<MultiChannelImage> remapped(std::span<const LabeledSample> samples, int from, int to, std::size_t count) {
  std::vector<MultiChannelImage> out;
  for (std::size_t i = 0; i < count; ++i) {
    MultiChannelImage img = samples[i].image;
    for (auto& id : img.channel_ids)
      if (id == from) id = to;
    out.push_back(std::move(img));
  }
  return out;
}

TEST(Finetune, OnlyNovelChannelRowsMove) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 5, d.train);
  const auto images = remapped(d.train, 3, 5, 8);
  FinetuneConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 4;
  const FinetuneResult res = finetune_channel_tokens(params, images, cfg);
  EXPECT_EQ(res.novel_channels, std::vector<int>{5});
  EXPECT_EQ(res.loss_curve.size(), 3u);
  EXPECT_TRUE(res.params.knows_channel(5));
  ASSERT_TRUE(res.params.channel_norms().count(5));
  const ParamId tok = params.layout().channel_tokens;
  for (ParamId id = 0; id < params.count(); ++id) {
    if (id == tok) continue;
    EXPECT_EQ(res.params.tensor(id), params.tensor(id)) << params.name(id);
  }
  const auto& before = params.tensor(tok);
  const auto& after = res.params.tensor(tok);
  for (std::size_t r = 0; r < before.rows(); ++r) {
    const bool same = std::equal(before.row(r).begin(), before.row(r).end(), after.row(r).begin());
    EXPECT_EQ(same, r != 5) << "row " << r;
  }
}

TEST(Finetune, RequiresNovelChannels) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 5, d.train);
  std::vector<MultiChannelImage> images{d.train[0].image};
  EXPECT_THROW(finetune_channel_tokens(params, images, FinetuneConfig{}), std::invalid_argument);
}

TEST(Finetune, MeanReconLossIsDeterministic) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 5, d.train);
  std::vector<MultiChannelImage> images;
  for (std::size_t i = 0; i < 6; ++i) images.push_back(d.train[i].image);
  const MaskConfig m = MaskConfig::dcp_alternate();
  EXPECT_EQ(mean_recon_loss(params, images, m, 3), mean_recon_loss(params, images, m, 3));
  EXPECT_GT(mean_recon_loss(params, images, m, 3), 0.0);
}

// ------------------------------------------------------------------ checkpoint

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 6, d.train);
  const auto bytes = encode_checkpoint(params);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "CHMCKPT1");
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back, params);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto dir = temp_dir("ckpt");
  save_checkpoint(dir / "m.ckpt", params);
  EXPECT_EQ(load_checkpoint(dir / "m.ckpt"), params);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsCorruption) {
  const auto params = init_model(tiny_model(), 6, tiny_data().train);
  const auto bytes = encode_checkpoint(params);

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), std::runtime_error);

  EXPECT_THROW(decode_checkpoint(std::span(bytes).first(bytes.size() - 1)), std::runtime_error);

  auto hash = bytes;
  const std::string text(hash.begin(), hash.end());
  const auto at = text.find("\"config_hash\":\"") + 15;
  hash[at] = hash[at] == '0' ? '1' : '0';
  EXPECT_THROW(decode_checkpoint(hash), std::runtime_error);
}

// ------------------------------------------------------------------ diagnostics

TEST(Diagnostics, AttentionCsv) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 6, d.train);
  const AttentionMap map = attention_map(params, prepare_image(params, d.test[0].image));
  std::ostringstream out;
  write_attention_csv(out, map);
  const std::string s = out.str();
  const std::size_t c = 4, l = params.config().memory_tokens;
  EXPECT_EQ(std::size_t(std::count(s.begin(), s.end(), '\n')), 1 + c * (c + 1 + l));
  EXPECT_EQ(s.substr(0, s.find('\n')), "query_channel,key,weight");
  EXPECT_NE(s.find(",cls,"), std::string::npos);
  EXPECT_NE(s.find(",mem1,"), std::string::npos);
}

TEST(Diagnostics, PngDecodesBack) {
  const auto dir = temp_dir("png");
  std::vector<std::uint8_t> px(5 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::uint8_t(i * 17);
  write_png_gray(dir / "a.png", 5, 3, px);
  std::ifstream f(dir / "a.png", std::ios::binary);
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ASSERT_GT(b.size(), 33u);
  EXPECT_EQ(std::vector<std::uint8_t>(b.begin(), b.begin() + 8),
            (std::vector<std::uint8_t>{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'}));
  EXPECT_EQ(std::string(b.begin() + 12, b.begin() + 16), "IHDR");
  EXPECT_EQ(b[19], 5);
  EXPECT_EQ(b[23], 3);
  // IDAT follows IHDR (8 + 25 bytes).
  const std::size_t len = (std::size_t(b[33]) << 24) | (b[34] << 16) | (b[35] << 8) | b[36];
  EXPECT_EQ(std::string(b.begin() + 37, b.begin() + 41), "IDAT");
  std::vector<std::uint8_t> raw(3 * 6);
  uLongf raw_len = raw.size();
  ASSERT_EQ(uncompress(raw.data(), &raw_len, b.data() + 41, uLong(len)), Z_OK);
  ASSERT_EQ(raw_len, raw.size());
  for (std::size_t y = 0; y < 3; ++y) {
    EXPECT_EQ(raw[y * 6], 0);
    for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(raw[y * 6 + 1 + x], px[y * 5 + x]);
  }
  EXPECT_THROW(write_png_gray(dir / "b.png", 4, 4, px), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST(Diagnostics, ReconDumpWritesAllFiles) {
  const auto& d = tiny_data();
  const auto params = init_model(tiny_model(), 6, d.train);
  const auto dir = temp_dir("recon");
  const MaskPlan plan = draw_mask(params.config().patches_per_channel(), 4, MaskConfig::dcp_combination(), Philox(1));
  const ReconDump dump = recon_dump(params, d.test[0].image, plan, dir);
  EXPECT_EQ(dump.files.size(), 3 * 4 + 1u);
  for (const auto& f : dump.files) EXPECT_TRUE(std::filesystem::exists(f)) << f;
  EXPECT_GT(dump.pixel_loss, 0.0);
  std::ifstream csv(dir / "slots.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, 1 + 4 * params.config().patches_per_channel());
  std::filesystem::remove_all(dir);
}
