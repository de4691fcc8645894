#include "chamae/harness/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "chamae/encoder.hpp"
#include "chamae/fusion.hpp"
#include "chamae/harness/train.hpp"
#include "chamae/tokenizer.hpp"

namespace chamae {

std::size_t predict(const ModelParams<float>& params, const MultiChannelImage& image) {
  Forward<float> fw(params, Forward<float>::Grad::kNone);
  const MultiChannelImage x = prepare_image(params, image);
  TokenSequence<float> tokens = patchify(fw, x);
  EncodedSequence<float> enc = encode_tokens(fw, tokens);
  const auto& logits = fw.graph().value(classify(fw, pool(fw, enc, params.config().pool)));
  return static_cast<std::size_t>(std::max_element(logits.storage().begin(), logits.storage().end()) -
                                  logits.storage().begin());
}

double evaluate(const ModelParams<float>& params, std::span<const LabeledSample> data, const std::vector<int>& subset) {
  if (subset.empty()) throw std::invalid_argument("channel subset is empty");
  for (int id : subset) {
    if (!params.knows_channel(id)) throw std::invalid_argument("channel " + std::to_string(id) + " was not seen in training");
  }
  if (data.empty()) return 0.0;
  std::vector<std::uint8_t> hit(data.size(), 0);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < static_cast<long>(data.size()); ++i) {
    try {
      const auto& s = data[i];
      hit[i] = predict(params, s.image.select_channels(subset)) == s.label;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  std::size_t correct = 0;
  for (auto h : hit) correct += h;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

void combinations(const std::vector<int>& items, std::size_t r, std::size_t start, std::vector<int>& cur,
                  std::vector<std::vector<int>>& out) {
  if (cur.size() == r) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = start; i < items.size(); ++i) {
    cur.push_back(items[i]);
    combinations(items, r, i + 1, cur, out);
    cur.pop_back();
  }
}

}  // namespace

EvalReport leave_k_out_sweep(const ModelParams<float>& params, std::span<const LabeledSample> data, std::size_t k) {
  if (data.empty()) throw std::invalid_argument("sweep needs data");
  const std::vector<int>& ids = data.front().image.channel_ids;
  if (k < 1 || k >= ids.size()) {
    throw std::invalid_argument("k must satisfy 1 <= k < c (c = " + std::to_string(ids.size()) + ")");
  }
  std::vector<std::vector<int>> subsets;
  std::vector<int> cur;
  combinations(ids, ids.size() - k, 0, cur, subsets);

  EvalReport report;
  report.k = k;
  Json cfg = params.config();
  report.config_hash = config_hash(cfg);
  for (const auto& s : subsets) report.rows.push_back({s, evaluate(params, data, s)});
  double sum = 0.0;
  for (const auto& r : report.rows) sum += r.accuracy;
  report.mean = sum / static_cast<double>(report.rows.size());
  double var = 0.0;
  for (const auto& r : report.rows) var += (r.accuracy - report.mean) * (r.accuracy - report.mean);
  report.stddev = std::sqrt(var / static_cast<double>(report.rows.size()));
  return report;
}

void write_csv(std::ostream& out, const EvalReport& report) {
  out << "k,channels,accuracy\n";
  for (const auto& r : report.rows) {
    out << report.k << ',';
    for (std::size_t i = 0; i < r.channel_ids.size(); ++i) out << (i ? ";" : "") << r.channel_ids[i];
    out << ',' << r.accuracy << '\n';
  }
  out << report.k << ",mean," << report.mean << '\n';
  out << report.k << ",std," << report.stddev << '\n';
}

Json to_json(const EvalReport& report) {
  Json rows = Json::array();
  for (const auto& r : report.rows) rows.push_back({{"channels", r.channel_ids}, {"accuracy", r.accuracy}});
  return Json{{"k", report.k},           {"rows", rows},
              {"mean", report.mean},     {"std", report.stddev},
              {"config_hash", report.config_hash}};
}

double mean_recon_loss(const ModelParams<float>& params, std::span<const MultiChannelImage> images,
                       const MaskConfig& mask, std::uint64_t seed, const LossWeights& weights) {
  if (images.empty()) return 0.0;
  LossWeights w = weights;
  w.lambda_recon = 1.0;
  const std::size_t n = params.config().patches_per_channel();
  std::vector<double> loss(images.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < static_cast<long>(images.size()); ++i) {
    Forward<float> fw(params, Forward<float>::Grad::kNone);
    const MultiChannelImage x = prepare_image(params, images[i]);
    const MaskPlan plan = draw_mask(n, x.channels(), mask, mask_rng(seed, 0, static_cast<std::size_t>(i)));
    loss[i] = sample_objective(fw, x, std::nullopt, plan, w).breakdown.recon;
  }
  double sum = 0.0;
  for (double l : loss) sum += l;
  return sum / static_cast<double>(images.size());
}

FinetuneResult finetune_channel_tokens(const ModelParams<float>& params, std::span<const MultiChannelImage> images,
                                       const FinetuneConfig& cfg) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("fine-tuning needs images");
  FinetuneResult result{params, {}, {}};
  ModelParams<float>& out = result.params;
  const ModelConfig& mc = out.config();

  std::set<int> seen;
  for (const auto& img : images) {
    for (int id : img.channel_ids) {
      if (!params.knows_channel(id) && seen.insert(id).second) result.novel_channels.push_back(id);
    }
  }
  if (result.novel_channels.empty()) throw std::invalid_argument("no novel channels in the fine-tuning images");

  // Fresh rows for the new channels, plus their standardization statistics.
  const ParamId table = out.layout().channel_tokens;
  std::vector<LabeledSample> wrapped;
  wrapped.reserve(images.size());
  for (const auto& img : images) wrapped.push_back({img, 0, {}});
  const auto stats = channel_statistics(wrapped);
  Philox root(cfg.seed, 0x6e6f76656cULL);
  for (int id : result.novel_channels) {
    out.add_known_channel(id);
    Philox rng = root.derive(static_cast<std::uint64_t>(id));
    for (auto& x : out.tensor(table).row(static_cast<std::size_t>(id))) x = static_cast<float>(0.02 * rng.normal());
    out.channel_norms()[id] = stats.at(id);
  }

  std::vector<MultiChannelImage> prepared;
  prepared.reserve(images.size());
  for (const auto& img : images) prepared.push_back(prepare_image(out, img));

  std::vector<bool> trainable(out.count(), false);
  trainable[table] = true;
  LossWeights w;
  w.lambda_recon = 1.0;

  const std::size_t dim = mc.dim;
  const std::size_t rows = result.novel_channels.size();
  std::vector<double> m(rows * dim, 0.0), v(rows * dim, 0.0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::size_t n = mc.patches_per_channel();

  std::vector<std::size_t> order(prepared.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  std::size_t epoch = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<BatchItem> batch;
    while (batch.size() < std::min(cfg.batch_size, prepared.size())) {
      if (cursor == order.size()) {
        Philox shuffle = Philox(cfg.seed, 0x66746f72ULL).derive(epoch++);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const auto& img = prepared[idx];
      batch.push_back({&img, std::nullopt, draw_mask(n, img.channels(), cfg.mask, mask_rng(cfg.seed, step, idx))});
    }
    BatchGradients<float> bg = compute_batch_gradients(out, std::span<const BatchItem>(batch), w, &trainable);
    result.loss_curve.push_back(bg.mean.recon);

    const double c1 = 1.0 - std::pow(b1, double(step + 1)), c2 = 1.0 - std::pow(b2, double(step + 1));
    for (std::size_t r = 0; r < rows; ++r) {
      const auto id = static_cast<std::size_t>(result.novel_channels[r]);
      auto token = out.tensor(table).row(id);
      const auto grad = std::span<const float>(bg.grads[table].row(id));
      for (std::size_t k = 0; k < dim; ++k) {
        double& mk = m[r * dim + k];
        double& vk = v[r * dim + k];
        mk = b1 * mk + (1 - b1) * grad[k];
        vk = b2 * vk + (1 - b2) * double(grad[k]) * grad[k];
        token[k] = static_cast<float>(token[k] - cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + eps));
      }
    }
  }
  return result;
}

}  // namespace chamae
