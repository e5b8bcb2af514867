#include "semimoe/evaluation.hpp"

#include <stdexcept>

namespace semimoe {

namespace {

void overlap_counts(const Tensor& pred, const Tensor& truth, double& inter, double& p, double& t) {
  if (!pred.same_shape(truth))
    throw std::invalid_argument("overlap metrics: shape mismatch " + pred.shape_str() + " vs " +
                                truth.shape_str());
  inter = p = t = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool a = pred[i] == 1.0, b = truth[i] == 1.0;
    if (a) p += 1.0;
    if (b) t += 1.0;
    if (a && b) inter += 1.0;
  }
}

}  // namespace

double dice_score(const Tensor& pred, const Tensor& truth) {
  double inter, p, t;
  overlap_counts(pred, truth, inter, p, t);
  if (p + t == 0.0) return 1.0;
  return 2.0 * inter / (p + t);
}

double jaccard_score(const Tensor& pred, const Tensor& truth) {
  double inter, p, t;
  overlap_counts(pred, truth, inter, p, t);
  const double uni = p + t - inter;
  if (uni == 0.0) return 1.0;
  return inter / uni;
}

EvalScores evaluate(const ExpertBundle& bundle, const GateStack& gates,
                    const std::vector<Sample>& test, int64_t batch_size) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  NoGradGuard inference;
  EvalScores scores;
  const auto& tasks = bundle.tasks();
  std::map<Task, std::vector<double>> wsum;
  for (Task t : gates.gate_tasks())
    wsum[t].assign(static_cast<size_t>(gates.config().num_experts), 0.0);

  const int64_t n = static_cast<int64_t>(test.size());
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t bs = std::min<int64_t>(batch_size, n - start);
    const int64_t H = test[static_cast<size_t>(start)].image.size(1);
    const int64_t W = test[static_cast<size_t>(start)].image.size(2);
    Tensor images({bs, 3, H, W});
    for (int64_t b = 0; b < bs; ++b)
      std::copy_n(test[static_cast<size_t>(start + b)].image.data(), 3 * H * W,
                  images.data() + b * 3 * H * W);
    auto outs = bundle.forward(constant(std::move(images)));
    const Tensor pred = argmax_channel(outs.at(Task::kSeg).prediction.value());

    auto xg = concat_features(outs, tasks);
    auto gouts = gates.forward(xg, nullptr);
    const Tensor pred_gate = argmax_channel(gouts.at(Task::kSeg).fused.value());
    for (const auto& [task, gout] : gouts) {
      const auto& w = gout.weights.value();
      for (int64_t b = 0; b < bs; ++b)
        for (int64_t m = 0; m < w.size(1); ++m)
          wsum[task][static_cast<size_t>(m)] += w.at2(b, m);
    }

    for (int64_t b = 0; b < bs; ++b) {
      const Sample& s = test[static_cast<size_t>(start + b)];
      if (!s.mask) throw std::invalid_argument("evaluate: test sample " + s.id + " has no mask");
      Tensor p({H, W}), pg({H, W});
      std::copy_n(pred.data() + b * H * W, H * W, p.data());
      std::copy_n(pred_gate.data() + b * H * W, H * W, pg.data());
      scores.dice += dice_score(p, *s.mask);
      scores.jaccard += jaccard_score(p, *s.mask);
      scores.dice_gate += dice_score(pg, *s.mask);
      scores.jaccard_gate += jaccard_score(pg, *s.mask);
    }
  }
  scores.n_images = n;
  scores.dice /= static_cast<double>(n);
  scores.jaccard /= static_cast<double>(n);
  scores.dice_gate /= static_cast<double>(n);
  scores.jaccard_gate /= static_cast<double>(n);
  for (auto& [task, v] : wsum) {
    for (auto& x : v) x /= static_cast<double>(n);
    scores.gate_weight_mean[task] = v;
  }
  return scores;
}

}  // namespace semimoe
