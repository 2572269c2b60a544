#include "fefa/train.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace fefa::train {

nn::Tensor stack_features(std::span<const Matrix> features) {
  if (features.empty()) throw std::invalid_argument("cannot stack an empty batch");
  const std::size_t f = features[0].rows, t = features[0].cols;
  std::vector<double> data;
  data.reserve(features.size() * f * t);
  for (const Matrix& m : features) {
    if (m.rows != f || m.cols != t)
      throw std::invalid_argument("batch mixes feature sizes " + std::to_string(f) + "x" + std::to_string(t) +
                                  " and " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
    data.insert(data.end(), m.data.begin(), m.data.end());
  }
  return nn::Tensor::from({features.size(), 1, f, t}, std::move(data));
}

nn::Tensor stack_batch(std::span<const Example> data, std::span<const std::size_t> indices) {
  std::vector<Matrix> feats;
  feats.reserve(indices.size());
  for (std::size_t i : indices) feats.push_back(data[i].features);
  return stack_features(feats);
}

EpochStats train_epoch(model::SpeakerModel& model, nn::Adam& opt, std::span<const Example> data,
                       std::size_t batch_size, std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("empty training set");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  for (const Example& ex : data)
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= model.n_speakers())
      throw std::out_of_range("training label " + std::to_string(ex.label) + " outside [0, " +
                              std::to_string(model.n_speakers()) + ")");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  EpochStats stats;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    std::vector<int> labels;
    for (std::size_t i : idx) labels.push_back(data[i].label);

    const auto out = model.forward(stack_batch(data, idx), true);
    const nn::Tensor loss = nn::softmax_cross_entropy(out.logits, labels);
    model.parameters().zero_grad();
    nn::backward(loss);
    opt.step(model.parameters());

    loss_sum += loss.item() * static_cast<double>(idx.size());
    const std::size_t k = out.logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = out.logits.data().subspan(r * k, k);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == labels[r]) ++correct;
    }
    ++stats.steps;
  }
  stats.mean_loss = loss_sum / static_cast<double>(data.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return stats;
}

std::vector<double> embed(const model::SpeakerModel& model, const Matrix& features) {
  const auto out = model.infer(nn::Tensor::from({1, 1, features.rows, features.cols}, features.data));
  return {out.embedding.data().begin(), out.embedding.data().end()};
}

std::vector<std::vector<double>> embed_all(const model::SpeakerModel& model, std::span<const Matrix> features,
                                           unsigned threads) {
  std::vector<std::vector<double>> out(features.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, features.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < features.size(); ++i) out[i] = embed(model, features[i]);
    return out;
  }
  std::vector<std::jthread> workers;
  for (unsigned w = 0; w < threads; ++w)
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < features.size(); i += threads) out[i] = embed(model, features[i]);
    });
  return out;
}

nn::Checkpoint training_checkpoint(const model::SpeakerModel& model, const nn::Adam& opt, std::size_t epoch) {
  nn::Checkpoint ckpt = model.to_checkpoint();
  std::size_t slot = 0;
  const auto& moments = opt.moments();
  for (const auto& p : model.parameters().items()) {
    if (!p.trainable) continue;
    if (slot < moments.size()) {
      ckpt.arrays.push_back({"adam.m/" + p.name, p.tensor.shape(), moments[slot].m});
      ckpt.arrays.push_back({"adam.v/" + p.name, p.tensor.shape(), moments[slot].v});
    }
    ++slot;
  }
  ckpt.metadata["epoch"] = epoch;
  ckpt.metadata["adam_steps"] = opt.steps();
  ckpt.metadata["lr"] = opt.lr();
  return ckpt;
}

std::size_t restore_optimizer(const nn::Checkpoint& ckpt, const model::SpeakerModel& model, nn::Adam& opt) {
  const std::uint64_t steps = ckpt.metadata.value("adam_steps", std::uint64_t{0});
  std::vector<nn::Adam::Moments> moments;
  if (steps > 0) {
    for (const auto& p : model.parameters().items()) {
      if (!p.trainable) continue;
      const nn::NamedArray* m = ckpt.find("adam.m/" + p.name);
      const nn::NamedArray* v = ckpt.find("adam.v/" + p.name);
      if (!m || !v) throw std::runtime_error("checkpoint lacks optimizer state for '" + p.name + "'");
      moments.push_back({m->data, v->data});
    }
  }
  opt.restore(steps, std::move(moments));
  return ckpt.metadata.value("epoch", std::size_t{0});
}

}  // namespace fefa::train
