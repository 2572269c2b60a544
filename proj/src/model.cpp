#include "fefa/model.hpp"

#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

namespace fefa::model {

using nn::Tensor;

std::string to_string(Family f) {
  switch (f) {
    case Family::vgg: return "vgg";
    case Family::resnet: return "resnet";
    case Family::seresnet: return "seresnet";
  }
  return "?";
}

std::string to_string(FefaMode m) {
  switch (m) {
    case FefaMode::none: return "none";
    case FefaMode::single: return "single";
    case FefaMode::multi: return "multi";
  }
  return "?";
}

Family parse_family(const std::string& s) {
  if (s == "vgg") return Family::vgg;
  if (s == "resnet") return Family::resnet;
  if (s == "seresnet") return Family::seresnet;
  throw std::invalid_argument("unknown backbone family '" + s + "' (expected vgg, resnet or seresnet)");
}

FefaMode parse_fefa_mode(const std::string& s) {
  if (s == "none") return FefaMode::none;
  if (s == "single") return FefaMode::single;
  if (s == "multi") return FefaMode::multi;
  throw std::invalid_argument("unknown fefa_mode '" + s + "' (expected none, single or multi)");
}

void BackboneConfig::validate() const {
  if (channel_widths.empty()) throw std::invalid_argument("backbone needs at least one stage");
  if (block_counts.size() != channel_widths.size())
    throw std::invalid_argument("block_counts and channel_widths must have the same length");
  for (std::size_t b : block_counts)
    if (b == 0) throw std::invalid_argument("every stage needs at least one block");
  for (std::size_t w : channel_widths)
    if (w == 0) throw std::invalid_argument("channel widths must be positive");
  if (embedding_dim == 0) throw std::invalid_argument("embedding_dim must be positive");
  if (input_bins < 2) throw std::invalid_argument("input_bins must be at least 2");
  if (family == Family::seresnet) {
    if (se_reduction == 0) throw std::invalid_argument("se_reduction must be positive");
    for (std::size_t w : channel_widths)
      if (w % se_reduction != 0 || w / se_reduction == 0)
        throw std::invalid_argument("se_reduction " + std::to_string(se_reduction) +
                                    " does not divide channel width " + std::to_string(w));
  }
}

nlohmann::json to_json(const BackboneConfig& cfg) {
  return {{"family", to_string(cfg.family)},
          {"channel_widths", cfg.channel_widths},
          {"block_counts", cfg.block_counts},
          {"embedding_dim", cfg.embedding_dim},
          {"se_reduction", cfg.se_reduction},
          {"fefa_mode", to_string(cfg.fefa_mode)},
          {"fefa_bias", cfg.fefa_bias},
          {"fefa_input_dependent", cfg.fefa_input_dependent},
          {"input_bins", cfg.input_bins}};
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"family", "channel_widths", "block_counts", "embedding_dim",
                                           "se_reduction", "fefa_mode", "fefa_bias", "fefa_input_dependent",
                                           "input_bins"};
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown model config key '" + key + "'");
  BackboneConfig cfg;
  if (j.contains("family")) cfg.family = parse_family(j["family"].get<std::string>());
  if (j.contains("channel_widths")) cfg.channel_widths = j["channel_widths"].get<std::vector<std::size_t>>();
  if (j.contains("block_counts")) cfg.block_counts = j["block_counts"].get<std::vector<std::size_t>>();
  if (j.contains("embedding_dim")) cfg.embedding_dim = j["embedding_dim"].get<std::size_t>();
  if (j.contains("se_reduction")) cfg.se_reduction = j["se_reduction"].get<std::size_t>();
  if (j.contains("fefa_mode")) cfg.fefa_mode = parse_fefa_mode(j["fefa_mode"].get<std::string>());
  if (j.contains("fefa_bias")) cfg.fefa_bias = j["fefa_bias"].get<bool>();
  if (j.contains("fefa_input_dependent")) cfg.fefa_input_dependent = j["fefa_input_dependent"].get<bool>();
  if (j.contains("input_bins")) cfg.input_bins = j["input_bins"].get<std::size_t>();
  cfg.validate();
  return cfg;
}

bool twin_architectures(const BackboneConfig& a, const BackboneConfig& b) {
  BackboneConfig x = a, y = b;
  x.fefa_mode = y.fefa_mode = FefaMode::none;
  x.fefa_bias = y.fefa_bias = true;
  x.fefa_input_dependent = y.fefa_input_dependent = true;
  return x == y;
}

std::size_t strided_bins(std::size_t bins) { return (bins - 1) / 2 + 1; }
std::size_t pooled_bins(std::size_t bins) { return bins / 2; }

Tensor se_block(const Tensor& u, const Tensor& fc1, const Tensor& fc2) {
  if (u.rank() != 4 || fc1.rank() != 2 || fc2.rank() != 2 || fc1.dim(0) != u.dim(1) || fc2.dim(0) != fc1.dim(1) ||
      fc2.dim(1) != u.dim(1))
    throw std::invalid_argument("se_block: input " + nn::shape_string(u.shape()) + " incompatible with fc1 " +
                                nn::shape_string(fc1.shape()) + " and fc2 " + nn::shape_string(fc2.shape()));
  const Tensor s = nn::sigmoid(nn::linear(nn::relu(nn::linear(nn::global_avg_pool(u), fc1)), fc2));
  return nn::channel_scale(u, s);
}

Tensor temporal_average_pool(const Tensor& features) { return nn::mean_over_time(features); }

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // Centered uniform scaled by fan-in: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
  Tensor he_uniform(nn::ParameterSet& params, const std::string& name, nn::Shape shape, std::size_t fan_in) {
    Tensor t = params.add(name, std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.mutable_data()) v = dist(rng_);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

Conv make_conv(Initializer& init, nn::ParameterSet& params, const std::string& name, std::size_t in,
               std::size_t out, std::size_t k, std::size_t stride, std::size_t pad) {
  return Conv{init.he_uniform(params, name + ".weight", {out, in, k, k}, in * k * k), {stride, pad}};
}

nn::BatchNormState make_bn(nn::ParameterSet& params, const std::string& name, std::size_t c) {
  nn::BatchNormState bn;
  bn.gamma = params.add(name + ".gamma", Tensor::full({c}, 1.0, true));
  bn.beta = params.add(name + ".beta", {c});
  bn.running_mean = params.add(name + ".running_mean", Tensor::zeros({c}), false);
  bn.running_var = params.add(name + ".running_var", Tensor::full({c}, 1.0), false);
  return bn;
}

Tensor residual_forward(const ResidualBlock& blk, const Tensor& x, bool training) {
  auto bn1 = blk.bn1, bn2 = blk.bn2;
  Tensor y = nn::relu(nn::batch_norm2d(blk.conv1(x), bn1, training));
  y = nn::batch_norm2d(blk.conv2(y), bn2, training);
  if (blk.se) y = se_block(y, blk.se->fc1, blk.se->fc2);
  Tensor shortcut = x;
  if (blk.shortcut) {
    auto sbn = *blk.shortcut_bn;
    shortcut = nn::batch_norm2d((*blk.shortcut)(x), sbn, training);
  }
  return nn::relu(nn::add(y, shortcut));
}

}  // namespace

SpeakerModel::SpeakerModel(const BackboneConfig& cfg, std::size_t n_speakers, std::uint64_t seed)
    : cfg_(cfg), n_speakers_(n_speakers) {
  cfg_.validate();
  if (n_speakers < 2) throw std::invalid_argument("a speaker model needs at least 2 classes");
  Initializer init(seed);

  // Backbone parameters are registered (and drawn) identically for every
  // FEFA mode, so twins built from one seed share them exactly.
  std::size_t bins = cfg_.input_bins;
  std::size_t channels = 1;
  const bool residual = cfg_.family != Family::vgg;
  if (residual) {
    const std::size_t c0 = cfg_.channel_widths.front();
    stem_ = make_conv(init, params_, "stem.conv", 1, c0, 3, 1, 1);
    stem_bn_ = make_bn(params_, "stem.bn", c0);
    channels = c0;
  }
  for (std::size_t s = 0; s < cfg_.channel_widths.size(); ++s) {
    const std::string sname = "stage" + std::to_string(s + 1);
    const std::size_t width = cfg_.channel_widths[s];
    Stage stage;
    stage.in_bins = bins;
    if (residual) {
      for (std::size_t b = 0; b < cfg_.block_counts[s]; ++b) {
        const std::string bname = sname + ".block" + std::to_string(b + 1);
        const std::size_t stride = b == 0 ? 2 : 1;
        ResidualBlock blk;
        blk.conv1 = make_conv(init, params_, bname + ".conv1", channels, width, 3, stride, 1);
        blk.bn1 = make_bn(params_, bname + ".bn1", width);
        blk.conv2 = make_conv(init, params_, bname + ".conv2", width, width, 3, 1, 1);
        blk.bn2 = make_bn(params_, bname + ".bn2", width);
        if (cfg_.family == Family::seresnet) {
          const std::size_t reduced = width / cfg_.se_reduction;
          SqueezeExcite se;
          se.fc1 = init.he_uniform(params_, bname + ".se.fc1.weight", {width, reduced}, width);
          se.fc2 = init.he_uniform(params_, bname + ".se.fc2.weight", {reduced, width}, reduced);
          blk.se = se;
        }
        if (stride != 1 || channels != width) {
          blk.shortcut = make_conv(init, params_, bname + ".shortcut.conv", channels, width, 1, stride, 0);
          blk.shortcut_bn = make_bn(params_, bname + ".shortcut.bn", width);
        }
        stage.blocks.push_back(std::move(blk));
        channels = width;
        if (stride == 2) bins = strided_bins(bins);
      }
    } else {
      for (std::size_t l = 0; l < cfg_.block_counts[s]; ++l) {
        const std::string lname = sname + ".conv" + std::to_string(l + 1);
        VggLayer layer{make_conv(init, params_, lname, channels, width, 3, 1, 1),
                       make_bn(params_, lname + ".bn", width)};
        stage.layers.push_back(std::move(layer));
        channels = width;
      }
      bins = pooled_bins(bins);
    }
    if (bins == 0) throw std::invalid_argument("input has too few frequency bins for " +
                                               std::to_string(cfg_.channel_widths.size()) + " stages");
    stage.out_bins = bins;
    stages_.push_back(std::move(stage));
  }
  const std::size_t pooled = channels * bins;
  emb_w_ = init.he_uniform(params_, "embedding.weight", {pooled, cfg_.embedding_dim}, pooled);
  emb_b_ = params_.add("embedding.bias", {cfg_.embedding_dim});
  cls_w_ = init.he_uniform(params_, "classifier.weight", {cfg_.embedding_dim, n_speakers}, cfg_.embedding_dim);
  cls_b_ = params_.add("classifier.bias", {n_speakers});

  // FEFA layers start at zero, so they draw nothing from the initializer.
  const attention::FefaOptions fopts{cfg_.fefa_bias, cfg_.fefa_input_dependent};
  if (cfg_.fefa_mode != FefaMode::none) {
    fefa_.emplace_back(params_, "fefa.input", cfg_.input_bins, fopts);
    input_fefa_ = 0;
  }
  if (cfg_.fefa_mode == FefaMode::multi) {
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      Stage& stage = stages_[s];
      if (stage.in_bins == stage.out_bins) continue;
      // The first vgg stage reads the network input, which already has one.
      if (!residual && s == 0) continue;
      stage.fefa = fefa_.size();
      fefa_.emplace_back(params_, "fefa.stage" + std::to_string(s + 1), stage.in_bins, fopts);
    }
  }
}

const attention::FefaLayer* SpeakerModel::input_fefa() const {
  return input_fefa_ ? &fefa_[*input_fefa_] : nullptr;
}

attention::FefaLayer* SpeakerModel::input_fefa() { return input_fefa_ ? &fefa_[*input_fefa_] : nullptr; }

ForwardResult SpeakerModel::run(const Tensor& x, bool training, std::vector<Matrix>* fefa_probs) const {
  Tensor h = x;
  if (x.rank() == 2) h = nn::reshape(x, {1, 1, x.dim(0), x.dim(1)});
  if (h.rank() != 4 || h.dim(1) != 1 || h.dim(2) != cfg_.input_bins)
    throw std::invalid_argument("model expects [N,1," + std::to_string(cfg_.input_bins) + ",T] input, got " +
                                nn::shape_string(x.shape()));
  auto apply_fefa = [&](std::size_t idx, const Tensor& in) {
    return fefa_[idx].forward(in, fefa_probs ? &(*fefa_probs)[idx] : nullptr);
  };

  if (input_fefa_) h = apply_fefa(*input_fefa_, h);
  if (stem_) {
    auto bn = *stem_bn_;
    h = nn::relu(nn::batch_norm2d((*stem_)(h), bn, training));
  }
  for (const Stage& stage : stages_) {
    if (stage.fefa) h = apply_fefa(*stage.fefa, h);
    for (const ResidualBlock& blk : stage.blocks) h = residual_forward(blk, h, training);
    if (!stage.layers.empty()) {
      for (const VggLayer& layer : stage.layers) {
        auto bn = layer.bn;
        h = nn::relu(nn::batch_norm2d(layer.conv(h), bn, training));
      }
      h = nn::max_pool2d(h, 2, 2);
    }
  }
  ForwardResult r;
  r.embedding = nn::linear(temporal_average_pool(h), emb_w_, emb_b_);
  r.logits = nn::linear(r.embedding, cls_w_, cls_b_);
  return r;
}

ForwardResult SpeakerModel::forward(const Tensor& x, bool training) {
  std::vector<Matrix> probs(fefa_.size());
  ForwardResult r = run(x, training, &probs);
  for (std::size_t i = 0; i < fefa_.size(); ++i) fefa_[i].record_probabilities(std::move(probs[i]));
  return r;
}

ForwardResult SpeakerModel::infer(const Tensor& x) const {
  nn::NoGradGuard guard;
  return run(x, false, nullptr);
}

std::size_t SpeakerModel::copy_matching_parameters(const SpeakerModel& src) {
  std::size_t copied = 0;
  for (const auto& p : params_.items()) {
    const nn::Parameter* other = src.parameters().find(p.name);
    if (!other || other->tensor.shape() != p.tensor.shape()) continue;
    Tensor dst = p.tensor;
    const auto from = other->tensor.data();
    std::copy(from.begin(), from.end(), dst.mutable_data().begin());
    ++copied;
  }
  return copied;
}

nn::Checkpoint SpeakerModel::to_checkpoint() const {
  nn::Checkpoint ckpt;
  for (const auto& p : params_.items())
    ckpt.arrays.push_back({p.name, p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
  ckpt.metadata["model"] = to_json(cfg_);
  ckpt.metadata["n_speakers"] = n_speakers_;
  return ckpt;
}

void SpeakerModel::load_parameters(const nn::Checkpoint& ckpt) {
  if (ckpt.metadata.contains("model")) {
    const BackboneConfig stored = backbone_from_json(ckpt.metadata.at("model"));
    if (!(stored == cfg_))
      throw std::runtime_error("checkpoint architecture " + to_json(stored).dump() + " does not match model " +
                               to_json(cfg_).dump());
  }
  for (const auto& p : params_.items()) {
    const nn::NamedArray* a = ckpt.find(p.name);
    if (!a) throw std::runtime_error("checkpoint is missing parameter '" + p.name + "'");
    if (a->shape != p.tensor.shape())
      throw std::runtime_error("checkpoint parameter '" + p.name + "' has shape " + nn::shape_string(a->shape) +
                               ", model expects " + nn::shape_string(p.tensor.shape()));
    Tensor dst = p.tensor;
    std::copy(a->data.begin(), a->data.end(), dst.mutable_data().begin());
  }
}

}  // namespace fefa::model
