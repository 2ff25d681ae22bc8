#include "latentadv/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>

#include "latentadv/errors.hpp"

namespace latentadv {

namespace {

class Adam {
 public:
  explicit Adam(double learning_rate) : lr_(learning_rate) {}

  void step(LayerStack& stack, const ad::Gradients& grads, std::span<const LayerParams> params) {
    auto& layers = stack.layers();
    if (m_.empty()) {
      for (const auto& layer : layers) {
        m_.emplace_back(layer.weight.shape());
        m_.emplace_back(layer.bias.shape());
      }
      v_ = m_;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < layers.size(); ++i) {
      update(layers[i].weight, grads[params[i].weight], m_[2 * i], v_[2 * i], c1, c2);
      update(layers[i].bias, grads[params[i].bias], m_[2 * i + 1], v_[2 * i + 1], c1, c2);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  void update(Tensor& w, const Tensor& g, Tensor& m, Tensor& v, double c1, double c2) const {
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = kBeta1 * m[k] + (1 - kBeta1) * g[k];
      v[k] = kBeta2 * v[k] + (1 - kBeta2) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
    }
  }

  double lr_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

void check_trainable(const Dataset& data, const TrainOptions& options) {
  require(!data.empty(), ErrorCode::invalid_argument, "training needs a non-empty dataset");
  data.validate();
  require(options.batch_size >= 1, ErrorCode::invalid_argument, "batch size must be positive");
  require(options.learning_rate > 0, ErrorCode::invalid_argument, "learning rate must be positive");
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch)));
  }
  return out;
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor out({labels.size(), classes}, 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) out.at(r, labels[r]) = 1.0;
  return out;
}

// Mean cross-entropy of logits against one-hot targets.
ad::Var cross_entropy(ad::Var logits, ad::Var targets) {
  const double batch = static_cast<double>(logits.value().rows());
  return ad::scale(ad::sum(ad::mul(targets, ad::log_softmax(logits))), -1.0 / batch);
}

LayerStack make_stack(std::span<const std::size_t> widths, Activation hidden, Activation last,
                      std::mt19937_64& rng) {
  std::vector<Activation> acts(widths.size() - 1, hidden);
  acts.back() = last;
  return LayerStack::random(widths, acts, rng);
}

using Perturb = std::function<Tensor(const Classifier&, const Tensor&, std::span<const std::size_t>)>;

ClassifierTraining fit_classifier(const Dataset& data, const TrainOptions& options, const Architecture& arch,
                                  const Perturb& perturb) {
  check_trainable(data, options);
  std::mt19937_64 rng(options.seed);
  Classifier model(make_stack(arch.classifier_widths, Activation::relu, Activation::identity, rng));
  LayerStack stack = model.stack();
  Adam adam(options.learning_rate);
  ClassifierTraining out;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& indices : shuffled_batches(data.size(), options.batch_size, rng)) {
      std::vector<std::size_t> labels;
      for (auto i : indices) labels.push_back(data.labels[i]);
      Tensor inputs = data.batch(indices);
      if (perturb) inputs = perturb(Classifier(stack), inputs, labels);
      ad::Tape tape;
      const auto params = stack.bind(tape, true);
      const ad::Var loss = cross_entropy(stack.forward(params, tape.constant(std::move(inputs))),
                                         tape.constant(one_hot(labels, stack.out_dim())));
      total += loss.value().item() * static_cast<double>(indices.size());
      const auto grads = tape.backward(loss);
      adam.step(stack, grads, params);
    }
    out.epoch_loss.push_back(total / static_cast<double>(data.size()));
  }
  out.model = Classifier(std::move(stack));
  return out;
}

}  // namespace

ClassifierTraining train_classifier(const Dataset& data, const TrainOptions& options, const Architecture& arch) {
  return fit_classifier(data, options, arch, nullptr);
}

ClassifierTraining adversarial_train(const Dataset& data, const TrainOptions& options, const PgdOptions& pgd,
                                     const Architecture& arch) {
  require(pgd.epsilon >= 0, ErrorCode::invalid_argument, "PGD epsilon must be non-negative");
  if (pgd.epsilon == 0.0) return train_classifier(data, options, arch);
  // Separate stream so the batch order matches plain training.
  auto noise_rng = std::make_shared<std::mt19937_64>(options.seed ^ 0xA5A5A5A5ULL);
  Perturb perturb = [pgd, noise_rng](const Classifier& c, const Tensor& x, std::span<const std::size_t> labels) {
    return pgd_attack(c, x, labels, pgd, *noise_rng);
  };
  return fit_classifier(data, options, arch, perturb);
}

Tensor pgd_attack(const Classifier& classifier, const Tensor& batch, std::span<const std::size_t> labels,
                  const PgdOptions& pgd, std::mt19937_64& rng) {
  const double eps = pgd.epsilon;
  if (eps == 0.0 || pgd.steps == 0) return batch;
  const double step = pgd.step_fraction * eps;
  std::uniform_real_distribution<double> start(-eps, eps);
  Tensor x = batch;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(batch[i] + start(rng), 0.0, 1.0);
  const Tensor targets = one_hot(labels, classifier.class_count());
  for (std::size_t s = 0; s < pgd.steps; ++s) {
    ad::Tape tape;
    const auto params = classifier.stack().bind(tape, false);
    const ad::Var input = tape.variable(x);
    const ad::Var loss = cross_entropy(classifier.stack().forward(params, input), tape.constant(targets));
    const Tensor g = tape.backward(loss)[input];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double moved = x[i] + step * ((g[i] > 0) - (g[i] < 0));
      x[i] = std::clamp(std::clamp(moved, batch[i] - eps, batch[i] + eps), 0.0, 1.0);
    }
  }
  return x;
}

AutoencoderTraining train_autoencoder(const Dataset& data, const TrainOptions& options, const Architecture& arch) {
  check_trainable(data, options);
  require(arch.encoder_widths.back() == arch.decoder_widths.front(), ErrorCode::invalid_argument,
          "encoder output width must equal decoder latent width");
  std::mt19937_64 rng(options.seed);
  LayerStack encoder = make_stack(arch.encoder_widths, Activation::leaky_relu, Activation::identity, rng);
  LayerStack decoder = make_stack(arch.decoder_widths, Activation::leaky_relu, Activation::sigmoid, rng);
  Adam enc_adam(options.learning_rate), dec_adam(options.learning_rate);
  AutoencoderTraining out;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& indices : shuffled_batches(data.size(), options.batch_size, rng)) {
      const double batch = static_cast<double>(indices.size());
      ad::Tape tape;
      const auto enc_params = encoder.bind(tape, true);
      const auto dec_params = decoder.bind(tape, true);
      const ad::Var x = tape.constant(data.batch(indices));
      const ad::Var z = encoder.forward(enc_params, x);
      const ad::Var recon = decoder.forward(dec_params, z);
      ad::Var loss = ad::scale(ad::sum(ad::square(ad::sub(recon, x))), 1.0 / batch);
      if (options.latent_penalty > 0) {
        loss = ad::add(loss, ad::scale(ad::sum(ad::square(z)), options.latent_penalty / batch));
      }
      total += loss.value().item() * batch;
      const auto grads = tape.backward(loss);
      enc_adam.step(encoder, grads, enc_params);
      dec_adam.step(decoder, grads, dec_params);
    }
    out.epoch_loss.push_back(total / static_cast<double>(data.size()));
  }

  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor codes = encoder.forward(data.batch(all));
  const std::size_t dim = codes.cols();
  out.latent_mean = Tensor({dim}, 0.0);
  out.latent_std = Tensor({dim}, 0.0);
  for (std::size_t r = 0; r < codes.rows(); ++r)
    for (std::size_t j = 0; j < dim; ++j) out.latent_mean[j] += codes.at(r, j);
  for (std::size_t j = 0; j < dim; ++j) out.latent_mean[j] /= static_cast<double>(codes.rows());
  for (std::size_t r = 0; r < codes.rows(); ++r)
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = codes.at(r, j) - out.latent_mean[j];
      out.latent_std[j] += d * d;
    }
  for (std::size_t j = 0; j < dim; ++j) out.latent_std[j] = std::sqrt(out.latent_std[j] / static_cast<double>(codes.rows()));

  out.encoder = Encoder(std::move(encoder));
  out.decoder = std::move(decoder);
  return out;
}

double accuracy(const Classifier& classifier, const Dataset& data) {
  require(!data.empty(), ErrorCode::invalid_argument, "accuracy on an empty dataset");
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor probs = classifier.classify(data.batch(all));
  std::size_t correct = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const double* row = probs.data().data() + r * probs.cols();
    const auto pred = static_cast<std::size_t>(std::max_element(row, row + probs.cols()) - row);
    correct += pred == data.labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double robust_accuracy(const Classifier& classifier, const Dataset& data, const PgdOptions& pgd,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  Dataset attacked = data;
  const Tensor adv = pgd_attack(classifier, data.batch(all), data.labels, pgd, rng);
  const std::size_t n = adv.cols();
  for (std::size_t r = 0; r < data.size(); ++r) {
    attacked.images[r] = Tensor({n}, std::vector<double>(adv.data().begin() + static_cast<std::ptrdiff_t>(r * n),
                                                         adv.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * n)));
  }
  return accuracy(classifier, attacked);
}

double reconstruction_error(const Encoder& encoder, const LayerStack& decoder, const Dataset& data) {
  require(!data.empty(), ErrorCode::invalid_argument, "reconstruction error on an empty dataset");
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor x = data.batch(all);
  const Tensor recon = decoder.forward(encoder.encode(x));
  double total = 0.0;
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < data.size(); ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = recon.at(r, j) - x.at(r, j);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(data.size());
}

}  // namespace latentadv
