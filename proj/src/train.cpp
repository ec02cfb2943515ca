#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "faithbench/model.hpp"
#include "faithbench/rng.hpp"

namespace faithbench {

TrainedModel train(const Corpus& train_split, const Corpus& val_split, const ModelSpec& spec,
                   const TrainHyperparams& hp) {
  if (train_split.examples.empty()) throw std::invalid_argument("train: empty corpus");
  for (const Example& ex : train_split.examples) {
    if (ex.label < 0 || ex.label >= spec.num_classes)
      throw std::invalid_argument("train: label " + std::to_string(ex.label) +
                                  " outside the configured " + std::to_string(spec.num_classes) +
                                  " classes");
    if (ex.ids.empty()) throw std::invalid_argument("train: empty example in corpus");
  }

  ModelSpec effective = spec;
  if (effective.vocab_size == 0 && train_split.vocab)
    effective.vocab_size = train_split.vocab->size();
  TrainedModel model(effective, train_split.vocab);

  auto params = model.parameters();
  const std::size_t n_params = params.size();
  std::vector<std::vector<double>> adam_m(n_params), adam_v(n_params), grad_acc(n_params);
  for (std::size_t i = 0; i < n_params; ++i) {
    adam_m[i].assign(params[i].second->size(), 0.0);
    adam_v[i].assign(params[i].second->size(), 0.0);
    grad_acc[i].assign(params[i].second->size(), 0.0);
  }
  int adam_t = 0;

  const bool has_val = !val_split.examples.empty();
  double best_metric = -1.0;
  std::vector<std::vector<double>> best_snapshot;
  int best_epoch = 0;
  int stale_epochs = 0;
  double last_epoch_loss = 0.0;
  int epochs_run = 0;

  std::vector<std::size_t> order(train_split.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto snapshot_params = [&]() {
    std::vector<std::vector<double>> snap;
    snap.reserve(n_params);
    for (auto& [name, tensor] : params) snap.push_back(tensor->values());
    return snap;
  };

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng =
        make_rng(effective.seed, 1000 + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t processed = 0;
    while (processed < order.size()) {
      const std::size_t batch_end =
          std::min(order.size(), processed + static_cast<std::size_t>(hp.batch_size));
      for (auto& g : grad_acc) std::fill(g.begin(), g.end(), 0.0);
      const double batch_n = static_cast<double>(batch_end - processed);

      for (std::size_t bi = processed; bi < batch_end; ++bi) {
        const Example& ex = train_split.examples[order[bi]];
        Tape tape;
        auto fwd = model.forward_for_training(tape, ex.ids);
        Tensor probs = softmax(fwd.logits);
        Tensor loss = scalar_mul(log(pick(probs, ex.label)), -1.0);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value))
          throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                   std::to_string(epoch));
        epoch_loss += loss_value;
        tape.backward(loss);
        for (std::size_t i = 0; i < n_params; ++i) {
          if (!tape.has_gradient(fwd.watched[i])) continue;
          const std::vector<double>& g = tape.gradient(fwd.watched[i]);
          for (std::size_t j = 0; j < g.size(); ++j) grad_acc[i][j] += g[j];
        }
      }

      ++adam_t;
      const double bc1 = 1.0 - std::pow(hp.beta1, adam_t);
      const double bc2 = 1.0 - std::pow(hp.beta2, adam_t);
      for (std::size_t i = 0; i < n_params; ++i) {
        std::vector<double>& value = params[i].second->values_mut();
        for (std::size_t j = 0; j < value.size(); ++j) {
          const double g = grad_acc[i][j] / batch_n;
          adam_m[i][j] = hp.beta1 * adam_m[i][j] + (1.0 - hp.beta1) * g;
          adam_v[i][j] = hp.beta2 * adam_v[i][j] + (1.0 - hp.beta2) * g * g;
          const double mhat = adam_m[i][j] / bc1;
          const double vhat = adam_v[i][j] / bc2;
          value[j] -= hp.learning_rate * mhat / (std::sqrt(vhat) + hp.adam_eps);
        }
      }
      processed = batch_end;
    }

    last_epoch_loss = epoch_loss / static_cast<double>(order.size());
    epochs_run = epoch;

    const double metric = has_val ? accuracy(model, val_split) : accuracy(model, train_split);
    if (metric > best_metric + 1e-12) {
      best_metric = metric;
      best_snapshot = snapshot_params();
      best_epoch = epoch;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
      if (stale_epochs >= hp.patience) break;
    }
  }

  if (!best_snapshot.empty()) {
    for (std::size_t i = 0; i < n_params; ++i) params[i].second->values_mut() = best_snapshot[i];
  }

  TrainMeta& meta = model.meta();
  meta.epochs = epochs_run;
  meta.final_loss = last_epoch_loss;
  meta.seed = effective.seed;
  meta.train_accuracy = accuracy(model, train_split);
  meta.val_accuracy = has_val ? best_metric : meta.train_accuracy;
  meta.accuracy_floor_met = meta.train_accuracy >= hp.accuracy_floor;
  (void)best_epoch;
  return model;
}

}  // namespace faithbench
