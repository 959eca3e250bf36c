#pragma once

// Small datasets, architectures and training budgets shared by the tests.

#include <numeric>

#include "cheer/data.hpp"
#include "cheer/model.hpp"
#include "cheer/random.hpp"
#include "cheer/training.hpp"

namespace cheer::testing {

inline SyntheticSpec small_spec(std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.n_classes = 2;
  s.seq_len = 16;
  s.n_latent = 2;
  s.rich_channels = 3;
  s.poor_channels = 2;
  s.class_separation = 2.0;
  s.n_rich = 200;
  s.n_poor = 120;
  s.n_paired = 80;
  s.seed = seed;
  return s;
}

inline Architecture small_arch() {
  Architecture a;
  a.extractor.n_segments = 4;
  a.extractor.conv_layers = {{3, 2, 1}};
  a.extractor.rnn_hidden = 3;
  return a;
}

inline TrainConfig quick_train(std::uint64_t seed = 0, std::size_t epochs = 4) {
  TrainConfig c;
  c.lr = 0.01;
  c.max_epochs = epochs;
  c.patience = epochs;
  c.batch_size = 16;
  c.seed = seed;
  return c;
}

inline Dataset make_dataset(std::size_t n, std::size_t channels, std::size_t len, std::size_t classes, Rng& rng,
                            double scale = 1.0) {
  Dataset d;
  d.n_channels = channels;
  d.seq_len = len;
  d.n_classes = classes;
  d.channel_ids.resize(channels);
  std::iota(d.channel_ids.begin(), d.channel_ids.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    TimeSeriesSample s;
    s.id = i;
    s.label = rng.below(classes);
    s.n_channels = channels;
    s.seq_len = len;
    s.values.resize(channels * len);
    for (double& v : s.values) v = scale * rng.normal();
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace cheer::testing
