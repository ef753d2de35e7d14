#pragma once

// Small models and toy batches shared by the unit suites.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mtlface/data/data.hpp"
#include "mtlface/eval/partition.hpp"
#include "mtlface/model/config.hpp"
#include "mtlface/training/training.hpp"

namespace testsupport {

inline mtlface::ModelConfig tiny_config(int num_classes = 4) {
  mtlface::ModelConfig c;
  c.image_size = 32;
  c.num_classes = num_classes;
  c.stem_width = 4;
  c.enc_widths = {4, 8, 8, 16};
  c.se_reduction = 4;
  c.sa_kernel = 3;
  c.age_hidden = 16;
  c.embed_dim = 16;
  c.bank_filters = 8;
  c.bank_shared = 2;
  c.icbs_per_icm = 2;
  c.style_dim = 16;
  c.disc_width = 8;
  c.perceptual_widths = {4, 8};
  return c;
}

inline mtlface::Tensor<float> random_images(std::int64_t n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  mtlface::Tensor<float> t({n, 3, size, size});
  for (auto& v : t.span()) v = u(rng);
  return t;
}

/// In-memory toy dataset: identity k, ages spread over all groups.
inline mtlface::training::Dataset toy_dataset(int n_ids, int per_id, int size, std::uint64_t seed = 7,
                                              int first_sample = 0) {
  using namespace mtlface;
  training::Dataset d;
  d.images = Tensor<float>({static_cast<std::int64_t>(n_ids) * per_id, 3, size, size});
  const std::size_t per = static_cast<std::size_t>(3) * size * size;
  std::size_t i = 0;
  for (int id = 0; id < n_ids; ++id)
    for (int s = first_sample; s < first_sample + per_id; ++s, ++i) {
      const double age = data::toy_age(seed, id, s);
      const auto img = data::preprocess(data::render_toy_face(seed, id, age, s, size), size);
      std::copy(img.data(), img.data() + per, d.images.data() + i * per);
      d.identities.push_back(id);
      d.ages.push_back(age);
      d.groups.push_back(age_to_group(age));
    }
  return d;
}

/// Fresh scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() / ("mtlface_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace testsupport
