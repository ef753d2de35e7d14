#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace mtlface {

struct ModelConfig {
  std::string preset = "desk";
  int image_size = 64;
  int n_groups = 7;
  int num_classes = 20;

  int stem_width = 8;
  std::vector<int> enc_widths{8, 16, 32, 64};
  int blocks_per_stage = 1;

  int se_reduction = 16;
  int sa_kernel = 7;
  int age_hidden = 512;
  int embed_dim = 512;

  int bank_filters = 16;  // F
  int bank_shared = 4;    // S
  int icbs_per_icm = 4;
  int style_dim = 128;
  int disc_width = 16;
  std::vector<int> perceptual_widths{8, 16, 32, 64};
  std::uint64_t seed = 1;

  /// Channels of the three skips and condition levels, coarse to fine.
  std::vector<int> level_widths() const {
    return {enc_widths[2], enc_widths[1], enc_widths[0]};
  }
  int feature_channels() const { return enc_widths[3]; }
  int feature_size() const { return image_size / 16; }

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;

  static ModelConfig desk();
  static ModelConfig paper();
  static ModelConfig from_preset(const std::string& name);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace mtlface
