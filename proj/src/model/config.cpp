#include "mtlface/model/config.hpp"

#include <stdexcept>

namespace mtlface {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (image_size < 32 || image_size % 16 != 0) fail("image_size must be a multiple of 16, >= 32");
  if (n_groups < 2) fail("n_groups must be >= 2");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (enc_widths.size() != 4) fail("enc_widths needs 4 stages");
  for (int w : enc_widths)
    if (w < 4) fail("encoder widths must be >= 4");
  if (blocks_per_stage < 1) fail("blocks_per_stage must be >= 1");
  if (se_reduction < 1 || feature_channels() / se_reduction < 1) fail("se_reduction too large");
  if (sa_kernel < 1 || sa_kernel % 2 == 0) fail("sa_kernel must be odd");
  if (bank_filters < 4) fail("bank_filters must be >= 4");
  if (bank_shared < 0 || bank_shared >= bank_filters) fail("bank_shared must be in [0, F)");
  if (icbs_per_icm < 1) fail("icbs_per_icm must be >= 1");
  if (embed_dim < 1 || age_hidden < 1 || style_dim < 1 || disc_width < 1)
    fail("dimensions must be positive");
  if (perceptual_widths.empty()) fail("perceptual_widths empty");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.image_size = 112;
  c.stem_width = 64;
  c.enc_widths = {64, 128, 256, 512};
  c.blocks_per_stage = 3;
  c.bank_filters = 128;
  c.bank_shared = 16;
  c.style_dim = 512;
  c.disc_width = 64;
  c.perceptual_widths = {64, 128, 256, 512};
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"preset", c.preset},
                     {"image_size", c.image_size},
                     {"n_groups", c.n_groups},
                     {"num_classes", c.num_classes},
                     {"stem_width", c.stem_width},
                     {"enc_widths", c.enc_widths},
                     {"blocks_per_stage", c.blocks_per_stage},
                     {"se_reduction", c.se_reduction},
                     {"sa_kernel", c.sa_kernel},
                     {"age_hidden", c.age_hidden},
                     {"embed_dim", c.embed_dim},
                     {"bank_filters", c.bank_filters},
                     {"bank_shared", c.bank_shared},
                     {"icbs_per_icm", c.icbs_per_icm},
                     {"style_dim", c.style_dim},
                     {"disc_width", c.disc_width},
                     {"perceptual_widths", c.perceptual_widths},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d = j.contains("preset") ? ModelConfig::from_preset(j.at("preset").get<std::string>())
                                       : ModelConfig{};
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("image_size", d.image_size);
  opt("n_groups", d.n_groups);
  opt("num_classes", d.num_classes);
  opt("stem_width", d.stem_width);
  opt("enc_widths", d.enc_widths);
  opt("blocks_per_stage", d.blocks_per_stage);
  opt("se_reduction", d.se_reduction);
  opt("sa_kernel", d.sa_kernel);
  opt("age_hidden", d.age_hidden);
  opt("embed_dim", d.embed_dim);
  opt("bank_filters", d.bank_filters);
  opt("bank_shared", d.bank_shared);
  opt("icbs_per_icm", d.icbs_per_icm);
  opt("style_dim", d.style_dim);
  opt("disc_width", d.disc_width);
  opt("perceptual_widths", d.perceptual_widths);
  opt("seed", d.seed);
  c = d;
}

}  // namespace mtlface
