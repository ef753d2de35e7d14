#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtlface/core/tensor.hpp"

namespace mtlface::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Record {
  std::string path;
  int identity = 0;
  double age = 0.0;
  bool synthetic = false;

  bool operator==(const Record&) const = default;
};

struct Manifest {
  std::vector<Record> records;
  /// Directory that relative record paths resolve against.
  std::string base_dir;

  int num_identities() const;
  std::string resolve(const Record& r) const;
};

/// Lines: path<TAB>identity<TAB>age<TAB>{0|1}. Identities are remapped to
/// 0..K-1 in first-seen order.
Manifest parse_manifest(const std::string& text, const std::string& base_dir = "");
Manifest load_manifest(const std::string& path);
std::string format_manifest(const Manifest& m);
void write_manifest(const Manifest& m, const std::string& path);

struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// PNG or binary PPM (P6), chosen by content.
Image decode_image(const std::vector<std::uint8_t>& bytes);
Image read_image(const std::string& path);
std::vector<std::uint8_t> encode_png(const Image& img);
std::vector<std::uint8_t> encode_ppm(const Image& img);
void write_image(const Image& img, const std::string& path);  // by extension

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

/// Center-crop to square, bilinear resize to `size`, map [0,255] -> [-1,1].
/// Returns [3,size,size].
Tensor<float> preprocess(const Image& img, int size);
Tensor<float> preprocess_bytes(const std::vector<std::uint8_t>& bytes, int size);
/// Inverse map of a [3,H,W] tensor in [-1,1] to 8-bit RGB.
Image to_image(const Tensor<float>& chw);

/// Loads every record into a [N,3,size,size] tensor.
Tensor<float> load_images(const Manifest& m, int size);

struct ToyOptions {
  int n_identities = 20;
  int n_per_identity = 42;
  int image_size = 64;
  std::uint64_t seed = 7;
  /// Sample index of the first image per identity; a different offset
  /// renders new, disjoint images of the same identities.
  int first_sample = 0;
};

/// Renders identity-specific faces whose appearance changes with age.
Image render_toy_face(std::uint64_t seed, int identity, double age, int sample, int size);
/// Age assigned to sample i: group i mod 7, position in the group from the seed.
double toy_age(std::uint64_t seed, int identity, int sample);
/// Writes images plus manifest.tsv into `out_dir` and returns the manifest.
Manifest generate_toy_dataset(const ToyOptions& opt, const std::string& out_dir);

/// Hand-crafted pixel statistics used by the toy age regressor.
std::vector<double> age_features(const Tensor<float>& chw);

/// Ridge regression from pixel statistics to age.
class PixelAgeRegressor {
 public:
  void fit(const std::vector<Tensor<float>>& images, const std::vector<double>& ages,
           double ridge = 1e-3);
  double predict(const Tensor<float>& chw) const;
  bool fitted() const { return !weights_.empty(); }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<double> mean_, scale_, weights_;
};

/// Deterministic permutation of [0,n) for (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// SplitMix64 step; used to derive independent streams from one seed.
std::uint64_t mix64(std::uint64_t x);

}  // namespace mtlface::data
