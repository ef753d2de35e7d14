#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "mtlface/data/data.hpp"
#include "mtlface/eval/partition.hpp"

namespace mtlface::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

class Stream {
 public:
  explicit Stream(std::uint64_t s) : s_(s) {}
  double uniform(double lo, double hi) {
    s_ = mix64(s_);
    return lo + (hi - lo) * (static_cast<double>(s_ >> 11) * (1.0 / 9007199254740992.0));
  }
  std::uint64_t next() { return s_ = mix64(s_); }

 private:
  std::uint64_t s_;
};

struct Rgb {
  double r, g, b;
};

Rgb mix(Rgb a, Rgb b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

struct IdentityLook {
  Rgb background, skin, hair, eyes, mark, shirt;
  double aspect, eye_dx, eye_y, eye_r, mouth_w, mouth_y, hairline, mark_x, mark_y, mark_r;
  double stripe_angle;
};

IdentityLook identity_look(std::uint64_t seed, int identity) {
  Stream s(mix64(seed * 0x2545F4914F6CDD1DULL + static_cast<std::uint64_t>(identity) * 0x9E3779B97F4A7C15ULL + 1));
  IdentityLook l;
  const double hue = s.uniform(0, 2 * kPi);
  l.background = {120 + 90 * std::cos(hue), 120 + 90 * std::cos(hue + 2.1), 120 + 90 * std::cos(hue + 4.2)};
  const double tone = s.uniform(0, 1);
  l.skin = mix({235, 200, 170}, {120, 80, 55}, tone);
  l.skin.r += s.uniform(-15, 15);
  l.skin.g += s.uniform(-15, 15);
  const double hh = s.uniform(0, 2 * kPi);
  l.hair = {70 + 60 * std::cos(hh), 50 + 40 * std::cos(hh + 2.1), 40 + 35 * std::cos(hh + 4.2)};
  const double eh = s.uniform(0, 2 * kPi);
  l.eyes = {90 + 80 * std::cos(eh), 90 + 80 * std::cos(eh + 2.1), 90 + 80 * std::cos(eh + 4.2)};
  const double mh = s.uniform(0, 2 * kPi);
  l.mark = {128 + 120 * std::cos(mh), 128 + 120 * std::cos(mh + 2.1), 128 + 120 * std::cos(mh + 4.2)};
  const double sh = s.uniform(0, 2 * kPi);
  l.shirt = {128 + 100 * std::cos(sh), 128 + 100 * std::cos(sh + 2.1), 128 + 100 * std::cos(sh + 4.2)};
  l.aspect = s.uniform(1.05, 1.4);
  l.eye_dx = s.uniform(0.10, 0.19);
  l.eye_y = s.uniform(-0.10, -0.02);
  l.eye_r = s.uniform(0.025, 0.045);
  l.mouth_w = s.uniform(0.06, 0.16);
  l.mouth_y = s.uniform(0.13, 0.20);
  l.hairline = s.uniform(0.45, 0.75);
  l.mark_x = s.uniform(-0.6, 0.6);
  l.mark_y = s.uniform(-0.1, 0.5);
  l.mark_r = s.uniform(0.025, 0.05);
  l.stripe_angle = s.uniform(0, kPi);
  return l;
}

std::uint64_t sample_key(std::uint64_t seed, int identity, int sample) {
  return mix64(mix64(seed + 0x1234567ULL) ^ (static_cast<std::uint64_t>(identity) << 32) ^
               static_cast<std::uint64_t>(sample));
}

}  // namespace

double toy_age(std::uint64_t seed, int identity, int sample) {
  const int group = ((sample % kNumAgeGroups) + kNumAgeGroups) % kNumAgeGroups;
  Stream s(sample_key(seed, identity, sample) ^ 0xA6EULL);
  const std::uint64_t r = s.next();
  if (group == 0) return static_cast<double>(1 + r % 10);
  if (group == kNumAgeGroups - 1) return static_cast<double>(61 + r % 20);
  return static_cast<double>(10 * group + 1 + r % 10);
}

Image render_toy_face(std::uint64_t seed, int identity, double age, int sample, int size) {
  if (size < 8) throw std::invalid_argument("toy image size too small");
  const IdentityLook l = identity_look(seed, identity);
  Stream jit(sample_key(seed, identity, sample));
  const double jx = jit.uniform(-0.03, 0.03);
  const double jy = jit.uniform(-0.03, 0.03);
  const double bright = jit.uniform(0.94, 1.06);

  const double growth = std::clamp(age / 18.0, 0.0, 1.0);
  const double gray = std::clamp((age - 30.0) / 45.0, 0.0, 1.0);
  const double wrinkle = std::clamp((age - 25.0) / 50.0, 0.0, 1.0);
  const double rx = 0.19 + 0.09 * growth;
  const double ry = rx * l.aspect;
  const double cx = 0.5 + jx;
  const double cy = 0.53 + jy + 0.04 * (1.0 - growth);
  const double eye_r = l.eye_r * (1.35 - 0.35 * growth);
  const Rgb hair = mix(l.hair, {225, 225, 228}, gray);
  const Rgb skin = mix(l.skin, {l.skin.r * 0.9 + 20, l.skin.g * 0.9 + 15, l.skin.b * 0.9 + 15}, wrinkle);

  Image img;
  img.width = img.height = size;
  img.rgb.resize(static_cast<std::size_t>(size) * size * 3);
  Stream noise(sample_key(seed, identity, sample) ^ 0x5EEDULL);
  for (int py = 0; py < size; ++py)
    for (int px = 0; px < size; ++px) {
      const double x = (px + 0.5) / size;
      const double y = (py + 0.5) / size;
      // Background with an identity-oriented stripe pattern.
      const double sp = std::sin((std::cos(l.stripe_angle) * x + std::sin(l.stripe_angle) * y) * 2 * kPi * 3);
      Rgb c = mix(l.background, {l.background.r * 0.7, l.background.g * 0.7, l.background.b * 0.7}, sp > 0.6 ? 1.0 : 0.0);
      // Shoulders.
      if (y > cy + ry * 0.95 && std::abs(x - cx) < 0.42 - (1.0 - growth) * 0.1) c = l.shirt;
      const double u = (x - cx) / rx;
      const double v = (y - cy) / ry;
      const double r2 = u * u + v * v;
      // Hair cap around the upper face.
      const double hx = (x - cx) / (rx * 1.15);
      const double hy = (y - cy + ry * 0.08) / (ry * 1.12);
      if (hx * hx + hy * hy < 1.0 && v < -l.hairline + 0.25) c = hair;
      if (r2 < 1.0) {
        c = skin;
        const double shade = 1.0 - 0.12 * r2;
        c = {c.r * shade, c.g * shade, c.b * shade};
        if (v < -l.hairline) c = hair;
        // Wrinkle lines: horizontal high-frequency bands on forehead and cheeks.
        if (wrinkle > 0.0 && v > -l.hairline + 0.05) {
          const double band = std::pow(std::max(0.0, std::sin(v * 2 * kPi * 7.0)), 6.0);
          const double region = (v < -0.15 || std::abs(u) > 0.45) ? 1.0 : 0.35;
          const double k = 1.0 - 0.45 * wrinkle * band * region;
          c = {c.r * k, c.g * k, c.b * k};
        }
        // Eyes.
        for (int side : {-1, 1}) {
          const double ex = x - (cx + side * l.eye_dx);
          const double ey = y - (cy + l.eye_y);
          if (ex * ex + ey * ey < eye_r * eye_r) c = {245, 245, 245};
          if (ex * ex + ey * ey < eye_r * eye_r * 0.3) c = l.eyes;
        }
        // Mouth.
        const double my = y - (cy + l.mouth_y * (0.85 + 0.15 * growth) * l.aspect);
        if (std::abs(x - cx) < l.mouth_w && std::abs(my) < 0.012 + 0.004 * (1.0 - growth))
          c = {150, 50, 60};
        // Identity mark.
        const double mx = u - l.mark_x, mv = v - l.mark_y;
        if (mx * mx + mv * mv < (l.mark_r / rx) * (l.mark_r / rx) * 2.0) c = l.mark;
      }
      const double n = noise.uniform(-4.0, 4.0);
      img.at(px, py, 0) = static_cast<std::uint8_t>(std::clamp(c.r * bright + n, 0.0, 255.0));
      img.at(px, py, 1) = static_cast<std::uint8_t>(std::clamp(c.g * bright + n, 0.0, 255.0));
      img.at(px, py, 2) = static_cast<std::uint8_t>(std::clamp(c.b * bright + n, 0.0, 255.0));
    }
  return img;
}

Manifest generate_toy_dataset(const ToyOptions& opt, const std::string& out_dir) {
  if (opt.n_identities < 1 || opt.n_per_identity < 1)
    throw std::invalid_argument("toy dataset needs at least one identity and one image each");
  std::filesystem::create_directories(out_dir);
  Manifest m;
  m.base_dir = out_dir;
  for (int id = 0; id < opt.n_identities; ++id)
    for (int k = 0; k < opt.n_per_identity; ++k) {
      const int sample = opt.first_sample + k;
      const double age = toy_age(opt.seed, id, sample);
      Image img = render_toy_face(opt.seed, id, age, sample, opt.image_size);
      char name[64];
      std::snprintf(name, sizeof(name), "id%03d_s%04d.png", id, sample);
      write_image(img, (std::filesystem::path(out_dir) / name).string());
      m.records.push_back({name, id, age, false});
    }
  write_manifest(m, (std::filesystem::path(out_dir) / "manifest.tsv").string());
  return m;
}

// ---- pixel-statistics age regressor ----------------------------------------------

std::vector<double> age_features(const Tensor<float>& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3) throw std::invalid_argument("age_features expects [3,H,W]");
  const int h = static_cast<int>(chw.dim(1));
  const int w = static_cast<int>(chw.dim(2));
  auto px = [&](int c, int y, int x) { return static_cast<double>(chw.data()[(c * h + y) * w + x]); };
  auto lum = [&](int y, int x) { return (px(0, y, x) + px(1, y, x) + px(2, y, x)) / 3.0; };
  auto sat = [&](int y, int x) {
    const double a = px(0, y, x), b = px(1, y, x), c = px(2, y, x);
    return std::max({a, b, c}) - std::min({a, b, c});
  };
  std::vector<double> f;
  const int bands = 8;
  // Row and column luminance/saturation profiles over the central region.
  for (int k = 0; k < bands; ++k) {
    double lr = 0, sr = 0, lc = 0;
    int n = 0;
    for (int y = k * h / bands; y < (k + 1) * h / bands; ++y)
      for (int x = w / 4; x < 3 * w / 4; ++x) {
        lr += lum(y, x);
        sr += sat(y, x);
        ++n;
      }
    int m = 0;
    for (int x = k * w / bands; x < (k + 1) * w / bands; ++x)
      for (int y = h / 4; y < 3 * h / 4; ++y) {
        lc += lum(y, x);
        ++m;
      }
    f.push_back(lr / n);
    f.push_back(sr / n);
    f.push_back(lc / m);
  }
  // Vertical gradient energy (horizontal line texture) per band.
  for (int k = 0; k < bands; ++k) {
    double e = 0;
    int n = 0;
    for (int y = std::max(1, k * h / bands); y < std::min(h - 1, (k + 1) * h / bands); ++y)
      for (int x = w / 4; x < 3 * w / 4; ++x) {
        const double d = 2 * lum(y, x) - lum(y - 1, x) - lum(y + 1, x);
        e += std::abs(d);
        ++n;
      }
    f.push_back(n ? e / n : 0.0);
  }
  // Bright-desaturated pixel fraction (gray hair) in the upper half.
  double gray = 0;
  for (int y = 0; y < h / 2; ++y)
    for (int x = 0; x < w; ++x)
      if (lum(y, x) > 0.55 && sat(y, x) < 0.12) gray += 1;
  f.push_back(gray / (h / 2 * w));
  return f;
}

namespace {

std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    if (std::abs(a[col][col]) < 1e-300) throw std::runtime_error("singular system in ridge fit");
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

}  // namespace

void PixelAgeRegressor::fit(const std::vector<Tensor<float>>& images, const std::vector<double>& ages,
                            double ridge) {
  if (images.size() != ages.size() || images.empty())
    throw std::invalid_argument("regressor needs matching, non-empty images and ages");
  std::vector<std::vector<double>> feats;
  for (const auto& im : images) feats.push_back(age_features(im));
  const std::size_t d = feats[0].size();
  mean_.assign(d, 0.0);
  scale_.assign(d, 0.0);
  for (const auto& f : feats)
    for (std::size_t j = 0; j < d; ++j) mean_[j] += f[j];
  for (auto& m : mean_) m /= feats.size();
  for (const auto& f : feats)
    for (std::size_t j = 0; j < d; ++j) scale_[j] += (f[j] - mean_[j]) * (f[j] - mean_[j]);
  for (auto& s : scale_) s = std::sqrt(s / feats.size()) + 1e-9;
  // Design: standardized features, their squares, and an intercept.
  auto design = [&](const std::vector<double>& f) {
    std::vector<double> z;
    for (std::size_t j = 0; j < d; ++j) z.push_back((f[j] - mean_[j]) / scale_[j]);
    for (std::size_t j = 0; j < d; ++j) z.push_back(z[j] * z[j]);
    z.push_back(1.0);
    return z;
  };
  const std::size_t p = 2 * d + 1;
  std::vector<std::vector<double>> a(p, std::vector<double>(p, 0.0));
  std::vector<double> b(p, 0.0);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const auto z = design(feats[i]);
    for (std::size_t r = 0; r < p; ++r) {
      b[r] += z[r] * ages[i];
      for (std::size_t c = 0; c < p; ++c) a[r][c] += z[r] * z[c];
    }
  }
  for (std::size_t r = 0; r + 1 < p; ++r) a[r][r] += ridge * static_cast<double>(feats.size());
  weights_ = solve(a, b);
}

double PixelAgeRegressor::predict(const Tensor<float>& chw) const {
  if (!fitted()) throw std::logic_error("regressor not fitted");
  const auto f = age_features(chw);
  const std::size_t d = f.size();
  double y = weights_.back();
  for (std::size_t j = 0; j < d; ++j) {
    const double z = (f[j] - mean_[j]) / scale_[j];
    y += weights_[j] * z + weights_[d + j] * z * z;
  }
  return std::clamp(y, 0.0, 100.0);
}

}  // namespace mtlface::data
