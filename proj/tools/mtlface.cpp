#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtlface/core/autograd.hpp"
#include "mtlface/data/data.hpp"
#include "mtlface/eval/eval.hpp"
#include "mtlface/ftsel/ftsel.hpp"
#include "mtlface/model/checkpoint.hpp"
#include "mtlface/training/training.hpp"

namespace fs = std::filesystem;
using namespace mtlface;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

// Values from a --config JSON file become ordinary arguments placed right after
// the subcommand path, so anything given explicitly on the command line wins.
std::vector<std::string> expand_config(std::vector<std::string> args, const CLI::App& app) {
  std::size_t at = 1;
  const CLI::App* sub = &app;
  while (at < args.size()) {
    const CLI::App* next = nullptr;
    for (const CLI::App* c : sub->get_subcommands({}))
      if (c->get_name() == args[at]) next = c;
    if (!next) break;
    sub = next;
    ++at;
  }
  std::string path;
  for (std::size_t i = at; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw CLI::FileError(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
  auto text = [](const json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
  std::vector<std::string> extra;
  for (const auto& [k, v] : j.items()) {
    const CLI::Option* o = sub->get_option_no_throw("--" + k);
    if (!o || v.is_object() || v.is_null()) continue;
    if (o->get_type_size() == 0) {
      if (v == true) extra.push_back("--" + k);
      continue;
    }
    if (v.is_array()) {
      if (v.empty()) continue;
      extra.push_back("--" + k);
      for (const auto& e : v) extra.push_back(text(e));
    } else {
      extra.push_back("--" + k);
      extra.push_back(text(v));
    }
  }
  args.insert(args.begin() + static_cast<long>(at), extra.begin(), extra.end());
  return args;
}

json typed(const std::string& s) {
  if (s == "true" || s == "false") return s == "true";
  try {
    std::size_t used = 0;
    const long long i = std::stoll(s, &used);
    if (used == s.size()) return i;
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (const std::exception&) {
  }
  return s;
}

const std::vector<std::string> kNotResolved{"help", "config", "run-dir", "out"};

// Every option of the command with its effective value, flags as booleans.
ordered_json resolved_options(const CLI::App& cmd) {
  ordered_json j;
  j["command"] = cmd.get_name();
  for (const CLI::Option* o : cmd.get_options()) {
    if (o->get_lnames().empty()) continue;
    const std::string name = o->get_lnames().front();
    if (std::find(kNotResolved.begin(), kNotResolved.end(), name) != kNotResolved.end()) continue;
    if (o->get_expected_max() == 0) {
      j[name] = o->count() > 0 && o->as<bool>();
      continue;
    }
    std::vector<std::string> vals = o->count() > 0 ? o->results() : std::vector<std::string>{};
    if (o->count() == 0 && !o->get_default_str().empty()) vals = {o->get_default_str()};
    if (o->get_expected_max() > 1) {
      json arr = json::array();
      for (const auto& v : vals) arr.push_back(typed(v));
      j[name] = arr;
    } else if (!vals.empty()) {
      j[name] = typed(vals.back());
    }
  }
  return j;
}

struct RunDirOptions {
  std::string out;
  std::string run_dir;
};

void add_run_dir_options(CLI::App* cmd, RunDirOptions& o) {
  cmd->add_option("--out", o.out, "Output root; defaults to $MTLFACE_OUT_DIR or ./runs");
  cmd->add_option("--run-dir", o.run_dir, "Exact run directory instead of a timestamped one");
}

std::string make_run_dir(const RunDirOptions& o, const std::string& command) {
  if (!o.run_dir.empty()) {
    fs::create_directories(o.run_dir);
    return o.run_dir;
  }
  std::string root = o.out;
  if (root.empty()) {
    const char* env = std::getenv("MTLFACE_OUT_DIR");
    root = env && *env ? env : "runs";
  }
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
  fs::path dir = fs::path(root) / (command + "-" + stamp);
  for (int k = 1; fs::exists(dir); ++k) dir = fs::path(root) / (command + "-" + stamp + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir.string();
}

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream f(path);
  if (!f) throw data::DataError("cannot write " + path);
  f << j.dump(2) << "\n";
}

void announce(const std::string& run_dir) { std::cout << "run_dir " << run_dir << std::endl; }

// 3x5 glyphs, one row per entry, bit 2 = left column.
const std::map<char, std::array<int, 5>>& glyphs() {
  static const std::map<char, std::array<int, 5>> g{
      {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
      {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
      {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'S', {7, 4, 7, 1, 7}}, {'-', {0, 0, 7, 0, 0}},
      {'>', {4, 2, 1, 2, 4}}, {'.', {0, 0, 0, 0, 2}}, {' ', {0, 0, 0, 0, 0}}};
  return g;
}

constexpr int kBorder = 2;
constexpr int kLabel = 14;

void draw_text(data::Image& img, int x0, int y0, const std::string& text, std::uint8_t v) {
  for (char ch : text) {
    const auto it = glyphs().find(ch);
    if (it != glyphs().end())
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c)
          if (it->second[r] >> (2 - c) & 1)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int x = x0 + c * 2 + dx, y = y0 + r * 2 + dy;
                if (x < img.width && y < img.height)
                  for (int k = 0; k < 3; ++k) img.at(x, y, k) = v;
              }
    x0 += 8;
  }
}

struct Cell {
  Tensor<float> chw;
  std::string label;
};

// Rows of labelled cells; each cell is a bordered face with its label strip on top.
data::Image render_grid(const std::vector<std::vector<Cell>>& rows, int size) {
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const int cw = size + 2 * kBorder, ch = size + 2 * kBorder + kLabel;
  data::Image img;
  img.width = static_cast<int>(cols) * cw;
  img.height = static_cast<int>(rows.size()) * ch;
  img.rgb.assign(static_cast<std::size_t>(img.width) * img.height * 3, 255);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const int x0 = static_cast<int>(c) * cw, y0 = static_cast<int>(r) * ch;
      for (int y = y0 + kLabel; y < y0 + ch; ++y)
        for (int x = x0; x < x0 + cw; ++x)
          for (int k = 0; k < 3; ++k) img.at(x, y, k) = 40;
      draw_text(img, x0 + 2, y0 + 2, rows[r][c].label, 0);
      const data::Image face = data::to_image(rows[r][c].chw);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          for (int k = 0; k < 3; ++k)
            img.at(x0 + kBorder + x, y0 + kLabel + kBorder + y, k) = face.at(x, y, k);
    }
  return img;
}

Tensor<float> sample(const Tensor<float>& batch, std::int64_t i) { return batch.narrow(i, 1).clone().reshape({3, batch.dim(2), batch.dim(3)}); }

// ---------------------------------------------------------------- train

struct TrainOpts {
  RunDirOptions run;
  std::string data, preset = "desk";
  int iters = -1, image_size = 0, batch_size = 0, log_every = 50;
  std::uint64_t seed = 1;
};

int cmd_train(const CLI::App& cmd, const TrainOpts& o) {
  ModelConfig mcfg = ModelConfig::from_preset(o.preset);
  training::TrainConfig tcfg = training::TrainConfig::from_preset(o.preset);
  if (o.image_size > 0) mcfg.image_size = o.image_size;
  tcfg.image_size = mcfg.image_size;
  if (o.iters >= 0) tcfg = tcfg.scaled_to(o.iters);
  if (o.batch_size > 0) tcfg.batch_size = o.batch_size;
  mcfg.seed = o.seed;
  tcfg.seed = o.seed;

  const auto manifest = data::load_manifest(o.data);
  const auto dataset = training::load_dataset(manifest, mcfg.image_size);
  mcfg.num_classes = std::max(1, dataset.num_identities());
  mcfg.validate();
  tcfg.validate();

  const std::string dir = make_run_dir(o.run, "train");
  announce(dir);
  ordered_json cfg = resolved_options(cmd);
  cfg["resolved"]["model"] = ordered_json::parse(json(mcfg).dump());
  cfg["resolved"]["train"] = ordered_json::parse(json(tcfg).dump());
  write_json(dir + "/config.json", cfg);

  training::TrainOutputs out;
  out.metrics_path = dir + "/metrics.ndjson";
  out.checkpoint_path = dir + "/checkpoint.ckpt";
  out.checkpoint_extra = {{"data", o.data}};
  out.on_record = [&](const ordered_json& r) {
    if (r.contains("error") || (o.log_every > 0 && r["iter"].get<int>() % o.log_every == 0))
      std::cerr << r.dump() << "\n";
  };
  const auto res = training::train(mcfg, tcfg, dataset, out);
  if (!res.records.empty()) {
    const auto& last = res.records.back();
    std::printf("iters %d aifr_total %.4f fas_total %.4f\n", tcfg.max_iters, last["aifr_total"].get<double>(),
                last["fas_total"].get<double>());
  }
  return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthOpts {
  RunDirOptions run;
  std::string checkpoint, data;
  std::vector<std::string> inputs;
  int continuous = 0;
};

int cmd_synth(const CLI::App& cmd, const SynthOpts& o) {
  if (o.inputs.empty() && o.data.empty()) throw std::invalid_argument("synth needs --inputs or --data");
  if (o.continuous < 0 || o.continuous == 1) throw std::invalid_argument("--continuous must be 0 or >= 2");
  const auto ck = model::load_checkpoint(o.checkpoint);
  const auto& m = *ck.model;
  const int size = m.config().image_size;
  const int n_g = m.config().n_groups;

  std::vector<std::string> paths = o.inputs;
  if (!o.data.empty()) {
    const auto man = data::load_manifest(o.data);
    for (const auto& r : man.records) paths.push_back(man.resolve(r));
  }
  std::vector<Tensor<float>> faces;
  for (const auto& p : paths) faces.push_back(data::preprocess(data::read_image(p), size));

  const std::string dir = make_run_dir(o.run, "synth");
  announce(dir);
  write_json(dir + "/config.json", resolved_options(cmd));

  NoGradGuard ng;
  ordered_json index = json::array();
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const nn::VF x(faces[i].reshape({1, 3, size, size}));
    std::vector<std::vector<Cell>> rows(1);
    rows[0].push_back({faces[i], "S"});
    for (int g = 0; g < n_g; ++g)
      rows[0].push_back({sample(m.synthesize(x, {g}).value(), 0), std::to_string(g)});
    if (o.continuous > 0) {
      rows.emplace_back();
      for (int g = 0; g + 1 < n_g; ++g) {
        const auto frames = m.synthesize_sweep(x, g, g + 1, o.continuous);
        for (std::size_t k = 0; k < frames.size(); ++k)
          rows[1].push_back({sample(frames[k].value(), 0), std::to_string(g) + ">" + std::to_string(g + 1) + " " +
                                                               std::to_string(k)});
      }
    }
    const std::string name = "grid_" + std::to_string(i) + "_" + fs::path(paths[i]).stem().string() + ".png";
    data::write_image(render_grid(rows, size), dir + "/" + name);
    ordered_json e;
    e["input"] = paths[i];
    e["grid"] = name;
    e["columns"] = rows[0].size();
    e["rows"] = rows.size();
    e["cell_width"] = size + 2 * kBorder;
    e["cell_height"] = size + 2 * kBorder + kLabel;
    index.push_back(e);
  }
  write_json(dir + "/grids.json", index);
  std::printf("grids %zu\n", faces.size());
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
  RunDirOptions run;
  std::string checkpoint, embedder = "model", data;
  // verify
  std::string pairs, root;
  // identify
  std::string probe, gallery;
  // fas
  std::string generator = "model", targets = "all", age_train;
  int batch = 32;
};

// One embedding per path. The oracle embeds the identity label as one-hot.
std::vector<std::vector<float>> embed_paths(const std::vector<std::string>& paths, const std::vector<int>& labels,
                                            const EvalOpts& o) {
  std::vector<std::vector<float>> out;
  if (o.embedder == "oracle") {
    const int k = labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1;
    for (int id : labels) {
      out.emplace_back(k, 0.0f);
      out.back()[id] = 1.0f;
    }
    return out;
  }
  if (o.embedder != "model") throw std::invalid_argument("--embedder must be model or oracle");
  if (o.checkpoint.empty()) throw std::invalid_argument("--embedder model needs --checkpoint");
  const auto ck = model::load_checkpoint(o.checkpoint);
  const int size = ck.model->config().image_size;
  std::map<std::string, std::size_t> slot;
  std::vector<std::string> unique;
  for (const auto& p : paths)
    if (slot.emplace(p, unique.size()).second) unique.push_back(p);
  Tensor<float> images({static_cast<std::int64_t>(unique.size()), 3, size, size});
  const std::size_t per = static_cast<std::size_t>(3) * size * size;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    const auto t = data::preprocess(data::read_image(unique[i]), size);
    std::copy(t.data(), t.data() + per, images.data() + i * per);
  }
  const auto e = ftsel::embeddings(*ck.model, images, o.batch);
  const auto d = e.dim(1);
  for (const auto& p : paths) {
    const std::size_t i = slot.at(p);
    out.emplace_back(e.data() + i * d, e.data() + (i + 1) * d);
  }
  return out;
}

int cmd_verify(const CLI::App& cmd, const EvalOpts& o) {
  auto set = eval::load_pairs(o.pairs);
  const fs::path root = o.root.empty() ? fs::path(o.pairs).parent_path() : fs::path(o.root);
  std::vector<std::string> paths;
  for (auto& p : set.pairs)
    for (auto* s : {&p.a, &p.b}) {
      if (fs::path(*s).is_relative()) *s = (root / *s).string();
      paths.push_back(*s);
    }
  std::vector<int> labels;
  if (o.embedder == "oracle") {
    if (o.data.empty()) throw std::invalid_argument("--embedder oracle needs --data with identity labels");
    const auto man = data::load_manifest(o.data);
    std::map<std::string, int> id;
    for (const auto& r : man.records) id[fs::weakly_canonical(man.resolve(r)).string()] = r.identity;
    for (const auto& p : paths) {
      const auto it = id.find(fs::weakly_canonical(p).string());
      if (it == id.end()) throw data::DataError("no identity label for " + p);
      labels.push_back(it->second);
    }
  }
  const auto e = embed_paths(paths, labels, o);
  std::map<std::string, std::vector<float>> emb;
  for (std::size_t i = 0; i < paths.size(); ++i) emb[paths[i]] = e[i];
  const auto r = eval::verify_10fold(set, [&](const std::string& p) { return emb.at(p); });
  const std::string dir = make_run_dir(o.run, "eval-verify");
  announce(dir);
  write_json(dir + "/config.json", resolved_options(cmd));
  write_json(dir + "/metrics.json", r.to_json());
  std::printf("accuracy %.4f +- %.4f\n", r.mean_accuracy, r.std_accuracy);
  return kOk;
}

std::string slurp(const std::string& path) {
  const auto b = data::read_file(path);
  return std::string(b.begin(), b.end());
}

int cmd_identify(const CLI::App& cmd, const EvalOpts& o) {
  double rate = 0;
  if (!o.probe.empty() || !o.gallery.empty()) {
    if (o.probe.empty() || o.gallery.empty()) throw std::invalid_argument("identify needs both --probe and --gallery");
    const auto pm = data::load_manifest(o.probe), gm = data::load_manifest(o.gallery);
    // Labels are remapped over both files together so raw identities line up.
    std::string pt = slurp(o.probe);
    if (!pt.empty() && pt.back() != '\n') pt += '\n';
    const auto joint = data::parse_manifest(pt + slurp(o.gallery));
    std::vector<std::string> paths;
    std::vector<int> labels;
    for (const auto& r : pm.records) paths.push_back(pm.resolve(r));
    for (const auto& r : gm.records) paths.push_back(gm.resolve(r));
    for (const auto& r : joint.records) labels.push_back(r.identity);
    const auto e = embed_paths(paths, labels, o);
    const auto np = static_cast<std::ptrdiff_t>(pm.records.size());
    rate = eval::rank1_identify({e.begin(), e.begin() + np}, {labels.begin(), labels.begin() + np},
                                {e.begin() + np, e.end()}, {labels.begin() + np, labels.end()});
  } else {
    if (o.data.empty()) throw std::invalid_argument("identify needs --data or --probe/--gallery");
    const auto man = data::load_manifest(o.data);
    std::vector<std::string> paths;
    std::vector<int> labels;
    for (const auto& r : man.records) {
      paths.push_back(man.resolve(r));
      labels.push_back(r.identity);
    }
    rate = eval::rank1_leave_one_out(embed_paths(paths, labels, o), labels);
  }
  const std::string dir = make_run_dir(o.run, "eval-identify");
  announce(dir);
  write_json(dir + "/config.json", resolved_options(cmd));
  ordered_json metrics;
  metrics["rank1"] = rate;
  write_json(dir + "/metrics.json", metrics);
  std::printf("rank1 %.4f\n", rate);
  return kOk;
}

int cmd_fas(const CLI::App& cmd, const EvalOpts& o) {
  if (o.checkpoint.empty()) throw std::invalid_argument("fas needs --checkpoint");
  if (o.data.empty()) throw std::invalid_argument("fas needs --data");
  if (o.generator != "model" && o.generator != "identity")
    throw std::invalid_argument("--generator must be model or identity");
  if (o.targets != "all" && o.targets != "source") throw std::invalid_argument("--targets must be all or source");
  const auto ck = model::load_checkpoint(o.checkpoint);
  const auto& m = *ck.model;
  const int size = m.config().image_size;
  const auto man = data::load_manifest(o.data);
  if (man.records.empty()) throw data::DataError("fas needs at least one image");
  const Tensor<float> real = data::load_images(man, size);

  const auto age_man = o.age_train.empty() ? man : data::load_manifest(o.age_train);
  const Tensor<float> age_imgs = o.age_train.empty() ? real : data::load_images(age_man, size);
  std::vector<Tensor<float>> fit_images;
  std::vector<double> fit_ages;
  for (std::size_t i = 0; i < age_man.records.size(); ++i) {
    fit_images.push_back(sample(age_imgs, static_cast<std::int64_t>(i)));
    fit_ages.push_back(age_man.records[i].age);
  }
  data::PixelAgeRegressor reg;
  reg.fit(fit_images, fit_ages);

  const auto n = static_cast<std::int64_t>(man.records.size());
  std::vector<int> targets;
  std::vector<std::int64_t> src_index;
  const bool self = o.generator == "identity" || o.targets == "source";
  for (std::int64_t i = 0; i < n; ++i) {
    if (self) {
      targets.push_back(age_to_group(man.records[i].age));
      src_index.push_back(i);
    } else {
      for (int g = 0; g < m.config().n_groups; ++g) {
        targets.push_back(g);
        src_index.push_back(i);
      }
    }
  }
  const auto total = static_cast<std::int64_t>(targets.size());
  Tensor<float> sources({total, 3, size, size});
  const std::size_t per = static_cast<std::size_t>(3) * size * size;
  for (std::int64_t k = 0; k < total; ++k)
    std::copy(real.data() + src_index[k] * per, real.data() + (src_index[k] + 1) * per, sources.data() + k * per);
  Tensor<float> synth = sources.clone();
  if (o.generator == "model") {
    NoGradGuard ng;
    for (std::int64_t s = 0; s < total; s += o.batch) {
      const std::int64_t e = std::min(total, s + o.batch);
      const std::vector<int> tg(targets.begin() + s, targets.begin() + e);
      const auto y = m.synthesize(nn::VF(sources.narrow(s, e - s).clone()), tg).value();
      std::copy(y.data(), y.data() + y.numel(), synth.data() + s * per);
    }
  }
  const eval::BatchEmbedder embed = [&](const Tensor<float>& t) {
    const auto e = ftsel::embeddings(m, t, o.batch);
    std::vector<std::vector<float>> out;
    for (std::int64_t i = 0; i < e.dim(0); ++i) out.emplace_back(e.data() + i * e.dim(1), e.data() + (i + 1) * e.dim(1));
    return out;
  };
  const auto r = eval::fas_metrics(synth, targets, sources, [&](const Tensor<float>& c) { return reg.predict(c); },
                                   embed);
  const std::string dir = make_run_dir(o.run, "eval-fas");
  announce(dir);
  write_json(dir + "/config.json", resolved_options(cmd));
  write_json(dir + "/metrics.json", r.to_json());
  std::printf("age_accuracy %.2f mae %.3f id_cos %.4f +- %.4f\n", r.age_accuracy, r.mae, r.id_cos_mean, r.id_cos_std);
  return kOk;
}

// ---------------------------------------------------------------- ftsel

struct FtselOpts {
  RunDirOptions run;
  std::string checkpoint, data;
  int iters = 200, batch_size = 16;
  double lr = 0.01;
  std::uint64_t seed = 1;
  bool dry_run = false;
};

int cmd_ftsel(const CLI::App& cmd, const FtselOpts& o) {
  auto ck = model::load_checkpoint(o.checkpoint);
  auto& m = *ck.model;
  const int size = m.config().image_size;
  const auto man = data::load_manifest(o.data);
  const Tensor<float> real = data::load_images(man, size);
  const auto sel = ftsel::select_children(man, real, m, ftsel::embedding_norm_scorer(m));
  const auto n_syn = sel.children.manifest.records.size();

  const std::string dir = make_run_dir(o.run, "ftsel");
  announce(dir);
  write_json(dir + "/config.json", resolved_options(cmd));
  {
    std::ofstream f(dir + "/selection.ndjson");
    f << ftsel::format_selection_report(sel.report);
  }
  write_json(dir + "/gmm.json", sel.gmm.to_json());
  std::printf("synthesized %zu selected %zu\n", n_syn, sel.chosen.size());
  if (o.dry_run) return kOk;

  ftsel::FinetuneOptions fo;
  fo.iters = o.iters;
  fo.lr = o.lr;
  fo.batch_size = o.batch_size;
  fo.seed = o.seed;
  const auto hist = ftsel::finetune_with_selection(m, man, real, sel, fo);
  json extra = ck.manifest.value("extra", json::object());
  extra["ftsel"] = {{"iters", o.iters}, {"lr", o.lr}, {"selected", sel.chosen.size()}, {"synthesized", n_syn}};
  model::save_checkpoint(m, dir + "/finetuned.ckpt", extra);
  if (!hist.empty()) std::printf("finetune loss %.4f -> %.4f\n", hist.front(), hist.back());
  return kOk;
}

// ---------------------------------------------------------------- toy

int cmd_toy(const CLI::App& cmd, const data::ToyOptions& t, const std::string& dir) {
  const auto m = data::generate_toy_dataset(t, dir);
  write_json(dir + "/config.json", resolved_options(cmd));
  std::printf("records %zu manifest %s\n", m.records.size(), (fs::path(dir) / "manifest.tsv").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Age-invariant face recognition and age synthesis toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;

  auto with_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "JSON file of option values; explicit flags win");
  };

  TrainOpts train;
  auto* c_train = app.add_subcommand("train", "Train a model on a manifest");
  with_config(c_train);
  add_run_dir_options(c_train, train.run);
  c_train->add_option("--data", train.data, "Training manifest")->required();
  c_train->add_option("--preset", train.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  c_train->add_option("--iters", train.iters, "Iterations; the preset schedule is scaled to fit (-1 keeps it)");
  c_train->add_option("--image-size", train.image_size, "Image side; 0 keeps the preset");
  c_train->add_option("--batch-size", train.batch_size, "Batch size; 0 keeps the preset");
  c_train->add_option("--seed", train.seed, "Seed for initialization and training");
  c_train->add_option("--log-every", train.log_every, "Progress line interval on stderr");

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "Render age-group grids");
  with_config(c_synth);
  add_run_dir_options(c_synth, synth.run);
  c_synth->add_option("--checkpoint", synth.checkpoint, "Model checkpoint")->required();
  c_synth->add_option("--inputs", synth.inputs, "Input face images")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  c_synth->add_option("--data", synth.data, "Manifest of input faces");
  c_synth->add_option("--continuous", synth.continuous, "Frames per adjacent-group gap (0 disables)");

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluation protocols");
  c_eval->require_subcommand(1);
  auto eval_common = [&](CLI::App* c) {
    with_config(c);
    add_run_dir_options(c, ev.run);
    c->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
    c->add_option("--embedder", ev.embedder, "model or oracle (one-hot identity from --data)");
    c->add_option("--data", ev.data, "Manifest");
    c->add_option("--batch", ev.batch, "Embedding batch size");
  };
  auto* c_verify = c_eval->add_subcommand("verify", "K-fold pair verification");
  eval_common(c_verify);
  c_verify->add_option("--pairs", ev.pairs, "Pair list")->required();
  c_verify->add_option("--root", ev.root, "Base directory for relative pair paths");
  auto* c_identify = c_eval->add_subcommand("identify", "Rank-1 identification");
  eval_common(c_identify);
  c_identify->add_option("--probe", ev.probe, "Probe manifest");
  c_identify->add_option("--gallery", ev.gallery, "Gallery manifest");
  auto* c_fas = c_eval->add_subcommand("fas", "Age accuracy, MAE and identity preservation of synthesized faces");
  eval_common(c_fas);
  c_fas->add_option("--generator", ev.generator, "model or identity (returns the source)");
  c_fas->add_option("--targets", ev.targets, "all groups per face or the source group");
  c_fas->add_option("--age-train", ev.age_train, "Manifest for fitting the pixel age regressor (default --data)");

  FtselOpts fts;
  auto* c_ftsel = app.add_subcommand("ftsel", "Synthesize children, select by quality and fine-tune");
  with_config(c_ftsel);
  add_run_dir_options(c_ftsel, fts.run);
  c_ftsel->add_option("--checkpoint", fts.checkpoint, "Trained checkpoint")->required();
  c_ftsel->add_option("--data", fts.data, "Real training manifest")->required();
  c_ftsel->add_option("--iters", fts.iters, "Fine-tune iterations");
  c_ftsel->add_option("--lr", fts.lr, "Fine-tune learning rate");
  c_ftsel->add_option("--batch-size", fts.batch_size, "Fine-tune batch size");
  c_ftsel->add_option("--seed", fts.seed, "Fine-tune seed");
  c_ftsel->add_flag("--dry-run", fts.dry_run, "Write the selection report only");

  data::ToyOptions toy;
  std::string toy_dir;
  auto* c_toy = app.add_subcommand("toy", "Generate the procedural toy face set");
  with_config(c_toy);
  c_toy->add_option("--dir", toy_dir, "Output directory")->required();
  c_toy->add_option("--identities", toy.n_identities, "Number of identities");
  c_toy->add_option("--per-identity", toy.n_per_identity, "Images per identity");
  c_toy->add_option("--image-size", toy.image_size, "Image side");
  c_toy->add_option("--seed", toy.seed, "Generator seed");
  c_toy->add_option("--first-sample", toy.first_sample, "First sample index per identity");

  try {
    const auto args = expand_config(std::vector<std::string>(argv, argv + argc), app);
    std::vector<char*> ptrs;
    for (const auto& a : args) ptrs.push_back(const_cast<char*>(a.c_str()));
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (c_train->parsed()) return cmd_train(*c_train, train);
    if (c_synth->parsed()) return cmd_synth(*c_synth, synth);
    if (c_verify->parsed()) return cmd_verify(*c_verify, ev);
    if (c_identify->parsed()) return cmd_identify(*c_identify, ev);
    if (c_fas->parsed()) return cmd_fas(*c_fas, ev);
    if (c_ftsel->parsed()) return cmd_ftsel(*c_ftsel, fts);
    if (c_toy->parsed()) return cmd_toy(*c_toy, toy, toy_dir);
  } catch (const training::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const ftsel::GmmError& e) {
    std::cerr << "GMM error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const data::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const eval::ProtocolError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const model::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kConfigError;
}
