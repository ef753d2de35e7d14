#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mtlface/data/data.hpp"
#include "mtlface/eval/eval.hpp"
#include "mtlface/model/checkpoint.hpp"
#include "support/fixtures.hpp"

namespace fs = std::filesystem;
using namespace mtlface;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string run_dir() const {
    std::istringstream in(out);
    std::string line;
    while (std::getline(in, line))
      if (line.rfind("run_dir ", 0) == 0) return line.substr(8);
    return {};
  }
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(MTLFACE_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// One toy set and one briefly trained checkpoint shared by every case.
struct Workspace {
  std::string dir, toy, manifest, ckpt;
  Workspace() {
    dir = testsupport::scratch_dir("cli");
    toy = dir + "/toy";
    manifest = toy + "/manifest.tsv";
    const auto t = cli("toy --dir " + toy + " --identities 3 --per-identity 7 --image-size 32");
    REQUIRE_MESSAGE(t.code == 0, t.out);
    const auto r = cli("train --data " + manifest + " --iters 2 --image-size 32 --batch-size 4 --log-every 0 --run-dir " +
                       dir + "/trained");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    ckpt = dir + "/trained/checkpoint.ckpt";
  }
};

const Workspace& ws() {
  static const Workspace w;
  return w;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("train writes config, metrics and checkpoint into the run dir") {
    const auto& w = ws();
    for (const char* f : {"config.json", "metrics.ndjson", "checkpoint.ckpt"})
      CHECK(fs::exists(w.dir + "/trained/" + f));
    const auto cfg = json::parse(slurp(w.dir + "/trained/config.json"));
    CHECK(cfg["command"] == "train");
    CHECK(cfg["iters"] == 2);
    CHECK(cfg["resolved"]["model"]["num_classes"] == 3);
    std::ifstream m(w.dir + "/trained/metrics.ndjson");
    std::string line;
    int n = 0;
    while (std::getline(m, line)) CHECK(json::parse(line)["iter"] == n++);
    CHECK(n == 2);
  }

  TEST_CASE("zero iterations save the initialization") {
    const auto& w = ws();
    const auto r = cli("train --data " + w.manifest + " --iters 0 --image-size 32 --run-dir " + w.dir + "/zero");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const auto ck = model::load_checkpoint(w.dir + "/zero/checkpoint.ckpt");
    model::MtlFace fresh(ck.model->config());
    CHECK(ck.model->params().checksums() == fresh.params().checksums());
  }

  TEST_CASE("a saved config reproduces the run and explicit flags override it") {
    const auto& w = ws();
    const auto r = cli("train --config " + w.dir + "/trained/config.json --run-dir " + w.dir + "/again");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    CHECK(slurp(w.dir + "/again/checkpoint.ckpt") == slurp(w.ckpt));
    std::ifstream fa(w.dir + "/trained/metrics.ndjson"), fb(w.dir + "/again/metrics.ndjson");
    std::string la, lb;
    int n = 0;
    while (std::getline(fa, la) && std::getline(fb, lb)) {
      auto a = json::parse(la), b = json::parse(lb);
      a.erase("wall_time");
      b.erase("wall_time");
      CHECK(a == b);
      ++n;
    }
    CHECK(n == 2);

    const auto o = cli("train --config " + w.dir + "/trained/config.json --iters 1 --run-dir " + w.dir + "/override");
    REQUIRE_MESSAGE(o.code == 0, o.out);
    CHECK(json::parse(slurp(w.dir + "/override/config.json"))["iters"] == 1);
  }

  TEST_CASE("run dirs default to the environment output dir") {
    const auto& w = ws();
    const std::string base = w.dir + "/envout";
    setenv("MTLFACE_OUT_DIR", base.c_str(), 1);
    const auto e = cli("train --data " + w.manifest + " --iters 0 --image-size 32");
    unsetenv("MTLFACE_OUT_DIR");
    REQUIRE_MESSAGE(e.code == 0, e.out);
    const fs::path d = e.run_dir();
    CHECK(d.parent_path() == fs::path(base));
    CHECK(d.filename().string().rfind("train-", 0) == 0);
    CHECK(fs::exists(d / "checkpoint.ckpt"));
  }

  TEST_CASE("configuration and data errors map to exit codes") {
    const auto& w = ws();
    CHECK(cli("train --data " + w.manifest + " --preset huge --run-dir " + w.dir + "/bad").code == 2);
    CHECK(cli("train --run-dir " + w.dir + "/bad").code == 2);
    CHECK(cli("train --data " + w.dir + "/none.tsv --run-dir " + w.dir + "/bad").code == 3);
    CHECK(cli("nosuch").code == 2);
    CHECK(cli("--help").code == 0);
    CHECK_FALSE(fs::exists(w.dir + "/bad"));
  }

  TEST_CASE("synth renders a grid with one column per group plus the source") {
    const auto& w = ws();
    const auto r = cli("synth --checkpoint " + w.ckpt + " --data " + w.manifest + " --run-dir " + w.dir + "/grid");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const auto idx = json::parse(slurp(w.dir + "/grid/grids.json"));
    REQUIRE(idx.size() == 21);
    const auto& g = idx[0];
    CHECK(g["columns"] == 8);
    CHECK(g["rows"] == 1);
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(w.dir + "/grid")) pngs += e.path().extension() == ".png";
    CHECK(pngs == 21);
    const auto img = data::read_image(w.dir + "/grid/" + g["grid"].get<std::string>());
    CHECK(img.width == 8 * g["cell_width"].get<int>());
    CHECK(img.height == g["cell_height"].get<int>());
  }

  TEST_CASE("continuous synthesis adds a sweep row per gap") {
    const auto& w = ws();
    const auto man = data::load_manifest(w.manifest);
    const auto r = cli("synth --checkpoint " + w.ckpt + " --inputs " + man.resolve(man.records[0]) +
                       " --continuous 5 --run-dir " + w.dir + "/sweep");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const auto g = json::parse(slurp(w.dir + "/sweep/grids.json"))[0];
    CHECK(g["rows"] == 2);
    CHECK(g["columns"] == 8);
    const auto img = data::read_image(w.dir + "/sweep/" + g["grid"].get<std::string>());
    CHECK(img.width == 6 * 5 * g["cell_width"].get<int>());
    CHECK(img.height == 2 * g["cell_height"].get<int>());
  }

  TEST_CASE("missing checkpoint leaves no partial output") {
    const auto& w = ws();
    const auto r = cli("synth --checkpoint " + w.dir + "/nope.ckpt --data " + w.manifest + " --run-dir " + w.dir + "/nogrid");
    CHECK(r.code != 0);
    CHECK_FALSE(fs::exists(w.dir + "/nogrid"));
  }

  TEST_CASE("verification with the oracle embedder is perfect") {
    const auto& w = ws();
    const auto man = data::load_manifest(w.manifest);
    eval::PairSet set;
    set.num_folds = 2;
    for (int f = 0; f < 2; ++f)
      for (int k = 0; k < 3; ++k) {
        const auto& a = man.records[k * 7 + f];
        set.pairs.push_back({a.path, man.records[k * 7 + f + 2].path, true, f});
        set.pairs.push_back({a.path, man.records[((k + 1) % 3) * 7 + f].path, false, f});
      }
    std::ofstream(w.toy + "/pairs.txt") << eval::format_pairs(set);
    const auto r = cli("eval verify --pairs " + w.toy + "/pairs.txt --embedder oracle --data " + w.manifest +
                       " --run-dir " + w.dir + "/verify");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.find("accuracy 1.0000") != std::string::npos);
    const auto m = cli("eval verify --pairs " + w.toy + "/pairs.txt --checkpoint " + w.ckpt + " --run-dir " + w.dir +
                       "/verify_model");
    CHECK_MESSAGE(m.code == 0, m.out);
    CHECK(m.out.find("accuracy ") != std::string::npos);
  }

  TEST_CASE("identification on a one-probe one-gallery set") {
    const auto& w = ws();
    const auto man = data::load_manifest(w.manifest);
    std::ofstream(w.toy + "/probe.tsv") << man.records[0].path << "\t0\t" << man.records[0].age << "\t0\n";
    std::ofstream(w.toy + "/gallery.tsv") << man.records[3].path << "\t0\t" << man.records[3].age << "\t0\n";
    const auto r = cli("eval identify --probe " + w.toy + "/probe.tsv --gallery " + w.toy + "/gallery.tsv --checkpoint " +
                       w.ckpt + " --run-dir " + w.dir + "/ident");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.find("rank1 1.0000") != std::string::npos);
  }

  TEST_CASE("identity generator preserves identity exactly") {
    const auto& w = ws();
    const auto r = cli("eval fas --checkpoint " + w.ckpt + " --data " + w.manifest +
                       " --generator identity --targets source --run-dir " + w.dir + "/fas");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const auto at = r.out.find("id_cos ");
    REQUIRE(at != std::string::npos);
    CHECK(std::stod(r.out.substr(at + 7)) == doctest::Approx(1.0).epsilon(1e-4));
  }

  TEST_CASE("ftsel writes report, mixture, config and fine-tuned checkpoint") {
    const auto& w = ws();
    const auto r = cli("ftsel --checkpoint " + w.ckpt + " --data " + w.manifest + " --iters 3 --batch-size 4 --run-dir " +
                       w.dir + "/ftsel");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    for (const char* f : {"config.json", "selection.ndjson", "gmm.json", "finetuned.ckpt"})
      CHECK(fs::exists(w.dir + "/ftsel/" + f));
    const auto g = json::parse(slurp(w.dir + "/ftsel/gmm.json"));
    CHECK(g["means"][0].get<double>() <= g["means"][1].get<double>());
    std::ifstream sel(w.dir + "/ftsel/selection.ndjson");
    std::string line;
    int n = 0;
    while (std::getline(sel, line)) n += json::parse(line).contains("p1");
    CHECK(n > 0);

    const auto d = cli("ftsel --checkpoint " + w.ckpt + " --data " + w.manifest + " --dry-run --run-dir " + w.dir + "/dry");
    REQUIRE_MESSAGE(d.code == 0, d.out);
    CHECK(fs::exists(w.dir + "/dry/selection.ndjson"));
    CHECK_FALSE(fs::exists(w.dir + "/dry/finetuned.ckpt"));
  }

  TEST_CASE("ftsel with all-equal quality scores fails on the mixture fit") {
    const auto& w = ws();
    auto ck = model::load_checkpoint(w.ckpt);
    for (auto& p : ck.model->params().entries())
      if (p.group == model::kIdHead) p.var.mutable_value().fill(0.0f);
    model::save_checkpoint(*ck.model, w.dir + "/flat.ckpt");
    const auto r = cli("ftsel --checkpoint " + w.dir + "/flat.ckpt --data " + w.manifest + " --run-dir " + w.dir + "/flat");
    CHECK(r.code == 4);
    CHECK(r.out.find("GMM") != std::string::npos);
    CHECK_FALSE(fs::exists(w.dir + "/flat"));
  }
}
