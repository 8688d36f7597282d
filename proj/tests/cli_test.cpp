// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ecaf/checkpoint.hpp"
#include "ecaf/cli.hpp"
#include "ecaf/data_io.hpp"
#include "test_support.hpp"

using namespace ecaf;
using ecaf::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& text, const std::string& needle) { return text.find(needle) != std::string::npos; }

std::string config_value(const std::string& checkpoint, const std::string& key) {
  for (const auto& [k, v] : Checkpoint::load(checkpoint).config)
    if (k == key) return v;
  return {};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and usage errors") {
    CHECK(run({"--help"}).code == cli::kOk);
    CHECK(run({"train", "--help"}).code == cli::kOk);
    CHECK(run({}).code == cli::kUsageError);
    CHECK(run({"frobnicate"}).code == cli::kUsageError);
    const auto missing = run({"synth", "--n", "1"});
    CHECK(missing.code == cli::kUsageError);
    CHECK(contains(missing.err + missing.out, "--out"));
    CHECK(run({"synth", "--n", "x", "--out", "d"}).code == cli::kUsageError);
  }

  TEST_CASE("train help shows desk and full-scale defaults") {
    const auto help = run({"train", "--help"});
    CHECK(contains(help.out, "desk 2000; full-scale 250000"));
    CHECK(contains(help.out, "desk 2; full-scale 8"));
    CHECK(contains(help.out, "desk 64; full-scale 256"));
  }

  TEST_CASE("synth, eval, train, enhance") {
    TempDir dir;
    const std::string data = dir / "data";
    const auto synth = run({"synth", "--n", "2", "--size", "64", "--seed", "7", "--out", data});
    REQUIRE(synth.code == cli::kOk);
    const std::string manifest = data + "/" + kManifestName;
    CHECK(contains(synth.out, manifest));
    CHECK(PairManifest::load(manifest).pairs.size() == 2);

    const auto again = run({"synth", "--n", "2", "--out", data});
    CHECK(again.code == cli::kRuntimeError);
    CHECK(contains(again.err, "--force"));

    const auto eval = run({"eval", "--manifest", manifest, "--json", dir / "eval.json"});
    CHECK(eval.code == cli::kOk);
    CHECK(contains(eval.out, "\"psnr_db\""));
    CHECK(std::filesystem::exists(dir / "eval.json"));

    const std::string run_dir = dir / "run";
    const auto train = run({"train", "--manifest", manifest, "--iters", "0", "--out", run_dir, "--ablate", "no-dmsa"});
    REQUIRE(train.code == cli::kOk);
    const std::string ckpt = run_dir + "/final.ecak";
    CHECK(std::filesystem::exists(run_dir + "/train_log.jsonl"));
    CHECK(config_value(ckpt, "attention") == "mhsa");

    const auto enhanced = run({"enhance", "--ckpt", ckpt, "--in", data + "/pair_0000_low.ppm", "--out", dir / "out.ppm"});
    CHECK(enhanced.code == cli::kOk);
    CHECK(load_image(dir / "out.ppm").shape() == load_image(data + "/pair_0000_low.ppm").shape());

    const auto mismatch = run({"enhance", "--ckpt", ckpt, "--in", data + "/pair_0000_low.ppm", "--out", dir / "o.ppm", "--c0", "16"});
    CHECK(mismatch.code == cli::kRuntimeError);
    CHECK(contains(mismatch.err, "base_channels"));

    CHECK(run({"enhance", "--ckpt", dir / "none.ecak", "--in", data, "--out", dir / "o"}).code != cli::kOk);

    const auto too_big = run({"train", "--manifest", manifest, "--iters", "0", "--patch", "128", "--out", run_dir});
    CHECK(too_big.code == cli::kUsageError);
  }

  TEST_CASE("config files feed flags and unknown keys are usage errors") {
    TempDir dir;
    const std::string data = dir / "data";
    {
      std::ofstream cfg(dir / "synth.cfg");
      cfg << "# synthetic data\nn = 1\nsize=16\nout=" << data << "\n";
    }
    CHECK(run({"synth", "--config", dir / "synth.cfg"}).code == cli::kOk);
    CHECK(PairManifest::load(data + "/" + kManifestName).pairs.size() == 1);
    {
      std::ofstream cfg(dir / "bad.cfg");
      cfg << "bogus_key = 3\n";
    }
    CHECK(run({"synth", "--config", dir / "bad.cfg", "--out", dir / "x"}).code == cli::kUsageError);
  }

  TEST_CASE("config text parsing") {
    const auto kv = cli::parse_config_text("# comment\n\n lr_start = 1e-4 \nseed=3\n", "c.cfg");
    REQUIRE(kv.size() == 2);
    CHECK(kv[0] == std::pair<std::string, std::string>{"lr-start", "1e-4"});
    CHECK(kv[1] == std::pair<std::string, std::string>{"seed", "3"});
    CHECK_THROWS(cli::parse_config_text("no equals sign\n", "c.cfg"));
  }

  TEST_CASE("seed from the environment") {
    TempDir dir;
    ::setenv("ECAF_SEED", "not-a-number", 1);
    CHECK(run({"synth", "--n", "1", "--size", "16", "--out", dir / "a"}).code == cli::kUsageError);
    ::setenv("ECAF_SEED", "9", 1);
    CHECK(run({"synth", "--n", "1", "--size", "16", "--out", dir / "b"}).code == cli::kOk);
    ::unsetenv("ECAF_SEED");
    CHECK(run({"synth", "--n", "1", "--size", "16", "--seed", "9", "--out", dir / "c"}).code == cli::kOk);
    CHECK(load_image(dir / "b/pair_0000_ref.ppm").shape() == Shape{3, 16, 16});
    CHECK(bitwise_equal(load_image(dir / "b/pair_0000_ref.ppm"), load_image(dir / "c/pair_0000_ref.ppm")));
  }
}
