#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("roundtrip_test_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

Result run(const std::string& args) {
  const auto out = workdir() / "stdout.txt";
  const auto err = workdir() / "stderr.txt";
  const std::string cmd = "cd '" + workdir().string() + "' && '" ROUNDTRIP_CLI "' " + args + " > '" + out.string() +
                          "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write(const std::string& name, const std::string& text) { std::ofstream(workdir() / name) << text; }

const std::string kTiny =
    "--set embed_dim=16 --set hidden_dim=16 --set attention_dim=16 --set batch_size=16 --set checkpoint_interval=50";

}  // namespace

TEST_CASE("synth writes deterministic disjoint splits") {
  auto r = run("synth --task reversal --size 50 --vocab 6 --max-len 5 --seed 3 --out rev");
  REQUIRE(r.code == 0);
  const auto src = lines_of(workdir() / "rev/train.en");
  const auto tgt = lines_of(workdir() / "rev/train.sw");
  REQUIRE(src.size() == 50);
  REQUIRE(tgt.size() == 50);
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::istringstream a(src[i]), b(tgt[i]);
    std::vector<std::string> wa{std::istream_iterator<std::string>(a), {}};
    std::vector<std::string> wb{std::istream_iterator<std::string>(b), {}};
    CHECK(std::vector<std::string>(wa.rbegin(), wa.rend()) == wb);
  }
  const auto first = slurp(workdir() / "rev/test.en");
  REQUIRE(run("synth --task reversal --size 50 --vocab 6 --max-len 5 --seed 3 --out rev2").code == 0);
  CHECK(slurp(workdir() / "rev2/test.en") == first);
  CHECK(run("synth --task sorting --out bad").code == 1);
  CHECK(run("synth --task copy --size 0 --out bad").code == 1);
  CHECK(run("synth").code == 1);
}

TEST_CASE("score: BLEU, CSV rows and error cases") {
  write("a.txt", "the cat sat on the mat\na b c d e\n");
  write("b.txt", "the cat sat on the mat\na b c d\n");
  write("empty.txt", "");
  auto same = run("score --hyp a.txt --ref a.txt --csv run1/scores.csv --seed 1 --direction en-sw");
  CHECK(same.code == 0);
  CHECK(same.out.find("BLEU 100.00") != std::string::npos);
  CHECK(run("score --hyp a.txt --ref b.txt").code == 0);
  CHECK(run("score --hyp a.txt --ref empty.txt").code == 1);
  CHECK(run("score --hyp empty.txt --ref a.txt").code == 1);
  write("short.txt", "one line\n");
  CHECK(run("score --hyp short.txt --ref a.txt").code == 1);
  CHECK(run("score --hyp missing.txt --ref a.txt").code == 1);
  const auto rows = lines_of(workdir() / "run1/scores.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == "direction,seed,bleu");
  CHECK(rows[1] == "en-sw,1,100");
}

TEST_CASE("score: delta report over run directories") {
  fs::create_directories(workdir() / "base_a");
  fs::create_directories(workdir() / "base_b");
  fs::create_directories(workdir() / "treat_a");
  fs::create_directories(workdir() / "treat_b");
  write("base_a/scores.csv", "direction,seed,bleu\nen-sw,1,33.5\n");
  write("base_b/scores.csv", "direction,seed,bleu\nen-sw,2,33.7\n");
  write("treat_a/scores.csv", "direction,seed,bleu\nen-sw,1,33.9\n");
  write("treat_b/scores.csv", "direction,seed,bleu\nen-sw,2,33.94\n");
  auto r = run("score --baseline base_a base_b --treatment treat_a treat_b --report-csv delta.csv");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("en-sw") != std::string::npos);
  CHECK(r.out.find("0.32 ± 0.11") != std::string::npos);
  CHECK(fs::exists(workdir() / "delta.csv"));

  write("treat_b/scores.csv", "direction,seed,bleu\nen-sw,3,33.94\n");
  CHECK(run("score --baseline base_a base_b --treatment treat_a treat_b").code == 1);
  CHECK(run("score --baseline base_a base_b").code == 1);
}

TEST_CASE("gradcheck passes, detects a corrupted gradient and is reproducible") {
  auto a = run("gradcheck --trials 2");
  CHECK(a.code == 0);
  CHECK(a.out.find("all components pass") != std::string::npos);
  for (const char* component : {"decode_step", "stgs_soft_path", "objective/translation+sampled_reconstruction",
                                "primitive/matmul_left", "primitive/softmax_rows"}) {
    CHECK(a.out.find(component) != std::string::npos);
  }
  CHECK(run("gradcheck --trials 2").out == a.out);
  auto bad = run("gradcheck --trials 2 --corrupt-mul-gradient 1.01");
  CHECK(bad.code == 2);
  CHECK(bad.out.find("FAIL") != std::string::npos);
  CHECK(run("gradcheck --vocab 40").code == 1);
  CHECK(run("gradcheck --dim 16").code == 1);
}

TEST_CASE("train, finetune, translate and score end to end") {
  static const bool trained = [] {
    REQUIRE(run("synth --task copy --size 300 --vocab 6 --min-len 1 --max-len 4 --seed 2 --out copy").code == 0);
    auto pre = run("train --data-dir copy --out-dir pre --max-updates 400 --set pretrain_lr=0.01 --set dropout=0 " +
                   kTiny);
    REQUIRE(pre.code == 0);
    CHECK(fs::exists(workdir() / "pre/best.ckpt"));
    CHECK(lines_of(workdir() / "pre/metrics.csv").size() == 9);
    return true;
  }();
  REQUIRE(trained);

  SUBCASE("a trained copy model reproduces its input") {
    auto r = run("translate --checkpoint pre/best.ckpt --input copy/test.en --src-lang en --output hyp.txt --greedy");
    REQUIRE(r.code == 0);
    CHECK(lines_of(workdir() / "hyp.txt") == lines_of(workdir() / "copy/test.en"));
    auto beam = run("translate --checkpoint pre/best.ckpt --input copy/test.en --src-lang en --beam 3");
    REQUIRE(beam.code == 0);
    auto s = run("score --hyp hyp.txt --ref copy/test.sw --checkpoint pre/best.ckpt --source copy/test.en");
    CHECK(s.code == 0);
    CHECK(s.out.find("BLEU 100.00") != std::string::npos);
    CHECK(s.out.find("perplexity") != std::string::npos);
  }
  SUBCASE("empty lines, tags and determinism") {
    write("in.txt", "<en> t1 t2\n\nt3\n");
    auto r = run("translate --checkpoint pre/best.ckpt --input in.txt --src-lang en");
    REQUIRE(r.code == 0);
    auto lines = lines_of(workdir() / "stdout.txt");
    REQUIRE(lines.size() == 3);
    CHECK(lines[1].empty());
    CHECK(r.err.find("warning") != std::string::npos);
    CHECK(run("translate --checkpoint pre/best.ckpt --input in.txt --src-lang en").out == r.out);
    CHECK(run("translate --checkpoint pre/best.ckpt --input in.txt").code == 1);
    write("fr.txt", "<fr> t1\n");
    CHECK(run("translate --checkpoint pre/best.ckpt --input fr.txt").code == 1);
    CHECK(run("translate --checkpoint missing.ckpt --input in.txt").code == 1);
  }
  SUBCASE("fine-tuning modes") {
    for (const std::string mode : {"sampled", "hidden", "none"}) {
      auto r = run("finetune --init-checkpoint pre/best.ckpt --recon-mode " + mode + " --out-dir ft_" + mode +
                   " --max-updates 20");
      CHECK(r.code == 0);
      CHECK(r.out.find("finetune update 20") != std::string::npos);
      const auto cfg = slurp(workdir() / ("ft_" + mode) / "config.txt");
      CHECK(cfg.find("recon_mode=" + mode) != std::string::npos);
      CHECK(cfg.find("finetune_lr=1e-04") != std::string::npos);
    }
    CHECK(slurp(workdir() / "ft_hidden/config.txt").find("hidden_enc_weight=0.5") != std::string::npos);
    CHECK(run("finetune --init-checkpoint missing.ckpt --recon-mode sampled").code == 1);
    CHECK(run("finetune --recon-mode sampled").code == 1);
    CHECK(run("finetune --init-checkpoint pre/best.ckpt --recon-mode bogus").code == 1);
    CHECK(run("finetune --init-checkpoint pre/best.ckpt --set hidden_dim=8 --out-dir ft_bad").code == 1);
    CHECK(run("train --data-dir copy --out-dir bad --set no_such_key=1").code == 1);
    CHECK(run("train --data-dir missing --out-dir bad").code == 1);
  }
  SUBCASE("resume continues the run") {
    auto r = run("train --resume pre/last.ckpt --max-updates 450 --out-dir resumed");
    CHECK(r.code == 0);
    CHECK(r.out.find("pretrain update 450") != std::string::npos);
    CHECK(lines_of(workdir() / "resumed/metrics.csv").size() == 2);
  }
}
