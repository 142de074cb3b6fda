#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <sys/wait.h>

#include "repast/binio.hpp"
#include "repast/png.hpp"
#include "repast/scenegen.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("repast_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    Result run(const std::string& args) const {
        const std::string out = path("stdout.txt");
        const std::string cmd = std::string(REPAST_CLI) + " " + args + " > " + out + " 2> " + path("stderr.txt");
        const int status = std::system(cmd.c_str());
        std::ifstream in(out);
        std::stringstream ss;
        ss << in.rdbuf();
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
    }

    std::vector<std::uint8_t> bytes(const std::string& name) const { return repast::read_file(path(name)); }

    // Small model flags shared by the training and rendering tests.
    static std::string small_model() {
        return "--d-model 16 --heads 2 --d-head 8 --enc-blocks 1 --dec-blocks 1 --mlp-hidden 32 --cnn-channels 8,8 "
               "--posenc-freqs-origin 2 --posenc-freqs-direction 2";
    }

    void make_data() const {
        ASSERT_EQ(run("gen-data --seed 0 --scenes 4 --n-input 3 --n-target 2 --res 16 --out " + path("train.rpa")).code, 0);
        ASSERT_EQ(run("gen-data --seed 50 --scenes 2 --n-input 3 --n-target 2 --res 16 --out " + path("test.rpa")).code, 0);
    }

    std::string train_args(const std::string& out) const {
        return "train --deterministic --seed 3 --data " + path("train.rpa") + " --probe " + path("test.rpa") +
               " --steps 6 --eval-interval 3 --batch-scenes 2 --rays 16 --warmup 1 " + small_model() + " --out " +
               path(out);
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpForEverySubcommandExitsZero) {
    EXPECT_EQ(run("--help").code, 0);
    const std::map<std::string, std::vector<std::string>> flags = {
        {"gen-data", {"--seed", "--scenes", "--n-input", "--n-target", "--res", "--out", "--config"}},
        {"train", {"--variant", "--data", "--steps", "--seed", "--out", "--resume", "--deterministic", "--precision"}},
        {"render", {"--checkpoint", "--scene-seed", "--azimuth", "--elevation", "--distance", "--out"}},
        {"invariance-check", {"--checkpoint", "--variant", "--trials", "--tolerance"}},
        {"cycle", {"--checkpoint", "--scene-seed", "--out-dir"}},
        {"eval", {"--checkpoint", "--data", "--oracle"}},
    };
    for (const auto& [cmd, names] : flags) {
        const Result r = run(cmd + " --help");
        EXPECT_EQ(r.code, 0) << cmd;
        for (const auto& f : names) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " lacks " << f;
    }
}

TEST_F(Cli, GenDataIsDeterministicAndReadable) {
    ASSERT_EQ(run("gen-data --seed 7 --scenes 3 --n-input 5 --res 16 --out " + path("a.rpa")).code, 0);
    ASSERT_EQ(run("gen-data --seed 7 --scenes 3 --n-input 5 --res 16 --out " + path("b.rpa")).code, 0);
    EXPECT_EQ(bytes("a.rpa"), bytes("b.rpa"));
    const auto ex = repast::read_dataset(path("a.rpa"));
    ASSERT_EQ(ex.size(), 3u);
    EXPECT_EQ(ex[0].inputs.size(), 5u);
    EXPECT_EQ(ex[0].inputs[0].image.height, 16);
}

TEST_F(Cli, GenDataZeroScenesWritesEmptyValidFile) {
    ASSERT_EQ(run("gen-data --scenes 0 --out " + path("e.rpa")).code, 0);
    EXPECT_TRUE(repast::read_dataset(path("e.rpa")).empty());
}

TEST_F(Cli, ExitCodes) {
    make_data();
    EXPECT_EQ(run("train --variant srt --steps 0 --data " + path("train.rpa") + " " + small_model() + " --out " + path("s.ck")).code, 0);
    EXPECT_EQ(run("train --variant repast-b --steps 0 --data " + path("train.rpa") + " " + small_model() + " --out " + path("b.ck")).code, 0);
    EXPECT_EQ(run("train --variant nerf --data " + path("train.rpa") + " --out " + path("x.ck")).code, 1);
    EXPECT_EQ(run("train --data " + path("missing.rpa") + " --out " + path("x.ck")).code, 2);
    EXPECT_EQ(run("gen-data --scenes 1 --out /nonexistent_dir/x.rpa").code, 2);
    EXPECT_EQ(run("eval --checkpoint " + path("train.rpa") + " --data " + path("test.rpa")).code, 2);
    // Checkpoint holds SRT; asking for RePAST is a config mismatch.
    EXPECT_EQ(run("render --variant repast --checkpoint " + path("s.ck") + " --res 16 --n-input 3 --out " + path("r.png")).code, 2);
    // A learning rate this large overflows the forward pass.
    EXPECT_EQ(run("train --steps 4 --warmup 0 --eval-interval 4 --lr 1e37 --data " + path("train.rpa") + " " + small_model() +
                  " --out " + path("n.ck")).code,
              3);
}

TEST_F(Cli, ConfigFileAppliesAndFlagsTakePrecedence) {
    {
        std::ofstream f(path("c.cfg"));
        f << "# dataset\nscenes = 2\nres = 8\nn-input = 2\n";
    }
    ASSERT_EQ(run("gen-data --config " + path("c.cfg") + " --res 16 --out " + path("d.rpa")).code, 0);
    const auto ex = repast::read_dataset(path("d.rpa"));
    ASSERT_EQ(ex.size(), 2u);
    EXPECT_EQ(ex[0].inputs.size(), 2u);
    EXPECT_EQ(ex[0].inputs[0].image.height, 16);
    {
        std::ofstream f(path("bad.cfg"));
        f << "not-a-flag = 3\n";
    }
    EXPECT_EQ(run("gen-data --config " + path("bad.cfg") + " --out " + path("d.rpa")).code, 1);
    EXPECT_EQ(run("gen-data --config " + path("none.cfg") + " --out " + path("d.rpa")).code, 2);
}

TEST_F(Cli, TrainWritesParsableLogAndResumeMatches) {
    make_data();
    ASSERT_EQ(run(train_args("full.ck")).code, 0);
    ASSERT_EQ(run(train_args("part.ck") + " --stop-after 3").code, 0);
    ASSERT_EQ(run(train_args("part.ck") + " --resume").code, 0);
    EXPECT_EQ(bytes("full.ck"), bytes("part.ck"));
    std::ifstream log(path("full.ck.log"));
    std::string line, last;
    while (std::getline(log, line)) last = line;
    std::istringstream ls(last);
    double step, p, s, l;
    ASSERT_TRUE(static_cast<bool>(ls >> step >> p >> s >> l)) << last;
    EXPECT_EQ(step, 6);
    EXPECT_EQ(bytes("full.ck.log"), bytes("part.ck.log"));
}

TEST_F(Cli, RenderIsByteIdenticalAndSized) {
    make_data();
    ASSERT_EQ(run(train_args("m.ck")).code, 0);
    const std::string args = "render --deterministic --checkpoint " + path("m.ck") + " --scene-seed 9 --res 24 --n-input 3 ";
    ASSERT_EQ(run(args + "--out " + path("a.png")).code, 0);
    ASSERT_EQ(run(args + "--out " + path("b.png")).code, 0);
    EXPECT_EQ(bytes("a.png"), bytes("b.png"));
    const auto im = repast::read_png(path("a.png"));
    EXPECT_EQ(im.height, 24);
    EXPECT_EQ(im.width, 24);
    ASSERT_EQ(run(args + "--azimuth 30 --elevation 20 --distance 4 --out " + path("c.png")).code, 0);
    EXPECT_NE(bytes("a.png"), bytes("c.png"));
}

TEST_F(Cli, EvalOutputFormat) {
    make_data();
    ASSERT_EQ(run(train_args("m.ck")).code, 0);
    const Result a = run("eval --checkpoint " + path("m.ck") + " --data " + path("test.rpa"));
    const Result b = run("eval --checkpoint " + path("m.ck") + " --data " + path("test.rpa"));
    ASSERT_EQ(a.code, 0);
    EXPECT_TRUE(std::regex_match(a.out, std::regex(R"(repast \d+\.\d+ 0\.\d+\n)"))) << a.out;
    EXPECT_EQ(a.out, b.out);
    const Result o = run("eval --oracle --data " + path("test.rpa"));
    EXPECT_EQ(o.code, 0);
    EXPECT_EQ(o.out, "oracle 99.00 1.000\n");
}

TEST_F(Cli, InvarianceCheckExitCodes) {
    const std::string tiny = "--res 16 " + small_model();
    const Result r = run("invariance-check --variant repast --trials 3 " + tiny);
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("status PASS"), std::string::npos);
    const Result b = run("invariance-check --variant repast-b --trials 2 " + tiny);
    EXPECT_EQ(b.code, 0) << b.out;
    // A negative tolerance cannot be met, so the check must fail.
    EXPECT_EQ(run("invariance-check --variant repast --trials 1 --tolerance -1 " + tiny).code, 1);
    const Result s = run("invariance-check --variant srt --trials 3 " + tiny);
    EXPECT_EQ(s.code, 0);
    EXPECT_NE(s.out.find("status REPORT"), std::string::npos);
    EXPECT_NE(s.out.find("reference_above_1e-3 3/3"), std::string::npos) << s.out;
    const Result z = run("invariance-check --trials 0");
    EXPECT_EQ(z.code, 0);
    EXPECT_EQ(z.out, "");
}

TEST_F(Cli, CycleWritesOneFramePerPermutation) {
    ASSERT_EQ(run("cycle --res 16 --n-input 5 " + small_model() + " --out-dir " + path("cyc")).code, 0);
    for (int k = 0; k < 5; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "cyc/frame_%02d.png", k);
        EXPECT_TRUE(fs::exists(path(name))) << name;
    }
    std::ifstream rep(path("cyc/report.txt"));
    std::string line, last;
    while (std::getline(rep, line)) last = line;
    std::smatch m;
    ASSERT_TRUE(std::regex_search(last, m, std::regex(R"(frames 5 max_pairwise (\S+))"))) << last;
    EXPECT_LE(std::stod(m[1]), 1e-4);
}
