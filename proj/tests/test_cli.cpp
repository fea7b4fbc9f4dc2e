#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "msdnn/data.hpp"
#include "msdnn/model.hpp"

using namespace msdnn;
namespace fs = std::filesystem;

namespace {

#ifndef MSDNN_CLI_PATH
#define MSDNN_CLI_PATH "./msdnn"
#endif

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("msdnn_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MSDNN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

// loss.csv minus the wall-time column
std::string drop_seconds(const std::string& csv) {
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        const auto cut = line.rfind(',');
        out << line.substr(0, cut) << "\n";
    }
    return out.str();
}

const std::string kTinyTrain = "--synthetic 4 --size 32 --scale 0.125 -T 1 --iters 12 --batch 4 --seed 7";

} // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("usage errors exit with 2") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("unknowncmd") == 2);
    CHECK(run_cli("train --out /tmp/x --bogus-flag 1") == 2);

    TempDir dir;
    // no data source
    CHECK(run_cli("train --out " + dir.sub("o")) == 2);
    // both data sources
    CHECK(run_cli("train --out " + dir.sub("o") + " --synthetic 2 --manifest m.tsv") == 2);
}

TEST_CASE("train writes loss csv, checkpoint and the resolved config") {
    TempDir dir;
    const std::string out = dir.sub("run");
    REQUIRE(run_cli("train " + kTinyTrain + " --out " + out) == 0);

    const std::string csv = slurp(out + "/loss.csv");
    CHECK(count_lines(csv) == 13); // header + 12 iterations
    CHECK(csv.rfind("iteration,loss,", 0) == 0);
    CHECK(fs::exists(out + "/checkpoint_final.ck"));
    CHECK(fs::exists(out + "/run_config.json"));

    SUBCASE("same seed reruns bitwise, excluding wall time") {
        const std::string out2 = dir.sub("run2");
        REQUIRE(run_cli("train " + kTinyTrain + " --out " + out2) == 0);
        CHECK(drop_seconds(slurp(out2 + "/loss.csv")) == drop_seconds(csv));
        CHECK(slurp(out2 + "/checkpoint_final.ck") == slurp(out + "/checkpoint_final.ck"));
    }
    SUBCASE("replaying the recorded run_config reproduces the outputs") {
        const std::string replay = dir.sub("replay");
        REQUIRE(run_cli("train --config " + out + "/run_config.json --out " + replay) == 0);
        CHECK(drop_seconds(slurp(replay + "/loss.csv")) == drop_seconds(csv));
        CHECK(slurp(replay + "/checkpoint_final.ck") == slurp(out + "/checkpoint_final.ck"));
    }
    SUBCASE("lr 0 freezes the loss column") {
        const std::string out3 = dir.sub("run3");
        REQUIRE(run_cli("train " + kTinyTrain + " --lr 0 --out " + out3) == 0);
        std::istringstream in(slurp(out3 + "/loss.csv"));
        std::string line, first_loss;
        std::getline(in, line); // header
        while (std::getline(in, line)) {
            const auto a = line.find(','), b = line.find(',', line.find(',') + 1);
            const std::string loss = line.substr(a + 1, b - a - 1);
            if (first_loss.empty()) first_loss = loss;
            CHECK(loss == first_loss);
        }
    }
}

TEST_CASE("predict and eval round trip") {
    TempDir dir;
    const std::string run = dir.sub("run");
    REQUIRE(run_cli("train " + kTinyTrain + " --out " + run) == 0);

    // input images and masks on disk, named by id
    auto ds = synth_dataset(2, 32, 7);
    const std::string imgs = dir.sub("imgs");
    const std::string gts = dir.sub("gts");
    fs::create_directories(imgs);
    fs::create_directories(gts);
    for (const Sample& s : ds) {
        write_ppm(s.image, imgs + "/" + s.id + ".ppm");
        write_pgm(s.mask, gts + "/" + s.id + ".pgm");
    }

    const std::string pred = dir.sub("pred");
    REQUIRE(run_cli("predict --checkpoint " + run + "/checkpoint_final.ck --out " + pred + " " + imgs +
                    "/synth0.ppm " + imgs + "/synth1.ppm") == 0);
    CHECK(fs::exists(pred + "/synth0.pgm"));
    CHECK(fs::exists(pred + "/synth1.pgm"));

    SUBCASE("--all-scales writes one map per enabled head plus the final") {
        const std::string pred5 = dir.sub("pred5");
        REQUIRE(run_cli("predict --checkpoint " + run + "/checkpoint_final.ck --all-scales --out " + pred5 + " " +
                        imgs + "/synth0.ppm") == 0);
        int pgms = 0;
        for (const auto& e : fs::directory_iterator(pred5))
            pgms += e.path().extension() == ".pgm";
        CHECK(pgms == 5);
    }

    SUBCASE("eval scores the predictions") {
        const std::string ev = dir.sub("eval");
        REQUIRE(run_cli("eval --pred " + pred + " --gt " + gts + " --out " + ev) == 0);
        const std::string report = slurp(ev + "/report.csv");
        CHECK(report.rfind("id,adaptive_threshold", 0) == 0);
        CHECK(report.find("MEAN,") != std::string::npos);
        CHECK(count_lines(slurp(ev + "/pr_curve.csv")) == 53); // header + 52 thresholds
    }

    SUBCASE("eval of the ground truth against itself is perfect") {
        const std::string ev = dir.sub("evalp");
        REQUIRE(run_cli("eval --pred " + gts + " --gt " + gts + " --out " + ev) == 0);
        const std::string report = slurp(ev + "/report.csv");
        std::istringstream in(report);
        std::string line, mean_line;
        while (std::getline(in, line))
            if (line.rfind("MEAN,", 0) == 0) mean_line = line;
        REQUIRE(!mean_line.empty());
        std::vector<std::string> cells;
        std::istringstream ls(mean_line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 7);
        CHECK(std::stod(cells[4]) == doctest::Approx(1.0));  // fmeasure
        CHECK(std::stod(cells[5]) == doctest::Approx(0.0));  // mae
        CHECK(std::stod(cells[6]) == doctest::Approx(1.0));  // auc
    }

    SUBCASE("unpaired ids exit 1") {
        const std::string lonely = dir.sub("lonely");
        fs::create_directories(lonely);
        write_pgm(ds[0].mask, lonely + "/orphan.pgm");
        CHECK(run_cli("eval --pred " + lonely + " --gt " + gts + " --out " + dir.sub("ev2")) == 1);
    }

    SUBCASE("corrupt checkpoint exits 1") {
        const std::string broken = dir.sub("broken.ck");
        std::ofstream out(broken, std::ios::binary);
        out << "NOTACKPT garbage";
        out.close();
        CHECK(run_cli("predict --checkpoint " + broken + " --out " + dir.sub("p2") + " " + imgs + "/synth0.ppm") == 1);
    }
}

TEST_CASE("gradcheck command") {
    CHECK(run_cli("gradcheck --kernels relu,sigmoid --seeds 2") == 0);
    CHECK(run_cli("gradcheck --kernels sigmoid --precision single") == 2);
    CHECK(run_cli("gradcheck --kernels nosuchkernel") == 2);
}

TEST_CASE("ablate writes the four-config comparison") {
    TempDir dir;
    const std::string out = dir.sub("ab");
    REQUIRE(run_cli("ablate --synthetic 2 --size 32 --scale 0.125 -T 0 --iters 2 --batch 2 --seed 3 --out " + out) ==
            0);
    const std::string csv = slurp(out + "/ablation.csv");
    CHECK(count_lines(csv) == 5); // header + 4 configs
    CHECK(csv.rfind("config,fmeasure,mae,auc", 0) == 0);
    CHECK(csv.find("sm4,") != std::string::npos);
    CHECK(csv.find("sm43,") != std::string::npos);
    CHECK(csv.find("sm432,") != std::string::npos);
    CHECK(csv.find("full,") != std::string::npos);

    SUBCASE("rerun with the same seed is identical") {
        const std::string out2 = dir.sub("ab2");
        REQUIRE(run_cli("ablate --synthetic 2 --size 32 --scale 0.125 -T 0 --iters 2 --batch 2 --seed 3 --out " +
                        out2) == 0);
        CHECK(slurp(out2 + "/ablation.csv") == csv);
    }
}

TEST_SUITE_END();
