#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "json.hpp"

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run
{
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = d3ssl::cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const fs::path& p)
{
    return nlohmann::json::parse(slurp(p));
}

struct TempDir
{
    fs::path path = fs::temp_directory_path() / ("d3ssl_cli_" + std::to_string(getpid()));
    TempDir() { fs::create_directories(path); }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

const std::vector<std::string> kTiny = {"--widths", "4,8,8,16,16", "--feature-dim", "16", "--bank-capacity", "32",
                                        "--batch-size", "3", "--epochs", "1"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

} // namespace

TEST_CASE("help, unknown flags and unknown commands")
{
    const Run help = run({"--help"});
    CHECK(help.code == 0);
    for (const auto& name : d3ssl::cli::subcommands())
        CHECK(help.out.find(name) != std::string::npos);
    CHECK(run({"pretrain", "--help"}).code == 0);
    CHECK(run({"oknn", "-h"}).code == 0);

    const Run flag = run({"synth", "--out", "x", "--colour", "red"});
    CHECK(flag.code == 1);
    CHECK(flag.err.find("--colour") != std::string::npos);
    const Run eq = run({"subset", "--frobnicate=3"});
    CHECK(eq.code == 1);
    CHECK(eq.err.find("--frobnicate") != std::string::npos);

    const Run cmd = run({"train"});
    CHECK(cmd.code == 1);
    CHECK(cmd.err.find("train") != std::string::npos);
    CHECK(run({}).code == 1);
    CHECK(run({"pretrain", "--out", "x"}).code == 1);
}

TEST_CASE("synth, config precedence and manifests")
{
    TempDir tmp;
    {
        std::ofstream cfg(tmp / "synth.cfg");
        cfg << "# small set\ncount = 3\nseed = 11\nmax_objects = 2\n";
    }
    const Run a = run({"synth", "--config", tmp / "synth.cfg", "--count", "4", "--out", tmp / "a"});
    REQUIRE(a.code == 0);
    const auto m = read_json(tmp.path / "a" / "manifest.json");
    CHECK(m.at("subcommand") == "synth");
    CHECK(m.at("config").at("count") == "4");
    CHECK(m.at("config").at("max_objects") == "2");
    CHECK(m.at("config").at("min_size") == "12");
    CHECK(m.at("seed") == 11);
    CHECK(m.at("inputs").size() == 1);
    CHECK(m.at("inputs_hash").get<std::string>().size() == 40);
    CHECK(m.contains("started_at"));
    CHECK(m.contains("finished_at"));
    CHECK(std::distance(fs::directory_iterator(tmp.path / "a" / "images"), fs::directory_iterator{}) == 4);

    REQUIRE(run({"synth", "--config", tmp / "synth.cfg", "--count", "4", "--out", tmp / "b"}).code == 0);
    CHECK(slurp(tmp.path / "a" / "annotations.jsonl") == slurp(tmp.path / "b" / "annotations.jsonl"));
    CHECK(slurp(tmp.path / "a" / "proposals.jsonl") == slurp(tmp.path / "b" / "proposals.jsonl"));

    {
        std::ofstream cfg(tmp / "bad.cfg");
        cfg << "count = 3\ncolour = red\n";
    }
    const Run bad = run({"synth", "--config", tmp / "bad.cfg", "--out", tmp / "c"});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("colour") != std::string::npos);
    CHECK(run({"synth", "--count", "many", "--out", tmp / "c"}).code == 1);
    CHECK(run({"synth", "--config", tmp / "missing.cfg", "--out", tmp / "c"}).code == 2);
}

TEST_CASE("pretrain is byte-reproducible and feeds every consumer")
{
    TempDir tmp;
    REQUIRE(run({"synth", "--count", "6", "--seed", "2", "--out", tmp / "data"}).code == 0);
    const auto base = concat({"pretrain", "--data", tmp / "data", "--deterministic", "--seed", "7"}, kTiny);
    const Run r1 = run(concat(base, {"--out", tmp / "r1"}));
    REQUIRE(r1.code == 0);
    REQUIRE(run(concat(base, {"--out", tmp / "r2"})).code == 0);
    const fs::path c1 = tmp.path / "r1" / "checkpoints" / "epoch_0001.ckpt";
    const fs::path c2 = tmp.path / "r2" / "checkpoints" / "epoch_0001.ckpt";
    CHECK(slurp(c1) == slurp(c2));
    CHECK(slurp(tmp.path / "r1" / "metrics.jsonl") == slurp(tmp.path / "r2" / "metrics.jsonl"));
    CHECK(slurp(tmp.path / "r1" / "metrics.jsonl").size() > 0);
    const auto m = read_json(tmp.path / "r1" / "manifest.json");
    CHECK(m.at("config").at("deterministic") == "true");
    CHECK(m.at("config").at("seed") == "7");
    CHECK(m.at("inputs_hash") == read_json(tmp.path / "r2" / "manifest.json").at("inputs_hash"));

    // flag beats file
    {
        std::ofstream cfg(tmp / "train.cfg");
        cfg << "seed = 3\nk = 2\n";
    }
    REQUIRE(run(concat(base, {"--config", tmp / "train.cfg", "--out", tmp / "r3"})).code == 0);
    const auto m3 = read_json(tmp.path / "r3" / "manifest.json");
    CHECK(m3.at("config").at("seed") == "7");
    CHECK(m3.at("config").at("k") == "2");

    for (const char* probe : {"probe-coupling", "probe-position"})
    {
        const auto args = std::vector<std::string>{probe, "--checkpoint", c1.string(), "--seed", "4", "--stages", "2,5"};
        REQUIRE(run(concat(args, {"--out", tmp / "p1.json", "--plot", tmp / "p1.png"})).code == 0);
        REQUIRE(run(concat(args, {"--out", tmp / "p2.json"})).code == 0);
        const std::string text = slurp(tmp.path / "p1.json");
        CHECK(slurp(tmp.path / "p2.json") == text);
        CHECK(fs::exists(tmp.path / "p1.png"));
        CHECK(fs::exists(tmp.path / "p1.manifest.json"));
        const auto rep = nlohmann::json::parse(text);
        CHECK(rep.at("stages").size() == 2);
        CHECK(rep.at("sample_count") == 24);
    }
    CHECK(run({"probe-position", "--checkpoint", c1.string(), "--fixtures", "5", "--out", tmp / "p.json"}).code == 1);
    CHECK(run({"probe-coupling", "--checkpoint", c1.string(), "--stages", "7", "--out", tmp / "p.json"}).code == 1);
    CHECK(run({"probe-coupling", "--checkpoint", tmp / "none.ckpt", "--out", tmp / "p.json"}).code == 2);

    const std::string ann = tmp / "data/annotations.jsonl";
    const auto oknn = std::vector<std::string>{"oknn", "--checkpoint", c1.string(), "--train-ann", ann, "--eval-ann", ann};
    REQUIRE(run(concat(oknn, {"--k", "1", "--n", "8", "--out", tmp / "o1.json"})).code == 0);
    CHECK(read_json(tmp.path / "o1.json").at("top1") == 1.0);
    REQUIRE(run(concat(oknn, {"--k", "3", "--disturbed", "--workers", "2", "--out", tmp / "o2.json"})).code == 0);
    REQUIRE(run(concat(oknn, {"--k", "3", "--disturbed", "--deterministic", "--out", tmp / "o3.json"})).code == 0);
    CHECK(read_json(tmp.path / "o2.json").at("disturbed") == true);
    CHECK(slurp(tmp.path / "o2.json") == slurp(tmp.path / "o3.json"));
    CHECK(run(concat(oknn, {"--k", "0", "--out", tmp / "o4.json"})).code == 1);

    REQUIRE(run({"subset", "--source", ann, "--reference", ann, "--seed", "1", "--out", tmp / "ids.txt", "--report",
                 tmp / "counts.json"})
                .code == 0);
    std::istringstream ids(slurp(tmp.path / "ids.txt"));
    int lines = 0;
    for (std::string line; std::getline(ids, line);)
        ++lines;
    CHECK(lines == 6);
    CHECK(read_json(tmp.path / "counts.json").at("selected_images") == 6);

    REQUIRE(run(concat({"augment-preview", "--data", tmp / "data", "--seed", "5", "--out", tmp / "prev"}, kTiny))
                .code == 0);
    for (const char* f : {"x1.png", "x1_hat.png", "x2.png", "x2s_hat.png", "x3.png", "before.png", "after.png",
                          "preview.json", "manifest.json"})
        CHECK(fs::exists(tmp.path / "prev" / f));
    const auto pv = read_json(tmp.path / "prev" / "preview.json");
    CHECK(pv.at("image_id") == "img_00000");
    CHECK(pv.contains("cutouts_x1"));
    CHECK(pv.contains("prm_x1"));
    CHECK(run({"augment-preview", "--data", tmp / "data", "--image-id", "nope", "--out", tmp / "prev2"}).code == 1);
}
